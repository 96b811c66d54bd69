fn main() -> std::process::ExitCode {
    deepsteer::cli::main()
}
