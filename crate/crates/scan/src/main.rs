fn main() -> std::process::ExitCode {
    scan::cli::main()
}
