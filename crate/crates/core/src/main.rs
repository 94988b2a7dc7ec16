fn main() -> std::process::ExitCode {
    ctool::cli::main()
}
