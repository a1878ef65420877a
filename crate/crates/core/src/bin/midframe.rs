fn main() -> std::process::ExitCode {
    midframe::cli::main()
}
