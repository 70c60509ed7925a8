fn main() -> std::process::ExitCode {
    gazebranch::cli::main()
}
