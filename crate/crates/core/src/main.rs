fn main() -> std::process::ExitCode {
    faithdec::cli::main()
}
