fn main() -> std::process::ExitCode {
    herglotz_cli::herglotz::main()
}
