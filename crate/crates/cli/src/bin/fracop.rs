fn main() -> std::process::ExitCode {
    herglotz_cli::fracop::main()
}
