fn main() -> std::process::ExitCode {
    elicit::cli::main()
}
