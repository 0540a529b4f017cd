fn main() -> std::process::ExitCode {
    dapp::cli::main()
}
