fn main() -> std::process::ExitCode {
    roi_auction::cli::main()
}
