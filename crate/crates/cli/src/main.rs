fn main() -> std::process::ExitCode {
    agentloom_cli::run(std::env::args_os())
}
