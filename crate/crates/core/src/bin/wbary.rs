use std::io;
use std::process::ExitCode;

fn main() -> ExitCode {
    let verbosity = std::env::args().filter(|a| a == "-v" || a == "--verbose").count()
        + std::env::args().filter(|a| a == "-vv").count() * 2;
    let level = match verbosity {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let status = wbary::cli::run_cli(std::env::args_os(), &mut io::stdout().lock());
    ExitCode::from(status as u8)
}
