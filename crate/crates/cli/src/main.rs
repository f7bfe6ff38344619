use std::io::Write;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut out = std::io::stdout().lock();
    let result = sgp_cli::run(std::env::args_os(), &mut out);
    let _ = out.flush();
    if let Err(err) = result {
        eprintln!("{}", sgp_cli::error_line(&err));
        std::process::exit(sgp_cli::exit_code(&err));
    }
}
