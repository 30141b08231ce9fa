use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use mlp_cli::{commands, Cli};

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("MLP_NUM_THREADS") {
        // Read by the matrix kernels on their first call.
        std::env::set_var("MATMUL_NUM_THREADS", threads);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let code = match commands::run(cli, &mut out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            e.exit_code()
        }
    };
    let _ = out.flush();
    ExitCode::from(code)
}
