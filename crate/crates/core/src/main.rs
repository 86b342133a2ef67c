use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use tmcc_qkd::cli::{run, CONFIG_ENV};

fn main() -> ExitCode {
    let config = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
    let code = run(std::env::args_os(), config.as_deref(), &mut io::stdout(), &mut io::stderr());
    ExitCode::from(code as u8)
}
