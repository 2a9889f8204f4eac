use clap::Parser;

use vesselflow::cli::{execute, Args, EXIT_USAGE};

fn main() {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let code = execute(&args, &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
