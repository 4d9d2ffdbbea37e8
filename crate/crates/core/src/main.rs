mod cli;

use clap::Parser;

fn main() {
    env_logger::init();
    let parsed = match cli::Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { cli::EXIT_USAGE } else { cli::EXIT_OK });
        }
    };
    let stdout = std::io::stdout();
    if let Err(e) = cli::run(parsed, &mut stdout.lock()) {
        eprintln!("error: {e}");
        std::process::exit(cli::exit_code(&e));
    }
}
