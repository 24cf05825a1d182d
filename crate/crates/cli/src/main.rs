use clap::Parser;

use mcqa_lens_cli::args::Cli;
use mcqa_lens_cli::run;

fn main() {
    // Usage errors exit 2, --help and --version exit 0 (clap's defaults);
    // runtime failures report on stderr and exit 1.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    if let Err(e) = run::dispatch(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
