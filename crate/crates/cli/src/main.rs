use clap::Parser;
use softpos_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(msg) => println!("{msg}"),
        Err(e) => {
            eprintln!("softpos: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
