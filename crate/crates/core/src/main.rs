use clap::Parser;

use mixsde::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(art) => {
            for name in art.names() {
                println!("{}", cli.command.args().out.join(name).display());
            }
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            std::process::exit(e.exit_code());
        }
    }
}
