use clap::Parser;

fn main() {
    let cli = prba_cli::Cli::parse();
    if let Err(err) = prba_cli::run(&cli) {
        eprintln!("error[{}]: {err}", prba_cli::error_category(&err));
        std::process::exit(1);
    }
}
