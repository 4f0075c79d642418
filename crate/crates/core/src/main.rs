use clap::Parser;

fn main() {
    let cli = tdlab::cli::Cli::parse();
    if let Err(e) = tdlab::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
