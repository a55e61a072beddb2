use clap::Parser;

fn main() {
    let cli = cite::cli::Cli::parse();
    if let Err(e) = cite::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
