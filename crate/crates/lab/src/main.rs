use clap::Parser;

fn main() {
    let cli = horolab::cli::Cli::parse();
    std::process::exit(horolab::cli::run(&cli));
}
