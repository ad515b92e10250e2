use clap::Parser;

fn main() {
    let cli = tblab::cli::Cli::parse();
    std::process::exit(tblab::cli::run(&cli));
}
