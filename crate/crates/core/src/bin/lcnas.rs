use clap::Parser;

fn main() {
    let cli = lcnas_core::cli::Cli::parse();
    std::process::exit(lcnas_core::cli::run(cli));
}
