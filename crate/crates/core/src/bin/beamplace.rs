use clap::Parser;

fn main() {
    std::process::exit(beamplace::cli::run(beamplace::cli::Cli::parse()));
}
