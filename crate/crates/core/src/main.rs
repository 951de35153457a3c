use clap::Parser;

fn main() {
    let cli = helmholtz_rff::cli::Cli::parse();
    std::process::exit(helmholtz_rff::cli::run(cli));
}
