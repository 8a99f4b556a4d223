use clap::Parser;

fn main() {
    let cli = ridgeline_cli::Cli::parse();
    std::process::exit(ridgeline_cli::execute(cli));
}
