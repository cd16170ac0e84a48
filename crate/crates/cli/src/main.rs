use clap::Parser;

fn main() {
    let cli = subreg_kit::Cli::parse();
    std::process::exit(subreg_kit::run(&cli));
}
