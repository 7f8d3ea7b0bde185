use clap::Parser;

fn main() {
    std::process::exit(pointer_cli::run(pointer_cli::Cli::parse()));
}
