use clap::Parser;

fn main() {
    let cli = effacts::cli::Cli::parse();
    std::process::exit(effacts::cli::run(cli));
}
