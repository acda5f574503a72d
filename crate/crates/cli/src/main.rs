use clap::Parser;

fn main() -> anyhow::Result<()> {
    pointcam_cli::run(pointcam_cli::Cli::parse())
}
