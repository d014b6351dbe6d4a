use clap::{Parser, Subcommand};
use gvm_cli::commands;

/// Video-to-music model pipeline: synthetic data, training, generation,
/// correspondence scoring, gradient checking and ablation grids.
#[derive(Parser)]
#[command(name = "gvm", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a paired video/music dataset with a planted correlation.
    Synth(commands::synth::SynthArgs),
    /// Train the music generator with teacher forcing.
    TrainGen(commands::train_gen::TrainGenArgs),
    /// Sample music tokens for a video; writes tokens, WAV and SVG.
    Generate(commands::generate::GenerateArgs),
    /// Train the video-music correspondence scorer.
    TrainEval(commands::train_eval::TrainEvalArgs),
    /// Score pairs: one `pair_id ta cmr` line each.
    Score(commands::score::ScoreArgs),
    /// Verify analytic gradients against central finite differences.
    Gradcheck(commands::gradcheck::GradcheckArgs),
    /// Run the query-count x pooling x cross-attention ablation grid.
    Ablate(commands::ablate::AblateArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Synth(a) => commands::synth::run(a),
        Cmd::TrainGen(a) => commands::train_gen::run(a),
        Cmd::Generate(a) => commands::generate::run(a),
        Cmd::TrainEval(a) => commands::train_eval::run(a),
        Cmd::Score(a) => commands::score::run(a),
        Cmd::Gradcheck(a) => commands::gradcheck::run(a),
        Cmd::Ablate(a) => commands::ablate::run(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
