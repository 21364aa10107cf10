use curvewalk::dataio::Split;
use curvewalk::model::evaluate;
use serde::Serialize;

use crate::args::{EvalArgs, SplitArg};
use crate::setup::{usage, CmdResult, TrainSetup};

#[derive(Serialize)]
struct EvalReport {
    metric: f64,
    votes: usize,
    n_samples: usize,
    split: Split,
    checkpoint: String,
    manifest: String,
}

pub fn run(a: &EvalArgs) -> CmdResult {
    if a.votes == 0 {
        return usage("--votes must be positive");
    }
    let setup = TrainSetup::for_checkpoint(&a.checkpoint)?;
    let model = setup.load_model(&a.checkpoint)?;
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let data = setup.data.load(split)?;
    let metric = evaluate(&model, &data.clouds, a.votes, a.seed.unwrap_or(setup.train.seed))?;
    let manifest = a.checkpoint.with_file_name(crate::manifest::MANIFEST_FILE);
    let report = EvalReport {
        metric,
        votes: a.votes,
        n_samples: data.len(),
        split,
        checkpoint: a.checkpoint.display().to_string(),
        manifest: manifest.display().to_string(),
    };
    println!("{}", serde_json::to_string(&report).map_err(anyhow::Error::from)?);
    Ok(())
}
