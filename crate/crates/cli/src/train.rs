use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::Context;
use curvewalk::autodiff::checkpoint::save_store;
use curvewalk::dataio::Split;
use curvewalk::model::{evaluate, train, CurveNet, EpochMetrics, Schedule, TrainConfig};
use serde::Serialize;

use crate::args::{ScheduleArg, TrainArgs};
use crate::manifest::{write_json, RunManifest};
use crate::setup::{model_config, usage, CmdResult, DataSpec, Failure, TrainSetup};

pub const INIT_CKPT: &str = "init.cwt";
pub const BEST_CKPT: &str = "best.cwt";
pub const LAST_CKPT: &str = "last.cwt";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Serialize)]
struct FinalEval {
    metric: f64,
    votes: usize,
    n_samples: usize,
}

#[derive(Serialize)]
struct Summary<'a> {
    manifest: &'a str,
    metric: &'a str,
    num_params: usize,
    epochs: usize,
    best_epoch: Option<usize>,
    best_val_metric: Option<f64>,
    final_val_metric: Option<f64>,
    final_eval: Option<FinalEval>,
}

fn train_config(a: &TrainArgs) -> CmdResult<TrainConfig> {
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        lr: a.lr,
        lr_floor: a.lr_floor,
        schedule: match a.schedule {
            ScheduleArg::Cosine => Schedule::Cosine,
            ScheduleArg::Step => Schedule::Step,
        },
        momentum: a.momentum,
        weight_decay: a.weight_decay,
        seed: a.seed,
        augment: !a.no_augment,
        votes: a.votes,
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    if a.lr_floor > a.lr {
        return usage("--lr-floor exceeds --lr");
    }
    Ok(cfg)
}

pub fn run(a: &TrainArgs) -> CmdResult {
    let data = DataSpec::resolve(&a.data)?;
    let train_cfg = train_config(a)?;
    let model_cfg = model_config(&a.model, data.classes.len(), data.points)?;
    let setup = TrainSetup { data, model: model_cfg, train: train_cfg };

    let out = &a.out;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut manifest = RunManifest::start("train", a.seed, serde_json::to_value(&setup).map_err(anyhow::Error::from)?);
    manifest.write(out)?;

    let result = train_run(&setup, out, &mut manifest);
    manifest.finish(match &result {
        Ok(()) => "ok",
        Err(Failure::Diverged(_)) => "diverged",
        Err(_) => "failed",
    });
    manifest.write(out)?;
    result
}

fn train_run(setup: &TrainSetup, out: &Path, manifest: &mut RunManifest) -> CmdResult {
    let mut model = CurveNet::new(setup.model.clone(), setup.train.seed)?;
    save_store(&out.join(INIT_CKPT), &model.store)?;
    manifest.add(INIT_CKPT);
    if setup.train.epochs == 0 {
        return Ok(());
    }
    let train_set = setup.data.load(Split::Train)?;
    let test_set = setup.data.load(Split::Test)?;
    if train_set.classes.len() != setup.data.classes.len() {
        return usage("dataset classes do not match the resolved class list");
    }
    eprintln!(
        "train: {} params, {} train / {} test clouds, {} epochs",
        model.num_params(),
        train_set.len(),
        test_set.len(),
        setup.train.epochs
    );

    manifest.add(METRICS_FILE);
    manifest.write(out)?;
    let mut metrics = BufWriter::new(File::create(out.join(METRICS_FILE))?);
    let mut best: Option<(usize, f64)> = None;
    let history = train(&mut model, &train_set.clouds, &test_set.clouds, &setup.train, |m, model, improved| {
        write_metrics_line(&mut metrics, m)?;
        eprintln!(
            "epoch {:>3}  lr {:.5}  loss {:.4}  val {:.4}{}",
            m.epoch,
            m.lr,
            m.train_loss,
            m.val_metric,
            if improved { "  *" } else { "" }
        );
        if improved {
            best = Some((m.epoch, m.val_metric));
            save_store(&out.join(BEST_CKPT), &model.store)?;
        }
        Ok(())
    });
    metrics.flush()?;
    let history = history?;
    save_store(&out.join(LAST_CKPT), &model.store)?;
    manifest.add(BEST_CKPT);
    manifest.add(LAST_CKPT);

    let final_eval = if setup.train.votes > 1 {
        let metric = evaluate(&model, &test_set.clouds, setup.train.votes, setup.train.seed)?;
        Some(FinalEval { metric, votes: setup.train.votes, n_samples: test_set.len() })
    } else {
        None
    };
    let summary = Summary {
        manifest: crate::manifest::MANIFEST_FILE,
        metric: if model.is_classifier() { "accuracy" } else { "mean_cosine_error" },
        num_params: model.num_params(),
        epochs: history.len(),
        best_epoch: best.map(|b| b.0),
        best_val_metric: best.map(|b| b.1),
        final_val_metric: history.last().map(|m| m.val_metric),
        final_eval,
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    manifest.add(SUMMARY_FILE);
    Ok(())
}

fn write_metrics_line(w: &mut impl Write, m: &EpochMetrics) -> curvewalk::Result<()> {
    let line = serde_json::to_string(m).map_err(|e| curvewalk::Error::Io(e.into()))?;
    writeln!(w, "{line}")?;
    w.flush()?;
    Ok(())
}
