use std::fs::File;
use std::io::{BufWriter, Write};

use anyhow::Context;
use curvewalk::aggregate::{channel_variance_map, write_channel_csv};
use curvewalk::analysis::{random_probe, random_sweep, summarize, ProbeConfig, Run, Sweep};
use curvewalk::autodiff::{Ctx, Graph, Tensor, Var};
use curvewalk::dataio::{sample_shape, ShapeKind};
use curvewalk::geometry::{Point, PointCloud};
use curvewalk::model::CurveNet;
use curvewalk::walk::PolicyKind;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::args::AnalyzeArgs;
use crate::manifest::{write_json, RunManifest, MANIFEST_FILE};
use crate::setup::{usage, CmdResult, Failure, TrainSetup};

pub const STATS_FILE: &str = "curve_stats.json";
pub const CHANNEL_FILE: &str = "channel_variance.csv";

#[derive(Serialize)]
struct Resolved {
    mode: &'static str,
    checkpoint: Option<String>,
    policy: PolicyKind,
    seeds: u64,
    shape: ShapeKind,
    points: usize,
    cloud_seed: u64,
    k: usize,
    n: usize,
    l: usize,
    channels: Option<usize>,
    theta_bar: Option<f64>,
}

#[derive(Serialize)]
struct ChannelSummary {
    /// Mean per-channel variance of the features the curves walk on.
    walk_features: f64,
    /// Same for the output of the block that groups the curves
    /// (checkpoint mode).
    block_output: Option<f64>,
}

#[derive(Serialize)]
struct CurveStatsReport<'a> {
    manifest: &'a str,
    mode: &'a str,
    /// Mean distance from the start at the last step.
    final_mean_dist_to_start: f64,
    leaves_neighborhood: bool,
    channel_variance: ChannelSummary,
    #[serde(flatten)]
    sweep: &'a Sweep,
}

fn cloud(shape: ShapeKind, points: usize, seed: u64) -> CmdResult<PointCloud> {
    Ok(sample_shape(shape, points, &mut ChaCha8Rng::seed_from_u64(seed))?)
}

pub fn run(a: &AnalyzeArgs) -> CmdResult {
    let shape: ShapeKind = a.shape.parse().map_err(|e: curvewalk::Error| Failure::Usage(e.to_string()))?;
    if a.seeds == 0 || a.n == 0 || a.l == 0 || a.k == 0 {
        return usage("--seeds, --n, --l and --k must be positive");
    }
    if a.points <= a.k {
        return usage(format!("--points {} must exceed --k {}", a.points, a.k));
    }
    let resolved = Resolved {
        mode: if a.checkpoint.is_some() { "checkpoint" } else { "random" },
        checkpoint: a.checkpoint.as_ref().map(|p| p.display().to_string()),
        policy: a.policy,
        seeds: a.seeds,
        shape,
        points: a.points,
        cloud_seed: a.cloud_seed,
        k: a.k,
        n: a.n,
        l: a.l,
        channels: a.checkpoint.is_none().then_some(a.channels),
        theta_bar: a.checkpoint.is_none().then_some(a.theta_bar),
    };
    let setup = a.checkpoint.as_ref().map(|c| TrainSetup::for_checkpoint(c)).transpose()?;

    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut manifest =
        RunManifest::start("analyze-curves", a.cloud_seed, serde_json::to_value(&resolved).map_err(anyhow::Error::from)?);
    manifest.write(&a.out)?;

    let result = match (&a.checkpoint, setup) {
        (Some(ckpt), Some(setup)) => {
            let model = setup.load_model(ckpt)?;
            checkpoint_mode(a, shape, &model)
        }
        _ => random_mode(a, shape),
    };
    let (sweep, coords, features, block_output) = match result {
        Ok(r) => r,
        Err(e) => {
            manifest.finish("failed");
            manifest.write(&a.out)?;
            return Err(e);
        }
    };

    let mut csv = BufWriter::new(File::create(a.out.join(CHANNEL_FILE))?);
    write_channel_csv(&mut csv, &coords, &features, true)?;
    csv.flush()?;
    let report = CurveStatsReport {
        manifest: MANIFEST_FILE,
        mode: resolved.mode,
        final_mean_dist_to_start: *sweep.aggregate.mean_dist_to_start.last().expect("l >= 1"),
        leaves_neighborhood: sweep.leaves_neighborhood(),
        channel_variance: ChannelSummary {
            walk_features: channel_variance_map(&features)?.mean_variance(),
            block_output: block_output.map(|t| channel_variance_map(&t).map(|v| v.mean_variance())).transpose()?,
        },
        sweep: &sweep,
    };
    write_json(&a.out.join(STATS_FILE), &report)?;
    eprintln!(
        "{}: mean revisits {:.3}, distance to start at step {} {:.4} vs max {}-NN radius {:.4}",
        sweep.policy, sweep.aggregate.mean_revisits, a.l, report.final_mean_dist_to_start, a.k, sweep.max_knn_radius
    );
    manifest.add(STATS_FILE);
    manifest.add(CHANNEL_FILE);
    manifest.finish("ok");
    manifest.write(&a.out)?;
    Ok(())
}

type Outcome = (Sweep, Vec<Point>, Tensor, Option<Tensor>);

/// Fresh random stem and policy per seed on one cloud.
fn random_mode(a: &AnalyzeArgs, shape: ShapeKind) -> CmdResult<Outcome> {
    let c = cloud(shape, a.points, a.cloud_seed)?;
    let cfg = ProbeConfig { n: a.n, l: a.l, k: a.k, channels: a.channels, policy: a.policy, theta_bar_deg: a.theta_bar };
    let sweep = random_sweep(&c.coords, &cfg, a.seeds)?;
    let features = random_probe(&c.coords, &cfg, 0)?.features;
    Ok((sweep, c.coords, features, None))
}

/// The trained policy on `seeds` clouds drawn from `cloud_seed` onwards.
fn checkpoint_mode(a: &AnalyzeArgs, shape: ShapeKind, model: &CurveNet) -> CmdResult<Outcome> {
    let Some(block) = model.config.blocks.iter().position(|b| b.curves.is_some()) else {
        return usage("the checkpoint's network has no curve block");
    };
    let ids: Vec<u64> = (0..a.seeds).collect();
    let probes = curvewalk::par::map(&ids, |&s| -> curvewalk::Result<_> {
        let c = sample_shape(shape, a.points, &mut ChaCha8Rng::seed_from_u64(a.cloud_seed + s))?;
        let probe = model.curve_probe(&c, a.k, a.n, a.l, Some(a.policy))?;
        Ok((c, probe))
    })
    .into_iter()
    .collect::<curvewalk::Result<Vec<_>>>()?;
    let runs: Vec<Run> =
        probes.iter().zip(&ids).map(|((_, p), &seed)| Run { seed, coords: &p.coords, curves: p.curves.clone() }).collect();
    let sweep = summarize(a.policy, a.k, &runs)?;

    let (first_cloud, first) = &probes[0];
    let block_output = block_output(model, first_cloud, block)?;
    Ok((sweep, first.coords.clone(), first.features.clone(), Some(block_output)))
}

fn block_output(model: &CurveNet, cloud: &PointCloud, block: usize) -> CmdResult<Tensor> {
    let mut g = Graph::new();
    let consts: Vec<Var> = model.store.values().iter().map(|t| g.constant(t.clone())).collect();
    let mut cx = Ctx::new(&mut g, &consts, false, ChaCha8Rng::seed_from_u64(0));
    let trace = model.forward_features(&mut cx, cloud)?;
    Ok(cx.g.value(trace.levels[block + 1].features).clone())
}
