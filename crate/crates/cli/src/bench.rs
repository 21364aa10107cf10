use std::time::Instant;

use curvewalk::dataio::{sample_shape, ShapeKind};
use curvewalk::model::{predict, CurveNet, CurveNetConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::args::BenchArgs;
use crate::setup::{model_config, usage, CmdResult};

#[derive(Serialize)]
struct Timing {
    num_params: usize,
    median_ms: f64,
    p95_ms: f64,
    mean_ms: f64,
}

#[derive(Serialize)]
struct BenchReport {
    points: usize,
    iters: usize,
    warmup: usize,
    threads: usize,
    curves_on: Timing,
    curves_off: Timing,
    /// `curves_on.median_ms / curves_off.median_ms`.
    median_ratio: f64,
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

fn time_forward(cfg: CurveNetConfig, a: &BenchArgs) -> CmdResult<Timing> {
    let model = CurveNet::new(cfg, a.seed)?;
    let cloud = sample_shape(ShapeKind::Sphere, a.points, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    for _ in 0..a.warmup {
        predict(&model, &cloud)?;
    }
    let mut ms = Vec::with_capacity(a.iters);
    for _ in 0..a.iters {
        let t = Instant::now();
        predict(&model, &cloud)?;
        ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let mean_ms = ms.iter().sum::<f64>() / ms.len() as f64;
    ms.sort_by(f64::total_cmp);
    Ok(Timing { num_params: model.num_params(), median_ms: percentile(&ms, 0.5), p95_ms: percentile(&ms, 0.95), mean_ms })
}

pub fn run(a: &BenchArgs) -> CmdResult {
    if a.iters == 0 {
        return usage("--iters must be positive");
    }
    let on = model_config(&a.model, 4, a.points)?;
    let off = on.clone().without_curves();
    let curves_on = time_forward(on, a)?;
    let curves_off = time_forward(off, a)?;
    let report = BenchReport {
        points: a.points,
        iters: a.iters,
        warmup: a.warmup,
        threads: curvewalk::par::current_threads(),
        median_ratio: curves_on.median_ms / curves_off.median_ms,
        curves_on,
        curves_off,
    };
    println!("{}", serde_json::to_string(&report).map_err(anyhow::Error::from)?);
    Ok(())
}
