//! Curve statistics over many policy initialisations or clouds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregate::{lpfa, lpfa_params};
use crate::autodiff::{bind_params, Ctx, Graph, Norm, ParamStore, Tensor};
use crate::error::{arg_err, Result};
use crate::geometry::{knn, max_knn_radius, points_tensor, Point};
use crate::walk::{aggregate_records, curve_stats, group_curves, CurveAggregate, PolicyKind, WalkPolicy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub n: usize,
    pub l: usize,
    /// Neighbours per point in the walk graph.
    pub k: usize,
    /// Feature width of the random stem.
    pub channels: usize,
    pub policy: PolicyKind,
    pub theta_bar_deg: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { n: 8, l: 30, k: 8, channels: 16, policy: PolicyKind::MomentumSuppression, theta_bar_deg: 90.0 }
    }
}

/// Curves and the features they were walked on.
pub struct Probe {
    pub curves: Vec<Vec<usize>>,
    pub features: Tensor,
}

/// A random LPFA stem and a random walk policy, both drawn from `seed`,
/// walked on the `k`-NN graph of `coords`. The policy weights depend on
/// `seed` only, so every [`PolicyKind`] sees the same network.
pub fn random_probe(coords: &[Point], cfg: &ProbeConfig, seed: u64) -> Result<Probe> {
    if coords.len() <= cfg.k {
        return arg_err("random_probe", format!("{} points for k = {}", coords.len(), cfg.k));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let stem = lpfa_params(&mut store, "stem", 3, cfg.channels, true, Norm::None, &mut rng);
    let policy = WalkPolicy::new(&mut store, "walk", cfg.channels, cfg.policy, cfg.theta_bar_deg.to_radians(), &mut rng)?;
    let graph = knn(coords, cfg.k, true)?;
    let mut g = Graph::new();
    let bound = bind_params(&mut g, &store);
    let mut cx = Ctx::new(&mut g, &bound, false, rng);
    let x = cx.g.constant(points_tensor(coords));
    let f = lpfa(&mut cx, x, &graph, &stem)?;
    let set = group_curves(&mut cx, &policy, f, &graph, cfg.n.min(coords.len()), cfg.l)?;
    Ok(Probe { curves: set.curves(), features: cx.g.value(f).clone() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub mean_revisits: f64,
    /// Mean distance from the start at the last state.
    pub final_dist_to_start: f64,
    pub max_knn_radius: f64,
}

/// Statistics pooled over every curve of every run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub policy: PolicyKind,
    pub k: usize,
    /// Largest distance from a point to its k-th neighbour, over every
    /// cloud of the sweep.
    pub max_knn_radius: f64,
    pub runs: Vec<SeedRun>,
    pub aggregate: CurveAggregate,
}

impl Sweep {
    /// Whether the mean curve ends farther from its start than any k-NN
    /// neighbourhood reaches.
    pub fn leaves_neighborhood(&self) -> bool {
        self.aggregate.mean_dist_to_start.last().is_some_and(|&d| d > self.max_knn_radius)
    }
}

/// Curves of one run on the cloud they were drawn on.
pub struct Run<'a> {
    pub seed: u64,
    pub coords: &'a [Point],
    pub curves: Vec<Vec<usize>>,
}

/// Pools the curves of every run.
pub fn summarize(policy: PolicyKind, k: usize, runs: &[Run]) -> Result<Sweep> {
    if runs.is_empty() {
        return arg_err("summarize", "no runs");
    }
    let mut per_run = Vec::with_capacity(runs.len());
    let mut records = Vec::new();
    for run in runs {
        let stats = curve_stats(&run.curves, run.coords)?;
        per_run.push(SeedRun {
            seed: run.seed,
            mean_revisits: stats.aggregate.mean_revisits,
            final_dist_to_start: *stats.aggregate.mean_dist_to_start.last().expect("non-empty curves"),
            max_knn_radius: max_knn_radius(run.coords, k)?,
        });
        records.extend(stats.curves);
    }
    Ok(Sweep {
        policy,
        k,
        max_knn_radius: per_run.iter().map(|r| r.max_knn_radius).fold(0.0, f64::max),
        runs: per_run,
        aggregate: aggregate_records(&records)?,
    })
}

/// [`random_probe`] for seeds `0..seeds` on one cloud, pooled.
pub fn random_sweep(coords: &[Point], cfg: &ProbeConfig, seeds: u64) -> Result<Sweep> {
    let ids: Vec<u64> = (0..seeds).collect();
    let runs = crate::par::map(&ids, |&seed| random_probe(coords, cfg, seed).map(|p| Run { seed, coords, curves: p.curves }))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    summarize(cfg.policy, cfg.k, &runs)
}
