//! Curve grouping: guided walks on a KNN graph.
//!
//! All `n` curves of a [`CurveSet`] advance together; per-curve tensors are
//! laid out as columns (`C×n`), neighbour blocks as `C×n×k`.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{kernels, Activation, ConcatLinear, ConcatMlp, Ctx, MlpParams, MlpSpec, Norm, ParamStore, Var};
use crate::error::{arg_err, shape_err, Result};
use crate::geometry::{dist2, sub, NeighborGraph, Point};

/// Which curve descriptor and transition rule a walk uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyKind {
    /// `r_i = s_i`, no suppression.
    #[serde(rename = "naive")]
    Naive,
    /// Learned momentum descriptor, no suppression.
    #[serde(rename = "momentum")]
    Momentum,
    /// Momentum descriptor plus crossover suppression.
    #[serde(rename = "momentum+cs")]
    MomentumSuppression,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [Self::Naive, Self::Momentum, Self::MomentumSuppression];

    pub fn momentum(self) -> bool {
        self != Self::Naive
    }

    pub fn suppression(self) -> bool {
        self == Self::MomentumSuppression
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Naive => "naive",
            Self::Momentum => "momentum",
            Self::MomentumSuppression => "momentum+cs",
        }
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown policy '{s}' (expected naive, momentum or momentum+cs)"))
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Learnable parts of the walk: start selector, transition scorer and
/// momentum gate.
#[derive(Clone, Debug)]
pub struct WalkPolicy {
    /// `[s_j; r] (2C) → C → 1`.
    pub logit: ConcatMlp,
    /// `[r_{i−1}; s_i] (2C) → 2`.
    pub momentum: ConcatLinear,
    /// `C → 1`, sigmoid applied by [`select_starts`].
    pub selector: MlpParams,
    pub kind: PolicyKind,
    /// Suppression threshold angle in radians.
    pub theta_bar: f64,
    pub channels: usize,
}

impl WalkPolicy {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        kind: PolicyKind,
        theta_bar: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(theta_bar > 0.0 && theta_bar <= PI) {
            return arg_err("WalkPolicy::new", format!("threshold angle {theta_bar} outside (0, π]"));
        }
        let c = channels;
        let logit = ConcatMlp {
            first: ConcatLinear::new(store, &format!("{name}.logit.0"), c, c, c, true, rng),
            first_norm: None,
            first_activation: Activation::LeakyRelu,
            tail: Some(MlpParams::new(
                store,
                &format!("{name}.logit.tail"),
                MlpSpec { dims: &[c, 1], hidden: Activation::None, last: Activation::None, norm: Norm::None, bias: true },
                rng,
            )),
        };
        let momentum = ConcatLinear::new(store, &format!("{name}.momentum"), c, c, 2, true, rng);
        let selector = MlpParams::new(
            store,
            &format!("{name}.start"),
            MlpSpec { dims: &[c, 1], hidden: Activation::None, last: Activation::None, norm: Norm::None, bias: true },
            rng,
        );
        Ok(Self { logit, momentum, selector, kind, theta_bar, channels })
    }

    pub fn num_scalars(&self) -> usize {
        self.logit.num_scalars() + self.momentum.num_scalars() + self.selector.num_scalars()
    }
}

/// Start scores, gated features and the `n` best-scoring start points.
pub struct Starts {
    pub gated: Var,
    pub indices: Vec<usize>,
    pub scores: Var,
}

/// `scores = sigmoid(MLP(F))`, `F ⊙ scores` and the top-`n` indices by
/// score (ties to the lower index).
pub fn select_starts(cx: &mut Ctx, selector: &MlpParams, f: Var, n: usize) -> Result<Starts> {
    let p = cx.g.value(f).dims2()?.1;
    if n == 0 || n > p {
        return arg_err("select_starts", format!("n = {n} with {p} points"));
    }
    let logits = selector.forward(cx, f)?;
    let scores = cx.g.sigmoid(logits);
    let gated = cx.g.mul(f, scores)?;
    let indices = top_n(cx.g.value(scores).data(), n);
    Ok(Starts { gated, indices, scores })
}

/// Indices of the `n` largest values, largest first, ties to the lower index.
pub fn top_n(values: &[f64], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(n);
    order
}

/// `[s^j; r]` stacked along channels.
pub fn state_descriptor(cx: &mut Ctx, neighbors: Var, r: Var) -> Result<Var> {
    if cx.g.shape(neighbors) != cx.g.shape(r) {
        return shape_err("state_descriptor", format!("{:?} vs {:?}", cx.g.shape(neighbors), cx.g.shape(r)));
    }
    cx.g.concat(&[neighbors, r], 0)
}

/// Logit of every candidate: the shared logit MLP on `[s^j; r]`.
///
/// `neighbors` is `C×n×k`, `r` is `C×n`; the result is `n×k`.
pub fn policy_logits(cx: &mut Ctx, logit: &ConcatMlp, neighbors: Var, r: Var) -> Result<Var> {
    let ns = cx.g.shape(neighbors).to_vec();
    let (c, n) = cx.g.value(r).dims2()?;
    if ns.len() != 3 || ns[0] != c || ns[1] != n {
        return shape_err("policy_logits", format!("neighbours {ns:?} with descriptor {c}×{n}"));
    }
    let flat = cx.g.reshape(neighbors, &[c, n * ns[2]])?;
    let pa = logit.first.project_a(cx, flat)?;
    logits_from_projection(cx, logit, pa, r, ns[2])
}

/// Policy logits from neighbour projections `W_a x_j` laid out `h×(n·k)`.
fn logits_from_projection(cx: &mut Ctx, logit: &ConcatMlp, pa: Var, r: Var, k: usize) -> Result<Var> {
    let n = cx.g.shape(r)[1];
    let h = logit.first.out_dim;
    let pa = cx.g.reshape(pa, &[h, n, k])?;
    let pb = logit.first.project_b(cx, r)?;
    let pb = cx.g.reshape(pb, &[h, n, 1])?;
    let pre = cx.g.add(pa, pb)?;
    let pre = cx.g.reshape(pre, &[h, n * k])?;
    let out = logit.finish(cx, pre)?;
    cx.g.reshape(out, &[n, k])
}

/// Crossover multipliers `d ∈ [0, 1]` (`n×k`) for support vectors `C×n`
/// and candidate vectors `C×n×k`.
pub fn suppression_multiplier(cx: &mut Ctx, support: Var, candidates: Var, theta_bar: f64) -> Result<Var> {
    cx.g.suppression(support, candidates, theta_bar.cos())
}

/// `β = softmax(MLP([r_prev; s]))₀` per curve and `r = β r_prev + (1 − β) s`.
/// Returns `(β: 1×n, r: C×n)`.
pub fn momentum_update(cx: &mut Ctx, momentum: &ConcatLinear, r_prev: Var, s: Var) -> Result<(Var, Var)> {
    let logits = momentum.forward_concat(cx, r_prev, s)?;
    let w = cx.g.softmax(logits, 0)?;
    let beta = cx.g.narrow(w, 0, 0, 1)?;
    // s + β (r_prev − s) is exactly s when r_prev == s
    let diff = cx.g.sub(r_prev, s)?;
    let step = cx.g.mul(beta, diff)?;
    let r = cx.g.add(s, step)?;
    Ok((beta, r))
}

/// Walk state between transitions.
#[derive(Clone, Debug)]
pub struct WalkState {
    pub heads: Vec<usize>,
    /// Head features `s_i`, `C×n`.
    pub s: Var,
    /// Previous descriptor `r_{i−1}` (equal to `s_1` before the first step).
    pub r_prev: Var,
}

/// Everything one transition produced.
pub struct StepOutput {
    pub next: WalkState,
    /// Descriptor `r_i` used to score the candidates.
    pub r: Var,
    /// Effective candidate logits `n×k` after suppression.
    pub logits: Var,
    /// Candidate features `C×n×k`.
    pub neighbors: Var,
}

/// One transition of every curve: score the head's neighbours, select the
/// argmax straight-through and gather its feature.
pub fn walk_step(cx: &mut Ctx, policy: &WalkPolicy, f: Var, graph: &NeighborGraph, state: &WalkState) -> Result<StepOutput> {
    let proj = policy.logit.first.project_a(cx, f)?;
    step_projected(cx, policy, f, proj, graph, state)
}

/// [`walk_step`] with `W_a f` precomputed over all points, shared by every
/// step of a walk.
fn step_projected(
    cx: &mut Ctx,
    policy: &WalkPolicy,
    f: Var,
    proj: Var,
    graph: &NeighborGraph,
    state: &WalkState,
) -> Result<StepOutput> {
    let (c, p) = cx.g.value(f).dims2()?;
    let n = state.heads.len();
    let k = graph.k;
    if graph.num_points() != p {
        return shape_err("walk_step", format!("graph over {} points, features over {p}", graph.num_points()));
    }
    if let Some(&bad) = state.heads.iter().find(|&&h| h >= p) {
        return arg_err("walk_step", format!("head {bad} out of range"));
    }
    let r = if policy.kind.momentum() { momentum_update(cx, &policy.momentum, state.r_prev, state.s)?.1 } else { state.s };

    let rows: Vec<usize> = state.heads.iter().flat_map(|&h| graph.row(h).iter().copied()).collect();
    let gathered = cx.g.gather_cols(f, &rows)?;
    let neighbors = cx.g.reshape(gathered, &[c, n, k])?;

    let pa = cx.g.gather_cols(proj, &rows)?;
    let mut logits = logits_from_projection(cx, &policy.logit, pa, r, k)?;
    if policy.kind.suppression() {
        let support = cx.g.sub(state.s, state.r_prev)?;
        let s3 = cx.g.reshape(state.s, &[c, n, 1])?;
        let cand = cx.g.sub(neighbors, s3)?;
        let d = suppression_multiplier(cx, support, cand, policy.theta_bar)?;
        logits = cx.g.mul(logits, d)?;
    }

    let choice = kernels::argmax_axis(cx.g.value(logits).data(), n, k, 1);
    let sel = cx.g.hard_softmax_st(logits, 1)?;
    let sel = cx.g.reshape(sel, &[1, n, k])?;
    let picked = cx.g.mul(neighbors, sel)?;
    let summed = cx.g.sum_axis(picked, 2)?;
    let s_next = cx.g.reshape(summed, &[c, n])?;

    let heads = (0..n).map(|i| rows[i * k + choice[i]]).collect();
    Ok(StepOutput { next: WalkState { heads, s: s_next, r_prev: r }, r, logits, neighbors })
}

/// `n` curves of `l` states each (including the start).
pub struct CurveSet {
    pub n: usize,
    pub l: usize,
    /// Point indices, curve-major (`indices[c * l + i]`).
    pub indices: Vec<usize>,
    /// Stacked curve features `C×n×l`.
    pub features: Var,
    pub start_scores: Var,
    /// Score-gated features the walks read from.
    pub gated: Var,
}

impl CurveSet {
    pub fn curve(&self, c: usize) -> &[usize] {
        &self.indices[c * self.l..(c + 1) * self.l]
    }

    pub fn curves(&self) -> Vec<Vec<usize>> {
        (0..self.n).map(|c| self.curve(c).to_vec()).collect()
    }
}

/// Selects `n` starts on `f: C×P` and walks each for `l − 1` transitions.
pub fn group_curves(cx: &mut Ctx, policy: &WalkPolicy, f: Var, graph: &NeighborGraph, n: usize, l: usize) -> Result<CurveSet> {
    if l == 0 {
        return arg_err("group_curves", "curve length must be at least 1");
    }
    let (c, _) = cx.g.value(f).dims2()?;
    if c != policy.channels {
        return shape_err("group_curves", format!("{c} channels for a {}-channel policy", policy.channels));
    }
    let starts = select_starts(cx, &policy.selector, f, n)?;
    let s1 = cx.g.gather_cols(starts.gated, &starts.indices)?;
    let mut state = WalkState { heads: starts.indices.clone(), s: s1, r_prev: s1 };
    let mut steps = vec![cx.g.reshape(s1, &[c, n, 1])?];
    let mut per_step = vec![starts.indices.clone()];
    let proj = policy.logit.first.project_a(cx, starts.gated)?;
    for _ in 1..l {
        let out = step_projected(cx, policy, starts.gated, proj, graph, &state)?;
        state = out.next;
        steps.push(cx.g.reshape(state.s, &[c, n, 1])?);
        per_step.push(state.heads.clone());
    }
    let features = cx.g.concat(&steps, 2)?;
    let indices = (0..n).flat_map(|curve| per_step.iter().map(move |s| s[curve])).collect();
    Ok(CurveSet { n, l, indices, features, start_scores: starts.scores, gated: starts.gated })
}

// ---- statistics -----------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub indices: Vec<usize>,
    pub dist_to_start: Vec<f64>,
    pub dist_to_last: Vec<f64>,
    pub revisits: usize,
    pub mean_turn_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveAggregate {
    pub num_curves: usize,
    pub length: usize,
    pub mean_revisits: f64,
    pub mean_dist_to_start: Vec<f64>,
    pub mean_dist_to_last: Vec<f64>,
    pub mean_turn_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveStats {
    pub curves: Vec<CurveRecord>,
    pub aggregate: CurveAggregate,
}

/// Number of states that repeat an earlier state of the same curve.
pub fn revisit_count(curve: &[usize]) -> usize {
    let mut seen = curve.to_vec();
    seen.sort_unstable();
    seen.dedup();
    curve.len() - seen.len()
}

fn turn_deg(a: Point, b: Point) -> Option<f64> {
    let (na, nb) = (dist2(a, [0.0; 3]).sqrt(), dist2(b, [0.0; 3]).sqrt());
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    let cos = ((a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) / (na * nb)).clamp(-1.0, 1.0);
    Some(cos.acos().to_degrees())
}

pub fn curve_record(curve: &[usize], coords: &[Point]) -> CurveRecord {
    let pts: Vec<Point> = curve.iter().map(|&i| coords[i]).collect();
    let dist_to_start = pts.iter().map(|&q| dist2(q, pts[0]).sqrt()).collect();
    let dist_to_last = (0..pts.len()).map(|i| if i == 0 { 0.0 } else { dist2(pts[i], pts[i - 1]).sqrt() }).collect();
    let turns: Vec<f64> = (2..pts.len()).filter_map(|i| turn_deg(sub(pts[i - 1], pts[i - 2]), sub(pts[i], pts[i - 1]))).collect();
    let mean_turn_deg = if turns.is_empty() { 0.0 } else { turns.iter().sum::<f64>() / turns.len() as f64 };
    CurveRecord { indices: curve.to_vec(), dist_to_start, dist_to_last, revisits: revisit_count(curve), mean_turn_deg }
}

/// Per-curve travel distances, revisits and turn angles plus their means.
pub fn curve_stats(curves: &[Vec<usize>], coords: &[Point]) -> Result<CurveStats> {
    let Some(first) = curves.first() else {
        return arg_err("curve_stats", "no curves");
    };
    let l = first.len();
    if curves.iter().any(|c| c.len() != l || c.is_empty()) {
        return arg_err("curve_stats", "curves must share a positive length");
    }
    if let Some(&bad) = curves.iter().flatten().find(|&&i| i >= coords.len()) {
        return arg_err("curve_stats", format!("index {bad} out of range"));
    }
    let records: Vec<CurveRecord> = curves.iter().map(|c| curve_record(c, coords)).collect();
    let aggregate = aggregate_records(&records)?;
    Ok(CurveStats { curves: records, aggregate })
}

/// Means over records of one common length.
pub fn aggregate_records(records: &[CurveRecord]) -> Result<CurveAggregate> {
    let Some(first) = records.first() else {
        return arg_err("aggregate_records", "no curves");
    };
    let l = first.indices.len();
    if records.iter().any(|r| r.indices.len() != l) {
        return arg_err("aggregate_records", "curves must share a length");
    }
    let m = records.len() as f64;
    let mean_at = |f: fn(&CurveRecord) -> &Vec<f64>| (0..l).map(|i| records.iter().map(|r| f(r)[i]).sum::<f64>() / m).collect();
    Ok(CurveAggregate {
        num_curves: records.len(),
        length: l,
        mean_revisits: records.iter().map(|r| r.revisits as f64).sum::<f64>() / m,
        mean_dist_to_start: mean_at(|r| &r.dist_to_start),
        mean_dist_to_last: mean_at(|r| &r.dist_to_last),
        mean_turn_deg: records.iter().map(|r| r.mean_turn_deg).sum::<f64>() / m,
    })
}
