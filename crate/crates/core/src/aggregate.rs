//! Feature aggregation: neighbourhood aggregation, LPFA, attentive pooling,
//! curve aggregation and the CIC block that chains them.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, ConcatLinear, ConcatMlp, Ctx, Linear, MlpParams, MlpSpec, Norm, ParamStore, Tensor, Var};
use crate::error::{arg_err, shape_err, Result};
use crate::geometry::{ball_query_knn, farthest_point_sample, knn, NeighborGraph, Point};
use crate::walk::{group_curves, CurveSet, PolicyKind, WalkPolicy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pool {
    Max,
    Avg,
}

/// Checks that `graph` indexes the `P` columns of `f`; returns `(C, P, k)`.
fn graph_dims(cx: &Ctx, op: &'static str, f: Var, graph: &NeighborGraph) -> Result<(usize, usize, usize)> {
    let (c, p) = cx.g.value(f).dims2()?;
    if graph.num_points() != p || graph.indices.len() != p * graph.k {
        return shape_err(op, format!("graph over {} points, features over {p}", graph.num_points()));
    }
    Ok((c, p, graph.k))
}

/// `g_i = pool_j MLP(f_i − f_j)` over the neighbours of every point.
pub fn local_aggregate(cx: &mut Ctx, f: Var, graph: &NeighborGraph, mlp: &MlpParams, pool: Pool) -> Result<Var> {
    let (c, p, k) = graph_dims(cx, "local_aggregate", f, graph)?;
    let nb = cx.g.gather_cols(f, &graph.indices)?;
    let nb = cx.g.reshape(nb, &[c, p, k])?;
    let centre = cx.g.reshape(f, &[c, p, 1])?;
    let diff = cx.g.sub(centre, nb)?;
    let diff = cx.g.reshape(diff, &[c, p * k])?;
    let h = mlp.forward(cx, diff)?;
    let co = mlp.out_dim();
    let h = cx.g.reshape(h, &[co, p, k])?;
    let pooled = match pool {
        Pool::Max => cx.g.max_axis(h, 2)?,
        Pool::Avg => cx.g.mean_axis(h, 2)?,
    };
    cx.g.reshape(pooled, &[co, p])
}

/// LPFA: mean over neighbours of `MLP([f_j − f_i; f_i])`.
///
/// The first layer is applied as `W_a f_j + (W_b − W_a) f_i`, projecting
/// each point once and gathering the projections.
pub fn lpfa(cx: &mut Ctx, f: Var, graph: &NeighborGraph, mlp: &ConcatMlp) -> Result<Var> {
    let (c, p, k) = graph_dims(cx, "lpfa", f, graph)?;
    if c != mlp.first.a_dim || c != mlp.first.b_dim {
        return shape_err("lpfa", format!("{c} channels for a {}+{} input layer", mlp.first.a_dim, mlp.first.b_dim));
    }
    let h = mlp.first.out_dim;
    let pa = mlp.first.project_a(cx, f)?;
    let pb = mlp.first.project_b(cx, f)?;
    let own = cx.g.sub(pb, pa)?;
    let own = cx.g.reshape(own, &[h, p, 1])?;
    let nb = cx.g.gather_cols(pa, &graph.indices)?;
    let nb = cx.g.reshape(nb, &[h, p, k])?;
    let pre = cx.g.add(nb, own)?;
    let pre = cx.g.reshape(pre, &[h, p * k])?;
    let out = mlp.finish(cx, pre)?;
    let co = mlp.out_dim();
    let out = cx.g.reshape(out, &[co, p, k])?;
    let pooled = cx.g.mean_axis(out, 2)?;
    cx.g.reshape(pooled, &[co, p])
}

/// Builds an LPFA network `[C_in; C_in] → C_out` (norm, leaky) with an
/// optional `C_out → C_out` tail layer.
pub fn lpfa_params<R: Rng + ?Sized>(
    store: &mut ParamStore,
    name: &str,
    in_ch: usize,
    out_ch: usize,
    tail: bool,
    norm: Norm,
    rng: &mut R,
) -> ConcatMlp {
    let first = ConcatLinear::new(store, &format!("{name}.0"), in_ch, in_ch, out_ch, true, rng);
    let first_norm = (norm == Norm::Batch).then(|| ConcatMlp::norm_params(store, &format!("{name}.0"), out_ch));
    ConcatMlp {
        first,
        first_norm,
        first_activation: Activation::LeakyRelu,
        tail: tail.then(|| {
            MlpParams::new(
                store,
                &format!("{name}.tail"),
                MlpSpec { dims: &[out_ch, out_ch], hidden: Activation::LeakyRelu, last: Activation::LeakyRelu, norm, bias: true },
                rng,
            )
        }),
    }
}

/// Attentive pooling over the last axis of `x: C×G×M`: per-channel
/// softmax over `M` of a shared score MLP, then the weighted sum. Gives
/// `C×G`.
pub fn attentive_pool_groups(cx: &mut Ctx, x: Var, score: &MlpParams) -> Result<Var> {
    let s = cx.g.shape(x).to_vec();
    if s.len() != 3 {
        return shape_err("attentive_pool", format!("expected C×G×M, got {s:?}"));
    }
    let (c, g, m) = (s[0], s[1], s[2]);
    let flat = cx.g.reshape(x, &[c, g * m])?;
    let logits = score.forward(cx, flat)?;
    if score.out_dim() != c {
        return shape_err("attentive_pool", format!("score MLP gives {} channels for {c}", score.out_dim()));
    }
    let logits = cx.g.reshape(logits, &[c, g, m])?;
    let w = cx.g.softmax(logits, 2)?;
    let weighted = cx.g.mul(x, w)?;
    let sum = cx.g.sum_axis(weighted, 2)?;
    cx.g.reshape(sum, &[c, g])
}

/// Attentive pooling of a `C×m` set into one `C×1` column.
pub fn attentive_pool(cx: &mut Ctx, x: Var, score: &MlpParams) -> Result<Var> {
    let (c, m) = cx.g.value(x).dims2()?;
    let x3 = cx.g.reshape(x, &[c, 1, m])?;
    attentive_pool_groups(cx, x3, score)
}

/// Parameters of the curve aggregation operator.
#[derive(Clone, Debug)]
pub struct CaParams {
    pub channels: usize,
    pub reduced: usize,
    pub pool_inter: MlpParams,
    pub pool_intra: MlpParams,
    pub reduce_points: Linear,
    pub reduce_intra: Linear,
    pub reduce_inter: Linear,
    pub value_intra: Linear,
    pub value_inter: Linear,
    /// `2C → C`, bias-free, so zero weights make the operator the identity.
    pub fuse: Linear,
}

pub const DEFAULT_BOTTLENECK: usize = 4;

impl CaParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, channels: usize, rho: usize, rng: &mut R) -> Self {
        let c = channels;
        let r = (c / rho.max(1)).max(1);
        let score = |store: &mut ParamStore, which: &str, rng: &mut R| {
            MlpParams::new(
                store,
                &format!("{name}.{which}"),
                MlpSpec { dims: &[c, c], hidden: Activation::None, last: Activation::None, norm: Norm::None, bias: true },
                rng,
            )
        };
        let pool_inter = score(store, "pool_inter", rng);
        let pool_intra = score(store, "pool_intra", rng);
        Self {
            channels: c,
            reduced: r,
            pool_inter,
            pool_intra,
            reduce_points: Linear::new(store, &format!("{name}.reduce_points"), c, r, false, rng),
            reduce_intra: Linear::new(store, &format!("{name}.reduce_intra"), c, r, false, rng),
            reduce_inter: Linear::new(store, &format!("{name}.reduce_inter"), c, r, false, rng),
            value_intra: Linear::new(store, &format!("{name}.value_intra"), r, c, false, rng),
            value_inter: Linear::new(store, &format!("{name}.value_inter"), r, c, false, rng),
            fuse: Linear::new(store, &format!("{name}.fuse"), 2 * c, c, false, rng),
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.pool_inter.num_scalars()
            + self.pool_intra.num_scalars()
            + [&self.reduce_points, &self.reduce_intra, &self.reduce_inter, &self.value_intra, &self.value_inter, &self.fuse]
                .iter()
                .map(|l| l.num_scalars())
                .sum::<usize>()
    }
}

/// Intermediates of one curve aggregation, for inspection.
pub struct CaTrace {
    pub output: Var,
    pub f_intra: Var,
    pub f_inter: Var,
    pub score_intra: Var,
    pub score_inter: Var,
}

/// Fuses curve features `C×n×l` into every point feature of `f: C×P`.
pub fn curve_aggregate(cx: &mut Ctx, f: Var, curves: Var, params: &CaParams) -> Result<Var> {
    Ok(curve_aggregate_traced(cx, f, curves, params)?.output)
}

pub fn curve_aggregate_traced(cx: &mut Ctx, f: Var, curves: Var, params: &CaParams) -> Result<CaTrace> {
    let (c, _p) = cx.g.value(f).dims2()?;
    let cs = cx.g.shape(curves).to_vec();
    if cs.len() != 3 || cs[0] != c || c != params.channels {
        return shape_err("curve_aggregate", format!("features {c}×P, curves {cs:?}, operator width {}", params.channels));
    }
    let (n, l) = (cs[1], cs[2]);

    // along each curve
    let f_intra = attentive_pool_groups(cx, curves, &params.pool_intra)?;
    // across curves at each step: reorder to C×l×n first
    let flat = cx.g.reshape(curves, &[c, n * l])?;
    let perm: Vec<usize> = (0..l).flat_map(|i| (0..n).map(move |j| j * l + i)).collect();
    let by_step = cx.g.gather_cols(flat, &perm)?;
    let by_step = cx.g.reshape(by_step, &[c, l, n])?;
    let f_inter = attentive_pool_groups(cx, by_step, &params.pool_inter)?;

    let f_red = params.reduce_points.forward(cx, f)?;
    let intra_red = params.reduce_intra.forward(cx, f_intra)?;
    let inter_red = params.reduce_inter.forward(cx, f_inter)?;
    let f_red_t = cx.g.transpose(f_red)?;

    let a_intra = cx.g.matmul(f_red_t, intra_red)?;
    let score_intra = cx.g.softmax(a_intra, 1)?;
    let a_inter = cx.g.matmul(f_red_t, inter_red)?;
    let score_inter = cx.g.softmax(a_inter, 1)?;

    let v_intra = params.value_intra.forward(cx, intra_red)?;
    let v_inter = params.value_inter.forward(cx, inter_red)?;
    let st_intra = cx.g.transpose(score_intra)?;
    let st_inter = cx.g.transpose(score_inter)?;
    let fine_intra = cx.g.matmul(v_intra, st_intra)?;
    let fine_inter = cx.g.matmul(v_inter, st_inter)?;

    let both = cx.g.concat(&[fine_intra, fine_inter], 0)?;
    let fused = params.fuse.forward(cx, both)?;
    let output = cx.g.add(f, fused)?;
    Ok(CaTrace { output, f_intra, f_inter, score_intra, score_inter })
}

// ---- CIC block ------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum NeighborRule {
    Knn { k: usize },
    Ball { radius: f64, cap: usize },
}

impl NeighborRule {
    pub fn build(&self, coords: &[Point]) -> Result<NeighborGraph> {
        match *self {
            NeighborRule::Knn { k } => knn(coords, k.min(coords.len().saturating_sub(1)).max(1), true),
            NeighborRule::Ball { radius, cap } => ball_query_knn(coords, radius, cap, true),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSpec {
    pub n: usize,
    pub l: usize,
    pub policy: PolicyKind,
    /// Suppression threshold in degrees.
    pub theta_bar_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CicConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Farthest-point downsample target, `None` to keep the resolution.
    pub downsample: Option<usize>,
    pub neighbors: NeighborRule,
    pub curves: Option<CurveSpec>,
    /// Bottleneck ratio of the curve aggregation.
    pub rho: usize,
    pub residual: bool,
    /// Normalisation inside the LPFA layer.
    #[serde(default = "no_norm")]
    pub norm: Norm,
}

fn no_norm() -> Norm {
    Norm::None
}

impl CicConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return arg_err("CicConfig", "channel counts must be positive");
        }
        if let Some(cs) = &self.curves {
            if cs.n == 0 || cs.l == 0 {
                return arg_err("CicConfig", "curve quantity and length must be positive");
            }
            if !(cs.theta_bar_deg > 0.0 && cs.theta_bar_deg <= 180.0) {
                return arg_err("CicConfig", format!("threshold angle {}° outside (0, 180]", cs.theta_bar_deg));
            }
        }
        if self.downsample == Some(0) {
            return arg_err("CicConfig", "downsample target must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct CicParams {
    pub lpfa: ConcatMlp,
    pub walk: Option<WalkPolicy>,
    pub ca: Option<CaParams>,
    /// Bias-free projection when the channel count changes.
    pub shortcut: Option<Linear>,
}

impl CicParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cfg: &CicConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let lpfa = lpfa_params(store, &format!("{name}.lpfa"), cfg.in_channels, cfg.out_channels, false, cfg.norm, rng);
        let (walk, ca) = match &cfg.curves {
            Some(cs) => (
                Some(WalkPolicy::new(
                    store,
                    &format!("{name}.walk"),
                    cfg.out_channels,
                    cs.policy,
                    cs.theta_bar_deg.to_radians(),
                    rng,
                )?),
                Some(CaParams::new(store, &format!("{name}.ca"), cfg.out_channels, cfg.rho, rng)),
            ),
            None => (None, None),
        };
        let shortcut = (cfg.residual && cfg.in_channels != cfg.out_channels)
            .then(|| Linear::new(store, &format!("{name}.shortcut"), cfg.in_channels, cfg.out_channels, false, rng));
        Ok(Self { lpfa, walk, ca, shortcut })
    }

    pub fn num_scalars(&self) -> usize {
        self.lpfa.num_scalars()
            + self.walk.as_ref().map_or(0, WalkPolicy::num_scalars)
            + self.ca.as_ref().map_or(0, CaParams::num_scalars)
            + self.shortcut.as_ref().map_or(0, Linear::num_scalars)
    }
}

pub struct CicOutput {
    pub coords: Vec<Point>,
    pub features: Var,
    pub graph: NeighborGraph,
    pub curves: Option<CurveSet>,
}

/// Farthest-point subset of `m` points (seeded at point 0) and its
/// feature columns; everything when `m` is absent or not smaller.
pub fn downsample(cx: &mut Ctx, coords: &[Point], f: Var, m: Option<usize>) -> Result<(Vec<Point>, Var)> {
    match m {
        Some(m) if m < coords.len() => {
            let idx = farthest_point_sample(coords, m, 0)?;
            let sub: Vec<Point> = idx.iter().map(|&i| coords[i]).collect();
            Ok((sub, cx.g.gather_cols(f, &idx)?))
        }
        _ => Ok((coords.to_vec(), f)),
    }
}

/// Downsample, aggregate neighbourhoods, group and aggregate curves, add
/// the shortcut and activate.
pub fn cic_block(cx: &mut Ctx, coords: &[Point], f: Var, cfg: &CicConfig, params: &CicParams) -> Result<CicOutput> {
    let (c, p) = cx.g.value(f).dims2()?;
    if c != cfg.in_channels || p != coords.len() {
        return shape_err(
            "cic_block",
            format!("{c}×{p} features for {} points, block expects {} channels", coords.len(), cfg.in_channels),
        );
    }
    let (coords, f) = downsample(cx, coords, f, cfg.downsample)?;
    let graph = cfg.neighbors.build(&coords)?;
    let mut h = lpfa(cx, f, &graph, &params.lpfa)?;
    let mut curves = None;
    if let (Some(cs), Some(walk), Some(ca)) = (&cfg.curves, &params.walk, &params.ca) {
        let set = group_curves(cx, walk, h, &graph, cs.n.min(coords.len()), cs.l)?;
        h = curve_aggregate(cx, h, set.features, ca)?;
        curves = Some(set);
    }
    if cfg.residual {
        let sc = match &params.shortcut {
            Some(proj) => proj.forward(cx, f)?,
            None => f,
        };
        h = cx.g.add(h, sc)?;
    }
    let features = cx.g.leaky_relu(h);
    Ok(CicOutput { coords, features, graph, curves })
}

// ---- diagnostics ----------------------------------------------------------

/// Per-channel variance across points and per-point channel mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelVariance {
    pub per_channel_variance: Vec<f64>,
    pub per_point_mean: Vec<f64>,
}

impl ChannelVariance {
    pub fn mean_variance(&self) -> f64 {
        self.per_channel_variance.iter().sum::<f64>() / self.per_channel_variance.len() as f64
    }
}

/// Population variance of every channel of `f: C×P` over its points.
pub fn channel_variance_map(f: &Tensor) -> Result<ChannelVariance> {
    let (c, p) = f.dims2()?;
    let data = f.data();
    let per_channel_variance = (0..c)
        .map(|r| {
            let row = &data[r * p..(r + 1) * p];
            let mean = row.iter().sum::<f64>() / p as f64;
            row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / p as f64
        })
        .collect();
    let per_point_mean = (0..p).map(|j| (0..c).map(|r| data[r * p + j]).sum::<f64>() / c as f64).collect();
    Ok(ChannelVariance { per_channel_variance, per_point_mean })
}

/// CSV rows `point_id,x,y,z,channel_mean[,c0,c1,…]`.
pub fn write_channel_csv<W: Write>(w: &mut W, coords: &[Point], f: &Tensor, per_channel: bool) -> Result<()> {
    let (c, p) = f.dims2()?;
    if p != coords.len() {
        return shape_err("write_channel_csv", format!("{p} feature columns for {} points", coords.len()));
    }
    let map = channel_variance_map(f)?;
    write!(w, "point_id,x,y,z,channel_mean")?;
    if per_channel {
        for r in 0..c {
            write!(w, ",c{r}")?;
        }
    }
    writeln!(w)?;
    for (j, q) in coords.iter().enumerate() {
        write!(w, "{j},{},{},{},{}", q[0], q[1], q[2], map.per_point_mean[j])?;
        if per_channel {
            for r in 0..c {
                write!(w, ",{}", f.at2(r, j))?;
            }
        }
        writeln!(w)?;
    }
    Ok(())
}
