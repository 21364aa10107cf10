//! Finite-difference gradient suite over every tape operator and the
//! composite curve graphs, shared by the command line and the tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregate::{
    attentive_pool, cic_block, curve_aggregate, local_aggregate, lpfa, lpfa_params, CaParams, CicConfig, CicParams, CurveSpec,
    NeighborRule, Pool,
};
use crate::autodiff::{
    grad_check, Activation, Ctx, GradCheckOptions, Graph, Linear, MlpParams, MlpSpec, Norm, ParamStore, Tensor, Var,
};
use crate::error::Result;
use crate::geometry::{knn, Point};
use crate::walk::{group_curves, PolicyKind, WalkPolicy};

/// Pass threshold on the maximum relative error.
pub const TOLERANCE: f64 = 1e-4;
pub const EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetResult {
    pub target: String,
    pub max_rel_error: f64,
    pub coords_checked: usize,
    pub passed: bool,
    /// Set when the target failed to build or evaluate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var> + Sync>;

struct Target {
    name: &'static str,
    leaves: Vec<Tensor>,
    relaxed: bool,
    build: Build,
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Fixed random linear functional of `y`, so every output element gets a
/// generic upstream gradient.
fn probe(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let w = g.constant(Tensor::randn(g.shape(y).to_vec(), 1.0, &mut rng(seed)));
    let p = g.mul(y, w)?;
    g.sum_all(p)
}

fn op(name: &'static str, leaves: Vec<Tensor>, build: impl Fn(&mut Graph, &[Var]) -> Result<Var> + Sync + 'static) -> Target {
    Target { name, leaves, relaxed: false, build: Box::new(build) }
}

fn cloud(p: usize, seed: u64) -> Vec<Point> {
    let mut r = rng(seed);
    (0..p).map(|_| [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)]).collect()
}

/// Leaves are the store's tensors followed by `extra`; the build sees them
/// in the same order.
fn with_params(store: &ParamStore, extra: Vec<Tensor>) -> Vec<Tensor> {
    store.values().iter().cloned().chain(extra).collect()
}

fn operator_targets() -> Vec<Target> {
    let mut r = rng(7);
    let a2 = Tensor::randn([4, 5], 1.0, &mut r);
    let b2 = Tensor::randn([4, 5], 1.0, &mut r);
    let m2 = Tensor::randn([5, 3], 1.0, &mut r);
    let col = Tensor::randn([4, 1], 1.0, &mut r);
    let row = Tensor::randn([1, 5], 1.0, &mut r);
    let pos = Tensor::uniform([4, 5], 0.5, 2.0, &mut r);
    let a3 = Tensor::randn([3, 4, 5], 1.0, &mut r);
    // keep clear of the kinks at zero
    let away = Tensor::from_fn([4, 5], |i| (if i % 2 == 0 { 1.0 } else { -1.0 }) * (0.2 + 0.1 * i as f64));
    let support = Tensor::randn([4, 3], 1.0, &mut r);
    let cand = Tensor::randn([4, 3, 5], 1.0, &mut r);
    let normals = Tensor::randn([3, 6], 1.0, &mut r);
    let pred = Tensor::randn([3, 6], 1.0, &mut r);
    let cos_t = 120f64.to_radians().cos();
    vec![
        op("matmul", vec![a2.clone(), m2], |g, v| {
            let y = g.matmul(v[0], v[1])?;
            probe(g, y, 1)
        }),
        op("transpose", vec![a2.clone()], |g, v| {
            let y = g.transpose(v[0])?;
            probe(g, y, 2)
        }),
        op("add", vec![a2.clone(), col.clone()], |g, v| {
            let y = g.add(v[0], v[1])?;
            probe(g, y, 3)
        }),
        op("sub", vec![row.clone(), b2.clone()], |g, v| {
            let y = g.sub(v[0], v[1])?;
            probe(g, y, 4)
        }),
        op("mul", vec![a2.clone(), col.clone()], |g, v| {
            let y = g.mul(v[0], v[1])?;
            probe(g, y, 5)
        }),
        op("div", vec![a2.clone(), pos], |g, v| {
            let y = g.div(v[0], v[1])?;
            probe(g, y, 6)
        }),
        op("scale", vec![a2.clone()], |g, v| {
            let y = g.scale(v[0], -1.7);
            probe(g, y, 7)
        }),
        op("leaky_relu", vec![away.clone()], |g, v| {
            let y = g.leaky_relu(v[0]);
            probe(g, y, 8)
        }),
        op("relu", vec![away], |g, v| {
            let y = g.relu(v[0]);
            probe(g, y, 9)
        }),
        op("sigmoid", vec![a2.clone()], |g, v| {
            let y = g.sigmoid(v[0]);
            probe(g, y, 10)
        }),
        op("expand", vec![col], |g, v| {
            let y = g.expand(v[0], &[4, 6])?;
            probe(g, y, 11)
        }),
        op("softmax", vec![a3.clone()], |g, v| {
            let y = g.softmax(v[0], 1)?;
            probe(g, y, 12)
        }),
        Target {
            name: "hard_softmax",
            leaves: vec![a3.clone()],
            relaxed: true,
            build: Box::new(|g, v| {
                let y = g.hard_softmax_st(v[0], 2)?;
                probe(g, y, 13)
            }),
        },
        op("sum_axis", vec![a3.clone()], |g, v| {
            let y = g.sum_axis(v[0], 1)?;
            probe(g, y, 14)
        }),
        op("mean_axis", vec![a3.clone()], |g, v| {
            let y = g.mean_axis(v[0], 2)?;
            probe(g, y, 15)
        }),
        op("max_axis", vec![a3.clone()], |g, v| {
            let y = g.max_axis(v[0], 0)?;
            probe(g, y, 16)
        }),
        op("reshape", vec![a3.clone()], |g, v| {
            let y = g.reshape(v[0], &[12, 5])?;
            probe(g, y, 17)
        }),
        op("concat", vec![a2.clone(), b2.clone()], |g, v| {
            let y = g.concat(&[v[0], v[1]], 0)?;
            probe(g, y, 18)
        }),
        op("narrow", vec![a3], |g, v| {
            let y = g.narrow(v[0], 2, 1, 3)?;
            probe(g, y, 19)
        }),
        op("gather_cols", vec![a2.clone()], |g, v| {
            let y = g.gather_cols(v[0], &[4, 0, 4, 2, 1])?;
            probe(g, y, 20)
        }),
        op("weighted_gather_cols", vec![a2.clone()], |g, v| {
            let y = g.weighted_gather_cols(v[0], &[0, 3, 1, 1, 4, 2], &[0.2, 0.8, 0.5, 0.5, 0.9, 0.1], 2)?;
            probe(g, y, 21)
        }),
        op("cross_entropy", vec![a2.clone()], |g, v| g.cross_entropy(v[0], &[0, 3, 1, 2, 3])),
        op("cosine_error", vec![pred, normals], |g, v| g.cosine_error(v[0], v[1])),
        op("suppression", vec![support, cand], move |g, v| {
            let d = g.suppression(v[0], v[1], cos_t)?;
            probe(g, d, 22)
        }),
        op("l2_normalize_cols", vec![a2.clone()], |g, v| {
            let y = g.l2_normalize_cols(v[0])?;
            probe(g, y, 23)
        }),
        op("column_norm", vec![b2], |g, v| {
            let y = g.column_norm(v[0], 1e-5)?;
            probe(g, y, 24)
        }),
        op("dropout", vec![a2], |g, v| {
            // the same seed on every evaluation keeps the mask fixed
            let y = g.dropout(v[0], 0.4, true, &mut rng(25))?;
            probe(g, y, 26)
        }),
    ]
}

fn composite_targets() -> Vec<Target> {
    let (p, c, k) = (32, 8, 6);
    let coords = cloud(p, 40);
    let graph = knn(&coords, k, true).expect("small cloud");
    let mut r = rng(41);
    let feats = Tensor::randn([c, p], 1.0, &mut r);
    let mut targets = Vec::new();

    {
        let mut store = ParamStore::new();
        let mlp = MlpParams::new(
            &mut store,
            "mlp",
            MlpSpec { dims: &[c, c], hidden: Activation::LeakyRelu, last: Activation::LeakyRelu, norm: Norm::None, bias: true },
            &mut r,
        );
        let graph = graph.clone();
        targets.push(Target {
            name: "local_aggregate",
            leaves: with_params(&store, vec![feats.clone()]),
            relaxed: false,
            build: Box::new(move |g, v| {
                let (params, x) = v.split_at(v.len() - 1);
                let mut cx = Ctx::new(g, params, true, rng(0));
                let y = local_aggregate(&mut cx, x[0], &graph, &mlp, Pool::Avg)?;
                probe(cx.g, y, 30)
            }),
        });
    }
    {
        let mut store = ParamStore::new();
        let mlp = lpfa_params(&mut store, "lpfa", c, c, true, Norm::Batch, &mut r);
        let graph = graph.clone();
        targets.push(Target {
            name: "lpfa",
            leaves: with_params(&store, vec![feats.clone()]),
            relaxed: false,
            build: Box::new(move |g, v| {
                let (params, x) = v.split_at(v.len() - 1);
                let mut cx = Ctx::new(g, params, true, rng(0));
                let y = lpfa(&mut cx, x[0], &graph, &mlp)?;
                probe(cx.g, y, 31)
            }),
        });
    }
    {
        let mut store = ParamStore::new();
        let score = MlpParams::new(
            &mut store,
            "score",
            MlpSpec { dims: &[c, c], hidden: Activation::None, last: Activation::None, norm: Norm::None, bias: true },
            &mut r,
        );
        targets.push(Target {
            name: "attentive_pool",
            leaves: with_params(&store, vec![Tensor::randn([c, 5], 1.0, &mut r)]),
            relaxed: false,
            build: Box::new(move |g, v| {
                let (params, x) = v.split_at(v.len() - 1);
                let mut cx = Ctx::new(g, params, true, rng(0));
                let y = attentive_pool(&mut cx, x[0], &score)?;
                probe(cx.g, y, 32)
            }),
        });
    }
    {
        let mut store = ParamStore::new();
        let ca = CaParams::new(&mut store, "ca", c, 4, &mut r);
        let curves = Tensor::randn([c, 2, 4], 1.0, &mut r);
        targets.push(Target {
            name: "ca",
            leaves: with_params(&store, vec![feats.clone(), curves]),
            relaxed: false,
            build: Box::new(move |g, v| {
                let (params, x) = v.split_at(v.len() - 2);
                let mut cx = Ctx::new(g, params, true, rng(0));
                let y = curve_aggregate(&mut cx, x[0], x[1], &ca)?;
                probe(cx.g, y, 33)
            }),
        });
    }
    {
        let mut store = ParamStore::new();
        let policy = WalkPolicy::new(&mut store, "walk", c, PolicyKind::MomentumSuppression, 90f64.to_radians(), &mut r)
            .expect("valid angle");
        let graph = graph.clone();
        targets.push(Target {
            name: "walk",
            leaves: with_params(&store, vec![feats.clone()]),
            relaxed: true,
            build: Box::new(move |g, v| {
                let (params, x) = v.split_at(v.len() - 1);
                let mut cx = Ctx::new(g, params, true, rng(0));
                let set = group_curves(&mut cx, &policy, x[0], &graph, 2, 4)?;
                probe(cx.g, set.features, 34)
            }),
        });
    }
    {
        // two CIC blocks (curves in the first, downsampling in the second),
        // global max pool, linear classifier, cross-entropy
        let cfgs = [
            CicConfig {
                in_channels: 4,
                out_channels: c,
                downsample: None,
                neighbors: NeighborRule::Knn { k },
                curves: Some(CurveSpec { n: 2, l: 4, policy: PolicyKind::MomentumSuppression, theta_bar_deg: 90.0 }),
                rho: 4,
                residual: true,
                norm: Norm::None,
            },
            CicConfig {
                in_channels: c,
                out_channels: c,
                downsample: Some(p / 2),
                neighbors: NeighborRule::Knn { k },
                curves: None,
                rho: 4,
                residual: true,
                norm: Norm::None,
            },
        ];
        let mut store = ParamStore::new();
        let blocks: Vec<CicParams> = cfgs
            .iter()
            .enumerate()
            .map(|(i, cfg)| CicParams::new(&mut store, &format!("b{i}"), cfg, &mut r).expect("valid block"))
            .collect();
        let head = Linear::new(&mut store, "head", c, 3, true, &mut r);
        let input = Tensor::randn([4, p], 1.0, &mut r);
        targets.push(Target {
            name: "cic",
            leaves: with_params(&store, vec![input]),
            relaxed: true,
            build: Box::new(move |g, v| {
                let (params, x) = v.split_at(v.len() - 1);
                let mut cx = Ctx::new(g, params, true, rng(0));
                let (mut pts, mut f) = (coords.clone(), x[0]);
                for (cfg, b) in cfgs.iter().zip(&blocks) {
                    let out = cic_block(&mut cx, &pts, f, cfg, b)?;
                    (pts, f) = (out.coords, out.features);
                }
                let pooled = cx.g.max_axis(f, 1)?;
                let logits = head.forward(&mut cx, pooled)?;
                cx.g.cross_entropy(logits, &[1])
            }),
        });
    }
    targets
}

/// Names of every target, operators first.
pub fn target_names() -> Vec<&'static str> {
    operator_targets().iter().chain(&composite_targets()).map(|t| t.name).collect()
}

/// Runs the suite, restricted to `only` when given. Unknown names in
/// `only` are returned as the error value.
pub fn gradient_suite(only: Option<&[String]>) -> std::result::Result<Vec<TargetResult>, Vec<String>> {
    let mut targets = operator_targets();
    targets.extend(composite_targets());
    if let Some(names) = only {
        let unknown: Vec<String> = names.iter().filter(|n| !targets.iter().any(|t| t.name == n.as_str())).cloned().collect();
        if !unknown.is_empty() {
            return Err(unknown);
        }
        targets.retain(|t| names.iter().any(|n| n == t.name));
    }
    Ok(crate::par::map(&targets, run_target))
}

fn run_target(t: &Target) -> TargetResult {
    let opts = GradCheckOptions { eps: EPS, max_coords_per_leaf: 16, seed: 0, relaxed_selection: t.relaxed };
    match grad_check(&t.leaves, opts, |g, v| (t.build)(g, v)) {
        Ok(rep) => TargetResult {
            target: t.name.to_string(),
            max_rel_error: rep.max_rel_error,
            coords_checked: rep.coords_checked,
            passed: rep.max_rel_error < TOLERANCE,
            error: None,
        },
        Err(e) => TargetResult {
            target: t.name.to_string(),
            max_rel_error: f64::INFINITY,
            coords_checked: 0,
            passed: false,
            error: Some(e.to_string()),
        },
    }
}
