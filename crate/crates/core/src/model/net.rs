use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{CurveNetConfig, HeadSpec};
use crate::aggregate::{cic_block, downsample, lpfa, lpfa_params, CicParams};
use crate::autodiff::checkpoint::round_to_f32;
use crate::autodiff::{Activation, ConcatMlp, Ctx, Graph, Linear, MlpParams, MlpSpec, Norm, ParamStore, Tensor, Var};
use crate::error::{arg_err, Result};
use crate::geometry::{interpolation_weights, knn, Point, PointCloud};
use crate::walk::{group_curves, CurveSet, PolicyKind};

#[derive(Clone, Debug)]
enum Head {
    Classify { fc1: Linear, fc2: Linear },
    Pointwise { up: Vec<MlpParams>, out: MlpParams },
}

/// LPFA stem, CIC stack and task head over one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct CurveNet {
    pub config: CurveNetConfig,
    pub store: ParamStore,
    stem: ConcatMlp,
    blocks: Vec<CicParams>,
    head: Head,
}

/// Features at one resolution.
pub struct Level {
    pub coords: Vec<Point>,
    pub features: Var,
}

/// Per-resolution features and the curves every curve block grouped.
pub struct Trace {
    /// Stem output first, then one entry per block.
    pub levels: Vec<Level>,
    /// `(block index, curves)`; curve indices refer to that block's level.
    pub curves: Vec<(usize, CurveSet)>,
}

/// Curves drawn by a trained walk policy, see [`CurveNet::curve_probe`].
pub struct CurveProbe {
    /// Points of the level the curves live on.
    pub coords: Vec<Point>,
    pub curves: Vec<Vec<usize>>,
    /// Features the walk read, `C×P`.
    pub features: Tensor,
}

fn mlp(store: &mut ParamStore, name: &str, dims: &[usize], last: Activation, rng: &mut ChaCha8Rng) -> MlpParams {
    MlpParams::new(store, name, MlpSpec { dims, hidden: Activation::LeakyRelu, last, norm: Norm::None, bias: true }, rng)
}

impl CurveNet {
    pub fn new(config: CurveNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let stem = lpfa_params(&mut store, "stem", 3, config.stem_channels, true, config.stem_norm, &mut rng);
        let blocks = config
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| CicParams::new(&mut store, &format!("block{i}"), b, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let c = config.out_channels();
        let head = match config.head {
            HeadSpec::Classify { classes, hidden } => Head::Classify {
                fc1: Linear::new(&mut store, "head.fc1", 2 * c, hidden, true, &mut rng),
                fc2: Linear::new(&mut store, "head.fc2", hidden, classes, true, &mut rng),
            },
            HeadSpec::Pointwise { out_dims } => {
                // level widths: stem, then each block
                let widths: Vec<usize> =
                    std::iter::once(config.stem_channels).chain(config.blocks.iter().map(|b| b.out_channels)).collect();
                let mut up = Vec::new();
                let mut cur = c;
                for i in (0..widths.len() - 1).rev() {
                    up.push(mlp(
                        &mut store,
                        &format!("head.up{i}"),
                        &[cur + widths[i], widths[i]],
                        Activation::LeakyRelu,
                        &mut rng,
                    ));
                    cur = widths[i];
                }
                let out = mlp(&mut store, "head.out", &[cur, cur, out_dims], Activation::None, &mut rng);
                Head::Pointwise { up, out }
            }
        };
        // parameters live at checkpoint precision from the start
        round_to_f32(store.values_mut());
        Ok(Self { config, store, stem, blocks, head })
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn is_classifier(&self) -> bool {
        matches!(self.head, Head::Classify { .. })
    }

    fn stem(&self, cx: &mut Ctx, cloud: &PointCloud) -> Result<Var> {
        let coords = &cloud.coords;
        if coords.len() < 2 {
            return arg_err("forward", "a cloud needs at least two points");
        }
        let x = cx.g.constant(cloud.coords_tensor());
        let graph = knn(coords, self.config.stem_k.min(coords.len() - 1), true)?;
        lpfa(cx, x, &graph, &self.stem)
    }

    /// Stem and every CIC block.
    pub fn forward_features(&self, cx: &mut Ctx, cloud: &PointCloud) -> Result<Trace> {
        let f0 = self.stem(cx, cloud)?;
        let mut levels = vec![Level { coords: cloud.coords.clone(), features: f0 }];
        let mut curves = Vec::new();
        for (i, (cfg, params)) in self.config.blocks.iter().zip(&self.blocks).enumerate() {
            let prev = levels.last().expect("stem level");
            let out = cic_block(cx, &prev.coords, prev.features, cfg, params)?;
            if let Some(set) = out.curves {
                curves.push((i, set));
            }
            levels.push(Level { coords: out.coords, features: out.features });
        }
        Ok(Trace { levels, curves })
    }

    /// Eval-mode walk of the first curve block's policy over its own
    /// input features, on a `k`-NN graph of that level with `n` curves of
    /// `l` states. `policy` swaps the walk rule while keeping the weights.
    pub fn curve_probe(
        &self,
        cloud: &PointCloud,
        k: usize,
        n: usize,
        l: usize,
        policy: Option<PolicyKind>,
    ) -> Result<CurveProbe> {
        let Some(b) = self.blocks.iter().position(|p| p.walk.is_some()) else {
            return arg_err("curve_probe", "model has no curve block");
        };
        let mut g = Graph::new();
        let consts: Vec<Var> = self.store.values().iter().map(|t| g.constant(t.clone())).collect();
        let mut cx = Ctx::new(&mut g, &consts, false, ChaCha8Rng::seed_from_u64(0));
        let mut f = self.stem(&mut cx, cloud)?;
        let mut coords = cloud.coords.clone();
        for (cfg, params) in self.config.blocks.iter().zip(&self.blocks).take(b) {
            let out = cic_block(&mut cx, &coords, f, cfg, params)?;
            (coords, f) = (out.coords, out.features);
        }
        let (cfg, params) = (&self.config.blocks[b], &self.blocks[b]);
        let (coords, f) = downsample(&mut cx, &coords, f, cfg.downsample)?;
        let h = lpfa(&mut cx, f, &cfg.neighbors.build(&coords)?, &params.lpfa)?;
        let graph = knn(&coords, k, true)?;
        let mut walk = params.walk.clone().expect("curve block");
        if let Some(kind) = policy {
            walk.kind = kind;
        }
        let set = group_curves(&mut cx, &walk, h, &graph, n.min(coords.len()), l)?;
        Ok(CurveProbe { curves: set.curves(), features: cx.g.value(h).clone(), coords })
    }

    /// Class logits `classes×1`.
    pub fn forward_classify(&self, cx: &mut Ctx, cloud: &PointCloud) -> Result<Var> {
        let trace = self.forward_features(cx, cloud)?;
        self.classify_head(cx, &trace)
    }

    pub fn classify_head(&self, cx: &mut Ctx, trace: &Trace) -> Result<Var> {
        let Head::Classify { fc1, fc2 } = &self.head else {
            return arg_err("forward_classify", "model has a pointwise head");
        };
        let f = trace.levels.last().expect("levels").features;
        let mx = cx.g.max_axis(f, 1)?;
        let av = cx.g.mean_axis(f, 1)?;
        let pooled = cx.g.concat(&[mx, av], 0)?;
        let h = fc1.forward(cx, pooled)?;
        let h = cx.g.relu(h);
        let (p, training) = (self.config.dropout, cx.training);
        let h = cx.g.dropout(h, p, training, &mut cx.rng)?;
        fc2.forward(cx, h)
    }

    /// Unit-length per-point outputs `D×P`.
    pub fn forward_pointwise(&self, cx: &mut Ctx, cloud: &PointCloud) -> Result<Var> {
        let trace = self.forward_features(cx, cloud)?;
        self.pointwise_head(cx, &trace)
    }

    pub fn pointwise_head(&self, cx: &mut Ctx, trace: &Trace) -> Result<Var> {
        let Head::Pointwise { up, out } = &self.head else {
            return arg_err("forward_pointwise", "model has a classification head");
        };
        let deepest = trace.levels.last().expect("levels");
        let mut cur = deepest.features;
        let mut cur_coords: &[Point] = &deepest.coords;
        for (layer, skip) in up.iter().zip(trace.levels.iter().rev().skip(1)) {
            if cur_coords != skip.coords.as_slice() {
                let (idx, w, arity) = interpolation_weights(cur_coords, &skip.coords)?;
                cur = cx.g.weighted_gather_cols(cur, &idx, &w, arity)?;
            }
            let cat = cx.g.concat(&[cur, skip.features], 0)?;
            cur = layer.forward(cx, cat)?;
            cur_coords = &skip.coords;
        }
        let y = out.forward(cx, cur)?;
        cx.g.l2_normalize_cols(y)
    }
}
