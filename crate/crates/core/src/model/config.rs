use serde::{Deserialize, Serialize};

use crate::aggregate::{CicConfig, CurveSpec, NeighborRule, DEFAULT_BOTTLENECK};
use crate::autodiff::Norm;
use crate::error::{arg_err, Result};
use crate::walk::PolicyKind;

pub const DEFAULT_K: usize = 20;
pub const DEFAULT_THETA_BAR_DEG: f64 = 90.0;
pub const DEFAULT_DROPOUT: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "task")]
pub enum HeadSpec {
    /// Global max+avg pool, FC, dropout, FC.
    Classify { classes: usize, hidden: usize },
    /// Per-point outputs, unit-normalised.
    Pointwise { out_dims: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveNetConfig {
    /// Width of the LPFA stem on raw coordinates.
    pub stem_channels: usize,
    pub stem_k: usize,
    /// Normalisation in the stem.
    pub stem_norm: Norm,
    pub blocks: Vec<CicConfig>,
    /// Blocks per group; curve placement flags address groups (1-based).
    pub blocks_per_group: usize,
    pub head: HeadSpec,
    pub dropout: f64,
}

fn block(in_channels: usize, out_channels: usize, downsample: Option<usize>, k: usize, curves: Option<CurveSpec>) -> CicConfig {
    CicConfig {
        in_channels,
        out_channels,
        downsample,
        neighbors: NeighborRule::Knn { k },
        curves,
        rho: DEFAULT_BOTTLENECK,
        residual: true,
        norm: Norm::None,
    }
}

pub fn curve_spec(n: usize, l: usize) -> CurveSpec {
    CurveSpec { n, l, policy: PolicyKind::MomentumSuppression, theta_bar_deg: DEFAULT_THETA_BAR_DEG }
}

impl CurveNetConfig {
    /// Two single-block groups (64 and 128 channels); curves `n = l = 16`
    /// in group 1, group 2 downsampled to a quarter of the points.
    pub fn desk(head: HeadSpec, points: usize) -> Self {
        Self::two_group(head, points, [32, 64, 128], DEFAULT_K, curve_spec(16, 16))
    }

    /// Smaller two-group network for the toy experiments.
    pub fn toy(head: HeadSpec, points: usize) -> Self {
        Self::two_group(head, points, [16, 32, 64], 10, curve_spec(8, 8))
    }

    fn two_group(head: HeadSpec, points: usize, ch: [usize; 3], k: usize, curves: CurveSpec) -> Self {
        Self {
            stem_channels: ch[0],
            stem_k: k,
            stem_norm: Norm::None,
            blocks: vec![block(ch[0], ch[1], None, k, Some(curves)), block(ch[1], ch[2], Some((points / 4).max(1)), k, None)],
            blocks_per_group: 1,
            head,
            dropout: DEFAULT_DROPOUT,
        }
    }

    /// Eight blocks in four groups of two, curves in groups 1 and 2.
    pub fn full(head: HeadSpec, points: usize) -> Self {
        let widths = [64, 128, 256, 512];
        let mut blocks = Vec::new();
        let mut in_ch = 32;
        for (g, &w) in widths.iter().enumerate() {
            let m = (points >> (2 * g)).max(1);
            let curves = (g < 2).then(|| curve_spec(if g == 0 { 100 } else { 64 }.min(m), 5));
            blocks.push(block(in_ch, w, (g > 0).then_some(m), DEFAULT_K, curves));
            blocks.push(block(w, w, None, DEFAULT_K, curves));
            in_ch = w;
        }
        Self {
            stem_channels: 32,
            stem_k: DEFAULT_K,
            stem_norm: Norm::None,
            blocks,
            blocks_per_group: 2,
            head,
            dropout: DEFAULT_DROPOUT,
        }
    }

    pub fn num_groups(&self) -> usize {
        self.blocks.len().div_ceil(self.blocks_per_group.max(1))
    }

    /// Replaces the curve spec of every block: `spec` in the listed groups
    /// (1-based), none elsewhere.
    pub fn place_curves(&mut self, spec: Option<CurveSpec>, groups: &[usize]) {
        let per = self.blocks_per_group.max(1);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.curves = spec.filter(|_| groups.contains(&(i / per + 1)));
        }
    }

    /// Sets the normalisation of the stem and every block.
    pub fn with_norm(mut self, norm: Norm) -> Self {
        self.stem_norm = norm;
        self.blocks.iter_mut().for_each(|b| b.norm = norm);
        self
    }

    pub fn without_curves(mut self) -> Self {
        self.place_curves(None, &[]);
        self
    }

    pub fn set_policy(&mut self, policy: PolicyKind, theta_bar_deg: f64) {
        for b in &mut self.blocks {
            if let Some(c) = &mut b.curves {
                c.policy = policy;
                c.theta_bar_deg = theta_bar_deg;
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return arg_err("CurveNetConfig", "at least one block is required");
        }
        if self.stem_channels == 0 || self.stem_k == 0 {
            return arg_err("CurveNetConfig", "stem width and k must be positive");
        }
        let mut ch = self.stem_channels;
        for (i, b) in self.blocks.iter().enumerate() {
            b.validate()?;
            if b.in_channels != ch {
                return arg_err("CurveNetConfig", format!("block {i} takes {} channels, previous gives {ch}", b.in_channels));
            }
            ch = b.out_channels;
        }
        match self.head {
            HeadSpec::Classify { classes, hidden } if classes < 1 || hidden < 1 => {
                arg_err("CurveNetConfig", "classifier needs classes and hidden width")
            }
            HeadSpec::Pointwise { out_dims: 0 } => arg_err("CurveNetConfig", "pointwise head needs outputs"),
            _ if !(0.0..1.0).contains(&self.dropout) => arg_err("CurveNetConfig", "dropout must be in [0, 1)"),
            _ => Ok(()),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.blocks.last().map_or(self.stem_channels, |b| b.out_channels)
    }
}
