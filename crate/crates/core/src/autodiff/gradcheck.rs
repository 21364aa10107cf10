use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Coordinates probed per leaf; smaller leaves are checked exhaustively.
    pub max_coords_per_leaf: usize,
    pub seed: u64,
    /// Evaluate straight-through selections in relaxed (softmax) mode, see
    /// [`Graph::set_relaxed_selection`].
    pub relaxed_selection: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { eps: 1e-5, max_coords_per_leaf: 24, seed: 0, relaxed_selection: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |a − b| / max(1, |a|, |b|)` over the probed coordinates.
    pub max_rel_error: f64,
    pub worst_leaf: usize,
    pub worst_index: usize,
    pub coords_checked: usize,
}

/// Compares tape gradients of the scalar built by `build` against central
/// finite differences `(f(x + ε) − f(x − ε)) / 2ε`.
pub fn grad_check<F>(leaves: &[Tensor], opts: GradCheckOptions, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |leaves: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        g.set_relaxed_selection(opts.relaxed_selection);
        let vars: Vec<Var> = leaves.iter().map(|t| g.constant(t.clone())).collect();
        let loss = build(&mut g, &vars)?;
        scalar(&g, loss)
    };

    let mut g = Graph::new();
    g.set_relaxed_selection(opts.relaxed_selection);
    let vars: Vec<Var> = leaves.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    scalar(&g, loss)?;
    g.backward(loss)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work: Vec<Tensor> = leaves.to_vec();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst_leaf: 0, worst_index: 0, coords_checked: 0 };
    for (li, &v) in vars.iter().enumerate() {
        let analytic = g.grad(v).unwrap_or_else(|| Tensor::zeros(leaves[li].shape().to_vec()));
        let n = leaves[li].numel();
        let coords: Vec<usize> = if n <= opts.max_coords_per_leaf {
            (0..n).collect()
        } else {
            sample(&mut rng, n, opts.max_coords_per_leaf).into_vec()
        };
        for i in coords {
            let orig = work[li].data()[i];
            work[li].data_mut()[i] = orig + opts.eps;
            let fp = eval(&work)?;
            work[li].data_mut()[i] = orig - opts.eps;
            let fm = eval(&work)?;
            work[li].data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * opts.eps);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            report.coords_checked += 1;
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
                report.worst_leaf = li;
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

fn scalar(g: &Graph, v: Var) -> Result<f64> {
    let t = g.value(v);
    if t.numel() != 1 {
        return Err(Error::NonScalarLoss(t.shape().to_vec()));
    }
    Ok(t.data()[0])
}
