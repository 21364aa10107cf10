//! Coordinate-space utilities: normalisation, augmentation, farthest point
//! sampling, neighbour graphs and inverse-distance interpolation.
//!
//! Every distance comparison breaks ties by the lower point index, so the
//! results are identical across platforms and thread counts.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{arg_err, Result};
use crate::par;

pub type Point = [f64; 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Labels {
    /// One class id for the whole cloud.
    Class(usize),
    /// One part id per point.
    PerPoint(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub coords: Vec<Point>,
    pub labels: Option<Labels>,
    pub normals: Option<Vec<Point>>,
}

impl PointCloud {
    pub fn new(coords: Vec<Point>) -> Result<Self> {
        if coords.is_empty() {
            return arg_err("PointCloud::new", "a cloud needs at least one point");
        }
        Ok(Self { coords, labels: None, normals: None })
    }

    pub fn with_normals(mut self, normals: Vec<Point>) -> Result<Self> {
        if normals.len() != self.coords.len() {
            return arg_err("PointCloud::with_normals", format!("{} normals for {} points", normals.len(), self.len()));
        }
        if let Some(i) = normals.iter().position(|n| (norm(*n) - 1.0).abs() > 1e-4) {
            return arg_err("PointCloud::with_normals", format!("normal {i} is not unit length"));
        }
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Labels) -> Self {
        self.labels = Some(labels);
        self
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn class(&self) -> Option<usize> {
        match self.labels {
            Some(Labels::Class(c)) => Some(c),
            _ => None,
        }
    }

    /// Coordinates as a `3×P` tensor.
    pub fn coords_tensor(&self) -> Tensor {
        points_tensor(&self.coords)
    }

    pub fn normals_tensor(&self) -> Option<Tensor> {
        self.normals.as_deref().map(points_tensor)
    }

    /// Sub-cloud at the given indices (labels and normals follow).
    pub fn select(&self, idx: &[usize]) -> Self {
        let labels = match &self.labels {
            Some(Labels::PerPoint(l)) => Some(Labels::PerPoint(idx.iter().map(|&i| l[i]).collect())),
            other => other.clone(),
        };
        Self {
            coords: idx.iter().map(|&i| self.coords[i]).collect(),
            labels,
            normals: self.normals.as_ref().map(|n| idx.iter().map(|&i| n[i]).collect()),
        }
    }
}

pub fn points_tensor(pts: &[Point]) -> Tensor {
    let p = pts.len();
    Tensor::from_fn([3, p], |i| pts[i % p][i / p])
}

pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: Point) -> f64 {
    dot(a, a).sqrt()
}

/// Squared distance, always evaluated in this exact order.
pub fn dist2(a: Point, b: Point) -> f64 {
    let (x, y, z) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    x * x + y * y + z * z
}

/// Per-point neighbour indices, `k` per row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborGraph {
    pub k: usize,
    pub indices: Vec<usize>,
    pub exclude_self: bool,
}

impl NeighborGraph {
    pub fn num_points(&self) -> usize {
        self.indices.len() / self.k
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }
}

// ---- normalisation and augmentation ---------------------------------------

/// Centres the cloud on its centroid and scales the farthest point to
/// radius 1. A cloud of identical points collapses to the origin.
pub fn normalize_unit_sphere(cloud: &PointCloud) -> PointCloud {
    let p = cloud.len() as f64;
    let mut c = [0.0; 3];
    for q in &cloud.coords {
        (0..3).for_each(|a| c[a] += q[a]);
    }
    c.iter_mut().for_each(|v| *v /= p);
    let radius = cloud.coords.iter().map(|&q| norm(sub(q, c))).fold(0.0, f64::max);
    let s = if radius > 0.0 { 1.0 / radius } else { 0.0 };
    let mut out = cloud.clone();
    out.coords = cloud.coords.iter().map(|&q| sub(q, c).map(|v| v * s)).collect();
    out
}

pub const AUG_SCALE: (f64, f64) = (0.66, 1.5);
pub const AUG_SHIFT: (f64, f64) = (-0.2, 0.2);

/// Per-axis scale followed by per-axis translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Augmentation {
    pub scale: [f64; 3],
    pub shift: [f64; 3],
}

impl Augmentation {
    pub const IDENTITY: Self = Self { scale: [1.0; 3], shift: [0.0; 3] };

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut a = Self::IDENTITY;
        for ax in 0..3 {
            a.scale[ax] = rng.gen_range(AUG_SCALE.0..AUG_SCALE.1);
        }
        for ax in 0..3 {
            a.shift[ax] = rng.gen_range(AUG_SHIFT.0..AUG_SHIFT.1);
        }
        a
    }

    /// Scale only, as used for test-time voting.
    pub fn sample_scale<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut a = Self::IDENTITY;
        for ax in 0..3 {
            a.scale[ax] = rng.gen_range(AUG_SCALE.0..AUG_SCALE.1);
        }
        a
    }

    /// Applies the transform. Normals go through the inverse transpose of
    /// the scale and are renormalised.
    pub fn apply(&self, cloud: &PointCloud) -> PointCloud {
        let mut out = cloud.clone();
        out.coords = cloud.coords.iter().map(|q| std::array::from_fn(|a| q[a] * self.scale[a] + self.shift[a])).collect();
        out.normals = cloud.normals.as_ref().map(|ns| {
            ns.iter()
                .map(|n| {
                    let m: Point = std::array::from_fn(|a| n[a] / self.scale[a]);
                    let l = norm(m);
                    m.map(|v| v / l)
                })
                .collect()
        });
        out
    }

    pub fn invert(&self, cloud: &PointCloud) -> PointCloud {
        let inv = Self { scale: self.scale.map(|s| 1.0 / s), shift: std::array::from_fn(|a| -self.shift[a] / self.scale[a]) };
        inv.apply(cloud)
    }
}

pub fn augment<R: Rng + ?Sized>(cloud: &PointCloud, rng: &mut R) -> PointCloud {
    Augmentation::sample(rng).apply(cloud)
}

// ---- farthest point sampling ----------------------------------------------

/// Greedy max-min subset of `m` indices starting at `seed_index`; ties go
/// to the lower index.
pub fn farthest_point_sample(coords: &[Point], m: usize, seed_index: usize) -> Result<Vec<usize>> {
    let p = coords.len();
    if m == 0 || m > p {
        return arg_err("farthest_point_sample", format!("m = {m} with {p} points"));
    }
    if seed_index >= p {
        return arg_err("farthest_point_sample", format!("seed {seed_index} with {p} points"));
    }
    let mut min_d = vec![f64::INFINITY; p];
    let mut chosen = Vec::with_capacity(m);
    let mut cur = seed_index;
    for _ in 0..m {
        chosen.push(cur);
        min_d[cur] = f64::NEG_INFINITY;
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, md) in min_d.iter_mut().enumerate() {
            if *md == f64::NEG_INFINITY {
                continue;
            }
            let d = dist2(coords[i], coords[cur]);
            if d < *md {
                *md = d;
            }
            if best == usize::MAX || *md > best_d {
                best = i;
                best_d = *md;
            }
        }
        cur = best;
    }
    Ok(chosen)
}

// ---- neighbour graphs -----------------------------------------------------

/// Uniform bucket grid over the bounding box.
struct Grid {
    origin: Point,
    cell: f64,
    dims: [usize; 3],
    start: Vec<usize>,
    items: Vec<usize>,
}

impl Grid {
    fn build(coords: &[Point], per_cell: f64) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for q in coords {
            for a in 0..3 {
                lo[a] = lo[a].min(q[a]);
                hi[a] = hi[a].max(q[a]);
            }
        }
        let ext = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
        let cells_per_axis = (coords.len() as f64 / per_cell).cbrt().floor().max(1.0);
        let cell = if ext > 0.0 { ext / cells_per_axis } else { 1.0 };
        let dims: [usize; 3] = std::array::from_fn(|a| (((hi[a] - lo[a]) / cell).floor() as usize + 1).min(1 << 10));
        let total = dims[0] * dims[1] * dims[2];
        let mut grid = Self { origin: lo, cell, dims, start: vec![0; total + 1], items: vec![0; coords.len()] };
        let ids: Vec<usize> = coords.iter().map(|&q| grid.flat(grid.cell_of(q))).collect();
        for &c in &ids {
            grid.start[c + 1] += 1;
        }
        for c in 0..total {
            grid.start[c + 1] += grid.start[c];
        }
        let mut fill = grid.start.clone();
        for (i, &c) in ids.iter().enumerate() {
            grid.items[fill[c]] = i;
            fill[c] += 1;
        }
        grid
    }

    fn cell_of(&self, q: Point) -> [usize; 3] {
        std::array::from_fn(|a| {
            let v = ((q[a] - self.origin[a]) / self.cell).floor();
            (v.max(0.0) as usize).min(self.dims[a] - 1)
        })
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[0] * self.dims[1] + c[1]) * self.dims[2] + c[2]
    }

    fn bucket(&self, c: [usize; 3]) -> &[usize] {
        let f = self.flat(c);
        &self.items[self.start[f]..self.start[f + 1]]
    }

    /// Lower bound on the distance from `q` to any point outside the block
    /// of cells within Chebyshev radius `r` of `c`; infinite when the block
    /// already covers the whole grid.
    fn outside_bound(&self, q: Point, c: [usize; 3], r: usize) -> f64 {
        let mut b = f64::INFINITY;
        for a in 0..3 {
            if c[a] > r {
                let lo = self.origin[a] + (c[a] - r) as f64 * self.cell;
                b = b.min(q[a] - lo);
            }
            if c[a] + r + 1 < self.dims[a] {
                let hi = self.origin[a] + (c[a] + r + 1) as f64 * self.cell;
                b = b.min(hi - q[a]);
            }
        }
        // Guard against floor() placing a boundary point one cell over.
        b - 1e-9 * self.cell
    }

    fn max_ring(&self) -> usize {
        *self.dims.iter().max().expect("3 dims")
    }
}

fn by_dist_then_index(a: &(f64, usize), b: &(f64, usize)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Exact `k` nearest neighbours of every point, ties broken by lower index.
pub fn knn(coords: &[Point], k: usize, exclude_self: bool) -> Result<NeighborGraph> {
    let p = coords.len();
    let avail = if exclude_self { p.saturating_sub(1) } else { p };
    if k == 0 || k > avail || (exclude_self && k >= p) {
        return arg_err("knn", format!("k = {k} with {p} points (exclude_self = {exclude_self})"));
    }
    let grid = Grid::build(coords, 4.0);
    let rows = par::map_range(p, |i| knn_row(&grid, coords, i, k, exclude_self));
    Ok(NeighborGraph { k, indices: rows.concat(), exclude_self })
}

fn knn_row(grid: &Grid, coords: &[Point], i: usize, k: usize, exclude_self: bool) -> Vec<usize> {
    let q = coords[i];
    let c = grid.cell_of(q);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(4 * k);
    for r in 0..=grid.max_ring() {
        visit_shell(grid, c, r, |j| {
            if !(exclude_self && j == i) {
                cand.push((dist2(q, coords[j]), j));
            }
        });
        if cand.len() >= k {
            cand.sort_unstable_by(by_dist_then_index);
            cand.truncate(k);
            let bound = grid.outside_bound(q, c, r);
            if bound == f64::INFINITY || (bound > 0.0 && cand[k - 1].0 < bound * bound) {
                break;
            }
        }
    }
    cand.iter().map(|&(_, j)| j).collect()
}

/// Calls `f` for every point in the cells at Chebyshev distance exactly `r`.
fn visit_shell(grid: &Grid, c: [usize; 3], r: usize, mut f: impl FnMut(usize)) {
    let r = r as isize;
    let range = |a: usize| {
        let lo = (c[a] as isize - r).max(0);
        let hi = (c[a] as isize + r).min(grid.dims[a] as isize - 1);
        lo..=hi
    };
    for x in range(0) {
        for y in range(1) {
            for z in range(2) {
                let cheb = (x - c[0] as isize).abs().max((y - c[1] as isize).abs()).max((z - c[2] as isize).abs());
                if cheb != r {
                    continue;
                }
                for &j in grid.bucket([x as usize, y as usize, z as usize]) {
                    f(j);
                }
            }
        }
    }
}

/// Neighbours within `radius`, nearest first, at most `k_max`; short rows
/// are padded by repeating their nearest entry. A row with nothing inside
/// the radius falls back to the nearest point overall.
pub fn ball_query_knn(coords: &[Point], radius: f64, k_max: usize, exclude_self: bool) -> Result<NeighborGraph> {
    let p = coords.len();
    if k_max == 0 || (exclude_self && p < 2) || radius < 0.0 {
        return arg_err("ball_query_knn", format!("radius {radius}, k_max {k_max}, {p} points"));
    }
    let r2 = radius * radius;
    let rows = par::map_range(p, |i| {
        let mut all: Vec<(f64, usize)> =
            (0..p).filter(|&j| !(exclude_self && j == i)).map(|j| (dist2(coords[i], coords[j]), j)).collect();
        all.sort_unstable_by(by_dist_then_index);
        let mut row: Vec<usize> = all.iter().take_while(|e| e.0 <= r2).take(k_max).map(|e| e.1).collect();
        if row.is_empty() {
            row.push(all[0].1);
        }
        let first = row[0];
        row.resize(k_max, first);
        row
    });
    Ok(NeighborGraph { k: k_max, indices: rows.concat(), exclude_self })
}

/// Largest distance from any point to its `k`-th nearest neighbour.
pub fn max_knn_radius(coords: &[Point], k: usize) -> Result<f64> {
    let g = knn(coords, k, true)?;
    Ok((0..coords.len()).map(|i| dist2(coords[i], coords[g.row(i)[k - 1]]).sqrt()).fold(0.0, f64::max))
}

// ---- interpolation --------------------------------------------------------

/// Inverse-distance weights over the (up to) three nearest sources of every
/// destination point. Returns `(index, weight, arity)` laid out row-major,
/// `arity` entries per destination. A destination that coincides with a
/// source copies it exactly.
pub fn interpolation_weights(src: &[Point], dst: &[Point]) -> Result<(Vec<usize>, Vec<f64>, usize)> {
    if src.is_empty() {
        return arg_err("interpolate_3nn", "no source points");
    }
    let arity = src.len().min(3);
    let rows = par::map(dst, |&q| {
        let mut d: Vec<(f64, usize)> = src.iter().enumerate().map(|(j, &s)| (dist2(q, s), j)).collect();
        d.sort_unstable_by(by_dist_then_index);
        d.truncate(arity);
        if d[0].0 == 0.0 {
            let mut w = vec![0.0; arity];
            w[0] = 1.0;
            return (d.iter().map(|e| e.1).collect::<Vec<_>>(), w);
        }
        let inv: Vec<f64> = d.iter().map(|e| 1.0 / e.0.sqrt()).collect();
        let s: f64 = inv.iter().sum();
        (d.iter().map(|e| e.1).collect(), inv.iter().map(|v| v / s).collect())
    });
    let mut idx = Vec::with_capacity(dst.len() * arity);
    let mut w = Vec::with_capacity(dst.len() * arity);
    for (i, ws) in rows {
        idx.extend(i);
        w.extend(ws);
    }
    Ok((idx, w, arity))
}

/// Upsamples `src_feats: C×S` defined at `src_coords` onto `dst_coords`.
pub fn interpolate_3nn(src_coords: &[Point], src_feats: &Tensor, dst_coords: &[Point]) -> Result<Tensor> {
    let (c, s) = src_feats.dims2()?;
    if s != src_coords.len() {
        return arg_err("interpolate_3nn", format!("{s} feature columns for {} points", src_coords.len()));
    }
    let (idx, w, arity) = interpolation_weights(src_coords, dst_coords)?;
    let d = dst_coords.len();
    Ok(Tensor::from_fn([c, d], |e| {
        let (r, m) = (e / d, e % d);
        (0..arity).map(|t| w[m * arity + t] * src_feats.at2(r, idx[m * arity + t])).sum()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(p: usize, seed: u64) -> Vec<Point> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        (0..p).map(|_| [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)]).collect()
    }

    /// Full sort of every other point by `(distance², index)`.
    fn knn_oracle(coords: &[Point], k: usize, exclude_self: bool) -> Vec<usize> {
        let mut out = Vec::new();
        for i in 0..coords.len() {
            let mut d: Vec<(f64, usize)> =
                (0..coords.len()).filter(|&j| !(exclude_self && j == i)).map(|j| (dist2(coords[i], coords[j]), j)).collect();
            d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            out.extend(d[..k].iter().map(|e| e.1));
        }
        out
    }

    #[test]
    fn normalize_cases() {
        let c = PointCloud::new(vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(normalize_unit_sphere(&c), c);
        let one = PointCloud::new(vec![[3.0, -2.0, 5.0]]).unwrap();
        assert_eq!(normalize_unit_sphere(&one).coords, vec![[0.0; 3]]);
    }

    #[test]
    fn normalize_random_cloud() {
        let pts: Vec<Point> = random_cloud(200, 1).iter().map(|p| [p[0] * 3.0 + 7.0, p[1] - 2.0, p[2] * 0.5]).collect();
        let n = normalize_unit_sphere(&PointCloud::new(pts).unwrap());
        let mut c = [0.0; 3];
        for q in &n.coords {
            (0..3).for_each(|a| c[a] += q[a] / 200.0);
        }
        assert!(norm(c) < 1e-6);
        let r = n.coords.iter().map(|&q| norm(q)).fold(0.0, f64::max);
        assert!((r - 1.0).abs() < 1e-12);
        let again = normalize_unit_sphere(&n);
        for (a, b) in again.coords.iter().zip(&n.coords) {
            assert!(norm(sub(*a, *b)) < 1e-6);
        }
    }

    #[test]
    fn augment_identity_ranges_and_inverse() {
        let cloud = PointCloud::new(random_cloud(50, 2)).unwrap();
        assert_eq!(Augmentation::IDENTITY.apply(&cloud), cloud);
        let mut r = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let a = Augmentation::sample(&mut r);
            assert!(a.scale.iter().all(|s| (0.66..=1.5).contains(s)));
            assert!(a.shift.iter().all(|s| (-0.2..=0.2).contains(s)));
        }
        let a = Augmentation::sample(&mut r);
        let back = a.invert(&a.apply(&cloud));
        for (x, y) in back.coords.iter().zip(&cloud.coords) {
            assert!(norm(sub(*x, *y)) <= 1e-6);
        }
    }

    #[test]
    fn augment_keeps_normals_perpendicular_to_surface() {
        // plane z = 0.3 x: normal (−0.3, 0, 1); tangent (1, 0, 0.3)
        let n = [-0.3, 0.0, 1.0].map(|v: f64| v / (1.09f64).sqrt());
        let cloud = PointCloud::new(vec![[0.0; 3]]).unwrap().with_normals(vec![n]).unwrap();
        let a = Augmentation { scale: [1.4, 0.7, 0.8], shift: [0.1, 0.0, -0.1] };
        let out = a.apply(&cloud);
        let t = [1.4, 0.0, 0.3 * 0.8];
        let n2 = out.normals.unwrap()[0];
        assert!(dot(n2, t).abs() < 1e-12);
        assert!((norm(n2) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fps_cases() {
        let pts = random_cloud(12, 4);
        assert_eq!(farthest_point_sample(&pts, 1, 0).unwrap(), vec![0]);
        let mut all = farthest_point_sample(&pts, 12, 0).unwrap();
        all.sort_unstable();
        assert_eq!(all, (0..12).collect::<Vec<_>>());
        let line = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [10.0, 0.0, 0.0]];
        assert_eq!(farthest_point_sample(&line, 3, 0).unwrap(), vec![0, 3, 2]);
        assert!(farthest_point_sample(&line, 5, 0).is_err());
    }

    #[test]
    fn fps_ties_go_to_lower_index() {
        let sym = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]];
        assert_eq!(farthest_point_sample(&sym, 2, 0).unwrap(), vec![0, 1]);
        let dup = vec![[0.0; 3]; 4];
        assert_eq!(farthest_point_sample(&dup, 4, 0).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn knn_line() {
        let pts = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]];
        let g = knn(&pts, 1, true).unwrap();
        assert_eq!(g.row(1), &[0]);
        assert_eq!(g.row(0), &[1]);
        assert_eq!(g.row(2), &[1]);
        assert!(knn(&pts, 3, true).is_err());
        assert!(knn(&pts, 0, true).is_err());
    }

    #[test]
    fn knn_matches_brute_force() {
        for (p, k, seed) in [(256, 20, 5), (1024, 20, 6), (64, 8, 7), (21, 20, 8)] {
            let pts = random_cloud(p, seed);
            assert_eq!(knn(&pts, k, true).unwrap().indices, knn_oracle(&pts, k, true));
            assert_eq!(knn(&pts, k, false).unwrap().indices, knn_oracle(&pts, k, false));
        }
    }

    #[test]
    fn knn_exact_with_ties_and_flat_clouds() {
        // integer lattice: many equal distances
        let mut pts = Vec::new();
        for x in 0..6 {
            for y in 0..6 {
                for z in 0..3 {
                    pts.push([x as f64, y as f64, z as f64]);
                }
            }
        }
        assert_eq!(knn(&pts, 10, true).unwrap().indices, knn_oracle(&pts, 10, true));
        // a planar cloud and a clustered one
        let plane: Vec<Point> = random_cloud(300, 9).iter().map(|p| [p[0], p[1], 0.0]).collect();
        assert_eq!(knn(&plane, 12, true).unwrap().indices, knn_oracle(&plane, 12, true));
        let mut clustered = random_cloud(200, 10).iter().map(|p| p.map(|v| v * 1e-3)).collect::<Vec<_>>();
        clustered.extend(random_cloud(50, 11).iter().map(|p| p.map(|v| v + 5.0)));
        assert_eq!(knn(&clustered, 16, true).unwrap().indices, knn_oracle(&clustered, 16, true));
    }

    #[test]
    fn ball_query_cases() {
        let pts = vec![[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [1.0, 0.0, 0.0], [0.15, 0.0, 0.0]];
        let g = ball_query_knn(&pts, 0.0, 3, false).unwrap();
        for i in 0..4 {
            assert_eq!(g.row(i), &[i, i, i]);
        }
        let g = ball_query_knn(&pts, 0.0, 2, true).unwrap();
        assert_eq!(g.row(0), &[1, 1]);
        assert_eq!(g.row(2), &[3, 3]);
        let g = ball_query_knn(&pts, 0.2, 32, true).unwrap();
        assert_eq!(g.k, 32);
        assert_eq!(&g.row(0)[..3], &[1, 3, 1]);
    }

    #[test]
    fn ball_query_matches_filter_oracle() {
        let pts = random_cloud(128, 12);
        let (radius, cap) = (0.35, 32);
        let g = ball_query_knn(&pts, radius, cap, true).unwrap();
        let sorted = knn_oracle(&pts, 127, true);
        for i in 0..pts.len() {
            let inside: Vec<usize> = sorted[i * 127..(i + 1) * 127]
                .iter()
                .copied()
                .filter(|&j| dist2(pts[i], pts[j]) <= radius * radius)
                .take(cap)
                .collect();
            let nearest = if inside.is_empty() { sorted[i * 127] } else { inside[0] };
            let mut expect = if inside.is_empty() { vec![nearest] } else { inside };
            expect.resize(cap, nearest);
            assert_eq!(g.row(i), expect.as_slice());
        }
    }

    #[test]
    fn interpolation_cases() {
        let src = vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [5.0, 5.0, 5.0]];
        let feats = Tensor::new([2, 4], vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.5, 0.25, 9.0]).unwrap();
        let out = interpolate_3nn(&src, &feats, &[[0.0, 1.0, 0.0], [0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(out.column(0), vec![2.0, 0.5]);
        let mean = out.column(1);
        assert!((mean[0] - 2.0).abs() < 1e-15 && (mean[1] + 0.25 / 3.0).abs() < 1e-15);
        // fewer than three sources
        let out = interpolate_3nn(&src[..2], &Tensor::new([1, 2], vec![1.0, 3.0]).unwrap(), &[[0.0; 3]]).unwrap();
        assert!((out.data()[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn interpolation_matches_formula() {
        let src = random_cloud(40, 13);
        let dst = random_cloud(25, 14);
        let feats = Tensor::randn([3, 40], 1.0, &mut ChaCha8Rng::seed_from_u64(15));
        let out = interpolate_3nn(&src, &feats, &dst).unwrap();
        let order = |q: Point| {
            let mut d: Vec<(f64, usize)> = src.iter().enumerate().map(|(j, &s)| (norm(sub(q, s)), j)).collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            d
        };
        for (m, &q) in dst.iter().enumerate() {
            let d = order(q);
            let z: f64 = d[..3].iter().map(|e| 1.0 / e.0).sum();
            for c in 0..3 {
                let v: f64 = d[..3].iter().map(|e| feats.at2(c, e.1) / e.0).sum::<f64>() / z;
                assert!((out.at2(c, m) - v).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn knn_equals_oracle(seed in 0u64..1000, p in 2usize..120, k in 1usize..24) {
            let pts = random_cloud(p, seed);
            let k = k.min(p - 1);
            prop_assert_eq!(knn(&pts, k, true).unwrap().indices, knn_oracle(&pts, k, true));
        }

        #[test]
        fn fps_never_repeats(seed in 0u64..1000, p in 1usize..60) {
            let pts = random_cloud(p, seed);
            let mut s = farthest_point_sample(&pts, p, 0).unwrap();
            s.sort_unstable();
            s.dedup();
            prop_assert_eq!(s.len(), p);
        }
    }
}
