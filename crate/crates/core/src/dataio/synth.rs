//! Synthetic labelled shapes with analytic surface normals.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Split};
use crate::error::{arg_err, Error, Result};
use crate::geometry::{normalize_unit_sphere, Labels, Point, PointCloud};
use crate::par;

pub const TORUS_MAJOR: f64 = 0.7;
pub const TORUS_MINOR: f64 = 0.3;
pub const CYLINDER_RADIUS: f64 = 0.5;
pub const CYLINDER_HALF_HEIGHT: f64 = 0.75;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    Sphere,
    Cube,
    Torus,
    Cylinder,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [Self::Sphere, Self::Cube, Self::Torus, Self::Cylinder];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sphere => "sphere",
            Self::Cube => "cube",
            Self::Torus => "torus",
            Self::Cylinder => "cylinder",
        }
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument { op: "ShapeKind", detail: format!("unknown shape '{s}'") })
    }
}

/// One uniform surface sample with its outward unit normal.
pub fn sample_point<R: Rng + ?Sized>(kind: ShapeKind, rng: &mut R) -> (Point, Point) {
    match kind {
        ShapeKind::Sphere => {
            let z: f64 = rng.gen_range(-1.0..1.0);
            let phi = rng.gen_range(0.0..2.0 * PI);
            let s = (1.0 - z * z).sqrt();
            let p = [s * phi.cos(), s * phi.sin(), z];
            (p, p)
        }
        ShapeKind::Cube => {
            let face = rng.gen_range(0..6);
            let (axis, sign) = (face / 2, if face % 2 == 0 { 1.0 } else { -1.0 });
            let mut p: Point = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            p[axis] = sign;
            let mut n = [0.0; 3];
            n[axis] = sign;
            (p, n)
        }
        ShapeKind::Torus => loop {
            // the area element grows with R + r cos θ
            let theta = rng.gen_range(0.0..2.0 * PI);
            let accept = (TORUS_MAJOR + TORUS_MINOR * theta.cos()) / (TORUS_MAJOR + TORUS_MINOR);
            if rng.gen::<f64>() > accept {
                continue;
            }
            let phi = rng.gen_range(0.0..2.0 * PI);
            let ring = TORUS_MAJOR + TORUS_MINOR * theta.cos();
            let p = [ring * phi.cos(), ring * phi.sin(), TORUS_MINOR * theta.sin()];
            let n = [theta.cos() * phi.cos(), theta.cos() * phi.sin(), theta.sin()];
            break (p, n);
        },
        ShapeKind::Cylinder => {
            let (r, h) = (CYLINDER_RADIUS, CYLINDER_HALF_HEIGHT);
            let side = 2.0 * PI * r * 2.0 * h;
            let cap = PI * r * r;
            let u = rng.gen_range(0.0..side + 2.0 * cap);
            let phi = rng.gen_range(0.0..2.0 * PI);
            if u < side {
                let z = rng.gen_range(-h..h);
                ([r * phi.cos(), r * phi.sin(), z], [phi.cos(), phi.sin(), 0.0])
            } else {
                let rho = r * rng.gen::<f64>().sqrt();
                let sign = if u < side + cap { 1.0 } else { -1.0 };
                ([rho * phi.cos(), rho * phi.sin(), sign * h], [0.0, 0.0, sign])
            }
        }
    }
}

/// `p` surface samples of `kind` with normals, normalised to the unit sphere.
pub fn sample_shape<R: Rng + ?Sized>(kind: ShapeKind, p: usize, rng: &mut R) -> Result<PointCloud> {
    if p == 0 {
        return arg_err("sample_shape", "need at least one point");
    }
    let (pts, normals): (Vec<Point>, Vec<Point>) = (0..p).map(|_| sample_point(kind, rng)).unzip();
    // centring and uniform scaling leave normals unchanged
    let cloud = PointCloud::new(pts)?.with_normals(normals)?;
    Ok(normalize_unit_sphere(&cloud))
}

/// `per_class` clouds of every kind, labelled by position in `kinds`. Each
/// cloud draws from its own stream so the result does not depend on the
/// thread count.
pub fn synth_shapes(kinds: &[ShapeKind], per_class: usize, p: usize, seed: u64, split: Split) -> Result<Dataset> {
    if kinds.is_empty() || per_class == 0 {
        return arg_err("synth_shapes", "need at least one kind and one cloud per kind");
    }
    let jobs: Vec<(usize, usize)> = (0..kinds.len()).flat_map(|c| (0..per_class).map(move |i| (c, i))).collect();
    let split_stream = match split {
        Split::Train => 0u64,
        Split::Test => 1u64 << 40,
    };
    let clouds = par::map(&jobs, |&(c, i)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(split_stream + (c * per_class + i) as u64);
        sample_shape(kinds[c], p, &mut rng).map(|cl| cl.with_labels(Labels::Class(c)))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { clouds, split, classes: kinds.iter().map(|k| k.name().to_string()).collect() })
}
