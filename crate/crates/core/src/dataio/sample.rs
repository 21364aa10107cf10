use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use super::off::Mesh;
use crate::error::{arg_err, Result};
use crate::geometry::{Point, PointCloud};

/// One surface sample: source triangle and barycentric weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceSample {
    pub face: usize,
    pub bary: [f64; 3],
    pub point: Point,
}

/// Area-weighted uniform samples on a triangle mesh.
pub fn sample_surface_detailed<R: Rng + ?Sized>(mesh: &Mesh, p: usize, rng: &mut R) -> Result<Vec<SurfaceSample>> {
    if p == 0 {
        return arg_err("sample_surface", "need at least one sample");
    }
    let areas: Vec<f64> = (0..mesh.faces.len()).map(|f| mesh.triangle_area(f)).collect();
    let total: f64 = areas.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return arg_err("sample_surface", "mesh has no surface area");
    }
    let pick =
        WeightedIndex::new(&areas).map_err(|e| crate::Error::InvalidArgument { op: "sample_surface", detail: e.to_string() })?;
    Ok((0..p)
        .map(|_| {
            let face = pick.sample(rng);
            let (mut u, mut v): (f64, f64) = (rng.gen(), rng.gen());
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            let bary = [1.0 - u - v, u, v];
            let [a, b, c] = mesh.faces[face].map(|i| mesh.vertices[i]);
            let point = std::array::from_fn(|k| bary[0] * a[k] + bary[1] * b[k] + bary[2] * c[k]);
            SurfaceSample { face, bary, point }
        })
        .collect())
}

/// Area-weighted uniform surface sampling with face normals; the cloud is
/// not normalised.
pub fn sample_surface<R: Rng + ?Sized>(mesh: &Mesh, p: usize, rng: &mut R) -> Result<PointCloud> {
    let s = sample_surface_detailed(mesh, p, rng)?;
    let normals: Option<Vec<Point>> = s.iter().map(|s| mesh.face_normal(s.face)).collect();
    let cloud = PointCloud::new(s.into_iter().map(|s| s.point).collect())?;
    match normals {
        Some(n) => cloud.with_normals(n),
        None => Ok(cloud),
    }
}
