use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::off::parse_off;
use super::sample::sample_surface;
use crate::error::{Error, Result};
use crate::geometry::{normalize_unit_sphere, Labels, PointCloud};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Labelled clouds of one split. Each cloud carries its class id in
/// [`PointCloud::labels`].
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub clouds: Vec<PointCloud>,
    pub split: Split,
    pub classes: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.clouds.iter().map(|c| c.class().unwrap_or(0)).collect()
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    out.sort();
    Ok(out)
}

/// Loads `root/<class>/<split>/*.off`, classes in lexicographic order
/// (optionally restricted to `classes`), files in lexicographic order.
/// Every mesh is sampled with `p` points from a stream seeded by the hash
/// of its bytes, then normalised.
pub fn load_dataset(root: &Path, p: usize, split: Split, classes: Option<&[String]>) -> Result<Dataset> {
    if !root.is_dir() {
        return Err(Error::Dataset(format!("dataset root {} does not exist", root.display())));
    }
    let mut names: Vec<String> = sorted_entries(root)?
        .into_iter()
        .filter(|d| d.is_dir())
        .filter_map(|d| d.file_name().and_then(|n| n.to_str()).map(str::to_string))
        .collect();
    if let Some(filter) = classes {
        if filter.is_empty() {
            return Err(Error::Dataset("class filter is empty".into()));
        }
        if let Some(missing) = filter.iter().find(|f| !names.contains(f)) {
            return Err(Error::Dataset(format!("class '{missing}' not found under {}", root.display())));
        }
        names.retain(|n| filter.contains(n));
    }
    if names.is_empty() {
        return Err(Error::Dataset(format!("no class directories under {}", root.display())));
    }
    let mut jobs = Vec::new();
    for (label, name) in names.iter().enumerate() {
        let dir = root.join(name).join(split.dir_name());
        let files: Vec<PathBuf> = if dir.is_dir() {
            sorted_entries(&dir)?.into_iter().filter(|f| f.extension().is_some_and(|e| e.eq_ignore_ascii_case("off"))).collect()
        } else {
            Vec::new()
        };
        if files.is_empty() {
            return Err(Error::Dataset(format!("class '{name}' has no {} meshes", split.dir_name())));
        }
        jobs.extend(files.into_iter().map(|f| (label, f)));
    }
    let clouds = par::map(&jobs, |(label, path)| -> Result<PointCloud> {
        let bytes = std::fs::read(path)?;
        let mesh = parse_off(&bytes).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(&bytes));
        let cloud = sample_surface(&mesh, p, &mut rng)?;
        Ok(normalize_unit_sphere(&cloud).with_labels(Labels::Class(*label)))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { clouds, split, classes: names })
}
