//! Point clouds, synthetic target distributions and dataset I/O.

mod idx;
mod io;
mod quadrature;
mod target;

pub use idx::{load_idx, read_idx_images, read_idx_labels, IdxImages};
pub use io::{load_dataset, manifest_path, save_dataset, Manifest};
pub use quadrature::QuadratureConfig;
pub use target::{Capabilities, Posterior, SubspaceProfile, TargetSpec};

use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// `N` points in `R^d`, stored row-major, with the squared norms cached for
/// the kernel passes.
#[derive(Clone, Debug)]
pub struct Dataset {
    points: Vec<f64>,
    sq_norms: Vec<f64>,
    n: usize,
    d: usize,
    pub name: String,
    pub generator_params: Map<String, Value>,
    pub intrinsic_dim: Option<usize>,
    pub seed: Option<u64>,
    /// Set when the dataset was loaded without its JSON manifest.
    pub manifest_missing: bool,
}

impl Dataset {
    /// Builds a dataset from a row-major buffer of `n * d` coordinates.
    pub fn new(points: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("dimension must be at least 1".into()));
        }
        if points.is_empty() || points.len() % d != 0 {
            return Err(Error::Config(format!(
                "{} coordinates do not form a non-empty set of {d}-dimensional points",
                points.len()
            )));
        }
        if let Some(i) = points.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite coordinate in point {}", i / d)));
        }
        let n = points.len() / d;
        let sq_norms = points.chunks_exact(d).map(|p| p.iter().map(|v| v * v).sum()).collect();
        Ok(Dataset {
            points,
            sq_norms,
            n,
            d,
            name: String::new(),
            generator_params: Map::new(),
            intrinsic_dim: None,
            seed: None,
            manifest_missing: false,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Config("rows have different lengths".into()));
        }
        Dataset::new(rows.concat(), d)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn sq_norms(&self) -> &[f64] {
        &self.sq_norms
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.d)
    }

    /// First `n` points, keeping the metadata.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        let n = n.min(self.n);
        let mut ds = Dataset::new(self.points[..n * self.d].to_vec(), self.d)?;
        ds.copy_metadata(self);
        Ok(ds)
    }

    /// Applies `f` to every point (used for translations, rotations and
    /// rescalings in tests and in the spectral module).
    pub fn map_points(&self, mut f: impl FnMut(&[f64], &mut [f64])) -> Result<Self> {
        let mut out = vec![0.0; self.points.len()];
        for (src, dst) in self.points.chunks_exact(self.d).zip(out.chunks_exact_mut(self.d)) {
            f(src, dst);
        }
        let mut ds = Dataset::new(out, self.d)?;
        ds.copy_metadata(self);
        Ok(ds)
    }

    fn copy_metadata(&mut self, other: &Dataset) {
        self.name = other.name.clone();
        self.generator_params = other.generator_params.clone();
        self.intrinsic_dim = other.intrinsic_dim;
        self.seed = other.seed;
        self.manifest_missing = other.manifest_missing;
    }

    /// Arithmetic mean of the points.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for p in self.rows() {
            for (a, b) in m.iter_mut().zip(p) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.n as f64);
        m
    }

    /// Largest pairwise distance bound: twice the largest distance to the mean.
    pub fn diameter_bound(&self) -> f64 {
        let m = self.mean();
        2.0 * self
            .rows()
            .map(|p| p.iter().zip(&m).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}
