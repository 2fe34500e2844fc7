//! Random `k`-dimensional subspaces of `R^n` and samples of their images
//! under an entrywise map.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Stream};

/// Largest entry of `QᵀQ − I` accepted for a basis.
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-10;

/// Orthonormal basis `Q ∈ R^{n×k}` of a subspace `Z`.
#[derive(Clone, Debug, PartialEq)]
pub struct Subspace {
    basis: DMatrix<f64>,
    seed: u64,
}

/// Largest entry of `QᵀQ − I`.
pub fn orthonormality_defect(q: &DMatrix<f64>) -> f64 {
    let gram = q.tr_mul(q) - DMatrix::<f64>::identity(q.ncols(), q.ncols());
    gram.amax()
}

/// Orthonormalizes an `n × k` Gaussian draw.
pub fn random_subspace(n: usize, k: usize, seed: u64) -> Result<Subspace> {
    if k == 0 || k > n {
        return Err(Error::param("k", format!("need 1 ≤ k ≤ n, got k = {k}, n = {n}")));
    }
    let mut stream = Stream::new(seed);
    let draw = DMatrix::from_row_iterator(n, k, (0..n * k).map(|_| stream.gaussian()));
    let mut q = draw.qr().q();
    // A second pass restores orthonormality lost to cancellation.
    if orthonormality_defect(&q) > ORTHONORMAL_TOLERANCE {
        q = q.qr().q();
    }
    if orthonormality_defect(&q) > ORTHONORMAL_TOLERANCE {
        return Err(Error::param("seed", format!("draw {seed} did not orthonormalize")));
    }
    Ok(Subspace { basis: q, seed })
}

impl Subspace {
    /// Wraps an existing basis after checking orthonormality.
    pub fn from_basis(basis: DMatrix<f64>) -> Result<Self> {
        if basis.ncols() == 0 || basis.ncols() > basis.nrows() {
            return Err(Error::param("basis", "need 1 ≤ k ≤ n columns"));
        }
        let defect = orthonormality_defect(&basis);
        if defect > ORTHONORMAL_TOLERANCE {
            return Err(Error::param("basis", format!("columns are not orthonormal (defect {defect:e})")));
        }
        Ok(Subspace { basis, seed: 0 })
    }

    pub fn n(&self) -> usize {
        self.basis.nrows()
    }

    pub fn k(&self) -> usize {
        self.basis.ncols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// `Q z`.
    pub fn embed(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.basis * z
    }
}

/// `x = Qz` and `y = f(x)` entrywise.
pub fn image_point<A: Activation + ?Sized>(f: &A, space: &Subspace, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let x = space.embed(z);
    let y = x.map(|v| f.value(v));
    (x, y)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RadiusDistribution {
    /// `log r` uniform on `[ln min, ln max]`.
    LogUniform { min: f64, max: f64 },
    Fixed { r: f64 },
    /// `z ~ N(0, I_k)`.
    Gaussian,
}

/// How to draw points `z ∈ R^k`: a uniform direction times a radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    count: usize,
    radius: RadiusDistribution,
    seed: u64,
    /// Extra points at these exact radii, appended after the random ones.
    probe_radii: Vec<f64>,
}

impl SamplePlan {
    pub fn new(count: usize, radius: RadiusDistribution, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(Error::param("count", "a plan needs at least one sample"));
        }
        match radius {
            RadiusDistribution::LogUniform { min, max } if !(min > 0.0 && max >= min && max.is_finite()) => {
                return Err(Error::param("radius", format!("log-uniform range [{min}, {max}] is invalid")));
            }
            RadiusDistribution::Fixed { r } if !(r >= 0.0 && r.is_finite()) => {
                return Err(Error::param("radius", format!("fixed radius {r} is invalid")));
            }
            _ => {}
        }
        Ok(SamplePlan {
            count,
            radius,
            seed,
            probe_radii: Vec::new(),
        })
    }

    /// Radii spanning `[10⁻⁴·√n, 10²·√n]` log-uniformly.
    pub fn default_for(n: usize, count: usize, seed: u64) -> Result<Self> {
        let root = (n as f64).sqrt();
        Self::new(
            count,
            RadiusDistribution::LogUniform {
                min: 1e-4 * root,
                max: 1e2 * root,
            },
            seed,
        )
    }

    pub fn with_probes(mut self, radii: impl IntoIterator<Item = f64>) -> Result<Self> {
        for r in radii {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::param("probe_radii", format!("{r} is not a valid radius")));
            }
            self.probe_radii.push(r);
        }
        Ok(self)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn radius(&self) -> RadiusDistribution {
        self.radius
    }

    pub fn probe_radii(&self) -> &[f64] {
        &self.probe_radii
    }

    /// Random samples plus probes.
    pub fn len(&self) -> usize {
        self.count + self.probe_radii.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The `index`-th point, drawn from its own derived stream.
    pub fn point(&self, k: usize, index: usize) -> DVector<f64> {
        let mut s = Stream::new(derive_seed(self.seed, index as u64));
        if index >= self.count {
            let r = self.probe_radii[index - self.count];
            return DVector::from_vec(s.unit_vector(k)) * r;
        }
        match self.radius {
            RadiusDistribution::Gaussian => DVector::from_vec(s.gaussian_vec(k)),
            RadiusDistribution::Fixed { r } => DVector::from_vec(s.unit_vector(k)) * r,
            RadiusDistribution::LogUniform { min, max } => {
                let u = s.uniform();
                let r = (min.ln() + u * (max.ln() - min.ln())).exp();
                DVector::from_vec(s.unit_vector(k)) * r
            }
        }
    }

    /// All points as the columns of a `k × len` matrix.
    pub fn points(&self, k: usize) -> DMatrix<f64> {
        let cols: Vec<DVector<f64>> = (0..self.len()).into_par_iter().map(|i| self.point(k, i)).collect();
        DMatrix::from_columns(&cols)
    }
}

/// A batch of samples stored column-wise.
#[derive(Clone, Debug)]
pub struct ImageBatch {
    pub z: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

/// Every planned `(z, x = Qz, y = f(x))`, column `i` being sample `i`.
pub fn sample_images<A: Activation + ?Sized>(f: &A, space: &Subspace, plan: &SamplePlan) -> ImageBatch {
    let z = plan.points(space.k());
    let x = space.basis() * &z;
    let y = x.map(|v| f.value(v));
    ImageBatch { z, x, y }
}
