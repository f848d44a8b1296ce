//! Embedding vectors, class labels and the distance functions used everywhere
//! else in the crate.
//!
//! Vectors are stored and computed in `f64`. Values read from 32-bit sources
//! widen exactly, so nothing is lost on ingestion.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// Norms at or below this are treated as zero.
pub const ZERO_NORM_EPS: f64 = 1e-12;

/// Fixed-dimension feature vector produced by a backbone model.
///
/// Construction guarantees `dim >= 1` and finite components. A zero vector is
/// representable; the operations that need a direction reject it.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(try_from = "Vec<f64>", into = "Vec<f64>")
)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidVector("no components".into()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidVector(alloc::format!(
                "component {pos} is not finite"
            )));
        }
        Ok(Self(values))
    }

    pub fn from_f32(values: &[f32]) -> Result<Self> {
        Self::new(values.iter().map(|&v| f64::from(v)).collect())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm_squared(&self) -> f64 {
        dot(&self.0, &self.0)
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.norm_squared())
    }

    pub fn is_zero(&self) -> bool {
        self.norm() <= ZERO_NORM_EPS
    }

    /// Multiplies every component by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|v| v * factor).collect())
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

/// Canonical class index. Ordering of classes everywhere is ascending id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(transparent)
)]
pub struct ClassId(pub u32);

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassLabel {
    pub id: ClassId,
    pub name: String,
}

impl ClassLabel {
    pub fn new(id: u32, name: impl Into<String>) -> Self {
        Self {
            id: ClassId(id),
            name: name.into(),
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.name, self.id)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Cosine distance from precomputed squared norms.
///
/// `u == v` yields exactly `0.0`: the dot product and the squared norm are the
/// same sum, and `sqrt(x * x) == x` under round-to-nearest.
#[inline]
pub(crate) fn cosine_distance_raw(u: &[f64], u_norm_sq: f64, v: &[f64], v_norm_sq: f64) -> f64 {
    let cos = dot(u, v) / libm::sqrt(u_norm_sq * v_norm_sq);
    (1.0 - cos).clamp(0.0, 2.0)
}

pub(crate) fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// Returns the norm squared, or `ZeroVector` if the norm is at or below the threshold.
pub(crate) fn nonzero_norm_sq(v: &EmbeddingVector) -> Result<f64> {
    let n2 = v.norm_squared();
    if libm::sqrt(n2) <= ZERO_NORM_EPS {
        Err(Error::ZeroVector)
    } else {
        Ok(n2)
    }
}

/// `1 - u·v / (‖u‖‖v‖)`, in `[0, 2]`.
pub fn cosine_distance(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64> {
    check_dims(u.dim(), v.dim())?;
    let nu = nonzero_norm_sq(u)?;
    let nv = nonzero_norm_sq(v)?;
    Ok(cosine_distance_raw(u.as_slice(), nu, v.as_slice(), nv))
}

pub fn l1_distance(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64> {
    check_dims(u.dim(), v.dim())?;
    Ok(u
        .as_slice()
        .iter()
        .zip(v.as_slice())
        .map(|(a, b)| libm::fabs(a - b))
        .sum())
}

pub fn normalize(v: &EmbeddingVector) -> Result<EmbeddingVector> {
    let norm = libm::sqrt(nonzero_norm_sq(v)?);
    EmbeddingVector::new(v.as_slice().iter().map(|x| x / norm).collect())
}

/// Component-wise arithmetic mean.
pub fn mean(vs: &[EmbeddingVector]) -> Result<EmbeddingVector> {
    let first = vs
        .first()
        .ok_or_else(|| Error::EmptyInput("mean of zero vectors".into()))?;
    let mut acc = vec![0.0; first.dim()];
    for v in vs {
        check_dims(first.dim(), v.dim())?;
        for (a, x) in acc.iter_mut().zip(v.as_slice()) {
            *a += x;
        }
    }
    let n = vs.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    EmbeddingVector::new(acc)
}
