//! Fixed-dimension embedding vectors and cosine geometry.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{dot, norm, Scalar};

/// A non-empty vector of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<T>", into = "Vec<T>")]
#[serde(bound(
    serialize = "T: Scalar + Serialize",
    deserialize = "T: Scalar + Deserialize<'de>"
))]
pub struct EmbeddingVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> EmbeddingVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidVector("empty vector".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidVector(format!(
                "non-finite value at index {i}"
            )));
        }
        Ok(Self { values })
    }

    /// Zero vector of the given dimension (`dim` ≥ 1).
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "embedding dimension must be positive");
        Self {
            values: vec![T::zero(); dim],
        }
    }

    /// Wraps values known to be finite. Used on internal hot paths whose
    /// inputs were already validated.
    pub(crate) fn from_finite(values: Vec<T>) -> Self {
        debug_assert!(!values.is_empty() && values.iter().all(|v| v.is_finite()));
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    pub fn norm(&self) -> T {
        norm(&self.values)
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        check_dims(self.dim(), other.dim())?;
        Ok(dot(&self.values, &other.values))
    }

    pub fn cast<U: Scalar>(&self) -> EmbeddingVector<U> {
        EmbeddingVector {
            values: self.values.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

impl<T: Scalar> TryFrom<Vec<T>> for EmbeddingVector<T> {
    type Error = Error;

    fn try_from(values: Vec<T>) -> Result<Self> {
        Self::new(values)
    }
}

impl<T> From<EmbeddingVector<T>> for Vec<T> {
    fn from(v: EmbeddingVector<T>) -> Self {
        v.values
    }
}

/// Result of [`l2_normalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized<T> {
    pub vector: EmbeddingVector<T>,
    /// Input norm was at or below the degeneracy threshold; `vector` is the
    /// input, unchanged.
    pub degenerate: bool,
}

/// Scales `v` to unit Euclidean norm. Vectors with norm ≤ 1e-12 are
/// returned unchanged and flagged degenerate.
pub fn l2_normalize<T: Scalar>(v: &EmbeddingVector<T>) -> Normalized<T> {
    let (values, degenerate) = normalize_slice(v.as_slice());
    Normalized {
        vector: EmbeddingVector { values },
        degenerate,
    }
}

/// Checked variant of [`l2_normalize`] for raw values.
pub fn l2_normalize_values<T: Scalar>(values: &[T]) -> Result<Normalized<T>> {
    let v = EmbeddingVector::new(values.to_vec())?;
    Ok(l2_normalize(&v))
}

pub(crate) fn normalize_slice<T: Scalar>(v: &[T]) -> (Vec<T>, bool) {
    let n = norm(v);
    if n <= T::norm_epsilon() {
        (v.to_vec(), true)
    } else {
        (v.iter().map(|&x| x / n).collect(), false)
    }
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine_similarity<T: Scalar>(a: &EmbeddingVector<T>, b: &EmbeddingVector<T>) -> Result<T> {
    check_dims(a.dim(), b.dim())?;
    let (na, nb) = (a.norm(), b.norm());
    if na <= T::norm_epsilon() || nb <= T::norm_epsilon() {
        return Err(Error::DegenerateVector);
    }
    Ok(clamp_unit(dot(a.as_slice(), b.as_slice()) / (na * nb)))
}

pub(crate) fn clamp_unit<T: Scalar>(x: T) -> T {
    x.max(-T::one()).min(T::one())
}

pub(crate) fn check_dims(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::dim(expected, actual))
    }
}
