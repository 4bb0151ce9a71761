//! Samples, datasets, and per-class bookkeeping.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vector::EmbeddingVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainTag {
    Source,
    Target,
}

impl DomainTag {
    pub fn as_u8(self) -> u8 {
        match self {
            DomainTag::Source => 0,
            DomainTag::Target => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(DomainTag::Source),
            1 => Some(DomainTag::Target),
            _ => None,
        }
    }
}

impl fmt::Display for DomainTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DomainTag::Source => "source",
            DomainTag::Target => "target",
        })
    }
}

/// Frequency group of a class, decided by its target-domain training count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassGroup {
    Head,
    Medium,
    Tail,
}

impl ClassGroup {
    pub const ALL: [ClassGroup; 3] = [ClassGroup::Head, ClassGroup::Medium, ClassGroup::Tail];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ClassGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassGroup::Head => "head",
            ClassGroup::Medium => "medium",
            ClassGroup::Tail => "tail",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub id: u64,
    pub label: usize,
    pub domain: DomainTag,
    /// Raw image feature, before projection.
    pub image_feature: EmbeddingVector<T>,
    pub title_feature: EmbeddingVector<T>,
    pub ingredient_features: Vec<EmbeddingVector<T>>,
}

/// Per-class sample counts, split by domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

impl ClassCounts {
    pub fn domain(&self, domain: DomainTag) -> &[usize] {
        match domain {
            DomainTag::Source => &self.source,
            DomainTag::Target => &self.target,
        }
    }

    pub fn combined(&self) -> Vec<usize> {
        self.source
            .iter()
            .zip(&self.target)
            .map(|(a, b)| a + b)
            .collect()
    }
}

/// A validated collection of samples.
///
/// Construction checks labels, feature dimensions, and id uniqueness, and
/// derives the per-class, per-domain counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    samples: Vec<Sample<T>>,
    num_classes: usize,
    feature_dim: usize,
    text_dim: usize,
    class_counts: ClassCounts,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(
        samples: Vec<Sample<T>>,
        num_classes: usize,
        feature_dim: usize,
        text_dim: usize,
    ) -> Result<Self> {
        if num_classes == 0 || feature_dim == 0 || text_dim == 0 {
            return Err(Error::InvalidInput(
                "num_classes, feature_dim and text_dim must be positive".into(),
            ));
        }
        let mut counts = ClassCounts {
            source: vec![0; num_classes],
            target: vec![0; num_classes],
        };
        let mut ids = HashSet::with_capacity(samples.len());
        for s in &samples {
            if s.label >= num_classes {
                return Err(Error::InvalidLabel {
                    label: s.label,
                    num_classes,
                });
            }
            if s.image_feature.dim() != feature_dim {
                return Err(Error::dim(feature_dim, s.image_feature.dim()));
            }
            if s.title_feature.dim() != text_dim {
                return Err(Error::dim(text_dim, s.title_feature.dim()));
            }
            if let Some(bad) = s.ingredient_features.iter().find(|v| v.dim() != text_dim) {
                return Err(Error::dim(text_dim, bad.dim()));
            }
            if !ids.insert(s.id) {
                return Err(Error::InvalidInput(format!("duplicate sample id {}", s.id)));
            }
            match s.domain {
                DomainTag::Source => counts.source[s.label] += 1,
                DomainTag::Target => counts.target[s.label] += 1,
            }
        }
        Ok(Self {
            samples,
            num_classes,
            feature_dim,
            text_dim,
            class_counts: counts,
        })
    }

    pub fn samples(&self) -> &[Sample<T>] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample<T>> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn text_dim(&self) -> usize {
        self.text_dim
    }

    pub fn class_counts(&self) -> &ClassCounts {
        &self.class_counts
    }

    /// Number of samples of each domain.
    pub fn domain_size(&self, domain: DomainTag) -> usize {
        self.class_counts.domain(domain).iter().sum()
    }

    /// Largest ingredient list length over all samples.
    pub fn max_ingredients(&self) -> usize {
        self.samples
            .iter()
            .map(|s| s.ingredient_features.len())
            .max()
            .unwrap_or(0)
    }

    /// Same samples with every value rounded through `f32`.
    pub fn quantized_f32(&self) -> Self {
        let q = |v: &EmbeddingVector<T>| {
            EmbeddingVector::from_finite(
                v.as_slice()
                    .iter()
                    .map(|x| T::lit(x.as_f64() as f32 as f64))
                    .collect(),
            )
        };
        let samples = self
            .samples
            .iter()
            .map(|s| Sample {
                id: s.id,
                label: s.label,
                domain: s.domain,
                image_feature: q(&s.image_feature),
                title_feature: q(&s.title_feature),
                ingredient_features: s.ingredient_features.iter().map(q).collect(),
            })
            .collect();
        Self {
            samples,
            ..self.clone()
        }
    }

    /// Same samples in another precision. Fails if a value does not fit.
    pub fn cast<U: Scalar>(&self) -> Result<Dataset<U>> {
        let c = |v: &EmbeddingVector<T>| {
            EmbeddingVector::new(v.as_slice().iter().map(|x| U::lit(x.as_f64())).collect())
        };
        let samples = self
            .samples
            .iter()
            .map(|s| {
                Ok(Sample {
                    id: s.id,
                    label: s.label,
                    domain: s.domain,
                    image_feature: c(&s.image_feature)?,
                    title_feature: c(&s.title_feature)?,
                    ingredient_features: s
                        .ingredient_features
                        .iter()
                        .map(c)
                        .collect::<Result<_>>()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(samples, self.num_classes, self.feature_dim, self.text_dim)
    }

    /// Checks that `other` can be used alongside this dataset.
    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.num_classes != other.num_classes {
            return Err(Error::InvalidInput(format!(
                "class count mismatch: {} vs {}",
                self.num_classes, other.num_classes
            )));
        }
        if self.feature_dim != other.feature_dim {
            return Err(Error::dim(self.feature_dim, other.feature_dim));
        }
        if self.text_dim != other.text_dim {
            return Err(Error::dim(self.text_dim, other.text_dim));
        }
        Ok(())
    }
}
