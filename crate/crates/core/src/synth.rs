//! Synthetic two-domain, long-tailed, fine-grained benchmark.
//!
//! Construction:
//!
//! * Classes are spread round-robin over `clusters` fine-grained clusters.
//!   Cluster centers are mutually orthogonal (when `clusters ≤ feature_dim`)
//!   and exactly `cluster_distance` apart; each class mean sits at distance
//!   `class_radius` from its cluster center. Classes of one cluster are
//!   therefore at most `2·class_radius` apart and at least
//!   `cluster_distance − 2·class_radius` from any other cluster's classes.
//! * Each class owns one title vector and an ingredient list made of the
//!   cluster's shared ingredients followed by its own unique ones. Ingredient
//!   vectors are independent random unit vectors. A title mixes a per-cluster
//!   random direction with a per-class one, so titles of cluster-mates have
//!   expected cosine `title_cluster_share`.
//! * Source training counts decay exponentially with class index; target
//!   counts are a seeded permutation of the source counts.
//! * Target image features go through one fixed affine map (offset plus
//!   mixing matrix), a covariate shift that leaves labels untouched.
//! * The target test split is class-balanced and generated on top of the
//!   long-tailed target training counts.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DomainTag, Sample};
use crate::error::{Error, Result};
use crate::rng::{SeededRng, Stream};
use crate::scalar::Scalar;
use crate::vector::EmbeddingVector;

/// Affine covariate shift applied to target image features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainShift {
    /// Norm of the offset added to every target image feature.
    pub offset: f64,
    /// Strength `s` of the mixing map `I + s·G/√d`, `G` standard Gaussian.
    pub mixing: f64,
}

impl DomainShift {
    pub const NONE: Self = Self {
        offset: 0.0,
        mixing: 0.0,
    };

    pub fn is_none(&self) -> bool {
        self.offset == 0.0 && self.mixing == 0.0
    }
}

/// Geometry and noise constants of the generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConstants {
    pub cluster_distance: f64,
    pub class_radius: f64,
    /// Per-coordinate standard deviation of image-feature noise.
    pub feature_noise: f64,
    pub title_jitter: f64,
    pub ingredient_jitter: f64,
    /// Expected cosine between the titles of two classes in one cluster.
    /// Titles of fine-grained siblings look alike; their unique ingredients
    /// tell them apart.
    pub title_cluster_share: f64,
    pub shared_ingredients: usize,
    pub unique_ingredients: usize,
}

impl Default for GeneratorConstants {
    fn default() -> Self {
        Self {
            cluster_distance: 6.0,
            class_radius: 1.2,
            feature_noise: 0.5,
            title_jitter: 0.05,
            ingredient_jitter: 0.05,
            title_cluster_share: 0.85,
            shared_ingredients: 3,
            unique_ingredients: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub num_classes: usize,
    pub clusters: usize,
    pub feature_dim: usize,
    pub text_dim: usize,
    /// Training count of the most frequent class, per domain.
    pub n_max: usize,
    pub imbalance_ratio: f64,
    /// Balanced target test samples per class.
    pub test_per_class: usize,
    pub domain_shift: DomainShift,
    pub label_noise_rate: f64,
    /// Probability that a sample carries the text of another class.
    pub text_error_rate: f64,
    pub constants: GeneratorConstants,
    /// Set from the experiment seed; not read from configuration files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            num_classes: 30,
            clusters: 3,
            feature_dim: 32,
            text_dim: 32,
            n_max: 200,
            imbalance_ratio: 100.0,
            test_per_class: 20,
            domain_shift: DomainShift {
                offset: 3.0,
                mixing: 0.5,
            },
            label_noise_rate: 0.0,
            text_error_rate: 0.05,
            constants: GeneratorConstants::default(),
            seed: 0,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !self.imbalance_ratio.is_finite() || self.imbalance_ratio < 1.0 {
            return bad(format!(
                "imbalance_ratio must be ≥ 1, got {}",
                self.imbalance_ratio
            ));
        }
        for (name, r) in [
            ("label_noise_rate", self.label_noise_rate),
            ("text_error_rate", self.text_error_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("{name} must be in [0, 1], got {r}"));
            }
        }
        if self.clusters < 1 || self.clusters > self.num_classes {
            return bad(format!(
                "need num_classes ≥ clusters ≥ 1, got {} classes and {} clusters",
                self.num_classes, self.clusters
            ));
        }
        if self.n_max < 1 || self.feature_dim < 1 || self.text_dim < 1 || self.test_per_class < 1 {
            return bad("n_max, feature_dim, text_dim and test_per_class must be positive".into());
        }
        let k = &self.constants;
        if k.unique_ingredients < 1 {
            return bad("every class needs at least one unique ingredient".into());
        }
        if k.shared_ingredients + k.unique_ingredients > u8::MAX as usize {
            return bad("at most 255 ingredients per class".into());
        }
        let nonneg = [
            k.cluster_distance,
            k.class_radius,
            k.feature_noise,
            k.title_jitter,
            k.ingredient_jitter,
            self.domain_shift.offset,
            self.domain_shift.mixing,
        ];
        if nonneg.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return bad("generator constants and shift must be finite and non-negative".into());
        }
        if !(0.0..1.0).contains(&k.title_cluster_share) {
            return bad("title_cluster_share must be in [0, 1)".into());
        }
        if self.clusters > 1
            && self.clusters <= self.feature_dim
            && k.cluster_distance <= 4.0 * k.class_radius
        {
            return bad(
                "cluster_distance must exceed 4·class_radius to keep clusters apart".into(),
            );
        }
        Ok(())
    }
}

/// Per-class generation recipe.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSpec<T> {
    pub class_mean: EmbeddingVector<T>,
    pub cluster_id: usize,
    pub title_vector: EmbeddingVector<T>,
    /// Cluster-shared ingredients first, then this class's unique ones.
    pub ingredient_vectors: Vec<EmbeddingVector<T>>,
}

/// Per-class counts decaying as `round(n_max · IR^(−r/(C−1)))` with rank `r`.
///
/// `permutation[r]` is the class placed at rank `r`. Counts are clipped
/// below at 1.
pub fn long_tailed_counts(
    num_classes: usize,
    n_max: usize,
    imbalance_ratio: f64,
    permutation: &[usize],
) -> Result<Vec<usize>> {
    if imbalance_ratio.is_nan() || imbalance_ratio < 1.0 {
        return Err(Error::InvalidConfig(format!(
            "imbalance_ratio must be ≥ 1, got {imbalance_ratio}"
        )));
    }
    if num_classes < 1 || n_max < 1 {
        return Err(Error::InvalidConfig(
            "num_classes and n_max must be positive".into(),
        ));
    }
    let mut seen = vec![false; num_classes];
    if permutation.len() != num_classes
        || permutation
            .iter()
            .any(|&c| c >= num_classes || std::mem::replace(&mut seen[c], true))
    {
        return Err(Error::InvalidConfig(
            "class ordering is not a permutation".into(),
        ));
    }
    let mut counts = vec![0; num_classes];
    for (rank, &class) in permutation.iter().enumerate() {
        counts[class] = if num_classes == 1 {
            n_max
        } else {
            let exponent = -(rank as f64) / (num_classes - 1) as f64;
            ((n_max as f64 * imbalance_ratio.powf(exponent)).round() as usize).max(1)
        };
    }
    Ok(counts)
}

/// `0, 1, …, n−1`
pub fn identity_order(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Seeded permutation of `counts`.
pub fn shuffle_target_distribution(counts: &[usize], seed: u64) -> Vec<usize> {
    let mut out = counts.to_vec();
    out.shuffle(&mut SeededRng::new(seed).stream(Stream::TargetShuffle));
    out
}

/// Largest count divided by smallest.
pub fn imbalance_ratio(counts: &[usize]) -> Result<f64> {
    let (Some(&max), Some(&min)) = (counts.iter().max(), counts.iter().min()) else {
        return Err(Error::InvalidInput("no counts".into()));
    };
    if min == 0 {
        return Err(Error::InvalidInput("counts must be ≥ 1".into()));
    }
    Ok(max as f64 / min as f64)
}

fn gaussian<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn random_unit<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let g = gaussian(rng, dim);
        let n = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return g.into_iter().map(|x| x / n).collect();
        }
    }
}

/// `count` unit vectors, mutually orthogonal while `count ≤ dim`.
fn spread_directions<R: Rng>(rng: &mut R, dim: usize, count: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut g = gaussian(rng, dim);
        if basis.len() < dim {
            for b in &basis {
                let p: f64 = g.iter().zip(b).map(|(x, y)| x * y).sum();
                g.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            basis.push(g.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

fn cast<T: Scalar>(v: Vec<f64>) -> EmbeddingVector<T> {
    EmbeddingVector::from_finite(v.into_iter().map(T::lit).collect())
}

/// Builds the per-class recipes. Class `c` belongs to cluster `c % clusters`.
pub fn make_class_specs<T: Scalar, R: Rng>(
    config: &BenchmarkConfig,
    rng: &mut R,
) -> Result<Vec<ClassSpec<T>>> {
    config.validate()?;
    let k = &config.constants;
    let centers: Vec<Vec<f64>> = spread_directions(rng, config.feature_dim, config.clusters)
        .into_iter()
        .map(|d| {
            d.into_iter()
                .map(|x| x * k.cluster_distance / std::f64::consts::SQRT_2)
                .collect()
        })
        .collect();
    let shared: Vec<Vec<Vec<f64>>> = (0..config.clusters)
        .map(|_| {
            (0..k.shared_ingredients)
                .map(|_| random_unit(rng, config.text_dim))
                .collect()
        })
        .collect();
    let cluster_titles: Vec<Vec<f64>> = (0..config.clusters)
        .map(|_| random_unit(rng, config.text_dim))
        .collect();
    let (w_cluster, w_class) = (
        k.title_cluster_share.sqrt(),
        (1.0 - k.title_cluster_share).sqrt(),
    );
    let specs = (0..config.num_classes)
        .map(|c| {
            let cluster_id = c % config.clusters;
            let offset = random_unit(rng, config.feature_dim);
            let mean = centers[cluster_id]
                .iter()
                .zip(&offset)
                .map(|(m, o)| m + k.class_radius * o)
                .collect();
            let own = random_unit(rng, config.text_dim);
            let mixed: Vec<f64> = cluster_titles[cluster_id]
                .iter()
                .zip(&own)
                .map(|(c, o)| w_cluster * c + w_class * o)
                .collect();
            let n = mixed.iter().map(|x| x * x).sum::<f64>().sqrt();
            let title = if n > 1e-12 {
                mixed.into_iter().map(|x| x / n).collect()
            } else {
                own
            };
            let mut ingredients: Vec<EmbeddingVector<T>> =
                shared[cluster_id].iter().cloned().map(cast).collect();
            ingredients
                .extend((0..k.unique_ingredients).map(|_| cast(random_unit(rng, config.text_dim))));
            ClassSpec {
                class_mean: cast(mean),
                cluster_id,
                title_vector: cast(title),
                ingredient_vectors: ingredients,
            }
        })
        .collect();
    Ok(specs)
}

/// The fixed target-domain transform `x ↦ A·x + offset` for a config.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftTransform {
    dim: usize,
    /// Row-major `dim × dim`.
    matrix: Vec<f64>,
    offset: Vec<f64>,
}

impl ShiftTransform {
    pub fn from_config(config: &BenchmarkConfig) -> Self {
        let dim = config.feature_dim;
        let mut rng = SeededRng::new(config.seed).stream(Stream::DomainShift);
        let direction = random_unit(&mut rng, dim);
        let g = gaussian(&mut rng, dim * dim);
        let s = config.domain_shift.mixing / (dim as f64).sqrt();
        let matrix = (0..dim * dim)
            .map(|i| if i / dim == i % dim { 1.0 } else { 0.0 } + s * g[i])
            .collect();
        let offset = direction
            .into_iter()
            .map(|x| x * config.domain_shift.offset)
            .collect();
        Self {
            dim,
            matrix,
            offset,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|r| {
                let row = &self.matrix[r * self.dim..(r + 1) * self.dim];
                row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.offset[r]
            })
            .collect()
    }
}

/// Emits `counts[c]` samples of every class `c` for one domain, with ids
/// starting at `first_id`.
pub fn synthesize_domain<T: Scalar, R: Rng>(
    specs: &[ClassSpec<T>],
    counts: &[usize],
    domain: DomainTag,
    config: &BenchmarkConfig,
    rng: &mut R,
    first_id: u64,
) -> Result<Dataset<T>> {
    if specs.len() != counts.len() {
        return Err(Error::InvalidInput(format!(
            "{} class specs but {} counts",
            specs.len(),
            counts.len()
        )));
    }
    let k = &config.constants;
    let num_classes = specs.len();
    let shift = (domain == DomainTag::Target && !config.domain_shift.is_none())
        .then(|| ShiftTransform::from_config(config));
    let jitter = |rng: &mut R, v: &EmbeddingVector<T>, sigma: f64| -> EmbeddingVector<T> {
        let noise = gaussian(rng, v.dim());
        EmbeddingVector::from_finite(
            v.as_slice()
                .iter()
                .zip(noise)
                .map(|(&x, n)| x + T::lit(sigma * n))
                .collect(),
        )
    };

    let mut samples = Vec::with_capacity(counts.iter().sum());
    let mut id = first_id;
    for (class, (spec, &count)) in specs.iter().zip(counts).enumerate() {
        for _ in 0..count {
            let noise = gaussian(rng, config.feature_dim);
            let raw: Vec<f64> = spec
                .class_mean
                .as_slice()
                .iter()
                .zip(noise)
                .map(|(m, n)| m.as_f64() + k.feature_noise * n)
                .collect();
            let image = match &shift {
                Some(t) => t.apply(&raw),
                None => raw,
            };

            let mut label = class;
            if num_classes > 1 && rng.random::<f64>() < config.label_noise_rate {
                label = other_class(rng, class, num_classes);
            }
            let mut text_class = class;
            if num_classes > 1 && rng.random::<f64>() < config.text_error_rate {
                text_class = other_class(rng, class, num_classes);
            }
            let text = &specs[text_class];
            let title = jitter(rng, &text.title_vector, k.title_jitter);
            let ingredients = text
                .ingredient_vectors
                .iter()
                .map(|v| jitter(rng, v, k.ingredient_jitter))
                .collect();

            samples.push(Sample {
                id,
                label,
                domain,
                image_feature: cast(image),
                title_feature: title,
                ingredient_features: ingredients,
            });
            id += 1;
        }
    }
    Dataset::new(samples, num_classes, config.feature_dim, config.text_dim)
}

fn other_class<R: Rng>(rng: &mut R, class: usize, num_classes: usize) -> usize {
    let pick = rng.random_range(0..num_classes - 1);
    if pick >= class {
        pick + 1
    } else {
        pick
    }
}

/// Moves `test_per_class` randomly chosen target samples of every class into
/// a test set; everything else stays in training. Sample order is preserved
/// within each output.
pub fn split_train_test<T: Scalar, R: Rng>(
    dataset: &Dataset<T>,
    test_per_class: usize,
    rng: &mut R,
) -> Result<(Dataset<T>, Dataset<T>)> {
    if test_per_class < 1 {
        return Err(Error::InvalidConfig("test_per_class must be ≥ 1".into()));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes()];
    for (i, s) in dataset.samples().iter().enumerate() {
        if s.domain == DomainTag::Target {
            by_class[s.label].push(i);
        }
    }
    let mut in_test = vec![false; dataset.len()];
    for (class, idx) in by_class.iter_mut().enumerate() {
        if idx.len() < test_per_class {
            return Err(Error::InvalidConfig(format!(
                "class {class} has {} target samples, {test_per_class} needed for the test split",
                idx.len()
            )));
        }
        idx.shuffle(rng);
        idx[..test_per_class]
            .iter()
            .for_each(|&i| in_test[i] = true);
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (s, t) in dataset.samples().iter().zip(in_test) {
        if t {
            test.push(s.clone())
        } else {
            train.push(s.clone())
        }
    }
    let (c, f, d) = (
        dataset.num_classes(),
        dataset.feature_dim(),
        dataset.text_dim(),
    );
    Ok((Dataset::new(train, c, f, d)?, Dataset::new(test, c, f, d)?))
}

/// A generated benchmark: source training set, long-tailed target training
/// set, and balanced target test set.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark<T> {
    pub config: BenchmarkConfig,
    pub specs: Vec<ClassSpec<T>>,
    pub source_counts: Vec<usize>,
    pub target_counts: Vec<usize>,
    pub source_train: Dataset<T>,
    pub target_train: Dataset<T>,
    pub target_test: Dataset<T>,
}

impl<T: Scalar> Benchmark<T> {
    pub fn generate(config: &BenchmarkConfig) -> Result<Self> {
        config.validate()?;
        let root = SeededRng::new(config.seed);
        let c = config.num_classes;
        let specs = make_class_specs(config, &mut root.stream(Stream::ClassSpecs))?;
        let source_counts =
            long_tailed_counts(c, config.n_max, config.imbalance_ratio, &identity_order(c))?;
        let target_counts = shuffle_target_distribution(&source_counts, config.seed);

        let source_train = synthesize_domain(
            &specs,
            &source_counts,
            DomainTag::Source,
            config,
            &mut root.stream(Stream::SourceSamples),
            0,
        )?;
        let pool_counts: Vec<usize> = target_counts
            .iter()
            .map(|n| n + config.test_per_class)
            .collect();
        let pool = synthesize_domain(
            &specs,
            &pool_counts,
            DomainTag::Target,
            config,
            &mut root.stream(Stream::TargetSamples),
            source_train.len() as u64,
        )?;
        let (target_train, target_test) = split_train_test(
            &pool,
            config.test_per_class,
            &mut root.stream(Stream::TestSplit),
        )?;
        Ok(Self {
            config: config.clone(),
            specs,
            source_counts,
            target_counts,
            source_train,
            target_train,
            target_test,
        })
    }
}
