//! Independent reference implementations shared by the integration and
//! acceptance tests. Nothing here calls into the code under test except to
//! build inputs.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use xmaug::data::{DomainTag, Sample};
use xmaug::losses::{balanced_softmax_loss, triplet_alignment_loss, NegativeMining, TripletBatch};
use xmaug::model::{
    encode_image, encode_text, forward_backward, pool_ingredients, FusionConfig, LossConfig,
    ModelDims,
};
use xmaug::{Dataset, EmbeddingVector, ModelParams};

pub const FD_STEP: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-6;
/// Instances whose similarities sit this close to a kink of the hinge or of
/// the hardest-negative selection are not differentiable in practice.
pub const KINK_GUARD: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn vector(values: Vec<f64>) -> EmbeddingVector {
    EmbeddingVector::new(values).unwrap()
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖ + ‖b‖, 1e-12)` over whole gradient vectors.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale =
        a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / scale.max(1e-12)
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn hinge(x: f64) -> f64 {
    x.max(0.0)
}

/// Straightforward bi-directional triplet loss written from the definition:
/// every row with a negative is an anchor in both directions, the positive is
/// its own counterpart, and per-anchor losses are averaged.
pub fn triplet_reference(
    images: &[Vec<f64>],
    texts: &[Vec<f64>],
    labels: &[usize],
    margin: f64,
    mining: NegativeMining,
) -> f64 {
    let n = labels.len();
    let mut total = 0.0;
    let mut anchors = 0;
    for i in 0..n {
        let negatives: Vec<usize> = (0..n).filter(|&j| labels[j] != labels[i]).collect();
        if negatives.is_empty() {
            continue;
        }
        anchors += 1;
        let one_direction = |anchor: &[f64], positive: &[f64], others: &[Vec<f64>]| -> f64 {
            let pos = cos(anchor, positive);
            match mining {
                NegativeMining::HardestInBatch => {
                    let hardest = negatives
                        .iter()
                        .map(|&j| cos(anchor, &others[j]))
                        .fold(f64::NEG_INFINITY, f64::max);
                    hinge(hardest - pos + margin)
                }
                NegativeMining::AllPairsMean => {
                    negatives
                        .iter()
                        .map(|&j| hinge(cos(anchor, &others[j]) - pos + margin))
                        .sum::<f64>()
                        / negatives.len() as f64
                }
            }
        };
        total += one_direction(&images[i], &texts[i], texts)
            + one_direction(&texts[i], &images[i], images);
    }
    if anchors == 0 {
        0.0
    } else {
        total / anchors as f64
    }
}

/// Distance of a triplet instance to the nearest non-differentiable point:
/// a hinge argument at zero, or two negatives tied for hardest.
pub fn triplet_kink_distance(
    images: &[Vec<f64>],
    texts: &[Vec<f64>],
    labels: &[usize],
    margin: f64,
    mining: NegativeMining,
) -> f64 {
    let n = labels.len();
    let mut closest = f64::INFINITY;
    for i in 0..n {
        let negatives: Vec<usize> = (0..n).filter(|&j| labels[j] != labels[i]).collect();
        if negatives.is_empty() {
            continue;
        }
        for (anchor, positive, others) in [
            (&images[i], &texts[i], texts),
            (&texts[i], &images[i], images),
        ] {
            let pos = cos(anchor, positive);
            let mut sims: Vec<f64> = negatives.iter().map(|&j| cos(anchor, &others[j])).collect();
            sims.sort_by(|a, b| b.total_cmp(a));
            match mining {
                NegativeMining::HardestInBatch => {
                    closest = closest.min((sims[0] - pos + margin).abs());
                    if sims.len() > 1 {
                        closest = closest.min(sims[0] - sims[1]);
                    }
                }
                NegativeMining::AllPairsMean => {
                    for s in &sims {
                        closest = closest.min((s - pos + margin).abs());
                    }
                }
            }
        }
    }
    closest
}

/// A random triplet instance with at least two labels present.
pub fn random_triplet_instance(rng: &mut impl Rng) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<usize>) {
    let n = rng.random_range(2..8);
    let dim = rng.random_range(2..7);
    let classes = rng.random_range(2..4);
    let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
    labels[0] = 0;
    labels[1] = 1;
    let images = (0..n).map(|_| gaussian_vec(rng, dim)).collect();
    let texts = (0..n).map(|_| gaussian_vec(rng, dim)).collect();
    (images, texts, labels)
}

pub fn triplet_batch(
    images: &[Vec<f64>],
    texts: &[Vec<f64>],
    labels: &[usize],
) -> TripletBatch<f64> {
    TripletBatch::new(
        images.iter().cloned().map(vector).collect(),
        texts.iter().cloned().map(vector).collect(),
        labels.to_vec(),
    )
    .unwrap()
}

pub fn flatten(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}

pub fn split(flat: &[f64], rows: usize) -> Vec<Vec<f64>> {
    flat.chunks(flat.len() / rows)
        .map(<[f64]>::to_vec)
        .collect()
}

pub fn check_triplet(mining: NegativeMining, instances: usize, seed: u64) -> (usize, f64) {
    let mut rng = rng(seed);
    let margin = 0.3;
    let (mut checked, mut worst) = (0, 0.0f64);
    while checked < instances {
        let (images, texts, labels) = random_triplet_instance(&mut rng);
        if triplet_kink_distance(&images, &texts, &labels, margin, mining) < KINK_GUARD {
            continue;
        }
        let loss = triplet_alignment_loss(&triplet_batch(&images, &texts, &labels), margin, mining)
            .unwrap();
        let n = labels.len();
        let num_images = central_difference(
            |x| triplet_reference(&split(x, n), &texts, &labels, margin, mining),
            &flatten(&images),
            FD_STEP,
        );
        let num_texts = central_difference(
            |x| triplet_reference(&images, &split(x, n), &labels, margin, mining),
            &flatten(&texts),
            FD_STEP,
        );
        let analytic = [flatten(&loss.image_grads), flatten(&loss.text_grads)].concat();
        let numeric = [num_images, num_texts].concat();
        worst = worst.max(relative_error(&analytic, &numeric));
        checked += 1;
    }
    (checked, worst)
}

pub fn random_counts(rng: &mut impl Rng, classes: usize) -> Vec<usize> {
    (0..classes).map(|_| rng.random_range(1..500)).collect()
}

/// Worst relative gradient error over `instances` random single-row
/// balanced softmax cases.
pub fn check_balanced_softmax(seed: u64, instances: usize) -> f64 {
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let classes = rng.random_range(2..12);
        let logits: Vec<f64> = gaussian_vec(&mut rng, classes)
            .into_iter()
            .map(|x| 3.0 * x)
            .collect();
        let counts = random_counts(&mut rng, classes);
        let label = rng.random_range(0..classes);
        let loss = balanced_softmax_loss(&logits, label, &counts).unwrap();
        let numeric = central_difference(
            |l| balanced_softmax_loss(l, label, &counts).unwrap().value,
            &logits,
            FD_STEP,
        );
        worst = worst.max(relative_error(&loss.logit_grads[0], &numeric));
    }
    worst
}

pub fn random_sample(
    rng: &mut impl Rng,
    id: u64,
    dims: ModelDims,
    domain: DomainTag,
    label: usize,
) -> Sample<f64> {
    let ingredients = rng.random_range(0..4);
    Sample {
        id,
        label,
        domain,
        image_feature: vector(gaussian_vec(rng, dims.feature_dim)),
        title_feature: vector(gaussian_vec(rng, dims.text_dim)),
        ingredient_features: (0..ingredients)
            .map(|_| vector(gaussian_vec(rng, dims.text_dim)))
            .collect(),
    }
}

pub fn with_values(template: &ModelParams, values: &[f64]) -> ModelParams {
    let mut p = template.clone();
    p.values_mut().zip(values).for_each(|(dst, &v)| *dst = v);
    p
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Distance to the nearest non-differentiable point of the model loss:
/// alignment kinks, or a projection (image, augmenting text, or fused sum)
/// that is about to be normalized from (near) zero.
pub fn model_kink_distance(
    params: &ModelParams,
    batch: &[Sample<f64>],
    config: &LossConfig<f64>,
) -> f64 {
    let dims = params.dims();
    let fusion = config.fusion;
    let mut closest = f64::INFINITY;
    for s in batch {
        let image = params.image_head.forward(s.image_feature.as_slice());
        closest = closest.min(norm(&image));
        if fusion.augments() {
            let title = if fusion.use_title {
                s.title_feature.as_slice().to_vec()
            } else {
                vec![0.0; dims.text_dim]
            };
            let pooled = if fusion.use_ingredients {
                pool_ingredients(&s.ingredient_features, dims.text_dim)
                    .unwrap()
                    .into_vec()
            } else {
                vec![0.0; dims.text_dim]
            };
            let text = params.text_head.forward(&[title, pooled].concat());
            closest = closest.min(norm(&text));
            if fusion.renormalize_fused && norm(&text) > 0.0 {
                let fused: Vec<f64> = image
                    .iter()
                    .zip(&text)
                    .map(|(a, b)| a / norm(&image) + b / norm(&text))
                    .collect();
                closest = closest.min(norm(&fused));
            }
        }
    }
    if config.lambda_align == 0.0 {
        return closest;
    }
    let images: Vec<Vec<f64>> = batch
        .iter()
        .map(|s| {
            encode_image(params, &s.image_feature)
                .unwrap()
                .vector
                .into_vec()
        })
        .collect();
    let texts: Vec<Vec<f64>> = batch
        .iter()
        .map(|s| {
            encode_text(params, &s.title_feature, &s.ingredient_features)
                .unwrap()
                .vector
                .into_vec()
        })
        .collect();
    let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
    closest.min(triplet_kink_distance(
        &images,
        &texts,
        &labels,
        config.margin,
        config.mining,
    ))
}

/// Returns the relative error, or `None` when the instance sits on a kink.
pub fn model_gradient_error(
    params: &ModelParams,
    batch: &[Sample<f64>],
    counts: &[usize],
    config: &LossConfig<f64>,
) -> Option<f64> {
    if model_kink_distance(params, batch, config) < KINK_GUARD {
        return None;
    }
    let refs: Vec<&Sample<f64>> = batch.iter().collect();
    let (_, grads) = forward_backward(params, &refs, counts, config).unwrap();
    let x: Vec<f64> = params.values().copied().collect();
    let numeric = central_difference(
        |v| {
            forward_backward(&with_values(params, v), &refs, counts, config)
                .unwrap()
                .0
                .total
        },
        &x,
        FD_STEP,
    );
    let analytic: Vec<f64> = grads.values().copied().collect();
    Some(relative_error(&analytic, &numeric))
}

/// Checks `instances` random model configurations away from kinks; returns
/// how many were checked and the worst relative error.
pub fn check_model_configurations(seed: u64, instances: usize) -> (usize, f64) {
    let mut rng = rng(seed);
    let (mut checked, mut worst) = (0, 0.0f64);
    while checked < instances {
        let dims = ModelDims {
            feature_dim: rng.random_range(2..6),
            text_dim: rng.random_range(2..5),
            shared_dim: rng.random_range(2..5),
            num_classes: rng.random_range(2..5),
        };
        let params = ModelParams::init(dims, &mut rng);
        let n = rng.random_range(2..7);
        let batch: Vec<Sample<f64>> = (0..n)
            .map(|i| {
                let domain = if i % 2 == 0 {
                    DomainTag::Source
                } else {
                    DomainTag::Target
                };
                let label = rng.random_range(0..dims.num_classes);
                random_sample(&mut rng, i as u64, dims, domain, label)
            })
            .collect();
        let counts = random_counts(&mut rng, dims.num_classes);
        let config = LossConfig {
            lambda_align: [0.0, 0.5, 1.0][rng.random_range(0..3)],
            lambda_cal: [0.0, 1.0, 2.0][rng.random_range(0..3)],
            margin: rng.random_range(0.0..0.6),
            mining: if rng.random::<bool>() {
                NegativeMining::HardestInBatch
            } else {
                NegativeMining::AllPairsMean
            },
            fusion: FusionConfig {
                use_title: rng.random(),
                use_ingredients: rng.random(),
                renormalize_fused: rng.random(),
            },
        };
        if let Some(err) = model_gradient_error(&params, &batch, &counts, &config) {
            worst = worst.max(err);
            checked += 1;
        }
    }
    (checked, worst)
}

/// Standard softmax cross-entropy, `−log softmax(l)_y`.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln() + m;
    log_sum - logits[label]
}

/// Two Gaussian blobs on either side of a random hyperplane, with a clear
/// gap between them; the same distribution in both domains.
pub fn separable_toy(
    seed: u64,
    per_class: usize,
    feature_dim: usize,
    text_dim: usize,
) -> (Dataset, Dataset) {
    let mut rng = rng(seed);
    let normal: Vec<f64> = {
        let v = gaussian_vec(&mut rng, feature_dim);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    };
    let mut make = |domain: DomainTag, first_id: u64| {
        let mut samples = Vec::new();
        for i in 0..2 * per_class {
            let label = i % 2;
            let side = if label == 0 { 1.0 } else { -1.0 };
            let mut x = gaussian_vec(&mut rng, feature_dim);
            // push every point at least one unit off the hyperplane
            let along: f64 = x.iter().zip(&normal).map(|(a, b)| a * b).sum();
            let shift = side * (1.0 + along.abs()) - along;
            x.iter_mut()
                .zip(&normal)
                .for_each(|(xi, ni)| *xi += shift * ni);
            samples.push(Sample {
                id: first_id + i as u64,
                label,
                domain,
                image_feature: vector(x),
                title_feature: vector(gaussian_vec(&mut rng, text_dim)),
                ingredient_features: vec![],
            });
        }
        Dataset::new(samples, 2, feature_dim, text_dim).unwrap()
    };
    let source = make(DomainTag::Source, 0);
    let target = make(DomainTag::Target, 1_000_000);
    (source, target)
}

/// Plain logistic regression by full-batch gradient descent; returns the
/// training accuracy. Reaching 1.0 certifies that the points are linearly
/// separable.
pub fn logistic_regression_accuracy(
    points: &[Vec<f64>],
    labels: &[usize],
    iterations: usize,
) -> f64 {
    let dim = points[0].len();
    let (mut w, mut b) = (vec![0.0; dim], 0.0);
    let n = points.len() as f64;
    for _ in 0..iterations {
        let (mut gw, mut gb) = (vec![0.0; dim], 0.0);
        for (x, &y) in points.iter().zip(labels) {
            let z: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b;
            let p = 1.0 / (1.0 + (-z).exp());
            let err = p - y as f64;
            gw.iter_mut().zip(x).for_each(|(g, xi)| *g += err * xi);
            gb += err;
        }
        w.iter_mut().zip(&gw).for_each(|(wi, g)| *wi -= g / n);
        b -= gb / n;
    }
    let correct = points
        .iter()
        .zip(labels)
        .filter(|(x, &y)| {
            let z: f64 = w.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>() + b;
            (z > 0.0) as usize == y
        })
        .count();
    correct as f64 / n
}
