//! Alignment and calibration losses with closed-form gradients.
//!
//! * [`triplet_alignment_loss`]: bi-directional hinge over cosine
//!   similarities between paired image and text embeddings.
//! * [`balanced_softmax_loss`]: cross-entropy with exponentiated logits
//!   weighted by class frequency.
//! * [`total_loss`]: weighted sum of the two.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{norm, Scalar};
use crate::vector::{check_dims, clamp_unit, EmbeddingVector};

/// Paired embeddings in the shared space. Row `i` of `image_embs` and
/// row `i` of `text_embs` come from the same sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatch<T> {
    pub image_embs: Vec<EmbeddingVector<T>>,
    pub text_embs: Vec<EmbeddingVector<T>>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> TripletBatch<T> {
    pub fn new(
        image_embs: Vec<EmbeddingVector<T>>,
        text_embs: Vec<EmbeddingVector<T>>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if image_embs.len() != text_embs.len() || image_embs.len() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "batch rows disagree: {} images, {} texts, {} labels",
                image_embs.len(),
                text_embs.len(),
                labels.len()
            )));
        }
        if let Some(first) = image_embs.first() {
            let dim = first.dim();
            for v in image_embs.iter().chain(&text_embs) {
                check_dims(dim, v.dim())?;
            }
        }
        Ok(Self {
            image_embs,
            text_embs,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativeMining {
    /// The in-batch negative most similar to the anchor.
    #[default]
    HardestInBatch,
    /// Hinge averaged over every in-batch negative.
    AllPairsMean,
}

/// A loss value with gradients for whichever inputs the loss consumed.
/// Gradient lists a loss does not touch are left empty.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue<T> {
    pub value: T,
    /// d loss / d image embedding, one row per batch row.
    pub image_grads: Vec<Vec<T>>,
    /// d loss / d text embedding, one row per batch row.
    pub text_grads: Vec<Vec<T>>,
    /// d loss / d logits, one row per batch row.
    pub logit_grads: Vec<Vec<T>>,
    /// Set when no row had a negative; value and gradients are zero.
    pub no_negatives: bool,
}

impl<T: Scalar> LossValue<T> {
    fn empty() -> Self {
        Self {
            value: T::zero(),
            image_grads: Vec::new(),
            text_grads: Vec::new(),
            logit_grads: Vec::new(),
            no_negatives: false,
        }
    }
}

/// One anchor's contribution for both directions, given the four
/// similarities involved.
pub fn bidirectional_hinge<T: Scalar>(
    image_anchor_pos: T,
    image_anchor_neg: T,
    text_anchor_pos: T,
    text_anchor_neg: T,
    margin: T,
) -> T {
    hinge(image_anchor_neg - image_anchor_pos + margin)
        + hinge(text_anchor_neg - text_anchor_pos + margin)
}

fn hinge<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

/// Bi-directional triplet loss over a batch of positive image–text pairs.
///
/// Every row with at least one negative (a row carrying a different label)
/// acts as an anchor twice: once with its image embedding against text
/// embeddings and once with its text embedding against image embeddings.
/// The positive is always the row's own counterpart. Per-anchor losses of
/// both directions are summed and then averaged over anchors.
///
/// Gradients are exact subgradients; an inactive hinge, including one sitting
/// exactly on zero, contributes nothing.
pub fn triplet_alignment_loss<T: Scalar>(
    batch: &TripletBatch<T>,
    margin: T,
    mining: NegativeMining,
) -> Result<LossValue<T>> {
    if margin.is_nan() || margin < T::zero() {
        return Err(Error::InvalidConfig(format!(
            "margin must be non-negative, got {margin}"
        )));
    }
    let n = batch.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "triplet batch needs ≥ 2 rows, got {n}"
        )));
    }
    let dim = batch.image_embs[0].dim();

    let unit = |vs: &[EmbeddingVector<T>]| -> Result<(Vec<Vec<T>>, Vec<T>)> {
        let mut units = Vec::with_capacity(vs.len());
        let mut norms = Vec::with_capacity(vs.len());
        for v in vs {
            let nv = norm(v.as_slice());
            if nv <= T::norm_epsilon() {
                return Err(Error::DegenerateVector);
            }
            units.push(v.as_slice().iter().map(|&x| x / nv).collect());
            norms.push(nv);
        }
        Ok((units, norms))
    };
    let (img, img_norm) = unit(&batch.image_embs)?;
    let (txt, txt_norm) = unit(&batch.text_embs)?;

    // sim[i][j] = c(image_i, text_j)
    let sim: Vec<Vec<T>> = img
        .iter()
        .map(|a| {
            txt.iter()
                .map(|b| clamp_unit(a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)))
                .collect()
        })
        .collect();

    // coef[i][j] = d loss / d sim[i][j]
    let mut coef = vec![vec![T::zero(); n]; n];
    let mut total = T::zero();
    let mut anchors = 0usize;
    let labels = &batch.labels;

    for i in 0..n {
        let negatives: Vec<usize> = (0..n).filter(|&j| labels[j] != labels[i]).collect();
        if negatives.is_empty() {
            continue;
        }
        anchors += 1;
        let pos = sim[i][i];
        // image anchor i: sims to texts are row i; text anchor i: sims to
        // images are column i.
        for direction in [Direction::ImageAnchor, Direction::TextAnchor] {
            let s = |j: usize| match direction {
                Direction::ImageAnchor => sim[i][j],
                Direction::TextAnchor => sim[j][i],
            };
            let mut bump = |j: usize, w: T| match direction {
                Direction::ImageAnchor => coef[i][j] = coef[i][j] + w,
                Direction::TextAnchor => coef[j][i] = coef[j][i] + w,
            };
            match mining {
                NegativeMining::HardestInBatch => {
                    let mut hardest = negatives[0];
                    for &j in &negatives[1..] {
                        if s(j) > s(hardest) {
                            hardest = j;
                        }
                    }
                    let h = s(hardest) - pos + margin;
                    if h > T::zero() {
                        total = total + h;
                        bump(hardest, T::one());
                        bump(i, -T::one());
                    }
                }
                NegativeMining::AllPairsMean => {
                    let w = T::one() / T::lit(negatives.len() as f64);
                    for &j in &negatives {
                        let h = s(j) - pos + margin;
                        if h > T::zero() {
                            total = total + h * w;
                            bump(j, w);
                            bump(i, -w);
                        }
                    }
                }
            }
        }
    }

    let mut out = LossValue::empty();
    if anchors == 0 {
        out.image_grads = vec![vec![T::zero(); dim]; n];
        out.text_grads = vec![vec![T::zero(); dim]; n];
        out.no_negatives = true;
        return Ok(out);
    }
    let scale = T::one() / T::lit(anchors as f64);
    out.value = total * scale;

    // d c(a, b) / d a = (b̂ − c·â) / ‖a‖
    let mut image_grads = vec![vec![T::zero(); dim]; n];
    let mut text_grads = vec![vec![T::zero(); dim]; n];
    for i in 0..n {
        for j in 0..n {
            let w = coef[i][j] * scale;
            if w == T::zero() {
                continue;
            }
            let c = sim[i][j];
            let gi = w / img_norm[i];
            let gj = w / txt_norm[j];
            for k in 0..dim {
                image_grads[i][k] = image_grads[i][k] + gi * (txt[j][k] - c * img[i][k]);
                text_grads[j][k] = text_grads[j][k] + gj * (img[i][k] - c * txt[j][k]);
            }
        }
    }
    out.image_grads = image_grads;
    out.text_grads = text_grads;
    Ok(out)
}

#[derive(Clone, Copy)]
enum Direction {
    ImageAnchor,
    TextAnchor,
}

/// Class-frequency-calibrated cross-entropy for one row of logits:
/// `−log(n_y·exp(l_y) / Σ_i n_i·exp(l_i))`.
///
/// The gradient with respect to the logits is `softmax(l + log n) − onehot(y)`.
pub fn balanced_softmax_loss<T: Scalar>(
    logits: &[T],
    label: usize,
    class_counts: &[usize],
) -> Result<LossValue<T>> {
    let log_counts = log_counts(class_counts)?;
    let (value, grad) = balanced_softmax_row(logits, label, &log_counts)?;
    let mut out = LossValue::empty();
    out.value = value;
    out.logit_grads = vec![grad];
    Ok(out)
}

/// Mean of [`balanced_softmax_loss`] over rows; gradients are scaled by
/// `1 / rows` accordingly.
pub fn balanced_softmax_batch<T: Scalar>(
    logit_rows: &[Vec<T>],
    labels: &[usize],
    class_counts: &[usize],
) -> Result<LossValue<T>> {
    if logit_rows.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} logit rows but {} labels",
            logit_rows.len(),
            labels.len()
        )));
    }
    if logit_rows.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let log_counts = log_counts(class_counts)?;
    let scale = T::one() / T::lit(logit_rows.len() as f64);
    let mut out = LossValue::empty();
    for (row, &y) in logit_rows.iter().zip(labels) {
        let (v, mut g) = balanced_softmax_row(row, y, &log_counts)?;
        out.value = out.value + v;
        g.iter_mut().for_each(|x| *x = *x * scale);
        out.logit_grads.push(g);
    }
    out.value = out.value * scale;
    Ok(out)
}

fn log_counts<T: Scalar>(class_counts: &[usize]) -> Result<Vec<T>> {
    if class_counts.is_empty() {
        return Err(Error::InvalidCounts("no classes".into()));
    }
    if let Some(c) = class_counts.iter().position(|&n| n < 1) {
        return Err(Error::InvalidCounts(format!("class {c} has count 0")));
    }
    Ok(class_counts
        .iter()
        .map(|&n| T::lit(n as f64).ln())
        .collect())
}

fn balanced_softmax_row<T: Scalar>(
    logits: &[T],
    label: usize,
    log_counts: &[T],
) -> Result<(T, Vec<T>)> {
    check_dims(log_counts.len(), logits.len())?;
    if label >= logits.len() {
        return Err(Error::InvalidLabel {
            label,
            num_classes: logits.len(),
        });
    }
    let z: Vec<T> = logits
        .iter()
        .zip(log_counts)
        .map(|(&l, &c)| l + c)
        .collect();
    let shift = z.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = z.iter().map(|&v| (v - shift).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    let value = sum.ln() + shift - z[label];
    let mut grad: Vec<T> = exps.iter().map(|&e| e / sum).collect();
    grad[label] = grad[label] - T::one();
    // Guard against −0-ish rounding producing a tiny negative loss.
    Ok((value.max(T::zero()), grad))
}

/// `λ_align·alignment + λ_cal·calibration`, applied to values and gradients.
pub fn total_loss<T: Scalar>(
    alignment: &LossValue<T>,
    calibration: &LossValue<T>,
    lambda_align: T,
    lambda_cal: T,
) -> Result<LossValue<T>> {
    if !(lambda_align >= T::zero() && lambda_cal >= T::zero()) {
        return Err(Error::InvalidConfig(
            "loss weights must be non-negative".into(),
        ));
    }
    let scale = |rows: &[Vec<T>], w: T| -> Vec<Vec<T>> {
        rows.iter()
            .map(|r| r.iter().map(|&x| x * w).collect())
            .collect()
    };
    let merge = |a: &[Vec<T>], b: &[Vec<T>]| -> Vec<Vec<T>> {
        match (a.is_empty(), b.is_empty()) {
            (true, _) => scale(b, lambda_cal),
            (_, true) => scale(a, lambda_align),
            _ => a
                .iter()
                .zip(b)
                .map(|(ra, rb)| {
                    ra.iter()
                        .zip(rb)
                        .map(|(&x, &y)| lambda_align * x + lambda_cal * y)
                        .collect()
                })
                .collect(),
        }
    };
    Ok(LossValue {
        value: lambda_align * alignment.value + lambda_cal * calibration.value,
        image_grads: merge(&alignment.image_grads, &calibration.image_grads),
        text_grads: merge(&alignment.text_grads, &calibration.text_grads),
        logit_grads: merge(&alignment.logit_grads, &calibration.logit_grads),
        no_negatives: alignment.no_negatives,
    })
}
