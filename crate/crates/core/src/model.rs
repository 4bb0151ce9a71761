//! Projection heads, additive text augmentation, and the classifier.
//!
//! Forward pass for one sample:
//!
//! ```text
//! e_I = normalize(W_img · x + b_img)
//! e_T = normalize(W_txt · [title ; mean(ingredients)] + b_txt)
//! ê   = e_I + e_T                  (e_I alone when augmentation is off)
//! l   = W_cls · ê + b_cls
//! ```
//!
//! [`forward_backward`] runs this over a batch, evaluates the weighted
//! alignment + calibration objective, and backpropagates exact gradients to
//! every weight.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::losses::{balanced_softmax_batch, triplet_alignment_loss, NegativeMining, TripletBatch};
use crate::scalar::{dot, Scalar};
use crate::vector::{check_dims, normalize_slice, EmbeddingVector, Normalized};

/// Dense affine map `y = W·x + b`, weights stored row-major (`out × in`).
#[derive(Debug, Clone, PartialEq)]
pub struct Affine<T> {
    in_dim: usize,
    out_dim: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Affine<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
        }
    }

    pub fn from_parts(in_dim: usize, out_dim: usize, weight: Vec<T>, bias: Vec<T>) -> Result<Self> {
        check_dims(in_dim * out_dim, weight.len())?;
        check_dims(out_dim, bias.len())?;
        Ok(Self {
            in_dim,
            out_dim,
            weight,
            bias,
        })
    }

    /// Weights uniform in `±1/√in_dim`, zero bias.
    pub fn init<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = (0..in_dim * out_dim)
            .map(|_| T::lit(rng.random_range(-bound..bound)))
            .collect();
        Self {
            in_dim,
            out_dim,
            weight,
            bias: vec![T::zero(); out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    fn row(&self, r: usize) -> &[T] {
        &self.weight[r * self.in_dim..(r + 1) * self.in_dim]
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.in_dim);
        (0..self.out_dim)
            .map(|r| dot(self.row(r), x) + self.bias[r])
            .collect()
    }

    /// `Wᵀ·dy`
    fn input_grad(&self, dy: &[T]) -> Vec<T> {
        let mut dx = vec![T::zero(); self.in_dim];
        for (r, &g) in dy.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            for (d, &w) in dx.iter_mut().zip(self.row(r)) {
                *d = *d + g * w;
            }
        }
        dx
    }

    /// Accumulates `dy ⊗ x` into the weight gradient and `dy` into the bias.
    fn accumulate(&mut self, x: &[T], dy: &[T]) {
        for (r, &g) in dy.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            self.bias[r] = self.bias[r] + g;
            let row = &mut self.weight[r * self.in_dim..(r + 1) * self.in_dim];
            for (w, &xi) in row.iter_mut().zip(x) {
                *w = *w + g * xi;
            }
        }
    }

    fn values(&self) -> impl Iterator<Item = &T> {
        self.weight.iter().chain(&self.bias)
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.weight.iter_mut().chain(self.bias.iter_mut())
    }
}

/// Shape of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub feature_dim: usize,
    pub text_dim: usize,
    pub shared_dim: usize,
    pub num_classes: usize,
}

/// Weights of the image head, text head, and classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub image_head: Affine<T>,
    /// Maps `[title ; pooled ingredients]` (`2·text_dim`) to the shared space.
    pub text_head: Affine<T>,
    pub classifier: Affine<T>,
}

/// Gradients share the parameter layout.
pub type Gradients<T> = ModelParams<T>;

impl<T: Scalar> ModelParams<T> {
    pub fn init<R: Rng>(dims: ModelDims, rng: &mut R) -> Self {
        let image_head = Affine::init(dims.feature_dim, dims.shared_dim, rng);
        let text_head = Affine::init(2 * dims.text_dim, dims.shared_dim, rng);
        let classifier = Affine::init(dims.shared_dim, dims.num_classes, rng);
        Self {
            image_head,
            text_head,
            classifier,
        }
    }

    pub fn zeros(dims: ModelDims) -> Self {
        Self {
            image_head: Affine::zeros(dims.feature_dim, dims.shared_dim),
            text_head: Affine::zeros(2 * dims.text_dim, dims.shared_dim),
            classifier: Affine::zeros(dims.shared_dim, dims.num_classes),
        }
    }

    pub fn from_heads(
        image_head: Affine<T>,
        text_head: Affine<T>,
        classifier: Affine<T>,
    ) -> Result<Self> {
        check_dims(image_head.out_dim, text_head.out_dim)?;
        check_dims(image_head.out_dim, classifier.in_dim)?;
        if !text_head.in_dim.is_multiple_of(2) {
            return Err(Error::InvalidInput(
                "text head input must be 2·text_dim".into(),
            ));
        }
        Ok(Self {
            image_head,
            text_head,
            classifier,
        })
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            feature_dim: self.image_head.in_dim,
            text_dim: self.text_head.in_dim / 2,
            shared_dim: self.image_head.out_dim,
            num_classes: self.classifier.out_dim,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims())
    }

    /// All weights in checkpoint order: image W, image b, text W, text b,
    /// classifier W, classifier b.
    pub fn values(&self) -> impl Iterator<Item = &T> {
        self.image_head
            .values()
            .chain(self.text_head.values())
            .chain(self.classifier.values())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.image_head
            .values_mut()
            .chain(self.text_head.values_mut())
            .chain(self.classifier.values_mut())
    }

    pub fn num_values(&self) -> usize {
        self.values().count()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    /// `self += alpha · other`
    pub fn axpy(&mut self, alpha: T, other: &Self) {
        for (w, &g) in self.values_mut().zip(other.values()) {
            *w = *w + alpha * g;
        }
    }

    pub fn scale(&mut self, alpha: T) {
        self.values_mut().for_each(|w| *w = *w * alpha);
    }
}

/// Which text inputs feed the augmentation branch, and how the fused
/// embedding is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    pub use_title: bool,
    pub use_ingredients: bool,
    /// Re-normalize `e_I + e_T` before classification.
    #[serde(default)]
    pub renormalize_fused: bool,
}

impl FusionConfig {
    pub const IMAGE_ONLY: Self = Self {
        use_title: false,
        use_ingredients: false,
        renormalize_fused: false,
    };
    pub const FULL: Self = Self {
        use_title: true,
        use_ingredients: true,
        renormalize_fused: false,
    };

    /// Augmentation is active when any text input is used.
    pub fn augments(&self) -> bool {
        self.use_title || self.use_ingredients
    }
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self::FULL
    }
}

/// Loss weights and alignment settings for [`forward_backward`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig<T> {
    pub lambda_align: T,
    pub lambda_cal: T,
    pub margin: T,
    pub mining: NegativeMining,
    pub fusion: FusionConfig,
}

impl<T: Scalar> Default for LossConfig<T> {
    fn default() -> Self {
        Self {
            lambda_align: T::one(),
            lambda_cal: T::one(),
            margin: T::lit(0.3),
            mining: NegativeMining::HardestInBatch,
            fusion: FusionConfig::FULL,
        }
    }
}

/// Projects a raw image feature into the shared space.
pub fn encode_image<T: Scalar>(
    params: &ModelParams<T>,
    raw: &EmbeddingVector<T>,
) -> Result<Normalized<T>> {
    check_dims(params.image_head.in_dim, raw.dim())?;
    let (values, degenerate) = normalize_slice(&params.image_head.forward(raw.as_slice()));
    Ok(Normalized {
        vector: EmbeddingVector::from_finite(values),
        degenerate,
    })
}

/// Element-wise mean; the zero vector of `text_dim` for an empty list.
pub fn pool_ingredients<T: Scalar>(
    vectors: &[EmbeddingVector<T>],
    text_dim: usize,
) -> Result<EmbeddingVector<T>> {
    let Some(first) = vectors.first() else {
        return Ok(EmbeddingVector::zeros(text_dim));
    };
    let dim = first.dim();
    let mut acc = vec![T::zero(); dim];
    for v in vectors {
        check_dims(dim, v.dim())?;
        for (a, &x) in acc.iter_mut().zip(v.as_slice()) {
            *a = *a + x;
        }
    }
    let n = T::lit(vectors.len() as f64);
    Ok(EmbeddingVector::from_finite(
        acc.into_iter().map(|a| a / n).collect(),
    ))
}

/// Projects `[title ; pool(ingredients)]` into the shared space.
pub fn encode_text<T: Scalar>(
    params: &ModelParams<T>,
    title: &EmbeddingVector<T>,
    ingredients: &[EmbeddingVector<T>],
) -> Result<Normalized<T>> {
    let text_dim = params.dims().text_dim;
    check_dims(text_dim, title.dim())?;
    let pooled = pool_ingredients(ingredients, text_dim)?;
    check_dims(text_dim, pooled.dim())?;
    let input: Vec<T> = title
        .as_slice()
        .iter()
        .chain(pooled.as_slice())
        .copied()
        .collect();
    let (values, degenerate) = normalize_slice(&params.text_head.forward(&input));
    Ok(Normalized {
        vector: EmbeddingVector::from_finite(values),
        degenerate,
    })
}

/// `e_I + e_T`, not re-normalized.
pub fn augment<T: Scalar>(
    image: &EmbeddingVector<T>,
    text: &EmbeddingVector<T>,
) -> Result<EmbeddingVector<T>> {
    check_dims(image.dim(), text.dim())?;
    Ok(EmbeddingVector::from_finite(
        image
            .as_slice()
            .iter()
            .zip(text.as_slice())
            .map(|(&a, &b)| a + b)
            .collect(),
    ))
}

/// Classifier logits for a fused embedding.
pub fn classify<T: Scalar>(params: &ModelParams<T>, fused: &EmbeddingVector<T>) -> Result<Vec<T>> {
    check_dims(params.classifier.in_dim, fused.dim())?;
    Ok(params.classifier.forward(fused.as_slice()))
}

/// Argmax with ties resolved toward the lowest class index.
pub fn predict<T: Scalar>(logits: &[T]) -> usize {
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate().skip(1) {
        if l > logits[best] {
            best = i;
        }
    }
    best
}

/// How test-time text is supplied to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InferenceText {
    /// Use each sample's own text, filtered by the fusion config.
    #[default]
    SampleText,
    /// Set `e_T = 0`.
    ImageOnly,
}

/// Per-sample outputs of an inference pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference<T> {
    pub image_embedding: Vec<T>,
    pub logits: Vec<T>,
}

/// Runs the model on one sample.
pub fn infer<T: Scalar>(
    params: &ModelParams<T>,
    fusion: FusionConfig,
    sample: &Sample<T>,
    text: InferenceText,
) -> Result<Inference<T>> {
    let e_i = encode_image(params, &sample.image_feature)?.vector;
    let fused = match text {
        InferenceText::SampleText if fusion.augments() => {
            let e_t = text_embedding(params, sample, fusion.use_title, fusion.use_ingredients)?;
            augment(&e_i, &e_t)?
        }
        _ => e_i.clone(),
    };
    let fused = if fusion.renormalize_fused {
        EmbeddingVector::from_finite(normalize_slice(fused.as_slice()).0)
    } else {
        fused
    };
    let logits = classify(params, &fused)?;
    Ok(Inference {
        image_embedding: e_i.into_vec(),
        logits,
    })
}

fn text_embedding<T: Scalar>(
    params: &ModelParams<T>,
    sample: &Sample<T>,
    use_title: bool,
    use_ingredients: bool,
) -> Result<EmbeddingVector<T>> {
    let text_dim = params.dims().text_dim;
    let title = if use_title {
        sample.title_feature.clone()
    } else {
        EmbeddingVector::zeros(text_dim)
    };
    let ingredients: &[EmbeddingVector<T>] = if use_ingredients {
        &sample.ingredient_features
    } else {
        &[]
    };
    Ok(encode_text(params, &title, ingredients)?.vector)
}

/// Loss components of one batch, each unweighted except `total`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss<T> {
    pub total: T,
    pub alignment: T,
    pub calibration: T,
    pub no_negatives: bool,
}

/// Cached activations of one normalized projection.
struct Projection<T> {
    input: Vec<T>,
    pre_norm: T,
    unit: Vec<T>,
    degenerate: bool,
}

impl<T: Scalar> Projection<T> {
    fn run(head: &Affine<T>, input: Vec<T>) -> Self {
        let u = head.forward(&input);
        let pre_norm = crate::scalar::norm(&u);
        let (unit, degenerate) = normalize_slice(&u);
        Self {
            input,
            pre_norm,
            unit,
            degenerate,
        }
    }

    /// Pulls a gradient w.r.t. the unit output back through the
    /// normalization and accumulates the head's weight gradient.
    fn backward(&self, grad_unit: &[T], head_grad: &mut Affine<T>) {
        let du = norm_backward(&self.unit, self.pre_norm, self.degenerate, grad_unit);
        head_grad.accumulate(&self.input, &du);
    }
}

/// Jacobian-vector product of `u ↦ u/‖u‖` (identity when degenerate).
fn norm_backward<T: Scalar>(unit: &[T], pre_norm: T, degenerate: bool, g: &[T]) -> Vec<T> {
    if degenerate {
        return g.to_vec();
    }
    let eg = dot(unit, g);
    unit.iter()
        .zip(g)
        .map(|(&e, &gi)| (gi - e * eg) / pre_norm)
        .collect()
}

fn text_input<T: Scalar>(
    sample: &Sample<T>,
    text_dim: usize,
    use_title: bool,
    use_ingredients: bool,
) -> Result<Vec<T>> {
    check_dims(text_dim, sample.title_feature.dim())?;
    let mut input = Vec::with_capacity(2 * text_dim);
    if use_title {
        input.extend_from_slice(sample.title_feature.as_slice());
    } else {
        input.resize(text_dim, T::zero());
    }
    if use_ingredients {
        let pooled = pool_ingredients(&sample.ingredient_features, text_dim)?;
        check_dims(text_dim, pooled.dim())?;
        input.extend_from_slice(pooled.as_slice());
    } else {
        input.resize(2 * text_dim, T::zero());
    }
    Ok(input)
}

/// Loss and exact parameter gradients for one batch.
///
/// * alignment: triplet loss between `e_I` and the full-text `e_T` of every
///   sample in the batch (both domains together);
/// * calibration: balanced softmax on the classifier logits of `ê`,
///   averaged over the batch, with `class_counts` as frequencies;
/// * total: `λ_align·alignment + λ_cal·calibration`.
///
/// The alignment branch always encodes title and ingredients; the fusion
/// config only selects which text inputs augment the image embedding.
pub fn forward_backward<T: Scalar>(
    params: &ModelParams<T>,
    batch: &[&Sample<T>],
    class_counts: &[usize],
    config: &LossConfig<T>,
) -> Result<(BatchLoss<T>, Gradients<T>)> {
    let dims = params.dims();
    check_dims(dims.num_classes, class_counts.len())?;
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let use_alignment = config.lambda_align > T::zero();
    let fusion = config.fusion;

    let mut images = Vec::with_capacity(batch.len());
    let mut full_texts = Vec::new();
    let mut aug_texts = Vec::new();
    for s in batch {
        check_dims(dims.feature_dim, s.image_feature.dim())?;
        if s.label >= dims.num_classes {
            return Err(Error::InvalidLabel {
                label: s.label,
                num_classes: dims.num_classes,
            });
        }
        images.push(Projection::run(
            &params.image_head,
            s.image_feature.as_slice().to_vec(),
        ));
        if use_alignment {
            full_texts.push(Projection::run(
                &params.text_head,
                text_input(s, dims.text_dim, true, true)?,
            ));
        }
        if fusion.augments() {
            let input = text_input(s, dims.text_dim, fusion.use_title, fusion.use_ingredients)?;
            aug_texts.push(Projection::run(&params.text_head, input));
        }
    }
    let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();

    let mut grads = params.zeros_like();
    let mut image_unit_grads = vec![vec![T::zero(); dims.shared_dim]; batch.len()];

    let mut alignment = T::zero();
    let mut no_negatives = false;
    if use_alignment {
        let to_vecs = |ps: &[Projection<T>]| -> Vec<EmbeddingVector<T>> {
            ps.iter()
                .map(|p| EmbeddingVector::from_finite(p.unit.clone()))
                .collect()
        };
        let triplets = TripletBatch::new(to_vecs(&images), to_vecs(&full_texts), labels.clone())?;
        let loss = triplet_alignment_loss(&triplets, config.margin, config.mining)?;
        alignment = loss.value;
        no_negatives = loss.no_negatives;
        for (acc, g) in image_unit_grads.iter_mut().zip(&loss.image_grads) {
            for (a, &x) in acc.iter_mut().zip(g) {
                *a = *a + config.lambda_align * x;
            }
        }
        for (proj, g) in full_texts.iter().zip(&loss.text_grads) {
            let scaled: Vec<T> = g.iter().map(|&x| config.lambda_align * x).collect();
            proj.backward(&scaled, &mut grads.text_head);
        }
    }

    // Classification branch.
    let mut fused_pre = Vec::with_capacity(batch.len());
    let mut logit_rows = Vec::with_capacity(batch.len());
    for (i, img) in images.iter().enumerate() {
        let mut f = img.unit.clone();
        if let Some(t) = aug_texts.get(i) {
            for (a, &b) in f.iter_mut().zip(&t.unit) {
                *a = *a + b;
            }
        }
        let fused = if fusion.renormalize_fused {
            normalize_slice(&f).0
        } else {
            f.clone()
        };
        logit_rows.push(params.classifier.forward(&fused));
        fused_pre.push((f, fused));
    }
    let calibration = balanced_softmax_batch(&logit_rows, &labels, class_counts)?;
    if config.lambda_cal > T::zero() {
        for (i, g) in calibration.logit_grads.iter().enumerate() {
            let dlogits: Vec<T> = g.iter().map(|&x| config.lambda_cal * x).collect();
            let (pre, fused) = &fused_pre[i];
            grads.classifier.accumulate(fused, &dlogits);
            let mut dfused = params.classifier.input_grad(&dlogits);
            if fusion.renormalize_fused {
                let n = crate::scalar::norm(pre);
                dfused = norm_backward(fused, n, n <= T::norm_epsilon(), &dfused);
            }
            for (a, &x) in image_unit_grads[i].iter_mut().zip(&dfused) {
                *a = *a + x;
            }
            if let Some(t) = aug_texts.get(i) {
                t.backward(&dfused, &mut grads.text_head);
            }
        }
    }

    for (proj, g) in images.iter().zip(&image_unit_grads) {
        proj.backward(g, &mut grads.image_head);
    }

    let total = config.lambda_align * alignment + config.lambda_cal * calibration.value;
    Ok((
        BatchLoss {
            total,
            alignment,
            calibration: calibration.value,
            no_negatives,
        },
        grads,
    ))
}
