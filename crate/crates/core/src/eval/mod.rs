//! Evaluation protocol: Top-k accuracy, head/medium/tail groups, the
//! source × target nine-group matrix, domain-gap diagnostics, and embedding
//! export.

pub mod pca;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{ClassGroup, Dataset, DomainTag};
use crate::error::{Error, Result};
use crate::model::{infer, FusionConfig, InferenceText, ModelParams};
use crate::scalar::Scalar;
use crate::vector::check_dims;

pub use pca::Pca;

/// Group boundaries on target-domain training counts: more than
/// `head_min_exclusive` is head, fewer than `tail_max_exclusive` is tail,
/// everything in between (inclusive) is medium.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupThresholds {
    pub head_min_exclusive: usize,
    pub tail_max_exclusive: usize,
}

impl Default for GroupThresholds {
    fn default() -> Self {
        Self {
            head_min_exclusive: 70,
            tail_max_exclusive: 15,
        }
    }
}

impl GroupThresholds {
    pub fn validate(&self) -> Result<()> {
        if self.head_min_exclusive < self.tail_max_exclusive {
            return Err(Error::InvalidConfig(
                "head threshold below tail threshold".into(),
            ));
        }
        Ok(())
    }

    pub fn group(&self, count: usize) -> ClassGroup {
        if count > self.head_min_exclusive {
            ClassGroup::Head
        } else if count < self.tail_max_exclusive {
            ClassGroup::Tail
        } else {
            ClassGroup::Medium
        }
    }
}

pub fn assign_groups(counts: &[usize], thresholds: &GroupThresholds) -> Vec<ClassGroup> {
    counts.iter().map(|&c| thresholds.group(c)).collect()
}

/// Rank of `label` when classes are ordered by descending logit, ties
/// going to the lower class index.
fn rank_of<T: Scalar>(logits: &[T], label: usize) -> usize {
    let target = logits[label];
    logits
        .iter()
        .enumerate()
        .filter(|&(j, &l)| l > target || (l == target && j < label))
        .count()
}

/// Whether `label` is among the `k` highest logits.
pub fn in_top_k<T: Scalar>(logits: &[T], label: usize, k: usize) -> bool {
    rank_of(logits, label) < k
}

/// Fraction of rows whose label is among the `k` largest logits.
pub fn topk_accuracy<T: Scalar>(logit_rows: &[Vec<T>], labels: &[usize], k: usize) -> Result<f64> {
    if logit_rows.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} rows but {} labels",
            logit_rows.len(),
            labels.len()
        )));
    }
    if logit_rows.is_empty() {
        return Err(Error::InvalidInput("no rows".into()));
    }
    let num_classes = logit_rows[0].len();
    if k < 1 || k > num_classes {
        return Err(Error::InvalidInput(format!(
            "k = {k} outside 1..={num_classes}"
        )));
    }
    let mut hits = 0usize;
    for (row, &y) in logit_rows.iter().zip(labels) {
        check_dims(num_classes, row.len())?;
        if y >= num_classes {
            return Err(Error::InvalidLabel {
                label: y,
                num_classes,
            });
        }
        hits += usize::from(in_top_k(row, y, k));
    }
    Ok(hits as f64 / logit_rows.len() as f64)
}

/// How per-group accuracy aggregates member classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupWeighting {
    /// Correct predictions over test samples of the group.
    #[default]
    Sample,
    /// Unweighted mean of member classes' accuracies.
    ClassMean,
}

/// Per-group accuracy; `None` marks a group with no test samples.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub head: Option<f64>,
    pub medium: Option<f64>,
    pub tail: Option<f64>,
}

impl GroupAccuracy {
    pub fn get(&self, g: ClassGroup) -> Option<f64> {
        match g {
            ClassGroup::Head => self.head,
            ClassGroup::Medium => self.medium,
            ClassGroup::Tail => self.tail,
        }
    }
}

fn aggregate(
    classes: impl Iterator<Item = usize> + Clone,
    correct: &[usize],
    totals: &[usize],
    weighting: GroupWeighting,
) -> Option<f64> {
    match weighting {
        GroupWeighting::Sample => {
            let n: usize = classes.clone().map(|c| totals[c]).sum();
            (n > 0).then(|| classes.map(|c| correct[c]).sum::<usize>() as f64 / n as f64)
        }
        GroupWeighting::ClassMean => {
            let accs: Vec<f64> = classes
                .filter(|&c| totals[c] > 0)
                .map(|c| correct[c] as f64 / totals[c] as f64)
                .collect();
            (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
        }
    }
}

/// Head/medium/tail accuracy from per-class correct counts and test totals.
pub fn group_accuracy(
    per_class_correct: &[usize],
    per_class_totals: &[usize],
    groups: &[ClassGroup],
    weighting: GroupWeighting,
) -> Result<GroupAccuracy> {
    check_dims(groups.len(), per_class_correct.len())?;
    check_dims(groups.len(), per_class_totals.len())?;
    let of = |g: ClassGroup| {
        let members = (0..groups.len()).filter(move |&c| groups[c] == g);
        aggregate(members, per_class_correct, per_class_totals, weighting)
    };
    Ok(GroupAccuracy {
        head: of(ClassGroup::Head),
        medium: of(ClassGroup::Medium),
        tail: of(ClassGroup::Tail),
    })
}

/// 3×3 accuracy matrix, rows indexed by source group and columns by target
/// group (head, medium, tail order). Empty cells are `None`.
pub type NineGroupMatrix = [[Option<f64>; 3]; 3];

/// Classes of each (source group, target group) cell.
pub fn nine_group_members(
    source_counts: &[usize],
    target_counts: &[usize],
    thresholds: &GroupThresholds,
) -> Result<[[Vec<usize>; 3]; 3]> {
    check_dims(source_counts.len(), target_counts.len())?;
    let mut cells: [[Vec<usize>; 3]; 3] = Default::default();
    for c in 0..source_counts.len() {
        let r = thresholds.group(source_counts[c]).index();
        let k = thresholds.group(target_counts[c]).index();
        cells[r][k].push(c);
    }
    Ok(cells)
}

pub fn nine_group_matrix(
    source_counts: &[usize],
    target_counts: &[usize],
    per_class_correct: &[usize],
    per_class_totals: &[usize],
    thresholds: &GroupThresholds,
) -> Result<NineGroupMatrix> {
    check_dims(source_counts.len(), per_class_correct.len())?;
    check_dims(source_counts.len(), per_class_totals.len())?;
    let cells = nine_group_members(source_counts, target_counts, thresholds)?;
    let mut out = [[None; 3]; 3];
    for (r, row) in cells.iter().enumerate() {
        for (k, members) in row.iter().enumerate() {
            out[r][k] = aggregate(
                members.iter().copied(),
                per_class_correct,
                per_class_totals,
                GroupWeighting::Sample,
            );
        }
    }
    Ok(out)
}

/// Mean over classes of the cosine distance between the class's source and
/// target embedding centroids. Classes absent from either domain, or with a
/// zero centroid, are skipped.
pub fn domain_gap<T: Scalar>(
    embeddings: &[Vec<T>],
    labels: &[usize],
    domains: &[DomainTag],
) -> Result<f64> {
    if embeddings.len() != labels.len() || embeddings.len() != domains.len() {
        return Err(Error::InvalidInput(
            "embeddings, labels and domains differ in length".into(),
        ));
    }
    let Some(first) = embeddings.first() else {
        return Err(Error::Undefined("no embeddings".into()));
    };
    let dim = first.len();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    // [class][domain] -> (sum, count)
    let mut sums = vec![[(vec![0.0f64; dim], 0usize), (vec![0.0f64; dim], 0usize)]; num_classes];
    for ((e, &y), &d) in embeddings.iter().zip(labels).zip(domains) {
        check_dims(dim, e.len())?;
        let slot = &mut sums[y][d.as_u8() as usize];
        slot.0
            .iter_mut()
            .zip(e)
            .for_each(|(s, &x)| *s += x.as_f64());
        slot.1 += 1;
    }
    let mut gaps = Vec::new();
    for [(src, ns), (tgt, nt)] in &sums {
        if *ns == 0 || *nt == 0 {
            continue;
        }
        let a: Vec<f64> = src.iter().map(|x| x / *ns as f64).collect();
        let b: Vec<f64> = tgt.iter().map(|x| x / *nt as f64).collect();
        let (na, nb) = (crate::scalar::norm(&a), crate::scalar::norm(&b));
        if na <= 1e-12 || nb <= 1e-12 {
            continue;
        }
        let cos = (crate::scalar::dot(&a, &b) / (na * nb)).clamp(-1.0, 1.0);
        gaps.push(1.0 - cos);
    }
    if gaps.is_empty() {
        return Err(Error::Undefined(
            "no class has samples in both domains".into(),
        ));
    }
    Ok(gaps.iter().sum::<f64>() / gaps.len() as f64)
}

/// Per-class tallies from one evaluation pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassTally {
    pub top1_correct: Vec<usize>,
    pub top5_correct: Vec<usize>,
    pub totals: Vec<usize>,
}

impl ClassTally {
    pub fn total(&self) -> usize {
        self.totals.iter().sum()
    }

    pub fn top1(&self) -> f64 {
        self.top1_correct.iter().sum::<usize>() as f64 / self.total() as f64
    }

    pub fn top5(&self) -> f64 {
        self.top5_correct.iter().sum::<usize>() as f64 / self.total() as f64
    }
}

pub fn tally<T: Scalar>(logit_rows: &[Vec<T>], labels: &[usize], num_classes: usize) -> ClassTally {
    let k5 = 5.min(num_classes);
    let mut t = ClassTally {
        top1_correct: vec![0; num_classes],
        top5_correct: vec![0; num_classes],
        totals: vec![0; num_classes],
    };
    for (row, &y) in logit_rows.iter().zip(labels) {
        t.totals[y] += 1;
        let rank = rank_of(row, y);
        t.top1_correct[y] += usize::from(rank < 1);
        t.top5_correct[y] += usize::from(rank < k5);
    }
    t
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub top1_all: f64,
    /// Top-min(5, C).
    pub top5_all: f64,
    pub group_top1: GroupAccuracy,
    pub group_weighting: GroupWeighting,
    pub group_class_counts: GroupClassCounts,
    /// Rows: source group; columns: target group; head, medium, tail.
    pub nine_group: NineGroupMatrix,
    /// `None` for classes without test samples.
    pub per_class_top1: Vec<Option<f64>>,
    /// Gap measured on raw image features.
    pub domain_gap_before: Option<f64>,
    /// Gap measured on projected image embeddings.
    pub domain_gap_after: Option<f64>,
    pub image_only: bool,
    pub num_test: usize,
    pub config_fingerprint: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupClassCounts {
    pub head: usize,
    pub medium: usize,
    pub tail: usize,
}

/// Options for [`evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub thresholds: GroupThresholds,
    pub weighting: GroupWeighting,
    pub text: InferenceText,
    pub config_fingerprint: String,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            thresholds: GroupThresholds::default(),
            weighting: GroupWeighting::Sample,
            text: InferenceText::SampleText,
            config_fingerprint: String::new(),
            seed: 0,
        }
    }
}

/// Training-set context an evaluation needs.
pub struct TrainContext<'a, T> {
    pub source_counts: &'a [usize],
    pub target_counts: &'a [usize],
    /// Training sets for the domain-gap diagnostic, when available.
    pub gap_data: Option<(&'a Dataset<T>, &'a Dataset<T>)>,
}

/// Logits of every sample in a dataset.
pub fn predict_dataset<T: Scalar>(
    params: &ModelParams<T>,
    fusion: FusionConfig,
    data: &Dataset<T>,
    text: InferenceText,
) -> Result<Vec<Vec<T>>> {
    data.samples()
        .iter()
        .map(|s| Ok(infer(params, fusion, s, text)?.logits))
        .collect()
}

/// Projected image embedding of every sample.
pub fn embed_dataset<T: Scalar>(params: &ModelParams<T>, data: &Dataset<T>) -> Result<Vec<Vec<T>>> {
    data.samples()
        .iter()
        .map(|s| {
            Ok(crate::model::encode_image(params, &s.image_feature)?
                .vector
                .into_vec())
        })
        .collect()
}

/// Full evaluation of a model on a test set.
pub fn evaluate<T: Scalar>(
    params: &ModelParams<T>,
    fusion: FusionConfig,
    test: &Dataset<T>,
    train: &TrainContext<'_, T>,
    options: &EvalOptions,
) -> Result<MetricsReport> {
    options.thresholds.validate()?;
    let dims = params.dims();
    check_dims(dims.feature_dim, test.feature_dim())?;
    check_dims(dims.text_dim, test.text_dim())?;
    check_dims(dims.num_classes, test.num_classes())?;
    check_dims(dims.num_classes, train.target_counts.len())?;
    check_dims(dims.num_classes, train.source_counts.len())?;
    if test.is_empty() {
        return Err(Error::InvalidInput("empty test set".into()));
    }

    let logits = predict_dataset(params, fusion, test, options.text)?;
    let labels: Vec<usize> = test.samples().iter().map(|s| s.label).collect();
    let t = tally(&logits, &labels, dims.num_classes);

    let groups = assign_groups(train.target_counts, &options.thresholds);
    let group_top1 = group_accuracy(&t.top1_correct, &t.totals, &groups, options.weighting)?;
    let count = |g| groups.iter().filter(|&&x| x == g).count();
    let nine_group = nine_group_matrix(
        train.source_counts,
        train.target_counts,
        &t.top1_correct,
        &t.totals,
        &options.thresholds,
    )?;
    let per_class_top1 = t
        .top1_correct
        .iter()
        .zip(&t.totals)
        .map(|(&c, &n)| (n > 0).then(|| c as f64 / n as f64))
        .collect();

    let (mut gap_before, mut gap_after) = (None, None);
    if let Some((src, tgt)) = train.gap_data {
        let all: Vec<_> = src.samples().iter().chain(tgt.samples()).collect();
        let labels: Vec<usize> = all.iter().map(|s| s.label).collect();
        let domains: Vec<DomainTag> = all.iter().map(|s| s.domain).collect();
        let raw: Vec<Vec<T>> = all
            .iter()
            .map(|s| s.image_feature.as_slice().to_vec())
            .collect();
        let projected: Vec<Vec<T>> = embed_dataset(params, src)?
            .into_iter()
            .chain(embed_dataset(params, tgt)?)
            .collect();
        gap_before = domain_gap(&raw, &labels, &domains).ok();
        gap_after = domain_gap(&projected, &labels, &domains).ok();
    }

    Ok(MetricsReport {
        top1_all: t.top1(),
        top5_all: t.top5(),
        group_top1,
        group_weighting: options.weighting,
        group_class_counts: GroupClassCounts {
            head: count(ClassGroup::Head),
            medium: count(ClassGroup::Medium),
            tail: count(ClassGroup::Tail),
        },
        nine_group,
        per_class_top1,
        domain_gap_before: gap_before,
        domain_gap_after: gap_after,
        image_only: options.text == InferenceText::ImageOnly,
        num_test: test.len(),
        config_fingerprint: options.config_fingerprint.clone(),
        seed: options.seed,
    })
}

impl MetricsReport {
    /// Pretty JSON with keys in declaration order.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Projection {
    #[default]
    None,
    Pca2d,
}

/// Writes one CSV row per sample: `id,label,domain,group,v0..vK`, where the
/// values are the projected image embedding or its 2-D PCA projection and
/// `group` is the label's target-count group.
pub fn export_embeddings<T: Scalar>(
    params: &ModelParams<T>,
    data: &Dataset<T>,
    groups: &[ClassGroup],
    path: &Path,
    projection: Projection,
) -> Result<()> {
    check_dims(data.num_classes(), groups.len())?;
    let mut rows: Vec<Vec<f64>> = embed_dataset(params, data)?
        .into_iter()
        .map(|r| r.into_iter().map(Scalar::as_f64).collect())
        .collect();
    if projection == Projection::Pca2d {
        let pca = Pca::fit(&rows, 2)?;
        rows = rows.iter().map(|r| pca.project(r)).collect();
    }
    let width = rows.first().map_or(0, Vec::len);
    let mut out = String::from("id,label,domain,group");
    for k in 0..width {
        write!(out, ",v{k}").unwrap();
    }
    out.push('\n');
    for (s, row) in data.samples().iter().zip(&rows) {
        write!(out, "{},{},{},{}", s.id, s.label, s.domain, groups[s.label]).unwrap();
        for x in row {
            write!(out, ",{x}").unwrap();
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::write(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn topk_examples() {
        let rows = vec![vec![2.0, 1.0], vec![0.0, 3.0]];
        assert_eq!(topk_accuracy(&rows, &[0, 1], 1).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&rows, &[1, 0], 2).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&[vec![1.0, 1.0]], &[1], 1).unwrap(), 0.0);
        assert_eq!(topk_accuracy(&[vec![1.0, 1.0]], &[0], 1).unwrap(), 1.0);
    }

    #[test]
    fn topk_errors() {
        let rows = vec![vec![2.0, 1.0]];
        assert!(topk_accuracy(&rows, &[0, 1], 1).is_err());
        assert!(topk_accuracy(&rows, &[0], 0).is_err());
        assert!(topk_accuracy(&rows, &[0], 3).is_err());
    }

    #[test]
    fn group_thresholds() {
        let g = assign_groups(&[71, 70, 15, 14], &GroupThresholds::default());
        assert_eq!(
            g,
            vec![
                ClassGroup::Head,
                ClassGroup::Medium,
                ClassGroup::Medium,
                ClassGroup::Tail
            ]
        );
        assert!(assign_groups(&[100; 4], &GroupThresholds::default())
            .iter()
            .all(|&x| x == ClassGroup::Head));
        assert_eq!(
            assign_groups(&[0], &GroupThresholds::default()),
            vec![ClassGroup::Tail]
        );
    }

    #[test]
    fn group_accuracy_examples() {
        let g = group_accuracy(&[4], &[4], &[ClassGroup::Head], GroupWeighting::Sample).unwrap();
        assert_eq!(
            g,
            GroupAccuracy {
                head: Some(1.0),
                medium: None,
                tail: None
            }
        );

        let groups = [ClassGroup::Head, ClassGroup::Medium, ClassGroup::Tail];
        let g = group_accuracy(&[3, 3, 3], &[4, 4, 4], &groups, GroupWeighting::Sample).unwrap();
        assert_eq!(
            (g.head, g.medium, g.tail),
            (Some(0.75), Some(0.75), Some(0.75))
        );

        let g = group_accuracy(
            &[0, 5],
            &[5, 5],
            &[ClassGroup::Tail; 2],
            GroupWeighting::Sample,
        )
        .unwrap();
        assert_eq!(g.tail, Some(0.5));
    }

    #[test]
    fn class_mean_weighting_differs_from_sample() {
        let tail = [ClassGroup::Tail; 2];
        let s = group_accuracy(&[0, 9], &[1, 9], &tail, GroupWeighting::Sample).unwrap();
        let c = group_accuracy(&[0, 9], &[1, 9], &tail, GroupWeighting::ClassMean).unwrap();
        assert_eq!(s.tail, Some(0.9));
        assert_eq!(c.tail, Some(0.5));
    }

    #[test]
    fn nine_group_examples() {
        let th = GroupThresholds::default();
        let m = nine_group_matrix(&[100, 200], &[80, 90], &[1, 2], &[2, 2], &th).unwrap();
        assert_eq!(m[0][0], Some(0.75));
        let defined = m.iter().flatten().filter(|c| c.is_some()).count();
        assert_eq!(defined, 1);

        let cells = nine_group_members(&[100], &[5], &th).unwrap();
        assert_eq!(
            cells[ClassGroup::Head.index()][ClassGroup::Tail.index()],
            vec![0]
        );
    }

    #[test]
    fn gap_examples() {
        let e = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        let d = [DomainTag::Source, DomainTag::Target];
        assert_eq!(domain_gap(&e, &[0, 0], &d).unwrap(), 0.0);
        let anti = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        assert_eq!(domain_gap(&anti, &[0, 0], &d).unwrap(), 2.0);

        // class 0: cos = 0.8 → gap 0.2; class 1: cos = 0.6 → gap 0.4
        let e = vec![
            vec![1.0, 0.0],
            vec![0.8, 0.6],
            vec![1.0, 0.0],
            vec![0.6, 0.8],
        ];
        let d = [
            DomainTag::Source,
            DomainTag::Target,
            DomainTag::Source,
            DomainTag::Target,
        ];
        assert!((domain_gap(&e, &[0, 0, 1, 1], &d).unwrap() - 0.3).abs() < 1e-12);

        let only_source = vec![vec![1.0, 0.0]];
        assert!(matches!(
            domain_gap(&only_source, &[0], &[DomainTag::Source]),
            Err(Error::Undefined(_))
        ));
    }

    fn rotate(e: &[f64], angle: f64) -> Vec<f64> {
        let (s, c) = angle.sin_cos();
        let mut out = e.to_vec();
        for k in (0..e.len() - 1).step_by(2) {
            out[k] = c * e[k] - s * e[k + 1];
            out[k + 1] = s * e[k] + c * e[k + 1];
        }
        out
    }

    proptest! {
        #[test]
        fn topk_monotone(rows in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 6), 1..20), seed in 0usize..6) {
            let labels: Vec<usize> = (0..rows.len()).map(|i| (i + seed) % 6).collect();
            for k in 1..6 {
                prop_assert!(topk_accuracy(&rows, &labels, k + 1).unwrap() >= topk_accuracy(&rows, &labels, k).unwrap());
            }
            prop_assert_eq!(topk_accuracy(&rows, &labels, 6).unwrap(), 1.0);
        }

        #[test]
        fn gap_rotation_invariant(
            e in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 4), 8),
            angle in 0.0..std::f64::consts::TAU,
        ) {
            let labels = [0, 0, 1, 1, 2, 2, 3, 3];
            let domains: Vec<DomainTag> = (0..8).map(|i| if i % 2 == 0 { DomainTag::Source } else { DomainTag::Target }).collect();
            let rotated: Vec<Vec<f64>> = e.iter().map(|r| rotate(r, angle)).collect();
            if let (Ok(a), Ok(b)) = (domain_gap(&e, &labels, &domains), domain_gap(&rotated, &labels, &domains)) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn groups_decompose_overall(
            correct_frac in prop::collection::vec(0.0..=1.0f64, 12),
            totals in prop::collection::vec(0usize..30, 12),
            src in prop::collection::vec(0usize..150, 12),
            tgt in prop::collection::vec(0usize..150, 12),
        ) {
            prop_assume!(totals.iter().sum::<usize>() > 0);
            let correct: Vec<usize> = correct_frac.iter().zip(&totals).map(|(f, &t)| (f * t as f64).floor() as usize).collect();
            let th = GroupThresholds::default();
            let overall = correct.iter().sum::<usize>() as f64 / totals.iter().sum::<usize>() as f64;
            let groups = assign_groups(&tgt, &th);
            let g = group_accuracy(&correct, &totals, &groups, GroupWeighting::Sample).unwrap();
            let mut weighted = 0.0;
            for grp in ClassGroup::ALL {
                let n: usize = (0..12).filter(|&c| groups[c] == grp).map(|c| totals[c]).sum();
                if let Some(a) = g.get(grp) { weighted += a * n as f64; }
            }
            prop_assert!((weighted / totals.iter().sum::<usize>() as f64 - overall).abs() < 1e-12);

            let m = nine_group_matrix(&src, &tgt, &correct, &totals, &th).unwrap();
            let cells = nine_group_members(&src, &tgt, &th).unwrap();
            let mut agg = 0.0;
            let mut seen = Vec::new();
            for r in 0..3 { for k in 0..3 {
                seen.extend(cells[r][k].iter().copied());
                let n: usize = cells[r][k].iter().map(|&c| totals[c]).sum();
                if let Some(a) = m[r][k] { agg += a * n as f64; }
            }}
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..12).collect::<Vec<_>>());
            prop_assert!((agg / totals.iter().sum::<usize>() as f64 - overall).abs() < 1e-12);
        }
    }
}
