//! Segmentation metrics from a 2x2 pixel contingency table, and per-dataset
//! aggregation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::{predict_image, Segmenter};
use crate::networks::UNetSpec;
use crate::types::{binarize, BinaryMask, LabeledSample};

/// Pixel counts: `n11` predicted and true foreground, `n10` predicted only,
/// `n01` true only, `n00` neither.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub n11: u64,
    pub n10: u64,
    pub n01: u64,
    pub n00: u64,
}

impl ContingencyTable {
    pub fn total(&self) -> u64 {
        self.n11 + self.n10 + self.n01 + self.n00
    }

    /// Joint counts as `[[n00, n01], [n10, n11]]` indexed `[pred][gt]`.
    fn cells(&self) -> [[u64; 2]; 2] {
        [[self.n00, self.n01], [self.n10, self.n11]]
    }
}

pub fn contingency(pred: &BinaryMask, gt: &BinaryMask) -> Result<ContingencyTable> {
    if pred.dims() != gt.dims() {
        return Err(Error::shape("contingency operands", gt.dims(), pred.dims()));
    }
    let mut t = ContingencyTable::default();
    for (&p, &g) in pred.pixels().iter().zip(gt.pixels()) {
        match (p != 0, g != 0) {
            (true, true) => t.n11 += 1,
            (true, false) => t.n10 += 1,
            (false, true) => t.n01 += 1,
            (false, false) => t.n00 += 1,
        }
    }
    Ok(t)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Foreground IoU, DSC and pixel accuracy. An empty union counts as a
/// perfect match.
pub fn iou_dsc_acc(t: &ContingencyTable) -> (f64, f64, f64) {
    let iou = ratio(t.n11, t.n11 + t.n10 + t.n01);
    let dsc = ratio(2 * t.n11, 2 * t.n11 + t.n10 + t.n01);
    let acc = ratio(t.n11 + t.n00, t.total());
    (iou, dsc, acc)
}

/// Mean of foreground and background IoU.
pub fn two_class_miou(t: &ContingencyTable) -> f64 {
    let bg = ratio(t.n00, t.n00 + t.n10 + t.n01);
    (iou_dsc_acc(t).0 + bg) / 2.0
}

fn entropy(counts: &[u64], n: f64) -> f64 {
    counts.iter().filter(|&&c| c > 0).map(|&c| {
        let p = c as f64 / n;
        -p * p.ln()
    }).sum()
}

/// Variation of information in nats, and divided by the joint entropy
/// (0 when the joint entropy is 0).
pub fn voi(t: &ContingencyTable) -> (f64, f64) {
    let n = t.total();
    if n == 0 {
        return (0.0, 0.0);
    }
    let n = n as f64;
    let c = t.cells();
    let h_pred = entropy(&[c[0][0] + c[0][1], c[1][0] + c[1][1]], n);
    let h_gt = entropy(&[c[0][0] + c[1][0], c[0][1] + c[1][1]], n);
    let h_joint = entropy(&[c[0][0], c[0][1], c[1][0], c[1][1]], n);
    let v = (2.0 * h_joint - h_pred - h_gt).max(0.0);
    let norm = if h_joint > 0.0 { v / h_joint } else { 0.0 };
    (v, norm)
}

fn pairs(n: u64) -> u128 {
    let n = n as u128;
    n * n.saturating_sub(1) / 2
}

/// Adjusted Rand index of the two binary partitions. When both partitions
/// are trivial the index is undefined; it is reported as 1.
pub fn ari(t: &ContingencyTable) -> Result<f64> {
    let n = t.total();
    if n < 2 {
        return Err(Error::DegenerateInput(format!("adjusted Rand index needs at least 2 pixels, got {n}")));
    }
    let c = t.cells();
    let index: u128 = c.iter().flatten().map(|&x| pairs(x)).sum();
    let rows = pairs(c[0][0] + c[0][1]) + pairs(c[1][0] + c[1][1]);
    let cols = pairs(c[0][0] + c[1][0]) + pairs(c[0][1] + c[1][1]);
    let total = pairs(n) as f64;
    let expected = rows as f64 * cols as f64 / total;
    let max = (rows + cols) as f64 / 2.0;
    if max == expected {
        return Ok(1.0);
    }
    Ok((index as f64 - expected) / (max - expected))
}

/// All metrics of one image, as fractions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    pub miou: f64,
    pub dsc: f64,
    pub acc: f64,
    pub voi: f64,
    pub voi_normalized: f64,
    pub ari: f64,
}

impl ImageMetrics {
    pub fn compute(id: impl Into<String>, pred: &BinaryMask, gt: &BinaryMask, two_class: bool) -> Result<Self> {
        let t = contingency(pred, gt)?;
        let (iou, dsc, acc) = iou_dsc_acc(&t);
        let (v, vn) = voi(&t);
        Ok(Self {
            id: id.into(),
            miou: if two_class { two_class_miou(&t) } else { iou },
            dsc,
            acc,
            voi: v,
            voi_normalized: vn,
            ari: ari(&t)?,
        })
    }

    fn values(&self) -> [f64; 6] {
        [self.miou, self.dsc, self.acc, self.voi, self.voi_normalized, self.ari]
    }
}

/// Unweighted means over images.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub miou: f64,
    pub dsc: f64,
    pub acc: f64,
    pub voi: f64,
    pub voi_normalized: f64,
    pub ari: f64,
}

impl Aggregate {
    fn from_values(v: [f64; 6]) -> Self {
        Self { miou: v[0], dsc: v[1], acc: v[2], voi: v[3], voi_normalized: v[4], ari: v[5] }
    }

    /// Every value multiplied by 100 and rounded to two decimals.
    pub fn percent(&self) -> Self {
        let r = |x: f64| (x * 10_000.0).round() / 100.0;
        Self::from_values([self.miou, self.dsc, self.acc, self.voi, self.voi_normalized, self.ari].map(r))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub images: Vec<ImageMetrics>,
    pub aggregate: Aggregate,
}

pub fn aggregate(images: Vec<ImageMetrics>) -> Result<MetricsRecord> {
    if images.is_empty() {
        return Err(Error::EmptyDataset("no images to aggregate".into()));
    }
    let mut sum = [0.0; 6];
    for m in &images {
        for (s, v) in sum.iter_mut().zip(m.values()) {
            *s += v;
        }
    }
    let n = images.len() as f64;
    Ok(MetricsRecord { aggregate: Aggregate::from_values(sum.map(|s| s / n)), images })
}

/// Settings for whole-image evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub threshold: f32,
    /// Report the two-class mean IoU instead of foreground IoU.
    pub two_class_miou: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { threshold: 0.5, two_class_miou: false }
    }
}

/// Segments every sample patch-wise and scores the binarized stitched maps.
pub fn evaluate_samples(
    seg: &Segmenter,
    unet: &UNetSpec,
    samples: &[LabeledSample],
    patch: usize,
    stride: usize,
    cfg: &MetricsConfig,
) -> Result<MetricsRecord> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("evaluation set is empty".into()));
    }
    let mut images = Vec::with_capacity(samples.len());
    for s in samples {
        let prob = predict_image(seg, unet, &s.image, patch, stride, 8)?;
        let pred = binarize(&prob, cfg.threshold);
        images.push(ImageMetrics::compute(&s.id, &pred, &s.mask, cfg.two_class_miou)?);
    }
    aggregate(images)
}

/// Evaluation report as written to disk: aggregates and per-image values
/// in percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: serde_json::Value,
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
    pub checkpoint: String,
    pub aggregate: Aggregate,
    pub images: Vec<ImageMetrics>,
}

impl MetricsReport {
    pub fn new(record: &MetricsRecord, config: serde_json::Value, config_hash: String, seed: u64, checkpoint: &Path) -> Self {
        let images = record
            .images
            .iter()
            .map(|m| {
                let p = Aggregate::from_values(m.values()).percent();
                ImageMetrics {
                    id: m.id.clone(),
                    miou: p.miou,
                    dsc: p.dsc,
                    acc: p.acc,
                    voi: p.voi,
                    voi_normalized: p.voi_normalized,
                    ari: p.ari,
                }
            })
            .collect();
        Self {
            config,
            config_hash,
            seed,
            code_version: crate::CODE_VERSION.to_string(),
            checkpoint: checkpoint.display().to_string(),
            aggregate: record.aggregate.percent(),
            images,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask(rows: &[&[u8]]) -> BinaryMask {
        BinaryMask::new(rows.len(), rows[0].len(), rows.concat()).unwrap()
    }

    fn table(n11: u64, n10: u64, n01: u64, n00: u64) -> ContingencyTable {
        ContingencyTable { n11, n10, n01, n00 }
    }

    #[test]
    fn contingency_examples() {
        let ones = mask(&[&[1, 1], &[1, 1]]);
        assert_eq!(contingency(&ones, &ones).unwrap(), table(4, 0, 0, 0));
        let gt = mask(&[&[1, 0], &[1, 0]]);
        let comp = mask(&[&[0, 1], &[0, 1]]);
        let t = contingency(&comp, &gt).unwrap();
        assert_eq!((t.n11, t.n00), (0, 0));
        assert_eq!(contingency(&mask(&[&[1, 1], &[0, 0]]), &gt).unwrap(), table(1, 1, 1, 1));
        assert!(matches!(contingency(&ones, &BinaryMask::zeros(2, 3)), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn overlap_examples() {
        assert_eq!(iou_dsc_acc(&table(3, 0, 0, 5)), (1.0, 1.0, 1.0));
        assert_eq!(iou_dsc_acc(&table(0, 0, 0, 9)), (1.0, 1.0, 1.0));
        let (iou, dsc, acc) = iou_dsc_acc(&table(1, 1, 1, 1));
        assert!((iou - 1.0 / 3.0).abs() < 1e-15 && dsc == 0.5 && acc == 0.5);
    }

    #[test]
    fn voi_examples() {
        assert_eq!(voi(&table(3, 0, 0, 5)).0, 0.0);
        let (v, n) = voi(&table(1, 1, 1, 1));
        assert!((v - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((n - 1.0).abs() < 1e-12);
        // Product counts: pred 1/4 foreground, gt 1/2 foreground.
        let (v, _) = voi(&table(2, 2, 6, 6));
        let h = |p: f64| -p * p.ln() - (1.0 - p) * (1.0 - p).ln();
        assert!((v - (h(0.25) + h(0.5))).abs() < 1e-12);
    }

    #[test]
    fn ari_examples() {
        assert_eq!(ari(&table(3, 0, 0, 5)).unwrap(), 1.0);
        assert_eq!(ari(&table(0, 3, 5, 0)).unwrap(), 1.0);
        assert!((ari(&table(1, 1, 1, 1)).unwrap() + 0.5).abs() < 1e-15);
        assert!(matches!(ari(&table(1, 0, 0, 0)), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn aggregation() {
        let m = |dsc| ImageMetrics { id: String::new(), miou: 0.0, dsc, acc: 0.0, voi: 0.0, voi_normalized: 0.0, ari: 0.0 };
        let r = aggregate(vec![m(0.8), m(0.6)]).unwrap();
        assert_eq!(r.aggregate.percent().dsc, 70.0);
        assert!(matches!(aggregate(vec![]), Err(Error::EmptyDataset(_))));
        let gt = mask(&[&[1, 0], &[0, 0]]);
        let perfect = aggregate(vec![ImageMetrics::compute("a", &gt, &gt, false).unwrap()]).unwrap().aggregate.percent();
        assert_eq!((perfect.miou, perfect.dsc, perfect.acc, perfect.ari, perfect.voi), (100.0, 100.0, 100.0, 100.0, 0.0));
    }

    #[test]
    fn two_class_variant_averages_both_classes() {
        let t = table(1, 1, 1, 1);
        assert!((two_class_miou(&t) - 1.0 / 3.0).abs() < 1e-15);
        assert!((two_class_miou(&table(2, 0, 1, 1)) - (2.0 / 3.0 + 0.5) / 2.0).abs() < 1e-15);
    }

    fn random_mask(rng: &mut ChaCha8Rng, p: f64) -> BinaryMask {
        BinaryMask::from_fn(8, 8, |_, _| rng.gen_bool(p))
    }

    proptest! {
        #[test]
        fn iou_dsc_identity(seed in any::<u64>(), p in 0.0f64..1.0, q in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = contingency(&random_mask(&mut rng, p), &random_mask(&mut rng, q)).unwrap();
            let (iou, dsc, _) = iou_dsc_acc(&t);
            prop_assert!((iou - dsc / (2.0 - dsc)).abs() < 1e-12);
        }

        #[test]
        fn ari_is_invariant_under_joint_complement(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = contingency(&random_mask(&mut rng, 0.3), &random_mask(&mut rng, 0.5)).unwrap();
            let flipped = table(t.n00, t.n01, t.n10, t.n11);
            prop_assert!((ari(&t).unwrap() - ari(&flipped).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn voi_is_a_metric(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b, c) = (random_mask(&mut rng, 0.3), random_mask(&mut rng, 0.5), random_mask(&mut rng, 0.7));
            let d = |x: &BinaryMask, y: &BinaryMask| voi(&contingency(x, y).unwrap()).0;
            prop_assert!((d(&a, &b) - d(&b, &a)).abs() < 1e-12);
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
            prop_assert!(d(&a, &b) >= 0.0);
        }
    }
}
