//! Four-class stage classification from a fundus image, its vessel mask, or
//! both streams fused.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use vessel_nn::{join, Adam, Dropout, LeakyRelu, Linear, LinearCache, Module, Param, Tensor};

use crate::data::images_to_tensor;
use crate::error::{Error, Result};
use crate::io::{list_images, load_image, save_image, save_prob};
use crate::networks::{Encoder, EncoderCache, UNetSpec};
use crate::rng::{item_rng, RngStreams, Stream};
use crate::synth::{apply_domain_shift, render_vessel_tree, DomainShiftSpec, SynthConfig};
use crate::trainer::{load_checkpoint, predict_image, Segmenter};
use crate::types::{ProbMap, RasterImage};

pub const N_CLASSES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RopStage {
    NoRop,
    Stage1,
    Stage2,
    Stage3,
}

impl RopStage {
    pub const ALL: [RopStage; N_CLASSES] = [Self::NoRop, Self::Stage1, Self::Stage2, Self::Stage3];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

/// Which streams the classifier consumes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    Image,
    Mask,
    #[default]
    Fusion,
}

impl InputMode {
    pub const ALL: [InputMode; 3] = [Self::Image, Self::Mask, Self::Fusion];

    fn uses_image(self) -> bool {
        self != Self::Mask
    }

    fn uses_mask(self) -> bool {
        self != Self::Image
    }
}

impl std::str::FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "image" => Ok(Self::Image),
            "mask" => Ok(Self::Mask),
            "fusion" => Ok(Self::Fusion),
            _ => Err(Error::Config(format!("unknown input mode `{s}` (expected image, mask or fusion)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub mode: InputMode,
    /// Pooling stages of each stream's convolutional backbone.
    pub backbone_depth: usize,
    pub base_filters: usize,
    /// Dropout rate on the fused feature vector.
    pub contamination_rate: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    /// Side length of generated staged images.
    pub image_size: usize,
    pub n_train_per_class: usize,
    pub n_test_per_class: usize,
    /// Fraction of each class held out when a dataset directory is split.
    pub test_fraction: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            mode: InputMode::Fusion,
            backbone_depth: 3,
            base_filters: 8,
            contamination_rate: 0.2,
            epochs: 30,
            batch_size: 16,
            lr: 1e-3,
            image_size: 128,
            n_train_per_class: 24,
            n_test_per_class: 12,
            test_fraction: 0.3,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.contamination_rate) {
            return Err(Error::Config("contamination_rate must be in [0, 1)".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::Config("classifier epochs, batch size and learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config("test_fraction must be in [0, 1)".into()));
        }
        self.backbone(1).validate()?;
        self.backbone(1).check_input(self.image_size, self.image_size)
    }

    fn backbone(&self, in_channels: usize) -> UNetSpec {
        UNetSpec { depth: self.backbone_depth, base_filters: self.base_filters, in_channels, out_channels: 1 }
    }

    /// Feature length of one stream.
    pub fn stream_features(&self) -> usize {
        self.backbone(1).bottleneck_channels()
    }
}

/// One classification example. The mask is produced by a segmentation
/// model, never drawn from ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifiedSample {
    pub id: String,
    pub image: RasterImage,
    pub mask: Option<ProbMap>,
    pub label: RopStage,
}

/// Renders a staged corpus: vessel tortuosity and branching grow with the
/// stage, and all images carry the target-domain shift.
pub fn gen_staged_corpus(synth: &SynthConfig, shift: &DomainShiftSpec, n_per_class: usize, split: &str) -> Result<Vec<ClassifiedSample>> {
    let mut out = Vec::with_capacity(n_per_class * N_CLASSES);
    for stage in RopStage::ALL {
        let s = stage.index() as f32;
        let cfg = SynthConfig {
            tortuosity: 0.02 + 0.07 * s,
            branch_depth: 2 + stage.index() / 2,
            n_trees: 2 + stage.index().div_ceil(2),
            ..synth.clone()
        };
        for k in 0..n_per_class {
            let id = format!("{split}_class{}_{k:03}", stage.index());
            let mut rng = item_rng(synth.seed, &id);
            let (img, mask) = render_vessel_tree(&cfg, &mut rng)?;
            let (img, _) = apply_domain_shift(&img, &mask, shift, &mut rng)?;
            out.push(ClassifiedSample { id, image: img, mask: None, label: stage });
        }
    }
    Ok(out)
}

/// Writes `root/class_<k>/images/*.png`, plus `masks/` when present.
pub fn write_staged_corpus(samples: &[ClassifiedSample], root: &Path) -> Result<()> {
    for s in samples {
        let dir = root.join(format!("class_{}", s.label.index()));
        save_image(&s.image, &dir.join("images").join(format!("{}.png", s.id)))?;
        if let Some(m) = &s.mask {
            save_prob(m, &dir.join("masks").join(format!("{}.png", s.id)))?;
        }
    }
    Ok(())
}

/// Reads the layout written by [`write_staged_corpus`]. Masks are loaded
/// when a same-named file exists under `masks/`.
pub fn load_staged_corpus(root: &Path) -> Result<Vec<ClassifiedSample>> {
    let mut out = Vec::new();
    for stage in RopStage::ALL {
        let dir = root.join(format!("class_{}", stage.index()));
        if !dir.exists() {
            continue;
        }
        for path in list_images(&dir.join("images"))? {
            let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let mask_path = dir.join("masks").join(path.file_name().expect("listed file"));
            let mask = if mask_path.exists() {
                let m = load_image(&mask_path)?;
                let (h, w) = m.dims();
                let probs = (0..h * w).map(|i| m.pixels()[i * m.channels()]).collect();
                Some(ProbMap::new(h, w, probs)?)
            } else {
                None
            };
            out.push(ClassifiedSample { id, image: load_image(&path)?, mask, label: stage });
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset(format!("no class_<k>/images under {}", root.display())));
    }
    Ok(out)
}

/// Splits each class into train and test parts: the last
/// `floor(fraction * n)` ids (sorted) of each class go to test.
pub fn split_by_class(mut samples: Vec<ClassifiedSample>, test_fraction: f64) -> (Vec<ClassifiedSample>, Vec<ClassifiedSample>) {
    samples.sort_by(|a, b| (a.label, &a.id).cmp(&(b.label, &b.id)));
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for stage in RopStage::ALL {
        let class: Vec<_> = samples.iter().filter(|s| s.label == stage).cloned().collect();
        let k = (test_fraction * class.len() as f64).floor() as usize;
        let cut = class.len() - k;
        train.extend_from_slice(&class[..cut]);
        test.extend_from_slice(&class[cut..]);
    }
    (train, test)
}

/// Deterministic full-image vessel probabilities from a segmentation
/// checkpoint (the teacher when the checkpoint has one).
pub fn extract_mask(checkpoint: &Path, image: &RasterImage) -> Result<ProbMap> {
    let (trainer, _) = load_checkpoint(checkpoint)?;
    let seg = match &trainer.teacher {
        Some(t) => Segmenter::Teacher(t.clone()),
        None => Segmenter::Student(trainer.student.clone()),
    };
    let patch = trainer.cfg.patch_size;
    predict_image(&seg, &trainer.model.unet, image, patch, trainer.cfg.patch_stride, 8)
}

/// Fills `mask` on every sample with the segmenter's prediction.
pub fn attach_masks(samples: &mut [ClassifiedSample], seg: &Segmenter, unet: &UNetSpec, patch: usize, stride: usize) -> Result<()> {
    for s in samples {
        s.mask = Some(predict_image(seg, unet, &s.image, patch, stride, 8)?);
    }
    Ok(())
}

/// Per-stream convolutional backbone with global average pooling, feature
/// concatenation, contamination dropout and a two-layer head.
#[derive(Clone, Debug)]
pub struct FusionClassifier {
    cfg: FusionConfig,
    image: Option<Encoder>,
    mask: Option<Encoder>,
    fc1: Linear,
    fc2: Linear,
    act: LeakyRelu,
}

struct StreamCache {
    enc: EncoderCache,
    skips: Vec<[usize; 4]>,
    hw: [usize; 2],
}

pub struct ClassifierCache {
    image: Option<StreamCache>,
    mask: Option<StreamCache>,
    drop_mask: Option<Vec<f32>>,
    fc1: LinearCache,
    hidden: Tensor,
    fc2: LinearCache,
}

fn global_avg_pool(z: &Tensor) -> Tensor {
    let [n, c, h, w] = z.shape();
    let inv = 1.0 / (h * w) as f64;
    let mut out = Vec::with_capacity(n * c);
    for i in 0..n {
        for ch in 0..c {
            out.push((z.plane(i, ch).iter().map(|&v| v as f64).sum::<f64>() * inv) as f32);
        }
    }
    Tensor::from_vec([n, c, 1, 1], out)
}

fn softmax(logits: &[f32]) -> [f64; N_CLASSES] {
    let max = logits.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
    let mut p = [0.0; N_CLASSES];
    for (o, &l) in p.iter_mut().zip(logits) {
        *o = (l as f64 - max).exp();
    }
    let sum: f64 = p.iter().sum();
    p.map(|v| v / sum)
}

fn mask_tensor(masks: &[&ProbMap]) -> Tensor {
    let (h, w) = masks[0].dims();
    let mut data = Vec::with_capacity(masks.len() * h * w);
    for m in masks {
        assert_eq!(m.dims(), (h, w), "masks in a batch share dims");
        data.extend_from_slice(m.probs());
    }
    Tensor::from_vec([masks.len(), 1, h, w], data)
}

impl FusionClassifier {
    pub fn new(cfg: &FusionConfig, rng: &mut dyn rand::RngCore) -> Result<Self> {
        cfg.validate()?;
        let image = cfg.mode.uses_image().then(|| Encoder::new(&cfg.backbone(3), rng));
        let mask = cfg.mode.uses_mask().then(|| Encoder::new(&cfg.backbone(1), rng));
        let f = cfg.stream_features();
        let fused = f * (image.is_some() as usize + mask.is_some() as usize);
        Ok(Self { cfg: cfg.clone(), image, mask, fc1: Linear::new(fused, f, rng), fc2: Linear::new(f, N_CLASSES, rng), act: LeakyRelu::new(0.01) })
    }

    pub fn mode(&self) -> InputMode {
        self.cfg.mode
    }

    /// Length of the concatenated feature vector fed to the head.
    pub fn fused_len(&self) -> usize {
        self.fc1.in_features()
    }

    fn stream(enc: &Encoder, x: &Tensor, train: bool) -> (Tensor, StreamCache) {
        let (z, skips, cache) = enc.forward(x, train);
        let shapes = skips.iter().map(|s| s.shape()).collect();
        (global_avg_pool(&z), StreamCache { enc: cache, skips: shapes, hw: [z.h(), z.w()] })
    }

    fn check_inputs(&self, images: Option<&Tensor>, masks: Option<&Tensor>) -> Result<()> {
        if images.is_some() != self.cfg.mode.uses_image() || masks.is_some() != self.cfg.mode.uses_mask() {
            return Err(Error::ModeMismatch(format!(
                "{:?} classifier given image: {}, mask: {}",
                self.cfg.mode,
                images.is_some(),
                masks.is_some()
            )));
        }
        Ok(())
    }

    /// Fused feature vectors `[n, fused_len, 1, 1]`.
    pub fn features(&self, images: Option<&Tensor>, masks: Option<&Tensor>) -> Result<Tensor> {
        self.check_inputs(images, masks)?;
        let fi = images.zip(self.image.as_ref()).map(|(x, e)| Self::stream(e, x, false).0);
        let fm = masks.zip(self.mask.as_ref()).map(|(x, e)| Self::stream(e, x, false).0);
        Ok(match (fi, fm) {
            (Some(a), Some(b)) => Tensor::concat_channels(&a, &b),
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => unreachable!("checked above"),
        })
    }

    /// Class logits from fused features, in evaluation mode.
    pub fn head(&self, fused: &Tensor) -> Tensor {
        self.fc2.infer(&self.act.forward(&self.fc1.infer(fused)))
    }

    /// Logits `[n, 4, 1, 1]`; contamination dropout is active only when
    /// training with an rng.
    pub fn forward(
        &self,
        images: Option<&Tensor>,
        masks: Option<&Tensor>,
        train: bool,
        rng: Option<&mut dyn rand::RngCore>,
    ) -> Result<(Tensor, ClassifierCache)> {
        self.check_inputs(images, masks)?;
        let si = images.zip(self.image.as_ref()).map(|(x, e)| Self::stream(e, x, train));
        let sm = masks.zip(self.mask.as_ref()).map(|(x, e)| Self::stream(e, x, train));
        let fused = match (&si, &sm) {
            (Some((a, _)), Some((b, _))) => Tensor::concat_channels(a, b),
            (Some((a, _)), None) | (None, Some((a, _))) => a.clone(),
            (None, None) => unreachable!("checked above"),
        };
        let (fused, drop_mask) = match rng {
            Some(r) if train && self.cfg.contamination_rate > 0.0 => {
                let m = Dropout::new(self.cfg.contamination_rate).sample_mask(fused.numel(), r);
                (Dropout::apply(&fused, &m), Some(m))
            }
            _ => (fused, None),
        };
        let (h1, fc1) = self.fc1.forward(&fused);
        let hidden = self.act.forward(&h1);
        let (logits, fc2) = self.fc2.forward(&hidden);
        let cache = ClassifierCache { image: si.map(|s| s.1), mask: sm.map(|s| s.1), drop_mask, fc1, hidden, fc2 };
        Ok((logits, cache))
    }

    fn stream_backward(enc: &mut Encoder, cache: StreamCache, dpooled: &Tensor) {
        let [n, c, _, _] = dpooled.shape();
        let [h, w] = cache.hw;
        let inv = 1.0 / (h * w) as f32;
        let mut dz = Tensor::zeros([n, c, h, w]);
        for i in 0..n {
            for ch in 0..c {
                let g = dpooled.sample(i)[ch] * inv;
                let start = (i * c + ch) * h * w;
                dz.data_mut()[start..start + h * w].fill(g);
            }
        }
        let dskips = cache.skips.iter().map(|&s| Tensor::zeros(s)).collect();
        enc.backward(cache.enc, &dz, dskips);
    }

    pub fn backward(&mut self, cache: ClassifierCache, dlogits: &Tensor) {
        let dh = self.fc2.backward(cache.fc2, dlogits);
        let dh1 = self.act.backward(&cache.hidden, &dh);
        let mut dfused = self.fc1.backward(cache.fc1, &dh1);
        if let Some(m) = &cache.drop_mask {
            dfused = Dropout::apply(&dfused, m);
        }
        match (cache.image, cache.mask) {
            (Some(ci), Some(cm)) => {
                let (di, dm) = dfused.split_channels(self.cfg.stream_features());
                Self::stream_backward(self.image.as_mut().expect("image stream"), ci, &di);
                Self::stream_backward(self.mask.as_mut().expect("mask stream"), cm, &dm);
            }
            (Some(ci), None) => Self::stream_backward(self.image.as_mut().expect("image stream"), ci, &dfused),
            (None, Some(cm)) => Self::stream_backward(self.mask.as_mut().expect("mask stream"), cm, &dfused),
            (None, None) => unreachable!("at least one stream"),
        }
    }

    /// Class probabilities for one example, in evaluation mode.
    pub fn classify(&self, image: Option<&RasterImage>, mask: Option<&ProbMap>) -> Result<[f64; N_CLASSES]> {
        let x = image.map(|i| images_to_tensor(&[i]));
        let m = mask.map(|m| mask_tensor(&[m]));
        let (logits, _) = self.forward(x.as_ref(), m.as_ref(), false, None)?;
        Ok(softmax(logits.data()))
    }

    fn batch_inputs(&self, batch: &[&ClassifiedSample]) -> Result<(Option<Tensor>, Option<Tensor>)> {
        let images = self.cfg.mode.uses_image().then(|| images_to_tensor(&batch.iter().map(|s| &s.image).collect::<Vec<_>>()));
        let masks = if self.cfg.mode.uses_mask() {
            let ms = batch
                .iter()
                .map(|s| s.mask.as_ref().ok_or_else(|| Error::ModeMismatch(format!("sample `{}` has no vessel mask", s.id))))
                .collect::<Result<Vec<_>>>()?;
            Some(mask_tensor(&ms))
        } else {
            None
        };
        Ok((images, masks))
    }

    /// Predicted class per sample.
    pub fn predict(&self, samples: &[ClassifiedSample]) -> Result<Vec<RopStage>> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(16) {
            let refs: Vec<&ClassifiedSample> = chunk.iter().collect();
            let (x, m) = self.batch_inputs(&refs)?;
            let (logits, _) = self.forward(x.as_ref(), m.as_ref(), false, None)?;
            for i in 0..chunk.len() {
                let p = softmax(logits.sample(i));
                let best = (0..N_CLASSES).max_by(|&a, &b| p[a].total_cmp(&p[b])).expect("non-empty");
                out.push(RopStage::from_index(best).expect("valid index"));
            }
        }
        Ok(out)
    }
}

impl Module for FusionClassifier {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        if let Some(e) = &self.image {
            e.visit(&join(prefix, "image"), f);
        }
        if let Some(e) = &self.mask {
            e.visit(&join(prefix, "mask"), f);
        }
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        if let Some(e) = &mut self.image {
            e.visit_mut(&join(prefix, "image"), f);
        }
        if let Some(e) = &mut self.mask {
            e.visit_mut(&join(prefix, "mask"), f);
        }
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy_grad(logits: &Tensor, labels: &[RopStage]) -> (f64, Tensor) {
    let n = labels.len();
    let mut grad = Tensor::zeros(logits.shape());
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let p = softmax(logits.sample(i));
        loss -= p[y.index()].max(1e-12).ln() / n as f64;
        for (k, g) in grad.sample_mut(i).iter_mut().enumerate() {
            *g = ((p[k] - (k == y.index()) as u8 as f64) / n as f64) as f32;
        }
    }
    (loss, grad)
}

pub fn train_classifier(cfg: &FusionConfig, train: &[ClassifiedSample], seed: u64) -> Result<FusionClassifier> {
    if train.is_empty() {
        return Err(Error::EmptyDataset("no classification training samples".into()));
    }
    let mut rng = RngStreams::new(seed);
    let mut clf = FusionClassifier::new(cfg, rng.get(Stream::Init))?;
    let mut opt = Adam::new(cfg.lr, 0.9, 0.999);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng.get(Stream::Data));
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&ClassifiedSample> = chunk.iter().map(|&i| &train[i]).collect();
            let labels: Vec<RopStage> = batch.iter().map(|s| s.label).collect();
            let (x, m) = clf.batch_inputs(&batch)?;
            let (logits, cache) = clf.forward(x.as_ref(), m.as_ref(), true, Some(rng.get(Stream::Dropout)))?;
            let (loss, dlogits) = cross_entropy_grad(&logits, &labels);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss("classifier cross-entropy"));
            }
            clf.backward(cache, &dlogits);
            opt.step(&mut clf);
        }
    }
    Ok(clf)
}

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; N_CLASSES]; N_CLASSES],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub mode: InputMode,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when some class never occurs in the truth or the predictions,
    /// so the macro averages skip undefined per-class values.
    pub degenerate: bool,
    pub confusion: ConfusionMatrix,
    pub n_train: usize,
    pub n_test: usize,
}

impl ConfusionMatrix {
    pub fn from_predictions(truth: &[RopStage], pred: &[RopStage]) -> Self {
        let mut m = Self::default();
        for (t, p) in truth.iter().zip(pred) {
            m.counts[t.index()][p.index()] += 1;
        }
        m
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let correct: u64 = (0..N_CLASSES).map(|k| self.counts[k][k]).sum();
        correct as f64 / self.total().max(1) as f64
    }

    /// Macro precision, recall and F1 (`2PR / (P + R)` of the macro
    /// averages), and whether any per-class value was undefined.
    pub fn macro_scores(&self) -> (f64, f64, f64, bool) {
        let mut precision = Vec::new();
        let mut recall = Vec::new();
        for k in 0..N_CLASSES {
            let tp = self.counts[k][k] as f64;
            let predicted: u64 = (0..N_CLASSES).map(|t| self.counts[t][k]).sum();
            let actual: u64 = self.counts[k].iter().sum();
            if predicted > 0 {
                precision.push(tp / predicted as f64);
            }
            if actual > 0 {
                recall.push(tp / actual as f64);
            }
        }
        let degenerate = precision.len() < N_CLASSES || recall.len() < N_CLASSES;
        let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        let (p, r) = (mean(&precision), mean(&recall));
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        (p, r, f1, degenerate)
    }
}

pub fn evaluate_classifier(clf: &FusionClassifier, test: &[ClassifiedSample], n_train: usize) -> Result<ClassificationReport> {
    if test.is_empty() {
        return Err(Error::EmptyDataset("no classification test samples".into()));
    }
    let pred = clf.predict(test)?;
    let truth: Vec<RopStage> = test.iter().map(|s| s.label).collect();
    let confusion = ConfusionMatrix::from_predictions(&truth, &pred);
    let (precision, recall, f1, degenerate) = confusion.macro_scores();
    Ok(ClassificationReport {
        mode: clf.mode(),
        accuracy: confusion.accuracy(),
        precision,
        recall,
        f1,
        degenerate,
        confusion,
        n_train,
        n_test: test.len(),
    })
}

pub fn train_eval_classifier(cfg: &FusionConfig, train: &[ClassifiedSample], test: &[ClassifiedSample], seed: u64) -> Result<ClassificationReport> {
    let clf = train_classifier(cfg, train, seed)?;
    evaluate_classifier(&clf, test, train.len())
}
