use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::Serialize;
use vessel_ssl::config::{Preset, RunConfig};
use vessel_ssl::data::{load_labeled_dir, load_unlabeled_dir};
use vessel_ssl::fusion::{
    attach_masks, gen_staged_corpus, load_staged_corpus, split_by_class, train_eval_classifier, write_staged_corpus, ClassificationReport,
    InputMode,
};
use vessel_ssl::io::{list_images, load_image, save_mask, save_prob, write_json};
use vessel_ssl::metrics::{evaluate_samples, Aggregate, MetricsReport};
use vessel_ssl::synth::{gen_corpus, Split};
use vessel_ssl::trainer::{fit, load_checkpoint, predict_image, CheckpointMeta, FitData, FitOptions, Segmenter, Trainer};
use vessel_ssl::{binarize, DomainTag, Error, Result, CODE_VERSION};

use crate::{Command, ConfigArgs};

/// Configuration and usage problems exit with 2, an interrupted run with
/// 130, every other failure with 1.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::ModeMismatch(_) => 2,
        Error::Interrupted { .. } => 130,
        _ => 1,
    }
}

/// Reproducibility stamp written next to artifacts that cannot carry it
/// themselves.
#[derive(Serialize)]
struct Stamp<T: Serialize> {
    config_hash: String,
    seed: u64,
    code_version: &'static str,
    #[serde(flatten)]
    body: T,
}

fn stamp<T: Serialize>(rc: &RunConfig, body: T) -> Stamp<T> {
    Stamp { config_hash: rc.hash(), seed: rc.seed, code_version: CODE_VERSION, body }
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth { out, n_labeled, n_unlabeled, n_test, image_size, staged, cfg } => {
            let mut rc = resolve_config(&cfg)?;
            if let Some(s) = image_size {
                rc.data.synth.image_size = s;
            }
            rc.validate()?;
            synth(&rc, &out, [n_labeled, n_unlabeled, n_test], staged)
        }
        Command::Train { cfg, ablation, data, labeled, unlabeled, val, epochs, max_steps, out, resume, quiet } => {
            let flags = TrainFlags { ablation, data, labeled, unlabeled, val, epochs, max_steps };
            train(&cfg, &flags, &out, resume.as_deref(), !quiet)
        }
        Command::Eval { checkpoint, data, threshold, two_class_miou, out } => eval(&checkpoint, data, threshold, two_class_miou, out),
        Command::Predict { checkpoint, input, out_dir, threshold } => predict(&checkpoint, &input, out_dir, threshold),
        Command::Classify { data, mode, checkpoint, cfg, out } => classify(&data, mode.as_deref(), checkpoint.as_deref(), &cfg, out),
    }
}

/// File, then environment overrides, then the `--seed` flag.
fn resolve_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut rc = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => {
            let seed = args.seed.ok_or_else(|| Error::Config("--seed is required unless --config supplies one".into()))?;
            RunConfig::preset(args.preset.parse::<Preset>()?, seed)
        }
    };
    rc.apply_env()?;
    if let Some(seed) = args.seed {
        rc.seed = seed;
        rc.data.synth.seed = seed;
    }
    Ok(rc)
}

/// The run configuration echoed into a checkpoint, or one rebuilt from the
/// checkpoint's own sections when the echo is missing.
fn checkpoint_config(trainer: &Trainer, meta: &CheckpointMeta) -> Result<RunConfig> {
    if meta.config.is_null() {
        let mut rc = RunConfig::preset(Preset::Desk, trainer.rng.seed());
        rc.model = trainer.model.clone();
        rc.trainer = trainer.cfg.clone();
        return Ok(rc);
    }
    serde_json::from_value(meta.config.clone()).map_err(|e| Error::Config(format!("checkpoint config echo: {e}")))
}

fn synth(rc: &RunConfig, out: &Path, [n_labeled, n_unlabeled, n_test]: [usize; 3], staged: Option<usize>) -> Result<()> {
    if let Some(n) = staged {
        let samples = gen_staged_corpus(&rc.data.synth, &rc.data.shift, n, "staged")?;
        write_staged_corpus(&samples, out)?;
        write_json(&out.join("synth.json"), &stamp(rc, serde_json::json!({ "staged_per_class": n, "images": samples.len() })))?;
        println!("wrote {} staged images to {}", samples.len(), out.display());
        return Ok(());
    }
    let manifest = gen_corpus(&rc.data.synth, n_labeled, n_unlabeled, n_test, &rc.data.shift, out)?;
    let hash = manifest.hash();
    write_json(&out.join("synth.json"), &stamp(rc, serde_json::json!({ "manifest_hash": hash })))?;
    println!("manifest {hash}");
    Ok(())
}

struct TrainFlags {
    ablation: Option<String>,
    data: Option<PathBuf>,
    labeled: Option<PathBuf>,
    unlabeled: Option<PathBuf>,
    val: Option<PathBuf>,
    epochs: Option<usize>,
    max_steps: Option<u64>,
}

impl TrainFlags {
    fn apply(&self, rc: &mut RunConfig) -> Result<()> {
        if let Some(a) = &self.ablation {
            rc.trainer.ablation = a.parse()?;
        }
        if let Some(e) = self.epochs {
            rc.trainer.epochs = e;
        }
        if self.max_steps.is_some() {
            rc.trainer.max_steps = self.max_steps;
        }
        if let Some(root) = &self.data {
            rc.data.labeled_dir = Some(root.join(Split::Labeled.dir_name()));
            rc.data.unlabeled_dir = Some(root.join(Split::Unlabeled.dir_name()));
            rc.data.test_dir = Some(root.join(Split::TestTarget.dir_name()));
        }
        for (flag, slot) in [(&self.labeled, &mut rc.data.labeled_dir), (&self.unlabeled, &mut rc.data.unlabeled_dir), (&self.val, &mut rc.data.val_dir)] {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
        Ok(())
    }
}

fn train(args: &ConfigArgs, flags: &TrainFlags, out: &Path, resume: Option<&Path>, verbose: bool) -> Result<()> {
    let (mut trainer, mut rc, best_val) = match resume {
        Some(path) => {
            if args.config.is_some() || args.seed.is_some() {
                return Err(Error::Config("--resume takes its configuration and seed from the checkpoint".into()));
            }
            let (trainer, meta) = load_checkpoint(path)?;
            let rc = checkpoint_config(&trainer, &meta)?;
            (Some(trainer), rc, meta.best_val)
        }
        None => (None, resolve_config(args)?, None),
    };
    flags.apply(&mut rc)?;
    if resume.is_some() && rc.trainer.ablation != trainer.as_ref().expect("resumed").cfg.ablation {
        return Err(Error::Config("--ablation cannot change on resume".into()));
    }
    rc.validate()?;
    let labeled_dir = rc.data.labeled_dir.clone().ok_or_else(|| Error::Config("no labeled directory: pass --labeled or set data.labeled_dir".into()))?;
    let labeled = load_labeled_dir(&labeled_dir, DomainTag::LabeledSource)?;
    let unlabeled = match (&rc.data.unlabeled_dir, rc.trainer.ablation.uses_unlabeled()) {
        (Some(dir), true) => load_unlabeled_dir(dir, DomainTag::UnlabeledTarget)?,
        (None, true) => return Err(Error::Config(format!("level {} needs --unlabeled or data.unlabeled_dir", rc.trainer.ablation.name()))),
        (_, false) => Vec::new(),
    };
    let data = match &rc.data.val_dir {
        Some(dir) => FitData { labeled, unlabeled, val: load_labeled_dir(dir, DomainTag::LabeledSource)? },
        None => FitData::split_validation(labeled, unlabeled, rc.trainer.val_fraction),
    };

    let mut trainer = match trainer.take() {
        Some(mut t) => {
            t.cfg.epochs = rc.trainer.epochs;
            t.cfg.max_steps = rc.trainer.max_steps;
            t
        }
        None => Trainer::new(&rc.model, &rc.trainer, rc.seed)?,
    };
    std::fs::create_dir_all(out).map_err(|e| Error::Io { path: out.to_path_buf(), source: e })?;
    vessel_ssl::io::write_atomic(&out.join("config.toml"), rc.to_toml().as_bytes())?;

    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    // A second handler registration fails only inside tests that call train twice.
    let _ = ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst));
    let meta = CheckpointMeta { config: rc.to_json(), config_hash: rc.hash(), code_version: CODE_VERSION.to_string(), best_val };
    let opts = FitOptions { out_dir: Some(out.to_path_buf()), meta, metrics: rc.metrics.clone(), stop: Some(stop), verbose };
    if verbose {
        eprintln!(
            "training level {} on {} labeled / {} unlabeled images ({} held out), config {}",
            rc.trainer.ablation.name(),
            data.labeled.len(),
            data.unlabeled.len(),
            data.val.len(),
            &rc.hash()[..12]
        );
    }
    let report = fit(&mut trainer, &data, &opts)?;
    let best = report.best_val.map(|v| format!(", best validation DSC {v:.4}")).unwrap_or_default();
    println!("trained {} epochs, {} steps{best}; outputs in {}", trainer.epoch, trainer.step, out.display());
    Ok(())
}

fn print_aggregate(a: &Aggregate) {
    println!("mIoU {:.2}  DSC {:.2}  Acc {:.2}  VOI {:.4} ({:.2}%)  ARI {:.2}", a.miou, a.dsc, a.acc, a.voi, a.voi_normalized, a.ari);
}

fn eval(checkpoint: &Path, data: Option<PathBuf>, threshold: Option<f32>, two_class: bool, out: Option<PathBuf>) -> Result<()> {
    let (trainer, meta) = load_checkpoint(checkpoint)?;
    let mut rc = checkpoint_config(&trainer, &meta)?;
    if let Some(t) = threshold {
        rc.metrics.threshold = t;
    }
    rc.metrics.two_class_miou |= two_class;
    rc.validate()?;
    let dir = data
        .or_else(|| rc.data.test_dir.clone())
        .ok_or_else(|| Error::Config("no evaluation data: pass --data or set data.test_dir".into()))?;
    let samples = load_labeled_dir(&dir, DomainTag::UnlabeledTarget)?;
    let seg = trainer.segmenter();
    let record = evaluate_samples(&seg, &trainer.model.unet, &samples, trainer.cfg.patch_size, trainer.cfg.patch_stride, &rc.metrics)?;
    let report = MetricsReport::new(&record, rc.to_json(), rc.hash(), rc.seed, checkpoint);
    let path = out.unwrap_or_else(|| checkpoint.with_file_name("eval_report.json"));
    write_json(&path, &report)?;
    print_aggregate(&report.aggregate);
    println!("report written to {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct PredictedFile {
    input: String,
    probability: String,
    mask: String,
}

fn predict(checkpoint: &Path, input: &Path, out_dir: Option<PathBuf>, threshold: Option<f32>) -> Result<()> {
    let (trainer, meta) = load_checkpoint(checkpoint)?;
    let rc = checkpoint_config(&trainer, &meta)?;
    let threshold = threshold.unwrap_or(rc.metrics.threshold);
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("threshold must be in (0, 1), got {threshold}")));
    }
    let inputs = if input.is_dir() { list_images(input)? } else { vec![input.to_path_buf()] };
    if inputs.is_empty() {
        return Err(Error::EmptyDataset(format!("no .png or .bmp images in {}", input.display())));
    }
    let out_dir = out_dir.unwrap_or_else(|| if input.is_dir() { input.to_path_buf() } else { input.parent().unwrap_or(Path::new(".")).to_path_buf() });
    let seg: Segmenter = trainer.segmenter();
    let mut written = Vec::new();
    for path in &inputs {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
        let img = load_image(path)?;
        let prob = predict_image(&seg, &trainer.model.unet, &img, trainer.cfg.patch_size, trainer.cfg.patch_stride, 8)?;
        let prob_path = out_dir.join(format!("{stem}_prob.png"));
        let mask_path = out_dir.join(format!("{stem}_mask.png"));
        save_prob(&prob, &prob_path)?;
        save_mask(&binarize(&prob, threshold), &mask_path)?;
        println!("{} -> {}, {}", path.display(), prob_path.display(), mask_path.display());
        written.push(PredictedFile {
            input: path.display().to_string(),
            probability: prob_path.display().to_string(),
            mask: mask_path.display().to_string(),
        });
    }
    let body = serde_json::json!({ "checkpoint": checkpoint.display().to_string(), "threshold": threshold, "files": written });
    write_json(&out_dir.join("predictions.json"), &stamp(&rc, body))
}

#[derive(Serialize)]
struct ClassifyReport {
    config: serde_json::Value,
    config_hash: String,
    seed: u64,
    code_version: String,
    #[serde(flatten)]
    report: ClassificationReport,
}

fn classify(data: &Path, mode: Option<&str>, checkpoint: Option<&Path>, args: &ConfigArgs, out: Option<PathBuf>) -> Result<()> {
    let mut rc = resolve_config(args)?;
    if let Some(m) = mode {
        rc.downstream.mode = m.parse::<InputMode>()?;
    }
    rc.validate()?;
    let mut samples = load_staged_corpus(data)?;
    if rc.downstream.mode != InputMode::Image && samples.iter().any(|s| s.mask.is_none()) {
        let ckpt = checkpoint.ok_or_else(|| {
            Error::Config(format!("{:?} mode needs vessel masks: the corpus has none, so pass --checkpoint", rc.downstream.mode))
        })?;
        let (trainer, _) = load_checkpoint(ckpt)?;
        let seg = trainer.segmenter();
        attach_masks(&mut samples, &seg, &trainer.model.unet, trainer.cfg.patch_size, trainer.cfg.patch_stride)?;
    }
    let (train, test) = split_by_class(samples, rc.downstream.test_fraction);
    let report = train_eval_classifier(&rc.downstream, &train, &test, rc.seed)?;
    println!(
        "{:?}: accuracy {:.4}  precision {:.4}  recall {:.4}  F1 {:.4}{}",
        report.mode,
        report.accuracy,
        report.precision,
        report.recall,
        report.f1,
        if report.degenerate { "  (some class absent from truth or predictions)" } else { "" }
    );
    let path = out.unwrap_or_else(|| data.join("classification_report.json"));
    let full = ClassifyReport { config: rc.to_json(), config_hash: rc.hash(), seed: rc.seed, code_version: CODE_VERSION.to_string(), report };
    write_json(&path, &full)?;
    println!("report written to {}", path.display());
    Ok(())
}
