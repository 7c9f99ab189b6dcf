use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::checkpoint::{save_checkpoint, CheckpointMeta};
use super::step::Trainer;
use crate::data::{make_batches, PatchPool};
use crate::error::{Error, Result};
use crate::io::write_json;
use crate::losses::LossBreakdown;
use crate::metrics::{evaluate_samples, MetricsConfig};
use crate::rng::Stream;
use crate::types::{LabeledSample, UnlabeledSample};

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub l_sup: f64,
    pub l_cons_mse: f64,
    pub l_cons_dist: f64,
    pub l_adv: f64,
    pub l_disc: f64,
    pub total: f64,
    pub lambda_cons: f64,
    pub ema_decay: f64,
}

impl StepRecord {
    fn new(step: u64, epoch: usize, b: &LossBreakdown, ema_decay: f64) -> Self {
        Self {
            step,
            epoch,
            l_sup: b.l_sup,
            l_cons_mse: b.l_cons_mse,
            l_cons_dist: b.l_cons_dist,
            l_adv: b.l_adv,
            l_disc: b.l_disc,
            total: b.total,
            lambda_cons: b.lambda_cons,
            ema_decay,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: usize,
    pub mean_total: f64,
    pub mean_l_sup: f64,
    /// Validation DSC, when validation ran this epoch.
    pub val_dsc: Option<f64>,
}

/// Training images, with an optional held-out validation set.
#[derive(Clone, Debug, Default)]
pub struct FitData {
    pub labeled: Vec<LabeledSample>,
    pub unlabeled: Vec<UnlabeledSample>,
    pub val: Vec<LabeledSample>,
}

impl FitData {
    /// Moves the last `floor(fraction * L)` labeled images (in id order) into
    /// the validation set, keeping at least one for training.
    pub fn split_validation(mut labeled: Vec<LabeledSample>, unlabeled: Vec<UnlabeledSample>, fraction: f64) -> Self {
        labeled.sort_by(|a, b| a.id.cmp(&b.id));
        let k = ((fraction * labeled.len() as f64).floor() as usize).min(labeled.len().saturating_sub(1));
        let val = labeled.split_off(labeled.len() - k);
        Self { labeled, unlabeled, val }
    }
}

#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    /// Where checkpoints, the step log and `run.json` go. Nothing is written
    /// when absent.
    pub out_dir: Option<PathBuf>,
    pub meta: CheckpointMeta,
    pub metrics: MetricsConfig,
    /// Checked after every step; when set, the current state is saved and
    /// [`Error::Interrupted`] returned.
    pub stop: Option<Arc<AtomicBool>>,
    /// Print one progress line per epoch to stderr.
    pub verbose: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub epochs: Vec<EpochSummary>,
    pub steps: Vec<StepRecord>,
    pub best_val: Option<f64>,
}

/// Sidecar describing a run directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: serde_json::Value,
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
    pub ablation: String,
    pub epochs_completed: usize,
    pub steps: u64,
    pub best_val: Option<f64>,
    pub history: Vec<EpochSummary>,
}

pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const STEP_LOG: &str = "train_log.jsonl";
pub const RUN_SUMMARY: &str = "run.json";

struct Outputs {
    dir: PathBuf,
    log: BufWriter<File>,
}

impl Outputs {
    fn open(dir: &Path, append: bool) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(STEP_LOG);
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self { dir: dir.to_path_buf(), log: BufWriter::new(file) })
    }

    fn record(&mut self, rec: &StepRecord) -> Result<()> {
        let line = serde_json::to_string(rec).expect("plain record");
        writeln!(self.log, "{line}").map_err(|e| Error::io(self.dir.join(STEP_LOG), e))
    }

    fn flush(&mut self) -> Result<()> {
        self.log.flush().map_err(|e| Error::io(self.dir.join(STEP_LOG), e))
    }
}

fn dump_nonfinite(dir: &Path, trainer: &Trainer, err: &Error, last: Option<&StepRecord>) -> Result<()> {
    #[derive(Serialize)]
    struct Dump<'a> {
        error: String,
        epoch: usize,
        step: u64,
        last_good: Option<&'a StepRecord>,
        student_nonfinite_params: Vec<String>,
    }
    let mut bad = Vec::new();
    vessel_nn::Module::visit(&trainer.student, "student", &mut |name, p| {
        if p.value.iter().any(|v| !v.is_finite()) {
            bad.push(name.to_string());
        }
    });
    let dump = Dump { error: err.to_string(), epoch: trainer.epoch, step: trainer.step, last_good: last, student_nonfinite_params: bad };
    write_json(&dir.join(format!("nonfinite_step{}.json", trainer.step)), &dump)
}

/// Runs the remaining epochs of `trainer.cfg.epochs`, starting at
/// `trainer.epoch` (so a trainer restored from a checkpoint resumes).
///
/// After each validated epoch the state is written to `last.ckpt`, and to
/// `best.ckpt` when validation DSC improves; without a validation set every
/// epoch counts as best.
pub fn fit(trainer: &mut Trainer, data: &FitData, opts: &FitOptions) -> Result<FitReport> {
    let cfg = trainer.cfg.clone();
    if data.labeled.is_empty() {
        return Err(Error::EmptyDataset("no labeled training images".into()));
    }
    let semi = cfg.ablation.uses_unlabeled();
    if semi && data.unlabeled.is_empty() {
        return Err(Error::EmptyDataset(format!("level {} needs unlabeled images", cfg.ablation.name())));
    }
    let unlabeled: &[UnlabeledSample] = if semi { &data.unlabeled } else { &[] };
    let pool = PatchPool::from_samples(&data.labeled, unlabeled, cfg.patch_size, cfg.patch_stride)?;
    let mut out = match &opts.out_dir {
        Some(d) => Some(Outputs::open(d, trainer.step > 0)?),
        None => None,
    };
    let mut meta = opts.meta.clone();
    let mut report = FitReport { best_val: meta.best_val, ..Default::default() };

    while trainer.epoch < cfg.epochs {
        if cfg.max_steps.is_some_and(|m| trainer.step >= m) {
            break;
        }
        let epoch = trainer.epoch;
        let idx = make_batches(pool.labeled.len(), pool.unlabeled.len(), cfg.batch_labeled, cfg.batch_unlabeled, semi, trainer.rng.get(Stream::Data))?;
        let (mut sum_total, mut sum_sup, mut n) = (0.0, 0.0, 0usize);
        for bi in &idx {
            if cfg.max_steps.is_some_and(|m| trainer.step >= m) {
                break;
            }
            let batch = pool.assemble(bi, &cfg.augment.standard, trainer.rng.get(Stream::Augment));
            let decay = trainer.ema_decay();
            let b = match trainer.train_step(&batch) {
                Ok(b) => b,
                Err(e @ Error::NonFiniteLoss(_)) => {
                    if let Some(o) = &mut out {
                        o.flush()?;
                        dump_nonfinite(&o.dir, trainer, &e, report.steps.last())?;
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            let rec = StepRecord::new(trainer.step, epoch, &b, decay);
            if let Some(o) = &mut out {
                o.record(&rec)?;
            }
            report.steps.push(rec);
            sum_total += b.total;
            sum_sup += b.l_sup;
            n += 1;
            if opts.stop.as_ref().is_some_and(|s| s.load(Ordering::SeqCst)) {
                if let Some(o) = &mut out {
                    o.flush()?;
                    save_checkpoint(&o.dir.join(LAST_CHECKPOINT), trainer, &meta)?;
                }
                return Err(Error::Interrupted { epoch, step: trainer.step });
            }
        }
        trainer.epoch += 1;
        let finished = trainer.epoch == cfg.epochs || cfg.max_steps.is_some_and(|m| trainer.step >= m);
        let validate = !data.val.is_empty() && (trainer.epoch % cfg.val_every == 0 || finished);
        let val_dsc = if validate {
            let seg = trainer.segmenter();
            Some(evaluate_samples(&seg, &trainer.model.unet, &data.val, cfg.patch_size, cfg.patch_stride, &opts.metrics)?.aggregate.dsc)
        } else {
            None
        };
        let improved = match (val_dsc, meta.best_val) {
            (Some(v), Some(b)) => v > b,
            (Some(_), None) => true,
            (None, _) => data.val.is_empty(),
        };
        if improved && val_dsc.is_some() {
            meta.best_val = val_dsc;
            report.best_val = val_dsc;
        }
        let summary = EpochSummary {
            epoch,
            steps: n,
            mean_total: sum_total / n.max(1) as f64,
            mean_l_sup: sum_sup / n.max(1) as f64,
            val_dsc,
        };
        if opts.verbose {
            let val = val_dsc.map(|v| format!(" val_dsc {v:.4}")).unwrap_or_default();
            eprintln!("epoch {epoch} steps {} total {:.4} l_sup {:.4}{val}", summary.steps, summary.mean_total, summary.mean_l_sup);
        }
        report.epochs.push(summary);
        if let Some(o) = &mut out {
            o.flush()?;
            save_checkpoint(&o.dir.join(LAST_CHECKPOINT), trainer, &meta)?;
            if improved {
                save_checkpoint(&o.dir.join(BEST_CHECKPOINT), trainer, &meta)?;
            }
            write_summary(&o.dir, trainer, &meta, &report)?;
        }
    }
    Ok(report)
}

fn write_summary(dir: &Path, trainer: &Trainer, meta: &CheckpointMeta, report: &FitReport) -> Result<()> {
    let path = dir.join(RUN_SUMMARY);
    let mut history = if trainer.epoch > report.epochs.len() {
        // Resumed run: keep the epochs recorded before the restart.
        crate::io::read_json::<RunSummary>(&path).map(|s| s.history).unwrap_or_default()
    } else {
        Vec::new()
    };
    history.retain(|h| report.epochs.iter().all(|e| e.epoch != h.epoch));
    history.extend(report.epochs.iter().cloned());
    let summary = RunSummary {
        config: meta.config.clone(),
        config_hash: meta.config_hash.clone(),
        seed: trainer.rng.seed(),
        code_version: crate::CODE_VERSION.to_string(),
        ablation: trainer.cfg.ablation.name().to_string(),
        epochs_completed: trainer.epoch,
        steps: trainer.step,
        best_val: meta.best_val,
        history,
    };
    write_json(&path, &summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::step::tests::{tiny_cfg, tiny_model};
    use crate::trainer::{load_checkpoint, AblationLevel};
    use crate::types::{BinaryMask, DomainTag, RasterImage};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(seed: u64) -> FitData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = || RasterImage::new(32, 32, 3, (0..32 * 32 * 3).map(|_| rng.gen()).collect()).unwrap();
        let labeled = (0..4)
            .map(|i| {
                let im = img();
                let m = BinaryMask::from_fn(32, 32, |r, c| im.get(r, c, 1) > 0.6);
                LabeledSample::new(format!("l{i}"), im, m, DomainTag::LabeledSource).unwrap()
            })
            .collect();
        let unlabeled = (0..3)
            .map(|i| UnlabeledSample { id: format!("u{i}"), image: img(), domain: DomainTag::UnlabeledTarget })
            .collect();
        FitData::split_validation(labeled, unlabeled, 0.25)
    }

    #[test]
    fn validation_split_takes_the_tail() {
        let d = data(0);
        assert_eq!(d.labeled.len(), 3);
        assert_eq!(d.val.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(), ["l3"]);
    }

    #[test]
    fn reruns_produce_identical_logs_and_resume_continues_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_cfg(AblationLevel::V);
        cfg.epochs = 3;
        let d = data(1);
        let run = |out: Option<PathBuf>| {
            let mut t = Trainer::new(&tiny_model(), &cfg, 21).unwrap();
            let opts = FitOptions { out_dir: out, ..Default::default() };
            fit(&mut t, &d, &opts).unwrap()
        };
        let full = run(Some(dir.path().join("a")));
        assert_eq!(full.steps, run(None).steps);
        assert_eq!(full.epochs.len(), 3);
        let lines = fs::read_to_string(dir.path().join("a").join(STEP_LOG)).unwrap();
        assert_eq!(lines.lines().count(), full.steps.len());
        let first: StepRecord = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
        assert_eq!(first, full.steps[0]);

        // Stop after the first epoch, then resume from the saved checkpoint.
        let mut short = cfg.clone();
        short.epochs = 1;
        let out = dir.path().join("b");
        let mut t = Trainer::new(&tiny_model(), &short, 21).unwrap();
        let head = fit(&mut t, &d, &FitOptions { out_dir: Some(out.clone()), ..Default::default() }).unwrap();
        let (mut resumed, meta) = load_checkpoint(&out.join(LAST_CHECKPOINT)).unwrap();
        resumed.cfg.epochs = 3;
        let tail = fit(&mut resumed, &d, &FitOptions { out_dir: Some(out.clone()), meta, ..Default::default() }).unwrap();
        let joined: Vec<_> = head.steps.into_iter().chain(tail.steps).collect();
        assert_eq!(joined, full.steps);
        let summary: RunSummary = crate::io::read_json(&out.join(RUN_SUMMARY)).unwrap();
        assert_eq!(summary.history.len(), 3);
        assert!(out.join(BEST_CHECKPOINT).exists());
    }

    #[test]
    fn stop_flag_checkpoints_and_interrupts() {
        let dir = tempfile::tempdir().unwrap();
        let stop = Arc::new(AtomicBool::new(true));
        let mut t = Trainer::new(&tiny_model(), &tiny_cfg(AblationLevel::III), 2).unwrap();
        let opts = FitOptions { out_dir: Some(dir.path().to_path_buf()), stop: Some(stop), ..Default::default() };
        let err = fit(&mut t, &data(2), &opts).unwrap_err();
        assert!(matches!(err, Error::Interrupted { epoch: 0, step: 1 }));
        assert!(dir.path().join(LAST_CHECKPOINT).exists());
    }

    #[test]
    fn max_steps_caps_training() {
        let mut cfg = tiny_cfg(AblationLevel::I);
        cfg.epochs = 50;
        cfg.max_steps = Some(3);
        let mut t = Trainer::new(&tiny_model(), &cfg, 2).unwrap();
        let r = fit(&mut t, &data(3), &FitOptions::default()).unwrap();
        assert_eq!(r.steps.len(), 3);
        assert!(r.epochs.last().unwrap().val_dsc.is_some());
    }

    #[test]
    fn semi_supervised_levels_need_unlabeled_images() {
        let mut d = data(4);
        d.unlabeled.clear();
        let mut t = Trainer::new(&tiny_model(), &tiny_cfg(AblationLevel::II), 2).unwrap();
        assert!(matches!(fit(&mut t, &d, &FitOptions::default()), Err(Error::EmptyDataset(_))));
        let mut t = Trainer::new(&tiny_model(), &tiny_cfg(AblationLevel::SupervisedOnly), 2).unwrap();
        assert!(fit(&mut t, &d, &FitOptions::default()).is_ok());
    }
}
