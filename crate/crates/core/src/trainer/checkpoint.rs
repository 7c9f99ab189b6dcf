use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use vessel_nn::{AdamState, Module};

use super::config::{ModelConfig, TrainerConfig};
use super::step::Trainer;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::rng::{RngStreams, StreamState};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VSSLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Run-level facts stored alongside the weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Echo of the full run configuration, if the caller has one.
    pub config: serde_json::Value,
    pub config_hash: String,
    pub code_version: String,
    /// Best validation DSC seen so far.
    pub best_val: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    meta: CheckpointMeta,
    model: ModelConfig,
    trainer: TrainerConfig,
    seed: u64,
    epoch: usize,
    step: u64,
    rng: Vec<StreamState>,
    adam_student_step: u64,
    adam_disc_step: u64,
    entries: Vec<Entry>,
}

fn collect<M: Module + ?Sized>(prefix: &str, m: &M, entries: &mut Vec<Entry>, data: &mut Vec<f32>) {
    m.visit(prefix, &mut |name, p| {
        entries.push(Entry { name: name.to_string(), shape: p.shape().to_vec() });
        data.extend_from_slice(&p.value);
    });
}

fn collect_adam(prefix: &str, st: &AdamState, entries: &mut Vec<Entry>, data: &mut Vec<f32>) {
    for (kind, moments) in [("m", &st.m), ("v", &st.v)] {
        for (i, vals) in moments.iter().enumerate() {
            entries.push(Entry { name: format!("{prefix}.{kind}.{i}"), shape: vec![vals.len()] });
            data.extend_from_slice(vals);
        }
    }
}

/// Serialises the complete training state into the versioned container:
/// magic, `u32` version, `u64` header length, JSON header, then raw
/// little-endian `f32` payload in header order. Written atomically.
pub fn save_checkpoint(path: &Path, trainer: &Trainer, meta: &CheckpointMeta) -> Result<()> {
    let mut entries = Vec::new();
    let mut data = Vec::new();
    collect("student", &trainer.student, &mut entries, &mut data);
    if let Some(t) = &trainer.teacher {
        collect("teacher", t, &mut entries, &mut data);
    }
    if let Some(d) = &trainer.disc {
        collect("disc", d, &mut entries, &mut data);
    }
    collect_adam("opt_student", trainer.opt_student.state(), &mut entries, &mut data);
    collect_adam("opt_disc", trainer.opt_disc.state(), &mut entries, &mut data);
    let header = Header {
        meta: meta.clone(),
        model: trainer.model.clone(),
        trainer: trainer.cfg.clone(),
        seed: trainer.rng.seed(),
        epoch: trainer.epoch,
        step: trainer.step,
        rng: trainer.rng.snapshot(),
        adam_student_step: trainer.opt_student.state().step,
        adam_disc_step: trainer.opt_disc.state().step,
        entries,
    };
    let json = serde_json::to_vec(&header).map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
    let mut bytes = Vec::with_capacity(20 + json.len() + 4 * data.len());
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &bytes)
}

struct Tensors {
    map: HashMap<String, (Vec<usize>, Vec<f32>)>,
}

impl Tensors {
    fn take(&mut self, name: &str) -> Option<(Vec<usize>, Vec<f32>)> {
        self.map.remove(name)
    }
}

fn restore<M: Module + ?Sized>(prefix: &str, m: &mut M, t: &mut Tensors) -> std::result::Result<(), String> {
    let mut err = None;
    m.visit_mut(prefix, &mut |name, p| {
        if err.is_some() {
            return;
        }
        match t.take(name) {
            Some((shape, vals)) if shape == p.shape() => p.value.copy_from_slice(&vals),
            Some((shape, _)) => err = Some(format!("{name}: stored shape {shape:?}, model expects {:?}", p.shape())),
            None => err = Some(format!("missing tensor {name}")),
        }
    });
    err.map_or(Ok(()), Err)
}

fn restore_adam(prefix: &str, step: u64, t: &mut Tensors) -> AdamState {
    let mut st = AdamState { step, ..Default::default() };
    for (kind, dst) in [("m", &mut st.m), ("v", &mut st.v)] {
        while let Some((_, vals)) = t.take(&format!("{prefix}.{kind}.{}", dst.len())) {
            dst.push(vals);
        }
    }
    st
}

/// Reads a checkpoint written by [`save_checkpoint`] and rebuilds the trainer
/// exactly, including optimizer moments and random stream positions.
pub fn load_checkpoint(path: &Path) -> Result<(Trainer, CheckpointMeta)> {
    let bad = |reason: String| Error::BadCheckpoint { path: path.to_path_buf(), reason };
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[20..];
    if body.len() < hlen {
        return Err(bad("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| bad(format!("header: {e}")))?;
    let payload = &body[hlen..];
    let total: usize = header.entries.iter().map(|e| e.shape.iter().product::<usize>()).sum();
    if payload.len() != 4 * total {
        return Err(bad(format!("payload holds {} bytes, header describes {}", payload.len(), 4 * total)));
    }
    let mut floats = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let mut map = HashMap::with_capacity(header.entries.len());
    for e in &header.entries {
        let n = e.shape.iter().product();
        map.insert(e.name.clone(), (e.shape.clone(), floats.by_ref().take(n).collect()));
    }
    let mut tensors = Tensors { map };

    let mut trainer = Trainer::new(&header.model, &header.trainer, header.seed).map_err(|e| bad(format!("config: {e}")))?;
    restore("student", &mut trainer.student, &mut tensors).map_err(&bad)?;
    if let Some(t) = trainer.teacher.as_mut() {
        restore("teacher", t, &mut tensors).map_err(&bad)?;
    }
    if let Some(d) = trainer.disc.as_mut() {
        restore("disc", d, &mut tensors).map_err(&bad)?;
    }
    trainer.opt_student.set_state(restore_adam("opt_student", header.adam_student_step, &mut tensors));
    trainer.opt_disc.set_state(restore_adam("opt_disc", header.adam_disc_step, &mut tensors));
    if let Some(name) = tensors.map.keys().next() {
        return Err(bad(format!("unexpected tensor {name}")));
    }
    trainer.rng = RngStreams::restore(header.seed, &header.rng);
    trainer.epoch = header.epoch;
    trainer.step = header.step;
    Ok((trainer, header.meta))
}
