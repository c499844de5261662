//! Binary checkpoint container: magic, version, a JSON header (config,
//! vocabulary, step, random stream position, history, tensor directory),
//! then every tensor as little-endian `f64`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Adam, StepRecord, TrainConfig, TrainError, TrainState};
use crate::autodiff::Tensor;
use crate::graph::Vocab;
use crate::nn::{Model, ParamEntry};

pub const MAGIC: &[u8; 8] = b"CLRLAB\0\x01";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
}

/// Every random draw is derived from `(seed, step)`, so this pair is the
/// full random state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub step: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    vocab: Vocab,
    step: u64,
    rng: RngState,
    adam_g_t: u64,
    adam_d_t: u64,
    history: Vec<StepRecord>,
    tensors: Vec<TensorInfo>,
}

const SLOTS: [&str; 5] = ["param", "adam_g.m", "adam_g.v", "adam_d.m", "adam_d.v"];

fn slot_tensors<'a>(state: &'a TrainState, slot: &str) -> Vec<&'a Tensor> {
    let entries = state.model.store.entries();
    match slot {
        "param" => entries.iter().map(|e| &e.value).collect(),
        "adam_g.m" => state.adam_g.m.iter().collect(),
        "adam_g.v" => state.adam_g.v.iter().collect(),
        "adam_d.m" => state.adam_d.m.iter().collect(),
        _ => state.adam_d.v.iter().collect(),
    }
}

pub fn write(state: &TrainState, out: &mut impl Write) -> Result<(), TrainError> {
    let entries = state.model.store.entries();
    let mut tensors = Vec::new();
    let mut payload: Vec<&Tensor> = Vec::new();
    for slot in SLOTS {
        for (e, t) in entries.iter().zip(slot_tensors(state, slot)) {
            tensors.push(TensorInfo { name: format!("{slot}/{}", e.name), shape: t.shape.clone() });
            payload.push(t);
        }
    }
    let header = Header {
        config: state.config.clone(),
        vocab: state.vocab.clone(),
        step: state.step,
        rng: RngState { seed: state.config.seed, step: state.step },
        adam_g_t: state.adam_g.t,
        adam_d_t: state.adam_d.t,
        history: state.history.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    let mut buf = Vec::with_capacity(payload.iter().map(|t| t.len() * 8).sum());
    for t in payload {
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read(input: &mut impl Read) -> Result<TrainState, TrainError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(|_| TrainError::Checkpoint("file too short".into()))?;
    if &magic != MAGIC {
        return Err(TrainError::Checkpoint("not a checkpoint file".into()));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(TrainError::Version { found: version, expected: VERSION });
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    input.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| TrainError::Checkpoint(format!("header: {e}")))?;

    let mut tensors = Vec::with_capacity(header.tensors.len());
    for info in &header.tensors {
        let count: usize = info.shape.iter().product();
        let mut bytes = vec![0u8; count * 8];
        input
            .read_exact(&mut bytes)
            .map_err(|_| TrainError::Checkpoint(format!("truncated at tensor {}", info.name)))?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push((info.name.clone(), Tensor::new(&info.shape, data)));
    }

    let mut state = TrainState::new(header.config.clone(), header.vocab.clone())?;
    let take = |slot: &str| -> Vec<ParamEntry> {
        let prefix = format!("{slot}/");
        tensors
            .iter()
            .filter_map(|(name, t)| {
                name.strip_prefix(&prefix).map(|n| ParamEntry { name: n.to_string(), value: t.clone(), trainable: true })
            })
            .collect()
    };
    state.model.store.load_from(&take("param"))?;
    let load_slots = |adam: &mut Adam, m: &str, v: &str, t: u64, model: &Model| -> Result<(), TrainError> {
        let mut scratch = model.store.clone();
        scratch.load_from(&take(m))?;
        adam.m = scratch.entries().iter().map(|e| e.value.clone()).collect();
        scratch.load_from(&take(v))?;
        adam.v = scratch.entries().iter().map(|e| e.value.clone()).collect();
        adam.t = t;
        Ok(())
    };
    let model = state.model.clone();
    load_slots(&mut state.adam_g, "adam_g.m", "adam_g.v", header.adam_g_t, &model)?;
    load_slots(&mut state.adam_d, "adam_d.m", "adam_d.v", header.adam_d_t, &model)?;
    state.step = header.step;
    state.history = header.history;
    Ok(state)
}

pub fn save(state: &TrainState, path: &Path) -> Result<(), TrainError> {
    let mut buf = Vec::new();
    write(state, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<TrainState, TrainError> {
    let bytes = std::fs::read(path)?;
    read(&mut bytes.as_slice())
}

/// Loads a checkpoint for continued training under `config`, which must
/// match the stored config except for run-length keys.
pub fn resume(path: &Path, config: &TrainConfig) -> Result<TrainState, TrainError> {
    let mut state = load(path)?;
    let diff = state.config.differences(config);
    if !diff.is_empty() {
        return Err(TrainError::ConfigMismatch(diff));
    }
    state.config = config.clone();
    Ok(state)
}
