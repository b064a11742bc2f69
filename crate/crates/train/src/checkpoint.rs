//! Binary checkpoints: `MCCKPT1\n`, one line of JSON header, then the
//! parameters and both Adam moment vectors as little-endian `f64`.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TrainError};
use crate::optim::{AdamConfig, Schedule, TrainState};
use crate::spec::{NetworkSpec, ParamLayout};

pub const MAGIC: &[u8] = b"MCCKPT1\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub spec_hash: String,
    pub spec: NetworkSpec,
    pub layout: ParamLayout,
    pub step: u64,
    pub lr: f64,
    pub schedule: Schedule,
    pub adam: AdamConfig,
}

pub fn write_checkpoint<W: Write>(mut w: W, spec: &NetworkSpec, state: &TrainState) -> Result<()> {
    let layout = spec.layout()?;
    if layout.total != state.params.len() {
        return Err(TrainError::Checkpoint(format!(
            "state has {} parameters, network has {}",
            state.params.len(),
            layout.total
        )));
    }
    let header = CheckpointHeader {
        spec_hash: spec.hash(),
        spec: spec.clone(),
        layout,
        step: state.step,
        lr: state.lr,
        schedule: state.schedule,
        adam: state.adam,
    };
    w.write_all(MAGIC)?;
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(24 * state.params.len());
    for block in [&state.params, &state.m, &state.v] {
        for v in block.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_block<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; 8 * n];
    r.read_exact(&mut bytes)
        .map_err(|e| TrainError::Checkpoint(format!("truncated parameter block: {e}")))?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<(NetworkSpec, TrainState)> {
    let mut r = BufReader::new(r);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| TrainError::Checkpoint("file too short".into()))?;
    if magic != MAGIC {
        return Err(TrainError::Checkpoint("bad magic".into()));
    }
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: CheckpointHeader = serde_json::from_str(line.trim_end())?;
    if header.spec.hash() != header.spec_hash {
        return Err(TrainError::Checkpoint("network description does not match its hash".into()));
    }
    let layout = header.spec.layout()?;
    if layout != header.layout {
        return Err(TrainError::Checkpoint("parameter layout does not match the network".into()));
    }
    let n = layout.total;
    let params = read_block(&mut r, n)?;
    let m = read_block(&mut r, n)?;
    let v = read_block(&mut r, n)?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(TrainError::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    let state = TrainState {
        params,
        m,
        v,
        step: header.step,
        lr: header.lr,
        adam: header.adam,
        schedule: header.schedule,
    };
    Ok((header.spec, state))
}

pub fn save_checkpoint(path: impl AsRef<Path>, spec: &NetworkSpec, state: &TrainState) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, spec, state)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(NetworkSpec, TrainState)> {
    read_checkpoint(fs::File::open(path)?)
}
