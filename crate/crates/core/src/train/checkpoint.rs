//! Versioned binary checkpoints: a JSON header (config echo, epoch counter,
//! metric digest) followed by named little-endian `f32` blocks for
//! parameters, batch-norm running statistics, and optimizer moments.

use super::adam::{AdamHyper, AdamState};
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::network::{Network, NetworkConfig};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 8] = b"HTRCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    /// Epochs completed when the checkpoint was written.
    pub epoch: usize,
    pub adam_step: u64,
    pub best_val_cer: Option<f64>,
    /// SHA-256 of the metric log at save time.
    pub metrics_digest: String,
}

struct Block {
    name: String,
    dims: Vec<usize>,
    data: Vec<f32>,
}

pub fn save_checkpoint(
    path: &Path,
    net: &Network<f32>,
    adam: Option<&AdamState<f32>>,
    meta: &CheckpointMeta,
) -> Result<()> {
    let mut blocks: Vec<Block> = Vec::new();
    net.visit_params(&mut |name, t| {
        blocks.push(Block {
            name: format!("param:{name}"),
            dims: t.shape.clone(),
            data: t.data.clone(),
        });
    });
    net.visit_buffers(&mut |name, buf| {
        blocks.push(Block {
            name: format!("buffer:{name}"),
            dims: vec![buf.len()],
            data: buf.to_vec(),
        });
    });
    if let Some(adam) = adam {
        let mut names = Vec::new();
        net.visit_params(&mut |name, _| names.push(name.to_string()));
        for (kind, moments) in [("adam_m", &adam.m), ("adam_v", &adam.v)] {
            for (name, m) in names.iter().zip(moments) {
                blocks.push(Block {
                    name: format!("{kind}:{name}"),
                    dims: vec![m.len()],
                    data: m.clone(),
                });
            }
        }
    }

    let header = serde_json::to_vec(meta)
        .map_err(|e| Error::data(format!("checkpoint header serialization: {e}")))?;
    let mut out = Vec::with_capacity(header.len() + blocks.iter().map(|b| b.data.len() * 4 + 64).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for b in &blocks {
        let name = b.name.as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(b.dims.len() as u32).to_le_bytes());
        for &d in &b.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &b.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Network<f32>, Option<AdamState<f32>>, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0, path };
    let magic = cur.take(8)?;
    if magic != MAGIC {
        return Err(Error::data(format!("{}: not a checkpoint file", path.display())));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::data(format!(
            "{}: unsupported checkpoint version {version} (supported: {CHECKPOINT_VERSION})",
            path.display()
        )));
    }
    let header_len = cur.u64()? as usize;
    let header = cur.take(header_len)?;
    let meta: CheckpointMeta = serde_json::from_slice(header)
        .map_err(|e| Error::data(format!("{}: bad checkpoint header: {e}", path.display())))?;

    let n_blocks = cur.u32()? as usize;
    let mut blocks: BTreeMap<String, (Vec<usize>, Vec<f32>)> = BTreeMap::new();
    for _ in 0..n_blocks {
        let name_len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| Error::data(format!("{}: bad block name", path.display())))?;
        let ndim = cur.u32()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(cur.u64()? as usize);
        }
        let numel: usize = dims.iter().product();
        let raw = cur.take(numel * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if blocks.insert(name.clone(), (dims, data)).is_some() {
            return Err(Error::data(format!("{}: duplicate block '{name}'", path.display())));
        }
    }

    // rebuild the network shape, then overwrite every parameter and buffer
    let mut net = Network::<f32>::build(meta.network.clone(), 0)?;
    let mut missing: Vec<String> = Vec::new();
    let mut used = 0usize;
    net.visit_params_mut(&mut |name, t| {
        match blocks.get(&format!("param:{name}")) {
            Some((dims, data)) if *dims == t.shape && data.len() == t.data.len() => {
                t.data.copy_from_slice(data);
                used += 1;
            }
            Some(_) => missing.push(format!("shape mismatch in param:{name}")),
            None => missing.push(format!("missing param:{name}")),
        }
    });
    net.visit_buffers_mut(&mut |name, buf| {
        match blocks.get(&format!("buffer:{name}")) {
            Some((_, data)) if data.len() == buf.len() => {
                buf.copy_from_slice(data);
                used += 1;
            }
            Some(_) => missing.push(format!("shape mismatch in buffer:{name}")),
            None => missing.push(format!("missing buffer:{name}")),
        }
    });
    if !missing.is_empty() {
        return Err(Error::data(format!("{}: {}", path.display(), missing.join("; "))));
    }

    let has_moments = blocks.keys().any(|k| k.starts_with("adam_m:"));
    let adam = if has_moments {
        let mut names = Vec::new();
        net.visit_params(&mut |name, _| names.push(name.to_string()));
        let mut m = Vec::with_capacity(names.len());
        let mut v = Vec::with_capacity(names.len());
        for name in &names {
            let mm = blocks
                .get(&format!("adam_m:{name}"))
                .ok_or_else(|| Error::data(format!("{}: missing adam_m:{name}", path.display())))?;
            let vv = blocks
                .get(&format!("adam_v:{name}"))
                .ok_or_else(|| Error::data(format!("{}: missing adam_v:{name}", path.display())))?;
            m.push(mm.1.clone());
            v.push(vv.1.clone());
            used += 2;
        }
        Some(AdamState { step: meta.adam_step, m, v, hyper: AdamHyper::default() })
    } else {
        None
    };
    if used != blocks.len() {
        return Err(Error::data(format!(
            "{}: {} unrecognized blocks",
            path.display(),
            blocks.len() - used
        )));
    }
    Ok((net, adam, meta))
}

/// Rewrites a checkpoint without the shortcut branch: parameters dropped,
/// config flag cleared, optimizer moments discarded (the result is for
/// inference). Evaluation outputs are unaffected because the branch never
/// runs outside training.
pub fn strip_shortcut(input: &Path, output: &Path) -> Result<()> {
    let (net, _, mut meta) = load_checkpoint(input)?;
    let net = net.without_shortcut();
    meta.network = net.config().clone();
    save_checkpoint(output, &net, None, &meta)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::data(format!("{}: truncated checkpoint", self.path.display())));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]))
    }
}
