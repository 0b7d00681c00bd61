//! Parameter snapshots and their on-disk form.
//!
//! A checkpoint saves as two sibling files: a plain-text TOML manifest at the
//! given path and a raw little-endian f32 blob at the same path with `.bin`
//! appended. The manifest records names, shapes, and element offsets for every
//! tensor, batch-norm statistic, and optimizer moment, plus the blob's length
//! and SHA-256, so a stale or truncated blob is caught before any value is
//! trusted.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Deformer, ModelConfig};
use crate::rng::RngState;
use crate::train::AdamState;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorSnapshot {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatSnapshot {
    pub name: String,
    pub values: Vec<f32>,
}

/// Everything needed to reproduce a trained model: the config it was built
/// from, every registered parameter, batch-norm running statistics, Adam
/// moments, and where training stood when the snapshot was taken.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub epoch: usize,
    pub best_val_acc: f64,
    pub adam_step: u64,
    pub rng: RngState,
    pub tensors: Vec<TensorSnapshot>,
    pub bn_stats: Vec<StatSnapshot>,
    /// First/second moments, parallel to `tensors`.
    pub adam_m: Vec<Vec<f32>>,
    pub adam_v: Vec<Vec<f32>>,
}

impl Checkpoint {
    /// Snapshots the model and optimizer. The moment buffers must be aligned
    /// with the parameter registry, which holds whenever the optimizer was
    /// built for this model.
    pub fn capture(
        model: &Deformer<f32>,
        adam: &AdamState<f32>,
        epoch: usize,
        best_val_acc: f64,
        rng: RngState,
    ) -> Result<Checkpoint> {
        let named = model.params.named();
        if adam.m.len() != named.len() || adam.v.len() != named.len() {
            return Err(Error::Checkpoint(format!(
                "optimizer tracks {} tensors, model registry has {}",
                adam.m.len(),
                named.len()
            )));
        }
        let mut tensors = Vec::with_capacity(named.len());
        for (i, (name, t)) in named.iter().enumerate() {
            if adam.m[i].len() != t.numel() || adam.v[i].len() != t.numel() {
                return Err(Error::Checkpoint(format!(
                    "moment buffer for {name} has {} values, tensor has {}",
                    adam.m[i].len(),
                    t.numel()
                )));
            }
            tensors.push(TensorSnapshot {
                name: name.clone(),
                shape: t.shape().to_vec(),
                data: t.to_vec(),
            });
        }
        let bn_stats = model
            .params
            .bn_stats()
            .into_iter()
            .map(|(name, values)| StatSnapshot { name, values })
            .collect();
        Ok(Checkpoint {
            model_config: model.config.clone(),
            epoch,
            best_val_acc,
            adam_step: adam.step,
            rng,
            tensors,
            bn_stats,
            adam_m: adam.m.clone(),
            adam_v: adam.v.clone(),
        })
    }

    /// For each registry position, the index of the checkpoint tensor with
    /// that name. Errors collect every offending name/shape, not just the
    /// first.
    fn compat_map(&self, model: &Deformer<f32>) -> Result<Vec<usize>> {
        let named = model.params.named();
        let mut map = Vec::with_capacity(named.len());
        let mut problems = Vec::new();
        for (name, t) in named {
            let hits: Vec<usize> = (0..self.tensors.len())
                .filter(|&i| self.tensors[i].name == *name)
                .collect();
            match hits.as_slice() {
                [] => problems.push(format!("{name} {:?} missing from checkpoint", t.shape())),
                [i] => {
                    let snap = &self.tensors[*i];
                    if snap.shape != t.shape() {
                        problems.push(format!(
                            "{name}: model {:?} vs checkpoint {:?}",
                            t.shape(),
                            snap.shape
                        ));
                    } else {
                        map.push(*i);
                    }
                }
                _ => problems.push(format!("{name} appears {} times", hits.len())),
            }
        }
        for snap in &self.tensors {
            if model.params.get(&snap.name).is_none() {
                problems.push(format!(
                    "{} {:?} not in the model registry",
                    snap.name, snap.shape
                ));
            }
        }
        if problems.is_empty() {
            Ok(map)
        } else {
            Err(Error::Checkpoint(format!(
                "checkpoint does not fit the model: {}",
                problems.join("; ")
            )))
        }
    }

    /// Shape/name compatibility check without touching the model.
    pub fn validate_against(&self, model: &Deformer<f32>) -> Result<()> {
        self.compat_map(model).map(|_| ())
    }

    /// Writes parameters, running statistics, and moments into the model and
    /// returns the restored optimizer state. All-or-nothing: compatibility is
    /// fully checked before the first store.
    pub fn apply(&self, model: &Deformer<f32>) -> Result<AdamState<f32>> {
        let map = self.compat_map(model)?;
        if self.bn_stats.len() != model.params.bn_stats().len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint carries {} batch-norm statistics, model has {}",
                self.bn_stats.len(),
                model.params.bn_stats().len()
            )));
        }
        let named = model.params.named();
        let mut adam = AdamState::new(named);
        adam.step = self.adam_step;
        for (pos, (_, t)) in named.iter().enumerate() {
            let i = map[pos];
            t.store(&self.tensors[i].data);
            adam.m[pos].copy_from_slice(&self.adam_m[i]);
            adam.v[pos].copy_from_slice(&self.adam_v[i]);
        }
        for stat in &self.bn_stats {
            model.params.set_bn_stat(&stat.name, &stat.values)?;
        }
        Ok(adam)
    }

    /// Builds a fresh model from the config echo and loads this checkpoint
    /// into it.
    pub fn restore_model(&self) -> Result<(Deformer<f32>, AdamState<f32>)> {
        let model = Deformer::new(self.model_config.clone(), &RngState::new(0))?;
        let adam = self.apply(&model)?;
        Ok((model, adam))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct StatEntry {
    name: String,
    offset: u64,
    len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct MomentEntry {
    name: String,
    m_offset: u64,
    v_offset: u64,
    len: u64,
}

/// Plain-text side of the format. Scalar fields stay ahead of the tables so
/// the TOML serializer accepts the declaration order as-is.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    epoch: usize,
    best_val_acc: f64,
    adam_step: u64,
    /// Blob file name, always a bare sibling of the manifest.
    blob: String,
    blob_len: u64,
    blob_sha256: String,
    rng: RngState,
    model: ModelConfig,
    #[serde(default)]
    tensor: Vec<TensorEntry>,
    #[serde(default)]
    stat: Vec<StatEntry>,
    #[serde(default)]
    moment: Vec<MomentEntry>,
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn blob_file_name(path: &Path) -> Result<String> {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Config(format!("checkpoint path {} has no file name", path.display())))?;
    Ok(format!("{name}.bin"))
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut blob: Vec<f32> = Vec::new();
    let mut append = |values: &[f32]| -> (u64, u64) {
        let offset = blob.len() as u64;
        blob.extend_from_slice(values);
        (offset, values.len() as u64)
    };

    let mut tensor = Vec::with_capacity(ckpt.tensors.len());
    for snap in &ckpt.tensors {
        let (offset, len) = append(&snap.data);
        tensor.push(TensorEntry {
            name: snap.name.clone(),
            shape: snap.shape.clone(),
            offset,
            len,
        });
    }
    let mut stat = Vec::with_capacity(ckpt.bn_stats.len());
    for snap in &ckpt.bn_stats {
        let (offset, len) = append(&snap.values);
        stat.push(StatEntry {
            name: snap.name.clone(),
            offset,
            len,
        });
    }
    let mut moment = Vec::with_capacity(ckpt.tensors.len());
    for (i, snap) in ckpt.tensors.iter().enumerate() {
        let (m_offset, len) = append(&ckpt.adam_m[i]);
        let (v_offset, _) = append(&ckpt.adam_v[i]);
        moment.push(MomentEntry {
            name: snap.name.clone(),
            m_offset,
            v_offset,
            len,
        });
    }

    let bytes: Vec<u8> = blob.iter().flat_map(|v| v.to_le_bytes()).collect();
    let blob_name = blob_file_name(path)?;
    let manifest = Manifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        epoch: ckpt.epoch,
        best_val_acc: ckpt.best_val_acc,
        adam_step: ckpt.adam_step,
        blob: blob_name.clone(),
        blob_len: bytes.len() as u64,
        blob_sha256: sha256_hex(&bytes),
        rng: ckpt.rng,
        model: ckpt.model_config.clone(),
        tensor,
        stat,
        moment,
    };
    let text = toml::to_string(&manifest)
        .map_err(|e| Error::Checkpoint(format!("encoding manifest: {e}")))?;

    let blob_path = path.with_file_name(&blob_name);
    fs::write(&blob_path, &bytes).map_err(|e| Error::io(blob_path.display().to_string(), e))?;
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text =
        fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let manifest: Manifest = toml::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: format version {} (this build reads {})",
            path.display(),
            manifest.format_version,
            CHECKPOINT_FORMAT_VERSION
        )));
    }
    if manifest.blob.contains(['/', '\\']) {
        return Err(Error::Checkpoint(format!(
            "{}: blob name {:?} must be a bare file name",
            path.display(),
            manifest.blob
        )));
    }

    let blob_path = path.with_file_name(&manifest.blob);
    let bytes = fs::read(&blob_path).map_err(|e| Error::io(blob_path.display().to_string(), e))?;
    if bytes.len() as u64 != manifest.blob_len {
        return Err(Error::Checkpoint(format!(
            "{}: blob is {} bytes, manifest says {}",
            blob_path.display(),
            bytes.len(),
            manifest.blob_len
        )));
    }
    let digest = sha256_hex(&bytes);
    if digest != manifest.blob_sha256 {
        return Err(Error::Checkpoint(format!(
            "{}: blob SHA-256 {digest} does not match manifest {}",
            blob_path.display(),
            manifest.blob_sha256
        )));
    }
    let floats: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if floats.len() * 4 != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{}: blob length {} is not a multiple of 4",
            blob_path.display(),
            bytes.len()
        )));
    }

    let take = |offset: u64, len: u64, what: &str| -> Result<Vec<f32>> {
        let (offset, len) = (offset as usize, len as usize);
        if offset.checked_add(len).is_none_or(|end| end > floats.len()) {
            return Err(Error::Checkpoint(format!(
                "{}: {what} spans {offset}..{} but the blob holds {} values",
                blob_path.display(),
                offset + len,
                floats.len()
            )));
        }
        Ok(floats[offset..offset + len].to_vec())
    };

    let mut seen = HashSet::new();
    let mut tensors = Vec::with_capacity(manifest.tensor.len());
    for entry in &manifest.tensor {
        if !seen.insert(entry.name.as_str()) {
            return Err(Error::Checkpoint(format!(
                "{}: tensor {} listed twice",
                path.display(),
                entry.name
            )));
        }
        let numel: usize = entry.shape.iter().product();
        if numel as u64 != entry.len {
            return Err(Error::Checkpoint(format!(
                "{}: tensor {} has shape {:?} but {} values",
                path.display(),
                entry.name,
                entry.shape,
                entry.len
            )));
        }
        tensors.push(TensorSnapshot {
            name: entry.name.clone(),
            shape: entry.shape.clone(),
            data: take(entry.offset, entry.len, &entry.name)?,
        });
    }
    let mut bn_stats = Vec::with_capacity(manifest.stat.len());
    for entry in &manifest.stat {
        bn_stats.push(StatSnapshot {
            name: entry.name.clone(),
            values: take(entry.offset, entry.len, &entry.name)?,
        });
    }
    if manifest.moment.len() != manifest.tensor.len() {
        return Err(Error::Checkpoint(format!(
            "{}: {} moment entries for {} tensors",
            path.display(),
            manifest.moment.len(),
            manifest.tensor.len()
        )));
    }
    let mut adam_m = Vec::with_capacity(manifest.moment.len());
    let mut adam_v = Vec::with_capacity(manifest.moment.len());
    for (entry, t) in manifest.moment.iter().zip(&manifest.tensor) {
        if entry.name != t.name || entry.len != t.len {
            return Err(Error::Checkpoint(format!(
                "{}: moment entry {} ({} values) does not pair with tensor {} ({} values)",
                path.display(),
                entry.name,
                entry.len,
                t.name,
                t.len
            )));
        }
        adam_m.push(take(entry.m_offset, entry.len, &entry.name)?);
        adam_v.push(take(entry.v_offset, entry.len, &entry.name)?);
    }

    let accounted: u64 = manifest.tensor.iter().map(|t| t.len).sum::<u64>()
        + manifest.stat.iter().map(|s| s.len).sum::<u64>()
        + manifest.moment.iter().map(|m| 2 * m.len).sum::<u64>();
    if accounted != floats.len() as u64 {
        return Err(Error::Checkpoint(format!(
            "{}: manifest accounts for {accounted} values, blob holds {}",
            path.display(),
            floats.len()
        )));
    }

    Ok(Checkpoint {
        model_config: manifest.model,
        epoch: manifest.epoch,
        best_val_acc: manifest.best_val_acc,
        adam_step: manifest.adam_step,
        rng: manifest.rng,
        tensors,
        bn_stats,
        adam_m,
        adam_v,
    })
}
