use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{EntryKind, ParamStore, ZonalNet};
use crate::tensor::Tensor;

use super::config::TrainConfig;
use super::optim::Sgd;

const FORMAT: &str = "zonalnet-checkpoint-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub learning_rate: f64,
    /// Mean of PZ and TZ validation DSC on prostate slices, when validated.
    pub validation_dsc: Option<f64>,
}

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub iteration: usize,
    pub history: Vec<EpochRecord>,
    pub params: ParamStore,
    pub optimizer: Sgd,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TensorKind {
    Param,
    Buffer,
    Momentum,
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the blob.
    offset: usize,
    kind: TensorKind,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    config: TrainConfig,
    epoch: usize,
    iteration: usize,
    history: Vec<EpochRecord>,
    blob: String,
    tensors: Vec<TensorRecord>,
}

/// `<stem>.json` manifest and `<stem>.bin` blob.
pub fn checkpoint_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("bin") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let with = |ext: &str| {
        let mut s = stem.clone().into_os_string();
        s.push(ext);
        PathBuf::from(s)
    };
    (with(".json"), with(".bin"))
}

impl Checkpoint {
    /// A freshly initialized model with zero momentum.
    pub fn initial(config: &TrainConfig, model: &ZonalNet) -> Self {
        Self {
            config: config.clone(),
            epoch: 0,
            iteration: 0,
            history: Vec::new(),
            params: model.store().clone(),
            optimizer: Sgd::new(model.store()),
        }
    }

    /// Rebuilds the network described by the stored config with the stored
    /// weights.
    pub fn model(&self) -> Result<ZonalNet> {
        let mut net = ZonalNet::new(self.config.model.clone(), 0)?;
        net.store_mut().load_from(&self.params)?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let (json_path, bin_path) = checkpoint_paths(path);
        let mut blob: Vec<u8> = Vec::new();
        let mut tensors = Vec::new();
        let mut push = |name: &str, kind: TensorKind, t: &Tensor<f32>, blob: &mut Vec<u8>| {
            tensors.push(TensorRecord { name: name.to_string(), shape: t.shape().to_vec(), offset: blob.len(), kind });
            blob.extend(t.data().iter().flat_map(|v| v.to_le_bytes()));
        };
        for e in self.params.entries() {
            let kind = match e.kind {
                EntryKind::Param => TensorKind::Param,
                EntryKind::Buffer => TensorKind::Buffer,
            };
            push(&e.name, kind, &e.value, &mut blob);
        }
        let param_ids = self.params.param_ids();
        if param_ids.len() != self.optimizer.velocity.len() {
            return Err(Error::Validation("optimizer state does not match the parameters".into()));
        }
        for (id, v) in param_ids.iter().zip(&self.optimizer.velocity) {
            push(&self.params.entry(*id).name, TensorKind::Momentum, v, &mut blob);
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            config: self.config.clone(),
            epoch: self.epoch,
            iteration: self.iteration,
            history: self.history.clone(),
            blob: bin_path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string(),
            tensors,
        };
        if let Some(dir) = json_path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&bin_path, &blob).map_err(|e| Error::io(&bin_path, e))?;
        fs::write(&json_path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&json_path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (json_path, _) = checkpoint_paths(path);
        let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::corrupt(&json_path, format!("bad manifest: {e}")))?;
        if manifest.format != FORMAT {
            return Err(Error::corrupt(&json_path, format!("unknown format {}", manifest.format)));
        }
        let bin_path = json_path.with_file_name(&manifest.blob);
        let blob = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;

        let mut params = ParamStore::new();
        let mut velocity = Vec::new();
        for rec in &manifest.tensors {
            let n: usize = rec.shape.iter().product();
            let end = rec.offset + 4 * n;
            let bytes = blob
                .get(rec.offset..end)
                .ok_or_else(|| Error::corrupt(&bin_path, format!("{} extends past the blob", rec.name)))?;
            let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            let t = Tensor::new(rec.shape.clone(), data)?;
            match rec.kind {
                TensorKind::Param => {
                    params.insert(rec.name.clone(), EntryKind::Param, t)?;
                }
                TensorKind::Buffer => {
                    params.insert(rec.name.clone(), EntryKind::Buffer, t)?;
                }
                TensorKind::Momentum => velocity.push((rec.name.clone(), t)),
            }
        }
        let ids = params.param_ids();
        if ids.len() != velocity.len()
            || ids.iter().zip(&velocity).any(|(id, (name, t))| {
                params.entry(*id).name != *name || params.value(*id).shape() != t.shape()
            })
        {
            return Err(Error::corrupt(&json_path, "momentum buffers do not match the parameters"));
        }
        manifest.config.validate()?;
        Ok(Self {
            config: manifest.config,
            epoch: manifest.epoch,
            iteration: manifest.iteration,
            history: manifest.history,
            params,
            optimizer: Sgd { velocity: velocity.into_iter().map(|(_, t)| t).collect() },
        })
    }
}
