use std::fs;
use std::path::Path;

use magnifier_nn::{ParamStore, Tensor};
use ndarray::{Array4, ArrayView3, Axis, IxDyn};
use serde::{Deserialize, Serialize};

use super::{check_profile, evaluate_prepared, masks_from_nchw, Prepared};
use crate::datasets::{normalize, ChannelStats, Dataset};
use crate::error::{Error, Result};
use crate::metrics::ConfusionCounts;
use crate::model::{nhwc_to_nchw, MagnifierModel, ModelConfig};
use crate::BinaryMask;

const MAGIC: &[u8; 8] = b"MAGNCKPT";
const VERSION: u32 = 1;

/// Trained weights with the normalization they expect.
#[derive(Debug)]
pub struct Checkpoint {
    pub model: MagnifierModel,
    pub stats: ChannelStats,
    pub epoch: usize,
    pub val_iou: f64,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    stats: ChannelStats,
    epoch: usize,
    val_iou: f64,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn new(model: MagnifierModel, stats: ChannelStats, epoch: usize, val_iou: f64) -> Self {
        Self {
            model,
            stats,
            epoch,
            val_iou,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.model.config().encoder.in_channels
    }

    /// `MAGNCKPT`, version, header length, JSON header, then every tensor as
    /// little-endian `f32` in header order.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = self.model.params();
        let header = Header {
            model: self.model.config().clone(),
            stats: self.stats.clone(),
            epoch: self.epoch,
            val_iou: self.val_iou,
            tensors: params
                .iter()
                .map(|(_, name, t)| TensorEntry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + params.numel() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, t) in params.iter() {
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::BadCheckpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::BadCheckpoint(format!(
                "unsupported version {version}"
            )));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(20..20 + len)
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        let mut offset = 20 + len;
        let mut loaded = ParamStore::new();
        for entry in &header.tensors {
            let n: usize = entry.shape.iter().product();
            let raw = bytes
                .get(offset..offset + 4 * n)
                .ok_or_else(|| Error::BadCheckpoint(format!("truncated tensor {}", entry.name)))?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            loaded.add(
                entry.name.clone(),
                Tensor::from_shape_vec(IxDyn(&entry.shape), data)
                    .map_err(|e| Error::BadCheckpoint(e.to_string()))?,
            );
            offset += 4 * n;
        }
        if offset != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        let mut model = MagnifierModel::from_config(&header.model, 0)?;
        model.params_mut().load_from(&loaded)?;
        Ok(Self::new(model, header.stats, header.epoch, header.val_iou))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_bytes(&fs::read(path)?)
    }

    /// Pooled confusion counts over `indices`; no weights change.
    pub fn evaluate(
        &self,
        data: &Dataset,
        indices: &[usize],
        batch_size: usize,
    ) -> Result<ConfusionCounts> {
        check_profile(self.model.config(), data)?;
        let prepared = Prepared::new(data, &self.stats, indices)?;
        evaluate_prepared(&self.model, &prepared, indices, batch_size)
    }

    /// Mask for one raw `(H, W, C)` image.
    pub fn predict(&self, image: ArrayView3<'_, f32>) -> Result<BinaryMask> {
        if image.dim().2 != self.in_channels() {
            return Err(Error::IncompatibleProfile {
                expected: self.in_channels(),
                found: image.dim().2,
            });
        }
        let norm = normalize(image, &self.stats)?;
        let batch: Array4<f32> = norm.insert_axis(Axis(0));
        let g = magnifier_nn::Graph::inference();
        let logits = self
            .model
            .logits_graph(&g, g.constant(nhwc_to_nchw(batch.view())))?;
        Ok(masks_from_nchw(&logits.value()).remove(0))
    }
}
