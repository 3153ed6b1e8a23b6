//! Sample storage, manifests, fold splits, normalization and the synthetic
//! scene generator.
//!
//! On disk a dataset is a directory holding `manifest.json` plus one raw
//! little-endian `f32` file per image in `(H, W, C)` order and one raw `u8`
//! file per mask in `(H, W)` order. Paths in the manifest are relative to the
//! manifest's directory.

mod folds;
mod stats;
mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, Array4, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

pub use folds::{make_folds, FoldSplit, FoldStrategy, Round};
pub use stats::{denormalize, normalize, ChannelStats};
pub use synth::{synthesize_dataset, synthesize_to_dir, SynthSpec};

use crate::error::{Error, Result};
use crate::indices::SensorProfile;
use crate::BinaryMask;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
    #[serde(default)]
    pub region: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub profile: SensorProfile,
    pub tile: usize,
    pub samples: Vec<SampleEntry>,
}

/// A validated manifest with paths resolved against its directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub profile: SensorProfile,
    pub tile: usize,
    pub samples: Vec<SampleEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub region: String,
    /// `(H, W, C)`.
    pub image: Array3<f32>,
    pub mask: BinaryMask,
}

/// Samples held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub profile: SensorProfile,
    pub tile: usize,
    pub samples: Vec<Sample>,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetIndex> {
    let path = path.as_ref();
    let path = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let manifest: Manifest = serde_json::from_slice(&fs::read(&path)?)
        .map_err(|e| Error::BadManifest(format!("{}: {e}", path.display())))?;
    let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let index = DatasetIndex {
        root,
        profile: manifest.profile,
        tile: manifest.tile,
        samples: manifest.samples,
    };
    index.validate()?;
    Ok(index)
}

impl DatasetIndex {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.profile.channels()
    }

    pub fn image_path(&self, i: usize) -> PathBuf {
        self.root.join(&self.samples[i].image)
    }

    pub fn mask_path(&self, i: usize) -> PathBuf {
        self.root.join(&self.samples[i].mask)
    }

    fn validate(&self) -> Result<()> {
        if self.tile == 0 {
            return Err(Error::BadManifest("tile must be positive".into()));
        }
        let mut seen = std::collections::HashSet::new();
        let px = (self.tile * self.tile) as u64;
        let c = self.channels();
        for (i, s) in self.samples.iter().enumerate() {
            if !seen.insert(&s.id) {
                return Err(Error::BadManifest(format!(
                    "duplicate sample id `{}`",
                    s.id
                )));
            }
            let image_len = file_len(&self.image_path(i))?;
            if image_len != px * c as u64 * 4 {
                let found_c = image_len as f64 / (px * 4) as f64;
                return Err(Error::ShapeMismatch {
                    context: format!("image of sample `{}`", s.id),
                    expected: vec![self.tile, self.tile, c],
                    found: vec![self.tile, self.tile, found_c.round() as usize],
                });
            }
            let mask_len = file_len(&self.mask_path(i))?;
            if mask_len != px {
                return Err(Error::ShapeMismatch {
                    context: format!("mask of sample `{}`", s.id),
                    expected: vec![self.tile, self.tile],
                    found: vec![mask_len as usize],
                });
            }
        }
        Ok(())
    }

    pub fn load_sample(&self, i: usize) -> Result<Sample> {
        let t = self.tile;
        let c = self.channels();
        let bytes = read_existing(&self.image_path(i))?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let image = Array3::from_shape_vec((t, t, c), data)
            .map_err(|_| Error::shape("image file", &[t, t, c], &[bytes.len() / 4]))?;
        let raw = read_existing(&self.mask_path(i))?;
        if let Some(&v) = raw.iter().find(|&&v| v > 1) {
            return Err(Error::NonBinaryInput(v));
        }
        let mask = Array2::from_shape_vec((t, t), raw)
            .map_err(|_| Error::shape("mask file", &[t, t], &[]))?;
        let entry = &self.samples[i];
        Ok(Sample {
            id: entry.id.clone(),
            region: entry.region.clone(),
            image,
            mask,
        })
    }

    pub fn load(&self) -> Result<Dataset> {
        Ok(Dataset {
            profile: self.profile,
            tile: self.tile,
            samples: (0..self.len())
                .map(|i| self.load_sample(i))
                .collect::<Result<_>>()?,
        })
    }

    pub fn folds(&self, k: usize, seed: u64, strategy: FoldStrategy) -> Result<FoldSplit> {
        let ids: Vec<&str> = self.samples.iter().map(|s| s.id.as_str()).collect();
        let regions: Vec<&str> = self.samples.iter().map(|s| s.region.as_str()).collect();
        make_folds(&ids, &regions, k, seed, strategy)
    }
}

fn file_len(p: &Path) -> Result<u64> {
    match fs::metadata(p) {
        Ok(m) => Ok(m.len()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(Error::MissingFile(p.to_path_buf()))
        }
        Err(e) => Err(e.into()),
    }
}

fn read_existing(p: &Path) -> Result<Vec<u8>> {
    match fs::read(p) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(Error::MissingFile(p.to_path_buf()))
        }
        Err(e) => Err(e.into()),
    }
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.samples
            .first()
            .map_or(self.profile.channels(), |s| s.image.dim().2)
    }

    pub fn folds(&self, k: usize, seed: u64, strategy: FoldStrategy) -> Result<FoldSplit> {
        let ids: Vec<&str> = self.samples.iter().map(|s| s.id.as_str()).collect();
        let regions: Vec<&str> = self.samples.iter().map(|s| s.region.as_str()).collect();
        make_folds(&ids, &regions, k, seed, strategy)
    }

    /// Stacks the selected images into `(B, H, W, C)`.
    pub fn stack_images(&self, indices: &[usize]) -> Array4<f32> {
        let views: Vec<ArrayView3<'_, f32>> = indices
            .iter()
            .map(|&i| self.samples[i].image.view())
            .collect();
        ndarray::stack(Axis(0), &views).expect("samples share a shape")
    }

    /// Stacks the selected masks into `(B, H, W)`.
    pub fn stack_masks(&self, indices: &[usize]) -> Array3<u8> {
        let views: Vec<_> = indices
            .iter()
            .map(|&i| self.samples[i].mask.view())
            .collect();
        ndarray::stack(Axis(0), &views).expect("masks share a shape")
    }

    /// Fraction of burned pixels over the whole dataset.
    pub fn positive_fraction(&self) -> f64 {
        let (pos, total) = self.samples.iter().fold((0usize, 0usize), |(p, t), s| {
            (
                p + s.mask.iter().filter(|&&v| v == 1).count(),
                t + s.mask.len(),
            )
        });
        if total == 0 {
            0.0
        } else {
            pos as f64 / total as f64
        }
    }

    /// Writes raw sample files and a manifest under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<DatasetIndex> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir.join("images"))?;
        fs::create_dir_all(dir.join("masks"))?;
        let mut entries = Vec::with_capacity(self.len());
        for s in &self.samples {
            let (h, w, c) = s.image.dim();
            if h != self.tile || w != self.tile || c != self.profile.channels() {
                return Err(Error::shape(
                    format!("sample `{}`", s.id),
                    &[self.tile, self.tile, self.profile.channels()],
                    &[h, w, c],
                ));
            }
            let image = PathBuf::from("images").join(format!("{}.f32", s.id));
            let mask = PathBuf::from("masks").join(format!("{}.u8", s.id));
            let bytes: Vec<u8> = s.image.iter().flat_map(|v| v.to_le_bytes()).collect();
            fs::write(dir.join(&image), bytes)?;
            fs::write(dir.join(&mask), s.mask.iter().copied().collect::<Vec<u8>>())?;
            entries.push(SampleEntry {
                id: s.id.clone(),
                image,
                mask,
                region: s.region.clone(),
            });
        }
        let manifest = Manifest {
            profile: self.profile,
            tile: self.tile,
            samples: entries,
        };
        fs::write(
            dir.join(MANIFEST_FILE),
            serde_json::to_vec_pretty(&manifest)?,
        )?;
        load_manifest(dir.join(MANIFEST_FILE))
    }
}
