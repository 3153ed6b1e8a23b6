use ndarray::{Array3, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-channel mean and population std, from training images only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl ChannelStats {
    pub fn compute<'a>(images: impl IntoIterator<Item = ArrayView3<'a, f32>>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut n = 0u64;
        for img in images {
            let c = img.dim().2;
            if sum.is_empty() {
                sum = vec![0.0; c];
                sq = vec![0.0; c];
            } else if sum.len() != c {
                return Err(Error::shape("channel stats", &[sum.len()], &[c]));
            }
            for px in img.lanes(Axis(2)) {
                for (k, &v) in px.iter().enumerate() {
                    sum[k] += v as f64;
                    sq[k] += (v as f64) * (v as f64);
                }
            }
            n += (img.dim().0 * img.dim().1) as u64;
        }
        if n == 0 {
            return Err(Error::InvalidConfig(
                "channel stats need at least one image".into(),
            ));
        }
        let n = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| ((q / n - m * m).max(0.0)).sqrt() as f32)
            .collect();
        Ok(Self {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, c: usize) -> Result<()> {
        if c != self.channels() {
            return Err(Error::shape("normalize channels", &[self.channels()], &[c]));
        }
        Ok(())
    }

    fn degenerate(&self, k: usize) -> bool {
        self.std[k].is_nan() || self.std[k] <= 0.0
    }
}

/// `(x − mean) / std` per channel; zero-std channels pass through unchanged.
pub fn normalize(image: ArrayView3<'_, f32>, stats: &ChannelStats) -> Result<Array3<f32>> {
    stats.check(image.dim().2)?;
    for k in (0..stats.channels()).filter(|&k| stats.degenerate(k)) {
        log::warn!("channel {k} has zero variance, left unnormalized");
    }
    let mut out = image.to_owned();
    for mut px in out.lanes_mut(Axis(2)) {
        for (k, v) in px.iter_mut().enumerate() {
            if !stats.degenerate(k) {
                *v = (*v - stats.mean[k]) / stats.std[k];
            }
        }
    }
    Ok(out)
}

pub fn denormalize(image: ArrayView3<'_, f32>, stats: &ChannelStats) -> Result<Array3<f32>> {
    stats.check(image.dim().2)?;
    let mut out = image.to_owned();
    for mut px in out.lanes_mut(Axis(2)) {
        for (k, v) in px.iter_mut().enumerate() {
            if !stats.degenerate(k) {
                *v = *v * stats.std[k] + stats.mean[k];
            }
        }
    }
    Ok(out)
}
