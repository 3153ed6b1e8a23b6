//! Spectral burn indices and Otsu thresholding, the non-learning baseline.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, ArrayView3, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::BinaryMask;

pub const OTSU_BINS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandRole {
    Red,
    /// Red edge around 740 nm.
    Re2,
    /// Red edge around 783 nm.
    Re3,
    Nir,
    NarrowNir,
    Swir1,
    Swir2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SensorProfile {
    /// Sentinel-2 L2A: B1–B9, B8A, B11, B12 (B10 dropped).
    #[serde(rename = "s2")]
    Sentinel2,
    /// Landsat-8 OLI: B1–B8.
    #[serde(rename = "l8")]
    Landsat8,
}

impl SensorProfile {
    pub fn channels(self) -> usize {
        match self {
            SensorProfile::Sentinel2 => 12,
            SensorProfile::Landsat8 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SensorProfile::Sentinel2 => "s2",
            SensorProfile::Landsat8 => "l8",
        }
    }

    pub fn band_map(self) -> BandMap {
        use BandRole::*;
        let roles: &[(BandRole, usize)] = match self {
            // B1 B2 B3 B4 B5 B6 B7 B8 B8A B9 B11 B12
            SensorProfile::Sentinel2 => &[
                (Red, 3),
                (Re2, 5),
                (Re3, 6),
                (Nir, 7),
                (NarrowNir, 8),
                (Swir1, 10),
                (Swir2, 11),
            ],
            SensorProfile::Landsat8 => &[(Red, 3), (Nir, 4), (Swir1, 5), (Swir2, 6)],
        };
        BandMap {
            profile: self.name().to_string(),
            channels: self.channels(),
            roles: roles.iter().copied().collect(),
        }
    }

    pub fn from_channels(channels: usize) -> Option<Self> {
        match channels {
            12 => Some(SensorProfile::Sentinel2),
            8 => Some(SensorProfile::Landsat8),
            _ => None,
        }
    }
}

impl FromStr for SensorProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s2" | "sentinel2" | "sentinel2-12ch" => Ok(SensorProfile::Sentinel2),
            "l8" | "landsat8" | "landsat8-8ch" => Ok(SensorProfile::Landsat8),
            _ => Err(Error::InvalidConfig(format!(
                "unknown sensor profile `{s}`"
            ))),
        }
    }
}

impl fmt::Display for SensorProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Channel index of each semantic band for one sensor layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandMap {
    pub profile: String,
    pub channels: usize,
    pub roles: BTreeMap<BandRole, usize>,
}

impl BandMap {
    pub fn new(
        profile: impl Into<String>,
        channels: usize,
        roles: BTreeMap<BandRole, usize>,
    ) -> Result<Self> {
        if let Some((role, &i)) = roles.iter().find(|(_, &i)| i >= channels) {
            return Err(Error::InvalidConfig(format!(
                "{role:?} mapped to channel {i} of a {channels}-channel profile"
            )));
        }
        Ok(Self {
            profile: profile.into(),
            channels,
            roles,
        })
    }

    fn require(&self, index: SpectralIndex, role: BandRole) -> Result<usize> {
        self.roles
            .get(&role)
            .copied()
            .ok_or_else(|| Error::MissingBand {
                index: index.to_string(),
                band: format!("{role:?}"),
                profile: self.profile.clone(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectralIndex {
    Nbr,
    Nbr2,
    Bais2,
}

impl SpectralIndex {
    pub const ALL: [SpectralIndex; 3] = [
        SpectralIndex::Nbr,
        SpectralIndex::Nbr2,
        SpectralIndex::Bais2,
    ];

    pub fn required_bands(self) -> &'static [BandRole] {
        use BandRole::*;
        match self {
            SpectralIndex::Nbr => &[Nir, Swir2],
            SpectralIndex::Nbr2 => &[Swir1, Swir2],
            SpectralIndex::Bais2 => &[Red, Re2, Re3, NarrowNir, Swir2],
        }
    }

    pub fn burned_polarity(self) -> Polarity {
        match self {
            SpectralIndex::Nbr | SpectralIndex::Nbr2 => Polarity::BurnedLow,
            SpectralIndex::Bais2 => Polarity::BurnedHigh,
        }
    }
}

impl FromStr for SpectralIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nbr" => Ok(SpectralIndex::Nbr),
            "nbr2" => Ok(SpectralIndex::Nbr2),
            "bais2" => Ok(SpectralIndex::Bais2),
            _ => Err(Error::InvalidConfig(format!("unknown index `{s}`"))),
        }
    }
}

impl fmt::Display for SpectralIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpectralIndex::Nbr => "NBR",
            SpectralIndex::Nbr2 => "NBR2",
            SpectralIndex::Bais2 => "BAIS2",
        })
    }
}

/// Which side of the threshold holds burned pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Polarity {
    BurnedLow,
    BurnedHigh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexRaster {
    pub index: SpectralIndex,
    /// `(H, W)`.
    pub data: Array2<f32>,
}

fn ratio(num: f32, den: f32) -> f32 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn normalized_difference(a: f32, b: f32) -> f32 {
    ratio(a - b, a + b)
}

/// `(1 − √(B6·B7·B8A / B4)) · ((B12 − B8A) / √(B12 + B8A) + 1)`.
fn bais2(red: f32, re2: f32, re3: f32, nnir: f32, swir2: f32) -> f32 {
    let veg = ratio(re2 * re3 * nnir, red);
    let sum = swir2 + nnir;
    if veg < 0.0 || sum <= 0.0 {
        return 0.0;
    }
    (1.0 - veg.sqrt()) * ((swir2 - nnir) / sum.sqrt() + 1.0)
}

/// Evaluates `index` on an `(H, W, C)` image.
pub fn compute_index(
    image: ArrayView3<'_, f32>,
    index: SpectralIndex,
    bands: &BandMap,
) -> Result<IndexRaster> {
    let idx: Vec<usize> = index
        .required_bands()
        .iter()
        .map(|&r| bands.require(index, r))
        .collect::<Result<_>>()?;
    let (h, w, c) = image.dim();
    if c != bands.channels {
        return Err(Error::shape(
            "compute_index channels",
            &[h, w, bands.channels],
            &[h, w, c],
        ));
    }
    let band = |k: usize| image.index_axis(ndarray::Axis(2), idx[k]);
    let data = match index {
        SpectralIndex::Nbr | SpectralIndex::Nbr2 => Zip::from(band(0))
            .and(band(1))
            .map_collect(|&a, &b| normalized_difference(a, b)),
        SpectralIndex::Bais2 => Zip::from(band(0))
            .and(band(1))
            .and(band(2))
            .and(band(3))
            .and(band(4))
            .map_collect(|&r, &e2, &e3, &n, &s| bais2(r, e2, e3, n, s)),
    };
    Ok(IndexRaster { index, data })
}

/// Histogram split chosen by Otsu's criterion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtsuSplit {
    pub min: f64,
    pub bin_width: f64,
    pub n_bins: usize,
    /// Pixels in bins `< bin` form the lower class.
    pub bin: usize,
}

impl OtsuSplit {
    pub fn threshold(&self) -> f64 {
        self.min + self.bin as f64 * self.bin_width
    }

    pub fn bin_of(&self, v: f64) -> usize {
        bin_index(v, self.min, self.bin_width, self.n_bins)
    }

    pub fn is_upper(&self, v: f64) -> bool {
        self.bin_of(v) >= self.bin
    }
}

fn bin_index(v: f64, min: f64, width: f64, n_bins: usize) -> usize {
    (((v - min) / width).floor().max(0.0) as usize).min(n_bins - 1)
}

/// Range and histogram of a raster over `n_bins` equal-width bins.
pub fn histogram(raster: ArrayView2<'_, f32>, n_bins: usize) -> Result<(f64, f64, Vec<u64>)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in raster.iter().filter(|v| v.is_finite()) {
        lo = lo.min(v as f64);
        hi = hi.max(v as f64);
    }
    if hi <= lo || n_bins < 2 {
        return Err(Error::ConstantRaster);
    }
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0u64; n_bins];
    for &v in raster.iter().filter(|v| v.is_finite()) {
        counts[bin_index(v as f64, lo, width, n_bins)] += 1;
    }
    Ok((lo, width, counts))
}

/// Otsu's split over an `n_bins` histogram; equal scores resolve to the
/// lower bin.
pub fn otsu_split(raster: ArrayView2<'_, f32>, n_bins: usize) -> Result<OtsuSplit> {
    let (min, width, counts) = histogram(raster, n_bins)?;
    let center = |k: usize| min + (k as f64 + 0.5) * width;
    let total: f64 = counts.iter().map(|&c| c as f64).sum();
    let total_mass: f64 = counts
        .iter()
        .enumerate()
        .map(|(k, &c)| c as f64 * center(k))
        .sum();

    let (mut w0, mut m0) = (0.0f64, 0.0f64);
    let mut best = (f64::NEG_INFINITY, 1);
    for k in 1..n_bins {
        w0 += counts[k - 1] as f64;
        m0 += counts[k - 1] as f64 * center(k - 1);
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = m0 / w0;
        let mu1 = (total_mass - m0) / w1;
        let score = w0 * w1 * (mu0 - mu1).powi(2);
        if score > best.0 {
            best = (score, k);
        }
    }
    Ok(OtsuSplit {
        min,
        bin_width: width,
        n_bins,
        bin: best.1,
    })
}

/// Threshold value at the chosen bin edge.
pub fn otsu_threshold(raster: ArrayView2<'_, f32>, n_bins: usize) -> Result<f64> {
    Ok(otsu_split(raster, n_bins)?.threshold())
}

/// Index, Otsu threshold, then polarity-aware binarization. A constant
/// index raster yields an all-zero mask.
pub fn segment_by_index(
    image: ArrayView3<'_, f32>,
    index: SpectralIndex,
    bands: &BandMap,
    polarity: Polarity,
) -> Result<BinaryMask> {
    let raster = compute_index(image, index, bands)?;
    let split = match otsu_split(raster.data.view(), OTSU_BINS) {
        Ok(s) => s,
        Err(Error::ConstantRaster) => {
            log::warn!("{index} raster is constant, returning an empty mask");
            return Ok(Array2::zeros(raster.data.dim()));
        }
        Err(e) => return Err(e),
    };
    Ok(raster.data.mapv(|v| {
        let upper = split.is_upper(v as f64);
        u8::from(match polarity {
            Polarity::BurnedHigh => upper,
            Polarity::BurnedLow => !upper,
        })
    }))
}
