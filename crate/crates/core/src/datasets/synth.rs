use std::f32::consts::PI;
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetIndex, Sample};
use crate::error::{Error, Result};
use crate::indices::{BandRole, SensorProfile};

/// Parameters of the synthetic burned-scene generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_samples: usize,
    pub tile: usize,
    /// 12 (Sentinel-2 layout) or 8 (Landsat-8 layout).
    pub channels: usize,
    /// Expected share of burned pixels per image.
    pub burned_fraction: f64,
    pub max_blobs: usize,
    /// Upper bound on unburned bare-soil patches per image. Bare soil lowers
    /// NIR like a burn but brightens the visible bands.
    pub max_confounders: usize,
    /// Scales how strongly burns depress NIR and raise SWIR.
    pub separation: f32,
    /// Std of the independent per-band noise, relative to the band mean.
    pub noise: f32,
    /// Amplitude of the smooth terrain field shared by all bands.
    pub terrain: f32,
    pub regions: usize,
    /// Added to every pixel of each band after synthesis.
    pub band_shift: Vec<f32>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_samples: 64,
            tile: 128,
            channels: 12,
            burned_fraction: 0.05,
            max_blobs: 3,
            max_confounders: 2,
            separation: 1.0,
            noise: 0.05,
            terrain: 0.15,
            regions: 4,
            band_shift: Vec::new(),
        }
    }
}

/// Unburned vegetation reflectance per band.
pub(crate) fn base_reflectance(profile: SensorProfile) -> &'static [f32] {
    match profile {
        // B1 B2 B3 B4 B5 B6 B7 B8 B8A B9 B11 B12
        SensorProfile::Sentinel2 => &[
            0.04, 0.06, 0.09, 0.07, 0.12, 0.25, 0.30, 0.32, 0.33, 0.33, 0.20, 0.10,
        ],
        // B1 B2 B3 B4 B5 B6 B7 B8
        SensorProfile::Landsat8 => &[0.04, 0.06, 0.09, 0.07, 0.32, 0.20, 0.10, 0.08],
    }
}

/// Multiplicative change a burn of unit separation applies to one band.
pub(crate) fn burn_response(profile: SensorProfile, band: usize) -> f32 {
    let map = profile.band_map();
    let role = map.roles.iter().find(|(_, &i)| i == band).map(|(r, _)| *r);
    match (profile, role) {
        (_, Some(BandRole::Nir | BandRole::NarrowNir)) => -0.5,
        (_, Some(BandRole::Re2 | BandRole::Re3)) => -0.4,
        (_, Some(BandRole::Swir1)) => 0.3,
        (_, Some(BandRole::Swir2)) => 0.8,
        (SensorProfile::Sentinel2, None) if band == 4 => -0.2,
        _ => 0.0,
    }
}

/// Multiplicative change of bare soil relative to vegetation.
pub(crate) fn confounder_response(profile: SensorProfile, band: usize) -> f32 {
    let map = profile.band_map();
    let role = map.roles.iter().find(|(_, &i)| i == band).map(|(r, _)| *r);
    match role {
        Some(BandRole::Nir | BandRole::NarrowNir) => -0.35,
        Some(BandRole::Re2 | BandRole::Re3) => -0.3,
        Some(BandRole::Swir1) => 0.5,
        Some(BandRole::Swir2) => 0.6,
        _ if band <= map.roles[&BandRole::Red] => 0.6,
        _ => 0.0,
    }
}

impl SynthSpec {
    /// Same generator with bare-soil patches disabled and the burn signal
    /// scaled up; index thresholding separates these scenes cleanly.
    pub fn high_separability() -> Self {
        Self {
            max_confounders: 0,
            separation: 1.2,
            ..Self::default()
        }
    }

    pub fn profile(&self) -> Result<SensorProfile> {
        SensorProfile::from_channels(self.channels).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "synthetic channels must be 8 or 12, got {}",
                self.channels
            ))
        })
    }

    /// Band means after a burn of this spec's separation.
    pub fn burned_reflectance(&self) -> Result<Vec<f32>> {
        let p = self.profile()?;
        Ok(base_reflectance(p)
            .iter()
            .enumerate()
            .map(|(b, &v)| v * (1.0 + self.separation * burn_response(p, b)))
            .collect())
    }

    /// Same scenes, each band offset by `amount` times its mean, with signs
    /// alternating across bands.
    pub fn with_band_shift(mut self, amount: f32) -> Result<Self> {
        let p = self.profile()?;
        self.band_shift = base_reflectance(p)
            .iter()
            .enumerate()
            .map(|(b, &v)| if b % 2 == 0 { amount * v } else { -amount * v })
            .collect();
        Ok(self)
    }

    fn validate(&self) -> Result<SensorProfile> {
        let p = self.profile()?;
        if self.tile == 0 {
            return Err(Error::InvalidConfig("tile must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.burned_fraction) {
            return Err(Error::InvalidConfig(
                "burned_fraction must be in [0, 1)".into(),
            ));
        }
        if !self.band_shift.is_empty() && self.band_shift.len() != self.channels {
            return Err(Error::shape(
                "band_shift",
                &[self.channels],
                &[self.band_shift.len()],
            ));
        }
        Ok(p)
    }
}

struct Ellipse {
    cy: f32,
    cx: f32,
    a: f32,
    b: f32,
    cos: f32,
    sin: f32,
}

impl Ellipse {
    fn contains(&self, y: f32, x: f32) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

/// Smooth field from a few random plane waves, roughly in `[-1, 1]`.
fn terrain_field(tile: usize, rng: &mut ChaCha8Rng) -> Array2<f32> {
    let waves: Vec<(f32, f32, f32)> = (0..3)
        .map(|_| {
            let theta = rng.random_range(0.0..2.0 * PI);
            let freq = rng.random_range(0.5..3.0) * 2.0 * PI / tile as f32;
            (
                freq * theta.cos(),
                freq * theta.sin(),
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    Array2::from_shape_fn((tile, tile), |(y, x)| {
        waves
            .iter()
            .map(|&(fy, fx, ph)| (fy * y as f32 + fx * x as f32 + ph).sin())
            .sum::<f32>()
            / 3.0
    })
}

fn blob_mask(spec: &SynthSpec, max_blobs: usize, rng: &mut ChaCha8Rng) -> Array2<u8> {
    let t = spec.tile;
    if spec.burned_fraction <= 0.0 || max_blobs == 0 {
        return Array2::zeros((t, t));
    }
    let n = rng.random_range(1..=max_blobs);
    let blobs: Vec<Ellipse> = (0..n)
        .map(|_| {
            let area = spec.burned_fraction as f32 * (t * t) as f32 / n as f32
                * rng.random_range(0.5..1.5);
            let aspect: f32 = rng.random_range(0.5..2.0);
            let r = (area / PI).sqrt();
            let theta = rng.random_range(0.0..PI);
            Ellipse {
                cy: rng.random_range(0.0..t as f32),
                cx: rng.random_range(0.0..t as f32),
                a: r * aspect.sqrt(),
                b: r / aspect.sqrt(),
                cos: theta.cos(),
                sin: theta.sin(),
            }
        })
        .collect();
    Array2::from_shape_fn((t, t), |(y, x)| {
        u8::from(
            blobs
                .iter()
                .any(|e| e.contains(y as f32 + 0.5, x as f32 + 0.5)),
        )
    })
}

fn synthesize_sample(spec: &SynthSpec, profile: SensorProfile, idx: usize, seed: u64) -> Sample {
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ (idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let t = spec.tile;
    let region = idx % spec.regions.max(1);
    let base = base_reflectance(profile);
    let c = base.len();

    let brightness: f32 = rng.random_range(0.9..1.1);
    let tint: Vec<f32> = (0..c)
        .map(|b| 1.0 + 0.05 * ((region * 7 + b) as f32).sin())
        .collect();
    let gains: Vec<f32> = (0..c).map(|_| rng.random_range(0.5..1.0)).collect();
    let terrain = terrain_field(t, &mut rng);
    let mask = blob_mask(spec, spec.max_blobs, &mut rng);
    let soil = blob_mask(spec, spec.max_confounders, &mut rng);
    let noise = Normal::new(0.0f32, 1.0).expect("unit normal");

    let mut image = Array3::zeros((t, t, c));
    for y in 0..t {
        for x in 0..t {
            let burned = mask[[y, x]] == 1;
            let common = noise.sample(&mut rng) * 0.5;
            for b in 0..c {
                let mut v = base[b] * brightness * tint[b];
                if burned {
                    v *= 1.0 + spec.separation * burn_response(profile, b);
                } else if soil[[y, x]] == 1 {
                    v *= 1.0 + confounder_response(profile, b);
                }
                let wobble = spec.terrain * gains[b] * terrain[[y, x]];
                let indep = noise.sample(&mut rng);
                v *= 1.0 + wobble + spec.noise * (common + indep);
                if let Some(s) = spec.band_shift.get(b) {
                    v += s;
                }
                image[[y, x, b]] = v;
            }
        }
    }
    Sample {
        id: format!("synth-{idx:04}"),
        region: format!("region-{region}"),
        image,
        mask,
    }
}

/// Deterministic in `(spec, seed)`; masks are exactly the burn supports.
pub fn synthesize_dataset(spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    let profile = spec.validate()?;
    Ok(Dataset {
        profile,
        tile: spec.tile,
        samples: (0..spec.n_samples)
            .map(|i| synthesize_sample(spec, profile, i, seed))
            .collect(),
    })
}

pub fn synthesize_to_dir(
    spec: &SynthSpec,
    seed: u64,
    dir: impl AsRef<Path>,
) -> Result<DatasetIndex> {
    synthesize_dataset(spec, seed)?.write(dir)
}
