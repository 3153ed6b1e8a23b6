//! Asymmetric Unified Focal loss for two-class (common vs rare) segmentation.
//!
//! The loss is a convex combination of a cross-entropy-family term and a
//! Tversky-family term:
//!
//! ```text
//! L    = λ·L_maF + (1 − λ)·L_maFT
//! L_maF  = −(1/N) Σ_i [ δ·g_r,i·ln p_r,i + (1 − δ)·g_c,i·(1 − p_c,i)^γ·ln p_c,i ]
//! L_maFT = (1 − mTI_c) + (1 − mTI_r)^(1 − γ)
//! mTI_r  = Σ p_r g_r / (Σ p_r g_r + δ Σ p_r g_c + (1 − δ) Σ p_c g_r)
//! ```
//!
//! `mTI_c` is the same index with the class roles swapped. Focal suppression
//! only touches the common class; the rare class gets plain weighted
//! cross-entropy and an enhancing exponent `1 − γ < 1`.
//!
//! Sums run over every pixel handed in, so a batch is pooled rather than
//! averaged per image. Probabilities are clamped to `[ε, 1 − ε]`.

use magnifier_nn::{Tensor, Var};
use ndarray::{ArrayView3, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability clamp.
pub const PROB_EPS: f64 = 1e-7;

/// Channel index of the burned (rare) class in logits.
pub const RARE_CLASS: usize = 1;
/// Channel index of the unburned (common) class in logits.
pub const COMMON_CLASS: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the focal term; `1 − lambda` goes to the Tversky term.
    pub lambda: f64,
    /// Rare-class weight in the focal term and false-positive weight in the
    /// Tversky index.
    pub delta: f64,
    /// Common-class suppression and rare-class enhancement.
    pub gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            delta: 0.6,
            gamma: 0.1,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("delta", self.delta),
            ("gamma", self.gamma),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!(
                    "loss {name} = {v} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Per-pixel rare-class probabilities with one-hot ground truth.
///
/// The common-class probability is `1 − p_rare`; both are clamped
/// independently before use.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbTargetBatch {
    p_rare: Vec<f64>,
    rare: Vec<bool>,
}

impl ProbTargetBatch {
    pub fn new(p_rare: Vec<f64>, rare: Vec<bool>) -> Result<Self> {
        if p_rare.len() != rare.len() {
            return Err(Error::shape(
                "ProbTargetBatch",
                &[p_rare.len()],
                &[rare.len()],
            ));
        }
        if let Some(bad) = p_rare.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidConfig(format!(
                "probability {bad} outside [0, 1]"
            )));
        }
        Ok(Self { p_rare, rare })
    }

    pub fn len(&self) -> usize {
        self.p_rare.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_rare.is_empty()
    }

    /// Same pixels with the class roles exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            p_rare: self.p_rare.iter().map(|p| 1.0 - p).collect(),
            rare: self.rare.iter().map(|g| !g).collect(),
        }
    }

    fn clamped(&self) -> impl Iterator<Item = (f64, f64, bool)> + '_ {
        self.p_rare
            .iter()
            .zip(&self.rare)
            .map(|(&p, &g)| (clamp(p), clamp(1.0 - p), g))
    }
}

fn clamp(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Focal term: rare pixels get `−δ ln p_r`, common pixels
/// `−(1 − δ)(1 − p_c)^γ ln p_c`, averaged over pixels.
pub fn modified_asymmetric_focal(batch: &ProbTargetBatch, delta: f64, gamma: f64) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let total: f64 = batch
        .clamped()
        .map(|(p, q, g)| {
            if g {
                -delta * p.ln()
            } else {
                -(1.0 - delta) * (1.0 - q).powf(gamma) * q.ln()
            }
        })
        .sum();
    total / batch.len() as f64
}

struct TverskySums {
    tp: f64,
    fp: f64,
    fn_: f64,
}

impl TverskySums {
    fn index(&self, delta: f64) -> f64 {
        let denom = self.tp + delta * self.fp + (1.0 - delta) * self.fn_;
        if denom == 0.0 {
            1.0
        } else {
            self.tp / denom
        }
    }
}

fn sums(batch: &ProbTargetBatch, rare: bool) -> TverskySums {
    let mut s = TverskySums {
        tp: 0.0,
        fp: 0.0,
        fn_: 0.0,
    };
    for (p, q, g) in batch.clamped() {
        let (mine, other, is_mine) = if rare { (p, q, g) } else { (q, p, !g) };
        if is_mine {
            s.tp += mine;
            s.fn_ += other;
        } else {
            s.fp += mine;
        }
    }
    s
}

/// Tversky index of the rare class; `1` when every sum vanishes.
pub fn modified_tversky_index(batch: &ProbTargetBatch, delta: f64) -> f64 {
    sums(batch, true).index(delta)
}

/// Tversky index of the common class (roles swapped).
pub fn common_tversky_index(batch: &ProbTargetBatch, delta: f64) -> f64 {
    sums(batch, false).index(delta)
}

/// `(1 − mTI_c) + (1 − mTI_r)^(1 − γ)`.
pub fn modified_asymmetric_focal_tversky(batch: &ProbTargetBatch, delta: f64, gamma: f64) -> f64 {
    let rare = modified_tversky_index(batch, delta);
    let common = common_tversky_index(batch, delta);
    (1.0 - common) + (1.0 - rare).max(0.0).powf(1.0 - gamma)
}

pub fn auf_loss(batch: &ProbTargetBatch, config: &LossConfig) -> f64 {
    config.lambda * modified_asymmetric_focal(batch, config.delta, config.gamma)
        + (1.0 - config.lambda)
            * modified_asymmetric_focal_tversky(batch, config.delta, config.gamma)
}

/// Loss and its gradient with respect to each unclamped `p_rare`, with
/// `p_common = 1 − p_rare`. Where a clamp is active the corresponding path
/// contributes nothing.
pub fn auf_loss_with_grad(batch: &ProbTargetBatch, config: &LossConfig) -> (f64, Vec<f64>) {
    let LossConfig {
        lambda,
        delta,
        gamma,
    } = *config;
    let n = batch.len();
    let loss = auf_loss(batch, config);
    if n == 0 {
        return (loss, Vec::new());
    }

    let r = sums(batch, true);
    let c = sums(batch, false);
    let d_r = r.tp + delta * r.fp + (1.0 - delta) * r.fn_;
    let d_c = c.tp + delta * c.fp + (1.0 - delta) * c.fn_;
    let t_r = r.index(delta);
    // d(maFT)/d(mTI_r); the vacuous or exact-match case has no finite slope
    let slope_r = if 1.0 - t_r > 0.0 {
        -(1.0 - gamma) * (1.0 - t_r).powf(-gamma)
    } else {
        0.0
    };
    let slope_c = -1.0;

    let grads = batch
        .p_rare
        .iter()
        .zip(&batch.rare)
        .map(|(&raw, &g)| {
            let (p, q) = (clamp(raw), clamp(1.0 - raw));
            let (gr, gc) = if g { (1.0, 0.0) } else { (0.0, 1.0) };

            // focal term, per clamped probability
            let df_dp = -delta * gr / p;
            let df_dq = if gc > 0.0 {
                -(1.0 - delta)
                    * (-gamma * (1.0 - q).powf(gamma - 1.0) * q.ln() + (1.0 - q).powf(gamma) / q)
            } else {
                0.0
            };

            // Tversky terms
            let (mut dtr_dp, mut dtr_dq, mut dtc_dp, mut dtc_dq) = (0.0, 0.0, 0.0, 0.0);
            if d_r > 0.0 {
                dtr_dp = (gr * d_r - r.tp * (gr + delta * gc)) / (d_r * d_r);
                dtr_dq = -r.tp * (1.0 - delta) * gr / (d_r * d_r);
            }
            if d_c > 0.0 {
                dtc_dq = (gc * d_c - c.tp * (gc + delta * gr)) / (d_c * d_c);
                dtc_dp = -c.tp * (1.0 - delta) * gc / (d_c * d_c);
            }

            let dl_dp =
                lambda * df_dp / n as f64 + (1.0 - lambda) * (slope_r * dtr_dp + slope_c * dtc_dp);
            let dl_dq =
                lambda * df_dq / n as f64 + (1.0 - lambda) * (slope_r * dtr_dq + slope_c * dtc_dq);

            let p_open = raw > PROB_EPS && raw < 1.0 - PROB_EPS;
            let q_open = (1.0 - raw) > PROB_EPS && (1.0 - raw) < 1.0 - PROB_EPS;
            (if p_open { dl_dp } else { 0.0 }) - (if q_open { dl_dq } else { 0.0 })
        })
        .collect();
    (loss, grads)
}

/// Two-class logits to the rare-class probability.
pub fn rare_probability(logit_common: f64, logit_rare: f64) -> f64 {
    1.0 / (1.0 + (logit_common - logit_rare).exp())
}

/// Loss from per-pixel logit pairs, with gradients with respect to both
/// logits: `(loss, d/d common, d/d rare)`.
pub fn auf_loss_from_logits(
    logits_common: &[f64],
    logits_rare: &[f64],
    rare: &[bool],
    config: &LossConfig,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if logits_common.len() != logits_rare.len() {
        return Err(Error::shape(
            "auf_loss_from_logits",
            &[logits_common.len()],
            &[logits_rare.len()],
        ));
    }
    let probs: Vec<f64> = logits_common
        .iter()
        .zip(logits_rare)
        .map(|(&c, &r)| rare_probability(c, r))
        .collect();
    let batch = ProbTargetBatch::new(probs.clone(), rare.to_vec())?;
    let (loss, dp) = auf_loss_with_grad(&batch, config);
    let d_rare: Vec<f64> = dp
        .iter()
        .zip(&probs)
        .map(|(g, p)| g * p * (1.0 - p))
        .collect();
    let d_common = d_rare.iter().map(|g| -g).collect();
    Ok((loss, d_common, d_rare))
}

/// Differentiable loss node over `(B, 2, H, W)` logits and `(B, H, W)`
/// binary targets, pooled over the whole batch.
pub fn auf_loss_var<'g>(
    logits: Var<'g>,
    targets: ArrayView3<'_, u8>,
    config: &LossConfig,
) -> Result<Var<'g>> {
    let value = logits.value();
    let shape = value.shape().to_vec();
    let (b, h, w) = targets.dim();
    if shape != [b, 2, h, w] {
        return Err(Error::shape("auf_loss logits", &[b, 2, h, w], &shape));
    }
    let plane = h * w;
    let data = value.as_slice().expect("standard layout");
    let mut common = Vec::with_capacity(b * plane);
    let mut rare_logit = Vec::with_capacity(b * plane);
    for bi in 0..b {
        let base = bi * 2 * plane;
        common.extend(
            data[base + COMMON_CLASS * plane..][..plane]
                .iter()
                .map(|&v| v as f64),
        );
        rare_logit.extend(
            data[base + RARE_CLASS * plane..][..plane]
                .iter()
                .map(|&v| v as f64),
        );
    }
    let rare: Vec<bool> = targets.iter().map(|&t| t != 0).collect();
    let (loss, d_common, d_rare) = auf_loss_from_logits(&common, &rare_logit, &rare, config)?;

    let out = Tensor::from_elem(IxDyn(&[1]), loss as f32);
    Ok(logits.graph().custom(out, &[logits], move |g| {
        let scale = g.iter().copied().next().unwrap_or_default();
        let mut dx = vec![0.0f32; b * 2 * plane];
        for bi in 0..b {
            let base = bi * 2 * plane;
            for i in 0..plane {
                dx[base + COMMON_CLASS * plane + i] = scale * d_common[bi * plane + i] as f32;
                dx[base + RARE_CLASS * plane + i] = scale * d_rare[bi * plane + i] as f32;
            }
        }
        vec![Some(
            Tensor::from_shape_vec(IxDyn(&[b, 2, h, w]), dx).expect("loss gradient shape"),
        )]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn batch(p: &[f64], g: &[bool]) -> ProbTargetBatch {
        ProbTargetBatch::new(p.to_vec(), g.to_vec()).unwrap()
    }

    #[test]
    fn defaults_and_validation() {
        let c = LossConfig::default();
        assert_eq!((c.lambda, c.delta, c.gamma), (0.5, 0.6, 0.1));
        assert!(c.validate().is_ok());
        assert!(LossConfig { gamma: 1.5, ..c }.validate().is_err());
        assert!(ProbTargetBatch::new(vec![0.5], vec![]).is_err());
        assert!(ProbTargetBatch::new(vec![1.5], vec![true]).is_err());
    }

    #[test]
    fn focal_single_pixels() {
        assert_abs_diff_eq!(
            modified_asymmetric_focal(&batch(&[0.5], &[true]), 0.6, 0.1),
            -0.6 * 0.5f64.ln(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            modified_asymmetric_focal(&batch(&[0.5], &[false]), 0.6, 0.1),
            0.4 * 0.5f64.powf(0.1) * 2f64.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn tversky_edge_cases() {
        let perfect = batch(&[1.0, 0.0, 1.0], &[true, false, true]);
        assert_abs_diff_eq!(modified_tversky_index(&perfect, 0.6), 1.0, epsilon = 1e-6);
        let all_wrong = batch(&[1.0, 1.0], &[false, false]);
        assert_abs_diff_eq!(
            modified_tversky_index(&all_wrong, 0.6),
            0.0,
            epsilon = 1e-12
        );
        let empty = batch(&[], &[]);
        assert_eq!(modified_tversky_index(&empty, 0.6), 1.0);
    }

    #[test]
    fn gamma_zero_is_symmetric_sum() {
        let b = batch(&[0.8, 0.3, 0.6], &[true, false, false]);
        let expect =
            (1.0 - common_tversky_index(&b, 0.6)) + (1.0 - modified_tversky_index(&b, 0.6));
        assert_abs_diff_eq!(
            modified_asymmetric_focal_tversky(&b, 0.6, 0.0),
            expect,
            epsilon = 1e-12
        );
    }

    #[test]
    fn lambda_boundaries() {
        let b = batch(&[0.8, 0.3, 0.6, 0.1], &[true, false, false, true]);
        let c = LossConfig::default();
        assert_eq!(
            auf_loss(&b, &LossConfig { lambda: 1.0, ..c }),
            modified_asymmetric_focal(&b, c.delta, c.gamma)
        );
        assert_eq!(
            auf_loss(&b, &LossConfig { lambda: 0.0, ..c }),
            modified_asymmetric_focal_tversky(&b, c.delta, c.gamma)
        );
    }

    #[test]
    fn logit_gradient_is_antisymmetric() {
        let (_, dc, dr) = auf_loss_from_logits(
            &[0.3, -1.0],
            &[-0.2, 0.7],
            &[true, false],
            &LossConfig::default(),
        )
        .unwrap();
        for (a, b) in dc.iter().zip(&dr) {
            assert_eq!(*a, -*b);
        }
    }

    #[test]
    fn graph_node_shape_check() {
        let g = magnifier_nn::Graph::new();
        let logits = g.input(Tensor::zeros(IxDyn(&[1, 2, 2, 2])));
        let wrong = ndarray::Array3::<u8>::zeros((1, 2, 3));
        assert!(matches!(
            auf_loss_var(logits, wrong.view(), &LossConfig::default()),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
