use magnifier::loss::{
    auf_loss, auf_loss_from_logits, auf_loss_var, auf_loss_with_grad, common_tversky_index,
    modified_asymmetric_focal, modified_asymmetric_focal_tversky, modified_tversky_index,
    LossConfig, ProbTargetBatch,
};
use magnifier_nn::{Graph, Tensor};
use ndarray::{Array3, IxDyn};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Reference values evaluated with a separate scalar implementation.
const RARE_HALF_FOCAL: f64 = 0.4158883083359672;
const COMMON_HALF_FOCAL: f64 = 0.2586916749812597;
const RARE_HALF_TOTAL: f64 = 0.8698672372637976;
const COMMON_HALF_TOTAL: f64 = 0.7722029803477727;
const PAIR_FOCAL: f64 = 0.13018639447440555;
const PAIR_TI_RARE: f64 = 0.7547169811320755;
const PAIR_TI_COMMON: f64 = 0.7446808510638298;
const PAIR_FOCAL_TVERSKY: f64 = 0.5376125554001536;
const PAIR_TOTAL: f64 = 0.33389947493727956;

fn batch(p: &[f64], g: &[bool]) -> ProbTargetBatch {
    ProbTargetBatch::new(p.to_vec(), g.to_vec()).unwrap()
}

#[test]
fn defaults() {
    let c = LossConfig::default();
    assert_eq!((c.lambda, c.delta, c.gamma), (0.5, 0.6, 0.1));
}

#[test]
fn single_pixel_oracles() {
    let cfg = LossConfig::default();
    let rare = batch(&[0.5], &[true]);
    assert!((modified_asymmetric_focal(&rare, 0.6, 0.1) - RARE_HALF_FOCAL).abs() < 1e-6);
    assert!((auf_loss(&rare, &cfg) - RARE_HALF_TOTAL).abs() < 1e-6);
    let common = batch(&[0.5], &[false]);
    assert!((modified_asymmetric_focal(&common, 0.6, 0.1) - COMMON_HALF_FOCAL).abs() < 1e-6);
    assert!((auf_loss(&common, &cfg) - COMMON_HALF_TOTAL).abs() < 1e-6);
}

#[test]
fn two_pixel_oracle() {
    let b = batch(&[0.8, 0.3], &[true, false]);
    assert!((modified_tversky_index(&b, 0.6) - PAIR_TI_RARE).abs() < 1e-6);
    assert!((common_tversky_index(&b, 0.6) - PAIR_TI_COMMON).abs() < 1e-6);
    assert!((modified_asymmetric_focal(&b, 0.6, 0.1) - PAIR_FOCAL).abs() < 1e-6);
    assert!((modified_asymmetric_focal_tversky(&b, 0.6, 0.1) - PAIR_FOCAL_TVERSKY).abs() < 1e-6);
    assert!((auf_loss(&b, &LossConfig::default()) - PAIR_TOTAL).abs() < 1e-6);
}

#[test]
fn tversky_composition() {
    // mTI_r = mTI_c = 0.75
    let b = batch(&[0.75, 0.25], &[true, false]);
    let expected = 0.25 + 0.25f64.powf(0.9);
    assert!((modified_tversky_index(&b, 0.6) - 0.75).abs() < 1e-12);
    assert!((modified_asymmetric_focal_tversky(&b, 0.6, 0.1) - expected).abs() < 1e-9);
}

#[test]
fn perfect_predictions_cost_nothing() {
    let g = [true, false, false, true, false];
    let p: Vec<f64> = g.iter().map(|&r| if r { 1.0 } else { 0.0 }).collect();
    assert!(auf_loss(&batch(&p, &g), &LossConfig::default()) <= 1e-6);
}

#[test]
fn invalid_hyperparameters() {
    for c in [
        LossConfig {
            lambda: 1.5,
            ..Default::default()
        },
        LossConfig {
            delta: -0.1,
            ..Default::default()
        },
        LossConfig {
            gamma: 1.2,
            ..Default::default()
        },
    ] {
        assert!(c.validate().is_err());
    }
    assert!(ProbTargetBatch::new(vec![0.2], vec![true, false]).is_err());
}

#[test]
fn gradients_match_finite_differences() {
    let cfg = LossConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..20 {
        let p: Vec<f64> = (0..16).map(|_| rng.random_range(0.02..0.98)).collect();
        let mut g: Vec<bool> = (0..16).map(|_| rng.random_bool(0.2)).collect();
        g[rng.random_range(0..16)] = true;
        let (_, grad) = auf_loss_with_grad(&batch(&p, &g), &cfg);
        for i in 0..16 {
            let h = 1e-6;
            let (mut up, mut dn) = (p.clone(), p.clone());
            up[i] += h;
            dn[i] -= h;
            let fd =
                (auf_loss(&batch(&up, &g), &cfg) - auf_loss(&batch(&dn, &g), &cfg)) / (2.0 * h);
            let rel = (grad[i] - fd).abs() / fd.abs().max(1e-8);
            assert!(
                rel < 1e-3,
                "pixel {i}: analytic {} vs numeric {fd}",
                grad[i]
            );
        }
    }
}

#[test]
fn graph_node_matches_scalar_path() {
    let cfg = LossConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (b, h, w) = (2, 3, 4);
    let logits: Vec<f32> = (0..b * 2 * h * w)
        .map(|_| rng.random_range(-2.0..2.0))
        .collect();
    let targets = Array3::from_shape_fn((b, h, w), |_| u8::from(rng.random_bool(0.3)));

    let g = Graph::new();
    let x = g.input(Tensor::from_shape_vec(IxDyn(&[b, 2, h, w]), logits.clone()).unwrap());
    let loss = auf_loss_var(x, targets.view(), &cfg).unwrap();
    let grads = g.backward(loss);
    let dx = grads.wrt(x).unwrap();

    let plane = h * w;
    let (mut common, mut rare) = (Vec::new(), Vec::new());
    for bi in 0..b {
        common.extend(logits[bi * 2 * plane..][..plane].iter().map(|&v| v as f64));
        rare.extend(
            logits[bi * 2 * plane + plane..][..plane]
                .iter()
                .map(|&v| v as f64),
        );
    }
    let labels: Vec<bool> = targets.iter().map(|&t| t == 1).collect();
    let (value, d_common, d_rare) = auf_loss_from_logits(&common, &rare, &labels, &cfg).unwrap();
    assert!((loss.item() as f64 - value).abs() < 1e-5);
    let flat = dx.as_slice().unwrap();
    for bi in 0..b {
        for i in 0..plane {
            assert!((flat[bi * 2 * plane + i] as f64 - d_common[bi * plane + i]).abs() < 1e-6);
            assert!(
                (flat[bi * 2 * plane + plane + i] as f64 - d_rare[bi * plane + i]).abs() < 1e-6
            );
        }
    }
}

#[test]
fn rejects_misshaped_logits() {
    let g = Graph::new();
    let x = g.input(Tensor::zeros(IxDyn(&[1, 3, 2, 2])));
    assert!(auf_loss_var(
        x,
        Array3::<u8>::zeros((1, 2, 2)).view(),
        &LossConfig::default()
    )
    .is_err());
}

proptest! {
    #[test]
    fn loss_is_finite_and_nonnegative(
        pixels in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..64),
        lambda in 0.0f64..=1.0, delta in 0.0f64..=1.0, gamma in 0.0f64..0.99,
    ) {
        let (p, g): (Vec<_>, Vec<_>) = pixels.into_iter().unzip();
        let cfg = LossConfig { lambda, delta, gamma };
        let v = auf_loss(&batch(&p, &g), &cfg);
        prop_assert!(v.is_finite() && v >= -1e-12);
        let ti = modified_tversky_index(&batch(&p, &g), delta);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ti));
    }
}
