//! Every differentiable op against central finite differences.

use magnifier_nn::ops::ConvGeometry;
use magnifier_nn::{Graph, Init, Tensor, Var};
use ndarray::IxDyn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STEP: f32 = 1e-2;
const TOL: f32 = 2e-2;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Init::Uniform { bound: 1.0 }.sample(shape, &mut rng)
}

/// Checks `d(sum(f(inputs) * probe))/d inputs` for every input element.
fn check<F>(inputs: &[Tensor], f: F)
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Var<'g>,
{
    let probe_for = |out_shape: &[usize]| random(out_shape, 999);
    let eval = |vals: &[Tensor]| -> f32 {
        let g = Graph::inference();
        let vars: Vec<_> = vals.iter().map(|v| g.input(v.clone())).collect();
        let out = f(&g, &vars);
        let probe = probe_for(&out.shape());
        (&*out.value() * &probe)
            .iter()
            .map(|&v| v as f64)
            .sum::<f64>() as f32
    };

    let g = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|v| g.input(v.clone())).collect();
    let out = f(&g, &vars);
    let probe = g.constant(probe_for(&out.shape()));
    let loss = out.mul(probe).sum();
    let grads = g.backward(loss);

    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[i]).expect("input gradient").clone();
        assert_eq!(analytic.shape(), input.shape());
        for j in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].as_slice_mut().unwrap()[j] += STEP;
            let mut minus = inputs.to_vec();
            minus[i].as_slice_mut().unwrap()[j] -= STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
            let a = analytic.as_slice().unwrap()[j];
            let scale = a.abs().max(numeric.abs()).max(1.0);
            assert!(
                (a - numeric).abs() / scale < TOL,
                "input {i} element {j}: analytic {a} vs numeric {numeric}"
            );
        }
    }
}

#[test]
fn conv2d_3x3_padded() {
    check(
        &[
            random(&[2, 3, 5, 4], 1),
            random(&[4, 3, 3, 3], 2),
            random(&[4], 3),
        ],
        |_, v| v[0].conv2d(v[1], Some(v[2]), ConvGeometry::same(3)),
    );
}

#[test]
fn conv2d_strided() {
    check(
        &[random(&[1, 2, 6, 6], 4), random(&[3, 2, 3, 3], 5)],
        |_, v| v[0].conv2d(v[1], None, ConvGeometry::new(3, 2, 1)),
    );
}

#[test]
fn conv2d_pointwise() {
    check(
        &[
            random(&[2, 3, 3, 2], 6),
            random(&[2, 3, 1, 1], 7),
            random(&[2], 8),
        ],
        |_, v| v[0].conv2d(v[1], Some(v[2]), ConvGeometry::new(1, 1, 0)),
    );
}

#[test]
fn conv2d_patchify_kernel_equals_stride() {
    check(
        &[random(&[1, 2, 4, 4], 9), random(&[3, 2, 2, 2], 10)],
        |_, v| v[0].conv2d(v[1], None, ConvGeometry::new(2, 2, 0)),
    );
}

#[test]
fn depthwise_same_and_strided() {
    check(
        &[
            random(&[2, 3, 5, 5], 11),
            random(&[3, 1, 3, 3], 12),
            random(&[3], 13),
        ],
        |_, v| v[0].depthwise_conv2d(v[1], Some(v[2]), ConvGeometry::same(3)),
    );
    check(
        &[random(&[1, 2, 6, 5], 14), random(&[2, 1, 3, 3], 15)],
        |_, v| v[0].depthwise_conv2d(v[1], None, ConvGeometry::new(3, 2, 1)),
    );
}

#[test]
fn elementwise_family() {
    check(&[random(&[2, 3], 16), random(&[2, 3], 17)], |_, v| {
        v[0].add(v[1]).mul(v[1]).scale(0.5).gelu()
    });
}

#[test]
fn relu_away_from_kink() {
    let x = Tensor::from_shape_vec(IxDyn(&[4]), vec![-0.7, 0.4, 1.3, -0.2]).unwrap();
    check(&[x], |_, v| v[0].relu());
}

#[test]
fn mean_reduces_to_scalar() {
    check(&[random(&[3, 4], 18)], |_, v| v[0].mean());
}

#[test]
fn concat_and_narrow() {
    check(
        &[random(&[2, 1, 2, 2], 19), random(&[2, 3, 2, 2], 20)],
        |_, v| Var::concat_channels(&[v[0], v[1]]).narrow_channels(1, 3),
    );
}

#[test]
fn crop_then_recompose_paths() {
    check(&[random(&[2, 2, 4, 6], 21)], |_, v| {
        v[0].crop_patches(2, 3).scale(2.0)
    });
    check(&[random(&[6, 2, 2, 2], 22)], |_, v| {
        v[0].recompose_patches(3, 2)
    });
}

#[test]
fn bilinear_upsampling() {
    check(&[random(&[1, 2, 3, 2], 23)], |_, v| {
        v[0].upsample_bilinear(2)
    });
    check(&[random(&[1, 1, 2, 2], 24)], |_, v| {
        v[0].upsample_bilinear(4)
    });
}

#[test]
fn token_round_trip_and_linear() {
    check(
        &[
            random(&[2, 3, 2, 2], 25),
            random(&[5, 3], 26),
            random(&[5], 27),
        ],
        |_, v| v[0].to_tokens().linear(v[1], Some(v[2])),
    );
    check(&[random(&[1, 6, 3], 28)], |_, v| v[0].from_tokens(2, 3));
}

#[test]
fn layer_norm_affine() {
    check(
        &[random(&[3, 4], 29), random(&[4], 30), random(&[4], 31)],
        |_, v| v[0].layer_norm(v[1], v[2], 1e-5),
    );
}

#[test]
fn attention_building_blocks() {
    check(&[random(&[2, 3, 4], 32), random(&[2, 5, 4], 33)], |_, v| {
        v[0].bmm(v[1], true).softmax_last()
    });
    check(&[random(&[2, 3, 4], 34), random(&[2, 4, 2], 35)], |_, v| {
        v[0].bmm(v[1], false)
    });
    check(&[random(&[2, 3, 6], 36)], |_, v| {
        v[0].split_heads(2).scale(3.0).merge_heads(2)
    });
}

#[test]
fn shared_input_accumulates() {
    let g = Graph::new();
    let x = g.input(Tensor::from_elem(IxDyn(&[2]), 3.0));
    let y = x.mul(x).add(x).sum();
    let grads = g.backward(y);
    assert!(grads
        .wrt(x)
        .unwrap()
        .iter()
        .all(|&d| (d - 7.0).abs() < 1e-6));
}

#[test]
fn inference_graph_records_no_gradients() {
    let g = Graph::inference();
    let x = g.input(random(&[1, 1, 2, 2], 37));
    let y = x.relu().sum();
    assert!(!y.requires_grad());
    assert!(g.backward(y).wrt(x).is_none());
}

#[test]
fn constants_receive_no_gradient() {
    let g = Graph::new();
    let c = g.constant(random(&[1, 2, 3, 3], 38));
    let w = g.input(random(&[1, 2, 3, 3], 39));
    let y = c.conv2d(w, None, ConvGeometry::same(3)).sum();
    let grads = g.backward(y);
    assert!(grads.wrt(c).is_none());
    assert!(grads.wrt(w).is_some());
}

#[test]
fn conv2d_dilated() {
    check(
        &[random(&[1, 2, 7, 6], 40), random(&[2, 2, 3, 3], 41)],
        |_, v| v[0].conv2d(v[1], None, ConvGeometry::dilated(3, 2)),
    );
    let g = Graph::inference();
    let x = g.input(random(&[1, 1, 9, 9], 42));
    let w = g.input(random(&[1, 1, 3, 3], 43));
    assert_eq!(
        x.conv2d(w, None, ConvGeometry::dilated(3, 3)).shape(),
        vec![1, 1, 9, 9]
    );
}
