use magnifier_nn::layers::Conv2d;
use magnifier_nn::ops::ConvGeometry;
use magnifier_nn::{total_flops, Graph, LayerOp, ParamStore, Tensor};
use ndarray::IxDyn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn single_conv_closed_form() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let conv = Conv2d::new(
        &mut store,
        "c",
        1,
        1,
        ConvGeometry::new(3, 1, 1),
        false,
        &mut rng,
    );
    let g = Graph::inference();
    let x = g.input(Tensor::zeros(IxDyn(&[1, 1, 8, 8])));
    let y = conv.forward(&g, &store, x);
    assert_eq!(y.shape(), vec![1, 1, 8, 8]);
    assert_eq!(total_flops(&g.layer_trace()).unwrap(), 2 * 9 * 64);
}

#[test]
fn depthwise_counts_per_group() {
    let op = LayerOp::Conv2d {
        batch: 1,
        in_channels: 4,
        out_channels: 4,
        kernel: 3,
        groups: 4,
        out_h: 2,
        out_w: 2,
    };
    assert_eq!(op.flops().unwrap(), 2 * 4 * 4 * 9);
}

#[test]
fn opaque_ops_are_rejected() {
    assert!(total_flops(&[LayerOp::Opaque("mystery".into())]).is_err());
}
