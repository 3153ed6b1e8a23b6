//! Parameterized layers. Each layer registers its tensors in a
//! [`ParamStore`] at construction and binds them into a [`Graph`] on every
//! forward call.

use rand::Rng;

use crate::ops::ConvGeometry;
use crate::{Graph, Init, ParamId, ParamStore, Var};

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: ParamId,
    bias: Option<ParamId>,
    geo: ConvGeometry,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv2d {
    /// He-normal weights (fan-in), zero bias.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        geo: ConvGeometry,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let k = geo.kernel;
        let fan = in_channels * k * k;
        let weight = store.add(
            format!("{name}.weight"),
            Init::KaimingNormal { fan }.sample(&[out_channels, in_channels, k, k], rng),
        );
        let bias = bias.then(|| {
            store.add(
                format!("{name}.bias"),
                Init::Zeros.sample(&[out_channels], rng),
            )
        });
        Self {
            weight,
            bias,
            geo,
            in_channels,
            out_channels,
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph, ps: &ParamStore, x: Var<'g>) -> Var<'g> {
        let w = g.param(ps, self.weight);
        let b = self.bias.map(|b| g.param(ps, b));
        x.conv2d(w, b, self.geo)
    }

    pub fn geometry(&self) -> ConvGeometry {
        self.geo
    }
}

#[derive(Debug, Clone)]
pub struct DepthwiseConv2d {
    weight: ParamId,
    bias: Option<ParamId>,
    geo: ConvGeometry,
    pub channels: usize,
}

impl DepthwiseConv2d {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        geo: ConvGeometry,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let k = geo.kernel;
        let weight = store.add(
            format!("{name}.weight"),
            Init::KaimingNormal { fan: k * k }.sample(&[channels, 1, k, k], rng),
        );
        let bias =
            bias.then(|| store.add(format!("{name}.bias"), Init::Zeros.sample(&[channels], rng)));
        Self {
            weight,
            bias,
            geo,
            channels,
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph, ps: &ParamStore, x: Var<'g>) -> Var<'g> {
        let w = g.param(ps, self.weight);
        let b = self.bias.map(|b| g.param(ps, b));
        x.depthwise_conv2d(w, b, self.geo)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: ParamId,
    bias: Option<ParamId>,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    /// Truncated-normal weights (std 0.02), zero bias.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_features: usize,
        out_features: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            Init::TruncatedNormal { std: 0.02 }.sample(&[out_features, in_features], rng),
        );
        let bias = bias.then(|| {
            store.add(
                format!("{name}.bias"),
                Init::Zeros.sample(&[out_features], rng),
            )
        });
        Self {
            weight,
            bias,
            in_features,
            out_features,
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph, ps: &ParamStore, x: Var<'g>) -> Var<'g> {
        let w = g.param(ps, self.weight);
        let b = self.bias.map(|b| g.param(ps, b));
        x.linear(w, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: ParamId,
    beta: ParamId,
    eps: f32,
}

impl LayerNorm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            gamma: store.add(format!("{name}.weight"), Init::Ones.sample(&[dim], rng)),
            beta: store.add(format!("{name}.bias"), Init::Zeros.sample(&[dim], rng)),
            eps: 1e-6,
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph, ps: &ParamStore, x: Var<'g>) -> Var<'g> {
        x.layer_norm(g.param(ps, self.gamma), g.param(ps, self.beta), self.eps)
    }

    /// Normalizes an NCHW map over its channel axis.
    pub fn forward_nchw<'g>(&self, g: &'g Graph, ps: &ParamStore, x: Var<'g>) -> Var<'g> {
        let shape = x.shape();
        self.forward(g, ps, x.to_tokens())
            .from_tokens(shape[2], shape[3])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parameter_shapes_and_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamStore::new();
        Conv2d::new(&mut ps, "c", 3, 5, ConvGeometry::same(3), true, &mut rng);
        DepthwiseConv2d::new(&mut ps, "d", 5, ConvGeometry::same(3), false, &mut rng);
        Linear::new(&mut ps, "l", 5, 7, true, &mut rng);
        LayerNorm::new(&mut ps, "n", 7, &mut rng);
        assert_eq!(ps.numel_with_prefix("c."), 3 * 5 * 9 + 5);
        assert_eq!(ps.numel_with_prefix("d."), 5 * 9);
        assert_eq!(ps.numel_with_prefix("l."), 5 * 7 + 7);
        assert_eq!(ps.numel_with_prefix("n."), 14);
        assert_eq!(ps.numel(), 140 + 45 + 42 + 14);
    }
}
