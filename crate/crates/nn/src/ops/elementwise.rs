use ndarray::{ArrayD, Zip};

use crate::graph::Var;
use crate::Tensor;

const GELU_C: f32 = 0.797_884_6; // sqrt(2 / pi)

#[allow(clippy::should_implement_trait)]
impl<'g> Var<'g> {
    pub fn add(self, other: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape(), b.shape(), "add: shape mismatch");
        let out = &*a + &*b;
        self.graph.custom(out, &[self, other], |g| {
            vec![Some(g.clone()), Some(g.clone())]
        })
    }

    pub fn mul(self, other: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape(), b.shape(), "mul: shape mismatch");
        let out = &*a * &*b;
        self.graph.custom(out, &[self, other], move |g| {
            vec![Some(g * &*b), Some(g * &*a)]
        })
    }

    pub fn scale(self, factor: f32) -> Var<'g> {
        let out = self.value().mapv(|v| v * factor);
        self.graph
            .custom(out, &[self], move |g| vec![Some(g.mapv(|v| v * factor))])
    }

    pub fn relu(self) -> Var<'g> {
        let x = self.value();
        let out = x.mapv(|v| v.max(0.0));
        self.graph.custom(out, &[self], move |g| {
            let mut dx = g.clone();
            Zip::from(&mut dx).and(&*x).for_each(|d, &v| {
                if v <= 0.0 {
                    *d = 0.0
                }
            });
            vec![Some(dx)]
        })
    }

    /// GELU, tanh approximation.
    pub fn gelu(self) -> Var<'g> {
        let x = self.value();
        let out = x.mapv(|v| 0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh()));
        self.graph.custom(out, &[self], move |g| {
            let mut dx = g.clone();
            Zip::from(&mut dx).and(&*x).for_each(|d, &v| {
                let u = GELU_C * (v + 0.044715 * v * v * v);
                let t = u.tanh();
                let du = GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
                *d *= 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
            });
            vec![Some(dx)]
        })
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(self) -> Var<'g> {
        let x = self.value();
        let shape = x.raw_dim();
        let out = ArrayD::from_elem(ndarray::IxDyn(&[1]), x.sum());
        self.graph.custom(out, &[self], move |g| {
            let s = g.iter().copied().next().unwrap_or_default();
            vec![Some(Tensor::from_elem(shape.clone(), s))]
        })
    }

    pub fn mean(self) -> Var<'g> {
        let n = self.value().len().max(1) as f32;
        self.sum().scale(1.0 / n)
    }
}
