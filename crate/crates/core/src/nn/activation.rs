//! Elementwise activations.

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

pub fn activation_forward(act: Activation, input: &Tensor) -> Tensor {
    match act {
        Activation::Relu => {
            let mut out = input.clone();
            for v in out.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            out
        }
        Activation::Identity => input.clone(),
    }
}

/// Backward uses the forward input; the ReLU subgradient at 0 is taken as 0.
pub fn activation_backward(act: Activation, grad_out: &Tensor, input: &Tensor) -> Tensor {
    match act {
        Activation::Relu => {
            let mut gx = grad_out.clone();
            for (g, &x) in gx.data_mut().iter_mut().zip(input.data()) {
                if x <= 0.0 {
                    *g = 0.0;
                }
            }
            gx
        }
        Activation::Identity => grad_out.clone(),
    }
}
