use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, ParamBlock, ParamKey, ParamRole, ParamVector, Real, Tape, TapeError};

/// Fully connected network with softplus hidden activations and a linear
/// output layer. Weights are stored `out x in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    name: String,
    dims: Vec<usize>,
    layers: Vec<(ParamBlock, ParamBlock)>,
    beta: f64,
}

/// Initial value of one parameter: `(layer, row, col, is_bias) -> value`.
pub trait LayerInit: FnMut(usize, usize, usize, bool) -> f64 {}
impl<T: FnMut(usize, usize, usize, bool) -> f64> LayerInit for T {}

impl Mlp {
    /// Register an MLP with layer sizes `dims = [in, hidden.., out]`.
    pub fn register(params: &mut ParamVector, name: &str, dims: &[usize], beta: f64, mut init: impl LayerInit) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least an input and output size");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let wb = params.register(ParamKey::new(name, l, ParamRole::Weight), fan_out, fan_in, |r, c| {
                    init(l, r, c, false)
                });
                let bb = params.register(ParamKey::new(name, l, ParamRole::Bias), 1, fan_out, |_, c| {
                    init(l, 0, c, true)
                });
                (wb, bb)
            })
            .collect();
        Self {
            name: name.to_string(),
            dims: dims.to_vec(),
            layers,
            beta,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_width(&self) -> usize {
        self.dims[0]
    }

    pub fn layers(&self) -> &[(ParamBlock, ParamBlock)] {
        &self.layers
    }

    /// Bind the parameters to leaves of `tape`. One binding serves any number
    /// of forward passes on that tape.
    pub fn bind<F: Real>(&self, tape: &mut Tape<F>, params: &ParamVector) -> BoundMlp {
        BoundMlp {
            layers: self
                .layers
                .iter()
                .map(|(w, b)| (tape.param(params, w), tape.param(params, b)))
                .collect(),
            beta: self.beta,
        }
    }
}

/// An [`Mlp`] whose parameters live on a particular tape.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    layers: Vec<(NodeId, NodeId)>,
    beta: f64,
}

impl BoundMlp {
    /// `x` is `n x in`; the result is `n x out`.
    pub fn forward<F: Real>(&self, tape: &mut Tape<F>, x: NodeId) -> Result<NodeId, TapeError> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = tape.affine(h, w, b)?;
            if i != last {
                h = tape.softplus(h, self.beta)?;
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_matches_manual() {
        let mut p = ParamVector::new();
        let mlp = Mlp::register(&mut p, "m", &[2, 2, 1], 1.0, |l, r, c, bias| {
            if bias {
                0.1 * (l + c) as f64
            } else {
                0.3 * (r as f64 + 1.0) - 0.2 * c as f64 + l as f64
            }
        });
        let mut t = Tape::<f64>::new();
        let bound = mlp.bind(&mut t, &p);
        let x = t.constant_input(1, 2, vec![0.5, -1.0]);
        let y = bound.forward(&mut t, x).unwrap();
        let sp = |z: f64| (1.0 + z.exp()).ln();
        let h0 = sp(0.3 * 0.5 + 0.1 * -1.0 + 0.0);
        let h1 = sp(0.6 * 0.5 + 0.4 * -1.0 + 0.1);
        let expected = 1.3 * h0 + 1.1 * h1 + 0.1;
        assert!((t.scalar_value(y) - expected).abs() < 1e-12);
    }
}
