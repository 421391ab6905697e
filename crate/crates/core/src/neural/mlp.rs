use serde::{Deserialize, Serialize};

/// Dense layers stored in a slice of a flat parameter vector. Each layer
/// is `W` (out × in, row-major) followed by `b` (out).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub dims: Vec<usize>,
    /// Apply tanh to the last layer as well as the hidden ones.
    pub squash_output: bool,
    pub offset: usize,
}

/// Activations of one forward pass: `acts[0]` is the input, `acts[k + 1]`
/// the output of layer `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpTrace {
    pub acts: Vec<Vec<f64>>,
}

impl MlpTrace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace holds the input")
    }
}

impl Mlp {
    pub fn new(dims: Vec<usize>, squash_output: bool, offset: usize) -> Self {
        Mlp { dims, squash_output, offset }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    /// Offsets of `W` and `b` of layer `k`.
    pub fn layer_offsets(&self, k: usize) -> (usize, usize) {
        let before: usize = self.dims.windows(2).take(k).map(|w| w[1] * w[0] + w[1]).sum();
        let w = self.offset + before;
        (w, w + self.dims[k + 1] * self.dims[k])
    }

    fn squashed(&self, k: usize) -> bool {
        k + 1 < self.layers() || self.squash_output
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> MlpTrace {
        debug_assert_eq!(x.len(), self.input_dim());
        let mut acts = Vec::with_capacity(self.dims.len());
        acts.push(x.to_vec());
        for k in 0..self.layers() {
            let (wo, bo) = self.layer_offsets(k);
            let (n_in, n_out) = (self.dims[k], self.dims[k + 1]);
            let input = &acts[k];
            let mut out = Vec::with_capacity(n_out);
            for o in 0..n_out {
                let row = &params[wo + o * n_in..wo + (o + 1) * n_in];
                let z = params[bo + o] + row.iter().zip(input).map(|(w, a)| w * a).sum::<f64>();
                out.push(if self.squashed(k) { z.tanh() } else { z });
            }
            acts.push(out);
        }
        MlpTrace { acts }
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the input.
    pub fn backward(&self, params: &[f64], trace: &MlpTrace, dout: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let mut delta = dout.to_vec();
        for k in (0..self.layers()).rev() {
            let (wo, bo) = self.layer_offsets(k);
            let (n_in, n_out) = (self.dims[k], self.dims[k + 1]);
            if self.squashed(k) {
                for (d, a) in delta.iter_mut().zip(&trace.acts[k + 1]) {
                    *d *= 1.0 - a * a;
                }
            }
            let input = &trace.acts[k];
            let mut dinput = vec![0.0; n_in];
            for o in 0..n_out {
                let dz = delta[o];
                if dz == 0.0 {
                    continue;
                }
                grad[bo + o] += dz;
                let base = wo + o * n_in;
                for i in 0..n_in {
                    grad[base + i] += dz * input[i];
                    dinput[i] += dz * params[base + i];
                }
            }
            delta = dinput;
        }
        delta
    }
}
