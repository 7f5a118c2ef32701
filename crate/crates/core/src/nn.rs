//! Dense layers with hand-written backward passes, `f64` throughout so
//! gradients can be checked against finite differences.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// `y = W x + b` with `W` stored row-major as `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Linear {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// He-normal weights, zero bias.
    pub fn he(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let std = (2.0 / inputs as f64).sqrt();
        let weight = (0..inputs * outputs)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Linear {
            inputs,
            outputs,
            weight,
            bias: vec![0.0; outputs],
        }
    }

    pub fn forward_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.inputs);
        for (o, out) in y.iter_mut().enumerate() {
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            *out = self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.outputs];
        self.forward_into(x, &mut y);
        y
    }

    /// Accumulates parameter gradients into `grad` and, if requested, the
    /// input gradient into `dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear, dx: Option<&mut [f64]>) {
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let row = &mut grad.weight[o * self.inputs..(o + 1) * self.inputs];
            for (w, v) in row.iter_mut().zip(x) {
                *w += g * v;
            }
        }
        if let Some(dx) = dx {
            for (o, &g) in dy.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
                for (d, w) in dx.iter_mut().zip(row) {
                    *d += g * w;
                }
            }
        }
    }

    pub fn zeros_like(&self) -> Self {
        Linear::zeros(self.inputs, self.outputs)
    }
}

/// Two linear layers with a ReLU in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
}

/// Activations of a batched [`Mlp`] forward pass, kept for backward.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub rows: usize,
    /// Post-ReLU hidden activations, `rows x hidden`.
    pub hidden: Vec<f64>,
    /// `rows x outputs`
    pub output: Vec<f64>,
}

impl Mlp {
    pub fn new(hidden: Linear, output: Linear) -> Self {
        assert_eq!(hidden.outputs, output.inputs, "mlp layer widths disagree");
        Mlp { hidden, output }
    }

    pub fn inputs(&self) -> usize {
        self.hidden.inputs
    }

    pub fn outputs(&self) -> usize {
        self.output.outputs
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut h = self.hidden.forward(x);
        h.iter_mut().for_each(|v| *v = v.max(0.0));
        self.output.forward(&h)
    }

    /// Forward over `x.len() / inputs` rows.
    pub fn forward_batch(&self, x: &[f64]) -> MlpCache {
        let (ni, nh, no) = (self.inputs(), self.hidden.outputs, self.outputs());
        let rows = x.len() / ni;
        let mut hidden = vec![0.0; rows * nh];
        let mut output = vec![0.0; rows * no];
        for r in 0..rows {
            let h = &mut hidden[r * nh..(r + 1) * nh];
            self.hidden.forward_into(&x[r * ni..(r + 1) * ni], h);
            h.iter_mut().for_each(|v| *v = v.max(0.0));
            self.output
                .forward_into(h, &mut output[r * no..(r + 1) * no]);
        }
        MlpCache {
            rows,
            hidden,
            output,
        }
    }

    /// Backward over a batch. `dy` is `rows x outputs`; `dx`, if given, is
    /// `rows x inputs` and is accumulated into.
    pub fn backward_batch(
        &self,
        x: &[f64],
        cache: &MlpCache,
        dy: &[f64],
        grad: &mut Mlp,
        mut dx: Option<&mut [f64]>,
    ) {
        let (ni, nh, no) = (self.inputs(), self.hidden.outputs, self.outputs());
        let mut dh = vec![0.0; nh];
        for r in 0..cache.rows {
            let g = &dy[r * no..(r + 1) * no];
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            let h = &cache.hidden[r * nh..(r + 1) * nh];
            dh.iter_mut().for_each(|v| *v = 0.0);
            self.output.backward(h, g, &mut grad.output, Some(&mut dh));
            for (d, &a) in dh.iter_mut().zip(h) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            let xr = &x[r * ni..(r + 1) * ni];
            let dxr = dx.as_deref_mut().map(|d| &mut d[r * ni..(r + 1) * ni]);
            self.hidden.backward(xr, &dh, &mut grad.hidden, dxr);
        }
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            hidden: self.hidden.zeros_like(),
            output: self.output.zeros_like(),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
