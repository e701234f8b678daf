//! Small fully-connected stacks with PReLU hidden activations, plus the
//! hand-written backward pass used by the training loop.

use crate::error::Result;
use crate::numerics::{dot, prelu, Matrix};
use crate::real::Real;

/// One affine layer, `y = W x + b`.
#[derive(Debug, Clone)]
pub struct Linear<T: Real> {
    pub w: Matrix<T>,
    pub b: Vec<T>,
}

impl<T: Real> Linear<T> {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Linear { w: Matrix::zeros(out_dim, in_dim), b: vec![T::zero(); out_dim] }
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        (0..self.w.rows())
            .map(|i| T::from_f64(dot(self.w.row(i), x) + self.b[i].to_f64()))
            .collect()
    }
}

/// MLP with PReLU on every hidden layer and a linear output layer.
/// `slopes[l]` holds the learnable PReLU slopes after layer `l`.
#[derive(Debug, Clone)]
pub struct Mlp<T: Real> {
    pub layers: Vec<Linear<T>>,
    pub slopes: Vec<Vec<T>>,
}

/// Intermediate values kept for the backward pass: the input to each layer
/// and each hidden pre-activation.
#[derive(Debug, Clone)]
pub struct MlpCache<T: Real> {
    pub inputs: Vec<Vec<T>>,
    pub preacts: Vec<Vec<T>>,
}

/// Parameter-shaped gradient accumulator for one [`Mlp`].
#[derive(Debug, Clone)]
pub struct MlpGrads<T: Real> {
    pub layers: Vec<Linear<T>>,
    pub slopes: Vec<Vec<T>>,
}

impl<T: Real> Mlp<T> {
    /// Zero-initialized MLP with the given widths, e.g. `[in, h1, out]`.
    pub fn zeros(widths: &[usize]) -> Self {
        assert!(widths.len() >= 2);
        let layers = widths.windows(2).map(|w| Linear::zeros(w[1], w[0])).collect();
        let slopes = widths[1..widths.len() - 1].iter().map(|&w| vec![T::zero(); w]).collect();
        Mlp { layers, slopes }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.rows()
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &[T]) -> (Vec<T>, MlpCache<T>) {
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut preacts = Vec::with_capacity(n - 1);
        let mut cur = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            inputs.push(cur.clone());
            let z = layer.forward(&cur);
            if l + 1 < n {
                preacts.push(z.clone());
                cur = prelu(&z, &self.slopes[l]);
            } else {
                cur = z;
            }
        }
        (cur, MlpCache { inputs, preacts })
    }

    /// Backpropagates `d_out` through the stack, accumulating into `grads`,
    /// and returns the gradient w.r.t. the input.
    #[allow(clippy::needless_range_loop)]
    pub fn backward(&self, cache: &MlpCache<T>, d_out: &[T], grads: &mut MlpGrads<T>) -> Vec<T> {
        let n = self.layers.len();
        let mut d_pre: Vec<T> = d_out.to_vec();
        for l in (0..n).rev() {
            if l + 1 < n {
                // through PReLU: d_pre currently holds d(activation)
                let z = &cache.preacts[l];
                let slope = &self.slopes[l];
                for i in 0..d_pre.len() {
                    if z[i] < T::zero() {
                        grads.slopes[l][i] = grads.slopes[l][i] + d_pre[i] * z[i];
                        d_pre[i] = d_pre[i] * slope[i];
                    }
                }
            }
            let input = &cache.inputs[l];
            let layer = &self.layers[l];
            let glayer = &mut grads.layers[l];
            for i in 0..layer.w.rows() {
                let gi = d_pre[i];
                glayer.b[i] = glayer.b[i] + gi;
                let grow = glayer.w.row_mut(i);
                for j in 0..input.len() {
                    grow[j] = grow[j] + gi * input[j];
                }
            }
            if l > 0 {
                let mut d_in = vec![T::zero(); input.len()];
                for i in 0..layer.w.rows() {
                    let wrow = layer.w.row(i);
                    let gi = d_pre[i];
                    for j in 0..d_in.len() {
                        d_in[j] = d_in[j] + wrow[j] * gi;
                    }
                }
                d_pre = d_in;
            } else {
                let mut d_x = vec![T::zero(); input.len()];
                for i in 0..layer.w.rows() {
                    let wrow = layer.w.row(i);
                    let gi = d_pre[i];
                    for j in 0..d_x.len() {
                        d_x[j] = d_x[j] + wrow[j] * gi;
                    }
                }
                return d_x;
            }
        }
        unreachable!()
    }

    pub fn grads_like(&self) -> MlpGrads<T> {
        MlpGrads {
            layers: self
                .layers
                .iter()
                .map(|l| Linear::zeros(l.w.rows(), l.w.cols()))
                .collect(),
            slopes: self.slopes.iter().map(|s| vec![T::zero(); s.len()]).collect(),
        }
    }

    pub fn convert<U: Real>(&self) -> Mlp<U> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Linear {
                    w: l.w.convert(),
                    b: l.b.iter().map(|x| U::from_f64(x.to_f64())).collect(),
                })
                .collect(),
            slopes: self
                .slopes
                .iter()
                .map(|s| s.iter().map(|x| U::from_f64(x.to_f64())).collect())
                .collect(),
        }
    }
}

/// Sanity check that the configured widths chain correctly.
pub fn check_widths<T: Real>(mlp: &Mlp<T>, expect_in: usize) -> Result<()> {
    use crate::error::DmfError;
    if mlp.input_dim() != expect_in {
        return Err(DmfError::DimensionMismatch {
            op: "mlp",
            detail: format!("expected input width {}, got {}", expect_in, mlp.input_dim()),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Mlp<f64> {
        let mut m = Mlp::<f64>::zeros(&[2, 3, 1]);
        let vals = [0.3, -0.2, 0.5, 0.1, -0.4, 0.7];
        m.layers[0].w.data_mut().copy_from_slice(&vals);
        m.layers[0].b = vec![0.1, -0.1, 0.05];
        m.slopes[0] = vec![0.25, 0.25, 0.25];
        m.layers[1].w.data_mut().copy_from_slice(&[1.0, -1.0, 0.5]);
        m.layers[1].b = vec![0.2];
        m
    }

    #[test]
    fn forward_matches_hand_unrolled() {
        let m = tiny();
        let x = [1.0, 2.0];
        let z0 = [
            0.3 * 1.0 - 0.2 * 2.0 + 0.1,
            0.5 * 1.0 + 0.1 * 2.0 - 0.1,
            -0.4 * 1.0 + 0.7 * 2.0 + 0.05,
        ];
        let a0: Vec<f64> = z0.iter().map(|&z| if z >= 0.0 { z } else { 0.25 * z }).collect();
        let expect = a0[0] - a0[1] + 0.5 * a0[2] + 0.2;
        let y = m.forward(&x);
        assert!((y[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut m = tiny();
        let x = [0.7, -1.3];
        let (y, cache) = m.forward_cached(&x);
        let mut grads = m.grads_like();
        m.backward(&cache, &[1.0], &mut grads);
        let loss0 = y[0];
        let h = 1e-6;

        // spot-check one weight, one bias, one slope
        let w00 = m.layers[0].w.get(0, 0);
        m.layers[0].w.set(0, 0, w00 + h);
        let up = m.forward(&x)[0];
        m.layers[0].w.set(0, 0, w00 - h);
        let dn = m.forward(&x)[0];
        m.layers[0].w.set(0, 0, w00);
        assert!((grads.layers[0].w.get(0, 0) - (up - dn) / (2.0 * h)).abs() < 1e-6);

        let s0 = m.slopes[0][1];
        m.slopes[0][1] = s0 + h;
        let up = m.forward(&x)[0];
        m.slopes[0][1] = s0 - h;
        let dn = m.forward(&x)[0];
        m.slopes[0][1] = s0;
        assert!((grads.slopes[0][1] - (up - dn) / (2.0 * h)).abs() < 1e-6);
        let _ = loss0;
    }
}
