use crate::model::{ModelGrads, ModelParams};
use crate::real::Real;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Dense Adam over the fixed tensor visitation order. First and second
/// moments are kept in f64 regardless of the model scalar type.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<T: Real>(params: &mut ModelParams<T>, config: AdamConfig) -> Self {
        let mut sizes = Vec::new();
        params.visit_tensors_mut(|_, t| sizes.push(t.len()));
        AdamState {
            config,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step<T: Real>(&mut self, params: &mut ModelParams<T>, grads: &ModelGrads<T>) {
        self.step += 1;
        let t = self.step as i32;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let gslices = grads.tensor_slices();
        let mut i = 0usize;
        let (m, v) = (&mut self.m, &mut self.v);
        params.visit_tensors_mut(|name, p| {
            let (gname, g) = &gslices[i];
            debug_assert_eq!(gname, name);
            debug_assert_eq!(g.len(), p.len());
            let (mi, vi) = (&mut m[i], &mut v[i]);
            for j in 0..p.len() {
                let gj = g[j].to_f64();
                mi[j] = c.beta1 * mi[j] + (1.0 - c.beta1) * gj;
                vi[j] = c.beta2 * vi[j] + (1.0 - c.beta2) * gj * gj;
                let mhat = mi[j] / bc1;
                let vhat = vi[j] / bc2;
                p[j] = T::from_f64(p[j].to_f64() - c.lr * mhat / (vhat.sqrt() + c.eps));
            }
            i += 1;
        });
        debug_assert_eq!(i, gslices.len());
    }
}
