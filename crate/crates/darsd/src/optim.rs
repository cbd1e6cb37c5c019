//! Adaptive-moment gradient descent over a named parameter set.

use crate::params::ParamSet;
use crate::tensor::Tensor;

/// Adam state for one parameter set. Slots are keyed by parameter name so the
/// optimizer survives parameter-set snapshots.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    names: Vec<String>,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64, beta1: f64, beta2: f64) -> Self {
        let names: Vec<String> = params.names().map(str::to_string).collect();
        let sizes: Vec<usize> = params.iter().map(|(_, t)| t.len()).collect();
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            names,
        }
    }

    /// One update. `grads` yields `(name, gradient)` pairs; parameters with
    /// no gradient this step keep their moments untouched.
    pub fn step<'a>(
        &mut self,
        params: &mut ParamSet,
        grads: impl Iterator<Item = (&'a str, &'a [f64])>,
    ) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let grad_map: std::collections::BTreeMap<&str, &[f64]> = grads.collect();
        for (i, name) in self.names.iter().enumerate() {
            let Some(&g) = grad_map.get(name.as_str()) else {
                continue;
            };
            let p: &mut Tensor = params.get_mut(name).expect("param disappeared");
            let data = p.data_mut();
            debug_assert_eq!(data.len(), g.len());
            for j in 0..data.len() {
                let m = &mut self.m[i][j];
                let v = &mut self.v[i][j];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g[j];
                *v = self.beta2 * *v + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                data[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
