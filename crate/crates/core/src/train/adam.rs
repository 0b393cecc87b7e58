//! Adam with explicit, serialisable moment buffers.

use std::collections::BTreeMap;

use tch::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Per-parameter first and second moments keyed by parameter name.
#[derive(Debug, Default)]
pub struct AdamState {
    pub step: u64,
    pub moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl AdamState {
    /// Applies one update to every parameter that has a gradient.
    pub fn step(&mut self, params: &[(String, Tensor)], hp: &AdamParams) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - hp.beta1.powi(t);
        let bc2 = 1.0 - hp.beta2.powi(t);
        tch::no_grad(|| {
            for (name, p) in params {
                let g = p.grad();
                if !g.defined() {
                    continue;
                }
                let (m, v) = self
                    .moments
                    .entry(name.clone())
                    .or_insert_with(|| (p.zeros_like(), p.zeros_like()));
                let _ = m.g_mul_scalar_(hp.beta1).g_add_(&(&g * (1.0 - hp.beta1)));
                let _ = v.g_mul_scalar_(hp.beta2).g_add_(&(g.square() * (1.0 - hp.beta2)));
                let update = (&*m / bc1) / ((&*v / bc2).sqrt() + hp.eps) * hp.lr;
                let mut p = p.shallow_clone();
                let _ = p.g_sub_(&update);
            }
        });
    }

    pub fn deep_clone(&self) -> Self {
        Self {
            step: self.step,
            moments: self
                .moments
                .iter()
                .map(|(k, (m, v))| (k.clone(), (m.copy(), v.copy())))
                .collect(),
        }
    }
}

pub fn zero_grads(params: &[(String, Tensor)]) {
    for (_, p) in params {
        let mut g = p.grad();
        if g.defined() {
            let _ = g.zero_();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tch::Kind;

    #[test]
    fn matches_reference_update() {
        let hp = AdamParams {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        };
        let p = Tensor::from_slice(&[1.0f64, -2.0]).set_requires_grad(true);
        let params = vec![("p".to_string(), p.shallow_clone())];
        let mut st = AdamState::default();
        // f(p) = sum(p^2), g = 2p, scalar reference recursion.
        let (mut m, mut v, mut x) = ([0.0f64; 2], [0.0f64; 2], [1.0f64, -2.0]);
        for t in 1..=5 {
            zero_grads(&params);
            (&p * &p).sum(Kind::Double).backward();
            st.step(&params, &hp);
            for i in 0..2 {
                let g = 2.0 * x[i];
                m[i] = 0.9 * m[i] + 0.1 * g;
                v[i] = 0.99 * v[i] + 0.01 * g * g;
                let mh = m[i] / (1.0 - 0.9f64.powi(t));
                let vh = v[i] / (1.0 - 0.99f64.powi(t));
                x[i] -= 0.1 * mh / (vh.sqrt() + 1e-8);
            }
        }
        let got: Vec<f64> = Vec::try_from(&p.detach()).unwrap();
        assert!((got[0] - x[0]).abs() < 1e-12 && (got[1] - x[1]).abs() < 1e-12);
    }
}
