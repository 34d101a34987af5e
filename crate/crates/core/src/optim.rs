//! Adam with global-norm gradient clipping.

use ndarray::{Array2, Zip};

use crate::graph::{Gradients, ParamStore};

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64, clip_norm: Option<f64>) -> Self {
        let zeros: Vec<Array2<f64>> = params
            .iter()
            .map(|(_, _, p)| Array2::zeros(p.dim()))
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update and returns the pre-clipping gradient norm.
    pub fn step(&mut self, params: &mut ParamStore, grads: &mut Gradients) -> f64 {
        let norm = grads.global_norm();
        if let Some(max) = self.clip_norm {
            if norm > max {
                grads.scale(max / norm);
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        for (id, g) in grads.iter() {
            let i = id.index();
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            Zip::from(&mut *params.get_mut(id))
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Tape;
    use ndarray::array;

    #[test]
    fn first_step_moves_each_coordinate_by_lr() {
        let mut store = ParamStore::new();
        let id = store.add("w", array![[1.0, -2.0, 0.5]]);
        let mut opt = Adam::new(&store, 0.1, None);
        let mut grads = Gradients::zeros_like(&store);
        grads.accumulate(id, &array![[3.0, -0.5, 0.0]]);
        opt.step(&mut store, &mut grads);
        let w = store.get(id);
        assert!((w[[0, 0]] - 0.9).abs() < 1e-6);
        assert!((w[[0, 1]] + 1.9).abs() < 1e-6);
        assert_eq!(w[[0, 2]], 0.5);
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut store = ParamStore::new();
        let id = store.add("w", array![[0.0, 0.0]]);
        let mut opt = Adam::new(&store, 0.1, Some(1.0));
        let mut grads = Gradients::zeros_like(&store);
        grads.accumulate(id, &array![[3.0, 4.0]]);
        let norm = opt.step(&mut store, &mut grads);
        assert_eq!(norm, 5.0);
        assert!((grads.global_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("w", array![[3.0, -4.0]]);
        let mut opt = Adam::new(&store, 0.05, Some(1.0));
        for _ in 0..2000 {
            let mut grads = {
                let mut tape = Tape::new(&store);
                let w = tape.param(id);
                let sq = tape.mul(w, w);
                let loss = tape.sum(sq);
                tape.backward(loss)
            };
            opt.step(&mut store, &mut grads);
        }
        assert!(store.get(id).iter().all(|x| x.abs() < 1e-2));
    }
}
