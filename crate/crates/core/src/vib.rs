//! Variational information bottleneck on the shared representation.
//!
//! The shared context states parameterise a diagonal Gaussian `p(z|x)` whose
//! mean and log-variance are linear maps of the states. Training samples one
//! `z` per token through the reparameterisation `z = μ + exp(½·logσ²) ⊙ ε`,
//! scores spans on `z` with the shared extractor head, and penalises
//! `KL(p(z|x) ‖ N(0, I))` with weight `β`.

use ndarray::{Array2, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::backbone::ContextStates;
use crate::corpus::EventInstance;
use crate::error::{Error, Result};
use crate::graph::{ParamId, ParamStore, Tape, Var};
use crate::model::{MultiFormatModel, TermSelection};
use crate::prompts::TemplateRegistry;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VibConfig {
    pub enabled: bool,
    pub beta: f64,
    /// Latent width; 0 means "same as d_model".
    pub d_z: usize,
    pub eval_use_mean: bool,
    /// Map `z` back to d_model with a learned projection when `d_z` differs.
    pub project: bool,
}

impl Default for VibConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            beta: 0.001,
            d_z: 0,
            eval_use_mean: true,
            project: false,
        }
    }
}

impl VibConfig {
    pub fn latent_dim(&self, d_model: usize) -> usize {
        if self.d_z == 0 {
            d_model
        } else {
            self.d_z
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct VibParams {
    pub w_mu: ParamId,
    pub w_sigma: ParamId,
    pub projection: Option<ParamId>,
}

impl VibParams {
    pub fn new(
        store: &mut ParamStore,
        d_model: usize,
        config: &VibConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let d_z = config.latent_dim(d_model);
        if d_z != d_model && !config.project {
            return Err(Error::Config(format!(
                "vib.d_z = {d_z} differs from d_model = {d_model} but vib.project is off"
            )));
        }
        let eye_ish = if d_z == d_model {
            Array2::eye(d_model)
        } else {
            Array2::zeros((d_model, d_z))
        };
        let w_mu = store.add_normal("vib.w_mu", d_model, d_z, 0.02, rng);
        *store.get_mut(w_mu) += &eye_ish;
        let w_sigma = store.add_normal("vib.w_sigma", d_model, d_z, 0.01, rng);
        let projection = (d_z != d_model).then(|| {
            store.add_normal(
                "vib.projection",
                d_z,
                d_model,
                1.0 / (d_z as f64).sqrt(),
                rng,
            )
        });
        Ok(Self {
            w_mu,
            w_sigma,
            projection,
        })
    }

    pub fn num_scalars(d_model: usize, d_z: usize) -> usize {
        2 * d_model * d_z + if d_z != d_model { d_z * d_model } else { 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPosterior {
    pub mu: Array2<f64>,
    pub log_var: Array2<f64>,
}

pub fn posterior_var(tape: &mut Tape, h: Var, w_mu: Var, w_sigma: Var) -> (Var, Var) {
    (tape.matmul(h, w_mu), tape.matmul(h, w_sigma))
}

/// `μ + exp(½·logσ²) ⊙ ε` for a fixed noise matrix `ε`.
pub fn sample_var(tape: &mut Tape, mu: Var, log_var: Var, noise: Array2<f64>) -> Var {
    let half = tape.scale(log_var, 0.5);
    let std = tape.exp(half);
    let spread = tape.mul_const(std, noise);
    tape.add(mu, spread)
}

/// Token-averaged `½ Σ_d (μ² + σ² − logσ² − 1)`.
pub fn kl_var(tape: &mut Tape, mu: Var, log_var: Var) -> Var {
    let n_tokens = tape.shape(mu).0 as f64;
    let mu2 = tape.mul(mu, mu);
    let var = tape.exp(log_var);
    let a = tape.add(mu2, var);
    let b = tape.sub(a, log_var);
    let c = tape.add_scalar(b, -1.0);
    let total = tape.sum(c);
    tape.scale(total, 0.5 / n_tokens)
}

pub fn standard_normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

pub fn posterior(
    h: &ContextStates,
    w_mu: &Array2<f64>,
    w_sigma: &Array2<f64>,
) -> Result<GaussianPosterior> {
    let d = h.0.ncols();
    if w_mu.nrows() != d || w_sigma.dim() != w_mu.dim() {
        return Err(Error::Shape(format!(
            "H width {d}, W_mu {:?}, W_sigma {:?}",
            w_mu.dim(),
            w_sigma.dim()
        )));
    }
    Ok(GaussianPosterior {
        mu: h.0.dot(w_mu),
        log_var: h.0.dot(w_sigma),
    })
}

pub fn sample(post: &GaussianPosterior, noise: &Array2<f64>) -> Result<Array2<f64>> {
    if noise.dim() != post.mu.dim() {
        return Err(Error::Shape(format!(
            "noise {:?} vs posterior {:?}",
            noise.dim(),
            post.mu.dim()
        )));
    }
    Ok(Zip::from(&post.mu)
        .and(&post.log_var)
        .and(noise)
        .map_collect(|m, lv, e| m + (0.5 * lv).exp() * e))
}

pub fn kl_to_standard_normal(post: &GaussianPosterior) -> f64 {
    let n_tokens = post.mu.nrows();
    if n_tokens == 0 {
        return 0.0;
    }
    let total: f64 = Zip::from(&post.mu)
        .and(&post.log_var)
        .fold(0.0, |acc, m, lv| acc + m * m + lv.exp() - lv - 1.0);
    0.5 * total / n_tokens as f64
}

/// `Σ_k (L_shared_k + β · Σ_x KL)` evaluated without dropout; `z` noise is
/// drawn from `rng`.
pub fn shared_vib_loss(
    batch_1: &[EventInstance],
    batch_2: &[EventInstance],
    model: &MultiFormatModel,
    templates: &TemplateRegistry,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if !model.config().vib.enabled {
        return Err(Error::Config("vib is disabled for this model".into()));
    }
    let beta = model.config().vib.beta;
    let mut total = 0.0;
    for batch in [batch_1, batch_2] {
        let prepared = batch
            .iter()
            .map(|inst| model.prepare(inst, templates))
            .collect::<Result<Vec<_>>>()?;
        let terms = model.eval_terms(&prepared, TermSelection::VIB, Some(&mut *rng))?;
        total += terms.shared + beta * terms.kl;
    }
    Ok(total)
}

pub fn total_loss(l_ssp: f64, l_vib: f64) -> f64 {
    l_ssp + l_vib
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    #[test]
    fn zero_states_give_unit_gaussian() {
        let h = ContextStates(Array2::zeros((3, 4)));
        let w = Array2::from_elem((4, 4), 0.7);
        let p = posterior(&h, &w, &w).unwrap();
        assert!(p.mu.iter().all(|x| *x == 0.0));
        assert!(p.log_var.iter().all(|x| *x == 0.0));
        assert_eq!(kl_to_standard_normal(&p), 0.0);
    }

    #[test]
    fn posterior_matches_manual_product() {
        let h = ContextStates(array![[1.0, 2.0], [0.5, -1.0]]);
        let w_mu = array![[1.0, 0.0, 2.0], [0.0, 1.0, -1.0]];
        let w_s = array![[0.1, 0.2, 0.3], [0.0, -0.1, 0.5]];
        let p = posterior(&h, &w_mu, &w_s).unwrap();
        assert_eq!(p.mu.dim(), (2, 3));
        for i in 0..2 {
            for j in 0..3 {
                let m: f64 = (0..2).map(|k| h.0[[i, k]] * w_mu[[k, j]]).sum();
                let s: f64 = (0..2).map(|k| h.0[[i, k]] * w_s[[k, j]]).sum();
                assert!((p.mu[[i, j]] - m).abs() < 1e-12);
                assert!((p.log_var[[i, j]] - s).abs() < 1e-12);
            }
        }
        assert!(posterior(&h, &Array2::zeros((3, 3)), &Array2::zeros((3, 3))).is_err());
    }

    #[test]
    fn sample_edge_cases() {
        let post = GaussianPosterior {
            mu: array![[1.0, -2.0]],
            log_var: array![[0.3, 1.0]],
        };
        assert_eq!(sample(&post, &Array2::zeros((1, 2))).unwrap(), post.mu);
        let unit = GaussianPosterior {
            mu: Array2::zeros((1, 2)),
            log_var: Array2::zeros((1, 2)),
        };
        let noise = array![[0.4, -1.3]];
        assert_eq!(sample(&unit, &noise).unwrap(), noise);
        assert!(sample(&unit, &Array2::zeros((2, 2))).is_err());
    }

    #[test]
    fn sample_moments_converge() {
        let n = 100_000;
        let post = GaussianPosterior {
            mu: Array2::ones((n, 1)),
            log_var: Array2::from_elem((n, 1), 4f64.ln()),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = sample(&post, &standard_normal(n, 1, &mut rng)).unwrap();
        let mean = z.mean().unwrap();
        let std = (z.mapv(|x| (x - mean).powi(2)).sum() / (n - 1) as f64).sqrt();
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
        assert!((std - 2.0).abs() < 0.02, "std {std}");
    }

    #[test]
    fn kl_closed_form_examples() {
        let p = GaussianPosterior {
            mu: array![[1.0]],
            log_var: array![[0.0]],
        };
        assert_eq!(kl_to_standard_normal(&p), 0.5);
        assert_eq!(total_loss(0.0, 0.0), 0.0);
        assert_eq!(total_loss(1.5, 0.25), 1.75);
    }

    #[test]
    fn graph_kl_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let post = GaussianPosterior {
            mu: standard_normal(5, 3, &mut rng),
            log_var: standard_normal(5, 3, &mut rng) * 0.5,
        };
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let mu = tape.constant(post.mu.clone());
        let lv = tape.constant(post.log_var.clone());
        let kl = kl_var(&mut tape, mu, lv);
        assert!((tape.scalar(kl) - kl_to_standard_normal(&post)).abs() < 1e-12);
    }

    #[test]
    fn mismatched_latent_needs_projection() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = VibConfig {
            d_z: 8,
            ..VibConfig::default()
        };
        assert!(VibParams::new(&mut store, 16, &cfg, &mut rng).is_err());
        let cfg = VibConfig {
            project: true,
            ..cfg
        };
        let p = VibParams::new(&mut store, 16, &cfg, &mut rng).unwrap();
        assert!(p.projection.is_some());
        assert_eq!(store.num_scalars(), VibParams::num_scalars(16, 8));
    }
}
