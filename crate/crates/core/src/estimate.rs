//! Score, pathwise and selective pathwise gradient estimators of the ELBO,
//! and a stochastic gradient-ascent driver.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::density::{log_partial_of_state, pairwise_sum, run_dual, value_fn_dual, DensityError, NameSet};
use crate::interp::{CompileError, Dual, ExecError, NameValuation, Program, Scalar, ThetaValuation};
use crate::reparam::{transform, ReparamPlan};
use crate::rng::stream;

/// Printed with every estimation report: the estimators are unbiased only if
/// differentiation under the integral sign is permitted, which is assumed
/// rather than checked.
pub const INTERCHANGE_ASSUMPTION: &str =
    "assumed: the θ-gradient commutes with the integral over names (not checked)";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimateError {
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error("sampling the guide failed: {0}")]
    Sampling(#[from] ExecError),
    #[error("transformed guide does not compile: {0}")]
    Compile(#[from] CompileError),
    #[error("gradient is not finite")]
    NonFinite,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradEstimate {
    pub grad: Vec<f64>,
    pub samples: usize,
    pub seed: Option<u64>,
}

/// Per-coordinate sample mean and standard error.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McSummary {
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    pub samples: usize,
}

impl McSummary {
    pub fn from_samples(samples: &[Vec<f64>]) -> McSummary {
        let n = samples.len();
        let dim = samples.first().map_or(0, Vec::len);
        let col = |k: usize| samples.iter().map(|g| g[k]).collect::<Vec<_>>();
        let mut mean = Vec::with_capacity(dim);
        let mut se = Vec::with_capacity(dim);
        for k in 0..dim {
            let xs = col(k);
            let m = pairwise_sum(&xs) / n as f64;
            let dev: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
            let var = if n > 1 { pairwise_sum(&dev) / (n - 1) as f64 } else { 0.0 };
            mean.push(m);
            se.push((var / n as f64).sqrt());
        }
        McSummary { mean, se, samples: n }
    }

    /// `|mean − target| / se` per coordinate.
    pub fn z_scores(&self, target: &[f64]) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.se)
            .zip(target)
            .map(|((m, s), t)| (m - t).abs() / s)
            .collect()
    }
}

/// `log p` of a final dual state, or `ZeroDensity(which)`.
fn log_density_at(p: &Program, theta: &ThetaValuation, sn: &NameValuation<Dual>, which: &'static str) -> Result<Dual, DensityError> {
    let u = p.universe();
    let s = run_dual(p, theta, sn)?;
    if !crate::density::sampled_at_most_once(u, &s) {
        return Err(DensityError::ZeroDensity(which));
    }
    let like = &s[u.like_id()];
    if like.value <= 0.0 {
        return Err(DensityError::ZeroDensity(which));
    }
    let lp = like.ln().add(&log_partial_of_state(u, &s, 0..u.num_names()));
    if !lp.value.is_finite() {
        return Err(DensityError::ZeroDensity(which));
    }
    Ok(lp)
}

/// Guide log-density split into the factors outside and inside `rv`, plus
/// the full log-density value.
struct GuideTerms {
    outside: Dual,
    inside: Dual,
    full: f64,
}

fn guide_terms(g: &Program, theta: &ThetaValuation, sn: &NameValuation<Dual>, rv: &NameSet) -> Result<GuideTerms, DensityError> {
    let u = g.universe();
    let s = run_dual(g, theta, sn)?;
    if !crate::density::sampled_at_most_once(u, &s) || s[u.like_id()].value <= 0.0 {
        return Err(DensityError::ZeroDensity("guide"));
    }
    let outside = log_partial_of_state(u, &s, (0..u.num_names()).filter(|m| !rv.contains(m)));
    let inside = log_partial_of_state(u, &s, rv.iter().copied());
    let full = s[u.like_id()].ln().add(&log_partial_of_state(u, &s, 0..u.num_names())).value;
    if !full.is_finite() {
        return Err(DensityError::ZeroDensity("guide"));
    }
    Ok(GuideTerms { outside, inside, full })
}

fn finite(g: Vec<f64>) -> Result<Vec<f64>, EstimateError> {
    if g.iter().all(|x| x.is_finite()) {
        Ok(g)
    } else {
        Err(EstimateError::NonFinite)
    }
}

/// A model, a guide and a plan, compiled once.
#[derive(Clone, Debug)]
pub struct Estimator {
    pub model: Program,
    pub guide: Program,
    /// `⟨c_g⟩π`.
    pub reparam_guide: Program,
    pub plan: ReparamPlan,
    pub rv: NameSet,
}

impl Estimator {
    pub fn new(model: Program, guide: Program, plan: ReparamPlan) -> Result<Estimator, EstimateError> {
        if model.universe() != guide.universe() {
            return Err(DensityError::UniverseMismatch.into());
        }
        let u = guide.universe().clone();
        let reparam_guide =
            Program::new(transform(guide.source(), &plan), u.clone())?.with_budget(guide.budget());
        let rv = plan.rv(&u);
        Ok(Estimator {
            model,
            guide,
            reparam_guide,
            plan,
            rv,
        })
    }

    /// `σ̂n ~ p_{⟨c_g⟩π,σθ}`.
    pub fn draw<R: rand::Rng + ?Sized>(&self, theta: &ThetaValuation, rng: &mut R) -> Result<NameValuation, EstimateError> {
        Ok(self.reparam_guide.exec_sampling(theta, rng)?)
    }

    /// The selective pathwise estimate for one draw `σ̂n`.
    pub fn spge_grad(&self, theta: &ThetaValuation, sn_hat: &NameValuation) -> Result<Vec<f64>, EstimateError> {
        let n = theta.len();
        let sn = value_fn_dual(&self.reparam_guide, theta, sn_hat)?;
        let lm = log_density_at(&self.model, theta, &sn, "model")?;
        let g = guide_terms(&self.guide, theta, &sn, &self.rv)?;
        let f = lm.value - g.full;
        let (a, b, m) = (g.outside.grad_vec(n), g.inside.grad_vec(n), lm.grad_vec(n));
        finite((0..n).map(|k| a[k] * f - b[k] + m[k]).collect())
    }

    /// `M` independent estimates, one RNG stream per sample.
    pub fn sample_grads(
        &self,
        theta: &ThetaValuation,
        samples: usize,
        seed: u64,
        label: &str,
        offset: u64,
    ) -> Result<Vec<Vec<f64>>, EstimateError> {
        (0..samples)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream(seed, label, offset + i as u64);
                let sn = self.draw(theta, &mut rng)?;
                self.spge_grad(theta, &sn)
            })
            .collect()
    }

    /// Mean and standard error of `samples` estimates at `θ`.
    pub fn estimate(&self, theta: &ThetaValuation, samples: usize, seed: u64) -> Result<McSummary, EstimateError> {
        Ok(McSummary::from_samples(&self.sample_grads(theta, samples, seed, "estimate", 0)?))
    }

    /// Gradient ascent `θ ← θ + η · mean of M estimates`.
    pub fn svi(&self, theta0: &ThetaValuation, cfg: &SviConfig) -> Result<Trajectory, EstimateError> {
        assert!(cfg.eta >= 0.0 && cfg.samples >= 1, "invalid SVI configuration");
        let mut theta = theta0.clone();
        let mut steps = Vec::with_capacity(cfg.steps + 1);
        let m = cfg.samples as u64;
        for t in 0..cfg.steps {
            let grads = self.sample_grads(&theta, cfg.samples, cfg.seed, "svi", t as u64 * m)?;
            let mean = McSummary::from_samples(&grads).mean;
            let norm = mean.iter().map(|g| g * g).sum::<f64>().sqrt();
            steps.push(SviStep {
                step: t,
                theta: theta.values.clone(),
                grad_norm: Some(norm),
            });
            let next: Vec<f64> = theta.values.iter().zip(&mean).map(|(v, g)| v + cfg.eta * g).collect();
            theta = theta.with_values(&next);
        }
        steps.push(SviStep {
            step: cfg.steps,
            theta: theta.values.clone(),
            grad_norm: None,
        });
        Ok(Trajectory {
            params: theta.names.clone(),
            seed: cfg.seed,
            steps,
        })
    }
}

/// Score estimator: `f · ∇ log p_g + ∇ log p_m` at `σ̂n`.
pub fn sce_grad(model: &Program, guide: &Program, theta: &ThetaValuation, sn_hat: &NameValuation) -> Result<Vec<f64>, EstimateError> {
    let n = theta.len();
    let sn = value_fn_dual(guide, theta, sn_hat)?;
    let lm = log_density_at(model, theta, &sn, "model")?;
    let lg = log_density_at(guide, theta, &sn, "guide")?;
    let f = lm.value - lg.value;
    let (g, m) = (lg.grad_vec(n), lm.grad_vec(n));
    finite((0..n).map(|k| g[k] * f + m[k]).collect())
}

/// Pathwise estimator: `∇ (log p_m − log p_g)` at `σ' = v_{c_g'}(σ̂n)`,
/// where `c_g'` is the reparameterised guide and `c_g` the original.
pub fn pge_grad(
    model: &Program,
    guide: &Program,
    reparam_guide: &Program,
    theta: &ThetaValuation,
    sn_hat: &NameValuation,
) -> Result<Vec<f64>, EstimateError> {
    let n = theta.len();
    let sn = value_fn_dual(reparam_guide, theta, sn_hat)?;
    let lm = log_density_at(model, theta, &sn, "model")?;
    let lg = log_density_at(guide, theta, &sn, "guide")?;
    let (g, m) = (lg.grad_vec(n), lm.grad_vec(n));
    finite((0..n).map(|k| m[k] - g[k]).collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SviConfig {
    pub eta: f64,
    pub steps: usize,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SviStep {
    pub step: usize,
    pub theta: Vec<f64>,
    /// Norm of the averaged estimate taken at this step; `None` on the
    /// final row.
    pub grad_norm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub params: Vec<Arc<str>>,
    pub seed: u64,
    pub steps: Vec<SviStep>,
}

impl Trajectory {
    pub fn final_theta(&self) -> &[f64] {
        &self.steps.last().expect("trajectory has a final row").theta
    }
}
