//! Densities, value functions and partial densities of programs, their
//! θ-gradients, and a quadrature oracle for the ELBO.

use std::collections::BTreeSet;

use rayon::prelude::*;
use thiserror::Error;

use crate::interp::{
    initial_state, normal_pdf, Dual, NameValuation, Program, Scalar, State, ThetaValuation,
    Universe,
};
use crate::syntax::{Command, NameExpr};

/// A set of names, as universe slots.
pub type NameSet = BTreeSet<usize>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DensityError {
    #[error("program exceeded its step budget of {budget}")]
    Diverged { budget: u64 },
    #[error("{0} density is zero at the evaluation point")]
    ZeroDensity(&'static str),
    #[error("quadrature supports at most 2 sampled names, found {0}")]
    TooManyNames(usize),
    #[error("model and guide must be compiled against the same universe")]
    UniverseMismatch,
}

/// Runs `p` from `σ₀ ⊕ σθ ⊕ σn`; `None` on divergence.
pub fn run<T: Scalar>(
    p: &Program,
    theta_ids: &[usize],
    theta: &[T],
    sn: &NameValuation<T>,
) -> Option<State<T>> {
    let u = p.universe();
    p.exec(initial_state(u, theta_ids, theta, sn)).ok()
}

/// Whether every name was sampled at most once.
pub fn sampled_at_most_once<T: Scalar>(u: &Universe, s: &State<T>) -> bool {
    (0..u.num_names()).all(|slot| s[u.cnt_id(slot)].value() <= 1.0)
}

/// `p_{c,σθ}(σn)`: `like · ∏_μ pr_μ` after running `c`, or 0 if `c` diverges
/// or samples a name twice.
pub fn density(p: &Program, theta: &ThetaValuation, sn: &NameValuation) -> f64 {
    let u = p.universe();
    match run(p, &theta.ids, &theta.values, sn) {
        Some(s) if sampled_at_most_once(u, &s) => {
            let mut d = s[u.like_id()];
            for slot in 0..u.num_names() {
                d *= s[u.pr_id(slot)];
            }
            d
        }
        _ => 0.0,
    }
}

/// `log p`, summed factor by factor so that it stays finite where the
/// product would underflow. `-inf` in the zero-density case.
pub fn log_density(p: &Program, theta: &ThetaValuation, sn: &NameValuation) -> f64 {
    let u = p.universe();
    match run(p, &theta.ids, &theta.values, sn) {
        Some(s) if sampled_at_most_once(u, &s) => {
            s[u.like_id()]
                .ln_exact()
                .add(&log_partial_of_state(u, &s, 0..u.num_names()))
        }
        _ => f64::NEG_INFINITY,
    }
}

/// `v_{c,σθ}(σn)`: `μ ↦ val_μ` after running `c`; all zeros if `c` diverges
/// or samples a name twice.
pub fn value_fn(p: &Program, theta: &ThetaValuation, sn: &NameValuation) -> NameValuation {
    let u = p.universe();
    match run(p, &theta.ids, &theta.values, sn) {
        Some(s) if sampled_at_most_once(u, &s) => {
            NameValuation((0..u.num_names()).map(|slot| s[u.val_id(slot)]).collect())
        }
        _ => NameValuation::zeros(u),
    }
}

/// `p^S_{c,σθ}(σn) = ∏_{μ∈S} pr_μ`.
pub fn partial_density(
    p: &Program,
    theta: &ThetaValuation,
    sn: &NameValuation,
    set: &NameSet,
) -> Result<f64, DensityError> {
    let u = p.universe();
    let s = run(p, &theta.ids, &theta.values, sn).ok_or(DensityError::Diverged {
        budget: p.budget(),
    })?;
    Ok(set.iter().map(|&slot| s[u.pr_id(slot)]).product())
}

trait LnExact {
    fn ln_exact(&self) -> Self;
}

impl<T: Scalar> LnExact for T {
    /// Natural log without the interpreter's default for non-positive
    /// arguments: zero maps to `-inf`.
    fn ln_exact(&self) -> Self {
        if self.value() > 0.0 {
            self.ln()
        } else {
            T::constant(f64::NEG_INFINITY)
        }
    }
}

/// `Σ_{μ∈slots} log pr_μ` of a final state.
pub fn log_partial_of_state<T: Scalar>(
    u: &Universe,
    s: &State<T>,
    slots: impl IntoIterator<Item = usize>,
) -> T {
    let mut acc = T::constant(0.0);
    for slot in slots {
        acc = acc.add(&s[u.pr_id(slot)].ln_exact());
    }
    acc
}

/// θ as independent dual variables.
pub fn theta_duals(theta: &ThetaValuation) -> Vec<Dual> {
    let n = theta.len();
    theta
        .values
        .iter()
        .enumerate()
        .map(|(k, &v)| Dual::variable(v, k, n))
        .collect()
}

pub fn constant_names(sn: &NameValuation) -> NameValuation<Dual> {
    NameValuation(sn.0.iter().map(|&r| Dual::constant(r)).collect())
}

/// Final state of `c` from `σ₀ ⊕ σθ ⊕ σn` in dual mode, θ as variables.
///
/// `σn` may itself carry θ-gradients, giving total derivatives.
pub fn run_dual(
    p: &Program,
    theta: &ThetaValuation,
    sn: &NameValuation<Dual>,
) -> Result<State<Dual>, DensityError> {
    run(p, &theta.ids, &theta_duals(theta), sn).ok_or(DensityError::Diverged {
        budget: p.budget(),
    })
}

/// `v_{c,σθ}(σn)` with its θ-gradient.
pub fn value_fn_dual(
    p: &Program,
    theta: &ThetaValuation,
    sn: &NameValuation,
) -> Result<NameValuation<Dual>, DensityError> {
    let u = p.universe();
    let s = run_dual(p, theta, &constant_names(sn))?;
    if !sampled_at_most_once(u, &s) {
        return Err(DensityError::ZeroDensity("program"));
    }
    Ok(NameValuation(
        (0..u.num_names()).map(|slot| s[u.val_id(slot)].clone()).collect(),
    ))
}

/// `log p_{c,σθ}(σn)` with its θ-gradient.
pub fn log_density_dual(
    p: &Program,
    theta: &ThetaValuation,
    sn: &NameValuation<Dual>,
) -> Result<Dual, DensityError> {
    let u = p.universe();
    let s = run_dual(p, theta, sn)?;
    if !sampled_at_most_once(u, &s) {
        return Err(DensityError::ZeroDensity("program"));
    }
    let lp = s[u.like_id()]
        .ln_exact()
        .add(&log_partial_of_state(u, &s, 0..u.num_names()));
    if lp.value == f64::NEG_INFINITY {
        return Err(DensityError::ZeroDensity("program"));
    }
    Ok(lp)
}

/// `log p^S_{c,σθ}(σn)` with its θ-gradient.
pub fn log_partial_density_dual(
    p: &Program,
    theta: &ThetaValuation,
    sn: &NameValuation<Dual>,
    set: &NameSet,
) -> Result<Dual, DensityError> {
    let u = p.universe();
    let s = run_dual(p, theta, sn)?;
    Ok(log_partial_of_state(u, &s, set.iter().copied()))
}

/// Sums in a fixed pairwise order, independent of thread count.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadratureConfig {
    pub lo: f64,
    pub hi: f64,
    /// Points per axis, including both endpoints.
    pub points: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            lo: -10.0,
            hi: 10.0,
            points: 2001,
        }
    }
}

/// Name slots that some sample command of `c` can write. A sample with a
/// non-constant name may write any index of its string.
pub fn sampled_slots(u: &Universe, c: &Command) -> NameSet {
    let mut out = NameSet::new();
    c.walk(&mut |c| {
        if let Command::Sample { name, .. } = c {
            let Some(string) = u.string_id(&name.string) else {
                return;
            };
            match constant_slot(u, name) {
                Some(slot) => {
                    out.insert(slot);
                }
                None => out.extend(u.slots_of_string(string)),
            }
        }
    });
    out
}

pub(crate) fn constant_slot(u: &Universe, name: &NameExpr) -> Option<usize> {
    let string = u.string_id(&name.string)?;
    name.constant_index()?;
    let r = crate::interp::eval_expr(u, &name.index, &State::<f64>::zeros(u)).ok()?;
    Some(u.name_slot(
        string,
        crate::interp::create_name_index(r, u.name_bound()),
    ))
}

/// `L(σθ) = E_{p_g}[log(p_m / p_g)]` by trapezoid quadrature over the names
/// the programs sample. Names neither program samples contribute identical
/// prior factors to both densities and integrate out.
pub fn elbo_quadrature(
    model: &Program,
    guide: &Program,
    theta: &ThetaValuation,
    cfg: &QuadratureConfig,
) -> Result<f64, DensityError> {
    if model.universe() != guide.universe() {
        return Err(DensityError::UniverseMismatch);
    }
    let u = model.universe().clone();
    let mut active: NameSet = sampled_slots(&u, model.source());
    active.extend(sampled_slots(&u, guide.source()));
    let active: Vec<usize> = active.into_iter().collect();
    if active.len() > 2 {
        return Err(DensityError::TooManyNames(active.len()));
    }
    let base = initial_state(&u, &theta.ids, &theta.values, &NameValuation::zeros(&u));
    let integrand = |point: &[f64]| -> Result<f64, DensityError> {
        let mut s = base.clone();
        for (&slot, &r) in active.iter().zip(point) {
            s[u.name_id(slot)] = r;
            s[u.pr_id(slot)] = normal_pdf(r, 0.0, 1.0);
            s[u.val_id(slot)] = r;
        }
        let factor = |p: &Program, s: State| -> f64 {
            match p.exec(s).ok() {
                Some(out) if sampled_at_most_once(&u, &out) => active
                    .iter()
                    .fold(out[u.like_id()], |acc, &slot| acc * out[u.pr_id(slot)]),
                _ => 0.0,
            }
        };
        let pg = factor(guide, s.clone());
        if pg == 0.0 {
            return Ok(0.0);
        }
        let pm = factor(model, s);
        Ok(pg * (pm.ln_exact() - pg.ln()))
    };

    let n = cfg.points;
    assert!(n >= 2, "quadrature needs at least two points per axis");
    let h = (cfg.hi - cfg.lo) / (n - 1) as f64;
    let node = |i: usize| cfg.lo + h * i as f64;
    let weight = |i: usize| if i == 0 || i == n - 1 { 0.5 * h } else { h };
    match active.len() {
        0 => integrand(&[]),
        1 => {
            let vals = (0..n)
                .map(|i| integrand(&[node(i)]).map(|f| weight(i) * f))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(pairwise_sum(&vals))
        }
        _ => {
            let rows = (0..n)
                .into_par_iter()
                .map(|i| {
                    let row = (0..n)
                        .map(|j| integrand(&[node(i), node(j)]).map(|f| weight(j) * f))
                        .collect::<Result<Vec<_>, _>>()?;
                    Ok(weight(i) * pairwise_sum(&row))
                })
                .collect::<Result<Vec<_>, DensityError>>()?;
            Ok(pairwise_sum(&rows))
        }
    }
}

/// Central finite differences of [`elbo_quadrature`] with step `h`.
pub fn elbo_grad_fd(
    model: &Program,
    guide: &Program,
    theta: &ThetaValuation,
    cfg: &QuadratureConfig,
    h: f64,
) -> Result<Vec<f64>, DensityError> {
    (0..theta.len())
        .map(|k| {
            let mut plus = theta.values.clone();
            let mut minus = theta.values.clone();
            plus[k] += h;
            minus[k] -= h;
            let lp = elbo_quadrature(model, guide, &theta.with_values(&plus), cfg)?;
            let lm = elbo_quadrature(model, guide, &theta.with_values(&minus), cfg)?;
            Ok((lp - lm) / (2.0 * h))
        })
        .collect()
}

pub const FD_STEP: f64 = 1e-4;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::parse_program;
    use std::sync::Arc;

    fn pair(model: &str, guide: &str, params: &[&str], n: usize) -> (Program, Program, Vec<Arc<str>>) {
        let m = parse_program(model).unwrap();
        let g = parse_program(guide).unwrap();
        let params: Vec<Arc<str>> = params.iter().map(|p| Arc::from(*p)).collect();
        let u = Arc::new(Universe::for_programs(&[&m, &g], &params, n));
        (
            Program::new(m, u.clone()).unwrap(),
            Program::new(g, u).unwrap(),
            params,
        )
    }

    #[test]
    fn identical_programs_have_zero_elbo_gradient() {
        let src = "x := sam(\"a\", N(t, 2), λy. y)";
        let (m, g, params) = pair(src, src, &["t"], 4);
        let theta = ThetaValuation::new(m.universe(), &params, &[0.7]).unwrap();
        let cfg = QuadratureConfig {
            points: 401,
            ..Default::default()
        };
        let grad = elbo_grad_fd(&m, &g, &theta, &cfg, FD_STEP).unwrap();
        assert!(grad[0].abs() < 1e-9, "{grad:?}");
        assert!(elbo_quadrature(&m, &g, &theta, &cfg).unwrap().abs() < 1e-12);
    }

    #[test]
    fn too_many_names() {
        let src = "x := sam(\"a\", N(0, 1), λy. y); x := sam(\"b\", N(0, 1), λy. y); x := sam(\"c\", N(0, 1), λy. y)";
        let (m, g, _) = pair(src, src, &[], 2);
        let theta = ThetaValuation::new(m.universe(), &[], &[]).unwrap();
        assert_eq!(
            elbo_quadrature(&m, &g, &theta, &QuadratureConfig::default()),
            Err(DensityError::TooManyNames(3))
        );
    }

    #[test]
    fn double_sampling_density_is_zero() {
        let src = "x := sam(\"a\", N(0, 1), λy. y); x := sam(\"a\", N(0, 1), λy. y)";
        let p = Program::standalone(parse_program(src).unwrap(), &[], 2);
        let theta = ThetaValuation::new(p.universe(), &[], &[]).unwrap();
        let sn = NameValuation::zeros(p.universe());
        assert_eq!(density(&p, &theta, &sn), 0.0);
        assert_eq!(value_fn(&p, &theta, &sn), NameValuation::zeros(p.universe()));
    }

    #[test]
    fn diverging_value_fn_is_zero() {
        let p = Program::standalone(
            parse_program("x := sam(\"a\", N(0, 1), λy. y + 1); while true { skip }").unwrap(),
            &[],
            2,
        )
        .with_budget(100);
        let theta = ThetaValuation::new(p.universe(), &[], &[]).unwrap();
        let sn = NameValuation(vec![0.5, 0.25]);
        assert_eq!(value_fn(&p, &theta, &sn), NameValuation(vec![0.0, 0.0]));
        assert!(partial_density(&p, &theta, &sn, &NameSet::new()).is_err());
    }

    #[test]
    fn pairwise_sum_matches_naive_on_small_input() {
        let xs: Vec<f64> = (0..100).map(f64::from).collect();
        assert_eq!(pairwise_sum(&xs), 4950.0);
    }
}
