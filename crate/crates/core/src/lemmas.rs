//! Executable invariants of the semantics, the analysis and the estimator.
//!
//! Each check either passes or returns a [`Violation`] naming the failing
//! property with a short witness. They are used by the test suites and by
//! `spge check`.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::analysis::{abstract_exec, pre_analyze, AbstractState, AnalysisError};
use crate::density::{
    constant_names, log_partial_density_dual, partial_density, run, run_dual, sampled_at_most_once, value_fn,
    value_fn_dual, DensityError, NameSet,
};
use crate::estimate::McSummary;
use crate::fuzz::{perturb_outside, random_state};
use crate::interp::{Dual, ExecResult, NameValuation, Program, Scalar, State, ThetaValuation, Universe, VarId};
use crate::reparam::{transform, ReparamPlan};
use crate::rng::stream;
use crate::syntax::{Property, Var};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub property: &'static str,
    pub detail: String,
}

impl Violation {
    fn new(property: &'static str, detail: impl Into<String>) -> Violation {
        Violation {
            property,
            detail: detail.into(),
        }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.property, self.detail)
    }
}

/// Equality that treats all NaNs as equal.
pub fn same(a: f64, b: f64) -> bool {
    a == b || (a.is_nan() && b.is_nan())
}

/// `|a − b| ≤ tol · max(|a|, |b|)`, with NaN equal to NaN.
pub fn close_rel(a: f64, b: f64, tol: f64) -> bool {
    same(a, b) || (a - b).abs() <= tol * a.abs().max(b.abs())
}

/// Names keep their values, counters never decrease, and `like` is
/// untouched by programs without observations.
pub fn check_execution(p: &Program, s: &State) -> Result<(), Violation> {
    let u = p.universe();
    let out = match p.exec(s.clone()) {
        ExecResult::Ok(out) => out,
        ExecResult::Diverged { .. } => return Ok(()),
    };
    for slot in 0..u.num_names() {
        let id = u.name_id(slot);
        if !same(out[id], s[id]) {
            return Err(Violation::new("name immutability", format!("{} changed", u.var(id))));
        }
        let c = u.cnt_id(slot);
        if out[c] < s[c] {
            return Err(Violation::new("cnt monotonicity", format!("{} decreased", u.var(c))));
        }
    }
    if !p.source().has_observe() && !same(out[u.like_id()], s[u.like_id()]) {
        return Err(Violation::new("observe-free like", "like changed without observations"));
    }
    Ok(())
}

/// Scaling the initial `like` by `r` scales the final `like` by `r` and
/// changes nothing else.
pub fn check_like_scaling(p: &Program, s: &State, r: f64) -> Result<(), Violation> {
    let u = p.universe();
    let mut scaled = s.clone();
    scaled[u.like_id()] *= r;
    match (p.exec(s.clone()), p.exec(scaled)) {
        (ExecResult::Ok(a), ExecResult::Ok(b)) => {
            for id in 0..u.len() {
                let ok = if id == u.like_id() {
                    // gradual underflow leaves no relative precision to compare
                    let tiny = f64::MIN_POSITIVE * r.max(1.0);
                    close_rel(b[id], r * a[id], 1e-12) || (b[id].abs() < tiny && (r * a[id]).abs() < tiny)
                } else {
                    same(a[id], b[id])
                };
                if !ok {
                    return Err(Violation::new(
                        "like multiplicativity",
                        format!("{}: {:e} vs {:e}", u.var(id), a[id], b[id]),
                    ));
                }
            }
            Ok(())
        }
        (ExecResult::Diverged { .. }, ExecResult::Diverged { .. }) => Ok(()),
        _ => Err(Violation::new("like multiplicativity", "termination changed")),
    }
}

/// Runs from `pairs` random states; for every variable `v`, a second state
/// agreeing with the first on `d(v)` must give the same termination status
/// and the same value of `v`. A state agreeing only on `V` must give the
/// same termination status.
pub fn check_dependency_soundness<R: Rng + ?Sized>(
    p: &Program,
    st: &AbstractState,
    pairs: usize,
    rng: &mut R,
) -> Result<(), Violation> {
    let u = p.universe();
    let outcome = |s: State| match p.exec(s) {
        ExecResult::Ok(out) => Some(out),
        ExecResult::Diverged { .. } => None,
    };
    for _ in 0..pairs {
        let s1 = random_state(u, rng);
        let o1 = outcome(s1.clone());
        let s_v = perturb_outside(u, &s1, |id| st.v.contains(id), rng);
        if o1.is_some() != outcome(s_v).is_some() {
            return Err(Violation::new("dependency soundness", "termination differs on states agreeing on V"));
        }
        for v in 0..u.len() {
            let s2 = perturb_outside(u, &s1, |id| st.d[v].contains(id), rng);
            match (&o1, outcome(s2)) {
                (Some(a), Some(b)) if !same(a[v], b[v]) => {
                    return Err(Violation::new(
                        "dependency soundness",
                        format!("{} differs ({} vs {}) on states agreeing on d", u.var(v), a[v], b[v]),
                    ));
                }
                (Some(_), None) | (None, Some(_)) => {
                    return Err(Violation::new(
                        "dependency soundness",
                        format!("termination differs on states agreeing on d({})", u.var(v)),
                    ));
                }
                _ => {}
            }
        }
    }
    Ok(())
}

/// Well-formedness of the analysis result.
pub fn check_well_formed(u: &Universe, st: &AbstractState) -> Result<(), Violation> {
    st.check_well_formed(u)
        .map_err(|e| Violation::new("well-formedness", e.to_string()))
}

/// Analysis of `c` under `prop`, mapping failures to violations.
pub fn analyze_checked(u: &Universe, p: &Program, prop: Property) -> Result<AbstractState, Violation> {
    abstract_exec(u, p.source(), prop, &pre_analyze(p.source())).map_err(|e: AnalysisError| match e {
        AnalysisError::IllFormed { .. } => Violation::new("well-formedness", e.to_string()),
        other => Violation::new("analysis", other.to_string()),
    })
}

/// `p = p^S · p^{Name∖S}` for an observation-free program.
pub fn check_density_decomposition(
    p: &Program,
    theta: &ThetaValuation,
    sn: &NameValuation,
    set: &NameSet,
    tol: f64,
) -> Result<(), Violation> {
    let u = p.universe();
    let err = |e: DensityError| Violation::new("density decomposition", e.to_string());
    let full = crate::density::density(p, theta, sn);
    let rest: NameSet = (0..u.num_names()).filter(|m| !set.contains(m)).collect();
    let a = partial_density(p, theta, sn, set).map_err(err)?;
    let b = partial_density(p, theta, sn, &rest).map_err(err)?;
    let once = run(p, &theta.ids, &theta.values, sn).is_some_and(|s| sampled_at_most_once(u, &s));
    if once && !close_rel(full, a * b, tol) {
        return Err(Violation::new("density decomposition", format!("{full} vs {a} · {b}")));
    }
    Ok(())
}

/// For `c` with identity lambdas: `p^{Name∖rv}_{⟨c⟩π}(σn)` equals
/// `p^{Name∖rv}_c(v_{⟨c⟩π}(σn))` wherever `p_{⟨c⟩π}(σn) > 0`.
pub fn check_value_fn_connection(
    c: &Program,
    plan: &ReparamPlan,
    theta: &ThetaValuation,
    sn: &NameValuation,
    tol: f64,
) -> Result<(), Violation> {
    let u = c.universe().clone();
    let t = Program::new(transform(c.source(), plan), u.clone())
        .map_err(|e| Violation::new("value-function connection", e.to_string()))?
        .with_budget(c.budget());
    if crate::density::density(&t, theta, sn) <= 0.0 {
        return Ok(());
    }
    let rv = plan.rv(&u);
    let rest: NameSet = (0..u.num_names()).filter(|m| !rv.contains(m)).collect();
    let err = |e: DensityError| Violation::new("value-function connection", e.to_string());
    let lhs = partial_density(&t, theta, sn, &rest).map_err(err)?;
    let rhs = partial_density(c, theta, &value_fn(&t, theta, sn), &rest).map_err(err)?;
    if !close_rel(lhs, rhs, tol) {
        return Err(Violation::new("value-function connection", format!("{lhs} vs {rhs}")));
    }
    Ok(())
}

/// `∇θ log p^{rv}_{⟨c_g⟩π}(σn)`, which vanishes for plans whose rules output
/// constant distributions.
pub fn reparam_partial_grad(
    reparam_guide: &Program,
    rv: &NameSet,
    theta: &ThetaValuation,
    sn: &NameValuation,
) -> Result<Vec<f64>, DensityError> {
    let d = log_partial_density_dual(reparam_guide, theta, &constant_names(sn), rv)?;
    Ok(d.grad_vec(theta.len()))
}

/// `log p_{dens}(v_{values,θ}(σn))` as a function of θ, in dual mode. With
/// `values = None` the names are taken as they are.
pub fn composite_log_density(
    dens: &Program,
    values: Option<&Program>,
    theta: &ThetaValuation,
    sn: &NameValuation,
) -> Result<Dual, DensityError> {
    let names = match values {
        Some(v) => value_fn_dual(v, theta, sn)?,
        None => constant_names(sn),
    };
    let u = dens.universe();
    let s = run_dual(dens, theta, &names)?;
    let like = s[u.like_id()].clone();
    let partial = crate::density::log_partial_of_state(u, &s, 0..u.num_names());
    if like.value <= 0.0 || !sampled_at_most_once(u, &s) {
        return Err(DensityError::ZeroDensity("program"));
    }
    Ok(like.ln().add(&partial))
}

/// Central finite differences of `f` at `x` with step `h`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[k] += h;
            b[k] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

/// Largest `|a − b| / max(1, |b|)` over coordinates.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Compares the dual-mode gradient of [`composite_log_density`] with
/// central differences; returns the largest relative error.
pub fn ad_vs_fd(
    dens: &Program,
    values: Option<&Program>,
    theta: &ThetaValuation,
    sn: &NameValuation,
    h: f64,
) -> Result<f64, DensityError> {
    let ad = composite_log_density(dens, values, theta, sn)?.grad_vec(theta.len());
    let f = |x: &[f64]| {
        composite_log_density(dens, values, &theta.with_values(x), sn)
            .map(|d| d.value)
            .unwrap_or(f64::NAN)
    };
    let fd = fd_gradient(f, &theta.values, h);
    Ok(max_relative_error(&ad, &fd))
}

/// First and second moments of the value function under the program's own
/// sampling distribution, for each slot in `slots`.
pub fn value_moments(
    p: &Program,
    theta: &ThetaValuation,
    slots: &[usize],
    samples: usize,
    seed: u64,
) -> Result<McSummary, crate::interp::ExecError> {
    use rayon::prelude::*;
    let rows = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, "moments", i as u64);
            let sn = p.exec_sampling(theta, &mut rng)?;
            let v = value_fn(p, theta, &sn);
            Ok(slots.iter().flat_map(|&m| [v.0[m], v.0[m] * v.0[m]]).collect())
        })
        .collect::<Result<Vec<Vec<f64>>, _>>()?;
    Ok(McSummary::from_samples(&rows))
}

/// Whether two summaries agree within `k` combined standard errors.
pub fn moments_agree(a: &McSummary, b: &McSummary, k: f64) -> bool {
    (0..a.mean.len()).all(|i| (a.mean[i] - b.mean[i]).abs() <= k * a.se[i].hypot(b.se[i]))
}

const PROBE_STEPS: [f64; 5] = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6];

/// Central difference quotients of the final `v` along `base + t·dir`, at
/// the probe step sizes. `None` if some run diverges.
pub fn line_quotients(p: &Program, v: VarId, base: &State, movable: &[VarId], dir: &[f64]) -> Option<Vec<f64>> {
    let at = |t: f64| {
        let mut s = base.clone();
        for (&id, d) in movable.iter().zip(dir) {
            s[id] += t * d;
        }
        p.exec(s).ok().map(|out| out[v])
    };
    PROBE_STEPS
        .iter()
        .map(|&h| Some((at(h)? - at(-h)?) / (2.0 * h)))
        .collect()
}

/// Quotients that keep growing tenfold as the step shrinks indicate a jump.
pub fn quotients_blow_up(q: &[f64]) -> bool {
    let (prev, last) = (q[q.len() - 2].abs(), q[q.len() - 1].abs());
    q.iter().all(|x| x.is_finite()) && last > 1e3 && last > 5.0 * prev.max(1.0)
}

/// Falsification probe for smoothness: along random lines through random
/// states, moving only variables in `p(v)`, difference quotients of the
/// final `v` must stay bounded as the step shrinks.
pub fn smoothness_probe<R: Rng + ?Sized>(
    p: &Program,
    st: &AbstractState,
    v: VarId,
    points: usize,
    rng: &mut R,
) -> Result<(), Violation> {
    let u = p.universe();
    let movable: Vec<VarId> = st.p[v]
        .iter()
        .filter(|&id| !matches!(u.var(id), Var::Cnt(_)))
        .collect();
    if movable.is_empty() {
        return Ok(());
    }
    for _ in 0..points {
        let base = random_state(u, rng);
        let dir: Vec<f64> = movable.iter().map(|_| rng.sample(StandardNormal)).collect();
        if let Some(q) = line_quotients(p, v, &base, &movable, &dir) {
            if quotients_blow_up(&q) {
                return Err(Violation::new(
                    "smoothness probe",
                    format!("difference quotients of {} grow: {q:?}", u.var(v)),
                ));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckOutcome {
    pub check: String,
    pub trials: usize,
    pub violation: Option<Violation>,
}

/// Invariant suite over a model/guide pair under `plan`, as run by
/// `spge check`.
pub fn run_suite(
    model: &Program,
    guide: &Program,
    plan: &ReparamPlan,
    theta: &ThetaValuation,
    prop: Property,
    trials: usize,
    seed: u64,
) -> Vec<CheckOutcome> {
    let u: Arc<Universe> = guide.universe().clone();
    let mut out = Vec::new();
    let mut record = |check: &str, trials: usize, r: Result<(), Violation>| {
        out.push(CheckOutcome {
            check: check.to_string(),
            trials,
            violation: r.err(),
        })
    };
    let reparam = match Program::new(transform(guide.source(), plan), u.clone()) {
        Ok(p) => p.with_budget(guide.budget()),
        Err(e) => {
            record("transform", 1, Err(Violation::new("transform", e.to_string())));
            return out;
        }
    };
    let programs = [("model", model), ("guide", guide), ("reparameterised guide", &reparam)];
    for (label, p) in programs {
        let mut rng = stream(seed, label, 0);
        let st = analyze_checked(&u, p, prop);
        let analysis_ok = st.as_ref().map(|_| ()).map_err(Clone::clone);
        record(&format!("{label}: well-formedness"), 1, analysis_ok);
        let exec = (0..trials).try_for_each(|_| {
            let s = random_state(&u, &mut rng);
            check_execution(p, &s)?;
            check_like_scaling(p, &s, rng.random_range(0.1..10.0))
        });
        record(&format!("{label}: execution lemmas"), trials, exec);
        if let Ok(st) = st {
            record(
                &format!("{label}: dependency soundness"),
                trials,
                check_dependency_soundness(p, &st, trials, &mut rng),
            );
            let probe = (0..u.len()).try_for_each(|v| smoothness_probe(p, &st, v, 2, &mut rng));
            record(&format!("{label}: smoothness probe"), 2 * u.len(), probe);
        }
    }

    let mut rng = stream(seed, "densities", 0);
    let rv = plan.rv(&u);
    let random_names = |rng: &mut dyn rand::RngCore| {
        NameValuation((0..u.num_names()).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect())
    };
    if !guide.source().has_observe() {
        let r = (0..trials).try_for_each(|_| {
            let sn = random_names(&mut rng);
            check_density_decomposition(guide, theta, &sn, &rv, 1e-12)
        });
        record("guide: density decomposition", trials, r);
    }
    let mut identity = true;
    guide.source().walk(&mut |c| {
        if let crate::syntax::Command::Sample { lambda, .. } = c {
            identity &= lambda.is_identity();
        }
    });
    if identity {
        let r = (0..trials).try_for_each(|_| {
            let sn = random_names(&mut rng);
            check_value_fn_connection(guide, plan, theta, &sn, 1e-12)
        });
        record("guide: value-function connection", trials, r);
    }
    if plan.check_r4_structural() {
        let r = (0..trials).try_for_each(|_| {
            let sn = random_names(&mut rng);
            match reparam_partial_grad(&reparam, &rv, theta, &sn) {
                Ok(g) if g.iter().all(|x| *x == 0.0) => Ok(()),
                Ok(g) => Err(Violation::new("constant reparameterised prior", format!("gradient {g:?}"))),
                Err(e) => Err(Violation::new("constant reparameterised prior", e.to_string())),
            }
        });
        record("reparameterised guide: θ-free prior factors", trials, r);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fuzz::{gen_program, universe_for, FuzzConfig};
    use crate::syntax::parse_program;

    #[test]
    fn fuzzed_programs_satisfy_execution_lemmas() {
        let cfg = FuzzConfig::default();
        for i in 0..50 {
            let mut rng = stream(3, "lemmas", i);
            let c = gen_program(&cfg, &mut rng);
            let u = Arc::new(universe_for(&c, &cfg, 3));
            let p = Program::new(c, u.clone()).unwrap();
            for _ in 0..5 {
                let s = random_state(&u, &mut rng);
                check_execution(&p, &s).unwrap();
                check_like_scaling(&p, &s, 3.0).unwrap();
            }
            let st = analyze_checked(&u, &p, Property::Differentiability).unwrap();
            check_dependency_soundness(&p, &st, 3, &mut rng).unwrap();
        }
    }

    #[test]
    fn quotients_detect_a_jump_but_not_a_kink() {
        let p = Program::standalone(parse_program("z := step(x); w := relu(x)").unwrap(), &[], 1);
        let u = p.universe().clone();
        let x = u.pvar_id("x").unwrap();
        let mut base = State::<f64>::zeros(&u);
        base[x] = 1e-7;
        let q = |v: &str| line_quotients(&p, u.pvar_id(v).unwrap(), &base, &[x], &[1.0]).unwrap();
        assert!(quotients_blow_up(&q("z")));
        assert!(!quotients_blow_up(&q("w")));
    }

    #[test]
    fn finite_differences_of_quadratic() {
        let g = fd_gradient(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, 0.0], 1e-5);
        assert!(max_relative_error(&g, &[4.0, 3.0]) < 1e-8);
    }
}
