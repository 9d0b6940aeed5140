//! Smoothness and dependency analysis by abstract interpretation, with an
//! interval pre-analysis that discharges operator side conditions.

mod domain;
mod interval;
mod varset;

use std::sync::Arc;

use serde::Serialize;

pub use domain::{abstract_exec, expr_smooth, AbstractState, AnalysisError};
pub use interval::{pre_analyze, pre_analyze_from, Interval, IntervalEnv, PreAnalysis, WIDEN_AFTER};
pub use varset::VarSet;

use crate::interp::{Universe, VarId};
use crate::syntax::{Command, Property, Var};

/// Pre-analysis followed by the abstract semantics.
pub fn analyze(u: &Universe, c: &Command, prop: Property) -> Result<AbstractState, AnalysisError> {
    abstract_exec(u, c, prop, &pre_analyze(c))
}

/// `p(like) ∩ ∩_μ p(pr_μ)`: inputs in which every density factor is smooth.
pub fn density_smooth_set(u: &Universe, s: &AbstractState) -> VarSet {
    let mut k = s.p[u.like_id()].clone();
    for slot in 0..u.num_names() {
        k.intersect_with(&s.p[u.pr_id(slot)]);
    }
    k
}

/// [`density_smooth_set`] restricted to θ and names.
pub fn smooth_name_param_set(u: &Universe, s: &AbstractState, theta: &[VarId]) -> VarSet {
    let mut scope = VarSet::from_ids(u.len(), theta.iter().copied());
    for slot in 0..u.num_names() {
        scope.insert(u.name_id(slot));
    }
    density_smooth_set(u, s).intersection(&scope)
}

/// Name strings all of whose indices lie in `set`.
pub fn strings_within(u: &Universe, set: &VarSet) -> Vec<Arc<str>> {
    (0..u.strings().len())
        .filter(|&s| u.slots_of_string(s).all(|slot| set.contains(u.name_id(slot))))
        .map(|s| u.strings()[s].clone())
        .collect()
}

/// A variable set rendered against its universe, choosing the shorter of
/// the two forms.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SetRepr {
    Only(Vec<String>),
    AllExcept(Vec<String>),
}

impl SetRepr {
    pub fn new(u: &Universe, s: &VarSet) -> SetRepr {
        let names = |s: &VarSet| s.vars(u).iter().map(Var::to_string).collect();
        if s.len() * 2 <= u.len() {
            SetRepr::Only(names(s))
        } else {
            SetRepr::AllExcept(names(&s.complement()))
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VarEntry {
    pub var: String,
    pub p: SetRepr,
    pub d: SetRepr,
}

#[derive(Clone, Debug, Serialize)]
pub struct AnalysisReport {
    pub property: Property,
    pub name_bound: usize,
    /// Program variables, `like`, and every auxiliary variable the program
    /// changes. All other variables have `p = Var` and `d = {v}`.
    pub variables: Vec<VarEntry>,
    #[serde(rename = "V")]
    pub v: SetRepr,
    pub smooth_params: Vec<String>,
    pub smooth_names: Vec<String>,
    pub nonsmooth_names: Vec<String>,
}

impl AnalysisReport {
    pub fn new(u: &Universe, s: &AbstractState, prop: Property, theta: &[VarId]) -> AnalysisReport {
        let n = u.len();
        let identity = |w: usize| s.p[w].is_full() && s.d[w] == VarSet::singleton(n, w);
        let variables = (0..n)
            .filter(|&w| {
                matches!(u.var(w), Var::PVar(_) | Var::Like) || !identity(w)
            })
            .map(|w| VarEntry {
                var: u.var(w).to_string(),
                p: SetRepr::new(u, &s.p[w]),
                d: SetRepr::new(u, &s.d[w]),
            })
            .collect();
        let k = smooth_name_param_set(u, s, theta);
        let smooth: Vec<Arc<str>> = strings_within(u, &k);
        AnalysisReport {
            property: prop,
            name_bound: u.name_bound(),
            variables,
            v: SetRepr::new(u, &s.v),
            smooth_params: theta
                .iter()
                .filter(|id| k.contains(**id))
                .map(|&id| u.var(id).to_string())
                .collect(),
            smooth_names: smooth.iter().map(|s| s.to_string()).collect(),
            nonsmooth_names: u
                .strings()
                .iter()
                .filter(|s| !smooth.contains(s))
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::{parse_expr, parse_program};

    fn universe(c: &Command) -> Universe {
        Universe::for_programs(&[c], &[], 2)
    }

    fn set(u: &Universe, vars: &[&str]) -> VarSet {
        VarSet::from_ids(u.len(), vars.iter().map(|v| u.pvar_id(v).unwrap()))
    }

    #[test]
    fn skip_is_identity() {
        let c = parse_program("x := x").unwrap();
        let u = universe(&c);
        let s = analyze(&u, &Command::Skip, Property::Differentiability);
        // `skip` has one program point; the universe may be any
        assert_eq!(s.unwrap(), AbstractState::identity(u.len()));
    }

    #[test]
    fn example_branch_program() {
        let c = parse_program("y := x * x; if x >= 0 { s := 1 } else { s := -1 }").unwrap();
        let u = universe(&c);
        let st = analyze(&u, &c, Property::Differentiability).unwrap();
        let x = set(&u, &["x"]);
        for v in ["s", "y"] {
            let id = u.pvar_id(v).unwrap();
            assert_eq!(st.p[id], x.complement(), "p({v})");
            assert_eq!(st.d[id], x, "d({v})");
        }
        assert_eq!(st.v, x);
    }

    #[test]
    fn relu_depends_on_property() {
        let e = parse_expr("relu(x)", None).unwrap();
        let u = Universe::new(["x".into(), "y".into()], [], 1);
        let env = IntervalEnv::top();
        let d = expr_smooth(&u, &e, Property::Differentiability, &env).unwrap();
        let l = expr_smooth(&u, &e, Property::LocalLipschitz, &env).unwrap();
        assert_eq!(d, set(&u, &["x"]).complement());
        assert!(l.is_full());
    }

    #[test]
    fn division_uses_intervals() {
        let e = parse_expr("1 / x", None).unwrap();
        let u = Universe::new(["x".into()], [], 1);
        let safe = IntervalEnv::top().with("x", Interval::new(1.0, 10.0));
        let unsafe_ = IntervalEnv::top().with("x", Interval::new(-1.0, 1.0));
        let p = Property::Differentiability;
        assert!(expr_smooth(&u, &e, p, &safe).unwrap().is_full());
        assert_eq!(expr_smooth(&u, &e, p, &unsafe_).unwrap(), set(&u, &["x"]).complement());
    }

    #[test]
    fn loops_exclude_condition_variables() {
        let c = parse_program("i := 0; while i < n { x := x + 1; i := i + 1 }").unwrap();
        let u = universe(&c);
        let st = analyze(&u, &c, Property::Differentiability).unwrap();
        let x = u.pvar_id("x").unwrap();
        assert!(!st.p[x].contains(u.pvar_id("n").unwrap()));
        assert!(st.d[x].contains(u.pvar_id("n").unwrap()));
        assert!(st.v.contains(u.pvar_id("n").unwrap()));
    }
}
