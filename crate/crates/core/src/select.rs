//! Choosing which sample commands of a guide to reparameterise.
//!
//! Starting from the strings whose names every density factor is smooth in,
//! the algorithm transforms the guide, re-analyses it, and drops one string
//! at a time until the reparameterised guide is smooth in θ.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::analysis::{
    abstract_exec, density_smooth_set, pre_analyze, strings_within, AbstractState, AnalysisError, AnalysisReport,
    VarSet,
};
use crate::interp::{check_no_double_sampling, CompileError, ExecError, Program, Universe, VarId, DEFAULT_NAME_BOUND};
use crate::reparam::{transform, ReparamPlan};
use crate::rng::stream;
use crate::syntax::{Command, Property};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectError {
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error("{program}: {source}")]
    Exec {
        program: &'static str,
        #[source]
        source: ExecError,
    },
    #[error("{0} may sample a name twice")]
    DoubleSample(&'static str),
    #[error("re-analysis of the selected plan no longer passes {0}")]
    NotReconfirmed(&'static str),
}

#[derive(Clone, Copy, Debug)]
pub struct SelectConfig {
    pub name_bound: usize,
    /// Random runs of each program through the double-sampling falsifier;
    /// 0 disables it.
    pub falsifier_trials: usize,
    pub seed: u64,
}

impl Default for SelectConfig {
    fn default() -> Self {
        SelectConfig {
            name_bound: DEFAULT_NAME_BOUND,
            falsifier_trials: 64,
            seed: 0,
        }
    }
}

/// Removal order: lexicographically smallest string first.
pub fn greedy_shrink_order(s: &BTreeSet<Arc<str>>) -> Vec<Arc<str>> {
    s.iter().cloned().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Iteration {
    pub selected: Vec<String>,
    pub passed: bool,
    /// Parameters in which the reparameterised guide was not shown smooth.
    pub failing_params: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SelectionReport {
    pub property: Property,
    pub selected: Vec<String>,
    pub analysis_calls: usize,
    /// Whether the initial candidate set succeeded without shrinking.
    pub first_iteration_success: bool,
    /// Parameters missing from the smoothness set of the model and guide
    /// densities; empty iff that check passed.
    pub density_check_failing: Vec<String>,
    pub iterations: Vec<Iteration>,
    pub constant_output_rules: bool,
    pub model: AnalysisReport,
    pub guide: AnalysisReport,
}

#[derive(Clone, Debug)]
pub enum SelectionResult {
    Plan {
        plan: ReparamPlan,
        report: SelectionReport,
    },
    Infeasible {
        reason: String,
        report: SelectionReport,
    },
}

impl SelectionResult {
    pub fn report(&self) -> &SelectionReport {
        match self {
            SelectionResult::Plan { report, .. } | SelectionResult::Infeasible { report, .. } => report,
        }
    }

    pub fn plan(&self) -> Option<&ReparamPlan> {
        match self {
            SelectionResult::Plan { plan, .. } => Some(plan),
            SelectionResult::Infeasible { .. } => None,
        }
    }
}

/// `K = p_m(like) ∩ ∩_μ p_m(pr_μ) ∩ ∩_μ p_g(pr_μ)`.
pub fn smooth_density_set(u: &Universe, model: &AbstractState, guide: &AbstractState) -> VarSet {
    let mut k = density_smooth_set(u, model);
    for slot in 0..u.num_names() {
        k.intersect_with(&guide.p[u.pr_id(slot)]);
    }
    k
}

/// `∩_μ p(pr_μ) ∩ ∩_μ p(val_μ)` of the reparameterised guide.
pub fn reparam_smooth_set(u: &Universe, guide: &AbstractState) -> VarSet {
    let mut k = VarSet::full(u.len());
    for slot in 0..u.num_names() {
        k.intersect_with(&guide.p[u.pr_id(slot)]);
        k.intersect_with(&guide.p[u.val_id(slot)]);
    }
    k
}

fn missing(u: &Universe, theta: &[VarId], set: &VarSet) -> Vec<String> {
    theta
        .iter()
        .filter(|id| !set.contains(**id))
        .map(|&id| u.var(id).to_string())
        .collect()
}

fn names(s: &BTreeSet<Arc<str>>) -> Vec<String> {
    s.iter().map(|s| s.to_string()).collect()
}

fn falsify(u: &Arc<Universe>, c: &Command, which: &'static str, cfg: &SelectConfig) -> Result<(), SelectError> {
    if cfg.falsifier_trials == 0 {
        return Ok(());
    }
    let p = Program::new(c.clone(), u.clone())?;
    let mut rng = stream(cfg.seed, which, 0);
    match check_no_double_sampling(&p, cfg.falsifier_trials, &mut rng) {
        Ok(true) => Ok(()),
        Ok(false) => Err(SelectError::DoubleSample(which)),
        Err(source) => Err(SelectError::Exec { program: which, source }),
    }
}

/// Counts calls to the analysis.
struct Analyzer<'a> {
    u: &'a Universe,
    prop: Property,
    calls: usize,
}

impl Analyzer<'_> {
    fn run(&mut self, c: &Command) -> Result<AbstractState, AnalysisError> {
        self.calls += 1;
        abstract_exec(self.u, c, self.prop, &pre_analyze(c))
    }
}

/// Runs the selection algorithm for parameters `params`.
pub fn select_variables(
    model: &Command,
    guide: &Command,
    params: &[Arc<str>],
    plan0: &ReparamPlan,
    prop: Property,
    cfg: &SelectConfig,
) -> Result<SelectionResult, SelectError> {
    let u = Arc::new(Universe::for_programs(&[model, guide], params, cfg.name_bound));
    let theta: Vec<VarId> = params.iter().filter_map(|p| u.pvar_id(p)).collect();
    falsify(&u, model, "model", cfg)?;
    falsify(&u, guide, "guide", cfg)?;

    let mut an = Analyzer {
        u: &u,
        prop,
        calls: 0,
    };
    let sm = an.run(model)?;
    let sg = an.run(guide)?;
    let k = smooth_density_set(&u, &sm, &sg);
    let mut report = SelectionReport {
        property: prop,
        selected: Vec::new(),
        analysis_calls: 0,
        first_iteration_success: false,
        density_check_failing: missing(&u, &theta, &k),
        iterations: Vec::new(),
        constant_output_rules: false,
        model: AnalysisReport::new(&u, &sm, prop, &theta),
        guide: AnalysisReport::new(&u, &sg, prop, &theta),
    };
    if !report.density_check_failing.is_empty() {
        report.analysis_calls = an.calls;
        return Ok(SelectionResult::Infeasible {
            reason: format!(
                "the analysis cannot show the model and guide densities smooth in {}, for any plan",
                report.density_check_failing.join(", ")
            ),
            report,
        });
    }

    let candidates: BTreeSet<Arc<str>> = strings_within(&u, &k).into_iter().collect();
    let mut s = plan0.selected.among(&candidates);
    let order = greedy_shrink_order(&s);
    let mut next_removal = order.iter();
    let plan = loop {
        let plan = plan0.restrict(&s);
        if s.is_empty() {
            // ⟨c_g⟩π is c_g itself, whose analysis is already at hand
            let failing = missing(&u, &theta, &reparam_smooth_set(&u, &sg));
            report.iterations.push(Iteration {
                selected: Vec::new(),
                passed: failing.is_empty(),
                failing_params: failing.clone(),
            });
            if !failing.is_empty() {
                report.analysis_calls = an.calls;
                return Ok(SelectionResult::Infeasible {
                    reason: format!("the guide's values are not shown smooth in {}", failing.join(", ")),
                    report,
                });
            }
            break plan;
        }
        let transformed = transform(guide, &plan);
        falsify(&u, &transformed, "reparameterised guide", cfg)?;
        let st = an.run(&transformed)?;
        let failing = missing(&u, &theta, &reparam_smooth_set(&u, &st));
        report.iterations.push(Iteration {
            selected: names(&s),
            passed: failing.is_empty(),
            failing_params: failing.clone(),
        });
        if failing.is_empty() {
            break plan;
        }
        let drop = next_removal.next().expect("removal order covers the initial set");
        s.remove(drop);
    };

    report.analysis_calls = an.calls;
    report.first_iteration_success = report.iterations.len() == 1 && !s.is_empty() || order.is_empty();
    report.selected = names(&s);
    report.constant_output_rules = plan.check_r4_structural();
    reconfirm(&u, model, guide, &plan, prop, &theta)?;
    Ok(SelectionResult::Plan { plan, report })
}

/// Re-runs the analysis from scratch and re-checks both conditions for the
/// returned plan.
fn reconfirm(
    u: &Universe,
    model: &Command,
    guide: &Command,
    plan: &ReparamPlan,
    prop: Property,
    theta: &[VarId],
) -> Result<(), SelectError> {
    let run = |c: &Command| abstract_exec(u, c, prop, &pre_analyze(c));
    let k = smooth_density_set(u, &run(model)?, &run(guide)?);
    if !missing(u, theta, &k).is_empty() {
        return Err(SelectError::NotReconfirmed("the density check"));
    }
    if !plan.rv(u).iter().all(|&slot| k.contains(u.name_id(slot))) {
        return Err(SelectError::NotReconfirmed("the name-set check"));
    }
    let t = run(&transform(guide, plan))?;
    if !missing(u, theta, &reparam_smooth_set(u, &t)).is_empty() {
        return Err(SelectError::NotReconfirmed("the reparameterised-guide check"));
    }
    if !plan.check_r4_structural() {
        return Err(SelectError::NotReconfirmed("the constant-output check"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::parse_program_file;

    fn splitting_normal() -> (Command, Command, Vec<Arc<str>>) {
        let m = parse_program_file(include_str!("../../../programs/splitting_normal_model.ppl")).unwrap();
        let g = parse_program_file(include_str!("../../../programs/splitting_normal_guide.ppl")).unwrap();
        (m.body, g.body, g.params)
    }

    #[test]
    fn shrink_order() {
        let s: BTreeSet<Arc<str>> = ["b", "a", "c"].into_iter().map(Arc::from).collect();
        assert_eq!(greedy_shrink_order(&s), vec![Arc::from("a"), Arc::from("b"), Arc::from("c")]);
        assert!(greedy_shrink_order(&BTreeSet::new()).is_empty());
    }

    #[test]
    fn splitting_normal_selects_z1() {
        let (m, g, params) = splitting_normal();
        let r = select_variables(
            &m,
            &g,
            &params,
            &ReparamPlan::default_plan(),
            Property::Differentiability,
            &SelectConfig::default(),
        )
        .unwrap();
        let SelectionResult::Plan { plan, report } = r else {
            panic!("expected a plan")
        };
        assert_eq!(report.selected, vec!["z1".to_string()]);
        assert_eq!(report.analysis_calls, 3);
        assert!(report.first_iteration_success);
        assert_eq!(plan, ReparamPlan::default_plan().restrict(&BTreeSet::from([Arc::from("z1")])));
    }

    #[test]
    fn relu_mean_in_guide_is_infeasible() {
        let m = crate::syntax::parse_program("x := sam(\"a\", N(0, 1), λy. y)").unwrap();
        let g = crate::syntax::parse_program("x := sam(\"a\", N(relu(t), 1), λy. y)").unwrap();
        let r = select_variables(
            &m,
            &g,
            &[Arc::from("t")],
            &ReparamPlan::default_plan(),
            Property::Differentiability,
            &SelectConfig::default(),
        )
        .unwrap();
        assert!(matches!(r, SelectionResult::Infeasible { .. }));
        assert_eq!(r.report().analysis_calls, 2);
        let lip = select_variables(
            &m,
            &g,
            &[Arc::from("t")],
            &ReparamPlan::default_plan(),
            Property::LocalLipschitz,
            &SelectConfig::default(),
        )
        .unwrap();
        assert!(lip.plan().is_some());
    }

    #[test]
    fn shrinking_drops_strings_until_guide_is_smooth() {
        use crate::reparam::{Rule, Selection};
        use crate::syntax::{parse_dist, parse_lambda, parse_program, DistKind};
        let m = parse_program("v := sam(\"b\", N(0, 1), λy. y); w := sam(\"a\", N(0, 1), λy. y)").unwrap();
        let g = parse_program("x := 0; v := sam(\"b\", N(t, 1), λy. y); x := t; w := sam(\"a\", N(t, 1), λy. y)")
            .unwrap();
        // a rule whose transport is nonsmooth in whatever `x` holds
        let plan0 = ReparamPlan {
            selected: Selection::All,
            rules: [(
                DistKind::Normal,
                Rule::Custom {
                    dist: parse_dist("N(0, 1)").unwrap(),
                    transport: parse_lambda("λy. y + relu(x)").unwrap(),
                },
            )]
            .into(),
        };
        let r = select_variables(&m, &g, &[Arc::from("t")], &plan0, Property::Differentiability, &SelectConfig::default())
            .unwrap();
        let report = r.report();
        assert_eq!(report.selected, vec!["b".to_string()]);
        assert_eq!(report.analysis_calls, 4);
        assert!(!report.first_iteration_success);
        assert_eq!(report.iterations[0].failing_params, vec!["t".to_string()]);
    }
}
