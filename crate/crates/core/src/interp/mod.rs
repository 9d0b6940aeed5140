//! Density semantics, sampling semantics and dual-number evaluation.

mod exec;
mod scalar;
mod state;
mod universe;

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

pub(crate) use exec::{compile_expr, eval_c};
pub use exec::{create_name_index, CompileError, ExecError, ExecResult, DEFAULT_BUDGET};
pub use scalar::{
    normal_log_pdf, normal_pdf, xyratio, Dual, Scalar, DEFAULT_DIV, DEFAULT_LOG, DEFAULT_SQRT,
    DEFAULT_VARIANCE,
};
pub use state::{initial_state, NameValuation, State, ThetaError, ThetaValuation};
pub use universe::{Universe, VarId, DEFAULT_NAME_BOUND};

use crate::syntax::{Command, DistExpr, Expr, Lambda, Name, NameExpr};
use exec::{CCommand, Machine};

/// A command compiled against a universe, with its step budget.
#[derive(Clone, Debug)]
pub struct Program {
    universe: Arc<Universe>,
    source: Command,
    code: CCommand,
    budget: u64,
}

impl Program {
    pub fn new(source: Command, universe: Arc<Universe>) -> Result<Program, CompileError> {
        let code = exec::compile(&universe, &source)?;
        Ok(Program {
            universe,
            source,
            code,
            budget: DEFAULT_BUDGET,
        })
    }

    /// Compiles `source` against its own universe.
    pub fn standalone(source: Command, params: &[Arc<str>], name_bound: usize) -> Program {
        let u = Universe::for_programs(&[&source], params, name_bound);
        Program::new(source, Arc::new(u)).expect("a program's own universe covers it")
    }

    pub fn with_budget(mut self, budget: u64) -> Program {
        assert!(budget > 0, "budget must be positive");
        self.budget = budget;
        self
    }

    pub fn universe(&self) -> &Arc<Universe> {
        &self.universe
    }

    pub fn source(&self) -> &Command {
        &self.source
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    /// `⟦c⟧σ`, with divergence approximated by the step budget.
    pub fn exec<T: Scalar>(&self, mut state: State<T>) -> ExecResult<T> {
        let mut m = Machine {
            u: &self.universe,
            budget: self.budget,
            steps: 0,
            sampler: None,
        };
        match m.run(&self.code, &mut state) {
            Ok(()) => ExecResult::Ok(state),
            Err(ExecError::Diverged { budget }) => ExecResult::Diverged { budget },
            Err(ExecError::DoubleSample(_)) => unreachable!("density semantics never samples"),
        }
    }

    /// Runs in the sampling semantics: each executed sample command first
    /// draws `σ(μ) ~ d`, then proceeds as in the density semantics.
    pub fn exec_with_sampler<T: Scalar>(
        &self,
        mut state: State<T>,
        sampler: &mut dyn FnMut(usize, f64, f64) -> f64,
    ) -> Result<State<T>, ExecError> {
        let mut m = Machine {
            u: &self.universe,
            budget: self.budget,
            steps: 0,
            sampler: Some(sampler),
        };
        m.run(&self.code, &mut state)?;
        Ok(state)
    }

    /// Draws `σ̂_n ~ p_{c,σθ}`: names the program never samples keep an
    /// independent standard-normal draw.
    pub fn exec_sampling<R: Rng + ?Sized>(
        &self,
        theta: &ThetaValuation,
        rng: &mut R,
    ) -> Result<NameValuation, ExecError> {
        let u = &*self.universe;
        let sn = NameValuation(
            (0..u.num_names())
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect(),
        );
        let state = initial_state(u, &theta.ids, &theta.values, &sn);
        let mut draw = |_slot: usize, mean: f64, variance: f64| {
            let z: f64 = rng.sample(StandardNormal);
            mean + variance.sqrt() * z
        };
        let out = self.exec_with_sampler(state, &mut draw)?;
        Ok(NameValuation(
            (0..u.num_names()).map(|s| out[u.name_id(s)]).collect(),
        ))
    }
}

/// Randomised falsifier for double sampling: runs `c` from `trials` random
/// states and reports whether some `cnt_μ` grew by more than one.
pub fn check_no_double_sampling<R: Rng + ?Sized>(
    p: &Program,
    trials: usize,
    rng: &mut R,
) -> Result<bool, ExecError> {
    let u = &**p.universe();
    for _ in 0..trials {
        let mut s = State::<f64>::zeros(u);
        for id in 0..u.len() {
            s[id] = rng.sample(StandardNormal);
        }
        for slot in 0..u.num_names() {
            s[u.cnt_id(slot)] = 0.0;
        }
        match p.exec(s) {
            ExecResult::Ok(out) => {
                if (0..u.num_names()).any(|slot| out[u.cnt_id(slot)] > 1.0) {
                    return Ok(false);
                }
            }
            ExecResult::Diverged { budget } => return Err(ExecError::Diverged { budget }),
        }
    }
    Ok(true)
}

pub fn eval_expr<T: Scalar>(u: &Universe, e: &Expr, s: &State<T>) -> Result<T, CompileError> {
    Ok(eval_c(&compile_expr(u, e)?, s, None))
}

/// Compiles a lambda body once and returns `r ↦ ⟦body[r/y]⟧s`.
pub fn lambda_fn<'a>(
    u: &Universe,
    l: &Lambda,
    s: &'a State,
) -> Result<impl Fn(f64) -> f64 + 'a, CompileError> {
    let body = compile_expr(u, &l.body)?;
    Ok(move |r: f64| eval_c(&body, s, Some(&r)))
}

pub fn eval_name<T: Scalar>(u: &Universe, n: &NameExpr, s: &State<T>) -> Result<Name, CompileError> {
    let string = u
        .string_id(&n.string)
        .ok_or_else(|| CompileError::UnknownString(n.string.clone()))?;
    let r = eval_expr(u, &n.index, s)?.value();
    Ok(u.name_at(u.name_slot(string, create_name_index(r, u.name_bound()))))
}

/// A normal distribution with its variance already defaulted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalParams {
    pub mean: f64,
    pub variance: f64,
}

impl NormalParams {
    pub fn pdf(&self, r: f64) -> f64 {
        normal_pdf(r, self.mean, self.variance)
    }
}

pub fn eval_dist(u: &Universe, d: &DistExpr, s: &State) -> Result<NormalParams, CompileError> {
    let mean = eval_expr(u, &d.mean, s)?;
    let v = eval_expr(u, &d.variance, s)?;
    Ok(NormalParams {
        mean,
        variance: if v > 0.0 { v } else { DEFAULT_VARIANCE },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::{parse_expr, parse_program, Var};

    fn prog(src: &str) -> Program {
        Program::standalone(parse_program(src).unwrap(), &[], DEFAULT_NAME_BOUND)
    }

    #[test]
    fn two_samples_example() {
        let p = prog(
            "x := sam(name(\"a\", 0), N(-3, 1), λy. y); y := sam(name(\"b\", 0), N(5, 1), λy. y)",
        );
        let u = p.universe().clone();
        let mut s = State::zeros(&u);
        let a = Name::new("a", 0);
        let b = Name::new("b", 0);
        s.set(&u, &Var::Name(a.clone()), 2.0);
        s.set(&u, &Var::Name(b.clone()), 4.0);
        let out = p.exec(s).ok().unwrap();
        assert_eq!(*out.get(&u, &Var::pvar("x")).unwrap(), 2.0);
        assert_eq!(*out.get(&u, &Var::pvar("y")).unwrap(), 4.0);
        assert_eq!(*out.get(&u, &Var::Cnt(a.clone())).unwrap(), 1.0);
        assert_eq!(*out.get(&u, &Var::Cnt(b.clone())).unwrap(), 1.0);
        assert_eq!(*out.get(&u, &Var::Pr(a)).unwrap(), normal_pdf(2.0, -3.0, 1.0));
        assert_eq!(*out.get(&u, &Var::Pr(b)).unwrap(), normal_pdf(4.0, 5.0, 1.0));
    }

    #[test]
    fn observe_multiplies_likelihood() {
        let p = prog("obs(N(1, 1), 0)");
        let u = p.universe().clone();
        let mut s = State::zeros(&u);
        s[u.like_id()] = 1.0;
        let out = p.exec(s).ok().unwrap();
        assert!((out[u.like_id()] - 0.241970724519143).abs() < 1e-12);
    }

    #[test]
    fn infinite_loop_diverges() {
        let p = prog("while true { skip }").with_budget(1000);
        assert_eq!(
            p.exec(State::<f64>::zeros(p.universe())),
            ExecResult::Diverged { budget: 1000 }
        );
    }

    #[test]
    fn name_clamping() {
        let u = Universe::new(["x".into()], ["z".into()], 16);
        let s = State::<f64>::zeros(&u);
        let name = |i: &str| {
            let n = NameExpr {
                string: "z".into(),
                index: parse_expr(i, None).unwrap(),
            };
            eval_name(&u, &n, &s).unwrap().index
        };
        assert_eq!(name("3.2"), 3);
        assert_eq!(name("-1"), 0);
        assert_eq!(name("99"), 15);
    }

    #[test]
    fn expression_defaults() {
        let u = Universe::new(["x".into(), "y".into()], [], 16);
        let mut s = State::zeros(&u);
        s.set(&u, &Var::pvar("x"), 2.0);
        s.set(&u, &Var::pvar("y"), -4.0);
        let ev = |src: &str| eval_expr(&u, &parse_expr(src, None).unwrap(), &s).unwrap();
        assert_eq!(ev("x + 1"), 3.0);
        assert_eq!(ev("sqrt(y)"), 1.0);
        assert_eq!(ev("log(0)"), -745.0);
        let d = eval_dist(&u, &crate::syntax::parse_dist("N(x, y)").unwrap(), &s).unwrap();
        assert_eq!(d, NormalParams { mean: 2.0, variance: 1.0 });
    }

    #[test]
    fn double_sampling_is_detected() {
        let mut rng = crate::rng::stream(1, "test", 0);
        let bad = prog(
            "x := sam(name(\"a\", 0), N(0, 1), λy. y); x := sam(name(\"a\", 0), N(0, 1), λy. y)",
        );
        assert!(!check_no_double_sampling(&bad, 5, &mut rng).unwrap());
        assert!(check_no_double_sampling(&prog("skip"), 5, &mut rng).unwrap());
        let theta = ThetaValuation::new(bad.universe(), &[], &[]).unwrap();
        assert!(matches!(
            bad.exec_sampling(&theta, &mut rng),
            Err(ExecError::DoubleSample(_))
        ));
    }
}
