//! Random programs and states for property tests.
//!
//! Programs always terminate: loops count a reserved variable up to a small
//! bound that the body never writes.

use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::interp::{State, Universe};
use crate::syntax::{BoolExpr, Command, DistExpr, Expr, Lambda, Name, NameExpr, Op, Var, OPERATORS};

#[derive(Clone, Debug)]
pub struct FuzzConfig {
    pub pvars: Vec<Arc<str>>,
    pub strings: Vec<Arc<str>>,
    pub max_depth: usize,
    pub max_seq: usize,
    pub expr_depth: usize,
    pub observe: bool,
    pub loops: bool,
    /// Operators drawn for expressions; all of them by default.
    pub ops: Vec<Op>,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig {
            pvars: ["a", "b", "c", "d"].into_iter().map(Arc::from).collect(),
            strings: ["p", "q"].into_iter().map(Arc::from).collect(),
            max_depth: 3,
            max_seq: 4,
            expr_depth: 3,
            observe: true,
            loops: true,
            ops: OPERATORS.iter().map(|o| o.op).collect(),
        }
    }
}

/// Universe for a generated program: the configured variables and strings
/// plus any loop counters the program uses.
pub fn universe_for(c: &Command, cfg: &FuzzConfig, name_bound: usize) -> Universe {
    let mut pvars: Vec<Arc<str>> = cfg.pvars.clone();
    pvars.extend(c.pvars());
    let mut strings: Vec<Arc<str>> = cfg.strings.clone();
    strings.extend(c.name_strings());
    pvars.sort();
    pvars.dedup();
    strings.sort();
    strings.dedup();
    Universe::new(pvars, strings, name_bound)
}

const TAME: &[f64] = &[-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 3.0];

pub struct Generator<'a, R: Rng> {
    cfg: &'a FuzzConfig,
    rng: &'a mut R,
    counters: usize,
}

impl<'a, R: Rng> Generator<'a, R> {
    pub fn new(cfg: &'a FuzzConfig, rng: &'a mut R) -> Self {
        Generator { cfg, rng, counters: 0 }
    }

    fn constant(&mut self) -> f64 {
        *TAME.choose(self.rng).expect("nonempty")
    }

    fn pvar(&mut self) -> Arc<str> {
        self.cfg.pvars.choose(self.rng).expect("at least one variable").clone()
    }

    fn name_var(&mut self) -> Var {
        let s = self.cfg.strings.choose(self.rng).expect("at least one string").clone();
        Var::Name(Name {
            string: s,
            index: self.rng.random_range(0..2),
        })
    }

    /// An expression; `bound` allows the lambda binder as a leaf.
    pub fn expr(&mut self, depth: usize, bound: bool) -> Expr {
        let leaf = depth == 0 || self.rng.random_bool(0.3);
        if leaf {
            return match self.rng.random_range(0..10) {
                0..=4 => Expr::Var(Var::PVar(self.pvar())),
                5..=6 => Expr::Const(self.constant()),
                7 if !self.cfg.strings.is_empty() => Expr::Var(self.name_var()),
                _ if bound => Expr::Bound,
                _ => Expr::Var(Var::PVar(self.pvar())),
            };
        }
        let op = *self.cfg.ops.choose(self.rng).expect("at least one operator");
        let arity = OPERATORS.iter().find(|o| o.op == op).expect("registered").arity;
        Expr::Op(op, (0..arity).map(|_| self.expr(depth - 1, bound)).collect())
    }

    fn bool_expr(&mut self) -> BoolExpr {
        let d = self.cfg.expr_depth.min(2);
        let lt = BoolExpr::Lt(self.expr(d, false), self.expr(d, false));
        match self.rng.random_range(0..6) {
            0 => BoolExpr::Not(Box::new(lt)),
            1 => BoolExpr::And(Box::new(lt), Box::new(BoolExpr::Lt(self.expr(d, false), self.expr(d, false)))),
            _ => lt,
        }
    }

    fn dist(&mut self) -> DistExpr {
        let d = self.cfg.expr_depth.min(2);
        DistExpr::normal(self.expr(d, false), self.expr(d, false))
    }

    fn name_expr(&mut self) -> NameExpr {
        let string = self.cfg.strings.choose(self.rng).expect("at least one string").clone();
        let index = if self.rng.random_bool(0.75) {
            Expr::Const(f64::from(self.rng.random_range(0..3u8)))
        } else {
            self.expr(1, false)
        };
        NameExpr { string, index }
    }

    fn lambda(&mut self) -> Lambda {
        if self.rng.random_bool(0.6) {
            Lambda::identity()
        } else {
            Lambda::new("y", self.expr(self.cfg.expr_depth.min(2), true))
        }
    }

    fn atomic(&mut self) -> Command {
        let sample_ok = !self.cfg.strings.is_empty();
        match self.rng.random_range(0..10) {
            0 => Command::Skip,
            1..=4 => Command::Assign(self.pvar(), self.expr(self.cfg.expr_depth, false)),
            5..=7 if sample_ok => Command::Sample {
                target: self.pvar(),
                name: self.name_expr(),
                dist: self.dist(),
                lambda: self.lambda(),
            },
            8 if self.cfg.observe => Command::Observe(self.dist(), self.constant()),
            _ => Command::Assign(self.pvar(), self.expr(self.cfg.expr_depth, false)),
        }
    }

    pub fn command(&mut self, depth: usize) -> Command {
        if depth == 0 {
            return self.atomic();
        }
        match self.rng.random_range(0..10) {
            0..=3 => {
                let n = self.rng.random_range(2..=self.cfg.max_seq.max(2));
                Command::seq((0..n).map(|_| self.command(depth - 1)).collect())
            }
            4..=5 => Command::if_else(self.bool_expr(), self.command(depth - 1), self.command(depth - 1)),
            6 if self.cfg.loops => self.bounded_loop(depth),
            _ => self.atomic(),
        }
    }

    /// `k := 0; while k < n [∧ k < e] { body; k := k + 1 }` with a fresh
    /// counter `k` that nothing else writes.
    fn bounded_loop(&mut self, depth: usize) -> Command {
        let k: Arc<str> = Arc::from(format!("k{}", self.counters));
        self.counters += 1;
        let kv = || Expr::Var(Var::PVar(k.clone()));
        let bound = f64::from(self.rng.random_range(0..4u8));
        let mut cond = BoolExpr::Lt(kv(), Expr::Const(bound));
        if self.rng.random_bool(0.5) {
            let extra = BoolExpr::Lt(kv(), self.expr(1, false));
            cond = BoolExpr::And(Box::new(cond), Box::new(extra));
        }
        let body = self.command(depth - 1);
        Command::seq(vec![
            Command::Assign(k.clone(), Expr::Const(0.0)),
            Command::while_loop(
                cond,
                Command::seq(vec![body, Command::Assign(k.clone(), Expr::add(kv(), Expr::Const(1.0)))]),
            ),
        ])
    }

    pub fn program(&mut self) -> Command {
        self.command(self.cfg.max_depth)
    }
}

/// Convenience wrapper around [`Generator::program`].
pub fn gen_program<R: Rng>(cfg: &FuzzConfig, rng: &mut R) -> Command {
    Generator::new(cfg, rng).program()
}

/// A random state: real variables from `N(0, 4)`, `like` positive, counters
/// small non-negative integers.
pub fn random_state<R: Rng + ?Sized>(u: &Universe, rng: &mut R) -> State {
    let mut s = State::<f64>::zeros(u);
    for id in 0..u.len() {
        s[id] = match u.var(id) {
            Var::Like => rng.random_range(0.1..2.0),
            Var::Pr(_) => rng.random_range(0.0..1.0),
            Var::Cnt(_) => f64::from(rng.random_range(0..2u8)),
            _ => 2.0 * rng.sample::<f64, _>(StandardNormal),
        };
    }
    s
}

/// `base` with every variable for which `keep` is false redrawn.
pub fn perturb_outside<R: Rng + ?Sized>(u: &Universe, base: &State, keep: impl Fn(usize) -> bool, rng: &mut R) -> State {
    let fresh = random_state(u, rng);
    let mut s = base.clone();
    for id in 0..u.len() {
        if !keep(id) {
            s[id] = fresh[id];
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::Program;
    use crate::rng::stream;

    #[test]
    fn generated_programs_terminate() {
        let cfg = FuzzConfig::default();
        for i in 0..200 {
            let mut rng = stream(7, "fuzz", i);
            let c = gen_program(&cfg, &mut rng);
            let u = Arc::new(universe_for(&c, &cfg, 3));
            let p = Program::new(c, u.clone()).unwrap().with_budget(100_000);
            assert!(p.exec(random_state(&u, &mut rng)).is_ok());
        }
    }
}
