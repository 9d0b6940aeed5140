//! Interval pre-analysis over program variables.
//!
//! Forward abstract interpretation: join at `if`, widening to ±∞ at loop
//! heads after [`WIDEN_AFTER`] iterations, no refinement by branch
//! conditions. Reads of names and auxiliary variables are ⊤.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::interp::{DEFAULT_DIV, DEFAULT_LOG, DEFAULT_SQRT};
use crate::syntax::{Command, Expr, Op, Var};

pub const WIDEN_AFTER: usize = 3;

#[derive(Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl fmt::Debug for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

fn mul0(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b
    }
}

impl Interval {
    pub const TOP: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Interval {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            Interval::TOP
        } else {
            Interval { lo, hi }
        }
    }

    pub fn point(c: f64) -> Interval {
        Interval::new(c, c)
    }

    pub fn join(self, o: Interval) -> Interval {
        Interval::new(self.lo.min(o.lo), self.hi.max(o.hi))
    }

    /// `self ∇ next`: unstable bounds jump to infinity.
    pub fn widen(self, next: Interval) -> Interval {
        Interval {
            lo: if next.lo < self.lo { f64::NEG_INFINITY } else { self.lo },
            hi: if next.hi > self.hi { f64::INFINITY } else { self.hi },
        }
    }

    pub fn contains(self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn is_subset(self, o: Interval) -> bool {
        o.lo <= self.lo && self.hi <= o.hi
    }

    pub fn strictly_positive(self) -> bool {
        self.lo > 0.0
    }

    pub fn excludes_zero(self) -> bool {
        self.lo > 0.0 || self.hi < 0.0
    }

    fn add(self, o: Interval) -> Interval {
        Interval::new(self.lo + o.lo, self.hi + o.hi)
    }

    fn neg(self) -> Interval {
        Interval::new(-self.hi, -self.lo)
    }

    fn mul(self, o: Interval) -> Interval {
        let c = [
            mul0(self.lo, o.lo),
            mul0(self.lo, o.hi),
            mul0(self.hi, o.lo),
            mul0(self.hi, o.hi),
        ];
        Interval::new(
            c.iter().copied().fold(f64::INFINITY, f64::min),
            c.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    }

    fn div(self, o: Interval) -> Interval {
        if o.excludes_zero() {
            self.mul(Interval::new(1.0 / o.hi, 1.0 / o.lo))
        } else if o.lo == 0.0 && o.hi == 0.0 {
            Interval::point(DEFAULT_DIV)
        } else {
            Interval::TOP
        }
    }

    fn monotone(self, f: impl Fn(f64) -> f64) -> Interval {
        Interval::new(f(self.lo), f(self.hi))
    }
}

/// Program-variable intervals; unlisted variables are ⊤.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct IntervalEnv {
    map: BTreeMap<Arc<str>, Interval>,
}

impl IntervalEnv {
    pub fn top() -> IntervalEnv {
        IntervalEnv::default()
    }

    pub fn get(&self, x: &str) -> Interval {
        self.map.get(x).copied().unwrap_or(Interval::TOP)
    }

    pub fn set(&mut self, x: Arc<str>, i: Interval) {
        if i == Interval::TOP {
            self.map.remove(&x);
        } else {
            self.map.insert(x, i);
        }
    }

    pub fn with(mut self, x: &str, i: Interval) -> IntervalEnv {
        self.set(Arc::from(x), i);
        self
    }

    pub fn join(&self, o: &IntervalEnv) -> IntervalEnv {
        let mut out = IntervalEnv::default();
        for (k, a) in &self.map {
            if let Some(b) = o.map.get(k) {
                out.set(k.clone(), a.join(*b));
            }
        }
        out
    }

    fn widen(&self, next: &IntervalEnv) -> IntervalEnv {
        let mut out = IntervalEnv::default();
        for (k, a) in &self.map {
            out.set(k.clone(), a.widen(next.get(k)));
        }
        out
    }

    /// Pointwise inclusion: `self` is at least as precise as `o`.
    pub fn is_subset(&self, o: &IntervalEnv) -> bool {
        o.map.iter().all(|(k, b)| self.get(k).is_subset(*b))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Arc<str>, &Interval)> {
        self.map.iter()
    }

    /// Interval of `e`; the lambda binder evaluates to `bound`.
    pub fn eval(&self, e: &Expr, bound: Interval) -> Interval {
        match e {
            Expr::Var(Var::PVar(x)) => self.get(x),
            Expr::Var(_) => Interval::TOP,
            Expr::Bound => bound,
            Expr::Const(c) => Interval::point(*c),
            Expr::Op(op, args) => {
                let a = |i: usize| self.eval(&args[i], bound);
                match op {
                    Op::Add => a(0).add(a(1)),
                    Op::Sub => a(0).add(a(1).neg()),
                    Op::Mul => a(0).mul(a(1)),
                    Op::Div => a(0).div(a(1)),
                    Op::Neg => a(0).neg(),
                    Op::Exp => a(0).monotone(f64::exp),
                    Op::Log => {
                        let x = a(0);
                        if x.lo > 0.0 {
                            x.monotone(f64::ln)
                        } else if x.hi <= 0.0 {
                            Interval::point(DEFAULT_LOG)
                        } else {
                            Interval::new(f64::NEG_INFINITY, x.hi.ln().max(DEFAULT_LOG))
                        }
                    }
                    Op::Sqrt => {
                        let x = a(0);
                        if x.lo > 0.0 {
                            x.monotone(f64::sqrt)
                        } else if x.hi <= 0.0 {
                            Interval::point(DEFAULT_SQRT)
                        } else {
                            Interval::new(0.0, x.hi.sqrt().max(DEFAULT_SQRT))
                        }
                    }
                    Op::Relu => a(0).monotone(|v| v.max(0.0)),
                    Op::Floor => a(0).monotone(f64::floor),
                    Op::Step => {
                        let x = a(0);
                        if x.lo > 0.0 {
                            Interval::point(1.0)
                        } else if x.hi <= 0.0 {
                            Interval::point(0.0)
                        } else {
                            Interval::new(0.0, 1.0)
                        }
                    }
                    Op::NormalPdf => Interval::new(0.0, f64::INFINITY),
                    Op::XyRatio => Interval::new(-0.5, 0.5),
                }
            }
        }
    }
}

/// Entry environments of every command node, in pre-order (the order of
/// [`Command::walk`]), plus the exit environment.
#[derive(Clone, Debug, PartialEq)]
pub struct PreAnalysis {
    pub entries: Vec<IntervalEnv>,
    pub exit: IntervalEnv,
}

impl PreAnalysis {
    /// No information anywhere: every operator argument is potentially
    /// unsafe.
    pub fn trivial(c: &Command) -> PreAnalysis {
        let mut n = 0;
        c.walk(&mut |_| n += 1);
        PreAnalysis {
            entries: vec![IntervalEnv::top(); n],
            exit: IntervalEnv::top(),
        }
    }
}

/// Runs the pre-analysis from the ⊤ environment, which is sound for every
/// initial state.
pub fn pre_analyze(c: &Command) -> PreAnalysis {
    pre_analyze_from(c, &IntervalEnv::top())
}

pub fn pre_analyze_from(c: &Command, init: &IntervalEnv) -> PreAnalysis {
    let mut n = 0;
    c.walk(&mut |_| n += 1);
    let mut entries = vec![IntervalEnv::top(); n];
    let mut next = 0;
    let exit = step(c, init.clone(), &mut entries, &mut next);
    debug_assert_eq!(next, n);
    PreAnalysis { entries, exit }
}

fn step(c: &Command, env: IntervalEnv, entries: &mut [IntervalEnv], next: &mut usize) -> IntervalEnv {
    entries[*next] = env.clone();
    *next += 1;
    match c {
        Command::Skip | Command::Observe(..) => env,
        Command::Assign(x, e) => {
            let v = env.eval(e, Interval::TOP);
            let mut env = env;
            env.set(x.clone(), v);
            env
        }
        Command::Sample { target, lambda, .. } => {
            let v = env.eval(&lambda.body, Interval::TOP);
            let mut env = env;
            env.set(target.clone(), v);
            env
        }
        Command::Seq(cs) => cs.iter().fold(env, |env, c| step(c, env, entries, next)),
        Command::If(_, c1, c2) => {
            let a = step(c1, env.clone(), entries, next);
            let b = step(c2, env, entries, next);
            a.join(&b)
        }
        Command::While(_, body) => {
            let start = *next;
            let mut head = env;
            let mut iter = 0;
            loop {
                *next = start;
                let out = step(body, head.clone(), entries, next);
                let joined = head.join(&out);
                iter += 1;
                let new_head = if iter > WIDEN_AFTER {
                    head.widen(&joined)
                } else {
                    joined
                };
                if new_head == head {
                    break head;
                }
                head = new_head;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::parse_program;

    #[test]
    fn constants_propagate() {
        let pa = pre_analyze(&parse_program("x := 2; y := x * x").unwrap());
        assert_eq!(pa.exit.get("y"), Interval::point(4.0));
    }

    #[test]
    fn if_joins() {
        let pa = pre_analyze(&parse_program("if b < 0 { x := 1 } else { x := 3 }").unwrap());
        assert_eq!(pa.exit.get("x"), Interval::new(1.0, 3.0));
    }

    #[test]
    fn loops_widen() {
        let c = parse_program("while b < 1 { x := x + 1 }").unwrap();
        let pa = pre_analyze_from(&c, &IntervalEnv::top().with("x", Interval::point(0.0)));
        assert_eq!(pa.exit.get("x"), Interval::new(0.0, f64::INFINITY));
        // the body's entry sees the loop invariant
        assert_eq!(pa.entries[1].get("x"), Interval::new(0.0, f64::INFINITY));
    }

    #[test]
    fn default_values_are_covered() {
        let env = IntervalEnv::top().with("x", Interval::new(-1.0, 4.0));
        let i = env.eval(&crate::syntax::parse_expr("sqrt(x)", None).unwrap(), Interval::TOP);
        assert!(i.contains(1.0) && i.contains(2.0) && i.contains(0.0));
        let j = env.eval(&crate::syntax::parse_expr("1 / x", None).unwrap(), Interval::TOP);
        assert_eq!(j, Interval::TOP);
    }
}
