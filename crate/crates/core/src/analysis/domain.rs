//! The abstract domain of smoothness/dependency triples `(p, d, V)` and the
//! abstract semantics of commands.

use std::collections::BTreeSet;

use thiserror::Error;

use super::interval::{Interval, IntervalEnv, PreAnalysis};
use super::varset::VarSet;
use crate::interp::{Universe, VarId};
use crate::syntax::{ArgClass, BoolExpr, Command, DistExpr, Expr, Name, NameExpr, Op, Property, Var};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("variable `{0}` is outside the analysed universe")]
    UnknownVar(Var),
    #[error("name string `{0}` is outside the analysed universe")]
    UnknownString(String),
    #[error("pre-analysis covers {have} program points, program has {want}")]
    PreAnalysisMismatch { have: usize, want: usize },
    #[error("well-formedness violated at `{var}`: {detail}")]
    IllFormed { var: Var, detail: &'static str },
}

/// `(p, d, V)`: for each output variable `v`, `p(v)` holds input variables
/// in which `v` is smooth, `d(v)` the inputs `v` may depend on, and `V` the
/// inputs that may influence termination.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AbstractState {
    pub p: Vec<VarSet>,
    pub d: Vec<VarSet>,
    pub v: VarSet,
}

impl AbstractState {
    /// `⟦skip⟧♯ = (λv.Var, λv.{v}, ∅)`.
    pub fn identity(n: usize) -> AbstractState {
        AbstractState {
            p: vec![VarSet::full(n); n],
            d: (0..n).map(|i| VarSet::singleton(n, i)).collect(),
            v: VarSet::empty(n),
        }
    }

    /// Least element for the loop fixpoint: `(λv.Var, λv.∅, ∅)`.
    fn bottom(n: usize) -> AbstractState {
        AbstractState {
            p: vec![VarSet::full(n); n],
            d: vec![VarSet::empty(n); n],
            v: VarSet::empty(n),
        }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// `p_∩(X) = ∩_{u∈X} p(u)`, which is `Var` for empty `X`.
    fn p_cap(&self, x: &VarSet) -> VarSet {
        let mut out = VarSet::full(self.len());
        for u in x.iter() {
            out.intersect_with(&self.p[u]);
        }
        out
    }

    /// `d_∪(X) = ∪_{u∈X} d(u)`.
    fn d_cup(&self, x: &VarSet) -> VarSet {
        let mut out = VarSet::empty(self.len());
        for u in x.iter() {
            out.union_with(&self.d[u]);
        }
        out
    }

    /// Sequential composition: `self` runs first, then `next`.
    pub fn then(&self, next: &AbstractState) -> AbstractState {
        let n = self.len();
        let mut p = Vec::with_capacity(n);
        let mut d = Vec::with_capacity(n);
        for w in 0..n {
            // (V ∪ p_∩(d'(w))ᶜ ∪ d_∪(p'(w)ᶜ))ᶜ
            let mut bad = self.v.clone();
            bad.union_with(&self.p_cap(&next.d[w]).complement());
            bad.union_with(&self.d_cup(&next.p[w].complement()));
            p.push(bad.complement());
            let mut dw = self.v.clone();
            dw.union_with(&self.d_cup(&next.d[w]));
            d.push(dw);
        }
        let mut v = self.v.clone();
        v.union_with(&self.d_cup(&next.v));
        AbstractState { p, d, v }
    }

    /// Checks `p(v) ⊇ d(v)ᶜ` and `d(v) ⊇ V` for every `v`.
    pub fn check_well_formed(&self, u: &Universe) -> Result<(), AnalysisError> {
        for w in 0..self.len() {
            if !self.d[w].complement().is_subset(&self.p[w]) {
                return Err(AnalysisError::IllFormed {
                    var: u.var(w),
                    detail: "p(v) does not contain the complement of d(v)",
                });
            }
            if !self.v.is_subset(&self.d[w]) {
                return Err(AnalysisError::IllFormed {
                    var: u.var(w),
                    detail: "d(v) does not contain V",
                });
            }
        }
        Ok(())
    }
}

/// Whether an operator argument meets its class's side condition under the
/// interval environment.
fn arg_is_safe(class: ArgClass, range: Interval) -> bool {
    match class {
        ArgClass::Smooth => true,
        ArgClass::NeedsPositive => range.strictly_positive(),
        ArgClass::NeedsNonzero => range.excludes_zero(),
        ArgClass::Nonsmooth => false,
    }
}

pub(crate) struct Analyzer<'a> {
    pub u: &'a Universe,
    pub prop: Property,
    pub pre: &'a PreAnalysis,
    next: usize,
}

impl<'a> Analyzer<'a> {
    fn n(&self) -> usize {
        self.u.len()
    }

    fn id(&self, v: &Var) -> Result<VarId, AnalysisError> {
        self.u.id(v).ok_or_else(|| AnalysisError::UnknownVar(v.clone()))
    }

    fn fv_set(&self, vars: &BTreeSet<Var>) -> Result<VarSet, AnalysisError> {
        let mut s = VarSet::empty(self.n());
        for v in vars {
            s.insert(self.id(v)?);
        }
        Ok(s)
    }

    /// `⟦e⟧♯`: variables in which `e` is smooth, given interval facts.
    pub fn expr(&self, e: &Expr, env: &IntervalEnv) -> Result<VarSet, AnalysisError> {
        match e {
            Expr::Var(_) | Expr::Const(_) | Expr::Bound => Ok(VarSet::full(self.n())),
            Expr::Op(op, args) => self.op_expr(*op, args, env),
        }
    }

    fn op_expr(&self, op: Op, args: &[Expr], env: &IntervalEnv) -> Result<VarSet, AnalysisError> {
        let mut out = VarSet::full(self.n());
        for (i, a) in args.iter().enumerate() {
            out.intersect_with(&self.expr(a, env)?);
            if !arg_is_safe(op.arg_class(self.prop, i), env.eval(a, Interval::TOP)) {
                out.subtract(&self.fv_set(&a.fv())?);
            }
        }
        Ok(out)
    }

    fn bool_fv(&self, b: &BoolExpr) -> Result<VarSet, AnalysisError> {
        self.fv_set(&b.fv())
    }

    fn assign(&self, target: VarId, p: VarSet, d: VarSet) -> AbstractState {
        let mut s = AbstractState::identity(self.n());
        s.p[target] = p;
        s.d[target] = d;
        s
    }

    fn pdf_expr(x: Expr, d: &DistExpr) -> Expr {
        Expr::Op(Op::NormalPdf, vec![x, d.mean.clone(), d.variance.clone()])
    }

    fn name_slots(&self, name: &NameExpr) -> Result<NameTarget, AnalysisError> {
        let string = self
            .u
            .string_id(&name.string)
            .ok_or_else(|| AnalysisError::UnknownString(name.string.to_string()))?;
        Ok(match crate::density::constant_slot(self.u, name) {
            Some(slot) => NameTarget::Fixed(slot),
            None => NameTarget::Weak(self.u.slots_of_string(string).collect()),
        })
    }

    pub fn command(&mut self, c: &Command) -> Result<AbstractState, AnalysisError> {
        let node = self.next;
        self.next += 1;
        let pre = self.pre;
        let env = &pre.entries[node];
        let n = self.n();
        Ok(match c {
            Command::Skip => AbstractState::identity(n),
            Command::Assign(x, e) => {
                let target = self.id(&Var::PVar(x.clone()))?;
                self.assign(target, self.expr(e, env)?, self.fv_set(&e.fv())?)
            }
            Command::Observe(dist, r) => {
                let like = Expr::Var(Var::Like);
                let e = Expr::mul(like, Self::pdf_expr(Expr::Const(*r), dist));
                let mut d = self.fv_set(&dist.fv())?;
                d.insert(self.u.like_id());
                self.assign(self.u.like_id(), self.expr(&e, env)?, d)
            }
            Command::Seq(cs) => {
                let mut acc = self.command(&cs[0])?;
                for c in &cs[1..] {
                    let next = self.command(c)?;
                    acc = acc.then(&next);
                }
                acc
            }
            Command::If(b, c1, c2) => {
                let fb = self.bool_fv(b)?;
                let s1 = self.command(c1)?;
                let s2 = self.command(c2)?;
                let not_fb = fb.complement();
                AbstractState {
                    p: (0..n)
                        .map(|w| not_fb.intersection(&s1.p[w]).intersection(&s2.p[w]))
                        .collect(),
                    d: (0..n).map(|w| fb.union(&s1.d[w]).union(&s2.d[w])).collect(),
                    v: fb.union(&s1.v).union(&s2.v),
                }
            }
            Command::While(b, body) => {
                let fb = self.bool_fv(b)?;
                let s = self.command(body)?;
                loop_fixpoint(&fb, &s)
            }
            Command::Sample {
                target,
                name,
                dist,
                lambda,
            } => {
                let x = self.id(&Var::PVar(target.clone()))?;
                let dist_fv = self.fv_set(&dist.fv())?;
                let mut s = AbstractState::identity(n);
                match self.name_slots(name)? {
                    NameTarget::Fixed(slot) => {
                        let mu = Var::Name(self.u.name_at(slot));
                        let body = lambda.apply(&Expr::Var(mu.clone()));
                        let p_val = self.expr(&body, env)?;
                        let d_val = self.fv_set(&body.fv())?;
                        let pr = Self::pdf_expr(Expr::Var(mu), dist);
                        let val = self.u.val_id(slot);
                        let cnt = self.u.cnt_id(slot);
                        s.p[x] = p_val.clone();
                        s.d[x] = d_val.clone();
                        s.p[val] = p_val;
                        s.d[val] = d_val;
                        s.p[self.u.pr_id(slot)] = self.expr(&pr, env)?;
                        let mut d_pr = dist_fv;
                        d_pr.insert(self.u.name_id(slot));
                        s.d[self.u.pr_id(slot)] = d_pr;
                        s.p[cnt] = self.expr(&cnt_plus_one(self.u.name_at(slot)), env)?;
                    }
                    NameTarget::Weak(slots) => {
                        let fe = self.fv_set(&name.fv())?;
                        let not_fe = fe.complement();
                        let mut p_x = not_fe.clone();
                        let mut d_x = fe.clone();
                        for &slot in &slots {
                            let mu = Var::Name(self.u.name_at(slot));
                            let body = lambda.apply(&Expr::Var(mu.clone()));
                            let p_body = self.expr(&body, env)?;
                            let d_body = self.fv_set(&body.fv())?;
                            p_x.intersect_with(&p_body);
                            d_x.union_with(&d_body);

                            let val = self.u.val_id(slot);
                            s.p[val] = not_fe.intersection(&p_body);
                            let mut d_val = fe.union(&d_body);
                            d_val.insert(val);
                            s.d[val] = d_val;

                            let pr = self.u.pr_id(slot);
                            let pr_e = Self::pdf_expr(Expr::Var(mu), dist);
                            s.p[pr] = not_fe.intersection(&self.expr(&pr_e, env)?);
                            let mut d_pr = fe.union(&dist_fv);
                            d_pr.insert(pr);
                            d_pr.insert(self.u.name_id(slot));
                            s.d[pr] = d_pr;

                            let cnt = self.u.cnt_id(slot);
                            s.p[cnt] = not_fe
                                .intersection(&self.expr(&cnt_plus_one(self.u.name_at(slot)), env)?);
                            let mut d_cnt = fe.clone();
                            d_cnt.insert(cnt);
                            s.d[cnt] = d_cnt;
                        }
                        s.p[x] = p_x;
                        s.d[x] = d_x;
                    }
                }
                s
            }
        })
    }
}

enum NameTarget {
    Fixed(usize),
    Weak(Vec<usize>),
}

fn cnt_plus_one(mu: Name) -> Expr {
    Expr::add(Expr::Var(Var::Cnt(mu)), Expr::Const(1.0))
}

/// Least fixed point of one loop unrolling, by Kleene iteration from
/// `(λv.Var, λv.∅, ∅)`.
fn loop_fixpoint(fb: &VarSet, body: &AbstractState) -> AbstractState {
    let n = body.len();
    let not_fb = fb.complement();
    let mut cur = AbstractState::bottom(n);
    loop {
        let mut p = Vec::with_capacity(n);
        let mut d = Vec::with_capacity(n);
        for w in 0..n {
            let mut bad = body.v.clone();
            bad.union_with(&body.p_cap(&cur.d[w]).complement());
            bad.union_with(&body.d_cup(&cur.p[w].complement()));
            p.push(not_fb.intersection(&bad.complement()));
            let mut dw = fb.union(&body.v);
            dw.union_with(&body.d_cup(&cur.d[w]));
            dw.insert(w);
            d.push(dw);
        }
        let v = fb.union(&body.v).union(&body.d_cup(&cur.v));
        let next = AbstractState { p, d, v };
        if next == cur {
            return cur;
        }
        cur = next;
    }
}

/// `⟦c⟧♯` for the given property, using `pre` for operator side conditions.
pub fn abstract_exec(
    u: &Universe,
    c: &Command,
    prop: Property,
    pre: &PreAnalysis,
) -> Result<AbstractState, AnalysisError> {
    let mut want = 0;
    c.walk(&mut |_| want += 1);
    if pre.entries.len() != want {
        return Err(AnalysisError::PreAnalysisMismatch {
            have: pre.entries.len(),
            want,
        });
    }
    let mut a = Analyzer {
        u,
        prop,
        pre,
        next: 0,
    };
    let s = a.command(c)?;
    s.check_well_formed(u)?;
    Ok(s)
}

/// `⟦e⟧♯` for a standalone expression.
pub fn expr_smooth(
    u: &Universe,
    e: &Expr,
    prop: Property,
    env: &IntervalEnv,
) -> Result<VarSet, AnalysisError> {
    let pre = PreAnalysis {
        entries: vec![],
        exit: env.clone(),
    };
    let a = Analyzer {
        u,
        prop,
        pre: &pre,
        next: 0,
    };
    a.expr(e, env)
}
