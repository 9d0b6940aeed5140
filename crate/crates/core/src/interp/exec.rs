//! Compilation of ASTs against a [`Universe`] and the density semantics.

use std::sync::Arc;

use thiserror::Error;

use super::scalar::{Scalar, DEFAULT_VARIANCE};
use super::state::State;
use super::universe::{Universe, VarId};
use crate::syntax::{BoolExpr, Command, DistExpr, Expr, Name, NameExpr, Op, Var};

pub const DEFAULT_BUDGET: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompileError {
    #[error("variable `{0}` is outside the universe")]
    UnknownVar(Var),
    #[error("name string `{0}` is outside the universe")]
    UnknownString(Arc<str>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("step budget of {budget} exhausted")]
    Diverged { budget: u64 },
    #[error("name {0} sampled twice")]
    DoubleSample(Name),
}

/// Outcome of running a command in the density semantics.
#[derive(Debug, Clone, PartialEq)]
pub enum ExecResult<T = f64> {
    Ok(State<T>),
    Diverged { budget: u64 },
}

impl<T> ExecResult<T> {
    pub fn ok(self) -> Option<State<T>> {
        match self {
            ExecResult::Ok(s) => Some(s),
            ExecResult::Diverged { .. } => None,
        }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, ExecResult::Ok(_))
    }
}

#[derive(Clone, Debug)]
pub(crate) enum CExpr {
    Var(VarId),
    Bound,
    Const(f64),
    Op(Op, Vec<CExpr>),
}

#[derive(Clone, Debug)]
pub(crate) enum CBool {
    True,
    Lt(CExpr, CExpr),
    And(Box<CBool>, Box<CBool>),
    Not(Box<CBool>),
}

#[derive(Clone, Debug)]
pub(crate) enum CName {
    Fixed(usize),
    Dynamic { string: usize, index: CExpr },
}

#[derive(Clone, Debug)]
pub(crate) struct CDist {
    mean: CExpr,
    variance: CExpr,
}

#[derive(Clone, Debug)]
pub(crate) enum CCommand {
    Skip,
    Assign(VarId, CExpr),
    Seq(Vec<CCommand>),
    If(CBool, Box<CCommand>, Box<CCommand>),
    While(CBool, Box<CCommand>),
    Sample {
        target: VarId,
        name: CName,
        dist: CDist,
        lambda: CExpr,
    },
    Observe(CDist, f64),
}

/// `create_name(α, r)`: the index is `floor(r)` clamped into `[0, N-1]`.
pub fn create_name_index(r: f64, name_bound: usize) -> usize {
    let top = (name_bound - 1) as f64;
    let i = r.floor().max(0.0).min(top);
    if i.is_nan() {
        0
    } else {
        i as usize
    }
}

pub(crate) fn compile_expr(u: &Universe, e: &Expr) -> Result<CExpr, CompileError> {
    Ok(match e {
        Expr::Var(v) => CExpr::Var(u.id(v).ok_or_else(|| CompileError::UnknownVar(v.clone()))?),
        Expr::Bound => CExpr::Bound,
        Expr::Const(c) => CExpr::Const(*c),
        Expr::Op(op, args) => CExpr::Op(
            *op,
            args.iter()
                .map(|a| compile_expr(u, a))
                .collect::<Result<_, _>>()?,
        ),
    })
}

fn compile_bool(u: &Universe, b: &BoolExpr) -> Result<CBool, CompileError> {
    Ok(match b {
        BoolExpr::True => CBool::True,
        BoolExpr::Lt(l, r) => CBool::Lt(compile_expr(u, l)?, compile_expr(u, r)?),
        BoolExpr::And(l, r) => CBool::And(Box::new(compile_bool(u, l)?), Box::new(compile_bool(u, r)?)),
        BoolExpr::Not(i) => CBool::Not(Box::new(compile_bool(u, i)?)),
    })
}

pub(crate) fn compile_name(u: &Universe, n: &NameExpr) -> Result<CName, CompileError> {
    let string = u
        .string_id(&n.string)
        .ok_or_else(|| CompileError::UnknownString(n.string.clone()))?;
    let index = compile_expr(u, &n.index)?;
    if n.constant_index().is_some() {
        let r = eval_c::<f64>(&index, &State { values: vec![] }, None);
        return Ok(CName::Fixed(
            u.name_slot(string, create_name_index(r, u.name_bound())),
        ));
    }
    Ok(CName::Dynamic { string, index })
}

fn compile_dist(u: &Universe, d: &DistExpr) -> Result<CDist, CompileError> {
    Ok(CDist {
        mean: compile_expr(u, &d.mean)?,
        variance: compile_expr(u, &d.variance)?,
    })
}

pub(crate) fn compile(u: &Universe, c: &Command) -> Result<CCommand, CompileError> {
    Ok(match c {
        Command::Skip => CCommand::Skip,
        Command::Assign(x, e) => CCommand::Assign(
            u.pvar_id(x)
                .ok_or_else(|| CompileError::UnknownVar(Var::PVar(x.clone())))?,
            compile_expr(u, e)?,
        ),
        Command::Seq(cs) => CCommand::Seq(cs.iter().map(|c| compile(u, c)).collect::<Result<_, _>>()?),
        Command::If(b, c1, c2) => CCommand::If(
            compile_bool(u, b)?,
            Box::new(compile(u, c1)?),
            Box::new(compile(u, c2)?),
        ),
        Command::While(b, body) => CCommand::While(compile_bool(u, b)?, Box::new(compile(u, body)?)),
        Command::Sample {
            target,
            name,
            dist,
            lambda,
        } => CCommand::Sample {
            target: u
                .pvar_id(target)
                .ok_or_else(|| CompileError::UnknownVar(Var::PVar(target.clone())))?,
            name: compile_name(u, name)?,
            dist: compile_dist(u, dist)?,
            lambda: compile_expr(u, &lambda.body)?,
        },
        Command::Observe(d, r) => CCommand::Observe(compile_dist(u, d)?, *r),
    })
}

pub(crate) fn eval_c<T: Scalar>(e: &CExpr, s: &State<T>, bound: Option<&T>) -> T {
    match e {
        CExpr::Var(id) => s[*id].clone(),
        CExpr::Bound => bound.cloned().expect("lambda binder outside a lambda"),
        CExpr::Const(c) => T::constant(*c),
        CExpr::Op(op, args) => {
            let a = |i: usize| eval_c(&args[i], s, bound);
            match op {
                Op::Add => a(0).add(&a(1)),
                Op::Sub => a(0).sub(&a(1)),
                Op::Mul => a(0).mul(&a(1)),
                Op::Div => a(0).div(&a(1)),
                Op::Neg => a(0).neg(),
                Op::Exp => a(0).exp(),
                Op::Log => a(0).ln(),
                Op::Sqrt => a(0).sqrt(),
                Op::Relu => a(0).relu(),
                Op::NormalPdf => T::normal_pdf(&a(0), &a(1), &a(2)),
                Op::Floor => a(0).floor(),
                Op::Step => a(0).step(),
                Op::XyRatio => T::xyratio(&a(0), &a(1)),
            }
        }
    }
}

fn eval_bool<T: Scalar>(b: &CBool, s: &State<T>) -> bool {
    match b {
        CBool::True => true,
        CBool::Lt(l, r) => eval_c(l, s, None).value() < eval_c(r, s, None).value(),
        CBool::And(l, r) => eval_bool(l, s) && eval_bool(r, s),
        CBool::Not(i) => !eval_bool(i, s),
    }
}

fn eval_cname<T: Scalar>(u: &Universe, n: &CName, s: &State<T>) -> usize {
    match n {
        CName::Fixed(slot) => *slot,
        CName::Dynamic { string, index } => {
            let r = eval_c(index, s, None).value();
            u.name_slot(*string, create_name_index(r, u.name_bound()))
        }
    }
}

/// Draws a value for a name slot given the (defaulted) mean and variance.
pub(crate) type Sampler<'a> = dyn FnMut(usize, f64, f64) -> f64 + 'a;

pub(crate) struct Machine<'a, 'b> {
    pub u: &'a Universe,
    pub budget: u64,
    pub steps: u64,
    pub sampler: Option<&'a mut Sampler<'b>>,
}

impl Machine<'_, '_> {
    fn tick(&mut self) -> Result<(), ExecError> {
        self.steps += 1;
        if self.steps > self.budget {
            Err(ExecError::Diverged {
                budget: self.budget,
            })
        } else {
            Ok(())
        }
    }

    pub fn run<T: Scalar>(&mut self, c: &CCommand, s: &mut State<T>) -> Result<(), ExecError> {
        self.tick()?;
        match c {
            CCommand::Skip => {}
            CCommand::Assign(x, e) => {
                let v = eval_c(e, s, None);
                s[*x] = v;
            }
            CCommand::Seq(cs) => {
                for c in cs {
                    self.run(c, s)?;
                }
            }
            CCommand::If(b, c1, c2) => {
                if eval_bool(b, s) {
                    self.run(c1, s)?
                } else {
                    self.run(c2, s)?
                }
            }
            CCommand::While(b, body) => {
                while eval_bool(b, s) {
                    self.run(body, s)?;
                    self.tick()?;
                }
            }
            CCommand::Sample {
                target,
                name,
                dist,
                lambda,
            } => {
                let u = self.u;
                let slot = eval_cname(u, name, s);
                let mean = eval_c(&dist.mean, s, None);
                let variance = eval_c(&dist.variance, s, None);
                if let Some(sampler) = self.sampler.as_mut() {
                    if s[u.cnt_id(slot)].value() >= 1.0 {
                        return Err(ExecError::DoubleSample(u.name_at(slot)));
                    }
                    let v = variance.value();
                    let v = if v > 0.0 { v } else { DEFAULT_VARIANCE };
                    s[u.name_id(slot)] = T::constant(sampler(slot, mean.value(), v));
                }
                let mu = s[u.name_id(slot)].clone();
                let r = eval_c(lambda, s, Some(&mu));
                s[u.pr_id(slot)] = T::normal_pdf(&mu, &mean, &variance);
                let cnt = s[u.cnt_id(slot)].add(&T::constant(1.0));
                s[u.cnt_id(slot)] = cnt;
                s[u.val_id(slot)] = r.clone();
                s[*target] = r;
            }
            CCommand::Observe(d, r) => {
                let mean = eval_c(&d.mean, s, None);
                let variance = eval_c(&d.variance, s, None);
                let p = T::normal_pdf(&T::constant(*r), &mean, &variance);
                let like = s[self.u.like_id()].mul(&p);
                s[self.u.like_id()] = like;
            }
        }
        Ok(())
    }
}
