//! Smoothness analysis and selective reparameterisation for a small
//! probabilistic programming language.
//!
//! The pipeline: [`syntax`] parses programs, [`interp`] gives them a density
//! semantics, [`analysis`] infers in which variables densities are smooth,
//! [`select`] uses that to choose which sample commands [`reparam`] may
//! rewrite, and [`estimate`] runs the resulting gradient estimator.

pub mod analysis;
pub mod density;
pub mod estimate;
pub mod fuzz;
pub mod interp;
pub mod lemmas;
pub mod reparam;
pub mod rng;
pub mod select;
pub mod syntax;

pub use interp::{
    Dual, ExecError, ExecResult, NameValuation, Program, State, ThetaValuation, Universe, VarId,
};
pub use syntax::{parse_program, parse_program_file, pretty, Command, Expr, Name, Property, Var};
