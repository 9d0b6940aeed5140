//! Abstract syntax, parser and printer for the probabilistic language.

mod ast;
mod ops;
mod parser;
mod pretty;

pub use ast::*;
pub use ops::{ArgClass, Op, OperatorDescriptor, Property, OPERATORS};
pub use parser::{
    parse_dist, parse_expr, parse_lambda, parse_program, parse_program_file, SyntaxError,
};
pub use pretty::{
    format_number, pretty, pretty_bool, pretty_dist, pretty_expr, pretty_file, pretty_lambda,
    pretty_name_expr,
};
