//! Canonical printer. Output re-parses to a structurally equal AST.

use std::fmt::Write;

use super::ast::*;
use super::ops::Op;

pub fn pretty(c: &Command) -> String {
    let mut out = String::new();
    write_command(&mut out, c, 0);
    out
}

pub fn pretty_file(f: &ProgramFile) -> String {
    let mut out = String::new();
    if !f.params.is_empty() {
        let ps: Vec<&str> = f.params.iter().map(|p| &**p).collect();
        let _ = writeln!(out, "#params: {}", ps.join(", "));
    }
    write_command(&mut out, &f.body, 0);
    out.push('\n');
    out
}

pub fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:?}")
    }
}

fn indent(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str("    ");
    }
}

fn write_block(out: &mut String, c: &Command, level: usize) {
    out.push_str("{\n");
    indent(out, level + 1);
    write_command(out, c, level + 1);
    out.push('\n');
    indent(out, level);
    out.push('}');
}

fn write_command(out: &mut String, c: &Command, level: usize) {
    match c {
        Command::Skip => out.push_str("skip"),
        Command::Assign(x, e) => {
            let _ = write!(out, "{x} := {}", pretty_expr(e, None));
        }
        Command::Seq(cs) => {
            for (i, c) in cs.iter().enumerate() {
                if i > 0 {
                    out.push_str(";\n");
                    indent(out, level);
                }
                write_command(out, c, level);
            }
        }
        Command::If(b, c1, c2) => {
            let _ = write!(out, "if {} ", pretty_bool(b));
            write_block(out, c1, level);
            out.push_str(" else ");
            write_block(out, c2, level);
        }
        Command::While(b, body) => {
            let _ = write!(out, "while {} ", pretty_bool(b));
            write_block(out, body, level);
        }
        Command::Sample {
            target,
            name,
            dist,
            lambda,
        } => {
            let _ = write!(
                out,
                "{target} := sam({}, {}, {})",
                pretty_name_expr(name),
                pretty_dist(dist),
                pretty_lambda(lambda)
            );
        }
        Command::Observe(d, r) => {
            let _ = write!(out, "obs({}, {})", pretty_dist(d), format_number(*r));
        }
    }
}

pub fn pretty_name_expr(n: &NameExpr) -> String {
    format!("name({:?}, {})", &*n.string, pretty_expr(&n.index, None))
}

pub fn pretty_dist(d: &DistExpr) -> String {
    format!(
        "N({}, {})",
        pretty_expr(&d.mean, None),
        pretty_expr(&d.variance, None)
    )
}

/// Prints `λy. body`, renaming the binder if its display name clashes with
/// a free program variable of the body.
pub fn pretty_lambda(l: &Lambda) -> String {
    let fv = l.body.fv();
    let mut binder = l.binder.to_string();
    while fv.contains(&Var::pvar(&binder)) {
        binder.push('\'');
    }
    format!("λ{binder}. {}", pretty_expr(&l.body, Some(&binder)))
}

fn pretty_name(n: &Name) -> String {
    format!("name({:?}, {})", &*n.string, n.index)
}

fn pretty_var(v: &Var) -> String {
    match v {
        Var::PVar(x) => x.to_string(),
        Var::Name(n) => pretty_name(n),
        Var::Like => "$like".into(),
        Var::Pr(n) => format!("$pr({})", pretty_name(n)),
        Var::Val(n) => format!("$val({})", pretty_name(n)),
        Var::Cnt(n) => format!("$cnt({})", pretty_name(n)),
    }
}

pub fn pretty_expr(e: &Expr, binder: Option<&str>) -> String {
    let mut out = String::new();
    write_expr(&mut out, e, binder.unwrap_or("y"));
    out
}

fn needs_parens(child: &Expr, parent: Op, right: bool) -> bool {
    match child {
        Expr::Op(op, _) if op.is_infix() => {
            let (c, p) = (op.precedence(), parent.precedence());
            c < p || (right && c == p)
        }
        _ => false,
    }
}

fn write_expr(out: &mut String, e: &Expr, binder: &str) {
    match e {
        Expr::Var(v) => out.push_str(&pretty_var(v)),
        Expr::Bound => out.push_str(binder),
        Expr::Const(c) => out.push_str(&format_number(*c)),
        Expr::Op(Op::Neg, args) => {
            out.push('-');
            let simple = match &args[0] {
                Expr::Var(_) | Expr::Bound => true,
                Expr::Op(op, _) => !op.is_infix(),
                Expr::Const(_) => false,
            };
            if simple {
                write_expr(out, &args[0], binder);
            } else {
                out.push('(');
                write_expr(out, &args[0], binder);
                out.push(')');
            }
        }
        Expr::Op(op, args) if op.is_infix() => {
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    let _ = write!(out, " {} ", op.name());
                }
                if needs_parens(a, *op, i > 0) {
                    out.push('(');
                    write_expr(out, a, binder);
                    out.push(')');
                } else {
                    write_expr(out, a, binder);
                }
            }
        }
        Expr::Op(op, args) => {
            out.push_str(op.name());
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_expr(out, a, binder);
            }
            out.push(')');
        }
    }
}

pub fn pretty_bool(b: &BoolExpr) -> String {
    let mut out = String::new();
    write_bool(&mut out, b, false);
    out
}

/// `atomic` requests a form that can stand as an operand of `&&` or `!`.
fn write_bool(out: &mut String, b: &BoolExpr, atomic: bool) {
    match b {
        BoolExpr::True => out.push_str("true"),
        BoolExpr::Lt(l, r) => {
            if atomic {
                out.push('(');
            }
            let _ = write!(out, "{} < {}", pretty_expr(l, None), pretty_expr(r, None));
            if atomic {
                out.push(')');
            }
        }
        BoolExpr::And(l, r) => {
            if atomic {
                out.push('(');
            }
            // left-associative: a left conjunction needs no parentheses
            write_bool(out, l, !matches!(**l, BoolExpr::And(..)));
            out.push_str(" && ");
            write_bool(out, r, true);
            if atomic {
                out.push(')');
            }
        }
        BoolExpr::Not(inner) => {
            out.push('!');
            write_bool(out, inner, true);
        }
    }
}
