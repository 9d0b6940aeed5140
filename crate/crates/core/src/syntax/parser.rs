//! Recursive-descent parser for the surface syntax.
//!
//! ```text
//! #params: θ1, θ2
//! x1 := sam(name("z1", 0), N(θ1, 1), λy. y);
//! if x1 > 0 { obs(N(1, 1), 0) } else { skip }
//! ```
//!
//! `"z1"` abbreviates `name("z1", 0)`; `>`, `<=`, `>=`, `||` and `false`
//! desugar into the core boolean forms. Comments run from `//` to the end of
//! the line.

use std::sync::Arc;

use thiserror::Error;

use super::ast::*;
use super::ops::Op;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("syntax error at {line}:{col}: expected {expected}")]
pub struct SyntaxError {
    pub line: usize,
    pub col: usize,
    pub expected: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Str(String),
    Aux(String),
    Lambda,
    Assign,
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Semi,
    Dot,
    Plus,
    Minus,
    Star,
    Slash,
    Lt,
    Gt,
    Le,
    Ge,
    AndAnd,
    OrOr,
    Bang,
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, SyntaxError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let err = |line, col, what: &str| SyntaxError {
        line,
        col,
        expected: what.to_string(),
    };
    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
        let advance = |n: usize, i: &mut usize, col: &mut usize| {
            *i += n;
            *col += n;
        };
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            advance(1, &mut i, &mut col);
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        let tok = match two.as_str() {
            ":=" => Some(Tok::Assign),
            "<=" => Some(Tok::Le),
            ">=" => Some(Tok::Ge),
            "&&" => Some(Tok::AndAnd),
            "||" => Some(Tok::OrOr),
            _ => None,
        };
        if let Some(tok) = tok {
            out.push(Token { tok, line: tl, col: tc });
            advance(2, &mut i, &mut col);
            continue;
        }
        let single = match c {
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '{' => Some(Tok::LBrace),
            '}' => Some(Tok::RBrace),
            ',' => Some(Tok::Comma),
            ';' => Some(Tok::Semi),
            '.' if !chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()) => Some(Tok::Dot),
            '+' => Some(Tok::Plus),
            '-' => Some(Tok::Minus),
            '*' | '×' => Some(Tok::Star),
            '/' => Some(Tok::Slash),
            '<' => Some(Tok::Lt),
            '>' => Some(Tok::Gt),
            '!' | '¬' => Some(Tok::Bang),
            '∧' => Some(Tok::AndAnd),
            'λ' | '\\' => Some(Tok::Lambda),
            _ => None,
        };
        if let Some(tok) = single {
            out.push(Token { tok, line: tl, col: tc });
            advance(1, &mut i, &mut col);
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            col += i - start;
            let v: f64 = text.parse().map_err(|_| err(tl, tc, "a number"))?;
            out.push(Token {
                tok: Tok::Num(v),
                line: tl,
                col: tc,
            });
            continue;
        }
        if c == '"' {
            let mut s = String::new();
            i += 1;
            col += 1;
            loop {
                match chars.get(i) {
                    None | Some('\n') => return Err(err(tl, tc, "closing `\"`")),
                    Some('"') => {
                        i += 1;
                        col += 1;
                        break;
                    }
                    Some('\\') if i + 1 < chars.len() => {
                        s.push(chars[i + 1]);
                        i += 2;
                        col += 2;
                    }
                    Some(&ch) => {
                        s.push(ch);
                        i += 1;
                        col += 1;
                    }
                }
            }
            out.push(Token {
                tok: Tok::Str(s),
                line: tl,
                col: tc,
            });
            continue;
        }
        let ident_start = |c: char| c == '_' || (c.is_alphabetic() && c != 'λ');
        let ident_cont = |c: char| c == '_' || c == '\'' || (c.is_alphanumeric() && c != 'λ');
        if c == '$' || ident_start(c) {
            let start = i;
            i += 1;
            while i < chars.len() && ident_cont(chars[i]) {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            col += i - start;
            let tok = match text.strip_prefix('$') {
                Some("") => return Err(err(tl, tc, "an auxiliary variable after `$`")),
                Some(aux) => Tok::Aux(aux.to_string()),
                None => Tok::Ident(text),
            };
            out.push(Token { tok, line: tl, col: tc });
            continue;
        }
        return Err(err(tl, tc, "a token"));
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

const KEYWORDS: &[&str] = &[
    "skip", "if", "else", "while", "sam", "obs", "name", "N", "Normal", "true", "false", "lambda",
];

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    binder: Option<Arc<str>>,
}

type PResult<T> = Result<T, SyntaxError>;

impl Parser {
    fn peek(&self) -> &Tok {
        self.peek_at(0)
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.pos + k).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn bump(&mut self) -> Tok {
        let t = self.peek().clone();
        self.pos += 1;
        t
    }

    fn error<T>(&self, expected: &str) -> PResult<T> {
        let t = &self.toks[self.pos.min(self.toks.len() - 1)];
        Err(SyntaxError {
            line: t.line,
            col: t.col,
            expected: expected.to_string(),
        })
    }

    fn expect(&mut self, tok: Tok, what: &str) -> PResult<()> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            self.error(what)
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<()> {
        if self.is_kw(kw) {
            self.bump();
            Ok(())
        } else {
            self.error(&format!("`{kw}`"))
        }
    }

    fn ident(&mut self, what: &str) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                self.bump();
                Ok(s)
            }
            _ => self.error(what),
        }
    }

    fn command(&mut self) -> PResult<Command> {
        let mut cmds = vec![self.statement()?];
        while *self.peek() == Tok::Semi {
            self.bump();
            if matches!(self.peek(), Tok::RBrace | Tok::Eof) {
                break;
            }
            cmds.push(self.statement()?);
        }
        Ok(Command::seq(cmds))
    }

    fn block(&mut self) -> PResult<Command> {
        self.expect(Tok::LBrace, "`{`")?;
        if *self.peek() == Tok::RBrace {
            self.bump();
            return Ok(Command::Skip);
        }
        let c = self.command()?;
        self.expect(Tok::RBrace, "`}` or `;`")?;
        Ok(c)
    }

    fn statement(&mut self) -> PResult<Command> {
        if self.is_kw("skip") {
            self.bump();
            return Ok(Command::Skip);
        }
        if self.is_kw("if") {
            self.bump();
            let b = self.bool_expr()?;
            let then = self.block()?;
            let els = if self.is_kw("else") {
                self.bump();
                if self.is_kw("if") {
                    self.statement()?
                } else {
                    self.block()?
                }
            } else {
                Command::Skip
            };
            return Ok(Command::if_else(b, then, els));
        }
        if self.is_kw("while") {
            self.bump();
            let b = self.bool_expr()?;
            let body = self.block()?;
            return Ok(Command::while_loop(b, body));
        }
        if self.is_kw("obs") {
            self.bump();
            self.expect(Tok::LParen, "`(`")?;
            let d = self.dist()?;
            self.expect(Tok::Comma, "`,`")?;
            let r = self.signed_number()?;
            self.expect(Tok::RParen, "`)`")?;
            return Ok(Command::Observe(d, r));
        }
        let x = self.ident("a statement")?;
        self.expect(Tok::Assign, "`:=`")?;
        if self.is_kw("sam") {
            self.bump();
            self.expect(Tok::LParen, "`(`")?;
            let n = self.name_expr()?;
            self.expect(Tok::Comma, "`,`")?;
            let d = self.dist()?;
            self.expect(Tok::Comma, "`,` followed by a lambda")?;
            let l = self.lambda()?;
            self.expect(Tok::RParen, "`)`")?;
            return Ok(Command::sample(&x, n, d, l));
        }
        let e = self.expr()?;
        Ok(Command::assign(&x, e))
    }

    fn signed_number(&mut self) -> PResult<f64> {
        let neg = if *self.peek() == Tok::Minus {
            self.bump();
            true
        } else {
            false
        };
        match self.bump() {
            Tok::Num(v) => Ok(if neg { -v } else { v }),
            _ => {
                self.pos -= 1;
                self.error("a number")
            }
        }
    }

    fn name_expr(&mut self) -> PResult<NameExpr> {
        if let Tok::Str(s) = self.peek().clone() {
            self.bump();
            return Ok(NameExpr::constant(&s, 0));
        }
        self.expect_kw("name")?;
        self.expect(Tok::LParen, "`(`")?;
        let s = match self.bump() {
            Tok::Str(s) => s,
            _ => {
                self.pos -= 1;
                return self.error("a string literal");
            }
        };
        self.expect(Tok::Comma, "`,`")?;
        let index = self.expr()?;
        self.expect(Tok::RParen, "`)`")?;
        Ok(NameExpr {
            string: Arc::from(s.as_str()),
            index,
        })
    }

    fn dist(&mut self) -> PResult<DistExpr> {
        if self.is_kw("N") || self.is_kw("Normal") {
            self.bump();
        } else {
            return self.error("a distribution `N(mean, variance)`");
        }
        self.expect(Tok::LParen, "`(`")?;
        let mean = self.expr()?;
        self.expect(Tok::Comma, "`,`")?;
        let variance = self.expr()?;
        self.expect(Tok::RParen, "`)`")?;
        Ok(DistExpr::normal(mean, variance))
    }

    fn lambda(&mut self) -> PResult<Lambda> {
        if *self.peek() == Tok::Lambda || self.is_kw("lambda") {
            self.bump();
        } else {
            return self.error("a lambda `λy. e`");
        }
        let y = self.ident("a binder")?;
        self.expect(Tok::Dot, "`.`")?;
        let binder: Arc<str> = Arc::from(y.as_str());
        let saved = self.binder.replace(binder.clone());
        let body = self.expr();
        self.binder = saved;
        Ok(Lambda { binder, body: body? })
    }

    fn bool_expr(&mut self) -> PResult<BoolExpr> {
        let mut lhs = self.bool_and()?;
        while *self.peek() == Tok::OrOr {
            self.bump();
            let rhs = self.bool_and()?;
            let not = |b| BoolExpr::Not(Box::new(b));
            lhs = not(BoolExpr::And(Box::new(not(lhs)), Box::new(not(rhs))));
        }
        Ok(lhs)
    }

    fn bool_and(&mut self) -> PResult<BoolExpr> {
        let mut lhs = self.bool_not()?;
        while *self.peek() == Tok::AndAnd {
            self.bump();
            let rhs = self.bool_not()?;
            lhs = BoolExpr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn bool_not(&mut self) -> PResult<BoolExpr> {
        if *self.peek() == Tok::Bang {
            self.bump();
            return Ok(BoolExpr::Not(Box::new(self.bool_not()?)));
        }
        self.bool_atom()
    }

    fn bool_atom(&mut self) -> PResult<BoolExpr> {
        if self.is_kw("true") {
            self.bump();
            return Ok(BoolExpr::True);
        }
        if self.is_kw("false") {
            self.bump();
            return Ok(BoolExpr::Not(Box::new(BoolExpr::True)));
        }
        if *self.peek() == Tok::LParen {
            let save = self.pos;
            self.bump();
            if let Ok(b) = self.bool_expr() {
                if *self.peek() == Tok::RParen {
                    self.bump();
                    return Ok(b);
                }
            }
            self.pos = save;
        }
        let lhs = self.expr()?;
        let op = self.bump();
        let rhs = match op {
            Tok::Lt | Tok::Gt | Tok::Le | Tok::Ge => self.expr()?,
            _ => {
                self.pos -= 1;
                return self.error("a comparison `<`, `>`, `<=` or `>=`");
            }
        };
        let not = |b| BoolExpr::Not(Box::new(b));
        Ok(match op {
            Tok::Lt => BoolExpr::Lt(lhs, rhs),
            Tok::Gt => BoolExpr::Lt(rhs, lhs),
            Tok::Le => not(BoolExpr::Lt(rhs, lhs)),
            _ => not(BoolExpr::Lt(lhs, rhs)),
        })
    }

    fn expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => Op::Add,
                Tok::Minus => Op::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Op(op, vec![lhs, rhs]);
        }
    }

    fn term(&mut self) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => Op::Mul,
                Tok::Slash => Op::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Op(op, vec![lhs, rhs]);
        }
    }

    fn unary(&mut self) -> PResult<Expr> {
        if *self.peek() == Tok::Minus {
            self.bump();
            if let Tok::Num(v) = *self.peek() {
                self.bump();
                return Ok(Expr::Const(-v));
            }
            return Ok(Expr::Op(Op::Neg, vec![self.unary()?]));
        }
        self.atom()
    }

    fn atom(&mut self) -> PResult<Expr> {
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Const(v))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Aux(a) => {
                self.bump();
                if a == "like" {
                    return Ok(Expr::Var(Var::Like));
                }
                let wrap: fn(Name) -> Var = match a.as_str() {
                    "pr" => Var::Pr,
                    "val" => Var::Val,
                    "cnt" => Var::Cnt,
                    _ => {
                        self.pos -= 1;
                        return self.error("`$like`, `$pr`, `$val` or `$cnt`");
                    }
                };
                self.expect(Tok::LParen, "`(`")?;
                let n = self.name_literal()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(Expr::Var(wrap(n)))
            }
            Tok::Ident(s) if s == "name" => Ok(Expr::Var(Var::Name(self.name_literal()?))),
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                if *self.peek_at(1) == Tok::LParen {
                    if let Some(op) = Op::from_function_name(&s) {
                        self.bump();
                        self.bump();
                        let mut args = vec![self.expr()?];
                        while *self.peek() == Tok::Comma {
                            self.bump();
                            args.push(self.expr()?);
                        }
                        if args.len() != op.arity() {
                            return self.error(&format!(
                                "{} argument(s) for `{}`",
                                op.arity(),
                                op.name()
                            ));
                        }
                        self.expect(Tok::RParen, "`)`")?;
                        return Ok(Expr::Op(op, args));
                    }
                }
                self.bump();
                if self.binder.as_deref() == Some(s.as_str()) {
                    Ok(Expr::Bound)
                } else {
                    Ok(Expr::Var(Var::PVar(Arc::from(s.as_str()))))
                }
            }
            _ => self.error("an expression"),
        }
    }

    /// `name("α", i)` with an integer literal index, as used for name
    /// variables inside expressions.
    fn name_literal(&mut self) -> PResult<Name> {
        self.expect_kw("name")?;
        self.expect(Tok::LParen, "`(`")?;
        let s = match self.bump() {
            Tok::Str(s) => s,
            _ => {
                self.pos -= 1;
                return self.error("a string literal");
            }
        };
        self.expect(Tok::Comma, "`,`")?;
        let idx = match self.bump() {
            Tok::Num(v) if v >= 0.0 && v.fract() == 0.0 => v as usize,
            _ => {
                self.pos -= 1;
                return self.error("a non-negative integer index");
            }
        };
        self.expect(Tok::RParen, "`)`")?;
        Ok(Name::new(s.as_str(), idx))
    }
}

fn split_header(text: &str) -> (Vec<Arc<str>>, String) {
    let mut params = Vec::new();
    let mut body = String::with_capacity(text.len());
    for line in text.lines() {
        if let Some(rest) = line.trim_start().strip_prefix("#params:") {
            params.extend(
                rest.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(Arc::from),
            );
            body.push('\n');
        } else {
            body.push_str(line);
            body.push('\n');
        }
    }
    (params, body)
}

/// Parses a program file, including the optional `#params:` header.
pub fn parse_program_file(text: &str) -> Result<ProgramFile, SyntaxError> {
    let (params, body) = split_header(text);
    let mut p = Parser {
        toks: lex(&body)?,
        pos: 0,
        binder: None,
    };
    let c = p.command()?;
    if *p.peek() != Tok::Eof {
        return p.error("`;` or end of input");
    }
    Ok(ProgramFile { params, body: c })
}

/// Parses a command. A `#params:` header is accepted and ignored.
pub fn parse_program(text: &str) -> Result<Command, SyntaxError> {
    parse_program_file(text).map(|f| f.body)
}

/// Parses a single real expression; `binder` names the lambda binder in scope.
pub fn parse_expr(text: &str, binder: Option<&str>) -> Result<Expr, SyntaxError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
        binder: binder.map(Arc::from),
    };
    let e = p.expr()?;
    if *p.peek() != Tok::Eof {
        return p.error("end of expression");
    }
    Ok(e)
}

pub fn parse_dist(text: &str) -> Result<DistExpr, SyntaxError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
        binder: None,
    };
    let d = p.dist()?;
    if *p.peek() != Tok::Eof {
        return p.error("end of input");
    }
    Ok(d)
}

pub fn parse_lambda(text: &str) -> Result<Lambda, SyntaxError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
        binder: None,
    };
    let l = p.lambda()?;
    if *p.peek() != Tok::Eof {
        return p.error("end of input");
    }
    Ok(l)
}
