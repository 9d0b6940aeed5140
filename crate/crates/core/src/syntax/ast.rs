use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use super::ops::Op;

/// A random-variable name `(α, i)`.
///
/// The index bound `N` is a property of the [`Universe`](crate::interp::Universe)
/// the name is interned into, not of the name itself.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Name {
    pub string: Arc<str>,
    pub index: usize,
}

impl Name {
    pub fn new(string: impl Into<Arc<str>>, index: usize) -> Self {
        Name {
            string: string.into(),
            index,
        }
    }
}

impl fmt::Display for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.string, self.index)
    }
}

/// Program variables, random-variable names and the auxiliary variables
/// `like`, `pr_μ`, `val_μ`, `cnt_μ`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    PVar(Arc<str>),
    Name(Name),
    Like,
    Pr(Name),
    Val(Name),
    Cnt(Name),
}

impl Var {
    pub fn pvar(s: &str) -> Var {
        Var::PVar(Arc::from(s))
    }

    pub fn is_pvar(&self) -> bool {
        matches!(self, Var::PVar(_))
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::PVar(x) => write!(f, "{x}"),
            Var::Name(n) => write!(f, "{n}"),
            Var::Like => write!(f, "like"),
            Var::Pr(n) => write!(f, "pr{n}"),
            Var::Val(n) => write!(f, "val{n}"),
            Var::Cnt(n) => write!(f, "cnt{n}"),
        }
    }
}

/// Real-valued expressions.
///
/// `Bound` refers to the binder of the innermost enclosing lambda. Lambdas
/// never nest, so a binder needs no identifier and substitution can never
/// capture.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Var(Var),
    Bound,
    Const(f64),
    Op(Op, Vec<Expr>),
}

impl Expr {
    pub fn var(name: &str) -> Expr {
        Expr::Var(Var::pvar(name))
    }

    pub fn op(op: Op, args: Vec<Expr>) -> Expr {
        debug_assert_eq!(op.arity(), args.len());
        Expr::Op(op, args)
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::Op(Op::Add, vec![a, b])
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::Op(Op::Mul, vec![a, b])
    }

    /// Free variables. The lambda binder is not a variable.
    pub fn fv(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        self.collect_fv(&mut out);
        out
    }

    pub(crate) fn collect_fv(&self, out: &mut BTreeSet<Var>) {
        match self {
            Expr::Var(v) => {
                out.insert(v.clone());
            }
            Expr::Bound | Expr::Const(_) => {}
            Expr::Op(_, args) => args.iter().for_each(|a| a.collect_fv(out)),
        }
    }

    pub fn mentions_bound(&self) -> bool {
        match self {
            Expr::Bound => true,
            Expr::Var(_) | Expr::Const(_) => false,
            Expr::Op(_, args) => args.iter().any(Expr::mentions_bound),
        }
    }

    /// `self[replacement / y]` where `y` is the lambda binder.
    pub fn subst_bound(&self, replacement: &Expr) -> Expr {
        match self {
            Expr::Bound => replacement.clone(),
            Expr::Var(_) | Expr::Const(_) => self.clone(),
            Expr::Op(op, args) => Expr::Op(
                *op,
                args.iter().map(|a| a.subst_bound(replacement)).collect(),
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BoolExpr {
    True,
    Lt(Expr, Expr),
    And(Box<BoolExpr>, Box<BoolExpr>),
    Not(Box<BoolExpr>),
}

impl BoolExpr {
    pub fn fv(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        self.collect_fv(&mut out);
        out
    }

    fn collect_fv(&self, out: &mut BTreeSet<Var>) {
        match self {
            BoolExpr::True => {}
            BoolExpr::Lt(a, b) => {
                a.collect_fv(out);
                b.collect_fv(out);
            }
            BoolExpr::And(a, b) => {
                a.collect_fv(out);
                b.collect_fv(out);
            }
            BoolExpr::Not(b) => b.collect_fv(out),
        }
    }
}

/// `name(α, e)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NameExpr {
    pub string: Arc<str>,
    pub index: Expr,
}

impl NameExpr {
    pub fn constant(string: &str, index: usize) -> NameExpr {
        NameExpr {
            string: Arc::from(string),
            index: Expr::Const(index as f64),
        }
    }

    pub fn fv(&self) -> BTreeSet<Var> {
        self.index.fv()
    }

    /// The index expression if it reads no variable.
    pub fn constant_index(&self) -> Option<&Expr> {
        if self.index.fv().is_empty() && !self.index.mentions_bound() {
            Some(&self.index)
        } else {
            None
        }
    }
}

/// `N(mean, variance)`; the only distribution constructor.
#[derive(Clone, Debug, PartialEq)]
pub struct DistExpr {
    pub mean: Expr,
    pub variance: Expr,
}

impl DistExpr {
    pub fn normal(mean: Expr, variance: Expr) -> DistExpr {
        DistExpr { mean, variance }
    }

    pub fn fv(&self) -> BTreeSet<Var> {
        let mut out = self.mean.fv();
        self.variance.collect_fv(&mut out);
        out
    }

    pub fn kind(&self) -> DistKind {
        DistKind::Normal
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DistKind {
    Normal,
}

/// `λy. body`. `binder` only carries the display name; equality is up to
/// alpha-renaming.
#[derive(Clone, Debug)]
pub struct Lambda {
    pub binder: Arc<str>,
    pub body: Expr,
}

impl Lambda {
    pub fn identity() -> Lambda {
        Lambda {
            binder: Arc::from("y"),
            body: Expr::Bound,
        }
    }

    pub fn new(binder: &str, body: Expr) -> Lambda {
        Lambda {
            binder: Arc::from(binder),
            body,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.body == Expr::Bound
    }

    /// `body[arg / y]`.
    pub fn apply(&self, arg: &Expr) -> Expr {
        self.body.subst_bound(arg)
    }
}

impl PartialEq for Lambda {
    fn eq(&self, other: &Self) -> bool {
        self.body == other.body
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Command {
    Skip,
    Assign(Arc<str>, Expr),
    /// Flattened sequence of at least two commands, none of which is a `Seq`.
    Seq(Vec<Command>),
    If(BoolExpr, Box<Command>, Box<Command>),
    While(BoolExpr, Box<Command>),
    Sample {
        target: Arc<str>,
        name: NameExpr,
        dist: DistExpr,
        lambda: Lambda,
    },
    Observe(DistExpr, f64),
}

impl Command {
    pub fn assign(x: &str, e: Expr) -> Command {
        Command::Assign(Arc::from(x), e)
    }

    pub fn sample(x: &str, name: NameExpr, dist: DistExpr, lambda: Lambda) -> Command {
        Command::Sample {
            target: Arc::from(x),
            name,
            dist,
            lambda,
        }
    }

    /// Builds a normalised sequence: nested sequences are flattened and a
    /// single command is returned as is.
    pub fn seq(cmds: Vec<Command>) -> Command {
        let mut flat = Vec::with_capacity(cmds.len());
        for c in cmds {
            match c {
                Command::Seq(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        match flat.len() {
            0 => Command::Skip,
            1 => flat.pop().unwrap(),
            _ => Command::Seq(flat),
        }
    }

    pub fn if_else(b: BoolExpr, c1: Command, c2: Command) -> Command {
        Command::If(b, Box::new(c1), Box::new(c2))
    }

    pub fn while_loop(b: BoolExpr, body: Command) -> Command {
        Command::While(b, Box::new(body))
    }

    /// Visits every command node in pre-order.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Command)) {
        f(self);
        match self {
            Command::Seq(cs) => cs.iter().for_each(|c| c.walk(f)),
            Command::If(_, a, b) => {
                a.walk(f);
                b.walk(f);
            }
            Command::While(_, body) => body.walk(f),
            _ => {}
        }
    }

    /// Program variables read or written anywhere in the command.
    pub fn pvars(&self) -> BTreeSet<Arc<str>> {
        let mut out = BTreeSet::new();
        let add_fv = |vs: BTreeSet<Var>, out: &mut BTreeSet<Arc<str>>| {
            for v in vs {
                if let Var::PVar(x) = v {
                    out.insert(x);
                }
            }
        };
        self.walk(&mut |c| match c {
            Command::Assign(x, e) => {
                out.insert(x.clone());
                add_fv(e.fv(), &mut out);
            }
            Command::If(b, _, _) | Command::While(b, _) => add_fv(b.fv(), &mut out),
            Command::Sample {
                target,
                name,
                dist,
                lambda,
            } => {
                out.insert(target.clone());
                add_fv(name.fv(), &mut out);
                add_fv(dist.fv(), &mut out);
                add_fv(lambda.body.fv(), &mut out);
            }
            Command::Observe(d, _) => add_fv(d.fv(), &mut out),
            Command::Skip | Command::Seq(_) => {}
        });
        out
    }

    /// Name strings used by sample commands, plus strings of any name
    /// variables that appear inside expressions.
    pub fn name_strings(&self) -> BTreeSet<Arc<str>> {
        let mut out = BTreeSet::new();
        let add_names = |vs: BTreeSet<Var>, out: &mut BTreeSet<Arc<str>>| {
            for v in vs {
                match v {
                    Var::Name(n) | Var::Pr(n) | Var::Val(n) | Var::Cnt(n) => {
                        out.insert(n.string);
                    }
                    _ => {}
                }
            }
        };
        self.walk(&mut |c| match c {
            Command::Assign(_, e) => add_names(e.fv(), &mut out),
            Command::If(b, _, _) | Command::While(b, _) => add_names(b.fv(), &mut out),
            Command::Sample {
                name,
                dist,
                lambda,
                ..
            } => {
                out.insert(name.string.clone());
                add_names(name.fv(), &mut out);
                add_names(dist.fv(), &mut out);
                add_names(lambda.body.fv(), &mut out);
            }
            Command::Observe(d, _) => add_names(d.fv(), &mut out),
            Command::Skip | Command::Seq(_) => {}
        });
        out
    }

    pub fn has_observe(&self) -> bool {
        let mut found = false;
        self.walk(&mut |c| found |= matches!(c, Command::Observe(..)));
        found
    }

    pub fn has_loop(&self) -> bool {
        let mut found = false;
        self.walk(&mut |c| found |= matches!(c, Command::While(..)));
        found
    }
}

/// A parsed program file: the declared parameter list and the body.
#[derive(Clone, Debug, PartialEq)]
pub struct ProgramFile {
    pub params: Vec<Arc<str>>,
    pub body: Command,
}
