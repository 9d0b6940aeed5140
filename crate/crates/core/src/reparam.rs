//! Reparameterisation plans and the program transform they induce.
//!
//! A plan is a set of selected name strings together with one rewrite rule
//! per distribution kind. Whether a sample command is rewritten depends only
//! on the string part of its name, so every plan is simple by construction.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::NameSet;
use crate::interp::{eval_dist, lambda_fn, CompileError, State, Universe};
use crate::syntax::{Command, DistExpr, DistKind, Expr, Lambda, NameExpr, Op};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Selection {
    All,
    Only(BTreeSet<Arc<str>>),
}

impl Selection {
    pub fn contains(&self, s: &str) -> bool {
        match self {
            Selection::All => true,
            Selection::Only(set) => set.contains(s),
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, Selection::Only(s) if s.is_empty())
    }

    /// Selected strings among `candidates`.
    pub fn among<'a>(&self, candidates: impl IntoIterator<Item = &'a Arc<str>>) -> BTreeSet<Arc<str>> {
        candidates
            .into_iter()
            .filter(|s| self.contains(s))
            .cloned()
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Certificate {
    KnownValid,
    Unverified,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Rule {
    /// `(n, N(e1, e2), λy.e3) ↦ (N(0, 1), λy.e3[(y × √e2 + e1)/y])`.
    NormalStandardise,
    /// Leaves the command unchanged.
    Identity,
    /// `(n, d, λy.e3) ↦ (dist, λy.e3[transport(y)/y])`.
    Custom { dist: DistExpr, transport: Lambda },
}

impl Rule {
    pub fn certificate(&self) -> Certificate {
        match self {
            Rule::NormalStandardise | Rule::Identity => Certificate::KnownValid,
            Rule::Custom { .. } => Certificate::Unverified,
        }
    }

    /// The rewritten distribution and lambda.
    pub fn apply(&self, d: &DistExpr, l: &Lambda) -> (DistExpr, Lambda) {
        match self {
            Rule::NormalStandardise => {
                let moved = Expr::add(
                    Expr::mul(Expr::Bound, Expr::Op(Op::Sqrt, vec![d.variance.clone()])),
                    d.mean.clone(),
                );
                (
                    DistExpr::normal(Expr::Const(0.0), Expr::Const(1.0)),
                    Lambda {
                        binder: l.binder.clone(),
                        body: l.apply(&moved),
                    },
                )
            }
            Rule::Identity => (d.clone(), l.clone()),
            Rule::Custom { dist, transport } => (
                dist.clone(),
                Lambda {
                    binder: l.binder.clone(),
                    body: l.apply(&transport.body),
                },
            ),
        }
    }

    /// Whether the output distribution reads no variable.
    pub fn output_is_constant(&self) -> bool {
        match self {
            Rule::NormalStandardise => true,
            Rule::Identity => false,
            Rule::Custom { dist, .. } => dist.fv().is_empty(),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Rule::NormalStandardise => "normal-standardise",
            Rule::Identity => "identity",
            Rule::Custom { .. } => "custom",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReparamPlan {
    pub selected: Selection,
    pub rules: BTreeMap<DistKind, Rule>,
}

impl ReparamPlan {
    /// `π₀`: every string selected, normal standardisation installed.
    pub fn default_plan() -> ReparamPlan {
        ReparamPlan {
            selected: Selection::All,
            rules: BTreeMap::from([(DistKind::Normal, Rule::NormalStandardise)]),
        }
    }

    /// The nowhere-defined plan.
    pub fn empty() -> ReparamPlan {
        ReparamPlan {
            selected: Selection::Only(BTreeSet::new()),
            rules: BTreeMap::new(),
        }
    }

    /// `π(n, d, l)`, or `None` where the plan is undefined.
    pub fn apply(&self, n: &NameExpr, d: &DistExpr, l: &Lambda) -> Option<(DistExpr, Lambda)> {
        if !self.selected.contains(&n.string) {
            return None;
        }
        self.rules.get(&d.kind()).map(|r| r.apply(d, l))
    }

    /// `π[S]`: keeps only strings in `s`.
    pub fn restrict(&self, s: &BTreeSet<Arc<str>>) -> ReparamPlan {
        let selected = match &self.selected {
            Selection::All => s.clone(),
            Selection::Only(cur) => cur.intersection(s).cloned().collect(),
        };
        ReparamPlan {
            selected: Selection::Only(selected),
            rules: self.rules.clone(),
        }
    }

    /// `rv(π)`: names whose sample commands the plan may rewrite.
    pub fn rv(&self, u: &Universe) -> NameSet {
        if self.rules.is_empty() {
            return NameSet::new();
        }
        (0..u.strings().len())
            .filter(|&s| self.selected.contains(&u.strings()[s]))
            .flat_map(|s| u.slots_of_string(s))
            .collect()
    }

    /// Sufficient condition for the reparameterised prior factors to be
    /// θ-independent: every rule outputs a distribution with no free
    /// variables. Vacuous for a plan that rewrites nothing.
    pub fn check_r4_structural(&self) -> bool {
        self.selected.is_empty() || self.rules.values().all(Rule::output_is_constant)
    }

    pub fn to_file(&self, strings: &[Arc<str>]) -> PlanFile {
        PlanFile {
            selected: self.selected.among(strings).iter().map(|s| s.to_string()).collect(),
            rules: self.rules.values().map(|r| r.label().to_string()).collect(),
        }
    }
}

/// `⟨c⟩π`: rewrites every sample command on which `π` is defined.
pub fn transform(c: &Command, plan: &ReparamPlan) -> Command {
    match c {
        Command::Skip | Command::Assign(..) | Command::Observe(..) => c.clone(),
        Command::Seq(cs) => Command::Seq(cs.iter().map(|c| transform(c, plan)).collect()),
        Command::If(b, c1, c2) => Command::if_else(b.clone(), transform(c1, plan), transform(c2, plan)),
        Command::While(b, body) => Command::while_loop(b.clone(), transform(body, plan)),
        Command::Sample {
            target,
            name,
            dist,
            lambda,
        } => match plan.apply(name, dist, lambda) {
            Some((d, l)) => Command::Sample {
                target: target.clone(),
                name: name.clone(),
                dist: d,
                lambda: l,
            },
            None => c.clone(),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("unknown rule `{0}` (expected normal-standardise or identity)")]
    UnknownRule(String),
    #[error("two rules given for the normal distribution")]
    DuplicateRule,
    #[error("invalid plan file: {0}")]
    Json(String),
}

/// On-disk plan: `{"selected": ["z1"], "rules": ["normal-standardise"]}`.
/// `selected` may also be the string `"all"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    #[serde(deserialize_with = "de_selected")]
    pub selected: Vec<String>,
    pub rules: Vec<String>,
}

fn de_selected<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Sel {
        List(Vec<String>),
        Word(String),
    }
    match Sel::deserialize(d)? {
        Sel::List(v) => Ok(v),
        Sel::Word(w) if w == "all" => Ok(vec!["*".to_string()]),
        Sel::Word(w) => Err(serde::de::Error::custom(format!(
            "expected a list of strings or \"all\", got \"{w}\""
        ))),
    }
}

impl PlanFile {
    pub fn parse(json: &str) -> Result<ReparamPlan, PlanError> {
        let f: PlanFile = serde_json::from_str(json).map_err(|e| PlanError::Json(e.to_string()))?;
        f.into_plan()
    }

    pub fn into_plan(self) -> Result<ReparamPlan, PlanError> {
        let mut rules = BTreeMap::new();
        for r in &self.rules {
            let rule = match r.as_str() {
                "normal-standardise" => Rule::NormalStandardise,
                "identity" => Rule::Identity,
                other => return Err(PlanError::UnknownRule(other.to_string())),
            };
            if rules.insert(DistKind::Normal, rule).is_some() {
                return Err(PlanError::DuplicateRule);
            }
        }
        let selected = if self.selected.iter().any(|s| s == "*") {
            Selection::All
        } else {
            Selection::Only(self.selected.iter().map(|s| Arc::from(s.as_str())).collect())
        };
        Ok(ReparamPlan { selected, rules })
    }
}

/// Settings of the statistical validity check.
#[derive(Clone, Copy, Debug)]
pub struct ValidityConfig {
    pub states: usize,
    pub draws: usize,
    pub alpha: f64,
}

impl Default for ValidityConfig {
    fn default() -> Self {
        ValidityConfig {
            states: 20,
            draws: 10_000,
            alpha: 1e-4,
        }
    }
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a − F_b|`.
pub fn ks_statistic(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Asymptotic rejection threshold of the two-sample KS test at level `alpha`.
pub fn ks_threshold(n: usize, m: usize, alpha: f64) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    let (n, m) = (n as f64, m as f64);
    c * ((n + m) / (n * m)).sqrt()
}

/// Statistical falsifier for rule validity on one sample site: at random
/// states, the pushforward of `d` through `l` must match that of the
/// rewritten pair. Returns `false` iff some KS test rejects.
pub fn check_validity_mc<R: Rng + ?Sized>(
    u: &Universe,
    rule: &Rule,
    dist: &DistExpr,
    lambda: &Lambda,
    sample_state: &mut dyn FnMut(&mut R) -> State,
    cfg: &ValidityConfig,
    rng: &mut R,
) -> Result<bool, CompileError> {
    let (dist2, lambda2) = rule.apply(dist, lambda);
    for _ in 0..cfg.states {
        let s = sample_state(rng);
        let push = |d: &DistExpr, l: &Lambda, rng: &mut R| -> Result<Vec<f64>, CompileError> {
            let p = eval_dist(u, d, &s)?;
            let f = lambda_fn(u, l, &s)?;
            Ok((0..cfg.draws)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    f(p.mean + p.variance.sqrt() * z)
                })
                .collect())
        };
        let mut a = push(dist, lambda, rng)?;
        let mut b = push(&dist2, &lambda2, rng)?;
        if ks_statistic(&mut a, &mut b) > ks_threshold(a.len(), b.len(), cfg.alpha) {
            return Ok(false);
        }
    }
    Ok(true)
}
