//! The fixed table of primitive operators.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Target smoothness property of the analysis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Property {
    Differentiability,
    LocalLipschitz,
}

impl Property {
    pub fn short(self) -> &'static str {
        match self {
            Property::Differentiability => "diff",
            Property::LocalLipschitz => "lip",
        }
    }
}

impl std::str::FromStr for Property {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "diff" | "differentiability" => Ok(Property::Differentiability),
            "lip" | "local-lipschitz" => Ok(Property::LocalLipschitz),
            other => Err(format!("unknown property `{other}` (expected diff or lip)")),
        }
    }
}

/// How an operator behaves in one of its arguments.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArgClass {
    /// Smooth everywhere in this argument.
    Smooth,
    /// Smooth where the argument is strictly positive.
    NeedsPositive,
    /// Smooth where the argument is nonzero.
    NeedsNonzero,
    /// No smoothness guarantee.
    Nonsmooth,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Sqrt,
    Relu,
    /// `normal_pdf(x, mean, variance)`
    NormalPdf,
    Floor,
    /// Indicator of `x > 0`.
    Step,
    /// `xy / (x² + y²)`, and 0 at the origin.
    XyRatio,
}

pub struct OperatorDescriptor {
    pub op: Op,
    pub name: &'static str,
    pub arity: usize,
    pub differentiability: &'static [ArgClass],
    pub local_lipschitz: &'static [ArgClass],
}

use ArgClass::*;

pub const OPERATORS: &[OperatorDescriptor] = &[
    OperatorDescriptor {
        op: Op::Add,
        name: "+",
        arity: 2,
        differentiability: &[Smooth, Smooth],
        local_lipschitz: &[Smooth, Smooth],
    },
    OperatorDescriptor {
        op: Op::Sub,
        name: "-",
        arity: 2,
        differentiability: &[Smooth, Smooth],
        local_lipschitz: &[Smooth, Smooth],
    },
    OperatorDescriptor {
        op: Op::Mul,
        name: "*",
        arity: 2,
        differentiability: &[Smooth, Smooth],
        local_lipschitz: &[Smooth, Smooth],
    },
    OperatorDescriptor {
        op: Op::Div,
        name: "/",
        arity: 2,
        differentiability: &[Smooth, NeedsNonzero],
        local_lipschitz: &[Smooth, NeedsNonzero],
    },
    OperatorDescriptor {
        op: Op::Neg,
        name: "neg",
        arity: 1,
        differentiability: &[Smooth],
        local_lipschitz: &[Smooth],
    },
    OperatorDescriptor {
        op: Op::Exp,
        name: "exp",
        arity: 1,
        differentiability: &[Smooth],
        local_lipschitz: &[Smooth],
    },
    OperatorDescriptor {
        op: Op::Log,
        name: "log",
        arity: 1,
        differentiability: &[NeedsPositive],
        local_lipschitz: &[NeedsPositive],
    },
    OperatorDescriptor {
        op: Op::Sqrt,
        name: "sqrt",
        arity: 1,
        differentiability: &[NeedsPositive],
        local_lipschitz: &[NeedsPositive],
    },
    OperatorDescriptor {
        op: Op::Relu,
        name: "relu",
        arity: 1,
        differentiability: &[Nonsmooth],
        local_lipschitz: &[Smooth],
    },
    OperatorDescriptor {
        op: Op::NormalPdf,
        name: "normal_pdf",
        arity: 3,
        differentiability: &[Smooth, Smooth, NeedsPositive],
        local_lipschitz: &[Smooth, Smooth, NeedsPositive],
    },
    OperatorDescriptor {
        op: Op::Floor,
        name: "floor",
        arity: 1,
        differentiability: &[Nonsmooth],
        local_lipschitz: &[Nonsmooth],
    },
    OperatorDescriptor {
        op: Op::Step,
        name: "step",
        arity: 1,
        differentiability: &[Nonsmooth],
        local_lipschitz: &[Nonsmooth],
    },
    OperatorDescriptor {
        op: Op::XyRatio,
        name: "xyratio",
        arity: 2,
        differentiability: &[Nonsmooth, Nonsmooth],
        local_lipschitz: &[Nonsmooth, Nonsmooth],
    },
];

impl Op {
    pub fn descriptor(self) -> &'static OperatorDescriptor {
        OPERATORS
            .iter()
            .find(|d| d.op == self)
            .expect("every operator has a descriptor")
    }

    pub fn arity(self) -> usize {
        self.descriptor().arity
    }

    pub fn name(self) -> &'static str {
        self.descriptor().name
    }

    pub fn arg_class(self, prop: Property, arg: usize) -> ArgClass {
        let d = self.descriptor();
        match prop {
            Property::Differentiability => d.differentiability[arg],
            Property::LocalLipschitz => d.local_lipschitz[arg],
        }
    }

    /// Operators written in call syntax, e.g. `exp(x)`.
    pub fn from_function_name(name: &str) -> Option<Op> {
        match name {
            "exp" => Some(Op::Exp),
            "log" => Some(Op::Log),
            "sqrt" => Some(Op::Sqrt),
            "relu" => Some(Op::Relu),
            "normal_pdf" => Some(Op::NormalPdf),
            "floor" => Some(Op::Floor),
            "step" => Some(Op::Step),
            "xyratio" => Some(Op::XyRatio),
            _ => None,
        }
    }

    pub fn is_infix(self) -> bool {
        matches!(self, Op::Add | Op::Sub | Op::Mul | Op::Div)
    }

    pub(crate) fn precedence(self) -> u8 {
        match self {
            Op::Add | Op::Sub => 1,
            Op::Mul | Op::Div => 2,
            _ => 4,
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
