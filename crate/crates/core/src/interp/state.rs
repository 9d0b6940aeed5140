use std::ops::{Index, IndexMut};
use std::sync::Arc;

use thiserror::Error;

use super::scalar::Scalar;
use super::universe::{Universe, VarId};
use crate::syntax::Var;

/// A total valuation of the universe, stored densely.
#[derive(Clone, Debug, PartialEq)]
pub struct State<T = f64> {
    pub values: Vec<T>,
}

impl<T: Scalar> State<T> {
    pub fn zeros(u: &Universe) -> State<T> {
        State {
            values: vec![T::constant(0.0); u.len()],
        }
    }

    pub fn get(&self, u: &Universe, v: &Var) -> Option<&T> {
        u.id(v).map(|id| &self.values[id])
    }

    pub fn set(&mut self, u: &Universe, v: &Var, x: T) -> bool {
        match u.id(v) {
            Some(id) => {
                self.values[id] = x;
                true
            }
            None => false,
        }
    }

    pub fn to_values(&self) -> State<f64> {
        State {
            values: self.values.iter().map(Scalar::value).collect(),
        }
    }
}

impl<T> Index<VarId> for State<T> {
    type Output = T;
    fn index(&self, id: VarId) -> &T {
        &self.values[id]
    }
}

impl<T> IndexMut<VarId> for State<T> {
    fn index_mut(&mut self, id: VarId) -> &mut T {
        &mut self.values[id]
    }
}

/// `σ_n`: one value per name, in universe slot order.
#[derive(Clone, Debug, PartialEq)]
pub struct NameValuation<T = f64>(pub Vec<T>);

impl<T: Scalar> NameValuation<T> {
    pub fn zeros(u: &Universe) -> Self {
        NameValuation(vec![T::constant(0.0); u.num_names()])
    }

    pub fn to_values(&self) -> NameValuation<f64> {
        NameValuation(self.0.iter().map(Scalar::value).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ThetaError {
    #[error("parameter `{0}` is not a program variable of the universe")]
    Unknown(Arc<str>),
    #[error("expected {expected} parameter values, got {got}")]
    Arity { expected: usize, got: usize },
}

/// `σ_θ`: values for the declared parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaValuation {
    pub names: Vec<Arc<str>>,
    pub ids: Vec<VarId>,
    pub values: Vec<f64>,
}

impl ThetaValuation {
    pub fn new(u: &Universe, names: &[Arc<str>], values: &[f64]) -> Result<Self, ThetaError> {
        if names.len() != values.len() {
            return Err(ThetaError::Arity {
                expected: names.len(),
                got: values.len(),
            });
        }
        let ids = names
            .iter()
            .map(|n| u.pvar_id(n).ok_or_else(|| ThetaError::Unknown(n.clone())))
            .collect::<Result<_, _>>()?;
        Ok(ThetaValuation {
            names: names.to_vec(),
            ids,
            values: values.to_vec(),
        })
    }

    pub fn with_values(&self, values: &[f64]) -> ThetaValuation {
        assert_eq!(values.len(), self.ids.len());
        ThetaValuation {
            values: values.to_vec(),
            ..self.clone()
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// `σ₀ ⊕ σ_θ ⊕ σ_n`: `like ↦ 1`, `pr_μ ↦ N(σ_n(μ); 0, 1)`, `val_μ ↦ σ_n(μ)`,
/// θ and names as given, everything else 0.
///
/// Every density-like function builds its input state here.
pub fn initial_state<T: Scalar>(
    u: &Universe,
    theta_ids: &[VarId],
    theta: &[T],
    sn: &NameValuation<T>,
) -> State<T> {
    debug_assert_eq!(theta_ids.len(), theta.len());
    debug_assert_eq!(sn.0.len(), u.num_names());
    let mut s = State::zeros(u);
    s[u.like_id()] = T::constant(1.0);
    let zero = T::constant(0.0);
    let one = T::constant(1.0);
    for (slot, r) in sn.0.iter().enumerate() {
        s[u.name_id(slot)] = r.clone();
        s[u.pr_id(slot)] = T::normal_pdf(r, &zero, &one);
        s[u.val_id(slot)] = r.clone();
    }
    for (id, v) in theta_ids.iter().zip(theta) {
        s[*id] = v.clone();
    }
    s
}
