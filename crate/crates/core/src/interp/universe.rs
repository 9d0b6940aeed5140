use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use crate::syntax::{Command, Name, Var};

pub const DEFAULT_NAME_BOUND: usize = 16;

pub type VarId = usize;

/// The finite variable universe of a set of programs, interned to dense
/// indices.
///
/// Layout: program variables (sorted), then for every name string (sorted)
/// and index `i < N`: the names, `like`, and the `pr`, `val`, `cnt` blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct Universe {
    pvars: Vec<Arc<str>>,
    strings: Vec<Arc<str>>,
    name_bound: usize,
    pvar_index: HashMap<Arc<str>, usize>,
    string_index: HashMap<Arc<str>, usize>,
}

impl Universe {
    pub fn new(
        pvars: impl IntoIterator<Item = Arc<str>>,
        strings: impl IntoIterator<Item = Arc<str>>,
        name_bound: usize,
    ) -> Universe {
        assert!(name_bound >= 1, "name bound must be positive");
        let pvars: Vec<_> = pvars.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let strings: Vec<_> = strings
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let pvar_index = pvars.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
        let string_index = strings.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Universe {
            pvars,
            strings,
            name_bound,
            pvar_index,
            string_index,
        }
    }

    /// Universe covering every variable and name string of `programs`, plus
    /// the extra program variables (typically θ).
    pub fn for_programs(programs: &[&Command], extra: &[Arc<str>], name_bound: usize) -> Universe {
        let mut pvars: BTreeSet<Arc<str>> = extra.iter().cloned().collect();
        let mut strings = BTreeSet::new();
        for c in programs {
            pvars.extend(c.pvars());
            strings.extend(c.name_strings());
        }
        Universe::new(pvars, strings, name_bound)
    }

    pub fn name_bound(&self) -> usize {
        self.name_bound
    }

    pub fn pvars(&self) -> &[Arc<str>] {
        &self.pvars
    }

    pub fn strings(&self) -> &[Arc<str>] {
        &self.strings
    }

    pub fn num_names(&self) -> usize {
        self.strings.len() * self.name_bound
    }

    pub fn len(&self) -> usize {
        self.pvars.len() + 4 * self.num_names() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn pvar_id(&self, x: &str) -> Option<VarId> {
        self.pvar_index.get(x).copied()
    }

    pub fn string_id(&self, s: &str) -> Option<usize> {
        self.string_index.get(s).copied()
    }

    /// Position of `(string, index)` among all names, in `0..num_names()`.
    pub fn name_slot(&self, string: usize, index: usize) -> usize {
        debug_assert!(index < self.name_bound);
        string * self.name_bound + index
    }

    pub fn name_slot_of(&self, n: &Name) -> Option<usize> {
        let s = self.string_id(&n.string)?;
        (n.index < self.name_bound).then(|| self.name_slot(s, n.index))
    }

    pub fn name_at(&self, slot: usize) -> Name {
        Name {
            string: self.strings[slot / self.name_bound].clone(),
            index: slot % self.name_bound,
        }
    }

    pub fn name_id(&self, slot: usize) -> VarId {
        self.pvars.len() + slot
    }

    pub fn like_id(&self) -> VarId {
        self.pvars.len() + self.num_names()
    }

    pub fn pr_id(&self, slot: usize) -> VarId {
        self.like_id() + 1 + slot
    }

    pub fn val_id(&self, slot: usize) -> VarId {
        self.like_id() + 1 + self.num_names() + slot
    }

    pub fn cnt_id(&self, slot: usize) -> VarId {
        self.like_id() + 1 + 2 * self.num_names() + slot
    }

    /// Name slots whose string part is `string`.
    pub fn slots_of_string(&self, string: usize) -> std::ops::Range<usize> {
        string * self.name_bound..(string + 1) * self.name_bound
    }

    pub fn id(&self, v: &Var) -> Option<VarId> {
        match v {
            Var::PVar(x) => self.pvar_id(x),
            Var::Name(n) => self.name_slot_of(n).map(|s| self.name_id(s)),
            Var::Like => Some(self.like_id()),
            Var::Pr(n) => self.name_slot_of(n).map(|s| self.pr_id(s)),
            Var::Val(n) => self.name_slot_of(n).map(|s| self.val_id(s)),
            Var::Cnt(n) => self.name_slot_of(n).map(|s| self.cnt_id(s)),
        }
    }

    pub fn var(&self, id: VarId) -> Var {
        let p = self.pvars.len();
        let n = self.num_names();
        if id < p {
            return Var::PVar(self.pvars[id].clone());
        }
        let id = id - p;
        if id < n {
            return Var::Name(self.name_at(id));
        }
        if id == n {
            return Var::Like;
        }
        let id = id - n - 1;
        let name = self.name_at(id % n);
        match id / n {
            0 => Var::Pr(name),
            1 => Var::Val(name),
            _ => Var::Cnt(name),
        }
    }

    pub fn is_name_id(&self, id: VarId) -> bool {
        id >= self.pvars.len() && id < self.pvars.len() + self.num_names()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip() {
        let u = Universe::new(
            ["x".into(), "a".into()],
            ["z2".into(), "z1".into()],
            3,
        );
        assert_eq!(u.len(), 2 + 4 * 6 + 1);
        for id in 0..u.len() {
            assert_eq!(u.id(&u.var(id)), Some(id));
        }
        assert_eq!(u.var(0), Var::pvar("a"));
        assert_eq!(u.var(u.name_id(0)), Var::Name(Name::new("z1", 0)));
        assert_eq!(u.id(&Var::Name(Name::new("z1", 3))), None);
    }
}
