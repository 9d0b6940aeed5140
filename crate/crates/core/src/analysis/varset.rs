use std::fmt;

use crate::interp::{Universe, VarId};
use crate::syntax::Var;

/// A subset of a universe of `n` variables, as a bitset.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct VarSet {
    n: usize,
    words: Vec<u64>,
}

impl VarSet {
    pub fn empty(n: usize) -> VarSet {
        VarSet {
            n,
            words: vec![0; n.div_ceil(64)],
        }
    }

    pub fn full(n: usize) -> VarSet {
        let mut s = VarSet {
            n,
            words: vec![!0; n.div_ceil(64)],
        };
        s.trim();
        s
    }

    pub fn singleton(n: usize, id: VarId) -> VarSet {
        let mut s = VarSet::empty(n);
        s.insert(id);
        s
    }

    pub fn from_ids(n: usize, ids: impl IntoIterator<Item = VarId>) -> VarSet {
        let mut s = VarSet::empty(n);
        for id in ids {
            s.insert(id);
        }
        s
    }

    /// Ids of the variables of `vars` that the universe knows.
    pub fn from_vars<'a>(u: &Universe, vars: impl IntoIterator<Item = &'a Var>) -> VarSet {
        VarSet::from_ids(u.len(), vars.into_iter().filter_map(|v| u.id(v)))
    }

    fn trim(&mut self) {
        let rem = self.n % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    pub fn universe_len(&self) -> usize {
        self.n
    }

    pub fn insert(&mut self, id: VarId) {
        debug_assert!(id < self.n);
        self.words[id / 64] |= 1 << (id % 64);
    }

    pub fn remove(&mut self, id: VarId) {
        self.words[id / 64] &= !(1 << (id % 64));
    }

    pub fn contains(&self, id: VarId) -> bool {
        id < self.n && self.words[id / 64] & (1 << (id % 64)) != 0
    }

    pub fn union_with(&mut self, o: &VarSet) {
        for (a, b) in self.words.iter_mut().zip(&o.words) {
            *a |= b;
        }
    }

    pub fn intersect_with(&mut self, o: &VarSet) {
        for (a, b) in self.words.iter_mut().zip(&o.words) {
            *a &= b;
        }
    }

    pub fn subtract(&mut self, o: &VarSet) {
        for (a, b) in self.words.iter_mut().zip(&o.words) {
            *a &= !b;
        }
    }

    pub fn union(&self, o: &VarSet) -> VarSet {
        let mut s = self.clone();
        s.union_with(o);
        s
    }

    pub fn intersection(&self, o: &VarSet) -> VarSet {
        let mut s = self.clone();
        s.intersect_with(o);
        s
    }

    pub fn complement(&self) -> VarSet {
        let mut s = VarSet {
            n: self.n,
            words: self.words.iter().map(|w| !w).collect(),
        };
        s.trim();
        s
    }

    pub fn is_subset(&self, o: &VarSet) -> bool {
        self.words.iter().zip(&o.words).all(|(a, b)| a & !b == 0)
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|w| *w == 0)
    }

    pub fn is_full(&self) -> bool {
        self.len() == self.n
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = VarId> + '_ {
        self.words.iter().enumerate().flat_map(|(i, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let b = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(i * 64 + b)
            })
        })
    }

    pub fn vars(&self, u: &Universe) -> Vec<Var> {
        self.iter().map(|id| u.var(id)).collect()
    }
}

impl fmt::Debug for VarSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complement_respects_universe_size() {
        let s = VarSet::from_ids(70, [0, 65]);
        let c = s.complement();
        assert_eq!(c.len(), 68);
        assert!(!c.contains(65));
        assert!(c.contains(69));
        assert_eq!(c.complement(), s);
        assert!(VarSet::full(70).is_full());
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![0, 65]);
    }
}
