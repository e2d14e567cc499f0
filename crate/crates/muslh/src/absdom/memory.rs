//! Abstract memory: one cell vector per allocation site.

use std::collections::BTreeMap;

use super::value::{AbsVal, Base};
use crate::taint::{Label, TaintVector};

/// Lattice operations a memory cell needs.
pub trait Cell: Clone + PartialEq {
    fn top(n: u32) -> Self;
    fn bottom(n: u32) -> Self;
    fn join(&self, other: &Self) -> Self;
    fn leq(&self, other: &Self) -> bool;
}

impl Cell for AbsVal {
    fn top(_: u32) -> Self {
        AbsVal::Top
    }
    fn bottom(_: u32) -> Self {
        AbsVal::bottom()
    }
    fn join(&self, other: &Self) -> Self {
        AbsVal::join(self, other).hull_eps()
    }
    fn leq(&self, other: &Self) -> bool {
        AbsVal::leq(self, other)
    }
}

impl Cell for TaintVector {
    fn top(n: u32) -> Self {
        TaintVector::uniform(n, Label::H)
    }
    fn bottom(n: u32) -> Self {
        TaintVector::uniform(n, Label::Bot)
    }
    fn join(&self, other: &Self) -> Self {
        TaintVector::join(self, other)
    }
    fn leq(&self, other: &Self) -> bool {
        TaintVector::leq(self, other)
    }
}

/// `M_R` and `M_S` together: the cell vector of a site has length `M_S`.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsMemory<V> {
    cells: BTreeMap<Base, Vec<V>>,
}

impl<V: Cell> AbsMemory<V> {
    pub fn new() -> Self {
        AbsMemory { cells: BTreeMap::new() }
    }

    /// Adds a site with the given initial cell contents.
    pub fn with_site(mut self, base: Base, cells: Vec<V>) -> Self {
        self.cells.insert(base, cells);
        self
    }

    pub fn size(&self, base: Base) -> Option<usize> {
        self.cells.get(&base).map(Vec::len)
    }

    /// `M_R(b, off)`, `⊤` outside the block.
    pub fn cell(&self, base: Base, off: i64, n: u32) -> V {
        match self.cells.get(&base) {
            Some(c) if off >= 0 && (off as u128) < c.len() as u128 => c[off as usize].clone(),
            _ => V::top(n),
        }
    }

    pub fn sites(&self) -> impl Iterator<Item = (&Base, &Vec<V>)> {
        self.cells.iter()
    }

    /// True when every offset `addr` may denote lies inside its block.
    pub fn in_bounds(&self, addr: &AbsVal) -> bool {
        match addr {
            AbsVal::Top => false,
            AbsVal::Map { eps, bases } => {
                eps.is_empty()
                    && bases.iter().all(|(b, d)| match (self.size(*b), d.hull()) {
                        (Some(size), Some(h)) => h.lo >= 0 && (h.hi as i128) < size as i128,
                        (_, None) => true,
                        (None, Some(_)) => false,
                    })
            }
        }
    }

    pub fn load(&self, addr: &AbsVal, n: u32) -> V {
        if !self.in_bounds(addr) {
            return V::top(n);
        }
        let mut acc = V::bottom(n);
        if let Some(bases) = addr.bases() {
            for (b, d) in bases {
                let cells = &self.cells[b];
                for i in d.intervals() {
                    for off in i.lo..=i.hi {
                        acc = acc.join(&cells[off as usize]);
                    }
                }
            }
        }
        acc
    }

    pub fn store(&self, addr: &AbsVal, w: &V, n: u32) -> AbsMemory<V> {
        if addr.is_bottom() {
            return self.clone();
        }
        if !self.in_bounds(addr) {
            let cells = self.cells.iter().map(|(b, c)| (*b, vec![V::top(n); c.len()])).collect();
            return AbsMemory { cells };
        }
        let mut out = self.clone();
        if let Some(bases) = addr.bases() {
            for (b, d) in bases {
                let cells = out.cells.get_mut(b).expect("in-bounds site");
                for i in d.intervals() {
                    for off in i.lo..=i.hi {
                        let c = &mut cells[off as usize];
                        *c = c.join(w);
                    }
                }
            }
        }
        out
    }

    pub fn join(&self, other: &AbsMemory<V>) -> AbsMemory<V> {
        let mut out = self.clone();
        for (b, cs) in &other.cells {
            match out.cells.get_mut(b) {
                Some(mine) => {
                    for (m, o) in mine.iter_mut().zip(cs) {
                        *m = m.join(o);
                    }
                }
                None => {
                    out.cells.insert(*b, cs.clone());
                }
            }
        }
        out
    }

    pub fn leq(&self, other: &AbsMemory<V>) -> bool {
        self.cells.iter().all(|(b, cs)| match other.cells.get(b) {
            Some(os) => cs.iter().zip(os).all(|(c, o)| c.leq(o)),
            None => false,
        })
    }

    /// Combines corresponding cells of two memories with the same sites.
    /// Sites present only in `other` are copied.
    pub fn combine(&self, other: &AbsMemory<V>, f: impl Fn(&V, &V) -> V) -> AbsMemory<V> {
        let mut out = other.clone();
        for (b, cs) in &self.cells {
            if let Some(os) = out.cells.get_mut(b) {
                for (o, c) in os.iter_mut().zip(cs) {
                    *o = f(c, o);
                }
            }
        }
        out
    }

    /// Applies `f` to every cell.
    pub fn map(&self, f: impl Fn(&V) -> V) -> AbsMemory<V> {
        let cells = self.cells.iter().map(|(b, c)| (*b, c.iter().map(&f).collect())).collect();
        AbsMemory { cells }
    }
}

impl<V: Cell> Default for AbsMemory<V> {
    fn default() -> Self {
        Self::new()
    }
}
