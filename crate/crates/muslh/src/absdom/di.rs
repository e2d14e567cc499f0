//! Disjoint interval sets: sorted unions of intervals separated by gaps of
//! at least one integer.

use std::fmt;

use super::interval::{imax, imin, interval_apply, Interval};
use crate::lang::Op;

/// Products are enumerated element-wise only when every interval of the
/// varying operand has at most this many elements.
pub const MUL_ENUM_LIMIT: u128 = 256;
/// Sets with more intervals than this collapse to their hull.
pub const MAX_INTERVALS: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Di(Vec<Interval>);

impl Di {
    pub fn empty() -> Di {
        Di(Vec::new())
    }

    pub fn top(n: u32) -> Di {
        Di(vec![Interval::top(n)])
    }

    pub fn point(v: i64) -> Di {
        Di(vec![Interval::point(v)])
    }

    pub fn interval(lo: i64, hi: i64) -> Di {
        Di(vec![Interval::new(lo, hi)])
    }

    pub fn from_interval(i: Interval) -> Di {
        Di(vec![i])
    }

    /// Normalizes an arbitrary list of intervals.
    pub fn from_intervals(mut v: Vec<Interval>) -> Di {
        v.sort();
        let mut out: Vec<Interval> = Vec::with_capacity(v.len());
        for i in v {
            match out.last_mut() {
                Some(last) if (i.lo as i128) <= last.hi as i128 + 1 => last.hi = last.hi.max(i.hi),
                _ => out.push(i),
            }
        }
        if out.len() > MAX_INTERVALS {
            let h = Interval::new(out[0].lo, out[out.len() - 1].hi);
            return Di(vec![h]);
        }
        Di(out)
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_top(&self, n: u32) -> bool {
        self.0.len() == 1 && self.0[0].is_top(n)
    }

    pub fn contains(&self, v: i64) -> bool {
        self.0.iter().any(|i| i.contains(v))
    }

    pub fn hull(&self) -> Option<Interval> {
        Some(Interval::new(self.0.first()?.lo, self.0.last()?.hi))
    }

    /// The set reduced to at most one interval.
    pub fn hulled(&self) -> Di {
        match self.hull() {
            Some(h) => Di(vec![h]),
            None => Di::empty(),
        }
    }

    pub fn is_singleton(&self) -> Option<i64> {
        match self.0.as_slice() {
            [i] if i.lo == i.hi => Some(i.lo),
            _ => None,
        }
    }

    pub fn leq(&self, other: &Di) -> bool {
        self.0.iter().all(|i| other.0.iter().any(|j| i.leq(j)))
    }

    pub fn lub(&self, other: &Di) -> Di {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        Di::from_intervals(v)
    }

    pub fn glb(&self, other: &Di) -> Di {
        let mut v = Vec::new();
        for i in &self.0 {
            for j in &other.0 {
                if let Some(m) = i.meet(j) {
                    v.push(m);
                }
            }
        }
        Di::from_intervals(v)
    }

    /// The set of nonzero integers of width `n`.
    pub fn nonzero(n: u32) -> Di {
        let mut v = Vec::new();
        if imin(n) <= -1 {
            v.push(Interval::new(imin(n), -1));
        }
        if imax(n) >= 1 {
            v.push(Interval::new(1, imax(n)));
        }
        Di(v)
    }

    /// Complement within the signed range.
    pub fn complement(&self, n: u32) -> Di {
        let mut v = Vec::new();
        let mut next = imin(n) as i128;
        for i in &self.0 {
            if (i.lo as i128) > next {
                v.push(Interval::new(next as i64, i.lo - 1));
            }
            next = i.hi as i128 + 1;
        }
        if next <= imax(n) as i128 {
            v.push(Interval::new(next as i64, imax(n)));
        }
        Di(v)
    }
}

impl fmt::Display for Di {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, i) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", i)?;
        }
        write!(f, "}}")
    }
}

/// Applies `op` to every pair of intervals and normalizes the union.
/// Multiplication by a singleton enumerates the products of small
/// intervals, keeping the stride visible.
pub fn di_apply(op: Op, n: u32, a: &Di, b: &Di) -> Di {
    if op == Op::Not {
        return Di::from_intervals(a.0.iter().map(|i| interval_apply(op, n, *i, *i)).collect());
    }
    if a.is_empty() || b.is_empty() {
        return Di::empty();
    }
    if op == Op::Mul {
        if let Some(r) = enumerate_mul(n, a, b).or_else(|| enumerate_mul(n, b, a)) {
            return r;
        }
    }
    let mut v = Vec::with_capacity(a.0.len() * b.0.len());
    for i in &a.0 {
        for j in &b.0 {
            v.push(interval_apply(op, n, *i, *j));
        }
    }
    Di::from_intervals(v)
}

fn enumerate_mul(n: u32, a: &Di, b: &Di) -> Option<Di> {
    let l = b.is_singleton()? as i128;
    if a.0.iter().any(|i| i.card() > MUL_ENUM_LIMIT) {
        return None;
    }
    let (lo, hi) = (imin(n) as i128, imax(n) as i128);
    let mut v = Vec::new();
    for i in &a.0 {
        for x in i.lo as i128..=i.hi as i128 {
            let p = x * l;
            if p < lo || p > hi {
                return Some(Di::top(n));
            }
            v.push(Interval::point(p as i64));
        }
    }
    Some(Di::from_intervals(v))
}
