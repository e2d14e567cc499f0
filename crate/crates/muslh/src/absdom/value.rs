//! Abstract values: a disjoint interval set of offsets for every
//! allocation site, plus one for plain numbers (the empty base `ε`).

use std::collections::BTreeMap;
use std::fmt;

use super::di::{di_apply, Di};
use super::interval::{to_signed, Interval};
use crate::lang::Op;

/// Allocation site, identified by the internal location of its `alloc`.
pub type Base = usize;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AbsVal {
    /// Every value, including every address of every site.
    Top,
    Map {
        eps: Di,
        bases: BTreeMap<Base, Di>,
    },
}

impl AbsVal {
    pub fn bottom() -> AbsVal {
        AbsVal::Map { eps: Di::empty(), bases: BTreeMap::new() }
    }

    pub fn number(eps: Di) -> AbsVal {
        AbsVal::Map { eps, bases: BTreeMap::new() }
    }

    pub fn constant(v: i64) -> AbsVal {
        AbsVal::number(Di::point(v))
    }

    pub fn range(lo: i64, hi: i64) -> AbsVal {
        AbsVal::number(Di::interval(lo, hi))
    }

    pub fn top_number(n: u32) -> AbsVal {
        AbsVal::number(Di::top(n))
    }

    /// A pointer to `base` with the given offsets.
    pub fn pointer(base: Base, offsets: Di) -> AbsVal {
        let mut bases = BTreeMap::new();
        if !offsets.is_empty() {
            bases.insert(base, offsets);
        }
        AbsVal::Map { eps: Di::empty(), bases }
    }

    pub fn is_top(&self) -> bool {
        matches!(self, AbsVal::Top)
    }

    pub fn is_bottom(&self) -> bool {
        matches!(self, AbsVal::Map { eps, bases } if eps.is_empty() && bases.is_empty())
    }

    /// An abstract number has no base components.
    pub fn is_number(&self) -> bool {
        matches!(self, AbsVal::Map { bases, .. } if bases.is_empty())
    }

    /// The `ε` component; `⊤` maps it to the full range.
    pub fn eps(&self, n: u32) -> Di {
        match self {
            AbsVal::Top => Di::top(n),
            AbsVal::Map { eps, .. } => eps.clone(),
        }
    }

    pub fn base(&self, b: Base, n: u32) -> Di {
        match self {
            AbsVal::Top => Di::top(n),
            AbsVal::Map { bases, .. } => bases.get(&b).cloned().unwrap_or_default(),
        }
    }

    pub fn bases(&self) -> Option<&BTreeMap<Base, Di>> {
        match self {
            AbsVal::Top => None,
            AbsVal::Map { bases, .. } => Some(bases),
        }
    }

    fn build(eps: Di, bases: BTreeMap<Base, Di>) -> AbsVal {
        let bases = bases.into_iter().filter(|(_, d)| !d.is_empty()).collect();
        AbsVal::Map { eps, bases }
    }

    /// Collapses the `ε` component to a single interval, the form kept in
    /// registers and memory cells.
    pub fn hull_eps(&self) -> AbsVal {
        match self {
            AbsVal::Top => AbsVal::Top,
            AbsVal::Map { eps, bases } => AbsVal::Map { eps: eps.hulled(), bases: bases.clone() },
        }
    }

    pub fn leq(&self, other: &AbsVal) -> bool {
        match (self, other) {
            (_, AbsVal::Top) => true,
            (AbsVal::Top, _) => false,
            (AbsVal::Map { eps: e1, bases: b1 }, AbsVal::Map { eps: e2, bases: b2 }) => {
                e1.leq(e2) && b1.iter().all(|(b, d)| d.leq(b2.get(b).unwrap_or(&Di::empty())))
            }
        }
    }

    pub fn join(&self, other: &AbsVal) -> AbsVal {
        match (self, other) {
            (AbsVal::Top, _) | (_, AbsVal::Top) => AbsVal::Top,
            (AbsVal::Map { eps: e1, bases: b1 }, AbsVal::Map { eps: e2, bases: b2 }) => {
                let mut bases = b1.clone();
                for (b, d) in b2 {
                    let merged = bases.get(b).map(|x| x.lub(d)).unwrap_or_else(|| d.clone());
                    bases.insert(*b, merged);
                }
                AbsVal::Map { eps: e1.lub(e2), bases }
            }
        }
    }

    /// Replaces the `ε` component by its meet with `d`; base components are
    /// kept. `⊤` is returned unchanged.
    pub fn meet_eps(&self, d: &Di) -> AbsVal {
        match self {
            AbsVal::Top => AbsVal::Top,
            AbsVal::Map { eps, bases } => AbsVal::Map { eps: eps.glb(d), bases: bases.clone() },
        }
    }

    /// Widening: every component that grew beyond `old` jumps to `⊤`.
    pub fn widen(old: &AbsVal, new: &AbsVal, n: u32) -> AbsVal {
        match (old, new) {
            (_, AbsVal::Top) | (AbsVal::Top, _) => AbsVal::Top,
            (AbsVal::Map { eps: e0, bases: b0 }, AbsVal::Map { eps: e1, bases: b1 }) => {
                let eps = if e1.leq(e0) { e1.clone() } else { Di::top(n) };
                let bases = b1
                    .iter()
                    .map(|(b, d)| {
                        let prev = b0.get(b).cloned().unwrap_or_default();
                        let w = if d.leq(&prev) { d.clone() } else { Di::top(n) };
                        (*b, w)
                    })
                    .collect();
                AbsVal::Map { eps, bases }
            }
        }
    }

    /// Membership of the concrete word `v`. `bases_of(b)` lists the
    /// concrete start addresses allocated at site `b`.
    pub fn contains(&self, n: u32, v: u64, bases_of: &dyn Fn(Base) -> Vec<u64>) -> bool {
        match self {
            AbsVal::Top => true,
            AbsVal::Map { eps, bases } => {
                if eps.contains(to_signed(n, v)) {
                    return true;
                }
                bases.iter().any(|(b, d)| {
                    bases_of(*b).into_iter().any(|start| {
                        let off = to_signed(n, v.wrapping_sub(start));
                        d.contains(off)
                    })
                })
            }
        }
    }

    /// Renders with `names` giving site names, e.g. `{(s:{[3],[6]}),(ε:{[1,3]})}`.
    pub fn render(&self, names: &dyn Fn(Base) -> String) -> String {
        match self {
            AbsVal::Top => "⊤".to_string(),
            AbsVal::Map { eps, bases } => {
                if self.is_bottom() {
                    return "⊥".to_string();
                }
                let mut parts: Vec<String> = bases.iter().map(|(b, d)| format!("({}:{})", names(*b), d)).collect();
                if !eps.is_empty() {
                    parts.push(format!("(ε:{})", eps));
                }
                format!("{{{}}}", parts.join(","))
            }
        }
    }
}

impl fmt::Display for AbsVal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.render(&|b| format!("b{}", b)))
    }
}

fn add_offsets(op: Op, n: u32, v: &BTreeMap<Base, Di>, eps1: &Di, k: &Di) -> AbsVal {
    let bases = v.iter().map(|(b, d)| (*b, di_apply(op, n, d, k))).collect();
    AbsVal::build(di_apply(op, n, eps1, k), bases)
}

/// Abstract semantics of `op`. The `ε` component of the result is not
/// hulled, so chained expressions keep strides; callers hull before
/// storing the value.
pub fn value_apply(op: Op, n: u32, a: &AbsVal, b: &AbsVal) -> AbsVal {
    if a.is_bottom() || (!op.is_unary() && b.is_bottom()) {
        return AbsVal::bottom();
    }
    if op == Op::Not {
        return match a {
            AbsVal::Map { eps, bases } if bases.is_empty() => AbsVal::number(di_apply(Op::Not, n, eps, eps)),
            _ => AbsVal::Top,
        };
    }
    let num = |v: &AbsVal| -> Option<Di> {
        match v {
            AbsVal::Map { eps, bases } if bases.is_empty() => Some(eps.clone()),
            _ => None,
        }
    };
    let (na, nb) = (num(a), num(b));
    if let (Some(x), Some(y)) = (&na, &nb) {
        return AbsVal::number(di_apply(op, n, x, y));
    }
    match op {
        Op::Add => match (a, b, &na, &nb) {
            (AbsVal::Map { eps, bases }, _, None, Some(k)) | (_, AbsVal::Map { eps, bases }, Some(k), None) => {
                add_offsets(Op::Add, n, bases, eps, k)
            }
            _ => AbsVal::Top,
        },
        Op::Minus => match (a, &nb) {
            (AbsVal::Map { eps, bases }, Some(k)) => add_offsets(Op::Minus, n, bases, eps, k),
            _ => AbsVal::Top,
        },
        Op::And => {
            let (other, mask) = match (&na, &nb) {
                (None, Some(m)) => (a, m),
                (Some(m), None) => (b, m),
                _ => return AbsVal::Top,
            };
            if other.is_bottom() {
                return AbsVal::bottom();
            }
            match mask.hull() {
                None => AbsVal::bottom(),
                Some(h) if h.lo >= 0 => AbsVal::number(Di::interval(0, h.hi)),
                Some(_) => AbsVal::top_number(n),
            }
        }
        _ => AbsVal::Top,
    }
}

/// Branch refinement of a condition value: `taken` means it equals zero.
pub fn refine_on_branch(v: &AbsVal, taken: bool, n: u32) -> AbsVal {
    if taken {
        v.meet_eps(&Di::point(0))
    } else {
        v.meet_eps(&Di::nonzero(n))
    }
}

/// Single-interval convenience for building values in tests and fixtures.
pub fn eps_interval(lo: i64, hi: i64) -> AbsVal {
    AbsVal::number(Di::from_interval(Interval::new(lo, hi)))
}

#[cfg(test)]
mod tests {
    use super::*;

    const S: Base = 0;

    fn names(_: Base) -> String {
        "s".to_string()
    }

    #[test]
    fn pointer_arithmetic_examples() {
        let n = 8;
        let y = AbsVal::pointer(S, Di::from_intervals(vec![Interval::point(3), Interval::point(6)]));
        let z = value_apply(Op::Add, n, &y, &eps_interval(0, 1));
        assert_eq!(z.render(&names), "{(s:{[3,4],[6,7]})}");
        let c = eps_interval(1, 3);
        assert_eq!(y.join(&c).render(&names), "{(s:{[3],[6]}),(ε:{[1,3]})}");
        let both = value_apply(Op::Add, n, &y, &y);
        assert!(both.is_top());
        assert!(value_apply(Op::Minus, n, &c, &y).is_top());
        let back = value_apply(Op::Minus, n, &z, &eps_interval(0, 1));
        assert_eq!(back.render(&names), "{(s:{[2,7]})}");
    }

    #[test]
    fn stride_survives_an_expression() {
        let n = 8;
        let a = eps_interval(1, 2);
        let x = AbsVal::pointer(S, Di::point(0));
        let y = value_apply(Op::Add, n, &x, &value_apply(Op::Mul, n, &a, &AbsVal::constant(3)));
        assert_eq!(y.render(&names), "{(s:{[3],[6]})}");
    }

    #[test]
    fn masking_a_pointer() {
        let n = 8;
        let p = AbsVal::pointer(S, Di::interval(0, 9));
        assert_eq!(value_apply(Op::And, n, &p, &AbsVal::constant(63)), eps_interval(0, 63));
        assert_eq!(value_apply(Op::And, n, &p, &AbsVal::constant(-64)), AbsVal::top_number(n));
        assert_eq!(value_apply(Op::And, n, &p, &eps_interval(-1, 3)), AbsVal::top_number(n));
        assert!(value_apply(Op::Or, n, &p, &AbsVal::constant(1)).is_top());
    }

    #[test]
    fn bottom_operands_give_bottom() {
        assert!(value_apply(Op::Add, 8, &AbsVal::bottom(), &AbsVal::Top).is_bottom());
        assert!(value_apply(Op::Not, 8, &AbsVal::bottom(), &AbsVal::bottom()).is_bottom());
    }

    #[test]
    fn branch_refinement() {
        let v = eps_interval(0, 15);
        assert_eq!(refine_on_branch(&v, false, 8), eps_interval(1, 15));
        assert_eq!(refine_on_branch(&eps_interval(0, 0), true, 8), eps_interval(0, 0));
        assert!(refine_on_branch(&eps_interval(5, 9), true, 8).is_bottom());
    }

    #[test]
    fn membership_uses_wrapping_offsets() {
        let p = AbsVal::pointer(S, Di::interval(-1, 1));
        let starts = |_| vec![0u64];
        assert!(p.contains(4, 15, &starts));
        assert!(p.contains(4, 1, &starts));
        assert!(!p.contains(4, 2, &starts));
        assert!(AbsVal::Top.contains(4, 9, &starts));
    }

    #[test]
    fn widening_jumps_to_top() {
        let n = 8;
        let w = AbsVal::widen(&eps_interval(0, 3), &eps_interval(0, 4), n);
        assert_eq!(w, AbsVal::top_number(n));
        let same = AbsVal::widen(&eps_interval(0, 4), &eps_interval(0, 3), n);
        assert_eq!(same, eps_interval(0, 3));
    }
}
