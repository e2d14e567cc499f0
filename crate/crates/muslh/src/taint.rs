//! Bit-level taint labels and vectors, the per-operator propagation rules,
//! sanitization, and an exhaustive checker for operator well-definedness.
//!
//! A [`TaintVector`] stores index 0 as the least significant bit. Text
//! rendering and parsing use tuple notation with the most significant bit
//! first, so `(L,L,0,0)` has `L` at indices 3 and 2.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::lang::{Expr, Instr, Op, Program};

/// One label of the five-element lattice `⊥ ⊑ 0,1 ⊑ L ⊑ H`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Bot,
    Zero,
    One,
    L,
    H,
}

/// Bitwise complement of a concrete label; `L` and `H` are unchanged.
impl std::ops::Not for Label {
    type Output = Label;

    fn not(self) -> Label {
        match self {
            Label::Zero => Label::One,
            Label::One => Label::Zero,
            other => other,
        }
    }
}

impl Label {
    pub const ALL: [Label; 5] = [Label::Bot, Label::Zero, Label::One, Label::L, Label::H];

    pub fn from_bit(bit: bool) -> Label {
        if bit {
            Label::One
        } else {
            Label::Zero
        }
    }

    pub fn is_concrete(self) -> bool {
        matches!(self, Label::Zero | Label::One)
    }

    fn rank(self) -> u8 {
        match self {
            Label::Bot => 0,
            Label::Zero | Label::One => 1,
            Label::L => 2,
            Label::H => 3,
        }
    }

    pub fn leq(self, other: Label) -> bool {
        self == other || self.rank() < other.rank() && !(self.is_concrete() && other.is_concrete())
    }

    pub fn lub(self, other: Label) -> Label {
        if self.leq(other) {
            other
        } else if other.leq(self) {
            self
        } else {
            Label::L
        }
    }

    pub fn glb(self, other: Label) -> Label {
        if self.leq(other) {
            self
        } else if other.leq(self) {
            other
        } else {
            Label::Bot
        }
    }

    /// Whether `t ⊑ self` for the threshold label `t`.
    fn at_least(self, t: Label) -> bool {
        t.leq(self)
    }

    pub fn symbol(self) -> char {
        match self {
            Label::Bot => '⊥',
            Label::Zero => '0',
            Label::One => '1',
            Label::L => 'L',
            Label::H => 'H',
        }
    }

    pub fn from_symbol(c: char) -> Option<Label> {
        match c {
            '⊥' | '_' | 'B' => Some(Label::Bot),
            '0' => Some(Label::Zero),
            '1' => Some(Label::One),
            'L' => Some(Label::L),
            'H' => Some(Label::H),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

/// A vector of labels, one per bit, index 0 least significant.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TaintVector(Vec<Label>);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaintError {
    #[error("taint vectors have different lengths ({0} and {1})")]
    LengthMismatch(usize, usize),
    #[error("operator {0} expects {1} operand(s)")]
    Arity(Op, usize),
    #[error("value {0:#x} is not legal for taint vector {1}")]
    IllegalInstance(u64, TaintVector),
    #[error("width {0} exceeds the exhaustive bound {1}")]
    WidthTooLarge(u32, u32),
    #[error("cannot parse taint vector `{0}`")]
    Parse(String),
}

impl TaintVector {
    pub fn new(labels: Vec<Label>) -> Self {
        TaintVector(labels)
    }

    pub fn uniform(n: u32, l: Label) -> Self {
        TaintVector(vec![l; n as usize])
    }

    /// The fully concrete vector describing the low `n` bits of `v`.
    pub fn concrete(n: u32, v: u64) -> Self {
        TaintVector((0..n).map(|i| Label::from_bit(v >> i & 1 == 1)).collect())
    }

    /// Builds a vector from most-significant-first labels.
    pub fn from_msb(labels: &[Label]) -> Self {
        TaintVector(labels.iter().rev().copied().collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn width(&self) -> u32 {
        self.0.len() as u32
    }

    pub fn labels(&self) -> &[Label] {
        &self.0
    }

    pub fn get(&self, i: usize) -> Label {
        self.0[i]
    }

    pub fn set(&mut self, i: usize, l: Label) {
        self.0[i] = l;
    }

    pub fn contains(&self, l: Label) -> bool {
        self.0.contains(&l)
    }

    pub fn has_h(&self) -> bool {
        self.contains(Label::H)
    }

    pub fn has_bot(&self) -> bool {
        self.contains(Label::Bot)
    }

    pub fn is_all_concrete(&self) -> bool {
        self.0.iter().all(|l| l.is_concrete())
    }

    pub fn is_uniform(&self, l: Label) -> bool {
        self.0.iter().all(|&x| x == l)
    }

    /// Labels `[a, b]` inclusive.
    pub fn slice(&self, a: u32, b: u32) -> TaintVector {
        TaintVector(self.0[a as usize..=b as usize].to_vec())
    }

    fn check_len(&self, other: &TaintVector) -> Result<(), TaintError> {
        if self.len() == other.len() {
            Ok(())
        } else {
            Err(TaintError::LengthMismatch(self.len(), other.len()))
        }
    }

    pub fn lub(&self, other: &TaintVector) -> Result<TaintVector, TaintError> {
        self.check_len(other)?;
        Ok(TaintVector(self.0.iter().zip(&other.0).map(|(a, b)| a.lub(*b)).collect()))
    }

    pub fn glb(&self, other: &TaintVector) -> Result<TaintVector, TaintError> {
        self.check_len(other)?;
        Ok(TaintVector(self.0.iter().zip(&other.0).map(|(a, b)| a.glb(*b)).collect()))
    }

    /// Element-wise join for vectors known to share a width.
    pub fn join(&self, other: &TaintVector) -> TaintVector {
        self.lub(other).expect("taint widths agree")
    }

    pub fn leq(&self, other: &TaintVector) -> bool {
        self.len() == other.len() && self.0.iter().zip(&other.0).all(|(a, b)| a.leq(*b))
    }

    /// Smallest index whose label is at least `t`; the length if none is.
    pub fn min_at_least(&self, t: Label) -> usize {
        self.0.iter().position(|l| l.at_least(t)).unwrap_or(self.0.len())
    }

    /// Value of the concrete bits below the first `L`-or-above label.
    pub fn num(&self) -> u128 {
        let cut = self.min_at_least(Label::L);
        let mut v: u128 = 0;
        for i in 0..cut.min(127) {
            if self.0[i] == Label::One {
                v |= 1 << i;
            }
        }
        v
    }

    /// Concrete value of a fully concrete vector.
    pub fn value(&self) -> Option<u64> {
        if !self.is_all_concrete() {
            return None;
        }
        Some(self.0.iter().enumerate().fold(0u64, |acc, (i, l)| acc | ((*l == Label::One) as u64) << i))
    }

    pub fn reversed(&self) -> TaintVector {
        TaintVector(self.0.iter().rev().copied().collect())
    }

    /// Parses tuple notation `(L,L,0,0)` or a bare string `LL00`, both most
    /// significant label first.
    pub fn parse_msb(s: &str) -> Result<TaintVector, TaintError> {
        let body = s.trim().trim_start_matches('(').trim_end_matches(')');
        let mut labels = Vec::new();
        for c in body.chars().filter(|c| !c.is_whitespace() && *c != ',') {
            labels.push(Label::from_symbol(c).ok_or_else(|| TaintError::Parse(s.to_string()))?);
        }
        if labels.is_empty() {
            return Err(TaintError::Parse(s.to_string()));
        }
        Ok(TaintVector::from_msb(&labels))
    }

    /// Compact rendering: a uniform vector prints as e.g. `L^16`.
    pub fn compact(&self) -> String {
        match self.0.first() {
            Some(&l) if self.len() > 1 && self.is_uniform(l) => format!("{}^{}", l, self.len()),
            _ => self.to_string(),
        }
    }
}

impl fmt::Display for TaintVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, l) in self.0.iter().rev().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", l)?;
        }
        write!(f, ")")
    }
}

fn mask(n: u32) -> u64 {
    if n >= 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

/// `v ⊢ t`: every concrete label agrees with the corresponding bit of `v`.
pub fn is_legal(v: u64, t: &TaintVector) -> bool {
    t.labels().iter().enumerate().all(|(i, l)| match l {
        Label::Bot => false,
        Label::Zero => v >> i & 1 == 0,
        Label::One => v >> i & 1 == 1,
        _ => true,
    })
}

/// `v1 ∼_t v2`: the values agree on every bit whose label is not `H`.
pub fn taint_eq(v1: u64, v2: u64, t: &TaintVector) -> Result<bool, TaintError> {
    for v in [v1, v2] {
        if !is_legal(v, t) {
            return Err(TaintError::IllegalInstance(v, t.clone()));
        }
    }
    Ok(t.labels().iter().enumerate().all(|(i, l)| *l == Label::H || (v1 >> i & 1) == (v2 >> i & 1)))
}

/// Applies the taint rule of `op`. Binary operators need `b`; `Not` must
/// not be given one.
pub fn taint_apply(op: Op, a: &TaintVector, b: Option<&TaintVector>) -> Result<TaintVector, TaintError> {
    match (op.is_unary(), b) {
        (true, Some(_)) => return Err(TaintError::Arity(op, 1)),
        (false, None) => return Err(TaintError::Arity(op, 2)),
        _ => {}
    }
    if let Some(b) = b {
        a.check_len(b)?;
    }
    let n = a.len();
    if a.has_bot() || b.is_some_and(|b| b.has_bot()) {
        return Ok(TaintVector(vec![Label::Bot; n]));
    }
    let r = match b {
        None => TaintVector(a.0.iter().map(|l| !*l).collect()),
        Some(b) => match op {
            Op::And => bitwise(a, b, |x, y| if x == Label::Zero || y == Label::Zero { Label::Zero } else { x.lub(y) }),
            Op::Or => bitwise(a, b, |x, y| if x == Label::One || y == Label::One { Label::One } else { x.lub(y) }),
            Op::Xor => bitwise(a, b, |x, y| {
                if x.is_concrete() && y.is_concrete() {
                    Label::from_bit((x == Label::One) != (y == Label::One))
                } else {
                    x.lub(y)
                }
            }),
            Op::Add => add(a, b),
            Op::Minus => minus(a, b),
            Op::Mul => mul(a, b),
            Op::Div | Op::Mod => div_mod(op, a, b),
            Op::Shl => shl(a, b),
            Op::Lshr => shl(&a.reversed(), b).reversed(),
            Op::Ashr => ashr(a, b),
            Op::Not => unreachable!(),
        },
    };
    Ok(r)
}

fn bitwise(a: &TaintVector, b: &TaintVector, f: impl Fn(Label, Label) -> Label) -> TaintVector {
    TaintVector(a.0.iter().zip(&b.0).map(|(x, y)| f(*x, *y)).collect())
}

fn count_at_least_one(ls: &[Label]) -> usize {
    ls.iter().filter(|l| l.at_least(Label::One)).count()
}

/// `H` if any label is `H`, else `L` if any is `L`, else `None`.
fn dominant(ls: &[Label]) -> Option<Label> {
    if ls.contains(&Label::H) {
        Some(Label::H)
    } else if ls.contains(&Label::L) {
        Some(Label::L)
    } else {
        None
    }
}

fn bit(l: Label) -> u8 {
    (l == Label::One) as u8
}

fn add(a: &TaintVector, b: &TaintVector) -> TaintVector {
    let n = a.len();
    let mut r = Vec::with_capacity(n);
    let mut c = Label::Zero;
    for i in 0..n {
        let t = [a.0[i], b.0[i], c];
        r.push(dominant(&t).unwrap_or(Label::from_bit((bit(t[0]) + bit(t[1]) + bit(t[2])) % 2 == 1)));
        c = if count_at_least_one(&t) <= 1 { Label::Zero } else { dominant(&t).unwrap_or(Label::One) };
    }
    TaintVector(r)
}

fn minus(a: &TaintVector, b: &TaintVector) -> TaintVector {
    let n = a.len();
    let mut r = Vec::with_capacity(n);
    let mut c = Label::Zero;
    for i in 0..n {
        let t = [a.0[i], b.0[i], c];
        let diff = (bit(t[0]) as i8 - bit(t[1]) as i8 - bit(t[2]) as i8).rem_euclid(2) == 1;
        r.push(dominant(&t).unwrap_or(Label::from_bit(diff)));
        let subtrahend = count_at_least_one(&t[1..]);
        c = if subtrahend == 0 || (t[0] == Label::One && subtrahend <= 1) {
            Label::Zero
        } else {
            dominant(&t).unwrap_or_else(|| Label::from_bit((bit(t[0]) as i8 - bit(t[1]) as i8 - bit(t[2]) as i8) < 0))
        };
    }
    TaintVector(r)
}

fn mul(a: &TaintVector, b: &TaintVector) -> TaintVector {
    let n = a.len();
    let m = |v: &TaintVector, t| v.min_at_least(t);
    let h_cut = (m(a, Label::H) + m(b, Label::One)).min(m(b, Label::H) + m(a, Label::One));
    let l_cut = (m(a, Label::L) + m(b, Label::One)).min(m(b, Label::L) + m(a, Label::One));
    let prod = a.num().wrapping_mul(b.num());
    TaintVector(
        (0..n)
            .map(|i| {
                if i >= h_cut {
                    Label::H
                } else if i >= l_cut {
                    Label::L
                } else {
                    Label::from_bit(i < 128 && prod >> i & 1 == 1)
                }
            })
            .collect(),
    )
}

fn div_mod(op: Op, a: &TaintVector, b: &TaintVector) -> TaintVector {
    let n = a.len();
    if b.value() == Some(0) {
        return TaintVector(vec![Label::Bot; n]);
    }
    let all: Vec<Label> = a.0.iter().chain(&b.0).copied().collect();
    if let Some(d) = dominant(&all) {
        return TaintVector(vec![d; n]);
    }
    let (x, y) = (a.value().unwrap(), b.value().unwrap());
    let v = if op == Op::Div { x / y } else { x % y };
    TaintVector::concrete(n as u32, v)
}

fn shl(a: &TaintVector, b: &TaintVector) -> TaintVector {
    let n = a.len();
    if let Some(k) = b.value() {
        return TaintVector(
            (0..n).map(|i| if (k as u128) <= i as u128 { a.0[i - k as usize] } else { Label::Zero }).collect(),
        );
    }
    let nb = b.num();
    let b_has_h = b.has_h();
    let lo = nb.saturating_add(a.min_at_least(Label::One) as u128);
    let hi = nb.saturating_add(a.min_at_least(Label::H) as u128);
    TaintVector(
        (0..n)
            .map(|i| {
                let i = i as u128;
                if i < lo {
                    Label::Zero
                } else if i >= hi || b_has_h {
                    Label::H
                } else {
                    Label::L
                }
            })
            .collect(),
    )
}

fn ashr(a: &TaintVector, b: &TaintVector) -> TaintVector {
    let n = a.len();
    let sign = a.0[n - 1];
    let ra = a.reversed();
    let out: Vec<Label> = if let Some(k) = b.value() {
        (0..n).map(|i| if (k as u128) <= i as u128 { ra.0[i - k as usize] } else { sign }).collect()
    } else {
        let nb = b.num();
        let b_has_h = b.has_h();
        let flip = nb.saturating_add(ra.min_at_least(!sign) as u128);
        let hi = nb.saturating_add(ra.min_at_least(Label::H) as u128);
        (0..n)
            .map(|i| {
                let i = i as u128;
                if i >= hi || (b_has_h && i >= flip) {
                    Label::H
                } else if i >= flip {
                    Label::L
                } else {
                    sign
                }
            })
            .collect()
    };
    TaintVector(out).reversed()
}

/// Concrete `n`-bit semantics of an operator on unsigned words. Returns
/// `None` for division or remainder by zero.
pub fn concrete_apply(op: Op, n: u32, a: u64, b: u64) -> Option<u64> {
    let m = mask(n);
    let (a, b) = (a & m, b & m);
    let sext = |x: u64| -> i64 {
        let s = 64 - n;
        ((x << s) as i64) >> s
    };
    let r = match op {
        Op::Not => !a,
        Op::Add => a.wrapping_add(b),
        Op::Minus => a.wrapping_sub(b),
        Op::Mul => a.wrapping_mul(b),
        Op::Div => a.checked_div(b)?,
        Op::Mod => a.checked_rem(b)?,
        Op::And => a & b,
        Op::Or => a | b,
        Op::Xor => a ^ b,
        Op::Shl => {
            if b >= n as u64 {
                0
            } else {
                a << b
            }
        }
        Op::Lshr => {
            if b >= n as u64 {
                0
            } else {
                a >> b
            }
        }
        Op::Ashr => {
            let sh = b.min(n as u64 - 1);
            (sext(a) >> sh) as u64
        }
    };
    Some(r & m)
}

// ---------------------------------------------------------------------------
// Sanitization

/// Replaces the `k` least significant labels with `0`.
pub fn sanitize_ceil_align(t: &TaintVector, k: u32) -> TaintVector {
    let mut r = t.clone();
    if r.has_bot() {
        return r;
    }
    for i in 0..(k as usize).min(r.len()) {
        r.0[i] = Label::Zero;
    }
    r
}

/// Replaces every label at index `>= k` with `0`. The caller must know the
/// value is below `2^k`.
pub fn sanitize_range(t: &TaintVector, k: u32) -> TaintVector {
    let mut r = t.clone();
    if r.has_bot() {
        return r;
    }
    for i in (k as usize)..r.len() {
        r.0[i] = Label::Zero;
    }
    r
}

/// Recognizes the round-up-to-alignment idiom ending at `loc`:
///
/// ```text
/// i:   b <- (a And (2^k - 1))
/// i+1: c <- (2^k Minus b)
/// i+2: d <- (a Add c)
/// ```
///
/// The three instructions must be reached only by falling through, and
/// `a` must not be overwritten inside the window. Returns `k`.
pub fn find_ceil_align(p: &Program, loc: usize) -> Option<u32> {
    if loc < 2 {
        return None;
    }
    let (i0, i1, i2) = (loc - 2, loc - 1, loc);
    for l in [i1, i2] {
        if p.pred(l).ok()? != [l - 1].into_iter().collect() {
            return None;
        }
    }
    let Instr::Asgn { dst: b, expr: e0 } = p.instr(i0) else { return None };
    let Instr::Asgn { dst: c, expr: e1 } = p.instr(i1) else { return None };
    let Instr::Asgn { dst: _, expr: e2 } = p.instr(i2) else { return None };
    let Expr::Bin(Op::And, a0, m) = e0 else { return None };
    let Expr::Reg(a) = **a0 else { return None };
    let Expr::Const(mask) = **m else { return None };
    let pow = (mask as i128) + 1;
    if mask < 0 || pow & (pow - 1) != 0 {
        return None;
    }
    let k = pow.trailing_zeros();
    if k == 0 || k >= p.width() {
        return None;
    }
    if *b == a || *c == a || b == c {
        return None;
    }
    let expect1 = Expr::bin(Op::Minus, Expr::Const(pow as i64), Expr::Reg(*b));
    let expect2 = Expr::bin(Op::Add, Expr::Reg(a), Expr::Reg(*c));
    let expect2b = Expr::bin(Op::Add, Expr::Reg(*c), Expr::Reg(a));
    if *e1 != expect1 || (*e2 != expect2 && *e2 != expect2b) {
        return None;
    }
    Some(k)
}

// ---------------------------------------------------------------------------
// Well-definedness oracle

/// Largest width accepted by [`check_well_defined`].
pub const EXHAUSTIVE_BOUND: u32 = 4;

/// A violation of one of the two well-definedness clauses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Counterexample {
    /// The concrete result is not legal for the computed taint vector.
    Legality { t1: TaintVector, t2: Option<TaintVector>, v1: u64, v2: u64, result: TaintVector, value: u64 },
    /// Two equivalent instances give results that differ on a non-`H` bit.
    Interference {
        t1: TaintVector,
        t2: Option<TaintVector>,
        first: (u64, u64),
        second: (u64, u64),
        result: TaintVector,
    },
}

impl fmt::Display for Counterexample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |t: &Option<TaintVector>| t.as_ref().map(|t| format!(", {}", t)).unwrap_or_default();
        match self {
            Counterexample::Legality { t1, t2, v1, v2, result, value } => write!(
                f,
                "legality: taints {}{} with values ({:#b}, {:#b}) give {:#b}, not legal for {}",
                t1,
                opt(t2),
                v1,
                v2,
                value,
                result
            ),
            Counterexample::Interference { t1, t2, first, second, result } => write!(
                f,
                "interference: taints {}{} with equivalent instances {:?} and {:?} disagree on non-H bits of {}",
                t1,
                opt(t2),
                first,
                second,
                result
            ),
        }
    }
}

/// A taint rule paired with the concrete function it abstracts, in the
/// shape checked by [`check_operator`].
pub struct OperatorModel<'a> {
    pub unary: bool,
    pub taint: &'a (dyn Fn(&TaintVector, Option<&TaintVector>) -> TaintVector + Sync),
    /// `None` means the instance is outside the operator's domain.
    pub concrete: &'a (dyn Fn(u64, u64) -> Option<u64> + Sync),
}

/// Every vector over `{0, 1, L, H}` of width `n`, in lexicographic order.
/// Vectors containing `⊥` have no legal instance and are skipped.
pub fn all_vectors(n: u32) -> Vec<TaintVector> {
    let labels = [Label::Zero, Label::One, Label::L, Label::H];
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        let mut next = Vec::with_capacity(out.len() * 4);
        for v in &out {
            for l in labels {
                let mut w: Vec<Label> = v.clone();
                w.push(l);
                next.push(w);
            }
        }
        out = next;
    }
    out.into_iter().map(TaintVector).collect()
}

fn instances(t: &TaintVector) -> Vec<u64> {
    let n = t.width();
    (0..=mask(n)).filter(|v| is_legal(*v, t)).collect()
}

fn h_mask(t: &TaintVector) -> u64 {
    t.labels().iter().enumerate().filter(|(_, l)| **l == Label::H).fold(0, |acc, (i, _)| acc | 1 << i)
}

/// Checks both clauses for one pair of operand vectors.
fn check_pair(m: &OperatorModel<'_>, n: u32, t1: &TaintVector, t2: Option<&TaintVector>) -> Option<Counterexample> {
    let r = (m.taint)(t1, t2);
    let i1 = instances(t1);
    let i2 = match t2 {
        Some(t) => instances(t),
        None => vec![0],
    };
    let (k1, k2) = (!h_mask(t1) & mask(n), t2.map(|t| !h_mask(t) & mask(n)).unwrap_or(0));
    let rk = !h_mask(&r) & mask(n);
    // Equivalence class key -> first (instances, result) seen.
    let mut classes: HashMap<(u64, u64), ((u64, u64), u64)> = HashMap::new();
    for &v1 in &i1 {
        for &v2 in &i2 {
            let Some(res) = (m.concrete)(v1, v2) else { continue };
            if r.has_bot() {
                continue;
            }
            if !is_legal(res, &r) {
                return Some(Counterexample::Legality {
                    t1: t1.clone(),
                    t2: t2.cloned(),
                    v1,
                    v2,
                    result: r,
                    value: res,
                });
            }
            let key = (v1 & k1, v2 & k2);
            match classes.get(&key) {
                None => {
                    classes.insert(key, ((v1, v2), res));
                }
                Some(&(first, prev)) => {
                    if (prev ^ res) & rk != 0 {
                        return Some(Counterexample::Interference {
                            t1: t1.clone(),
                            t2: t2.cloned(),
                            first,
                            second: (v1, v2),
                            result: r,
                        });
                    }
                }
            }
        }
    }
    None
}

/// Exhaustively checks an operator model at width `n`. Returns the first
/// counterexample in lexicographic order of the operand vectors.
pub fn check_operator(m: &OperatorModel<'_>, n: u32) -> Option<Counterexample> {
    use rayon::prelude::*;
    let vs = all_vectors(n);
    if m.unary {
        return vs.iter().find_map(|t| check_pair(m, n, t, None));
    }
    let found: Vec<Option<Counterexample>> =
        vs.par_iter().map(|t1| vs.iter().find_map(|t2| check_pair(m, n, t1, Some(t2)))).collect();
    found.into_iter().flatten().next()
}

/// Checks the taint rule of `op` against its concrete semantics at width
/// `n` over all label-vector pairs and all legal instances.
pub fn check_well_defined(op: Op, n: u32) -> Result<Option<Counterexample>, TaintError> {
    if n == 0 || n > EXHAUSTIVE_BOUND {
        return Err(TaintError::WidthTooLarge(n, EXHAUSTIVE_BOUND));
    }
    let taint = move |a: &TaintVector, b: Option<&TaintVector>| taint_apply(op, a, b).expect("well-formed operands");
    let concrete = move |a: u64, b: u64| concrete_apply(op, n, a, b);
    let m = OperatorModel { unary: op.is_unary(), taint: &taint, concrete: &concrete };
    Ok(check_operator(&m, n))
}

/// Checks the alignment sanitizer as a unary operator
/// `a ↦ a + (2^k - (a And (2^k - 1)))` at width `n`.
pub fn check_ceil_align_well_defined(n: u32, k: u32) -> Option<Counterexample> {
    let c = TaintVector::concrete(n, 1u64 << k);
    let msk = TaintVector::concrete(n, (1u64 << k) - 1);
    let taint = move |a: &TaintVector, _: Option<&TaintVector>| {
        let low = taint_apply(Op::And, a, Some(&msk)).unwrap();
        let up = taint_apply(Op::Minus, &c, Some(&low)).unwrap();
        let d = taint_apply(Op::Add, a, Some(&up)).unwrap();
        sanitize_ceil_align(&d, k)
    };
    let concrete = move |a: u64, _: u64| {
        let low = a & ((1 << k) - 1);
        Some(a.wrapping_add((1u64 << k).wrapping_sub(low)) & mask(n))
    };
    check_operator(&OperatorModel { unary: true, taint: &taint, concrete: &concrete }, n)
}

/// Checks range sanitization as the identity on values below `2^k`.
pub fn check_range_well_defined(n: u32, k: u32) -> Option<Counterexample> {
    let taint = move |a: &TaintVector, _: Option<&TaintVector>| sanitize_range(a, k);
    let concrete = move |a: u64, _: u64| (a >> k == 0).then_some(a);
    check_operator(&OperatorModel { unary: true, taint: &taint, concrete: &concrete }, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse_program;

    fn tv(s: &str) -> TaintVector {
        TaintVector::parse_msb(s).unwrap()
    }

    #[test]
    fn label_order_is_the_lattice() {
        use Label::*;
        assert!(Bot.leq(Zero) && Bot.leq(One) && Zero.leq(L) && One.leq(L) && L.leq(H));
        assert!(!Zero.leq(One) && !One.leq(Zero));
        assert_eq!(Zero.lub(One), L);
        assert_eq!(Zero.glb(One), Bot);
        assert_eq!(H.glb(L), L);
    }

    #[test]
    fn lub_glb_examples() {
        assert_eq!(tv("(0,1)").lub(&tv("(1,0)")).unwrap(), tv("(L,L)"));
        assert_eq!(tv("(H,L)").glb(&tv("(L,0)")).unwrap(), tv("(L,0)"));
        assert!(matches!(tv("(0,1)").lub(&tv("(1)")), Err(TaintError::LengthMismatch(2, 1))));
    }

    #[test]
    fn operator_examples() {
        let and = taint_apply(Op::And, &tv("(H,H,H,H)"), Some(&tv("(0,0,1,1)"))).unwrap();
        assert_eq!(and, tv("(0,0,H,H)"));
        let add = taint_apply(Op::Add, &tv("(L,L,0,0)"), Some(&tv("(0,1,0,0)"))).unwrap();
        assert_eq!(add, tv("(L,L,0,0)"));
        let add = taint_apply(Op::Add, &tv("(L,L,0,0)"), Some(&tv("(0,0,H,H)"))).unwrap();
        assert_eq!(add, tv("(L,L,H,H)"));
        let not = taint_apply(Op::Not, &tv("(⊥,0,1,L)"), None).unwrap();
        assert_eq!(not, tv("(⊥,⊥,⊥,⊥)"));
        let xor = taint_apply(Op::Xor, &tv("(1,0)"), Some(&tv("(1,1)"))).unwrap();
        assert_eq!(xor, tv("(0,1)"));
        assert!(taint_apply(Op::Not, &tv("(0)"), Some(&tv("(0)"))).is_err());
        assert!(taint_apply(Op::Add, &tv("(0)"), None).is_err());
    }

    #[test]
    fn not_flips_concrete_labels_only() {
        assert_eq!(taint_apply(Op::Not, &tv("(0,1,L,H)"), None).unwrap(), tv("(1,0,L,H)"));
    }

    #[test]
    fn legality_and_equivalence() {
        assert!(is_legal(0b1001, &tv("(1,0,H,L)")));
        assert!(!is_legal(0b1001, &tv("(1,1,H,L)")));
        assert!(is_legal(0b1011, &TaintVector::uniform(4, Label::L)));
        assert!(!is_legal(0, &tv("(⊥,0)")));
        assert!(taint_eq(0b1001, 0b1000, &tv("(L,0,L,H)")).unwrap());
        assert!(!taint_eq(0b10, 0b00, &tv("(L,L)")).unwrap());
        assert!(taint_eq(0b1111, 0b1111, &tv("(L,H,1,L)")).unwrap());
        assert!(taint_eq(0b01, 0b00, &tv("(0,0)")).is_err());
    }

    #[test]
    fn sanitizer_examples() {
        assert_eq!(sanitize_ceil_align(&tv("(L,L,L,L)"), 2), tv("(L,L,0,0)"));
        assert_eq!(sanitize_ceil_align(&tv("(L,L,L,L)"), 0), tv("(L,L,L,L)"));
        let all_h = TaintVector::uniform(8, Label::H);
        assert_eq!(sanitize_range(&all_h, 7), tv("(0,H,H,H,H,H,H,H)"));
        assert_eq!(sanitize_range(&all_h, 8), all_h);
    }

    #[test]
    fn recognizes_alignment_idiom() {
        let p =
            parse_program("0: b <- (a And 3)\n1: c <- (4 Minus b)\n2: d <- (a Add c)\n3: e <- (a Add c)\n").unwrap();
        assert_eq!(find_ceil_align(&p, 2), Some(2));
        assert_eq!(find_ceil_align(&p, 3), None);
        let q = parse_program("0: b <- (a And 5)\n1: c <- (6 Minus b)\n2: d <- (a Add c)\n").unwrap();
        assert_eq!(find_ceil_align(&q, 2), None);
        let r = parse_program("0: a <- (a And 3)\n1: c <- (4 Minus a)\n2: d <- (a Add c)\n").unwrap();
        assert_eq!(find_ceil_align(&r, 2), None);
    }

    #[test]
    fn shifts_with_concrete_amounts() {
        // Shift left by one moves every label up one position.
        assert_eq!(taint_apply(Op::Shl, &tv("(0,H,L,1)"), Some(&tv("(0,0,0,1)"))).unwrap(), tv("(H,L,1,0)"));
        assert_eq!(taint_apply(Op::Lshr, &tv("(0,H,L,1)"), Some(&tv("(0,0,0,1)"))).unwrap(), tv("(0,0,H,L)"));
        assert_eq!(taint_apply(Op::Ashr, &tv("(H,0,L,1)"), Some(&tv("(0,0,1,0)"))).unwrap(), tv("(H,H,H,0)"));
        assert_eq!(taint_apply(Op::Shl, &tv("(1,1)"), Some(&tv("(1,1)"))).unwrap(), tv("(0,0)"));
    }

    #[test]
    fn secret_shift_amount_taints_everything_above_the_first_one() {
        let one = TaintVector::concrete(8, 1);
        let width = TaintVector::uniform(8, Label::H);
        assert!(taint_apply(Op::Shl, &one, Some(&width)).unwrap().is_uniform(Label::H));
    }

    #[test]
    fn division_by_concrete_zero_is_undefined() {
        let r = taint_apply(Op::Div, &tv("(L,L)"), Some(&tv("(0,0)"))).unwrap();
        assert!(r.is_uniform(Label::Bot));
        assert_eq!(taint_apply(Op::Mod, &tv("(1,1)"), Some(&tv("(1,0)"))).unwrap(), tv("(0,1)"));
        assert_eq!(taint_apply(Op::Div, &tv("(1,1)"), Some(&tv("(L,0)"))).unwrap(), tv("(L,L)"));
    }

    #[test]
    fn concrete_semantics() {
        assert_eq!(concrete_apply(Op::Add, 4, 15, 1), Some(0));
        assert_eq!(concrete_apply(Op::Minus, 4, 0, 1), Some(15));
        assert_eq!(concrete_apply(Op::Ashr, 4, 0b1000, 9), Some(0b1111));
        assert_eq!(concrete_apply(Op::Lshr, 4, 0b1000, 4), Some(0));
        assert_eq!(concrete_apply(Op::Div, 4, 3, 0), None);
        assert_eq!(concrete_apply(Op::Not, 3, 0, 0), Some(7));
    }

    #[test]
    fn every_operator_is_well_defined_up_to_width_three() {
        for n in 1..=3 {
            for op in Op::ALL {
                let r = check_well_defined(op, n).unwrap();
                assert!(r.is_none(), "{op} at n={n}: {}", r.unwrap());
            }
        }
    }

    #[test]
    fn corrupted_add_is_caught() {
        // Carry labels that should be L are dropped to 0.
        let bad = |a: &TaintVector, b: Option<&TaintVector>| {
            let b = b.unwrap();
            let mut r = Vec::new();
            let mut c = Label::Zero;
            for i in 0..a.len() {
                let t = [a.get(i), b.get(i), c];
                r.push(dominant(&t).unwrap_or(Label::from_bit((bit(t[0]) + bit(t[1]) + bit(t[2])) % 2 == 1)));
                c = if count_at_least_one(&t) <= 1 {
                    Label::Zero
                } else {
                    match dominant(&t) {
                        Some(Label::L) => Label::Zero,
                        Some(d) => d,
                        None => Label::One,
                    }
                };
            }
            TaintVector::new(r)
        };
        let concrete = |a: u64, b: u64| concrete_apply(Op::Add, 3, a, b);
        let m = OperatorModel { unary: false, taint: &bad, concrete: &concrete };
        assert!(check_operator(&m, 3).is_some());
    }

    #[test]
    fn sanitizers_are_well_defined() {
        for n in 2..=4 {
            for k in 1..n {
                assert!(check_ceil_align_well_defined(n, k).is_none(), "ceil-align n={n} k={k}");
            }
            for k in 0..=n {
                assert!(check_range_well_defined(n, k).is_none(), "range n={n} k={k}");
            }
        }
    }

    #[test]
    fn width_bound_is_enforced() {
        assert!(matches!(check_well_defined(Op::Add, 9), Err(TaintError::WidthTooLarge(9, _))));
    }

    #[test]
    fn rendering_is_msb_first() {
        let t = TaintVector::new(vec![Label::Zero, Label::Zero, Label::L, Label::L]);
        assert_eq!(t.to_string(), "(L,L,0,0)");
        assert_eq!(TaintVector::uniform(16, Label::L).compact(), "L^16");
    }
}
