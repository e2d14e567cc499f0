//! Signed `n`-bit intervals.

use std::fmt;

use crate::lang::Op;

/// A non-empty interval `[lo, hi]` of signed `n`-bit integers. The width is
/// supplied by the caller of each operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Interval {
    pub lo: i64,
    pub hi: i64,
}

pub fn imin(n: u32) -> i64 {
    (-(1i128 << (n - 1))) as i64
}

pub fn imax(n: u32) -> i64 {
    ((1i128 << (n - 1)) - 1) as i64
}

/// Reinterprets the low `n` bits of `v` as a signed integer.
pub fn to_signed(n: u32, v: u64) -> i64 {
    let s = 64 - n;
    ((v << s) as i64) >> s
}

/// Two's-complement encoding of `v` in `n` bits.
pub fn to_word(n: u32, v: i64) -> u64 {
    if n >= 64 {
        v as u64
    } else {
        (v as u64) & ((1u64 << n) - 1)
    }
}

impl Interval {
    pub fn new(lo: i64, hi: i64) -> Interval {
        debug_assert!(lo <= hi);
        Interval { lo, hi }
    }

    pub fn point(v: i64) -> Interval {
        Interval { lo: v, hi: v }
    }

    pub fn top(n: u32) -> Interval {
        Interval { lo: imin(n), hi: imax(n) }
    }

    pub fn is_top(&self, n: u32) -> bool {
        *self == Interval::top(n)
    }

    pub fn contains(&self, v: i64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn leq(&self, other: &Interval) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval { lo: self.lo.min(other.lo), hi: self.hi.max(other.hi) }
    }

    pub fn meet(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(Interval { lo, hi })
    }

    /// Number of integers in the interval.
    pub fn card(&self) -> u128 {
        (self.hi as i128 - self.lo as i128 + 1) as u128
    }

    /// Builds `[lo, hi]` if it fits the signed range, `⊤` otherwise.
    fn fit(n: u32, lo: i128, hi: i128) -> Interval {
        if lo < imin(n) as i128 || hi > imax(n) as i128 {
            Interval::top(n)
        } else {
            Interval { lo: lo as i64, hi: hi as i64 }
        }
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.lo == self.hi {
            write!(f, "[{}]", self.lo)
        } else {
            write!(f, "[{},{}]", self.lo, self.hi)
        }
    }
}

fn shr_i128(x: i128, s: u32) -> i128 {
    if s >= 127 {
        if x < 0 {
            -1
        } else {
            0
        }
    } else {
        x >> s
    }
}

fn shl_amount(v: i64) -> u32 {
    v.clamp(0, 127) as u32
}

/// Interval abstraction of `op`. `b` is ignored for `Not`.
pub fn interval_apply(op: Op, n: u32, a: Interval, b: Interval) -> Interval {
    let (a1, b1) = (a.lo as i128, a.hi as i128);
    let (a2, b2) = (b.lo as i128, b.hi as i128);
    let top = Interval::top(n);
    let max = imax(n) as i128;
    match op {
        Op::Not => Interval { lo: -1 - a.hi, hi: -1 - a.lo },
        Op::Add => Interval::fit(n, a1 + a2, b1 + b2),
        Op::Minus => Interval::fit(n, a1 - b2, b1 - a2),
        Op::Mul => {
            let c = [a1 * a2, a1 * b2, b1 * a2, b1 * b2];
            Interval::fit(n, *c.iter().min().unwrap(), *c.iter().max().unwrap())
        }
        Op::Div => top,
        Op::Mod => {
            // Unsigned remainder never exceeds the dividend and stays below
            // a positive divisor.
            let mut hi = None;
            if a1 >= 0 {
                hi = Some(b1);
            }
            if a2 >= 1 {
                hi = Some(hi.map_or(b2 - 1, |h: i128| h.min(b2 - 1)));
            }
            match hi {
                Some(h) => Interval { lo: 0, hi: h as i64 },
                None => top,
            }
        }
        Op::And => {
            if a1 >= 0 && a2 >= 0 {
                Interval { lo: 0, hi: b1.min(b2) as i64 }
            } else if a1 >= 0 || a2 >= 0 {
                // One operand is non-negative: the result lies between 0 and
                // that operand. A negative mask clears at most Not(mask) from it.
                let ((pa, pb), (qa, qb)) = if a1 >= 0 { ((a1, b1), (a2, b2)) } else { ((a2, b2), (a1, b1)) };
                let lo = if qb < 0 { (pa - (-1 - qa)).max(0) } else { 0 };
                Interval { lo: lo as i64, hi: pb as i64 }
            } else if b1 < 0 && b2 < 0 {
                Interval { lo: imin(n), hi: b1.min(b2) as i64 }
            } else {
                top
            }
        }
        Op::Or => {
            if a1 >= 0 && a2 >= 0 {
                Interval { lo: a1.max(a2) as i64, hi: max as i64 }
            } else {
                top
            }
        }
        Op::Xor => top,
        Op::Shl => {
            if a1 >= 0 && a2 >= 0 {
                let (s_lo, s_hi) = (shl_amount(b.lo.min(127)), shl_amount(b.hi));
                if b1 == 0 {
                    return Interval::point(0);
                }
                if s_hi >= 127 || (b1 << s_hi) > max {
                    top
                } else {
                    Interval { lo: (a1 << s_lo) as i64, hi: (b1 << s_hi) as i64 }
                }
            } else {
                top
            }
        }
        Op::Lshr => {
            if a1 >= 0 && a2 >= 0 {
                Interval { lo: shr_i128(a1, shl_amount(b.hi)) as i64, hi: shr_i128(b1, shl_amount(b.lo)) as i64 }
            } else {
                top
            }
        }
        Op::Ashr => {
            let last = (n - 1) as i128;
            let (s_lo, s_hi) = if a2 >= 0 {
                (a2.min(last), b2.min(last))
            } else if b2 < 0 {
                (last, last)
            } else {
                (0, last)
            };
            let (s_lo, s_hi) = (s_lo as u32, s_hi as u32);
            let lo = shr_i128(a1, s_lo).min(shr_i128(a1, s_hi));
            let hi = shr_i128(b1, s_lo).max(shr_i128(b1, s_hi));
            Interval { lo: lo as i64, hi: hi as i64 }
        }
    }
}
