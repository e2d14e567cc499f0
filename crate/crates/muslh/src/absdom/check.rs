//! Exhaustive soundness checkers for the interval and disjoint interval
//! set operators, comparing them against concrete two's-complement
//! arithmetic.

use rayon::prelude::*;

use super::di::{di_apply, Di};
use super::interval::{imax, imin, interval_apply, to_signed, to_word, Interval};
use crate::lang::Op;
use crate::taint::concrete_apply;

fn concrete_signed(op: Op, n: u32, x: i64, y: i64) -> Option<i64> {
    concrete_apply(op, n, to_word(n, x), to_word(n, y)).map(|r| to_signed(n, r))
}

fn merge(a: Option<(i64, i64)>, b: Option<(i64, i64)>) -> Option<(i64, i64)> {
    match (a, b) {
        (Some((a0, a1)), Some((b0, b1))) => Some((a0.min(b0), a1.max(b1))),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Checks `interval_apply(op, n, ·, ·)` on every pair of intervals. For a
/// fixed pair of lower bounds the concrete result range of each rectangle
/// `[a1,b1] x [a2,b2]` is grown incrementally from its neighbours, so the
/// cost is `O(16^n)` per operator. Returns the first failing pair in
/// lexicographic order.
pub fn interval_counterexample(op: Op, n: u32) -> Option<(Interval, Interval)> {
    let (lo, hi) = (imin(n), imax(n));
    let size = (hi - lo + 1) as usize;
    let table: Vec<Option<i64>> = (lo..=hi)
        .flat_map(|x| (lo..=hi).map(move |y| (x, y)))
        .map(|(x, y)| concrete_signed(op, n, x, if op == Op::Not { 0 } else { y }))
        .collect();
    let failures: Vec<(Interval, Interval)> = (lo..=hi)
        .into_par_iter()
        .filter_map(|a1| {
            for a2 in lo..=hi {
                let w = (hi - a2 + 1) as usize;
                let mut prev: Vec<Option<(i64, i64)>> = vec![None; w];
                for b1 in a1..=hi {
                    let mut left: Option<(i64, i64)> = None;
                    for (j, b2) in (a2..=hi).enumerate() {
                        let here = table[(b1 - lo) as usize * size + (b2 - lo) as usize];
                        let acc = merge(merge(prev[j], left), here.map(|v| (v, v)));
                        prev[j] = acc;
                        left = acc;
                        if let Some((mn, mx)) = acc {
                            let r = interval_apply(op, n, Interval::new(a1, b1), Interval::new(a2, b2));
                            if !r.contains(mn) || !r.contains(mx) {
                                return Some((Interval::new(a1, b1), Interval::new(a2, b2)));
                            }
                        }
                    }
                }
            }
            None
        })
        .collect();
    failures.into_iter().min()
}

/// Every disjoint interval set over the width-`n` universe (`2^(2^n)` sets).
pub fn all_dis(n: u32) -> Vec<Di> {
    let vals: Vec<i64> = (imin(n)..=imax(n)).collect();
    (0u64..(1u64 << vals.len()))
        .map(|m| {
            Di::from_intervals(
                vals.iter().enumerate().filter(|(i, _)| m >> i & 1 == 1).map(|(_, v)| Interval::point(*v)).collect(),
            )
        })
        .collect()
}

fn gamma(n: u32, d: &Di) -> Vec<i64> {
    (imin(n)..=imax(n)).filter(|v| d.contains(*v)).collect()
}

/// True when `di_apply(op, n, a, b)` contains every concrete result.
pub fn di_sound_on(op: Op, n: u32, a: &Di, b: &Di) -> bool {
    let r = di_apply(op, n, a, b);
    let bs = if op == Op::Not { vec![0] } else { gamma(n, b) };
    gamma(n, a).into_iter().all(|x| bs.iter().all(|&y| concrete_signed(op, n, x, y).is_none_or(|z| r.contains(z))))
}

/// Checks `di_apply` on every pair of disjoint interval sets. Feasible up
/// to `n = 3`.
pub fn di_counterexample(op: Op, n: u32) -> Option<(Di, Di)> {
    let all = all_dis(n);
    let bs: Vec<Di> = if op == Op::Not { vec![Di::point(0)] } else { all.clone() };
    all.par_iter()
        .enumerate()
        .filter_map(|(i, a)| bs.iter().find(|b| !di_sound_on(op, n, a, b)).map(|b| (i, (a.clone(), b.clone()))))
        .min_by_key(|(i, _)| *i)
        .map(|(_, w)| w)
}

/// Checks element-wise multiplication of every interval by every
/// singleton, the only case where `di_apply` is not a union of pairwise
/// interval results.
pub fn mul_enum_counterexample(n: u32) -> Option<(Di, Di)> {
    let (lo, hi) = (imin(n), imax(n));
    (lo..=hi)
        .into_par_iter()
        .filter_map(|a| {
            for b in a..=hi {
                for l in lo..=hi {
                    let (x, y) = (Di::interval(a, b), Di::point(l));
                    if !di_sound_on(Op::Mul, n, &x, &y) || !di_sound_on(Op::Mul, n, &y, &x) {
                        return Some((x, y));
                    }
                }
            }
            None
        })
        .min()
}

/// Checks that normalizing any two intervals denotes exactly their union.
pub fn normalization_counterexample(n: u32) -> Option<(Interval, Interval)> {
    let (lo, hi) = (imin(n), imax(n));
    let ivs: Vec<Interval> = (lo..=hi).flat_map(|a| (a..=hi).map(move |b| Interval::new(a, b))).collect();
    ivs.par_iter()
        .filter_map(|x| {
            ivs.iter()
                .find(|y| {
                    let d = Di::from_intervals(vec![*x, **y]);
                    let gaps_ok = d.intervals().windows(2).all(|w| w[0].hi < w[1].lo - 1);
                    !gaps_ok || (lo..=hi).any(|v| d.contains(v) != (x.contains(v) || y.contains(v)))
                })
                .map(|y| (*x, *y))
        })
        .min()
}
