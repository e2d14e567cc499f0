//! Seeded generator of small random programs with a fixed policy shape.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::absdom::interval::{imax, imin};
use crate::lang::{parse_policy, parse_program, Op, Policy, Program};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenParams {
    pub width: u32,
    /// Programs have between 1 and `max_len` instructions.
    pub max_len: usize,
    /// Allow backward jumps.
    pub loops: bool,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams { width: 3, max_len: 8, loops: false }
    }
}

/// Registers available to generated code; `m` is the region pointer.
const REGS: [&str; 6] = ["s0", "s1", "x", "y", "z", "m"];

/// The policy every generated program is checked against: two secret
/// registers, one public input, two public scratch registers that start at
/// zero and a public four-cell region holding zeros and ones.
pub fn policy(width: u32) -> Policy {
    parse_policy(&format!(
        "width {}\nreg s0 secret\nreg s1 secret\nreg x public\nreg y public 0..0\nreg z public 0..0\nregion m 4 public 0..1\n",
        width
    ))
    .expect("fixed policy is valid")
}

fn leaf(rng: &mut impl Rng, n: u32) -> String {
    if rng.gen_bool(0.7) {
        REGS.choose(rng).expect("nonempty").to_string()
    } else {
        rng.gen_range(imin(n)..=imax(n)).to_string()
    }
}

fn expr(rng: &mut impl Rng, n: u32, depth: u32) -> String {
    if depth == 0 || rng.gen_bool(0.4) {
        return leaf(rng, n);
    }
    let op = *Op::ALL.choose(rng).expect("nonempty");
    match op {
        Op::Not => format!("(Not {})", expr(rng, n, depth - 1)),
        Op::Div | Op::Mod => {
            let d = loop {
                let d = rng.gen_range(imin(n)..=imax(n));
                if d != 0 {
                    break d;
                }
            };
            format!("({} {} {})", expr(rng, n, depth - 1), op, d)
        }
        _ => format!("({} {} {})", expr(rng, n, depth - 1), op, expr(rng, n, depth - 1)),
    }
}

fn address(rng: &mut impl Rng, n: u32) -> String {
    if rng.gen_bool(0.7) {
        format!("(m Add {})", expr(rng, n, 1))
    } else {
        expr(rng, n, 1)
    }
}

fn target(rng: &mut impl Rng, at: usize, len: usize, loops: bool) -> String {
    let lo = if loops { 0 } else { at + 1 };
    let t = rng.gen_range(lo..=len);
    if t == len {
        "end".to_string()
    } else {
        t.to_string()
    }
}

/// Source text of a random program. Division and remainder only use
/// nonzero constant divisors, and without `loops` every jump goes forward.
pub fn random_source(rng: &mut impl Rng, params: &GenParams) -> String {
    let n = params.width;
    let len = rng.gen_range(1..=params.max_len);
    let mut out = String::new();
    for at in 0..len {
        let dst = ["x", "y", "z", "s0", "s1"].choose(rng).expect("nonempty");
        let instr = match rng.gen_range(0..100) {
            0..=29 => format!("{} <- {}", dst, expr(rng, n, 2)),
            30..=49 => format!("load {}, {}", dst, address(rng, n)),
            50..=59 => format!("store {}, {}", REGS.choose(rng).expect("nonempty"), address(rng, n)),
            60..=76 => format!("beqz {}, {}", REGS.choose(rng).expect("nonempty"), target(rng, at, len, params.loops)),
            77..=86 => format!("cmov {}, {} if {}", dst, expr(rng, n, 1), expr(rng, n, 1)),
            87..=91 => "fence".to_string(),
            92..=95 => format!("jmp {}", target(rng, at, len, params.loops)),
            _ => format!("alloc {}, {}", dst, rng.gen_range(1..=2)),
        };
        out.push_str(&format!("{}: {}\n", at, instr));
    }
    out
}

/// A random unlinked program together with the fixed policy.
pub fn random_program(rng: &mut impl Rng, params: &GenParams) -> (Program, Policy) {
    let src = random_source(rng, params);
    let p = parse_program(&src).unwrap_or_else(|e| panic!("generated program does not parse: {}\n{}", e, src));
    (p, policy(params.width))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{Instr, Target};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generated_programs_are_loop_free_and_link() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..300 {
            let (p, policy) = random_program(&mut rng, &GenParams::default());
            assert!(p.len() <= 8 && !p.is_empty());
            for (l, i) in p.instrs().iter().enumerate() {
                if let Instr::Jmp { target: Target::Loc(t) } | Instr::Beqz { target: Target::Loc(t), .. } = i {
                    assert!(*t > l);
                }
            }
            assert!(crate::absint::prepare(&p, &policy, 3).is_ok());
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = random_source(&mut ChaCha8Rng::seed_from_u64(3), &GenParams::default());
        let b = random_source(&mut ChaCha8Rng::seed_from_u64(3), &GenParams::default());
        assert_eq!(a, b);
    }
}
