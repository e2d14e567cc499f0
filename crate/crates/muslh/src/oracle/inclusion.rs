//! Checks that concrete states lie in the concretization of the abstract
//! state at their location.

use rand::Rng;

use crate::absint::{AbsState, Fixpoint};
use crate::concrete::{step, Directive, State, Val};
use crate::lang::{Instr, Program};

/// First component of a concrete state that the abstract state misses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InclusionFailure {
    pub pc: usize,
    pub what: String,
}

/// True when every register and allocated cell of `s` is described by `a`.
/// `ε` values are described by every abstract value.
pub fn state_included(p: &Program, a: &AbsState, s: &State) -> Result<(), String> {
    let n = p.width();
    let bases_of = |site: usize| s.blocks_of(site);
    for r in 0..p.num_regs() {
        if let Val::Num(v) = s.regs[r] {
            if !a.vals[r].contains(n, v, &bases_of) {
                return Err(format!("register {} = {} not in {}", p.reg_names()[r], v, a.vals[r]));
            }
        }
        if !s.reg_taints[r].leq(&a.taints[r]) {
            return Err(format!(
                "taint of register {} = {} not below {}",
                p.reg_names()[r],
                s.reg_taints[r].compact(),
                a.taints[r].compact()
            ));
        }
    }
    for &(site, start) in &s.allocs {
        let size = p.alloc_size(site).unwrap_or(0);
        for off in 0..size {
            let addr = start.wrapping_add(off);
            let (v, t) = s.read(addr, n);
            let av = a.mem_v.cell(site, off as i64, n);
            if let Val::Num(v) = v {
                if !av.contains(n, v, &bases_of) {
                    return Err(format!("cell {}[{}] = {} not in {}", p.base_name(site), off, v, av));
                }
            }
            let at = a.mem_t.cell(site, off as i64, n);
            if !t.leq(&at) {
                return Err(format!(
                    "taint of cell {}[{}] = {} not below {}",
                    p.base_name(site),
                    off,
                    t.compact(),
                    at.compact()
                ));
            }
        }
    }
    Ok(())
}

/// Runs one random trace from `s0`, forcing each branch with probability
/// `force`, and checks every visited state against `fx`.
pub fn check_random_trace(
    p: &Program,
    fx: &Fixpoint,
    s0: &State,
    rng: &mut impl Rng,
    force: f64,
    max_steps: usize,
) -> Result<usize, InclusionFailure> {
    let mut s = s0.clone();
    let mut visited = 0;
    while let Some(pc) = s.pc {
        let a =
            fx.get(pc).ok_or_else(|| InclusionFailure { pc, what: "location unreachable in the analysis".into() })?;
        state_included(p, a, &s).map_err(|what| InclusionFailure { pc, what })?;
        visited += 1;
        if visited > max_steps {
            break;
        }
        let d = if matches!(p.instr(pc), Instr::Beqz { .. }) && rng.gen_bool(force) {
            Directive::Force
        } else {
            Directive::Step
        };
        match step(p, &s, d) {
            Ok((t, _)) => s = t,
            Err(_) => break,
        }
    }
    Ok(visited)
}
