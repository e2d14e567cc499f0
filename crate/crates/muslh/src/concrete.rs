//! Concrete speculative execution with bit-level taint tracking.
//!
//! A [`State`] holds register and memory values, their taints, the program
//! counter, the allocation pointer and the misspeculation flag. [`step`]
//! applies one directive and returns the successor with the emitted
//! observation; [`run`] executes a directive list.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::absdom::interval::{to_signed, to_word};
use crate::lang::{Expr, Instr, Policy, Program, Reg, Secrecy, Target};
use crate::taint::{concrete_apply, taint_apply, Label, TaintVector};

/// A machine word, or the empty value produced by a masked load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Val {
    Num(u64),
    Eps,
}

impl Val {
    pub fn num(self) -> Option<u64> {
        match self {
            Val::Num(v) => Some(v),
            Val::Eps => None,
        }
    }
}

impl fmt::Display for Val {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Val::Num(v) => write!(f, "{}", v),
            Val::Eps => f.write_str("ε"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Directive {
    Step,
    Force,
}

impl Directive {
    pub fn parse(s: &str) -> Option<Directive> {
        match s {
            "s" | "step" => Some(Directive::Step),
            "f" | "force" => Some(Directive::Force),
            _ => None,
        }
    }
}

impl fmt::Display for Directive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Directive::Step => "step",
            Directive::Force => "force",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ObsKind {
    Silent,
    Branch,
    Load,
    Store,
}

/// An observation with the full-width value and taint. Memory accesses
/// reveal only the configured address bits; see [`Obs::project`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Obs {
    pub kind: ObsKind,
    pub value: Val,
    pub taint: TaintVector,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BitsError {
    #[error("observation bits {0}:{1} are not a range inside width {2}")]
    Invalid(u32, u32, u32),
}

/// Validates an inclusive observed bit range for width `n`.
pub fn check_bits(bits: (u32, u32), n: u32) -> Result<(u32, u32), BitsError> {
    if bits.0 <= bits.1 && bits.1 < n {
        Ok(bits)
    } else {
        Err(BitsError::Invalid(bits.0, bits.1, n))
    }
}

impl Obs {
    pub fn silent() -> Obs {
        Obs { kind: ObsKind::Silent, value: Val::Eps, taint: TaintVector::new(Vec::new()) }
    }

    /// The attacker-visible part: bits `a..=b` of a memory address and its
    /// taint, or the unchanged branch observation.
    pub fn project(&self, bits: (u32, u32)) -> Obs {
        match self.kind {
            ObsKind::Load | ObsKind::Store => {
                let (a, b) = bits;
                let width = b - a + 1;
                let mask = if width >= 64 { u64::MAX } else { (1u64 << width) - 1 };
                let value = match self.value {
                    Val::Num(v) => Val::Num((v >> a) & mask),
                    Val::Eps => Val::Eps,
                };
                Obs { kind: self.kind, value, taint: self.taint.slice(a, b) }
            }
            _ => self.clone(),
        }
    }

    pub fn has_h(&self, bits: (u32, u32)) -> bool {
        self.kind != ObsKind::Silent && self.project(bits).taint.has_h()
    }
}

impl fmt::Display for Obs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ObsKind::Silent => f.write_str("ε"),
            ObsKind::Branch => write!(f, "branch {}", self.value),
            ObsKind::Load => write!(f, "load {}", self.value),
            ObsKind::Store => write!(f, "store {}", self.value),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExecError {
    #[error("the execution has already terminated")]
    Terminated,
    #[error("force directive at location {0}, which is not a branch")]
    ForceAtNonBranch(usize),
    #[error("division by zero at location {0}")]
    DivisionByZero(usize),
    #[error("allocation at location {0} exceeds the address space")]
    OutOfMemory(usize),
}

/// `⟨ρ, µ, f⟩` together with the allocation log used to map addresses back
/// to allocation sites.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct State {
    /// `None` once execution has stopped.
    pub pc: Option<usize>,
    pub regs: Vec<Val>,
    pub reg_taints: Vec<TaintVector>,
    pub mem: BTreeMap<u64, (Val, TaintVector)>,
    /// Next free address.
    pub next: u64,
    pub misspec: bool,
    /// `(site, start address)` of every executed allocation, oldest first.
    pub allocs: Vec<(usize, u64)>,
}

/// Explicit initial values. Missing registers and cells default to zero.
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize)]
pub struct InitValues {
    pub regs: BTreeMap<String, u64>,
    /// Cell values per region name.
    pub cells: BTreeMap<String, Vec<u64>>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InitError {
    #[error("unknown register or region `{0}`")]
    Unknown(String),
    #[error("cell {index} is outside region `{name}`")]
    Cell { name: String, index: usize },
    #[error("cannot parse initial assignment `{0}`")]
    Parse(String),
}

impl InitValues {
    /// Parses `name=value` and `region[index]=value` items separated by
    /// commas. Values may be negative or hexadecimal.
    pub fn parse(s: &str, n: u32) -> Result<InitValues, InitError> {
        let mut out = InitValues::default();
        for item in s.split(',').map(str::trim).filter(|x| !x.is_empty()) {
            let bad = || InitError::Parse(item.to_string());
            let (lhs, rhs) = item.split_once('=').ok_or_else(bad)?;
            let v = to_word(n, crate::lang::parse_int(rhs.trim()).ok_or_else(bad)?);
            let lhs = lhs.trim();
            match lhs.split_once('[') {
                Some((name, rest)) => {
                    let idx: usize = rest.strip_suffix(']').and_then(|i| i.trim().parse().ok()).ok_or_else(bad)?;
                    let cells = out.cells.entry(name.trim().to_string()).or_default();
                    if cells.len() <= idx {
                        cells.resize(idx + 1, 0);
                    }
                    cells[idx] = v;
                }
                None => {
                    out.regs.insert(lhs.to_string(), v);
                }
            }
        }
        Ok(out)
    }
}

fn policy_taint(s: Secrecy, n: u32) -> TaintVector {
    TaintVector::uniform(n, if s == Secrecy::Public { Label::L } else { Label::H })
}

/// Start address of each region: the prologue allocates them in order from
/// address zero.
pub fn region_bases(p: &Program) -> Vec<u64> {
    let mut at = 0u64;
    p.regions()
        .iter()
        .map(|r| {
            let b = at;
            at = at.saturating_add(r.size);
            b
        })
        .collect()
}

impl State {
    /// The initial state of a linked program: declared registers carry the
    /// policy taint, other registers are secret, and region cells are
    /// populated at the addresses the prologue will assign.
    pub fn initial(p: &Program, policy: &Policy, init: &InitValues) -> Result<State, InitError> {
        let n = p.width();
        let mut regs = vec![Val::Num(0); p.num_regs()];
        let mut reg_taints = vec![TaintVector::uniform(n, Label::H); p.num_regs()];
        for d in &policy.regs {
            if let Some(r) = p.reg(&d.name) {
                reg_taints[r.index()] = policy_taint(d.secrecy, n);
            }
        }
        for (name, v) in &init.regs {
            let r = p.reg(name).ok_or_else(|| InitError::Unknown(name.clone()))?;
            regs[r.index()] = Val::Num(*v & word_mask(n));
        }
        let bases = region_bases(p);
        let mut mem = BTreeMap::new();
        for (i, region) in p.regions().iter().enumerate() {
            let t = policy_taint(region.secrecy, n);
            let given = init.cells.get(&region.name);
            if let Some(g) = given {
                if g.len() as u64 > region.size {
                    return Err(InitError::Cell { name: region.name.clone(), index: g.len() - 1 });
                }
            }
            for off in 0..region.size {
                let v = given.and_then(|g| g.get(off as usize)).copied().unwrap_or(0);
                mem.insert(bases[i].wrapping_add(off) & word_mask(n), (Val::Num(v & word_mask(n)), t.clone()));
            }
        }
        for name in init.cells.keys() {
            if !p.regions().iter().any(|r| &r.name == name) {
                return Err(InitError::Unknown(name.clone()));
            }
        }
        Ok(State {
            pc: (!p.is_empty()).then_some(0),
            regs,
            reg_taints,
            mem,
            next: 0,
            misspec: false,
            allocs: Vec::new(),
        })
    }

    pub fn reg(&self, r: Reg) -> Val {
        self.regs[r.index()]
    }

    pub fn taint(&self, r: Reg) -> &TaintVector {
        &self.reg_taints[r.index()]
    }

    /// Value and taint at `addr`; unwritten addresses hold a public zero.
    pub fn read(&self, addr: u64, n: u32) -> (Val, TaintVector) {
        self.mem.get(&addr).cloned().unwrap_or_else(|| (Val::Num(0), TaintVector::uniform(n, Label::L)))
    }

    /// Start addresses of every block allocated at `site`.
    pub fn blocks_of(&self, site: usize) -> Vec<u64> {
        self.allocs.iter().filter(|(s, _)| *s == site).map(|(_, a)| *a).collect()
    }
}

/// True when `s` is an initial state agreeing with `policy`: it starts at
/// location 0 without misspeculation, and declared registers and region
/// cells lie in their policy ranges with the policy taints.
pub fn agrees(p: &Program, policy: &Policy, s: &State) -> bool {
    let n = p.width();
    let in_range = |v: Val, r: Option<(i64, i64)>| match (v, r) {
        (Val::Num(v), Some((lo, hi))) => (lo..=hi).contains(&to_signed(n, v)),
        (Val::Num(_), None) => true,
        (Val::Eps, _) => false,
    };
    if s.misspec || s.pc != (!p.is_empty()).then_some(0) || s.next != 0 {
        return false;
    }
    let regs_ok = policy.regs.iter().all(|d| match p.reg(&d.name) {
        Some(r) => in_range(s.reg(r), d.range) && *s.taint(r) == policy_taint(d.secrecy, n),
        None => true,
    });
    let bases = region_bases(p);
    let cells_ok = p.regions().iter().enumerate().all(|(i, r)| {
        (0..r.size).all(|off| {
            let (v, t) = s.read(bases[i].wrapping_add(off) & word_mask(n), n);
            in_range(v, r.range) && t == policy_taint(r.secrecy, n)
        })
    });
    regs_ok && cells_ok
}

fn word_mask(n: u32) -> u64 {
    if n >= 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

/// Division or remainder by zero during expression evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DivisionByZero;

/// Evaluates `e`; any `ε` operand yields `ε`.
pub fn eval(n: u32, s: &State, e: &Expr) -> Result<Val, DivisionByZero> {
    Ok(match e {
        Expr::Const(c) => Val::Num(to_word(n, *c)),
        Expr::Reg(r) => s.reg(*r),
        Expr::Not(a) => match eval(n, s, a)? {
            Val::Num(v) => Val::Num(!v & word_mask(n)),
            Val::Eps => Val::Eps,
        },
        Expr::Bin(op, a, b) => match (eval(n, s, a)?, eval(n, s, b)?) {
            (Val::Num(x), Val::Num(y)) => Val::Num(concrete_apply(*op, n, x, y).ok_or(DivisionByZero)?),
            _ => Val::Eps,
        },
    })
}

pub fn eval_taint(n: u32, s: &State, e: &Expr) -> TaintVector {
    match e {
        Expr::Const(c) => TaintVector::concrete(n, to_word(n, *c)),
        Expr::Reg(r) => s.taint(*r).clone(),
        Expr::Not(a) => taint_apply(crate::lang::Op::Not, &eval_taint(n, s, a), None).expect("equal widths"),
        Expr::Bin(op, a, b) => {
            taint_apply(*op, &eval_taint(n, s, a), Some(&eval_taint(n, s, b))).expect("equal widths")
        }
    }
}

fn high(n: u32) -> TaintVector {
    TaintVector::uniform(n, Label::H)
}

fn masked_obs(kind: ObsKind, n: u32) -> Obs {
    Obs { kind, value: Val::Num(word_mask(n)), taint: TaintVector::concrete(n, word_mask(n)) }
}

/// One transition under directive `d`.
pub fn step(p: &Program, s: &State, d: Directive) -> Result<(State, Obs), ExecError> {
    let loc = s.pc.ok_or(ExecError::Terminated)?;
    let n = p.width();
    let instr = p.instr(loc);
    if d == Directive::Force && !matches!(instr, Instr::Beqz { .. }) {
        return Err(ExecError::ForceAtNonBranch(loc));
    }
    let div = |_: DivisionByZero| ExecError::DivisionByZero(loc);
    let next = (loc + 1 < p.len()).then_some(loc + 1);
    let mut t = s.clone();
    t.pc = next;
    let obs = match instr {
        Instr::Asgn { dst, expr } => {
            t.regs[dst.index()] = eval(n, s, expr).map_err(div)?;
            let taint = eval_taint(n, s, expr);
            t.reg_taints[dst.index()] = crate::absint::apply_sanitize(&taint, p.sanitizer(loc));
            Obs::silent()
        }
        Instr::Load { dst, addr, hardened } => {
            if *hardened && s.misspec {
                t.regs[dst.index()] = Val::Eps;
                t.reg_taints[dst.index()] = TaintVector::uniform(n, Label::Bot);
                masked_obs(ObsKind::Load, n)
            } else {
                let a = eval(n, s, addr).map_err(div)?;
                let ta = eval_taint(n, s, addr);
                let (v, tv) = match a {
                    Val::Num(a) => s.read(a, n),
                    Val::Eps => (Val::Eps, TaintVector::uniform(n, Label::Bot)),
                };
                t.regs[dst.index()] = v;
                t.reg_taints[dst.index()] = if ta.has_h() { high(n) } else { tv };
                Obs { kind: ObsKind::Load, value: a, taint: ta }
            }
        }
        Instr::Store { src, addr, hardened } => {
            if *hardened && s.misspec {
                masked_obs(ObsKind::Store, n)
            } else {
                let a = eval(n, s, addr).map_err(div)?;
                let ta = eval_taint(n, s, addr);
                if let Val::Num(a) = a {
                    let tv = if ta.has_h() { high(n) } else { s.taint(*src).clone() };
                    t.mem.insert(a, (s.reg(*src), tv));
                }
                Obs { kind: ObsKind::Store, value: a, taint: ta }
            }
        }
        Instr::Jmp { target } => {
            t.pc = match target {
                Target::Loc(l) => Some(*l),
                Target::End => None,
            };
            Obs::silent()
        }
        Instr::Beqz { cond, target, hardened } => {
            let (v, taint) = if *hardened && s.misspec {
                (Val::Num(word_mask(n)), TaintVector::concrete(n, word_mask(n)))
            } else {
                (s.reg(*cond), s.taint(*cond).clone())
            };
            let zero = v == Val::Num(0);
            let jump = match d {
                Directive::Step => zero,
                Directive::Force => !zero,
            };
            if jump {
                t.pc = match target {
                    Target::Loc(l) => Some(*l),
                    Target::End => None,
                };
            }
            if d == Directive::Force {
                t.misspec = true;
            }
            Obs { kind: ObsKind::Branch, value: v, taint }
        }
        Instr::CondAsgn { dst, expr, cond } => {
            let c = eval(n, s, cond).map_err(div)?;
            let tc = eval_taint(n, s, cond);
            match c {
                Val::Eps => {
                    t.regs[dst.index()] = Val::Eps;
                    t.reg_taints[dst.index()] = TaintVector::uniform(n, Label::Bot);
                }
                Val::Num(0) => {}
                Val::Num(_) => {
                    t.regs[dst.index()] = eval(n, s, expr).map_err(div)?;
                    t.reg_taints[dst.index()] = eval_taint(n, s, expr);
                }
            }
            if tc.has_h() {
                t.reg_taints[dst.index()] = high(n);
            }
            Obs::silent()
        }
        Instr::Fence => {
            if s.misspec {
                t.pc = None;
            }
            Obs::silent()
        }
        Instr::Alloc { dst, size } => {
            let end = s.next as u128 + *size as u128;
            if end > word_mask(n) as u128 + 1 {
                return Err(ExecError::OutOfMemory(loc));
            }
            t.regs[dst.index()] = Val::Num(s.next);
            t.reg_taints[dst.index()] = TaintVector::uniform(n, Label::L);
            t.next = end as u64;
            t.allocs.push((loc, s.next));
            Obs::silent()
        }
    };
    Ok((t, obs))
}

/// One executed transition of a trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceStep {
    pub pc: usize,
    pub directive: Directive,
    pub obs: Obs,
    pub state: State,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub initial: State,
    pub steps: Vec<TraceStep>,
}

impl Trace {
    pub fn last(&self) -> &State {
        self.steps.last().map(|s| &s.state).unwrap_or(&self.initial)
    }

    pub fn observations(&self) -> impl Iterator<Item = &Obs> {
        self.steps.iter().map(|s| &s.obs)
    }
}

/// Runs until termination or until the directives run out.
pub fn run(p: &Program, s0: &State, directives: &[Directive]) -> Result<Trace, ExecError> {
    let mut trace = Trace { initial: s0.clone(), steps: Vec::new() };
    for d in directives {
        let cur = trace.last();
        let Some(pc) = cur.pc else { break };
        let (state, obs) = step(p, cur, *d)?;
        trace.steps.push(TraceStep { pc, directive: *d, obs, state });
    }
    Ok(trace)
}

/// Runs with `step` directives only, up to `max_steps` transitions.
pub fn run_sequential(p: &Program, s0: &State, max_steps: usize) -> Result<Trace, ExecError> {
    run(p, s0, &vec![Directive::Step; max_steps])
}

/// Renders a trace as `pc | instr | directive | observation | taint` lines.
pub fn render_trace(p: &Program, trace: &Trace, bits: (u32, u32)) -> String {
    let mut out = String::new();
    for st in &trace.steps {
        let o = st.obs.project(bits);
        let taint = if o.kind == ObsKind::Silent { "-".to_string() } else { o.taint.compact() };
        out.push_str(&format!(
            "{} | {} | {} | {} | {}\n",
            p.label(st.pc),
            p.render_instr(st.pc),
            st.directive,
            o,
            taint
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{parse_policy, parse_program};

    fn setup(src: &str, pol: &str) -> (Program, Policy) {
        let policy = parse_policy(pol).unwrap();
        (parse_program(src).unwrap().link(&policy, 4).unwrap(), policy)
    }

    const GADGET: &str = "0: c <- (x Lshr 2)\n1: beqz c, 3\n2: jmp end\n3: load s, (a Add x)\n4: load y, (b Add s)\n";
    const GADGET_POLICY: &str = "width 4\nreg x public\nregion a 4 public\nregion s0 4 secret\nregion b 4 public\n";

    #[test]
    fn forced_branch_leaks_the_secret() {
        let (p, policy) = setup(GADGET, GADGET_POLICY);
        let init = InitValues::parse("x=4,s0[0]=3", 4).unwrap();
        let s0 = State::initial(&p, &policy, &init).unwrap();
        assert!(agrees(&p, &policy, &s0));
        let ds = [Directive::Step, Directive::Step, Directive::Step, Directive::Step, Directive::Force];
        let tr = run(&p, &s0, &[ds.as_slice(), &[Directive::Step; 3]].concat()).unwrap();
        let last = tr.steps.last().unwrap();
        assert!(last.obs.kind == ObsKind::Load && last.obs.taint.has_h());
        assert!(tr.steps[tr.steps.len() - 2].state.misspec);
        assert_eq!(last.state.pc, None);
    }

    #[test]
    fn sequential_branch_on_zero_jumps() {
        let (p, policy) = setup("0: beqz x, 2\n1: y <- 1\n2: y <- 2\n", "reg x public\n");
        let s0 = State::initial(&p, &policy, &InitValues::default()).unwrap();
        let (s1, o) = step(&p, &s0, Directive::Step).unwrap();
        assert_eq!(s1.pc, Some(2));
        assert_eq!(o.kind, ObsKind::Branch);
        assert_eq!(o.value, Val::Num(0));
        let (f1, _) = step(&p, &s0, Directive::Force).unwrap();
        assert_eq!(f1.pc, Some(1));
        assert!(f1.misspec);
    }

    #[test]
    fn fence_stops_misspeculation() {
        let (p, policy) = setup("0: beqz x, 2\n1: fence\n2: fence\n", "reg x public\n");
        let s0 = State::initial(&p, &policy, &InitValues::default()).unwrap();
        let tr = run(&p, &s0, &[Directive::Force, Directive::Step, Directive::Step]).unwrap();
        assert_eq!(tr.steps.len(), 2);
        assert_eq!(tr.last().pc, None);
        let seq = run_sequential(&p, &s0, 10).unwrap();
        assert_eq!(seq.steps.len(), 2);
    }

    #[test]
    fn hardened_instructions_under_misspeculation() {
        let src =
            "0: beqz x, 4\n1: hardened load y, (a Add s)\n2: hardened store s, a\n3: hardened beqz s, 0\n4: fence\n";
        let (p, policy) = setup(src, "reg x public\nregion a 2 public\n");
        let s0 = State::initial(&p, &policy, &InitValues::parse("s=1", 4).unwrap()).unwrap();
        let tr = run(&p, &s0, &[Directive::Step, Directive::Force, Directive::Step, Directive::Step, Directive::Step])
            .unwrap();
        let y = p.reg("y").unwrap();
        let st = &tr.steps[2];
        assert_eq!(st.state.reg(y), Val::Eps);
        assert!(st.state.taint(y).is_uniform(Label::Bot));
        assert_eq!(st.obs.value, Val::Num(15));
        assert!(st.obs.taint.is_all_concrete());
        assert_eq!(tr.steps[3].state.mem, tr.steps[2].state.mem);
        assert_eq!(tr.steps[4].obs.value, Val::Num(15));
        assert!(!tr.steps.iter().any(|s| s.obs.has_h((0, 3))));
        let s1 = State::initial(&p, &policy, &InitValues::parse("s=1,x=1,a[1]=5", 4).unwrap()).unwrap();
        let seq = run_sequential(&p, &s1, 3).unwrap();
        assert_eq!(seq.steps[2].state.reg(y), Val::Num(5));
    }

    #[test]
    fn eps_propagates_and_branches_do_not_halt() {
        let src = "0: beqz x, 5\n1: hardened load y, a\n2: z <- (y Add 1)\n3: beqz z, 5\n4: fence\n5: fence\n";
        let (p, policy) = setup(src, "reg x public\nregion a 1 public\n");
        let s0 = State::initial(&p, &policy, &InitValues::default()).unwrap();
        let ds = [Directive::Step, Directive::Force, Directive::Step, Directive::Step, Directive::Force];
        let tr = run(&p, &s0, &ds).unwrap();
        assert_eq!(tr.steps[3].state.reg(p.reg("z").unwrap()), Val::Eps);
        assert_eq!(tr.steps[4].obs.value, Val::Eps);
        assert_eq!(tr.last().pc, Some(p.internal(5)));
    }

    #[test]
    fn conditional_assignment_taints() {
        let (p, policy) = setup("0: cmov d, y if b\n", "reg b public\nreg y public\nreg d public\n");
        let mut init = InitValues::parse("y=7,d=2", 4).unwrap();
        let s0 = State::initial(&p, &policy, &init).unwrap();
        let (s1, _) = step(&p, &s0, Directive::Step).unwrap();
        assert_eq!(s1.reg(p.reg("d").unwrap()), Val::Num(2));
        init.regs.insert("b".into(), 1);
        let (s2, _) = step(&p, &State::initial(&p, &policy, &init).unwrap(), Directive::Step).unwrap();
        assert_eq!(s2.reg(p.reg("d").unwrap()), Val::Num(7));
        let (p2, pol2) = setup("0: cmov d, y if b\n", "reg y public\nreg d public\n");
        let (s3, _) = step(&p2, &State::initial(&p2, &pol2, &InitValues::default()).unwrap(), Directive::Step).unwrap();
        assert!(s3.taint(p2.reg("d").unwrap()).is_uniform(Label::H));
    }

    #[test]
    fn allocation_and_errors() {
        let (p, policy) = setup("0: alloc x, 10\n1: alloc y, 7\n", "region a 3 public\n");
        let s0 = State::initial(&p, &policy, &InitValues::default()).unwrap();
        let tr = run_sequential(&p, &s0, 3);
        assert_eq!(tr, Err(ExecError::OutOfMemory(2)));
        let tr = run(&p, &s0, &[Directive::Step; 2]).unwrap();
        assert_eq!(tr.last().reg(p.reg("x").unwrap()), Val::Num(3));
        assert_eq!(tr.last().allocs, vec![(0, 0), (1, 3)]);
        assert_eq!(step(&p, &s0, Directive::Force), Err(ExecError::ForceAtNonBranch(0)));
        let (q, qp) = setup("0: x <- (1 Div y)\n", "");
        let q0 = State::initial(&q, &qp, &InitValues::default()).unwrap();
        assert_eq!(step(&q, &q0, Directive::Step), Err(ExecError::DivisionByZero(0)));
    }

    #[test]
    fn projection() {
        let o = Obs { kind: ObsKind::Load, value: Val::Num(0b0111), taint: TaintVector::parse_msb("HLLL").unwrap() };
        let pr = o.project((2, 3));
        assert_eq!(pr.value, Val::Num(0b01));
        assert_eq!(pr.taint, TaintVector::parse_msb("HL").unwrap());
        assert_eq!(o.project((0, 3)), o);
        assert!(check_bits((3, 2), 4).is_err() && check_bits((0, 4), 4).is_err());
    }

    #[test]
    fn init_rejects_unknown_names() {
        let (p, policy) = setup("0: fence\n", "region a 2 public\n");
        assert!(State::initial(&p, &policy, &InitValues::parse("zz=1", 4).unwrap()).is_err());
        assert!(State::initial(&p, &policy, &InitValues::parse("a[5]=1", 4).unwrap()).is_err());
        assert!(InitValues::parse("a[x]=1", 4).is_err());
    }
}
