//! Abstract sequential and speculative semantics over base-offset values
//! and bit-level taints, and the worklist fixpoint engine.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::absdom::interval::{to_signed, to_word, Interval};
use crate::absdom::{value_apply, AbsMemory, AbsVal, Di};
use crate::lang::{Expr, Instr, Op, Policy, Program, Reg, Sanitize, Secrecy, Target};
use crate::taint::{sanitize_ceil_align, sanitize_range, taint_apply, Label, TaintVector};

/// Default number of strict growths of a location before widening.
pub const DEFAULT_WIDEN_THRESHOLD: u32 = 16;
/// Default bound on worklist iterations.
pub const DEFAULT_MAX_ITERATIONS: usize = 2_000_000;

/// Default attacker-visible address bits: a 64-byte cache line hides the
/// six low bits when the word is wide enough.
pub fn default_obs_bits(n: u32) -> (u32, u32) {
    ((n - 1).min(6), n - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AbsConfig {
    /// Inclusive range `(a, b)` of observed address bits.
    pub obs_bits: (u32, u32),
    pub widen_threshold: u32,
    pub max_iterations: usize,
}

impl AbsConfig {
    pub fn for_width(n: u32) -> AbsConfig {
        AbsConfig {
            obs_bits: default_obs_bits(n),
            widen_threshold: DEFAULT_WIDEN_THRESHOLD,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("fixpoint iteration budget of {0} steps exceeded")]
    Budget(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Seq,
    Spec,
}

/// `⟨ρ̂, µ̂, M^V, M^T⟩` at one location.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsState {
    pub vals: Vec<AbsVal>,
    pub taints: Vec<TaintVector>,
    pub mem_v: AbsMemory<AbsVal>,
    pub mem_t: AbsMemory<TaintVector>,
}

impl AbsState {
    pub fn join(&self, other: &AbsState) -> AbsState {
        AbsState {
            vals: self.vals.iter().zip(&other.vals).map(|(a, b)| a.join(b).hull_eps()).collect(),
            taints: self.taints.iter().zip(&other.taints).map(|(a, b)| a.join(b)).collect(),
            mem_v: self.mem_v.join(&other.mem_v),
            mem_t: self.mem_t.join(&other.mem_t),
        }
    }

    pub fn leq(&self, other: &AbsState) -> bool {
        self.vals.iter().zip(&other.vals).all(|(a, b)| a.leq(b))
            && self.taints.iter().zip(&other.taints).all(|(a, b)| a.leq(b))
            && self.mem_v.leq(&other.mem_v)
            && self.mem_t.leq(&other.mem_t)
    }

    /// Widens every value component of `new` that grew past `old`.
    pub fn widen(old: &AbsState, new: &AbsState, n: u32) -> AbsState {
        AbsState {
            vals: old.vals.iter().zip(&new.vals).map(|(a, b)| AbsVal::widen(a, b, n)).collect(),
            taints: new.taints.clone(),
            mem_v: old.mem_v.combine(&new.mem_v, |a, b| AbsVal::widen(a, b, n)),
            mem_t: new.mem_t.clone(),
        }
    }

    pub fn val(&self, r: Reg) -> &AbsVal {
        &self.vals[r.index()]
    }

    pub fn taint(&self, r: Reg) -> &TaintVector {
        &self.taints[r.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AbsObsKind {
    Silent,
    Branch,
    Load,
    Store,
}

/// Abstract observation `branch ν:t̂`, `load ν:t̂ [a,b]` or `store ν:t̂ [a,b]`.
/// `taint` is the full-width taint; [`AbsObs::visible`] applies the slice.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsObs {
    pub kind: AbsObsKind,
    pub value: AbsVal,
    pub taint: TaintVector,
}

impl AbsObs {
    fn silent() -> AbsObs {
        AbsObs { kind: AbsObsKind::Silent, value: AbsVal::bottom(), taint: TaintVector::new(Vec::new()) }
    }

    /// The taint the attacker sees: the bit slice for memory accesses, the
    /// whole vector for branches.
    pub fn visible(&self, bits: (u32, u32)) -> TaintVector {
        match self.kind {
            AbsObsKind::Load | AbsObsKind::Store => self.taint.slice(bits.0, bits.1),
            _ => self.taint.clone(),
        }
    }

    pub fn has_h(&self, bits: (u32, u32)) -> bool {
        self.kind != AbsObsKind::Silent && self.visible(bits).has_h()
    }
}

/// One abstract transition; `target == None` means execution stops.
#[derive(Debug, Clone, PartialEq)]
pub struct Successor {
    pub target: Option<usize>,
    pub state: AbsState,
    pub obs: AbsObs,
}

/// Per-location abstract states; `None` is the bottom state.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    pub states: Vec<Option<AbsState>>,
}

impl Configuration {
    pub fn bottom(len: usize) -> Configuration {
        Configuration { states: vec![None; len] }
    }

    pub fn get(&self, loc: usize) -> Option<&AbsState> {
        self.states.get(loc).and_then(|s| s.as_ref())
    }

    pub fn leq(&self, other: &Configuration) -> bool {
        self.states.iter().zip(&other.states).all(|(a, b)| match (a, b) {
            (None, _) => true,
            (Some(_), None) => false,
            (Some(x), Some(y)) => x.leq(y),
        })
    }
}

/// Result of a fixpoint computation.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixpoint {
    pub config: Configuration,
    pub iterations: usize,
}

impl Fixpoint {
    pub fn get(&self, loc: usize) -> Option<&AbsState> {
        self.config.get(loc)
    }
}

// ---------------------------------------------------------------------------
// Initial states

fn policy_value(range: Option<(i64, i64)>, n: u32) -> AbsVal {
    match range {
        Some((lo, hi)) => AbsVal::range(lo, hi),
        None => AbsVal::top_number(n),
    }
}

fn policy_taint(s: Secrecy, n: u32) -> TaintVector {
    match s {
        Secrecy::Public => TaintVector::uniform(n, Label::L),
        Secrecy::Secret => TaintVector::uniform(n, Label::H),
    }
}

/// The abstract state corresponding to every initial state that agrees
/// with `policy`: declared registers range over their policy values,
/// undeclared ones are secret, region cells follow the policy and cells of
/// program allocations start as public zeros.
pub fn initial_state(p: &Program, policy: &Policy) -> AbsState {
    let n = p.width();
    let mut vals = vec![AbsVal::top_number(n); p.num_regs()];
    let mut taints = vec![TaintVector::uniform(n, Label::H); p.num_regs()];
    for d in &policy.regs {
        if let Some(r) = p.reg(&d.name) {
            vals[r.index()] = policy_value(d.range, n);
            taints[r.index()] = policy_taint(d.secrecy, n);
        }
    }
    let mut mem_v = AbsMemory::new();
    let mut mem_t = AbsMemory::new();
    for site in p.base_set() {
        let size = p.alloc_size(site).unwrap_or(0) as usize;
        let (v, t) = match p.regions().get(site).filter(|_| site < p.prologue()) {
            Some(r) => (policy_value(r.range, n), policy_taint(r.secrecy, n)),
            None => (AbsVal::constant(0), TaintVector::uniform(n, Label::L)),
        };
        mem_v = mem_v.with_site(site, vec![v; size]);
        mem_t = mem_t.with_site(site, vec![t; size]);
    }
    AbsState { vals, taints, mem_v, mem_t }
}

/// `Ω0`: the initial state at location 0, bottom elsewhere.
pub fn initial_config(p: &Program, policy: &Policy) -> Configuration {
    let mut c = Configuration::bottom(p.len());
    if !p.is_empty() {
        c.states[0] = Some(initial_state(p, policy));
    }
    c
}

// ---------------------------------------------------------------------------
// Expressions

fn constant(n: u32, c: i64) -> u64 {
    to_word(n, c)
}

/// Abstract value of `e`; the `ε` component is not hulled.
pub fn eval_value(n: u32, st: &AbsState, e: &Expr) -> AbsVal {
    match e {
        Expr::Const(c) => AbsVal::constant(to_signed(n, constant(n, *c))),
        Expr::Reg(r) => st.val(*r).clone(),
        Expr::Not(a) => {
            let v = eval_value(n, st, a);
            value_apply(Op::Not, n, &v, &v)
        }
        Expr::Bin(op, a, b) => value_apply(*op, n, &eval_value(n, st, a), &eval_value(n, st, b)),
    }
}

pub fn eval_taint(n: u32, st: &AbsState, e: &Expr) -> TaintVector {
    match e {
        Expr::Const(c) => TaintVector::concrete(n, constant(n, *c)),
        Expr::Reg(r) => st.taint(*r).clone(),
        Expr::Not(a) => taint_apply(Op::Not, &eval_taint(n, st, a), None).expect("equal widths"),
        Expr::Bin(op, a, b) => {
            taint_apply(*op, &eval_taint(n, st, a), Some(&eval_taint(n, st, b))).expect("equal widths")
        }
    }
}

/// Applies a sanitization entry to the taint of an assignment.
pub fn apply_sanitize(t: &TaintVector, s: Option<Sanitize>) -> TaintVector {
    match s {
        None => t.clone(),
        Some(s) => {
            let t = sanitize_ceil_align(t, s.clear_low);
            match s.clear_from {
                Some(k) => sanitize_range(&t, k),
                None => t,
            }
        }
    }
}

fn high(n: u32) -> TaintVector {
    TaintVector::uniform(n, Label::H)
}

// ---------------------------------------------------------------------------
// Transitions

fn next_loc(p: &Program, loc: usize) -> Option<usize> {
    (loc + 1 < p.len()).then_some(loc + 1)
}

fn target(t: Target) -> Option<usize> {
    match t {
        Target::Loc(l) => Some(l),
        Target::End => None,
    }
}

/// Recognizes a guard `c <- (y Lshr K)` immediately before the branch on
/// `c`, reached only by falling through. Returns `(y, K)`.
fn shift_guard(p: &Program, loc: usize, cond: Reg) -> Option<(Reg, u32)> {
    if loc == 0 || p.pred(loc).ok()? != BTreeSet::from([loc - 1]) {
        return None;
    }
    match p.instr(loc - 1) {
        Instr::Asgn { dst, expr: Expr::Bin(Op::Lshr, y, k) } if *dst == cond => match (&**y, &**k) {
            (Expr::Reg(y), Expr::Const(k)) if *y != cond && *k >= 0 && (*k as u64) < p.width() as u64 => {
                Some((*y, *k as u32))
            }
            _ => None,
        },
        _ => None,
    }
}

/// Sequential branch refinement. Returns `None` when the successor is
/// infeasible.
fn refine_seq(p: &Program, loc: usize, st: &AbsState, cond: Reg, taken: bool) -> Option<AbsState> {
    let n = p.width();
    let mut out = st.clone();
    let v = crate::absdom::refine_on_branch(st.val(cond), taken, n);
    if v.is_bottom() {
        return None;
    }
    out.vals[cond.index()] = v.hull_eps();
    if let Some((y, k)) = shift_guard(p, loc, cond) {
        let yv = out.val(y);
        if yv.is_number() {
            let low = Di::from_interval(Interval::new(0, (1i64 << k) - 1));
            let r = if taken { yv.meet_eps(&low) } else { yv.meet_eps(&low.complement(n)).hull_eps() };
            if r.is_bottom() {
                return None;
            }
            out.vals[y.index()] = r;
        }
    }
    Some(out)
}

/// All abstract successors of `st` at `loc` under the sequential or
/// speculative rules. The `hardened` marker is ignored here; see
/// [`switch_step`].
pub fn abs_step(p: &Program, st: &AbsState, loc: usize, mode: Mode) -> Vec<Successor> {
    let n = p.width();
    let next = next_loc(p, loc);
    let one = |state: AbsState, obs: AbsObs| vec![Successor { target: next, state, obs }];
    match p.instr(loc) {
        Instr::Asgn { dst, expr } => {
            let mut s = st.clone();
            s.vals[dst.index()] = eval_value(n, st, expr).hull_eps();
            s.taints[dst.index()] = apply_sanitize(&eval_taint(n, st, expr), p.sanitizer(loc));
            one(s, AbsObs::silent())
        }
        Instr::Load { dst, addr, .. } => {
            let nu = eval_value(n, st, addr);
            let t = eval_taint(n, st, addr);
            let mut s = st.clone();
            s.vals[dst.index()] = st.mem_v.load(&nu, n).hull_eps();
            s.taints[dst.index()] = if t.has_h() { high(n) } else { st.mem_t.load(&nu, n) };
            one(s, AbsObs { kind: AbsObsKind::Load, value: nu, taint: t })
        }
        Instr::Store { src, addr, .. } => {
            let nu = eval_value(n, st, addr);
            let t = eval_taint(n, st, addr);
            let t1 = if t.has_h() { high(n) } else { st.taint(*src).clone() };
            let mut s = st.clone();
            s.mem_v = st.mem_v.store(&nu, st.val(*src), n);
            s.mem_t = st.mem_t.store(&nu, &t1, n);
            one(s, AbsObs { kind: AbsObsKind::Store, value: nu, taint: t })
        }
        Instr::CondAsgn { dst, expr, cond } => {
            let v = eval_value(n, st, expr);
            let t = eval_taint(n, st, expr);
            let t1 = eval_taint(n, st, cond);
            let mut s = st.clone();
            s.vals[dst.index()] = st.val(*dst).join(&v).hull_eps();
            s.taints[dst.index()] = if t1.has_h() { high(n) } else { t.join(st.taint(*dst)) };
            one(s, AbsObs::silent())
        }
        Instr::Fence => {
            let mut v = one(st.clone(), AbsObs::silent());
            if mode == Mode::Spec {
                v.push(Successor { target: None, state: st.clone(), obs: AbsObs::silent() });
            }
            v
        }
        Instr::Jmp { target: t } => vec![Successor { target: target(*t), state: st.clone(), obs: AbsObs::silent() }],
        Instr::Beqz { cond, target: t, .. } => {
            let obs = AbsObs { kind: AbsObsKind::Branch, value: st.val(*cond).clone(), taint: st.taint(*cond).clone() };
            let mut out = Vec::with_capacity(2);
            for taken in [true, false] {
                let state = match mode {
                    Mode::Spec => Some(st.clone()),
                    Mode::Seq => refine_seq(p, loc, st, *cond, taken),
                };
                if let Some(state) = state {
                    let tgt = if taken { target(*t) } else { next };
                    out.push(Successor { target: tgt, state, obs: obs.clone() });
                }
            }
            if out.is_empty() {
                out.push(Successor { target: None, state: st.clone(), obs });
            }
            out
        }
        Instr::Alloc { dst, .. } => {
            let mut s = st.clone();
            s.vals[dst.index()] = AbsVal::pointer(loc, Di::point(0));
            s.taints[dst.index()] = TaintVector::uniform(n, Label::L);
            one(s, AbsObs::silent())
        }
    }
}

/// Speculative step of a load or store that will be hardened: the written
/// register takes its value and taint from the sequential post-state, and a
/// store uses the sequential address. A location the sequential analysis
/// never reaches loads `⊥` and stores nothing, since the masked access can
/// only run while misspeculating.
pub fn switch_step(p: &Program, st: &AbsState, loc: usize, seq: &Fixpoint) -> Vec<Successor> {
    let n = p.width();
    let next = next_loc(p, loc);
    let seq_state = seq.get(loc);
    match p.instr(loc) {
        Instr::Load { dst, addr, .. } => {
            let mut s = st.clone();
            let obs = match seq_state {
                Some(q) => {
                    let post = abs_step(p, q, loc, Mode::Seq).remove(0).state;
                    s.vals[dst.index()] = post.val(*dst).clone();
                    s.taints[dst.index()] = post.taint(*dst).clone();
                    AbsObs { kind: AbsObsKind::Load, value: eval_value(n, q, addr), taint: eval_taint(n, q, addr) }
                }
                None => {
                    s.vals[dst.index()] = AbsVal::bottom();
                    s.taints[dst.index()] = TaintVector::uniform(n, Label::Bot);
                    AbsObs {
                        kind: AbsObsKind::Load,
                        value: AbsVal::bottom(),
                        taint: TaintVector::uniform(n, Label::Bot),
                    }
                }
            };
            vec![Successor { target: next, state: s, obs }]
        }
        Instr::Store { src, addr, .. } => {
            let mut s = st.clone();
            let obs = match seq_state {
                Some(q) => {
                    let nu = eval_value(n, q, addr);
                    let t = eval_taint(n, q, addr);
                    let t1 = if t.has_h() { high(n) } else { st.taint(*src).clone() };
                    s.mem_v = st.mem_v.store(&nu, st.val(*src), n);
                    s.mem_t = st.mem_t.store(&nu, &t1, n);
                    AbsObs { kind: AbsObsKind::Store, value: nu, taint: t }
                }
                None => AbsObs {
                    kind: AbsObsKind::Store,
                    value: AbsVal::bottom(),
                    taint: TaintVector::uniform(n, Label::Bot),
                },
            };
            vec![Successor { target: next, state: s, obs }]
        }
        _ => abs_step(p, st, loc, Mode::Spec),
    }
}

// ---------------------------------------------------------------------------
// Configurations and fixpoints

/// One application of the configuration transition: every location
/// receives the join of its predecessors' successors. The entry location
/// keeps its state joined with any incoming edges.
pub fn config_step(p: &Program, omega: &Configuration, mode: Mode) -> Configuration {
    let mut out = Configuration::bottom(p.len());
    if let Some(s0) = omega.get(0) {
        out.states[0] = Some(s0.clone());
    }
    for (j, st) in omega.states.iter().enumerate() {
        let Some(st) = st else { continue };
        for succ in abs_step(p, st, j, mode) {
            if let Some(i) = succ.target {
                out.states[i] = Some(match out.states[i].take() {
                    None => succ.state,
                    Some(old) => old.join(&succ.state),
                });
            }
        }
    }
    out
}

/// Chaotic iteration in reverse post-order. `step` yields the successors
/// of a location's current state; it may carry state of its own.
pub fn solve(
    p: &Program,
    omega0: &Configuration,
    cfg: &AbsConfig,
    step: &mut dyn FnMut(usize, &AbsState) -> Vec<Successor>,
) -> Result<Fixpoint, AnalysisError> {
    let len = p.len();
    let order = p.reverse_post_order();
    let mut rank = vec![0usize; len];
    for (k, l) in order.iter().enumerate() {
        rank[*l] = k;
    }
    let mut states = omega0.states.clone();
    let mut growth = vec![0u32; len];
    let mut work: BTreeSet<(usize, usize)> = (0..len).filter(|l| states[*l].is_some()).map(|l| (rank[l], l)).collect();
    let mut iterations = 0;
    while let Some((_, j)) = work.pop_first() {
        iterations += 1;
        if iterations > cfg.max_iterations {
            return Err(AnalysisError::Budget(cfg.max_iterations));
        }
        let st = states[j].clone().expect("worklist holds reached locations");
        for succ in step(j, &st) {
            let Some(i) = succ.target else { continue };
            let new = match &states[i] {
                None => succ.state,
                Some(old) => {
                    if succ.state.leq(old) {
                        continue;
                    }
                    let joined = old.join(&succ.state);
                    growth[i] += 1;
                    if growth[i] > cfg.widen_threshold {
                        AbsState::widen(old, &joined, p.width())
                    } else {
                        joined
                    }
                }
            };
            states[i] = Some(new);
            work.insert((rank[i], i));
        }
    }
    Ok(Fixpoint { config: Configuration { states }, iterations })
}

/// Least fixpoint (up to widening) of the configuration transition above
/// `omega0`.
pub fn fixpoint(p: &Program, omega0: &Configuration, mode: Mode, cfg: &AbsConfig) -> Result<Fixpoint, AnalysisError> {
    solve(p, omega0, cfg, &mut |j, st| abs_step(p, st, j, mode))
}

// ---------------------------------------------------------------------------
// Sanitization planning

/// Chooses the taint sanitizers of every assignment: the round-up idiom
/// clears the alignment bits, and an assignment whose value is a number
/// below `2^k` in every speculative execution clears bits `k..`.
pub fn sanitize_plan(
    p: &Program,
    policy: &Policy,
    cfg: &AbsConfig,
) -> Result<BTreeMap<usize, Sanitize>, AnalysisError> {
    let n = p.width();
    let mut bare = p.clone();
    bare.set_sanitizers(BTreeMap::new());
    let spec = fixpoint(&bare, &initial_config(&bare, policy), Mode::Spec, cfg)?;
    let mut plan = BTreeMap::new();
    for loc in 0..p.len() {
        let Instr::Asgn { expr, .. } = p.instr(loc) else { continue };
        let mut s = Sanitize::default();
        if let Some(k) = crate::taint::find_ceil_align(p, loc) {
            s.clear_low = k;
        }
        if let Some(st) = spec.get(loc) {
            let v = eval_value(n, st, expr);
            if let (true, Some(h)) = (v.is_number(), v.eps(n).hull()) {
                if h.lo >= 0 {
                    let k = 64 - (h.hi as u64).leading_zeros();
                    if k < n {
                        s.clear_from = Some(k);
                    }
                }
            }
        }
        if s != Sanitize::default() {
            plan.insert(loc, s);
        }
    }
    Ok(plan)
}

/// Links `p` against `policy` and installs the sanitization plan.
pub fn prepare(p: &Program, policy: &Policy, default_width: u32) -> Result<Program, PrepareError> {
    let mut linked = p.link(policy, default_width)?;
    let cfg = AbsConfig::for_width(linked.width());
    let plan = sanitize_plan(&linked, policy, &cfg)?;
    linked.set_sanitizers(plan);
    Ok(linked)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PrepareError {
    #[error(transparent)]
    Policy(#[from] crate::lang::PolicyError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

// ---------------------------------------------------------------------------
// Rendering

/// Renders an abstract value with the program's site names.
pub fn render_value(p: &Program, v: &AbsVal) -> String {
    v.render(&|b| p.base_name(b))
}

/// Human-readable dump of a fixpoint, one block per reached location.
pub fn render_fixpoint(p: &Program, fx: &Fixpoint) -> String {
    let mut out = String::new();
    for (loc, st) in fx.config.states.iter().enumerate() {
        let _ = writeln!(out, "{}: {}", p.label(loc), p.render_instr(loc));
        match st {
            None => {
                let _ = writeln!(out, "    unreachable");
            }
            Some(st) => {
                for (r, name) in p.reg_names().iter().enumerate() {
                    let _ =
                        writeln!(out, "    {} = {} : {}", name, render_value(p, &st.vals[r]), st.taints[r].compact());
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{parse_policy, parse_program};

    fn setup(src: &str, pol: &str) -> (Program, Policy) {
        let policy = parse_policy(pol).unwrap();
        let p = prepare(&parse_program(src).unwrap(), &policy, 8).unwrap();
        (p, policy)
    }

    fn cell(p: &Program, st: &AbsState, name: &str) -> String {
        let r = p.reg(name).unwrap();
        render_value(p, st.val(r))
    }

    #[test]
    fn pointer_example_values() {
        let src = "0: alloc x, 10\n1: y <- (x Add (a Mul 3))\n2: z <- (y Add b)\n3: c <- (a Add b)\n4: d <- c\n5: cmov d, y if b\n6: fence\n";
        let (p, policy) = setup(src, "reg a public 1..2\nreg b public 0..1\n");
        let fx = fixpoint(&p, &initial_config(&p, &policy), Mode::Seq, &AbsConfig::for_width(8)).unwrap();
        let st = fx.get(6).unwrap();
        assert_eq!(cell(&p, st, "y"), "{(x:{[3],[6]})}");
        assert_eq!(cell(&p, st, "z"), "{(x:{[3,4],[6,7]})}");
        assert_eq!(cell(&p, st, "c"), "{(ε:{[1,3]})}");
        assert_eq!(cell(&p, st, "d"), "{(x:{[3],[6]}),(ε:{[1,3]})}");
    }

    #[test]
    fn fence_blocks_only_speculatively() {
        let (p, policy) = setup("0: fence\n1: x <- 1\n", "");
        let st = initial_state(&p, &policy);
        assert_eq!(abs_step(&p, &st, 0, Mode::Seq).len(), 1);
        let spec = abs_step(&p, &st, 0, Mode::Spec);
        assert_eq!(spec.len(), 2);
        assert_eq!(spec[1].target, None);
    }

    #[test]
    fn infeasible_branch_is_dropped() {
        let (p, policy) = setup("0: beqz x, 2\n1: y <- 1\n2: y <- 2\n", "reg x public 5..9\n");
        let st = initial_state(&p, &policy);
        let seq = abs_step(&p, &st, 0, Mode::Seq);
        assert_eq!(seq.len(), 1);
        assert_eq!(seq[0].target, Some(1));
        assert_eq!(abs_step(&p, &st, 0, Mode::Spec).len(), 2);
    }

    #[test]
    fn refined_branch_register_keeps_a_single_eps_interval() {
        let (p, policy) = setup("0: beqz s, 2\n1: beqz m, 2\n2: x <- 0\n", "width 3\nreg s secret\nreg m public\n");
        let fx = fixpoint(&p, &initial_config(&p, &policy), Mode::Seq, &AbsConfig::for_width(3)).unwrap();
        assert_eq!(cell(&p, fx.get(1).unwrap(), "s"), "{(ε:{[-4,3]})}");
        assert!(config_step(&p, &fx.config, Mode::Seq).leq(&fx.config));
    }

    #[test]
    fn shift_guard_bounds_the_index() {
        let src = "0: t <- (i Lshr 3)\n1: beqz t, 3\n2: jmp end\n3: fence\n";
        let (p, policy) = setup(src, "width 16\nreg i public 0..15\n");
        let fx = fixpoint(&p, &initial_config(&p, &policy), Mode::Seq, &AbsConfig::for_width(16)).unwrap();
        assert_eq!(cell(&p, fx.get(3).unwrap(), "i"), "{(ε:{[0,7]})}");
        assert_eq!(cell(&p, fx.get(2).unwrap(), "i"), "{(ε:{[8,15]})}");
        let sp = fixpoint(&p, &initial_config(&p, &policy), Mode::Spec, &AbsConfig::for_width(16)).unwrap();
        assert_eq!(cell(&p, sp.get(3).unwrap(), "i"), "{(ε:{[0,15]})}");
    }

    #[test]
    fn counted_loop_converges_with_and_without_widening() {
        let src = "0: i <- 0\n1: t <- (i Lshr 3)\n2: beqz t, 4\n3: jmp end\n4: i <- (i Add 1)\n5: jmp 1\n";
        let (p, policy) = setup(src, "");
        let mut cfg = AbsConfig::for_width(8);
        let seq = fixpoint(&p, &initial_config(&p, &policy), Mode::Seq, &cfg).unwrap();
        assert_eq!(cell(&p, seq.get(4).unwrap(), "i"), "{(ε:{[0,7]})}");
        let widened = fixpoint(&p, &initial_config(&p, &policy), Mode::Spec, &cfg).unwrap();
        assert_eq!(cell(&p, widened.get(4).unwrap(), "i"), "{(ε:{[-128,127]})}");
        cfg.widen_threshold = u32::MAX;
        let exact = fixpoint(&p, &initial_config(&p, &policy), Mode::Spec, &cfg).unwrap();
        assert!(exact.config.leq(&widened.config));
    }

    #[test]
    fn out_of_bounds_store_havocs_memory() {
        let (p, policy) = setup("0: alloc a, 2\n1: store v, (a Add 2)\n2: load w, a\n", "reg v public 0..3\n");
        let fx = fixpoint(&p, &initial_config(&p, &policy), Mode::Seq, &AbsConfig::for_width(8)).unwrap();
        let st = fx.get(2).unwrap();
        assert!(st.mem_v.cell(0, 0, 8).is_top());
        let post = abs_step(&p, st, 2, Mode::Seq);
        assert!(post[0].state.val(p.reg("w").unwrap()).is_top());
    }

    #[test]
    fn range_sanitizer_is_planned() {
        let (p, _) = setup("0: w <- (1 Shl k)\n", "width 16\nreg k secret 1..6\n");
        assert_eq!(p.sanitizer(0), Some(Sanitize { clear_low: 0, clear_from: Some(7) }));
    }

    #[test]
    fn config_step_populates_successors_of_the_entry() {
        let (p, policy) = setup("0: x <- 1\n1: beqz x, 3\n2: x <- 2\n3: fence\n", "");
        let c1 = config_step(&p, &initial_config(&p, &policy), Mode::Spec);
        assert!(c1.get(0).is_some() && c1.get(1).is_some());
        assert!(c1.get(2).is_none() && c1.get(3).is_none());
        let c2 = config_step(&p, &c1, Mode::Spec);
        assert!(c2.get(2).is_some() && c2.get(3).is_some());
    }
}
