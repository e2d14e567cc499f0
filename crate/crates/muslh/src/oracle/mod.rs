//! Brute-force checkers for speculative safety (SS) and speculative
//! non-interference (SNI) on small instances, plus helpers for randomized
//! campaigns.
//!
//! Initial states range over the declared registers and region cells of
//! the policy. Registers the policy does not declare keep the value zero.
//! When the product of all value universes exceeds
//! [`Bounds::max_initial`], a seeded sample of that many states is drawn
//! instead and the verdict records that the check was not exhaustive.

pub mod gen;
pub mod inclusion;

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::absdom::interval::{imax, imin, to_word};
use crate::absint::default_obs_bits;
use crate::concrete::{run, step, Directive, InitValues, Obs, State};
use crate::lang::{Instr, Policy, Program, Secrecy};

/// Enumeration limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bounds {
    pub obs_bits: (u32, u32),
    /// Longest trace explored from one initial state.
    pub max_steps: usize,
    /// Most distinct states explored from one initial state by the SS search.
    pub max_states: usize,
    /// Most initial states enumerated before switching to sampling.
    pub max_initial: usize,
    pub seed: u64,
}

impl Bounds {
    pub fn for_width(n: u32) -> Bounds {
        Bounds { obs_bits: default_obs_bits(n), max_steps: 256, max_states: 100_000, max_initial: 1 << 16, seed: 0 }
    }
}

/// Outcome of a check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict<W> {
    Pass { initial_states: usize, exhaustive: bool },
    Violation { witness: W },
    Inconclusive { reason: String },
}

impl<W> Verdict<W> {
    pub fn is_pass(&self) -> bool {
        matches!(self, Verdict::Pass { .. })
    }

    pub fn is_violation(&self) -> bool {
        matches!(self, Verdict::Violation { .. })
    }
}

/// A replayable SS counterexample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SsWitness {
    pub init: InitValues,
    pub directives: Vec<Directive>,
    /// Index of the offending transition in the trace.
    pub step: usize,
    /// Location of the offending instruction.
    pub location: usize,
    pub observation: String,
    pub taint: String,
}

/// A replayable SNI counterexample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SniWitness {
    pub left: InitValues,
    pub right: InitValues,
    pub directives: Vec<Directive>,
    /// Index of the first differing observation.
    pub index: usize,
    pub left_observation: Option<String>,
    pub right_observation: Option<String>,
}

// ---------------------------------------------------------------------------
// Initial states

#[derive(Debug, Clone)]
enum Slot {
    Reg(String),
    Cell(String, usize),
}

#[derive(Debug, Clone)]
struct Dim {
    slot: Slot,
    public: bool,
    lo: i64,
    hi: i64,
}

impl Dim {
    fn card(&self) -> u128 {
        (self.hi - self.lo) as u128 + 1
    }
}

fn dims(p: &Program, policy: &Policy) -> Vec<Dim> {
    let n = p.width();
    let full = (imin(n), imax(n));
    let mut out = Vec::new();
    for d in &policy.regs {
        if p.reg(&d.name).is_some() {
            let (lo, hi) = d.range.unwrap_or(full);
            out.push(Dim { slot: Slot::Reg(d.name.clone()), public: d.secrecy == Secrecy::Public, lo, hi });
        }
    }
    for r in p.regions() {
        let (lo, hi) = r.range.unwrap_or(full);
        for i in 0..r.size as usize {
            out.push(Dim { slot: Slot::Cell(r.name.clone(), i), public: r.secrecy == Secrecy::Public, lo, hi });
        }
    }
    out
}

/// An enumerated initial state.
#[derive(Debug, Clone)]
pub struct Initial {
    pub init: InitValues,
    pub state: State,
    /// Values of the public dimensions, in declaration order.
    pub public: Vec<u64>,
}

fn build(p: &Program, policy: &Policy, ds: &[Dim], values: &[i64]) -> Initial {
    let n = p.width();
    let mut init = InitValues::default();
    let mut public = Vec::new();
    for (d, v) in ds.iter().zip(values) {
        let w = to_word(n, *v);
        match &d.slot {
            Slot::Reg(name) => {
                init.regs.insert(name.clone(), w);
            }
            Slot::Cell(name, i) => {
                let cells = init.cells.entry(name.clone()).or_default();
                if cells.len() <= *i {
                    cells.resize(i + 1, 0);
                }
                cells[*i] = w;
            }
        }
        if d.public {
            public.push(w);
        }
    }
    let state = State::initial(p, policy, &init).expect("enumerated names come from the policy");
    Initial { init, state, public }
}

/// Every initial state agreeing with `policy`, or a seeded sample when
/// there are more than `bounds.max_initial`. Returns the states and whether
/// the enumeration was exhaustive.
pub fn initial_states(p: &Program, policy: &Policy, bounds: &Bounds) -> (Vec<Initial>, bool) {
    let ds = dims(p, policy);
    let total = ds.iter().try_fold(1u128, |acc, d| acc.checked_mul(d.card()));
    match total {
        Some(t) if t <= bounds.max_initial as u128 => {
            let states = (0..t)
                .map(|mut k| {
                    let mut vals = vec![0i64; ds.len()];
                    for (i, d) in ds.iter().enumerate().rev() {
                        vals[i] = d.lo + (k % d.card()) as i64;
                        k /= d.card();
                    }
                    build(p, policy, &ds, &vals)
                })
                .collect();
            (states, true)
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(bounds.seed);
            let states = (0..bounds.max_initial)
                .map(|_| {
                    let vals: Vec<i64> = ds.iter().map(|d| rng.gen_range(d.lo..=d.hi)).collect();
                    build(p, policy, &ds, &vals)
                })
                .collect();
            (states, false)
        }
    }
}

/// A single random initial state agreeing with `policy`.
pub fn random_initial(p: &Program, policy: &Policy, rng: &mut impl Rng) -> Initial {
    let ds = dims(p, policy);
    let vals: Vec<i64> = ds.iter().map(|d| rng.gen_range(d.lo..=d.hi)).collect();
    build(p, policy, &ds, &vals)
}

fn directives_at(p: &Program, s: &State) -> &'static [Directive] {
    match s.pc.map(|l| p.instr(l)) {
        Some(Instr::Beqz { .. }) => &[Directive::Step, Directive::Force],
        Some(_) => &[Directive::Step],
        None => &[],
    }
}

// ---------------------------------------------------------------------------
// Speculative safety

/// Directives leading to an offending step, its index and its observation.
type SsHit = (Vec<Directive>, usize, Obs);

enum Search<T> {
    Found(T),
    Clean,
    Cut(String),
}

/// Breadth-first search of the states reachable from `s0` for a step that
/// emits a visible `H` label while misspeculating.
fn ss_search(p: &Program, s0: &State, bounds: &Bounds) -> Search<SsHit> {
    let mut parent: HashMap<State, Option<(State, Directive)>> = HashMap::new();
    let mut depth: HashMap<State, usize> = HashMap::new();
    let mut queue = VecDeque::new();
    parent.insert(s0.clone(), None);
    depth.insert(s0.clone(), 0);
    queue.push_back(s0.clone());
    let path = |parent: &HashMap<State, Option<(State, Directive)>>, mut s: State| {
        let mut ds = Vec::new();
        while let Some(Some((prev, d))) = parent.get(&s) {
            ds.push(*d);
            s = prev.clone();
        }
        ds.reverse();
        ds
    };
    while let Some(s) = queue.pop_front() {
        let k = depth[&s];
        for &d in directives_at(p, &s) {
            let Ok((t, o)) = step(p, &s, d) else { continue };
            if s.misspec && o.has_h(bounds.obs_bits) {
                let mut ds = path(&parent, s.clone());
                ds.push(d);
                return Search::Found((ds, s.pc.expect("running state"), o));
            }
            if parent.contains_key(&t) {
                continue;
            }
            if k + 1 > bounds.max_steps && t.pc.is_some() {
                return Search::Cut(format!("a trace exceeds {} steps", bounds.max_steps));
            }
            if parent.len() >= bounds.max_states {
                return Search::Cut(format!("more than {} reachable states", bounds.max_states));
            }
            parent.insert(t.clone(), Some((s.clone(), d)));
            depth.insert(t.clone(), k + 1);
            queue.push_back(t);
        }
    }
    Search::Clean
}

/// Checks that no reachable misspeculating step emits a visible `H` label.
/// `p` must be linked.
pub fn check_ss(p: &Program, policy: &Policy, bounds: &Bounds) -> Verdict<SsWitness> {
    let (states, exhaustive) = initial_states(p, policy, bounds);
    check_ss_on(p, &states, exhaustive, bounds)
}

/// [`check_ss`] over an explicit list of initial states.
pub fn check_ss_on(p: &Program, states: &[Initial], exhaustive: bool, bounds: &Bounds) -> Verdict<SsWitness> {
    let results: Vec<(usize, Search<SsHit>)> =
        states.par_iter().enumerate().map(|(i, s)| (i, ss_search(p, &s.state, bounds))).collect();
    let mut cut = None;
    for (i, r) in results {
        match r {
            Search::Found((directives, loc, o)) => {
                let step = directives.len() - 1;
                let projected = o.project(bounds.obs_bits);
                return Verdict::Violation {
                    witness: SsWitness {
                        init: states[i].init.clone(),
                        directives,
                        step,
                        location: p.source(loc).unwrap_or(0),
                        observation: projected.to_string(),
                        taint: projected.taint.compact(),
                    },
                };
            }
            Search::Cut(reason) => {
                cut.get_or_insert(reason);
            }
            Search::Clean => {}
        }
    }
    match cut {
        Some(reason) => Verdict::Inconclusive { reason },
        None => Verdict::Pass { initial_states: states.len(), exhaustive },
    }
}

/// Re-executes an SS witness and confirms the violation.
pub fn replay_ss(p: &Program, policy: &Policy, w: &SsWitness, bits: (u32, u32)) -> bool {
    let Ok(s0) = State::initial(p, policy, &w.init) else { return false };
    let Ok(tr) = run(p, &s0, &w.directives) else { return false };
    let Some(st) = tr.steps.get(w.step) else { return false };
    let pre = if w.step == 0 { &tr.initial } else { &tr.steps[w.step - 1].state };
    pre.misspec && st.obs.has_h(bits)
}

// ---------------------------------------------------------------------------
// Speculative non-interference

type Outcome = Result<Obs, String>;

fn project(r: Result<(State, Obs), crate::concrete::ExecError>, bits: (u32, u32)) -> Result<(State, Obs), String> {
    r.map(|(s, o)| (s, o.project(bits))).map_err(|e| e.to_string())
}

fn sequential_obs(p: &Program, s0: &State, bounds: &Bounds) -> Result<Vec<Outcome>, String> {
    let mut s = s0.clone();
    let mut out = Vec::new();
    while s.pc.is_some() {
        if out.len() >= bounds.max_steps {
            return Err(format!("a sequential trace exceeds {} steps", bounds.max_steps));
        }
        match project(step(p, &s, Directive::Step), bounds.obs_bits) {
            Ok((t, o)) => {
                out.push(Ok(o));
                s = t;
            }
            Err(e) => {
                out.push(Err(e));
                break;
            }
        }
    }
    Ok(out)
}

struct TreeHasher<'a> {
    p: &'a Program,
    bounds: &'a Bounds,
    nodes: usize,
}

impl TreeHasher<'_> {
    /// 128-bit digest of the tree of observations under every directive
    /// sequence from `s`.
    fn digest(&mut self, s: &State, depth: usize) -> Result<(u64, u64), String> {
        self.nodes += 1;
        if self.nodes > self.bounds.max_states {
            return Err(format!("more than {} trace nodes", self.bounds.max_states));
        }
        let mut h1 = DefaultHasher::new();
        let mut h2 = DefaultHasher::new();
        0x5eedu16.hash(&mut h2);
        if s.pc.is_none() {
            "end".hash(&mut h1);
            "end".hash(&mut h2);
            return Ok((h1.finish(), h2.finish()));
        }
        if depth >= self.bounds.max_steps {
            return Err(format!("a trace exceeds {} steps", self.bounds.max_steps));
        }
        for &d in directives_at(self.p, s) {
            d.hash(&mut h1);
            d.hash(&mut h2);
            match project(step(self.p, s, d), self.bounds.obs_bits) {
                Ok((t, o)) => {
                    o.hash(&mut h1);
                    o.hash(&mut h2);
                    let (c1, c2) = self.digest(&t, depth + 1)?;
                    c1.hash(&mut h1);
                    c2.hash(&mut h2);
                }
                Err(e) => {
                    e.hash(&mut h1);
                    e.hash(&mut h2);
                }
            }
        }
        Ok((h1.finish(), h2.finish()))
    }
}

/// Explores both states under the same directives and returns the first
/// point where their observations differ.
fn joint_diff(
    p: &Program,
    a: &State,
    b: &State,
    prefix: &mut Vec<Directive>,
    bounds: &Bounds,
) -> Option<(Vec<Directive>, Option<Outcome>, Option<Outcome>)> {
    if prefix.len() > bounds.max_steps {
        return None;
    }
    let (da, db) = (directives_at(p, a), directives_at(p, b));
    if da.len() != db.len() {
        let first = |s: &State| (s.pc.is_some()).then(|| Ok(Obs::silent()));
        return Some((prefix.clone(), first(a), first(b)));
    }
    for &d in da {
        let ra = project(step(p, a, d), bounds.obs_bits);
        let rb = project(step(p, b, d), bounds.obs_bits);
        let oa = ra.as_ref().map(|(_, o)| o.clone()).map_err(Clone::clone);
        let ob = rb.as_ref().map(|(_, o)| o.clone()).map_err(Clone::clone);
        prefix.push(d);
        if oa != ob {
            return Some((prefix.clone(), Some(oa), Some(ob)));
        }
        if let (Ok((ta, _)), Ok((tb, _))) = (&ra, &rb) {
            if let Some(found) = joint_diff(p, ta, tb, prefix, bounds) {
                return Some(found);
            }
        }
        prefix.pop();
    }
    None
}

fn show(o: &Option<Outcome>) -> Option<String> {
    o.as_ref().map(|r| match r {
        Ok(o) => o.to_string(),
        Err(e) => format!("trap: {}", e),
    })
}

/// Checks that initial states agreeing on public inputs and on sequential
/// observations produce the same observations under every directive
/// sequence. `p` must be linked.
pub fn check_sni(p: &Program, policy: &Policy, bounds: &Bounds) -> Verdict<SniWitness> {
    let (states, exhaustive) = initial_states(p, policy, bounds);
    check_sni_on(p, &states, exhaustive, bounds)
}

/// [`check_sni`] over an explicit list of initial states.
pub fn check_sni_on(p: &Program, states: &[Initial], exhaustive: bool, bounds: &Bounds) -> Verdict<SniWitness> {
    let seq: Result<Vec<Vec<Outcome>>, String> =
        states.par_iter().map(|s| sequential_obs(p, &s.state, bounds)).collect();
    let seq = match seq {
        Ok(s) => s,
        Err(reason) => return Verdict::Inconclusive { reason },
    };
    let mut groups: BTreeMap<(Vec<u64>, usize), Vec<usize>> = BTreeMap::new();
    let mut keys: HashMap<(&Vec<u64>, &Vec<Outcome>), usize> = HashMap::new();
    for (i, s) in states.iter().enumerate() {
        let next = keys.len();
        let k = *keys.entry((&s.public, &seq[i])).or_insert(next);
        groups.entry((s.public.clone(), k)).or_default().push(i);
    }
    let digests: Result<Vec<Option<(u64, u64)>>, String> = {
        let in_group: HashSet<usize> = groups.values().filter(|g| g.len() > 1).flatten().copied().collect();
        (0..states.len())
            .into_par_iter()
            .map(|i| {
                if !in_group.contains(&i) {
                    return Ok(None);
                }
                TreeHasher { p, bounds, nodes: 0 }.digest(&states[i].state, 0).map(Some)
            })
            .collect()
    };
    let digests = match digests {
        Ok(d) => d,
        Err(reason) => return Verdict::Inconclusive { reason },
    };
    let mut order: Vec<&Vec<usize>> = groups.values().filter(|g| g.len() > 1).collect();
    order.sort_by_key(|g| g[0]);
    for g in order {
        let rep = g[0];
        if let Some(&other) = g.iter().find(|&&j| digests[j] != digests[rep]) {
            let found = joint_diff(p, &states[rep].state, &states[other].state, &mut Vec::new(), bounds);
            if let Some((directives, a, b)) = found {
                return Verdict::Violation {
                    witness: SniWitness {
                        left: states[rep].init.clone(),
                        right: states[other].init.clone(),
                        index: directives.len().saturating_sub(1),
                        directives,
                        left_observation: show(&a),
                        right_observation: show(&b),
                    },
                };
            }
        }
    }
    Verdict::Pass { initial_states: states.len(), exhaustive }
}

/// Re-executes an SNI witness and confirms the two traces differ at the
/// reported index.
pub fn replay_sni(p: &Program, policy: &Policy, w: &SniWitness, bits: (u32, u32)) -> bool {
    let obs = |init: &InitValues| -> Option<Vec<Obs>> {
        let s0 = State::initial(p, policy, init).ok()?;
        let mut s = s0;
        let mut out = Vec::new();
        for d in &w.directives {
            if s.pc.is_none() {
                break;
            }
            match step(p, &s, *d) {
                Ok((t, o)) => {
                    out.push(o.project(bits));
                    s = t;
                }
                Err(_) => break,
            }
        }
        Some(out)
    };
    match (obs(&w.left), obs(&w.right)) {
        (Some(a), Some(b)) => a.get(w.index) != b.get(w.index) || a.len() != b.len(),
        _ => false,
    }
}

/// Result of the SS-implies-SNI campaign on one program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "implication", rename_all = "lowercase")]
pub enum Implication {
    /// SS failed, so the program says nothing about the implication.
    Vacuous,
    Holds,
    /// SS passed but SNI failed.
    Broken {
        witness: SniWitness,
    },
    Inconclusive {
        reason: String,
    },
}

/// Checks that passing SS implies passing SNI for one program.
pub fn check_ss_implies_sni(p: &Program, policy: &Policy, bounds: &Bounds) -> Implication {
    let (states, exhaustive) = initial_states(p, policy, bounds);
    match check_ss_on(p, &states, exhaustive, bounds) {
        Verdict::Violation { .. } => Implication::Vacuous,
        Verdict::Inconclusive { reason } => Implication::Inconclusive { reason },
        Verdict::Pass { .. } => match check_sni_on(p, &states, exhaustive, bounds) {
            Verdict::Pass { .. } => Implication::Holds,
            Verdict::Violation { witness } => Implication::Broken { witness },
            Verdict::Inconclusive { reason } => Implication::Inconclusive { reason },
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hardener::harden;
    use crate::lang::{parse_policy, parse_program};

    const GADGET: &str = "0: x <- 0\n1: beqz x, end\n2: load y, s\n";
    const GADGET_POLICY: &str = "width 4\nreg s secret\nregion m 4 public 0..1\n";

    fn linked(src: &str, pol: &str) -> (Program, Policy) {
        let policy = parse_policy(pol).unwrap();
        (crate::absint::prepare(&parse_program(src).unwrap(), &policy, 4).unwrap(), policy)
    }

    fn full(n: u32) -> Bounds {
        Bounds { obs_bits: (0, n - 1), ..Bounds::for_width(n) }
    }

    #[test]
    fn gadget_violates_both_properties() {
        let (p, policy) = linked(GADGET, GADGET_POLICY);
        let b = full(4);
        let Verdict::Violation { witness } = check_ss(&p, &policy, &b) else { panic!("expected SS violation") };
        assert_eq!(witness.location, 2);
        assert!(witness.directives.contains(&Directive::Force));
        assert!(replay_ss(&p, &policy, &witness, b.obs_bits));
        let Verdict::Violation { witness } = check_sni(&p, &policy, &b) else { panic!("expected SNI violation") };
        assert!(replay_sni(&p, &policy, &witness, b.obs_bits));
    }

    #[test]
    fn hardened_gadget_passes() {
        let policy = parse_policy(GADGET_POLICY).unwrap();
        let o = harden(&parse_program(GADGET).unwrap(), &policy, 4, |c| c.obs_bits = (0, 3)).unwrap();
        assert_eq!(o.report().hardened.len(), 1);
        let b = full(4);
        assert_eq!(check_ss(&o.hardened, &policy, &b), Verdict::Pass { initial_states: 256, exhaustive: true });
        assert!(check_sni(&o.hardened, &policy, &b).is_pass());
    }

    #[test]
    fn branch_free_program_passes_vacuously() {
        let (p, policy) =
            linked("0: load y, (m Add s)\n1: x <- (y Add 1)\n", "width 3\nreg s secret\nregion m 2 public\n");
        assert!(check_ss(&p, &policy, &full(3)).is_pass());
    }

    #[test]
    fn public_program_passes_sni() {
        let (p, policy) =
            linked("0: beqz x, 2\n1: load y, (m Add x)\n2: fence\n", "width 3\nreg x public\nregion m 2 public\n");
        assert!(check_sni(&p, &policy, &full(3)).is_pass());
    }

    #[test]
    fn enumeration_is_exhaustive_then_sampled() {
        let (p, policy) = linked("0: fence\n", "width 3\nreg s secret\nreg x public 0..1\n");
        let (all, ex) = initial_states(&p, &policy, &full(3));
        assert!(ex);
        assert_eq!(all.len(), 16);
        let (some, ex) = initial_states(&p, &policy, &Bounds { max_initial: 5, ..full(3) });
        assert!(!ex);
        assert_eq!(some.len(), 5);
        let again = initial_states(&p, &policy, &Bounds { max_initial: 5, ..full(3) }).0;
        assert_eq!(
            some.iter().map(|s| s.init.clone()).collect::<Vec<_>>(),
            again.iter().map(|s| s.init.clone()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn loops_are_cut_and_reported_inconclusive() {
        let (p, policy) = linked("0: x <- (x Add 1)\n1: jmp 0\n", "width 3\nreg x public\n");
        let b = Bounds { max_steps: 4, ..full(3) };
        assert!(matches!(check_sni(&p, &policy, &b), Verdict::Inconclusive { .. }));
        assert!(check_ss(&p, &policy, &full(3)).is_pass());
    }

    #[test]
    fn masked_gadget_form_observes_minus_one() {
        let src = "0: x <- 0\n1: beqz x, end\n2: mask <- -1\n3: cmov mask, 0 if x\n4: load y, (s Or mask)\n";
        let (p, policy) = linked(src, GADGET_POLICY);
        let s0 = State::initial(&p, &policy, &InitValues::parse("s=5", 4).unwrap()).unwrap();
        let ds =
            [Directive::Step, Directive::Step, Directive::Force, Directive::Step, Directive::Step, Directive::Step];
        let tr = run(&p, &s0, &ds).unwrap();
        let last = tr.steps.last().unwrap();
        assert_eq!(last.obs.value, crate::concrete::Val::Num(15));
        assert!(last.obs.taint.is_all_concrete());
        assert!(check_ss(&p, &policy, &full(4)).is_pass());
    }
}
