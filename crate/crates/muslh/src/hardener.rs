//! Targeted hardening: a sequential fixpoint, a speculative fixpoint that
//! knows which accesses will be masked, and the program transformation.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::absint::{
    abs_step, eval_taint, eval_value, fixpoint, initial_config, prepare, render_value, solve, switch_step, AbsConfig,
    AbsObsKind, AbsState, AnalysisError, Configuration, Fixpoint, Mode, PrepareError, Successor,
};
use crate::lang::{Expr, Instr, Op, Policy, Program, Reg, Target};

/// Why a location must be hardened.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Reason {
    #[serde(rename = "H-observation")]
    HObservation,
    #[serde(rename = "OOB-store")]
    OobStore,
}

impl std::fmt::Display for Reason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Reason::HObservation => "H-observation",
            Reason::OobStore => "OOB-store",
        })
    }
}

/// Hardening decisions keyed by internal location.
pub type HardenList = BTreeMap<usize, Reason>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HardenError {
    #[error(transparent)]
    Prepare(#[from] PrepareError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("location {0} is not a load, store or branch and cannot be hardened")]
    NotHardenable(usize),
}

/// Sequential fixpoint from the policy's initial configuration.
pub fn phase1(p: &Program, policy: &Policy, cfg: &AbsConfig) -> Result<Fixpoint, AnalysisError> {
    fixpoint(p, &initial_config(p, policy), Mode::Seq, cfg)
}

/// Classifies the successors of one step: an observation with a visible
/// `H` label, or a store whose address may leave its block.
pub fn classify(st: &AbsState, succs: &[Successor], bits: (u32, u32)) -> Option<Reason> {
    if succs.iter().any(|s| s.obs.has_h(bits)) {
        return Some(Reason::HObservation);
    }
    let oob = succs
        .iter()
        .any(|s| s.obs.kind == AbsObsKind::Store && !s.obs.value.is_bottom() && !st.mem_v.in_bounds(&s.obs.value));
    oob.then_some(Reason::OobStore)
}

/// Locations whose speculative step from `omega` emits an `H` observation
/// or performs a possibly out-of-bounds store.
pub fn harden_set(p: &Program, omega: &Configuration, cfg: &AbsConfig) -> HardenList {
    let mut out = BTreeMap::new();
    for (loc, st) in omega.states.iter().enumerate() {
        if let Some(st) = st {
            if let Some(r) = classify(st, &abs_step(p, st, loc, Mode::Spec), cfg.obs_bits) {
                out.insert(loc, r);
            }
        }
    }
    out
}

/// Locations whose sequential step leaks or may store out of bounds. These
/// are defects of the program itself that hardening cannot remove.
pub fn sequential_issues(p: &Program, seq: &Fixpoint, cfg: &AbsConfig) -> HardenList {
    let mut out = BTreeMap::new();
    for (loc, st) in seq.config.states.iter().enumerate() {
        if let Some(st) = st {
            if let Some(r) = classify(st, &abs_step(p, st, loc, Mode::Seq), cfg.obs_bits) {
                out.insert(loc, r);
            }
        }
    }
    out
}

fn is_access(i: &Instr) -> bool {
    matches!(i, Instr::Load { .. } | Instr::Store { .. })
}

/// Locations already carrying the `hardened` marker.
pub fn pre_hardened(p: &Program) -> BTreeSet<usize> {
    (0..p.len()).filter(|l| p.instr(*l).is_hardened()).collect()
}

/// Speculative fixpoint for a fixed hardening list: accesses in `list`, and
/// accesses that are already hardened, take their effect from `seq`.
pub fn trans_fixpoint(
    p: &Program,
    policy: &Policy,
    seq: &Fixpoint,
    list: &BTreeSet<usize>,
    cfg: &AbsConfig,
) -> Result<Fixpoint, AnalysisError> {
    let switched = |j: usize| is_access(p.instr(j)) && (list.contains(&j) || p.instr(j).is_hardened());
    solve(p, &initial_config(p, policy), cfg, &mut |j, st| {
        if switched(j) {
            switch_step(p, st, j, seq)
        } else {
            abs_step(p, st, j, Mode::Spec)
        }
    })
}

/// Result of the hardening-aware speculative analysis.
#[derive(Debug, Clone)]
pub struct Phase2 {
    pub list: HardenList,
    pub fixpoint: Fixpoint,
    /// Number of fixpoint computations until the list stabilized.
    pub rounds: usize,
}

/// Alternates fixpoint computation and list growth until neither changes.
/// Each round restarts from the initial configuration, so the final
/// configuration is the fixpoint for the final list. Locations that are
/// already hardened are never reported.
pub fn phase2(p: &Program, policy: &Policy, seq: &Fixpoint, cfg: &AbsConfig) -> Result<Phase2, AnalysisError> {
    let pre = pre_hardened(p);
    let mut list = HardenList::new();
    let mut rounds = 0;
    loop {
        rounds += 1;
        let keys: BTreeSet<usize> = list.keys().copied().collect();
        let mut found = HardenList::new();
        let switched = |j: usize| is_access(p.instr(j)) && (keys.contains(&j) || pre.contains(&j));
        let fx = solve(p, &initial_config(p, policy), cfg, &mut |j, st| {
            if switched(j) {
                return switch_step(p, st, j, seq);
            }
            let succs = abs_step(p, st, j, Mode::Spec);
            if !pre.contains(&j) && !keys.contains(&j) {
                if let Some(r) = classify(st, &succs, cfg.obs_bits) {
                    found.entry(j).or_insert(r);
                    if is_access(p.instr(j)) {
                        return switch_step(p, st, j, seq);
                    }
                }
            }
            succs
        })?;
        if found.is_empty() {
            for (loc, reason) in list.iter_mut() {
                if let Some(st) = fx.get(*loc) {
                    if let Some(r) = classify(st, &abs_step(p, st, *loc, Mode::Spec), cfg.obs_bits) {
                        *reason = r;
                    }
                }
            }
            return Ok(Phase2 { list, fixpoint: fx, rounds });
        }
        list.extend(found);
    }
}

/// Sets the `hardened` marker on every listed location.
pub fn transform(p: &Program, list: &BTreeSet<usize>) -> Result<Program, HardenError> {
    let mut out = p.clone();
    for &loc in list {
        let instr = match p.instr(loc).clone() {
            Instr::Load { dst, addr, .. } => Instr::Load { dst, addr, hardened: true },
            Instr::Store { src, addr, .. } => Instr::Store { src, addr, hardened: true },
            Instr::Beqz { cond, target, .. } => Instr::Beqz { cond, target, hardened: true },
            _ => return Err(HardenError::NotHardenable(loc)),
        };
        out.set_instr(loc, instr);
    }
    Ok(out)
}

fn fresh_name(p: &Program, base: &str) -> String {
    let mut name = base.to_string();
    let mut k = 1;
    while p.reg(&name).is_some() {
        name = format!("{}_{}", base, k);
        k += 1;
    }
    name
}

/// Branch-free `x == 0` test yielding 1 or 0.
fn is_zero(x: Expr, n: u32) -> Expr {
    let neg = Expr::bin(Op::Minus, Expr::Const(0), x.clone());
    Expr::bin(Op::Lshr, Expr::Not(Box::new(Expr::bin(Op::Or, x, neg))), Expr::Const(n as i64 - 1))
}

/// Renders the flag-based masking form of the hardened instructions of
/// `p`. Original instructions keep their source numbers; flag maintenance
/// lines are labeled `N.k` and taken-edge blocks `Nt`. The output is for
/// inspection and is not parsed back.
pub fn lower_flag(p: &Program) -> String {
    let n = p.width();
    let mut q = p.clone();
    let flag = q.intern(&fresh_name(p, "flag"));
    let masked = q.intern(&fresh_name(&q, "cond"));
    let name = |r: Reg| q.reg_name(r).to_string();
    let or_flag = |e: &Expr| Expr::bin(Op::Or, e.clone(), Expr::Reg(flag));
    let mut lines = vec![format!("-: {} <- 0", name(flag))];
    let mut edges = Vec::new();
    for loc in p.prologue()..p.len() {
        let label = p.label(loc);
        match p.instr(loc) {
            Instr::Load { dst, addr, hardened: true } => {
                lines.push(format!("{}: load {}, {}", label, name(*dst), q.render_expr(&or_flag(addr))));
            }
            Instr::Store { src, addr, hardened: true } => {
                lines.push(format!("{}: store {}, {}", label, name(*src), q.render_expr(&or_flag(addr))));
            }
            Instr::Beqz { cond, target, hardened } => {
                let tested = if *hardened {
                    let e = or_flag(&Expr::Reg(*cond));
                    lines.push(format!("{}.0: {} <- {}", label, name(masked), q.render_expr(&e)));
                    masked
                } else {
                    *cond
                };
                let tgt = match target {
                    Target::Loc(_) => format!("{}t", label),
                    Target::End => "end".to_string(),
                };
                lines.push(format!("{}: beqz {}, {}", label, name(tested), tgt));
                let z = is_zero(Expr::Reg(*cond), n);
                lines.push(format!("{}.1: cmov {}, -1 if {}", label, name(flag), q.render_expr(&z)));
                if let Target::Loc(t) = target {
                    edges.push(format!("{}t: cmov {}, -1 if {}", label, name(flag), name(*cond)));
                    edges.push(format!("{}t.1: jmp {}", label, p.label(*t)));
                }
            }
            _ => lines.push(format!("{}: {}", label, p.render_instr(loc))),
        }
    }
    lines.extend(edges);
    let mut out = lines.join("\n");
    out.push('\n');
    out
}

// ---------------------------------------------------------------------------
// Reports

/// One hardened location.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReportEntry {
    /// Source location.
    pub location: usize,
    pub instruction: String,
    pub reason: Reason,
}

/// Output of the full pipeline.
#[derive(Debug, Clone)]
pub struct Outcome {
    /// The linked and sanitized input program.
    pub program: Program,
    pub policy: Policy,
    pub config: AbsConfig,
    pub seq: Fixpoint,
    pub phase2: Phase2,
    pub hardened: Program,
    pub sequential_issues: HardenList,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Report {
    pub width: u32,
    pub obs_bits: (u32, u32),
    pub hardened: Vec<ReportEntry>,
    pub sequential_issues: Vec<ReportEntry>,
}

impl Outcome {
    pub fn list(&self) -> BTreeSet<usize> {
        self.phase2.list.keys().copied().collect()
    }

    fn entries(&self, list: &HardenList) -> Vec<ReportEntry> {
        list.iter()
            .filter_map(|(loc, reason)| {
                self.program.source(*loc).map(|s| ReportEntry {
                    location: s,
                    instruction: self.program.render_instr(*loc),
                    reason: *reason,
                })
            })
            .collect()
    }

    pub fn report(&self) -> Report {
        Report {
            width: self.program.width(),
            obs_bits: self.config.obs_bits,
            hardened: self.entries(&self.phase2.list),
            sequential_issues: self.entries(&self.sequential_issues),
        }
    }
}

/// Runs the whole pipeline on an unlinked program.
pub fn harden(
    p: &Program,
    policy: &Policy,
    default_width: u32,
    adjust: impl FnOnce(&mut AbsConfig),
) -> Result<Outcome, HardenError> {
    let program = prepare(p, policy, default_width)?;
    let mut config = AbsConfig::for_width(program.width());
    adjust(&mut config);
    harden_linked(&program, policy, config)
}

/// Runs the pipeline on a program that has already been prepared.
pub fn harden_linked(program: &Program, policy: &Policy, config: AbsConfig) -> Result<Outcome, HardenError> {
    let seq = phase1(program, policy, &config)?;
    let phase2 = phase2(program, policy, &seq, &config)?;
    let hardened = transform(program, &phase2.list.keys().copied().collect())?;
    let sequential_issues = sequential_issues(program, &seq, &config);
    Ok(Outcome { program: program.clone(), policy: policy.clone(), config, seq, phase2, hardened, sequential_issues })
}

// ---------------------------------------------------------------------------
// Analysis table

/// One cell: rendered value and compact taint, or `None` when unreached.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TableCell {
    pub value: String,
    pub taint: String,
    pub boxed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TableRow {
    pub expr: String,
    pub seq: Option<TableCell>,
    pub spec: Option<TableCell>,
    pub spec_hk: Option<TableCell>,
}

enum RowKind<'a> {
    Reg(Reg),
    Addr(&'a Expr),
    Dest(Reg),
}

/// Builds the per-access analysis table: for each load and store, the
/// numeric registers of its address not shown yet, the address, and the
/// loaded register.
pub fn analysis_table(out: &Outcome) -> Result<Vec<TableRow>, AnalysisError> {
    let p = &out.program;
    let n = p.width();
    let spec = fixpoint(p, &initial_config(p, &out.policy), Mode::Spec, &out.config)?;
    let spec_list = harden_set(p, &spec.config, &out.config);
    let hk = &out.phase2.fixpoint;
    let hk_list = &out.phase2.list;
    let pre = pre_hardened(p);
    let mut shown: BTreeSet<Reg> = BTreeSet::new();
    let mut rows = Vec::new();
    let cell = |st: Option<&AbsState>, loc: usize, kind: &RowKind, boxed: bool, hk_mode: bool, plain: bool| {
        let st = st?;
        let (v, t) = match kind {
            RowKind::Reg(r) => (st.val(*r).clone(), st.taint(*r).clone()),
            RowKind::Addr(e) => (eval_value(n, st, e), eval_taint(n, st, e)),
            RowKind::Dest(r) => {
                let switched = hk_mode && (hk_list.contains_key(&loc) || pre.contains(&loc));
                let succ = if switched {
                    switch_step(p, st, loc, &out.seq)
                } else {
                    abs_step(p, st, loc, if plain { Mode::Seq } else { Mode::Spec })
                };
                let s = succ.into_iter().next()?.state;
                (s.val(*r).clone(), s.taint(*r).clone())
            }
        };
        Some(TableCell { value: render_value(p, &v), taint: t.compact(), boxed })
    };
    for loc in 0..p.len() {
        let (addr, dst) = match p.instr(loc) {
            Instr::Load { dst, addr, .. } => (addr, Some(*dst)),
            Instr::Store { addr, .. } => (addr, None),
            _ => continue,
        };
        let seq_st = out.seq.get(loc);
        let spec_st = spec.get(loc);
        let hk_st = hk.get(loc);
        let mut kinds: Vec<(String, RowKind, bool)> = Vec::new();
        for r in addr.regs() {
            let numeric = seq_st.or(spec_st).is_some_and(|s| s.val(r).is_number());
            if numeric && shown.insert(r) {
                kinds.push((p.reg_name(r).to_string(), RowKind::Reg(r), false));
            }
        }
        kinds.push((render_compact_expr(p, addr), RowKind::Addr(addr), true));
        if let Some(d) = dst {
            shown.insert(d);
            kinds.push((format!("{}={}", p.reg_name(d), load_text(p, addr)), RowKind::Dest(d), false));
        }
        for (expr, kind, is_addr) in kinds {
            rows.push(TableRow {
                seq: cell(seq_st, loc, &kind, false, false, true),
                spec: cell(spec_st, loc, &kind, is_addr && spec_list.contains_key(&loc), false, false),
                spec_hk: cell(hk_st, loc, &kind, is_addr && hk_list.contains_key(&loc), true, false),
                expr,
            });
        }
    }
    Ok(rows)
}

/// `a Add x` renders as `a+x`; other shapes use the program syntax.
fn render_compact_expr(p: &Program, e: &Expr) -> String {
    match e {
        Expr::Bin(Op::Add, a, b) => format!("{}+{}", render_compact_expr(p, a), render_compact_expr(p, b)),
        _ => p.render_expr(e),
    }
}

fn load_text(p: &Program, addr: &Expr) -> String {
    match addr {
        Expr::Bin(Op::Add, a, b) => format!("{}[{}]", p.render_expr(a), p.render_expr(b)),
        _ => format!("[{}]", p.render_expr(addr)),
    }
}

/// Renders the table as aligned text with columns `Expr | Seq | Spec |
/// Spec hk.`; boxed cells are wrapped in brackets.
pub fn render_table(rows: &[TableRow]) -> String {
    let show = |c: &Option<TableCell>| match c {
        None => "unreachable".to_string(),
        Some(c) if c.boxed => format!("[{} : {}]", c.value, c.taint),
        Some(c) => format!("{} : {}", c.value, c.taint),
    };
    let mut grid = vec![["Expr".to_string(), "Seq".to_string(), "Spec".to_string(), "Spec hk.".to_string()]];
    for r in rows {
        grid.push([r.expr.clone(), show(&r.seq), show(&r.spec), show(&r.spec_hk)]);
    }
    let mut widths = [0usize; 4];
    for row in &grid {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    for row in &grid {
        let cells: Vec<String> =
            row.iter().zip(widths).map(|(c, w)| format!("{}{}", c, " ".repeat(w - c.chars().count()))).collect();
        out.push_str(cells.join(" | ").trim_end());
        out.push('\n');
    }
    out
}

/// Checks that re-analysing `hardened` reports nothing new.
pub fn is_idempotent(hardened: &Program, policy: &Policy, cfg: &AbsConfig) -> Result<bool, AnalysisError> {
    let seq = phase1(hardened, policy, cfg)?;
    Ok(phase2(hardened, policy, &seq, cfg)?.list.is_empty())
}
