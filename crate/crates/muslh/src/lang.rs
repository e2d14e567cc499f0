//! Program representation for the µASM core language: expressions,
//! instructions, programs, security policies, and their text formats.
//!
//! Locations are stored internally as dense indices. After a program is
//! linked against a [`Policy`], every policy region is bound by a formal
//! `alloc` placed in a prologue before source location 0, so internal index
//! `i` corresponds to source location `i - prologue`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

/// Default word width used when neither the policy nor the caller picks one.
pub const DEFAULT_WIDTH: u32 = 8;
/// Largest supported word width.
pub const MAX_WIDTH: u32 = 64;

/// Interned register name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Reg(pub u32);

impl Reg {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// The twelve operators of the expression language.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub enum Op {
    Not,
    Add,
    Minus,
    Mul,
    Div,
    Mod,
    And,
    Or,
    Xor,
    Shl,
    Lshr,
    Ashr,
}

impl Op {
    pub const ALL: [Op; 12] =
        [Op::Not, Op::Add, Op::Minus, Op::Mul, Op::Div, Op::Mod, Op::And, Op::Or, Op::Xor, Op::Shl, Op::Lshr, Op::Ashr];

    pub fn is_unary(self) -> bool {
        self == Op::Not
    }

    /// Mnemonic as written in program text.
    pub fn mnemonic(self) -> &'static str {
        match self {
            Op::Not => "Not",
            Op::Add => "Add",
            Op::Minus => "Minus",
            Op::Mul => "Mul",
            Op::Div => "Div",
            Op::Mod => "Mod",
            Op::And => "And",
            Op::Or => "Or",
            Op::Xor => "Xor",
            Op::Shl => "Shl",
            Op::Lshr => "Lshr",
            Op::Ashr => "Ashr",
        }
    }

    /// Case-insensitive lookup by mnemonic.
    pub fn from_name(s: &str) -> Option<Op> {
        Op::ALL.iter().copied().find(|op| op.mnemonic().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

/// Expression tree. Constants keep their source spelling as a signed
/// integer and are reduced modulo `2^n` when evaluated.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Const(i64),
    Reg(Reg),
    Not(Box<Expr>),
    Bin(Op, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn bin(op: Op, a: Expr, b: Expr) -> Expr {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    /// Registers read by the expression, in first-occurrence order.
    pub fn regs(&self) -> Vec<Reg> {
        let mut out = Vec::new();
        self.collect_regs(&mut out);
        out
    }

    fn collect_regs(&self, out: &mut Vec<Reg>) {
        match self {
            Expr::Const(_) => {}
            Expr::Reg(r) => {
                if !out.contains(r) {
                    out.push(*r);
                }
            }
            Expr::Not(e) => e.collect_regs(out),
            Expr::Bin(_, a, b) => {
                a.collect_regs(out);
                b.collect_regs(out);
            }
        }
    }
}

/// Branch or jump destination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    Loc(usize),
    End,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Instr {
    Asgn { dst: Reg, expr: Expr },
    Load { dst: Reg, addr: Expr, hardened: bool },
    Store { src: Reg, addr: Expr, hardened: bool },
    Jmp { target: Target },
    Beqz { cond: Reg, target: Target, hardened: bool },
    CondAsgn { dst: Reg, expr: Expr, cond: Expr },
    Fence,
    Alloc { dst: Reg, size: u64 },
}

impl Instr {
    pub fn is_hardened(&self) -> bool {
        matches!(
            self,
            Instr::Load { hardened: true, .. }
                | Instr::Store { hardened: true, .. }
                | Instr::Beqz { hardened: true, .. }
        )
    }

    pub fn is_hardenable(&self) -> bool {
        matches!(self, Instr::Load { .. } | Instr::Store { .. } | Instr::Beqz { .. })
    }

    fn target_mut(&mut self) -> Option<&mut Target> {
        match self {
            Instr::Jmp { target } | Instr::Beqz { target, .. } => Some(target),
            _ => None,
        }
    }
}

/// Taint sanitization attached to an assignment location. `clear_low`
/// zeroes that many least significant labels; `clear_from` zeroes every
/// label at index `>= k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize)]
pub struct Sanitize {
    pub clear_low: u32,
    pub clear_from: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
pub enum Secrecy {
    Public,
    Secret,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegDecl {
    pub name: String,
    pub secrecy: Secrecy,
    /// Optional inclusive signed range of initial values.
    pub range: Option<(i64, i64)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionDecl {
    pub name: String,
    pub size: u64,
    pub secrecy: Secrecy,
    /// Optional inclusive signed range of the initial cell contents.
    pub range: Option<(i64, i64)>,
}

/// Security policy: which registers and memory regions are public.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Policy {
    pub width: Option<u32>,
    pub regs: Vec<RegDecl>,
    pub regions: Vec<RegionDecl>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("line {line}: duplicate location {loc}")]
    DuplicateLocation { line: usize, loc: usize },
    #[error("line {line}: expected location {expected}, found {found}")]
    LocationGap { line: usize, expected: usize, found: usize },
    #[error("line {line}: dangling branch target {target}")]
    DanglingTarget { line: usize, target: usize },
    #[error("line {line}: non-constant Alloc size `{found}`")]
    NonConstantAllocSize { line: usize, found: String },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolicyError {
    #[error("policy line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("policy declares `{0}` more than once")]
    Duplicate(String),
    #[error("region `{0}` has size 0")]
    EmptyRegion(String),
    #[error("width {0} is outside 1..=64")]
    Width(u32),
    #[error("range {lo}..{hi} of `{name}` does not fit a signed {width}-bit word")]
    Range { name: String, lo: i64, hi: i64, width: u32 },
    #[error("program is already linked")]
    AlreadyLinked,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LocError {
    #[error("location {0} is not in the program")]
    OutOfRange(usize),
}

/// A µASM program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    instrs: Vec<Instr>,
    prologue: usize,
    regs: Vec<String>,
    width: u32,
    sanitizers: BTreeMap<usize, Sanitize>,
    regions: Vec<RegionDecl>,
    linked: bool,
}

impl Program {
    /// Builds a program from raw parts; targets are internal indices.
    pub fn from_parts(instrs: Vec<Instr>, regs: Vec<String>, width: u32) -> Program {
        Program { instrs, prologue: 0, regs, width, sanitizers: BTreeMap::new(), regions: Vec::new(), linked: false }
    }

    pub fn len(&self) -> usize {
        self.instrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instrs.is_empty()
    }

    pub fn instrs(&self) -> &[Instr] {
        &self.instrs
    }

    pub fn instr(&self, loc: usize) -> &Instr {
        &self.instrs[loc]
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn set_width(&mut self, width: u32) {
        self.width = width;
    }

    /// Number of formal allocation instructions placed before source
    /// location 0.
    pub fn prologue(&self) -> usize {
        self.prologue
    }

    pub fn is_linked(&self) -> bool {
        self.linked
    }

    /// Regions bound by the prologue, in allocation order.
    pub fn regions(&self) -> &[RegionDecl] {
        &self.regions
    }

    pub fn reg_names(&self) -> &[String] {
        &self.regs
    }

    pub fn num_regs(&self) -> usize {
        self.regs.len()
    }

    pub fn reg_name(&self, r: Reg) -> &str {
        &self.regs[r.index()]
    }

    pub fn reg(&self, name: &str) -> Option<Reg> {
        self.regs.iter().position(|n| n == name).map(|i| Reg(i as u32))
    }

    /// Returns the register with this name, interning it if needed.
    pub fn intern(&mut self, name: &str) -> Reg {
        match self.reg(name) {
            Some(r) => r,
            None => {
                self.regs.push(name.to_string());
                Reg(self.regs.len() as u32 - 1)
            }
        }
    }

    /// Internal index of a source location.
    pub fn internal(&self, source_loc: usize) -> usize {
        source_loc + self.prologue
    }

    /// Source location of an internal index, `None` for prologue entries.
    pub fn source(&self, loc: usize) -> Option<usize> {
        loc.checked_sub(self.prologue)
    }

    /// Human readable label of an internal location.
    pub fn label(&self, loc: usize) -> String {
        match self.source(loc) {
            Some(s) => s.to_string(),
            None => format!("^{}", self.regions[loc].name),
        }
    }

    /// Allocation sites, the base symbols of the value domain.
    pub fn base_set(&self) -> BTreeSet<usize> {
        self.instrs.iter().enumerate().filter(|(_, i)| matches!(i, Instr::Alloc { .. })).map(|(l, _)| l).collect()
    }

    /// Printable name of an allocation site.
    pub fn base_name(&self, site: usize) -> String {
        if let Some(region) = self.regions.get(site) {
            if site < self.prologue {
                return region.name.clone();
            }
        }
        match &self.instrs[site] {
            Instr::Alloc { dst, .. } => {
                let name = self.reg_name(*dst);
                let shared =
                    self.instrs.iter().enumerate().any(|(l, i)| {
                        l != site && matches!(i, Instr::Alloc { dst: d, .. } if self.reg_name(*d) == name)
                    });
                if shared {
                    format!("{}@{}", name, self.label(site))
                } else {
                    name.to_string()
                }
            }
            _ => format!("site{}", site),
        }
    }

    /// Size of the block allocated at `site`.
    pub fn alloc_size(&self, site: usize) -> Option<u64> {
        match self.instrs.get(site) {
            Some(Instr::Alloc { size, .. }) => Some(*size),
            _ => None,
        }
    }

    pub fn sanitizer(&self, loc: usize) -> Option<Sanitize> {
        self.sanitizers.get(&loc).copied()
    }

    pub fn sanitizers(&self) -> &BTreeMap<usize, Sanitize> {
        &self.sanitizers
    }

    pub fn set_sanitizers(&mut self, plan: BTreeMap<usize, Sanitize>) {
        self.sanitizers = plan;
    }

    /// Replaces the instruction at `loc`.
    pub fn set_instr(&mut self, loc: usize, instr: Instr) {
        self.instrs[loc] = instr;
    }

    /// Predecessors of a location: the fall-through predecessor and every
    /// jump or branch that targets it.
    pub fn pred(&self, loc: usize) -> Result<BTreeSet<usize>, LocError> {
        if loc >= self.instrs.len() {
            return Err(LocError::OutOfRange(loc));
        }
        let mut out = BTreeSet::new();
        if loc > 0 {
            out.insert(loc - 1);
        }
        for (j, instr) in self.instrs.iter().enumerate() {
            match instr {
                Instr::Jmp { target: Target::Loc(t) } | Instr::Beqz { target: Target::Loc(t), .. } if *t == loc => {
                    out.insert(j);
                }
                _ => {}
            }
        }
        Ok(out)
    }

    /// Locations control can reach from `loc` in one step, ignoring the
    /// termination sentinel.
    pub fn successors(&self, loc: usize) -> Vec<usize> {
        let next = loc + 1;
        let fall = (next < self.instrs.len()).then_some(next);
        match &self.instrs[loc] {
            Instr::Jmp { target } => target_loc(*target).into_iter().collect(),
            Instr::Beqz { target, .. } => {
                let mut v: Vec<usize> = fall.into_iter().collect();
                if let Some(t) = target_loc(*target) {
                    if !v.contains(&t) {
                        v.push(t);
                    }
                }
                v
            }
            _ => fall.into_iter().collect(),
        }
    }

    /// Reverse post-order of the control-flow graph from location 0,
    /// followed by any unreachable locations in index order.
    pub fn reverse_post_order(&self) -> Vec<usize> {
        let n = self.instrs.len();
        let mut seen = vec![false; n];
        let mut post = Vec::with_capacity(n);
        if n > 0 {
            let mut stack: Vec<(usize, usize)> = vec![(0, 0)];
            seen[0] = true;
            while let Some((node, idx)) = stack.pop() {
                let succ = self.successors(node);
                if idx < succ.len() {
                    stack.push((node, idx + 1));
                    let s = succ[idx];
                    if !seen[s] {
                        seen[s] = true;
                        stack.push((s, 0));
                    }
                } else {
                    post.push(node);
                }
            }
        }
        post.reverse();
        for (l, s) in seen.iter().enumerate() {
            if !s {
                post.push(l);
            }
        }
        post
    }

    /// Binds the policy: prepends a formal `alloc` per region, interns
    /// policy registers, and fixes the word width.
    pub fn link(&self, policy: &Policy, default_width: u32) -> Result<Program, PolicyError> {
        if self.is_linked() {
            return Err(PolicyError::AlreadyLinked);
        }
        let width = policy.width.unwrap_or(default_width);
        policy.validate(width)?;
        let k = policy.regions.len();
        let mut out = self.clone();
        out.width = width;
        out.linked = true;
        out.prologue = k;
        out.regions = policy.regions.clone();
        for instr in &mut out.instrs {
            if let Some(Target::Loc(t)) = instr.target_mut() {
                *t += k;
            }
        }
        let mut prologue = Vec::with_capacity(k);
        for region in &policy.regions {
            let dst = out.intern(&region.name);
            prologue.push(Instr::Alloc { dst, size: region.size });
        }
        for decl in &policy.regs {
            out.intern(&decl.name);
        }
        prologue.append(&mut out.instrs);
        out.instrs = prologue;
        out.sanitizers = self.sanitizers.iter().map(|(l, s)| (l + k, *s)).collect();
        Ok(out)
    }

    /// Renders the source part of the program in the text format accepted
    /// by [`parse_program`].
    pub fn render(&self) -> String {
        let mut out = String::new();
        for loc in self.prologue..self.instrs.len() {
            out.push_str(&format!("{}: {}\n", loc - self.prologue, self.render_instr(loc)));
        }
        out
    }

    pub fn render_target(&self, t: Target) -> String {
        match t {
            Target::End => "end".to_string(),
            Target::Loc(l) => self.label(l),
        }
    }

    pub fn render_expr(&self, e: &Expr) -> String {
        match e {
            Expr::Const(c) => c.to_string(),
            Expr::Reg(r) => self.reg_name(*r).to_string(),
            Expr::Not(a) => format!("(Not {})", self.render_expr(a)),
            Expr::Bin(op, a, b) => {
                format!("({} {} {})", self.render_expr(a), op, self.render_expr(b))
            }
        }
    }

    pub fn render_instr(&self, loc: usize) -> String {
        let prefix = if self.instrs[loc].is_hardened() { "hardened " } else { "" };
        let body = match &self.instrs[loc] {
            Instr::Asgn { dst, expr } => format!("{} <- {}", self.reg_name(*dst), self.render_expr(expr)),
            Instr::Load { dst, addr, .. } => {
                format!("load {}, {}", self.reg_name(*dst), self.render_expr(addr))
            }
            Instr::Store { src, addr, .. } => {
                format!("store {}, {}", self.reg_name(*src), self.render_expr(addr))
            }
            Instr::Jmp { target } => format!("jmp {}", self.render_target(*target)),
            Instr::Beqz { cond, target, .. } => {
                format!("beqz {}, {}", self.reg_name(*cond), self.render_target(*target))
            }
            Instr::CondAsgn { dst, expr, cond } => {
                format!("cmov {}, {} if {}", self.reg_name(*dst), self.render_expr(expr), self.render_expr(cond))
            }
            Instr::Fence => "fence".to_string(),
            Instr::Alloc { dst, size } => format!("alloc {}, {}", self.reg_name(*dst), size),
        };
        format!("{}{}", prefix, body)
    }
}

fn target_loc(t: Target) -> Option<usize> {
    match t {
        Target::Loc(l) => Some(l),
        Target::End => None,
    }
}

impl Policy {
    pub fn decl(&self, name: &str) -> Option<&RegDecl> {
        self.regs.iter().find(|d| d.name == name)
    }

    pub fn validate(&self, width: u32) -> Result<(), PolicyError> {
        if width == 0 || width > MAX_WIDTH {
            return Err(PolicyError::Width(width));
        }
        let mut seen = BTreeSet::new();
        let min = -(1i128 << (width - 1));
        let max = (1i128 << (width - 1)) - 1;
        let check = |name: &str, range: Option<(i64, i64)>| match range {
            Some((lo, hi)) if (lo as i128) < min || (hi as i128) > max || lo > hi => {
                Err(PolicyError::Range { name: name.to_string(), lo, hi, width })
            }
            _ => Ok(()),
        };
        for d in &self.regs {
            if !seen.insert(d.name.clone()) {
                return Err(PolicyError::Duplicate(d.name.clone()));
            }
            check(&d.name, d.range)?;
        }
        for r in &self.regions {
            if !seen.insert(r.name.clone()) {
                return Err(PolicyError::Duplicate(r.name.clone()));
            }
            if r.size == 0 {
                return Err(PolicyError::EmptyRegion(r.name.clone()));
            }
            check(&r.name, r.range)?;
        }
        Ok(())
    }

    /// Renders the policy in the text format accepted by [`parse_policy`].
    pub fn render(&self) -> String {
        let mut out = String::new();
        if let Some(w) = self.width {
            out.push_str(&format!("width {}\n", w));
        }
        let sec = |s: Secrecy| match s {
            Secrecy::Public => "public",
            Secrecy::Secret => "secret",
        };
        let range = |r: Option<(i64, i64)>| match r {
            Some((lo, hi)) => format!(" {}..{}", lo, hi),
            None => String::new(),
        };
        for d in &self.regs {
            out.push_str(&format!("reg {} {}{}\n", d.name, sec(d.secrecy), range(d.range)));
        }
        for r in &self.regions {
            out.push_str(&format!("region {} {} {}{}\n", r.name, r.size, sec(r.secrecy), range(r.range)));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Program text parsing

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    LParen,
    RParen,
    Comma,
    Arrow,
}

struct Lexer<'a> {
    line: usize,
    chars: Vec<(usize, char)>,
    pos: usize,
    _src: &'a str,
}

impl<'a> Lexer<'a> {
    fn new(line: usize, src: &'a str) -> Self {
        Lexer { line, chars: src.char_indices().collect(), pos: 0, _src: src }
    }

    fn err(&self, col: usize, msg: impl Into<String>) -> ParseError {
        ParseError::Syntax { line: self.line, col: col + 1, msg: msg.into() }
    }

    fn tokens(mut self) -> Result<Vec<(usize, Tok)>, ParseError> {
        let mut out = Vec::new();
        while self.pos < self.chars.len() {
            let (col, c) = self.chars[self.pos];
            if c.is_whitespace() {
                self.pos += 1;
                continue;
            }
            match c {
                '(' => {
                    out.push((col, Tok::LParen));
                    self.pos += 1;
                }
                ')' => {
                    out.push((col, Tok::RParen));
                    self.pos += 1;
                }
                ',' => {
                    out.push((col, Tok::Comma));
                    self.pos += 1;
                }
                '<' => {
                    if self.chars.get(self.pos + 1).map(|x| x.1) == Some('-') {
                        out.push((col, Tok::Arrow));
                        self.pos += 2;
                    } else {
                        return Err(self.err(col, "expected `<-`"));
                    }
                }
                '-' | '0'..='9' => {
                    let start = self.pos;
                    self.pos += 1;
                    while self.pos < self.chars.len()
                        && (self.chars[self.pos].1.is_ascii_alphanumeric() || self.chars[self.pos].1 == '_')
                    {
                        self.pos += 1;
                    }
                    let text: String = self.chars[start..self.pos].iter().map(|x| x.1).collect();
                    let value = parse_int(&text).ok_or_else(|| self.err(col, format!("bad integer `{}`", text)))?;
                    out.push((col, Tok::Int(value)));
                }
                c if c.is_alphabetic() || c == '_' => {
                    let start = self.pos;
                    while self.pos < self.chars.len()
                        && (self.chars[self.pos].1.is_alphanumeric() || self.chars[self.pos].1 == '_')
                    {
                        self.pos += 1;
                    }
                    let text: String = self.chars[start..self.pos].iter().map(|x| x.1).collect();
                    out.push((col, Tok::Ident(text)));
                }
                other => return Err(self.err(col, format!("unexpected character `{}`", other))),
            }
        }
        Ok(out)
    }
}

/// Parses a decimal, `0x` hexadecimal, or `0b` binary literal with an
/// optional leading minus sign.
pub fn parse_int(text: &str) -> Option<i64> {
    let (neg, body) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let body = body.replace('_', "");
    let magnitude: i128 = if let Some(h) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i128::from_str_radix(h, 16).ok()?
    } else if let Some(b) = body.strip_prefix("0b").or_else(|| body.strip_prefix("0B")) {
        i128::from_str_radix(b, 2).ok()?
    } else {
        body.parse::<i128>().ok()?
    };
    let v = if neg { -magnitude } else { magnitude };
    if v < i64::MIN as i128 || v > u64::MAX as i128 {
        return None;
    }
    // Literals up to 2^64-1 are accepted and reinterpreted as 64-bit words.
    Some(v as i64)
}

const KEYWORDS: &[&str] = &["load", "store", "jmp", "beqz", "cmov", "fence", "alloc", "if", "end", "hardened"];

fn is_reserved(name: &str) -> bool {
    KEYWORDS.contains(&name) || Op::from_name(name).is_some()
}

struct LineParser<'p> {
    line: usize,
    toks: Vec<(usize, Tok)>,
    pos: usize,
    regs: &'p mut Vec<String>,
}

impl<'p> LineParser<'p> {
    fn err(&self, msg: impl Into<String>) -> ParseError {
        let col = self.toks.get(self.pos).map(|t| t.0 + 1).unwrap_or(0);
        ParseError::Syntax { line: self.line, col, msg: msg.into() }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.1)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.1.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected {}", what)))
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.err("expected identifier")),
        }
    }

    fn reg(&mut self) -> Result<Reg, ParseError> {
        let name = self.ident()?;
        if is_reserved(&name) {
            self.pos -= 1;
            return Err(self.err(format!("`{}` is reserved", name)));
        }
        Ok(intern(self.regs, &name))
    }

    fn target(&mut self) -> Result<RawTarget, ParseError> {
        match self.next() {
            Some(Tok::Int(v)) if v >= 0 => Ok(RawTarget::Loc(v as usize)),
            Some(Tok::Ident(s)) if s == "end" => Ok(RawTarget::End),
            _ => {
                self.pos -= 1;
                Err(self.err("expected location or `end`"))
            }
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let lhs = self.unary()?;
        if let Some(Tok::Ident(name)) = self.peek() {
            if let Some(op) = Op::from_name(name) {
                if op.is_unary() {
                    return Err(self.err("`Not` is a prefix operator"));
                }
                self.pos += 1;
                let rhs = self.unary()?;
                if let Some(Tok::Ident(n2)) = self.peek() {
                    if Op::from_name(n2).is_some() {
                        return Err(self.err("chained operators need parentheses"));
                    }
                }
                return Ok(Expr::bin(op, lhs, rhs));
            }
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek().cloned() {
            Some(Tok::Ident(name)) if Op::from_name(&name) == Some(Op::Not) => {
                self.pos += 1;
                Ok(Expr::Not(Box::new(self.unary()?)))
            }
            Some(Tok::Ident(_)) => Ok(Expr::Reg(self.reg()?)),
            Some(Tok::Int(v)) => {
                self.pos += 1;
                Ok(Expr::Const(v))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            _ => Err(self.err("expected expression")),
        }
    }

    fn done(&self) -> Result<(), ParseError> {
        if self.pos < self.toks.len() {
            Err(self.err("unexpected trailing input"))
        } else {
            Ok(())
        }
    }
}

fn intern(regs: &mut Vec<String>, name: &str) -> Reg {
    match regs.iter().position(|n| n == name) {
        Some(i) => Reg(i as u32),
        None => {
            regs.push(name.to_string());
            Reg(regs.len() as u32 - 1)
        }
    }
}

#[derive(Clone, Copy)]
enum RawTarget {
    Loc(usize),
    End,
}

/// Parses program text. Each non-blank line is `N: <instr>`; `#` starts a
/// comment; locations must be dense and ascending from 0.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let mut regs = Vec::new();
    let mut instrs: Vec<(usize, Instr, Option<RawTarget>)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        if line.trim().is_empty() {
            continue;
        }
        let colon = line.find(':').ok_or(ParseError::Syntax {
            line: line_no,
            col: 1,
            msg: "expected `N:` location prefix".into(),
        })?;
        let loc_text = line[..colon].trim();
        let loc: usize = loc_text.parse().map_err(|_| ParseError::Syntax {
            line: line_no,
            col: 1,
            msg: format!("bad location `{}`", loc_text),
        })?;
        if loc < instrs.len() {
            return Err(ParseError::DuplicateLocation { line: line_no, loc });
        }
        if loc > instrs.len() {
            return Err(ParseError::LocationGap { line: line_no, expected: instrs.len(), found: loc });
        }
        let body = &line[colon + 1..];
        let toks = Lexer::new(line_no, body).tokens().map_err(|e| shift_col(e, colon + 1))?;
        let mut p = LineParser { line: line_no, toks, pos: 0, regs: &mut regs };
        let (instr, target) = parse_instr(&mut p).map_err(|e| shift_col(e, colon + 1))?;
        instrs.push((line_no, instr, target));
    }
    let n = instrs.len();
    let mut out = Vec::with_capacity(n);
    for (line, mut instr, target) in instrs {
        if let Some(t) = target {
            let resolved = match t {
                RawTarget::End => Target::End,
                RawTarget::Loc(l) if l < n => Target::Loc(l),
                RawTarget::Loc(l) => return Err(ParseError::DanglingTarget { line, target: l }),
            };
            if let Some(slot) = instr.target_mut() {
                *slot = resolved;
            }
        }
        out.push(instr);
    }
    Ok(Program::from_parts(out, regs, DEFAULT_WIDTH))
}

fn shift_col(e: ParseError, by: usize) -> ParseError {
    match e {
        ParseError::Syntax { line, col, msg } => ParseError::Syntax { line, col: col + by, msg },
        other => other,
    }
}

fn parse_instr(p: &mut LineParser<'_>) -> Result<(Instr, Option<RawTarget>), ParseError> {
    let mut hardened = false;
    if let Some(Tok::Ident(k)) = p.peek() {
        if k == "hardened" {
            hardened = true;
            p.pos += 1;
        }
    }
    let head = match p.peek() {
        Some(Tok::Ident(s)) => s.clone(),
        _ => return Err(p.err("expected instruction")),
    };
    let result = match head.as_str() {
        "load" | "store" => {
            p.pos += 1;
            let r = p.reg()?;
            p.expect(Tok::Comma, "`,`")?;
            let addr = p.expr()?;
            if head == "load" {
                (Instr::Load { dst: r, addr, hardened }, None)
            } else {
                (Instr::Store { src: r, addr, hardened }, None)
            }
        }
        "jmp" => {
            p.pos += 1;
            let t = p.target()?;
            (Instr::Jmp { target: Target::End }, Some(t))
        }
        "beqz" => {
            p.pos += 1;
            let cond = p.reg()?;
            p.expect(Tok::Comma, "`,`")?;
            let t = p.target()?;
            (Instr::Beqz { cond, target: Target::End, hardened }, Some(t))
        }
        "cmov" => {
            p.pos += 1;
            let dst = p.reg()?;
            p.expect(Tok::Comma, "`,`")?;
            let expr = p.expr()?;
            match p.next() {
                Some(Tok::Ident(k)) if k == "if" => {}
                _ => {
                    p.pos -= 1;
                    return Err(p.err("expected `if`"));
                }
            }
            let cond = p.expr()?;
            (Instr::CondAsgn { dst, expr, cond }, None)
        }
        "fence" => {
            p.pos += 1;
            (Instr::Fence, None)
        }
        "alloc" => {
            p.pos += 1;
            let dst = p.reg()?;
            p.expect(Tok::Comma, "`,`")?;
            match p.next() {
                Some(Tok::Int(v)) if v > 0 => (Instr::Alloc { dst, size: v as u64 }, None),
                Some(Tok::Int(v)) => {
                    return Err(p.err(format!("Alloc size must be positive, found {}", v)));
                }
                Some(Tok::Ident(s)) => {
                    return Err(ParseError::NonConstantAllocSize { line: p.line, found: s });
                }
                _ => return Err(p.err("expected Alloc size")),
            }
        }
        _ => {
            let dst = p.reg()?;
            p.expect(Tok::Arrow, "`<-`")?;
            let expr = p.expr()?;
            (Instr::Asgn { dst, expr }, None)
        }
    };
    if hardened && !result.0.is_hardenable() {
        return Err(p.err("only load, store and beqz can be hardened"));
    }
    p.done()?;
    Ok(result)
}

/// Parses a policy file: `width N`, `reg NAME public|secret [LO..HI]`,
/// `region NAME SIZE public|secret [LO..HI]`.
pub fn parse_policy(text: &str) -> Result<Policy, PolicyError> {
    let mut policy = Policy::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let words: Vec<&str> = body.split_whitespace().collect();
        if words.is_empty() {
            continue;
        }
        let err = |msg: &str| PolicyError::Syntax { line, msg: msg.to_string() };
        let secrecy = |w: &str| match w {
            "public" => Ok(Secrecy::Public),
            "secret" => Ok(Secrecy::Secret),
            _ => Err(err("expected `public` or `secret`")),
        };
        let range = |w: Option<&&str>| -> Result<Option<(i64, i64)>, PolicyError> {
            match w {
                None => Ok(None),
                Some(w) => {
                    let (a, b) = w.split_once("..").ok_or_else(|| err("expected LO..HI"))?;
                    let lo = parse_int(a).ok_or_else(|| err("bad range bound"))?;
                    let hi = parse_int(b).ok_or_else(|| err("bad range bound"))?;
                    Ok(Some((lo, hi)))
                }
            }
        };
        let name_ok = |n: &str| {
            let valid = n.chars().next().is_some_and(|c| c.is_alphabetic() || c == '_')
                && n.chars().all(|c| c.is_alphanumeric() || c == '_')
                && !is_reserved(n);
            if valid {
                Ok(n.to_string())
            } else {
                Err(err("bad name"))
            }
        };
        match words[0] {
            "width" if words.len() == 2 => {
                let w: u32 = words[1].parse().map_err(|_| err("bad width"))?;
                policy.width = Some(w);
            }
            "reg" if (3..=4).contains(&words.len()) => policy.regs.push(RegDecl {
                name: name_ok(words[1])?,
                secrecy: secrecy(words[2])?,
                range: range(words.get(3))?,
            }),
            "region" if (4..=5).contains(&words.len()) => policy.regions.push(RegionDecl {
                name: name_ok(words[1])?,
                size: words[2].parse().map_err(|_| err("bad region size"))?,
                secrecy: secrecy(words[3])?,
                range: range(words.get(4))?,
            }),
            _ => return Err(err("expected `width`, `reg` or `region` declaration")),
        }
    }
    policy.validate(policy.width.unwrap_or(MAX_WIDTH))?;
    Ok(policy)
}
