//! Acceptance criteria, one line per criterion. Exits nonzero when any
//! criterion fails.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use muslh::absdom::check::{
    di_counterexample, interval_counterexample, mul_enum_counterexample, normalization_counterexample,
};
use muslh::absint::{abs_step, eval_taint, fixpoint, initial_config, prepare, AbsConfig, Mode};
use muslh::hardener::{analysis_table, harden, harden_linked, Reason, TableCell};
use muslh::lang::{parse_policy, parse_program, Instr, Op, Policy, Program};
use muslh::oracle::gen::{random_program, GenParams};
use muslh::oracle::inclusion::check_random_trace;
use muslh::oracle::{check_ss, check_ss_implies_sni, random_initial, Bounds, Implication};
use muslh::taint::check_well_defined;

const WELLDEF_WIDTHS: [u32; 3] = [1, 2, 3];
const WELLDEF_BUDGET: Duration = Duration::from_secs(5 * 60);
const CAMPAIGN_PROGRAMS: usize = 500;
const CAMPAIGN_SEED: u64 = 0x5eed;
const CAMPAIGN_BUDGET: Duration = Duration::from_secs(30 * 60);
const INCLUSION_PROGRAMS: usize = 200;
const INCLUSION_TRACES: usize = 100;
const INCLUSION_FORCE_PROB: f64 = 0.5;
const INCLUSION_MAX_STEPS: usize = 64;
const DOMAIN_INTERVAL_WIDTH: u32 = 6;
const DOMAIN_DI_WIDTH: u32 = 3;
const DOMAIN_BUDGET: Duration = Duration::from_secs(10 * 60);
/// Oracle bounds for each shipped example in criterion 6: initial-state
/// cap and trace length.
const CORPUS_BOUNDS: [(&str, usize, usize); 9] = [
    ("gadget", 1 << 16, 256),
    ("manual_slh", 1 << 16, 256),
    ("align_taint", 1 << 16, 256),
    ("pointer_values", 1 << 16, 256),
    ("struct_array", 4096, 256),
    ("nested_loads", 1024, 256),
    ("chacha_copy", 64, 4096),
    ("scatter_gather", 16, 256),
    ("scatter_gather_fixed", 16, 256),
];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn corpus(name: &str) -> (String, String) {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus");
    (
        std::fs::read_to_string(dir.join(format!("{}.muasm", name))).unwrap(),
        std::fs::read_to_string(dir.join(format!("{}.policy", name))).unwrap(),
    )
}

fn linked(name: &str) -> (Program, Policy) {
    let (src, pol) = corpus(name);
    let policy = parse_policy(&pol).unwrap();
    (prepare(&parse_program(&src).unwrap(), &policy, 8).unwrap(), policy)
}

fn campaign_programs(count: usize) -> Vec<(Program, Policy)> {
    let mut rng = ChaCha8Rng::seed_from_u64(CAMPAIGN_SEED);
    let params = GenParams { width: 3, max_len: 8, loops: false };
    (0..count)
        .map(|_| {
            let (p, policy) = random_program(&mut rng, &params);
            (prepare(&p, &policy, 3).unwrap(), policy)
        })
        .collect()
}

fn welldefined() -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    for op in Op::ALL {
        for n in WELLDEF_WIDTHS {
            match check_well_defined(op, n) {
                Ok(None) => {}
                Ok(Some(cx)) => failures.push(format!("{} n={}: {:?}", op, n, cx)),
                Err(e) => failures.push(format!("{} n={}: {}", op, n, e)),
            }
        }
    }
    let t = start.elapsed();
    outcome(
        failures.is_empty() && t <= WELLDEF_BUDGET,
        format!("{} operators x n in {{1,2,3}}, {} counterexamples, {:.1?}", Op::ALL.len(), failures.len(), t),
    )
}

fn align_taint() -> Outcome {
    let (p, policy) = linked("align_taint");
    let cfg = AbsConfig { obs_bits: (2, 3), ..AbsConfig::for_width(4) };
    let fx = fixpoint(&p, &initial_config(&p, &policy), Mode::Seq, &cfg).unwrap();
    let load = p.internal(3);
    let st = fx.get(load).unwrap();
    let addr = st.taint(p.reg("addr").unwrap()).compact();
    let secret = st.taint(p.reg("secret").unwrap()).compact();
    let Instr::Load { addr: e, .. } = p.instr(load) else { unreachable!() };
    let address = eval_taint(4, st, e).compact();
    let obs_h = abs_step(&p, st, load, Mode::Seq).iter().any(|s| s.obs.has_h(cfg.obs_bits));
    let pass = addr == "(L,L,0,0)" && secret == "(0,0,H,H)" && address == "(L,L,H,H)" && !obs_h;
    outcome(pass, format!("addr={} secret={} address={} H in slice (2,3): {}", addr, secret, address, obs_h))
}

fn pointer_values() -> Outcome {
    let (p, policy) = linked("pointer_values");
    let cfg = AbsConfig::for_width(8);
    let fx = fixpoint(&p, &initial_config(&p, &policy), Mode::Seq, &cfg).unwrap();
    let last = p.len() - 1;
    let post = abs_step(&p, fx.get(last).unwrap(), last, Mode::Seq).remove(0).state;
    let show = |r: &str| post.val(p.reg(r).unwrap()).render(&|_| "s".to_string());
    let got = [show("y"), show("z"), show("c"), show("d")];
    let want = ["{(s:{[3],[6]})}", "{(s:{[3,4],[6,7]})}", "{(ε:{[1,3]})}", "{(s:{[3],[6]}),(ε:{[1,3]})}"];
    outcome(got == want, format!("y={} z={} c={} d={}", got[0], got[1], got[2], got[3]))
}

fn nested_loads() -> Outcome {
    let (src, pol) = corpus("nested_loads");
    let o = harden(&parse_program(&src).unwrap(), &parse_policy(&pol).unwrap(), 8, |_| {}).unwrap();
    let rows = analysis_table(&o).unwrap();
    let cell = |v: &str, t: &str, boxed: bool| Some(TableCell { value: v.into(), taint: t.into(), boxed });
    let (l, h, top) = ("L^16", "H^16", "⊤");
    let expected = [
        ("x", cell("{(ε:{[0,7]})}", l, false), cell("{(ε:{[0,15]})}", l, false), cell("{(ε:{[0,15]})}", l, false)),
        ("a+x", cell("{(a:{[0,7]})}", l, false), cell("{(a:{[0,15]})}", l, false), cell("{(a:{[0,15]})}", l, false)),
        ("y=a[x]", cell("{(ε:{[0,255]})}", l, false), cell(top, h, false), cell(top, h, false)),
        ("b+y", cell("{(b:{[0,255]})}", l, false), cell(top, h, true), cell(top, h, true)),
        ("z=b[y]", cell("{(ε:{[0,255]})}", l, false), cell(top, h, false), cell("{(ε:{[0,255]})}", l, false)),
        ("c+z", cell("{(c:{[0,255]})}", l, false), cell(top, h, true), cell("{(c:{[0,255]})}", l, false)),
        ("w=c[z]", cell("{(ε:{[0,255]})}", l, false), cell(top, h, false), cell("{(ε:{[0,255]})}", l, false)),
    ];
    let mut mismatches = 0;
    for (row, (name, seq, spec, hk)) in rows.iter().zip(expected.iter()) {
        for (got, want) in [(&row.seq, seq), (&row.spec, spec), (&row.spec_hk, hk)] {
            if row.expr != *name || got != want {
                mismatches += 1;
            }
        }
    }
    mismatches += 3 * rows.len().abs_diff(expected.len());
    let list: Vec<(usize, Reason)> = o.report().hardened.iter().map(|e| (e.location, e.reason)).collect();
    let pass = mismatches == 0 && list == [(4, Reason::HObservation)];
    outcome(pass, format!("{} of 21 cells differ, hardened sources {:?}", mismatches, list))
}

fn ss_implies_sni(programs: &[(Program, Policy)]) -> Outcome {
    let start = Instant::now();
    let (mut holds, mut vacuous, mut broken, mut inconclusive) = (0, 0, 0, 0);
    for (p, policy) in programs {
        match check_ss_implies_sni(p, policy, &Bounds::for_width(3)) {
            Implication::Holds => holds += 1,
            Implication::Vacuous => vacuous += 1,
            Implication::Broken { .. } => broken += 1,
            Implication::Inconclusive { .. } => inconclusive += 1,
        }
    }
    let t = start.elapsed();
    outcome(
        broken == 0 && t <= CAMPAIGN_BUDGET,
        format!(
            "{} programs: {} hold, {} vacuous, {} broken, {} inconclusive, {:.1?}",
            programs.len(),
            holds,
            vacuous,
            broken,
            inconclusive,
            t
        ),
    )
}

fn hardened_is_safe(programs: &[(Program, Policy)]) -> Outcome {
    let mut checked = 0;
    let mut violations = Vec::new();
    let mut inconclusive = Vec::new();
    let mut sampled = 0;
    let mut run = |label: String, p: &Program, policy: &Policy, bounds: Bounds| {
        let mut cfg = AbsConfig::for_width(p.width());
        cfg.obs_bits = bounds.obs_bits;
        let hardened = harden_linked(p, policy, cfg).unwrap().hardened;
        checked += 1;
        match check_ss(&hardened, policy, &bounds) {
            muslh::oracle::Verdict::Pass { exhaustive, .. } => sampled += usize::from(!exhaustive),
            muslh::oracle::Verdict::Violation { .. } => violations.push(label),
            muslh::oracle::Verdict::Inconclusive { .. } => inconclusive.push(label),
        }
    };
    for (i, (p, policy)) in programs.iter().enumerate() {
        run(format!("random #{}", i), p, policy, Bounds::for_width(3));
    }
    for (name, max_initial, max_steps) in CORPUS_BOUNDS {
        let (p, policy) = linked(name);
        let bounds = Bounds { max_initial, max_steps, ..Bounds::for_width(p.width()) };
        run(name.to_string(), &p, &policy, bounds);
    }
    outcome(
        violations.is_empty(),
        format!(
            "{} programs, {} violations {:?}, {} inconclusive {:?}, {} checked on a sample of initial states",
            checked,
            violations.len(),
            violations,
            inconclusive.len(),
            inconclusive,
            sampled
        ),
    )
}

fn chacha() -> Outcome {
    let (p, policy) = linked("chacha_copy");
    let o = harden_linked(&p, &policy, AbsConfig::for_width(p.width())).unwrap();
    let list: Vec<(String, Reason)> = o.report().hardened.into_iter().map(|e| (e.instruction, e.reason)).collect();
    let pass = list.len() == 1 && list[0].0.starts_with("store") && list[0].1 == Reason::OobStore;
    outcome(pass, format!("hardened {:?}", list))
}

fn scatter_gather() -> Outcome {
    let mut detail = Vec::new();
    let mut pass = true;
    for (name, expect_hardened) in [("scatter_gather", true), ("scatter_gather_fixed", false)] {
        let (p, policy) = linked(name);
        let cfg = AbsConfig::for_width(p.width());
        let o = harden_linked(&p, &policy, cfg).unwrap();
        let gather = p.internal(11);
        let Instr::Load { addr, .. } = p.instr(gather) else { unreachable!() };
        let taint = eval_taint(p.width(), o.seq.get(gather).unwrap(), addr);
        let h_high = (cfg.obs_bits.0..p.width()).any(|i| taint.get(i as usize) == muslh::taint::Label::H);
        let hardened = o.list().contains(&gather);
        pass &=
            hardened == expect_hardened && h_high == expect_hardened && o.list().len() == usize::from(expect_hardened);
        detail.push(format!("{}: address {} hardened={}", name, taint.compact(), hardened));
    }
    outcome(pass, detail.join("; "))
}

fn inclusion() -> Outcome {
    let programs = campaign_programs(INCLUSION_PROGRAMS);
    let mut rng = ChaCha8Rng::seed_from_u64(CAMPAIGN_SEED ^ 1);
    let mut failures = Vec::new();
    let mut states = 0;
    for (i, (p, policy)) in programs.iter().enumerate() {
        let fx = fixpoint(p, &initial_config(p, policy), Mode::Spec, &AbsConfig::for_width(3)).unwrap();
        for _ in 0..INCLUSION_TRACES {
            let s0 = random_initial(p, policy, &mut rng).state;
            match check_random_trace(p, &fx, &s0, &mut rng, INCLUSION_FORCE_PROB, INCLUSION_MAX_STEPS) {
                Ok(k) => states += k,
                Err(f) => failures.push(format!("#{} at {}: {}", i, f.pc, f.what)),
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "{} programs x {} traces, {} states checked, {} failures {:?}",
            INCLUSION_PROGRAMS,
            INCLUSION_TRACES,
            states,
            failures.len(),
            failures.first()
        ),
    )
}

fn domains() -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    for op in Op::ALL {
        for n in 1..=DOMAIN_INTERVAL_WIDTH {
            if let Some(cx) = interval_counterexample(op, n) {
                failures.push(format!("interval {} n={}: {:?}", op, n, cx));
            }
        }
        for n in 1..=DOMAIN_DI_WIDTH {
            if let Some(cx) = di_counterexample(op, n) {
                failures.push(format!("DI {} n={}: {:?}", op, n, cx));
            }
        }
    }
    if let Some(cx) = mul_enum_counterexample(DOMAIN_INTERVAL_WIDTH) {
        failures.push(format!("Mul enumeration: {:?}", cx));
    }
    if let Some(cx) = normalization_counterexample(DOMAIN_INTERVAL_WIDTH) {
        failures.push(format!("normalization: {:?}", cx));
    }
    let t = start.elapsed();
    outcome(
        failures.is_empty() && t <= DOMAIN_BUDGET,
        format!(
            "interval n<=6, DI n<=3, Mul and normalization n=6: {} violations {:?}, {:.1?}",
            failures.len(),
            failures.first(),
            t
        ),
    )
}

fn main() {
    let programs = campaign_programs(CAMPAIGN_PROGRAMS);
    type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);
    let criteria: Vec<Criterion> = vec![
        ("1 taint operators are well-defined", Box::new(welldefined)),
        ("2 bit-level taint of the alignment example", Box::new(align_taint)),
        ("3 value domain on the pointer example", Box::new(pointer_values)),
        ("4 three-column table and hardening list", Box::new(nested_loads)),
        ("5 SS implies SNI on random programs", Box::new(|| ss_implies_sni(&programs))),
        ("6 hardened programs satisfy SS", Box::new(|| hardened_is_safe(&programs))),
        ("7 bounded copy loop hardens only its store", Box::new(chacha)),
        ("8 scatter-gather with variable and fixed window", Box::new(scatter_gather)),
        ("9 concrete states lie in the speculative fixpoint", Box::new(inclusion)),
        ("10 interval and DI operators are sound", Box::new(domains)),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let o = check();
        println!("[{}] {}: {}", if o.pass { "PASS" } else { "FAIL" }, name, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
