//! Command-line front end.
//!
//! Exit codes: 0 success or pass, 1 violation (or hardening needed with
//! `--strict`), 2 usage or input error, 3 inconclusive check.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::absint::{default_obs_bits, fixpoint, initial_config, prepare, render_fixpoint, AbsConfig, Mode};
use crate::concrete::{check_bits, render_trace, run, Directive, InitValues, State};
use crate::hardener::{analysis_table, harden_linked, lower_flag, render_table};
use crate::lang::{parse_policy, parse_program, Op, Policy, Program, DEFAULT_WIDTH};
use crate::oracle::{check_sni, check_ss, check_ss_implies_sni, Bounds, Implication};
use crate::taint::{check_well_defined, EXHAUSTIVE_BOUND};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INCONCLUSIVE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "muslh", version, about = "Analysis and targeted hardening of µASM programs against Spectre v1")]
pub struct Cli {
    /// Word width used when the policy does not set one.
    #[arg(long, global = true, env = "MUSLH_WIDTH", default_value_t = DEFAULT_WIDTH)]
    pub width: u32,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Property {
    Ss,
    Sni,
    SsImpliesSni,
}

#[derive(Debug, Args)]
pub struct Inputs {
    /// Program file.
    pub program: PathBuf,
    /// Policy file.
    pub policy: PathBuf,
    /// Observed address bits as `a:b` (inclusive).
    #[arg(long, value_parser = parse_bits)]
    pub obs_bits: Option<(u32, u32)>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Execute a program under explicit directives.
    Exec {
        #[command(flatten)]
        inputs: Inputs,
        /// Initial values, e.g. `x=3,a[0]=7`.
        #[arg(long, default_value = "")]
        init: String,
        /// Comma-separated `s`/`f` directives; defaults to all `step`.
        #[arg(long)]
        directives: Option<String>,
        /// Step limit when no directives are given.
        #[arg(long, default_value_t = 10_000)]
        max_steps: usize,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Print the per-access analysis table.
    Analyze {
        #[command(flatten)]
        inputs: Inputs,
        /// Growth count before widening.
        #[arg(long)]
        widen: Option<u32>,
        /// Also dump the abstract state at every location.
        #[arg(long)]
        states: bool,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Compute the hardening list and emit the hardened program.
    Harden {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        widen: Option<u32>,
        /// Print the program with `hardened` markers after the report.
        #[arg(long)]
        emit_program: bool,
        /// Print the flag-masking form after the report.
        #[arg(long)]
        lower_flag: bool,
        /// Exit with status 1 when anything needs hardening.
        #[arg(long)]
        strict: bool,
    },
    /// Check a security property by exhaustive enumeration.
    Check {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_enum)]
        property: Property,
        /// Check the hardened program instead of the input.
        #[arg(long)]
        harden: bool,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long)]
        max_states: Option<usize>,
        #[arg(long)]
        max_initial: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check well-definedness of taint operators exhaustively.
    Welldef {
        /// Operator mnemonic; all operators when omitted.
        #[arg(long)]
        op: Option<String>,
        /// Largest width to check, from 1 up.
        #[arg(long = "max-width", default_value_t = 3)]
        max_width: u32,
    },
}

fn parse_bits(s: &str) -> Result<(u32, u32), String> {
    let (a, b) = s.split_once(':').ok_or("expected `a:b`")?;
    let a = a.trim().parse().map_err(|_| "bad lower bit")?;
    let b = b.trim().parse().map_err(|_| "bad upper bit")?;
    Ok((a, b))
}

struct Loaded {
    program: Program,
    policy: Policy,
}

fn read(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {}", path.display(), e))
}

fn load(inputs: &Inputs, width: u32) -> Result<Loaded, String> {
    let src = read(&inputs.program)?;
    let program = parse_program(&src).map_err(|e| format!("{}: {}", inputs.program.display(), e))?;
    let policy = parse_policy(&read(&inputs.policy)?).map_err(|e| format!("{}: {}", inputs.policy.display(), e))?;
    let program = prepare(&program, &policy, width).map_err(|e| e.to_string())?;
    Ok(Loaded { program, policy })
}

fn bits_for(inputs: &Inputs, n: u32) -> Result<(u32, u32), String> {
    let bits = inputs.obs_bits.unwrap_or_else(|| default_obs_bits(n));
    check_bits(bits, n).map_err(|e| e.to_string())
}

fn config(inputs: &Inputs, n: u32, widen: Option<u32>) -> Result<AbsConfig, String> {
    let mut cfg = AbsConfig::for_width(n);
    cfg.obs_bits = bits_for(inputs, n)?;
    if let Some(w) = widen {
        cfg.widen_threshold = w;
    }
    Ok(cfg)
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

/// Parses `args` (including the program name) and runs the command,
/// writing to `out`. Returns the exit code.
pub fn run_cli(args: &[String], out: &mut dyn std::io::Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = write!(out, "{}", e);
            return code;
        }
    };
    match dispatch(&cli, out) {
        Ok(code) => code,
        Err(msg) => {
            let _ = writeln!(out, "error: {}", msg);
            EXIT_USAGE
        }
    }
}

#[derive(Serialize)]
struct TraceLine {
    location: String,
    instruction: String,
    directive: Directive,
    observation: String,
    taint: String,
    misspeculating: bool,
}

fn dispatch(cli: &Cli, out: &mut dyn std::io::Write) -> Result<i32, String> {
    let w = |out: &mut dyn std::io::Write, s: &str| out.write_all(s.as_bytes()).map_err(|e| e.to_string());
    match &cli.command {
        Command::Exec { inputs, init, directives, max_steps, format } => {
            let l = load(inputs, cli.width)?;
            let n = l.program.width();
            let bits = bits_for(inputs, n)?;
            let init = InitValues::parse(init, n).map_err(|e| e.to_string())?;
            let s0 = State::initial(&l.program, &l.policy, &init).map_err(|e| e.to_string())?;
            let ds: Vec<Directive> = match directives {
                Some(d) => d
                    .split(',')
                    .map(str::trim)
                    .filter(|x| !x.is_empty())
                    .map(|x| Directive::parse(x).ok_or_else(|| format!("unknown directive `{}`", x)))
                    .collect::<Result<_, _>>()?,
                None => vec![Directive::Step; *max_steps],
            };
            let trace = run(&l.program, &s0, &ds).map_err(|e| e.to_string())?;
            match format {
                Format::Text => w(out, &render_trace(&l.program, &trace, bits))?,
                Format::Json => {
                    let lines: Vec<TraceLine> = trace
                        .steps
                        .iter()
                        .map(|st| {
                            let o = st.obs.project(bits);
                            TraceLine {
                                location: l.program.label(st.pc),
                                instruction: l.program.render_instr(st.pc),
                                directive: st.directive,
                                observation: o.to_string(),
                                taint: o.taint.compact(),
                                misspeculating: st.state.misspec,
                            }
                        })
                        .collect();
                    w(out, &json(&lines))?;
                    w(out, "\n")?;
                }
            }
            Ok(EXIT_OK)
        }
        Command::Analyze { inputs, widen, states, format } => {
            let l = load(inputs, cli.width)?;
            let cfg = config(inputs, l.program.width(), *widen)?;
            let outcome = harden_linked(&l.program, &l.policy, cfg).map_err(|e| e.to_string())?;
            let rows = analysis_table(&outcome).map_err(|e| e.to_string())?;
            match format {
                Format::Text => {
                    w(out, &render_table(&rows))?;
                    if *states {
                        let spec = fixpoint(&l.program, &initial_config(&l.program, &l.policy), Mode::Spec, &cfg)
                            .map_err(|e| e.to_string())?;
                        w(out, "\n# sequential\n")?;
                        w(out, &render_fixpoint(&l.program, &outcome.seq))?;
                        w(out, "\n# speculative\n")?;
                        w(out, &render_fixpoint(&l.program, &spec))?;
                        w(out, "\n# speculative with hardening\n")?;
                        w(out, &render_fixpoint(&l.program, &outcome.phase2.fixpoint))?;
                    }
                }
                Format::Json => {
                    w(out, &json(&rows))?;
                    w(out, "\n")?;
                }
            }
            Ok(EXIT_OK)
        }
        Command::Harden { inputs, widen, emit_program, lower_flag: lower, strict } => {
            let l = load(inputs, cli.width)?;
            let cfg = config(inputs, l.program.width(), *widen)?;
            let outcome = harden_linked(&l.program, &l.policy, cfg).map_err(|e| e.to_string())?;
            let report = outcome.report();
            w(out, &json(&report))?;
            w(out, "\n")?;
            if *emit_program {
                w(out, "\n")?;
                w(out, &outcome.hardened.render())?;
            }
            if *lower {
                w(out, "\n")?;
                w(out, &lower_flag(&outcome.hardened))?;
            }
            Ok(if *strict && !report.hardened.is_empty() { EXIT_VIOLATION } else { EXIT_OK })
        }
        Command::Check { inputs, property, harden, max_steps, max_states, max_initial, seed } => {
            let l = load(inputs, cli.width)?;
            let n = l.program.width();
            let mut bounds = Bounds::for_width(n);
            bounds.obs_bits = bits_for(inputs, n)?;
            bounds.seed = *seed;
            if let Some(v) = max_steps {
                bounds.max_steps = *v;
            }
            if let Some(v) = max_states {
                bounds.max_states = *v;
            }
            if let Some(v) = max_initial {
                bounds.max_initial = *v;
            }
            let program = if *harden {
                let mut cfg = AbsConfig::for_width(n);
                cfg.obs_bits = bounds.obs_bits;
                harden_linked(&l.program, &l.policy, cfg).map_err(|e| e.to_string())?.hardened
            } else {
                l.program
            };
            let code = |pass: bool, violation: bool| {
                if pass {
                    EXIT_OK
                } else if violation {
                    EXIT_VIOLATION
                } else {
                    EXIT_INCONCLUSIVE
                }
            };
            match property {
                Property::Ss => {
                    let v = check_ss(&program, &l.policy, &bounds);
                    w(out, &json(&v))?;
                    w(out, "\n")?;
                    Ok(code(v.is_pass(), v.is_violation()))
                }
                Property::Sni => {
                    let v = check_sni(&program, &l.policy, &bounds);
                    w(out, &json(&v))?;
                    w(out, "\n")?;
                    Ok(code(v.is_pass(), v.is_violation()))
                }
                Property::SsImpliesSni => {
                    let v = check_ss_implies_sni(&program, &l.policy, &bounds);
                    w(out, &json(&v))?;
                    w(out, "\n")?;
                    Ok(match v {
                        Implication::Holds | Implication::Vacuous => EXIT_OK,
                        Implication::Broken { .. } => EXIT_VIOLATION,
                        Implication::Inconclusive { .. } => EXIT_INCONCLUSIVE,
                    })
                }
            }
        }
        Command::Welldef { op, max_width } => {
            if *max_width == 0 || *max_width > EXHAUSTIVE_BOUND {
                return Err(format!("--max-width must be in 1..={}", EXHAUSTIVE_BOUND));
            }
            let ops: Vec<Op> = match op {
                Some(name) => vec![Op::from_name(name).ok_or_else(|| format!("unknown operator `{}`", name))?],
                None => Op::ALL.to_vec(),
            };
            let mut failed = false;
            for op in ops {
                for n in 1..=*max_width {
                    match check_well_defined(op, n).map_err(|e| e.to_string())? {
                        None => w(out, &format!("{} n={}: pass\n", op, n))?,
                        Some(cx) => {
                            failed = true;
                            w(out, &format!("{} n={}: FAIL {:?}\n", op, n, cx))?;
                        }
                    }
                }
            }
            Ok(if failed { EXIT_VIOLATION } else { EXIT_OK })
        }
    }
}
