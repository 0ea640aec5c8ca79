//! Command-line front end: class computation, verification sweeps over
//! parameter grids and correlator-cache maintenance.
//!
//! Reports are JSON lines, one record per case, in grid order; they depend
//! only on the sweep configuration (the cache only changes how fast they are
//! produced), so serial and parallel runs, cold and warm caches, all give
//! byte-identical output.  Wall times are included only on request.
//!
//! Exit codes:
//! * `0`: success; conjecture counterexample candidates are reported with the
//!   flag `CONJECTURE-FAIL` and a warning, but do not fail the run;
//! * `1`: conjecture counterexample candidates found and `--strict` was given;
//! * `2`: invalid input (bad specification, bad flags, unreadable files);
//! * `3`: implementation bug or internal inconsistency (an oracle mismatch, a
//!   failing proven identity, a non-exact division, a cache conflict).

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::b_classes::{
    b_class_definition, b_class_fast, lp_relation_class, tilde_b_class, tilde_b_class_pushforward, tilde_b_pullback,
    BSpec,
};
use crate::dr_side::{a0_class_genus0, a1_class_genus0};
use crate::error::{Error, Result};
use crate::graph_core::{class_sub, TautClass};
use crate::intersect::{compositions, read_cache_file, render_cache, write_cache_file, Intersector};
use crate::rational::fmt_rational;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONJECTURE_FAIL: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_BUG: i32 = 3;

/// Flag attached to failing records whose statement is an open conjecture.
pub const CONJECTURE_FLAG: &str = "CONJECTURE-FAIL";
/// Flag attached to failing records whose statement is proven or an
/// internal consistency identity.
pub const BUG_FLAG: &str = "IMPLEMENTATION-BUG";

#[derive(Parser, Debug)]
#[command(name = "tautree", version, about = "Exact B-class computations and verification sweeps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Print a class B^m_{g,d} as canonical JSON.
    Bclass(BclassArgs),
    /// Run a verification sweep and write a JSON-lines report.
    Verify(VerifyArgs),
    /// Inspect or maintain the correlator cache.
    Cache(CacheArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// Push-forward definition.
    Def,
    /// Closed level/string formula.
    Fast,
    /// The coefficient class B~ of the generating polynomial.
    Tilde,
}

#[derive(Args, Debug)]
pub struct BclassArgs {
    #[arg(short = 'g', long = "g")]
    pub g: u32,
    #[arg(short = 'n', long = "n")]
    pub n: u32,
    #[arg(short = 'm', long = "m")]
    pub m: u32,
    /// Comma-separated exponents d_1,...,d_n.
    #[arg(short = 'd', long = "d", value_delimiter = ',', required = true)]
    pub d: Vec<u32>,
    #[arg(long, value_enum, default_value = "fast")]
    pub method: Method,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Check {
    /// Vanishing of B^m_{g,d} for sum d >= 2g+m-1 (pairing sweep).
    C1,
    /// Genus-0 equality B^1 = A^1 (pairing sweep of the difference).
    C2g0,
    /// Genus-0 equality B^0 = A^0 (pairing sweep of the difference).
    C3g0,
    /// Exact agreement of the independent constructions.
    Oracle,
    /// Liu–Pandharipande relations (pairing sweep).
    Lp,
    /// Reduced and full vanishing sweeps on every (g, n, m) cell.
    Reduction,
    /// Vanishing of the coefficient classes of degree above 2g+m-2.
    Degreebound,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, value_enum)]
    pub check: Check,
    /// Genus range: `a..b`, `a,b,c` or a single value.
    #[arg(short = 'g', long = "g", value_parser = parse_param_range, default_value = "0..1")]
    pub g: ParamRange,
    /// Range of the number of regular legs.
    #[arg(short = 'n', long = "n", value_parser = parse_param_range, default_value = "1..2")]
    pub n: ParamRange,
    /// Range of the number of frozen legs.
    #[arg(short = 'm', long = "m", value_parser = parse_param_range, default_value = "2..3")]
    pub m: ParamRange,
    /// Cap on sum d (for `lp`: cap on r).  Defaults: the ambient dimension
    /// for the vanishing checks, 4 for the genus-0 checks, 3 for `oracle`,
    /// 2 for `lp`.
    #[arg(short = 'd', long = "d")]
    pub d: Option<u32>,
    /// Restrict vanishing sweeps to sum d = 2g+m-1 with every d_i >= 1.
    #[arg(long)]
    pub reduced: bool,
    /// Exit with code 1 when a conjecture counterexample candidate is found.
    #[arg(long)]
    pub strict: bool,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Correlator cache file (overrides the environment variable).
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Report file (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Include per-case wall times (makes the report non-deterministic).
    #[arg(long)]
    pub timings: bool,
}

#[derive(Args, Debug)]
pub struct CacheArgs {
    #[command(subcommand)]
    pub action: CacheAction,
    /// Cache file (overrides the environment variable).
    #[arg(long, global = true)]
    pub cache: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum CacheAction {
    /// Print the number of entries per genus.
    Stats,
    /// Write the sorted entries to a file or standard output.
    Export {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge another cache file into this one, aborting on conflicts.
    Merge { other: PathBuf },
}

/// A parsed parameter range (sorted, without repetitions).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamRange(pub Vec<u32>);

fn parse_param_range(s: &str) -> std::result::Result<ParamRange, String> {
    parse_range(s).map(ParamRange)
}

/// Parses `a..b` (inclusive), `a,b,c` or `a`.
pub fn parse_range(s: &str) -> std::result::Result<Vec<u32>, String> {
    let bad = |_| format!("invalid range '{s}'");
    let mut out: Vec<u32> = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u32, u32) = (a.trim().parse().map_err(bad)?, b.trim().parse().map_err(bad)?);
        if a > b {
            return Err(format!("empty range '{s}'"));
        }
        (a..=b).collect()
    } else {
        s.split(',').map(|x| x.trim().parse().map_err(bad)).collect::<std::result::Result<_, _>>()?
    };
    out.sort_unstable();
    out.dedup();
    if out.is_empty() {
        return Err(format!("empty range '{s}'"));
    }
    Ok(out)
}

/// Resolved sweep parameters.
#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub check: Check,
    pub g: Vec<u32>,
    pub n: Vec<u32>,
    pub m: Vec<u32>,
    pub cap: Option<u32>,
    pub reduced: bool,
}

impl SweepConfig {
    pub fn new(check: Check, g: Vec<u32>, n: Vec<u32>, m: Vec<u32>, cap: Option<u32>, reduced: bool) -> Result<Self> {
        if g.is_empty() || n.is_empty() || m.is_empty() {
            return Err(Error::InvalidSpec("empty parameter range".into()));
        }
        if cap == Some(0) && check != Check::Lp && check != Check::Oracle {
            return Err(Error::InvalidSpec("the sum-d cap must be positive".into()));
        }
        if n.contains(&0) {
            return Err(Error::InvalidSpec("n must be at least 1".into()));
        }
        let vanishing = matches!(check, Check::C1 | Check::Reduction | Check::Degreebound);
        if vanishing && m.iter().any(|&x| x < 2) {
            return Err(Error::InvalidSpec("the vanishing checks need m >= 2".into()));
        }
        Ok(SweepConfig { check, g, n, m, cap, reduced })
    }
}

/// Whether a record's statement is proven (or an internal identity) or open.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Theorem,
    Conjecture,
    Oracle,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    /// The class lives in degree above the ambient dimension: nothing to test.
    Vacuous,
    /// The computation itself failed (e.g. a non-exact division).
    Error,
}

/// Parameters of one case.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CaseSpec {
    pub g: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u32>,
    pub m: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<u8>,
}

/// One report line.
#[derive(Clone, Debug, Serialize)]
pub struct Record {
    pub check: Check,
    pub spec: CaseSpec,
    pub kind: Kind,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flag: Option<&'static str>,
    pub witnesses: Vec<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<u64>,
}

impl Record {
    fn new(check: Check, spec: CaseSpec, kind: Kind, status: Status, witnesses: Vec<Value>) -> Self {
        let flag = match (status, kind) {
            (Status::Fail, Kind::Conjecture) => Some(CONJECTURE_FLAG),
            (Status::Fail, _) | (Status::Error, _) => Some(BUG_FLAG),
            _ => None,
        };
        Record { check, spec, kind, status, flag, witnesses, wall_ms: None }
    }

    pub fn is_bug(&self) -> bool {
        self.flag == Some(BUG_FLAG)
    }

    pub fn is_conjecture_fail(&self) -> bool {
        self.flag == Some(CONJECTURE_FLAG)
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("records serialise")
    }
}

/// Counts of the statuses in a report.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Summary {
    pub pass: usize,
    pub fail: usize,
    pub vacuous: usize,
    pub error: usize,
    pub conjecture_fail: usize,
    pub bugs: usize,
}

impl Summary {
    pub fn of(records: &[Record]) -> Self {
        let mut s = Summary::default();
        for r in records {
            match r.status {
                Status::Pass => s.pass += 1,
                Status::Fail => s.fail += 1,
                Status::Vacuous => s.vacuous += 1,
                Status::Error => s.error += 1,
            }
            s.conjecture_fail += r.is_conjecture_fail() as usize;
            s.bugs += r.is_bug() as usize;
        }
        s
    }

    pub fn exit_code(&self, strict: bool) -> i32 {
        if self.bugs > 0 {
            EXIT_BUG
        } else if strict && self.conjecture_fail > 0 {
            EXIT_CONJECTURE_FAIL
        } else {
            EXIT_OK
        }
    }
}

/// One unit of work of a sweep.
#[derive(Clone, Debug)]
enum Case {
    Vanishing { spec: BSpec, tilde: bool },
    DrGenus0 { frozen: u32, d: Vec<u32> },
    Oracle(BSpec),
    Lp { variant: u8, g: u32, r: u32, m: u32 },
    Reduction { g: u32, n: u32, m: u32, cap: Option<u32> },
}

fn dim(g: u32, legs: u32) -> i64 {
    3 * g as i64 - 3 + legs as i64
}

fn stable(g: u32, legs: u32) -> bool {
    2 * g as i64 - 2 + legs as i64 > 0
}

/// Weakly decreasing exponent vectors of length `n` and sum `total` (the
/// classes are symmetric under relabelling the regular legs, so one
/// representative per orbit suffices), optionally with every entry positive.
pub fn exponent_vectors(total: u32, n: u32, positive: bool) -> Vec<Vec<u32>> {
    compositions(total, n as usize)
        .into_iter()
        .filter(|d| d.windows(2).all(|w| w[0] >= w[1]) && (!positive || d.iter().all(|&x| x >= 1)))
        .collect()
}

/// The exponent vectors of the vanishing sweeps on one `(g, n, m)` cell:
/// `2g+m-1 <= sum d <= cap` (cap defaulting to the ambient dimension), or
/// only `sum d = 2g+m-1` with positive entries when `reduced`.
pub fn vanishing_grid(g: u32, n: u32, m: u32, cap: Option<u32>, reduced: bool) -> Vec<Vec<u32>> {
    let lo = (2 * g + m).saturating_sub(1);
    let hi = if reduced { lo as i64 } else { cap.map(|c| c as i64).unwrap_or_else(|| dim(g, n + m)) };
    let mut out = Vec::new();
    for total in lo as i64..=hi {
        out.extend(exponent_vectors(total as u32, n, reduced));
    }
    out
}

fn vanishing_kind(g: u32, n: u32) -> Kind {
    if n == 1 || g == 0 {
        Kind::Theorem
    } else {
        Kind::Conjecture
    }
}

fn cases(cfg: &SweepConfig) -> Vec<Case> {
    let mut out = Vec::new();
    match cfg.check {
        Check::C1 | Check::Degreebound => {
            for &g in &cfg.g {
                for &n in &cfg.n {
                    for &m in &cfg.m {
                        if !stable(g, n + m) {
                            continue;
                        }
                        for d in vanishing_grid(g, n, m, cfg.cap, cfg.reduced) {
                            let spec = BSpec { g, n, m, d };
                            out.push(Case::Vanishing { spec, tilde: cfg.check == Check::Degreebound });
                        }
                    }
                }
            }
        }
        Check::C2g0 | Check::C3g0 => {
            let frozen = if cfg.check == Check::C2g0 { 1 } else { 0 };
            let min_n = if frozen == 1 { 2 } else { 3 };
            for &n in cfg.n.iter().filter(|&&n| n >= min_n) {
                for total in 0..=cfg.cap.unwrap_or(4) {
                    for d in exponent_vectors(total, n, false) {
                        out.push(Case::DrGenus0 { frozen, d });
                    }
                }
            }
        }
        Check::Oracle => {
            for &g in &cfg.g {
                for &n in &cfg.n {
                    for &m in &cfg.m {
                        if !stable(g, n + m) {
                            continue;
                        }
                        for total in 0..=cfg.cap.unwrap_or(3) {
                            for d in compositions(total, n as usize) {
                                out.push(Case::Oracle(BSpec { g, n, m, d }));
                            }
                        }
                    }
                }
            }
        }
        Check::Lp => {
            for &g in &cfg.g {
                for r in 0..=cfg.cap.unwrap_or(2) {
                    if g >= 1 {
                        out.push(Case::Lp { variant: 1, g, r, m: 1 });
                    }
                    for &m in cfg.m.iter().filter(|&&m| m >= 2) {
                        if stable(g, m + 1) {
                            out.push(Case::Lp { variant: 2, g, r, m });
                        }
                    }
                }
            }
        }
        Check::Reduction => {
            for &g in &cfg.g {
                for &n in &cfg.n {
                    for &m in &cfg.m {
                        if stable(g, n + m) {
                            out.push(Case::Reduction { g, n, m, cap: cfg.cap });
                        }
                    }
                }
            }
        }
    }
    out
}

fn pairing_witnesses(nonzero: &[(Vec<u32>, crate::Rational)]) -> Vec<Value> {
    nonzero.iter().map(|(a, v)| json!({"monomial": a, "value": fmt_rational(v)})).collect()
}

fn spec_of(s: &BSpec) -> CaseSpec {
    CaseSpec { g: s.g, n: Some(s.n), m: s.m, d: Some(s.d.clone()), r: None, variant: None }
}

/// Runs the vanishing sweep of one class; `None` when the class is vacuous.
fn vanishing_status(ix: &Intersector, spec: &BSpec, tilde: bool) -> (Status, Vec<Value>) {
    if spec.sum_d() as i64 > spec.ambient_dim() {
        return (Status::Vacuous, Vec::new());
    }
    let class = if tilde { tilde_b_class(spec) } else { b_class_fast(spec) };
    let nonzero = ix.vanishing_sweep(&class);
    if nonzero.is_empty() {
        (Status::Pass, Vec::new())
    } else {
        (Status::Fail, pairing_witnesses(&nonzero))
    }
}

fn mismatch(what: &str, a: &TautClass, b: &TautClass) -> Option<Value> {
    if a == b {
        None
    } else {
        let diff = class_sub(a, b);
        Some(json!({"mismatch": what, "differing_terms": diff.len()}))
    }
}

fn run_case(ix: &Intersector, check: Check, case: &Case) -> Record {
    match case {
        Case::Vanishing { spec, tilde } => {
            let (status, w) = vanishing_status(ix, spec, *tilde);
            Record::new(check, spec_of(spec), vanishing_kind(spec.g, spec.n), status, w)
        }
        Case::DrGenus0 { frozen, d } => {
            let n = d.len() as u32;
            let spec = CaseSpec { g: 0, n: Some(n), m: *frozen, d: Some(d.clone()), r: None, variant: None };
            let b = BSpec::new(0, n, *frozen, d.clone()).map(|s| b_class_fast(&s));
            let a = if *frozen == 1 { a1_class_genus0(d) } else { a0_class_genus0(d) };
            match (b, a) {
                (Ok(b), Ok(a)) => {
                    let nonzero = ix.vanishing_sweep(&class_sub(&b, &a));
                    let status = if nonzero.is_empty() { Status::Pass } else { Status::Fail };
                    Record::new(check, spec, Kind::Theorem, status, pairing_witnesses(&nonzero))
                }
                (Err(e), _) | (_, Err(e)) => {
                    Record::new(check, spec, Kind::Theorem, Status::Error, vec![json!({"error": e.to_string()})])
                }
            }
        }
        Case::Oracle(spec) => {
            let mut w = Vec::new();
            w.extend(mismatch("definition vs fast formula", &b_class_definition(spec), &b_class_fast(spec)));
            w.extend(mismatch("tilde vs push-forward", &tilde_b_class(spec), &tilde_b_class_pushforward(spec)));
            // The pullback identity for B~ needs at least two frozen legs.
            if spec.m >= 2 {
                let mut d0 = spec.d.clone();
                d0.push(0);
                let bigger = BSpec { g: spec.g, n: spec.n + 1, m: spec.m, d: d0 };
                w.extend(mismatch("string pullback", &tilde_b_class(&bigger), &tilde_b_pullback(spec)));
            }
            let status = if w.is_empty() { Status::Pass } else { Status::Fail };
            Record::new(check, spec_of(spec), Kind::Oracle, status, w)
        }
        Case::Lp { variant, g, r, m } => {
            let spec = CaseSpec { g: *g, n: None, m: *m, d: None, r: Some(*r), variant: Some(*variant) };
            match lp_relation_class(*variant, *g, *r, *m) {
                Ok(c) => {
                    let nonzero = ix.vanishing_sweep(&c);
                    let status = if nonzero.is_empty() { Status::Pass } else { Status::Fail };
                    Record::new(check, spec, Kind::Theorem, status, pairing_witnesses(&nonzero))
                }
                Err(e) => Record::new(check, spec, Kind::Theorem, Status::Error, vec![json!({"error": e.to_string()})]),
            }
        }
        Case::Reduction { g, n, m, cap } => reduction_record(ix, *g, *n, *m, *cap),
    }
}

/// Runs the reduced and the full vanishing sweep on one cell.  The reduced
/// statement implies the full one, so "reduced passes, full fails" is an
/// implementation bug; a reduced failure is a conjecture failure on the
/// cells not covered by a theorem.
fn reduction_record(ix: &Intersector, g: u32, n: u32, m: u32, cap: Option<u32>) -> Record {
    let spec = CaseSpec { g, n: Some(n), m, d: None, r: None, variant: None };
    let run = |reduced: bool| -> (usize, usize, Vec<Vec<u32>>) {
        let grid = vanishing_grid(g, n, m, cap, reduced);
        let mut vacuous = 0;
        let mut failing = Vec::new();
        for d in &grid {
            let s = BSpec { g, n, m, d: d.clone() };
            match vanishing_status(ix, &s, false).0 {
                Status::Vacuous => vacuous += 1,
                Status::Fail => failing.push(d.clone()),
                _ => {}
            }
        }
        (grid.len(), vacuous, failing)
    };
    let (nr, vr, fr) = run(true);
    let (nf, vf, ff) = run(false);
    let witnesses = vec![
        json!({"sweep": "reduced", "cases": nr, "vacuous": vr, "failing": fr}),
        json!({"sweep": "full", "cases": nf, "vacuous": vf, "failing": ff}),
    ];
    let (status, kind) = match (fr.is_empty(), ff.is_empty()) {
        (true, true) => (Status::Pass, vanishing_kind(g, n)),
        (true, false) => (Status::Fail, Kind::Theorem),
        (false, _) => (Status::Fail, vanishing_kind(g, n)),
    };
    Record::new(Check::Reduction, spec, kind, status, witnesses)
}

/// Runs a sweep; records come back in grid order.
pub fn run_sweep(cfg: &SweepConfig, ix: &Intersector, timings: bool) -> Vec<Record> {
    cases(cfg)
        .par_iter()
        .map(|c| {
            let start = Instant::now();
            let mut rec = run_case(ix, cfg.check, c);
            if timings {
                rec.wall_ms = Some(start.elapsed().as_millis() as u64);
            }
            rec
        })
        .collect()
}

/// Computes `B^m_{g,d}` by the chosen method.
pub fn compute_bclass(spec: &BSpec, method: Method) -> TautClass {
    match method {
        Method::Def => b_class_definition(spec),
        Method::Fast => b_class_fast(spec),
        Method::Tilde => tilde_b_class(spec),
    }
}

fn cmd_bclass(a: &BclassArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let spec = match BSpec::new(a.g, a.n, a.m, a.d.clone()) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_INVALID;
        }
    };
    let class = compute_bclass(&spec, a.method);
    let _ = writeln!(out, "{}", class.to_json());
    EXIT_OK
}

fn open_cache(path: Option<&Path>, err: &mut dyn Write) -> std::result::Result<Intersector, i32> {
    Intersector::from_path_or_env(path).map_err(|e| {
        let _ = writeln!(err, "error: cannot load cache: {e}");
        exit_for(&e)
    })
}

fn exit_for(e: &Error) -> i32 {
    match e {
        Error::CacheConflict(_) | Error::NotDivisible(_) | Error::InvalidTree(_) | Error::PsiPresent(_) => EXIT_BUG,
        _ => EXIT_INVALID,
    }
}

fn cmd_verify(a: &VerifyArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cfg = match SweepConfig::new(a.check, a.g.0.clone(), a.n.0.clone(), a.m.0.clone(), a.d, a.reduced) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_INVALID;
        }
    };
    let ix = match open_cache(a.cache.as_deref(), err) {
        Ok(ix) => ix,
        Err(code) => return code,
    };
    let records = match a.jobs {
        Some(j) => match rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build() {
            Ok(pool) => pool.install(|| run_sweep(&cfg, &ix, a.timings)),
            Err(e) => {
                let _ = writeln!(err, "error: cannot start worker pool: {e}");
                return EXIT_INVALID;
            }
        },
        None => run_sweep(&cfg, &ix, a.timings),
    };
    let mut text = String::new();
    for r in &records {
        text.push_str(&r.to_line());
        text.push('\n');
    }
    let written = match &a.out {
        Some(p) => std::fs::write(p, text.as_bytes()),
        None => out.write_all(text.as_bytes()),
    };
    if let Err(e) = written {
        let _ = writeln!(err, "error: cannot write report: {e}");
        return EXIT_INVALID;
    }
    if let Err(e) = ix.flush() {
        let _ = writeln!(err, "error: cannot write cache: {e}");
        return exit_for(&e);
    }
    let s = Summary::of(&records);
    let _ = writeln!(
        err,
        "{} cases: {} pass, {} fail, {} vacuous, {} error",
        records.len(),
        s.pass,
        s.fail,
        s.vacuous,
        s.error
    );
    if s.conjecture_fail > 0 {
        let _ = writeln!(err, "warning: {} {} record(s)", s.conjecture_fail, CONJECTURE_FLAG);
    }
    if s.bugs > 0 {
        let _ = writeln!(err, "error: {} {} record(s)", s.bugs, BUG_FLAG);
    }
    s.exit_code(a.strict)
}

fn cmd_cache(a: &CacheArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let ix = match open_cache(a.cache.as_deref(), err) {
        Ok(ix) => ix,
        Err(code) => return code,
    };
    match &a.action {
        CacheAction::Stats => {
            let entries = ix.entries();
            let _ = writeln!(out, "entries: {}", entries.len());
            let mut per_genus = std::collections::BTreeMap::new();
            for (g, _) in entries.keys() {
                *per_genus.entry(*g).or_insert(0usize) += 1;
            }
            for (g, c) in per_genus {
                let _ = writeln!(out, "genus {g}: {c}");
            }
            EXIT_OK
        }
        CacheAction::Export { out: path } => {
            let entries = ix.entries();
            let res = match path {
                Some(p) => write_cache_file(p, &entries),
                None => out.write_all(render_cache(&entries).as_bytes()).map_err(Error::from),
            };
            match res {
                Ok(()) => EXIT_OK,
                Err(e) => {
                    let _ = writeln!(err, "error: {e}");
                    exit_for(&e)
                }
            }
        }
        CacheAction::Merge { other } => {
            if ix.cache_path().is_none() {
                let _ = writeln!(err, "error: merge needs a cache file (--cache or the environment variable)");
                return EXIT_INVALID;
            }
            let res = read_cache_file(other)
                .and_then(|o| ix.merge_entries(&o.into_iter().collect()))
                .and_then(|added| ix.flush().map(|_| added));
            match res {
                Ok(added) => {
                    let _ = writeln!(out, "merged: {added} new entries, {} total", ix.len());
                    EXIT_OK
                }
                Err(e) => {
                    let _ = writeln!(err, "error: {e}");
                    exit_for(&e)
                }
            }
        }
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(rendered.as_bytes()) } else { out.write_all(rendered.as_bytes()) };
            return code;
        }
    };
    match &cli.command {
        Command::Bclass(a) => cmd_bclass(a, out, err),
        Command::Verify(a) => cmd_verify(a, out, err),
        Command::Cache(a) => cmd_cache(a, out, err),
    }
}
