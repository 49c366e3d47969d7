//! The `rsmp` command-line tool.
//!
//! Every command is a function of its flags, input files and seed; output
//! bytes do not depend on `--jobs`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::analytic::analytic_outcome_table;
use crate::error::{Error, Result};
use crate::game::{estimate_win_rate, make_game, CommRule, LocalRule, Strategy};
use crate::instances::{check_promises_indexed, sample_product, sample_promised_counted, Instance};
use crate::protocol::{run_trial, Backend, Repetitions, TrialRecord};
use crate::qsim::{outcome_distribution_exact, Enumeration};
use crate::relations::{check_p11, check_pnn_indexed, P11Answer, PnnAnswer};
use crate::rng::{derive_seed, role, stream};
use crate::stats::wilson_interval;

#[derive(Parser, Debug)]
#[command(name = "rsmp", version, about = "Entanglement-assisted SMP protocol simulator")]
struct Cli {
    /// Master seed; all randomness derives from it.
    #[arg(long, global = true, env = "RSMP_SEED", default_value_t = 0)]
    seed: u64,
    /// Worker threads for independent trials.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Flat `key = value` file of defaults; explicit flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw instances and write them as JSON files.
    Sample(SampleArgs),
    /// Check an instance's promises, and optionally an answer.
    Check(CheckArgs),
    /// Run the protocol on one instance and log a JSONL record per trial.
    Run(RunArgs),
    /// Compare the closed-form sampler with exact enumeration.
    Xcheck(XcheckArgs),
    /// Estimate a strategy's win rate in the game.
    Game(GameArgs),
    /// Summarize a JSONL trial log.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    count: u64,
    /// Reject draws until all promises hold.
    #[arg(long)]
    promised: bool,
    #[arg(long, default_value_t = 10_000)]
    max_tries: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Answer file for the n×n relation.
    #[arg(long)]
    answer: Option<PathBuf>,
    /// Answer file for the single-cell relation on `x_row`, `y_col`.
    #[arg(long, requires_all = ["row", "col"])]
    p11: Option<PathBuf>,
    #[arg(long)]
    row: Option<usize>,
    #[arg(long)]
    col: Option<usize>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, default_value = "analytic")]
    backend: Backend,
    /// `auto`, `fixed`, or a repetition count.
    #[arg(long, default_value = "auto")]
    reps: Repetitions,
    #[arg(long, default_value_t = 1)]
    trials: u64,
    /// JSONL output path; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct XcheckArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    instances: u64,
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,
    #[arg(long, default_value_t = 10_000)]
    max_tries: usize,
    /// Move this much probability mass in the closed-form table before
    /// comparing. Negative control for the comparison itself.
    #[arg(long, hide = true)]
    perturb: Option<f64>,
}

#[derive(Args, Debug)]
struct GameArgs {
    #[arg(long)]
    n: usize,
    /// `entangled`, `random-guess`, or `oneway-prefix`.
    #[arg(long)]
    strategy: String,
    /// Bit budget for communicating strategies; defaults to `ceil(n^(1/4))`.
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long, default_value = "analytic")]
    backend: Backend,
    #[arg(long, default_value = "auto")]
    reps: Repetitions,
    #[arg(long, default_value_t = 1000)]
    trials: u64,
    /// Omit the CSV header line.
    #[arg(long)]
    no_header: bool,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// JSONL trial log written by `run`.
    #[arg(long)]
    input: PathBuf,
}

/// Parse a flat `key = value` file. Blank lines and `#` comments are skipped.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let at = format!("line {}", no + 1);
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(&at, "expected key = value"))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(Error::parse(&at, format!("invalid key {key:?}")));
        }
        let key = key.replace('_', "-");
        if out.iter().any(|(k, _)| *k == key) {
            return Err(Error::parse(&at, format!("duplicate key {key:?}")));
        }
        out.push((key, value.to_string()));
    }
    Ok(out)
}

/// Splice config entries into `argv` as flags unless already given.
fn merge_config(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let strs: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let path = strs.iter().enumerate().find_map(|(k, a)| {
        a.strip_prefix("--config=")
            .map(str::to_string)
            .or_else(|| (a == "--config").then(|| strs.get(k + 1).cloned()).flatten())
    });
    let Some(path) = path else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).map_err(|source| Error::Io { path: path.clone(), source })?;
    let entries = parse_config(&text)?;
    let cmd = Cli::command();
    let sub = strs
        .iter()
        .skip(1)
        .find_map(|a| cmd.find_subcommand(a))
        .ok_or_else(|| Error::usage("a subcommand is required"))?;
    let mut out = argv;
    for (key, value) in entries {
        let given = strs.iter().any(|a| *a == format!("--{key}") || a.starts_with(&format!("--{key}=")));
        if given || key == "config" {
            continue;
        }
        let arg = sub
            .get_arguments()
            .chain(cmd.get_arguments())
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| Error::usage(format!("config key {key:?} is not a flag of this command")))?;
        if arg.get_action().takes_values() {
            out.push(format!("--{key}").into());
            out.push(value.into());
        } else {
            match value.as_str() {
                "true" => out.push(format!("--{key}").into()),
                "false" => {}
                _ => return Err(Error::usage(format!("config key {key:?} expects true or false"))),
            }
        }
    }
    Ok(out)
}

/// Entry point: parse `args`, run the command, return the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let argv = match merge_config(argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    match dispatch(&cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Sample(a) => cmd_sample(a, cli.seed, out),
        Command::Check(a) => cmd_check(a, out),
        Command::Run(a) => cmd_run(a, cli.seed, cli.jobs, out, err),
        Command::Xcheck(a) => cmd_xcheck(a, cli.seed, out),
        Command::Game(a) => cmd_game(a, cli.seed, cli.jobs, out, err),
        Command::Report(a) => cmd_report(a, out),
    }
}

/// Run `f` on a pool of `jobs` threads.
fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::internal(format!("thread pool: {e}")))?
        .install(f)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.display().to_string(), source }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(io_err(Path::new("<stdout>")))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(io_err(path))
}

fn load_instance(path: &Path) -> Result<Instance> {
    Instance::from_json(&read_file(path)?)
}

fn cmd_sample(a: &SampleArgs, seed: u64, out: &mut dyn Write) -> Result<()> {
    crate::relations::t_n(a.n)?;
    std::fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    for k in 0..a.count {
        let mut rng = stream(seed, &[role::INSTANCE, k]);
        let (inst, tries) = if a.promised {
            let s = sample_promised_counted(a.n, &mut rng, a.max_tries)?;
            (s.instance, s.tries)
        } else {
            (sample_product(a.n, &mut rng)?, 1)
        };
        let path = a.out.join(format!("instance_{k:04}.json"));
        std::fs::write(&path, inst.to_json()).map_err(io_err(&path))?;
        emit(out, &format!("{}\t{tries}\n", path.display()))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct CheckReport {
    promises: crate::instances::PromiseReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    answer_ok: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    p11_ok: Option<bool>,
}

fn cmd_check(a: &CheckArgs, out: &mut dyn Write) -> Result<()> {
    let inst = load_instance(&a.instance)?;
    let idx = inst.index();
    let answer_ok = match &a.answer {
        Some(p) => Some(check_pnn_indexed(inst.n(), &idx, &PnnAnswer::from_json(&read_file(p)?)?)?),
        None => None,
    };
    let p11_ok = match (&a.p11, a.row, a.col) {
        (Some(p), Some(i), Some(j)) => {
            if i == 0 || i > inst.n() || j == 0 || j > inst.n() {
                return Err(Error::usage(format!("row/col must lie in 1..={}", inst.n())));
            }
            let ans = P11Answer::from_json(&read_file(p)?)?;
            Some(check_p11(&inst.rows()[i - 1], &inst.cols()[j - 1], &ans)?)
        }
        _ => None,
    };
    let report = CheckReport { promises: check_promises_indexed(&inst, &idx), answer_ok, p11_ok };
    emit(out, &(serde_json::to_string(&report).expect("serializable") + "\n"))
}

/// Aggregate over trial records.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub trials: u64,
    pub successes: u64,
    pub rate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub mean_r: f64,
    pub mean_bits: f64,
    pub mean_epr: f64,
}

impl RunSummary {
    pub fn from_records(records: impl IntoIterator<Item = (bool, u64, u64, u64)>) -> Self {
        let (mut trials, mut ok, mut r, mut bits, mut epr) = (0u64, 0u64, 0u128, 0u128, 0u128);
        for (success, reps, b, e) in records {
            trials += 1;
            ok += success as u64;
            r += reps as u128;
            bits += b as u128;
            epr += e as u128;
        }
        let (ci_lo, ci_hi) = wilson_interval(ok, trials);
        let mean = |x: u128| if trials == 0 { 0.0 } else { x as f64 / trials as f64 };
        RunSummary {
            trials,
            successes: ok,
            rate: mean(ok as u128),
            ci_lo,
            ci_hi,
            mean_r: mean(r),
            mean_bits: mean(bits),
            mean_epr: mean(epr),
        }
    }
}

fn cmd_run(a: &RunArgs, seed: u64, jobs: usize, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let inst = load_instance(&a.instance)?;
    let idx = inst.index();
    let records: Vec<TrialRecord> = with_jobs(jobs, || {
        (0..a.trials)
            .into_par_iter()
            .map(|k| run_trial(&inst, &idx, a.reps, a.backend, derive_seed(seed, &[k])))
            .collect()
    })?;
    let mut text = String::new();
    for r in &records {
        text.push_str(&serde_json::to_string(r).expect("serializable"));
        text.push('\n');
    }
    match &a.out {
        Some(p) => std::fs::write(p, &text).map_err(io_err(p))?,
        None => emit(out, &text)?,
    }
    let summary = RunSummary::from_records(records.iter().map(|r| (r.ok, r.reps, r.bits, r.epr)));
    let line = serde_json::to_string(&summary).expect("serializable") + "\n";
    match &a.out {
        Some(_) => emit(out, &line),
        None => err.write_all(line.as_bytes()).map_err(io_err(Path::new("<stderr>"))),
    }
}

fn cmd_xcheck(a: &XcheckArgs, seed: u64, out: &mut dyn Write) -> Result<()> {
    if a.n > crate::qsim::MAX_EXACT_N {
        return Err(Error::usage(format!(
            "exact enumeration supports n <= {}, got n={}",
            crate::qsim::MAX_EXACT_N,
            a.n
        )));
    }
    let mut worst = 0.0f64;
    for k in 0..a.instances {
        let inst = sample_promised_counted(a.n, &mut stream(seed, &[role::INSTANCE, k]), a.max_tries)?.instance;
        let exact = outcome_distribution_exact(&inst, Enumeration::Structured)?;
        let mut closed = analytic_outcome_table(&inst)?;
        if let Some(eps) = a.perturb {
            perturb_table(&mut closed, eps);
        }
        let tv = closed.tv_distance(&exact);
        worst = worst.max(tv);
        let verdict = if tv <= a.tolerance { "pass" } else { "fail" };
        emit(out, &format!("instance {k}: tv={tv:.3e} {verdict}\n"))?;
    }
    let ok = worst <= a.tolerance;
    emit(out, &format!("max_tv={worst:.3e} tolerance={:.1e} {}\n", a.tolerance, if ok { "PASS" } else { "FAIL" }))?;
    if ok {
        Ok(())
    } else {
        Err(Error::internal(format!("closed form disagrees with exact enumeration: max TV {worst:.3e}")))
    }
}

/// Shift `eps` of probability from the heaviest entry to the lightest.
fn perturb_table(table: &mut crate::qsim::OutcomeTable, eps: f64) {
    let mut cells: Vec<(&(u32, u32), usize, f64)> = table
        .branches
        .iter()
        .flat_map(|(key, v)| v.iter().enumerate().map(move |(u, &p)| (key, u, p)))
        .collect();
    cells.sort_by(|x, y| x.2.total_cmp(&y.2));
    let (lo, hi) = match (cells.first(), cells.last()) {
        (Some(l), Some(h)) => ((*l.0, l.1), (*h.0, h.1)),
        _ => return,
    };
    let eps = eps.min(table.branches[&hi.0][hi.1]);
    table.branches.get_mut(&hi.0).expect("present")[hi.1] -= eps;
    table.branches.get_mut(&lo.0).expect("present")[lo.1] += eps;
}

fn parse_strategy(a: &GameArgs) -> Result<Strategy> {
    Ok(match a.strategy.as_str() {
        "entangled" => Strategy::Entangled { backend: a.backend },
        "random-guess" | "random_guess" => Strategy::Local(LocalRule::RandomGuess),
        "oneway-prefix" | "oneway_prefix" => Strategy::Communicating {
            rule: CommRule::OnewayPrefix,
            budget_bits: a.budget.unwrap_or_else(|| quarter_root_ceil(a.n)),
        },
        s => return Err(Error::usage(format!("unknown strategy {s:?} (entangled|random-guess|oneway-prefix)"))),
    })
}

/// `ceil(n^(1/4))`.
pub fn quarter_root_ceil(n: usize) -> u64 {
    let mut r = 0u64;
    while (r as u128).pow(4) < n as u128 {
        r += 1;
    }
    r
}

fn cmd_game(a: &GameArgs, seed: u64, jobs: usize, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let strategy = parse_strategy(a)?;
    let game = make_game(a.n, a.reps)?;
    let result = with_jobs(jobs, || estimate_win_rate(&game, strategy, a.trials, seed))?;
    if result.forfeits > 0 {
        writeln!(err, "forfeits: {} of {} plays exceeded the bit budget", result.forfeits, result.trials)
            .map_err(io_err(Path::new("<stderr>")))?;
    }
    let mut text = String::new();
    if !a.no_header {
        text.push_str(crate::game::WinRate::CSV_HEADER);
        text.push('\n');
    }
    text.push_str(&result.csv_row());
    text.push('\n');
    emit(out, &text)
}

fn cmd_report(a: &ReportArgs, out: &mut dyn Write) -> Result<()> {
    let text = String::from_utf8(read_file(&a.input)?)
        .map_err(|_| Error::parse(a.input.display().to_string(), "not UTF-8"))?;
    let rows = parse_trial_log(&text)?;
    if rows.is_empty() {
        return Err(Error::data("no trial records"));
    }
    let summary = RunSummary::from_records(rows);
    emit(out, &(serde_json::to_string(&summary).expect("serializable") + "\n"))
}

/// Pull `(ok, R, bits, epr)` out of each non-blank JSONL trial record.
pub fn parse_trial_log(text: &str) -> Result<Vec<(bool, u64, u64, u64)>> {
    let mut rows = Vec::new();
    for (no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let at = || format!("line {}", no + 1);
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::parse(at(), e.to_string()))?;
        let field = |k: &str| v.get(k).ok_or_else(|| Error::parse(at(), format!("missing field {k:?}")));
        let num = |k: &str| -> Result<u64> {
            field(k)?
                .as_u64()
                .ok_or_else(|| Error::parse(at(), format!("field {k:?} is not an unsigned integer")))
        };
        let ok = field("ok")?
            .as_bool()
            .ok_or_else(|| Error::parse(at(), "field \"ok\" is not a boolean"))?;
        rows.push((ok, num("R")?, num("bits")?, num("epr")?));
    }
    Ok(rows)
}
