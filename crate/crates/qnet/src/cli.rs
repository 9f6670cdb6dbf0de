//! Command-line front end. Every command is deterministic given its flags.
//!
//! Exit codes: 0 success, 2 configuration error, 3 analytic value outside a
//! Monte-Carlo band, 4 infeasible optimisation.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::intercity_analytic::{self as ia, IntercityScenario};
use crate::mc_sim::{self, Band, McConfig, McScenario};
use crate::metro::{self, MetroScenario};
use crate::params::{derive_timing, load_preset, Geometry, HardwareParams, Mode, ParamConfig};
use crate::requirements::{self as rq, OptimProblem, Question, ScenarioKind, TcutSearch};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BAND: i32 = 3;
pub const EXIT_INFEASIBLE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "qnet", about = "Teleportation rate and fidelity across metro and backbone links")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetName {
    Baseline,
    Optimistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Er,
    Qr,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Er => Mode::ER,
            ModeArg::Qr => Mode::QR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Network {
    Metro,
    Intercity,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Parameter preset used when no config file is given.
    #[arg(long, global = true, value_enum, default_value = "baseline")]
    pub preset: PresetName,
    /// JSON parameter file, as written by --dump-config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "er")]
    pub mode: ModeArg,
    /// Single cut-off time in microseconds.
    #[arg(long, global = true)]
    pub tcut_us: Option<i64>,
    /// Log-spaced cut-off grid `lo:hi:n` in microseconds.
    #[arg(long, global = true)]
    pub tcut_grid: Option<String>,
    #[arg(long, global = true, default_value_t = 100)]
    pub batches: usize,
    #[arg(long, global = true, default_value_t = 100)]
    pub runs: usize,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub question: Option<String>,
    /// Exit 0 even when the optimiser finds no feasible point.
    #[arg(long, global = true)]
    pub allow_infeasible: bool,
    /// Print the effective parameter configuration as JSON and exit.
    #[arg(long, global = true)]
    pub dump_config: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compare analytic values with Monte-Carlo percentile bands.
    Validate {
        #[arg(long, value_enum, default_value = "intercity")]
        network: Network,
        /// Log-spaced base-efficiency grid `lo:hi:n` for the metro network.
        #[arg(long)]
        pm0_grid: Option<String>,
        /// Scales the coherence time seen by the simulation only.
        #[arg(long, default_value_t = 1.0, hide = true)]
        mc_tcoh_scale: f64,
        /// Also write per-batch records to this CSV file.
        #[arg(long)]
        batches_out: Option<PathBuf>,
    },
    /// Metro rate and fidelity.
    Metro,
    /// Intercity performance over cut-off times.
    Intercity,
    /// Minimal hardware requirements for one question.
    Optimize {
        #[arg(long, default_value_t = 50)]
        restarts: usize,
    },
    /// Requirement surface (q1, q2) or backbone feasibility region (q3).
    Sweep {
        /// Grid of the first axis, `lo:hi:n[:log|:lin]`.
        #[arg(long)]
        x_grid: Option<String>,
        /// Grid of the second axis, `lo:hi:n[:log|:lin]`.
        #[arg(long)]
        y_grid: Option<String>,
    },
}

fn config_err(field: &str, msg: impl Into<String>) -> Error {
    Error::Config { field: field.into(), msg: msg.into() }
}

/// Parses `lo:hi:n` with an optional `:log` or `:lin` suffix.
pub fn parse_grid(field: &str, text: &str, default_log: bool) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    if !(3..=4).contains(&parts.len()) {
        return Err(config_err(field, format!("expected lo:hi:n[:log|:lin], got '{text}'")));
    }
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| config_err(field, format!("'{s}' is not a number")));
    let (lo, hi) = (num(parts[0])?, num(parts[1])?);
    let n: usize = parts[2].trim().parse().map_err(|_| config_err(field, format!("'{}' is not a count", parts[2])))?;
    let log = match parts.get(3).map(|s| s.trim()) {
        None => default_log,
        Some("log") => true,
        Some("lin") => false,
        Some(other) => return Err(config_err(field, format!("unknown spacing '{other}'"))),
    };
    if !(lo.is_finite() && hi.is_finite()) || lo > hi || (log && lo <= 0.0) {
        return Err(config_err(field, format!("invalid range {lo}..{hi}")));
    }
    Ok(match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| {
                let x = i as f64 / (n - 1) as f64;
                if log {
                    lo * (hi / lo).powf(x)
                } else {
                    lo + (hi - lo) * x
                }
            })
            .collect(),
    })
}

fn parse_tcut_grid(text: &str) -> Result<Vec<i64>> {
    let mut v: Vec<i64> = parse_grid("tcut-grid", text, true)?.into_iter().map(|x| x.round() as i64).collect();
    v.dedup();
    Ok(v)
}

/// Formats a number with 17 significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

fn load_params(common: &Common) -> Result<(HardwareParams, Geometry)> {
    match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| config_err("config", format!("{}: {e}", path.display())))?;
            let cfg: ParamConfig = serde_json::from_str(&text).map_err(|e| config_err("config", e.to_string()))?;
            let hw = cfg.hardware();
            hw.validate()?;
            Ok((hw, cfg.geometry()))
        }
        None => {
            let name = match common.preset {
                PresetName::Baseline => "baseline",
                PresetName::Optimistic => "optimistic",
            };
            let (hw, g, _) = load_preset(name)?;
            Ok((hw, g))
        }
    }
}

/// Where command output goes: a file when `--out` is given, otherwise the
/// caller's writer.
enum Sink<'a> {
    File(File),
    Writer(&'a mut dyn Write),
}

impl Write for Sink<'_> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        match self {
            Sink::File(f) => f.write(buf),
            Sink::Writer(w) => w.write(buf),
        }
    }

    fn flush(&mut self) -> io::Result<()> {
        match self {
            Sink::File(f) => f.flush(),
            Sink::Writer(w) => w.flush(),
        }
    }
}

fn sink<'a>(path: &Option<PathBuf>, stdout: &'a mut dyn Write) -> Result<Sink<'a>> {
    match path {
        Some(p) => Ok(Sink::File(File::create(p).map_err(|e| config_err("out", format!("{}: {e}", p.display())))?)),
        None => Ok(Sink::Writer(stdout)),
    }
}

fn io_err(e: impl std::fmt::Display) -> Error {
    config_err("out", e.to_string())
}

fn write_csv<W: Write>(w: W, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(header).map_err(io_err)?;
    for r in rows {
        wr.write_record(r).map_err(io_err)?;
    }
    wr.flush().map_err(io_err)?;
    Ok(())
}

fn write_json<W: Write, T: Serialize>(mut w: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, value).map_err(io_err)?;
    writeln!(w).map_err(io_err)?;
    Ok(())
}

/// Parses arguments and runs the command, writing results to `stdout`
/// unless `--out` is given. Returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(stdout, "{text}");
            } else {
                let _ = write!(stderr, "{text}");
            }
            return code;
        }
    };
    match execute(&cli, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_CONFIG
        }
    }
}

fn execute(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    let c = &cli.common;
    let (hw, geometry) = load_params(c)?;
    if c.dump_config {
        write_json(sink(&c.out, stdout)?, &ParamConfig::new(&hw, &geometry))?;
        return Ok(EXIT_OK);
    }
    let mode: Mode = c.mode.into();
    match &cli.command {
        Command::Metro => cmd_metro(c, &hw, &geometry, mode, stdout),
        Command::Intercity => cmd_intercity(c, &hw, &geometry, stdout),
        Command::Validate { network, pm0_grid, mc_tcoh_scale, batches_out } => {
            cmd_validate(c, &hw, &geometry, mode, *network, pm0_grid.as_deref(), *mc_tcoh_scale, batches_out, stdout, stderr)
        }
        Command::Optimize { restarts } => cmd_optimize(c, mode, *restarts, &geometry, stdout, stderr),
        Command::Sweep { x_grid, y_grid } => cmd_sweep(c, mode, &geometry, x_grid.as_deref(), y_grid.as_deref(), stdout),
    }
}

fn cmd_metro(c: &Common, hw: &HardwareParams, g: &Geometry, mode: Mode, stdout: &mut dyn Write) -> Result<i32> {
    let scn = MetroScenario::from_params(hw, g, mode)?;
    let header = ["mode", "p_m0", "t_coh_s", "f_m", "rate", "fidelity"];
    let row = vec![
        format!("{mode:?}"),
        fmt_num(hw.p_m0),
        fmt_num(hw.t_coh_s),
        fmt_num(hw.f_m),
        fmt_num(metro::metro_rate(&scn)),
        fmt_num(metro::metro_fidelity(&scn)),
    ];
    write_csv(sink(&c.out, stdout)?, &header, &[row])?;
    Ok(EXIT_OK)
}

fn tcut_list(c: &Common, hw: &HardwareParams, g: &Geometry) -> Result<Vec<i64>> {
    match (c.tcut_us, &c.tcut_grid) {
        (Some(_), Some(_)) => Err(config_err("tcut-us", "give either --tcut-us or --tcut-grid")),
        (Some(t), None) => Ok(vec![t]),
        (None, Some(text)) => parse_tcut_grid(text),
        (None, None) => {
            let d = rq::cut_off_domain(&derive_timing(g)?, hw.t_coh_us())?;
            Ok(rq::log_grid(&d, 16))
        }
    }
}

fn cmd_intercity(c: &Common, hw: &HardwareParams, g: &Geometry, stdout: &mut dyn Write) -> Result<i32> {
    let header = ["t_cut_us", "p", "e2e_time_us", "rate", "fidelity_er", "fidelity_qr"];
    let mut rows = vec![];
    for t in tcut_list(c, hw, g)? {
        let r = ia::evaluate(&IntercityScenario::from_params(hw, g, t)?)?;
        rows.push(vec![t.to_string(), fmt_num(r.p), fmt_num(r.e2e_time_us), fmt_num(r.rate), fmt_num(r.fidelity_er), fmt_num(r.fidelity_qr)]);
    }
    write_csv(sink(&c.out, stdout)?, &header, &rows)?;
    Ok(EXIT_OK)
}

#[allow(clippy::too_many_arguments)]
fn cmd_validate(
    c: &Common,
    hw: &HardwareParams,
    g: &Geometry,
    mode: Mode,
    network: Network,
    pm0_grid: Option<&str>,
    tcoh_scale: f64,
    batches_out: &Option<PathBuf>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<i32> {
    if !(tcoh_scale > 0.0 && tcoh_scale.is_finite()) {
        return Err(config_err("mc-tcoh-scale", "must be positive"));
    }
    // Each grid point yields (x, analytic fidelity, analytic rate, MC config).
    let points: Vec<(f64, f64, f64, McConfig)> = match network {
        Network::Intercity => tcut_list(c, hw, g)?
            .into_iter()
            .map(|t| {
                let scn = IntercityScenario::from_params(hw, g, t)?;
                let perf = ia::evaluate(&scn)?;
                let f = if mode == Mode::ER { perf.fidelity_er } else { perf.fidelity_qr };
                let mc_scn = IntercityScenario { t_coh_us: scn.t_coh_us * tcoh_scale, ..scn };
                Ok((t as f64, f, perf.rate, mc_config(c, McScenario::Intercity(mc_scn), mode)))
            })
            .collect::<Result<_>>()?,
        Network::Metro => {
            let grid = match pm0_grid {
                Some(s) => parse_grid("pm0-grid", s, true)?,
                None => parse_grid("pm0-grid", "5.95e-4:1.43e-2:8", true)?,
            };
            grid.into_iter()
                .map(|p_m0| {
                    let scn = MetroScenario::from_params(&HardwareParams { p_m0, ..*hw }, g, mode)?;
                    let mc_scn = MetroScenario { t_coh_us: scn.t_coh_us * tcoh_scale, ..scn };
                    Ok((p_m0, metro::metro_fidelity(&scn), metro::metro_rate(&scn), mc_config(c, McScenario::Metro(mc_scn), mode)))
                })
                .collect::<Result<_>>()?
        }
    };
    let x_name = if network == Network::Intercity { "t_cut_us" } else { "p_m0" };
    let header = [
        x_name,
        "analytic_fidelity",
        "analytic_rate",
        "mc_mean",
        "mc_p5",
        "mc_p95",
        "mc_rate_mean",
        "mc_rate_p5",
        "mc_rate_p95",
    ];
    let mut rows = vec![];
    let mut batch_rows = vec![];
    let mut misses = vec![];
    for (x, f, rate, cfg) in &points {
        let stats = mc_sim::run_batches(cfg)?;
        let fb: Band = stats.fidelity();
        let rb = stats.rate;
        let x_txt = if network == Network::Intercity { format!("{}", *x as i64) } else { fmt_num(*x) };
        if !fb.contains(*f) {
            misses.push(format!("{x_name}={x_txt}: fidelity {f} outside [{}, {}]", fb.p5, fb.p95));
        }
        if !rb.contains(*rate) {
            misses.push(format!("{x_name}={x_txt}: rate {rate} outside [{}, {}]", rb.p5, rb.p95));
        }
        rows.push(vec![
            x_txt.clone(),
            fmt_num(*f),
            fmt_num(*rate),
            fmt_num(fb.mean),
            fmt_num(fb.p5),
            fmt_num(fb.p95),
            fmt_num(rb.mean),
            fmt_num(rb.p5),
            fmt_num(rb.p95),
        ]);
        for b in &stats.batches {
            batch_rows.push(vec![x_txt.clone(), b.batch_id.to_string(), fmt_num(b.mean_fidelity(mode)), fmt_num(b.mean_e2e_time_us)]);
        }
    }
    write_csv(sink(&c.out, stdout)?, &header, &rows)?;
    if let Some(p) = batches_out {
        let f = File::create(p).map_err(|e| config_err("batches-out", format!("{}: {e}", p.display())))?;
        write_csv(f, &[x_name, "batch_id", "mean_fidelity", "mean_e2e_time_us"], &batch_rows)?;
    }
    if misses.is_empty() {
        Ok(EXIT_OK)
    } else {
        for m in &misses {
            let _ = writeln!(stderr, "{m}");
        }
        let _ = writeln!(stderr, "{} value(s) outside the Monte-Carlo band", misses.len());
        Ok(EXIT_BAND)
    }
}

fn mc_config(c: &Common, scenario: McScenario, mode: Mode) -> McConfig {
    McConfig { scenario, mode, batches: c.batches, runs_per_batch: c.runs, master_seed: c.seed }
}

fn question(c: &Common) -> Result<Question> {
    let q = c.question.as_deref().ok_or_else(|| config_err("question", "required: q1, q2, q3 or q4"))?;
    Question::parse(q).ok_or_else(|| config_err("question", format!("unknown question '{q}'")))
}

#[derive(Serialize)]
struct OptimReport<'a> {
    question: String,
    mode: Mode,
    #[serde(flatten)]
    result: &'a rq::OptimResult,
}

fn cmd_optimize(c: &Common, mode: Mode, restarts: usize, g: &Geometry, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    let q = question(c)?;
    let mut problem = OptimProblem::question(q, mode);
    problem.restarts = restarts;
    problem.seed = c.seed;
    problem.geometry = *g;
    let result = rq::optimize(&problem)?;
    let report = OptimReport { question: format!("{q:?}"), mode, result: &result };
    write_json(sink(&c.out, stdout)?, &report)?;
    if result.feasible || c.allow_infeasible {
        Ok(EXIT_OK)
    } else {
        let _ = writeln!(stderr, "no feasible point found; best expected fidelity {}", result.max_fidelity);
        Ok(EXIT_INFEASIBLE)
    }
}

fn cmd_sweep(c: &Common, mode: Mode, g: &Geometry, x: Option<&str>, y: Option<&str>, stdout: &mut dyn Write) -> Result<i32> {
    let q = question(c)?;
    let base = HardwareParams::baseline();
    let opt = HardwareParams::optimistic();
    let search = TcutSearch::default();
    let target = rq::F_TARGET;
    let grid = |field: &str, text: Option<&str>, default: &str, log: bool| parse_grid(field, text.unwrap_or(default), log);
    match q {
        Question::Q1 | Question::Q2 => {
            let xs = grid("x-grid", x, "5.95e-4:1.43e-2:20", true)?;
            let ys = grid("y-grid", y, "0.02:4:20", true)?;
            let (fixed, kind) = if q == Question::Q1 {
                (HardwareParams { f_m: opt.f_m, ..base }, ScenarioKind::new(false, mode))
            } else {
                (HardwareParams { f_m: opt.f_m, p_b: opt.p_b, f_b: opt.f_b, ..base }, ScenarioKind::new(true, mode))
            };
            let rows = rq::min_fidelity_surface(&xs, &ys, &fixed, g, kind, target, &search)?;
            let out: Vec<Vec<String>> = rows
                .iter()
                .map(|r| vec![fmt_num(r.p_m0), fmt_num(r.t_coh_s), fmt_opt(r.f_min), fmt_opt(r.rate)])
                .collect();
            write_csv(sink(&c.out, stdout)?, &["p_m0", "t_coh_s", "f_m_min", "rate"], &out)?;
        }
        Question::Q3 => {
            let xs = grid("x-grid", x, "1.51e-6:4.18e-3:20", true)?;
            let ys = grid("y-grid", y, "0.6:0.9:20", false)?;
            let fixed = HardwareParams { p_b: base.p_b, f_b: base.f_b, ..opt };
            let rows = rq::feasibility_region(&xs, &ys, &fixed, g, ScenarioKind::new(true, mode), target, &search)?;
            let out: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        fmt_num(r.p_b),
                        fmt_num(r.f_b),
                        r.feasible.to_string(),
                        fmt_opt(r.max_rate),
                        r.t_cut.map(|t| t.to_string()).unwrap_or_default(),
                    ]
                })
                .collect();
            write_csv(sink(&c.out, stdout)?, &["p_b", "f_b", "feasible", "max_rate", "t_cut_us"], &out)?;
        }
        Question::Q4 => return Err(config_err("question", "sweeps cover q1, q2 and q3 only")),
    }
    Ok(EXIT_OK)
}
