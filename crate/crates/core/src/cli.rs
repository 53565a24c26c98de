//! Command-line front end. Flags override values from `--config`.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{minimize_profile, OptimizerConfig, StartRecord};
use crate::extensions::{lsmd_estimate, EndogenousSpec, GammaEval};
use crate::inference::{self, LrShift, TestResult};
use crate::io::{read_panel_file, PanelFrame};
use crate::linalg::Matrix;
use crate::panel::{self, DiagnosticsReport, ModelSpec, PanelDataset, RestrictionSpec, ValidationReport};
use crate::simulation::montecarlo::{BandwidthChoice, McConfig};
use crate::simulation::tables::{self, preset_configs, run_custom, run_preset, TableOutput, TablePreset};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "ifepanel", version, about = "Panel regression with interactive fixed effects")]
pub struct Cli {
    /// TOML file with default settings for the command.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true, env = "IFEPANEL_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Human,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the model, with analytic and optional jackknife bias correction.
    Estimate(EstimateArgs),
    /// Wald, LR and LM tests of linear restrictions, with and without correction.
    Test(TestArgs),
    /// Least-squares minimum-distance fit with endogenous regressors.
    Lsmd(LsmdArgs),
    /// Data validation and identification diagnostics.
    Diagnose(ModelArgs),
    /// Monte Carlo study from a table preset or a configured cell.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// Long-format CSV with columns unit,time,y,<regressors>.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Number of factors R.
    #[arg(long)]
    pub factors: Option<usize>,
    /// Kernel bandwidth M, or "auto".
    #[arg(long, value_parser = parse_bandwidth)]
    pub bandwidth: Option<BandwidthChoice>,
    /// Regressors declared low-rank (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub low_rank: Vec<String>,
    /// Optimizer starting points.
    #[arg(long)]
    pub starts: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Also report the split-panel jackknife estimate.
    #[arg(long)]
    pub jackknife: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Linear restriction such as "x1=0.5" or "x1-2*x2=0"; repeat for several rows.
    #[arg(long)]
    pub restriction: Vec<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct LsmdArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Endogenous regressors (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub endog: Vec<String>,
    /// Instrument columns of the input file (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub instruments: Vec<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SimulateArgs {
    /// Table preset: 1, 2, 3, 6, 7, 8, S1, S2 or S3.
    #[arg(long)]
    pub table: Option<String>,
    /// Fraction of the published 10,000 replications per cell.
    #[arg(long)]
    pub scale: Option<f64>,
    /// Master seed; results do not depend on the thread count.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replications per cell; overrides --scale and the config.
    #[arg(long)]
    pub reps: Option<usize>,
}

fn parse_bandwidth(s: &str) -> std::result::Result<BandwidthChoice, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(BandwidthChoice::default());
    }
    s.parse::<usize>()
        .map(BandwidthChoice::Fixed)
        .map_err(|_| format!("expected a lag count or 'auto', got '{s}'"))
}

/// Contents of a `--config` file. Every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub input: InputSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub restriction: RestrictionSection,
    #[serde(default)]
    pub endogenous: EndogenousSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    /// A single Monte Carlo cell, used by `simulate` when no table is chosen.
    pub mc: Option<McConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub threads: Option<usize>,
    pub output: Option<PathBuf>,
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSection {
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub low_rank: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub factors: Option<usize>,
    pub bandwidth: Option<BandwidthChoice>,
    #[serde(default)]
    pub jackknife: bool,
    pub optimizer: Option<OptimizerConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RestrictionSection {
    #[serde(default)]
    pub hypotheses: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndogenousSection {
    #[serde(default)]
    pub endog: Vec<String>,
    #[serde(default)]
    pub instruments: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub table: Option<String>,
    pub scale: Option<f64>,
    pub seed: Option<u64>,
    pub reps: Option<usize>,
}

impl FileConfig {
    /// Reads a config and makes relative paths relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Validation(format!("cannot read config '{}': {e}", path.display())))?;
        let mut cfg: FileConfig = toml::from_str(&text)
            .map_err(|e| Error::Validation(format!("config '{}': {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.input.path, &mut cfg.run.output].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Fully resolved model settings.
#[derive(Debug, Clone)]
pub struct ModelOptions {
    pub input: PathBuf,
    pub low_rank: Vec<String>,
    pub spec: ModelSpec,
}

fn model_options(args: &ModelArgs, file: &FileConfig) -> Result<ModelOptions> {
    let input = args
        .input
        .clone()
        .or_else(|| file.input.path.clone())
        .ok_or_else(|| Error::Validation("no input file given (--input or [input] path)".into()))?;
    let r = args
        .factors
        .or(file.model.factors)
        .ok_or_else(|| Error::Validation("number of factors not given (--factors or [model] factors)".into()))?;
    let mut spec = ModelSpec::new(r);
    spec.bandwidth = args.bandwidth.or(file.model.bandwidth).unwrap_or_default().to_bandwidth();
    if let Some(opt) = &file.model.optimizer {
        spec.optimizer = opt.clone();
    }
    if let Some(s) = args.starts {
        spec.optimizer.n_starts = s;
    }
    let low_rank = if args.low_rank.is_empty() {
        file.input.low_rank.clone()
    } else {
        args.low_rank.clone()
    };
    Ok(ModelOptions { input, low_rank, spec })
}

fn load_frame(opts: &ModelOptions) -> Result<PanelFrame> {
    read_panel_file(&opts.input)
}

/// Parses `"c1*name1 + c2*name2 ... = value"` into one restriction row.
pub fn parse_restriction_row(text: &str, names: &[String]) -> Result<(Vec<f64>, f64)> {
    let bad = |why: &str| Error::Validation(format!("restriction '{text}': {why}"));
    let (lhs, rhs) = text.split_once('=').ok_or_else(|| bad("expected '='"))?;
    let value: f64 = rhs.trim().parse().map_err(|_| bad("right-hand side is not a number"))?;
    let mut row = vec![0.0; names.len()];
    let mut term = String::new();
    let mut terms = Vec::new();
    for ch in lhs.chars().filter(|c| !c.is_whitespace()) {
        if (ch == '+' || ch == '-') && !term.is_empty() && !term.ends_with(['*', 'e', 'E']) {
            terms.push(std::mem::take(&mut term));
        }
        term.push(ch);
    }
    terms.push(term);
    for t in terms {
        let (sign, body) = match t.strip_prefix('-') {
            Some(b) => (-1.0, b),
            None => (1.0, t.strip_prefix('+').unwrap_or(&t)),
        };
        let (coef, name) = match body.split_once('*') {
            Some((c, n)) => (c.parse::<f64>().map_err(|_| bad("bad coefficient"))?, n),
            None => (1.0, body),
        };
        let k = names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| bad(&format!("unknown regressor '{name}'")))?;
        row[k] += sign * coef;
    }
    Ok((row, value))
}

pub fn parse_restriction(rows: &[String], names: &[String]) -> Result<RestrictionSpec> {
    if rows.is_empty() {
        return Err(Error::Validation("no restriction given (--restriction or [restriction] hypotheses)".into()));
    }
    let parsed = rows
        .iter()
        .map(|r| parse_restriction_row(r, names))
        .collect::<Result<Vec<_>>>()?;
    let h = Matrix::from_fn(parsed.len(), names.len(), |i, j| parsed[i].0[j]);
    RestrictionSpec::new(h, parsed.iter().map(|p| p.1).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub name: String,
    pub estimate: f64,
    pub bias_corrected: Option<f64>,
    pub std_err: Option<f64>,
    pub jackknife: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub n: usize,
    pub t: usize,
    pub factors: usize,
    pub bandwidth: usize,
    pub objective: f64,
    pub converged: bool,
    pub starts_agreeing: usize,
    pub degenerate_gap: bool,
    pub on_boundary: bool,
    pub coefficients: Vec<CoefficientRow>,
    pub diagnostics: DiagnosticsReport,
    pub starts: Vec<StartRecord>,
    pub warnings: Vec<String>,
}

pub fn estimate_report(d: &PanelDataset, spec: &ModelSpec, jackknife: bool) -> Result<EstimateReport> {
    let fit = minimize_profile(d, spec)?;
    let kernel = spec.bandwidth.resolve(d.t());
    let inf = inference::bias_corrected(&fit, d, kernel)?;
    let jk = if jackknife { Some(inference::jackknife(d, spec)?) } else { None };
    let mut warnings = fit.warnings.clone();
    warnings.extend(inf.warnings.iter().cloned());
    if let Some(j) = &jk {
        warnings.extend(j.warnings.iter().cloned());
    }
    let factors = (fit.r > 0).then_some((&fit.lambda_hat, &fit.f_hat));
    let diagnostics = panel::diagnostics(d, spec.r, factors)?;
    let coefficients = (0..d.k())
        .map(|k| CoefficientRow {
            name: d.regressor_names[k].clone(),
            estimate: fit.beta_hat[k],
            bias_corrected: Some(inf.beta_star[k]),
            std_err: Some(inf.std_err[k]),
            jackknife: jk.as_ref().map(|j| j.beta_jackknife[k]),
        })
        .collect();
    Ok(EstimateReport {
        n: d.n(),
        t: d.t(),
        factors: fit.r,
        bandwidth: inf.bandwidth_used,
        objective: fit.objective,
        converged: fit.converged,
        starts_agreeing: fit.n_restarts_agreeing,
        degenerate_gap: fit.degenerate_gap,
        on_boundary: fit.on_boundary,
        coefficients,
        diagnostics,
        starts: fit.starts,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub n: usize,
    pub t: usize,
    pub factors: usize,
    pub bandwidth: usize,
    pub hypotheses: Vec<String>,
    pub critical_value_5pct: f64,
    pub tests: Vec<TestResult>,
}

pub fn test_report(d: &PanelDataset, spec: &ModelSpec, hypotheses: &[String]) -> Result<TestReport> {
    let rest = parse_restriction(hypotheses, &d.regressor_names)?;
    rest.check_against(d.k())?;
    let fit = minimize_profile(d, spec)?;
    let inf = inference::bias_corrected(&fit, d, spec.bandwidth.resolve(d.t()))?;
    let tests = inference::all_tests(d, spec, &fit, &inf, &rest, LrShift::Unrestricted)?;
    Ok(TestReport {
        n: d.n(),
        t: d.t(),
        factors: spec.r,
        bandwidth: inf.bandwidth_used,
        hypotheses: hypotheses.to_vec(),
        critical_value_5pct: inference::chi2_critical(0.05, rest.rows()),
        tests,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsmdReport {
    pub n: usize,
    pub t: usize,
    pub factors: usize,
    pub endogenous: Vec<String>,
    pub instruments: Vec<String>,
    pub coefficients: Vec<CoefficientRow>,
    pub distance: f64,
    pub gamma_path: Vec<GammaEval>,
    pub warnings: Vec<String>,
}

pub fn lsmd_report(frame: &PanelFrame, opts: &ModelOptions, endog: &[String], instruments: &[String]) -> Result<LsmdReport> {
    if endog.is_empty() || instruments.is_empty() {
        return Err(Error::Validation("LS-MD needs --endog and --instruments".into()));
    }
    let d = frame.dataset(instruments, &opts.low_rank)?;
    let endog_idx = endog
        .iter()
        .map(|e| {
            d.regressor_names
                .iter()
                .position(|n| n == e)
                .ok_or_else(|| Error::Validation(format!("endogenous regressor '{e}' is not a regressor column")))
        })
        .collect::<Result<Vec<_>>>()?;
    let z = instruments
        .iter()
        .map(|c| frame.column(c).cloned())
        .collect::<Result<Vec<_>>>()?;
    let res = lsmd_estimate(&d, &opts.spec, &EndogenousSpec::new(endog_idx, z))?;
    let coefficients = d
        .regressor_names
        .iter()
        .zip(&res.final_fit.beta_hat)
        .map(|(name, &b)| CoefficientRow {
            name: name.clone(),
            estimate: b,
            bias_corrected: None,
            std_err: None,
            jackknife: None,
        })
        .collect();
    Ok(LsmdReport {
        n: d.n(),
        t: d.t(),
        factors: opts.spec.r,
        endogenous: endog.to_vec(),
        instruments: instruments.to_vec(),
        coefficients,
        distance: res.distance,
        gamma_path: res.gamma_path,
        warnings: res.warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseReport {
    pub validation: ValidationReport,
    pub identification: DiagnosticsReport,
}

pub fn diagnose_report(d: &PanelDataset, spec: &ModelSpec) -> Result<DiagnoseReport> {
    let validation = panel::validate_dataset(d)?;
    let fit = if spec.r > 0 && d.has_low_rank() {
        Some(minimize_profile(d, spec)?)
    } else {
        None
    };
    let identification = panel::diagnostics(d, spec.r, fit.as_ref().map(|f| (&f.lambda_hat, &f.f_hat)))?;
    Ok(DiagnoseReport {
        validation,
        identification,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

fn write_rows<S: Serialize>(w: impl Write, rows: &[S]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

fn write_json<S: Serialize>(mut w: impl Write, v: &S) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, v).map_err(|e| Error::Io(e.into()))?;
    writeln!(w)?;
    Ok(())
}

fn coefficient_table(rows: &[CoefficientRow]) -> String {
    let mut s = format!(
        "{:<12}{:>12}{:>12}{:>12}{:>12}\n",
        "coefficient", "estimate", "corrected", "std.err", "jackknife"
    );
    for r in rows {
        s += &format!(
            "{:<12}{:>12.6}{:>12}{:>12}{:>12}\n",
            r.name,
            r.estimate,
            opt(r.bias_corrected),
            opt(r.std_err),
            opt(r.jackknife)
        );
    }
    s
}

pub fn render_estimate(r: &EstimateReport, format: Format, w: impl Write) -> Result<()> {
    match format {
        Format::Csv => write_rows(w, &r.coefficients),
        Format::Json => write_json(w, r),
        Format::Human => {
            let mut s = format!(
                "N={} T={} R={} bandwidth M={}\n\n{}\nobjective {:.6e}, converged: {}, {} of {} starts agree\n",
                r.n,
                r.t,
                r.factors,
                r.bandwidth,
                coefficient_table(&r.coefficients),
                r.objective,
                r.converged,
                r.starts_agreeing,
                r.starts.len()
            );
            for warn in &r.warnings {
                s += &format!("warning: {warn}\n");
            }
            human(w, &s)
        }
    }
}

#[derive(Serialize)]
struct TestRow<'a> {
    test: &'a str,
    statistic: f64,
    df: usize,
    p_value: f64,
}

pub fn render_test(r: &TestReport, format: Format, w: impl Write) -> Result<()> {
    match format {
        Format::Csv => {
            let rows: Vec<TestRow> = r
                .tests
                .iter()
                .map(|t| TestRow {
                    test: t.variant.label(),
                    statistic: t.statistic,
                    df: t.df,
                    p_value: t.p_value,
                })
                .collect();
            write_rows(w, &rows)
        }
        Format::Json => write_json(w, r),
        Format::Human => {
            let mut s = format!("H0: {}\n5% critical value {:.4}\n\n", r.hypotheses.join(", "), r.critical_value_5pct);
            s += &format!("{:<6}{:>12}{:>6}{:>10}\n", "test", "statistic", "df", "p-value");
            for t in &r.tests {
                s += &format!("{:<6}{:>12.4}{:>6}{:>10.4}\n", t.variant.label(), t.statistic, t.df, t.p_value);
            }
            human(w, &s)
        }
    }
}

pub fn render_lsmd(r: &LsmdReport, format: Format, w: impl Write) -> Result<()> {
    match format {
        Format::Csv => write_rows(w, &r.coefficients),
        Format::Json => write_json(w, r),
        Format::Human => {
            let mut s = format!(
                "LS-MD, endogenous: {}, instruments: {}\n\n{}\ninstrument coefficient distance {:.3e}\n",
                r.endogenous.join(","),
                r.instruments.join(","),
                coefficient_table(&r.coefficients),
                r.distance
            );
            for warn in &r.warnings {
                s += &format!("warning: {warn}\n");
            }
            human(w, &s)
        }
    }
}

#[derive(Serialize)]
struct StatRow<'a> {
    statistic: &'a str,
    value: Option<f64>,
}

pub fn render_diagnose(r: &DiagnoseReport, format: Format, w: impl Write) -> Result<()> {
    let id = &r.identification;
    let stats = [
        ("highrank_stat", id.highrank_stat),
        ("lowrank_loading_eig", id.lowrank_loading_eig),
        ("lowrank_factor_eig", id.lowrank_factor_eig),
        ("pooled_noncollinearity_eig", Some(id.pooled_noncollinearity_eig)),
    ];
    match format {
        Format::Csv => {
            let rows: Vec<StatRow> = stats.iter().map(|&(statistic, value)| StatRow { statistic, value }).collect();
            write_rows(w, &rows)
        }
        Format::Json => write_json(w, r),
        Format::Human => {
            let mut s = format!(
                "N={} T={} numeric ranks {:?}\n",
                r.validation.n, r.validation.t, r.validation.numeric_ranks
            );
            for (name, v) in stats {
                s += &format!("{name:<28}{}\n", opt(v));
            }
            for warn in r.validation.warnings.iter().chain(&id.warnings) {
                s += &format!("warning: {warn}\n");
            }
            human(w, &s)
        }
    }
}

pub fn render_table(out: &TableOutput, format: Format, w: impl Write) -> Result<()> {
    match format {
        Format::Csv => out.write_csv(w),
        Format::Json => {
            let mut w = w;
            out.write_json(&mut w)?;
            writeln!(w)?;
            Ok(())
        }
        Format::Human => human(w, &out.to_human()),
    }
}

fn human(mut w: impl Write, s: &str) -> Result<()> {
    w.write_all(s.as_bytes())?;
    Ok(())
}

/// Simulation output for resolved settings: a preset table or a single configured cell.
pub fn simulate_output(args: &SimulateArgs, file: &FileConfig) -> Result<TableOutput> {
    let table = args.table.clone().or_else(|| file.simulate.table.clone());
    let seed = args.seed.or(file.simulate.seed);
    let reps = args.reps.or(file.simulate.reps);
    match table {
        Some(label) => {
            let preset: TablePreset = label.parse()?;
            let scale = args.scale.or(file.simulate.scale).unwrap_or(1.0);
            let seed = seed.unwrap_or(0);
            let mut configs = preset_configs(preset, scale, seed)?;
            if let Some(r) = reps {
                configs.iter_mut().for_each(|c| c.reps = r);
            }
            run_preset(preset, &configs, seed)
        }
        None => {
            let mut cfg = file
                .mc
                .clone()
                .ok_or_else(|| Error::Validation("simulate needs --table or an [mc] section in --config".into()))?;
            if let Some(s) = seed {
                cfg.dgp.seed = s;
            }
            if let Some(r) = reps {
                cfg.reps = r;
            } else if let Some(scale) = args.scale.or(file.simulate.scale) {
                cfg.reps = tables::scaled_reps(scale)?;
            }
            run_custom(&cfg)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    if e.is_input_error() || matches!(e, Error::Infeasible(_)) {
        EXIT_INPUT
    } else {
        EXIT_NUMERICAL
    }
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    error: &'a str,
    message: String,
    exit_code: i32,
}

fn report_error(e: &Error) -> i32 {
    let code = exit_code(e);
    let rec = ErrorRecord {
        error: e.kind(),
        message: e.to_string(),
        exit_code: code,
    };
    eprintln!("{}", serde_json::to_string(&rec).unwrap_or_else(|_| e.to_string()));
    code
}

fn dispatch(cli: &Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    if let Some(n) = cli.threads.or(file.run.threads) {
        if n == 0 {
            return Err(Error::Validation("--threads must be at least 1".into()));
        }
        // Fails only if a pool already exists, e.g. when called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let format = cli.format.or(file.run.format).unwrap_or(Format::Human);
    let output = cli.output.clone().or_else(|| file.run.output.clone());
    let mut buf: Vec<u8> = Vec::new();
    match &cli.command {
        Command::Estimate(a) => {
            let opts = model_options(&a.model, &file)?;
            let d = load_frame(&opts)?.dataset(&[], &opts.low_rank)?;
            let r = estimate_report(&d, &opts.spec, a.jackknife || file.model.jackknife)?;
            render_estimate(&r, format, &mut buf)?;
        }
        Command::Test(a) => {
            let opts = model_options(&a.model, &file)?;
            let d = load_frame(&opts)?.dataset(&[], &opts.low_rank)?;
            let hyp = if a.restriction.is_empty() {
                &file.restriction.hypotheses
            } else {
                &a.restriction
            };
            let r = test_report(&d, &opts.spec, hyp)?;
            render_test(&r, format, &mut buf)?;
        }
        Command::Lsmd(a) => {
            let opts = model_options(&a.model, &file)?;
            let frame = load_frame(&opts)?;
            let pick = |cli: &Vec<String>, cfg: &Vec<String>| if cli.is_empty() { cfg.clone() } else { cli.clone() };
            let endog = pick(&a.endog, &file.endogenous.endog);
            let instruments = pick(&a.instruments, &file.endogenous.instruments);
            let r = lsmd_report(&frame, &opts, &endog, &instruments)?;
            render_lsmd(&r, format, &mut buf)?;
        }
        Command::Diagnose(a) => {
            let opts = model_options(a, &file)?;
            let d = load_frame(&opts)?.dataset(&[], &opts.low_rank)?;
            let r = diagnose_report(&d, &opts.spec)?;
            render_diagnose(&r, format, &mut buf)?;
        }
        Command::Simulate(a) => {
            // Per-replication optimizer notes would flood the terminal.
            if std::env::var_os("RUST_LOG").is_none() {
                log::set_max_level(log::LevelFilter::Error);
            }
            let out = simulate_output(a, &file)?;
            render_table(&out, format, &mut buf)?;
        }
    }
    match output {
        Some(p) => std::fs::write(&p, &buf)
            .map_err(|e| Error::Validation(format!("cannot write output '{}': {e}", p.display()))),
        None => {
            std::io::stdout().write_all(&buf)?;
            Ok(())
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => report_error(&e),
    }
}
