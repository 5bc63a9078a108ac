//! Configuration, CSV formats and the command-line driver.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a value
//! written and parsed back is bit-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::fourier::{
    estimate_spot_covariance, fejer_identities, fejer_kernel, fourier_coefficients,
    select_mode_count, ClampPolicy, GFunctionSpec, GKind,
};
use crate::linalg::{upper_pairs, Matrix, SampledPath, SymMatrix, SymMatrixPath, TimeGrid};
use crate::mc::{clt_fourier_experiment, clt_spot_experiment, ConstantDesign, ExperimentReport};
use crate::second_pass::{coarse_reconstruction, estimate_params, Pv12Form, SecondPassConfig};
use crate::simulator::{simulate_bates, BatesParams, JumpCompensation, JumpEvent, SimOutput};

/// Environment variable overriding the configured seed.
pub const SEED_ENV: &str = "COVFOURIER_SEED";

/// Relative tolerance on the spacing of observation times.
pub const SPACING_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulate,
    EstimateSpot,
    EstimateParams,
    McClt,
    KernelTable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GChoice {
    #[default]
    Cosine,
    GaussExp,
    PowerVariation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ClampChoice {
    Error,
    #[default]
    Eps,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub y0: Vec<f64>,
    pub x0: Vec<Vec<f64>>,
    pub mean_reversion: Vec<Vec<f64>>,
    pub alpha: Vec<Vec<f64>>,
    /// Defaults to `3.5 alpha` when absent.
    pub b: Option<Vec<Vec<f64>>>,
    pub rho: Vec<f64>,
    pub lambda_y: Vec<f64>,
    pub jump_mu: Vec<f64>,
    pub jump_sigma: Vec<f64>,
    pub lambda_x11: f64,
    pub theta: f64,
    pub compensation: CompensationChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CompensationChoice {
    #[default]
    Martingale,
    NegativeHalfVariance,
}

fn dense_rows(m: &SymMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.dim())
        .map(|i| (0..m.dim()).map(|j| m.get(i, j)).collect())
        .collect()
}

impl Default for ModelConfig {
    fn default() -> Self {
        let p = BatesParams::<f64>::reference();
        let m = &p.mean_reversion;
        Self {
            y0: p.y0.clone(),
            x0: dense_rows(&p.x0),
            mean_reversion: (0..m.rows())
                .map(|i| (0..m.cols()).map(|j| m[(i, j)]).collect())
                .collect(),
            alpha: dense_rows(&p.alpha),
            b: None,
            rho: p.rho.clone(),
            lambda_y: p.lambda_y.clone(),
            jump_mu: p.jump_mu.clone(),
            jump_sigma: p.jump_sigma.clone(),
            lambda_x11: p.lambda_x11,
            theta: p.theta,
            compensation: CompensationChoice::Martingale,
        }
    }
}

impl ModelConfig {
    pub fn to_params(&self) -> Result<BatesParams<f64>> {
        let alpha = SymMatrix::from_rows(&self.alpha)?;
        let b = match &self.b {
            Some(rows) => SymMatrix::from_rows(rows)?,
            None => alpha.scale(3.5),
        };
        let params = BatesParams {
            y0: self.y0.clone(),
            x0: SymMatrix::from_rows(&self.x0)?,
            mean_reversion: Matrix::from_rows(&self.mean_reversion)?,
            alpha,
            b,
            rho: self.rho.clone(),
            lambda_y: self.lambda_y.clone(),
            jump_mu: self.jump_mu.clone(),
            jump_sigma: self.jump_sigma.clone(),
            lambda_x11: self.lambda_x11,
            theta: self.theta,
            compensation: match self.compensation {
                CompensationChoice::Martingale => JumpCompensation::Martingale,
                CompensationChoice::NegativeHalfVariance => JumpCompensation::NegativeHalfVariance,
            },
        };
        params.validate()?;
        Ok(params)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub g: GChoice,
    /// Powers of the power-variation `g`.
    pub r: f64,
    pub s: f64,
    pub gamma: f64,
    pub k: f64,
    /// Explicit mode count; overrides `gamma`/`k`.
    pub modes: Option<usize>,
    pub clamp: ClampChoice,
    pub clamp_eps: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            g: GChoice::Cosine,
            r: 2.0,
            s: 0.0,
            gamma: 2.0,
            k: 3.0,
            modes: None,
            clamp: ClampChoice::Eps,
            clamp_eps: 1e-10,
        }
    }
}

impl EstimatorConfig {
    pub fn spec(&self, dim: usize) -> GFunctionSpec<f64> {
        let kind = match self.g {
            GChoice::Cosine => GKind::CosineTT,
            GChoice::GaussExp => GKind::GaussExp,
            GChoice::PowerVariation => GKind::PowerVariation {
                r: self.r,
                s: self.s,
            },
        };
        GFunctionSpec::new(kind, dim)
    }

    pub fn policy(&self) -> ClampPolicy<f64> {
        match self.clamp {
            ClampChoice::Error => ClampPolicy::Error,
            ClampChoice::Eps => ClampPolicy::ClampToEps(self.clamp_eps),
        }
    }

    pub fn mode_count(&self, grid: &TimeGrid<f64>) -> Result<usize> {
        select_mode_count(grid.n(), self.gamma, self.k, grid.increments())?;
        match self.modes {
            Some(0) => Err(Error::InvalidParams("modes must be positive".into())),
            Some(n) => Ok(n),
            None => select_mode_count(grid.n(), self.gamma, self.k, grid.increments()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SecondPassToml {
    pub m_list: Vec<usize>,
    pub r_diag: f64,
    pub r_offdiag: f64,
    pub r_cross: f64,
    pub s_cross: f64,
    /// Zero-based components whose variance jumps.
    pub jump_components: Vec<usize>,
    pub pv12_form: Pv12Choice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Pv12Choice {
    #[default]
    Model,
    SameIndex,
}

impl Default for SecondPassToml {
    fn default() -> Self {
        let d = SecondPassConfig::<f64>::new(10);
        Self {
            m_list: vec![10, 15, 21, 30, 42, 60, 84, 105],
            r_diag: d.r_diag,
            r_offdiag: d.r_offdiag,
            r_cross: d.r_cross,
            s_cross: d.s_cross,
            jump_components: d.jump_components,
            pv12_form: Pv12Choice::Model,
        }
    }
}

impl SecondPassToml {
    pub fn config(&self, m: usize) -> SecondPassConfig<f64> {
        SecondPassConfig {
            m,
            r_diag: self.r_diag,
            r_offdiag: self.r_offdiag,
            r_cross: self.r_cross,
            s_cross: self.s_cross,
            jump_components: self.jump_components.clone(),
            pv12_form: match self.pv12_form {
                Pv12Choice::Model => Pv12Form::Model,
                Pv12Choice::SameIndex => Pv12Form::SameIndex,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    /// Constant variance of the one-dimensional design.
    pub x: f64,
    pub n: u64,
    pub reps: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            x: 0.09,
            n: 1 << 14,
            reps: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub modes: usize,
    /// Sample points of `F_N` on `[-pi, pi]`.
    pub samples: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            modes: 10,
            samples: 401,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: Option<Mode>,
    pub seed: u64,
    /// Samples per unit time of simulated paths.
    pub n: u64,
    pub horizon: f64,
    /// Observations CSV for the estimation modes.
    pub input: Option<PathBuf>,
    /// Covariance CSV written by `simulate`, compared against in `estimate-spot`.
    pub reference: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub estimator: EstimatorConfig,
    pub second_pass: SecondPassToml,
    pub mc: McConfig,
    pub kernel: KernelConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: None,
            seed: 1,
            n: 127_750,
            horizon: 1.0,
            input: None,
            reference: None,
            output_dir: PathBuf::from("out"),
            model: ModelConfig::default(),
            estimator: EstimatorConfig::default(),
            second_pass: SecondPassToml::default(),
            mc: McConfig::default(),
            kernel: KernelConfig::default(),
        }
    }
}

/// Parses a `key=value` override; the value is read as a TOML value, or as a string if that fails.
fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        cur = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("'{part}' in '{key}' is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Config text plus `key=value` overrides, then the seed environment override.
    pub fn load(text: Option<&str>, overrides: &[String], env_seed: Option<&str>) -> Result<Self> {
        let mut table: toml::Table = match text {
            Some(t) => toml::from_str(t).map_err(|e| Error::Config(e.message().to_string()))?,
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        if let Some(s) = env_seed {
            cfg.seed = s.trim().parse().map_err(|_| {
                Error::Config(format!("{SEED_ENV}='{s}' is not an unsigned integer"))
            })?;
        }
        Ok(cfg)
    }

    /// Checks the fields each mode needs before anything runs.
    pub fn validate(&self, mode: Mode) -> Result<()> {
        if !(self.horizon > 0.0) {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if !(self.estimator.gamma > 1.0) || !(self.estimator.k > 0.0) {
            return Err(Error::InvalidRate {
                gamma: self.estimator.gamma,
                k: self.estimator.k,
            });
        }
        match mode {
            Mode::Simulate => {
                self.model.to_params()?;
            }
            Mode::EstimateSpot | Mode::EstimateParams => {
                if self.input.is_none() {
                    return Err(Error::Config(format!("mode {mode:?} requires 'input'")));
                }
                if mode == Mode::EstimateParams {
                    if self.second_pass.m_list.is_empty() {
                        return Err(Error::Config("second_pass.m_list must not be empty".into()));
                    }
                    self.second_pass
                        .config(self.second_pass.m_list[0])
                        .validate()?;
                }
            }
            Mode::McClt => {
                if !(self.mc.x > 0.0) {
                    return Err(Error::Config("mc.x must be positive".into()));
                }
            }
            Mode::KernelTable => {
                if self.kernel.modes == 0 || self.kernel.samples < 2 {
                    return Err(Error::Config(
                        "kernel.modes >= 1 and kernel.samples >= 2 required".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Reads `time,y1,...,yd` observations on an equidistant grid starting at zero.
///
/// Row numbers in errors count data rows from one.
pub fn parse_observations_csv(path: &Path) -> Result<SampledPath<f64>> {
    let text = fs::read_to_string(path)?;
    parse_observations(&text)
}

pub fn parse_observations(text: &str) -> Result<SampledPath<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    if headers.is_empty() || headers.get(0).map(str::trim) != Some("time") {
        if headers.is_empty() {
            return Err(Error::EmptyFile);
        }
        return Err(Error::Malformed("first column must be 'time'".into()));
    }
    let d = headers.len() - 1;
    if d == 0 {
        return Err(Error::Malformed("no observation columns".into()));
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record?;
        if record.len() != d + 1 {
            return Err(Error::Malformed(format!(
                "row {row} has {} fields, expected {}",
                record.len(),
                d + 1
            )));
        }
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Malformed(format!(
                    "row {row}, column {}: '{field}' is not a number",
                    col + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    row,
                    column: col + 1,
                });
            }
            if col == 0 {
                times.push(v);
            } else {
                values.push(v);
            }
        }
    }
    if times.is_empty() {
        return Err(Error::EmptyFile);
    }
    if times.len() < 2 {
        return Err(Error::Malformed("need at least two observations".into()));
    }
    if times[0] != 0.0 {
        return Err(Error::Malformed(format!(
            "first time must be 0, got {}",
            times[0]
        )));
    }
    let spacing = times[1] - times[0];
    if !(spacing > 0.0) {
        return Err(Error::NotEquidistant { row: 2 });
    }
    for m in 2..times.len() {
        if ((times[m] - times[m - 1]) - spacing).abs() > SPACING_TOL * spacing {
            return Err(Error::NotEquidistant { row: m + 1 });
        }
    }
    let freq = 1.0 / spacing;
    let n = freq.round();
    if n < 1.0 || (freq - n).abs() > 1e-6 * n {
        return Err(Error::Malformed(format!(
            "sampling frequency {freq} per unit time is not an integer"
        )));
    }
    let n = n as u64;
    let horizon = (times.len() - 1) as f64 / n as f64;
    SampledPath::new(TimeGrid::new(n, horizon)?, d, values)
}

/// `time,y1,...,yd`.
pub fn observations_csv(y: &SampledPath<f64>) -> String {
    let mut out = String::from("time");
    for i in 1..=y.dim() {
        let _ = write!(out, ",y{i}");
    }
    out.push('\n');
    for m in 0..y.len() {
        let _ = write!(out, "{}", y.grid().time(m));
        for v in y.row(m) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

fn entry_header(dim: usize) -> String {
    upper_pairs(dim)
        .iter()
        .map(|(i, j)| format!("x{}{}", i + 1, j + 1))
        .collect::<Vec<_>>()
        .join(",")
}

/// `time,x11,x12,...` with the packed upper triangle per row.
pub fn covariance_csv(x: &SymMatrixPath<f64>) -> String {
    let mut out = format!("time,{}\n", entry_header(x.dim()));
    for (t, v) in x.times().iter().zip(x.values()) {
        let _ = write!(out, "{t}");
        for e in v.packed() {
            let _ = write!(out, ",{e}");
        }
        out.push('\n');
    }
    out
}

/// Reads a file written by [`covariance_csv`].
pub fn parse_covariance(text: &str) -> Result<SymMatrixPath<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let width = reader.headers()?.len();
    let p = width.saturating_sub(1);
    let dim = (1..=8).find(|d| d * (d + 1) / 2 == p).ok_or_else(|| {
        Error::Malformed(format!(
            "{p} covariance columns do not form an upper triangle"
        ))
    })?;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        let nums: Vec<f64> = record
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Malformed(format!("row {} is not numeric", idx + 1)))?;
        if nums.len() != width {
            return Err(Error::Malformed(format!(
                "row {} has {} fields",
                idx + 1,
                nums.len()
            )));
        }
        times.push(nums[0]);
        values.push(SymMatrix::from_packed(dim, nums[1..].to_vec())?);
    }
    if times.is_empty() {
        return Err(Error::EmptyFile);
    }
    SymMatrixPath::new(times, values)
}

/// `kind,step,time,component,mark` with one-based components.
pub fn jumps_csv(y_jumps: &[JumpEvent<f64>], x_jumps: &[JumpEvent<f64>]) -> String {
    let mut out = String::from("kind,step,time,component,mark\n");
    for (kind, events) in [("y", y_jumps), ("x11", x_jumps)] {
        for e in events {
            let _ = writeln!(
                out,
                "{kind},{},{},{},{}",
                e.step,
                e.time,
                e.component + 1,
                e.mark
            );
        }
    }
    out
}

/// `metric,replications,estimate,std_error,ci_low,ci_high,target,tolerance,passed`.
pub fn report_csv(reports: &[ExperimentReport]) -> String {
    let mut out = String::from("experiment,metric,replications,estimate,std_error,ci_low,ci_high,target,tolerance,passed\n");
    for r in reports {
        for m in &r.metrics {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.name,
                m.name,
                r.replications,
                m.summary.estimate,
                m.summary.std_error,
                m.summary.ci_low,
                m.summary.ci_high,
                m.target,
                m.tolerance.describe(),
                m.passed
            );
        }
    }
    out
}

pub fn report_text(reports: &[ExperimentReport]) -> String {
    let mut out = String::new();
    for r in reports {
        let _ = writeln!(
            out,
            "{} ({} replications): {}",
            r.name,
            r.replications,
            if r.passed() { "PASS" } else { "FAIL" }
        );
        for m in &r.metrics {
            let _ = writeln!(
                out,
                "  {:<22} {:>14.6e} ± {:.2e}  target {:.6e}  [{}] {}",
                m.name,
                m.summary.estimate,
                m.summary.std_error,
                m.target,
                m.tolerance.describe(),
                if m.passed { "ok" } else { "FAIL" }
            );
        }
    }
    out
}

/// Files written by one run, in write order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
}

fn write_file(out: &mut RunOutput, dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents)?;
    out.files.push(path);
    Ok(())
}

fn simulate_mode(cfg: &RunConfig, dir: &Path, out: &mut RunOutput) -> Result<()> {
    let params = cfg.model.to_params()?;
    let grid = TimeGrid::new(cfg.n, cfg.horizon)?;
    let SimOutput {
        y_path,
        x_path,
        y_jumps,
        x_jumps,
        ..
    } = simulate_bates(&params, &grid, cfg.seed)?;
    write_file(out, dir, "observations.csv", &observations_csv(&y_path))?;
    write_file(out, dir, "covariance.csv", &covariance_csv(&x_path))?;
    write_file(out, dir, "jumps.csv", &jumps_csv(&y_jumps, &x_jumps))
}

fn read_input(cfg: &RunConfig) -> Result<SampledPath<f64>> {
    let path = cfg
        .input
        .as_ref()
        .ok_or_else(|| Error::Config("'input' is required".into()))?;
    parse_observations_csv(path)
}

fn estimate_spot_mode(cfg: &RunConfig, dir: &Path, out: &mut RunOutput) -> Result<()> {
    let y = read_input(cfg)?;
    let spec = cfg.estimator.spec(y.dim());
    let modes = cfg.estimator.mode_count(y.grid())?;
    let est = estimate_spot_covariance(&y, &spec, modes, cfg.estimator.policy())?;
    let mut text = format!("time,{},clamped\n", entry_header(y.dim()));
    for ((t, v), c) in est
        .x_path
        .times()
        .iter()
        .zip(est.x_path.values())
        .zip(&est.clamped)
    {
        let _ = write!(text, "{t}");
        for e in v.packed() {
            let _ = write!(text, ",{e}");
        }
        let _ = writeln!(text, ",{c}");
    }
    write_file(out, dir, "spot.csv", &text)?;
    if let Some(reference) = &cfg.reference {
        let truth = parse_covariance(&fs::read_to_string(reference)?)?;
        if truth.dim() != y.dim() {
            return Err(Error::DimensionMismatch(format!(
                "reference has dimension {}, observations {}",
                truth.dim(),
                y.dim()
            )));
        }
        let header = entry_header(y.dim());
        let true_header = header.replace('x', "true_x");
        let mut cmp = format!("time,{header},{true_header}\n");
        for (t, v) in est.x_path.times().iter().zip(est.x_path.values()) {
            let _ = write!(cmp, "{t}");
            for e in v.packed().iter().chain(truth.nearest(*t).packed()) {
                let _ = write!(cmp, ",{e}");
            }
            cmp.push('\n');
        }
        write_file(out, dir, "spot_vs_true.csv", &cmp)?;
    }
    Ok(())
}

fn estimate_params_mode(cfg: &RunConfig, dir: &Path, out: &mut RunOutput) -> Result<()> {
    let y = read_input(cfg)?;
    let d = y.dim();
    let spec = cfg.estimator.spec(d);
    let modes = cfg.estimator.mode_count(y.grid())?;
    let coeffs = fourier_coefficients(&y, &spec, modes)?;
    let mut text = String::from("m");
    for (i, j) in upper_pairs(d) {
        let _ = write!(text, ",alpha{}{}", i + 1, j + 1);
    }
    for i in 1..=d {
        let _ = write!(text, ",rho{i}");
    }
    text.push_str(",residual\n");
    for &m in &cfg.second_pass.m_list {
        let pass = cfg.second_pass.config(m);
        let spot = coarse_reconstruction(&coeffs, &spec, m, cfg.estimator.policy())?;
        let est = estimate_params(&spot.x_path, &y, &pass)?;
        let _ = write!(text, "{m}");
        for a in est.alpha_hat.packed() {
            let _ = write!(text, ",{a}");
        }
        for r in &est.rho_hat {
            let _ = write!(text, ",{r}");
        }
        let _ = writeln!(text, ",{}", est.objective_values.iter().sum::<f64>());
    }
    write_file(out, dir, "params.csv", &text)
}

fn mc_clt_mode(cfg: &RunConfig, dir: &Path, out: &mut RunOutput) -> Result<()> {
    let design = ConstantDesign {
        x: cfg.mc.x,
        horizon: cfg.horizon,
    };
    let grid = TimeGrid::new(cfg.mc.n, cfg.horizon)?;
    let modes = cfg.estimator.mode_count(&grid)?;
    let fourier = clt_fourier_experiment(
        design,
        &GFunctionSpec::cosine(1),
        cfg.mc.n,
        modes,
        cfg.mc.reps,
        cfg.seed,
    )?;
    let spot = clt_spot_experiment(
        design,
        &GFunctionSpec::squares(),
        cfg.mc.n,
        cfg.estimator.gamma,
        cfg.estimator.k,
        cfg.mc.reps,
        crate::simulator::derive_seed(cfg.seed, 1),
    )?;
    let reports = [fourier, spot];
    write_file(out, dir, "report.csv", &report_csv(&reports))?;
    write_file(out, dir, "report.txt", &report_text(&reports))
}

fn kernel_table_mode(cfg: &RunConfig, dir: &Path, out: &mut RunOutput) -> Result<()> {
    use std::f64::consts::PI;
    let n = cfg.kernel.modes;
    let samples = cfg.kernel.samples;
    let mut text = String::from("x,value\n");
    for j in 0..samples {
        let x = -PI + 2.0 * PI * j as f64 / (samples - 1) as f64;
        let _ = writeln!(text, "{x},{}", fejer_kernel(x, n));
    }
    write_file(out, dir, "kernel.csv", &text)?;
    let id = fejer_identities(n)?;
    let mut ids = String::from("identity,modes,computed,exact,abs_error\n");
    let two_pi = 2.0 * PI;
    for (name, computed, exact) in [
        ("integral", id.integral, two_pi),
        (
            "normalized_square",
            id.normalized_square,
            id.normalized_square_exact,
        ),
        ("max_at_zeros", id.max_at_zeros, 0.0),
    ] {
        let _ = writeln!(
            ids,
            "{name},{n},{computed},{exact},{}",
            (computed - exact).abs()
        );
    }
    write_file(out, dir, "identities.csv", &ids)
}

/// Executes `mode` with a validated configuration, writing into `cfg.output_dir`.
pub fn run(mode: Mode, cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate(mode)?;
    let dir = cfg.output_dir.as_path();
    fs::create_dir_all(dir)?;
    let mut out = RunOutput::default();
    match mode {
        Mode::Simulate => simulate_mode(cfg, dir, &mut out)?,
        Mode::EstimateSpot => estimate_spot_mode(cfg, dir, &mut out)?,
        Mode::EstimateParams => estimate_params_mode(cfg, dir, &mut out)?,
        Mode::McClt => mc_clt_mode(cfg, dir, &mut out)?,
        Mode::KernelTable => kernel_table_mode(cfg, dir, &mut out)?,
    }
    Ok(out)
}

/// Process exit code for a run result: 0 ok, 2 validation, 3 numerical.
pub fn exit_code(result: &Result<RunOutput>) -> i32 {
    match result {
        Ok(_) => 0,
        Err(e) if e.is_validation() => 2,
        Err(_) => 3,
    }
}

/// Single-line JSON error record.
pub fn error_record(e: &Error) -> String {
    serde_json::json!({
        "error": e.kind(),
        "message": e.to_string(),
        "exit_code": if e.is_validation() { 2 } else { 3 },
    })
    .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_row_file() {
        let y = parse_observations("time,y1\n0,0.1\n0.5,0.2\n1.0,0.4\n").unwrap();
        assert_eq!(y.grid().n(), 2);
        assert_eq!(y.grid().horizon(), 1.0);
        assert_eq!(y.values(), &[0.1, 0.2, 0.4]);
    }

    #[test]
    fn uneven_times_rejected_with_row() {
        let err = parse_observations("time,y1\n0,0\n0.5,0\n0.9,0\n").unwrap_err();
        assert_eq!(err, Error::NotEquidistant { row: 3 });
    }

    #[test]
    fn empty_and_non_finite() {
        assert_eq!(
            parse_observations("time,y1\n").unwrap_err(),
            Error::EmptyFile
        );
        assert_eq!(parse_observations("").unwrap_err(), Error::EmptyFile);
        assert_eq!(
            parse_observations("time,y1\n0,0\n0.5,NaN\n").unwrap_err(),
            Error::NonFinite { row: 2, column: 2 }
        );
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let cfg = RunConfig::load(
            Some("seed = 5\n[estimator]\ngamma = 1.5\n"),
            &["estimator.k=2".into()],
            None,
        )
        .unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.estimator.gamma, 1.5);
        assert_eq!(cfg.estimator.k, 2.0);
        let cfg = RunConfig::load(None, &["output_dir=some/dir".into()], Some("77")).unwrap();
        assert_eq!(cfg.output_dir, PathBuf::from("some/dir"));
        assert_eq!(cfg.seed, 77);
        assert!(matches!(
            RunConfig::load(Some("sed = 5"), &[], None),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::load(None, &["estimator.gama=2".into()], None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn gamma_one_is_a_validation_error() {
        let cfg = RunConfig::load(None, &["estimator.gamma=1".into()], None).unwrap();
        let res = run(Mode::KernelTable, &cfg);
        assert_eq!(exit_code(&res), 2);
        let record = error_record(res.as_ref().unwrap_err());
        assert!(
            record.contains("InvalidRate") && record.contains("gamma > 1"),
            "{record}"
        );
    }

    #[test]
    fn covariance_round_trip() {
        let x = SymMatrixPath::new(
            vec![0.0, 0.1],
            vec![
                SymMatrix::from_packed(2, vec![0.1, 1.0 / 3.0, 0.2]).unwrap(),
                SymMatrix::from_packed(2, vec![std::f64::consts::PI, -1e-300, 7.0]).unwrap(),
            ],
        )
        .unwrap();
        assert_eq!(parse_covariance(&covariance_csv(&x)).unwrap(), x);
    }
}
