//! Batch front end: config ingestion, subcommand dispatch and manifest writing.
//!
//! Every output file carries the SHA-256 of the effective config: JSON files in
//! a `config_sha256` field, CSV files in a leading `# config_sha256=` line.
//! Timings go to `timings.json`, which is the only file that varies between
//! identical runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use num_rational::Rational64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::grassmann::{
    bbf_evaluate, gram_hadamard_audit, random_instance, truncated_expectation_oracle, SignCalibration,
};
use crate::lattice_model::{
    build_params, classify_phase, dispersion, mass_term, weyl_points, HoppingParams, Offset, PhaseLabel,
};
use crate::multiscale::{crossover_scale, decay_audit, Couplings, CutoffSpec, Regime, ZoomGrid, H_STAR_NEG_INF};
use crate::propagator::{schwinger_limits, GridSpec, PropagatorGrid};
use crate::rg_flow::{run_flow, solve_nu_with, FlowSettings, FlowTrajectory, InteractionSpec, NuSolver};
use crate::spinor::Spinor2x2;
use crate::trees::{
    combinatorial_inequality, enumerate_assignments, enumerate_trees, scale_sum_audit, scaling_dimension,
    structural_identities_check, tree_bound, unlabeled_shapes, with_endpoint_kinds, EndpointSet, PowerCounting,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_COMPUTATION: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "weylrg", version, about = "Multiscale analysis of an interacting lattice Weyl semimetal")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides the config's `output`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Overrides `flow.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Band energies along the k3 and k1 axes.
    Band,
    /// Weyl points and velocities.
    Weyl,
    /// Phase label.
    Phase,
    /// Regularized free propagator on the momentum grid.
    Propagator,
    /// Crossover scale and single-scale decay audits.
    Scales,
    /// Running couplings at fixed counterterm.
    Flow,
    /// Counterterm fixed point, paired with the ν = 0 run.
    SolveNu,
    /// Power counting and structural identities on enumerated trees.
    BoundsCheck,
    /// Tree scale sums.
    Trees,
    /// Interpolation formula against the cumulant oracle, plus Gram audits.
    BbfVerify,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Band => "band",
            Command::Weyl => "weyl",
            Command::Phase => "phase",
            Command::Propagator => "propagator",
            Command::Scales => "scales",
            Command::Flow => "flow",
            Command::SolveNu => "solve-nu",
            Command::BoundsCheck => "bounds-check",
            Command::Trees => "trees",
            Command::BbfVerify => "bbf-verify",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub t: f64,
    pub t_perp: f64,
    pub t_prime: f64,
    /// Exactly one of `r` and `mu`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
}

fn default_kappa() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridBlock {
    #[serde(rename = "L")]
    pub l: usize,
    pub beta: f64,
    #[serde(rename = "M")]
    pub m: u32,
}

impl Default for GridBlock {
    fn default() -> Self {
        GridBlock { l: 4, beta: 8.0, m: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowBlock {
    #[serde(rename = "U")]
    pub u: f64,
    #[serde(rename = "L")]
    pub l: usize,
    pub h_min: i32,
    /// Bare counterterm of the `flow` subcommand.
    pub nu: f64,
    pub eps0: f64,
    pub zoom_n: usize,
    pub nu_damping: f64,
    pub nu_max_iterations: usize,
    pub nu_tolerance: f64,
    pub seed: u64,
}

impl Default for FlowBlock {
    fn default() -> Self {
        let s = NuSolver::default();
        FlowBlock {
            u: 0.0,
            l: 16,
            h_min: -8,
            nu: 0.0,
            eps0: 0.5,
            zoom_n: ZoomGrid::default().n,
            nu_damping: s.damping,
            nu_max_iterations: s.max_iterations,
            nu_tolerance: s.tolerance,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BandBlock {
    pub points: usize,
}

impl Default for BandBlock {
    fn default() -> Self {
        BandBlock { points: 129 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalesBlock {
    /// Regime-1 audit scales; empty selects `h*..=min(h*+4, 0)`.
    pub regime1: Vec<i32>,
    /// Regime-2 audit scales; empty selects `h*-1` down to `h*-5`.
    pub regime2: Vec<i32>,
    pub zoom_n: usize,
}

impl Default for ScalesBlock {
    fn default() -> Self {
        ScalesBlock { regime1: Vec::new(), regime2: Vec::new(), zoom_n: ZoomGrid::default().n }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeChoice {
    Lattice,
    Relativistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointChoice {
    InteractionOnly,
    WithCounterterms,
}

impl From<EndpointChoice> for EndpointSet {
    fn from(e: EndpointChoice) -> Self {
        match e {
            EndpointChoice::InteractionOnly => EndpointSet::InteractionOnly,
            EndpointChoice::WithCounterterms => EndpointSet::WithCounterterms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TreesBlock {
    pub n_max: usize,
    /// External legs of the scale sums.
    pub l: i64,
    pub regime: RegimeChoice,
    pub endpoints: EndpointChoice,
    /// Shallow and deep root floors.
    pub floors: (i32, i32),
    /// Root scale of the trees enumerated by `bounds-check`.
    pub check_root: i32,
    /// External leg counts checked by `bounds-check`.
    pub check_legs: Vec<i64>,
}

impl Default for TreesBlock {
    fn default() -> Self {
        TreesBlock {
            n_max: 4,
            l: 4,
            regime: RegimeChoice::Lattice,
            endpoints: EndpointChoice::InteractionOnly,
            floors: (-6, -8),
            check_root: -2,
            check_legs: vec![2, 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BbfBlock {
    pub instances_s2: usize,
    pub instances_s3: usize,
    pub gram_audits: usize,
    pub sites: usize,
    pub max_fields: usize,
    pub gram_rows: usize,
    pub gram_dim: usize,
    pub tolerance: f64,
}

impl Default for BbfBlock {
    fn default() -> Self {
        BbfBlock {
            instances_s2: 100,
            instances_s3: 20,
            gram_audits: 200,
            sites: 6,
            max_fields: 10,
            gram_rows: 4,
            gram_dim: 6,
            tolerance: 1e-10,
        }
    }
}

/// Full run configuration. Unknown keys are rejected at every level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelBlock,
    #[serde(default)]
    pub grid: GridBlock,
    #[serde(default)]
    pub flow: FlowBlock,
    #[serde(default)]
    pub band: BandBlock,
    #[serde(default)]
    pub scales: ScalesBlock,
    #[serde(default)]
    pub trees: TreesBlock,
    #[serde(default)]
    pub bbf: BbfBlock,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Computation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Computation(_) => EXIT_COMPUTATION,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation error: {m}"),
            CliError::Computation(m) => write!(f, "computation error: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParams(_)
            | Error::Configuration(_)
            | Error::SizeLimit(_)
            | Error::InconsistentAssignment(_)
            | Error::TimeOutOfWindow { .. } => CliError::Validation(e.to_string()),
            _ => CliError::Computation(e.to_string()),
        }
    }
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{field}: {msg}"))
}

impl RunConfig {
    /// Parses and validates.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg = Self::parse(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses without the precondition checks.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Validation(e.to_string()))
    }

    pub fn params(&self) -> Result<HoppingParams, CliError> {
        let m = &self.model;
        let offset = match (m.r, m.mu) {
            (Some(r), None) => Offset::R(r),
            (None, Some(mu)) => Offset::Mu(mu),
            _ => return Err(invalid("model", "exactly one of `r` and `mu` is required")),
        };
        let mut p = build_params(m.t, m.t_perp, m.t_prime, offset, self.flow.u).map_err(|e| invalid("model", e))?;
        if !(m.kappa.is_finite() && m.kappa > 0.0) {
            return Err(invalid("model.kappa", format!("must be positive, got {}", m.kappa)));
        }
        p.kappa = m.kappa;
        Ok(p)
    }

    /// Checks every block against the preconditions of the routines it feeds;
    /// returns the model parameters.
    pub fn validate(&self) -> Result<HoppingParams, CliError> {
        let p = self.params()?;
        GridSpec::new(self.grid.l, self.grid.beta, self.grid.m).map_err(|e| invalid("grid", e))?;
        let f = &self.flow;
        if !f.u.is_finite() {
            return Err(invalid("flow.U", "must be finite"));
        }
        if f.l < 2 {
            return Err(invalid("flow.L", format!("must be at least 2, got {}", f.l)));
        }
        if f.h_min > 0 {
            return Err(invalid("flow.h_min", format!("must be <= 0, got {}", f.h_min)));
        }
        if !(f.eps0 > 0.0) {
            return Err(invalid("flow.eps0", "must be positive"));
        }
        if f.zoom_n < 4 || self.scales.zoom_n < 4 {
            return Err(invalid("flow.zoom_n / scales.zoom_n", "need at least 4 points per axis"));
        }
        if !(f.nu_damping > 0.0 && f.nu_damping <= 1.0) {
            return Err(invalid("flow.nu_damping", "must lie in (0, 1]"));
        }
        if !(f.nu_tolerance > 0.0) || f.nu_max_iterations == 0 {
            return Err(invalid("flow.nu_tolerance / nu_max_iterations", "must be positive"));
        }
        if !f.nu.is_finite() {
            return Err(invalid("flow.nu", "must be finite"));
        }
        if self.band.points < 2 {
            return Err(invalid("band.points", "need at least 2 points"));
        }
        let t = &self.trees;
        if t.n_max == 0 || t.l < 2 || t.l % 2 != 0 {
            return Err(invalid("trees", "need n_max >= 1 and even l >= 2"));
        }
        if t.floors.0 < t.floors.1 || t.floors.0 > 0 {
            return Err(invalid("trees.floors", "need 0 >= shallow >= deep"));
        }
        if t.check_root > 0 || t.check_legs.iter().any(|&l| l < 2 || l % 2 != 0) {
            return Err(invalid("trees.check_root / check_legs", "need root <= 0 and even leg counts >= 2"));
        }
        let b = &self.bbf;
        if b.sites == 0 || b.max_fields < 6 || !(b.tolerance > 0.0) || b.gram_rows == 0 || b.gram_dim == 0 {
            return Err(invalid("bbf", "need sites >= 1, max_fields >= 6, positive tolerance and Gram sizes"));
        }
        Ok(p)
    }

    fn flow_settings(&self) -> FlowSettings {
        let mut s = FlowSettings::with_l(self.flow.l);
        s.eps0 = self.flow.eps0;
        s.zoom.n = self.flow.zoom_n;
        s
    }

    fn solver(&self) -> NuSolver {
        NuSolver {
            damping: self.flow.nu_damping,
            max_iterations: self.flow.nu_max_iterations,
            tolerance: self.flow.nu_tolerance,
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects the files of one run before writing them.
struct Outputs {
    hash: String,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn json(&mut self, name: &str, payload: Value) -> Result<(), CliError> {
        let mut obj = serde_json::Map::new();
        obj.insert("config_sha256".into(), Value::String(self.hash.clone()));
        match payload {
            Value::Object(m) => obj.extend(m),
            other => {
                obj.insert("data".into(), other);
            }
        }
        let mut text = serde_json::to_string_pretty(&Value::Object(obj)).map_err(|e| CliError::Computation(e.to_string()))?;
        text.push('\n');
        self.files.push((name.into(), text.into_bytes()));
        Ok(())
    }

    fn csv(&mut self, name: &str, write: impl FnOnce(&mut Vec<u8>) -> crate::Result<()>) -> Result<(), CliError> {
        let mut buf = format!("# config_sha256={}\n", self.hash).into_bytes();
        write(&mut buf)?;
        self.files.push((name.into(), buf));
        Ok(())
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<Value, CliError> {
    serde_json::to_value(v).map_err(|e| CliError::Computation(e.to_string()))
}

/// Parses `argv` (including the program name), runs the subcommand and returns
/// the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_VALIDATION,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(dir) => {
            log::info!("wrote outputs to {}", dir.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("weylrg {}: {e}", cli.command.name());
            e.exit_code()
        }
    }
}

/// Loads the config, runs the subcommand and writes outputs, manifest and timings.
pub fn run(cli: &Cli) -> Result<PathBuf, CliError> {
    let started = Instant::now();
    let path = cli.config.as_ref().ok_or_else(|| CliError::Validation("--config PATH is required".into()))?;
    let text = fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let mut cfg = RunConfig::parse(&text)?;
    let p = cfg.validate()?;
    if let Some(seed) = cli.seed {
        cfg.flow.seed = seed;
    }
    if cli.threads == 0 {
        return Err(invalid("--threads", "must be at least 1"));
    }
    let out_dir = cli.out.clone().unwrap_or_else(|| cfg.output.clone());
    // the output location does not change results, so it stays out of the hash
    cfg.output = PathBuf::from("");
    let mut canonical = serde_json::to_string_pretty(&cfg).map_err(|e| CliError::Computation(e.to_string()))?;
    canonical.push('\n');
    let hash = sha256_hex(canonical.as_bytes());
    let mut outputs = Outputs { hash: hash.clone(), files: vec![("config.json".into(), canonical.into_bytes())] };

    let compute_started = Instant::now();
    execute(cli.command, &cfg, &p, cli.threads, &mut outputs)?;
    let compute_seconds = compute_started.elapsed().as_secs_f64();

    fs::create_dir_all(&out_dir).map_err(|e| CliError::Computation(format!("{}: {e}", out_dir.display())))?;
    let mut listing = Vec::new();
    for (name, bytes) in &outputs.files {
        write_file(&out_dir.join(name), bytes)?;
        listing.push(json!({ "file": name, "sha256": sha256_hex(bytes) }));
    }
    let manifest = json!({
        "tool": "weylrg",
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": cli.command.name(),
        "config_sha256": hash,
        "seed": cfg.flow.seed,
        "outputs": listing,
    });
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Computation(e.to_string()))?;
    text.push('\n');
    write_file(&out_dir.join("manifest.json"), text.as_bytes())?;
    let timings = json!({
        "config_sha256": hash,
        "threads": cli.threads,
        "compute_seconds": compute_seconds,
        "total_seconds": started.elapsed().as_secs_f64(),
    });
    write_file(&out_dir.join("timings.json"), format!("{timings:#}\n").as_bytes())?;
    Ok(out_dir)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Computation(format!("{}: {e}", path.display())))
}

fn execute(cmd: Command, cfg: &RunConfig, p: &HoppingParams, threads: usize, out: &mut Outputs) -> Result<(), CliError> {
    match cmd {
        Command::Band => band(cfg, p, out),
        Command::Weyl => weyl(p, out),
        Command::Phase => phase(p, out),
        Command::Propagator => propagator(cfg, p, out),
        Command::Scales => scales(cfg, p, out),
        Command::Flow => flow(cfg, p, out),
        Command::SolveNu => solve(cfg, p, out),
        Command::BoundsCheck => bounds_check(cfg, out),
        Command::Trees => trees(cfg, p, out),
        Command::BbfVerify => bbf_verify(cfg, threads, out),
    }
}

fn band(cfg: &RunConfig, p: &HoppingParams, out: &mut Outputs) -> Result<(), CliError> {
    let n = cfg.band.points;
    let mut rows: Vec<(&str, [f64; 3])> = Vec::with_capacity(2 * n);
    for i in 0..n {
        let s = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64;
        rows.push(("k3", [0.0, 0.0, s]));
    }
    for i in 0..n {
        let s = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64;
        rows.push(("k1", [s, 0.0, 0.0]));
    }
    let (mut min_gap, mut at) = (f64::INFINITY, [0.0; 3]);
    for (_, k) in &rows {
        let e = dispersion(*k, p);
        if e < min_gap {
            min_gap = e;
            at = *k;
        }
    }
    out.csv("band.csv", |w| {
        use std::io::Write;
        writeln!(w, "axis,k1,k2,k3,mass,lower,upper")?;
        for (axis, k) in &rows {
            let e = dispersion(*k, p);
            writeln!(w, "{axis},{:e},{:e},{:e},{:e},{:e},{:e}", k[0], k[1], k[2], mass_term(*k, p), -e, e)?;
        }
        Ok(())
    })?;
    out.json(
        "band.json",
        json!({ "phase": classify_phase(p).as_str(), "points_per_axis": n, "min_upper_band": min_gap, "min_at": at }),
    )
}

fn weyl(p: &HoppingParams, out: &mut Outputs) -> Result<(), CliError> {
    let phase = classify_phase(p);
    let payload = match weyl_points(p) {
        Some(w) => json!({ "p_F": w.p_f, "v0": w.v0, "v30": w.v30, "degenerate": w.degenerate, "phase": phase.as_str() }),
        None => json!({ "p_F": null, "v0": null, "v30": null, "degenerate": false, "phase": phase.as_str() }),
    };
    out.json("weyl.json", payload)
}

fn phase(p: &HoppingParams, out: &mut Outputs) -> Result<(), CliError> {
    let label = classify_phase(p);
    let gap = (label == PhaseLabel::Insulator).then(|| p.t_perp * p.r().abs());
    out.json(
        "phase.json",
        json!({
            "phase": label.as_str(),
            "r": p.r(),
            "gap_ratio": p.gap_ratio(),
            "weyl_points": to_value(&weyl_points(p))?,
            "gap": gap,
        }),
    )
}

fn propagator(cfg: &RunConfig, p: &HoppingParams, out: &mut Outputs) -> Result<(), CliError> {
    let grid = GridSpec::new(cfg.grid.l, cfg.grid.beta, cfg.grid.m)?;
    let table = PropagatorGrid::build(grid, p)?;
    let (plus, minus) = schwinger_limits([0, 0, 0], &grid, p)?;
    let jump_error = (plus - minus - Spinor2x2::identity()).max_abs();
    out.csv("propagator.csv", |w| table.write_csv(w))?;
    out.json(
        "propagator.json",
        json!({ "grid": to_value(&grid)?, "momenta": table.values.len(), "equal_time_jump_error": jump_error }),
    )
}

fn scales(cfg: &RunConfig, p: &HoppingParams, out: &mut Outputs) -> Result<(), CliError> {
    let cutoff = CutoffSpec::for_params(p);
    cutoff.validate()?;
    let h_star = crossover_scale(p, &cutoff);
    let zoom = ZoomGrid { n: cfg.scales.zoom_n, ..ZoomGrid::default() };
    let finite = h_star != H_STAR_NEG_INF;
    let r1: Vec<i32> = if !cfg.scales.regime1.is_empty() {
        cfg.scales.regime1.clone()
    } else if finite {
        (h_star..=(h_star + 4).min(0)).rev().collect()
    } else {
        (-4..=0).rev().collect()
    };
    let r2: Vec<i32> = if !cfg.scales.regime2.is_empty() {
        cfg.scales.regime2.clone()
    } else if finite && classify_phase(p) == PhaseLabel::Semimetal {
        (h_star - 5..=h_star - 1).rev().collect()
    } else {
        Vec::new()
    };
    let hs = if finite { h_star } else { i32::MIN + 1 };
    let mut payload = json!({ "h_star": if finite { Some(h_star) } else { None }, "cutoff": to_value(&cutoff)? });
    if r1.len() >= 2 {
        let rep = decay_audit(&r1, hs, &Couplings::lattice_initial(p), p, &cutoff, &zoom)?;
        out.csv("scales_regime1.csv", |w| rep.write_csv(w))?;
        payload["regime1"] = to_value(&rep)?;
    }
    if r2.len() >= 2 {
        let rep = decay_audit(&r2, hs, &Couplings::relativistic_initial(p), p, &cutoff, &zoom)?;
        out.csv("scales_regime2.csv", |w| rep.write_csv(w))?;
        payload["regime2"] = to_value(&rep)?;
    }
    out.json("scales.json", payload)
}

fn flow_summary(traj: &FlowTrajectory) -> Result<Value, CliError> {
    let minimizers = if traj.p_f.is_some() { Some(traj.dressed_minimizers()) } else { None };
    Ok(json!({
        "h_star": traj.h_star,
        "h_min": traj.h_min,
        "nu": traj.nu,
        "p_F": traj.p_f,
        "gap": traj.gap,
        "termination": to_value(&traj.termination)?,
        "final": to_value(&traj.final_couplings())?,
        "max_beta_magnitude": traj.max_beta_magnitude(),
        "dressed_minimizers": minimizers,
    }))
}

fn flow(cfg: &RunConfig, p: &HoppingParams, out: &mut Outputs) -> Result<(), CliError> {
    let inter = InteractionSpec::from_params(p)?;
    let traj = run_flow(p, &inter, cfg.flow.nu, cfg.flow.h_min, &cfg.flow_settings())?;
    out.csv("flow.csv", |w| traj.write_csv(w))?;
    out.json("flow.json", flow_summary(&traj)?)
}

fn solve(cfg: &RunConfig, p: &HoppingParams, out: &mut Outputs) -> Result<(), CliError> {
    let inter = InteractionSpec::from_params(p)?;
    let settings = cfg.flow_settings();
    let (nu, solved) = solve_nu_with(p, &inter, cfg.flow.h_min, &settings, &cfg.solver())?;
    let bare = solved.with_nu(0.0);
    let last = |t: &FlowTrajectory| t.final_couplings().nu.abs();
    let separation = if last(&solved) > 0.0 { last(&bare) / last(&solved) } else { f64::INFINITY };
    out.csv("solve_nu.csv", |w| solved.write_csv(w))?;
    out.csv("solve_nu_bare.csv", |w| bare.write_csv(w))?;
    out.json(
        "solve_nu.json",
        json!({
            "nu": nu,
            "solved": flow_summary(&solved)?,
            "bare": flow_summary(&bare)?,
            "final_nu_separation": separation,
        }),
    )
}

fn power_counting(choice: RegimeChoice, h_star: i32) -> PowerCounting {
    match choice {
        RegimeChoice::Lattice => PowerCounting::lattice(),
        RegimeChoice::Relativistic => PowerCounting::relativistic(h_star),
    }
}

fn bounds_check(cfg: &RunConfig, out: &mut Outputs) -> Result<(), CliError> {
    let t = &cfg.trees;
    let mut dims = Vec::new();
    for l in [2i64, 4, 6, 8] {
        let r1 = scaling_dimension(Regime::Lattice, l)?;
        let r2 = scaling_dimension(Regime::Relativistic, l)?;
        let ok = r1 == Rational64::new(7, 2) - Rational64::new(5 * l, 4) && r2 == Rational64::new(4 - 3 * l / 2, 1);
        dims.push(json!({ "l": l, "regime1": r1.to_string(), "regime2": r2.to_string(), "exact": ok }));
    }
    // every vertex scale lies below h*, so all of them sit in the relativistic regime
    let rel = PowerCounting::relativistic(2);
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for n in 1..=t.n_max {
        let (mut trees, mut assignments, mut velocity_ok, mut identities_ok) = (0usize, 0usize, true, true);
        for tree in enumerate_trees(n, t.check_root)? {
            for labeled in with_endpoint_kinds(&tree, t.endpoints.into()) {
                trees += 1;
                for &l in &t.check_legs {
                    for a in enumerate_assignments(&labeled, l)? {
                        assignments += 1;
                        let b = tree_bound(&labeled, &a, &rel)?;
                        if b.velocity != Rational64::new(l, 2) - 1 {
                            velocity_ok = false;
                        }
                        if !structural_identities_check(&labeled, &a)?.all_hold() {
                            identities_ok = false;
                        }
                    }
                }
            }
        }
        if !velocity_ok || !identities_ok {
            failures.push(n);
        }
        rows.push(json!({
            "n": n,
            "trees": trees,
            "assignments": assignments,
            "velocity_exponent_ok": velocity_ok,
            "identities_ok": identities_ok,
        }));
    }
    let dims_ok = dims.iter().all(|d| d["exact"] == Value::Bool(true));
    out.json(
        "bounds_check.json",
        json!({ "root_scale": t.check_root, "scaling_dimensions": dims, "rows": rows, "pass": dims_ok && failures.is_empty() }),
    )?;
    if !dims_ok || !failures.is_empty() {
        return Err(CliError::Computation(format!("bounds check failed for n in {failures:?}")));
    }
    Ok(())
}

fn trees(cfg: &RunConfig, p: &HoppingParams, out: &mut Outputs) -> Result<(), CliError> {
    let t = &cfg.trees;
    let cutoff = CutoffSpec::for_params(p);
    let h_star = crossover_scale(p, &cutoff);
    let pc = power_counting(t.regime, if h_star == H_STAR_NEG_INF { 0 } else { h_star });
    let v30 = weyl_points(p).map_or(1.0, |w| w.v30);
    let report = scale_sum_audit(t.n_max, t.l, &pc, t.endpoints.into(), t.floors, v30)?;
    let mut combinatorics = Vec::new();
    for n in 1..=t.n_max.min(5) {
        combinatorics.push(json!({
            "n": n,
            "shapes": unlabeled_shapes(n)?.len(),
            "combinatorial_sum": combinatorial_inequality(n)?,
        }));
    }
    out.csv("trees.csv", |w| {
        use std::io::Write;
        writeln!(w, "n,sum,sum_shallow,floor_change,fitted_c,root_c")?;
        for r in &report.rows {
            writeln!(w, "{},{:e},{:e},{:e},{:e},{:e}", r.n, r.sum, r.sum_shallow, r.floor_change, r.fitted_c, r.root_c)?;
        }
        Ok(())
    })?;
    out.json("trees.json", json!({ "report": to_value(&report)?, "combinatorics": combinatorics }))
}

#[derive(Debug, Clone, Serialize)]
struct BbfRow {
    s: usize,
    index: usize,
    fields: usize,
    bbf: f64,
    oracle: f64,
    abs_diff: f64,
}

fn bbf_verify(cfg: &RunConfig, threads: usize, out: &mut Outputs) -> Result<(), CliError> {
    let b = &cfg.bbf;
    let calibration = SignCalibration::calibrate()?;
    // instances are drawn serially so that the thread count cannot change them
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.flow.seed);
    let mut jobs = Vec::new();
    for (s, count) in [(2usize, b.instances_s2), (3, b.instances_s3)] {
        for index in 0..count {
            jobs.push((s, index, random_instance(&mut rng, s, b.sites, b.max_fields)?));
        }
    }
    let chunk = jobs.len().div_ceil(threads).max(1);
    let results: Vec<crate::Result<BbfRow>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|(s, index, (clusters, cov))| {
                            let bbf = bbf_evaluate(clusters, cov, &calibration)?;
                            let oracle = truncated_expectation_oracle(clusters, cov)?;
                            let fields = clusters.iter().map(|c| c.fields.len()).sum();
                            Ok(BbfRow { s: *s, index: *index, fields, bbf, oracle, abs_diff: (bbf - oracle).abs() })
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("bbf worker panicked")).collect()
    });
    let rows: Vec<BbfRow> = results.into_iter().collect::<crate::Result<_>>()?;

    let mut gram = Vec::with_capacity(b.gram_audits);
    for _ in 0..b.gram_audits {
        let mut draw = || -> Vec<Vec<f64>> {
            use rand::Rng;
            (0..b.gram_rows).map(|_| (0..b.gram_dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
        };
        let (f, g) = (draw(), draw());
        gram.push(gram_hadamard_audit(&f, &g)?);
    }
    let max_diff = rows.iter().map(|r| r.abs_diff).fold(0.0, f64::max);
    let gram_hold = gram.iter().all(|g| g.holds);
    let min_margin = gram.iter().map(|g| g.margin).fold(f64::INFINITY, f64::min);
    out.csv("bbf.csv", |w| {
        use std::io::Write;
        writeln!(w, "s,index,fields,bbf,oracle,abs_diff")?;
        for r in &rows {
            writeln!(w, "{},{},{},{:e},{:e},{:e}", r.s, r.index, r.fields, r.bbf, r.oracle, r.abs_diff)?;
        }
        Ok(())
    })?;
    let pass = max_diff <= b.tolerance && gram_hold;
    out.json(
        "bbf.json",
        json!({
            "calibration_sign": calibration.sign(),
            "instances": rows.len(),
            "max_abs_diff": max_diff,
            "tolerance": b.tolerance,
            "gram_audits": gram.len(),
            "gram_all_hold": gram_hold,
            "gram_min_margin": min_margin,
            "pass": pass,
        }),
    )?;
    if !pass {
        return Err(CliError::Computation(format!(
            "interpolation check failed: max difference {max_diff:e}, Gram inequality holds: {gram_hold}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const P_STAR: &str = r#"{"model": {"t": 1.0, "t_perp": 0.5, "t_prime": 2.0, "r": 0.5}}"#;

    #[test]
    fn config_defaults_and_strictness() {
        let cfg = RunConfig::from_json(P_STAR).unwrap();
        assert_eq!(cfg.grid, GridBlock::default());
        assert_eq!(cfg.flow.l, 16);
        let bad = r#"{"model": {"t": 1.0, "t_perp": 0.5, "t_prime": 2.0, "r": 0.5, "colour": 1}}"#;
        match RunConfig::from_json(bad) {
            Err(CliError::Validation(m)) => assert!(m.contains("colour"), "{m}"),
            other => panic!("expected validation error, got {other:?}"),
        }
        let both = r#"{"model": {"t": 1.0, "t_perp": 0.5, "t_prime": 2.0, "r": 0.5, "mu": 1.0}}"#;
        assert!(matches!(RunConfig::from_json(both), Err(CliError::Validation(_))));
        let grid = r#"{"model": {"t": 1.0, "t_perp": 0.5, "t_prime": 2.0, "r": 0.5}, "grid": {"beta": -1.0}}"#;
        match RunConfig::from_json(grid) {
            Err(CliError::Validation(m)) => assert!(m.starts_with("grid:"), "{m}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(CliError::from(Error::InvalidParams("x".into())).exit_code(), EXIT_VALIDATION);
        assert_eq!(CliError::from(Error::SignLoss { h: 0, z: -1.0 }).exit_code(), EXIT_COMPUTATION);
    }

    #[test]
    fn unknown_subcommand_is_a_usage_error() {
        assert_eq!(dispatch(["weylrg", "frobnicate"]), EXIT_VALIDATION);
        assert_eq!(dispatch(["weylrg", "weyl"]), EXIT_VALIDATION);
    }
}
