//! Batch driver: reads a TOML experiment config, validates it, runs one of
//! the `solve`, `study`, `a2` or `cs-check` pipelines and writes CSV/JSON
//! reports into an output directory.
//!
//! Exit codes: 0 ok, 2 usage (bad config or input), 3 numeric failure. On
//! failure `error.json` is written to the output directory when possible.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mdfem::cs_extension::{
    cs_constant, energy_identity, symbol_report, ExtensionProblem, FourierMode, FourierSeries, SymbolReport,
};
use mdfem::measure::{MeasureData, Support};
use mdfem::mesh::{generate_disk_mesh, generate_square_mesh, BoundaryPartitionRule, Domain, Mesh};
use mdfem::regularity::{
    default_k_grid, distance_power_family, embedding_delta_probe, regularity_study, tabulate_sequence, StudyPlan,
    DEFAULT_BETAS, DEFAULT_RATIO_CAP,
};
use mdfem::solver::{Discretization, ProblemSpec, SolverOptions};
use mdfem::weight::{a2_constant_estimate, radial_a2_product, WeightSpec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Solve,
    Study,
    A2,
    CsCheck,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Study => "study",
            Command::A2 => "a2",
            Command::CsCheck => "cs-check",
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] mdfem::Error),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numeric() => EXIT_NUMERIC,
            _ => EXIT_USAGE,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Core(e) if e.is_numeric() => "numeric",
            CliError::Core(_) => "invalid_input",
            CliError::Io { .. } => "io",
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub domain: Domain,
    /// Target mesh size of the coarsest mesh.
    pub h: f64,
    pub partition: BoundaryPartitionRule,
    pub alpha: f64,
    pub gamma: f64,
    pub mu1: MeasureData,
    pub mu2: MeasureData,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig {
            domain: Domain::Disk { radius: 1.0 },
            h: 0.05,
            partition: BoundaryPartitionRule::FullDirichlet,
            alpha: 0.0,
            gamma: 2.0,
            mu1: MeasureData::zero(Support::Interior),
            mu2: MeasureData::zero(Support::Gamma2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    pub n_list: Vec<u32>,
    pub t_grid: Vec<f64>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig { n_list: vec![4], t_grid: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct A2Config {
    pub alphas: Vec<f64>,
    pub balls: usize,
}

impl Default for A2Config {
    fn default() -> Self {
        A2Config { alphas: vec![0.0, 0.25, 0.5, 0.75], balls: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsConfig {
    pub s_list: Vec<f64>,
    pub k_list: Vec<u32>,
    /// `[n_x, n_y]` pairs.
    pub resolutions: Vec<(usize, usize)>,
    pub height_factor: f64,
    /// Data for the energy identity check.
    pub energy_data: FourierSeries,
}

impl Default for CsConfig {
    fn default() -> Self {
        CsConfig {
            s_list: vec![0.25, 0.5, 0.75],
            k_list: vec![1, 2, 3, 4],
            resolutions: vec![(256, 128)],
            height_factor: 8.0,
            energy_data: FourierSeries {
                constant: 0.0,
                modes: vec![FourierMode { k: 1, cos: 1.0, sin: 0.0 }, FourierMode { k: 3, cos: 0.0, sin: 0.5 }],
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Must match the subcommand on the command line when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subcommand: Option<Command>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub solve: SolveConfig,
    #[serde(default)]
    pub study: StudyPlan,
    #[serde(default)]
    pub a2: A2Config,
    #[serde(default)]
    pub cs: CsConfig,
}

fn default_threads() -> usize {
    1
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub seed: Option<u64>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<ExperimentConfig> {
        toml::from_str(text).map_err(|e| usage(format!("config schema violation: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn apply(&mut self, command: Command, o: &Overrides) -> CliResult<()> {
        if let Some(c) = self.subcommand {
            if c != command {
                return Err(usage(format!("config is for `{}`, invoked as `{}`", c.name(), command.name())));
            }
        }
        self.subcommand = Some(command);
        if let Some(t) = o.threads {
            self.threads = t;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(out) = &o.out {
            self.output_dir = Some(out.clone());
        }
        Ok(())
    }

    /// Range checks that need no mesh or solve; run before any computation.
    pub fn validate(&self, command: Command) -> CliResult<()> {
        let p = &self.problem;
        if self.threads == 0 {
            return Err(usage("threads must be at least 1"));
        }
        if !(p.gamma > 1.0) || !p.gamma.is_finite() {
            return Err(usage(format!("gamma must satisfy γ > 1, got {}", p.gamma)));
        }
        if !(p.alpha > -1.0 && p.alpha < 1.0) {
            return Err(usage(format!("alpha must lie in (−1, 1), got {}", p.alpha)));
        }
        if !(p.h > 0.0) || !p.h.is_finite() {
            return Err(usage(format!("mesh size h must be positive, got {}", p.h)));
        }
        if let Domain::Disk { radius } = p.domain {
            if !(radius > 0.0) || !radius.is_finite() {
                return Err(usage(format!("disk radius must be positive, got {radius}")));
            }
        }
        if p.mu1.support != Support::Interior || p.mu2.support != Support::Gamma2 {
            return Err(usage("mu1 must have support \"interior\" and mu2 support \"gamma2\""));
        }
        if !(self.solver.newton_rtol > 0.0) || !(self.solver.cg_rtol > 0.0) || self.solver.max_newton == 0 {
            return Err(usage("solver tolerances must be positive and max_newton at least 1"));
        }
        match command {
            Command::Solve => {
                if self.solve.n_list.is_empty() || self.solve.n_list.contains(&0) {
                    return Err(usage("solve.n_list must be nonempty with entries >= 1"));
                }
                if let Some(t) = self.solve.t_grid.iter().find(|t| !(**t >= 0.0)) {
                    return Err(usage(format!("solve.t_grid entries must be >= 0, got {t}")));
                }
                // The level count is irrelevant on a fixed mesh.
                let plan = StudyPlan { levels: self.study.levels.max(3), ..self.study.clone() };
                plan.validate(p.alpha).map_err(|e| usage(e.to_string()))?;
            }
            Command::Study => self.study.validate(p.alpha).map_err(|e| usage(e.to_string()))?,
            Command::A2 => {
                if self.a2.balls == 0 {
                    return Err(usage("a2.balls must be at least 1"));
                }
                if let Some(a) = self.a2.alphas.iter().find(|a| !(**a > -1.0 && **a < 1.0)) {
                    return Err(usage(format!("a2.alphas entries must lie in (−1, 1), got {a}")));
                }
            }
            Command::CsCheck => {
                let cs = &self.cs;
                if let Some(s) = cs.s_list.iter().find(|s| !(**s > 0.0 && **s < 1.0)) {
                    return Err(usage(format!("cs.s_list entries must lie in (0, 1), got {s}")));
                }
                if cs.s_list.is_empty() || cs.resolutions.is_empty() || !cs.k_list.iter().any(|&k| k > 0) {
                    return Err(usage("cs needs nonempty s_list, resolutions and a nonzero k"));
                }
                if !(cs.height_factor > 0.0) {
                    return Err(usage("cs.height_factor must be positive"));
                }
                let k_max = cs.k_list.iter().chain(cs.energy_data.modes.iter().map(|m| &m.k)).max().copied();
                for &(n_x, n_y) in &cs.resolutions {
                    if n_x < 4 || n_y < 4 || 4 * k_max.unwrap_or(0) as usize > n_y {
                        return Err(usage(format!("cs resolution ({n_x}, {n_y}) is too coarse for the modes")));
                    }
                }
            }
        }
        Ok(())
    }

    fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

/// Loads, validates and runs; returns the process exit code.
pub fn execute(command: Command, config_path: &Path, overrides: &Overrides) -> i32 {
    let fallback_out = overrides.out.clone();
    let mut out_dir = fallback_out.clone();
    let result = ExperimentConfig::load(config_path).and_then(|mut cfg| {
        cfg.apply(command, overrides)?;
        out_dir = Some(cfg.output_dir());
        cfg.validate(command)?;
        run(command, &cfg)
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let code = e.exit_code();
            log::error!("{e}");
            eprintln!("mdfem {}: {e}", command.name());
            if let Some(dir) = out_dir.or(fallback_out) {
                let doc = serde_json::json!({
                    "subcommand": command.name(),
                    "kind": e.kind(),
                    "exit_code": code,
                    "message": e.to_string(),
                });
                let _ = std::fs::create_dir_all(&dir)
                    .and_then(|_| std::fs::write(dir.join("error.json"), doc.to_string()));
            }
            code
        }
    }
}

/// Runs a validated config inside a thread pool of the configured size.
pub fn run(command: Command, cfg: &ExperimentConfig) -> CliResult<()> {
    let dir = cfg.output_dir();
    std::fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
    let resolved = toml::to_string(cfg).map_err(|e| usage(format!("cannot serialize config: {e}")))?;
    write(&dir.join("config.resolved.toml"), &resolved)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| usage(format!("thread pool: {e}")))?;
    pool.install(|| match command {
        Command::Solve => run_solve(cfg, &dir),
        Command::Study => run_study(cfg, &dir),
        Command::A2 => run_a2(cfg, &dir),
        Command::CsCheck => run_cs(cfg, &dir),
    })
}

fn io(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io { path: path.to_path_buf(), source }
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| io(path, e))
}

fn coarse_mesh(p: &ProblemConfig) -> CliResult<Mesh> {
    Ok(match p.domain {
        Domain::Disk { radius } => generate_disk_mesh(radius, p.h, &p.partition)?,
        Domain::UnitSquare => generate_square_mesh(p.h, &p.partition)?,
    })
}

fn problem_spec(p: &ProblemConfig) -> CliResult<ProblemSpec> {
    let mesh = coarse_mesh(p)?;
    Ok(ProblemSpec::new(p.gamma, p.alpha, &mesh, p.mu1.clone(), p.mu2.clone(), p.partition)?)
}

fn run_solve(cfg: &ExperimentConfig, dir: &Path) -> CliResult<()> {
    let spec = problem_spec(&cfg.problem)?;
    let disc = Discretization::new(spec, cfg.solver)?;
    let sols = disc.solve_sequence(&cfg.solve.n_list)?;
    let report = tabulate_sequence(&disc, &sols, &cfg.study, &cfg.solve.t_grid)?;
    write(&dir.join("solve.csv"), &report.to_csv())?;
    write(&dir.join("solve.json"), &report.to_json()?)?;
    write(&dir.join("mesh.json"), &disc.mesh().to_json()?)?;
    let last = sols.last().expect("n_list is nonempty");
    write(&dir.join("solution.json"), &last.to_json("mesh.json")?)?;
    log::info!("solve: {} solutions on {} vertices", sols.len(), disc.mesh().vertex_count());
    Ok(())
}

fn run_study(cfg: &ExperimentConfig, dir: &Path) -> CliResult<()> {
    let spec = problem_spec(&cfg.problem)?;
    let report = regularity_study(&spec, cfg.solver, &cfg.study)?;
    let fields = distance_power_family(&spec.mesh, &DEFAULT_BETAS);
    let probe = embedding_delta_probe(spec.alpha, &spec.mesh, &fields, &default_k_grid(), DEFAULT_RATIO_CAP)?;
    write(&dir.join("regularity.csv"), &report.to_csv())?;
    let doc = serde_json::json!({
        "report": serde_json::from_str::<serde_json::Value>(&report.to_json()?).map_err(mdfem::Error::from)?,
        "embedding_probe": probe,
    });
    write(&dir.join("regularity.json"), &doc.to_string())?;
    Ok(())
}

fn run_a2(cfg: &ExperimentConfig, dir: &Path) -> CliResult<()> {
    let domain = cfg.problem.domain;
    let mut csv = String::from("alpha,constant_estimate,radial_product,radial_exact,balls,worst_cx,worst_cy,worst_r\n");
    let mut reports = Vec::new();
    for &alpha in &cfg.a2.alphas {
        let spec = WeightSpec::new(alpha, domain)?;
        let r = a2_constant_estimate(&spec, cfg.a2.balls, cfg.seed)?;
        let radial = radial_a2_product(alpha, domain.scale());
        let exact = 1.0 / (1.0 - alpha * alpha);
        let b = r.worst_ball;
        let _ = writeln!(
            csv,
            "{alpha},{},{radial},{exact},{},{},{},{}",
            r.constant_estimate, r.ball_count, b.cx, b.cy, b.r
        );
        reports.push(serde_json::json!({ "report": r, "radial_product": radial, "radial_exact": exact }));
    }
    write(&dir.join("a2.csv"), &csv)?;
    write(&dir.join("a2.json"), &serde_json::Value::Array(reports).to_string())?;
    Ok(())
}

fn run_cs(cfg: &ExperimentConfig, dir: &Path) -> CliResult<()> {
    let cs = &cfg.cs;
    let mut rows = Vec::new();
    let mut energy_csv = String::from("s,n_x,n_y,H,energy,pairing,rel_gap\n");
    let mut summary = Vec::new();
    for &s in &cs.s_list {
        let start = Instant::now();
        let report = symbol_report(&[s], &cs.k_list, &cs.resolutions, cs.height_factor)?;
        let mut energies = Vec::new();
        for &(n_x, n_y) in &cs.resolutions {
            let p = ExtensionProblem::new(s, cs.energy_data.clone(), None, n_x, n_y)?;
            let (energy, pairing) = energy_identity(&p)?;
            let gap = (energy - pairing).abs() / pairing.abs();
            let _ = writeln!(energy_csv, "{s},{n_x},{n_y},{},{energy},{pairing},{gap}", p.strip_height());
            energies.push(serde_json::json!({ "n_x": n_x, "n_y": n_y, "energy": energy, "pairing": pairing, "rel_gap": gap }));
        }
        let fitted: Vec<_> = cs
            .resolutions
            .iter()
            .map(|&res| {
                let r = report.rows_for(s, res);
                let worst = r.iter().map(|x| x.rel_error).fold(0.0, f64::max);
                serde_json::json!({ "n_x": res.0, "n_y": res.1, "fitted_c": r[0].fitted_c, "max_rel_error": worst })
            })
            .collect();
        summary.push(serde_json::json!({
            "s": s,
            "cs_constant": cs_constant(s),
            "fits": fitted,
            "energy_identity": energies,
            "seconds": start.elapsed().as_secs_f64(),
        }));
        rows.extend(report.rows);
    }
    write(&dir.join("cs.csv"), &SymbolReport { rows }.to_csv())?;
    write(&dir.join("cs_energy.csv"), &energy_csv)?;
    write(&dir.join("cs.json"), &serde_json::Value::Array(summary).to_string())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml("[problem]\nbeta = 0.5").is_err());
    }

    #[test]
    fn gamma_must_exceed_one() {
        let cfg = ExperimentConfig::from_toml("[problem]\ngamma = 0.5").unwrap();
        let err = cfg.validate(Command::Solve).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_USAGE);
        assert!(err.to_string().contains("γ > 1"), "{err}");
    }

    #[test]
    fn ranges_checked_per_subcommand() {
        let bad_alpha = ExperimentConfig::from_toml("[problem]\nalpha = 1.0").unwrap();
        assert!(bad_alpha.validate(Command::Study).is_err());
        let bad_s = ExperimentConfig::from_toml("[cs]\ns_list = [1.0]").unwrap();
        assert!(bad_s.validate(Command::CsCheck).is_err());
        assert!(bad_s.validate(Command::A2).is_ok());
        let bad_levels = ExperimentConfig::from_toml("[study]\nlevels = 2").unwrap();
        assert!(bad_levels.validate(Command::Study).is_err());
        assert!(bad_levels.validate(Command::Solve).is_ok());
        let bad_holder = ExperimentConfig::from_toml("[study]\nholder_q_grid = [2.0]").unwrap();
        assert!(bad_holder.validate(Command::Solve).is_err());
    }

    #[test]
    fn subcommand_mismatch_is_usage() {
        let mut cfg = ExperimentConfig::from_toml("subcommand = \"a2\"").unwrap();
        let err = cfg.apply(Command::Solve, &Overrides::default()).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_USAGE);
    }

    #[test]
    fn overrides_take_precedence() {
        let mut cfg = ExperimentConfig::from_toml("threads = 4\nseed = 1").unwrap();
        let o = Overrides { out: Some("x".into()), threads: Some(2), seed: Some(9) };
        cfg.apply(Command::A2, &o).unwrap();
        assert_eq!((cfg.threads, cfg.seed, cfg.output_dir()), (2, 9, PathBuf::from("x")));
    }

    #[test]
    fn numeric_errors_map_to_exit_three() {
        let e = CliError::Core(mdfem::Error::Convergence { iterations: 3, last: 1.0, history: vec![] });
        assert_eq!(e.exit_code(), EXIT_NUMERIC);
        assert_eq!(CliError::Core(mdfem::Error::Domain("x".into())).exit_code(), EXIT_USAGE);
    }
}
