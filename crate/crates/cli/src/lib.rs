//! Config-driven experiment harness around the `gpgd` library.
//!
//! A config is flat `key = value` text with dotted keys and `#` comments:
//!
//! ```text
//! problem.n_r = 32
//! problem.n_theta = 64
//! problem.phantom = ring
//! subset.radius = full
//! solver.iters = 500
//! ```
//!
//! Every command builds the problem, does its work in memory and then writes
//! its files one at a time, each through a temporary file that is renamed
//! into place.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use gpgd::bench::{build_problem, default_ring_profile, NoiseModel, PhantomSpec, ProblemInstance, ProblemSpec};
use gpgd::certificate::{certify, fmt_float, CertificateReport};
use gpgd::linop::DENSE_CAP;
use gpgd::solver::{mean_rmsd, run, run_replicates, IterateTrace, Mode, SolverConfig, StepSize};
use gpgd::symmetry::SymmetricSubset;
use gpgd::vector::norm;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("cannot write {path}: {source}")]
    Unwritable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] gpgd::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } => 2,
            CliError::Core(gpgd::Error::Diverged { .. }) => 3,
            CliError::Core(gpgd::Error::TooLarge { .. }) => 4,
            CliError::Unwritable { .. } => 5,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Radius {
    Fixed(usize),
    /// Smallest radius whose shifted view sets cover every angle.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub radius: Radius,
    pub iters: usize,
    pub step: StepSize,
    pub seeds: usize,
    pub seed: u64,
    /// rmsd level reported by `compare`.
    pub tolerance: f64,
    pub out_dir: PathBuf,
    pub record_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: ProblemSpec::default(),
            radius: Radius::Full,
            iters: 200,
            step: StepSize::Auto,
            seeds: 1,
            seed: 0,
            tolerance: 1e-4,
            out_dir: PathBuf::from("out"),
            record_every: 1,
        }
    }
}

const KEYS: &[&str] = &[
    "problem.n_r",
    "problem.n_theta",
    "problem.angle_fraction",
    "problem.rays_per_angle",
    "problem.operator_seed",
    "problem.phantom",
    "problem.phantom.smoothness",
    "problem.phantom.seed",
    "problem.noise",
    "problem.noise.sigma",
    "problem.noise.scale",
    "problem.noise.seed",
    "subset.radius",
    "solver.iters",
    "solver.step",
    "solver.seeds",
    "solver.seed",
    "solver.tolerance",
    "output.dir",
    "output.record_every",
];

struct Entry {
    value: String,
    line: usize,
}

struct Entries<'a> {
    path: &'a str,
    map: BTreeMap<String, Entry>,
}

impl Entries<'_> {
    fn error(&self, line: usize, message: impl Into<String>) -> CliError {
        CliError::Parse {
            path: self.path.to_string(),
            line,
            message: message.into(),
        }
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse()
                .map(Some)
                .map_err(|_| self.error(e.line, format!("{key}: cannot parse {:?}", e.value))),
        }
    }

    fn positive(&self, key: &str, default: usize) -> Result<usize> {
        let v = self.get(key)?.unwrap_or(default);
        if v == 0 {
            return Err(self.error(self.line(key), format!("{key} must be positive")));
        }
        Ok(v)
    }

    fn line(&self, key: &str) -> usize {
        self.map.get(key).map_or(0, |e| e.line)
    }

    fn str(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|e| e.value.as_str())
    }
}

/// Parses config text. `origin` names the source in diagnostics.
pub fn parse_config(text: &str, origin: &str) -> Result<ExperimentConfig> {
    let mut entries = Entries {
        path: origin,
        map: BTreeMap::new(),
    };
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(entries.error(line, format!("expected `key = value`, found {content:?}")));
        };
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(entries.error(line, format!("unknown key {key:?}")));
        }
        if value.is_empty() {
            return Err(entries.error(line, format!("{key} has no value")));
        }
        if let Some(prev) = entries.map.get(key) {
            return Err(entries.error(line, format!("{key} already set on line {}", prev.line)));
        }
        entries.map.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                line,
            },
        );
    }

    let defaults = ExperimentConfig::default();
    let base = &defaults.problem;
    let n_r = entries.positive("problem.n_r", base.n_r)?;
    let n_theta = entries.positive("problem.n_theta", base.n_theta)?;
    let angle_fraction: f64 = entries.get("problem.angle_fraction")?.unwrap_or(base.angle_fraction);
    if !(angle_fraction > 0.0 && angle_fraction <= 1.0) {
        return Err(entries.error(entries.line("problem.angle_fraction"), "problem.angle_fraction must lie in (0, 1]"));
    }

    let phantom = match entries.str("problem.phantom").unwrap_or("ring") {
        "ring" => {
            for key in ["problem.phantom.smoothness", "problem.phantom.seed"] {
                if entries.map.contains_key(key) {
                    return Err(entries.error(entries.line(key), format!("{key} only applies to textured phantoms")));
                }
            }
            PhantomSpec::Ring {
                profile: default_ring_profile(n_r),
            }
        }
        "textured" => PhantomSpec::Textured {
            smoothness: entries.positive("problem.phantom.smoothness", 3)?,
            seed: entries.get("problem.phantom.seed")?.unwrap_or(0),
        },
        other => {
            return Err(entries.error(
                entries.line("problem.phantom"),
                format!("problem.phantom must be ring or textured, found {other:?}"),
            ))
        }
    };

    let noise = match entries.str("problem.noise").unwrap_or("none") {
        "none" => NoiseModel::None,
        "gaussian" => NoiseModel::Gaussian {
            sigma: entries.get("problem.noise.sigma")?.unwrap_or(0.01),
        },
        "poisson" => NoiseModel::Poisson {
            scale: entries.get("problem.noise.scale")?.unwrap_or(1e4),
        },
        other => {
            return Err(entries.error(
                entries.line("problem.noise"),
                format!("problem.noise must be none, gaussian or poisson, found {other:?}"),
            ))
        }
    };

    let radius = match entries.str("subset.radius") {
        None | Some("full") => Radius::Full,
        Some(_) => Radius::Fixed(entries.get("subset.radius")?.unwrap_or(0)),
    };

    let step = match entries.str("solver.step") {
        None | Some("auto") => StepSize::Auto,
        Some(_) => {
            let v: f64 = entries.get("solver.step")?.unwrap_or(0.0);
            if !(v > 0.0 && v.is_finite()) {
                return Err(entries.error(entries.line("solver.step"), "solver.step must be auto or a positive number"));
            }
            StepSize::Fixed(v)
        }
    };

    let tolerance: f64 = entries.get("solver.tolerance")?.unwrap_or(defaults.tolerance);
    if !(tolerance > 0.0) {
        return Err(entries.error(entries.line("solver.tolerance"), "solver.tolerance must be positive"));
    }

    Ok(ExperimentConfig {
        problem: ProblemSpec {
            n_r,
            n_theta,
            angle_fraction,
            rays_per_angle: entries.positive("problem.rays_per_angle", base.rays_per_angle)?,
            phantom,
            noise,
            operator_seed: entries.get("problem.operator_seed")?.unwrap_or(base.operator_seed),
            noise_seed: entries.get("problem.noise.seed")?.unwrap_or(base.noise_seed),
        },
        radius,
        iters: entries.get("solver.iters")?.unwrap_or(defaults.iters),
        step,
        seeds: entries.positive("solver.seeds", defaults.seeds)?,
        seed: entries.get("solver.seed")?.unwrap_or(defaults.seed),
        tolerance,
        out_dir: entries.str("output.dir").map_or(defaults.out_dir, PathBuf::from),
        record_every: entries.positive("output.record_every", defaults.record_every)?,
    })
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text, &path.display().to_string())
}

/// Writes `contents` to `dir/name` through a temporary file in `dir`.
pub fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> Result<PathBuf> {
    let target = dir.join(name);
    let unwritable = |source| CliError::Unwritable {
        path: target.clone(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(unwritable)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(unwritable)?;
    tmp.write_all(contents).map_err(unwritable)?;
    tmp.persist(&target).map_err(|e| unwritable(e.error))?;
    Ok(target)
}

/// Files produced by a command, written in order once everything succeeded.
#[derive(Debug, Default)]
pub struct Outputs {
    pub files: Vec<(String, String)>,
    pub stdout: String,
}

impl Outputs {
    fn file(&mut self, name: &str, contents: String) {
        self.files.push((name.to_string(), contents));
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        self.files
            .iter()
            .map(|(name, contents)| write_atomic(dir, name, contents.as_bytes()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Run,
    Certify,
    Compare,
    Phantom,
}

pub fn execute(command: Command, config: &ExperimentConfig) -> Result<Outputs> {
    match command {
        Command::Run => cmd_run(config),
        Command::Certify => cmd_certify(config),
        Command::Compare => cmd_compare(config),
        Command::Phantom => cmd_phantom(config),
    }
}

fn setup(config: &ExperimentConfig) -> Result<(ProblemInstance, SymmetricSubset)> {
    let problem = build_problem(&config.problem)?;
    let radius = match config.radius {
        Radius::Fixed(r) => r,
        Radius::Full => problem.geometry.coverage_radius(),
    };
    let subset = problem.geometry.subset(radius);
    Ok((problem, subset))
}

fn certificate_for(problem: &ProblemInstance, subset: &SymmetricSubset) -> Result<CertificateReport> {
    if problem.dimension() > DENSE_CAP {
        return Err(gpgd::Error::TooLarge {
            cols: problem.dimension(),
            cap: DENSE_CAP,
        }
        .into());
    }
    Ok(certify(problem, subset)?)
}

fn solver_config(config: &ExperimentConfig) -> SolverConfig {
    SolverConfig {
        step: config.step,
        max_iters: config.iters,
        seed: config.seed,
        record_every: config.record_every,
        x0: None,
    }
}

/// The bound applies to the step `1/L` only.
fn bound_for<'a>(report: &'a CertificateReport, config: &ExperimentConfig, rmsd0: f64) -> Option<impl Fn(usize) -> f64 + 'a> {
    (config.step == StepSize::Auto && !report.is_vacuous()).then(move || {
        move |k| {
            report
                .bound_at(rmsd0, report.w_norm, k)
                .expect("contractive certificate")
        }
    })
}

/// `iter,rmsd,rmsd_normalized,objective[,bound][,action_index]`
pub fn trace_csv(trace: &IterateTrace, bound: Option<&dyn Fn(usize) -> f64>) -> String {
    let with_actions = trace.records.iter().any(|r| r.action_index.is_some());
    let mut out = String::from("iter,rmsd,rmsd_normalized,objective");
    if bound.is_some() {
        out.push_str(",bound");
    }
    if with_actions {
        out.push_str(",action_index");
    }
    out.push('\n');
    for r in &trace.records {
        let _ = write!(
            out,
            "{},{},{},{}",
            r.iter,
            fmt_float(r.rmsd),
            fmt_float(r.rmsd_normalized),
            fmt_float(r.objective)
        );
        if let Some(b) = bound {
            let _ = write!(out, ",{}", fmt_float(b(r.iter)));
        }
        if with_actions {
            match r.action_index {
                Some(i) => {
                    let _ = write!(out, ",{i}");
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

fn certificate_text(config: &ExperimentConfig, subset: &SymmetricSubset, report: &CertificateReport) -> String {
    let mut text = format!(
        "subset.radius = {}\nsubset.generator = {}\nstep = {}\n",
        subset.radius(),
        subset.generator_label(),
        match config.step {
            StepSize::Auto => "auto".to_string(),
            StepSize::Fixed(v) => fmt_float(v),
        }
    );
    text.push_str(&report.to_key_value());
    if report.is_vacuous() {
        text.push_str("notice = bound vacuous: alpha_Gstar >= 1, no contraction is certified\n");
    }
    text
}

fn cmd_run(config: &ExperimentConfig) -> Result<Outputs> {
    let (problem, subset) = setup(config)?;
    let report = certificate_for(&problem, &subset)?;
    let solver = solver_config(config);
    let pgd = run(&problem, &solver, &Mode::Pgd)?;
    let group = run_replicates(&problem, &solver, &Mode::GroupPgd(subset.clone()), config.seeds)?;
    let rmsd0 = norm(&problem.x_dagger);
    let bound = bound_for(&report, config, rmsd0);

    let group_final = group.iter().map(IterateTrace::final_rmsd).sum::<f64>() / group.len() as f64;
    let mut out = Outputs::default();
    out.file("pgd.csv", trace_csv(&pgd, None));
    out.file(
        "group_pgd.csv",
        trace_csv(&group[0], bound.as_ref().map(|b| b as &dyn Fn(usize) -> f64)),
    );
    out.file("certificate.txt", certificate_text(config, &subset, &report));
    let _ = writeln!(
        out.stdout,
        "final rmsd: pgd = {}, group_pgd mean over {} seeds = {}",
        fmt_float(pgd.final_rmsd()),
        group.len(),
        fmt_float(group_final)
    );
    Ok(out)
}

fn cmd_certify(config: &ExperimentConfig) -> Result<Outputs> {
    let (problem, subset) = setup(config)?;
    let report = certificate_for(&problem, &subset)?;
    let text = certificate_text(config, &subset, &report);
    let mut out = Outputs::default();
    out.stdout.push_str(&text);
    out.file("certificate.txt", text);
    Ok(out)
}

/// First recorded iteration with `rmsd ≤ tolerance`.
pub fn iterations_to_tolerance(curve: &[(usize, f64)], tolerance: f64) -> Option<usize> {
    curve.iter().find(|(_, v)| *v <= tolerance).map(|(k, _)| *k)
}

fn cmd_compare(config: &ExperimentConfig) -> Result<Outputs> {
    let (problem, subset) = setup(config)?;
    let report = certificate_for(&problem, &subset)?;
    let solver = solver_config(config);
    // PGD from x0 = 0 uses no randomness, one run is the ensemble mean
    let pgd = mean_rmsd(&[run(&problem, &solver, &Mode::Pgd)?])?;
    let group = mean_rmsd(&run_replicates(&problem, &solver, &Mode::GroupPgd(subset.clone()), config.seeds)?)?;
    let rmsd0 = norm(&problem.x_dagger);
    let bound = bound_for(&report, config, rmsd0);

    let mut csv = String::from("iter,pgd_mean_rmsd,group_mean_rmsd,bound\n");
    for ((k, p), (_, g)) in pgd.iter().zip(&group) {
        let b = bound.as_ref().map_or(String::new(), |b| fmt_float(b(*k)));
        let _ = writeln!(csv, "{k},{},{},{b}", fmt_float(*p), fmt_float(*g));
    }
    let show = |n: Option<usize>| n.map_or("never".to_string(), |n| n.to_string());
    let summary = format!(
        "iterations to rmsd <= {}: pgd = {}, group_pgd = {} (budget {}, {} seeds)\n",
        fmt_float(config.tolerance),
        show(iterations_to_tolerance(&pgd, config.tolerance)),
        show(iterations_to_tolerance(&group, config.tolerance)),
        config.iters,
        config.seeds
    );
    let mut out = Outputs::default();
    out.file("compare.csv", csv);
    out.file("summary.txt", summary.clone());
    out.stdout = summary;
    Ok(out)
}

/// Plain-text graymap, one image row per radius, one column per angle.
pub fn phantom_pgm(x: &[f64], n_r: usize, n_theta: usize) -> String {
    let mut out = format!("P2\n{n_theta} {n_r}\n255\n");
    for row in x.chunks(n_theta) {
        let line: Vec<String> = row
            .iter()
            .map(|v| ((v.clamp(0.0, 1.0) * 255.0).round() as u8).to_string())
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn phantom_csv(x: &[f64], n_theta: usize) -> String {
    let mut out = String::new();
    for row in x.chunks(n_theta) {
        let line: Vec<String> = row.iter().map(|v| fmt_float(*v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

fn cmd_phantom(config: &ExperimentConfig) -> Result<Outputs> {
    let spec = &config.problem;
    let x = spec.phantom()?;
    let mut out = Outputs::default();
    out.file("phantom.pgm", phantom_pgm(&x, spec.n_r, spec.n_theta));
    out.file("phantom.csv", phantom_csv(&x, spec.n_theta));
    let _ = writeln!(out.stdout, "phantom {}x{} written", spec.n_r, spec.n_theta);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = parse_config("", "t").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        let c = parse_config(
            "# comment\nproblem.n_r = 8 # trailing\nproblem.phantom = textured\nproblem.phantom.seed = 4\n\
             problem.noise = gaussian\nproblem.noise.sigma = 0.5\nsubset.radius = 2\nsolver.step = 0.25\n",
            "t",
        )
        .unwrap();
        assert_eq!(c.problem.n_r, 8);
        assert_eq!(
            c.problem.phantom,
            PhantomSpec::Textured {
                smoothness: 3,
                seed: 4
            }
        );
        assert_eq!(c.problem.noise, NoiseModel::Gaussian { sigma: 0.5 });
        assert_eq!(c.radius, Radius::Fixed(2));
        assert_eq!(c.step, StepSize::Fixed(0.25));
    }

    #[test]
    fn parse_errors_carry_lines() {
        let cases = [
            ("problem.n_r = 3\nproblem.nr = 4\n", 2),
            ("\n\nsolver.iters = many\n", 3),
            ("solver.iters = 5\nsolver.iters = 6\n", 2),
            ("just text\n", 1),
            ("problem.angle_fraction = 1.5\n", 1),
            ("problem.angle_fraction = 0\n", 1),
            ("problem.n_theta = 0\n", 1),
            ("problem.phantom = square\n", 1),
            ("problem.phantom.seed = 3\n", 1),
            ("solver.step = -1\n", 1),
            ("solver.seeds =\n", 1),
        ];
        for (text, line) in cases {
            match parse_config(text, "cfg") {
                Err(e @ CliError::Parse { .. }) => {
                    assert_eq!(e.exit_code(), 2);
                    assert!(e.to_string().starts_with(&format!("cfg:{line}:")), "{text:?}: {e}");
                }
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Core(gpgd::Error::Diverged { iteration: 3 }).exit_code(), 3);
        assert_eq!(CliError::Core(gpgd::Error::TooLarge { cols: 9, cap: 1 }).exit_code(), 4);
        let io = std::io::Error::other("x");
        assert_eq!(
            CliError::Unwritable {
                path: "p".into(),
                source: io
            }
            .exit_code(),
            5
        );
        assert_eq!(CliError::Core(gpgd::Error::InvalidArgument("x".into())).exit_code(), 1);
    }

    #[test]
    fn pgm_layout_and_scaling() {
        let x = [0.0, 1.0, 0.5, 0.2, 0.2, 0.2];
        assert_eq!(phantom_pgm(&x, 2, 3), "P2\n3 2\n255\n0 255 128\n51 51 51\n");
    }

    #[test]
    fn iterations_to_tolerance_finds_first_hit() {
        let curve = [(0, 1.0), (5, 1e-3), (10, 1e-5), (15, 1e-6)];
        assert_eq!(iterations_to_tolerance(&curve, 1e-4), Some(10));
        assert_eq!(iterations_to_tolerance(&curve, 1e-9), None);
    }
}
