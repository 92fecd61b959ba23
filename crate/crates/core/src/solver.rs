//! Projected gradient descent and its group-symmetric variant.
//!
//! Group-PGD evaluates the gradient at a randomly rotated iterate and rotates
//! it back, `x ← P_K[x − η T⁻¹ Aᵀ(A T x − b)]`, which is plain PGD on the
//! virtual operator `A T` drawn uniformly from a symmetric subset per step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bench::ProblemInstance;
use crate::constraint::ConstraintSet;
use crate::error::{check_len, Error, Result};
use crate::linop::{spectral_norm, LinearMap};
use crate::symmetry::{sample_action, GroupAction, SymmetricSubset};
use crate::vector::{distance, is_finite, norm, sub};

/// Relative tolerance for the power iteration behind `η = 1/L`.
pub const SPECTRAL_TOL: f64 = 1e-12;
pub const SPECTRAL_MAX_ITER: usize = 200_000;
const SPECTRAL_SEED: u64 = 0;

/// Iterates larger than this in norm abort the run.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    /// `η = 1/L` with `L = ‖AᵀA‖` from power iteration.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub step: StepSize,
    pub max_iters: usize,
    pub seed: u64,
    pub record_every: usize,
    /// Starting point; zero when unset.
    pub x0: Option<Vec<f64>>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            step: StepSize::Auto,
            max_iters: 100,
            seed: 0,
            record_every: 1,
            x0: None,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Mode {
    Pgd,
    GroupPgd(SymmetricSubset),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    /// `‖x_k − x†‖₂`
    pub rmsd: f64,
    /// `‖x_k − x†‖₂ / √d`
    pub rmsd_normalized: f64,
    /// `½‖A x_k − b‖²`
    pub objective: f64,
    /// Index into the subset of the action that produced `x_k`.
    pub action_index: Option<usize>,
    pub stage: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterateTrace {
    pub records: Vec<TraceRecord>,
    pub final_iterate: Vec<f64>,
    pub step_size: f64,
}

impl IterateTrace {
    pub fn final_rmsd(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.rmsd)
    }
}

/// One multistage phase: subset radius and iteration budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stage {
    pub radius: usize,
    pub iters: usize,
}

/// `L = ‖AᵀA‖`, the Lipschitz constant of the least-squares gradient.
pub fn lipschitz(a: &LinearMap) -> Result<f64> {
    spectral_norm(a, SPECTRAL_TOL, SPECTRAL_MAX_ITER, SPECTRAL_SEED)
}

pub fn resolve_step(a: &LinearMap, step: StepSize) -> Result<f64> {
    match step {
        StepSize::Fixed(eta) if eta > 0.0 && eta.is_finite() => Ok(eta),
        StepSize::Fixed(eta) => Err(Error::invalid(format!("step size must be positive, got {eta}"))),
        StepSize::Auto => {
            let l = lipschitz(a)?;
            if l > 0.0 {
                Ok(1.0 / l)
            } else {
                Err(Error::invalid("automatic step needs a nonzero operator"))
            }
        }
    }
}

pub fn objective(a: &LinearMap, b: &[f64], x: &[f64]) -> Result<f64> {
    let r = sub(&a.apply(x)?, b);
    Ok(0.5 * r.iter().map(|v| v * v).sum::<f64>())
}

fn check_step_inputs(x: &[f64], a: &LinearMap, b: &[f64], k: &ConstraintSet, eta: f64) -> Result<()> {
    check_len("step iterate", a.cols(), x.len())?;
    check_len("step observation", a.rows(), b.len())?;
    check_len("step constraint", a.cols(), k.dimension())?;
    if !(eta > 0.0) {
        return Err(Error::invalid("step size must be positive"));
    }
    Ok(())
}

/// `P_K[x − η Aᵀ(A x − b)]`
pub fn pgd_step(x: &[f64], a: &LinearMap, b: &[f64], k: &ConstraintSet, eta: f64) -> Result<Vec<f64>> {
    check_step_inputs(x, a, b, k, eta)?;
    let residual = sub(&a.apply(x)?, b);
    let grad = a.apply_adjoint(&residual)?;
    finish_step(x, &grad, k, eta)
}

/// `P_K[x − η T⁻¹ Aᵀ(A T x − b)]`
pub fn group_pgd_step(
    x: &[f64],
    a: &LinearMap,
    b: &[f64],
    k: &ConstraintSet,
    eta: f64,
    action: &GroupAction,
) -> Result<Vec<f64>> {
    check_step_inputs(x, a, b, k, eta)?;
    check_len("group_pgd_step action", a.cols(), action.dimension())?;
    let residual = sub(&a.apply(&action.apply(x))?, b);
    let grad = action.apply_inverse(&a.apply_adjoint(&residual)?);
    finish_step(x, &grad, k, eta)
}

fn finish_step(x: &[f64], grad: &[f64], k: &ConstraintSet, eta: f64) -> Result<Vec<f64>> {
    let mut y: Vec<f64> = x.iter().zip(grad).map(|(xi, gi)| xi - eta * gi).collect();
    k.project_into(&mut y)?;
    Ok(y)
}

/// Independent stream per replicate; replicate 0 is what [`run`] uses.
pub fn rng_for(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

struct Engine<'a> {
    problem: &'a ProblemInstance,
    eta: f64,
    record_every: usize,
    sqrt_d: f64,
    records: Vec<TraceRecord>,
}

impl<'a> Engine<'a> {
    fn new(problem: &'a ProblemInstance, eta: f64, record_every: usize) -> Result<Self> {
        if record_every == 0 {
            return Err(Error::invalid("record_every must be positive"));
        }
        Ok(Self {
            problem,
            eta,
            record_every,
            sqrt_d: (problem.dimension() as f64).sqrt(),
            records: Vec::new(),
        })
    }

    fn record(&mut self, iter: usize, x: &[f64], action_index: Option<usize>, stage: Option<usize>) -> Result<()> {
        let rmsd = distance(x, &self.problem.x_dagger);
        self.records.push(TraceRecord {
            iter,
            rmsd,
            rmsd_normalized: rmsd / self.sqrt_d,
            objective: objective(&self.problem.a, &self.problem.b, x)?,
            action_index,
            stage,
        });
        Ok(())
    }

    /// Runs `iters` steps starting at global index `start`, recording every
    /// `record_every`-th iterate and the last one.
    fn advance(
        &mut self,
        mut x: Vec<f64>,
        start: usize,
        iters: usize,
        last_global: usize,
        subset: Option<&SymmetricSubset>,
        rng: &mut ChaCha8Rng,
        stage: Option<usize>,
    ) -> Result<Vec<f64>> {
        let p = self.problem;
        for step in 1..=iters {
            let k = start + step;
            let (next, idx) = match subset {
                None => (pgd_step(&x, &p.a, &p.b, &p.k, self.eta)?, None),
                Some(s) => {
                    let (action, idx) = sample_action(s, rng);
                    (group_pgd_step(&x, &p.a, &p.b, &p.k, self.eta, action)?, Some(idx))
                }
            };
            if !is_finite(&next) || norm(&next) > DIVERGENCE_LIMIT {
                return Err(Error::Diverged { iteration: k });
            }
            x = next;
            if k % self.record_every == 0 || k == last_global {
                self.record(k, &x, idx, stage)?;
            }
        }
        Ok(x)
    }
}

fn initial_iterate(problem: &ProblemInstance, config: &SolverConfig) -> Result<Vec<f64>> {
    match &config.x0 {
        Some(x0) => {
            check_len("x0", problem.dimension(), x0.len())?;
            Ok(x0.clone())
        }
        None => Ok(vec![0.0; problem.dimension()]),
    }
}

/// Runs `config.max_iters` steps from `x₀` and records the trajectory.
pub fn run(problem: &ProblemInstance, config: &SolverConfig, mode: &Mode) -> Result<IterateTrace> {
    run_replicate(problem, config, mode, 0)
}

/// Like [`run`] but drawing actions from stream `replicate` of `config.seed`.
pub fn run_replicate(
    problem: &ProblemInstance,
    config: &SolverConfig,
    mode: &Mode,
    replicate: u64,
) -> Result<IterateTrace> {
    let eta = resolve_step(&problem.a, config.step)?;
    run_with_step(problem, config, mode, replicate, eta)
}

fn run_with_step(
    problem: &ProblemInstance,
    config: &SolverConfig,
    mode: &Mode,
    replicate: u64,
    eta: f64,
) -> Result<IterateTrace> {
    let subset = match mode {
        Mode::Pgd => None,
        Mode::GroupPgd(s) => {
            check_len("subset dimension", problem.dimension(), s.dimension())?;
            Some(s)
        }
    };
    let mut engine = Engine::new(problem, eta, config.record_every)?;
    let x0 = initial_iterate(problem, config)?;
    engine.record(0, &x0, None, None)?;
    let mut rng = rng_for(config.seed, replicate);
    let x = engine.advance(x0, 0, config.max_iters, config.max_iters, subset, &mut rng, None)?;
    Ok(IterateTrace {
        records: engine.records,
        final_iterate: x,
        step_size: eta,
    })
}

/// Seeded replicates run in parallel; results come back in replicate order.
pub fn run_replicates(
    problem: &ProblemInstance,
    config: &SolverConfig,
    mode: &Mode,
    replicates: usize,
) -> Result<Vec<IterateTrace>> {
    let eta = resolve_step(&problem.a, config.step)?;
    (0..replicates as u64)
        .into_par_iter()
        .map(|r| run_with_step(problem, config, mode, r, eta))
        .collect()
}

/// Mean `‖x_k − x†‖` per recorded iteration across traces with identical
/// recording schedules.
pub fn mean_rmsd(traces: &[IterateTrace]) -> Result<Vec<(usize, f64)>> {
    let first = traces
        .first()
        .ok_or_else(|| Error::invalid("mean of an empty ensemble"))?;
    let n = traces.len() as f64;
    first
        .records
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let mut sum = 0.0;
            for t in traces {
                let other = t
                    .records
                    .get(i)
                    .filter(|r| r.iter == rec.iter)
                    .ok_or_else(|| Error::invalid("traces have different recording schedules"))?;
                sum += other.rmsd;
            }
            Ok((rec.iter, sum / n))
        })
        .collect()
}

/// Group-PGD with a shrinking subset: each stage warm-starts from the
/// previous stage's final iterate and draws from the same random stream.
pub fn run_multistage(problem: &ProblemInstance, config: &SolverConfig, schedule: &[Stage]) -> Result<IterateTrace> {
    run_multistage_replicate(problem, config, schedule, 0)
}

pub fn run_multistage_replicate(
    problem: &ProblemInstance,
    config: &SolverConfig,
    schedule: &[Stage],
    replicate: u64,
) -> Result<IterateTrace> {
    if schedule.is_empty() {
        return Err(Error::invalid("multistage schedule is empty"));
    }
    if schedule.windows(2).any(|w| w[1].radius > w[0].radius) {
        return Err(Error::invalid("multistage radii must be non-increasing"));
    }
    let eta = resolve_step(&problem.a, config.step)?;
    let total: usize = schedule.iter().map(|s| s.iters).sum();
    let mut engine = Engine::new(problem, eta, config.record_every)?;
    let mut x = initial_iterate(problem, config)?;
    engine.record(0, &x, None, Some(0))?;
    let mut rng = rng_for(config.seed, replicate);
    let mut done = 0;
    for (i, stage) in schedule.iter().enumerate() {
        let subset = problem.geometry.subset(stage.radius);
        x = engine.advance(x, done, stage.iters, total, Some(&subset), &mut rng, Some(i))?;
        done += stage.iters;
    }
    Ok(IterateTrace {
        records: engine.records,
        final_iterate: x,
        step_size: eta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{build_problem, default_ring_profile, PhantomSpec, ProblemSpec};
    use crate::linop::DenseMatrix;
    use crate::symmetry::{cyclic_shift_action, polar_theta_shift};
    use rand::Rng;

    fn small_ring(noise: crate::bench::NoiseModel) -> ProblemInstance {
        build_problem(&ProblemSpec {
            n_r: 6,
            n_theta: 16,
            angle_fraction: 0.25,
            rays_per_angle: 8,
            phantom: PhantomSpec::Ring {
                profile: default_ring_profile(6),
            },
            noise,
            ..ProblemSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn ground_truth_is_a_fixed_point_without_noise() {
        let id = LinearMap::identity(3);
        let x = vec![0.2, 0.5, 0.7];
        let b = id.apply(&x).unwrap();
        let k = ConstraintSet::unit_box(3);
        assert_eq!(pgd_step(&x, &id, &b, &k, 0.5).unwrap(), x);
    }

    #[test]
    fn identity_operator_converges_in_one_step() {
        let id = LinearMap::identity(1);
        let k = ConstraintSet::uniform_box(1, -10.0, 10.0).unwrap();
        assert_eq!(pgd_step(&[5.0], &id, &[0.0], &k, 1.0).unwrap(), vec![0.0]);
    }

    #[test]
    fn two_variable_step_matches_hand_arithmetic() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![0.5, -1.0], vec![3.0, 0.25]]).unwrap();
        let x: [f64; 2] = [0.3, -0.4];
        let b = [1.0, 0.0, -2.0];
        let eta = 0.05;
        let k = ConstraintSet::uniform_box(2, -0.45, 0.45).unwrap();
        let r = [
            1.0 * x[0] + 2.0 * x[1] - b[0],
            0.5 * x[0] - 1.0 * x[1] - b[1],
            3.0 * x[0] + 0.25 * x[1] - b[2],
        ];
        let g = [1.0 * r[0] + 0.5 * r[1] + 3.0 * r[2], 2.0 * r[0] - 1.0 * r[1] + 0.25 * r[2]];
        let expected = [
            (x[0] - eta * g[0]).clamp(-0.45, 0.45),
            (x[1] - eta * g[1]).clamp(-0.45, 0.45),
        ];
        let got = pgd_step(&x, &a.into_linear_map(), &b, &k, eta).unwrap();
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() <= 1e-12);
        }
    }

    #[test]
    fn step_rejects_bad_inputs() {
        let id = LinearMap::identity(2);
        let k = ConstraintSet::unit_box(2);
        assert!(pgd_step(&[0.0; 3], &id, &[0.0; 2], &k, 1.0).is_err());
        assert!(pgd_step(&[0.0; 2], &id, &[0.0; 1], &k, 1.0).is_err());
        assert!(pgd_step(&[0.0; 2], &id, &[0.0; 2], &k, 0.0).is_err());
        let t = cyclic_shift_action(3, 1);
        assert!(group_pgd_step(&[0.0; 2], &id, &[0.0; 2], &k, 1.0, &t).is_err());
    }

    #[test]
    fn identity_action_matches_pgd_bitwise() {
        let p = small_ring(crate::bench::NoiseModel::Gaussian { sigma: 0.1 });
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..p.dimension()).map(|_| rng.random_range(0.0..1.0)).collect();
        let id = GroupAction::identity(p.dimension());
        assert_eq!(
            group_pgd_step(&x, &p.a, &p.b, &p.k, 0.01, &id).unwrap(),
            pgd_step(&x, &p.a, &p.b, &p.k, 0.01).unwrap()
        );
    }

    #[test]
    fn group_step_equals_pgd_on_composed_operator() {
        let p = small_ring(crate::bench::NoiseModel::Gaussian { sigma: 0.1 });
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for s in [-3, 1, 2, 5] {
            let t = polar_theta_shift(6, 16, s);
            let composed = p.a.compose_with_action(&t).unwrap();
            let x: Vec<f64> = (0..p.dimension()).map(|_| rng.random_range(0.0..1.0)).collect();
            let lhs = group_pgd_step(&x, &p.a, &p.b, &p.k, 0.02, &t).unwrap();
            let rhs = pgd_step(&x, &composed, &p.b, &p.k, 0.02).unwrap();
            assert!(distance(&lhs, &rhs) <= 1e-12);
        }
    }

    #[test]
    fn ring_is_fixed_by_every_group_step() {
        let p = small_ring(crate::bench::NoiseModel::None);
        let eta = resolve_step(&p.a, StepSize::Auto).unwrap();
        for s in -4..=4 {
            let t = polar_theta_shift(6, 16, s);
            let next = group_pgd_step(&p.x_dagger, &p.a, &p.b, &p.k, eta, &t).unwrap();
            assert!(distance(&next, &p.x_dagger) <= 1e-14);
        }
    }

    #[test]
    fn radius_zero_group_run_matches_pgd() {
        let p = small_ring(crate::bench::NoiseModel::Gaussian { sigma: 0.05 });
        let cfg = SolverConfig {
            max_iters: 40,
            seed: 3,
            ..SolverConfig::default()
        };
        let pgd = run(&p, &cfg, &Mode::Pgd).unwrap();
        let grp = run(&p, &cfg, &Mode::GroupPgd(p.geometry.subset(0))).unwrap();
        assert_eq!(pgd.final_iterate, grp.final_iterate);
        for (a, b) in pgd.records.iter().zip(&grp.records) {
            assert_eq!((a.iter, a.rmsd, a.objective), (b.iter, b.rmsd, b.objective));
        }
    }

    #[test]
    fn runs_are_deterministic_and_feasible() {
        let p = small_ring(crate::bench::NoiseModel::Gaussian { sigma: 0.05 });
        let cfg = SolverConfig {
            max_iters: 30,
            seed: 11,
            ..SolverConfig::default()
        };
        let mode = Mode::GroupPgd(p.geometry.subset(2));
        let a = run(&p, &cfg, &mode).unwrap();
        let b = run(&p, &cfg, &mode).unwrap();
        assert_eq!(a, b);
        assert!(p.k.contains(&a.final_iterate, 1e-12));
        assert!(a.records.windows(2).all(|w| w[0].iter < w[1].iter));
        assert!(a.records[1..].iter().all(|r| r.action_index.is_some()));
    }

    #[test]
    fn recording_schedule() {
        let p = small_ring(crate::bench::NoiseModel::None);
        let cfg = SolverConfig {
            max_iters: 10,
            record_every: 4,
            ..SolverConfig::default()
        };
        let t = run(&p, &cfg, &Mode::Pgd).unwrap();
        let iters: Vec<usize> = t.records.iter().map(|r| r.iter).collect();
        assert_eq!(iters, vec![0, 4, 8, 10]);
        let zero = run(&p, &SolverConfig { max_iters: 0, ..cfg }, &Mode::Pgd).unwrap();
        assert_eq!(zero.records.len(), 1);
        assert_eq!(zero.records[0].rmsd, norm(&p.x_dagger));
    }

    #[test]
    fn pgd_objective_is_monotone() {
        let p = small_ring(crate::bench::NoiseModel::Gaussian { sigma: 0.1 });
        let t = run(
            &p,
            &SolverConfig {
                max_iters: 200,
                ..SolverConfig::default()
            },
            &Mode::Pgd,
        )
        .unwrap();
        for w in t.records.windows(2) {
            assert!(w[1].objective <= w[0].objective * (1.0 + 1e-12) + 1e-15);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let p = small_ring(crate::bench::NoiseModel::None);
        let l = lipschitz(&p.a).unwrap();
        let d = p.dimension();
        let p = p.with_constraint(ConstraintSet::uniform_box(d, -1e300, 1e300).unwrap()).unwrap();
        let cfg = SolverConfig {
            step: StepSize::Fixed(10.0 / l),
            max_iters: 10_000,
            ..SolverConfig::default()
        };
        match run(&p, &cfg, &Mode::Pgd) {
            Err(Error::Diverged { iteration }) => assert!(iteration > 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn multistage_reductions() {
        let p = small_ring(crate::bench::NoiseModel::Gaussian { sigma: 0.05 });
        let cfg = SolverConfig {
            max_iters: 25,
            seed: 5,
            ..SolverConfig::default()
        };
        let single = run_multistage(&p, &cfg, &[Stage { radius: 2, iters: 25 }]).unwrap();
        let plain = run(&p, &cfg, &Mode::GroupPgd(p.geometry.subset(2))).unwrap();
        assert_eq!(single.final_iterate, plain.final_iterate);
        for (a, b) in single.records.iter().zip(&plain.records) {
            assert_eq!((a.iter, a.rmsd, a.action_index), (b.iter, b.rmsd, b.action_index));
        }

        // the radius-0 tail is plain PGD from the first stage's output
        let staged = run_multistage(&p, &cfg, &[Stage { radius: 2, iters: 10 }, Stage { radius: 0, iters: 5 }]).unwrap();
        let head = run_multistage(&p, &cfg, &[Stage { radius: 2, iters: 10 }]).unwrap();
        let eta = staged.step_size;
        let mut x = head.final_iterate.clone();
        for _ in 0..5 {
            x = pgd_step(&x, &p.a, &p.b, &p.k, eta).unwrap();
        }
        assert_eq!(staged.final_iterate, x);
        assert!(staged.records.iter().filter(|r| r.stage == Some(1)).count() == 5);

        assert!(run_multistage(&p, &cfg, &[]).is_err());
        assert!(run_multistage(&p, &cfg, &[Stage { radius: 1, iters: 2 }, Stage { radius: 2, iters: 2 }]).is_err());
    }

    #[test]
    fn replicates_differ_but_are_reproducible() {
        let p = small_ring(crate::bench::NoiseModel::None);
        let cfg = SolverConfig {
            max_iters: 20,
            seed: 1,
            ..SolverConfig::default()
        };
        let mode = Mode::GroupPgd(p.geometry.subset(2));
        let a = run_replicates(&p, &cfg, &mode, 4).unwrap();
        let b = run_replicates(&p, &cfg, &mode, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0], run(&p, &cfg, &mode).unwrap());
        assert_ne!(a[0].final_iterate, a[1].final_iterate);
        let mean = mean_rmsd(&a).unwrap();
        let manual = a.iter().map(|t| t.final_rmsd()).sum::<f64>() / 4.0;
        assert!((mean.last().unwrap().1 - manual).abs() < 1e-15);
    }
}
