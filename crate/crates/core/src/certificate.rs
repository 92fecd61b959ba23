//! Convergence certificates for Group-PGD.
//!
//! With `η = 1/L`, uniform sampling from a symmetric subset `G⋆` and a
//! convex constraint set, the expected error obeys
//!
//! ```text
//! E‖x_k − x†‖ ≤ α^k ‖x₀ − x†‖ + κ_c (1 − α^k) / (L (1 − α)) · (ε_G⋆ + ε_w ‖w‖)
//! α = κ_c √(1 − μ_G⋆ / L)
//! ```
//!
//! where `μ_G⋆` is the smallest restricted eigenvalue of the mean block Gram
//! `(1/|G⋆|) Σ (A T_g)ᵀ(A T_g)` over the descent cone at `x†`, `ε_G⋆` measures
//! how far `x†` is from being `G⋆`-invariant, and `ε_w` is the cone-restricted
//! noise gain of the rotated adjoints.

use std::fmt::Write as _;

use crate::bench::ProblemInstance;
use crate::constraint::{descent_cone_of, restricted_min_eig, ConeValue, DescentCone, Exactness};
use crate::error::{check_len, Error, Result};
use crate::linop::{stack_mean, LinearMap};
use crate::solver::{lipschitz, mean_rmsd, run_replicates, Mode, SolverConfig, StepSize};
use crate::symmetry::SymmetricSubset;
use crate::vector::{distance, norm, sub};

/// `κ_c √(1 − μ/L)`
pub fn compute_alpha(mu: f64, l: f64, kappa_c: u8) -> Result<f64> {
    if !(l > 0.0) {
        return Err(Error::invalid("L must be positive"));
    }
    if !(0.0..=l).contains(&mu) {
        return Err(Error::invalid(format!("mu = {mu} must lie in [0, L = {l}]")));
    }
    if kappa_c != 1 && kappa_c != 2 {
        return Err(Error::invalid("kappa_c must be 1 or 2"));
    }
    Ok(f64::from(kappa_c) * (1.0 - mu / l).sqrt())
}

/// `max_g ‖P_C((A T_g)ᵀ A (x† − T_g x†))‖`
pub fn compute_eps_gstar(
    a: &LinearMap,
    subset: &SymmetricSubset,
    x_dagger: &[f64],
    cone: &DescentCone,
) -> Result<ConeValue> {
    check_len("compute_eps_gstar", a.cols(), x_dagger.len())?;
    check_len("compute_eps_gstar", a.cols(), subset.dimension())?;
    let mut worst = 0.0_f64;
    for action in subset.actions() {
        let mismatch = sub(x_dagger, &action.apply(x_dagger));
        if mismatch.iter().all(|v| *v == 0.0) {
            continue;
        }
        let grad = action.apply_inverse(&a.apply_adjoint(&a.apply(&mismatch)?)?);
        worst = worst.max(cone.projected_norm(&grad)?.value);
    }
    Ok(ConeValue {
        value: worst,
        exactness: cone.exactness(),
    })
}

/// `max_g ‖P_C((A T_g)ᵀ w)‖ / ‖w‖`, zero for `w = 0`.
pub fn compute_eps_w(a: &LinearMap, subset: &SymmetricSubset, w: &[f64], cone: &DescentCone) -> Result<ConeValue> {
    check_len("compute_eps_w", a.rows(), w.len())?;
    check_len("compute_eps_w", a.cols(), subset.dimension())?;
    let w_norm = norm(w);
    if w_norm == 0.0 {
        return Ok(ConeValue {
            value: 0.0,
            exactness: cone.exactness(),
        });
    }
    let back = a.apply_adjoint(w)?;
    let mut worst = 0.0_f64;
    for action in subset.actions() {
        worst = worst.max(cone.projected_norm(&action.apply_inverse(&back))?.value);
    }
    Ok(ConeValue {
        value: worst / w_norm,
        exactness: cone.exactness(),
    })
}

/// The `G⋆` stack `[A T_g / √|G⋆|]_g`.
pub fn symmetric_stack(a: &LinearMap, subset: &SymmetricSubset) -> Result<LinearMap> {
    let blocks = subset
        .actions()
        .iter()
        .map(|t| a.compose_with_action(t))
        .collect::<Result<Vec<_>>>()?;
    stack_mean(&blocks)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateReport {
    /// `‖AᵀA‖`
    pub l: f64,
    pub mu_c: ConeValue,
    pub mu_gstar: ConeValue,
    pub kappa_c: u8,
    pub alpha_gstar: f64,
    pub eps_gstar: ConeValue,
    pub eps_w: ConeValue,
    pub w_norm: f64,
    pub subset_size: usize,
}

impl CertificateReport {
    pub fn alpha_exactness(&self) -> Exactness {
        self.mu_gstar.exactness
    }

    pub fn is_exact(&self) -> bool {
        [self.mu_c, self.mu_gstar, self.eps_gstar, self.eps_w]
            .iter()
            .all(|v| v.exactness == Exactness::Exact)
    }

    pub fn is_vacuous(&self) -> bool {
        !(self.alpha_gstar < 1.0)
    }

    /// `κ_c (ε_G⋆ + ε_w ‖w‖) / (L (1 − α))`, the bound as `k → ∞`.
    pub fn limit(&self, w_norm: f64) -> Result<f64> {
        self.ensure_contractive()?;
        Ok(f64::from(self.kappa_c) * self.forcing(w_norm) / (self.l * (1.0 - self.alpha_gstar)))
    }

    fn forcing(&self, w_norm: f64) -> f64 {
        self.eps_gstar.value + self.eps_w.value * w_norm
    }

    fn ensure_contractive(&self) -> Result<()> {
        if self.is_vacuous() {
            Err(Error::BoundVacuous {
                alpha: self.alpha_gstar,
            })
        } else {
            Ok(())
        }
    }

    pub fn bound_at(&self, rmsd0: f64, w_norm: f64, k: usize) -> Result<f64> {
        self.ensure_contractive()?;
        let alpha_k = self.alpha_gstar.powi(k as i32);
        let kappa = f64::from(self.kappa_c);
        Ok(alpha_k * rmsd0 + kappa * (1.0 - alpha_k) / (self.l * (1.0 - self.alpha_gstar)) * self.forcing(w_norm))
    }

    /// Iterations after which the noiseless bound `α^k · rmsd0` drops to
    /// `target`.
    pub fn iterations_to(&self, rmsd0: f64, target: f64) -> Result<usize> {
        self.ensure_contractive()?;
        if rmsd0 <= target {
            return Ok(0);
        }
        if self.alpha_gstar == 0.0 {
            return Ok(1);
        }
        Ok(((target / rmsd0).ln() / self.alpha_gstar.ln()).ceil() as usize)
    }

    /// Flat `key = value` block, one field per line.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let mut line = |key: &str, value: String| {
            let _ = writeln!(out, "{key} = {value}");
        };
        line("L", fmt_float(self.l));
        line("mu_C", fmt_float(self.mu_c.value));
        line("mu_C.exactness", self.mu_c.exactness.as_str().into());
        line("mu_Gstar", fmt_float(self.mu_gstar.value));
        line("mu_Gstar.exactness", self.mu_gstar.exactness.as_str().into());
        line("kappa_c", self.kappa_c.to_string());
        line("alpha_Gstar", fmt_float(self.alpha_gstar));
        line("alpha_Gstar.exactness", self.alpha_exactness().as_str().into());
        line("eps_Gstar", fmt_float(self.eps_gstar.value));
        line("eps_Gstar.exactness", self.eps_gstar.exactness.as_str().into());
        line("eps_w", fmt_float(self.eps_w.value));
        line("eps_w.exactness", self.eps_w.exactness.as_str().into());
        line("w_norm", fmt_float(self.w_norm));
        line("subset_size", self.subset_size.to_string());
        line(
            "bound",
            if self.is_vacuous() {
                "vacuous (alpha_Gstar >= 1)".into()
            } else {
                "contractive".into()
            },
        );
        out
    }
}

/// 17 significant digits, round-trip exact for `f64`.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// `k = 0..=k_max` samples of the bound.
pub fn bound_curve(report: &CertificateReport, rmsd0: f64, w_norm: f64, k_max: usize) -> Result<Vec<f64>> {
    (0..=k_max).map(|k| report.bound_at(rmsd0, w_norm, k)).collect()
}

/// Computes every certificate constant for `problem` and the subset.
pub fn certify(problem: &ProblemInstance, subset: &SymmetricSubset) -> Result<CertificateReport> {
    let a = &problem.a;
    let l = lipschitz(a)?;
    let cone = descent_cone_of(&problem.k, &problem.x_dagger)?;
    let kappa_c = problem.k.kappa_c();

    let mu_c = restricted_min_eig(a, &cone)?;
    let mu_gstar = if subset.len() == 1 && subset.actions()[0].is_identity() {
        mu_c
    } else {
        restricted_min_eig(&symmetric_stack(a, subset)?, &cone)?
    };
    // the power iteration approaches L from below; mu may exceed it by rounding
    let clamp = |v: ConeValue| ConeValue {
        value: if v.value > l && v.value <= l * (1.0 + 1e-9) { l } else { v.value },
        ..v
    };
    let mu_c = clamp(mu_c);
    let mu_gstar = clamp(mu_gstar);
    let alpha_gstar = compute_alpha(mu_gstar.value, l, kappa_c)?;

    Ok(CertificateReport {
        l,
        mu_c,
        mu_gstar,
        kappa_c,
        alpha_gstar,
        eps_gstar: compute_eps_gstar(a, subset, &problem.x_dagger, &cone)?,
        eps_w: compute_eps_w(a, subset, &problem.w, &cone)?,
        w_norm: norm(&problem.w),
        subset_size: subset.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginRow {
    pub iter: usize,
    pub mean_rmsd: f64,
    pub bound: f64,
    /// `bound · (1 + slack) − mean_rmsd`; negative means a violation.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DominationReport {
    pub certificate: CertificateReport,
    pub replicates: usize,
    pub slack: f64,
    pub rows: Vec<MarginRow>,
}

impl DominationReport {
    pub fn first_violation(&self) -> Option<&MarginRow> {
        self.rows.iter().find(|r| r.margin < 0.0)
    }

    pub fn passed(&self) -> bool {
        self.first_violation().is_none()
    }

    pub fn ensure(&self) -> Result<()> {
        match self.first_violation() {
            None => Ok(()),
            Some(r) => Err(Error::BoundViolated {
                iteration: r.iter,
                mean: r.mean_rmsd,
                bound: r.bound,
            }),
        }
    }

    pub fn margin_table(&self) -> String {
        let mut out = String::from("iter,mean_rmsd,bound,margin\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.iter,
                fmt_float(r.mean_rmsd),
                fmt_float(r.bound),
                fmt_float(r.margin)
            );
        }
        out
    }
}

/// Monte Carlo slack for estimating an expectation from `n` replicates.
pub fn default_slack(replicates: usize) -> f64 {
    2.0 / (replicates as f64).sqrt()
}

/// Runs `replicates` seeded Group-PGD runs and compares the mean error
/// against the certified bound at every recorded iteration.
pub fn verify_bound(
    problem: &ProblemInstance,
    subset: &SymmetricSubset,
    config: &SolverConfig,
    replicates: usize,
    slack: Option<f64>,
) -> Result<DominationReport> {
    if config.step != StepSize::Auto {
        return Err(Error::invalid("the certificate assumes the step 1/L"));
    }
    let certificate = certify(problem, subset)?;
    verify_certified(problem, subset, certificate, config, replicates, slack)
}

/// [`verify_bound`] against an already computed certificate for the same
/// problem and subset.
pub fn verify_certified(
    problem: &ProblemInstance,
    subset: &SymmetricSubset,
    certificate: CertificateReport,
    config: &SolverConfig,
    replicates: usize,
    slack: Option<f64>,
) -> Result<DominationReport> {
    if replicates == 0 {
        return Err(Error::invalid("verify_bound needs at least one replicate"));
    }
    if config.step != StepSize::Auto {
        return Err(Error::invalid("the certificate assumes the step 1/L"));
    }
    if certificate.kappa_c != 1 {
        return Err(Error::invalid("only convex constraint sets are certified"));
    }
    if !certificate.is_exact() {
        return Err(Error::invalid("certificate constants come from a sampled cone"));
    }
    if certificate.is_vacuous() {
        return Err(Error::BoundVacuous {
            alpha: certificate.alpha_gstar,
        });
    }
    let slack = slack.unwrap_or_else(|| default_slack(replicates));
    let x0 = config.x0.clone().unwrap_or_else(|| vec![0.0; problem.dimension()]);
    let rmsd0 = distance(&x0, &problem.x_dagger);

    let traces = run_replicates(problem, config, &Mode::GroupPgd(subset.clone()), replicates)?;
    let rows = mean_rmsd(&traces)?
        .into_iter()
        .map(|(iter, mean)| {
            let bound = certificate.bound_at(rmsd0, certificate.w_norm, iter)?;
            Ok(MarginRow {
                iter,
                mean_rmsd: mean,
                bound,
                margin: bound * (1.0 + slack) - mean,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DominationReport {
        certificate,
        replicates,
        slack,
        rows,
    })
}
