//! Desk-scale problem generation on a polar grid.
//!
//! Images are stored row-major with radius as the major index and angle as
//! the minor index. The sensing operator views the object from a subset `S`
//! of the `n_theta` grid angles: view `θ` rotates the object by `θ` and
//! reads `rays_per_angle` weighted sums over the radial column at angle 0
//! and its two circular neighbors. The ray weights do not depend on `θ`, so
//! rotating the object by `s` before viewing from `S` is exactly viewing
//! from `S + s`:
//!
//! `A_{S+s} x = A_S (T_s x)`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::constraint::ConstraintSet;
use crate::error::{check_len, Error, Result};
use crate::linop::{LinearMap, Operator};
use crate::symmetry::{polar_theta_shift, symmetric_subset, GroupAction, SymmetricSubset};
use crate::vector::sub;

#[derive(Debug, Clone, Copy)]
struct Tap {
    radius: usize,
    offset: i64,
    weight: f64,
}

struct AngleSubsampled {
    n_r: usize,
    n_theta: usize,
    /// Column read at angle 0 for each view, i.e. `-θ mod n_theta`.
    base_columns: Vec<usize>,
    rays: Arc<Vec<Vec<Tap>>>,
}

impl AngleSubsampled {
    fn column(&self, base: usize, offset: i64) -> usize {
        (base as i64 + offset).rem_euclid(self.n_theta as i64) as usize
    }
}

impl Operator for AngleSubsampled {
    fn rows(&self) -> usize {
        self.base_columns.len() * self.rays.len()
    }

    fn cols(&self) -> usize {
        self.n_r * self.n_theta
    }

    fn forward(&self, x: &[f64], out: &mut [f64]) {
        let per_view = self.rays.len();
        for (v, &base) in self.base_columns.iter().enumerate() {
            for (j, ray) in self.rays.iter().enumerate() {
                out[v * per_view + j] = ray
                    .iter()
                    .map(|t| t.weight * x[t.radius * self.n_theta + self.column(base, t.offset)])
                    .sum();
            }
        }
    }

    fn adjoint(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let per_view = self.rays.len();
        for (v, &base) in self.base_columns.iter().enumerate() {
            for (j, ray) in self.rays.iter().enumerate() {
                let yi = y[v * per_view + j];
                for t in ray {
                    out[t.radius * self.n_theta + self.column(base, t.offset)] += t.weight * yi;
                }
            }
        }
    }
}

/// Seeded ray weights, shared by every view. Ray `j` integrates a Gaussian
/// bump centered near radius `(j + ½)·n_r/R` on the central column and a
/// damped copy of it on each neighboring column. All weights are positive,
/// so nonnegative images give nonnegative measurements.
fn ray_weights(n_r: usize, rays_per_angle: usize, seed: u64) -> Vec<Vec<Tap>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spacing = n_r as f64 / rays_per_angle as f64;
    (0..rays_per_angle)
        .map(|j| {
            let center = (j as f64 + 0.5) * spacing - 0.5 + rng.random_range(-0.2..0.2) * spacing.min(1.0);
            let width: f64 = rng.random_range(0.5..0.8);
            let damping = [rng.random_range(0.1..0.3), rng.random_range(0.1..0.3)];
            let lo = (center - 2.5).floor().max(0.0) as usize;
            let hi = ((center + 2.5).ceil() as usize).min(n_r - 1);
            let mut taps = Vec::new();
            for r in lo..=hi {
                let w = (-(r as f64 - center).powi(2) / (2.0 * width * width)).exp();
                taps.push(Tap {
                    radius: r,
                    offset: 0,
                    weight: w,
                });
                taps.push(Tap {
                    radius: r,
                    offset: -1,
                    weight: damping[0] * w,
                });
                taps.push(Tap {
                    radius: r,
                    offset: 1,
                    weight: damping[1] * w,
                });
            }
            taps
        })
        .collect()
}

/// Sensing operator viewing the polar image from the angles in `angles`
/// (order preserved, one block of `rays_per_angle` rows per view).
pub fn angle_subsampled_operator(
    n_r: usize,
    n_theta: usize,
    angles: &[usize],
    rays_per_angle: usize,
    seed: u64,
) -> Result<LinearMap> {
    if angles.is_empty() {
        return Err(Error::invalid("angle set must be nonempty"));
    }
    if n_r == 0 || n_theta == 0 || rays_per_angle == 0 {
        return Err(Error::invalid("grid extents and rays_per_angle must be positive"));
    }
    if let Some(bad) = angles.iter().find(|&&a| a >= n_theta) {
        return Err(Error::invalid(format!("angle index {bad} outside 0..{n_theta}")));
    }
    let base_columns = angles.iter().map(|&a| (n_theta - a) % n_theta).collect();
    let tag = format!("views{}x{}", angles.len(), rays_per_angle);
    Ok(LinearMap::new(
        AngleSubsampled {
            n_r,
            n_theta,
            base_columns,
            rays: Arc::new(ray_weights(n_r, rays_per_angle, seed)),
        },
        tag,
    ))
}

/// `count = ⌈fraction · n_theta⌉` evenly spread angles starting at 0.
pub fn evenly_spaced_angles(n_theta: usize, fraction: f64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid("angle fraction must lie in (0, 1]"));
    }
    let count = ((fraction * n_theta as f64).ceil() as usize).clamp(1, n_theta);
    Ok((0..count).map(|i| i * n_theta / count).collect())
}

/// Smallest radius `m` such that the shifts `S + s`, `|s| ≤ m`, cover every
/// grid angle.
pub fn coverage_radius(angles: &[usize], n_theta: usize) -> usize {
    let mut covered_by = vec![usize::MAX; n_theta];
    for &a in angles {
        for (phi, slot) in covered_by.iter_mut().enumerate() {
            let fwd = (phi + n_theta - a % n_theta) % n_theta;
            let dist = fwd.min(n_theta - fwd);
            *slot = (*slot).min(dist);
        }
    }
    covered_by.into_iter().max().unwrap_or(0)
}

/// Angle-constant image `x(r, θ) = profile[r]`.
pub fn ring_phantom(n_r: usize, n_theta: usize, profile: &[f64]) -> Result<Vec<f64>> {
    check_len("ring_phantom", n_r, profile.len())?;
    if profile.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid("ring profile values must lie in [0, 1]"));
    }
    Ok(profile
        .iter()
        .flat_map(|&v| std::iter::repeat(v).take(n_theta))
        .collect())
}

/// Background 0.1 with a bright band (0.9) over the middle third of the
/// radii. Both levels sit strictly inside `[0, 1]`.
pub fn default_ring_profile(n_r: usize) -> Vec<f64> {
    (0..n_r)
        .map(|r| {
            if 3 * r >= n_r && 3 * r < 2 * n_r {
                0.9
            } else {
                0.1
            }
        })
        .collect()
}

/// Random image band-limited in angle: per radius, a constant plus
/// harmonics `1..smoothness` with amplitudes decaying like `1/h`, then
/// rescaled into `[0.1, 0.9]`. With `smoothness ≤ n_theta / 3` the shift
/// residual `‖T_s x − x‖` grows with `|s|` for `|s| ≤ 2`.
pub fn textured_phantom(n_r: usize, n_theta: usize, smoothness: usize, seed: u64) -> Result<Vec<f64>> {
    if smoothness == 0 {
        return Err(Error::invalid("smoothness must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let two_pi = std::f64::consts::TAU;
    let mut x = vec![0.0; n_r * n_theta];
    for r in 0..n_r {
        let base: f64 = rng.random_range(0.0..1.0);
        let harmonics: Vec<(f64, f64)> = (1..smoothness)
            .map(|h| (rng.random_range(0.0..1.0) / h as f64, rng.random_range(0.0..two_pi)))
            .collect();
        for t in 0..n_theta {
            let angle = two_pi * t as f64 / n_theta as f64;
            let wave: f64 = harmonics
                .iter()
                .enumerate()
                .map(|(i, (amp, phase))| amp * ((i + 1) as f64 * angle + phase).cos())
                .sum();
            x[r * n_theta + t] = base + wave;
        }
    }
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    for v in x.iter_mut() {
        *v = if span > 0.0 { 0.1 + 0.8 * (*v - lo) / span } else { 0.5 };
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    None,
    Gaussian { sigma: f64 },
    /// `b_i = Poisson(scale · clean_i) / scale`
    Poisson { scale: f64 },
}

/// Returns `(b, w)` with `w = b − clean`.
pub fn add_noise(clean: &[f64], model: NoiseModel, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b: Vec<f64> = match model {
        NoiseModel::None => clean.to_vec(),
        NoiseModel::Gaussian { sigma } => {
            if !(sigma >= 0.0) {
                return Err(Error::invalid("gaussian sigma must be nonnegative"));
            }
            clean
                .iter()
                .map(|c| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    c + sigma * z
                })
                .collect()
        }
        NoiseModel::Poisson { scale } => {
            if !(scale > 0.0) {
                return Err(Error::invalid("poisson scale must be positive"));
            }
            if clean.iter().any(|c| *c < 0.0) {
                return Err(Error::invalid("poisson noise needs nonnegative measurements"));
            }
            clean
                .iter()
                .map(|c| {
                    let lambda = scale * c;
                    if lambda == 0.0 {
                        return Ok(0.0);
                    }
                    let dist = Poisson::new(lambda)
                        .map_err(|e| Error::invalid(format!("poisson rate {lambda}: {e}")))?;
                    let k: f64 = dist.sample(&mut rng);
                    Ok(k / scale)
                })
                .collect::<Result<_>>()?
        }
    };
    let w = sub(&b, clean);
    Ok((b, w))
}

#[derive(Debug, Clone, PartialEq)]
pub enum PhantomSpec {
    Ring { profile: Vec<f64> },
    Textured { smoothness: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub n_r: usize,
    pub n_theta: usize,
    pub angle_fraction: f64,
    pub rays_per_angle: usize,
    pub phantom: PhantomSpec,
    pub noise: NoiseModel,
    pub operator_seed: u64,
    pub noise_seed: u64,
}

impl Default for ProblemSpec {
    /// 32 × 64 ring viewed from a quarter of the angles, about 34% as many
    /// measurements as unknowns.
    fn default() -> Self {
        Self {
            n_r: 32,
            n_theta: 64,
            angle_fraction: 0.25,
            rays_per_angle: 44,
            phantom: PhantomSpec::Ring {
                profile: default_ring_profile(32),
            },
            noise: NoiseModel::None,
            operator_seed: 1,
            noise_seed: 2,
        }
    }
}

impl ProblemSpec {
    pub fn phantom(&self) -> Result<Vec<f64>> {
        match &self.phantom {
            PhantomSpec::Ring { profile } => ring_phantom(self.n_r, self.n_theta, profile),
            PhantomSpec::Textured { smoothness, seed } => {
                textured_phantom(self.n_r, self.n_theta, *smoothness, *seed)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub n_r: usize,
    pub n_theta: usize,
    pub angles: Vec<usize>,
    pub rays_per_angle: usize,
    pub operator_seed: u64,
}

impl Geometry {
    /// Same ray weights, different view set.
    pub fn operator_for(&self, angles: &[usize]) -> Result<LinearMap> {
        angle_subsampled_operator(self.n_r, self.n_theta, angles, self.rays_per_angle, self.operator_seed)
    }

    /// One-step rotation, the generator of the cyclic group.
    pub fn unit_rotation(&self) -> GroupAction {
        polar_theta_shift(self.n_r, self.n_theta, 1)
    }

    pub fn subset(&self, radius: usize) -> SymmetricSubset {
        symmetric_subset(&self.unit_rotation(), radius)
    }

    pub fn coverage_radius(&self) -> usize {
        coverage_radius(&self.angles, self.n_theta)
    }
}

#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub x_dagger: Vec<f64>,
    pub a: LinearMap,
    pub b: Vec<f64>,
    /// Realized noise, `b − A x†`.
    pub w: Vec<f64>,
    pub k: ConstraintSet,
    pub geometry: Geometry,
}

impl ProblemInstance {
    pub fn dimension(&self) -> usize {
        self.x_dagger.len()
    }

    /// Replaces the constraint set; the ground truth must remain feasible.
    pub fn with_constraint(mut self, k: ConstraintSet) -> Result<Self> {
        check_len("with_constraint", self.dimension(), k.dimension())?;
        if !k.contains(&self.x_dagger, crate::constraint::MEMBERSHIP_TOL) {
            return Err(Error::invalid("ground truth lies outside the constraint set"));
        }
        self.k = k;
        Ok(self)
    }
}

/// Phantom, operator, and noise assembled with `K = [0, 1]^d`.
pub fn build_problem(spec: &ProblemSpec) -> Result<ProblemInstance> {
    let x_dagger = spec.phantom()?;
    let angles = evenly_spaced_angles(spec.n_theta, spec.angle_fraction)?;
    let geometry = Geometry {
        n_r: spec.n_r,
        n_theta: spec.n_theta,
        angles,
        rays_per_angle: spec.rays_per_angle,
        operator_seed: spec.operator_seed,
    };
    let a = geometry.operator_for(&geometry.angles)?;
    let clean = a.apply(&x_dagger)?;
    let (b, w) = add_noise(&clean, spec.noise, spec.noise_seed)?;
    let k = ConstraintSet::unit_box(x_dagger.len());
    if !k.contains(&x_dagger, 0.0) {
        return Err(Error::invalid("phantom lies outside [0, 1]^d"));
    }
    Ok(ProblemInstance {
        x_dagger,
        a,
        b,
        w,
        k,
        geometry,
    })
}
