//! Cyclic group actions realized as exact permutations, symmetric subsets
//! `{Id, g, g⁻¹, g², g⁻², …}` and the per-run action sampler.

use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{check_len, Error, Result};
use crate::linop::DenseMatrix;

/// A signal permutation `T`: entry `i` of the input lands at position
/// `destination[i]` of the output. Permutations are exactly orthogonal, so
/// `T⁻¹ = Tᵀ` and norms are preserved up to summation order.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupAction {
    destination: Arc<[usize]>,
    /// Exponent relative to the generator this action was built from.
    power: i64,
    label: String,
}

impl GroupAction {
    pub fn from_permutation(destination: Vec<usize>, power: i64, label: impl Into<String>) -> Result<Self> {
        let d = destination.len();
        let mut seen = vec![false; d];
        for &j in &destination {
            if j >= d || seen[j] {
                return Err(Error::invalid("permutation is not a bijection"));
            }
            seen[j] = true;
        }
        Ok(Self {
            destination: destination.into(),
            power,
            label: label.into(),
        })
    }

    pub fn identity(dimension: usize) -> Self {
        Self {
            destination: (0..dimension).collect(),
            power: 0,
            label: "Id".into(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.destination.len()
    }

    pub fn power(&self) -> i64 {
        self.power
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn permutation(&self) -> &[usize] {
        &self.destination
    }

    pub fn is_identity(&self) -> bool {
        self.destination.iter().enumerate().all(|(i, &j)| i == j)
    }

    /// `T x`; panics on length mismatch, use [`GroupAction::try_apply`] for
    /// checked application.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out);
        out
    }

    pub fn try_apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("GroupAction::apply", self.dimension(), x.len())?;
        Ok(self.apply(x))
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.dimension(), "group action dimension mismatch");
        for (v, &j) in x.iter().zip(self.destination.iter()) {
            out[j] = *v;
        }
    }

    /// `T⁻¹ x`
    pub fn apply_inverse(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.apply_inverse_into(x, &mut out);
        out
    }

    pub fn apply_inverse_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.dimension(), "group action dimension mismatch");
        for (o, &j) in out.iter_mut().zip(self.destination.iter()) {
            *o = x[j];
        }
    }

    pub fn inverse(&self) -> Self {
        let mut dest = vec![0; self.dimension()];
        for (i, &j) in self.destination.iter().enumerate() {
            dest[j] = i;
        }
        Self {
            destination: dest.into(),
            power: -self.power,
            label: inverse_label(&self.label),
        }
    }

    /// `self ∘ other`, i.e. apply `other` first.
    pub fn compose(&self, other: &GroupAction) -> Result<Self> {
        check_len("GroupAction::compose", self.dimension(), other.dimension())?;
        let dest = other.destination.iter().map(|&j| self.destination[j]).collect::<Vec<_>>();
        Ok(Self {
            destination: dest.into(),
            power: self.power + other.power,
            label: format!("{}·{}", self.label, other.label),
        })
    }

    /// `T^k` for any signed `k`.
    pub fn pow(&self, k: i64) -> Self {
        let base = if k < 0 { self.inverse() } else { self.clone() };
        let mut dest: Vec<usize> = (0..self.dimension()).collect();
        for _ in 0..k.unsigned_abs() {
            for j in dest.iter_mut() {
                *j = base.destination[*j];
            }
        }
        Self {
            destination: dest.into(),
            power: k * self.power,
            label: power_label(k),
        }
    }

    /// Permutation matrix `P` with `P x = T x`.
    pub fn to_dense(&self) -> DenseMatrix {
        let d = self.dimension();
        let mut entries = vec![0.0; d * d];
        for (i, &j) in self.destination.iter().enumerate() {
            entries[j * d + i] = 1.0;
        }
        DenseMatrix::new(d, d, entries).expect("square by construction")
    }
}

fn power_label(k: i64) -> String {
    match k {
        0 => "Id".into(),
        1 => "g".into(),
        _ => format!("g^{k}"),
    }
}

fn inverse_label(label: &str) -> String {
    if label == "Id" {
        label.into()
    } else {
        format!("({label})^-1")
    }
}

/// Cyclic shift on `ℝ^d` moving entry `i` to `(i + s) mod d`.
pub fn cyclic_shift_action(d: usize, s: i64) -> GroupAction {
    assert!(d >= 1, "cyclic shift needs a nonempty signal");
    let shift = s.rem_euclid(d as i64) as usize;
    GroupAction {
        destination: (0..d).map(|i| (i + shift) % d).collect(),
        power: s,
        label: format!("shift{s}"),
    }
}

/// Rotation on a polar grid stored row-major (radius major, angle minor):
/// `(T x)(r, θ) = x(r, θ − s)`.
pub fn polar_theta_shift(n_r: usize, n_theta: usize, s: i64) -> GroupAction {
    assert!(n_r >= 1 && n_theta >= 1, "polar grid needs positive extents");
    let shift = s.rem_euclid(n_theta as i64) as usize;
    let mut dest = Vec::with_capacity(n_r * n_theta);
    for r in 0..n_r {
        for t in 0..n_theta {
            dest.push(r * n_theta + (t + shift) % n_theta);
        }
    }
    GroupAction {
        destination: dest.into(),
        power: s,
        label: format!("rot{s}"),
    }
}

/// Identity plus `g^{±1..±radius}`, ordered `Id, g, g⁻¹, g², g⁻², …`.
#[derive(Debug, Clone)]
pub struct SymmetricSubset {
    actions: Vec<GroupAction>,
    radius: usize,
    generator: String,
}

impl SymmetricSubset {
    pub fn actions(&self) -> &[GroupAction] {
        &self.actions
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.actions[0].dimension()
    }

    pub fn generator_label(&self) -> &str {
        &self.generator
    }

    /// Exponents relative to the generator, in canonical order.
    pub fn exponents(&self) -> impl Iterator<Item = i64> + '_ {
        (0..self.actions.len() as i64).map(|i| if i % 2 == 1 { (i + 1) / 2 } else { -(i / 2) })
    }
}

pub fn symmetric_subset(generator: &GroupAction, radius: usize) -> SymmetricSubset {
    let mut actions = Vec::with_capacity(2 * radius + 1);
    actions.push(GroupAction::identity(generator.dimension()));
    let inverse = generator.inverse();
    let mut forward = generator.clone();
    let mut backward = inverse.clone();
    for k in 1..=radius as i64 {
        if k > 1 {
            forward = generator.compose(&forward).expect("same dimension");
            backward = inverse.compose(&backward).expect("same dimension");
        }
        forward.power = k * generator.power;
        forward.label = power_label(k);
        backward.power = -k * generator.power;
        backward.label = power_label(-k);
        actions.push(forward.clone());
        actions.push(backward.clone());
    }
    SymmetricSubset {
        actions,
        radius,
        generator: generator.label.clone(),
    }
}

/// Uniform draw over every action of the subset, identity included.
pub fn sample_action<'a, R: Rng + ?Sized>(subset: &'a SymmetricSubset, rng: &mut R) -> (&'a GroupAction, usize) {
    let idx = rng.random_range(0..subset.len());
    (&subset.actions[idx], idx)
}

/// Non-uniform sampling over a subset. Runs driven by this sampler fall
/// outside the certificate's uniform-sampling hypothesis.
#[derive(Debug, Clone)]
pub struct WeightedSampler {
    dist: WeightedIndex<f64>,
}

impl WeightedSampler {
    pub fn new(subset: &SymmetricSubset, weights: &[f64]) -> Result<Self> {
        check_len("WeightedSampler::new", subset.len(), weights.len())?;
        let dist = WeightedIndex::new(weights.iter().copied())
            .map_err(|e| Error::invalid(format!("bad sampling weights: {e}")))?;
        Ok(Self { dist })
    }

    pub fn sample<'a, R: Rng + ?Sized>(&self, subset: &'a SymmetricSubset, rng: &mut R) -> (&'a GroupAction, usize) {
        let idx = self.dist.sample(rng);
        (&subset.actions[idx], idx)
    }
}
