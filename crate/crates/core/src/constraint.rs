//! Constraint sets, their Euclidean projections, and descent cones.
//!
//! Every supported set is closed and convex, so projections are unique and
//! the projection contraction constant is 1. Translating a set (`K − x`)
//! stays inside the family: boxes shift their bounds, balls their centers,
//! and subspaces become affine subspaces.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};
use crate::linop::{gram_dense, LinearMap, DenseMatrix, DENSE_CAP};
use crate::vector::{dot, norm};

/// Tolerance for anchor membership and active-bound detection.
pub const MEMBERSHIP_TOL: f64 = 1e-10;

const ORTHONORMAL_TOL: f64 = 1e-12;
const SAMPLED_DIRECTIONS: usize = 64;
const SAMPLING_SEED: u64 = 0x5eed_c0de;

/// Whether a cone-dependent quantity is exact or only an estimate from a
/// sampled cone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exactness {
    Exact,
    Estimate,
}

impl Exactness {
    pub fn and(self, other: Exactness) -> Exactness {
        if self == Exactness::Exact && other == Exactness::Exact {
            Exactness::Exact
        } else {
            Exactness::Estimate
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Exactness::Exact => "exact",
            Exactness::Estimate => "estimate",
        }
    }
}

/// A value together with its [`Exactness`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeValue {
    pub value: f64,
    pub exactness: Exactness,
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Nonneg,
    L1Ball { center: Vec<f64>, radius: f64 },
    Subspace { basis: DenseMatrix },
    Affine { basis: DenseMatrix, offset: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    kind: Kind,
    dimension: usize,
}

impl ConstraintSet {
    /// Box `lo ≤ x ≤ hi`; infinite bounds are allowed.
    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_len("ConstraintSet::boxed", lo.len(), hi.len())?;
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
            return Err(Error::invalid("box bounds must satisfy lo < hi componentwise"));
        }
        let dimension = lo.len();
        Ok(Self {
            kind: Kind::Box { lo, hi },
            dimension,
        })
    }

    pub fn uniform_box(dimension: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::boxed(vec![lo; dimension], vec![hi; dimension])
    }

    /// The unit box `[0, 1]^d`.
    pub fn unit_box(dimension: usize) -> Self {
        Self::uniform_box(dimension, 0.0, 1.0).expect("0 < 1")
    }

    pub fn nonneg(dimension: usize) -> Self {
        Self {
            kind: Kind::Nonneg,
            dimension,
        }
    }

    pub fn l1_ball(dimension: usize, radius: f64) -> Result<Self> {
        Self::l1_ball_centered(vec![0.0; dimension], radius)
    }

    pub fn l1_ball_centered(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(Error::invalid("l1 ball radius must be finite and nonnegative"));
        }
        let dimension = center.len();
        Ok(Self {
            kind: Kind::L1Ball { center, radius },
            dimension,
        })
    }

    /// Span of the columns of `basis`, which must be orthonormal.
    pub fn subspace(basis: DenseMatrix) -> Result<Self> {
        check_orthonormal(&basis)?;
        let dimension = basis.rows();
        Ok(Self {
            kind: Kind::Subspace { basis },
            dimension,
        })
    }

    /// `offset + span(basis)`.
    pub fn affine(basis: DenseMatrix, offset: Vec<f64>) -> Result<Self> {
        check_orthonormal(&basis)?;
        check_len("ConstraintSet::affine", basis.rows(), offset.len())?;
        let dimension = basis.rows();
        Ok(Self {
            kind: Kind::Affine { basis, offset },
            dimension,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn is_convex(&self) -> bool {
        true
    }

    /// Projection contraction constant: 1 for convex sets, 2 otherwise.
    pub fn kappa_c(&self) -> u8 {
        if self.is_convex() {
            1
        } else {
            2
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            Kind::Box { .. } => "box",
            Kind::Nonneg => "nonneg",
            Kind::L1Ball { .. } => "l1_ball",
            Kind::Subspace { .. } => "subspace",
            Kind::Affine { .. } => "affine",
        }
    }

    /// Euclidean projection `argmin_{y ∈ K} ‖x − y‖₂`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("project", self.dimension, x.len())?;
        Ok(match &self.kind {
            Kind::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(v, (l, h))| v.max(*l).min(*h))
                .collect(),
            Kind::Nonneg => x.iter().map(|v| v.max(0.0)).collect(),
            Kind::L1Ball { center, radius } => project_l1(x, center, *radius),
            Kind::Subspace { basis } => project_span(basis, x),
            Kind::Affine { basis, offset } => {
                let rel: Vec<f64> = x.iter().zip(offset).map(|(a, o)| a - o).collect();
                project_span(basis, &rel)
                    .iter()
                    .zip(offset)
                    .map(|(p, o)| p + o)
                    .collect()
            }
        })
    }

    /// Projection written into `out`, avoiding an allocation in the solver loop
    /// for the coordinatewise sets.
    pub(crate) fn project_into(&self, x: &mut [f64]) -> Result<()> {
        check_len("project", self.dimension, x.len())?;
        match &self.kind {
            Kind::Box { lo, hi } => {
                for (v, (l, h)) in x.iter_mut().zip(lo.iter().zip(hi)) {
                    *v = v.max(*l).min(*h);
                }
            }
            Kind::Nonneg => x.iter_mut().for_each(|v| *v = v.max(0.0)),
            _ => {
                let p = self.project(x)?;
                x.copy_from_slice(&p);
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        if x.len() != self.dimension {
            return false;
        }
        match &self.kind {
            Kind::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (l, h))| *v >= l - tol && *v <= h + tol),
            Kind::Nonneg => x.iter().all(|v| *v >= -tol),
            Kind::L1Ball { center, radius } => {
                x.iter().zip(center).map(|(a, c)| (a - c).abs()).sum::<f64>() <= radius + tol
            }
            Kind::Subspace { .. } | Kind::Affine { .. } => {
                let p = self.project(x).expect("length checked");
                p.iter().zip(x).all(|(a, b)| (a - b).abs() <= tol)
            }
        }
    }

    /// The translated set `K + offset`.
    pub fn translate(&self, offset: &[f64]) -> Result<Self> {
        check_len("translate", self.dimension, offset.len())?;
        let shift = |v: &[f64]| v.iter().zip(offset).map(|(a, b)| a + b).collect::<Vec<_>>();
        let kind = match &self.kind {
            Kind::Box { lo, hi } => Kind::Box {
                lo: shift(lo),
                hi: shift(hi),
            },
            Kind::Nonneg => Kind::Box {
                lo: offset.to_vec(),
                hi: vec![f64::INFINITY; self.dimension],
            },
            Kind::L1Ball { center, radius } => Kind::L1Ball {
                center: shift(center),
                radius: *radius,
            },
            Kind::Subspace { basis } => Kind::Affine {
                basis: basis.clone(),
                offset: offset.to_vec(),
            },
            Kind::Affine { basis, offset: o } => Kind::Affine {
                basis: basis.clone(),
                offset: shift(o),
            },
        };
        Ok(Self {
            kind,
            dimension: self.dimension,
        })
    }
}

fn check_orthonormal(basis: &DenseMatrix) -> Result<()> {
    let gram = basis.transpose_mul(basis)?;
    for i in 0..gram.rows() {
        for j in 0..gram.cols() {
            let target = if i == j { 1.0 } else { 0.0 };
            if (gram.get(i, j) - target).abs() > ORTHONORMAL_TOL {
                return Err(Error::invalid("subspace basis columns are not orthonormal"));
            }
        }
    }
    Ok(())
}

fn project_span(basis: &DenseMatrix, x: &[f64]) -> Vec<f64> {
    basis.matvec(&basis.transpose_matvec(x))
}

/// Projection onto `{y : ‖y − center‖₁ ≤ radius}` by sorting magnitudes and
/// soft-thresholding at the level that lands on the boundary.
fn project_l1(x: &[f64], center: &[f64], radius: f64) -> Vec<f64> {
    let y: Vec<f64> = x.iter().zip(center).map(|(a, c)| a - c).collect();
    let l1: f64 = y.iter().map(|v| v.abs()).sum();
    if l1 <= radius {
        return x.to_vec();
    }
    let mut mags: Vec<f64> = y.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    // the largest magnitude always survives, even at radius 0
    let mut cumulative = mags[0];
    let mut threshold = mags[0] - radius;
    for (j, u) in mags.iter().enumerate().skip(1) {
        cumulative += u;
        let candidate = (cumulative - radius) / (j + 1) as f64;
        if u - candidate > 0.0 {
            threshold = candidate;
        } else {
            break;
        }
    }
    y.iter()
        .zip(center)
        .map(|(v, c)| c + v.signum() * (v.abs() - threshold).max(0.0))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConeRepr {
    WholeSpace,
    /// Span of orthonormal columns.
    Subspace(DenseMatrix),
    /// Finite set of unit generators; an inner approximation of the cone.
    Sampled(Vec<Vec<f64>>),
}

/// Cone of feasible directions `{a (x − anchor) : a ≥ 0, x ∈ K}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DescentCone {
    anchor: Vec<f64>,
    repr: ConeRepr,
}

impl DescentCone {
    pub fn whole_space(anchor: Vec<f64>) -> Self {
        Self {
            anchor,
            repr: ConeRepr::WholeSpace,
        }
    }

    pub fn subspace(anchor: Vec<f64>, basis: DenseMatrix) -> Result<Self> {
        check_orthonormal(&basis)?;
        check_len("DescentCone::subspace", anchor.len(), basis.rows())?;
        Ok(Self {
            anchor,
            repr: ConeRepr::Subspace(basis),
        })
    }

    /// Generators are normalized; zero generators are dropped.
    pub fn sampled(anchor: Vec<f64>, generators: Vec<Vec<f64>>) -> Result<Self> {
        let mut unit = Vec::with_capacity(generators.len());
        for g in generators {
            check_len("DescentCone::sampled", anchor.len(), g.len())?;
            let n = norm(&g);
            if n > 0.0 {
                unit.push(g.into_iter().map(|v| v / n).collect());
            }
        }
        Ok(Self {
            anchor,
            repr: ConeRepr::Sampled(unit),
        })
    }

    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }

    pub fn dimension(&self) -> usize {
        self.anchor.len()
    }

    pub fn repr(&self) -> &ConeRepr {
        &self.repr
    }

    pub fn exactness(&self) -> Exactness {
        match self.repr {
            ConeRepr::Sampled(_) => Exactness::Estimate,
            _ => Exactness::Exact,
        }
    }

    /// Projection onto the cone. For sampled cones this is the best single
    /// nonnegatively scaled generator, which underestimates the true norm.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("project_cone", self.dimension(), x.len())?;
        Ok(match &self.repr {
            ConeRepr::WholeSpace => x.to_vec(),
            ConeRepr::Subspace(basis) => project_span(basis, x),
            ConeRepr::Sampled(gens) => {
                let best = gens
                    .iter()
                    .map(|g| (dot(g, x), g))
                    .max_by(|a, b| a.0.total_cmp(&b.0));
                match best {
                    Some((score, g)) if score > 0.0 => g.iter().map(|v| v * score).collect(),
                    _ => vec![0.0; x.len()],
                }
            }
        })
    }

    /// `‖P_C(x)‖₂`, which equals `sup_{v ∈ C, ‖v‖ ≤ 1} ⟨v, x⟩`.
    pub fn projected_norm(&self, x: &[f64]) -> Result<ConeValue> {
        Ok(ConeValue {
            value: norm(&self.project(x)?),
            exactness: self.exactness(),
        })
    }
}

/// Descent cone of `K` at `anchor`.
///
/// Interior points of boxes and balls give the whole space, subspaces give
/// themselves. Boxes with active bounds and boundary points of `ℓ1` balls get
/// a sampled representation from feasible directions.
pub fn descent_cone_of(k: &ConstraintSet, anchor: &[f64]) -> Result<DescentCone> {
    check_len("descent_cone_of", k.dimension(), anchor.len())?;
    if !k.contains(anchor, MEMBERSHIP_TOL) {
        return Err(Error::invalid("descent cone anchor lies outside the constraint set"));
    }
    let d = anchor.len();
    match &k.kind {
        Kind::Box { lo, hi } => Ok(box_cone(anchor, lo, hi)),
        Kind::Nonneg => Ok(box_cone(anchor, &vec![0.0; d], &vec![f64::INFINITY; d])),
        Kind::Subspace { basis } | Kind::Affine { basis, .. } => {
            DescentCone::subspace(anchor.to_vec(), basis.clone())
        }
        Kind::L1Ball { center, radius } => {
            let l1: f64 = anchor.iter().zip(center).map(|(a, c)| (a - c).abs()).sum();
            if l1 < radius - MEMBERSHIP_TOL {
                return Ok(DescentCone::whole_space(anchor.to_vec()));
            }
            let mut gens = Vec::with_capacity(2 * d + SAMPLED_DIRECTIONS);
            for i in 0..d {
                for sign in [1.0, -1.0] {
                    let mut g: Vec<f64> = center.iter().zip(anchor).map(|(c, a)| c - a).collect();
                    g[i] += sign * radius;
                    gens.push(g);
                }
            }
            let mut rng = ChaCha8Rng::seed_from_u64(SAMPLING_SEED);
            for _ in 0..SAMPLED_DIRECTIONS {
                let raw: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                let point = project_l1(&raw, &vec![0.0; d], *radius);
                gens.push(point.iter().zip(center).zip(anchor).map(|((p, c), a)| p + c - a).collect());
            }
            DescentCone::sampled(anchor.to_vec(), gens)
        }
    }
}

fn box_cone(anchor: &[f64], lo: &[f64], hi: &[f64]) -> DescentCone {
    let d = anchor.len();
    let at_lo: Vec<bool> = anchor.iter().zip(lo).map(|(a, l)| a - l <= MEMBERSHIP_TOL).collect();
    let at_hi: Vec<bool> = anchor.iter().zip(hi).map(|(a, h)| h - a <= MEMBERSHIP_TOL).collect();
    if !at_lo.iter().chain(&at_hi).any(|&b| b) {
        return DescentCone::whole_space(anchor.to_vec());
    }
    let mut gens = Vec::with_capacity(2 * d + SAMPLED_DIRECTIONS);
    for i in 0..d {
        if !at_hi[i] {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            gens.push(e);
        }
        if !at_lo[i] {
            let mut e = vec![0.0; d];
            e[i] = -1.0;
            gens.push(e);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SAMPLING_SEED);
    for _ in 0..SAMPLED_DIRECTIONS {
        let g: Vec<f64> = (0..d)
            .map(|i| {
                let v: f64 = rng.random_range(-1.0..1.0);
                match (at_lo[i], at_hi[i]) {
                    (true, true) => 0.0,
                    (true, false) => v.abs(),
                    (false, true) => -v.abs(),
                    (false, false) => v,
                }
            })
            .collect();
        gens.push(g);
    }
    DescentCone::sampled(anchor.to_vec(), gens).expect("generator lengths match")
}

/// Smallest value of `‖A v‖² / ‖v‖²` over the cone.
///
/// Exact (a dense eigenvalue) for whole-space and subspace cones; for
/// sampled cones the minimum over generators, an upper estimate of the true
/// constant.
pub fn restricted_min_eig(a: &LinearMap, cone: &DescentCone) -> Result<ConeValue> {
    check_len("restricted_min_eig", a.cols(), cone.dimension())?;
    let value = match &cone.repr {
        ConeRepr::WholeSpace => {
            let g = gram_dense(a)?;
            g.symmetric_eigenvalues()?[0]
        }
        ConeRepr::Subspace(basis) => {
            if basis.cols() > DENSE_CAP {
                return Err(Error::TooLarge {
                    cols: basis.cols(),
                    cap: DENSE_CAP,
                });
            }
            let k = basis.cols();
            let images: Vec<Vec<f64>> = (0..k)
                .map(|j| a.apply(&basis.column(j)))
                .collect::<Result<_>>()?;
            let mut entries = vec![0.0; k * k];
            for i in 0..k {
                for j in 0..=i {
                    let v = dot(&images[i], &images[j]);
                    entries[i * k + j] = v;
                    entries[j * k + i] = v;
                }
            }
            if k == 0 {
                return Ok(ConeValue {
                    value: 0.0,
                    exactness: Exactness::Exact,
                });
            }
            DenseMatrix::new(k, k, entries)?.symmetric_eigenvalues()?[0]
        }
        ConeRepr::Sampled(gens) => gens
            .iter()
            .map(|g| a.apply(g).map(|ag| dot(&ag, &ag)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(f64::INFINITY, f64::min),
    };
    Ok(ConeValue {
        // rank-deficient Grams come back with eigenvalues of order -1e-13
        value: value.max(0.0),
        exactness: cone.exactness(),
    })
}
