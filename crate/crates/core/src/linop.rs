//! Matrix-free linear operators.
//!
//! A [`LinearMap`] is a cheap, cloneable handle to anything implementing
//! [`Operator`]: a forward action `x -> A x` and an adjoint action
//! `y -> Aᵀ y` with fixed dimensions. Composition with group actions and
//! normalized stacking build new maps without materializing matrices; dense
//! assembly ([`gram_dense`]) is reserved for oracle-sized problems.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};
use crate::symmetry::GroupAction;
use crate::vector::{dot, norm};

/// Default cap on the number of columns for dense Gram assembly.
pub const DENSE_CAP: usize = 4096;

/// The forward/adjoint pair behind a [`LinearMap`].
///
/// Implementations may assume `x.len() == cols()` and `out.len() == rows()`
/// for `forward` (and the transpose for `adjoint`); [`LinearMap`] checks
/// lengths before dispatching. `out` must be fully overwritten.
pub trait Operator: Send + Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn forward(&self, x: &[f64], out: &mut [f64]);
    fn adjoint(&self, y: &[f64], out: &mut [f64]);
}

#[derive(Clone)]
pub struct LinearMap {
    op: Arc<dyn Operator>,
    tag: String,
}

impl fmt::Debug for LinearMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearMap")
            .field("tag", &self.tag)
            .field("rows", &self.rows())
            .field("cols", &self.cols())
            .finish()
    }
}

impl LinearMap {
    pub fn new(op: impl Operator + 'static, tag: impl Into<String>) -> Self {
        Self {
            op: Arc::new(op),
            tag: tag.into(),
        }
    }

    pub fn identity(dimension: usize) -> Self {
        Self::new(Identity(dimension), format!("I{dimension}"))
    }

    pub fn rows(&self) -> usize {
        self.op.rows()
    }

    pub fn cols(&self) -> usize {
        self.op.cols()
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    /// `A x`
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("apply", self.cols(), x.len())?;
        let mut out = vec![0.0; self.rows()];
        self.op.forward(x, &mut out);
        Ok(out)
    }

    /// `Aᵀ y`
    pub fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("apply_adjoint", self.rows(), y.len())?;
        let mut out = vec![0.0; self.cols()];
        self.op.adjoint(y, &mut out);
        Ok(out)
    }

    /// `x ↦ A(T x)` with adjoint `y ↦ T⁻¹(Aᵀ y)`.
    pub fn compose_with_action(&self, action: &GroupAction) -> Result<LinearMap> {
        check_len("compose_with_action", self.cols(), action.dimension())?;
        let tag = format!("{}∘{}", self.tag, action.label());
        Ok(LinearMap::new(
            ComposedWithAction {
                base: self.clone(),
                action: action.clone(),
            },
            tag,
        ))
    }
}

struct Identity(usize);

impl Operator for Identity {
    fn rows(&self) -> usize {
        self.0
    }
    fn cols(&self) -> usize {
        self.0
    }
    fn forward(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }
    fn adjoint(&self, y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(y);
    }
}

struct ComposedWithAction {
    base: LinearMap,
    action: GroupAction,
}

impl Operator for ComposedWithAction {
    fn rows(&self) -> usize {
        self.base.rows()
    }
    fn cols(&self) -> usize {
        self.base.cols()
    }
    fn forward(&self, x: &[f64], out: &mut [f64]) {
        let shifted = self.action.apply(x);
        self.base.op.forward(&shifted, out);
    }
    fn adjoint(&self, y: &[f64], out: &mut [f64]) {
        let mut back = vec![0.0; self.base.cols()];
        self.base.op.adjoint(y, &mut back);
        self.action.apply_inverse_into(&back, out);
    }
}

/// Vertical stack of blocks, each scaled by `1/√n` so that
/// `‖S x‖² = (1/n) Σ ‖A_i x‖²`.
struct RmsStack {
    blocks: Vec<LinearMap>,
    scale: f64,
    rows: usize,
    cols: usize,
}

impl Operator for RmsStack {
    fn rows(&self) -> usize {
        self.rows
    }
    fn cols(&self) -> usize {
        self.cols
    }
    fn forward(&self, x: &[f64], out: &mut [f64]) {
        let mut offset = 0;
        for block in &self.blocks {
            let r = block.rows();
            let slot = &mut out[offset..offset + r];
            block.op.forward(x, slot);
            slot.iter_mut().for_each(|v| *v *= self.scale);
            offset += r;
        }
    }
    fn adjoint(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut scratch = vec![0.0; self.cols];
        let mut offset = 0;
        for block in &self.blocks {
            let r = block.rows();
            block.op.adjoint(&y[offset..offset + r], &mut scratch);
            for (o, s) in out.iter_mut().zip(&scratch) {
                *o += self.scale * s;
            }
            offset += r;
        }
    }
}

/// Normalized stack of operators sharing a column count: block `i` is
/// `A_i / √n`, so the Gram of the stack is the mean of the block Grams.
pub fn stack_mean(ops: &[LinearMap]) -> Result<LinearMap> {
    let first = ops
        .first()
        .ok_or_else(|| Error::invalid("stack_mean needs at least one operator"))?;
    let cols = first.cols();
    for op in ops {
        check_len("stack_mean", cols, op.cols())?;
    }
    let rows = ops.iter().map(LinearMap::rows).sum();
    let scale = 1.0 / (ops.len() as f64).sqrt();
    let tag = format!("stack[{}]", ops.len());
    Ok(LinearMap::new(
        RmsStack {
            blocks: ops.to_vec(),
            scale,
            rows,
            cols,
        },
        tag,
    ))
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        check_len("DenseMatrix::new", rows * cols, entries.len())?;
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut entries = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            check_len("DenseMatrix::from_rows", cols, row.len())?;
            entries.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, entries)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.entries[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    pub fn transpose_matvec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (i, yi) in y.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * yi;
            }
        }
        out
    }

    /// `selfᵀ · other`
    pub fn transpose_mul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        check_len("transpose_mul", self.rows, other.rows)?;
        let mut out = DenseMatrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a = self.row(k);
            let b = other.row(k);
            for (i, ai) in a.iter().enumerate() {
                if *ai == 0.0 {
                    continue;
                }
                let dst = &mut out.entries[i * other.cols..(i + 1) * other.cols];
                for (d, bj) in dst.iter_mut().zip(b) {
                    *d += ai * bj;
                }
            }
        }
        Ok(out)
    }

    pub fn mul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        check_len("mul", self.cols, other.rows)?;
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for (k, aik) in self.row(i).iter().enumerate() {
                if *aik == 0.0 {
                    continue;
                }
                let src = other.row(k);
                let dst = &mut out.entries[i * other.cols..(i + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(src) {
                    *d += aik * b;
                }
            }
        }
        Ok(out)
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    fn to_symmetric_nalgebra(&self) -> Result<DMatrix<f64>> {
        check_len("symmetric eigendecomposition", self.rows, self.cols)?;
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.entries))
    }

    /// Eigenvalues of a symmetric matrix in ascending order.
    pub fn symmetric_eigenvalues(&self) -> Result<Vec<f64>> {
        let m = self.to_symmetric_nalgebra()?;
        let mut values: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
        values.sort_by(f64::total_cmp);
        Ok(values)
    }

    /// Smallest eigenvalue of a symmetric matrix and a unit eigenvector for it.
    pub fn min_eigenpair(&self) -> Result<(f64, Vec<f64>)> {
        let m = self.to_symmetric_nalgebra()?;
        let eig = SymmetricEigen::new(m);
        let (idx, value) = eig
            .eigenvalues
            .iter()
            .copied()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .ok_or_else(|| Error::invalid("empty matrix has no eigenvalues"))?;
        Ok((value, eig.eigenvectors.column(idx).iter().copied().collect()))
    }

    pub fn into_linear_map(self) -> LinearMap {
        let tag = format!("dense{}x{}", self.rows, self.cols);
        LinearMap::new(self, tag)
    }
}

impl Operator for DenseMatrix {
    fn rows(&self) -> usize {
        self.rows
    }
    fn cols(&self) -> usize {
        self.cols
    }
    fn forward(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), x);
        }
    }
    fn adjoint(&self, y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.transpose_matvec(y));
    }
}

/// Largest eigenvalue of `AᵀA` by power iteration from a seeded uniform
/// start. Converged once successive Rayleigh quotients agree to `tol`
/// relatively; otherwise [`Error::NotConverged`] carries the last estimate.
pub fn spectral_norm(a: &LinearMap, tol: f64, max_iter: usize, seed: u64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::invalid("spectral_norm tolerance must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..a.cols()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = norm(&v);
    if n == 0.0 {
        return Ok(0.0);
    }
    v.iter_mut().for_each(|x| *x /= n);

    let mut previous = f64::NAN;
    for _ in 0..max_iter {
        let w = a.apply_adjoint(&a.apply(&v)?)?;
        let rayleigh = dot(&v, &w);
        let wn = norm(&w);
        if wn == 0.0 {
            return Ok(0.0);
        }
        if (rayleigh - previous).abs() < tol * rayleigh.abs() {
            return Ok(rayleigh);
        }
        previous = rayleigh;
        v = w.into_iter().map(|x| x / wn).collect();
    }
    Err(Error::NotConverged {
        estimate: previous,
        iterations: max_iter,
    })
}

/// Assembles `AᵀA` column by column; refuses maps wider than [`DENSE_CAP`].
pub fn gram_dense(a: &LinearMap) -> Result<DenseMatrix> {
    gram_dense_with_cap(a, DENSE_CAP)
}

pub fn gram_dense_with_cap(a: &LinearMap, cap: usize) -> Result<DenseMatrix> {
    let d = a.cols();
    if d > cap {
        return Err(Error::TooLarge { cols: d, cap });
    }
    use rayon::prelude::*;
    let columns: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|j| {
            let mut e = vec![0.0; d];
            e[j] = 1.0;
            a.apply_adjoint(&a.apply(&e)?)
        })
        .collect::<Result<_>>()?;
    let mut g = DenseMatrix::zeros(d, d);
    for (j, col) in columns.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            g.entries[i * d + j] = *v;
        }
    }
    // exact symmetry; the two triangles differ only by rounding
    for i in 0..d {
        for j in 0..i {
            let avg = 0.5 * (g.entries[i * d + j] + g.entries[j * d + i]);
            g.entries[i * d + j] = avg;
            g.entries[j * d + i] = avg;
        }
    }
    Ok(g)
}
