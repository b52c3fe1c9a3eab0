//! Dense linear-algebra kernels shared by the dynamics, read-out and control stages.

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Largest entry modulus of a complex matrix.
pub fn cmax(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn to_complex(m: &DMatrix<f64>) -> DMatrix<C64> {
    m.map(|v| C64::new(v, 0.0))
}

/// Gauss–Legendre nodes and weights on `[−1, 1]` by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Largest `|λ|` of a symmetric matrix by power iteration on `M²`, started
/// from a fixed non-degenerate vector.
pub fn power_norm(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n == 0 || m.amax() == 0.0 {
        return 0.0;
    }
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * ((i * 7919) % 97) as f64 / 97.0);
    v /= v.norm();
    let mut estimate = 0.0;
    for _ in 0..5000 {
        let w = m * (m * &v);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w).max(0.0).sqrt();
        v = w / norm;
        if (next - estimate).abs() <= 1e-14 * next {
            return next;
        }
        estimate = next;
    }
    estimate
}

/// Compressed sparse rows, for repeated matrix–vector products.
#[derive(Debug, Clone)]
pub struct Csr {
    pub n: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl Csr {
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut offsets = vec![0];
        let (mut cols, mut values) = (Vec::new(), Vec::new());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                let v = m[(r, c)];
                if v != 0.0 {
                    cols.push(c);
                    values.push(v);
                }
            }
            offsets.push(cols.len());
        }
        Self { n: m.nrows(), offsets, cols, values }
    }

    /// `out = scale · M x − out`, the Chebyshev update in place.
    pub fn cheb_step(&self, scale: f64, x: &[f64], out: &mut [f64]) {
        for r in 0..self.n {
            let mut s = 0.0;
            for k in self.offsets[r]..self.offsets[r + 1] {
                s += self.values[k] * x[self.cols[k]];
            }
            out[r] = scale * s - out[r];
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }
}

/// Complex Schur form `M = U T U†`, with `T` upper triangular.
pub fn complex_schur(m: &DMatrix<C64>) -> Result<(DMatrix<C64>, DMatrix<C64>)> {
    let n = m.nrows();
    let scale = cmax(m).max(1.0);
    let schur = Schur::try_new(m.clone(), 1e-15 * scale, 100 * n.max(10))
        .ok_or_else(|| Error::Numerical("complex Schur decomposition did not converge".into()))?;
    let (u, mut t) = schur.unpack();
    for c in 0..n {
        for r in c + 1..n {
            t[(r, c)] = C64::new(0.0, 0.0);
        }
    }
    Ok((u, t))
}

/// Eigenvalues of a general real matrix from the diagonal of its complex Schur form.
/// Unlike the unbounded QR sweep, the convergence test is scaled and the
/// iteration count capped.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<C64>> {
    let (_, t) = complex_schur(&to_complex(m))?;
    Ok((0..t.nrows()).map(|i| t[(i, i)]).collect())
}

/// `[c s; −s̄ c] [f; g] = [r; 0]` with real `c`.
fn givens(f: C64, g: C64) -> (f64, C64) {
    if g.norm() == 0.0 {
        return (1.0, C64::new(0.0, 0.0));
    }
    if f.norm() == 0.0 {
        return (0.0, g.conj() / g.norm());
    }
    let n = f.norm().hypot(g.norm());
    (f.norm() / n, (f / f.norm()) * g.conj() / n)
}

/// Swaps diagonal entries `k` and `k + 1` of the triangular factor.
fn swap_adjacent(t: &mut DMatrix<C64>, u: &mut DMatrix<C64>, k: usize) {
    let n = t.nrows();
    let (t11, t22) = (t[(k, k)], t[(k + 1, k + 1)]);
    let (c, s) = givens(t[(k, k + 1)], t22 - t11);
    // Rows k, k+1 to the right of the block.
    for j in k + 2..n {
        let (x, y) = (t[(k, j)], t[(k + 1, j)]);
        t[(k, j)] = x * c + s * y;
        t[(k + 1, j)] = y * c - s.conj() * x;
    }
    // Columns k, k+1 above the block, and the Schur vectors.
    let sc = s.conj();
    for i in 0..k {
        let (x, y) = (t[(i, k)], t[(i, k + 1)]);
        t[(i, k)] = x * c + sc * y;
        t[(i, k + 1)] = y * c - sc.conj() * x;
    }
    for i in 0..n {
        let (x, y) = (u[(i, k)], u[(i, k + 1)]);
        u[(i, k)] = x * c + sc * y;
        u[(i, k + 1)] = y * c - sc.conj() * x;
    }
    t[(k, k)] = t22;
    t[(k + 1, k + 1)] = t11;
}

/// Reorders a complex Schur form so that diagonal entries with `select`
/// come first; returns how many were selected.
pub fn reorder_schur(t: &mut DMatrix<C64>, u: &mut DMatrix<C64>, select: impl Fn(C64) -> bool) -> usize {
    let n = t.nrows();
    let mut placed = 0;
    for j in 0..n {
        if select(t[(j, j)]) {
            for k in (placed..j).rev() {
                swap_adjacent(t, u, k);
            }
            placed += 1;
        }
    }
    placed
}

/// Outcome of solving `J X + X J† = C`.
pub enum LyapunovOutcome {
    Solved(DMatrix<C64>),
    /// Some `λ_i + conj(λ_j)` vanishes.
    Singular,
}

/// Bartels–Stewart solve of `J X + X J† = C` through the complex Schur form of `J`.
pub fn solve_lyapunov(j: &DMatrix<C64>, c: &DMatrix<C64>) -> Result<LyapunovOutcome> {
    let n = j.nrows();
    let (u, t) = complex_schur(j)?;
    let ct = u.adjoint() * c * &u;
    let tol = 1e-12 * cmax(&t).max(f64::MIN_POSITIVE);
    for a in 0..n {
        for b in 0..n {
            if (t[(a, a)] + t[(b, b)].conj()).norm() <= tol {
                return Ok(LyapunovOutcome::Singular);
            }
        }
    }
    let mut y = DMatrix::<C64>::zeros(n, n);
    for col in (0..n).rev() {
        let mut rhs: DVector<C64> = ct.column(col).into_owned();
        for k in col + 1..n {
            let f = t[(col, k)].conj();
            rhs -= y.column(k) * f;
        }
        let shift = t[(col, col)].conj();
        for r in (0..n).rev() {
            let mut s = rhs[r];
            for k in r + 1..n {
                s -= t[(r, k)] * y[(k, col)];
            }
            y[(r, col)] = s / (t[(r, r)] + shift);
        }
    }
    Ok(LyapunovOutcome::Solved(&u * y * u.adjoint()))
}

/// `∫_0^t e^{τJ} Q e^{τJ†} dτ` from one block exponential.
pub fn van_loan_integral(j: &DMatrix<C64>, q: &DMatrix<C64>, t: f64) -> DMatrix<C64> {
    let n = j.nrows();
    let mut block = DMatrix::<C64>::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(&(-j));
    block.view_mut((0, n), (n, n)).copy_from(q);
    block.view_mut((n, n), (n, n)).copy_from(&j.adjoint());
    let e = (block * C64::new(t, 0.0)).exp();
    let f12 = e.view((0, n), (n, n)).into_owned();
    let f22 = e.view((n, n), (n, n)).into_owned();
    f22.adjoint() * f12
}

/// `X` Hermitian part, to remove round-off asymmetry.
pub fn hermitian_part(m: &DMatrix<C64>) -> DMatrix<C64> {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// Parallel sum of per-item matrices in a fixed order.
pub fn ordered_sum<F>(count: usize, chunk: usize, zero: &DMatrix<C64>, f: F) -> DMatrix<C64>
where
    F: Fn(usize) -> DMatrix<C64> + Sync,
{
    let parts: Vec<DMatrix<C64>> = (0..count.div_ceil(chunk))
        .into_par_iter()
        .map(|c| (c * chunk..((c + 1) * chunk).min(count)).fold(zero.clone(), |acc, i| acc + f(i)))
        .collect();
    parts.into_iter().fold(zero.clone(), |a, b| a + b)
}
