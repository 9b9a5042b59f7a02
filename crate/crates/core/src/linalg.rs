//! Small dense complex matrices and a one-sided Jacobi SVD.
//!
//! The matrices in this problem are tiny (at most a few hundred rows), so a
//! plain row-major `Vec<Complex64>` with handwritten kernels beats pulling in
//! a full linear-algebra stack. The SVD only ever needs the leading singular
//! triple, but Jacobi computes the full factorization anyway and is
//! deterministic: fixed sweep order, no randomized pivoting.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Dense complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMat { rows, cols, data: vec![Complex64::ZERO; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut m = CMat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn identity(n: usize) -> Self {
        CMat::from_fn(n, n, |i, j| if i == j { Complex64::ONE } else { Complex64::ZERO })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> CMat {
        CMat::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> CMat {
        CMat::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &CMat) -> CMat {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = CMat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == Complex64::ZERO {
                    continue;
                }
                let src = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        out
    }

    /// `self * v` for a column vector `v`.
    pub fn matvec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(self.cols, v.len(), "matvec shape mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, x)| a * x).sum())
            .collect()
    }

    /// `self^H * v` for a column vector `v`.
    pub fn adjoint_matvec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(self.rows, v.len(), "adjoint_matvec shape mismatch");
        let mut out = vec![Complex64::ZERO; self.cols];
        for i in 0..self.rows {
            let vi = v[i];
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a.conj() * vi;
            }
        }
        out
    }

    pub fn scale(&self, c: Complex64) -> CMat {
        CMat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * c).collect() }
    }

    pub fn frobenius_norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for CMat {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Leading singular triple of a complex matrix.
#[derive(Debug, Clone)]
pub struct SvdTriple {
    pub sigma: f64,
    /// Left singular vector, length = rows.
    pub u: Vec<Complex64>,
    /// Right singular vector, length = cols.
    pub v: Vec<Complex64>,
    /// True when the two largest singular values coincide within 1e-9 relative;
    /// the returned triple is then the one with the lexicographically smallest
    /// index in the computed ordering.
    pub degenerate: bool,
}

const JACOBI_MAX_SWEEPS: usize = 64;
const JACOBI_TOL: f64 = 1e-15;

/// Full set of singular values plus the leading pair of singular vectors,
/// via one-sided Jacobi on the columns of `a` (or of `a^H` when rows < cols).
pub fn top_singular_triple(a: &CMat) -> Result<SvdTriple> {
    if !a.is_finite() {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    if a.frobenius_norm_sqr() == 0.0 {
        return Err(Error::DegenerateInput("all-zero matrix has no leading singular direction".into()));
    }
    let transposed = a.rows() < a.cols();
    let work = if transposed { a.adjoint() } else { a.clone() };
    let (m, n) = (work.rows(), work.cols());

    // Column-major copies for cache-friendly column rotations.
    let mut b: Vec<Vec<Complex64>> = (0..n).map(|j| (0..m).map(|i| work[(i, j)]).collect()).collect();
    let mut v: Vec<Vec<Complex64>> =
        (0..n).map(|j| (0..n).map(|i| if i == j { Complex64::ONE } else { Complex64::ZERO }).collect()).collect();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0f64;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let alpha: f64 = b[p].iter().map(|z| z.norm_sqr()).sum();
                let beta: f64 = b[q].iter().map(|z| z.norm_sqr()).sum();
                let gamma: Complex64 = b[p].iter().zip(&b[q]).map(|(x, y)| x.conj() * y).sum();
                let g = gamma.norm();
                if alpha == 0.0 || beta == 0.0 || g <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                off = off.max(g / (alpha * beta).sqrt());
                let phase = gamma / g; // e^{i phi}
                let tau = (beta - alpha) / (2.0 * g);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let ph_conj = phase.conj();
                for i in 0..m {
                    let bp = b[p][i];
                    let bq = b[q][i];
                    b[p][i] = c * bp - s * ph_conj * bq;
                    b[q][i] = s * bp + c * ph_conj * bq;
                }
                for i in 0..n {
                    let vp = v[p][i];
                    let vq = v[q][i];
                    v[p][i] = c * vp - s * ph_conj * vq;
                    v[q][i] = s * vp + c * ph_conj * vq;
                }
            }
        }
        if off < 1e-14 {
            break;
        }
    }

    let mut sigmas: Vec<(f64, usize)> =
        b.iter().enumerate().map(|(j, col)| (col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt(), j)).collect();
    // Descending by sigma; ties keep the smaller column index first.
    sigmas.sort_by(|(sa, ja), (sb, jb)| sb.partial_cmp(sa).unwrap().then(ja.cmp(jb)));

    let (sigma, j_max) = sigmas[0];
    let degenerate = sigmas.len() > 1 && (sigma - sigmas[1].0).abs() <= 1e-9 * sigma.max(1e-300);
    let u_work: Vec<Complex64> = b[j_max].iter().map(|z| z / sigma).collect();
    let v_work = v[j_max].clone();

    let (u, v) = if transposed { (v_work, u_work) } else { (u_work, v_work) };
    Ok(SvdTriple { sigma, u, v, degenerate })
}

/// Dot product `a^H b`.
pub fn cdot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn cnorm(a: &[Complex64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}
