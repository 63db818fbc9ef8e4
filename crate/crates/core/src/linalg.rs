//! Small dense linear-algebra kernels: symmetric eigendecomposition,
//! least-squares through the normal equations, sample covariance.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A matrix whose smallest Gram eigenvalue falls below this fraction of the
/// largest is treated as rank-deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;

const SYMMETRY_TOLERANCE: f64 = 1e-9;
const JACOBI_RELATIVE_STOP: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigen-pairs of a symmetric matrix, eigenvalues in descending order.
/// Column `k` of `vectors` pairs with `values[k]`.
#[derive(Debug, Clone)]
pub struct SymEigen<T> {
    pub values: Tensor<T>,
    pub vectors: Tensor<T>,
    pub sweeps: usize,
}

impl<T: Scalar> SymEigen<T> {
    pub fn max(&self) -> T {
        self.values.data()[0]
    }

    pub fn min(&self) -> T {
        *self.values.data().last().unwrap()
    }

    /// Rebuilds V diag(f(λ)) Vᵀ.
    pub fn reconstruct_with(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        let n = self.values.numel();
        let v = &self.vectors;
        let lam: Vec<T> = self.values.data().iter().map(|&l| f(l)).collect();
        let mut out = Tensor::zeros(&[n, n]);
        for i in 0..n {
            for j in 0..n {
                let mut s = T::zero();
                for (k, &l) in lam.iter().enumerate() {
                    s += v.at(i, k) * l * v.at(j, k);
                }
                out.set(i, j, s);
            }
        }
        out
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
pub fn sym_eigen<T: Scalar>(m: &Tensor<T>) -> Result<SymEigen<T>> {
    let n = m.rows();
    if m.shape().len() != 2 || m.cols() != n {
        return Err(Error::contract(format!(
            "sym_eigen needs a square matrix, got {:?}",
            m.shape()
        )));
    }
    let scale = m.max_abs().max(T::one());
    for i in 0..n {
        for j in i + 1..n {
            if (m.at(i, j) - m.at(j, i)).abs() > T::c(SYMMETRY_TOLERANCE) * scale {
                return Err(Error::contract(format!(
                    "sym_eigen input is not symmetric at ({i},{j}): {} vs {}",
                    m.at(i, j),
                    m.at(j, i)
                )));
            }
        }
    }

    // Work on a symmetrized row-major copy; `vt` holds the eigenvectors as rows.
    let mut a: Vec<T> = m.data().to_vec();
    for i in 0..n {
        for j in i + 1..n {
            let avg = (a[i * n + j] + a[j * n + i]) * T::c(0.5);
            a[i * n + j] = avg;
            a[j * n + i] = avg;
        }
    }
    let mut vt: Vec<T> = Tensor::<T>::identity(n).data().to_vec();

    let off_norm = |a: &[T]| -> T {
        let mut s = T::zero();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i * n + j] * a[i * n + j];
                }
            }
        }
        s.sqrt()
    };
    let frobenius = a.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
    let initial = off_norm(&a);
    let floor = T::epsilon() * T::c(1e-3) * frobenius;
    let stop = (initial * T::c(JACOBI_RELATIVE_STOP)).max(floor);

    // Applies [c −s; s c] to rows p < q of a row-major n-column buffer.
    let rotate_rows = |buf: &mut [T], p: usize, q: usize, c: T, s: T| {
        let (head, tail) = buf.split_at_mut(q * n);
        let (rp, rq) = (&mut head[p * n..(p + 1) * n], &mut tail[..n]);
        for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
            let (xp, xq) = (*x, *y);
            *x = c * xp - s * xq;
            *y = s * xp + c * xq;
        }
    };

    let mut sweeps = 0;
    while sweeps < JACOBI_MAX_SWEEPS && off_norm(&a) > stop {
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (T::c(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                // Row rotation, then the column rotation by symmetry: off the
                // (p, q) block the new columns equal the new rows.
                let (app, aqq) = (a[p * n + p], a[q * n + q]);
                rotate_rows(&mut a, p, q, c, s);
                for k in 0..n {
                    a[k * n + p] = a[p * n + k];
                    a[k * n + q] = a[q * n + k];
                }
                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = T::zero();
                a[q * n + p] = T::zero();
                rotate_rows(&mut vt, p, q, c, s);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].partial_cmp(&a[i * n + i]).unwrap_or(std::cmp::Ordering::Equal));
    let values = Tensor::vector(order.iter().map(|&i| a[i * n + i]).collect());
    let mut vectors = Tensor::zeros(&[n, n]);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors.set(k, dst, vt[src * n + k]);
        }
    }
    Ok(SymEigen {
        values,
        vectors,
        sweeps,
    })
}

/// uᵀu for a tall matrix u.
pub fn gram<T: Scalar>(u: &Tensor<T>) -> Tensor<T> {
    let n = u.cols();
    let mut g = vec![T::zero(); n * n];
    for r in 0..u.rows() {
        let row = u.row(r);
        for (i, &ri) in row.iter().enumerate() {
            for (gij, &rj) in g[i * n + i..(i + 1) * n].iter_mut().zip(&row[i..]) {
                *gij += ri * rj;
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            g[i * n + j] = g[j * n + i];
        }
    }
    Tensor::matrix(n, n, g).expect("n×n buffer")
}

/// uᵀy for u `[m×n]` and y of length m.
pub fn transpose_apply<T: Scalar>(u: &Tensor<T>, y: &[T]) -> Result<Tensor<T>> {
    let (m, n) = (u.rows(), u.cols());
    if y.len() != m {
        return Err(Error::Dimension {
            op: "transpose_apply",
            lhs: u.shape().to_vec(),
            rhs: vec![y.len()],
        });
    }
    let mut out = vec![T::zero(); n];
    for (r, &yr) in y.iter().enumerate() {
        for (o, &urc) in out.iter_mut().zip(u.row(r)) {
            *o += urc * yr;
        }
    }
    Ok(Tensor::vector(out))
}

/// Least-squares solver for a full-column-rank matrix u, built on the
/// eigendecomposition of uᵀu.
#[derive(Debug, Clone)]
pub struct NormalSolver<T> {
    u: Tensor<T>,
    eigen: SymEigen<T>,
}

impl<T: Scalar> NormalSolver<T> {
    pub fn new(u: &Tensor<T>) -> Result<Self> {
        if u.shape().len() != 2 {
            return Err(Error::contract(format!(
                "expected a matrix, got shape {:?}",
                u.shape()
            )));
        }
        let eigen = sym_eigen(&gram(u))?;
        let (hi, lo) = (eigen.max(), eigen.min());
        let tolerance = T::c(RANK_TOLERANCE) * hi;
        if !(lo > tolerance) || hi <= T::zero() {
            return Err(Error::Singular {
                eigenvalue: lo.f64(),
                tolerance: tolerance.f64(),
            });
        }
        Ok(Self {
            u: u.clone(),
            eigen,
        })
    }

    /// Eigen-pairs of uᵀu.
    pub fn gram_eigen(&self) -> &SymEigen<T> {
        &self.eigen
    }

    /// (uᵀu)⁻¹.
    pub fn gram_inverse(&self) -> Tensor<T> {
        self.eigen.reconstruct_with(|l| T::one() / l)
    }

    /// Solves (uᵀu) c = r.
    pub fn solve_gram(&self, rhs: &[T]) -> Tensor<T> {
        let v = &self.eigen.vectors;
        let n = rhs.len();
        let mut coeff = vec![T::zero(); n];
        for (k, &lam) in self.eigen.values.data().iter().enumerate() {
            let mut proj = T::zero();
            for (i, &r) in rhs.iter().enumerate() {
                proj += v.at(i, k) * r;
            }
            let w = proj / lam;
            for (i, c) in coeff.iter_mut().enumerate() {
                *c += w * v.at(i, k);
            }
        }
        Tensor::vector(coeff)
    }

    /// (uᵀu)⁻¹uᵀy.
    pub fn apply(&self, y: &[T]) -> Result<Tensor<T>> {
        let uty = transpose_apply(&self.u, y)?;
        Ok(self.solve_gram(uty.data()))
    }

    /// u(uᵀu)⁻¹, the left-inverse's transpose.
    pub fn pseudo_inverse_transpose(&self) -> Tensor<T> {
        self.u
            .matmul(&self.gram_inverse())
            .expect("gram inverse matches u columns")
    }

    /// u(uᵀu)⁻¹uᵀ, the orthogonal projector onto col(u).
    pub fn projector(&self) -> Tensor<T> {
        self.pseudo_inverse_transpose()
            .matmul(&self.u.transpose())
            .expect("projector shapes")
    }
}

/// Eigenvalues and Cholesky factor of uᵀu, for callers that need solves and
/// the spectrum but no eigenvectors.
#[derive(Debug, Clone)]
pub struct GramFactor {
    /// Eigenvalues of uᵀu, descending.
    pub values: Vec<f64>,
    cholesky: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl GramFactor {
    /// Fails with `Singular` under the same rank tolerance as `NormalSolver`.
    pub fn new(u: &Tensor<f64>) -> Result<Self> {
        let n = u.cols();
        let g = gram(u);
        let m = nalgebra::DMatrix::from_row_slice(n, n, g.data());
        let mut values: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
        values.sort_by(|a, b| b.total_cmp(a));
        let (hi, lo) = (values[0], values[n - 1]);
        let tolerance = RANK_TOLERANCE * hi;
        let singular = Error::Singular { eigenvalue: lo, tolerance };
        if !(lo > tolerance) || hi <= 0.0 {
            return Err(singular);
        }
        let cholesky = nalgebra::Cholesky::new(m).ok_or(singular)?;
        Ok(Self { values, cholesky })
    }

    /// Solves (uᵀu) c = r.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let b = nalgebra::DVector::from_column_slice(rhs);
        self.cholesky.solve(&b).iter().copied().collect()
    }
}

/// Least-squares coefficients (uᵀu)⁻¹uᵀy of y on the columns of u.
pub fn pseudo_inverse_apply<T: Scalar>(u: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    NormalSolver::new(u)?.apply(y.data())
}

/// Trace of the sample covariance (denominator A−1) of A equal-length vectors.
pub fn covariance_trace<T: Scalar>(vectors: &[Tensor<T>]) -> Result<T> {
    let mean = sample_mean(vectors)?;
    let denom = T::c((vectors.len() - 1) as f64);
    let mut total = T::zero();
    for v in vectors {
        for (&x, &m) in v.data().iter().zip(mean.data()) {
            total += (x - m) * (x - m);
        }
    }
    Ok(total / denom)
}

/// Sample covariance matrix (denominator A−1).
pub fn covariance_matrix<T: Scalar>(vectors: &[Tensor<T>]) -> Result<Tensor<T>> {
    let mean = sample_mean(vectors)?;
    let n = mean.numel();
    let denom = T::c((vectors.len() - 1) as f64);
    let mut cov = Tensor::zeros(&[n, n]);
    for v in vectors {
        let d: Vec<T> = v.data().iter().zip(mean.data()).map(|(&x, &m)| x - m).collect();
        for i in 0..n {
            for j in 0..n {
                let cur = cov.at(i, j);
                cov.set(i, j, cur + d[i] * d[j]);
            }
        }
    }
    Ok(cov.scale(T::one() / denom))
}

fn sample_mean<T: Scalar>(vectors: &[Tensor<T>]) -> Result<Tensor<T>> {
    if vectors.len() < 2 {
        return Err(Error::contract(format!(
            "covariance needs at least 2 vectors, got {}",
            vectors.len()
        )));
    }
    let n = vectors[0].numel();
    if let Some(bad) = vectors.iter().find(|v| v.numel() != n) {
        return Err(Error::Dimension {
            op: "covariance",
            lhs: vectors[0].shape().to_vec(),
            rhs: bad.shape().to_vec(),
        });
    }
    Ok(Tensor::stack_rows(vectors)?.mean_rows())
}

pub fn trace<T: Scalar>(m: &Tensor<T>) -> T {
    (0..m.rows().min(m.cols())).map(|i| m.at(i, i)).sum()
}
