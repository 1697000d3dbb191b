//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Complex, DMatrix, DVector, Schur, SymmetricEigen};

/// Eigenvalues of a square real matrix. Returns `None` if the Schur
/// iteration fails to converge.
pub fn eigenvalues(m: &DMatrix<f64>) -> Option<Vec<Complex<f64>>> {
    assert!(m.is_square(), "eigenvalues of a non-square matrix");
    if m.nrows() == 0 {
        return Some(Vec::new());
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, 10_000)?;
    Some(schur.complex_eigenvalues().iter().copied().collect())
}

/// Largest eigenvalue modulus. Non-convergence is reported as infinity.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    match eigenvalues(m) {
        Some(ev) => ev.iter().map(|z| z.norm()).fold(0.0, f64::max),
        None => f64::INFINITY,
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// PSD to a tolerance relative to the matrix scale.
pub fn is_psd(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    min_sym_eigenvalue(m) >= -rel_tol * scale
}

/// Numerical rank of a complex matrix `re + i·im`, via its real embedding
/// `[[re, -im], [im, re]]` (whose rank is twice the complex rank).
fn complex_rank(re: &DMatrix<f64>, im: &DMatrix<f64>, rel_tol: f64) -> usize {
    let (r, c) = re.shape();
    let mut big = DMatrix::zeros(2 * r, 2 * c);
    big.view_mut((0, 0), (r, c)).copy_from(re);
    big.view_mut((0, c), (r, c)).copy_from(&(-im));
    big.view_mut((r, 0), (r, c)).copy_from(im);
    big.view_mut((r, c), (r, c)).copy_from(re);
    let sv = big.singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count() / 2
}

/// Outcome of a PBH test at each eigenvalue with modulus ≥ 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PbhReport {
    pub passed: bool,
    /// Eigenvalues at which the rank test failed.
    pub failing: Vec<Complex<f64>>,
}

const PBH_TOL: f64 = 1e-9;

/// Discrete-time stabilizability of (A, B): `rank [λI − A, B] = n` for every
/// eigenvalue λ of A with |λ| ≥ 1.
pub fn stabilizable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> PbhReport {
    let n = a.nrows();
    let ev = eigenvalues(a).unwrap_or_default();
    let mut failing = Vec::new();
    for lam in ev.into_iter().filter(|z| z.norm() >= 1.0 - 1e-12) {
        let mut re = DMatrix::zeros(n, n + b.ncols());
        let mut im = DMatrix::zeros(n, n + b.ncols());
        re.view_mut((0, 0), (n, n)).copy_from(&(-a));
        for i in 0..n {
            re[(i, i)] += lam.re;
            im[(i, i)] = lam.im;
        }
        re.view_mut((0, n), (n, b.ncols())).copy_from(b);
        if complex_rank(&re, &im, PBH_TOL) < n {
            failing.push(lam);
        }
    }
    PbhReport { passed: failing.is_empty(), failing }
}

/// Discrete-time detectability of (A, C), the dual of [`stabilizable`].
pub fn detectable(a: &DMatrix<f64>, c: &DMatrix<f64>) -> PbhReport {
    stabilizable(&a.transpose(), &c.transpose())
}

/// Solves the Stein equation `X = A X Aᵀ + Q` by Kronecker vectorisation.
/// Intended for the small state dimensions used here.
pub fn dlyap(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let nn = n * n;
    let mut lhs = DMatrix::<f64>::identity(nn, nn);
    // vec(A X Aᵀ) = (A ⊗ A) vec(X), column-major vec.
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    lhs[(j * n + i, l * n + k)] -= a[(i, k)] * a[(j, l)];
                }
            }
        }
    }
    let rhs = DVector::from_column_slice(q.as_slice());
    let x = lhs.lu().solve(&rhs)?;
    Some(symmetrize(&DMatrix::from_column_slice(n, n, x.as_slice())))
}

/// Least-squares solve of `a · x = b` through the SVD.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.amax();
    let eps = smax * f64::EPSILON * (a.nrows().max(a.ncols()) as f64);
    svd.solve(b, eps).ok()
}

/// Roots of the monic polynomial `z^n + c[0] z^(n-1) + … + c[n-1]`.
pub fn monic_roots(c: &[f64]) -> Vec<Complex<f64>> {
    let n = c.len();
    if n == 0 {
        return Vec::new();
    }
    let mut comp = DMatrix::zeros(n, n);
    for (j, cj) in c.iter().enumerate() {
        comp[(0, j)] = -cj;
    }
    for i in 1..n {
        comp[(i, i - 1)] = 1.0;
    }
    eigenvalues(&comp).unwrap_or_else(|| vec![Complex::new(f64::NAN, f64::NAN); n])
}

/// Inverse of [`monic_roots`]: coefficients `c` of `Π (z − rᵢ)` with the
/// leading 1 dropped. Roots must come in conjugate pairs.
pub fn monic_from_roots(roots: &[Complex<f64>]) -> Vec<f64> {
    let mut poly = vec![Complex::new(1.0, 0.0)];
    for r in roots {
        let mut next = vec![Complex::new(0.0, 0.0); poly.len() + 1];
        for (i, p) in poly.iter().enumerate() {
            next[i] += p;
            next[i + 1] -= p * r;
        }
        poly = next;
    }
    poly.iter().skip(1).map(|z| z.re).collect()
}
