//! Dense symmetric-matrix numerics.
//!
//! Everything here reduces to one deterministic primitive: the symmetric
//! eigendecomposition. On top of it we build PSD square roots, the Bures and
//! Gelbrich distances, spectral tubes around a nominal covariance, Loewner
//! order tests, and Thompson's part metric on the positive definite cone.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum PsdError {
    #[error("matrix is not positive semidefinite: min eigenvalue {min_eig:.6e} below -{tol:.3e}")]
    NotPsd { min_eig: f64, tol: f64 },
    #[error("matrix is not positive definite: min eigenvalue {min_eig:.6e}")]
    NotPd { min_eig: f64 },
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("matrix is not symmetric: max asymmetry {asym:.6e}")]
    NotSymmetric { asym: f64 },
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix must be at least 1x1")]
    Empty,
}

/// Admission tolerance for nearly-PSD matrices, relative to the spectral scale.
pub fn psd_tolerance(spectral_scale: f64) -> f64 {
    1e-9 * (1.0 + spectral_scale.abs())
}

/// Dense symmetric matrix with exactly symmetric storage.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Builds from a square matrix, rejecting visible asymmetry.
    ///
    /// Entries are symmetrized exactly, so `get(i, j) == get(j, i)` holds
    /// bitwise afterwards.
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self, PsdError> {
        if m.nrows() != m.ncols() {
            return Err(PsdError::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        if m.nrows() == 0 {
            return Err(PsdError::Empty);
        }
        let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut asym = 0.0f64;
        for j in 0..m.ncols() {
            for i in 0..j {
                asym = asym.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        if asym > 1e-8 * (1.0 + scale) {
            return Err(PsdError::NotSymmetric { asym });
        }
        Ok(Self::symmetrize(m))
    }

    /// Symmetrizes `(M + M^T)/2` without an asymmetry check.
    pub fn symmetrize(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        let mut s = m.clone_owned();
        for j in 0..n {
            for i in 0..j {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        SymMatrix(s)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, PsdError> {
        let n = rows.len();
        if n == 0 {
            return Err(PsdError::Empty);
        }
        if rows.iter().any(|r| r.len() != n) {
            return Err(PsdError::NotSquare {
                rows: n,
                cols: rows.iter().map(|r| r.len()).max().unwrap_or(0),
            });
        }
        let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Self::from_matrix(&m)
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(DMatrix::zeros(n, n))
    }

    pub fn scalar(v: f64) -> Self {
        SymMatrix(DMatrix::from_element(1, 1, v))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_row_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| (0..self.dim()).map(|j| self.0[(i, j)]).collect())
            .collect()
    }

    pub fn add(&self, other: &SymMatrix) -> Result<SymMatrix, PsdError> {
        check_same_dim(self, other)?;
        Ok(SymMatrix(&self.0 + &other.0))
    }

    pub fn sub(&self, other: &SymMatrix) -> Result<SymMatrix, PsdError> {
        check_same_dim(self, other)?;
        Ok(SymMatrix(&self.0 - &other.0))
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix(&self.0 * s)
    }

    pub fn add_scaled_identity(&self, s: f64) -> SymMatrix {
        let mut m = self.0.clone_owned();
        for i in 0..m.nrows() {
            m[(i, i)] += s;
        }
        SymMatrix(m)
    }

    /// Congruence `B S B^T`, symmetrized exactly.
    pub fn transform(&self, b: &DMatrix<f64>) -> SymMatrix {
        SymMatrix::symmetrize(&(b * &self.0 * b.transpose()))
    }

    /// Eigenpairs sorted by ascending eigenvalue (deterministic ordering).
    pub fn eigen_pairs(&self) -> (DVector<f64>, DMatrix<f64>) {
        let eig = self.0.clone_owned().symmetric_eigen();
        let n = self.dim();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[a]
                .partial_cmp(&eig.eigenvalues[b])
                .expect("eigenvalues are finite")
        });
        let values = DVector::from_fn(n, |i, _| eig.eigenvalues[order[i]]);
        let mut vectors = DMatrix::zeros(n, n);
        for (k, &idx) in order.iter().enumerate() {
            vectors.set_column(k, &eig.eigenvectors.column(idx));
        }
        (values, vectors)
    }

    pub fn eigenvalues(&self) -> DVector<f64> {
        self.eigen_pairs().0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let (vals, _) = self.eigen_pairs();
        vals[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        let (vals, _) = self.eigen_pairs();
        vals[vals.len() - 1]
    }

    /// Spectral norm, i.e. the largest absolute eigenvalue.
    pub fn spectral_scale(&self) -> f64 {
        let (vals, _) = self.eigen_pairs();
        vals.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    /// Applies `f` to the eigenvalues, keeping the eigenvectors.
    pub fn map_eigenvalues<F: Fn(f64) -> f64>(&self, f: F) -> SymMatrix {
        let (vals, vecs) = self.eigen_pairs();
        let d = DMatrix::from_diagonal(&vals.map(f));
        SymMatrix::symmetrize(&(&vecs * d * vecs.transpose()))
    }

    /// Clamps negative eigenvalues to zero.
    pub fn clamp_psd(&self) -> SymMatrix {
        self.map_eigenvalues(|l| l.max(0.0))
    }

    pub fn is_psd(&self, tol: f64) -> bool {
        self.min_eigenvalue() >= -tol
    }

    /// Requires `self` to be PSD within the relative admission tolerance.
    pub fn require_psd(&self) -> Result<(), PsdError> {
        let (vals, _) = self.eigen_pairs();
        let scale = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let tol = psd_tolerance(scale);
        if vals[0] < -tol {
            return Err(PsdError::NotPsd {
                min_eig: vals[0],
                tol,
            });
        }
        Ok(())
    }

    pub fn require_pd(&self) -> Result<(), PsdError> {
        let min_eig = self.min_eigenvalue();
        if min_eig <= 0.0 {
            return Err(PsdError::NotPd { min_eig });
        }
        Ok(())
    }

    /// Inverse through the eigendecomposition; requires positive definiteness.
    pub fn inverse_pd(&self) -> Result<SymMatrix, PsdError> {
        self.require_pd()?;
        Ok(self.map_eigenvalues(|l| 1.0 / l))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }
}

fn check_same_dim(a: &SymMatrix, b: &SymMatrix) -> Result<(), PsdError> {
    if a.dim() != b.dim() {
        return Err(PsdError::DimMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(())
}

/// Eigenvalue interval containing every covariance in a Bures ball.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralTube {
    pub lower: f64,
    pub upper: f64,
}

/// PSD matrix square root; eigenvalues below the admission tolerance are
/// rejected, small negatives are clamped to zero.
pub fn sqrtm_psd(m: &SymMatrix) -> Result<SymMatrix, PsdError> {
    let (vals, vecs) = m.eigen_pairs();
    let scale = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tol = psd_tolerance(scale);
    if vals[0] < -tol {
        return Err(PsdError::NotPsd {
            min_eig: vals[0],
            tol,
        });
    }
    let d = DMatrix::from_diagonal(&vals.map(|l| l.max(0.0).sqrt()));
    Ok(SymMatrix::symmetrize(&(&vecs * d * vecs.transpose())))
}

/// Squared Bures–Wasserstein distance between PSD matrices.
///
/// The trace argument is clamped at zero before the outer square root to
/// guard against floating-point negativity near coincident arguments.
pub fn bures_distance_sq(a: &SymMatrix, b: &SymMatrix) -> Result<f64, PsdError> {
    check_same_dim(a, b)?;
    a.require_psd()?;
    b.require_psd()?;
    let sb = sqrtm_psd(b)?;
    let inner = SymMatrix::symmetrize(&(sb.as_matrix() * a.as_matrix() * sb.as_matrix()));
    let cross = sqrtm_psd(&inner.clamp_psd())?;
    Ok((a.trace() + b.trace() - 2.0 * cross.trace()).max(0.0))
}

/// Bures–Wasserstein distance `sqrt(Tr[A + B - 2 (B^{1/2} A B^{1/2})^{1/2}])`.
pub fn bures_distance(a: &SymMatrix, b: &SymMatrix) -> Result<f64, PsdError> {
    Ok(bures_distance_sq(a, b)?.sqrt())
}

/// Gelbrich distance between Gaussian surrogates `(mu1, s1)` and `(mu2, s2)`.
pub fn gelbrich_distance(
    mu1: &DVector<f64>,
    s1: &SymMatrix,
    mu2: &DVector<f64>,
    s2: &SymMatrix,
) -> Result<f64, PsdError> {
    if mu1.len() != mu2.len() {
        return Err(PsdError::DimMismatch {
            left: mu1.len(),
            right: mu2.len(),
        });
    }
    if mu1.len() != s1.dim() {
        return Err(PsdError::DimMismatch {
            left: mu1.len(),
            right: s1.dim(),
        });
    }
    let db = bures_distance_sq(s1, s2)?;
    Ok(((mu1 - mu2).norm_squared() + db).sqrt())
}

/// A-priori eigenvalue bounds for every `X` with `bures(X, xhat) <= theta`:
/// `lower = max(0, sqrt(lambda_min) - theta)^2`, `upper = (sqrt(lambda_max) + theta)^2`.
pub fn spectral_tube(xhat: &SymMatrix, theta: f64) -> Result<SpectralTube, PsdError> {
    xhat.require_psd()?;
    let (vals, _) = xhat.eigen_pairs();
    let lmin = vals[0].max(0.0);
    let lmax = vals[vals.len() - 1].max(0.0);
    let lower = (lmin.sqrt() - theta).max(0.0).powi(2);
    let upper = (lmax.sqrt() + theta).powi(2);
    Ok(SpectralTube { lower, upper })
}

/// Thompson part metric `log max(lambda_max(P^{-1}Q), lambda_max(Q^{-1}P))`
/// on positive definite matrices.
pub fn thompson_metric(p: &SymMatrix, q: &SymMatrix) -> Result<f64, PsdError> {
    check_same_dim(p, q)?;
    p.require_pd()?;
    q.require_pd()?;
    // Generalized spectrum of (P, Q) through the Cholesky factor of P:
    // eig(P^{-1}Q) = eig(L^{-1} Q L^{-T}).
    let chol = p
        .as_matrix()
        .clone_owned()
        .cholesky()
        .ok_or(PsdError::NotPd {
            min_eig: p.min_eigenvalue(),
        })?;
    let l = chol.l();
    let linv_q = l
        .solve_lower_triangular(q.as_matrix())
        .ok_or(PsdError::NotPd { min_eig: 0.0 })?;
    let m = l
        .solve_lower_triangular(&linv_q.transpose())
        .ok_or(PsdError::NotPd { min_eig: 0.0 })?;
    let gen = SymMatrix::symmetrize(&m);
    let (vals, _) = gen.eigen_pairs();
    let lmin = vals[0];
    let lmax = vals[vals.len() - 1];
    if lmin <= 0.0 {
        return Err(PsdError::NotPd { min_eig: lmin });
    }
    Ok(lmax.ln().max(-lmin.ln()).max(0.0))
}

/// Loewner order test: `A <= B` iff `lambda_min(B - A) >= -tol`.
pub fn loewner_leq(a: &SymMatrix, b: &SymMatrix, tol: f64) -> Result<bool, PsdError> {
    let diff = b.sub(a)?;
    Ok(diff.min_eigenvalue() >= -tol)
}

/// Largest singular value of a rectangular matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    let gram = SymMatrix::symmetrize(&(m.transpose() * m));
    gram.max_eigenvalue().max(0.0).sqrt()
}

/// Smallest singular value of a rectangular matrix (tall or square).
pub fn smallest_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.nrows() < m.ncols() {
        // sigma_min of a wide matrix is that of its transpose's gram only
        // when full rank; fall back to the gram of the short side.
        let gram = SymMatrix::symmetrize(&(m * m.transpose()));
        return gram.min_eigenvalue().max(0.0).sqrt();
    }
    let gram = SymMatrix::symmetrize(&(m.transpose() * m));
    gram.min_eigenvalue().max(0.0).sqrt()
}

/// Spectral radius of a general square matrix via its complex eigenvalues.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return f64::NAN;
    }
    m.complex_eigenvalues()
        .iter()
        .fold(0.0f64, |a, z| a.max(z.norm()))
}

#[cfg(test)]
pub(crate) mod test_oracles {
    use super::*;

    /// Procrustes form of the Bures distance:
    /// `min_U || A^{1/2} - B^{1/2} U ||_F` over orthogonal `U`, with the
    /// minimizer given by the orthogonal polar factor of `B^{1/2} A^{1/2}`.
    pub fn bures_procrustes(a: &SymMatrix, b: &SymMatrix) -> f64 {
        let sa = sqrtm_psd(a).unwrap();
        let sb = sqrtm_psd(b).unwrap();
        let m = sb.as_matrix() * sa.as_matrix();
        let svd = m.clone_owned().svd(true, true);
        let u = svd.u.unwrap();
        let vt = svd.v_t.unwrap();
        let polar = u * vt;
        (sa.as_matrix() - sb.as_matrix() * polar).norm()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngExt;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_psd(n: usize, rng: &mut ChaCha8Rng) -> SymMatrix {
        let g = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        SymMatrix::symmetrize(&(&g * g.transpose()))
    }

    fn random_pd(n: usize, rng: &mut ChaCha8Rng) -> SymMatrix {
        random_psd(n, rng).add_scaled_identity(0.5)
    }

    #[test]
    fn sqrtm_identity_and_diagonal() {
        let s = sqrtm_psd(&SymMatrix::identity(2)).unwrap();
        assert!((s.as_matrix() - DMatrix::<f64>::identity(2, 2)).norm() < 1e-14);
        let d = sqrtm_psd(&SymMatrix::from_diagonal(&[4.0, 9.0])).unwrap();
        assert!((d.get(0, 0) - 2.0).abs() < 1e-13);
        assert!((d.get(1, 1) - 3.0).abs() < 1e-13);
        assert!(d.get(0, 1).abs() < 1e-13);
    }

    #[test]
    fn sqrtm_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [1usize, 2, 3, 5, 8] {
            let m = random_psd(n, &mut rng);
            let s = sqrtm_psd(&m).unwrap();
            let resid = (s.as_matrix() * s.as_matrix() - m.as_matrix()).norm();
            assert!(
                resid <= 1e-10 * (1.0 + m.frobenius_norm()),
                "residual {resid} too large at n={n}"
            );
        }
    }

    #[test]
    fn sqrtm_rejects_indefinite() {
        let m = SymMatrix::from_diagonal(&[1.0, -1.0]);
        assert!(matches!(sqrtm_psd(&m), Err(PsdError::NotPsd { .. })));
    }

    #[test]
    fn bures_trivial_cases() {
        let i2 = SymMatrix::identity(2);
        assert!(bures_distance(&i2, &i2).unwrap() < 1e-12);
        let d = bures_distance(&SymMatrix::scalar(4.0), &SymMatrix::scalar(1.0)).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bures_matches_procrustes_oracle() {
        let a = SymMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let b = SymMatrix::from_rows(&[vec![3.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let direct = bures_distance(&a, &b).unwrap();
        let oracle = test_oracles::bures_procrustes(&a, &b);
        assert!(
            (direct - oracle).abs() < 1e-10,
            "direct {direct} vs procrustes {oracle}"
        );

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = random_psd(3, &mut rng);
            let b = random_psd(3, &mut rng);
            let direct = bures_distance(&a, &b).unwrap();
            let oracle = test_oracles::bures_procrustes(&a, &b);
            assert!((direct - oracle).abs() < 1e-8);
        }
    }

    #[test]
    fn bures_symmetry_randomized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let a = random_psd(4, &mut rng);
            let b = random_psd(4, &mut rng);
            let ab = bures_distance(&a, &b).unwrap();
            let ba = bures_distance(&b, &a).unwrap();
            assert!((ab - ba).abs() < 1e-8, "asymmetry {}", (ab - ba).abs());
        }
    }

    #[test]
    fn bures_commuting_diagonal_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let a: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 3.0).collect();
            let b: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 3.0).collect();
            let da = SymMatrix::from_diagonal(&a);
            let db = SymMatrix::from_diagonal(&b);
            let expected: f64 = a
                .iter()
                .zip(&b)
                .map(|(x, y)| (x.sqrt() - y.sqrt()).powi(2))
                .sum::<f64>()
                .sqrt();
            let got = bures_distance(&da, &db).unwrap();
            assert!((got - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn gelbrich_cases() {
        let i2 = SymMatrix::identity(2);
        let zero = DVector::from_row_slice(&[0.0, 0.0]);
        assert!(gelbrich_distance(&zero, &i2, &zero, &i2).unwrap() < 1e-12);

        let mu2 = DVector::from_row_slice(&[3.0, 4.0]);
        let d = gelbrich_distance(&zero, &i2, &mu2, &i2).unwrap();
        assert!((d - 5.0).abs() < 1e-12);

        let one = DVector::from_row_slice(&[0.0]);
        let d = gelbrich_distance(
            &one,
            &SymMatrix::scalar(4.0),
            &one,
            &SymMatrix::scalar(1.0),
        )
        .unwrap();
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tube_examples() {
        let t = spectral_tube(&SymMatrix::identity(2), 0.5).unwrap();
        assert!((t.lower - 0.25).abs() < 1e-12);
        assert!((t.upper - 2.25).abs() < 1e-12);

        let t = spectral_tube(&SymMatrix::from_diagonal(&[4.0, 9.0]), 1.0).unwrap();
        assert!((t.lower - 1.0).abs() < 1e-12);
        assert!((t.upper - 16.0).abs() < 1e-12);

        let x = SymMatrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap();
        let t = spectral_tube(&x, 0.0).unwrap();
        assert!((t.lower - x.min_eigenvalue()).abs() < 1e-12);
        assert!((t.upper - x.max_eigenvalue()).abs() < 1e-12);
    }

    #[test]
    fn tube_monotone_in_radius() {
        let x = SymMatrix::from_rows(&[vec![2.0, 0.4], vec![0.4, 0.5]]).unwrap();
        let mut prev = spectral_tube(&x, 0.0).unwrap();
        for k in 1..20 {
            let t = spectral_tube(&x, 0.1 * k as f64).unwrap();
            assert!(t.lower <= prev.lower + 1e-15);
            assert!(t.upper >= prev.upper - 1e-15);
            prev = t;
        }
    }

    #[test]
    fn tube_soundness_randomized() {
        // Perturb xhat within a Bures ball and check the eigenvalue bounds.
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let xhat = random_psd(3, &mut rng).add_scaled_identity(0.3);
        let theta = 0.7;
        let tube = spectral_tube(&xhat, theta).unwrap();
        for _ in 0..50 {
            let cand = {
                let p = random_psd(3, &mut rng);
                let t = rng.random::<f64>();
                SymMatrix::symmetrize(
                    &(xhat.as_matrix() * (1.0 - 0.3 * t) + p.as_matrix() * (0.3 * t)),
                )
            };
            let d = bures_distance(&cand, &xhat).unwrap();
            if d <= theta {
                let (vals, _) = cand.eigen_pairs();
                assert!(vals[0] >= tube.lower - 1e-9);
                assert!(vals[vals.len() - 1] <= tube.upper + 1e-9);
            }
        }
    }

    #[test]
    fn thompson_examples() {
        let p = SymMatrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        assert!(thompson_metric(&p, &p).unwrap() < 1e-12);

        let i = SymMatrix::identity(3);
        let d = thompson_metric(&i, &i.scale(2.0)).unwrap();
        assert!((d - 2.0f64.ln()).abs() < 1e-12);

        let d = thompson_metric(
            &SymMatrix::from_diagonal(&[1.0, 4.0]),
            &SymMatrix::from_diagonal(&[2.0, 2.0]),
        )
        .unwrap();
        assert!((d - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn thompson_congruence_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let p = random_pd(3, &mut rng);
            let q = random_pd(3, &mut rng);
            let m = DMatrix::from_fn(3, 3, |_, _| rng.random::<f64>() * 2.0 - 1.0)
                + DMatrix::<f64>::identity(3, 3) * 1.5;
            let d0 = thompson_metric(&p, &q).unwrap();
            let pm = SymMatrix::symmetrize(&(m.transpose() * p.as_matrix() * &m));
            let qm = SymMatrix::symmetrize(&(m.transpose() * q.as_matrix() * &m));
            let d1 = thompson_metric(&pm, &qm).unwrap();
            assert!((d0 - d1).abs() < 1e-8, "congruence broke: {d0} vs {d1}");
        }
    }

    #[test]
    fn thompson_rejects_indefinite() {
        let p = SymMatrix::from_diagonal(&[1.0, 0.0]);
        assert!(thompson_metric(&p, &SymMatrix::identity(2)).is_err());
    }

    #[test]
    fn loewner_cases() {
        let i = SymMatrix::identity(2);
        let two = i.scale(2.0);
        assert!(loewner_leq(&i, &two, 1e-9).unwrap());
        assert!(!loewner_leq(&two, &i, 1e-9).unwrap());
        assert!(loewner_leq(&i, &i, 1e-9).unwrap());
        assert!(loewner_leq(&i, &SymMatrix::identity(3), 1e-9).is_err());
    }

    #[test]
    fn spectral_radius_and_norms() {
        let m = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]);
        assert!((spectral_radius(&m) - 0.5).abs() < 1e-12);
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!((spectral_radius(&rot) - 1.0).abs() < 1e-12);
        assert!((spectral_norm(&rot) - 1.0).abs() < 1e-12);
        let tall = DMatrix::from_row_slice(3, 1, &[3.0, 0.0, 4.0]);
        assert!((spectral_norm(&tall) - 5.0).abs() < 1e-12);
        assert!((smallest_singular_value(&tall) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn symmetry_is_exact_after_construction() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.3 + 1e-12, 0.3, 2.0]);
        let s = SymMatrix::from_matrix(&m).unwrap();
        assert_eq!(s.get(0, 1).to_bits(), s.get(1, 0).to_bits());
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 2.0]);
        assert!(matches!(
            SymMatrix::from_matrix(&bad),
            Err(PsdError::NotSymmetric { .. })
        ));
    }
}
