//! Dense conic solver for small LMI-structured programs.
//!
//! Problems are given in the standard form
//!
//! ```text
//! minimize    c' x
//! subject to  A x + s = b,   s in K
//! ```
//!
//! with `K` a product of zero, nonnegative, and (scaled-vectorized) PSD
//! cones. The solver is a primal-dual interior-point method with
//! Nesterov-Todd scaling and a Mehrotra predictor-corrector step; all cone
//! operations go through the symmetric eigendecomposition, so runs are
//! deterministic given identical inputs.

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

use crate::psd::SymMatrix;

pub const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Length of the scaled vectorization of an `n x n` symmetric matrix.
pub fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Scaled vectorization: upper triangle column-wise, off-diagonals times
/// `sqrt(2)`, so that inner products of svecs match trace inner products.
pub fn svec(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows();
    let mut out = DVector::zeros(svec_len(n));
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            out[k] = if i == j { m[(i, j)] } else { SQRT2 * m[(i, j)] };
            k += 1;
        }
    }
    out
}

pub fn unsvec(v: &[f64], n: usize) -> DMatrix<f64> {
    debug_assert_eq!(v.len(), svec_len(n));
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            let val = if i == j { v[k] } else { v[k] / SQRT2 };
            m[(i, j)] = val;
            m[(j, i)] = val;
            k += 1;
        }
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeKind {
    Zero,
    NonNeg,
    Psd { dim: usize },
}

#[derive(Debug, Clone)]
pub struct ConeSpec {
    pub kind: ConeKind,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone)]
pub struct ConicProblem {
    /// Constraint matrix, `p x m`.
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Objective to minimize.
    pub c: DVector<f64>,
    pub cones: Vec<ConeSpec>,
}

#[derive(Debug, Clone)]
pub struct SolveOpts {
    /// Absolute duality-gap tolerance, scaled by `1 + |objective|`.
    pub gap_tol: f64,
    /// Maximum allowed cone violation (e.g. LMI eigenvalue deficit).
    pub feas_tol: f64,
    /// Interior-point iteration cap.
    pub max_iter: usize,
}

impl Default for SolveOpts {
    fn default() -> Self {
        SolveOpts {
            gap_tol: 1e-7,
            feas_tol: 1e-8,
            max_iter: 200,
        }
    }
}

impl SolveOpts {
    pub fn tight() -> Self {
        SolveOpts {
            gap_tol: 1e-9,
            feas_tol: 1e-10,
            max_iter: 300,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RawSolution {
    pub x: DVector<f64>,
    /// Dual variable in the dual cone `K*` (free on zero-cone rows).
    pub y: DVector<f64>,
    /// Primal objective `c' x`.
    pub objective: f64,
    pub duality_gap: f64,
    pub primal_infeas: f64,
    pub dual_infeas: f64,
    pub iterations: usize,
    pub certified: bool,
}

#[derive(Debug, Error)]
pub enum ConicError {
    #[error("problem certified infeasible (dual ray quality {quality:.3e})")]
    Infeasible { quality: f64 },
    #[error(
        "iteration limit {max_iter} reached: gap {gap:.3e}, primal {primal:.3e}, dual {dual:.3e}"
    )]
    MaxIterations {
        max_iter: usize,
        gap: f64,
        primal: f64,
        dual: f64,
        best: Box<RawSolution>,
    },
    #[error("malformed conic problem: {0}")]
    BadProblem(String),
}

struct Scaling {
    /// Row scaling, block-uniform on PSD cones.
    d: DVector<f64>,
    /// Column scaling.
    e: DVector<f64>,
    /// Objective scaling.
    sigma: f64,
}

/// Ruiz-style equilibration. Rows belonging to one PSD cone share a single
/// factor so the cone is preserved.
fn equilibrate(a: &DMatrix<f64>, cones: &[ConeSpec], c: &DVector<f64>) -> (DMatrix<f64>, Scaling) {
    let (p, m) = (a.nrows(), a.ncols());
    let mut ab = a.clone_owned();
    let mut d = DVector::from_element(p, 1.0);
    let mut e = DVector::from_element(m, 1.0);

    for _ in 0..10 {
        let mut row_norm = DVector::from_element(p, 0.0f64);
        for j in 0..m {
            for i in 0..p {
                row_norm[i] = row_norm[i].max(ab[(i, j)].abs());
            }
        }
        for cone in cones {
            if let ConeKind::Psd { .. } = cone.kind {
                let mut blk = 0.0f64;
                for i in cone.start..cone.start + cone.len {
                    blk = blk.max(row_norm[i]);
                }
                for i in cone.start..cone.start + cone.len {
                    row_norm[i] = blk;
                }
            }
        }
        let mut row_fac = DVector::from_element(p, 1.0f64);
        for i in 0..p {
            if row_norm[i] > 1e-12 {
                row_fac[i] = 1.0 / row_norm[i].sqrt();
            }
        }
        let mut col_norm = DVector::from_element(m, 0.0f64);
        for j in 0..m {
            for i in 0..p {
                col_norm[j] = col_norm[j].max((ab[(i, j)] * row_fac[i]).abs());
            }
        }
        let mut col_fac = DVector::from_element(m, 1.0f64);
        for j in 0..m {
            if col_norm[j] > 1e-12 {
                col_fac[j] = 1.0 / col_norm[j].sqrt();
            }
        }
        for j in 0..m {
            for i in 0..p {
                ab[(i, j)] *= row_fac[i] * col_fac[j];
            }
        }
        for i in 0..p {
            d[i] *= row_fac[i];
        }
        for j in 0..m {
            e[j] *= col_fac[j];
        }
    }

    let c_scaled_inf = (0..m).fold(0.0f64, |acc, j| acc.max((c[j] * e[j]).abs()));
    let sigma = if c_scaled_inf > 1e-12 {
        1.0 / c_scaled_inf
    } else {
        1.0
    };
    (ab, Scaling { d, e, sigma })
}

/// Worst violation of `v in K` per cone family (unsigned, zero if feasible).
fn cone_violation(v: &DVector<f64>, cones: &[ConeSpec]) -> f64 {
    let mut worst = 0.0f64;
    for cone in cones {
        match cone.kind {
            ConeKind::Zero => {
                for i in cone.start..cone.start + cone.len {
                    worst = worst.max(v[i].abs());
                }
            }
            ConeKind::NonNeg => {
                for i in cone.start..cone.start + cone.len {
                    worst = worst.max(-v[i]);
                }
            }
            ConeKind::Psd { dim } => {
                let slice: Vec<f64> = (0..cone.len).map(|k| v[cone.start + k]).collect();
                let sym = SymMatrix::symmetrize(&unsvec(&slice, dim));
                worst = worst.max(-sym.min_eigenvalue());
            }
        }
    }
    worst.max(0.0)
}

/// One barrier cone of the reordered problem (zero-cone rows live apart).
enum Barrier {
    NonNeg { start: usize, len: usize },
    Psd { start: usize, dim: usize },
}

impl Barrier {
    fn len(&self) -> usize {
        match *self {
            Barrier::NonNeg { len, .. } => len,
            Barrier::Psd { dim, .. } => svec_len(dim),
        }
    }

    fn degree(&self) -> usize {
        match *self {
            Barrier::NonNeg { len, .. } => len,
            Barrier::Psd { dim, .. } => dim,
        }
    }

    fn start(&self) -> usize {
        match *self {
            Barrier::NonNeg { start, .. } => start,
            Barrier::Psd { start, .. } => start,
        }
    }

    fn identity(&self, out: &mut DVector<f64>) {
        match *self {
            Barrier::NonNeg { start, len } => {
                for i in 0..len {
                    out[start + i] = 1.0;
                }
            }
            Barrier::Psd { start, dim } => {
                let id = svec(&DMatrix::identity(dim, dim));
                for k in 0..id.len() {
                    out[start + k] = id[k];
                }
            }
        }
    }
}

/// Nesterov-Todd scaling state for one barrier cone.
///
/// PSD cones carry the factored scaling `T = R R'` with `R = L_s V S^{-1/2}`
/// from the SVD `L_z' L_s = U S V'`; the scaled point is the diagonal
/// `Lambda = diag(sigma)`, which keeps the endgame numerically clean.
enum NtScaling {
    NonNeg {
        /// `t_i = sqrt(s_i / z_i)`
        t: DVector<f64>,
        /// `lambda_i = sqrt(s_i z_i)`
        lambda: DVector<f64>,
    },
    Psd {
        r: DMatrix<f64>,
        r_inv: DMatrix<f64>,
        sigma: DVector<f64>,
    },
}

fn sym_from_slice(v: &[f64], dim: usize) -> SymMatrix {
    SymMatrix::symmetrize(&unsvec(v, dim))
}

fn slice_of(v: &DVector<f64>, start: usize, len: usize) -> Vec<f64> {
    (0..len).map(|k| v[start + k]).collect()
}

fn nt_scaling(cone: &Barrier, s: &DVector<f64>, z: &DVector<f64>) -> Option<NtScaling> {
    match *cone {
        Barrier::NonNeg { start, len } => {
            let mut t = DVector::zeros(len);
            let mut lambda = DVector::zeros(len);
            for i in 0..len {
                let (si, zi) = (s[start + i], z[start + i]);
                if si <= 0.0 || zi <= 0.0 {
                    return None;
                }
                t[i] = (si / zi).sqrt();
                lambda[i] = (si * zi).sqrt();
            }
            Some(NtScaling::NonNeg { t, lambda })
        }
        Barrier::Psd { start, dim } => {
            let sm = sym_from_slice(&slice_of(s, start, svec_len(dim)), dim);
            let zm = sym_from_slice(&slice_of(z, start, svec_len(dim)), dim);
            let l_s = sm.as_matrix().clone_owned().cholesky()?.l();
            let l_z = zm.as_matrix().clone_owned().cholesky()?.l();
            let svd = (l_z.transpose() * &l_s).svd(true, true);
            let u = svd.u?;
            let v_t = svd.v_t?;
            let sigma = svd.singular_values;
            if sigma.iter().any(|&x| !(x > 0.0)) {
                return None;
            }
            let sig_inv_half = DMatrix::from_diagonal(&sigma.map(|x| 1.0 / x.sqrt()));
            // R = L_s V S^{-1/2}, R^{-1} = S^{-1/2} U' L_z'
            let r = &l_s * v_t.transpose() * &sig_inv_half;
            let r_inv = &sig_inv_half * u.transpose() * l_z.transpose();
            Some(NtScaling::Psd { r, r_inv, sigma })
        }
    }
}

impl NtScaling {
    /// Applies `W^{-1} = T^{-1} (.) T^{-1}` with `T^{-1} = R^{-T} R^{-1}`.
    fn apply_w_inv(&self, cone: &Barrier, v: &[f64], out: &mut [f64]) {
        match (self, cone) {
            (NtScaling::NonNeg { t, .. }, Barrier::NonNeg { .. }) => {
                for i in 0..v.len() {
                    out[i] = v[i] / (t[i] * t[i]);
                }
            }
            (NtScaling::Psd { r_inv, .. }, Barrier::Psd { dim, .. }) => {
                let m = unsvec(v, *dim);
                // T^{-1} M T^{-1} = R^{-T} (R^{-1} M R^{-T}) R^{-1}
                let inner = r_inv * m * r_inv.transpose();
                let scaled = r_inv.transpose() * inner * r_inv;
                let sv = svec(&SymMatrix::symmetrize(&scaled).as_matrix().clone_owned());
                out.copy_from_slice(sv.as_slice());
            }
            _ => unreachable!("cone/scaling mismatch"),
        }
    }

    /// Converts a complementarity target in the scaled space into the
    /// KKT right-hand-side term `q = R L_Lambda^{-1}(2 target) R'`.
    fn target_to_q(&self, cone: &Barrier, target: &ScaledTarget) -> DVector<f64> {
        match (self, cone, target) {
            (NtScaling::NonNeg { t, lambda }, Barrier::NonNeg { len, .. }, ScaledTarget::Vec(r)) => {
                let mut q = DVector::zeros(*len);
                for i in 0..*len {
                    q[i] = t[i] * r[i] / lambda[i];
                }
                q
            }
            (NtScaling::Psd { r, sigma, .. }, Barrier::Psd { dim, .. }, ScaledTarget::Mat(rm)) => {
                // Lambda is diagonal here: X_ij = 2 R_ij / (sigma_i + sigma_j)
                let mut x = DMatrix::zeros(*dim, *dim);
                for i in 0..*dim {
                    for j in 0..*dim {
                        x[(i, j)] = 2.0 * rm[(i, j)] / (sigma[i] + sigma[j]);
                    }
                }
                let q = r * x * r.transpose();
                svec(&SymMatrix::symmetrize(&q).as_matrix().clone_owned())
            }
            _ => unreachable!("cone/scaling mismatch"),
        }
    }
}

enum ScaledTarget {
    Vec(DVector<f64>),
    Mat(DMatrix<f64>),
}

/// Largest step `alpha` keeping `v + alpha dv` in the cone interior.
fn max_step(cone: &Barrier, v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    match *cone {
        Barrier::NonNeg { start, len } => {
            let mut alpha = f64::INFINITY;
            for i in 0..len {
                if dv[start + i] < 0.0 {
                    alpha = alpha.min(-v[start + i] / dv[start + i]);
                }
            }
            alpha
        }
        Barrier::Psd { start, dim } => {
            let vm = sym_from_slice(&slice_of(v, start, svec_len(dim)), dim);
            let dm = sym_from_slice(&slice_of(dv, start, svec_len(dim)), dim);
            // alpha limit from lambda_min of V^{-1/2} dV V^{-1/2}
            let (vals, vecs) = vm.eigen_pairs();
            if vals[0] <= 0.0 {
                return 0.0;
            }
            let v_inv_half =
                &vecs * DMatrix::from_diagonal(&vals.map(|l| 1.0 / l.sqrt())) * vecs.transpose();
            let g = SymMatrix::symmetrize(&(&v_inv_half * dm.as_matrix() * &v_inv_half));
            let lmin = g.min_eigenvalue();
            if lmin >= 0.0 {
                f64::INFINITY
            } else {
                -1.0 / lmin
            }
        }
    }
}

struct Reordered {
    /// Barrier rows of the scaled constraint matrix.
    g: DMatrix<f64>,
    h: DVector<f64>,
    /// Equality rows.
    a_eq: DMatrix<f64>,
    b_eq: DVector<f64>,
    barriers: Vec<Barrier>,
    /// Original row index of each barrier row / equality row.
    barrier_rows: Vec<usize>,
    eq_rows: Vec<usize>,
}

fn reorder(a: &DMatrix<f64>, b: &DVector<f64>, cones: &[ConeSpec]) -> Reordered {
    let m = a.ncols();
    let mut barrier_rows = Vec::new();
    let mut eq_rows = Vec::new();
    let mut barriers = Vec::new();
    for cone in cones {
        match cone.kind {
            ConeKind::Zero => {
                for i in cone.start..cone.start + cone.len {
                    eq_rows.push(i);
                }
            }
            ConeKind::NonNeg => {
                barriers.push(Barrier::NonNeg {
                    start: barrier_rows.len(),
                    len: cone.len,
                });
                for i in cone.start..cone.start + cone.len {
                    barrier_rows.push(i);
                }
            }
            ConeKind::Psd { dim } => {
                barriers.push(Barrier::Psd {
                    start: barrier_rows.len(),
                    dim,
                });
                for i in cone.start..cone.start + cone.len {
                    barrier_rows.push(i);
                }
            }
        }
    }
    let g = DMatrix::from_fn(barrier_rows.len(), m, |i, j| a[(barrier_rows[i], j)]);
    let h = DVector::from_fn(barrier_rows.len(), |i, _| b[barrier_rows[i]]);
    let a_eq = DMatrix::from_fn(eq_rows.len(), m, |i, j| a[(eq_rows[i], j)]);
    let b_eq = DVector::from_fn(eq_rows.len(), |i, _| b[eq_rows[i]]);
    Reordered {
        g,
        h,
        a_eq,
        b_eq,
        barriers,
        barrier_rows,
        eq_rows,
    }
}

pub fn solve(problem: &ConicProblem, opts: &SolveOpts) -> Result<RawSolution, ConicError> {
    let (p, m) = (problem.a.nrows(), problem.a.ncols());
    if problem.b.len() != p || problem.c.len() != m {
        return Err(ConicError::BadProblem("inconsistent dimensions".into()));
    }
    let covered: usize = problem.cones.iter().map(|c| c.len).sum();
    if covered != p {
        return Err(ConicError::BadProblem(format!(
            "cones cover {covered} of {p} rows"
        )));
    }

    let (a_s, scaling) = equilibrate(&problem.a, &problem.cones, &problem.c);
    let b_s = DVector::from_fn(p, |i, _| problem.b[i] * scaling.d[i]);
    let c_s = DVector::from_fn(m, |j, _| problem.c[j] * scaling.e[j] * scaling.sigma);
    let re = reorder(&a_s, &b_s, &problem.cones);
    let pb = re.g.nrows();
    let pe = re.a_eq.nrows();
    if pb == 0 {
        return Err(ConicError::BadProblem(
            "problem has no inequality or cone rows".into(),
        ));
    }
    let nu: usize = re.barriers.iter().map(|b| b.degree()).sum();

    // interior start at the cone identities
    let mut x = DVector::<f64>::zeros(m);
    let mut y = DVector::<f64>::zeros(pe);
    let mut s = DVector::<f64>::zeros(pb);
    let mut z = DVector::<f64>::zeros(pb);
    for cone in &re.barriers {
        cone.identity(&mut s);
        cone.identity(&mut z);
    }

    let gt = re.g.transpose();
    let aeq_t = re.a_eq.transpose();
    let mut best: Option<(f64, RawSolution)> = None;
    let mut iter = 0usize;
    let mut last_improvement = 0usize;

    let unscale = |x_s: &DVector<f64>,
                   y_eq: &DVector<f64>,
                   z_b: &DVector<f64>|
     -> (DVector<f64>, DVector<f64>) {
        let x_u = DVector::from_fn(m, |j, _| x_s[j] * scaling.e[j]);
        let mut y_full = DVector::zeros(p);
        for (k, &row) in re.eq_rows.iter().enumerate() {
            y_full[row] = y_eq[k] * scaling.d[row] / scaling.sigma;
        }
        for (k, &row) in re.barrier_rows.iter().enumerate() {
            y_full[row] = z_b[k] * scaling.d[row] / scaling.sigma;
        }
        (x_u, y_full)
    };

    loop {
        iter += 1;

        // residuals (scaled space)
        let rx = &c_s + &gt * &z + &aeq_t * &y;
        let ry = &re.a_eq * &x - &re.b_eq;
        let rz = &re.g * &x + &s - &re.h;
        let gap_inner = s.dot(&z);
        let mu = gap_inner / nu as f64;

        // convergence bookkeeping in the original (unscaled) problem;
        // the gap is the exact complementarity of the unscaled pair, which
        // stays clean when the dual reconstruction picks up float noise
        let (x_u, y_full) = unscale(&x, &y, &z);
        let obj = problem.c.dot(&x_u);
        let resid = &problem.b - &problem.a * &x_u;
        let primal = cone_violation(&resid, &problem.cones);
        let aty = &problem.a.transpose() * &y_full;
        let dual_vec = &aty + &problem.c;
        let dual = dual_vec.amax() / (1.0 + problem.c.amax() + aty.amax());
        let gap = gap_inner / scaling.sigma;
        let gap_ok = gap <= opts.gap_tol * (1.0 + obj.abs());

        if std::env::var("CONIC_TRACE").is_ok() {
            eprintln!("it={iter:>4} mu={mu:.3e} obj={obj:+.9e} gap={gap:.3e} primal={primal:.3e} dual={dual:.3e}");
        }
        let score = primal.max(dual).max(gap / (1.0 + obj.abs()));
        if best.as_ref().map(|(sc, _)| score < *sc).unwrap_or(true) {
            last_improvement = iter;
            best = Some((
                score,
                RawSolution {
                    x: x_u.clone(),
                    y: y_full.clone(),
                    objective: obj,
                    duality_gap: gap,
                    primal_infeas: primal,
                    dual_infeas: dual,
                    iterations: iter,
                    certified: false,
                },
            ));
        }
        if primal <= opts.feas_tol && dual <= opts.feas_tol.max(1e-7) && gap_ok {
            let mut sol = best.expect("recorded").1;
            sol.certified = true;
            sol.iterations = iter;
            return Ok(sol);
        }
        // numerical endgame: no measurable progress for many iterations
        if iter > last_improvement + 20 {
            let (_, sol) = best.expect("recorded");
            return Err(ConicError::MaxIterations {
                max_iter: iter,
                gap: sol.duality_gap,
                primal: sol.primal_infeas,
                dual: sol.dual_infeas,
                best: Box::new(sol),
            });
        }

        // primal infeasibility: dual ray with A'y ~ 0, b'y < 0, y in K*
        if iter > 5 {
            let ynorm = y_full.norm();
            if ynorm > 1e3 {
                let along = (&problem.a.transpose() * &y_full).amax() / ynorm;
                let bty = problem.b.dot(&y_full) / ynorm;
                if along <= 1e-9 && bty < -1e-9 {
                    return Err(ConicError::Infeasible { quality: along });
                }
            }
        }

        if iter > opts.max_iter {
            let (_, sol) = best.expect("recorded");
            return Err(ConicError::MaxIterations {
                max_iter: opts.max_iter,
                gap: sol.duality_gap,
                primal: sol.primal_infeas,
                dual: sol.dual_infeas,
                best: Box::new(sol),
            });
        }

        // NT scalings
        let mut scalings = Vec::with_capacity(re.barriers.len());
        for cone in &re.barriers {
            match nt_scaling(cone, &s, &z) {
                Some(sc) => scalings.push(sc),
                None => {
                    let (_, sol) = best.expect("recorded");
                    return Err(ConicError::MaxIterations {
                        max_iter: iter,
                        gap: sol.duality_gap,
                        primal: sol.primal_infeas,
                        dual: sol.dual_infeas,
                        best: Box::new(sol),
                    });
                }
            }
        }

        let w_inv = |v: &DVector<f64>| -> DVector<f64> {
            let mut out = DVector::zeros(pb);
            for (cone, sc) in re.barriers.iter().zip(&scalings) {
                let sl = slice_of(v, cone.start(), cone.len());
                let mut o = vec![0.0; cone.len()];
                sc.apply_w_inv(cone, &sl, &mut o);
                for (k, val) in o.iter().enumerate() {
                    out[cone.start() + k] = *val;
                }
            }
            out
        };

        // H = G' W^{-1} G (+ ridge), factored once per iteration
        let mut w_inv_g = DMatrix::zeros(pb, m);
        for j in 0..m {
            let col = re.g.column(j).clone_owned();
            w_inv_g.set_column(j, &w_inv(&col));
        }
        let h0 = &gt * &w_inv_g;
        let mut h_mat = h0.clone_owned();
        let ridge = 1e-12 * (1.0 + h_mat.trace() / m as f64);
        for i in 0..m {
            h_mat[(i, i)] += ridge;
        }
        let h_chol = match Cholesky::new(h_mat) {
            Some(c) => c,
            None => {
                let (_, sol) = best.expect("recorded");
                return Err(ConicError::MaxIterations {
                    max_iter: iter,
                    gap: sol.duality_gap,
                    primal: sol.primal_infeas,
                    dual: sol.dual_infeas,
                    best: Box::new(sol),
                });
            }
        };
        let eq_chol = if pe > 0 {
            let hi_at = h_chol.solve(&aeq_t);
            let mut schur = &re.a_eq * hi_at;
            let r = 1e-12 * (1.0 + schur.trace() / pe.max(1) as f64);
            for i in 0..pe {
                schur[(i, i)] += r;
            }
            match Cholesky::new(schur) {
                Some(c) => Some(c),
                None => {
                    let (_, sol) = best.expect("recorded");
                    return Err(ConicError::MaxIterations {
                        max_iter: iter,
                        gap: sol.duality_gap,
                        primal: sol.primal_infeas,
                        dual: sol.dual_infeas,
                        best: Box::new(sol),
                    });
                }
            }
        } else {
            None
        };

        // Solves the reduced KKT system for a given complementarity target q,
        // with one pass of iterative refinement against the ridgeless system.
        let saddle = |r1: &DVector<f64>, r2: &DVector<f64>| -> (DVector<f64>, DVector<f64>) {
            if let Some(eq) = &eq_chol {
                let hi_r1 = h_chol.solve(r1);
                let rhs = &re.a_eq * hi_r1 - r2;
                let dy = eq.solve(&rhs);
                let dx = h_chol.solve(&(r1 - &aeq_t * &dy));
                (dx, dy)
            } else {
                (h_chol.solve(r1), DVector::zeros(0))
            }
        };
        let solve_kkt = |q: &DVector<f64>| -> (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>) {
            let r1 = -&rx - &gt * w_inv(&(&rz + q));
            let r2 = -&ry;
            let (mut dx, mut dy) = saddle(&r1, &r2);
            let e1 = &r1 - &h0 * &dx - &aeq_t * &dy;
            let e2 = &r2 - &re.a_eq * &dx;
            let (cx, cy) = saddle(&e1, &e2);
            dx += cx;
            dy += cy;
            let dz = w_inv(&(&re.g * &dx + &rz + q));
            let ds = -&rz - &re.g * &dx;
            (dx, dy, ds, dz)
        };

        // affine (predictor) direction: q = -s
        let q_aff = -&s;
        let (_dx_a, _dy_a, ds_a, dz_a) = solve_kkt(&q_aff);
        let mut alpha_aff = 1.0f64;
        for cone in &re.barriers {
            alpha_aff = alpha_aff.min(max_step(cone, &s, &ds_a));
            alpha_aff = alpha_aff.min(max_step(cone, &z, &dz_a));
        }
        let gap_aff = (&s + &ds_a * alpha_aff).dot(&(&z + &dz_a * alpha_aff)).max(0.0);
        let sigma_center = if gap_inner > 0.0 {
            (gap_aff / gap_inner).clamp(0.0, 1.0).powi(3)
        } else {
            0.0
        };

        // combined direction with Mehrotra corrector
        let mut q_comb = DVector::zeros(pb);
        for (cone, sc) in re.barriers.iter().zip(&scalings) {
            let target = match (cone, sc) {
                (Barrier::NonNeg { start, len }, NtScaling::NonNeg { t, lambda }) => {
                    let mut r = DVector::zeros(*len);
                    for i in 0..*len {
                        let dsi = ds_a[start + i] / t[i];
                        let dzi = dz_a[start + i] * t[i];
                        r[i] = sigma_center * mu - lambda[i] * lambda[i] - dsi * dzi;
                    }
                    ScaledTarget::Vec(r)
                }
                (Barrier::Psd { start, dim }, NtScaling::Psd { r, r_inv, sigma }) => {
                    let dsm = unsvec(&slice_of(&ds_a, *start, svec_len(*dim)), *dim);
                    let dzm = unsvec(&slice_of(&dz_a, *start, svec_len(*dim)), *dim);
                    let ds_sc = r_inv * dsm * r_inv.transpose();
                    let dz_sc = r.transpose() * dzm * r;
                    let corr = (&ds_sc * &dz_sc + &dz_sc * &ds_sc) * 0.5;
                    let mut rm = -corr;
                    for i in 0..*dim {
                        rm[(i, i)] += sigma_center * mu - sigma[i] * sigma[i];
                    }
                    ScaledTarget::Mat(SymMatrix::symmetrize(&rm).as_matrix().clone_owned())
                }
                _ => unreachable!(),
            };
            let q = sc.target_to_q(cone, &target);
            for k in 0..q.len() {
                q_comb[cone.start() + k] = q[k];
            }
        }
        let (dx, dy, ds, dz) = solve_kkt(&q_comb);

        let mut alpha = 1.0f64;
        for cone in &re.barriers {
            alpha = alpha.min(max_step(cone, &s, &ds));
            alpha = alpha.min(max_step(cone, &z, &dz));
        }
        alpha = (0.99 * alpha).min(1.0);
        if alpha < 1e-11 {
            let (_, sol) = best.expect("recorded");
            return Err(ConicError::MaxIterations {
                max_iter: iter,
                gap: sol.duality_gap,
                primal: sol.primal_infeas,
                dual: sol.dual_infeas,
                best: Box::new(sol),
            });
        }

        if std::env::var("CONIC_TRACE").is_ok() {
            eprintln!("        alpha={alpha:.3e} sigma={sigma_center:.3e} alpha_aff={alpha_aff:.3e}");
        }
        x += &dx * alpha;
        if pe > 0 {
            y += &dy * alpha;
        }
        s += &ds * alpha;
        z += &dz * alpha;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn svec_round_trip_preserves_inner_products() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.5, 1.0, 3.0, -0.2, 0.5, -0.2, 1.5]);
        let b = DMatrix::from_row_slice(3, 3, &[1.0, 0.1, 0.0, 0.1, 2.0, 0.3, 0.0, 0.3, 0.7]);
        let va = svec(&a);
        let vb = svec(&b);
        assert!(approx(va.dot(&vb), (&a * &b).trace(), 1e-12));
        let back = unsvec(va.as_slice(), 3);
        assert!((back - a).norm() < 1e-14);
    }

    /// min -x subject to x <= 1 (as 1 - x >= 0), x >= 0.
    #[test]
    fn scalar_lp() {
        let problem = ConicProblem {
            a: DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            b: DVector::from_row_slice(&[1.0, 0.0]),
            c: DVector::from_row_slice(&[-1.0]),
            cones: vec![ConeSpec {
                kind: ConeKind::NonNeg,
                start: 0,
                len: 2,
            }],
        };
        let sol = solve(&problem, &SolveOpts::default()).unwrap();
        assert!(sol.certified);
        assert!(approx(sol.x[0], 1.0, 1e-7), "x = {}", sol.x[0]);
        assert!(approx(sol.objective, -1.0, 1e-7));
    }

    /// max t such that t*I <= diag(1, 2): optimum t = 1.
    #[test]
    fn eigenvalue_lp_via_psd_cone() {
        let dim = 2;
        let rows = svec_len(dim);
        let mut a = DMatrix::zeros(rows, 1);
        let id = svec(&DMatrix::identity(2, 2));
        for i in 0..rows {
            a[(i, 0)] = id[i];
        }
        let b = svec(&DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]));
        let problem = ConicProblem {
            a,
            b,
            c: DVector::from_row_slice(&[-1.0]),
            cones: vec![ConeSpec {
                kind: ConeKind::Psd { dim },
                start: 0,
                len: rows,
            }],
        };
        let sol = solve(&problem, &SolveOpts::default()).unwrap();
        assert!(sol.certified);
        assert!(approx(sol.x[0], 1.0, 1e-7), "t = {}", sol.x[0]);
    }

    /// Equality-constrained: min 2x1 + x2 s.t. x1 + x2 = 1, x >= 0.
    #[test]
    fn equality_and_nonneg() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, -1.0, 0.0, 0.0, -1.0]);
        let b = DVector::from_row_slice(&[1.0, 0.0, 0.0]);
        let problem = ConicProblem {
            a,
            b,
            c: DVector::from_row_slice(&[2.0, 1.0]),
            cones: vec![
                ConeSpec {
                    kind: ConeKind::Zero,
                    start: 0,
                    len: 1,
                },
                ConeSpec {
                    kind: ConeKind::NonNeg,
                    start: 1,
                    len: 2,
                },
            ],
        };
        let sol = solve(&problem, &SolveOpts::default()).unwrap();
        assert!(sol.certified);
        assert!(approx(sol.x[0], 0.0, 1e-7));
        assert!(approx(sol.x[1], 1.0, 1e-7));
        assert!(approx(sol.objective, 1.0, 1e-7));
    }

    /// x = 1 and x = 0 simultaneously: infeasible with an obvious dual ray.
    #[test]
    fn detects_infeasibility() {
        let a = DMatrix::from_row_slice(3, 1, &[1.0, 1.0, -1.0]);
        let b = DVector::from_row_slice(&[1.0, 0.0, 0.0]);
        let problem = ConicProblem {
            a,
            b,
            c: DVector::from_row_slice(&[0.0]),
            cones: vec![
                ConeSpec {
                    kind: ConeKind::Zero,
                    start: 0,
                    len: 2,
                },
                ConeSpec {
                    kind: ConeKind::NonNeg,
                    start: 2,
                    len: 1,
                },
            ],
        };
        match solve(&problem, &SolveOpts::default()) {
            Err(ConicError::Infeasible { .. }) => {}
            Err(ConicError::MaxIterations { .. }) => {} // stalled without a clean ray
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn deterministic_given_identical_inputs() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let b = DVector::from_row_slice(&[1.0, 0.0]);
        let problem = ConicProblem {
            a,
            b,
            c: DVector::from_row_slice(&[-1.0]),
            cones: vec![ConeSpec {
                kind: ConeKind::NonNeg,
                start: 0,
                len: 2,
            }],
        };
        let s1 = solve(&problem, &SolveOpts::default()).unwrap();
        let s2 = solve(&problem, &SolveOpts::default()).unwrap();
        assert_eq!(s1.x[0].to_bits(), s2.x[0].to_bits());
        assert_eq!(s1.iterations, s2.iterations);
    }
}
