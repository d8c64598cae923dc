//! Least-favorable covariance programs.
//!
//! Three LMI-structured covariance-maximization problems are built here: the
//! initial-stage problem over the prior-state/measurement pair, the stage
//! problem over the process/measurement pair chained through the prediction
//! equality, and the stationary problem whose solution defines the constant
//! gain. All three maximize the posterior trace subject to squared-Bures
//! budgets expressed through auxiliary coupling blocks, eigenvalue floors,
//! and cone memberships.

pub mod conic;

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::filters::AmbiguityRadii;
use crate::psd::{spectral_tube, PsdError, SymMatrix};
use crate::riccati;
use conic::{svec, svec_len, unsvec, ConeKind, ConeSpec, ConicError, ConicProblem, RawSolution};

pub use conic::SolveOpts;

#[derive(Debug, Error)]
pub enum SdpError {
    #[error("{what} must be positive definite (min eigenvalue {min_eig:.6e})")]
    NotPd { what: String, min_eig: f64 },
    #[error(transparent)]
    Psd(#[from] PsdError),
    #[error("problem certified infeasible (dual ray quality {quality:.3e})")]
    Infeasible { quality: f64 },
    #[error("solver hit the iteration limit: gap {gap:.3e}, primal {primal:.3e}, dual {dual:.3e} (best iterate returned, not certified)")]
    MaxIterations {
        gap: f64,
        primal: f64,
        dual: f64,
        best: Box<RawSolution>,
    },
    #[error("least-favorable {what} escaped its spectral tube by {excess:.3e}")]
    TubeViolation { what: String, excess: f64 },
    #[error("internal consistency check failed for {what}: residual {residual:.3e}")]
    Inconsistent { what: String, residual: f64 },
    #[error("malformed problem: {0}")]
    BadProblem(String),
}

impl From<ConicError> for SdpError {
    fn from(e: ConicError) -> Self {
        match e {
            ConicError::Infeasible { quality } => SdpError::Infeasible { quality },
            ConicError::MaxIterations {
                gap, primal, dual, best, ..
            } => SdpError::MaxIterations {
                gap,
                primal,
                dual,
                best,
            },
            ConicError::BadProblem(msg) => SdpError::BadProblem(msg),
        }
    }
}

// ---------------------------------------------------------------------------
// Problem data
// ---------------------------------------------------------------------------

/// One-stage nominal data: dynamics, observation, and noise covariances.
#[derive(Debug, Clone)]
pub struct StageData {
    pub a: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub sigma_w_hat: SymMatrix,
    pub sigma_v_hat: SymMatrix,
}

/// Time-invariant data for the stationary problem.
pub type StationaryData = StageData;

/// Initial-stage nominal data: the ambiguous pair is (prior, measurement).
#[derive(Debug, Clone)]
pub struct InitialData {
    pub c: DMatrix<f64>,
    pub sigma_x0_hat: SymMatrix,
    pub sigma_v_hat: SymMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Sym(usize),
    Square(usize),
}

impl VarKind {
    pub fn len(&self) -> usize {
        match *self {
            VarKind::Sym(n) => svec_len(n),
            VarKind::Square(n) => n * n,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VarDef {
    pub name: String,
    pub kind: VarKind,
    pub offset: usize,
}

#[derive(Debug, Clone, Default)]
pub struct VarLayout {
    pub defs: Vec<VarDef>,
    pub total: usize,
}

impl VarLayout {
    fn push(&mut self, name: &str, kind: VarKind) {
        let offset = self.total;
        self.total += kind.len();
        self.defs.push(VarDef {
            name: name.to_string(),
            kind,
            offset,
        });
    }

    pub fn find(&self, name: &str) -> Option<&VarDef> {
        self.defs.iter().find(|d| d.name == name)
    }

    pub fn extract_sym(&self, x: &DVector<f64>, name: &str) -> Option<SymMatrix> {
        let def = self.find(name)?;
        let VarKind::Sym(n) = def.kind else {
            return None;
        };
        let slice: Vec<f64> = (0..def.kind.len()).map(|k| x[def.offset + k]).collect();
        Some(SymMatrix::symmetrize(&unsvec(&slice, n)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockRole {
    /// Schur-complement or Bures coupling block.
    Structural,
    /// Eigenvalue floor, removable for the redundancy check.
    Floor,
    /// Plain cone membership of one variable.
    VarPsd,
}

/// Affine symmetric-matrix-valued constraint `constant + sum_i x_i F_i >= 0`.
#[derive(Debug, Clone)]
pub struct LmiBlock {
    pub name: String,
    pub role: BlockRole,
    pub dim: usize,
    pub constant: DMatrix<f64>,
    /// `svec_len(dim) x m` coefficient matrix.
    pub coeffs: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Initial,
    Stage,
    Stationary,
}

#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub kind: ProblemKind,
    pub layout: VarLayout,
    /// Linear objective to maximize.
    pub objective: DVector<f64>,
    pub blocks: Vec<LmiBlock>,
    /// `E x = f`.
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    /// `G x <= h`.
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
}

impl SdpProblem {
    pub fn total_scalar_variables(&self) -> usize {
        self.layout.total
    }

    pub fn structural_blocks(&self) -> impl Iterator<Item = &LmiBlock> {
        self.blocks
            .iter()
            .filter(|b| b.role == BlockRole::Structural)
    }

    pub fn max_block_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.dim).max().unwrap_or(0)
    }

    /// Conic standard form; floors can be dropped for the redundancy check.
    pub fn to_conic(&self, include_floors: bool) -> ConicProblem {
        let m = self.layout.total;
        let eq_rows = self.eq_matrix.nrows();
        let ineq_rows = self.ineq_matrix.nrows();
        let blocks: Vec<&LmiBlock> = self
            .blocks
            .iter()
            .filter(|b| include_floors || b.role != BlockRole::Floor)
            .collect();
        let block_rows: usize = blocks.iter().map(|b| svec_len(b.dim)).sum();
        let p = eq_rows + ineq_rows + block_rows;

        let mut a = DMatrix::zeros(p, m);
        let mut b = DVector::zeros(p);
        let mut cones = Vec::new();
        let mut row = 0;

        if eq_rows > 0 {
            a.view_mut((row, 0), (eq_rows, m)).copy_from(&self.eq_matrix);
            b.rows_mut(row, eq_rows).copy_from(&self.eq_rhs);
            cones.push(ConeSpec {
                kind: ConeKind::Zero,
                start: row,
                len: eq_rows,
            });
            row += eq_rows;
        }
        if ineq_rows > 0 {
            a.view_mut((row, 0), (ineq_rows, m))
                .copy_from(&self.ineq_matrix);
            b.rows_mut(row, ineq_rows).copy_from(&self.ineq_rhs);
            cones.push(ConeSpec {
                kind: ConeKind::NonNeg,
                start: row,
                len: ineq_rows,
            });
            row += ineq_rows;
        }
        for blk in blocks {
            let rows = svec_len(blk.dim);
            a.view_mut((row, 0), (rows, m)).copy_from(&(-&blk.coeffs));
            b.rows_mut(row, rows).copy_from(&svec(&blk.constant));
            cones.push(ConeSpec {
                kind: ConeKind::Psd { dim: blk.dim },
                start: row,
                len: rows,
            });
            row += rows;
        }

        ConicProblem {
            a,
            b,
            c: -self.objective.clone(),
            cones,
        }
    }

    /// Dense JSON dump for external cross-validation.
    pub fn to_debug_json(&self) -> serde_json::Value {
        use serde_json::json;
        let mat = |m: &DMatrix<f64>| -> serde_json::Value {
            json!((0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect::<Vec<_>>())
                .collect::<Vec<_>>())
        };
        json!({
            "kind": match self.kind {
                ProblemKind::Initial => "initial",
                ProblemKind::Stage => "stage",
                ProblemKind::Stationary => "stationary",
            },
            "variables": self.layout.defs.iter().map(|d| json!({
                "name": d.name,
                "kind": match d.kind { VarKind::Sym(_) => "sym", VarKind::Square(_) => "square" },
                "dim": match d.kind { VarKind::Sym(n) | VarKind::Square(n) => n },
                "offset": d.offset,
                "len": d.kind.len(),
            })).collect::<Vec<_>>(),
            "objective": self.objective.as_slice(),
            "blocks": self.blocks.iter().map(|b| json!({
                "name": b.name,
                "role": match b.role {
                    BlockRole::Structural => "structural",
                    BlockRole::Floor => "floor",
                    BlockRole::VarPsd => "psd",
                },
                "dim": b.dim,
                "constant": mat(&b.constant),
                "coefficients": mat(&b.coeffs),
            })).collect::<Vec<_>>(),
            "equalities": {"matrix": mat(&self.eq_matrix), "rhs": self.eq_rhs.as_slice()},
            "inequalities": {"matrix": mat(&self.ineq_matrix), "rhs": self.ineq_rhs.as_slice()},
        })
    }
}

// ---------------------------------------------------------------------------
// Problem assembly
// ---------------------------------------------------------------------------

struct Assembler {
    layout: VarLayout,
    /// Pinned variables appear as constants instead of decision variables.
    pinned: HashMap<String, DMatrix<f64>>,
    blocks: Vec<LmiBlock>,
    eq_rows: Vec<(DVector<f64>, f64)>,
    ineq_rows: Vec<(DVector<f64>, f64)>,
    objective: DVector<f64>,
}

/// Read-only view of the decision vector as named matrices.
struct VarView<'a> {
    layout: &'a VarLayout,
    pinned: &'a HashMap<String, DMatrix<f64>>,
    x: &'a DVector<f64>,
}

impl VarView<'_> {
    fn get(&self, name: &str) -> DMatrix<f64> {
        if let Some(c) = self.pinned.get(name) {
            return c.clone_owned();
        }
        let def = self
            .layout
            .find(name)
            .unwrap_or_else(|| panic!("unknown variable {name}"));
        match def.kind {
            VarKind::Sym(n) => {
                let slice: Vec<f64> = (0..def.kind.len()).map(|k| self.x[def.offset + k]).collect();
                unsvec(&slice, n)
            }
            VarKind::Square(n) => {
                let mut m = DMatrix::zeros(n, n);
                let mut k = 0;
                for j in 0..n {
                    for i in 0..n {
                        m[(i, j)] = self.x[def.offset + k];
                        k += 1;
                    }
                }
                m
            }
        }
    }
}

impl Assembler {
    fn new() -> Self {
        Assembler {
            layout: VarLayout::default(),
            pinned: HashMap::new(),
            blocks: Vec::new(),
            eq_rows: Vec::new(),
            ineq_rows: Vec::new(),
            objective: DVector::zeros(0),
        }
    }

    fn var(&mut self, name: &str, kind: VarKind) {
        self.layout.push(name, kind);
    }

    fn pin(&mut self, name: &str, value: DMatrix<f64>) {
        self.pinned.insert(name.to_string(), value);
    }

    fn is_pinned(&self, name: &str) -> bool {
        self.pinned.contains_key(name)
    }

    fn finish_layout(&mut self) {
        self.objective = DVector::zeros(self.layout.total);
    }

    fn eval_at(&self, x: &DVector<f64>, f: &dyn Fn(&VarView) -> DMatrix<f64>) -> DMatrix<f64> {
        let view = VarView {
            layout: &self.layout,
            pinned: &self.pinned,
            x,
        };
        f(&view)
    }

    /// Probes the affine map with basis vectors of the dependency variables.
    fn affine_coeffs(
        &self,
        deps: &[&str],
        f: &dyn Fn(&VarView) -> DMatrix<f64>,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let m = self.layout.total;
        let zero = DVector::zeros(m);
        let constant = self.eval_at(&zero, f);
        let rows = svec_len(constant.nrows());
        let mut coeffs = DMatrix::zeros(rows, m);
        for dep in deps {
            let Some(def) = self.layout.find(dep) else {
                continue; // pinned: contributes to the constant only
            };
            for k in 0..def.kind.len() {
                let mut basis = DVector::zeros(m);
                basis[def.offset + k] = 1.0;
                let val = self.eval_at(&basis, f) - &constant;
                coeffs.set_column(def.offset + k, &svec(&val));
            }
        }
        (constant, coeffs)
    }

    fn block(
        &mut self,
        name: &str,
        role: BlockRole,
        deps: &[&str],
        f: &dyn Fn(&VarView) -> DMatrix<f64>,
    ) {
        let (constant, coeffs) = self.affine_coeffs(deps, f);
        self.blocks.push(LmiBlock {
            name: name.to_string(),
            role,
            dim: constant.nrows(),
            constant,
            coeffs,
        });
    }

    /// Symmetric-matrix equality `f(x) = rhs`, expanded into svec rows.
    fn sym_equality(&mut self, deps: &[&str], f: &dyn Fn(&VarView) -> DMatrix<f64>, rhs: &DMatrix<f64>) {
        let (constant, coeffs) = self.affine_coeffs(deps, f);
        let target = svec(&(rhs - &constant));
        for r in 0..coeffs.nrows() {
            self.eq_rows
                .push((coeffs.row(r).transpose().clone_owned(), target[r]));
        }
    }

    /// Scalar inequality `g(x) <= h` probed the same way.
    fn scalar_inequality(&mut self, deps: &[&str], g: &dyn Fn(&VarView) -> f64, h: f64) {
        let m = self.layout.total;
        let wrap = |view: &VarView| DMatrix::from_element(1, 1, g(view));
        let zero = DVector::zeros(m);
        let constant = self.eval_at(&zero, &wrap)[(0, 0)];
        let mut row = DVector::zeros(m);
        for dep in deps {
            let Some(def) = self.layout.find(dep) else {
                continue;
            };
            for k in 0..def.kind.len() {
                let mut basis = DVector::zeros(m);
                basis[def.offset + k] = 1.0;
                row[def.offset + k] = self.eval_at(&basis, &wrap)[(0, 0)] - constant;
            }
        }
        self.ineq_rows.push((row, h - constant));
    }

    fn maximize_trace_of(&mut self, name: &str) {
        let def = self
            .layout
            .find(name)
            .unwrap_or_else(|| panic!("unknown variable {name}"));
        let VarKind::Sym(n) = def.kind else {
            panic!("objective variable must be symmetric");
        };
        let mut k = 0;
        for j in 0..n {
            for i in 0..=j {
                if i == j {
                    self.objective[def.offset + k] = 1.0;
                }
                k += 1;
            }
        }
    }

    fn build(self, kind: ProblemKind) -> SdpProblem {
        let m = self.layout.total;
        let eq_matrix = DMatrix::from_fn(self.eq_rows.len(), m, |i, j| self.eq_rows[i].0[j]);
        let eq_rhs = DVector::from_fn(self.eq_rows.len(), |i, _| self.eq_rows[i].1);
        let ineq_matrix = DMatrix::from_fn(self.ineq_rows.len(), m, |i, j| self.ineq_rows[i].0[j]);
        let ineq_rhs = DVector::from_fn(self.ineq_rows.len(), |i, _| self.ineq_rows[i].1);
        SdpProblem {
            kind,
            layout: self.layout,
            objective: self.objective,
            blocks: self.blocks,
            eq_matrix,
            eq_rhs,
            ineq_matrix,
            ineq_rhs,
        }
    }
}

/// Jitter floor keeping merely-PSD nominals strictly feasible inside LMIs.
fn jittered(nominal: &SymMatrix) -> SymMatrix {
    let scale = nominal.spectral_scale();
    let floor = 1e-10 * (1.0 + scale);
    if nominal.min_eigenvalue() < floor {
        nominal.add_scaled_identity(floor)
    } else {
        nominal.clone()
    }
}

fn require_pd(name: &str, m: &SymMatrix) -> Result<(), SdpError> {
    let min_eig = m.min_eigenvalue();
    if min_eig <= 0.0 {
        return Err(SdpError::NotPd {
            what: name.to_string(),
            min_eig,
        });
    }
    Ok(())
}

/// Appends the posterior Schur block, shared by all three problems.
///
/// `prior` names a decision variable when it is ambiguous (initial/stage
/// problems) and may be pinned for reduced solves.
fn posterior_block(asm: &mut Assembler, c: &DMatrix<f64>) {
    let c = c.clone_owned();
    let (ny, nx) = (c.nrows(), c.ncols());
    asm.block(
        "posterior_schur",
        BlockRole::Structural,
        &["sigma_x_prior", "sigma_x_post", "sigma_v"],
        &move |v: &VarView| {
            let prior = v.get("sigma_x_prior");
            let post = v.get("sigma_x_post");
            let sv = v.get("sigma_v");
            let mut blk = DMatrix::zeros(nx + ny, nx + ny);
            blk.view_mut((0, 0), (nx, nx)).copy_from(&(&prior - &post));
            let pc = &prior * c.transpose();
            blk.view_mut((0, nx), (nx, ny)).copy_from(&pc);
            blk.view_mut((nx, 0), (ny, nx)).copy_from(&pc.transpose());
            blk.view_mut((nx, nx), (ny, ny))
                .copy_from(&(&c * &prior * c.transpose() + &sv));
            blk
        },
    );
}

/// Bures coupling: `[[nominal, Y], [Y', sigma]] >= 0` plus the trace budget
/// `Tr[sigma + nominal - 2 Y] <= theta^2`.
fn bures_budget(
    asm: &mut Assembler,
    tag: &str,
    sigma_name: &'static str,
    coupling_name: &'static str,
    nominal: &SymMatrix,
    theta: f64,
) {
    let nom = nominal.as_matrix().clone_owned();
    let n = nom.nrows();
    let nom_for_block = nom.clone_owned();
    let sigma = sigma_name;
    let coupling = coupling_name;
    asm.block(
        &format!("bures_{tag}"),
        BlockRole::Structural,
        &[sigma_name, coupling_name],
        &move |v: &VarView| {
            let s = v.get(sigma);
            let y = v.get(coupling);
            let mut blk = DMatrix::zeros(2 * n, 2 * n);
            blk.view_mut((0, 0), (n, n)).copy_from(&nom_for_block);
            blk.view_mut((0, n), (n, n)).copy_from(&y);
            blk.view_mut((n, 0), (n, n)).copy_from(&y.transpose());
            blk.view_mut((n, n), (n, n)).copy_from(&s);
            blk
        },
    );
    let nom_trace = nom.trace();
    asm.scalar_inequality(
        &[sigma_name, coupling_name],
        &move |v: &VarView| v.get(sigma).trace() - 2.0 * v.get(coupling).trace(),
        theta * theta - nom_trace,
    );
}

fn floor_block(asm: &mut Assembler, tag: &str, sigma_name: &'static str, floor: f64) {
    let sigma = sigma_name;
    asm.block(
        &format!("floor_{tag}"),
        BlockRole::Floor,
        &[sigma_name],
        &move |v: &VarView| {
            let s = v.get(sigma);
            let n = s.nrows();
            s - DMatrix::<f64>::identity(n, n) * floor
        },
    );
}

fn psd_block(asm: &mut Assembler, sigma_name: &'static str) {
    if asm.is_pinned(sigma_name) {
        return;
    }
    let sigma = sigma_name;
    asm.block(
        &format!("psd_{sigma_name}"),
        BlockRole::VarPsd,
        &[sigma_name],
        &move |v: &VarView| v.get(sigma),
    );
}

#[derive(Debug, Clone, Copy, Default)]
struct Pins {
    w: bool,
    v: bool,
    x0: bool,
}

fn build_stage_inner(
    stage: &StageData,
    sigma_x_prev: &SymMatrix,
    radii: &AmbiguityRadii,
    pins: Pins,
) -> Result<SdpProblem, SdpError> {
    let nx = stage.a.nrows();
    let ny = stage.c.nrows();
    require_pd("nominal measurement covariance", &stage.sigma_v_hat)?;
    sigma_x_prev.require_psd()?;
    let sigma_w_hat = jittered(&stage.sigma_w_hat);

    let mut asm = Assembler::new();
    asm.var("sigma_x_prior", VarKind::Sym(nx));
    asm.var("sigma_x_post", VarKind::Sym(nx));
    if pins.w {
        asm.pin("sigma_w", sigma_w_hat.as_matrix().clone_owned());
    } else {
        asm.var("sigma_w", VarKind::Sym(nx));
        asm.var("coupling_w", VarKind::Square(nx));
    }
    if pins.v {
        asm.pin("sigma_v", stage.sigma_v_hat.as_matrix().clone_owned());
    } else {
        asm.var("sigma_v", VarKind::Sym(ny));
        asm.var("coupling_v", VarKind::Square(ny));
    }
    asm.finish_layout();

    posterior_block(&mut asm, &stage.c);
    if !pins.w {
        bures_budget(&mut asm, "w", "sigma_w", "coupling_w", &sigma_w_hat, radii.theta_w);
        floor_block(&mut asm, "w", "sigma_w", sigma_w_hat.min_eigenvalue().max(0.0));
        psd_block(&mut asm, "sigma_w");
    }
    if !pins.v {
        bures_budget(
            &mut asm,
            "v",
            "sigma_v",
            "coupling_v",
            &stage.sigma_v_hat,
            radii.theta_v,
        );
        floor_block(&mut asm, "v", "sigma_v", stage.sigma_v_hat.min_eigenvalue().max(0.0));
        psd_block(&mut asm, "sigma_v");
    }
    psd_block(&mut asm, "sigma_x_prior");
    psd_block(&mut asm, "sigma_x_post");

    // Prediction equality: prior - sigma_w = A sigma_prev A'.
    let rhs = sigma_x_prev.transform(&stage.a);
    asm.sym_equality(
        &["sigma_x_prior", "sigma_w"],
        &move |v: &VarView| v.get("sigma_x_prior") - v.get("sigma_w"),
        rhs.as_matrix(),
    );

    asm.maximize_trace_of("sigma_x_post");
    Ok(asm.build(ProblemKind::Stage))
}

/// Stage problem: ambiguous (process, measurement) covariances chained to
/// the previous posterior through the prediction equality.
pub fn build_stage_sdp(
    stage: &StageData,
    sigma_x_prev: &SymMatrix,
    radii: &AmbiguityRadii,
) -> Result<SdpProblem, SdpError> {
    build_stage_inner(stage, sigma_x_prev, radii, Pins::default())
}

fn build_initial_inner(
    init: &InitialData,
    radii: &AmbiguityRadii,
    pins: Pins,
) -> Result<SdpProblem, SdpError> {
    let nx = init.c.ncols();
    let ny = init.c.nrows();
    require_pd("nominal measurement covariance", &init.sigma_v_hat)?;
    init.sigma_x0_hat.require_psd()?;
    let sigma_x0_hat = jittered(&init.sigma_x0_hat);

    let mut asm = Assembler::new();
    if pins.x0 {
        asm.pin("sigma_x_prior", sigma_x0_hat.as_matrix().clone_owned());
    } else {
        asm.var("sigma_x_prior", VarKind::Sym(nx));
        asm.var("coupling_x0", VarKind::Square(nx));
    }
    asm.var("sigma_x_post", VarKind::Sym(nx));
    if pins.v {
        asm.pin("sigma_v", init.sigma_v_hat.as_matrix().clone_owned());
    } else {
        asm.var("sigma_v", VarKind::Sym(ny));
        asm.var("coupling_v", VarKind::Square(ny));
    }
    asm.finish_layout();

    posterior_block(&mut asm, &init.c);
    if !pins.x0 {
        bures_budget(
            &mut asm,
            "x0",
            "sigma_x_prior",
            "coupling_x0",
            &sigma_x0_hat,
            radii.theta_x0,
        );
        floor_block(
            &mut asm,
            "x0",
            "sigma_x_prior",
            sigma_x0_hat.min_eigenvalue().max(0.0),
        );
        psd_block(&mut asm, "sigma_x_prior");
    }
    if !pins.v {
        bures_budget(
            &mut asm,
            "v",
            "sigma_v",
            "coupling_v",
            &init.sigma_v_hat,
            radii.theta_v,
        );
        floor_block(&mut asm, "v", "sigma_v", init.sigma_v_hat.min_eigenvalue().max(0.0));
        psd_block(&mut asm, "sigma_v");
    }
    psd_block(&mut asm, "sigma_x_post");

    asm.maximize_trace_of("sigma_x_post");
    Ok(asm.build(ProblemKind::Initial))
}

/// Initial-stage problem over the (prior state, measurement) pair.
pub fn build_initial_sdp(init: &InitialData, radii: &AmbiguityRadii) -> Result<SdpProblem, SdpError> {
    build_initial_inner(init, radii, Pins::default())
}

fn build_stationary_inner(
    data: &StationaryData,
    radii: &AmbiguityRadii,
    pins: Pins,
) -> Result<SdpProblem, SdpError> {
    let nx = data.a.nrows();
    let ny = data.c.nrows();
    require_pd("nominal process covariance", &data.sigma_w_hat)?;
    require_pd("nominal measurement covariance", &data.sigma_v_hat)?;

    let mut asm = Assembler::new();
    asm.var("sigma_x_prior", VarKind::Sym(nx));
    asm.var("sigma_x_post", VarKind::Sym(nx));
    if pins.w {
        asm.pin("sigma_w", data.sigma_w_hat.as_matrix().clone_owned());
    } else {
        asm.var("sigma_w", VarKind::Sym(nx));
        asm.var("coupling_w", VarKind::Square(nx));
    }
    if pins.v {
        asm.pin("sigma_v", data.sigma_v_hat.as_matrix().clone_owned());
    } else {
        asm.var("sigma_v", VarKind::Sym(ny));
        asm.var("coupling_v", VarKind::Square(ny));
    }
    asm.finish_layout();

    posterior_block(&mut asm, &data.c);
    if !pins.w {
        bures_budget(
            &mut asm,
            "w",
            "sigma_w",
            "coupling_w",
            &data.sigma_w_hat,
            radii.theta_w,
        );
        floor_block(&mut asm, "w", "sigma_w", data.sigma_w_hat.min_eigenvalue().max(0.0));
        psd_block(&mut asm, "sigma_w");
    }
    if !pins.v {
        bures_budget(
            &mut asm,
            "v",
            "sigma_v",
            "coupling_v",
            &data.sigma_v_hat,
            radii.theta_v,
        );
        floor_block(&mut asm, "v", "sigma_v", data.sigma_v_hat.min_eigenvalue().max(0.0));
        psd_block(&mut asm, "sigma_v");
    }
    psd_block(&mut asm, "sigma_x_prior");
    psd_block(&mut asm, "sigma_x_post");

    // Stationarity: prior - sigma_w - A post A' = 0.
    let a = data.a.clone_owned();
    asm.sym_equality(
        &["sigma_x_prior", "sigma_w", "sigma_x_post"],
        &move |v: &VarView| {
            let post = v.get("sigma_x_post");
            v.get("sigma_x_prior") - v.get("sigma_w") - &a * post * a.transpose()
        },
        &DMatrix::zeros(nx, nx),
    );

    asm.maximize_trace_of("sigma_x_post");
    Ok(asm.build(ProblemKind::Stationary))
}

/// Stationary problem with the fixed-point coupling between prior and
/// posterior covariances.
pub fn build_stationary_sdp(
    data: &StationaryData,
    radii: &AmbiguityRadii,
) -> Result<SdpProblem, SdpError> {
    build_stationary_inner(data, radii, Pins::default())
}

/// Raw conic solve of a built problem (no fast paths, floors included).
pub fn solve_sdp(problem: &SdpProblem, opts: &SolveOpts) -> Result<RawSolution, SdpError> {
    Ok(conic::solve(&problem.to_conic(true), opts)?)
}

// ---------------------------------------------------------------------------
// Solutions
// ---------------------------------------------------------------------------

/// Least-favorable covariances and the resulting stage covariances.
///
/// `sigma_w_star` is `None` for the initial stage, where the ambiguous pair
/// is the prior state and the measurement noise.
#[derive(Debug, Clone)]
pub struct StageSolution {
    pub sigma_w_star: Option<SymMatrix>,
    pub sigma_v_star: SymMatrix,
    pub sigma_x_prior: SymMatrix,
    pub sigma_x_post: SymMatrix,
    /// Worst-case posterior mean-square error, `Tr[sigma_x_post]`.
    pub objective: f64,
    pub kkt_residual: f64,
    pub duality_gap: f64,
}

#[derive(Debug, Clone)]
pub struct StationarySolution {
    pub sigma_w_star: SymMatrix,
    pub sigma_v_star: SymMatrix,
    pub sigma_x_prior: SymMatrix,
    pub sigma_x_post: SymMatrix,
    pub gain: DMatrix<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub duality_gap: f64,
}

/// Tube slack used by the post-solve containment assertion.
pub const TUBE_SLACK: f64 = 1e-7;

fn check_tube(
    what: &str,
    sigma: &SymMatrix,
    nominal: &SymMatrix,
    theta: f64,
) -> Result<(), SdpError> {
    let tube = spectral_tube(nominal, theta)?;
    let lower = nominal.min_eigenvalue().max(0.0); // floor constraint, not the Bures lower bound
    let (vals, _) = sigma.eigen_pairs();
    let lo_excess = lower - vals[0];
    let hi_excess = vals[vals.len() - 1] - tube.upper;
    let excess = lo_excess.max(hi_excess);
    if excess > TUBE_SLACK {
        return Err(SdpError::TubeViolation {
            what: what.to_string(),
            excess,
        });
    }
    Ok(())
}

fn extract_sym(raw: &RawSolution, layout: &VarLayout, name: &str) -> Option<SymMatrix> {
    layout.extract_sym(&raw.x, name)
}

/// Stage solve with least-favorable covariances, exact covariance polish,
/// and the tube containment assertion.
pub fn solve_stage(
    stage: &StageData,
    sigma_x_prev: &SymMatrix,
    radii: &AmbiguityRadii,
    opts: &SolveOpts,
) -> Result<StageSolution, SdpError> {
    require_pd("nominal measurement covariance", &stage.sigma_v_hat)?;
    sigma_x_prev.require_psd()?;
    let pins = Pins {
        w: radii.theta_w == 0.0,
        v: radii.theta_v == 0.0,
        x0: false,
    };

    let (sigma_w_star, sigma_v_star, kkt, gap) = if pins.w && pins.v {
        (stage.sigma_w_hat.clone(), stage.sigma_v_hat.clone(), 0.0, 0.0)
    } else {
        let problem = build_stage_inner(stage, sigma_x_prev, radii, pins)?;
        let raw = solve_sdp(&problem, opts)?;
        let w = if pins.w {
            stage.sigma_w_hat.clone()
        } else {
            extract_sym(&raw, &problem.layout, "sigma_w").expect("sigma_w present")
        };
        let v = if pins.v {
            stage.sigma_v_hat.clone()
        } else {
            extract_sym(&raw, &problem.layout, "sigma_v").expect("sigma_v present")
        };
        (
            w,
            v,
            raw.primal_infeas.max(raw.dual_infeas),
            raw.duality_gap,
        )
    };

    check_tube("process covariance", &sigma_w_star, &stage.sigma_w_hat, radii.theta_w)?;
    check_tube(
        "measurement covariance",
        &sigma_v_star,
        &stage.sigma_v_hat,
        radii.theta_v,
    )?;

    let prior = riccati::predict_cov(&stage.a, sigma_x_prev, &sigma_w_star);
    let (_, post) = riccati::posterior(&stage.c, &prior, &sigma_v_star)
        .map_err(|e| SdpError::BadProblem(format!("posterior update failed: {e}")))?;
    Ok(StageSolution {
        sigma_w_star: Some(sigma_w_star),
        sigma_v_star,
        sigma_x_prior: prior,
        objective: post.trace(),
        sigma_x_post: post,
        kkt_residual: kkt,
        duality_gap: gap,
    })
}

/// Initial-stage solve over the (prior, measurement) ambiguous pair.
pub fn solve_initial(
    init: &InitialData,
    radii: &AmbiguityRadii,
    opts: &SolveOpts,
) -> Result<StageSolution, SdpError> {
    require_pd("nominal measurement covariance", &init.sigma_v_hat)?;
    init.sigma_x0_hat.require_psd()?;
    let pins = Pins {
        w: false,
        v: radii.theta_v == 0.0,
        x0: radii.theta_x0 == 0.0,
    };

    let (prior_star, sigma_v_star, kkt, gap) = if pins.x0 && pins.v {
        (init.sigma_x0_hat.clone(), init.sigma_v_hat.clone(), 0.0, 0.0)
    } else {
        let problem = build_initial_inner(init, radii, pins)?;
        let raw = solve_sdp(&problem, opts)?;
        let prior = if pins.x0 {
            init.sigma_x0_hat.clone()
        } else {
            extract_sym(&raw, &problem.layout, "sigma_x_prior").expect("prior present")
        };
        let v = if pins.v {
            init.sigma_v_hat.clone()
        } else {
            extract_sym(&raw, &problem.layout, "sigma_v").expect("sigma_v present")
        };
        (
            prior,
            v,
            raw.primal_infeas.max(raw.dual_infeas),
            raw.duality_gap,
        )
    };

    check_tube("prior covariance", &prior_star, &init.sigma_x0_hat, radii.theta_x0)?;
    check_tube(
        "measurement covariance",
        &sigma_v_star,
        &init.sigma_v_hat,
        radii.theta_v,
    )?;

    let (_, post) = riccati::posterior(&init.c, &prior_star, &sigma_v_star)
        .map_err(|e| SdpError::BadProblem(format!("posterior update failed: {e}")))?;
    Ok(StageSolution {
        sigma_w_star: None,
        sigma_v_star,
        sigma_x_prior: prior_star,
        objective: post.trace(),
        sigma_x_post: post,
        kkt_residual: kkt,
        duality_gap: gap,
    })
}

/// Stationary solve. The returned covariances are polished to the exact
/// fixed point of the classical recursion driven by the extracted
/// least-favorable covariances, so the stationarity residual and the gain
/// identity hold to machine precision.
pub fn solve_stationary(
    data: &StationaryData,
    radii: &AmbiguityRadii,
    opts: &SolveOpts,
) -> Result<StationarySolution, SdpError> {
    require_pd("nominal process covariance", &data.sigma_w_hat)?;
    require_pd("nominal measurement covariance", &data.sigma_v_hat)?;
    let pins = Pins {
        w: radii.theta_w == 0.0,
        v: radii.theta_v == 0.0,
        x0: false,
    };

    let (sigma_w_star, sigma_v_star, kkt, gap, sdp_objective) = if pins.w && pins.v {
        (
            data.sigma_w_hat.clone(),
            data.sigma_v_hat.clone(),
            0.0,
            0.0,
            None,
        )
    } else {
        let problem = build_stationary_inner(data, radii, pins)?;
        let raw = solve_sdp(&problem, opts)?;
        let w = if pins.w {
            data.sigma_w_hat.clone()
        } else {
            extract_sym(&raw, &problem.layout, "sigma_w").expect("sigma_w present")
        };
        let v = if pins.v {
            data.sigma_v_hat.clone()
        } else {
            extract_sym(&raw, &problem.layout, "sigma_v").expect("sigma_v present")
        };
        (
            w,
            v,
            raw.primal_infeas.max(raw.dual_infeas),
            raw.duality_gap,
            Some(-raw.objective),
        )
    };

    check_tube("process covariance", &sigma_w_star, &data.sigma_w_hat, radii.theta_w)?;
    check_tube(
        "measurement covariance",
        &sigma_v_star,
        &data.sigma_v_hat,
        radii.theta_v,
    )?;

    let fp = riccati::kf_fixed_point(&data.a, &data.c, &sigma_w_star, &sigma_v_star, 1e-13, 200_000)
        .map_err(|e| SdpError::BadProblem(format!("fixed-point polish failed: {e}")))?;

    if let Some(obj) = sdp_objective {
        let resid = (obj - fp.post.trace()).abs() / (1.0 + obj.abs());
        if resid > 1e-4 {
            return Err(SdpError::Inconsistent {
                what: "stationary objective vs fixed-point trace".into(),
                residual: resid,
            });
        }
    }

    Ok(StationarySolution {
        sigma_w_star,
        sigma_v_star,
        sigma_x_prior: fp.prior,
        objective: fp.post.trace(),
        sigma_x_post: fp.post,
        gain: fp.gain,
        kkt_residual: kkt,
        duality_gap: gap,
    })
}

/// Measurement-side subproblem: the prior is held fixed and only the
/// measurement covariance is adversarial. Used by the one-step robust
/// Riccati map.
pub fn solve_measurement_side(
    c: &DMatrix<f64>,
    sigma_prior: &SymMatrix,
    sigma_v_hat: &SymMatrix,
    theta_v: f64,
    opts: &SolveOpts,
) -> Result<StageSolution, SdpError> {
    let init = InitialData {
        c: c.clone_owned(),
        sigma_x0_hat: sigma_prior.clone(),
        sigma_v_hat: sigma_v_hat.clone(),
    };
    let radii = AmbiguityRadii {
        theta_w: 0.0,
        theta_v,
        theta_x0: 0.0,
    };
    solve_initial(&init, &radii, opts)
}

/// Solves a built problem with and without the eigenvalue floors and
/// returns both optima.
pub fn redundancy_check(problem: &SdpProblem, opts: &SolveOpts) -> Result<(f64, f64), SdpError> {
    let with = conic::solve(&problem.to_conic(true), opts)?;
    let without = conic::solve(&problem.to_conic(false), opts)?;
    Ok((-with.objective, -without.objective))
}

/// Exhaustive grid search for the scalar stage problem.
///
/// The scalar posterior `p(s_w, s_v) = s' s_v / (c^2 s' + s_v)` with
/// `s' = a^2 s_prev + s_w` is evaluated on a `grid_n x grid_n` grid over
/// the feasible box `[s_hat, (sqrt(s_hat) + theta)^2]` per coordinate.
#[allow(clippy::too_many_arguments)]
pub fn scalar_oracle(
    a: f64,
    c: f64,
    sw_hat: f64,
    sv_hat: f64,
    sx_prev: f64,
    theta_w: f64,
    theta_v: f64,
    grid_n: usize,
) -> Result<StageSolution, SdpError> {
    if grid_n < 100 {
        return Err(SdpError::BadProblem("grid_n must be at least 100".into()));
    }
    if sw_hat < 0.0 || sv_hat <= 0.0 || sx_prev < 0.0 || theta_w < 0.0 || theta_v < 0.0 {
        return Err(SdpError::BadProblem("scalar inputs out of domain".into()));
    }
    let hi_w = (sw_hat.sqrt() + theta_w).powi(2);
    let hi_v = (sv_hat.sqrt() + theta_v).powi(2);
    let posterior = |sw: f64, sv: f64| -> f64 {
        let prior = a * a * sx_prev + sw;
        let denom = c * c * prior + sv;
        if denom <= 0.0 {
            prior
        } else {
            prior * sv / denom
        }
    };
    let mut best = (sw_hat, sv_hat, posterior(sw_hat, sv_hat));
    for i in 0..grid_n {
        let sw = sw_hat + (hi_w - sw_hat) * i as f64 / (grid_n - 1) as f64;
        for j in 0..grid_n {
            let sv = sv_hat + (hi_v - sv_hat) * j as f64 / (grid_n - 1) as f64;
            let val = posterior(sw, sv);
            if val > best.2 {
                best = (sw, sv, val);
            }
        }
    }
    let (sw, sv, obj) = best;
    let prior = a * a * sx_prev + sw;
    Ok(StageSolution {
        sigma_w_star: Some(SymMatrix::scalar(sw)),
        sigma_v_star: SymMatrix::scalar(sv),
        sigma_x_prior: SymMatrix::scalar(prior),
        sigma_x_post: SymMatrix::scalar(obj),
        objective: obj,
        kkt_residual: 0.0,
        duality_gap: 0.0,
    })
}
