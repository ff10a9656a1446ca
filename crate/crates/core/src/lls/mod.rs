//! Gauge-constrained, weighted linear least squares shared by every t-update.
//!
//! Each row contributes `w * ||a (t_j - t_i) - b||^2`. Because `a` is a scalar,
//! the normal matrix is `L (x) I_3` for a weighted graph Laplacian `L`, so a single
//! sparse `n x n` factorization serves all three coordinates. Centroid rows are
//! enforced by working on the zero-mean subspace (where `L` is definite for a
//! connected graph); any remaining rows go through a small dense Schur complement.

mod ldl;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::{CameraId, Locations, Vec3, ViewGraph};
use ldl::{Ldl, UpperCsc};

/// Default Tikhonov weight, relative to the mean diagonal of the normal matrix.
pub const DEFAULT_REG_REL: f64 = 1e-12;

/// One linearized residual row `a (t_j - t_i) - b` with weight `w`.
///
/// With `drop_along = Some(u)` (unit) only the part of the residual orthogonal
/// to `u` counts, which switches the whole system to full `3n x 3n` assembly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeLinearization {
    pub i: CameraId,
    pub j: CameraId,
    pub a: f64,
    pub b: Vec3,
    pub w: f64,
    pub drop_along: Option<Vec3>,
}

impl EdgeLinearization {
    pub fn new(i: CameraId, j: CameraId, a: f64, b: Vec3, w: f64) -> Self {
        Self { i, j, a, b, w, drop_along: None }
    }

    /// `I - u u^T`, or the identity.
    fn metric(&self) -> nalgebra::Matrix3<f64> {
        match self.drop_along {
            Some(u) => nalgebra::Matrix3::identity() - u * u.transpose(),
            None => nalgebra::Matrix3::identity(),
        }
    }

    /// `||M (a (t_j - t_i) - b)||^2` for this row's metric `M`.
    pub fn residual_sq(&self, t: &Locations) -> f64 {
        let r = (t[self.j] - t[self.i]) * self.a - self.b;
        match self.drop_along {
            Some(u) => (r - u * u.dot(&r)).norm_squared(),
            None => r.norm_squared(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowKind {
    /// `sum_i t_i[axis] = 0`.
    Centroid(usize),
    General,
}

/// A linear equality `sum_k coeffs[k] * x[k] = rhs` over the stacked unknowns
/// `x = [t_0.x, t_0.y, t_0.z, t_1.x, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRow {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
    kind: RowKind,
}

impl ConstraintRow {
    pub fn new(coeffs: Vec<(usize, f64)>, rhs: f64) -> Self {
        Self { coeffs, rhs, kind: RowKind::General }
    }

    pub fn is_centroid(&self) -> bool {
        matches!(self.kind, RowKind::Centroid(_))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(k, c)| c * x[k]).sum()
    }

    fn dense(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; 3 * n];
        for &(k, c) in &self.coeffs {
            out[k] += c;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GaugeConstraints {
    pub rows: Vec<ConstraintRow>,
}

impl GaugeConstraints {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Largest absolute violation at `t`.
    pub fn violation(&self, t: &Locations) -> f64 {
        let x = t.to_flat();
        self.rows
            .iter()
            .map(|r| (r.eval(&x) - r.rhs).abs())
            .fold(0.0, f64::max)
    }

    fn has_full_centroid(&self) -> bool {
        (0..3).all(|axis| self.rows.iter().any(|r| r.kind == RowKind::Centroid(axis)))
    }
}

fn centroid_rows(n: usize) -> Vec<ConstraintRow> {
    (0..3)
        .map(|axis| ConstraintRow {
            coeffs: (0..n).map(|i| (3 * i + axis, 1.0)).collect(),
            rhs: 0.0,
            kind: RowKind::Centroid(axis),
        })
        .collect()
}

/// `sum_i t_i = 0` only.
pub fn build_centroid_constraints(n: usize) -> GaugeConstraints {
    GaugeConstraints { rows: centroid_rows(n) }
}

/// `sum_i t_i = 0` and `sum_ij <t_j - t_i, v_ij> = 1`.
pub fn build_bata_constraints(g: &ViewGraph) -> GaugeConstraints {
    let mut rows = centroid_rows(g.n());
    let mut acc = vec![0.0; 3 * g.n()];
    for e in g.edges() {
        for axis in 0..3 {
            acc[3 * e.j + axis] += e.v.as_vec()[axis];
            acc[3 * e.i + axis] -= e.v.as_vec()[axis];
        }
    }
    let coeffs = acc.into_iter().enumerate().filter(|&(_, c)| c != 0.0).collect();
    rows.push(ConstraintRow::new(coeffs, 1.0));
    GaugeConstraints { rows }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorizationKind {
    /// Laplacian with one camera grounded; used when `reg == 0`.
    GroundedLaplacianLdl,
    /// Full `L + reg I`.
    RegularizedLaplacianLdl,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlsReport {
    /// `||H t - g + C^T lambda||` with `H = A^T W A + reg I`, `g = A^T W b`.
    pub stationarity_norm: f64,
    /// `||g||`, the scale the stationarity bound is relative to.
    pub rhs_norm: f64,
    pub constraint_violation: f64,
    pub factorization_kind: FactorizationKind,
    pub multipliers: Vec<f64>,
    pub refinement_steps: usize,
}

impl LlsReport {
    pub fn certified(&self) -> bool {
        self.stationarity_norm <= STATIONARITY_TOL * (1.0 + self.rhs_norm)
            && self.constraint_violation <= VIOLATION_TOL
    }
}

pub const STATIONARITY_TOL: f64 = 1e-8;
pub const VIOLATION_TOL: f64 = 1e-10;
const MAX_REFINEMENT: usize = 4;

/// Normal equations `(A^T W A + reg I) t = g` in per-camera layout. Without
/// projected rows the matrix is `L (x) I_3` and only `L` is stored.
struct NormalSystem {
    n: usize,
    matrix: UpperCsc,
    /// `matrix` is the full `3n x 3n` operator rather than the Laplacian `L`.
    full: bool,
    reg: f64,
}

impl NormalSystem {
    fn assemble(rows: &[EdgeLinearization], n: usize, reg: f64) -> Self {
        let full = rows.iter().any(|r| r.drop_along.is_some());
        let dim = if full { 3 * n } else { n };
        let mut trips = Vec::with_capacity(if full { 18 } else { 3 } * rows.len() + dim);
        for r in rows {
            if r.a == 0.0 {
                continue;
            }
            let k = r.w * r.a * r.a;
            let (lo, hi) = (r.i.min(r.j), r.i.max(r.j));
            if !full {
                trips.push((r.i, r.i, k));
                trips.push((r.j, r.j, k));
                trips.push((lo, hi, -k));
                continue;
            }
            let m = r.metric();
            for p in 0..3 {
                for q in 0..3 {
                    if p <= q {
                        trips.push((3 * lo + p, 3 * lo + q, k * m[(p, q)]));
                        trips.push((3 * hi + p, 3 * hi + q, k * m[(p, q)]));
                    }
                    trips.push((3 * lo + p, 3 * hi + q, -k * m[(p, q)]));
                }
            }
        }
        for i in 0..dim {
            trips.push((i, i, 0.0));
        }
        Self { n, matrix: UpperCsc::from_triplets(dim, trips), full, reg }
    }

    /// `A^T W b` in per-camera layout.
    fn rhs(rows: &[EdgeLinearization], n: usize) -> Vec<f64> {
        let mut rhs = vec![0.0; 3 * n];
        for r in rows {
            let wab = r.metric() * r.b * (r.w * r.a);
            for axis in 0..3 {
                rhs[3 * r.j + axis] += wab[axis];
                rhs[3 * r.i + axis] -= wab[axis];
            }
        }
        rhs
    }

    /// `H x` for stacked `x`.
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let l = &self.matrix;
        let mut out: Vec<f64> = x.iter().map(|v| v * self.reg).collect();
        let axes = if self.full { 1 } else { 3 };
        for c in 0..l.n {
            for p in l.col_ptr[c]..l.col_ptr[c + 1] {
                let r = l.row_idx[p];
                let v = l.values[p];
                for axis in 0..axes {
                    out[axes * r + axis] += v * x[axes * c + axis];
                    if r != c {
                        out[axes * c + axis] += v * x[axes * r + axis];
                    }
                }
            }
        }
        out
    }

    fn mean_diag(&self) -> f64 {
        self.matrix.diagonal().iter().sum::<f64>() / self.matrix.n as f64 + self.reg
    }
}

/// Solves `M z = y` per coordinate, where `M` is the factored Laplacian block.
struct BlockSolver {
    ldl: Ldl,
    grounded: bool,
    project: bool,
    full: bool,
    n: usize,
}

impl BlockSolver {
    fn solve(&self, y: &[f64]) -> Vec<f64> {
        let m = self.ldl.dim();
        let mut out = vec![0.0; 3 * self.n];
        if self.full {
            out[..m].copy_from_slice(&y[..m]);
            self.ldl.solve_in_place(&mut out[..m]);
            if self.project {
                remove_mean(&mut out);
            }
            return out;
        }
        let mut buf = vec![0.0; m];
        for axis in 0..3 {
            for i in 0..m {
                buf[i] = y[3 * i + axis];
            }
            self.ldl.solve_in_place(&mut buf);
            for i in 0..m {
                out[3 * i + axis] = buf[i];
            }
            if self.grounded {
                out[3 * (self.n - 1) + axis] = 0.0;
            }
        }
        if self.project {
            remove_mean(&mut out);
        }
        out
    }
}

fn remove_mean(x: &mut [f64]) {
    let n = x.len() / 3;
    for axis in 0..3 {
        let mean = (0..n).map(|i| x[3 * i + axis]).sum::<f64>() / n as f64;
        for i in 0..n {
            x[3 * i + axis] -= mean;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_rows(rows: &[EdgeLinearization], n: usize) -> Result<()> {
    for (k, r) in rows.iter().enumerate() {
        if r.i >= n || r.j >= n || r.i == r.j {
            return Err(Error::Graph(format!("row {k} has invalid endpoints ({}, {})", r.i, r.j)));
        }
        if !(r.w.is_finite() && r.w > 0.0) {
            return Err(Error::Domain(format!("row {k} weight {} is not positive", r.w)));
        }
        if !r.a.is_finite() || r.b.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain(format!("row {k} is not finite")));
        }
    }
    Ok(())
}

fn rows_connected(rows: &[EdgeLinearization], n: usize) -> bool {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut comps = n;
    for r in rows {
        let (a, b) = (find(&mut parent, r.i), find(&mut parent, r.j));
        if a != b {
            parent[a] = b;
            comps -= 1;
        }
    }
    comps == 1
}

/// True when `c` fixes the centroid and the rows with `a != 0` are scalar and
/// connect every camera, so the grounded system is definite without any
/// Tikhonov term.
pub fn definite_without_reg(rows: &[EdgeLinearization], n: usize, c: &GaugeConstraints) -> bool {
    if !c.has_full_centroid() || rows.iter().any(|r| r.drop_along.is_some()) {
        return false;
    }
    let active: Vec<EdgeLinearization> = rows.iter().filter(|r| r.a != 0.0).copied().collect();
    rows_connected(&active, n)
}

/// Tikhonov weight `rel * mean_diag(A^T W A)` for the given rows.
pub fn relative_reg(rows: &[EdgeLinearization], n: usize, rel: f64) -> f64 {
    let trace: f64 = rows
        .iter()
        .map(|r| 2.0 * r.w * r.a * r.a * if r.drop_along.is_some() { 2.0 / 3.0 } else { 1.0 })
        .sum();
    rel * trace / n as f64
}

/// Minimizes `sum w ||a (t_j - t_i) - b||^2 + reg ||t||^2` subject to `c`.
pub fn solve_constrained(
    rows: &[EdgeLinearization],
    n: usize,
    c: &GaugeConstraints,
    reg: f64,
) -> Result<(Locations, LlsReport)> {
    let prepared = PreparedLls::new(rows, n, c, reg)?;
    prepared.solve(rows)
}

/// A factored constrained system that can be re-solved for rows sharing the
/// same endpoints, `a` and `w` but different targets `b`.
pub struct PreparedLls {
    sys: NormalSystem,
    solver: BlockSolver,
    constraints: GaugeConstraints,
    general: Vec<ConstraintRow>,
    dirs: Vec<Vec<f64>>,
    z_dirs: Vec<Vec<f64>>,
    schur_lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    centroid: bool,
}

impl PreparedLls {
    pub fn new(rows: &[EdgeLinearization], n: usize, c: &GaugeConstraints, reg: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::Degenerate("need at least 2 cameras".into()));
        }
        if !(reg.is_finite() && reg >= 0.0) {
            return Err(Error::Config(format!("regularization must be non-negative, got {reg}")));
        }
        check_rows(rows, n)?;
        if let Some(bad) = c.rows.iter().find_map(|r| r.coeffs.iter().find(|&&(k, _)| k >= 3 * n)) {
            return Err(Error::Config(format!("constraint references unknown {}", bad.0)));
        }
        if !rows_connected(rows, n) {
            return Err(Error::Disconnected);
        }

        let sys = NormalSystem::assemble(rows, n, reg);
        let centroid = c.has_full_centroid();
        let grounded = centroid && reg == 0.0;
        let dim = sys.matrix.n;
        let per_camera = if sys.full { 3 } else { 1 };
        let factor_dim = if grounded { dim - per_camera } else { dim };
        let block = if grounded {
            let keep: Vec<_> = (0..factor_dim).collect();
            submatrix(&sys.matrix, &keep)
        } else {
            let mut trips = Vec::new();
            let l = &sys.matrix;
            for col in 0..dim {
                for p in l.col_ptr[col]..l.col_ptr[col + 1] {
                    trips.push((l.row_idx[p], col, l.values[p]));
                }
                trips.push((col, col, reg));
            }
            UpperCsc::from_triplets(dim, trips)
        };
        let scale = sys.mean_diag().max(f64::MIN_POSITIVE);
        let ldl = Ldl::factor(&block, 1e-15 * scale).map_err(|e| {
            Error::Singular(format!(
                "normal matrix not definite at camera {} (pivot {:e}); increase regularization",
                e.column / per_camera, e.pivot
            ))
        })?;
        debug_assert_eq!(ldl.dim(), factor_dim);
        let solver = BlockSolver { ldl, grounded, project: centroid, full: sys.full, n };

        // general rows (projected onto the zero-mean subspace when centroid rows hold)
        let general: Vec<ConstraintRow> = c.rows.iter().filter(|r| !r.is_centroid()).cloned().collect();
        let dirs: Vec<Vec<f64>> = general
            .iter()
            .map(|r| {
                let mut d = r.dense(n);
                if centroid {
                    remove_mean(&mut d);
                }
                d
            })
            .collect();
        let z_dirs: Vec<Vec<f64>> = dirs.iter().map(|d| solver.solve(d)).collect();
        let m = general.len();
        let schur = DMatrix::from_fn(m, m, |a, b| dot(&dirs[a], &z_dirs[b]));
        if m > 0 {
            let diag_max = (0..m).map(|k| schur[(k, k)].abs()).fold(0.0, f64::max);
            let det = schur.determinant().abs();
            if !(diag_max > 0.0) || det <= 1e-13 * diag_max.powi(m as i32) {
                return Err(Error::Singular("gauge constraint rows are dependent or vacuous".into()));
            }
        }
        Ok(Self {
            sys,
            solver,
            constraints: c.clone(),
            general,
            dirs,
            z_dirs,
            schur_lu: schur.lu(),
            centroid,
        })
    }

    /// One pass of the constrained system for stationarity rhs `g`, constraint rhs `h`.
    fn solve_once(&self, g: &[f64], h: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let m = self.general.len();
        let mut gp = g.to_vec();
        if self.centroid {
            remove_mean(&mut gp);
        }
        let zg = self.solver.solve(&gp);
        let lambda = if m > 0 {
            let r = DVector::from_fn(m, |a, _| dot(&self.dirs[a], &zg) - h[a]);
            self.schur_lu.solve(&r).expect("schur complement checked non-singular")
        } else {
            DVector::zeros(0)
        };
        let mut x = zg;
        for (a, z) in self.z_dirs.iter().enumerate() {
            for (xi, zi) in x.iter_mut().zip(z) {
                *xi -= lambda[a] * zi;
            }
        }
        (x, lambda.iter().copied().collect())
    }

    /// Solves with the targets of `rows`, which must match the factored rows in
    /// everything except `b`.
    pub fn solve(&self, rows: &[EdgeLinearization]) -> Result<(Locations, LlsReport)> {
        let n = self.sys.n;
        check_rows(rows, n)?;
        let g = NormalSystem::rhs(rows, n);
        let general: Vec<&ConstraintRow> = self.general.iter().collect();
        let h: Vec<f64> = general.iter().map(|r| r.rhs).collect();
        let (mut x, mut lambda) = self.solve_once(&g, &h);
        let mut report = certificate(&self.sys, &g, &self.constraints, &general, &x, &lambda, self.centroid);
        let mut steps = 0;
        while !report.certified() && steps < MAX_REFINEMENT {
            let hx = self.sys.apply(&x);
            let mut res: Vec<f64> = g.iter().zip(&hx).map(|(a, b)| a - b).collect();
            for (row, l) in general.iter().zip(&lambda) {
                for &(k, coef) in &row.coeffs {
                    res[k] -= l * coef;
                }
            }
            let hres: Vec<f64> = general.iter().map(|r| r.rhs - r.eval(&x)).collect();
            let (dx, dl) = self.solve_once(&res, &hres);
            for (xi, d) in x.iter_mut().zip(&dx) {
                *xi += d;
            }
            for (l, d) in lambda.iter_mut().zip(&dl) {
                *l += d;
            }
            steps += 1;
            report = certificate(&self.sys, &g, &self.constraints, &general, &x, &lambda, self.centroid);
        }
        report.refinement_steps = steps;
        if !report.certified() {
            return Err(Error::Singular(format!(
                "solve not certified: stationarity {:e}, violation {:e}",
                report.stationarity_norm, report.constraint_violation
            )));
        }
        Ok((Locations::from_flat(&x)?, report))
    }
}

fn certificate(
    sys: &NormalSystem,
    rhs: &[f64],
    c: &GaugeConstraints,
    general: &[&ConstraintRow],
    x: &[f64],
    lambda: &[f64],
    centroid: bool,
) -> LlsReport {
    let hx = sys.apply(x);
    let mut res: Vec<f64> = rhs.iter().zip(&hx).map(|(g, h)| g - h).collect();
    for (row, l) in general.iter().zip(lambda) {
        for &(k, coef) in &row.coeffs {
            res[k] -= l * coef;
        }
    }
    // centroid multipliers are the per-axis means of what is left
    let mut multipliers = Vec::new();
    if centroid {
        let n = x.len() / 3;
        for axis in 0..3 {
            multipliers.push((0..n).map(|i| res[3 * i + axis]).sum::<f64>() / n as f64);
        }
        remove_mean(&mut res);
    }
    multipliers.extend_from_slice(lambda);
    let violation = c
        .rows
        .iter()
        .map(|r| (r.eval(x) - r.rhs).abs())
        .fold(0.0, f64::max);
    LlsReport {
        stationarity_norm: norm(&res),
        rhs_norm: norm(rhs),
        constraint_violation: violation,
        factorization_kind: if sys.reg == 0.0 && centroid {
            FactorizationKind::GroundedLaplacianLdl
        } else {
            FactorizationKind::RegularizedLaplacianLdl
        },
        multipliers,
        refinement_steps: 0,
    }
}

fn submatrix(a: &UpperCsc, keep: &[usize]) -> UpperCsc {
    let k = keep.len();
    let mut trips = Vec::new();
    for (new_c, &c) in keep.iter().enumerate() {
        for p in a.col_ptr[c]..a.col_ptr[c + 1] {
            let r = a.row_idx[p];
            if r < k {
                trips.push((r, new_c, a.values[p]));
            }
        }
    }
    UpperCsc::from_triplets(k, trips)
}

/// Weighted least-squares value `sum w ||M (a (t_j - t_i) - b)||^2`.
pub fn weighted_objective(rows: &[EdgeLinearization], t: &Locations) -> f64 {
    rows.iter().map(|r| r.w * r.residual_sq(t)).sum()
}
