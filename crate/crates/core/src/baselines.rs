//! Magnitude-based baselines (LUD and RevisedLUD) and the 1DSfM chordal objective.
//!
//! RevisedLUD replaces LUD's lower bound `d_ij >= c` with the global scale
//! equality; with `d` free its per-edge optimum is the projection of
//! `t_j - t_i` onto the orthogonal complement of `v_ij`, which makes it the
//! same problem as ShapeFit. It is solved with the shared IRLS-BCD driver.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bata::{self, Init};
use crate::error::{Error, Result};
use crate::graph::{centralize_normalize, Edge, Locations, Mat3, UnitDirection, Vec3, ViewGraph};
use crate::irls::{self, Formulation, IrlsSettings, SolveDiagnostics};
use crate::lls::{self, EdgeLinearization, GaugeConstraints};
use crate::loss::{LossKind, RotationAssist, DEFAULT_HUBER_DELTA, DEFAULT_L21_FLOOR};

/// Settings for the IRLS-driven magnitude baselines. `c` is only read by LUD.
#[derive(Debug, Clone, PartialEq)]
pub struct LudConfig {
    pub c: f64,
    pub irls_iter: usize,
    pub bcd_iter: usize,
    pub loss: LossKind,
    pub beta: f64,
    pub conv_tol: f64,
    pub init: Init,
    pub seed: u64,
    pub reg_rel: f64,
}

impl Default for LudConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            irls_iter: 100,
            bcd_iter: 50,
            loss: LossKind::L21Smooth { floor: DEFAULT_L21_FLOOR },
            beta: 0.0,
            conv_tol: 1e-8,
            init: Init::Random,
            seed: 0,
            reg_rel: lls::DEFAULT_REG_REL,
        }
    }
}

impl LudConfig {
    fn settings(&self) -> Result<IrlsSettings> {
        let s = IrlsSettings {
            irls_iter: self.irls_iter,
            bcd_iter: self.bcd_iter,
            loss: self.loss,
            assist: RotationAssist::new(self.beta)?,
            conv_tol: self.conv_tol,
            reg_rel: self.reg_rel,
        };
        s.validate()?;
        Ok(s)
    }
}

/// `||dt - <dt, v> v||`.
pub fn shapefit_residual(dt: &Vec3, v: &UnitDirection) -> f64 {
    let v = v.as_vec();
    (dt - v * dt.dot(v)).norm()
}

/// RevisedLUD edge model: `||dt - d v||` with free `d`, under the BATA gauge.
#[derive(Debug, Clone, Copy, Default)]
pub struct RevisedLud;

impl Formulation for RevisedLud {
    fn update_scale(&self, dt: &Vec3, v: &UnitDirection) -> f64 {
        dt.dot(v.as_vec())
    }

    fn linearize(&self, e: &Edge, d: f64, w: f64) -> EdgeLinearization {
        EdgeLinearization::new(e.i, e.j, 1.0, e.v.as_vec() * d, w)
    }

    fn residual(&self, dt: &Vec3, d: f64, v: &UnitDirection) -> f64 {
        (dt - v.as_vec() * d).norm()
    }

    fn constraints(&self, g: &ViewGraph) -> GaugeConstraints {
        lls::build_bata_constraints(g)
    }

    fn matrix_independent_of_scale(&self) -> bool {
        true
    }
}

/// LUD edge model: `||dt - d v||` with `d >= c`, centroid gauge only.
#[derive(Debug, Clone, Copy)]
pub struct Lud {
    pub c: f64,
}

impl Formulation for Lud {
    fn update_scale(&self, dt: &Vec3, v: &UnitDirection) -> f64 {
        dt.dot(v.as_vec()).max(self.c)
    }

    /// Edges above the bound have their scale eliminated: only the part of
    /// `dt` across `v` is penalized, so the t-update is the exact joint
    /// minimizer over `(t, d)` for the current active set.
    fn linearize(&self, e: &Edge, d: f64, w: f64) -> EdgeLinearization {
        if d > self.c {
            EdgeLinearization { drop_along: Some(*e.v.as_vec()), ..EdgeLinearization::new(e.i, e.j, 1.0, Vec3::zeros(), w) }
        } else {
            EdgeLinearization::new(e.i, e.j, 1.0, e.v.as_vec() * self.c, w)
        }
    }

    fn residual(&self, dt: &Vec3, d: f64, v: &UnitDirection) -> f64 {
        (dt - v.as_vec() * d).norm()
    }

    fn constraints(&self, g: &ViewGraph) -> GaugeConstraints {
        lls::build_centroid_constraints(g.n())
    }
}

pub fn revised_lud_solve(g: &ViewGraph, cfg: &LudConfig) -> Result<(Locations, SolveDiagnostics)> {
    let settings = cfg.settings()?;
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let t0 = bata::initial_locations(g, &cfg.init, cfg.seed, settings.assist, cfg.reg_rel)?;
    irls::irls_bcd(g, &RevisedLud, &settings, t0)
}

pub fn lud_solve(g: &ViewGraph, cfg: &LudConfig) -> Result<(Locations, SolveDiagnostics)> {
    let settings = cfg.settings()?;
    if !(cfg.c.is_finite() && cfg.c > 0.0) {
        return Err(Error::Config(format!("LUD bound c must be positive, got {}", cfg.c)));
    }
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let t0 = match &cfg.init {
        Init::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let pts = (0..g.n())
                .map(|_| {
                    Vec3::new(
                        StandardNormal.sample(&mut rng),
                        StandardNormal.sample(&mut rng),
                        StandardNormal.sample(&mut rng),
                    )
                })
                .collect();
            Locations::new(pts)?.centered()
        }
        Init::Provided(t) if t.len() == g.n() => t.centered(),
        Init::Provided(_) => return Err(Error::Config("provided locations size mismatch".into())),
        convex @ Init::Convex { .. } => {
            // BATA-gauge shape, rescaled so the mean projected baseline equals c
            let t = bata::initial_locations(g, convex, cfg.seed, settings.assist, cfg.reg_rel)?;
            t.scaled(cfg.c * g.num_edges() as f64)
        }
    };
    irls::irls_bcd(g, &Lud { c: cfg.c }, &settings, t0)
}

/// Unrobust LUD objective `sum ||dt - d v||` at the optimal clamped `d`.
pub fn lud_objective(g: &ViewGraph, t: &Locations, c: f64) -> f64 {
    let form = Lud { c };
    g.edges()
        .iter()
        .map(|e| {
            let dt = e.baseline(t);
            form.residual(&dt, form.update_scale(&dt, &e.v), &e.v)
        })
        .sum()
}

/// Searches `gamma * t_shape` over the grid for the lowest LUD objective.
pub fn regime1_residual(
    g: &ViewGraph,
    t_shape: &Locations,
    c: f64,
    gamma_grid: &[f64],
) -> Result<(f64, f64)> {
    if gamma_grid.is_empty() {
        return Err(Error::Config("empty gamma grid".into()));
    }
    if t_shape.len() != g.n() {
        return Err(Error::Config("shape size does not match graph".into()));
    }
    let mut best = (f64::NAN, f64::INFINITY);
    for &gamma in gamma_grid {
        let f = lud_objective(g, &t_shape.scaled(gamma), c);
        if f < best.1 {
            best = (gamma, f);
        }
    }
    Ok(best)
}

/// Evenly spaced grid over `[lo, hi]` with `steps` points.
pub fn linear_grid(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..steps)
            .map(|k| lo + (hi - lo) * k as f64 / (steps - 1) as f64)
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnedsfmConfig {
    pub loss: LossKind,
    pub max_iter: usize,
    pub gradient_tol: f64,
    pub init: Init,
    pub seed: u64,
    /// Baselines shorter than this contribute the plateau value with no gradient.
    pub epsilon_min: f64,
}

impl Default for OnedsfmConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Huber { delta: DEFAULT_HUBER_DELTA },
            max_iter: 200,
            gradient_tol: 1e-10,
            init: Init::CONVEX_DEFAULT,
            seed: 0,
            epsilon_min: 1e-9,
        }
    }
}

impl OnedsfmConfig {
    fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.epsilon_min.is_finite() && self.epsilon_min > 0.0) {
            return Err(Error::Config("epsilon_min must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if !(self.gradient_tol >= 0.0) {
            return Err(Error::Config("gradient_tol must be non-negative".into()));
        }
        Ok(())
    }
}

/// Per-edge chordal term: residual `u - v` with `u = dt / ||dt||`, plus `(I - u u^T) / ||dt||`.
struct ChordalTerm {
    r: Vec3,
    jac: Mat3,
}

fn chordal_term(dt: &Vec3, v: &UnitDirection, epsilon_min: f64) -> Option<ChordalTerm> {
    let len = dt.norm();
    if !(len >= epsilon_min) {
        return None;
    }
    let u = dt / len;
    Some(ChordalTerm { r: u - v.as_vec(), jac: (Mat3::identity() - u * u.transpose()) / len })
}

fn onedsfm_value(g: &ViewGraph, t: &Locations, cfg: &OnedsfmConfig) -> f64 {
    g.edges()
        .iter()
        .map(|e| match chordal_term(&e.baseline(t), &e.v, cfg.epsilon_min) {
            Some(term) => cfg.loss.rho_unchecked(term.r.norm()),
            None => cfg.loss.rho_unchecked(2.0),
        })
        .sum()
}

/// Robust chordal objective `sum rho(||dt/||dt|| - v||)` and its gradient (stacked `3n`).
pub fn onedsfm_objective_grad(
    g: &ViewGraph,
    t: &Locations,
    cfg: &OnedsfmConfig,
) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    if t.len() != g.n() {
        return Err(Error::Config("locations size does not match graph".into()));
    }
    let mut value = 0.0;
    let mut grad = vec![0.0; 3 * g.n()];
    for e in g.edges() {
        match chordal_term(&e.baseline(t), &e.v, cfg.epsilon_min) {
            Some(term) => {
                let eps = term.r.norm();
                value += cfg.loss.rho_unchecked(eps);
                // jac is symmetric
                let gj = term.jac * term.r * cfg.loss.gradient_weight(eps);
                for axis in 0..3 {
                    grad[3 * e.j + axis] += gj[axis];
                    grad[3 * e.i + axis] -= gj[axis];
                }
            }
            None => value += cfg.loss.rho_unchecked(2.0),
        }
    }
    Ok((value, grad))
}

fn centered_norm(grad: &[f64]) -> f64 {
    let n = grad.len() / 3;
    let mut mean = [0.0; 3];
    for i in 0..n {
        for axis in 0..3 {
            mean[axis] += grad[3 * i + axis] / n as f64;
        }
    }
    grad.iter()
        .enumerate()
        .map(|(k, x)| (x - mean[k % 3]).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Levenberg-Marquardt on the robustified chordal objective.
pub fn onedsfm_solve(g: &ViewGraph, cfg: &OnedsfmConfig) -> Result<(Locations, SolveDiagnostics)> {
    cfg.validate()?;
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let start = bata::initial_locations(
        g,
        &cfg.init,
        cfg.seed,
        RotationAssist::new(0.0)?,
        lls::DEFAULT_REG_REL,
    )?;
    let mut t = centralize_normalize(&start)?;
    let dim = 3 * g.n();
    let mut mu = 1e-4;
    let mut diag = SolveDiagnostics::default();
    let (mut f, mut grad) = onedsfm_objective_grad(g, &t, cfg)?;

    for _ in 0..cfg.max_iter {
        if centered_norm(&grad) <= cfg.gradient_tol {
            diag.converged = true;
            break;
        }
        // robust Gauss-Newton normal matrix
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        for e in g.edges() {
            let Some(term) = chordal_term(&e.baseline(&t), &e.v, cfg.epsilon_min) else {
                continue;
            };
            let wgt = cfg.loss.gradient_weight(term.r.norm());
            let jtj = term.jac.transpose() * term.jac * wgt;
            for (a, b, s) in [(e.i, e.i, 1.0), (e.j, e.j, 1.0), (e.i, e.j, -1.0), (e.j, e.i, -1.0)] {
                let mut blk = h.fixed_view_mut::<3, 3>(3 * a, 3 * b);
                blk += jtj * s;
            }
        }
        let scale = (0..dim).map(|k| h[(k, k)]).sum::<f64>() / dim as f64;
        let neg_grad = DVector::from_iterator(dim, grad.iter().map(|x| -x));

        let mut accepted = false;
        while mu < 1e12 {
            let mut damped = h.clone();
            for k in 0..dim {
                damped[(k, k)] += mu * (h[(k, k)] + scale);
            }
            let Some(chol) = damped.cholesky() else {
                mu *= 4.0;
                continue;
            };
            let step = chol.solve(&neg_grad);
            let trial = Locations::from_flat(
                &t.to_flat().iter().zip(step.iter()).map(|(a, b)| a + b).collect::<Vec<_>>(),
            )?;
            let trial = match centralize_normalize(&trial) {
                Ok(tr) => tr,
                Err(_) => {
                    mu *= 4.0;
                    continue;
                }
            };
            let f_trial = onedsfm_value(g, &trial, cfg);
            if f_trial < f {
                t = trial;
                mu = (mu / 3.0).max(1e-12);
                accepted = true;
                break;
            }
            mu *= 4.0;
        }
        diag.outer_iterations_used += 1;
        if !accepted {
            diag.objective_trace.push(f);
            break;
        }
        let (nf, ng) = onedsfm_objective_grad(g, &t, cfg)?;
        let stalled = (f - nf) <= 1e-15 * f.abs().max(f64::MIN_POSITIVE);
        f = nf;
        grad = ng;
        diag.objective_trace.push(f);
        if stalled {
            diag.converged = centered_norm(&grad) <= cfg.gradient_tol.max(1e-8);
            break;
        }
    }
    if !diag.converged && centered_norm(&grad) <= cfg.gradient_tol {
        diag.converged = true;
    }
    diag.weights = g
        .edges()
        .iter()
        .map(|e| {
            chordal_term(&e.baseline(&t), &e.v, cfg.epsilon_min)
                .map_or(0.0, |term| cfg.loss.weight_unchecked(term.r.norm()))
        })
        .collect();
    Ok((t, diag))
}
