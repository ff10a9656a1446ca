//! Shared IRLS driver with block coordinate descent over `(t, d)`.
//!
//! BATA, RevisedLUD and LUD differ only in how the per-edge scale `d` is
//! updated, how an edge linearizes for the t-update, and which gauge
//! constraints hold; those live behind [`Formulation`].

use crate::error::{Error, Result};
use crate::graph::{Edge, Locations, UnitDirection, Vec3, ViewGraph};
use crate::lls::{self, EdgeLinearization, GaugeConstraints, PreparedLls};
use crate::loss::{LossKind, RotationAssist};

/// Lower clamp applied to every IRLS weight.
pub const WEIGHT_FLOOR: f64 = 1e-12;

pub trait Formulation {
    /// Exact minimizer of the edge term over its scale variable.
    fn update_scale(&self, dt: &Vec3, v: &UnitDirection) -> f64;

    /// The edge's row in the weighted t-update.
    fn linearize(&self, e: &Edge, d: f64, w: f64) -> EdgeLinearization;

    /// Translation residual `||a dt - b||` of the edge at scale `d`.
    fn residual(&self, dt: &Vec3, d: f64, v: &UnitDirection) -> f64;

    fn constraints(&self, g: &ViewGraph) -> GaugeConstraints;

    /// True when `linearize` gives the same `a` for every `d`, so the normal
    /// matrix is fixed between reweightings and one factorization serves every
    /// inner pass.
    fn matrix_independent_of_scale(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrlsSettings {
    pub irls_iter: usize,
    pub bcd_iter: usize,
    pub loss: LossKind,
    pub assist: RotationAssist,
    pub conv_tol: f64,
    /// Tikhonov weight relative to the mean diagonal of the normal matrix.
    pub reg_rel: f64,
}

impl IrlsSettings {
    pub fn validate(&self) -> Result<()> {
        if self.irls_iter == 0 || self.bcd_iter == 0 {
            return Err(Error::Config("iteration counts must be at least 1".into()));
        }
        if !(self.conv_tol.is_finite() && self.conv_tol > 0.0) {
            return Err(Error::Config(format!("conv_tol must be positive, got {}", self.conv_tol)));
        }
        if !(self.reg_rel.is_finite() && self.reg_rel >= 0.0) {
            return Err(Error::Config("reg_rel must be non-negative".into()));
        }
        self.loss.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolveDiagnostics {
    /// Robust objective after each outer (reweighting) iteration.
    pub objective_trace: Vec<f64>,
    pub outer_iterations_used: usize,
    pub converged: bool,
    /// IRLS weights after the last reweighting.
    pub weights: Vec<f64>,
    /// Final per-edge scale variables.
    pub scales: Vec<f64>,
    /// Per outer iteration: weighted least-squares value after every BCD substep
    /// (d-update, t-update, d-update, ...) at that iteration's fixed weights.
    pub bcd_trace: Vec<Vec<f64>>,
}

fn weighted_value<F: Formulation>(
    form: &F,
    g: &ViewGraph,
    t: &Locations,
    d: &[f64],
    w: &[f64],
) -> f64 {
    g.edges()
        .iter()
        .zip(d)
        .zip(w)
        .map(|((e, &dk), &wk)| {
            let r = form.residual(&e.baseline(t), dk, &e.v);
            wk * r * r
        })
        .sum()
}

/// Robust objective `sum rho(eps)` with the rotation-assisted residual.
pub fn robust_objective<F: Formulation>(
    form: &F,
    g: &ViewGraph,
    t: &Locations,
    d: &[f64],
    loss: LossKind,
    assist: RotationAssist,
) -> f64 {
    g.edges()
        .iter()
        .zip(d)
        .map(|(e, &dk)| {
            let r = form.residual(&e.baseline(t), dk, &e.v);
            loss.rho_unchecked(assist.combine(r, e.rot_residual))
        })
        .sum()
}

/// Factors without regularization when the grounded system is definite, so the
/// t-update minimizes the weighted objective itself; otherwise (or if that
/// factorization fails) adds the relative Tikhonov term.
fn prepare(rows: &[EdgeLinearization], n: usize, c: &GaugeConstraints, reg_rel: f64) -> Result<PreparedLls> {
    if lls::definite_without_reg(rows, n, c) {
        match PreparedLls::new(rows, n, c, 0.0) {
            Err(Error::Singular(_)) if reg_rel > 0.0 => {}
            other => return other,
        }
    }
    PreparedLls::new(rows, n, c, lls::relative_reg(rows, n, reg_rel))
}

/// Runs IRLS-BCD from `t0`, which should already satisfy the gauge.
pub fn irls_bcd<F: Formulation>(
    g: &ViewGraph,
    form: &F,
    settings: &IrlsSettings,
    t0: Locations,
) -> Result<(Locations, SolveDiagnostics)> {
    settings.validate()?;
    if t0.len() != g.n() {
        return Err(Error::Config(format!(
            "initial locations have {} cameras, graph has {}",
            t0.len(),
            g.n()
        )));
    }
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let edges = g.edges();
    let constraints = form.constraints(g);
    let mut t = t0;
    let mut w = vec![1.0; edges.len()];
    let mut d = vec![0.0; edges.len()];
    let mut diag = SolveDiagnostics::default();
    let mut prev: Option<f64> = None;
    let mut rows = Vec::with_capacity(edges.len());

    let reuse = form.matrix_independent_of_scale();
    for _outer in 0..settings.irls_iter {
        let mut pass_trace = Vec::with_capacity(2 * settings.bcd_iter);
        let mut prepared: Option<PreparedLls> = None;
        let mut last_rows: Vec<EdgeLinearization> = Vec::new();
        // a common factor leaves the minimizer alone; unit max weight keeps the
        // normal matrix on the scale the solve certificate is judged against
        let w_max = w.iter().copied().fold(0.0, f64::max);
        for _inner in 0..settings.bcd_iter {
            for (dk, e) in d.iter_mut().zip(edges) {
                *dk = form.update_scale(&e.baseline(&t), &e.v);
            }
            pass_trace.push(weighted_value(form, g, &t, &d, &w));

            rows.clear();
            rows.extend(edges.iter().zip(&d).zip(&w).map(|((e, &dk), &wk)| form.linearize(e, dk, wk / w_max)));
            if rows == last_rows {
                // the t-update would reproduce t
                pass_trace.pop();
                break;
            }
            if prepared.is_none() || !reuse {
                prepared = Some(prepare(&rows, g.n(), &constraints, settings.reg_rel)?);
            }
            let (t_new, _report) = prepared.as_ref().expect("factored above").solve(&rows)?;
            t = t_new;
            pass_trace.push(weighted_value(form, g, &t, &d, &w));
            std::mem::swap(&mut rows, &mut last_rows);
        }
        diag.bcd_trace.push(pass_trace);

        let mut f = 0.0;
        for ((wk, e), &dk) in w.iter_mut().zip(edges).zip(&d) {
            let r = form.residual(&e.baseline(&t), dk, &e.v);
            let eps = settings.assist.combine(r, e.rot_residual);
            f += settings.loss.rho_unchecked(eps);
            *wk = settings.loss.weight_unchecked(eps).max(WEIGHT_FLOOR);
        }
        diag.objective_trace.push(f);
        diag.outer_iterations_used += 1;
        if let Some(fl) = prev {
            if (f - fl).abs() <= settings.conv_tol * fl {
                diag.converged = true;
                break;
            }
        }
        prev = Some(f);
    }
    diag.weights = w;
    diag.scales = d;
    Ok((t, diag))
}
