//! Bilinear angle-based translation averaging.
//!
//! Each edge gets a free scale `d_ij >= 0` so that `(t_j - t_i) d_ij` can be
//! fit to the unit observation `v_ij`. At the optimal `d`, the residual of an
//! edge is `sin(theta)` for `theta <= 90 deg` and `1` beyond, where `theta` is
//! the angle between `t_j - t_i` and `v_ij`. Positional and scale gauge are
//! fixed by `sum t_i = 0` and `sum <t_j - t_i, v_ij> = 1`.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::baselines::RevisedLud;
use crate::error::{Error, Result};
use crate::graph::{Edge, Locations, UnitDirection, Vec3, ViewGraph};
use crate::irls::{self, Formulation, IrlsSettings, SolveDiagnostics};
use crate::lls::{self, EdgeLinearization, GaugeConstraints};
use crate::loss::{LossKind, RotationAssist};

/// Below this baseline length an edge is treated as degenerate (`d = 0`).
pub const DEGENERATE_BASELINE: f64 = 1e-14;

/// How a solver picks its starting point.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// I.i.d. standard normal locations projected onto the gauge.
    Random,
    Provided(Locations),
    /// A few rotation-assisted RevisedLUD iterations.
    Convex { irls_iter: usize, bcd_iter: usize },
}

impl Init {
    pub const CONVEX_DEFAULT: Init = Init::Convex { irls_iter: 50, bcd_iter: 1 };
}

#[derive(Debug, Clone, PartialEq)]
pub struct BataConfig {
    pub irls_iter: usize,
    pub bcd_iter: usize,
    pub loss: LossKind,
    pub beta: f64,
    pub conv_tol: f64,
    pub init: Init,
    pub seed: u64,
    pub reg_rel: f64,
}

impl Default for BataConfig {
    fn default() -> Self {
        Self {
            irls_iter: 100,
            bcd_iter: 5,
            loss: LossKind::Cauchy { alpha: 0.1 },
            beta: 1.0,
            conv_tol: 1e-5,
            init: Init::CONVEX_DEFAULT,
            seed: 0,
            reg_rel: lls::DEFAULT_REG_REL,
        }
    }
}

impl BataConfig {
    pub(crate) fn settings(&self) -> Result<IrlsSettings> {
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

/// Per-edge scale variables, all non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleVariables(Vec<f64>);

impl ScaleVariables {
    pub fn new(d: Vec<f64>) -> Result<Self> {
        if let Some(k) = d.iter().position(|x| !(*x >= 0.0 && x.is_finite())) {
            return Err(Error::Domain(format!("scale {k} is negative or not finite")));
        }
        Ok(Self(d))
    }

    /// Optimal scales for the given locations.
    pub fn optimal(g: &ViewGraph, t: &Locations) -> Self {
        Self(g.edges().iter().map(|e| update_d(&e.baseline(t), &e.v)).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `max(<dt, v> / ||dt||^2, 0)`, or 0 for a degenerate baseline.
pub fn update_d(dt: &Vec3, v: &UnitDirection) -> f64 {
    let n2 = dt.norm_squared();
    if n2.sqrt() < DEGENERATE_BASELINE {
        return 0.0;
    }
    (dt.dot(v.as_vec()) / n2).max(0.0)
}

/// Angular penalty: `sin(theta)` up to 90 degrees, 1 beyond.
pub fn h_theta(theta: f64) -> Result<f64> {
    if !(0.0..=PI).contains(&theta) {
        return Err(Error::Domain(format!("angle {theta} outside [0, pi]")));
    }
    Ok(if theta <= FRAC_PI_2 { theta.sin() } else { 1.0 })
}

/// Angle between two vectors, accurate near 0 and pi.
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Optimal `d`, the resulting residual, and the angle between `dt` and `v`.
pub fn optimal_penalty_equivalence(dt: &Vec3, v: &UnitDirection) -> Result<(f64, f64, f64)> {
    if !(dt.norm() > 0.0) {
        return Err(Error::Degenerate("baseline has zero length".into()));
    }
    let d = update_d(dt, v);
    let residual = (dt * d - v.as_vec()).norm();
    Ok((d, residual, angle_between(dt, v.as_vec())))
}

/// `sum rho(combined residual)` over edges at the given `t` and `d`.
pub fn bata_objective(
    g: &ViewGraph,
    t: &Locations,
    d: &ScaleVariables,
    loss: LossKind,
    beta: f64,
) -> Result<f64> {
    if d.0.len() != g.num_edges() || t.len() != g.n() {
        return Err(Error::Config("size mismatch between graph, locations and scales".into()));
    }
    let assist = RotationAssist::new(beta)?;
    Ok(irls::robust_objective(&Bata, g, t, &d.0, loss, assist))
}

/// The BATA edge model: `||(t_j - t_i) d - v||` with `d >= 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Bata;

impl Formulation for Bata {
    fn update_scale(&self, dt: &Vec3, v: &UnitDirection) -> f64 {
        update_d(dt, v)
    }

    fn linearize(&self, e: &Edge, d: f64, w: f64) -> EdgeLinearization {
        EdgeLinearization::new(e.i, e.j, d, *e.v.as_vec(), w)
    }

    fn residual(&self, dt: &Vec3, d: f64, v: &UnitDirection) -> f64 {
        (dt * d - v.as_vec()).norm()
    }

    fn constraints(&self, g: &ViewGraph) -> GaugeConstraints {
        lls::build_bata_constraints(g)
    }
}

/// Centers `t` and rescales it so that `sum <t_j - t_i, v_ij> = 1`.
pub fn project_to_bata_gauge(g: &ViewGraph, t: &Locations) -> Result<Locations> {
    let c = t.centered();
    let s = g.scale_functional(&c);
    let mag = c.sum_sq_norm().sqrt() * g.num_edges().max(1) as f64;
    if !(s.abs() > 1e-12 * mag.max(1e-300)) {
        return Err(Error::Degenerate("scale functional vanishes at these locations".into()));
    }
    // a negative functional flips every location
    Ok(c.scaled(1.0 / s))
}

pub(crate) fn random_gauge_start(g: &ViewGraph, seed: u64) -> Result<Locations> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..100 {
        let pts = (0..g.n())
            .map(|_| {
                Vec3::new(
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                )
            })
            .collect();
        if let Ok(t) = project_to_bata_gauge(g, &Locations::new(pts)?) {
            return Ok(t);
        }
    }
    Err(Error::Degenerate("could not draw a start with a non-vanishing scale functional".into()))
}

pub(crate) fn initial_locations(
    g: &ViewGraph,
    init: &Init,
    seed: u64,
    assist: RotationAssist,
    reg_rel: f64,
) -> Result<Locations> {
    match init {
        Init::Random => random_gauge_start(g, seed),
        Init::Provided(t) => {
            if t.len() != g.n() {
                return Err(Error::Config(format!(
                    "provided locations have {} cameras, graph has {}",
                    t.len(),
                    g.n()
                )));
            }
            project_to_bata_gauge(g, t)
        }
        Init::Convex { irls_iter, bcd_iter } => {
            let settings = IrlsSettings {
                irls_iter: *irls_iter,
                bcd_iter: *bcd_iter,
                loss: LossKind::L21Smooth { floor: crate::loss::DEFAULT_L21_FLOOR },
                assist,
                conv_tol: 1e-5,
                reg_rel,
            };
            let t0 = random_gauge_start(g, seed)?;
            Ok(irls::irls_bcd(g, &RevisedLud, &settings, t0)?.0)
        }
    }
}

/// Runs IRLS-BCD on the BATA objective.
pub fn solve(g: &ViewGraph, cfg: &BataConfig) -> Result<(Locations, SolveDiagnostics)> {
    let settings = cfg.settings()?;
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let t0 = initial_locations(g, &cfg.init, cfg.seed, settings.assist, cfg.reg_rel)?;
    irls::irls_bcd(g, &Bata, &settings, t0)
}
