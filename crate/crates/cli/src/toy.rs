//! Small planar studies: objective minimizers on a grid, and the squashing of a
//! far camera by the lower-bounded LUD scales.

use std::fmt::Write as _;

use bata_core::baselines::{self, linear_grid, LudConfig};
use bata_core::bata::angle_between;
use bata_core::metrics::nrmse;
use bata_core::synthetic::axis_angle_rotate;
use bata_core::{Edge, Error, Locations, Result, UnitDirection, Vec3, ViewGraph};

/// Observed direction of `to - from`, rotated counter-clockwise in the plane.
fn noisy_direction(from: &Vec3, to: &Vec3, noise_deg: f64) -> Result<UnitDirection> {
    let z = UnitDirection::from_xyz(0.0, 0.0, 1.0)?;
    UnitDirection::normalize(axis_angle_rotate(&(to - from), &z, noise_deg.to_radians()))
}

pub const GRID_NEIGHBORS: [[f64; 2]; 3] = [[-1.0, 0.0], [0.0, -1.0], [5.0, 0.0]];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridMinimum {
    pub x: f64,
    pub y: f64,
    pub value: f64,
}

impl GridMinimum {
    pub fn distance_to_origin(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyGridResult {
    pub noise_deg: f64,
    pub resolution: f64,
    /// `sum ||x - n_k - ||x - n_k|| v_k||^2`.
    pub magnitude: GridMinimum,
    /// `sum theta_k^2`.
    pub angular: GridMinimum,
}

/// Exhaustive search over `[-2, 2]^2` for a camera at the origin observed from
/// three neighbors, each direction rotated by `noise_deg`.
pub fn toy_grid(resolution: f64, noise_deg: f64) -> Result<ToyGridResult> {
    if !(resolution.is_finite() && resolution > 0.0 && resolution <= 1.0) {
        return Err(Error::Config(format!("grid resolution must lie in (0, 1], got {resolution}")));
    }
    let neighbors: Vec<Vec3> = GRID_NEIGHBORS.iter().map(|p| Vec3::new(p[0], p[1], 0.0)).collect();
    let obs: Vec<Vec3> = neighbors
        .iter()
        .map(|n| noisy_direction(n, &Vec3::zeros(), noise_deg).map(|v| v.into_vec()))
        .collect::<Result<_>>()?;
    let steps = (4.0 / resolution).round() as usize;
    let coord = |k: usize| -2.0 + 4.0 * k as f64 / steps as f64;
    let mut mag = GridMinimum { x: f64::NAN, y: f64::NAN, value: f64::INFINITY };
    let mut ang = mag;
    for ix in 0..=steps {
        for iy in 0..=steps {
            let x = Vec3::new(coord(ix), coord(iy), 0.0);
            let (mut fm, mut fa) = (0.0, 0.0);
            for (n, v) in neighbors.iter().zip(&obs) {
                let d = x - n;
                fm += (d - v * d.norm()).norm_squared();
                let theta = if d.norm() > 0.0 { angle_between(&d, v) } else { std::f64::consts::PI };
                fa += theta * theta;
            }
            if fm < mag.value {
                mag = GridMinimum { x: x.x, y: x.y, value: fm };
            }
            if fa < ang.value {
                ang = GridMinimum { x: x.x, y: x.y, value: fa };
            }
        }
    }
    Ok(ToyGridResult { noise_deg, resolution: 4.0 / steps as f64, magnitude: mag, angular: ang })
}

pub fn toy_grid_csv(results: &[ToyGridResult]) -> String {
    let mut s = String::from("noise_deg,resolution,objective,x,y,distance,value\n");
    for r in results {
        for (name, m) in [("magnitude", r.magnitude), ("angular", r.angular)] {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.noise_deg,
                r.resolution,
                name,
                m.x,
                m.y,
                m.distance_to_origin(),
                m.value
            );
        }
    }
    s
}

pub const SQUASH_CAMERAS: [[f64; 2]; 4] = [[0.0, 1.0], [-1.0, 0.0], [0.0, -1.0], [10.0, 0.0]];

#[derive(Debug, Clone, PartialEq)]
pub struct SquashEdge {
    pub i: usize,
    pub j: usize,
    /// Baseline length divided by the perimeter of the near triangle.
    pub baseline_lud: f64,
    pub baseline_revisedlud: f64,
    pub baseline_truth: f64,
    pub residual_lud: f64,
    pub residual_revisedlud: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToySquashReport {
    pub noise_deg: f64,
    pub c: f64,
    /// LUD objective at the LUD solution (scales free to exceed the bound).
    pub regime2_objective: f64,
    /// LUD objective on the best rescaling of the RevisedLUD shape.
    pub regime1_objective: f64,
    pub regime1_gamma: f64,
    pub edges: Vec<SquashEdge>,
    /// Distance from camera 4 to the centroid of cameras 1-3, per unit triangle perimeter.
    pub cam4_lud: f64,
    pub cam4_revisedlud: f64,
    pub cam4_truth: f64,
    pub nrmse_lud: f64,
    pub nrmse_revisedlud: f64,
}

fn near_perimeter(t: &Locations) -> f64 {
    (t[0] - t[1]).norm() + (t[1] - t[2]).norm() + (t[2] - t[0]).norm()
}

fn cam4_ratio(t: &Locations) -> f64 {
    let c = (t[0] + t[1] + t[2]) / 3.0;
    (t[3] - c).norm() / near_perimeter(t)
}

/// Builds the four-camera graph with every direction rotated by `noise_deg`,
/// alternating the sense of rotation over the edge list (a common rotation of
/// every edge is just a rotated, noiseless configuration).
pub fn squash_instance(noise_deg: f64) -> Result<(ViewGraph, Locations)> {
    let truth = Locations::new(SQUASH_CAMERAS.iter().map(|p| Vec3::new(p[0], p[1], 0.0)).collect())?;
    let mut edges = Vec::new();
    for i in 0..4 {
        for j in i + 1..4 {
            let sign = if edges.len() % 2 == 0 { 1.0 } else { -1.0 };
            edges.push(Edge::new(i, j, noisy_direction(&truth[i], &truth[j], sign * noise_deg)?));
        }
    }
    Ok((ViewGraph::new(4, edges)?, truth))
}

pub fn toy_squash(noise_deg: f64, c: f64, seed: u64) -> Result<ToySquashReport> {
    let (g, truth) = squash_instance(noise_deg)?;
    let cfg = LudConfig { c, seed, ..Default::default() };
    let (t_lud, _) = baselines::lud_solve(&g, &cfg)?;
    let (t_shape, _) = baselines::revised_lud_solve(&g, &cfg)?;

    // beyond gamma_max every edge leaves the bound and the objective only grows
    let a_min = g
        .edges()
        .iter()
        .map(|e| e.baseline(&t_shape).dot(e.v.as_vec()))
        .filter(|a| *a > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !a_min.is_finite() {
        return Err(Error::Degenerate("no edge of the shape points along its observation".into()));
    }
    let gamma_max = 2.0 * c / a_min;
    let coarse = linear_grid(0.0, gamma_max, 20_001);
    let (g0, _) = baselines::regime1_residual(&g, &t_shape, c, &coarse)?;
    let h = gamma_max / 20_000.0;
    let fine = linear_grid((g0 - h).max(0.0), g0 + h, 2_001);
    let (regime1_gamma, regime1_objective) = baselines::regime1_residual(&g, &t_shape, c, &fine)?;

    let lud = baselines::Lud { c };
    let rlud = baselines::RevisedLud;
    use bata_core::irls::Formulation;
    let (p_lud, p_rlud, p_true) = (near_perimeter(&t_lud), near_perimeter(&t_shape), near_perimeter(&truth));
    let edges = g
        .edges()
        .iter()
        .map(|e| {
            let dl = e.baseline(&t_lud);
            let dr = e.baseline(&t_shape);
            SquashEdge {
                i: e.i,
                j: e.j,
                baseline_lud: dl.norm() / p_lud,
                baseline_revisedlud: dr.norm() / p_rlud,
                baseline_truth: e.baseline(&truth).norm() / p_true,
                residual_lud: lud.residual(&dl, lud.update_scale(&dl, &e.v), &e.v),
                residual_revisedlud: rlud.residual(&dr, rlud.update_scale(&dr, &e.v), &e.v),
            }
        })
        .collect();
    Ok(ToySquashReport {
        noise_deg,
        c,
        regime2_objective: baselines::lud_objective(&g, &t_lud, c),
        regime1_objective,
        regime1_gamma,
        edges,
        cam4_lud: cam4_ratio(&t_lud),
        cam4_revisedlud: cam4_ratio(&t_shape),
        cam4_truth: cam4_ratio(&truth),
        nrmse_lud: nrmse(&t_lud, &truth)?,
        nrmse_revisedlud: nrmse(&t_shape, &truth)?,
    })
}

pub fn toy_squash_csv(r: &ToySquashReport) -> String {
    let mut s = String::from("record,i,j,lud,revisedlud,truth\n");
    for e in &r.edges {
        let _ = writeln!(s, "baseline,{},{},{},{},{}", e.i, e.j, e.baseline_lud, e.baseline_revisedlud, e.baseline_truth);
    }
    for e in &r.edges {
        let _ = writeln!(s, "residual,{},{},{},{},", e.i, e.j, e.residual_lud, e.residual_revisedlud);
    }
    let _ = writeln!(s, "objective,,,{},{},", r.regime2_objective, r.regime1_objective);
    let _ = writeln!(s, "gamma,,,,{},", r.regime1_gamma);
    let _ = writeln!(s, "cam4_ratio,,,{},{},{}", r.cam4_lud, r.cam4_revisedlud, r.cam4_truth);
    let _ = writeln!(s, "nrmse,,,{},{},0", r.nrmse_lud, r.nrmse_revisedlud);
    s
}
