//! Synthetic sweeps: every grid cell x trial x method, one CSV row each, plus
//! per-cell medians.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;

use bata_core::metrics::{self, median};
use bata_core::synthetic::{self, derive_seed, SynthConfig, SynthInstance, TwoClusterConfig};
use bata_core::{Error, Locations, Result};

use crate::method::{run_method, Method, SolverOptions};

pub const CSV_HEADER: &str = "p,q,sigma_deg,L,trial,method,nrmse,r1,r2,r3,iters,converged,seconds,status";

/// A method column of the sweep: a solver, or the ground truth itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    Solver(Method),
    Truth,
}

impl Column {
    pub fn name(self) -> &'static str {
        match self {
            Column::Solver(m) => m.name(),
            Column::Truth => "truth",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s.trim() == "truth" {
            Ok(Column::Truth)
        } else {
            s.parse().map(Column::Solver)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    /// `(p, q)` pairs.
    pub cells: Vec<(f64, f64)>,
    pub sigmas: Vec<f64>,
    /// Cluster separations; switches to the two-cluster protocol with `n / 2` cameras per cluster.
    pub separations: Option<Vec<f64>>,
    pub trials: usize,
    pub n: usize,
    pub seed: u64,
    /// Rotation residual given to outlier edges (inliers get 0).
    pub rot_proxy: f64,
    /// Normalize each cluster separately when computing NRMSE.
    pub separate_normalization: bool,
    pub timing: bool,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            cells: vec![(0.1, 0.0), (0.1, 0.2), (0.3, 0.0), (0.3, 0.2), (0.5, 0.0), (0.5, 0.2)],
            sigmas: vec![0.0, 5.0, 10.0, 15.0],
            separations: None,
            trials: 20,
            n: 200,
            seed: 0,
            rot_proxy: 2.0,
            separate_normalization: false,
            timing: false,
        }
    }
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() || self.sigmas.is_empty() {
            return Err(Error::Config("sweep grid axes must be non-empty".into()));
        }
        if self.separations.as_ref().is_some_and(Vec::is_empty) {
            return Err(Error::Config("separation list must be non-empty".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.separations.is_some() && self.n % 2 != 0 {
            return Err(Error::Config(format!("two-cluster sweeps need an even n, got {}", self.n)));
        }
        if !(self.rot_proxy.is_finite() && self.rot_proxy >= 0.0) {
            return Err(Error::Config("rot_proxy must be non-negative".into()));
        }
        Ok(())
    }

    fn cell_list(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &(p, q) in &self.cells {
            for &sigma_deg in &self.sigmas {
                match &self.separations {
                    None => out.push(Cell { p, q, sigma_deg, separation: None }),
                    Some(ls) => out.extend(ls.iter().map(|&l| Cell { p, q, sigma_deg, separation: Some(l) })),
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub p: f64,
    pub q: f64,
    pub sigma_deg: f64,
    pub separation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub cell: Cell,
    /// `None` marks the per-cell median row.
    pub trial: Option<usize>,
    pub method: &'static str,
    pub nrmse: Option<f64>,
    pub r1: Option<f64>,
    pub r2: Option<f64>,
    pub r3: Option<f64>,
    pub iters: Option<f64>,
    /// Trial rows: 0 or 1. Median rows: fraction of successful trials that converged.
    pub converged: Option<f64>,
    pub seconds: Option<f64>,
    pub status: String,
}

impl SweepRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

fn instance(grid: &SweepGrid, cell: &Cell, seed: u64) -> Result<SynthInstance> {
    match cell.separation {
        None => synthetic::gen_instance(&SynthConfig {
            n: grid.n,
            p: cell.p,
            q: cell.q,
            sigma_deg: cell.sigma_deg,
            seed,
        }),
        Some(l) => synthetic::gen_two_cluster(&TwoClusterConfig {
            n_per_cluster: grid.n / 2,
            separation: l,
            p: cell.p,
            q: cell.q,
            sigma_deg: cell.sigma_deg,
            seed,
        }),
    }
}

fn evaluate(
    grid: &SweepGrid,
    inst: &SynthInstance,
    t: &Locations,
) -> (Option<f64>, Option<f64>, Option<f64>, Option<f64>) {
    let nrmse = match (&inst.cluster_labels, grid.separate_normalization) {
        (Some(labels), true) => metrics::nrmse_per_cluster(t, &inst.truth, labels),
        _ => metrics::nrmse(t, &inst.truth),
    }
    .ok();
    let sq = metrics::squash_r1_r2(&inst.graph, t).ok();
    let r3 = inst.cluster_labels.as_ref().and_then(|l| metrics::squash_r3(t, l).ok());
    (nrmse, sq.map(|s| s.r1), sq.map(|s| s.r2), r3)
}

fn clean(msg: &str) -> String {
    msg.replace([',', '\n', '\r'], ";")
}

fn run_trial(
    grid: &SweepGrid,
    cell: &Cell,
    trial: usize,
    columns: &[Column],
    opts: &SolverOptions,
) -> Vec<SweepRow> {
    let seed = derive_seed(grid.seed, trial as u64);
    let failed = |method: &'static str, msg: String| SweepRow {
        cell: *cell,
        trial: Some(trial),
        method,
        nrmse: None,
        r1: None,
        r2: None,
        r3: None,
        iters: None,
        converged: Some(0.0),
        seconds: None,
        status: format!("failed: {}", clean(&msg)),
    };
    let inst = match instance(grid, cell, seed) {
        Ok(inst) => inst,
        Err(e) => return columns.iter().map(|c| failed(c.name(), e.to_string())).collect(),
    };
    let g = match inst.with_rotation_proxy(0.0, grid.rot_proxy) {
        Ok(g) => g,
        Err(e) => return columns.iter().map(|c| failed(c.name(), e.to_string())).collect(),
    };
    columns
        .iter()
        .map(|&col| {
            let start = Instant::now();
            let (t, iters, converged) = match col {
                Column::Truth => (inst.truth.clone(), 0, true),
                Column::Solver(m) => match run_method(m, &g, opts, seed) {
                    Ok((t, d)) => (t, d.outer_iterations_used, d.converged),
                    Err(e) => return failed(col.name(), e.to_string()),
                },
            };
            let seconds = grid.timing.then(|| start.elapsed().as_secs_f64());
            let (nrmse, r1, r2, r3) = evaluate(grid, &inst, &t);
            SweepRow {
                cell: *cell,
                trial: Some(trial),
                method: col.name(),
                nrmse,
                r1,
                r2,
                r3,
                iters: Some(iters as f64),
                converged: Some(if converged { 1.0 } else { 0.0 }),
                seconds,
                status: "ok".into(),
            }
        })
        .collect()
}

fn median_of(rows: &[&SweepRow], f: impl Fn(&SweepRow) -> Option<f64>) -> Option<f64> {
    let v: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
    median(&v).ok()
}

fn aggregate(cell: &Cell, method: &'static str, rows: &[&SweepRow], timing: bool) -> SweepRow {
    let good: Vec<&SweepRow> = rows.iter().copied().filter(|r| r.ok()).collect();
    let converged = if good.is_empty() {
        None
    } else {
        Some(good.iter().filter_map(|r| r.converged).sum::<f64>() / good.len() as f64)
    };
    SweepRow {
        cell: *cell,
        trial: None,
        method,
        nrmse: median_of(&good, |r| r.nrmse),
        r1: median_of(&good, |r| r.r1),
        r2: median_of(&good, |r| r.r2),
        r3: median_of(&good, |r| r.r3),
        iters: median_of(&good, |r| r.iters),
        converged,
        seconds: if timing { median_of(&good, |r| r.seconds) } else { None },
        status: format!("median of {}/{}", good.len(), rows.len()),
    }
}

/// Runs the sweep. Trials execute in parallel on the current rayon pool but rows
/// come back in grid order, so the output does not depend on the thread count.
pub fn run_sweep(grid: &SweepGrid, columns: &[Column], opts: &SolverOptions) -> Result<Vec<SweepRow>> {
    grid.validate()?;
    if columns.is_empty() {
        return Err(Error::Config("at least one method is required".into()));
    }
    let cells = grid.cell_list();
    let tasks: Vec<(usize, usize)> =
        (0..cells.len()).flat_map(|c| (0..grid.trials).map(move |t| (c, t))).collect();
    let results: Vec<Vec<SweepRow>> = tasks
        .par_iter()
        .map(|&(c, t)| run_trial(grid, &cells[c], t, columns, opts))
        .collect();

    let mut out = Vec::with_capacity(results.len() * columns.len() + cells.len() * columns.len());
    for (c, cell) in cells.iter().enumerate() {
        let block = &results[c * grid.trials..(c + 1) * grid.trials];
        for rows in block {
            out.extend(rows.iter().cloned());
        }
        for (k, col) in columns.iter().enumerate() {
            let rows: Vec<&SweepRow> = block.iter().map(|r| &r[k]).collect();
            out.push(aggregate(cell, col.name(), &rows, grid.timing));
        }
    }
    Ok(out)
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.cell.p,
            r.cell.q,
            r.cell.sigma_deg,
            opt(r.cell.separation),
            r.trial.map_or_else(|| "median".to_string(), |t| t.to_string()),
            r.method,
            opt(r.nrmse),
            opt(r.r1),
            opt(r.r2),
            opt(r.r3),
            opt(r.iters),
            opt(r.converged),
            opt(r.seconds),
            r.status
        );
    }
    s
}
