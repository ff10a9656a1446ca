//! End-to-end acceptance checks. Prints one `PASS`/`FAIL` line per criterion
//! and exits non-zero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use bata_cli::{run_sweep, toy, Column, Method, SolverOptions, SweepGrid, SweepRow};
use bata_core::baselines::{onedsfm_objective_grad, shapefit_residual, OnedsfmConfig};
use bata_core::bata::{self, angle_between, h_theta, optimal_penalty_equivalence, BataConfig, Init};
use bata_core::lls::{self, build_bata_constraints, build_centroid_constraints, EdgeLinearization, GaugeConstraints};
use bata_core::metrics::nrmse;
use bata_core::synthetic::{gen_instance, SynthConfig};
use bata_core::{Edge, Locations, LossKind, UnitDirection, Vec3, ViewGraph};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn random_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vec3 {
    Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)) * scale
}

fn random_dir(rng: &mut ChaCha8Rng) -> UnitDirection {
    loop {
        if let Ok(v) = UnitDirection::normalize(random_vec(rng, 1.0)) {
            return v;
        }
    }
}

fn c1_penalty_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..100_000 {
        let scale = rng.random_range(0.01..10.0);
        let dt = random_vec(&mut rng, scale);
        let v = random_dir(&mut rng);
        let (_, residual, theta) = optimal_penalty_equivalence(&dt, &v).expect("non-zero baseline");
        worst = worst.max((residual - h_theta(theta).expect("angle in range")).abs());
    }
    let took = start.elapsed();
    outcome(worst <= 1e-12 && took < Duration::from_secs(5), format!("max |r - h| = {worst:.2e}, {took:.2?}"))
}

fn c2_shapefit_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..100_000 {
        let scale = rng.random_range(0.01..10.0);
        let dt = random_vec(&mut rng, scale);
        let v = random_dir(&mut rng);
        let theta = angle_between(&dt, v.as_vec());
        worst = worst.max((shapefit_residual(&dt, &v) - dt.norm() * theta.sin()).abs());
    }
    outcome(worst <= 1e-12, format!("max deviation {worst:.2e}"))
}

fn c3_bcd_monotonicity() -> Outcome {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for k in 0..100u64 {
        let n = 8 + (k as usize % 23);
        let cfg = SynthConfig { n, p: 0.4, q: 0.2 * (k % 2) as f64, sigma_deg: (k % 4) as f64 * 5.0, seed: k };
        let Ok(inst) = gen_instance(&cfg) else { continue };
        let Ok(g) = inst.with_rotation_proxy(0.0, 2.0) else { continue };
        let init = if k % 3 == 0 { Init::CONVEX_DEFAULT } else { Init::Random };
        let cfg = BataConfig { irls_iter: 20, seed: k, init, ..Default::default() };
        let (_, diag) = match bata::solve(&g, &cfg) {
            Ok(r) => r,
            Err(e) => return outcome(false, format!("instance {k}: {e}")),
        };
        // Cauchy weights are at most 1, so evaluating m unit-scale residuals to
        // within a few dozen ulps bounds the roundoff floor of the trace
        let floor = g.num_edges() as f64 * (64.0 * f64::EPSILON).powi(2);
        for pass in &diag.bcd_trace {
            for w in pass.windows(2) {
                worst = worst.max((w[1] - w[0] - floor) / w[0].abs().max(f64::MIN_POSITIVE));
            }
        }
        checked += 1;
    }
    outcome(checked == 100 && worst <= 1e-10, format!("{checked} instances, largest relative increase above roundoff {worst:.2e}"))
}

fn dense_kkt(rows: &[EdgeLinearization], n: usize, c: &GaugeConstraints, reg: f64) -> Option<DVector<f64>> {
    let n3 = 3 * n;
    let m = c.len();
    let mut k = DMatrix::<f64>::zeros(n3 + m, n3 + m);
    let mut rhs = DVector::<f64>::zeros(n3 + m);
    for r in rows {
        let h = r.w * r.a * r.a;
        let g = r.b * (r.w * r.a);
        for (x, sx) in [(r.i, -1.0), (r.j, 1.0)] {
            for (y, sy) in [(r.i, -1.0), (r.j, 1.0)] {
                for axis in 0..3 {
                    k[(3 * x + axis, 3 * y + axis)] += h * sx * sy;
                }
            }
            for axis in 0..3 {
                rhs[3 * x + axis] += sx * g[axis];
            }
        }
    }
    for d in 0..n3 {
        k[(d, d)] += reg;
    }
    for (a, row) in c.rows.iter().enumerate() {
        for &(idx, coef) in &row.coeffs {
            k[(n3 + a, idx)] += coef;
            k[(idx, n3 + a)] += coef;
        }
        rhs[n3 + a] = row.rhs;
    }
    k.lu().solve(&rhs).map(|s| s.rows(0, n3).into_owned())
}

fn c4_lls_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst, mut worst_stat, mut worst_viol) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..100 {
        let n = rng.random_range(3..=20);
        let mut pairs: Vec<(usize, usize)> = (1..n).map(|j| (rng.random_range(0..j), j)).collect();
        for _ in 0..n {
            let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
            if i != j && !pairs.contains(&(i, j)) && !pairs.contains(&(j, i)) {
                pairs.push((i, j));
            }
        }
        let edges: Vec<Edge> = pairs.iter().map(|&(i, j)| Edge::new(i, j, random_dir(&mut rng))).collect();
        let g = ViewGraph::new(n, edges).expect("valid graph");
        let rows: Vec<EdgeLinearization> = g
            .edges()
            .iter()
            .map(|e| {
                let a = if k % 2 == 0 { 1.0 } else { rng.random_range(0.2..2.0) };
                EdgeLinearization::new(e.i, e.j, a, random_vec(&mut rng, 1.0), rng.random_range(0.1..10.0))
            })
            .collect();
        let gauge = if k % 3 == 0 { build_centroid_constraints(n) } else { build_bata_constraints(&g) };
        let reg = if k % 4 == 0 { 1e-3 } else { 0.0 };
        let (t, report) = match lls::solve_constrained(&rows, n, &gauge, reg) {
            Ok(r) => r,
            Err(e) => return outcome(false, format!("instance {k}: {e}")),
        };
        let Some(x) = dense_kkt(&rows, n, &gauge, reg) else {
            return outcome(false, format!("instance {k}: dense oracle singular"));
        };
        let got = DVector::from_vec(t.to_flat());
        worst = worst.max((&got - &x).norm() / x.norm());
        worst_stat = worst_stat.max(report.stationarity_norm / (1.0 + report.rhs_norm));
        worst_viol = worst_viol.max(report.constraint_violation);
    }
    outcome(
        worst < 1e-8 && worst_stat <= 1e-8 && worst_viol <= 1e-10,
        format!("max rel diff {worst:.2e}, stationarity {worst_stat:.2e}, violation {worst_viol:.2e}"),
    )
}

fn c5_exact_recovery() -> Outcome {
    let start = Instant::now();
    let mut worst = [0.0f64; 4];
    for seed in 0..5u64 {
        let inst = gen_instance(&SynthConfig { n: 50, p: 0.3, q: 0.0, sigma_deg: 0.0, seed }).expect("instance");
        let g = &inst.graph;
        let opts = SolverOptions::default();
        for (k, m) in Method::ALL.iter().enumerate() {
            let e = match bata_cli::run_method(*m, g, &opts, seed) {
                Ok((t, _)) => nrmse(&t, &inst.truth).unwrap_or(f64::INFINITY),
                Err(_) => f64::INFINITY,
            };
            worst[k] = worst[k].max(e);
        }
    }
    let took = start.elapsed();
    let pass = worst[..3].iter().all(|&e| e < 1e-6) && worst[3] < 1e-5 && took < Duration::from_secs(30);
    outcome(
        pass,
        format!(
            "worst nrmse bata {:.1e} revisedlud {:.1e} lud {:.1e} onedsfm {:.1e}, {took:.2?}",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

/// The aggregate row of `method` within the cells accepted by `cell`.
fn median_row<'a>(rows: &'a [SweepRow], method: &str, cell: impl Fn(&SweepRow) -> bool) -> Option<&'a SweepRow> {
    rows.iter().find(|r| r.trial.is_none() && r.method == method && cell(r))
}

fn solvers(ms: &[Method]) -> Vec<Column> {
    ms.iter().map(|&m| Column::Solver(m)).collect()
}

fn c6_noise_and_outliers() -> Outcome {
    let start = Instant::now();
    let grid = SweepGrid { cells: vec![(0.3, 0.2)], sigmas: vec![10.0], n: 50, trials: 20, ..Default::default() };
    let cols = solvers(&[Method::Bata, Method::Lud, Method::RevisedLud]);
    let rows = match run_sweep(&grid, &cols, &SolverOptions::default()) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let med = |m: &str| median_row(&rows, m, |_| true).and_then(|r| r.nrmse);
    let (b, l, r) = (med("bata"), med("lud"), med("revisedlud"));
    let took = start.elapsed();
    let pass = match (b, l, r) {
        (Some(b), Some(l), Some(r)) => b < l && b < r && took < Duration::from_secs(300),
        _ => false,
    };
    outcome(pass, format!("median nrmse bata {b:?} lud {l:?} revisedlud {r:?}, {took:.2?}"))
}

fn c7_shrinking_ratios() -> Outcome {
    let grid = SweepGrid { cells: vec![(0.3, 0.0)], sigmas: vec![0.0, 5.0, 10.0, 15.0], n: 50, trials: 20, ..Default::default() };
    let mut cols = solvers(&[Method::Lud, Method::RevisedLud]);
    cols.push(Column::Truth);
    let rows = match run_sweep(&grid, &cols, &SolverOptions::default()) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let mut detail = Vec::new();
    let ratios = |m: &str, sigma: f64| {
        median_row(&rows, m, |r| r.cell.sigma_deg == sigma)
            .map_or((f64::NAN, f64::NAN), |r| (r.r1.unwrap_or(f64::NAN), r.r2.unwrap_or(f64::NAN)))
    };
    for &sigma in &grid.sigmas {
        let (l, r, t) = (ratios("lud", sigma), ratios("revisedlud", sigma), ratios("truth", sigma));
        detail.push(format!("s{sigma}: lud {:.3}/{:.3} rlud {:.3}/{:.3} gt {:.3}/{:.3}", l.0, l.1, r.0, r.1, t.0, t.1));
    }
    let (l, r, t) = (ratios("lud", 15.0), ratios("revisedlud", 15.0), ratios("truth", 15.0));
    let pass = l.0 < r.0 && l.1 < r.1 && l.0 < t.0 && l.1 < t.1;
    outcome(pass, detail.join("; "))
}

fn c8_two_clusters() -> Outcome {
    let grid = SweepGrid {
        cells: vec![(0.3, 0.2)],
        sigmas: vec![10.0],
        separations: Some(vec![0.0, 10.0]),
        n: 50,
        trials: 20,
        ..Default::default()
    };
    let mut cols = solvers(&[Method::Bata, Method::Lud]);
    cols.push(Column::Truth);
    let rows = match run_sweep(&grid, &cols, &SolverOptions::default()) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let at = |m: &str, l: f64| median_row(&rows, m, |r| r.cell.separation == Some(l));
    let r3 = |m: &str| at(m, 10.0).and_then(|r| r.r3).unwrap_or(f64::NAN);
    let e = |m: &str, l: f64| at(m, l).and_then(|r| r.nrmse).unwrap_or(f64::NAN);
    let (r3_lud, r3_gt) = (r3("lud"), r3("truth"));
    let lud_deg = e("lud", 10.0) - e("lud", 0.0);
    let bata_deg = e("bata", 10.0) - e("bata", 0.0);
    outcome(
        r3_lud < r3_gt && lud_deg > bata_deg,
        format!(
            "L=10 r3 lud {r3_lud:.3} gt {r3_gt:.3}; nrmse change lud {:.3}->{:.3}, bata {:.3}->{:.3}",
            e("lud", 0.0),
            e("lud", 10.0),
            e("bata", 0.0),
            e("bata", 10.0)
        ),
    )
}

fn c9_toy_grid() -> Outcome {
    let run = || -> bata_core::Result<(bool, String)> {
        let clean = toy::toy_grid(0.01, 0.0)?;
        let noisy = toy::toy_grid(0.01, 3.0)?;
        let fine = toy::toy_grid(0.005, 3.0)?;
        let tol = clean.resolution;
        let pass = clean.magnitude.distance_to_origin() <= tol
            && clean.angular.distance_to_origin() <= tol
            && noisy.angular.distance_to_origin() < noisy.magnitude.distance_to_origin();
        let moved = |a: toy::GridMinimum, b: toy::GridMinimum| (a.x - b.x).abs().max((a.y - b.y).abs());
        let stable = moved(noisy.magnitude, fine.magnitude) < tol && moved(noisy.angular, fine.angular) < tol;
        Ok((
            pass && stable,
            format!(
                "3 deg: magnitude {:.3} from origin, angular {:.3}; refinement shift < cell: {stable}",
                noisy.magnitude.distance_to_origin(),
                noisy.angular.distance_to_origin()
            ),
        ))
    };
    match run() {
        Ok((pass, detail)) => outcome(pass, detail),
        Err(e) => outcome(false, e.to_string()),
    }
}

fn c10_toy_squash() -> Outcome {
    match toy::toy_squash(3.0, 1.0, 0) {
        Ok(r) => outcome(
            r.regime2_objective <= r.regime1_objective && r.cam4_lud < r.cam4_revisedlud,
            format!(
                "regime-2 {:.4} vs regime-1 {:.4}; camera 4 ratio lud {:.3} revisedlud {:.3} truth {:.3}",
                r.regime2_objective, r.regime1_objective, r.cam4_lud, r.cam4_revisedlud, r.cam4_truth
            ),
        ),
        Err(e) => outcome(false, e.to_string()),
    }
}

fn c11_onedsfm_gradient() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for k in 0..100u64 {
        let n = rng.random_range(5..=20);
        let cfg = SynthConfig { n, p: 0.5, q: 0.2, sigma_deg: 10.0, seed: k };
        let Ok(inst) = gen_instance(&cfg) else { continue };
        let g = &inst.graph;
        let t = Locations::new(inst.truth.iter().map(|x| x + random_vec(&mut rng, 0.2)).collect()).expect("locations");
        let loss = match k % 3 {
            0 => LossKind::Huber { delta: 0.1 },
            1 => LossKind::Cauchy { alpha: 0.5 },
            _ => LossKind::SquaredL2,
        };
        let ocfg = OnedsfmConfig { loss, ..Default::default() };
        let Ok((_, grad)) = onedsfm_objective_grad(g, &t, &ocfg) else {
            return outcome(false, format!("instance {k}: gradient failed"));
        };
        let x = t.to_flat();
        let h = 1e-6;
        let f = |x: &[f64]| onedsfm_objective_grad(g, &Locations::from_flat(x).expect("flat"), &ocfg).expect("value").0;
        let mut diff = 0.0;
        let mut scale = 0.0;
        for j in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[j] += h;
            xm[j] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            diff += (grad[j] - fd).powi(2);
            scale += fd * fd;
        }
        worst = worst.max(diff.sqrt() / scale.sqrt().max(1e-12));
    }
    outcome(worst < 1e-5, format!("max relative error {worst:.2e}"))
}

fn bata_bin(args: &[&str], dir: &Path) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_bata"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("bata {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn c12_determinism() -> Outcome {
    let run = || -> Result<Vec<(String, Vec<u8>)>, String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let d = dir.path();
        let read = |name: &str| std::fs::read(d.join(name)).map_err(|e| e.to_string());
        let mut out = Vec::new();
        bata_bin(&["gen", "--output", "g.txt", "--n", "30", "--p", "0.4", "--q", "0.1", "--sigma-deg", "5", "--seed", "9"], d)?;
        for f in ["g.txt", "g.txt.truth", "g.txt.sidecar"] {
            out.push((f.to_string(), read(f)?));
        }
        for m in ["bata", "revisedlud", "lud", "onedsfm"] {
            let loc = format!("{m}.txt");
            bata_bin(&["solve", "--input", "g.txt", "--output", &loc, "--method", m, "--seed", "3"], d)?;
            out.push((loc.clone(), read(&loc)?));
            out.push((format!("{loc}.diag"), read(&format!("{loc}.diag"))?));
            let eval = bata_bin(&["eval", "--input", &loc, "--truth", "g.txt.truth", "--graph", "g.txt"], d)?;
            out.push((format!("eval {m}"), eval));
        }
        let sweep = bata_bin(
            &["sweep", "--n", "20", "--trials", "3", "--p", "0.4", "--q", "0,0.2", "--sigma-deg", "5", "--seed", "4"],
            d,
        )?;
        out.push(("sweep".into(), sweep));
        out.push(("toy-grid".into(), bata_bin(&["toy-grid", "--resolution", "0.02"], d)?));
        out.push(("toy-squash".into(), bata_bin(&["toy-squash"], d)?));
        Ok(out)
    };
    match (run(), run()) {
        (Ok(a), Ok(b)) => {
            let differing: Vec<&str> =
                a.iter().zip(&b).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0.as_str()).collect();
            outcome(differing.is_empty(), format!("{} outputs compared, differing: {differing:?}", a.len()))
        }
        (Err(e), _) | (_, Err(e)) => outcome(false, e),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("1 penalty equivalence", c1_penalty_equivalence),
        ("2 projected residual equivalence", c2_shapefit_equivalence),
        ("3 BCD monotonicity", c3_bcd_monotonicity),
        ("4 constrained LLS oracle", c4_lls_oracle),
        ("5 exact recovery", c5_exact_recovery),
        ("6 noise and outliers", c6_noise_and_outliers),
        ("7 shrinking ratios", c7_shrinking_ratios),
        ("8 two clusters", c8_two_clusters),
        ("9 grid toy", c9_toy_grid),
        ("10 squash toy", c10_toy_squash),
        ("11 1DSfM gradient", c11_onedsfm_gradient),
        ("12 CLI determinism", c12_determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let r = f();
        let status = if r.pass { "PASS" } else { "FAIL" };
        println!("{status} criterion {name}: {} [{:.1?}]", r.detail, start.elapsed());
        if !r.pass {
            failed += 1;
        }
    }
    println!("acceptance: {} of 12 passed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
