use bata_core::baselines::{
    lud_objective, lud_solve, onedsfm_objective_grad, onedsfm_solve, revised_lud_solve, shapefit_residual, LudConfig,
    OnedsfmConfig,
};
use bata_core::bata::{self, angle_between, h_theta, optimal_penalty_equivalence, BataConfig, Init};
use bata_core::lls::build_bata_constraints;
use bata_core::metrics::nrmse;
use bata_core::synthetic::{gen_instance, SynthConfig};
use bata_core::{Locations, LossKind, UnitDirection, Vec3};
use proptest::prelude::*;

fn vec3() -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-10.0..10.0f64).prop_map(Vec3::from)
}

fn direction() -> impl Strategy<Value = UnitDirection> {
    vec3().prop_filter_map("near zero", |v| UnitDirection::normalize(v).ok())
}

fn small_instance() -> impl Strategy<Value = (usize, f64, f64, f64, u64)> {
    (8usize..=30, 0.3..0.7f64, prop_oneof![Just(0.0), Just(0.2)], 0.0..10.0f64, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn optimal_scale_residual_is_angular_penalty(dt in vec3(), v in direction()) {
        prop_assume!(dt.norm() > 1e-6);
        let (d, residual, theta) = optimal_penalty_equivalence(&dt, &v).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert!((residual - h_theta(theta).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn optimal_scale_is_minimal(dt in vec3(), v in direction(), d in 0.0..5.0f64) {
        prop_assume!(dt.norm() > 1e-6);
        let (_, best, _) = optimal_penalty_equivalence(&dt, &v).unwrap();
        prop_assert!(best <= (dt * d - v.as_vec()).norm() + 1e-12);
    }

    #[test]
    fn shapefit_residual_is_sine_scaled(dt in vec3(), v in direction()) {
        let theta = angle_between(&dt, v.as_vec());
        prop_assert!((shapefit_residual(&dt, &v) - dt.norm() * theta.sin()).abs() < 1e-12 * (1.0 + dt.norm()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn bata_bcd_passes_never_increase((n, p, q, sigma, seed) in small_instance()) {
        let inst = gen_instance(&SynthConfig { n, p, q, sigma_deg: sigma, seed }).unwrap();
        prop_assume!(inst.graph.n() >= 4);
        let cfg = BataConfig { irls_iter: 10, seed, init: Init::Random, ..Default::default() };
        let (_, diag) = bata::solve(&inst.graph, &cfg).unwrap();
        let floor = inst.graph.num_edges() as f64 * (64.0 * f64::EPSILON).powi(2);
        for pass in &diag.bcd_trace {
            for w in pass.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-10) + floor, "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn bata_solution_satisfies_gauge((n, p, q, sigma, seed) in small_instance()) {
        let inst = gen_instance(&SynthConfig { n, p, q, sigma_deg: sigma, seed }).unwrap();
        prop_assume!(inst.graph.n() >= 4);
        let cfg = BataConfig { irls_iter: 10, seed, ..Default::default() };
        let (t, _) = bata::solve(&inst.graph, &cfg).unwrap();
        prop_assert!(t.centroid().norm() < 1e-9);
        prop_assert!((inst.graph.scale_functional(&t) - 1.0).abs() < 1e-9);
        prop_assert!(build_bata_constraints(&inst.graph).violation(&t) < 1e-9);
    }

    #[test]
    fn solvers_are_deterministic((n, p, q, sigma, seed) in small_instance()) {
        let inst = gen_instance(&SynthConfig { n, p, q, sigma_deg: sigma, seed }).unwrap();
        let cfg = BataConfig { irls_iter: 5, seed, init: Init::Random, ..Default::default() };
        let a = bata::solve(&inst.graph, &cfg).unwrap().0;
        let b = bata::solve(&inst.graph, &cfg).unwrap().0;
        prop_assert_eq!(a.to_flat(), b.to_flat());
        let lcfg = LudConfig { irls_iter: 5, seed, ..Default::default() };
        prop_assert_eq!(lud_solve(&inst.graph, &lcfg).unwrap().0.to_flat(), lud_solve(&inst.graph, &lcfg).unwrap().0.to_flat());
    }

    #[test]
    fn onedsfm_gradient_matches_central_differences((n, p, _q, sigma, seed) in small_instance()) {
        let inst = gen_instance(&SynthConfig { n: n.min(15), p, q: 0.0, sigma_deg: sigma + 5.0, seed }).unwrap();
        let g = &inst.graph;
        // perturbed truth keeps every baseline well away from zero
        let t = Locations::new(
            inst.truth.iter().enumerate().map(|(k, x)| x + Vec3::new(0.1, -0.05, 0.07) * ((k % 5) as f64 - 2.0)).collect(),
        ).unwrap();
        for loss in [LossKind::SquaredL2, LossKind::Huber { delta: 0.1 }, LossKind::Cauchy { alpha: 0.3 }] {
            let cfg = OnedsfmConfig { loss, ..Default::default() };
            let (_, grad) = onedsfm_objective_grad(g, &t, &cfg).unwrap();
            let x = t.to_flat();
            let h = 1e-6;
            let mut fd = vec![0.0; x.len()];
            for k in 0..x.len() {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[k] += h;
                xm[k] -= h;
                let fp = onedsfm_objective_grad(g, &Locations::from_flat(&xp).unwrap(), &cfg).unwrap().0;
                let fm = onedsfm_objective_grad(g, &Locations::from_flat(&xm).unwrap(), &cfg).unwrap().0;
                fd[k] = (fp - fm) / (2.0 * h);
            }
            let diff: f64 = grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale: f64 = fd.iter().map(|a| a * a).sum::<f64>().sqrt();
            prop_assert!(diff <= 1e-5 * scale.max(1e-8), "{loss:?}: {diff:e} vs {scale:e}");
        }
    }
}

#[test]
fn noiseless_recovery_all_methods() {
    for seed in 0..3 {
        let inst = gen_instance(&SynthConfig { n: 40, p: 0.3, q: 0.0, sigma_deg: 0.0, seed }).unwrap();
        let g = &inst.graph;
        let cases = [
            ("bata", bata::solve(g, &BataConfig { seed, ..Default::default() }).unwrap().0, 1e-6),
            ("revisedlud", revised_lud_solve(g, &LudConfig { seed, ..Default::default() }).unwrap().0, 1e-6),
            ("lud", lud_solve(g, &LudConfig { seed, ..Default::default() }).unwrap().0, 1e-6),
            ("onedsfm", onedsfm_solve(g, &OnedsfmConfig { seed, ..Default::default() }).unwrap().0, 1e-5),
        ];
        for (name, t, tol) in cases {
            let e = nrmse(&t, &inst.truth).unwrap();
            assert!(e < tol, "{name} seed {seed}: nrmse {e:e}");
        }
    }
}

#[test]
fn lud_solution_has_no_better_uniform_rescaling() {
    let inst = gen_instance(&SynthConfig { n: 30, p: 0.4, q: 0.1, sigma_deg: 5.0, seed: 11 }).unwrap();
    let cfg = LudConfig::default();
    let (t, _) = lud_solve(&inst.graph, &cfg).unwrap();
    let f = lud_objective(&inst.graph, &t, cfg.c);
    for s in [0.9, 0.99, 1.01, 1.1] {
        assert!(f <= lud_objective(&inst.graph, &t.scaled(s), cfg.c) + 1e-6 * f);
    }
}
