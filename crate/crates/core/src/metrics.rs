//! Evaluation metrics: NRMSE, squash ratios and robust similarity registration.

use crate::error::{Error, Result};
use crate::graph::{centralize_normalize, Locations, Mat3, Vec3, ViewGraph};

/// Consistency constant turning a median absolute residual into a Gaussian sigma.
pub const MAD_SCALE: f64 = 1.4826;

fn check_pair(est: &Locations, gt: &Locations) -> Result<()> {
    if est.len() != gt.len() {
        return Err(Error::Config(format!(
            "location sets differ in size: {} vs {}",
            est.len(),
            gt.len()
        )));
    }
    if est.len() < 2 {
        return Err(Error::Degenerate("need at least 2 cameras".into()));
    }
    Ok(())
}

/// Root-sum-square distance after centering and unit-scaling both sets.
pub fn nrmse(est: &Locations, gt: &Locations) -> Result<f64> {
    check_pair(est, gt)?;
    let a = centralize_normalize(est)?;
    let b = centralize_normalize(gt)?;
    Ok(a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm_squared()).sum::<f64>().sqrt())
}

/// NRMSE with each labelled cluster normalized on its own; the per-cluster values
/// are combined as a root mean square.
pub fn nrmse_per_cluster(est: &Locations, gt: &Locations, labels: &[usize]) -> Result<f64> {
    check_pair(est, gt)?;
    if labels.len() != est.len() {
        return Err(Error::Config("label count does not match camera count".into()));
    }
    let mut ids: Vec<usize> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let mut acc = 0.0;
    for &c in &ids {
        let idx: Vec<usize> = (0..labels.len()).filter(|&k| labels[k] == c).collect();
        let e = nrmse(&est.select(&idx), &gt.select(&idx))?;
        acc += e * e;
    }
    Ok((acc / ids.len() as f64).sqrt())
}

/// Linear-interpolation percentile, `b` in `[0, 100]`.
pub fn percentile(values: &[f64], b: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Degenerate("percentile of an empty list".into()));
    }
    if !(0.0..=100.0).contains(&b) {
        return Err(Error::Config(format!("percentile rank must lie in [0, 100], got {b}")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let r = b / 100.0 * (v.len() - 1) as f64;
    let lo = r.floor() as usize;
    let hi = r.ceil() as usize;
    Ok(v[lo] + (r - lo as f64) * (v[hi] - v[lo]))
}

pub fn median(values: &[f64]) -> Result<f64> {
    percentile(values, 50.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquashRatios {
    pub r1: f64,
    pub r2: f64,
    pub r3: Option<f64>,
}

fn quartile_ratio(v: &[f64]) -> Result<f64> {
    let lo = percentile(v, 25.0)?;
    let hi = percentile(v, 75.0)?;
    if lo <= 0.0 {
        return Err(Error::Degenerate("lower quartile is zero".into()));
    }
    Ok(hi / lo)
}

/// `r1`: interquartile ratio of baseline lengths; `r2`: of distances to the centroid.
pub fn squash_r1_r2(g: &ViewGraph, t: &Locations) -> Result<SquashRatios> {
    if t.len() != g.n() {
        return Err(Error::Config("location count does not match graph".into()));
    }
    if g.num_edges() < 4 {
        return Err(Error::Degenerate(format!("r1 needs at least 4 edges, got {}", g.num_edges())));
    }
    if g.n() < 4 {
        return Err(Error::Degenerate(format!("r2 needs at least 4 cameras, got {}", g.n())));
    }
    let baselines: Vec<f64> = g.edges().iter().map(|e| e.baseline(t).norm()).collect();
    let c = t.centroid();
    let radii: Vec<f64> = t.iter().map(|p| (p - c).norm()).collect();
    Ok(SquashRatios { r1: quartile_ratio(&baselines)?, r2: quartile_ratio(&radii)?, r3: None })
}

/// `l12 / (l1 + l2)` for clusters labelled 0 and 1; `+inf` when both clusters
/// have zero median spread.
pub fn squash_r3(t: &Locations, labels: &[usize]) -> Result<f64> {
    if labels.len() != t.len() {
        return Err(Error::Config("label count does not match camera count".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Config(format!("cluster labels must be 0 or 1, got {bad}")));
    }
    let mut spread = [0.0; 2];
    let mut centers = [Vec3::zeros(); 2];
    for c in 0..2 {
        let idx: Vec<usize> = (0..t.len()).filter(|&k| labels[k] == c).collect();
        if idx.is_empty() {
            return Err(Error::Degenerate(format!("cluster {c} is empty")));
        }
        let pts = t.select(&idx);
        centers[c] = pts.centroid();
        let d: Vec<f64> = pts.iter().map(|p| (p - centers[c]).norm()).collect();
        spread[c] = median(&d)?;
    }
    let denom = spread[0] + spread[1];
    if denom == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((centers[0] - centers[1]).norm() / denom)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Similarity {
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p * self.scale + self.translation
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedErrorReport {
    pub median_error: f64,
    pub mean_error: f64,
    pub errors: Vec<f64>,
    pub similarity: Similarity,
    pub inliers: Vec<bool>,
    /// The best orthogonal fit was a reflection and was forced to a proper rotation.
    pub reflection_corrected: bool,
}

fn weighted_umeyama(src: &[Vec3], dst: &[Vec3], w: &[f64]) -> Result<(Similarity, bool)> {
    let wsum: f64 = w.iter().sum();
    let mu_s = src.iter().zip(w).map(|(p, &wk)| p * wk).sum::<Vec3>() / wsum;
    let mu_d = dst.iter().zip(w).map(|(p, &wk)| p * wk).sum::<Vec3>() / wsum;
    let mut cov = Mat3::zeros();
    let mut var_s = 0.0;
    for ((s, d), &wk) in src.iter().zip(dst).zip(w) {
        let ds = s - mu_s;
        cov += (d - mu_d) * ds.transpose() * wk;
        var_s += wk * ds.norm_squared();
    }
    cov /= wsum;
    var_s /= wsum;
    if var_s <= f64::MIN_POSITIVE {
        return Err(Error::Degenerate("estimated locations coincide".into()));
    }
    let svd = cov.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let flip = u.determinant() * v_t.determinant() < 0.0;
    let mut sign = Vec3::new(1.0, 1.0, 1.0);
    // Singular values come out sorted in descending order; flip the smallest.
    if flip {
        sign[2] = -1.0;
    }
    let rotation = u * Mat3::from_diagonal(&sign) * v_t;
    let scale = svd.singular_values.component_mul(&sign).sum() / var_s;
    if scale <= 0.0 {
        return Err(Error::Degenerate("non-positive similarity scale".into()));
    }
    let translation = mu_d - rotation * mu_s * scale;
    Ok((Similarity { scale, rotation, translation }, flip))
}

fn check_not_collinear(gt: &Locations) -> Result<()> {
    let c = gt.centroid();
    let mut cov = Mat3::zeros();
    for p in gt.iter() {
        let d = p - c;
        cov += d * d.transpose();
    }
    let sv = cov.singular_values();
    let max = sv.max();
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(f64::total_cmp);
    if max <= 0.0 || sorted[1] <= 1e-12 * max {
        return Err(Error::Degenerate("ground truth is collinear or coincident".into()));
    }
    Ok(())
}

/// Starting weights from each point's median distance to the others, relative to
/// the typical such distance; invariant to similarities of the input.
fn outlyingness_weights(src: &[Vec3]) -> Result<Vec<f64>> {
    let mut spread = Vec::with_capacity(src.len());
    let mut dist = Vec::with_capacity(src.len());
    for p in src {
        dist.clear();
        dist.extend(src.iter().map(|q| (p - q).norm()));
        spread.push(median(&dist)?);
    }
    let typical = median(&spread)?;
    if typical <= 0.0 {
        return Ok(vec![1.0; src.len()]);
    }
    Ok(spread.iter().map(|&m| 1.0 / (1.0 + (m / typical).powi(2))).collect())
}

/// Robust similarity registration of `est` onto `gt` by alternating weighted
/// closed-form fits and Cauchy reweighting with a median-based width.
pub fn robust_align(est: &Locations, gt: &Locations, irls_rounds: usize) -> Result<AlignedErrorReport> {
    check_pair(est, gt)?;
    if est.len() < 3 {
        return Err(Error::Degenerate("registration needs at least 3 cameras".into()));
    }
    check_not_collinear(gt)?;
    let src = est.points();
    let dst = gt.points();
    let gt_rms = (gt.centered().sum_sq_norm() / gt.len() as f64).sqrt();
    let mut w = outlyingness_weights(src)?;
    let mut alpha = f64::INFINITY;
    let residuals = |s: &Similarity| -> Vec<f64> {
        src.iter().zip(dst).map(|(p, q)| (s.apply(p) - q).norm()).collect()
    };
    let (mut sim, mut flip) = weighted_umeyama(src, dst, &w)?;
    let mut r = residuals(&sim);
    for _ in 0..irls_rounds {
        alpha = MAD_SCALE * median(&r)?;
        if alpha <= 1e-15 * gt_rms {
            break;
        }
        let a2 = alpha * alpha;
        for (wk, rk) in w.iter_mut().zip(&r) {
            *wk = a2 / (a2 + rk * rk);
        }
        (sim, flip) = weighted_umeyama(src, dst, &w)?;
        r = residuals(&sim);
    }
    let cut = (3.0 * alpha).max(1e-9 * gt_rms);
    let inliers = r.iter().map(|&x| x <= cut).collect();
    Ok(AlignedErrorReport {
        median_error: median(&r)?,
        mean_error: r.iter().sum::<f64>() / r.len() as f64,
        errors: r,
        similarity: sim,
        inliers,
        reflection_corrected: flip,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Edge, Rotation, UnitDirection};
    use crate::synthetic::gen_locations;

    fn pts(v: &[[f64; 3]]) -> Locations {
        Locations::new(v.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect()).unwrap()
    }

    #[test]
    fn nrmse_examples() {
        let gt = gen_locations(20, 1);
        assert!(nrmse(&gt, &gt).unwrap() < 1e-15);
        let moved = Locations::new(gt.iter().map(|p| p * 3.0 + Vec3::new(1.0, -2.0, 5.0)).collect()).unwrap();
        assert!(nrmse(&moved, &gt).unwrap() < 1e-12);
        assert!((nrmse(&gt.scaled(-1.0), &gt).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn nrmse_rejects_degenerate() {
        let gt = gen_locations(5, 1);
        let flat = Locations::new(vec![Vec3::new(1.0, 1.0, 1.0); 5]).unwrap();
        assert!(matches!(nrmse(&flat, &gt), Err(Error::Degenerate(_))));
    }

    #[test]
    fn percentile_examples() {
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0], 50.0).unwrap(), 2.5);
        assert_eq!(percentile(&[3.0, -1.0, 7.0], 0.0).unwrap(), -1.0);
        assert_eq!(percentile(&[3.0, -1.0, 7.0], 100.0).unwrap(), 7.0);
        assert!(percentile(&[], 50.0).is_err());
    }

    #[test]
    fn equal_baselines_give_unit_r1() {
        // Regular tetrahedron: every baseline and every radius is identical.
        let t = pts(&[[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]]);
        let mut edges = Vec::new();
        for i in 0..4 {
            for j in i + 1..4 {
                edges.push(Edge::new(i, j, UnitDirection::normalize(t[j] - t[i]).unwrap()));
            }
        }
        let g = ViewGraph::new(4, edges).unwrap();
        let s = squash_r1_r2(&g, &t).unwrap();
        assert!((s.r1 - 1.0).abs() < 1e-12);
        assert!((s.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn r3_examples() {
        let t = pts(&[[0.0; 3], [0.0; 3], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        assert_eq!(squash_r3(&t, &[0, 0, 1, 1]).unwrap(), f64::INFINITY);
        let t = pts(&[
            [-2.0, 1.0, 0.0],
            [-2.0, -1.0, 0.0],
            [2.0, 1.0, 0.0],
            [2.0, -1.0, 0.0],
        ]);
        assert!((squash_r3(&t, &[0, 0, 1, 1]).unwrap() - 2.0).abs() < 1e-15);
        assert!(matches!(squash_r3(&t, &[0, 0, 0, 0]), Err(Error::Degenerate(_))));
    }

    fn transform(t: &Locations, s: f64, r: &Rotation, c: Vec3) -> Locations {
        Locations::new(t.iter().map(|p| r.matrix() * p * s + c).collect()).unwrap()
    }

    #[test]
    fn align_exact_similarity() {
        let gt = gen_locations(15, 3);
        let r = Rotation::from_axis_angle(&UnitDirection::from_xyz(1.0, 2.0, -0.5).unwrap(), 0.7);
        let est = transform(&gt, 0.25, &r, Vec3::new(3.0, -1.0, 2.0));
        let rep = robust_align(&est, &gt, 20).unwrap();
        assert!(rep.errors.iter().all(|&e| e < 1e-9));
        assert!((rep.similarity.scale - 4.0).abs() < 1e-9);
        assert!(!rep.reflection_corrected);
    }

    #[test]
    fn align_ignores_one_displaced_camera() {
        let gt = gen_locations(30, 4);
        let mut pts = gt.clone().into_points();
        pts[7] += Vec3::new(100.0, 0.0, 0.0);
        let est = Locations::new(pts).unwrap();
        let rep = robust_align(&est, &gt, 50).unwrap();
        assert!(rep.median_error < 1e-6, "{}", rep.median_error);
        assert!((rep.mean_error - 100.0 / 30.0).abs() < 1e-3);
        assert!(!rep.inliers[7]);
    }

    #[test]
    fn align_mirror_is_flagged() {
        let gt = gen_locations(15, 5);
        let est = Locations::new(gt.iter().map(|p| Vec3::new(-p.x, p.y, p.z)).collect()).unwrap();
        let rep = robust_align(&est, &gt, 10).unwrap();
        assert!(rep.reflection_corrected);
        assert!((rep.similarity.rotation.determinant() - 1.0).abs() < 1e-12);
        assert!(rep.mean_error > 0.1);
    }

    #[test]
    fn align_rejects_collinear_truth() {
        let gt = pts(&[[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        let est = gen_locations(4, 1);
        assert!(matches!(robust_align(&est, &gt, 5), Err(Error::Degenerate(_))));
    }
}
