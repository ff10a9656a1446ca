//! Synthetic view graphs: Gaussian camera layouts, Erdos-Renyi edges and
//! direction corruption by rotation about a random orthogonal axis, with a
//! fraction of edges replaced by uniform outliers.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};

use crate::error::{Error, Result};
use crate::graph::{Edge, Locations, UnitDirection, Vec3, ViewGraph};

const LOCATION_STREAM: u64 = 0;
const EDGE_STREAM: u64 = 1;
const CORRUPTION_STREAM_BASE: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub p: f64,
    pub q: f64,
    pub sigma_deg: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { n: 200, p: 0.3, q: 0.0, sigma_deg: 0.0, seed: 0 }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!("need at least 2 cameras, got {}", self.n)));
        }
        check_protocol(self.p, self.q, self.sigma_deg)
    }
}

fn check_protocol(p: f64, q: f64, sigma_deg: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Config(format!("edge probability p must lie in (0, 1], got {p}")));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Config(format!("outlier ratio q must lie in [0, 1], got {q}")));
    }
    if !(sigma_deg.is_finite() && sigma_deg >= 0.0) {
        return Err(Error::Config(format!("sigma must be non-negative, got {sigma_deg}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoClusterConfig {
    pub n_per_cluster: usize,
    /// Distance between the two cluster means along x.
    pub separation: f64,
    pub p: f64,
    pub q: f64,
    pub sigma_deg: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthInstance {
    pub graph: ViewGraph,
    pub truth: Locations,
    pub cluster_labels: Option<Vec<usize>>,
    pub outlier: Vec<bool>,
    /// Realized angle between each observation and the true direction (radians).
    pub angular_error: Vec<f64>,
    /// Cameras removed because they fell outside the largest connected component.
    pub dropped_cameras: usize,
}

impl SynthInstance {
    /// Graph with rotation residuals standing in for rotation-averaging quality:
    /// `inlier` on clean edges, `outlier` on corrupted ones.
    pub fn with_rotation_proxy(&self, inlier: f64, outlier: f64) -> Result<ViewGraph> {
        let rr: Vec<f64> = self.outlier.iter().map(|&o| if o { outlier } else { inlier }).collect();
        self.graph.with_rot_residuals(&rr)
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Independent child seed for item `index` under `base` (e.g. one per sweep trial).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    use rand::RngCore;
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(index);
    rng.next_u64()
}

fn normal_vec<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    Vec3::new(
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    )
}

/// `n` i.i.d. standard normal 3-vectors.
pub fn gen_locations(n: usize, seed: u64) -> Locations {
    let mut rng = stream(seed, LOCATION_STREAM);
    Locations::new((0..n).map(|_| normal_vec(&mut rng)).collect())
        .expect("normal samples are finite")
}

/// Erdos-Renyi `G(n, p)` pairs `(i, j)` with `i < j`, in lexicographic order.
pub fn gen_er_edges(n: usize, p: f64, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = stream(seed, EDGE_STREAM);
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                out.push((i, j));
            }
        }
    }
    out
}

/// Rodrigues rotation of `v` about `axis` by `angle` radians (counter-clockwise).
pub fn axis_angle_rotate(v: &Vec3, axis: &UnitDirection, angle: f64) -> Vec3 {
    let k = axis.as_vec();
    let (s, c) = angle.sin_cos();
    v * c + k.cross(v) * s + k * (k.dot(v) * (1.0 - c))
}

/// Two unit vectors completing `dir` to a right-handed orthonormal frame.
fn orthonormal_complement(dir: &UnitDirection) -> (Vec3, Vec3) {
    let d = dir.as_vec();
    let pick = if d.x.abs() <= d.y.abs() && d.x.abs() <= d.z.abs() {
        Vec3::x()
    } else if d.y.abs() <= d.z.abs() {
        Vec3::y()
    } else {
        Vec3::z()
    };
    let e1 = d.cross(&pick).normalize();
    let e2 = d.cross(&e1);
    (e1, e2)
}

/// Uniform unit vector on the circle orthogonal to `dir`.
pub fn sample_orthogonal_unit<R: Rng + ?Sized>(dir: &UnitDirection, rng: &mut R) -> UnitDirection {
    let (e1, e2) = orthonormal_complement(dir);
    let phi = rng.random::<f64>() * TAU;
    let (s, c) = phi.sin_cos();
    UnitDirection::normalize(e1 * c + e2 * s).expect("orthonormal combination is unit")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corruption {
    pub direction: UnitDirection,
    pub outlier: bool,
    /// Realized angle to the true direction, radians.
    pub angular_error: f64,
    /// Signed rotation angle applied to an inlier (radians; 0 for outliers).
    pub rotation_angle: f64,
}

/// With probability `q` a uniform direction, otherwise `true_dir` rotated by
/// `sigma_deg * N(0, 1)` degrees about a random orthogonal axis.
pub fn corrupt_direction<R: Rng + ?Sized>(
    true_dir: &UnitDirection,
    q: f64,
    sigma_deg: f64,
    rng: &mut R,
) -> Corruption {
    let draw: f64 = rng.random();
    if draw < q {
        let s: [f64; 3] = UnitSphere.sample(rng);
        let direction = UnitDirection::normalize(Vec3::new(s[0], s[1], s[2]))
            .expect("unit sphere sample is non-zero");
        let angular_error = crate::bata::angle_between(direction.as_vec(), true_dir.as_vec());
        return Corruption { direction, outlier: true, angular_error, rotation_angle: 0.0 };
    }
    let g: f64 = StandardNormal.sample(rng);
    let axis = sample_orthogonal_unit(true_dir, rng);
    let angle = (sigma_deg * g).to_radians();
    if angle == 0.0 {
        return Corruption { direction: *true_dir, outlier: false, angular_error: 0.0, rotation_angle: 0.0 };
    }
    let v = axis_angle_rotate(true_dir.as_vec(), &axis, angle);
    let direction = UnitDirection::normalize(v).expect("rotation preserves norm");
    let angular_error = crate::bata::angle_between(direction.as_vec(), true_dir.as_vec());
    Corruption { direction, outlier: false, angular_error, rotation_angle: angle }
}

fn assemble(
    truth: Locations,
    labels: Option<Vec<usize>>,
    p: f64,
    q: f64,
    sigma_deg: f64,
    seed: u64,
) -> Result<SynthInstance> {
    let n = truth.len();
    let pairs = gen_er_edges(n, p, seed);
    let mut edges = Vec::with_capacity(pairs.len());
    let mut outlier = Vec::with_capacity(pairs.len());
    let mut angular_error = Vec::with_capacity(pairs.len());
    for &(i, j) in &pairs {
        let true_dir = UnitDirection::normalize(truth[j] - truth[i])?;
        let mut rng = stream(seed, CORRUPTION_STREAM_BASE + (i * n + j) as u64);
        let c = corrupt_direction(&true_dir, q, sigma_deg, &mut rng);
        edges.push(Edge::new(i, j, c.direction));
        outlier.push(c.outlier);
        angular_error.push(c.angular_error);
    }
    let full = ViewGraph::new(n, edges)?;
    let comps = full.components();
    let largest = comps
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.0.cmp(&a.0)))
        .map(|(_, c)| c.clone())
        .expect("at least one component");
    if largest.len() < 2 {
        return Err(Error::Degenerate("largest connected component has fewer than 2 cameras".into()));
    }
    if largest.len() == n {
        return Ok(SynthInstance {
            graph: full,
            truth,
            cluster_labels: labels,
            outlier,
            angular_error,
            dropped_cameras: 0,
        });
    }
    let (graph, kept) = full.subgraph(&largest)?;
    Ok(SynthInstance {
        graph,
        truth: truth.select(&largest),
        cluster_labels: labels.map(|l| largest.iter().map(|&k| l[k]).collect()),
        outlier: kept.iter().map(|&k| outlier[k]).collect(),
        angular_error: kept.iter().map(|&k| angular_error[k]).collect(),
        dropped_cameras: n - largest.len(),
    })
}

pub fn gen_instance(cfg: &SynthConfig) -> Result<SynthInstance> {
    cfg.validate()?;
    let truth = gen_locations(cfg.n, cfg.seed);
    assemble(truth, None, cfg.p, cfg.q, cfg.sigma_deg, cfg.seed)
}

/// Two Gaussian clusters centred at `(-L/2, 0, 0)` and `(L/2, 0, 0)`; labels 0 and 1.
pub fn gen_two_cluster(cfg: &TwoClusterConfig) -> Result<SynthInstance> {
    if cfg.n_per_cluster < 1 {
        return Err(Error::Config("each cluster needs at least one camera".into()));
    }
    if !(cfg.separation.is_finite() && cfg.separation >= 0.0) {
        return Err(Error::Config(format!("separation must be non-negative, got {}", cfg.separation)));
    }
    check_protocol(cfg.p, cfg.q, cfg.sigma_deg)?;
    let n = 2 * cfg.n_per_cluster;
    let half = Vec3::new(cfg.separation / 2.0, 0.0, 0.0);
    let mut pts = gen_locations(n, cfg.seed).into_points();
    let mut labels = Vec::with_capacity(n);
    for (k, p) in pts.iter_mut().enumerate() {
        if k < cfg.n_per_cluster {
            *p -= half;
            labels.push(0);
        } else {
            *p += half;
            labels.push(1);
        }
    }
    assemble(Locations::new(pts)?, Some(labels), cfg.p, cfg.q, cfg.sigma_deg, cfg.seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn z_axis() -> UnitDirection {
        UnitDirection::from_xyz(0.0, 0.0, 1.0).unwrap()
    }

    #[test]
    fn derived_seeds_differ() {
        let seeds: std::collections::HashSet<u64> = (0..100).map(|k| derive_seed(7, k)).collect();
        assert_eq!(seeds.len(), 100);
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }

    #[test]
    fn locations_are_deterministic() {
        assert_eq!(gen_locations(2, 9), gen_locations(2, 9));
        assert_ne!(gen_locations(2, 9), gen_locations(2, 10));
    }

    #[test]
    fn complete_graph_at_p_one() {
        let e = gen_er_edges(7, 1.0, 3);
        assert_eq!(e.len(), 21);
        assert_eq!(gen_er_edges(30, 0.3, 5), gen_er_edges(30, 0.3, 5));
    }

    #[test]
    fn rodrigues_examples() {
        let v = Vec3::new(1.0, 0.0, 0.0);
        let r = axis_angle_rotate(&v, &z_axis(), FRAC_PI_2);
        assert!((r - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
        assert_eq!(axis_angle_rotate(&v, &z_axis(), 0.0), v);
    }

    #[test]
    fn rodrigues_inverse_and_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let v = normal_vec(&mut rng);
            let axis = UnitDirection::normalize(normal_vec(&mut rng)).unwrap();
            let a = rng.random::<f64>() * 6.0 - 3.0;
            let r = axis_angle_rotate(&v, &axis, a);
            assert!((r.norm() - v.norm()).abs() < 1e-12);
            assert!((axis_angle_rotate(&r, &axis, -a) - v).norm() < 1e-12);
        }
    }

    #[test]
    fn orthogonal_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            assert!(sample_orthogonal_unit(&z_axis(), &mut rng).as_vec().z.abs() < 1e-15);
            let dir = UnitDirection::normalize(normal_vec(&mut rng)).unwrap();
            let out = sample_orthogonal_unit(&dir, &mut rng);
            assert!(out.as_vec().dot(dir.as_vec()).abs() < 1e-12);
            assert!((out.as_vec().norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn corruption_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = UnitDirection::normalize(Vec3::new(1.0, 2.0, 3.0)).unwrap();
        let c = corrupt_direction(&d, 0.0, 0.0, &mut rng);
        assert_eq!(c.direction, d);
        assert_eq!(c.angular_error, 0.0);
        for _ in 0..50 {
            assert!(corrupt_direction(&d, 1.0, 5.0, &mut rng).outlier);
        }
    }

    #[test]
    fn noiseless_complete_instance_is_exact() {
        let inst = gen_instance(&SynthConfig { n: 12, p: 1.0, q: 0.0, sigma_deg: 0.0, seed: 4 }).unwrap();
        assert_eq!(inst.graph.num_edges(), 66);
        for e in inst.graph.edges() {
            let truth = (inst.truth[e.j] - inst.truth[e.i]).normalize();
            assert!((truth - e.v.as_vec()).norm() < 1e-12);
        }
    }

    #[test]
    fn sparse_graph_keeps_largest_component() {
        let inst = gen_instance(&SynthConfig { n: 40, p: 0.04, q: 0.0, sigma_deg: 0.0, seed: 1 }).unwrap();
        assert!(inst.graph.is_connected());
        assert_eq!(inst.graph.n() + inst.dropped_cameras, 40);
        assert_eq!(inst.truth.len(), inst.graph.n());
        assert_eq!(inst.outlier.len(), inst.graph.num_edges());
        for e in inst.graph.edges() {
            let truth = (inst.truth[e.j] - inst.truth[e.i]).normalize();
            assert!((truth - e.v.as_vec()).norm() < 1e-12);
        }
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            SynthConfig { n: 1, ..Default::default() },
            SynthConfig { p: 0.0, ..Default::default() },
            SynthConfig { q: 1.5, ..Default::default() },
            SynthConfig { sigma_deg: -1.0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(gen_instance(&cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn two_cluster_labels_and_zero_separation() {
        let cfg = TwoClusterConfig { n_per_cluster: 10, separation: 0.0, p: 1.0, q: 0.0, sigma_deg: 0.0, seed: 6 };
        let inst = gen_two_cluster(&cfg).unwrap();
        assert_eq!(inst.truth, gen_locations(20, 6));
        let labels = inst.cluster_labels.unwrap();
        assert_eq!(labels.iter().filter(|&&l| l == 0).count(), 10);
        assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 10);
    }
}
