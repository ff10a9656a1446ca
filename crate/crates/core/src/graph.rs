//! View-graph domain types: directions, rotations, camera locations and the
//! graph itself, plus the gauge helpers every solver shares.

use std::collections::{HashSet, VecDeque};
use std::ops::Index;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Dense camera index in `0..n`.
pub type CameraId = usize;

const UNIT_TOL: f64 = 1e-9;
const ROTATION_TOL: f64 = 1e-9;

/// A unit-norm 3-vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitDirection(Vec3);

impl UnitDirection {
    /// Wraps `v`, which must already have unit norm (within 1e-9).
    pub fn new(v: Vec3) -> Result<Self> {
        let norm = v.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::Domain(format!("direction norm {norm} is not 1")));
        }
        Ok(Self(v))
    }

    /// Normalizes `v`; fails on zero or non-finite input.
    pub fn normalize(v: Vec3) -> Result<Self> {
        let norm = v.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::Degenerate("cannot normalize a zero vector".into()));
        }
        Ok(Self(v / norm))
    }

    pub fn from_xyz(x: f64, y: f64, z: f64) -> Result<Self> {
        Self::normalize(Vec3::new(x, y, z))
    }

    #[inline]
    pub fn as_vec(&self) -> &Vec3 {
        &self.0
    }

    #[inline]
    pub fn into_vec(self) -> Vec3 {
        self.0
    }
}

impl std::ops::Neg for UnitDirection {
    type Output = UnitDirection;
    fn neg(self) -> Self::Output {
        UnitDirection(-self.0)
    }
}

/// A proper rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Mat3);

impl Rotation {
    pub fn new(m: Mat3) -> Result<Self> {
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("rotation has non-finite entries".into()));
        }
        let gram_err = (m.transpose() * m - Mat3::identity()).abs().max();
        if gram_err > ROTATION_TOL {
            return Err(Error::Domain(format!(
                "matrix columns are not orthonormal (error {gram_err:e})"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::Domain(format!("rotation determinant {det} is not +1")));
        }
        Ok(Self(m))
    }

    pub fn identity() -> Self {
        Self(Mat3::identity())
    }

    /// Counter-clockwise rotation by `angle` radians about `axis`.
    pub fn from_axis_angle(axis: &UnitDirection, angle: f64) -> Self {
        let k = axis.as_vec();
        let kx = k.cross_matrix();
        let m = Mat3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos());
        Self(m)
    }

    #[inline]
    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }
}

/// Frobenius norm of `Ri^T Rj - Rij`.
pub fn rotation_residual(ri: &Rotation, rj: &Rotation, rij: &Rotation) -> f64 {
    (ri.matrix().transpose() * rj.matrix() - rij.matrix()).norm()
}

/// Maps a camera-frame relative direction into the world frame.
pub fn world_direction(ri: &Rotation, tij: &UnitDirection) -> UnitDirection {
    let v = ri.matrix() * tij.as_vec();
    UnitDirection(v / v.norm())
}

/// One view-graph edge: observed direction from camera `i` toward camera `j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: CameraId,
    pub j: CameraId,
    pub v: UnitDirection,
    /// Rotation-averaging misfit `||Ri^T Rj - Rij||_F` for this pair (0 if unknown).
    pub rot_residual: f64,
}

impl Edge {
    pub fn new(i: CameraId, j: CameraId, v: UnitDirection) -> Self {
        Self { i, j, v, rot_residual: 0.0 }
    }

    pub fn with_rot_residual(mut self, rr: f64) -> Self {
        self.rot_residual = rr;
        self
    }

    /// Baseline `t_j - t_i` under the given locations.
    #[inline]
    pub fn baseline(&self, t: &Locations) -> Vec3 {
        t[self.j] - t[self.i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewGraph {
    n: usize,
    edges: Vec<Edge>,
}

impl ViewGraph {
    pub fn new(n: usize, edges: Vec<Edge>) -> Result<Self> {
        if n < 2 {
            return Err(Error::Graph(format!("need at least 2 cameras, got {n}")));
        }
        let mut seen = HashSet::with_capacity(edges.len());
        for (k, e) in edges.iter().enumerate() {
            if e.i >= n || e.j >= n {
                return Err(Error::Graph(format!(
                    "edge {k} ({}, {}) references a camera outside 0..{n}",
                    e.i, e.j
                )));
            }
            if e.i == e.j {
                return Err(Error::Graph(format!("edge {k} is a self-loop on camera {}", e.i)));
            }
            if !(e.rot_residual.is_finite() && e.rot_residual >= 0.0) {
                return Err(Error::Graph(format!(
                    "edge {k} has invalid rotation residual {}",
                    e.rot_residual
                )));
            }
            if !seen.insert((e.i.min(e.j), e.i.max(e.j))) {
                return Err(Error::Graph(format!(
                    "duplicate edge between cameras {} and {}",
                    e.i, e.j
                )));
            }
        }
        Ok(Self { n, edges })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Same topology with every edge's rotation residual replaced.
    pub fn with_rot_residuals(&self, rr: &[f64]) -> Result<Self> {
        if rr.len() != self.edges.len() {
            return Err(Error::Graph("rotation residual count does not match edges".into()));
        }
        let edges = self
            .edges
            .iter()
            .zip(rr)
            .map(|(e, &r)| e.with_rot_residual(r))
            .collect();
        Self::new(self.n, edges)
    }

    pub fn adjacency(&self) -> Vec<Vec<CameraId>> {
        let mut adj = vec![Vec::new(); self.n];
        for e in &self.edges {
            adj[e.i].push(e.j);
            adj[e.j].push(e.i);
        }
        adj
    }

    /// Connected components, each sorted, ordered by their smallest camera.
    pub fn components(&self) -> Vec<Vec<CameraId>> {
        let adj = self.adjacency();
        let mut label = vec![usize::MAX; self.n];
        let mut comps = Vec::new();
        for s in 0..self.n {
            if label[s] != usize::MAX {
                continue;
            }
            let id = comps.len();
            let mut comp = vec![s];
            label[s] = id;
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &w in &adj[u] {
                    if label[w] == usize::MAX {
                        label[w] = id;
                        comp.push(w);
                        queue.push_back(w);
                    }
                }
            }
            comp.sort_unstable();
            comps.push(comp);
        }
        comps
    }

    pub fn is_connected(&self) -> bool {
        is_connected(self)
    }

    /// Induced subgraph on `keep` (renumbered in the given order).
    pub fn subgraph(&self, keep: &[CameraId]) -> Result<(Self, Vec<usize>)> {
        let mut remap = vec![usize::MAX; self.n];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        let mut edge_index = Vec::new();
        let mut edges = Vec::new();
        for (k, e) in self.edges.iter().enumerate() {
            let (a, b) = (remap[e.i], remap[e.j]);
            if a != usize::MAX && b != usize::MAX {
                edges.push(Edge { i: a, j: b, ..*e });
                edge_index.push(k);
            }
        }
        Ok((Self::new(keep.len(), edges)?, edge_index))
    }

    /// Scale functional `sum_ij <t_j - t_i, v_ij>` fixed to 1 by the BATA gauge.
    pub fn scale_functional(&self, t: &Locations) -> f64 {
        self.edges.iter().map(|e| e.baseline(t).dot(e.v.as_vec())).sum()
    }
}

/// Whether the undirected edge set spans all cameras.
pub fn is_connected(g: &ViewGraph) -> bool {
    let adj = g.adjacency();
    let mut seen = vec![false; g.n()];
    let mut stack = vec![0];
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = stack.pop() {
        for &w in &adj[u] {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                stack.push(w);
            }
        }
    }
    count == g.n()
}

/// Per-camera 3D positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Locations(Vec<Vec3>);

impl Locations {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if let Some(k) = points.iter().position(|p| p.iter().any(|x| !x.is_finite())) {
            return Err(Error::Domain(format!("location {k} is not finite")));
        }
        Ok(Self(points))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![Vec3::zeros(); n])
    }

    /// From a flat `[x0, y0, z0, x1, ...]` slice.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() % 3 != 0 {
            return Err(Error::Domain("flat location buffer length is not a multiple of 3".into()));
        }
        Self::new(flat.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.0.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.0
    }

    pub fn points_mut(&mut self) -> &mut [Vec3] {
        &mut self.0
    }

    pub fn into_points(self) -> Vec<Vec3> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Vec3> {
        self.0.iter()
    }

    pub fn centroid(&self) -> Vec3 {
        self.0.iter().sum::<Vec3>() / self.0.len() as f64
    }

    pub fn centered(&self) -> Self {
        let c = self.centroid();
        Self(self.0.iter().map(|p| p - c).collect())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(self.0.iter().map(|p| p * s).collect())
    }

    pub fn sum_sq_norm(&self) -> f64 {
        self.0.iter().map(|p| p.norm_squared()).sum()
    }

    /// Keeps only the listed cameras, in order.
    pub fn select(&self, idx: &[CameraId]) -> Self {
        Self(idx.iter().map(|&k| self.0[k]).collect())
    }
}

impl Index<CameraId> for Locations {
    type Output = Vec3;
    #[inline]
    fn index(&self, k: CameraId) -> &Vec3 {
        &self.0[k]
    }
}

/// Removes translation and scale: output sums to zero with unit total squared norm.
pub fn centralize_normalize(t: &Locations) -> Result<Locations> {
    if t.len() < 2 {
        return Err(Error::Degenerate("need at least 2 locations".into()));
    }
    let c = t.centered();
    let ss = c.sum_sq_norm();
    let scale_ref = t.iter().map(|p| p.norm_squared()).fold(0.0, f64::max).max(1.0);
    if !(ss > 1e-28 * scale_ref) {
        return Err(Error::Degenerate("all locations coincide".into()));
    }
    let mut out = c.scaled(1.0 / ss.sqrt());
    // one more centering pass removes the rounding residue of the first
    let c2 = out.centroid();
    for p in out.points_mut() {
        *p -= c2;
    }
    Ok(out)
}
