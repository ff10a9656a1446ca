//! Plain-text formats for view graphs, locations, rotations and synthetic
//! sidecar data. Blank lines and lines starting with `#` are ignored.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::graph::{Edge, Locations, Mat3, Rotation, UnitDirection, Vec3, ViewGraph};
use crate::synthetic::SynthInstance;

/// Scientific notation with 17 significant digits, enough for an exact round trip.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

/// Non-comment lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(k, l)| {
        let l = l.trim();
        if l.is_empty() || l.starts_with('#') {
            None
        } else {
            Some((k + 1, l.split_whitespace().collect()))
        }
    })
}

fn field<T: std::str::FromStr>(tok: &[&str], k: usize, line: usize, what: &str) -> Result<T> {
    let s = tok.get(k).ok_or_else(|| parse_err(line, format!("missing {what}")))?;
    s.parse().map_err(|_| parse_err(line, format!("invalid {what} '{s}'")))
}

fn real(tok: &[&str], k: usize, line: usize, what: &str) -> Result<f64> {
    let x: f64 = field(tok, k, line, what)?;
    if !x.is_finite() {
        return Err(parse_err(line, format!("{what} is not finite")));
    }
    Ok(x)
}

fn expect_len(tok: &[&str], allowed: &[usize], line: usize) -> Result<()> {
    if allowed.contains(&tok.len()) {
        Ok(())
    } else {
        Err(parse_err(line, format!("expected {} fields, found {}", allowed[0], tok.len())))
    }
}

pub fn write_view_graph(g: &ViewGraph) -> String {
    let mut s = format!("VG {} {}\n", g.n(), g.num_edges());
    for e in g.edges() {
        let v = e.v.as_vec();
        let _ = writeln!(
            s,
            "E {} {} {} {} {} {}",
            e.i,
            e.j,
            fmt_real(v.x),
            fmt_real(v.y),
            fmt_real(v.z),
            fmt_real(e.rot_residual)
        );
    }
    s
}

/// Parses `VG n m` followed by `m` edge lines. The rotation residual column may be omitted.
pub fn parse_view_graph(text: &str) -> Result<ViewGraph> {
    let mut lines = content_lines(text);
    let (hline, head) = lines.next().ok_or_else(|| parse_err(1, "empty view graph file"))?;
    if head.first() != Some(&"VG") {
        return Err(parse_err(hline, "expected header 'VG <n> <m>'"));
    }
    expect_len(&head, &[3], hline)?;
    let n: usize = field(&head, 1, hline, "camera count")?;
    let m: usize = field(&head, 2, hline, "edge count")?;
    let mut edges = Vec::with_capacity(m);
    let mut seen = std::collections::HashSet::new();
    let mut last_line = hline;
    for (line, tok) in lines {
        last_line = line;
        if tok[0] != "E" {
            return Err(parse_err(line, format!("unexpected record '{}'", tok[0])));
        }
        expect_len(&tok, &[7, 6], line)?;
        let i: usize = field(&tok, 1, line, "camera index i")?;
        let j: usize = field(&tok, 2, line, "camera index j")?;
        if i >= n || j >= n {
            return Err(parse_err(line, format!("camera index out of range for n = {n}")));
        }
        let v = Vec3::new(real(&tok, 3, line, "vx")?, real(&tok, 4, line, "vy")?, real(&tok, 5, line, "vz")?);
        let v = UnitDirection::new(v).map_err(|e| parse_err(line, e.to_string()))?;
        let rr = if tok.len() == 7 { real(&tok, 6, line, "rotation residual")? } else { 0.0 };
        if rr < 0.0 {
            return Err(parse_err(line, "rotation residual is negative"));
        }
        if i == j {
            return Err(parse_err(line, format!("self-loop on camera {i}")));
        }
        if !seen.insert((i.min(j), i.max(j))) {
            return Err(parse_err(line, format!("duplicate edge between cameras {i} and {j}")));
        }
        edges.push(Edge::new(i, j, v).with_rot_residual(rr));
    }
    if edges.len() != m {
        return Err(parse_err(last_line, format!("header declares {m} edges, found {}", edges.len())));
    }
    ViewGraph::new(n, edges).map_err(|e| match e {
        Error::Graph(msg) => parse_err(hline, msg),
        other => other,
    })
}

pub fn write_locations(t: &Locations) -> String {
    let mut s = String::new();
    for (i, p) in t.iter().enumerate() {
        let _ = writeln!(s, "T {} {} {} {}", i, fmt_real(p.x), fmt_real(p.y), fmt_real(p.z));
    }
    s
}

/// Collects `tag i ...` records into a dense index `0..n`.
fn dense_records<T>(
    text: &str,
    tag: &str,
    fields: usize,
    mut parse: impl FnMut(&[&str], usize) -> Result<T>,
) -> Result<Vec<T>> {
    let mut slots: Vec<Option<T>> = Vec::new();
    let mut last = 0;
    for (line, tok) in content_lines(text) {
        last = line;
        if tok[0] != tag {
            return Err(parse_err(line, format!("unexpected record '{}', expected '{tag}'", tok[0])));
        }
        expect_len(&tok, &[fields], line)?;
        let i: usize = field(&tok, 1, line, "index")?;
        if i >= slots.len() {
            slots.resize_with(i + 1, || None);
        }
        if slots[i].is_some() {
            return Err(parse_err(line, format!("index {i} appears twice")));
        }
        slots[i] = Some(parse(&tok, line)?);
    }
    let n = slots.len();
    slots
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.ok_or_else(|| parse_err(last.max(1), format!("index {i} missing (max index {})", n - 1))))
        .collect()
}

pub fn parse_locations(text: &str) -> Result<Locations> {
    let pts = dense_records(text, "T", 5, |tok, line| {
        Ok(Vec3::new(real(tok, 2, line, "x")?, real(tok, 3, line, "y")?, real(tok, 4, line, "z")?))
    })?;
    if pts.is_empty() {
        return Err(parse_err(1, "no locations"));
    }
    Locations::new(pts)
}

pub fn write_rotations(rs: &[Rotation]) -> String {
    let mut s = String::new();
    for (i, r) in rs.iter().enumerate() {
        let m = r.matrix();
        let _ = write!(s, "R {i}");
        for a in 0..3 {
            for b in 0..3 {
                let _ = write!(s, " {}", fmt_real(m[(a, b)]));
            }
        }
        s.push('\n');
    }
    s
}

pub fn parse_rotations(text: &str) -> Result<Vec<Rotation>> {
    dense_records(text, "R", 11, |tok, line| {
        let mut m = Mat3::zeros();
        for k in 0..9 {
            m[(k / 3, k % 3)] = real(tok, 2 + k, line, "matrix entry")?;
        }
        Rotation::new(m).map_err(|e| parse_err(line, e.to_string()))
    })
}

/// Cluster labels (`L i c`) and per-edge outlier flags (`O k 0|1`).
pub fn write_sidecar(inst: &SynthInstance) -> String {
    let mut s = String::new();
    if let Some(labels) = &inst.cluster_labels {
        for (i, c) in labels.iter().enumerate() {
            let _ = writeln!(s, "L {i} {c}");
        }
    }
    for (k, o) in inst.outlier.iter().enumerate() {
        let _ = writeln!(s, "O {k} {}", u8::from(*o));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sidecar {
    pub labels: Option<Vec<usize>>,
    pub outlier: Vec<bool>,
}

pub fn parse_sidecar(text: &str) -> Result<Sidecar> {
    let mut labels: Vec<(usize, usize, usize)> = Vec::new();
    let mut flags: Vec<(usize, usize, bool)> = Vec::new();
    for (line, tok) in content_lines(text) {
        expect_len(&tok, &[3], line)?;
        let k: usize = field(&tok, 1, line, "index")?;
        match tok[0] {
            "L" => labels.push((line, k, field(&tok, 2, line, "cluster label")?)),
            "O" => {
                let f = match tok[2] {
                    "0" => false,
                    "1" => true,
                    other => return Err(parse_err(line, format!("outlier flag must be 0 or 1, got '{other}'"))),
                };
                flags.push((line, k, f));
            }
            other => return Err(parse_err(line, format!("unexpected record '{other}'"))),
        }
    }
    fn densify<T: Copy>(v: Vec<(usize, usize, T)>) -> Result<Vec<T>> {
        let mut out: Vec<Option<T>> = vec![None; v.len()];
        for (line, k, x) in v.iter().copied() {
            match out.get_mut(k) {
                Some(slot @ None) => *slot = Some(x),
                _ => return Err(parse_err(line, format!("index {k} is duplicated or out of range"))),
            }
        }
        Ok(out.into_iter().map(|x| x.expect("all slots filled")).collect())
    }
    Ok(Sidecar {
        labels: if labels.is_empty() { None } else { Some(densify(labels)?) },
        outlier: densify(flags)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{gen_instance, gen_two_cluster, SynthConfig, TwoClusterConfig};

    #[test]
    fn view_graph_round_trip_is_exact() {
        let inst = gen_instance(&SynthConfig { n: 20, p: 0.5, q: 0.1, sigma_deg: 5.0, seed: 2 }).unwrap();
        let g = inst.with_rotation_proxy(0.0, 2.0).unwrap();
        let text = write_view_graph(&g);
        assert_eq!(parse_view_graph(&text).unwrap(), g);
        assert_eq!(write_view_graph(&parse_view_graph(&text).unwrap()), text);
    }

    #[test]
    fn locations_and_rotations_round_trip() {
        let inst = gen_instance(&SynthConfig { n: 8, p: 1.0, ..Default::default() }).unwrap();
        assert_eq!(parse_locations(&write_locations(&inst.truth)).unwrap(), inst.truth);
        let axis = UnitDirection::from_xyz(0.3, -1.0, 2.0).unwrap();
        let rs = vec![Rotation::identity(), Rotation::from_axis_angle(&axis, 1.1)];
        let back = parse_rotations(&write_rotations(&rs)).unwrap();
        assert_eq!(back, rs);
    }

    #[test]
    fn sidecar_round_trip() {
        let cfg = TwoClusterConfig { n_per_cluster: 6, separation: 4.0, p: 1.0, q: 0.3, sigma_deg: 0.0, seed: 1 };
        let inst = gen_two_cluster(&cfg).unwrap();
        let side = parse_sidecar(&write_sidecar(&inst)).unwrap();
        assert_eq!(side.labels, inst.cluster_labels);
        assert_eq!(side.outlier, inst.outlier);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let text = "VG 3 2\nE 0 1 1 0 0 0\nE 1 2 1 0 oops 0\n";
        assert_eq!(parse_view_graph(text).unwrap_err(), Error::Parse { line: 3, msg: "invalid vz 'oops'".into() });
        let text = "# comment\nVG 3 2\nE 0 1 1 0 0 0\nE 1 5 1 0 0 0\n";
        assert!(matches!(parse_view_graph(text), Err(Error::Parse { line: 4, .. })));
        let text = "VG 3 2\nE 0 1 1 0 0 0\nE 1 2 0.5 0 0 0\n";
        assert!(matches!(parse_view_graph(text), Err(Error::Parse { line: 3, .. })));
        let text = "VG 3 1\nE 0 1 1 0 0 0\nE 1 2 1 0 0 0\n";
        assert!(matches!(parse_view_graph(text), Err(Error::Parse { line: 3, .. })));
        let text = "VG 3 2\nE 0 1 1 0 0 0\nE 1 0 1 0 0 0\n";
        assert!(matches!(parse_view_graph(text), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(parse_locations("T 0 1 2 3\nT 2 1 1 1\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse_view_graph(""), Err(Error::Parse { line: 1, .. })));
    }
}
