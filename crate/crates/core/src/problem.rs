//! Measurement graphs: synthetic generation, the text file format and the
//! spanning tree used for sign selection.
//!
//! Vertices are 0-based in memory and 1-based in files and reports. Edges are
//! stored with `i < j`, sorted by `(i, j)`; the measurement of edge `(i, j)`
//! approximates `conj(q_i) * q_j` up to sign.
//!
//! # File format
//!
//! ```text
//! # comment
//! N 3
//! EDGE_QUAT 1 2 qw qx qy qz
//! EDGE_QUAT 2 3 qw qx qy qz
//! TRUTH 1 qw qx qy qz
//! ```
//!
//! Fields are whitespace separated and numbers are written with 17 significant
//! digits so that reading and writing round-trips exactly. A record
//! `EDGE_QUAT j i ...` with `j > i` is stored as `(i, j)` with the conjugated
//! quaternion. `TRUTH` lines are optional but must cover every vertex if
//! present.
//!
//! # Synthetic instances
//!
//! [`generate_synthetic`] draws from [`crate::rng`] in this order: ground truth
//! `q_2 .. q_N` (one [`random_rotation`] each, `q_1` is the identity); the loop
//! closures, each an index `floor(u * len)` into the remaining non-chain pairs
//! kept in lexicographic order; then, for every edge in sorted order, one
//! [`perturb`] of `conj(q_i) * q_j` followed by one uniform that negates the
//! measurement when below `0.5`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::quat::{multiply, perturb, random_rotation, UnitQuaternion};
use crate::rng::{index, seeded, uniform};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceConfig {
    pub n: usize,
    pub n_loops: usize,
    pub theta_max: f64,
    pub seed: u64,
}

impl InstanceConfig {
    /// Number of vertex pairs that are not chain edges.
    pub fn available_loops(n: usize) -> usize {
        if n < 2 {
            0
        } else {
            n * (n - 1) / 2 - (n - 1)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 vertices, got {}", self.n)));
        }
        let avail = Self::available_loops(self.n);
        if self.n_loops > avail {
            return Err(Error::InvalidArgument(format!(
                "{} loop closures requested but only {avail} non-chain pairs exist for N = {}",
                self.n_loops, self.n
            )));
        }
        if !(0.0..=std::f64::consts::PI).contains(&self.theta_max) {
            return Err(Error::InvalidArgument(format!("theta_max {} outside [0, pi]", self.theta_max)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub measurement: UnitQuaternion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementGraph {
    n: usize,
    edges: Vec<Edge>,
    truth: Option<Vec<UnitQuaternion>>,
}

impl MeasurementGraph {
    /// Builds a graph from `(i, j, measurement)` triples in any orientation.
    pub fn new(n: usize, edges: Vec<(usize, usize, UnitQuaternion)>, truth: Option<Vec<UnitQuaternion>>) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 vertices, got {n}")));
        }
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(edges.len());
        for (a, b, m) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidInput(format!("edge ({}, {}) out of range 1..={n}", a + 1, b + 1)));
            }
            if a == b {
                return Err(Error::InvalidInput(format!("self loop at vertex {}", a + 1)));
            }
            let e = if a < b { Edge { i: a, j: b, measurement: m } } else { Edge { i: b, j: a, measurement: m.conjugate() } };
            if !seen.insert((e.i, e.j)) {
                return Err(Error::InvalidInput(format!("duplicate edge ({}, {})", e.i + 1, e.j + 1)));
            }
            out.push(e);
        }
        out.sort_by_key(|e| (e.i, e.j));
        if let Some(t) = &truth {
            if t.len() != n {
                return Err(Error::InvalidInput(format!("ground truth has {} entries, expected {n}", t.len())));
            }
        }
        let g = Self { n, edges: out, truth };
        if !g.is_connected() {
            return Err(Error::Disconnected);
        }
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn truth(&self) -> Option<&[UnitQuaternion]> {
        self.truth.as_deref()
    }

    /// Neighbors of each vertex as `(vertex, edge index)`, sorted by vertex.
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.n];
        for (k, e) in self.edges.iter().enumerate() {
            adj[e.i].push((e.j, k));
            adj[e.j].push((e.i, k));
        }
        for a in &mut adj {
            a.sort_unstable();
        }
        adj
    }

    fn is_connected(&self) -> bool {
        let adj = self.adjacency();
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &(v, _) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.iter().all(|&s| s)
    }

    /// Writes the canonical text form.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "N {}", self.n);
        let fmt = |q: &UnitQuaternion| {
            q.as_array().iter().map(|c| format!("{c:.16e}")).collect::<Vec<_>>().join(" ")
        };
        for e in &self.edges {
            let _ = writeln!(s, "EDGE_QUAT {} {} {}", e.i + 1, e.j + 1, fmt(&e.measurement));
        }
        if let Some(truth) = &self.truth {
            for (i, q) in truth.iter().enumerate() {
                let _ = writeln!(s, "TRUTH {} {}", i + 1, fmt(q));
            }
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse { line, message };
        let mut n: Option<usize> = None;
        let mut edges = Vec::new();
        let mut pairs = HashSet::new();
        let mut truth: Vec<Option<UnitQuaternion>> = Vec::new();
        let mut truth_lines = 0;
        let mut last_line = 0;

        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            last_line = line;
            let content = raw.split('#').next().unwrap_or("");
            let fields: Vec<&str> = content.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            let vertex = |s: &str, n: usize| -> Result<usize> {
                let v: usize = s.parse().map_err(|_| err(line, format!("bad vertex index '{s}'")))?;
                if v == 0 || v > n {
                    return Err(err(line, format!("vertex index {v} outside 1..={n}")));
                }
                Ok(v - 1)
            };
            let quaternion = |fs: &[&str]| -> Result<UnitQuaternion> {
                let mut c = [0.0; 4];
                for (slot, s) in c.iter_mut().zip(fs) {
                    *slot = s.parse().map_err(|_| err(line, format!("bad number '{s}'")))?;
                }
                UnitQuaternion::new(c[0], c[1], c[2], c[3]).map_err(|e| err(line, e.to_string()))
            };
            match fields[0] {
                "N" => {
                    if fields.len() != 2 {
                        return Err(err(line, "expected 'N <count>'".into()));
                    }
                    if n.is_some() {
                        return Err(err(line, "repeated N header".into()));
                    }
                    let count: usize = fields[1].parse().map_err(|_| err(line, format!("bad count '{}'", fields[1])))?;
                    if count < 2 {
                        return Err(err(line, format!("need at least 2 vertices, got {count}")));
                    }
                    n = Some(count);
                    truth = vec![None; count];
                }
                "EDGE_QUAT" => {
                    let n = n.ok_or_else(|| err(line, "EDGE_QUAT before N header".into()))?;
                    if fields.len() != 7 {
                        return Err(err(line, "expected 'EDGE_QUAT i j qw qx qy qz'".into()));
                    }
                    let (a, b) = (vertex(fields[1], n)?, vertex(fields[2], n)?);
                    if a == b {
                        return Err(err(line, format!("self loop at vertex {}", a + 1)));
                    }
                    if !pairs.insert((a.min(b), a.max(b))) {
                        return Err(err(line, format!("duplicate edge ({}, {})", a.min(b) + 1, a.max(b) + 1)));
                    }
                    edges.push((a, b, quaternion(&fields[3..])?));
                }
                "TRUTH" => {
                    let n = n.ok_or_else(|| err(line, "TRUTH before N header".into()))?;
                    if fields.len() != 6 {
                        return Err(err(line, "expected 'TRUTH i qw qx qy qz'".into()));
                    }
                    let v = vertex(fields[1], n)?;
                    if truth[v].is_some() {
                        return Err(err(line, format!("duplicate TRUTH for vertex {}", v + 1)));
                    }
                    truth[v] = Some(quaternion(&fields[2..])?);
                    truth_lines += 1;
                }
                other => return Err(err(line, format!("unknown record '{other}'"))),
            }
        }
        let n = n.ok_or_else(|| err(last_line.max(1), "missing N header".into()))?;
        let truth = match truth_lines {
            0 => None,
            t if t == n => Some(truth.into_iter().map(|q| q.unwrap()).collect()),
            _ => return Err(err(last_line, "TRUTH lines must cover every vertex".into())),
        };
        match Self::new(n, edges, truth) {
            Err(Error::Disconnected) => Err(Error::InvalidInput("measurement graph is not connected".into())),
            other => other,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

pub fn generate_synthetic(cfg: &InstanceConfig) -> Result<MeasurementGraph> {
    cfg.validate()?;
    let n = cfg.n;
    let mut rng = seeded(cfg.seed);
    let mut truth = vec![UnitQuaternion::IDENTITY];
    for _ in 1..n {
        truth.push(random_rotation(&mut rng));
    }
    let mut candidates: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 2..n).map(move |j| (i, j))).collect();
    let mut pairs: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
    for _ in 0..cfg.n_loops {
        let k = index(&mut rng, candidates.len());
        pairs.push(candidates.remove(k));
    }
    pairs.sort_unstable();
    let mut edges = Vec::with_capacity(pairs.len());
    for (i, j) in pairs {
        let rel = multiply(&truth[i].conjugate(), &truth[j]);
        let mut m = perturb(&rel, cfg.theta_max, &mut rng)?;
        if uniform(&mut rng) < 0.5 {
            m = -m;
        }
        edges.push((i, j, m));
    }
    MeasurementGraph::new(n, edges, Some(truth))
}

/// A spanning tree rooted at vertex 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanningTree {
    /// Tree edge indices in discovery order.
    pub edges: Vec<usize>,
    /// Vertices in discovery order, starting with the root.
    pub order: Vec<usize>,
    /// `(parent vertex, edge index)` for every vertex but the root.
    pub parent: Vec<Option<(usize, usize)>>,
}

/// Depth-first traversal from vertex 0 that always descends into the
/// lowest-indexed undiscovered neighbor first.
pub fn spanning_tree(g: &MeasurementGraph) -> Result<SpanningTree> {
    let adj = g.adjacency();
    let n = g.n();
    let mut parent = vec![None; n];
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut edges = Vec::with_capacity(n - 1);
    // stack of (vertex, next neighbor position)
    let mut stack = vec![(0usize, 0usize)];
    seen[0] = true;
    order.push(0);
    while let Some(top) = stack.last_mut() {
        let (u, pos) = *top;
        if pos == adj[u].len() {
            stack.pop();
            continue;
        }
        top.1 += 1;
        let (v, k) = adj[u][pos];
        if !seen[v] {
            seen[v] = true;
            parent[v] = Some((u, k));
            order.push(v);
            edges.push(k);
            stack.push((v, 0));
        }
    }
    if order.len() != n {
        return Err(Error::Disconnected);
    }
    Ok(SpanningTree { edges, order, parent })
}
