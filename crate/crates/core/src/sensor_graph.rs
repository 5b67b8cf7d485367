//! Binary channel adjacency built from sensor geometry.
//!
//! Edge weights come from the RBF kernel `exp(-gamma * |ci - cj|^2)`. Three
//! builders turn them into a binary matrix: fully connected, thresholded
//! (`weight >= tau`), and per-node top-k (directed, ties to the lower index).
//! Every builder sets the diagonal so that no attention row is empty.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    #[serde(rename = "channel")]
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Channel {
    pub fn new(id: impl Into<String>, position: [f64; 3]) -> Self {
        let [x, y, z] = position;
        Channel { id: id.into(), x, y, z }
    }

    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

/// Ordered channel positions; the order defines node indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorLayout {
    channels: Vec<Channel>,
}

impl SensorLayout {
    pub fn new(channels: Vec<Channel>) -> Result<Self> {
        if channels.len() < 2 {
            return Err(Error::invalid("a sensor layout needs at least 2 channels"));
        }
        let mut seen = HashSet::new();
        for ch in &channels {
            if !seen.insert(ch.id.as_str()) {
                return Err(Error::invalid(format!("duplicate channel id {:?}", ch.id)));
            }
            if !ch.position().iter().all(|v| v.is_finite()) {
                return Err(Error::invalid(format!(
                    "channel {:?} has non-finite coordinates",
                    ch.id
                )));
            }
        }
        Ok(SensorLayout { channels })
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn position(&self, i: usize) -> [f64; 3] {
        self.channels[i].position()
    }

    /// Layout whose channel `i` is this layout's channel `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.len() {
            return Err(Error::invalid("permutation length differs from channel count"));
        }
        SensorLayout::new(order.iter().map(|&i| self.channels[i].clone()).collect())
    }

    /// Parses the `channel,x,y,z` CSV format.
    pub fn from_csv_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["channel", "x", "y", "z"] {
            return Err(Error::format(
                "sensor layout",
                format!(
                    "expected header channel,x,y,z, found {}",
                    headers.iter().collect::<Vec<_>>().join(",")
                ),
            ));
        }
        let channels = rdr.deserialize().collect::<Result<Vec<Channel>, _>>()?;
        SensorLayout::new(channels)
    }

    pub fn to_csv_writer(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for ch in &self.channels {
            w.serialize(ch)?;
        }
        w.flush().map_err(|e| Error::io("<layout>", e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(std::io::BufReader::new(file))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.to_csv_writer(std::io::BufWriter::new(file))
    }
}

fn squared_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && gamma > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "gamma must be positive and finite, got {gamma}"
        )))
    }
}

/// `exp(-gamma * |ci - cj|^2)`
pub fn rbf_weight(ci: [f64; 3], cj: [f64; 3], gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if !ci.iter().chain(&cj).all(|v| v.is_finite()) {
        return Err(Error::invalid("rbf_weight on non-finite coordinates"));
    }
    Ok((-gamma * squared_distance(ci, cj)).exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum AdjacencyMethod {
    #[serde(rename = "fc")]
    FullyConnected,
    #[serde(rename = "thresh")]
    Threshold { tau: f64 },
    #[serde(rename = "topk")]
    TopK { k: usize },
}

impl AdjacencyMethod {
    pub fn name(&self) -> &'static str {
        match self {
            AdjacencyMethod::FullyConnected => "fc",
            AdjacencyMethod::Threshold { .. } => "thresh",
            AdjacencyMethod::TopK { .. } => "topk",
        }
    }

    /// The method's own parameter rendered for reports; `-` for FC.
    pub fn param_string(&self) -> String {
        match self {
            AdjacencyMethod::FullyConnected => "-".to_string(),
            AdjacencyMethod::Threshold { tau } => tau.to_string(),
            AdjacencyMethod::TopK { k } => k.to_string(),
        }
    }

    /// Parses `fc`, `thresh:<tau>` or `topk:<k>`.
    pub fn parse(s: &str) -> Result<Self> {
        let (name, param) = match s.split_once(':') {
            Some((n, p)) => (n.trim(), Some(p.trim())),
            None => (s.trim(), None),
        };
        let bad = || Error::invalid(format!("cannot parse adjacency variant {s:?}"));
        match (name, param) {
            ("fc", None) => Ok(AdjacencyMethod::FullyConnected),
            ("thresh", Some(p)) => Ok(AdjacencyMethod::Threshold {
                tau: p.parse().map_err(|_| bad())?,
            }),
            ("topk", Some(p)) => Ok(AdjacencyMethod::TopK {
                k: p.parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for AdjacencyMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AdjacencyMethod::FullyConnected => write!(f, "fc"),
            other => write!(f, "{}:{}", other.name(), other.param_string()),
        }
    }
}

/// Binary n×n connectivity, row `i` listing the neighbors node `i` attends to.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencyMatrix {
    n: usize,
    entries: Vec<bool>,
    method: AdjacencyMethod,
    gamma: f64,
    self_loops: bool,
}

impl AdjacencyMatrix {
    fn from_off_diagonal(n: usize, mut entries: Vec<bool>, method: AdjacencyMethod, gamma: f64) -> Self {
        for i in 0..n {
            entries[i * n + i] = true;
        }
        AdjacencyMatrix {
            n,
            entries,
            method,
            gamma,
            self_loops: true,
        }
    }

    /// Adjacency over raw entries (row-major), with self-loops added.
    pub fn from_entries(n: usize, entries: Vec<bool>, method: AdjacencyMethod, gamma: f64) -> Result<Self> {
        if entries.len() != n * n || n == 0 {
            return Err(Error::invalid("adjacency entries must be n*n"));
        }
        Ok(Self::from_off_diagonal(n, entries, method, gamma))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn method(&self) -> AdjacencyMethod {
        self.method
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn self_loops(&self) -> bool {
        self.self_loops
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.entries[i * self.n + j]
    }

    /// Row-major entries including the diagonal; usable directly as a softmax mask.
    pub fn mask(&self) -> &[bool] {
        &self.entries
    }

    /// Off-diagonal edges in ascending `(i, j)` order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.n;
        (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && self.get(i, j))
            .collect()
    }

    /// Same graph under a relabeling where new node `i` is old node `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let n = self.n;
        let mut entries = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                entries[i * n + j] = self.get(order[i], order[j]);
            }
        }
        AdjacencyMatrix {
            entries,
            ..self.clone()
        }
    }

    /// Writes the edge-list export: a `# method=.. gamma=.. param=.. edges=..`
    /// comment, then one `i,j` line per off-diagonal edge.
    pub fn write_edge_list(&self, mut w: impl Write) -> std::io::Result<()> {
        let edges = self.edges();
        writeln!(
            w,
            "# method={} gamma={} param={} edges={}",
            self.method.name(),
            self.gamma,
            self.method.param_string(),
            edges.len()
        )?;
        for (i, j) in edges {
            writeln!(w, "{i},{j}")?;
        }
        Ok(())
    }
}

pub fn build_fc(layout: &SensorLayout) -> AdjacencyMatrix {
    let n = layout.len();
    AdjacencyMatrix::from_off_diagonal(n, vec![true; n * n], AdjacencyMethod::FullyConnected, 0.0)
}

/// Keeps edge `(i, j)` iff `rbf_weight(ci, cj) >= tau`.
pub fn build_thresh(layout: &SensorLayout, gamma: f64, tau: f64) -> Result<AdjacencyMatrix> {
    check_gamma(gamma)?;
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::invalid(format!("tau must lie in (0,1), got {tau}")));
    }
    let n = layout.len();
    let mut entries = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let w = (-gamma * squared_distance(layout.position(i), layout.position(j))).exp();
                entries[i * n + j] = w >= tau;
            }
        }
    }
    Ok(AdjacencyMatrix::from_off_diagonal(
        n,
        entries,
        AdjacencyMethod::Threshold { tau },
        gamma,
    ))
}

/// Each node keeps its `k` highest-weight neighbors; the result is directed.
///
/// Candidates are ranked by squared distance, which orders identically to the
/// RBF weight but does not underflow to ties when `gamma * dist^2` is large.
pub fn build_topk(layout: &SensorLayout, gamma: f64, k: usize) -> Result<AdjacencyMatrix> {
    check_gamma(gamma)?;
    let n = layout.len();
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("k must lie in 1..={}, got {k}", n - 1)));
    }
    let mut entries = vec![false; n * n];
    let mut candidates: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        candidates.clear();
        let ci = layout.position(i);
        candidates.extend(
            (0..n)
                .filter(|&j| j != i)
                .map(|j| (squared_distance(ci, layout.position(j)), j)),
        );
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in &candidates[..k] {
            entries[i * n + j] = true;
        }
    }
    Ok(AdjacencyMatrix::from_off_diagonal(
        n,
        entries,
        AdjacencyMethod::TopK { k },
        gamma,
    ))
}

pub fn build_adjacency(layout: &SensorLayout, gamma: f64, method: AdjacencyMethod) -> Result<AdjacencyMatrix> {
    match method {
        AdjacencyMethod::FullyConnected => {
            check_gamma(gamma)?;
            let mut adj = build_fc(layout);
            adj.gamma = gamma;
            Ok(adj)
        }
        AdjacencyMethod::Threshold { tau } => build_thresh(layout, gamma, tau),
        AdjacencyMethod::TopK { k } => build_topk(layout, gamma, k),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConnectivityReport {
    /// Off-diagonal edges.
    pub edges: usize,
    /// Nodes with neither incoming nor outgoing off-diagonal edges.
    pub isolated: usize,
}

pub fn connectivity_report(adj: &AdjacencyMatrix) -> ConnectivityReport {
    let n = adj.n();
    let mut touched = vec![false; n];
    let mut edges = 0;
    for (i, j) in adj.edges() {
        edges += 1;
        touched[i] = true;
        touched[j] = true;
    }
    ConnectivityReport {
        edges,
        isolated: touched.iter().filter(|t| !**t).count(),
    }
}
