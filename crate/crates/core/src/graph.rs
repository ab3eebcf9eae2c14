//! Attributed graphs with labelled undirected edges.
//!
//! Edges are stored in canonical `src < dst` order. Edge features are kept
//! in compact `m x d2` form, one row per edge, aligned with [`Graph::edges`].
//!
//! On-disk format is a pair of CSV files:
//!
//! * nodes: `node_id,f_1,...,f_d1`
//! * edges: `src,dst,label,s_1,...,s_d2`

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("edge on line {line} references node {node}, but the graph has {num_nodes} nodes")]
    Reference {
        line: u64,
        node: usize,
        num_nodes: usize,
    },
    #[error("invalid graph: {0}")]
    Validation(String),
    #[error("size error: {0}")]
    Size(String),
}

pub type Result<T> = std::result::Result<T, GraphError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    node_features: Tensor,
    edges: Vec<(usize, usize)>,
    edge_features: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Graph {
    /// Validates and builds a graph. Edges may come in either orientation;
    /// they are canonicalised to `src < dst`.
    pub fn new(
        node_features: Tensor,
        edges: Vec<(usize, usize)>,
        edge_features: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = node_features.rows();
        if edge_features.rows() != edges.len() {
            return Err(GraphError::Validation(format!(
                "{} edge feature rows for {} edges",
                edge_features.rows(),
                edges.len()
            )));
        }
        if labels.len() != edges.len() {
            return Err(GraphError::Validation(format!(
                "{} labels for {} edges",
                labels.len(),
                edges.len()
            )));
        }
        if !node_features.is_finite() || !edge_features.is_finite() {
            return Err(GraphError::Validation("non-finite feature value".into()));
        }
        let mut seen = HashSet::with_capacity(edges.len());
        let mut canonical = Vec::with_capacity(edges.len());
        for (k, &(a, b)) in edges.iter().enumerate() {
            for node in [a, b] {
                if node >= n {
                    return Err(GraphError::Reference {
                        line: k as u64 + 2,
                        node,
                        num_nodes: n,
                    });
                }
            }
            if a == b {
                return Err(GraphError::Validation(format!("self-loop on node {a}")));
            }
            let e = (a.min(b), a.max(b));
            if !seen.insert(e) {
                return Err(GraphError::Validation(format!(
                    "duplicate undirected edge {}-{}",
                    e.0, e.1
                )));
            }
            canonical.push(e);
        }
        let mut counts = vec![0usize; num_classes];
        for &y in &labels {
            if y >= num_classes {
                return Err(GraphError::Validation(format!(
                    "label {y} outside [0, {num_classes})"
                )));
            }
            counts[y] += 1;
        }
        if let Some(c) = counts.iter().position(|&k| k == 0) {
            return Err(GraphError::Validation(format!("class {c} has no edges")));
        }
        Ok(Self {
            node_features,
            edges: canonical,
            edge_features,
            labels,
            num_classes,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.node_features.rows()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn node_dim(&self) -> usize {
        self.node_features.cols()
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn node_features(&self) -> &Tensor {
        &self.node_features
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_features(&self) -> &Tensor {
        &self.edge_features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn neighbors(&self, node: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(a, b)| match (a == node, b == node) {
                (true, _) => Some(b),
                (_, true) => Some(a),
                _ => None,
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// CSV I/O
// ---------------------------------------------------------------------------

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GraphError + '_ {
    move |source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> GraphError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => GraphError::Io {
            path: path.to_path_buf(),
            source,
        },
        kind => GraphError::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

fn check_header(
    path: &Path,
    header: &csv::StringRecord,
    fixed: &[&str],
    prefix: &str,
) -> Result<usize> {
    let bad = |message: String| GraphError::Parse {
        path: path.to_path_buf(),
        line: 1,
        message,
    };
    if header.len() < fixed.len() {
        return Err(bad(format!("header must start with {}", fixed.join(","))));
    }
    for (i, name) in fixed.iter().enumerate() {
        if header[i].trim() != *name {
            return Err(bad(format!(
                "column {} must be `{name}`, found `{}`",
                i + 1,
                &header[i]
            )));
        }
    }
    let width = header.len() - fixed.len();
    for k in 0..width {
        let expected = format!("{prefix}_{}", k + 1);
        if header[fixed.len() + k].trim() != expected {
            return Err(bad(format!(
                "feature column {} must be `{expected}`, found `{}`",
                k + 1,
                &header[fixed.len() + k]
            )));
        }
    }
    Ok(width)
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: u64, field: &str, what: &str) -> Result<T> {
    field.trim().parse::<T>().map_err(|_| GraphError::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("cannot parse {what} from `{field}`"),
    })
}

fn parse_float(path: &Path, line: u64, field: &str) -> Result<f64> {
    let v: f64 = parse_field(path, line, field, "feature value")?;
    if !v.is_finite() {
        return Err(GraphError::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("non-finite feature value `{field}`"),
        });
    }
    Ok(v)
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(r)
}

/// Reads a graph from node and edge CSV files and validates it.
pub fn load_graph(nodes_path: impl AsRef<Path>, edges_path: impl AsRef<Path>) -> Result<Graph> {
    let nodes_path = nodes_path.as_ref();
    let edges_path = edges_path.as_ref();

    let file = File::open(nodes_path).map_err(io_err(nodes_path))?;
    let mut rdr = reader(BufReader::new(file));
    let header = rdr.headers().map_err(|e| csv_err(nodes_path, e))?.clone();
    let d1 = check_header(nodes_path, &header, &["node_id"], "f")?;
    let mut rows: Vec<(usize, u64, Vec<f64>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(nodes_path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let id: usize = parse_field(nodes_path, line, &rec[0], "node_id")?;
        let feats = (1..=d1)
            .map(|k| parse_float(nodes_path, line, &rec[k]))
            .collect::<Result<Vec<_>>>()?;
        rows.push((id, line, feats));
    }
    rows.sort_by_key(|r| r.0);
    for (expected, (id, line, _)) in rows.iter().enumerate() {
        if *id != expected {
            return Err(GraphError::Parse {
                path: nodes_path.to_path_buf(),
                line: *line,
                message: format!(
                    "node ids must be contiguous from 0; expected {expected}, found {id}"
                ),
            });
        }
    }
    let n = rows.len();
    let node_features = Tensor::from_vec(n, d1, rows.into_iter().flat_map(|r| r.2).collect())
        .expect("row widths checked by csv reader");

    let file = File::open(edges_path).map_err(io_err(edges_path))?;
    let mut rdr = reader(BufReader::new(file));
    let header = rdr.headers().map_err(|e| csv_err(edges_path, e))?.clone();
    let d2 = check_header(edges_path, &header, &["src", "dst", "label"], "s")?;
    let mut edges = Vec::new();
    let mut labels = Vec::new();
    let mut feats = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(edges_path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let src: usize = parse_field(edges_path, line, &rec[0], "src")?;
        let dst: usize = parse_field(edges_path, line, &rec[1], "dst")?;
        for node in [src, dst] {
            if node >= n {
                return Err(GraphError::Reference {
                    line,
                    node,
                    num_nodes: n,
                });
            }
        }
        let label: usize = parse_field(edges_path, line, &rec[2], "label")?;
        edges.push((src, dst));
        labels.push(label);
        for k in 0..d2 {
            feats.push(parse_float(edges_path, line, &rec[3 + k])?);
        }
    }
    let m = edges.len();
    let edge_features = Tensor::from_vec(m, d2, feats).expect("row widths checked by csv reader");
    let num_classes = labels.iter().max().map_or(0, |&c| c + 1);
    Graph::new(node_features, edges, edge_features, labels, num_classes)
}

/// Formats a float with 17 significant digits.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes the two CSV files read by [`load_graph`].
pub fn write_graph(
    graph: &Graph,
    nodes_path: impl AsRef<Path>,
    edges_path: impl AsRef<Path>,
) -> Result<()> {
    let nodes_path = nodes_path.as_ref();
    let edges_path = edges_path.as_ref();

    let mut w = BufWriter::new(File::create(nodes_path).map_err(io_err(nodes_path))?);
    let mut header = String::from("node_id");
    for k in 1..=graph.node_dim() {
        header.push_str(&format!(",f_{k}"));
    }
    writeln!(w, "{header}").map_err(io_err(nodes_path))?;
    for i in 0..graph.num_nodes() {
        let mut line = i.to_string();
        for &v in graph.node_features().row(i) {
            line.push(',');
            line.push_str(&format_float(v));
        }
        writeln!(w, "{line}").map_err(io_err(nodes_path))?;
    }
    w.flush().map_err(io_err(nodes_path))?;

    let mut w = BufWriter::new(File::create(edges_path).map_err(io_err(edges_path))?);
    let mut header = String::from("src,dst,label");
    for k in 1..=graph.edge_dim() {
        header.push_str(&format!(",s_{k}"));
    }
    writeln!(w, "{header}").map_err(io_err(edges_path))?;
    for (e, &(a, b)) in graph.edges().iter().enumerate() {
        let mut line = format!("{a},{b},{}", graph.labels()[e]);
        for &v in graph.edge_features().row(e) {
            line.push(',');
            line.push_str(&format_float(v));
        }
        writeln!(w, "{line}").map_err(io_err(edges_path))?;
    }
    w.flush().map_err(io_err(edges_path))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Splits, adjacency, batches
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Seeded 1:2:2 train/val/test partition of edge indices. The first
/// `⌊m/5⌋` shuffled edges go to train, the next `2⌊m/5⌋` to validation and
/// the remainder to test.
pub fn split_edges(graph: &Graph, seed: u64) -> Result<SplitAssignment> {
    split_indices(graph.num_edges(), seed)
}

pub fn split_indices(m: usize, seed: u64) -> Result<SplitAssignment> {
    if m < 5 {
        return Err(GraphError::Size(format!(
            "need at least 5 edges to split, got {m}"
        )));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let unit = m / 5;
    let test = order.split_off(3 * unit);
    let val = order.split_off(unit);
    Ok(SplitAssignment {
        train: order,
        val,
        test,
        seed,
    })
}

/// Symmetric renormalised adjacency `D^{-1/2}(A+I)D^{-1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormAdj(Tensor);

impl NormAdj {
    pub fn matrix(&self) -> &Tensor {
        &self.0
    }

    pub fn into_inner(self) -> Tensor {
        self.0
    }

    /// Wraps an arbitrary square matrix (used for relabelled copies in tests).
    pub fn from_matrix(m: Tensor) -> Self {
        assert_eq!(m.rows(), m.cols(), "adjacency must be square");
        Self(m)
    }
}

pub fn normalize_adjacency(graph: &Graph) -> NormAdj {
    let n = graph.num_nodes();
    let mut a = Tensor::identity(n);
    for &(i, j) in graph.edges() {
        a.set(i, j, 1.0);
        a.set(j, i, 1.0);
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| a.row(i).iter().sum::<f64>().sqrt().recip())
        .collect();
    for i in 0..n {
        for j in 0..n {
            let v = a.get(i, j);
            if v != 0.0 {
                a.set(i, j, v * inv_sqrt[i] * inv_sqrt[j]);
            }
        }
    }
    NormAdj(a)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeBatch {
    pub edges: Vec<usize>,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    /// Edge features of the batch, `len x d2`.
    pub features: Tensor,
    pub labels: Vec<usize>,
}

impl EdgeBatch {
    pub fn gather(graph: &Graph, edges: &[usize]) -> Result<Self> {
        if edges.is_empty() {
            return Err(GraphError::Size("empty edge batch".into()));
        }
        let m = graph.num_edges();
        if let Some(&bad) = edges.iter().find(|&&e| e >= m) {
            return Err(GraphError::Size(format!(
                "edge index {bad} out of range for {m} edges"
            )));
        }
        let features = graph
            .edge_features()
            .select_rows(edges)
            .expect("indices checked above");
        Ok(Self {
            edges: edges.to_vec(),
            src: edges.iter().map(|&e| graph.edges()[e].0).collect(),
            dst: edges.iter().map(|&e| graph.edges()[e].1).collect(),
            features,
            labels: edges.iter().map(|&e| graph.labels()[e]).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

/// `[x_src ; x_dst]` rows for the given edges.
pub fn endpoint_features(graph: &Graph, edges: &[usize]) -> Result<Tensor> {
    let m = graph.num_edges();
    if let Some(&bad) = edges.iter().find(|&&e| e >= m) {
        return Err(GraphError::Size(format!(
            "edge index {bad} out of range for {m} edges"
        )));
    }
    let (src, dst): (Vec<usize>, Vec<usize>) = edges.iter().map(|&e| graph.edges()[e]).unzip();
    let x = graph.node_features();
    let parts = [
        x.select_rows(&src).expect("endpoints are valid nodes"),
        x.select_rows(&dst).expect("endpoints are valid nodes"),
    ];
    Ok(Tensor::concat_cols(&[&parts[0], &parts[1]]).expect("equal row counts"))
}

/// Per-epoch shuffled partition of `split` into chunks of `batch_size`;
/// the last chunk may be short.
pub fn batch_indices(
    split: &[usize],
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(GraphError::Size("batch size must be at least 1".into()));
    }
    if split.is_empty() {
        return Err(GraphError::Size("cannot batch an empty split".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order = split.to_vec();
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

pub fn batch_edges(
    graph: &Graph,
    split: &[usize],
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<EdgeBatch>> {
    batch_indices(split, batch_size, seed, epoch)?
        .iter()
        .map(|idx| EdgeBatch::gather(graph, idx))
        .collect()
}
