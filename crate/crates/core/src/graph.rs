//! Immutable CSR graph with per-edge aggregation weights and node features.
//!
//! Edges are undirected: every input pair is stored in both rows. Rows are
//! sorted by neighbor id. A graph never changes after construction; feature
//! transforms return a new value.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{invalid, Error, Result};

/// How the aggregation weight `a_vi` is assigned to each stored edge.
#[derive(Debug, Clone, PartialEq)]
pub enum Weighting {
    /// `a_vi = 1 / sqrt(D_v * D_i)`, the usual GCN normalization.
    SymmetricNorm,
    /// `a_vi = 1`.
    Uniform,
    /// One positive value per input edge, applied to both directions.
    Raw(Vec<f64>),
}

/// Loader switches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Add `(v, v)` to every row before weighting.
    pub self_loops: bool,
}

/// Maxima over the stored graph used by the boundedness monitors.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GraphConstants {
    /// Largest degree.
    pub max_degree: usize,
    /// Largest edge weight.
    pub max_edge_weight: f64,
    /// `max_v || sum_i a_vi x_i ||`.
    pub feature_aggregate_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    node_count: usize,
    offsets: Vec<usize>,
    neighbor_ids: Vec<usize>,
    edge_weights: Vec<f64>,
    features: Array2<f64>,
    constants: GraphConstants,
}

impl SparseGraph {
    /// Builds a graph from an undirected edge list. Features start as a
    /// `node_count x 0` matrix until [`SparseGraph::attach_features`].
    pub fn load_edge_list(
        edges: &[(usize, usize)],
        node_count: usize,
        weighting: Weighting,
        opts: LoadOptions,
    ) -> Result<Self> {
        if node_count == 0 {
            return Err(invalid!("graph must have at least one node"));
        }
        if let Weighting::Raw(values) = &weighting {
            if values.len() != edges.len() {
                return Err(Error::Shape(format!("{} raw weights for {} edges", values.len(), edges.len())));
            }
            if let Some(bad) = values.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
                return Err(invalid!("edge weights must be positive and finite, got {bad}"));
            }
        }
        // (row, col, input edge index or usize::MAX for added self-loops)
        let mut entries: Vec<(usize, usize, usize)> = Vec::with_capacity(2 * edges.len() + node_count);
        for (e, &(src, dst)) in edges.iter().enumerate() {
            if src >= node_count || dst >= node_count {
                return Err(Error::EdgeOutOfRange { src, dst, node_count });
            }
            entries.push((src, dst, e));
            if src != dst {
                entries.push((dst, src, e));
            }
        }
        if opts.self_loops {
            entries.extend((0..node_count).map(|v| (v, v, usize::MAX)));
        }
        entries.sort_unstable();
        // Duplicate pairs keep the last input occurrence (last raw value wins).
        let mut dedup: Vec<(usize, usize, usize)> = Vec::with_capacity(entries.len());
        for ent in entries {
            match dedup.last_mut() {
                Some(last) if last.0 == ent.0 && last.1 == ent.1 => {
                    // sorted by input index, added self-loops (usize::MAX) last
                    if ent.2 != usize::MAX {
                        *last = ent;
                    }
                }
                _ => dedup.push(ent),
            }
        }

        let mut offsets = vec![0usize; node_count + 1];
        for &(r, _, _) in &dedup {
            offsets[r + 1] += 1;
        }
        for v in 0..node_count {
            offsets[v + 1] += offsets[v];
        }
        if let Some(v) = (0..node_count).find(|&v| offsets[v + 1] == offsets[v]) {
            return Err(Error::IsolatedNode(v));
        }
        let neighbor_ids: Vec<usize> = dedup.iter().map(|e| e.1).collect();
        let degree = |v: usize| (offsets[v + 1] - offsets[v]) as f64;
        let edge_weights: Vec<f64> = dedup
            .iter()
            .map(|&(r, c, e)| match &weighting {
                Weighting::SymmetricNorm => 1.0 / (degree(r) * degree(c)).sqrt(),
                Weighting::Uniform => 1.0,
                Weighting::Raw(values) => {
                    if e == usize::MAX {
                        1.0
                    } else {
                        values[e]
                    }
                }
            })
            .collect();

        let mut g = SparseGraph {
            node_count,
            offsets,
            neighbor_ids,
            edge_weights,
            features: Array2::zeros((node_count, 0)),
            constants: GraphConstants::default(),
        };
        g.constants = g.compute_constants();
        Ok(g)
    }

    /// Replaces the feature matrix and recomputes [`GraphConstants`].
    pub fn attach_features(mut self, rows: Array2<f64>) -> Result<Self> {
        if rows.nrows() != self.node_count {
            return Err(Error::Shape(format!(
                "feature matrix has {} rows for {} nodes",
                rows.nrows(),
                self.node_count
            )));
        }
        if rows.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("feature matrix".into()));
        }
        self.features = rows;
        self.constants = self.compute_constants();
        Ok(self)
    }

    /// Returns a copy whose selected feature rows are multiplied by `scale`.
    pub fn corrupt_features(&self, node_ids: &[usize], scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(invalid!("corruption scale must be positive, got {scale}"));
        }
        if let Some(&v) = node_ids.iter().find(|&&v| v >= self.node_count) {
            return Err(Error::UnknownNode(v));
        }
        let mut features = self.features.clone();
        let mut seen = vec![false; self.node_count];
        for &v in node_ids {
            if !std::mem::replace(&mut seen[v], true) {
                features.row_mut(v).mapv_inplace(|x| x * scale);
            }
        }
        let mut g = self.clone();
        g.features = features;
        g.constants = g.compute_constants();
        Ok(g)
    }

    fn compute_constants(&self) -> GraphConstants {
        let mut c = GraphConstants::default();
        let dim = self.feature_dim();
        let mut acc = vec![0.0; dim];
        for v in 0..self.node_count {
            c.max_degree = c.max_degree.max(self.degree(v));
            acc.iter_mut().for_each(|x| *x = 0.0);
            for (&i, &a) in self.neighbors(v).iter().zip(self.weights(v)) {
                c.max_edge_weight = c.max_edge_weight.max(a);
                for (s, x) in acc.iter_mut().zip(self.features.row(i)) {
                    *s += a * x;
                }
            }
            let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
            c.feature_aggregate_norm = c.feature_aggregate_norm.max(norm);
        }
        c
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.neighbor_ids.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbor_ids[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn weights(&self, v: usize) -> &[f64] {
        &self.edge_weights[self.offsets[v]..self.offsets[v + 1]]
    }

    /// Weight of edge `(v, i)` if present.
    pub fn edge_weight(&self, v: usize, i: usize) -> Option<f64> {
        let row = self.neighbors(v);
        row.binary_search(&i).ok().map(|pos| self.weights(v)[pos])
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn feature(&self, v: usize) -> ArrayView1<'_, f64> {
        self.features.row(v)
    }

    pub fn constants(&self) -> GraphConstants {
        self.constants
    }

    /// Writes the `BGS1` little-endian snapshot.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(SNAPSHOT_MAGIC)?;
        write_u64s(&mut w, self.offsets.iter().map(|&x| x as u64), self.offsets.len())?;
        write_u64s(&mut w, self.neighbor_ids.iter().map(|&x| x as u64), self.neighbor_ids.len())?;
        write_f64s(&mut w, self.edge_weights.iter().copied(), self.edge_weights.len())?;
        write_f64s(&mut w, self.features.iter().copied(), self.features.len())?;
        Ok(())
    }

    /// Reads a `BGS1` snapshot, validating the CSR invariants.
    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(Error::Format("bad graph snapshot magic".into()));
        }
        let offsets: Vec<usize> = read_u64s(&mut r)?.into_iter().map(|x| x as usize).collect();
        let neighbor_ids: Vec<usize> = read_u64s(&mut r)?.into_iter().map(|x| x as usize).collect();
        let edge_weights = read_f64s(&mut r)?;
        let feats = read_f64s(&mut r)?;
        if offsets.len() < 2 || offsets[0] != 0 {
            return Err(Error::Format("offsets must start at 0 and cover >= 1 node".into()));
        }
        let node_count = offsets.len() - 1;
        if offsets.windows(2).any(|w| w[0] > w[1]) || *offsets.last().unwrap() != neighbor_ids.len() {
            return Err(Error::Format("offsets are not a valid CSR row pointer".into()));
        }
        if edge_weights.len() != neighbor_ids.len() || feats.len() % node_count != 0 {
            return Err(Error::Format("array lengths disagree".into()));
        }
        if neighbor_ids.iter().any(|&i| i >= node_count) {
            return Err(Error::Format("neighbor id out of range".into()));
        }
        let dim = feats.len() / node_count;
        let features = Array2::from_shape_vec((node_count, dim), feats).map_err(|e| Error::Format(e.to_string()))?;
        let mut g = SparseGraph {
            node_count,
            offsets,
            neighbor_ids,
            edge_weights,
            features,
            constants: GraphConstants::default(),
        };
        g.constants = g.compute_constants();
        Ok(g)
    }
}

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"BGS1";

fn write_u64s<W: Write>(w: &mut W, xs: impl Iterator<Item = u64>, len: usize) -> Result<()> {
    w.write_all(&(len as u64).to_le_bytes())?;
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn write_f64s<W: Write>(w: &mut W, xs: impl Iterator<Item = f64>, len: usize) -> Result<()> {
    w.write_all(&(len as u64).to_le_bytes())?;
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

fn read_len<R: Read>(r: &mut R) -> Result<usize> {
    let n = read_u64(r)?;
    if n > (1u64 << 40) {
        return Err(Error::Format(format!("implausible array length {n}")));
    }
    Ok(n as usize)
}

fn read_u64s<R: Read>(r: &mut R) -> Result<Vec<u64>> {
    let n = read_len(r)?;
    (0..n).map(|_| read_u64(r)).collect()
}

fn read_f64s<R: Read>(r: &mut R) -> Result<Vec<f64>> {
    let n = read_len(r)?;
    (0..n).map(|_| read_f64(r)).collect()
}

/// Parses `src<TAB>dst` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_edge_list<R: BufRead>(r: R) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut parts = body.split('\t');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Format(format!("edge list line {}: expected src<TAB>dst", n + 1)));
        };
        let parse =
            |s: &str| s.trim().parse::<usize>().map_err(|e| Error::Format(format!("edge list line {}: {e}", n + 1)));
        edges.push((parse(a)?, parse(b)?));
    }
    Ok(edges)
}

pub fn read_edge_list(path: &Path) -> Result<Vec<(usize, usize)>> {
    parse_edge_list(BufReader::new(fs::File::open(path)?))
}

pub fn write_edge_list<W: Write>(mut w: W, edges: &[(usize, usize)]) -> Result<()> {
    for (a, b) in edges {
        writeln!(w, "{a}\t{b}")?;
    }
    Ok(())
}

/// Parses the feature file: a `node_count feature_dim` header, then one
/// whitespace-separated row per node.
pub fn parse_features<R: BufRead>(r: R) -> Result<Array2<f64>> {
    let mut lines = r.lines();
    let header = loop {
        match lines.next() {
            Some(l) => {
                let l = l?;
                if !l.trim().is_empty() {
                    break l;
                }
            }
            None => return Err(Error::Format("feature file is empty".into())),
        }
    };
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|s| s.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Format(format!("feature header: {e}")))?;
    let [rows, cols] = dims[..] else {
        return Err(Error::Format("feature header must be `node_count feature_dim`".into()));
    };
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            data.push(tok.parse::<f64>().map_err(|e| Error::Format(format!("feature row {}: {e}", seen + 1)))?);
        }
        if data.len() - before != cols {
            return Err(Error::Format(format!(
                "feature row {} has {} values, expected {cols}",
                seen + 1,
                data.len() - before
            )));
        }
        seen += 1;
    }
    if seen != rows {
        return Err(Error::Format(format!("feature file has {seen} rows, header says {rows}")));
    }
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Format(e.to_string()))
}

pub fn read_features(path: &Path) -> Result<Array2<f64>> {
    parse_features(BufReader::new(fs::File::open(path)?))
}

pub fn write_features<W: Write>(mut w: W, features: ArrayView2<'_, f64>) -> Result<()> {
    writeln!(w, "{} {}", features.nrows(), features.ncols())?;
    for row in features.rows() {
        let cells: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        writeln!(w, "{}", cells.join(" "))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn path_graph() -> SparseGraph {
        SparseGraph::load_edge_list(&[(0, 1), (0, 2)], 3, Weighting::SymmetricNorm, LoadOptions::default()).unwrap()
    }

    #[test]
    fn single_edge_uniform() {
        let g = SparseGraph::load_edge_list(&[(0, 1)], 2, Weighting::Uniform, LoadOptions::default()).unwrap();
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
        assert_eq!(g.weights(0), &[1.0]);
        assert_eq!(g.weights(1), &[1.0]);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn symmetric_norm_weights() {
        let g = path_graph();
        let a01 = g.edge_weight(0, 1).unwrap();
        assert!((a01 - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!((a01 - 0.7071).abs() < 1e-4);
        for v in 0..3 {
            for &i in g.neighbors(v) {
                assert_eq!(g.edge_weight(v, i), g.edge_weight(i, v));
            }
        }
    }

    #[test]
    fn out_of_range_edge_rejected() {
        let err = SparseGraph::load_edge_list(&[(0, 5)], 3, Weighting::Uniform, LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::EdgeOutOfRange { src: 0, dst: 5, .. }));
    }

    #[test]
    fn isolated_node_rejected_unless_self_loops() {
        let err = SparseGraph::load_edge_list(&[(0, 1)], 3, Weighting::Uniform, LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::IsolatedNode(2)));
        let g =
            SparseGraph::load_edge_list(&[(0, 1)], 3, Weighting::Uniform, LoadOptions { self_loops: true }).unwrap();
        assert_eq!(g.neighbors(2), &[2]);
        assert_eq!(g.neighbors(0), &[0, 1]);
    }

    #[test]
    fn duplicate_edges_collapse() {
        let g = SparseGraph::load_edge_list(&[(0, 1), (1, 0), (0, 1)], 2, Weighting::Uniform, LoadOptions::default())
            .unwrap();
        assert_eq!(g.degree(0), 1);
        assert_eq!(g.edge_count(), 2);
    }

    #[test]
    fn zero_features_give_zero_cx() {
        let g = SparseGraph::load_edge_list(&[(0, 1)], 2, Weighting::Uniform, LoadOptions::default())
            .unwrap()
            .attach_features(Array2::zeros((2, 2)))
            .unwrap();
        assert_eq!(g.constants().feature_aggregate_norm, 0.0);
    }

    #[test]
    fn cx_scans_all_roots() {
        let g = SparseGraph::load_edge_list(&[(0, 1)], 2, Weighting::Uniform, LoadOptions::default())
            .unwrap()
            .attach_features(array![[1.0, 0.0], [0.0, 1.0]])
            .unwrap();
        assert_eq!(g.constants().feature_aggregate_norm, 1.0);
        assert_eq!(g.constants().max_degree, 1);
        assert_eq!(g.constants().max_edge_weight, 1.0);
    }

    #[test]
    fn self_loop_three_four_five() {
        let g = SparseGraph::load_edge_list(&[(0, 0)], 1, Weighting::Uniform, LoadOptions::default())
            .unwrap()
            .attach_features(array![[3.0, 4.0]])
            .unwrap();
        assert_eq!(g.constants().feature_aggregate_norm, 5.0);
    }

    #[test]
    fn feature_shape_mismatch_rejected() {
        let g = path_graph();
        assert!(matches!(g.attach_features(Array2::zeros((2, 4))), Err(Error::Shape(_))));
    }

    #[test]
    fn corruption_scales_selected_rows() {
        let g = path_graph().attach_features(array![[1.0, 2.0], [0.5, 0.5], [1.0, 1.0]]).unwrap();
        let same = g.corrupt_features(&[0], 1.0).unwrap();
        assert_eq!(same.features(), g.features());
        let none = g.corrupt_features(&[], 40.0).unwrap();
        assert_eq!(none, g);
        let c = g.corrupt_features(&[0], 40.0).unwrap();
        assert_eq!(c.feature(0).to_vec(), vec![40.0, 80.0]);
        assert_eq!(c.feature(1), g.feature(1));
        assert!(matches!(g.corrupt_features(&[9], 2.0), Err(Error::UnknownNode(9))));
    }

    #[test]
    fn text_formats_parse() {
        let edges = parse_edge_list("# header\n0\t1\n\n1\t2 # trailing\n".as_bytes()).unwrap();
        assert_eq!(edges, vec![(0, 1), (1, 2)]);
        assert!(parse_edge_list("0 1\n".as_bytes()).is_err());
        let f = parse_features("2 2\n1 2\n3.5 -4\n".as_bytes()).unwrap();
        assert_eq!(f, array![[1.0, 2.0], [3.5, -4.0]]);
        assert!(parse_features("2 2\n1 2\n".as_bytes()).is_err());
        assert!(parse_features("1 2\n1 2 3\n".as_bytes()).is_err());
    }

    #[test]
    fn snapshot_rejects_bad_magic() {
        assert!(SparseGraph::read_snapshot(&b"XXXX"[..]).is_err());
    }
}
