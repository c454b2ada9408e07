use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Undirected graph with categorical node labels and a class label.
///
/// Edges are stored once per undirected pair as `(low, high)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    node_labels: Vec<usize>,
    label: usize,
}

impl Graph {
    /// Builds a graph, canonicalizing edge orientation and dropping repeated
    /// pairs. Self-loops and out-of-range endpoints are rejected.
    pub fn new(
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        node_labels: Vec<usize>,
        label: usize,
    ) -> Result<Self> {
        if num_nodes == 0 {
            return Err(Error::invalid("graph must have at least one node"));
        }
        if node_labels.len() != num_nodes {
            return Err(Error::invalid(format!(
                "{} node labels for {num_nodes} nodes",
                node_labels.len()
            )));
        }
        let mut seen = HashSet::new();
        let mut canonical = Vec::new();
        for (u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::invalid(format!(
                    "edge ({u}, {v}) outside {num_nodes} nodes"
                )));
            }
            if u == v {
                return Err(Error::invalid(format!("self-loop on node {u}")));
            }
            let e = (u.min(v), u.max(v));
            if seen.insert(e) {
                canonical.push(e);
            }
        }
        Ok(Self {
            num_nodes,
            edges: canonical,
            node_labels,
            label,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn node_labels(&self) -> &[usize] {
        &self.node_labels
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.num_nodes];
        for &(u, v) in &self.edges {
            d[u] += 1;
            d[v] += 1;
        }
        d
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut check = perm.to_vec();
        check.sort_unstable();
        if check != (0..self.num_nodes).collect::<Vec<_>>() {
            return Err(Error::invalid("not a permutation of the node set"));
        }
        let mut labels = vec![0; self.num_nodes];
        for (old, &new) in perm.iter().enumerate() {
            labels[new] = self.node_labels[old];
        }
        Self::new(
            self.num_nodes,
            self.edges.iter().map(|&(u, v)| (perm[u], perm[v])),
            labels,
            self.label,
        )
    }

    /// Subgraph induced by `keep` (ascending), re-indexed in that order.
    pub fn induced(&self, keep: &[usize]) -> Result<Self> {
        let mut index = vec![usize::MAX; self.num_nodes];
        for (new, &old) in keep.iter().enumerate() {
            index[old] = new;
        }
        let edges = self.edges.iter().filter_map(|&(u, v)| {
            let (a, b) = (index[u], index[v]);
            (a != usize::MAX && b != usize::MAX).then_some((a, b))
        });
        Self::new(
            keep.len(),
            edges.collect::<Vec<_>>(),
            keep.iter().map(|&i| self.node_labels[i]).collect(),
            self.label,
        )
    }

    /// Same nodes and labels with a replacement edge list.
    pub fn with_edges(&self, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        Self::new(self.num_nodes, edges, self.node_labels.clone(), self.label)
    }
}

/// An ordered collection of graphs with contiguous label spaces.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphDataset {
    pub name: String,
    graphs: Vec<Graph>,
    num_node_label_classes: usize,
    num_graph_classes: usize,
}

impl GraphDataset {
    pub fn new(
        name: impl Into<String>,
        graphs: Vec<Graph>,
        num_node_label_classes: usize,
        num_graph_classes: usize,
    ) -> Result<Self> {
        for (i, g) in graphs.iter().enumerate() {
            if let Some(&l) = g.node_labels().iter().find(|&&l| l >= num_node_label_classes) {
                return Err(Error::invalid(format!(
                    "graph {i}: node label {l} >= {num_node_label_classes} classes"
                )));
            }
            if g.label() >= num_graph_classes {
                return Err(Error::invalid(format!(
                    "graph {i}: label {} >= {num_graph_classes} classes",
                    g.label()
                )));
            }
        }
        Ok(Self {
            name: name.into(),
            graphs,
            num_node_label_classes,
            num_graph_classes,
        })
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn num_node_label_classes(&self) -> usize {
        self.num_node_label_classes
    }

    pub fn num_graph_classes(&self) -> usize {
        self.num_graph_classes
    }

    pub fn labels(&self) -> Vec<usize> {
        self.graphs.iter().map(Graph::label).collect()
    }

    /// Dataset restricted to the given graph indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            name: self.name.clone(),
            graphs: indices.iter().map(|&i| self.graphs[i].clone()).collect(),
            num_node_label_classes: self.num_node_label_classes,
            num_graph_classes: self.num_graph_classes,
        }
    }
}

fn tu_file(dir: &Path, name: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{name}_{suffix}.txt"))
}

/// Locates the dataset prefix: the directory name if its files exist,
/// otherwise the prefix of the single `*_graph_indicator.txt` file.
fn dataset_name(dir: &Path) -> Result<String> {
    if let Some(base) = dir.file_name().and_then(|s| s.to_str()) {
        if tu_file(dir, base, "graph_indicator").exists() {
            return Ok(base.to_string());
        }
    }
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries.flatten() {
        let file = entry.file_name();
        if let Some(prefix) = file.to_str().and_then(|f| f.strip_suffix("_graph_indicator.txt")) {
            return Ok(prefix.to_string());
        }
    }
    let base = dir
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or("DS")
        .to_string();
    Err(Error::MissingFile(tu_file(dir, &base, "graph_indicator")))
}

fn read_records(path: &Path) -> Result<Vec<(usize, Vec<i64>)>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        if fields.is_empty() {
            continue;
        }
        let values = fields
            .iter()
            .map(|f| {
                f.parse::<i64>().map_err(|_| Error::Parse {
                    file: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("not an integer: {f:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push((i + 1, values));
    }
    Ok(out)
}

fn single_column(path: &Path) -> Result<Vec<(usize, i64)>> {
    read_records(path)?
        .into_iter()
        .map(|(line, v)| match v.as_slice() {
            [x] => Ok((line, *x)),
            _ => Err(Error::Parse {
                file: path.to_path_buf(),
                line,
                msg: format!("expected one value, got {}", v.len()),
            }),
        })
        .collect()
}

/// Maps raw values to contiguous classes in sorted order.
fn remap_sorted(values: &[i64]) -> (Vec<usize>, usize) {
    let uniq: Vec<i64> = values.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let mapped = values
        .iter()
        .map(|v| uniq.binary_search(v).expect("value is present"))
        .collect();
    (mapped, uniq.len())
}

/// Parses a dataset in the TU graph-classification text format.
///
/// Node ids become 0-based per-graph indices; graph labels and node labels
/// are remapped to contiguous classes in sorted order; self-loops and repeated
/// undirected edges are dropped. Without a node label file every node gets
/// label 0.
pub fn parse_tu_dataset(dir: impl AsRef<Path>) -> Result<GraphDataset> {
    let dir = dir.as_ref();
    let name = dataset_name(dir)?;
    let a_path = tu_file(dir, &name, "A");
    let ind_path = tu_file(dir, &name, "graph_indicator");
    let gl_path = tu_file(dir, &name, "graph_labels");
    let nl_path = tu_file(dir, &name, "node_labels");
    for p in [&a_path, &ind_path, &gl_path] {
        if !p.exists() {
            return Err(Error::MissingFile(p.clone()));
        }
    }

    let raw_graph_labels: Vec<i64> = single_column(&gl_path)?.into_iter().map(|(_, v)| v).collect();
    let num_graphs = raw_graph_labels.len();
    let (graph_labels, num_graph_classes) = remap_sorted(&raw_graph_labels);

    let indicator = single_column(&ind_path)?;
    let mut node_graph = Vec::with_capacity(indicator.len());
    let mut local = Vec::with_capacity(indicator.len());
    let mut counts = vec![0usize; num_graphs];
    for &(line, g) in &indicator {
        if g < 1 || g as usize > num_graphs {
            return Err(Error::Parse {
                file: ind_path.clone(),
                line,
                msg: format!("graph id {g} outside 1..={num_graphs}"),
            });
        }
        let g = g as usize - 1;
        node_graph.push(g);
        local.push(counts[g]);
        counts[g] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::invalid(format!(
            "graph {} has no nodes in {}",
            empty + 1,
            ind_path.display()
        )));
    }
    let num_nodes = node_graph.len();

    let (node_labels, num_node_classes) = if nl_path.exists() {
        let raw = single_column(&nl_path)?;
        if raw.len() != num_nodes {
            return Err(Error::Parse {
                file: nl_path.clone(),
                line: raw.len(),
                msg: format!("{} node labels for {num_nodes} nodes", raw.len()),
            });
        }
        let values: Vec<i64> = raw.into_iter().map(|(_, v)| v).collect();
        remap_sorted(&values)
    } else {
        (vec![0; num_nodes], 1)
    };

    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_graphs];
    for (line, rec) in read_records(&a_path)? {
        let [u, v] = rec.as_slice() else {
            return Err(Error::Parse {
                file: a_path.clone(),
                line,
                msg: format!("expected two node ids, got {}", rec.len()),
            });
        };
        let mut ends = [0usize; 2];
        for (slot, &id) in ends.iter_mut().zip([u, v]) {
            if id < 1 || id as usize > num_nodes {
                return Err(Error::Parse {
                    file: a_path.clone(),
                    line,
                    msg: format!("edge references unknown node {id} ({num_nodes} nodes)"),
                });
            }
            *slot = id as usize - 1;
        }
        let [a, b] = ends;
        if node_graph[a] != node_graph[b] {
            return Err(Error::Parse {
                file: a_path.clone(),
                line,
                msg: format!("edge ({u}, {v}) joins two different graphs"),
            });
        }
        if a != b {
            edges[node_graph[a]].push((local[a], local[b]));
        }
    }

    let mut labels_per_graph: Vec<Vec<usize>> = counts.iter().map(|&c| Vec::with_capacity(c)).collect();
    for (n, &g) in node_graph.iter().enumerate() {
        labels_per_graph[g].push(node_labels[n]);
    }
    let graphs = edges
        .into_iter()
        .zip(labels_per_graph)
        .zip(graph_labels)
        .enumerate()
        .map(|(i, ((e, nl), y))| {
            Graph::new(counts[i], e, nl, y)
                .map_err(|err| Error::invalid(format!("graph {}: {err}", i + 1)))
        })
        .collect::<Result<Vec<_>>>()?;
    GraphDataset::new(name, graphs, num_node_classes, num_graph_classes)
}

/// Writes `dataset` in TU format under `dir` using `name` as the file prefix.
/// Each undirected edge is written in both directions.
pub fn write_tu_dataset(dataset: &GraphDataset, dir: impl AsRef<Path>, name: &str) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut a = String::new();
    let mut ind = String::new();
    let mut nl = String::new();
    let mut gl = String::new();
    let mut offset = 0;
    for (gi, g) in dataset.graphs().iter().enumerate() {
        for &(u, v) in g.edges() {
            a.push_str(&format!("{}, {}\n", u + offset + 1, v + offset + 1));
            a.push_str(&format!("{}, {}\n", v + offset + 1, u + offset + 1));
        }
        for &l in g.node_labels() {
            ind.push_str(&format!("{}\n", gi + 1));
            nl.push_str(&format!("{l}\n"));
        }
        gl.push_str(&format!("{}\n", g.label()));
        offset += g.num_nodes();
    }
    for (suffix, body) in [("A", a), ("graph_indicator", ind), ("node_labels", nl), ("graph_labels", gl)] {
        let path = tu_file(dir, name, suffix);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, suffix: &str, body: &str) {
        fs::write(tu_file(dir, name, suffix), body).unwrap();
    }

    /// Triangle (nodes 1-3) and a single edge (nodes 4-5), with a self-loop
    /// and a duplicate thrown in.
    fn fixture(dir: &Path) {
        write(dir, "TOY", "A", "1, 2\n2, 1\n2, 3\n3, 1\n3, 3\n4, 5\n5, 4\n1, 2\n");
        write(dir, "TOY", "graph_indicator", "1\n1\n1\n2\n2\n");
        write(dir, "TOY", "graph_labels", "-1\n1\n");
        write(dir, "TOY", "node_labels", "0\n2\n2\n1\n0\n");
    }

    #[test]
    fn parses_hand_built_fixture() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("TOY");
        fs::create_dir(&dir).unwrap();
        fixture(&dir);
        let ds = parse_tu_dataset(&dir).unwrap();
        assert_eq!(ds.name, "TOY");
        let nodes: Vec<usize> = ds.graphs().iter().map(Graph::num_nodes).collect();
        let edges: Vec<usize> = ds.graphs().iter().map(Graph::num_edges).collect();
        assert_eq!(nodes, [3, 2]);
        assert_eq!(edges, [3, 1]);
        assert_eq!(ds.labels(), [0, 1]);
        assert_eq!(ds.num_graph_classes(), 2);
        assert_eq!(ds.num_node_label_classes(), 3);
        assert_eq!(ds.graphs()[1].node_labels(), &[1, 0]);
    }

    #[test]
    fn missing_node_labels_default_to_zero() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("TOY");
        fs::create_dir(&dir).unwrap();
        fixture(&dir);
        fs::remove_file(tu_file(&dir, "TOY", "node_labels")).unwrap();
        let ds = parse_tu_dataset(&dir).unwrap();
        assert_eq!(ds.num_node_label_classes(), 1);
        assert!(ds.graphs().iter().all(|g| g.node_labels().iter().all(|&l| l == 0)));
    }

    #[test]
    fn missing_mandatory_file_is_named() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("TOY");
        fs::create_dir(&dir).unwrap();
        fixture(&dir);
        fs::remove_file(tu_file(&dir, "TOY", "graph_labels")).unwrap();
        let err = parse_tu_dataset(&dir).unwrap_err();
        assert!(err.to_string().contains("TOY_graph_labels.txt"), "{err}");
    }

    #[test]
    fn edge_to_unknown_node_reports_line() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("TOY");
        fs::create_dir(&dir).unwrap();
        fixture(&dir);
        // Indicator lists 4 nodes, edge file still references node 5.
        write(&dir, "TOY", "graph_indicator", "1\n1\n1\n2\n");
        write(&dir, "TOY", "node_labels", "0\n0\n0\n0\n");
        let err = parse_tu_dataset(&dir).unwrap_err();
        match err {
            Error::Parse { line, ref msg, .. } => {
                assert_eq!(line, 6);
                assert!(msg.contains("unknown node 5"), "{msg}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn graph_without_nodes_is_an_error() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("TOY");
        fs::create_dir(&dir).unwrap();
        fixture(&dir);
        write(&dir, "TOY", "graph_labels", "-1\n1\n1\n");
        assert!(parse_tu_dataset(&dir).is_err());
    }

    #[test]
    fn graph_rejects_self_loops_and_bad_endpoints() {
        assert!(Graph::new(2, [(0, 0)], vec![0, 0], 0).is_err());
        assert!(Graph::new(2, [(0, 2)], vec![0, 0], 0).is_err());
        assert!(Graph::new(0, [], vec![], 0).is_err());
        let g = Graph::new(3, [(1, 0), (0, 1), (2, 1)], vec![0; 3], 0).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn permutation_preserves_degree_multiset() {
        let g = Graph::new(4, [(0, 1), (1, 2), (1, 3)], vec![0, 1, 2, 3], 1).unwrap();
        let p = g.permuted(&[3, 2, 1, 0]).unwrap();
        let mut a = g.degrees();
        let mut b = p.degrees();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
        assert_eq!(p.node_labels(), &[3, 2, 1, 0]);
        assert!(g.permuted(&[0, 0, 1, 2]).is_err());
    }
}
