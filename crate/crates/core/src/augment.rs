//! Stochastic graph transformations used to produce contrastive views.

use std::collections::HashSet;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_batch, Graph, GraphBatch};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentationKind {
    NodeDrop,
    EdgePerturb,
    AttributeMask,
    Subgraph,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationSpec {
    pub kind: AugmentationKind,
    pub ratio: f64,
}

impl AugmentationSpec {
    pub fn new(kind: AugmentationKind, ratio: f64) -> Result<Self> {
        let spec = Self { kind, ratio };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        check_ratio(self.ratio)?;
        if self.kind == AugmentationKind::Subgraph && self.ratio == 0.0 {
            return Err(Error::invalid("subgraph ratio must be in (0, 1]"));
        }
        Ok(())
    }

    pub fn apply<R: Rng + ?Sized>(&self, g: &Graph, rng: &mut R) -> Result<AugmentedGraph> {
        Ok(match self.kind {
            AugmentationKind::NodeDrop => AugmentedGraph::plain(node_drop(g, self.ratio, rng)?),
            AugmentationKind::EdgePerturb => {
                AugmentedGraph::plain(edge_perturb(g, self.ratio, rng)?)
            }
            AugmentationKind::Subgraph => {
                AugmentedGraph::plain(subgraph_sample(g, self.ratio, rng)?)
            }
            AugmentationKind::AttributeMask => AugmentedGraph {
                masked: attribute_mask(g, self.ratio, rng)?,
                graph: g.clone(),
            },
        })
    }
}

/// A transformed graph plus the set of nodes whose features are masked.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedGraph {
    pub graph: Graph,
    pub masked: Vec<bool>,
}

impl AugmentedGraph {
    pub fn plain(graph: Graph) -> Self {
        let masked = vec![false; graph.num_nodes()];
        Self { graph, masked }
    }
}

/// Two views of the same source graph.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewPair {
    pub view1: AugmentedGraph,
    pub view2: AugmentedGraph,
    pub spec1: AugmentationSpec,
    pub spec2: AugmentationSpec,
}

/// Batches augmented views; masked nodes get uniform feature rows.
pub fn to_view_batch(views: &[&AugmentedGraph], classes: usize) -> Result<GraphBatch> {
    build_batch(
        views.iter().map(|v| (&v.graph, Some(v.masked.as_slice()))),
        classes,
    )
}

fn check_ratio(ratio: f64) -> Result<()> {
    if (0.0..=1.0).contains(&ratio) {
        Ok(())
    } else {
        Err(Error::invalid(format!("ratio {ratio} outside [0, 1]")))
    }
}

// A hair of slack so that products like 0.29 * 100 do not floor to 28.
fn floor_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64) + 1e-9).floor() as usize
}

fn ceil_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64) - 1e-9).ceil().max(1.0) as usize
}

/// Removes `floor(ratio * n)` uniformly chosen nodes (keeping at least one)
/// together with their incident edges.
pub fn node_drop<R: Rng + ?Sized>(g: &Graph, ratio: f64, rng: &mut R) -> Result<Graph> {
    check_ratio(ratio)?;
    let n = g.num_nodes();
    let drop = floor_count(ratio, n).min(n - 1);
    if drop == 0 {
        return Ok(g.clone());
    }
    let mut dropped = vec![false; n];
    for i in index::sample(rng, n, drop) {
        dropped[i] = true;
    }
    let keep: Vec<usize> = (0..n).filter(|&i| !dropped[i]).collect();
    g.induced(&keep)
}

/// Removes `floor(ratio * |E|)` existing edges and adds as many pairs that
/// were not edges of the original graph, as far as such pairs exist.
pub fn edge_perturb<R: Rng + ?Sized>(g: &Graph, ratio: f64, rng: &mut R) -> Result<Graph> {
    check_ratio(ratio)?;
    let m = g.num_edges();
    let k = floor_count(ratio, m);
    if k == 0 {
        return Ok(g.clone());
    }
    let mut removed = vec![false; m];
    for i in index::sample(rng, m, k) {
        removed[i] = true;
    }
    let mut edges: Vec<(usize, usize)> = g
        .edges()
        .iter()
        .zip(&removed)
        .filter(|(_, &r)| !r)
        .map(|(&e, _)| e)
        .collect();

    let n = g.num_nodes();
    let pairs = n * (n - 1) / 2;
    let free = pairs - m;
    let add = k.min(free);
    if add > 0 {
        let existing: HashSet<(usize, usize)> = g.edges().iter().copied().collect();
        if free <= 4 * add || pairs <= 4096 {
            let candidates: Vec<(usize, usize)> = (0..n)
                .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
                .filter(|e| !existing.contains(e))
                .collect();
            edges.extend(index::sample(rng, candidates.len(), add).into_iter().map(|i| candidates[i]));
        } else {
            let mut taken = HashSet::with_capacity(add);
            while taken.len() < add {
                let u = rng.gen_range(0..n);
                let v = rng.gen_range(0..n);
                let e = (u.min(v), u.max(v));
                if u != v && !existing.contains(&e) && taken.insert(e) {
                    edges.push(e);
                }
            }
        }
    }
    g.with_edges(edges)
}

/// Picks `floor(ratio * n)` nodes whose features get masked.
pub fn attribute_mask<R: Rng + ?Sized>(g: &Graph, ratio: f64, rng: &mut R) -> Result<Vec<bool>> {
    check_ratio(ratio)?;
    let n = g.num_nodes();
    let k = floor_count(ratio, n).min(n);
    let mut masked = vec![false; n];
    if k > 0 {
        for i in index::sample(rng, n, k) {
            masked[i] = true;
        }
    }
    Ok(masked)
}

/// Induced subgraph on `ceil(ratio * n)` nodes collected by a random walk
/// from a uniform start node. If the walk stalls for `10 * n` steps the
/// remainder is filled with uniformly chosen unvisited nodes.
pub fn subgraph_sample<R: Rng + ?Sized>(g: &Graph, ratio: f64, rng: &mut R) -> Result<Graph> {
    check_ratio(ratio)?;
    if ratio == 0.0 {
        return Err(Error::invalid("subgraph ratio must be in (0, 1]"));
    }
    let n = g.num_nodes();
    let target = ceil_count(ratio, n).min(n);
    let mut adj = vec![Vec::new(); n];
    for &(u, v) in g.edges() {
        adj[u].push(v);
        adj[v].push(u);
    }
    let mut visited = vec![false; n];
    let mut count = 1;
    let mut cur = rng.gen_range(0..n);
    visited[cur] = true;
    let mut steps = 0;
    while count < target && steps < 10 * n {
        steps += 1;
        if adj[cur].is_empty() {
            continue;
        }
        cur = adj[cur][rng.gen_range(0..adj[cur].len())];
        if !visited[cur] {
            visited[cur] = true;
            count += 1;
        }
    }
    if count < target {
        let rest: Vec<usize> = (0..n).filter(|&i| !visited[i]).collect();
        for i in index::sample(rng, rest.len(), target - count) {
            visited[rest[i]] = true;
        }
    }
    let keep: Vec<usize> = (0..n).filter(|&i| visited[i]).collect();
    g.induced(&keep)
}

/// Draws two augmentations independently from `family` and applies them.
pub fn sample_view_pair<R: Rng + ?Sized>(
    g: &Graph,
    family: &[AugmentationSpec],
    rng: &mut R,
) -> Result<ViewPair> {
    if family.is_empty() {
        return Err(Error::invalid("augmentation family is empty"));
    }
    let spec1 = family[rng.gen_range(0..family.len())];
    let view1 = spec1.apply(g, rng)?;
    let spec2 = family[rng.gen_range(0..family.len())];
    let view2 = spec2.apply(g, rng)?;
    Ok(ViewPair {
        view1,
        view2,
        spec1,
        spec2,
    })
}
