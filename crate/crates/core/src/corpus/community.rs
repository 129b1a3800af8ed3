//! Modularity and Louvain community detection on the undirected simple
//! projection of the user graph (direction and relation ignored, unit weights).

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, Dataset};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommunityPartition {
    pub assignment: BTreeMap<String, usize>,
    pub modularity: f64,
    /// Modularity after each local-move + aggregation level.
    pub pass_modularity: Vec<f64>,
}

impl CommunityPartition {
    pub fn community_count(&self) -> usize {
        self.assignment.values().collect::<BTreeSet<_>>().len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LouvainConfig {
    pub resolution: f64,
    pub max_levels: usize,
    pub max_sweeps: usize,
}

impl Default for LouvainConfig {
    fn default() -> Self {
        Self {
            resolution: 1.0,
            max_levels: 32,
            max_sweeps: 100,
        }
    }
}

/// Unique undirected pairs `(i, j)` with `i < j`.
pub fn undirected_pairs(dataset: &Dataset) -> Vec<(usize, usize)> {
    let set: BTreeSet<(usize, usize)> = dataset
        .indexed_edges()
        .into_iter()
        .map(|(s, d, _)| (s.min(d), s.max(d)))
        .collect();
    set.into_iter().collect()
}

/// `Q = sum_c (e_c / m - gamma (a_c / 2m)^2)` over a node-index labelling.
pub fn modularity_of_labels(
    n: usize,
    pairs: &[(usize, usize)],
    labels: &[usize],
    resolution: f64,
) -> f64 {
    let m = pairs.len() as f64;
    if pairs.is_empty() {
        return 0.0;
    }
    let k = labels.iter().copied().max().map_or(0, |x| x + 1);
    let mut inside = vec![0.0; k];
    let mut degree = vec![0.0; k];
    let mut node_deg = vec![0.0; n];
    for &(i, j) in pairs {
        node_deg[i] += 1.0;
        node_deg[j] += 1.0;
        if labels[i] == labels[j] {
            inside[labels[i]] += 1.0;
        }
    }
    for i in 0..n {
        degree[labels[i]] += node_deg[i];
    }
    (0..k)
        .map(|c| inside[c] / m - resolution * (degree[c] / (2.0 * m)).powi(2))
        .sum()
}

pub fn modularity(dataset: &Dataset, partition: &BTreeMap<String, usize>) -> Result<f64, CorpusError> {
    let mut labels = Vec::with_capacity(dataset.len());
    for u in dataset.users() {
        let &c = partition
            .get(&u.id)
            .ok_or_else(|| CorpusError::UncoveredUser(u.id.clone()))?;
        labels.push(c);
    }
    let compact = compact_labels(&labels);
    Ok(modularity_of_labels(
        dataset.len(),
        &undirected_pairs(dataset),
        &compact,
        1.0,
    ))
}

/// Relabels to `0..k` in order of first appearance.
fn compact_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

/// Weighted undirected graph with self-loops, as produced by aggregation.
struct WeightedGraph {
    adj: Vec<Vec<(usize, f64)>>,
    self_loop: Vec<f64>,
    degree: Vec<f64>,
    total: f64,
}

impl WeightedGraph {
    fn from_pairs(n: usize, pairs: &[(usize, usize)]) -> Self {
        let mut adj = vec![Vec::new(); n];
        for &(i, j) in pairs {
            adj[i].push((j, 1.0));
            adj[j].push((i, 1.0));
        }
        Self::finish(adj, vec![0.0; n])
    }

    fn finish(adj: Vec<Vec<(usize, f64)>>, self_loop: Vec<f64>) -> Self {
        let degree: Vec<f64> = adj
            .iter()
            .zip(&self_loop)
            .map(|(a, s)| a.iter().map(|e| e.1).sum::<f64>() + 2.0 * s)
            .collect();
        let total = degree.iter().sum::<f64>() / 2.0;
        Self {
            adj,
            self_loop,
            degree,
            total,
        }
    }

    fn len(&self) -> usize {
        self.adj.len()
    }

    fn aggregate(&self, labels: &[usize], k: usize) -> Self {
        let mut weights: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); k];
        let mut self_loop = vec![0.0; k];
        for i in 0..self.len() {
            let ci = labels[i];
            self_loop[ci] += self.self_loop[i];
            for &(j, w) in &self.adj[i] {
                let cj = labels[j];
                if ci == cj {
                    // each internal edge is seen from both ends
                    self_loop[ci] += w / 2.0;
                } else {
                    *weights[ci].entry(cj).or_insert(0.0) += w;
                }
            }
        }
        let adj = weights.into_iter().map(|m| m.into_iter().collect()).collect();
        Self::finish(adj, self_loop)
    }
}

/// One level of local moves. Returns the labelling and whether anything moved.
fn local_moves(
    g: &WeightedGraph,
    resolution: f64,
    max_sweeps: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, bool) {
    let n = g.len();
    let two_m = 2.0 * g.total;
    let mut labels: Vec<usize> = (0..n).collect();
    let mut tot: Vec<f64> = g.degree.clone();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut moved_any = false;
    for _ in 0..max_sweeps {
        let mut moved = false;
        for &i in &order {
            let ki = g.degree[i];
            let own = labels[i];
            let mut links: BTreeMap<usize, f64> = BTreeMap::new();
            for &(j, w) in &g.adj[i] {
                *links.entry(labels[j]).or_insert(0.0) += w;
            }
            tot[own] -= ki;
            let gain = |c: usize, w: f64| w - resolution * tot[c] * ki / two_m;
            let mut best = own;
            let mut best_gain = gain(own, links.get(&own).copied().unwrap_or(0.0));
            for (&c, &w) in &links {
                let gc = gain(c, w);
                if gc > best_gain + 1e-12 {
                    best = c;
                    best_gain = gc;
                }
            }
            tot[best] += ki;
            if best != own {
                labels[i] = best;
                moved = true;
                moved_any = true;
            }
        }
        if !moved {
            break;
        }
    }
    (labels, moved_any)
}

/// Louvain: repeated local moves and aggregation until no node moves.
pub fn detect_communities(
    dataset: &Dataset,
    seed: u64,
    config: &LouvainConfig,
) -> Result<CommunityPartition, CorpusError> {
    if dataset.is_empty() {
        return Err(CorpusError::InvalidArgument("empty graph".into()));
    }
    let n = dataset.len();
    let pairs = undirected_pairs(dataset);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut membership: Vec<usize> = (0..n).collect();
    let mut graph = WeightedGraph::from_pairs(n, &pairs);
    let mut pass_modularity = vec![modularity_of_labels(n, &pairs, &membership, config.resolution)];
    if !pairs.is_empty() {
        for _ in 0..config.max_levels {
            let (labels, moved) = local_moves(&graph, config.resolution, config.max_sweeps, &mut rng);
            if !moved {
                break;
            }
            let labels = compact_labels(&labels);
            let k = labels.iter().max().map_or(0, |x| x + 1);
            for m in membership.iter_mut() {
                *m = labels[*m];
            }
            pass_modularity.push(modularity_of_labels(n, &pairs, &membership, config.resolution));
            graph = graph.aggregate(&labels, k);
        }
    }
    let membership = compact_labels(&membership);
    let assignment = dataset
        .users()
        .iter()
        .zip(&membership)
        .map(|(u, &c)| (u.id.clone(), c))
        .collect();
    Ok(CommunityPartition {
        assignment,
        modularity: *pass_modularity.last().expect("at least the singleton pass"),
        pass_modularity,
    })
}
