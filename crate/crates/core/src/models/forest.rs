//! Random forest of class-weighted Gini trees grown on bootstrap samples.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{check_training_set, Matrix, ModelError};
use crate::config::PipelineConfig;
use crate::ingest::BinaryLabel;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    pub min_samples_split: usize,
    pub max_features: usize,
}

impl ForestParams {
    pub fn from_config(c: &PipelineConfig) -> Self {
        ForestParams {
            n_trees: c.n_trees,
            min_samples_split: c.min_samples_split,
            max_features: c.max_features,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Leaf {
        /// Class-weighted fraction of stress rows reaching this leaf.
        stress: f64,
        n_samples: u32,
    },
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
        n_samples: u32,
    },
}

impl Node {
    pub fn n_samples(&self) -> u32 {
        match *self {
            Node::Leaf { n_samples, .. } | Node::Split { n_samples, .. } => n_samples,
        }
    }
}

/// Nodes in preorder; the root is `nodes[0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// True when the tree votes stress for `row`.
    pub fn votes_stress(&self, row: &[f64]) -> bool {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                Node::Leaf { stress, .. } => return stress > 0.5,
                Node::Split { feature, threshold, left, right, .. } => {
                    k = if row[feature as usize] <= threshold { left } else { right } as usize;
                }
            }
        }
    }

    pub fn validate(&self, n_inputs: usize) -> Result<(), ModelError> {
        let n = self.nodes.len();
        if n == 0 {
            return Err(ModelError::Format("empty tree".into()));
        }
        for (k, node) in self.nodes.iter().enumerate() {
            if let Node::Split { feature, left, right, .. } = *node {
                // Preorder children always follow their parent, which rules out cycles.
                if feature as usize >= n_inputs || left as usize <= k || right as usize <= k || left as usize >= n || right as usize >= n {
                    return Err(ModelError::Format(format!("bad split node {k}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub n_inputs: usize,
    pub trees: Vec<Tree>,
}

impl ForestModel {
    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn stress_votes(&self, row: &[f64]) -> usize {
        self.trees.iter().filter(|t| t.votes_stress(row)).count()
    }
}

struct Grower<'a> {
    x: &'a Matrix,
    y: &'a [BinaryLabel],
    weights: [f64; 2],
    p: &'a ForestParams,
    nodes: Vec<Node>,
}

fn gini(w: [f64; 2]) -> f64 {
    let t = w[0] + w[1];
    if t <= 0.0 {
        return 0.0;
    }
    1.0 - (w[0] / t).powi(2) - (w[1] / t).powi(2)
}

impl Grower<'_> {
    fn class_mass(&self, rows: &[usize]) -> [f64; 2] {
        let mut m = [0.0; 2];
        for &i in rows {
            let c = self.y[i].index();
            m[c] += self.weights[c];
        }
        m
    }

    /// Best `(feature, threshold, gain)` among up to `max_features` random
    /// non-constant features. Constant features do not count toward the quota.
    fn best_split(&self, rows: &[usize], rng: &mut ChaCha8Rng) -> Option<(usize, f64, f64)> {
        let mass = self.class_mass(rows);
        let total = mass[0] + mass[1];
        let parent = gini(mass);
        let mut features: Vec<usize> = (0..self.x.cols()).collect();
        features.shuffle(rng);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut visited = 0;
        let mut sorted: Vec<(f64, usize)> = Vec::with_capacity(rows.len());
        for f in features {
            if visited == self.p.max_features {
                break;
            }
            sorted.clear();
            sorted.extend(rows.iter().map(|&i| (self.x.row(i)[f], self.y[i].index())));
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            if sorted[0].0 == sorted[sorted.len() - 1].0 {
                continue;
            }
            visited += 1;
            let mut left = [0.0; 2];
            for k in 0..sorted.len() - 1 {
                let (v, c) = sorted[k];
                left[c] += self.weights[c];
                let next = sorted[k + 1].0;
                if next == v {
                    continue;
                }
                let right = [mass[0] - left[0], mass[1] - left[1]];
                let wl = left[0] + left[1];
                let child = (wl * gini(left) + (total - wl) * gini(right)) / total;
                let gain = parent - child;
                if best.is_none_or(|(_, _, g)| gain > g) {
                    let mut t = 0.5 * (v + next);
                    // Midpoint can round up onto `next` for adjacent floats.
                    if t >= next {
                        t = v;
                    }
                    best = Some((f, t, gain));
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: Vec<usize>, rng: &mut ChaCha8Rng) -> u32 {
        let id = self.nodes.len() as u32;
        let mass = self.class_mass(&rows);
        let leaf = Node::Leaf { stress: mass[1] / (mass[0] + mass[1]), n_samples: rows.len() as u32 };
        self.nodes.push(leaf);
        if rows.len() < self.p.min_samples_split || mass[0] == 0.0 || mass[1] == 0.0 {
            return id;
        }
        let Some((feature, threshold, _)) = self.best_split(&rows, rng) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x.row(i)[feature] <= threshold);
        let left = self.grow(l, rng);
        let right = self.grow(r, rng);
        self.nodes[id as usize] = Node::Split {
            feature: feature as u32,
            threshold,
            left,
            right,
            n_samples: rows.len() as u32,
        };
        id
    }
}

/// Grows one tree on the given (possibly repeated) row indices.
pub fn grow_tree(
    x: &Matrix,
    y: &[BinaryLabel],
    weights: [f64; 2],
    rows: Vec<usize>,
    p: &ForestParams,
    rng: &mut ChaCha8Rng,
) -> Tree {
    let mut g = Grower { x, y, weights, p, nodes: Vec::new() };
    g.grow(rows, rng);
    Tree { nodes: g.nodes }
}

pub fn train(x: &Matrix, y: &[BinaryLabel], p: &ForestParams, seed: u64) -> Result<ForestModel, ModelError> {
    let weights = check_training_set(x, y)?;
    let n = x.rows();
    let trees = (0..p.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::rng(seed, &["rfc", "tree", &t.to_string()]);
            let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            grow_tree(x, y, weights, rows, p, &mut rng)
        })
        .collect();
    Ok(ForestModel { n_inputs: x.cols(), trees })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use BinaryLabel::*;

    fn blobs(n: usize, seed: u64) -> (Matrix, Vec<BinaryLabel>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let s = i % 2 == 1;
            let c = if s { 1.0 } else { -1.0 };
            rows.push([c + rng.gen_range(-0.8..0.8), rng.gen_range(-1.0..1.0), c * 0.5 + rng.gen_range(-1.0..1.0)]);
            y.push(if s { Stress } else { NoStress });
        }
        (Matrix::from_rows(&rows), y)
    }

    fn params() -> ForestParams {
        ForestParams { n_trees: 100, min_samples_split: 20, max_features: 2 }
    }

    #[test]
    fn fits_training_set() {
        let (x, y) = blobs(200, 1);
        let m = train(&x, &y, &params(), 3).unwrap();
        assert_eq!(m.trees.len(), 100);
        let correct = (0..x.rows())
            .filter(|&i| (2 * m.stress_votes(x.row(i)) > 100) == (y[i] == Stress))
            .count();
        assert!(correct as f64 / 200.0 >= 0.95, "{correct}");
    }

    #[test]
    fn small_nodes_are_leaves() {
        let (x, y) = blobs(200, 2);
        let m = train(&x, &y, &params(), 5).unwrap();
        for t in &m.trees {
            t.validate(3).unwrap();
            for node in &t.nodes {
                if let Node::Split { n_samples, .. } = node {
                    assert!(*n_samples >= 20);
                }
            }
        }
        let (x, y) = blobs(19, 3);
        let t = grow_tree(&x, &y, [1.0, 1.0], (0..19).collect(), &params(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(t.nodes.len(), 1);
    }

    #[test]
    fn tree_order_does_not_matter() {
        let (x, y) = blobs(120, 4);
        let m = train(&x, &y, &params(), 8).unwrap();
        let mut rev = m.clone();
        rev.trees.reverse();
        for i in 0..x.rows() {
            assert_eq!(m.stress_votes(x.row(i)), rev.stress_votes(x.row(i)));
        }
    }

    #[test]
    fn deterministic() {
        let (x, y) = blobs(100, 5);
        assert_eq!(train(&x, &y, &params(), 1).unwrap(), train(&x, &y, &params(), 1).unwrap());
        assert_ne!(train(&x, &y, &params(), 1).unwrap(), train(&x, &y, &params(), 2).unwrap());
    }

    #[test]
    fn weighted_gini() {
        assert_eq!(gini([1.0, 0.0]), 0.0);
        assert!((gini([2.0, 2.0]) - 0.5).abs() < 1e-15);
        // Ten no-stress rows against two stress rows weighted 5x balance out.
        assert!((gini([10.0 * 0.6, 2.0 * 3.0]) - 0.5).abs() < 1e-15);
    }
}
