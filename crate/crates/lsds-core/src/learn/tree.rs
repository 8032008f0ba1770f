//! Axis-aligned decision trees, the shared core of both ensembles.
//!
//! Splits are chosen greedily: at each node a random subset of feature
//! columns is considered, candidate thresholds are the midpoints between
//! consecutive distinct sorted values, and the split minimizing the
//! weighted child impurity wins (Gini for classification targets,
//! summed squared error for regression targets). A sample goes left when
//! `x[feature] <= threshold`. Ties keep the earliest candidate, so tree
//! growth is fully deterministic given the node's feature order.

use super::Matrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Node of a grown tree. Child references index into the tree's node
/// vector; leaves carry the mean target of their training samples.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        value: f64,
        n: u32,
    },
}

/// A grown decision tree. Node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

/// Split-quality criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    /// Binary Gini impurity; targets must be 0 or 1.
    Gini,
    /// Summed squared error around the child mean.
    Variance,
}

/// Structural limits for growth.
#[derive(Debug, Clone, Copy)]
pub struct GrowParams {
    pub max_depth: usize,
    pub max_features: usize,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
}

impl Tree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn from_nodes(nodes: Vec<Node>) -> Self {
        Self { nodes }
    }

    /// Index of the leaf the sample lands in.
    pub fn apply(&self, x: &[f64]) -> usize {
        let mut idx = 0usize;
        loop {
            match &self.nodes[idx] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if x[*feature] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
                Node::Leaf { .. } => return idx,
            }
        }
    }

    /// Leaf value for the sample.
    pub fn predict(&self, x: &[f64]) -> f64 {
        match &self.nodes[self.apply(x)] {
            Node::Leaf { value, .. } => *value,
            Node::Split { .. } => unreachable!("apply returns a leaf"),
        }
    }

    /// Overwrites one leaf's value; boosting installs Newton steps here.
    pub fn set_leaf_value(&mut self, node: usize, value: f64) {
        match &mut self.nodes[node] {
            Node::Leaf { value: v, .. } => *v = value,
            Node::Split { .. } => panic!("node {node} is not a leaf"),
        }
    }

    /// Longest root-to-leaf path, in edges.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], idx: usize) -> usize {
            match &nodes[idx] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => {
                    1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }

    /// Smallest training-sample count over all leaves.
    pub fn min_leaf_count(&self) -> u32 {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf { n, .. } => Some(*n),
                _ => None,
            })
            .min()
            .unwrap_or(0)
    }
}

/// Grows one tree on the rows of `x` selected by `indices`.
///
/// `rng` drives only the per-node feature subsample; with
/// `max_features >= x.cols()` every column is still considered, in
/// shuffled order, which does not change the chosen split because
/// candidates are compared by (impurity, feature index, threshold) with
/// the feature index restored to column order.
pub fn grow_tree(
    x: &Matrix,
    y: &[f64],
    indices: &mut [u32],
    p: &GrowParams,
    criterion: Criterion,
    rng: &mut ChaCha8Rng,
) -> Tree {
    debug_assert_eq!(x.rows(), y.len());
    let mut builder = Builder {
        x,
        y,
        p,
        criterion,
        nodes: Vec::new(),
        scratch: Vec::new(),
        feature_pool: (0..x.cols()).collect(),
    };
    builder.grow(indices, 0, rng);
    Tree {
        nodes: builder.nodes,
    }
}

struct Builder<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    p: &'a GrowParams,
    criterion: Criterion,
    nodes: Vec<Node>,
    scratch: Vec<(f64, f64)>,
    feature_pool: Vec<usize>,
}

struct BestSplit {
    impurity: f64,
    feature: usize,
    threshold: f64,
}

impl<'a> Builder<'a> {
    fn leaf(&mut self, indices: &[u32]) -> u32 {
        let sum: f64 = indices.iter().map(|&i| self.y[i as usize]).sum();
        let id = self.nodes.len() as u32;
        self.nodes.push(Node::Leaf {
            value: sum / indices.len() as f64,
            n: indices.len() as u32,
        });
        id
    }

    fn grow(&mut self, indices: &mut [u32], depth: usize, rng: &mut ChaCha8Rng) -> u32 {
        let n = indices.len();
        let pure = {
            let first = self.y[indices[0] as usize];
            indices.iter().all(|&i| self.y[i as usize] == first)
        };
        if depth >= self.p.max_depth
            || n < self.p.min_samples_split
            || n < 2 * self.p.min_samples_leaf
            || pure
        {
            return self.leaf(indices);
        }

        let k = self.p.max_features.min(self.x.cols());
        // Partial Fisher-Yates: the first k entries of the pool become the
        // candidate features for this node.
        for i in 0..k {
            let j = rng.gen_range(i..self.feature_pool.len());
            self.feature_pool.swap(i, j);
        }
        let mut candidates: Vec<usize> = self.feature_pool[..k].to_vec();
        // Column order makes the tie rule independent of the shuffle.
        candidates.sort_unstable();

        let mut best: Option<BestSplit> = None;
        for &f in &candidates {
            self.scratch.clear();
            self.scratch
                .extend(indices.iter().map(|&i| (self.x.get(i as usize, f), self.y[i as usize])));
            self.scratch
                .sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            if let Some((imp, thr)) = self.best_threshold() {
                let better = match &best {
                    None => true,
                    Some(b) => imp < b.impurity,
                };
                if better {
                    best = Some(BestSplit {
                        impurity: imp,
                        feature: f,
                        threshold: thr,
                    });
                }
            }
        }

        let Some(split) = best else {
            return self.leaf(indices);
        };

        // Stable partition keeps each side in the node's original order.
        let mut left: Vec<u32> = Vec::with_capacity(n);
        let mut right: Vec<u32> = Vec::with_capacity(n);
        for &i in indices.iter() {
            if self.x.get(i as usize, split.feature) <= split.threshold {
                left.push(i);
            } else {
                right.push(i);
            }
        }
        debug_assert!(left.len() >= self.p.min_samples_leaf);
        debug_assert!(right.len() >= self.p.min_samples_leaf);
        indices[..left.len()].copy_from_slice(&left);
        indices[left.len()..].copy_from_slice(&right);

        let id = self.nodes.len() as u32;
        self.nodes.push(Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: 0,
            right: 0,
        });
        let (l, r) = indices.split_at_mut(left.len());
        let left_id = self.grow(l, depth + 1, rng);
        let right_id = self.grow(r, depth + 1, rng);
        match &mut self.nodes[id as usize] {
            Node::Split { left, right, .. } => {
                *left = left_id;
                *right = right_id;
            }
            Node::Leaf { .. } => unreachable!(),
        }
        id
    }

    /// Scans the sorted scratch pairs for the best midpoint threshold.
    /// Returns (weighted child impurity, threshold), or None when no
    /// split satisfies the leaf minimum or all values are equal.
    fn best_threshold(&self) -> Option<(f64, f64)> {
        let s = &self.scratch;
        let n = s.len();
        let min_leaf = self.p.min_samples_leaf;
        let total: f64 = s.iter().map(|p| p.1).sum();
        let total_sq: f64 = s.iter().map(|p| p.1 * p.1).sum();

        let mut left_sum = 0.0;
        let mut left_sq = 0.0;
        let mut best: Option<(f64, f64)> = None;
        for j in 1..n {
            let (xv, yv) = s[j - 1];
            left_sum += yv;
            left_sq += yv * yv;
            if s[j].0 <= xv {
                continue; // not a boundary between distinct values
            }
            if j < min_leaf || n - j < min_leaf {
                continue;
            }
            let nl = j as f64;
            let nr = (n - j) as f64;
            let imp = match self.criterion {
                Criterion::Gini => {
                    // Child Gini scaled by child count: 2 * s * (n - s) / n.
                    let sl = left_sum;
                    let sr = total - left_sum;
                    2.0 * sl * (nl - sl) / nl + 2.0 * sr * (nr - sr) / nr
                }
                Criterion::Variance => {
                    // Summed squared error around each child mean.
                    let sse_l = left_sq - left_sum * left_sum / nl;
                    let sse_r = (total_sq - left_sq) - (total - left_sum) * (total - left_sum) / nr;
                    sse_l + sse_r
                }
            };
            let improves = match best {
                None => true,
                Some((b, _)) => imp < b,
            };
            if improves {
                best = Some((imp, xv.midpoint(s[j].0)));
            }
        }
        // Zero-gain splits are kept: on symmetric targets the gain only
        // appears one level deeper, and the node was already known to be
        // non-pure.
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn grow(
        rows: &[Vec<f64>],
        y: &[f64],
        p: GrowParams,
        criterion: Criterion,
        seed: u64,
    ) -> Tree {
        let x = Matrix::from_rows(rows).unwrap();
        let mut idx: Vec<u32> = (0..rows.len() as u32).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        grow_tree(&x, y, &mut idx, &p, criterion, &mut rng)
    }

    fn loose(max_depth: usize) -> GrowParams {
        GrowParams {
            max_depth,
            max_features: usize::MAX,
            min_samples_leaf: 1,
            min_samples_split: 2,
        }
    }

    #[test]
    fn separable_pair_is_split_at_midpoint() {
        let rows = vec![vec![0.0], vec![1.0]];
        let y = vec![0.0, 1.0];
        let t = grow(&rows, &y, loose(1), Criterion::Gini, 0);
        assert_eq!(t.predict(&[0.0]), 0.0);
        assert_eq!(t.predict(&[1.0]), 1.0);
        match &t.nodes()[0] {
            Node::Split { threshold, .. } => assert_eq!(*threshold, 0.5),
            other => panic!("expected split at root, got {other:?}"),
        }
    }

    #[test]
    fn pure_node_becomes_leaf() {
        let rows = vec![vec![0.0], vec![1.0], vec![2.0]];
        let y = vec![1.0, 1.0, 1.0];
        let t = grow(&rows, &y, loose(5), Criterion::Gini, 0);
        assert_eq!(t.nodes().len(), 1);
        assert_eq!(t.predict(&[7.0]), 1.0);
    }

    #[test]
    fn depth_and_leaf_bounds_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let rows: Vec<Vec<f64>> = (0..300)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| if r[0] * r[1] + r[2] > 0.0 { 1.0 } else { 0.0 })
            .collect();
        let p = GrowParams {
            max_depth: 4,
            max_features: 2,
            min_samples_leaf: 7,
            min_samples_split: 20,
        };
        let t = grow(&rows, &y, p, Criterion::Gini, 9);
        assert!(t.depth() <= 4);
        assert!(t.min_leaf_count() >= 7);
    }

    #[test]
    fn variance_split_recovers_step_function() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..20).map(|i| if i < 12 { -1.0 } else { 3.0 }).collect();
        let t = grow(&rows, &y, loose(1), Criterion::Variance, 0);
        match &t.nodes()[0] {
            Node::Split { threshold, .. } => assert_eq!(*threshold, 11.5),
            other => panic!("expected split, got {other:?}"),
        }
        assert_eq!(t.predict(&[0.0]), -1.0);
        assert_eq!(t.predict(&[19.0]), 3.0);
    }

    #[test]
    fn growth_is_deterministic_per_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..5).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        let y: Vec<f64> = rows.iter().map(|r| if r[2] > 0.5 { 1.0 } else { 0.0 }).collect();
        let p = GrowParams {
            max_depth: 6,
            max_features: 2,
            min_samples_leaf: 3,
            min_samples_split: 6,
        };
        let a = grow(&rows, &y, p, Criterion::Gini, 7);
        let b = grow(&rows, &y, p, Criterion::Gini, 7);
        assert_eq!(a, b);
        let c = grow(&rows, &y, p, Criterion::Gini, 8);
        // A different seed may legitimately grow the same tree on easy
        // data; this data has enough correlated columns that it does not.
        assert_ne!(a, c);
    }

    #[test]
    fn no_split_between_equal_values() {
        // Feature is constant: the tree must stay a single leaf.
        let rows = vec![vec![2.0]; 10];
        let y: Vec<f64> = (0..10).map(|i| (i % 2) as f64).collect();
        let t = grow(&rows, &y, loose(3), Criterion::Gini, 0);
        assert_eq!(t.nodes().len(), 1);
        assert_eq!(t.predict(&[2.0]), 0.5);
    }

    #[test]
    fn apply_returns_leaf_and_set_leaf_value_overwrites() {
        let rows = vec![vec![0.0], vec![1.0]];
        let y = vec![0.0, 1.0];
        let mut t = grow(&rows, &y, loose(1), Criterion::Variance, 0);
        let leaf = t.apply(&[0.9]);
        t.set_leaf_value(leaf, 42.0);
        assert_eq!(t.predict(&[0.9]), 42.0);
    }
}
