//! Random forest of axis-aligned regression trees.
//!
//! Every node draws its feature order from its own generator, seeded from its
//! parent, so a tree grown to depth `d` is exactly the unlimited tree cut at
//! depth `d`. Tuning exploits this: one unlimited forest answers every
//! `(n_trees, max_depth)` grid point through [`RfrModel::predict_with`].

use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_xy, ModelError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfrOptions {
    pub n_trees: usize,
    /// `None` grows until leaves are pure.
    pub max_depth: Option<usize>,
    pub seed: u64,
    /// Resample rows with replacement for each tree.
    pub bootstrap: bool,
}

impl Default for RfrOptions {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            seed: 0,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Split {
    feature: usize,
    threshold: f64,
    left: usize,
    right: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Node {
    /// Mean target of the rows reaching this node.
    value: f64,
    split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64], max_depth: Option<usize>) -> f64 {
        let mut node = &self.nodes[0];
        let mut depth = 0;
        while let Some(s) = &node.split {
            if max_depth.is_some_and(|d| depth >= d) {
                break;
            }
            node = &self.nodes[if x[s.feature] <= s.threshold { s.left } else { s.right }];
            depth += 1;
        }
        node.value
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i].split {
                Some(s) => 1 + walk(nodes, s.left).max(walk(nodes, s.right)),
                None => 0,
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfrModel {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub seed: u64,
    pub bootstrap: bool,
    /// Features considered per split.
    pub max_features: usize,
    trees: Vec<Tree>,
}

impl RfrModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.predict_with(x, self.trees.len(), self.max_depth)
    }

    /// Mean over the first `n_trees` trees, each cut at `max_depth`.
    pub fn predict_with(&self, x: &[f64], n_trees: usize, max_depth: Option<usize>) -> f64 {
        let n = n_trees.clamp(1, self.trees.len());
        self.trees[..n].iter().map(|t| t.predict(x, max_depth)).sum::<f64>() / n as f64
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }
}

pub fn fit_rfr(x: &[Vec<f64>], y: &[f64], opts: &RfrOptions) -> Result<RfrModel, ModelError> {
    let d = check_xy(x, y, 2)?;
    if opts.n_trees == 0 {
        return Err(ModelError::InvalidHyperparameter("n_trees must be at least 1".into()));
    }
    if opts.max_depth == Some(0) {
        return Err(ModelError::InvalidHyperparameter("max_depth must be at least 1".into()));
    }
    if d == 0 {
        return Err(ModelError::InvalidHyperparameter("no features".into()));
    }
    let max_features = d.div_ceil(3);
    let n = x.len();
    let trees = (0..opts.n_trees)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(t as u64);
            let rows: Vec<usize> = if opts.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut grower = Grower {
                x,
                y,
                max_depth: opts.max_depth,
                max_features,
                nodes: Vec::new(),
            };
            grower.grow(rows, 0, rng.next_u64());
            Tree { nodes: grower.nodes }
        })
        .collect();
    Ok(RfrModel {
        n_trees: opts.n_trees,
        max_depth: opts.max_depth,
        seed: opts.seed,
        bootstrap: opts.bootstrap,
        max_features,
        trees,
    })
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    max_depth: Option<usize>,
    max_features: usize,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize, key: u64) -> usize {
        let id = self.nodes.len();
        let value = rows.iter().map(|&r| self.y[r]).sum::<f64>() / rows.len() as f64;
        self.nodes.push(Node { value, split: None });
        let first = self.y[rows[0]];
        if rows.len() < 2 || self.max_depth.is_some_and(|d| depth >= d) || rows.iter().all(|&r| self.y[r] == first) {
            return id;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let d = self.x[0].len();
        let order = sample(&mut rng, d, d).into_vec();
        let (candidates, rest) = order.split_at(self.max_features.min(d));
        let best = self.best_split(&rows, candidates).or_else(|| self.best_split(&rows, rest));
        let Some((feature, threshold)) = best else {
            return id;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&r| self.x[r][feature] <= threshold);
        let (left_key, right_key) = (rng.next_u64(), rng.next_u64());
        let left = self.grow(left_rows, depth + 1, left_key);
        let right = self.grow(right_rows, depth + 1, right_key);
        self.nodes[id].split = Some(Split {
            feature,
            threshold,
            left,
            right,
        });
        id
    }

    /// Split with the largest reduction in squared error among `features`;
    /// `None` when every candidate feature is constant on `rows`.
    fn best_split(&self, rows: &[usize], features: &[usize]) -> Option<(usize, f64)> {
        let total: f64 = rows.iter().map(|&r| self.y[r]).sum();
        let n = rows.len() as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(rows.len());
        for &f in features {
            pairs.clear();
            pairs.extend(rows.iter().map(|&r| (self.x[r][f], self.y[r])));
            pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            for k in 0..pairs.len() - 1 {
                left_sum += pairs[k].1;
                let (lo, hi) = (pairs[k].0, pairs[k + 1].0);
                if lo == hi {
                    continue;
                }
                let nl = (k + 1) as f64;
                let nr = n - nl;
                let right_sum = total - left_sum;
                // maximizing this is minimizing the children's squared error
                let score = left_sum * left_sum / nl + right_sum * right_sum / nr;
                if best.is_none_or(|(s, _, _)| score > s) {
                    let mid = 0.5 * (lo + hi);
                    let threshold = if mid < hi { mid } else { lo };
                    best = Some((score, f, threshold));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_data(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let y = x
            .iter()
            .map(|r| if r[0] > 0.5 { 3.0 } else { 1.0 } + 0.2 * rng.random_range(-1.0..1.0))
            .collect();
        (x, y)
    }

    #[test]
    fn lookup_tree_reproduces_training_targets() {
        let (x, y) = step_data(80, 1);
        let m = fit_rfr(&x, &y, &RfrOptions { n_trees: 1, bootstrap: false, ..RfrOptions::default() }).unwrap();
        for (r, t) in x.iter().zip(&y) {
            assert_eq!(m.predict(r), *t);
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let (x, y) = step_data(60, 2);
        let opts = RfrOptions { n_trees: 20, seed: 7, ..RfrOptions::default() };
        let a = fit_rfr(&x, &y, &opts).unwrap();
        let b = fit_rfr(&x, &y, &opts).unwrap();
        assert_eq!(a, b);
        let c = fit_rfr(&x, &y, &RfrOptions { seed: 8, ..opts }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn depth_limit_equals_truncation() {
        let (x, y) = step_data(60, 3);
        let full = fit_rfr(&x, &y, &RfrOptions { n_trees: 30, seed: 4, ..RfrOptions::default() }).unwrap();
        for depth in [1, 2, 4] {
            let cut = fit_rfr(&x, &y, &RfrOptions { n_trees: 10, max_depth: Some(depth), seed: 4, bootstrap: true }).unwrap();
            assert!(cut.trees().iter().all(|t| t.depth() <= depth));
            for r in &x {
                assert_eq!(cut.predict(r), full.predict_with(r, 10, Some(depth)));
            }
        }
    }

    #[test]
    fn beats_constant_on_step_target() {
        let (x, y) = step_data(500, 5);
        let (tx, ty) = step_data(500, 6);
        let m = fit_rfr(&x, &y, &RfrOptions { n_trees: 50, seed: 1, ..RfrOptions::default() }).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let rmse = |p: &dyn Fn(&[f64]) -> f64| {
            (tx.iter().zip(&ty).map(|(r, t)| (p(r) - t).powi(2)).sum::<f64>() / ty.len() as f64).sqrt()
        };
        let forest = rmse(&|r| m.predict(r));
        let constant = rmse(&|_| mean);
        assert!(forest <= 0.5 * constant, "{forest} vs {constant}");
    }

    #[test]
    fn rejects_degenerate_options() {
        let (x, y) = step_data(10, 7);
        assert!(fit_rfr(&x, &y, &RfrOptions { n_trees: 0, ..RfrOptions::default() }).is_err());
        assert!(fit_rfr(&x[..1], &y[..1], &RfrOptions::default()).is_err());
    }
}
