//! Random forest regression from bagged CART trees.

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub mtry: usize,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 200,
            max_depth: 12,
            min_samples_leaf: 2,
            mtry: 3,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
        samples: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { value, .. } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[*feature] <= *threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            Node::Leaf { .. } => 1,
            Node::Split { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub params: ForestParams,
    pub n_features: usize,
    pub seed: u64,
    pub tree_seeds: Vec<u64>,
    pub trees: Vec<Node>,
}

struct Builder<'a> {
    x: &'a [&'a [f64]],
    y: &'a [f64],
    params: ForestParams,
    mtry: usize,
    tree_seed: u64,
}

impl Builder<'_> {
    fn leaf(&self, idx: &[usize]) -> Node {
        let value = idx.iter().map(|&i| self.y[i]).sum::<f64>() / idx.len() as f64;
        Node::Leaf {
            value,
            samples: idx.len(),
        }
    }

    fn build(&self, idx: &mut [usize], depth: usize, path: u64) -> Node {
        let n = idx.len();
        let first = self.y[idx[0]];
        if depth >= self.params.max_depth
            || n < 2 * self.params.min_samples_leaf
            || idx.iter().all(|&i| self.y[i] == first)
        {
            return self.leaf(idx);
        }
        let p = self.x[0].len();
        let mut rng = seed::rng_at(self.tree_seed, &[path]);
        let features = sample(&mut rng, p, self.mtry);

        let total: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let base = total * total / n as f64;
        let min_leaf = self.params.min_samples_leaf;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order = idx.to_vec();
        for f in features.iter() {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let mut left_sum = 0.0;
            for split in 1..n {
                left_sum += self.y[order[split - 1]];
                let lo = self.x[order[split - 1]][f];
                let hi = self.x[order[split]][f];
                if split < min_leaf || n - split < min_leaf || lo == hi {
                    continue;
                }
                let threshold = lo + (hi - lo) / 2.0;
                if !(threshold > lo && threshold < hi) {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / split as f64
                    + right_sum * right_sum / (n - split) as f64
                    - base;
                if best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, threshold));
                }
            }
        }
        let Some((gain, feature, threshold)) = best else {
            return self.leaf(idx);
        };
        if !(gain > 1e-12 * base.abs().max(1e-300)) {
            return self.leaf(idx);
        }
        let mut cut = 0;
        for i in 0..n {
            if self.x[idx[i]][feature] <= threshold {
                idx.swap(i, cut);
                cut += 1;
            }
        }
        let (l, r) = idx.split_at_mut(cut);
        let left = self.build(l, depth + 1, path * 2);
        let right = self.build(r, depth + 1, path * 2 + 1);
        Node::Split {
            feature,
            threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }
}

fn check_rows<R: AsRef<[f64]>>(x: &[R], width: Option<usize>) -> Result<usize> {
    let p = match width {
        Some(p) => p,
        None => x.first().map(|r| r.as_ref().len()).unwrap_or(0),
    };
    if let Some(r) = x.iter().find(|r| r.as_ref().len() != p) {
        return Err(Error::Shape(format!(
            "expected {p} features, got {}",
            r.as_ref().len()
        )));
    }
    Ok(p)
}

/// Rows used to grow tree `t` (the bootstrap draw, or every row).
pub fn bootstrap_indices(n: usize, params: &ForestParams, tree_seed: u64) -> Vec<usize> {
    if params.bootstrap {
        let mut rng = seed::rng_at(tree_seed, &[0]);
        (0..n).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    }
}

pub fn rfr_fit<R: AsRef<[f64]> + Sync>(
    x: &[R],
    y: &[f64],
    params: ForestParams,
    seed_value: u64,
    exec: Exec,
) -> Result<ForestModel> {
    if params.n_trees == 0 {
        return Err(Error::InvalidArgument("n_trees must be at least 1".into()));
    }
    if params.min_samples_leaf == 0 {
        return Err(Error::InvalidArgument("min_samples_leaf must be at least 1".into()));
    }
    if x.is_empty() {
        return Err(Error::EmptyDataset("forest training set"));
    }
    if y.len() != x.len() {
        return Err(Error::Shape(format!("{} rows but {} targets", x.len(), y.len())));
    }
    let p = check_rows(x, None)?;
    if p == 0 {
        return Err(Error::Shape("no features".into()));
    }
    let rows: Vec<&[f64]> = x.iter().map(|r| r.as_ref()).collect();
    let mtry = params.mtry.clamp(1, p);
    let tree_seeds: Vec<u64> = (0..params.n_trees as u64)
        .map(|t| seed::derive(seed_value, &[t]))
        .collect();
    let trees = exec.map(&tree_seeds, |_, &ts| {
        let mut idx = bootstrap_indices(x.len(), &params, ts);
        Builder {
            x: &rows,
            y,
            params,
            mtry,
            tree_seed: ts,
        }
        .build(&mut idx, 0, 1)
    });
    Ok(ForestModel {
        params,
        n_features: p,
        seed: seed_value,
        tree_seeds,
        trees,
    })
}

pub fn rfr_predict<R: AsRef<[f64]>>(m: &ForestModel, x: &[R]) -> Result<Vec<f64>> {
    check_rows(x, Some(m.n_features))?;
    Ok(x.iter()
        .map(|r| {
            let r = r.as_ref();
            m.trees.iter().map(|t| t.predict(r)).sum::<f64>() / m.trees.len() as f64
        })
        .collect())
}
