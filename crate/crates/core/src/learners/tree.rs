//! Weighted CART regression trees and bagged forests.

use rayon::prelude::*;

use crate::matrix::Matrix;
use crate::rng::{self, DmlRng};

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// A fitted regression tree. Rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct TreeParams {
    pub max_depth: Option<usize>,
    /// Minimum total (bootstrap-count) weight in each child.
    pub min_leaf: usize,
    /// Features tried per split; `>= p` means all of them, with no draw.
    pub mtry: usize,
}

/// Column-major copy of the features plus, for each feature, the row order
/// sorted by value (ties by row index). Shared by every tree of a forest.
pub(crate) struct Presorted {
    n: usize,
    p: usize,
    xc: Vec<f64>,
    order: Vec<Vec<u32>>,
}

impl Presorted {
    pub fn new(x: &Matrix) -> Self {
        let n = x.nrows();
        let p = x.ncols();
        let mut xc = vec![0.0; n * p];
        for i in 0..n {
            for (f, &v) in x.row(i).iter().enumerate() {
                xc[f * n + i] = v;
            }
        }
        let order = (0..p)
            .map(|f| {
                let col = &xc[f * n..(f + 1) * n];
                let mut idx: Vec<u32> = (0..n as u32).collect();
                idx.sort_by(|&a, &b| {
                    col[a as usize]
                        .total_cmp(&col[b as usize])
                        .then(a.cmp(&b))
                });
                idx
            })
            .collect();
        Self { n, p, xc, order }
    }

    #[inline]
    fn x(&self, f: usize, i: usize) -> f64 {
        self.xc[f * self.n + i]
    }
}

struct Builder<'a> {
    data: &'a Presorted,
    y: &'a [f64],
    w: &'a [f64],
    params: TreeParams,
    /// one segment-partitioned index array per feature
    sorted: Vec<Vec<u32>>,
    goes_left: Vec<bool>,
    scratch: Vec<u32>,
    nodes: Vec<Node>,
}

struct Work {
    node: usize,
    start: usize,
    end: usize,
    depth: usize,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl<'a> Builder<'a> {
    fn node_stats(&self, start: usize, end: usize) -> (f64, f64, bool) {
        // any feature's segment lists the node's rows; with p = 0 there are none,
        // so callers handle that case through `all_rows`
        let rows = &self.sorted[0][start..end];
        let mut wsum = 0.0;
        let mut wy = 0.0;
        let first = self.y[rows[0] as usize];
        let mut pure = true;
        for &i in rows {
            let i = i as usize;
            wsum += self.w[i];
            wy += self.w[i] * self.y[i];
            pure &= self.y[i] == first;
        }
        (wsum, wy / wsum, pure)
    }

    fn best_split(
        &self,
        start: usize,
        end: usize,
        wsum: f64,
        mean: f64,
        features: &[usize],
    ) -> Option<BestSplit> {
        let min_leaf = self.params.min_leaf as f64;
        let mut best: Option<BestSplit> = None;
        for &f in features {
            let seg = &self.sorted[f][start..end];
            let mut wl = 0.0;
            let mut sl = 0.0;
            for pos in 0..seg.len() - 1 {
                let i = seg[pos] as usize;
                wl += self.w[i];
                sl += self.w[i] * (self.y[i] - mean);
                let xi = self.data.x(f, i);
                let xn = self.data.x(f, seg[pos + 1] as usize);
                if xn <= xi {
                    continue;
                }
                let wr = wsum - wl;
                if wl < min_leaf || wr < min_leaf {
                    continue;
                }
                // centred sums: S_R = -S_L, so the SSE reduction is S_L^2 (1/W_L + 1/W_R)
                let gain = sl * sl * (1.0 / wl + 1.0 / wr);
                if gain > best.as_ref().map_or(0.0, |b| b.gain) {
                    let mut threshold = 0.5 * (xi + xn);
                    if threshold >= xn {
                        threshold = xi;
                    }
                    best = Some(BestSplit {
                        gain,
                        feature: f,
                        threshold,
                    });
                }
            }
        }
        best
    }

    fn partition(&mut self, start: usize, end: usize, split: &BestSplit) -> usize {
        for &i in &self.sorted[split.feature][start..end] {
            let i = i as usize;
            self.goes_left[i] = self.data.x(split.feature, i) <= split.threshold;
        }
        let mut n_left = 0;
        for f in 0..self.data.p {
            let seg = &mut self.sorted[f][start..end];
            self.scratch.clear();
            let mut l = 0;
            for k in 0..seg.len() {
                let i = seg[k];
                if self.goes_left[i as usize] {
                    seg[l] = i;
                    l += 1;
                } else {
                    self.scratch.push(i);
                }
            }
            seg[l..].copy_from_slice(&self.scratch);
            n_left = l;
        }
        start + n_left
    }

    fn build(mut self, rng: &mut DmlRng) -> Tree {
        let m = self.sorted[0].len();
        self.nodes.push(Node::Leaf(0.0));
        let mut stack = vec![Work {
            node: 0,
            start: 0,
            end: m,
            depth: 0,
        }];
        let all: Vec<usize> = (0..self.data.p).collect();
        while let Some(work) = stack.pop() {
            let (wsum, mean, pure) = self.node_stats(work.start, work.end);
            let depth_ok = self.params.max_depth.is_none_or(|d| work.depth < d);
            let splittable = depth_ok && !pure && wsum >= 2.0 * self.params.min_leaf as f64;
            let split = if splittable {
                let features = if self.params.mtry >= self.data.p {
                    all.clone()
                } else {
                    rng::sample_without_replacement(rng, self.data.p, self.params.mtry)
                };
                self.best_split(work.start, work.end, wsum, mean, &features)
            } else {
                None
            };
            match split {
                None => self.nodes[work.node] = Node::Leaf(mean),
                Some(split) => {
                    let mid = self.partition(work.start, work.end, &split);
                    let left = self.nodes.len();
                    self.nodes.push(Node::Leaf(0.0));
                    self.nodes.push(Node::Leaf(0.0));
                    self.nodes[work.node] = Node::Split {
                        feature: split.feature,
                        threshold: split.threshold,
                        left,
                        right: left + 1,
                    };
                    // right pushed first so the left subtree is built first
                    stack.push(Work {
                        node: left + 1,
                        start: mid,
                        end: work.end,
                        depth: work.depth + 1,
                    });
                    stack.push(Work {
                        node: left,
                        start: work.start,
                        end: mid,
                        depth: work.depth + 1,
                    });
                }
            }
        }
        Tree { nodes: self.nodes }
    }
}

/// Grows one tree on the rows with positive weight.
pub(crate) fn grow(
    data: &Presorted,
    y: &[f64],
    w: &[f64],
    params: TreeParams,
    rng: &mut DmlRng,
) -> Tree {
    if data.p == 0 {
        let wsum: f64 = w.iter().sum();
        let wy: f64 = w.iter().zip(y).map(|(a, b)| a * b).sum();
        return Tree {
            nodes: vec![Node::Leaf(wy / wsum)],
        };
    }
    let sorted: Vec<Vec<u32>> = data
        .order
        .iter()
        .map(|o| o.iter().copied().filter(|&i| w[i as usize] > 0.0).collect())
        .collect();
    let builder = Builder {
        data,
        y,
        w,
        params,
        sorted,
        goes_left: vec![false; data.n],
        scratch: Vec::new(),
        nodes: Vec::new(),
    };
    builder.build(rng)
}

/// Bootstrap counts: `n` draws with replacement from `0..n`.
pub(crate) fn bootstrap_counts(rng: &mut DmlRng, n: usize) -> Vec<f64> {
    let mut w = vec![0.0; n];
    for _ in 0..n {
        w[rng::below_inclusive(rng, n - 1)] += 1.0;
    }
    w
}

pub(crate) fn fit_tree(x: &Matrix, y: &[f64], params: TreeParams, seed: u64) -> Tree {
    let data = Presorted::new(x);
    let w = vec![1.0; y.len()];
    grow(&data, y, &w, params, &mut rng::stream(seed))
}

/// Tree `t` uses the stream `seed ^ t` for both its bootstrap draw and its
/// feature subsets, so the ensemble does not depend on scheduling.
pub(crate) fn fit_forest(
    x: &Matrix,
    y: &[f64],
    params: TreeParams,
    n_trees: usize,
    bootstrap: bool,
    seed: u64,
) -> Vec<Tree> {
    let data = Presorted::new(x);
    let n = y.len();
    (0..n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(seed ^ t as u64);
            let w = if bootstrap {
                bootstrap_counts(&mut rng, n)
            } else {
                vec![1.0; n]
            };
            grow(&data, y, &w, params, &mut rng)
        })
        .collect()
}
