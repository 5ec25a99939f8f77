//! Exact-split gradient-boosted trees.
//!
//! Training rows with identical encoded features are merged into weighted
//! patterns before boosting. Within a pattern every row shares the same margin,
//! so the summed gradient and hessian of a pattern equal the sums over its rows
//! and the resulting trees are the same as on the expanded data.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Design, FeatureKind, FeatureSpec};

/// Minimum loss reduction for a split to be kept.
const MIN_SPLIT_GAIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    SquaredError,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub max_depth: usize,
    pub reg_lambda: f64,
    pub learning_rate: f64,
    pub min_child_weight: f64,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams {
            max_depth: 3,
            reg_lambda: 1.0,
            learning_rate: 0.3,
            min_child_weight: 1.0,
        }
    }
}

/// Maps a feature schema onto the numeric columns the trees split on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Encoder {
    pub(crate) schema: Vec<FeatureSpec>,
}

impl Encoder {
    pub(crate) fn new(schema: Vec<FeatureSpec>) -> Self {
        Encoder { schema }
    }

    pub(crate) fn encode(&self, design: &Design) -> Vec<Vec<f64>> {
        let mut cols = Vec::new();
        for f in design.features() {
            match f.spec.kind {
                FeatureKind::Categorical { levels } if levels > 2 => {
                    push_one_hot(&mut cols, &f.values, levels);
                }
                FeatureKind::Ordinal { levels } if levels > 2 => {
                    push_one_hot(&mut cols, &f.values, levels);
                    cols.push(f.values.clone());
                }
                _ => cols.push(f.values.clone()),
            }
        }
        cols
    }
}

fn push_one_hot(cols: &mut Vec<Vec<f64>>, codes: &[f64], levels: usize) {
    for level in 0..levels {
        let l = level as f64;
        cols.push(codes.iter().map(|&c| f64::from(u8::from(c == l))).collect());
    }
}

/// Deduplicated training rows with weighted target sums.
#[derive(Debug, Clone)]
pub(crate) struct PatternSet {
    pub(crate) cols: Vec<Vec<f64>>,
    pub(crate) weight: Vec<f64>,
    pub(crate) sum_y: Vec<f64>,
    pub(crate) sum_yy: Vec<f64>,
    sorted: Vec<Vec<u32>>,
}

impl PatternSet {
    pub(crate) fn build(
        encoded: &[Vec<f64>],
        n_rows: usize,
        targets: &[f64],
        weights: Option<&[f64]>,
        rows: Option<&[usize]>,
    ) -> Self {
        let n_cols = encoded.len();
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); n_cols];
        let mut weight = Vec::new();
        let mut sum_y = Vec::new();
        let mut sum_yy = Vec::new();
        let mut key = Vec::with_capacity(n_cols);
        let all: Vec<usize>;
        let rows = match rows {
            Some(r) => r,
            None => {
                all = (0..n_rows).collect();
                &all
            }
        };
        for &i in rows {
            key.clear();
            key.extend(encoded.iter().map(|c| c[i].to_bits()));
            let w = weights.map_or(1.0, |w| w[i]);
            let y = targets[i];
            let p = match index.get(&key) {
                Some(&p) => p,
                None => {
                    let p = weight.len();
                    index.insert(key.clone(), p);
                    for (c, col) in cols.iter_mut().enumerate() {
                        col.push(encoded[c][i]);
                    }
                    weight.push(0.0);
                    sum_y.push(0.0);
                    sum_yy.push(0.0);
                    p
                }
            };
            weight[p] += w;
            sum_y[p] += w * y;
            sum_yy[p] += w * y * y;
        }
        let sorted = cols
            .iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..col.len() as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
                idx
            })
            .collect();
        PatternSet {
            cols,
            weight,
            sum_y,
            sum_yy,
            sorted,
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.weight.len()
    }

    pub(crate) fn total_weight(&self) -> f64 {
        self.weight.iter().sum()
    }

    /// Weighted mean of squared error (or Brier score) for the given predictions.
    pub(crate) fn squared_error(&self, preds: &[f64]) -> f64 {
        let mut loss = 0.0;
        for p in 0..self.len() {
            let q = preds[p];
            loss += self.weight[p] * q * q - 2.0 * q * self.sum_y[p] + self.sum_yy[p];
        }
        (loss / self.total_weight()).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Node {
    feature: u32,
    threshold: f64,
    left: u32,
    right: u32,
    value: f64,
    leaf: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, cols: &[Vec<f64>], row: usize) -> f64 {
        let mut n = &self.nodes[0];
        while !n.leaf {
            n = if cols[n.feature as usize][row] < n.threshold {
                &self.nodes[n.left as usize]
            } else {
                &self.nodes[n.right as usize]
            };
        }
        n.value
    }

    #[cfg(test)]
    pub(crate) fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.leaf).count()
    }
}

#[derive(Clone, Copy)]
struct Scan {
    g: f64,
    h: f64,
    last: f64,
    seen: bool,
}

#[derive(Clone, Copy)]
struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

fn grow_tree(ps: &PatternSet, grad: &[f64], hess: &[f64], params: &BoostParams) -> Tree {
    let lambda = params.reg_lambda;
    let leaf_value = |g: f64, h: f64| -g / (h + lambda) * params.learning_rate;
    let n = ps.len();

    let (g0, h0) = (grad.iter().sum::<f64>(), hess.iter().sum::<f64>());
    let mut nodes = vec![Node {
        feature: 0,
        threshold: 0.0,
        left: 0,
        right: 0,
        value: leaf_value(g0, h0),
        leaf: true,
    }];
    // (arena id, G, H) for nodes open at the current depth
    let mut open: Vec<(usize, f64, f64)> = vec![(0, g0, h0)];
    let mut slot: Vec<u32> = vec![0; n];

    for _depth in 0..params.max_depth {
        if open.is_empty() {
            break;
        }
        let mut best: Vec<Option<Best>> = vec![None; open.len()];
        let mut scan = vec![
            Scan {
                g: 0.0,
                h: 0.0,
                last: 0.0,
                seen: false,
            };
            open.len()
        ];
        for (f, order) in ps.sorted.iter().enumerate() {
            let col = &ps.cols[f];
            scan.iter_mut().for_each(|s| {
                *s = Scan {
                    g: 0.0,
                    h: 0.0,
                    last: 0.0,
                    seen: false,
                }
            });
            for &p in order {
                let p = p as usize;
                let s = slot[p];
                if s == u32::MAX {
                    continue;
                }
                let s = s as usize;
                let v = col[p];
                let st = &mut scan[s];
                if st.seen && v > st.last {
                    let (_, g, h) = open[s];
                    let (gl, hl) = (st.g, st.h);
                    let (gr, hr) = (g - gl, h - hl);
                    if hl >= params.min_child_weight && hr >= params.min_child_weight {
                        let gain = 0.5
                            * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda)
                                - g * g / (h + lambda));
                        if gain > MIN_SPLIT_GAIN && best[s].map_or(true, |b| gain > b.gain) {
                            best[s] = Some(Best {
                                gain,
                                feature: f,
                                threshold: 0.5 * (st.last + v),
                            });
                        }
                    }
                }
                st.g += grad[p];
                st.h += hess[p];
                st.last = v;
                st.seen = true;
            }
        }

        // children: per open slot, (left slot, right slot) in the next level
        let mut next: Vec<(usize, f64, f64)> = Vec::new();
        let mut child_slots: Vec<Option<(u32, u32)>> = vec![None; open.len()];
        for (s, b) in best.iter().enumerate() {
            if let Some(b) = b {
                let id = open[s].0;
                let left = nodes.len();
                nodes.push(Node {
                    feature: 0,
                    threshold: 0.0,
                    left: 0,
                    right: 0,
                    value: 0.0,
                    leaf: true,
                });
                nodes.push(nodes[left].clone());
                let node = &mut nodes[id];
                node.leaf = false;
                node.feature = b.feature as u32;
                node.threshold = b.threshold;
                node.left = left as u32;
                node.right = (left + 1) as u32;
                child_slots[s] = Some((next.len() as u32, next.len() as u32 + 1));
                next.push((left, 0.0, 0.0));
                next.push((left + 1, 0.0, 0.0));
            }
        }
        for p in 0..n {
            let s = slot[p];
            if s == u32::MAX {
                continue;
            }
            match (child_slots[s as usize], best[s as usize]) {
                (Some((l, r)), Some(b)) => {
                    let c = if ps.cols[b.feature][p] < b.threshold {
                        l
                    } else {
                        r
                    };
                    slot[p] = c;
                    next[c as usize].1 += grad[p];
                    next[c as usize].2 += hess[p];
                }
                _ => slot[p] = u32::MAX,
            }
        }
        for &(id, g, h) in &next {
            nodes[id].value = leaf_value(g, h);
        }
        open = next;
    }
    Tree { nodes }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// A fitted ensemble: base margin plus a sum of trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Ensemble {
    pub(crate) encoder: Encoder,
    pub(crate) objective: Objective,
    pub(crate) base_margin: f64,
    pub(crate) trees: Vec<Tree>,
}

impl Ensemble {
    pub(crate) fn predict(&self, design: &Design) -> Vec<f64> {
        let cols = self.encoder.encode(design);
        (0..design.n_rows())
            .map(|i| {
                let m =
                    self.base_margin + self.trees.iter().map(|t| t.predict(&cols, i)).sum::<f64>();
                match self.objective {
                    Objective::SquaredError => m,
                    Objective::Logistic => sigmoid(m),
                }
            })
            .collect()
    }
}

/// Outcome of a boosting run.
pub(crate) struct BoostRun {
    pub(crate) base_margin: f64,
    pub(crate) trees: Vec<Tree>,
    /// Validation loss after each requested checkpoint (number of trees).
    pub(crate) checkpoint_loss: Vec<f64>,
    /// Training loss after each round, starting with the base margin.
    #[cfg_attr(not(test), allow(dead_code))]
    pub(crate) train_curve: Vec<f64>,
}

pub(crate) fn base_margin(objective: Objective, ps: &PatternSet) -> f64 {
    let mean = ps.sum_y.iter().sum::<f64>() / ps.total_weight();
    match objective {
        Objective::SquaredError => mean,
        Objective::Logistic => {
            let p = mean.clamp(1e-6, 1.0 - 1e-6);
            (p / (1.0 - p)).ln()
        }
    }
}

/// Boost `n_trees` rounds, reporting validation loss at each checkpoint.
pub(crate) fn boost(
    objective: Objective,
    params: &BoostParams,
    train: &PatternSet,
    valid: Option<&PatternSet>,
    n_trees: usize,
    checkpoints: &[usize],
    record_curve: bool,
) -> BoostRun {
    let base = base_margin(objective, train);
    let mut margin = vec![base; train.len()];
    let mut vmargin = valid.map(|v| vec![base; v.len()]);
    let mut grad = vec![0.0; train.len()];
    let mut hess = vec![0.0; train.len()];
    let mut trees = Vec::with_capacity(n_trees);
    let mut checkpoint_loss = Vec::new();
    let mut train_curve = Vec::new();

    let link = |m: f64| match objective {
        Objective::SquaredError => m,
        Objective::Logistic => sigmoid(m),
    };
    let loss_of = |ps: &PatternSet, m: &[f64]| {
        let preds: Vec<f64> = m.iter().map(|&m| link(m)).collect();
        ps.squared_error(&preds)
    };
    if record_curve {
        train_curve.push(loss_of(train, &margin));
    }
    if checkpoints.contains(&0) {
        if let (Some(v), Some(vm)) = (valid, vmargin.as_ref()) {
            checkpoint_loss.push(loss_of(v, vm));
        }
    }

    for round in 1..=n_trees {
        for p in 0..train.len() {
            let w = train.weight[p];
            match objective {
                Objective::SquaredError => {
                    grad[p] = w * margin[p] - train.sum_y[p];
                    hess[p] = w;
                }
                Objective::Logistic => {
                    let q = sigmoid(margin[p]);
                    grad[p] = w * q - train.sum_y[p];
                    hess[p] = w * q * (1.0 - q);
                }
            }
        }
        let tree = grow_tree(train, &grad, &hess, params);
        for (p, m) in margin.iter_mut().enumerate() {
            *m += tree.predict(&train.cols, p);
        }
        if let (Some(v), Some(vm)) = (valid, vmargin.as_mut()) {
            for (p, m) in vm.iter_mut().enumerate() {
                *m += tree.predict(&v.cols, p);
            }
        }
        trees.push(tree);
        if record_curve {
            train_curve.push(loss_of(train, &margin));
        }
        if checkpoints.contains(&round) {
            if let (Some(v), Some(vm)) = (valid, vmargin.as_ref()) {
                checkpoint_loss.push(loss_of(v, vm));
            }
        }
    }
    BoostRun {
        base_margin: base,
        trees,
        checkpoint_loss,
        train_curve,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::Feature;

    fn patterns(x: &[f64], y: &[f64]) -> (Encoder, PatternSet) {
        let d = Design::new(vec![Feature::real("x", x.to_vec())]).unwrap();
        let enc = Encoder::new(d.schema());
        let cols = enc.encode(&d);
        let ps = PatternSet::build(&cols, x.len(), y, None, None);
        (enc, ps)
    }

    #[test]
    fn duplicate_rows_merge_into_patterns() {
        let (_, ps) = patterns(&[1.0, 1.0, 2.0], &[3.0, 5.0, 7.0]);
        assert_eq!(ps.len(), 2);
        assert_eq!(ps.weight, vec![2.0, 1.0]);
        assert_eq!(ps.sum_y, vec![8.0, 7.0]);
        assert_eq!(ps.sum_yy, vec![34.0, 49.0]);
    }

    #[test]
    fn single_split_separates_two_groups() {
        let x: Vec<f64> = (0..20).map(|i| f64::from(i >= 10)).collect();
        let y: Vec<f64> = x.iter().map(|v| 10.0 * v).collect();
        let (_, ps) = patterns(&x, &y);
        let params = BoostParams {
            max_depth: 1,
            reg_lambda: 0.0,
            learning_rate: 1.0,
            min_child_weight: 1.0,
        };
        let run = boost(Objective::SquaredError, &params, &ps, None, 1, &[], true);
        assert_eq!(run.trees[0].n_leaves(), 2);
        assert!(run.train_curve[1] < 1e-20);
    }

    #[test]
    fn one_hot_encoding_expands_wide_categoricals() {
        let d = Design::new(vec![
            Feature::categorical("c", 3, vec![0.0, 1.0, 2.0]),
            Feature::ordinal("o", 3, vec![2.0, 1.0, 0.0]),
            Feature::categorical("b", 2, vec![0.0, 1.0, 1.0]),
        ])
        .unwrap();
        let cols = Encoder::new(d.schema()).encode(&d);
        assert_eq!(cols.len(), 3 + 4 + 1);
        assert_eq!(cols[0], vec![1.0, 0.0, 0.0]);
        assert_eq!(cols[6], vec![2.0, 1.0, 0.0]);
    }
}
