use rand::seq::SliceRandom;
use rand::Rng;

/// A regression tree node. Rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        value: f64,
    },
}

impl TreeNode {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split { feature, threshold, left, right } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => 1 + left.node_count() + right.node_count(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

pub(crate) struct GrowParams {
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub features_per_split: usize,
}

pub(crate) struct Grower<'a, R> {
    pub x: &'a [Vec<f64>],
    pub y: &'a [f64],
    pub params: &'a GrowParams,
    pub rng: R,
    /// SSE reduction credited to each feature.
    pub importance: Vec<f64>,
}

struct Best {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl<R: Rng> Grower<'_, R> {
    pub fn grow(&mut self, rows: &mut [usize], depth: usize) -> TreeNode {
        let (lo, hi, sum) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY, 0.0), |(lo, hi, s), &i| {
            let v = self.y[i];
            (lo.min(v), hi.max(v), s + v)
        });
        let n = rows.len();
        if lo == hi {
            return TreeNode::Leaf { value: lo };
        }
        let leaf = TreeNode::Leaf { value: (sum / n as f64).clamp(lo, hi) };
        if self.params.max_depth.is_some_and(|d| depth >= d) || n < 2 * self.params.min_samples_leaf {
            return leaf;
        }
        let Some(best) = self.best_split(rows, sum) else {
            return leaf;
        };
        self.importance[best.feature] += best.gain;
        let mid = partition(rows, |&i| self.x[i][best.feature] <= best.threshold);
        let (l, r) = rows.split_at_mut(mid);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        TreeNode::Split { feature: best.feature, threshold: best.threshold, left: Box::new(left), right: Box::new(right) }
    }

    /// Best variance-reducing split over a random subset of features. If the
    /// subset admits no valid split the remaining features are tried in turn.
    fn best_split(&mut self, rows: &[usize], total: f64) -> Option<Best> {
        let n_features = self.x.first().map_or(0, Vec::len);
        let mut order: Vec<usize> = (0..n_features).collect();
        order.shuffle(&mut self.rng);
        let mut best: Option<Best> = None;
        let mut sorted: Vec<(f64, f64)> = Vec::with_capacity(rows.len());
        for (visited, &feature) in order.iter().enumerate() {
            if visited >= self.params.features_per_split && best.is_some() {
                break;
            }
            sorted.clear();
            sorted.extend(rows.iter().map(|&i| (self.x[i][feature], self.y[i])));
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            if let Some(cand) = scan_feature(&sorted, total, self.params.min_samples_leaf) {
                if best.as_ref().is_none_or(|b| cand.1 > b.gain) {
                    best = Some(Best { feature, threshold: cand.0, gain: cand.1 });
                }
            }
        }
        best
    }
}

/// Best `(threshold, SSE reduction)` over the midpoints between consecutive
/// distinct values of `sorted` (pairs of feature value and target).
fn scan_feature(sorted: &[(f64, f64)], total: f64, min_leaf: usize) -> Option<(f64, f64)> {
    let n = sorted.len();
    let base = total * total / n as f64;
    let mut left_sum = 0.0;
    let mut best: Option<(f64, f64)> = None;
    for k in 1..n {
        left_sum += sorted[k - 1].1;
        let (a, b) = (sorted[k - 1].0, sorted[k].0);
        if a == b || k < min_leaf || n - k < min_leaf {
            continue;
        }
        let right_sum = total - left_sum;
        let gain = left_sum * left_sum / k as f64 + right_sum * right_sum / (n - k) as f64 - base;
        if gain > 0.0 && best.is_none_or(|(_, g)| gain > g) {
            let mid = 0.5 * (a + b);
            // Adjacent floats: the midpoint may round up onto `b`.
            let threshold = if mid < b { mid } else { a };
            best = Some((threshold, gain));
        }
    }
    best
}

/// Stable-enough in-place partition; returns the number of rows satisfying `pred`.
fn partition(rows: &mut [usize], pred: impl Fn(&usize) -> bool) -> usize {
    let mut mid = 0;
    for i in 0..rows.len() {
        if pred(&rows[i]) {
            rows.swap(mid, i);
            mid += 1;
        }
    }
    mid
}
