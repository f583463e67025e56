use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{GrowParams, Grower, TreeNode};
use super::{FeatureVector, Sample};
use crate::error::{Error, Result};

const FORMAT_HEADER: &str = "gridsec-forest v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Features drawn per node; `None` means `max(1, n_features / 3)`.
    pub features_per_split: Option<usize>,
    /// Grow each tree on a bootstrap resample. Disable to fit every tree on
    /// the full training set.
    pub bootstrap: bool,
    /// Give every tree the same random stream (testing aid: all trees
    /// become identical).
    pub same_seed_per_tree: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: None,
            min_samples_leaf: 1,
            features_per_split: None,
            bootstrap: true,
            same_seed_per_tree: false,
        }
    }
}

impl ForestParams {
    pub fn resolved_features_per_split(&self, n_features: usize) -> usize {
        self.features_per_split.unwrap_or((n_features / 3).max(1))
    }

    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("n_trees must be at least 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::Config("min_samples_leaf must be at least 1".into()));
        }
        let m = self.resolved_features_per_split(n_features);
        if m == 0 || m > n_features {
            return Err(Error::Config(format!("features_per_split {m} outside [1, {n_features}]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub feature_names: Vec<String>,
    pub trees: Vec<TreeNode>,
    pub params: ForestParams,
    pub seed: u64,
    /// Share of total variance reduction per feature, in `feature_names` order.
    pub importance: Vec<f64>,
    /// No split reduced variance anywhere; `importance` is uniform.
    pub importance_degenerate: bool,
}

fn tree_rng(seed: u64, index: usize, same: bool) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(if same { 0 } else { index as u64 });
    rng
}

/// Train a bagged regression forest. Trees are grown in parallel, each from
/// its own random stream, so the model does not depend on the thread count.
pub fn train_forest(train: &[Sample], params: &ForestParams, seed: u64) -> Result<ForestModel> {
    let first = train.first().ok_or_else(|| Error::Domain("training set is empty".into()))?;
    let feature_names: Vec<String> = first.features.keys().cloned().collect();
    if feature_names.is_empty() {
        return Err(Error::Domain("samples carry no features".into()));
    }
    if let Some(bad) = feature_names.iter().find(|f| f.is_empty() || f.contains(char::is_whitespace)) {
        return Err(Error::Domain(format!("feature name {bad:?} must be non-empty without whitespace")));
    }
    params.validate(feature_names.len())?;
    let mut x = Vec::with_capacity(train.len());
    let mut y = Vec::with_capacity(train.len());
    for s in train {
        x.push(feature_row(&feature_names, &s.features)?);
        if s.features.len() != feature_names.len() {
            return Err(Error::Domain("samples carry different feature sets".into()));
        }
        if !s.target.is_finite() {
            return Err(Error::Domain("targets must be finite".into()));
        }
        y.push(s.target);
    }

    let grow = GrowParams {
        max_depth: params.max_depth,
        min_samples_leaf: params.min_samples_leaf,
        features_per_split: params.resolved_features_per_split(feature_names.len()),
    };
    let n = y.len();
    let grown: Vec<(TreeNode, Vec<f64>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(seed, t, params.same_seed_per_tree);
            let mut rows: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut grower = Grower { x: &x, y: &y, params: &grow, rng, importance: vec![0.0; feature_names.len()] };
            let tree = grower.grow(&mut rows, 0);
            (tree, grower.importance)
        })
        .collect();

    let mut importance = vec![0.0; feature_names.len()];
    let mut trees = Vec::with_capacity(grown.len());
    for (tree, imp) in grown {
        for (a, b) in importance.iter_mut().zip(imp) {
            *a += b;
        }
        trees.push(tree);
    }
    let total: f64 = importance.iter().sum();
    let importance_degenerate = !(total > 0.0);
    if importance_degenerate {
        importance.fill(1.0 / feature_names.len() as f64);
    } else {
        importance.iter_mut().for_each(|v| *v /= total);
    }
    Ok(ForestModel { feature_names, trees, params: params.clone(), seed, importance, importance_degenerate })
}

fn feature_row(names: &[String], features: &FeatureVector) -> Result<Vec<f64>> {
    names
        .iter()
        .map(|name| {
            let v = *features.get(name).ok_or_else(|| Error::MissingFeature(name.clone()))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Domain(format!("feature `{name}` is not finite")))
            }
        })
        .collect()
}

impl ForestModel {
    /// Mean of the per-tree leaf values.
    pub fn predict(&self, x: &FeatureVector) -> Result<f64> {
        let row = feature_row(&self.feature_names, x)?;
        Ok(self.predict_row(&row))
    }

    pub(crate) fn predict_row(&self, row: &[f64]) -> f64 {
        let (lo, hi, sum) = self.trees.iter().map(|t| t.predict(row)).fold(
            (f64::INFINITY, f64::NEG_INFINITY, 0.0),
            |(lo, hi, s), v| (lo.min(v), hi.max(v), s + v),
        );
        // The clamp only removes rounding drift: a mean lies within its range.
        (sum / self.trees.len() as f64).clamp(lo, hi)
    }

    pub fn importance_of(&self, feature: &str) -> Option<f64> {
        self.feature_names.iter().position(|f| f == feature).map(|i| self.importance[i])
    }

    /// Serialize to the versioned text format: a header with the
    /// hyperparameters, seed, feature order and importance, then each tree's
    /// nodes in pre-order (`S <feature> <threshold>` or `L <value>`).
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut out = String::new();
        let p = &self.params;
        let opt = |v: Option<usize>| v.map_or_else(|| "none".to_string(), |v| v.to_string());
        writeln!(out, "{FORMAT_HEADER}").unwrap();
        writeln!(out, "n_trees {}", p.n_trees).unwrap();
        writeln!(out, "max_depth {}", opt(p.max_depth)).unwrap();
        writeln!(out, "min_samples_leaf {}", p.min_samples_leaf).unwrap();
        writeln!(out, "features_per_split {}", opt(p.features_per_split)).unwrap();
        writeln!(out, "bootstrap {}", p.bootstrap).unwrap();
        writeln!(out, "same_seed_per_tree {}", p.same_seed_per_tree).unwrap();
        writeln!(out, "seed {}", self.seed).unwrap();
        writeln!(out, "features {}", self.feature_names.join(" ")).unwrap();
        let imp: Vec<String> = self.importance.iter().map(|v| v.to_string()).collect();
        writeln!(out, "importance {}", imp.join(" ")).unwrap();
        writeln!(out, "importance_degenerate {}", self.importance_degenerate).unwrap();
        for (i, tree) in self.trees.iter().enumerate() {
            writeln!(out, "tree {i} {}", tree.node_count()).unwrap();
            let mut stack = vec![tree];
            while let Some(node) = stack.pop() {
                match node {
                    TreeNode::Leaf { value } => writeln!(out, "L {value}").unwrap(),
                    TreeNode::Split { feature, threshold, left, right } => {
                        writeln!(out, "S {} {threshold}", self.feature_names[*feature]).unwrap();
                        stack.push(right);
                        stack.push(left);
                    }
                }
            }
        }
        writeln!(out, "end").unwrap();
        w.write_all(out.as_bytes()).map_err(|e| Error::io("<model output>", e))
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<ForestModel> {
        let mut r = Lines { inner: reader.lines(), line: 0 };
        let (n, head) = r.next()?;
        if head.trim() != FORMAT_HEADER {
            return Err(format_error(n, "unrecognised model header"));
        }
        let (l, v) = r.field("n_trees")?;
        let n_trees: usize = parse(l, &v)?;
        let (l, v) = r.field("max_depth")?;
        let max_depth = parse_opt(l, &v)?;
        let (l, v) = r.field("min_samples_leaf")?;
        let min_samples_leaf = parse(l, &v)?;
        let (l, v) = r.field("features_per_split")?;
        let features_per_split = parse_opt(l, &v)?;
        let (l, v) = r.field("bootstrap")?;
        let bootstrap = parse(l, &v)?;
        let (l, v) = r.field("same_seed_per_tree")?;
        let same_seed_per_tree = parse(l, &v)?;
        let (l, v) = r.field("seed")?;
        let seed = parse(l, &v)?;
        let (_, v) = r.field("features")?;
        let feature_names: Vec<String> = v.split_whitespace().map(str::to_string).collect();
        let (l, v) = r.field("importance")?;
        let importance = v.split_whitespace().map(|s| parse(l, s)).collect::<Result<Vec<f64>>>()?;
        if importance.len() != feature_names.len() {
            return Err(format_error(l, "importance length differs from feature count"));
        }
        let (l, v) = r.field("importance_degenerate")?;
        let importance_degenerate = parse(l, &v)?;

        let mut trees = Vec::with_capacity(n_trees);
        for t in 0..n_trees {
            let (l, v) = r.field("tree")?;
            let mut parts = v.split_whitespace();
            let idx: usize = parse(l, parts.next().unwrap_or(""))?;
            let count: usize = parse(l, parts.next().unwrap_or(""))?;
            if idx != t {
                return Err(format_error(l, "trees out of order"));
            }
            let nodes = (0..count).map(|_| r.next()).collect::<Result<Vec<_>>>()?;
            let mut pos = 0;
            let tree = build_node(&nodes, &mut pos, &feature_names)?;
            if pos != nodes.len() {
                return Err(format_error(l, "node count does not match tree shape"));
            }
            trees.push(tree);
        }
        let (l, v) = r.next()?;
        if v.trim() != "end" {
            return Err(format_error(l, "expected `end`"));
        }
        let params = ForestParams { n_trees, max_depth, min_samples_leaf, features_per_split, bootstrap, same_seed_per_tree };
        Ok(ForestModel { feature_names, trees, params, seed, importance, importance_degenerate })
    }
}

fn format_error(line: usize, reason: &str) -> Error {
    Error::ModelFormat { line, reason: reason.to_string() }
}

fn parse<T: std::str::FromStr>(line: usize, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| format_error(line, &format!("bad value {v:?}")))
}

fn parse_opt(line: usize, v: &str) -> Result<Option<usize>> {
    if v.trim() == "none" {
        Ok(None)
    } else {
        parse(line, v).map(Some)
    }
}

struct Lines<L> {
    inner: L,
    line: usize,
}

impl<L: Iterator<Item = std::io::Result<String>>> Lines<L> {
    fn next(&mut self) -> Result<(usize, String)> {
        self.line += 1;
        match self.inner.next() {
            Some(Ok(l)) => Ok((self.line, l)),
            Some(Err(e)) => Err(format_error(self.line, &e.to_string())),
            None => Err(format_error(self.line, "unexpected end of file")),
        }
    }

    /// Next line, which must start with `key`; returns the remainder.
    fn field(&mut self, key: &str) -> Result<(usize, String)> {
        let (n, l) = self.next()?;
        match l.split_once(' ') {
            Some((k, rest)) if k == key => Ok((n, rest.to_string())),
            None if l == key => Ok((n, String::new())),
            _ => Err(format_error(n, &format!("expected `{key}`"))),
        }
    }
}

fn build_node(nodes: &[(usize, String)], pos: &mut usize, names: &[String]) -> Result<TreeNode> {
    let (line, text) = nodes
        .get(*pos)
        .ok_or_else(|| format_error(0, "tree ends early"))?;
    let line = *line;
    *pos += 1;
    let bad = |reason: &str| format_error(line, reason);
    let parts: Vec<&str> = text.split_whitespace().collect();
    match parts.as_slice() {
        ["L", value] => Ok(TreeNode::Leaf { value: value.parse().map_err(|_| bad("bad leaf value"))? }),
        ["S", name, threshold] => {
            let feature = names.iter().position(|n| n == name).ok_or_else(|| bad("unknown feature"))?;
            let threshold = threshold.parse().map_err(|_| bad("bad threshold"))?;
            let left = build_node(nodes, pos, names)?;
            let right = build_node(nodes, pos, names)?;
            Ok(TreeNode::Split { feature, threshold, left: Box::new(left), right: Box::new(right) })
        }
        _ => Err(bad("expected `L <value>` or `S <feature> <threshold>`")),
    }
}
