//! Late fusion: concatenated penultimate activations classified by a random
//! forest of Gini decision trees.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio_features::{featurize, read_matrix_file, write_matrix_file, MfccConfig};
use crate::corpus::{SentimentLabel, Utterance};
use crate::nets::{ModelGraph, Tensor};
use crate::text_features::{embed, EmbeddingConfig, EmbeddingProvider};
use crate::{Error, Result};

/// `[acoustic | text]` penultimate activations of one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedVector {
    pub values: Vec<f64>,
    pub utterance_id: String,
    pub label: SentimentLabel,
}

/// Everything needed to turn an utterance into model inputs.
#[derive(Debug, Clone)]
pub struct Featurizers {
    pub mfcc: MfccConfig,
    pub embedding: EmbeddingConfig,
    pub provider: EmbeddingProvider,
}

impl Featurizers {
    /// Flattened `300 x 60` MFCC matrix.
    pub fn acoustic_input(&self, utterance: &Utterance) -> Result<Vec<f64>> {
        Ok(featurize(utterance, &self.mfcc)?.values.into_iter().collect())
    }

    /// Flattened `max_tokens x dim` embedding sequence.
    pub fn text_input(&self, utterance: &Utterance) -> Result<Vec<f64>> {
        let seq = embed(&utterance.transcript, &self.embedding, &self.provider)?;
        Ok(seq.values.into_iter().collect())
    }
}

fn penultimate_of(graph: &ModelGraph, input: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    let mut shape = vec![1];
    shape.extend_from_slice(graph.input_shape());
    let input = Tensor::new(shape, input)?;
    let out = graph.evaluate(&input)?;
    let row = out.penultimate.sample(0).to_vec();
    if row.len() != graph.penultimate_dim() {
        return Err(Error::Consistency(format!(
            "{what} penultimate width {} differs from the preset's {}",
            row.len(),
            graph.penultimate_dim()
        )));
    }
    Ok(row)
}

/// Joins two penultimate rows, checking each against its graph's preset.
pub fn concat_fused(
    acoustic_graph: &ModelGraph,
    text_graph: &ModelGraph,
    acoustic: &[f64],
    text: &[f64],
    utterance_id: &str,
    label: SentimentLabel,
) -> Result<FusedVector> {
    let (da, dt) = (acoustic_graph.penultimate_dim(), text_graph.penultimate_dim());
    if acoustic.len() != da || text.len() != dt {
        return Err(Error::Consistency(format!(
            "{utterance_id}: fused parts are {} + {}, presets expect {da} + {dt}",
            acoustic.len(),
            text.len()
        )));
    }
    let mut values = Vec::with_capacity(da + dt);
    values.extend_from_slice(acoustic);
    values.extend_from_slice(text);
    Ok(FusedVector {
        values,
        utterance_id: utterance_id.to_string(),
        label,
    })
}

/// Eval-mode penultimate activations of both models for one labeled
/// utterance, concatenated acoustic first.
pub fn extract_fused(
    acoustic_graph: &ModelGraph,
    text_graph: &ModelGraph,
    utterance: &Utterance,
    featurizers: &Featurizers,
) -> Result<FusedVector> {
    let label = utterance
        .label
        .ok_or_else(|| Error::invalid(format!("utterance {} has no label", utterance.id)))?;
    let a = penultimate_of(acoustic_graph, featurizers.acoustic_input(utterance)?, "acoustic")?;
    let t = penultimate_of(text_graph, featurizers.text_input(utterance)?, "text")?;
    concat_fused(acoustic_graph, text_graph, &a, &t, &utterance.id, label)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub num_trees: usize,
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Draw a bootstrap sample per tree; when off every tree sees the full set.
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            num_trees: 100,
            max_depth: None,
            min_samples_leaf: 1,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        counts: [usize; 3],
    },
}

/// Flat node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn leaf_counts(&self, x: &[f64]) -> [usize; 3] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { counts } => return *counts,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax_lowest(&self.leaf_counts(x))
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

fn argmax_lowest(counts: &[usize; 3]) -> usize {
    let mut best = 0;
    for c in 1..3 {
        if counts[c] > counts[best] {
            best = c;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub dim: usize,
    pub config: ForestConfig,
    pub trees: Vec<DecisionTree>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn gini(counts: &[usize; 3], n: usize) -> f64 {
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    dim: usize,
    mtry: usize,
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> [usize; 3] {
        let mut c = [0; 3];
        idx.iter().for_each(|&i| c[self.y[i]] += 1);
        c
    }

    /// Lowest weighted child impurity over midpoints of one feature.
    fn scan_feature(&self, idx: &mut [usize], feature: usize, total: &[usize; 3]) -> Option<BestSplit> {
        let x = self.x;
        idx.sort_by(|&a, &b| x[a][feature].total_cmp(&x[b][feature]).then(a.cmp(&b)));
        let n = idx.len();
        let mut left = [0usize; 3];
        let mut best: Option<BestSplit> = None;
        for pos in 0..n - 1 {
            left[self.y[idx[pos]]] += 1;
            let (lo, hi) = (x[idx[pos]][feature], x[idx[pos + 1]][feature]);
            let nl = pos + 1;
            if lo == hi || nl < self.min_leaf || n - nl < self.min_leaf {
                continue;
            }
            let right = [total[0] - left[0], total[1] - left[1], total[2] - left[2]];
            let nr = n - nl;
            let score = (nl as f64 / n as f64) * gini(&left, nl) + (nr as f64 / n as f64) * gini(&right, nr);
            if best.as_ref().map_or(true, |b| score < b.score) {
                let mut threshold = lo / 2.0 + hi / 2.0;
                if !(threshold >= lo && threshold < hi) {
                    threshold = lo;
                }
                best = Some(BestSplit {
                    feature,
                    threshold,
                    score,
                });
            }
        }
        best
    }

    fn grow(&mut self, idx: &mut Vec<usize>, depth: usize, seed: u64) -> usize {
        let counts = self.counts(idx);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { counts });
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= self.max_depth || idx.len() < 2 * self.min_leaf {
            return id;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut features: Vec<usize> = (0..self.dim).collect();
        features.shuffle(&mut rng);
        let mut best: Option<BestSplit> = None;
        for (tried, &f) in features.iter().enumerate() {
            // Keep drawing past mtry only while no valid split has been seen.
            if tried >= self.mtry && best.is_some() {
                break;
            }
            if let Some(s) = self.scan_feature(idx, f, &counts) {
                if best.as_ref().map_or(true, |b| s.score < b.score) {
                    best = Some(s);
                }
            }
        }
        let Some(split) = best else { return id };
        let (mut l, mut r): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.x[i][split.feature] <= split.threshold);
        idx.clear();
        idx.shrink_to_fit();
        let left = self.grow(&mut l, depth + 1, splitmix(seed ^ 1));
        let right = self.grow(&mut r, depth + 1, splitmix(seed ^ 2));
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

fn fit_tree(x: &[Vec<f64>], y: &[usize], config: &ForestConfig, tree_seed: u64) -> DecisionTree {
    let n = x.len();
    let mut idx: Vec<usize> = if config.bootstrap {
        let mut rng = ChaCha8Rng::seed_from_u64(tree_seed);
        (0..n).map(|_| rng.gen_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let dim = x[0].len();
    let mut b = Builder {
        x,
        y,
        dim,
        mtry: ((dim as f64).sqrt().floor() as usize).max(1),
        max_depth: config.max_depth.unwrap_or(usize::MAX),
        min_leaf: config.min_samples_leaf.max(1),
        nodes: Vec::new(),
    };
    b.grow(&mut idx, 0, splitmix(tree_seed ^ 0xA5A5_A5A5));
    DecisionTree { nodes: b.nodes }
}

/// Bootstrap indices tree `t` would train on.
pub fn bootstrap_indices(config: &ForestConfig, tree: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(tree_seed(config.seed, tree));
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

fn tree_seed(seed: u64, tree: usize) -> u64 {
    splitmix(seed.wrapping_mul(0x1000_0000_01B3) ^ tree as u64)
}

impl Forest {
    /// Fits `num_trees` trees in parallel. Deterministic given `config.seed`.
    pub fn fit(x: &[Vec<f64>], y: &[usize], config: &ForestConfig) -> Result<Forest> {
        if config.num_trees == 0 {
            return Err(Error::invalid("num_trees must be at least 1"));
        }
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::invalid("forest needs a non-empty, aligned feature set"));
        }
        let dim = x[0].len();
        if dim == 0 || x.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("feature rows must share one positive width"));
        }
        if let Some(bad) = y.iter().find(|&&l| l >= 3) {
            return Err(Error::invalid(format!("label {bad} outside 0..3")));
        }
        if y.iter().all(|&l| l == y[0]) {
            return Err(Error::invalid("forest needs at least two classes in the data"));
        }
        let trees = (0..config.num_trees)
            .into_par_iter()
            .map(|t| fit_tree(x, y, config, tree_seed(config.seed, t)))
            .collect();
        Ok(Forest {
            dim,
            config: config.clone(),
            trees,
        })
    }

    pub fn predict_index(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.dim {
            return Err(Error::invalid(format!(
                "vector has {} features, forest expects {}",
                x.len(),
                self.dim
            )));
        }
        let mut votes = [0usize; 3];
        for t in &self.trees {
            votes[t.predict(x)] += 1;
        }
        Ok(argmax_lowest(&votes))
    }

    pub fn predict(&self, x: &[f64]) -> Result<SentimentLabel> {
        SentimentLabel::from_index(self.predict_index(x)?)
    }

    pub fn accuracy(&self, x: &[Vec<f64>], y: &[usize]) -> Result<f64> {
        let mut hits = 0;
        for (row, &label) in x.iter().zip(y) {
            hits += usize::from(self.predict_index(row)? == label);
        }
        Ok(hits as f64 / x.len().max(1) as f64)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).expect("forest serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Forest> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, format!("line {}", e.line()), e.to_string()))
    }
}

pub fn fit_forest(data: &[FusedVector], config: &ForestConfig) -> Result<Forest> {
    let x: Vec<Vec<f64>> = data.iter().map(|v| v.values.clone()).collect();
    let y: Vec<usize> = data.iter().map(|v| v.label.index()).collect();
    Forest::fit(&x, &y, config)
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("csv")
}

/// Stores vectors as a matrix file plus a `{stem}.csv` sidecar of ids and
/// labels.
pub fn save_fused(path: impl AsRef<Path>, data: &[FusedVector]) -> Result<()> {
    let path = path.as_ref();
    let dim = data.first().map_or(0, |v| v.values.len());
    if data.iter().any(|v| v.values.len() != dim) {
        return Err(Error::invalid("fused vectors differ in width"));
    }
    let flat: Vec<f64> = data.iter().flat_map(|v| v.values.iter().copied()).collect();
    let matrix = Array2::from_shape_vec((data.len(), dim), flat).expect("widths checked");
    write_matrix_file(path, &matrix)?;
    let side = sidecar(path);
    let to_err = |e: csv::Error| Error::format(&side, "sidecar", e.to_string());
    let mut w = csv::Writer::from_path(&side).map_err(to_err)?;
    w.write_record(["id", "label"]).map_err(to_err)?;
    for v in data {
        w.write_record([v.utterance_id.as_str(), v.label.name()])
            .map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(&side, e))
}

pub fn load_fused(path: impl AsRef<Path>) -> Result<Vec<FusedVector>> {
    let path = path.as_ref();
    let matrix = read_matrix_file(path)?;
    let side = sidecar(path);
    let mut r = csv::Reader::from_path(&side).map_err(|e| Error::format(&side, "sidecar", e.to_string()))?;
    let mut out = Vec::with_capacity(matrix.nrows());
    for (i, rec) in r.records().enumerate() {
        let loc = format!("row {}", i + 1);
        let rec = rec.map_err(|e| Error::format(&side, &loc, e.to_string()))?;
        if i >= matrix.nrows() || rec.len() != 2 {
            return Err(Error::format(&side, &loc, "sidecar does not match the matrix"));
        }
        let label = rec[1]
            .parse()
            .map_err(|e: Error| Error::format(&side, &loc, e.to_string()))?;
        out.push(FusedVector {
            values: matrix.row(i).to_vec(),
            utterance_id: rec[0].to_string(),
            label,
        });
    }
    if out.len() != matrix.nrows() {
        return Err(Error::format(&side, "rows", "sidecar does not match the matrix"));
    }
    Ok(out)
}
