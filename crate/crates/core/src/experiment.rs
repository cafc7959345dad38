//! Cross-validated experiments: per-fold training of each modality under
//! each monitored metric, late fusion, and fold-averaged report tables.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! folds.json
//! cache/mfcc/{utterance}.mf60
//! runs/{modality}/{monitor}/fold{f}/   config.json, history.csv, best.ckpt,
//!                                      forest.json (bimodal), test_report.json
//! report.json, report.txt
//! ```
//!
//! A run directory counts as complete once `test_report.json` exists, which
//! is written last.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::OnceLock;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio_features::{
    column_moments, featurize, read_matrix_file, write_matrix_file, MfccConfig, FEATURE_COLUMNS, NUM_FRAMES,
};
use crate::corpus::{filter_nonverbal, generate_synthetic_corpus, load_manifest, Corpus, GeneratorConfig};
use crate::fusion::{concat_fused, fit_forest, Featurizers, ForestConfig, FusedVector};
use crate::metrics::{aggregate_folds, report, ConfusionMatrix, Metric, MetricsReport};
use crate::nets::{build_acoustic, build_text, load_checkpoint, AcousticModelSpec, ModelGraph, TextModelSpec};
use crate::splits::{assign_folds, fold_view, FoldAssignment, FoldView};
use crate::text_features::{embed, load_embedding_table, EmbeddingConfig, EmbeddingProvider, ProviderKind};
use crate::trainer::{evaluate_dataset, evaluate_report, train, write_run_dir, Dataset, TrainConfig};
use crate::{Error, Result};

const COMPLETE_MARKER: &str = "test_report.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Acoustic,
    Text,
    Bimodal,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Acoustic, Modality::Text, Modality::Bimodal];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Acoustic => "acoustic",
            Modality::Text => "text",
            Modality::Bimodal => "bimodal",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Modality::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown modality {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusSource {
    Synthetic(GeneratorConfig),
    Manifest(PathBuf),
}

impl Default for CorpusSource {
    fn default() -> Self {
        CorpusSource::Synthetic(GeneratorConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcousticPreset {
    Switchboard,
    Iemocap,
    Desk,
    Custom(AcousticModelSpec),
}

impl AcousticPreset {
    pub fn spec(&self) -> AcousticModelSpec {
        match self {
            AcousticPreset::Switchboard => AcousticModelSpec::switchboard(),
            AcousticPreset::Iemocap => AcousticModelSpec::iemocap(),
            AcousticPreset::Desk => AcousticModelSpec::desk(),
            AcousticPreset::Custom(spec) => spec.clone(),
        }
    }
}

/// Which split's fused vectors the forest is fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionFitSplit {
    Train,
    Validation,
    TrainValidation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: CorpusSource,
    pub k_folds: usize,
    /// Restricts which folds serve as test folds; all when absent.
    pub test_folds: Option<Vec<usize>>,
    pub monitors: Vec<Metric>,
    pub modality: Modality,
    pub acoustic_model: AcousticPreset,
    pub text_model: TextModelSpec,
    pub mfcc: MfccConfig,
    pub embedding: EmbeddingConfig,
    /// Whitespace-separated `token v1 ... v300` file, required when the
    /// embedding provider is `table`.
    pub embedding_table: Option<PathBuf>,
    pub acoustic_training: TrainConfig,
    pub text_training: TrainConfig,
    pub forest: ForestConfig,
    pub fusion_fit_split: FusionFitSplit,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Keep MFCC matrices under `output_dir/cache`.
    pub cache_features: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            corpus: CorpusSource::default(),
            k_folds: 10,
            test_folds: None,
            monitors: Metric::ALL.to_vec(),
            modality: Modality::Acoustic,
            acoustic_model: AcousticPreset::Desk,
            text_model: TextModelSpec::default(),
            mfcc: MfccConfig::default(),
            embedding: EmbeddingConfig {
                max_tokens: 16,
                ..EmbeddingConfig::default()
            },
            embedding_table: None,
            acoustic_training: TrainConfig {
                initial_lr: 3e-3,
                max_epochs: 25,
                ..TrainConfig::default()
            },
            text_training: TrainConfig {
                max_epochs: 40,
                ..TrainConfig::text_default()
            },
            forest: ForestConfig::default(),
            fusion_fit_split: FusionFitSplit::Validation,
            output_dir: PathBuf::from("experiment"),
            seed: 7,
            cache_features: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::format(path, format!("line {} column {}", e.line(), e.column()), e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.monitors.is_empty() {
            return Err(Error::invalid("monitors must not be empty"));
        }
        let mut seen = self.monitors.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.monitors.len() {
            return Err(Error::invalid("monitors contain duplicates"));
        }
        if self.k_folds < 3 {
            return Err(Error::invalid(format!(
                "k_folds must be at least 3, got {}",
                self.k_folds
            )));
        }
        if let Some(folds) = &self.test_folds {
            if folds.is_empty() || folds.iter().any(|&f| f >= self.k_folds) {
                return Err(Error::invalid(format!(
                    "test_folds {folds:?} must be non-empty and below k_folds"
                )));
            }
        }
        if let CorpusSource::Synthetic(g) = &self.corpus {
            g.validate()?;
        }
        self.mfcc.validate()?;
        self.acoustic_training.validate()?;
        self.text_training.validate()?;
        if self.forest.num_trees == 0 {
            return Err(Error::invalid("forest.num_trees must be at least 1"));
        }
        if self.embedding.provider == ProviderKind::Table && self.embedding_table.is_none() {
            return Err(Error::invalid("embedding provider \"table\" needs embedding_table"));
        }
        build_acoustic(&self.acoustic_model.spec(), (NUM_FRAMES, FEATURE_COLUMNS, 1), 0)?;
        build_text(&self.text_model, (self.embedding.max_tokens, self.embedding.dim), 0)?;
        Ok(())
    }

    pub fn test_folds(&self) -> Vec<usize> {
        self.test_folds.clone().unwrap_or_else(|| (0..self.k_folds).collect())
    }
}

/// Loads or generates the corpus and keeps labeled utterances with verbal
/// content.
pub fn load_corpus(source: &CorpusSource) -> Result<Corpus> {
    let corpus = match source {
        CorpusSource::Synthetic(g) => generate_synthetic_corpus(g)?,
        CorpusSource::Manifest(path) => load_manifest(path)?,
    };
    Ok(corpus.filter(|u| u.label.is_some() && filter_nonverbal(u)))
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed shared by every monitor of one (fold, modality), so monitor
/// comparisons start from the same initialization and batch order.
pub fn run_seed(global: u64, fold: usize, modality: Modality) -> u64 {
    mix(mix(global, fold as u64 + 1), modality as u64 + 11)
}

/// Test-set outcome of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub modality: Modality,
    pub monitor: Metric,
    pub fold: usize,
    /// The run directory was already complete and was not retrained.
    pub skipped: bool,
    pub test: MetricsReport,
}

/// Written as `test_report.json` in each run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub modality: Modality,
    pub monitor: Metric,
    pub fold: usize,
    pub validation_fold: usize,
    pub best_epoch: Option<usize>,
    pub epochs_run: Option<usize>,
    pub test: MetricsReport,
}

type FeatureMap = HashMap<String, Vec<f32>>;

/// An opened experiment: filtered corpus, fold assignment and lazily
/// computed features.
pub struct Experiment {
    config: ExperimentConfig,
    corpus: Corpus,
    folds: FoldAssignment,
    featurizers: Featurizers,
    acoustic: OnceLock<FeatureMap>,
    text: OnceLock<FeatureMap>,
}

impl Experiment {
    /// Validates the config, loads the corpus and assigns folds. A stored
    /// `folds.json` that disagrees with the config is an error unless
    /// `force` is set.
    pub fn open(config: ExperimentConfig, force: bool) -> Result<Self> {
        config.validate()?;
        let corpus = load_corpus(&config.corpus)?;
        let folds = assign_folds(&corpus, config.k_folds, config.seed)?;
        let dir = &config.output_dir;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let fold_path = dir.join("folds.json");
        if fold_path.exists() && !force {
            let stored = FoldAssignment::load(&fold_path)?;
            if stored != folds {
                return Err(Error::invalid(format!(
                    "{} was written by a different corpus, seed or k; use --force or another output_dir",
                    fold_path.display()
                )));
            }
        } else {
            folds.save(&fold_path)?;
        }
        let provider = match (&config.embedding.provider, &config.embedding_table) {
            (ProviderKind::Table, Some(path)) => load_embedding_table(path)?,
            _ => EmbeddingProvider::Hashed,
        };
        let featurizers = Featurizers {
            mfcc: config.mfcc.clone(),
            embedding: config.embedding.clone(),
            provider,
        };
        Ok(Experiment {
            config,
            corpus,
            folds,
            featurizers,
            acoustic: OnceLock::new(),
            text: OnceLock::new(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn folds(&self) -> &FoldAssignment {
        &self.folds
    }

    pub fn run_dir(&self, modality: Modality, monitor: Metric, fold: usize) -> PathBuf {
        self.config
            .output_dir
            .join("runs")
            .join(modality.name())
            .join(monitor.to_string())
            .join(format!("fold{fold}"))
    }

    pub fn is_complete(dir: &Path) -> bool {
        dir.join(COMPLETE_MARKER).is_file()
    }

    fn view(&self, fold: usize) -> Result<(usize, FoldView)> {
        let val = (fold + 1) % self.config.k_folds;
        Ok((val, fold_view(&self.corpus, &self.folds, fold, val)?))
    }

    fn acoustic_features(&self) -> Result<&FeatureMap> {
        if let Some(m) = self.acoustic.get() {
            return Ok(m);
        }
        let cache = self
            .config
            .cache_features
            .then(|| self.config.output_dir.join("cache").join("mfcc"));
        if let Some(dir) = &cache {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        log::info!("featurizing {} utterances", self.corpus.len());
        let mfcc = &self.config.mfcc;
        let rows: Vec<Result<(String, Vec<f32>)>> = self
            .corpus
            .utterances()
            .par_iter()
            .map(|u| {
                let path = cache.as_ref().map(|d| d.join(format!("{}.mf60", u.id)));
                let matrix = match &path {
                    Some(p) if p.is_file() => read_matrix_file(p)?,
                    _ => {
                        let m = featurize(u, mfcc)?.values;
                        if let Some(p) = &path {
                            write_matrix_file(p, &m)?;
                        }
                        m
                    }
                };
                if matrix.dim() != (NUM_FRAMES, FEATURE_COLUMNS) {
                    return Err(Error::Consistency(format!(
                        "cached features for {} have shape {:?}",
                        u.id,
                        matrix.dim()
                    )));
                }
                Ok((u.id.clone(), matrix.iter().map(|&v| v as f32).collect()))
            })
            .collect();
        let map = rows.into_iter().collect::<Result<FeatureMap>>()?;
        Ok(self.acoustic.get_or_init(|| map))
    }

    fn text_features(&self) -> Result<&FeatureMap> {
        if let Some(m) = self.text.get() {
            return Ok(m);
        }
        let map = self
            .corpus
            .utterances()
            .iter()
            .map(|u| {
                let seq = embed(&u.transcript, &self.featurizers.embedding, &self.featurizers.provider)?;
                Ok((u.id.clone(), seq.values.iter().map(|&v| v as f32).collect()))
            })
            .collect::<Result<FeatureMap>>()?;
        Ok(self.text.get_or_init(|| map))
    }

    fn features(&self, modality: Modality) -> Result<(&FeatureMap, Vec<usize>)> {
        match modality {
            Modality::Acoustic => Ok((self.acoustic_features()?, vec![1, NUM_FRAMES, FEATURE_COLUMNS])),
            Modality::Text => Ok((
                self.text_features()?,
                vec![self.config.embedding.max_tokens, self.config.embedding.dim],
            )),
            Modality::Bimodal => Err(Error::invalid("bimodal runs have no single input representation")),
        }
    }

    fn dataset(&self, features: &FeatureMap, shape: &[usize], ids: &[String]) -> Result<Dataset> {
        let mut data = Dataset::new(shape.to_vec());
        for id in ids {
            let u = self
                .corpus
                .get(id)
                .ok_or_else(|| Error::Consistency(format!("unknown utterance {id}")))?;
            let label = u
                .label
                .ok_or_else(|| Error::Consistency(format!("utterance {id} is unlabeled")))?;
            let row = features
                .get(id)
                .ok_or_else(|| Error::Consistency(format!("no features for {id}")))?;
            data.push(row.iter().map(|&v| v as f64), label)?;
        }
        Ok(data)
    }

    fn build_graph(&self, modality: Modality, seed: u64) -> Result<ModelGraph> {
        match modality {
            Modality::Acoustic => build_acoustic(
                &self.config.acoustic_model.spec(),
                (NUM_FRAMES, FEATURE_COLUMNS, 1),
                seed,
            ),
            Modality::Text => build_text(
                &self.config.text_model,
                (self.config.embedding.max_tokens, self.config.embedding.dim),
                seed,
            ),
            Modality::Bimodal => Err(Error::invalid("bimodal runs have no graph")),
        }
    }

    /// Trains the configured modality; bimodal means fusion of existing runs.
    pub fn train(&self, force: bool) -> Result<Vec<RunOutcome>> {
        match self.config.modality {
            Modality::Bimodal => self.fuse(force),
            m => self.train_modality(m, force),
        }
    }

    /// Trains one single-modality model per (monitor, test fold).
    pub fn train_modality(&self, modality: Modality, force: bool) -> Result<Vec<RunOutcome>> {
        let mut out = Vec::new();
        for &monitor in &self.config.monitors {
            for fold in self.config.test_folds() {
                out.push(self.train_one(modality, monitor, fold, force)?);
            }
        }
        Ok(out)
    }

    fn skip_if_done(
        &self,
        dir: &Path,
        modality: Modality,
        monitor: Metric,
        fold: usize,
        force: bool,
    ) -> Result<Option<RunOutcome>> {
        if force || !Self::is_complete(dir) {
            return Ok(None);
        }
        let summary = read_summary(dir)?;
        log::info!("{modality}/{monitor}/fold{fold}: complete, skipping");
        Ok(Some(RunOutcome {
            modality,
            monitor,
            fold,
            skipped: true,
            test: summary.test,
        }))
    }

    fn train_one(&self, modality: Modality, monitor: Metric, fold: usize, force: bool) -> Result<RunOutcome> {
        let dir = self.run_dir(modality, monitor, fold);
        if let Some(done) = self.skip_if_done(&dir, modality, monitor, fold, force)? {
            return Ok(done);
        }
        let (val_fold, view) = self.view(fold)?;
        let (features, shape) = self.features(modality)?;
        let train_set = self.dataset(features, &shape, &view.train_ids)?;
        let val_set = self.dataset(features, &shape, &view.validation_ids)?;
        let test_set = self.dataset(features, &shape, &view.test_ids)?;

        let seed = run_seed(self.config.seed, fold, modality);
        let mut graph = self.build_graph(modality, seed)?;
        if modality == Modality::Acoustic {
            let matrices: Vec<Array2<f64>> = view
                .train_ids
                .iter()
                .map(|id| {
                    Array2::from_shape_vec(
                        (NUM_FRAMES, FEATURE_COLUMNS),
                        features[id].iter().map(|&v| v as f64).collect(),
                    )
                })
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Consistency(e.to_string()))?;
            let (mean, std) = column_moments(&matrices);
            graph.set_input_normalization(&mean, &std)?;
        }
        let base = match modality {
            Modality::Acoustic => &self.config.acoustic_training,
            _ => &self.config.text_training,
        };
        let train_cfg = TrainConfig {
            seed: mix(seed, base.seed),
            monitor,
            ..base.clone()
        };
        log::info!(
            "{modality}/{monitor}/fold{fold}: training on {} utterances",
            train_set.len()
        );
        let run = train(&mut graph, &train_set, &val_set, &train_cfg)?;
        let test = evaluate_report(&run.checkpoint, &test_set)?;
        let described = serde_json::json!({
            "experiment": self.config,
            "modality": modality,
            "monitor": monitor,
            "fold": fold,
            "validation_fold": val_fold,
            "graph_seed": seed,
            "train": train_cfg,
        });
        write_run_dir(&dir, &described, &run)?;
        let summary = RunSummary {
            modality,
            monitor,
            fold,
            validation_fold: val_fold,
            best_epoch: Some(run.best_epoch),
            epochs_run: Some(run.epoch),
            test,
        };
        write_summary(&dir, &summary)?;
        log::info!(
            "{modality}/{monitor}/fold{fold}: test UA {:.4} (best epoch {})",
            test.ua,
            run.best_epoch
        );
        Ok(RunOutcome {
            modality,
            monitor,
            fold,
            skipped: false,
            test,
        })
    }

    /// Fits a forest per (monitor, test fold) on fused penultimate vectors
    /// of the matching acoustic and text checkpoints.
    pub fn fuse(&self, force: bool) -> Result<Vec<RunOutcome>> {
        let mut out = Vec::new();
        for &monitor in &self.config.monitors {
            for fold in self.config.test_folds() {
                out.push(self.fuse_one(monitor, fold, force)?);
            }
        }
        Ok(out)
    }

    fn fused_split(&self, acoustic: &ModelGraph, text: &ModelGraph, ids: &[String]) -> Result<Vec<FusedVector>> {
        let (af, ashape) = self.features(Modality::Acoustic)?;
        let (tf, tshape) = self.features(Modality::Text)?;
        let (_, a_rows) = evaluate_dataset(acoustic, &self.dataset(af, &ashape, ids)?)?;
        let (_, t_rows) = evaluate_dataset(text, &self.dataset(tf, &tshape, ids)?)?;
        ids.iter()
            .zip(a_rows.iter().zip(&t_rows))
            .map(|(id, (a, t))| {
                let label = self
                    .corpus
                    .get(id)
                    .and_then(|u| u.label)
                    .expect("dataset ids are labeled");
                concat_fused(acoustic, text, a, t, id, label)
            })
            .collect()
    }

    fn fuse_one(&self, monitor: Metric, fold: usize, force: bool) -> Result<RunOutcome> {
        let dir = self.run_dir(Modality::Bimodal, monitor, fold);
        if let Some(done) = self.skip_if_done(&dir, Modality::Bimodal, monitor, fold, force)? {
            return Ok(done);
        }
        let mut graphs = Vec::new();
        for m in [Modality::Acoustic, Modality::Text] {
            let src = self.run_dir(m, monitor, fold);
            if !Self::is_complete(&src) {
                return Err(Error::invalid(format!(
                    "no completed {m} run for monitor {monitor} fold {fold} under {}; train the acoustic and text modalities first",
                    self.config.output_dir.display()
                )));
            }
            graphs.push(load_checkpoint(src.join("best.ckpt"))?);
        }
        let (acoustic, text) = (&graphs[0], &graphs[1]);
        let (val_fold, view) = self.view(fold)?;
        let fit_ids: Vec<String> = match self.config.fusion_fit_split {
            FusionFitSplit::Train => view.train_ids.clone(),
            FusionFitSplit::Validation => view.validation_ids.clone(),
            FusionFitSplit::TrainValidation => view.train_ids.iter().chain(&view.validation_ids).cloned().collect(),
        };
        let train_vecs = self.fused_split(acoustic, text, &fit_ids)?;
        let test_vecs = self.fused_split(acoustic, text, &view.test_ids)?;
        let forest_cfg = ForestConfig {
            seed: mix(
                run_seed(self.config.seed, fold, Modality::Bimodal),
                self.config.forest.seed,
            ),
            ..self.config.forest.clone()
        };
        log::info!(
            "bimodal/{monitor}/fold{fold}: fitting {} trees on {} vectors",
            forest_cfg.num_trees,
            train_vecs.len()
        );
        let forest = fit_forest(&train_vecs, &forest_cfg)?;
        let mut cm = ConfusionMatrix::new();
        for v in &test_vecs {
            cm.add(v.label, forest.predict(&v.values)?);
        }
        let test = report(&cm)?;

        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let described = serde_json::json!({
            "experiment": self.config,
            "modality": Modality::Bimodal,
            "monitor": monitor,
            "fold": fold,
            "validation_fold": val_fold,
            "forest": forest_cfg,
        });
        let cfg_path = dir.join("config.json");
        std::fs::write(
            &cfg_path,
            serde_json::to_string_pretty(&described).expect("json value serializes"),
        )
        .map_err(|e| Error::io(&cfg_path, e))?;
        crate::fusion::save_fused(dir.join("train_fused.mf60"), &train_vecs)?;
        forest.save(dir.join("forest.json"))?;
        let summary = RunSummary {
            modality: Modality::Bimodal,
            monitor,
            fold,
            validation_fold: val_fold,
            best_epoch: None,
            epochs_run: None,
            test,
        };
        write_summary(&dir, &summary)?;
        log::info!("bimodal/{monitor}/fold{fold}: test UA {:.4}", test.ua);
        Ok(RunOutcome {
            modality: Modality::Bimodal,
            monitor,
            fold,
            skipped: false,
            test,
        })
    }

    /// Collects completed runs into fold-averaged tables.
    pub fn report(&self) -> Result<Report> {
        build_report(&self.config)
    }
}

fn write_summary(dir: &Path, summary: &RunSummary) -> Result<()> {
    let path = dir.join(COMPLETE_MARKER);
    let text = serde_json::to_string_pretty(summary).expect("summary serializes");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_summary(dir: &Path) -> Result<RunSummary> {
    let path = dir.join(COMPLETE_MARKER);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&path, format!("line {}", e.line()), e.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub monitor: Metric,
    /// Fold-averaged test metrics; `None` when any requested fold is missing.
    pub metrics: Option<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub modality: Modality,
    pub folds: Vec<usize>,
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub tables: Vec<ReportTable>,
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// Reads run directories under `config.output_dir`. Modalities without any
/// completed run are left out; a requested cell without all folds is `None`.
pub fn build_report(config: &ExperimentConfig) -> Result<Report> {
    let folds = config.test_folds();
    let mut tables = Vec::new();
    for modality in Modality::ALL {
        let mut any = false;
        let mut rows = Vec::new();
        for &monitor in &config.monitors {
            let mut reports = Vec::new();
            for &fold in &folds {
                let dir = config
                    .output_dir
                    .join("runs")
                    .join(modality.name())
                    .join(monitor.to_string())
                    .join(format!("fold{fold}"));
                if Experiment::is_complete(&dir) {
                    reports.push(read_summary(&dir)?.test);
                }
            }
            any |= !reports.is_empty();
            let metrics = if reports.len() == folds.len() {
                Some(aggregate_folds(&reports)?)
            } else {
                None
            };
            rows.push(ReportRow { monitor, metrics });
        }
        if any {
            tables.push(ReportTable {
                modality,
                folds: folds.clone(),
                rows,
            });
        }
    }
    if tables.is_empty() {
        return Err(Error::invalid(format!(
            "no completed runs under {}",
            config.output_dir.display()
        )));
    }
    Ok(Report { tables })
}

impl Report {
    pub fn table(&self, modality: Modality) -> Option<&ReportTable> {
        self.tables.iter().find(|t| t.modality == modality)
    }

    /// Metrics as fractions rounded to 4 decimals; missing cells are null.
    pub fn to_json(&self) -> serde_json::Value {
        let tables: Vec<_> = self
            .tables
            .iter()
            .map(|t| {
                let rows: Vec<_> = t
                    .rows
                    .iter()
                    .map(|r| {
                        let mut row = serde_json::Map::new();
                        row.insert("monitor".into(), serde_json::json!(r.monitor));
                        for metric in Metric::ALL {
                            let v = r.metrics.map(|m| round4(m.get(metric)));
                            row.insert(metric.short_name().into(), serde_json::json!(v));
                        }
                        serde_json::Value::Object(row)
                    })
                    .collect();
                serde_json::json!({ "modality": t.modality, "folds": t.folds, "rows": rows })
            })
            .collect();
        serde_json::json!({ "tables": tables })
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).expect("json value serializes")
    }

    /// Percentages with one decimal, derived from the rounded JSON values so
    /// both renderings agree.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for t in &self.tables {
            s.push_str(&format!("{} ({} folds)\n", t.modality, t.folds.len()));
            s.push_str(&format!("{:<10}", "Monitor"));
            for metric in Metric::ALL {
                s.push_str(&format!("{:>7}", metric.short_name()));
            }
            s.push('\n');
            for r in &t.rows {
                s.push_str(&format!("{:<10}", r.monitor.short_name()));
                for metric in Metric::ALL {
                    let cell = match r.metrics {
                        Some(m) => format!("{:.1}", round4(m.get(metric)) * 100.0),
                        None => "--".to_string(),
                    };
                    s.push_str(&format!("{cell:>7}"));
                }
                s.push('\n');
            }
            s.push('\n');
        }
        s
    }

    /// Writes `report.json` and `report.txt`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for (name, text) in [("report.json", self.to_json_string()), ("report.txt", self.render())] {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Acoustic and text training, fusion, and the report, in one call.
pub fn run_pipeline(config: ExperimentConfig, force: bool) -> Result<Report> {
    let exp = Experiment::open(config, force)?;
    exp.train_modality(Modality::Acoustic, force)?;
    exp.train_modality(Modality::Text, force)?;
    exp.fuse(force)?;
    let report = exp.report()?;
    report.write(&exp.config.output_dir)?;
    Ok(report)
}
