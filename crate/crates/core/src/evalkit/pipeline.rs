use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, species_hits, QueryOutcome};
use crate::dataset::{LeafSample, SampleLabel, Taxonomy};
use crate::error::{Error, Result};
use crate::hclassifier::{ClassificationReport, Classifier};
use crate::metricnet::{
    train, EmbeddingVector, ModelMeta, SiameseModel, TrainConfig, DEFAULT_BACKBONE, DEFAULT_EMBEDDING_DIM,
};
use crate::pairgen::{generate_pairs, Grouping, PairSet, PairSpec};
use crate::preprocess::{augment_rotations, View, ViewPair};
use crate::refstore::{select_references, ReferenceBudget, ReferenceEntry, ReferenceSet};

/// Everything needed to train one of the two models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub grouping: Grouping,
    pub view: View,
    pub backbone_id: String,
    pub embedding_dim: usize,
    pub positive_pairs: usize,
    pub negative_pairs: usize,
    pub allow_replacement: bool,
    /// Seed of the weight initialization; pair sampling uses `train.seed`.
    pub init_seed: u64,
    pub train: TrainConfig,
}

impl StageConfig {
    fn with(grouping: Grouping, view: View) -> StageConfig {
        StageConfig {
            grouping,
            view,
            backbone_id: DEFAULT_BACKBONE.into(),
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            positive_pairs: 400,
            negative_pairs: 600,
            allow_replacement: false,
            init_seed: 0,
            train: TrainConfig::default(),
        }
    }

    /// Genus similarity on the global view.
    pub fn genus() -> StageConfig {
        StageConfig::with(Grouping::Genus, View::Global)
    }

    /// Species similarity on the local view.
    pub fn species() -> StageConfig {
        StageConfig::with(Grouping::Species, View::Local)
    }
}

/// Rotated copies per training sample on the synthetic benchmark, and their
/// angle range. Stripe orientation is a species cue there, so angles stay small.
pub const BENCHMARK_ROTATIONS: usize = 3;
pub const BENCHMARK_MAX_ROTATION_DEGREES: f64 = 12.0;

/// Stage settings for the synthetic benchmark: the genus model converges in a
/// few epochs, the species model needs a larger step.
pub fn benchmark_stages() -> (StageConfig, StageConfig) {
    let mut genus = StageConfig::genus();
    genus.train.epochs = 3;
    let mut species = StageConfig::species();
    species.train.epochs = 10;
    species.train.learning_rate = 0.01;
    (genus, species)
}

#[derive(Clone, Debug)]
pub struct StageOutcome {
    pub model: SiameseModel,
    pub loss_trace: Vec<f64>,
    pub pairs: PairSet,
}

/// Samples pairs, fits input normalization and trains a fresh model.
pub fn train_stage(
    samples: &[(SampleLabel<'_>, &ViewPair)],
    taxonomy: &Taxonomy,
    stage: &StageConfig,
) -> Result<StageOutcome> {
    let labels: Vec<SampleLabel<'_>> = samples.iter().map(|(l, _)| *l).collect();
    let spec = PairSpec {
        grouping: stage.grouping,
        view: stage.view,
        positive_count: stage.positive_pairs,
        negative_count: stage.negative_pairs,
        seed: stage.train.seed,
        allow_replacement: stage.allow_replacement,
    };
    let pairs = generate_pairs(&labels, taxonomy, &spec)?;
    fit_stage(samples, stage, pairs)
}

/// Trains a fresh model on given pairs; every pair id must be among `samples`.
pub fn fit_stage(samples: &[(SampleLabel<'_>, &ViewPair)], stage: &StageConfig, pairs: PairSet) -> Result<StageOutcome> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("no training samples".into()))?;
    let (w, h) = first.1.get(stage.view).dimensions();
    if pairs.spec.view != stage.view || pairs.spec.grouping != stage.grouping {
        return Err(Error::Validation(format!(
            "pairs were sampled for {} on the {} view, stage wants {} on the {} view",
            pairs.spec.grouping, pairs.spec.view, stage.grouping, stage.view
        )));
    }
    let views: HashMap<String, RgbImage> = samples
        .iter()
        .map(|(l, v)| (l.sample_id.to_owned(), v.get(stage.view).clone()))
        .collect();
    let meta = ModelMeta {
        view: stage.view,
        grouping: stage.grouping,
        input_height: h,
        input_width: w,
        embedding_dim: stage.embedding_dim,
        backbone_id: stage.backbone_id.clone(),
    };
    let mut model = SiameseModel::new(meta, stage.init_seed)?;
    model.fit_normalization(samples.iter().map(|(_, v)| v.get(stage.view)));
    let out = train(model, &pairs.pairs, &views, &stage.train)?;
    Ok(StageOutcome {
        model: out.model,
        loss_trace: out.loss_trace,
        pairs,
    })
}

/// The samples followed by `copies` rotated versions of each, with angles
/// within `max_degrees`; the rotation seed of sample `i` is `seed + i`.
pub fn with_rotations(samples: &[LeafSample], copies: usize, max_degrees: f64, seed: u64) -> Vec<LeafSample> {
    let mut out = samples.to_vec();
    for (i, s) in samples.iter().enumerate() {
        out.extend(augment_rotations(s, copies, max_degrees, seed.wrapping_add(i as u64)));
    }
    out
}

/// A labeled sample with both embeddings cached.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedSample {
    pub sample_id: String,
    pub species_id: String,
    pub global: EmbeddingVector,
    pub local: EmbeddingVector,
}

impl EmbeddedSample {
    pub fn label(&self) -> SampleLabel<'_> {
        SampleLabel {
            sample_id: &self.sample_id,
            species_id: &self.species_id,
        }
    }
}

pub fn embed_all(
    samples: &[(SampleLabel<'_>, &ViewPair)],
    global: &SiameseModel,
    local: &SiameseModel,
) -> Result<Vec<EmbeddedSample>> {
    samples
        .par_iter()
        .map(|(l, v)| {
            Ok(EmbeddedSample {
                sample_id: l.sample_id.to_owned(),
                species_id: l.species_id.to_owned(),
                global: global.embed(&v.global_view)?,
                local: local.embed(&v.local_view)?,
            })
        })
        .collect()
}

/// Draws references from already embedded samples. Returns the set and the
/// selection warnings.
pub fn refset_from_embedded(
    pool: &[EmbeddedSample],
    taxonomy: &Taxonomy,
    budget: ReferenceBudget,
    seed: u64,
    global: &SiameseModel,
    local: &SiameseModel,
) -> Result<(ReferenceSet, Vec<String>)> {
    let labels: Vec<SampleLabel<'_>> = pool.iter().map(EmbeddedSample::label).collect();
    let selection = select_references(&labels, taxonomy, budget, seed)?;
    let by_id: BTreeMap<&str, &EmbeddedSample> = pool.iter().map(|e| (e.sample_id.as_str(), e)).collect();
    let entries = selection
        .sample_ids
        .iter()
        .map(|id| {
            let e = by_id[id.as_str()];
            ReferenceEntry {
                sample_id: e.sample_id.clone(),
                species_id: e.species_id.clone(),
                genus_id: taxonomy.genus_of(&e.species_id).unwrap_or_default().to_owned(),
                global_embedding: e.global.clone(),
                local_embedding: e.local.clone(),
            }
        })
        .collect();
    let set = ReferenceSet::from_entries(entries, budget.count(), global.fingerprint(), local.fingerprint())?;
    Ok((set, selection.warnings))
}

/// Classification of one labeled query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query_id: String,
    pub true_species: String,
    pub true_genus: String,
    /// Every candidate species, best first.
    pub ranking: Vec<String>,
    /// Whether the true genus appeared in the stage-1 list.
    pub stage1_hit: bool,
    pub candidate_species: usize,
    /// Wall time of this query, excluding model loading.
    pub seconds: f64,
}

impl QueryResult {
    fn from_report(report: &ClassificationReport, true_species: &str, taxonomy: &Taxonomy, seconds: f64) -> Self {
        let true_genus = taxonomy.genus_of(true_species).unwrap_or_default().to_owned();
        QueryResult {
            query_id: report.query_id.clone(),
            true_species: true_species.to_owned(),
            stage1_hit: report.genus_weights.contains_key(&true_genus),
            true_genus,
            ranking: report.species_scores.items.iter().map(|s| s.species_id.clone()).collect(),
            candidate_species: report.species_scores.items.len(),
            seconds,
        }
    }

    pub fn outcome(&self) -> QueryOutcome {
        QueryOutcome {
            true_species: self.true_species.clone(),
            ranking: self.ranking.clone(),
        }
    }
}

/// Classifies cached query embeddings (timing covers both ranking stages).
pub fn evaluate_embedded(
    classifier: &Classifier<'_>,
    queries: &[EmbeddedSample],
    taxonomy: &Taxonomy,
) -> Result<Vec<QueryResult>> {
    queries
        .par_iter()
        .map(|q| {
            let t = Instant::now();
            let report = classifier.classify_embeddings(&q.sample_id, &q.global, &q.local)?;
            let secs = t.elapsed().as_secs_f64();
            Ok(QueryResult::from_report(&report, &q.species_id, taxonomy, secs))
        })
        .collect()
}

/// Classifies query views (timing covers embedding and both ranking stages).
pub fn evaluate_views(
    classifier: &Classifier<'_>,
    queries: &[(SampleLabel<'_>, &ViewPair)],
    taxonomy: &Taxonomy,
) -> Result<Vec<QueryResult>> {
    queries
        .par_iter()
        .map(|(l, v)| {
            let t = Instant::now();
            let report = classifier.classify_views(l.sample_id, v)?;
            let secs = t.elapsed().as_secs_f64();
            Ok(QueryResult::from_report(&report, l.species_id, taxonomy, secs))
        })
        .collect()
}

pub const REPORTED_TOP_K: [usize; 3] = [1, 3, 5];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub queries: usize,
    /// Accuracy keyed by top-k.
    pub accuracy: BTreeMap<usize, f64>,
    /// Mean reciprocal rank (the S score with one picture per plant).
    pub mean_reciprocal_rank: f64,
    pub stage1_hit_rate: f64,
    pub mean_candidate_species: f64,
    pub mean_query_seconds: f64,
    /// Per species: (top-1 hits, queries).
    pub species_hits: BTreeMap<String, (usize, usize)>,
}

impl EvalSummary {
    pub fn new(results: &[QueryResult], top_k: &[usize]) -> EvalSummary {
        let outcomes: Vec<QueryOutcome> = results.iter().map(QueryResult::outcome).collect();
        let n = results.len().max(1) as f64;
        EvalSummary {
            queries: results.len(),
            accuracy: top_k.iter().map(|&k| (k, accuracy(&outcomes, k))).collect(),
            mean_reciprocal_rank: outcomes.iter().map(QueryOutcome::reciprocal_rank).sum::<f64>() / n,
            stage1_hit_rate: results.iter().filter(|r| r.stage1_hit).count() as f64 / n,
            mean_candidate_species: results.iter().map(|r| r.candidate_species as f64).sum::<f64>() / n,
            mean_query_seconds: results.iter().map(|r| r.seconds).sum::<f64>() / n,
            species_hits: species_hits(&outcomes),
        }
    }

    pub fn top(&self, k: usize) -> f64 {
        self.accuracy.get(&k).copied().unwrap_or(f64::NAN)
    }
}
