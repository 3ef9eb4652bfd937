use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pipeline::{
    embed_all, evaluate_embedded, evaluate_views, refset_from_embedded, train_stage, EmbeddedSample, EvalSummary,
    QueryResult, StageConfig, REPORTED_TOP_K,
};
use super::report::{line_plot_svg, write_json, write_text, Series};
use crate::dataset::{SampleLabel, Taxonomy};
use crate::error::{Error, Result};
use crate::hclassifier::{Aggregation, Classifier, ClassifierConfig};
use crate::metricnet::SiameseModel;
use crate::pairgen::pool_sizes;
use crate::preprocess::ViewPair;
use crate::refstore::{ReferenceBudget, ReferenceSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub n_r: usize,
    pub k: usize,
    pub references: usize,
    pub stage1_hit_rate: f64,
    pub top1: f64,
    pub top5: f64,
    pub mean_reciprocal_rank: f64,
    pub mean_candidate_species: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub seed: u64,
    pub global_fingerprint: String,
    pub local_fingerprint: String,
    pub n_r_values: Vec<usize>,
    pub k_values: Vec<usize>,
    pub cells: Vec<SweepCell>,
}

/// Grid over reference counts and stage-1 list lengths.
#[allow(clippy::too_many_arguments)]
pub fn sweep_references(
    train: &[EmbeddedSample],
    test: &[EmbeddedSample],
    taxonomy: &Taxonomy,
    global: &SiameseModel,
    local: &SiameseModel,
    n_r_values: &[usize],
    k_values: &[usize],
    aggregation: Aggregation,
    seed: u64,
) -> Result<SweepReport> {
    let mut cells = Vec::new();
    for &n_r in n_r_values {
        let (refs, _) = refset_from_embedded(train, taxonomy, ReferenceBudget::PerSpecies(n_r), seed, global, local)?;
        for &k in k_values {
            let cfg = ClassifierConfig {
                k,
                top_n: 5,
                aggregation,
            };
            let classifier = Classifier::new(global, local, &refs, cfg)?;
            let s = EvalSummary::new(&evaluate_embedded(&classifier, test, taxonomy)?, &REPORTED_TOP_K);
            cells.push(SweepCell {
                n_r,
                k,
                references: refs.len(),
                stage1_hit_rate: s.stage1_hit_rate,
                top1: s.top(1),
                top5: s.top(5),
                mean_reciprocal_rank: s.mean_reciprocal_rank,
                mean_candidate_species: s.mean_candidate_species,
            });
        }
    }
    Ok(SweepReport {
        seed,
        global_fingerprint: global.fingerprint(),
        local_fingerprint: local.fingerprint(),
        n_r_values: n_r_values.to_vec(),
        k_values: k_values.to_vec(),
        cells,
    })
}

impl SweepReport {
    pub fn cells_for(&self, n_r: usize) -> impl Iterator<Item = &SweepCell> {
        self.cells.iter().filter(move |c| c.n_r == n_r)
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("n_r,k,references,stage1_hit_rate,top1,top5,mean_reciprocal_rank,mean_candidate_species\n");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                c.n_r,
                c.k,
                c.references,
                c.stage1_hit_rate,
                c.top1,
                c.top5,
                c.mean_reciprocal_rank,
                c.mean_candidate_species
            );
        }
        out
    }

    /// Top-1 accuracy as a `N_r x k` table.
    pub fn grid_csv(&self) -> String {
        let mut out = String::from("n_r");
        for k in &self.k_values {
            let _ = write!(out, ",k={k}");
        }
        out.push('\n');
        for &n_r in &self.n_r_values {
            let _ = write!(out, "{n_r}");
            for c in self.cells_for(n_r) {
                let _ = write!(out, ",{}", c.top1);
            }
            out.push('\n');
        }
        out
    }

    fn series(&self, f: impl Fn(&SweepCell) -> f64) -> Vec<Series> {
        self.n_r_values
            .iter()
            .map(|&n_r| Series {
                name: format!("N_r={n_r}"),
                points: self.cells_for(n_r).map(|c| (c.k as f64, f(c))).collect(),
            })
            .collect()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("sweep.json"), self)?;
        write_text(&dir.join("sweep.csv"), &self.to_csv())?;
        write_text(&dir.join("sweep_grid.csv"), &self.grid_csv())?;
        write_text(
            &dir.join("sweep_accuracy.svg"),
            &line_plot_svg("Top-1 accuracy vs k", "k", "accuracy", &self.series(|c| c.top1)),
        )?;
        write_text(
            &dir.join("sweep_stage1.svg"),
            &line_plot_svg("Stage-1 genus hit rate vs k", "k", "hit rate", &self.series(|c| c.stage1_hit_rate)),
        )?;
        write_text(
            &dir.join("sweep_candidates.svg"),
            &line_plot_svg(
                "Candidate species vs k",
                "k",
                "mean candidates",
                &self.series(|c| c.mean_candidate_species),
            ),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityRun {
    pub seed: u64,
    pub top1: f64,
    pub top5: f64,
    pub mean_reciprocal_rank: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub n_r: usize,
    pub k: usize,
    pub base_seed: u64,
    pub global_fingerprint: String,
    pub local_fingerprint: String,
    pub runs: Vec<StabilityRun>,
    pub mean_top1: f64,
    /// max - min top-1 accuracy over runs.
    pub spread_top1: f64,
}

/// Repeats reference selection with seeds `base_seed..base_seed + repetitions`.
#[allow(clippy::too_many_arguments)]
pub fn stability_run(
    pool: &[EmbeddedSample],
    test: &[EmbeddedSample],
    taxonomy: &Taxonomy,
    global: &SiameseModel,
    local: &SiameseModel,
    config: &ClassifierConfig,
    n_r: usize,
    repetitions: usize,
    base_seed: u64,
) -> Result<StabilityReport> {
    if repetitions == 0 {
        return Err(Error::InvalidArgument("repetitions must be >= 1".into()));
    }
    let mut runs = Vec::with_capacity(repetitions);
    for i in 0..repetitions as u64 {
        let seed = base_seed + i;
        let (refs, _) = refset_from_embedded(pool, taxonomy, ReferenceBudget::PerSpecies(n_r), seed, global, local)?;
        let classifier = Classifier::new(global, local, &refs, config.clone())?;
        let s = EvalSummary::new(&evaluate_embedded(&classifier, test, taxonomy)?, &REPORTED_TOP_K);
        runs.push(StabilityRun {
            seed,
            top1: s.top(1),
            top5: s.top(5),
            mean_reciprocal_rank: s.mean_reciprocal_rank,
        });
    }
    let top1: Vec<f64> = runs.iter().map(|r| r.top1).collect();
    let max = top1.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = top1.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(StabilityReport {
        n_r,
        k: config.k,
        base_seed,
        global_fingerprint: global.fingerprint(),
        local_fingerprint: local.fingerprint(),
        mean_top1: top1.iter().sum::<f64>() / top1.len() as f64,
        spread_top1: max - min,
        runs,
    })
}

impl StabilityReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("run,seed,top1,top5,mean_reciprocal_rank\n");
        for (i, r) in self.runs.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                i + 1,
                r.seed,
                r.top1,
                r.top5,
                r.mean_reciprocal_rank
            );
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("stability.json"), self)?;
        write_text(&dir.join("stability.csv"), &self.to_csv())
    }
}

/// References and held-out queries of species added in one step.
pub struct ScaleBatch<'a> {
    pub name: String,
    pub references: Vec<(SampleLabel<'a>, &'a ViewPair)>,
    pub queries: Vec<(SampleLabel<'a>, &'a ViewPair)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleStep {
    pub name: String,
    pub species: usize,
    pub references: usize,
    pub original_top1: f64,
    pub original_top5: f64,
    /// Top-1 accuracy on the queries of every species added so far.
    pub new_top1: Option<f64>,
    pub new_queries: usize,
    /// Per-query wall time from views to ranking (embedding included).
    pub mean_query_seconds: f64,
    /// Per-query wall time of the two ranking stages alone.
    pub mean_ranking_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalabilityReport {
    pub k: usize,
    pub global_fingerprint: String,
    pub local_fingerprint: String,
    pub steps: Vec<ScaleStep>,
    /// Fingerprints recomputed after the last step equal the initial ones.
    pub models_unchanged: bool,
    /// Baseline original-species top-1 minus the final step's.
    pub original_degradation: f64,
}

fn min_mean_seconds(runs: impl Iterator<Item = Result<Vec<QueryResult>>>) -> Result<(f64, Vec<QueryResult>)> {
    let mut best = f64::INFINITY;
    let mut last = Vec::new();
    for r in runs {
        let r = r?;
        let mean = r.iter().map(|q| q.seconds).sum::<f64>() / r.len().max(1) as f64;
        best = best.min(mean);
        last = r;
    }
    Ok((best, last))
}

/// Grows the gallery batch by batch with [`ReferenceSet::add_species`] and
/// re-evaluates. Timings are the fastest of `timing_repeats` passes.
#[allow(clippy::too_many_arguments)]
pub fn scalability_run(
    base: &ReferenceSet,
    batches: &[ScaleBatch<'_>],
    original_queries: &[(SampleLabel<'_>, &ViewPair)],
    taxonomy: &Taxonomy,
    global: &SiameseModel,
    local: &SiameseModel,
    config: &ClassifierConfig,
    timing_repeats: usize,
) -> Result<ScalabilityReport> {
    let fingerprints = (global.fingerprint(), local.fingerprint());
    let original_embedded = embed_all(original_queries, global, local)?;
    let mut refs = base.clone();
    let mut new_queries: Vec<(SampleLabel<'_>, &ViewPair)> = Vec::new();
    let mut steps = Vec::new();
    let repeats = timing_repeats.max(1);
    for step in 0..=batches.len() {
        let name = if step == 0 {
            "base".to_owned()
        } else {
            let b = &batches[step - 1];
            refs = refs.add_species(&b.references, taxonomy, global, local)?;
            new_queries.extend(b.queries.iter().copied());
            b.name.clone()
        };
        let classifier = Classifier::new(global, local, &refs, config.clone())?;
        let (query_secs, original) =
            min_mean_seconds((0..repeats).map(|_| evaluate_views(&classifier, original_queries, taxonomy)))?;
        let (ranking_secs, _) = min_mean_seconds(
            (0..repeats).map(|_| evaluate_embedded(&classifier, &original_embedded, taxonomy)),
        )?;
        let orig = EvalSummary::new(&original, &REPORTED_TOP_K);
        let new_top1 = if new_queries.is_empty() {
            None
        } else {
            let r = evaluate_views(&classifier, &new_queries, taxonomy)?;
            Some(EvalSummary::new(&r, &[1]).top(1))
        };
        steps.push(ScaleStep {
            name,
            species: refs.species().len(),
            references: refs.len(),
            original_top1: orig.top(1),
            original_top5: orig.top(5),
            new_top1,
            new_queries: new_queries.len(),
            mean_query_seconds: query_secs,
            mean_ranking_seconds: ranking_secs,
        });
    }
    let degradation = steps[0].original_top1 - steps.last().unwrap().original_top1;
    Ok(ScalabilityReport {
        k: config.k,
        models_unchanged: (global.fingerprint(), local.fingerprint()) == fingerprints,
        global_fingerprint: fingerprints.0,
        local_fingerprint: fingerprints.1,
        steps,
        original_degradation: degradation,
    })
}

impl ScalabilityReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "step,species,references,original_top1,original_top5,new_top1,new_queries,mean_query_seconds,mean_ranking_seconds\n",
        );
        for s in &self.steps {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                s.name,
                s.species,
                s.references,
                s.original_top1,
                s.original_top5,
                s.new_top1.map_or(String::new(), |v| v.to_string()),
                s.new_queries,
                s.mean_query_seconds,
                s.mean_ranking_seconds
            );
        }
        out
    }

    /// Per-query time grows more slowly than the gallery, measured against the first step.
    pub fn sublinear_time(&self) -> bool {
        let first = &self.steps[0];
        self.steps[1..].iter().all(|s| {
            s.mean_query_seconds / first.mean_query_seconds < s.references as f64 / first.references as f64
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("scalability.json"), self)?;
        write_text(&dir.join("scalability.csv"), &self.to_csv())?;
        let acc = Series {
            name: "original species".into(),
            points: self
                .steps
                .iter()
                .map(|s| (s.species as f64, s.original_top1))
                .collect(),
        };
        let new = Series {
            name: "added species".into(),
            points: self
                .steps
                .iter()
                .filter_map(|s| s.new_top1.map(|v| (s.species as f64, v)))
                .collect(),
        };
        write_text(
            &dir.join("scalability_accuracy.svg"),
            &line_plot_svg("Top-1 accuracy vs species in gallery", "species", "accuracy", &[acc, new]),
        )?;
        let time = Series {
            name: "per query".into(),
            points: self
                .steps
                .iter()
                .map(|s| (s.references as f64, s.mean_query_seconds * 1e3))
                .collect(),
        };
        write_text(
            &dir.join("scalability_time.svg"),
            &line_plot_svg("Query time vs gallery size", "references", "ms", &[time]),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnbalancedRow {
    pub cap: usize,
    pub train_samples: usize,
    pub top1: Option<f64>,
    pub top5: Option<f64>,
    pub warnings: Vec<String>,
    /// Set when training could not run at this cap.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnbalancedReport {
    pub seed: u64,
    pub n_r: usize,
    pub k: usize,
    pub test_ids: Vec<String>,
    pub rows: Vec<UnbalancedRow>,
}

/// Keeps at most `cap` training samples per species (seeded choice).
pub fn cap_per_species<'a, T: Copy>(
    samples: &[(SampleLabel<'a>, T)],
    cap: usize,
    seed: u64,
) -> Vec<(SampleLabel<'a>, T)> {
    let mut sorted: Vec<(SampleLabel<'a>, T)> = samples.to_vec();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let sp = sorted[i].0.species_id;
        let j = sorted[i..].iter().position(|s| s.0.species_id != sp).map_or(sorted.len(), |p| i + p);
        let mut group = sorted[i..j].to_vec();
        group.shuffle(&mut rng);
        group.truncate(cap);
        out.extend(group);
        i = j;
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// Shrinks requested pair counts to what the capped data can supply.
fn fit_pairs(
    samples: &[(SampleLabel<'_>, &ViewPair)],
    taxonomy: &Taxonomy,
    stage: &StageConfig,
    warnings: &mut Vec<String>,
) -> Result<StageConfig> {
    let mut stage = stage.clone();
    if stage.allow_replacement {
        return Ok(stage);
    }
    let labels: Vec<SampleLabel<'_>> = samples.iter().map(|(l, _)| *l).collect();
    let pools = pool_sizes(&labels, taxonomy, stage.grouping)?;
    let pos = (stage.positive_pairs as u64).min(pools.positive) as usize;
    let neg = (stage.negative_pairs as u64).min(pools.negative) as usize;
    let pos = pos.min(neg);
    if (pos, neg) != (stage.positive_pairs, stage.negative_pairs) {
        warnings.push(format!(
            "{} stage: pairs reduced to {pos} positive / {neg} negative (pools {} / {})",
            stage.grouping, pools.positive, pools.negative
        ));
    }
    stage.positive_pairs = pos;
    stage.negative_pairs = neg;
    Ok(stage)
}

/// Retrains both models at each per-species cap and evaluates on the
/// untouched test set.
#[allow(clippy::too_many_arguments)]
pub fn unbalanced_run(
    train: &[(SampleLabel<'_>, &ViewPair)],
    test: &[(SampleLabel<'_>, &ViewPair)],
    taxonomy: &Taxonomy,
    caps: &[usize],
    genus_stage: &StageConfig,
    species_stage: &StageConfig,
    config: &ClassifierConfig,
    n_r: usize,
    seed: u64,
) -> Result<UnbalancedReport> {
    let mut rows = Vec::new();
    for &cap in caps {
        let capped = cap_per_species(train, cap, seed);
        let mut warnings = Vec::new();
        let attempt = (|| -> Result<EvalSummary> {
            let g = fit_pairs(&capped, taxonomy, genus_stage, &mut warnings)?;
            let s = fit_pairs(&capped, taxonomy, species_stage, &mut warnings)?;
            if g.positive_pairs == 0 || s.positive_pairs == 0 {
                return Err(Error::InsufficientSamples(format!(
                    "cap {cap} leaves no positive pairs for at least one stage"
                )));
            }
            let a = train_stage(&capped, taxonomy, &g)?.model;
            let b = train_stage(&capped, taxonomy, &s)?.model;
            let pool = embed_all(&capped, &a, &b)?;
            let (refs, w) = refset_from_embedded(&pool, taxonomy, ReferenceBudget::PerSpecies(n_r), seed, &a, &b)?;
            warnings.extend(w);
            let classifier = Classifier::new(&a, &b, &refs, config.clone())?;
            let queries = embed_all(test, &a, &b)?;
            Ok(EvalSummary::new(
                &evaluate_embedded(&classifier, &queries, taxonomy)?,
                &REPORTED_TOP_K,
            ))
        })();
        let (top1, top5, error) = match attempt {
            Ok(s) => (Some(s.top(1)), Some(s.top(5)), None),
            Err(e) => (None, None, Some(e.to_string())),
        };
        rows.push(UnbalancedRow {
            cap,
            train_samples: capped.len(),
            top1,
            top5,
            warnings,
            error,
        });
    }
    let mut test_ids: Vec<String> = test.iter().map(|(l, _)| l.sample_id.to_owned()).collect();
    test_ids.sort();
    Ok(UnbalancedReport {
        seed,
        n_r,
        k: config.k,
        test_ids,
        rows,
    })
}

impl UnbalancedReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cap,train_samples,top1,top5,error\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.cap,
                r.train_samples,
                opt(r.top1),
                opt(r.top5),
                r.error.as_deref().unwrap_or("").replace(',', ";")
            );
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("unbalanced.json"), self)?;
        write_text(&dir.join("unbalanced.csv"), &self.to_csv())
    }
}
