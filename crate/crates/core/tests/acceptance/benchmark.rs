//! Criteria on the default synthetic benchmark (trained once, shared).

use std::path::PathBuf;
use std::time::Instant;

use twoview_core::dataset::{LeafSample, SampleLabel, Taxonomy};
use twoview_core::evalkit::{
    benchmark_stages, BENCHMARK_MAX_ROTATION_DEGREES, BENCHMARK_ROTATIONS,
    embed_all, evaluate_embedded, refset_from_embedded, scalability_run, stability_run, sweep_references,
    train_stage, with_rotations, write_json, EmbeddedSample, EvalSummary, ScaleBatch, StageConfig,
    REPORTED_TOP_K,
};
use twoview_core::hclassifier::{flat_ranking, Aggregation, Classifier, ClassifierConfig};
use twoview_core::metricnet::SiameseModel;
use twoview_core::preprocess::{View, ViewConfig, ViewPair};
use twoview_core::refstore::{labeled_views, views_of, ReferenceBudget, ReferenceSet};
use twoview_core::synthbench::{generate, SynthSpec};

use crate::{ensure, Verdict};

const N_R: usize = 6;
const K: usize = 30;
const SEED: u64 = 0;

pub struct Bench {
    spec: SynthSpec,
    tax: Taxonomy,
    test: Vec<LeafSample>,
    test_views: Vec<ViewPair>,
    global: SiameseModel,
    local: SiameseModel,
    flat: SiameseModel,
    /// Original training samples, embedded.
    pool: Vec<EmbeddedSample>,
    /// Training samples plus their rotated copies, embedded.
    augmented_pool: Vec<EmbeddedSample>,
    queries: Vec<EmbeddedSample>,
    flat_refs: Vec<(String, twoview_core::metricnet::EmbeddingVector)>,
    flat_queries: Vec<(String, twoview_core::metricnet::EmbeddingVector)>,
    refs: ReferenceSet,
    out: Option<PathBuf>,
}

fn stages() -> (StageConfig, StageConfig, StageConfig) {
    let (genus, species) = benchmark_stages();
    let flat = StageConfig {
        view: View::Global,
        ..species.clone()
    };
    (genus, species, flat)
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

impl Bench {
    pub fn build() -> Result<Bench, String> {
        let spec = SynthSpec::default();
        let split = generate(&spec).map_err(err)?;
        let tax = Taxonomy::new(split.taxonomy.clone()).map_err(err)?;
        let cfg = ViewConfig::default();

        let augmented = with_rotations(&split.train, BENCHMARK_ROTATIONS, BENCHMARK_MAX_ROTATION_DEGREES, SEED);
        let aug_refs: Vec<&LeafSample> = augmented.iter().collect();
        let aug_views = views_of(&aug_refs, &cfg).map_err(err)?;
        let aug_labeled = labeled_views(&aug_refs, &aug_views).map_err(err)?;
        let (genus, species, flat) = stages();
        let global = train_stage(&aug_labeled, &tax, &genus).map_err(err)?.model;
        let local = train_stage(&aug_labeled, &tax, &species).map_err(err)?.model;
        let flat = train_stage(&aug_labeled, &tax, &flat).map_err(err)?.model;

        let n_train = split.train.len();
        let pool_labeled = &aug_labeled[..n_train];
        let test_refs: Vec<&LeafSample> = split.test.iter().collect();
        let test_views = views_of(&test_refs, &cfg).map_err(err)?;
        let test_labeled = labeled_views(&test_refs, &test_views).map_err(err)?;
        let augmented_pool = embed_all(&aug_labeled, &global, &local).map_err(err)?;
        let pool = augmented_pool[..n_train].to_vec();
        let queries = embed_all(&test_labeled, &global, &local).map_err(err)?;
        let (refs, _) =
            refset_from_embedded(&pool, &tax, ReferenceBudget::PerSpecies(N_R), SEED, &global, &local).map_err(err)?;

        let flat_embed = |items: &[(SampleLabel<'_>, &ViewPair)]| -> Result<Vec<_>, String> {
            items
                .iter()
                .map(|(l, v)| Ok((l.species_id.to_owned(), flat.embed(&v.global_view).map_err(err)?)))
                .collect()
        };
        let flat_refs = flat_embed(pool_labeled)?;
        let flat_queries = flat_embed(&test_labeled)?;
        drop(test_labeled);
        Ok(Bench {
            spec,
            tax,
            test: split.test,
            test_views,
            global,
            local,
            flat,
            pool,
            augmented_pool,
            queries,
            flat_refs,
            flat_queries,
            refs,
            out: std::env::var_os("TWOVIEW_ACCEPTANCE_OUT").map(PathBuf::from),
        })
    }
}

impl Bench {
    fn classifier_config(k: usize) -> ClassifierConfig {
        ClassifierConfig {
            k,
            ..ClassifierConfig::default()
        }
    }

    fn test_labeled(&self) -> Vec<(SampleLabel<'_>, &ViewPair)> {
        self.test
            .iter()
            .zip(&self.test_views)
            .map(|(s, v)| (s.label().expect("labeled test sample"), v))
            .collect()
    }

    /// Two-view top-k accuracies against the flat single-view baseline.
    pub fn headline(&self, setup_secs: f64) -> Verdict {
        let t = Instant::now();
        let classifier =
            Classifier::new(&self.global, &self.local, &self.refs, Self::classifier_config(K)).map_err(err)?;
        let results = evaluate_embedded(&classifier, &self.queries, &self.tax).map_err(err)?;
        let summary = EvalSummary::new(&results, &REPORTED_TOP_K);
        let flat_hits = self
            .flat_queries
            .iter()
            .filter(|(truth, q)| {
                let ranking = flat_ranking(q, &self.flat, self.flat_refs.iter().map(|(s, e)| (s.as_str(), e)));
                ranking.first().is_some_and(|(s, _)| s == truth)
            })
            .count();
        let flat_top1 = flat_hits as f64 / self.flat_queries.len() as f64;
        let (t1, t3, t5) = (summary.top(1), summary.top(3), summary.top(5));
        let total = setup_secs + t.elapsed().as_secs_f64();
        if let Some(dir) = &self.out {
            write_json(&dir.join("benchmark_summary.json"), &summary).map_err(err)?;
        }
        let detail = format!(
            "{}x{} species, {} test queries: top-1 {t1:.3} top-3 {t3:.3} top-5 {t5:.3}, flat global-only top-1 {flat_top1:.3}, \
             stage-1 hit rate {:.3}, {total:.0}s incl. training",
            self.spec.num_genera,
            self.spec.species_per_genus,
            summary.queries,
            summary.stage1_hit_rate
        );
        ensure!(t1 >= 0.80, "top-1 below 0.80: {detail}");
        ensure!(t1 >= flat_top1, "two-view below flat baseline: {detail}");
        ensure!(t1 <= t3 && t3 <= t5, "top-k not monotone: {detail}");
        ensure!(total <= 600.0, "over the 600 s budget: {detail}");
        Ok(detail)
    }

    /// Adds twice the original number of species in two batches.
    pub fn scalability(&self) -> Verdict {
        let extra_spec = SynthSpec {
            num_genera: 2 * self.spec.num_genera,
            samples_per_species: 10,
            seed: 1,
            genus_offset: self.spec.num_genera,
            texture_offset: self.spec.num_genera * self.spec.species_per_genus,
            ..self.spec.clone()
        };
        let extra = generate(&extra_spec).map_err(err)?;
        let tax = self.tax.extended(&extra.taxonomy).map_err(err)?;
        let cfg = ViewConfig::default();
        let train: Vec<&LeafSample> = extra.train.iter().collect();
        let test: Vec<&LeafSample> = extra.test.iter().collect();
        let train_views = views_of(&train, &cfg).map_err(err)?;
        let test_views = views_of(&test, &cfg).map_err(err)?;
        let train_labeled = labeled_views(&train, &train_views).map_err(err)?;
        let test_labeled = labeled_views(&test, &test_views).map_err(err)?;

        // models go through files, as they would between CLI invocations
        let dir = tempfile::tempdir().map_err(err)?;
        let (gp, lp) = (dir.path().join("global.scnn"), dir.path().join("local.scnn"));
        self.global.save(&gp).map_err(err)?;
        self.local.save(&lp).map_err(err)?;
        let before = (std::fs::read(&gp).map_err(err)?, std::fs::read(&lp).map_err(err)?);
        let global = SiameseModel::load(&gp).map_err(err)?;
        let local = SiameseModel::load(&lp).map_err(err)?;

        let half = self.spec.num_genera;
        let batch = |first: usize, last: usize, name: &str| {
            let in_batch = |l: &SampleLabel<'_>| {
                let g: usize = tax.genus_of(l.species_id).unwrap()[1..].parse().unwrap();
                (first..last).contains(&g)
            };
            ScaleBatch {
                name: name.into(),
                references: train_labeled.iter().filter(|(l, _)| in_batch(l)).copied().collect(),
                queries: test_labeled.iter().filter(|(l, _)| in_batch(l)).copied().collect(),
            }
        };
        let batches = [
            batch(half, 2 * half, "batch1"),
            batch(2 * half, 3 * half, "batch2"),
        ];
        let report = scalability_run(
            &self.refs,
            &batches,
            &self.test_labeled(),
            &tax,
            &global,
            &local,
            &Self::classifier_config(K),
            3,
        )
        .map_err(err)?;
        let after = (std::fs::read(&gp).map_err(err)?, std::fs::read(&lp).map_err(err)?);
        let files_unchanged = before == after && global.to_bytes() == before.0 && local.to_bytes() == before.1;
        if let Some(out) = &self.out {
            report.write(&out.join("scalability")).map_err(err)?;
        }

        let last = report.steps.last().unwrap();
        let chance = 1.0 / last.species as f64;
        let new_top1 = last.new_top1.unwrap_or(0.0);
        let sizes: Vec<String> = report
            .steps
            .iter()
            .map(|s| format!("{} refs {:.2} ms", s.references, s.mean_query_seconds * 1e3))
            .collect();
        let detail = format!(
            "{} -> {} species; new-species top-1 {new_top1:.3} (chance {chance:.3}); original top-1 {:.3} -> {:.3} \
             (degradation {:.3} <= 0.08); query time [{}]; model files unchanged: {}",
            report.steps[0].species,
            last.species,
            report.steps[0].original_top1,
            last.original_top1,
            report.original_degradation,
            sizes.join(", "),
            files_unchanged && report.models_unchanged
        );
        ensure!(files_unchanged && report.models_unchanged, "models changed: {detail}");
        ensure!(last.species == 3 * report.steps[0].species, "expected 2x new species: {detail}");
        ensure!(new_top1 > chance, "new species at chance: {detail}");
        ensure!(report.original_degradation <= 0.08, "degradation too large: {detail}");
        ensure!(report.steps.len() == 3 && report.sublinear_time(), "query time not sub-linear: {detail}");
        Ok(detail)
    }

    /// Five reference draws from the augmented training pool.
    pub fn stability(&self) -> Verdict {
        let report = stability_run(
            &self.augmented_pool,
            &self.queries,
            &self.tax,
            &self.global,
            &self.local,
            &Self::classifier_config(K),
            N_R,
            5,
            SEED,
        )
        .map_err(err)?;
        if let Some(out) = &self.out {
            report.write(&out.join("stability")).map_err(err)?;
        }
        let accs: Vec<String> = report.runs.iter().map(|r| format!("{:.3}", r.top1)).collect();
        let detail = format!(
            "top-1 over seeds [{}], spread {:.3} (<= 0.05)",
            accs.join(", "),
            report.spread_top1
        );
        ensure!(report.runs.len() == 5, "{detail}");
        ensure!(report.spread_top1 <= 0.05, "{detail}");
        Ok(detail)
    }

    pub fn sweep(&self) -> Verdict {
        let k_values = [1, 5, 15, 30, 60, 1000];
        let report = sweep_references(
            &self.pool,
            &self.queries,
            &self.tax,
            &self.global,
            &self.local,
            &[1, 3, N_R],
            &k_values,
            Aggregation::default(),
            SEED,
        )
        .map_err(err)?;
        if let Some(out) = &self.out {
            report.write(&out.join("sweep")).map_err(err)?;
        }
        let mut parts = Vec::new();
        for n_r in [1, 3, N_R] {
            let cells: Vec<_> = report.cells_for(n_r).collect();
            ensure!(cells.len() == k_values.len(), "missing cells for n_r={n_r}");
            let hits: Vec<f64> = cells.iter().map(|c| c.stage1_hit_rate).collect();
            let cands: Vec<f64> = cells.iter().map(|c| c.mean_candidate_species).collect();
            ensure!(hits.windows(2).all(|w| w[0] <= w[1]), "n_r={n_r}: hit rate {hits:?} decreases");
            ensure!(cands.windows(2).all(|w| w[0] <= w[1]), "n_r={n_r}: candidates {cands:?} decrease");
            ensure!(*hits.last().unwrap() == 1.0, "n_r={n_r}: exhaustive k hit rate {hits:?}");
            parts.push(format!(
                "n_r={n_r}: hit {:.2}->{:.2}, candidates {:.1}->{:.1}",
                hits[0],
                hits[hits.len() - 1],
                cands[0],
                cands[cands.len() - 1]
            ));
        }
        Ok(parts.join("; "))
    }
}
