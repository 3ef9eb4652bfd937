use twoview_core::dataset::{LeafSample, Taxonomy};
use twoview_core::evalkit::{
    embed_all, refset_from_embedded, stability_run, sweep_references, train_stage, unbalanced_run, StageConfig,
};
use twoview_core::hclassifier::{Aggregation, ClassifierConfig};
use twoview_core::preprocess::ViewConfig;
use twoview_core::refstore::{labeled_views, views_of, ReferenceBudget};
use twoview_core::synthbench::{generate, SynthSpec};

fn quick(mut stage: StageConfig) -> StageConfig {
    stage.backbone_id = "mlp2-h4".into();
    stage.embedding_dim = 8;
    stage.positive_pairs = 20;
    stage.negative_pairs = 30;
    stage.train.epochs = 2;
    stage.train.batch_size = 10;
    stage
}

fn spec() -> SynthSpec {
    SynthSpec {
        num_genera: 2,
        species_per_genus: 2,
        samples_per_species: 7,
        train_per_species: 5,
        ..SynthSpec::default()
    }
}

#[test]
fn small_protocols_run_and_write_reports() {
    let split = generate(&spec()).unwrap();
    let tax = Taxonomy::new(split.taxonomy.clone()).unwrap();
    let cfg = ViewConfig::default();
    let train: Vec<&LeafSample> = split.train.iter().collect();
    let test: Vec<&LeafSample> = split.test.iter().collect();
    let (trv, tev) = (views_of(&train, &cfg).unwrap(), views_of(&test, &cfg).unwrap());
    let (trl, tel) = (labeled_views(&train, &trv).unwrap(), labeled_views(&test, &tev).unwrap());

    let g = train_stage(&trl, &tax, &quick(StageConfig::genus())).unwrap();
    let s = train_stage(&trl, &tax, &quick(StageConfig::species())).unwrap();
    assert_eq!(g.pairs.positives(), 20);
    assert_eq!(g.loss_trace.len(), 2);
    let pool = embed_all(&trl, &g.model, &s.model).unwrap();
    let queries = embed_all(&tel, &g.model, &s.model).unwrap();

    let (refs, warnings) =
        refset_from_embedded(&pool, &tax, ReferenceBudget::PerSpecies(6), 0, &g.model, &s.model).unwrap();
    assert_eq!(refs.len(), 20);
    assert!(!warnings.is_empty(), "5 samples cannot fill 6 references");

    let sweep = sweep_references(&pool, &queries, &tax, &g.model, &s.model, &[1, 2], &[1, 3, 100], Aggregation::Max, 0)
        .unwrap();
    assert_eq!(sweep.cells.len(), 6);
    for n_r in [1, 2] {
        let last = sweep.cells_for(n_r).last().unwrap();
        assert_eq!(last.stage1_hit_rate, 1.0);
        assert_eq!(last.mean_candidate_species, 4.0);
    }
    let stability = stability_run(&pool, &queries, &tax, &g.model, &s.model, &ClassifierConfig::default(), 2, 3, 5)
        .unwrap();
    assert_eq!(stability.runs.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![5, 6, 7]);
    assert!(stability.spread_top1 >= 0.0);

    let unbalanced = unbalanced_run(
        &trl,
        &tel,
        &tax,
        &[1, 3],
        &quick(StageConfig::genus()),
        &quick(StageConfig::species()),
        &ClassifierConfig::default(),
        2,
        0,
    )
    .unwrap();
    // one sample per species leaves no species positives
    assert!(unbalanced.rows[0].error.is_some());
    assert_eq!(unbalanced.rows[1].train_samples, 12);
    assert!(unbalanced.rows[1].top1.is_some());
    assert!(unbalanced.rows[1].warnings.iter().any(|w| w.contains("reduced")));

    let dir = tempfile::tempdir().unwrap();
    sweep.write(dir.path()).unwrap();
    stability.write(dir.path()).unwrap();
    unbalanced.write(dir.path()).unwrap();
    let mut names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(names.iter().any(|n| n.ends_with(".svg")));
    for want in ["sweep.json", "stability.csv", "unbalanced.csv"] {
        assert!(names.iter().any(|n| n == want), "{want} missing from {names:?}");
    }
}
