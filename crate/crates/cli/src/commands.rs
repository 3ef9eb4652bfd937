//! Subcommand bodies. Each returns an [`Outcome`]: a JSON value for `--json`
//! and a short text summary otherwise.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde_json::{json, Value};
use twoview_core::dataset::{
    load_taxonomy, read_rgb, write_taxonomy, DatasetSplit, LeafSample, Level, SampleLabel, Taxonomy,
};
use twoview_core::evalkit::{
    benchmark_stages, confusion_matrix, embed_all, evaluate_views, fit_stage, scalability_run, stability_run,
    sweep_references, train_stage, unbalanced_run, with_rotations, write_json, write_text, EvalSummary,
    QueryOutcome, QueryResult, ScaleBatch, StageConfig, BENCHMARK_MAX_ROTATION_DEGREES, BENCHMARK_ROTATIONS,
    REPORTED_TOP_K,
};
use twoview_core::hclassifier::{Aggregation, Classifier, ClassifierConfig, DEFAULT_K, DEFAULT_TOP_N};
use twoview_core::metricnet::{write_loss_trace, SiameseModel};
use twoview_core::pairgen::{generate_pairs, read_pair_manifest, write_pair_manifest, Grouping, PairSpec};
use twoview_core::preprocess::{make_views, Polarity, ViewConfig, ViewPair};
use twoview_core::refstore::{select_references, ReferenceBudget, ReferenceSet};
use twoview_core::synthbench::{generate, write_dataset, SynthSpec};
use twoview_core::Error;

use crate::config::ConfigFile;
use crate::data::{load_dataset, require, Prepared, Split, VIEWS_FILE};
use crate::exit::Usage;
use crate::*;

const DEFAULT_OUT: &str = "twoview-out";
const DEFAULT_TEST_PER_CLASS: usize = 15;
const DEFAULT_N_R: usize = 6;

struct Ctx {
    cfg: ConfigFile,
    out: PathBuf,
    seed: u64,
}

pub struct Outcome {
    json: Value,
    text: String,
}

impl Outcome {
    fn new(json: Value, text: impl Into<String>) -> Outcome {
        Outcome {
            json,
            text: text.into(),
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.global.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let workers: usize = cfg.pick(cli.global.workers, "workers", 0)?;
    if workers > 0 {
        // fails only if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    }
    let ctx = Ctx {
        out: cfg.pick(cli.global.out.clone(), "out", PathBuf::from(DEFAULT_OUT))?,
        seed: cfg.pick(cli.global.seed, "seed", 0)?,
        cfg,
    };
    let outcome = match cli.command {
        Command::Synth(a) => synth(&ctx, a),
        Command::Preprocess(a) => preprocess(&ctx, a),
        Command::MakePairs(a) => make_pairs(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::BuildRefs(a) => build_refs(&ctx, a),
        Command::AddSpecies(a) => add_species(&ctx, a),
        Command::Classify(a) => classify(&ctx, a),
        Command::Evaluate(a) => evaluate(&ctx, a),
        Command::Sweep(a) => sweep(&ctx, a),
        Command::Stability(a) => stability(&ctx, a),
        Command::Scalability(a) => scalability(&ctx, a),
        Command::Unbalanced(a) => unbalanced(&ctx, a),
    }?;
    let body = if cli.global.json {
        serde_json::to_string_pretty(&outcome.json)?
    } else {
        outcome.text.trim_end().to_owned()
    };
    // a closed pipe (`| head`) is not a failure
    let _ = writeln!(std::io::stdout().lock(), "{body}");
    Ok(())
}

fn parse<T: FromStr>(what: &str, raw: &str) -> Result<T, Usage>
where
    T::Err: std::fmt::Display,
{
    raw.parse().map_err(|e| Usage(format!("{what}: {e}")))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_owned(),
        source: e,
    })?;
    Ok(())
}

fn load_model(path: &Path) -> Result<SiameseModel> {
    require(path)?;
    Ok(SiameseModel::load(path).with_context(|| format!("loading model {}", path.display()))?)
}

fn load_models(m: &ModelArgs) -> Result<(SiameseModel, SiameseModel)> {
    Ok((load_model(&m.global)?, load_model(&m.local)?))
}

fn load_refs(dir: &Path) -> Result<ReferenceSet> {
    require(dir)?;
    Ok(ReferenceSet::load(dir).with_context(|| format!("loading reference set {}", dir.display()))?)
}

/// Flags, then config, then the view settings stored next to `base_dir`
/// (a prepared directory or a reference set), then defaults.
fn view_config(ctx: &Ctx, a: &ViewArgs, base_dir: Option<&Path>) -> Result<ViewConfig> {
    let base = match base_dir.map(|d| d.join(VIEWS_FILE)).filter(|p| p.exists()) {
        Some(p) => serde_json::from_str(&fs::read_to_string(&p)?).with_context(|| format!("reading {}", p.display()))?,
        None => ViewConfig::default(),
    };
    let polarity = match &a.polarity {
        Some(p) => Some(parse::<Polarity>("--polarity", p)?),
        None => None,
    };
    let v = ViewConfig {
        crop_size: ctx.cfg.pick(a.crop_size, "views.crop_size", base.crop_size)?,
        kernel_radius: ctx.cfg.pick(a.kernel_radius, "views.kernel_radius", base.kernel_radius)?,
        polarity: ctx.cfg.pick(polarity, "views.polarity", base.polarity)?,
    };
    v.validate()?;
    Ok(v)
}

fn classifier_config(ctx: &Ctx, a: &ClassifierArgs) -> Result<ClassifierConfig> {
    let aggregation = match &a.aggregation {
        Some(s) => Some(parse::<Aggregation>("--aggregation", s)?),
        None => None,
    };
    Ok(ClassifierConfig {
        k: ctx.cfg.pick(a.k, "classifier.k", DEFAULT_K)?,
        top_n: ctx.cfg.pick(a.top_n, "classifier.top_n", DEFAULT_TOP_N)?,
        aggregation: ctx.cfg.pick(aggregation, "classifier.aggregation", Aggregation::default())?,
    })
}

/// The benchmark recipe for `stage`, overridden by flags and the config
/// file's `genus.` / `species.` section.
fn stage_config(ctx: &Ctx, stage: &str, a: Option<&StageArgs>) -> Result<StageConfig> {
    let (genus, species) = benchmark_stages();
    let base = match stage {
        "genus" => genus,
        "species" => species,
        other => return Err(Usage(format!("unknown stage '{other}' (genus|species)")).into()),
    };
    let flag = |f: fn(&StageArgs) -> Option<String>| a.and_then(f);
    let key = |k: &str| format!("{stage}.{k}");
    let c = &ctx.cfg;
    let t = &base.train;
    let positive = c.pick(a.and_then(|a| a.positive), &key("positive"), base.positive_pairs)?;
    // keep the 2:3 ratio when only the positive count changes
    let negative_default = if positive == base.positive_pairs {
        base.negative_pairs
    } else {
        PairSpec::with_default_ratio(base.grouping, base.view, positive, 0).negative_count
    };
    let train = twoview_core::metricnet::TrainConfig {
        epochs: c.pick(a.and_then(|a| a.epochs), &key("epochs"), t.epochs)?,
        batch_size: c.pick(a.and_then(|a| a.batch_size), &key("batch_size"), t.batch_size)?,
        learning_rate: c.pick(a.and_then(|a| a.learning_rate), &key("learning_rate"), t.learning_rate)?,
        momentum: c.pick(a.and_then(|a| a.momentum), &key("momentum"), t.momentum)?,
        lr_decay: c.pick(a.and_then(|a| a.lr_decay), &key("lr_decay"), t.lr_decay)?,
        decay_every: c.pick(a.and_then(|a| a.decay_every), &key("decay_every"), t.decay_every)?,
        seed: ctx.seed,
        frozen_layers: c.pick(a.and_then(|a| a.frozen_layers), &key("frozen_layers"), t.frozen_layers)?,
    };
    train.validate()?;
    Ok(StageConfig {
        backbone_id: c.pick(flag(|a| a.backbone.clone()), &key("backbone"), base.backbone_id.clone())?,
        embedding_dim: c.pick(a.and_then(|a| a.embedding_dim), &key("embedding_dim"), base.embedding_dim)?,
        positive_pairs: positive,
        negative_pairs: c.pick(a.and_then(|a| a.negative), &key("negative"), negative_default)?,
        allow_replacement: c.pick(a.and_then(|a| a.allow_replacement), &key("allow_replacement"), false)?,
        init_seed: c.pick(a.and_then(|a| a.init_seed), &key("init_seed"), ctx.seed)?,
        train,
        ..base
    })
}

fn pair_spec(stage: &StageConfig) -> PairSpec {
    PairSpec {
        grouping: stage.grouping,
        view: stage.view,
        positive_count: stage.positive_pairs,
        negative_count: stage.negative_pairs,
        seed: stage.train.seed,
        allow_replacement: stage.allow_replacement,
    }
}

fn stage_name(grouping: Grouping) -> &'static str {
    match grouping {
        Grouping::Genus => "genus",
        Grouping::Species => "species",
    }
}

fn ref_pool(ctx: &Ctx, raw: Option<&String>, default: &str) -> Result<Vec<Split>> {
    let pool: String = ctx.cfg.pick(raw.cloned(), "refs.pool", default.to_owned())?;
    match pool.as_str() {
        "original" => Ok(vec![Split::Train]),
        "all" => Ok(vec![Split::Train, Split::Augmented]),
        other => Err(Usage(format!("unknown reference pool '{other}' (original|all)")).into()),
    }
}

/// Views for every sample; a sample without a detectable leaf is named in the error.
fn views_for(samples: &[&LeafSample], cfg: &ViewConfig) -> Result<Vec<ViewPair>> {
    Ok(samples
        .par_iter()
        .map(|s| {
            make_views(s, cfg).map_err(|e| match e {
                Error::NoLeafDetected => Error::Validation(format!("no leaf detected in '{}'", s.sample_id)),
                other => other,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?)
}

fn labeled<'a>(samples: &[&'a LeafSample], views: &'a [ViewPair]) -> Result<Vec<(SampleLabel<'a>, &'a ViewPair)>> {
    samples
        .iter()
        .zip(views)
        .map(|(s, v)| {
            s.label()
                .map(|l| (l, v))
                .ok_or_else(|| Error::Validation(format!("sample '{}' has no species label", s.sample_id)).into())
        })
        .collect()
}

fn synth(ctx: &Ctx, a: SynthArgs) -> Result<Outcome> {
    let d = SynthSpec::default();
    let c = &ctx.cfg;
    let spec = SynthSpec {
        num_genera: c.pick(a.genera, "synth.genera", d.num_genera)?,
        species_per_genus: c.pick(a.species_per_genus, "synth.species_per_genus", d.species_per_genus)?,
        samples_per_species: c.pick(a.samples, "synth.samples", d.samples_per_species)?,
        train_per_species: c.pick(a.train_per_species, "synth.train_per_species", d.train_per_species)?,
        image_size: c.pick(a.image_size, "synth.image_size", d.image_size)?,
        shape_noise: c.pick(a.shape_noise, "synth.shape_noise", d.shape_noise)?,
        texture_noise: c.pick(a.texture_noise, "synth.texture_noise", d.texture_noise)?,
        seed: ctx.seed,
        genus_offset: c.pick(a.genus_offset, "synth.genus_offset", d.genus_offset)?,
        texture_offset: c.pick(a.texture_offset, "synth.texture_offset", d.texture_offset)?,
    };
    let split = generate(&spec)?;
    create_dir(&ctx.out)?;
    write_dataset(&split, &ctx.out)?;
    write_json(&ctx.out.join("synth.json"), &spec)?;
    let json = json!({
        "out": ctx.out,
        "spec": spec,
        "train": split.train.len(),
        "test": split.test.len(),
    });
    let text = format!(
        "wrote {} genera x {} species ({} train, {} test images) to {}",
        spec.num_genera,
        spec.species_per_genus,
        split.train.len(),
        split.test.len(),
        ctx.out.display()
    );
    Ok(Outcome::new(json, text))
}

fn preprocess(ctx: &Ctx, a: PreprocessArgs) -> Result<Outcome> {
    let views = view_config(ctx, &a.views, None)?;
    let test_per_class = ctx.cfg.pick(a.test_per_class, "split.test_per_class", DEFAULT_TEST_PER_CLASS)?;
    let rotations = ctx.cfg.pick(a.rotations, "augment.rotations", BENCHMARK_ROTATIONS)?;
    let max_degrees = ctx.cfg.pick(a.max_rotation, "augment.max_degrees", BENCHMARK_MAX_ROTATION_DEGREES)?;
    let split = load_dataset(&a.dataset, test_per_class, ctx.seed)?;
    let taxonomy = Taxonomy::new(split.taxonomy.clone())?;
    let augmented = with_rotations(&split.train, rotations, max_degrees, ctx.seed);
    let n_train = split.train.len();

    let all: Vec<&LeafSample> = augmented.iter().chain(&split.test).collect();
    let pairs = views_for(&all, &views)?;
    let mut rows = Vec::with_capacity(all.len());
    for (i, (s, v)) in all.iter().zip(pairs).enumerate() {
        let species = s
            .species_id
            .clone()
            .ok_or_else(|| Error::Validation(format!("sample '{}' has no species label", s.sample_id)))?;
        let kind = if i < n_train {
            Split::Train
        } else if i < augmented.len() {
            Split::Augmented
        } else {
            Split::Test
        };
        rows.push((s.sample_id.clone(), species, kind, v));
    }
    Prepared::write(&ctx.out, &taxonomy, &views, &rows)?;
    let n_aug = augmented.len() - n_train;
    let json = json!({
        "out": ctx.out,
        "views": views,
        "species": taxonomy.len(),
        "train": n_train,
        "augmented": n_aug,
        "test": split.test.len(),
    });
    let text = format!(
        "prepared {n_train} train (+{n_aug} rotated) and {} test samples of {} species in {}",
        split.test.len(),
        taxonomy.len(),
        ctx.out.display()
    );
    Ok(Outcome::new(json, text))
}

fn make_pairs(ctx: &Ctx, a: MakePairsArgs) -> Result<Outcome> {
    let stage = stage_config(ctx, &a.stage.stage, Some(&a.stage))?;
    let data = Prepared::load(&a.data)?;
    let samples = data.labeled(&[Split::Train, Split::Augmented]);
    let labels: Vec<SampleLabel<'_>> = samples.iter().map(|(l, _)| *l).collect();
    let set = generate_pairs(&labels, &data.taxonomy, &pair_spec(&stage))?;
    create_dir(&ctx.out)?;
    let path = ctx.out.join(format!("pairs_{}.csv", stage_name(stage.grouping)));
    write_pair_manifest(&path, &set)?;
    for w in &set.warnings {
        eprintln!("warning: {w}");
    }
    let json = json!({
        "path": path,
        "positives": set.positives(),
        "negatives": set.negatives(),
        "warnings": set.warnings,
    });
    let text = format!(
        "{} positive and {} negative pairs written to {}",
        set.positives(),
        set.negatives(),
        path.display()
    );
    Ok(Outcome::new(json, text))
}

fn train(ctx: &Ctx, a: TrainArgs) -> Result<Outcome> {
    let stage = stage_config(ctx, &a.stage.stage, Some(&a.stage))?;
    let data = Prepared::load(&a.data)?;
    let samples = data.labeled(&[Split::Train, Split::Augmented]);
    let outcome = match &a.pairs {
        Some(p) => {
            require(p)?;
            fit_stage(&samples, &stage, read_pair_manifest(p)?)?
        }
        None => train_stage(&samples, &data.taxonomy, &stage)?,
    };
    let name = stage_name(stage.grouping);
    create_dir(&ctx.out)?;
    let model_path = ctx.out.join(format!("{name}.scnn"));
    outcome.model.save(&model_path)?;
    write_loss_trace(&ctx.out.join(format!("{name}_loss.csv")), &outcome.loss_trace)?;
    let json = json!({
        "model": model_path,
        "fingerprint": outcome.model.fingerprint(),
        "stage": stage,
        "positives": outcome.pairs.positives(),
        "negatives": outcome.pairs.negatives(),
        "loss_trace": outcome.loss_trace,
    });
    write_json(&ctx.out.join(format!("{name}.json")), &json)?;
    let text = format!(
        "{name} model trained on {} pairs over {} epochs (loss {:.4} -> {:.4}); saved to {}",
        outcome.pairs.pairs.len(),
        outcome.loss_trace.len(),
        outcome.loss_trace.first().copied().unwrap_or(f64::NAN),
        outcome.loss_trace.last().copied().unwrap_or(f64::NAN),
        model_path.display()
    );
    Ok(Outcome::new(json, text))
}

fn build_refs(ctx: &Ctx, a: BuildRefsArgs) -> Result<Outcome> {
    let (global, local) = load_models(&a.models)?;
    let data = Prepared::load(&a.data)?;
    let n: usize = ctx.cfg.pick(a.refs.n_r, "refs.n_r", DEFAULT_N_R)?;
    let budget_name: String = ctx.cfg.pick(a.refs.budget.clone(), "refs.budget", "per-species".to_owned())?;
    let budget = match budget_name.as_str() {
        "per-species" => ReferenceBudget::PerSpecies(n),
        "per-genus" => ReferenceBudget::PerGenus(n),
        other => return Err(Usage(format!("unknown budget '{other}' (per-species|per-genus)")).into()),
    };
    let pool = data.labeled(&ref_pool(ctx, a.refs.pool.as_ref(), "original")?);
    let labels: Vec<SampleLabel<'_>> = pool.iter().map(|(l, _)| *l).collect();
    let selection = select_references(&labels, &data.taxonomy, budget, ctx.seed)?;
    let chosen: BTreeSet<&str> = selection.sample_ids.iter().map(String::as_str).collect();
    let refs: Vec<_> = pool.into_iter().filter(|(l, _)| chosen.contains(l.sample_id)).collect();
    let set = ReferenceSet::build(&refs, &data.taxonomy, &global, &local, n)?;
    let dir = ctx.out.join("refs");
    set.save(&dir)?;
    write_json(&dir.join(VIEWS_FILE), &data.view_config)?;
    for w in &selection.warnings {
        eprintln!("warning: {w}");
    }
    let json = json!({
        "dir": dir,
        "references": set.len(),
        "species": set.species().len(),
        "genera": set.genera().len(),
        "warnings": selection.warnings,
    });
    let text = format!(
        "{} references for {} species in {} genera saved to {}",
        set.len(),
        set.species().len(),
        set.genera().len(),
        dir.display()
    );
    Ok(Outcome::new(json, text))
}

fn add_species(ctx: &Ctx, a: AddSpeciesArgs) -> Result<Outcome> {
    let dir = ctx.out.join("refs");
    if dir.exists() && fs::canonicalize(&dir)? == fs::canonicalize(&a.refs)? {
        return Err(Usage("--out would overwrite the input reference set; choose another output".into()).into());
    }
    let base = load_refs(&a.refs)?;
    let (global, local) = load_models(&a.models)?;
    let views = view_config(ctx, &a.views, Some(a.data.as_deref().unwrap_or(&a.refs)))?;
    let test_per_class = ctx.cfg.pick(a.test_per_class, "split.test_per_class", DEFAULT_TEST_PER_CLASS)?;
    let split = load_dataset(&a.dataset, test_per_class, ctx.seed)?;
    let taxonomy = match &a.data {
        Some(d) => {
            let path = d.join(crate::data::TAXONOMY_FILE);
            require(&path)?;
            Taxonomy::new(load_taxonomy(&path)?)?.extended(&split.taxonomy)?
        }
        None => Taxonomy::new(split.taxonomy.clone())?,
    };
    let (chosen, warnings) = new_species_refs(&split, base.n_r(), ctx.seed)?;
    let chosen_views = views_for(&chosen, &views)?;
    let refs = labeled(&chosen, &chosen_views)?;
    let grown = base.add_species(&refs, &taxonomy, &global, &local)?;
    grown.save(&dir)?;
    write_json(&dir.join(VIEWS_FILE), &views)?;
    write_taxonomy(&ctx.out.join(crate::data::TAXONOMY_FILE), taxonomy.records())?;
    let json = json!({
        "dir": dir,
        "species_before": base.species().len(),
        "species_after": grown.species().len(),
        "references": grown.len(),
        "warnings": warnings,
    });
    let text = format!(
        "reference set grew from {} to {} species ({} references); saved to {}",
        base.species().len(),
        grown.species().len(),
        grown.len(),
        dir.display()
    );
    Ok(Outcome::new(json, text))
}

/// Training samples of a batch of new species drawn as references, `n_r` per species.
fn new_species_refs(split: &DatasetSplit, n_r: usize, seed: u64) -> Result<(Vec<&LeafSample>, Vec<String>)> {
    let labels: Vec<SampleLabel<'_>> = split.train.iter().filter_map(LeafSample::label).collect();
    let taxonomy = Taxonomy::new(split.taxonomy.clone())?;
    let selection = select_references(&labels, &taxonomy, ReferenceBudget::PerSpecies(n_r), seed)?;
    let chosen = split
        .train
        .iter()
        .filter(|s| selection.sample_ids.binary_search(&s.sample_id).is_ok())
        .collect();
    Ok((chosen, selection.warnings))
}

fn image_files(path: &Path) -> Result<Vec<PathBuf>> {
    require(path)?;
    if path.is_file() {
        return Ok(vec![path.to_owned()]);
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(path)? {
        let p = entry?.path();
        let ext = p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::Validation(format!("no images in {}", path.display())).into());
    }
    Ok(files)
}

fn classify(ctx: &Ctx, a: ClassifyArgs) -> Result<Outcome> {
    let files = image_files(&a.image)?;
    let refs = load_refs(&a.refs)?;
    let (global, local) = load_models(&a.models)?;
    let views = view_config(ctx, &a.views, Some(&a.refs))?;
    let classifier = Classifier::new(&global, &local, &refs, classifier_config(ctx, &a.classifier)?)?;
    let single = files.len() == 1 && a.image.is_file();
    let results: Vec<Result<_>> = files
        .par_iter()
        .map(|p| {
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or("query").to_owned();
            let sample = LeafSample::new(id, read_rgb(p)?, None)?;
            Ok(classifier.classify(&sample, &views)?)
        })
        .collect();
    let mut reports = Vec::new();
    let mut text = String::new();
    for (path, r) in files.iter().zip(results) {
        match r {
            Ok(report) => {
                let top: Vec<String> = report
                    .ranking
                    .iter()
                    .map(|s| format!("{} ({:.3})", s.species_id, s.zeta))
                    .collect();
                text += &format!("{}: {}\n", path.display(), top.join(", "));
                reports.push(json!({ "image": path, "report": report }));
            }
            Err(e) if !single => {
                text += &format!("{}: error: {e:#}\n", path.display());
                reports.push(json!({ "image": path, "error": format!("{e:#}") }));
            }
            Err(e) => return Err(e.context(format!("classifying {}", path.display()))),
        }
    }
    create_dir(&ctx.out)?;
    let json = json!({ "config": classifier.config(), "results": reports });
    write_json(&ctx.out.join("classify.json"), &json)?;
    Ok(Outcome::new(json, text))
}

fn queries_csv(results: &[QueryResult]) -> String {
    let mut out = String::from("query_id,true_species,true_genus,predicted,rank,stage1_hit,seconds\n");
    for r in results {
        let rank = QueryOutcome {
            true_species: r.true_species.clone(),
            ranking: r.ranking.clone(),
        }
        .rank()
        .map_or(String::new(), |k| k.to_string());
        out += &format!(
            "{},{},{},{},{rank},{},{:.6}\n",
            r.query_id,
            r.true_species,
            r.true_genus,
            r.ranking.first().map_or("", String::as_str),
            r.stage1_hit,
            r.seconds
        );
    }
    out
}

fn summary_text(s: &EvalSummary) -> String {
    let acc: Vec<String> = s.accuracy.iter().map(|(k, v)| format!("top-{k} {v:.3}")).collect();
    format!(
        "{} queries: {}; mean reciprocal rank {:.3}; stage-1 hit rate {:.3}; {:.2} ms per query",
        s.queries,
        acc.join(", "),
        s.mean_reciprocal_rank,
        s.stage1_hit_rate,
        s.mean_query_seconds * 1e3
    )
}

fn evaluate(ctx: &Ctx, a: EvaluateArgs) -> Result<Outcome> {
    let refs = load_refs(&a.refs)?;
    let (global, local) = load_models(&a.models)?;
    let data = Prepared::load(&a.data)?;
    let config = classifier_config(ctx, &a.classifier)?;
    let top_k = ctx.cfg.pick_list(a.top_k, "eval.top_k", &REPORTED_TOP_K)?;
    // a grown reference set may rank species the data's taxonomy lacks
    let grown = a.refs.parent().map(|p| p.join(crate::data::TAXONOMY_FILE));
    let taxonomy = match grown.filter(|p| p.exists()) {
        Some(p) => {
            let t = Taxonomy::new(load_taxonomy(&p)?)?;
            if data.taxonomy.records().iter().all(|r| t.contains(&r.species_id)) {
                t
            } else {
                data.taxonomy.clone()
            }
        }
        None => data.taxonomy.clone(),
    };
    let classifier = Classifier::new(&global, &local, &refs, config.clone())?;
    let queries = data.labeled(&[Split::Test]);
    if queries.is_empty() {
        return Err(Error::InsufficientSamples("the prepared data has no test samples".into()).into());
    }
    let results = evaluate_views(&classifier, &queries, &taxonomy)?;
    let summary = EvalSummary::new(&results, &top_k);
    let outcomes: Vec<QueryOutcome> = results.iter().map(QueryResult::outcome).collect();
    create_dir(&ctx.out)?;
    for (level, name) in [(Level::Species, "species"), (Level::Genus, "genus")] {
        let m = confusion_matrix(&outcomes, &taxonomy, level)?;
        write_text(&ctx.out.join(format!("confusion_{name}.csv")), &m.to_csv())?;
    }
    write_text(&ctx.out.join("queries.csv"), &queries_csv(&results))?;
    let json = json!({
        "config": config,
        "references": refs.len(),
        "summary": summary,
    });
    write_json(&ctx.out.join("evaluation.json"), &json)?;
    Ok(Outcome::new(json, summary_text(&summary)))
}

fn sweep(ctx: &Ctx, a: SweepArgs) -> Result<Outcome> {
    let (global, local) = load_models(&a.models)?;
    let data = Prepared::load(&a.data)?;
    let n_r = ctx.cfg.pick_list(a.n_r, "sweep.n_r", &[1, 3, 6])?;
    let k = ctx.cfg.pick_list(a.k, "sweep.k", &[1, 5, 15, 30, 60, 1000])?;
    let aggregation = match &a.aggregation {
        Some(s) => Some(parse::<Aggregation>("--aggregation", s)?),
        None => None,
    };
    let aggregation = ctx.cfg.pick(aggregation, "classifier.aggregation", Aggregation::default())?;
    let pool = embed_all(&data.labeled(&ref_pool(ctx, a.pool.as_ref(), "original")?), &global, &local)?;
    let queries = embed_all(&data.labeled(&[Split::Test]), &global, &local)?;
    let report = sweep_references(&pool, &queries, &data.taxonomy, &global, &local, &n_r, &k, aggregation, ctx.seed)?;
    create_dir(&ctx.out)?;
    report.write(&ctx.out)?;
    let mut text = String::from("n_r\tk\ttop1\ttop5\tstage1_hit\n");
    for c in &report.cells {
        text += &format!(
            "{}\t{}\t{:.3}\t{:.3}\t{:.3}\n",
            c.n_r, c.k, c.top1, c.top5, c.stage1_hit_rate
        );
    }
    Ok(Outcome::new(serde_json::to_value(&report)?, text))
}

fn stability(ctx: &Ctx, a: StabilityArgs) -> Result<Outcome> {
    let (global, local) = load_models(&a.models)?;
    let data = Prepared::load(&a.data)?;
    let config = classifier_config(ctx, &a.classifier)?;
    let n_r = ctx.cfg.pick(a.n_r, "stability.n_r", DEFAULT_N_R)?;
    let reps = ctx.cfg.pick(a.repetitions, "stability.repetitions", 5)?;
    let pool = embed_all(&data.labeled(&ref_pool(ctx, a.pool.as_ref(), "all")?), &global, &local)?;
    let queries = embed_all(&data.labeled(&[Split::Test]), &global, &local)?;
    let report = stability_run(&pool, &queries, &data.taxonomy, &global, &local, &config, n_r, reps, ctx.seed)?;
    create_dir(&ctx.out)?;
    report.write(&ctx.out)?;
    let runs: Vec<String> = report.runs.iter().map(|r| format!("{:.3}", r.top1)).collect();
    let text = format!(
        "top-1 over {} reference draws: [{}]; mean {:.3}, spread {:.3}",
        report.runs.len(),
        runs.join(", "),
        report.mean_top1,
        report.spread_top1
    );
    Ok(Outcome::new(serde_json::to_value(&report)?, text))
}

fn scalability(ctx: &Ctx, a: ScalabilityArgs) -> Result<Outcome> {
    let base = load_refs(&a.refs)?;
    let (global, local) = load_models(&a.models)?;
    let data = Prepared::load(&a.data)?;
    let config = classifier_config(ctx, &a.classifier)?;
    let repeats = ctx.cfg.pick(a.repeats, "scalability.repeats", 3)?;
    let test_per_class = ctx.cfg.pick(a.test_per_class, "split.test_per_class", DEFAULT_TEST_PER_CLASS)?;
    let splits: Vec<DatasetSplit> = a
        .batches
        .iter()
        .map(|root| load_dataset(root, test_per_class, ctx.seed))
        .collect::<Result<_>>()?;
    let mut taxonomy = data.taxonomy.clone();
    for s in &splits {
        taxonomy = taxonomy.extended(&s.taxonomy)?;
    }
    let prepared: Vec<(Vec<&LeafSample>, Vec<ViewPair>, Vec<&LeafSample>, Vec<ViewPair>)> = splits
        .iter()
        .map(|s| {
            let (train, _) = new_species_refs(s, base.n_r(), ctx.seed)?;
            let test: Vec<&LeafSample> = s.test.iter().collect();
            let tv = views_for(&train, &data.view_config)?;
            let qv = views_for(&test, &data.view_config)?;
            Ok((train, tv, test, qv))
        })
        .collect::<Result<_>>()?;
    let batches: Vec<ScaleBatch<'_>> = prepared
        .iter()
        .zip(&a.batches)
        .map(|((train, tv, test, qv), root)| {
            Ok(ScaleBatch {
                name: root.file_name().map_or_else(|| root.display().to_string(), |n| n.to_string_lossy().into()),
                references: labeled(train, tv)?,
                queries: labeled(test, qv)?,
            })
        })
        .collect::<Result<_>>()?;
    let report = scalability_run(
        &base,
        &batches,
        &data.labeled(&[Split::Test]),
        &taxonomy,
        &global,
        &local,
        &config,
        repeats,
    )?;
    create_dir(&ctx.out)?;
    report.write(&ctx.out)?;
    let mut text = String::from("step\tspecies\trefs\toriginal_top1\tnew_top1\tms_per_query\n");
    for s in &report.steps {
        text += &format!(
            "{}\t{}\t{}\t{:.3}\t{}\t{:.3}\n",
            s.name,
            s.species,
            s.references,
            s.original_top1,
            s.new_top1.map_or("-".into(), |v| format!("{v:.3}")),
            s.mean_query_seconds * 1e3
        );
    }
    text += &format!("original-species degradation {:.3}\n", report.original_degradation);
    Ok(Outcome::new(serde_json::to_value(&report)?, text))
}

fn unbalanced(ctx: &Ctx, a: UnbalancedArgs) -> Result<Outcome> {
    let data = Prepared::load(&a.data)?;
    let caps = ctx.cfg.pick_list(a.caps, "unbalanced.caps", &[2, 3, 4, 6])?;
    let config = classifier_config(ctx, &a.classifier)?;
    let n_r = ctx.cfg.pick(a.n_r, "refs.n_r", DEFAULT_N_R)?;
    let genus = stage_config(ctx, "genus", None)?;
    let species = stage_config(ctx, "species", None)?;
    let report = unbalanced_run(
        &data.labeled(&[Split::Train]),
        &data.labeled(&[Split::Test]),
        &data.taxonomy,
        &caps,
        &genus,
        &species,
        &config,
        n_r,
        ctx.seed,
    )?;
    create_dir(&ctx.out)?;
    report.write(&ctx.out)?;
    let mut text = String::from("cap\ttrain\ttop1\n");
    for r in &report.rows {
        let top1 = match (r.top1, &r.error) {
            (Some(v), _) => format!("{v:.3}"),
            (None, Some(e)) => format!("failed: {e}"),
            (None, None) => "-".into(),
        };
        text += &format!("{}\t{}\t{top1}\n", r.cap, r.train_samples);
    }
    Ok(Outcome::new(serde_json::to_value(&report)?, text))
}
