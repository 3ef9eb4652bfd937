//! Criteria checked against hand values and independent brute-force code.

use std::collections::{BTreeMap, BTreeSet};

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twoview_core::dataset::{SampleLabel, TaxonRecord, Taxonomy};
use twoview_core::evalkit::{accuracy, s_metric, ObservationTree, Plant, QueryOutcome, User};
use twoview_core::hclassifier::{fuse, Aggregation, Classifier, ClassifierConfig, SpeciesSimilarity};
use twoview_core::metricnet::{
    gradient_check, l1_distance, l1_vector, logistic, pair_loss, EmbeddingVector, GradCheck, ModelMeta, ParamGroup,
    SiameseModel,
};
use twoview_core::pairgen::{generate_pairs, pool_sizes, Grouping, PairSpec};
use twoview_core::preprocess::{
    make_views, otsu_threshold, tophat_filter, BinaryMask, View, ViewConfig,
};
use twoview_core::refstore::{ReferenceEntry, ReferenceSet};
use twoview_core::synthbench::{generate, SynthSpec};

use crate::{ensure, Verdict};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn outcome(truth: &str, ranking: &[&str]) -> QueryOutcome {
    QueryOutcome {
        true_species: truth.into(),
        ranking: ranking.iter().map(|s| s.to_string()).collect(),
    }
}

fn at_rank(r: usize) -> QueryOutcome {
    let mut ranking: Vec<String> = (1..r).map(|i| format!("other{i}")).collect();
    ranking.push("t".into());
    QueryOutcome {
        true_species: "t".into(),
        ranking,
    }
}

fn user(id: &str, plants: Vec<Vec<usize>>) -> User {
    User {
        user_id: id.into(),
        plants: plants
            .into_iter()
            .enumerate()
            .map(|(i, ranks)| Plant {
                plant_id: format!("{id}-{i}"),
                pictures: ranks.into_iter().map(at_rank).collect(),
            })
            .collect(),
    }
}

pub fn formulas() -> Verdict {
    // L1 merge
    let v = l1_vector(&[1.0, 2.0, 3.0], &[2.0, 0.0, 3.0]).map_err(|e| e.to_string())?;
    ensure!(v == [1.0, 2.0, 0.0], "l1 vector {v:?}");
    let d = l1_distance(&[0.5, -1.0], &[-0.5, 1.5]).map_err(|e| e.to_string())?;
    ensure!(d == 3.5, "l1 distance {d}");
    ensure!(l1_vector(&[1.0], &[1.0, 2.0]).is_err(), "length mismatch accepted");

    // cross-entropy
    let ln2 = std::f64::consts::LN_2;
    for y in [0, 1] {
        let l = pair_loss(0.5, y).map_err(|e| e.to_string())?;
        ensure!(close(l, ln2, 1e-12), "loss(0.5, {y}) = {l}");
    }
    let l = pair_loss(0.9, 1).map_err(|e| e.to_string())?;
    ensure!(close(l, -(0.9f64).ln(), 1e-12), "loss(0.9, 1) = {l}");
    let l = pair_loss(0.9, 0).map_err(|e| e.to_string())?;
    ensure!(close(l, -(0.1f64).ln(), 1e-12), "loss(0.9, 0) = {l}");
    ensure!(pair_loss(0.0, 1).is_err() && pair_loss(1.0, 0).is_err(), "boundary similarity accepted");
    ensure!(pair_loss(0.5, 2).is_err(), "label 2 accepted");
    ensure!(logistic(0.0) == 0.5, "logistic(0) = {}", logistic(0.0));

    // fusion: w = {3, 2}, S = 0.8 in the first genus
    let weights: BTreeMap<String, usize> = [("ga".to_string(), 3), ("gb".to_string(), 2)].into();
    let scores: BTreeMap<String, SpeciesSimilarity> = [
        ("sa".to_string(), ("ga", 0.8)),
        ("sb".to_string(), ("gb", 0.9)),
        ("sc".to_string(), ("ga", 0.1)),
    ]
    .into_iter()
    .map(|(s, (g, v))| {
        (
            s,
            SpeciesSimilarity {
                genus_id: g.into(),
                similarity: v,
            },
        )
    })
    .collect();
    let fused = fuse(&weights, &scores).map_err(|e| e.to_string())?;
    let got: Vec<(&str, f64)> = fused.items.iter().map(|s| (s.species_id.as_str(), s.zeta)).collect();
    ensure!(got.len() == 3, "fused {got:?}");
    ensure!(got[0].0 == "sa" && close(got[0].1, 0.48, 1e-12), "fused {got:?}");
    ensure!(got[1].0 == "sb" && close(got[1].1, 0.36, 1e-12), "fused {got:?}");
    ensure!(got[2].0 == "sc" && close(got[2].1, 0.06, 1e-12), "fused {got:?}");

    // S metric
    let tree = ObservationTree {
        users: vec![user("u", vec![vec![1, 2]])],
    };
    let s = s_metric(&tree).map_err(|e| e.to_string())?;
    ensure!(s == 0.75, "S(rank1 + rank2) = {s}");
    let tree = ObservationTree {
        users: vec![user("a", vec![vec![1]]), user("b", vec![vec![4]])],
    };
    let s = s_metric(&tree).map_err(|e| e.to_string())?;
    ensure!(s == 0.625, "S(two users) = {s}");
    // brute force on a random tree
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let users: Vec<User> = (0..5)
        .map(|u| {
            let plants = (0..rng.random_range(1..4))
                .map(|_| (0..rng.random_range(1..4)).map(|_| rng.random_range(1..7)).collect())
                .collect();
            user(&format!("u{u}"), plants)
        })
        .collect();
    let mut expect = 0.0;
    for u in &users {
        let mut per_user = 0.0;
        for p in &u.plants {
            let ranks: Vec<usize> = p.pictures.iter().map(|o| o.ranking.len()).collect();
            per_user += ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64;
        }
        expect += per_user / u.plants.len() as f64;
    }
    expect /= users.len() as f64;
    let s = s_metric(&ObservationTree { users }).map_err(|e| e.to_string())?;
    ensure!(close(s, expect, 1e-12), "S random tree {s} vs {expect}");

    // accuracy
    let outcomes = vec![
        outcome("a", &["a", "b"]),
        outcome("b", &["a", "b", "c"]),
        outcome("c", &["a", "b", "d", "e", "c"]),
        outcome("d", &["a", "b", "c", "e", "f", "d"]),
        outcome("e", &[]),
    ];
    for (k, want) in [(1, 0.2), (3, 0.4), (5, 0.6), (6, 0.8)] {
        let got = accuracy(&outcomes, k);
        ensure!(got == want, "accuracy@{k} = {got}, expected {want}");
    }
    Ok("L1, loss ln2, zeta 0.48/0.36, S 0.75/0.625, accuracy match hand values".into())
}

fn tiny_model(view: View, dim: usize, side: u32, hidden: usize, seed: u64) -> SiameseModel {
    let meta = ModelMeta {
        view,
        grouping: if view == View::Global { Grouping::Genus } else { Grouping::Species },
        input_height: side,
        input_width: side,
        embedding_dim: dim,
        backbone_id: format!("mlp2-h{hidden}"),
    };
    SiameseModel::new(meta, seed).expect("tiny model")
}

fn random_image(rng: &mut ChaCha8Rng, side: u32) -> RgbImage {
    RgbImage::from_fn(side, side, |_, _| Rgb([rng.random(), rng.random(), rng.random()]))
}

pub fn gradients() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst_head, mut worst_backbone) = (0f64, 0f64);
    for case in 0..6u64 {
        let mut model = tiny_model(View::Local, 8, 6, 8, case);
        let w: Vec<f32> = (0..8).map(|_| rng.random_range(-1.5..1.5)).collect();
        model.set_calibration(&w, rng.random_range(-1.0..1.0)).map_err(|e| e.to_string())?;
        let left = random_image(&mut rng, 6);
        let right = random_image(&mut rng, 6);
        for label in [0u8, 1] {
            for group in [ParamGroup::CalibrationWeights, ParamGroup::CalibrationBias] {
                let dev = gradient_check(&model, &left, &right, label, &GradCheck::new(group)).map_err(|e| e.to_string())?;
                worst_head = worst_head.max(dev);
            }
            for layer in [0, 2] {
                let check = GradCheck {
                    seed: case,
                    ..GradCheck::new(ParamGroup::BackboneLayer(layer))
                };
                let dev = gradient_check(&model, &left, &right, label, &check).map_err(|e| e.to_string())?;
                worst_backbone = worst_backbone.max(dev);
            }
        }
    }
    let detail = format!("max relative error head {worst_head:.2e} (< 1e-3), backbone {worst_backbone:.2e} (< 1e-2)");
    ensure!(worst_head < 1e-3 && worst_backbone < 1e-2, "{detail}");
    Ok(detail)
}

/// Exhaustive stages 1-2 and fusion, written from the definitions.
struct Oracle<'a> {
    refs: &'a [OracleRef],
    gw: &'a [f32],
    gb: f32,
    lw: &'a [f32],
    lb: f32,
}

#[derive(Clone)]
struct OracleRef {
    sample: String,
    species: String,
    genus: String,
    global: Vec<f32>,
    local: Vec<f32>,
}

fn oracle_similarity(w: &[f32], b: f32, x: &[f32], y: &[f32]) -> f64 {
    let mut z = 0f64;
    for i in 0..x.len() {
        z += w[i] as f64 * (x[i] - y[i]).abs() as f64;
    }
    let z = (b as f64 + z).clamp(-30.0, 30.0);
    1.0 / (1.0 + (-z).exp())
}

struct OracleAnswer {
    stage1: Vec<String>,
    weights: BTreeMap<String, usize>,
    ranking: Vec<(String, f64)>,
}

impl Oracle<'_> {
    fn classify(&self, g: &[f32], l: &[f32], k: usize, mean: bool) -> OracleAnswer {
        let mut scored: Vec<(f64, &OracleRef)> = self
            .refs
            .iter()
            .map(|r| (oracle_similarity(self.gw, self.gb, g, &r.global), r))
            .collect();
        // score descending, then species id, then sample id
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap()
                .then(a.1.species.cmp(&b.1.species))
                .then(a.1.sample.cmp(&b.1.sample))
        });
        let top = &scored[..k.min(scored.len())];
        let mut weights: BTreeMap<String, usize> = BTreeMap::new();
        for (_, r) in top {
            *weights.entry(r.genus.clone()).or_insert(0) += 1;
        }
        let total: usize = weights.values().sum();
        let mut by_species: BTreeMap<&str, (String, Vec<f64>)> = BTreeMap::new();
        let mut ordered: Vec<&OracleRef> = self.refs.iter().collect();
        ordered.sort_by(|a, b| (&a.species, &a.sample).cmp(&(&b.species, &b.sample)));
        for r in ordered {
            if weights.contains_key(&r.genus) {
                let s = oracle_similarity(self.lw, self.lb, l, &r.local);
                by_species.entry(&r.species).or_insert((r.genus.clone(), Vec::new())).1.push(s);
            }
        }
        let mut ranking: Vec<(String, f64)> = by_species
            .into_iter()
            .map(|(sp, (genus, sims))| {
                let s = if mean {
                    sims.iter().sum::<f64>() / sims.len() as f64
                } else {
                    sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                };
                (sp.to_string(), weights[&genus] as f64 * s / total as f64)
            })
            .collect();
        ranking.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        OracleAnswer {
            stage1: top.iter().map(|(_, r)| r.sample.clone()).collect(),
            weights,
            ranking,
        }
    }
}

pub fn ranking() -> Verdict {
    const CASES: usize = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ties = 0usize;
    for case in 0..CASES {
        let dim = rng.random_range(1..=5);
        let mut global = tiny_model(View::Global, dim, 2, 2, case as u64);
        let mut local = tiny_model(View::Local, dim, 2, 2, case as u64 + 1000);
        // half of the cases keep the uniform initial head, which makes ties common
        if case % 2 == 1 {
            let w: Vec<f32> = (0..dim).map(|_| rng.random_range(-3.0..0.5)).collect();
            global.set_calibration(&w, rng.random_range(-1.0..1.0)).unwrap();
            let w: Vec<f32> = (0..dim).map(|_| rng.random_range(-3.0..0.5)).collect();
            local.set_calibration(&w, rng.random_range(-1.0..1.0)).unwrap();
        }
        let genera = rng.random_range(1..=4);
        let mut refs = Vec::new();
        let mut records = Vec::new();
        for g in 0..genera {
            for s in 0..rng.random_range(1..=4) {
                let species = format!("g{g}s{s}");
                records.push(TaxonRecord {
                    species_id: species.clone(),
                    genus_id: format!("g{g}"),
                    family_id: "f".into(),
                    display_name: String::new(),
                });
                for n in 0..rng.random_range(1..=4) {
                    // embeddings on a coarse grid force equal scores
                    let mut q = || (0..dim).map(|_| rng.random_range(0..4) as f32 * 0.5).collect::<Vec<f32>>();
                    refs.push(OracleRef {
                        sample: format!("{species}-{n}"),
                        species: species.clone(),
                        genus: format!("g{g}"),
                        global: q(),
                        local: q(),
                    });
                }
            }
        }
        refs.truncate(50);
        let n_r = 4;
        let set = ReferenceSet::from_entries(
            refs.iter()
                .map(|r| ReferenceEntry {
                    sample_id: r.sample.clone(),
                    species_id: r.species.clone(),
                    genus_id: r.genus.clone(),
                    global_embedding: EmbeddingVector(r.global.clone()),
                    local_embedding: EmbeddingVector(r.local.clone()),
                })
                .collect(),
            n_r,
            global.fingerprint(),
            local.fingerprint(),
        )
        .map_err(|e| format!("case {case}: {e}"))?;
        let _ = Taxonomy::new(records).map_err(|e| format!("case {case}: {e}"))?;
        let oracle = Oracle {
            refs: &refs,
            gw: global.calibration_weights(),
            gb: global.calibration_bias(),
            lw: local.calibration_weights(),
            lb: local.calibration_bias(),
        };
        let k = rng.random_range(1..=refs.len() + 2);
        let mean = case % 3 == 0;
        let config = ClassifierConfig {
            k,
            top_n: rng.random_range(1..=6),
            aggregation: if mean { Aggregation::Mean } else { Aggregation::Max },
        };
        let classifier = Classifier::new(&global, &local, &set, config.clone()).map_err(|e| format!("case {case}: {e}"))?;
        for _ in 0..3 {
            let g: Vec<f32> = (0..dim).map(|_| rng.random_range(0..4) as f32 * 0.5).collect();
            let l: Vec<f32> = (0..dim).map(|_| rng.random_range(0..4) as f32 * 0.5).collect();
            let got = classifier
                .classify_embeddings("q", &EmbeddingVector(g.clone()), &EmbeddingVector(l.clone()))
                .map_err(|e| format!("case {case}: {e}"))?;
            let want = oracle.classify(&g, &l, k, mean);
            let stage1: Vec<&str> = got.ranked_references.items.iter().map(|r| r.sample_id.as_str()).collect();
            ensure!(stage1 == want.stage1, "case {case}: stage 1 {stage1:?} vs oracle {:?}", want.stage1);
            ensure!(got.genus_weights == want.weights, "case {case}: weights differ");
            let full: Vec<(String, f64)> = got
                .species_scores
                .items
                .iter()
                .map(|s| (s.species_id.clone(), s.zeta))
                .collect();
            ensure!(full == want.ranking, "case {case}: ranking {full:?} vs oracle {:?}", want.ranking);
            let top: Vec<&str> = got.ranking.iter().map(|s| s.species_id.as_str()).collect();
            let want_top: Vec<&str> = want.ranking.iter().take(config.top_n).map(|(s, _)| s.as_str()).collect();
            ensure!(top == want_top, "case {case}: top-n differs");
            ties += want.ranking.windows(2).filter(|w| w[0].1 == w[1].1).count();
        }
    }
    Ok(format!("{CASES} random galleries x 3 queries match the exhaustive oracle ({ties} tied species pairs)"))
}

pub fn pairs() -> Verdict {
    let split = generate(&SynthSpec::default()).map_err(|e| e.to_string())?;
    let tax = Taxonomy::new(split.taxonomy.clone()).map_err(|e| e.to_string())?;
    let labels: Vec<SampleLabel<'_>> = split.train.iter().filter_map(|s| s.label()).collect();
    let species_of: BTreeMap<&str, &str> = labels.iter().map(|l| (l.sample_id, l.species_id)).collect();
    let mut checked = 0usize;
    let requests = [
        (Grouping::Species, 270, 405, false),
        (Grouping::Species, 100, 150, false),
        (Grouping::Species, 400, 600, true),
        (Grouping::Genus, 400, 600, false),
        (Grouping::Genus, 918, 1377, false),
    ];
    for (grouping, pos, neg, replacement) in requests {
        let spec = PairSpec {
            grouping,
            view: View::Global,
            positive_count: pos,
            negative_count: neg,
            seed: 9,
            allow_replacement: replacement,
        };
        let set = generate_pairs(&labels, &tax, &spec).map_err(|e| format!("{grouping} {pos}/{neg}: {e}"))?;
        ensure!(
            set.positives() == pos && set.negatives() == neg,
            "{grouping}: got {}/{} for {pos}/{neg}",
            set.positives(),
            set.negatives()
        );
        let mut seen = BTreeSet::new();
        for p in &set.pairs {
            let (a, b) = (species_of[p.left.as_str()], species_of[p.right.as_str()]);
            let same = match grouping {
                Grouping::Species => a == b,
                Grouping::Genus => tax.genus_of(a) == tax.genus_of(b),
            };
            ensure!(same == (p.label == 1), "label violation {p:?}");
            ensure!(p.left != p.right, "self pair {p:?}");
            let key = if p.left < p.right {
                (p.left.clone(), p.right.clone())
            } else {
                (p.right.clone(), p.left.clone())
            };
            ensure!(replacement || seen.insert(key), "duplicate pair {p:?}");
            checked += 1;
        }
    }
    let pools = pool_sizes(&labels, &tax, Grouping::Species).map_err(|e| e.to_string())?;
    ensure!(pools.positive == 18 * 15, "species positive pool {}", pools.positive);
    ensure!(pools.negative == 108 * 107 / 2 - 270, "species negative pool {}", pools.negative);
    let too_many = PairSpec::with_default_ratio(Grouping::Species, View::Local, 271, 0);
    ensure!(generate_pairs(&labels, &tax, &too_many).is_err(), "oversized request accepted");
    // reference subset sizes at family, genus and species level
    let subsets = [(200, 300), (400, 600), (800, 1200), (300, 450), (600, 900), (1000, 1500)];
    for (pos, neg) in subsets {
        let spec = PairSpec::with_default_ratio(Grouping::Genus, View::Global, pos, 0);
        ensure!(spec.negative_count == neg, "default ratio for {pos}: {}", spec.negative_count);
    }
    Ok(format!("{checked} pairs verified with 0 violations; 2:3 ratio matches all 6 reference subsets"))
}

/// Exact Otsu by scanning every threshold over the raw pixels, comparing the
/// between-class variances as rationals.
fn otsu_oracle(gray: &GrayImage) -> u8 {
    let px: Vec<u64> = gray.pixels().map(|p| p.0[0] as u64).collect();
    let n = px.len() as u128;
    let mut best: Option<(u8, u128, u128)> = None;
    for t in 0..=255u64 {
        let lo: Vec<u64> = px.iter().copied().filter(|&v| v <= t).collect();
        let (n0, n1) = (lo.len() as u128, n - lo.len() as u128);
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let s0: u128 = lo.iter().map(|&v| v as u128).sum();
        let s1: u128 = px.iter().map(|&v| v as u128).sum::<u128>() - s0;
        // n^2 * between variance = (s0 n1 - s1 n0)^2 / (n0 n1)
        let d = (s0 * n1).abs_diff(s1 * n0);
        let (num, den) = (d * d, n0 * n1);
        let better = match best {
            None => true,
            Some((_, bn, bd)) => num * bd > bn * den,
        };
        if better {
            best = Some((t as u8, num, den));
        }
    }
    best.map_or(px[0] as u8, |b| b.0)
}

/// Opening from its definition: a pixel survives when some placement of the
/// disk that fits inside the mask covers it.
fn opening_oracle(mask: &BinaryMask, radius: i64) -> BinaryMask {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let disk: Vec<(i64, i64)> = (-radius..=radius)
        .flat_map(|dy| (-radius..=radius).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| dx * dx + dy * dy <= radius * radius)
        .collect();
    let fits = |cx: i64, cy: i64| {
        disk.iter().all(|(dx, dy)| {
            let (x, y) = (cx + dx, cy + dy);
            x >= 0 && y >= 0 && x < w && y < h && mask.get(x as u32, y as u32)
        })
    };
    let mut out = BinaryMask::new(mask.width(), mask.height());
    for cy in 0..h {
        for cx in 0..w {
            if fits(cx, cy) {
                for (dx, dy) in &disk {
                    out.set((cx + dx) as u32, (cy + dy) as u32, true);
                }
            }
        }
    }
    out
}

fn same_mask(a: &BinaryMask, b: &BinaryMask) -> bool {
    a.width() == b.width()
        && a.height() == b.height()
        && (0..a.height()).all(|y| (0..a.width()).all(|x| a.get(x, y) == b.get(x, y)))
}

pub fn preprocessing() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..50 {
        let (w, h) = (rng.random_range(1..=24), rng.random_range(1..=24));
        let style = case % 3;
        let gray = GrayImage::from_fn(w, h, |_, _| {
            Luma([match style {
                0 => rng.random(),
                1 => rng.random_range(0..4) * 60,
                _ if rng.random_bool(0.4) => rng.random_range(20..70),
                _ => rng.random_range(170..250),
            }])
        });
        let (t, mask) = otsu_threshold(&gray);
        let want = otsu_oracle(&gray);
        ensure!(t == want, "grid {case} ({w}x{h}): otsu {t} vs oracle {want}");
        for (x, y, p) in gray.enumerate_pixels() {
            ensure!(mask.get(x, y) == (p.0[0] > t), "grid {case}: mask differs at ({x}, {y})");
        }
    }

    // hand examples: a 5x5 square loses its corners under the radius-1 cross,
    // a 1-px line vanishes
    let square = BinaryMask::from_fn(7, 7, |x, y| (1..6).contains(&x) && (1..6).contains(&y));
    let opened = tophat_filter(&square, 1).map_err(|e| e.to_string())?;
    ensure!(opened.count() == 21, "square opening kept {}", opened.count());
    ensure!(!opened.get(1, 1) && opened.get(2, 1) && opened.get(3, 3), "square corners wrong");
    let line = BinaryMask::from_fn(12, 5, |_, y| y == 2);
    ensure!(tophat_filter(&line, 1).map_err(|e| e.to_string())?.is_empty(), "thin line survived");
    let blob_and_stem = BinaryMask::from_fn(30, 20, |x, y| {
        let (dx, dy) = (x as i64 - 10, y as i64 - 10);
        dx * dx + dy * dy <= 36 || ((16..29).contains(&x) && (9..11).contains(&y))
    });
    let opened = tophat_filter(&blob_and_stem, 2).map_err(|e| e.to_string())?;
    ensure!(!opened.get(25, 10) && opened.get(10, 10), "stem not removed");
    let mut morph_cases = 3;
    for case in 0..40 {
        let (w, h) = (rng.random_range(1..=20), rng.random_range(1..=20));
        let density = [0.3, 0.6, 0.85][case % 3];
        let mask = BinaryMask::from_fn(w, h, |_, _| rng.random_bool(density));
        let radius = rng.random_range(1..=4);
        let got = tophat_filter(&mask, radius).map_err(|e| e.to_string())?;
        ensure!(
            same_mask(&got, &opening_oracle(&mask, radius as i64)),
            "opening case {case} ({w}x{h}, r={radius}) differs from reference"
        );
        morph_cases += 1;
    }

    let split = generate(&SynthSpec {
        num_genera: 2,
        species_per_genus: 2,
        samples_per_species: 2,
        train_per_species: 1,
        ..SynthSpec::default()
    })
    .map_err(|e| e.to_string())?;
    let cfg = ViewConfig::default();
    for s in split.train.iter().chain(&split.test) {
        let a = make_views(s, &cfg).map_err(|e| e.to_string())?;
        let b = make_views(s, &cfg).map_err(|e| e.to_string())?;
        ensure!(
            a.global_view.as_raw() == b.global_view.as_raw() && a.local_view.as_raw() == b.local_view.as_raw(),
            "views of {} not byte-identical",
            s.sample_id
        );
    }
    Ok(format!(
        "otsu matches the exhaustive oracle on 50 grids; {morph_cases} morphology cases match; views byte-identical"
    ))
}
