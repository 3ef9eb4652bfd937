use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::LeafSample;
use crate::error::{Error, Result};
use crate::metricnet::{EmbeddingVector, SiameseModel};
use crate::preprocess::{make_views, ViewConfig, ViewPair};
use crate::refstore::ReferenceSet;

pub const DEFAULT_K: usize = 30;
pub const DEFAULT_TOP_N: usize = 5;

/// One entry of the stage-1 list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedReference {
    pub sample_id: String,
    pub species_id: String,
    pub genus_id: String,
    pub score: f64,
}

/// Top-k references by global-view similarity; a genus may appear many times.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedGenusList {
    pub items: Vec<RankedReference>,
}

/// Appearances of each genus in a [`RankedGenusList`].
pub type GenusWeights = BTreeMap<String, usize>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeciesSimilarity {
    pub genus_id: String,
    pub similarity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeciesScore {
    pub species_id: String,
    pub genus_id: String,
    /// Local-view similarity `S_i`.
    pub similarity: f64,
    /// Fused score `w_genus * S_i / sum(w)`.
    pub zeta: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpeciesRanking {
    pub items: Vec<SpeciesScore>,
}

impl SpeciesRanking {
    pub fn top(&self, n: usize) -> &[SpeciesScore] {
        &self.items[..n.min(self.items.len())]
    }

    /// 1-based rank of a species, if ranked.
    pub fn rank_of(&self, species_id: &str) -> Option<usize> {
        self.items.iter().position(|s| s.species_id == species_id).map(|i| i + 1)
    }
}

/// How `S_i` combines the similarities to a species' references. The mean
/// is less sensitive to which references were drawn than the maximum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Max,
    #[default]
    Mean,
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Aggregation::Max),
            "mean" => Ok(Aggregation::Mean),
            _ => Err(Error::InvalidArgument(format!("unknown aggregation '{s}' (max|mean)"))),
        }
    }
}

fn by_score_then_ids(a: (f64, &str, &str), b: (f64, &str, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)).then_with(|| a.2.cmp(b.2))
}

/// Stage 1: scores the query's global embedding against every reference.
pub fn rank_genus(query: &EmbeddingVector, model: &SiameseModel, refs: &ReferenceSet, k: usize) -> Result<RankedGenusList> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if refs.is_empty() {
        return Err(Error::Validation("reference set is empty".into()));
    }
    let mut items: Vec<RankedReference> = refs
        .entries()
        .iter()
        .map(|e| RankedReference {
            sample_id: e.sample_id.clone(),
            species_id: e.species_id.clone(),
            genus_id: e.genus_id.clone(),
            score: model.similarity_embeddings(query, &e.global_embedding).value(),
        })
        .collect();
    items.sort_by(|a, b| {
        by_score_then_ids(
            (a.score, &a.species_id, &a.sample_id),
            (b.score, &b.species_id, &b.sample_id),
        )
    });
    items.truncate(k);
    Ok(RankedGenusList { items })
}

pub fn genus_frequencies(list: &RankedGenusList) -> GenusWeights {
    let mut w = GenusWeights::new();
    for item in &list.items {
        *w.entry(item.genus_id.clone()).or_default() += 1;
    }
    w
}

/// Stage 2: `S_i` for every species with references in a candidate genus.
pub fn score_species(
    query: &EmbeddingVector,
    model: &SiameseModel,
    refs: &ReferenceSet,
    candidate_genera: &BTreeSet<&str>,
    aggregation: Aggregation,
) -> Result<BTreeMap<String, SpeciesSimilarity>> {
    if candidate_genera.is_empty() {
        return Err(Error::InvalidArgument("no candidate genera".into()));
    }
    let mut acc: BTreeMap<&str, (&str, f64, usize)> = BTreeMap::new();
    for e in refs.entries() {
        if !candidate_genera.contains(e.genus_id.as_str()) {
            continue;
        }
        let s = model.similarity_embeddings(query, &e.local_embedding).value();
        let slot = acc
            .entry(&e.species_id)
            .or_insert((&e.genus_id, f64::NEG_INFINITY, 0));
        slot.1 = match aggregation {
            Aggregation::Max => slot.1.max(s),
            Aggregation::Mean if slot.2 == 0 => s,
            Aggregation::Mean => slot.1 + s,
        };
        slot.2 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(sp, (genus, v, n))| {
            let similarity = match aggregation {
                Aggregation::Max => v,
                Aggregation::Mean => v / n as f64,
            };
            (
                sp.to_owned(),
                SpeciesSimilarity {
                    genus_id: genus.to_owned(),
                    similarity,
                },
            )
        })
        .collect())
}

/// Weights each species score by its genus frequency, normalized by the
/// total frequency, and sorts by (score desc, species asc).
pub fn fuse(weights: &GenusWeights, scores: &BTreeMap<String, SpeciesSimilarity>) -> Result<SpeciesRanking> {
    let total: usize = weights.values().sum();
    let mut items = Vec::with_capacity(scores.len());
    for (sp, s) in scores {
        let w = *weights.get(&s.genus_id).ok_or_else(|| {
            Error::Validation(format!("species '{sp}' belongs to genus '{}' with no weight", s.genus_id))
        })?;
        items.push(SpeciesScore {
            species_id: sp.clone(),
            genus_id: s.genus_id.clone(),
            similarity: s.similarity,
            zeta: w as f64 * s.similarity / total as f64,
        });
    }
    items.sort_by(|a, b| by_score_then_ids((a.zeta, &a.species_id, ""), (b.zeta, &b.species_id, "")));
    Ok(SpeciesRanking { items })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub k: usize,
    pub top_n: usize,
    pub aggregation: Aggregation,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            k: DEFAULT_K,
            top_n: DEFAULT_TOP_N,
            aggregation: Aggregation::default(),
        }
    }
}

/// Per-query output with the intermediate lists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub query_id: String,
    pub ranked_references: RankedGenusList,
    pub genus_weights: GenusWeights,
    /// Every candidate species, fused and sorted.
    pub species_scores: SpeciesRanking,
    /// The first `top_n` of `species_scores`.
    pub ranking: Vec<SpeciesScore>,
}

/// Two-stage classifier over a reference set; model fingerprints are checked
/// once on construction.
pub struct Classifier<'a> {
    global: &'a SiameseModel,
    local: &'a SiameseModel,
    refs: &'a ReferenceSet,
    config: ClassifierConfig,
}

impl<'a> Classifier<'a> {
    pub fn new(
        global: &'a SiameseModel,
        local: &'a SiameseModel,
        refs: &'a ReferenceSet,
        config: ClassifierConfig,
    ) -> Result<Classifier<'a>> {
        if config.k == 0 || config.top_n == 0 {
            return Err(Error::InvalidArgument("k and top_n must be >= 1".into()));
        }
        refs.check_models(global, local)?;
        Ok(Classifier {
            global,
            local,
            refs,
            config,
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn classify(&self, sample: &LeafSample, views: &ViewConfig) -> Result<ClassificationReport> {
        let pair = make_views(sample, views)?;
        self.classify_views(&sample.sample_id, &pair)
    }

    pub fn classify_views(&self, query_id: &str, views: &ViewPair) -> Result<ClassificationReport> {
        let g = self.global.embed(&views.global_view)?;
        let l = self.local.embed(&views.local_view)?;
        self.classify_embeddings(query_id, &g, &l)
    }

    pub fn classify_embeddings(
        &self,
        query_id: &str,
        global: &EmbeddingVector,
        local: &EmbeddingVector,
    ) -> Result<ClassificationReport> {
        let ranked = rank_genus(global, self.global, self.refs, self.config.k)?;
        let weights = genus_frequencies(&ranked);
        let candidates: BTreeSet<&str> = weights.keys().map(String::as_str).collect();
        let scores = score_species(local, self.local, self.refs, &candidates, self.config.aggregation)?;
        let fused = fuse(&weights, &scores)?;
        Ok(ClassificationReport {
            query_id: query_id.to_owned(),
            ranking: fused.top(self.config.top_n).to_vec(),
            ranked_references: ranked,
            genus_weights: weights,
            species_scores: fused,
        })
    }
}

/// Single-view baseline: species ranked by their best reference similarity.
pub fn flat_ranking<'r>(
    query: &EmbeddingVector,
    model: &SiameseModel,
    refs: impl IntoIterator<Item = (&'r str, &'r EmbeddingVector)>,
) -> Vec<(String, f64)> {
    let mut best: BTreeMap<&str, f64> = BTreeMap::new();
    for (species, emb) in refs {
        let s = model.similarity_embeddings(query, emb).value();
        let slot = best.entry(species).or_insert(f64::NEG_INFINITY);
        *slot = slot.max(s);
    }
    let mut out: Vec<(String, f64)> = best.into_iter().map(|(k, v)| (k.to_owned(), v)).collect();
    out.sort_by(|a, b| by_score_then_ids((a.1, &a.0, ""), (b.1, &b.0, "")));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim(genus: &str, s: f64) -> SpeciesSimilarity {
        SpeciesSimilarity {
            genus_id: genus.into(),
            similarity: s,
        }
    }

    #[test]
    fn fusion_example() {
        let w: GenusWeights = [("A".to_string(), 3), ("B".to_string(), 2)].into();
        let scores: BTreeMap<String, SpeciesSimilarity> =
            [("a1".to_string(), sim("A", 0.8)), ("b1".to_string(), sim("B", 0.9))].into();
        let r = fuse(&w, &scores).unwrap();
        assert_eq!(r.items[0].species_id, "a1");
        assert!((r.items[0].zeta - 0.48).abs() < 1e-12);
        assert!((r.items[1].zeta - 0.36).abs() < 1e-12);
    }

    #[test]
    fn single_genus_zeta_is_similarity() {
        let w: GenusWeights = [("A".to_string(), 7)].into();
        let scores: BTreeMap<String, SpeciesSimilarity> =
            [("x".to_string(), sim("A", 0.3)), ("y".to_string(), sim("A", 0.6))].into();
        let r = fuse(&w, &scores).unwrap();
        assert_eq!(r.items[0].species_id, "y");
        assert_eq!(r.items[0].zeta, 0.6);
        assert_eq!(r.items[1].zeta, 0.3);
    }

    #[test]
    fn equal_scores_follow_weights_then_ids() {
        let w: GenusWeights = [("A".to_string(), 1), ("B".to_string(), 4)].into();
        let scores: BTreeMap<String, SpeciesSimilarity> = [
            ("a".to_string(), sim("A", 0.5)),
            ("c".to_string(), sim("B", 0.5)),
            ("b".to_string(), sim("B", 0.5)),
        ]
        .into();
        let r = fuse(&w, &scores).unwrap();
        let order: Vec<&str> = r.items.iter().map(|s| s.species_id.as_str()).collect();
        assert_eq!(order, ["b", "c", "a"]);
    }

    #[test]
    fn missing_weight_errors() {
        let w: GenusWeights = [("A".to_string(), 1)].into();
        let scores: BTreeMap<String, SpeciesSimilarity> = [("z".to_string(), sim("Z", 0.5))].into();
        assert!(fuse(&w, &scores).is_err());
    }

    #[test]
    fn frequencies_count_repeats() {
        let item = |g: &str| RankedReference {
            sample_id: "s".into(),
            species_id: "sp".into(),
            genus_id: g.into(),
            score: 0.5,
        };
        let list = RankedGenusList {
            items: vec![item("A"), item("B"), item("A"), item("A"), item("B")],
        };
        let w = genus_frequencies(&list);
        assert_eq!(w, [("A".to_string(), 3), ("B".to_string(), 2)].into());
        let one = RankedGenusList { items: vec![item("A")] };
        assert_eq!(genus_frequencies(&one), [("A".to_string(), 1)].into());
    }
}
