use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{Level, Taxonomy};
use crate::error::{Error, Result};

/// True label and the species ids a classifier returned, best first. An
/// empty ranking records a failed query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub true_species: String,
    pub ranking: Vec<String>,
}

impl QueryOutcome {
    /// 1-based rank of the true species.
    pub fn rank(&self) -> Option<usize> {
        self.ranking.iter().position(|s| *s == self.true_species).map(|i| i + 1)
    }

    /// `1/rank`, or 0 when the truth is absent.
    pub fn reciprocal_rank(&self) -> f64 {
        self.rank().map_or(0.0, |r| 1.0 / r as f64)
    }

    pub fn hit_at(&self, k: usize) -> bool {
        self.rank().is_some_and(|r| r <= k)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Plant {
    pub plant_id: String,
    pub pictures: Vec<QueryOutcome>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub user_id: String,
    pub plants: Vec<Plant>,
}

/// Users, their observed plants, and each plant's pictures.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservationTree {
    pub users: Vec<User>,
}

impl ObservationTree {
    /// One user with one single-picture plant per outcome; the score then
    /// reduces to mean reciprocal rank.
    pub fn flat(outcomes: Vec<QueryOutcome>) -> ObservationTree {
        ObservationTree {
            users: vec![User {
                user_id: "all".into(),
                plants: outcomes
                    .into_iter()
                    .enumerate()
                    .map(|(i, o)| Plant {
                        plant_id: i.to_string(),
                        pictures: vec![o],
                    })
                    .collect(),
            }],
        }
    }
}

/// Reciprocal rank averaged over pictures of a plant, then plants of a user,
/// then users. Plants without pictures and users without any are skipped.
pub fn s_metric(tree: &ObservationTree) -> Result<f64> {
    let mut user_sum = 0.0;
    let mut users = 0usize;
    for u in &tree.users {
        let mut plant_sum = 0.0;
        let mut plants = 0usize;
        for p in &u.plants {
            if p.pictures.is_empty() {
                continue;
            }
            let s: f64 = p.pictures.iter().map(QueryOutcome::reciprocal_rank).sum();
            plant_sum += s / p.pictures.len() as f64;
            plants += 1;
        }
        if plants > 0 {
            user_sum += plant_sum / plants as f64;
            users += 1;
        }
    }
    if users == 0 {
        return Err(Error::Validation("observation tree holds no pictures".into()));
    }
    Ok(user_sum / users as f64)
}

/// Fraction of outcomes whose truth is among the first `top_k` entries.
pub fn accuracy(outcomes: &[QueryOutcome], top_k: usize) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    outcomes.iter().filter(|o| o.hit_at(top_k)).count() as f64 / outcomes.len() as f64
}

/// Rows are true labels, columns predicted top-1 labels. The last column
/// counts queries with an empty ranking.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub level: Level,
    pub labels: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

pub const UNCLASSIFIED: &str = "(none)";

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, label: &str) -> Option<usize> {
        let i = self.labels.iter().position(|l| l == label)?;
        Some(self.counts[i].iter().sum())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\predicted");
        for l in self.labels.iter().map(String::as_str).chain([UNCLASSIFIED]) {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.counts) {
            out.push_str(l);
            for c in row {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn confusion_matrix(outcomes: &[QueryOutcome], taxonomy: &Taxonomy, level: Level) -> Result<ConfusionMatrix> {
    let project = |s: &str| {
        taxonomy
            .label_at(s, level)
            .ok_or_else(|| Error::Validation(format!("species '{s}' missing from the taxonomy")))
    };
    let labels = taxonomy.labels(level);
    let index: BTreeMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let n = labels.len();
    let mut counts = vec![vec![0usize; n + 1]; n];
    for o in outcomes {
        let row = index[project(&o.true_species)?];
        let col = match o.ranking.first() {
            Some(p) => index[project(p)?],
            None => n,
        };
        counts[row][col] += 1;
    }
    Ok(ConfusionMatrix { level, labels, counts })
}

/// Per-species (top-1 hits, queries).
pub fn species_hits(outcomes: &[QueryOutcome]) -> BTreeMap<String, (usize, usize)> {
    let mut out: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for o in outcomes {
        let e = out.entry(o.true_species.clone()).or_default();
        e.0 += o.hit_at(1) as usize;
        e.1 += 1;
    }
    out
}
