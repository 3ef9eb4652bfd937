//! Positive/negative pair sampling for Siamese training.
//!
//! Candidate pools are never materialized: a pool index is decoded into a
//! concrete `(left, right)` pair, so sampling without replacement stays cheap
//! even when the pools hold millions of pairs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{SampleLabel, Taxonomy};
use crate::error::{Error, Result};
use crate::preprocess::View;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grouping {
    Species,
    Genus,
}

impl std::str::FromStr for Grouping {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "species" => Ok(Grouping::Species),
            "genus" => Ok(Grouping::Genus),
            _ => Err(Error::InvalidArgument(format!("unknown grouping '{s}'"))),
        }
    }
}

impl std::fmt::Display for Grouping {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Grouping::Species => "species",
            Grouping::Genus => "genus",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSpec {
    pub grouping: Grouping,
    pub view: View,
    pub positive_count: usize,
    pub negative_count: usize,
    pub seed: u64,
    /// Sample with replacement when a pool is smaller than the request.
    #[serde(default)]
    pub allow_replacement: bool,
}

impl PairSpec {
    /// Negatives default to 1.5x positives (a 2:3 ratio).
    pub fn with_default_ratio(grouping: Grouping, view: View, positive_count: usize, seed: u64) -> PairSpec {
        PairSpec {
            grouping,
            view,
            positive_count,
            negative_count: positive_count * 3 / 2,
            seed,
            allow_replacement: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.negative_count < self.positive_count {
            return Err(Error::InvalidArgument(format!(
                "negative count {} must be >= positive count {}",
                self.negative_count, self.positive_count
            )));
        }
        Ok(())
    }
}

/// A labeled pair referring to samples by id; rasters are looked up at training time.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrainingPair {
    pub left: String,
    pub right: String,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSet {
    pub spec: PairSpec,
    pub pairs: Vec<TrainingPair>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl PairSet {
    pub fn positives(&self) -> usize {
        self.pairs.iter().filter(|p| p.label == 1).count()
    }

    pub fn negatives(&self) -> usize {
        self.pairs.len() - self.positives()
    }
}

/// Samples grouped by label, both levels sorted for determinism.
struct Groups<'a> {
    members: Vec<Vec<&'a str>>,
}

impl<'a> Groups<'a> {
    fn new(samples: &[SampleLabel<'a>], taxonomy: &Taxonomy, grouping: Grouping) -> Result<Self> {
        let mut map: BTreeMap<String, Vec<&'a str>> = BTreeMap::new();
        for s in samples {
            let rec = taxonomy.get(s.species_id).ok_or_else(|| {
                Error::Validation(format!("sample '{}' has unknown species '{}'", s.sample_id, s.species_id))
            })?;
            let key = match grouping {
                Grouping::Species => &rec.species_id,
                Grouping::Genus => &rec.genus_id,
            };
            map.entry(key.clone()).or_default().push(s.sample_id);
        }
        let members = map
            .into_values()
            .map(|mut v| {
                v.sort_unstable();
                v.dedup();
                v
            })
            .collect();
        Ok(Groups { members })
    }
}

/// Sizes of the positive and negative candidate pools.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolSizes {
    pub positive: u64,
    pub negative: u64,
}

struct Pools {
    /// Prefix sums of C(n_g, 2).
    pos_offsets: Vec<u64>,
    /// (group a, group b, prefix offset) blocks of n_a * n_b cross pairs.
    neg_blocks: Vec<(usize, usize, u64)>,
    sizes: PoolSizes,
}

fn choose2(n: usize) -> u64 {
    let n = n as u64;
    n * n.saturating_sub(1) / 2
}

impl Pools {
    fn new(groups: &Groups<'_>) -> Pools {
        let mut pos_offsets = Vec::with_capacity(groups.members.len() + 1);
        let mut acc = 0u64;
        pos_offsets.push(0);
        for g in &groups.members {
            acc += choose2(g.len());
            pos_offsets.push(acc);
        }
        let mut neg_blocks = Vec::new();
        let mut neg = 0u64;
        for a in 0..groups.members.len() {
            for b in a + 1..groups.members.len() {
                neg_blocks.push((a, b, neg));
                neg += (groups.members[a].len() * groups.members[b].len()) as u64;
            }
        }
        Pools {
            pos_offsets,
            neg_blocks,
            sizes: PoolSizes {
                positive: acc,
                negative: neg,
            },
        }
    }

    fn positive(&self, groups: &Groups<'_>, idx: u64) -> (usize, usize, usize) {
        let g = self.pos_offsets.partition_point(|&o| o <= idx) - 1;
        let n = groups.members[g].len() as u64;
        let mut t = idx - self.pos_offsets[g];
        // row i holds pairs (i, i+1..n)
        let mut i = 0u64;
        while t >= n - 1 - i {
            t -= n - 1 - i;
            i += 1;
        }
        (g, i as usize, (i + 1 + t) as usize)
    }

    fn negative(&self, groups: &Groups<'_>, idx: u64) -> ((usize, usize), (usize, usize)) {
        let k = self.neg_blocks.partition_point(|&(_, _, o)| o <= idx) - 1;
        let (a, b, off) = self.neg_blocks[k];
        let t = idx - off;
        let nb = groups.members[b].len() as u64;
        ((a, (t / nb) as usize), (b, (t % nb) as usize))
    }
}

pub fn pool_sizes(samples: &[SampleLabel<'_>], taxonomy: &Taxonomy, grouping: Grouping) -> Result<PoolSizes> {
    let groups = Groups::new(samples, taxonomy, grouping)?;
    Ok(Pools::new(&groups).sizes)
}

fn draw(rng: &mut ChaCha8Rng, pool: u64, count: usize, replace: bool) -> Vec<u64> {
    if replace {
        (0..count).map(|_| rng.random_range(0..pool)).collect()
    } else if pool <= usize::MAX as u64 {
        index::sample(rng, pool as usize, count).into_iter().map(|i| i as u64).collect()
    } else {
        unreachable!("pool larger than the address space")
    }
}

/// Draws exactly `spec.positive_count` same-group and `spec.negative_count`
/// cross-group pairs, uniformly from the candidate pools.
pub fn generate_pairs(samples: &[SampleLabel<'_>], taxonomy: &Taxonomy, spec: &PairSpec) -> Result<PairSet> {
    spec.validate()?;
    if samples.is_empty() {
        return Err(Error::InsufficientSamples("no labeled samples".into()));
    }
    let groups = Groups::new(samples, taxonomy, spec.grouping)?;
    if groups.members.len() < 2 && spec.negative_count > 0 {
        return Err(Error::InsufficientSamples(format!(
            "only one {} present; negatives need at least two",
            spec.grouping
        )));
    }
    let pools = Pools::new(&groups);
    let mut warnings = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut plan = |kind: &'static str, pool: u64, requested: usize| -> Result<bool> {
        if requested as u64 <= pool {
            return Ok(false);
        }
        if spec.allow_replacement && pool > 0 {
            warnings.push(format!(
                "{kind} pool has {pool} candidates for {requested} requested; sampling with replacement"
            ));
            Ok(true)
        } else {
            Err(Error::PoolTooSmall { kind, pool, requested })
        }
    };
    let pos_replace = plan("positive", pools.sizes.positive, spec.positive_count)?;
    let neg_replace = plan("negative", pools.sizes.negative, spec.negative_count)?;

    let mut pairs = Vec::with_capacity(spec.positive_count + spec.negative_count);
    for idx in draw(&mut rng, pools.sizes.positive, spec.positive_count, pos_replace) {
        let (g, i, j) = pools.positive(&groups, idx);
        let m = &groups.members[g];
        pairs.push(TrainingPair {
            left: m[i].to_owned(),
            right: m[j].to_owned(),
            label: 1,
        });
    }
    for idx in draw(&mut rng, pools.sizes.negative, spec.negative_count, neg_replace) {
        let ((a, i), (b, j)) = pools.negative(&groups, idx);
        pairs.push(TrainingPair {
            left: groups.members[a][i].to_owned(),
            right: groups.members[b][j].to_owned(),
            label: 0,
        });
    }
    Ok(PairSet {
        spec: spec.clone(),
        pairs,
        warnings,
    })
}

/// Seeded mini-batch order over `len` pairs; every epoch is a fresh shuffle.
#[derive(Clone, Debug)]
pub struct BatchSchedule {
    len: usize,
    batch_size: usize,
    seed: u64,
}

impl BatchSchedule {
    pub fn new(len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        Ok(BatchSchedule { len, batch_size, seed })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.len.div_ceil(self.batch_size)
    }

    /// Index batches for one epoch; the last batch may be partial.
    pub fn epoch(&self, epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.len).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
        order.chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }
}

/// Batches of pairs for one epoch.
pub fn batch_iterator<'a>(
    pairs: &'a [TrainingPair],
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<impl Iterator<Item = Vec<&'a TrainingPair>> + 'a> {
    let schedule = BatchSchedule::new(pairs.len(), batch_size, seed)?;
    Ok(schedule
        .epoch(epoch)
        .into_iter()
        .map(move |b| b.into_iter().map(|i| &pairs[i]).collect()))
}

/// Writes `# <spec json>` followed by `left_id,right_id,label` rows.
pub fn write_pair_manifest(path: &Path, set: &PairSet) -> Result<()> {
    let mut out = Vec::new();
    let header = serde_json::json!({ "spec": set.spec, "warnings": set.warnings });
    writeln!(out, "# {}", serde_json::to_string(&header)?).unwrap();
    writeln!(out, "left_id,right_id,label").unwrap();
    for p in &set.pairs {
        writeln!(out, "{},{},{}", p.left, p.right, p.label).unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_pair_manifest(path: &Path) -> Result<PairSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_owned(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| parse_err(1, "empty pair manifest".into()))?;
    let json = first
        .strip_prefix('#')
        .ok_or_else(|| parse_err(1, "missing JSON header line".into()))?;
    let header: serde_json::Value =
        serde_json::from_str(json.trim()).map_err(|e| parse_err(1, e.to_string()))?;
    let spec: PairSpec =
        serde_json::from_value(header["spec"].clone()).map_err(|e| parse_err(1, e.to_string()))?;
    let warnings: Vec<String> = serde_json::from_value(header["warnings"].clone()).unwrap_or_default();
    match lines.next() {
        Some((_, "left_id,right_id,label")) => {}
        _ => return Err(parse_err(2, "expected header 'left_id,right_id,label'".into())),
    }
    let mut pairs = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let label = match f.as_slice() {
            [_, _, "0"] => 0,
            [_, _, "1"] => 1,
            _ => return Err(parse_err(i + 1, format!("bad pair row '{line}'"))),
        };
        pairs.push(TrainingPair {
            left: f[0].to_owned(),
            right: f[1].to_owned(),
            label,
        });
    }
    Ok(PairSet { spec, pairs, warnings })
}
