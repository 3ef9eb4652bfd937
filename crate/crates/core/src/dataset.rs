//! Taxonomy tables, labeled leaf samples and train/test splits.
//!
//! The corpus on disk is `<root>/<species_id>/<sample_id>.png`; the taxonomy
//! is a CSV with header `species_id,genus_id,family_id,display_name`.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TAXONOMY_HEADER: [&str; 4] = ["species_id", "genus_id", "family_id", "display_name"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonRecord {
    pub species_id: String,
    pub genus_id: String,
    pub family_id: String,
    pub display_name: String,
}

/// Taxonomic level used when projecting species labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Species,
    Genus,
    Family,
}

/// Validated taxonomy with species lookups.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Taxonomy {
    records: Vec<TaxonRecord>,
    by_species: HashMap<String, usize>,
}

impl Taxonomy {
    pub fn new(records: Vec<TaxonRecord>) -> Result<Self> {
        let mut by_species = HashMap::with_capacity(records.len());
        let mut genus_family: HashMap<&str, &str> = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            if let Some(prev) = by_species.insert(r.species_id.clone(), i) {
                let first = &records[prev];
                return Err(Error::Validation(if first.genus_id != r.genus_id {
                    format!(
                        "species '{}' listed under genera '{}' and '{}'",
                        r.species_id, first.genus_id, r.genus_id
                    )
                } else {
                    format!("duplicate species_id '{}'", r.species_id)
                }));
            }
            match genus_family.get(r.genus_id.as_str()) {
                Some(f) if *f != r.family_id => {
                    return Err(Error::Validation(format!(
                        "genus '{}' listed under families '{}' and '{}'",
                        r.genus_id, f, r.family_id
                    )))
                }
                _ => {
                    genus_family.insert(&r.genus_id, &r.family_id);
                }
            }
        }
        Ok(Taxonomy { records, by_species })
    }

    pub fn records(&self) -> &[TaxonRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, species_id: &str) -> Option<&TaxonRecord> {
        self.by_species.get(species_id).map(|&i| &self.records[i])
    }

    pub fn contains(&self, species_id: &str) -> bool {
        self.by_species.contains_key(species_id)
    }

    pub fn genus_of(&self, species_id: &str) -> Option<&str> {
        self.get(species_id).map(|r| r.genus_id.as_str())
    }

    /// Projects a species label to the requested level.
    pub fn label_at(&self, species_id: &str, level: Level) -> Option<&str> {
        self.get(species_id).map(|r| match level {
            Level::Species => r.species_id.as_str(),
            Level::Genus => r.genus_id.as_str(),
            Level::Family => r.family_id.as_str(),
        })
    }

    /// Sorted distinct labels at a level.
    pub fn labels(&self, level: Level) -> Vec<String> {
        let set: BTreeSet<&str> = self
            .records
            .iter()
            .map(|r| match level {
                Level::Species => r.species_id.as_str(),
                Level::Genus => r.genus_id.as_str(),
                Level::Family => r.family_id.as_str(),
            })
            .collect();
        set.into_iter().map(str::to_owned).collect()
    }

    pub fn genera(&self) -> Vec<String> {
        self.labels(Level::Genus)
    }

    /// Species of each genus, both sorted.
    pub fn species_by_genus(&self) -> BTreeMap<String, Vec<String>> {
        let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for r in &self.records {
            out.entry(r.genus_id.clone()).or_default().push(r.species_id.clone());
        }
        for v in out.values_mut() {
            v.sort();
        }
        out
    }

    /// New taxonomy with `extra` rows appended.
    pub fn extended(&self, extra: &[TaxonRecord]) -> Result<Taxonomy> {
        let mut records = self.records.clone();
        records.extend_from_slice(extra);
        Taxonomy::new(records)
    }
}

fn check_token(path: &Path, line: usize, field: &str, value: &str) -> Result<()> {
    if value.is_empty() || value.chars().any(|c| c.is_whitespace() || c == ',') {
        return Err(Error::Parse {
            path: path.to_owned(),
            line,
            message: format!("invalid {field} token '{value}'"),
        });
    }
    Ok(())
}

/// Reads a taxonomy CSV and validates it.
pub fn load_taxonomy(path: &Path) -> Result<Vec<TaxonRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let header_ok = lines
        .next()
        .map(|(_, h)| h.trim_start_matches('\u{feff}').trim().split(',').eq(TAXONOMY_HEADER))
        .unwrap_or(false);
    if !header_ok {
        return Err(Error::Parse {
            path: path.to_owned(),
            line: 1,
            message: format!("expected header '{}'", TAXONOMY_HEADER.join(",")),
        });
    }
    let mut records = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.splitn(4, ',').collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                path: path.to_owned(),
                line,
                message: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        for (name, value) in TAXONOMY_HEADER.iter().zip(&fields[..3]) {
            check_token(path, line, name, value)?;
        }
        records.push(TaxonRecord {
            species_id: fields[0].to_owned(),
            genus_id: fields[1].to_owned(),
            family_id: fields[2].to_owned(),
            display_name: fields[3].to_owned(),
        });
    }
    Taxonomy::new(records.clone())?;
    Ok(records)
}

pub fn write_taxonomy(path: &Path, records: &[TaxonRecord]) -> Result<()> {
    let mut out = TAXONOMY_HEADER.join(",");
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.species_id, r.genus_id, r.family_id, r.display_name
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// One leaf image, labeled or not.
#[derive(Clone, Debug, PartialEq)]
pub struct LeafSample {
    pub sample_id: String,
    pub image: RgbImage,
    pub species_id: Option<String>,
}

impl LeafSample {
    pub fn new(sample_id: impl Into<String>, image: RgbImage, species_id: Option<String>) -> Result<Self> {
        if image.width() == 0 || image.height() == 0 {
            return Err(Error::Validation("image must be at least 1x1".into()));
        }
        Ok(LeafSample {
            sample_id: sample_id.into(),
            image,
            species_id,
        })
    }

    pub fn label(&self) -> Option<SampleLabel<'_>> {
        self.species_id.as_deref().map(|species_id| SampleLabel {
            sample_id: &self.sample_id,
            species_id,
        })
    }
}

/// Borrowed (sample id, species id) pair used by the pair and reference samplers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SampleLabel<'a> {
    pub sample_id: &'a str,
    pub species_id: &'a str,
}

pub fn labels_of(samples: &[LeafSample]) -> Vec<SampleLabel<'_>> {
    samples.iter().filter_map(LeafSample::label).collect()
}

#[derive(Clone, Debug, Default)]
pub struct DatasetSplit {
    pub train: Vec<LeafSample>,
    pub test: Vec<LeafSample>,
    pub taxonomy: Vec<TaxonRecord>,
}

impl DatasetSplit {
    /// Checks that labels resolve and train/test ids are disjoint.
    pub fn validate(&self) -> Result<()> {
        let tax = Taxonomy::new(self.taxonomy.clone())?;
        let mut train_ids = HashSet::new();
        for s in &self.train {
            if !train_ids.insert(s.sample_id.as_str()) {
                return Err(Error::Validation(format!("duplicate train sample '{}'", s.sample_id)));
            }
        }
        for s in self.train.iter().chain(&self.test) {
            if let Some(sp) = &s.species_id {
                if !tax.contains(sp) {
                    return Err(Error::Validation(format!(
                        "sample '{}' has species '{sp}' missing from taxonomy",
                        s.sample_id
                    )));
                }
            }
        }
        for s in &self.test {
            if train_ids.contains(s.sample_id.as_str()) {
                return Err(Error::Validation(format!(
                    "sample '{}' is in both train and test",
                    s.sample_id
                )));
            }
        }
        Ok(())
    }
}

/// How test samples are chosen from a corpus.
#[derive(Clone, Debug, PartialEq)]
pub enum SplitPolicy {
    /// A fixed number of test samples per species, drawn with a seeded shuffle.
    TestPerClass { count: usize, seed: u64 },
    /// A fraction of each species (rounded down, at least one train sample kept).
    TestFraction { fraction: f64, seed: u64 },
    /// Explicit test ids; everything else is train.
    Manifest(Vec<String>),
}

/// Reads a split manifest: one sample id per line.
pub fn load_manifest(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect())
}

pub fn write_manifest(path: &Path, ids: &[String]) -> Result<()> {
    let mut out = String::new();
    for id in ids {
        out.push_str(id);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_owned(),
        source,
    })?;
    Ok(img.to_rgb8())
}

pub fn write_png(path: &Path, image: &RgbImage) -> Result<()> {
    image.save_with_format(path, image::ImageFormat::Png).map_err(|source| Error::Image {
        path: path.to_owned(),
        source,
    })
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

/// Loads every labeled image under `root`, species directories in sorted order.
pub fn load_corpus(root: &Path, taxonomy: &Taxonomy) -> Result<Vec<LeafSample>> {
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for dir in sorted_entries(root)? {
        if !dir.is_dir() {
            continue;
        }
        let species = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_owned();
        if !taxonomy.contains(&species) {
            return Err(Error::Validation(format!(
                "species directory '{species}' is not in the taxonomy"
            )));
        }
        for file in sorted_entries(&dir)? {
            if file.extension().and_then(|e| e.to_str()) != Some("png") {
                continue;
            }
            let id = file.file_stem().and_then(|n| n.to_str()).unwrap_or_default().to_owned();
            if !seen.insert(id.clone()) {
                return Err(Error::Validation(format!("duplicate sample id '{id}'")));
            }
            let image = read_rgb(&file)?;
            samples.push(LeafSample::new(id, image, Some(species.clone()))?);
        }
    }
    Ok(samples)
}

/// Splits labeled samples into train and test according to `policy`.
///
/// Pure function of the sample list order, ids and the policy's seed.
pub fn split_samples(samples: Vec<LeafSample>, policy: &SplitPolicy) -> Result<(Vec<LeafSample>, Vec<LeafSample>)> {
    if let SplitPolicy::Manifest(ids) = policy {
        let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
        let present: HashSet<&str> = samples.iter().map(|s| s.sample_id.as_str()).collect();
        if let Some(missing) = ids.iter().find(|id| !present.contains(id.as_str())) {
            return Err(Error::Validation(format!("manifest id '{missing}' not found in corpus")));
        }
        let (test, train) = samples
            .into_iter()
            .partition(|s| wanted.contains(s.sample_id.as_str()));
        return Ok((train, test));
    }

    let mut by_species: BTreeMap<String, Vec<LeafSample>> = BTreeMap::new();
    for s in samples {
        let key = s.species_id.clone().unwrap_or_default();
        by_species.entry(key).or_default().push(s);
    }
    let seed = match policy {
        SplitPolicy::TestPerClass { seed, .. } | SplitPolicy::TestFraction { seed, .. } => *seed,
        SplitPolicy::Manifest(_) => unreachable!(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (species, mut group) in by_species {
        group.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        let n = group.len();
        let n_test = match policy {
            SplitPolicy::TestPerClass { count, .. } => *count,
            SplitPolicy::TestFraction { fraction, .. } => {
                if !(0.0..1.0).contains(fraction) {
                    return Err(Error::InvalidArgument(format!("test fraction {fraction} not in [0,1)")));
                }
                ((n as f64) * fraction).floor() as usize
            }
            SplitPolicy::Manifest(_) => unreachable!(),
        };
        if n_test >= n {
            return Err(Error::InsufficientSamples(format!(
                "species '{species}' has {n} samples, {n_test} requested for test plus at least one for training"
            )));
        }
        group.shuffle(&mut rng);
        let rest = group.split_off(n_test);
        test.extend(group);
        train.extend(rest);
    }
    train.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    test.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    Ok((train, test))
}

/// Loads `root` and splits it.
pub fn load_split(root: &Path, taxonomy: &[TaxonRecord], policy: &SplitPolicy) -> Result<DatasetSplit> {
    let tax = Taxonomy::new(taxonomy.to_vec())?;
    let samples = load_corpus(root, &tax)?;
    let (train, test) = split_samples(samples, policy)?;
    let split = DatasetSplit {
        train,
        test,
        taxonomy: taxonomy.to_vec(),
    };
    split.validate()?;
    Ok(split)
}
