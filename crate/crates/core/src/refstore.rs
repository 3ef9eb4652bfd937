use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{LeafSample, SampleLabel, Taxonomy};
use crate::error::{Error, Result};
use crate::metricnet::{EmbeddingVector, SiameseModel};
use crate::preprocess::{make_views, View, ViewConfig, ViewPair};

pub const REFS_MAGIC: &[u8; 4] = b"REFS";
pub const REFS_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "references.json";
pub const CACHE_FILE: &str = "references.bin";

/// How many references each genus receives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReferenceBudget {
    /// `n` references per species; a genus gets `n x species`.
    PerSpecies(usize),
    /// `n` references for the whole genus, raised to the species count so
    /// every species is covered.
    PerGenus(usize),
}

impl ReferenceBudget {
    pub fn count(self) -> usize {
        match self {
            ReferenceBudget::PerSpecies(n) | ReferenceBudget::PerGenus(n) => n,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Selection {
    /// Selected sample ids, sorted.
    pub sample_ids: Vec<String>,
    pub warnings: Vec<String>,
}

/// Draws reference samples genus by genus. Each species' training samples are
/// shuffled, then the genus budget is filled round-robin over its species in
/// id order, so a species short of samples is topped up by its siblings.
pub fn select_references(
    train: &[SampleLabel<'_>],
    taxonomy: &Taxonomy,
    budget: ReferenceBudget,
    seed: u64,
) -> Result<Selection> {
    if budget.count() == 0 {
        return Err(Error::InvalidArgument("reference budget must be >= 1".into()));
    }
    let mut by_species: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for s in train {
        if !taxonomy.contains(s.species_id) {
            return Err(Error::Validation(format!(
                "sample '{}' has species '{}' missing from the taxonomy",
                s.sample_id, s.species_id
            )));
        }
        by_species.entry(s.species_id).or_default().push(s.sample_id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut selection = Selection::default();
    for (genus, species) in taxonomy.species_by_genus() {
        let mut pools = Vec::with_capacity(species.len());
        for sp in &species {
            let mut pool = by_species
                .get(sp.as_str())
                .cloned()
                .ok_or_else(|| Error::InsufficientSamples(format!("species '{sp}' has no training samples")))?;
            pool.sort_unstable();
            pool.shuffle(&mut rng);
            pools.push(pool);
        }
        let n = budget.count();
        let target = match budget {
            ReferenceBudget::PerSpecies(_) => n * species.len(),
            ReferenceBudget::PerGenus(_) => n.max(species.len()),
        };
        let available: usize = pools.iter().map(Vec::len).sum();
        let mut taken = vec![0usize; species.len()];
        let mut total = 0;
        'fill: for round in 0.. {
            let mut any = false;
            for (i, pool) in pools.iter().enumerate() {
                if total == target {
                    break 'fill;
                }
                if let Some(id) = pool.get(round) {
                    selection.sample_ids.push((*id).to_owned());
                    taken[i] += 1;
                    total += 1;
                    any = true;
                }
            }
            if !any {
                break;
            }
        }
        if let ReferenceBudget::PerSpecies(_) = budget {
            for (sp, (&t, pool)) in species.iter().zip(taken.iter().zip(&pools)) {
                if pool.len() < n {
                    selection.warnings.push(format!(
                        "species '{sp}' has {} of {n} requested references; {} filled from sibling species",
                        pool.len(),
                        n - t.min(n)
                    ));
                }
            }
        }
        if total < target {
            selection.warnings.push(format!(
                "genus '{genus}' has {available} training samples, below its budget of {target}"
            ));
        }
    }
    selection.sample_ids.sort();
    Ok(selection)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    pub sample_id: String,
    pub species_id: String,
    pub genus_id: String,
    pub global_embedding: EmbeddingVector,
    pub local_embedding: EmbeddingVector,
}

/// Immutable reference gallery with cached embeddings for both views.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSet {
    entries: Vec<ReferenceEntry>,
    n_r: usize,
    global_fingerprint: String,
    local_fingerprint: String,
}

fn check_pair(global: &SiameseModel, local: &SiameseModel) -> Result<()> {
    if global.meta().view != View::Global || local.meta().view != View::Local {
        return Err(Error::InvalidArgument(
            "expected a global-view model and a local-view model, in that order".into(),
        ));
    }
    Ok(())
}

impl ReferenceSet {
    /// Embeds every reference's global view with `global` and local view with `local`.
    pub fn build(
        refs: &[(SampleLabel<'_>, &ViewPair)],
        taxonomy: &Taxonomy,
        global: &SiameseModel,
        local: &SiameseModel,
        n_r: usize,
    ) -> Result<ReferenceSet> {
        check_pair(global, local)?;
        let entries = embed_entries(refs, taxonomy, global, local)?;
        ReferenceSet::from_entries(entries, n_r, global.fingerprint(), local.fingerprint())
    }

    /// Runs preprocessing on labeled samples, then [`ReferenceSet::build`].
    pub fn build_from_samples(
        samples: &[&LeafSample],
        taxonomy: &Taxonomy,
        global: &SiameseModel,
        local: &SiameseModel,
        config: &ViewConfig,
        n_r: usize,
    ) -> Result<ReferenceSet> {
        let views = views_of(samples, config)?;
        let refs = labeled_views(samples, &views)?;
        ReferenceSet::build(&refs, taxonomy, global, local, n_r)
    }

    /// Assembles a set from precomputed entries. Entries are sorted by
    /// (species, sample); sample ids must be unique.
    pub fn from_entries(
        mut entries: Vec<ReferenceEntry>,
        n_r: usize,
        global_fingerprint: String,
        local_fingerprint: String,
    ) -> Result<ReferenceSet> {
        entries.sort_by(|a, b| (&a.species_id, &a.sample_id).cmp(&(&b.species_id, &b.sample_id)));
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.sample_id.as_str()) {
                return Err(Error::Validation(format!("duplicate reference sample '{}'", e.sample_id)));
            }
        }
        if let Some(first) = entries.first() {
            let (mg, ml) = (first.global_embedding.len(), first.local_embedding.len());
            if entries
                .iter()
                .any(|e| e.global_embedding.len() != mg || e.local_embedding.len() != ml)
            {
                return Err(Error::Validation("reference embeddings differ in length".into()));
            }
        }
        Ok(ReferenceSet {
            entries,
            n_r,
            global_fingerprint,
            local_fingerprint,
        })
    }

    pub fn entries(&self) -> &[ReferenceEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn global_fingerprint(&self) -> &str {
        &self.global_fingerprint
    }

    pub fn local_fingerprint(&self) -> &str {
        &self.local_fingerprint
    }

    pub fn species(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.species_id.as_str()).collect()
    }

    pub fn genera(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.genus_id.as_str()).collect()
    }

    /// Errors unless both models are the ones the embeddings came from.
    pub fn check_models(&self, global: &SiameseModel, local: &SiameseModel) -> Result<()> {
        check_pair(global, local)?;
        for (name, want, got) in [
            ("global", &self.global_fingerprint, global.fingerprint()),
            ("local", &self.local_fingerprint, local.fingerprint()),
        ] {
            if *want != got {
                return Err(Error::FingerprintMismatch(format!(
                    "{name}-view model {} does not match the reference set ({})",
                    &got[..12],
                    &want[..want.len().min(12)]
                )));
            }
        }
        Ok(())
    }

    /// New set with references for species absent from this one. The models
    /// are only read.
    pub fn add_species(
        &self,
        refs: &[(SampleLabel<'_>, &ViewPair)],
        taxonomy: &Taxonomy,
        global: &SiameseModel,
        local: &SiameseModel,
    ) -> Result<ReferenceSet> {
        self.check_models(global, local)?;
        let present = self.species();
        for (label, _) in refs {
            if present.contains(label.species_id) {
                return Err(Error::Validation(format!(
                    "species '{}' already has references in the set",
                    label.species_id
                )));
            }
        }
        let mut entries = self.entries.clone();
        entries.extend(embed_entries(refs, taxonomy, global, local)?);
        ReferenceSet::from_entries(
            entries,
            self.n_r,
            self.global_fingerprint.clone(),
            self.local_fingerprint.clone(),
        )
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (mg, ml) = self.dims();
        let header = 4 + 4 + 4 + 4;
        let block = 4 * (mg + ml);
        let mut cache = Vec::with_capacity(header + block * self.entries.len());
        cache.extend_from_slice(REFS_MAGIC);
        cache.extend_from_slice(&REFS_VERSION.to_le_bytes());
        cache.extend_from_slice(&(mg as u32).to_le_bytes());
        cache.extend_from_slice(&(ml as u32).to_le_bytes());
        let mut manifest_entries = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            manifest_entries.push(ManifestEntry {
                sample_id: e.sample_id.clone(),
                species_id: e.species_id.clone(),
                genus_id: e.genus_id.clone(),
                offset: cache.len() as u64,
            });
            for v in e.global_embedding.0.iter().chain(&e.local_embedding.0) {
                cache.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            version: REFS_VERSION,
            n_r: self.n_r,
            global_fingerprint: self.global_fingerprint.clone(),
            local_fingerprint: self.local_fingerprint.clone(),
            global_dim: mg,
            local_dim: ml,
            entries: manifest_entries,
        };
        let cache_path = dir.join(CACHE_FILE);
        fs::write(&cache_path, cache).map_err(|e| Error::io(&cache_path, e))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&manifest_path, e))
    }

    pub fn load(dir: &Path) -> Result<ReferenceSet> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.version != REFS_VERSION {
            return Err(Error::Format(format!("unsupported reference set version {}", manifest.version)));
        }
        let cache_path = dir.join(CACHE_FILE);
        let cache = fs::read(&cache_path).map_err(|e| Error::io(&cache_path, e))?;
        if cache.len() < 16 || &cache[..4] != REFS_MAGIC {
            return Err(Error::Format("embedding cache has a bad header".into()));
        }
        let word = |i: usize| u32::from_le_bytes(cache[i..i + 4].try_into().unwrap()) as usize;
        if word(4) as u32 != REFS_VERSION {
            return Err(Error::Format(format!("unsupported embedding cache version {}", word(4))));
        }
        let (mg, ml) = (word(8), word(12));
        if (mg, ml) != (manifest.global_dim, manifest.local_dim) {
            return Err(Error::Format("embedding dimensions disagree between manifest and cache".into()));
        }
        let block = 4 * (mg + ml);
        if cache.len() != 16 + block * manifest.entries.len() {
            return Err(Error::Format(format!(
                "embedding cache is {} bytes, expected {} for {} entries",
                cache.len(),
                16 + block * manifest.entries.len(),
                manifest.entries.len()
            )));
        }
        let floats = |bytes: &[u8]| {
            EmbeddingVector(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )
        };
        let mut entries = Vec::with_capacity(manifest.entries.len());
        for m in manifest.entries {
            let off = m.offset as usize;
            if off < 16 || (off - 16) % block != 0 || off + block > cache.len() {
                return Err(Error::Format(format!("bad cache offset {off} for '{}'", m.sample_id)));
            }
            entries.push(ReferenceEntry {
                sample_id: m.sample_id,
                species_id: m.species_id,
                genus_id: m.genus_id,
                global_embedding: floats(&cache[off..off + 4 * mg]),
                local_embedding: floats(&cache[off + 4 * mg..off + block]),
            });
        }
        ReferenceSet::from_entries(
            entries,
            manifest.n_r,
            manifest.global_fingerprint,
            manifest.local_fingerprint,
        )
    }

    fn dims(&self) -> (usize, usize) {
        self.entries
            .first()
            .map_or((0, 0), |e| (e.global_embedding.len(), e.local_embedding.len()))
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    n_r: usize,
    global_fingerprint: String,
    local_fingerprint: String,
    global_dim: usize,
    local_dim: usize,
    entries: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    sample_id: String,
    species_id: String,
    genus_id: String,
    offset: u64,
}

fn embed_entries(
    refs: &[(SampleLabel<'_>, &ViewPair)],
    taxonomy: &Taxonomy,
    global: &SiameseModel,
    local: &SiameseModel,
) -> Result<Vec<ReferenceEntry>> {
    refs.par_iter()
        .map(|(label, views)| {
            let genus = taxonomy
                .genus_of(label.species_id)
                .ok_or_else(|| Error::Validation(format!("species '{}' missing from the taxonomy", label.species_id)))?;
            Ok(ReferenceEntry {
                sample_id: label.sample_id.to_owned(),
                species_id: label.species_id.to_owned(),
                genus_id: genus.to_owned(),
                global_embedding: global.embed(&views.global_view)?,
                local_embedding: local.embed(&views.local_view)?,
            })
        })
        .collect()
}

/// Preprocesses samples in parallel; any failure aborts.
pub fn views_of(samples: &[&LeafSample], config: &ViewConfig) -> Result<Vec<ViewPair>> {
    samples
        .par_iter()
        .map(|s| {
            make_views(s, config).map_err(|e| match e {
                Error::NoLeafDetected => Error::Validation(format!("no leaf detected in reference '{}'", s.sample_id)),
                other => other,
            })
        })
        .collect()
}

/// Zips labeled samples with their views; unlabeled samples are an error.
pub fn labeled_views<'a>(
    samples: &[&'a LeafSample],
    views: &'a [ViewPair],
) -> Result<Vec<(SampleLabel<'a>, &'a ViewPair)>> {
    samples
        .iter()
        .zip(views)
        .map(|(s, v)| {
            s.label()
                .map(|l| (l, v))
                .ok_or_else(|| Error::Validation(format!("reference '{}' has no species label", s.sample_id)))
        })
        .collect()
}
