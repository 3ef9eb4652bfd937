//! On-disk layouts the subcommands exchange.
//!
//! A *dataset root* holds `taxonomy.csv`, a `corpus/` tree of
//! `<species>/<sample>.png` and optionally `test_manifest.txt`.
//!
//! A *prepared directory* (written by `preprocess`) holds `taxonomy.csv`,
//! `views.json`, `samples.csv` (`sample_id,species_id,split` with split one of
//! train, augmented, test) and `views/<sample>.{global,local}.png`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use twoview_core::dataset::{
    load_manifest, load_split, load_taxonomy, write_taxonomy, DatasetSplit, SampleLabel, SplitPolicy, Taxonomy,
};
use twoview_core::preprocess::{ViewConfig, ViewPair};
use twoview_core::Error;

pub const SAMPLES_FILE: &str = "samples.csv";
pub const TAXONOMY_FILE: &str = "taxonomy.csv";
pub const VIEWS_FILE: &str = "views.json";
pub const VIEWS_DIR: &str = "views";
pub const MANIFEST_FILE: &str = "test_manifest.txt";

/// Fails with a not-found I/O error unless `path` exists.
pub fn require(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(Error::Io {
            path: path.to_owned(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        }
        .into());
    }
    Ok(())
}

/// Loads a dataset root; without a test manifest, `test_per_class` samples
/// of each species are held out.
pub fn load_dataset(root: &Path, test_per_class: usize, seed: u64) -> Result<DatasetSplit> {
    let tax_path = root.join(TAXONOMY_FILE);
    require(&tax_path)?;
    let records = load_taxonomy(&tax_path)?;
    let corpus = if root.join("corpus").is_dir() {
        root.join("corpus")
    } else {
        root.to_owned()
    };
    let manifest = root.join(MANIFEST_FILE);
    let policy = if manifest.exists() {
        SplitPolicy::Manifest(load_manifest(&manifest)?)
    } else {
        SplitPolicy::TestPerClass {
            count: test_per_class,
            seed,
        }
    };
    Ok(load_split(&corpus, &records, &policy).with_context(|| format!("loading dataset {}", root.display()))?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Augmented,
    Test,
}

impl Split {
    fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Augmented => "augmented",
            Split::Test => "test",
        }
    }
}

pub struct PreparedSample {
    pub sample_id: String,
    pub species_id: String,
    pub split: Split,
    pub views: ViewPair,
}

pub struct Prepared {
    pub taxonomy: Taxonomy,
    pub view_config: ViewConfig,
    pub samples: Vec<PreparedSample>,
}

impl Prepared {
    pub fn write(
        root: &Path,
        taxonomy: &Taxonomy,
        view_config: &ViewConfig,
        samples: &[(String, String, Split, ViewPair)],
    ) -> Result<()> {
        let views = root.join(VIEWS_DIR);
        fs::create_dir_all(&views).map_err(|e| Error::Io {
            path: views.clone(),
            source: e,
        })?;
        write_taxonomy(&root.join(TAXONOMY_FILE), taxonomy.records())?;
        fs::write(root.join(VIEWS_FILE), serde_json::to_string_pretty(view_config)? + "\n")?;
        let mut csv = String::from("sample_id,species_id,split\n");
        for (id, species, split, _) in samples {
            let _ = writeln!(csv, "{id},{species},{}", split.as_str());
        }
        fs::write(root.join(SAMPLES_FILE), csv)?;
        samples
            .par_iter()
            .try_for_each(|(id, _, _, v)| v.write(&views, id))?;
        Ok(())
    }

    pub fn load(root: &Path) -> Result<Prepared> {
        let samples_path = root.join(SAMPLES_FILE);
        require(&samples_path)?;
        let taxonomy = Taxonomy::new(load_taxonomy(&root.join(TAXONOMY_FILE))?)?;
        let view_config: ViewConfig = serde_json::from_str(
            &fs::read_to_string(root.join(VIEWS_FILE)).context("reading views.json")?,
        )?;
        let text = fs::read_to_string(&samples_path)?;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            let split = match f.as_slice() {
                [_, _, "train"] => Split::Train,
                [_, _, "augmented"] => Split::Augmented,
                [_, _, "test"] => Split::Test,
                _ => bail!(Error::Parse {
                    path: samples_path.clone(),
                    line: i + 1,
                    message: format!("bad sample row '{line}'"),
                }),
            };
            if !taxonomy.contains(f[1]) {
                bail!(Error::Validation(format!("sample '{}' has unknown species '{}'", f[0], f[1])));
            }
            rows.push((f[0].to_owned(), f[1].to_owned(), split));
        }
        let views_dir = root.join(VIEWS_DIR);
        let samples = rows
            .into_par_iter()
            .map(|(sample_id, species_id, split)| {
                let views = ViewPair::read(&views_dir, &sample_id)?;
                Ok(PreparedSample {
                    sample_id,
                    species_id,
                    split,
                    views,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Prepared {
            taxonomy,
            view_config,
            samples,
        })
    }

    pub fn labeled(&self, splits: &[Split]) -> Vec<(SampleLabel<'_>, &ViewPair)> {
        self.samples
            .iter()
            .filter(|s| splits.contains(&s.split))
            .map(|s| {
                (
                    SampleLabel {
                        sample_id: &s.sample_id,
                        species_id: &s.species_id,
                    },
                    &s.views,
                )
            })
            .collect()
    }
}
