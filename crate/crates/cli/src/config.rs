//! Flat `key=value` config files with section prefixes (`genus.epochs=3`).
//!
//! Resolution order for every setting: command-line flag, then the matching
//! `TWOVIEW_*` environment variable (both handled by clap), then the config
//! file, then the built-in default.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::exit::Usage;

/// Every key a config file may set.
pub const KNOWN_KEYS: &[&str] = &[
    "out",
    "seed",
    "workers",
    "synth.genera",
    "synth.species_per_genus",
    "synth.samples",
    "synth.train_per_species",
    "synth.image_size",
    "synth.shape_noise",
    "synth.texture_noise",
    "synth.genus_offset",
    "synth.texture_offset",
    "views.crop_size",
    "views.kernel_radius",
    "views.polarity",
    "split.test_per_class",
    "augment.rotations",
    "augment.max_degrees",
    "refs.n_r",
    "refs.budget",
    "refs.pool",
    "classifier.k",
    "classifier.top_n",
    "classifier.aggregation",
    "eval.top_k",
    "sweep.n_r",
    "sweep.k",
    "stability.n_r",
    "stability.repetitions",
    "scalability.repeats",
    "unbalanced.caps",
];

/// Keys repeated under the `genus.` and `species.` sections.
pub const STAGE_KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "learning_rate",
    "momentum",
    "lr_decay",
    "decay_every",
    "frozen_layers",
    "backbone",
    "embedding_dim",
    "positive",
    "negative",
    "allow_replacement",
    "init_seed",
];

#[derive(Clone, Debug, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

fn known(key: &str) -> bool {
    if KNOWN_KEYS.contains(&key) {
        return true;
    }
    match key.split_once('.') {
        Some(("genus" | "species", k)) => STAGE_KEYS.contains(&k),
        _ => false,
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<ConfigFile, Usage> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Usage(format!("config line {}: expected key=value", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !known(k) {
                return Err(Usage(format!("config line {}: unknown key '{k}'", i + 1)));
            }
            values.insert(k.to_owned(), v.to_owned());
        }
        Ok(ConfigFile { values })
    }

    pub fn load(path: &Path) -> anyhow::Result<ConfigFile> {
        let text = std::fs::read_to_string(path).map_err(|e| twoview_core::Error::Io {
            path: path.to_owned(),
            source: e,
        })?;
        Ok(ConfigFile::parse(&text)?)
    }

    /// `flag` if given, else the file's value for `key`, else `default`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, Usage>
    where
        T::Err: Display,
    {
        debug_assert!(known(key), "unregistered config key {key}");
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.values.get(key) {
            Some(raw) => raw
                .parse()
                .map_err(|e| Usage(format!("config key '{key}': cannot parse '{raw}': {e}"))),
            None => Ok(default),
        }
    }

    /// Like [`pick`](Self::pick) for comma-separated lists.
    pub fn pick_list<T: FromStr>(&self, flag: Option<Vec<T>>, key: &str, default: &[T]) -> Result<Vec<T>, Usage>
    where
        T::Err: Display,
        T: Clone,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.values.get(key) {
            Some(raw) => raw
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse()
                        .map_err(|e| Usage(format!("config key '{key}': cannot parse '{p}': {e}")))
                })
                .collect(),
            None => Ok(default.to_vec()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_beats_file_beats_default() {
        let cfg = ConfigFile::parse("# comment\nclassifier.k = 7\ngenus.epochs=3\n").unwrap();
        assert_eq!(cfg.pick(Some(11usize), "classifier.k", 30).unwrap(), 11);
        assert_eq!(cfg.pick(None, "classifier.k", 30).unwrap(), 7);
        assert_eq!(cfg.pick(None, "classifier.top_n", 5).unwrap(), 5);
        assert_eq!(cfg.pick(None, "genus.epochs", 20).unwrap(), 3);
        assert_eq!(cfg.pick(None, "species.epochs", 20).unwrap(), 20);
    }

    #[test]
    fn lists_and_errors() {
        let cfg = ConfigFile::parse("sweep.k=1, 5,30\nclassifier.k=abc").unwrap();
        assert_eq!(cfg.pick_list::<usize>(None, "sweep.k", &[2]).unwrap(), vec![1, 5, 30]);
        assert_eq!(cfg.pick_list::<usize>(None, "sweep.n_r", &[2]).unwrap(), vec![2]);
        assert!(cfg.pick::<usize>(None, "classifier.k", 30).is_err());
        assert!(ConfigFile::parse("nope=1").is_err());
        assert!(ConfigFile::parse("genus.nope=1").is_err());
        assert!(ConfigFile::parse("just text").is_err());
    }
}
