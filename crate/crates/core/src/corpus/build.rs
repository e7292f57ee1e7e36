use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{CorpusManifest, ManifestRecord, Split};
use super::ops::{degrade, BackgroundLibrary};
use super::recipe::{sample_recipe, DegradationConfig, DegradationRecipe};
use crate::error::{Error, Result};
use crate::util::derive_seed;

/// Settings for [`build_corpus`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusBuildConfig {
    pub degradation: DegradationConfig,
    /// Share of background assets reserved for the test split. Train and
    /// valid samples draw from the remainder, so test backgrounds are never
    /// seen during training.
    pub test_background_fraction: f64,
}

impl Default for CorpusBuildConfig {
    fn default() -> Self {
        Self {
            degradation: DegradationConfig::default(),
            test_background_fraction: 0.3,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct BuildOptions {
    /// Keep degraded files that already exist instead of wiping the output.
    pub resume: bool,
}

/// Disjoint background id pools.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackgroundPools {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl BackgroundPools {
    /// Splits sorted ids: the last `ceil(n * fraction)` go to test.
    pub fn partition(ids: &[String], test_fraction: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&test_fraction) {
            return Err(Error::Config(format!(
                "test_background_fraction {test_fraction} outside [0, 1]"
            )));
        }
        let mut ids = ids.to_vec();
        ids.sort();
        let n = ids.len();
        let mut n_test = (n as f64 * test_fraction).ceil() as usize;
        if n >= 2 {
            n_test = n_test.clamp(1, n - 1);
        }
        let test = ids.split_off(n - n_test.min(n));
        Ok(Self { train: ids, test })
    }

    pub fn for_split(&self, split: Split) -> &[String] {
        match split {
            Split::Train | Split::Valid => &self.train,
            Split::Test => &self.test,
        }
    }
}

/// Recipe emitted for one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecipeRecord {
    pub id: String,
    pub split: Split,
    pub recipe: DegradationRecipe,
}

#[derive(Clone, Debug)]
pub struct CorpusBuild {
    pub manifest: CorpusManifest,
    pub recipes: Vec<RecipeRecord>,
    pub pools: BackgroundPools,
    /// `(sample id, error message)` for samples that could not be written.
    pub failures: Vec<(String, String)>,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const RECIPES_FILE: &str = "recipes.jsonl";

/// Writes one degraded image per sample of `input` under `out_dir`.
///
/// Clean images are copied to `out_dir/clean/<id>.png` and degraded ones
/// written to `out_dir/degraded/<id>.png`, so the emitted manifest
/// (`out_dir/manifest.jsonl`) is self-contained. Each sample's recipe is
/// drawn with a seed derived from `(master_seed, id)`, which makes the
/// output independent of processing order.
pub fn build_corpus(
    input: &CorpusManifest,
    assets: &BackgroundLibrary,
    config: &CorpusBuildConfig,
    master_seed: u64,
    out_dir: &Path,
    options: &BuildOptions,
) -> Result<CorpusBuild> {
    config.degradation.validate()?;
    input.validate()?;
    for rec in &input.records {
        check_file_safe_id(&rec.id)?;
    }
    let pools = BackgroundPools::partition(&assets.ids(), config.test_background_fraction)?;
    let needs_backgrounds = config.degradation.background_probability > 0.0;
    if needs_backgrounds {
        let has_train = input.records.iter().any(|r| r.split != Split::Test);
        let has_test = input.records.iter().any(|r| r.split == Split::Test);
        if (has_train && pools.train.is_empty()) || (has_test && pools.test.is_empty()) {
            return Err(Error::Config(format!(
                "{} background asset(s) cannot give train and test disjoint non-empty pools",
                assets.len()
            )));
        }
    }

    let clean_dir = out_dir.join("clean");
    let degraded_dir = out_dir.join("degraded");
    if !options.resume {
        for dir in [&clean_dir, &degraded_dir] {
            if dir.exists() {
                std::fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
    }
    for dir in [&clean_dir, &degraded_dir] {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let results: Vec<(ManifestRecord, Result<DegradationRecipe>)> = input
        .records
        .par_iter()
        .map(|rec| {
            let outcome = build_one(input, rec, assets, config, &pools, master_seed, &clean_dir, &degraded_dir, options);
            let out_rec = ManifestRecord {
                id: rec.id.clone(),
                clean_path: format!("clean/{}.png", rec.id),
                degraded_path: Some(format!("degraded/{}.png", rec.id)),
                text: rec.text.clone(),
                split: rec.split,
            };
            (out_rec, outcome)
        })
        .collect();

    let mut records = Vec::new();
    let mut recipes = Vec::new();
    let mut failures = Vec::new();
    for (rec, outcome) in results {
        match outcome {
            Ok(recipe) => {
                recipes.push(RecipeRecord {
                    id: rec.id.clone(),
                    split: rec.split,
                    recipe,
                });
                records.push(rec);
            }
            Err(e @ (Error::Io { .. } | Error::Image { .. })) => {
                log::warn!("sample {} failed: {e}", rec.id);
                failures.push((rec.id, e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }

    let manifest = CorpusManifest::new(out_dir, records)?;
    manifest.write_jsonl(out_dir.join(MANIFEST_FILE))?;
    write_recipes(&out_dir.join(RECIPES_FILE), &recipes)?;
    Ok(CorpusBuild {
        manifest,
        recipes,
        pools,
        failures,
    })
}

#[allow(clippy::too_many_arguments)]
fn build_one(
    input: &CorpusManifest,
    rec: &ManifestRecord,
    assets: &BackgroundLibrary,
    config: &CorpusBuildConfig,
    pools: &BackgroundPools,
    master_seed: u64,
    clean_dir: &Path,
    degraded_dir: &Path,
    options: &BuildOptions,
) -> Result<DegradationRecipe> {
    let sample = input.load_sample(rec)?;
    let seed = derive_seed(master_seed, &rec.id);
    let recipe = sample_recipe(
        seed,
        &config.degradation,
        sample.image.width(),
        pools.for_split(rec.split),
    )?;
    let degraded_path: PathBuf = degraded_dir.join(format!("{}.png", rec.id));
    let clean_path = clean_dir.join(format!("{}.png", rec.id));
    if options.resume && degraded_path.exists() && clean_path.exists() {
        return Ok(recipe);
    }
    let degraded = degrade(&sample.image, &recipe, assets)?;
    sample.image.save_png(&clean_path)?;
    degraded.save_png(&degraded_path)?;
    Ok(recipe)
}

fn write_recipes(path: &Path, recipes: &[RecipeRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in recipes {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn check_file_safe_id(id: &str) -> Result<()> {
    let ok = id
        .chars()
        .all(|c| c.is_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !id.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "sample id `{id}` cannot be used as a file name"
        )))
    }
}

/// Background ids used by the recipes of each split.
pub fn backgrounds_by_split(recipes: &[RecipeRecord], split: Split) -> BTreeSet<String> {
    recipes
        .iter()
        .filter(|r| r.split == split)
        .filter_map(|r| r.recipe.background_id.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pools_are_disjoint_and_cover() {
        let ids: Vec<String> = (0..7).map(|i| format!("bg{i}")).collect();
        let p = BackgroundPools::partition(&ids, 0.3).unwrap();
        assert_eq!(p.train.len() + p.test.len(), 7);
        assert_eq!(p.test.len(), 3);
        assert!(p.train.iter().all(|t| !p.test.contains(t)));
        let two = BackgroundPools::partition(&ids[..2], 0.9).unwrap();
        assert_eq!((two.train.len(), two.test.len()), (1, 1));
    }

    #[test]
    fn unsafe_ids_rejected() {
        assert!(check_file_safe_id("a01-000u-00").is_ok());
        assert!(check_file_safe_id("../x").is_err());
        assert!(check_file_safe_id("a/b").is_err());
    }
}
