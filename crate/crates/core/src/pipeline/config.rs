use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::features::DEFAULT_RADII;
use crate::filters::DEFAULT_SIZE_BOUNDS;
use crate::forest::{HyperGrid, MaxFeatures};

/// Run configuration. Every key is flat so that each has a command-line
/// flag of the same name. Relative paths in a config file resolve against
/// the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Directory of BGRD probability rasters, processed in file-name order.
    pub prob_dir: Option<PathBuf>,
    pub landcover: Option<PathBuf>,
    pub legend: Option<PathBuf>,
    pub roads: Option<PathBuf>,
    pub buildings: Option<PathBuf>,
    /// Reference barn polygons with `farm_id` and optional `type`.
    pub reference_barns: Option<PathBuf>,
    /// Reference farm table with `id`, `type` and `capacity` columns.
    pub reference_farms: Option<PathBuf>,
    /// Per-state reference counts with `state`, `farms`, `population`.
    pub reference: Option<PathBuf>,
    pub regions: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub rules: Option<PathBuf>,
    pub models_dir: Option<PathBuf>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_connectivity")]
    pub connectivity: u8,
    #[serde(default = "default_radii")]
    pub radii: Vec<f64>,
    #[serde(default = "default_block")]
    pub block_size_m: f64,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_link")]
    pub link_distance_m: f64,
    #[serde(default = "default_size_min")]
    pub size_min_m2: f64,
    #[serde(default = "default_size_max")]
    pub size_max_m2: f64,
    /// When set with reference barns, size bounds are these quantiles of
    /// reference barn areas instead of the fixed bounds.
    pub size_quantiles: Option<[f64; 2]>,
    #[serde(default = "default_min_labels")]
    pub min_labels_per_class: usize,
    #[serde(default = "yes")]
    pub forest_vote: bool,
    #[serde(default = "yes")]
    pub classify_farms: bool,
    #[serde(default = "default_trees")]
    pub grid_n_trees: Vec<usize>,
    /// 0 stands for unlimited depth.
    #[serde(default = "default_depths")]
    pub grid_max_depth: Vec<usize>,
    #[serde(default = "default_splits")]
    pub grid_min_split: Vec<usize>,
    #[serde(default = "default_leaves")]
    pub grid_min_leaf: Vec<usize>,
    #[serde(default = "default_max_features")]
    pub grid_max_features: Vec<MaxFeatures>,
    /// Features per split searched for the capacity regressor.
    #[serde(default = "default_population_features")]
    pub population_max_features: Vec<MaxFeatures>,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}
fn default_threshold() -> f64 {
    0.7
}
fn default_connectivity() -> u8 {
    8
}
fn default_radii() -> Vec<f64> {
    DEFAULT_RADII.to_vec()
}
fn default_block() -> f64 {
    25_000.0
}
fn default_folds() -> usize {
    5
}
fn default_link() -> f64 {
    crate::farms::DEFAULT_LINK_DISTANCE
}
fn default_size_min() -> f64 {
    DEFAULT_SIZE_BOUNDS.0
}
fn default_size_max() -> f64 {
    DEFAULT_SIZE_BOUNDS.1
}
fn default_min_labels() -> usize {
    10
}
fn yes() -> bool {
    true
}
fn default_trees() -> Vec<usize> {
    HyperGrid::standard().n_trees
}
fn default_depths() -> Vec<usize> {
    HyperGrid::standard().max_depth.iter().map(|d| d.unwrap_or(0)).collect()
}
fn default_splits() -> Vec<usize> {
    HyperGrid::standard().min_split
}
fn default_leaves() -> Vec<usize> {
    HyperGrid::standard().min_leaf
}
fn default_max_features() -> Vec<MaxFeatures> {
    HyperGrid::standard().max_features
}

fn default_population_features() -> Vec<MaxFeatures> {
    vec![MaxFeatures::All]
}

const PATH_KEYS: [&str; 13] = [
    "output_dir",
    "prob_dir",
    "landcover",
    "legend",
    "roads",
    "buildings",
    "reference_barns",
    "reference_farms",
    "reference",
    "regions",
    "labels",
    "rules",
    "models_dir",
];

/// Every configuration key, in declaration order.
pub const CONFIG_KEYS: [&str; 32] = [
    "seed",
    "output_dir",
    "prob_dir",
    "landcover",
    "legend",
    "roads",
    "buildings",
    "reference_barns",
    "reference_farms",
    "reference",
    "regions",
    "labels",
    "rules",
    "models_dir",
    "threshold",
    "connectivity",
    "radii",
    "block_size_m",
    "folds",
    "link_distance_m",
    "size_min_m2",
    "size_max_m2",
    "size_quantiles",
    "min_labels_per_class",
    "forest_vote",
    "classify_farms",
    "grid_n_trees",
    "grid_max_depth",
    "grid_min_split",
    "grid_min_leaf",
    "grid_max_features",
    "population_max_features",
];

/// Reads a flag value as a TOML value. Bare words become strings and
/// comma-separated items become arrays.
fn flag_value(key: &str, raw: &str) -> Value {
    let parse = |s: &str| toml::from_str::<Table>(&format!("v = {s}")).ok().and_then(|mut t| t.remove("v"));
    if PATH_KEYS.contains(&key) {
        return Value::String(raw.to_string());
    }
    if let Some(v) = parse(raw) {
        return v;
    }
    if raw.contains(',') {
        let items: Vec<Value> = raw
            .split(',')
            .map(|s| parse(s.trim()).unwrap_or_else(|| Value::String(s.trim().to_string())))
            .collect();
        return Value::Array(items);
    }
    Value::String(raw.to_string())
}

fn list_value(key: &str, v: Value) -> Value {
    let is_list = matches!(
        key,
        "radii" | "size_quantiles" | "grid_n_trees" | "grid_max_depth" | "grid_min_split" | "grid_min_leaf" | "grid_max_features"
            | "population_max_features"
    );
    match v {
        Value::Array(_) => v,
        other if is_list => Value::Array(vec![other]),
        other => other,
    }
}

/// Config text pointing at the layers of an exported synthetic scene,
/// with paths relative to the scene directory.
pub fn scene_config_text(seed: u64) -> String {
    use crate::synth::files;
    let mut t = Table::new();
    t.insert("seed".into(), Value::Integer(seed as i64));
    for (k, v) in [
        ("prob_dir", files::PROB_DIR),
        ("landcover", files::LANDCOVER),
        ("legend", files::LEGEND),
        ("roads", files::ROADS),
        ("buildings", files::BUILDINGS),
        ("regions", files::REGIONS),
        ("reference", files::REFERENCE),
        ("rules", files::RULES),
        ("output_dir", "out"),
    ] {
        t.insert(k.into(), Value::String(v.into()));
    }
    toml::to_string(&t).expect("table serializes")
}

impl PipelineConfig {
    /// Parses config text, applies `overrides` (key, raw value) and
    /// validates. `base` anchors relative paths from the text.
    pub fn from_parts(text: &str, base: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(base) = base {
            for key in PATH_KEYS {
                if let Some(Value::String(s)) = table.get(key) {
                    let p = Path::new(s);
                    if p.is_relative() {
                        let joined = base.join(p).to_string_lossy().into_owned();
                        table.insert(key.to_string(), Value::String(joined));
                    }
                }
            }
        }
        for (k, raw) in overrides {
            if !CONFIG_KEYS.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown key {k}")));
            }
            table.insert(k.clone(), list_value(k, flag_value(k, raw)));
        }
        let cfg: PipelineConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        PipelineConfig::from_parts(&text, path.parent(), overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Search grid for the filter and type models.
    pub fn grid(&self) -> HyperGrid {
        HyperGrid {
            n_trees: self.grid_n_trees.clone(),
            max_depth: self.grid_max_depth.iter().map(|&d| (d > 0).then_some(d)).collect(),
            min_split: self.grid_min_split.clone(),
            min_leaf: self.grid_min_leaf.clone(),
            max_features: self.grid_max_features.clone(),
        }
    }

    /// Search grid for the capacity regressor.
    pub fn population_grid(&self) -> HyperGrid {
        HyperGrid {
            max_features: self.population_max_features.clone(),
            ..self.grid()
        }
    }

    pub fn models_dir(&self) -> PathBuf {
        self.models_dir.clone().unwrap_or_else(|| self.output_dir.join("models"))
    }

    pub fn labels_path(&self) -> PathBuf {
        self.labels.clone().unwrap_or_else(|| self.output_dir.join("labels.jsonl"))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return bad(format!("threshold {} outside (0, 1]", self.threshold));
        }
        if self.connectivity != 4 && self.connectivity != 8 {
            return bad(format!("connectivity must be 4 or 8, got {}", self.connectivity));
        }
        if self.radii.is_empty() || self.radii.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return bad("radii must be positive".into());
        }
        if !(self.block_size_m > 0.0) || self.folds == 0 {
            return bad("block_size_m and folds must be positive".into());
        }
        if !(self.link_distance_m >= 0.0) {
            return bad("link_distance_m must be non-negative".into());
        }
        if !(self.size_min_m2 <= self.size_max_m2) {
            return bad(format!("size bounds {} > {}", self.size_min_m2, self.size_max_m2));
        }
        if let Some([lo, hi]) = self.size_quantiles {
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                return bad(format!("size quantiles {lo}, {hi} invalid"));
            }
        }
        let g = self.grid();
        if g.is_empty() || g.points().iter().any(|p| p.n_trees == 0 || p.min_split < 2 || p.min_leaf == 0) {
            return bad("hyperparameter grid is empty or has invalid values".into());
        }
        if self.population_max_features.is_empty() {
            return bad("population_max_features is empty".into());
        }
        Ok(())
    }

    /// Fails with a config error naming the first listed input that is
    /// unset or missing on disk.
    pub fn require(&self, keys: &[&str]) -> Result<()> {
        for &k in keys {
            let p = match k {
                "prob_dir" => &self.prob_dir,
                "landcover" => &self.landcover,
                "legend" => &self.legend,
                "roads" => &self.roads,
                "buildings" => &self.buildings,
                "reference_barns" => &self.reference_barns,
                "reference_farms" => &self.reference_farms,
                "reference" => &self.reference,
                "regions" => &self.regions,
                "rules" => &self.rules,
                other => return Err(Error::Config(format!("{other} is not an input path"))),
            };
            match p {
                None => return Err(Error::Config(format!("{k} is not set"))),
                Some(p) if !p.exists() => return Err(Error::Config(format!("{k}: {} does not exist", p.display()))),
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub(crate) fn path(&self, key: &str) -> &Path {
        self.path_opt(key).expect("input checked by require")
    }

    pub fn path_opt(&self, key: &str) -> Option<&Path> {
        let p = match key {
            "prob_dir" => &self.prob_dir,
            "landcover" => &self.landcover,
            "legend" => &self.legend,
            "roads" => &self.roads,
            "buildings" => &self.buildings,
            "reference_barns" => &self.reference_barns,
            "reference_farms" => &self.reference_farms,
            "reference" => &self.reference,
            "regions" => &self.regions,
            "rules" => &self.rules,
            _ => &None,
        };
        p.as_deref()
    }

    pub fn stage_seed(&self, stage: Stage) -> u64 {
        self.seed.wrapping_add(stage as u64 * 1000)
    }
}

/// Offsets that give each stage its own random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Filter = 1,
    Type = 2,
    Population = 3,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_overrides_and_errors() {
        let c = PipelineConfig::from_parts("seed = 3\nprob_dir = \"p\"", Some(Path::new("/base")), &[]).unwrap();
        assert_eq!(c.threshold, 0.7);
        assert_eq!(c.radii, vec![500.0, 1000.0, 5000.0]);
        assert_eq!(c.prob_dir.as_deref(), Some(Path::new("/base/p")));
        assert_eq!(c.grid(), HyperGrid::standard());
        let o = |k: &str, v: &str| (k.to_string(), v.to_string());
        let c = PipelineConfig::from_parts(
            "seed = 3",
            None,
            &[o("threshold", "0.5"), o("radii", "500,1000"), o("grid_n_trees", "10"), o("grid_max_features", "sqrt,log2"), o("seed", "9")],
        )
        .unwrap();
        assert_eq!((c.threshold, c.seed), (0.5, 9));
        assert_eq!(c.radii, vec![500.0, 1000.0]);
        assert_eq!(c.grid_n_trees, vec![10]);
        assert_eq!(c.grid_max_features, vec![MaxFeatures::Sqrt, MaxFeatures::Log2]);
        assert!(matches!(PipelineConfig::from_parts("threshold = 0.5", None, &[]), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::from_parts("seed = 1\nbogus = 2", None, &[]), Err(Error::Config(_))));
        assert!(PipelineConfig::from_parts("seed = 1", None, &[o("nope", "1")]).is_err());
        assert!(PipelineConfig::from_parts("seed = 1\nthreshold = 1.5", None, &[]).is_err());
        let back = PipelineConfig::from_parts(&c.to_toml(), None, &[]).unwrap();
        assert_eq!(back, c);
        assert!(matches!(c.require(&["prob_dir"]), Err(Error::Config(_))));
    }
}
