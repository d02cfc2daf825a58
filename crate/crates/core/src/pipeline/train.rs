use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::farms::{population_dataset, reclassify_label, type_dataset, ProductionType};
use crate::features::{farm_features, BarnShape, FarmFeatures};
use crate::forest::{
    fit_forest, grid_search_cv, save_model, spatial_blocks, Dataset, ForestModel, GridSearchResult, HyperGrid, HyperParams,
    SelectionMetric,
};
use crate::geometry::{centroid, Point, Ring};
use crate::labels::{active_labels, read_labels, Label};
use crate::raster::Connectivity;
use crate::vector::FeatureCollection;

use super::candidates::{centroids, extract_candidates, Candidate, Layers};
use super::{write_file, PipelineConfig, Stage};

pub const FILTER_MANIFEST: &str = "filter_manifest.json";
pub const TYPE_MODEL: &str = "type_model.json";
pub const POPULATION_MODEL: &str = "population_model.json";

/// Canonical type of a reference label: a known raw label or a canonical
/// type name.
pub fn parse_type(raw: &str) -> Result<ProductionType> {
    reclassify_label(raw).or_else(|_| raw.parse())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceBarn {
    pub id: Option<u64>,
    pub farm_id: Option<u64>,
    pub raw_type: Option<String>,
    pub ring: Ring,
}

pub fn read_reference_barns(path: &Path) -> Result<Vec<ReferenceBarn>> {
    FeatureCollection::read(path)?
        .features
        .into_iter()
        .enumerate()
        .map(|(i, f)| {
            Ok(ReferenceBarn {
                id: f.u64_prop("id"),
                farm_id: f.u64_prop("farm_id"),
                raw_type: f.str_prop("type").map(str::to_string),
                ring: f.ring().cloned().ok_or_else(|| Error::parse(path, format!("feature {i}: expected Polygon")))?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceFarm {
    pub id: u64,
    pub production_type: Option<ProductionType>,
    pub capacity: Option<f64>,
}

/// Reads a farm table by header name: `id` is required, `type` and
/// `capacity` are optional and may be blank.
pub fn read_reference_farms(path: &Path) -> Result<Vec<ReferenceFarm>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or_else(|| Error::parse(path, "empty file"))?.split(',').map(str::trim).collect();
    let col = |n: &str| header.iter().position(|h| *h == n);
    let id_col = col("id").ok_or_else(|| Error::parse(path, "missing id column"))?;
    let (type_col, cap_col) = (col("type"), col("capacity"));
    lines
        .enumerate()
        .map(|(k, l)| {
            let cells: Vec<&str> = l.split(',').map(str::trim).collect();
            let err = |m: String| Error::parse(path, format!("line {}: {m}", k + 2));
            let cell = |i: Option<usize>| i.and_then(|i| cells.get(i).copied()).filter(|s| !s.is_empty());
            Ok(ReferenceFarm {
                id: cell(Some(id_col)).and_then(|s| s.parse().ok()).ok_or_else(|| err("bad id".into()))?,
                production_type: cell(type_col).map(parse_type).transpose().map_err(|e| err(e.to_string()))?,
                capacity: cell(cap_col)
                    .map(|s| s.parse::<f64>().map_err(|_| err(format!("bad capacity {s}"))))
                    .transpose()?,
            })
        })
        .collect()
}

/// A reference farm with the aggregate features of its barns.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceFarmRow {
    pub id: u64,
    pub centroid: Point,
    pub features: FarmFeatures,
    pub production_type: ProductionType,
    pub capacity: Option<f64>,
}

/// Joins farms to barns through `farm_id`. Farms without barns or type are
/// left out.
pub fn reference_farm_rows(barns: &[ReferenceBarn], farms: &[ReferenceFarm]) -> Result<Vec<ReferenceFarmRow>> {
    let mut by_farm: BTreeMap<u64, Vec<&ReferenceBarn>> = BTreeMap::new();
    for b in barns {
        if let Some(f) = b.farm_id {
            by_farm.entry(f).or_default().push(b);
        }
    }
    let mut out = Vec::new();
    for f in farms {
        let Some(members) = by_farm.get(&f.id) else { continue };
        let t = match f.production_type {
            Some(t) => t,
            None => match members.iter().find_map(|b| b.raw_type.as_deref()) {
                Some(raw) => parse_type(raw)?,
                None => continue,
            },
        };
        let shapes = members.iter().map(|b| BarnShape::from_ring(&b.ring)).collect::<Result<Vec<_>>>()?;
        let cs = members.iter().map(|b| centroid(&b.ring)).collect::<Result<Vec<_>>>()?;
        let c = cs.iter().fold(Point::new(0.0, 0.0), |a, &p| a + p) * (1.0 / cs.len() as f64);
        out.push(ReferenceFarmRow {
            id: f.id,
            centroid: c,
            features: farm_features(&shapes)?,
            production_type: t,
            capacity: f.capacity,
        });
    }
    Ok(out)
}

fn load_reference_rows(cfg: &PipelineConfig) -> Result<Vec<ReferenceFarmRow>> {
    cfg.require(&["reference_barns", "reference_farms"])?;
    reference_farm_rows(
        &read_reference_barns(cfg.path("reference_barns"))?,
        &read_reference_farms(cfg.path("reference_farms"))?,
    )
}

/// Grid configuration with the best mean score over evaluated folds. Ties
/// go to fewer trees, then shallower depth, then grid order.
pub fn best_overall(res: &GridSearchResult, grid: &HyperGrid) -> Option<HyperParams> {
    let mut best: Option<(f64, usize, HyperParams)> = None;
    for (pos, p) in grid.points().into_iter().enumerate() {
        let scores: Vec<f64> = res.rows.iter().filter(|r| r.params == p).map(|r| r.scores.primary()).collect();
        if scores.is_empty() {
            continue;
        }
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        let depth = |q: &HyperParams| q.max_depth.unwrap_or(usize::MAX);
        let better = match &best {
            None => true,
            Some((bm, bpos, bp)) => {
                (mean, std::cmp::Reverse(p.n_trees), std::cmp::Reverse(depth(&p)), std::cmp::Reverse(pos))
                    > (*bm, std::cmp::Reverse(bp.n_trees), std::cmp::Reverse(depth(bp)), std::cmp::Reverse(*bpos))
            }
        };
        if better {
            best = Some((mean, pos, p));
        }
    }
    best.map(|b| b.2)
}

fn check_evaluated(res: &GridSearchResult, what: &str) -> Result<()> {
    if res.folds.is_empty() {
        let reasons: Vec<String> = res.skipped.iter().map(|s| format!("fold {}: {}", s.fold, s.reason)).collect();
        return Err(Error::DegenerateTraining(format!("no {what} fold could be evaluated ({})", reasons.join("; "))));
    }
    Ok(())
}

fn prefixed_csv(prefix_col: &str, parts: &[(String, String)]) -> String {
    let mut out = String::new();
    for (i, (value, csv)) in parts.iter().enumerate() {
        let mut lines = csv.lines();
        let header = lines.next().unwrap_or_default();
        if i == 0 {
            out.push_str(&format!("{prefix_col},{header}\n"));
        }
        for l in lines {
            out.push_str(&format!("{value},{l}\n"));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferScore {
    pub radius_m: f64,
    pub mean_f1: f64,
    pub evaluated_folds: usize,
    pub skipped_folds: usize,
}

/// Selected buffer radius and the fold models that vote at run time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterManifest {
    pub radius_m: f64,
    pub columns: Vec<String>,
    /// Model files relative to the manifest's directory.
    pub models: Vec<String>,
    pub buffers: Vec<BufferScore>,
    pub n_barn: usize,
    pub n_false_positive: usize,
}

impl FilterManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(FILTER_MANIFEST);
        let s = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        serde_json::from_str(&s).map_err(|e| Error::parse(&p, e))
    }

    pub fn load_models(&self, dir: &Path) -> Result<Vec<ForestModel>> {
        let models = self
            .models
            .iter()
            .map(|m| crate::forest::load_model(&dir.join(m)))
            .collect::<Result<Vec<_>>>()?;
        for m in &models {
            m.check_schema(&self.columns)?;
        }
        Ok(models)
    }
}

pub struct FilterTraining {
    pub manifest: FilterManifest,
    pub searches: Vec<(f64, GridSearchResult)>,
}

/// Labeled rings for the filter: reference barns and candidates labeled
/// barn are positives, candidates labeled false positive are negatives.
pub fn filter_training_set(cfg: &PipelineConfig, candidates: &[Candidate]) -> Result<(Vec<Ring>, Vec<usize>)> {
    let mut rings = Vec::new();
    let mut labels = Vec::new();
    if let Some(p) = &cfg.reference_barns {
        for b in read_reference_barns(p)? {
            rings.push(b.ring);
            labels.push(Label::Barn.class());
        }
    }
    let active = active_labels(&read_labels(&cfg.labels_path())?);
    let by_id: BTreeMap<u64, &Candidate> = candidates.iter().map(|c| (c.id, c)).collect();
    for (id, label) in active {
        let c = by_id
            .get(&id)
            .ok_or_else(|| Error::InvalidDataset(format!("label for unknown candidate {id}")))?;
        rings.push(c.ring.clone());
        labels.push(label.class());
    }
    Ok((rings, labels))
}

pub fn train_filter(cfg: &PipelineConfig) -> Result<FilterTraining> {
    cfg.require(&["prob_dir"])?;
    let layers = Layers::load(cfg)?;
    let conn = Connectivity::from_neighbors(cfg.connectivity).expect("validated");
    let candidates = extract_candidates(cfg.path("prob_dir"), cfg.threshold, conn)?;
    let (rings, labels) = filter_training_set(cfg, &candidates)?;
    let n_barn = labels.iter().filter(|&&l| l == Label::Barn.class()).count();
    let n_fp = labels.len() - n_barn;
    if n_barn < cfg.min_labels_per_class || n_fp < cfg.min_labels_per_class {
        return Err(Error::DegenerateTraining(format!(
            "need at least {} examples per class, have {n_barn} barn and {n_fp} false_positive",
            cfg.min_labels_per_class
        )));
    }
    let feats = layers.features(&rings, &cfg.radii)?;
    let locs = centroids(&rings)?;
    let seed = cfg.stage_seed(Stage::Filter);
    let folds = spatial_blocks(&locs, cfg.block_size_m, cfg.folds, seed)?;
    let grid = cfg.grid();
    let classes = vec!["false_positive".to_string(), "barn".to_string()];
    let mut searches = Vec::new();
    for &r in &cfg.radii {
        let rows = feats.iter().map(|f| f.row(&[r])).collect::<Result<Vec<_>>>()?;
        let d = Dataset::classification(layers.columns(&[r]), &rows, labels.clone(), classes.clone())?.with_locations(locs.clone())?;
        let res = grid_search_cv(&d, &folds, &grid, SelectionMetric::F1, seed)?;
        check_evaluated(&res, "filter")?;
        searches.push((r, res));
    }
    let buffers: Vec<BufferScore> = searches
        .iter()
        .map(|(r, res)| BufferScore {
            radius_m: *r,
            mean_f1: res.mean_scores().map_or(0.0, |s| s.primary()),
            evaluated_folds: res.folds.len(),
            skipped_folds: res.skipped.len(),
        })
        .collect();
    let best = buffers
        .iter()
        .enumerate()
        .fold(0, |b, (i, s)| {
            let cur = &buffers[b];
            if s.mean_f1 > cur.mean_f1 || (s.mean_f1 == cur.mean_f1 && s.radius_m < cur.radius_m) {
                i
            } else {
                b
            }
        });
    let dir = cfg.models_dir();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut chosen = Vec::new();
    for (i, (r, res)) in searches.iter().enumerate() {
        for f in &res.folds {
            let name = format!("filter_r{}_fold{}.json", r.round() as i64, f.fold);
            save_model(&f.model, &dir.join(&name))?;
            if i == best {
                chosen.push(name);
            }
        }
    }
    let radius = buffers[best].radius_m;
    let manifest = FilterManifest {
        radius_m: radius,
        columns: layers.columns(&[radius]),
        models: chosen,
        buffers,
        n_barn,
        n_false_positive: n_fp,
    };
    write_file(&dir.join(FILTER_MANIFEST), &(serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n"))?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let parts = |f: &dyn Fn(&GridSearchResult) -> String| -> Vec<(String, String)> {
        searches.iter().map(|(r, res)| (format!("{}", r.round() as i64), f(res))).collect()
    };
    write_file(&out.join("filter_cv.csv"), &prefixed_csv("buffer_m", &parts(&|r| r.cv_csv())))?;
    write_file(
        &out.join("filter_folds.csv"),
        &prefixed_csv("buffer_m", &parts(&|r| r.fold_table_csv("filter"))),
    )?;
    write_file(&out.join("filter_importance.csv"), &searches[best].1.importance_csv())?;
    Ok(FilterTraining { manifest, searches })
}

/// Cross-validated search followed by a refit of the best overall
/// configuration on every row.
pub struct FarmModelTraining {
    pub search: GridSearchResult,
    pub params: HyperParams,
    pub model: ForestModel,
}

fn train_farm_model(cfg: &PipelineConfig, d: Dataset, locs: Vec<Point>, stage: Stage, metric: SelectionMetric, name: &str) -> Result<FarmModelTraining> {
    let seed = cfg.stage_seed(stage);
    let d = d.with_locations(locs.clone())?;
    let folds = spatial_blocks(&locs, cfg.block_size_m, cfg.folds, seed)?;
    let grid = if stage == Stage::Population { cfg.population_grid() } else { cfg.grid() };
    let search = grid_search_cv(&d, &folds, &grid, metric, seed)?;
    check_evaluated(&search, name)?;
    let params = best_overall(&search, &grid).expect("evaluated folds have rows");
    let model = fit_forest(&d, &params, seed)?;
    let dir = cfg.models_dir();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let file = if stage == Stage::Type { TYPE_MODEL } else { POPULATION_MODEL };
    save_model(&model, &dir.join(file))?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(&out.join(format!("{name}_cv.csv")), &search.cv_csv())?;
    write_file(&out.join(format!("{name}_folds.csv")), &search.fold_table_csv(name))?;
    write_file(&out.join(format!("{name}_importance.csv")), &search.importance_csv())?;
    Ok(FarmModelTraining { search, params, model })
}

pub fn train_type(cfg: &PipelineConfig) -> Result<FarmModelTraining> {
    let rows = load_reference_rows(cfg)?;
    let counts = ProductionType::ALL.map(|t| rows.iter().filter(|r| r.production_type == t).count());
    if counts.iter().filter(|&&n| n > 0).count() < 2 {
        return Err(Error::DegenerateTraining(format!(
            "type training needs at least two types, have counts {counts:?} for {:?}",
            ProductionType::class_names()
        )));
    }
    let feats: Vec<FarmFeatures> = rows.iter().map(|r| r.features).collect();
    let types: Vec<ProductionType> = rows.iter().map(|r| r.production_type).collect();
    let locs = rows.iter().map(|r| r.centroid).collect();
    train_farm_model(cfg, type_dataset(&feats, &types)?, locs, Stage::Type, SelectionMetric::MacroF1, "type")
}

pub fn train_population(cfg: &PipelineConfig) -> Result<FarmModelTraining> {
    let rows: Vec<ReferenceFarmRow> = load_reference_rows(cfg)?.into_iter().filter(|r| r.capacity.is_some()).collect();
    if rows.len() < cfg.min_labels_per_class {
        return Err(Error::DegenerateTraining(format!(
            "need at least {} farms with capacity, have {}",
            cfg.min_labels_per_class,
            rows.len()
        )));
    }
    let feats: Vec<FarmFeatures> = rows.iter().map(|r| r.features).collect();
    let types: Vec<ProductionType> = rows.iter().map(|r| r.production_type).collect();
    let caps: Vec<f64> = rows.iter().map(|r| r.capacity.expect("filtered")).collect();
    let locs = rows.iter().map(|r| r.centroid).collect();
    train_farm_model(cfg, population_dataset(&feats, &types, &caps)?, locs, Stage::Population, SelectionMetric::R2, "population")
}
