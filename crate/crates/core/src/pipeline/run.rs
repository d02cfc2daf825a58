use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::farms::{
    benchmark_csv, benchmark_report, classify_type, describe_csv, describe_types, group_farms, predict_population,
    read_reference_csv, type_distribution_csv, Farm, ProductionType,
};
use crate::features::FeatureTable;
use crate::filters::{dedup_overlaps, removal_report_csv, size_bounds_from_reference, size_filter, tag_filter, FilterOutcome, Removal};
use crate::forest::{fold_probabilities, load_model, vote_filter, Dataset};
use crate::geometry::{centroid, point_in_ring, polygon_area, Point, Ring};
use crate::raster::Connectivity;
use crate::vector::{Feature, FeatureCollection, Geometry};

use super::candidates::{candidates_collection, extract_candidates, Candidate, Layers};
use super::train::{read_reference_barns, FilterManifest, POPULATION_MODEL, TYPE_MODEL};
use super::{write_file, PipelineConfig};

/// Written into the output directory when a run stops early.
pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub predicted: usize,
    pub after_forest_vote: usize,
    pub after_geometric_filter: usize,
    pub after_tag_filter: usize,
}

impl StageCounts {
    pub fn as_array(&self) -> [usize; 4] {
        [self.predicted, self.after_forest_vote, self.after_geometric_filter, self.after_tag_filter]
    }

    pub fn is_monotone(&self) -> bool {
        self.as_array().windows(2).all(|w| w[0] >= w[1])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRow {
    pub region: String,
    pub counts: StageCounts,
}

/// Polygon counts after each filtering stage, per region and in total.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageReport {
    pub rows: Vec<StageRow>,
    pub total: StageCounts,
}

impl StageReport {
    /// Builds the report from each candidate's region and the last stage
    /// it survived: 0 predicted only, 1 vote, 2 geometric, 3 tag.
    pub fn from_survival(regions: &[String], survived: &[u8]) -> Self {
        let mut by: BTreeMap<String, StageCounts> = BTreeMap::new();
        let mut total = StageCounts::default();
        for (r, &s) in regions.iter().zip(survived) {
            let c = by.entry(r.clone()).or_default();
            for counts in [c, &mut total] {
                counts.predicted += 1;
                counts.after_forest_vote += usize::from(s >= 1);
                counts.after_geometric_filter += usize::from(s >= 2);
                counts.after_tag_filter += usize::from(s >= 3);
            }
        }
        StageReport {
            rows: by.into_iter().map(|(region, counts)| StageRow { region, counts }).collect(),
            total,
        }
    }

    pub fn is_monotone(&self) -> bool {
        self.total.is_monotone() && self.rows.iter().all(|r| r.counts.is_monotone())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("region,predicted,after_forest_vote,after_geometric_filter,after_tag_filter\n");
        let rows = self.rows.iter().map(|r| (r.region.as_str(), r.counts)).chain([("total", self.total)]);
        for (name, c) in rows {
            let _ = writeln!(s, "{name},{},{},{},{}", c.predicted, c.after_forest_vote, c.after_geometric_filter, c.after_tag_filter);
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{:<12} {:>10} {:>10} {:>10} {:>10}\n", "region", "predicted", "vote", "geometric", "tag");
        let rows = self.rows.iter().map(|r| (r.region.as_str(), r.counts)).chain([("total", self.total)]);
        for (name, c) in rows {
            let _ = writeln!(
                s,
                "{name:<12} {:>10} {:>10} {:>10} {:>10}",
                c.predicted, c.after_forest_vote, c.after_geometric_filter, c.after_tag_filter
            );
        }
        s
    }
}

pub fn read_regions(path: &Path) -> Result<Vec<(String, Ring)>> {
    FeatureCollection::read(path)?
        .features
        .into_iter()
        .enumerate()
        .map(|(i, f)| {
            let name = f
                .str_prop("name")
                .ok_or_else(|| Error::parse(path, format!("feature {i}: missing name")))?
                .to_string();
            let ring = f.ring().cloned().ok_or_else(|| Error::parse(path, format!("feature {i}: expected Polygon")))?;
            Ok((name, ring))
        })
        .collect()
}

fn region_of(regions: &[(String, Ring)], p: Point) -> Option<String> {
    regions.iter().find(|(_, r)| point_in_ring(p, r)).map(|(n, _)| n.clone())
}

const UNASSIGNED: &str = "unassigned";

pub fn farms_csv(farms: &[Farm]) -> String {
    let mut s = String::from("id,n_barns,centroid_x,centroid_y,region,type");
    for t in ProductionType::ALL {
        let _ = write!(s, ",p_{}", t.name());
    }
    s.push_str(",population,total_area_m2,barn_ids\n");
    for f in farms {
        let _ = write!(
            s,
            "{},{},{},{},{},{}",
            f.id,
            f.barn_ids.len(),
            f.centroid.x,
            f.centroid.y,
            f.region.as_deref().unwrap_or(UNASSIGNED),
            f.production_type.map_or("", |t| t.name())
        );
        match &f.type_probs {
            Some(p) => p.iter().for_each(|v| {
                let _ = write!(s, ",{v}");
            }),
            None => s.push_str(&",".repeat(ProductionType::ALL.len())),
        }
        let ids: Vec<String> = f.barn_ids.iter().map(u64::to_string).collect();
        let _ = writeln!(
            s,
            ",{},{},{}",
            f.population.map_or(String::new(), |p| p.to_string()),
            f.features.total_area_m2,
            ids.join(";")
        );
    }
    s
}

fn farms_collection(farms: &[Farm]) -> FeatureCollection {
    FeatureCollection::new(
        farms
            .iter()
            .map(|f| {
                let mut feat = Feature::new(Geometry::Point(f.centroid))
                    .with("id", f.id)
                    .with("n_barns", f.barn_ids.len() as u64)
                    .with("region", f.region.as_deref().unwrap_or(UNASSIGNED));
                if let Some(t) = f.production_type {
                    feat = feat.with("type", t.name());
                }
                if let Some(p) = f.population {
                    feat = feat.with("population", p);
                }
                feat
            })
            .collect(),
    )
}

/// Everything a run produced, also persisted under the output directory.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub candidates: Vec<Candidate>,
    pub votes: Vec<Option<Vec<f64>>>,
    pub vote: FilterOutcome,
    pub geometric: FilterOutcome,
    pub tag: FilterOutcome,
    pub size_bounds: (f64, f64),
    /// Ids of candidates kept by every filter, ascending.
    pub kept_ids: Vec<u64>,
    pub farms: Vec<Farm>,
    pub report: StageReport,
}

/// Maps an outcome over a subset back to indices of the full list.
fn lift(outcome: FilterOutcome, subset: &[usize]) -> FilterOutcome {
    FilterOutcome {
        kept: outcome.kept.iter().map(|&i| subset[i]).collect(),
        removed: outcome
            .removed
            .into_iter()
            .map(|r| Removal {
                index: subset[r.index],
                reason: r.reason,
            })
            .collect(),
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

/// Runs every stage and writes its outputs. A failure leaves an
/// [`INCOMPLETE_MARKER`] file naming the stage.
pub fn run(cfg: &PipelineConfig) -> Result<RunOutput> {
    cfg.require(&["prob_dir", "landcover", "legend", "roads"])?;
    for key in ["buildings", "reference_barns", "regions", "reference", "rules"] {
        if cfg.path_opt(key).is_some() {
            cfg.require(&[key])?;
        }
    }
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let marker = out.join(INCOMPLETE_MARKER);
    write_file(&marker, "run in progress\n")?;
    match run_stages(cfg) {
        Ok(o) => {
            fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
            Ok(o)
        }
        Err(e) => {
            let _ = write_file(&marker, &format!("{e}\n"));
            Err(e)
        }
    }
}

fn run_stages(cfg: &PipelineConfig) -> Result<RunOutput> {
    let out = &cfg.output_dir;
    let layers = stage("load", Layers::load(cfg))?;
    let regions = match &cfg.regions {
        Some(p) => stage("load", read_regions(p))?,
        None => Vec::new(),
    };

    let conn = Connectivity::from_neighbors(cfg.connectivity).expect("validated");
    let candidates = stage("extract", extract_candidates(cfg.path("prob_dir"), cfg.threshold, conn))?;
    stage("extract", candidates_collection(&candidates)?.write(&out.join("candidates.geojson")))?;
    let rings: Vec<Ring> = candidates.iter().map(|c| c.ring.clone()).collect();
    let ids: Vec<u64> = candidates.iter().map(|c| c.id).collect();
    let all: Vec<usize> = (0..candidates.len()).collect();

    let (vote, votes) = if cfg.forest_vote {
        stage("forest_vote", forest_vote(cfg, &layers, &rings, &ids))?
    } else {
        (
            FilterOutcome {
                kept: all.clone(),
                removed: Vec::new(),
            },
            vec![None; rings.len()],
        )
    };

    let size_bounds = stage("geometric_filter", size_bounds(cfg))?;
    let geometric = stage("geometric_filter", {
        let voted: Vec<Ring> = vote.kept.iter().map(|&i| rings[i].clone()).collect();
        dedup_overlaps(&voted).and_then(|d| {
            let d = lift(d.into(), &vote.kept);
            let deduped: Vec<Ring> = d.kept.iter().map(|&i| rings[i].clone()).collect();
            let s = lift(size_filter(&deduped, size_bounds.0, size_bounds.1)?, &d.kept);
            let mut removed = d.removed;
            removed.extend(s.removed);
            removed.sort_by_key(|r| r.index);
            Ok(FilterOutcome { kept: s.kept, removed })
        })
    })?;

    let tag = {
        let geo: Vec<Ring> = geometric.kept.iter().map(|&i| rings[i].clone()).collect();
        lift(tag_filter(&geo, &layers.buildings, &layers.roads, &layers.rules), &geometric.kept)
    };

    let mut survived = vec![0u8; rings.len()];
    vote.kept.iter().for_each(|&i| survived[i] = 1);
    geometric.kept.iter().for_each(|&i| survived[i] = 2);
    tag.kept.iter().for_each(|&i| survived[i] = 3);
    let cand_regions: Vec<String> = stage(
        "report",
        rings
            .iter()
            .map(|r| Ok(region_of(&regions, centroid(r)?).unwrap_or_else(|| UNASSIGNED.into())))
            .collect::<Result<Vec<_>>>(),
    )?;
    let report = StageReport::from_survival(&cand_regions, &survived);

    let removals = removal_report_csv([
        ("forest_vote", ids.as_slice(), &vote),
        ("geometric_filter", ids.as_slice(), &geometric),
        ("tag_filter", ids.as_slice(), &tag),
    ]);
    stage("report", write_file(&out.join("removals.csv"), &removals))?;

    let kept_ids: Vec<u64> = tag.kept.iter().map(|&i| ids[i]).collect();
    let kept: Vec<(u64, Ring)> = tag.kept.iter().map(|&i| (ids[i], rings[i].clone())).collect();
    let barns_fc = FeatureCollection::new(
        stage(
            "report",
            tag.kept
                .iter()
                .map(|&i| {
                    Ok(Feature::new(Geometry::Polygon(rings[i].clone()))
                        .with("id", ids[i])
                        .with("chip", candidates[i].chip.as_str())
                        .with("area_m2", polygon_area(&rings[i])?)
                        .with("region", cand_regions[i].as_str()))
                })
                .collect::<Result<Vec<_>>>(),
        )?,
    );
    stage("report", barns_fc.write(&out.join("barns.geojson")))?;

    let mut farms = if kept.is_empty() { Vec::new() } else { stage("group", group_farms(&kept, cfg.link_distance_m))? };
    for f in &mut farms {
        f.region = Some(region_of(&regions, f.centroid).unwrap_or_else(|| UNASSIGNED.into()));
    }
    if cfg.classify_farms && !farms.is_empty() {
        let dir = cfg.models_dir();
        let type_model = stage("classify", load_model(&dir.join(TYPE_MODEL)))?;
        let pop_model = stage("population", load_model(&dir.join(POPULATION_MODEL)))?;
        for f in &mut farms {
            let (t, probs) = stage("classify", classify_type(&f.features, &type_model))?;
            f.production_type = Some(t);
            f.type_probs = Some(probs);
            f.population = Some(stage("population", predict_population(&f.features, t, &pop_model))?);
        }
    }

    stage("report", write_reports(cfg, &report, &farms, &kept))?;
    Ok(RunOutput {
        candidates,
        votes,
        vote,
        geometric,
        tag,
        size_bounds,
        kept_ids,
        farms,
        report,
    })
}

fn forest_vote(cfg: &PipelineConfig, layers: &Layers, rings: &[Ring], ids: &[u64]) -> Result<(FilterOutcome, Vec<Option<Vec<f64>>>)> {
    let dir = cfg.models_dir();
    let manifest = FilterManifest::load(&dir)?;
    let models = manifest.load_models(&dir)?;
    let radius = [manifest.radius_m];
    let feats = layers.features(rings, &radius)?;
    let table = layers.feature_table(ids, &feats, &radius)?;
    table.write(&cfg.output_dir.join("candidate_features.csv"))?;
    let probs = if rings.is_empty() {
        Vec::new()
    } else {
        let d = Dataset::regression(table.columns.clone(), &table.rows, vec![0.0; table.rows.len()])?;
        fold_probabilities(&models.iter().collect::<Vec<_>>(), &d)?
    };
    let mut csv = String::from("id");
    for k in 1..=models.len() {
        let _ = write!(csv, ",p_fold{k}");
    }
    csv.push_str(",votes,kept\n");
    let mut verdicts = Vec::with_capacity(probs.len());
    for (id, p) in ids.iter().zip(&probs) {
        let votes = p.iter().filter(|&&x| x >= 0.5).count();
        let keep = vote_filter(p);
        let _ = write!(csv, "{id}");
        p.iter().for_each(|v| {
            let _ = write!(csv, ",{v}");
        });
        let _ = writeln!(csv, ",{votes},{}", u8::from(keep));
        verdicts.push((!keep).then(|| format!("{votes} of {} folds", p.len())));
    }
    write_file(&cfg.output_dir.join("votes.csv"), &csv)?;
    let mut outcome = FilterOutcome::default();
    for (i, v) in verdicts.into_iter().enumerate() {
        match v {
            None => outcome.kept.push(i),
            Some(reason) => outcome.removed.push(Removal { index: i, reason }),
        }
    }
    Ok((outcome, probs.into_iter().map(Some).collect()))
}

fn size_bounds(cfg: &PipelineConfig) -> Result<(f64, f64)> {
    match (cfg.size_quantiles, &cfg.reference_barns) {
        (Some([lo, hi]), Some(p)) => {
            let areas = read_reference_barns(p)?
                .iter()
                .map(|b| polygon_area(&b.ring))
                .collect::<Result<Vec<_>>>()?;
            size_bounds_from_reference(&areas, lo, hi)
        }
        _ => Ok((cfg.size_min_m2, cfg.size_max_m2)),
    }
}

fn write_reports(cfg: &PipelineConfig, report: &StageReport, farms: &[Farm], kept: &[(u64, Ring)]) -> Result<()> {
    let out = &cfg.output_dir;
    write_file(&out.join("stage_report.csv"), &report.to_csv())?;
    write_file(
        &out.join("stage_report.json"),
        &(serde_json::to_string_pretty(report).expect("report serializes") + "\n"),
    )?;
    write_file(&out.join("farms.csv"), &farms_csv(farms))?;
    write_file(
        &out.join("farms.json"),
        &(serde_json::to_string_pretty(farms).expect("farms serialize") + "\n"),
    )?;
    farms_collection(farms).write(&out.join("farms.geojson"))?;
    let reference = match &cfg.reference {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            read_reference_csv(&text).map_err(|m| Error::parse(p, m))?
        }
        None => BTreeMap::new(),
    };
    write_file(&out.join("benchmark.csv"), &benchmark_csv(&benchmark_report(farms, &reference)))?;
    if cfg.classify_farms && !farms.is_empty() {
        write_file(&out.join("type_distribution.csv"), &type_distribution_csv(farms))?;
        let rings: HashMap<u64, Ring> = kept.iter().cloned().collect();
        write_file(&out.join("type_summary.csv"), &describe_csv(&describe_types(farms, &rings)?))?;
    }
    write_file(&out.join("config.toml"), &cfg.to_toml())
}

/// Reads the farm list written by a run.
pub fn read_farms(path: &Path) -> Result<Vec<Farm>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

/// Reads the feature table written by a run.
pub fn read_candidate_features(out: &Path) -> Result<FeatureTable> {
    FeatureTable::read(&out.join("candidate_features.csv"))
}
