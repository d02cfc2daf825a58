use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::features::{barn_columns, barn_features, read_legend, BarnFeatures, FeatureTable, LandCover};
use crate::filters::{FilterRules, TaggedFootprint, TaggedRoad};
use crate::geometry::{centroid, polygon_area, Point, Ring, SegmentIndex};
#[allow(unused_imports)]
use crate::par::prelude::*;
use crate::par::{into_par_iter, par_iter};
use crate::raster::{connected_components, polygonize, read_real, threshold, Connectivity};
use crate::synth::{read_buildings, read_roads};
use crate::vector::{Feature, FeatureCollection, Geometry};

use super::PipelineConfig;

/// A polygonized component of a thresholded probability raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// 1-based position in extraction order.
    pub id: u64,
    pub chip: String,
    pub ring: Ring,
}

/// BGRD files of a directory in name order.
pub fn raster_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bgrd"))
        .collect();
    files.sort();
    Ok(files)
}

/// Thresholds every raster in `dir`, labels components and traces their
/// outlines. Ids follow file-name order, then component order.
pub fn extract_candidates(dir: &Path, t: f64, conn: Connectivity) -> Result<Vec<Candidate>> {
    let files = raster_files(dir)?;
    let per_file: Vec<Result<(String, Vec<Ring>)>> = into_par_iter!(files)
        .map(|path| {
            let r = read_real(&path)?;
            let labels = connected_components(&threshold(&r, t)?, conn);
            let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, polygonize(&labels).into_iter().map(|(_, ring)| ring).collect()))
        })
        .collect();
    let mut out = Vec::new();
    for item in per_file {
        let (chip, rings) = item?;
        for ring in rings {
            out.push(Candidate {
                id: out.len() as u64 + 1,
                chip: chip.clone(),
                ring,
            });
        }
    }
    Ok(out)
}

pub fn candidates_collection(c: &[Candidate]) -> Result<FeatureCollection> {
    c.iter()
        .map(|c| {
            Ok(Feature::new(Geometry::Polygon(c.ring.clone()))
                .with("id", c.id)
                .with("chip", c.chip.as_str())
                .with("area_m2", polygon_area(&c.ring)?))
        })
        .collect::<Result<Vec<_>>>()
        .map(FeatureCollection::new)
}

pub fn read_candidates(path: &Path) -> Result<Vec<Candidate>> {
    FeatureCollection::read(path)?
        .features
        .into_iter()
        .enumerate()
        .map(|(i, f)| {
            let id = f.u64_prop("id").ok_or_else(|| Error::parse(path, format!("feature {i}: missing id")))?;
            let ring = f.ring().cloned().ok_or_else(|| Error::parse(path, format!("feature {i}: expected Polygon")))?;
            Ok(Candidate {
                id,
                chip: f.str_prop("chip").unwrap_or_default().to_string(),
                ring,
            })
        })
        .collect()
}

/// Ancillary layers shared by the training and run stages.
pub struct Layers {
    pub landcover: LandCover,
    pub roads: Vec<TaggedRoad>,
    pub road_index: SegmentIndex,
    pub buildings: Vec<TaggedFootprint>,
    pub rules: FilterRules,
}

impl Layers {
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        cfg.require(&["landcover", "legend", "roads"])?;
        let legend = read_legend(cfg.path("legend"))?;
        let raster = crate::raster::read_category(cfg.path("landcover"))?;
        let roads = read_roads(cfg.path("roads"))?;
        let buildings = match &cfg.buildings {
            Some(p) => read_buildings(p)?,
            None => Vec::new(),
        };
        let rules = match &cfg.rules {
            Some(p) => FilterRules::load(p)?,
            None => FilterRules::default(),
        };
        Ok(Layers {
            landcover: LandCover::new(raster, legend)?,
            road_index: SegmentIndex::from_polylines(roads.iter().map(|r| r.line.as_slice()), 250.0),
            roads,
            buildings,
            rules,
        })
    }

    pub fn columns(&self, radii: &[f64]) -> Vec<String> {
        barn_columns(radii, &self.landcover.class_names())
    }

    /// Features of every ring at `radii`, in input order.
    pub fn features(&self, rings: &[Ring], radii: &[f64]) -> Result<Vec<BarnFeatures>> {
        let out: Vec<Result<BarnFeatures>> = par_iter!(rings)
            .map(|r| barn_features(r, &self.road_index, &self.landcover, radii))
            .collect();
        out.into_iter().collect()
    }

    pub fn feature_table(&self, ids: &[u64], feats: &[BarnFeatures], radii: &[f64]) -> Result<FeatureTable> {
        Ok(FeatureTable {
            columns: self.columns(radii),
            ids: ids.to_vec(),
            rows: feats.iter().map(|f| f.row(radii)).collect::<Result<_>>()?,
        })
    }
}

pub fn centroids(rings: &[Ring]) -> Result<Vec<Point>> {
    rings.iter().map(centroid).collect()
}
