//! Candidate pruning after the forest vote: duplicate removal, size bounds
//! and tag-based exclusion.
//!
//! Every filter returns indices into its input slice, split into kept and
//! removed, with a reason for each removal.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{interiors_intersect, polygon_area, polyline_intersects_ring, rings_intersect, Point, Ring, SpatialIndex};
use crate::metrics::quantiles;
use crate::par::par_iter;
#[allow(unused_imports)]
use crate::par::prelude::*;
use crate::unionfind::UnionFind;

/// Fixed size bounds in square meters.
pub const DEFAULT_SIZE_BOUNDS: (f64, f64) = (500.0, 5000.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedFootprint {
    pub ring: Ring,
    pub tag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedRoad {
    pub line: Vec<Point>,
    pub tag: String,
}

impl TaggedRoad {
    pub fn new(line: Vec<Point>, tag: impl Into<String>) -> Result<Self> {
        if line.len() < 2 || line.iter().any(|p| !p.is_finite()) {
            return Err(Error::DegenerateGeometry("road needs at least two finite points".into()));
        }
        Ok(TaggedRoad { line, tag: tag.into() })
    }
}

/// Splits a raw tag into its members. Handles `a;b` and `['a', 'b']`.
pub fn split_tags(raw: &str) -> Vec<String> {
    let s = raw.trim();
    let s = s.strip_prefix('[').and_then(|t| t.strip_suffix(']')).unwrap_or(s);
    s.split([';', ','])
        .map(|t| t.trim().trim_matches(|c| c == '\'' || c == '"').trim().to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterRules {
    pub exclude_building_tags: BTreeSet<String>,
    pub retain_building_tags: BTreeSet<String>,
    pub remove_road_tags: BTreeSet<String>,
}

fn set(items: &[&str]) -> BTreeSet<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl Default for FilterRules {
    fn default() -> Self {
        FilterRules {
            exclude_building_tags: set(&["church", "industrial", "school", "warehouse"]),
            retain_building_tags: set(&["barn", "farm", "farm_auxiliary", "sty", "yes"]),
            remove_road_tags: set(&["motorway", "motorway_link", "primary", "primary_link", "trunk", "trunk_link"]),
        }
    }
}

impl FilterRules {
    pub fn validate(&self) -> Result<()> {
        let clash: Vec<&String> = self.exclude_building_tags.intersection(&self.retain_building_tags).collect();
        if !clash.is_empty() {
            return Err(Error::InvalidRules(format!("tags both excluded and retained: {clash:?}")));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let mut r: FilterRules = toml::from_str(s).map_err(|e| Error::InvalidRules(e.to_string()))?;
        for set in [&mut r.exclude_building_tags, &mut r.retain_building_tags, &mut r.remove_road_tags] {
            *set = set.iter().map(|t| t.trim().to_lowercase()).collect();
        }
        r.validate()?;
        Ok(r)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("rules serialize")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        FilterRules::from_toml_str(&s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Removal {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub kept: Vec<usize>,
    pub removed: Vec<Removal>,
}

impl FilterOutcome {
    fn from_verdicts(verdicts: Vec<Option<String>>) -> Self {
        let mut out = FilterOutcome::default();
        for (index, v) in verdicts.into_iter().enumerate() {
            match v {
                None => out.kept.push(index),
                Some(reason) => out.removed.push(Removal { index, reason }),
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupOutcome {
    pub kept: Vec<usize>,
    pub removed: Vec<Removal>,
    /// Overlap clusters with more than one member, each ascending.
    pub clusters: Vec<Vec<usize>>,
}

impl From<DedupOutcome> for FilterOutcome {
    fn from(d: DedupOutcome) -> Self {
        FilterOutcome {
            kept: d.kept,
            removed: d.removed,
        }
    }
}

/// Clusters polygons whose interiors overlap (transitively) and keeps the
/// largest of each cluster, ties to the lowest index.
pub fn dedup_overlaps(polys: &[Ring]) -> Result<DedupOutcome> {
    let areas: Vec<f64> = polys.iter().map(polygon_area).collect::<Result<_>>()?;
    let index = SpatialIndex::from_boxes(SpatialIndex::DEFAULT_CELL, polys.iter().map(Ring::bbox));
    let edges: Vec<Vec<usize>> = par_iter!(polys)
        .enumerate()
        .map(|(i, p)| {
            index
                .query(&p.bbox())
                .into_iter()
                .filter(|&j| j > i && interiors_intersect(p, &polys[j]))
                .collect()
        })
        .collect();
    let mut uf = UnionFind::new(polys.len());
    for (i, js) in edges.iter().enumerate() {
        js.iter().for_each(|&j| uf.union(i, j));
    }
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    let mut clusters = Vec::new();
    for group in uf.groups() {
        let mut best = group[0];
        for &i in &group[1..] {
            if areas[i] > areas[best] {
                best = i;
            }
        }
        kept.push(best);
        removed.extend(group.iter().filter(|&&i| i != best).map(|&index| Removal {
            index,
            reason: format!("duplicate of {best}"),
        }));
        if group.len() > 1 {
            clusters.push(group);
        }
    }
    kept.sort_unstable();
    removed.sort_by_key(|r| r.index);
    Ok(DedupOutcome { kept, removed, clusters })
}

/// Keeps polygons with `lo <= area <= hi`.
pub fn size_filter(polys: &[Ring], lo: f64, hi: f64) -> Result<FilterOutcome> {
    if !(lo <= hi) {
        return Err(Error::InvalidBounds { lo, hi });
    }
    let verdicts = polys
        .iter()
        .map(|p| {
            let a = polygon_area(p)?;
            Ok(if a < lo {
                Some(format!("area {a:.1} below {lo}"))
            } else if a > hi {
                Some(format!("area {a:.1} above {hi}"))
            } else {
                None
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FilterOutcome::from_verdicts(verdicts))
}

/// `(q_lo, q_hi)` quantiles of reference barn areas.
pub fn size_bounds_from_reference(areas: &[f64], q_lo: f64, q_hi: f64) -> Result<(f64, f64)> {
    let q = quantiles(areas, &[q_lo, q_hi])?;
    Ok((q[0], q[1]))
}

struct TaggedIndex<'a> {
    buildings: &'a [TaggedFootprint],
    building_tags: Vec<Vec<String>>,
    building_index: SpatialIndex,
    road_tags: Vec<Vec<String>>,
    /// (road, segment start) per indexed segment.
    segments: Vec<(usize, usize)>,
    segment_index: SpatialIndex,
    roads: &'a [TaggedRoad],
}

impl<'a> TaggedIndex<'a> {
    fn new(buildings: &'a [TaggedFootprint], roads: &'a [TaggedRoad]) -> Self {
        let mut segments = Vec::new();
        let mut segment_index = SpatialIndex::new(SpatialIndex::DEFAULT_CELL);
        for (r, road) in roads.iter().enumerate() {
            for s in 0..road.line.len().saturating_sub(1) {
                segment_index.insert(crate::geometry::Segment::new(road.line[s], road.line[s + 1]).bbox());
                segments.push((r, s));
            }
        }
        TaggedIndex {
            buildings,
            building_tags: buildings.iter().map(|b| split_tags(&b.tag)).collect(),
            building_index: SpatialIndex::from_boxes(SpatialIndex::DEFAULT_CELL, buildings.iter().map(|b| b.ring.bbox())),
            road_tags: roads.iter().map(|r| split_tags(&r.tag)).collect(),
            segments,
            segment_index,
            roads,
        }
    }

    fn verdict(&self, poly: &Ring, rules: &FilterRules) -> Option<String> {
        let bb = poly.bbox();
        let mut excluded: Option<&str> = None;
        let mut retained = false;
        for b in self.building_index.query(&bb) {
            let tags = &self.building_tags[b];
            let ex = tags.iter().find(|t| rules.exclude_building_tags.contains(*t));
            let re = tags.iter().any(|t| rules.retain_building_tags.contains(t));
            if (ex.is_some() || re) && rings_intersect(poly, &self.buildings[b].ring) {
                retained |= re;
                if excluded.is_none() {
                    excluded = ex.map(String::as_str);
                }
            }
        }
        if let (Some(tag), false) = (excluded, retained) {
            return Some(format!("building:{tag}"));
        }
        for s in self.segment_index.query(&bb) {
            let (r, k) = self.segments[s];
            let Some(tag) = self.road_tags[r].iter().find(|t| rules.remove_road_tags.contains(*t)) else {
                continue;
            };
            if polyline_intersects_ring(&self.roads[r].line[k..k + 2], poly) {
                return Some(format!("road:{tag}"));
            }
        }
        None
    }
}

/// Removes a polygon when it touches an excluded building and no retained
/// building, or when a removable road crosses or touches it. The reason
/// names the offending tag.
pub fn tag_filter(polys: &[Ring], buildings: &[TaggedFootprint], roads: &[TaggedRoad], rules: &FilterRules) -> FilterOutcome {
    let idx = TaggedIndex::new(buildings, roads);
    FilterOutcome::from_verdicts(par_iter!(polys).map(|p| idx.verdict(p, rules)).collect())
}

/// CSV rows `id,stage,reason` for removals, mapping indices to `ids`.
pub fn removal_report_csv<'a>(stages: impl IntoIterator<Item = (&'a str, &'a [u64], &'a FilterOutcome)>) -> String {
    let mut out = String::from("id,stage,reason\n");
    for (stage, ids, outcome) in stages {
        for r in &outcome.removed {
            out.push_str(&format!("{},{stage},{}\n", ids[r.index], r.reason.replace(',', ";")));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sq(x: f64, y: f64, s: f64) -> Ring {
        Ring::rectangle(Point::new(x, y), s, s).unwrap()
    }

    #[test]
    fn identical_and_disjoint() {
        let d = dedup_overlaps(&[sq(0.0, 0.0, 10.0), sq(0.0, 0.0, 10.0)]).unwrap();
        assert_eq!(d.kept, vec![0]);
        let d = dedup_overlaps(&[sq(0.0, 0.0, 10.0), sq(20.0, 0.0, 10.0), sq(10.0, 0.0, 10.0)]).unwrap();
        assert_eq!(d.kept, vec![0, 1, 2], "shared edges are not overlap");
    }

    #[test]
    fn chain_keeps_largest() {
        let a = sq(0.0, 0.0, 10.0);
        let b = Ring::rectangle(Point::new(8.0, 0.0), 12.0, 10.0).unwrap();
        let c = sq(18.0, 0.0, 10.0);
        let d = dedup_overlaps(&[a, b, c]).unwrap();
        assert_eq!(d.kept, vec![1]);
        assert_eq!(d.clusters, vec![vec![0, 1, 2]]);
    }

    #[test]
    fn size_bounds_inclusive() {
        let polys = [sq(0.0, 0.0, 20.0), Ring::rectangle(Point::new(0.0, 0.0), 50.0, 10.0).unwrap(), sq(0.0, 0.0, 80.0)];
        let o = size_filter(&polys, 500.0, 5000.0).unwrap();
        assert_eq!(o.kept, vec![1]);
        assert!(matches!(size_filter(&polys, 10.0, 1.0), Err(Error::InvalidBounds { .. })));
    }

    #[test]
    fn tag_rules() {
        let rules = FilterRules::default();
        let p = sq(0.0, 0.0, 30.0);
        let wh = TaggedFootprint {
            ring: sq(10.0, 10.0, 40.0),
            tag: "warehouse".into(),
        };
        let sty = TaggedFootprint {
            ring: sq(-5.0, -5.0, 10.0),
            tag: "sty".into(),
        };
        let ind = TaggedFootprint {
            ring: sq(20.0, 0.0, 40.0),
            tag: "industrial".into(),
        };
        let o = tag_filter(std::slice::from_ref(&p), &[wh], &[], &rules);
        assert_eq!(o.removed[0].reason, "building:warehouse");
        let o = tag_filter(std::slice::from_ref(&p), &[ind, sty], &[], &rules);
        assert_eq!(o.kept, vec![0]);
        let road = TaggedRoad::new(vec![Point::new(-10.0, 15.0), Point::new(50.0, 15.0)], "motorway_link").unwrap();
        let o = tag_filter(std::slice::from_ref(&p), &[], &[road], &rules);
        assert_eq!(o.removed[0].reason, "road:motorway_link");
        let lane = TaggedRoad::new(vec![Point::new(-10.0, 15.0), Point::new(50.0, 15.0)], "service").unwrap();
        assert_eq!(tag_filter(&[p], &[], &[lane], &rules).kept, vec![0]);
    }

    #[test]
    fn tag_splitting() {
        assert_eq!(split_tags("['motorway', 'motorway_link']"), vec!["motorway", "motorway_link"]);
        assert_eq!(split_tags("roof;yes;Warehouse"), vec!["roof", "yes", "warehouse"]);
        assert_eq!(split_tags("chicken shed"), vec!["chicken shed"]);
    }

    #[test]
    fn rules_round_trip_and_validation() {
        let r = FilterRules::default();
        assert_eq!(FilterRules::from_toml_str(&r.to_toml()).unwrap(), r);
        let bad = "exclude_building_tags = [\"sty\"]\nretain_building_tags = [\"sty\"]\nremove_road_tags = []\n";
        assert!(matches!(FilterRules::from_toml_str(bad), Err(Error::InvalidRules(_))));
    }
}
