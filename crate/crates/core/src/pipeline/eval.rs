use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::farms::{classify_type, predict_population, Farm};
use crate::features::{farm_features, BarnShape};
use crate::forest::ForestModel;
use crate::geometry::{centroid, interiors_intersect, point_in_ring, polygon_area, Ring, SpatialIndex};
use crate::labels::{now_ms, Label, LabelRecord};
use crate::metrics::r2;
use crate::synth::GroundTruth;

/// When a predicted polygon counts as a detection of a known barn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchRule {
    pub min_area_ratio: f64,
    pub max_area_ratio: f64,
}

impl Default for MatchRule {
    fn default() -> Self {
        MatchRule {
            min_area_ratio: 0.5,
            max_area_ratio: 1.5,
        }
    }
}

/// One-to-one matching of predictions to truth. A pair qualifies when the
/// prediction's centroid lies inside the truth ring and the area ratio is
/// within the rule; pairs are taken greedily by centroid distance.
pub fn match_candidates(pred: &[Ring], truth: &[Ring], rule: MatchRule) -> Result<Vec<Option<usize>>> {
    let index = SpatialIndex::from_boxes(SpatialIndex::DEFAULT_CELL, truth.iter().map(Ring::bbox));
    let truth_c = truth.iter().map(centroid).collect::<Result<Vec<_>>>()?;
    let truth_a = truth.iter().map(polygon_area).collect::<Result<Vec<_>>>()?;
    let mut pairs = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        let c = centroid(p)?;
        let a = polygon_area(p)?;
        for j in index.query(&crate::geometry::BBox::around(c, 0.0)) {
            let ratio = a / truth_a[j];
            if point_in_ring(c, &truth[j]) && (rule.min_area_ratio..=rule.max_area_ratio).contains(&ratio) {
                pairs.push((c.distance(truth_c[j]), i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = vec![None; pred.len()];
    let mut used = vec![false; truth.len()];
    for (_, i, j) in pairs {
        if out[i].is_none() && !used[j] {
            out[i] = Some(j);
            used[j] = true;
        }
    }
    Ok(out)
}

/// Labels for candidates that are unambiguous against the truth: matched
/// ones are barns, ones touching no barn are false positives.
pub fn auto_labels(candidates: &[(u64, Ring)], gt: &GroundTruth, annotator: &str) -> Result<Vec<LabelRecord>> {
    let truth: Vec<Ring> = gt.barns.iter().map(|b| b.ring.clone()).collect();
    let rings: Vec<Ring> = candidates.iter().map(|(_, r)| r.clone()).collect();
    let matches = match_candidates(&rings, &truth, MatchRule::default())?;
    let index = SpatialIndex::from_boxes(SpatialIndex::DEFAULT_CELL, truth.iter().map(Ring::bbox));
    let ts = now_ms();
    let mut out = Vec::new();
    for ((id, ring), m) in candidates.iter().zip(matches) {
        let label = if m.is_some() {
            Some(Label::Barn)
        } else if index.query(&ring.bbox()).into_iter().all(|j| !interiors_intersect(ring, &truth[j])) {
            Some(Label::FalsePositive)
        } else {
            None
        };
        if let Some(label) = label {
            out.push(LabelRecord {
                candidate_id: *id,
                label,
                annotator: annotator.to_string(),
                timestamp_ms: ts,
            });
        }
    }
    Ok(out)
}

/// Detection and farm-level scores of a run against a known scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub truth_barns: usize,
    pub predicted_barns: usize,
    pub matched_barns: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub truth_farms: usize,
    pub predicted_farms: usize,
    /// Predicted farms whose barns are exactly one truth farm's barns.
    pub exact_farms: usize,
    pub type_accuracy: Option<f64>,
    pub population_r2: Option<f64>,
}

impl EvalReport {
    pub fn rows(&self) -> Vec<(&'static str, String)> {
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"));
        vec![
            ("truth_barns", self.truth_barns.to_string()),
            ("predicted_barns", self.predicted_barns.to_string()),
            ("matched_barns", self.matched_barns.to_string()),
            ("precision", format!("{:.4}", self.precision)),
            ("recall", format!("{:.4}", self.recall)),
            ("f1", format!("{:.4}", self.f1)),
            ("truth_farms", self.truth_farms.to_string()),
            ("predicted_farms", self.predicted_farms.to_string()),
            ("exact_farms", self.exact_farms.to_string()),
            ("type_accuracy", opt(self.type_accuracy)),
            ("population_r2", opt(self.population_r2)),
        ]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (k, v) in self.rows() {
            let _ = writeln!(s, "{k},{v}");
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.rows() {
            let _ = writeln!(s, "{k:<16} {v}");
        }
        s
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Scores kept barns and the farms built from them against the truth.
/// Farm scores use only farms that reproduce a truth farm exactly.
pub fn evaluate(kept: &[(u64, Ring)], farms: &[Farm], gt: &GroundTruth) -> Result<EvalReport> {
    let truth: Vec<Ring> = gt.barns.iter().map(|b| b.ring.clone()).collect();
    let rings: Vec<Ring> = kept.iter().map(|(_, r)| r.clone()).collect();
    let matches = match_candidates(&rings, &truth, MatchRule::default())?;
    let matched = matches.iter().flatten().count();
    let precision = ratio(matched, kept.len());
    let recall = ratio(matched, truth.len());
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };

    let truth_barn: BTreeMap<u64, u64> = kept
        .iter()
        .zip(&matches)
        .filter_map(|((id, _), m)| m.map(|j| (*id, gt.barns[j].id)))
        .collect();
    let truth_farms: BTreeMap<BTreeSet<u64>, usize> =
        gt.farms.iter().enumerate().map(|(i, f)| (f.barn_ids.iter().copied().collect(), i)).collect();
    let mut pairs = Vec::new();
    for f in farms {
        let mapped: Option<BTreeSet<u64>> = f.barn_ids.iter().map(|b| truth_barn.get(b).copied()).collect();
        if let Some(i) = mapped.and_then(|m| truth_farms.get(&m)) {
            pairs.push((f, &gt.farms[*i]));
        }
    }
    let typed: Vec<_> = pairs.iter().filter_map(|(f, t)| f.production_type.map(|p| p == t.production_type)).collect();
    let type_accuracy = (!typed.is_empty()).then(|| ratio(typed.iter().filter(|&&b| b).count(), typed.len()));
    let (pred, actual): (Vec<f64>, Vec<f64>) = pairs.iter().filter_map(|(f, t)| f.population.map(|p| (p, t.capacity))).unzip();
    let population_r2 = if pred.len() >= 2 { r2(&pred, &actual).ok() } else { None };

    Ok(EvalReport {
        truth_barns: truth.len(),
        predicted_barns: kept.len(),
        matched_barns: matched,
        precision,
        recall,
        f1,
        truth_farms: gt.farms.len(),
        predicted_farms: farms.len(),
        exact_farms: pairs.len(),
        type_accuracy,
        population_r2,
    })
}

/// Held-out scores on truth farms: type accuracy of `type_model` and R²
/// of `population_model` given the true type.
pub fn population_r2_on_reference(
    gt: &GroundTruth,
    type_model: Option<&ForestModel>,
    population_model: &ForestModel,
) -> Result<(Option<f64>, f64)> {
    let rings: BTreeMap<u64, &Ring> = gt.barns.iter().map(|b| (b.id, &b.ring)).collect();
    let mut pred = Vec::with_capacity(gt.farms.len());
    let mut actual = Vec::with_capacity(gt.farms.len());
    let mut correct = 0;
    for f in &gt.farms {
        let shapes = f.barn_ids.iter().map(|id| BarnShape::from_ring(rings[id])).collect::<Result<Vec<_>>>()?;
        let feats = farm_features(&shapes)?;
        if let Some(m) = type_model {
            correct += usize::from(classify_type(&feats, m)?.0 == f.production_type);
        }
        pred.push(predict_population(&feats, f.production_type, population_model)?);
        actual.push(f.capacity);
    }
    let acc = type_model.map(|_| ratio(correct, gt.farms.len()));
    Ok((acc, r2(&pred, &actual)?))
}
