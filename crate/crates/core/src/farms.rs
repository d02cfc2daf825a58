//! Farms: barn grouping, production types, population and summaries.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{farm_features, BarnShape, FarmFeatures};
use crate::forest::{Dataset, ForestModel};
use crate::geometry::{centroid, pairwise_centroid_distances, Point, Ring};
use crate::metrics::{percent_difference, spread, Spread};
use crate::unionfind::UnionFind;

pub const DEFAULT_LINK_DISTANCE: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProductionType {
    Sow,
    Nursery,
    Finisher,
    BoarStud,
}

impl ProductionType {
    /// Fixed class order used for model outputs and tie-breaking.
    pub const ALL: [ProductionType; 4] = [
        ProductionType::Sow,
        ProductionType::Nursery,
        ProductionType::Finisher,
        ProductionType::BoarStud,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProductionType::Sow => "sow",
            ProductionType::Nursery => "nursery",
            ProductionType::Finisher => "finisher",
            ProductionType::BoarStud => "boar_stud",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn class_names() -> Vec<String> {
        ProductionType::ALL.iter().map(|t| t.name().to_string()).collect()
    }
}

impl fmt::Display for ProductionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProductionType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let k = s.trim().to_lowercase().replace([' ', '-'], "_");
        ProductionType::ALL
            .into_iter()
            .find(|t| t.name() == k)
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))
    }
}

const LABEL_TABLE: &str = include_str!("../../../data/production_types.csv");

fn label_map() -> &'static HashMap<String, ProductionType> {
    static MAP: OnceLock<HashMap<String, ProductionType>> = OnceLock::new();
    MAP.get_or_init(|| {
        LABEL_TABLE
            .lines()
            .skip(1)
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let (raw, t) = l.rsplit_once(',').expect("label table row");
                (raw.trim().to_lowercase(), t.parse().expect("label table type"))
            })
            .collect()
    })
}

/// Raw labels and their canonical type, in table order.
pub fn label_table() -> Vec<(String, ProductionType)> {
    LABEL_TABLE
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (raw, t) = l.rsplit_once(',').expect("label table row");
            (raw.trim().to_string(), t.parse().expect("label table type"))
        })
        .collect()
}

/// Canonical type of a company-reported label, case-insensitive.
pub fn reclassify_label(raw: &str) -> Result<ProductionType> {
    label_map()
        .get(&raw.trim().to_lowercase())
        .copied()
        .ok_or_else(|| Error::UnknownLabel(raw.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Farm {
    /// Lowest member barn id.
    pub id: u64,
    pub barn_ids: Vec<u64>,
    pub centroid: Point,
    pub features: FarmFeatures,
    pub production_type: Option<ProductionType>,
    /// Class probabilities in [`ProductionType::ALL`] order.
    pub type_probs: Option<Vec<f64>>,
    /// Capacity in pigs.
    pub population: Option<f64>,
    pub region: Option<String>,
}

/// Single-linkage groups of points: connected components of the graph
/// joining points at distance `<= link`. Groups are ordered by their
/// lowest member; members ascend.
pub fn group_points(points: &[Point], link: f64) -> Vec<Vec<usize>> {
    // A cell slightly wider than `link` keeps every linked pair within
    // adjacent cells despite rounding in the division.
    let cell = link.max(f64::MIN_POSITIVE) * (1.0 + 1e-9) + 1e-9;
    let key = |p: Point| ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, &p) in points.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i);
    }
    let mut uf = UnionFind::new(points.len());
    for (i, &p) in points.iter().enumerate() {
        let (cx, cy) = key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(bucket) = grid.get(&(cx + dx, cy + dy)) else { continue };
                for &j in bucket {
                    if j > i && p.distance(points[j]) <= link {
                        uf.union(i, j);
                    }
                }
            }
        }
    }
    uf.groups()
}

/// Groups barns whose centroids chain within `link` meters.
pub fn group_farms(barns: &[(u64, Ring)], link: f64) -> Result<Vec<Farm>> {
    if barns.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let centroids: Vec<Point> = barns.iter().map(|(_, r)| centroid(r)).collect::<Result<_>>()?;
    let shapes: Vec<BarnShape> = barns.iter().map(|(_, r)| BarnShape::from_ring(r)).collect::<Result<_>>()?;
    let mut farms = Vec::new();
    for group in group_points(&centroids, link) {
        let mut members: Vec<usize> = group;
        members.sort_by_key(|&i| barns[i].0);
        let n = members.len() as f64;
        let c = members.iter().fold(Point::new(0.0, 0.0), |a, &i| a + centroids[i]) * (1.0 / n);
        let member_shapes: Vec<BarnShape> = members.iter().map(|&i| shapes[i]).collect();
        farms.push(Farm {
            id: barns[members[0]].0,
            barn_ids: members.iter().map(|&i| barns[i].0).collect(),
            centroid: c,
            features: farm_features(&member_shapes)?,
            production_type: None,
            type_probs: None,
            population: None,
            region: None,
        });
    }
    farms.sort_by_key(|f| f.id);
    Ok(farms)
}

/// Median, quartiles and maximum of pairwise centroid distances.
pub fn intra_barn_stats(barns: &[Ring]) -> Result<Spread> {
    if barns.len() < 2 {
        return Err(Error::InsufficientBarns(barns.len()));
    }
    spread(&pairwise_centroid_distances(barns)?)
}

/// Training table for the production-type classifier.
pub fn type_dataset(features: &[FarmFeatures], types: &[ProductionType]) -> Result<Dataset> {
    if features.len() != types.len() {
        return Err(Error::LengthMismatch(features.len(), types.len()));
    }
    let rows: Vec<Vec<f64>> = features.iter().map(FarmFeatures::row).collect();
    Dataset::classification(
        farm_columns(),
        &rows,
        types.iter().map(|t| t.index()).collect(),
        ProductionType::class_names(),
    )
}

pub fn farm_columns() -> Vec<String> {
    FarmFeatures::COLUMNS.iter().map(|s| s.to_string()).collect()
}

/// Farm columns followed by one indicator column per type.
pub fn population_columns() -> Vec<String> {
    let mut c = farm_columns();
    c.extend(ProductionType::ALL.iter().map(|t| format!("type_{}", t.name())));
    c
}

pub fn population_row(f: &FarmFeatures, t: ProductionType) -> Vec<f64> {
    let mut r = f.row();
    r.extend(ProductionType::ALL.iter().map(|&u| f64::from(u8::from(u == t))));
    r
}

/// Training table for the capacity regressor.
pub fn population_dataset(features: &[FarmFeatures], types: &[ProductionType], capacity: &[f64]) -> Result<Dataset> {
    if features.len() != types.len() {
        return Err(Error::LengthMismatch(features.len(), types.len()));
    }
    let rows: Vec<Vec<f64>> = features.iter().zip(types).map(|(f, &t)| population_row(f, t)).collect();
    Dataset::regression(population_columns(), &rows, capacity.to_vec())
}

/// Type with the highest probability, ties to the earlier type, and the
/// probabilities in [`ProductionType::ALL`] order.
pub fn classify_type(f: &FarmFeatures, model: &ForestModel) -> Result<(ProductionType, Vec<f64>)> {
    model.check_schema(&farm_columns())?;
    let raw = model.predict_proba(&f.row())?;
    let mut probs = vec![0.0; ProductionType::ALL.len()];
    for (name, p) in model.classes().iter().zip(raw) {
        let t: ProductionType = name.parse().map_err(|_| Error::SchemaMismatch(format!("unknown class {name}")))?;
        probs[t.index()] = p;
    }
    let best = (0..probs.len()).fold(0, |b, i| if probs[i] > probs[b] { i } else { b });
    Ok((ProductionType::ALL[best], probs))
}

/// Predicted capacity in pigs, never negative.
pub fn predict_population(f: &FarmFeatures, t: ProductionType, model: &ForestModel) -> Result<f64> {
    if !(f.total_area_m2 > 0.0) {
        return Err(Error::DegenerateGeometry("farm area must be positive".into()));
    }
    model.check_schema(&population_columns())?;
    Ok(model.predict_value(&population_row(f, t))?.max(0.0))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub farms: Option<f64>,
    pub population: Option<f64>,
}

/// Per-region comparison against reference counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub region: String,
    pub barns: usize,
    pub farms: usize,
    pub population: f64,
    pub reference_farms: Option<f64>,
    pub reference_population: Option<f64>,
    pub farm_diff_pct: Option<f64>,
    pub population_diff_pct: Option<f64>,
}

fn exact_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.into_iter().sum()
}

fn bench_row(region: String, farms: &[&Farm], r: Option<&Reference>) -> BenchmarkRow {
    let population = exact_sum(farms.iter().map(|f| f.population.unwrap_or(0.0)).collect());
    let reference_farms = r.and_then(|r| r.farms);
    let reference_population = r.and_then(|r| r.population);
    BenchmarkRow {
        barns: farms.iter().map(|f| f.barn_ids.len()).sum(),
        farms: farms.len(),
        farm_diff_pct: reference_farms.and_then(|rf| percent_difference(farms.len() as f64, rf).ok()),
        population_diff_pct: reference_population.and_then(|rp| percent_difference(population, rp).ok()),
        region,
        population,
        reference_farms,
        reference_population,
    }
}

/// Rows for every region seen in `farms` or `reference`, sorted by name,
/// then a total row. Farms without a region fall under "unassigned".
pub fn benchmark_report(farms: &[Farm], reference: &BTreeMap<String, Reference>) -> Vec<BenchmarkRow> {
    let mut by_region: BTreeMap<String, Vec<&Farm>> = reference.keys().map(|k| (k.clone(), Vec::new())).collect();
    for f in farms {
        by_region.entry(f.region.clone().unwrap_or_else(|| "unassigned".into())).or_default().push(f);
    }
    let mut rows: Vec<BenchmarkRow> = by_region
        .into_iter()
        .map(|(region, fs)| {
            let r = reference.get(&region);
            bench_row(region, &fs, r)
        })
        .collect();
    let all: Vec<&Farm> = farms.iter().collect();
    let total_ref = |g: fn(&Reference) -> Option<f64>| -> Option<f64> {
        let v: Vec<f64> = reference.values().filter_map(g).collect();
        (!v.is_empty() && v.len() == reference.len()).then(|| exact_sum(v))
    };
    let total = Reference {
        farms: total_ref(|r| r.farms),
        population: total_ref(|r| r.population),
    };
    rows.push(bench_row("total".into(), &all, Some(&total)));
    rows
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or(String::new(), |x| format!("{x:.digits$}"))
}

fn signed_pct(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{:+}", x.round() as i64))
}

pub fn benchmark_csv(rows: &[BenchmarkRow]) -> String {
    let mut out = String::from(
        "state,barns,farms,reference_farms,farms_diff_pct,capacity,reference_capacity,capacity_diff_pct\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{:.0},{},{}\n",
            r.region,
            r.barns,
            r.farms,
            opt(r.reference_farms, 0),
            signed_pct(r.farm_diff_pct),
            r.population,
            opt(r.reference_population, 0),
            signed_pct(r.population_diff_pct),
        ));
    }
    out
}

pub fn read_reference_csv(text: &str) -> std::result::Result<BTreeMap<String, Reference>, String> {
    let mut out = BTreeMap::new();
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or("empty reference file")?.split(',').map(str::trim).collect();
    let col = |n: &str| header.iter().position(|h| *h == n);
    let (ri, fi, pi) = (col("state").ok_or("missing state column")?, col("farms"), col("population"));
    for (k, l) in lines.enumerate() {
        let cells: Vec<&str> = l.split(',').map(str::trim).collect();
        let num = |i: Option<usize>| -> std::result::Result<Option<f64>, String> {
            match i.and_then(|i| cells.get(i)) {
                None | Some(&"") => Ok(None),
                Some(s) => s.parse().map(Some).map_err(|_| format!("line {}: bad number {s}", k + 2)),
            }
        };
        out.insert(
            cells.get(ri).ok_or(format!("line {}: missing state", k + 2))?.to_string(),
            Reference {
                farms: num(fi)?,
                population: num(pi)?,
            },
        );
    }
    Ok(out)
}

/// Percent of farms of each type per region.
pub fn type_distribution_csv(farms: &[Farm]) -> String {
    let mut counts: BTreeMap<String, [usize; 4]> = BTreeMap::new();
    for f in farms {
        if let Some(t) = f.production_type {
            counts.entry(f.region.clone().unwrap_or_else(|| "unassigned".into())).or_default()[t.index()] += 1;
        }
    }
    let mut out = String::from("state,sow_pct,nursery_pct,finisher_pct,boar_stud_pct,farms\n");
    for (region, c) in counts {
        let n: usize = c.iter().sum();
        let pct: Vec<String> = c.iter().map(|&x| format!("{:.1}", 100.0 * x as f64 / n as f64)).collect();
        out.push_str(&format!("{region},{},{n}\n", pct.join(",")));
    }
    out
}

/// Descriptors of one production type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeSummary {
    pub production_type: ProductionType,
    pub farms: usize,
    pub barns: usize,
    pub barn_area: Spread,
    pub aspect_ratio: Spread,
    pub barns_per_farm: Spread,
    pub single_barn_share: f64,
    /// Pooled over farms with at least two barns.
    pub intra_barn_distance: Option<Spread>,
}

/// Barn size, shape, count and spacing summaries per type. `barns` maps
/// barn ids to polygons.
pub fn describe_types(farms: &[Farm], barns: &HashMap<u64, Ring>) -> Result<Vec<TypeSummary>> {
    let mut out = Vec::new();
    for t in ProductionType::ALL {
        let of_type: Vec<&Farm> = farms.iter().filter(|f| f.production_type == Some(t)).collect();
        if of_type.is_empty() {
            continue;
        }
        let mut areas = Vec::new();
        let mut aspects = Vec::new();
        let mut dists = Vec::new();
        for f in &of_type {
            let rings: Vec<Ring> = f
                .barn_ids
                .iter()
                .map(|id| barns.get(id).cloned().ok_or_else(|| Error::InvalidDataset(format!("barn {id} missing"))))
                .collect::<Result<_>>()?;
            for r in &rings {
                let s = BarnShape::from_ring(r)?;
                areas.push(s.area_m2);
                aspects.push(s.aspect_ratio);
            }
            if rings.len() >= 2 {
                dists.extend(pairwise_centroid_distances(&rings)?);
            }
        }
        let counts: Vec<f64> = of_type.iter().map(|f| f.barn_ids.len() as f64).collect();
        out.push(TypeSummary {
            production_type: t,
            farms: of_type.len(),
            barns: areas.len(),
            barn_area: spread(&areas)?,
            aspect_ratio: spread(&aspects)?,
            barns_per_farm: spread(&counts)?,
            single_barn_share: counts.iter().filter(|&&c| c == 1.0).count() as f64 / counts.len() as f64,
            intra_barn_distance: if dists.is_empty() { None } else { Some(spread(&dists)?) },
        });
    }
    Ok(out)
}

pub fn describe_csv(rows: &[TypeSummary]) -> String {
    let mut out = String::from(
        "type,farms,barns,area_median,area_q1,area_q3,aspect_median,barns_per_farm_median,barns_per_farm_q1,barns_per_farm_q3,single_barn_pct,intra_median,intra_q1,intra_q3,intra_max\n",
    );
    for r in rows {
        let intra = r.intra_barn_distance.map_or(",,,".to_string(), |s| {
            format!("{:.0},{:.0},{:.0},{:.0}", s.median, s.q1, s.q3, s.max)
        });
        out.push_str(&format!(
            "{},{},{},{:.0},{:.0},{:.0},{:.2},{},{},{},{:.0},{intra}\n",
            r.production_type,
            r.farms,
            r.barns,
            r.barn_area.median,
            r.barn_area.q1,
            r.barn_area.q3,
            r.aspect_ratio.median,
            r.barns_per_farm.median,
            r.barns_per_farm.q1,
            r.barns_per_farm.q3,
            100.0 * r.single_barn_share,
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn barn_at(id: u64, x: f64, y: f64) -> (u64, Ring) {
        (id, Ring::rectangle(Point::new(x - 10.0, y - 5.0), 20.0, 10.0).unwrap())
    }

    #[test]
    fn grouping_examples() {
        assert_eq!(group_farms(&[barn_at(1, 0.0, 0.0), barn_at(2, 300.0, 0.0)], 500.0).unwrap().len(), 1);
        assert_eq!(group_farms(&[barn_at(1, 0.0, 0.0), barn_at(2, 600.0, 0.0)], 500.0).unwrap().len(), 2);
        let chain = [barn_at(5, 0.0, 0.0), barn_at(3, 400.0, 0.0), barn_at(9, 800.0, 0.0)];
        let f = group_farms(&chain, 500.0).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].id, 3);
        assert_eq!(f[0].barn_ids, vec![3, 5, 9]);
        let exact = group_farms(&[barn_at(1, 0.0, 0.0), barn_at(2, 300.0, 400.0)], 500.0).unwrap();
        assert_eq!(exact.len(), 1);
    }

    #[test]
    fn intra_examples() {
        let two = [barn_at(0, 0.0, 0.0).1, barn_at(1, 67.0, 0.0).1];
        let s = intra_barn_stats(&two).unwrap();
        assert!((s.median - 67.0).abs() < 1e-9 && (s.max - 67.0).abs() < 1e-9);
        let three = [barn_at(0, 0.0, 0.0).1, barn_at(1, 30.0, 0.0).1, barn_at(2, 70.0, 0.0).1];
        assert!((intra_barn_stats(&three).unwrap().median - 40.0).abs() < 1e-9);
        assert!(matches!(intra_barn_stats(&two[..1]), Err(Error::InsufficientBarns(1))));
    }

    #[test]
    fn labels() {
        assert_eq!(reclassify_label("GDU").unwrap(), ProductionType::Sow);
        assert_eq!(reclassify_label("wean to finish").unwrap(), ProductionType::Finisher);
        assert_eq!(reclassify_label("Boar stud").unwrap(), ProductionType::BoarStud);
        assert!(matches!(reclassify_label("Dairy"), Err(Error::UnknownLabel(_))));
    }

    #[test]
    fn benchmark_empty_region_and_pct() {
        let mut reference = BTreeMap::new();
        reference.insert(
            "IA".to_string(),
            Reference {
                farms: Some(10.0),
                population: Some(24.6e6),
            },
        );
        reference.insert("OH".to_string(), Reference::default());
        let farm = Farm {
            id: 1,
            barn_ids: vec![1],
            centroid: Point::new(0.0, 0.0),
            features: farm_features(&[BarnShape {
                area_m2: 1.0,
                length_m: 1.0,
                width_m: 1.0,
                aspect_ratio: 1.0,
            }])
            .unwrap(),
            production_type: None,
            type_probs: None,
            population: Some(27.4e6),
            region: Some("IA".into()),
        };
        let rows = benchmark_report(&[farm], &reference);
        assert_eq!(rows[0].population_diff_pct.unwrap().round(), 11.0);
        assert_eq!((rows[1].farms, rows[1].population), (0, 0.0));
        assert!(benchmark_csv(&rows).contains(",+11\n"));
    }
}
