//! Seeded synthetic scenes with known ground truth.
//!
//! A scene covers a rectangle of projected meters with its lower-left corner
//! at the origin. It holds farms of rectangular barns, distractor structures,
//! roads, a land-cover raster, false-positive blobs and tagged building
//! footprints. Probability rasters are emitted as chips around objects, all
//! aligned to one scene-wide pixel grid, instead of a single raster over the
//! whole extent.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::farms::{ProductionType, Reference};
use crate::features::{format_legend, read_legend, LandCover};
use crate::filters::{FilterRules, TaggedFootprint, TaggedRoad};
use crate::geometry::{centroid, point_in_ring, polygon_area, BBox, Point, Ring, SegmentIndex, SpatialIndex};
use crate::raster::{
    category_to_mask, mask_to_category, read_category, read_real, write_category, write_real, BinaryMask,
    CategoryRaster, Grid, GridSpec, Raster,
};
use crate::vector::{Feature, FeatureCollection, Geometry};

/// Land-cover codes and names written by the generator.
pub const LANDCOVER_LEGEND: [(u16, &str); 11] = [
    (11, "open_water"),
    (21, "developed_open"),
    (22, "developed_low"),
    (23, "developed_medium"),
    (24, "developed_high"),
    (41, "deciduous_forest"),
    (42, "evergreen_forest"),
    (52, "shrub_scrub"),
    (81, "pasture_hay"),
    (82, "cultivated_crops"),
    (90, "woody_wetlands"),
];

const PATCH_WEIGHTS: [(u16, f64); 9] = [
    (82, 0.40),
    (81, 0.20),
    (41, 0.14),
    (42, 0.08),
    (90, 0.06),
    (11, 0.03),
    (52, 0.04),
    (21, 0.05),
    (22, 0.00),
];

const TAGS_RETAIN: [&str; 5] = ["barn", "farm_auxiliary", "yes", "sty", "farm"];
const IQR_Z: f64 = 1.348_979_500_392_163_4;
const ROAD_STEP: f64 = 200.0;

/// Log-normal law given by its median and quartiles. The spread is
/// `ln(q3 / q1) / 1.349`; the quartiles need not be symmetric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalParams {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl LogNormalParams {
    pub const fn new(median: f64, q1: f64, q3: f64) -> Self {
        LogNormalParams { median, q1, q3 }
    }

    pub fn sigma(&self) -> f64 {
        (self.q3 / self.q1).ln() / IQR_Z
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.median * (self.sigma() * z).exp()
    }

    fn validate(&self, what: &str) -> Result<()> {
        let ok = self.median > 0.0 && self.q1 > 0.0 && self.q1 < self.q3 && self.median.is_finite() && self.q3.is_finite();
        ok.then_some(()).ok_or_else(|| Error::InvalidSpec(format!("{what}: bad log-normal parameters {self:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeParams {
    pub production_type: ProductionType,
    pub farms: usize,
    pub area_m2: LogNormalParams,
    pub aspect_ratio: LogNormalParams,
    pub single_barn_share: f64,
    /// Barn count of multi-barn farms, rounded and clamped to `2..=max_barns`.
    pub barns_per_farm: LogNormalParams,
    /// Synthetic capacity density in pigs per m² of barn area.
    pub density: f64,
}

impl TypeParams {
    /// Geometry anchored on published barn statistics; densities are
    /// invented.
    pub fn defaults(t: ProductionType, farms: usize) -> Self {
        let (area, aspect, single, barns, density) = match t {
            ProductionType::Sow => ((1255.0, 742.0, 2100.0), (2.12, 1.54, 3.18), 0.03, (4.5, 3.0, 7.0), 0.45),
            ProductionType::Nursery => ((615.0, 482.0, 922.0), (1.56, 1.15, 2.15), 0.33, (3.0, 2.0, 4.0), 2.5),
            ProductionType::Finisher => ((828.0, 734.0, 1242.0), (2.44, 1.73, 3.62), 0.20, (2.6, 2.0, 3.5), 1.2),
            ProductionType::BoarStud => ((521.0, 349.0, 803.0), (1.80, 1.28, 2.88), 0.46, (2.0, 1.6, 3.0), 0.12),
        };
        let ln = |(m, a, b)| LogNormalParams::new(m, a, b);
        TypeParams {
            production_type: t,
            farms,
            area_m2: ln(area),
            aspect_ratio: ln(aspect),
            single_barn_share: single,
            barns_per_farm: ln(barns),
            density,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistractorCounts {
    pub warehouse: usize,
    pub house: usize,
    pub parking: usize,
}

impl Default for DistractorCounts {
    fn default() -> Self {
        DistractorCounts {
            warehouse: 150,
            house: 300,
            parking: 150,
        }
    }
}

impl DistractorCounts {
    pub fn total(&self) -> usize {
        self.warehouse + self.house + self.parking
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoadParams {
    pub highways: usize,
    pub secondary_spacing_m: f64,
    pub towns: usize,
    pub town_radius_m: f64,
}

impl Default for RoadParams {
    fn default() -> Self {
        RoadParams {
            highways: 3,
            secondary_spacing_m: 6000.0,
            towns: 6,
            town_radius_m: 800.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LandCoverParams {
    pub pixel_size_m: f64,
    /// Coverage beyond the scene edge so buffers near the edge stay inside.
    pub margin_m: f64,
    pub patch_m: f64,
}

impl Default for LandCoverParams {
    fn default() -> Self {
        LandCoverParams {
            pixel_size_m: 30.0,
            margin_m: 5000.0,
            patch_m: 600.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Probability range inside barns.
    pub interior: (f64, f64),
    /// Probability range inside distractors and blobs.
    pub distractor_interior: (f64, f64),
    pub blur_px: usize,
    /// Scale of the blurred halo around objects.
    pub halo_gain: f64,
    /// Half-width of uniform per-pixel noise.
    pub pixel_noise: f64,
    pub dilation_px: usize,
    /// False-positive blobs per planted barn.
    pub fp_blob_rate: f64,
    /// Share of farms whose chip is emitted a second time, shifted.
    pub duplicate_rate: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            interior: (0.82, 0.97),
            distractor_interior: (0.8, 0.95),
            blur_px: 2,
            halo_gain: 0.6,
            pixel_noise: 0.08,
            dilation_px: 0,
            fp_blob_rate: 1.0,
            duplicate_rate: 0.05,
        }
    }
}

impl NoiseModel {
    pub fn none() -> Self {
        NoiseModel {
            interior: (0.95, 0.95),
            distractor_interior: (0.9, 0.9),
            blur_px: 0,
            halo_gain: 0.0,
            pixel_noise: 0.0,
            dilation_px: 0,
            fp_blob_rate: 0.0,
            duplicate_rate: 0.0,
        }
    }

    pub fn is_none(&self) -> bool {
        self.blur_px == 0 && self.pixel_noise == 0.0 && self.dilation_px == 0 && self.fp_blob_rate == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub width_m: f64,
    pub height_m: f64,
    pub pixel_size: f64,
    /// Farms sit one per square cell of this size.
    pub farm_cell_m: f64,
    /// Upper bound on the distance from a farm center to any barn vertex.
    pub farm_radius_m: f64,
    /// Range of gaps between neighboring barns of one farm.
    pub barn_gap_m: (f64, f64),
    pub max_barns: usize,
    pub link_distance_m: f64,
    pub types: Vec<TypeParams>,
    pub distractors: DistractorCounts,
    pub roads: RoadParams,
    pub landcover: LandCoverParams,
    pub noise: NoiseModel,
    /// Share of barns with a retained building tag.
    pub tagged_barn_share: f64,
    /// Share of barns tagged with both an excluded and a retained tag.
    pub mixed_tag_share: f64,
    /// Log-scale standard deviation of capacity around the density law.
    pub capacity_noise: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            width_m: 50_000.0,
            height_m: 50_000.0,
            pixel_size: 1.0,
            farm_cell_m: 2000.0,
            farm_radius_m: 350.0,
            barn_gap_m: (10.0, 40.0),
            max_barns: 12,
            link_distance_m: crate::farms::DEFAULT_LINK_DISTANCE,
            types: vec![
                TypeParams::defaults(ProductionType::Sow, 40),
                TypeParams::defaults(ProductionType::Nursery, 50),
                TypeParams::defaults(ProductionType::Finisher, 90),
                TypeParams::defaults(ProductionType::BoarStud, 20),
            ],
            distractors: DistractorCounts::default(),
            roads: RoadParams::default(),
            landcover: LandCoverParams::default(),
            noise: NoiseModel::default(),
            tagged_barn_share: 0.3,
            mixed_tag_share: 0.03,
            capacity_noise: 0.1,
            seed: 0,
        }
    }
}

fn in_unit(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

impl SceneSpec {
    /// No distractors, blobs, duplicates or raster noise.
    pub fn noise_free(seed: u64) -> Self {
        SceneSpec {
            distractors: DistractorCounts {
                warehouse: 0,
                house: 0,
                parking: 0,
            },
            noise: NoiseModel::none(),
            seed,
            ..Default::default()
        }
    }

    pub fn n_farms(&self) -> usize {
        self.types.iter().map(|t| t.farms).sum()
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: SceneSpec = toml::from_str(s).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Largest farm-center offset from its cell center that still keeps
    /// barns of different farms more than twice the link distance apart.
    fn farm_jitter(&self) -> f64 {
        (self.farm_cell_m - 2.0 * self.farm_radius_m - 2.0 * self.link_distance_m) / 2.0 - 1.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        for (name, v) in [("width_m", self.width_m), ("height_m", self.height_m), ("pixel_size", self.pixel_size)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for v in [self.width_m / self.pixel_size, self.height_m / self.pixel_size] {
            if (v - v.round()).abs() > 1e-9 {
                return bad(format!("extent is not a whole number of {} m pixels", self.pixel_size));
            }
        }
        if self.farm_jitter() < 0.0 {
            return bad(format!(
                "farm cell {} m cannot hold farms of radius {} m with link distance {} m",
                self.farm_cell_m, self.farm_radius_m, self.link_distance_m
            ));
        }
        let (g0, g1) = self.barn_gap_m;
        if !(g0 > 0.0 && g0 <= g1 && g1 <= 500.0) {
            return bad(format!("barn gap range {g0}..{g1} must lie in (0, 500]"));
        }
        if self.max_barns < 2 {
            return bad("max_barns must be at least 2".into());
        }
        if self.types.is_empty() || self.n_farms() == 0 {
            return bad("no farms requested".into());
        }
        let mut seen = Vec::new();
        for t in &self.types {
            if seen.contains(&t.production_type) {
                return bad(format!("type {} listed twice", t.production_type));
            }
            seen.push(t.production_type);
            t.area_m2.validate("area_m2")?;
            t.aspect_ratio.validate("aspect_ratio")?;
            t.barns_per_farm.validate("barns_per_farm")?;
            if !in_unit(t.single_barn_share) || !(t.density >= 0.0 && t.density.is_finite()) {
                return bad(format!("type {}: share or density out of range", t.production_type));
            }
        }
        let n = &self.noise;
        for (name, (lo, hi)) in [("interior", n.interior), ("distractor_interior", n.distractor_interior)] {
            if !(in_unit(lo) && in_unit(hi) && lo <= hi) {
                return bad(format!("{name} range {lo}..{hi} outside [0, 1]"));
            }
        }
        if !in_unit(n.halo_gain) || !in_unit(n.pixel_noise) || !in_unit(n.duplicate_rate) || !(n.fp_blob_rate >= 0.0) {
            return bad("noise parameters out of range".into());
        }
        if !in_unit(self.tagged_barn_share) || !in_unit(self.mixed_tag_share) || self.capacity_noise < 0.0 {
            return bad("tag shares or capacity noise out of range".into());
        }
        let lc = &self.landcover;
        if !(lc.pixel_size_m > 0.0 && lc.patch_m >= lc.pixel_size_m && lc.margin_m >= 0.0) {
            return bad("land-cover parameters out of range".into());
        }
        if self.roads.highways == 0 && self.roads.secondary_spacing_m <= 0.0 {
            return bad("scene needs at least one road".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthBarn {
    pub id: u64,
    pub farm_id: u64,
    pub production_type: ProductionType,
    pub ring: Ring,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthFarm {
    /// Lowest barn id of the farm.
    pub id: u64,
    pub production_type: ProductionType,
    pub region: String,
    pub barn_ids: Vec<u64>,
    pub total_area_m2: f64,
    pub capacity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistractorKind {
    Warehouse,
    House,
    Parking,
}

impl DistractorKind {
    pub fn name(self) -> &'static str {
        match self {
            DistractorKind::Warehouse => "warehouse",
            DistractorKind::House => "house",
            DistractorKind::Parking => "parking",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [DistractorKind::Warehouse, DistractorKind::House, DistractorKind::Parking]
            .into_iter()
            .find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Distractor {
    pub id: u64,
    pub kind: DistractorKind,
    pub ring: Ring,
}

/// One probability chip and its truth mask over the same grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Chip {
    pub name: String,
    pub prob: Raster,
    pub truth: BinaryMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub spec: SceneSpec,
    pub barns: Vec<TruthBarn>,
    pub farms: Vec<TruthFarm>,
    pub distractors: Vec<Distractor>,
    pub blobs: Vec<Ring>,
    pub roads: Vec<TaggedRoad>,
    pub buildings: Vec<TaggedFootprint>,
    pub landcover: CategoryRaster,
    pub legend: Vec<(u16, String)>,
    pub regions: Vec<(String, Ring)>,
    pub chips: Vec<Chip>,
}

impl GroundTruth {
    pub fn land_cover(&self) -> Result<LandCover> {
        LandCover::new(self.landcover.clone(), self.legend.clone())
    }

    /// Farm counts and summed capacity per region.
    pub fn reference(&self) -> BTreeMap<String, Reference> {
        let mut out: BTreeMap<String, (f64, Vec<f64>)> =
            self.regions.iter().map(|(n, _)| (n.clone(), (0.0, Vec::new()))).collect();
        for f in &self.farms {
            let e = out.entry(f.region.clone()).or_default();
            e.0 += 1.0;
            e.1.push(f.capacity);
        }
        out.into_iter()
            .map(|(k, (n, mut caps))| {
                caps.sort_by(f64::total_cmp);
                let population = caps.iter().sum();
                (
                    k,
                    Reference {
                        farms: Some(n),
                        population: Some(population),
                    },
                )
            })
            .collect()
    }

    pub fn reference_csv(&self) -> String {
        let mut s = String::from("state,farms,population\n");
        for (k, r) in self.reference() {
            let _ = writeln!(s, "{k},{},{}", r.farms.unwrap_or(0.0), r.population.unwrap_or(0.0));
        }
        s
    }

    pub fn farms_csv(&self) -> String {
        let mut s = String::from("id,type,region,n_barns,total_area_m2,capacity,barn_ids\n");
        for f in &self.farms {
            let ids: Vec<String> = f.barn_ids.iter().map(u64::to_string).collect();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                f.id,
                f.production_type,
                f.region,
                f.barn_ids.len(),
                f.total_area_m2,
                f.capacity,
                ids.join(";")
            );
        }
        s
    }

    /// Region whose rectangle contains `p`, first match wins.
    pub fn region_of(&self, p: Point) -> Option<&str> {
        self.regions.iter().find(|(_, r)| point_in_ring(p, r)).map(|(n, _)| n.as_str())
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

fn densify(a: Point, b: Point) -> Vec<Point> {
    let n = (a.distance(b) / ROAD_STEP).ceil().max(1.0) as usize;
    (0..=n).map(|i| a + (b - a) * (i as f64 / n as f64)).collect()
}

/// Clips the infinite line through `p` with direction `d` to `b`.
fn clip_line(p: Point, d: Point, b: &BBox) -> Option<(Point, Point)> {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for (pc, dc, lo, hi) in [(p.x, d.x, b.min.x, b.max.x), (p.y, d.y, b.min.y, b.max.y)] {
        if dc.abs() < 1e-12 {
            if pc < lo || pc > hi {
                return None;
            }
            continue;
        }
        let (a, c) = ((lo - pc) / dc, (hi - pc) / dc);
        t0 = t0.max(a.min(c));
        t1 = t1.min(a.max(c));
    }
    (t0 < t1).then(|| (p + d * t0, p + d * t1))
}

fn lumpy_ellipse(rng: &mut impl Rng, center: Point, area: f64, aspect: f64, angle: f64) -> Result<Ring> {
    let a = (area * aspect / std::f64::consts::PI).sqrt();
    let b = a / aspect;
    let n = 20;
    let pts = (0..n)
        .map(|i| {
            let t = i as f64 / n as f64 * std::f64::consts::TAU;
            let k = rng.gen_range(0.88..1.12);
            Point::new(a * t.cos() * k, b * t.sin() * k).rotated(angle) + center
        })
        .collect();
    Ring::new(pts)
}

fn half_diagonal(r: &Ring) -> f64 {
    let b = r.bbox();
    0.5 * b.min.distance(b.max)
}

struct Town {
    center: Point,
    radius: f64,
}

/// Object occupancy used to draw probability chips.
struct Painted {
    ring: Ring,
    p: f64,
    truth: bool,
}

struct Scene<'a> {
    spec: &'a SceneSpec,
    rng: ChaCha8Rng,
    extent: BBox,
    roads: Vec<TaggedRoad>,
    towns: Vec<Town>,
    barns: Vec<TruthBarn>,
    farm_centers: Vec<Point>,
    farms: Vec<TruthFarm>,
    distractors: Vec<Distractor>,
    blobs: Vec<Ring>,
    /// Barns, distractors and blobs, for clearance checks.
    occupied: SpatialIndex,
    occupied_rings: Vec<Ring>,
    barn_index: SpatialIndex,
}

impl<'a> Scene<'a> {
    fn new(spec: &'a SceneSpec) -> Self {
        Scene {
            spec,
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            extent: BBox {
                min: Point::new(0.0, 0.0),
                max: Point::new(spec.width_m, spec.height_m),
            },
            roads: Vec::new(),
            towns: Vec::new(),
            barns: Vec::new(),
            farm_centers: Vec::new(),
            farms: Vec::new(),
            distractors: Vec::new(),
            blobs: Vec::new(),
            occupied: SpatialIndex::new(250.0),
            occupied_rings: Vec::new(),
            barn_index: SpatialIndex::new(250.0),
        }
    }

    fn road_index(&self, pred: impl Fn(&str) -> bool) -> SegmentIndex {
        SegmentIndex::from_polylines(self.roads.iter().filter(|r| pred(&r.tag)).map(|r| r.line.as_slice()), 250.0)
    }

    fn random_point(&mut self, margin: f64) -> Point {
        Point::new(
            self.rng.gen_range(margin..self.spec.width_m - margin),
            self.rng.gen_range(margin..self.spec.height_m - margin),
        )
    }

    fn add_road(&mut self, a: Point, b: Point, tag: &str) -> Result<()> {
        self.roads.push(TaggedRoad::new(densify(a, b), tag)?);
        Ok(())
    }

    fn roads_and_towns(&mut self) -> Result<()> {
        let rp = self.spec.roads;
        let big = self.extent.expanded(self.spec.landcover.margin_m);
        let (w, h) = (self.spec.width_m, self.spec.height_m);
        let mut highways = Vec::new();
        for i in 0..rp.highways {
            let p = Point::new(self.rng.gen_range(0.2 * w..0.8 * w), self.rng.gen_range(0.2 * h..0.8 * h));
            let ang: f64 = self.rng.gen_range(0.0..std::f64::consts::PI);
            let d = Point::new(ang.cos(), ang.sin());
            if let Some((a, b)) = clip_line(p, d, &big) {
                let tag = ["motorway", "trunk", "primary"][i % 3];
                self.add_road(a, b, tag)?;
                highways.push((a, b));
            }
        }
        if rp.secondary_spacing_m > 0.0 {
            let s = rp.secondary_spacing_m;
            let jit = 0.1 * s;
            let mut x = s / 2.0;
            while x < w {
                let xx = x + self.rng.gen_range(-jit..jit);
                self.add_road(Point::new(xx, big.min.y), Point::new(xx, big.max.y), "secondary")?;
                x += s;
            }
            let mut y = s / 2.0;
            while y < h {
                let yy = y + self.rng.gen_range(-jit..jit);
                self.add_road(Point::new(big.min.x, yy), Point::new(big.max.x, yy), "secondary")?;
                y += s;
            }
        }
        let r = rp.town_radius_m;
        for _ in 0..rp.towns {
            let center = match highways.choose(&mut self.rng) {
                Some(&(a, b)) => {
                    let mut c = None;
                    for _ in 0..50 {
                        let p = a + (b - a) * self.rng.gen_range(0.0..1.0);
                        if self.extent.expanded(-(r + 1000.0)).contains(p) {
                            c = Some(p);
                            break;
                        }
                    }
                    match c {
                        Some(c) => c,
                        None => self.random_point(r + 1000.0),
                    }
                }
                None => self.random_point(r + 1000.0),
            };
            for k in [-1.0, 0.0, 1.0] {
                let tag = if k == 0.0 { "tertiary" } else { "residential" };
                let o = k * r / 2.0;
                self.add_road(Point::new(center.x - r, center.y + o), Point::new(center.x + r, center.y + o), tag)?;
                self.add_road(Point::new(center.x + o, center.y - r), Point::new(center.x + o, center.y + r), tag)?;
            }
            self.add_road(center, center + Point::new(r * 0.4, r * 0.3), "motorway_link")?;
            self.towns.push(Town { center, radius: r });
        }
        Ok(())
    }

    /// Barn rings of one farm centered on the origin, or `None` when the
    /// layout exceeds the farm radius.
    fn farm_layout(&mut self, t: &TypeParams) -> Result<Option<Vec<Ring>>> {
        let spec = self.spec;
        let n = if self.rng.gen_bool(t.single_barn_share) {
            1
        } else {
            (t.barns_per_farm.sample(&mut self.rng).round() as usize).clamp(2, spec.max_barns)
        };
        let angle = self.rng.gen_range(0.0..std::f64::consts::PI);
        let per_row = if n > 4 { n.div_ceil(2) } else { n };
        let dims: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let area = t.area_m2.sample(&mut self.rng).clamp(100.0, 10_000.0);
                let aspect = t.aspect_ratio.sample(&mut self.rng).clamp(1.05, 6.0);
                ((area * aspect).sqrt(), (area / aspect).sqrt())
            })
            .collect();
        // Rows run across the long axis; barns in a row sit side by side.
        let mut local = Vec::with_capacity(n);
        let mut v = 0.0;
        for row in dims.chunks(per_row) {
            let row_len = row.iter().map(|d| d.0).fold(0.0, f64::max);
            let mut u = 0.0;
            for (i, &(len, wid)) in row.iter().enumerate() {
                if i > 0 {
                    u += uniform(&mut self.rng, spec.barn_gap_m) + wid / 2.0;
                }
                local.push((Point::new(v + row_len / 2.0, u), len, wid));
                u += wid / 2.0;
            }
            v += row_len + uniform(&mut self.rng, spec.barn_gap_m);
        }
        let bb = BBox::from_points(local.iter().map(|(p, _, _)| p)).expect("farm has barns");
        let mid = Point::new((bb.min.x + bb.max.x) / 2.0, (bb.min.y + bb.max.y) / 2.0);
        let mut rings = Vec::with_capacity(n);
        for (p, len, wid) in local {
            let c = (p - mid).rotated(angle);
            rings.push(Ring::oriented_rectangle(c, len, wid, angle)?);
        }
        let radius = rings
            .iter()
            .flat_map(|r| r.vertices().iter())
            .map(|p| p.norm())
            .fold(0.0, f64::max);
        Ok((radius <= spec.farm_radius_m).then_some(rings))
    }

    fn farms(&mut self) -> Result<()> {
        let spec = self.spec;
        let cell = spec.farm_cell_m;
        let (nx, ny) = ((spec.width_m / cell).floor() as usize, (spec.height_m / cell).floor() as usize);
        let mut cells: Vec<Point> = (0..ny)
            .flat_map(|j| (0..nx).map(move |i| Point::new((i as f64 + 0.5) * cell, (j as f64 + 0.5) * cell)))
            .filter(|c| self.towns.iter().all(|t| t.center.distance(*c) > t.radius + spec.farm_radius_m + 1000.0))
            .collect();
        cells.shuffle(&mut self.rng);
        let mut order: Vec<usize> = spec.types.iter().enumerate().flat_map(|(i, t)| std::iter::repeat_n(i, t.farms)).collect();
        order.shuffle(&mut self.rng);
        let roads = self.road_index(|_| true);
        let jitter = spec.farm_jitter();
        let mut cells = cells.into_iter();
        let mut next_barn = 1u64;
        for ti in order {
            let t = spec.types[ti].clone();
            let placed = 'search: loop {
                let Some(c) = cells.next() else {
                    return Err(Error::PlacementOverflow {
                        what: format!("{} farms", spec.n_farms()),
                    });
                };
                for _ in 0..12 {
                    let Some(local) = self.farm_layout(&t)? else { continue };
                    let center = c + Point::new(
                        self.rng.gen_range(-jitter..=jitter),
                        self.rng.gen_range(-jitter..=jitter),
                    );
                    let rings: Vec<Ring> = local.iter().map(|r| r.translated(center)).collect();
                    let clear = rings.iter().all(|r| {
                        let d = centroid(r).ok().and_then(|p| roads.nearest_distance(p)).unwrap_or(f64::INFINITY);
                        d - half_diagonal(r) >= 50.0
                    });
                    if clear {
                        break 'search (center, rings);
                    }
                }
            };
            let (center, rings) = placed;
            let farm_id = next_barn;
            let mut ids = Vec::new();
            let mut areas = Vec::new();
            for ring in rings {
                let id = next_barn;
                next_barn += 1;
                ids.push(id);
                areas.push(polygon_area(&ring)?);
                self.barn_index.insert(ring.bbox());
                self.occupied.insert(ring.bbox());
                self.occupied_rings.push(ring.clone());
                self.barns.push(TruthBarn {
                    id,
                    farm_id,
                    production_type: t.production_type,
                    ring,
                });
            }
            areas.sort_by(f64::total_cmp);
            let total: f64 = areas.iter().sum();
            let z: f64 = StandardNormal.sample(&mut self.rng);
            let region = if center.x < spec.width_m / 2.0 { "west" } else { "east" };
            self.farms.push(TruthFarm {
                id: farm_id,
                production_type: t.production_type,
                region: region.into(),
                barn_ids: ids,
                total_area_m2: total,
                capacity: t.density * total * (spec.capacity_noise * z).exp(),
            });
            self.farm_centers.push(center);
        }
        Ok(())
    }

    /// Whether `ring` keeps `gap` meters from every placed object and
    /// `barn_gap` from every barn, by bounding boxes.
    fn is_clear(&self, ring: &Ring, gap: f64, barn_gap: f64) -> bool {
        let b = ring.bbox();
        self.occupied.query(&b.expanded(gap)).is_empty() && self.barn_index.query(&b.expanded(barn_gap)).is_empty()
    }

    fn occupy(&mut self, ring: &Ring) {
        self.occupied.insert(ring.bbox());
        self.occupied_rings.push(ring.clone());
    }

    fn point_in_town(&mut self) -> Point {
        let i = self.rng.gen_range(0..self.towns.len());
        let (c, r) = (self.towns[i].center, self.towns[i].radius);
        let rad = r * self.rng.gen_range(0.0f64..1.0).sqrt();
        let a = self.rng.gen_range(0.0..std::f64::consts::TAU);
        c + Point::new(rad * a.cos(), rad * a.sin())
    }

    fn distractors(&mut self) -> Result<()> {
        let counts = self.spec.distractors;
        let roads = self.road_index(|_| true);
        let kinds = [
            (DistractorKind::Warehouse, counts.warehouse),
            (DistractorKind::House, counts.house),
            (DistractorKind::Parking, counts.parking),
        ];
        let mut next = 1u64;
        for (kind, count) in kinds {
            for _ in 0..count {
                let mut placed = None;
                for _ in 0..500 {
                    let (area, aspect, town_share) = match kind {
                        DistractorKind::Warehouse => (log_uniform(&mut self.rng, 1500.0, 8000.0), self.rng.gen_range(1.2..3.0), 0.8),
                        DistractorKind::House => (self.rng.gen_range(80.0..250.0), self.rng.gen_range(1.1..2.0), 0.5),
                        DistractorKind::Parking => (self.rng.gen_range(800.0..5000.0), self.rng.gen_range(1.0..2.5), 0.9),
                    };
                    let in_town = !self.towns.is_empty() && self.rng.gen_bool(town_share);
                    let c = if in_town { self.point_in_town() } else { self.random_point(200.0) };
                    let angle = if in_town { 0.0 } else { self.rng.gen_range(0.0..std::f64::consts::PI) };
                    let ring = Ring::oriented_rectangle(c, (area * aspect).sqrt(), (area / aspect).sqrt(), angle)?;
                    let road_gap = roads.nearest_distance(c).unwrap_or(f64::INFINITY) - half_diagonal(&ring);
                    if self.extent.expanded(-100.0).contains(c) && road_gap >= 8.0 && self.is_clear(&ring, 30.0, 100.0) {
                        placed = Some(ring);
                        break;
                    }
                }
                let ring = placed.ok_or_else(|| Error::PlacementOverflow {
                    what: format!("{} distractors", kind.name()),
                })?;
                self.occupy(&ring);
                self.distractors.push(Distractor { id: next, kind, ring });
                next += 1;
            }
        }
        Ok(())
    }

    fn blobs(&mut self, lc: &CategoryRaster) -> Result<()> {
        let n = (self.spec.noise.fp_blob_rate * self.barns.len() as f64).round() as usize;
        let highways: Vec<Vec<Point>> = self
            .roads
            .iter()
            .filter(|r| matches!(r.tag.as_str(), "motorway" | "trunk" | "primary"))
            .map(|r| r.line.clone())
            .collect();
        let inner = self.extent.expanded(-100.0);
        for _ in 0..n {
            let mut placed = None;
            for _ in 0..2000 {
                let u: f64 = self.rng.gen();
                let ring = if u < 0.2 && !highways.is_empty() {
                    let line = highways.choose(&mut self.rng).expect("non-empty");
                    let k = self.rng.gen_range(0..line.len() - 1);
                    let (a, b) = (line[k], line[k + 1]);
                    let c = a + (b - a) * self.rng.gen_range(0.0..1.0);
                    let angle = (b.y - a.y).atan2(b.x - a.x);
                    let len = self.rng.gen_range(40.0..150.0);
                    let wid = self.rng.gen_range(8.0..25.0);
                    lumpy_ellipse(&mut self.rng, c, len * wid * std::f64::consts::FRAC_PI_4, len / wid, angle)?
                } else {
                    let c = self.random_point(100.0);
                    let code = lc.sample(c).unwrap_or(0);
                    let wet_or_wooded = matches!(code, 11 | 41 | 42 | 90);
                    let developed = (21..=24).contains(&code);
                    if (u < 0.6 && !wet_or_wooded) || developed {
                        continue;
                    }
                    let area = log_uniform(&mut self.rng, 150.0, if u < 0.6 { 6000.0 } else { 4000.0 });
                    let aspect = self.rng.gen_range(1.0..if u < 0.6 { 2.5 } else { 3.0 });
                    let angle = self.rng.gen_range(0.0..std::f64::consts::PI);
                    lumpy_ellipse(&mut self.rng, c, area, aspect, angle)?
                };
                let bb = ring.bbox();
                if inner.contains(bb.min) && inner.contains(bb.max) && self.is_clear(&ring, 30.0, 30.0) {
                    placed = Some(ring);
                    break;
                }
            }
            let ring = placed.ok_or_else(|| Error::PlacementOverflow {
                what: "false-positive blobs".into(),
            })?;
            self.occupy(&ring);
            self.blobs.push(ring);
        }
        Ok(())
    }

    fn landcover(&mut self) -> Result<CategoryRaster> {
        let p = self.spec.landcover;
        let big = self.extent.expanded(p.margin_m);
        let ps = p.pixel_size_m;
        let (w, h) = (
            ((big.max.x - big.min.x) / ps).ceil() as usize,
            ((big.max.y - big.min.y) / ps).ceil() as usize,
        );
        let spec = GridSpec {
            width: w,
            height: h,
            origin: Point::new(big.min.x, big.max.y),
            pixel_size: ps,
        };
        let per_patch = (p.patch_m / ps).round().max(1.0) as usize;
        let (pw, ph) = (w.div_ceil(per_patch), h.div_ceil(per_patch));
        let total: f64 = PATCH_WEIGHTS.iter().map(|x| x.1).sum();
        let patches: Vec<u16> = (0..pw * ph)
            .map(|_| {
                let mut u = self.rng.gen_range(0.0..total);
                for &(code, wt) in &PATCH_WEIGHTS {
                    if u < wt {
                        return code;
                    }
                    u -= wt;
                }
                82
            })
            .collect();
        let mut g = Grid::filled(spec, 0u16);
        for r in 0..h {
            for c in 0..w {
                g.set(c, r, patches[(r / per_patch) * pw + c / per_patch]);
            }
        }
        let disc = |g: &mut Grid<u16>, center: Point, radius: f64, mut f: Box<dyn FnMut(f64, u16) -> u16 + '_>| {
            let (c0, r0) = g.spec.to_grid(Point::new(center.x - radius, center.y + radius));
            let (c1, r1) = g.spec.to_grid(Point::new(center.x + radius, center.y - radius));
            for r in r0.floor().max(0.0) as usize..(r1.ceil().max(0.0) as usize).min(h) {
                for c in c0.floor().max(0.0) as usize..(c1.ceil().max(0.0) as usize).min(w) {
                    let d = g.spec.pixel_center(c, r).distance(center);
                    if d <= radius {
                        let v = f(d, g.get(c, r));
                        g.set(c, r, v);
                    }
                }
            }
        };
        for &fc in &self.farm_centers {
            disc(&mut g, fc, 400.0, Box::new(|_, v| if v == 81 || v == 82 { v } else { 82 }));
        }
        for t in &self.towns {
            let rad = t.radius;
            disc(
                &mut g,
                t.center,
                1.3 * rad,
                Box::new(move |d, _| match d / rad {
                    x if x < 0.4 => 24,
                    x if x < 0.7 => 23,
                    x if x < 1.0 => 22,
                    _ => 21,
                }),
            );
        }
        for road in &self.roads {
            for seg in road.line.windows(2) {
                let n = (seg[0].distance(seg[1]) / 10.0).ceil().max(1.0) as usize;
                for i in 0..=n {
                    let q = seg[0] + (seg[1] - seg[0]) * (i as f64 / n as f64);
                    let (c, r) = g.spec.to_grid(q);
                    if c >= 0.0 && r >= 0.0 && (c as usize) < w && (r as usize) < h {
                        let v = g.get(c as usize, r as usize);
                        if !(22..=24).contains(&v) {
                            g.set(c as usize, r as usize, 21);
                        }
                    }
                }
            }
        }
        let structures = self
            .barns
            .iter()
            .map(|b| (&b.ring, 22u16))
            .chain(self.distractors.iter().map(|d| {
                (
                    &d.ring,
                    match d.kind {
                        DistractorKind::House => 22,
                        _ => 23,
                    },
                )
            }));
        for (ring, code) in structures {
            let bb = ring.bbox();
            let (c0, r0) = g.spec.to_grid(Point::new(bb.min.x, bb.max.y));
            let (c1, r1) = g.spec.to_grid(Point::new(bb.max.x, bb.min.y));
            for r in r0.floor() as usize..=(r1.floor() as usize).min(h - 1) {
                for c in c0.floor() as usize..=(c1.floor() as usize).min(w - 1) {
                    if g.get(c, r) < code || !(21..=24).contains(&g.get(c, r)) {
                        g.set(c, r, code);
                    }
                }
            }
        }
        Ok(g)
    }

    fn buildings(&mut self) -> Vec<TaggedFootprint> {
        let spec = self.spec;
        let mut out = Vec::new();
        for b in &self.barns {
            let u: f64 = self.rng.gen();
            let tag = if u < spec.tagged_barn_share {
                Some(TAGS_RETAIN.choose(&mut self.rng).expect("non-empty").to_string())
            } else if u < spec.tagged_barn_share + spec.mixed_tag_share {
                Some("industrial;farm_auxiliary".to_string())
            } else {
                None
            };
            if let Some(tag) = tag {
                out.push(TaggedFootprint { ring: b.ring.clone(), tag });
            }
        }
        for d in &self.distractors {
            let u: f64 = self.rng.gen();
            let tag = match d.kind {
                DistractorKind::Warehouse if u < 0.4 => Some("warehouse"),
                DistractorKind::Warehouse if u < 0.8 => Some("industrial"),
                DistractorKind::House if u < 0.4 => Some("house"),
                _ => None,
            };
            if let Some(tag) = tag {
                out.push(TaggedFootprint {
                    ring: d.ring.clone(),
                    tag: tag.into(),
                });
            }
        }
        out
    }

    fn chip_grid(&self, b: &BBox) -> Option<GridSpec> {
        let ps = self.spec.pixel_size;
        let (ncols, nrows) = (
            (self.spec.width_m / ps).round() as i64,
            (self.spec.height_m / ps).round() as i64,
        );
        let c0 = ((b.min.x / ps).floor() as i64).max(0);
        let c1 = ((b.max.x / ps).ceil() as i64).min(ncols);
        let r0 = (((self.spec.height_m - b.max.y) / ps).floor() as i64).max(0);
        let r1 = (((self.spec.height_m - b.min.y) / ps).ceil() as i64).min(nrows);
        (c1 > c0 && r1 > r0).then(|| GridSpec {
            width: (c1 - c0) as usize,
            height: (r1 - r0) as usize,
            origin: Point::new(c0 as f64 * ps, self.spec.height_m - r0 as f64 * ps),
            pixel_size: ps,
        })
    }

    fn chips(&mut self) -> Vec<Chip> {
        let spec = self.spec;
        let nm = spec.noise;
        let mut objects = Vec::new();
        for b in &self.barns {
            let p = uniform(&mut self.rng, nm.interior);
            objects.push(Painted {
                ring: b.ring.clone(),
                p,
                truth: true,
            });
        }
        for ring in self.distractors.iter().map(|d| &d.ring).chain(self.blobs.iter()) {
            let p = uniform(&mut self.rng, nm.distractor_interior);
            objects.push(Painted {
                ring: ring.clone(),
                p,
                truth: false,
            });
        }
        let index = SpatialIndex::from_boxes(250.0, objects.iter().map(|o| o.ring.bbox()));

        let mut windows: Vec<BBox> = Vec::new();
        let mut by_farm: BTreeMap<u64, BBox> = BTreeMap::new();
        for b in &self.barns {
            let bb = b.ring.bbox();
            by_farm
                .entry(b.farm_id)
                .and_modify(|x| *x = BBox::from_points(&[x.min, x.max, bb.min, bb.max]).expect("points"))
                .or_insert(bb);
        }
        windows.extend(by_farm.values().map(|b| b.expanded(20.0)));
        windows.extend(self.distractors.iter().map(|d| d.ring.bbox().expanded(15.0)));
        windows.extend(self.blobs.iter().map(|r| r.bbox().expanded(15.0)));
        let farm_windows: Vec<BBox> = by_farm.values().map(|b| b.expanded(20.0)).collect();
        for fw in farm_windows {
            if self.rng.gen_bool(nm.duplicate_rate) {
                let (dx, dy) = ((fw.max.x - fw.min.x) / 2.0, (fw.max.y - fw.min.y) / 3.0);
                windows.push(BBox {
                    min: fw.min + Point::new(dx, dy),
                    max: fw.max + Point::new(dx, dy),
                });
            }
        }

        let mut chips = Vec::new();
        for (k, w) in windows.iter().enumerate() {
            let Some(gs) = self.chip_grid(w) else { continue };
            let chip_seed = self.rng.gen::<u64>();
            chips.push(paint_chip(format!("chip_{k:05}"), gs, &objects, &index, &nm, chip_seed));
        }
        chips
    }
}

fn paint_chip(name: String, gs: GridSpec, objects: &[Painted], index: &SpatialIndex, nm: &NoiseModel, seed: u64) -> Chip {
    let (w, h) = (gs.width, gs.height);
    let mut obj = vec![0.0f64; w * h];
    let mut truth = vec![0u8; w * h];
    for i in index.query(&gs.bbox()) {
        let o = &objects[i];
        let bb = o.ring.bbox();
        let (c0, r0) = gs.to_grid(Point::new(bb.min.x, bb.max.y));
        let (c1, r1) = gs.to_grid(Point::new(bb.max.x, bb.min.y));
        let (c0, r0) = (c0.floor().max(0.0) as usize, r0.floor().max(0.0) as usize);
        let (c1, r1) = ((c1.ceil().max(0.0) as usize).min(w), (r1.ceil().max(0.0) as usize).min(h));
        for r in r0..r1 {
            for c in c0..c1 {
                if point_in_ring(gs.pixel_center(c, r), &o.ring) {
                    let k = r * w + c;
                    obj[k] = obj[k].max(o.p);
                    if o.truth {
                        truth[k] = 1;
                    }
                }
            }
        }
    }
    let occupied: Vec<f64> = obj.iter().map(|&p| if p > 0.0 { 1.0 } else { 0.0 }).collect();
    let halo = if nm.blur_px > 0 && nm.halo_gain > 0.0 {
        box_mean(&occupied, w, h, nm.blur_px)
    } else {
        vec![0.0; w * h]
    };
    let obj = if nm.dilation_px > 0 { max_filter(&obj, w, h, nm.dilation_px) } else { obj };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..w * h)
        .map(|k| {
            let mut p = obj[k].max(nm.halo_gain * halo[k]);
            if nm.pixel_noise > 0.0 {
                p += rng.gen_range(-nm.pixel_noise..nm.pixel_noise);
            }
            p.clamp(0.0, 1.0) as f32
        })
        .collect();
    Chip {
        name,
        prob: Grid { spec: gs, values },
        truth: Grid { spec: gs, values: truth },
    }
}

/// Mean over the `(2r+1)²` window, clipped at the edges, via an integral
/// image.
fn box_mean(v: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    let mut s = vec![0.0; (w + 1) * (h + 1)];
    for y in 0..h {
        for x in 0..w {
            s[(y + 1) * (w + 1) + x + 1] = v[y * w + x] + s[y * (w + 1) + x + 1] + s[(y + 1) * (w + 1) + x] - s[y * (w + 1) + x];
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (x0, x1, y0, y1) = (x.saturating_sub(r), (x + r + 1).min(w), y.saturating_sub(r), (y + r + 1).min(h));
            let sum = s[y1 * (w + 1) + x1] - s[y0 * (w + 1) + x1] - s[y1 * (w + 1) + x0] + s[y0 * (w + 1) + x0];
            out[y * w + x] = sum / ((x1 - x0) * (y1 - y0)) as f64;
        }
    }
    out
}

fn max_filter(v: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut m = 0.0f64;
            for yy in y.saturating_sub(r)..(y + r + 1).min(h) {
                for xx in x.saturating_sub(r)..(x + r + 1).min(w) {
                    m = m.max(v[yy * w + xx]);
                }
            }
            out[y * w + x] = m;
        }
    }
    out
}

/// Builds a scene from a [`SceneSpec`]. The output depends only on `spec`.
pub fn generate_scene(spec: &SceneSpec) -> Result<GroundTruth> {
    spec.validate()?;
    let mut s = Scene::new(spec);
    s.roads_and_towns()?;
    s.farms()?;
    s.distractors()?;
    let landcover = s.landcover()?;
    s.blobs(&landcover)?;
    let buildings = s.buildings();
    let chips = s.chips();
    let (w, h) = (spec.width_m, spec.height_m);
    let regions = vec![
        ("east".to_string(), Ring::rectangle(Point::new(w / 2.0, 0.0), w / 2.0, h)?),
        ("west".to_string(), Ring::rectangle(Point::new(0.0, 0.0), w / 2.0, h)?),
    ];
    Ok(GroundTruth {
        spec: spec.clone(),
        barns: s.barns,
        farms: s.farms,
        distractors: s.distractors,
        blobs: s.blobs,
        roads: s.roads,
        buildings,
        landcover,
        legend: LANDCOVER_LEGEND.iter().map(|&(c, n)| (c, n.to_string())).collect(),
        regions,
        chips,
    })
}

/// File names inside an exported scene directory.
pub mod files {
    pub const SPEC: &str = "spec.json";
    pub const PROB_DIR: &str = "prob";
    pub const TRUTH_DIR: &str = "truth";
    pub const LANDCOVER: &str = "landcover.bgrd";
    pub const LEGEND: &str = "landcover_legend.txt";
    pub const BARNS: &str = "barns.geojson";
    pub const FARMS: &str = "farms.csv";
    pub const DISTRACTORS: &str = "distractors.geojson";
    pub const BLOBS: &str = "blobs.geojson";
    pub const ROADS: &str = "roads.geojson";
    pub const BUILDINGS: &str = "buildings.geojson";
    pub const REGIONS: &str = "regions.geojson";
    pub const REFERENCE: &str = "reference.csv";
    pub const RULES: &str = "rules.toml";
}

pub fn roads_collection(roads: &[TaggedRoad]) -> FeatureCollection {
    FeatureCollection::new(
        roads
            .iter()
            .map(|r| Feature::new(Geometry::LineString(r.line.clone())).with("highway", r.tag.as_str()))
            .collect(),
    )
}

pub fn buildings_collection(b: &[TaggedFootprint]) -> FeatureCollection {
    FeatureCollection::new(
        b.iter()
            .map(|f| Feature::new(Geometry::Polygon(f.ring.clone())).with("building", f.tag.as_str()))
            .collect(),
    )
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the scene into an existing directory.
pub fn export_scene(gt: &GroundTruth, dir: &Path) -> Result<()> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "scene directory does not exist"),
        ));
    }
    let spec = serde_json::to_string_pretty(&gt.spec).expect("spec serializes");
    write_text(&dir.join(files::SPEC), &spec)?;
    for sub in [files::PROB_DIR, files::TRUTH_DIR] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    for c in &gt.chips {
        let file = format!("{}.bgrd", c.name);
        write_real(&dir.join(files::PROB_DIR).join(&file), &c.prob)?;
        write_category(&dir.join(files::TRUTH_DIR).join(&file), &mask_to_category(&c.truth))?;
    }
    write_category(&dir.join(files::LANDCOVER), &gt.landcover)?;
    write_text(&dir.join(files::LEGEND), &format_legend(&gt.legend))?;
    let barns = FeatureCollection::new(
        gt.barns
            .iter()
            .map(|b| {
                Feature::new(Geometry::Polygon(b.ring.clone()))
                    .with("id", b.id)
                    .with("farm_id", b.farm_id)
                    .with("type", b.production_type.name())
            })
            .collect(),
    );
    barns.write(&dir.join(files::BARNS))?;
    write_text(&dir.join(files::FARMS), &gt.farms_csv())?;
    FeatureCollection::new(
        gt.distractors
            .iter()
            .map(|d| Feature::new(Geometry::Polygon(d.ring.clone())).with("id", d.id).with("kind", d.kind.name()))
            .collect(),
    )
    .write(&dir.join(files::DISTRACTORS))?;
    FeatureCollection::new(gt.blobs.iter().map(|r| Feature::new(Geometry::Polygon(r.clone()))).collect())
        .write(&dir.join(files::BLOBS))?;
    roads_collection(&gt.roads).write(&dir.join(files::ROADS))?;
    buildings_collection(&gt.buildings).write(&dir.join(files::BUILDINGS))?;
    FeatureCollection::new(
        gt.regions
            .iter()
            .map(|(n, r)| Feature::new(Geometry::Polygon(r.clone())).with("name", n.as_str()))
            .collect(),
    )
    .write(&dir.join(files::REGIONS))?;
    write_text(&dir.join(files::REFERENCE), &gt.reference_csv())?;
    write_text(&dir.join(files::RULES), &FilterRules::default().to_toml())
}

pub fn read_roads(path: &Path) -> Result<Vec<TaggedRoad>> {
    FeatureCollection::read(path)?
        .features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let line = f.line().ok_or_else(|| Error::parse(path, format!("feature {i}: expected LineString")))?;
            TaggedRoad::new(line.to_vec(), f.str_prop("highway").unwrap_or_default())
        })
        .collect()
}

pub fn read_buildings(path: &Path) -> Result<Vec<TaggedFootprint>> {
    FeatureCollection::read(path)?
        .features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let ring = f.ring().ok_or_else(|| Error::parse(path, format!("feature {i}: expected Polygon")))?;
            Ok(TaggedFootprint {
                ring: ring.clone(),
                tag: f.str_prop("building").unwrap_or_default().to_string(),
            })
        })
        .collect()
}

fn polygons(path: &Path) -> Result<Vec<Feature>> {
    let fc = FeatureCollection::read(path)?;
    for (i, f) in fc.features.iter().enumerate() {
        if f.ring().is_none() {
            return Err(Error::parse(path, format!("feature {i}: expected Polygon")));
        }
    }
    Ok(fc.features)
}

fn parse_farms(path: &Path, text: &str) -> Result<Vec<TruthFarm>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().skip(1).filter(|l| !l.trim().is_empty()).enumerate() {
        let err = |m: &str| Error::parse(path, format!("line {}: {m}", k + 2));
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != 7 {
            return Err(err("expected 7 columns"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err("bad number"));
        let barn_ids = c[6]
            .split(';')
            .map(|s| s.parse::<u64>().map_err(|_| err("bad barn id")))
            .collect::<Result<Vec<_>>>()?;
        out.push(TruthFarm {
            id: c[0].parse().map_err(|_| err("bad id"))?,
            production_type: c[1].parse().map_err(|_| err("bad type"))?,
            region: c[2].to_string(),
            barn_ids,
            total_area_m2: num(c[4])?,
            capacity: num(c[5])?,
        });
    }
    Ok(out)
}

/// Reads a directory written by [`export_scene`].
pub fn import_scene(dir: &Path) -> Result<GroundTruth> {
    let read = |name: &str| {
        let p = dir.join(name);
        fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
    };
    let spec: SceneSpec = serde_json::from_str(&read(files::SPEC)?).map_err(|e| Error::parse(dir.join(files::SPEC), e))?;
    let prob_dir = dir.join(files::PROB_DIR);
    let mut names: Vec<String> = fs::read_dir(&prob_dir)
        .map_err(|e| Error::io(&prob_dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".bgrd")).map(str::to_string))
        .collect();
    names.sort();
    let chips = names
        .into_iter()
        .map(|name| {
            let file = format!("{name}.bgrd");
            Ok(Chip {
                prob: read_real(&prob_dir.join(&file))?,
                truth: category_to_mask(&read_category(&dir.join(files::TRUTH_DIR).join(&file))?)?,
                name,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let barns_path = dir.join(files::BARNS);
    let barns = polygons(&barns_path)?
        .into_iter()
        .map(|f| {
            let get = |k: &str| f.u64_prop(k).ok_or_else(|| Error::parse(&barns_path, format!("barn missing {k}")));
            Ok(TruthBarn {
                id: get("id")?,
                farm_id: get("farm_id")?,
                production_type: f
                    .str_prop("type")
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::parse(&barns_path, "barn missing type"))?,
                ring: f.ring().expect("checked").clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let dpath = dir.join(files::DISTRACTORS);
    let distractors = polygons(&dpath)?
        .into_iter()
        .map(|f| {
            Ok(Distractor {
                id: f.u64_prop("id").ok_or_else(|| Error::parse(&dpath, "distractor missing id"))?,
                kind: f
                    .str_prop("kind")
                    .and_then(DistractorKind::parse)
                    .ok_or_else(|| Error::parse(&dpath, "distractor missing kind"))?,
                ring: f.ring().expect("checked").clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let blobs = polygons(&dir.join(files::BLOBS))?
        .into_iter()
        .map(|f| f.ring().expect("checked").clone())
        .collect();
    let regions = polygons(&dir.join(files::REGIONS))?
        .into_iter()
        .map(|f| (f.str_prop("name").unwrap_or_default().to_string(), f.ring().expect("checked").clone()))
        .collect();
    Ok(GroundTruth {
        farms: parse_farms(&dir.join(files::FARMS), &read(files::FARMS)?)?,
        spec,
        barns,
        distractors,
        blobs,
        roads: read_roads(&dir.join(files::ROADS))?,
        buildings: read_buildings(&dir.join(files::BUILDINGS))?,
        landcover: read_category(&dir.join(files::LANDCOVER))?,
        legend: read_legend(&dir.join(files::LEGEND))?,
        regions,
        chips,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{threshold, Cell};

    fn small(seed: u64) -> SceneSpec {
        SceneSpec {
            width_m: 12_000.0,
            height_m: 12_000.0,
            types: vec![
                TypeParams::defaults(ProductionType::Sow, 4),
                TypeParams::defaults(ProductionType::Finisher, 6),
                TypeParams::defaults(ProductionType::BoarStud, 3),
            ],
            distractors: DistractorCounts {
                warehouse: 10,
                house: 15,
                parking: 5,
            },
            roads: RoadParams {
                towns: 2,
                ..Default::default()
            },
            landcover: LandCoverParams {
                margin_m: 1000.0,
                ..Default::default()
            },
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_and_well_spaced() {
        let a = generate_scene(&small(3)).unwrap();
        let b = generate_scene(&small(3)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.barns, generate_scene(&small(4)).unwrap().barns);
        assert_eq!(a.farms.len(), 13);
        let link = a.spec.link_distance_m;
        for x in &a.barns {
            for y in &a.barns {
                if x.farm_id != y.farm_id {
                    let d = centroid(&x.ring).unwrap().distance(centroid(&y.ring).unwrap());
                    assert!(d > 2.0 * link + 2.0 * half_diagonal(&x.ring).max(half_diagonal(&y.ring)) - 1e-6 || d > 2.0 * link);
                }
            }
            for d in &a.distractors {
                assert!(!crate::geometry::rings_intersect(&x.ring, &d.ring));
            }
        }
        for f in &a.farms {
            let t = a.spec.types.iter().find(|t| t.production_type == f.production_type).unwrap();
            let ratio = f.capacity / (t.density * f.total_area_m2);
            assert!((0.5..2.0).contains(&ratio));
        }
        for c in &a.chips {
            assert!(c.prob.values.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn noise_free_threshold_matches_truth() {
        let mut spec = small(9);
        spec.distractors = DistractorCounts {
            warehouse: 0,
            house: 0,
            parking: 0,
        };
        spec.noise = NoiseModel::none();
        let gt = generate_scene(&spec).unwrap();
        assert!(gt.blobs.is_empty());
        for c in &gt.chips {
            for t in [0.05, 0.5, 0.9] {
                let m = threshold(&c.prob, t).unwrap();
                assert_eq!(m.values, c.truth.values);
            }
            for (p, &m) in c.prob.values.iter().zip(&c.truth.values) {
                assert!(m == 0 || *p >= 0.9);
            }
        }
    }

    #[test]
    fn area_median_tracks_parameter() {
        let t = TypeParams::defaults(ProductionType::Sow, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut v: Vec<f64> = (0..2001).map(|_| t.area_m2.sample(&mut rng)).collect();
        v.sort_by(f64::total_cmp);
        assert!((v[1000] / 1255.0 - 1.0).abs() < 0.1);
    }

    #[test]
    fn overflow_and_validation() {
        let mut s = small(1);
        s.types[1].farms = 500;
        assert!(matches!(generate_scene(&s), Err(Error::PlacementOverflow { .. })));
        let mut s = small(1);
        s.width_m = 1000.5;
        assert!(matches!(s.validate(), Err(Error::InvalidSpec(_))));
        let mut s = small(1);
        s.farm_cell_m = 1200.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn export_import_round_trip() {
        let gt = generate_scene(&small(5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope");
        assert!(matches!(export_scene(&gt, &missing), Err(Error::Io { .. })));
        assert!(!missing.exists());
        export_scene(&gt, dir.path()).unwrap();
        let back = import_scene(dir.path()).unwrap();
        assert_eq!(back, gt);
        assert!(back.landcover.values.iter().all(|v| !v.is_nodata()));
    }
}
