//! Predictor vectors for candidate polygons and for farms.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{centroid, min_area_rect, nearest_road_distance, polygon_area, Point, Ring, SegmentIndex};
use crate::raster::{CategoryRaster, Cell};

/// Buffer radii used by the filter models, meters.
pub const DEFAULT_RADII: [f64; 3] = [500.0, 1000.0, 5000.0];

/// Categorical land-cover raster with its legend.
#[derive(Debug, Clone)]
pub struct LandCover {
    raster: CategoryRaster,
    legend: Vec<(u16, String)>,
    class_of: Vec<u8>,
}

const NO_CLASS: u8 = u8::MAX;

impl LandCover {
    pub fn new(raster: CategoryRaster, legend: Vec<(u16, String)>) -> Result<Self> {
        if legend.is_empty() || legend.len() >= NO_CLASS as usize {
            return Err(Error::Config(format!("legend has {} classes", legend.len())));
        }
        let mut class_of = vec![NO_CLASS; u16::MAX as usize + 1];
        for (i, (code, _)) in legend.iter().enumerate() {
            if class_of[*code as usize] != NO_CLASS {
                return Err(Error::Config(format!("legend lists code {code} twice")));
            }
            class_of[*code as usize] = i as u8;
        }
        if let Some(&bad) = raster
            .values
            .iter()
            .find(|&&v| !v.is_nodata() && class_of[v as usize] == NO_CLASS)
        {
            return Err(Error::UnknownLandCover(bad));
        }
        Ok(LandCover {
            raster,
            legend,
            class_of,
        })
    }

    pub fn raster(&self) -> &CategoryRaster {
        &self.raster
    }

    pub fn legend(&self) -> &[(u16, String)] {
        &self.legend
    }

    pub fn class_names(&self) -> Vec<String> {
        self.legend.iter().map(|(_, n)| n.clone()).collect()
    }

    /// Class fractions within each radius of `center`, one vector per
    /// radius in legend order. Pixels count when their center lies in the
    /// disc; nodata pixels are left out of the denominator.
    pub fn proportions_multi(&self, center: Point, radii: &[f64]) -> Result<Vec<Vec<f64>>> {
        let rmax = radii.iter().copied().fold(0.0, f64::max);
        if radii.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::Config("buffer radius must be positive".into()));
        }
        let spec = &self.raster.spec;
        let (gc, gr) = spec.to_grid(center);
        let span = rmax / spec.pixel_size;
        let c0 = ((gc - span).floor().max(0.0)) as usize;
        let r0 = ((gr - span).floor().max(0.0)) as usize;
        let c1 = ((gc + span).ceil().min(spec.width as f64)).max(0.0) as usize;
        let r1 = ((gr + span).ceil().min(spec.height as f64)).max(0.0) as usize;

        let k = self.legend.len();
        let r2: Vec<f64> = radii.iter().map(|r| r * r).collect();
        let r2_max = rmax * rmax;
        let mut counts = vec![vec![0u64; k]; radii.len()];
        let mut nodata = vec![0u64; radii.len()];
        for row in r0..r1 {
            let dy = spec.origin.y - (row as f64 + 0.5) * spec.pixel_size - center.y;
            let base = row * spec.width;
            for col in c0..c1 {
                let dx = spec.origin.x + (col as f64 + 0.5) * spec.pixel_size - center.x;
                let d2 = dx * dx + dy * dy;
                if d2 > r2_max {
                    continue;
                }
                let v = self.raster.values[base + col];
                for (ri, &lim) in r2.iter().enumerate() {
                    if d2 <= lim {
                        if v.is_nodata() {
                            nodata[ri] += 1;
                        } else {
                            counts[ri][self.class_of[v as usize] as usize] += 1;
                        }
                    }
                }
            }
        }

        counts
            .into_iter()
            .zip(nodata)
            .zip(radii)
            .map(|((c, nd), &radius)| {
                let valid: u64 = c.iter().sum();
                if valid == 0 || nd > valid {
                    return Err(Error::OutOfCoverage {
                        x: center.x,
                        y: center.y,
                        radius,
                    });
                }
                Ok(c.iter().map(|&n| n as f64 / valid as f64).collect())
            })
            .collect()
    }
}

pub fn landcover_proportions(center: Point, radius: f64, lc: &LandCover) -> Result<Vec<f64>> {
    Ok(lc.proportions_multi(center, &[radius])?.remove(0))
}

/// Parses a `code,name` legend, one class per line; `#` starts a comment.
pub fn parse_legend(text: &str) -> std::result::Result<Vec<(u16, String)>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            let (code, name) = l
                .split_once(',')
                .ok_or_else(|| format!("line {}: expected code,name", i + 1))?;
            let code = code
                .trim()
                .parse::<u16>()
                .map_err(|e| format!("line {}: {e}", i + 1))?;
            Ok((code, name.trim().to_string()))
        })
        .collect()
}

pub fn read_legend(path: &Path) -> Result<Vec<(u16, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_legend(&text).map_err(|m| Error::parse(path, m))
}

pub fn format_legend(legend: &[(u16, String)]) -> String {
    legend.iter().map(|(c, n)| format!("{c},{n}\n")).collect()
}

/// Geometry-only descriptors of a barn polygon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarnShape {
    pub area_m2: f64,
    pub length_m: f64,
    pub width_m: f64,
    pub aspect_ratio: f64,
}

impl BarnShape {
    pub fn from_ring(ring: &Ring) -> Result<Self> {
        let rect = min_area_rect(ring)?;
        Ok(BarnShape {
            area_m2: polygon_area(ring)?,
            length_m: rect.length,
            width_m: rect.width,
            aspect_ratio: rect.aspect_ratio(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarnFeatures {
    pub shape: BarnShape,
    pub road_distance_m: f64,
    pub radii: Vec<f64>,
    /// `[radius][class]` fractions, legend order.
    pub lc_prop: Vec<Vec<f64>>,
}

pub const SHAPE_COLUMNS: [&str; 4] = ["area_m2", "length_m", "width_m", "aspect_ratio"];

pub fn lc_column(radius: f64, class: &str) -> String {
    let slug: String = class
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect();
    format!("lc{}_{}", radius.round() as i64, slug)
}

/// Column names for a barn feature row restricted to `radii`.
pub fn barn_columns(radii: &[f64], classes: &[String]) -> Vec<String> {
    let mut cols: Vec<String> = SHAPE_COLUMNS.iter().map(|s| s.to_string()).collect();
    cols.push("road_distance_m".into());
    for &r in radii {
        cols.extend(classes.iter().map(|c| lc_column(r, c)));
    }
    cols
}

impl BarnFeatures {
    /// Feature row over the listed radii, which must be a subset of
    /// `self.radii`. Order matches [`barn_columns`].
    pub fn row(&self, radii: &[f64]) -> Result<Vec<f64>> {
        let s = &self.shape;
        let mut row = vec![s.area_m2, s.length_m, s.width_m, s.aspect_ratio, self.road_distance_m];
        for r in radii {
            let i = self
                .radii
                .iter()
                .position(|x| x == r)
                .ok_or_else(|| Error::SchemaMismatch(format!("radius {r} not extracted")))?;
            row.extend_from_slice(&self.lc_prop[i]);
        }
        Ok(row)
    }
}

/// Geometry, road distance and land-cover composition of one polygon.
/// Buffers are centered on the polygon centroid.
pub fn barn_features(ring: &Ring, roads: &SegmentIndex, lc: &LandCover, radii: &[f64]) -> Result<BarnFeatures> {
    let shape = BarnShape::from_ring(ring)?;
    let road_distance_m = nearest_road_distance(ring, roads)?;
    let lc_prop = lc.proportions_multi(centroid(ring)?, radii)?;
    Ok(BarnFeatures {
        shape,
        road_distance_m,
        radii: radii.to_vec(),
        lc_prop,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FarmFeatures {
    pub n_barns: usize,
    pub total_area_m2: f64,
    pub mean_area_m2: f64,
    pub std_area_m2: f64,
    pub mean_aspect_ratio: f64,
    pub std_aspect_ratio: f64,
    pub mean_width_m: f64,
    pub std_width_m: f64,
    pub mean_length_m: f64,
    pub std_length_m: f64,
}

impl FarmFeatures {
    pub const COLUMNS: [&'static str; 10] = [
        "n_barns",
        "total_area_m2",
        "mean_area_m2",
        "std_area_m2",
        "mean_aspect_ratio",
        "std_aspect_ratio",
        "mean_width_m",
        "std_width_m",
        "mean_length_m",
        "std_length_m",
    ];

    pub fn row(&self) -> Vec<f64> {
        vec![
            self.n_barns as f64,
            self.total_area_m2,
            self.mean_area_m2,
            self.std_area_m2,
            self.mean_aspect_ratio,
            self.std_aspect_ratio,
            self.mean_width_m,
            self.std_width_m,
            self.mean_length_m,
            self.std_length_m,
        ]
    }
}

fn mean_std(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    let var = v.map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Farm aggregates with population standard deviations (divisor n).
pub fn farm_features(barns: &[BarnShape]) -> Result<FarmFeatures> {
    if barns.is_empty() {
        return Err(Error::EmptyFarm);
    }
    // Sorting first makes the sums independent of barn order.
    let sorted = |f: fn(&BarnShape) -> f64| {
        let mut v: Vec<f64> = barns.iter().map(f).collect();
        v.sort_by(f64::total_cmp);
        v
    };
    let area = sorted(|b| b.area_m2);
    let aspect = sorted(|b| b.aspect_ratio);
    let width = sorted(|b| b.width_m);
    let length = sorted(|b| b.length_m);
    let (mean_area_m2, std_area_m2) = mean_std(area.iter().copied());
    let (mean_aspect_ratio, std_aspect_ratio) = mean_std(aspect.iter().copied());
    let (mean_width_m, std_width_m) = mean_std(width.iter().copied());
    let (mean_length_m, std_length_m) = mean_std(length.iter().copied());
    Ok(FarmFeatures {
        n_barns: barns.len(),
        total_area_m2: area.iter().sum(),
        mean_area_m2,
        std_area_m2,
        mean_aspect_ratio,
        std_aspect_ratio,
        mean_width_m,
        std_width_m,
        mean_length_m,
        std_length_m,
    })
}

/// Feature matrix with an id column, as written to CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub columns: Vec<String>,
    pub ids: Vec<u64>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id");
        for c in &self.columns {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for (id, row) in self.ids.iter().zip(&self.rows) {
            let _ = write!(s, "{id}");
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or("empty feature file")?;
        let mut cols = header.split(',').map(str::trim);
        if cols.next() != Some("id") {
            return Err("first column must be id".into());
        }
        let columns: Vec<String> = cols.map(String::from).collect();
        let (mut ids, mut rows) = (Vec::new(), Vec::new());
        for (n, line) in lines.enumerate() {
            let mut f = line.split(',');
            let id = f
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| format!("row {}: bad id", n + 1))?;
            let row = f
                .map(|s| s.trim().parse::<f64>().map_err(|e| format!("row {}: {e}", n + 1)))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            if row.len() != columns.len() {
                return Err(format!("row {}: {} values for {} columns", n + 1, row.len(), columns.len()));
            }
            ids.push(id);
            rows.push(row);
        }
        Ok(FeatureTable { columns, ids, rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        FeatureTable::from_csv(&text).map_err(|m| Error::parse(path, m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Segment;
    use crate::raster::{Grid, GridSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const CROPS: u16 = 82;
    const PASTURE: u16 = 81;
    const DEV: u16 = 22;

    fn legend() -> Vec<(u16, String)> {
        vec![
            (CROPS, "Cultivated Crops".into()),
            (PASTURE, "Pasture/Hay".into()),
            (DEV, "Developed, Low Intensity".into()),
        ]
    }

    fn lc_grid(n: usize, px: f64, mut f: impl FnMut(usize, usize) -> u16) -> LandCover {
        let spec = GridSpec {
            width: n,
            height: n,
            origin: Point::new(-(n as f64) * px / 2.0, n as f64 * px / 2.0),
            pixel_size: px,
        };
        let values = (0..n * n).map(|i| f(i % n, i / n)).collect();
        LandCover::new(Grid::new(spec, values).unwrap(), legend()).unwrap()
    }

    #[test]
    fn uniform_raster() {
        let lc = lc_grid(200, 30.0, |_, _| CROPS);
        let p = landcover_proportions(Point::new(0.0, 0.0), 500.0, &lc).unwrap();
        assert_eq!(p, vec![1.0, 0.0, 0.0]);
        let p2 = landcover_proportions(Point::new(0.0, 0.0), 1000.0, &lc).unwrap();
        assert_eq!(p, p2);
    }

    #[test]
    fn half_plane_split() {
        let lc = lc_grid(400, 30.0, |c, _| if c < 200 { CROPS } else { PASTURE });
        let p = landcover_proportions(Point::new(0.0, 0.0), 3000.0, &lc).unwrap();
        let n = std::f64::consts::PI * 100.0 * 100.0;
        let tol = 2.0 / n.sqrt();
        assert!((p[0] - 0.5).abs() <= tol && (p[1] - 0.5).abs() <= tol, "{p:?}");
    }

    #[test]
    fn matches_enumeration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let codes = [CROPS, PASTURE, DEV];
        let lc = lc_grid(120, 10.0, |_, _| codes[rng.gen_range(0..3)]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let c = Point::new(rng.gen_range(-300.0..300.0), rng.gen_range(-300.0..300.0));
            let r = rng.gen_range(20.0..250.0);
            let got = landcover_proportions(c, r, &lc).unwrap();
            let spec = lc.raster().spec;
            let mut counts = [0.0; 3];
            for row in 0..spec.height {
                for col in 0..spec.width {
                    if spec.pixel_center(col, row).distance(c) <= r {
                        let v = lc.raster().get(col, row);
                        counts[codes.iter().position(|&k| k == v).unwrap()] += 1.0;
                    }
                }
            }
            let total: f64 = counts.iter().sum();
            for k in 0..3 {
                assert!((got[k] - counts[k] / total).abs() < 1e-12);
            }
            assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn coverage_errors() {
        let lc = lc_grid(20, 30.0, |_, _| CROPS);
        assert!(matches!(
            landcover_proportions(Point::new(1e6, 1e6), 500.0, &lc),
            Err(Error::OutOfCoverage { .. })
        ));
        let holes = lc_grid(20, 30.0, |c, _| if c < 15 { u16::MAX } else { CROPS });
        assert!(matches!(
            landcover_proportions(Point::new(0.0, 0.0), 200.0, &holes),
            Err(Error::OutOfCoverage { .. })
        ));
        let spec = lc.raster().spec;
        assert!(matches!(
            LandCover::new(Grid::filled(spec, 7u16), legend()),
            Err(Error::UnknownLandCover(7))
        ));
    }

    #[test]
    fn square_barn_far_from_road() {
        let lc = lc_grid(400, 30.0, |_, _| CROPS);
        let roads = SegmentIndex::new(vec![Segment::new(Point::new(-3000.0, 900.0), Point::new(3000.0, 900.0))], 250.0);
        let sq = Ring::rectangle(Point::new(-15.0, -15.0), 30.0, 30.0).unwrap();
        let f = barn_features(&sq, &roads, &lc, &DEFAULT_RADII).unwrap();
        assert!((f.shape.aspect_ratio - 1.0).abs() < 1e-12);
        assert!((f.road_distance_m - 900.0).abs() < 1e-9);
        for p in &f.lc_prop {
            assert_eq!(p[0], 1.0);
        }
        let rotated = sq.rotated(0.7, Point::new(0.0, 0.0));
        let g = barn_features(&rotated, &roads, &lc, &DEFAULT_RADII).unwrap();
        assert!((g.shape.area_m2 - f.shape.area_m2).abs() < 1e-9);
        assert!((g.shape.length_m - f.shape.length_m).abs() < 1e-9);
        assert!((g.shape.aspect_ratio - f.shape.aspect_ratio).abs() < 1e-9);
    }

    #[test]
    fn row_layout_matches_columns() {
        let f = BarnFeatures {
            shape: BarnShape {
                area_m2: 1.0,
                length_m: 2.0,
                width_m: 3.0,
                aspect_ratio: 4.0,
            },
            road_distance_m: 5.0,
            radii: vec![500.0, 1000.0],
            lc_prop: vec![vec![0.25, 0.75], vec![0.5, 0.5]],
        };
        let classes = vec!["Cultivated Crops".to_string(), "Pasture/Hay".to_string()];
        let cols = barn_columns(&[1000.0], &classes);
        assert_eq!(cols[5], "lc1000_cultivated_crops");
        assert_eq!(f.row(&[1000.0]).unwrap(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 0.5, 0.5]);
        assert!(f.row(&[5000.0]).is_err());
    }

    fn shape(area: f64) -> BarnShape {
        BarnShape {
            area_m2: area,
            length_m: area / 20.0,
            width_m: 20.0,
            aspect_ratio: area / 400.0,
        }
    }

    #[test]
    fn farm_feature_cases() {
        let one = farm_features(&[shape(900.0)]).unwrap();
        assert_eq!(one.mean_area_m2, 900.0);
        assert_eq!((one.std_area_m2, one.std_width_m, one.std_length_m, one.std_aspect_ratio), (0.0, 0.0, 0.0, 0.0));
        let two = farm_features(&[shape(800.0), shape(1200.0)]).unwrap();
        assert_eq!((two.mean_area_m2, two.std_area_m2, two.total_area_m2), (1000.0, 200.0, 2000.0));
        assert!(matches!(farm_features(&[]), Err(Error::EmptyFarm)));
    }

    #[test]
    fn farm_features_match_formula_and_ignore_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let barns: Vec<BarnShape> = (0..7).map(|_| shape(rng.gen_range(300.0..3000.0))).collect();
        let f = farm_features(&barns).unwrap();
        let n = barns.len() as f64;
        let m = barns.iter().map(|b| b.area_m2).sum::<f64>() / n;
        let sd = (barns.iter().map(|b| (b.area_m2 - m).powi(2)).sum::<f64>() / n).sqrt();
        assert!((f.mean_area_m2 - m).abs() < 1e-9 && (f.std_area_m2 - sd).abs() < 1e-9);
        let mut rev = barns.clone();
        rev.reverse();
        assert_eq!(farm_features(&rev).unwrap(), f);
    }

    #[test]
    fn legend_and_table_text() {
        let l = parse_legend("# nlcd\n82,Cultivated Crops\n\n81, Pasture/Hay\n").unwrap();
        assert_eq!(l, vec![(82, "Cultivated Crops".into()), (81, "Pasture/Hay".into())]);
        assert!(parse_legend("x,y").is_err());
        let t = FeatureTable {
            columns: vec!["a".into(), "b".into()],
            ids: vec![3, 9],
            rows: vec![vec![0.1, 2.0], vec![1e-7, -3.5]],
        };
        assert_eq!(FeatureTable::from_csv(&t.to_csv()).unwrap(), t);
    }
}
