//! Georeferenced grids and the pixel-level kernels that run on them.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Point, Ring};

/// Placement of a grid in map coordinates. `origin` is the top-left corner;
/// rows run southward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub origin: Point,
    pub pixel_size: f64,
}

impl GridSpec {
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixel_center(&self, col: usize, row: usize) -> Point {
        Point::new(
            self.origin.x + (col as f64 + 0.5) * self.pixel_size,
            self.origin.y - (row as f64 + 0.5) * self.pixel_size,
        )
    }

    /// Map position of grid vertex `(col, row)`.
    pub fn vertex(&self, col: i64, row: i64) -> Point {
        Point::new(
            self.origin.x + col as f64 * self.pixel_size,
            self.origin.y - row as f64 * self.pixel_size,
        )
    }

    /// Fractional (col, row) of a map point.
    pub fn to_grid(&self, p: Point) -> (f64, f64) {
        (
            (p.x - self.origin.x) / self.pixel_size,
            (self.origin.y - p.y) / self.pixel_size,
        )
    }

    pub fn bbox(&self) -> BBox {
        BBox {
            min: Point::new(self.origin.x, self.origin.y - self.height as f64 * self.pixel_size),
            max: Point::new(self.origin.x + self.width as f64 * self.pixel_size, self.origin.y),
        }
    }

    fn same_shape(&self, o: &GridSpec) -> bool {
        self.width == o.width && self.height == o.height
    }
}

/// Cell types that carry a nodata sentinel.
pub trait Cell: Copy + PartialEq + Send + Sync + 'static {
    const NODATA: Self;
    fn is_nodata(self) -> bool {
        self == Self::NODATA
    }
}

impl Cell for f32 {
    const NODATA: f32 = f32::NAN;
    fn is_nodata(self) -> bool {
        self.is_nan()
    }
}

impl Cell for u8 {
    const NODATA: u8 = u8::MAX;
}

impl Cell for u16 {
    const NODATA: u16 = u16::MAX;
}

impl Cell for u32 {
    const NODATA: u32 = u32::MAX;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    pub spec: GridSpec,
    pub values: Vec<T>,
}

/// Real-valued raster (probabilities). Nodata is NaN.
pub type Raster = Grid<f32>;
/// 0 background, 1 barn, [`MASK_NODATA`] for padding.
pub type BinaryMask = Grid<u8>;
/// Component ids, 0 background, contiguous `1..=n`.
pub type LabelRaster = Grid<u32>;
/// Categorical codes (land cover). Nodata is `u16::MAX`.
pub type CategoryRaster = Grid<u16>;

pub const MASK_NODATA: u8 = u8::MAX;

impl<T: Cell> Grid<T> {
    pub fn new(spec: GridSpec, values: Vec<T>) -> Result<Self> {
        if spec.len() != values.len() {
            return Err(Error::InvalidRaster(format!(
                "{}x{} grid with {} values",
                spec.width,
                spec.height,
                values.len()
            )));
        }
        if !(spec.pixel_size > 0.0 && spec.pixel_size.is_finite()) {
            return Err(Error::InvalidRaster(format!("pixel size {}", spec.pixel_size)));
        }
        Ok(Grid { spec, values })
    }

    pub fn filled(spec: GridSpec, v: T) -> Self {
        Grid {
            values: vec![v; spec.len()],
            spec,
        }
    }

    pub fn width(&self) -> usize {
        self.spec.width
    }

    pub fn height(&self) -> usize {
        self.spec.height
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> T {
        self.values[row * self.spec.width + col]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, v: T) {
        self.values[row * self.spec.width + col] = v;
    }

    /// Value at a map point, `None` outside the grid.
    pub fn sample(&self, p: Point) -> Option<T> {
        let (c, r) = self.spec.to_grid(p);
        if c < 0.0 || r < 0.0 {
            return None;
        }
        let (c, r) = (c as usize, r as usize);
        (c < self.spec.width && r < self.spec.height).then(|| self.get(c, r))
    }

    /// Copy of a pixel window; cells outside the source read as nodata.
    pub fn window(&self, col0: i64, row0: i64, width: usize, height: usize) -> Grid<T> {
        let spec = GridSpec {
            width,
            height,
            origin: self.spec.vertex(col0, row0),
            pixel_size: self.spec.pixel_size,
        };
        let mut out = Grid::filled(spec, T::NODATA);
        for r in 0..height {
            let sr = row0 + r as i64;
            if sr < 0 || sr >= self.spec.height as i64 {
                continue;
            }
            for c in 0..width {
                let sc = col0 + c as i64;
                if sc >= 0 && sc < self.spec.width as i64 {
                    out.values[r * width + c] = self.get(sc as usize, sr as usize);
                }
            }
        }
        out
    }
}

/// Splits into non-overlapping square tiles of `tile_meters`, row-major.
/// Edge tiles are padded with nodata to full size.
pub fn tile<T: Cell>(r: &Grid<T>, tile_meters: f64) -> Result<Vec<Grid<T>>> {
    let ratio = tile_meters / r.spec.pixel_size;
    let px = ratio.round();
    if !(tile_meters > 0.0) || px < 1.0 || (ratio - px).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::InvalidTileSize {
            tile_meters,
            pixel_size: r.spec.pixel_size,
        });
    }
    let px = px as usize;
    let nx = r.spec.width.div_ceil(px).max(1);
    let ny = r.spec.height.div_ceil(px).max(1);
    let mut out = Vec::with_capacity(nx * ny);
    for ty in 0..ny {
        for tx in 0..nx {
            out.push(r.window((tx * px) as i64, (ty * px) as i64, px, px));
        }
    }
    Ok(out)
}

/// Pixel is 1 iff value ≥ `t`; nodata maps to 0.
pub fn threshold(p: &Raster, t: f64) -> Result<BinaryMask> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidThreshold(t));
    }
    let values = p
        .values
        .iter()
        .map(|&v| u8::from(!v.is_nan() && f64::from(v) >= t))
        .collect();
    Ok(Grid { spec: p.spec, values })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    pub fn from_neighbors(n: u8) -> Option<Self> {
        match n {
            4 => Some(Connectivity::Four),
            8 => Some(Connectivity::Eight),
            _ => None,
        }
    }
}

fn uf_find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

fn uf_union(parent: &mut [u32], a: u32, b: u32) -> u32 {
    let (ra, rb) = (uf_find(parent, a), uf_find(parent, b));
    let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
    parent[hi as usize] = lo;
    lo
}

/// Labels maximal connected sets of 1-pixels. Two-pass union-find; ids are
/// renumbered so component `k` is the k-th met in row-major scan order.
pub fn connected_components(m: &BinaryMask, conn: Connectivity) -> LabelRaster {
    let (w, h) = (m.spec.width, m.spec.height);
    let mut labels = vec![0u32; w * h];
    // parent[0] is the background sentinel.
    let mut parent: Vec<u32> = vec![0];
    for r in 0..h {
        for c in 0..w {
            if m.values[r * w + c] != 1 {
                continue;
            }
            let mut current = 0u32;
            let link = |l: u32, current: &mut u32, parent: &mut Vec<u32>| {
                if l == 0 {
                    return;
                }
                *current = if *current == 0 { uf_find(parent, l) } else { uf_union(parent, *current, l) };
            };
            if c > 0 {
                link(labels[r * w + c - 1], &mut current, &mut parent);
            }
            if r > 0 {
                let up = (r - 1) * w;
                link(labels[up + c], &mut current, &mut parent);
                if conn == Connectivity::Eight {
                    if c > 0 {
                        link(labels[up + c - 1], &mut current, &mut parent);
                    }
                    if c + 1 < w {
                        link(labels[up + c + 1], &mut current, &mut parent);
                    }
                }
            }
            if current == 0 {
                current = parent.len() as u32;
                parent.push(current);
            }
            labels[r * w + c] = current;
        }
    }
    // Renumber roots in the order their first pixel is met.
    let mut remap = vec![0u32; parent.len()];
    let mut next = 0u32;
    for l in labels.iter_mut() {
        if *l == 0 {
            continue;
        }
        let root = uf_find(&mut parent, *l) as usize;
        if remap[root] == 0 {
            next += 1;
            remap[root] = next;
        }
        *l = remap[root];
    }
    Grid { spec: m.spec, values: labels }
}

pub fn component_count(l: &LabelRaster) -> u32 {
    l.values.iter().copied().max().unwrap_or(0)
}

/// Outer boundary ring of every component, traced along pixel edges and
/// returned in id order. Components with holes yield only the outer ring.
pub fn polygonize(l: &LabelRaster) -> Vec<(u32, Ring)> {
    let (w, h) = (l.spec.width as i64, l.spec.height as i64);
    let label_at = |c: i64, r: i64| -> u32 {
        if c < 0 || r < 0 || c >= w || r >= h {
            0
        } else {
            l.values[(r * w + c) as usize]
        }
    };
    // Vertex coordinates are (col, -row) so the plane is y-up and every
    // traced loop keeps its component on the left.
    type V = (i64, i64);
    let mut edges: HashMap<u32, Vec<(V, V)>> = HashMap::new();
    for r in 0..h {
        for c in 0..w {
            let id = label_at(c, r);
            if id == 0 {
                continue;
            }
            let e = edges.entry(id).or_default();
            let (x0, x1, ytop, ybot) = (c, c + 1, -r, -r - 1);
            if label_at(c, r + 1) != id {
                e.push(((x0, ybot), (x1, ybot)));
            }
            if label_at(c + 1, r) != id {
                e.push(((x1, ybot), (x1, ytop)));
            }
            if label_at(c, r - 1) != id {
                e.push(((x1, ytop), (x0, ytop)));
            }
            if label_at(c - 1, r) != id {
                e.push(((x0, ytop), (x0, ybot)));
            }
        }
    }

    let mut ids: Vec<u32> = edges.keys().copied().collect();
    ids.sort_unstable();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let loops = trace_loops(&edges[&id]);
        let best = loops
            .into_iter()
            .map(|lp| {
                let a2: i64 = (0..lp.len())
                    .map(|i| {
                        let (p, q) = (lp[i], lp[(i + 1) % lp.len()]);
                        p.0 * q.1 - p.1 * q.0
                    })
                    .sum();
                (a2, lp)
            })
            .max_by_key(|(a2, _)| *a2);
        let Some((_, lp)) = best else { continue };
        let pts = simplify_collinear(&lp)
            .into_iter()
            .map(|(x, y)| l.spec.vertex(x, -y))
            .collect();
        if let Ok(ring) = Ring::new(pts) {
            out.push((id, ring));
        }
    }
    out
}

type Vertex = (i64, i64);

fn trace_loops(edges: &[(Vertex, Vertex)]) -> Vec<Vec<Vertex>> {
    type V = Vertex;
    // A vertex has one outgoing edge, or two at a diagonal pinch.
    let mut out_edges: HashMap<V, Vec<usize>> = HashMap::with_capacity(edges.len());
    for (i, (a, _)) in edges.iter().enumerate() {
        out_edges.entry(*a).or_default().push(i);
    }
    let mut used = vec![false; edges.len()];
    let mut loops = Vec::new();
    for start in 0..edges.len() {
        if used[start] {
            continue;
        }
        let mut lp = Vec::new();
        let mut cur = start;
        loop {
            used[cur] = true;
            let (a, b) = edges[cur];
            lp.push(a);
            let dir = (b.0 - a.0, b.1 - a.1);
            let cands = &out_edges[&b];
            // At a pinch take the right turn, which stitches diagonally
            // touching pixels of the same component into one loop.
            let right = (dir.1, -dir.0);
            let next = cands
                .iter()
                .copied()
                .filter(|&e| !used[e])
                .min_by_key(|&e| {
                    let (p, q) = edges[e];
                    i32::from((q.0 - p.0, q.1 - p.1) != right)
                });
            match next {
                Some(n) => cur = n,
                None => break,
            }
        }
        loops.push(lp);
    }
    loops
}

fn simplify_collinear(lp: &[(i64, i64)]) -> Vec<(i64, i64)> {
    let n = lp.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (p, q, r) = (lp[(i + n - 1) % n], lp[i], lp[(i + 1) % n]);
        let cross = (q.0 - p.0) * (r.1 - q.1) - (q.1 - p.1) * (r.0 - q.0);
        if cross != 0 {
            out.push(q);
        }
    }
    out
}

/// Rotates a square tile by `quarter_turns` × 90° counter-clockwise.
pub fn rotate_tile<T: Cell>(r: &Grid<T>, quarter_turns: u8) -> Result<Grid<T>> {
    let n = r.spec.width;
    if n != r.spec.height {
        return Err(Error::NonSquareTile {
            width: r.spec.width,
            height: r.spec.height,
        });
    }
    let turns = quarter_turns % 4;
    let mut values = Vec::with_capacity(n * n);
    for row in 0..n {
        for col in 0..n {
            let (sc, sr) = match turns {
                0 => (col, row),
                1 => (n - 1 - row, col),
                2 => (n - 1 - col, n - 1 - row),
                _ => (row, n - 1 - col),
            };
            values.push(r.get(sc, sr));
        }
    }
    Ok(Grid { spec: r.spec, values })
}

/// Per-class loss weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub barn: f64,
    pub background: f64,
}

impl ClassWeights {
    pub const UNIT: ClassWeights = ClassWeights {
        barn: 1.0,
        background: 1.0,
    };

    /// Weights reported for the original segmenter training (barn,
    /// background). Reference only: no standard scheme reproduces them from
    /// the stated 1.15% barn-pixel share.
    pub const REPORTED: ClassWeights = ClassWeights {
        barn: 15.35,
        background: 0.51,
    };
}

/// Balanced inverse-frequency weights `w_c = N / (2 N_c)` over valid pixels.
pub fn class_weights(masks: &[BinaryMask]) -> Result<ClassWeights> {
    let (mut pos, mut neg) = (0u64, 0u64);
    for m in masks {
        for &v in &m.values {
            match v {
                1 => pos += 1,
                0 => neg += 1,
                _ => {}
            }
        }
    }
    if pos == 0 {
        return Err(Error::MissingClass("barn"));
    }
    if neg == 0 {
        return Err(Error::MissingClass("background"));
    }
    let total = (pos + neg) as f64;
    Ok(ClassWeights {
        barn: total / (2.0 * pos as f64),
        background: total / (2.0 * neg as f64),
    })
}

pub const BCE_EPS: f64 = 1e-7;

/// Mean class-weighted binary cross-entropy over pixels where both inputs
/// are valid.
pub fn weighted_bce(p: &Raster, truth: &BinaryMask, w: &ClassWeights) -> Result<f64> {
    if !p.spec.same_shape(&truth.spec) {
        return Err(Error::ShapeMismatch(format!(
            "probabilities {}x{}, truth {}x{}",
            p.spec.width, p.spec.height, truth.spec.width, truth.spec.height
        )));
    }
    let (mut sum, mut n) = (0.0f64, 0u64);
    for (&pv, &tv) in p.values.iter().zip(&truth.values) {
        if pv.is_nan() || tv > 1 {
            continue;
        }
        let q = f64::from(pv).clamp(BCE_EPS, 1.0 - BCE_EPS);
        sum += if tv == 1 { -w.barn * q.ln() } else { -w.background * (1.0 - q).ln() };
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(sum / n as f64)
}

const BGRD_MAGIC: &[u8; 4] = b"BGRD";
const BGRD_HEADER: usize = 4 + 4 + 4 + 8 + 8 + 8 + 1;

/// Payload kind of a BGRD file.
#[derive(Debug, Clone, PartialEq)]
pub enum GridData {
    Real(Raster),
    Category(CategoryRaster),
}

fn encode_header(spec: &GridSpec, kind: u8) -> Vec<u8> {
    let mut buf = Vec::with_capacity(BGRD_HEADER);
    buf.extend_from_slice(BGRD_MAGIC);
    buf.extend_from_slice(&(spec.width as u32).to_le_bytes());
    buf.extend_from_slice(&(spec.height as u32).to_le_bytes());
    buf.extend_from_slice(&spec.origin.x.to_le_bytes());
    buf.extend_from_slice(&spec.origin.y.to_le_bytes());
    buf.extend_from_slice(&spec.pixel_size.to_le_bytes());
    buf.push(kind);
    buf
}

pub fn encode_real(r: &Raster) -> Vec<u8> {
    let mut buf = encode_header(&r.spec, 0);
    buf.reserve(r.values.len() * 4);
    for v in &r.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn encode_category(r: &CategoryRaster) -> Vec<u8> {
    let mut buf = encode_header(&r.spec, 1);
    buf.reserve(r.values.len() * 2);
    for v in &r.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode(bytes: &[u8]) -> Result<GridData> {
    let bad = |m: &str| Error::InvalidRaster(format!("BGRD: {m}"));
    if bytes.len() < BGRD_HEADER || &bytes[..4] != BGRD_MAGIC {
        return Err(bad("missing magic or truncated header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let spec = GridSpec {
        width: u32_at(4),
        height: u32_at(8),
        origin: Point::new(f64_at(12), f64_at(20)),
        pixel_size: f64_at(28),
    };
    let payload = &bytes[BGRD_HEADER..];
    match bytes[36] {
        0 => {
            if payload.len() != spec.len() * 4 {
                return Err(bad("payload length"));
            }
            let values = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            Grid::new(spec, values).map(GridData::Real)
        }
        1 => {
            if payload.len() != spec.len() * 2 {
                return Err(bad("payload length"));
            }
            let values = payload
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes(c.try_into().expect("2 bytes")))
                .collect();
            Grid::new(spec, values).map(GridData::Category)
        }
        k => Err(bad(&format!("unknown value kind {k}"))),
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn write_real(path: &Path, r: &Raster) -> Result<()> {
    write_bytes(path, &encode_real(r))
}

pub fn write_category(path: &Path, r: &CategoryRaster) -> Result<()> {
    write_bytes(path, &encode_category(r))
}

pub fn read_grid(path: &Path) -> Result<GridData> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| Error::parse(path, e))
}

pub fn read_real(path: &Path) -> Result<Raster> {
    match read_grid(path)? {
        GridData::Real(r) => Ok(r),
        GridData::Category(_) => Err(Error::parse(path, "expected a real-valued BGRD")),
    }
}

pub fn read_category(path: &Path) -> Result<CategoryRaster> {
    match read_grid(path)? {
        GridData::Category(r) => Ok(r),
        GridData::Real(_) => Err(Error::parse(path, "expected a categorical BGRD")),
    }
}

/// Masks are stored as categorical grids: 0, 1, and `u16::MAX` for nodata.
pub fn mask_to_category(m: &BinaryMask) -> CategoryRaster {
    Grid {
        spec: m.spec,
        values: m
            .values
            .iter()
            .map(|&v| if v == MASK_NODATA { u16::NODATA } else { u16::from(v) })
            .collect(),
    }
}

pub fn category_to_mask(c: &CategoryRaster) -> Result<BinaryMask> {
    let values = c
        .values
        .iter()
        .map(|&v| match v {
            0 | 1 => Ok(v as u8),
            u16::MAX => Ok(MASK_NODATA),
            other => Err(Error::InvalidRaster(format!("mask value {other}"))),
        })
        .collect::<Result<Vec<u8>>>()?;
    Ok(Grid { spec: c.spec, values })
}
