//! Procedural floorplan corpus.
//!
//! Layouts live on a 128-unit square canvas. A layout is generated as:
//!
//! 1. Boundary: a rectangle covering 0.6–0.9 of the canvas on each axis,
//!    centered. With probability 0.3 one randomly chosen corner is notched
//!    out (0.25–0.45 of each side), giving an L shape that is stored as two
//!    rectangles.
//! 2. Rooms: a target count is drawn from `[min_rooms, max_rooms]`; the
//!    largest room that can still be split is cut along its longer
//!    splittable axis at a position drawn from the middle 30–70% of the
//!    admissible range. No room side may fall below 1/8 of the boundary's
//!    width (horizontal sides) or height (vertical sides).
//! 3. Types: the largest room is the living room; the smallest room
//!    touching the outline is the bathroom; with four or more rooms the
//!    next smallest outline room is the kitchen; with six or more the
//!    remaining outline room with the highest aspect ratio is a balcony;
//!    the first remaining room with aspect ratio at least 3 becomes the
//!    (single) corridor; everything else is a bedroom. Ties go to the
//!    lowest room index.
//!
//! If the target cannot be met the seed is re-derived deterministically
//! and generation retried a bounded number of times.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Mode, Raster};
use crate::rng::derive_seed;

pub const CANVAS: u32 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoomType {
    Living,
    Bedroom,
    Kitchen,
    Bathroom,
    Balcony,
    Corridor,
}

impl RoomType {
    pub const ALL: [RoomType; 6] = [
        RoomType::Living,
        RoomType::Bedroom,
        RoomType::Kitchen,
        RoomType::Bathroom,
        RoomType::Balcony,
        RoomType::Corridor,
    ];
}

/// Half-open axis-aligned rectangle `[x0, x1) x [y0, y1)` in canvas units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl Rect {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        debug_assert!(x0 < x1 && y0 < y1);
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn aspect(&self) -> f64 {
        let (w, h) = (self.width() as f64, self.height() as f64);
        w.max(h) / w.min(h)
    }

    pub fn overlaps(&self, other: &Rect) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }

    /// Whether the unit cell with lower corner `(x, y)` lies inside.
    pub fn contains_cell(&self, x: i64, y: i64) -> bool {
        x >= self.x0 as i64 && x < self.x1 as i64 && y >= self.y0 as i64 && y < self.y1 as i64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Room {
    pub rect: Rect,
    pub kind: RoomType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutSpec {
    pub seed: u64,
    /// Bounding box of the boundary.
    pub outer: Rect,
    /// The notched-out corner of an L-shaped boundary.
    pub notch: Option<Rect>,
    /// Disjoint rectangles whose union is the boundary.
    pub boundary: Vec<Rect>,
    pub rooms: Vec<Room>,
}

impl LayoutSpec {
    pub fn boundary_area(&self) -> u64 {
        self.boundary.iter().map(Rect::area).sum()
    }

    fn inside(&self, x: i64, y: i64) -> bool {
        self.boundary.iter().any(|r| r.contains_cell(x, y))
    }

    /// Whether some stretch of the room's outline lies on the boundary
    /// outline.
    pub fn touches_outline(&self, rect: &Rect) -> bool {
        let (x0, y0, x1, y1) = (rect.x0 as i64, rect.y0 as i64, rect.x1 as i64, rect.y1 as i64);
        (x0..x1).any(|x| !self.inside(x, y0 - 1) || !self.inside(x, y1))
            || (y0..y1).any(|y| !self.inside(x0 - 1, y) || !self.inside(x1, y))
    }

    pub fn count(&self, kind: RoomType) -> usize {
        self.rooms.iter().filter(|r| r.kind == kind).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutConstraints {
    pub min_rooms: usize,
    pub max_rooms: usize,
    pub l_shape_prob: f64,
    pub max_retries: u32,
}

impl Default for LayoutConstraints {
    fn default() -> Self {
        Self {
            min_rooms: 3,
            max_rooms: 8,
            l_shape_prob: 0.3,
            max_retries: 64,
        }
    }
}

impl LayoutConstraints {
    fn validate(&self) -> Result<()> {
        if self.min_rooms < 2 || self.min_rooms > self.max_rooms {
            return Err(Error::BadConfig(format!(
                "room count range [{}, {}] is invalid",
                self.min_rooms, self.max_rooms
            )));
        }
        if !(0.0..=1.0).contains(&self.l_shape_prob) {
            return Err(Error::BadConfig("l_shape_prob outside [0, 1]".into()));
        }
        Ok(())
    }
}

fn draw_boundary(rng: &mut ChaCha8Rng, c: &LayoutConstraints) -> (Rect, Option<Rect>, Vec<Rect>) {
    let mut side = || (rng.random_range(0.6..=0.9) * CANVAS as f64).round() as u32;
    let (w, h) = (side(), side());
    let (x0, y0) = ((CANVAS - w) / 2, (CANVAS - h) / 2);
    let outer = Rect::new(x0, y0, x0 + w, y0 + h);
    if !rng.random_bool(c.l_shape_prob) {
        return (outer, None, vec![outer]);
    }
    let nw = (rng.random_range(0.25..=0.45) * w as f64).round() as u32;
    let nh = (rng.random_range(0.25..=0.45) * h as f64).round() as u32;
    let (x1, y1) = (outer.x1, outer.y1);
    // Corners: 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
    let (notch, parts) = match rng.random_range(0..4) {
        0 => (
            Rect::new(x0, y0, x0 + nw, y0 + nh),
            [
                Rect::new(x0 + nw, y0, x1, y1),
                Rect::new(x0, y0 + nh, x0 + nw, y1),
            ],
        ),
        1 => (
            Rect::new(x1 - nw, y0, x1, y0 + nh),
            [
                Rect::new(x0, y0, x1 - nw, y1),
                Rect::new(x1 - nw, y0 + nh, x1, y1),
            ],
        ),
        2 => (
            Rect::new(x0, y1 - nh, x0 + nw, y1),
            [
                Rect::new(x0 + nw, y0, x1, y1),
                Rect::new(x0, y0, x0 + nw, y1 - nh),
            ],
        ),
        _ => (
            Rect::new(x1 - nw, y1 - nh, x1, y1),
            [
                Rect::new(x0, y0, x1 - nw, y1),
                Rect::new(x1 - nw, y0, x1, y1 - nh),
            ],
        ),
    };
    (outer, Some(notch), parts.to_vec())
}

/// Cuts `r` at `at` along x (`vertical`) or y.
fn cut(r: Rect, vertical: bool, at: u32) -> (Rect, Rect) {
    if vertical {
        (Rect::new(r.x0, r.y0, at, r.y1), Rect::new(at, r.y0, r.x1, r.y1))
    } else {
        (Rect::new(r.x0, r.y0, r.x1, at), Rect::new(r.x0, at, r.x1, r.y1))
    }
}

fn try_layout(seed: u64, c: &LayoutConstraints) -> Option<LayoutSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (outer, notch, boundary) = draw_boundary(&mut rng, c);
    let min_w = outer.width().div_ceil(8);
    let min_h = outer.height().div_ceil(8);
    let target = rng.random_range(c.min_rooms..=c.max_rooms).max(boundary.len());
    let mut rects = boundary.clone();
    while rects.len() < target {
        let can_v = |r: &Rect| r.width() >= 2 * min_w;
        let can_h = |r: &Rect| r.height() >= 2 * min_h;
        let pick = rects
            .iter()
            .enumerate()
            .filter(|(_, r)| can_v(r) || can_h(r))
            .max_by(|a, b| a.1.area().cmp(&b.1.area()).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)?;
        let r = rects[pick];
        let vertical = match (can_v(&r), can_h(&r)) {
            (true, true) => r.width() >= r.height(),
            (v, _) => v,
        };
        let (start, len, min) = if vertical {
            (r.x0, r.width(), min_w)
        } else {
            (r.y0, r.height(), min_h)
        };
        let span = (len - 2 * min) as f64;
        let offset = min + (span * rng.random_range(0.3..=0.7)).round() as u32;
        let (a, b) = cut(r, vertical, start + offset);
        rects[pick] = a;
        rects.push(b);
    }
    if rects.len() < c.min_rooms {
        return None;
    }
    let mut layout = LayoutSpec {
        seed,
        outer,
        notch,
        boundary,
        rooms: rects
            .into_iter()
            .map(|rect| Room {
                rect,
                kind: RoomType::Bedroom,
            })
            .collect(),
    };
    assign_types(&mut layout);
    Some(layout)
}

fn assign_types(layout: &mut LayoutSpec) {
    let n = layout.rooms.len();
    let edge: Vec<bool> = layout
        .rooms
        .iter()
        .map(|r| layout.touches_outline(&r.rect))
        .collect();
    let mut free: Vec<bool> = vec![true; n];
    let area = |i: usize| layout.rooms[i].rect.area();
    let living = (0..n)
        .max_by(|&a, &b| area(a).cmp(&area(b)).then(b.cmp(&a)))
        .expect("rooms");
    free[living] = false;
    let mut kinds = vec![RoomType::Bedroom; n];
    kinds[living] = RoomType::Living;

    let smallest = |free: &[bool], need_edge: bool| {
        (0..n)
            .filter(|&i| free[i] && (!need_edge || edge[i]))
            .min_by(|&a, &b| area(a).cmp(&area(b)).then(a.cmp(&b)))
    };
    let mut wet = |free: &mut Vec<bool>, kind| {
        if let Some(i) = smallest(free, true).or_else(|| smallest(free, false)) {
            free[i] = false;
            kinds[i] = kind;
        }
    };
    wet(&mut free, RoomType::Bathroom);
    if n >= 4 {
        wet(&mut free, RoomType::Kitchen);
    }
    let aspect = |i: usize| layout.rooms[i].rect.aspect();
    if n >= 6 {
        let balcony = (0..n)
            .filter(|&i| free[i] && edge[i])
            .max_by(|&a, &b| aspect(a).total_cmp(&aspect(b)).then(b.cmp(&a)));
        if let Some(i) = balcony {
            free[i] = false;
            kinds[i] = RoomType::Balcony;
        }
    }
    if let Some(i) = (0..n).find(|&i| free[i] && aspect(i) >= 3.0) {
        kinds[i] = RoomType::Corridor;
    }
    for (room, kind) in layout.rooms.iter_mut().zip(kinds) {
        room.kind = kind;
    }
}

/// Generates the layout for `seed`; a pure function of its arguments.
pub fn gen_layout(seed: u64, constraints: &LayoutConstraints) -> Result<LayoutSpec> {
    constraints.validate()?;
    for attempt in 0..constraints.max_retries.max(1) {
        let s = if attempt == 0 {
            seed
        } else {
            derive_seed(seed, attempt as u64)
        };
        if let Some(mut layout) = try_layout(s, constraints) {
            layout.seed = seed;
            return Ok(layout);
        }
    }
    Err(Error::ConstraintUnsatisfiable(seed))
}

/// Fill colors per room type (RGB), plus walls and background.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Palette {
    pub living: [u8; 3],
    pub bedroom: [u8; 3],
    pub kitchen: [u8; 3],
    pub bathroom: [u8; 3],
    pub balcony: [u8; 3],
    pub corridor: [u8; 3],
    pub wall: [u8; 3],
    pub background: [u8; 3],
}

impl Default for Palette {
    fn default() -> Self {
        Self {
            living: [0xFF, 0xD9, 0xA0],
            bedroom: [0xA0, 0xC8, 0xFF],
            kitchen: [0xFF, 0xB3, 0xB3],
            bathroom: [0xB3, 0xE6, 0xCC],
            balcony: [0xE6, 0xCC, 0xFF],
            corridor: [0xF0, 0xF0, 0xF0],
            wall: [0, 0, 0],
            background: [0xFF, 0xFF, 0xFF],
        }
    }
}

impl Palette {
    pub fn color(&self, kind: RoomType) -> [u8; 3] {
        match kind {
            RoomType::Living => self.living,
            RoomType::Bedroom => self.bedroom,
            RoomType::Kitchen => self.kitchen,
            RoomType::Bathroom => self.bathroom,
            RoomType::Balcony => self.balcony,
            RoomType::Corridor => self.corridor,
        }
    }
}

pub fn wall_width(resolution: usize) -> usize {
    (resolution / CANVAS as usize).max(1)
}

pub fn render(layout: &LayoutSpec, mode: Mode, resolution: usize) -> Raster {
    render_with(layout, mode, resolution, &Palette::default())
}

/// Rasterizes a layout. Canvas coordinates map to pixels by
/// `round(u * resolution / 128)`; every room edge becomes a wall band of
/// [`wall_width`] pixels centered on the mapped coordinate, so walls
/// shared by two rooms coincide.
pub fn render_with(layout: &LayoutSpec, mode: Mode, resolution: usize, palette: &Palette) -> Raster {
    let res = resolution;
    let map = |u: u32| ((u as f64 * res as f64 / CANVAS as f64).round() as usize).min(res);
    let ch = mode.channels();
    let to_f = |c: [u8; 3]| c.map(|v| v as f32 / 255.0);
    let mut data = vec![0.0f32; res * res * ch];
    let paint = |data: &mut [f32], y: usize, x: usize, rgb: [f32; 3]| {
        let i = (y * res + x) * ch;
        if ch == 1 {
            data[i] = (rgb[0] + rgb[1] + rgb[2]) / 3.0;
        } else {
            data[i..i + 3].copy_from_slice(&rgb);
        }
    };
    let background = to_f(palette.background);
    for y in 0..res {
        for x in 0..res {
            paint(&mut data, y, x, background);
        }
    }
    if mode == Mode::Colored {
        for room in &layout.rooms {
            let rgb = to_f(palette.color(room.kind));
            for y in map(room.rect.y0)..map(room.rect.y1) {
                for x in map(room.rect.x0)..map(room.rect.x1) {
                    paint(&mut data, y, x, rgb);
                }
            }
        }
    }
    let ww = wall_width(res);
    let band = |p: usize| {
        let start = p.saturating_sub(ww.div_ceil(2));
        start..(start + ww).min(res)
    };
    let wall = to_f(palette.wall);
    for room in &layout.rooms {
        let r = room.rect;
        let (px0, px1, py0, py1) = (map(r.x0), map(r.x1), map(r.y0), map(r.y1));
        let ys = band(py0).start..band(py1).end;
        let xs = band(px0).start..band(px1).end;
        for x in [px0, px1] {
            for cx in band(x) {
                for y in ys.clone() {
                    paint(&mut data, y, cx, wall);
                }
            }
        }
        for y in [py0, py1] {
            for cy in band(y) {
                for x in xs.clone() {
                    paint(&mut data, cy, x, wall);
                }
            }
        }
    }
    Raster::new(res, res, mode, data).expect("values in [0, 1] by construction")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        Self {
            train: 7000,
            val: 500,
            test: 500,
        }
    }
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

/// Seed of image `index` within `split`. The split occupies the high bits
/// of the derivation index, which keeps seeds of different splits apart.
pub fn image_seed(master: u64, split: Split, index: usize) -> u64 {
    let tag = match split {
        Split::Train => 0u64,
        Split::Val => 1,
        Split::Test => 2,
    };
    derive_seed(master, (tag << 48) | index as u64)
}

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    #[serde(skip)]
    pub root: PathBuf,
    pub seed: u64,
    pub counts: SplitCounts,
    pub mode: Mode,
    pub resolution: usize,
    pub palette: Palette,
}

fn file_name(index: usize) -> String {
    format!("{index:06}.png")
}

/// Renders all splits to `<out_dir>/{train,val,test}/NNNNNN.png` and writes
/// `manifest.json` last.
pub fn build_corpus(
    out_dir: impl AsRef<Path>,
    counts: SplitCounts,
    seed: u64,
    mode: Mode,
    resolution: usize,
) -> Result<CorpusManifest> {
    build_corpus_with(
        out_dir,
        counts,
        seed,
        mode,
        resolution,
        &LayoutConstraints::default(),
        &Palette::default(),
    )
}

pub fn build_corpus_with(
    out_dir: impl AsRef<Path>,
    counts: SplitCounts,
    seed: u64,
    mode: Mode,
    resolution: usize,
    constraints: &LayoutConstraints,
    palette: &Palette,
) -> Result<CorpusManifest> {
    let root = out_dir.as_ref();
    if resolution == 0 {
        return Err(Error::BadConfig("resolution must be positive".into()));
    }
    for split in Split::ALL {
        let dir = root.join(split.dir_name());
        std::fs::create_dir_all(&dir)?;
        for i in 0..counts.get(split) {
            let layout = gen_layout(image_seed(seed, split, i), constraints)?;
            render_with(&layout, mode, resolution, palette).save_png(dir.join(file_name(i)))?;
        }
    }
    let manifest = CorpusManifest {
        root: root.to_path_buf(),
        seed,
        counts,
        mode,
        resolution,
        palette: *palette,
    };
    std::fs::write(root.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

impl CorpusManifest {
    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let mut manifest: CorpusManifest = serde_json::from_slice(&std::fs::read(root.join(MANIFEST_FILE))?)?;
        manifest.root = root.to_path_buf();
        Ok(manifest)
    }

    pub fn split_dir(&self, split: Split) -> PathBuf {
        self.root.join(split.dir_name())
    }

    /// Checks that every split directory holds exactly the listed files.
    pub fn verify(&self) -> Result<()> {
        for split in Split::ALL {
            let files = list_pngs(self.split_dir(split))?;
            let want = self.counts.get(split);
            if files.len() != want {
                return Err(Error::BadConfig(format!(
                    "{} holds {} images, manifest lists {want}",
                    split.dir_name(),
                    files.len()
                )));
            }
        }
        Ok(())
    }

    pub fn load_split(&self, split: Split, limit: Option<usize>) -> Result<Vec<Raster>> {
        load_dir(self.split_dir(split), self.mode, Some(self.resolution), limit)
    }
}

/// Sorted `.png` paths in `dir`.
pub fn list_pngs(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads the PNGs of one split directory in file-name order. Images of a
/// different size are rescaled to `resolution` when one is given; this is
/// also the import path for externally supplied corpora.
pub fn load_dir(
    dir: impl AsRef<Path>,
    mode: Mode,
    resolution: Option<usize>,
    limit: Option<usize>,
) -> Result<Vec<Raster>> {
    let mut files = list_pngs(dir)?;
    if let Some(n) = limit {
        files.truncate(n);
    }
    files
        .iter()
        .map(|p| Raster::load_png(p, mode, resolution.map(|r| (r, r)), true))
        .collect()
}

/// Loads a split from a corpus root, using its manifest when present and
/// otherwise treating the root as an imported corpus in `mode`.
pub fn load_corpus_split(
    root: impl AsRef<Path>,
    split: Split,
    mode: Mode,
    resolution: Option<usize>,
    limit: Option<usize>,
) -> Result<Vec<Raster>> {
    let root = root.as_ref();
    let images = if root.join(MANIFEST_FILE).exists() {
        let manifest = CorpusManifest::load(root)?;
        load_dir(
            manifest.split_dir(split),
            mode,
            resolution.or(Some(manifest.resolution)),
            limit,
        )?
    } else {
        load_dir(root.join(split.dir_name()), mode, resolution, limit)?
    };
    if images.is_empty() {
        return Err(match split {
            Split::Train => Error::EmptyCorpus,
            _ => Error::EmptySplit,
        });
    }
    Ok(images)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_deterministic() {
        let c = LayoutConstraints::default();
        assert_eq!(gen_layout(7, &c).unwrap(), gen_layout(7, &c).unwrap());
        assert_ne!(gen_layout(7, &c).unwrap(), gen_layout(8, &c).unwrap());
    }

    #[test]
    fn exactly_one_living_room() {
        let c = LayoutConstraints::default();
        for seed in 0..100 {
            assert_eq!(gen_layout(seed, &c).unwrap().count(RoomType::Living), 1);
        }
    }

    #[test]
    fn l_shapes_occur() {
        let c = LayoutConstraints::default();
        let notched = (0..200)
            .filter(|&s| gen_layout(s, &c).unwrap().notch.is_some())
            .count();
        assert!((30..=90).contains(&notched), "{notched} of 200");
    }

    #[test]
    fn bad_constraints() {
        let c = LayoutConstraints {
            min_rooms: 5,
            max_rooms: 4,
            ..LayoutConstraints::default()
        };
        assert!(gen_layout(0, &c).is_err());
    }

    #[test]
    fn impossible_room_count_is_unsatisfiable() {
        // 1/8 minimum sides allow at most 64 rooms.
        let c = LayoutConstraints {
            min_rooms: 100,
            max_rooms: 100,
            max_retries: 3,
            ..LayoutConstraints::default()
        };
        assert!(matches!(
            gen_layout(1, &c),
            Err(Error::ConstraintUnsatisfiable(1))
        ));
    }

    #[test]
    fn line_drawing_is_binary() {
        let layout = gen_layout(3, &LayoutConstraints::default()).unwrap();
        let img = render(&layout, Mode::LineDrawing, 64);
        assert_eq!(img.channels(), 1);
        assert!(img.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(img.data().contains(&0.0));
    }

    #[test]
    fn colored_render_shows_living_room() {
        let layout = gen_layout(4, &LayoutConstraints::default()).unwrap();
        let img = render(&layout, Mode::Colored, 64);
        let want = Palette::default().living.map(|v| v as f32 / 255.0);
        assert!(img.data().chunks(3).any(|px| px == want));
        assert_eq!(img, render(&layout, Mode::Colored, 64));
    }

    #[test]
    fn wall_width_scales() {
        assert_eq!(wall_width(64), 1);
        assert_eq!(wall_width(256), 2);
        assert_eq!(wall_width(512), 4);
    }

    #[test]
    fn split_seeds_disjoint() {
        let mut seen = std::collections::HashSet::new();
        for split in Split::ALL {
            for i in 0..1000 {
                assert!(seen.insert(image_seed(5, split, i)));
            }
        }
    }

    #[test]
    fn corpus_counts_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let counts = SplitCounts {
            train: 10,
            val: 2,
            test: 2,
        };
        let m = build_corpus(dir.path(), counts, 1, Mode::LineDrawing, 32).unwrap();
        let total: usize = Split::ALL
            .iter()
            .map(|&s| list_pngs(m.split_dir(s)).unwrap().len())
            .sum();
        assert_eq!(total, 14);
        let back = CorpusManifest::load(dir.path()).unwrap();
        assert_eq!(back, m);
        back.verify().unwrap();
        let test = back.load_split(Split::Test, None).unwrap();
        assert_eq!(test.len(), 2);
        assert_eq!(test[0].height(), 32);
    }

    #[test]
    fn default_counts() {
        assert_eq!(SplitCounts::default().total(), 8000);
    }
}
