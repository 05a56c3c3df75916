//! Rasters, patch-grid geometry and the fixed 2D sine-cosine positional
//! embedding.

use std::io::Cursor;
use std::path::Path;

use ::image::{DynamicImage, GrayImage, ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Colored,
    #[serde(alias = "line")]
    LineDrawing,
}

impl Mode {
    pub fn channels(self) -> usize {
        match self {
            Mode::Colored => 3,
            Mode::LineDrawing => 1,
        }
    }

    pub fn from_channels(channels: usize) -> Result<Self> {
        match channels {
            1 => Ok(Mode::LineDrawing),
            3 => Ok(Mode::Colored),
            c => Err(Error::InvalidRaster(format!("unsupported channel count {c}"))),
        }
    }

    /// Label used in evaluation reports.
    pub fn label(self) -> &'static str {
        match self {
            Mode::Colored => "Colored Drawing",
            Mode::LineDrawing => "Line Drawing",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "colored" => Ok(Mode::Colored),
            "line" | "line_drawing" => Ok(Mode::LineDrawing),
            other => Err(Error::InvalidRaster(format!("unknown mode {other:?}"))),
        }
    }
}

/// Row-major `height x width x channels` image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    height: usize,
    width: usize,
    mode: Mode,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(height: usize, width: usize, mode: Mode, data: Vec<f32>) -> Result<Self> {
        let expected = height * width * mode.channels();
        if data.len() != expected {
            return Err(Error::InvalidRaster(format!(
                "expected {expected} values for {height}x{width}x{}, got {}",
                mode.channels(),
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidRaster(format!("value {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            mode,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, mode: Mode, value: f32) -> Self {
        assert!((0.0..=1.0).contains(&value));
        Self {
            height,
            width,
            mode,
            data: vec![value; height * width * mode.channels()],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.mode.channels()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels() + c]
    }

    /// Sets one sample, clamping into `[0, 1]`.
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        let ch = self.channels();
        self.data[(y * self.width + x) * ch + c] = v.clamp(0.0, 1.0);
    }

    pub fn same_geometry(&self, other: &Raster) -> bool {
        self.height == other.height && self.width == other.width && self.mode == other.mode
    }

    /// Per-pixel channel mean, as 64-bit luminance plane.
    pub fn luminance(&self) -> Vec<f64> {
        let ch = self.channels();
        self.data
            .chunks_exact(ch)
            .map(|px| px.iter().map(|&v| v as f64).sum::<f64>() / ch as f64)
            .collect()
    }

    pub fn from_dynamic(img: &DynamicImage, mode: Mode) -> Self {
        let (width, height) = (img.width() as usize, img.height() as usize);
        let data: Vec<f32> = match mode {
            Mode::LineDrawing => img.to_luma8().into_raw(),
            Mode::Colored => img.to_rgb8().into_raw(),
        }
        .into_iter()
        .map(|v| v as f32 / 255.0)
        .collect();
        Self {
            height,
            width,
            mode,
            data,
        }
    }

    pub fn to_dynamic(&self) -> DynamicImage {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        let (w, h) = (self.width as u32, self.height as u32);
        match self.mode {
            Mode::LineDrawing => DynamicImage::ImageLuma8(
                GrayImage::from_raw(w, h, bytes).expect("buffer sized by construction"),
            ),
            Mode::Colored => DynamicImage::ImageRgb8(
                RgbImage::from_raw(w, h, bytes).expect("buffer sized by construction"),
            ),
        }
    }

    /// Decodes PNG bytes. With `expect = Some((h, w))` the size is checked,
    /// or the image is rescaled when `resize` is set.
    pub fn from_png_bytes(
        bytes: &[u8],
        mode: Mode,
        expect: Option<(usize, usize)>,
        resize: bool,
    ) -> Result<Self> {
        let img = ::image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
        Self::conform(img, mode, expect, resize)
    }

    pub fn load_png(
        path: impl AsRef<Path>,
        mode: Mode,
        expect: Option<(usize, usize)>,
        resize: bool,
    ) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_png_bytes(&bytes, mode, expect, resize)
    }

    fn conform(img: DynamicImage, mode: Mode, expect: Option<(usize, usize)>, resize: bool) -> Result<Self> {
        let img = match expect {
            Some((h, w)) if img.height() as usize != h || img.width() as usize != w => {
                if !resize {
                    return Err(Error::GeometryMismatch(format!(
                        "image is {}x{}, expected {h}x{w}",
                        img.height(),
                        img.width()
                    )));
                }
                img.resize_exact(w as u32, h as u32, ::image::imageops::FilterType::Triangle)
            }
            _ => img,
        };
        Ok(Self::from_dynamic(&img, mode))
    }

    /// 8-bit PNG encoding; samples map to `round(v * 255)`.
    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Cursor::new(Vec::new());
        self.to_dynamic().write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_png_bytes()?)?;
        Ok(())
    }
}

/// Non-overlapping square patch tiling of an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchGrid {
    pub rows: usize,
    pub cols: usize,
    pub patch_size: usize,
}

impl PatchGrid {
    pub fn new(height: usize, width: usize, patch_size: usize) -> Result<Self> {
        if patch_size == 0 || !height.is_multiple_of(patch_size) || !width.is_multiple_of(patch_size) {
            return Err(Error::NonDivisiblePatchSize {
                patch: patch_size,
                height,
                width,
            });
        }
        Ok(Self {
            rows: height / patch_size,
            cols: width / patch_size,
            patch_size,
        })
    }

    /// Grid from dimensions alone, for masking code that never touches
    /// pixels.
    pub fn with_shape(rows: usize, cols: usize, patch_size: usize) -> Self {
        Self {
            rows,
            cols,
            patch_size,
        }
    }

    pub fn num_patches(&self) -> usize {
        self.rows * self.cols
    }

    pub fn height(&self) -> usize {
        self.rows * self.patch_size
    }

    pub fn width(&self) -> usize {
        self.cols * self.patch_size
    }

    pub fn cell(&self, index: usize) -> (usize, usize) {
        (index / self.cols, index % self.cols)
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }
}

/// Flattened patches in row-major grid order, each patch itself the
/// row-major flattening of its `P x P x C` block.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSequence {
    grid: PatchGrid,
    channels: usize,
    data: Vec<f32>,
}

impl PatchSequence {
    pub fn new(grid: PatchGrid, channels: usize, data: Vec<f32>) -> Result<Self> {
        let dim = grid.patch_size * grid.patch_size * channels;
        if data.len() != grid.num_patches() * dim {
            return Err(Error::InconsistentSequence(format!(
                "{} values cannot hold {} patches of {dim}",
                data.len(),
                grid.num_patches()
            )));
        }
        Ok(Self { grid, channels, data })
    }

    pub fn from_patches(grid: PatchGrid, channels: usize, patches: Vec<Vec<f32>>) -> Result<Self> {
        let dim = grid.patch_size * grid.patch_size * channels;
        if patches.len() != grid.num_patches() {
            return Err(Error::InconsistentSequence(format!(
                "grid has {} cells but {} patches were given",
                grid.num_patches(),
                patches.len()
            )));
        }
        if let Some((i, p)) = patches.iter().enumerate().find(|(_, p)| p.len() != dim) {
            return Err(Error::InconsistentSequence(format!(
                "patch {i} has {} values, expected {dim}",
                p.len()
            )));
        }
        Ok(Self {
            grid,
            channels,
            data: patches.concat(),
        })
    }

    pub fn grid(&self) -> PatchGrid {
        self.grid
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn patch_dim(&self) -> usize {
        self.grid.patch_size * self.grid.patch_size * self.channels
    }

    pub fn len(&self) -> usize {
        self.grid.num_patches()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn patch(&self, i: usize) -> &[f32] {
        let d = self.patch_dim();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn patch_mut(&mut self, i: usize) -> &mut [f32] {
        let d = self.patch_dim();
        &mut self.data[i * d..(i + 1) * d]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

pub fn patchify(image: &Raster, patch_size: usize) -> Result<PatchSequence> {
    let grid = PatchGrid::new(image.height(), image.width(), patch_size)?;
    let ch = image.channels();
    let p = patch_size;
    let row_len = p * ch;
    let mut data = Vec::with_capacity(image.data.len());
    for gr in 0..grid.rows {
        for gc in 0..grid.cols {
            for py in 0..p {
                let start = ((gr * p + py) * image.width() + gc * p) * ch;
                data.extend_from_slice(&image.data[start..start + row_len]);
            }
        }
    }
    PatchSequence::new(grid, ch, data)
}

/// Inverse of [`patchify`]. With `clamp` set, values are clamped into
/// `[0, 1]`; otherwise an out-of-range value is an error.
pub fn unpatchify(seq: &PatchSequence, clamp: bool) -> Result<Raster> {
    let grid = seq.grid;
    let dim = seq.patch_dim();
    if seq.data.len() != grid.num_patches() * dim {
        return Err(Error::InconsistentSequence("length disagrees with grid".into()));
    }
    let mode = Mode::from_channels(seq.channels)?;
    let (h, w, p, ch) = (grid.height(), grid.width(), grid.patch_size, seq.channels);
    let row_len = p * ch;
    let mut data = vec![0.0f32; h * w * ch];
    for (i, patch) in seq.data.chunks_exact(dim).enumerate() {
        let (gr, gc) = grid.cell(i);
        for py in 0..p {
            let start = ((gr * p + py) * w + gc * p) * ch;
            data[start..start + row_len].copy_from_slice(&patch[py * row_len..(py + 1) * row_len]);
        }
    }
    if clamp {
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
    }
    Raster::new(h, w, mode, data)
}

/// Fixed 2D sine-cosine table, one `dim`-wide vector per patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PosEmbedTable {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    pub table: Vec<f64>,
}

impl PosEmbedTable {
    pub fn vector(&self, index: usize) -> &[f64] {
        &self.table[index * self.dim..(index + 1) * self.dim]
    }
}

/// For the patch at `(r, c)` the first half of the vector encodes `c` and
/// the second half `r`. Each half interleaves `sin(p * w_k)` and
/// `cos(p * w_k)` with `w_k = 10000^(-2k / (dim / 2))`, `k < dim / 4`.
pub fn pos_embed(grid: &PatchGrid, dim: usize) -> Result<PosEmbedTable> {
    if dim == 0 || !dim.is_multiple_of(4) {
        return Err(Error::BadDim(dim));
    }
    let half = dim / 2;
    let freqs: Vec<f64> = (0..dim / 4)
        .map(|k| 1.0 / 10000f64.powf(2.0 * k as f64 / half as f64))
        .collect();
    let mut table = Vec::with_capacity(grid.num_patches() * dim);
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            for pos in [c as f64, r as f64] {
                for &w in &freqs {
                    table.push((pos * w).sin());
                    table.push((pos * w).cos());
                }
            }
        }
    }
    Ok(PosEmbedTable {
        rows: grid.rows,
        cols: grid.cols,
        dim,
        table,
    })
}
