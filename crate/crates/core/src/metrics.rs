//! Image quality metrics and per-strategy evaluation reports.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::image::{Mode, PatchGrid, Raster};
use crate::masking::{MaskPlan, MaskSpec, Strategy};
use crate::model::Mae;
use crate::rng::derive_seed;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

fn check_geometry(a: &Raster, b: &Raster) -> Result<()> {
    if a.same_geometry(b) {
        Ok(())
    } else {
        Err(Error::GeometryMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        )))
    }
}

/// PSNR in dB from a mean squared error; `+inf` when the error is zero.
pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// PSNR over two equally long value slices.
pub fn psnr_values(a: &[f32], b: &[f32], peak: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return f64::INFINITY;
    }
    let sse: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    psnr_from_mse(sse / a.len() as f64, peak)
}

/// `10 log10(peak^2 / MSE)` over every pixel value of both images.
pub fn psnr(a: &Raster, b: &Raster, peak: f64) -> Result<f64> {
    check_geometry(a, b)?;
    Ok(psnr_values(a.data(), b.data(), peak))
}

/// PSNR restricted to the pixels of the masked patches.
pub fn psnr_masked(a: &Raster, b: &Raster, plan: &MaskPlan, peak: f64) -> Result<f64> {
    check_geometry(a, b)?;
    let g = plan.grid;
    if g.height() != a.height() || g.width() != a.width() {
        return Err(Error::GeometryMismatch(
            "plan grid does not cover the image".into(),
        ));
    }
    let (p, c, w) = (g.patch_size, a.channels(), a.width());
    let (mut sse, mut n) = (0.0f64, 0usize);
    for &i in &plan.masked {
        let (r, col) = g.cell(i);
        for y in r * p..(r + 1) * p {
            let start = (y * w + col * p) * c;
            let end = start + p * c;
            for (&x, &z) in a.data()[start..end].iter().zip(&b.data()[start..end]) {
                let d = x as f64 - z as f64;
                sse += d * d;
            }
            n += p * c;
        }
    }
    Ok(if n == 0 {
        f64::INFINITY
    } else {
        psnr_from_mse(sse / n as f64, peak)
    })
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let mid = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - mid).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Valid-mode separable filtering of a row-major `h x w` plane.
fn filter_valid(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = taps.iter().zip(&row[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * tmp[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean SSIM of two single-channel planes over every fully contained
/// 11x11 Gaussian window.
pub fn ssim_plane(a: &[f64], b: &[f64], height: usize, width: usize, peak: f64) -> Result<f64> {
    if height < SSIM_WINDOW || width < SSIM_WINDOW {
        return Err(Error::TooSmall {
            height,
            width,
            window: SSIM_WINDOW,
        });
    }
    let taps = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = filter_valid(a, height, width, &taps);
    let mu_b = filter_valid(b, height, width, &taps);
    let e_aa = filter_valid(&prod(a, a), height, width, &taps);
    let e_bb = filter_valid(&prod(b, b), height, width, &taps);
    let e_ab = filter_valid(&prod(a, b), height, width, &taps);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

/// SSIM on luminance (channel mean for colored images).
pub fn ssim(a: &Raster, b: &Raster, peak: f64) -> Result<f64> {
    check_geometry(a, b)?;
    ssim_plane(&a.luminance(), &b.luminance(), a.height(), a.width(), peak)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricPair {
    #[serde(serialize_with = "ser_db")]
    pub psnr: f64,
    pub ssim: f64,
}

impl MetricPair {
    pub fn compute(a: &Raster, b: &Raster) -> Result<Self> {
        Ok(Self {
            psnr: psnr(a, b, 1.0)?,
            ssim: ssim(a, b, 1.0)?,
        })
    }
}

/// JSON has no infinity; infinite dB values are written as `"inf"`.
pub fn ser_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
    } else {
        s.serialize_f64(*v)
    }
}

/// Anything that can fill masked patches of an image.
pub trait Reconstructor {
    fn grid(&self) -> PatchGrid;
    fn reconstruct(&self, image: &Raster, plan: &MaskPlan) -> Result<Raster>;
}

impl Reconstructor for Mae<f32> {
    fn grid(&self) -> PatchGrid {
        Mae::grid(self)
    }

    fn reconstruct(&self, image: &Raster, plan: &MaskPlan) -> Result<Raster> {
        Mae::reconstruct(self, image, plan)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub method: String,
    pub strategy: Strategy,
    pub ratio: f64,
    pub data: String,
    pub fid: String,
    #[serde(serialize_with = "ser_db")]
    pub psnr: f64,
    pub ssim: f64,
    pub realized_ratio: f64,
    #[serde(serialize_with = "ser_db")]
    pub psnr_masked: f64,
    pub n_images: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

impl EvalReport {
    const HEADER: [&'static str; 7] = [
        "Method",
        "DATA",
        "FID",
        "PSNR",
        "SSIM",
        "realized_ratio",
        "psnr_masked",
    ];

    fn cells(row: &EvalRow) -> [String; 7] {
        [
            row.method.clone(),
            row.data.clone(),
            row.fid.clone(),
            fmt_db(row.psnr),
            format!("{:.4}", row.ssim),
            format!("{:.4}", row.realized_ratio),
            fmt_db(row.psnr_masked),
        ]
    }

    pub fn to_csv(&self) -> String {
        let mut out = Self::HEADER.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&Self::cells(row).join(","));
            out.push('\n');
        }
        out
    }

    /// Aligned plain-text table, one line per row, columns separated by ` | `.
    pub fn to_table(&self) -> String {
        let body: Vec<[String; 7]> = self.rows.iter().map(Self::cells).collect();
        let mut widths = Self::HEADER.map(str::len);
        for cells in &body {
            for (w, c) in widths.iter_mut().zip(cells) {
                *w = (*w).max(c.len());
            }
        }
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join(" | ")
                .trim_end()
                .to_string()
        };
        let header: Vec<String> = Self::HEADER.iter().map(|s| s.to_string()).collect();
        let mut out = line(&header);
        out.push('\n');
        out.push_str(
            &widths
                .iter()
                .map(|&w| "-".repeat(w))
                .collect::<Vec<_>>()
                .join("-|-"),
        );
        out.push('\n');
        for cells in &body {
            out.push_str(&line(cells));
            out.push('\n');
        }
        out
    }

    pub fn row(&self, strategy: Strategy) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.strategy == strategy)
    }
}

/// Mask, reconstruct and score every image under every spec.
///
/// Random plans are seeded per image index from `spec.seed`, so all
/// rows see the same images and results do not depend on iteration order.
pub fn evaluate<R: Reconstructor + ?Sized>(
    model: &R,
    images: &[Raster],
    specs: &[MaskSpec],
) -> Result<EvalReport> {
    let first = images.first().ok_or(Error::EmptySplit)?;
    for img in images {
        check_geometry(first, img)?;
    }
    let grid = model.grid();
    if grid.height() != first.height() || grid.width() != first.width() {
        return Err(Error::GeometryMismatch(format!(
            "model expects {}x{} images, split has {}x{}",
            grid.height(),
            grid.width(),
            first.height(),
            first.width()
        )));
    }
    let mode: Mode = first.mode();
    let mut rows = Vec::with_capacity(specs.len());
    for spec in specs {
        let (mut p, mut s, mut r, mut pm) = (0.0, 0.0, 0.0, 0.0);
        for (i, img) in images.iter().enumerate() {
            let plan = spec.with_seed(derive_seed(spec.seed, i as u64)).plan(grid)?;
            let out = model.reconstruct(img, &plan)?;
            let pair = MetricPair::compute(&out, img)?;
            p += pair.psnr;
            s += pair.ssim;
            r += plan.realized_ratio();
            pm += psnr_masked(&out, img, &plan, 1.0)?;
        }
        let n = images.len() as f64;
        rows.push(EvalRow {
            method: spec.strategy.label().to_string(),
            strategy: spec.strategy,
            ratio: spec.ratio,
            data: mode.label().to_string(),
            fid: "n/a".into(),
            psnr: p / n,
            ssim: s / n,
            realized_ratio: r / n,
            psnr_masked: pm / n,
            n_images: images.len(),
        });
    }
    Ok(EvalReport { rows })
}
