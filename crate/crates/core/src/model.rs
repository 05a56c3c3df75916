//! Asymmetric masked autoencoder.
//!
//! The encoder embeds only the visible patches (linear projection plus a
//! fixed sine-cosine position code), runs `enc_depth` pre-norm blocks and a
//! final norm. The decoder projects those latents to `dec_dim`, scatters
//! them back to their grid positions, fills every masked position with the
//! one shared `mask_token`, adds its own position code to all `N` tokens,
//! runs `dec_depth` blocks and a final norm, and a linear head predicts the
//! raw pixels of every patch. There is no class token.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{patchify, pos_embed, unpatchify, PatchGrid, PatchSequence, Raster};
use crate::masking::MaskPlan;
use crate::nn::{Block, BlockCache, LayerNorm, LayerNormCache, Linear, Mat, ParamSet, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub enc_dim: usize,
    pub enc_depth: usize,
    pub enc_heads: usize,
    pub dec_dim: usize,
    pub dec_depth: usize,
    pub dec_heads: usize,
    pub mlp_ratio: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// 256x256 images, 16-pixel patches, 192/4/3 encoder, 96/2/3 decoder.
    pub fn standard(channels: usize) -> Self {
        Self {
            image_size: 256,
            patch_size: 16,
            channels,
            enc_dim: 192,
            enc_depth: 4,
            enc_heads: 3,
            dec_dim: 96,
            dec_depth: 2,
            dec_heads: 3,
            mlp_ratio: 4.0,
            seed: 0,
        }
    }

    /// 64x64 images, 8-pixel patches, 64/2/4 encoder, 32/1/4 decoder.
    pub fn desk(channels: usize) -> Self {
        Self {
            image_size: 64,
            patch_size: 8,
            channels,
            enc_dim: 64,
            enc_depth: 2,
            enc_heads: 4,
            dec_dim: 32,
            dec_depth: 1,
            dec_heads: 4,
            mlp_ratio: 4.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::BadConfig(msg));
        if self.channels != 1 && self.channels != 3 {
            return bad(format!("channels must be 1 or 3, got {}", self.channels));
        }
        if self.patch_size == 0 || self.image_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return bad(format!(
                "patch_size {} must divide image_size {}",
                self.patch_size, self.image_size
            ));
        }
        for (name, dim, heads) in [
            ("enc", self.enc_dim, self.enc_heads),
            ("dec", self.dec_dim, self.dec_heads),
        ] {
            if heads == 0 || dim == 0 || dim % heads != 0 {
                return bad(format!("{name}_dim {dim} not divisible by {name}_heads {heads}"));
            }
            if dim % 4 != 0 {
                return bad(format!("{name}_dim {dim} not divisible by 4"));
            }
        }
        if !(self.mlp_ratio > 0.0 && self.mlp_ratio.is_finite()) {
            return bad(format!("mlp_ratio {} must be positive", self.mlp_ratio));
        }
        Ok(())
    }

    pub fn grid(&self) -> PatchGrid {
        PatchGrid::with_shape(
            self.image_size / self.patch_size,
            self.image_size / self.patch_size,
            self.patch_size,
        )
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn enc_hidden(&self) -> usize {
        ((self.enc_dim as f64 * self.mlp_ratio).round() as usize).max(1)
    }

    pub fn dec_hidden(&self) -> usize {
        ((self.dec_dim as f64 * self.mlp_ratio).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub patch_embed: Linear<T>,
    pub encoder_blocks: Vec<Block<T>>,
    pub encoder_norm: LayerNorm<T>,
    pub decoder_embed: Linear<T>,
    pub mask_token: Tensor<T>,
    pub decoder_blocks: Vec<Block<T>>,
    pub decoder_norm: LayerNorm<T>,
    pub head: Linear<T>,
}

impl<T: Scalar> ModelParams<T> {
    /// All tensors zero, shaped for `config`.
    pub fn zeros(config: &ModelConfig) -> Self {
        let pd = config.patch_dim();
        Self {
            patch_embed: Linear::zeros(config.enc_dim, pd),
            encoder_blocks: (0..config.enc_depth)
                .map(|_| Block::zeros(config.enc_dim, config.enc_heads, config.enc_hidden()))
                .collect(),
            encoder_norm: LayerNorm::zeros(config.enc_dim),
            decoder_embed: Linear::zeros(config.dec_dim, config.enc_dim),
            mask_token: Tensor::zeros(&[config.dec_dim]),
            decoder_blocks: (0..config.dec_depth)
                .map(|_| Block::zeros(config.dec_dim, config.dec_heads, config.dec_hidden()))
                .collect(),
            decoder_norm: LayerNorm::zeros(config.dec_dim),
            head: Linear::zeros(pd, config.dec_dim),
        }
    }

    /// Weight matrices and the mask token from a truncated normal (std
    /// 0.02, cut at two standard deviations), biases and norm shifts zero,
    /// norm scales one. Deterministic in `config.seed`.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = Self::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for (name, t) in params.tensors_mut() {
            let is_weight = name.ends_with(".weight");
            if t.shape.len() == 2 || name == "mask_token" {
                for v in &mut t.data {
                    *v = T::of(0.02 * truncated_normal(&mut rng));
                }
            } else if is_weight {
                t.data.fill(T::one());
            }
        }
        Ok(params)
    }

    pub fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.visit("", &mut out);
        out.into_iter()
            .map(|(n, t)| (n.trim_start_matches('.').to_string(), t))
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        self.visit_mut("", &mut out);
        out.into_iter()
            .map(|(n, t)| (n.trim_start_matches('.').to_string(), t))
            .collect()
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.data.fill(T::zero());
        }
        z
    }

    /// Elementwise conversion to another precision.
    pub fn cast<U: Scalar>(&self, config: &ModelConfig) -> ModelParams<U> {
        let mut out = ModelParams::<U>::zeros(config);
        for ((_, dst), (_, src)) in out.tensors_mut().into_iter().zip(self.tensors()) {
            for (d, &s) in dst.data.iter_mut().zip(&src.data) {
                *d = U::of(s.to_f64().expect("finite"));
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.data.iter().all(|v| v.is_finite()))
    }
}

impl<T: Scalar> ParamSet<T> for ModelParams<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.patch_embed.visit(&format!("{prefix}.patch_embed"), out);
        for (i, b) in self.encoder_blocks.iter().enumerate() {
            b.visit(&format!("{prefix}.encoder.blocks.{i}"), out);
        }
        self.encoder_norm.visit(&format!("{prefix}.encoder.norm"), out);
        self.decoder_embed.visit(&format!("{prefix}.decoder_embed"), out);
        out.push((format!("{prefix}.mask_token"), &self.mask_token));
        for (i, b) in self.decoder_blocks.iter().enumerate() {
            b.visit(&format!("{prefix}.decoder.blocks.{i}"), out);
        }
        self.decoder_norm.visit(&format!("{prefix}.decoder.norm"), out);
        self.head.visit(&format!("{prefix}.head"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.patch_embed.visit_mut(&format!("{prefix}.patch_embed"), out);
        for (i, b) in self.encoder_blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("{prefix}.encoder.blocks.{i}"), out);
        }
        self.encoder_norm
            .visit_mut(&format!("{prefix}.encoder.norm"), out);
        self.decoder_embed
            .visit_mut(&format!("{prefix}.decoder_embed"), out);
        out.push((format!("{prefix}.mask_token"), &mut self.mask_token));
        for (i, b) in self.decoder_blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("{prefix}.decoder.blocks.{i}"), out);
        }
        self.decoder_norm
            .visit_mut(&format!("{prefix}.decoder.norm"), out);
        self.head.visit_mut(&format!("{prefix}.head"), out);
    }
}

fn truncated_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z;
        }
    }
}

/// Intermediate values of one forward pass, consumed by
/// [`Mae::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    visible: Vec<usize>,
    masked: Vec<usize>,
    x_vis: Mat<T>,
    enc_blocks: Vec<BlockCache<T>>,
    enc_norm: LayerNormCache<T>,
    latent: Mat<T>,
    dec_blocks: Vec<BlockCache<T>>,
    dec_norm: LayerNormCache<T>,
    dec_out: Mat<T>,
}

/// A configured model with its parameters and position tables.
#[derive(Debug, Clone)]
pub struct Mae<T> {
    config: ModelConfig,
    pub params: ModelParams<T>,
    enc_pos: Mat<T>,
    dec_pos: Mat<T>,
}

fn table_to_mat<T: Scalar>(grid: &PatchGrid, dim: usize) -> Result<Mat<T>> {
    let t = pos_embed(grid, dim)?;
    Ok(Mat::from_vec(
        grid.num_patches(),
        dim,
        t.table.iter().map(|&v| T::of(v)).collect(),
    ))
}

impl<T: Scalar> Mae<T> {
    pub fn new(config: ModelConfig, params: ModelParams<T>) -> Result<Self> {
        config.validate()?;
        let expected = ModelParams::<T>::zeros(&config);
        let shapes_match = expected.tensors().len() == params.tensors().len()
            && expected
                .tensors()
                .iter()
                .zip(params.tensors())
                .all(|((na, a), (nb, b))| *na == nb && a.shape == b.shape);
        if !shapes_match {
            return Err(Error::ShapeMismatch("parameters do not match config".into()));
        }
        let grid = config.grid();
        Ok(Self {
            enc_pos: table_to_mat(&grid, config.enc_dim)?,
            dec_pos: table_to_mat(&grid, config.dec_dim)?,
            config,
            params,
        })
    }

    pub fn init(config: ModelConfig) -> Result<Self> {
        let params = ModelParams::init(&config)?;
        Self::new(config, params)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn grid(&self) -> PatchGrid {
        self.config.grid()
    }

    fn check_plan(&self, plan: &MaskPlan) -> Result<()> {
        if plan.grid != self.grid() {
            return Err(Error::GeometryMismatch(format!(
                "plan grid {:?} does not match model grid {:?}",
                plan.grid,
                self.grid()
            )));
        }
        plan.validate()
    }

    /// Patch matrix (`N x patch_dim`) for a sequence of this model's geometry.
    pub fn patch_matrix(&self, patches: &PatchSequence) -> Result<Mat<T>> {
        if patches.grid() != self.grid() || patches.channels() != self.config.channels {
            return Err(Error::GeometryMismatch(format!(
                "patches {:?}x{} do not match model {:?}x{}",
                patches.grid(),
                patches.channels(),
                self.grid(),
                self.config.channels
            )));
        }
        Ok(Mat::from_vec(
            patches.len(),
            patches.patch_dim(),
            patches.data().iter().map(|&v| T::of(v as f64)).collect(),
        ))
    }

    pub fn image_patches(&self, image: &Raster) -> Result<Mat<T>> {
        if image.height() != self.config.image_size
            || image.width() != self.config.image_size
            || image.channels() != self.config.channels
        {
            return Err(Error::GeometryMismatch(format!(
                "image {}x{}x{} does not match model {s}x{s}x{}",
                image.height(),
                image.width(),
                image.channels(),
                self.config.channels,
                s = self.config.image_size
            )));
        }
        self.patch_matrix(&patchify(image, self.config.patch_size)?)
    }

    fn encode_inner(
        &self,
        patches: &Mat<T>,
        visible: &[usize],
    ) -> (Mat<T>, Mat<T>, Vec<BlockCache<T>>, LayerNormCache<T>) {
        let pd = patches.cols;
        let mut x_vis = Mat::zeros(visible.len(), pd);
        for (k, &i) in visible.iter().enumerate() {
            x_vis.row_mut(k).copy_from_slice(patches.row(i));
        }
        let mut h = self.params.patch_embed.forward(&x_vis);
        for (k, &i) in visible.iter().enumerate() {
            for (v, &p) in h.row_mut(k).iter_mut().zip(self.enc_pos.row(i)) {
                *v += p;
            }
        }
        let mut caches = Vec::with_capacity(self.params.encoder_blocks.len());
        for block in &self.params.encoder_blocks {
            let (next, cache) = block.forward(&h);
            caches.push(cache);
            h = next;
        }
        let (latent, norm) = self.params.encoder_norm.forward(&h);
        (x_vis, latent, caches, norm)
    }

    /// Latent tokens for the visible patches, in ascending visible-index
    /// order.
    pub fn encode_mat(&self, patches: &Mat<T>, plan: &MaskPlan) -> Result<Mat<T>> {
        self.check_plan(plan)?;
        Ok(self.encode_inner(patches, &plan.visible()).1)
    }

    pub fn encode(&self, patches: &PatchSequence, plan: &MaskPlan) -> Result<Mat<T>> {
        let m = self.patch_matrix(patches)?;
        self.encode_mat(&m, plan)
    }

    /// Full decoder input before position codes: projected latents at
    /// visible positions, the shared mask token everywhere else.
    pub fn assemble_tokens(&self, latents: &Mat<T>, plan: &MaskPlan) -> Result<Mat<T>> {
        self.check_plan(plan)?;
        let visible = plan.visible();
        if latents.rows != visible.len() || latents.cols != self.config.enc_dim {
            return Err(Error::GeometryMismatch(format!(
                "{}x{} latents for {} visible patches of width {}",
                latents.rows,
                latents.cols,
                visible.len(),
                self.config.enc_dim
            )));
        }
        Ok(self.scatter(
            &self.params.decoder_embed.forward(latents),
            &visible,
            &plan.masked,
        ))
    }

    fn scatter(&self, projected: &Mat<T>, visible: &[usize], masked: &[usize]) -> Mat<T> {
        let n = visible.len() + masked.len();
        let mut t = Mat::zeros(n, self.config.dec_dim);
        for (k, &i) in visible.iter().enumerate() {
            t.row_mut(i).copy_from_slice(projected.row(k));
        }
        for &i in masked {
            t.row_mut(i).copy_from_slice(&self.params.mask_token.data);
        }
        t
    }

    fn decode_inner(&self, mut t: Mat<T>) -> (Mat<T>, Vec<BlockCache<T>>, LayerNormCache<T>, Mat<T>) {
        t.add_assign(&self.dec_pos);
        let mut caches = Vec::with_capacity(self.params.decoder_blocks.len());
        for block in &self.params.decoder_blocks {
            let (next, cache) = block.forward(&t);
            caches.push(cache);
            t = next;
        }
        let (out, norm) = self.params.decoder_norm.forward(&t);
        let pred = self.params.head.forward(&out);
        (pred, caches, norm, out)
    }

    /// Predicted pixels for all `N` patches (`N x patch_dim`).
    pub fn decode_mat(&self, latents: &Mat<T>, plan: &MaskPlan) -> Result<Mat<T>> {
        let t = self.assemble_tokens(latents, plan)?;
        Ok(self.decode_inner(t).0)
    }

    pub fn decode(&self, latents: &Mat<T>, plan: &MaskPlan) -> Result<PatchSequence> {
        let pred = self.decode_mat(latents, plan)?;
        PatchSequence::new(
            self.grid(),
            self.config.channels,
            pred.data.iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect(),
        )
    }

    /// Forward pass keeping everything needed for [`Mae::backward`].
    pub fn forward(&self, patches: &Mat<T>, plan: &MaskPlan) -> Result<(Mat<T>, ForwardCache<T>)> {
        self.check_plan(plan)?;
        if patches.rows != self.grid().num_patches() || patches.cols != self.config.patch_dim() {
            return Err(Error::GeometryMismatch("patch matrix shape".into()));
        }
        let visible = plan.visible();
        let (x_vis, latent, enc_blocks, enc_norm) = self.encode_inner(patches, &visible);
        let projected = self.params.decoder_embed.forward(&latent);
        let tokens = self.scatter(&projected, &visible, &plan.masked);
        let (pred, dec_blocks, dec_norm, dec_out) = self.decode_inner(tokens);
        Ok((
            pred,
            ForwardCache {
                visible,
                masked: plan.masked.clone(),
                x_vis,
                enc_blocks,
                enc_norm,
                latent,
                dec_blocks,
                dec_norm,
                dec_out,
            },
        ))
    }

    /// Accumulates `dL/dparams` into `grads` given `dL/dpred`.
    pub fn backward(&self, cache: &ForwardCache<T>, dpred: &Mat<T>, grads: &mut ModelParams<T>) {
        let p = &self.params;
        let dout = p
            .head
            .backward(&cache.dec_out, dpred, &mut grads.head, true)
            .expect("requested");
        let mut dt = p
            .decoder_norm
            .backward(&cache.dec_norm, &dout, &mut grads.decoder_norm);
        for (i, block) in p.decoder_blocks.iter().enumerate().rev() {
            dt = block.backward(&cache.dec_blocks[i], &dt, &mut grads.decoder_blocks[i]);
        }
        for &i in &cache.masked {
            for (g, &d) in grads.mask_token.data.iter_mut().zip(dt.row(i)) {
                *g += d;
            }
        }
        let mut dproj = Mat::zeros(cache.visible.len(), self.config.dec_dim);
        for (k, &i) in cache.visible.iter().enumerate() {
            dproj.row_mut(k).copy_from_slice(dt.row(i));
        }
        let dlatent = p
            .decoder_embed
            .backward(&cache.latent, &dproj, &mut grads.decoder_embed, true)
            .expect("requested");
        let mut dh = p
            .encoder_norm
            .backward(&cache.enc_norm, &dlatent, &mut grads.encoder_norm);
        for (i, block) in p.encoder_blocks.iter().enumerate().rev() {
            dh = block.backward(&cache.enc_blocks[i], &dh, &mut grads.encoder_blocks[i]);
        }
        p.patch_embed
            .backward(&cache.x_vis, &dh, &mut grads.patch_embed, false);
    }

    /// Composite completion: visible patches copied from `image`, masked
    /// patches from the decoder, clamped to `[0, 1]`.
    pub fn reconstruct(&self, image: &Raster, plan: &MaskPlan) -> Result<Raster> {
        let patches = self.image_patches(image)?;
        self.check_plan(plan)?;
        let mut seq = patchify(image, self.config.patch_size)?;
        if !plan.masked.is_empty() {
            let (pred, _) = self.forward(&patches, plan)?;
            for &i in &plan.masked {
                for (dst, v) in seq.patch_mut(i).iter_mut().zip(pred.row(i)) {
                    *dst = v.to_f32().unwrap_or(0.0);
                }
            }
        }
        unpatchify(&seq, true)
    }
}
