//! Convolutional VAE with a normal-map-conditioned decoder and an MLP
//! total-correlation discriminator.
//!
//! The encoder sees only the image. The decoder receives the latent code and
//! the object's normals (three components plus a footprint mask), resampled
//! to each upsampling stage it is injected into.

mod weights;

pub use weights::{load_weights, save_weights, WeightsInfo, WEIGHTS_SCHEMA_VERSION};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::dataset::CONDITIONING_CHANNELS;
use crate::error::{Error, Result, ShapeError};
use crate::image::{resample_planes, Filter, Image};
use crate::nn::{Bound, Conv2d, ConvTranspose2d, Linear, ParamStore};
use crate::rng::{self, Stream};
use crate::tensor::{Scalar, Tensor};

/// Slope of the discriminator's leaky rectifiers.
pub const DISC_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub image_resolution: usize,
    /// Output channels of the stride-2 encoder convolutions.
    pub encoder_channels: Vec<usize>,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    /// Channels of the reshaped dense output, then of each upsampling stage.
    pub decoder_channels: Vec<usize>,
    /// Upsampling stages that receive no normals, counted from the coarsest.
    pub normal_injection_skip: usize,
    pub use_normals: bool,
    pub normal_filter: Filter,
    pub discriminator_width: usize,
    pub discriminator_depth: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 6,
            image_resolution: 64,
            encoder_channels: vec![32, 32, 64, 128],
            encoder_hidden: 256,
            decoder_hidden: 256,
            decoder_channels: vec![128, 64, 32, 32, 16],
            normal_injection_skip: 2,
            use_normals: true,
            normal_filter: Filter::Bilinear,
            discriminator_width: 1000,
            discriminator_depth: 6,
        }
    }
}

impl ModelConfig {
    pub fn upsampling_layers(&self) -> usize {
        self.decoder_channels.len().saturating_sub(1)
    }

    /// Spatial size after the encoder, where the decoder starts.
    pub fn base_resolution(&self) -> usize {
        self.image_resolution >> self.encoder_channels.len()
    }

    /// Input resolution of upsampling stage `s`.
    pub fn stage_resolution(&self, s: usize) -> usize {
        self.base_resolution() << s
    }

    pub fn injects_at(&self, stage: usize) -> bool {
        self.use_normals && stage >= self.normal_injection_skip
    }

    /// Structural consistency; small test models pass this but not [`Self::validate`].
    pub fn check_structure(&self) -> Result<()> {
        let l = self.encoder_channels.len();
        let err = |m: String| Err(Error::Config(m));
        if self.latent_dim == 0 {
            return err("latent_dim must be >= 1".into());
        }
        if l == 0 || self.upsampling_layers() != l {
            return err(format!(
                "decoder needs one upsampling stage per encoder stage ({l}), got {}",
                self.upsampling_layers()
            ));
        }
        if !self.image_resolution.is_power_of_two() || self.image_resolution >> l == 0 {
            return err(format!(
                "resolution {} must be a power of two divisible by 2^{l}",
                self.image_resolution
            ));
        }
        if self.normal_injection_skip >= l {
            return err(format!(
                "normal_injection_skip {} must be below the {l} upsampling layers",
                self.normal_injection_skip
            ));
        }
        let all = self.encoder_channels.iter().chain(&self.decoder_channels);
        if all
            .chain([&self.encoder_hidden, &self.decoder_hidden])
            .any(|&c| c == 0)
        {
            return err("layer widths must be positive".into());
        }
        if self.discriminator_width == 0 || self.discriminator_depth == 0 {
            return err("discriminator width and depth must be positive".into());
        }
        Ok(())
    }

    /// Full invariants for user-facing models: structure plus resolution >= 32.
    pub fn validate(&self) -> Result<()> {
        self.check_structure()?;
        if self.image_resolution < 32 {
            return Err(Error::Config(format!(
                "resolution must be >= 32, got {}",
                self.image_resolution
            )));
        }
        Ok(())
    }
}

/// Posterior parameters of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentCode {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

/// `z = mu + exp(logvar / 2) * eps`.
pub fn reparameterize_with(mu: &[f64], logvar: &[f64], eps: &[f64]) -> Vec<f64> {
    mu.iter()
        .zip(logvar)
        .zip(eps)
        .map(|((&m, &lv), &e)| m + (0.5 * lv).exp() * e)
        .collect()
}

pub fn reparameterize(mu: &[f64], logvar: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    let eps: Vec<f64> = (0..mu.len()).map(|_| StandardNormal.sample(rng)).collect();
    reparameterize_with(mu, logvar, &eps)
}

/// Shuffle every column of `z[N,d]` with its own permutation, turning joint
/// samples into samples of the product of marginals.
pub fn permute_dims<T: Scalar>(z: &Tensor<T>, rng: &mut impl Rng) -> Result<Tensor<T>> {
    let s = z.shape();
    if s.len() != 2 {
        return Err(ShapeError::new(format!("permute_dims needs [N, d], got {s:?}")).into());
    }
    let (n, d) = (s[0], s[1]);
    if n < 2 {
        return Err(Error::Contract(format!(
            "permute_dims needs at least 2 rows, got {n}"
        )));
    }
    let mut out = z.clone();
    let mut order: Vec<usize> = (0..n).collect();
    for j in 0..d {
        order.shuffle(rng);
        for (i, &src) in order.iter().enumerate() {
            out.data_mut()[i * d + j] = z.data()[src * d + j];
        }
    }
    Ok(out)
}

/// Normals of one geometry resampled for every injection point: one entry per
/// upsampling stage and a final one for the output head. Stages without
/// injection hold an empty vector.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalPyramid {
    levels: Vec<Vec<f32>>,
}

impl NormalPyramid {
    pub fn level(&self, i: usize) -> &[f32] {
        &self.levels[i]
    }
}

/// Decodes latent vectors against a geometry's conditioning planes.
pub trait LatentDecoder {
    fn latent_dim(&self) -> usize;
    fn resolution(&self) -> usize;
    /// `conditioning` is `4 x R x R` channel-first, as produced by
    /// [`crate::dataset::NormalMap::conditioning`].
    fn decode_latent(&self, z: &[f64], conditioning: &[f32]) -> Result<Image>;
}

/// Maps an image at model resolution to its posterior mean.
pub trait LatentEncoder {
    fn latent_dim(&self) -> usize;
    fn resolution(&self) -> usize;
    fn encode_mean(&self, image: &Image) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone)]
pub struct FactorVae<T: Scalar = f32> {
    config: ModelConfig,
    pub vae: ParamStore<T>,
    pub disc: ParamStore<T>,
    enc_convs: Vec<Conv2d>,
    enc_fc: Linear,
    enc_head: Linear,
    dec_fc0: Linear,
    dec_fc1: Linear,
    dec_up: Vec<ConvTranspose2d>,
    dec_head0: Conv2d,
    dec_head1: Conv2d,
    disc_layers: Vec<Linear>,
}

fn extra(inject: bool) -> usize {
    if inject {
        CONDITIONING_CHANNELS
    } else {
        0
    }
}

impl<T: Scalar> FactorVae<T> {
    /// Fresh model with weights drawn from the seed's init stream.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.check_structure()?;
        let mut rng = rng::stream(seed, Stream::Init);
        let mut vae = ParamStore::new();
        let mut disc = ParamStore::new();
        let c = &config;
        let d = c.latent_dim;

        let mut enc_convs = Vec::new();
        let mut cin = 3;
        for (i, &cout) in c.encoder_channels.iter().enumerate() {
            enc_convs.push(Conv2d::new(
                &mut vae,
                &format!("enc.conv{i}"),
                cin,
                cout,
                4,
                2,
                1,
                &mut rng,
            ));
            cin = cout;
        }
        let flat = cin * c.base_resolution() * c.base_resolution();
        let enc_fc = Linear::new(&mut vae, "enc.fc", flat, c.encoder_hidden, &mut rng);
        let enc_head = Linear::new(&mut vae, "enc.head", c.encoder_hidden, 2 * d, &mut rng);

        let dec_fc0 = Linear::new(&mut vae, "dec.fc0", d, c.decoder_hidden, &mut rng);
        let c0 = c.decoder_channels[0];
        let dec_fc1 = Linear::new(
            &mut vae,
            "dec.fc1",
            c.decoder_hidden,
            c0 * c.base_resolution() * c.base_resolution(),
            &mut rng,
        );
        let mut dec_up = Vec::new();
        for s in 0..c.upsampling_layers() {
            let cin = c.decoder_channels[s] + extra(c.injects_at(s));
            let cout = c.decoder_channels[s + 1];
            dec_up.push(ConvTranspose2d::new(
                &mut vae,
                &format!("dec.up{s}"),
                cin,
                cout,
                4,
                2,
                1,
                &mut rng,
            ));
        }
        let last = *c.decoder_channels.last().expect("checked non-empty");
        let dec_head0 = Conv2d::new(
            &mut vae,
            "dec.head0",
            last + extra(c.use_normals),
            last,
            1,
            1,
            0,
            &mut rng,
        );
        let dec_head1 = Conv2d::new(&mut vae, "dec.head1", last, 3, 1, 1, 0, &mut rng);

        let mut disc_layers = Vec::new();
        let mut width = d;
        for i in 0..c.discriminator_depth {
            disc_layers.push(Linear::new(
                &mut disc,
                &format!("disc.fc{i}"),
                width,
                c.discriminator_width,
                &mut rng,
            ));
            width = c.discriminator_width;
        }
        disc_layers.push(Linear::new(&mut disc, "disc.out", width, 2, &mut rng));

        Ok(Self {
            config,
            vae,
            disc,
            enc_convs,
            enc_fc,
            enc_head,
            dec_fc0,
            dec_fc1,
            dec_up,
            dec_head0,
            dec_head1,
            disc_layers,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn resolution(&self) -> usize {
        self.config.image_resolution
    }

    /// Same architecture and weights in another precision.
    pub fn convert<U: Scalar>(&self) -> FactorVae<U> {
        FactorVae {
            config: self.config.clone(),
            vae: self.vae.convert(),
            disc: self.disc.convert(),
            enc_convs: self.enc_convs.clone(),
            enc_fc: self.enc_fc,
            enc_head: self.enc_head,
            dec_fc0: self.dec_fc0,
            dec_fc1: self.dec_fc1,
            dec_up: self.dec_up.clone(),
            dec_head0: self.dec_head0,
            dec_head1: self.dec_head1,
            disc_layers: self.disc_layers.clone(),
        }
    }

    /// Resample full-resolution conditioning planes for every injection point.
    pub fn pyramid(&self, conditioning: &[f32]) -> Result<NormalPyramid> {
        let r = self.resolution();
        let expected = CONDITIONING_CHANNELS * r * r;
        if conditioning.len() != expected {
            return Err(ShapeError::new(format!(
                "normal conditioning has {} values, model at {r}px needs {expected}",
                conditioning.len()
            ))
            .into());
        }
        let c = &self.config;
        let mut levels: Vec<Vec<f32>> = (0..c.upsampling_layers())
            .map(|s| {
                if c.injects_at(s) {
                    let sr = c.stage_resolution(s);
                    resample_planes(
                        conditioning,
                        CONDITIONING_CHANNELS,
                        r,
                        r,
                        sr,
                        sr,
                        c.normal_filter,
                    )
                } else {
                    Vec::new()
                }
            })
            .collect();
        levels.push(if c.use_normals {
            conditioning.to_vec()
        } else {
            Vec::new()
        });
        Ok(NormalPyramid { levels })
    }

    /// `x[N,3,R,R] -> (mu[N,d], logvar[N,d])`.
    pub fn encoder_forward(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<(Var, Var)> {
        let r = self.resolution();
        let s = tape.shape(x).to_vec();
        if s.len() != 4 || s[1] != 3 || s[2] != r || s[3] != r {
            return Err(
                ShapeError::new(format!("encoder expects [N, 3, {r}, {r}], got {s:?}")).into(),
            );
        }
        let mut h = x;
        for conv in &self.enc_convs {
            h = conv.forward(tape, p, h)?;
            h = tape.relu(h);
        }
        let n = s[0];
        let flat: usize = tape.shape(h)[1..].iter().product();
        h = tape.reshape(h, &[n, flat])?;
        h = self.enc_fc.forward(tape, p, h)?;
        h = tape.relu(h);
        let out = self.enc_head.forward(tape, p, h)?;
        let d = self.latent_dim();
        Ok((tape.columns(out, 0, d)?, tape.columns(out, d, d)?))
    }

    /// `z[N,d] -> image[N,3,R,R]` in `(0, 1)`; `pyramids[i]` conditions row `i`.
    pub fn decoder_forward(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        z: Var,
        pyramids: &[&NormalPyramid],
    ) -> Result<Var> {
        let c = &self.config;
        let zs = tape.shape(z).to_vec();
        if zs.len() != 2 || zs[1] != c.latent_dim || zs[0] != pyramids.len() {
            return Err(ShapeError::new(format!(
                "decoder expects [{}, {}] latents, got {zs:?}",
                pyramids.len(),
                c.latent_dim
            ))
            .into());
        }
        let n = zs[0];
        let mut h = self.dec_fc0.forward(tape, p, z)?;
        h = tape.relu(h);
        h = self.dec_fc1.forward(tape, p, h)?;
        h = tape.relu(h);
        let b = c.base_resolution();
        h = tape.reshape(h, &[n, c.decoder_channels[0], b, b])?;
        for (s, up) in self.dec_up.iter().enumerate() {
            if c.injects_at(s) {
                h = self.inject(tape, h, pyramids, s, c.stage_resolution(s))?;
            }
            h = up.forward(tape, p, h)?;
            h = tape.relu(h);
        }
        if c.use_normals {
            h = self.inject(tape, h, pyramids, c.upsampling_layers(), c.image_resolution)?;
        }
        h = self.dec_head0.forward(tape, p, h)?;
        h = tape.relu(h);
        h = self.dec_head1.forward(tape, p, h)?;
        Ok(tape.sigmoid(h))
    }

    fn inject(
        &self,
        tape: &mut Tape<T>,
        h: Var,
        pyramids: &[&NormalPyramid],
        level: usize,
        res: usize,
    ) -> Result<Var> {
        let mut data = Vec::with_capacity(pyramids.len() * CONDITIONING_CHANNELS * res * res);
        for pyr in pyramids {
            data.extend(pyr.level(level).iter().map(|&v| T::cast(v as f64)));
        }
        let cond = tape.constant(Tensor::new(
            &[pyramids.len(), CONDITIONING_CHANNELS, res, res],
            data,
        )?);
        Ok(tape.concat_channels(&[h, cond])?)
    }

    /// `z[N,d] -> logits[N,2]`; column 0 scores "joint", column 1 "permuted".
    pub fn disc_forward(&self, tape: &mut Tape<T>, p: &Bound, z: Var) -> Result<Var> {
        let slope = T::cast(DISC_SLOPE);
        let (last, hidden) = self.disc_layers.split_last().expect("output layer exists");
        let mut h = z;
        for layer in hidden {
            h = layer.forward(tape, p, h)?;
            h = tape.leaky_relu(h, slope);
        }
        Ok(last.forward(tape, p, h)?)
    }

    /// Posterior parameters for channel-first images at model resolution.
    pub fn encode_batch(&self, images: &[&[f32]]) -> Result<Vec<LatentCode>> {
        let r = self.resolution();
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let mut data = Vec::with_capacity(chunk.len() * 3 * r * r);
            for img in chunk {
                if img.len() != 3 * r * r {
                    return Err(ShapeError::new(format!(
                        "image has {} values, expected 3x{r}x{r}",
                        img.len()
                    ))
                    .into());
                }
                data.extend(img.iter().map(|&v| T::cast(v as f64)));
            }
            let mut tape = Tape::new();
            let p = self.vae.bind(&mut tape, false);
            let x = tape.constant(Tensor::new(&[chunk.len(), 3, r, r], data)?);
            let (mu, lv) = self.encoder_forward(&mut tape, &p, x)?;
            let d = self.latent_dim();
            let (mu, lv) = (tape.value(mu).to_f64_vec(), tape.value(lv).to_f64_vec());
            for i in 0..chunk.len() {
                out.push(LatentCode {
                    mu: mu[i * d..(i + 1) * d].to_vec(),
                    logvar: lv[i * d..(i + 1) * d].to_vec(),
                });
            }
        }
        Ok(out)
    }

    pub fn encode(&self, image: &Image) -> Result<LatentCode> {
        let r = self.resolution();
        if image.width() != r || image.height() != r {
            return Err(ShapeError::new(format!(
                "image is {}x{}, model expects {r}x{r}",
                image.width(),
                image.height()
            ))
            .into());
        }
        let chw = image.to_chw();
        Ok(self.encode_batch(&[&chw])?.remove(0))
    }

    /// Decode latent rows, each against its own pyramid.
    pub fn decode_batch(&self, zs: &[Vec<f64>], pyramids: &[&NormalPyramid]) -> Result<Vec<Image>> {
        let (r, d) = (self.resolution(), self.latent_dim());
        let mut out = Vec::with_capacity(zs.len());
        for (zc, pc) in zs.chunks(64).zip(pyramids.chunks(64)) {
            let mut data = Vec::with_capacity(zc.len() * d);
            for z in zc {
                if z.len() != d {
                    return Err(ShapeError::new(format!(
                        "latent has {} entries, model has {d}",
                        z.len()
                    ))
                    .into());
                }
                data.extend(z.iter().map(|&v| T::cast(v)));
            }
            let mut tape = Tape::new();
            let p = self.vae.bind(&mut tape, false);
            let zv = tape.constant(Tensor::new(&[zc.len(), d], data)?);
            let y = self.decoder_forward(&mut tape, &p, zv, pc)?;
            let y: Vec<f32> = tape
                .value(y)
                .data()
                .iter()
                .map(|v| v.as_f64() as f32)
                .collect();
            for img in y.chunks(3 * r * r) {
                out.push(Image::from_chw(r, r, img)?);
            }
        }
        Ok(out)
    }

    pub fn decode(&self, z: &[f64], pyramid: &NormalPyramid) -> Result<Image> {
        Ok(self.decode_batch(&[z.to_vec()], &[pyramid])?.remove(0))
    }

    /// Discriminator logits for a batch of latent rows.
    pub fn discriminate(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let p = self.disc.bind(&mut tape, false);
        let zv = tape.constant(z.clone());
        let out = self.disc_forward(&mut tape, &p, zv)?;
        Ok(tape.value(out).clone())
    }
}

impl<T: Scalar> LatentDecoder for FactorVae<T> {
    fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn resolution(&self) -> usize {
        self.config.image_resolution
    }

    fn decode_latent(&self, z: &[f64], conditioning: &[f32]) -> Result<Image> {
        self.decode(z, &self.pyramid(conditioning)?)
    }
}

impl<T: Scalar> LatentEncoder for FactorVae<T> {
    fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn resolution(&self) -> usize {
        self.config.image_resolution
    }

    fn encode_mean(&self, image: &Image) -> Result<Vec<f64>> {
        Ok(self.encode(image)?.mu)
    }
}

/// Center-crop to a square and resize to `resolution`.
pub fn prepare_image(image: &Image, resolution: usize) -> Image {
    image.center_crop_square().resized(resolution, resolution)
}
