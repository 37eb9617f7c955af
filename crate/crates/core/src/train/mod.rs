//! Alternating optimization of the autoencoder and the TC discriminator.

mod record;

pub use record::{EpochRecord, LogRecord, StepRecord, TrainLog};

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::{IndexedRandom, SliceRandom};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::dataset::LoadedDataset;
use crate::error::{Error, Result};
use crate::losses::{self, beta_at, LossConfig, Reduction};
use crate::model::{permute_dims, save_weights, FactorVae, ModelConfig, NormalPyramid};
use crate::optim::{AdamConfig, AdamState, LR_DISC, LR_VAE};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub model: ModelConfig,
    pub lr_vae: f64,
    pub lr_disc: f64,
    /// Discriminator updates per autoencoder update.
    pub disc_steps: usize,
    /// Write a checkpoint every this many epochs; 0 disables checkpoints.
    pub checkpoint_every: usize,
    pub dataset_manifest: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// 64x64, d = 6, 200 epochs with the warm-up scaled to the same
    /// fraction of training as 1000 of 2400 epochs.
    pub fn desk() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            seed: 0,
            loss: LossConfig {
                anneal_epochs: 80,
                reduction: Reduction::ImageSum,
                ..LossConfig::default()
            },
            model: ModelConfig::default(),
            lr_vae: LR_VAE,
            lr_disc: LR_DISC,
            disc_steps: 1,
            checkpoint_every: 0,
            dataset_manifest: None,
        }
    }

    /// Settings of the original large-scale run.
    pub fn full_scale() -> Self {
        Self {
            epochs: 2400,
            batch_size: 150,
            loss: LossConfig {
                reduction: Reduction::ImageSum,
                ..LossConfig::default()
            },
            model: ModelConfig {
                image_resolution: 256,
                encoder_channels: vec![32, 32, 64, 128, 128, 128],
                decoder_channels: vec![128, 128, 128, 64, 32, 32, 16],
                ..ModelConfig::default()
            },
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.lr_vae > 0.0 && self.lr_disc > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        self.loss.validate()?;
        self.model.check_structure()
    }
}

/// Result of a completed run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: FactorVae<f32>,
    pub log: TrainLog,
}

/// Stateful trainer; [`train`] drives it for the configured epochs.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    data: &'a LoadedDataset,
    indices: Vec<usize>,
    pub model: FactorVae<f32>,
    adam_vae: AdamState,
    adam_disc: AdamState,
    pyramids: Vec<NormalPyramid>,
    batch_rng: ChaCha8Rng,
    eps_rng: ChaCha8Rng,
    perm_rng: ChaCha8Rng,
    step: usize,
    epoch: usize,
    pub log: TrainLog,
}

impl<'a> Trainer<'a> {
    /// Train on `indices` of `data` (all entries when `None`).
    pub fn new(
        cfg: TrainConfig,
        data: &'a LoadedDataset,
        indices: Option<Vec<usize>>,
    ) -> Result<Self> {
        cfg.validate()?;
        if data.resolution != cfg.model.image_resolution {
            return Err(Error::Config(format!(
                "dataset is {}px but the model expects {}px",
                data.resolution, cfg.model.image_resolution
            )));
        }
        let indices = indices.unwrap_or_else(|| (0..data.len()).collect());
        if indices.len() < cfg.batch_size {
            return Err(Error::Config(format!(
                "{} training images cannot fill a batch of {}",
                indices.len(),
                cfg.batch_size
            )));
        }
        let model = FactorVae::<f32>::new(cfg.model.clone(), cfg.seed)?;
        let pyramids = data
            .conditioning
            .iter()
            .map(|c| model.pyramid(c))
            .collect::<Result<_>>()?;
        Ok(Self {
            adam_vae: AdamState::new(AdamConfig::with_lr(cfg.lr_vae), &model.vae),
            adam_disc: AdamState::new(AdamConfig::with_lr(cfg.lr_disc), &model.disc),
            batch_rng: rng::stream(cfg.seed, Stream::Batches),
            eps_rng: rng::stream(cfg.seed, Stream::Epsilon),
            perm_rng: rng::stream(cfg.seed, Stream::Permute),
            model,
            pyramids,
            indices,
            data,
            step: 0,
            epoch: 0,
            log: TrainLog::default(),
            cfg,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.indices.len() / self.cfg.batch_size
    }

    fn batch_tensor(&self, batch: &[usize]) -> Result<Tensor<f32>> {
        let r = self.data.resolution;
        let mut x = Vec::with_capacity(batch.len() * 3 * r * r);
        for &i in batch {
            x.extend_from_slice(&self.data.images[i]);
        }
        Ok(Tensor::new(&[batch.len(), 3, r, r], x)?)
    }

    fn noise(&mut self, n: usize) -> Tensor<f32> {
        let d = self.cfg.model.latent_dim;
        let eps = (0..n * d)
            .map(|_| StandardNormal.sample(&mut self.eps_rng))
            .collect();
        Tensor::new(&[n, d], eps).expect("n x d noise")
    }

    /// One autoencoder update followed by the discriminator update(s).
    pub fn step(&mut self, batch: &[usize]) -> Result<StepRecord> {
        let n = batch.len();
        let x = self.batch_tensor(batch)?;
        let eps = self.noise(n);
        let pyrs: Vec<&NormalPyramid> = batch
            .iter()
            .map(|&i| &self.pyramids[self.data.geometry_of[i]])
            .collect();
        let beta = beta_at(self.progress(), &self.cfg.loss);

        // Autoencoder step: discriminator weights enter as constants.
        let mut tape = Tape::new();
        let pv = self.model.vae.bind(&mut tape, true);
        let pd = self.model.disc.bind(&mut tape, false);
        let xv = tape.constant(x);
        let (mu, lv) = self.model.encoder_forward(&mut tape, &pv, xv)?;
        let half = tape.scale(lv, 0.5);
        let sigma = tape.exp(half);
        let ev = tape.constant(eps);
        let noise = tape.mul(sigma, ev)?;
        let z = tape.add(mu, noise)?;
        let recon = self.model.decoder_forward(&mut tape, &pv, z, &pyrs)?;
        let logits = self.model.disc_forward(&mut tape, &pd, z)?;
        let vars =
            losses::vae_loss_on_tape(&mut tape, recon, xv, mu, lv, logits, beta, &self.cfg.loss)?;
        let breakdown = vars.breakdown(&tape)?;
        let kl_dims = vars.kl_per_dim(&tape);
        let grads = tape.backward(vars.total)?;
        self.model.vae.zero_grad();
        self.model.vae.accumulate(&grads, &pv);
        self.adam_vae.step(&mut self.model.vae)?;
        let z_joint = tape.value(z).clone();
        drop(tape);

        let mut disc_loss = 0.0;
        for _ in 0..self.cfg.disc_steps {
            let z_perm = self.permuted_batch(n)?;
            let mut tape = Tape::new();
            let pd = self.model.disc.bind(&mut tape, true);
            let zj = tape.constant(z_joint.clone());
            let zp = tape.constant(z_perm);
            let lj = self.model.disc_forward(&mut tape, &pd, zj)?;
            let lp = self.model.disc_forward(&mut tape, &pd, zp)?;
            let loss = losses::discriminator_loss_on_tape(&mut tape, lj, lp)?;
            disc_loss = tape.value(loss).item() as f64;
            if !disc_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    term: "discriminator",
                });
            }
            let grads = tape.backward(loss)?;
            self.model.disc.zero_grad();
            self.model.disc.accumulate(&grads, &pd);
            self.adam_disc.step(&mut self.model.disc)?;
        }

        let rec = StepRecord {
            step: self.step,
            epoch: self.epoch,
            loss: breakdown,
            disc_loss,
            kl_per_dim: kl_dims,
        };
        self.step += 1;
        Ok(rec)
    }

    /// Latent samples of an independent batch with every dimension shuffled.
    fn permuted_batch(&mut self, n: usize) -> Result<Tensor<f32>> {
        let batch: Vec<usize> = self
            .indices
            .choose_multiple(&mut self.perm_rng, n)
            .copied()
            .collect();
        let x = self.batch_tensor(&batch)?;
        let mut tape = Tape::new();
        let pv = self.model.vae.bind(&mut tape, false);
        let xv = tape.constant(x);
        let (mu, lv) = self.model.encoder_forward(&mut tape, &pv, xv)?;
        let eps = self.noise(n);
        let d = self.cfg.model.latent_dim;
        let (mu, lv) = (tape.value(mu).data(), tape.value(lv).data());
        let z: Vec<f32> = (0..n * d)
            .map(|i| mu[i] + (0.5 * lv[i]).exp() * eps.data()[i])
            .collect();
        permute_dims(&Tensor::new(&[n, d], z)?, &mut self.perm_rng)
    }

    /// One pass over the shuffled training indices (incomplete tail batch dropped).
    pub fn epoch(&mut self, mut on_step: impl FnMut(&StepRecord)) -> Result<EpochRecord> {
        let start = Instant::now();
        let mut order = self.indices.clone();
        order.shuffle(&mut self.batch_rng);
        let d = self.cfg.model.latent_dim;
        let mut kl = vec![0.0; d];
        let mut count = 0;
        for batch in order.chunks_exact(self.cfg.batch_size) {
            let rec = self.step(batch)?;
            on_step(&rec);
            kl.iter_mut()
                .zip(&rec.kl_per_dim)
                .for_each(|(a, b)| *a += b);
            count += 1;
            self.log.steps.push(rec);
        }
        kl.iter_mut().for_each(|v| *v /= count.max(1) as f64);
        let rec = EpochRecord {
            epoch: self.epoch,
            kl_per_dim: kl,
            seconds: start.elapsed().as_secs_f64(),
        };
        self.log.epochs.push(rec.clone());
        self.epoch += 1;
        Ok(rec)
    }

    /// Completed epochs including the fraction of the current one.
    pub fn progress(&self) -> f64 {
        self.step as f64 / self.steps_per_epoch().max(1) as f64
    }

    pub fn current_epoch(&self) -> usize {
        self.epoch
    }

    pub fn current_step(&self) -> usize {
        self.step
    }

    fn checkpoint_metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "train_config": self.cfg,
            "epoch": self.epoch,
            "step": self.step,
        })
    }

    /// Save the current weights with the training configuration embedded.
    pub fn save(&self, path: &Path) -> Result<String> {
        save_weights(path, &self.model, &self.checkpoint_metadata(), None)
    }
}

/// Where a run writes its side outputs.
#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    /// Directory for `checkpoints/` and `train_log.ndjson`.
    pub dir: Option<PathBuf>,
}

/// Train for `cfg.epochs` epochs. A non-finite loss or gradient aborts with
/// [`Error::Diverged`], naming the step and the last checkpoint written.
pub fn train(
    cfg: &TrainConfig,
    data: &LoadedDataset,
    indices: Option<Vec<usize>>,
    outputs: &TrainOutputs,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg.clone(), data, indices)?;
    let mut writer = match &outputs.dir {
        Some(dir) => Some(record::NdjsonWriter::create(&dir.join("train_log.ndjson"))?),
        None => None,
    };
    let mut last_checkpoint: Option<PathBuf> = None;
    for _ in 0..cfg.epochs {
        let mut write_err = None;
        let result = trainer.epoch(|rec| {
            if let Some(w) = writer.as_mut() {
                if let Err(e) = w.write(&LogRecord::Step(rec.clone())) {
                    write_err.get_or_insert(e);
                }
            }
        });
        if let Some(e) = write_err {
            return Err(e);
        }
        let rec = match result {
            Ok(rec) => rec,
            Err(e @ (Error::NonFiniteLoss { .. } | Error::NonFiniteGradient { .. })) => {
                return Err(Error::Diverged {
                    step: trainer.current_step(),
                    last_checkpoint,
                    source: Box::new(e),
                })
            }
            Err(e) => return Err(e),
        };
        log::info!(
            "epoch {} done in {:.1}s, last loss {:.5}",
            rec.epoch,
            rec.seconds,
            trainer
                .log
                .steps
                .last()
                .map(|s| s.loss.total)
                .unwrap_or(f64::NAN)
        );
        if let Some(w) = writer.as_mut() {
            w.write(&LogRecord::Epoch(rec))?;
        }
        if cfg.checkpoint_every > 0 && trainer.current_epoch() % cfg.checkpoint_every == 0 {
            if let Some(dir) = &outputs.dir {
                let ck = dir.join("checkpoints");
                std::fs::create_dir_all(&ck).map_err(|e| Error::io(&ck, e))?;
                let p = ck.join(format!("epoch_{:05}.bin", trainer.current_epoch()));
                trainer.save(&p)?;
                last_checkpoint = Some(p);
            }
        }
    }
    Ok(TrainOutcome {
        model: trainer.model,
        log: trainer.log,
    })
}
