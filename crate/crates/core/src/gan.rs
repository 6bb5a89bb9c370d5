//! Conditional convolutional GAN over embedded design sequences.
//!
//! Convolutions run along the rule-sequence axis: a design matrix of
//! `max_rules` rows and `row_width` columns is fed as `row_width` channels
//! of length `max_rules`.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{Adam, Checkpoint, Conv1dSpec, NnError, ParamStore, Tape, Tensor, Var};
use crate::vecspace::{EmbeddedSequence, SpaceConfig};

const LEAK: f64 = 0.2;
const HALVE: Conv1dSpec = Conv1dSpec {
    stride: 2,
    padding: 1,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GanConfig {
    pub noise_dim: usize,
    /// Channels after the generator's dense layer; halved by each upsampling stage.
    pub gen_channels: usize,
    /// Channels of the discriminator's first convolution; doubled by the second.
    pub disc_channels: usize,
    pub lr: f64,
    /// Discriminator learning rate.
    pub d_lr: f64,
    /// Target for real items in the discriminator loss (one-sided smoothing below 1).
    pub real_target: f64,
    /// Per-step decay of the sampling generator's weight average, capped at
    /// `(1 + t) / (10 + t)` after `t` generator steps.
    pub ema_decay: f64,
    /// Feed the discriminator a minibatch standard-deviation channel, which
    /// penalizes collapsed batches.
    #[serde(default = "yes")]
    pub minibatch_std: bool,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
}

fn yes() -> bool {
    true
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            noise_dim: 16,
            gen_channels: 64,
            disc_channels: 16,
            lr: 1e-3,
            d_lr: 2e-4,
            real_target: 0.9,
            ema_decay: 0.998,
            minibatch_std: true,
            batch: 32,
            epochs: 120,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LossRecord {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GanModel {
    pub config: GanConfig,
    pub space: SpaceConfig,
    pub shape_types: Vec<String>,
    pub generator: ParamStore,
    /// Exponential moving average of the generator weights; used for sampling.
    pub generator_ema: ParamStore,
    pub discriminator: ParamStore,
    pub loss_history: Vec<LossRecord>,
}

#[derive(Debug, Error)]
pub enum GanError {
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unknown shape type {0:?}")]
    UnknownLabel(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

impl GanModel {
    /// Fresh, untrained networks.
    pub fn new(space: SpaceConfig, shape_types: Vec<String>, config: GanConfig) -> Result<Self, GanError> {
        if !space.max_rules.is_multiple_of(4) || space.max_rules == 0 {
            return Err(GanError::Shape(format!(
                "sequence capacity {} must be a positive multiple of 4",
                space.max_rules
            )));
        }
        if shape_types.is_empty() {
            return Err(GanError::Shape("no shape types".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = space.row_width();
        let nl = shape_types.len();
        let l0 = space.max_rules / 4;
        let c = config.gen_channels.max(2);
        let mut g = ParamStore::new(config.seed);
        let zin = config.noise_dim + nl;
        g.init_glorot("g.fc.w", &[zin, c * l0], zin, c * l0, &mut rng);
        g.init_const("g.fc.b", &[c * l0], 0.0);
        g.init_glorot("g.up1.w", &[c, c / 2, 4], c * 4, c / 2 * 4, &mut rng);
        g.init_const("g.up1.b", &[c / 2], 0.0);
        g.init_glorot("g.up2.w", &[c / 2, d, 4], c / 2 * 4, d * 4, &mut rng);
        g.init_const("g.up2.b", &[d], 0.0);

        let dc = config.disc_channels.max(1);
        let mut dn = ParamStore::new(config.seed.wrapping_add(1));
        let cin = d + nl + usize::from(config.minibatch_std);
        dn.init_glorot("d.conv1.w", &[dc, cin, 4], cin * 4, dc * 4, &mut rng);
        dn.init_const("d.conv1.b", &[dc], 0.0);
        dn.init_glorot("d.conv2.w", &[2 * dc, dc, 4], dc * 4, 2 * dc * 4, &mut rng);
        dn.init_const("d.conv2.b", &[2 * dc], 0.0);
        let flat = 2 * dc * l0;
        dn.init_glorot("d.fc.w", &[flat, 1], flat, 1, &mut rng);
        dn.init_const("d.fc.b", &[1], 0.0);
        Ok(Self {
            config,
            space,
            shape_types,
            generator_ema: g.clone(),
            generator: g,
            discriminator: dn,
            loss_history: Vec::new(),
        })
    }

    pub fn label_index(&self, label: &str) -> Result<usize, GanError> {
        self.shape_types
            .iter()
            .position(|s| s == label)
            .ok_or_else(|| GanError::UnknownLabel(label.to_string()))
    }

    fn one_hot(&self, idx: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.shape_types.len()];
        v[idx] = 1.0;
        v
    }

    /// Generator graph: `noise ++ label` rows in, `[B, D, M]` in `[0, 1]` out.
    fn generate_on(&self, t: &mut Tape, store: &ParamStore, z_and_label: Tensor) -> Var {
        let b = z_and_label.shape[0];
        let c = self.config.gen_channels.max(2);
        let l0 = self.space.max_rules / 4;
        let x = t.constant(z_and_label);
        let w = t.param(store, "g.fc.w");
        let bias = t.param(store, "g.fc.b");
        let h = t.dense(x, w, bias);
        let h = t.leaky_relu(h, LEAK);
        let h = t.reshape(h, &[b, c, l0]);
        let w = t.param(store, "g.up1.w");
        let bias = t.param(store, "g.up1.b");
        let h = t.conv_transpose1d(h, w, bias, HALVE);
        let h = t.leaky_relu(h, LEAK);
        let w = t.param(store, "g.up2.w");
        let bias = t.param(store, "g.up2.b");
        let h = t.conv_transpose1d(h, w, bias, HALVE);
        t.sigmoid(h)
    }

    /// Discriminator graph: `[B, D, M]` designs and their labels in, `[B, 1]` logits out.
    fn discriminate_on(&self, t: &mut Tape, x: Var, labels: &[usize]) -> Var {
        let b = labels.len();
        let m = self.space.max_rules;
        let nl = self.shape_types.len();
        let mut lab = vec![0.0; b * nl * m];
        for (i, &l) in labels.iter().enumerate() {
            lab[(i * nl + l) * m..(i * nl + l + 1) * m].fill(1.0);
        }
        let lab = t.constant(Tensor {
            shape: vec![b, nl, m],
            data: lab,
        });
        let h = t.concat_channels(x, lab);
        let h = if self.config.minibatch_std {
            let spread = t.batch_std(x);
            t.concat_channels(h, spread)
        } else {
            h
        };
        let w = t.param(&self.discriminator, "d.conv1.w");
        let bias = t.param(&self.discriminator, "d.conv1.b");
        let h = t.conv1d(h, w, bias, HALVE);
        let h = t.leaky_relu(h, LEAK);
        let w = t.param(&self.discriminator, "d.conv2.w");
        let bias = t.param(&self.discriminator, "d.conv2.b");
        let h = t.conv1d(h, w, bias, HALVE);
        let h = t.leaky_relu(h, LEAK);
        let flat = t.value(h).len() / b;
        let h = t.reshape(h, &[b, flat]);
        let w = t.param(&self.discriminator, "d.fc.w");
        let bias = t.param(&self.discriminator, "d.fc.b");
        t.dense(h, w, bias)
    }

    fn noise_rows<R: Rng>(&self, labels: &[usize], rng: &mut R) -> Tensor {
        let nz = self.config.noise_dim;
        let nl = self.shape_types.len();
        let mut data = Vec::with_capacity(labels.len() * (nz + nl));
        for &l in labels {
            data.extend((0..nz).map(|_| rng.gen_range(-1.0..1.0)));
            data.extend(self.one_hot(l));
        }
        Tensor {
            shape: vec![labels.len(), nz + nl],
            data,
        }
    }

    /// Raw generator output for explicit noise vectors, as `[M][D]` matrices.
    pub fn generate_with_noise(&self, label: &str, noise: &[Vec<f64>]) -> Result<Vec<Vec<Vec<f64>>>, GanError> {
        let l = self.label_index(label)?;
        let nz = self.config.noise_dim;
        let mut data = Vec::new();
        for z in noise {
            if z.len() != nz {
                return Err(GanError::Shape(format!("noise must have {nz} entries")));
            }
            data.extend_from_slice(z);
            data.extend(self.one_hot(l));
        }
        let mut t = Tape::new();
        let out = self.generate_on(
            &mut t,
            &self.generator_ema,
            Tensor {
                shape: vec![noise.len(), nz + self.shape_types.len()],
                data,
            },
        );
        Ok(self.to_matrices(t.value(out)))
    }

    fn to_matrices(&self, out: &Tensor) -> Vec<Vec<Vec<f64>>> {
        let (d, m) = (self.space.row_width(), self.space.max_rules);
        (0..out.shape[0])
            .map(|b| {
                (0..m)
                    .map(|r| (0..d).map(|c| out.data[(b * d + c) * m + r]).collect())
                    .collect()
            })
            .collect()
    }

    fn to_channels(&self, items: &[&EmbeddedSequence]) -> Result<Tensor, GanError> {
        let (d, m) = (self.space.row_width(), self.space.max_rules);
        let mut data = vec![0.0; items.len() * d * m];
        for (b, e) in items.iter().enumerate() {
            if e.matrix.len() != m || e.matrix.iter().any(|r| r.len() != d) {
                return Err(GanError::Shape(format!("expected a {m}x{d} matrix")));
            }
            for (r, row) in e.matrix.iter().enumerate() {
                for (c, v) in row.iter().enumerate() {
                    data[(b * d + c) * m + r] = *v;
                }
            }
        }
        Ok(Tensor {
            shape: vec![items.len(), d, m],
            data,
        })
    }

    fn labels_of(&self, items: &[&EmbeddedSequence]) -> Result<Vec<usize>, GanError> {
        items.iter().map(|e| self.label_index(&e.shape_type)).collect()
    }

    /// One discriminator update on real items against the given fake batch.
    fn d_step(&mut self, opt: &Adam, real: Tensor, fake: Tensor, labels: &[usize]) -> Result<f64, GanError> {
        let b = labels.len();
        let mut t = Tape::new();
        let xr = t.constant(real);
        let lr = self.discriminate_on(&mut t, xr, labels);
        let xf = t.constant(fake);
        let lf = self.discriminate_on(&mut t, xf, labels);
        let real_loss = t.bce_with_logits(lr, &vec![self.config.real_target; b]);
        let fake_loss = t.bce_with_logits(lf, &vec![0.0; b]);
        let loss = t.add(real_loss, fake_loss);
        let grads = t.backward(loss);
        let pg = t.param_grads(&grads);
        opt.step(&mut self.discriminator, &pg)?;
        Ok(t.value(loss).item())
    }

    /// One generator update with the non-saturating loss.
    fn g_step<R: Rng>(&mut self, opt: &Adam, labels: &[usize], rng: &mut R) -> Result<f64, GanError> {
        let b = labels.len();
        let z = self.noise_rows(labels, rng);
        let mut t = Tape::new();
        let fake = self.generate_on(&mut t, &self.generator, z);
        let logits = self.discriminate_on(&mut t, fake, labels);
        let loss = t.bce_with_logits(logits, &vec![1.0; b]);
        let grads = t.backward(loss);
        let pg: BTreeMap<String, Tensor> = t
            .param_grads(&grads)
            .into_iter()
            .filter(|(k, _)| k.starts_with("g."))
            .collect();
        opt.step(&mut self.generator, &pg)?;
        // warm-up keeps the average close to the live weights early on
        let step = self.generator.step as f64;
        let decay = self.config.ema_decay.min((1.0 + step) / (10.0 + step));
        for (name, p) in &self.generator.params {
            if let Some(avg) = self.generator_ema.get_mut(name) {
                for (a, v) in avg.data.iter_mut().zip(&p.value.data) {
                    *a = decay * *a + (1.0 - decay) * v;
                }
            }
        }
        Ok(t.value(loss).item())
    }

    fn fake_batch<R: Rng>(&self, store: &ParamStore, labels: &[usize], rng: &mut R) -> Tensor {
        let z = self.noise_rows(labels, rng);
        let mut t = Tape::new();
        let out = self.generate_on(&mut t, store, z);
        t.value(out).clone()
    }

    /// Continues adversarial training for `epochs` passes over `dataset`.
    pub fn train(&mut self, dataset: &[EmbeddedSequence], epochs: usize) -> Result<(), GanError> {
        if dataset.is_empty() {
            return Err(GanError::EmptyDataset);
        }
        for e in dataset {
            self.label_index(&e.shape_type)?;
            self.to_channels(&[e])?;
        }
        let g_opt = Adam::new(self.config.lr);
        let d_opt = Adam::new(self.config.d_lr);
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.config.seed ^ (self.loss_history.len() as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let batch = self.config.batch.max(1);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            let (mut dsum, mut gsum, mut steps) = (0.0, 0.0, 0usize);
            for chunk in order.chunks(batch) {
                let items: Vec<&EmbeddedSequence> = chunk.iter().map(|&i| &dataset[i]).collect();
                let labels = self.labels_of(&items)?;
                let real = self.to_channels(&items)?;
                let fake = self.fake_batch(&self.generator, &labels, &mut rng);
                dsum += self.d_step(&d_opt, real, fake, &labels)?;
                gsum += self.g_step(&g_opt, &labels, &mut rng)?;
                steps += 1;
            }
            let n = steps.max(1) as f64;
            self.loss_history.push(LossRecord {
                epoch: self.loss_history.len(),
                d_loss: dsum / n,
                g_loss: gsum / n,
            });
        }
        Ok(())
    }

    /// Trains only the discriminator, on real items against fixed fake matrices.
    pub fn train_discriminator(
        &mut self,
        real: &[EmbeddedSequence],
        fake: &[EmbeddedSequence],
        epochs: usize,
    ) -> Result<(), GanError> {
        if real.is_empty() || fake.is_empty() {
            return Err(GanError::EmptyDataset);
        }
        let opt = Adam::new(self.config.d_lr);
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let batch = self.config.batch.max(1);
        let mut pools: Vec<Vec<&EmbeddedSequence>> = vec![Vec::new(); self.shape_types.len()];
        for f in fake {
            pools[self.label_index(&f.shape_type)?].push(f);
        }
        let mut order: Vec<usize> = (0..real.len()).collect();
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(batch) {
                let items: Vec<&EmbeddedSequence> = chunk.iter().map(|&i| &real[i]).collect();
                let labels = self.labels_of(&items)?;
                // each real item is paired with a fake of the same label when one exists
                let fakes: Vec<&EmbeddedSequence> = labels
                    .iter()
                    .map(|&l| match pools[l].as_slice() {
                        [] => &fake[rng.gen_range(0..fake.len())],
                        pool => pool[rng.gen_range(0..pool.len())],
                    })
                    .collect();
                let r = self.to_channels(&items)?;
                let f = self.to_channels(&fakes)?;
                self.d_step(&opt, r, f, &labels)?;
            }
        }
        Ok(())
    }

    /// Probability that `e` is a real design of its labelled shape type.
    pub fn discriminate(&self, e: &EmbeddedSequence) -> Result<f64, GanError> {
        let labels = self.labels_of(&[e])?;
        let x = self.to_channels(&[e])?;
        let mut t = Tape::new();
        let xv = t.constant(x);
        let logit = self.discriminate_on(&mut t, xv, &labels);
        Ok(crate::nn::sigmoid(t.value(logit).item()))
    }

    /// `n` generated designs for `label`, deterministic in `seed`.
    pub fn sample(&self, label: &str, n: usize, seed: u64) -> Result<Vec<EmbeddedSequence>, GanError> {
        let l = self.label_index(label)?;
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels = vec![l; n];
        let mut out = Vec::with_capacity(n);
        for chunk in labels.chunks(64) {
            let fake = self.fake_batch(&self.generator_ema, chunk, &mut rng);
            for matrix in self.to_matrices(&fake) {
                out.push(EmbeddedSequence {
                    shape_type: label.to_string(),
                    label: self.one_hot(l),
                    matrix,
                    host_indices: vec![-1; self.space.max_rules],
                });
            }
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "config": self.config,
            "space": self.space,
            "shapeTypes": self.shape_types,
            "lossHistory": self.loss_history,
        });
        Checkpoint::new(
            "gan",
            BTreeMap::from([
                ("generator".to_string(), self.generator.clone()),
                ("generator_ema".to_string(), self.generator_ema.clone()),
                ("discriminator".to_string(), self.discriminator.clone()),
            ]),
            meta,
        )
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self, GanError> {
        let bad = |what: &str| GanError::Nn(NnError::Format(format!("gan checkpoint: {what}")));
        if c.kind != "gan" {
            return Err(bad("wrong kind"));
        }
        let field = |k: &str| c.meta.get(k).cloned().ok_or_else(|| bad(k));
        let parse = |k: &str| -> Result<serde_json::Value, GanError> { field(k) };
        Ok(Self {
            config: serde_json::from_value(parse("config")?).map_err(|_| bad("config"))?,
            space: serde_json::from_value(parse("space")?).map_err(|_| bad("space"))?,
            shape_types: serde_json::from_value(parse("shapeTypes")?).map_err(|_| bad("shapeTypes"))?,
            loss_history: serde_json::from_value(parse("lossHistory")?).map_err(|_| bad("lossHistory"))?,
            generator: c.stores.get("generator").cloned().ok_or_else(|| bad("generator"))?,
            generator_ema: c.stores.get("generator_ema").cloned().ok_or_else(|| bad("generator_ema"))?,
            discriminator: c.stores.get("discriminator").cloned().ok_or_else(|| bad("discriminator"))?,
        })
    }
}

/// Builds and trains a model for `cfg.epochs` epochs.
pub fn train_gan(
    dataset: &[EmbeddedSequence],
    space: SpaceConfig,
    shape_types: Vec<String>,
    cfg: GanConfig,
) -> Result<GanModel, GanError> {
    if dataset.is_empty() {
        return Err(GanError::EmptyDataset);
    }
    let epochs = cfg.epochs;
    let mut model = GanModel::new(space, shape_types, cfg)?;
    model.train(dataset, epochs)?;
    Ok(model)
}
