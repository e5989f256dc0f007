//! The codebook-learning pipeline: autoencoder assembly, SVD label
//! construction, supervised training with learning-rate reduction and early
//! stopping, and conversion of raw network output into a deployable SSB
//! codebook.
//!
//! The network maps the beamspace observation (`l_max` slices over the
//! angular grid) to `2 l_max` real channels over the element grid, read as
//! interleaved real/imaginary parts of the proposed codewords. Labels are
//! the users' leading right singular vectors, each written into the output
//! slot of the DFT beam it overlaps most, with untouched slots holding the
//! DFT codeword itself; training minimizes plain MSE on the raw output and
//! unit-norm projection applies only at deployment.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array_geometry::{cosine_similarity, AngularGrid, Codebook, Codeword};
use crate::channel::{ChannelTensor, Episode, ScenarioConfig};
use crate::error::{invalid, Error, Result};
use crate::initial_access::{svd_beams, sweep_feedback, NoiseModel};
use crate::neural::{
    conv_output_dim, conv_transpose_output_dim, Layer, LayerKind, LayerParams, Model,
    ModelGrads, ModelOptimizer, Tensor4,
};
use crate::observation::{build_observation, Observation, ObservationConfig};
use crate::rng::{streams, substream};
use crate::scalar::{cast, to_f64, Scalar};

/// Architecture and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Channel widths of the two encoder stages (decoder mirrors them).
    pub width1: usize,
    pub width2: usize,
    /// Square kernel size used by every layer.
    pub kernel: usize,
    /// Strides of the two encoder stages.
    pub stride1: usize,
    pub stride2: usize,
    /// Zero padding used by every layer.
    pub padding: usize,
    /// Adam learning rate.
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Learning-rate reduction factor and its patience, epochs.
    pub lr_factor: f64,
    pub lr_patience: usize,
    /// Epochs without validation improvement before stopping.
    pub early_stop_patience: usize,
    /// Leading singular vectors taken per user when building labels.
    pub vectors_per_ue: usize,
    /// Fraction of episodes hashed into the validation split.
    pub val_ratio: f64,
    /// Deployment mode: re-infer the codebook from the latest feedback each
    /// interval (otherwise hold the cold-start codebook).
    pub iterative: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            width1: 32,
            width2: 64,
            kernel: 4,
            stride1: 2,
            stride2: 2,
            padding: 1,
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 200,
            lr_factor: 0.5,
            lr_patience: 5,
            early_stop_patience: 12,
            vectors_per_ue: 1,
            val_ratio: 0.1,
            iterative: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self, l_max: usize, n_x: usize, n_y: usize) -> Result<()> {
        if self.width1 < 1 || self.width2 < 1 {
            return Err(invalid("encoder.width1/width2 must be >= 1"));
        }
        if self.kernel < 1 || self.stride1 < 1 || self.stride2 < 1 {
            return Err(invalid("encoder.kernel and strides must be >= 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("encoder.learning_rate must be finite and >= 0"));
        }
        if self.batch_size < 1 {
            return Err(invalid("encoder.batch_size must be >= 1"));
        }
        if !(0.0 < self.lr_factor && self.lr_factor <= 1.0) {
            return Err(invalid("encoder.lr_factor must lie in (0, 1]"));
        }
        if self.lr_patience < 1 || self.early_stop_patience < 1 {
            return Err(invalid("encoder patience values must be >= 1"));
        }
        if self.vectors_per_ue < 1 {
            return Err(invalid("encoder.vectors_per_ue must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.val_ratio) {
            return Err(invalid("encoder.val_ratio must lie in [0, 1)"));
        }
        // The decoder must land exactly back on the grid.
        let (ex, ey) = self.encoder_dims(n_x, n_y)?;
        let dx1 = conv_transpose_output_dim(ex, self.kernel, self.stride2, self.padding)?;
        let dy1 = conv_transpose_output_dim(ey, self.kernel, self.stride2, self.padding)?;
        let dx2 = conv_transpose_output_dim(dx1, self.kernel, self.stride1, self.padding)?;
        let dy2 = conv_transpose_output_dim(dy1, self.kernel, self.stride1, self.padding)?;
        if (dx2, dy2) != (n_x, n_y) {
            return Err(invalid(format!(
                "encoder geometry does not reconstruct the {n_x} x {n_y} grid \
                 (decoder produces {dx2} x {dy2}); adjust kernel/strides/padding"
            )));
        }
        if 2 * l_max == 0 {
            return Err(invalid("output channels must be even and positive"));
        }
        Ok(())
    }

    fn encoder_dims(&self, n_x: usize, n_y: usize) -> Result<(usize, usize)> {
        let ex1 = conv_output_dim(n_x, self.kernel, self.stride1, self.padding)?;
        let ey1 = conv_output_dim(n_y, self.kernel, self.stride1, self.padding)?;
        let ex2 = conv_output_dim(ex1, self.kernel, self.stride2, self.padding)?;
        let ey2 = conv_output_dim(ey1, self.kernel, self.stride2, self.padding)?;
        Ok((ex2, ey2))
    }
}

fn glorot_kernels<T: Scalar>(
    shape: [usize; 4],
    fan_in: usize,
    fan_out: usize,
    rng: &mut ChaCha8Rng,
) -> Tensor4<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..shape.iter().product::<usize>())
        .map(|_| cast::<T>((rng.gen::<f64>() * 2.0 - 1.0) * bound))
        .collect();
    Tensor4::from_vec(shape, data).expect("shape matches data")
}

/// Builds the four-layer autoencoder: two strided convolutions with ReLU,
/// mirrored by two transposed convolutions, the last one linear with
/// `2 l_max` output channels.
pub fn build_model<T: Scalar>(
    cfg: &EncoderConfig,
    l_max: usize,
    n_x: usize,
    n_y: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Model<T>> {
    cfg.validate(l_max, n_x, n_y)?;
    let k = cfg.kernel;
    let kk = k * k;
    let (c_in, c1, c2, c_out) = (l_max, cfg.width1, cfg.width2, 2 * l_max);

    let layers = vec![
        Layer {
            kind: LayerKind::Conv,
            params: LayerParams::new(
                glorot_kernels::<T>([c1, c_in, k, k], c_in * kk, c1 * kk, rng),
                vec![T::zero(); c1],
                cfg.stride1,
                cfg.padding,
            )?,
            relu: true,
        },
        Layer {
            kind: LayerKind::Conv,
            params: LayerParams::new(
                glorot_kernels::<T>([c2, c1, k, k], c1 * kk, c2 * kk, rng),
                vec![T::zero(); c2],
                cfg.stride2,
                cfg.padding,
            )?,
            relu: true,
        },
        Layer {
            kind: LayerKind::ConvTranspose,
            params: LayerParams::new(
                glorot_kernels::<T>([c2, c1, k, k], c2 * kk, c1 * kk, rng),
                vec![T::zero(); c1],
                cfg.stride2,
                cfg.padding,
            )?,
            relu: true,
        },
        Layer {
            kind: LayerKind::ConvTranspose,
            params: LayerParams::new(
                glorot_kernels::<T>([c1, c_out, k, k], c1 * kk, c_out * kk, rng),
                vec![T::zero(); c_out],
                cfg.stride1,
                cfg.padding,
            )?,
            relu: false,
        },
    ];
    Ok(Model::new(layers))
}

/// Builds the per-timestep label codebook: users' leading singular vectors
/// assigned greedily (strongest first) to the slot of the most similar DFT
/// beam, remaining slots holding the DFT codeword. Every vector is
/// phase-canonicalized.
pub fn make_label(
    channels: &[&ChannelTensor<f64>],
    dft: &Codebook<f64>,
    l_max: usize,
    vectors_per_ue: usize,
) -> Result<Vec<Codeword<f64>>> {
    let mut slots: Vec<Option<Codeword<f64>>> = vec![None; l_max];
    if !channels.is_empty() {
        let beams = svd_beams(channels, l_max, vectors_per_ue, None)?;
        for beam in beams {
            // Slots ranked by beam overlap; strongest vectors pick first.
            let mut ranked: Vec<(usize, f64)> = dft
                .entries()
                .iter()
                .enumerate()
                .map(|(i, cw)| {
                    let sim = cosine_similarity(beam.codeword.coefficients(), cw.coefficients())
                        .map(to_f64)
                        .unwrap_or(0.0);
                    (i, sim)
                })
                .collect();
            ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite similarity"));
            for (slot, _) in ranked {
                if slot < l_max && slots[slot].is_none() {
                    slots[slot] = Some(beam.codeword.clone());
                    break;
                }
            }
        }
    }
    let mut out = Vec::with_capacity(l_max);
    for (i, slot) in slots.into_iter().enumerate() {
        match slot {
            Some(cw) => out.push(cw),
            None => {
                let mut coeffs = dft
                    .entries()
                    .get(i)
                    .ok_or_else(|| invalid("label codebook shorter than l_max"))?
                    .coefficients()
                    .to_vec();
                crate::initial_access::canonicalize_phase(&mut coeffs);
                out.push(Codeword::new(coeffs, Some(i))?);
            }
        }
    }
    Ok(out)
}

/// Lays a label codebook out as the network target: channel `2i` carries the
/// real part of beam `i` over the element grid, channel `2i + 1` the
/// imaginary part, with element `(m, n)` at spatial position `(m, n)`.
pub fn label_target_tensor<T: Scalar>(labels: &[Codeword<f64>], n_x: usize, n_y: usize) -> Result<Tensor4<T>> {
    let l_max = labels.len();
    let mut t = Tensor4::<T>::zeros([1, 2 * l_max, n_x, n_y]);
    for (i, cw) in labels.iter().enumerate() {
        if cw.len() != n_x * n_y {
            return Err(invalid("label codeword length must match the element grid"));
        }
        for n in 0..n_y {
            for m in 0..n_x {
                let c = cw.coefficients()[n * n_x + m];
                t.set(0, 2 * i, m, n, cast::<T>(c.re));
                t.set(0, 2 * i + 1, m, n, cast::<T>(c.im));
            }
        }
    }
    Ok(t)
}

/// Observation tensor as network input (batch of one).
pub fn observation_input_tensor<T: Scalar>(obs: &Observation<T>) -> Tensor4<T> {
    Tensor4::from_vec([1, obs.l_max(), obs.n_az(), obs.n_el()], obs.data().to_vec())
        .expect("observation dimensions are consistent")
}

/// Network output converted to a deployable codebook.
#[derive(Debug, Clone)]
pub struct EncoderCodebook<T: Scalar> {
    pub codebook: Codebook<T>,
    /// Slots whose raw output was all-zero and fell back to the DFT beam.
    pub fallbacks: Vec<bool>,
}

impl<T: Scalar> EncoderCodebook<T> {
    pub fn any_fallback(&self) -> bool {
        self.fallbacks.iter().any(|&f| f)
    }
}

/// Runs the network on an observation and reads the output back as `l_max`
/// unit-norm codewords. All-zero beams fall back to the matching DFT
/// codeword and are flagged.
pub fn forward_codebook<T: Scalar>(
    model: &Model<T>,
    obs: &Observation<T>,
    fallback: &Codebook<T>,
) -> Result<EncoderCodebook<T>> {
    let l_max = obs.l_max();
    if fallback.len() < l_max {
        return Err(invalid("fallback codebook must cover every output slot"));
    }
    let out = model.forward(&observation_input_tensor(obs))?;
    let [_, ch, n_x, n_y] = *out.shape();
    if ch != 2 * l_max {
        return Err(invalid(format!(
            "network produced {ch} channels, expected {}",
            2 * l_max
        )));
    }
    let mut entries = Vec::with_capacity(l_max);
    let mut fallbacks = vec![false; l_max];
    for i in 0..l_max {
        let mut coeffs = vec![num_complex::Complex::new(T::zero(), T::zero()); n_x * n_y];
        for n in 0..n_y {
            for m in 0..n_x {
                coeffs[n * n_x + m] =
                    num_complex::Complex::new(out.get(0, 2 * i, m, n), out.get(0, 2 * i + 1, m, n));
            }
        }
        if crate::array_geometry::vector_norm(&coeffs) <= 1e-20 {
            fallbacks[i] = true;
            entries.push(fallback.entries()[i].clone());
        } else {
            entries.push(Codeword::new(coeffs, Some(i))?);
        }
    }
    Ok(EncoderCodebook {
        codebook: Codebook::new(entries, fallback.l_max())?,
        fallbacks,
    })
}

/// One supervised sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T: Scalar> {
    pub input: Tensor4<T>,
    pub target: Tensor4<T>,
}

/// Builds the supervised dataset from episodes: per timestep, a noisy DFT
/// sweep produces the observation input and the same timestep's channels
/// produce the SVD label target. Episodes hash deterministically into
/// train/validation splits.
pub fn build_dataset<T: Scalar>(
    episodes: &[Episode],
    scenario: &ScenarioConfig,
    obs_cfg: &ObservationConfig,
    enc_cfg: &EncoderConfig,
    master_seed: u64,
) -> Result<(Vec<Sample<T>>, Vec<Sample<T>>)> {
    if episodes.is_empty() {
        return Err(invalid("cannot build a dataset from zero episodes"));
    }
    let geom = scenario.geometry();
    let sector = scenario.sector();
    let grid = AngularGrid::beamspace(&geom, &sector)?;
    let dft = crate::array_geometry::dft_codebook::<f64>(
        &geom,
        scenario.n_az_beams,
        scenario.n_el_beams,
        &sector,
    )?;
    let l_max = dft.l_max();

    let per_episode: Vec<Result<(bool, Vec<Sample<T>>)>> = episodes
        .par_iter()
        .enumerate()
        .map(|(idx, episode)| {
            let mut noise = NoiseModel::new(
                scenario.noise_var,
                substream(master_seed, streams::NOISE, idx as u64),
            )?;
            let is_val =
                substream(master_seed, "split", idx as u64).gen::<f64>() < enc_cfg.val_ratio;
            let mut samples = Vec::with_capacity(episode.len());
            for step in &episode.steps {
                let channels: Vec<&ChannelTensor<f64>> =
                    step.active().map(|(_, u)| &u.channel).collect();
                let gammas: Vec<f64> = step.active().map(|(_, u)| u.gamma).collect();
                if channels.is_empty() {
                    continue;
                }
                let feedback = sweep_feedback(&channels, &dft, &gammas, &mut noise)?;
                let obs = build_observation(&feedback, &dft, &geom, &grid, obs_cfg)?;
                let labels = make_label(&channels, &dft, l_max, enc_cfg.vectors_per_ue)?;
                samples.push(Sample {
                    input: observation_input_tensor(&obs.cast::<T>()),
                    target: label_target_tensor::<T>(&labels, geom.n_x(), geom.n_y())?,
                });
            }
            Ok((is_val, samples))
        })
        .collect();

    let mut train = Vec::new();
    let mut val = Vec::new();
    for result in per_episode {
        let (is_val, samples) = result?;
        if is_val {
            val.extend(samples);
        } else {
            train.extend(samples);
        }
    }
    Ok((train, val))
}

/// One history row per epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub lr: f64,
}

/// Training outcome: the best-validation snapshot and the loss history.
pub struct TrainOutcome<T: Scalar> {
    pub model: Model<T>,
    pub history: Vec<EpochStats>,
    /// Validation MSE of the returned snapshot.
    pub best_val_mse: f64,
}

fn mean_loss<T: Scalar>(model: &Model<T>, samples: &[Sample<T>]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let losses: Vec<Result<f64>> = samples
        .par_iter()
        .map(|s| {
            let out = model.forward(&s.input)?;
            Ok(to_f64(crate::neural::mse_loss(&out, &s.target)?.0))
        })
        .collect();
    let mut acc = 0.0;
    for l in losses {
        acc += l?;
    }
    Ok(acc / samples.len() as f64)
}

/// Mini-batch Adam on the raw-output MSE with learning-rate reduction and
/// early stopping on the validation loss. Returns the best-validation
/// snapshot; with no improvement that is the initial model.
pub fn train<T: Scalar>(
    model: Model<T>,
    train_set: &[Sample<T>],
    val_set: &[Sample<T>],
    cfg: &EncoderConfig,
    master_seed: u64,
) -> Result<TrainOutcome<T>> {
    if train_set.is_empty() {
        return Err(invalid("training requires a nonempty dataset"));
    }
    let mut model = model;
    let mut optimizer = ModelOptimizer::new(
        &model,
        crate::neural::AdamHyper {
            lr: cfg.learning_rate,
            ..Default::default()
        },
    );

    // Scheduling falls back to the training loss when no validation split
    // exists.
    let score_set = if val_set.is_empty() { train_set } else { val_set };
    let mut best_val = mean_loss(&model, score_set)?;
    let mut best_model = model.clone();
    let mut history = Vec::with_capacity(cfg.max_epochs);
    let mut epochs_since_best = 0usize;
    let mut lr_epochs_since_best = 0usize;

    for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut substream(master_seed, streams::SHUFFLE, epoch as u64));

        let mut epoch_loss = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<Result<(f64, ModelGrads<T>)>> = batch
                .par_iter()
                .map(|&i| {
                    let sample = &train_set[i];
                    let cache = model.forward_cached(&sample.input)?;
                    let (loss, up) = crate::neural::mse_loss(&cache.output, &sample.target)?;
                    let grads = model.backward(&cache, &up)?;
                    Ok((to_f64(loss), grads))
                })
                .collect();

            let mut batch_grads = ModelGrads::zeros_like(&model);
            let mut batch_loss = 0.0f64;
            for r in results {
                let (loss, grads) = r?;
                batch_loss += loss;
                batch_grads.accumulate(&grads);
            }
            batch_grads.scale(cast::<T>(1.0 / batch.len() as f64));
            epoch_loss += batch_loss;
            optimizer.step(&mut model, &batch_grads)?;
        }
        let train_mse = epoch_loss / train_set.len() as f64;
        let val_mse = mean_loss(&model, score_set)?;
        if !train_mse.is_finite() || !val_mse.is_finite() {
            return Err(Error::Numerical(format!(
                "loss diverged at epoch {epoch}: train {train_mse}, val {val_mse}"
            )));
        }
        history.push(EpochStats {
            epoch,
            train_mse,
            val_mse,
            lr: optimizer.hyper.lr,
        });

        if val_mse < best_val {
            best_val = val_mse;
            best_model = model.clone();
            epochs_since_best = 0;
            lr_epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            lr_epochs_since_best += 1;
            if lr_epochs_since_best >= cfg.lr_patience {
                optimizer.hyper.lr *= cfg.lr_factor;
                lr_epochs_since_best = 0;
            }
            if epochs_since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        model: best_model,
        history,
        best_val_mse: best_val,
    })
}

pub use crate::neural::{load_model, save_model};

/// Writes the training history as `epoch,train_mse,val_mse,lr`.
pub fn write_history_csv(path: &std::path::Path, history: &[EpochStats]) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "epoch,train_mse,val_mse,lr")?;
    for row in history {
        writeln!(w, "{},{:e},{:e},{:e}", row.epoch, row.train_mse, row.val_mse, row.lr)?;
    }
    Ok(())
}
