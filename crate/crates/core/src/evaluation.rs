//! Result reproduction at desk scale: per-interval RSRP metrics under the
//! DFT, learned-codebook and perfect-CSI policies, moving-average smoothing,
//! beam-selection histograms, codebook similarity reports and the
//! DFT-to-SVD gap-recovery fraction, plus the CSV writers behind the `eval`
//! command.
//!
//! Metric reporting is noiseless: feedback decisions may be taken on noisy
//! measurements (as configured), but every logged RSRP re-evaluates the
//! chosen beam without noise so curves compare beam quality, not noise
//! realizations.

use rayon::prelude::*;

use crate::array_geometry::{dft_codebook, similarity_matrix, AngularGrid, Codebook};
use crate::channel::{ChannelTensor, Episode, ScenarioConfig};
use crate::error::{invalid, Result};
use crate::initial_access::{csit_svd_rsrp, rsrp_noiseless, sweep_feedback, NoiseModel};
use crate::neural::Model;
use crate::observation::{build_observation, initial_observation, ObservationConfig};
use crate::rng::{streams, substream_tagged};
use crate::ssb_encoder::forward_codebook;

/// Beam-selection policy under evaluation.
pub enum Policy<'a> {
    /// Static DFT grid of beams.
    Dft,
    /// Learned codebook, re-inferred from the latest feedback.
    Encoder(&'a Model<f32>),
    /// Perfect CSI at the transmitter: per-user leading singular vector.
    CsitSvd,
}

impl Policy<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Dft => "dft",
            Policy::Encoder(_) => "encoder",
            Policy::CsitSvd => "svd",
        }
    }
}

/// Everything a scenario run needs besides the episodes themselves.
pub struct EvalContext {
    pub scenario: ScenarioConfig,
    pub obs_cfg: ObservationConfig,
    pub grid: AngularGrid,
    pub dft: Codebook<f64>,
    dft32: Codebook<f32>,
    pub master_seed: u64,
}

impl EvalContext {
    pub fn new(scenario: ScenarioConfig, obs_cfg: ObservationConfig, master_seed: u64) -> Result<Self> {
        scenario.validate()?;
        obs_cfg.validate()?;
        let geom = scenario.geometry();
        let sector = scenario.sector();
        let grid = AngularGrid::beamspace(&geom, &sector)?;
        let dft = dft_codebook::<f64>(&geom, scenario.n_az_beams, scenario.n_el_beams, &sector)?;
        let dft32 = dft.cast::<f32>();
        Ok(Self {
            scenario,
            obs_cfg,
            grid,
            dft,
            dft32,
            master_seed,
        })
    }
}

/// One evaluated (episode, interval) under one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub episode: usize,
    pub t: usize,
    pub policy: &'static str,
    /// dB of the mean linear RSRP over active users.
    pub mean_rsrp_db: f64,
    pub n_active: usize,
    /// Chosen beam index per active user; empty for the perfect-CSI policy.
    pub beam_indices: Vec<usize>,
}

fn db(linear: f64) -> f64 {
    10.0 * linear.max(f64::MIN_POSITIVE).log10()
}

/// Runs one policy over a set of episodes, emitting rows sorted by
/// (episode, interval). Intervals with no active user are skipped.
pub fn run_scenario(episodes: &[Episode], policy: &Policy<'_>, ctx: &EvalContext) -> Result<Vec<MetricsRow>> {
    let geom = ctx.scenario.geometry();
    let per_episode: Vec<Result<Vec<MetricsRow>>> = episodes
        .par_iter()
        .enumerate()
        .map(|(e, episode)| {
            let mut rows = Vec::with_capacity(episode.len());
            let mut noise = NoiseModel::new(
                ctx.scenario.noise_var,
                substream_tagged(ctx.master_seed, streams::NOISE, policy.name(), e as u64),
            )?;
            // The learned policy starts every episode from the cold-start
            // observation and replaces its codebook each interval.
            let mut encoder_book: Option<Codebook<f64>> = match policy {
                Policy::Encoder(model) => {
                    let cold = initial_observation(&ctx.dft, &geom, &ctx.grid, &ctx.obs_cfg)?;
                    let out = forward_codebook(model, &cold.cast::<f32>(), &ctx.dft32)?;
                    Some(out.codebook.cast::<f64>())
                }
                _ => None,
            };

            for (t, step) in episode.steps.iter().enumerate() {
                let channels: Vec<&ChannelTensor<f64>> =
                    step.active().map(|(_, u)| &u.channel).collect();
                let gammas: Vec<f64> = step.active().map(|(_, u)| u.gamma).collect();
                if channels.is_empty() {
                    continue;
                }
                let bounds = csit_svd_rsrp(&channels, &gammas)?;
                let row = match policy {
                    Policy::CsitSvd => MetricsRow {
                        episode: e,
                        t,
                        policy: policy.name(),
                        mean_rsrp_db: db(bounds.iter().sum::<f64>() / bounds.len() as f64),
                        n_active: channels.len(),
                        beam_indices: Vec::new(),
                    },
                    Policy::Dft | Policy::Encoder(_) => {
                        let book = match &encoder_book {
                            Some(b) => b,
                            None => &ctx.dft,
                        };
                        let feedback = sweep_feedback(&channels, book, &gammas, &mut noise)?;
                        let mut total = 0.0;
                        for ((h2, &gamma), entry) in
                            channels.iter().zip(&gammas).zip(&feedback.entries)
                        {
                            let p = rsrp_noiseless(h2, &book.entries()[entry.beam_index], gamma)?;
                            total += p;
                        }
                        for ((h2, &gamma), &bound) in channels.iter().zip(&gammas).zip(&bounds) {
                            for cw in book.entries() {
                                debug_assert!(
                                    rsrp_noiseless(h2, cw, gamma)? <= bound * (1.0 + 1e-10),
                                    "codebook RSRP exceeded the perfect-CSI bound"
                                );
                            }
                        }
                        let indices: Vec<usize> =
                            feedback.entries.iter().map(|f| f.beam_index).collect();
                        if let (Policy::Encoder(model), Some(book_now)) = (policy, &encoder_book) {
                            if crate::ssb_encoder::EncoderConfig::default().iterative || true {
                                // Observation over the codebook that was
                                // actually swept, then the next codebook.
                                let obs = build_observation(
                                    &feedback,
                                    book_now,
                                    &geom,
                                    &ctx.grid,
                                    &ctx.obs_cfg,
                                )?;
                                let out =
                                    forward_codebook(model, &obs.cast::<f32>(), &ctx.dft32)?;
                                encoder_book = Some(out.codebook.cast::<f64>());
                            }
                        }
                        MetricsRow {
                            episode: e,
                            t,
                            policy: policy.name(),
                            mean_rsrp_db: db(total / channels.len() as f64),
                            n_active: channels.len(),
                            beam_indices: indices,
                        }
                    }
                };
                rows.push(row);
            }
            Ok(rows)
        })
        .collect();

    let mut out = Vec::new();
    for rows in per_episode {
        out.extend(rows?);
    }
    Ok(out)
}

/// Causal boxcar mean with a shrinking window at the head; output length
/// equals input length.
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    if window == 0 {
        return series.to_vec();
    }
    let mut out = Vec::with_capacity(series.len());
    let mut acc = 0.0f64;
    for i in 0..series.len() {
        acc += series[i];
        if i >= window {
            acc -= series[i - window];
        }
        let n = (i + 1).min(window);
        out.push(acc / n as f64);
    }
    out
}

/// Normalized histogram of beam indices over `[0, l)`.
pub fn beam_histogram(indices: &[usize], l: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; l];
    for &i in indices {
        if i >= l {
            return Err(invalid(format!("beam index {i} out of range 0..{l}")));
        }
        counts[i] += 1;
    }
    let total = indices.len().max(1) as f64;
    Ok(counts.into_iter().map(|c| c as f64 / total).collect())
}

/// Shannon entropy (nats) of a normalized histogram.
pub fn histogram_entropy(hist: &[f64]) -> f64 {
    -hist
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Similarity matrix plus its maximum off-diagonal entry.
pub fn similarity_report(codebook: &Codebook<f64>) -> Result<(Vec<Vec<f64>>, f64)> {
    let m = similarity_matrix(codebook)?;
    let mut max_off = 0.0f64;
    for (i, row) in m.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if i != j && v > max_off {
                max_off = v;
            }
        }
    }
    Ok((m, max_off))
}

/// Fraction of the DFT-to-perfect-CSI gap recovered by the learned
/// codebook; undefined when there is no gap.
pub fn gap_recovery(dft_mean_db: f64, enc_mean_db: f64, svd_mean_db: f64) -> Option<f64> {
    if svd_mean_db <= dft_mean_db {
        return None;
    }
    Some((enc_mean_db - dft_mean_db) / (svd_mean_db - dft_mean_db))
}

/// Grand summary of one policy's rows: dB of the user-weighted mean linear
/// RSRP across every evaluated (user, interval).
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySummary {
    pub policy: &'static str,
    pub mean_rsrp_db: f64,
    pub n_rows: usize,
}

pub fn summarize(rows: &[MetricsRow]) -> Result<PolicySummary> {
    if rows.is_empty() {
        return Err(invalid("cannot summarize an empty metrics stream"));
    }
    let policy = rows[0].policy;
    let mut linear_sum = 0.0;
    let mut users = 0usize;
    for row in rows {
        if row.policy != policy {
            return Err(invalid("summarize expects rows from a single policy"));
        }
        linear_sum += 10f64.powf(row.mean_rsrp_db / 10.0) * row.n_active as f64;
        users += row.n_active;
    }
    Ok(PolicySummary {
        policy,
        mean_rsrp_db: db(linear_sum / users as f64),
        n_rows: rows.len(),
    })
}

/// `episode,t,policy,mean_rsrp_db,n_active,beam_indices` with the index
/// list JSON-like and quoted.
pub fn write_metrics_csv(path: &std::path::Path, rows: &[MetricsRow]) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "episode,t,policy,mean_rsrp_db,n_active,beam_indices")?;
    for r in rows {
        let indices = r
            .beam_indices
            .iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(",");
        writeln!(
            w,
            "{},{},{},{:.6},{},\"[{}]\"",
            r.episode, r.t, r.policy, r.mean_rsrp_db, r.n_active, indices
        )?;
    }
    Ok(())
}

/// `beam,fraction,policy`.
pub fn write_histogram_csv(path: &std::path::Path, entries: &[(&str, Vec<f64>)]) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "beam,fraction,policy")?;
    for (policy, hist) in entries {
        for (beam, fraction) in hist.iter().enumerate() {
            writeln!(w, "{beam},{fraction:.6},{policy}")?;
        }
    }
    Ok(())
}

/// `i,j,value,policy`.
pub fn write_similarity_csv(path: &std::path::Path, entries: &[(&str, Vec<Vec<f64>>)]) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "i,j,value,policy")?;
    for (policy, matrix) in entries {
        for (i, row) in matrix.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                writeln!(w, "{i},{j},{v:.6},{policy}")?;
            }
        }
    }
    Ok(())
}
