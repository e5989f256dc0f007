//! SSB sweep simulation: per-beam RSRP measurement, best-beam limited
//! feedback, and SVD-optimal beam extraction used both as the perfect-CSI
//! upper bound and as training labels.
//!
//! RSRP for user `u` and beam `f` is `(gamma_u / N_T) * ||H~ f + n||^2`,
//! i.e. ideal maximum-ratio combining across the receive antennas with the
//! additive noise drawn inside the norm. With zero noise variance this is
//! exactly the combined received power, and a phase rotation of `f` cannot
//! change it.

use num_complex::Complex;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::array_geometry::{Codebook, Codeword};
use crate::channel::ChannelTensor;
use crate::error::{invalid, Result};
use crate::scalar::{cast, to_f64, Scalar};

/// Additive receiver noise: circularly symmetric complex Gaussian with the
/// given per-antenna variance, drawn from an explicit stream so every
/// measurement sequence is reproducible.
#[derive(Debug, Clone)]
pub struct NoiseModel<T: Scalar> {
    variance: T,
    rng: ChaCha8Rng,
}

impl<T: Scalar> NoiseModel<T> {
    pub fn new(variance: T, rng: ChaCha8Rng) -> Result<Self> {
        if variance < T::zero() {
            return Err(invalid("noise variance must be >= 0"));
        }
        Ok(Self { variance, rng })
    }

    /// Noiseless model; consumes no random draws.
    pub fn disabled() -> Self {
        Self {
            variance: T::zero(),
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn variance(&self) -> T {
        self.variance
    }

    fn sample(&mut self, n: usize) -> Vec<Complex<T>> {
        if self.variance == T::zero() {
            return vec![Complex::new(T::zero(), T::zero()); n];
        }
        let sd = (to_f64(self.variance) / 2.0).sqrt();
        (0..n)
            .map(|_| {
                let re: f64 = StandardNormal.sample(&mut self.rng);
                let im: f64 = StandardNormal.sample(&mut self.rng);
                Complex::new(cast::<T>(re * sd), cast::<T>(im * sd))
            })
            .collect()
    }
}

use rand::SeedableRng;

/// One user's limited feedback: the index of its best beam and that beam's
/// measured RSRP (linear power).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedbackEntry<T: Scalar> {
    pub beam_index: usize,
    pub rsrp: T,
}

impl<T: Scalar> FeedbackEntry<T> {
    pub fn rsrp_db(&self) -> f64 {
        10.0 * to_f64(self.rsrp).max(f64::MIN_POSITIVE).log10()
    }
}

/// Feedback of all active users, in roster order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackReport<T: Scalar> {
    pub entries: Vec<FeedbackEntry<T>>,
}

/// Measured RSRP for one user and one beam, with a fresh noise draw.
pub fn rsrp<T: Scalar>(
    h2: &ChannelTensor<T>,
    beam: &Codeword<T>,
    gamma: T,
    noise: &mut NoiseModel<T>,
) -> Result<T> {
    let n = noise.sample(h2.n_r());
    rsrp_with_noise(h2, beam, gamma, &n)
}

/// Noiseless RSRP; deterministic.
pub fn rsrp_noiseless<T: Scalar>(h2: &ChannelTensor<T>, beam: &Codeword<T>, gamma: T) -> Result<T> {
    let zeros = vec![Complex::new(T::zero(), T::zero()); h2.n_r()];
    rsrp_with_noise(h2, beam, gamma, &zeros)
}

fn rsrp_with_noise<T: Scalar>(
    h2: &ChannelTensor<T>,
    beam: &Codeword<T>,
    gamma: T,
    noise: &[Complex<T>],
) -> Result<T> {
    if beam.len() != h2.n_t() {
        return Err(invalid(format!(
            "beam length {} does not match channel width {}",
            beam.len(),
            h2.n_t()
        )));
    }
    if noise.len() != h2.n_r() {
        return Err(invalid("noise vector length must equal the receive antenna count"));
    }
    let f = beam.coefficients();
    let mut acc = 0.0f64;
    for i in 0..h2.n_r() {
        let row = h2.row(i);
        let mut y = Complex::new(0.0f64, 0.0);
        for (h, fj) in row.iter().zip(f) {
            let prod = *h * *fj;
            y.re += to_f64(prod.re);
            y.im += to_f64(prod.im);
        }
        y.re += to_f64(noise[i].re);
        y.im += to_f64(noise[i].im);
        acc += y.norm_sqr();
    }
    Ok(cast::<T>(to_f64(gamma) / h2.n_t() as f64 * acc))
}

/// Sweeps every codebook beam past every user, measuring RSRP with an
/// independent noise draw per (user, beam), and reports each user's maximum
/// and argmax. Ties break toward the lowest beam index.
pub fn sweep_feedback<T: Scalar>(
    channels: &[&ChannelTensor<T>],
    codebook: &Codebook<T>,
    gammas: &[T],
    noise: &mut NoiseModel<T>,
) -> Result<FeedbackReport<T>> {
    if codebook.is_empty() {
        return Err(invalid("cannot sweep an empty codebook"));
    }
    if channels.is_empty() {
        return Err(invalid("cannot sweep an empty roster"));
    }
    if channels.len() != gammas.len() {
        return Err(invalid("channels and gammas must have equal length"));
    }
    let mut entries = Vec::with_capacity(channels.len());
    for (h2, &gamma) in channels.iter().zip(gammas) {
        let mut best = FeedbackEntry {
            beam_index: 0,
            rsrp: T::neg_infinity(),
        };
        for (i, beam) in codebook.entries().iter().enumerate() {
            let p = rsrp(h2, beam, gamma, noise)?;
            if p > best.rsrp {
                best = FeedbackEntry {
                    beam_index: i,
                    rsrp: p,
                };
            }
        }
        entries.push(best);
    }
    Ok(FeedbackReport { entries })
}

/// A beam extracted from a user channel, carrying its singular value and the
/// roster index it came from (`None` for padding).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBeam<T: Scalar> {
    pub codeword: Codeword<T>,
    pub sigma: T,
    pub source_ue: Option<usize>,
}

/// Singular values and right singular vectors of a stacked channel, sorted
/// by non-increasing singular value. One-sided Jacobi on the conjugate
/// transpose: cheap for the short-and-wide channels used here.
pub fn jacobi_svd<T: Scalar>(h2: &ChannelTensor<T>) -> Vec<(T, Vec<Complex<T>>)> {
    let rows = h2.n_r();
    let cols = h2.n_t();
    // Columns of h2^H, each of length n_t.
    let mut m: Vec<Vec<Complex<f64>>> = (0..rows)
        .map(|i| {
            h2.row(i)
                .iter()
                .map(|c| Complex::new(to_f64(c.re), to_f64(c.im)).conj())
                .collect()
        })
        .collect();

    let tol = 1e-28; // on |<p,q>|^2 relative to ||p||^2 ||q||^2
    let max_sweeps = 60;
    for _ in 0..max_sweeps {
        let mut rotated = false;
        for p in 0..rows {
            for q in (p + 1)..rows {
                let (mut a, mut b) = (0.0f64, 0.0f64);
                let mut c = Complex::new(0.0f64, 0.0);
                for k in 0..cols {
                    a += m[p][k].norm_sqr();
                    b += m[q][k].norm_sqr();
                    c += m[p][k].conj() * m[q][k];
                }
                if c.norm_sqr() <= tol * a * b || c.norm_sqr() == 0.0 {
                    continue;
                }
                rotated = true;
                // Absorb the phase of <p, q> into column q, then apply the
                // real Jacobi rotation that zeroes the inner product.
                let phase = c / c.norm();
                let d = c.norm();
                let zeta = (b - a) / (2.0 * d);
                let t = if zeta >= 0.0 {
                    1.0 / (zeta + (1.0 + zeta * zeta).sqrt())
                } else {
                    -1.0 / (-zeta + (1.0 + zeta * zeta).sqrt())
                };
                let cos = 1.0 / (1.0 + t * t).sqrt();
                let sin = t * cos;
                for k in 0..cols {
                    let vp = m[p][k];
                    let vq = m[q][k] * phase.conj();
                    m[p][k] = vp * cos - vq * sin;
                    m[q][k] = vp * sin + vq * cos;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut out: Vec<(f64, Vec<Complex<f64>>)> = m
        .into_iter()
        .filter_map(|col| {
            let norm = col.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            if norm > 0.0 {
                Some((norm, col.into_iter().map(|c| c / norm).collect()))
            } else {
                None
            }
        })
        .collect();
    out.sort_by(|x, y| y.0.partial_cmp(&x.0).expect("finite singular values"));
    out.into_iter()
        .map(|(s, v)| {
            (
                cast::<T>(s),
                v.into_iter()
                    .map(|c| Complex::new(cast::<T>(c.re), cast::<T>(c.im)))
                    .collect(),
            )
        })
        .collect()
}

/// Rotates a vector by a unit phase so its largest-magnitude entry is real
/// and positive. Removes the arbitrary SVD phase so labels are a
/// deterministic function of the channel.
pub fn canonicalize_phase<T: Scalar>(v: &mut [Complex<T>]) {
    let mut best = 0usize;
    let mut best_mag = -1.0f64;
    for (i, c) in v.iter().enumerate() {
        let mag = to_f64(c.re) * to_f64(c.re) + to_f64(c.im) * to_f64(c.im);
        if mag > best_mag {
            best_mag = mag;
            best = i;
        }
    }
    if best_mag <= 0.0 {
        return;
    }
    let pivot = Complex::new(to_f64(v[best].re), to_f64(v[best].im));
    let rot = (pivot / pivot.norm()).conj();
    for c in v.iter_mut() {
        let x = Complex::new(to_f64(c.re), to_f64(c.im)) * rot;
        *c = Complex::new(cast::<T>(x.re), cast::<T>(x.im));
    }
}

/// Extracts up to `l_max` beams from the user channels: the `k_per_ue`
/// leading right singular vectors of each channel, pooled and sorted by
/// descending singular value, phase-canonicalized. All-zero channels are
/// skipped. If fewer than `l_max` beams result and `pad` is given, its
/// codewords fill the remaining slots in index order.
pub fn svd_beams<T: Scalar>(
    channels: &[&ChannelTensor<T>],
    l_max: usize,
    k_per_ue: usize,
    pad: Option<&Codebook<T>>,
) -> Result<Vec<LabeledBeam<T>>> {
    if channels.is_empty() {
        return Err(invalid("svd_beams requires at least one user channel"));
    }
    if k_per_ue < 1 {
        return Err(invalid("k_per_ue must be >= 1"));
    }
    let mut beams: Vec<LabeledBeam<T>> = Vec::new();
    for (ue, h2) in channels.iter().enumerate() {
        if h2.is_zero() {
            continue;
        }
        for (sigma, mut v) in jacobi_svd(*h2).into_iter().take(k_per_ue) {
            canonicalize_phase(&mut v);
            beams.push(LabeledBeam {
                codeword: Codeword::new(v, None)?,
                sigma,
                source_ue: Some(ue),
            });
        }
    }
    beams.sort_by(|a, b| {
        b.sigma
            .partial_cmp(&a.sigma)
            .expect("finite singular values")
            .then(a.source_ue.cmp(&b.source_ue))
    });
    beams.truncate(l_max);
    if let Some(pad) = pad {
        for cw in pad.entries() {
            if beams.len() >= l_max {
                break;
            }
            beams.push(LabeledBeam {
                codeword: cw.clone(),
                sigma: T::zero(),
                source_ue: None,
            });
        }
    }
    Ok(beams)
}

/// Per-user noiseless RSRP under perfect transmitter CSI: beamforming along
/// each user's own leading right singular vector, `gamma / N_T * sigma_1^2`.
/// Upper-bounds the noiseless RSRP of any unit-norm beam for that user.
pub fn csit_svd_rsrp<T: Scalar>(channels: &[&ChannelTensor<T>], gammas: &[T]) -> Result<Vec<T>> {
    if channels.is_empty() {
        return Err(invalid("csit_svd_rsrp requires at least one user channel"));
    }
    if channels.len() != gammas.len() {
        return Err(invalid("channels and gammas must have equal length"));
    }
    let mut out = Vec::with_capacity(channels.len());
    for (h2, &gamma) in channels.iter().zip(gammas) {
        let sigma1 = jacobi_svd(*h2).first().map(|(s, _)| to_f64(*s)).unwrap_or(0.0);
        out.push(cast::<T>(
            to_f64(gamma) / h2.n_t() as f64 * sigma1 * sigma1,
        ));
    }
    Ok(out)
}
