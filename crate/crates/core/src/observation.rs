//! Beamspace observation construction from limited feedback.
//!
//! Each reported beam contributes its angular support region (the grid
//! points within the top `a_max` dB of that beam's pattern), smoothed with a
//! 4x4 Gaussian kernel, weighted by the reported RSRP, summed over the users
//! reporting that beam, and finally normalized to unit Frobenius norm per
//! beam slice. Beams nobody reported stay all-zero.
//!
//! Since the support mask depends only on the beam, the per-slice weighted
//! sum factors as `smoothed_mask * (sum of RSRPs)`, and the trailing
//! normalization cancels the weight algebraically. The builder exploits
//! this: reported RSRPs only gate which slices are active, which makes the
//! observation exactly (bit-for-bit) invariant to any global rescaling of
//! the feedback.

use crate::array_geometry::{array_gain_grid, AngularGrid, ArrayGeometry, Codebook};
use crate::error::{invalid, Result};
use crate::initial_access::FeedbackReport;
use crate::scalar::{cast, to_f64, Scalar};

/// Observation construction parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservationConfig {
    /// Support threshold below each beam's grid maximum, dB.
    pub a_max_db: f64,
    /// Gaussian smoothing width, grid units.
    pub kernel_sigma: f64,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self {
            a_max_db: 6.0,
            kernel_sigma: 1.0,
        }
    }
}

impl ObservationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.a_max_db > 0.0) {
            return Err(invalid("observation.a_max_db must be > 0"));
        }
        if !(self.kernel_sigma > 0.0) {
            return Err(invalid("observation.kernel_sigma must be > 0"));
        }
        Ok(())
    }
}

/// The beamspace input tensor: `l_max` slices of `n_az x n_el` non-negative
/// reals, each active slice holding unit Frobenius norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation<T: Scalar> {
    l_max: usize,
    n_az: usize,
    n_el: usize,
    data: Vec<T>,
    provenance: u64,
}

impl<T: Scalar> Observation<T> {
    pub fn zeros(l_max: usize, n_az: usize, n_el: usize) -> Self {
        Self {
            l_max,
            n_az,
            n_el,
            data: vec![T::zero(); l_max * n_az * n_el],
            provenance: 0,
        }
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn n_az(&self) -> usize {
        self.n_az
    }

    pub fn n_el(&self) -> usize {
        self.n_el
    }

    /// Digest of the feedback that produced this observation.
    pub fn provenance(&self) -> u64 {
        self.provenance
    }

    #[inline]
    pub fn get(&self, beam: usize, az: usize, el: usize) -> T {
        self.data[(beam * self.n_az + az) * self.n_el + el]
    }

    pub fn slice(&self, beam: usize) -> &[T] {
        let n = self.n_az * self.n_el;
        &self.data[beam * n..(beam + 1) * n]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn slice_frobenius(&self, beam: usize) -> f64 {
        self.slice(beam)
            .iter()
            .map(|&v| to_f64(v) * to_f64(v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn cast<U: Scalar>(&self) -> Observation<U> {
        Observation {
            l_max: self.l_max,
            n_az: self.n_az,
            n_el: self.n_el,
            data: self.data.iter().map(|&v| cast::<U>(to_f64(v))).collect(),
            provenance: self.provenance,
        }
    }
}

/// 4x4 Gaussian kernel centered on the fractional point (1.5, 1.5),
/// normalized to sum 1. Four-fold symmetric about that center.
pub fn gaussian_kernel4<T: Scalar>(sigma: f64) -> Result<[[T; 4]; 4]> {
    if !(sigma > 0.0) {
        return Err(invalid(format!("kernel sigma must be > 0, got {sigma}")));
    }
    let mut raw = [[0.0f64; 4]; 4];
    let mut total = 0.0;
    for (x, row) in raw.iter_mut().enumerate() {
        for (y, v) in row.iter_mut().enumerate() {
            let dx = x as f64 - 1.5;
            let dy = y as f64 - 1.5;
            *v = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    let mut out = [[T::zero(); 4]; 4];
    for x in 0..4 {
        for y in 0..4 {
            out[x][y] = cast::<T>(raw[x][y] / total);
        }
    }
    Ok(out)
}

/// Grid points within `a_max` dB of the beam's own maximum over the grid.
pub fn beam_support_mask<T: Scalar>(
    codeword: &crate::array_geometry::Codeword<T>,
    geom: &ArrayGeometry,
    grid: &AngularGrid,
    a_max_db: f64,
) -> Result<Vec<Vec<bool>>> {
    let gains = array_gain_grid(codeword, geom, grid)?;
    let peak = gains
        .iter()
        .flatten()
        .map(|&g| to_f64(g))
        .fold(f64::NEG_INFINITY, f64::max);
    let threshold = peak - a_max_db;
    Ok(gains
        .iter()
        .map(|row| row.iter().map(|&g| to_f64(g) >= threshold).collect())
        .collect())
}

/// "Same"-size convolution of a mask with the 4x4 kernel: kernel tap
/// `(u, v)` multiplies the input at `(i + u - 1, j + v - 1)` with zero
/// padding, fixing the even kernel's center at offset (1, 1).
fn smooth_mask<T: Scalar>(mask: &[Vec<bool>], kernel: &[[T; 4]; 4]) -> Vec<f64> {
    let n_az = mask.len();
    let n_el = mask[0].len();
    let mut out = vec![0.0f64; n_az * n_el];
    for i in 0..n_az {
        for j in 0..n_el {
            let mut acc = 0.0;
            for (u, krow) in kernel.iter().enumerate() {
                let ii = i as isize + u as isize - 1;
                if ii < 0 || ii >= n_az as isize {
                    continue;
                }
                for (v, &k) in krow.iter().enumerate() {
                    let jj = j as isize + v as isize - 1;
                    if jj < 0 || jj >= n_el as isize {
                        continue;
                    }
                    if mask[ii as usize][jj as usize] {
                        acc += to_f64(k);
                    }
                }
            }
            out[i * n_el + j] = acc;
        }
    }
    out
}

fn feedback_digest<T: Scalar>(report: &FeedbackReport<T>) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for e in &report.entries {
        h.update((e.beam_index as u64).to_le_bytes());
        h.update(to_f64(e.rsrp).to_le_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest prefix"))
}

/// Smoothed, normalized support slice for one beam; the shared factor of
/// every report on that beam.
fn normalized_slice<T: Scalar>(
    codeword: &crate::array_geometry::Codeword<T>,
    geom: &ArrayGeometry,
    grid: &AngularGrid,
    cfg: &ObservationConfig,
    kernel: &[[T; 4]; 4],
) -> Result<Vec<T>> {
    let mask = beam_support_mask(codeword, geom, grid, cfg.a_max_db)?;
    let smoothed = smooth_mask(&mask, kernel);
    let norm = smoothed.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= 0.0 {
        return Ok(vec![T::zero(); grid.n_az() * grid.n_el()]);
    }
    Ok(smoothed.into_iter().map(|v| cast::<T>(v / norm)).collect())
}

/// Builds the observation tensor from one feedback round.
pub fn build_observation<T: Scalar>(
    feedback: &FeedbackReport<T>,
    codebook: &Codebook<T>,
    geom: &ArrayGeometry,
    grid: &AngularGrid,
    cfg: &ObservationConfig,
) -> Result<Observation<T>> {
    cfg.validate()?;
    let l_max = codebook.l_max();
    for e in &feedback.entries {
        if e.beam_index >= codebook.len() {
            return Err(invalid(format!(
                "feedback references beam {} but the codebook holds {}",
                e.beam_index,
                codebook.len()
            )));
        }
        if e.rsrp < T::zero() {
            return Err(invalid("reported RSRP must be >= 0"));
        }
    }
    let kernel = gaussian_kernel4::<T>(cfg.kernel_sigma)?;
    let mut obs = Observation::<T>::zeros(l_max, grid.n_az(), grid.n_el());
    obs.provenance = feedback_digest(feedback);

    let n = grid.n_az() * grid.n_el();
    for (beam_index, codeword) in codebook.entries().iter().enumerate() {
        let total_weight: f64 = feedback
            .entries
            .iter()
            .filter(|e| e.beam_index == beam_index)
            .map(|e| to_f64(e.rsrp))
            .sum();
        if total_weight <= 0.0 {
            continue;
        }
        let slice = normalized_slice(codeword, geom, grid, cfg, &kernel)?;
        obs.data[beam_index * n..(beam_index + 1) * n].copy_from_slice(&slice);
    }
    Ok(obs)
}

/// RSRP-weighted smoothed support accumulation before normalization; the
/// linear half of the observation builder, exposed so its additivity in the
/// reported powers can be checked directly.
pub fn accumulate_reports<T: Scalar>(
    feedback: &FeedbackReport<T>,
    codebook: &Codebook<T>,
    geom: &ArrayGeometry,
    grid: &AngularGrid,
    cfg: &ObservationConfig,
) -> Result<Vec<Vec<f64>>> {
    let kernel = gaussian_kernel4::<T>(cfg.kernel_sigma)?;
    let n = grid.n_az() * grid.n_el();
    let mut slices = vec![vec![0.0f64; n]; codebook.l_max()];
    for e in &feedback.entries {
        if e.beam_index >= codebook.len() {
            return Err(invalid("feedback beam index out of range"));
        }
        let mask = beam_support_mask(&codebook.entries()[e.beam_index], geom, grid, cfg.a_max_db)?;
        let smoothed = smooth_mask(&mask, &kernel);
        for (acc, v) in slices[e.beam_index].iter_mut().zip(smoothed) {
            *acc += to_f64(e.rsrp) * v;
        }
    }
    Ok(slices)
}

/// Cold-start observation: every codebook beam reported exactly once with
/// equal RSRP.
pub fn initial_observation<T: Scalar>(
    codebook: &Codebook<T>,
    geom: &ArrayGeometry,
    grid: &AngularGrid,
    cfg: &ObservationConfig,
) -> Result<Observation<T>> {
    let feedback = FeedbackReport {
        entries: (0..codebook.len())
            .map(|i| crate::initial_access::FeedbackEntry {
                beam_index: i,
                rsrp: T::one(),
            })
            .collect(),
    };
    build_observation(&feedback, codebook, geom, grid, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array_geometry::{dft_codebook, upa_steering, Codeword, Sector};
    use crate::initial_access::FeedbackEntry;
    use approx::assert_relative_eq;

    fn setup() -> (ArrayGeometry, AngularGrid, Codebook<f64>, ObservationConfig) {
        let geom = ArrayGeometry::new(8, 8).unwrap();
        let sector = Sector::default();
        let grid = AngularGrid::beamspace(&geom, &sector).unwrap();
        let cb = dft_codebook::<f64>(&geom, 4, 2, &sector).unwrap();
        (geom, grid, cb, ObservationConfig::default())
    }

    fn report(entries: Vec<(usize, f64)>) -> FeedbackReport<f64> {
        FeedbackReport {
            entries: entries
                .into_iter()
                .map(|(beam_index, rsrp)| FeedbackEntry { beam_index, rsrp })
                .collect(),
        }
    }

    #[test]
    fn kernel_normalization_and_symmetry() {
        for sigma in [0.3, 1.0, 2.5] {
            let k = gaussian_kernel4::<f64>(sigma).unwrap();
            let sum: f64 = k.iter().flatten().sum();
            assert_relative_eq!(sum, 1.0, epsilon = 1e-12);
            assert_relative_eq!(k[0][0], k[3][3], epsilon = 1e-15);
            assert_relative_eq!(k[0][0], k[0][3], epsilon = 1e-15);
            assert_relative_eq!(k[0][0], k[3][0], epsilon = 1e-15);
        }
        assert!(gaussian_kernel4::<f64>(0.0).is_err());
        assert!(gaussian_kernel4::<f64>(-1.0).is_err());
    }

    #[test]
    fn kernel_corner_to_center_ratio_matches_closed_form() {
        let k = gaussian_kernel4::<f64>(1.0).unwrap();
        // Corner (0,0) sits at squared distance 2 * 1.5^2, the center quad
        // (1,1) at 2 * 0.5^2; ratio exp(-(4.5 - 0.5) / 2) = exp(-2).
        assert_relative_eq!(k[0][0] / k[1][1], (-2.0f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn support_mask_threshold_behavior() {
        let (geom, grid, cb, _) = setup();
        let cw = &cb.entries()[0];
        let huge = beam_support_mask(cw, &geom, &grid, 1e6).unwrap();
        assert!(huge.iter().flatten().all(|&b| b));

        let tiny = beam_support_mask(cw, &geom, &grid, 1e-9).unwrap();
        let count = tiny.iter().flatten().filter(|&&b| b).count();
        assert!(count >= 1 && count < 64, "near-zero threshold keeps only the peak, got {count}");

        let narrow = beam_support_mask(cw, &geom, &grid, 6.0).unwrap();
        let wide = beam_support_mask(cw, &geom, &grid, 12.0).unwrap();
        let narrow_area = narrow.iter().flatten().filter(|&&b| b).count();
        let wide_area = wide.iter().flatten().filter(|&&b| b).count();
        assert!(
            narrow_area < wide_area,
            "6 dB support ({narrow_area}) must be smaller than 12 dB support ({wide_area})"
        );
        // Steered beams have localized support at 6 dB.
        let steered = Codeword::new(
            upa_steering::<f64>(&geom, grid.azimuth()[4], grid.elevation()[2]).unwrap(),
            None,
        )
        .unwrap();
        let mask = beam_support_mask(&steered, &geom, &grid, 6.0).unwrap();
        assert!(mask[4][2]);
    }

    #[test]
    fn reported_slices_are_unit_norm_and_others_zero() {
        let (geom, grid, cb, cfg) = setup();
        for rsrp in [0.02, 1.0, 377.5] {
            let obs = build_observation(&report(vec![(3, rsrp)]), &cb, &geom, &grid, &cfg).unwrap();
            for beam in 0..8 {
                if beam == 3 {
                    assert_relative_eq!(obs.slice_frobenius(beam), 1.0, epsilon = 1e-6);
                } else {
                    assert!(obs.slice(beam).iter().all(|&v| v == 0.0));
                }
            }
        }
    }

    #[test]
    fn accumulation_is_linear_in_reported_power() {
        let (geom, grid, cb, cfg) = setup();
        let r = 0.7;
        let single = accumulate_reports(&report(vec![(2, r)]), &cb, &geom, &grid, &cfg).unwrap();
        let double = accumulate_reports(&report(vec![(2, 2.0 * r)]), &cb, &geom, &grid, &cfg).unwrap();
        let both = accumulate_reports(&report(vec![(2, r), (2, 2.0 * r)]), &cb, &geom, &grid, &cfg).unwrap();
        let single_mass: f64 = single[2].iter().sum();
        let double_mass: f64 = double[2].iter().sum();
        let both_mass: f64 = both[2].iter().sum();
        assert_relative_eq!(double_mass, 2.0 * single_mass, max_relative = 1e-12);
        assert_relative_eq!(both_mass, 3.0 * single_mass, max_relative = 1e-12);
        // Normalizing the accumulated slice agrees with the production path.
        let obs = build_observation(&report(vec![(2, r), (2, 2.0 * r)]), &cb, &geom, &grid, &cfg).unwrap();
        let norm = both[2].iter().map(|v| v * v).sum::<f64>().sqrt();
        for (i, &v) in obs.slice(2).iter().enumerate() {
            assert_relative_eq!(v, both[2][i] / norm, max_relative = 1e-9);
        }
    }

    #[test]
    fn empty_feedback_gives_zero_observation() {
        let (geom, grid, cb, cfg) = setup();
        let obs = build_observation(&report(vec![]), &cb, &geom, &grid, &cfg).unwrap();
        assert!(obs.data().iter().all(|&v| v == 0.0));
        assert_eq!(obs.l_max(), 8);
    }

    #[test]
    fn invalid_beam_index_is_rejected() {
        let (geom, grid, cb, cfg) = setup();
        assert!(build_observation(&report(vec![(8, 1.0)]), &cb, &geom, &grid, &cfg).is_err());
    }

    #[test]
    fn observation_is_bitwise_invariant_to_global_rescaling() {
        let (geom, grid, cb, cfg) = setup();
        let base = report(vec![(0, 0.3), (2, 1.7), (2, 0.9), (5, 12.0)]);
        let obs = build_observation(&base, &cb, &geom, &grid, &cfg).unwrap();
        for c in [1e-6, 0.5, 3.0, 1e9] {
            let scaled = report(
                base.entries
                    .iter()
                    .map(|e| (e.beam_index, e.rsrp * c))
                    .collect(),
            );
            let obs_scaled = build_observation(&scaled, &cb, &geom, &grid, &cfg).unwrap();
            assert_eq!(obs.data(), obs_scaled.data(), "scale {c} changed the grid");
        }
    }

    #[test]
    fn nonzero_entries_stay_within_dilated_support() {
        let (geom, grid, cb, cfg) = setup();
        let obs = build_observation(&report(vec![(1, 2.0)]), &cb, &geom, &grid, &cfg).unwrap();
        let mask = beam_support_mask(&cb.entries()[1], &geom, &grid, cfg.a_max_db).unwrap();
        // Kernel taps span offsets -1..=2 around each support point.
        let mut dilated = vec![vec![false; 8]; 8];
        for i in 0..8usize {
            for j in 0..8usize {
                if !mask[i][j] {
                    continue;
                }
                for di in -2i64..=2 {
                    for dj in -2i64..=2 {
                        let (a, b) = (i as i64 + di, j as i64 + dj);
                        if (0..8).contains(&a) && (0..8).contains(&b) {
                            dilated[a as usize][b as usize] = true;
                        }
                    }
                }
            }
        }
        for i in 0..8 {
            for j in 0..8 {
                if obs.get(1, i, j) != 0.0 {
                    assert!(dilated[i][j], "energy outside the dilated support at ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn initial_observation_reports_every_beam_once() {
        let (geom, grid, cb, cfg) = setup();
        let cold = initial_observation(&cb, &geom, &grid, &cfg).unwrap();
        for beam in 0..8 {
            assert_relative_eq!(cold.slice_frobenius(beam), 1.0, epsilon = 1e-6);
            let single = build_observation(&report(vec![(beam, 1.0)]), &cb, &geom, &grid, &cfg).unwrap();
            assert_eq!(cold.slice(beam), single.slice(beam));
        }
        // The equal-RSRP value is immaterial.
        let feedback = report((0..8).map(|i| (i, 42.0)).collect());
        let other = build_observation(&feedback, &cb, &geom, &grid, &cfg).unwrap();
        assert_eq!(cold.data(), other.data());
    }
}
