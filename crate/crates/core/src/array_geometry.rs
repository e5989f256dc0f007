//! Steering-vector math for ULA/UPA arrays, DFT grid-of-beams codebook
//! generation, beam-gain evaluation and codebook similarity metrics.
//!
//! Conventions used throughout the crate:
//!
//! * A ULA of `n` half-wavelength spaced elements responds to a plane wave
//!   from angle `theta` (measured from the array axis) with the Vandermonde
//!   vector `[1, e^{j pi cos(theta)}, ..., e^{j (n-1) pi cos(theta)}]`.
//!   Boresight is `theta = pi/2`.
//! * The planar response factors per axis. Element `(m, n)` of an
//!   `n_x x n_y` UPA sits at flat index `j = n * n_x + m`, and
//!   `upa[j] = ula_x[m] * ula_y[n]`. Every stacked matrix in the crate uses
//!   this same flattening so azimuth/elevation axes can never be swapped
//!   silently.
//! * Channel rows carry the conjugated transmit response, so the matched
//!   (conjugate) beamformer toward a direction is the unit-normalized
//!   steering vector itself and attains the full `10 log10(n_t)` gain.

use num_complex::Complex;

use crate::error::{invalid, Result};
use crate::scalar::{cast, to_f64, Scalar};

/// Transmit array layout: `n_x` elements on the azimuth axis, `n_y` on the
/// elevation axis, spacing in wavelengths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayGeometry {
    n_x: usize,
    n_y: usize,
    spacing: f64,
}

impl ArrayGeometry {
    /// Half-wavelength spaced array.
    pub fn new(n_x: usize, n_y: usize) -> Result<Self> {
        Self::with_spacing(n_x, n_y, 0.5)
    }

    pub fn with_spacing(n_x: usize, n_y: usize, spacing: f64) -> Result<Self> {
        if n_x < 1 || n_y < 1 {
            return Err(invalid(format!(
                "array dimensions must be >= 1, got {n_x} x {n_y}"
            )));
        }
        if !(spacing > 0.0) {
            return Err(invalid(format!("element spacing must be > 0, got {spacing}")));
        }
        Ok(Self { n_x, n_y, spacing })
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    /// Total element count `n_t = n_x * n_y`.
    pub fn n_t(&self) -> usize {
        self.n_x * self.n_y
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }
}

/// One beamforming vector, unit Euclidean norm, with an optional SSB index.
#[derive(Debug, Clone, PartialEq)]
pub struct Codeword<T: Scalar> {
    coefficients: Vec<Complex<T>>,
    label: Option<usize>,
}

impl<T: Scalar> Codeword<T> {
    /// Normalizes `coefficients` to unit norm. Zero vectors are rejected.
    pub fn new(coefficients: Vec<Complex<T>>, label: Option<usize>) -> Result<Self> {
        let norm = vector_norm(&coefficients);
        if norm <= 0.0 || !norm.is_finite() {
            return Err(invalid("codeword must be a nonzero finite vector"));
        }
        let inv = cast::<T>(1.0 / norm);
        let coefficients = coefficients.into_iter().map(|c| c * inv).collect();
        Ok(Self { coefficients, label })
    }

    pub fn coefficients(&self) -> &[Complex<T>] {
        &self.coefficients
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    /// Re-casts the coefficients to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Codeword<U> {
        Codeword {
            coefficients: self
                .coefficients
                .iter()
                .map(|c| Complex::new(cast::<U>(to_f64(c.re)), cast::<U>(to_f64(c.im))))
                .collect(),
            label: self.label,
        }
    }
}

/// Ordered set of at most `l_max` codewords swept in one SSB burst.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook<T: Scalar> {
    entries: Vec<Codeword<T>>,
    l_max: usize,
}

/// Burst sizes supported by the numerology.
pub const VALID_BURST_SIZES: [usize; 4] = [1, 4, 8, 64];

impl<T: Scalar> Codebook<T> {
    pub fn new(entries: Vec<Codeword<T>>, l_max: usize) -> Result<Self> {
        if !VALID_BURST_SIZES.contains(&l_max) {
            return Err(invalid(format!(
                "burst size l_max must be one of {VALID_BURST_SIZES:?}, got {l_max}"
            )));
        }
        if entries.is_empty() || entries.len() > l_max {
            return Err(invalid(format!(
                "codebook must hold between 1 and {l_max} codewords, got {}",
                entries.len()
            )));
        }
        Ok(Self { entries, l_max })
    }

    pub fn entries(&self) -> &[Codeword<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn cast<U: Scalar>(&self) -> Codebook<U> {
        Codebook {
            entries: self.entries.iter().map(Codeword::cast).collect(),
            l_max: self.l_max,
        }
    }
}

/// Angular sector served by the transmitter, radians. Azimuth is measured
/// from the array x-axis, elevation from zenith (so values above `pi/2`
/// point below the horizon, i.e. downtilt).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sector {
    pub az_min: f64,
    pub az_max: f64,
    pub el_min: f64,
    pub el_max: f64,
}

impl Sector {
    pub fn new(az_min: f64, az_max: f64, el_min: f64, el_max: f64) -> Result<Self> {
        let s = Self {
            az_min,
            az_max,
            el_min,
            el_max,
        };
        for v in [az_min, az_max, el_min, el_max] {
            if !v.is_finite() {
                return Err(invalid("sector bounds must be finite"));
            }
        }
        if !(az_min < az_max) || !(el_min < el_max) {
            return Err(invalid("sector bounds must be non-empty intervals"));
        }
        Ok(s)
    }
}

impl Default for Sector {
    /// 120 degree azimuth sector, 10 degrees of downtilt coverage.
    fn default() -> Self {
        Self {
            az_min: 30f64.to_radians(),
            az_max: 150f64.to_radians(),
            el_min: 90f64.to_radians(),
            el_max: 100f64.to_radians(),
        }
    }
}

/// Discrete angular grid: `azimuth.len() x elevation.len()` points with the
/// sector bounds they were carved from. Angles are strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularGrid {
    azimuth: Vec<f64>,
    elevation: Vec<f64>,
    sector: Sector,
}

impl AngularGrid {
    /// Beamspace grid: one point per array dimension, placed at the centers
    /// of equal-width bins in cosine space over the sector.
    pub fn beamspace(geom: &ArrayGeometry, sector: &Sector) -> Result<Self> {
        Self::refined(geom.n_x(), geom.n_y(), sector)
    }

    /// Grid with an arbitrary resolution, same placement rule.
    pub fn refined(n_az: usize, n_el: usize, sector: &Sector) -> Result<Self> {
        if n_az < 1 || n_el < 1 {
            return Err(invalid("grid must have at least one point per axis"));
        }
        let azimuth = cosine_bin_center_angles(sector.az_min, sector.az_max, n_az)?;
        let elevation = cosine_bin_center_angles(sector.el_min, sector.el_max, n_el)?;
        Ok(Self {
            azimuth,
            elevation,
            sector: *sector,
        })
    }

    pub fn azimuth(&self) -> &[f64] {
        &self.azimuth
    }

    pub fn elevation(&self) -> &[f64] {
        &self.elevation
    }

    pub fn sector(&self) -> &Sector {
        &self.sector
    }

    pub fn n_az(&self) -> usize {
        self.azimuth.len()
    }

    pub fn n_el(&self) -> usize {
        self.elevation.len()
    }
}

/// Centers of `n` equal bins in cosine space over `[lo, hi]`, returned as
/// strictly increasing angles.
fn cosine_bin_center_angles(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    let (c_lo, c_hi) = (hi.cos(), lo.cos());
    if !(c_lo < c_hi) {
        return Err(invalid("sector is empty in cosine space"));
    }
    let width = (c_hi - c_lo) / n as f64;
    let mut angles: Vec<f64> = (0..n)
        .map(|k| (c_lo + (k as f64 + 0.5) * width).clamp(-1.0, 1.0).acos())
        .collect();
    angles.sort_by(|a, b| a.partial_cmp(b).expect("finite angles"));
    Ok(angles)
}

/// ULA response: element `k` equals `e^{j k pi cos(angle)}`.
pub fn ula_steering<T: Scalar>(n: usize, angle: f64) -> Result<Vec<Complex<T>>> {
    ula_steering_spaced(n, angle, 0.5)
}

/// ULA response with configurable spacing in wavelengths.
pub fn ula_steering_spaced<T: Scalar>(n: usize, angle: f64, spacing: f64) -> Result<Vec<Complex<T>>> {
    if n < 1 {
        return Err(invalid("element count must be >= 1"));
    }
    if !angle.is_finite() {
        return Err(invalid(format!("steering angle must be finite, got {angle}")));
    }
    let step = 2.0 * std::f64::consts::PI * spacing * angle.cos();
    Ok((0..n)
        .map(|k| {
            let phase = step * k as f64;
            Complex::new(cast::<T>(phase.cos()), cast::<T>(phase.sin()))
        })
        .collect())
}

/// UPA response, flattened so `upa[n * n_x + m] = ula_x[m] * ula_y[n]`.
pub fn upa_steering<T: Scalar>(geom: &ArrayGeometry, azimuth: f64, elevation: f64) -> Result<Vec<Complex<T>>> {
    let ax = ula_steering_spaced::<T>(geom.n_x(), azimuth, geom.spacing())?;
    let ay = ula_steering_spaced::<T>(geom.n_y(), elevation, geom.spacing())?;
    let mut out = Vec::with_capacity(geom.n_t());
    for y in &ay {
        for x in &ax {
            out.push(*x * *y);
        }
    }
    Ok(out)
}

/// DFT grid-of-beams codebook: matched beamformers placed at the centers of
/// equal bins in cosine space over the sector.
///
/// Ordering interleaves elevation fastest, strongest downtilt first, so with
/// two elevation rows beams `2k` and `2k+1` share an azimuth center: even
/// indices cover the primary (downtilted) region and odd indices the cell
/// edge.
pub fn dft_codebook<T: Scalar>(
    geom: &ArrayGeometry,
    n_azimuth_beams: usize,
    n_elevation_beams: usize,
    sector: &Sector,
) -> Result<Codebook<T>> {
    if n_azimuth_beams < 1 || n_elevation_beams < 1 {
        return Err(invalid("beam counts must be >= 1"));
    }
    let total = n_azimuth_beams * n_elevation_beams;
    let l_max = VALID_BURST_SIZES
        .iter()
        .copied()
        .find(|&l| l >= total)
        .ok_or_else(|| invalid(format!("{total} beams exceed the largest burst size")))?;

    let az_centers = cosine_bin_center_angles(sector.az_min, sector.az_max, n_azimuth_beams)?;
    // Ascending cosine = descending elevation angle, so reverse to put the
    // strongest downtilt (largest angle) first within each azimuth pair.
    let mut el_centers = cosine_bin_center_angles(sector.el_min, sector.el_max, n_elevation_beams)?;
    el_centers.reverse();

    let mut entries = Vec::with_capacity(total);
    for (ai, &az) in az_centers.iter().enumerate() {
        for (ei, &el) in el_centers.iter().enumerate() {
            let index = ai * n_elevation_beams + ei;
            entries.push(Codeword::new(upa_steering::<T>(geom, az, el)?, Some(index))?);
        }
    }
    Codebook::new(entries, l_max)
}

/// Gain floor reported where the beam has an exactly zero inner product.
pub const GAIN_FLOOR_DB: f64 = -200.0;

/// Beam gain over the angular grid, in dB: entry `(i, k)` is
/// `10 log10(|a(az_i, el_k)^H f|^2)`. A conjugate-steered unit-norm beam
/// peaks at `10 log10(n_t)` when its steer direction lies on the grid.
pub fn array_gain_grid<T: Scalar>(
    codeword: &Codeword<T>,
    geom: &ArrayGeometry,
    grid: &AngularGrid,
) -> Result<Vec<Vec<T>>> {
    if codeword.len() != geom.n_t() {
        return Err(invalid(format!(
            "codeword length {} does not match array size {}",
            codeword.len(),
            geom.n_t()
        )));
    }
    let mut out = vec![vec![T::zero(); grid.n_el()]; grid.n_az()];
    for (i, &az) in grid.azimuth().iter().enumerate() {
        for (k, &el) in grid.elevation().iter().enumerate() {
            let a = upa_steering::<T>(geom, az, el)?;
            let mut acc = Complex::new(0.0f64, 0.0);
            for (av, fv) in a.iter().zip(codeword.coefficients()) {
                let prod = av.conj() * *fv;
                acc.re += to_f64(prod.re);
                acc.im += to_f64(prod.im);
            }
            let power = acc.norm_sqr();
            let db = if power > 0.0 {
                (10.0 * power.log10()).max(GAIN_FLOOR_DB)
            } else {
                GAIN_FLOOR_DB
            };
            out[i][k] = cast::<T>(db);
        }
    }
    Ok(out)
}

/// Normalized inner-product magnitude between two beams, in `[0, 1]`.
/// Symmetric and invariant to nonzero complex scaling of either argument.
pub fn cosine_similarity<T: Scalar>(f_a: &[Complex<T>], f_b: &[Complex<T>]) -> Result<T> {
    if f_a.len() != f_b.len() {
        return Err(invalid("codewords must have equal length"));
    }
    let na = vector_norm(f_a);
    let nb = vector_norm(f_b);
    if na <= 0.0 || nb <= 0.0 {
        return Err(invalid("cosine similarity of a zero vector is undefined"));
    }
    let mut acc = Complex::new(0.0f64, 0.0);
    for (a, b) in f_a.iter().zip(f_b) {
        let prod = a.conj() * *b;
        acc.re += to_f64(prod.re);
        acc.im += to_f64(prod.im);
    }
    Ok(cast::<T>((acc.norm() / (na * nb)).min(1.0)))
}

/// Pairwise cosine similarity of a codebook: symmetric, unit diagonal.
pub fn similarity_matrix<T: Scalar>(codebook: &Codebook<T>) -> Result<Vec<Vec<T>>> {
    let n = codebook.len();
    let mut out = vec![vec![T::zero(); n]; n];
    for i in 0..n {
        out[i][i] = T::one();
        for j in (i + 1)..n {
            let s = cosine_similarity(
                codebook.entries()[i].coefficients(),
                codebook.entries()[j].coefficients(),
            )?;
            out[i][j] = s;
            out[j][i] = s;
        }
    }
    Ok(out)
}

/// Euclidean norm accumulated at f64.
pub fn vector_norm<T: Scalar>(v: &[Complex<T>]) -> f64 {
    v.iter()
        .map(|c| {
            let re = to_f64(c.re);
            let im = to_f64(c.im);
            re * re + im * im
        })
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn assert_cplx_eq(a: Complex<f64>, b: Complex<f64>, tol: f64) {
        assert!(
            (a - b).norm() <= tol,
            "expected {b}, got {a} (|diff| = {})",
            (a - b).norm()
        );
    }

    #[test]
    fn ula_broadside_is_all_ones() {
        let v = ula_steering::<f64>(4, PI / 2.0).unwrap();
        for c in v {
            assert_cplx_eq(c, Complex::new(1.0, 0.0), 1e-12);
        }
    }

    #[test]
    fn ula_sixty_degrees_is_one_j() {
        let v = ula_steering::<f64>(2, PI / 3.0).unwrap();
        assert_cplx_eq(v[0], Complex::new(1.0, 0.0), 1e-12);
        assert_cplx_eq(v[1], Complex::new(0.0, 1.0), 1e-12);
    }

    #[test]
    fn ula_endfire_alternates_sign() {
        let v = ula_steering::<f64>(3, 0.0).unwrap();
        assert_cplx_eq(v[0], Complex::new(1.0, 0.0), 1e-12);
        assert_cplx_eq(v[1], Complex::new(-1.0, 0.0), 1e-12);
        assert_cplx_eq(v[2], Complex::new(1.0, 0.0), 1e-12);
    }

    #[test]
    fn ula_rejects_non_finite_angle() {
        assert!(ula_steering::<f64>(4, f64::NAN).is_err());
        assert!(ula_steering::<f64>(4, f64::INFINITY).is_err());
    }

    #[test]
    fn upa_broadside_is_all_ones() {
        let geom = ArrayGeometry::new(8, 8).unwrap();
        let v = upa_steering::<f64>(&geom, PI / 2.0, PI / 2.0).unwrap();
        assert_eq!(v.len(), 64);
        for c in v {
            assert_cplx_eq(c, Complex::new(1.0, 0.0), 1e-12);
        }
    }

    #[test]
    fn upa_follows_stacking_rule() {
        // 2x2 array at (pi/3, pi/2): azimuth factor [1, j], elevation factor
        // [1, 1]; index n*n_x + m holds ula_x[m] * ula_y[n].
        let geom = ArrayGeometry::new(2, 2).unwrap();
        let v = upa_steering::<f64>(&geom, PI / 3.0, PI / 2.0).unwrap();
        let expected = [
            Complex::new(1.0, 0.0),
            Complex::new(0.0, 1.0),
            Complex::new(1.0, 0.0),
            Complex::new(0.0, 1.0),
        ];
        for (got, want) in v.iter().zip(expected) {
            assert_cplx_eq(*got, want, 1e-12);
        }
    }

    proptest! {
        #[test]
        fn upa_kronecker_consistency(
            n_x in 1usize..6,
            n_y in 1usize..6,
            az in 0.0f64..PI,
            el in 0.0f64..PI,
        ) {
            let geom = ArrayGeometry::new(n_x, n_y).unwrap();
            let v = upa_steering::<f64>(&geom, az, el).unwrap();
            let ax = ula_steering::<f64>(n_x, az).unwrap();
            let ay = ula_steering::<f64>(n_y, el).unwrap();
            for n in 0..n_y {
                for m in 0..n_x {
                    let diff = (v[n * n_x + m] - ax[m] * ay[n]).norm();
                    prop_assert!(diff <= 1e-12);
                }
            }
            for c in &v {
                prop_assert!((c.norm() - 1.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn cosine_similarity_symmetric_and_scale_invariant(
            seed in 0u64..1000,
            scale_re in -3.0f64..3.0,
            scale_im in -3.0f64..3.0,
        ) {
            prop_assume!(scale_re.abs() + scale_im.abs() > 1e-3);
            use rand::Rng;
            let mut rng = crate::rng::substream(seed, "simtest", 0);
            let a: Vec<Complex<f64>> =
                (0..8).map(|_| Complex::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
            let b: Vec<Complex<f64>> =
                (0..8).map(|_| Complex::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
            let c = Complex::new(scale_re, scale_im);
            let scaled: Vec<Complex<f64>> = b.iter().map(|x| x * c).collect();

            let ab = cosine_similarity(&a, &b).unwrap();
            let ba = cosine_similarity(&b, &a).unwrap();
            let a_scaled = cosine_similarity(&a, &scaled).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12);
            prop_assert!((ab - a_scaled).abs() <= 1e-12);
        }
    }

    #[test]
    fn cosine_similarity_examples() {
        let f = ula_steering::<f64>(4, PI / 3.0).unwrap();
        assert_relative_eq!(cosine_similarity(&f, &f).unwrap(), 1.0, epsilon = 1e-12);

        let a = vec![Complex::new(1.0, 0.0), Complex::new(0.0, 1.0)];
        let b = vec![Complex::new(1.0, 0.0), Complex::new(0.0, -1.0)];
        assert_relative_eq!(cosine_similarity(&a, &b).unwrap(), 0.0, epsilon = 1e-12);

        assert!(cosine_similarity(&a, &[Complex::new(0.0, 0.0); 2]).is_err());
    }

    #[test]
    fn dft_codebook_default_is_eight_unit_norm_beams() {
        let geom = ArrayGeometry::new(8, 8).unwrap();
        let cb = dft_codebook::<f64>(&geom, 4, 2, &Sector::default()).unwrap();
        assert_eq!(cb.len(), 8);
        assert_eq!(cb.l_max(), 8);
        for cw in cb.entries() {
            assert_relative_eq!(vector_norm(cw.coefficients()), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn dft_codebook_single_beam_degenerate() {
        // One beam over the full sector centers at cos = 0, i.e. broadside;
        // the codeword is the (self-conjugate) steering vector over 2.
        let geom = ArrayGeometry::new(4, 1).unwrap();
        let sector = Sector::new(0.0, PI, PI / 2.0 - 1e-9, PI / 2.0 + 1e-9).unwrap();
        let cb = dft_codebook::<f64>(&geom, 1, 1, &sector).unwrap();
        assert_eq!(cb.len(), 1);
        let steer = upa_steering::<f64>(&geom, PI / 2.0, PI / 2.0).unwrap();
        for (got, want) in cb.entries()[0].coefficients().iter().zip(&steer) {
            assert_cplx_eq(*got, want.conj() / 2.0, 1e-9);
        }
    }

    #[test]
    fn dft_even_odd_pair_shares_azimuth_progression() {
        let geom = ArrayGeometry::new(8, 8).unwrap();
        let cb = dft_codebook::<f64>(&geom, 4, 2, &Sector::default()).unwrap();
        let b0 = cb.entries()[0].coefficients();
        let b1 = cb.entries()[1].coefficients();
        // Azimuth factor along the first elevation row (n = 0): identical.
        for m in 0..8 {
            let r0 = b0[m] / b0[0];
            let r1 = b1[m] / b1[0];
            assert_cplx_eq(r0, r1, 1e-9);
        }
        // Elevation factor along m = 0: must differ beyond numerical noise.
        let mut max_diff = 0.0f64;
        for n in 0..8 {
            let r0 = b0[n * 8] / b0[0];
            let r1 = b1[n * 8] / b1[0];
            max_diff = max_diff.max((r0 - r1).norm());
        }
        assert!(max_diff > 1e-3, "elevation progressions should differ");
    }

    #[test]
    fn dft_codebook_rejects_empty_sector() {
        let geom = ArrayGeometry::new(8, 8).unwrap();
        assert!(Sector::new(1.0, 1.0, 1.5, 1.6).is_err());
        let sector = Sector {
            az_min: 1.0,
            az_max: 1.0,
            el_min: 1.5,
            el_max: 1.6,
        };
        assert!(dft_codebook::<f64>(&geom, 4, 2, &sector).is_err());
    }

    #[test]
    fn steered_beam_peaks_at_full_array_gain() {
        let geom = ArrayGeometry::new(8, 8).unwrap();
        let grid = AngularGrid::beamspace(&geom, &Sector::default()).unwrap();
        let (gi, gk) = (3, 5);
        let steer = upa_steering::<f64>(&geom, grid.azimuth()[gi], grid.elevation()[gk]).unwrap();
        let cw = Codeword::new(steer, None).unwrap();
        let gains = array_gain_grid(&cw, &geom, &grid).unwrap();

        let peak_db = 10.0 * 64f64.log10();
        assert_relative_eq!(gains[gi][gk], peak_db, epsilon = 1e-6);
        let max = gains
            .iter()
            .flatten()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        assert_relative_eq!(max, peak_db, epsilon = 1e-6);
    }

    #[test]
    fn uniform_codeword_peaks_at_broadside() {
        let geom = ArrayGeometry::new(8, 8).unwrap();
        let cw = Codeword::new(vec![Complex::new(1.0f64, 0.0); 64], None).unwrap();
        let sector = Sector::new(PI / 2.0 - 0.2, PI / 2.0 + 0.2, PI / 2.0 - 0.2, PI / 2.0 + 0.2).unwrap();
        let grid = AngularGrid::refined(9, 9, &sector).unwrap();
        // Odd point count puts a grid point exactly at broadside.
        let gains = array_gain_grid(&cw, &geom, &grid).unwrap();
        assert_relative_eq!(gains[4][4], 10.0 * 64f64.log10(), epsilon = 1e-6);
    }

    #[test]
    fn similarity_matrix_basic_structure() {
        let geom = ArrayGeometry::new(4, 1).unwrap();
        let single = Codebook::new(
            vec![Codeword::new(ula_steering::<f64>(4, 1.0).unwrap(), Some(0)).unwrap()],
            1,
        )
        .unwrap();
        assert_eq!(similarity_matrix(&single).unwrap(), vec![vec![1.0]]);

        // Orthonormal beams: DFT directions at multiples of 2/n in cosine.
        let mut entries = Vec::new();
        for k in 0..4 {
            let cosv = -1.0 + 0.25 + 0.5 * k as f64;
            entries.push(Codeword::new(ula_steering::<f64>(4, cosv.acos()).unwrap(), Some(k)).unwrap());
        }
        let cb = Codebook::new(entries, 4).unwrap();
        let m = similarity_matrix(&cb).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(m[i][j], want, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn dft_even_odd_pairs_have_largest_similarity() {
        let geom = ArrayGeometry::new(8, 8).unwrap();
        let cb = dft_codebook::<f64>(&geom, 4, 2, &Sector::default()).unwrap();
        let m = similarity_matrix(&cb).unwrap();
        let pair = m[0][1];
        for i in 0..8 {
            for j in 0..8 {
                if i == j {
                    continue;
                }
                let is_pair = i / 2 == j / 2;
                if is_pair {
                    assert_relative_eq!(m[i][j], pair, epsilon = 1e-9);
                } else {
                    assert!(
                        m[i][j] < pair - 0.1,
                        "entry ({i},{j}) = {} should be well below the pair similarity {}",
                        m[i][j],
                        pair
                    );
                }
            }
        }
        assert!(pair > 0.5, "azimuth-aligned pairs should overlap strongly");
    }
}
