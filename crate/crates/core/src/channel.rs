//! Near-field line-of-sight channel synthesis for a BS uniform linear array
//! and a (possibly multi-antenna) UE, plus the normalized two-channel network
//! input and the on-disk dataset format.

use std::f64::consts::PI;
use std::path::Path;

use neft_tensor::{DType, Element, Tensor};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NeftError, Result};
use crate::framed;

/// Free-space propagation speed used to turn a carrier into a wavelength.
/// The rounded value makes 30 GHz map to exactly 0.01 m.
pub const PROPAGATION_SPEED: f64 = 3.0e8;
pub const DEFAULT_CARRIER_HZ: f64 = 30.0e9;
pub const DEFAULT_BS_ANTENNAS: usize = 1024;
/// Default sampling window for the UE distance, as fractions of the Rayleigh distance.
pub const DEFAULT_R_BOUNDS: (f64, f64) = (0.05, 0.5);

const DATASET_FORMAT: &str = "neft-dataset";
const DATASET_VERSION: u32 = 1;

pub fn wavelength_for(carrier_hz: f64) -> Result<f64> {
    if !(carrier_hz > 0.0 && carrier_hz.is_finite()) {
        return Err(NeftError::Domain(format!("carrier frequency must be positive, got {carrier_hz}")));
    }
    Ok(PROPAGATION_SPEED / carrier_hz)
}

/// `2 D^2 / lambda`.
pub fn rayleigh_distance(aperture: f64, wavelength: f64) -> Result<f64> {
    if !(aperture > 0.0 && wavelength > 0.0) {
        return Err(NeftError::Domain(format!(
            "aperture ({aperture}) and wavelength ({wavelength}) must be positive"
        )));
    }
    Ok(2.0 * aperture * aperture / wavelength)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    /// BS antennas.
    pub n1: usize,
    /// UE antennas.
    pub n2: usize,
    /// Element spacing in meters, shared by both arrays.
    pub spacing: f64,
    pub wavelength: f64,
}

impl ArrayGeometry {
    pub fn new(n1: usize, n2: usize, spacing: f64, wavelength: f64) -> Result<Self> {
        let g = ArrayGeometry { n1, n2, spacing, wavelength };
        g.validate()?;
        Ok(g)
    }

    /// Half-wavelength ULA at the given carrier.
    pub fn half_wavelength(n1: usize, n2: usize, carrier_hz: f64) -> Result<Self> {
        let wavelength = wavelength_for(carrier_hz)?;
        Self::new(n1, n2, wavelength / 2.0, wavelength)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n1 == 0 || self.n2 == 0 {
            return Err(NeftError::Domain(format!("antenna counts must be >= 1 (n1={}, n2={})", self.n1, self.n2)));
        }
        if !(self.spacing > 0.0 && self.wavelength > 0.0) {
            return Err(NeftError::Domain("spacing and wavelength must be positive".into()));
        }
        Ok(())
    }

    /// Largest BS array dimension, `(N1 - 1) d`.
    pub fn aperture(&self) -> f64 {
        (self.n1.saturating_sub(1)) as f64 * self.spacing
    }

    pub fn rayleigh_distance(&self) -> Result<f64> {
        rayleigh_distance(self.aperture(), self.wavelength)
    }
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        ArrayGeometry::half_wavelength(DEFAULT_BS_ANTENNAS, 1, DEFAULT_CARRIER_HZ).expect("default geometry is valid")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UePlacement {
    /// Distance between the first UE antenna and the first BS antenna.
    pub r: f64,
    /// Angle of departure.
    pub theta: f64,
    /// Relative UE/BS array orientation.
    pub phi: f64,
}

impl UePlacement {
    pub fn new(r: f64, theta: f64, phi: f64) -> Result<Self> {
        let two_pi = 2.0 * PI;
        if !(r > 0.0 && r.is_finite()) {
            return Err(NeftError::Domain(format!("distance must be positive, got {r}")));
        }
        if !(0.0..two_pi).contains(&theta) || !(0.0..two_pi).contains(&phi) {
            return Err(NeftError::Domain(format!("angles must lie in [0, 2pi): theta={theta}, phi={phi}")));
        }
        Ok(UePlacement { r, theta, phi })
    }
}

/// Distance between BS antenna `n1` and UE antenna `n2`.
pub fn element_distance(geometry: &ArrayGeometry, placement: &UePlacement, n1: usize, n2: usize) -> Result<f64> {
    if n1 >= geometry.n1 {
        return Err(NeftError::Bounds { what: "n1", index: n1, limit: geometry.n1 });
    }
    if n2 >= geometry.n2 {
        return Err(NeftError::Bounds { what: "n2", index: n2, limit: geometry.n2 });
    }
    Ok(distance_unchecked(geometry, placement, n1, n2))
}

#[inline]
fn distance_unchecked(geometry: &ArrayGeometry, p: &UePlacement, n1: usize, n2: usize) -> f64 {
    let d1 = n1 as f64 * geometry.spacing;
    let d2 = n2 as f64 * geometry.spacing;
    let (st, ct) = p.theta.sin_cos();
    let (sp, cp) = p.phi.sin_cos();
    // offset of UE element n2 relative to BS element n1, minus the reference vector
    let u = -d2 * sp;
    let v = d2 * cp - d1;
    (p.r * p.r + 2.0 * p.r * (ct * u + st * v) + u * u + v * v).sqrt()
}

/// One channel realization. Rows are UE antennas, columns BS antennas.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSample {
    pub n1: usize,
    pub n2: usize,
    /// Row-major `n2 x n1`.
    pub h: Vec<Complex64>,
    pub placement: UePlacement,
}

impl ChannelSample {
    pub fn at(&self, n2: usize, n1: usize) -> Complex64 {
        self.h[n2 * self.n1 + n1]
    }
}

/// Spherical-wavefront LOS coefficients `exp(-j 2 pi r / lambda) / r`.
pub fn channel_matrix(geometry: &ArrayGeometry, placement: &UePlacement) -> Result<ChannelSample> {
    geometry.validate()?;
    let k = 2.0 * PI / geometry.wavelength;
    let mut h = Vec::with_capacity(geometry.n1 * geometry.n2);
    for n2 in 0..geometry.n2 {
        for n1 in 0..geometry.n1 {
            let r = distance_unchecked(geometry, placement, n1, n2);
            if r < 1e-9 * geometry.wavelength {
                return Err(NeftError::Singularity(format!("BS antenna {n1} and UE antenna {n2} are co-located")));
            }
            h.push(Complex64::from_polar(1.0 / r, -k * r));
        }
    }
    Ok(ChannelSample { n1: geometry.n1, n2: geometry.n2, h, placement: *placement })
}

/// Dataset-wide min/max of the real and imaginary parts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub min_real: f64,
    pub max_real: f64,
    pub min_imag: f64,
    pub max_imag: f64,
}

impl NormalizationParams {
    pub fn new(min_real: f64, max_real: f64, min_imag: f64, max_imag: f64) -> Result<Self> {
        if !(max_real > min_real && max_imag > min_imag) {
            return Err(NeftError::Domain(format!(
                "normalization needs max > min per part (real [{min_real}, {max_real}], imag [{min_imag}, {max_imag}])"
            )));
        }
        Ok(NormalizationParams { min_real, max_real, min_imag, max_imag })
    }

    /// Fits the ranges to the given coefficients. A part with zero spread gets
    /// a unit-width range starting at its value.
    pub fn fit<'a>(values: impl IntoIterator<Item = &'a Complex64>) -> Result<Self> {
        let (mut lr, mut hr, mut li, mut hi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            lr = lr.min(v.re);
            hr = hr.max(v.re);
            li = li.min(v.im);
            hi = hi.max(v.im);
        }
        if !lr.is_finite() || !hr.is_finite() || !li.is_finite() || !hi.is_finite() {
            return Err(NeftError::Domain("cannot fit normalization to empty or non-finite data".into()));
        }
        if hr <= lr {
            hr = lr + 1.0;
        }
        if hi <= li {
            hi = li + 1.0;
        }
        Self::new(lr, hr, li, hi)
    }

    pub fn normalize(&self, v: Complex64) -> (f64, f64) {
        let re = ((v.re - self.min_real) / (self.max_real - self.min_real)).clamp(0.0, 1.0);
        let im = ((v.im - self.min_imag) / (self.max_imag - self.min_imag)).clamp(0.0, 1.0);
        (re, im)
    }

    pub fn denormalize(&self, re: f64, im: f64) -> Complex64 {
        Complex64::new(
            self.min_real + re * (self.max_real - self.min_real),
            self.min_imag + im * (self.max_imag - self.min_imag),
        )
    }
}

/// Picks `H x W = n` with `H` the largest divisor not above `sqrt(n)`.
pub fn default_layout(n: usize) -> (usize, usize) {
    let mut h = (n as f64).sqrt() as usize;
    while h > 1 && !n.is_multiple_of(h) {
        h -= 1;
    }
    let h = h.max(1);
    (h, n / h)
}

/// Channel 0 holds normalized real parts, channel 1 normalized imaginary
/// parts; the `n2 x n1` matrix is flattened row-major into `H x W`.
pub fn to_network_input(sample: &ChannelSample, norm: &NormalizationParams, layout: (usize, usize)) -> Result<Tensor<f64>> {
    let (h, w) = layout;
    let n = sample.n1 * sample.n2;
    if h * w != n {
        return Err(NeftError::Dimension(format!("layout {h}x{w} cannot hold {}x{} coefficients", sample.n2, sample.n1)));
    }
    let mut data = vec![0.0; 2 * n];
    for (i, v) in sample.h.iter().enumerate() {
        let (re, im) = norm.normalize(*v);
        data[i] = re;
        data[n + i] = im;
    }
    Ok(Tensor::new(vec![2, h, w], data)?)
}

/// Inverse of [`to_network_input`]: returns the row-major `n2 x n1` matrix.
pub fn from_network_output<T: Element>(output: &Tensor<T>, norm: &NormalizationParams, n2: usize, n1: usize) -> Result<Vec<Complex64>> {
    let n = n1 * n2;
    let shape = output.shape();
    if shape.len() != 3 || shape[0] != 2 || shape[1] * shape[2] != n {
        return Err(NeftError::Dimension(format!("expected a 2xHxW tensor with H*W = {n}, got {shape:?}")));
    }
    let d = output.data();
    Ok((0..n).map(|i| norm.denormalize(d[i].as_f64(), d[n + i].as_f64())).collect())
}

/// Normalized network inputs for a set of sampled placements.
#[derive(Clone, Debug)]
pub struct ChannelDataset {
    pub geometry: ArrayGeometry,
    pub r_bounds: (f64, f64),
    pub seed: u64,
    pub norm: NormalizationParams,
    pub height: usize,
    pub width: usize,
    /// `count x 2 x height x width`, row-major.
    pub inputs: Vec<f64>,
    /// Sampled placements; empty when the dataset was read from disk.
    pub placements: Vec<UePlacement>,
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    format: String,
    version: u32,
    dtype: DType,
    count: usize,
    shape: [usize; 3],
    layout: String,
    geometry: ArrayGeometry,
    r_bounds: (f64, f64),
    seed: u64,
    norm: NormalizationParams,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    metadata: serde_json::Value,
}

const LAYOUT_NOTE: &str = "channel 0 = normalized real part, channel 1 = normalized imaginary part; n2 x n1 matrix flattened row-major into H x W";

impl ChannelDataset {
    pub fn len(&self) -> usize {
        self.inputs.len() / self.sample_len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        2 * self.height * self.width
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [2, self.height, self.width]
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let n = self.sample_len();
        &self.inputs[i * n..(i + 1) * n]
    }

    /// Stacks the selected samples into a `[B, 2, H, W]` tensor.
    pub fn batch<T: Element>(&self, indices: &[usize]) -> Tensor<T> {
        let n = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend(self.sample(i).iter().map(|&v| T::cast(v)));
        }
        Tensor::new(vec![indices.len(), 2, self.height, self.width], data).expect("batch shape matches data")
    }

    /// First `count` samples.
    pub fn truncated(&self, count: usize) -> ChannelDataset {
        let count = count.min(self.len());
        ChannelDataset {
            inputs: self.inputs[..count * self.sample_len()].to_vec(),
            placements: self.placements.iter().take(count).copied().collect(),
            ..self.clone()
        }
    }

    pub fn save(&self, path: &Path, dtype: DType) -> Result<()> {
        self.save_with_metadata(path, dtype, serde_json::Value::Null)
    }

    /// Like [`save`](Self::save), with free-form provenance stored in the header.
    pub fn save_with_metadata(&self, path: &Path, dtype: DType, metadata: serde_json::Value) -> Result<()> {
        let header = DatasetHeader {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            dtype,
            count: self.len(),
            shape: self.input_shape(),
            layout: LAYOUT_NOTE.into(),
            geometry: self.geometry,
            r_bounds: self.r_bounds,
            seed: self.seed,
            norm: self.norm,
            metadata,
        };
        let mut payload = Vec::with_capacity(self.inputs.len() * dtype.size_of());
        match dtype {
            DType::F32 => framed::encode(self.inputs.iter().map(|&v| v as f32), &mut payload),
            DType::F64 => framed::encode(self.inputs.iter().copied(), &mut payload),
        }
        framed::write(path, &header, &payload)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, payload): (DatasetHeader, _) = framed::read(path)?;
        if header.format != DATASET_FORMAT || header.version != DATASET_VERSION {
            return Err(NeftError::Format(format!(
                "{} is not a version-{DATASET_VERSION} dataset (format `{}`, version {})",
                path.display(),
                header.format,
                header.version
            )));
        }
        let [c, h, w] = header.shape;
        if c != 2 || h * w != header.geometry.n1 * header.geometry.n2 {
            return Err(NeftError::Format(format!("inconsistent sample shape {:?}", header.shape)));
        }
        let inputs = framed::decode_f64(&payload, header.dtype)?;
        if inputs.len() != header.count * 2 * h * w {
            return Err(NeftError::Format(format!(
                "header declares {} samples but payload holds {} values",
                header.count,
                inputs.len()
            )));
        }
        Ok(ChannelDataset {
            geometry: header.geometry,
            r_bounds: header.r_bounds,
            seed: header.seed,
            norm: header.norm,
            height: h,
            width: w,
            inputs,
            placements: Vec::new(),
        })
    }
}

/// Per-sample generator: stream `index` of the master seed, so the result
/// does not depend on generation order.
fn placement_for(seed: u64, index: usize, r_min: f64, r_max: f64) -> UePlacement {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let r = r_min + (r_max - r_min) * rng.gen::<f64>();
    let theta = 2.0 * PI * rng.gen::<f64>();
    let phi = 2.0 * PI * rng.gen::<f64>();
    // guard the half-open interval against rounding up to 2*pi
    let wrap = |a: f64| if a >= 2.0 * PI { 0.0 } else { a };
    UePlacement { r: r.max(r_min), theta: wrap(theta), phi: wrap(phi) }
}

/// Draws `count` placements uniformly in `r` (fractions of the Rayleigh
/// distance) and angle, builds their channels and normalizes over the set.
pub fn sample_dataset(geometry: &ArrayGeometry, r_bounds: (f64, f64), count: usize, seed: u64) -> Result<ChannelDataset> {
    let (lo, hi) = r_bounds;
    if !(0.0 < lo && lo < hi) {
        return Err(NeftError::Domain(format!("distance bounds must satisfy 0 < lo < hi, got ({lo}, {hi})")));
    }
    if count == 0 {
        return Err(NeftError::Domain("count must be at least 1".into()));
    }
    geometry.validate()?;
    let d_r = geometry.rayleigh_distance()?;
    let (r_min, r_max) = (lo * d_r, hi * d_r);
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let p = placement_for(seed, i, r_min, r_max);
        samples.push(channel_matrix(geometry, &p)?);
    }
    let norm = NormalizationParams::fit(samples.iter().flat_map(|s| s.h.iter()))?;
    let layout = default_layout(geometry.n1 * geometry.n2);
    let mut inputs = Vec::with_capacity(count * 2 * geometry.n1 * geometry.n2);
    for s in &samples {
        inputs.extend_from_slice(to_network_input(s, &norm, layout)?.data());
    }
    Ok(ChannelDataset {
        geometry: *geometry,
        r_bounds,
        seed,
        norm,
        height: layout.0,
        width: layout.1,
        inputs,
        placements: samples.into_iter().map(|s| s.placement).collect(),
    })
}
