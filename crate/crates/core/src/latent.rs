//! Channelized low-resolution latents and the structural-prior math.
//!
//! The surrogate encoder replaces a pretrained volumetric VAE with a
//! deterministic path: average-pool occupancy into pooled scalars, then lift
//! each scalar to C channels through a fixed seed-derived affine map. The
//! interpolation and normalization operating on these latents are the part
//! that matters; the encoder only has to preserve the geometry signal.

use std::io::{self, Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::voxel::{GridFrame, GridSpec, VoxelGrid};

#[derive(Debug, Error)]
pub enum LatentError {
    #[error("grid resolution {grid} not divisible by latent resolution {latent}")]
    IndivisibleResolution { grid: u32, latent: u32 },
    #[error("latent shapes differ: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(u32, u32, u32, u32),
    #[error("channel count mismatch: latent has {latent}, stats have {stats}")]
    ChannelMismatch { latent: u32, stats: u32 },
    #[error("lambda {0} outside [0, 1]")]
    LambdaOutOfRange(f64),
    #[error("no latents provided")]
    EmptyInput,
    #[error("latent io: {0}")]
    Io(#[from] io::Error),
    #[error("bad latent file: {0}")]
    Format(String),
}

/// Dense M^3 x C coefficient grid. Values are stored cell-major with the
/// channel index fastest, cells ordered (i, j, k) with i slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    resolution: u32,
    channels: u32,
    values: Vec<f64>,
}

impl Latent {
    pub fn zeros(resolution: u32, channels: u32) -> Self {
        let len = (resolution as usize).pow(3) * channels as usize;
        Latent {
            resolution,
            channels,
            values: vec![0.0; len],
        }
    }

    pub fn from_values(resolution: u32, channels: u32, values: Vec<f64>) -> Self {
        assert_eq!(
            values.len(),
            (resolution as usize).pow(3) * channels as usize,
            "value buffer does not match shape"
        );
        Latent {
            resolution,
            channels,
            values,
        }
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn channels(&self) -> u32 {
        self.channels
    }

    pub fn cells(&self) -> usize {
        (self.resolution as usize).pow(3)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn same_shape(&self, other: &Latent) -> bool {
        self.resolution == other.resolution && self.channels == other.channels
    }

    pub fn get(&self, cell: usize, channel: usize) -> f64 {
        self.values[cell * self.channels as usize + channel]
    }

    /// Cell index for (i, j, k).
    pub fn cell_index(&self, i: u32, j: u32, k: u32) -> usize {
        ((i * self.resolution + j) * self.resolution + k) as usize
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// In-place `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &Latent) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.values.iter_mut().zip(other.values.iter()) {
            *a += scale * b;
        }
    }

    /// Serializes as: magic "ULAT", u32 M, u32 C, then M^3 * C f32 values
    /// cell-major channel-fastest. Little-endian.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), LatentError> {
        w.write_all(b"ULAT")?;
        w.write_all(&self.resolution.to_le_bytes())?;
        w.write_all(&self.channels.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, LatentError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"ULAT" {
            return Err(LatentError::Format("bad magic, expected ULAT".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let resolution = u32::from_le_bytes(b4);
        r.read_exact(&mut b4)?;
        let channels = u32::from_le_bytes(b4);
        let len = (resolution as usize).pow(3) * channels as usize;
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut b4)?;
            values.push(f32::from_le_bytes(b4) as f64);
        }
        Ok(Latent {
            resolution,
            channels,
            values,
        })
    }
}

/// The fixed affine lift of the surrogate encoder: channel c maps a pooled
/// occupancy scalar s to `a[c] * s + b[c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateCoeffs {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl SurrogateCoeffs {
    /// Coefficients are standard-normal draws from a seed-derived stream, so
    /// identical (channels, seed) always produce the identical map.
    pub fn derive(channels: u32, seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x5352_4f47); // stream tag
        let normal = StandardNormal;
        let mut gain = Vec::with_capacity(channels as usize);
        let mut bias = Vec::with_capacity(channels as usize);
        for _ in 0..channels {
            let g: f64 = normal.sample(&mut rng);
            // Keep gains bounded away from zero so the lift stays invertible.
            gain.push(if g.abs() < 0.1 { 0.1_f64.copysign(g) } else { g });
        }
        for _ in 0..channels {
            bias.push(normal.sample(&mut rng));
        }
        SurrogateCoeffs { gain, bias }
    }
}

/// Average-pools grid occupancy into an M^3 scalar field (M = grid N /
/// factor implied by `latent_resolution`) and lifts each scalar to C
/// channels with the seed-derived affine map.
pub fn encode_surrogate(
    grid: &VoxelGrid,
    latent_resolution: u32,
    channels: u32,
    seed: u64,
) -> Result<Latent, LatentError> {
    let n = grid.resolution();
    if latent_resolution == 0 || n % latent_resolution != 0 {
        return Err(LatentError::IndivisibleResolution {
            grid: n,
            latent: latent_resolution,
        });
    }
    let factor = n / latent_resolution;
    let block = (factor as f64).powi(3);
    let m = latent_resolution;
    let mut pooled = vec![0.0f64; (m as usize).pow(3)];
    for [i, j, k] in grid.iter() {
        let ci = i as u32 / factor;
        let cj = j as u32 / factor;
        let ck = k as u32 / factor;
        pooled[((ci * m + cj) * m + ck) as usize] += 1.0;
    }
    for p in &mut pooled {
        *p /= block;
    }
    let coeffs = SurrogateCoeffs::derive(channels, seed);
    let mut out = Latent::zeros(m, channels);
    for (cell, &s) in pooled.iter().enumerate() {
        for c in 0..channels as usize {
            out.values_mut()[cell * channels as usize + c] =
                coeffs.gain[c] * s + coeffs.bias[c];
        }
    }
    Ok(out)
}

/// Inverts the surrogate lift by per-cell least squares, thresholds the
/// recovered occupancy scalar at 0.5, and expands each latent cell to its
/// block at the output resolution.
pub fn decode_surrogate(
    latent: &Latent,
    seed: u64,
    out_resolution: u32,
    frame: GridFrame,
) -> Result<VoxelGrid, LatentError> {
    let m = latent.resolution();
    if m == 0 || out_resolution % m != 0 {
        return Err(LatentError::IndivisibleResolution {
            grid: out_resolution,
            latent: m,
        });
    }
    let factor = (out_resolution / m) as u16;
    let coeffs = SurrogateCoeffs::derive(latent.channels(), seed);
    let gain_norm: f64 = coeffs.gain.iter().map(|g| g * g).sum();
    let mut grid = VoxelGrid::new(GridSpec {
        resolution: out_resolution,
        frame,
    })
    .map_err(|e| LatentError::Format(e.to_string()))?;
    let c = latent.channels() as usize;
    for cell in 0..latent.cells() {
        let mut dot = 0.0;
        for ch in 0..c {
            dot += coeffs.gain[ch] * (latent.get(cell, ch) - coeffs.bias[ch]);
        }
        let s = (dot / gain_norm).clamp(0.0, 1.0);
        if s >= 0.5 {
            let cell_u = cell as u32;
            let i = cell_u / (m * m);
            let j = (cell_u / m) % m;
            let k = cell_u % m;
            for di in 0..factor {
                for dj in 0..factor {
                    for dk in 0..factor {
                        grid.insert([
                            i as u16 * factor + di,
                            j as u16 * factor + dj,
                            k as u16 * factor + dk,
                        ]);
                    }
                }
            }
        }
    }
    Ok(grid)
}

/// Per-channel mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

const STD_FLOOR: f64 = 1e-6;

/// Fits stats over every cell of every latent; std is floored at 1e-6.
pub fn fit_channel_stats(latents: &[Latent]) -> Result<ChannelStats, LatentError> {
    let first = latents.first().ok_or(LatentError::EmptyInput)?;
    let c = first.channels() as usize;
    for l in latents {
        if !l.same_shape(first) {
            return Err(LatentError::ShapeMismatch(
                first.resolution(),
                first.channels(),
                l.resolution(),
                l.channels(),
            ));
        }
    }
    let mut mean = vec![0.0f64; c];
    let mut count = 0usize;
    for l in latents {
        for cell in 0..l.cells() {
            for ch in 0..c {
                mean[ch] += l.get(cell, ch);
            }
        }
        count += l.cells();
    }
    for m in &mut mean {
        *m /= count as f64;
    }
    let mut var = vec![0.0f64; c];
    for l in latents {
        for cell in 0..l.cells() {
            for ch in 0..c {
                let d = l.get(cell, ch) - mean[ch];
                var[ch] += d * d;
            }
        }
    }
    let std = var
        .iter()
        .map(|v| (v / count as f64).sqrt().max(STD_FLOOR))
        .collect();
    Ok(ChannelStats { mean, std })
}

/// Channel-wise normalization: `(z - mean) / std` per channel.
pub fn latent_norm(z: &Latent, stats: &ChannelStats) -> Result<Latent, LatentError> {
    let c = z.channels() as usize;
    if stats.mean.len() != c || stats.std.len() != c {
        return Err(LatentError::ChannelMismatch {
            latent: z.channels(),
            stats: stats.mean.len() as u32,
        });
    }
    let mut out = z.clone();
    for cell in 0..z.cells() {
        for ch in 0..c {
            let idx = cell * c + ch;
            out.values_mut()[idx] = (z.values()[idx] - stats.mean[ch]) / stats.std[ch];
        }
    }
    Ok(out)
}

/// Cosine geometric interpolation between a normalized prior latent and
/// noise: `cos(lambda*pi/2) * zp + sin(lambda*pi/2) * eps`.
///
/// The endpoints are returned exactly: lambda 0 is the prior, lambda 1 is
/// the noise, bit for bit.
pub fn cosine_interpolate(zp: &Latent, eps: &Latent, lambda: f64) -> Result<Latent, LatentError> {
    if !zp.same_shape(eps) {
        return Err(LatentError::ShapeMismatch(
            zp.resolution(),
            zp.channels(),
            eps.resolution(),
            eps.channels(),
        ));
    }
    if !(0.0..=1.0).contains(&lambda) || lambda.is_nan() {
        return Err(LatentError::LambdaOutOfRange(lambda));
    }
    if lambda == 0.0 {
        return Ok(zp.clone());
    }
    if lambda == 1.0 {
        return Ok(eps.clone());
    }
    let angle = lambda * std::f64::consts::FRAC_PI_2;
    let (s, c) = angle.sin_cos();
    let mut out = zp.clone();
    for (o, e) in out.values_mut().iter_mut().zip(eps.values().iter()) {
        *o = c * *o + s * *e;
    }
    Ok(out)
}

/// I.i.d. standard normal latent from a counter-based deterministic stream;
/// identical seeds produce identical latents.
pub fn sample_noise(resolution: u32, channels: u32, seed: u64) -> Latent {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let len = (resolution as usize).pow(3) * channels as usize;
    let values = (0..len).map(|_| normal.sample(&mut rng)).collect();
    Latent::from_values(resolution, channels, values)
}
