//! Log-Mel spectrograms and fixed-width time patches.
//!
//! Frames are 25 ms Hamming windows every 10 ms, zero-padded to `n_fft`
//! for the DFT. Frame starts sit at `floor(f * 10 ms * rate)` so the frame
//! count follows the duration formula exactly even when 10 ms is not a
//! whole number of samples (22050 Hz gives a hop of 220.5).

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::seed;

pub const N_MELS: usize = 128;
pub const N_FFT: usize = 1024;
pub const WINDOW_MS: u64 = 25;
pub const STRIDE_MS: u64 = 10;
/// Patch width in frames (1.5 s at a 10 ms stride).
pub const PATCH_FRAMES: usize = 150;
pub const DEFAULT_PATCHES_PER_SEGMENT: usize = 4;
/// Added to Mel energies before the natural log.
pub const LOG_FLOOR: f64 = 1e-10;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters on the Mel scale, one row per band.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    /// `n_mels x (n_fft / 2 + 1)`, row-major.
    pub weights: Vec<f64>,
    pub n_mels: usize,
    pub n_fft: usize,
    pub sample_rate: u32,
    pub fmin: f64,
    pub fmax: f64,
    /// Peak frequency of each triangle, Hz.
    pub centers_hz: Vec<f64>,
    // Non-zero column span of each row.
    spans: Vec<(usize, usize)>,
}

impl MelFilterbank {
    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn row(&self, m: usize) -> &[f64] {
        let nb = self.n_bins();
        &self.weights[m * nb..(m + 1) * nb]
    }

    /// Default bank for a sample rate: 128 bands, n_fft 1024, 0 Hz to Nyquist.
    pub fn standard(sample_rate: u32) -> Result<Self> {
        build_filterbank(sample_rate, N_FFT, N_MELS, 0.0, f64::from(sample_rate) / 2.0)
    }
}

pub fn build_filterbank(
    sample_rate: u32,
    n_fft: usize,
    n_mels: usize,
    fmin: f64,
    fmax: f64,
) -> Result<MelFilterbank> {
    let nyquist = f64::from(sample_rate) / 2.0;
    if sample_rate == 0 {
        return Err(Error::Parameter("sample_rate must be positive".into()));
    }
    if !(fmin >= 0.0) {
        return Err(Error::Parameter(format!("fmin = {fmin} must be >= 0")));
    }
    if !(fmin < fmax) {
        return Err(Error::Parameter(format!("fmin = {fmin} must be < fmax = {fmax}")));
    }
    if fmax > nyquist {
        return Err(Error::Parameter(format!(
            "fmax = {fmax} exceeds Nyquist = {nyquist}"
        )));
    }
    if n_mels == 0 {
        return Err(Error::Parameter("n_mels must be >= 1".into()));
    }
    if !n_fft.is_power_of_two() || n_fft < 2 {
        return Err(Error::Parameter(format!("n_fft = {n_fft} must be a power of two")));
    }

    let (mel_lo, mel_hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let n_bins = n_fft / 2 + 1;
    let bin_hz = f64::from(sample_rate) / n_fft as f64;

    let mut weights = vec![0.0; n_mels * n_bins];
    let mut spans = Vec::with_capacity(n_mels);
    for m in 0..n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = &mut weights[m * n_bins..(m + 1) * n_bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let rising = (f - lo) / (mid - lo);
            let falling = (hi - f) / (hi - mid);
            *w = rising.min(falling).max(0.0);
        }
        if row.iter().all(|&w| w == 0.0) {
            // Triangle narrower than the bin spacing: keep the nearest bin.
            let k = ((mid / bin_hz).round() as usize).min(n_bins - 1);
            row[k] = 1.0;
        }
        let first = row.iter().position(|&w| w > 0.0).unwrap_or(0);
        let last = row.iter().rposition(|&w| w > 0.0).unwrap_or(0);
        spans.push((first, last + 1));
    }
    Ok(MelFilterbank {
        weights,
        n_mels,
        n_fft,
        sample_rate,
        fmin,
        fmax,
        centers_hz: edges[1..=n_mels].to_vec(),
        spans,
    })
}

/// Log-Mel energies, `n_mels x n_frames`, row-major (one row per band).
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Vec<f64>,
    pub n_mels: usize,
    pub n_frames: usize,
    /// Seconds.
    pub frame_stride: f64,
    /// Seconds.
    pub window_len: f64,
    /// Seconds.
    pub segment_duration: f64,
}

impl MelSpectrogram {
    pub fn at(&self, band: usize, frame: usize) -> f64 {
        self.values[band * self.n_frames + frame]
    }

    pub fn frame(&self, frame: usize) -> Vec<f64> {
        (0..self.n_mels).map(|m| self.at(m, frame)).collect()
    }
}

/// Frame count for `n` samples at `rate`:
/// `floor((duration - window) / stride) + 1`, or 0 if no window fits.
pub fn frame_count(n: usize, rate: u32) -> usize {
    let num = 1000 * n as u64;
    let win = WINDOW_MS * u64::from(rate);
    if num < win {
        0
    } else {
        ((num - win) / (STRIDE_MS * u64::from(rate)) + 1) as usize
    }
}

fn window_samples(rate: u32) -> usize {
    (WINDOW_MS * u64::from(rate) / 1000) as usize
}

fn frame_start(frame: usize, rate: u32) -> usize {
    (frame as u64 * STRIDE_MS * u64::from(rate) / 1000) as usize
}

fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Reusable STFT + filterbank state for one filterbank.
pub struct MelExtractor {
    fb: MelFilterbank,
    fft: Arc<dyn Fft<f64>>,
}

impl MelExtractor {
    pub fn new(fb: MelFilterbank) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(fb.n_fft);
        Self { fb, fft }
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.fb
    }

    /// Mel energies before the log, `n_mels x n_frames`.
    pub fn mel_power(&self, segment: &AudioClip) -> Result<(Vec<f64>, usize)> {
        let fb = &self.fb;
        if segment.sample_rate != fb.sample_rate {
            return Err(Error::Parameter(format!(
                "segment at {} Hz but filterbank built for {} Hz",
                segment.sample_rate, fb.sample_rate
            )));
        }
        let n_frames = frame_count(segment.samples.len(), segment.sample_rate);
        let win = window_samples(segment.sample_rate);
        if n_frames == 0 || win == 0 {
            return Err(Error::Degenerate(format!(
                "{}: {} samples is shorter than one {WINDOW_MS} ms window",
                segment.source_id,
                segment.samples.len()
            )));
        }
        if win > fb.n_fft {
            return Err(Error::Parameter(format!(
                "window of {win} samples exceeds n_fft = {}",
                fb.n_fft
            )));
        }
        let window = hamming(win);
        let n_bins = fb.n_bins();
        let mut out = vec![0.0; fb.n_mels * n_frames];
        let mut buf = vec![Complex::new(0.0, 0.0); fb.n_fft];
        let mut power = vec![0.0; n_bins];
        for f in 0..n_frames {
            let start = frame_start(f, segment.sample_rate);
            let frame = &segment.samples[start..start + win];
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for ((b, &x), &w) in buf.iter_mut().zip(frame).zip(&window) {
                b.re = x * w;
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for m in 0..fb.n_mels {
                let (lo, hi) = fb.spans[m];
                let row = &fb.row(m)[lo..hi];
                out[m * n_frames + f] = row.iter().zip(&power[lo..hi]).map(|(w, p)| w * p).sum();
            }
        }
        Ok((out, n_frames))
    }

    pub fn spectrogram(&self, segment: &AudioClip) -> Result<MelSpectrogram> {
        let (power, n_frames) = self.mel_power(segment)?;
        Ok(MelSpectrogram {
            values: power.into_iter().map(|p| (p + LOG_FLOOR).ln()).collect(),
            n_mels: self.fb.n_mels,
            n_frames,
            frame_stride: STRIDE_MS as f64 / 1000.0,
            window_len: WINDOW_MS as f64 / 1000.0,
            segment_duration: segment.duration_secs(),
        })
    }
}

/// One-shot log-Mel spectrogram. Prefer [`MelExtractor`] in loops.
pub fn mel_spectrogram(segment: &AudioClip, fb: &MelFilterbank) -> Result<MelSpectrogram> {
    MelExtractor::new(fb.clone()).spectrogram(segment)
}

/// A `n_mels x width` slice of a spectrogram, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MelPatch {
    pub values: Vec<f64>,
    pub n_mels: usize,
    pub n_frames: usize,
    pub start_frame: usize,
}

impl MelPatch {
    pub fn at(&self, band: usize, frame: usize) -> f64 {
        self.values[band * self.n_frames + frame]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSample {
    pub patches: Vec<MelPatch>,
    /// The spectrogram was narrower than one patch and was padded by
    /// repeating its last frame; exactly one patch is returned.
    pub short: bool,
}

/// Draw `n_patches` start frames uniformly (with replacement) from
/// `[0, F - width]`.
pub fn sample_patches(
    spec: &MelSpectrogram,
    n_patches: usize,
    width: usize,
    rng_seed: u64,
) -> Result<PatchSample> {
    if n_patches == 0 || width == 0 {
        return Err(Error::Parameter("n_patches and patch width must be >= 1".into()));
    }
    if spec.n_frames == 0 {
        return Err(Error::Degenerate("spectrogram has no frames".into()));
    }
    let extract = |start: usize| {
        let mut values = Vec::with_capacity(spec.n_mels * width);
        for m in 0..spec.n_mels {
            let row = &spec.values[m * spec.n_frames..(m + 1) * spec.n_frames];
            if start + width <= spec.n_frames {
                values.extend_from_slice(&row[start..start + width]);
            } else {
                values.extend_from_slice(&row[start..]);
                let last = row[spec.n_frames - 1];
                values.resize((m + 1) * width, last);
            }
        }
        MelPatch {
            values,
            n_mels: spec.n_mels,
            n_frames: width,
            start_frame: start,
        }
    };
    if spec.n_frames < width {
        return Ok(PatchSample {
            patches: vec![extract(0)],
            short: true,
        });
    }
    let mut rng = seed::rng(rng_seed, seed::PATCHES, &[]);
    let max_start = spec.n_frames - width;
    let patches = (0..n_patches)
        .map(|_| extract(rng.random_range(0..=max_start)))
        .collect();
    Ok(PatchSample {
        patches,
        short: false,
    })
}
