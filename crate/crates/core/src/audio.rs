//! Audio ingest: WAV decoding, resampling, two-way segmentation and
//! per-segment standardization.

use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};

/// Internal sample rate every clip is brought to on ingest.
pub const CANONICAL_SAMPLE_RATE: u32 = 22050;

/// Variance below which a segment counts as constant.
pub const CONSTANT_VARIANCE: f64 = 1e-12;

/// Decoded mono audio.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub label: Option<String>,
    pub source_id: String,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32, source_id: impl Into<String>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Degenerate("audio clip has no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Parameter("sample rate must be positive".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
            label: None,
            source_id: source_id.into(),
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

/// The two sibling halves of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPair {
    pub first: AudioClip,
    pub second: AudioClip,
    pub parent_id: String,
}

/// A standardized segment. `constant` marks inputs whose variance was
/// too small to standardize; such segments are all zeros and must not
/// enter a training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSegment {
    pub clip: AudioClip,
    pub constant: bool,
}

// ---------------------------------------------------------------------------
// WAV decoding

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SampleEncoding {
    Int { bits: u16 },
    Float32,
}

struct WavFormat {
    encoding: SampleEncoding,
    channels: u16,
    sample_rate: u32,
    block_align: u16,
}

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn encoding_name(tag: u16, bits: u16) -> String {
    match tag {
        1 => format!("integer PCM {bits}-bit"),
        2 => "Microsoft ADPCM".into(),
        3 => format!("IEEE float {bits}-bit"),
        6 => "A-law".into(),
        7 => "mu-law".into(),
        0x11 => "IMA ADPCM".into(),
        0x55 => "MPEG layer 3".into(),
        other => format!("format tag 0x{other:04x}"),
    }
}

fn parse_fmt(chunk: &[u8]) -> Result<WavFormat> {
    if chunk.len() < 16 {
        return Err(Error::Format("fmt chunk shorter than 16 bytes".into()));
    }
    let mut tag = read_u16(chunk, 0);
    let channels = read_u16(chunk, 2);
    let sample_rate = read_u32(chunk, 4);
    let block_align = read_u16(chunk, 12);
    let bits = read_u16(chunk, 14);
    if tag == 0xFFFE {
        // WAVE_FORMAT_EXTENSIBLE: the sub-format GUID starts with the real tag.
        if chunk.len() < 26 {
            return Err(Error::Format("truncated extensible fmt chunk".into()));
        }
        tag = read_u16(chunk, 24);
    }
    let encoding = match (tag, bits) {
        (1, 8 | 16 | 24 | 32) => SampleEncoding::Int { bits },
        (3, 32) => SampleEncoding::Float32,
        _ => {
            return Err(Error::Format(format!(
                "unsupported WAV encoding: {}",
                encoding_name(tag, bits)
            )))
        }
    };
    if channels == 0 || sample_rate == 0 {
        return Err(Error::Format("WAV header declares zero channels or zero rate".into()));
    }
    let min_align = usize::from(channels) * usize::from(bits / 8);
    if usize::from(block_align) < min_align {
        return Err(Error::Format(format!(
            "block align {block_align} too small for {channels} channels of {bits}-bit samples"
        )));
    }
    Ok(WavFormat {
        encoding,
        channels,
        sample_rate,
        block_align,
    })
}

fn decode_sample(bytes: &[u8], encoding: SampleEncoding) -> f64 {
    match encoding {
        SampleEncoding::Int { bits: 8 } => (f64::from(bytes[0]) - 128.0) / 128.0,
        SampleEncoding::Int { bits: 16 } => {
            f64::from(i16::from_le_bytes([bytes[0], bytes[1]])) / 32768.0
        }
        SampleEncoding::Int { bits: 24 } => {
            let v = i32::from_le_bytes([0, bytes[0], bytes[1], bytes[2]]) >> 8;
            f64::from(v) / 8_388_608.0
        }
        SampleEncoding::Int { .. } => {
            f64::from(i32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])) / 2_147_483_648.0
        }
        SampleEncoding::Float32 => {
            f64::from(f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]))
        }
    }
}

/// Decode an in-memory RIFF/WAVE byte buffer into a mono clip.
pub fn decode_wav(bytes: &[u8], source_id: &str) -> Result<AudioClip> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Format(format!("{source_id}: not a RIFF/WAVE file")));
    }
    let mut format = None;
    let mut data: Option<&[u8]> = None;
    let mut at = 12;
    while at + 8 <= bytes.len() {
        let id = &bytes[at..at + 4];
        let size = read_u32(bytes, at + 4) as usize;
        let body_start = at + 8;
        // Tolerate a truncated final data chunk (common with streamed writers).
        let body_end = (body_start + size).min(bytes.len());
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => format = Some(parse_fmt(body)?),
            b"data" => data = Some(body),
            _ => {}
        }
        at = body_start + size + (size & 1);
    }
    let format = format.ok_or_else(|| Error::Format(format!("{source_id}: missing fmt chunk")))?;
    let data = data.ok_or_else(|| Error::Format(format!("{source_id}: missing data chunk")))?;

    let channels = usize::from(format.channels);
    let frame_bytes = usize::from(format.block_align);
    let sample_bytes = match format.encoding {
        SampleEncoding::Int { bits } => usize::from(bits / 8),
        SampleEncoding::Float32 => 4,
    };
    let frames = data.len() / frame_bytes;
    let mut samples = Vec::with_capacity(frames);
    for frame in data.chunks_exact(frame_bytes) {
        let sum: f64 = (0..channels)
            .map(|c| decode_sample(&frame[c * sample_bytes..], format.encoding))
            .sum();
        samples.push(sum / channels as f64);
    }
    if samples.is_empty() {
        return Err(Error::Degenerate(format!("{source_id}: WAV data chunk is empty")));
    }
    AudioClip::new(samples, format.sample_rate, source_id)
}

/// Load a PCM WAV file (8/16/24/32-bit integer or 32-bit float), averaging
/// channels down to mono.
pub fn load_wav(path: &Path) -> Result<AudioClip> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes, &path.to_string_lossy())
}

/// Encode mono samples as a 16-bit PCM WAV byte buffer. Values are clamped
/// to [-1, 1) and rounded to the nearest code.
pub fn encode_wav_pcm16(samples: &[f64], sample_rate: u32) -> Vec<u8> {
    let data_len = samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in samples {
        let code = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&code.to_le_bytes());
    }
    out
}

pub fn write_wav_pcm16(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    std::fs::write(path, encode_wav_pcm16(samples, sample_rate)).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Resampling

/// Zero crossings of the sinc kernel kept on each side.
const SINC_HALF_WIDTH: f64 = 16.0;
/// Passband edge relative to the lower of the two Nyquist rates.
const SINC_ROLLOFF: f64 = 0.97;
/// Above this many phases the taps are computed per output sample.
const MAX_TABLE_PHASES: usize = 1024;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn blackman(x: f64) -> f64 {
    // centred on 0, support [-1, 1]
    if x.abs() >= 1.0 {
        0.0
    } else {
        0.42 + 0.5 * (PI * x).cos() + 0.08 * (2.0 * PI * x).cos()
    }
}

struct SincKernel {
    cutoff: f64,
    half_taps: i64,
}

impl SincKernel {
    /// Normalized taps for fractional offset `frac` in [0, 1); tap `j`
    /// multiplies input sample `base - half_taps + 1 + j`.
    fn taps(&self, frac: f64) -> Vec<f64> {
        let span = self.half_taps as f64;
        let mut taps: Vec<f64> = (0..2 * self.half_taps)
            .map(|j| {
                let offset = j - self.half_taps + 1;
                let tau = frac - offset as f64;
                self.cutoff * sinc(self.cutoff * tau) * blackman(tau / (span + 1.0))
            })
            .collect();
        let sum: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= sum);
        taps
    }
}

/// Band-limited rational-ratio resampling with a Blackman-windowed sinc
/// kernel evaluated on a polyphase grid.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::Parameter("target sample rate must be positive".into()));
    }
    if target_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    let (rin, rout) = (u64::from(clip.sample_rate), u64::from(target_rate));
    let g = gcd(rin, rout);
    let (up, down) = (rout / g, rin / g);
    let n = clip.samples.len() as u64;
    let out_len = (n * up).div_ceil(down) as usize;

    let cutoff = SINC_ROLLOFF * (rout as f64 / rin as f64).min(1.0);
    let kernel = SincKernel {
        cutoff,
        half_taps: (SINC_HALF_WIDTH / cutoff).ceil() as i64,
    };
    let table: Option<Vec<Vec<f64>>> = (up as usize <= MAX_TABLE_PHASES)
        .then(|| (0..up).map(|p| kernel.taps(p as f64 / up as f64)).collect());

    let x = &clip.samples;
    let mut out = Vec::with_capacity(out_len);
    for m in 0..out_len as u64 {
        let pos = m * down;
        let base = (pos / up) as i64;
        let phase = pos % up;
        let owned;
        let taps = match &table {
            Some(t) => &t[phase as usize],
            None => {
                owned = kernel.taps(phase as f64 / up as f64);
                &owned
            }
        };
        let first = base - kernel.half_taps + 1;
        let acc: f64 = taps
            .iter()
            .enumerate()
            .filter_map(|(j, &w)| {
                let k = first + j as i64;
                (k >= 0 && (k as usize) < x.len()).then(|| w * x[k as usize])
            })
            .sum();
        out.push(acc);
    }
    Ok(AudioClip {
        samples: out,
        sample_rate: target_rate,
        label: clip.label.clone(),
        source_id: clip.source_id.clone(),
    })
}

// ---------------------------------------------------------------------------
// Segmentation and standardization

/// Split a clip into two equal halves of `floor(n / 2)` samples each. For
/// odd `n` the final sample is dropped.
pub fn split_pair(clip: &AudioClip) -> Result<SegmentPair> {
    let n = clip.samples.len();
    if n < 2 {
        return Err(Error::Degenerate(format!(
            "{}: cannot split a clip of {n} sample(s) into two segments",
            clip.source_id
        )));
    }
    let half = n / 2;
    let segment = |range: std::ops::Range<usize>, idx: usize| AudioClip {
        samples: clip.samples[range].to_vec(),
        sample_rate: clip.sample_rate,
        label: clip.label.clone(),
        source_id: format!("{}#{idx}", clip.source_id),
    };
    Ok(SegmentPair {
        first: segment(0..half, 0),
        second: segment(half..2 * half, 1),
        parent_id: clip.source_id.clone(),
    })
}

/// Mean and population variance.
pub fn moments(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Standardize to zero mean and unit population variance.
pub fn normalize(clip: &AudioClip) -> Result<NormalizedSegment> {
    if clip.samples.is_empty() {
        return Err(Error::Degenerate("cannot normalize an empty clip".into()));
    }
    let (mean, var) = moments(&clip.samples);
    let (samples, constant) = if var < CONSTANT_VARIANCE {
        (vec![0.0; clip.samples.len()], true)
    } else {
        let inv = 1.0 / var.sqrt();
        (clip.samples.iter().map(|v| (v - mean) * inv).collect(), false)
    };
    Ok(NormalizedSegment {
        clip: AudioClip {
            samples,
            ..clip.clone()
        },
        constant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn clip(samples: Vec<f64>) -> AudioClip {
        AudioClip::new(samples, 8000, "t").unwrap()
    }

    fn tone(freq: f64, rate: u32, n: usize, amp: f64) -> Vec<f64> {
        (0..n)
            .map(|i| amp * (2.0 * PI * freq * i as f64 / f64::from(rate)).sin())
            .collect()
    }

    /// Index of the strongest positive-frequency DFT bin, by direct summation.
    fn dft_peak_bin(x: &[f64]) -> usize {
        let n = x.len();
        (1..n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, v) in x.iter().enumerate() {
                    let ang = 2.0 * PI * (k * t) as f64 / n as f64;
                    re += v * ang.cos();
                    im -= v * ang.sin();
                }
                (k, re * re + im * im)
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0
    }

    fn raw_wav(format_tag: u16, channels: u16, bits: u16, rate: u32, data: &[u8]) -> Vec<u8> {
        let align = channels * bits / 8;
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&((36 + data.len()) as u32).to_le_bytes());
        out.extend_from_slice(b"WAVEfmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&format_tag.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&rate.to_le_bytes());
        out.extend_from_slice(&(rate * u32::from(align)).to_le_bytes());
        out.extend_from_slice(&align.to_le_bytes());
        out.extend_from_slice(&bits.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(data.len() as u32).to_le_bytes());
        out.extend_from_slice(data);
        out
    }

    #[test]
    fn stereo_silence_decodes_to_zeros() {
        let bytes = raw_wav(1, 2, 16, 44100, &vec![0u8; 44100 * 4]);
        let c = decode_wav(&bytes, "s").unwrap();
        assert_eq!(c.sample_rate, 44100);
        assert_eq!(c.samples.len(), 44100);
        assert!(c.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_16bit_sample_scales_by_32768() {
        let bytes = raw_wav(1, 1, 16, 8000, &16384i16.to_le_bytes());
        assert_eq!(decode_wav(&bytes, "s").unwrap().samples, vec![0.5]);
    }

    #[test]
    fn decodes_other_depths_and_averages_channels() {
        let b8 = raw_wav(1, 1, 8, 8000, &[192]);
        assert_eq!(decode_wav(&b8, "s").unwrap().samples, vec![0.5]);
        let b24 = raw_wav(1, 1, 24, 8000, &[0x00, 0x00, 0xC0]);
        assert_eq!(decode_wav(&b24, "s").unwrap().samples, vec![-0.5]);
        let b32 = raw_wav(1, 1, 32, 8000, &(1i32 << 30).to_le_bytes());
        assert_eq!(decode_wav(&b32, "s").unwrap().samples, vec![0.5]);
        let mut f = 0.25f32.to_le_bytes().to_vec();
        f.extend_from_slice(&0.75f32.to_le_bytes());
        let bf = raw_wav(3, 2, 32, 8000, &f);
        assert_eq!(decode_wav(&bf, "s").unwrap().samples, vec![0.5]);
    }

    #[test]
    fn unsupported_encoding_names_itself() {
        let bytes = raw_wav(7, 1, 8, 8000, &[0]);
        let err = decode_wav(&bytes, "s").unwrap_err();
        assert_eq!(err.category(), "format");
        assert!(err.to_string().contains("mu-law"), "{err}");
        let f64wav = raw_wav(3, 1, 64, 8000, &[0; 8]);
        assert!(decode_wav(&f64wav, "s").unwrap_err().to_string().contains("IEEE float 64-bit"));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_wav(Path::new("/nonexistent/x.wav")).unwrap_err();
        assert_eq!(err.category(), "io");
    }

    #[test]
    fn written_sine_round_trips_within_one_code() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sine.wav");
        let amp = 0.8;
        let written = tone(440.0, 22050, 2205, amp);
        write_wav_pcm16(&path, &written, 22050).unwrap();
        let c = load_wav(&path).unwrap();
        assert_eq!(c.samples.len(), 2205);
        assert_eq!(c.sample_rate, 22050);
        let peak_written = written.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let peak_read = c.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak_written - peak_read).abs() <= 1.0 / 32768.0);
        for (a, b) in written.iter().zip(&c.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn resample_identity_is_bit_identical() {
        let c = AudioClip::new(tone(100.0, 8000, 500, 0.3), 8000, "x").unwrap();
        assert_eq!(resample(&c, 8000).unwrap(), c);
    }

    #[test]
    fn resample_length_scales_with_rate() {
        let c = AudioClip::new(tone(440.0, 22050, 22050, 0.5), 22050, "x").unwrap();
        assert_eq!(resample(&c, 44100).unwrap().samples.len(), 44100);
        let d = AudioClip::new(vec![0.1; 48000], 48000, "x").unwrap();
        assert_eq!(resample(&d, 22050).unwrap().samples.len(), 22050);
    }

    #[test]
    fn downsampled_tone_keeps_its_frequency() {
        let n = 4410;
        let c = AudioClip::new(tone(440.0, 44100, n, 0.5), 44100, "x").unwrap();
        let r = resample(&c, 22050).unwrap();
        // bin width = 22050 / len Hz
        let bin = dft_peak_bin(&r.samples);
        let expected = 440.0 * r.samples.len() as f64 / 22050.0;
        assert!((bin as f64 - expected).abs() <= 1.0, "bin {bin} vs {expected}");
    }

    #[test]
    fn resample_rejects_zero_rate() {
        let c = clip(vec![0.0; 4]);
        assert_eq!(resample(&c, 0).unwrap_err().category(), "parameter");
    }

    #[test]
    fn split_even_and_odd() {
        let p = split_pair(&clip(vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(p.first.samples, vec![1.0, 2.0]);
        assert_eq!(p.second.samples, vec![3.0, 4.0]);
        let p = split_pair(&clip(vec![1.0, 2.0, 3.0, 4.0, 5.0])).unwrap();
        assert_eq!(p.first.samples, vec![1.0, 2.0]);
        assert_eq!(p.second.samples, vec![3.0, 4.0]);
        assert_eq!(p.parent_id, "t");
    }

    #[test]
    fn split_five_second_clip() {
        let c = AudioClip::new(vec![0.0; 5 * 22050], 22050, "esc").unwrap();
        let p = split_pair(&c).unwrap();
        assert_eq!(p.first.samples.len(), 55125);
        assert_eq!(p.second.samples.len(), 55125);
    }

    #[test]
    fn split_rejects_single_sample() {
        assert_eq!(split_pair(&clip(vec![1.0])).unwrap_err().category(), "degenerate");
    }

    #[test]
    fn normalize_examples() {
        let n = normalize(&clip(vec![1.0, -1.0])).unwrap();
        assert_eq!(n.clip.samples, vec![1.0, -1.0]);
        assert!(!n.constant);

        let n = normalize(&clip(vec![5.0, 5.0, 5.0])).unwrap();
        assert_eq!(n.clip.samples, vec![0.0, 0.0, 0.0]);
        assert!(n.constant);

        let n = normalize(&clip(vec![0.0, 1.0, 2.0, 3.0])).unwrap();
        let std = 1.25f64.sqrt();
        let expected: Vec<f64> = [0.0, 1.0, 2.0, 3.0].iter().map(|v| (v - 1.5) / std).collect();
        for (a, b) in n.clip.samples.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((n.clip.samples[0] + 1.3416).abs() < 1e-4);
        assert!((n.clip.samples[1] + 0.4472).abs() < 1e-4);
    }

    #[test]
    fn resample_round_trip_keeps_tone_peak() {
        let n = 2205;
        let c = AudioClip::new(tone(1000.0, 22050, n, 0.5), 22050, "x").unwrap();
        let up = resample(&c, 44100).unwrap();
        let back = resample(&up, 22050).unwrap();
        assert_eq!(back.samples.len(), n);
        let a = dft_peak_bin(&c.samples);
        let b = dft_peak_bin(&back.samples);
        assert!(a.abs_diff(b) <= 1);
    }

    proptest! {
        #[test]
        fn normalize_gives_zero_mean_unit_std(
            xs in proptest::collection::vec(-100.0f64..100.0, 2..200)
        ) {
            let c = clip(xs);
            let n = normalize(&c).unwrap();
            prop_assume!(!n.constant);
            let (mean, var) = moments(&n.clip.samples);
            prop_assert!(mean.abs() <= 1e-6);
            prop_assert!((var.sqrt() - 1.0).abs() <= 1e-6);
            let again = normalize(&n.clip).unwrap();
            for (a, b) in again.clip.samples.iter().zip(&n.clip.samples) {
                prop_assert!((a - b).abs() <= 1e-5);
            }
        }

        #[test]
        fn split_then_concat_is_identity_on_even_lengths(
            xs in proptest::collection::vec(-1.0f64..1.0, 1..100)
        ) {
            let mut even = xs.clone();
            even.extend_from_slice(&xs);
            let p = split_pair(&clip(even.clone())).unwrap();
            let mut joined = p.first.samples.clone();
            joined.extend_from_slice(&p.second.samples);
            prop_assert_eq!(joined, even);
        }
    }
}
