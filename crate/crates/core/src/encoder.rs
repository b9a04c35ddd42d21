//! The 1D CNN feature encoder.
//!
//! Each layer is `conv -> ReLU -> average subsample`. The last layer's
//! subsample factor is its whole input-map length, so the encoder emits one
//! value per channel whatever the input length; with a 768-wide patch
//! embedding and the default kernels that factor works out to 5. The
//! channel vector `h` goes through a two-layer MLP (ReLU + dropout on the
//! hidden layer) to give the projection `z` the contrastive loss sees.
//!
//! Spectrogram input goes through a patch front end first:
//! `k = ReLU(W (P_1^T E + ... + P_N^T E))`, a 768-vector that enters the
//! conv stack as a one-channel sequence. It is evaluated as
//! `ReLU(((sum_n P_n) W^T)^T E)`, which is the same product reassociated.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::checkpoint::{Container, NamedTensor};
use crate::autodiff::{AdamConfig, AdamState, DiffTensor, Tape, Var};
use crate::dsp::{MelPatch, N_MELS, PATCH_FRAMES};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    Waveform,
    #[serde(alias = "patches")]
    Spectrogram,
}

impl std::fmt::Display for InputKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InputKind::Waveform => "waveform",
            InputKind::Spectrogram => "spectrogram",
        })
    }
}

impl std::str::FromStr for InputKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "waveform" => Ok(Self::Waveform),
            "spectrogram" | "patches" => Ok(Self::Spectrogram),
            other => Err(Error::config(format!("unknown input kind `{other}`"))),
        }
    }
}

/// A fixed subsampling factor, or `"adaptive"` (factor = input length).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Subsample {
    Factor(usize),
    Adaptive(AdaptiveTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdaptiveTag {
    Adaptive,
}

impl Subsample {
    pub const ADAPTIVE: Subsample = Subsample::Adaptive(AdaptiveTag::Adaptive);

    pub fn is_adaptive(self) -> bool {
        matches!(self, Subsample::Adaptive(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerConfig {
    pub neurons: usize,
    pub kernel: usize,
    pub subsample: Subsample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub hidden_width: usize,
    pub output_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: Vec<ConvLayerConfig>,
    pub projection: ProjectionConfig,
    pub input_kind: InputKind,
    pub patch_embed_dim: usize,
    pub patch_frames: usize,
    pub n_mels: usize,
    pub dropout_p: f64,
}

/// Channel widths per layer for the depth sweep, layer 1 first.
const DEPTH_WIDTHS: [usize; 10] = [64, 64, 32, 16, 64, 32, 16, 62, 32, 16];

fn layer(neurons: usize, kernel: usize, subsample: Subsample) -> ConvLayerConfig {
    ConvLayerConfig {
        neurons,
        kernel,
        subsample,
    }
}

impl Default for EncoderConfig {
    /// Four layers: kernels 1, 9, 15, 4; widths 64, 64, 32, 16; subsampling
    /// 4, 4, 4 and adaptive; MLP 256 -> 128; dropout 0.5.
    fn default() -> Self {
        Self::with_depth(4, InputKind::Waveform).expect("depth 4 is supported")
    }
}

impl EncoderConfig {
    pub fn for_input(kind: InputKind) -> Self {
        Self {
            input_kind: kind,
            ..Self::default()
        }
    }

    /// Configurations for the 4/6/8/10-layer sweep. Deeper stacks use
    /// subsampling 2 and kernels from {1, 9, 15, 6} so that a 0.1 s input at
    /// 22050 Hz still reaches the last layer.
    pub fn with_depth(depth: usize, kind: InputKind) -> Result<Self> {
        let f = Subsample::Factor;
        let a = Subsample::ADAPTIVE;
        let plan: Vec<(usize, Subsample)> = match depth {
            4 => vec![(1, f(4)), (9, f(4)), (15, f(4)), (4, a)],
            6 => vec![(1, f(4)), (9, f(2)), (15, f(2)), (6, f(2)), (9, f(2)), (6, a)],
            8 => vec![
                (1, f(2)),
                (9, f(2)),
                (15, f(2)),
                (6, f(2)),
                (9, f(2)),
                (6, f(2)),
                (6, f(2)),
                (6, a),
            ],
            10 => vec![
                (1, f(2)),
                (9, f(2)),
                (15, f(2)),
                (6, f(2)),
                (9, f(2)),
                (6, f(2)),
                (6, f(2)),
                (1, f(2)),
                (1, f(2)),
                (1, a),
            ],
            other => {
                return Err(Error::config(format!(
                    "no preset for depth {other}; use 4, 6, 8 or 10"
                )))
            }
        };
        Ok(Self {
            layers: plan
                .into_iter()
                .zip(DEPTH_WIDTHS)
                .map(|((k, s), w)| layer(w, k, s))
                .collect(),
            projection: ProjectionConfig {
                hidden_width: 256,
                output_dim: 128,
            },
            input_kind: kind,
            patch_embed_dim: 768,
            patch_frames: PATCH_FRAMES,
            n_mels: N_MELS,
            dropout_p: 0.5,
        })
    }

    /// Every violated constraint, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.layers.len() < 2 {
            v.push(format!("encoder.layers: need at least 2 layers, got {}", self.layers.len()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            let last = i + 1 == self.layers.len();
            if l.neurons == 0 {
                v.push(format!("encoder.layers[{i}].neurons must be >= 1"));
            }
            if l.kernel == 0 {
                v.push(format!("encoder.layers[{i}].kernel must be >= 1"));
            }
            match l.subsample {
                Subsample::Factor(0) => v.push(format!("encoder.layers[{i}].subsample must be >= 1")),
                Subsample::Factor(_) if last => {
                    v.push(format!("encoder.layers[{i}].subsample: the last layer must be adaptive"))
                }
                Subsample::Adaptive(_) if !last => v.push(format!(
                    "encoder.layers[{i}].subsample: only the last layer may be adaptive"
                )),
                _ => {}
            }
        }
        if self.projection.hidden_width == 0 || self.projection.output_dim == 0 {
            v.push("encoder.projection: widths must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            v.push(format!("encoder.dropout_p = {} outside [0, 1)", self.dropout_p));
        }
        if self.input_kind == InputKind::Spectrogram
            && (self.patch_embed_dim == 0 || self.patch_frames == 0 || self.n_mels == 0)
        {
            v.push("encoder: patch_embed_dim, patch_frames and n_mels must be >= 1".into());
        } else if self.input_kind == InputKind::Spectrogram && v.is_empty() {
            // The conv stack sees a fixed-length embedding, so its fit is known now.
            if let Err(e) = self.layer_trace(self.patch_embed_dim) {
                v.push(format!("encoder.patch_embed_dim = {}: {e}", self.patch_embed_dim));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    /// Dimension of `h`: the last layer's channel count.
    pub fn representation_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.neurons)
    }

    /// Per-layer lengths for an input of `input_len` samples.
    pub fn layer_trace(&self, input_len: usize) -> Result<Vec<LayerTrace>> {
        let mut len = input_len;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            if len < l.kernel {
                return Err(Error::Shape(format!(
                    "layer {}: input length {len} shorter than kernel {}",
                    i + 1,
                    l.kernel
                )));
            }
            let conv_len = len - l.kernel + 1;
            let factor = match l.subsample {
                Subsample::Factor(f) => f,
                Subsample::Adaptive(_) => conv_len,
            };
            if conv_len < factor {
                return Err(Error::Shape(format!(
                    "layer {}: conv output length {conv_len} shorter than subsample factor {factor}",
                    i + 1
                )));
            }
            let output_len = conv_len / factor;
            out.push(LayerTrace {
                input_len: len,
                conv_len,
                factor,
                output_len,
            });
            len = output_len;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerTrace {
    pub input_len: usize,
    pub conv_len: usize,
    pub factor: usize,
    pub output_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    /// `[neurons, channels_in, kernel]`
    pub kernels: DiffTensor,
    pub bias: DiffTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    /// `[out, in]`
    pub weight: DiffTensor,
    pub bias: DiffTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchParams {
    /// `E`, `[n_mels, patch_embed_dim]`
    pub embedding: DiffTensor,
    /// `W`, `[1, patch_frames]`
    pub mixer: DiffTensor,
}

/// Encoder output for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct Representation {
    /// Encoder output, one value per last-layer channel.
    pub h: Vec<f64>,
    /// Projection head output.
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train { dropout_seed: u64 },
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub config: EncoderConfig,
    pub conv: Vec<ConvParams>,
    pub hidden: DenseParams,
    pub output: DenseParams,
    pub patch: Option<PatchParams>,
}

/// Parameter leaves of one model on one tape, in [`EncoderModel::params`] order.
#[derive(Debug, Clone)]
pub struct BoundEncoder {
    pub vars: Vec<Var>,
}

fn glorot(shape: Vec<usize>, fan_in: usize, fan_out: usize, seed: u64, index: u64) -> DiffTensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut rng = seed::rng(seed, seed::INIT, &[index]);
    let n = shape.iter().product();
    let values = (0..n).map(|_| rng.random_range(-a..a)).collect();
    DiffTensor::param(shape, values).expect("shape matches value count")
}

fn zeros_param(n: usize) -> DiffTensor {
    DiffTensor::zeros(vec![n]).with_grad()
}

pub fn init_encoder(config: &EncoderConfig, seed: u64) -> Result<EncoderModel> {
    config.validate()?;
    let mut idx = 0u64;
    let mut next = || {
        idx += 1;
        idx
    };
    let patch = (config.input_kind == InputKind::Spectrogram).then(|| PatchParams {
        embedding: glorot(
            vec![config.n_mels, config.patch_embed_dim],
            config.n_mels,
            config.patch_embed_dim,
            seed,
            next(),
        ),
        mixer: glorot(vec![1, config.patch_frames], config.patch_frames, 1, seed, next()),
    });
    let mut c_in = 1;
    let conv = config
        .layers
        .iter()
        .map(|l| {
            let p = ConvParams {
                kernels: glorot(
                    vec![l.neurons, c_in, l.kernel],
                    c_in * l.kernel,
                    l.neurons * l.kernel,
                    seed,
                    next(),
                ),
                bias: zeros_param(l.neurons),
            };
            c_in = l.neurons;
            p
        })
        .collect();
    let (hid, out) = (config.projection.hidden_width, config.projection.output_dim);
    let hidden = DenseParams {
        weight: glorot(vec![hid, c_in], c_in, hid, seed, next()),
        bias: zeros_param(hid),
    };
    let output = DenseParams {
        weight: glorot(vec![out, hid], hid, out, seed, next()),
        bias: zeros_param(out),
    };
    Ok(EncoderModel {
        config: config.clone(),
        conv,
        hidden,
        output,
        patch,
    })
}

impl EncoderModel {
    /// Parameters with stable names, patch front end first.
    pub fn params(&self) -> Vec<(String, &DiffTensor)> {
        let mut v = Vec::new();
        if let Some(p) = &self.patch {
            v.push(("patch.embedding".to_string(), &p.embedding));
            v.push(("patch.mixer".to_string(), &p.mixer));
        }
        for (i, c) in self.conv.iter().enumerate() {
            v.push((format!("conv{}.kernels", i + 1), &c.kernels));
            v.push((format!("conv{}.bias", i + 1), &c.bias));
        }
        v.push(("mlp.hidden.weight".into(), &self.hidden.weight));
        v.push(("mlp.hidden.bias".into(), &self.hidden.bias));
        v.push(("mlp.output.weight".into(), &self.output.weight));
        v.push(("mlp.output.bias".into(), &self.output.bias));
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut DiffTensor> {
        let mut v = Vec::new();
        if let Some(p) = &mut self.patch {
            v.push(&mut p.embedding);
            v.push(&mut p.mixer);
        }
        for c in &mut self.conv {
            v.push(&mut c.kernels);
            v.push(&mut c.bias);
        }
        v.push(&mut self.hidden.weight);
        v.push(&mut self.hidden.bias);
        v.push(&mut self.output.weight);
        v.push(&mut self.output.bias);
        v
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundEncoder {
        BoundEncoder {
            vars: self.params().into_iter().map(|(_, t)| tape.leaf(t)).collect(),
        }
    }

    /// Copy gradients of the last backward pass into the parameters.
    pub fn collect_grads(&mut self, tape: &Tape, bound: &BoundEncoder) {
        for (p, v) in self.params_mut().into_iter().zip(&bound.vars) {
            tape.write_grad(*v, p);
        }
    }

    fn patch_offset(&self) -> usize {
        if self.patch.is_some() {
            2
        } else {
            0
        }
    }

    fn expect_kind(&self, kind: InputKind) -> Result<()> {
        if self.config.input_kind == kind {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "encoder was built for {} input, not {kind}",
                self.config.input_kind
            )))
        }
    }

    /// Conv stack + projection for a `[batch, 1, len]` input. Returns
    /// `(h [batch, channels], z [batch, output_dim])`.
    pub fn encode(&self, tape: &mut Tape, bound: &BoundEncoder, input: Var, mode: Mode) -> Result<(Var, Var)> {
        let shape = tape.shape(input).to_vec();
        let [batch, 1, len] = shape[..] else {
            return Err(Error::Shape(format!("encoder input must be [batch, 1, len], got {shape:?}")));
        };
        let trace = self.config.layer_trace(len)?;
        let off = self.patch_offset();
        let mut x = input;
        for (i, t) in trace.iter().enumerate() {
            let (k, b) = (bound.vars[off + 2 * i], bound.vars[off + 2 * i + 1]);
            let y = tape.conv1d(x, k, b).map_err(|e| Error::Shape(format!("layer {}: {e}", i + 1)))?;
            let y = tape.relu(y);
            x = tape.subsample(y, t.factor)?;
        }
        let h = tape.reshape(x, vec![batch, self.config.representation_dim()])?;
        let mlp = off + 2 * self.conv.len();
        let hid = tape.dense(h, bound.vars[mlp], Some(bound.vars[mlp + 1]))?;
        let hid = tape.relu(hid);
        let hid = match mode {
            Mode::Train { dropout_seed } => tape.dropout(hid, self.config.dropout_p, true, dropout_seed)?,
            Mode::Eval => hid,
        };
        let z = tape.dense(hid, bound.vars[mlp + 2], Some(bound.vars[mlp + 3]))?;
        Ok((h, z))
    }

    /// Patch front end for a batch: `sums[b]` is the element-wise sum of
    /// input `b`'s patches (`n_mels x patch_frames`, row-major). Returns the
    /// `[batch, 1, patch_embed_dim]` encoder input.
    pub fn embed(&self, tape: &mut Tape, bound: &BoundEncoder, sums: &[Vec<f64>]) -> Result<Var> {
        self.expect_kind(InputKind::Spectrogram)?;
        let (mels, frames, dim) = (self.config.n_mels, self.config.patch_frames, self.config.patch_embed_dim);
        let mut stacked = Vec::with_capacity(sums.len() * mels * frames);
        for s in sums {
            if s.len() != mels * frames {
                return Err(Error::Shape(format!(
                    "patch sum holds {} values, expected {mels}x{frames}",
                    s.len()
                )));
            }
            stacked.extend_from_slice(s);
        }
        let batch = sums.len();
        let (e, w) = (bound.vars[0], bound.vars[1]);
        let s = tape.constant(vec![batch * mels, frames], stacked)?;
        let u = tape.dense(s, w, None)?;
        let u = tape.reshape(u, vec![batch, mels])?;
        let k = tape.matmul(u, e)?;
        let k = tape.relu(k);
        tape.reshape(k, vec![batch, 1, dim])
    }

    fn patch_sum(&self, patches: &[MelPatch]) -> Result<Vec<f64>> {
        let (mels, frames) = (self.config.n_mels, self.config.patch_frames);
        if patches.is_empty() {
            return Err(Error::Degenerate("need at least one patch".into()));
        }
        let mut sum = vec![0.0; mels * frames];
        for p in patches {
            if p.n_mels != mels || p.n_frames != frames || p.values.len() != mels * frames {
                return Err(Error::Shape(format!(
                    "patch is {}x{}, expected {mels}x{frames}",
                    p.n_mels, p.n_frames
                )));
            }
            sum.iter_mut().zip(&p.values).for_each(|(s, v)| *s += v);
        }
        Ok(sum)
    }

    /// Batched eval-mode representations of waveform segments (all the
    /// same length).
    pub fn represent_waveforms(&self, segments: &[&[f64]]) -> Result<Vec<Representation>> {
        self.expect_kind(InputKind::Waveform)?;
        let len = segments.first().map_or(0, |s| s.len());
        if segments.iter().any(|s| s.len() != len) {
            return Err(Error::Shape("waveform batch has unequal segment lengths".into()));
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let x = tape.constant(vec![segments.len(), 1, len], segments.concat())?;
        let (h, z) = self.encode(&mut tape, &bound, x, Mode::Eval)?;
        Ok(split_rows(&tape, h, z, segments.len()))
    }

    /// Batched eval-mode representations, one patch list per input.
    pub fn represent_patches(&self, inputs: &[&[MelPatch]]) -> Result<Vec<Representation>> {
        self.expect_kind(InputKind::Spectrogram)?;
        let sums = inputs.iter().map(|p| self.patch_sum(p)).collect::<Result<Vec<_>>>()?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let x = self.embed(&mut tape, &bound, &sums)?;
        let (h, z) = self.encode(&mut tape, &bound, x, Mode::Eval)?;
        Ok(split_rows(&tape, h, z, inputs.len()))
    }

    pub fn forward_waveform(&self, segment: &[f64]) -> Result<Representation> {
        Ok(self.represent_waveforms(&[segment])?.remove(0))
    }

    /// The 768-vector the patch front end feeds to the conv stack.
    pub fn embed_patches(&self, patches: &[MelPatch]) -> Result<Vec<f64>> {
        self.expect_kind(InputKind::Spectrogram)?;
        let sum = self.patch_sum(patches)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let k = self.embed(&mut tape, &bound, &[sum])?;
        Ok(tape.value(k).to_vec())
    }

    pub fn forward_patches(&self, patches: &[MelPatch]) -> Result<Representation> {
        Ok(self.represent_patches(&[patches])?.remove(0))
    }

    // -----------------------------------------------------------------
    // persistence

    pub fn to_container(&self, optimizer: Option<(&AdamState, &AdamConfig)>) -> Container {
        let mut tensors: Vec<NamedTensor> = self
            .params()
            .into_iter()
            .map(|(name, t)| NamedTensor {
                name,
                shape: t.shape.clone(),
                values: t.values.clone(),
            })
            .collect();
        let opt_meta = optimizer.map(|(state, cfg)| {
            if state.m.len() == tensors.len() {
                let names: Vec<(String, Vec<usize>)> =
                    tensors.iter().map(|t| (t.name.clone(), t.shape.clone())).collect();
                for ((name, shape), (m, v)) in names.iter().zip(state.m.iter().zip(&state.v)) {
                    tensors.push(NamedTensor {
                        name: format!("adam.m.{name}"),
                        shape: shape.clone(),
                        values: m.clone(),
                    });
                    tensors.push(NamedTensor {
                        name: format!("adam.v.{name}"),
                        shape: shape.clone(),
                        values: v.clone(),
                    });
                }
            }
            serde_json::json!({ "step": state.step, "config": cfg })
        });
        Container {
            meta: serde_json::json!({
                "kind": "encoder",
                "config": self.config,
                "optimizer": opt_meta,
            }),
            tensors,
        }
    }

    /// Rebuild a model (and optimizer state, if saved) from a container.
    pub fn from_container(c: &Container) -> Result<(Self, Option<(AdamState, AdamConfig)>)> {
        if c.meta.get("kind").and_then(|k| k.as_str()) != Some("encoder") {
            return Err(Error::Format("container does not hold an encoder".into()));
        }
        let config: EncoderConfig = serde_json::from_value(c.meta["config"].clone())
            .map_err(|e| Error::Format(format!("bad encoder config in checkpoint: {e}")))?;
        let mut model = init_encoder(&config, 0)?;
        let names: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();
        for (name, p) in names.iter().zip(model.params_mut()) {
            let t = c
                .get(name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor `{name}`")))?;
            if t.shape != p.shape {
                return Err(Error::Format(format!(
                    "tensor `{name}` has shape {:?}, config implies {:?}",
                    t.shape, p.shape
                )));
            }
            p.values.clone_from(&t.values);
        }
        let optimizer = match c.meta.get("optimizer") {
            Some(o) if !o.is_null() => {
                let cfg: AdamConfig = serde_json::from_value(o["config"].clone())
                    .map_err(|e| Error::Format(format!("bad optimizer config: {e}")))?;
                let step = o["step"].as_u64().unwrap_or(0);
                let moments = |prefix: &str| -> Option<Vec<Vec<f64>>> {
                    names
                        .iter()
                        .map(|n| c.get(&format!("adam.{prefix}.{n}")).map(|t| t.values.clone()))
                        .collect()
                };
                let state = match (moments("m"), moments("v")) {
                    (Some(m), Some(v)) => AdamState { step, m, v },
                    _ => AdamState::new(),
                };
                Some((state, cfg))
            }
            _ => None,
        };
        Ok((model, optimizer))
    }
}

fn split_rows(tape: &Tape, h: Var, z: Var, batch: usize) -> Vec<Representation> {
    let (hv, zv) = (tape.value(h), tape.value(z));
    let (hd, zd) = (hv.len() / batch, zv.len() / batch);
    (0..batch)
        .map(|b| Representation {
            h: hv[b * hd..(b + 1) * hd].to_vec(),
            z: zv[b * zd..(b + 1) * zd].to_vec(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_patch(rng: &mut ChaCha8Rng) -> MelPatch {
        MelPatch {
            values: (0..N_MELS * PATCH_FRAMES).map(|_| rng.random_range(-1.0..1.0)).collect(),
            n_mels: N_MELS,
            n_frames: PATCH_FRAMES,
            start_frame: 0,
        }
    }

    #[test]
    fn default_config_layout() {
        let c = EncoderConfig::default();
        let kernels: Vec<_> = c.layers.iter().map(|l| l.kernel).collect();
        let widths: Vec<_> = c.layers.iter().map(|l| l.neurons).collect();
        assert_eq!(kernels, [1, 9, 15, 4]);
        assert_eq!(widths, [64, 64, 32, 16]);
        assert_eq!(c.projection.output_dim, 128);
        assert!(c.layers[3].subsample.is_adaptive());
        c.validate().unwrap();
    }

    #[test]
    fn config_json_uses_adaptive_keyword() {
        let c = EncoderConfig::default();
        let j = serde_json::to_string(&c).unwrap();
        assert!(j.contains("\"adaptive\""), "{j}");
        let back: EncoderConfig = serde_json::from_str(&j).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn invalid_configs_list_every_violation() {
        let mut c = EncoderConfig::default();
        c.layers[1].subsample = Subsample::ADAPTIVE;
        c.layers[3].subsample = Subsample::Factor(2);
        c.dropout_p = 1.5;
        let Error::Config(v) = c.validate().unwrap_err() else { panic!() };
        assert_eq!(v.len(), 3, "{v:?}");
        let short = EncoderConfig {
            layers: vec![layer(4, 1, Subsample::ADAPTIVE)],
            ..EncoderConfig::default()
        };
        assert!(short.validate().is_err());
    }

    #[test]
    fn init_is_deterministic_and_glorot_scaled() {
        let c = EncoderConfig::default();
        let a = init_encoder(&c, 3).unwrap();
        assert_eq!(a, init_encoder(&c, 3).unwrap());
        assert_ne!(a, init_encoder(&c, 4).unwrap());
        // conv2: fan_in 64*9, fan_out 64*9
        let w = &a.conv[1].kernels.values;
        let bound = (6.0 / (2.0 * 576.0f64)).sqrt();
        assert!(w.len() >= 10_000);
        assert!(w.iter().all(|v| v.abs() <= bound));
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        assert!(mean.abs() <= 0.01 * bound, "mean {mean}");
        assert!(a.conv.iter().all(|c| c.bias.values.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn adaptive_layer_gives_fixed_h_dim() {
        let m = init_encoder(&EncoderConfig::default(), 1).unwrap();
        for len in [512, 2205, 3001] {
            let seg: Vec<f64> = (0..len).map(|i| (i as f64 * 0.37).sin()).collect();
            let r = m.forward_waveform(&seg).unwrap();
            assert_eq!(r.h.len(), 16);
            assert_eq!(r.z.len(), 128);
        }
    }

    #[test]
    fn zero_input_gives_zero_representation_at_init() {
        let m = init_encoder(&EncoderConfig::default(), 1).unwrap();
        let r = m.forward_waveform(&[0.0; 2205]).unwrap();
        assert!(r.h.iter().all(|&v| v == 0.0));
        assert!(r.z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_short_input_names_the_layer() {
        let m = init_encoder(&EncoderConfig::default(), 1).unwrap();
        let err = m.forward_waveform(&[0.1; 100]).unwrap_err();
        assert_eq!(err.category(), "shape");
        assert!(err.to_string().contains("layer 3"), "{err}");
    }

    #[test]
    fn layer_lengths_follow_the_length_formula() {
        // golden trace for 2205 samples, hand-checked against
        // floor((L - k + 1) / s)
        let trace = EncoderConfig::default().layer_trace(2205).unwrap();
        let got: Vec<_> = trace.iter().map(|t| (t.conv_len, t.factor, t.output_len)).collect();
        assert_eq!(got, [(2205, 4, 551), (543, 4, 135), (121, 4, 30), (27, 27, 1)]);
        let emb = EncoderConfig::default().layer_trace(768).unwrap();
        assert_eq!(emb[3].factor, 5);
    }

    #[test]
    fn golden_forward_is_reproducible() {
        let m = init_encoder(&EncoderConfig::default(), 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let seg: Vec<f64> = (0..2205).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = m.forward_waveform(&seg).unwrap();
        let b = m.forward_waveform(&seg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn embedding_closed_form_all_ones() {
        let mut m = init_encoder(&EncoderConfig::for_input(InputKind::Spectrogram), 1).unwrap();
        let p = m.patch.as_mut().unwrap();
        p.embedding.values.fill(1.0);
        p.mixer.values.fill(1.0);
        let ones = MelPatch {
            values: vec![1.0; N_MELS * PATCH_FRAMES],
            n_mels: N_MELS,
            n_frames: PATCH_FRAMES,
            start_frame: 0,
        };
        let k = m.embed_patches(&[ones.clone()]).unwrap();
        assert_eq!(k.len(), 768);
        assert!(k.iter().all(|&v| v == 19200.0));
        let zero = MelPatch {
            values: vec![0.0; N_MELS * PATCH_FRAMES],
            ..ones
        };
        assert!(m.embed_patches(&[zero.clone(), zero.clone()]).unwrap().iter().all(|&v| v == 0.0));
        let r = init_encoder(&EncoderConfig::for_input(InputKind::Spectrogram), 1)
            .unwrap()
            .forward_patches(&[zero])
            .unwrap();
        assert!(r.z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn embedding_matches_triple_loop() {
        let m = init_encoder(&EncoderConfig::for_input(InputKind::Spectrogram), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let patches: Vec<MelPatch> = (0..3).map(|_| random_patch(&mut rng)).collect();
        let got = m.embed_patches(&patches).unwrap();
        let p = m.patch.as_ref().unwrap();
        let (e, w) = (&p.embedding.values, &p.mixer.values);
        // naive: for each patch, P^T E (150 x 768), summed, then W on the left
        let mut acc = vec![0.0; PATCH_FRAMES * 768];
        for patch in &patches {
            for t in 0..PATCH_FRAMES {
                for d in 0..768 {
                    let mut s = 0.0;
                    for mel in 0..N_MELS {
                        s += patch.at(mel, t) * e[mel * 768 + d];
                    }
                    acc[t * 768 + d] += s;
                }
            }
        }
        for d in 0..768 {
            let v: f64 = (0..PATCH_FRAMES).map(|t| w[t] * acc[t * 768 + d]).sum();
            let expected = v.max(0.0);
            assert!((got[d] - expected).abs() <= 1e-9 * expected.abs().max(1.0), "dim {d}");
        }
    }

    #[test]
    fn patch_order_does_not_matter() {
        let m = init_encoder(&EncoderConfig::for_input(InputKind::Spectrogram), 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let patches: Vec<MelPatch> = (0..4).map(|_| random_patch(&mut rng)).collect();
        let a = m.forward_patches(&patches).unwrap();
        let rev: Vec<MelPatch> = patches.iter().rev().cloned().collect();
        let b = m.forward_patches(&rev).unwrap();
        for (x, y) in a.z.iter().zip(&b.z) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
        assert_eq!(a.z.len(), 128);
        assert_eq!(m.forward_patches(&patches[..1]).unwrap().z.len(), 128);
    }

    #[test]
    fn wrong_patch_shape_and_wrong_kind() {
        let m = init_encoder(&EncoderConfig::for_input(InputKind::Spectrogram), 8).unwrap();
        let bad = MelPatch {
            values: vec![0.0; 128 * 100],
            n_mels: 128,
            n_frames: 100,
            start_frame: 0,
        };
        assert_eq!(m.embed_patches(&[bad]).unwrap_err().category(), "shape");
        assert_eq!(m.forward_waveform(&[0.0; 1000]).unwrap_err().category(), "contract");
    }

    #[test]
    fn container_round_trip() {
        let m = init_encoder(&EncoderConfig::for_input(InputKind::Spectrogram), 2).unwrap();
        let state = AdamState {
            step: 3,
            m: m.params().iter().map(|(_, t)| vec![0.5; t.numel()]).collect(),
            v: m.params().iter().map(|(_, t)| vec![0.25; t.numel()]).collect(),
        };
        let c = m.to_container(Some((&state, &AdamConfig::default())));
        let bytes = c.to_bytes().unwrap();
        let back = Container::from_bytes(&bytes).unwrap();
        let (m2, opt) = EncoderModel::from_container(&back).unwrap();
        assert_eq!(m2, m);
        let (s2, cfg) = opt.unwrap();
        assert_eq!(s2, state);
        assert_eq!(cfg, AdamConfig::default());
    }
}
