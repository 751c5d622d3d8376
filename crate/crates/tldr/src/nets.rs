//! Task networks: a four-stage convolutional encoder, a skip-connected
//! segmentation decoder, and the checkpoint format that round-trips them
//! together with optimizer state.
//!
//! A frozen, seed-initialized clone of the encoder acts as the fixed
//! reference model for the texture regularization loss; it never receives
//! parameter updates and its outputs are detached from gradients.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{conv, ops, serialize, watch, Tensor};
use crate::numeric;
use crate::{Error, Result};

/// The number of encoder stages; the per-layer texture losses sum over
/// exactly these feature maps.
pub const NUM_STAGES: usize = 4;

const KERNEL: usize = 3;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EncoderConfig {
    pub in_channels: usize,
    /// Output channels per stage; each stage halves the spatial dims.
    pub channels: Vec<usize>,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            in_channels: 3,
            channels: vec![8, 16, 32, 64],
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn with_seed(seed: u64) -> Self {
        EncoderConfig {
            seed,
            ..EncoderConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.channels.len() != NUM_STAGES {
            return Err(Error::config(format!(
                "encoder needs exactly {NUM_STAGES} stages, got {}",
                self.channels.len()
            )));
        }
        if self.in_channels == 0 || self.channels.iter().any(|&c| c == 0) {
            return Err(Error::config("channel counts must be positive"));
        }
        Ok(())
    }
}

/// One conv layer's parameters.
#[derive(Clone)]
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ConvLayer {
    /// He fan-in initialization, deterministic in the RNG state.
    fn init(rng: &mut ChaCha8Rng, out_ch: usize, in_ch: usize) -> ConvLayer {
        let fan_in = (in_ch * KERNEL * KERNEL) as f64;
        let std = (2.0 / fan_in).sqrt();
        let n = out_ch * in_ch * KERNEL * KERNEL;
        let data: Vec<f64> = (0..n).map(|_| numeric::normal(rng) * std).collect();
        ConvLayer {
            weight: Tensor::from_vec(vec![out_ch, in_ch, KERNEL, KERNEL], data)
                .expect("finite init"),
            bias: Tensor::zeros(&[out_ch]),
        }
    }
}

/// Ordered per-layer feature maps produced by one encoder pass. Layer `l`
/// (zero-based) has shape channels[l] x H/2^(l+1) x W/2^(l+1).
#[derive(Clone)]
pub struct FeatureStack {
    pub layers: Vec<Tensor>,
}

impl FeatureStack {
    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

#[derive(Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    stages: Vec<ConvLayer>,
    frozen: bool,
}

/// Deterministically initialize an encoder from its config seed.
pub fn build_encoder(config: &EncoderConfig) -> Result<Encoder> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(numeric::derive_seed(config.seed, "encoder-init"));
    let mut stages = Vec::with_capacity(NUM_STAGES);
    let mut in_ch = config.in_channels;
    for &out_ch in &config.channels {
        stages.push(ConvLayer::init(&mut rng, out_ch, in_ch));
        in_ch = out_ch;
    }
    Ok(Encoder {
        config: config.clone(),
        stages,
        frozen: false,
    })
}

impl Encoder {
    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// A frozen copy: forward passes stay detached from gradients and
    /// parameter updates are rejected.
    pub fn frozen_copy(&self) -> Encoder {
        Encoder {
            config: self.config.clone(),
            stages: self.stages.clone(),
            frozen: true,
        }
    }

    /// Copy of this encoder whose parameters are watched on the active tape,
    /// so backward produces gradients for them.
    pub fn tracked(&self) -> Result<Encoder> {
        if self.frozen {
            return Err(Error::contract("cannot track a frozen encoder"));
        }
        let stages = self
            .stages
            .iter()
            .map(|s| {
                Ok(ConvLayer {
                    weight: watch(&s.weight)?,
                    bias: watch(&s.bias)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Encoder {
            config: self.config.clone(),
            stages,
            frozen: false,
        })
    }

    /// Parameters in a stable order (stage-major, weight before bias).
    pub fn params(&self) -> Vec<&Tensor> {
        self.stages
            .iter()
            .flat_map(|s| [&s.weight, &s.bias])
            .collect()
    }

    /// Replace all parameters, keeping order. Frozen encoders reject updates.
    pub fn set_params(&mut self, new: Vec<Tensor>) -> Result<()> {
        if self.frozen {
            return Err(Error::contract("frozen encoder rejects parameter updates"));
        }
        if new.len() != self.stages.len() * 2 {
            return Err(Error::contract(format!(
                "expected {} parameter tensors, got {}",
                self.stages.len() * 2,
                new.len()
            )));
        }
        for (stage, pair) in self.stages.iter_mut().zip(new.chunks_exact(2)) {
            if pair[0].shape() != stage.weight.shape() || pair[1].shape() != stage.bias.shape() {
                return Err(Error::Dimension {
                    op: "set_params",
                    lhs: stage.weight.shape().to_vec(),
                    rhs: pair[0].shape().to_vec(),
                });
            }
            stage.weight = pair[0].clone();
            stage.bias = pair[1].clone();
        }
        Ok(())
    }

    fn named_tensors(&self, prefix: &str) -> Vec<(String, Tensor)> {
        self.stages
            .iter()
            .enumerate()
            .flat_map(|(i, s)| {
                [
                    (format!("{prefix}.stage{i}.weight"), s.weight.clone()),
                    (format!("{prefix}.stage{i}.bias"), s.bias.clone()),
                ]
            })
            .collect()
    }

    fn load_tensors(&mut self, tensors: Vec<Tensor>) -> Result<()> {
        let frozen = self.frozen;
        self.frozen = false;
        let res = self.set_params(tensors);
        self.frozen = frozen;
        res
    }
}

/// Run the encoder: each stage halves the spatial dims (2x2 average pool)
/// then applies a padded 3x3 conv and relu. Returns all stage outputs.
pub fn encode(encoder: &Encoder, image: &Tensor) -> Result<FeatureStack> {
    let &[c, h, w] = image.shape() else {
        return Err(Error::Shape {
            op: "encode",
            shape: image.shape().to_vec(),
            msg: "expected a C x H x W image".into(),
        });
    };
    if c != encoder.config.in_channels {
        return Err(Error::Dimension {
            op: "encode",
            lhs: vec![encoder.config.in_channels],
            rhs: vec![c],
        });
    }
    let div = 1 << NUM_STAGES;
    if h % div != 0 || w % div != 0 {
        return Err(Error::Shape {
            op: "encode",
            shape: image.shape().to_vec(),
            msg: format!("spatial dims must be divisible by {div}"),
        });
    }
    // A frozen encoder's outputs must stay detached even when the caller is
    // recording; its parameters are plain constants, so the only tracked
    // input could be the image itself.
    let image = if encoder.frozen {
        image.detach()
    } else {
        image.clone()
    };
    let mut x = image;
    let mut layers = Vec::with_capacity(NUM_STAGES);
    for stage in &encoder.stages {
        let pooled = conv::avg_pool2(&x)?;
        let convolved = conv::conv2d(&pooled, &stage.weight, Some(&stage.bias), 1, 1)?;
        x = ops::relu(&convolved)?;
        layers.push(x.clone());
    }
    Ok(FeatureStack { layers })
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DecoderConfig {
    pub num_classes: usize,
    pub seed: u64,
}

/// Segmentation head: a 3x3 conv on the deepest feature map, bilinear
/// upsampling to the stage-2 resolution where the skip connection is added,
/// then a 3x3 conv to class logits upsampled to input resolution.
#[derive(Clone)]
pub struct Decoder {
    pub config: DecoderConfig,
    channels: Vec<usize>,
    head: ConvLayer,
    classify: ConvLayer,
}

impl Decoder {
    pub fn new(config: &DecoderConfig, encoder_config: &EncoderConfig) -> Result<Decoder> {
        encoder_config.validate()?;
        if config.num_classes < 2 {
            return Err(Error::config("decoder needs at least two classes"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(numeric::derive_seed(config.seed, "decoder-init"));
        let deep = encoder_config.channels[NUM_STAGES - 1];
        let skip = encoder_config.channels[1];
        Ok(Decoder {
            config: config.clone(),
            channels: encoder_config.channels.clone(),
            head: ConvLayer::init(&mut rng, skip, deep),
            classify: ConvLayer::init(&mut rng, config.num_classes, skip),
        })
    }

    pub fn tracked(&self) -> Result<Decoder> {
        Ok(Decoder {
            config: self.config.clone(),
            channels: self.channels.clone(),
            head: ConvLayer {
                weight: watch(&self.head.weight)?,
                bias: watch(&self.head.bias)?,
            },
            classify: ConvLayer {
                weight: watch(&self.classify.weight)?,
                bias: watch(&self.classify.bias)?,
            },
        })
    }

    pub fn params(&self) -> Vec<&Tensor> {
        vec![
            &self.head.weight,
            &self.head.bias,
            &self.classify.weight,
            &self.classify.bias,
        ]
    }

    pub fn set_params(&mut self, new: Vec<Tensor>) -> Result<()> {
        if new.len() != 4 {
            return Err(Error::contract(format!(
                "expected 4 decoder tensors, got {}",
                new.len()
            )));
        }
        for (slot, t) in [
            &mut self.head.weight,
            &mut self.head.bias,
            &mut self.classify.weight,
            &mut self.classify.bias,
        ]
        .into_iter()
        .zip(new)
        {
            if slot.shape() != t.shape() {
                return Err(Error::Dimension {
                    op: "set_params",
                    lhs: slot.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            *slot = t;
        }
        Ok(())
    }

    fn named_tensors(&self, prefix: &str) -> Vec<(String, Tensor)> {
        vec![
            (format!("{prefix}.head.weight"), self.head.weight.clone()),
            (format!("{prefix}.head.bias"), self.head.bias.clone()),
            (
                format!("{prefix}.classify.weight"),
                self.classify.weight.clone(),
            ),
            (
                format!("{prefix}.classify.bias"),
                self.classify.bias.clone(),
            ),
        ]
    }
}

/// Decode a feature stack to K x H x W logits at input resolution.
pub fn decode(decoder: &Decoder, features: &FeatureStack) -> Result<Tensor> {
    if features.len() != NUM_STAGES {
        return Err(Error::contract(format!(
            "decoder expects {NUM_STAGES} feature maps, got {}",
            features.len()
        )));
    }
    let deepest = &features.layers[NUM_STAGES - 1];
    let skip = &features.layers[1];
    let expected_deep = decoder.channels[NUM_STAGES - 1];
    let expected_skip = decoder.channels[1];
    if deepest.shape().first() != Some(&expected_deep)
        || skip.shape().first() != Some(&expected_skip)
    {
        return Err(Error::Dimension {
            op: "decode",
            lhs: vec![expected_deep, expected_skip],
            rhs: vec![deepest.shape()[0], skip.shape()[0]],
        });
    }
    let h = conv::conv2d(deepest, &decoder.head.weight, Some(&decoder.head.bias), 1, 1)?;
    let up = conv::bilinear_upsample(&h, 4)?;
    if up.shape() != skip.shape() {
        return Err(Error::Dimension {
            op: "decode",
            lhs: up.shape().to_vec(),
            rhs: skip.shape().to_vec(),
        });
    }
    let fused = ops::relu(&ops::add(&up, skip)?)?;
    let logits = conv::conv2d(
        &fused,
        &decoder.classify.weight,
        Some(&decoder.classify.bias),
        1,
        1,
    )?;
    conv::bilinear_upsample(&logits, 4)
}

// ── checkpointing ────────────────────────────────────────────────────

const MAGIC: &[u8; 8] = b"TLDRCKPT";
const VERSION: u32 = 1;

/// Everything a resumed run needs: both models, the frozen reference, and
/// opaque optimizer moment buffers.
pub struct CheckpointData {
    pub iteration: u64,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub reference: Encoder,
    pub optimizer: Vec<(String, Tensor)>,
    /// Run seeds, recorded for provenance.
    pub seeds: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    iteration: u64,
    encoder: EncoderConfig,
    decoder: DecoderConfig,
    reference: EncoderConfig,
    seeds: serde_json::Value,
    tensors: Vec<String>,
}

pub fn save_checkpoint(data: &CheckpointData, path: &Path) -> Result<()> {
    let mut tensors: Vec<(String, Tensor)> = Vec::new();
    tensors.extend(data.encoder.named_tensors("task"));
    tensors.extend(data.decoder.named_tensors("decoder"));
    tensors.extend(data.reference.named_tensors("reference"));
    tensors.extend(data.optimizer.iter().cloned());

    let manifest = Manifest {
        version: VERSION,
        iteration: data.iteration,
        encoder: data.encoder.config.clone(),
        decoder: data.decoder.config.clone(),
        reference: data.reference.config.clone(),
        seeds: data.seeds.clone(),
        tensors: tensors.iter().map(|(n, _)| n.clone()).collect(),
    };
    let manifest_bytes = serde_json::to_vec(&manifest)?;

    let file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(manifest_bytes.len() as u32).to_le_bytes())
        .map_err(io_err)?;
    w.write_all(&manifest_bytes).map_err(io_err)?;
    for (_, t) in &tensors {
        serialize::write_tensor(&mut w, t).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointData> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = std::io::BufReader::new(file);
    let mut offset = 0u64;

    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic, &mut offset)?;
    if &magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "not a checkpoint file (bad magic)".into(),
        });
    }
    let mut version = [0u8; 4];
    read_exact(&mut r, &mut version, &mut offset)?;
    let version = u32::from_le_bytes(version);
    if version != VERSION {
        return Err(Error::Incompatible {
            found: version,
            expected: VERSION,
        });
    }
    let mut len = [0u8; 4];
    read_exact(&mut r, &mut len, &mut offset)?;
    let manifest_len = u32::from_le_bytes(len) as usize;
    let mut manifest_bytes = vec![0u8; manifest_len];
    read_exact(&mut r, &mut manifest_bytes, &mut offset)?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes).map_err(|e| Error::Format {
        offset,
        msg: format!("bad manifest: {e}"),
    })?;

    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for name in &manifest.tensors {
        let t = serialize::read_tensor(&mut r, &mut offset)?;
        tensors.push((name.clone(), t));
    }

    let mut encoder = build_encoder(&manifest.encoder)?;
    let mut decoder = Decoder::new(&manifest.decoder, &manifest.encoder)?;
    let mut reference = build_encoder(&manifest.reference)?;

    let take = |prefix: &str, tensors: &[(String, Tensor)]| -> Vec<Tensor> {
        tensors
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.clone())
            .collect()
    };
    encoder.load_tensors(take("task.", &tensors))?;
    decoder.set_params(take("decoder.", &tensors))?;
    reference.load_tensors(take("reference.", &tensors))?;
    let reference = reference.frozen_copy();
    let optimizer: Vec<(String, Tensor)> = tensors
        .into_iter()
        .filter(|(n, _)| n.starts_with("opt."))
        .collect();

    Ok(CheckpointData {
        iteration: manifest.iteration,
        encoder,
        decoder,
        reference,
        optimizer,
        seeds: manifest.seeds,
    })
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], offset: &mut u64) -> Result<()> {
    r.read_exact(buf).map_err(|e| Error::Format {
        offset: *offset,
        msg: format!("truncated checkpoint: {e}"),
    })?;
    *offset += buf.len() as u64;
    Ok(())
}
