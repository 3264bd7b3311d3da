//! Tiny U-shaped segmentation network with a contrastive projection head and a
//! per-pixel projection layer.
//!
//! | stage        | layers                                  | output            |
//! |--------------|-----------------------------------------|-------------------|
//! | down1        | conv3×3 1→16, conv3×3 16→16             | skip, H           |
//! | down2        | pool, conv3×3 16→32, conv3×3 32→32       | skip, H/2         |
//! | down3        | pool, conv3×3 32→64, conv3×3 64→64       | skip, H/4         |
//! | bottleneck   | pool, conv3×3 64→128, conv3×3 128→128    | H/8               |
//! | head         | avg-pool, fc 128→128, relu, fc 128→64, l2 | embedding         |
//! | up3          | up, cat(64), conv 192→64, conv 64→64     | H/4               |
//! | up2          | up, cat(32), conv 96→32, conv 32→32      | H/2               |
//! | up1          | up, cat(16), conv 48→16, conv 16→16      | features `e`, H   |
//! | out          | conv1×1 16→classes                       | logits            |
//! | proj         | conv1×1 16→32, linear                    | projected features|
//!
//! Every 3×3 conv is padded by one and followed by relu.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorgrad::{Real, Tape, Tensor, Var};

use crate::error::{NetError, Result};
use crate::params::{Bound, ModelParams};

pub const ENCODER: &str = "encoder.";
pub const HEAD: &str = "head.";
pub const DECODER: &str = "decoder.";
pub const OUTPUT: &str = "out.";
pub const PROJECTION: &str = "proj.";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UNetConfig {
    /// Output classes including background.
    pub classes: usize,
    pub widths: [usize; 3],
    pub bottleneck: usize,
    pub head_hidden: usize,
    pub embed_dim: usize,
    pub proj_dim: usize,
}

impl UNetConfig {
    pub fn new(foreground_classes: usize) -> Self {
        UNetConfig {
            classes: foreground_classes + 1,
            widths: [16, 32, 64],
            bottleneck: 128,
            head_hidden: 128,
            embed_dim: 64,
            proj_dim: 32,
        }
    }

    /// (name, shape, fan_in) for every parameter of the full model.
    fn layout(&self) -> Vec<(String, Vec<usize>, usize)> {
        let mut out = Vec::new();
        let mut conv = |name: &str, cin: usize, cout: usize, k: usize| {
            out.push((format!("{name}.weight"), vec![cout, cin, k, k], cin * k * k));
            out.push((format!("{name}.bias"), vec![cout], cin * k * k));
        };
        let [w1, w2, w3] = self.widths;
        let b = self.bottleneck;
        conv("encoder.down1.conv1", 1, w1, 3);
        conv("encoder.down1.conv2", w1, w1, 3);
        conv("encoder.down2.conv1", w1, w2, 3);
        conv("encoder.down2.conv2", w2, w2, 3);
        conv("encoder.down3.conv1", w2, w3, 3);
        conv("encoder.down3.conv2", w3, w3, 3);
        conv("encoder.bottleneck.conv1", w3, b, 3);
        conv("encoder.bottleneck.conv2", b, b, 3);
        conv("decoder.up3.conv1", b + w3, w3, 3);
        conv("decoder.up3.conv2", w3, w3, 3);
        conv("decoder.up2.conv1", w3 + w2, w2, 3);
        conv("decoder.up2.conv2", w2, w2, 3);
        conv("decoder.up1.conv1", w2 + w1, w1, 3);
        conv("decoder.up1.conv2", w1, w1, 3);
        conv("out", w1, self.classes, 1);
        conv("proj", w1, self.proj_dim, 1);
        let mut linear = |name: &str, i: usize, o: usize| {
            out.push((format!("{name}.weight"), vec![i, o], i));
            out.push((format!("{name}.bias"), vec![o], i));
        };
        linear("head.fc1", b, self.head_hidden);
        linear("head.fc2", self.head_hidden, self.embed_dim);
        out
    }

    /// He-uniform weights, zero biases, for every parameter whose name starts with one of `prefixes`.
    pub fn init<T: Real>(&self, prefixes: &[&str], seed: u64) -> ModelParams<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::new();
        let mut layout = self.layout();
        layout.sort_by(|a, b| a.0.cmp(&b.0));
        for (name, shape, fan_in) in layout {
            if !prefixes.iter().any(|p| name.starts_with(p)) {
                continue;
            }
            let t = if name.ends_with(".bias") {
                Tensor::zeros(shape)
            } else {
                let bound = (6.0 / fan_in as f64).sqrt();
                Tensor::from_fn(shape, |_| T::of(rng.gen_range(-bound..bound)))
            };
            params.insert(name, t);
        }
        params
    }

    pub fn init_all<T: Real>(&self, seed: u64) -> ModelParams<T> {
        self.init(&[ENCODER, HEAD, DECODER, OUTPUT, PROJECTION], seed)
    }

    /// Names of every parameter under `prefix`.
    pub fn names(&self, prefix: &str) -> Vec<String> {
        let mut v: Vec<String> = self
            .layout()
            .into_iter()
            .map(|(n, _, _)| n)
            .filter(|n| n.starts_with(prefix))
            .collect();
        v.sort();
        v
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    pub bottleneck: Var,
    /// Full, half and quarter resolution features.
    pub skips: [Var; 3],
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderOutput {
    /// Full-resolution features from the last decoder block.
    pub features: Var,
    pub logits: Var,
}

fn conv_relu<T: Real>(tape: &mut Tape<T>, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let w = p.var(&format!("{name}.weight"))?;
    let b = p.var(&format!("{name}.bias"))?;
    let y = tape.conv2d(x, w, 1, 1)?;
    let y = tape.add_bias(y, b)?;
    Ok(tape.relu(y))
}

fn pointwise<T: Real>(tape: &mut Tape<T>, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let w = p.var(&format!("{name}.weight"))?;
    let b = p.var(&format!("{name}.bias"))?;
    let y = tape.conv2d(x, w, 1, 0)?;
    Ok(tape.add_bias(y, b)?)
}

fn linear<T: Real>(tape: &mut Tape<T>, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let w = p.var(&format!("{name}.weight"))?;
    let b = p.var(&format!("{name}.bias"))?;
    let y = tape.matmul(x, w)?;
    Ok(tape.add_bias(y, b)?)
}

pub fn encoder_forward<T: Real>(tape: &mut Tape<T>, p: &Bound, images: Var) -> Result<EncoderOutput> {
    let shape = tape.shape(images).to_vec();
    let [_, c, h, w] = shape[..] else {
        return Err(NetError::InputShape(shape));
    };
    if c != 1 {
        return Err(NetError::InputShape(shape));
    }
    if h % 8 != 0 || w % 8 != 0 || h == 0 || w == 0 {
        return Err(NetError::Indivisible { height: h, width: w });
    }
    let x = conv_relu(tape, p, "encoder.down1.conv1", images)?;
    let s1 = conv_relu(tape, p, "encoder.down1.conv2", x)?;
    let x = tape.max_pool2(s1)?;
    let x = conv_relu(tape, p, "encoder.down2.conv1", x)?;
    let s2 = conv_relu(tape, p, "encoder.down2.conv2", x)?;
    let x = tape.max_pool2(s2)?;
    let x = conv_relu(tape, p, "encoder.down3.conv1", x)?;
    let s3 = conv_relu(tape, p, "encoder.down3.conv2", x)?;
    let x = tape.max_pool2(s3)?;
    let x = conv_relu(tape, p, "encoder.bottleneck.conv1", x)?;
    let bottleneck = conv_relu(tape, p, "encoder.bottleneck.conv2", x)?;
    Ok(EncoderOutput {
        bottleneck,
        skips: [s1, s2, s3],
    })
}

/// Global average pool, two-layer MLP, unit-norm embedding per image.
pub fn projection_head_forward<T: Real>(tape: &mut Tape<T>, p: &Bound, bottleneck: Var) -> Result<Var> {
    let pooled = tape.mean_axes(bottleneck, &[2, 3])?;
    let h = linear(tape, p, "head.fc1", pooled)?;
    let h = tape.relu(h);
    let z = linear(tape, p, "head.fc2", h)?;
    Ok(tape.l2_normalize(z, 1)?)
}

pub fn decoder_forward<T: Real>(tape: &mut Tape<T>, p: &Bound, enc: &EncoderOutput) -> Result<DecoderOutput> {
    let mut x = enc.bottleneck;
    for (stage, skip) in [("up3", enc.skips[2]), ("up2", enc.skips[1]), ("up1", enc.skips[0])] {
        let up = tape.upsample2(x)?;
        let cat = tape.concat_channels(&[up, skip])?;
        let y = conv_relu(tape, p, &format!("decoder.{stage}.conv1"), cat)?;
        x = conv_relu(tape, p, &format!("decoder.{stage}.conv2"), y)?;
    }
    let logits = pointwise(tape, p, "out", x)?;
    Ok(DecoderOutput {
        features: x,
        logits,
    })
}

/// Linear 1×1 projection of decoder features to the mask-center space.
pub fn projection_layer_forward<T: Real>(tape: &mut Tape<T>, p: &Bound, features: Var) -> Result<Var> {
    pointwise(tape, p, "proj", features)
}

/// Encoder plus decoder in one call.
pub fn segment_forward<T: Real>(tape: &mut Tape<T>, p: &Bound, images: Var) -> Result<(EncoderOutput, DecoderOutput)> {
    let enc = encoder_forward(tape, p, images)?;
    let dec = decoder_forward(tape, p, &enc)?;
    Ok((enc, dec))
}
