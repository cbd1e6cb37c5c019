//! The three trainable sub-networks: feature extractor, discriminator and
//! classifier. Parameters live in a [`ParamSet`]; forward passes bind them as
//! tape leaves each step.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops::{affine, apply_dropout_mask, conv1d_causal, leaky_relu};
use crate::params::{init_uniform, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// One causal conv layer of the extractor.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub out_channels: usize,
    pub kernel: usize,
    pub dilation: usize,
}

/// Feature extractor architecture: a stack of causal dilated conv layers with
/// relu, mean pooling over time, and an affine head to dimension `d`.
#[derive(Debug, Clone)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub layers: Vec<ConvLayer>,
    pub out_dim: usize,
    pub dropout: f64,
}

impl EncoderConfig {
    /// Desk-scale default: 2 causal conv layers, kernel 5, dilations 1 and 2.
    pub fn desk(in_channels: usize, hidden: usize, out_dim: usize) -> Self {
        Self {
            in_channels,
            layers: vec![
                ConvLayer {
                    out_channels: hidden,
                    kernel: 5,
                    dilation: 1,
                },
                ConvLayer {
                    out_channels: hidden,
                    kernel: 5,
                    dilation: 2,
                },
            ],
            out_dim,
            dropout: 0.0,
        }
    }

    /// Full-scale preset matching the 4-layer, 128-hidden TCN family.
    pub fn full(in_channels: usize) -> Self {
        Self {
            in_channels,
            layers: (0..4)
                .map(|i| ConvLayer {
                    out_channels: 128,
                    kernel: 5,
                    dilation: 1 << i,
                })
                .collect(),
            out_dim: 128,
            dropout: 0.2,
        }
    }

    /// Minimum input length the conv stack can see without degenerating to
    /// all-padding taps.
    pub fn receptive_field(&self) -> usize {
        1 + self
            .layers
            .iter()
            .map(|l| (l.kernel - 1) * l.dilation)
            .sum::<usize>()
    }

    pub fn init(&self, rng: &mut ChaCha8Rng) -> ParamSet {
        let mut set = ParamSet::new();
        let mut in_ch = self.in_channels;
        for (i, layer) in self.layers.iter().enumerate() {
            let fan_in = in_ch * layer.kernel;
            set.insert(
                &format!("fe.conv{i}.w"),
                init_uniform(rng, vec![fan_in, layer.out_channels], fan_in),
            );
            set.insert(
                &format!("fe.conv{i}.b"),
                init_uniform(rng, vec![layer.out_channels], fan_in),
            );
            in_ch = layer.out_channels;
        }
        set.insert(
            "fe.out.w",
            init_uniform(rng, vec![in_ch, self.out_dim], in_ch),
        );
        set.insert("fe.out.b", init_uniform(rng, vec![self.out_dim], in_ch));
        set
    }
}

/// Parameter leaves bound onto a tape for one step.
pub struct BoundParams {
    map: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn bind(tape: &mut Tape, params: &ParamSet, requires_grad: bool) -> Self {
        let mut map = BTreeMap::new();
        for (name, t) in params.iter() {
            map.insert(name.to_string(), tape.leaf(t, requires_grad));
        }
        Self { map }
    }

    pub fn get(&self, name: &str) -> Var {
        *self
            .map
            .get(name)
            .unwrap_or_else(|| panic!("missing param {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.map.iter().map(|(n, v)| (n.as_str(), *v))
    }
}

fn dropout_mask(rng: &mut ChaCha8Rng, shape: Vec<usize>, rate: f64) -> Tensor {
    let keep = 1.0 - rate;
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            if rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// `f = FE(x)` for `x: [batch, T, D]` -> `[batch, d]`.
///
/// Training mode draws fresh dropout masks from `rng`; eval mode is a pure
/// function of the parameters.
pub fn encode(
    cfg: &EncoderConfig,
    bound: &BoundParams,
    tape: &mut Tape,
    x: Var,
    train: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 3 || shape[2] != cfg.in_channels {
        return Err(Error::ShapeMismatch {
            op: "encode",
            lhs: shape,
            rhs: vec![0, 0, cfg.in_channels],
        });
    }
    if shape[1] < cfg.receptive_field() {
        return Err(Error::Contract(format!(
            "input length {} below receptive field {}",
            shape[1],
            cfg.receptive_field()
        )));
    }
    let mut h = x;
    let mut in_ch = cfg.in_channels;
    for (i, layer) in cfg.layers.iter().enumerate() {
        let w = bound.get(&format!("fe.conv{i}.w"));
        let b = bound.get(&format!("fe.conv{i}.b"));
        let y = conv1d_causal(tape, h, w, b, in_ch, layer.kernel, layer.dilation)?;
        h = tape.relu(y);
        if train && cfg.dropout > 0.0 {
            let mask = dropout_mask(rng, tape.shape(h).to_vec(), cfg.dropout);
            h = apply_dropout_mask(tape, h, &mask)?;
        }
        in_ch = layer.out_channels;
    }
    let pooled = tape.mean_time(h)?;
    affine(tape, pooled, bound.get("fe.out.w"), bound.get("fe.out.b"))
}

/// Discriminator architecture: two affine layers with a leaky rectifier.
#[derive(Debug, Clone)]
pub struct DiscriminatorConfig {
    pub in_dim: usize,
    pub hidden: usize,
}

impl DiscriminatorConfig {
    pub fn init(&self, rng: &mut ChaCha8Rng) -> ParamSet {
        let mut set = ParamSet::new();
        set.insert(
            "disc.w1",
            init_uniform(rng, vec![self.in_dim, self.hidden], self.in_dim),
        );
        set.insert("disc.b1", init_uniform(rng, vec![self.hidden], self.in_dim));
        set.insert(
            "disc.w2",
            init_uniform(rng, vec![self.hidden, 1], self.hidden),
        );
        set.insert("disc.b2", init_uniform(rng, vec![1], self.hidden));
        set
    }
}

/// `D(f)` for `f: [batch, d]` -> `[batch]` strictly in (0, 1).
pub fn discriminate(
    cfg: &DiscriminatorConfig,
    bound: &BoundParams,
    tape: &mut Tape,
    f: Var,
) -> Result<Var> {
    let shape = tape.shape(f).to_vec();
    if shape.len() != 2 || shape[1] != cfg.in_dim {
        return Err(Error::ShapeMismatch {
            op: "discriminate",
            lhs: shape,
            rhs: vec![0, cfg.in_dim],
        });
    }
    let batch = shape[0];
    let h = affine(tape, f, bound.get("disc.w1"), bound.get("disc.b1"))?;
    let h = leaky_relu(tape, h, 0.2)?;
    let logits = affine(tape, h, bound.get("disc.w2"), bound.get("disc.b2"))?;
    let p = tape.sigmoid(logits);
    tape.reshape(p, vec![batch])
}

/// Classifier architecture: two affine layers, relu, dropout on the hidden
/// activations.
#[derive(Debug, Clone)]
pub struct ClassifierConfig {
    pub in_dim: usize,
    pub hidden: usize,
    pub n_classes: usize,
    pub dropout: f64,
}

impl ClassifierConfig {
    pub fn init(&self, rng: &mut ChaCha8Rng) -> ParamSet {
        let mut set = ParamSet::new();
        set.insert(
            "clf.w1",
            init_uniform(rng, vec![self.in_dim, self.hidden], self.in_dim),
        );
        set.insert("clf.b1", init_uniform(rng, vec![self.hidden], self.in_dim));
        set.insert(
            "clf.w2",
            init_uniform(rng, vec![self.hidden, self.n_classes], self.hidden),
        );
        set.insert("clf.b2", init_uniform(rng, vec![self.n_classes], self.hidden));
        set
    }
}

/// `CLF(f)` -> logits `[batch, n_c]`.
pub fn classify(
    cfg: &ClassifierConfig,
    bound: &BoundParams,
    tape: &mut Tape,
    f: Var,
    train: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Var> {
    let shape = tape.shape(f).to_vec();
    if shape.len() != 2 || shape[1] != cfg.in_dim {
        return Err(Error::ShapeMismatch {
            op: "classify",
            lhs: shape,
            rhs: vec![0, cfg.in_dim],
        });
    }
    let h = affine(tape, f, bound.get("clf.w1"), bound.get("clf.b1"))?;
    let mut h = tape.relu(h);
    if train && cfg.dropout > 0.0 {
        let mask = dropout_mask(rng, tape.shape(h).to_vec(), cfg.dropout);
        h = apply_dropout_mask(tape, h, &mask)?;
    }
    affine(tape, h, bound.get("clf.w2"), bound.get("clf.b2"))
}

/// Predicted class per row: argmax with ties broken by lowest index.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let cols = logits.shape()[1];
    logits
        .data()
        .chunks(cols)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
