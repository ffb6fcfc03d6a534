//! Time-distributed Base-CNN with a sequence head.
//!
//! The Base-CNN maps every 30 s epoch to a feature vector with the same
//! weights; the head convolves those vectors along the sequence axis and
//! emits per-epoch class logits. Dense layers are stored as `[n, m]` tensors
//! and run as width-1 convolutions over a length-1 time axis.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{self, conv_out_len, Padding};
use super::{cast, NetError, Scalar, Tensor};
use crate::EPOCH_SAMPLES;

/// Loss, one gradient per parameter tensor, probabilities.
pub type LossAndGrads<T> = (T, Vec<Tensor<T>>, Vec<T>);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub filters: usize,
    pub kernel: usize,
    pub padding: Padding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Samples per epoch (3000 for 30 s at 100 Hz).
    pub input_len: usize,
    /// Each block is two convolutions, max pooling and spatial dropout.
    pub blocks: Vec<ConvSpec>,
    /// Two convolutions before global max pooling.
    pub tail: Vec<ConvSpec>,
    pub dense_units: usize,
    pub dropout_rate: f64,
    pub pool_size: usize,
    pub seq_len: usize,
    pub head: HeadConfig,
    pub classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let conv = |filters| ConvSpec { filters, kernel: 8 };
        Self {
            input_len: EPOCH_SAMPLES,
            blocks: vec![conv(32), conv(64), conv(128)],
            tail: vec![conv(256), conv(256)],
            dense_units: 64,
            dropout_rate: 0.01,
            pool_size: 2,
            seq_len: 1,
            head: HeadConfig {
                filters: 128,
                kernel: 3,
                padding: Padding::Same,
            },
            classes: 5,
        }
    }
}

impl ModelConfig {
    /// Same layer structure with few filters and short input; for gradient
    /// checks and quick tests.
    pub fn tiny() -> Self {
        let conv = |filters| ConvSpec { filters, kernel: 8 };
        Self {
            input_len: 300,
            blocks: vec![conv(4), conv(8), conv(8)],
            tail: vec![conv(8), conv(8)],
            dense_units: 8,
            head: HeadConfig {
                filters: 8,
                kernel: 3,
                padding: Padding::Same,
            },
            ..Self::default()
        }
    }

    /// Time length after every Base-CNN convolution and pooling layer.
    pub fn length_chain(&self) -> Result<Vec<usize>, NetError> {
        fn push(
            chain: &mut Vec<usize>,
            next: impl FnOnce(usize) -> Option<usize>,
            what: String,
        ) -> Result<(), NetError> {
            let t = *chain.last().expect("starts with input_len");
            let l = next(t)
                .filter(|&l| l >= 1)
                .ok_or_else(|| NetError::InvalidConfig(format!("time axis vanishes at {what} (length {t})")))?;
            chain.push(l);
            Ok(())
        }
        let mut chain = vec![self.input_len];
        for (i, b) in self.blocks.iter().enumerate() {
            for c in 1..=2 {
                push(
                    &mut chain,
                    |t| conv_out_len(t, b.kernel, Padding::Valid),
                    format!("block{}.conv{c}", i + 1),
                )?;
            }
            push(
                &mut chain,
                |t| t.checked_div(self.pool_size),
                format!("block{} pool", i + 1),
            )?;
        }
        for (i, c) in self.tail.iter().enumerate() {
            push(
                &mut chain,
                |t| conv_out_len(t, c.kernel, Padding::Valid),
                format!("tail.conv{}", i + 1),
            )?;
        }
        Ok(chain)
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: String| Err(NetError::InvalidConfig(m));
        if self.classes != 5 {
            return bad(format!("classes must be 5, got {}", self.classes));
        }
        if self.blocks.is_empty() {
            return bad("at least one block required".into());
        }
        let specs = self.blocks.iter().chain(&self.tail);
        if specs.clone().any(|c| c.kernel == 0 || c.filters == 0) || self.head.kernel == 0 || self.head.filters == 0 {
            return bad("kernels and filter counts must be at least 1".into());
        }
        if self.dense_units == 0 || self.pool_size == 0 || self.seq_len == 0 {
            return bad("dense_units, pool_size and seq_len must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.head.padding == Padding::Valid && self.head.kernel != 1 {
            return bad("valid head padding would shorten the sequence; use same or kernel 1".into());
        }
        self.length_chain().map(|_| ())
    }
}

/// Training mode carries the seed of this call's dropout masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train { seed: u64 },
    Infer,
}

#[derive(Debug, Clone)]
struct ConvLayer {
    kernel: usize,
    bias: usize,
    k: usize,
    cin: usize,
    cout: usize,
    pad: Padding,
    relu: bool,
}

#[derive(Debug, Clone)]
enum Layer {
    Conv(ConvLayer),
    MaxPool(usize),
    Dropout(f64),
    GlobalMax,
}

enum Record<T> {
    Conv { input: Vec<T>, output: Vec<T>, t: usize },
    Pool { arg: Vec<u32>, input_len: usize },
    Drop { mask: Vec<T>, t: usize, c: usize },
}

struct Cache<T> {
    base: Vec<Record<T>>,
    head: Vec<Record<T>>,
}

struct Architecture {
    base: Vec<Layer>,
    head: Vec<Layer>,
    params: Vec<(String, Vec<usize>)>,
}

fn architecture(cfg: &ModelConfig) -> Architecture {
    let mut params = Vec::new();
    let conv = |params: &mut Vec<(String, Vec<usize>)>, name: String, k, cin, cout, pad, relu, dense: bool| {
        let shape = if dense { vec![cin, cout] } else { vec![k, cin, cout] };
        params.push((format!("{name}.kernel"), shape));
        params.push((format!("{name}.bias"), vec![cout]));
        Layer::Conv(ConvLayer {
            kernel: params.len() - 2,
            bias: params.len() - 1,
            k,
            cin,
            cout,
            pad,
            relu,
        })
    };
    let mut base = Vec::new();
    let mut c = 1;
    for (i, b) in cfg.blocks.iter().enumerate() {
        for j in 1..=2 {
            base.push(conv(
                &mut params,
                format!("block{}.conv{j}", i + 1),
                b.kernel,
                c,
                b.filters,
                Padding::Valid,
                true,
                false,
            ));
            c = b.filters;
        }
        base.push(Layer::MaxPool(cfg.pool_size));
        base.push(Layer::Dropout(cfg.dropout_rate));
    }
    for (i, s) in cfg.tail.iter().enumerate() {
        base.push(conv(
            &mut params,
            format!("tail.conv{}", i + 1),
            s.kernel,
            c,
            s.filters,
            Padding::Valid,
            true,
            false,
        ));
        c = s.filters;
    }
    base.push(Layer::GlobalMax);
    base.push(Layer::Dropout(cfg.dropout_rate));
    base.push(conv(
        &mut params,
        "dense".into(),
        1,
        c,
        cfg.dense_units,
        Padding::Valid,
        true,
        true,
    ));
    base.push(Layer::Dropout(cfg.dropout_rate));

    let h = &cfg.head;
    let head = vec![
        conv(
            &mut params,
            "head.conv".into(),
            h.kernel,
            cfg.dense_units,
            h.filters,
            h.padding,
            true,
            false,
        ),
        conv(
            &mut params,
            "head.logits".into(),
            1,
            h.filters,
            cfg.classes,
            Padding::Valid,
            false,
            true,
        ),
    ];
    Architecture { base, head, params }
}

/// Named tensors plus the config they were built for; the unit of
/// serialization.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl ModelWeights {
    /// Names, order and shapes must match the architecture of `config`.
    pub fn check(&self) -> Result<(), NetError> {
        self.config.validate()?;
        let arch = architecture(&self.config);
        if arch.params.len() != self.tensors.len() {
            return Err(NetError::ShapeMismatchWithConfig(format!(
                "config needs {} tensors, file has {}",
                arch.params.len(),
                self.tensors.len()
            )));
        }
        for ((want_name, want_shape), (name, t)) in arch.params.iter().zip(&self.tensors) {
            if want_name != name || want_shape.as_slice() != t.shape() {
                return Err(NetError::ShapeMismatchWithConfig(format!(
                    "expected {want_name} {want_shape:?}, found {name} {:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(NetError::NonFiniteWeight(name.clone()));
            }
        }
        Ok(())
    }
}

/// Weights are immutable during inference; `&Model` can be shared across
/// threads, each call owns its scratch buffers.
#[derive(Debug, Clone)]
pub struct Model<T> {
    config: ModelConfig,
    base: Vec<Layer>,
    head: Vec<Layer>,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
}

impl<T: Scalar> Model<T> {
    /// Glorot-uniform kernels and zero biases drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, NetError> {
        config.validate()?;
        let arch = architecture(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, shape) in arch.params {
            let t = if name.ends_with(".bias") {
                Tensor::zeros(shape)
            } else {
                let (fan_in, fan_out) = match shape.as_slice() {
                    [k, i, o] => (k * i, k * o),
                    [i, o] => (*i, *o),
                    _ => unreachable!("kernels are 2-D or 3-D"),
                };
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| cast(rng.gen_range(-limit..limit))).collect();
                Tensor::new(shape, data)?
            };
            names.push(name);
            params.push(t);
        }
        Ok(Self {
            config,
            base: arch.base,
            head: arch.head,
            names,
            params,
        })
    }

    pub fn from_weights(w: &ModelWeights) -> Result<Self, NetError> {
        w.check()?;
        let arch = architecture(&w.config);
        Ok(Self {
            config: w.config.clone(),
            base: arch.base,
            head: arch.head,
            names: w.tensors.iter().map(|(n, _)| n.clone()).collect(),
            params: w.tensors.iter().map(|(_, t)| t.cast()).collect(),
        })
    }

    pub fn weights(&self) -> ModelWeights {
        ModelWeights {
            config: self.config.clone(),
            tensors: self
                .names
                .iter()
                .cloned()
                .zip(self.params.iter().map(Tensor::cast))
                .collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            base: self.base.clone(),
            head: self.head.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn check_input(&self, x: &[T], b: usize, l: usize) -> Result<(), NetError> {
        if b == 0 || l == 0 || x.len() != b * l * self.config.input_len {
            return Err(NetError::ShapeMismatch(format!(
                "input of {} values is not [{b}, {l}, {}]",
                x.len(),
                self.config.input_len
            )));
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn run_stack(
        &self,
        layers: &[Layer],
        mut x: Vec<T>,
        n: usize,
        mut t: usize,
        mut c: usize,
        mode: Mode,
        stream_base: u64,
        mut rec: Option<&mut Vec<Record<T>>>,
    ) -> Result<(Vec<T>, usize, usize), NetError> {
        for (li, layer) in layers.iter().enumerate() {
            match layer {
                Layer::Conv(cl) => {
                    let (y, tout) = ops::conv_forward(
                        &x,
                        n,
                        t,
                        cl.cin,
                        self.params[cl.kernel].data(),
                        cl.k,
                        cl.cout,
                        self.params[cl.bias].data(),
                        cl.pad,
                        cl.relu,
                    )?;
                    if let Some(r) = rec.as_deref_mut() {
                        r.push(Record::Conv {
                            input: x,
                            output: y.clone(),
                            t,
                        });
                    }
                    x = y;
                    t = tout;
                    c = cl.cout;
                }
                Layer::MaxPool(_) | Layer::GlobalMax => {
                    let size = if let Layer::MaxPool(s) = layer { *s } else { t };
                    let (y, arg) = ops::maxpool_forward(&x, n, t, c, size);
                    if let Some(r) = rec.as_deref_mut() {
                        r.push(Record::Pool {
                            arg,
                            input_len: x.len(),
                        });
                    }
                    x = y;
                    t /= size;
                }
                Layer::Dropout(rate) => {
                    let mask = match mode {
                        Mode::Train { seed } if *rate > 0.0 => {
                            let mut rng = ChaCha8Rng::seed_from_u64(seed);
                            rng.set_stream(stream_base + li as u64);
                            let m = ops::dropout_mask(&mut rng, n, c, *rate);
                            ops::apply_channel_mask(&mut x, &m, n, t, c);
                            m
                        }
                        _ => Vec::new(),
                    };
                    if let Some(r) = rec.as_deref_mut() {
                        r.push(Record::Drop { mask, t, c });
                    }
                }
            }
        }
        Ok((x, t, c))
    }

    fn logits(
        &self,
        x: &[T],
        b: usize,
        l: usize,
        mode: Mode,
        mut cache: Option<&mut Cache<T>>,
    ) -> Result<Vec<T>, NetError> {
        self.check_input(x, b, l)?;
        let (feat, t, c) = self.run_stack(
            &self.base,
            x.to_vec(),
            b * l,
            self.config.input_len,
            1,
            mode,
            0,
            cache.as_deref_mut().map(|c| &mut c.base),
        )?;
        debug_assert_eq!(t, 1);
        // [b*l, 1, dense] is [b, l, dense] in memory
        let (logits, _, _) = self.run_stack(&self.head, feat, b, l, c, mode, 1 << 32, cache.map(|c| &mut c.head))?;
        Ok(logits)
    }

    /// Class probabilities `[b, l, classes]` for input `[b, l, input_len]`.
    pub fn forward(&self, x: &[T], b: usize, l: usize, mode: Mode) -> Result<Vec<T>, NetError> {
        Ok(ops::softmax_rows(
            &self.logits(x, b, l, mode, None)?,
            self.config.classes,
        ))
    }

    /// Inference-mode [`forward`](Self::forward).
    pub fn predict(&self, x: &[T], b: usize, l: usize) -> Result<Vec<T>, NetError> {
        self.forward(x, b, l, Mode::Infer)
    }

    /// Mean cross-entropy of `labels` (`[b, l]`).
    pub fn loss(&self, x: &[T], labels: &[u8], b: usize, l: usize, mode: Mode) -> Result<T, NetError> {
        let z = self.logits(x, b, l, mode, None)?;
        Ok(ops::xent_with_grad(&z, labels, self.config.classes)?.0)
    }

    /// Loss plus a hash of every ReLU on/off state and max-pool choice. Two
    /// evaluations with equal fingerprints lie on the same linear piece.
    pub fn loss_with_fingerprint(
        &self,
        x: &[T],
        labels: &[u8],
        b: usize,
        l: usize,
        mode: Mode,
    ) -> Result<(T, u64), NetError> {
        let mut cache = Cache {
            base: Vec::new(),
            head: Vec::new(),
        };
        let z = self.logits(x, b, l, mode, Some(&mut cache))?;
        let loss = ops::xent_with_grad(&z, labels, self.config.classes)?.0;
        let mut h = DefaultHasher::new();
        for r in cache.base.iter().chain(&cache.head) {
            match r {
                Record::Conv { output, .. } => output.iter().for_each(|v| (*v > T::zero()).hash(&mut h)),
                Record::Pool { arg, .. } => arg.hash(&mut h),
                Record::Drop { .. } => {}
            }
        }
        Ok((loss, h.finish()))
    }

    /// Loss, gradients for every parameter and the probabilities of a
    /// training-mode forward pass whose dropout masks come from `seed`.
    pub fn loss_and_gradients(
        &self,
        x: &[T],
        labels: &[u8],
        b: usize,
        l: usize,
        seed: u64,
    ) -> Result<LossAndGrads<T>, NetError> {
        if labels.len() != b * l {
            return Err(NetError::ShapeMismatch(format!(
                "{} labels for [{b}, {l}]",
                labels.len()
            )));
        }
        let mut cache = Cache {
            base: Vec::new(),
            head: Vec::new(),
        };
        let z = self.logits(x, b, l, Mode::Train { seed }, Some(&mut cache))?;
        let (loss, probs, dz) = ops::xent_with_grad(&z, labels, self.config.classes)?;
        let mut grads: Vec<Tensor<T>> = self.params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        let d = self.back_stack(&self.head, cache.head, dz, b, &mut grads, true);
        self.back_stack(&self.base, cache.base, d, b * l, &mut grads, false);
        Ok((loss, grads, probs))
    }

    fn back_stack(
        &self,
        layers: &[Layer],
        mut records: Vec<Record<T>>,
        mut d: Vec<T>,
        n: usize,
        grads: &mut [Tensor<T>],
        input_grad: bool,
    ) -> Vec<T> {
        for (li, layer) in layers.iter().enumerate().rev() {
            let rec = records.pop().expect("one record per layer");
            let first = li == 0 && !input_grad;
            d = match (layer, rec) {
                (Layer::Conv(cl), Record::Conv { input, output, t }) => {
                    let (gk, gb) = two_mut(grads, cl.kernel, cl.bias);
                    let dx = ops::conv_backward(
                        &input,
                        n,
                        t,
                        cl.cin,
                        self.params[cl.kernel].data(),
                        cl.k,
                        cl.cout,
                        cl.pad,
                        &output,
                        cl.relu,
                        &mut d,
                        gk.data_mut(),
                        gb.data_mut(),
                        !first,
                    );
                    dx.unwrap_or_default()
                }
                (Layer::MaxPool(_) | Layer::GlobalMax, Record::Pool { arg, input_len }) => {
                    ops::pool_backward(&d, &arg, input_len)
                }
                (Layer::Dropout(_), Record::Drop { mask, t, c }) => {
                    if !mask.is_empty() {
                        ops::apply_channel_mask(&mut d, &mask, n, t, c);
                    }
                    d
                }
                _ => unreachable!("records follow layers"),
            };
        }
        d
    }
}

fn two_mut<T>(v: &mut [T], a: usize, b: usize) -> (&mut T, &mut T) {
    assert!(a < b);
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}
