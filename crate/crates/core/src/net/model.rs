//! The multi-modal classifier: a convolutional spectrogram branch and a
//! dense metadata branch joined into a fully connected head.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::{
    apply_mask, conv_backward, conv_forward, dense_backward, dense_forward, dropout_in_place,
    elu_backward_in_place, elu_in_place, maxpool_backward, maxpool_forward,
    softmax_cross_entropy, softmax, ConvShape, Mode,
};
use super::{Scalar, Tensor};
use crate::dsp::MEL_BANDS;
use crate::metadata::MetadataVector;
use crate::{Error, RandomSource, Result};

/// Number of convolution blocks in the spectrogram branch.
pub const CONV_BLOCKS: usize = 4;

/// Width of the spectrogram input in frames.
pub const INPUT_FRAMES: usize = 512;

const SAMPLES_PER_GROUP: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub conv_filters: Vec<usize>,
    pub kernel_size: usize,
    pub metadata_units: usize,
    pub head_units: usize,
    pub dropout_input: f64,
    pub dropout_flatten: f64,
    pub dropout_head: f64,
    pub num_classes: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_height: MEL_BANDS,
            input_width: INPUT_FRAMES,
            conv_filters: vec![64, 64, 128, 128],
            kernel_size: 3,
            metadata_units: 100,
            head_units: 512,
            dropout_input: 0.2,
            dropout_flatten: 0.4,
            dropout_head: 0.4,
            num_classes: 0,
        }
    }
}

impl NetworkConfig {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.conv_filters.len() != CONV_BLOCKS {
            return fail(format!(
                "expected {CONV_BLOCKS} convolution blocks, got {}",
                self.conv_filters.len()
            ));
        }
        if self.conv_filters.contains(&0) {
            return fail("convolution filter counts must be positive".into());
        }
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return fail(format!("kernel size {} must be odd", self.kernel_size));
        }
        for (name, rate) in [
            ("dropout_input", self.dropout_input),
            ("dropout_flatten", self.dropout_flatten),
            ("dropout_head", self.dropout_head),
        ] {
            if !(0.0..1.0).contains(&rate) {
                return fail(format!("{name} = {rate} outside [0, 1)"));
            }
        }
        if self.metadata_units == 0 || self.head_units == 0 {
            return fail("dense layer widths must be positive".into());
        }
        if self.num_classes == 0 {
            return fail("num_classes must be positive".into());
        }
        if self.flattened_len() == 0 {
            return fail(format!(
                "input {}x{} vanishes after {CONV_BLOCKS} pooling stages",
                self.input_height, self.input_width
            ));
        }
        Ok(())
    }

    /// Spatial size entering convolution block `i`.
    pub fn block_dims(&self, i: usize) -> (usize, usize) {
        (self.input_height >> i, self.input_width >> i)
    }

    fn block_in_channels(&self, i: usize) -> usize {
        if i == 0 {
            1
        } else {
            self.conv_filters[i - 1]
        }
    }

    fn conv_shape(&self, i: usize) -> ConvShape {
        let (height, width) = self.block_dims(i);
        ConvShape {
            in_channels: self.block_in_channels(i),
            out_channels: self.conv_filters[i],
            height,
            width,
            kernel: self.kernel_size,
        }
    }

    /// Length of the flattened convolutional features.
    pub fn flattened_len(&self) -> usize {
        let (h, w) = self.block_dims(CONV_BLOCKS);
        self.conv_filters.last().copied().unwrap_or(0) * h * w
    }

    /// Shapes of every parameter tensor, in storage order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let k = self.kernel_size;
        let mut shapes = Vec::new();
        for i in 0..CONV_BLOCKS {
            shapes.push(vec![self.conv_filters[i], self.block_in_channels(i), k, k]);
            shapes.push(vec![self.conv_filters[i]]);
        }
        let joined = self.flattened_len() + self.metadata_units;
        for (out, inp) in [
            (self.metadata_units, MetadataVector::LEN),
            (self.head_units, joined),
            (self.num_classes, self.head_units),
        ] {
            shapes.push(vec![out, inp]);
            shapes.push(vec![out]);
        }
        shapes
    }

    /// Names of the parameter tensors, in storage order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        let layers = (0..CONV_BLOCKS)
            .map(|i| format!("conv{i}"))
            .chain(["metadata", "head", "output"].map(String::from));
        for layer in layers {
            names.push(format!("{layer}.weight"));
            names.push(format!("{layer}.bias"));
        }
        names
    }
}

const META_W: usize = 2 * CONV_BLOCKS;
const HEAD_W: usize = META_W + 2;
const OUT_W: usize = HEAD_W + 2;

/// Learnable tensors plus the optimizer's momentum state.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    config: NetworkConfig,
    tensors: Vec<Tensor<T>>,
    velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> NetworkParams<T> {
    /// All-zero parameters and velocities.
    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let tensors: Vec<Tensor<T>> = config.param_shapes().iter().map(|s| Tensor::zeros(s)).collect();
        let velocity = tensors.clone();
        Ok(Self {
            config,
            tensors,
            velocity,
        })
    }

    /// Assembles parameters from stored tensors, checking every shape.
    pub fn from_parts(
        config: NetworkConfig,
        tensors: Vec<Tensor<T>>,
        velocity: Vec<Tensor<T>>,
    ) -> Result<Self> {
        config.validate()?;
        let shapes = config.param_shapes();
        for group in [&tensors, &velocity] {
            if group.len() != shapes.len()
                || group.iter().zip(&shapes).any(|(t, s)| t.shape() != s.as_slice())
            {
                return Err(Error::Shape("parameter tensors do not match the configuration".into()));
            }
        }
        Ok(Self {
            config,
            tensors,
            velocity,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn velocity(&self) -> &[Tensor<T>] {
        &self.velocity
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> NetworkParams<U> {
        NetworkParams {
            config: self.config.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            velocity: self.velocity.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn zero_gradients(&self) -> Vec<Tensor<T>> {
        self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect()
    }

    fn w(&self, i: usize) -> &[T] {
        self.tensors[i].data()
    }
}

/// He-style uniform initialization: weights drawn from
/// `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, biases and velocities zero.
pub fn init_params<T: Scalar>(config: NetworkConfig, rng: &mut RandomSource) -> Result<NetworkParams<T>> {
    let mut params = NetworkParams::zeros(config)?;
    for t in params.tensors.iter_mut() {
        if t.shape().len() < 2 {
            continue;
        }
        let fan_in: usize = t.shape()[1..].iter().product();
        let limit = (6.0 / fan_in as f64).sqrt();
        for v in t.data_mut() {
            *v = T::from_f64(rng.uniform(-limit, limit));
        }
    }
    Ok(params)
}

/// One training or inference example.
#[derive(Debug, Clone)]
pub struct Sample<T> {
    /// `input_height × input_width` spectrogram, row-major.
    pub spectrogram: Tensor<T>,
    pub metadata: MetadataVector,
    pub label: usize,
}

impl Sample<f32> {
    pub fn from_array(spectrogram: &Array2<f32>, metadata: MetadataVector, label: usize) -> Self {
        let (h, w) = spectrogram.dim();
        Self {
            spectrogram: Tensor::from_fn(&[h, w], |i| spectrogram[[i / w, i % w]]),
            metadata,
            label,
        }
    }
}

struct Trace<T> {
    input: Vec<T>,
    block_out: Vec<Vec<T>>,
    pooled: Vec<Vec<T>>,
    argmax: Vec<Vec<u32>>,
    flat_mask: Option<Vec<T>>,
    metadata: Vec<T>,
    meta_act: Vec<T>,
    joined: Vec<T>,
    head_act: Vec<T>,
    head_mask: Option<Vec<T>>,
    head_out: Vec<T>,
    logits: Vec<T>,
}

fn run_forward<T: Scalar>(
    params: &NetworkParams<T>,
    spectrogram: &Tensor<T>,
    metadata: &MetadataVector,
    mode: Mode,
    rng: &mut RandomSource,
) -> Result<Trace<T>> {
    let cfg = &params.config;
    if spectrogram.shape() != [cfg.input_height, cfg.input_width] {
        return Err(Error::Shape(format!(
            "spectrogram {:?}, network expects [{}, {}]",
            spectrogram.shape(),
            cfg.input_height,
            cfg.input_width
        )));
    }
    let mut input = spectrogram.data().to_vec();
    dropout_in_place(&mut input, cfg.dropout_input, mode, rng);

    let mut scratch = Vec::new();
    let mut block_out = Vec::with_capacity(CONV_BLOCKS);
    let mut pooled: Vec<Vec<T>> = Vec::with_capacity(CONV_BLOCKS);
    let mut argmax = Vec::with_capacity(CONV_BLOCKS);
    for i in 0..CONV_BLOCKS {
        let s = cfg.conv_shape(i);
        let x = if i == 0 { &input } else { &pooled[i - 1] };
        let mut out = vec![T::zero(); s.out_channels * s.height * s.width];
        conv_forward(&s, x, params.w(2 * i), params.w(2 * i + 1), &mut out, &mut scratch);
        elu_in_place(&mut out);
        let pooled_len = s.out_channels * (s.height / 2) * (s.width / 2);
        let mut p = vec![T::zero(); pooled_len];
        let mut idx = vec![0u32; pooled_len];
        maxpool_forward(s.out_channels, s.height, s.width, &out, &mut p, &mut idx);
        block_out.push(out);
        pooled.push(p);
        argmax.push(idx);
    }

    let mut joined = pooled[CONV_BLOCKS - 1].clone();
    let flat_mask = dropout_in_place(&mut joined, cfg.dropout_flatten, mode, rng);

    let meta: Vec<T> = metadata.0.iter().map(|&v| T::from_f64(v)).collect();
    let mut meta_act = vec![T::zero(); cfg.metadata_units];
    dense_forward(params.w(META_W), params.w(META_W + 1), &meta, &mut meta_act);
    elu_in_place(&mut meta_act);
    joined.extend_from_slice(&meta_act);

    let mut head_act = vec![T::zero(); cfg.head_units];
    dense_forward(params.w(HEAD_W), params.w(HEAD_W + 1), &joined, &mut head_act);
    elu_in_place(&mut head_act);
    let mut head_out = head_act.clone();
    let head_mask = dropout_in_place(&mut head_out, cfg.dropout_head, mode, rng);

    let mut logits = vec![T::zero(); cfg.num_classes];
    dense_forward(params.w(OUT_W), params.w(OUT_W + 1), &head_out, &mut logits);

    Ok(Trace {
        input,
        block_out,
        pooled,
        argmax,
        flat_mask,
        metadata: meta,
        meta_act,
        joined,
        head_act,
        head_mask,
        head_out,
        logits,
    })
}

/// Class probabilities for one example. Dropout draws come from `rng` in
/// train mode; infer mode never touches it.
pub fn forward<T: Scalar>(
    params: &NetworkParams<T>,
    spectrogram: &Tensor<T>,
    metadata: &MetadataVector,
    mode: Mode,
    rng: &mut RandomSource,
) -> Result<Vec<T>> {
    let trace = run_forward(params, spectrogram, metadata, mode, rng)?;
    Ok(softmax(&trace.logits))
}

fn backward<T: Scalar>(params: &NetworkParams<T>, trace: &Trace<T>, dlogits: &[T], grads: &mut [Tensor<T>]) {
    let cfg = &params.config;
    let (conv_grads, dense_grads) = grads.split_at_mut(META_W);
    let [meta_w, meta_b, head_w, head_b, out_w, out_b] = dense_grads else {
        unreachable!("parameter layout");
    };

    let mut d_head = vec![T::zero(); cfg.head_units];
    dense_backward(
        params.w(OUT_W),
        &trace.head_out,
        dlogits,
        out_w.data_mut(),
        out_b.data_mut(),
        Some(&mut d_head),
    );
    apply_mask(&mut d_head, &trace.head_mask);
    elu_backward_in_place(&trace.head_act, &mut d_head);

    let mut d_joined = vec![T::zero(); trace.joined.len()];
    dense_backward(
        params.w(HEAD_W),
        &trace.joined,
        &d_head,
        head_w.data_mut(),
        head_b.data_mut(),
        Some(&mut d_joined),
    );
    let flat_len = cfg.flattened_len();
    let (d_flat, d_meta) = d_joined.split_at_mut(flat_len);
    elu_backward_in_place(&trace.meta_act, d_meta);
    dense_backward(
        params.w(META_W),
        &trace.metadata,
        d_meta,
        meta_w.data_mut(),
        meta_b.data_mut(),
        None,
    );

    apply_mask(d_flat, &trace.flat_mask);
    let mut d_pooled = d_flat.to_vec();
    let mut scratch = Vec::new();
    for i in (0..CONV_BLOCKS).rev() {
        let s = cfg.conv_shape(i);
        let mut d_out = vec![T::zero(); trace.block_out[i].len()];
        maxpool_backward(&trace.argmax[i], &d_pooled, &mut d_out);
        elu_backward_in_place(&trace.block_out[i], &mut d_out);
        let x = if i == 0 { &trace.input } else { &trace.pooled[i - 1] };
        let (dw, rest) = conv_grads[2 * i..].split_first_mut().expect("conv weight");
        let db = &mut rest[0];
        if i == 0 {
            conv_backward(&s, x, params.w(0), &d_out, dw.data_mut(), db.data_mut(), None, &mut scratch);
        } else {
            let mut dx = vec![T::zero(); x.len()];
            conv_backward(
                &s,
                x,
                params.w(2 * i),
                &d_out,
                dw.data_mut(),
                db.data_mut(),
                Some(&mut dx),
                &mut scratch,
            );
            d_pooled = dx;
        }
    }
}

/// Cross-entropy loss of one example and its gradient with respect to
/// every parameter tensor (storage order).
pub fn loss_and_gradients<T: Scalar>(
    params: &NetworkParams<T>,
    sample: &Sample<T>,
    mode: Mode,
    rng: &mut RandomSource,
) -> Result<(T, Vec<Tensor<T>>)> {
    let mut grads = params.zero_gradients();
    let loss = accumulate_gradients(params, sample, mode, rng, &mut grads)?;
    Ok((loss, grads))
}

fn accumulate_gradients<T: Scalar>(
    params: &NetworkParams<T>,
    sample: &Sample<T>,
    mode: Mode,
    rng: &mut RandomSource,
    grads: &mut [Tensor<T>],
) -> Result<T> {
    if sample.label >= params.config.num_classes {
        return Err(Error::Shape(format!(
            "label {} outside {} classes",
            sample.label, params.config.num_classes
        )));
    }
    let trace = run_forward(params, &sample.spectrogram, &sample.metadata, mode, rng)?;
    let (loss, dlogits) = softmax_cross_entropy(&trace.logits, sample.label);
    backward(params, &trace, &dlogits, grads);
    Ok(loss)
}

/// Loss of one example without computing gradients.
pub fn loss<T: Scalar>(
    params: &NetworkParams<T>,
    sample: &Sample<T>,
    mode: Mode,
    rng: &mut RandomSource,
) -> Result<T> {
    let trace = run_forward(params, &sample.spectrogram, &sample.metadata, mode, rng)?;
    Ok(softmax_cross_entropy(&trace.logits, sample.label).0)
}

/// Per-example losses and the batch-mean gradient. Example `i` draws its
/// dropout masks from `RandomSource::new(seeds[i])`. Examples are processed
/// in fixed groups whose partial sums are reduced in order, so the result
/// does not depend on the number of worker threads.
pub fn batch_gradients<T: Scalar>(
    params: &NetworkParams<T>,
    samples: &[Sample<T>],
    seeds: &[u64],
    mode: Mode,
) -> Result<(Vec<T>, Vec<Tensor<T>>)> {
    assert_eq!(samples.len(), seeds.len(), "one seed per sample");
    let partials: Vec<Result<(Vec<T>, Vec<Tensor<T>>)>> = samples
        .par_chunks(SAMPLES_PER_GROUP)
        .zip(seeds.par_chunks(SAMPLES_PER_GROUP))
        .map(|(group, group_seeds)| {
            let mut grads = params.zero_gradients();
            let mut losses = Vec::with_capacity(group.len());
            for (sample, &seed) in group.iter().zip(group_seeds) {
                let mut rng = RandomSource::new(seed);
                losses.push(accumulate_gradients(params, sample, mode, &mut rng, &mut grads)?);
            }
            Ok((losses, grads))
        })
        .collect();

    let mut losses = Vec::with_capacity(samples.len());
    let mut total = params.zero_gradients();
    for partial in partials {
        let (l, g) = partial?;
        losses.extend(l);
        for (t, g) in total.iter_mut().zip(&g) {
            t.add_scaled(g, T::one());
        }
    }
    if !samples.is_empty() {
        let inv = T::one() / T::from_f64(samples.len() as f64);
        total.iter_mut().for_each(|t| t.scale(inv));
    }
    Ok((losses, total))
}

/// Nesterov momentum update: `v ← μv − lr·g; p ← p + μv − lr·g`.
pub fn sgd_nesterov_step<T: Scalar>(
    params: &mut NetworkParams<T>,
    grads: &[Tensor<T>],
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if grads.len() != params.tensors.len()
        || grads.iter().zip(&params.tensors).any(|(g, p)| g.shape() != p.shape())
    {
        return Err(Error::Shape("gradients do not match parameters".into()));
    }
    let (lr, mu) = (T::from_f64(lr), T::from_f64(momentum));
    for ((p, v), g) in params.tensors.iter_mut().zip(params.velocity.iter_mut()).zip(grads) {
        for ((p, v), &g) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *v = mu * *v - lr * g;
            *p += mu * *v - lr * g;
        }
    }
    Ok(())
}
