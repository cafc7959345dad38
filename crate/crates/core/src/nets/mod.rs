//! Declarative model graphs: the acoustic CNN with temporal collapse and the
//! Conv1D + LSTM text model, with training/eval forward passes, backward
//! passes and penultimate-feature extraction.

mod checkpoint;
mod layers;
mod lstm;
mod tensor;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use layers::{BatchNorm, Conv1d, Conv2d, Dense, Dropout, Flatten, Layer, Normalize, Param, Pool2d, PoolMode, Relu};
pub use lstm::Lstm;
pub use tensor::Tensor;

pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvBlockSpec {
    pub filters: usize,
    #[serde(default = "default_kernel")]
    pub kernel: [usize; 2],
    /// `[time, frequency]`. The time entry of the final block is replaced by
    /// whatever time extent remains, collapsing it to 1.
    #[serde(default = "default_pool")]
    pub pool: [usize; 2],
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
}

fn default_kernel() -> [usize; 2] {
    [3, 3]
}
fn default_pool() -> [usize; 2] {
    [2, 2]
}
fn default_dropout() -> f64 {
    0.3
}
fn default_momentum() -> f64 {
    0.99
}
fn default_bn_epsilon() -> f64 {
    1e-3
}
fn default_classes() -> usize {
    NUM_CLASSES
}

impl ConvBlockSpec {
    pub fn new(filters: usize, pool: [usize; 2]) -> Self {
        ConvBlockSpec {
            filters,
            kernel: default_kernel(),
            pool,
            dropout_rate: default_dropout(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcousticModelSpec {
    pub blocks: Vec<ConvBlockSpec>,
    pub dense_sizes: Vec<usize>,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    /// Reduction used by the final, time-collapsing pool.
    #[serde(default)]
    pub collapse: PoolMode,
    #[serde(default = "default_momentum")]
    pub batch_norm_momentum: f64,
    #[serde(default = "default_bn_epsilon")]
    pub batch_norm_epsilon: f64,
}

impl AcousticModelSpec {
    /// Three blocks of 64, 32 and 30 filters; dense 128 and 64.
    pub fn switchboard() -> Self {
        Self::custom(
            vec![
                ConvBlockSpec::new(64, [2, 2]),
                ConvBlockSpec::new(32, [2, 2]),
                ConvBlockSpec::new(30, [0, 2]),
            ],
            vec![128, 64],
        )
    }

    /// One block of 32 filters; dense 32.
    pub fn iemocap() -> Self {
        Self::custom(vec![ConvBlockSpec::new(32, [0, 2])], vec![32])
    }

    /// One block of 2 filters, average collapse and a 16-unit dense layer:
    /// small enough to train on a single CPU core in seconds per epoch.
    pub fn desk() -> Self {
        AcousticModelSpec {
            collapse: PoolMode::Average,
            ..Self::custom(vec![ConvBlockSpec::new(2, [0, 4])], vec![16])
        }
    }

    pub fn custom(blocks: Vec<ConvBlockSpec>, dense_sizes: Vec<usize>) -> Self {
        AcousticModelSpec {
            blocks,
            dense_sizes,
            num_classes: NUM_CLASSES,
            collapse: PoolMode::Max,
            batch_norm_momentum: default_momentum(),
            batch_norm_epsilon: default_bn_epsilon(),
        }
    }

    pub fn penultimate_dim(&self) -> Option<usize> {
        self.dense_sizes.last().copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextModelSpec {
    pub conv_filters: Vec<usize>,
    pub kernel_size: usize,
    pub stride: usize,
    pub lstm_units: usize,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
}

impl Default for TextModelSpec {
    fn default() -> Self {
        TextModelSpec {
            conv_filters: vec![32, 64, 128],
            kernel_size: 4,
            stride: 2,
            lstm_units: 128,
            num_classes: NUM_CLASSES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Acoustic(AcousticModelSpec),
    Text(TextModelSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Logits and the activations entering the classification layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: Tensor,
    pub penultimate: Tensor,
}

/// A built model: spec, per-sample input shape and the layer stack. The
/// last layer is always the linear classification layer.
#[derive(Debug, Clone)]
pub struct ModelGraph {
    spec: ModelSpec,
    /// Per-sample tensor shape, without the batch axis.
    input_shape: Vec<usize>,
    seed: u64,
    layers: Vec<Layer>,
}

/// Acoustic input `(time, frequency, channels)`, e.g. `(300, 60, 1)`.
pub fn build_acoustic(spec: &AcousticModelSpec, input_shape: (usize, usize, usize), seed: u64) -> Result<ModelGraph> {
    let (time, freq, channels) = input_shape;
    if time == 0 || freq == 0 || channels == 0 {
        return Err(Error::InvalidSpec(format!("empty input shape {input_shape:?}")));
    }
    if spec.num_classes != NUM_CLASSES {
        return Err(Error::InvalidSpec(format!("num_classes must be {NUM_CLASSES}")));
    }
    if spec.blocks.is_empty() {
        return Err(Error::InvalidSpec(
            "at least one convolutional block is required".into(),
        ));
    }
    if !(spec.batch_norm_momentum >= 0.0 && spec.batch_norm_momentum < 1.0) {
        return Err(Error::InvalidSpec("batch_norm_momentum must lie in [0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = vec![Layer::Normalize(Normalize::identity(freq))];
    let (mut c, mut h, mut w) = (channels, time, freq);
    let last = spec.blocks.len() - 1;
    for (i, block) in spec.blocks.iter().enumerate() {
        if block.filters == 0 || block.kernel.contains(&0) {
            return Err(Error::InvalidSpec(format!("block {i} has zero filters or kernel size")));
        }
        if !(0.0..1.0).contains(&block.dropout_rate) {
            return Err(Error::InvalidSpec(format!("block {i} dropout must lie in [0, 1)")));
        }
        for _ in 0..2 {
            layers.push(Layer::Conv2d(Conv2d::new(c, block.filters, block.kernel, &mut rng)));
            layers.push(Layer::BatchNorm(BatchNorm::new(
                block.filters,
                spec.batch_norm_momentum,
                spec.batch_norm_epsilon,
            )));
            layers.push(Layer::Relu(Relu::default()));
            c = block.filters;
        }
        let pool_t = if i == last { h } else { block.pool[0] };
        let pool = [pool_t, block.pool[1]];
        if pool.contains(&0) || h / pool[0] == 0 || w / pool[1] == 0 {
            return Err(Error::InvalidSpec(format!(
                "block {i} pool {pool:?} reduces the {h}x{w} map below 1"
            )));
        }
        let mode = if i == last { spec.collapse } else { PoolMode::Max };
        layers.push(Layer::Pool2d(Pool2d::new(pool, mode)));
        layers.push(Layer::Dropout(Dropout::new(block.dropout_rate)));
        h /= pool[0];
        w /= pool[1];
    }
    debug_assert_eq!(h, 1);
    layers.push(Layer::Flatten(Flatten::default()));
    let mut width = c * h * w;
    for &size in &spec.dense_sizes {
        if size == 0 {
            return Err(Error::InvalidSpec("dense layer of size 0".into()));
        }
        layers.push(Layer::Dense(Dense::new(width, size, &mut rng)));
        layers.push(Layer::Relu(Relu::default()));
        width = size;
    }
    layers.push(Layer::Dense(Dense::glorot(width, NUM_CLASSES, &mut rng)));
    let mut graph = ModelGraph {
        spec: ModelSpec::Acoustic(spec.clone()),
        input_shape: vec![channels, time, freq],
        seed,
        layers,
    };
    graph.round_to_f32();
    Ok(graph)
}

/// Text input `(max_tokens, embedding_dim)`.
pub fn build_text(spec: &TextModelSpec, input_shape: (usize, usize), seed: u64) -> Result<ModelGraph> {
    let (max_tokens, dim) = input_shape;
    if spec.num_classes != NUM_CLASSES {
        return Err(Error::InvalidSpec(format!("num_classes must be {NUM_CLASSES}")));
    }
    if spec.kernel_size <= spec.stride || spec.stride == 0 {
        return Err(Error::InvalidSpec(format!(
            "kernel size {} must exceed stride {}",
            spec.kernel_size, spec.stride
        )));
    }
    if spec.conv_filters.is_empty() || spec.conv_filters.contains(&0) || spec.lstm_units == 0 || dim == 0 {
        return Err(Error::InvalidSpec(
            "filters, LSTM units and embedding dim must be positive".into(),
        ));
    }
    let min_tokens = spec.stride.pow(spec.conv_filters.len() as u32);
    if max_tokens < min_tokens {
        return Err(Error::InvalidSpec(format!(
            "max_tokens {max_tokens} is below {min_tokens}, the minimum for {} stride-{} layers",
            spec.conv_filters.len(),
            spec.stride
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let mut c = dim;
    for &filters in &spec.conv_filters {
        layers.push(Layer::Conv1d(Conv1d::new(
            c,
            filters,
            spec.kernel_size,
            spec.stride,
            &mut rng,
        )));
        layers.push(Layer::Relu(Relu::default()));
        c = filters;
    }
    layers.push(Layer::Lstm(Lstm::new(c, spec.lstm_units, &mut rng)));
    layers.push(Layer::Dense(Dense::glorot(spec.lstm_units, NUM_CLASSES, &mut rng)));
    let mut graph = ModelGraph {
        spec: ModelSpec::Text(spec.clone()),
        input_shape: vec![max_tokens, dim],
        seed,
        layers,
    };
    graph.round_to_f32();
    Ok(graph)
}

impl ModelGraph {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn penultimate_dim(&self) -> usize {
        match self.layers.last() {
            Some(Layer::Dense(d)) => d.inputs,
            _ => unreachable!("graphs always end in a dense classification layer"),
        }
    }

    /// Sequence lengths after each text convolution, or the `(time, freq)`
    /// map size after each acoustic block.
    pub fn stage_shapes(&self) -> Vec<Vec<usize>> {
        let probe = Tensor::zeros([vec![1], self.input_shape.clone()].concat());
        let mut x = probe;
        let mut shapes = Vec::new();
        for layer in &self.layers {
            x = layer.infer(&x);
            match layer {
                Layer::Conv1d(_) | Layer::Pool2d(_) => shapes.push(x.shape()[1..].to_vec()),
                _ => {}
            }
        }
        shapes
    }

    /// Installs fixed per-feature standardization in front of the acoustic
    /// network. No-op for text graphs.
    pub fn set_input_normalization(&mut self, mean: &[f64], std: &[f64]) -> Result<()> {
        if let Some(Layer::Normalize(norm)) = self.layers.first_mut() {
            if mean.len() != norm.mean.value.len() || std.len() != mean.len() {
                return Err(Error::invalid("normalization width does not match the input"));
            }
            if std.iter().any(|s| !(*s > 0.0)) {
                return Err(Error::invalid("normalization scale must be positive"));
            }
            norm.mean.value = mean.iter().map(|&v| v as f32 as f64).collect();
            norm.std.value = std.iter().map(|&v| v as f32 as f64).collect();
        }
        Ok(())
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape().len() != self.input_shape.len() + 1 || input.shape()[1..] != self.input_shape[..] {
            return Err(Error::invalid(format!(
                "input shape {:?} does not match the graph's per-sample shape {:?}",
                input.shape(),
                self.input_shape
            )));
        }
        if input.batch() == 0 {
            return Err(Error::invalid("empty batch"));
        }
        Ok(())
    }

    /// Eval-mode forward pass: dropout off, batch norm on running
    /// statistics. Pure in `(parameters, input)`.
    pub fn evaluate(&self, input: &Tensor) -> Result<ForwardOutput> {
        self.check_input(input)?;
        let (head, body) = self.layers.split_last().expect("non-empty graph");
        let mut x = input.clone();
        for layer in body {
            x = layer.infer(&x);
        }
        Ok(ForwardOutput {
            logits: head.infer(&x),
            penultimate: x,
        })
    }

    /// Forward pass in either mode. Training mode caches activations for
    /// [`ModelGraph::backward`], draws dropout masks from `rng` and updates
    /// batch-norm running statistics.
    pub fn forward<R: Rng + ?Sized>(&mut self, input: &Tensor, mode: Mode, rng: &mut R) -> Result<ForwardOutput> {
        if mode == Mode::Eval {
            return self.evaluate(input);
        }
        self.check_input(input)?;
        let (head, body) = self.layers.split_last_mut().expect("non-empty graph");
        let mut x = input.clone();
        for layer in body.iter_mut() {
            x = layer.forward_train(&x, rng);
        }
        let logits = head.forward_train(&x, rng);
        Ok(ForwardOutput { logits, penultimate: x })
    }

    /// Backpropagates `grad_logits` through the last training forward pass,
    /// accumulating into each parameter's `grad`.
    pub fn backward(&mut self, grad_logits: &Tensor) {
        let mut g = grad_logits.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g);
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn clear_caches(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    /// All parameters with stable names `"{layer index}.{kind}.{name}"`.
    pub fn named_params(&self) -> Vec<(String, &Param)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                let kind = l.kind();
                l.params()
                    .into_iter()
                    .map(move |p| (format!("{i}.{kind}.{}", p.name), p))
            })
            .collect()
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn num_trainable(&self) -> usize {
        self.params()
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    /// Rounds every stored value to single precision so that checkpoints,
    /// which hold f32 payloads, reproduce the in-memory model exactly.
    pub fn round_to_f32(&mut self) {
        for p in self.params_mut() {
            p.value.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    /// Copies parameter values (not gradients or caches) from `other`.
    pub fn copy_values_from(&mut self, other: &ModelGraph) {
        for (dst, src) in self.params_mut().into_iter().zip(other.params()) {
            dst.value.copy_from_slice(&src.value);
        }
    }

    /// A cache- and gradient-free copy suitable for storing as a checkpoint.
    pub fn snapshot(&self) -> ModelGraph {
        let mut copy = self.clone();
        copy.clear_caches();
        copy.zero_grads();
        copy
    }
}

/// Mean cross-entropy of softmax(logits) against class indices, with its
/// gradient with respect to the logits, `(softmax - onehot) / batch`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let n = logits.batch();
    if logits.shape().len() != 2 || labels.len() != n || n == 0 {
        return Err(Error::invalid(format!(
            "logits {:?} and {} labels do not line up",
            logits.shape(),
            labels.len()
        )));
    }
    let k = logits.shape()[1];
    if let Some(bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid(format!("label {bad} outside 0..{k}")));
    }
    let mut grad = Tensor::zeros(vec![n, k]);
    let mut loss = 0.0;
    for (b, &label) in labels.iter().enumerate() {
        let row = logits.row(b);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
        let log_norm = max + sum.ln();
        loss += log_norm - row[label];
        let g = &mut grad.data_mut()[b * k..(b + 1) * k];
        for (j, gj) in g.iter_mut().enumerate() {
            let p = (row[j] - log_norm).exp();
            *gj = (p - if j == label { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}

#[cfg(test)]
mod tests;
