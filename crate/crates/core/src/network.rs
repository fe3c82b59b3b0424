//! Per-cell convolutional scorer.
//!
//! Three convolution layers with kernel width 1 along the cell axis, so each
//! cell column is transformed by the same 3→20→10→1 stack
//! (ReLU, ReLU, Sigmoid). Outputs are per-cell goodness values in (0, 1).
//!
//! Snapshot file format (UTF-8 text, one record per line):
//!
//! ```text
//! hetnet-steer-qnet 1
//! plan 3 20 10 1
//! seed <u64>
//! layer <index> <relu|sigmoid>
//! w <out*in values, row-major, out-major>
//! b <out values>
//! ...                 # one layer/w/b triple per layer
//! end
//! ```
//!
//! Values are written with Rust's shortest round-trip float formatting, so
//! a save/load cycle reproduces every parameter bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::policies::Observation;
use crate::seeds::{substream, Stream};

pub const CHANNEL_PLAN: [usize; 4] = [3, 20, 10, 1];
const SNAPSHOT_MAGIC: &str = "hetnet-steer-qnet";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `out_channels × in_channels`, row-major.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl ConvLayer {
    fn zeros(in_channels: usize, out_channels: usize, activation: Activation) -> Self {
        ConvLayer {
            in_channels,
            out_channels,
            weights: vec![0.0; in_channels * out_channels],
            biases: vec![0.0; out_channels],
            activation,
        }
    }

    fn weight(&self, out: usize, inp: usize) -> f64 {
        self.weights[out * self.in_channels + inp]
    }

    fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    layers: Vec<ConvLayer>,
    seed: u64,
    /// Bumped on every update so forward caches can detect staleness.
    generation: u64,
}

/// Per-column pre- and post-activations from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    /// `inputs[c]` is the 3-feature input of column c.
    inputs: Vec<Vec<f64>>,
    /// `pre[l][c]` / `post[l][c]`: layer l values for column c.
    pre: Vec<Vec<Vec<f64>>>,
    post: Vec<Vec<Vec<f64>>>,
}

impl ForwardCache {
    pub fn columns(&self) -> usize {
        self.inputs.len()
    }
}

/// Gradient with the same layout as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradient {
    pub fn to_flat(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }
}

fn activation_for(layer: usize) -> Activation {
    if layer + 1 == CHANNEL_PLAN.len() - 1 {
        Activation::Sigmoid
    } else {
        Activation::Relu
    }
}

impl QNetwork {
    /// A network with every weight and bias at zero.
    pub fn zeros() -> Self {
        let layers = (0..CHANNEL_PLAN.len() - 1)
            .map(|l| ConvLayer::zeros(CHANNEL_PLAN[l], CHANNEL_PLAN[l + 1], activation_for(l)))
            .collect();
        QNetwork {
            layers,
            seed: 0,
            generation: 0,
        }
    }

    /// Uniform ±sqrt(6 / (fan_in + fan_out)) weights, zero biases.
    pub fn init_weights(seed: u64) -> Self {
        let mut rng = substream(seed, Stream::Init, 0);
        let mut net = Self::zeros();
        net.seed = seed;
        for layer in &mut net.layers {
            let limit = (6.0 / (layer.in_channels + layer.out_channels) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..limit);
            }
        }
        net
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Parameters flattened in `Gradient::to_flat` order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()).copied())
            .collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                values.len()
            )));
        }
        let mut it = values.iter().copied();
        for layer in &mut self.layers {
            for v in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *v = it.next().unwrap();
            }
        }
        self.generation += 1;
        Ok(())
    }

    /// Scores every column of `obs`. The mask is not applied here.
    pub fn forward(&self, obs: &Observation) -> Result<(Vec<f64>, ForwardCache)> {
        let rows = obs.rows();
        if rows.len() != CHANNEL_PLAN[0] {
            return Err(Error::Shape(format!(
                "observation has {} feature rows, expected {}",
                rows.len(),
                CHANNEL_PLAN[0]
            )));
        }
        let n = obs.cells();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("ragged observation rows".into()));
        }

        let mut cache = ForwardCache {
            generation: self.generation,
            inputs: Vec::with_capacity(n),
            pre: vec![Vec::with_capacity(n); self.layers.len()],
            post: vec![Vec::with_capacity(n); self.layers.len()],
        };
        let mut q = Vec::with_capacity(n);
        for c in 0..n {
            let input: Vec<f64> = rows.iter().map(|r| r[c]).collect();
            let mut x = input.clone();
            for (l, layer) in self.layers.iter().enumerate() {
                let z: Vec<f64> = (0..layer.out_channels)
                    .map(|o| {
                        layer.biases[o]
                            + (0..layer.in_channels)
                                .map(|i| layer.weight(o, i) * x[i])
                                .sum::<f64>()
                    })
                    .collect();
                let a: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
                cache.pre[l].push(z);
                cache.post[l].push(a.clone());
                x = a;
            }
            q.push(x[0]);
            cache.inputs.push(input);
        }
        Ok((q, cache))
    }

    /// Exact gradient of output `cell_index` with respect to every parameter.
    pub fn grad_wrt_params(&self, cache: &ForwardCache, cell_index: usize) -> Result<Gradient> {
        if cache.generation != self.generation {
            return Err(Error::invariant(
                "forward cache is stale: network updated since",
            ));
        }
        if cell_index >= cache.columns() {
            return Err(Error::Shape(format!(
                "cell index {cell_index} out of range for {} columns",
                cache.columns()
            )));
        }
        let mut grad = Gradient {
            weights: self
                .layers
                .iter()
                .map(|l| vec![0.0; l.weights.len()])
                .collect(),
            biases: self
                .layers
                .iter()
                .map(|l| vec![0.0; l.biases.len()])
                .collect(),
        };
        // d output / d post-activation of the last layer
        let mut upstream = vec![1.0];
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let z = &cache.pre[l][cell_index];
            let a = &cache.post[l][cell_index];
            let input = if l == 0 {
                &cache.inputs[cell_index]
            } else {
                &cache.post[l - 1][cell_index]
            };
            let dz: Vec<f64> = (0..layer.out_channels)
                .map(|o| upstream[o] * layer.activation.derivative(z[o], a[o]))
                .collect();
            for o in 0..layer.out_channels {
                grad.biases[l][o] = dz[o];
                for i in 0..layer.in_channels {
                    grad.weights[l][o * layer.in_channels + i] = dz[o] * input[i];
                }
            }
            upstream = (0..layer.in_channels)
                .map(|i| {
                    (0..layer.out_channels)
                        .map(|o| layer.weight(o, i) * dz[o])
                        .sum()
                })
                .collect();
        }
        Ok(grad)
    }

    /// `w ← w + scale · g`. Leaves the network untouched and reports
    /// divergence if any updated parameter would be non-finite.
    pub fn apply_update(&mut self, grad: &Gradient, scale: f64) -> Result<()> {
        if grad.weights.len() != self.layers.len()
            || grad.biases.len() != self.layers.len()
            || self.layers.iter().enumerate().any(|(l, layer)| {
                grad.weights[l].len() != layer.weights.len()
                    || grad.biases[l].len() != layer.biases.len()
            })
        {
            return Err(Error::Shape(
                "gradient does not match network layout".into(),
            ));
        }
        let mut updated = self.layers.clone();
        for (l, layer) in updated.iter_mut().enumerate() {
            for (w, g) in layer.weights.iter_mut().zip(&grad.weights[l]) {
                *w += scale * g;
            }
            for (b, g) in layer.biases.iter_mut().zip(&grad.biases[l]) {
                *b += scale * g;
            }
            if !layer.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite parameters in layer {l}"
                )));
            }
        }
        self.layers = updated;
        self.generation += 1;
        Ok(())
    }

    pub fn to_snapshot_string(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{SNAPSHOT_MAGIC} {SNAPSHOT_VERSION}").unwrap();
        let plan: Vec<String> = CHANNEL_PLAN.iter().map(|c| c.to_string()).collect();
        writeln!(out, "plan {}", plan.join(" ")).unwrap();
        writeln!(out, "seed {}", self.seed).unwrap();
        for (l, layer) in self.layers.iter().enumerate() {
            writeln!(out, "layer {l} {}", layer.activation.name()).unwrap();
            write_values(&mut out, "w", &layer.weights);
            write_values(&mut out, "b", &layer.biases);
        }
        out.push_str("end\n");
        out
    }

    pub fn from_snapshot_str(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Snapshot(msg.to_string());
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty snapshot"))?;
        match header.split_whitespace().collect::<Vec<_>>().as_slice() {
            [magic, version] if *magic == SNAPSHOT_MAGIC => {
                if version.parse::<u32>().ok() != Some(SNAPSHOT_VERSION) {
                    return Err(bad(&format!("unsupported snapshot version {version}")));
                }
            }
            _ => return Err(bad("not a value-network snapshot")),
        }
        let plan_line = lines.next().ok_or_else(|| bad("missing channel plan"))?;
        let plan: Vec<usize> = plan_line
            .strip_prefix("plan ")
            .ok_or_else(|| bad("missing channel plan"))?
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| bad("malformed channel plan")))
            .collect::<Result<_>>()?;
        if plan != CHANNEL_PLAN {
            return Err(Error::Shape(format!(
                "snapshot channel plan {plan:?} does not match {CHANNEL_PLAN:?}"
            )));
        }
        let seed = lines
            .next()
            .and_then(|l| l.strip_prefix("seed "))
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| bad("missing seed"))?;

        let mut net = Self::zeros();
        net.seed = seed;
        for (l, layer) in net.layers.iter_mut().enumerate() {
            let expected = format!("layer {l} {}", layer.activation.name());
            if lines.next().map(str::trim) != Some(expected.as_str()) {
                return Err(bad(&format!("expected `{expected}`")));
            }
            read_values(lines.next(), "w", &mut layer.weights)?;
            read_values(lines.next(), "b", &mut layer.biases)?;
            if !layer.is_finite() {
                return Err(bad("non-finite parameter in snapshot"));
            }
        }
        if lines.next().map(str::trim) != Some("end") {
            return Err(bad("truncated snapshot (missing end marker)"));
        }
        Ok(net)
    }

    pub fn save_weights(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_snapshot_string())?;
        Ok(())
    }

    pub fn load_weights(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Snapshot(format!("reading {}: {e}", path.display())))?;
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Snapshot("snapshot is not UTF-8".into()))?;
        Self::from_snapshot_str(&text)
    }
}

fn write_values(out: &mut String, tag: &str, values: &[f64]) {
    out.push_str(tag);
    for v in values {
        write!(out, " {v:e}").unwrap();
    }
    out.push('\n');
}

fn read_values(line: Option<&str>, tag: &str, dst: &mut [f64]) -> Result<()> {
    let line = line.ok_or_else(|| Error::Snapshot("truncated snapshot".into()))?;
    let mut fields = line.split_whitespace();
    if fields.next() != Some(tag) {
        return Err(Error::Snapshot(format!("expected `{tag}` record")));
    }
    let values: Vec<f64> = fields
        .map(|v| {
            v.parse()
                .map_err(|_| Error::Snapshot(format!("bad value `{v}`")))
        })
        .collect::<Result<_>>()?;
    if values.len() != dst.len() {
        return Err(Error::Snapshot(format!(
            "`{tag}` record has {} values, expected {}",
            values.len(),
            dst.len()
        )));
    }
    dst.copy_from_slice(&values);
    Ok(())
}
