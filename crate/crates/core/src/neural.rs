//! Small fully connected networks for the policy (actor) and critic.
//!
//! Parameters live in one flat vector, layer by layer: row-major weights
//! (`outputs x inputs`) followed by the bias. Adam moments share that layout,
//! which keeps the optimizer, the soft target update and serialization
//! simple loops over slices.
//!
//! A critic receives the action as an auxiliary input appended to the input of
//! one hidden layer (`inject_at`), not to the state input.

use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn slope(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    fn from_tag(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.eps > 0.0)
        {
            return Err(Error::Config(format!("invalid Adam settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerShape {
    inputs: usize,
    outputs: usize,
    act: Activation,
    offset: usize,
}

impl LayerShape {
    fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.inputs * self.outputs
    }

    fn bias(&self) -> std::ops::Range<usize> {
        let w = self.offset + self.inputs * self.outputs;
        w..w + self.outputs
    }

    fn len(&self) -> usize {
        (self.inputs + 1) * self.outputs
    }
}

/// Intermediate values of one forward pass, consumed by
/// [`DenseNet::backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    /// Input of every layer (auxiliary input already appended).
    inputs: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

/// Gradient of a scalar objective with respect to the network inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGrad {
    pub input: Vec<f64>,
    pub aux: Option<f64>,
}

#[derive(Clone, PartialEq)]
pub struct DenseNet {
    sizes: Vec<usize>,
    layers: Vec<LayerShape>,
    inject_at: Option<usize>,
    params: Vec<f64>,
    adam_m: Vec<f64>,
    adam_v: Vec<f64>,
    adam_t: u64,
}

impl fmt::Debug for DenseNet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DenseNet")
            .field("sizes", &self.sizes)
            .field("inject_at", &self.inject_at)
            .field("params", &self.params.len())
            .field("adam_t", &self.adam_t)
            .finish()
    }
}

impl DenseNet {
    /// Zero-initialized network. `sizes` lists layer widths from input to
    /// output, `acts` one activation per affine layer.
    pub fn zeros(sizes: &[usize], acts: &[Activation], inject_at: Option<usize>) -> Result<Self> {
        if sizes.len() < 2 || acts.len() != sizes.len() - 1 || sizes.contains(&0) {
            return Err(Error::Shape(format!(
                "{} layer sizes need {} activations and non-zero widths",
                sizes.len(),
                sizes.len().saturating_sub(1)
            )));
        }
        if let Some(k) = inject_at {
            if k == 0 || k >= acts.len() {
                return Err(Error::Shape(format!(
                    "auxiliary input must enter a hidden layer, got layer {k}"
                )));
            }
        }
        let mut layers = Vec::with_capacity(acts.len());
        let mut offset = 0;
        for (l, &act) in acts.iter().enumerate() {
            let inputs = sizes[l] + usize::from(inject_at == Some(l));
            let shape = LayerShape {
                inputs,
                outputs: sizes[l + 1],
                act,
                offset,
            };
            offset += shape.len();
            layers.push(shape);
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            layers,
            inject_at,
            params: vec![0.0; offset],
            adam_m: vec![0.0; offset],
            adam_v: vec![0.0; offset],
            adam_t: 0,
        })
    }

    /// Weights and biases drawn uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn random(
        sizes: &[usize],
        acts: &[Activation],
        inject_at: Option<usize>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut net = Self::zeros(sizes, acts, inject_at)?;
        for layer in net.layers.clone() {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for p in &mut net.params[layer.offset..layer.offset + layer.len()] {
                *p = rng.random_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    /// `input -> hidden -> hidden -> 1` with ReLU hidden units and tanh output.
    pub fn policy(input: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        Self::random(
            &[input, hidden, hidden, 1],
            &[Activation::Relu, Activation::Relu, Activation::Tanh],
            None,
            rng,
        )
    }

    /// `input -> hidden -> (hidden ++ action) -> hidden -> 1`, linear output.
    pub fn critic(input: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        Self::random(
            &[input, hidden, hidden, 1],
            &[Activation::Relu, Activation::Relu, Activation::Identity],
            Some(1),
            rng,
        )
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn inject_at(&self) -> Option<usize> {
        self.inject_at
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn output_activation(&self) -> Activation {
        self.layers.last().unwrap().act
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn adam_step_count(&self) -> u64 {
        self.adam_t
    }

    pub fn adam_moments(&self) -> (&[f64], &[f64]) {
        (&self.adam_m, &self.adam_v)
    }

    pub fn zero_grad(&self) -> Vec<f64> {
        vec![0.0; self.params.len()]
    }

    /// Clears Adam moments and the step counter, keeping the weights.
    pub fn reset_optimizer(&mut self) {
        self.adam_m.iter_mut().for_each(|m| *m = 0.0);
        self.adam_v.iter_mut().for_each(|v| *v = 0.0);
        self.adam_t = 0;
    }

    fn same_architecture(&self, other: &DenseNet) -> bool {
        self.sizes == other.sizes
            && self.layers == other.layers
            && self.inject_at == other.inject_at
    }

    fn check_inputs(&self, input: &[f64], aux: Option<f64>) -> Result<()> {
        if input.len() != self.sizes[0] {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.sizes[0],
                input.len()
            )));
        }
        if aux.is_some() != self.inject_at.is_some() {
            return Err(Error::Shape(
                "auxiliary input given to a network without an injection layer, or missing".into(),
            ));
        }
        Ok(())
    }

    fn affine(&self, layer: &LayerShape, x: &[f64], out: &mut Vec<f64>) {
        let w = &self.params[layer.weights()];
        let b = &self.params[layer.bias()];
        out.clear();
        out.extend(w.chunks_exact(layer.inputs).zip(b).map(|(row, &bias)| {
            let z = row.iter().zip(x).fold(bias, |acc, (wi, xi)| acc + wi * xi);
            layer.act.apply(z)
        }));
    }

    /// Forward pass keeping the intermediates needed by `backward`.
    pub fn forward(&self, input: &[f64], aux: Option<f64>) -> Result<Tape> {
        self.check_inputs(input, aux)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            if self.inject_at == Some(l) {
                x.push(aux.unwrap());
            }
            let mut y = Vec::with_capacity(layer.outputs);
            self.affine(layer, &x, &mut y);
            inputs.push(std::mem::replace(&mut x, y));
        }
        Ok(Tape { inputs, output: x })
    }

    /// Forward pass without a tape.
    pub fn predict(&self, input: &[f64], aux: Option<f64>) -> Result<Vec<f64>> {
        self.check_inputs(input, aux)?;
        let mut x = input.to_vec();
        let mut y = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            if self.inject_at == Some(l) {
                x.push(aux.unwrap());
            }
            self.affine(layer, &x, &mut y);
            std::mem::swap(&mut x, &mut y);
        }
        Ok(x)
    }

    /// Backpropagates `upstream = dObjective/dOutput` through a recorded pass,
    /// accumulating parameter gradients into `grads`. Returns the gradient with
    /// respect to the inputs, including the auxiliary one.
    pub fn backward(&self, tape: &Tape, upstream: &[f64], grads: &mut [f64]) -> Result<InputGrad> {
        if upstream.len() != self.output_len() || tape.inputs.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "upstream gradient has {} entries, network outputs {}",
                upstream.len(),
                self.output_len()
            )));
        }
        if grads.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "gradient buffer has {} entries, network has {} parameters",
                grads.len(),
                self.params.len()
            )));
        }
        let last = self.layers.last().unwrap();
        let mut delta: Vec<f64> = upstream
            .iter()
            .zip(&tape.output)
            .map(|(&g, &y)| g * last.act.slope(y))
            .collect();
        let mut aux_grad = None;
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let x = &tape.inputs[l];
            let w_range = layer.weights();
            {
                let (gw, gb) = grads[w_range.start..layer.bias().end].split_at_mut(w_range.len());
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                    for (g, &xi) in row.iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
            }
            let w = &self.params[w_range];
            let mut dx = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &w[o * layer.inputs..(o + 1) * layer.inputs];
                for (acc, &wi) in dx.iter_mut().zip(row) {
                    *acc += d * wi;
                }
            }
            if self.inject_at == Some(l) {
                aux_grad = dx.pop();
            }
            if l == 0 {
                return Ok(InputGrad {
                    input: dx,
                    aux: aux_grad,
                });
            }
            let prev_act = self.layers[l - 1].act;
            let prev_out = &tape.inputs[l];
            delta = dx
                .iter()
                .zip(prev_out)
                .map(|(&g, &y)| g * prev_act.slope(y))
                .collect();
        }
        unreachable!("loop returns at layer 0")
    }

    /// One Adam update with bias correction.
    pub fn adam_step(&mut self, grads: &[f64], cfg: &AdamConfig) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "gradient has {} entries, network has {} parameters",
                grads.len(),
                self.params.len()
            )));
        }
        self.adam_t += 1;
        let t = self.adam_t as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (((p, m), v), &g) in self
            .params
            .iter_mut()
            .zip(&mut self.adam_m)
            .zip(&mut self.adam_v)
            .zip(grads)
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        Ok(())
    }

    /// Polyak averaging `self <- tau * source + (1 - tau) * self`.
    pub fn soft_update(&mut self, source: &DenseNet, tau: f64) -> Result<()> {
        if !self.same_architecture(source) {
            return Err(Error::Shape(
                "soft update between different architectures".into(),
            ));
        }
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::Config(format!("tau must be in (0, 1], got {tau}")));
        }
        for (t, &s) in self.params.iter_mut().zip(&source.params) {
            *t = tau * s + (1.0 - tau) * *t;
        }
        Ok(())
    }

    /// Copies the weights of `source`, leaving this network's optimizer state.
    pub fn copy_weights_from(&mut self, source: &DenseNet) -> Result<()> {
        if !self.same_architecture(source) {
            return Err(Error::Shape(
                "weight copy between different architectures".into(),
            ));
        }
        self.params.copy_from_slice(&source.params);
        Ok(())
    }

    fn write_blocks(&self, out: &mut String, values: &[f64]) {
        for layer in &self.layers {
            for row in values[layer.weights()].chunks_exact(layer.inputs) {
                push_row(out, row);
            }
            push_row(out, &values[layer.bias()]);
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("NET1\n");
        out.push_str("sizes");
        for s in &self.sizes {
            out.push_str(&format!(" {s}"));
        }
        out.push_str("\nactivations");
        for l in &self.layers {
            out.push(' ');
            out.push_str(l.act.tag());
        }
        match self.inject_at {
            Some(k) => out.push_str(&format!("\ninject {k}\n")),
            None => out.push_str("\ninject none\n"),
        }
        out.push_str("params\n");
        self.write_blocks(&mut out, &self.params);
        out.push_str(&format!("adam {}\n", self.adam_t));
        self.write_blocks(&mut out, &self.adam_m);
        self.write_blocks(&mut out, &self.adam_v);
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_text().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| match e {
            TextError::Version(found) => Error::Version {
                path: path.into(),
                expected: "NET1",
                found,
            },
            TextError::Parse(m) => Error::parse(path, m),
        })
    }

    pub fn from_text(text: &str) -> Result<Self, TextError> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if header != "NET1" {
            return Err(TextError::Version(header.to_string()));
        }
        let perr = |m: &str| TextError::Parse(m.to_string());
        let mut tagged = |tag: &str| -> Result<Vec<&str>, TextError> {
            let line = lines.next().ok_or_else(|| perr("unexpected end of file"))?;
            let mut it = line.split_whitespace();
            if it.next() != Some(tag) {
                return Err(perr(&format!("expected `{tag}` line")));
            }
            Ok(it.collect())
        };
        let sizes: Vec<usize> = tagged("sizes")?
            .iter()
            .map(|t| t.parse())
            .collect::<Result<_, _>>()
            .map_err(|_| perr("bad layer size"))?;
        let acts: Vec<Activation> = tagged("activations")?
            .iter()
            .map(|t| {
                Activation::from_tag(t).ok_or_else(|| perr(&format!("unknown activation {t}")))
            })
            .collect::<Result<_, _>>()?;
        let inject = tagged("inject")?;
        let inject_at = match inject.as_slice() {
            ["none"] => None,
            [k] => Some(k.parse().map_err(|_| perr("bad inject index"))?),
            _ => return Err(perr("malformed inject line")),
        };
        let mut net =
            Self::zeros(&sizes, &acts, inject_at).map_err(|e| TextError::Parse(e.to_string()))?;
        if !tagged("params")?.is_empty() {
            return Err(perr("malformed params line"));
        }
        let layers = net.layers.clone();
        let read_blocks = |dst: &mut [f64], lines: &mut std::str::Lines| -> Result<(), TextError> {
            for layer in &layers {
                let rows = layer.outputs + 1;
                for r in 0..rows {
                    let line = lines
                        .next()
                        .ok_or_else(|| perr("truncated parameter block"))?;
                    let range = if r < layer.outputs {
                        let start = layer.offset + r * layer.inputs;
                        start..start + layer.inputs
                    } else {
                        layer.bias()
                    };
                    let dst = &mut dst[range];
                    let mut n = 0;
                    for tok in line.split_whitespace() {
                        if n == dst.len() {
                            return Err(perr("parameter row too long"));
                        }
                        dst[n] = tok.parse().map_err(|_| perr("bad parameter value"))?;
                        n += 1;
                    }
                    if n != dst.len() {
                        return Err(perr("parameter row too short"));
                    }
                }
            }
            Ok(())
        };
        read_blocks(&mut net.params, &mut lines)?;
        let adam = lines.next().ok_or_else(|| perr("missing adam section"))?;
        let t = adam
            .strip_prefix("adam ")
            .and_then(|t| t.trim().parse().ok())
            .ok_or_else(|| perr("malformed adam line"))?;
        net.adam_t = t;
        read_blocks(&mut net.adam_m, &mut lines)?;
        read_blocks(&mut net.adam_v, &mut lines)?;
        Ok(net)
    }
}

#[derive(Debug)]
pub enum TextError {
    Version(String),
    Parse(String),
}

fn push_row(out: &mut String, row: &[f64]) {
    let mut first = true;
    for v in row {
        if !first {
            out.push(' ');
        }
        first = false;
        // Display for f64 prints the shortest string that parses back exactly
        out.push_str(&v.to_string());
    }
    out.push('\n');
}

/// Bounded policy output `pi(s)` in `[-1, 1]`.
pub fn policy_forward(net: &DenseNet, features: &[f64]) -> Result<f64> {
    if net.output_len() != 1 || net.output_activation() != Activation::Tanh {
        return Err(Error::Shape(
            "policy network needs a single tanh output".into(),
        ));
    }
    Ok(net.predict(features, None)?[0])
}

/// Critic value `Q(s, a)`.
pub fn critic_forward(net: &DenseNet, features: &[f64], action: f64) -> Result<f64> {
    if net.output_len() != 1 || net.inject_at().is_none() {
        return Err(Error::Shape(
            "critic network needs a single output and an action input".into(),
        ));
    }
    Ok(net.predict(features, Some(action))?[0])
}
