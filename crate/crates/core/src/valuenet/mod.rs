//! Social-attention value network.
//!
//! Every entity row `[s_r, s_o, onehot(e)]` is embedded by `phi_g` into
//! `g_i`, turned into an interaction feature `h_i = psi_h(g_i)` and scored
//! `alpha_i = psi_alpha(g_i, mean(g))`. The crowd vector is the softmax
//! weighted sum of the `h_i`; the value head sees `[s_r, c]`.
//!
//! All parameters live in one flat `Vec<f64>` so that SGD, checkpoints and
//! gradient checks work on a single buffer. Hidden layers use ReLU; the
//! scalar attention and value outputs are linear.

mod checkpoint;

pub use checkpoint::{load_checkpoint, load_checkpoint_bytes, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{accumulate_outer, matmul_w, matmul_wt};
use crate::state::{EntityObservation, JointState, RobotStateVector};

pub const ROBOT_WIDTH: usize = RobotStateVector::WIDTH;
pub const ENTITY_WIDTH: usize = EntityObservation::NUMERIC_WIDTH;
pub const TYPE_WIDTH: usize = 4;

/// Hidden-layer sizes of the four sub-networks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    /// `phi_g`; the last entry is the width of `g_i`.
    pub embed: Vec<usize>,
    /// `psi_h`; the last entry is the width of `h_i`.
    pub interaction: Vec<usize>,
    /// `psi_alpha` hidden sizes; a scalar output layer follows.
    pub attention: Vec<usize>,
    /// `f_v` hidden sizes; a scalar output layer follows.
    pub value: Vec<usize>,
    pub include_entity_type: bool,
}

impl NetworkShape {
    pub fn standard(include_entity_type: bool) -> Self {
        NetworkShape {
            embed: vec![300, 200],
            interaction: vec![200, 100],
            attention: vec![200, 200],
            value: vec![300, 200, 200],
            include_entity_type,
        }
    }

    /// Every hidden size divided by ten; used for gradient checks.
    pub fn reduced(include_entity_type: bool) -> Self {
        let s = Self::standard(include_entity_type);
        let div = |v: Vec<usize>| v.into_iter().map(|x| x / 10).collect();
        NetworkShape {
            embed: div(s.embed),
            interaction: div(s.interaction),
            attention: div(s.attention),
            value: div(s.value),
            include_entity_type,
        }
    }

    pub fn row_width(&self) -> usize {
        ROBOT_WIDTH + ENTITY_WIDTH + if self.include_entity_type { TYPE_WIDTH } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = !self.embed.is_empty()
            && !self.interaction.is_empty()
            && !self.attention.is_empty()
            && !self.value.is_empty()
            && [&self.embed, &self.interaction, &self.attention, &self.value]
                .iter()
                .all(|v| v.iter().all(|&x| x > 0));
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("bad network shape {self:?}")))
        }
    }

    fn embed_width(&self) -> usize {
        *self.embed.last().expect("validated")
    }

    fn interaction_width(&self) -> usize {
        *self.interaction.last().expect("validated")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Layer {
    input: usize,
    output: usize,
    weight: usize,
    bias: usize,
    relu: bool,
}

#[derive(Clone, Debug, PartialEq)]
struct Mlp {
    layers: Vec<Layer>,
}

impl Mlp {
    fn build(dims: &[usize], relu_last: bool, offset: &mut usize) -> Mlp {
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (input, output) = (dims[i], dims[i + 1]);
                let weight = *offset;
                let bias = weight + input * output;
                *offset = bias + output;
                Layer {
                    input,
                    output,
                    weight,
                    bias,
                    relu: i + 1 < n || relu_last,
                }
            })
            .collect();
        Mlp { layers }
    }

    fn input(&self) -> usize {
        self.layers[0].input
    }

    fn output(&self) -> usize {
        self.layers.last().expect("nonempty").output
    }

    /// Returns every activation, input first.
    fn forward(&self, params: &[f64], input: Vec<f64>, rows: usize) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input);
        for l in &self.layers {
            let x = acts.last().expect("nonempty");
            let mut out = vec![0.0; rows * l.output];
            let w = &params[l.weight..l.weight + l.input * l.output];
            let b = &params[l.bias..l.bias + l.output];
            matmul_wt(x, w, rows, l.input, l.output, &mut out);
            for row in out.chunks_exact_mut(l.output) {
                for (o, bias) in row.iter_mut().zip(b) {
                    *o += bias;
                    if l.relu && *o < 0.0 {
                        *o = 0.0;
                    }
                }
            }
            acts.push(out);
        }
        acts
    }

    /// Accumulates parameter gradients; returns the input gradient when asked.
    fn backward(
        &self,
        params: &[f64],
        acts: &[Vec<f64>],
        mut d_out: Vec<f64>,
        rows: usize,
        grads: &mut [f64],
        want_input_grad: bool,
    ) -> Option<Vec<f64>> {
        for (i, l) in self.layers.iter().enumerate().rev() {
            let out = &acts[i + 1];
            let inp = &acts[i];
            if l.relu {
                for (d, &o) in d_out.iter_mut().zip(out) {
                    if o <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            accumulate_outer(
                &d_out,
                inp,
                rows,
                l.input,
                l.output,
                &mut grads[l.weight..l.weight + l.input * l.output],
            );
            let gb = &mut grads[l.bias..l.bias + l.output];
            for row in d_out.chunks_exact(l.output) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            if i > 0 || want_input_grad {
                let mut d_in = vec![0.0; rows * l.input];
                let w = &params[l.weight..l.weight + l.input * l.output];
                matmul_w(&d_out, w, rows, l.input, l.output, &mut d_in);
                d_out = d_in;
            } else {
                return None;
            }
        }
        Some(d_out)
    }
}

/// One joint state laid out for the network: `rows` entity rows of
/// `width` features, each starting with the robot vector.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkInput {
    pub robot: [f64; ROBOT_WIDTH],
    pub features: Vec<f64>,
    pub rows: usize,
    pub width: usize,
}

impl NetworkInput {
    pub fn from_joint(state: &JointState, include_entity_type: bool) -> Self {
        let robot = state.robot.to_array();
        let width = ROBOT_WIDTH + ENTITY_WIDTH + if include_entity_type { TYPE_WIDTH } else { 0 };
        let mut features = Vec::with_capacity(width * state.entities.len());
        for e in &state.entities {
            features.extend_from_slice(&robot);
            features.extend_from_slice(&e.numeric());
            if include_entity_type {
                features.extend_from_slice(&e.kind.one_hot());
            }
        }
        NetworkInput {
            robot,
            features,
            rows: state.entities.len(),
            width,
        }
    }

    /// Reorders entity rows; row `i` of the result is row `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        assert_eq!(order.len(), self.rows);
        let mut features = Vec::with_capacity(self.features.len());
        for &i in order {
            features.extend_from_slice(&self.features[i * self.width..(i + 1) * self.width]);
        }
        NetworkInput {
            features,
            ..self.clone()
        }
    }
}

/// Anything that can score a batch of joint states.
pub trait ValueEstimator: Sync {
    fn include_entity_type(&self) -> bool;
    fn values(&self, inputs: &[NetworkInput]) -> Vec<f64>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Forward {
    pub value: f64,
    pub attention: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueNetwork {
    shape: NetworkShape,
    embed: Mlp,
    interaction: Mlp,
    attention: Mlp,
    value: Mlp,
    params: Vec<f64>,
}

/// Intermediate results of a batched forward pass, kept for backward.
struct Cache {
    offsets: Vec<usize>,
    embed: Vec<Vec<f64>>,
    interaction: Vec<Vec<f64>>,
    attention: Vec<Vec<f64>>,
    weights: Vec<f64>,
    value: Vec<Vec<f64>>,
}

impl Cache {
    fn values(&self) -> &[f64] {
        self.value.last().expect("nonempty")
    }
}

impl ValueNetwork {
    /// Leaky-He uniform weights (negative slope sqrt(5), so the bound is
    /// `1/sqrt(fan_in)`) and zero biases from `seed`.
    pub fn new(shape: NetworkShape, seed: u64) -> Result<Self> {
        let mut net = Self::zeroed(shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for mlp in [&net.embed, &net.interaction, &net.attention, &net.value] {
            for l in &mlp.layers {
                let bound = (1.0 / l.input as f64).sqrt();
                for w in &mut net.params[l.weight..l.weight + l.input * l.output] {
                    *w = rng.random_range(-bound..bound);
                }
            }
        }
        Ok(net)
    }

    pub(crate) fn zeroed(shape: NetworkShape) -> Result<Self> {
        shape.validate()?;
        let mut offset = 0;
        let mut dims = vec![shape.row_width()];
        dims.extend(&shape.embed);
        let embed = Mlp::build(&dims, true, &mut offset);

        let mut dims = vec![shape.embed_width()];
        dims.extend(&shape.interaction);
        let interaction = Mlp::build(&dims, true, &mut offset);

        let mut dims = vec![2 * shape.embed_width()];
        dims.extend(&shape.attention);
        dims.push(1);
        let attention = Mlp::build(&dims, false, &mut offset);

        let mut dims = vec![ROBOT_WIDTH + shape.interaction_width()];
        dims.extend(&shape.value);
        dims.push(1);
        let value = Mlp::build(&dims, false, &mut offset);

        Ok(ValueNetwork {
            shape,
            embed,
            interaction,
            attention,
            value,
            params: vec![0.0; offset],
        })
    }

    pub fn shape(&self) -> &NetworkShape {
        &self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// `(input, output)` of every layer in storage order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        [&self.embed, &self.interaction, &self.attention, &self.value]
            .iter()
            .flat_map(|m| m.layers.iter().map(|l| (l.input, l.output)))
            .collect()
    }

    fn check_input(&self, input: &NetworkInput) {
        assert_eq!(
            input.width,
            self.shape.row_width(),
            "input built for a different entity-type setting"
        );
        assert_eq!(input.features.len(), input.rows * input.width);
    }

    fn forward_cached(&self, batch: &[&NetworkInput]) -> Cache {
        let width = self.shape.row_width();
        let g_w = self.embed.output();
        let h_w = self.interaction.output();
        let mut offsets = Vec::with_capacity(batch.len() + 1);
        offsets.push(0);
        let mut x = Vec::with_capacity(batch.iter().map(|b| b.features.len()).sum());
        for b in batch {
            self.check_input(b);
            x.extend_from_slice(&b.features);
            offsets.push(offsets.last().expect("nonempty") + b.rows);
        }
        let total = *offsets.last().expect("nonempty");

        let embed = self.embed.forward(&self.params, x, total);
        let g = embed.last().expect("nonempty");
        let interaction = self.interaction.forward(&self.params, g.clone(), total);

        // [g_i, mean_k g_k] per row
        let mut att_in = vec![0.0; total * 2 * g_w];
        for s in 0..batch.len() {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            if lo == hi {
                continue;
            }
            let mut mean = vec![0.0; g_w];
            for r in lo..hi {
                for (m, v) in mean.iter_mut().zip(&g[r * g_w..(r + 1) * g_w]) {
                    *m += v;
                }
            }
            let inv = 1.0 / (hi - lo) as f64;
            mean.iter_mut().for_each(|m| *m *= inv);
            for r in lo..hi {
                let row = &mut att_in[r * 2 * g_w..(r + 1) * 2 * g_w];
                row[..g_w].copy_from_slice(&g[r * g_w..(r + 1) * g_w]);
                row[g_w..].copy_from_slice(&mean);
            }
        }
        let attention = self.attention.forward(&self.params, att_in, total);
        let scores = attention.last().expect("nonempty");

        let h = interaction.last().expect("nonempty");
        let mut weights = vec![0.0; total];
        let mut value_in = vec![0.0; batch.len() * (ROBOT_WIDTH + h_w)];
        for (s, b) in batch.iter().enumerate() {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            let row = &mut value_in[s * (ROBOT_WIDTH + h_w)..(s + 1) * (ROBOT_WIDTH + h_w)];
            row[..ROBOT_WIDTH].copy_from_slice(&b.robot);
            if lo == hi {
                continue;
            }
            let max = scores[lo..hi].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for r in lo..hi {
                weights[r] = (scores[r] - max).exp();
                sum += weights[r];
            }
            let crowd = &mut row[ROBOT_WIDTH..];
            for r in lo..hi {
                weights[r] /= sum;
                for (c, v) in crowd.iter_mut().zip(&h[r * h_w..(r + 1) * h_w]) {
                    *c += weights[r] * v;
                }
            }
        }
        let value = self.value.forward(&self.params, value_in, batch.len());
        debug_assert_eq!(width, self.embed.input());
        Cache {
            offsets,
            embed,
            interaction,
            attention,
            weights,
            value,
        }
    }

    /// Value and softmax attention weights for one joint state. With no
    /// entities the crowd vector is zero and the attention is empty.
    pub fn forward(&self, input: &NetworkInput) -> Forward {
        let cache = self.forward_cached(&[input]);
        Forward {
            value: cache.values()[0],
            attention: cache.weights,
        }
    }

    /// On/off state of every ReLU unit for `input`. Two parameter vectors
    /// with the same pattern lie on the same smooth piece of the network.
    pub fn relu_pattern(&self, input: &NetworkInput) -> Vec<bool> {
        let cache = self.forward_cached(&[input]);
        let mut out = Vec::new();
        for (mlp, acts) in [
            (&self.embed, &cache.embed),
            (&self.interaction, &cache.interaction),
            (&self.attention, &cache.attention),
            (&self.value, &cache.value),
        ] {
            for (l, a) in mlp.layers.iter().zip(&acts[1..]) {
                if l.relu {
                    out.extend(a.iter().map(|&v| v > 0.0));
                }
            }
        }
        out
    }

    /// Values for a batch, evaluated with one matrix product per layer.
    pub fn forward_batch(&self, inputs: &[NetworkInput]) -> Vec<f64> {
        let refs: Vec<&NetworkInput> = inputs.iter().collect();
        self.forward_cached(&refs).values().to_vec()
    }

    fn backward(&self, batch_len: usize, cache: &Cache, d_value: &[f64]) -> Vec<f64> {
        let mut grads = vec![0.0; self.params.len()];
        let g_w = self.embed.output();
        let h_w = self.interaction.output();
        let total = *cache.offsets.last().expect("nonempty");

        let d_value_in = self
            .value
            .backward(&self.params, &cache.value, d_value.to_vec(), batch_len, &mut grads, true)
            .expect("input gradient requested");

        let h = cache.interaction.last().expect("nonempty");
        let mut d_h = vec![0.0; total * h_w];
        let mut d_scores = vec![0.0; total];
        for s in 0..batch_len {
            let (lo, hi) = (cache.offsets[s], cache.offsets[s + 1]);
            if lo == hi {
                continue;
            }
            let d_crowd = &d_value_in[s * (ROBOT_WIDTH + h_w) + ROBOT_WIDTH..(s + 1) * (ROBOT_WIDTH + h_w)];
            // dL/dw_r = h_r . dc, then through the softmax
            let mut weighted = 0.0;
            for r in lo..hi {
                let hr = &h[r * h_w..(r + 1) * h_w];
                let dw: f64 = hr.iter().zip(d_crowd).map(|(a, b)| a * b).sum();
                d_scores[r] = dw;
                weighted += cache.weights[r] * dw;
                for (d, dc) in d_h[r * h_w..(r + 1) * h_w].iter_mut().zip(d_crowd) {
                    *d = cache.weights[r] * dc;
                }
            }
            for r in lo..hi {
                d_scores[r] = cache.weights[r] * (d_scores[r] - weighted);
            }
        }

        let d_att_in = self
            .attention
            .backward(&self.params, &cache.attention, d_scores, total, &mut grads, true)
            .expect("input gradient requested");
        let d_g_inter = self
            .interaction
            .backward(&self.params, &cache.interaction, d_h, total, &mut grads, true)
            .expect("input gradient requested");

        let mut d_g = d_g_inter;
        for s in 0..batch_len {
            let (lo, hi) = (cache.offsets[s], cache.offsets[s + 1]);
            if lo == hi {
                continue;
            }
            let mut d_mean = vec![0.0; g_w];
            for r in lo..hi {
                let row = &d_att_in[r * 2 * g_w..(r + 1) * 2 * g_w];
                for (m, v) in d_mean.iter_mut().zip(&row[g_w..]) {
                    *m += v;
                }
            }
            let inv = 1.0 / (hi - lo) as f64;
            for r in lo..hi {
                let row = &d_att_in[r * 2 * g_w..(r + 1) * 2 * g_w];
                for ((d, direct), m) in d_g[r * g_w..(r + 1) * g_w]
                    .iter_mut()
                    .zip(&row[..g_w])
                    .zip(&d_mean)
                {
                    *d += direct + m * inv;
                }
            }
        }

        self.embed
            .backward(&self.params, &cache.embed, d_g, total, &mut grads, false);
        grads
    }

    /// Mean squared error of the batch and its gradient.
    pub fn loss_and_gradient(&self, batch: &[(NetworkInput, f64)]) -> (f64, Vec<f64>) {
        let refs: Vec<&NetworkInput> = batch.iter().map(|(i, _)| i).collect();
        let cache = self.forward_cached(&refs);
        let n = batch.len() as f64;
        let values = cache.values();
        let mut loss = 0.0;
        let d_value: Vec<f64> = values
            .iter()
            .zip(batch)
            .map(|(v, (_, target))| {
                let err = v - target;
                loss += err * err;
                2.0 * err / n
            })
            .collect();
        (loss / n, self.backward(batch.len(), &cache, &d_value))
    }

    pub fn loss(&self, batch: &[(NetworkInput, f64)]) -> f64 {
        let refs: Vec<&NetworkInput> = batch.iter().map(|(i, _)| i).collect();
        let cache = self.forward_cached(&refs);
        let n = batch.len() as f64;
        cache
            .values()
            .iter()
            .zip(batch)
            .map(|(v, (_, t))| (v - t) * (v - t))
            .sum::<f64>()
            / n
    }

    /// One plain SGD step on the MSE loss; returns the loss before the
    /// step. Non-finite loss or gradients leave the weights untouched.
    pub fn train_batch(&mut self, batch: &[(NetworkInput, f64)], learning_rate: f64) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InvalidParameter("empty training batch".into()));
        }
        let (loss, grads) = self.loss_and_gradient(batch);
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence(format!(
                "non-finite loss or gradient (loss = {loss})"
            )));
        }
        for (p, g) in self.params.iter_mut().zip(&grads) {
            *p -= learning_rate * g;
        }
        Ok(loss)
    }

    /// Stable digest of the parameter bits.
    pub fn fingerprint(&self) -> u64 {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for p in &self.params {
            hasher.update(p.to_le_bytes());
        }
        let digest = hasher.finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(bytes)
    }
}

impl ValueEstimator for ValueNetwork {
    fn include_entity_type(&self) -> bool {
        self.shape.include_entity_type
    }

    fn values(&self, inputs: &[NetworkInput]) -> Vec<f64> {
        self.forward_batch(inputs)
    }
}

#[cfg(test)]
mod tests;
