//! Feed-forward building blocks: dense layers, small MLPs with an optional
//! bounded output head, and MADE mask construction plus the masked network
//! that emits all autoregressive conditional parameters in one pass.

use super::{NodeId, Tape, Tensor};
use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn build(self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        match self {
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
            Activation::Identity => Ok(x),
        }
    }

    fn eval(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }
}

/// One affine layer: `y = act(x W^T + b)`, weights stored out-by-in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl DenseLayer {
    /// Uniform(-a, a) init with a = sqrt(6 / (fan_in + fan_out)).
    fn glorot(out_dim: usize, in_dim: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let a = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let data = (0..out_dim * in_dim).map(|_| rng.gen_range(-a..a)).collect();
        Self {
            weights: Tensor::from_vec(out_dim, in_dim, data),
            bias: Tensor::zeros(1, out_dim),
            activation,
        }
    }

    fn zeroed(out_dim: usize, in_dim: usize, activation: Activation) -> Self {
        Self {
            weights: Tensor::zeros(out_dim, in_dim),
            bias: Tensor::zeros(1, out_dim),
            activation,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }
}

/// Small MLP used for coupling-layer scale and translation functions.
///
/// With `bound` set, the raw output is squashed as `tanh(raw) * bound` with a
/// learnable 1x1 bound, which keeps downstream `exp` calls from overflowing.
/// The final affine layer is zero-initialized so a fresh network computes the
/// zero function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
    pub bound: Option<Tensor>,
}

/// Initial value of the learnable output bound.
pub const OUTPUT_BOUND_INIT: f64 = 3.0;

impl Mlp {
    /// `dims` = [in, hidden..., out]; hidden activations are tanh.
    pub fn new(dims: &[usize], bounded: bool, rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "MLP needs input and output dims");
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            let last = i == dims.len() - 2;
            layers.push(if last {
                DenseLayer::zeroed(dims[i + 1], dims[i], Activation::Identity)
            } else {
                DenseLayer::glorot(dims[i + 1], dims[i], Activation::Tanh, rng)
            });
        }
        Self {
            layers,
            bound: bounded.then(|| Tensor::scalar(OUTPUT_BOUND_INIT)),
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p: Vec<&Tensor> = self
            .layers
            .iter()
            .flat_map(|l| [&l.weights, &l.bias])
            .collect();
        if let Some(b) = &self.bound {
            p.push(b);
        }
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p: Vec<&mut Tensor> = self
            .layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias])
            .collect();
        if let Some(b) = &mut self.bound {
            p.push(b);
        }
        p
    }

    pub fn param_count(&self) -> usize {
        2 * self.layers.len() + usize::from(self.bound.is_some())
    }

    /// Tape forward. `params` must hold this MLP's parameters in
    /// [`Mlp::params`] order.
    pub fn build(&self, tape: &mut Tape, x: NodeId, params: &[NodeId]) -> Result<NodeId> {
        assert_eq!(params.len(), self.param_count());
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = tape.matmul_t(h, params[2 * i])?;
            let z = tape.add_row(z, params[2 * i + 1])?;
            h = layer.activation.build(tape, z)?;
        }
        if self.bound.is_some() {
            let squashed = tape.tanh(h)?;
            h = tape.mul_scalar(squashed, params[self.param_count() - 1])?;
        }
        Ok(h)
    }

    /// Plain batched forward used where gradients are never needed.
    pub fn eval(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = dense_eval(&h, layer, None)?;
        }
        if let Some(b) = &self.bound {
            let s = b.data()[0];
            for v in h.data_mut() {
                *v = v.tanh() * s;
            }
        }
        if !h.is_finite() {
            return Err(Error::NonFinite { op: "mlp_eval" });
        }
        Ok(h)
    }
}

fn dense_eval(x: &Tensor, layer: &DenseLayer, mask: Option<&Tensor>) -> Result<Tensor> {
    let (n, out, inner) = (x.rows(), layer.out_dim(), layer.in_dim());
    assert_eq!(x.cols(), inner, "dense layer input width");
    let mut y = Tensor::zeros(n, out);
    for r in 0..n {
        let xr = x.row_slice(r);
        for o in 0..out {
            let wr = layer.weights.row_slice(o);
            let mut acc = layer.bias.data()[o];
            match mask {
                None => {
                    for k in 0..inner {
                        acc += xr[k] * wr[k];
                    }
                }
                Some(m) => {
                    let mr = m.row_slice(o);
                    for k in 0..inner {
                        acc += xr[k] * wr[k] * mr[k];
                    }
                }
            }
            y.set(r, o, layer.activation.eval(acc));
        }
    }
    if !y.is_finite() {
        return Err(Error::NonFinite { op: "dense_eval" });
    }
    Ok(y)
}

/// Degree assignment and binary masks enforcing strict autoregressive
/// connectivity: the outputs for dimension d may depend only on inputs with
/// degree < d. One output mask serves both the mean and log-std halves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MadeMaskSet {
    pub input_degrees: Vec<usize>,
    pub hidden_degrees: Vec<Vec<usize>>,
    /// Per hidden layer, shaped like that layer's weight matrix.
    pub hidden_masks: Vec<Tensor>,
    /// Shaped [D x h_last]; duplicated across the two output halves.
    pub output_mask: Tensor,
}

/// Builds MADE masks for input dimension `d_in`, the given hidden sizes, and
/// an input-order permutation of 1..=D. Hidden degrees cycle deterministically
/// through 1..=D-1 (all 1 for the degenerate D = 1 case, where outputs end up
/// with no input connections at all).
pub fn build_made_masks(d_in: usize, hidden: &[usize], order: &[usize]) -> Result<MadeMaskSet> {
    if d_in == 0 {
        return Err(Error::InvalidParameter("MADE input dimension must be >= 1".into()));
    }
    if hidden.iter().any(|&h| h == 0) {
        return Err(Error::InvalidParameter("MADE hidden sizes must be >= 1".into()));
    }
    if order.len() != d_in {
        return Err(Error::InvalidParameter(format!(
            "order length {} != input dimension {d_in}",
            order.len()
        )));
    }
    let mut seen = vec![false; d_in];
    for &o in order {
        if o == 0 || o > d_in || seen[o - 1] {
            return Err(Error::InvalidParameter(format!(
                "order must be a permutation of 1..={d_in}"
            )));
        }
        seen[o - 1] = true;
    }

    let input_degrees = order.to_vec();
    let cycle = d_in.saturating_sub(1).max(1);
    let hidden_degrees: Vec<Vec<usize>> = hidden
        .iter()
        .map(|&h| (0..h).map(|k| k % cycle + 1).collect())
        .collect();

    let mut hidden_masks = Vec::with_capacity(hidden.len());
    let mut prev: &[usize] = &input_degrees;
    for degs in &hidden_degrees {
        let mut mask = Tensor::zeros(degs.len(), prev.len());
        for (u, &du) in degs.iter().enumerate() {
            for (v, &dv) in prev.iter().enumerate() {
                if du >= dv {
                    mask.set(u, v, 1.0);
                }
            }
        }
        hidden_masks.push(mask);
        prev = degs;
    }

    let mut output_mask = Tensor::zeros(d_in, prev.len());
    for d in 0..d_in {
        for (v, &dv) in prev.iter().enumerate() {
            if d + 1 > dv {
                output_mask.set(d, v, 1.0);
            }
        }
    }

    Ok(MadeMaskSet {
        input_degrees,
        hidden_degrees,
        hidden_masks,
        output_mask,
    })
}

impl MadeMaskSet {
    /// Output mask stacked for the (mean, log-std) output pair: [2D x h_last].
    fn stacked_output_mask(&self) -> Tensor {
        let (d, h) = (self.output_mask.rows(), self.output_mask.cols());
        let mut m = Tensor::zeros(2 * d, h);
        for r in 0..d {
            for c in 0..h {
                let v = self.output_mask.get(r, c);
                m.set(r, c, v);
                m.set(r + d, c, v);
            }
        }
        m
    }
}

/// Masked autoencoder emitting, in a single pass, the conditional mean and
/// (bounded) log-std for every dimension. Counts forward passes so the
/// sequential cost of autoregressive generation is observable.
#[derive(Debug)]
pub struct MadeNetwork {
    pub dim: usize,
    pub masks: MadeMaskSet,
    pub layers: Vec<DenseLayer>,
    /// Learnable 1x1 bound for the log-std head: alpha = tanh(raw) * bound.
    pub alpha_bound: Tensor,
    pass_count: AtomicU64,
    stacked_mask: Tensor,
}

impl Clone for MadeNetwork {
    fn clone(&self) -> Self {
        Self {
            dim: self.dim,
            masks: self.masks.clone(),
            layers: self.layers.clone(),
            alpha_bound: self.alpha_bound.clone(),
            pass_count: AtomicU64::new(self.pass_count.load(Ordering::Relaxed)),
            stacked_mask: self.stacked_mask.clone(),
        }
    }
}

impl MadeNetwork {
    pub fn new(dim: usize, hidden: &[usize], order: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let masks = build_made_masks(dim, hidden, order)?;
        Self::from_parts(dim, masks, hidden, rng)
    }

    fn from_parts(dim: usize, masks: MadeMaskSet, hidden: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut in_dim = dim;
        for &h in hidden {
            layers.push(DenseLayer::glorot(h, in_dim, Activation::Tanh, rng));
            in_dim = h;
        }
        // Output layer zero-initialized: a fresh MADE is the identity flow.
        layers.push(DenseLayer::zeroed(2 * dim, in_dim, Activation::Identity));
        let stacked_mask = masks.stacked_output_mask();
        Ok(Self {
            dim,
            masks,
            layers,
            alpha_bound: Tensor::scalar(OUTPUT_BOUND_INIT),
            pass_count: AtomicU64::new(0),
            stacked_mask,
        })
    }

    /// Assembles a network from an explicit mask set (custom degree
    /// assignments included).
    pub fn from_mask_set(
        dim: usize,
        masks: MadeMaskSet,
        layers: Vec<DenseLayer>,
        alpha_bound: Tensor,
    ) -> Self {
        let stacked_mask = masks.stacked_output_mask();
        Self {
            dim,
            masks,
            layers,
            alpha_bound,
            pass_count: AtomicU64::new(0),
            stacked_mask,
        }
    }

    /// Rebuilds a network from deserialized parameters.
    pub fn from_params(
        dim: usize,
        order: &[usize],
        layers: Vec<DenseLayer>,
        alpha_bound: Tensor,
    ) -> Result<Self> {
        let hidden: Vec<usize> = layers[..layers.len() - 1].iter().map(|l| l.out_dim()).collect();
        let masks = build_made_masks(dim, &hidden, order)?;
        let stacked_mask = masks.stacked_output_mask();
        Ok(Self {
            dim,
            masks,
            layers,
            alpha_bound,
            pass_count: AtomicU64::new(0),
            stacked_mask,
        })
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.out_dim())
            .collect()
    }

    pub fn passes(&self) -> u64 {
        self.pass_count.load(Ordering::Relaxed)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p: Vec<&Tensor> = self
            .layers
            .iter()
            .flat_map(|l| [&l.weights, &l.bias])
            .collect();
        p.push(&self.alpha_bound);
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p: Vec<&mut Tensor> = self
            .layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias])
            .collect();
        p.push(&mut self.alpha_bound);
        p
    }

    pub fn param_count(&self) -> usize {
        2 * self.layers.len() + 1
    }

    fn mask_for_layer(&self, i: usize) -> &Tensor {
        if i < self.masks.hidden_masks.len() {
            &self.masks.hidden_masks[i]
        } else {
            &self.stacked_mask
        }
    }

    /// Tape forward returning (mean, log_std) nodes, each [n x D].
    pub fn build(
        &self,
        tape: &mut Tape,
        x: NodeId,
        params: &[NodeId],
    ) -> Result<(NodeId, NodeId)> {
        assert_eq!(params.len(), self.param_count());
        self.pass_count.fetch_add(1, Ordering::Relaxed);
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = tape.masked_matmul_t(h, params[2 * i], self.mask_for_layer(i))?;
            let z = tape.add_row(z, params[2 * i + 1])?;
            h = layer.activation.build(tape, z)?;
        }
        let mu = tape.slice_cols(h, 0, self.dim)?;
        let alpha_raw = tape.slice_cols(h, self.dim, self.dim)?;
        let squashed = tape.tanh(alpha_raw)?;
        let alpha = tape.mul_scalar(squashed, params[self.param_count() - 1])?;
        Ok((mu, alpha))
    }

    /// Plain batched forward returning (mean, log_std), each [n x D].
    pub fn eval(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        self.pass_count.fetch_add(1, Ordering::Relaxed);
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = dense_eval(&h, layer, Some(self.mask_for_layer(i)))?;
        }
        let n = h.rows();
        let mut mu = Tensor::zeros(n, self.dim);
        let mut alpha = Tensor::zeros(n, self.dim);
        let bound = self.alpha_bound.data()[0];
        for r in 0..n {
            for d in 0..self.dim {
                mu.set(r, d, h.get(r, d));
                alpha.set(r, d, h.get(r, d + self.dim).tanh() * bound);
            }
        }
        Ok((mu, alpha))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn masks_for_two_dims_identity_order() {
        let set = build_made_masks(2, &[4], &[1, 2]).unwrap();
        // Every hidden unit has degree 1: sees only x1.
        for v in 0..2 {
            for u in 0..4 {
                let connected = set.hidden_masks[0].get(u, v) == 1.0;
                assert_eq!(connected, v == 0);
            }
        }
        // Output for d=1 is disconnected; d=2 sees all degree-1 hidden units.
        for u in 0..4 {
            assert_eq!(set.output_mask.get(0, u), 0.0);
            assert_eq!(set.output_mask.get(1, u), 1.0);
        }
    }

    #[test]
    fn degenerate_single_dim_network_is_input_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut made = MadeNetwork::new(1, &[8], &[1], &mut rng).unwrap();
        // Randomize everything, including the zero-initialized output layer.
        for p in made.params_mut() {
            for v in p.data_mut() {
                *v += 0.37;
            }
        }
        let (mu_a, al_a) = made.eval(&Tensor::row(&[5.0])).unwrap();
        let (mu_b, al_b) = made.eval(&Tensor::row(&[-2.0])).unwrap();
        assert_eq!(mu_a, mu_b);
        assert_eq!(al_a, al_b);
    }

    /// Exhaustive reachability over the mask graph: an input may influence an
    /// output dimension d only if its degree is < d.
    #[test]
    fn mask_graph_reachability_respects_autoregressive_order() {
        for (d_in, hidden) in [(2usize, vec![3usize]), (5, vec![7, 4]), (8, vec![16, 16])] {
            let order: Vec<usize> = (1..=d_in).collect();
            let set = build_made_masks(d_in, &hidden, &order).unwrap();

            for j in 0..d_in {
                // breadth-first: which units are reachable from input j?
                let mut reach: Vec<bool> = (0..d_in).map(|v| v == j).collect();
                for mask in &set.hidden_masks {
                    let mut next = vec![false; mask.rows()];
                    for u in 0..mask.rows() {
                        for (v, &r) in reach.iter().enumerate() {
                            if r && mask.get(u, v) == 1.0 {
                                next[u] = true;
                            }
                        }
                    }
                    reach = next;
                }
                for d in 0..d_in {
                    let reachable = (0..set.output_mask.cols())
                        .any(|v| reach[v] && set.output_mask.get(d, v) == 1.0);
                    let allowed = set.input_degrees[j] < d + 1;
                    assert!(
                        !reachable || allowed,
                        "input {j} must not reach output dim {}",
                        d + 1
                    );
                }
            }
        }
    }

    #[test]
    fn zeroing_later_inputs_never_changes_earlier_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut made = MadeNetwork::new(5, &[12, 12], &(1..=5).collect::<Vec<_>>(), &mut rng).unwrap();
        for p in made.params_mut() {
            for v in p.data_mut() {
                *v += 0.11;
            }
        }
        let x = Tensor::row(&[0.3, -0.8, 1.2, 0.05, -0.4]);
        let (mu, alpha) = made.eval(&x).unwrap();
        for j in 0..5 {
            let mut zeroed = x.clone();
            zeroed.data_mut()[j] = 0.0;
            let (mu_z, alpha_z) = made.eval(&zeroed).unwrap();
            for d in 0..=j {
                assert_eq!(mu.get(0, d), mu_z.get(0, d), "mu_{} depends on x_{}", d + 1, j + 1);
                assert_eq!(alpha.get(0, d), alpha_z.get(0, d));
            }
        }
    }

    #[test]
    fn fresh_mlp_is_the_zero_function() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::new(&[3, 16, 2], true, &mut rng);
        let out = mlp.eval(&Tensor::row(&[1.0, -2.0, 0.5])).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0]);
    }

    #[test]
    fn mlp_tape_and_plain_eval_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut mlp = Mlp::new(&[4, 8, 3], true, &mut rng);
        for p in mlp.params_mut() {
            for v in p.data_mut() {
                *v += 0.21;
            }
        }
        let x = Tensor::from_vec(2, 4, vec![0.1, 0.2, -0.3, 0.4, -0.5, 0.6, 0.7, -0.8]);
        let plain = mlp.eval(&x).unwrap();

        let mut tape = Tape::new();
        let xl = tape.leaf(x);
        let params: Vec<NodeId> = mlp.params().iter().map(|p| tape.leaf((*p).clone())).collect();
        let out = mlp.build(&mut tape, xl, &params).unwrap();
        let taped = tape.value(out);
        for (a, b) in plain.data().iter().zip(taped.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
