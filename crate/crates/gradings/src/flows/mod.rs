//! Normalizing-flow density estimators: stacks of invertible layers over a
//! standard Gaussian base, with exact log-likelihood via the change of
//! variables rule.

mod coupling;
mod maf;
mod train;

pub use coupling::CouplingLayer;
pub use maf::MafLayer;
pub use train::{train_flow, TrainConfig, TrainedFlow};

use crate::autodiff::{Gradients, NodeId, Tape, Tensor};
use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlowKind {
    RealNvp,
    Maf,
}

impl fmt::Display for FlowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlowKind::RealNvp => "realnvp",
            FlowKind::Maf => "maf",
        })
    }
}

impl FromStr for FlowKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "realnvp" => Ok(FlowKind::RealNvp),
            "maf" => Ok(FlowKind::Maf),
            other => Err(Error::InvalidParameter(format!("unknown flow kind `{other}`"))),
        }
    }
}

/// Architecture of a flow stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub kind: FlowKind,
    pub dim: usize,
    pub num_flows: usize,
    pub hidden: Vec<usize>,
}

impl FlowConfig {
    pub fn new(kind: FlowKind, dim: usize) -> Self {
        Self {
            kind,
            dim,
            num_flows: 10,
            hidden: vec![32, 32],
        }
    }
}

/// One element of the bijection stack, listed base-to-data.
#[derive(Debug, Clone)]
pub enum FlowElement {
    Coupling(CouplingLayer),
    Maf(MafLayer),
    /// Fixed coordinate reversal mixing the transformed/untransformed blocks
    /// between consecutive flows.
    Reverse,
}

impl FlowElement {
    fn param_count(&self) -> usize {
        match self {
            FlowElement::Coupling(c) => c.param_count(),
            FlowElement::Maf(m) => m.param_count(),
            FlowElement::Reverse => 0,
        }
    }
}

/// A stack of invertible layers with a standard Gaussian base density.
#[derive(Debug, Clone)]
pub struct FlowModel {
    dim: usize,
    elements: Vec<FlowElement>,
}

impl FlowModel {
    /// Builds an identity-initialized stack: `num_flows` layers of the given
    /// kind with a coordinate reversal between consecutive flows.
    pub fn new(cfg: &FlowConfig, rng: &mut impl Rng) -> Result<Self> {
        if cfg.dim == 0 {
            return Err(Error::InvalidParameter("flow dimension must be >= 1".into()));
        }
        if cfg.kind == FlowKind::RealNvp && cfg.dim < 2 {
            return Err(Error::InvalidParameter(
                "coupling layers need dimension >= 2".into(),
            ));
        }
        let mut elements = Vec::new();
        for k in 0..cfg.num_flows {
            if k > 0 {
                elements.push(FlowElement::Reverse);
            }
            elements.push(match cfg.kind {
                FlowKind::RealNvp => FlowElement::Coupling(CouplingLayer::new(
                    cfg.dim,
                    cfg.dim / 2,
                    &cfg.hidden,
                    rng,
                )?),
                FlowKind::Maf => FlowElement::Maf(MafLayer::new(cfg.dim, &cfg.hidden, rng)?),
            });
        }
        Ok(Self {
            dim: cfg.dim,
            elements,
        })
    }

    pub fn from_elements(dim: usize, elements: Vec<FlowElement>) -> Self {
        Self { dim, elements }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn elements(&self) -> &[FlowElement] {
        &self.elements
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.elements
            .iter()
            .flat_map(|el| match el {
                FlowElement::Coupling(c) => c.params(),
                FlowElement::Maf(m) => m.params(),
                FlowElement::Reverse => Vec::new(),
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.elements
            .iter_mut()
            .flat_map(|el| match el {
                FlowElement::Coupling(c) => c.params_mut(),
                FlowElement::Maf(m) => m.params_mut(),
                FlowElement::Reverse => Vec::new(),
            })
            .collect()
    }

    /// All parameters flattened into one vector (finite-difference probes).
    pub fn flat_params(&self) -> Vec<f64> {
        self.params().iter().flat_map(|p| p.data().to_vec()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for p in self.params_mut() {
            let len = p.len();
            p.data_mut().copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    /// Builds the data-to-base pass on a tape. Returns the base-space batch
    /// and the per-row accumulated log-determinant ([n x 1], absent when the
    /// stack is empty).
    fn build_to_base(
        &self,
        tape: &mut Tape,
        x: NodeId,
        params: &[NodeId],
    ) -> Result<(NodeId, Option<NodeId>)> {
        let counts: Vec<usize> = self.elements.iter().map(FlowElement::param_count).collect();
        let mut offsets = Vec::with_capacity(counts.len());
        let mut acc = 0;
        for c in &counts {
            offsets.push(acc);
            acc += c;
        }
        assert_eq!(acc, params.len(), "parameter node count");

        let mut z = x;
        let mut logdet: Option<NodeId> = None;
        for (i, el) in self.elements.iter().enumerate().rev() {
            let pv = &params[offsets[i]..offsets[i] + counts[i]];
            let ld = match el {
                FlowElement::Coupling(c) => {
                    let (z2, ld) = c.build_to_base(tape, z, pv)?;
                    z = z2;
                    Some(ld)
                }
                FlowElement::Maf(m) => {
                    let (z2, ld) = m.build_to_base(tape, z, pv)?;
                    z = z2;
                    Some(ld)
                }
                FlowElement::Reverse => {
                    z = tape.reverse_cols(z)?;
                    None
                }
            };
            if let Some(ld) = ld {
                logdet = Some(match logdet {
                    Some(total) => tape.add(total, ld)?,
                    None => ld,
                });
            }
        }
        Ok((z, logdet))
    }

    /// Per-row log-density of the batch under the flow:
    /// `ln p(x) = ln N(z_0; 0, I) + sum_k logdet_k`.
    fn build_log_prob_rows(
        &self,
        tape: &mut Tape,
        x: NodeId,
        params: &[NodeId],
    ) -> Result<NodeId> {
        let (z, logdet) = self.build_to_base(tape, x, params)?;
        let zz = tape.mul(z, z)?;
        let sq = tape.sum_cols(zz)?;
        let half = tape.scale(sq, -0.5)?;
        let base = tape.add_const(half, -0.5 * self.dim as f64 * LN_2PI)?;
        match logdet {
            Some(ld) => tape.add(base, ld),
            None => Ok(base),
        }
    }

    fn register_params(&self, tape: &mut Tape) -> Vec<NodeId> {
        self.params().iter().map(|p| tape.leaf((*p).clone())).collect()
    }

    /// Exact log-density of a single vector.
    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_prob_batch_slices(&[x])?[0])
    }

    /// Exact log-density for a batch of rows.
    pub fn log_prob_batch(&self, xs: &Tensor) -> Result<Vec<f64>> {
        if xs.cols() != self.dim {
            return Err(Error::ConfigMismatch(format!(
                "model dimension {} vs input dimension {}",
                self.dim,
                xs.cols()
            )));
        }
        let mut tape = Tape::new();
        let x = tape.leaf(xs.clone());
        let params = self.register_params(&mut tape);
        let rows = self.build_log_prob_rows(&mut tape, x, &params)?;
        Ok(tape.value(rows).data().to_vec())
    }

    fn log_prob_batch_slices(&self, xs: &[&[f64]]) -> Result<Vec<f64>> {
        let mut data = Vec::with_capacity(xs.len() * self.dim);
        for x in xs {
            if x.len() != self.dim {
                return Err(Error::ConfigMismatch(format!(
                    "model dimension {} vs input dimension {}",
                    self.dim,
                    x.len()
                )));
            }
            data.extend_from_slice(x);
        }
        self.log_prob_batch(&Tensor::from_vec(xs.len(), self.dim, data))
    }

    /// Mean negative log-likelihood of a batch.
    pub fn nll(&self, batch: &Tensor) -> Result<f64> {
        let rows = self.log_prob_batch(batch)?;
        Ok(-rows.iter().sum::<f64>() / rows.len() as f64)
    }

    /// Mean NLL plus gradients with respect to every parameter, in
    /// [`FlowModel::params`] order.
    pub fn nll_and_grads(&self, batch: &Tensor) -> Result<(f64, Vec<Option<Tensor>>)> {
        let mut tape = Tape::new();
        let x = tape.leaf(batch.clone());
        let params = self.register_params(&mut tape);
        let rows = self.build_log_prob_rows(&mut tape, x, &params)?;
        let mean = tape.mean_all(rows)?;
        let loss = tape.neg(mean)?;
        let value = tape.value(loss).data()[0];
        let grads: Gradients = tape.backward(loss)?;
        let out = params.iter().map(|id| grads.get(*id).cloned()).collect();
        Ok((value, out))
    }

    /// Base log-density at the fully transformed point together with each
    /// element's density-direction log-determinant (data-to-base order),
    /// accumulated through the plain evaluation path.
    pub fn per_layer_logdets(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        if x.len() != self.dim {
            return Err(Error::ConfigMismatch(format!(
                "model dimension {} vs input dimension {}",
                self.dim,
                x.len()
            )));
        }
        let mut z = x.to_vec();
        let mut logdets = Vec::new();
        for el in self.elements.iter().rev() {
            match el {
                FlowElement::Coupling(c) => {
                    let ld = c.inverse_logdet(&z)?;
                    z = c.inverse(&z)?;
                    logdets.push(ld);
                }
                FlowElement::Maf(m) => {
                    let (u, ld) = m.forward(&z)?;
                    z = u;
                    logdets.push(ld);
                }
                FlowElement::Reverse => {
                    z.reverse();
                    logdets.push(0.0);
                }
            }
        }
        let base = -0.5 * z.iter().map(|v| v * v).sum::<f64>() - 0.5 * self.dim as f64 * LN_2PI;
        Ok((base, logdets))
    }

    /// Draws samples by pushing base-Gaussian noise through the generative
    /// direction.
    pub fn sample(&self, rng: &mut impl Rng, n: usize) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let mut z: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
            for el in &self.elements {
                match el {
                    FlowElement::Coupling(c) => z = c.forward(&z)?.0,
                    FlowElement::Maf(m) => z = m.inverse(&z)?,
                    FlowElement::Reverse => z.reverse(),
                }
            }
            out.push(z);
        }
        Ok(out)
    }
}
