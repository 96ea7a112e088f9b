//! Affine coupling layer: the first `d` dimensions pass through unchanged and
//! parameterize an elementwise affine transform of the rest.

use crate::autodiff::{Mlp, NodeId, Tape, Tensor};
use crate::error::{Error, Result};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct CouplingLayer {
    pub dim: usize,
    /// Untransformed prefix length d, 1 <= d < dim.
    pub split: usize,
    /// Scale function (bounded output head).
    pub scale_net: Mlp,
    /// Translation function.
    pub translate_net: Mlp,
}

impl CouplingLayer {
    pub fn new(dim: usize, split: usize, hidden: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if dim < 2 || split == 0 || split >= dim {
            return Err(Error::InvalidParameter(format!(
                "coupling split must satisfy 1 <= d < D (got d={split}, D={dim})"
            )));
        }
        let mut dims = vec![split];
        dims.extend_from_slice(hidden);
        dims.push(dim - split);
        Ok(Self {
            dim,
            split,
            scale_net: Mlp::new(&dims, true, rng),
            translate_net: Mlp::new(&dims, false, rng),
        })
    }

    /// Generative direction: `y_{1:d} = x_{1:d}`,
    /// `y_{d+1:D} = x_{d+1:D} .* exp(s(x_{1:d})) + t(x_{1:d})`.
    /// Returns the output and the log-determinant `sum_j s_j`.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_dim(x)?;
        let head = Tensor::row(&x[..self.split]);
        let s = self.scale_net.eval(&head)?;
        let t = self.translate_net.eval(&head)?;
        let mut y = x.to_vec();
        for (j, yj) in y[self.split..].iter_mut().enumerate() {
            *yj = *yj * s.data()[j].exp() + t.data()[j];
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "coupling_forward" });
        }
        Ok((y, s.data().iter().sum()))
    }

    /// Inverse of [`CouplingLayer::forward`]:
    /// `x_{d+1:D} = (y_{d+1:D} - t(y_{1:d})) .* exp(-s(y_{1:d}))`.
    pub fn inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(y)?;
        let head = Tensor::row(&y[..self.split]);
        let s = self.scale_net.eval(&head)?;
        let t = self.translate_net.eval(&head)?;
        let mut x = y.to_vec();
        for (j, xj) in x[self.split..].iter_mut().enumerate() {
            *xj = (*xj - t.data()[j]) * (-s.data()[j]).exp();
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "coupling_inverse" });
        }
        Ok(x)
    }

    /// Density-direction log-determinant for input `y`: `-sum_j s_j(y_{1:d})`.
    pub fn inverse_logdet(&self, y: &[f64]) -> Result<f64> {
        self.check_dim(y)?;
        let s = self.scale_net.eval(&Tensor::row(&y[..self.split]))?;
        Ok(-s.data().iter().sum::<f64>())
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::ConfigMismatch(format!(
                "coupling layer dimension {} vs input {}",
                self.dim,
                v.len()
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.scale_net.param_count() + self.translate_net.param_count()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.scale_net.params();
        p.extend(self.translate_net.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.scale_net.params_mut();
        p.extend(self.translate_net.params_mut());
        p
    }

    /// Tape version of the density direction (data to base), batched.
    /// Returns the transformed batch and an [n x 1] per-row log-determinant.
    pub(crate) fn build_to_base(
        &self,
        tape: &mut Tape,
        y: NodeId,
        params: &[NodeId],
    ) -> Result<(NodeId, NodeId)> {
        let ns = self.scale_net.param_count();
        let head = tape.slice_cols(y, 0, self.split)?;
        let tail = tape.slice_cols(y, self.split, self.dim - self.split)?;
        let s = self.scale_net.build(tape, head, &params[..ns])?;
        let t = self.translate_net.build(tape, head, &params[ns..])?;
        let shifted = tape.sub(tail, t)?;
        let neg_s = tape.neg(s)?;
        let inv_scale = tape.exp(neg_s)?;
        let x_tail = tape.mul(shifted, inv_scale)?;
        let x = tape.concat_cols(head, x_tail)?;
        let logdet = {
            let ssum = tape.sum_cols(s)?;
            tape.neg(ssum)?
        };
        Ok((x, logdet))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randomized(dim: usize, split: usize, seed: u64) -> CouplingLayer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = CouplingLayer::new(dim, split, &[8, 8], &mut rng).unwrap();
        for p in layer.params_mut() {
            for v in p.data_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
        layer
    }

    #[test]
    fn identity_nets_give_identity_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = CouplingLayer::new(4, 2, &[8], &mut rng).unwrap();
        let x = [0.3, -1.0, 2.0, 0.5];
        let (y, logdet) = layer.forward(&x).unwrap();
        assert_eq!(y, x.to_vec());
        assert_eq!(logdet, 0.0);
    }

    #[test]
    fn constant_nets_match_closed_form() {
        // D = 2, d = 1, sigma = c, mu = m: y2 = x2 e^c + m, logdet = c
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut layer = CouplingLayer::new(2, 1, &[4], &mut rng).unwrap();
        // zero the hidden weights so the heads are pure bias terms
        layer.scale_net.layers[0].weights = Tensor::zeros(4, 1);
        layer.translate_net.layers[0].weights = Tensor::zeros(4, 1);
        // raw bias b gives sigma = tanh(b) * bound
        layer.scale_net.layers[1].bias = Tensor::row(&[0.7]);
        let c = 0.7f64.tanh() * layer.scale_net.bound.as_ref().unwrap().data()[0];
        layer.translate_net.layers[1].bias = Tensor::row(&[-0.4]);
        let m = -0.4;

        let x = [1.3, 2.0];
        let (y, logdet) = layer.forward(&x).unwrap();
        assert_eq!(y[0], 1.3);
        assert!((y[1] - (2.0 * c.exp() + m)).abs() < 1e-12);
        assert!((logdet - c).abs() < 1e-12);

        // sigma = 0, mu = m: inverse subtracts the shift
        layer.scale_net.layers[1].bias = Tensor::row(&[0.0]);
        let x2 = layer.inverse(&[1.3, 2.0]).unwrap();
        assert!((x2[1] - (2.0 - m)).abs() < 1e-12);
    }

    #[test]
    fn forward_inverse_round_trip() {
        let layer = randomized(6, 3, 42);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let (y, _) = layer.forward(&x).unwrap();
            let back = layer.inverse(&y).unwrap();
            for (a, b) in back.iter().zip(&x) {
                assert!((a - b).abs() < 1e-9);
            }
            // inverse of forward of inverse = inverse
            let x1 = layer.inverse(&x).unwrap();
            let x2 = layer.inverse(&layer.forward(&x1).unwrap().0).unwrap();
            for (a, b) in x1.iter().zip(&x2) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn logdet_matches_finite_difference_jacobian() {
        let layer = randomized(6, 3, 7);
        let x: Vec<f64> = vec![0.4, -0.2, 1.1, -0.7, 0.3, 0.9];
        let (_, analytic) = layer.forward(&x).unwrap();

        let h = 1e-5;
        let mut jac = nalgebra::DMatrix::zeros(6, 6);
        for j in 0..6 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let (yp, _) = layer.forward(&xp).unwrap();
            let (ym, _) = layer.forward(&xm).unwrap();
            for i in 0..6 {
                jac[(i, j)] = (yp[i] - ym[i]) / (2.0 * h);
            }
        }
        let det = jac.determinant();
        assert!((det.abs().ln() - analytic).abs() < 1e-4);
    }

    #[test]
    fn tape_density_direction_matches_plain_inverse() {
        let layer = randomized(6, 3, 11);
        let y = [0.4, -0.2, 1.1, -0.7, 0.3, 0.9];
        let plain = layer.inverse(&y).unwrap();
        let plain_ld = layer.inverse_logdet(&y).unwrap();

        let mut tape = Tape::new();
        let leaf = tape.leaf(Tensor::row(&y));
        let params: Vec<_> = layer.params().iter().map(|p| tape.leaf((*p).clone())).collect();
        let (x, ld) = layer.build_to_base(&mut tape, leaf, &params).unwrap();
        for (a, b) in tape.value(x).data().iter().zip(&plain) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((tape.value(ld).data()[0] - plain_ld).abs() < 1e-12);
    }
}
