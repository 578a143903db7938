use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SsclError;
use crate::vector::EmbeddingMatrix;

/// A parametric map from input embeddings to features, differentiable in
/// its parameters.
pub trait TrainableEncoder {
    fn output_dim(&self) -> usize;

    /// Features for every input row (not normalized).
    fn encode(&self, inputs: &EmbeddingMatrix) -> Result<EmbeddingMatrix, SsclError>;

    /// Gradient w.r.t. the flattened parameters given the gradient w.r.t.
    /// the features returned by [`encode`](Self::encode).
    fn param_gradient(&self, inputs: &EmbeddingMatrix, feature_grad: &[f64]) -> Vec<f64>;

    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];
}

/// Linear head `u = W^T x` with `W` stored row-major as `dim_in x dim_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionHead {
    dim_in: usize,
    dim_out: usize,
    weight: Vec<f64>,
}

impl ProjectionHead {
    pub fn new(dim_in: usize, dim_out: usize, weight: Vec<f64>) -> Result<Self, SsclError> {
        if weight.len() != dim_in * dim_out {
            return Err(SsclError::Shape(format!(
                "weight has {} entries for {dim_in} x {dim_out}",
                weight.len()
            )));
        }
        if weight.iter().any(|w| !w.is_finite()) {
            return Err(SsclError::NonFinite {
                what: "head weight",
            });
        }
        Ok(Self {
            dim_in,
            dim_out,
            weight,
        })
    }

    pub fn identity(dim: usize) -> Self {
        let mut weight = vec![0.0; dim * dim];
        for i in 0..dim {
            weight[i * dim + i] = 1.0;
        }
        Self {
            dim_in: dim,
            dim_out: dim,
            weight,
        }
    }

    /// Gaussian init with variance `1 / dim_in`.
    pub fn random(dim_in: usize, dim_out: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (dim_in.max(1) as f64).sqrt()).expect("valid sigma");
        let weight = (0..dim_in * dim_out)
            .map(|_| normal.sample(&mut rng))
            .collect();
        Self {
            dim_in,
            dim_out,
            weight,
        }
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    /// The weight as a `dim_in x dim_out` matrix, the sidecar layout.
    pub fn to_matrix(&self) -> EmbeddingMatrix {
        EmbeddingMatrix::new(self.dim_in, self.dim_out, self.weight.clone()).expect("shape")
    }

    pub fn from_matrix(m: &EmbeddingMatrix) -> Result<Self, SsclError> {
        Self::new(m.rows(), m.dim(), m.data().to_vec())
    }
}

impl TrainableEncoder for ProjectionHead {
    fn output_dim(&self) -> usize {
        self.dim_out
    }

    fn encode(&self, inputs: &EmbeddingMatrix) -> Result<EmbeddingMatrix, SsclError> {
        if inputs.dim() != self.dim_in {
            return Err(SsclError::Shape(format!(
                "inputs have dim {}, head expects {}",
                inputs.dim(),
                self.dim_in
            )));
        }
        let (din, dout) = (self.dim_in, self.dim_out);
        let mut out = vec![0.0; inputs.rows() * dout];
        out.par_chunks_mut(dout.max(1))
            .enumerate()
            .for_each(|(i, u)| {
                let x = inputs.row(i);
                for k in 0..din {
                    let xk = x[k];
                    if xk == 0.0 {
                        continue;
                    }
                    let w = &self.weight[k * dout..(k + 1) * dout];
                    for (um, wm) in u.iter_mut().zip(w) {
                        *um += xk * wm;
                    }
                }
            });
        Ok(EmbeddingMatrix::new(inputs.rows(), dout, out).expect("shape"))
    }

    fn param_gradient(&self, inputs: &EmbeddingMatrix, feature_grad: &[f64]) -> Vec<f64> {
        let (din, dout) = (self.dim_in, self.dim_out);
        let mut g = vec![0.0; din * dout];
        // row k of dW = sum_i x_i[k] * dU_i, each row owned by one task
        g.par_chunks_mut(dout.max(1))
            .enumerate()
            .for_each(|(k, gk)| {
                for i in 0..inputs.rows() {
                    let xk = inputs.row(i)[k];
                    let du = &feature_grad[i * dout..(i + 1) * dout];
                    for (gm, dm) in gk.iter_mut().zip(du) {
                        *gm += xk * dm;
                    }
                }
            });
        g
    }

    fn params(&self) -> &[f64] {
        &self.weight
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.weight
    }
}
