use super::Tensor2;
use crate::error::{dim_err, Error, Result};

/// `y = x·Wᵀ + b` for a batch of row vectors, with `W` stored `out × in`.
pub fn affine_forward(input: &Tensor2, weight: &Tensor2, bias: &[f64]) -> Result<Tensor2> {
    if input.cols() != weight.cols() {
        return dim_err(format!("affine input width {} vs weight {:?}", input.cols(), weight.shape()));
    }
    let mut out = input.matmul_nt(weight)?;
    out.add_row_vector(bias)?;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct AffineGrads {
    pub input: Tensor2,
    pub weight: Tensor2,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct Affine {
    input: Option<Tensor2>,
}

impl Affine {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, input: &Tensor2, weight: &Tensor2, bias: &[f64]) -> Result<Tensor2> {
        let out = affine_forward(input, weight, bias)?;
        self.input = Some(input.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor2, weight: &Tensor2) -> Result<AffineGrads> {
        let input = self.input.take().ok_or(Error::MissingCache("affine"))?;
        if grad_out.shape() != (input.rows(), weight.rows()) {
            return dim_err(format!("affine grad {:?}, expected {:?}", grad_out.shape(), (input.rows(), weight.rows())));
        }
        Ok(AffineGrads {
            input: grad_out.matmul(weight)?,
            weight: grad_out.matmul_tn(&input)?,
            bias: grad_out.column_sums(),
        })
    }
}

pub fn relu_forward(input: &Tensor2) -> Tensor2 {
    input.map(|v| v.max(0.0))
}

/// Rectified linear unit. The derivative at exactly 0 is taken as 0.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, input: &Tensor2) -> Tensor2 {
        self.mask = Some(input.as_slice().iter().map(|&v| v > 0.0).collect());
        relu_forward(input)
    }

    pub fn backward(&mut self, grad_out: &Tensor2) -> Result<Tensor2> {
        let mask = self.mask.take().ok_or(Error::MissingCache("relu"))?;
        if mask.len() != grad_out.len() {
            return dim_err(format!("relu grad of {} values for {} activations", grad_out.len(), mask.len()));
        }
        let mut g = grad_out.clone();
        g.as_mut_slice().iter_mut().zip(&mask).for_each(|(v, &m)| {
            if !m {
                *v = 0.0;
            }
        });
        Ok(g)
    }
}
