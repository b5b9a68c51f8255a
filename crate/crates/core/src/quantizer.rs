//! Integer latents decoded to attribute residuals by a shared linear map.
//!
//! Latents are kept continuous during training and rounded in the forward
//! pass; gradients flow through the rounding unchanged.

use rand::Rng;

use crate::error::{invalid, mismatch, Result};
use crate::Scalar;

/// Attribute carried by a latent block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttributeKind {
    Rotation,
    Scale,
    Opacity,
    ColorBase,
    ColorFreq,
}

impl AttributeKind {
    pub const ALL: [AttributeKind; 5] = [
        AttributeKind::Rotation,
        AttributeKind::Scale,
        AttributeKind::Opacity,
        AttributeKind::ColorBase,
        AttributeKind::ColorFreq,
    ];

    /// Residual dimension `M` for an SH basis count `basis`.
    pub fn residual_dim(self, basis: usize) -> usize {
        match self {
            AttributeKind::Rotation => 4,
            AttributeKind::Scale => 3,
            AttributeKind::Opacity => 1,
            AttributeKind::ColorBase => 3,
            AttributeKind::ColorFreq => 3 * basis.saturating_sub(1),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AttributeKind::Rotation => "rotation",
            AttributeKind::Scale => "scale",
            AttributeKind::Opacity => "opacity",
            AttributeKind::ColorBase => "color_base",
            AttributeKind::ColorFreq => "color_freq",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            AttributeKind::Rotation => 0,
            AttributeKind::Scale => 1,
            AttributeKind::Opacity => 2,
            AttributeKind::ColorBase => 3,
            AttributeKind::ColorFreq => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

/// Continuous latents `N×L`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBlock<T> {
    pub kind: AttributeKind,
    pub dim: usize,
    pub values: Vec<T>,
}

impl<T: Scalar> LatentBlock<T> {
    pub fn zeros(kind: AttributeKind, rows: usize, dim: usize) -> Self {
        Self { kind, dim, values: vec![T::zero(); rows * dim] }
    }

    pub fn rows(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.values.len() / self.dim
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn quantized(&self) -> Vec<i32> {
        quantize_round(&self.values)
    }

    pub fn check(&self) -> Result<()> {
        if self.dim == 0 || !self.values.len().is_multiple_of(self.dim) {
            return Err(mismatch(format!("{} latents: {} values for dim {}", self.kind.name(), self.values.len(), self.dim)));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(invalid(format!("{} latents contain non-finite values", self.kind.name())));
        }
        Ok(())
    }
}

/// Decoder matrix `D` of shape `M×L`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDecoder<T> {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weights: Vec<T>,
}

impl<T: Scalar> LinearDecoder<T> {
    pub fn new(out_dim: usize, in_dim: usize, weights: Vec<T>) -> Result<Self> {
        if weights.len() != out_dim * in_dim {
            return Err(mismatch(format!("decoder {out_dim}x{in_dim} given {} weights", weights.len())));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(invalid("decoder weights must be finite"));
        }
        Ok(Self { out_dim, in_dim, weights })
    }

    pub fn identity(n: usize) -> Self {
        let mut weights = vec![T::zero(); n * n];
        for i in 0..n {
            weights[i * n + i] = T::one();
        }
        Self { out_dim: n, in_dim: n, weights }
    }

    /// Entries uniform in `±1/√L`.
    pub fn random<R: Rng>(out_dim: usize, in_dim: usize, rng: &mut R) -> Self {
        Self::random_scaled(out_dim, in_dim, 1.0, rng)
    }

    /// Entries uniform in `±scale/√L`.
    pub fn random_scaled<R: Rng>(out_dim: usize, in_dim: usize, scale: f64, rng: &mut R) -> Self {
        let bound = scale / (in_dim.max(1) as f64).sqrt();
        let weights = (0..out_dim * in_dim).map(|_| T::lit(rng.random_range(-bound..=bound))).collect();
        Self { out_dim, in_dim, weights }
    }

    #[inline]
    pub fn at(&self, m: usize, l: usize) -> T {
        self.weights[m * self.in_dim + l]
    }
}

/// Elementwise rounding, ties away from zero.
pub fn quantize_round<T: Scalar>(values: &[T]) -> Vec<i32> {
    values.iter().map(|v| v.round().to_i32().unwrap_or(0)).collect()
}

/// `r_i = D · l_i` for every row.
pub fn decode_residuals<T: Scalar>(latents: &[i32], dec: &LinearDecoder<T>) -> Result<Vec<T>> {
    let l = dec.in_dim;
    if l == 0 || !latents.len().is_multiple_of(l) {
        return Err(mismatch(format!("{} latents do not split into rows of {l}", latents.len())));
    }
    let rows = latents.len() / l;
    let mut out = vec![T::zero(); rows * dec.out_dim];
    for (row, r) in latents.chunks_exact(l).zip(out.chunks_exact_mut(dec.out_dim)) {
        let lf: Vec<T> = row.iter().map(|&v| T::lit(v as f64)).collect();
        for (m, rm) in r.iter_mut().enumerate() {
            let w = &dec.weights[m * l..(m + 1) * l];
            *rm = w.iter().zip(&lf).map(|(&a, &b)| a * b).sum();
        }
    }
    Ok(out)
}

/// Straight-through gradients: `(dL/dl̂, dL/dD)`.
pub fn ste_grads<T: Scalar>(dl_dr: &[T], dec: &LinearDecoder<T>, latents: &[i32]) -> Result<(Vec<T>, Vec<T>)> {
    let (m_dim, l_dim) = (dec.out_dim, dec.in_dim);
    if l_dim == 0 || !latents.len().is_multiple_of(l_dim) {
        return Err(mismatch(format!("{} latents do not split into rows of {l_dim}", latents.len())));
    }
    let rows = latents.len() / l_dim;
    if dl_dr.len() != rows * m_dim {
        return Err(mismatch(format!("residual gradient has {} values, expected {}", dl_dr.len(), rows * m_dim)));
    }
    let mut d_lat = vec![T::zero(); rows * l_dim];
    let mut d_dec = vec![T::zero(); m_dim * l_dim];
    for i in 0..rows {
        let g = &dl_dr[i * m_dim..(i + 1) * m_dim];
        let lrow = &latents[i * l_dim..(i + 1) * l_dim];
        let out = &mut d_lat[i * l_dim..(i + 1) * l_dim];
        for (m, &gm) in g.iter().enumerate() {
            if gm == T::zero() {
                continue;
            }
            let w = &dec.weights[m * l_dim..(m + 1) * l_dim];
            let dd = &mut d_dec[m * l_dim..(m + 1) * l_dim];
            for l in 0..l_dim {
                out[l] += gm * w[l];
                dd[l] += gm * T::lit(lrow[l] as f64);
            }
        }
    }
    Ok((d_lat, d_dec))
}

/// Mean over columns of the population standard deviation of each column.
pub fn latent_std_penalty<T: Scalar>(values: &[T], dim: usize) -> Result<(T, Vec<T>)> {
    if dim == 0 || !values.len().is_multiple_of(dim) {
        return Err(mismatch(format!("{} latents do not split into rows of {dim}", values.len())));
    }
    let n = values.len() / dim;
    let mut grad = vec![T::zero(); values.len()];
    if n < 2 {
        return Ok((T::zero(), grad));
    }
    let nf = T::from_usize_lossy(n);
    let lf = T::from_usize_lossy(dim);
    let mut total = T::zero();
    for c in 0..dim {
        let mean = (0..n).map(|i| values[i * dim + c]).sum::<T>() / nf;
        let var = (0..n).map(|i| (values[i * dim + c] - mean).powi(2)).sum::<T>() / nf;
        let std = var.sqrt();
        total += std;
        if std > T::zero() {
            for i in 0..n {
                grad[i * dim + c] = (values[i * dim + c] - mean) / (nf * std * lf);
            }
        }
    }
    Ok((total / lf, grad))
}
