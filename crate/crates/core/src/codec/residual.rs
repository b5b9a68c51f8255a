//! A frame's stored residuals and their application to the previous cloud.

use half::f16;

use super::coo::{coo_decode, SparseCoo};
use crate::error::{mismatch, Error, Result};
use crate::quantizer::{decode_residuals, AttributeKind, LinearDecoder};
use crate::scene::{basis_count, GaussianCloud, GaussianRecord};
use crate::Scalar;

/// Residual of one attribute over the `count_before` Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub enum AttributeResidual {
    /// Integer latents (`rows × dim`) decoded by a shared linear map.
    Quantized { kind: AttributeKind, dim: usize, latents: Vec<i32>, decoder: LinearDecoder<f32> },
    /// Uncompressed residual values (`rows × M`).
    Raw { kind: AttributeKind, values: Vec<f32> },
}

impl AttributeResidual {
    pub fn kind(&self) -> AttributeKind {
        match self {
            AttributeResidual::Quantized { kind, .. } | AttributeResidual::Raw { kind, .. } => *kind,
        }
    }

    /// Decoded residual rows, `rows × M`.
    pub fn decode<T: Scalar>(&self, rows: usize, basis: usize) -> Result<Vec<T>> {
        let m = self.kind().residual_dim(basis);
        match self {
            AttributeResidual::Quantized { dim, latents, decoder, .. } => {
                if decoder.out_dim != m || decoder.in_dim != *dim || latents.len() != rows * dim {
                    return Err(mismatch(format!("{} latents do not match {rows} rows", self.kind().name())));
                }
                let dec = LinearDecoder {
                    out_dim: m,
                    in_dim: *dim,
                    weights: decoder.weights.iter().map(|&w| T::lit(w as f64)).collect(),
                };
                decode_residuals(latents, &dec)
            }
            AttributeResidual::Raw { values, .. } => {
                if values.len() != rows * m {
                    return Err(mismatch(format!("{} raw residuals do not match {rows} rows", self.kind().name())));
                }
                Ok(values.iter().map(|&v| T::lit(v as f64)).collect())
            }
        }
    }
}

/// Everything a decoder needs to step from frame `t − 1` to frame `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSet {
    pub frame_index: u32,
    pub sh_degree: usize,
    pub count_before: usize,
    pub attributes: Vec<AttributeResidual>,
    pub positions: SparseCoo,
    /// Indices into the previous cloud, strictly increasing.
    pub removals: Vec<u32>,
    /// New Gaussians, with every value representable in `f16`.
    pub additions: Vec<GaussianRecord<f32>>,
}

impl ResidualSet {
    pub fn empty(frame_index: u32, sh_degree: usize, count_before: usize) -> Self {
        Self {
            frame_index,
            sh_degree,
            count_before,
            attributes: Vec::new(),
            positions: SparseCoo::default(),
            removals: Vec::new(),
            additions: Vec::new(),
        }
    }

    pub fn count_after(&self) -> usize {
        self.count_before - self.removals.len() + self.additions.len()
    }

    pub fn attribute(&self, kind: AttributeKind) -> Option<&AttributeResidual> {
        self.attributes.iter().find(|a| a.kind() == kind)
    }

    pub fn check(&self) -> Result<()> {
        if self.sh_degree > 3 {
            return Err(Error::Decode(format!("SH degree {} exceeds 3", self.sh_degree)));
        }
        let n = self.count_before;
        for (k, a) in self.attributes.iter().enumerate() {
            if self.attributes[..k].iter().any(|b| b.kind() == a.kind()) {
                return Err(Error::Decode(format!("duplicate {} residual", a.kind().name())));
            }
        }
        self.positions.check(n)?;
        if self.removals.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Decode("removals are not strictly increasing".into()));
        }
        if self.removals.last().is_some_and(|&r| r as usize >= n) {
            return Err(Error::Decode("removal index out of range".into()));
        }
        let stride = 3 * basis_count(self.sh_degree);
        if self.additions.iter().any(|a| a.sh.len() != stride) {
            return Err(mismatch("addition SH length does not match the degree"));
        }
        Ok(())
    }
}

/// Rounds to the nearest `f16` value, returned as `f32`.
#[inline]
pub fn round_f16(v: f32) -> f32 {
    f16::from_f32(v).to_f32()
}

/// Rounds a record's attributes to `f16` precision.
pub fn record_to_f16<T: Scalar>(g: &GaussianRecord<T>) -> GaussianRecord<f32> {
    let r = |v: T| round_f16(v.to_f32_lossy());
    GaussianRecord {
        position: g.position.map(r),
        rotation: g.rotation.map(r),
        log_scale: g.log_scale.map(r),
        opacity_logit: r(g.opacity_logit),
        sh: g.sh.iter().map(|&v| r(v)).collect(),
    }
}

/// `A_t = A_{t−1} + R_t`, then removals, then additions. Pure.
pub fn apply_residuals<T: Scalar>(prev: &GaussianCloud<T>, r: &ResidualSet) -> Result<GaussianCloud<T>> {
    prev.check()?;
    r.check()?;
    let n = prev.len();
    if n != r.count_before {
        return Err(mismatch(format!("residuals expect {} Gaussians, cloud has {n}", r.count_before)));
    }
    if prev.sh_degree != r.sh_degree {
        return Err(mismatch(format!("residual SH degree {} vs cloud {}", r.sh_degree, prev.sh_degree)));
    }
    let basis = prev.basis();
    let mut next = prev.clone();
    for a in &r.attributes {
        let m = a.kind().residual_dim(basis);
        if m == 0 {
            continue;
        }
        let d: Vec<T> = a.decode(n, basis)?;
        for (i, row) in d.chunks_exact(m).enumerate() {
            match a.kind() {
                AttributeKind::Rotation => {
                    for (q, &v) in next.rotations[i].iter_mut().zip(row) {
                        *q += v;
                    }
                }
                AttributeKind::Scale => {
                    for (s, &v) in next.log_scales[i].iter_mut().zip(row) {
                        *s += v;
                    }
                }
                AttributeKind::Opacity => next.opacity_logits[i] += row[0],
                AttributeKind::ColorBase => {
                    let sh = next.sh_mut(i);
                    for ch in 0..3 {
                        sh[ch * basis] += row[ch];
                    }
                }
                AttributeKind::ColorFreq => {
                    let sh = next.sh_mut(i);
                    let rest = basis - 1;
                    for (k, &v) in row.iter().enumerate() {
                        sh[(k / rest) * basis + 1 + k % rest] += v;
                    }
                }
            }
        }
    }
    for (&i, v) in r.positions.indices.iter().zip(&r.positions.values) {
        let p = &mut next.positions[i as usize];
        for k in 0..3 {
            p[k] += T::lit(v[k] as f64);
        }
    }
    if !r.removals.is_empty() {
        let mut keep = vec![true; n];
        for &i in &r.removals {
            keep[i as usize] = false;
        }
        next = next.retain_mask(&keep);
    }
    for a in &r.additions {
        let c = |v: f32| T::lit(v as f64);
        next.push(&GaussianRecord {
            position: a.position.map(c),
            rotation: a.rotation.map(c),
            log_scale: a.log_scale.map(c),
            opacity_logit: c(a.opacity_logit),
            sh: a.sh.iter().map(|&v| c(v)).collect(),
        });
    }
    Ok(next)
}

/// Dense position residuals of `r` (zero where no gate is active).
pub fn dense_positions(r: &ResidualSet) -> Result<Vec<[f32; 3]>> {
    coo_decode(&r.positions, r.count_before)
}
