//! Bias-corrected Adam with per-row bookkeeping for growing/shrinking clouds.

use crate::error::{mismatch, Result};
use crate::Scalar;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize) -> Self {
        Self { m: vec![T::zero(); len], v: vec![T::zero(); len], step: 0 }
    }

    /// Keeps the moments of rows whose `keep` flag is set.
    pub fn retain_rows(&mut self, keep: &[bool], width: usize) {
        retain_rows(&mut self.m, keep, width);
        retain_rows(&mut self.v, keep, width);
    }

    /// Appends `rows` rows of zero moments.
    pub fn append_rows(&mut self, rows: usize, width: usize) {
        self.m.resize(self.m.len() + rows * width, T::zero());
        self.v.resize(self.v.len() + rows * width, T::zero());
    }
}

pub(crate) fn retain_rows<T: Copy>(values: &mut Vec<T>, keep: &[bool], width: usize) {
    let mut out = Vec::with_capacity(values.len());
    for (row, &k) in values.chunks_exact(width).zip(keep) {
        if k {
            out.extend_from_slice(row);
        }
    }
    *values = out;
}

/// One Adam update of `params` in place.
pub fn adam_step<T: Scalar>(params: &mut [T], grads: &[T], state: &mut AdamState<T>, lr: T) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(mismatch(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let (b1, b2, eps) = (T::lit(ADAM_BETA1), T::lit(ADAM_BETA2), T::lit(ADAM_EPS));
    let t = state.step as i32;
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (T::one() - b1) * g;
        state.v[i] = b2 * state.v[i] + (T::one() - b2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] -= lr * mh / (vh.sqrt() + eps);
    }
    Ok(())
}

/// A row-major parameter tensor with its optimizer state.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub values: Vec<T>,
    pub width: usize,
    pub adam: AdamState<T>,
    pub lr: T,
}

impl<T: Scalar> Param<T> {
    pub fn new(values: Vec<T>, width: usize, lr: T) -> Self {
        let adam = AdamState::new(values.len());
        Self { values, width, adam, lr }
    }

    pub fn rows(&self) -> usize {
        self.values.len().checked_div(self.width).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.values[i * self.width..(i + 1) * self.width]
    }

    pub fn step(&mut self, grads: &[T]) -> Result<()> {
        adam_step(&mut self.values, grads, &mut self.adam, self.lr)
    }

    pub fn retain_rows(&mut self, keep: &[bool]) {
        retain_rows(&mut self.values, keep, self.width);
        self.adam.retain_rows(keep, self.width);
    }

    pub fn append_rows(&mut self, data: &[T]) {
        self.values.extend_from_slice(data);
        self.adam.append_rows(data.len() / self.width.max(1), self.width);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grads_leave_params() {
        let mut p = vec![1.0, -2.0, 3.0];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[0.0; 3], &mut s, 0.1).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![0.0f64; 4];
        let g = [0.5, -3.0, 1e-3, 7.0];
        let mut s = AdamState::new(4);
        adam_step(&mut p, &g, &mut s, 0.01).unwrap();
        for (x, gi) in p.iter().zip(g) {
            // m̂ = g, v̂ = g², so the step is lr·g/(|g| + ε).
            let want = -0.01 * gi / (gi.abs() + ADAM_EPS);
            assert!((x - want).abs() < 1e-15);
            assert!((x + 0.01 * gi.signum()).abs() < 1e-10);
        }
    }

    #[test]
    fn matches_scalar_reference() {
        fn reference(mut p: f64, gs: &[f64], lr: f64) -> f64 {
            let (mut m, mut v) = (0.0, 0.0);
            for (k, &g) in gs.iter().enumerate() {
                let t = (k + 1) as i32;
                m = 0.9 * m + 0.1 * g;
                v = 0.999 * v + 0.001 * g * g;
                let mh = m / (1.0 - 0.9f64.powi(t));
                let vh = v / (1.0 - 0.999f64.powi(t));
                p -= lr * mh / (vh.sqrt() + 1e-15);
            }
            p
        }
        let mut p = vec![0.3, -1.2];
        let mut s = AdamState::new(2);
        let grads = [[0.7, -0.2], [0.7, -0.2]];
        for g in &grads {
            adam_step(&mut p, g, &mut s, 0.05).unwrap();
        }
        assert!((p[0] - reference(0.3, &[0.7, 0.7], 0.05)).abs() < 1e-12);
        assert!((p[1] - reference(-1.2, &[-0.2, -0.2], 0.05)).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut s = AdamState::new(2);
        assert!(adam_step(&mut [0.0; 3], &[0.0; 3], &mut s, 0.1).is_err());
        assert!(adam_step(&mut [0.0; 2], &[0.0; 3], &mut s, 0.1).is_err());
    }

    #[test]
    fn param_rows_follow_retain_and_append() {
        let mut p = Param::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 2, 0.1);
        p.step(&[1.0; 6]).unwrap();
        p.retain_rows(&[true, false, true]);
        assert_eq!(p.rows(), 2);
        assert_eq!(p.adam.m.len(), 4);
        p.append_rows(&[9.0, 9.0]);
        assert_eq!(p.row(2), &[9.0, 9.0]);
        assert_eq!(&p.adam.m[4..], &[0.0, 0.0]);
    }
}
