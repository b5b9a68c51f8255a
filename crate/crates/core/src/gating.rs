//! Hard concrete gates that sparsify position residuals.

use rand::Rng;

use crate::error::{invalid, mismatch, Result};
use crate::Scalar;

/// Clamp applied to probabilities before inverting them into gate logits.
pub const PROB_CLAMP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateHyper<T> {
    pub tau: T,
    pub gamma0: T,
    pub gamma1: T,
}

impl<T: Scalar> GateHyper<T> {
    pub fn new(tau: T, gamma0: T, gamma1: T) -> Result<Self> {
        let h = Self { tau, gamma0, gamma1 };
        h.check()?;
        Ok(h)
    }

    /// Defaults used for the multi-view indoor dataset.
    pub fn preset_a() -> Self {
        Self { tau: T::lit(0.3), gamma0: T::lit(-0.5), gamma1: T::lit(1.01) }
    }

    /// Defaults used for the wide-baseline outdoor dataset.
    pub fn preset_b() -> Self {
        Self { tau: T::lit(0.5), gamma0: T::lit(-0.1), gamma1: T::lit(1.1) }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.tau > T::zero() && self.gamma0 < T::zero() && self.gamma1 > T::one()) {
            return Err(invalid(format!(
                "gate hyperparameters need tau > 0, gamma0 < 0, gamma1 > 1 (got {}, {}, {})",
                self.tau, self.gamma0, self.gamma1
            )));
        }
        Ok(())
    }

    /// `τ·log(−γ0/γ1)`, the offset shared by the L0 term and its inverse.
    pub fn l0_shift(&self) -> T {
        self.tau * (-self.gamma0 / self.gamma1).ln()
    }

    fn stretched(&self, log_alpha: T, noise: T) -> (T, T) {
        let g_hat = ((log_alpha + noise) / self.tau).sigmoid();
        (g_hat, g_hat * (self.gamma1 - self.gamma0) + self.gamma0)
    }
}

/// Learnable gate logits and the pre-gated residual vectors `l_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams<T> {
    pub log_alpha: Vec<T>,
    pub pre_gated: Vec<[T; 3]>,
}

impl<T: Scalar> GateParams<T> {
    pub fn new(log_alpha: Vec<T>) -> Self {
        let n = log_alpha.len();
        Self { log_alpha, pre_gated: vec![[T::zero(); 3]; n] }
    }

    pub fn len(&self) -> usize {
        self.log_alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_alpha.is_empty()
    }
}

pub fn gate_value<T: Scalar>(log_alpha: T, hyp: &GateHyper<T>) -> T {
    let (_, g) = hyp.stretched(log_alpha, T::zero());
    g.max(T::zero()).min(T::one())
}

pub fn gate_backward<T: Scalar>(log_alpha: T, hyp: &GateHyper<T>, dl_dg: T) -> T {
    gate_backward_noisy(log_alpha, T::zero(), hyp, dl_dg)
}

/// Gate value with logistic noise `log u − log(1 − u)` added to the logit.
pub fn gate_value_noisy<T: Scalar>(log_alpha: T, noise: T, hyp: &GateHyper<T>) -> T {
    let (_, g) = hyp.stretched(log_alpha, noise);
    g.max(T::zero()).min(T::one())
}

pub fn gate_backward_noisy<T: Scalar>(log_alpha: T, noise: T, hyp: &GateHyper<T>, dl_dg: T) -> T {
    let (g_hat, g) = hyp.stretched(log_alpha, noise);
    if g <= T::zero() || g >= T::one() {
        return T::zero();
    }
    dl_dg * (hyp.gamma1 - hyp.gamma0) * g_hat * (T::one() - g_hat) / hyp.tau
}

/// Draws logistic noise for the optional stochastic gate.
pub fn logistic_noise<T: Scalar, R: Rng>(rng: &mut R) -> T {
    let u: f64 = rng.random_range(1e-6..1.0 - 1e-6);
    T::lit(u.ln() - (1.0 - u).ln())
}

/// Probability that a gate is non-zero, per element of the L0 term.
pub fn gate_active_prob<T: Scalar>(log_alpha: T, hyp: &GateHyper<T>) -> T {
    (log_alpha - hyp.l0_shift()).sigmoid()
}

/// Summed L0 surrogate and its gradient.
pub fn gate_l0_loss<T: Scalar>(log_alpha: &[T], hyp: &GateHyper<T>) -> (T, Vec<T>) {
    let shift = hyp.l0_shift();
    let mut value = T::zero();
    let grads = log_alpha
        .iter()
        .map(|&la| {
            let s = (la - shift).sigmoid();
            value += s;
            s * (T::one() - s)
        })
        .collect();
    (value, grads)
}

/// Inverts the per-element L0 map: gate logits whose active probability is `p`.
pub fn gates_from_probs<T: Scalar>(probs: &[T], hyp: &GateHyper<T>) -> Vec<T> {
    let lo = T::lit(PROB_CLAMP);
    let hi = T::one() - lo;
    let shift = hyp.l0_shift();
    probs.iter().map(|&p| p.max(lo).min(hi).logit() + shift).collect()
}

/// `Δp_i = g_i · l_p_i`.
pub fn gated_position_residuals<T: Scalar>(params: &GateParams<T>, hyp: &GateHyper<T>) -> Result<Vec<[T; 3]>> {
    if params.log_alpha.len() != params.pre_gated.len() {
        return Err(mismatch(format!(
            "{} gate logits for {} residual rows",
            params.log_alpha.len(),
            params.pre_gated.len()
        )));
    }
    Ok(params
        .log_alpha
        .iter()
        .zip(&params.pre_gated)
        .map(|(&la, lp)| {
            let g = gate_value(la, hyp);
            if g == T::zero() {
                [T::zero(); 3]
            } else {
                [g * lp[0], g * lp[1], g * lp[2]]
            }
        })
        .collect())
}

/// Number of gates whose deterministic value is non-zero.
pub fn active_gate_count<T: Scalar>(log_alpha: &[T], hyp: &GateHyper<T>) -> usize {
    log_alpha.iter().filter(|&&la| gate_value(la, hyp) > T::zero()).count()
}
