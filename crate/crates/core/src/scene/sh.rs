//! Real spherical harmonics up to degree 3 in the 3D-GS sign/order convention.

use crate::error::{invalid, Result};
use crate::Scalar;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Basis functions per color channel for a degree.
pub const fn basis_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Evaluates the first `out.len()` basis functions at a unit direction.
pub fn sh_basis<T: Scalar>(dir: &[T; 3], out: &mut [T]) {
    let mut grads = [[T::zero(); 3]; 16];
    sh_basis_with_grad(dir, out, &mut grads[..out.len()]);
}

/// Basis values together with their partial derivatives in `(x, y, z)`.
pub fn sh_basis_with_grad<T: Scalar>(dir: &[T; 3], out: &mut [T], grad: &mut [[T; 3]]) {
    let n = out.len();
    let [x, y, z] = *dir;
    let l = T::lit;
    let zero = T::zero();
    let two = l(2.0);
    let three = l(3.0);
    let four = l(4.0);
    let six = l(6.0);
    out[0] = l(SH_C0);
    grad[0] = [zero; 3];
    if n == 1 {
        return;
    }
    let c1 = l(SH_C1);
    out[1] = -c1 * y;
    grad[1] = [zero, -c1, zero];
    out[2] = c1 * z;
    grad[2] = [zero, zero, c1];
    out[3] = -c1 * x;
    grad[3] = [-c1, zero, zero];
    if n == 4 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let c2 = SH_C2.map(l);
    out[4] = c2[0] * x * y;
    grad[4] = [c2[0] * y, c2[0] * x, zero];
    out[5] = c2[1] * y * z;
    grad[5] = [zero, c2[1] * z, c2[1] * y];
    out[6] = c2[2] * (two * zz - xx - yy);
    grad[6] = [-two * c2[2] * x, -two * c2[2] * y, four * c2[2] * z];
    out[7] = c2[3] * x * z;
    grad[7] = [c2[3] * z, zero, c2[3] * x];
    out[8] = c2[4] * (xx - yy);
    grad[8] = [two * c2[4] * x, -two * c2[4] * y, zero];
    if n == 9 {
        return;
    }
    let c3 = SH_C3.map(l);
    out[9] = c3[0] * y * (three * xx - yy);
    grad[9] = [c3[0] * six * x * y, c3[0] * (three * xx - three * yy), zero];
    out[10] = c3[1] * x * y * z;
    grad[10] = [c3[1] * y * z, c3[1] * x * z, c3[1] * x * y];
    out[11] = c3[2] * y * (four * zz - xx - yy);
    grad[11] = [
        -two * c3[2] * x * y,
        c3[2] * (four * zz - xx - three * yy),
        c3[2] * l(8.0) * y * z,
    ];
    out[12] = c3[3] * z * (two * zz - three * xx - three * yy);
    grad[12] = [
        -six * c3[3] * x * z,
        -six * c3[3] * y * z,
        c3[3] * (six * zz - three * xx - three * yy),
    ];
    out[13] = c3[4] * x * (four * zz - xx - yy);
    grad[13] = [
        c3[4] * (four * zz - three * xx - yy),
        -two * c3[4] * x * y,
        c3[4] * l(8.0) * x * z,
    ];
    out[14] = c3[5] * z * (xx - yy);
    grad[14] = [two * c3[5] * x * z, -two * c3[5] * y * z, c3[5] * (xx - yy)];
    out[15] = c3[6] * x * (xx - three * yy);
    grad[15] = [c3[6] * (three * xx - three * yy), -six * c3[6] * x * y, zero];
}

/// View-dependent color: `max(0, Σ_b Y_b(dir)·coeffs[:, b] + 0.5)`.
///
/// `coeffs` is channel-major (`3 × B`).
pub fn eval_sh<T: Scalar>(coeffs: &[T], dir: &[T; 3], degree: usize) -> Result<[T; 3]> {
    if degree > 3 {
        return Err(invalid(format!("SH degree {degree} exceeds 3")));
    }
    let b = basis_count(degree);
    if coeffs.len() != 3 * b {
        return Err(invalid(format!(
            "degree {degree} needs {} coefficients, got {}",
            3 * b,
            coeffs.len()
        )));
    }
    let mut basis = [T::zero(); 16];
    sh_basis(dir, &mut basis[..b]);
    Ok(color_from_basis(coeffs, &basis[..b]))
}

pub(crate) fn color_unclamped<T: Scalar>(coeffs: &[T], basis: &[T]) -> [T; 3] {
    let b = basis.len();
    let mut rgb = [T::lit(0.5); 3];
    for (ch, v) in rgb.iter_mut().enumerate() {
        for (k, &y) in basis.iter().enumerate() {
            *v += coeffs[ch * b + k] * y;
        }
    }
    rgb
}

pub(crate) fn color_from_basis<T: Scalar>(coeffs: &[T], basis: &[T]) -> [T; 3] {
    color_unclamped(coeffs, basis).map(|v| v.max(T::zero()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degree_zero_constant() {
        let c = eval_sh(&[1.0, -2.0, 0.5], &[0.0, 0.0, 1.0], 0).unwrap();
        assert!((c[0] - (SH_C0 + 0.5)).abs() < 1e-15);
        assert_eq!(c[1], 0.0);
        assert!((c[2] - (0.5 * SH_C0 + 0.5)).abs() < 1e-15);
        let z = eval_sh(&[0.0; 27], &[0.6, 0.0, 0.8], 2).unwrap();
        assert_eq!(z, [0.5; 3]);
    }

    #[test]
    fn degree_mismatch_rejected() {
        assert!(eval_sh(&[0.0; 12], &[0.0, 0.0, 1.0], 2).is_err());
        assert!(eval_sh(&[0.0; 75], &[0.0, 0.0, 1.0], 4).is_err());
    }

    #[test]
    fn basis_gradient_matches_finite_differences() {
        let dir = [0.3f64, -0.5, 0.81];
        let mut vals = [0.0; 16];
        let mut grads = [[0.0; 3]; 16];
        sh_basis_with_grad(&dir, &mut vals, &mut grads);
        let h = 1e-6;
        for axis in 0..3 {
            let mut p = dir;
            let mut m = dir;
            p[axis] += h;
            m[axis] -= h;
            let (mut vp, mut vm) = ([0.0; 16], [0.0; 16]);
            sh_basis(&p, &mut vp);
            sh_basis(&m, &mut vm);
            for b in 0..16 {
                let fd = (vp[b] - vm[b]) / (2.0 * h);
                assert!((fd - grads[b][axis]).abs() < 1e-7, "basis {b} axis {axis}");
            }
        }
    }

    /// Associated Legendre `P_l^m(x)` with the Condon-Shortley phase.
    fn legendre(l: usize, m: usize, x: f64) -> f64 {
        let mut pmm = 1.0;
        let s = (1.0 - x * x).sqrt();
        for k in 0..m {
            pmm *= -((2 * k + 1) as f64) * s;
        }
        if l == m {
            return pmm;
        }
        let mut prev = pmm;
        let mut cur = x * (2 * m + 1) as f64 * pmm;
        for ll in m + 2..=l {
            let next = ((2 * ll - 1) as f64 * x * cur - (ll + m - 1) as f64 * prev) / (ll - m) as f64;
            prev = cur;
            cur = next;
        }
        cur
    }

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    /// Real SH from spherical coordinates, ordered m = -l..l per degree.
    fn real_sh_oracle(dir: [f64; 3], degree: usize) -> Vec<f64> {
        let theta = dir[2].clamp(-1.0, 1.0).acos();
        let phi = dir[1].atan2(dir[0]);
        let mut out = Vec::new();
        for l in 0..=degree {
            for m in -(l as i64)..=(l as i64) {
                let am = m.unsigned_abs() as usize;
                let k = ((2 * l + 1) as f64 / (4.0 * std::f64::consts::PI) * factorial(l - am) / factorial(l + am)).sqrt();
                let p = legendre(l, am, theta.cos());
                out.push(match m.cmp(&0) {
                    std::cmp::Ordering::Equal => k * p,
                    std::cmp::Ordering::Greater => std::f64::consts::SQRT_2 * k * p * (am as f64 * phi).cos(),
                    std::cmp::Ordering::Less => std::f64::consts::SQRT_2 * k * p * (am as f64 * phi).sin(),
                });
            }
        }
        out
    }

    #[test]
    fn basis_matches_legendre_oracle() {
        let dirs: [[f64; 3]; 5] = [[0.3, -0.5, 0.81], [0.0, 0.0, 1.0], [-0.7, 0.1, -0.2], [0.05, 0.99, 0.0], [1.0, 1.0, 1.0]];
        for d in dirs {
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            let u = [d[0] / n, d[1] / n, d[2] / n];
            let mut vals = [0.0; 16];
            sh_basis(&u, &mut vals);
            for (b, (a, o)) in vals.iter().zip(real_sh_oracle(u, 3)).enumerate() {
                assert!((a - o).abs() < 1e-12, "basis {b} at {u:?}: {a} vs {o}");
            }
        }
    }

    #[test]
    fn degree_two_color_matches_oracle() {
        let u = {
            let d = [0.4f64, -0.3, 0.6];
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            [d[0] / n, d[1] / n, d[2] / n]
        };
        let coeffs: Vec<f64> = (0..27).map(|k| 0.1 * ((k * 5 % 13) as f64 - 6.0)).collect();
        let rgb = eval_sh(&coeffs, &u, 2).unwrap();
        let y = real_sh_oracle(u, 2);
        for ch in 0..3 {
            let want = (0..9).map(|b| y[b] * coeffs[ch * 9 + b]).sum::<f64>() + 0.5;
            assert!((rgb[ch] - want.max(0.0)).abs() < 1e-9, "channel {ch}");
        }
    }
}
