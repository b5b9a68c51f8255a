//! Small fixed-size linear algebra used by the splatting code.

use crate::Scalar;

pub type Vec3<T> = [T; 3];
pub type Mat3<T> = [[T; 3]; 3];

#[inline]
pub fn zero3<T: Scalar>() -> Mat3<T> {
    [[T::zero(); 3]; 3]
}

#[inline]
pub fn identity3<T: Scalar>() -> Mat3<T> {
    let mut m = zero3();
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = T::one();
    }
    m
}

#[inline]
pub fn matmul3<T: Scalar>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = zero3();
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = T::zero();
            for k in 0..3 {
                acc += a[i][k] * b[k][j];
            }
            out[i][j] = acc;
        }
    }
    out
}

#[inline]
pub fn transpose3<T: Scalar>(a: &Mat3<T>) -> Mat3<T> {
    let mut out = zero3();
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

#[inline]
pub fn matvec3<T: Scalar>(a: &Mat3<T>, v: &Vec3<T>) -> Vec3<T> {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

/// `aᵀ v`.
#[inline]
pub fn matvec3_t<T: Scalar>(a: &Mat3<T>, v: &Vec3<T>) -> Vec3<T> {
    [
        a[0][0] * v[0] + a[1][0] * v[1] + a[2][0] * v[2],
        a[0][1] * v[0] + a[1][1] * v[1] + a[2][1] * v[2],
        a[0][2] * v[0] + a[1][2] * v[1] + a[2][2] * v[2],
    ]
}

#[inline]
pub fn dot3<T: Scalar>(a: &Vec3<T>, b: &Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn sub3<T: Scalar>(a: &Vec3<T>, b: &Vec3<T>) -> Vec3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn norm3<T: Scalar>(a: &Vec3<T>) -> T {
    dot3(a, a).sqrt()
}

#[inline]
pub fn cross3<T: Scalar>(a: &Vec3<T>, b: &Vec3<T>) -> Vec3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_to_mat<T: Scalar>(q: &[T; 4]) -> Mat3<T> {
    let two = T::lit(2.0);
    let [w, x, y, z] = *q;
    [
        [
            T::one() - two * (y * y + z * z),
            two * (x * y - w * z),
            two * (x * z + w * y),
        ],
        [
            two * (x * y + w * z),
            T::one() - two * (x * x + z * z),
            two * (y * z - w * x),
        ],
        [
            two * (x * z - w * y),
            two * (y * z + w * x),
            T::one() - two * (x * x + y * y),
        ],
    ]
}

/// Gradient of `L` with respect to a unit quaternion given `dL/dR`.
pub fn quat_to_mat_backward<T: Scalar>(q: &[T; 4], dr: &Mat3<T>) -> [T; 4] {
    let two = T::lit(2.0);
    let four = T::lit(4.0);
    let [w, x, y, z] = *q;
    let zero = T::zero();
    let dw = [[zero, -two * z, two * y], [two * z, zero, -two * x], [-two * y, two * x, zero]];
    let dx = [[zero, two * y, two * z], [two * y, -four * x, -two * w], [two * z, two * w, -four * x]];
    let dy = [[-four * y, two * x, two * w], [two * x, zero, two * z], [-two * w, two * z, -four * y]];
    let dz = [[-four * z, -two * w, two * x], [two * w, -four * z, two * y], [two * x, two * y, zero]];
    let contract = |m: &Mat3<T>| {
        let mut acc = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                acc += m[i][j] * dr[i][j];
            }
        }
        acc
    };
    [contract(&dw), contract(&dx), contract(&dy), contract(&dz)]
}

/// Normalizes a quaternion; returns it together with its original norm.
pub fn normalize_quat<T: Scalar>(q: &[T; 4]) -> ([T; 4], T) {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    ([q[0] / n, q[1] / n, q[2] / n, q[3] / n], n)
}

/// Chains a gradient on the normalized quaternion back to the raw one.
pub fn normalize_quat_backward<T: Scalar>(qn: &[T; 4], norm: T, dqn: &[T; 4]) -> [T; 4] {
    let d = qn[0] * dqn[0] + qn[1] * dqn[1] + qn[2] * dqn[2] + qn[3] * dqn[3];
    [
        (dqn[0] - qn[0] * d) / norm,
        (dqn[1] - qn[1] * d) / norm,
        (dqn[2] - qn[2] * d) / norm,
        (dqn[3] - qn[3] * d) / norm,
    ]
}

/// Eigenvalues of a symmetric 2×2 matrix `[[a, b], [b, c]]`, larger first.
pub fn sym2_eigenvalues<T: Scalar>(a: T, b: T, c: T) -> (T, T) {
    let mid = (a + c) * T::lit(0.5);
    let half_diff = (a - c) * T::lit(0.5);
    let r = (half_diff * half_diff + b * b).sqrt();
    (mid + r, mid - r)
}
