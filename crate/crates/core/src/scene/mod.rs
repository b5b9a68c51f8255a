//! Scene data model: Gaussian attributes, cameras and the projection math
//! shared by the rasterizer.

pub mod io;
pub mod math;
pub mod sh;

use crate::error::{invalid, mismatch, Result};
use crate::Scalar;
use math::{matmul3, matvec3, quat_to_mat, transpose3, Mat3, Vec3};

pub use sh::{basis_count, eval_sh, sh_basis, sh_basis_with_grad, SH_C0};

/// Low-pass floor added to the diagonal of every projected covariance (px²).
pub const COV2D_FLOOR: f64 = 0.3;
/// Eigenvalue floor used when a projected covariance is not PSD.
pub const COV2D_EIG_FLOOR: f64 = 1e-9;

/// Per-Gaussian attributes for a single time-step.
///
/// Scales are stored as logarithms, opacities as logits and rotations as
/// (not necessarily normalized) quaternions `(w, x, y, z)`. SH coefficients
/// are laid out `[gaussian][channel][basis]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud<T> {
    pub sh_degree: usize,
    pub positions: Vec<[T; 3]>,
    pub rotations: Vec<[T; 4]>,
    pub log_scales: Vec<[T; 3]>,
    pub opacity_logits: Vec<T>,
    pub sh_coeffs: Vec<T>,
}

impl<T: Scalar> GaussianCloud<T> {
    pub fn empty(sh_degree: usize) -> Self {
        Self {
            sh_degree,
            positions: Vec::new(),
            rotations: Vec::new(),
            log_scales: Vec::new(),
            opacity_logits: Vec::new(),
            sh_coeffs: Vec::new(),
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    #[inline]
    pub fn basis(&self) -> usize {
        basis_count(self.sh_degree)
    }

    /// Number of SH values per Gaussian (`3 · B`).
    #[inline]
    pub fn sh_stride(&self) -> usize {
        3 * self.basis()
    }

    pub fn sh(&self, i: usize) -> &[T] {
        let s = self.sh_stride();
        &self.sh_coeffs[i * s..(i + 1) * s]
    }

    pub fn sh_mut(&mut self, i: usize) -> &mut [T] {
        let s = self.sh_stride();
        &mut self.sh_coeffs[i * s..(i + 1) * s]
    }

    pub fn scale(&self, i: usize) -> [T; 3] {
        let l = self.log_scales[i];
        [l[0].exp(), l[1].exp(), l[2].exp()]
    }

    pub fn opacity(&self, i: usize) -> T {
        self.opacity_logits[i].sigmoid()
    }

    pub fn push(&mut self, g: &GaussianRecord<T>) {
        debug_assert_eq!(g.sh.len(), self.sh_stride());
        self.positions.push(g.position);
        self.rotations.push(g.rotation);
        self.log_scales.push(g.log_scale);
        self.opacity_logits.push(g.opacity_logit);
        self.sh_coeffs.extend_from_slice(&g.sh);
    }

    pub fn record(&self, i: usize) -> GaussianRecord<T> {
        GaussianRecord {
            position: self.positions[i],
            rotation: self.rotations[i],
            log_scale: self.log_scales[i],
            opacity_logit: self.opacity_logits[i],
            sh: self.sh(i).to_vec(),
        }
    }

    /// New cloud holding only the Gaussians selected by `keep`.
    pub fn retain_mask(&self, keep: &[bool]) -> Self {
        let mut out = Self::empty(self.sh_degree);
        for (i, &k) in keep.iter().enumerate() {
            if k {
                out.push(&self.record(i));
            }
        }
        out
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut out = Self::empty(self.sh_degree);
        for &i in indices {
            out.push(&self.record(i));
        }
        out
    }

    pub fn check(&self) -> Result<()> {
        let n = self.len();
        if self.rotations.len() != n
            || self.log_scales.len() != n
            || self.opacity_logits.len() != n
            || self.sh_coeffs.len() != n * self.sh_stride()
        {
            return Err(mismatch("attribute arrays disagree on the Gaussian count"));
        }
        if self.sh_degree > 3 {
            return Err(invalid(format!("SH degree {} exceeds 3", self.sh_degree)));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> GaussianCloud<U> {
        let c = |v: T| U::lit(v.to_f64_lossy());
        GaussianCloud {
            sh_degree: self.sh_degree,
            positions: self.positions.iter().map(|p| p.map(c)).collect(),
            rotations: self.rotations.iter().map(|p| p.map(c)).collect(),
            log_scales: self.log_scales.iter().map(|p| p.map(c)).collect(),
            opacity_logits: self.opacity_logits.iter().map(|&v| c(v)).collect(),
            sh_coeffs: self.sh_coeffs.iter().map(|&v| c(v)).collect(),
        }
    }

    /// Rounds every attribute to the nearest `f32`.
    pub fn round_to_f32(&self) -> Self {
        let r = |v: T| T::lit(v.to_f32_lossy() as f64);
        Self {
            sh_degree: self.sh_degree,
            positions: self.positions.iter().map(|p| p.map(r)).collect(),
            rotations: self.rotations.iter().map(|p| p.map(r)).collect(),
            log_scales: self.log_scales.iter().map(|p| p.map(r)).collect(),
            opacity_logits: self.opacity_logits.iter().map(|&v| r(v)).collect(),
            sh_coeffs: self.sh_coeffs.iter().map(|&v| r(v)).collect(),
        }
    }

    /// Number of scalar attributes per Gaussian (`3 + 4 + 3 + 1 + 3B`).
    pub fn floats_per_gaussian(&self) -> usize {
        11 + self.sh_stride()
    }
}

/// All attributes of one Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianRecord<T> {
    pub position: [T; 3],
    pub rotation: [T; 4],
    pub log_scale: [T; 3],
    pub opacity_logit: T,
    pub sh: Vec<T>,
}

/// Pinhole camera with zero skew.
///
/// `rotation`/`translation` map world to camera coordinates; the camera looks
/// down +z with +y pointing down the image.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
    pub width: usize,
    pub height: usize,
    pub near: T,
}

impl<T: Scalar> Camera<T> {
    /// Camera at `eye` looking at `target`, with `up` mapped towards −y.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        eye: Vec3<T>,
        target: Vec3<T>,
        up: Vec3<T>,
        fx: T,
        fy: T,
        width: usize,
        height: usize,
    ) -> Self {
        let f = normalize(math::sub3(&target, &eye));
        let upd = math::dot3(&up, &f);
        let y = normalize([-(up[0] - upd * f[0]), -(up[1] - upd * f[1]), -(up[2] - upd * f[2])]);
        let x = math::cross3(&y, &f);
        let rotation = [x, y, f];
        let re = matvec3(&rotation, &eye);
        let half = T::lit(0.5);
        Self {
            fx,
            fy,
            cx: T::from_usize_lossy(width) * half - half,
            cy: T::from_usize_lossy(height) * half - half,
            rotation,
            translation: [-re[0], -re[1], -re[2]],
            width,
            height,
            near: T::lit(0.01),
        }
    }

    /// Intrinsic matrix K.
    pub fn intrinsics(&self) -> Mat3<T> {
        let z = T::zero();
        [[self.fx, z, self.cx], [z, self.fy, self.cy], [z, z, T::one()]]
    }

    /// 4×4 world-to-camera transform W.
    pub fn world_to_camera(&self) -> [[T; 4]; 4] {
        let r = &self.rotation;
        let t = &self.translation;
        let z = T::zero();
        [
            [r[0][0], r[0][1], r[0][2], t[0]],
            [r[1][0], r[1][1], r[1][2], t[1]],
            [r[2][0], r[2][1], r[2][2], t[2]],
            [z, z, z, T::one()],
        ]
    }

    pub fn to_camera(&self, p: &Vec3<T>) -> Vec3<T> {
        let v = matvec3(&self.rotation, p);
        [v[0] + self.translation[0], v[1] + self.translation[1], v[2] + self.translation[2]]
    }

    /// Camera center in world coordinates (`−Rᵀ t`).
    pub fn center(&self) -> Vec3<T> {
        let v = math::matvec3_t(&self.rotation, &self.translation);
        [-v[0], -v[1], -v[2]]
    }

    pub fn check(&self) -> Result<()> {
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return Err(invalid("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(invalid("camera image size must be nonzero"));
        }
        let rrt = matmul3(&self.rotation, &transpose3(&self.rotation));
        for (i, row) in rrt.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let expect = if i == j { T::one() } else { T::zero() };
                if (v - expect).abs() > T::lit(1e-6) {
                    return Err(invalid("camera rotation is not orthonormal"));
                }
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Camera<U> {
        let c = |v: T| U::lit(v.to_f64_lossy());
        Camera {
            fx: c(self.fx),
            fy: c(self.fy),
            cx: c(self.cx),
            cy: c(self.cy),
            rotation: self.rotation.map(|r| r.map(c)),
            translation: self.translation.map(c),
            width: self.width,
            height: self.height,
            near: c(self.near),
        }
    }
}

fn normalize<T: Scalar>(v: Vec3<T>) -> Vec3<T> {
    let n = math::norm3(&v);
    [v[0] / n, v[1] / n, v[2] / n]
}

/// `Σ = R S Sᵀ Rᵀ` for a unit quaternion and activated scales.
pub fn build_covariance<T: Scalar>(q: &[T; 4], s: &[T; 3]) -> Result<Mat3<T>> {
    if q.iter().chain(s.iter()).any(|v| !v.is_finite()) {
        return Err(invalid("non-finite quaternion or scale"));
    }
    let r = quat_to_mat(q);
    let mut m = r;
    for row in m.iter_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v *= s[j];
        }
    }
    Ok(matmul3(&m, &transpose3(&m)))
}

/// Result of projecting a world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection<T> {
    Visible { pixel: [T; 2], depth: T },
    /// Behind (or on) the near plane.
    Culled,
}

/// Perspective projection of a world point to pixel coordinates.
pub fn project_point<T: Scalar>(p: &Vec3<T>, cam: &Camera<T>) -> Projection<T> {
    let pc = cam.to_camera(p);
    if pc[2] <= cam.near {
        return Projection::Culled;
    }
    Projection::Visible {
        pixel: [cam.fx * pc[0] / pc[2] + cam.cx, cam.fy * pc[1] / pc[2] + cam.cy],
        depth: pc[2],
    }
}

/// Upper triangle `(a, b, c)` of a 2×2 screen-space covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cov2<T> {
    pub a: T,
    pub b: T,
    pub c: T,
    /// Set when the matrix had to be clamped back to PSD.
    pub clamped: bool,
}

/// Projection Jacobian rows at a camera-space point.
pub fn projection_jacobian<T: Scalar>(pc: &Vec3<T>, cam: &Camera<T>) -> [[T; 3]; 2] {
    let iz = T::one() / pc[2];
    let iz2 = iz * iz;
    [
        [cam.fx * iz, T::zero(), -cam.fx * pc[0] * iz2],
        [T::zero(), cam.fy * iz, -cam.fy * pc[1] * iz2],
    ]
}

/// `J W Σ Wᵀ Jᵀ` without the low-pass floor.
pub fn project_covariance_raw<T: Scalar>(sigma: &Mat3<T>, pc: &Vec3<T>, cam: &Camera<T>) -> [T; 3] {
    let j = projection_jacobian(pc, cam);
    let mut t = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            let mut acc = T::zero();
            for k in 0..3 {
                acc += j[r][k] * cam.rotation[k][c];
            }
            t[r][c] = acc;
        }
    }
    let mut ts = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            let mut acc = T::zero();
            for k in 0..3 {
                acc += t[r][k] * sigma[k][c];
            }
            ts[r][c] = acc;
        }
    }
    let mut out = [[T::zero(); 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            let mut acc = T::zero();
            for k in 0..3 {
                acc += ts[r][k] * t[c][k];
            }
            out[r][c] = acc;
        }
    }
    [out[0][0], (out[0][1] + out[1][0]) * T::lit(0.5), out[1][1]]
}

/// Screen-space covariance with the low-pass floor, clamped to PSD if needed.
pub fn project_covariance<T: Scalar>(sigma: &Mat3<T>, pc: &Vec3<T>, cam: &Camera<T>) -> Cov2<T> {
    let [a, b, c] = project_covariance_raw(sigma, pc, cam);
    let floor = T::lit(COV2D_FLOOR);
    clamp_psd(a + floor, b, c + floor)
}

pub(crate) fn clamp_psd<T: Scalar>(a: T, b: T, c: T) -> Cov2<T> {
    let eps = T::lit(COV2D_EIG_FLOOR);
    let (l1, l2) = math::sym2_eigenvalues(a, b, c);
    if l2 >= eps && l2.is_finite() {
        return Cov2 { a, b, c, clamped: false };
    }
    // Rebuild from the floored eigen-decomposition.
    let l1f = l1.max(eps);
    let l2f = l2.max(eps);
    let (vx, vy) = if b.abs() > T::lit(1e-300) {
        let (vx, vy) = (l1 - c, b);
        let n = (vx * vx + vy * vy).sqrt();
        (vx / n, vy / n)
    } else if a >= c {
        (T::one(), T::zero())
    } else {
        (T::zero(), T::one())
    };
    // v1 = (vx, vy), v2 = (-vy, vx)
    Cov2 {
        a: l1f * vx * vx + l2f * vy * vy,
        b: (l1f - l2f) * vx * vy,
        c: l1f * vy * vy + l2f * vx * vx,
        clamped: true,
    }
}
