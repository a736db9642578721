use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

pub const SH_C0: f32 = 0.282_094_8;
const SH_C1: f32 = 0.488_602_5;
const SH_C2: [f32; 5] = [1.092_548_4, -1.092_548_4, 0.315_391_57, -1.092_548_4, 0.546_274_2];
const SH_C3: [f32; 7] = [
    -0.590_043_6,
    2.890_611_4,
    -0.457_045_8,
    0.373_176_33,
    -0.457_045_8,
    1.445_305_7,
    -0.590_043_6,
];

/// One oriented 3D gaussian with activations already applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplatPrimitive {
    pub position: [f32; 3],
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: [f32; 4],
    /// Per-axis standard deviations in meters.
    pub scale: [f32; 3],
    pub opacity: f32,
    pub sh_dc: [f32; 3],
    /// Higher-order SH coefficients in file order (channel-major).
    pub sh_rest: Vec<f32>,
}

impl SplatPrimitive {
    /// An isotropic, DC-only splat whose decoded color is `rgb`.
    pub fn isotropic(position: [f32; 3], sigma: f32, opacity: f32, rgb: [f32; 3]) -> Self {
        SplatPrimitive {
            position,
            rotation: [1.0, 0.0, 0.0, 0.0],
            scale: [sigma; 3],
            opacity,
            sh_dc: rgb.map(|c| (c - 0.5) / SH_C0),
            sh_rest: Vec::new(),
        }
    }

    pub fn sh_degree(&self) -> usize {
        match self.sh_rest.len() {
            0 => 0,
            9 => 1,
            24 => 2,
            _ => 3,
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f32> {
        let [w, x, y, z] = self.rotation;
        UnitQuaternion::new_unchecked(Quaternion::new(w, x, y, z))
            .to_rotation_matrix()
            .into_inner()
    }

    /// World-space covariance `R diag(s^2) R^T`.
    pub fn covariance(&self) -> Matrix3<f32> {
        let r = self.rotation_matrix();
        let s2 = Vector3::from(self.scale.map(|s| s * s));
        r * Matrix3::from_diagonal(&s2) * r.transpose()
    }

    /// View-independent color from the DC term, clamped to `[0, 1]`.
    pub fn dc_color(&self) -> [f32; 3] {
        self.sh_dc.map(|c| (SH_C0 * c + 0.5).clamp(0.0, 1.0))
    }

    /// Evaluates the SH color up to `max_degree` along the unit direction `dir`
    /// (from the camera center toward the splat).
    pub fn eval_color(&self, dir: [f32; 3], max_degree: usize) -> [f32; 3] {
        let degree = self.sh_degree().min(max_degree);
        if degree == 0 {
            return self.dc_color();
        }
        let per_channel = (self.sh_degree() + 1).pow(2) - 1;
        let [x, y, z] = dir;
        let (xx, yy, zz) = (x * x, y * y, z * z);
        let (xy, yz, xz) = (x * y, y * z, x * z);
        let mut basis = [0.0f32; 15];
        basis[0] = -SH_C1 * y;
        basis[1] = SH_C1 * z;
        basis[2] = -SH_C1 * x;
        if degree > 1 {
            basis[3] = SH_C2[0] * xy;
            basis[4] = SH_C2[1] * yz;
            basis[5] = SH_C2[2] * (2.0 * zz - xx - yy);
            basis[6] = SH_C2[3] * xz;
            basis[7] = SH_C2[4] * (xx - yy);
        }
        if degree > 2 {
            basis[8] = SH_C3[0] * y * (3.0 * xx - yy);
            basis[9] = SH_C3[1] * xy * z;
            basis[10] = SH_C3[2] * y * (4.0 * zz - xx - yy);
            basis[11] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
            basis[12] = SH_C3[4] * x * (4.0 * zz - xx - yy);
            basis[13] = SH_C3[5] * z * (xx - yy);
            basis[14] = SH_C3[6] * x * (xx - 3.0 * yy);
        }
        let used = (degree + 1).pow(2) - 1;
        let mut out = [0.0f32; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let coeffs = &self.sh_rest[c * per_channel..c * per_channel + used];
            let mut v = SH_C0 * self.sh_dc[c];
            for (b, k) in basis[..used].iter().zip(coeffs) {
                v += b * k;
            }
            *o = (v + 0.5).clamp(0.0, 1.0);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn isotropic_covariance_is_scaled_identity() {
        let s = SplatPrimitive::isotropic([0.0; 3], 0.2, 1.0, [0.5; 3]);
        assert_relative_eq!(s.covariance(), Matrix3::identity() * 0.04, epsilon = 1e-7);
        // rotation does not change an isotropic covariance
        let mut r = s.clone();
        r.rotation = [0.5f32.sqrt(), 0.5f32.sqrt(), 0.0, 0.0];
        assert_relative_eq!(r.covariance(), Matrix3::identity() * 0.04, epsilon = 1e-7);
    }

    #[test]
    fn dc_decode_and_clamp() {
        let mut s = SplatPrimitive::isotropic([0.0; 3], 0.1, 1.0, [0.25, 0.5, 0.75]);
        let c = s.dc_color();
        assert_relative_eq!(c[0], 0.25, epsilon = 1e-6);
        assert_relative_eq!(c[2], 0.75, epsilon = 1e-6);
        s.sh_dc = [10.0, -10.0, 0.0];
        assert_eq!(s.dc_color(), [1.0, 0.0, 0.5]);
    }

    #[test]
    fn higher_degree_falls_back_to_dc_when_disabled() {
        let mut s = SplatPrimitive::isotropic([0.0; 3], 0.1, 1.0, [0.5; 3]);
        s.sh_rest = vec![0.3; 45];
        assert_eq!(s.sh_degree(), 3);
        assert_eq!(s.eval_color([0.0, 0.0, 1.0], 0), s.dc_color());
        let c1 = s.eval_color([0.0, 0.0, 1.0], 1);
        // degree-1 z basis adds C1 * z * k
        assert_relative_eq!(c1[0], 0.5 + SH_C1 * 0.3, epsilon = 1e-6);
    }
}
