//! Angle/vector conversions, rotations and the gaze error metrics.
//!
//! Direction convention: the camera looks along +z toward the subject, x points to the
//! image right and y points down. A (pitch, yaw) pair maps to
//! `(-cos p * sin y, -sin p, -cos p * cos y)`, so `(0, 0)` looks straight into the camera,
//! positive pitch looks up and positive yaw looks toward the image left.
//!
//! All head-pose and gaze angles are assumed to already live in the normalized camera
//! frame of the eye crop; no camera-space warping is done anywhere in the crate.

use std::f64::consts::PI;
use std::ops::Mul;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::EyeImage;

/// Tolerance on `|v|` accepted by [`vec_to_angles`].
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// A pitch/yaw pair in radians. Used for both head pose and gaze.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Angles {
    pub pitch: f64,
    pub yaw: f64,
}

impl Angles {
    pub const ZERO: Angles = Angles {
        pitch: 0.0,
        yaw: 0.0,
    };

    pub fn new(pitch: f64, yaw: f64) -> Result<Self> {
        let a = Angles { pitch, yaw };
        a.validate()?;
        Ok(a)
    }

    pub fn from_degrees(pitch_deg: f64, yaw_deg: f64) -> Self {
        Angles {
            pitch: pitch_deg.to_radians(),
            yaw: yaw_deg.to_radians(),
        }
    }

    pub fn to_degrees(self) -> (f64, f64) {
        (self.pitch.to_degrees(), self.yaw.to_degrees())
    }

    pub fn validate(&self) -> Result<()> {
        if !self.pitch.is_finite() || !self.yaw.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite angles {self:?}")));
        }
        if self.pitch.abs() > PI / 2.0 {
            return Err(Error::InvalidInput(format!(
                "pitch {} outside [-pi/2, pi/2]",
                self.pitch
            )));
        }
        if self.yaw <= -PI || self.yaw > PI {
            return Err(Error::InvalidInput(format!(
                "yaw {} outside (-pi, pi]",
                self.yaw
            )));
        }
        Ok(())
    }

    /// Same pitch, negated yaw.
    pub fn mirrored(self) -> Self {
        Angles {
            pitch: self.pitch,
            yaw: -self.yaw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitVec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UnitVec3 {
    /// Normalizes `(x, y, z)`; `None` for the zero vector.
    pub fn normalize(x: f64, y: f64, z: f64) -> Option<Self> {
        let n = (x * x + y * y + z * z).sqrt();
        if n == 0.0 || !n.is_finite() {
            return None;
        }
        Some(UnitVec3 {
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn dot(&self, other: &UnitVec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

/// 3x3 rotation matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(pub [[f64; 3]; 3]);

impl Rotation {
    pub const IDENTITY: Rotation = Rotation([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    /// Rotation about the x axis that tilts the forward axis upward by `pitch`.
    pub fn pitch(pitch: f64) -> Self {
        // Rx(-pitch): a positive pitch must move the -z axis toward -y (up).
        let (s, c) = (-pitch).sin_cos();
        Rotation([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    }

    /// Rotation about the y axis by `yaw`.
    pub fn yaw(yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        Rotation([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    }

    /// Pitch is applied first, then yaw: `R = R_yaw * R_pitch`, so that
    /// `from_angles(a).apply(-z) == angles_to_vec(a)`.
    pub fn from_angles(a: Angles) -> Self {
        Rotation::yaw(a.yaw) * Rotation::pitch(a.pitch)
    }

    pub fn transpose(&self) -> Self {
        let m = &self.0;
        let mut t = [[0.0; 3]; 3];
        for (i, row) in t.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = m[j][i];
            }
        }
        Rotation(t)
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Checks `R^T R = I` and `det R = +1` within `tol`.
    pub fn is_orthonormal(&self, tol: f64) -> bool {
        let p = self.transpose() * *self;
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                if (p.0[i][j] - want).abs() > tol {
                    return false;
                }
            }
        }
        (self.determinant() - 1.0).abs() <= tol
    }

    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }
}

impl Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.0[i][k] * rhs.0[k][j]).sum();
            }
        }
        Rotation(out)
    }
}

pub fn angles_to_vec(a: Angles) -> UnitVec3 {
    let (sp, cp) = a.pitch.sin_cos();
    let (sy, cy) = a.yaw.sin_cos();
    UnitVec3 {
        x: -cp * sy,
        y: -sp,
        z: -cp * cy,
    }
}

pub fn vec_to_angles(v: UnitVec3) -> Result<Angles> {
    let n = v.norm();
    if !n.is_finite() || (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
        return Err(Error::InvalidInput(format!(
            "vector ({}, {}, {}) has norm {n}, expected unit",
            v.x, v.y, v.z
        )));
    }
    let pitch = (-v.y).clamp(-1.0, 1.0).asin();
    let mut yaw = (-v.x).atan2(-v.z);
    // atan2 returns [-pi, pi]; fold -pi onto pi to stay in (-pi, pi].
    if yaw <= -PI {
        yaw = PI;
    }
    Ok(Angles { pitch, yaw })
}

/// Angle between the two directions, in degrees. Uses `atan2(|u x v|, u . v)`, which
/// stays accurate for nearly parallel vectors where `acos` loses half its digits.
pub fn angular_error(a: Angles, b: Angles) -> f64 {
    let (u, v) = (angles_to_vec(a), angles_to_vec(b));
    let cross = [
        u.y * v.z - u.z * v.y,
        u.z * v.x - u.x * v.z,
        u.x * v.y - u.y * v.x,
    ];
    let s = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
    s.atan2(u.dot(&v)).to_degrees()
}

/// `1 - cos` of the angle between the two directions.
pub fn cosine_distance(a: Angles, b: Angles) -> f64 {
    1.0 - angles_to_vec(a).dot(&angles_to_vec(b))
}

/// Gaze of an eye rotated by `eye_in_head` inside a head rotated by `head`.
pub fn compose_gaze(head: &Rotation, eye_in_head: &Rotation) -> Angles {
    let r = *head * *eye_in_head;
    let [x, y, z] = r.apply([0.0, 0.0, -1.0]);
    // Products of orthonormal matrices stay unit within rounding; renormalize anyway.
    let v = UnitVec3::normalize(x, y, z).expect("rotation of a unit vector is non-zero");
    vec_to_angles(v).expect("normalized vector")
}

/// Convenience form of [`compose_gaze`] for angle pairs.
pub fn compose_gaze_angles(head: Angles, eye_in_head: Angles) -> Angles {
    compose_gaze(&Rotation::from_angles(head), &Rotation::from_angles(eye_in_head))
}

/// Mirrors a sample about the vertical image axis: columns reversed, yaws negated.
pub fn mirror_sample(img: &EyeImage, head: Angles, gaze: Angles) -> (EyeImage, Angles, Angles) {
    (img.flipped_horizontally(), head.mirrored(), gaze.mirrored())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn angles_to_vec_examples() {
        let v = angles_to_vec(Angles::ZERO);
        assert_eq!((v.x, v.y, v.z), (-0.0, -0.0, -1.0));
        let v = angles_to_vec(Angles::new(0.0, PI / 2.0).unwrap());
        assert!(close(v.x, -1.0, 1e-15) && close(v.y, 0.0, 1e-15) && close(v.z, 0.0, 1e-15));

        // Independent evaluation of the three trig expressions.
        let (p, y) = (0.1f64, 0.2f64);
        let want = [-(p.cos()) * y.sin(), -(p.sin()), -(p.cos()) * y.cos()];
        let v = angles_to_vec(Angles { pitch: p, yaw: y });
        assert_eq!(v.to_array(), want);
        // Frozen values for the same input.
        assert!(close(v.x, -0.197_676_811_654_083_88, 1e-15));
        assert!(close(v.y, -0.099_833_416_646_828_15, 1e-15));
        assert!(close(v.z, -0.975_170_327_201_816, 1e-15));
    }

    #[test]
    fn vec_to_angles_examples() {
        let a = vec_to_angles(UnitVec3 {
            x: 0.0,
            y: 0.0,
            z: -1.0,
        })
        .unwrap();
        assert_eq!((a.pitch, a.yaw), (0.0, 0.0));
        let a = vec_to_angles(UnitVec3 {
            x: -1.0,
            y: 0.0,
            z: 0.0,
        })
        .unwrap();
        assert!(close(a.pitch, 0.0, 1e-15) && close(a.yaw, PI / 2.0, 1e-15));
    }

    #[test]
    fn vec_to_angles_rejects_non_unit() {
        let err = vec_to_angles(UnitVec3 {
            x: 0.0,
            y: 0.0,
            z: -1.1,
        });
        assert!(matches!(err, Err(Error::InvalidInput(_))));
        // Within tolerance is accepted.
        assert!(vec_to_angles(UnitVec3 {
            x: 0.0,
            y: 0.0,
            z: -1.0 - 5e-7
        })
        .is_ok());
    }

    #[test]
    fn angular_error_examples() {
        let a = Angles::new(0.3, -0.2).unwrap();
        assert_eq!(angular_error(a, a), 0.0);
        let e = angular_error(Angles::ZERO, Angles::new(0.0, PI / 2.0).unwrap());
        assert!(close(e, 90.0, 1e-12));

        // Oracle: unit vectors written out directly, dot, acos.
        let v = |p: f64, y: f64| [-p.cos() * y.sin(), -p.sin(), -p.cos() * y.cos()];
        let (u, w) = (v(0.10, 0.20), v(0.15, 0.25));
        let dot: f64 = u.iter().zip(&w).map(|(a, b)| a * b).sum();
        let want = dot.acos().to_degrees();
        let got = angular_error(Angles::new(0.10, 0.20).unwrap(), Angles::new(0.15, 0.25).unwrap());
        assert!(close(got, want, 1e-9));
        assert!(close(got, 4.035_427_405, 1e-6), "{got}");
    }

    #[test]
    fn cosine_distance_examples() {
        let a = Angles::new(0.3, -0.4).unwrap();
        assert!(cosine_distance(a, a).abs() < 1e-15);
        assert!(close(
            cosine_distance(Angles::ZERO, Angles::new(0.0, PI / 2.0).unwrap()),
            1.0,
            1e-15
        ));
        let v = |p: f64, y: f64| [-p.cos() * y.sin(), -p.sin(), -p.cos() * y.cos()];
        let (u, w) = (v(0.3, -0.4), v(-0.1, 0.5));
        let dot: f64 = u.iter().zip(&w).map(|(a, b)| a * b).sum();
        let got = cosine_distance(Angles::new(0.3, -0.4).unwrap(), Angles::new(-0.1, 0.5).unwrap());
        assert!(close(got, 1.0 - dot, 1e-12));
        assert!(close(got, 0.438_622_867, 1e-6), "{got}");
    }

    #[test]
    fn compose_gaze_examples() {
        let head = Angles::new(0.2, -0.4).unwrap();
        let g = compose_gaze(&Rotation::from_angles(head), &Rotation::IDENTITY);
        assert!(close(g.pitch, head.pitch, 1e-12) && close(g.yaw, head.yaw, 1e-12));

        let g = compose_gaze(&Rotation::IDENTITY, &Rotation::yaw(35f64.to_radians()));
        assert!(close(g.pitch, 0.0, 1e-12));
        assert!(close(g.yaw.to_degrees(), 35.0, 1e-9));

        // Two yaw matrices multiplied by hand: Ry(a)Ry(b) = Ry(a+b).
        let (a, b) = (60f64.to_radians(), 35f64.to_radians());
        let m = [
            [a.cos() * b.cos() - a.sin() * b.sin(), 0.0, a.cos() * b.sin() + a.sin() * b.cos()],
            [0.0, 1.0, 0.0],
            [-(a.sin() * b.cos() + a.cos() * b.sin()), 0.0, a.cos() * b.cos() - a.sin() * b.sin()],
        ];
        let fwd = [-m[0][2], -m[1][2], -m[2][2]];
        let want_yaw = (-fwd[0]).atan2(-fwd[2]).to_degrees();
        let g = compose_gaze(&Rotation::yaw(a), &Rotation::yaw(b));
        assert!(close(g.yaw.to_degrees(), want_yaw, 1e-9));
        assert!(close(g.yaw.to_degrees(), 95.0, 1e-9));
    }

    #[test]
    fn rotations_are_orthonormal() {
        for (p, y) in [(0.0, 0.0), (0.5, -1.2), (-1.4, 3.0), (1.5, -3.1)] {
            let r = Rotation::from_angles(Angles { pitch: p, yaw: y });
            assert!(r.is_orthonormal(1e-12));
            let v = r.apply([0.0, 0.0, -1.0]);
            let w = angles_to_vec(Angles { pitch: p, yaw: y }).to_array();
            for i in 0..3 {
                assert!(close(v[i], w[i], 1e-12));
            }
        }
    }

    #[test]
    fn mirror_examples() {
        let img = EyeImage::from_raw(3, 2, 1, vec![1, 2, 3, 4, 5, 6]).unwrap();
        let head = Angles::new(0.1, 0.2).unwrap();
        let gaze = Angles::new(-0.3, -0.5).unwrap();
        let (m, h, g) = mirror_sample(&img, head, gaze);
        // Row 0 = [1 2 3], row 1 = [4 5 6], reversed column by column.
        assert_eq!(m.data(), &[3, 2, 1, 6, 5, 4]);
        assert_eq!((h.pitch, h.yaw), (0.1, -0.2));
        assert_eq!((g.pitch, g.yaw), (-0.3, 0.5));
        let (m2, h2, g2) = mirror_sample(&m, h, g);
        assert_eq!(m2, img);
        assert_eq!(h2, head);
        assert_eq!(g2, gaze);
    }

    #[test]
    fn mirror_rgb_keeps_channel_order() {
        let img = EyeImage::from_raw(2, 1, 3, vec![1, 2, 3, 4, 5, 6]).unwrap();
        let (m, _, _) = mirror_sample(&img, Angles::ZERO, Angles::ZERO);
        assert_eq!(m.data(), &[4, 5, 6, 1, 2, 3]);
    }

    fn angles_strategy() -> impl Strategy<Value = Angles> {
        (-PI / 2.0..=PI / 2.0, -PI + 1e-12..=PI).prop_map(|(pitch, yaw)| Angles { pitch, yaw })
    }

    proptest! {
        #[test]
        fn vec_is_unit(a in angles_strategy()) {
            prop_assert!((angles_to_vec(a).norm() - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn round_trip(p in -1.4f64..=1.4, y in -PI + 1e-9..=PI) {
            let a = Angles { pitch: p, yaw: y };
            let back = vec_to_angles(angles_to_vec(a)).unwrap();
            prop_assert!((back.pitch - p).abs() <= 1e-9);
            prop_assert!((back.yaw - y).abs() <= 1e-9);
        }

        #[test]
        fn error_symmetric_and_consistent(a in angles_strategy(), b in angles_strategy()) {
            let e = angular_error(a, b);
            prop_assert!(e >= 0.0 && e <= 180.0);
            prop_assert_eq!(e, angular_error(b, a));
            let cd = cosine_distance(a, b);
            prop_assert!((cd - (1.0 - (e.to_radians()).cos())).abs() <= 1e-9);
        }

        #[test]
        fn small_yaws_add(a in -0.3f64..0.3, b in -0.3f64..0.3) {
            let g = compose_gaze(&Rotation::yaw(a), &Rotation::yaw(b));
            prop_assert!((g.yaw - (a + b)).abs() <= 1e-9);
            prop_assert!(g.pitch.abs() <= 1e-9);
        }
    }
}
