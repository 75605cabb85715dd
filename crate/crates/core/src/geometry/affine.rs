use crate::error::{Error, Result};

const MIN_ABS_DET: f64 = 1e-12;

/// Invertible 2×3 pixel-coordinate transform, `dst = M · (x, y, 1)ᵀ`.
///
/// Coordinates are y-down with the origin at the top-left pixel centre, so a
/// positive rotation turns `+x` towards `+y` (clockwise on screen).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineMap {
    pub matrix: [[f64; 3]; 2],
    /// Rotation in degrees of the linear part.
    pub rotation_deg: f64,
    /// Isotropic scale of the linear part (`sqrt(|det|)`).
    pub scale: f64,
    /// Rotation/scale pivot; the fixed point of the map when one exists.
    pub center: (f64, f64),
}

impl AffineMap {
    pub fn identity() -> Self {
        Self {
            matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            rotation_deg: 0.0,
            scale: 1.0,
            center: (0.0, 0.0),
        }
    }

    /// `translate(center) · rotate(rotation_deg) · scale(scale) · translate(-center)`.
    pub fn new(rotation_deg: f64, scale: f64, center: (f64, f64)) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "scale must be positive and finite, got {scale}"
            )));
        }
        if !rotation_deg.is_finite() || !center.0.is_finite() || !center.1.is_finite() {
            return Err(Error::InvalidParameter(
                "rotation and center must be finite".into(),
            ));
        }
        let (sin, cos) = rotation_deg.to_radians().sin_cos();
        let (a, b) = (scale * cos, -scale * sin);
        let (c, d) = (scale * sin, scale * cos);
        let (cx, cy) = center;
        let tx = cx - (a * cx + b * cy);
        let ty = cy - (c * cx + d * cy);
        Ok(Self {
            matrix: [[a, b, tx], [c, d, ty]],
            rotation_deg,
            scale,
            center,
        })
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self {
            matrix: [[1.0, 0.0, dx], [0.0, 1.0, dy]],
            ..Self::identity()
        }
    }

    /// Builds a map from a raw matrix, deriving rotation, scale and pivot.
    pub fn from_matrix(matrix: [[f64; 3]; 2]) -> Result<Self> {
        let det = matrix[0][0] * matrix[1][1] - matrix[0][1] * matrix[1][0];
        if !(det.abs() >= MIN_ABS_DET) || matrix.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateTransform { det });
        }
        let mut map = Self {
            matrix,
            rotation_deg: matrix[1][0].atan2(matrix[0][0]).to_degrees(),
            scale: det.abs().sqrt(),
            center: (0.0, 0.0),
        };
        map.center = map.fixed_point().unwrap_or((0.0, 0.0));
        Ok(map)
    }

    pub fn det(&self) -> f64 {
        let m = &self.matrix;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.matrix;
        (
            m[0][0] * x + m[0][1] * y + m[0][2],
            m[1][0] * x + m[1][1] * y + m[1][2],
        )
    }

    /// Solves `(L - I) p = -t`; `None` for pure translations.
    fn fixed_point(&self) -> Option<(f64, f64)> {
        let m = &self.matrix;
        let (a, b, c, d) = (m[0][0] - 1.0, m[0][1], m[1][0], m[1][1] - 1.0);
        let det = a * d - b * c;
        if det.abs() < 1e-12 {
            return None;
        }
        let (rx, ry) = (-m[0][2], -m[1][2]);
        Some(((d * rx - b * ry) / det, (a * ry - c * rx) / det))
    }

    pub fn invert(&self) -> Result<Self> {
        let det = self.det();
        if !(det.abs() >= MIN_ABS_DET) {
            return Err(Error::DegenerateTransform { det });
        }
        let m = &self.matrix;
        let (a, b, c, d) = (m[1][1] / det, -m[0][1] / det, -m[1][0] / det, m[0][0] / det);
        let tx = -(a * m[0][2] + b * m[1][2]);
        let ty = -(c * m[0][2] + d * m[1][2]);
        Ok(Self {
            matrix: [[a, b, tx], [c, d, ty]],
            rotation_deg: -self.rotation_deg,
            scale: 1.0 / self.scale,
            center: self.center,
        })
    }

    /// Same map expressed on a grid `stride` times coarser (translation divided by `stride`).
    pub fn at_stride(&self, stride: usize) -> Self {
        let s = stride as f64;
        let mut out = *self;
        out.matrix[0][2] /= s;
        out.matrix[1][2] /= s;
        out.center = (self.center.0 / s, self.center.1 / s);
        out
    }
}

/// Returns the map `p ↦ second(first(p))`.
pub fn compose(second: &AffineMap, first: &AffineMap) -> AffineMap {
    let (s, f) = (&second.matrix, &first.matrix);
    let mut m = [[0.0; 3]; 2];
    for r in 0..2 {
        m[r][0] = s[r][0] * f[0][0] + s[r][1] * f[1][0];
        m[r][1] = s[r][0] * f[0][1] + s[r][1] * f[1][1];
        m[r][2] = s[r][0] * f[0][2] + s[r][1] * f[1][2] + s[r][2];
    }
    let mut out = AffineMap {
        matrix: m,
        rotation_deg: second.rotation_deg + first.rotation_deg,
        scale: second.scale * first.scale,
        center: second.center,
    };
    if let Some(p) = out.fixed_point() {
        out.center = p;
    }
    out
}

pub fn invert(a: &AffineMap) -> Result<AffineMap> {
    a.invert()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomStream;

    fn close(a: (f64, f64), b: (f64, f64), tol: f64) -> bool {
        (a.0 - b.0).abs() < tol && (a.1 - b.1).abs() < tol
    }

    #[test]
    fn zero_rotation_unit_scale_is_identity() {
        for c in [(0.0, 0.0), (23.5, 31.5), (-7.0, 1e3)] {
            let a = AffineMap::new(0.0, 1.0, c).unwrap();
            assert_eq!(a.matrix, AffineMap::identity().matrix);
        }
    }

    #[test]
    fn quarter_turn_maps_x_axis_to_y_axis() {
        let a = AffineMap::new(90.0, 1.0, (0.0, 0.0)).unwrap();
        assert!(close(a.apply(1.0, 0.0), (0.0, 1.0), 1e-15));
    }

    #[test]
    fn matrix_matches_pointwise_rotate_then_scale() {
        let center = (23.5, 31.5);
        let a = AffineMap::new(30.0, 0.75, center).unwrap();
        let mut rng = RandomStream::new(5);
        let th = 30f64.to_radians();
        let mut max_err: f64 = 0.0;
        for _ in 0..100 {
            let (x, y) = (rng.uniform(-100.0, 100.0), rng.uniform(-100.0, 100.0));
            // rotate about the pivot, then scale about the pivot
            let (dx, dy) = (x - center.0, y - center.1);
            let (rx, ry) = (dx * th.cos() - dy * th.sin(), dx * th.sin() + dy * th.cos());
            let expect = (center.0 + 0.75 * rx, center.1 + 0.75 * ry);
            let got = a.apply(x, y);
            max_err = max_err.max((got.0 - expect.0).abs()).max((got.1 - expect.1).abs());
        }
        assert!(max_err < 1e-9, "{max_err}");
    }

    #[test]
    fn non_positive_scale_rejected() {
        assert!(matches!(
            AffineMap::new(0.0, 0.0, (0.0, 0.0)),
            Err(Error::InvalidParameter(_))
        ));
        assert!(AffineMap::new(0.0, -1.0, (0.0, 0.0)).is_err());
    }

    #[test]
    fn compose_identity_and_angle_addition() {
        let a = AffineMap::new(17.0, 1.2, (4.0, 9.0)).unwrap();
        assert_eq!(compose(&AffineMap::identity(), &a).matrix, a.matrix);

        let c = (20.0, 12.0);
        let r30 = AffineMap::new(30.0, 1.0, c).unwrap();
        let r60 = AffineMap::new(60.0, 1.0, c).unwrap();
        let twice = compose(&r30, &r30);
        for r in 0..2 {
            for k in 0..3 {
                assert!((twice.matrix[r][k] - r60.matrix[r][k]).abs() < 1e-12);
            }
        }
        assert!((twice.center.0 - c.0).abs() < 1e-9 && (twice.center.1 - c.1).abs() < 1e-9);
        assert!((twice.rotation_deg - 60.0).abs() < 1e-12);
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let a = AffineMap::new(-41.0, 0.8, (3.0, -2.0)).unwrap();
        let id = compose(&a, &a.invert().unwrap());
        let e = AffineMap::identity();
        for r in 0..2 {
            for k in 0..3 {
                assert!((id.matrix[r][k] - e.matrix[r][k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invert_simple_cases() {
        assert_eq!(AffineMap::identity().invert().unwrap().matrix, AffineMap::identity().matrix);
        let s2 = AffineMap::new(0.0, 2.0, (0.0, 0.0)).unwrap();
        let inv = s2.invert().unwrap();
        assert_eq!(inv.matrix, AffineMap::new(0.0, 0.5, (0.0, 0.0)).unwrap().matrix);
        assert_eq!(inv.scale, 0.5);
    }

    #[test]
    fn singular_matrix_is_degenerate() {
        let m = [[1.0, 2.0, 0.0], [2.0, 4.0, 0.0]];
        assert!(matches!(
            AffineMap::from_matrix(m),
            Err(Error::DegenerateTransform { .. })
        ));
        let mut a = AffineMap::identity();
        a.matrix = m;
        assert!(a.invert().is_err());
    }

    #[test]
    fn random_round_trips() {
        let mut rng = RandomStream::new(99);
        let mut max_err: f64 = 0.0;
        for _ in 0..100 {
            let a = AffineMap::new(
                rng.uniform(-180.0, 180.0),
                rng.uniform(0.5, 2.0),
                (rng.uniform(-50.0, 50.0), rng.uniform(-50.0, 50.0)),
            )
            .unwrap();
            let inv = a.invert().unwrap();
            let (x, y) = (rng.uniform(-200.0, 200.0), rng.uniform(-200.0, 200.0));
            let (u, v) = a.apply(x, y);
            let back = inv.apply(u, v);
            max_err = max_err.max((back.0 - x).abs()).max((back.1 - y).abs());
        }
        assert!(max_err < 1e-9);
    }

    #[test]
    fn from_matrix_recovers_parameters() {
        let a = AffineMap::new(25.0, 1.1, (10.0, 20.0)).unwrap();
        let b = AffineMap::from_matrix(a.matrix).unwrap();
        assert!((b.rotation_deg - 25.0).abs() < 1e-12);
        assert!((b.scale - 1.1).abs() < 1e-12);
        assert!((b.center.0 - 10.0).abs() < 1e-9 && (b.center.1 - 20.0).abs() < 1e-9);
    }
}
