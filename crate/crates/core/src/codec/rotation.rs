//! Rotation helpers: polar decomposition, rotation exponential and logarithm.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Mat3 = Matrix3<f64>;
pub type Vec3 = Vector3<f64>;

/// Smallest-to-largest singular value ratio below which `polar_decompose` refuses.
pub const COLLAPSE_TOLERANCE: f64 = 1e-12;

/// Splits `d` into a proper rotation `r` and a symmetric `s` with `d = r * s`.
///
/// A reflection in `d` is pushed into `s` by negating the stretch along the
/// weakest singular direction, so `det(r) = +1` always.
pub fn polar_decompose(d: &Mat3) -> Result<(Mat3, Mat3)> {
    if d.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("deformation gradient".into()));
    }
    let svd = d.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let sigma = svd.singular_values;
    let (weakest, smin) = sigma
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let smax = sigma.max();
    if smax == 0.0 || smin <= COLLAPSE_TOLERANCE * smax {
        return Err(Error::Degenerate(format!(
            "singular values {:?} collapse a direction",
            sigma.as_slice()
        )));
    }
    let flip = if (u * v_t).determinant() < 0.0 {
        -1.0
    } else {
        1.0
    };
    let mut signs = Vec3::repeat(1.0);
    signs[weakest] = flip;
    let r = u * Mat3::from_diagonal(&signs) * v_t;
    let s = r.transpose() * d;
    let s = 0.5 * (s + s.transpose());
    Ok((r, s))
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues formula; `v` is axis times angle and may have any length.
pub fn exp_rotation(v: &Vec3) -> Mat3 {
    let theta2 = v.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(v);
    let (a, b) = if theta < 1e-4 {
        (
            1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0,
            0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0,
        )
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Mat3::identity() + a * k + b * (k * k)
}

/// Principal axis and angle of a rotation, angle in `[0, π]`.
///
/// The identity returns angle 0 with axis `+z`.
pub fn log_rotation(r: &Mat3) -> (Vec3, f64) {
    let s = 0.5
        * Vec3::new(
            r[(2, 1)] - r[(1, 2)],
            r[(0, 2)] - r[(2, 0)],
            r[(1, 0)] - r[(0, 1)],
        );
    let c = 0.5 * (r.trace() - 1.0);
    let sin = s.norm();
    let theta = sin.atan2(c.clamp(-1.0, 1.0));
    if theta == 0.0 {
        return (Vec3::z(), 0.0);
    }
    if c > -0.5 && sin > 0.0 {
        return (s / sin, theta);
    }
    // Near a half turn the skew part vanishes; read the axis off the
    // symmetric part (1 - cos θ) ω ωᵀ and take its sign from the skew part.
    let sym = 0.5 * (r + r.transpose()) - Mat3::identity() * c;
    let col = (0..3)
        .max_by(|&a, &b| sym[(a, a)].total_cmp(&sym[(b, b)]))
        .unwrap();
    let mut axis: Vec3 = sym.column(col).into();
    axis /= axis.norm();
    if axis.dot(&s) < 0.0 {
        axis = -axis;
    }
    (axis, theta)
}
