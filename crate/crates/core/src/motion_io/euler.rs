//! Euler-angle conversions for arbitrary three-axis rotation orders.
//!
//! BVH files declare a per-joint channel order (e.g. `Zrotation Xrotation
//! Yrotation`); rotations compose in the declared order with the first
//! channel outermost: `R = R_1 * R_2 * R_3`.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

/// One of the three coordinate axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    fn unit(self) -> nalgebra::Unit<Vector3<f64>> {
        match self {
            Axis::X => Vector3::x_axis(),
            Axis::Y => Vector3::y_axis(),
            Axis::Z => Vector3::z_axis(),
        }
    }
}

/// +1 for even permutations of (X, Y, Z), -1 for odd ones.
fn parity(order: [Axis; 3]) -> f64 {
    use Axis::*;
    match order {
        [X, Y, Z] | [Y, Z, X] | [Z, X, Y] => 1.0,
        _ => -1.0,
    }
}

/// Composes per-axis rotations in the declared order (first channel
/// outermost). Angles are in radians.
pub fn euler_to_quat(order: [Axis; 3], angles: [f64; 3]) -> UnitQuaternion<f64> {
    let q1 = UnitQuaternion::from_axis_angle(&order[0].unit(), angles[0]);
    let q2 = UnitQuaternion::from_axis_angle(&order[1].unit(), angles[1]);
    let q3 = UnitQuaternion::from_axis_angle(&order[2].unit(), angles[2]);
    q1 * q2 * q3
}

/// Extracts Tait-Bryan angles (radians) in the given order so that
/// `euler_to_quat(order, angles)` reproduces `q` up to sign.
///
/// The three axes must be distinct. Near gimbal lock (middle angle at
/// +-90 degrees) the third angle is folded into the first.
pub fn quat_to_euler(order: [Axis; 3], q: &UnitQuaternion<f64>) -> [f64; 3] {
    let m: Matrix3<f64> = q.to_rotation_matrix().into_inner();
    let (i, j, k) = (order[0].index(), order[1].index(), order[2].index());
    let eps = parity(order);

    // For R = R_i(t1) R_j(t2) R_k(t3): m[(i,k)] = eps * sin(t2).
    let s2 = (eps * m[(i, k)]).clamp(-1.0, 1.0);
    const LOCK: f64 = 1.0 - 1e-12;
    if s2 > LOCK {
        [
            f64::atan2(eps * m[(j, i)], m[(j, j)]),
            std::f64::consts::FRAC_PI_2,
            0.0,
        ]
    } else if s2 < -LOCK {
        [
            f64::atan2(-eps * m[(j, i)], m[(j, j)]),
            -std::f64::consts::FRAC_PI_2,
            0.0,
        ]
    } else {
        [
            f64::atan2(-eps * m[(j, k)], m[(k, k)]),
            s2.asin(),
            f64::atan2(-eps * m[(i, j)], m[(i, i)]),
        ]
    }
}

/// Builds a unit quaternion from an orthonormal basis given as columns.
pub fn quat_from_basis(
    b1: Vector3<f64>,
    b2: Vector3<f64>,
    b3: Vector3<f64>,
) -> UnitQuaternion<f64> {
    let m = Matrix3::from_columns(&[b1, b2, b3]);
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m))
}
