//! Deterministic synthetic rigs and clips.
//!
//! Band-limited quasi-periodic joint motions over a generated tree
//! skeleton, handy for tests, benchmarks, and demos when no capture data
//! is at hand. Clips from the same seed are bit-identical.

use nalgebra::{UnitQuaternion, Vector3};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::motion_io::{
    compute_contact_labels, forward_kinematics, Channel, ContactLabels, Joint, RawMotion,
    Skeleton, DEFAULT_CONTACT_VELOCITY_FACTOR,
};
use crate::representation::{encode, MotionFeatures, RootAnchor};

const ROTATION_ORDERS: [[Channel; 3]; 6] = [
    [Channel::ZRotation, Channel::XRotation, Channel::YRotation],
    [Channel::XRotation, Channel::YRotation, Channel::ZRotation],
    [Channel::YRotation, Channel::ZRotation, Channel::XRotation],
    [Channel::ZRotation, Channel::YRotation, Channel::XRotation],
    [Channel::XRotation, Channel::ZRotation, Channel::YRotation],
    [Channel::YRotation, Channel::XRotation, Channel::ZRotation],
];

/// Builds a tree skeleton with `num_joints` joints named
/// `{prefix}0..{prefix}{n-1}`; the last `num_feet` joints are marked as
/// feet. Joint `i` hangs off joint `(i-1)/2`, giving a branching rig.
pub fn skeleton_with_prefix(prefix: &str, num_joints: usize, num_feet: usize) -> Skeleton {
    assert!(num_joints >= 1);
    assert!(num_feet <= num_joints);
    let joints = (0..num_joints)
        .map(|i| {
            let channels = if i == 0 {
                let mut ch = vec![Channel::XPosition, Channel::YPosition, Channel::ZPosition];
                ch.extend(ROTATION_ORDERS[0]);
                ch
            } else {
                ROTATION_ORDERS[i % ROTATION_ORDERS.len()].to_vec()
            };
            let is_leaf = 2 * i + 1 >= num_joints;
            Joint {
                name: format!("{prefix}{i}"),
                parent: if i == 0 { None } else { Some((i - 1) / 2) },
                offset: if i == 0 {
                    Vector3::zeros()
                } else {
                    Vector3::new(
                        0.12 * ((i * 7) % 3) as f64 - 0.12,
                        0.22 + 0.08 * (i % 2) as f64,
                        0.06 * ((i * 3) % 4) as f64 - 0.09,
                    )
                },
                channels,
                end_site: if is_leaf {
                    Some(Vector3::new(0.0, 0.15, 0.02))
                } else {
                    None
                },
            }
        })
        .collect();
    Skeleton {
        joints,
        foot_joints: (num_joints - num_feet..num_joints).collect(),
    }
}

/// [`skeleton_with_prefix`] with the default `J` prefix.
pub fn skeleton(num_joints: usize, num_feet: usize) -> Skeleton {
    skeleton_with_prefix("J", num_joints, num_feet)
}

/// Generates a quasi-periodic clip: every joint swings about a fixed
/// random axis with two integer-frequency sinusoids, and the root drifts
/// slowly while oscillating. Deterministic in `seed`.
pub fn clip(skeleton: &Skeleton, frames: usize, seed: u64) -> RawMotion {
    assert!(frames >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_joints = skeleton.num_joints();
    let tau = std::f64::consts::TAU;

    struct Swing {
        axis: nalgebra::Unit<Vector3<f64>>,
        amp: [f64; 2],
        freq: [f64; 2],
        phase: [f64; 2],
    }
    let swings: Vec<Swing> = (0..num_joints)
        .map(|_| {
            let axis = loop {
                let v = Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                if v.norm() > 1e-3 {
                    break nalgebra::Unit::new_normalize(v);
                }
            };
            Swing {
                axis,
                amp: [rng.gen_range(0.25..0.55), rng.gen_range(0.08..0.22)],
                freq: [
                    f64::from(rng.gen_range(1u32..4)),
                    f64::from(rng.gen_range(4u32..8)),
                ],
                phase: [rng.gen_range(0.0..tau), rng.gen_range(0.0..tau)],
            }
        })
        .collect();
    let drift = rng.gen_range(0.002..0.006);
    let sway_phase = rng.gen_range(0.0..tau);

    let mut rotations = Array2::from_elem((frames, num_joints), UnitQuaternion::identity());
    let mut root_positions = Vec::with_capacity(frames);
    for t in 0..frames {
        let u = t as f64 / frames as f64;
        for (j, swing) in swings.iter().enumerate() {
            let angle = swing.amp[0] * (tau * swing.freq[0] * u + swing.phase[0]).sin()
                + swing.amp[1] * (tau * swing.freq[1] * u + swing.phase[1]).sin();
            rotations[(t, j)] = UnitQuaternion::from_axis_angle(&swing.axis, angle);
        }
        root_positions.push(Vector3::new(
            drift * t as f64 + 0.05 * (tau * 2.0 * u + sway_phase).sin(),
            0.9 + 0.02 * (tau * 3.0 * u).sin(),
            0.05 * (tau * u).sin(),
        ));
    }
    RawMotion {
        frame_time: 1.0 / 30.0,
        root_positions,
        joint_rotations: rotations,
    }
}

/// Convenience: generate a clip and encode it (forward kinematics,
/// contact labels at the default threshold, feature encoding).
pub fn encoded_clip(
    skeleton: &Skeleton,
    frames: usize,
    seed: u64,
) -> Result<(MotionFeatures, RootAnchor)> {
    let motion = clip(skeleton, frames, seed);
    let labels = if skeleton.foot_joints.is_empty() {
        ContactLabels::empty(frames)
    } else {
        let positions = forward_kinematics(skeleton, &motion)?;
        let threshold = DEFAULT_CONTACT_VELOCITY_FACTOR * skeleton.rest_height();
        compute_contact_labels(&positions, &skeleton.foot_joints, threshold)?
    };
    encode(skeleton, &motion, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skeleton_is_valid_and_deterministic() {
        for n in [1usize, 2, 5, 24, 65] {
            let s = skeleton(n, n.min(2));
            s.validate().unwrap();
            assert_eq!(s.num_joints(), n);
        }
        let a = clip(&skeleton(5, 0), 30, 7);
        let b = clip(&skeleton(5, 0), 30, 7);
        assert_eq!(a.root_positions, b.root_positions);
        assert_eq!(a.joint_rotations, b.joint_rotations);
        let c = clip(&skeleton(5, 0), 30, 8);
        assert_ne!(a.joint_rotations, c.joint_rotations);
    }

    #[test]
    fn encoded_clip_round_trips() {
        let s = skeleton(6, 2);
        let (features, anchor) = encoded_clip(&s, 40, 3).unwrap();
        assert_eq!(features.frames(), 40);
        assert_eq!(features.width(), 6 * 6 + 3 + 2);
        let (motion, _) = crate::representation::decode(&features, anchor, &s).unwrap();
        assert_eq!(motion.num_frames(), 40);
    }
}
