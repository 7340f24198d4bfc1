//! Skeletal animation I/O: BVH parsing and emission, forward kinematics,
//! and velocity-thresholded foot-contact labels.
//!
//! All operations here are pure functions over immutable inputs.

mod bvh;
pub(crate) mod euler;

pub use bvh::{parse_bvh, write_bvh};

use nalgebra::{UnitQuaternion, Vector3};
use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

/// A rotation or translation channel as declared in a BVH `CHANNELS` line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    XPosition,
    YPosition,
    ZPosition,
    XRotation,
    YRotation,
    ZRotation,
}

impl Channel {
    pub fn is_position(self) -> bool {
        matches!(
            self,
            Channel::XPosition | Channel::YPosition | Channel::ZPosition
        )
    }

    pub(crate) fn axis(self) -> euler::Axis {
        match self {
            Channel::XPosition | Channel::XRotation => euler::Axis::X,
            Channel::YPosition | Channel::YRotation => euler::Axis::Y,
            Channel::ZPosition | Channel::ZRotation => euler::Axis::Z,
        }
    }

    pub(crate) fn name(self) -> &'static str {
        match self {
            Channel::XPosition => "Xposition",
            Channel::YPosition => "Yposition",
            Channel::ZPosition => "Zposition",
            Channel::XRotation => "Xrotation",
            Channel::YRotation => "Yrotation",
            Channel::ZRotation => "Zrotation",
        }
    }
}

/// One joint of the kinematic hierarchy.
#[derive(Debug, Clone)]
pub struct Joint {
    pub name: String,
    /// Parent joint index; `None` only for the root.
    pub parent: Option<usize>,
    /// Offset from the parent joint, in the file's length units.
    pub offset: Vector3<f64>,
    /// Channel layout as declared in the file, preserved for write-back.
    pub channels: Vec<Channel>,
    /// Optional `End Site` offset hanging off this joint.
    pub end_site: Option<Vector3<f64>>,
}

impl Joint {
    /// The joint's three rotation axes in channel order.
    pub(crate) fn rotation_order(&self) -> [euler::Axis; 3] {
        let mut axes = [euler::Axis::X; 3];
        let mut n = 0;
        for ch in &self.channels {
            if !ch.is_position() {
                axes[n] = ch.axis();
                n += 1;
            }
        }
        debug_assert_eq!(n, 3);
        axes
    }
}

/// A joint hierarchy with optional foot-joint markers.
///
/// Joints are stored in topological order: the root is index 0 and every
/// joint's parent index is smaller than its own.
#[derive(Debug, Clone)]
pub struct Skeleton {
    pub joints: Vec<Joint>,
    /// Indices of joints whose world velocity drives contact labels.
    pub foot_joints: Vec<usize>,
}

impl Skeleton {
    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    /// Number of contact-label columns (one per foot joint).
    pub fn num_contacts(&self) -> usize {
        self.foot_joints.len()
    }

    /// Checks the structural invariants: one root at index 0, topological
    /// parent order, unique names, in-range foot joints.
    pub fn validate(&self) -> Result<()> {
        if self.joints.is_empty() {
            return Err(Error::config("skeleton has no joints"));
        }
        if self.joints[0].parent.is_some() {
            return Err(Error::config("joint 0 must be the root"));
        }
        let mut names = std::collections::HashSet::new();
        for (i, joint) in self.joints.iter().enumerate() {
            match joint.parent {
                None if i != 0 => {
                    return Err(Error::config(format!(
                        "joint '{}' is a second root",
                        joint.name
                    )))
                }
                Some(p) if p >= i => {
                    return Err(Error::config(format!(
                        "joint '{}' precedes its parent",
                        joint.name
                    )))
                }
                _ => {}
            }
            if !names.insert(joint.name.as_str()) {
                return Err(Error::config(format!(
                    "duplicate joint name '{}'",
                    joint.name
                )));
            }
        }
        for &f in &self.foot_joints {
            if f >= self.joints.len() {
                return Err(Error::config(format!("foot joint index {f} out of range")));
            }
        }
        Ok(())
    }

    /// Resolves a joint name to its index.
    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// Marks foot joints by name; replaces any existing markers.
    pub fn set_foot_joints(&mut self, names: &[String]) -> Result<()> {
        let mut indices = Vec::with_capacity(names.len());
        for name in names {
            let idx = self
                .joint_index(name)
                .ok_or_else(|| Error::config(format!("unknown foot joint '{name}'")))?;
            indices.push(idx);
        }
        self.foot_joints = indices;
        Ok(())
    }

    /// A stable identifier for the feature layout this skeleton induces.
    pub fn signature(&self) -> String {
        let names: Vec<&str> = self.joints.iter().map(|j| j.name.as_str()).collect();
        format!(
            "J{}C{}:{}",
            self.joints.len(),
            self.foot_joints.len(),
            names.join("/")
        )
    }

    /// Vertical extent of the rest pose (identity rotations, root at the
    /// origin), including end sites. Used to scale the default contact
    /// velocity threshold. Falls back to the bounding-box diagonal, then
    /// to 1, for degenerate rigs.
    pub fn rest_height(&self) -> f64 {
        let mut pos = vec![Vector3::zeros(); self.joints.len()];
        let mut lo = Vector3::zeros();
        let mut hi = Vector3::zeros();
        for (i, joint) in self.joints.iter().enumerate() {
            let p = match joint.parent {
                Some(parent) => pos[parent] + joint.offset,
                None => Vector3::zeros(),
            };
            pos[i] = p;
            lo = lo.inf(&p);
            hi = hi.sup(&p);
            if let Some(end) = joint.end_site {
                let e = p + end;
                lo = lo.inf(&e);
                hi = hi.sup(&e);
            }
        }
        let height = hi.y - lo.y;
        if height > 1e-9 {
            height
        } else {
            let diag = (hi - lo).norm();
            if diag > 1e-9 {
                diag
            } else {
                1.0
            }
        }
    }
}

/// Parsed animation data: per-frame root positions and per-joint local
/// rotations stored as unit quaternions.
#[derive(Debug, Clone)]
pub struct RawMotion {
    /// Seconds per frame.
    pub frame_time: f64,
    /// T x 3 world-space root positions.
    pub root_positions: Vec<Vector3<f64>>,
    /// T x J local rotations.
    pub joint_rotations: Array2<UnitQuaternion<f64>>,
}

impl RawMotion {
    pub fn num_frames(&self) -> usize {
        self.root_positions.len()
    }

    pub fn num_joints(&self) -> usize {
        self.joint_rotations.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_frames() < 2 {
            return Err(Error::config("motion must have at least 2 frames"));
        }
        if self.joint_rotations.nrows() != self.num_frames() {
            return Err(Error::config("rotation rows do not match frame count"));
        }
        for q in self.joint_rotations.iter() {
            if (q.as_ref().norm() - 1.0).abs() > 1e-6 {
                return Err(Error::numeric("non-unit quaternion in motion"));
            }
        }
        Ok(())
    }
}

/// Per-frame binary foot-contact labels (T x C).
#[derive(Debug, Clone)]
pub struct ContactLabels {
    pub labels: Array2<u8>,
}

impl ContactLabels {
    pub fn empty(frames: usize) -> Self {
        ContactLabels {
            labels: Array2::zeros((frames, 0)),
        }
    }

    pub fn num_frames(&self) -> usize {
        self.labels.nrows()
    }

    pub fn num_contacts(&self) -> usize {
        self.labels.ncols()
    }
}

/// Fraction of the rest-pose height a foot may travel per frame while
/// still counting as planted.
pub const DEFAULT_CONTACT_VELOCITY_FACTOR: f64 = 0.006;

/// Computes world-space joint positions for every frame.
///
/// The root is placed at its per-frame position; each child sits at
/// `parent_position + parent_chain_rotation * offset`. Returns a
/// T x J x 3 array.
pub fn forward_kinematics(skeleton: &Skeleton, motion: &RawMotion) -> Result<Array3<f64>> {
    if motion.num_joints() != skeleton.num_joints() {
        return Err(Error::config(format!(
            "motion has {} joints, skeleton has {}",
            motion.num_joints(),
            skeleton.num_joints()
        )));
    }
    let frames = motion.num_frames();
    let joints = skeleton.num_joints();
    let mut positions = Array3::zeros((frames, joints, 3));
    let mut global_rot = vec![UnitQuaternion::identity(); joints];
    let mut global_pos = vec![Vector3::zeros(); joints];
    for t in 0..frames {
        for (j, joint) in skeleton.joints.iter().enumerate() {
            match joint.parent {
                None => {
                    global_pos[j] = motion.root_positions[t];
                    global_rot[j] = motion.joint_rotations[(t, j)];
                }
                Some(parent) => {
                    global_pos[j] = global_pos[parent] + global_rot[parent] * joint.offset;
                    global_rot[j] = global_rot[parent] * motion.joint_rotations[(t, j)];
                }
            }
            for axis in 0..3 {
                positions[(t, j, axis)] = global_pos[j][axis];
            }
        }
    }
    Ok(positions)
}

/// Labels a foot joint as in contact whenever its per-frame displacement
/// magnitude stays at or below `velocity_threshold`. Frame 0 copies
/// frame 1.
pub fn compute_contact_labels(
    positions: &Array3<f64>,
    foot_joints: &[usize],
    velocity_threshold: f64,
) -> Result<ContactLabels> {
    let frames = positions.shape()[0];
    if frames < 2 {
        return Err(Error::config("contact labels need at least 2 frames"));
    }
    let joints = positions.shape()[1];
    for &f in foot_joints {
        if f >= joints {
            return Err(Error::config(format!("foot joint index {f} out of range")));
        }
    }
    let mut labels = Array2::zeros((frames, foot_joints.len()));
    for (c, &f) in foot_joints.iter().enumerate() {
        for t in 1..frames {
            let mut sq = 0.0;
            for axis in 0..3 {
                let d = positions[(t, f, axis)] - positions[(t - 1, f, axis)];
                sq += d * d;
            }
            labels[(t, c)] = u8::from(sq.sqrt() <= velocity_threshold);
        }
        labels[(0, c)] = labels[(1, c)];
    }
    Ok(ContactLabels { labels })
}
