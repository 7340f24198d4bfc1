//! Conversion between parsed motion and the feature matrix the matcher
//! operates on.
//!
//! Each frame is a row `[R, V, L]`: a 6D encoding of every joint's local
//! rotation (first two rotation-matrix columns), the local root
//! displacement (difference of consecutive root positions), and the
//! contact labels. Dropping absolute root position makes the features
//! invariant to where the clip happens to start.

use nalgebra::{UnitQuaternion, Vector3};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::motion_io::{ContactLabels, RawMotion, Skeleton};

/// Width of one joint's rotation block.
pub const ROTATION_WIDTH: usize = 6;
/// Width of the local root displacement block.
pub const ROOT_WIDTH: usize = 3;

/// Column layout of a feature matrix: `J` six-wide rotation blocks, then
/// the 3 root-displacement columns, then `C` contact columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureLayout {
    pub joints: usize,
    pub contacts: usize,
}

impl FeatureLayout {
    pub fn width(&self) -> usize {
        self.joints * ROTATION_WIDTH + ROOT_WIDTH + self.contacts
    }

    /// Column range of joint `j`'s rotation block.
    pub fn rotation_cols(&self, joint: usize) -> std::ops::Range<usize> {
        joint * ROTATION_WIDTH..(joint + 1) * ROTATION_WIDTH
    }

    /// Column range of the root displacement block.
    pub fn root_cols(&self) -> std::ops::Range<usize> {
        let start = self.joints * ROTATION_WIDTH;
        start..start + ROOT_WIDTH
    }

    /// Column range of the contact-label block.
    pub fn contact_cols(&self) -> std::ops::Range<usize> {
        let start = self.joints * ROTATION_WIDTH + ROOT_WIDTH;
        start..start + self.contacts
    }
}

/// A motion clip in feature space: H x (6J + 3 + C).
#[derive(Debug, Clone)]
pub struct MotionFeatures {
    pub data: Array2<f64>,
    /// Seconds per frame, carried through for decoding.
    pub frame_time: f64,
    /// Identifier tying these features to the skeleton that produced them.
    pub skeleton_ref: String,
    pub layout: FeatureLayout,
}

impl MotionFeatures {
    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames() == 0 {
            return Err(Error::config("feature matrix must have at least 1 frame"));
        }
        if self.width() != self.layout.width() {
            return Err(Error::config(format!(
                "feature matrix has {} columns, layout expects {}",
                self.width(),
                self.layout.width()
            )));
        }
        Ok(())
    }

    /// Replaces the frame data, keeping layout and provenance.
    pub fn with_data(&self, data: Array2<f64>) -> MotionFeatures {
        MotionFeatures {
            data,
            frame_time: self.frame_time,
            skeleton_ref: self.skeleton_ref.clone(),
            layout: self.layout,
        }
    }
}

/// The absolute root position of frame 0, needed to invert the local
/// displacements back into world positions.
#[derive(Debug, Clone, Copy)]
pub struct RootAnchor(pub Vector3<f64>);

impl RootAnchor {
    pub fn origin() -> Self {
        RootAnchor(Vector3::zeros())
    }
}

/// Encodes a rotation as the first two columns of its matrix,
/// concatenated column-major: `[m00, m10, m20, m01, m11, m21]`.
pub fn rotation_to_6d(q: &UnitQuaternion<f64>) -> [f64; 6] {
    let m = q.to_rotation_matrix();
    let m = m.matrix();
    [
        m[(0, 0)],
        m[(1, 0)],
        m[(2, 0)],
        m[(0, 1)],
        m[(1, 1)],
        m[(2, 1)],
    ]
}

/// Recovers a rotation from a 6D encoding by Gram-Schmidt
/// orthonormalization of the two encoded columns.
pub fn six_d_to_rotation(v: &[f64]) -> Result<UnitQuaternion<f64>> {
    assert_eq!(v.len(), 6);
    let a1 = Vector3::new(v[0], v[1], v[2]);
    let a2 = Vector3::new(v[3], v[4], v[5]);
    let n1 = a1.norm();
    if n1 <= 1e-8 {
        return Err(Error::numeric("degenerate 6D rotation: first column near zero"));
    }
    let b1 = a1 / n1;
    let proj = a2.dot(&b1);
    let residual = a2 - b1 * proj;
    let n2 = residual.norm();
    if n2 <= 1e-8 {
        return Err(Error::numeric(
            "degenerate 6D rotation: columns parallel or second column near zero",
        ));
    }
    let b2 = residual / n2;
    let b3 = b1.cross(&b2);
    Ok(crate::motion_io::euler::quat_from_basis(b1, b2, b3))
}

/// Builds the `[R, V, L]` feature matrix from a parsed motion.
///
/// `V[t] = O[t] - O[t-1]` for `t >= 1`; `V[0]` duplicates `V[1]` so the
/// matrix keeps all T rows. Returns the features plus the anchor needed
/// to restore absolute root positions.
pub fn encode(
    skeleton: &Skeleton,
    motion: &RawMotion,
    labels: &ContactLabels,
) -> Result<(MotionFeatures, RootAnchor)> {
    motion.validate()?;
    if motion.num_joints() != skeleton.num_joints() {
        return Err(Error::config(format!(
            "motion has {} joints, skeleton has {}",
            motion.num_joints(),
            skeleton.num_joints()
        )));
    }
    if labels.num_frames() != motion.num_frames()
        || labels.num_contacts() != skeleton.num_contacts()
    {
        return Err(Error::config(format!(
            "contact labels are {}x{}, expected {}x{}",
            labels.num_frames(),
            labels.num_contacts(),
            motion.num_frames(),
            skeleton.num_contacts()
        )));
    }

    let frames = motion.num_frames();
    let layout = FeatureLayout {
        joints: skeleton.num_joints(),
        contacts: skeleton.num_contacts(),
    };
    let mut data = Array2::zeros((frames, layout.width()));
    for t in 0..frames {
        for j in 0..layout.joints {
            let six = rotation_to_6d(&motion.joint_rotations[(t, j)]);
            let cols = layout.rotation_cols(j);
            for (k, val) in six.iter().enumerate() {
                data[(t, cols.start + k)] = *val;
            }
        }
        let v = if t == 0 {
            motion.root_positions[1] - motion.root_positions[0]
        } else {
            motion.root_positions[t] - motion.root_positions[t - 1]
        };
        let root = layout.root_cols();
        for axis in 0..3 {
            data[(t, root.start + axis)] = v[axis];
        }
        let contacts = layout.contact_cols();
        for c in 0..layout.contacts {
            data[(t, contacts.start + c)] = f64::from(labels.labels[(t, c)]);
        }
    }

    let features = MotionFeatures {
        data,
        frame_time: motion.frame_time,
        skeleton_ref: skeleton.signature(),
        layout,
    };
    Ok((features, RootAnchor(motion.root_positions[0])))
}

/// Inverts [`encode`]: integrates root displacements from the anchor,
/// orthonormalizes each 6D block, and binarizes contact labels at 0.5.
pub fn decode(
    features: &MotionFeatures,
    anchor: RootAnchor,
    skeleton: &Skeleton,
) -> Result<(RawMotion, ContactLabels)> {
    features.validate()?;
    let expected = FeatureLayout {
        joints: skeleton.num_joints(),
        contacts: skeleton.num_contacts(),
    };
    if features.layout != expected {
        return Err(Error::config(format!(
            "feature layout {:?} does not match skeleton layout {:?}",
            features.layout, expected
        )));
    }

    let frames = features.frames();
    let layout = features.layout;
    let mut root_positions = vec![Vector3::zeros(); frames];
    let mut rotations =
        Array2::from_elem((frames, layout.joints), UnitQuaternion::identity());
    let root = layout.root_cols();
    let contacts = layout.contact_cols();
    let mut labels = Array2::zeros((frames, layout.contacts));

    root_positions[0] = anchor.0;
    for t in 0..frames {
        if t >= 1 {
            let v = Vector3::new(
                features.data[(t, root.start)],
                features.data[(t, root.start + 1)],
                features.data[(t, root.start + 2)],
            );
            root_positions[t] = root_positions[t - 1] + v;
        }
        for j in 0..layout.joints {
            let cols = layout.rotation_cols(j);
            let block = features.data.row(t);
            let block = &block.as_slice().expect("row is contiguous")[cols.start..cols.end];
            rotations[(t, j)] = six_d_to_rotation(block).map_err(|e| {
                Error::numeric(format!("frame {t}, joint '{}': {e}", skeleton.joints[j].name))
            })?;
        }
        for c in 0..layout.contacts {
            labels[(t, c)] = u8::from(features.data[(t, contacts.start + c)] >= 0.5);
        }
    }

    Ok((
        RawMotion {
            frame_time: features.frame_time,
            root_positions,
            joint_rotations: rotations,
        },
        ContactLabels { labels },
    ))
}
