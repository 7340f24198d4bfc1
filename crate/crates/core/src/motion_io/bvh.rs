//! BVH text format: `HIERARCHY` (ROOT/JOINT/End Site, OFFSET, CHANNELS)
//! followed by `MOTION` ("Frames:", "Frame Time:", whitespace-separated
//! rows). The parser accepts CRLF and LF and arbitrary indentation.

use nalgebra::{UnitQuaternion, Vector3};
use ndarray::Array2;

use super::euler::{euler_to_quat, quat_to_euler};
use super::{Channel, Joint, RawMotion, Skeleton};
use crate::error::{Error, Result};

struct Tokens<'a> {
    items: Vec<(&'a str, usize)>,
    pos: usize,
    last_line: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let mut items = Vec::new();
        let mut last_line = 1;
        for (i, line) in text.lines().enumerate() {
            for tok in line.split_whitespace() {
                items.push((tok, i + 1));
                last_line = i + 1;
            }
        }
        Tokens {
            items,
            pos: 0,
            last_line,
        }
    }

    fn line(&self) -> usize {
        self.items
            .get(self.pos)
            .map(|&(_, l)| l)
            .unwrap_or(self.last_line)
    }

    fn peek(&self) -> Option<&'a str> {
        self.items.get(self.pos).map(|&(t, _)| t)
    }

    fn next(&mut self, what: &str) -> Result<(&'a str, usize)> {
        match self.items.get(self.pos) {
            Some(&(tok, line)) => {
                self.pos += 1;
                Ok((tok, line))
            }
            None => Err(Error::parse(
                self.last_line,
                format!("unexpected end of file, expected {what}"),
            )),
        }
    }

    fn expect(&mut self, keyword: &str) -> Result<usize> {
        let (tok, line) = self.next(keyword)?;
        if tok.eq_ignore_ascii_case(keyword) {
            Ok(line)
        } else {
            Err(Error::parse(
                line,
                format!("expected '{keyword}', found '{tok}'"),
            ))
        }
    }

    fn next_f64(&mut self, what: &str) -> Result<f64> {
        let (tok, line) = self.next(what)?;
        tok.parse::<f64>()
            .map_err(|_| Error::parse(line, format!("expected {what}, found '{tok}'")))
    }

    fn next_usize(&mut self, what: &str) -> Result<usize> {
        let (tok, line) = self.next(what)?;
        tok.parse::<usize>()
            .map_err(|_| Error::parse(line, format!("expected {what}, found '{tok}'")))
    }
}

fn parse_channel(tok: &str, line: usize) -> Result<Channel> {
    let ch = match tok.to_ascii_lowercase().as_str() {
        "xposition" => Channel::XPosition,
        "yposition" => Channel::YPosition,
        "zposition" => Channel::ZPosition,
        "xrotation" => Channel::XRotation,
        "yrotation" => Channel::YRotation,
        "zrotation" => Channel::ZRotation,
        _ => return Err(Error::parse(line, format!("unknown channel name '{tok}'"))),
    };
    Ok(ch)
}

fn parse_offset(tokens: &mut Tokens) -> Result<Vector3<f64>> {
    tokens.expect("OFFSET")?;
    Ok(Vector3::new(
        tokens.next_f64("offset x")?,
        tokens.next_f64("offset y")?,
        tokens.next_f64("offset z")?,
    ))
}

/// Validates a joint's channel layout: exactly three rotation channels on
/// distinct axes, plus (root only) an optional triple of distinct position
/// channels.
fn check_channels(channels: &[Channel], is_root: bool, line: usize) -> Result<()> {
    let mut rot_axes = Vec::new();
    let mut pos_axes = Vec::new();
    for ch in channels {
        if ch.is_position() {
            pos_axes.push(ch.axis());
        } else {
            rot_axes.push(ch.axis());
        }
    }
    if rot_axes.len() != 3
        || rot_axes[0] == rot_axes[1]
        || rot_axes[1] == rot_axes[2]
        || rot_axes[0] == rot_axes[2]
    {
        return Err(Error::parse(
            line,
            "joint must declare exactly three rotation channels on distinct axes",
        ));
    }
    match pos_axes.len() {
        0 => Ok(()),
        3 if is_root => {
            if pos_axes[0] == pos_axes[1] || pos_axes[1] == pos_axes[2] || pos_axes[0] == pos_axes[2]
            {
                Err(Error::parse(line, "duplicate position channel axis"))
            } else {
                Ok(())
            }
        }
        _ if !is_root => Err(Error::parse(
            line,
            "position channels are only supported on the root joint",
        )),
        _ => Err(Error::parse(
            line,
            "root must declare zero or three position channels",
        )),
    }
}

fn parse_joint_body(
    tokens: &mut Tokens,
    joints: &mut Vec<Joint>,
    name: String,
    parent: Option<usize>,
) -> Result<()> {
    tokens.expect("{")?;
    let offset = parse_offset(tokens)?;
    let ch_line = tokens.expect("CHANNELS")?;
    let n = tokens.next_usize("channel count")?;
    let mut channels = Vec::with_capacity(n);
    for _ in 0..n {
        let (tok, line) = tokens.next("channel name")?;
        channels.push(parse_channel(tok, line)?);
    }
    check_channels(&channels, parent.is_none(), ch_line)?;
    let index = joints.len();
    joints.push(Joint {
        name,
        parent,
        offset,
        channels,
        end_site: None,
    });

    loop {
        let (tok, line) = tokens.next("'JOINT', 'End Site', or '}'")?;
        if tok.eq_ignore_ascii_case("JOINT") {
            let (name, _) = tokens.next("joint name")?;
            parse_joint_body(tokens, joints, name.to_string(), Some(index))?;
        } else if tok.eq_ignore_ascii_case("End") {
            let (site, site_line) = tokens.next("'Site'")?;
            if !site.eq_ignore_ascii_case("Site") {
                return Err(Error::parse(site_line, "expected 'Site' after 'End'"));
            }
            tokens.expect("{")?;
            let end = parse_offset(tokens)?;
            tokens.expect("}")?;
            if joints[index].end_site.is_some() {
                return Err(Error::parse(line, "joint has more than one End Site"));
            }
            joints[index].end_site = Some(end);
        } else if tok == "}" {
            return Ok(());
        } else {
            return Err(Error::parse(
                line,
                format!("expected 'JOINT', 'End Site', or '}}', found '{tok}'"),
            ));
        }
    }
}

/// Resolves the antipodal quaternion ambiguity: frame 0 keeps a
/// nonnegative scalar part, later frames align with their predecessor.
fn canonicalize_quaternions(rotations: &mut Array2<UnitQuaternion<f64>>) {
    let (frames, joints) = rotations.dim();
    for j in 0..joints {
        if rotations[(0, j)].w < 0.0 {
            let q = rotations[(0, j)];
            rotations[(0, j)] = UnitQuaternion::new_unchecked(-q.into_inner());
        }
        for t in 1..frames {
            let prev = rotations[(t - 1, j)];
            let cur = rotations[(t, j)];
            if prev.coords.dot(&cur.coords) < 0.0 {
                rotations[(t, j)] = UnitQuaternion::new_unchecked(-cur.into_inner());
            }
        }
    }
}

/// Parses BVH text into a skeleton and motion.
///
/// Euler channel angles are converted to unit quaternions respecting each
/// joint's declared channel order. Joint order matches file order.
pub fn parse_bvh(text: &str) -> Result<(Skeleton, RawMotion)> {
    let mut tokens = Tokens::new(text);
    tokens.expect("HIERARCHY")?;
    tokens.expect("ROOT")?;
    let (root_name, _) = tokens.next("root joint name")?;
    let mut joints = Vec::new();
    parse_joint_body(&mut tokens, &mut joints, root_name.to_string(), None)?;

    tokens.expect("MOTION")?;
    let frames_line = tokens.expect("Frames:")?;
    let num_frames = tokens.next_usize("frame count")?;
    tokens.expect("Frame")?;
    tokens.expect("Time:")?;
    let frame_time = tokens.next_f64("frame time")?;
    if num_frames < 2 {
        return Err(Error::parse(frames_line, "motion must have at least 2 frames"));
    }

    let total_channels: usize = joints.iter().map(|j| j.channels.len()).sum();
    let mut values = Vec::with_capacity(num_frames * total_channels);
    while let Some(tok) = tokens.peek() {
        let line = tokens.line();
        let v = tok
            .parse::<f64>()
            .map_err(|_| Error::parse(line, format!("expected channel value, found '{tok}'")))?;
        if values.len() == num_frames * total_channels {
            return Err(Error::parse(
                line,
                format!("more data rows than the declared {num_frames} frames"),
            ));
        }
        values.push(v);
        tokens.pos += 1;
    }
    if values.len() != num_frames * total_channels {
        return Err(Error::parse(
            tokens.last_line,
            format!(
                "frame data ended early: got {} of {} values ({} frames x {} channels)",
                values.len(),
                num_frames * total_channels,
                num_frames,
                total_channels
            ),
        ));
    }

    let mut root_positions = vec![Vector3::zeros(); num_frames];
    let mut rotations =
        Array2::from_elem((num_frames, joints.len()), UnitQuaternion::identity());
    for t in 0..num_frames {
        let mut cursor = t * total_channels;
        for (j, joint) in joints.iter().enumerate() {
            let mut angles = [0.0f64; 3];
            let mut n_rot = 0;
            for ch in &joint.channels {
                let v = values[cursor];
                cursor += 1;
                if ch.is_position() {
                    root_positions[t][ch.axis().index()] = v;
                } else {
                    angles[n_rot] = v.to_radians();
                    n_rot += 1;
                }
            }
            rotations[(t, j)] = euler_to_quat(joint.rotation_order(), angles);
        }
    }
    canonicalize_quaternions(&mut rotations);

    let skeleton = Skeleton {
        joints,
        foot_joints: Vec::new(),
    };
    skeleton.validate()?;
    let motion = RawMotion {
        frame_time,
        root_positions,
        joint_rotations: rotations,
    };
    motion.validate()?;
    Ok((skeleton, motion))
}

fn write_joint(
    out: &mut String,
    skeleton: &Skeleton,
    children: &[Vec<usize>],
    index: usize,
    depth: usize,
) {
    let joint = &skeleton.joints[index];
    let indent = "\t".repeat(depth);
    let keyword = if joint.parent.is_none() { "ROOT" } else { "JOINT" };
    out.push_str(&format!("{indent}{keyword} {}\n{indent}{{\n", joint.name));
    let inner = "\t".repeat(depth + 1);
    out.push_str(&format!(
        "{inner}OFFSET {} {} {}\n",
        joint.offset.x, joint.offset.y, joint.offset.z
    ));
    out.push_str(&format!("{inner}CHANNELS {}", joint.channels.len()));
    for ch in &joint.channels {
        out.push(' ');
        out.push_str(ch.name());
    }
    out.push('\n');
    for &child in &children[index] {
        write_joint(out, skeleton, children, child, depth + 1);
    }
    if let Some(end) = joint.end_site {
        out.push_str(&format!(
            "{inner}End Site\n{inner}{{\n{inner}\tOFFSET {} {} {}\n{inner}}}\n",
            end.x, end.y, end.z
        ));
    }
    out.push_str(&format!("{indent}}}\n"));
}

/// Emits BVH text for a skeleton and motion, converting quaternions back
/// to Euler angles in each joint's declared channel order.
pub fn write_bvh(skeleton: &Skeleton, motion: &RawMotion) -> Result<String> {
    skeleton.validate()?;
    motion.validate()?;
    if motion.num_joints() != skeleton.num_joints() {
        return Err(Error::config(format!(
            "motion has {} joints, skeleton has {}",
            motion.num_joints(),
            skeleton.num_joints()
        )));
    }

    let mut children = vec![Vec::new(); skeleton.num_joints()];
    for (i, joint) in skeleton.joints.iter().enumerate() {
        if let Some(p) = joint.parent {
            children[p].push(i);
        }
    }

    let mut out = String::new();
    out.push_str("HIERARCHY\n");
    write_joint(&mut out, skeleton, &children, 0, 0);
    out.push_str("MOTION\n");
    out.push_str(&format!("Frames: {}\n", motion.num_frames()));
    out.push_str(&format!("Frame Time: {}\n", motion.frame_time));

    let mut row = String::new();
    for t in 0..motion.num_frames() {
        row.clear();
        for (j, joint) in skeleton.joints.iter().enumerate() {
            let angles = quat_to_euler(joint.rotation_order(), &motion.joint_rotations[(t, j)]);
            let mut n_rot = 0;
            for ch in &joint.channels {
                if !row.is_empty() {
                    row.push(' ');
                }
                if ch.is_position() {
                    row.push_str(&format!("{}", motion.root_positions[t][ch.axis().index()]));
                } else {
                    row.push_str(&format!("{}", angles[n_rot].to_degrees()));
                    n_rot += 1;
                }
            }
        }
        out.push_str(&row);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "HIERARCHY\n\
ROOT Hips\n\
{\n\
  OFFSET 0 0 0\n\
  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation\n\
  End Site\n\
  {\n\
    OFFSET 0 1 0\n\
  }\n\
}\n\
MOTION\n\
Frames: 2\n\
Frame Time: 0.033333\n\
0 0 0 0 0 0\n\
0 0 0 0 0 0\n";

    #[test]
    fn minimal_file_parses_to_identity() {
        let (skeleton, motion) = parse_bvh(MINIMAL).unwrap();
        assert_eq!(skeleton.num_joints(), 1);
        assert_eq!(motion.num_frames(), 2);
        for p in &motion.root_positions {
            assert_eq!(*p, Vector3::zeros());
        }
        for q in motion.joint_rotations.iter() {
            assert!(q.angle_to(&UnitQuaternion::identity()) < 1e-12);
        }
    }

    #[test]
    fn zxy_first_channel_is_rotation_about_z() {
        // Oracle: composing the per-axis rotations in channel order with
        // angles (90, 0, 0) must equal a quarter turn about Z alone.
        let text = MINIMAL.replace("0 0 0 0 0 0\n0 0 0 0 0 0", "0 0 0 90 0 0\n0 0 0 90 0 0");
        let (_, motion) = parse_bvh(&text).unwrap();
        let expected =
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        assert!(motion.joint_rotations[(0, 0)].angle_to(&expected) < 1e-12);
    }

    #[test]
    fn crlf_and_indentation_are_accepted() {
        let text = MINIMAL.replace('\n', "\r\n").replace("  ", "\t   \t");
        let (skeleton, _) = parse_bvh(&text).unwrap();
        assert_eq!(skeleton.joints[0].name, "Hips");
    }

    #[test]
    fn identity_pose_writes_zero_rotations() {
        let (skeleton, motion) = parse_bvh(MINIMAL).unwrap();
        let text = write_bvh(&skeleton, &motion).unwrap();
        let data_line = text.lines().nth_back(1).unwrap();
        for v in data_line.split_whitespace() {
            assert_eq!(v.parse::<f64>().unwrap(), 0.0);
        }
    }

    #[test]
    fn frame_header_matches_rows() {
        let (skeleton, mut motion) = parse_bvh(MINIMAL).unwrap();
        motion.root_positions = vec![Vector3::zeros(); 5];
        motion.joint_rotations =
            Array2::from_elem((5, 1), UnitQuaternion::from_axis_angle(&Vector3::x_axis(), 0.3));
        let text = write_bvh(&skeleton, &motion).unwrap();
        assert!(text.contains("Frames: 5"));
        let motion_rows = text
            .lines()
            .skip_while(|l| !l.starts_with("Frame Time"))
            .skip(1)
            .count();
        assert_eq!(motion_rows, 5);
    }

    #[test]
    fn malformed_inputs_report_lines() {
        let err = parse_bvh("HIERARCHY\nROOT A\n{\nOFFSET 0 0 0\nCHANNELS 3 Xrotation Yrotation Wrotation\n}\n").unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 5);
                assert!(message.contains("Wrotation"));
            }
            other => panic!("unexpected error {other:?}"),
        }

        let truncated = MINIMAL.replace("0 0 0 0 0 0\n0 0 0 0 0 0\n", "0 0 0 0 0 0\n");
        assert!(matches!(
            parse_bvh(&truncated).unwrap_err(),
            Error::Parse { .. }
        ));

        let extra = format!("{MINIMAL}0 0 0 0 0 0\n");
        assert!(matches!(parse_bvh(&extra).unwrap_err(), Error::Parse { .. }));
    }

    #[test]
    fn nonroot_position_channels_are_rejected() {
        let text = "HIERARCHY\nROOT A\n{\nOFFSET 0 0 0\nCHANNELS 3 Zrotation Xrotation Yrotation\nJOINT B\n{\nOFFSET 0 1 0\nCHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation\nEnd Site\n{\nOFFSET 0 1 0\n}\n}\n}\nMOTION\nFrames: 2\nFrame Time: 0.05\n0 0 0 0 0 0 0 0 0\n0 0 0 0 0 0 0 0 0\n";
        let err = parse_bvh(text).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 9),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
