//! The generative motion matching core: skeleton partitioning, patch
//! extraction, exact distance matrices, bidirectional-similarity
//! normalization, nearest-neighbor matching, and average-voting blending.
//!
//! The normalization divides each exemplar patch's distance column by
//! `alpha + (its minimum distance to the synthesis)`. Rarely matched
//! exemplar patches end up with a large denominator, making them cheap to
//! select next round: smaller `alpha` pushes the synthesis to use *all*
//! exemplar content (completeness), while the plain distances keep it
//! from inventing content (coherence).

mod distance;

pub(crate) use distance::{column_minima, matched_indices, PatchIndex};
pub use distance::{squared_l2, MatchOptions};

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::motion_io::Skeleton;
use crate::representation::{FeatureLayout, MotionFeatures, ROTATION_WIDTH};

/// A connected subset of the skeleton used to slice full-body features
/// into partial-body tracks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletalPart {
    pub name: String,
    /// Joint indices in slice order; forms a connected subtree.
    pub joint_indices: Vec<usize>,
    /// Whether this part's feature slice carries the root-displacement
    /// and contact columns.
    pub include_root_motion: bool,
}

impl SkeletalPart {
    /// Global feature-column indices of this part, in slice order.
    pub fn columns(&self, layout: &FeatureLayout) -> Vec<usize> {
        let mut cols =
            Vec::with_capacity(self.joint_indices.len() * ROTATION_WIDTH + 3 + layout.contacts);
        for &j in &self.joint_indices {
            cols.extend(layout.rotation_cols(j));
        }
        if self.include_root_motion {
            cols.extend(layout.root_cols());
            cols.extend(layout.contact_cols());
        }
        cols
    }
}

/// How to split the skeleton: a single whole-body part, or named parts
/// given as joint-name lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PartitionSpec {
    Whole,
    Named(Vec<NamedPart>),
}

/// One user-specified part: a name plus the joints it contains.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NamedPart {
    pub name: String,
    pub joints: Vec<String>,
}

/// Validates a partition spec against a skeleton.
///
/// Every part must be a connected subtree, every joint must be covered,
/// and the parts must be bridged by shared (overlap) joints. Parts
/// containing the root carry the root-motion columns.
pub fn partition_skeleton(skeleton: &Skeleton, spec: &PartitionSpec) -> Result<Vec<SkeletalPart>> {
    let num_joints = skeleton.num_joints();
    match spec {
        PartitionSpec::Whole => Ok(vec![SkeletalPart {
            name: "whole".into(),
            joint_indices: (0..num_joints).collect(),
            include_root_motion: true,
        }]),
        PartitionSpec::Named(named) => {
            if named.is_empty() {
                return Err(Error::config("partition must define at least one part"));
            }
            let mut parts = Vec::with_capacity(named.len());
            for def in named {
                if def.joints.is_empty() {
                    return Err(Error::config(format!("part '{}' has no joints", def.name)));
                }
                let mut indices = Vec::with_capacity(def.joints.len());
                for name in &def.joints {
                    let idx = skeleton.joint_index(name).ok_or_else(|| {
                        Error::config(format!(
                            "part '{}': unknown joint name '{name}'",
                            def.name
                        ))
                    })?;
                    if indices.contains(&idx) {
                        return Err(Error::config(format!(
                            "part '{}': joint '{name}' listed twice",
                            def.name
                        )));
                    }
                    indices.push(idx);
                }
                // A subtree of a tree is connected iff exactly one member
                // has its parent outside the subset.
                let local_roots = indices
                    .iter()
                    .filter(|&&j| match skeleton.joints[j].parent {
                        None => true,
                        Some(p) => !indices.contains(&p),
                    })
                    .count();
                if local_roots != 1 {
                    return Err(Error::config(format!(
                        "part '{}' is not a connected subtree of the skeleton",
                        def.name
                    )));
                }
                let include_root_motion = indices.contains(&0);
                parts.push(SkeletalPart {
                    name: def.name.clone(),
                    joint_indices: indices,
                    include_root_motion,
                });
            }

            let mut covered = vec![false; num_joints];
            for part in &parts {
                for &j in &part.joint_indices {
                    covered[j] = true;
                }
            }
            if let Some(missing) = covered.iter().position(|&c| !c) {
                return Err(Error::config(format!(
                    "joint '{}' is not covered by any part",
                    skeleton.joints[missing].name
                )));
            }

            // Parts must form one component under the share-a-joint
            // relation; otherwise blending cannot bridge them.
            let n = parts.len();
            let mut reached = vec![false; n];
            let mut stack = vec![0usize];
            reached[0] = true;
            while let Some(a) = stack.pop() {
                for b in 0..n {
                    if !reached[b]
                        && parts[a]
                            .joint_indices
                            .iter()
                            .any(|j| parts[b].joint_indices.contains(j))
                    {
                        reached[b] = true;
                        stack.push(b);
                    }
                }
            }
            if let Some(orphan) = reached.iter().position(|&r| !r) {
                return Err(Error::config(format!(
                    "part '{}' shares no overlap joint with the other parts",
                    parts[orphan].name
                )));
            }
            Ok(parts)
        }
    }
}

/// Extracts the part's columns from a full feature matrix.
pub fn slice_part(features: &MotionFeatures, part: &SkeletalPart) -> Array2<f64> {
    slice_columns(&features.data, &part.columns(&features.layout))
}

pub(crate) fn slice_columns(data: &Array2<f64>, cols: &[usize]) -> Array2<f64> {
    let rows = data.nrows();
    Array2::from_shape_fn((rows, cols.len()), |(t, k)| data[(t, cols[k])])
}

/// All length-`p` stride-1 windows of one or more tracks, flattened
/// frame-major into rows, with per-patch provenance.
#[derive(Debug, Clone)]
pub struct PatchSet {
    /// N x (p * d) patch matrix.
    pub patches: Array2<f64>,
    /// Start frame of each patch within its source track.
    pub source_frame: Vec<usize>,
    /// Which input track each patch came from.
    pub source_example: Vec<usize>,
    /// Patch length in frames.
    pub patch_len: usize,
    /// Per-frame feature width of the source tracks.
    pub frame_width: usize,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.patches.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Crops every `p`-frame window (stride 1) from each track.
pub fn extract_patches(tracks: &[Array2<f64>], patch_len: usize) -> Result<PatchSet> {
    if tracks.is_empty() {
        return Err(Error::config("patch extraction needs at least one track"));
    }
    let width = tracks[0].ncols();
    for (e, track) in tracks.iter().enumerate() {
        if track.ncols() != width {
            return Err(Error::config(format!(
                "example {e}: track width {} differs from {}",
                track.ncols(),
                width
            )));
        }
        if track.nrows() < patch_len {
            return Err(Error::config(format!(
                "example {e}: track has {} frames, shorter than the patch size {patch_len}",
                track.nrows()
            )));
        }
    }
    let total: usize = tracks.iter().map(|t| t.nrows() - patch_len + 1).sum();
    let mut patches = Array2::zeros((total, patch_len * width));
    let mut source_frame = Vec::with_capacity(total);
    let mut source_example = Vec::with_capacity(total);
    let mut row = 0;
    for (e, track) in tracks.iter().enumerate() {
        let flat = track.as_slice().expect("track is contiguous");
        for t in 0..=track.nrows() - patch_len {
            patches
                .row_mut(row)
                .as_slice_mut()
                .expect("row is contiguous")
                .copy_from_slice(&flat[t * width..(t + patch_len) * width]);
            source_frame.push(t);
            source_example.push(e);
            row += 1;
        }
    }
    Ok(PatchSet {
        patches,
        source_frame,
        source_example,
        patch_len,
        frame_width: width,
    })
}

/// A pairwise patch distance matrix (|X| x |Y|, nonnegative).
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    pub values: Array2<f64>,
}

/// Exact pairwise squared-L2 distances between two patch sets.
pub fn distance_matrix(x: &PatchSet, y: &PatchSet) -> Result<DistanceMatrix> {
    if x.patch_len != y.patch_len || x.frame_width != y.frame_width {
        return Err(Error::config(format!(
            "patch sets disagree: {}x{} vs {}x{} (frames x width)",
            x.patch_len, x.frame_width, y.patch_len, y.frame_width
        )));
    }
    let (nx, ny) = (x.len(), y.len());
    if nx == 0 || ny == 0 {
        return Err(Error::config("distance matrix needs nonempty patch sets"));
    }
    let mut values = Array2::zeros((nx, ny));
    let xs = x.patches.as_slice().expect("contiguous");
    let ys = y.patches.as_slice().expect("contiguous");
    let dim = x.patch_len * x.frame_width;
    values
        .as_slice_mut()
        .expect("contiguous")
        .par_chunks_mut(ny)
        .enumerate()
        .for_each(|(i, row)| {
            let xi = &xs[i * dim..(i + 1) * dim];
            for (j, out) in row.iter_mut().enumerate() {
                *out = squared_l2(xi, &ys[j * dim..(j + 1) * dim]);
            }
        });
    Ok(DistanceMatrix { values })
}

/// Divides each column by `alpha` plus that column's minimum over the
/// synthesized patches, boosting rarely matched exemplar patches.
pub fn normalize_distances(d: &DistanceMatrix, alpha: f64) -> Result<DistanceMatrix> {
    if alpha < 0.0 {
        return Err(Error::config("alpha must be nonnegative"));
    }
    let (nx, ny) = d.values.dim();
    let mut colmin = vec![f64::INFINITY; ny];
    for i in 0..nx {
        for j in 0..ny {
            let v = d.values[(i, j)];
            if v < colmin[j] {
                colmin[j] = v;
            }
        }
    }
    if alpha == 0.0 && colmin.iter().any(|&m| m <= 0.0) {
        return Err(Error::numeric(
            "zero denominator: alpha = 0 with exact patch matches",
        ));
    }
    let mut values = Array2::zeros((nx, ny));
    for i in 0..nx {
        for j in 0..ny {
            values[(i, j)] = d.values[(i, j)] / (alpha + colmin[j]);
        }
    }
    Ok(DistanceMatrix { values })
}

/// Row-wise argmin; ties break to the smallest column index.
pub fn nearest_matches(d: &DistanceMatrix) -> Vec<usize> {
    d.values
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0usize;
            let mut best_val = row[0];
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v < best_val {
                    best_val = v;
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Average voting: each output frame is the uniform mean of all matched
/// patches covering it. `matches.len()` must equal
/// `output_length - p + 1`.
pub fn blend_patches(matches: &[usize], y: &PatchSet, output_length: usize) -> Array2<f64> {
    let p = y.patch_len;
    let d = y.frame_width;
    assert_eq!(matches.len(), output_length - p + 1, "one match per window");
    let ys = y.patches.as_slice().expect("contiguous");
    blend_rows(matches, p, d, output_length, |m, k| {
        &ys[(m * p + k) * d..(m * p + k + 1) * d]
    })
}

/// Shared voting loop; `frame(match, k)` returns frame `k` of a matched
/// patch.
fn blend_rows<'a>(
    matches: &[usize],
    p: usize,
    d: usize,
    output_length: usize,
    frame: impl Fn(usize, usize) -> &'a [f64] + Sync,
) -> Array2<f64> {
    let windows = matches.len();
    let mut out = Array2::zeros((output_length, d));
    out.as_slice_mut()
        .expect("contiguous")
        .par_chunks_mut(d)
        .enumerate()
        .for_each(|(t, row)| {
            let w_lo = t.saturating_sub(p - 1);
            let w_hi = t.min(windows - 1);
            let mut count = 0.0;
            for w in w_lo..=w_hi {
                let src = frame(matches[w], t - w);
                for (acc, &v) in row.iter_mut().zip(src) {
                    *acc += v;
                }
                count += 1.0;
            }
            for acc in row.iter_mut() {
                *acc /= count;
            }
        });
    out
}

/// Averages part tracks back into a full-body feature matrix: each
/// joint's columns are the mean over all parts containing it, the
/// root/contact columns the mean over root-carrying parts.
pub fn assemble_parts(
    partials: &[(SkeletalPart, Array2<f64>)],
    skeleton: &Skeleton,
    frame_time: f64,
) -> Result<MotionFeatures> {
    let layout = FeatureLayout {
        joints: skeleton.num_joints(),
        contacts: skeleton.num_contacts(),
    };
    let pairs: Vec<(&SkeletalPart, &Array2<f64>)> =
        partials.iter().map(|(p, m)| (p, m)).collect();
    let data = assemble_matrix(&pairs, &layout)?;
    Ok(MotionFeatures {
        data,
        frame_time,
        skeleton_ref: skeleton.signature(),
        layout,
    })
}

pub(crate) fn assemble_matrix(
    partials: &[(&SkeletalPart, &Array2<f64>)],
    layout: &FeatureLayout,
) -> Result<Array2<f64>> {
    let frames = match partials.first() {
        Some((_, m)) => m.nrows(),
        None => return Err(Error::config("assembly needs at least one part")),
    };
    let mut sums = Array2::zeros((frames, layout.width()));
    let mut counts = vec![0.0f64; layout.width()];
    for (part, matrix) in partials {
        if matrix.nrows() != frames {
            return Err(Error::config(format!(
                "part '{}' has {} frames, expected {frames}",
                part.name,
                matrix.nrows()
            )));
        }
        let cols = part.columns(layout);
        if cols.len() != matrix.ncols() {
            return Err(Error::config(format!(
                "part '{}' track has {} columns, expected {}",
                part.name,
                matrix.ncols(),
                cols.len()
            )));
        }
        for (k, &col) in cols.iter().enumerate() {
            counts[col] += 1.0;
            for t in 0..frames {
                sums[(t, col)] += matrix[(t, k)];
            }
        }
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0.0) {
        return Err(Error::config(format!(
            "feature column {missing} is not covered by any part"
        )));
    }
    for t in 0..frames {
        for c in 0..layout.width() {
            sums[(t, c)] /= counts[c];
        }
    }
    Ok(sums)
}

/// One round of generative motion matching at a fixed temporal scale.
///
/// Repeats `iterations` times: for each part, slice the current guess and
/// the exemplars, match every guess window to its nearest exemplar patch
/// under the normalized distance, blend by average voting, and assemble
/// the parts into the next guess. All parts match against the same frozen
/// guess within an iteration, so part order cannot affect the result.
pub fn run_stage(
    guess: &MotionFeatures,
    exemplars: &[MotionFeatures],
    parts: &[SkeletalPart],
    patch_len: usize,
    alpha: f64,
    iterations: usize,
) -> Result<MotionFeatures> {
    let layout = guess.layout;
    let jobs: Vec<PartJob> = parts
        .iter()
        .map(|part| PartJob::new(part.clone(), exemplars.iter(), &layout))
        .collect();
    let opts = MatchOptions {
        alpha,
        ..MatchOptions::default()
    };
    let data = run_stage_engine(&guess.data, &layout, &jobs, patch_len, iterations, &opts)?;
    Ok(guess.with_data(data))
}

/// A part plus the exemplar tracks its patches are drawn from. For
/// ordinary synthesis every part slices every exemplar; reassembly gives
/// each part a single designated source.
pub(crate) struct PartJob {
    pub part: SkeletalPart,
    pub tracks: Vec<Array2<f64>>,
}

impl PartJob {
    pub fn new<'a>(
        part: SkeletalPart,
        exemplars: impl Iterator<Item = &'a MotionFeatures>,
        layout: &FeatureLayout,
    ) -> PartJob {
        let cols = part.columns(layout);
        let tracks = exemplars
            .map(|e| {
                debug_assert_eq!(e.layout, *layout);
                slice_columns(&e.data, &cols)
            })
            .collect();
        PartJob { part, tracks }
    }

    pub fn from_tracks(part: SkeletalPart, tracks: Vec<Array2<f64>>) -> PartJob {
        PartJob { part, tracks }
    }
}

pub(crate) fn run_stage_engine(
    guess: &Array2<f64>,
    layout: &FeatureLayout,
    jobs: &[PartJob],
    patch_len: usize,
    iterations: usize,
    opts: &MatchOptions,
) -> Result<Array2<f64>> {
    let frames = guess.nrows();
    if frames < patch_len {
        return Err(Error::config(format!(
            "synthesis track has {frames} frames, shorter than the patch size {patch_len}"
        )));
    }
    let mut current = guess.clone();
    for _ in 0..iterations {
        let mut partials: Vec<(&SkeletalPart, Array2<f64>)> = Vec::with_capacity(jobs.len());
        for job in jobs {
            let cols = job.part.columns(layout);
            let width = cols.len();
            let x_track = slice_columns(&current, &cols);
            let x = PatchIndex::new(
                vec![x_track.as_slice().expect("contiguous")],
                width,
                patch_len,
            )?;
            let y_slices: Vec<&[f64]> = job
                .tracks
                .iter()
                .map(|t| t.as_slice().expect("contiguous"))
                .collect();
            let y = PatchIndex::new(y_slices, width, patch_len)?;
            let matches = matched_indices(&x, &y, opts)?;
            let blended = blend_rows(&matches, patch_len, width, frames, |m, k| y.frame(m, k));
            partials.push((&job.part, blended));
        }
        let refs: Vec<(&SkeletalPart, &Array2<f64>)> =
            partials.iter().map(|(p, m)| (*p, m)).collect();
        current = assemble_matrix(&refs, layout)?;
    }
    Ok(current)
}

#[cfg(test)]
mod tests;
