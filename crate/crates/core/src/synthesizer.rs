//! Multi-stage synthesis: Gaussian initialization at the coarsest scale,
//! per-stage generative matching, upsampling between stages, and
//! constraint enforcement for completion, keyframe, and looping workloads.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::genmatch::{
    partition_skeleton, run_stage_engine, MatchOptions, PartJob, PartitionSpec, SkeletalPart,
};
use crate::motion_io::Skeleton;
use crate::pyramid::{build_exemplar_pyramid, plan_stages, resample, resample_matrix, StagePlan};
use crate::representation::{FeatureLayout, MotionFeatures};

/// A per-channel override: one value for all channels, or one per channel.
#[derive(Debug, Clone, PartialEq)]
pub enum ChannelValue {
    Scalar(f64),
    PerChannel(Vec<f64>),
}

impl ChannelValue {
    fn resolve(&self, width: usize, what: &str) -> Result<Vec<f64>> {
        match self {
            ChannelValue::Scalar(v) => Ok(vec![*v; width]),
            ChannelValue::PerChannel(values) => {
                if values.len() != width {
                    return Err(Error::config(format!(
                        "{what} override has {} entries, feature width is {width}",
                        values.len()
                    )));
                }
                Ok(values.clone())
            }
        }
    }
}

/// Moments of the coarse-stage Gaussian guess. Unset fields default to
/// the pooled statistics of the coarsest exemplar level.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NoiseSpec {
    pub mean: Option<ChannelValue>,
    pub stddev: Option<ChannelValue>,
}

/// Hyperparameters of one synthesis job.
#[derive(Debug, Clone)]
pub struct SynthesisConfig {
    /// Patch length in frames (p).
    pub patch_size: usize,
    /// Coarsest example length as a multiple of the patch size (K).
    pub coarse_factor: f64,
    /// Completeness control knob in the distance normalization.
    pub alpha: f64,
    /// Matching/blending iterations per stage (E).
    pub iterations: usize,
    /// Per-stage upsampling ratio (r).
    pub stage_ratio: f64,
    /// Requested output length in frames (F).
    pub output_frames: usize,
    /// RNG seed for the coarse-stage noise.
    pub seed: u64,
    pub parts: PartitionSpec,
    pub noise: NoiseSpec,
    /// Row-block granularity of the distance computation.
    pub distance_block_rows: usize,
    /// Budget for caching distance blocks between passes.
    pub distance_cache_bytes: usize,
}

impl SynthesisConfig {
    pub fn new(output_frames: usize) -> Self {
        SynthesisConfig {
            patch_size: 11,
            coarse_factor: 4.0,
            alpha: 0.01,
            iterations: 5,
            stage_ratio: 4.0 / 3.0,
            output_frames,
            seed: 0,
            parts: PartitionSpec::Whole,
            noise: NoiseSpec::default(),
            distance_block_rows: 2048,
            distance_cache_bytes: 1 << 30,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 2 {
            return Err(Error::config("patch size must be at least 2"));
        }
        if self.coarse_factor < 1.0 {
            return Err(Error::config("coarse factor K must be at least 1"));
        }
        if self.alpha < 0.0 {
            return Err(Error::config("alpha must be nonnegative"));
        }
        if self.stage_ratio <= 1.0 {
            return Err(Error::config("stage ratio must exceed 1"));
        }
        if self.output_frames < self.patch_size {
            return Err(Error::config(format!(
                "output length {} is shorter than the patch size {}",
                self.output_frames, self.patch_size
            )));
        }
        Ok(())
    }

    fn match_options(&self) -> MatchOptions {
        MatchOptions {
            alpha: self.alpha,
            block_rows: self.distance_block_rows,
            cache_bytes: self.distance_cache_bytes,
        }
    }

    fn plan(&self, example_lengths: &[usize]) -> Result<StagePlan> {
        plan_stages(
            example_lengths,
            self.output_frames,
            self.patch_size,
            self.coarse_factor,
            self.stage_ratio,
        )
    }
}

/// A pose pinned at a coarse-stage frame index, kept fixed through the
/// whole generation process.
#[derive(Debug, Clone)]
pub struct Keyframe {
    /// Frame index at the coarsest stage (must be < F_1).
    pub coarse_index: usize,
    /// Full-width feature row.
    pub pose: Vec<f64>,
}

/// A partial-body track that the output must reproduce verbatim.
#[derive(Debug, Clone)]
pub struct FixedPartial {
    /// Which part of the partition is pinned.
    pub part_name: String,
    /// Full-width features; only the part's columns are used.
    pub track: MotionFeatures,
}

/// The application constraints: keyframe pins, a fixed partial-body
/// track, and the loop flag.
#[derive(Debug, Clone, Default)]
pub struct ConstraintSet {
    pub keyframes: Vec<Keyframe>,
    pub fixed_partial: Option<FixedPartial>,
    pub looped: bool,
}

impl ConstraintSet {
    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty() && self.fixed_partial.is_none() && !self.looped
    }

    fn validate(
        &self,
        plan: &StagePlan,
        layout: &FeatureLayout,
        parts: &[SkeletalPart],
    ) -> Result<()> {
        let coarse_len = plan.synthesis_lengths[0];
        for kf in &self.keyframes {
            if kf.coarse_index >= coarse_len {
                return Err(Error::config(format!(
                    "keyframe index {} out of range: coarsest stage has {coarse_len} frames",
                    kf.coarse_index
                )));
            }
            if kf.pose.len() != layout.width() {
                return Err(Error::config(format!(
                    "keyframe pose has {} values, feature width is {}",
                    kf.pose.len(),
                    layout.width()
                )));
            }
        }
        if let Some(fp) = &self.fixed_partial {
            if !parts.iter().any(|p| p.name == fp.part_name) {
                return Err(Error::config(format!(
                    "fixed part '{}' is not a member of the partition",
                    fp.part_name
                )));
            }
            if fp.track.layout != *layout {
                return Err(Error::config(
                    "fixed partial track layout does not match the examples",
                ));
            }
        }
        if self.looped && plan.output_length() < 2 {
            return Err(Error::config("loop constraint needs at least 2 frames"));
        }
        Ok(())
    }
}

/// Population mean and standard deviation of every column, pooled across
/// the given tracks.
fn channel_stats(tracks: &[&Array2<f64>]) -> (Vec<f64>, Vec<f64>) {
    let width = tracks[0].ncols();
    let total: usize = tracks.iter().map(|t| t.nrows()).sum();
    let mut mean = vec![0.0f64; width];
    for track in tracks {
        for row in track.rows() {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
    }
    for m in mean.iter_mut() {
        *m /= total as f64;
    }
    let mut var = vec![0.0f64; width];
    for track in tracks {
        for row in track.rows() {
            for ((s, &v), m) in var.iter_mut().zip(row).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
    }
    let std = var.iter().map(|s| (s / total as f64).sqrt()).collect();
    (mean, std)
}

fn sample_noise(rows: usize, mean: &[f64], stddev: &[f64], seed: u64) -> Array2<f64> {
    let width = mean.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Array2::zeros((rows, width));
    for t in 0..rows {
        for c in 0..width {
            let z: f64 = StandardNormal.sample(&mut rng);
            data[(t, c)] = mean[c] + stddev[c] * z;
        }
    }
    data
}

/// Draws the purely generative coarse-stage guess: `F_1 x d` independent
/// Gaussians with per-channel moments taken from the pooled level-1
/// exemplars unless the config overrides them.
pub fn init_coarse_guess(
    plan: &StagePlan,
    config: &SynthesisConfig,
    level1: &[MotionFeatures],
) -> Result<MotionFeatures> {
    let template = level1
        .first()
        .ok_or_else(|| Error::config("noise initialization needs at least one exemplar"))?;
    let width = template.width();
    let tracks: Vec<&Array2<f64>> = level1.iter().map(|f| &f.data).collect();
    let (pooled_mean, pooled_std) = channel_stats(&tracks);
    let mean = match &config.noise.mean {
        Some(value) => value.resolve(width, "noise mean")?,
        None => pooled_mean,
    };
    let stddev = match &config.noise.stddev {
        Some(value) => value.resolve(width, "noise stddev")?,
        None => pooled_std,
    };
    let data = sample_noise(plan.synthesis_lengths[0], &mean, &stddev, config.seed);
    Ok(template.with_data(data))
}

/// Enforces the constraint set on an intermediate track at stage
/// `stage` (0-based).
///
/// Keyframes are written at their coarse indices at stage 0 and at
/// proportionally rescaled indices later; the fixed partial-body track is
/// resampled to the stage length and overwrites its part's columns; the
/// loop constraint copies the first row over the last.
pub fn apply_constraints(
    track: &MotionFeatures,
    constraints: &ConstraintSet,
    stage: usize,
    plan: &StagePlan,
    parts: &[SkeletalPart],
) -> Result<MotionFeatures> {
    let expected = plan.synthesis_lengths[stage];
    if track.frames() != expected {
        return Err(Error::config(format!(
            "track has {} frames, stage {} expects {expected}",
            track.frames(),
            stage + 1
        )));
    }
    if constraints.is_empty() {
        return Ok(track.clone());
    }
    let mut data = track.data.clone();
    let coarse_len = plan.synthesis_lengths[0];
    let current_len = expected;

    for kf in &constraints.keyframes {
        if kf.coarse_index >= coarse_len {
            return Err(Error::config(format!(
                "keyframe index {} out of range (coarsest stage has {coarse_len} frames)",
                kf.coarse_index
            )));
        }
        let index = if stage == 0 {
            kf.coarse_index
        } else {
            let mapped = kf.coarse_index as f64 * (current_len - 1) as f64
                / (coarse_len - 1).max(1) as f64;
            (mapped.round() as usize).min(current_len - 1)
        };
        for (c, &v) in kf.pose.iter().enumerate() {
            data[(index, c)] = v;
        }
    }

    if let Some(fp) = &constraints.fixed_partial {
        let part = parts
            .iter()
            .find(|p| p.name == fp.part_name)
            .ok_or_else(|| {
                Error::config(format!(
                    "fixed part '{}' is not a member of the partition",
                    fp.part_name
                ))
            })?;
        let resampled = resample_matrix(&fp.track.data, current_len);
        for &col in part.columns(&track.layout).iter() {
            for t in 0..current_len {
                data[(t, col)] = resampled[(t, col)];
            }
        }
    }

    if constraints.looped {
        let first = data.row(0).to_owned();
        data.row_mut(current_len - 1).assign(&first);
    }

    Ok(track.with_data(data))
}

fn check_examples(examples: &[MotionFeatures], skeleton: &Skeleton) -> Result<FeatureLayout> {
    if examples.is_empty() {
        return Err(Error::config("at least one example is required"));
    }
    let layout = FeatureLayout {
        joints: skeleton.num_joints(),
        contacts: skeleton.num_contacts(),
    };
    let signature = skeleton.signature();
    for (e, example) in examples.iter().enumerate() {
        example.validate()?;
        if example.layout != layout || example.skeleton_ref != signature {
            return Err(Error::config(format!(
                "example {e} was not encoded against this skeleton"
            )));
        }
        if example.frames() < 2 {
            return Err(Error::config(format!("example {e} has fewer than 2 frames")));
        }
    }
    Ok(layout)
}

fn stage_loop(
    mut guess: MotionFeatures,
    stage_jobs: impl Fn(usize) -> Vec<PartJob>,
    plan: &StagePlan,
    parts: &[SkeletalPart],
    config: &SynthesisConfig,
    constraints: &ConstraintSet,
) -> Result<MotionFeatures> {
    let layout = guess.layout;
    let opts = config.match_options();
    guess = apply_constraints(&guess, constraints, 0, plan, parts)?;
    for s in 0..plan.num_stages {
        if s > 0 {
            guess = resample(&guess, plan.synthesis_lengths[s]);
        }
        let jobs = stage_jobs(s);
        let data = run_stage_engine(
            &guess.data,
            &layout,
            &jobs,
            config.patch_size,
            config.iterations,
            &opts,
        )
        .map_err(|e| Error::config(format!("stage {}: {e}", s + 1)))?;
        guess = guess.with_data(data);
        guess = apply_constraints(&guess, constraints, s, plan, parts)?;
    }
    Ok(guess)
}

/// Synthesizes a novel motion of `config.output_frames` frames from one
/// or more examples sharing a skeleton.
///
/// Plans the stage lengths, builds the exemplar pyramid, seeds the
/// coarsest stage with Gaussian noise, then alternates matching stages,
/// constraint application, and upsampling until the finest stage.
pub fn synthesize(
    examples: &[MotionFeatures],
    skeleton: &Skeleton,
    config: &SynthesisConfig,
    constraints: &ConstraintSet,
) -> Result<MotionFeatures> {
    config.validate()?;
    let layout = check_examples(examples, skeleton)?;
    let parts = partition_skeleton(skeleton, &config.parts)?;
    let lengths: Vec<usize> = examples.iter().map(|e| e.frames()).collect();
    let plan = config.plan(&lengths)?;
    constraints.validate(&plan, &layout, &parts)?;

    let pyramid = build_exemplar_pyramid(examples, &plan);
    let guess = init_coarse_guess(&plan, config, &pyramid[0])?;
    stage_loop(
        guess,
        |s| {
            parts
                .iter()
                .map(|part| PartJob::new(part.clone(), pyramid[s].iter(), &layout))
                .collect()
        },
        &plan,
        &parts,
        config,
        constraints,
    )
}

/// One input of a reassembly job: an example clip with its own skeleton,
/// the target part it feeds, and the target-to-source joint-name mapping
/// (identity for unmapped names).
#[derive(Debug, Clone)]
pub struct ReassemblySource {
    pub example: MotionFeatures,
    pub skeleton: Skeleton,
    pub part_name: String,
    /// target joint name -> source joint name.
    pub joint_map: std::collections::HashMap<String, String>,
}

impl ReassemblySource {
    fn source_joint(&self, target_name: &str) -> String {
        self.joint_map
            .get(target_name)
            .cloned()
            .unwrap_or_else(|| target_name.to_string())
    }
}

/// Synthesizes motion for `target` by drawing each skeletal part's
/// patches exclusively from its designated source example; sources may
/// have heterogeneous skeletons. Overlap joints are averaged across
/// parts as in ordinary partitioned synthesis.
pub fn reassemble(
    sources: &[ReassemblySource],
    target: &Skeleton,
    config: &SynthesisConfig,
    constraints: &ConstraintSet,
) -> Result<MotionFeatures> {
    config.validate()?;
    target.validate()?;
    if sources.is_empty() {
        return Err(Error::config("reassembly needs at least one source"));
    }
    let layout = FeatureLayout {
        joints: target.num_joints(),
        contacts: target.num_contacts(),
    };
    let parts = partition_skeleton(target, &config.parts)?;
    for part in &parts {
        let feeders = sources.iter().filter(|s| s.part_name == part.name).count();
        if feeders != 1 {
            return Err(Error::config(format!(
                "part '{}' must have exactly one source, found {feeders}",
                part.name
            )));
        }
    }
    for source in sources {
        if !parts.iter().any(|p| p.name == source.part_name) {
            return Err(Error::config(format!(
                "source part '{}' is not a member of the partition",
                source.part_name
            )));
        }
    }

    // Build each part's exemplar track in part-slice column order, pulling
    // mapped source joints (plus root motion columns where applicable).
    let mut part_tracks: Vec<Array2<f64>> = Vec::with_capacity(parts.len());
    for part in &parts {
        let source = sources
            .iter()
            .find(|s| s.part_name == part.name)
            .expect("validated above");
        let src_layout = source.example.layout;
        let mut cols = Vec::new();
        for &j in &part.joint_indices {
            let target_name = &target.joints[j].name;
            let src_name = source.source_joint(target_name);
            let src_idx = source.skeleton.joint_index(&src_name).ok_or_else(|| {
                Error::config(format!(
                    "part '{}': target joint '{target_name}' maps to unknown source joint '{src_name}'",
                    part.name
                ))
            })?;
            cols.extend(src_layout.rotation_cols(src_idx));
        }
        if part.include_root_motion {
            if src_layout.contacts != layout.contacts {
                return Err(Error::config(format!(
                    "part '{}' carries root motion but its source has {} contact columns, target has {}",
                    part.name, src_layout.contacts, layout.contacts
                )));
            }
            cols.extend(src_layout.root_cols());
            cols.extend(src_layout.contact_cols());
        }
        part_tracks.push(crate::genmatch::slice_columns(&source.example.data, &cols));
    }

    let lengths: Vec<usize> = sources.iter().map(|s| s.example.frames()).collect();
    let plan = config.plan(&lengths)?;
    constraints.validate(&plan, &layout, &parts)?;

    // Per-stage pyramid of each part's source track.
    let track_pyramids: Vec<Vec<Array2<f64>>> = parts
        .iter()
        .enumerate()
        .map(|(i, part)| {
            let source_idx = sources
                .iter()
                .position(|s| s.part_name == part.name)
                .expect("validated above");
            (0..plan.num_stages)
                .map(|s| {
                    if s + 1 == plan.num_stages {
                        part_tracks[i].clone()
                    } else {
                        resample_matrix(&part_tracks[i], plan.example_lengths[s][source_idx])
                    }
                })
                .collect()
        })
        .collect();

    // Noise moments: scatter each part's level-1 column stats into the
    // target layout, averaging where parts overlap.
    let width = layout.width();
    let mut mean_acc = vec![0.0f64; width];
    let mut std_acc = vec![0.0f64; width];
    let mut counts = vec![0.0f64; width];
    for (i, part) in parts.iter().enumerate() {
        let (mean, std) = channel_stats(&[&track_pyramids[i][0]]);
        for (k, &col) in part.columns(&layout).iter().enumerate() {
            mean_acc[col] += mean[k];
            std_acc[col] += std[k];
            counts[col] += 1.0;
        }
    }
    for c in 0..width {
        mean_acc[c] /= counts[c];
        std_acc[c] /= counts[c];
    }
    let mean = match &config.noise.mean {
        Some(value) => value.resolve(width, "noise mean")?,
        None => mean_acc,
    };
    let stddev = match &config.noise.stddev {
        Some(value) => value.resolve(width, "noise stddev")?,
        None => std_acc,
    };

    let guess = MotionFeatures {
        data: sample_noise(plan.synthesis_lengths[0], &mean, &stddev, config.seed),
        frame_time: sources[0].example.frame_time,
        skeleton_ref: target.signature(),
        layout,
    };
    stage_loop(
        guess,
        |s| {
            parts
                .iter()
                .enumerate()
                .map(|(i, part)| {
                    PartJob::from_tracks(part.clone(), vec![track_pyramids[i][s].clone()])
                })
                .collect()
        },
        &plan,
        &parts,
        config,
        constraints,
    )
}
