//! Stage planning and temporal resampling.
//!
//! Synthesis runs coarse-to-fine over a pyramid of temporally downsampled
//! exemplars. The coarsest level of the shortest example is anchored to
//! `K * p` frames so a patch always spans the same fraction of the
//! example regardless of clip length; successive levels grow by a fixed
//! ratio until the full length is reached. The synthesis track follows the
//! same exponent schedule toward the requested output length.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::representation::MotionFeatures;

/// Derived per-stage track lengths.
#[derive(Debug, Clone)]
pub struct StagePlan {
    pub num_stages: usize,
    /// `example_lengths[s][e]`: frames of example `e` at stage `s`.
    pub example_lengths: Vec<Vec<usize>>,
    /// `synthesis_lengths[s]`: frames of the synthesis track at stage `s`.
    pub synthesis_lengths: Vec<usize>,
    /// The configured growth ratio.
    pub ratio: f64,
    /// The per-stage ratio actually applied; at most `ratio`, chosen so the
    /// coarsest level of the shortest example lands exactly on `K * p`.
    pub effective_ratio: f64,
}

impl StagePlan {
    /// Output length at the finest stage.
    pub fn output_length(&self) -> usize {
        *self.synthesis_lengths.last().expect("at least one stage")
    }
}

fn schedule(full: usize, stages: usize, ratio: f64, min_len: usize) -> Vec<usize> {
    (1..=stages)
        .map(|s| {
            if s == stages {
                full
            } else {
                let scaled = full as f64 * ratio.powi(s as i32 - stages as i32);
                (scaled.round() as usize).max(min_len)
            }
        })
        .collect()
}

/// Plans per-stage lengths for all example tracks and the synthesis track.
///
/// The number of stages is `max(1, ceil(log_r(T_min / (K*p))) + 1)`; each
/// track then shrinks geometrically from its full length, clamped to at
/// least `p` frames.
pub fn plan_stages(
    example_lengths: &[usize],
    output_length: usize,
    patch_size: usize,
    coarse_factor: f64,
    ratio: f64,
) -> Result<StagePlan> {
    if example_lengths.is_empty() {
        return Err(Error::config("at least one example is required"));
    }
    if patch_size < 2 {
        return Err(Error::config("patch size must be at least 2"));
    }
    if ratio <= 1.0 {
        return Err(Error::config("stage ratio must exceed 1"));
    }
    if coarse_factor < 1.0 {
        return Err(Error::config("coarse factor K must be at least 1"));
    }
    if output_length < patch_size {
        return Err(Error::config(format!(
            "output length {output_length} is shorter than the patch size {patch_size}"
        )));
    }
    let t_min = *example_lengths.iter().min().expect("nonempty");
    let coarse_len = coarse_factor * patch_size as f64;
    if coarse_len > t_min as f64 + 1e-9 {
        return Err(Error::config(format!(
            "coarsest length K*p = {coarse_len:.1} exceeds the shortest example ({t_min} frames)"
        )));
    }

    let span = t_min as f64 / coarse_len;
    let num_stages = if span <= 1.0 + 1e-12 {
        1
    } else {
        (span.ln() / ratio.ln()).ceil() as usize + 1
    };
    let effective_ratio = if num_stages > 1 {
        span.powf(1.0 / (num_stages as f64 - 1.0))
    } else {
        ratio
    };

    let per_example: Vec<Vec<usize>> = example_lengths
        .iter()
        .map(|&n| schedule(n, num_stages, effective_ratio, patch_size))
        .collect();
    let example_lengths: Vec<Vec<usize>> = (0..num_stages)
        .map(|s| per_example.iter().map(|track| track[s]).collect())
        .collect();
    let synthesis_lengths = schedule(output_length, num_stages, effective_ratio, patch_size);

    Ok(StagePlan {
        num_stages,
        example_lengths,
        synthesis_lengths,
        ratio,
        effective_ratio,
    })
}

/// Linearly resamples every column to `new_length` frames, preserving the
/// first and last frame exactly. `new_length == 1` returns frame 0.
pub fn resample_matrix(data: &Array2<f64>, new_length: usize) -> Array2<f64> {
    let (h, width) = data.dim();
    assert!(h >= 1 && new_length >= 1);
    if new_length == h {
        return data.clone();
    }
    let mut out = Array2::zeros((new_length, width));
    if new_length == 1 || h == 1 {
        out.row_mut(0).assign(&data.row(0));
        for i in 1..new_length {
            let row = data.row(0).to_owned();
            out.row_mut(i).assign(&row);
        }
        return out;
    }
    let scale = (h - 1) as f64 / (new_length - 1) as f64;
    for i in 0..new_length {
        let pos = i as f64 * scale;
        let lo = (pos.floor() as usize).min(h - 1);
        let hi = (lo + 1).min(h - 1);
        let frac = pos - lo as f64;
        for c in 0..width {
            out[(i, c)] = data[(lo, c)] * (1.0 - frac) + data[(hi, c)] * frac;
        }
    }
    out
}

/// [`resample_matrix`] lifted to [`MotionFeatures`].
pub fn resample(features: &MotionFeatures, new_length: usize) -> MotionFeatures {
    features.with_data(resample_matrix(&features.data, new_length))
}

/// Builds the per-stage exemplar pyramid; the top level is the untouched
/// original of each example.
pub fn build_exemplar_pyramid(
    examples: &[MotionFeatures],
    plan: &StagePlan,
) -> Vec<Vec<MotionFeatures>> {
    (0..plan.num_stages)
        .map(|s| {
            examples
                .iter()
                .enumerate()
                .map(|(e, example)| {
                    let len = plan.example_lengths[s][e];
                    if s + 1 == plan.num_stages {
                        example.clone()
                    } else {
                        resample(example, len)
                    }
                })
                .collect()
        })
        .collect()
}
