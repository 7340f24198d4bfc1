//! Evaluation metrics: coverage, set diversity, local/global patch
//! distance, plus a timing/memory probe for scaling checks.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::genmatch::{column_minima, PatchIndex};
use crate::motion_io::Skeleton;
use crate::representation::{MotionFeatures, ROTATION_WIDTH};
use crate::synthesizer::{synthesize, ConstraintSet, SynthesisConfig};

/// One evaluation summary.
#[derive(Debug, Clone)]
pub struct MetricReport {
    /// Percent of exemplar patches with a near neighbor in the synthesis.
    pub coverage: f64,
    /// Across-outputs rotation variation, normalized by the example's;
    /// needs at least two outputs.
    pub set_diversity: Option<f64>,
    pub global_patch_distance: f64,
    pub local_patch_distance: f64,
    /// Wall time of the evaluated job, seconds.
    pub wall_time: f64,
    /// Peak resident set size, bytes (0 when unavailable).
    pub peak_memory: u64,
}

impl MetricReport {
    /// Key-value text form, one metric per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("coverage: {:.4}\n", self.coverage));
        if let Some(d) = self.set_diversity {
            out.push_str(&format!("set_diversity: {d:.6}\n"));
        }
        out.push_str(&format!(
            "global_patch_distance: {:.6}\n",
            self.global_patch_distance
        ));
        out.push_str(&format!(
            "local_patch_distance: {:.6}\n",
            self.local_patch_distance
        ));
        out.push_str(&format!("wall_time_s: {:.4}\n", self.wall_time));
        out.push_str(&format!("peak_memory_bytes: {}\n", self.peak_memory));
        out
    }
}

fn check_tracks(
    examples: &[MotionFeatures],
    synthesized: &MotionFeatures,
    patch_len: usize,
) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::config("metrics need at least one example"));
    }
    for example in examples {
        if example.layout != synthesized.layout {
            return Err(Error::config("example and synthesis layouts differ"));
        }
        if example.frames() < patch_len {
            return Err(Error::config("example shorter than the patch size"));
        }
    }
    if synthesized.frames() < patch_len {
        return Err(Error::config("synthesis shorter than the patch size"));
    }
    Ok(())
}

/// Per-element RMS distance from each pooled exemplar patch to its
/// nearest synthesized patch (whole-skeleton, stride 1).
fn exemplar_patch_rms(
    examples: &[MotionFeatures],
    synthesized: &MotionFeatures,
    patch_len: usize,
) -> Result<Vec<f64>> {
    check_tracks(examples, synthesized, patch_len)?;
    let width = synthesized.width();
    let synth_track = synthesized.data.as_slice().expect("contiguous");
    let x = PatchIndex::new(vec![synth_track], width, patch_len)?;
    let example_tracks: Vec<&[f64]> = examples
        .iter()
        .map(|e| e.data.as_slice().expect("contiguous"))
        .collect();
    let y = PatchIndex::new(example_tracks, width, patch_len)?;
    let dim = (patch_len * width) as f64;
    Ok(column_minima(&x, &y, 2048)
        .into_iter()
        .map(|d| (d / dim).sqrt())
        .collect())
}

/// Percent of exemplar patches whose nearest synthesized patch lies
/// within `tolerance` per-element RMS distance.
pub fn coverage(
    examples: &[MotionFeatures],
    synthesized: &MotionFeatures,
    patch_len: usize,
    tolerance: f64,
) -> Result<f64> {
    let rms = exemplar_patch_rms(examples, synthesized, patch_len)?;
    let covered = rms.iter().filter(|&&d| d <= tolerance).count();
    Ok(100.0 * covered as f64 / rms.len() as f64)
}

/// Mean per-element RMS distance from each synthesized patch to its
/// nearest exemplar patch.
pub fn patch_distance(
    examples: &[MotionFeatures],
    synthesized: &MotionFeatures,
    patch_len: usize,
) -> Result<f64> {
    check_tracks(examples, synthesized, patch_len)?;
    let width = synthesized.width();
    let example_tracks: Vec<&[f64]> = examples
        .iter()
        .map(|e| e.data.as_slice().expect("contiguous"))
        .collect();
    let x = PatchIndex::new(example_tracks, width, patch_len)?;
    let synth_track = synthesized.data.as_slice().expect("contiguous");
    let y = PatchIndex::new(vec![synth_track], width, patch_len)?;
    let dim = (patch_len * width) as f64;
    let mins = column_minima(&x, &y, 2048);
    Ok(mins.iter().map(|d| (d / dim).sqrt()).sum::<f64>() / mins.len() as f64)
}

/// Mean across-outputs standard deviation of every rotation channel,
/// normalized by the standard deviation of all rotation channels of the
/// example. Zero iff all outputs are identical on rotation channels.
pub fn set_diversity(outputs: &[MotionFeatures], example: &MotionFeatures) -> Result<f64> {
    if outputs.len() < 2 {
        return Err(Error::config("set diversity needs at least 2 outputs"));
    }
    let frames = outputs[0].frames();
    let layout = outputs[0].layout;
    for o in outputs {
        if o.frames() != frames || o.layout != layout {
            return Err(Error::config("outputs must share length and layout"));
        }
    }
    if example.layout != layout {
        return Err(Error::config("example layout differs from the outputs"));
    }
    let rot_cols = layout.joints * ROTATION_WIDTH;
    if rot_cols == 0 {
        return Err(Error::config("no rotation channels to compare"));
    }

    let n = outputs.len() as f64;
    let mut acc = 0.0;
    for t in 0..frames {
        for c in 0..rot_cols {
            let mean: f64 = outputs.iter().map(|o| o.data[(t, c)]).sum::<f64>() / n;
            let var: f64 = outputs
                .iter()
                .map(|o| {
                    let d = o.data[(t, c)] - mean;
                    d * d
                })
                .sum::<f64>()
                / n;
            acc += var.sqrt();
        }
    }
    let numerator = acc / (frames * rot_cols) as f64;

    let ex_frames = example.frames();
    let total = (ex_frames * rot_cols) as f64;
    let mean: f64 = (0..ex_frames)
        .map(|t| (0..rot_cols).map(|c| example.data[(t, c)]).sum::<f64>())
        .sum::<f64>()
        / total;
    let var: f64 = (0..ex_frames)
        .map(|t| {
            (0..rot_cols)
                .map(|c| {
                    let d = example.data[(t, c)] - mean;
                    d * d
                })
                .sum::<f64>()
        })
        .sum::<f64>()
        / total;
    let denominator = var.sqrt();
    if denominator <= 0.0 {
        return Err(Error::numeric(
            "example rotation channels have zero variance",
        ));
    }
    Ok(numerator / denominator)
}

/// Computes a full report for one or more outputs against the examples.
/// Coverage and patch distances are averaged over the outputs.
pub fn evaluate(
    examples: &[MotionFeatures],
    outputs: &[MotionFeatures],
    local_patch: usize,
    global_patch: usize,
    tolerance: f64,
) -> Result<MetricReport> {
    if outputs.is_empty() {
        return Err(Error::config("evaluation needs at least one output"));
    }
    let start = Instant::now();
    let mut cov = 0.0;
    let mut local = 0.0;
    let mut global = 0.0;
    for output in outputs {
        cov += coverage(examples, output, local_patch, tolerance)?;
        local += patch_distance(examples, output, local_patch)?;
        global += patch_distance(examples, output, global_patch)?;
    }
    let n = outputs.len() as f64;
    let diversity = if outputs.len() >= 2 {
        Some(set_diversity(outputs, &examples[0])?)
    } else {
        None
    };
    Ok(MetricReport {
        coverage: cov / n,
        set_diversity: diversity,
        global_patch_distance: global / n,
        local_patch_distance: local / n,
        wall_time: start.elapsed().as_secs_f64(),
        peak_memory: peak_rss_bytes(),
    })
}

/// One measurement of [`scaling_probe`].
#[derive(Debug, Clone, Copy)]
pub struct ProbePoint {
    pub frames: usize,
    pub wall_time: f64,
    pub peak_memory: u64,
}

/// Runs one synthesis per requested output length, recording wall time
/// and peak resident memory. Jobs run sequentially to keep timings
/// honest.
pub fn scaling_probe(
    example: &MotionFeatures,
    skeleton: &Skeleton,
    config: &SynthesisConfig,
    frame_counts: &[usize],
) -> Result<Vec<ProbePoint>> {
    if frame_counts.is_empty() {
        return Err(Error::config("probe needs at least one frame count"));
    }
    if frame_counts.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config("probe frame counts must be ascending"));
    }
    let mut points = Vec::with_capacity(frame_counts.len());
    for &frames in frame_counts {
        let mut job = config.clone();
        job.output_frames = frames;
        reset_peak_rss();
        let start = Instant::now();
        let out = synthesize(
            std::slice::from_ref(example),
            skeleton,
            &job,
            &ConstraintSet::default(),
        )?;
        let wall_time = start.elapsed().as_secs_f64();
        debug_assert_eq!(out.frames(), frames);
        points.push(ProbePoint {
            frames,
            wall_time,
            peak_memory: peak_rss_bytes(),
        });
    }
    Ok(points)
}

/// Coefficient of determination of the least-squares line through the
/// points; 1 means perfectly linear.
pub fn linear_fit_r2(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = points
        .iter()
        .map(|p| (p.0 - mean_x) * (p.1 - mean_y))
        .sum();
    let syy: f64 = points.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return 1.0;
    }
    let slope = sxy / sxx;
    let ss_res: f64 = points
        .iter()
        .map(|p| {
            let predicted = mean_y + slope * (p.0 - mean_x);
            (p.1 - predicted).powi(2)
        })
        .sum();
    1.0 - ss_res / syy
}

/// Peak resident set size of this process in bytes, from
/// `/proc/self/status` (`VmHWM`). Returns 0 where unavailable.
pub fn peak_rss_bytes() -> u64 {
    #[cfg(target_os = "linux")]
    {
        if let Ok(status) = std::fs::read_to_string("/proc/self/status") {
            for line in status.lines() {
                if let Some(rest) = line.strip_prefix("VmHWM:") {
                    let kb: u64 = rest
                        .trim()
                        .trim_end_matches("kB")
                        .trim()
                        .parse()
                        .unwrap_or(0);
                    return kb * 1024;
                }
            }
        }
        0
    }
    #[cfg(not(target_os = "linux"))]
    {
        0
    }
}

/// Resets the peak-RSS watermark so per-job peaks can be read. Silently
/// does nothing where unsupported.
pub fn reset_peak_rss() {
    #[cfg(target_os = "linux")]
    {
        let _ = std::fs::write("/proc/self/clear_refs", "5");
    }
}
