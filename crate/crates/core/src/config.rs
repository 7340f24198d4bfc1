//! The TOML configuration document shared by the CLI and the library.
//!
//! Every CLI flag has an equivalent key here; flags override the file.
//! Paths inside the document (completion tracks, reassembly sources) are
//! resolved relative to the document's own directory.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::genmatch::{NamedPart, PartitionSpec};
use crate::motion_io::{
    compute_contact_labels, forward_kinematics, parse_bvh, ContactLabels, Skeleton,
    DEFAULT_CONTACT_VELOCITY_FACTOR,
};
use crate::representation::{encode, MotionFeatures, RootAnchor};
use crate::synthesizer::{
    ChannelValue, ConstraintSet, FixedPartial, Keyframe, NoiseSpec, ReassemblySource,
    SynthesisConfig,
};

/// A value that may be a single scalar or one entry per feature channel.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrPerChannel {
    Scalar(f64),
    PerChannel(Vec<f64>),
}

impl From<&ScalarOrPerChannel> for ChannelValue {
    fn from(v: &ScalarOrPerChannel) -> ChannelValue {
        match v {
            ScalarOrPerChannel::Scalar(s) => ChannelValue::Scalar(*s),
            ScalarOrPerChannel::PerChannel(values) => ChannelValue::PerChannel(values.clone()),
        }
    }
}

/// `parts = "whole"` or a list of named joint groups.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum PartsDoc {
    Mode(String),
    Named(Vec<PartDoc>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartDoc {
    pub name: String,
    pub joints: Vec<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseDoc {
    pub mean: Option<ScalarOrPerChannel>,
    pub stddev: Option<ScalarOrPerChannel>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyframeDoc {
    /// Frame index at the coarsest stage.
    pub frame: usize,
    /// Pose source: an example index plus a frame in that example...
    pub example: Option<usize>,
    pub example_frame: Option<usize>,
    /// ...or an inline feature row.
    pub pose: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompletionDoc {
    /// Part whose columns are pinned.
    pub part: String,
    /// BVH file holding the pinned track (same skeleton as the examples).
    pub track: String,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintsDoc {
    #[serde(default, rename = "loop")]
    pub looped: bool,
    #[serde(default)]
    pub keyframes: Vec<KeyframeDoc>,
    pub completion: Option<CompletionDoc>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalDoc {
    pub tau: Option<f64>,
    pub local_patch_size: Option<usize>,
    pub global_patch_size: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeDoc {
    pub frames: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReassemblySourceDoc {
    pub example: String,
    pub part: String,
    /// target joint name -> source joint name; unmapped names pass through.
    #[serde(default)]
    pub mapping: HashMap<String, String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReassemblyDoc {
    /// BVH file providing the target skeleton.
    pub target: Option<String>,
    #[serde(default)]
    pub sources: Vec<ReassemblySourceDoc>,
}

/// The full configuration document. Everything is optional; defaults
/// match the library defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDoc {
    pub inputs: Option<Vec<String>>,
    pub output: Option<String>,
    pub frames: Option<usize>,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub threads: Option<usize>,
    pub anchor: Option<[f64; 3]>,

    pub patch_size: Option<usize>,
    pub coarse_factor: Option<f64>,
    pub alpha: Option<f64>,
    pub iterations: Option<usize>,
    pub stage_ratio: Option<f64>,
    pub distance_block_rows: Option<usize>,
    pub distance_cache_mb: Option<usize>,

    pub foot_joints: Option<Vec<String>>,
    pub contact_velocity_factor: Option<f64>,

    pub parts: Option<PartsDoc>,
    #[serde(default)]
    pub noise: NoiseDoc,
    #[serde(default)]
    pub constraints: ConstraintsDoc,
    #[serde(default)]
    pub eval: EvalDoc,
    #[serde(default)]
    pub probe: ProbeDoc,
    #[serde(default)]
    pub reassembly: ReassemblyDoc,

    /// Directory the document was loaded from; relative paths inside the
    /// document resolve against it.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl ConfigDoc {
    pub fn parse(text: &str) -> Result<ConfigDoc> {
        toml::from_str(text).map_err(|e| Error::config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<ConfigDoc> {
        let text = std::fs::read_to_string(path)?;
        let mut doc = ConfigDoc::parse(&text)?;
        doc.base_dir = path.parent().map(PathBuf::from);
        Ok(doc)
    }

    /// Resolves a path mentioned inside the document.
    pub fn resolve_path(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            return p.to_path_buf();
        }
        match &self.base_dir {
            Some(base) => base.join(p),
            None => p.to_path_buf(),
        }
    }

    pub fn partition_spec(&self) -> Result<PartitionSpec> {
        match &self.parts {
            None => Ok(PartitionSpec::Whole),
            Some(PartsDoc::Mode(mode)) if mode == "whole" => Ok(PartitionSpec::Whole),
            Some(PartsDoc::Mode(mode)) => Err(Error::config(format!(
                "unknown parts mode '{mode}' (expected \"whole\" or a part list)"
            ))),
            Some(PartsDoc::Named(parts)) => Ok(PartitionSpec::Named(
                parts
                    .iter()
                    .map(|p| NamedPart {
                        name: p.name.clone(),
                        joints: p.joints.clone(),
                    })
                    .collect(),
            )),
        }
    }

    /// Builds the synthesis configuration; `output_frames` is the already
    /// merged frame count (flag, config key, or the 2x-examples default).
    pub fn synthesis_config(&self, output_frames: usize) -> Result<SynthesisConfig> {
        let mut config = SynthesisConfig::new(output_frames);
        if let Some(p) = self.patch_size {
            config.patch_size = p;
        }
        if let Some(k) = self.coarse_factor {
            config.coarse_factor = k;
        }
        if let Some(a) = self.alpha {
            config.alpha = a;
        }
        if let Some(e) = self.iterations {
            config.iterations = e;
        }
        if let Some(r) = self.stage_ratio {
            config.stage_ratio = r;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(rows) = self.distance_block_rows {
            config.distance_block_rows = rows;
        }
        if let Some(mb) = self.distance_cache_mb {
            config.distance_cache_bytes = mb << 20;
        }
        config.parts = self.partition_spec()?;
        config.noise = NoiseSpec {
            mean: self.noise.mean.as_ref().map(ChannelValue::from),
            stddev: self.noise.stddev.as_ref().map(ChannelValue::from),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn contact_velocity_factor(&self) -> f64 {
        self.contact_velocity_factor
            .unwrap_or(DEFAULT_CONTACT_VELOCITY_FACTOR)
    }

    /// Parses a BVH file and encodes it with this document's foot-joint
    /// and contact settings.
    pub fn load_encoded_bvh(&self, path: &Path) -> Result<LoadedClip> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))
        })?;
        let (mut skeleton, motion) = parse_bvh(&text)?;
        if let Some(feet) = &self.foot_joints {
            skeleton.set_foot_joints(feet)?;
        }
        let labels = if skeleton.foot_joints.is_empty() {
            ContactLabels::empty(motion.num_frames())
        } else {
            let positions = forward_kinematics(&skeleton, &motion)?;
            let threshold = self.contact_velocity_factor() * skeleton.rest_height();
            compute_contact_labels(&positions, &skeleton.foot_joints, threshold)?
        };
        let (features, anchor) = encode(&skeleton, &motion, &labels)?;
        Ok(LoadedClip {
            skeleton,
            features,
            anchor,
        })
    }

    /// Resolves the constraint block against the loaded examples.
    pub fn build_constraints(
        &self,
        examples: &[MotionFeatures],
        skeleton: &Skeleton,
    ) -> Result<ConstraintSet> {
        let mut keyframes = Vec::with_capacity(self.constraints.keyframes.len());
        for kf in &self.constraints.keyframes {
            let pose = match (&kf.pose, kf.example, kf.example_frame) {
                (Some(pose), None, None) => pose.clone(),
                (None, Some(e), Some(t)) => {
                    let example = examples.get(e).ok_or_else(|| {
                        Error::config(format!("keyframe references example {e}, have {}", examples.len()))
                    })?;
                    if t >= example.frames() {
                        return Err(Error::config(format!(
                            "keyframe references frame {t} of example {e}, which has {} frames",
                            example.frames()
                        )));
                    }
                    example.data.row(t).to_vec()
                }
                _ => {
                    return Err(Error::config(
                        "keyframe needs either an inline pose or example + example_frame",
                    ))
                }
            };
            keyframes.push(Keyframe {
                coarse_index: kf.frame,
                pose,
            });
        }

        let fixed_partial = match &self.constraints.completion {
            None => None,
            Some(completion) => {
                let clip = self.load_encoded_bvh(&self.resolve_path(&completion.track))?;
                if clip.skeleton.signature() != skeleton.signature() {
                    return Err(Error::config(format!(
                        "completion track '{}' uses a different skeleton than the examples",
                        completion.track
                    )));
                }
                Some(FixedPartial {
                    part_name: completion.part.clone(),
                    track: clip.features,
                })
            }
        };

        Ok(ConstraintSet {
            keyframes,
            fixed_partial,
            looped: self.constraints.looped,
        })
    }

    /// Loads the reassembly block: the target skeleton plus one source
    /// clip per part.
    pub fn build_reassembly(&self) -> Result<(Skeleton, Vec<ReassemblySource>)> {
        let target_path = self.reassembly.target.as_ref().ok_or_else(|| {
            Error::config("reassembly requires a target skeleton file (reassembly.target)")
        })?;
        let target = self.load_encoded_bvh(&self.resolve_path(target_path))?;
        if self.reassembly.sources.is_empty() {
            return Err(Error::config("reassembly requires at least one source"));
        }
        let sources = self
            .reassembly
            .sources
            .iter()
            .map(|src| {
                let clip = self.load_encoded_bvh(&self.resolve_path(&src.example))?;
                Ok(ReassemblySource {
                    example: clip.features,
                    skeleton: clip.skeleton,
                    part_name: src.part.clone(),
                    joint_map: src.mapping.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((target.skeleton, sources))
    }

    pub fn eval_tau(&self) -> f64 {
        self.eval.tau.unwrap_or(0.05)
    }

    pub fn eval_local_patch(&self) -> usize {
        self.eval
            .local_patch_size
            .or(self.patch_size)
            .unwrap_or(11)
    }

    pub fn eval_global_patch(&self) -> usize {
        self.eval
            .global_patch_size
            .unwrap_or_else(|| 2 * self.eval_local_patch() + 1)
    }
}

/// A parsed and encoded BVH clip.
pub struct LoadedClip {
    pub skeleton: Skeleton,
    pub features: MotionFeatures,
    pub anchor: RootAnchor,
}
