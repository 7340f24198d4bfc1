//! Training-free skeletal motion synthesis by multi-stage generative
//! motion matching.
//!
//! Given one or a few example clips, the library synthesizes novel motion
//! sequences of arbitrary length by repeatedly matching and blending short
//! motion patches against the examples across a coarse-to-fine temporal
//! pyramid. The coarsest stage starts from Gaussian noise, so outputs are
//! diverse; matching only ever copies exemplar content, so they stay
//! faithful. Completion, keyframe, looping, and reassembly constraints
//! plug into the same stage loop, and the [`metrics`] module grades
//! outputs with coverage, diversity, and patch-distance measures.
//!
//! Entry points: [`parse_bvh`] / [`encode`] to get features,
//! [`synthesize`] to generate, [`decode`] / [`write_bvh`] to export.

pub mod config;
pub mod error;
pub mod genmatch;
pub mod metrics;
pub mod motion_io;
pub mod pyramid;
pub mod representation;
pub mod synthesizer;
pub mod synthetic;

pub use config::{ConfigDoc, LoadedClip};
pub use error::{Error, Result};
pub use genmatch::{
    assemble_parts, blend_patches, distance_matrix, extract_patches, nearest_matches,
    normalize_distances, partition_skeleton, run_stage, slice_part, DistanceMatrix, MatchOptions,
    NamedPart, PartitionSpec, PatchSet, SkeletalPart,
};
pub use metrics::{
    coverage, evaluate, patch_distance, scaling_probe, set_diversity, MetricReport, ProbePoint,
};
pub use motion_io::{
    compute_contact_labels, forward_kinematics, parse_bvh, write_bvh, Channel, ContactLabels,
    Joint, RawMotion, Skeleton,
};
pub use pyramid::{build_exemplar_pyramid, plan_stages, resample, StagePlan};
pub use representation::{
    decode, encode, rotation_to_6d, six_d_to_rotation, FeatureLayout, MotionFeatures, RootAnchor,
};
pub use synthesizer::{
    apply_constraints, init_coarse_guess, reassemble, synthesize, ChannelValue, ConstraintSet,
    FixedPartial, Keyframe, NoiseSpec, ReassemblySource, SynthesisConfig,
};
