use super::*;
use crate::motion_io::{Channel, Joint};
use nalgebra::Vector3;
use ndarray::array;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn chain_skeleton(names: &[&str]) -> Skeleton {
    let joints = names
        .iter()
        .enumerate()
        .map(|(i, name)| Joint {
            name: (*name).into(),
            parent: if i == 0 { None } else { Some(i - 1) },
            offset: Vector3::new(0.0, 1.0, 0.0),
            channels: if i == 0 {
                vec![
                    Channel::XPosition,
                    Channel::YPosition,
                    Channel::ZPosition,
                    Channel::ZRotation,
                    Channel::XRotation,
                    Channel::YRotation,
                ]
            } else {
                vec![Channel::ZRotation, Channel::XRotation, Channel::YRotation]
            },
            end_site: None,
        })
        .collect();
    Skeleton {
        joints,
        foot_joints: vec![],
    }
}

/// Star skeleton: a spine root with three limbs hanging off it.
fn star_skeleton() -> Skeleton {
    let mut skeleton = chain_skeleton(&["Hips", "Spine"]);
    for name in ["LeftArm", "RightArm", "Legs"] {
        skeleton.joints.push(Joint {
            name: name.into(),
            parent: Some(1),
            offset: Vector3::new(0.5, 0.0, 0.0),
            channels: vec![Channel::ZRotation, Channel::XRotation, Channel::YRotation],
            end_site: None,
        });
    }
    skeleton
}

fn named(name: &str, joints: &[&str]) -> NamedPart {
    NamedPart {
        name: name.into(),
        joints: joints.iter().map(|s| (*s).into()).collect(),
    }
}

#[test]
fn whole_partition_covers_everything() {
    let skeleton = chain_skeleton(&["a", "b", "c"]);
    let parts = partition_skeleton(&skeleton, &PartitionSpec::Whole).unwrap();
    assert_eq!(parts.len(), 1);
    assert_eq!(parts[0].joint_indices, vec![0, 1, 2]);
    assert!(parts[0].include_root_motion);
}

#[test]
fn three_overlapping_parts_share_the_spine() {
    let skeleton = star_skeleton();
    let spec = PartitionSpec::Named(vec![
        named("left", &["Hips", "Spine", "LeftArm"]),
        named("right", &["Hips", "Spine", "RightArm"]),
        named("lower", &["Hips", "Spine", "Legs"]),
    ]);
    let parts = partition_skeleton(&skeleton, &spec).unwrap();
    assert_eq!(parts.len(), 3);
    for part in &parts {
        assert!(part.include_root_motion, "all contain the root here");
        assert!(part.joint_indices.contains(&1));
    }
}

#[test]
fn partition_validation_errors() {
    let skeleton = star_skeleton();

    let err = partition_skeleton(
        &skeleton,
        &PartitionSpec::Named(vec![named("a", &["Hips", "Nope"])]),
    )
    .unwrap_err();
    assert!(err.to_string().contains("Nope"));

    // Legs is uncovered.
    let err = partition_skeleton(
        &skeleton,
        &PartitionSpec::Named(vec![
            named("left", &["Hips", "Spine", "LeftArm"]),
            named("right", &["Hips", "Spine", "RightArm"]),
        ]),
    )
    .unwrap_err();
    assert!(err.to_string().contains("Legs"));

    // LeftArm + RightArm without the spine is disconnected.
    let err = partition_skeleton(
        &skeleton,
        &PartitionSpec::Named(vec![
            named("arms", &["LeftArm", "RightArm"]),
            named("rest", &["Hips", "Spine", "Legs", "LeftArm", "RightArm"]),
        ]),
    )
    .unwrap_err();
    assert!(err.to_string().contains("connected"));

    // No shared joint between the two parts.
    let err = partition_skeleton(
        &skeleton,
        &PartitionSpec::Named(vec![
            named("lower", &["Hips", "Spine", "Legs"]),
            named("arms", &["LeftArm"]),
            named("arms2", &["RightArm"]),
        ]),
    )
    .unwrap_err();
    assert!(err.to_string().contains("overlap"));
}

fn features_with(layout: FeatureLayout, data: Array2<f64>) -> MotionFeatures {
    MotionFeatures {
        data,
        frame_time: 1.0 / 30.0,
        skeleton_ref: "test".into(),
        layout,
    }
}

fn random_features(layout: FeatureLayout, frames: usize, seed: u64) -> MotionFeatures {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    features_with(
        layout,
        Array2::from_shape_fn((frames, layout.width()), |_| rng.gen_range(-1.0..1.0)),
    )
}

#[test]
fn slice_part_column_arithmetic() {
    let layout = FeatureLayout {
        joints: 3,
        contacts: 2,
    };
    let features = random_features(layout, 4, 1);

    let whole = SkeletalPart {
        name: "whole".into(),
        joint_indices: vec![0, 1, 2],
        include_root_motion: true,
    };
    assert_eq!(slice_part(&features, &whole), features.data);

    let no_root = SkeletalPart {
        name: "tail".into(),
        joint_indices: vec![1, 2],
        include_root_motion: false,
    };
    assert_eq!(slice_part(&features, &no_root).ncols(), 12);

    let rooted = SkeletalPart {
        name: "rooted".into(),
        joint_indices: vec![0, 1],
        include_root_motion: true,
    };
    // 6k + 3 + C columns.
    assert_eq!(slice_part(&features, &rooted).ncols(), 6 * 2 + 3 + 2);
}

#[test]
fn window_counts_and_provenance() {
    let track = |h: usize| Array2::from_shape_fn((h, 2), |(t, c)| (t * 2 + c) as f64);
    let set = extract_patches(&[track(14)], 11).unwrap();
    assert_eq!(set.len(), 4);

    let set = extract_patches(&[track(12), track(13)], 11).unwrap();
    assert_eq!(set.len(), 5);
    assert_eq!(set.source_example, vec![0, 0, 1, 1, 1]);
    assert_eq!(set.source_frame, vec![0, 1, 0, 1, 2]);

    let set = extract_patches(&[track(11)], 11).unwrap();
    assert_eq!(set.len(), 1);
    assert_eq!(
        set.patches.row(0).to_vec(),
        track(11).as_slice().unwrap().to_vec()
    );

    let err = extract_patches(&[track(12), track(8)], 11).unwrap_err();
    assert!(err.to_string().contains("example 1"));
}

fn patch_set_from(rows: Array2<f64>, p: usize, d: usize) -> PatchSet {
    let n = rows.nrows();
    PatchSet {
        patches: rows,
        source_frame: vec![0; n],
        source_example: vec![0; n],
        patch_len: p,
        frame_width: d,
    }
}

#[test]
fn self_distance_is_zero_on_the_diagonal() {
    let rows = Array2::from_shape_fn((5, 6), |(i, k)| (i * 6 + k) as f64 * 0.25);
    let x = patch_set_from(rows.clone(), 2, 3);
    let y = patch_set_from(rows, 2, 3);
    let d = distance_matrix(&x, &y).unwrap();
    for i in 0..5 {
        assert_eq!(d.values[(i, i)], 0.0);
    }
}

#[test]
fn three_four_five() {
    let x = patch_set_from(array![[0.0, 0.0]], 1, 2);
    let y = patch_set_from(array![[3.0, 4.0]], 1, 2);
    let d = distance_matrix(&x, &y).unwrap();
    assert_eq!(d.values[(0, 0)], 25.0);
}

#[test]
fn normalization_follows_the_column_minima() {
    // Column minima of [[0,4],[2,1]] are [0,1]; with alpha = 1 the
    // normalized matrix is [[0/1, 4/2], [2/1, 1/2]].
    let d = DistanceMatrix {
        values: array![[0.0, 4.0], [2.0, 1.0]],
    };
    let n = normalize_distances(&d, 1.0).unwrap();
    assert_eq!(n.values, array![[0.0, 2.0], [2.0, 0.5]]);
    assert_eq!(nearest_matches(&n), vec![0, 1]);
}

#[test]
fn all_equal_distances_stay_equal() {
    let d = DistanceMatrix {
        values: Array2::from_elem((3, 4), 2.0),
    };
    let n = normalize_distances(&d, 0.5).unwrap();
    assert!(n.values.iter().all(|&v| (v - 0.8).abs() < 1e-15));
    assert_eq!(nearest_matches(&n), vec![0, 0, 0]);
}

#[test]
fn huge_alpha_preserves_raw_argmins() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let d = DistanceMatrix {
            values: Array2::from_shape_fn((12, 17), |_| rng.gen_range(0.0..10.0)),
        };
        let n = normalize_distances(&d, 1e12).unwrap();
        assert_eq!(nearest_matches(&n), nearest_matches(&d));
    }
}

#[test]
fn alpha_zero_errors_on_exact_matches() {
    let d = DistanceMatrix {
        values: array![[0.0, 4.0], [2.0, 1.0]],
    };
    let err = normalize_distances(&d, 0.0).unwrap_err();
    assert!(matches!(err, Error::Numeric(_)));
    // Without a zero column minimum, alpha = 0 is legal.
    let d = DistanceMatrix {
        values: array![[1.0, 4.0], [2.0, 1.0]],
    };
    assert!(normalize_distances(&d, 0.0).is_ok());
}

#[test]
fn column_permutation_permutes_matches() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let values = Array2::from_shape_fn((8, 9), |_| rng.gen_range(0.0..5.0));
    let base = nearest_matches(&DistanceMatrix {
        values: values.clone(),
    });
    let perm: Vec<usize> = vec![3, 1, 4, 0, 8, 6, 2, 7, 5];
    let permuted = Array2::from_shape_fn((8, 9), |(i, j)| values[(i, perm[j])]);
    let got = nearest_matches(&DistanceMatrix { values: permuted });
    for (i, &m) in got.iter().enumerate() {
        assert_eq!(perm[m], base[i]);
    }
}

#[test]
fn smaller_alpha_never_selects_fewer_distinct_patches() {
    let distinct = |matches: &[usize]| {
        let mut seen: Vec<usize> = matches.to_vec();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    };
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = DistanceMatrix {
            values: Array2::from_shape_fn((20, 30), |_| rng.gen_range(0.0..1.0)),
        };
        let alphas = [5.0, 0.5, 0.05, 0.005, 0.0005];
        let counts: Vec<usize> = alphas
            .iter()
            .map(|&a| distinct(&nearest_matches(&normalize_distances(&d, a).unwrap())))
            .collect();
        for w in counts.windows(2) {
            assert!(
                w[1] >= w[0],
                "seed {seed}: distinct counts {counts:?} not monotone"
            );
        }
    }
}

#[test]
fn p_equal_one_blend_is_an_exact_gather() {
    let y = patch_set_from(array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], 1, 2);
    let out = blend_patches(&[2, 0, 1, 2], &y, 4);
    assert_eq!(out, array![[5.0, 6.0], [1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
}

#[test]
fn overlap_voting_averages_covering_windows() {
    // Patches A=[[1],[3]] and B=[[5],[7]], matches [A,B], 3 output
    // frames: frame 0 = 1, frame 1 = (3+5)/2, frame 2 = 7.
    let y = patch_set_from(array![[1.0, 3.0], [5.0, 7.0]], 2, 1);
    let out = blend_patches(&[0, 1], &y, 3);
    assert_eq!(out, array![[1.0], [4.0], [7.0]]);
}

#[test]
fn constant_tiles_blend_to_a_constant() {
    let y = patch_set_from(Array2::from_elem((4, 6), 2.5), 3, 2);
    let out = blend_patches(&[1, 1, 1, 1, 1], &y, 7);
    assert!(out.iter().all(|&v| v == 2.5));
}

#[test]
fn single_part_assembly_is_identity() {
    let skeleton = chain_skeleton(&["a", "b"]);
    let layout = FeatureLayout {
        joints: 2,
        contacts: 0,
    };
    let features = random_features(layout, 5, 7);
    let whole = partition_skeleton(&skeleton, &PartitionSpec::Whole).unwrap();
    let out = assemble_parts(
        &[(whole[0].clone(), features.data.clone())],
        &skeleton,
        1.0 / 30.0,
    )
    .unwrap();
    assert_eq!(out.data, features.data);
}

#[test]
fn overlap_joints_average_and_others_copy() {
    let skeleton = chain_skeleton(&["root", "mid", "tip"]);
    let layout = FeatureLayout {
        joints: 3,
        contacts: 0,
    };
    let lower = SkeletalPart {
        name: "lower".into(),
        joint_indices: vec![0, 1],
        include_root_motion: true,
    };
    let upper = SkeletalPart {
        name: "upper".into(),
        joint_indices: vec![1, 2],
        include_root_motion: false,
    };
    let lower_track = Array2::from_elem((2, lower.columns(&layout).len()), 2.0);
    let upper_track = Array2::from_elem((2, upper.columns(&layout).len()), 4.0);
    let out = assemble_parts(
        &[(lower, lower_track), (upper, upper_track)],
        &skeleton,
        1.0 / 30.0,
    )
    .unwrap();
    // Joint 0 only in lower, joint 1 in both, joint 2 only in upper.
    assert_eq!(out.data[(0, 0)], 2.0);
    assert_eq!(out.data[(0, 6)], 3.0);
    assert_eq!(out.data[(0, 12)], 4.0);
    // Root-motion columns come from the lower part alone.
    assert_eq!(out.data[(0, 18)], 2.0);
}

#[test]
fn frame_count_mismatch_is_rejected() {
    let skeleton = chain_skeleton(&["a"]);
    let layout = FeatureLayout {
        joints: 1,
        contacts: 0,
    };
    let whole = SkeletalPart {
        name: "whole".into(),
        joint_indices: vec![0],
        include_root_motion: true,
    };
    let a = Array2::zeros((2, layout.width()));
    let b = Array2::zeros((3, layout.width()));
    assert!(assemble_parts(
        &[(whole.clone(), a), (whole, b)],
        &skeleton,
        1.0 / 30.0
    )
    .is_err());
}

// --- run_stage ---------------------------------------------------------

fn whole_part(layout: &FeatureLayout) -> SkeletalPart {
    SkeletalPart {
        name: "whole".into(),
        joint_indices: (0..layout.joints).collect(),
        include_root_motion: true,
    }
}

#[test]
fn exemplar_is_a_fixed_point() {
    let layout = FeatureLayout {
        joints: 2,
        contacts: 1,
    };
    let exemplar = random_features(layout, 30, 11);
    let out = run_stage(
        &exemplar,
        std::slice::from_ref(&exemplar),
        &[whole_part(&layout)],
        11,
        0.01,
        5,
    )
    .unwrap();
    let max_err = (&out.data - &exemplar.data)
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(max_err < 1e-9, "max error {max_err}");
}

#[test]
fn zero_iterations_returns_the_guess() {
    let layout = FeatureLayout {
        joints: 1,
        contacts: 0,
    };
    let exemplar = random_features(layout, 20, 12);
    let guess = random_features(layout, 16, 13);
    let out = run_stage(
        &guess,
        std::slice::from_ref(&exemplar),
        &[whole_part(&layout)],
        11,
        0.01,
        0,
    )
    .unwrap();
    assert_eq!(out.data, guess.data);
}

#[test]
fn short_guess_is_rejected() {
    let layout = FeatureLayout {
        joints: 1,
        contacts: 0,
    };
    let exemplar = random_features(layout, 20, 14);
    let guess = random_features(layout, 5, 15);
    assert!(run_stage(
        &guess,
        std::slice::from_ref(&exemplar),
        &[whole_part(&layout)],
        11,
        0.01,
        1,
    )
    .is_err());
}

/// Independent reimplementation with plain loops: materialized windows,
/// double-loop distances, explicit normalization, voting, and assembly.
fn naive_run_stage(
    guess: &Array2<f64>,
    exemplars: &[Array2<f64>],
    parts: &[SkeletalPart],
    layout: &FeatureLayout,
    p: usize,
    alpha: f64,
    iterations: usize,
) -> Array2<f64> {
    let frames = guess.nrows();
    let mut current = guess.clone();
    for _ in 0..iterations {
        let mut sums = Array2::zeros((frames, layout.width()));
        let mut counts = vec![0.0f64; layout.width()];
        for part in parts {
            let cols = part.columns(layout);
            let d = cols.len();
            let slice = |m: &Array2<f64>| -> Vec<Vec<f64>> {
                (0..m.nrows())
                    .map(|t| cols.iter().map(|&c| m[(t, c)]).collect())
                    .collect()
            };
            let x = slice(&current);
            let mut y_patches: Vec<Vec<f64>> = Vec::new();
            for ex in exemplars {
                let rows = slice(ex);
                for t in 0..=rows.len() - p {
                    let mut patch = Vec::with_capacity(p * d);
                    for row in rows.iter().skip(t).take(p) {
                        patch.extend_from_slice(row);
                    }
                    y_patches.push(patch);
                }
            }
            let nx = frames - p + 1;
            let mut dist = vec![vec![0.0f64; y_patches.len()]; nx];
            for (i, row) in dist.iter_mut().enumerate() {
                let mut xp = Vec::with_capacity(p * d);
                for r in x.iter().skip(i).take(p) {
                    xp.extend_from_slice(r);
                }
                for (j, yp) in y_patches.iter().enumerate() {
                    row[j] = xp.iter().zip(yp).map(|(a, b)| (a - b) * (a - b)).sum();
                }
            }
            let mut colmin = vec![f64::INFINITY; y_patches.len()];
            for row in &dist {
                for (m, &v) in colmin.iter_mut().zip(row) {
                    *m = m.min(v);
                }
            }
            let matches: Vec<usize> = dist
                .iter()
                .map(|row| {
                    let mut best = 0;
                    let mut best_val = row[0] / (alpha + colmin[0]);
                    for (j, &v) in row.iter().enumerate().skip(1) {
                        let v = v / (alpha + colmin[j]);
                        if v < best_val {
                            best_val = v;
                            best = j;
                        }
                    }
                    best
                })
                .collect();
            for t in 0..frames {
                let w_lo = t.saturating_sub(p - 1);
                let w_hi = t.min(nx - 1);
                let n = (w_hi - w_lo + 1) as f64;
                for (k, &c) in cols.iter().enumerate() {
                    let mut acc = 0.0;
                    for w in w_lo..=w_hi {
                        acc += y_patches[matches[w]][(t - w) * d + k];
                    }
                    sums[(t, c)] += acc / n;
                }
            }
            for &c in &cols {
                counts[c] += 1.0;
            }
        }
        for t in 0..frames {
            for c in 0..layout.width() {
                sums[(t, c)] /= counts[c];
            }
        }
        current = sums;
    }
    current
}

#[test]
fn engine_matches_the_naive_reimplementation() {
    let layout = FeatureLayout {
        joints: 3,
        contacts: 1,
    };
    let parts = vec![
        SkeletalPart {
            name: "lower".into(),
            joint_indices: vec![0, 1],
            include_root_motion: true,
        },
        SkeletalPart {
            name: "upper".into(),
            joint_indices: vec![1, 2],
            include_root_motion: false,
        },
    ];
    for seed in 0..5u64 {
        let exemplars = [
            random_features(layout, 26, 100 + seed),
            random_features(layout, 19, 200 + seed),
        ];
        let guess = random_features(layout, 32, 300 + seed);
        let fast = run_stage(&guess, &exemplars, &parts, 7, 0.01, 3).unwrap();
        let naive = naive_run_stage(
            &guess.data,
            &[exemplars[0].data.clone(), exemplars[1].data.clone()],
            &parts,
            &layout,
            7,
            0.01,
            3,
        );
        let max_err = (&fast.data - &naive)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max_err < 1e-9, "seed {seed}: max deviation {max_err}");
    }
}

#[test]
fn output_stays_within_exemplar_envelopes() {
    let layout = FeatureLayout {
        joints: 2,
        contacts: 0,
    };
    let exemplar = random_features(layout, 40, 50);
    let guess = random_features(layout, 50, 51);
    let out = run_stage(
        &guess,
        std::slice::from_ref(&exemplar),
        &[whole_part(&layout)],
        11,
        0.01,
        5,
    )
    .unwrap();
    for c in 0..layout.width() {
        let col: Vec<f64> = exemplar.data.column(c).to_vec();
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for t in 0..out.frames() {
            let v = out.data[(t, c)];
            assert!(v >= lo - 1e-9 && v <= hi + 1e-9, "column {c} frame {t}");
        }
    }
}

#[test]
fn fused_matcher_agrees_with_composed_operations() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let d = 3;
        let p = 4;
        let x_track = Array2::from_shape_fn((20, d), |_| rng.gen_range(-1.0..1.0f64));
        let y_track = Array2::from_shape_fn((15, d), |_| rng.gen_range(-1.0..1.0f64));

        let xs = extract_patches(std::slice::from_ref(&x_track), p).unwrap();
        let ys = extract_patches(std::slice::from_ref(&y_track), p).unwrap();
        let composed = nearest_matches(
            &normalize_distances(&distance_matrix(&xs, &ys).unwrap(), 0.01).unwrap(),
        );

        let x = PatchIndex::new(vec![x_track.as_slice().unwrap()], d, p).unwrap();
        let y = PatchIndex::new(vec![y_track.as_slice().unwrap()], d, p).unwrap();
        let fused = matched_indices(
            &x,
            &y,
            &MatchOptions {
                alpha: 0.01,
                block_rows: 4,
                cache_bytes: 0,
            },
        )
        .unwrap();
        assert_eq!(fused, composed, "seed {seed}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distance_matrix_matches_brute_force(
        nx in 1usize..12,
        ny in 1usize..12,
        dim in 1usize..10,
        seed in 0u64..10_000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xr = Array2::from_shape_fn((nx, dim), |_| rng.gen_range(-2.0..2.0f64));
        let yr = Array2::from_shape_fn((ny, dim), |_| rng.gen_range(-2.0..2.0f64));
        let x = patch_set_from(xr.clone(), 1, dim);
        let y = patch_set_from(yr.clone(), 1, dim);
        let d = distance_matrix(&x, &y).unwrap();
        for i in 0..nx {
            for j in 0..ny {
                let expected: f64 = (0..dim)
                    .map(|k| (xr[(i, k)] - yr[(j, k)]).powi(2))
                    .sum();
                let got = d.values[(i, j)];
                prop_assert!((got - expected).abs() <= 1e-9 * expected.max(1.0));
                prop_assert!(got >= 0.0);
            }
        }
    }
}
