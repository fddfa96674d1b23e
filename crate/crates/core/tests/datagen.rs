use gta_core::codec::{parse_augmented_instruction, parse_cot, quantize_coord, serialize_cot};
use gta_core::datagen::{
    build_dataset, dataset_stats, extract_keyframes, perturb_annotation, project_motion, project_points, record_expert,
    sample_interaction_mode, write_stats_csv, DatagenError, InteractionMode, JitterConfig, KeyframeKind, ModeWeights,
    RecipeConfig, TickRecord, TrajectoryRecord,
};
use gta_core::geometry::{ImageBox, ImagePoint};
use gta_core::guide::{validate_prior, PriorKind, SpatialPrior};
use gta_core::sim::{ScenarioRegistry, TaskKind, TaskSpec};
use proptest::prelude::*;

fn registry() -> ScenarioRegistry {
    ScenarioRegistry::with_builtins()
}

fn expert_trajectories(n: u64) -> Vec<TrajectoryRecord> {
    let r = registry();
    let ids: Vec<String> = r.ids().map(String::from).collect();
    (0..n)
        .map(|s| record_expert(&r, &ids[s as usize % ids.len()], s, 200).unwrap())
        .collect()
}

/// Synthetic trajectory with the given apertures and gripper positions.
fn synthetic(start_aperture: f64, apertures: &[f64], positions: &[(f64, f64)]) -> TrajectoryRecord {
    let ticks = apertures
        .iter()
        .zip(positions.iter().skip(1))
        .enumerate()
        .map(|(i, (&a, &(x, y)))| TickRecord {
            tick: i as u64,
            state_digest: String::new(),
            action: [0.0, 0.0, 0.0],
            aperture: a,
            gripper: ImagePoint::new(x, y),
        })
        .collect();
    TrajectoryRecord {
        scenario: "synthetic".into(),
        seed: 0,
        task: TaskSpec {
            instruction: "pick the red block".into(),
            target_id: 0,
            goal_zone: ImageBox::new(0.1, 0.1, 0.2, 0.2),
            task_kind: TaskKind::Pick,
            destination_id: None,
            obstacle_id: None,
        },
        start_aperture,
        start_gripper: ImagePoint::new(positions[0].0, positions[0].1),
        ticks,
    }
}

fn still(n: usize) -> Vec<(f64, f64)> {
    vec![(0.5, 0.5); n + 1]
}

#[test]
fn place_rollouts_have_one_grasp_then_one_release() {
    let r = registry();
    for id in ["put_on_plate", "stack_blocks"] {
        for seed in 0..50 {
            let t = record_expert(&r, id, seed, 200).unwrap();
            let kinds: Vec<_> = extract_keyframes(&t).iter().map(|k| k.kind).collect();
            assert_eq!(kinds, vec![KeyframeKind::Grasp, KeyframeKind::Release], "{id} {seed}");
        }
    }
}

#[test]
fn keyframe_edge_cases() {
    assert!(extract_keyframes(&synthetic(1.0, &[1.0; 10], &still(10))).is_empty());
    let k = extract_keyframes(&synthetic(0.6, &[0.4, 0.2, 0.0], &still(3)));
    assert_eq!((k[0].tick, k[0].kind), (0, KeyframeKind::Grasp));
    // chatter inside the debounce window collapses to the first crossing
    let k = extract_keyframes(&synthetic(1.0, &[0.4, 0.6, 0.4, 0.4, 0.4, 0.6], &still(6)));
    let got: Vec<_> = k.iter().map(|k| (k.tick, k.kind)).collect();
    assert_eq!(got, vec![(0, KeyframeKind::Grasp), (5, KeyframeKind::Release)]);
}

#[test]
fn straight_approach_projects_to_evenly_spaced_points() {
    let pts: Vec<(f64, f64)> = (0..=8).map(|i| (0.2 + 0.05 * i as f64, 0.3)).collect();
    let t = synthetic(1.0, &[1.0; 8], &pts);
    let m = project_motion(&t, 0..=8, 5).unwrap();
    assert!(!m.degenerate);
    assert_eq!(m.affordance, ImagePoint::new(pts[8].0, pts[8].1));
    for (i, p) in m.path.iter().enumerate() {
        assert!((p.x - (0.2 + 0.1 * i as f64)).abs() < 1e-12);
        assert_eq!(p.y, 0.3);
    }
}

#[test]
fn appendix_endpoint_quantizes_to_the_golden_affordance() {
    let pts = [(0.5315, 0.3205), (0.5115, 0.3325), (0.4805, 0.3045), (0.4495, 0.3125), (0.4375, 0.3475)];
    let m = project_points(&pts.map(|(x, y)| ImagePoint::new(x, y)), 5).unwrap();
    let q = (quantize_coord(m.affordance.x).unwrap().get(), quantize_coord(m.affordance.y).unwrap().get());
    assert_eq!(q, (437, 347));
}

#[test]
fn projection_errors_and_degenerate_windows() {
    let t = synthetic(1.0, &[1.0; 4], &still(4));
    assert!(matches!(project_motion(&t, 2..=2, 5), Err(DatagenError::WindowTooShort(1))));
    assert!(matches!(project_motion(&t, 0..=9, 5), Err(DatagenError::WindowOutOfRange { .. })));
    let m = project_motion(&t, 0..=4, 5).unwrap();
    assert!(m.degenerate);
    assert_eq!(m.path, vec![ImagePoint::new(0.5, 0.5); 5]);
}

#[test]
fn trajectory_validation() {
    let mut t = synthetic(1.0, &[1.0; 3], &still(3));
    assert!(t.validate().is_ok());
    t.ticks[2].tick = 5;
    assert!(matches!(t.validate(), Err(DatagenError::NonContiguous { previous: 1, found: 5 })));
    t.ticks.clear();
    assert!(matches!(t.validate(), Err(DatagenError::EmptyTrajectory)));
}

fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

#[test]
fn jitter_std_matches_sigma() {
    let sigma = 0.02;
    let noise = JitterConfig {
        point: sigma,
        bbox: sigma,
        trace: sigma,
    };
    let prior = SpatialPrior::point(0.5, 0.5);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for seed in 0..10_000 {
        let SpatialPrior::Point { point } = perturb_annotation(&prior, &noise, seed) else {
            panic!("kind changed");
        };
        xs.push(point.x);
        ys.push(point.y);
    }
    for s in [sample_std(&xs), sample_std(&ys)] {
        assert!((s / sigma - 1.0).abs() < 0.05, "std {s}");
    }
}

#[test]
fn jitter_clamps_and_reorders() {
    let big = JitterConfig {
        point: 0.5,
        bbox: 0.5,
        trace: 0.5,
    };
    for seed in 0..500 {
        let SpatialPrior::Point { point } = perturb_annotation(&SpatialPrior::point(0.999, 0.999), &big, seed) else {
            panic!()
        };
        assert!(point.in_unit_square());
        let SpatialPrior::Box { bbox } =
            perturb_annotation(&SpatialPrior::bbox(ImageBox::new(0.4, 0.4, 0.45, 0.45)), &big, seed)
        else {
            panic!()
        };
        assert!(bbox.x_min <= bbox.x_max && bbox.y_min <= bbox.y_max && bbox.in_unit_square());
    }
    let p = SpatialPrior::trace(vec![ImagePoint::new(0.1, 0.2), ImagePoint::new(0.3, 0.4)]);
    assert_eq!(perturb_annotation(&p, &big, 7), perturb_annotation(&p, &big, 7));
    assert_ne!(perturb_annotation(&p, &big, 7), perturb_annotation(&p, &big, 8));
}

fn arb_prior() -> impl Strategy<Value = SpatialPrior> {
    let pt = (0.0..=1.0f64, 0.0..=1.0f64).prop_map(|(x, y)| ImagePoint::new(x, y));
    prop_oneof![
        pt.clone().prop_map(|p| SpatialPrior::Point { point: p }),
        (pt.clone(), pt.clone()).prop_map(|(a, b)| SpatialPrior::bbox(ImageBox::from_corners(a, b))),
        prop::collection::vec(pt, 2..8).prop_map(SpatialPrior::trace),
    ]
}

proptest! {
    #[test]
    fn zero_sigma_is_identity(p in arb_prior(), seed in any::<u64>()) {
        let zero = JitterConfig { point: 0.0, bbox: 0.0, trace: 0.0 };
        prop_assert_eq!(perturb_annotation(&p, &zero, seed), p);
    }

    #[test]
    fn projected_path_ends_at_affordance(
        pts in prop::collection::vec((0.0..=1.0f64, 0.0..=1.0f64), 2..20),
        m in 2usize..9,
    ) {
        let pts: Vec<ImagePoint> = pts.into_iter().map(|(x, y)| ImagePoint::new(x, y)).collect();
        let proj = project_points(&pts, m).unwrap();
        prop_assert_eq!(proj.path.len(), m);
        prop_assert_eq!(*proj.path.last().unwrap(), proj.affordance);
        prop_assert_eq!(proj.affordance, *pts.last().unwrap());
    }
}

/// Marginals worked out by hand from the recipe table: half the draws skip
/// augmentation, the other half sample the table, which itself includes none.
const EXPECTED_MARGINALS: [(InteractionMode, f64); 6] = [
    (InteractionMode::None, 0.70),
    (InteractionMode::PickBox, 0.10),
    (InteractionMode::PlaceBox, 0.06),
    (InteractionMode::PickAndPlace, 0.06),
    (InteractionMode::Affordance2d, 0.05),
    (InteractionMode::GripperPath2d, 0.03),
];

fn frequencies(modes: impl Iterator<Item = InteractionMode>) -> (usize, std::collections::BTreeMap<InteractionMode, usize>) {
    let mut hist = std::collections::BTreeMap::new();
    let mut n = 0;
    for m in modes {
        *hist.entry(m).or_insert(0) += 1;
        n += 1;
    }
    (n, hist)
}

#[test]
fn recipe_marginals_match_the_table() {
    let recipe = RecipeConfig::default();
    for ((m, want), got) in EXPECTED_MARGINALS.iter().zip(recipe.marginals()) {
        assert!((got - want).abs() < 1e-12, "{m:?}");
    }
    let (n, hist) = frequencies((0..100_000u64).map(|s| sample_interaction_mode(&recipe, s)));
    for (m, want) in EXPECTED_MARGINALS {
        let got = hist.get(&m).copied().unwrap_or(0) as f64 / n as f64;
        assert!((got - want).abs() <= 0.01, "{m:?}: {got} vs {want}");
    }
}

#[test]
fn disabled_recipe_never_augments() {
    let recipe = RecipeConfig {
        enable_probability: 0.0,
        ..Default::default()
    };
    assert!((0..10_000).all(|s| sample_interaction_mode(&recipe, s) == InteractionMode::None));
}

#[test]
fn recipe_validation() {
    assert!(RecipeConfig::default().validate().is_ok());
    let skewed = RecipeConfig {
        weights: ModeWeights {
            none: 0.5,
            ..Default::default()
        },
        ..Default::default()
    };
    assert!(skewed.validate().is_err());
    let negative = RecipeConfig {
        jitter: JitterConfig {
            point: -0.1,
            ..Default::default()
        },
        ..Default::default()
    };
    assert!(negative.validate().is_err());
    let toml_text = "enable_probability = 0.25\n[weights]\nnone = 1.0\npick_box = 0.0\nplace_box = 0.0\npick_and_place = 0.0\naffordance_2d = 0.0\ngripper_path_2d = 0.0\n";
    let parsed: RecipeConfig = toml::from_str(toml_text).unwrap();
    assert!(parsed.validate().is_ok());
    assert_eq!(parsed.jitter, JitterConfig::default());
}

#[test]
fn sample_count_is_the_sum_of_whole_chunks() {
    let trajs = expert_trajectories(100);
    let d = build_dataset(&registry(), &trajs, &RecipeConfig::default(), 3, 8).unwrap();
    assert!(d.skipped.is_empty(), "{:?}", d.skipped);
    let want: usize = trajs.iter().map(|t| t.len() / 8).sum();
    assert_eq!(d.samples.len(), want);
    for s in &d.samples {
        assert_eq!(s.chunk.steps.len(), 8);
        assert_eq!(parse_cot(&s.cot_text).unwrap(), s.cot);
        assert_eq!(serialize_cot(&s.cot).unwrap(), s.cot_text);
        assert_eq!(s.cot.gripper_path.last(), s.cot.affordance.as_ref());
    }
}

#[test]
fn instructions_carry_the_fragments_of_their_mode() {
    let trajs = expert_trajectories(300);
    let d = build_dataset(&registry(), &trajs, &RecipeConfig::default(), 11, 1).unwrap();
    let mut seen = std::collections::BTreeSet::new();
    for s in &d.samples {
        let (text, priors) = parse_augmented_instruction(&s.instruction).unwrap();
        assert_eq!(text, trajs[s.trajectory].task.instruction);
        for p in &priors {
            validate_prior(p).unwrap();
        }
        let kinds: Vec<PriorKind> = priors.iter().map(SpatialPrior::kind).collect();
        let want = match s.mode {
            InteractionMode::None => vec![],
            InteractionMode::PickBox | InteractionMode::PlaceBox => vec![PriorKind::Box],
            InteractionMode::PickAndPlace => vec![PriorKind::Box, PriorKind::Box],
            InteractionMode::Affordance2d => vec![PriorKind::Point],
            InteractionMode::GripperPath2d => vec![PriorKind::Trace],
        };
        assert_eq!(kinds, want, "{}", s.instruction);
        seen.insert(s.mode);
    }
    assert_eq!(seen.len(), 6);
}

#[test]
fn dataset_mode_frequencies_match_marginals() {
    let trajs = expert_trajectories(5200);
    let d = build_dataset(&registry(), &trajs, &RecipeConfig::default(), 5, 1).unwrap();
    assert!(d.samples.len() >= 100_000, "{}", d.samples.len());
    let (n, hist) = frequencies(d.samples.iter().map(|s| s.mode));
    for (m, want) in EXPECTED_MARGINALS {
        let got = hist.get(&m).copied().unwrap_or(0) as f64 / n as f64;
        assert!((got - want).abs() <= 0.01, "{m:?}: {got} vs {want}");
    }
}

#[test]
fn dataset_is_deterministic_and_shard_order_independent() {
    let r = registry();
    let recipe = RecipeConfig::default();
    let trajs = expert_trajectories(60);
    let a = build_dataset(&r, &trajs, &recipe, 9, 4).unwrap();
    assert_eq!(a, build_dataset(&r, &trajs, &recipe, 9, 4).unwrap());

    let key = |s: &gta_core::datagen::AnnotatedSample| serde_json::to_string(&(&s.scenario, s.seed, s.tick, &s.instruction, &s.cot_text, &s.chunk)).unwrap();
    let mut forward: Vec<String> = a.samples.iter().map(key).collect();
    let mut shards: Vec<String> = Vec::new();
    for chunk in trajs.chunks(17).rev() {
        let mut rev = chunk.to_vec();
        rev.reverse();
        shards.extend(build_dataset(&r, &rev, &recipe, 9, 4).unwrap().samples.iter().map(key));
    }
    forward.sort();
    shards.sort();
    assert_eq!(forward, shards);
}

#[test]
fn broken_trajectories_are_skipped_with_a_reason() {
    let r = registry();
    let mut trajs = expert_trajectories(4);
    trajs[1].ticks[3].state_digest = "0".repeat(64);
    trajs[2].ticks[5].tick = 40;
    let d = build_dataset(&r, &trajs, &RecipeConfig::default(), 0, 2).unwrap();
    let skipped: Vec<usize> = d.skipped.iter().map(|s| s.trajectory).collect();
    assert_eq!(skipped, vec![1, 2]);
    assert!(d.skipped[0].reason.contains("tick 3"));
    assert!(d.samples.iter().all(|s| s.trajectory == 0 || s.trajectory == 3));
    assert!(matches!(
        build_dataset(&r, &[], &RecipeConfig::default(), 0, 2),
        Err(DatagenError::NoTrajectories)
    ));
}

#[test]
fn stats_csv_reports_every_mode() {
    let trajs = expert_trajectories(40);
    let recipe = RecipeConfig::default();
    let d = build_dataset(&registry(), &trajs, &recipe, 1, 1).unwrap();
    let stats = dataset_stats(&d.samples, &recipe);
    assert_eq!(stats.mode_counts.iter().sum::<usize>(), d.samples.len());
    let mut buf = Vec::new();
    write_stats_csv(&stats, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("metric,mode,value\n"));
    for m in InteractionMode::ALL {
        assert!(text.contains(&format!("expected,{},", m.name())));
    }
    assert!(text.contains("expected,none,0.700000"));
}
