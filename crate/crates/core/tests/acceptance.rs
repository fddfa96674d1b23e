//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Built with `harness = false` so the lines are printed on every
//! `cargo test`. Exits non-zero when a criterion outside
//! [`KNOWN_FAILING`] fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use gta_core::bench::{
    failure_recovery, run_suite, run_suite_with_traces, Modality, PriorSource, Report, ShiftCategory, SuiteConfig,
};
use gta_core::codec::{parse_cot, parse_cot_bytes, quantize_coord, serialize_cot, ObjectRef, StructuredCot};
use gta_core::datagen::{sample_interaction_mode, InteractionMode, RecipeConfig};
use gta_core::demos::{expert_chunk, train_policy, PolicyRecipe};
use gta_core::flow::{
    featurize, fm_loss, fm_loss_and_grad, sample_chunk, train, ActionChunk, FlowError, FlowModel, FlowSample,
    Optimizer, TrainConfig, VectorField,
};
use gta_core::geometry::{ImageBox, ImagePoint};
use gta_core::guide::{GuidanceEvent, GuidanceSource, SpatialPrior};
use gta_core::reasoner::{encode_memory, plan_cot, Ablation, OracleReasoner};
use gta_core::runtime::{ActionContext, ActionSource, Episode, FlowPolicy, RuntimeConfig, ScriptedGuidance};
use gta_core::sim::{observe, reset, PerturbationConfig, ScenarioRegistry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Criteria that fail on this simulator; see the README.
const KNOWN_FAILING: &[u8] = &[9];

type Outcome = (bool, String);

struct Line {
    id: u8,
    pass: bool,
}

fn check(id: u8, name: &str, lines: &mut Vec<Line>, f: impl FnOnce() -> Outcome) {
    let start = Instant::now();
    let (pass, detail) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(o) => o,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("[{verdict}] {id:>2} {name}: {detail} ({:.1} s)", start.elapsed().as_secs_f64());
    lines.push(Line { id, pass });
}

fn bin(q: u32) -> f64 {
    (q as f64 + 0.5) / 1000.0
}

fn green_block() -> StructuredCot {
    let block = ObjectRef::new("green block", ImageBox::new(bin(394), bin(335), bin(472), bin(445)));
    StructuredCot {
        task: "stack the green block on the yellow block".into(),
        subtasks: vec![
            "grasp the green block".into(),
            "place the green block on the yellow block".into(),
        ],
        current: "grasp the green block".into(),
        objects: vec![block.clone()],
        pick: Some(block),
        affordance: Some(ImagePoint::new(bin(437), bin(347))),
        gripper_path: [(531, 320), (511, 332), (480, 304), (449, 312), (437, 347)]
            .iter()
            .map(|&(x, y)| ImagePoint::new(bin(x), bin(y)))
            .collect(),
    }
}

fn c1_golden() -> Outcome {
    let start = Instant::now();
    let golden = include_str!("golden/green_block.cot");
    let text = serialize_cot(&green_block()).unwrap();
    let identical = text == golden;
    let lossless = parse_cot(golden).map(|c| c == green_block()).unwrap_or(false);
    let secs = start.elapsed().as_secs_f64();
    (
        identical && lossless && secs < 1.0,
        format!("byte-identical {identical}, lossless re-parse {lossless}, {secs:.4} s < 1 s"),
    )
}

const WORDS: &[&str] = &["red", "green", "block", "cube", "plate", "the", "on", "grasp", "place", "cup", "a1"];

fn random_phrase(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(1..5);
    (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

fn random_point(rng: &mut ChaCha8Rng) -> ImagePoint {
    ImagePoint::new(rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0))
}

fn random_box(rng: &mut ChaCha8Rng) -> ImageBox {
    // corners in distinct bins on both axes, anywhere inside them
    let (x0, y0) = (rng.random_range(0..998u32), rng.random_range(0..998u32));
    let (x1, y1) = (rng.random_range(x0 + 1..1000), rng.random_range(y0 + 1..1000));
    let at = |q: u32, rng: &mut ChaCha8Rng| (q as f64 + rng.random::<f64>()) / 1000.0;
    ImageBox::new(at(x0, rng), at(y0, rng), at(x1, rng), at(y1, rng))
}

fn random_cot(rng: &mut ChaCha8Rng) -> StructuredCot {
    let subtasks: Vec<String> = (0..rng.random_range(1..4)).map(|_| random_phrase(rng)).collect();
    let objects: Vec<ObjectRef> = (0..rng.random_range(0..4))
        .map(|_| ObjectRef::new(random_phrase(rng), random_box(rng)))
        .collect();
    let pick = (!objects.is_empty() && rng.random::<bool>()).then(|| objects[rng.random_range(0..objects.len())].clone());
    StructuredCot {
        task: random_phrase(rng),
        current: subtasks[rng.random_range(0..subtasks.len())].clone(),
        subtasks,
        objects,
        pick,
        affordance: rng.random::<bool>().then(|| random_point(rng)),
        gripper_path: if rng.random::<bool>() {
            (0..5).map(|_| random_point(rng)).collect()
        } else {
            vec![]
        },
    }
}

fn c2_fuzz() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut exact = 0;
    for _ in 0..10_000 {
        let cot = random_cot(&mut rng);
        let text = serialize_cot(&cot).unwrap();
        let back = parse_cot(&text).unwrap();
        if back == cot.snapped().unwrap() && serialize_cot(&back).unwrap() == text {
            exact += 1;
        }
    }
    let mut panics = 0;
    for _ in 0..100_000 {
        let len = rng.random_range(0..256);
        let bytes: Vec<u8> = (0..len).map(|_| rng.random()).collect();
        if catch_unwind(|| parse_cot_bytes(&bytes)).is_err() {
            panics += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (
        exact == 10_000 && panics == 0 && secs < 60.0,
        format!("{exact}/10000 exact round trips, {panics} parser panics on 100000 inputs, {secs:.2} s < 60 s"),
    )
}

fn c3_quantization() -> Outcome {
    let ends = (quantize_coord(0.0).unwrap().get(), quantize_coord(1.0).unwrap().get());
    let mut seen = [false; 1000];
    let mut monotone = true;
    let mut prev = 0;
    for i in 0..=10_000u32 {
        let q = quantize_coord(i as f64 / 10_000.0).unwrap().get();
        monotone &= q >= prev;
        prev = q;
        seen[q as usize] = true;
    }
    let covered = seen.iter().filter(|&&s| s).count();
    (
        ends == (0, 999) && monotone && covered == 1000,
        format!("0->{} 1->{}, monotone {monotone}, {covered}/1000 bins hit", ends.0, ends.1),
    )
}

fn c4_gradient() -> Outcome {
    const EPS: f64 = 1e-5;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut params = 0;
    for instance in 0..10u64 {
        let (k, cond) = (rng.random_range(1..9), rng.random_range(1..45));
        let model = FlowModel::new(k, cond, instance);
        let batch: Vec<FlowSample> = (0..3)
            .map(|_| FlowSample {
                chunk: (0..3 * k).map(|_| rng.random_range(-1.0..1.0)).collect(),
                cond: (0..cond).map(|_| rng.random_range(-1.0..1.0)).collect(),
            })
            .collect();
        let (_, grad) = fm_loss_and_grad(&model, &batch, instance).unwrap();
        let mut probe = model.clone();
        for i in 0..model.params.len() {
            let p = model.params[i];
            probe.params[i] = p + EPS;
            let up = fm_loss(&probe, &batch, instance).unwrap();
            probe.params[i] = p - EPS;
            let down = fm_loss(&probe, &batch, instance).unwrap();
            probe.params[i] = p;
            let numeric = (up - down) / (2.0 * EPS);
            let denom = grad[i].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((grad[i] - numeric).abs() / denom);
        }
        params += model.params.len();
    }
    let secs = start.elapsed().as_secs_f64();
    (
        worst < 1e-4 && secs < 60.0,
        format!("max relative error {worst:.2e} < 1e-4 over {params} parameters, {secs:.2} s < 60 s"),
    )
}

struct Constant(Vec<f64>);

impl VectorField for Constant {
    fn chunk_len(&self) -> usize {
        self.0.len() / 3
    }
    fn cond_dim(&self) -> usize {
        1
    }
    fn velocity(&self, _: &[f64], _: f64, _: &[f64]) -> Vec<f64> {
        self.0.clone()
    }
}

fn noise(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn c5_sampling() -> Outcome {
    let mut zero = FlowModel::new(8, 4, 1);
    zero.zero_output();
    let zero_exact = (0..20).all(|seed| {
        let want: Vec<f64> = noise(seed, 24).iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        sample_chunk(&zero, &[0.1; 4], 10, seed).unwrap().flatten() == want
    });
    let u: Vec<f64> = (0..24).map(|i| (i as f64 - 12.0) / 40.0).collect();
    let mut const_err: f64 = 0.0;
    for steps in [1, 2, 7, 10, 64] {
        let got = sample_chunk(&Constant(u.clone()), &[0.0], steps, 5).unwrap().flatten();
        for ((g, x), u) in got.iter().zip(noise(5, 24)).zip(&u) {
            const_err = const_err.max((g - (x + u).clamp(-1.0, 1.0)).abs());
        }
    }

    // one expert chunk from the single-target scene, learned in isolation
    let r = ScenarioRegistry::with_builtins();
    let quiet = PerturbationConfig::none();
    let (state, task) = reset(&r, 0, "single_target", &quiet).unwrap();
    let obs = observe(&state, &quiet, 0);
    let memory = encode_memory(&plan_cot(&obs, &task.instruction, None, task.task_kind).unwrap().cot, 0);
    let target = expert_chunk(&state, &task, &memory, 8).flatten();
    let cond = featurize(&obs, &memory).0;
    let data = vec![
        FlowSample {
            chunk: target.clone(),
            cond: cond.clone(),
        };
        64
    ];
    let cfg = TrainConfig {
        steps: 1500,
        learning_rate: 2e-3,
        batch_size: 64,
        seed: 3,
        optimizer: Optimizer::adam(),
        ..Default::default()
    };
    let model = train(&data, 8, &cfg).unwrap().model;
    let mut mean = vec![0.0; target.len()];
    for seed in 0..100 {
        for (m, v) in mean.iter_mut().zip(sample_chunk(&model, &cond, 10, seed).unwrap().flatten()) {
            *m += v / 100.0;
        }
    }
    let linf = mean.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    (
        zero_exact && const_err < 1e-12 && linf <= 0.1,
        format!("zero field exact {zero_exact}, constant field error {const_err:.1e}, mean endpoint L-inf {linf:.4} <= 0.1"),
    )
}

fn policy(model: FlowModel) -> Arc<dyn ActionSource> {
    Arc::new(FlowPolicy::new(model))
}

fn c6_in_distribution(r: &ScenarioRegistry, reports: &mut Vec<Report>) -> Outcome {
    let recipe = PolicyRecipe::single_target();
    let start = Instant::now();
    let (out, samples) = train_policy(r, &recipe).unwrap();
    let train_secs = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let report = run_suite(r, policy(out.model), &[SuiteConfig::new(ShiftCategory::None, 200)], "single").unwrap();
    let eval_secs = start.elapsed().as_secs_f64();
    let cell = &report.cells[0];
    let rate = cell.success_rate();
    let line = format!(
        "{}/200 unguided on held-out seeds ({:.1}% >= 90%), {} episodes / {samples} samples, \
         train {train_secs:.1} s <= 600 s, eval {eval_secs:.1} s <= 120 s",
        cell.successes,
        rate * 100.0,
        recipe.demos.episodes,
    );
    let pass = rate >= 0.9 && recipe.demos.episodes >= 500 && train_secs <= 600.0 && eval_secs <= 120.0;
    reports.push(report);
    (pass, line)
}

const DISTRACTORS: [ShiftCategory; 2] = [ShiftCategory::DistractorColor, ShiftCategory::DistractorPosition];

fn c7_guidance(r: &ScenarioRegistry, p: &Arc<dyn ActionSource>, reports: &mut Vec<Report>) -> Outcome {
    let cells: Vec<SuiteConfig> = DISTRACTORS
        .iter()
        .flat_map(|&s| [Modality::None, Modality::Point].map(|m| SuiteConfig::new(s, 200).with_modality(m)))
        .collect();
    let report = run_suite(r, p.clone(), &cells, "multi").unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for pair in report.cells.chunks(2) {
        let (none, point) = (&pair[0], &pair[1]);
        let g = none.grounding_rate();
        let gain = (point.success_rate() - none.success_rate()) * 100.0;
        pass &= (g - 0.5).abs() <= 0.05 && point.grounding_correct == point.episodes && gain >= 30.0;
        parts.push(format!(
            "{}: grounding {:.1}% unguided / {:.1}% point, success {:.1}% -> {:.1}% (+{gain:.1} pp)",
            none.suite.shift.name(),
            g * 100.0,
            point.grounding_rate() * 100.0,
            none.success_rate() * 100.0,
            point.success_rate() * 100.0,
        ));
    }
    reports.push(report);
    (pass, parts.join("; "))
}

fn c8_trace(r: &ScenarioRegistry, p: &Arc<dyn ActionSource>, reports: &mut Vec<Report>) -> Outcome {
    let cells = [Modality::None, Modality::Trace].map(|m| SuiteConfig::new(ShiftCategory::Obstacle, 200).with_modality(m));
    let report = run_suite(r, p.clone(), &cells, "multi").unwrap();
    let (none, trace) = (&report.cells[0], &report.cells[1]);
    let line = format!(
        "obstacle success {}/200 unguided vs {}/200 trace (contacts {} vs {})",
        none.successes, trace.successes, none.obstacle_contacts, trace.obstacle_contacts
    );
    let pass = trace.successes > none.successes;
    reports.push(report);
    (pass, line)
}

fn c9_ablation(r: &ScenarioRegistry, p: &Arc<dyn ActionSource>, reports: &mut Vec<Report>) -> Outcome {
    let variants = [
        Ablation::NONE,
        Ablation { task: true, ..Ablation::NONE },
        Ablation { vision: true, ..Ablation::NONE },
        Ablation { robot: true, ..Ablation::NONE },
    ];
    let cells: Vec<SuiteConfig> = DISTRACTORS
        .iter()
        .flat_map(|&s| variants.map(|a| SuiteConfig::new(s, 200).with_ablation(a)))
        .collect();
    let report = run_suite(r, p.clone(), &cells, "multi").unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for group in report.cells.chunks(4) {
        let [full, task, vision, robot] = [&group[0], &group[1], &group[2], &group[3]];
        let ordered = vision.successes <= task.successes
            && task.successes <= robot.successes
            && robot.successes <= full.successes;
        let separated = full.success_interval().0 > vision.success_interval().1;
        pass &= ordered && separated;
        parts.push(format!(
            "{}: full {} / -robot {} / -task {} / -vision {} of 200, ordered {ordered}, full vs -vision 90% intervals disjoint {separated}",
            full.suite.shift.name(),
            full.successes,
            robot.successes,
            task.successes,
            vision.successes,
        ));
    }
    reports.push(report);
    (pass, parts.join("; "))
}

fn c10_recipe() -> Outcome {
    // enable 0.5 times the mode table, plus the disabled half on `none`
    let expected = [0.70, 0.10, 0.06, 0.06, 0.05, 0.03];
    let recipe = RecipeConfig::default();
    let analytic_ok = recipe.marginals().iter().zip(&expected).all(|(a, b)| (a - b).abs() < 1e-12);
    let mut counts = [0usize; 6];
    for seed in 0..100_000u64 {
        let mode = sample_interaction_mode(&recipe, seed);
        counts[InteractionMode::ALL.iter().position(|&m| m == mode).unwrap()] += 1;
    }
    let freqs = counts.map(|c| c as f64 / 100_000.0);
    let worst = freqs.iter().zip(&expected).map(|(f, e)| (f - e).abs()).fold(0.0, f64::max);
    let shown: Vec<String> = InteractionMode::ALL
        .iter()
        .zip(&freqs)
        .map(|(m, f)| format!("{} {f:.4}", m.name()))
        .collect();
    (
        analytic_ok && worst <= 0.01,
        format!("{}, max deviation {worst:.4} <= 0.01", shown.join(", ")),
    )
}

/// Keeps the gripper open and still, so episodes run to the tick limit.
struct Idle;

impl ActionSource for Idle {
    fn chunk(&self, _: &ActionContext<'_>) -> Result<ActionChunk, FlowError> {
        Ok(ActionChunk {
            steps: vec![[0.0, 0.0, 1.0]; 8],
        })
    }
}

fn episode(source: Arc<dyn ActionSource>, config: RuntimeConfig, scenario: &str, seed: u64) -> Episode {
    let quiet = PerturbationConfig::none();
    let r = ScenarioRegistry::with_builtins();
    Episode::new(&r, scenario, &quiet, Arc::new(OracleReasoner), source, config, seed).unwrap()
}

fn click(x: f64, y: f64, at: u64) -> ScriptedGuidance {
    ScriptedGuidance(vec![GuidanceEvent::mid_episode(SpatialPrior::point(x, y), GuidanceSource::User, at)])
}

fn c11_async(r: &ScenarioRegistry, p: &Arc<dyn ActionSource>, reports: &[Report]) -> Outcome {
    // byte determinism: a guided bench cell and a mid-episode click, each run twice
    let cell = [SuiteConfig::new(ShiftCategory::DistractorColor, 20).with_modality(Modality::Point)];
    let dump = || -> String {
        let (_, traces) = run_suite_with_traces(r, p.clone(), &cell, "multi").unwrap();
        traces[0].iter().map(|t| t.to_jsonl()).collect()
    };
    let clicked = || {
        let mut ep = episode(p.clone(), RuntimeConfig::default(), "color_distractor", 3);
        ep.run(&mut click(0.4, 0.4, 7)).unwrap();
        ep.finish().to_jsonl()
    };
    let deterministic = dump() == dump() && clicked() == clicked();

    // staleness over every evaluated episode plus a sweep of periods
    let mut worst_margin = i64::MIN;
    let mut stale_ok = true;
    for c in reports.iter().flat_map(|r| &r.cells) {
        stale_ok &= c.max_staleness <= c.suite.runtime.slow_period;
        worst_margin = worst_margin.max(c.max_staleness as i64 - c.suite.runtime.slow_period as i64);
    }
    for period in 1..=7 {
        let config = RuntimeConfig {
            slow_period: period,
            max_fast_ticks: 40,
            ..Default::default()
        };
        let mut ep = episode(Arc::new(Idle), config, "single_target", period);
        ep.run(&mut gta_core::runtime::NoGuidance).unwrap();
        let rep = gta_core::runtime::staleness_report(&ep.finish());
        stale_ok &= rep.max <= period;
    }

    // a click at every tick of a 100-tick episode lands on the next boundary
    let period = 5;
    let config = RuntimeConfig {
        slow_period: period,
        max_fast_ticks: 100,
        ..Default::default()
    };
    let mut formula_ok = true;
    for t in 0..100u64 {
        let (x, y) = (0.2 + 0.006 * t as f64, 0.25);
        let mut ep = episode(Arc::new(Idle), config.clone(), "two_red_blocks", 1);
        ep.run(&mut click(x, y, t)).unwrap();
        let trace = ep.finish();
        let expect = period * (t + 1).div_ceil(period);
        formula_ok &= trace.guidance().next().map(|g| g.ack.effective_tick) == Some(expect);
        let want = gta_core::codec::snap_point(&ImagePoint::new(x, y)).unwrap();
        for s in trace.slow() {
            let applied = parse_cot(&s.cot).unwrap().affordance == Some(want);
            formula_ok &= applied == (s.tick >= expect);
        }
    }
    let cells: usize = reports.iter().map(|r| r.cells.len()).sum();
    (
        deterministic && stale_ok && formula_ok,
        format!(
            "byte-identical reruns {deterministic}, staleness <= period on {cells} cells and periods 1..=7 {stale_ok} \
             (worst staleness minus period {worst_margin}), effective tick p*ceil((t+1)/p) for t in 0..100 {formula_ok}"
        ),
    )
}

fn c12_recovery(r: &ScenarioRegistry, p: &Arc<dyn ActionSource>, guidance: &Report) -> Outcome {
    let unguided = Report {
        cells: guidance.cells.iter().filter(|c| c.suite.modality == Modality::None).cloned().collect(),
        ..guidance.clone()
    };
    let rows = failure_recovery(r, p.clone(), &unguided, 200, PriorSource::Oracle).unwrap();
    let failures: usize = rows.iter().map(|r| r.grounding_failures).sum();
    let recovered: usize = rows.iter().map(|r| r.grounding_recovered).sum();
    let all: usize = rows.iter().map(|r| r.rerun).sum();
    let all_recovered: usize = rows.iter().map(|r| r.recovered).sum();
    let rate = recovered as f64 / failures.max(1) as f64;
    (
        failures > 0 && rate >= 0.5,
        format!(
            "{recovered}/{failures} grounding failures recovered ({:.1}% >= 50%), {all_recovered}/{all} failures overall",
            rate * 100.0
        ),
    )
}

fn main() {
    let mut lines = Vec::new();
    let r = ScenarioRegistry::with_builtins();
    let mut reports = Vec::new();
    check(1, "codec golden example", &mut lines, c1_golden);
    check(2, "codec round trip and parser fuzz", &mut lines, c2_fuzz);
    check(3, "quantization", &mut lines, c3_quantization);
    check(4, "flow head gradient check", &mut lines, c4_gradient);
    check(5, "flow head sampling oracles", &mut lines, c5_sampling);
    check(6, "in-distribution success", &mut lines, || c6_in_distribution(&r, &mut reports));

    let start = Instant::now();
    let (out, samples) = train_policy(&r, &PolicyRecipe::multi_scenario()).expect("multi-scenario training");
    println!(
        "       multi-scenario head: {samples} samples, final loss {:.4}, {:.1} s",
        out.curve.last().map_or(f64::NAN, |c| c.loss),
        start.elapsed().as_secs_f64()
    );
    let multi = policy(out.model);
    let mut guidance = None;
    check(7, "guidance efficacy on distractor suites", &mut lines, || {
        let o = c7_guidance(&r, &multi, &mut reports);
        guidance = reports.last().cloned();
        o
    });
    check(8, "trace guidance on obstacle suite", &mut lines, || c8_trace(&r, &multi, &mut reports));
    check(9, "CoT ablation ordering", &mut lines, || c9_ablation(&r, &multi, &mut reports));
    check(10, "recipe statistics", &mut lines, c10_recipe);
    check(11, "async contract", &mut lines, || c11_async(&r, &multi, &reports));
    check(12, "failure recovery", &mut lines, || match &guidance {
        Some(g) => c12_recovery(&r, &multi, g),
        None => (false, "no guidance report to recover from".into()),
    });

    let passed = lines.iter().filter(|l| l.pass).count();
    let unexpected: Vec<u8> = lines.iter().filter(|l| !l.pass && !KNOWN_FAILING.contains(&l.id)).map(|l| l.id).collect();
    let known: Vec<u8> = lines.iter().filter(|l| !l.pass && KNOWN_FAILING.contains(&l.id)).map(|l| l.id).collect();
    println!(
        "acceptance: {passed}/{} passed, known failures {known:?}, unexpected failures {unexpected:?}",
        lines.len()
    );
    if !unexpected.is_empty() {
        std::process::exit(1);
    }
}
