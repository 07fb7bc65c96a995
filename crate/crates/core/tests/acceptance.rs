//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the report is always printed. The
//! process exits nonzero if a criterion fails that is not listed in
//! `KNOWN_RED`, or if a listed one starts passing (the list must be kept
//! honest). Set `NPAT_BLESS=1` to rewrite the pinned metrics baseline.

mod common;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use npat::attention::forward_step_values;
use npat::autodiff::Graph;
use npat::eval::{evaluate, MetricsReport};
use npat::network::{Model, ModelConfig, SystemMode};
use npat::synthdata::{corpus_checksum, generate_corpus, CorpusSpec, Song};
use npat::train::{Example, StepLog, TrainConfig, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Training steps for the prop, base and ttrans runs (at most 20k).
const BUDGET_STEPS: usize = 8_000;
const NOATT_STEPS: usize = 5_000;
const SEED: u64 = 0;

/// Criteria known to fail at desk scale. They still print FAIL.
const KNOWN_RED: &[u32] = &[5, 6];

const BASELINE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/acceptance_baseline.csv");

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
}

fn report(id: u32, name: &'static str, pass: bool, detail: String) -> Outcome {
    println!(
        "[{}] criterion {id} {name}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    Outcome { id, name, pass }
}

// --- 1 -------------------------------------------------------------------

fn scalar_agent(alpha: &[f64], u: f64, y: &[f64]) -> Vec<f64> {
    let mut next: Vec<f64> = (0..alpha.len())
        .map(|i| ((1.0 - u) * alpha[i] + if i > 0 { u * alpha[i - 1] } else { 0.0 }) * y[i])
        .collect();
    let z: f64 = next.iter().sum();
    next.iter_mut().for_each(|v| *v /= z);
    next
}

fn recursion() -> Outcome {
    let start = Instant::now();
    let a = forward_step_values(&[0.7, 0.3, 0.0], &[0.5; 3], &[0.2, 0.5, 0.3]).unwrap();
    let hand = a
        .iter()
        .zip([0.1918, 0.6849, 0.1233])
        .map(|(x, e)| (x - e).abs())
        .fold(0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 9;
    let mut ours = vec![0.0; n];
    ours[0] = 1.0;
    let mut theirs = ours.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
        let s: f64 = y.iter().sum();
        let y: Vec<f64> = y.iter().map(|v| v / s).collect();
        let u = rng.random_range(0.0..1.0);
        ours = forward_step_values(&ours, &vec![u; n], &y).unwrap();
        theirs = scalar_agent(&theirs, u, &y);
        worst = ours
            .iter()
            .zip(&theirs)
            .map(|(a, b)| (a - b).abs())
            .fold(worst, f64::max);
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        "recursion correctness",
        hand <= 1e-4 && worst <= 1e-12 && secs < 1.0,
        format!("hand example off by {hand:.1e} (<= 1e-4), scalar-agent gap {worst:.1e} over 50 steps (<= 1e-12), {secs:.3}s (< 1s)"),
    )
}

// --- 2 -------------------------------------------------------------------

fn gradients() -> Outcome {
    let start = Instant::now();
    let ops = common::op_gradient_errors();
    let (worst_op, op_err) = ops
        .iter()
        .fold(("", 0.0f64), |b, &(n, e)| if e > b.1 { (n, e) } else { b });
    let guided = common::guided_loss_gradient_error();
    let model = common::model_gradient_error(SystemMode::Prop, common::EPS);
    let secs = start.elapsed().as_secs_f64();
    let tol = common::TOL;
    report(
        2,
        "gradient suite",
        op_err <= tol && guided <= tol && model <= tol && secs < 120.0,
        format!(
            "{} ops worst {op_err:.1e} ({worst_op}), guided loss {guided:.1e}, full 2-note model {model:.1e}, all <= 1e-4; {secs:.1}s (< 120s)",
            ops.len()
        ),
    )
}

// --- 3 -------------------------------------------------------------------

fn penalty_golden() -> Outcome {
    let golden = include_str!("data/penalty_golden.csv");
    let g = npat::loss::penalty_matrix(&golden_score(), 1, 60, 15).unwrap();
    let want: Vec<u64> = golden
        .lines()
        .flat_map(|l| l.split(','))
        .map(|v| v.parse::<f64>().unwrap().to_bits())
        .collect();
    let got: Vec<u64> = g.values.data().iter().map(|v| v.to_bits()).collect();
    let diff = want.iter().zip(&got).filter(|(a, b)| a != b).count();
    report(
        3,
        "penalty golden",
        want.len() == got.len() && diff == 0,
        format!(
            "{}x{} cells, {diff} differ from the brute-force reference",
            g.phonemes(),
            g.steps()
        ),
    )
}

/// 90 frames with morae (k a)(i)(s u), then 60 frames with (o).
fn golden_score() -> npat::score::Score {
    use npat::score::{Mora, NoteSpec, Pitch, Score};
    let m = |ids: &[usize]| Mora::from_ids(ids).unwrap();
    Score::new(
        vec![
            NoteSpec {
                pitch: Pitch::Midi(60),
                beats: 0.75,
                morae: vec![m(&[5, 0]), m(&[1]), m(&[6, 2])],
            },
            NoteSpec {
                pitch: Pitch::Midi(64),
                beats: 0.5,
                morae: vec![m(&[4])],
            },
        ],
        100.0,
        5.0,
    )
    .unwrap()
}

// --- 4 -------------------------------------------------------------------

fn attention_invariants() -> Outcome {
    use npat::attention::{
        attend, init_params, AlignmentState, AttentionDims, AttentionMode, AttentionParams, Memory, Transition,
    };
    use npat::autodiff::ParamSet;

    let dims = AttentionDims {
        query: 6,
        encoder: 5,
        attn: 7,
        embed: 4,
        channels: 3,
        kernel: 5,
    };
    let transitions = [
        Transition::Full,
        Transition::FixedHalf,
        Transition::PhonemeOnly,
        Transition::TimeOnly,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut steps, mut sum_err, mut support_bad, mut u_bad) = (0, 0.0f64, 0, 0);
    for run in 0..20 {
        let mode = AttentionMode {
            use_position: run % 2 == 0,
            transition: transitions[run % 4],
        };
        let n = rng.random_range(2..16);
        let mut params = ParamSet::new();
        init_params(&dims, &mut rng, &mut params).unwrap();
        let names: Vec<String> = params.names().map(str::to_string).collect();
        for name in names {
            let len = params.get(&name).unwrap().len();
            let v: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
            params.set_data(&name, &v).unwrap();
        }
        let mut g = Graph::new();
        let p = AttentionParams::bind(&mut g, &params).unwrap();
        let states = common::random(&mut rng, &[n, dims.encoder], -1.0, 1.0);
        let states = g.input(states);
        let mem = Memory::new(&mut g, &p, states, mode).unwrap();
        let mut state = AlignmentState::initial(&mut g, n);
        let mut prev = g.value(state.alpha).data().to_vec();
        for _ in 0..50 {
            let q = g.input(common::random(&mut rng, &[dims.query], -1.0, 1.0));
            let pos = g.input(common::random(&mut rng, &[n, 3], -2.0, 2.0));
            let out = attend(&mut g, &p, &mem, mode, q, pos, state).unwrap();
            let alpha = g.value(out.alpha).data().to_vec();
            sum_err = sum_err.max((alpha.iter().sum::<f64>() - 1.0).abs());
            let lo0 = prev.iter().position(|&v| v > 0.0).unwrap();
            let hi0 = prev.iter().rposition(|&v| v > 0.0).unwrap();
            let lo1 = alpha.iter().position(|&v| v > 0.0).unwrap();
            let hi1 = alpha.iter().rposition(|&v| v > 0.0).unwrap();
            if lo1 < lo0 || hi1 > hi0 + 1 || alpha.iter().any(|&v| v < 0.0) {
                support_bad += 1;
            }
            u_bad += g.value(out.u).data().iter().filter(|&&u| !(u > 0.0 && u < 1.0)).count();
            prev = alpha;
            state = out.state;
            steps += 1;
        }
    }
    report(
        4,
        "attention invariants",
        steps == 1000 && sum_err <= 1e-6 && support_bad == 0 && u_bad == 0,
        format!("{steps} steps: max |sum - 1| {sum_err:.1e} (<= 1e-6), {support_bad} support violations, {u_bad} u outside (0,1)"),
    )
}

// --- training helpers ----------------------------------------------------

struct Run {
    mode: SystemMode,
    model: Model,
    data: Vec<Example>,
    report: MetricsReport,
    logs: Vec<StepLog>,
    elapsed: Duration,
}

fn train(mode: SystemMode, songs: &[Song], num_train: usize, steps: usize) -> Run {
    let cfg = ModelConfig {
        mode,
        seed: SEED,
        ..Default::default()
    };
    let r = cfg.reduction_factor;
    let data: Vec<Example> = songs[..num_train].iter().map(|s| Example::new(s, r).unwrap()).collect();
    let start = Instant::now();
    let mut t = Trainer::new(
        Model::new(cfg).unwrap(),
        TrainConfig {
            steps,
            ..Default::default()
        },
    )
    .unwrap();
    let logs = t.run(&data, |_, _| Ok(())).unwrap();
    let elapsed = start.elapsed();
    let test: Vec<(usize, &Song)> = songs.iter().enumerate().skip(num_train).collect();
    Run {
        mode,
        report: evaluate(&t.model, &test).unwrap(),
        model: t.model,
        data,
        logs,
        elapsed,
    }
}

fn summary(r: &MetricsReport) -> String {
    format!(
        "monotonicity {:.4}, timing MAE {:.2} frames, F0 RMSE {:.1} cents",
        r.mean.monotonicity, r.mean.timing_mae, r.mean.f0_rmse
    )
}

// --- 5 -------------------------------------------------------------------

fn desk_scale(prop: &Run) -> Outcome {
    let m = &prop.report.mean;
    let mins = prop.elapsed.as_secs_f64() / 60.0;
    report(
        5,
        "desk-scale training (prop)",
        m.monotonicity >= 0.95 && m.timing_mae <= 10.0 && m.f0_rmse <= 50.0 && mins <= 30.0,
        format!(
            "{} steps in {mins:.1} min: {} (need >= 0.95, <= 10, <= 50)",
            prop.logs.len(),
            summary(&prop.report)
        ),
    )
}

// --- 6 -------------------------------------------------------------------

fn ablation(prop: &Run, base: &Run, ttrans: &Run) -> Outcome {
    let (p, b, t) = (&prop.report.mean, &base.report.mean, &ttrans.report.mean);
    let mono_gap = p.monotonicity - b.monotonicity;
    let mae_ratio = t.timing_mae / p.timing_mae;
    report(
        6,
        "ablation trend",
        mono_gap >= 0.10 && mae_ratio >= 2.0,
        format!(
            "prop - base monotonicity {mono_gap:.4} (need >= 0.10); ttrans / prop timing MAE {mae_ratio:.2} (need >= 2); base: {}; ttrans: {}",
            summary(&base.report),
            summary(&ttrans.report)
        ),
    )
}

// --- 7 -------------------------------------------------------------------

/// Feature loss of the final (Post-Net) output over the training songs,
/// teacher-forced with dropout off.
fn noatt_floor(noatt: &Run) -> Outcome {
    let (mut sum, mut dec) = (0.0, 0.0);
    for ex in &noatt.data {
        let mut g = Graph::new();
        let out = noatt
            .model
            .forward_teacher(&mut g, &ex.utterance, &ex.target, 0.0, None)
            .unwrap();
        sum += out.report.feat_postnet;
        dec += out.report.feat_decoder;
    }
    let n = noatt.data.len() as f64;
    let (feat, dec) = (sum / n, dec / n);
    report(
        7,
        "noatt sanity floor",
        feat < 1e-3,
        format!(
            "noise_std 0, {} steps: feature loss {feat:.2e} (< 1e-3), decoder-only {dec:.2e}; test {}",
            noatt.logs.len(),
            summary(&noatt.report)
        ),
    )
}

// --- 8 -------------------------------------------------------------------

fn determinism(songs: &[Song], spec: &CorpusSpec) -> Outcome {
    let again = generate_corpus(spec).unwrap();
    let (c1, c2) = (corpus_checksum(songs), corpus_checksum(&again));
    let a = train(SystemMode::Prop, songs, spec.num_train(), 100);
    let b = train(SystemMode::Prop, &again, spec.num_train(), 100);
    let rows = |r: &Run| r.logs.iter().map(StepLog::csv_row).collect::<Vec<_>>();
    let same = rows(&a) == rows(&b) && a.logs.len() == 100;
    report(
        8,
        "determinism",
        c1 == c2 && same,
        format!(
            "corpus checksum {} twice ({}); first 100 loss rows {}",
            &c1[..16],
            if c1 == c2 { "identical" } else { "DIFFERENT" },
            if same { "identical" } else { "DIFFERENT" }
        ),
    )
}

// --- baseline ------------------------------------------------------------

fn baseline_text(runs: &[&Run]) -> String {
    let mut s = format!("{}\n", MetricsReport::CSV_HEADER);
    for r in runs {
        writeln!(s, "{}", r.report.csv_rows().last().unwrap()).unwrap();
    }
    s
}

fn check_baseline(text: &str) -> bool {
    let path = Path::new(BASELINE);
    if std::env::var_os("NPAT_BLESS").is_some() {
        fs::write(path, text).unwrap();
        println!("[INFO] baseline written to {}", path.display());
        return true;
    }
    match fs::read_to_string(path) {
        Ok(pinned) if pinned == text => {
            println!("[PASS] metrics baseline: achieved numbers equal the pinned file");
            true
        }
        Ok(pinned) => {
            println!("[FAIL] metrics baseline drifted from {}:", path.display());
            println!("pinned:\n{pinned}achieved:\n{text}");
            false
        }
        Err(_) => {
            println!("[FAIL] metrics baseline {} missing; achieved:\n{text}", path.display());
            false
        }
    }
}

fn main() {
    // Under `cargo test -- --list` or a name filter this target has nothing
    // to enumerate.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let started = Instant::now();
    let mut outcomes = vec![recursion(), gradients(), penalty_golden(), attention_invariants()];

    let spec = CorpusSpec::default();
    let songs = generate_corpus(&spec).unwrap();
    let num_train = spec.num_train();
    outcomes.push(determinism(&songs, &spec));

    let quiet = CorpusSpec {
        noise_std: 0.0,
        ..CorpusSpec::default()
    };
    let clean = generate_corpus(&quiet).unwrap();

    println!(
        "[INFO] training prop, base and ttrans for {BUDGET_STEPS} steps and noatt for {NOATT_STEPS} (seed {SEED}, {} train / {} test songs)",
        num_train, spec.num_test
    );
    // prop alone so its wall time is measured without contention
    let prop = train(SystemMode::Prop, &songs, num_train, BUDGET_STEPS);
    let (base, ttrans, noatt) = thread::scope(|s| {
        let b = s.spawn(|| train(SystemMode::Base, &songs, num_train, BUDGET_STEPS));
        let t = s.spawn(|| train(SystemMode::TTrans, &songs, num_train, BUDGET_STEPS));
        let n = s.spawn(|| train(SystemMode::NoAtt, &clean, num_train, NOATT_STEPS));
        (b.join().unwrap(), t.join().unwrap(), n.join().unwrap())
    });
    for r in [&prop, &base, &ttrans, &noatt] {
        println!(
            "[INFO] {}: {} ({:.1} min)",
            r.mode,
            summary(&r.report),
            r.elapsed.as_secs_f64() / 60.0
        );
    }
    outcomes.push(desk_scale(&prop));
    outcomes.push(ablation(&prop, &base, &ttrans));
    outcomes.push(noatt_floor(&noatt));
    outcomes.sort_by_key(|o| o.id);
    let baseline_ok = check_baseline(&baseline_text(&[&prop, &base, &ttrans, &noatt]));

    println!(
        "\nacceptance summary ({:.1} min):",
        started.elapsed().as_secs_f64() / 60.0
    );
    let mut unexpected = Vec::new();
    for o in &outcomes {
        let red = KNOWN_RED.contains(&o.id);
        let note = match (o.pass, red) {
            (true, false) => "",
            (false, true) => " (known red)",
            (false, false) => " (UNEXPECTED)",
            (true, true) => " (listed as known red but passes: update KNOWN_RED)",
        };
        println!("  {} {} {}{note}", if o.pass { "PASS" } else { "FAIL" }, o.id, o.name);
        if o.pass == red {
            unexpected.push(o.id);
        }
    }
    if !unexpected.is_empty() || !baseline_ok {
        println!("acceptance: unexpected results for criteria {unexpected:?}, baseline ok: {baseline_ok}");
        std::process::exit(1);
    }
    println!("acceptance: all criteria as expected");
}
