//! End-to-end acceptance checks, one line of output per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the report prints in order.
//! Failing criteria are always reported; set `CITE_ACCEPTANCE_STRICT=1` to
//! also turn them into a non-zero exit status.

mod common;

use std::time::{Duration, Instant};

use cite::data::{gen_synthetic, preset, FeatureStore, load_features, RunConfig, Split};
use cite::evaluation::{accuracy, concept_purity, evaluate_with, localize, oracle_upper_bound};
use cite::network::{concept_weights, init_model, load_model, save_model, score, AssignmentMode, ModelConfig};
use cite::sampling::{mine_pairs, PhraseSample, NEGATIVES_PER_POSITIVE};
use cite::geometry::BBox;
use cite::tensor::{Matrix, Mode};
use cite::training::{
    check_model_gradients, cite_loss, schedule_tick, train, Action, AssignOptions, AssignmentKind, Assigner, Phase,
    ScheduleState, TrainOutcome,
};
use common::{eval_fixture, random_matrix, random_model, rng};
use rand::Rng;

const SEEDS: [u64; 3] = [0, 1, 2];
const RUN_BUDGET: Duration = Duration::from_secs(300);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn max_abs(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn gradient_check() -> Verdict {
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (mode, seed) in [(AssignmentMode::Learned, 1), (AssignmentMode::External, 2)] {
        let cfg = ModelConfig::new(16, 16, 8, 3, mode, seed);
        let r = check_model_gradients(&cfg, 4, 6, 1e-3, seed).expect("gradient check runs");
        worst = worst.max(r.max_rel_error);
        checked += r.checked;
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        worst < 1e-4 && secs < 60.0,
        format!("max rel error {worst:.2e} over {checked} coordinates in {secs:.1}s"),
    )
}

fn baseline_equivalence() -> Verdict {
    let mut r = rng(21);
    let regions = random_matrix(&mut r, 7, 10);
    let phrases = random_matrix(&mut r, 5, 9);
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let cite = init_model(&ModelConfig::new(10, 9, 6, 1, AssignmentMode::Learned, seed)).unwrap();
        let sim = init_model(&ModelConfig::similarity_network(10, 9, 6, seed)).unwrap();
        let ones = Matrix::filled(5, 1, 1.0);
        for mode in [Mode::Train, Mode::Infer] {
            let a = score(&cite, &regions, &phrases, None, mode).unwrap().0;
            let b = score(&sim, &regions, &phrases, Some(&ones), mode).unwrap().0;
            worst = worst.max(max_abs(&a, &b));
        }
    }
    verdict(worst <= 1e-6, format!("max |Δscore| {worst:.1e}"))
}

fn fusion_selection() -> Verdict {
    let cfg = ModelConfig::new(8, 7, 5, 4, AssignmentMode::External, 3);
    let m = random_model(&cfg, 3);
    let mut r = rng(3);
    let regions = random_matrix(&mut r, 6, 8);
    let phrases = random_matrix(&mut r, 3, 7);
    let ones = Matrix::filled(3, 1, 1.0);
    let mut exact = true;
    for k in 0..4 {
        let mut u = Matrix::zeros(3, 4);
        (0..3).for_each(|i| u[(i, k)] = 1.0);
        let full = score(&m, &regions, &phrases, Some(&u), Mode::Infer).unwrap().0;
        let sub = m.select_embedding(k).unwrap();
        let trunc = score(&sub, &regions, &phrases, Some(&ones), Mode::Infer).unwrap().0;
        exact &= full.as_slice() == trunc.as_slice();
    }
    verdict(exact, if exact { "bit-identical for all 4 embeddings" } else { "scores differ" })
}

fn objective_decomposition() -> Verdict {
    let mut r = rng(4);
    let scores: Vec<f64> = (0..50).map(|_| r.gen_range(-6.0..6.0)).collect();
    let labels: Vec<f64> = (0..50).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect();
    let phi = random_matrix(&mut r, 50, 4);
    let direct: f64 = scores.iter().zip(&labels).map(|(x, y)| (1.0 + (-y * x).exp()).ln()).sum();
    let lib = cite_loss(&scores, &labels, Some(&phi), 0.0).unwrap();
    let rel = (lib - direct).abs() / direct;
    let single = cite_loss(&[0.0], &[1.0], None, 0.0).unwrap();
    let ln2 = (single - std::f64::consts::LN_2).abs();
    verdict(rel < 1e-13 && ln2 <= 1e-12, format!("rel diff {rel:.1e}, |L(0,+1) - ln 2| {ln2:.1e}"))
}

struct SeedRuns {
    baseline: f64,
    learned: f64,
    kmeans: f64,
    purity: f64,
    slowest: Duration,
}

fn synth_config(seed: u64) -> RunConfig {
    let mut cfg = preset("synth").unwrap();
    cfg.seed = seed;
    cfg.synth.seed = seed;
    cfg
}

fn run(cfg: &RunConfig, ds: &cite::data::GroundingDataset, kind: AssignmentKind, k: usize) -> (TrainOutcome, Assigner, f64, Duration) {
    let t0 = Instant::now();
    let cfg = RunConfig { k, assignment: kind, ..cfg.clone() };
    let enc = ds.encode(cfg.spatial, cfg.proposals_per_image).unwrap();
    let opts = AssignOptions { seed: cfg.seed, kmeans_iters: cfg.kmeans_iters, ..Default::default() };
    let assigner = Assigner::build(kind, k, ds, &opts).unwrap();
    let out = train(ds, &enc, &cfg.model_config(enc.region_dim(), enc.phrase_dim()), &cfg.train_config(), &assigner).unwrap();
    let acc = accuracy(&out.model, ds, &enc, &ds.phrases_in(Split::Test), &assigner).unwrap().accuracy;
    (out, assigner, acc, t0.elapsed())
}

fn seed_runs(seed: u64) -> SeedRuns {
    let cfg = synth_config(seed);
    let g = cfg.synth.concepts;
    let ds = gen_synthetic(&cfg.synth).unwrap();
    let (_, _, baseline, t1) = run(&cfg, &ds, AssignmentKind::Learned, 1);
    let (learned_out, _, learned, t2) = run(&cfg, &ds, AssignmentKind::Learned, g);
    let (_, _, kmeans, t3) = run(&cfg, &ds, AssignmentKind::Kmeans, g);

    let enc = ds.encode(cfg.spatial, cfg.proposals_per_image).unwrap();
    let test = ds.phrases_in(Split::Test);
    let (u, _) = concept_weights(&learned_out.model, &enc.phrases.gather_rows(&test).unwrap(), Mode::Infer).unwrap();
    let assigned: Vec<usize> = (0..u.rows()).map(|i| localize(u.row(i)).unwrap()).collect();
    let labels: Vec<usize> = test.iter().map(|&p| ds.phrases[p].concept.unwrap()).collect();
    SeedRuns { baseline, learned, kmeans, purity: concept_purity(&assigned, &labels), slowest: t1.max(t2).max(t3) }
}

fn advantage(runs: &[SeedRuns]) -> Verdict {
    let gaps: Vec<f64> = runs.iter().map(|r| r.learned - r.baseline).collect();
    let gap = median(gaps.clone());
    let slowest = runs.iter().map(|r| r.slowest).max().unwrap();
    let detail = runs
        .iter()
        .map(|r| format!("{:.4}/{:.4}", r.baseline, r.learned))
        .collect::<Vec<_>>()
        .join(" ");
    verdict(
        gap >= 0.05 && slowest < RUN_BUDGET,
        format!("median gap {:+.2} pp (K=1/K=4 test: {detail}), slowest run {:.0}s", gap * 100.0, slowest.as_secs_f64()),
    )
}

fn sweep_shape(runs: &[SeedRuns]) -> Verdict {
    let every = runs.iter().all(|r| r.learned >= r.baseline);
    let vs_kmeans = median(runs.iter().map(|r| r.learned - r.kmeans).collect());
    let detail = runs
        .iter()
        .map(|r| format!("{:.4}/{:.4}/{:.4}", r.baseline, r.learned, r.kmeans))
        .collect::<Vec<_>>()
        .join(" ");
    verdict(
        every && vs_kmeans >= 0.0,
        format!("learned ≥ K=1 on every seed: {every}; median learned − kmeans {vs_kmeans:+.4} (K=1/learned/kmeans: {detail})"),
    )
}

fn purity(runs: &[SeedRuns]) -> Verdict {
    let p: Vec<f64> = runs.iter().map(|r| r.purity).collect();
    let m = median(p.clone());
    verdict(m >= 0.8, format!("median purity {m:.3} (per seed {p:.3?})"))
}

fn l1_efficacy() -> Verdict {
    let base = synth_config(0);
    let ds = gen_synthetic(&base.synth).unwrap();
    let enc = ds.encode(base.spatial, base.proposals_per_image).unwrap();
    let val = enc.phrases.gather_rows(&ds.phrases_in(Split::Val)).unwrap();
    let mut norms = Vec::new();
    for lambda in [0.0, 5e-5, 5e-4, 5e-3] {
        let cfg = RunConfig { lambda, ..base.clone() };
        let (out, _, _, _) = run(&cfg, &ds, AssignmentKind::Learned, cfg.synth.concepts);
        let (_, phi) = concept_weights(&out.model, &val, Mode::Infer).unwrap();
        norms.push(phi.as_slice().iter().map(|x| x.abs()).sum::<f64>() / phi.rows() as f64);
    }
    let ok = norms.windows(2).all(|w| w[1] <= w[0]);
    verdict(ok, format!("mean ‖φ‖₁ {norms:.4?}"))
}

fn evaluation_oracle() -> Verdict {
    let ds = eval_fixture::dataset();
    let all: Vec<usize> = (0..ds.phrases.len()).collect();
    let mut ok = true;
    let mut detail = Vec::new();
    for limit in [None, Some(3), Some(2), Some(1)] {
        let counts: Vec<usize> = ds.images.iter().map(|i| limit.map_or(i.proposals.len(), |l| l.min(i.proposals.len()))).collect();
        let report = evaluate_with(&ds, &counts, &all, |img, ps| Ok(eval_fixture::table_scores(ps, counts[img]))).unwrap();
        let bound = oracle_upper_bound(&ds, &all, limit).unwrap();
        let (hits, oracle) = eval_fixture::brute_force(limit);
        ok &= report.correct == hits && report.accuracy == hits as f64 / 20.0 && bound == oracle as f64 / 20.0;
        detail.push(format!("{}/{}", report.correct, (bound * 20.0).round()));
    }
    verdict(ok, format!("hits/oracle per proposal limit {}", detail.join(" ")))
}

fn brute_iou(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let h = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = w * h;
    inter / (a.area() + b.area() - inter)
}

fn mining_rules() -> Verdict {
    let mut r = rng(10);
    let mut violations = 0;
    let boxes = |r: &mut rand_chacha::ChaCha8Rng, n: usize| -> Vec<BBox> {
        (0..n)
            .map(|_| {
                let (x, y) = (r.gen_range(0.0..80.0), r.gen_range(0.0..80.0));
                BBox::new(x, y, x + r.gen_range(1.0..40.0), y + r.gen_range(1.0..40.0)).unwrap()
            })
            .collect()
    };
    for case in 0..1000u64 {
        let n = r.gen_range(1..3);
        let gt = boxes(&mut r, n);
        let n = r.gen_range(1..30);
        let mut props = boxes(&mut r, n);
        // make positives common: copy jittered ground truth into some slots
        for p in props.iter_mut().take(r.gen_range(0..4)) {
            let g = gt[0];
            let d = r.gen_range(-3.0..3.0);
            *p = BBox::new(g.x_min + d, g.y_min + d, g.x_max + d, g.y_max + d).unwrap();
        }
        let sample = PhraseSample::new("p", "i", gt, 0).unwrap();
        let m = mine_pairs(&sample, &props, case).unwrap();
        let ious: Vec<f64> = props.iter().map(|p| brute_iou(p, &sample.gt_union)).collect();
        let pos: Vec<usize> = (0..props.len()).filter(|&i| ious[i] >= 0.6).collect();
        let wanted = NEGATIVES_PER_POSITIVE * pos.len();
        let strict = (0..props.len()).filter(|&i| ious[i] < 0.3).count();
        let threshold = if strict >= wanted { 0.3 } else { 0.4 };
        let pool = (0..props.len()).filter(|&i| ious[i] < threshold).count();
        let mut bad = m.positives != pos || m.skipped != pos.is_empty();
        if !pos.is_empty() {
            bad |= m.neg_threshold_used != threshold;
            bad |= m.negatives.len() != wanted.min(pool);
            bad |= m.negatives.iter().any(|&n| ious[n] >= threshold || pos.contains(&n));
            bad |= m.negatives.windows(2).any(|w| w[0] >= w[1]);
        } else {
            bad |= !m.negatives.is_empty();
        }
        bad |= m != mine_pairs(&sample, &props, case).unwrap();
        violations += bad as usize;
    }
    verdict(violations == 0, format!("{violations} violations over 1000 fixtures"))
}

fn drive(metrics: &[f64]) -> Vec<(Action, Phase)> {
    let mut s = ScheduleState::new(5).unwrap();
    metrics.iter().map(|&m| (schedule_tick(&mut s, m).unwrap(), s.phase)).collect()
}

fn schedule_protocol() -> Verdict {
    let mut ok = true;
    // plateau from the first epoch: switch after 5 non-improving epochs, stop after 5 more
    let flat = drive(&[0.5; 11]);
    let first_switch = flat.iter().position(|(a, _)| *a == Action::SwitchToSgd);
    let first_stop = flat.iter().position(|(a, _)| *a == Action::Stop);
    ok &= first_switch == Some(5) && first_stop == Some(10);
    // improvements reset the counter in both phases
    let seq = [0.1, 0.2, 0.2, 0.2, 0.2, 0.2, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3, 0.4, 0.4, 0.4, 0.4, 0.4, 0.4];
    let out = drive(&seq);
    let switch = out.iter().position(|(a, _)| *a == Action::SwitchToSgd);
    let stop = out.iter().position(|(a, _)| *a == Action::Stop);
    ok &= switch == Some(11) && stop == Some(17);
    verdict(ok, format!("plateau: switch at tick {:?}, stop at {:?}; with improvements: {:?}, {:?}", first_switch.map(|i| i + 1), first_stop.map(|i| i + 1), switch.map(|i| i + 1), stop.map(|i| i + 1)))
}

fn determinism_and_formats() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = synth_config(5);
    cfg.max_epochs = 4;
    cfg.synth.train_images = 80;
    let ds = gen_synthetic(&cfg.synth).unwrap();
    let mut logs = Vec::new();
    let mut models = Vec::new();
    for i in 0..2 {
        let (out, _, _, _) = run(&cfg, &ds, AssignmentKind::Learned, 4);
        let p = dir.path().join(format!("m{i}.bin"));
        save_model(&out.model, &p).unwrap();
        logs.push(out.log.to_csv());
        models.push(std::fs::read(&p).unwrap());
    }
    let logs_equal = logs[0] == logs[1] && models[0] == models[1];
    let again = dir.path().join("again.bin");
    save_model(&load_model(dir.path().join("m0.bin")).unwrap(), &again).unwrap();
    let ckpt = std::fs::read(&again).unwrap() == models[0];
    let feats = dir.path().join("f.bin");
    ds.region_features.save(&feats).unwrap();
    let back: FeatureStore = load_features(&feats).unwrap();
    let features = back == ds.region_features;
    verdict(
        logs_equal && ckpt && features,
        format!("identical logs+checkpoints: {logs_equal}; checkpoint round trip: {ckpt}; feature round trip: {features}"),
    )
}

fn main() {
    let t0 = Instant::now();
    let mut results: Vec<(u8, &str, Verdict)> = vec![
        (1, "gradient correctness", gradient_check()),
        (2, "baseline equivalence", baseline_equivalence()),
        (3, "fusion selection", fusion_selection()),
        (4, "objective decomposition", objective_decomposition()),
    ];
    let runs: Vec<SeedRuns> = SEEDS.iter().map(|&s| seed_runs(s)).collect();
    results.push((5, "conditional-embedding advantage", advantage(&runs)));
    results.push((6, "K-sweep shape", sweep_shape(&runs)));
    results.push((7, "concept purity", purity(&runs)));
    results.push((8, "L1 efficacy", l1_efficacy()));
    results.push((9, "evaluation oracle equivalence", evaluation_oracle()));
    results.push((10, "mining rules", mining_rules()));
    results.push((11, "schedule protocol", schedule_protocol()));
    results.push((12, "determinism and formats", determinism_and_formats()));
    results.sort_by_key(|r| r.0);

    let mut failed = 0;
    for (n, name, v) in &results {
        println!("criterion {n:>2} {} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += (!v.pass) as usize;
    }
    println!("{} of {} criteria passed in {:.0}s", results.len() - failed, results.len(), t0.elapsed().as_secs_f64());
    if failed > 0 && std::env::var_os("CITE_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
