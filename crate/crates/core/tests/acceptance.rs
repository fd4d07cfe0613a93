//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each,
//! then fails if any criterion failed.

mod common;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use common::{MockServer, Reply};
use ricforge::curation::{compute_features, read_dataset};
use ricforge::intent::{
    parse_intent, ActionSpec, ActionType, IntentBackend, IntentOutcome, IntentText, Metric, ProvisioningSpec,
    RemoteBackend, RemoteBackendConfig, RuleBackend,
};
use ricforge::mlengine::gbdt::train_gbdt;
use ricforge::mlengine::mlp::{Mlp, Scaler};
use ricforge::mlengine::tree::best_gini_split;
use ricforge::mlengine::{export_artifact, load_artifact, measure_latency, ModelArtifact, Samples};
use ricforge::orchestrator::{
    evaluate_deployment, provision, total_ms, Evaluation, Phase, ProvisionConfig, ProvisionOutcome, ProvisionResult,
    TraceSource, DATASET_FILE, DESCRIPTOR_FILE, MODEL_FILE, TRACE_FILE,
};
use ricforge::ricsim::{RicHarness, XAppModel};
use ricforge::synthesis::{register_xapp, render_xapp, ModelLocation, XAppDescriptor, XAppTemplate};
use ricforge::telemetry::TargetClass;

const DEMO_INTENT: &str = "predict congestion and reserve 20% PRBs for edge users";
const SEED: u64 = 42;
const FUZZ_CASES: usize = 10_000;

struct Gate {
    results: Vec<(u8, bool)>,
}

impl Gate {
    fn record(&mut self, n: u8, ok: bool, detail: String) {
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "criterion {n:>2}: {}  {detail}", if ok { "PASS" } else { "FAIL" });
        let _ = out.flush();
        self.results.push((n, ok));
    }
}

fn provision_demo(out: &Path, parallel: bool) -> Box<ProvisionResult> {
    let mut config = ProvisionConfig::new(out, SEED);
    config.parallel = parallel;
    let harness = RicHarness::new();
    match provision(DEMO_INTENT, &mut RuleBackend, &TraceSource::default_scenario(SEED), &config, &harness) {
        Ok(ProvisionOutcome::Provisioned(res)) => res,
        Ok(ProvisionOutcome::Clarification(c)) => panic!("demo intent asked for clarification: {c}"),
        Err(e) => panic!("demo provisioning failed: {e}"),
    }
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

// ---------------------------------------------------------------- criterion 1

fn criterion_1(gate: &mut Gate, run: &ProvisionResult, elapsed_s: f64) {
    let rep = &run.training.report;
    let ok = rep.accuracy >= 0.95 && rep.f1_macro >= 0.93 && elapsed_s <= 300.0;
    gate.record(
        1,
        ok,
        format!(
            "winner {} holdout accuracy {:.4} (>= 0.95) f1_macro {:.4} (>= 0.93) provision {:.1} s (<= 300 s)",
            run.training.winner, rep.accuracy, rep.f1_macro, elapsed_s
        ),
    );
}

// ------------------------------------------------------------- criteria 2 to 5

/// Accuracy of closed-loop predictions against horizon labels over intervals
/// `t >= from`.
fn accuracy_from(rows: &[ricforge::ricsim::RunRow], from: u32) -> f64 {
    let (hit, n) = rows
        .iter()
        .filter(|r| r.t >= from)
        .filter_map(|r| r.horizon_label.map(|y| y == r.prediction))
        .fold((0usize, 0usize), |(h, n), ok| (h + usize::from(ok), n + 1));
    hit as f64 / n as f64
}

fn criterion_2(gate: &mut Gate, run: &ProvisionResult, eval: &Evaluation) {
    let ds = read_dataset(&run.run_dir.join(DATASET_FILE)).expect("dataset");
    let first_holdout_t = ds.rows[run.training.report.holdout_start_row].features.t_end;
    let ml_h = accuracy_from(&eval.ml.rows, first_holdout_t);
    let base_h = accuracy_from(&eval.baseline.rows, first_holdout_t);
    let full_gap = eval.ml.summary.accuracy_vs_horizon - eval.baseline.summary.accuracy_vs_horizon;
    let ok = ml_h - base_h >= 0.05 && full_gap >= 0.05;
    gate.record(
        2,
        ok,
        format!(
            "held-out span (t >= {first_holdout_t}): ml {ml_h:.4} baseline {base_h:.4} gap {:.4}; full trace gap {full_gap:.4} (>= 0.05)",
            ml_h - base_h
        ),
    );
}

fn criterion_3(gate: &mut Gate, eval: &Evaluation) {
    let ml = &eval.ml.summary;
    let base = &eval.baseline.summary;
    let ok = ml.onset_leads.len() == 6
        && ml.median_onset_lead.is_some_and(|m| m >= 1.0)
        && base.median_onset_lead == Some(0.0);
    gate.record(
        3,
        ok,
        format!(
            "ml leads {:?} median {:?} (>= 1); baseline leads {:?} median {:?} (== 0)",
            ml.onset_leads, ml.median_onset_lead, base.onset_leads, base.median_onset_lead
        ),
    );
}

fn criterion_4(gate: &mut Gate, run: &ProvisionResult, eval: &Evaluation) {
    let size = std::fs::metadata(&run.artifact_path).expect("artifact").len();
    let artifact = load_artifact(&run.artifact_path).expect("artifact loads");
    let p99 = measure_latency(&artifact, 10_000).expect("latency");
    let selected = run.training.report.latency_us_p99.unwrap_or(f64::INFINITY);
    let violations = eval.ml.summary.budget_violations;
    let ok = p99 < 1_000.0 && selected < 1_000.0 && size < 500_000 && violations == 0;
    gate.record(
        4,
        ok,
        format!(
            "p99 {p99:.2} us re-measured, {selected:.2} us at selection (< 1000 us); size {size} B (< 500000 B); closed-loop budget violations {violations} (== 0)"
        ),
    );
}

fn criterion_5(gate: &mut Gate, eval: &Evaluation) {
    let with = eval.ml.summary.edge_prb_share_during_bursts;
    let without = eval.monitor_only.summary.edge_prb_share_during_bursts;
    let ok = with.is_some_and(|s| s >= 0.9 * 0.20) && without.is_some_and(|s| s < 0.20);
    gate.record(
        5,
        ok,
        format!(
            "edge PRB share in {} burst intervals: xApp {:?} (>= 0.18), monitor-only {:?} (< 0.20)",
            eval.ml.summary.burst_intervals, with, without
        ),
    );
}

// ---------------------------------------------------------------- criterion 6

fn criterion_6(gate: &mut Gate, runs: &[(&str, &ProvisionResult)]) {
    let files = [TRACE_FILE, DATASET_FILE, MODEL_FILE, DESCRIPTOR_FILE];
    let (ref_name, reference) = runs[0];
    let mut mismatches = Vec::new();
    for (name, run) in &runs[1..] {
        for f in files {
            if read(&reference.run_dir.join(f)) != read(&run.run_dir.join(f)) {
                mismatches.push(format!("{f} differs between {ref_name} and {name}"));
            }
        }
    }
    let digests: Vec<String> = files
        .iter()
        .map(|f| format!("{f}={}", &hex::encode(Sha256::digest(read(&reference.run_dir.join(f))))[..12]))
        .collect();
    let names: Vec<&str> = runs.iter().map(|(n, _)| *n).collect();
    let detail = if mismatches.is_empty() {
        format!("runs {names:?} byte-identical: {}", digests.join(" "))
    } else {
        mismatches.join("; ")
    };
    gate.record(6, mismatches.is_empty(), detail);
}

// ---------------------------------------------------------------- criterion 7

/// Exhaustive root split: every feature, every cut between two distinct
/// values, weighted Gini computed from direct counts. Returns the feature,
/// the cut bracket `(lo, hi)`, and the impurity.
fn brute_force_split(x: &[Vec<f64>], y: &[bool], min_leaf: usize) -> Option<(usize, f64, f64, f64)> {
    let n = y.len();
    let gini = |rows: &[usize]| -> f64 {
        let m = rows.len() as f64;
        let p = rows.iter().filter(|&&i| y[i]).count() as f64 / m;
        1.0 - p * p - (1.0 - p) * (1.0 - p)
    };
    let mut best: Option<(usize, f64, f64, f64)> = None;
    for f in 0..x[0].len() {
        let mut values: Vec<f64> = x.iter().map(|r| r[f]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for pair in values.windows(2) {
            let (lo, hi) = (pair[0], pair[1]);
            let left: Vec<usize> = (0..n).filter(|&i| x[i][f] <= lo).collect();
            let right: Vec<usize> = (0..n).filter(|&i| x[i][f] > lo).collect();
            if left.len() < min_leaf || right.len() < min_leaf {
                continue;
            }
            let imp = (left.len() as f64 * gini(&left) + right.len() as f64 * gini(&right)) / n as f64;
            if best.is_none_or(|(_, _, _, b)| imp < b - 1e-12) {
                best = Some((f, lo, hi, imp));
            }
        }
    }
    best
}

fn split_impurity(x: &[Vec<f64>], y: &[bool], f: usize, t: f64) -> f64 {
    let n = y.len() as f64;
    let mut counts = [[0.0f64; 2]; 2];
    for (row, &label) in x.iter().zip(y) {
        counts[usize::from(row[f] > t)][usize::from(label)] += 1.0;
    }
    counts
        .iter()
        .map(|c| {
            let m = c[0] + c[1];
            if m == 0.0 {
                0.0
            } else {
                m * (1.0 - (c[0] / m).powi(2) - (c[1] / m).powi(2))
            }
        })
        .sum::<f64>()
        / n
}

fn tree_oracle(rng: &mut ChaCha8Rng) -> (usize, Vec<String>) {
    let mut failures = Vec::new();
    let mut with_split = 0;
    for case in 0..100 {
        let n = rng.random_range(2..=200);
        let d = rng.random_range(1..=5);
        let discrete = case % 2 == 0;
        let levels = rng.random_range(2..=12);
        let min_leaf = rng.random_range(1..=4);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..d)
                    .map(|_| if discrete { f64::from(rng.random_range(0..levels)) } else { rng.random::<f64>() })
                    .collect()
            })
            .collect();
        let w: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<bool> = x
            .iter()
            .map(|r| {
                let s: f64 = r.iter().zip(&w).map(|(a, b)| a * b).sum();
                s + rng.random_range(-0.5..0.5) > 0.0
            })
            .collect();
        let samples = Samples::new(d, x.iter().flatten().copied().collect(), y.clone());
        let idx: Vec<usize> = (0..n).collect();
        let got = best_gini_split(&samples, &idx, min_leaf);
        let want = brute_force_split(&x, &y, min_leaf);
        match (got, want) {
            (None, None) => {}
            (Some((f, t)), Some((wf, lo, hi, imp))) => {
                with_split += 1;
                let got_imp = split_impurity(&x, &y, f, t);
                if f != wf || !(lo <= t && t < hi) || (got_imp - imp).abs() > 1e-12 {
                    failures.push(format!(
                        "case {case}: split (x{f} <= {t}, gini {got_imp}) vs brute force (x{wf} in [{lo}, {hi}), gini {imp})"
                    ));
                }
            }
            (got, want) => failures.push(format!("case {case}: {got:?} vs brute force {want:?}")),
        }
    }
    (with_split, failures)
}

fn mlp_gradient_oracle(rng: &mut ChaCha8Rng) -> f64 {
    let mut worst: f64 = 0.0;
    for (k, hidden) in [vec![], vec![4], vec![8], vec![16], vec![8, 4]].into_iter().enumerate() {
        let n = 40;
        let x: Vec<f64> = (0..n * 4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<bool> = (0..n).map(|i| x[i * 4] + 0.5 * x[i * 4 + 1] > 0.0).collect();
        let samples = Samples::new(4, x, y);
        let mut net = Mlp::init(Scaler::fit(&samples), &hidden, 7 + k as u64).expect("init");
        let p: Vec<f64> = net.params().iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
        net.set_params(&p);
        let (_, grad) = net.loss_and_grad(&samples);
        let h = 1e-5;
        let mut num = vec![0.0; p.len()];
        for j in 0..p.len() {
            let mut q = p.clone();
            q[j] = p[j] + h;
            net.set_params(&q);
            let up = net.loss_and_grad(&samples).0;
            q[j] = p[j] - h;
            net.set_params(&q);
            let down = net.loss_and_grad(&samples).0;
            num[j] = (up - down) / (2.0 * h);
        }
        net.set_params(&p);
        let diff: f64 = grad.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = num.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max(diff / norm.max(1e-12));
    }
    worst
}

fn gbdt_monotone_oracle(rng: &mut ChaCha8Rng, demo: &Samples) -> (usize, f64) {
    let mut rounds = 0;
    let mut worst_rise = f64::NEG_INFINITY;
    let mut check = |samples: &Samples, trees: usize, depth: usize, lr: f64| {
        let fit = train_gbdt(samples, trees, depth, lr, 1);
        for w in fit.loss_history.windows(2) {
            rounds += 1;
            worst_rise = worst_rise.max(w[1] - w[0]);
        }
    };
    for case in 0..20 {
        let n = rng.random_range(20..=300);
        let x: Vec<f64> = (0..n * 3).map(|_| rng.random::<f64>()).collect();
        let y: Vec<bool> = (0..n).map(|i| (x[i * 3] - x[i * 3 + 2]) * 3.0 + rng.random_range(-1.0..1.0) > 0.0).collect();
        let lr = [0.05, 0.1, 0.3, 1.0][case % 4];
        check(&Samples::new(3, x, y), 15, 1 + case % 4, lr);
    }
    check(demo, 20, 3, 0.3);
    (rounds, worst_rise)
}

fn feature_oracle(rng: &mut ChaCha8Rng, util: &[f64]) -> (usize, f64) {
    let direct = |w: &[f64]| -> [f64; 4] {
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let min = w.iter().copied().fold(f64::INFINITY, f64::min);
        let ibar = (n - 1.0) / 2.0;
        let sxy: f64 = w.iter().enumerate().map(|(i, v)| (i as f64 - ibar) * (v - mean)).sum();
        let sxx: f64 = (0..w.len()).map(|i| (i as f64 - ibar).powi(2)).sum();
        [mean, var.sqrt(), min, sxy / sxx]
    };
    let mut windows: Vec<Vec<f64>> = (0..2_000)
        .map(|_| {
            let len = rng.random_range(2..=60);
            (0..len).map(|_| rng.random::<f64>()).collect()
        })
        .collect();
    windows.extend(util.windows(10).step_by(7).map(<[f64]>::to_vec));
    let mut worst: f64 = 0.0;
    for w in &windows {
        let got = compute_features(w).expect("features").values();
        for (a, b) in got.iter().zip(direct(w)) {
            worst = worst.max((a - b).abs());
        }
    }
    (windows.len(), worst)
}

fn criterion_7(gate: &mut Gate, run: &ProvisionResult, eval: &Evaluation) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (with_split, tree_failures) = tree_oracle(&mut rng);
    let grad_err = mlp_gradient_oracle(&mut rng);
    let ds = read_dataset(&run.run_dir.join(DATASET_FILE)).expect("dataset");
    let all: Vec<usize> = (0..ds.rows.len()).collect();
    let (rounds, worst_rise) = gbdt_monotone_oracle(&mut rng, &Samples::from_dataset(&ds, &all));
    let util: Vec<f64> = eval.ml.rows.iter().map(|r| r.util).collect();
    let (n_windows, feat_err) = feature_oracle(&mut rng, &util);
    for f in tree_failures.iter().take(5) {
        let _ = writeln!(std::io::stdout().lock(), "    {f}");
    }
    let ok = tree_failures.is_empty() && grad_err < 1e-5 && worst_rise <= 0.0 && feat_err <= 1e-12;
    gate.record(
        7,
        ok,
        format!(
            "root split matches brute force on {}/100 datasets ({with_split} with a split); MLP gradient rel err {grad_err:.2e} (< 1e-5); GBDT max per-round loss change {worst_rise:+.2e} over {rounds} rounds (<= 0); features max abs err {feat_err:.1e} over {n_windows} windows (<= 1e-12)",
            100 - tree_failures.len()
        ),
    );
}

// ---------------------------------------------------------------- criterion 8

fn pick<T: Copy>(rng: &mut ChaCha8Rng, items: &[T]) -> T {
    items[rng.random_range(0..items.len())]
}

/// The demo spec with each field replaced by a hostile or random value
/// with probability 0.3.
fn fuzz_spec(rng: &mut ChaCha8Rng) -> ProvisioningSpec {
    let mut spec = ProvisioningSpec::demo();
    let mutate = |rng: &mut ChaCha8Rng| rng.random_bool(0.3);
    let fraction = if !mutate(rng) {
        rng.random_range(0.01..=0.5)
    } else if rng.random_bool(0.5) {
        rng.random_range(-1.0..2.0)
    } else {
        pick(rng, &[f64::NAN, f64::INFINITY, f64::NEG_INFINITY, 0.0, -0.0, 0.5, 0.5f64.next_up(), 5e-324, 1e-300, 0.49999999])
    };
    if mutate(rng) {
        spec.label_rule.threshold_fraction = if rng.random_bool(0.5) {
            rng.random_range(-0.5..1.5)
        } else {
            pick(rng, &[0.0, 1.0, f64::NAN, 1e-12, 0.999999])
        };
    }
    if mutate(rng) {
        spec.label_rule.horizon_intervals =
            if rng.random_bool(0.5) { rng.random_range(0..1_500) } else { pick(rng, &[0, 1, 998, 999, 1000, u32::MAX]) };
    }
    if mutate(rng) {
        spec.granularity_ms =
            if rng.random_bool(0.5) { rng.random_range(0..70_000) } else { pick(rng, &[0, 1, 60_000, 60_001, u32::MAX]) };
    }
    if mutate(rng) {
        spec.latency_budget_ms = if rng.random_bool(0.5) {
            rng.random_range(-1.0..20.0)
        } else {
            pick(rng, &[f64::NAN, -1.0, 0.0, 1e-9, 10.0, 10.0f64.next_up(), f64::INFINITY])
        };
    }
    if mutate(rng) {
        spec.metrics = [Metric::PrbAllocation, Metric::Snr, Metric::Bler].into_iter().filter(|_| rng.random_bool(0.6)).collect();
    }
    spec.action = (!mutate(rng) || rng.random_bool(0.5)).then(|| ActionSpec {
        kind: ActionType::ReservePrb,
        fraction,
        target_class: pick(rng, &[TargetClass::Edge, TargetClass::Center, TargetClass::All]),
    });
    spec
}

/// Independent statement of which specs and artifacts must be accepted.
fn should_register(spec: &ProvisioningSpec, artifact: &ModelArtifact) -> bool {
    let thr = spec.label_rule.threshold_fraction;
    let action_ok = spec.action.is_none_or(|a| {
        a.fraction > 0.0 && a.fraction <= 0.5 && u64::from(spec.label_rule.horizon_intervals) + 1 <= 1000
    });
    action_ok
        && thr > 0.0
        && thr < 1.0
        && spec.latency_budget_ms > 0.0
        && spec.latency_budget_ms <= 10.0
        && (1..=60_000).contains(&spec.granularity_ms)
        && spec.metrics.contains(&Metric::PrbAllocation)
        && (0.0..=1.0).contains(&artifact.threshold)
        && (2..=600).contains(&artifact.window_len)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Tamper {
    None,
    StaleInMemoryModel,
    CorruptFileAfterRender,
    SwapFileAfterRender,
    RaiseFraction,
    InjectPlaceholder,
    WrongChecksum,
    EscapePath,
    EditBody,
    WindowMismatch,
}

const TAMPERS: [Tamper; 10] = [
    Tamper::None,
    Tamper::StaleInMemoryModel,
    Tamper::CorruptFileAfterRender,
    Tamper::SwapFileAfterRender,
    Tamper::RaiseFraction,
    Tamper::InjectPlaceholder,
    Tamper::WrongChecksum,
    Tamper::EscapePath,
    Tamper::EditBody,
    Tamper::WindowMismatch,
];

fn tamper_descriptor(d: &mut XAppDescriptor, t: Tamper, rng: &mut ChaCha8Rng, dir: &Path) {
    match t {
        Tamper::CorruptFileAfterRender => {
            let p = dir.join(MODEL_FILE);
            let mut bytes = read(&p);
            let i = rng.random_range(0..bytes.len());
            bytes[i] ^= 1 << rng.random_range(0..8);
            std::fs::write(&p, bytes).unwrap();
        }
        Tamper::SwapFileAfterRender => {
            let mut other = ModelArtifact::constant(0.9, d.window_len);
            other.threshold = d.decision_threshold;
            export_artifact(&mut other, &dir.join(MODEL_FILE)).unwrap();
        }
        Tamper::RaiseFraction => {
            let f = rng.random_range(0.5f64.next_up()..1.0);
            let old = d.action.map_or(0.0, |a| a.fraction);
            d.rendered_body = d.rendered_body.replace(&format!("\"fraction\": {old}"), &format!("\"fraction\": {f}"));
            match &mut d.action {
                Some(a) => a.fraction = f,
                None => {
                    d.action = Some(ricforge::ricsim::ActionPolicy {
                        kind: ActionType::ReservePrb,
                        fraction: f,
                        target_class: TargetClass::Edge,
                        ttl_intervals: 3,
                    })
                }
            }
        }
        Tamper::InjectPlaceholder => {
            let at = d.rendered_body.rfind('}').unwrap();
            let insert = pick(rng, &[",\n  \"extra\": \"{{extra}}\"\n", ",\"x\":\"{{xapp_id}}\"", ",\"y\":\"{{\""]);
            d.rendered_body.insert_str(at, insert);
        }
        Tamper::WrongChecksum => {
            let mut c: Vec<u8> = d.model_ref.sha256.bytes().collect();
            c[0] = if c[0] == b'0' { b'1' } else { b'0' };
            d.model_ref.sha256 = String::from_utf8(c).unwrap();
        }
        Tamper::EscapePath => {
            std::fs::create_dir_all(dir.join("sub")).unwrap();
            std::fs::copy(dir.join(MODEL_FILE), dir.join("sub").join(MODEL_FILE)).unwrap();
            let abs = dir.join(MODEL_FILE).display().to_string();
            let path = pick(rng, &["../model.ormdl", "sub/../model.ormdl", "./model.ormdl", abs.as_str()]).to_string();
            d.rendered_body = d.rendered_body.replace(&format!("\"path\": \"{}\"", d.model_ref.path), &format!("\"path\": \"{path}\""));
            d.model_ref.path = path;
        }
        Tamper::EditBody => {
            let from = format!("\"decision_threshold\": {}", d.decision_threshold);
            d.rendered_body = d.rendered_body.replace(&from, "\"decision_threshold\": 0.01");
            if d.decision_threshold == 0.01 {
                d.rendered_body = d.rendered_body.replace("\"decision_threshold\": 0.01", "\"decision_threshold\": 0.02");
            }
        }
        Tamper::WindowMismatch => d.window_len += 1,
        Tamper::None | Tamper::StaleInMemoryModel => {}
    }
}

struct FuzzStats {
    registered: usize,
    violations: Vec<String>,
    false_rejections: Vec<String>,
}

fn guardrail_fuzz(cases: usize, seed: u64) -> FuzzStats {
    let template = XAppTemplate::builtin();
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = FuzzStats { registered: 0, violations: Vec::new(), false_rejections: Vec::new() };
    for case in 0..cases {
        let spec = fuzz_spec(&mut rng);
        let window = if rng.random_bool(0.8) { 10 } else { pick(&mut rng, &[2, 600, 601, 1, 0]) };
        let mut artifact = ModelArtifact::constant(rng.random(), window);
        if rng.random_bool(0.2) {
            artifact.threshold = pick(&mut rng, &[0.0, 1.0, -0.1, 1.5, f64::NAN, f64::INFINITY]);
        }
        let _ = std::fs::remove_dir_all(dir.join("sub"));
        export_artifact(&mut artifact, &dir.join(MODEL_FILE)).unwrap();
        let tamper = if rng.random_bool(0.4) { Tamper::None } else { pick(&mut rng, &TAMPERS) };
        if tamper == Tamper::StaleInMemoryModel {
            artifact.threshold = if artifact.threshold == 0.25 { 0.3 } else { 0.25 };
        }
        let loc = ModelLocation { base_dir: dir, rel_path: MODEL_FILE };
        let harness = RicHarness::new();
        let outcome = render_xapp(&template, &spec, &artifact, loc).map_err(|e| e.to_string()).and_then(|mut d| {
            tamper_descriptor(&mut d, tamper, &mut rng, dir);
            register_xapp(&d, &template, &harness, dir, false).map_err(|e| e.to_string())
        });
        let expected = tamper == Tamper::None && should_register(&spec, &artifact);
        match outcome {
            Ok(handle) => {
                stats.registered += 1;
                let desc = handle.descriptor.as_ref().expect("registered xApps carry a descriptor");
                let mut problems = Vec::new();
                if let Some(a) = &handle.action {
                    if !(a.fraction > 0.0 && a.fraction <= 0.5) {
                        problems.push(format!("fraction {}", a.fraction));
                    }
                }
                if desc.rendered_body.contains("{{") || desc.rendered_body.contains("}}") {
                    problems.push("unresolved placeholder".into());
                }
                let bytes = read(&dir.join(&desc.model_ref.path));
                if hex::encode(Sha256::digest(&bytes)) != desc.model_ref.sha256 {
                    problems.push("model checksum mismatch".into());
                }
                match (&handle.model, load_artifact(&dir.join(&desc.model_ref.path))) {
                    (XAppModel::Artifact(live), Ok(on_disk)) if *live == on_disk => {}
                    _ => problems.push("live model differs from the referenced file".into()),
                }
                if !expected {
                    problems.push(format!("accepted although it should fail ({tamper:?})"));
                }
                if harness.len() != 1 {
                    problems.push(format!("{} live xApps", harness.len()));
                }
                if !problems.is_empty() {
                    stats.violations.push(format!("case {case}: {}", problems.join(", ")));
                }
            }
            Err(e) => {
                if !harness.is_empty() {
                    stats.violations.push(format!("case {case}: failed ({e}) but left {} xApp(s) registered", harness.len()));
                }
                if expected {
                    stats.false_rejections.push(format!("case {case}: {e}"));
                }
            }
        }
    }
    stats
}

fn criterion_8(gate: &mut Gate) {
    let start = Instant::now();
    let stats = guardrail_fuzz(FUZZ_CASES, 8);
    for v in stats.violations.iter().chain(&stats.false_rejections).take(5) {
        let _ = writeln!(std::io::stdout().lock(), "    {v}");
    }
    let ok = stats.violations.is_empty() && stats.false_rejections.is_empty();
    gate.record(
        8,
        ok,
        format!(
            "{FUZZ_CASES} fuzz cases in {:.1} s: {} registered, {} guardrail violations (== 0), {} valid cases rejected",
            start.elapsed().as_secs_f64(),
            stats.registered,
            stats.violations.len(),
            stats.false_rejections.len()
        ),
    );
}

// ---------------------------------------------------------------- criterion 9

fn criterion_9(gate: &mut Gate, run: &ProvisionResult) {
    let text = IntentText::new(DEMO_INTENT).unwrap();
    let IntentOutcome::Spec(rule_spec) = parse_intent(&text) else { panic!("rule backend asked for clarification") };

    // The remote reply lists metrics in another order, inside a code fence.
    let remote_json = "```json\n{\"action\": {\"target_class\": \"edge\", \"fraction\": 0.2, \"type\": \"reserve_prb\"}, \
        \"latency_budget_ms\": 10, \"label_rule\": {\"horizon_intervals\": 2, \"threshold_fraction\": 0.80}, \
        \"granularity_ms\": 100, \"metrics\": [\"snr\", \"prb_allocation\"], \"task\": \"congestion_prediction\"}\n```";
    let server = MockServer::start(vec![Reply::content(remote_json)]);
    let cfg = RemoteBackendConfig { base_url: server.url.clone(), ..RemoteBackendConfig::default() };
    let mut remote = RemoteBackend::new(cfg);
    let remote_outcome = remote.parse(&text).expect("mock backend answers");
    let _ = server.finish();
    let IntentOutcome::Spec(remote_spec) = remote_outcome else { panic!("remote backend asked for clarification") };

    let artifact = load_artifact(&run.artifact_path).expect("artifact");
    let render_in = |spec: &ProvisioningSpec, sub: &str| -> (PathBuf, String) {
        let dir = run.run_dir.parent().unwrap().join(sub);
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::copy(&run.artifact_path, dir.join(MODEL_FILE)).unwrap();
        let d = render_xapp(&XAppTemplate::builtin(), spec, &artifact, ModelLocation { base_dir: &dir, rel_path: MODEL_FILE })
            .expect("render");
        (dir, d.to_json())
    };
    let (_, from_rule) = render_in(&rule_spec, "consistency-rule");
    let (_, from_remote) = render_in(&remote_spec, "consistency-remote");
    let provisioned = String::from_utf8(read(&run.run_dir.join(DESCRIPTOR_FILE))).unwrap();
    let ok = rule_spec == remote_spec && from_rule == from_remote && from_rule == provisioned;
    gate.record(
        9,
        ok,
        format!(
            "specs equal: {}; rule vs mocked-remote descriptors byte-identical: {} ({} B, sha256 {}); equal to the provisioned descriptor: {}",
            rule_spec == remote_spec,
            from_rule == from_remote,
            from_rule.len(),
            &hex::encode(Sha256::digest(from_rule.as_bytes()))[..12],
            from_rule == provisioned
        ),
    );
}

// --------------------------------------------------------------- criterion 10

fn criterion_10(gate: &mut Gate, run: &ProvisionResult) {
    let phases: Vec<Phase> = run.timings.iter().map(|t| t.phase).collect();
    let sum = total_ms(&run.timings);
    let wall = run.manifest.total_wall_ms;
    let parse_ms = run.timings.first().map_or(f64::INFINITY, |t| t.wall_ms);
    let ok = phases == Phase::ALL && (wall - sum).abs() <= 1.0 && parse_ms < 1.0 && run.manifest.backend == "rule";
    let listing: Vec<String> = run.timings.iter().map(|t| format!("{}={:.3}", t.phase, t.wall_ms)).collect();
    gate.record(
        10,
        ok,
        format!(
            "phases in order: {}; sum {sum:.3} ms vs wall {wall:.3} ms (|diff| {:.3} <= 1 ms); intent_parse {parse_ms:.4} ms (< 1 ms) [{}]",
            phases == Phase::ALL,
            (wall - sum).abs(),
            listing.join(" ")
        ),
    );
}

#[test]
fn acceptance_criteria() {
    let root = tempfile::tempdir().unwrap();
    let mut gate = Gate { results: Vec::new() };

    let t0 = Instant::now();
    let a = provision_demo(&root.path().join("a"), true);
    let elapsed_a = t0.elapsed().as_secs_f64();
    let eval = evaluate_deployment(&a.run_dir, None).expect("evaluation");

    criterion_1(&mut gate, &a, elapsed_a);
    criterion_2(&mut gate, &a, &eval);
    criterion_3(&mut gate, &eval);
    criterion_4(&mut gate, &a, &eval);
    criterion_5(&mut gate, &eval);

    let b = provision_demo(&root.path().join("b"), false);
    let c = provision_demo(&root.path().join("c"), true);
    criterion_6(&mut gate, &[("parallel#1", &a), ("sequential", &b), ("parallel#2", &c)]);

    criterion_7(&mut gate, &a, &eval);
    criterion_8(&mut gate);
    criterion_9(&mut gate, &a);
    criterion_10(&mut gate, &a);

    let failed: Vec<u8> = gate.results.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    let _ = writeln!(
        std::io::stdout().lock(),
        "acceptance: {}/{} criteria passed",
        gate.results.len() - failed.len(),
        gate.results.len()
    );
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
