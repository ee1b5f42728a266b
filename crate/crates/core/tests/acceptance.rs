//! Acceptance suite. Runs every criterion at its stated tolerance and time
//! budget, printing one PASS/FAIL line each, then fails if any criterion did.
//!
//! Run with `cargo test -p fids-core --test acceptance -- --nocapture`.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use fids_core::dataio::{load_csv_with_report, partition, train_test_split, ColumnSchema, Dataset, LabelMap};
use fids_core::federation::{
    decode_frame, encode_frame, reports_to_rows, scan_transcript, serialize_model, simulate, ModelEnvelope, MsgType,
    RoundConfig, TransportKind,
};
use fids_core::gbdt::{fit, fit_traced, grid_search, logloss, GbdtModel, GbdtParams, GridSpec};
use fids_core::metrics::{percent_3dp, write_rounds_csv, ConfusionMatrix, MetricSummary};
use fids_core::preprocess::{
    average_path_length, fit_isolation_forest, k_nearest_in_class, remove_outliers, score_from_mean_depth,
    smote_resample, SmoteConfig,
};
use fids_core::rng;
use fids_core::synth::{gaussian_blobs, numbered_labels, BlobSpec};

const EDGE1_MATRIX: [[u64; 7]; 7] = [
    [2491, 90, 111, 80, 7, 4, 63],
    [4, 2616, 0, 0, 0, 0, 0],
    [28, 0, 2621, 2, 0, 0, 21],
    [26, 1, 5, 2416, 2, 0, 4],
    [12, 0, 0, 0, 1197, 0, 0],
    [3, 0, 0, 6, 0, 2737, 0],
    [37, 0, 134, 2, 0, 1, 2430],
];

const EDGE2_MATRIX: [[u64; 7]; 7] = [
    [602, 23, 32, 17, 2, 0, 3],
    [0, 652, 0, 0, 0, 0, 0],
    [6, 0, 643, 0, 0, 0, 5],
    [6, 0, 3, 615, 0, 0, 4],
    [1, 0, 0, 0, 303, 0, 0],
    [1, 0, 0, 1, 0, 631, 0],
    [10, 0, 28, 1, 0, 0, 610],
];

const SERVER_MATRIX: [[u64; 7]; 7] = [
    [631, 26, 18, 32, 4, 1, 10],
    [1, 629, 0, 0, 1, 0, 0],
    [16, 0, 623, 1, 0, 0, 2],
    [16, 0, 1, 596, 0, 0, 1],
    [5, 0, 0, 0, 299, 0, 0],
    [2, 0, 0, 2, 0, 643, 0],
    [17, 0, 21, 1, 0, 0, 610],
];

type Outcome = Result<String, String>;

fn matrix(t: &[[u64; 7]; 7]) -> ConfusionMatrix {
    ConfusionMatrix::from_rows(&t.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

fn check(ok: bool, what: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn within(name: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    check((got - want).abs() <= tol, format!("{name} = {got:.6}, want {want} +/- {tol}"))
}

fn criterion_1() -> Outcome {
    let e2 = MetricSummary::from_matrix(&matrix(&EDGE2_MATRIX)).map_err(|e| e.to_string())?;
    check(percent_3dp(e2.accuracy) == "96.594", format!("edge-2 matrix accuracy {}%", percent_3dp(e2.accuracy)))?;
    within("edge-2 matrix precision", e2.precision, 0.9689, 0.0005)?;
    within("edge-2 matrix recall", e2.recall, 0.9689, 0.0005)?;
    within("edge-2 matrix kappa", e2.kappa, 0.9600, 0.0005)?;
    let e1 = MetricSummary::from_matrix(&matrix(&EDGE1_MATRIX)).map_err(|e| e.to_string())?;
    check(percent_3dp(e1.accuracy) == "96.251", format!("edge-1 matrix accuracy {}%", percent_3dp(e1.accuracy)))?;
    within("edge-1 matrix precision", e1.precision, 0.9654, 0.001)?;
    within("edge-1 matrix kappa", e1.kappa, 0.956, 0.001)?;
    Ok(format!(
        "edge-2 matrix: acc {}% P {:.4} R {:.4} kappa {:.4}; edge-1 matrix: acc {}% P {:.4} kappa {:.4}",
        percent_3dp(e2.accuracy),
        e2.precision,
        e2.recall,
        e2.kappa,
        percent_3dp(e1.accuracy),
        e1.precision,
        e1.kappa
    ))
}

fn criterion_2() -> Outcome {
    // The quoted figure for this matrix (95.999%) does not follow from it; only
    // the matrix-derived value is asserted.
    let m = matrix(&SERVER_MATRIX);
    let s = MetricSummary::from_matrix(&m).map_err(|e| e.to_string())?;
    check(m.trace() == 4031 && m.total() == 4209, "server matrix trace/total")?;
    within("server matrix accuracy", s.accuracy, 0.9577, 0.00005)?;
    check(percent_3dp(s.accuracy) == "95.771", format!("server matrix accuracy {}%", percent_3dp(s.accuracy)))?;
    Ok(format!("server matrix gives {}% (quoted 95.999% treated as erratum)", percent_3dp(s.accuracy)))
}

fn on_segment(s: &[f64], a: &[f64], b: &[f64]) -> bool {
    let tol = 1e-9;
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    let axis = (0..diff.len()).max_by(|&i, &j| diff[i].abs().total_cmp(&diff[j].abs())).unwrap();
    if diff[axis].abs() < tol {
        return s.iter().zip(a).all(|(x, y)| (x - y).abs() < tol);
    }
    let u = (s[axis] - a[axis]) / diff[axis];
    (-tol..=1.0 + tol).contains(&u)
        && s.iter().zip(a).zip(&diff).all(|((v, x), d)| (v - (x + u * d)).abs() < 1e-7 * (1.0 + x.abs() + d.abs()))
}

fn criterion_3() -> Outcome {
    let mut synthetic_total = 0;
    for trial in 0..40u64 {
        let mut r = rng::stream(3, &[trial]);
        let d = r.random_range(1..=8);
        let k_classes = r.random_range(2..=4);
        let counts: Vec<usize> = (0..k_classes).map(|_| r.random_range(2..=120)).collect();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                rows.push((0..d).map(|_| r.random_range(-10.0..10.0)).collect::<Vec<f64>>());
                labels.push(c);
            }
        }
        let schema = ColumnSchema::new((0..d).map(|i| format!("f{i}")).collect(), "Label").unwrap();
        let data = Dataset::from_rows(schema, numbered_labels(k_classes), rows, labels).unwrap();
        let budget = 500 - data.n_rows();
        let targets: BTreeMap<usize, usize> = counts
            .iter()
            .enumerate()
            .map(|(c, &n)| (c, n + r.random_range(0..=budget / k_classes)))
            .collect();
        let k = r.random_range(1..=6);
        let out = smote_resample(&data, &SmoteConfig::new(targets.clone(), k, trial).unwrap())
            .map_err(|e| e.to_string())?;
        check(out.n_rows() <= 500, "fixture exceeds 500 rows")?;
        for (&c, &t) in &targets {
            check(out.class_counts()[c] == t, format!("trial {trial}: class {c} has {}, target {t}", out.class_counts()[c]))?;
        }
        let groups = data.class_indices();
        let nn: Vec<Vec<usize>> =
            (0..data.n_rows()).map(|i| k_nearest_in_class(&data, &groups[data.label(i)], i, k)).collect();
        for i in data.n_rows()..out.n_rows() {
            let s = out.row(i);
            let ok = groups[out.label(i)].iter().any(|&x| nn[x].iter().any(|&n| on_segment(s, data.row(x), data.row(n))));
            check(ok, format!("trial {trial}: synthetic row {i} fails the neighbour-segment predicate"))?;
            synthetic_total += 1;
        }
    }
    Ok(format!("40 fixtures, {synthetic_total}/{synthetic_total} synthetic rows satisfy the predicate"))
}

fn criterion_4() -> Outcome {
    let mut strict_top = 0;
    for trial in 0..100u64 {
        let mut r = rng::stream(4, &[trial]);
        let d = 4;
        let n = 400;
        let mut rows: Vec<Vec<f64>> =
            (0..n).map(|_| (0..d).map(|_| StandardNormal.sample(&mut r)).collect()).collect();
        // One row moved 10 sigma out in every coordinate, signs at random.
        let planted = r.random_range(0..n);
        rows[planted] = (0..d).map(|_| if r.random::<bool>() { 10.0 } else { -10.0 }).collect();
        let schema = ColumnSchema::new((0..d).map(|i| format!("f{i}")).collect(), "Label").unwrap();
        let data = Dataset::from_rows(schema, numbered_labels(1), rows, vec![0; n]).unwrap();
        let forest = fit_isolation_forest(&data, 100, 256, trial).map_err(|e| e.to_string())?;
        let scores: Vec<f64> = data.rows().map(|x| forest.score(x)).collect();
        check(scores.iter().all(|&s| s > 0.0 && s < 1.0), format!("trial {trial}: score outside (0, 1)"))?;
        if (0..n).all(|i| i == planted || scores[i] < scores[planted]) {
            strict_top += 1;
        }
    }
    check(strict_top >= 99, format!("outlier ranked strictly first in {strict_top}/100 trials"))?;
    for psi in [2usize, 16, 256] {
        let s = score_from_mean_depth(average_path_length(psi), psi);
        within(&format!("s(E[h] = c({psi}))"), s, 0.5, 1e-12)?;
    }
    Ok(format!("outlier strictly highest in {strict_top}/100 trials; s = 0.5 at E[h] = c(psi)"))
}

fn accuracy_of(model: &GbdtModel, data: &Dataset) -> f64 {
    let ok = data.rows().zip(data.labels()).filter(|(x, &y)| model.predict(x).unwrap() == y).count();
    ok as f64 / data.n_rows() as f64
}

fn criterion_5() -> Outcome {
    // Loss monotonicity on several fixtures and settings.
    let fixtures = [
        gaussian_blobs(&BlobSpec::balanced(7, 60, 1), numbered_labels(7)).unwrap(),
        gaussian_blobs(&BlobSpec { separation: 1.0, ..BlobSpec::balanced(3, 80, 2) }, numbered_labels(3)).unwrap(),
        gaussian_blobs(&BlobSpec { class_counts: vec![200, 15, 40], ..BlobSpec::balanced(3, 1, 3) }, numbered_labels(3))
            .unwrap(),
    ];
    for (i, data) in fixtures.iter().enumerate() {
        for (depth, lr) in [(1, 1.0), (3, 0.5), (6, 1.0)] {
            let p = GbdtParams { depth, iterations: 60, learning_rate: lr, ..GbdtParams::default() };
            let trace = fit_traced(data, &p).map_err(|e| e.to_string())?;
            let ok = trace.loss_history.windows(2).all(|w| w[1] <= w[0]);
            check(ok, format!("fixture {i} depth {depth} lr {lr}: training loss increased"))?;
        }
    }

    let balanced = gaussian_blobs(&BlobSpec::balanced(7, 10, 4), numbered_labels(7)).unwrap();
    let uniform = fit(&balanced, &GbdtParams { iterations: 0, ..GbdtParams::default() });
    // A zero-iteration fit is rejected by validation; build the prior-only model directly.
    let uniform = match uniform {
        Ok(m) => m,
        Err(_) => GbdtModel::from_parts(
            GbdtParams { iterations: 1, ..GbdtParams::default() },
            7,
            balanced.n_features(),
            vec![(1.0f64 / 7.0).ln(); 7],
            vec![fids_core::gbdt::RegressionTree::leaf(0.0); 7],
        )
        .map_err(|e| e.to_string())?,
    };
    let ll = logloss(&uniform, &balanced).map_err(|e| e.to_string())?;
    within("uniform log-loss", ll, 7f64.ln(), 1e-9)?;

    let data = gaussian_blobs(&BlobSpec::balanced(7, 500, 5), numbered_labels(7)).unwrap();
    check(data.n_rows() == 3500, "blob fixture size")?;
    let p = GbdtParams { depth: 4, iterations: 30, seed: 9, ..GbdtParams::default() };
    let a = serialize_model(&fit(&data, &p).map_err(|e| e.to_string())?);
    let b = serialize_model(&fit(&data, &p).map_err(|e| e.to_string())?);
    check(a == b, "two fits with one seed serialise differently")?;

    let split = train_test_split(&data, 0.8, 5).map_err(|e| e.to_string())?;
    let tuned = grid_search(&split.train, &GridSpec::default(), 0.25, 5).map_err(|e| e.to_string())?;
    check(tuned.report.len() == 100, format!("grid evaluated {} combinations", tuned.report.len()))?;
    let base = fit(&split.train, &GbdtParams::default()).map_err(|e| e.to_string())?;
    let (acc_tuned, acc_base) = (accuracy_of(&tuned.model, &split.test), accuracy_of(&base, &split.test));
    check(acc_tuned >= 0.95, format!("tuned held-out accuracy {acc_tuned:.4} < 0.95"))?;
    let base_params = GbdtParams::default();
    let base_val = tuned
        .report
        .iter()
        .find(|e| {
            (e.params.depth, e.params.iterations, e.params.learning_rate)
                == (base_params.depth, base_params.iterations, base_params.learning_rate)
        })
        .map_or(f64::NAN, |e| e.accuracy());
    let tuned_val = tuned.report.iter().map(|e| e.accuracy()).fold(0.0, f64::max);
    let rows_apart = ((acc_base - acc_tuned) * split.test.n_rows() as f64).round();
    check(
        acc_tuned >= acc_base,
        format!(
            "held-out: tuned {acc_tuned:.4} below base {acc_base:.4} ({rows_apart} of {} rows); \
             validation slice: tuned {tuned_val:.4}, base {base_val:.4}",
            split.test.n_rows()
        ),
    )?;
    Ok(format!(
        "loss monotone on 9 runs; uniform log-loss {ll:.12}; identical bytes; tuned {acc_tuned:.4} ({:?}) >= base {acc_base:.4}",
        (tuned.best_params.depth, tuned.best_params.iterations, tuned.best_params.learning_rate)
    ))
}

/// A grid small enough for the protocol and privacy budgets.
fn quick_grid() -> GridSpec {
    GridSpec { depths: vec![3, 4], iterations: vec![25, 50], learning_rates: vec![0.5, 1.0] }
}

fn blob_parts(seed: u64) -> Vec<Dataset> {
    let data = gaussian_blobs(&BlobSpec::balanced(7, 500, seed), numbered_labels(7)).unwrap();
    partition(&data, 3, seed).unwrap()
}

fn criterion_6() -> Outcome {
    let mut r = rng::stream(6, &[]);
    for i in 0..10_000 {
        let kind = r.random_range(1..=4u8);
        let len = if kind <= 2 { r.random_range(0..200) } else { 0 };
        let env = ModelEnvelope {
            msg_type: MsgType::try_from(kind).unwrap(),
            device_id: r.random(),
            round: r.random(),
            payload: (0..len).map(|_| r.random()).collect(),
        };
        check(decode_frame(&encode_frame(&env)).as_ref() == Ok(&env), format!("envelope {i} did not round-trip"))?;
    }
    let ack = encode_frame(&ModelEnvelope::ack(1, 1));
    check(ack.len() == 27, format!("ack frame is {} bytes", ack.len()))?;

    let small = gaussian_blobs(&BlobSpec::balanced(3, 30, 6), numbered_labels(3)).unwrap();
    let model = fit(&small, &GbdtParams { iterations: 3, ..GbdtParams::default() }).map_err(|e| e.to_string())?;
    let frame = encode_frame(&ModelEnvelope::model_update(1, 1, &model));
    for cut in 0..frame.len() {
        check(decode_frame(&frame[..cut]).is_err(), format!("prefix of length {cut} accepted"))?;
    }

    let parts = blob_parts(6);
    let cfg = RoundConfig { max_rounds: 2, grid: quick_grid(), seed: 6, ..RoundConfig::default() };
    let inproc = simulate(&parts, &cfg, TransportKind::InProcess).map_err(|e| e.to_string())?;
    let tcp = simulate(&parts, &cfg, TransportKind::Tcp { port: 0 }).map_err(|e| e.to_string())?;
    let (a, b) = (write_rounds_csv(&reports_to_rows(&inproc.reports)), write_rounds_csv(&reports_to_rows(&tcp.reports)));
    check(a == b, "tcp and in-process rounds.csv differ")?;
    check(inproc.transcript == tcp.transcript, "tcp and in-process transcripts differ")?;
    Ok(format!(
        "10000 envelopes round-trip; ack = 27 bytes; {} prefixes rejected; rounds.csv identical ({} bytes)",
        frame.len(),
        a.len()
    ))
}

fn criterion_7() -> Outcome {
    let parts = blob_parts(7);
    let cfg = RoundConfig { max_rounds: 3, grid: quick_grid(), seed: 7, ..RoundConfig::default() };
    let out = simulate(&parts, &cfg, TransportKind::InProcess).map_err(|e| e.to_string())?;
    let rows: usize = parts.iter().map(Dataset::n_rows).sum();
    for p in &parts {
        if let Some(first) = scan_transcript(&out.transcript, p).first() {
            return Err(format!("row {} found in the transcript at byte {}", first.row, first.offset));
        }
    }
    Ok(format!("{} transcript bytes scanned against {rows} rows: no matches", out.transcript.len()))
}

fn criterion_8() -> Outcome {
    let parts = blob_parts(8);
    let cfg = RoundConfig { max_rounds: 3, seed: 8, ..RoundConfig::default() };
    let out = simulate(&parts, &cfg, TransportKind::InProcess).map_err(|e| e.to_string())?;
    let rows = reports_to_rows(&out.reports);
    check(rows.len() == 9, format!("{} metric rows", rows.len()))?;
    let last = out.reports.last().unwrap();
    let ensemble = last.devices.iter().find(|d| d.device == "server").unwrap().metrics.accuracy;
    check(ensemble >= 0.90, format!("ensemble accuracy {ensemble:.4}"))?;
    let mut widest: f64 = 0.0;
    for r in &out.reports {
        let accs: Vec<f64> = r.devices.iter().map(|d| d.metrics.accuracy).collect();
        let spread = accs.iter().cloned().fold(f64::MIN, f64::max) - accs.iter().cloned().fold(f64::MAX, f64::min);
        widest = widest.max(spread);
        check(spread <= 0.05, format!("round {}: device accuracies {accs:?} span {spread:.4}", r.round))?;
    }
    Ok(format!("9 rows; final ensemble accuracy {ensemble:.4}; widest per-round spread {:.2} points", widest * 100.0))
}

/// Optional: set `FIDS_CICIDS2017_CSV` to a CIC-IDS 2017 CSV with the seven
/// grouped labels to run the full-scale reproduction.
fn criterion_9() -> Option<Outcome> {
    let path = std::env::var("FIDS_CICIDS2017_CSV").ok()?;
    Some((|| {
        let (data, report) = load_csv_with_report(&path, &ColumnSchema::auto("Label"), &LabelMap::cic_ids2017())
            .map_err(|e| e.to_string())?;
        let (clean, _) = remove_outliers(&data, 0.05, 100, 256, 9).map_err(|e| e.to_string())?;
        let parts = partition(&clean, 3, 9).map_err(|e| e.to_string())?;
        let cfg = RoundConfig { max_rounds: 1, seed: 9, ..RoundConfig::default() };
        let out = simulate(&parts, &cfg, TransportKind::InProcess).map_err(|e| e.to_string())?;
        let published = [("edge1", 0.96251), ("edge2", 0.96594), ("server", 0.95999)];
        let mut notes = vec![format!("{} rows kept", report.rows_kept())];
        for d in &out.reports[0].devices {
            let acc = d.metrics.accuracy;
            check((0.90..=1.0).contains(&acc), format!("{} accuracy {acc:.4} outside [0.90, 1.00]", d.device))?;
            let quoted = published.iter().find(|(n, _)| *n == d.device).map(|p| p.1).unwrap_or(f64::NAN);
            notes.push(format!("{} {:.3}% (quoted {:.3}%)", d.device, acc * 100.0, quoted * 100.0));
        }
        Ok(notes.join("; "))
    })())
}

#[test]
fn acceptance_criteria() {
    type Criterion = (u32, &'static str, Duration, fn() -> Outcome);
    let criteria: [Criterion; 8] = [
        (1, "metrics golden oracle", Duration::from_secs(1), criterion_1),
        (2, "errata handling", Duration::from_secs(1), criterion_2),
        (3, "SMOTE properties", Duration::from_secs(10), criterion_3),
        (4, "isolation forest", Duration::from_secs(30), criterion_4),
        (5, "GBDT", Duration::from_secs(60), criterion_5),
        (6, "protocol", Duration::from_secs(30), criterion_6),
        (7, "privacy", Duration::from_secs(30), criterion_7),
        (8, "end-to-end run", Duration::from_secs(120), criterion_8),
    ];
    let mut failed = Vec::new();
    for (id, name, budget, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let outcome = outcome.and_then(|msg| {
            if took <= budget {
                Ok(msg)
            } else {
                Err(format!("{msg}; took {took:.1?}, budget {budget:?}"))
            }
        });
        match outcome {
            Ok(msg) => println!("PASS criterion {id} ({name}) [{took:.2?}]: {msg}"),
            Err(msg) => {
                println!("FAIL criterion {id} ({name}) [{took:.2?}]: {msg}");
                failed.push(id);
            }
        }
    }
    match criterion_9() {
        None => println!(
            "SKIP criterion 9 (full-scale reproduction): needs the external CIC-IDS 2017 CSV; set FIDS_CICIDS2017_CSV to run"
        ),
        Some(Ok(msg)) => println!("PASS criterion 9 (full-scale reproduction): {msg}"),
        Some(Err(msg)) => {
            println!("FAIL criterion 9 (full-scale reproduction): {msg}");
            failed.push(9);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
