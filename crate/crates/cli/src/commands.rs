use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::net::ToSocketAddrs;
use std::path::{Path, PathBuf};

use fids_core::dataio::{class_histogram, discover_labels, load_csv, load_csv_with_report, partition, write_csv_file};
use fids_core::federation::{
    device_name, reports_to_rows, run_edge, run_server, serialize_ensemble, serialize_model, simulate,
    split_for_device, EdgeOutcome, ServerOutcome, StopReason, TcpConnector, TcpFrameListener, TransportKind,
    SERVER_DEVICE_ID,
};
use fids_core::metrics::{confusion, parse_rounds_csv, render_matrix, write_rounds_csv, MetricsRow};
use fids_core::preprocess::{remove_outliers, smote_resample};
use fids_core::rng::derive_seed;
use fids_core::synth::{cic_ids2017_like, gaussian_blobs, numbered_labels, BlobSpec};
use fids_core::{
    ColumnSchema, Dataset, EnsembleModel, GbdtModel, LabelMap, MetricSummary, RoundConfig, SmoteConfig,
};

use crate::config::{RunConfig, Transport};
use crate::error::CliError;
use crate::svg;

pub const PART_FILES: [&str; 3] = ["part1.csv", "part2.csv", "part_server.csv"];
pub const LABELS_FILE: &str = "labels.txt";
pub const MODELS_DIR: &str = "final_models";

const SMOTE_STREAM: u64 = 1;
const OUTLIER_STREAM: u64 = 2;
const PARTITION_STREAM: u64 = 3;

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

fn labels_text(map: &LabelMap) -> String {
    map.names().iter().map(|n| format!("{n}\n")).collect()
}

/// Class order: the config's list, else `labels.txt` in `dir`, else the
/// sorted distinct labels of `csvs`.
fn resolve_labels(cfg: &RunConfig, dir: Option<&Path>, csvs: &[PathBuf]) -> Result<LabelMap, CliError> {
    if let Some(names) = &cfg.labels {
        return LabelMap::new(names.clone()).map_err(|e| CliError::config(e.to_string()));
    }
    if let Some(path) = dir.map(|d| d.join(LABELS_FILE)).filter(|p| p.is_file()) {
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        return LabelMap::new(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from))
            .map_err(|e| CliError::at(&path, e));
    }
    for p in csvs {
        if !p.is_file() {
            return Err(CliError::io(p, std::io::Error::from(std::io::ErrorKind::NotFound)));
        }
    }
    Ok(discover_labels(csvs, &cfg.label_column)?)
}

fn load(path: &Path, cfg: &RunConfig, labels: &LabelMap) -> Result<Dataset, CliError> {
    load_csv(path, &ColumnSchema::auto(cfg.label_column.clone()), labels).map_err(|e| CliError::at(path, e))
}

fn histogram_lines(out: &mut String, section: &str, data: &Dataset) {
    writeln!(out, "[{section}]").unwrap();
    for (name, n) in class_histogram(data) {
        writeln!(out, "{name}={n}").unwrap();
    }
    writeln!(out, "total={}", data.n_rows()).unwrap();
}

/// Clean, oversample, prune outliers, partition, and write the three parts.
pub fn prepare(cfg: &RunConfig) -> Result<String, CliError> {
    cfg.validate_prepare()?;
    let input = cfg.dataset_path.as_deref().ok_or_else(|| CliError::config("dataset_path is not set"))?;
    let labels = resolve_labels(cfg, None, &[input.to_path_buf()])?;
    let schema = ColumnSchema::auto(cfg.label_column.clone());
    let (data, load_report) = load_csv_with_report(input, &schema, &labels).map_err(|e| CliError::at(input, e))?;

    let mut report = String::new();
    writeln!(report, "[load]").unwrap();
    report.push_str(&load_report.to_string());
    histogram_lines(&mut report, "before", &data);

    let mut targets = BTreeMap::new();
    for (name, n) in &cfg.smote_targets {
        let id = labels
            .id_of(name)
            .ok_or_else(|| CliError::config(format!("smote target `{name}` is not a known class")))?;
        targets.insert(id, *n);
    }
    let balanced = if targets.is_empty() {
        data
    } else {
        let smote = SmoteConfig::new(targets, cfg.k_neighbors, derive_seed(cfg.seed, &[SMOTE_STREAM]))
            .map_err(|e| CliError::config(e.to_string()))?;
        let out = smote_resample(&data, &smote)?;
        histogram_lines(&mut report, "after_smote", &out);
        out
    };

    let (cleaned, removal) = remove_outliers(
        &balanced,
        cfg.contamination,
        cfg.n_trees,
        cfg.subsample_size,
        derive_seed(cfg.seed, &[OUTLIER_STREAM]),
    )?;
    writeln!(report, "[outliers]").unwrap();
    writeln!(report, "contamination={}", cfg.contamination).unwrap();
    report.push_str(&removal.to_string());
    histogram_lines(&mut report, "after", &cleaned);

    let parts = partition(&cleaned, 3, derive_seed(cfg.seed, &[PARTITION_STREAM]))?;
    create_dir(&cfg.output_dir)?;
    writeln!(report, "[partitions]").unwrap();
    for (part, file) in parts.iter().zip(PART_FILES) {
        let path = cfg.output_dir.join(file);
        write_csv_file(part, &path).map_err(|e| CliError::at(&path, e))?;
        writeln!(report, "{file}={}", part.n_rows()).unwrap();
    }
    write_file(&cfg.output_dir.join(LABELS_FILE), labels_text(&labels))?;
    write_file(&cfg.output_dir.join("prepare_report.txt"), &report)?;
    Ok(report)
}

fn load_parts(cfg: &RunConfig) -> Result<(LabelMap, Vec<Dataset>), CliError> {
    let dir = cfg.parts_dir();
    let paths: Vec<PathBuf> = PART_FILES.iter().map(|f| dir.join(f)).collect();
    let labels = resolve_labels(cfg, Some(dir), &paths)?;
    let parts = paths.iter().map(|p| load(p, cfg, &labels)).collect::<Result<Vec<_>, _>>()?;
    if parts.iter().any(|p| p.schema().feature_names() != parts[0].schema().feature_names()) {
        return Err(CliError::data("part files have different feature columns"));
    }
    Ok((labels, parts))
}

fn write_models(
    dir: &Path,
    labels: &LabelMap,
    edge_models: &[(u32, GbdtModel)],
    ensemble: Option<&EnsembleModel>,
) -> Result<(), CliError> {
    create_dir(dir)?;
    for (id, model) in edge_models {
        write_file(&dir.join(format!("{}.fids", device_name(*id))), serialize_model(model))?;
    }
    if let Some(e) = ensemble {
        if let Some(pos) = e.origins().iter().position(|&o| o == SERVER_DEVICE_ID) {
            write_file(&dir.join("server.fids"), serialize_model(&e.members()[pos]))?;
        }
        write_file(&dir.join("global.fids"), serialize_ensemble(e))?;
    }
    write_file(&dir.join(LABELS_FILE), labels_text(labels))
}

/// Runs the federation in-process (or over loopback TCP) and writes
/// `rounds.csv` and the final models.
pub fn simulate_cmd(cfg: &RunConfig, transcript: Option<&Path>) -> Result<String, CliError> {
    let round_cfg = cfg.round_config()?;
    let (labels, parts) = load_parts(cfg)?;
    let transport = match cfg.transport {
        Transport::InProcess => TransportKind::InProcess,
        Transport::Tcp => TransportKind::Tcp { port: cfg.port },
    };
    let out = simulate(&parts, &round_cfg, transport)?;

    create_dir(&cfg.output_dir)?;
    let csv = write_rounds_csv(&reports_to_rows(&out.reports));
    write_file(&cfg.output_dir.join("rounds.csv"), &csv)?;
    write_models(&cfg.output_dir.join(MODELS_DIR), &labels, &out.edge_models, Some(&out.ensemble))?;
    if let Some(path) = transcript {
        write_file(path, &out.transcript)?;
    }
    Ok(csv)
}

enum LoadedModel {
    Single(GbdtModel),
    Ensemble(EnsembleModel),
}

impl LoadedModel {
    fn read(path: &Path) -> Result<Self, CliError> {
        let bytes = read_file(path)?;
        match fids_core::federation::deserialize_model(&bytes) {
            Ok(m) => Ok(Self::Single(m)),
            Err(single) => fids_core::federation::deserialize_ensemble(&bytes)
                .map(Self::Ensemble)
                .map_err(|_| CliError::data(format!("{}: not a model file: {single}", path.display()))),
        }
    }

    fn shape(&self) -> (usize, usize) {
        match self {
            Self::Single(m) => (m.n_classes(), m.n_features()),
            Self::Ensemble(e) => (e.n_classes(), e.n_features()),
        }
    }

    fn predict(&self, x: &[f64]) -> fids_core::Result<usize> {
        match self {
            Self::Single(m) => m.predict(x),
            Self::Ensemble(e) => e.predict(x),
        }
    }
}

/// Scores a model or ensemble file on a labelled CSV.
pub fn evaluate(cfg: &RunConfig, model_path: &Path, test_path: &Path) -> Result<String, CliError> {
    let model = LoadedModel::read(model_path)?;
    let labels = resolve_labels(cfg, model_path.parent(), &[test_path.to_path_buf()])?;
    let test = load(test_path, cfg, &labels)?;
    let (k, d) = model.shape();
    if k != test.n_classes() || d != test.n_features() {
        return Err(CliError::data(format!(
            "model expects {k} classes and {d} features, test data has {} classes and {} features",
            test.n_classes(),
            test.n_features()
        )));
    }
    let pred = test.rows().map(|x| model.predict(x)).collect::<fids_core::Result<Vec<_>>>()?;
    let matrix = confusion(test.labels(), &pred, k)?;
    let summary = MetricSummary::from_matrix(&matrix)?;
    let mut out = format!("rows={}\n", test.n_rows());
    out.push_str(&summary.to_kv());
    out.push('\n');
    for (name, id) in labels.entries() {
        writeln!(out, "class {id}: {name}").unwrap();
    }
    out.push('\n');
    out.push_str(&render_matrix(&matrix));
    Ok(out)
}

/// Keeps each device's last row, in first-appearance order.
fn final_rows(rows: &[MetricsRow]) -> Vec<MetricsRow> {
    let mut order: Vec<&str> = Vec::new();
    let mut last: BTreeMap<&str, &MetricsRow> = BTreeMap::new();
    for r in rows {
        if !last.contains_key(r.device.as_str()) {
            order.push(&r.device);
        }
        let slot = last.entry(&r.device).or_insert(r);
        if r.round >= slot.round {
            *slot = r;
        }
    }
    order.iter().map(|d| last[d].clone()).collect()
}

/// Renders the final round of `rounds.csv` as an SVG chart and a text table.
pub fn report(rounds_path: &Path, output: &Path) -> Result<String, CliError> {
    let text = std::fs::read_to_string(rounds_path).map_err(|e| CliError::io(rounds_path, e))?;
    let rows = parse_rounds_csv(&text).map_err(|e| CliError::at(rounds_path, e))?;
    if rows.is_empty() {
        return Err(CliError::data(format!("{}: no metric rows", rounds_path.display())));
    }
    let groups = final_rows(&rows);
    let chart = svg::bar_chart("Per-device metrics, final round", &groups);
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_file(output, chart)?;
    Ok(svg::summary_table(&rows))
}

fn split_own(cfg: &RunConfig, device_id: u32, round_cfg: &RoundConfig) -> Result<(LabelMap, fids_core::SplitPair), CliError> {
    let dir = cfg.parts_dir();
    let file = if device_id == SERVER_DEVICE_ID {
        PART_FILES[2].to_string()
    } else {
        format!("part{device_id}.csv")
    };
    let path = dir.join(file);
    let labels = resolve_labels(cfg, Some(dir), std::slice::from_ref(&path))?;
    let data = load(&path, cfg, &labels)?;
    Ok((labels, split_for_device(&data, device_id, round_cfg)?))
}

/// The stop reason an edge can infer from the round its run ended in.
fn edge_rows(out: &EdgeOutcome, max_rounds: u32) -> Vec<MetricsRow> {
    let last = out.rounds.last().map_or(0, |r| r.round);
    out.rounds
        .iter()
        .map(|r| {
            let reason = if r.round < last {
                StopReason::Continue
            } else if r.round >= max_rounds {
                StopReason::MaxRounds
            } else {
                StopReason::Converged
            };
            MetricsRow {
                device: device_name(out.device_id),
                round: r.round,
                metrics: r.metrics,
                stop_reason: reason.to_string(),
            }
        })
        .collect()
}

fn server_rows(out: &ServerOutcome) -> Vec<MetricsRow> {
    out.rounds
        .iter()
        .map(|r| MetricsRow {
            device: device_name(SERVER_DEVICE_ID),
            round: r.round,
            metrics: r.metrics,
            stop_reason: r.stop_reason.to_string(),
        })
        .collect()
}

/// Standalone TCP server for `n_edges` edge processes.
pub fn serve(cfg: &RunConfig, n_edges: usize) -> Result<String, CliError> {
    let round_cfg = cfg.round_config()?;
    let (labels, split) = split_own(cfg, SERVER_DEVICE_ID, &round_cfg)?;
    let listener = TcpFrameListener::bind((cfg.host.as_str(), cfg.port))?;
    log::info!("listening on {}", listener.local_addr()?);
    let out = run_server(&listener, n_edges, &split, &round_cfg)?;
    create_dir(&cfg.output_dir)?;
    let csv = write_rounds_csv(&server_rows(&out));
    write_file(&cfg.output_dir.join("server_rounds.csv"), &csv)?;
    write_models(&cfg.output_dir.join(MODELS_DIR), &labels, &[], Some(&out.ensemble))?;
    Ok(csv)
}

/// Standalone edge client: trains on its part and exchanges models with a
/// running server until told to stop.
pub fn send_model(cfg: &RunConfig, device_id: u32) -> Result<String, CliError> {
    if device_id == SERVER_DEVICE_ID {
        return Err(CliError::config(format!("device id {SERVER_DEVICE_ID} is reserved for the server")));
    }
    let round_cfg = cfg.round_config()?;
    let (labels, split) = split_own(cfg, device_id, &round_cfg)?;
    let addr = (cfg.host.as_str(), cfg.port)
        .to_socket_addrs()
        .map_err(|e| CliError::config(format!("cannot resolve {}:{}: {e}", cfg.host, cfg.port)))?
        .next()
        .ok_or_else(|| CliError::config(format!("no address for {}", cfg.host)))?;
    let out = run_edge(&TcpConnector::new(addr), device_id, &split, &round_cfg)?;
    create_dir(&cfg.output_dir)?;
    let csv = write_rounds_csv(&edge_rows(&out, round_cfg.max_rounds));
    write_file(&cfg.output_dir.join(format!("{}_rounds.csv", device_name(device_id))), &csv)?;
    write_models(&cfg.output_dir.join(MODELS_DIR), &labels, &[(device_id, out.model.clone())], None)?;
    Ok(csv)
}

/// Writes a synthetic labelled flow table.
pub fn generate(cfg: &RunConfig, output: &Path, classes: Option<usize>, per_class: usize) -> Result<String, CliError> {
    let data = match classes {
        None => cic_ids2017_like(cfg.seed)?,
        Some(k) => gaussian_blobs(&BlobSpec::balanced(k, per_class, cfg.seed), numbered_labels(k))
            .map_err(|e| CliError::config(e.to_string()))?,
    };
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_csv_file(&data, output).map_err(|e| CliError::at(output, e))?;
    let mut out = String::new();
    for (name, n) in class_histogram(&data) {
        writeln!(out, "{name}={n}").unwrap();
    }
    Ok(out)
}
