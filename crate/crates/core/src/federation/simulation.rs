//! Edge and server state machines and the round-based driver.
//!
//! Each round every edge fits a fresh local model, opens one connection and
//! sends a `ModelUpdate`. The server waits for all edges (barrier), builds
//! the ensemble with its own data, scores it, and answers every edge with
//! `GlobalModel`. The edge replies `Ack`; the server closes the round with
//! `Ack` (another round follows) or `Shutdown`.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;

use crate::dataio::{train_test_split, Dataset, SplitPair};
use crate::error::{Error, Result};
use crate::gbdt::{grid_search_with, GbdtModel, GbdtParams, GridSpec};
use crate::metrics::{confusion, ConfusionMatrix, MetricSummary, MetricsRow};
use crate::rng::derive_seed;

use super::ensemble::{build_ensemble, EnsembleModel, SERVER_DEVICE_ID};
use super::frame::{encode_frame, ModelEnvelope, MsgType};
use super::transport::{in_process, Connector, FrameLink, Listener, TcpConnector, TcpFrameListener};

const SPLIT_STREAM: u64 = 1;
const GRID_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct RoundConfig {
    pub max_rounds: u32,
    /// A round whose server accuracy gain is below this ends the run.
    /// Zero disables the check.
    pub epsilon: f64,
    pub grid: GridSpec,
    pub seed: u64,
    /// Share of each partition used for training; the rest is its test split.
    pub train_fraction: f64,
    /// Share of a training split held out to score the grid.
    pub validation_fraction: f64,
    pub l2_leaf_reg: f64,
}

impl Default for RoundConfig {
    fn default() -> Self {
        Self {
            max_rounds: 3,
            epsilon: 0.0,
            grid: GridSpec::default(),
            seed: 0,
            train_fraction: 0.8,
            validation_fraction: 0.25,
            l2_leaf_reg: GbdtParams::default().l2_leaf_reg,
        }
    }
}

impl RoundConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_rounds == 0 {
            return Err(Error::InvalidArgument("max_rounds must be at least 1".into()));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "validation_fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        self.base_params().validate()?;
        self.grid.validate()
    }

    fn base_params(&self) -> GbdtParams {
        GbdtParams { l2_leaf_reg: self.l2_leaf_reg, seed: self.seed, ..GbdtParams::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Continue,
    MaxRounds,
    Converged,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Continue => "continue",
            Self::MaxRounds => "max_rounds",
            Self::Converged => "converged",
        }
    }
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StopReason {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "continue" => Ok(Self::Continue),
            "max_rounds" => Ok(Self::MaxRounds),
            "converged" => Ok(Self::Converged),
            other => Err(Error::Malformed(format!("unknown stop reason `{other}`"))),
        }
    }
}

/// `server` for device 0, `edge<id>` otherwise.
pub fn device_name(device_id: u32) -> String {
    if device_id == SERVER_DEVICE_ID {
        "server".to_string()
    } else {
        format!("edge{device_id}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceReport {
    pub device: String,
    pub device_id: u32,
    pub metrics: MetricSummary,
    pub matrix: ConfusionMatrix,
    /// Parameters of the device's own model (the server's ensemble member
    /// for the server row).
    pub params: GbdtParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: u32,
    /// Edges in id order, then the server (scored with the ensemble).
    pub devices: Vec<DeviceReport>,
    pub stop_reason: StopReason,
}

pub fn reports_to_rows(reports: &[RoundReport]) -> Vec<MetricsRow> {
    reports
        .iter()
        .flat_map(|r| {
            r.devices.iter().map(move |d| MetricsRow {
                device: d.device.clone(),
                round: r.round,
                metrics: d.metrics,
                stop_reason: r.stop_reason.to_string(),
            })
        })
        .collect()
}

fn evaluate(test: &Dataset, mut predict: impl FnMut(&[f64]) -> Result<usize>) -> Result<ConfusionMatrix> {
    let pred = test.rows().map(&mut predict).collect::<Result<Vec<_>>>()?;
    confusion(test.labels(), &pred, test.n_classes())
}

fn fit_local(train: &Dataset, cfg: &RoundConfig, round: u32, device_id: u32) -> Result<GbdtModel> {
    let seed = derive_seed(cfg.seed, &[GRID_STREAM, u64::from(round), u64::from(device_id)]);
    let found = grid_search_with(train, &cfg.grid, cfg.validation_fraction, seed, &cfg.base_params())?;
    log::info!("{} round {round}: chose {:?}", device_name(device_id), found.best_params);
    Ok(found.model)
}

fn expect(env: &ModelEnvelope, msg_type: MsgType, round: u32) -> Result<()> {
    if env.msg_type != msg_type || env.round != round {
        return Err(Error::Protocol(format!(
            "expected {msg_type:?} for round {round}, got {:?} for round {}",
            env.msg_type, env.round
        )));
    }
    Ok(())
}

// --------------------------------------------------------------------- edge

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRound {
    pub round: u32,
    pub metrics: MetricSummary,
    pub matrix: ConfusionMatrix,
    pub params: GbdtParams,
}

#[derive(Debug, Clone)]
pub struct EdgeOutcome {
    pub device_id: u32,
    pub rounds: Vec<EdgeRound>,
    /// The local model sent in the last round.
    pub model: GbdtModel,
    /// The last global model received.
    pub global: EnsembleModel,
}

/// Runs one edge until the server sends `Shutdown`.
pub fn run_edge(connector: &dyn Connector, device_id: u32, split: &SplitPair, cfg: &RoundConfig) -> Result<EdgeOutcome> {
    cfg.validate()?;
    if device_id == SERVER_DEVICE_ID {
        return Err(Error::InvalidArgument(format!("device id {SERVER_DEVICE_ID} is reserved for the server")));
    }
    let mut rounds = Vec::new();
    for round in 1..=cfg.max_rounds {
        let model = fit_local(&split.train, cfg, round, device_id)?;
        let matrix = evaluate(&split.test, |x| model.predict(x))?;
        rounds.push(EdgeRound {
            round,
            metrics: MetricSummary::from_matrix(&matrix)?,
            matrix,
            params: *model.params(),
        });

        let mut link = connector.connect()?;
        link.send(&ModelEnvelope::model_update(device_id, round, &model))?;
        let reply = link.recv()?;
        expect(&reply, MsgType::GlobalModel, round)?;
        let global = reply.decode_ensemble()?;
        link.send(&ModelEnvelope::ack(device_id, round))?;
        let control = link.recv()?;
        match control.msg_type {
            MsgType::Shutdown if control.round == round => {
                return Ok(EdgeOutcome { device_id, rounds, model, global });
            }
            MsgType::Ack if control.round == round => {}
            _ => expect(&control, MsgType::Ack, round)?,
        }
    }
    Err(Error::Protocol(format!("server did not stop after {} rounds", cfg.max_rounds)))
}

// ------------------------------------------------------------------- server

#[derive(Debug, Clone, PartialEq)]
pub struct ServerRound {
    pub round: u32,
    /// Ensemble scored on the server's test split.
    pub metrics: MetricSummary,
    pub matrix: ConfusionMatrix,
    pub params: GbdtParams,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone)]
pub struct ServerOutcome {
    pub rounds: Vec<ServerRound>,
    /// Edge models from the last round, in device order.
    pub edge_models: Vec<(u32, GbdtModel)>,
    pub ensemble: EnsembleModel,
    /// Every frame of the run. Per round: updates in device order, then for
    /// each device its `GlobalModel`, the edge's `Ack`, and the closing frame.
    pub transcript: Vec<u8>,
}

fn decide(cfg: &RoundConfig, round: u32, accuracy: f64, previous: Option<f64>) -> StopReason {
    if round >= cfg.max_rounds {
        StopReason::MaxRounds
    } else if cfg.epsilon > 0.0 && previous.is_some_and(|p| accuracy - p < cfg.epsilon) {
        StopReason::Converged
    } else {
        StopReason::Continue
    }
}

struct Update {
    link: Box<dyn FrameLink>,
    env: ModelEnvelope,
    model: GbdtModel,
}

/// Receives one round of updates. Connections are read concurrently; the
/// call returns once all `n_edges` updates are in, sorted by device id.
fn collect_updates(listener: &dyn Listener, n_edges: usize, round: u32, server: &Dataset) -> Result<Vec<Update>> {
    let results: Vec<Result<Update>> = thread::scope(|s| {
        let mut handles = Vec::with_capacity(n_edges);
        let mut accept_error = None;
        for _ in 0..n_edges {
            match listener.accept() {
                Ok(mut link) => handles.push(s.spawn(move || -> Result<Update> {
                    let env = link.recv()?;
                    expect(&env, MsgType::ModelUpdate, round)?;
                    let model = env.decode_model()?;
                    Ok(Update { link, env, model })
                })),
                Err(e) => {
                    accept_error = Some(e);
                    break;
                }
            }
        }
        let mut out: Vec<Result<Update>> =
            handles.into_iter().map(|h| h.join().expect("update reader panicked")).collect();
        if let Some(e) = accept_error {
            out.push(Err(e));
        }
        out
    });
    let mut updates = results.into_iter().collect::<Result<Vec<_>>>()?;
    updates.sort_by_key(|u| u.env.device_id);
    for pair in updates.windows(2) {
        if pair[0].env.device_id == pair[1].env.device_id {
            return Err(Error::Protocol(format!("two updates from device {} in round {round}", pair[0].env.device_id)));
        }
    }
    for u in &updates {
        if u.env.device_id == SERVER_DEVICE_ID {
            return Err(Error::Protocol("an edge used the server's device id".into()));
        }
        if u.model.n_classes() != server.n_classes() || u.model.n_features() != server.n_features() {
            return Err(Error::IncompatibleModels(format!(
                "{} sent a {} class x {} feature model, server data is {} x {}",
                device_name(u.env.device_id),
                u.model.n_classes(),
                u.model.n_features(),
                server.n_classes(),
                server.n_features()
            )));
        }
    }
    Ok(updates)
}

/// Runs the server for a fixed set of `n_edges` edges until it stops them.
pub fn run_server(listener: &dyn Listener, n_edges: usize, split: &SplitPair, cfg: &RoundConfig) -> Result<ServerOutcome> {
    cfg.validate()?;
    if n_edges == 0 {
        return Err(Error::InvalidArgument("the server needs at least one edge".into()));
    }
    let mut rounds: Vec<ServerRound> = Vec::new();
    let mut transcript = Vec::new();
    for round in 1..=cfg.max_rounds {
        let updates = collect_updates(listener, n_edges, round, &split.train)?;
        for u in &updates {
            transcript.extend(encode_frame(&u.env));
        }

        let local = fit_local(&split.train, cfg, round, SERVER_DEVICE_ID)?;
        let edge_models: Vec<(u32, GbdtModel)> = updates.iter().map(|u| (u.env.device_id, u.model.clone())).collect();
        let ensemble = build_ensemble(edge_models.clone(), &split.train, local.params())?;
        let matrix = evaluate(&split.test, |x| ensemble.predict(x))?;
        let metrics = MetricSummary::from_matrix(&matrix)?;
        let stop_reason = decide(cfg, round, metrics.accuracy, rounds.last().map(|r| r.metrics.accuracy));
        log::info!("round {round}: ensemble accuracy {:.6}, {stop_reason}", metrics.accuracy);

        for mut u in updates {
            let global = ModelEnvelope::global_model(SERVER_DEVICE_ID, round, &ensemble);
            u.link.send(&global)?;
            let ack = u.link.recv()?;
            expect(&ack, MsgType::Ack, round)?;
            if ack.device_id != u.env.device_id {
                return Err(Error::Protocol(format!(
                    "ack from device {} on the connection of device {}",
                    ack.device_id, u.env.device_id
                )));
            }
            let control = match stop_reason {
                StopReason::Continue => ModelEnvelope::ack(SERVER_DEVICE_ID, round),
                _ => ModelEnvelope::shutdown(SERVER_DEVICE_ID, round),
            };
            u.link.send(&control)?;
            transcript.extend(encode_frame(&global));
            transcript.extend(encode_frame(&ack));
            transcript.extend(encode_frame(&control));
        }

        rounds.push(ServerRound { round, metrics, matrix, params: *local.params(), stop_reason });
        if stop_reason != StopReason::Continue {
            return Ok(ServerOutcome { rounds, edge_models, ensemble, transcript });
        }
    }
    unreachable!("the last round always stops")
}

// ------------------------------------------------------------------- driver

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportKind {
    InProcess,
    /// Loopback TCP; port 0 picks a free port.
    Tcp { port: u16 },
}

#[derive(Debug, Clone)]
pub struct SimulationOutcome {
    pub reports: Vec<RoundReport>,
    pub transcript: Vec<u8>,
    pub edge_models: Vec<(u32, GbdtModel)>,
    pub ensemble: EnsembleModel,
}

/// Splits each partition into train and test. Every device's split depends
/// only on the seed and its device id.
pub fn split_partitions(partitions: &[Dataset], cfg: &RoundConfig) -> Result<Vec<SplitPair>> {
    if partitions.len() != 3 {
        return Err(Error::InvalidArgument(format!(
            "expected 3 partitions (edge1, edge2, server), got {}",
            partitions.len()
        )));
    }
    let ids = [1u32, 2, SERVER_DEVICE_ID];
    partitions
        .iter()
        .zip(ids)
        .map(|(p, id)| {
            if p.is_empty() {
                return Err(Error::InvalidArgument(format!("partition for {} is empty", device_name(id))));
            }
            split_for_device(p, id, cfg)
        })
        .collect()
}

/// The train/test split `device_id` makes of its own partition.
pub fn split_for_device(partition: &Dataset, device_id: u32, cfg: &RoundConfig) -> Result<SplitPair> {
    let seed = derive_seed(cfg.seed, &[SPLIT_STREAM, u64::from(device_id)]);
    let split = train_test_split(partition, cfg.train_fraction, seed)?;
    if split.train.is_empty() || split.test.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "partition for {} has {} rows, too few to split",
            device_name(device_id),
            partition.n_rows()
        )));
    }
    Ok(split)
}

/// Runs the whole federation in one process: partitions are
/// `[edge1, edge2, server]`.
pub fn simulate(partitions: &[Dataset], cfg: &RoundConfig, transport: TransportKind) -> Result<SimulationOutcome> {
    cfg.validate()?;
    let splits = split_partitions(partitions, cfg)?;
    let (k, d) = (partitions[0].n_classes(), partitions[0].n_features());
    if partitions.iter().any(|p| p.n_classes() != k || p.n_features() != d) {
        return Err(Error::InvalidArgument("partitions disagree on classes or features".into()));
    }

    let splits = &splits;
    let (server, edges) = match transport {
        TransportKind::InProcess => {
            let (listener, connector) = in_process();
            let abort = listener.abort_handle();
            run_parties(listener, &abort, splits, cfg, move |_| Box::new(connector.clone()))
        }
        TransportKind::Tcp { port } => {
            let listener = TcpFrameListener::bind(("127.0.0.1", port))?;
            let addr = listener.local_addr()?;
            let abort = listener.abort_handle();
            run_parties(listener, &abort, splits, cfg, move |_| Box::new(TcpConnector::new(addr)))
        }
    };
    // The server's error is reported first: edge failures usually follow from it.
    let server = server?;
    let edges = edges.into_iter().collect::<Result<Vec<_>>>()?;

    let mut reports = Vec::with_capacity(server.rounds.len());
    for (i, sr) in server.rounds.iter().enumerate() {
        let mut devices = Vec::with_capacity(3);
        for e in &edges {
            let er = e.rounds.get(i).filter(|er| er.round == sr.round).ok_or_else(|| {
                Error::Protocol(format!("{} has no report for round {}", device_name(e.device_id), sr.round))
            })?;
            devices.push(DeviceReport {
                device: device_name(e.device_id),
                device_id: e.device_id,
                metrics: er.metrics,
                matrix: er.matrix.clone(),
                params: er.params,
            });
        }
        devices.push(DeviceReport {
            device: device_name(SERVER_DEVICE_ID),
            device_id: SERVER_DEVICE_ID,
            metrics: sr.metrics,
            matrix: sr.matrix.clone(),
            params: sr.params,
        });
        reports.push(RoundReport { round: sr.round, devices, stop_reason: sr.stop_reason });
    }
    Ok(SimulationOutcome {
        reports,
        transcript: server.transcript,
        edge_models: server.edge_models,
        ensemble: server.ensemble,
    })
}

/// Runs the server and both edges on their own threads. The listener moves
/// into the server thread so a failed server disconnects its edges, and a
/// failed edge trips `abort` so the server stops waiting for it.
fn run_parties<L: Listener + 'static>(
    listener: L,
    abort: &AtomicBool,
    splits: &[SplitPair],
    cfg: &RoundConfig,
    connector_for: impl Fn(u32) -> Box<dyn Connector>,
) -> (Result<ServerOutcome>, Vec<Result<EdgeOutcome>>) {
    thread::scope(|s| {
        let server = s.spawn(move || run_server(&listener, 2, &splits[2], cfg));
        let edges: Vec<_> = [1u32, 2]
            .into_iter()
            .map(|id| {
                let connector = connector_for(id);
                let split = &splits[id as usize - 1];
                s.spawn(move || {
                    let out = run_edge(connector.as_ref(), id, split, cfg);
                    if out.is_err() {
                        abort.store(true, Ordering::SeqCst);
                    }
                    out
                })
            })
            .collect();
        drop(connector_for);
        let edges = edges.into_iter().map(|h| h.join().expect("edge thread panicked")).collect();
        (server.join().expect("server thread panicked"), edges)
    })
}

/// In-process simulation returning only the per-round reports.
pub fn run_federated_simulation(partitions: &[Dataset], cfg: &RoundConfig) -> Result<Vec<RoundReport>> {
    Ok(simulate(partitions, cfg, TransportKind::InProcess)?.reports)
}
