//! Round drivers: clustered FLaPS rounds, the plain FL and centralized
//! baselines, device drops, restarts and phase timing.
//!
//! A FLaPS round runs four phases separated by barriers:
//!
//! 1. ready poll, budget broadcast, k-means over client descriptors
//! 2. members send shuffled data reports to their head
//! 3. heads merge reports, download the model, train and upload a weight report
//! 4. the server rebuilds and averages the weights and evaluates the result
//!
//! Complexity notes per phase, with `v` the report vector length, `d` the
//! parameter count and `c` the cluster count (hypothesized meanings): the
//! clustering phase is `O(n c)` per Lloyd iteration, report collection
//! `O(n v)`, and aggregation `O(c d)`.

mod drop;
mod message;
mod transport;

pub use drop::{apply_drop_model, DropModel, DropPhase};
pub use message::{
    decode_frame, encode_frame, FrameError, Message, MessageKind, NodeId, Payload, HEADER_LEN,
    SERVER,
};
pub use transport::{Latency, LogEntry, Network, SimTransport, TcpTransport, Transport};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::ara::{aggregate_weight_reports, fed_avg, merge_data_reports, AraError};
use crate::buds::{
    channel_count, default_batches, iterative_shuffle, reduce_attributes, weight_report,
    AttributeTable, BudsError, Cell, ShuffledReport, WeightMeta,
};
use crate::clustering::{client_features, kmeans, ClusterError};
use crate::dataset::{partition_random, ClientShard, DatasetError, LabeledDataset, OneHotCodec};
use crate::derive_seed;
use crate::learn::{
    evaluate, init_model, train_until_converged, Architecture, LearnError, Metrics, ModelParams,
    TrainConfig,
};

const STREAM_PARTITION: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_TRAIN: u64 = 3;
const STREAM_KMEANS: u64 = 4;
const STREAM_SHUFFLE: u64 = 5;
const STREAM_WEIGHTS: u64 = 6;
const STREAM_LATENCY: u64 = 7;
const STREAM_DROP: u64 = 8;
const STREAM_RESTART: u64 = 0x5245_5354_0000_0000;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("invalid round configuration: {0}")]
    Config(String),
    #[error("round aborted: {0}")]
    Aborted(Box<AbortedRound>),
    #[error("round still aborted after {attempts} attempts")]
    AttemptsExhausted { attempts: usize },
    #[error("clients {sender} and {receiver} have no link")]
    Topology { sender: NodeId, receiver: NodeId },
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("transport: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Buds(#[from] BudsError),
    #[error(transparent)]
    Ara(#[from] AraError),
    #[error(transparent)]
    Learn(#[from] LearnError),
}

impl OrchestratorError {
    pub fn aborted(&self) -> Option<&AbortedRound> {
        match self {
            OrchestratorError::Aborted(a) => Some(a),
            _ => None,
        }
    }
}

pub type Result<T, E = OrchestratorError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    Flaps,
    Fl,
    Central,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Flaps, Mode::Fl, Mode::Central];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Flaps => "flaps",
            Mode::Fl => "fl",
            Mode::Central => "central",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode `{s}` (expected flaps, fl or central)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransportKind {
    #[default]
    Sim,
    Tcp,
}

impl TransportKind {
    pub fn open(self) -> Result<Box<dyn Transport>> {
        Ok(match self {
            TransportKind::Sim => Box::new(SimTransport),
            TransportKind::Tcp => Box::new(TcpTransport::loopback()?),
        })
    }
}

impl FromStr for TransportKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sim" => Ok(TransportKind::Sim),
            "tcp" => Ok(TransportKind::Tcp),
            _ => Err(format!("unknown transport `{s}` (expected sim or tcp)")),
        }
    }
}

/// Training data split across clients plus a held-out test set.
#[derive(Debug, Clone)]
pub struct Federation {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub shards: Vec<ClientShard>,
}

impl Federation {
    pub fn new(
        train: LabeledDataset,
        test: LabeledDataset,
        n_clients: usize,
        seed: u64,
    ) -> Result<Self> {
        if test.is_empty() {
            return Err(OrchestratorError::Config("test set is empty".into()));
        }
        if train.n_classes() != test.n_classes() || train.dim() != test.dim() {
            return Err(OrchestratorError::Config(
                "train and test sets disagree on shape".into(),
            ));
        }
        let shards = partition_random(train.len(), n_clients, derive_seed(seed, STREAM_PARTITION))?;
        Ok(Self {
            train,
            test,
            shards,
        })
    }

    pub fn n_clients(&self) -> usize {
        self.shards.len()
    }

    pub fn architecture(&self, hidden: &[usize]) -> Architecture {
        Architecture {
            input: self.train.dim(),
            hidden: hidden.to_vec(),
            classes: self.train.n_classes(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundConfig {
    pub seed: u64,
    /// Cluster budget; ignored by the baselines.
    pub k: usize,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub drops: DropModel,
    pub latency: Latency,
    pub transport: TransportKind,
    pub kmeans_max_iter: usize,
    pub max_attempts: usize,
    /// Simulated seconds to wait before a restarted attempt.
    pub retry_delay: f64,
}

impl Default for RoundConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            k: 10,
            hidden: Vec::new(),
            train: TrainConfig::default(),
            drops: DropModel::none(),
            latency: Latency::default(),
            transport: TransportKind::Sim,
            kmeans_max_iter: 100,
            max_attempts: 3,
            retry_delay: 0.0,
        }
    }
}

/// Phase durations in seconds. `t3` is the mean per-trainer duration.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TimingRecord {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub t4: f64,
    pub total: f64,
}

impl TimingRecord {
    pub fn sequential(t1: f64, t2: f64, t3: f64, t4: f64) -> Self {
        Self {
            t1,
            t2,
            t3,
            t4,
            total: t1 + t2 + t3 + t4,
        }
    }
}

/// Message classes by the kind of link they use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeClass {
    /// Model downloads and weight uploads between the server and a
    /// training node (a head, or every client in plain FL).
    ServerHead,
    /// Polls, acknowledgements and broadcasts between the server and clients.
    ServerBroadcast,
    /// Member to head traffic.
    ClientHead,
}

impl EdgeClass {
    pub fn of(entry: &LogEntry) -> Self {
        if entry.sender != SERVER && entry.receiver != SERVER {
            EdgeClass::ClientHead
        } else if matches!(
            entry.kind,
            MessageKind::ModelDownload | MessageKind::WeightReport
        ) {
            EdgeClass::ServerHead
        } else {
            EdgeClass::ServerBroadcast
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MessageCounts {
    pub counts: BTreeMap<(EdgeClass, MessageKind), usize>,
}

impl MessageCounts {
    pub fn get(&self, class: EdgeClass, kind: MessageKind) -> usize {
        self.counts.get(&(class, kind)).copied().unwrap_or(0)
    }

    pub fn class_total(&self, class: EdgeClass) -> usize {
        self.counts
            .iter()
            .filter(|((c, _), _)| *c == class)
            .map(|(_, n)| n)
            .sum()
    }

    pub fn kind_total(&self, kind: MessageKind) -> usize {
        self.counts
            .iter()
            .filter(|((_, k), _)| *k == kind)
            .map(|(_, n)| n)
            .sum()
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundResult {
    pub mode: Mode,
    pub k: Option<usize>,
    pub seed: u64,
    pub attempt: usize,
    pub metrics: Metrics,
    pub timing: TimingRecord,
    /// Wall time of each trainer in phase 3, in head order.
    pub trainer_seconds: Vec<f64>,
    pub heads: Vec<NodeId>,
    pub dropped_clients: Vec<NodeId>,
    pub message_log: Vec<LogEntry>,
    pub model: ModelParams,
    pub training_examples: u64,
}

impl RoundResult {
    /// Equality on everything except wall-clock measurements.
    pub fn same_outcome(&self, other: &RoundResult) -> bool {
        let strip = |r: &RoundResult| RoundResult {
            timing: TimingRecord::default(),
            trainer_seconds: Vec::new(),
            ..r.clone()
        };
        strip(self) == strip(other)
    }

    /// Messages whose endpoints are two clients neither of which is a head.
    pub fn topology_violations(&self) -> Vec<&LogEntry> {
        let heads: BTreeSet<NodeId> = self.heads.iter().copied().collect();
        self.message_log
            .iter()
            .filter(|e| {
                e.sender != SERVER
                    && e.receiver != SERVER
                    && !heads.contains(&e.sender)
                    && !heads.contains(&e.receiver)
            })
            .collect()
    }
}

/// Details of a round that could not complete; pass it to [`restart_round`].
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{mode} round (seed {seed}, attempt {attempt}) stopped in {phase} phase: {reason}")]
pub struct AbortedRound {
    pub mode: Mode,
    pub seed: u64,
    pub k: Option<usize>,
    pub attempt: usize,
    pub phase: DropPhase,
    pub reason: String,
    pub dropped_clients: Vec<NodeId>,
}

pub fn count_messages(result: &RoundResult) -> MessageCounts {
    let mut out = MessageCounts::default();
    for entry in &result.message_log {
        *out.counts
            .entry((EdgeClass::of(entry), entry.kind))
            .or_insert(0) += 1;
    }
    out
}

/// Seed used by attempt `attempt`; attempt 0 uses the configured seed.
pub fn attempt_seed(seed: u64, attempt: usize) -> u64 {
    if attempt == 0 {
        seed
    } else {
        derive_seed(seed, STREAM_RESTART + attempt as u64)
    }
}

fn stream_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(seed, stream), index))
}

fn drop_rng(seed: u64, phase: DropPhase) -> ChaCha8Rng {
    stream_rng(seed, STREAM_DROP, phase as u64)
}

fn training_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_TRAIN))
}

struct Attempt<'a> {
    fed: &'a Federation,
    config: &'a RoundConfig,
    mode: Mode,
    attempt: usize,
    seed: u64,
    net: Network,
    dropped: BTreeSet<NodeId>,
}

impl<'a> Attempt<'a> {
    fn start(
        fed: &'a Federation,
        config: &'a RoundConfig,
        mode: Mode,
        attempt: usize,
    ) -> Result<Self> {
        config.drops.validate()?;
        config.train.validate()?;
        let seed = attempt_seed(config.seed, attempt);
        let mut net = Network::new(
            config.transport.open()?,
            config.latency,
            derive_seed(seed, STREAM_LATENCY),
        );
        if attempt > 0 {
            net.wait(config.retry_delay);
        }
        Ok(Self {
            fed,
            config,
            mode,
            attempt,
            seed,
            net,
            dropped: BTreeSet::new(),
        })
    }

    fn abort(&self, phase: DropPhase, reason: String) -> OrchestratorError {
        let k = (self.mode == Mode::Flaps).then_some(self.config.k);
        OrchestratorError::Aborted(Box::new(AbortedRound {
            mode: self.mode,
            seed: self.config.seed,
            k,
            attempt: self.attempt,
            phase,
            reason,
            dropped_clients: self.dropped.iter().copied().collect(),
        }))
    }

    fn drop_phase(&mut self, phase: DropPhase, clients: &[NodeId]) -> Result<Vec<NodeId>> {
        let (alive, gone) = apply_drop_model(
            phase,
            clients,
            &self.config.drops,
            &mut drop_rng(self.seed, phase),
        )?;
        self.dropped.extend(gone);
        Ok(alive)
    }

    /// Ready poll; returns the clients that acknowledged.
    fn ready_poll(&mut self) -> Result<Vec<NodeId>> {
        let clients: Vec<NodeId> = self.fed.shards.iter().map(|s| s.user_id).collect();
        for &c in &clients {
            self.net.send(SERVER, c, &Payload::ReadyQuery)?;
        }
        let alive = self.drop_phase(DropPhase::Ready, &clients)?;
        for &c in &alive {
            self.net.send(c, SERVER, &Payload::ReadyAck)?;
        }
        self.net.barrier();
        Ok(self
            .net
            .drain(SERVER)
            .into_iter()
            .filter(|m| m.payload == Payload::ReadyAck)
            .map(|m| m.sender)
            .collect())
    }

    /// Trains every job (possibly in parallel) and uploads the weight
    /// reports in job order. Returns per-trainer durations.
    fn train_and_upload(&mut self, jobs: Vec<TrainJob>) -> Result<Vec<f64>> {
        let fed = self.fed;
        let config = self.config;
        let seed = self.seed;
        let outputs: Vec<(NodeId, ShuffledReport, f64)> = jobs
            .into_par_iter()
            .map(|job| {
                let start = Instant::now();
                let indices = match &job.data {
                    TrainData::Reports(reports) => {
                        merge_data_reports(reports)?.into_iter().collect()
                    }
                    TrainData::Range(r) => r.clone().collect::<Vec<_>>(),
                };
                let (trained, _) = train_until_converged(
                    &job.model,
                    &fed.train,
                    &indices,
                    &config.train,
                    &mut training_rng(seed),
                )?;
                let meta = WeightMeta {
                    cluster_id: job.cluster_id,
                    sample_count: indices.len() as u64,
                };
                let mut rng = stream_rng(seed, STREAM_WEIGHTS, job.cluster_id as u64);
                let report = weight_report(&trained.flatten(), meta, &mut rng)?;
                Ok((job.node, report, start.elapsed().as_secs_f64()))
            })
            .collect::<Result<_>>()?;
        let mut seconds = Vec::with_capacity(outputs.len());
        for (node, report, secs) in outputs {
            self.net
                .send(node, SERVER, &Payload::WeightReport(report))?;
            seconds.push(secs);
        }
        self.net.barrier();
        Ok(seconds)
    }

    /// Server side of phase 4: rebuild, average, evaluate, broadcast.
    fn aggregate(
        &mut self,
        arch: &Architecture,
        recipients: &[NodeId],
    ) -> Result<(ModelParams, Metrics, u64)> {
        let reports: Vec<ShuffledReport> = self
            .net
            .drain(SERVER)
            .into_iter()
            .filter_map(|m| match m.payload {
                Payload::WeightReport(r) => Some(r),
                _ => None,
            })
            .collect();
        let aggregation = aggregate_weight_reports(&reports);
        let global = fed_avg(&aggregation.accepted)?;
        let model = ModelParams::unflatten(arch, &global.params)?;
        let metrics = evaluate(&model, &self.fed.test)?;
        let update = Payload::GlobalUpdate(global.clone());
        for &c in recipients {
            if !self.dropped.contains(&c) {
                self.net.send(SERVER, c, &update)?;
            }
        }
        self.net.barrier();
        Ok((model, metrics, global.total_examples))
    }
}

enum TrainData {
    Reports(Vec<ShuffledReport>),
    Range(std::ops::RangeInclusive<usize>),
}

struct TrainJob {
    node: NodeId,
    cluster_id: usize,
    model: ModelParams,
    data: TrainData,
}

fn check_k(fed: &Federation, k: usize) -> Result<()> {
    if k < 2 || k >= fed.n_clients() {
        return Err(OrchestratorError::Config(format!(
            "k = {k} must satisfy 2 <= k < n_clients = {}",
            fed.n_clients()
        )));
    }
    Ok(())
}

/// Data report rows for one cluster: one-hot user id and count, raw
/// index bounds. The bounds are tied so shuffling keeps each range whole.
fn cluster_report(
    members: &[&ClientShard],
    codec: &OneHotCodec,
    rng: &mut ChaCha8Rng,
) -> Result<ShuffledReport> {
    let rows = members
        .iter()
        .map(|s| {
            Ok(vec![
                Cell::Bits(codec.encode_value("user_id", &s.user_id.to_string())?),
                Cell::Bits(codec.encode_value("count", &s.count.to_string())?),
                Cell::Int(s.max_index as i64),
                Cell::Int(s.min_index as i64),
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    let names = ["user_id", "count", "max_index", "min_index"]
        .map(String::from)
        .to_vec();
    let table = AttributeTable::new(names, rows)?;
    let query = ["max_index", "min_index"];
    let reduced = reduce_attributes(&table, &query)?;
    let g = channel_count(table.n_columns(), query.len())?;
    Ok(iterative_shuffle(
        &reduced,
        g,
        default_batches(members.len()),
        rng,
    )?)
}

fn run_flaps_attempt(
    fed: &Federation,
    config: &RoundConfig,
    attempt: usize,
) -> Result<RoundResult> {
    check_k(fed, config.k)?;
    let k = config.k;
    let arch = fed.architecture(&config.hidden);
    let mut run = Attempt::start(fed, config, Mode::Flaps, attempt)?;
    let seed = run.seed;

    // phase 1: ready poll, budget, clustering
    let clock = Instant::now();
    let ready = run.ready_poll()?;
    if ready.len() <= k {
        return Err(run.abort(
            DropPhase::Ready,
            format!("{} clients ready, budget k = {k}", ready.len()),
        ));
    }
    for &c in &ready {
        run.net.send(SERVER, c, &Payload::BudgetBroadcast(k))?;
    }
    let by_id: BTreeMap<NodeId, &ClientShard> = fed.shards.iter().map(|s| (s.user_id, s)).collect();
    let mut cohort: Vec<ClientShard> = ready.iter().map(|c| by_id[c].clone()).collect();
    let assignment = kmeans(
        &client_features(&cohort),
        k,
        derive_seed(seed, STREAM_KMEANS),
        config.kmeans_max_iter,
    )?;
    let heads: Vec<NodeId> = assignment
        .heads
        .iter()
        .map(|&i| cohort[i].user_id)
        .collect();
    run.net.set_heads(heads.iter().copied());
    for (shard, &label) in cohort.iter_mut().zip(&assignment.labels) {
        shard.cluster_id = Some(label);
        let assign = Payload::ClusterAssign {
            cluster_id: label,
            head_id: heads[label],
        };
        run.net.send(SERVER, shard.user_id, &assign)?;
    }
    run.net.barrier();
    let t1 = clock.elapsed().as_secs_f64();

    // phase 2: data reports to heads
    let clock = Instant::now();
    let reporting: BTreeSet<NodeId> = run
        .drop_phase(DropPhase::Report, &ready)?
        .into_iter()
        .collect();
    let codec = OneHotCodec::for_shards(&cohort);
    let mut local: BTreeMap<NodeId, ShuffledReport> = BTreeMap::new();
    let mut live_heads = Vec::new();
    for (cluster, &head) in heads.iter().enumerate() {
        if !reporting.contains(&head) {
            continue;
        }
        live_heads.push((cluster, head));
        let members: Vec<&ClientShard> = cohort
            .iter()
            .filter(|s| s.cluster_id == Some(cluster) && reporting.contains(&s.user_id))
            .collect();
        let report = cluster_report(
            &members,
            &codec,
            &mut stream_rng(seed, STREAM_SHUFFLE, cluster as u64),
        )?;
        for (member, row) in members.iter().zip(report.table.split_rows()) {
            let single = ShuffledReport {
                table: row,
                plan_digest: report.plan_digest,
            };
            if member.user_id == head {
                local.insert(head, single);
            } else {
                run.net
                    .send(member.user_id, head, &Payload::DataReport(single))?;
            }
        }
    }
    run.net.barrier();
    let t2 = clock.elapsed().as_secs_f64();

    // phase 3: model download, drops, head training
    let init = init_model(&arch, derive_seed(seed, STREAM_INIT))?;
    for &(_, head) in &live_heads {
        run.net
            .send(SERVER, head, &Payload::ModelDownload(init.clone()))?;
    }
    let head_ids: Vec<NodeId> = live_heads.iter().map(|&(_, h)| h).collect();
    let training: BTreeSet<NodeId> = run
        .drop_phase(DropPhase::HeadTraining, &head_ids)?
        .into_iter()
        .collect();
    let members: Vec<NodeId> = reporting
        .iter()
        .copied()
        .filter(|c| !heads.contains(c))
        .collect();
    run.drop_phase(DropPhase::PostReport, &members)?;
    if training.is_empty() {
        return Err(run.abort(DropPhase::HeadTraining, "no cluster head survived".into()));
    }
    let mut jobs = Vec::new();
    for &(cluster, head) in &live_heads {
        let inbox = run.net.drain(head);
        if !training.contains(&head) {
            continue;
        }
        let mut reports: Vec<ShuffledReport> = local.remove(&head).into_iter().collect();
        let mut model = None;
        for msg in inbox {
            match msg.payload {
                Payload::DataReport(r) => reports.push(r),
                Payload::ModelDownload(m) => model = Some(m),
                _ => {}
            }
        }
        let model = model.expect("every live head received the model");
        jobs.push(TrainJob {
            node: head,
            cluster_id: cluster,
            model,
            data: TrainData::Reports(reports),
        });
    }
    let trainer_seconds = run.train_and_upload(jobs)?;
    let t3 = mean(&trainer_seconds);

    // phase 4: aggregation and evaluation
    let clock = Instant::now();
    let (model, metrics, training_examples) = run.aggregate(&arch, &ready)?;
    let t4 = clock.elapsed().as_secs_f64();

    Ok(RoundResult {
        mode: Mode::Flaps,
        k: Some(k),
        seed: config.seed,
        attempt,
        metrics,
        timing: TimingRecord::sequential(t1, t2, t3, t4),
        trainer_seconds,
        heads,
        dropped_clients: run.dropped.iter().copied().collect(),
        message_log: run.net.into_log(),
        model,
        training_examples,
    })
}

fn run_fl_attempt(fed: &Federation, config: &RoundConfig, attempt: usize) -> Result<RoundResult> {
    let arch = fed.architecture(&config.hidden);
    let mut run = Attempt::start(fed, config, Mode::Fl, attempt)?;
    let seed = run.seed;

    let clock = Instant::now();
    let ready = run.ready_poll()?;
    if ready.is_empty() {
        return Err(run.abort(DropPhase::Ready, "no client answered the ready poll".into()));
    }
    // every client trains, so every client is a head
    run.net.set_heads(ready.iter().copied());
    let t1 = clock.elapsed().as_secs_f64();

    let init = init_model(&arch, derive_seed(seed, STREAM_INIT))?;
    for &c in &ready {
        run.net
            .send(SERVER, c, &Payload::ModelDownload(init.clone()))?;
    }
    let training: BTreeSet<NodeId> = run
        .drop_phase(DropPhase::HeadTraining, &ready)?
        .into_iter()
        .collect();
    if training.is_empty() {
        return Err(run.abort(
            DropPhase::HeadTraining,
            "every client dropped during training".into(),
        ));
    }
    let by_id: BTreeMap<NodeId, &ClientShard> = fed.shards.iter().map(|s| (s.user_id, s)).collect();
    let mut jobs = Vec::new();
    for (i, &c) in ready.iter().enumerate() {
        let inbox = run.net.drain(c);
        if !training.contains(&c) {
            continue;
        }
        let model = inbox
            .into_iter()
            .find_map(|m| match m.payload {
                Payload::ModelDownload(m) => Some(m),
                _ => None,
            })
            .expect("every ready client received the model");
        jobs.push(TrainJob {
            node: c,
            cluster_id: i,
            model,
            data: TrainData::Range(by_id[&c].indices()),
        });
    }
    let trainer_seconds = run.train_and_upload(jobs)?;
    let t3 = mean(&trainer_seconds);

    let clock = Instant::now();
    let (model, metrics, training_examples) = run.aggregate(&arch, &ready)?;
    let t4 = clock.elapsed().as_secs_f64();

    Ok(RoundResult {
        mode: Mode::Fl,
        k: None,
        seed: config.seed,
        attempt,
        metrics,
        timing: TimingRecord::sequential(t1, 0.0, t3, t4),
        trainer_seconds,
        heads: ready,
        dropped_clients: run.dropped.iter().copied().collect(),
        message_log: run.net.into_log(),
        model,
        training_examples,
    })
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// One clustered round with `config.k` heads.
pub fn run_flaps_round(fed: &Federation, config: &RoundConfig) -> Result<RoundResult> {
    run_flaps_attempt(fed, config, 0)
}

/// Every client trains on its own shard; the server averages all of them.
pub fn run_fl_baseline(fed: &Federation, config: &RoundConfig) -> Result<RoundResult> {
    run_fl_attempt(fed, config, 0)
}

/// One model trained on the whole training set. Uses the same
/// initialization and training streams as the federated modes.
pub fn run_central_baseline(fed: &Federation, config: &RoundConfig) -> Result<RoundResult> {
    config.train.validate()?;
    let arch = fed.architecture(&config.hidden);
    let init = init_model(&arch, derive_seed(config.seed, STREAM_INIT))?;
    let indices: Vec<usize> = (0..fed.train.len()).collect();
    let clock = Instant::now();
    let (model, _) = train_until_converged(
        &init,
        &fed.train,
        &indices,
        &config.train,
        &mut training_rng(config.seed),
    )?;
    let t3 = clock.elapsed().as_secs_f64();
    let clock = Instant::now();
    let metrics = evaluate(&model, &fed.test)?;
    let t4 = clock.elapsed().as_secs_f64();
    Ok(RoundResult {
        mode: Mode::Central,
        k: None,
        seed: config.seed,
        attempt: 0,
        metrics,
        timing: TimingRecord::sequential(0.0, 0.0, t3, t4),
        trainer_seconds: vec![t3],
        heads: Vec::new(),
        dropped_clients: Vec::new(),
        message_log: Vec::new(),
        model,
        training_examples: indices.len() as u64,
    })
}

pub fn run_round(mode: Mode, fed: &Federation, config: &RoundConfig) -> Result<RoundResult> {
    match mode {
        Mode::Flaps => run_flaps_round(fed, config),
        Mode::Fl => run_fl_baseline(fed, config),
        Mode::Central => run_central_baseline(fed, config),
    }
}

/// Runs the next attempt of an aborted round from the ready poll, with a
/// seed derived from the original seed and the attempt number.
pub fn restart_round(
    previous: &AbortedRound,
    fed: &Federation,
    config: &RoundConfig,
) -> Result<RoundResult> {
    let attempt = previous.attempt + 1;
    if attempt >= config.max_attempts {
        return Err(OrchestratorError::AttemptsExhausted { attempts: attempt });
    }
    match previous.mode {
        Mode::Flaps => run_flaps_attempt(fed, config, attempt),
        Mode::Fl => run_fl_attempt(fed, config, attempt),
        Mode::Central => run_central_baseline(fed, config),
    }
}

/// Runs a round and restarts it after aborts until it completes or
/// `config.max_attempts` attempts have been made.
pub fn run_with_restarts(
    mode: Mode,
    fed: &Federation,
    config: &RoundConfig,
) -> Result<RoundResult> {
    let mut outcome = run_round(mode, fed, config);
    loop {
        match outcome {
            Err(OrchestratorError::Aborted(aborted)) => {
                outcome = restart_round(&aborted, fed, config)
            }
            other => return other,
        }
    }
}

#[cfg(test)]
mod tests;
