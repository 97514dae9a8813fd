//! In-process federation of weighted naive Bayes.
//!
//! Each client fits its own probability table from its training rows and
//! keeps it. Only weight vectors leave a client, always as a serialized
//! [`WeightMessage`]; the server averages them and broadcasts the result.

use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::DiscreteDataset;
use crate::error::{Error, Result};
use crate::generative::{fit_counts, normalize, ParamTable};
use crate::optimizer::{minimize, Objective, OptimizeReport, OptimizerConfig, Termination};
use crate::seed::{derive_seed, rng_from_seed, SeedPurpose};
use crate::weighted::{accuracy_weighted, cll, WeightVector};

pub const MESSAGE_MAGIC: [u8; 4] = *b"FNBW";
pub const MESSAGE_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 8 + 8;

/// One client's view of a federation: its private table and row split.
#[derive(Debug, Clone)]
pub struct ClientState<'a> {
    pub client_id: u32,
    data: &'a DiscreteDataset,
    params: ParamTable,
    train_rows: Vec<usize>,
    test_rows: Vec<usize>,
    pub local_weights: WeightVector,
}

impl<'a> ClientState<'a> {
    /// Fits the client's table from `train_rows` only.
    pub fn fit(
        client_id: u32,
        data: &'a DiscreteDataset,
        train_rows: Vec<usize>,
        test_rows: Vec<usize>,
        smoothing: f64,
    ) -> Result<Self> {
        let wrap = |e| Error::Client {
            client_id,
            source: Box::new(e),
        };
        let params = normalize(&fit_counts(data, &train_rows).map_err(wrap)?, smoothing).map_err(wrap)?;
        let local_weights = WeightVector::ones(params.dimension());
        Ok(Self {
            client_id,
            data,
            params,
            train_rows,
            test_rows,
            local_weights,
        })
    }

    pub fn params(&self) -> &ParamTable {
        &self.params
    }

    pub fn data(&self) -> &'a DiscreteDataset {
        self.data
    }

    pub fn train_rows(&self) -> &[usize] {
        &self.train_rows
    }

    pub fn test_rows(&self) -> &[usize] {
        &self.test_rows
    }

    pub fn dimension(&self) -> usize {
        self.params.dimension()
    }

    pub fn schema_hash(&self) -> u64 {
        self.params.layout().schema_hash()
    }

    pub fn objective(&self) -> NegativeCll<'_> {
        NegativeCll {
            params: &self.params,
            data: self.data,
            rows: &self.train_rows,
        }
    }

    /// (train, test) accuracy under `weights`.
    pub fn evaluate(&self, weights: &[f64]) -> Result<(f64, f64)> {
        Ok((
            accuracy_weighted(&self.params, weights, self.data, &self.train_rows)?,
            accuracy_weighted(&self.params, weights, self.data, &self.test_rows)?,
        ))
    }

    fn wrap(&self, e: Error) -> Error {
        Error::Client {
            client_id: self.client_id,
            source: Box::new(e),
        }
    }
}

/// `-CLL` over a fixed row set with the table held fixed.
pub struct NegativeCll<'a> {
    pub params: &'a ParamTable,
    pub data: &'a DiscreteDataset,
    pub rows: &'a [usize],
}

impl Objective for NegativeCll<'_> {
    fn evaluate(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        let ev = cll(self.params, x, self.data, self.rows)?;
        for (g, e) in grad.iter_mut().zip(&ev.gradient) {
            *g = -e;
        }
        Ok(-ev.value)
    }
}

/// I.i.d. uniform draws on `[0.5, 1.5]`.
pub fn init_global_weights(dimension: usize, seed: u64) -> WeightVector {
    let mut rng = rng_from_seed(seed);
    let values = (0..dimension).map(|_| rng.random_range(0.5..=1.5)).collect();
    WeightVector::new(values).expect("uniform draws are finite")
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightMessage {
    pub round: u32,
    pub client_id: u32,
    pub schema_hash: u64,
    pub payload: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct WeightMessageJson {
    magic: String,
    version: u16,
    round: u32,
    client_id: u32,
    schema_hash: String,
    payload: Vec<f64>,
}

impl WeightMessage {
    /// Little-endian: magic, version u16, round u32, client_id u32,
    /// schema_hash u64, payload length u64, then the f64 payload.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.payload.len());
        out.extend_from_slice(&MESSAGE_MAGIC);
        out.extend_from_slice(&MESSAGE_VERSION.to_le_bytes());
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&self.client_id.to_le_bytes());
        out.extend_from_slice(&self.schema_hash.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Message(m);
        if bytes.len() < HEADER_LEN {
            return Err(bad(format!("truncated header: {} bytes", bytes.len())));
        }
        if bytes[..4] != MESSAGE_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let u16_at = |i: usize| u16::from_le_bytes(bytes[i..i + 2].try_into().unwrap());
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let u64_at = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
        let version = u16_at(4);
        if version != MESSAGE_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let len = u64_at(22);
        let body = &bytes[HEADER_LEN..];
        if (body.len() as u64) != len.saturating_mul(8) {
            return Err(bad(format!(
                "payload declares {len} values but carries {} bytes",
                body.len()
            )));
        }
        let payload = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            round: u32_at(6),
            client_id: u32_at(10),
            schema_hash: u64_at(14),
            payload,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&WeightMessageJson {
            magic: "FNBW".into(),
            version: MESSAGE_VERSION,
            round: self.round,
            client_id: self.client_id,
            schema_hash: format!("{:016x}", self.schema_hash),
            payload: self.payload.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: WeightMessageJson = serde_json::from_str(text)?;
        if m.magic != "FNBW" {
            return Err(Error::Message("bad magic".into()));
        }
        if m.version != MESSAGE_VERSION {
            return Err(Error::Message(format!("unsupported version {}", m.version)));
        }
        let schema_hash = u64::from_str_radix(&m.schema_hash, 16)
            .map_err(|e| Error::Message(format!("bad schema hash: {e}")))?;
        Ok(Self {
            round: m.round,
            client_id: m.client_id,
            schema_hash,
            payload: m.payload,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageFormat {
    #[default]
    Binary,
    Json,
}

impl FromStr for MessageFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(Self::Binary),
            "json" => Ok(Self::Json),
            other => Err(Error::Config(format!("unknown message format `{other}`"))),
        }
    }
}

/// Serializes and parses a message, as a network hop would.
pub fn transport(message: &WeightMessage, format: MessageFormat) -> Result<WeightMessage> {
    match format {
        MessageFormat::Binary => WeightMessage::decode(&message.encode()),
        MessageFormat::Json => WeightMessage::from_json(&message.to_json()?),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Uniform,
    ShardWeighted,
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "shard_weighted" | "weighted" => Ok(Self::ShardWeighted),
            other => Err(Error::Config(format!("unknown aggregation `{other}`"))),
        }
    }
}

/// What the server expects to receive in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundExpectation {
    pub round: u32,
    pub schema_hash: u64,
    pub dimension: usize,
    /// `(client_id, training shard size)`.
    pub clients: Vec<(u32, usize)>,
}

/// Coordinatewise mean in ascending client order.
///
/// Uses the running update `m += (x - m) * f`, so identical payloads average
/// to themselves exactly and equal shard sizes give the uniform result bit
/// for bit.
pub fn aggregate(
    messages: &[WeightMessage],
    expected: &RoundExpectation,
    mode: Aggregation,
) -> Result<WeightVector> {
    let bad = |m: String| Err(Error::Aggregation(m));
    let mut clients = expected.clients.clone();
    clients.sort_unstable();
    if clients.is_empty() {
        return bad("no clients expected".into());
    }
    let mut ordered: Vec<(&WeightMessage, usize)> = Vec::with_capacity(clients.len());
    for &(id, shard) in &clients {
        let mut found = messages.iter().filter(|m| m.client_id == id);
        let Some(m) = found.next() else {
            return bad(format!("missing message from client {id}"));
        };
        if found.next().is_some() {
            return bad(format!("duplicate messages from client {id}"));
        }
        if m.round != expected.round {
            return bad(format!(
                "client {id} sent round {} during round {}",
                m.round, expected.round
            ));
        }
        if m.schema_hash != expected.schema_hash {
            return bad(format!(
                "client {id} schema {:016x} does not match {:016x}",
                m.schema_hash, expected.schema_hash
            ));
        }
        if m.payload.len() != expected.dimension {
            return bad(format!(
                "client {id} sent {} weights, expected {}",
                m.payload.len(),
                expected.dimension
            ));
        }
        if m.payload.iter().any(|v| !v.is_finite()) {
            return bad(format!("client {id} sent non-finite weights"));
        }
        ordered.push((m, shard));
    }
    if messages.len() != clients.len() {
        return bad(format!(
            "{} messages for {} expected clients",
            messages.len(),
            clients.len()
        ));
    }

    let mut mean = vec![0.0; expected.dimension];
    let mut seen_weight = 0.0;
    for (i, (m, shard)) in ordered.iter().enumerate() {
        let factor = match mode {
            Aggregation::Uniform => 1.0 / (i + 1) as f64,
            Aggregation::ShardWeighted => {
                seen_weight += *shard as f64;
                if seen_weight == 0.0 {
                    return bad("shard-weighted mean over empty shards".into());
                }
                *shard as f64 / seen_weight
            }
        };
        for (acc, x) in mean.iter_mut().zip(&m.payload) {
            *acc += (x - *acc) * factor;
        }
    }
    WeightVector::new(mean)
}

#[derive(Debug, Clone)]
pub struct LocalOutcome {
    pub message: WeightMessage,
    pub report: OptimizeReport,
}

fn optimize_from(client: &ClientState<'_>, start: &WeightVector, opt: &OptimizerConfig) -> Result<OptimizeReport> {
    if start.len() != client.dimension() {
        return Err(client.wrap(Error::Dimension {
            expected: client.dimension(),
            actual: start.len(),
        }));
    }
    let mut objective = client.objective();
    minimize(&mut objective, start, opt).map_err(|e| client.wrap(e))
}

/// Replaces the local weights with `global` and runs at most
/// `opt.max_iterations` iterations on the client's training rows.
pub fn local_round(
    client: &mut ClientState<'_>,
    global: &WeightVector,
    round: u32,
    opt: &OptimizerConfig,
) -> Result<LocalOutcome> {
    client.local_weights = global.clone();
    let report = optimize_from(client, global, opt)?;
    client.local_weights = WeightVector::new(report.final_point.clone()).map_err(|e| client.wrap(e))?;
    let message = WeightMessage {
        round,
        client_id: client.client_id,
        schema_hash: client.schema_hash(),
        payload: client.local_weights.to_vec(),
    };
    Ok(LocalOutcome { message, report })
}

/// One more local optimization from `global`, for this client's evaluation
/// only. The client's state is left untouched.
pub fn personalize(client: &ClientState<'_>, global: &WeightVector, opt: &OptimizerConfig) -> Result<WeightVector> {
    let report = optimize_from(client, global, opt)?;
    WeightVector::new(report.final_point).map_err(|e| client.wrap(e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub rounds: u32,
    pub optimizer: OptimizerConfig,
    pub aggregation: Aggregation,
    pub message_format: MessageFormat,
    pub seed: u64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            rounds: 50,
            optimizer: OptimizerConfig::with_max_iterations(5),
            aggregation: Aggregation::Uniform,
            message_format: MessageFormat::Binary,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClientRoundRecord {
    pub client_id: u32,
    /// Local objective (negative CLL) at the broadcast weights.
    pub objective_start: f64,
    /// Local objective after optimization.
    pub objective: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub objective_trace: Vec<f64>,
    pub train_acc: f64,
    pub test_acc: f64,
    pub global_train_acc: f64,
    pub global_test_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: u32,
    pub clients: Vec<ClientRoundRecord>,
    pub global_weights_norm: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl RoundRecord {
    pub fn mean_train_acc(&self) -> f64 {
        mean(self.clients.iter().map(|c| c.train_acc))
    }

    pub fn mean_test_acc(&self) -> f64 {
        mean(self.clients.iter().map(|c| c.test_acc))
    }

    pub fn mean_global_train_acc(&self) -> f64 {
        mean(self.clients.iter().map(|c| c.global_train_acc))
    }

    pub fn mean_global_test_acc(&self) -> f64 {
        mean(self.clients.iter().map(|c| c.global_test_acc))
    }
}

#[derive(Debug, Clone)]
pub struct FederationOutcome {
    pub initial: WeightVector,
    pub global: WeightVector,
    pub records: Vec<RoundRecord>,
}

/// Runs `config.rounds` rounds of broadcast, parallel local optimization,
/// message round-trip and aggregation.
pub fn run_federation(clients: &mut [ClientState<'_>], config: &FederationConfig) -> Result<FederationOutcome> {
    if config.rounds == 0 {
        return Err(Error::Config("federation needs at least one round".into()));
    }
    config.optimizer.validate()?;
    let Some(first) = clients.first() else {
        return Err(Error::Config("federation needs at least one client".into()));
    };
    let dimension = first.dimension();
    let schema_hash = first.schema_hash();
    for c in clients.iter() {
        if c.schema_hash() != schema_hash || c.dimension() != dimension {
            return Err(c.wrap(Error::Schema("client layout differs from client 0".into())));
        }
    }
    let roster: Vec<(u32, usize)> = clients.iter().map(|c| (c.client_id, c.train_rows.len())).collect();

    let initial = init_global_weights(dimension, derive_seed(config.seed, SeedPurpose::WeightInit, 0));
    let mut global = initial.clone();
    let mut records = Vec::with_capacity(config.rounds as usize);
    for round in 1..=config.rounds {
        let outcomes = clients
            .par_iter_mut()
            .map(|c| {
                let out = local_round(c, &global, round, &config.optimizer)?;
                let received = transport(&out.message, config.message_format)?;
                let local = c.evaluate(&c.local_weights)?;
                Ok((received, out.report, local))
            })
            .collect::<Result<Vec<_>>>()?;

        let messages: Vec<WeightMessage> = outcomes.iter().map(|(m, _, _)| m.clone()).collect();
        let expected = RoundExpectation {
            round,
            schema_hash,
            dimension,
            clients: roster.clone(),
        };
        global = aggregate(&messages, &expected, config.aggregation)?;

        let global_acc = clients
            .par_iter()
            .map(|c| c.evaluate(&global))
            .collect::<Result<Vec<_>>>()?;
        let per_client = clients
            .iter()
            .zip(outcomes)
            .zip(global_acc)
            .map(|((c, (_, report, local)), global_acc)| ClientRoundRecord {
                client_id: c.client_id,
                objective_start: report.objective_trace[0],
                objective: report.final_value,
                iterations: report.iterations_used,
                termination: report.termination,
                objective_trace: report.objective_trace,
                train_acc: local.0,
                test_acc: local.1,
                global_train_acc: global_acc.0,
                global_test_acc: global_acc.1,
            })
            .collect();
        log::debug!("round {round}: |w| = {:.6}", global.norm());
        records.push(RoundRecord {
            round,
            clients: per_client,
            global_weights_norm: global.norm(),
        });
    }
    Ok(FederationOutcome {
        initial,
        global,
        records,
    })
}

#[derive(Serialize)]
struct TraceRow {
    round: u32,
    client_id: u32,
    objective: f64,
    iters_used: usize,
    train_acc: f64,
    test_acc: f64,
    global_train_acc: f64,
    global_test_acc: f64,
}

/// One CSV row per (round, client).
pub fn write_round_trace<W: Write>(records: &[RoundRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        for c in &r.clients {
            w.serialize(TraceRow {
                round: r.round,
                client_id: c.client_id,
                objective: c.objective,
                iters_used: c.iterations,
                train_acc: c.train_acc,
                test_acc: c.test_acc,
                global_train_acc: c.global_train_acc,
                global_test_acc: c.global_test_acc,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(id: u32, payload: Vec<f64>) -> WeightMessage {
        WeightMessage {
            round: 1,
            client_id: id,
            schema_hash: 7,
            payload,
        }
    }

    fn expect(clients: &[(u32, usize)], dimension: usize) -> RoundExpectation {
        RoundExpectation {
            round: 1,
            schema_hash: 7,
            dimension,
            clients: clients.to_vec(),
        }
    }

    #[test]
    fn two_point_mean() {
        let m = [msg(0, vec![1.0, 2.0]), msg(1, vec![3.0, 4.0])];
        let w = aggregate(&m, &expect(&[(0, 1), (1, 1)], 2), Aggregation::Uniform).unwrap();
        assert_eq!(w.as_slice(), &[2.0, 3.0]);
    }

    #[test]
    fn identical_payloads_are_exact() {
        let p = vec![0.1, 1.0 / 3.0, -7.25, 1e-300];
        let m: Vec<_> = (0..7).map(|i| msg(i, p.clone())).collect();
        let roster: Vec<_> = (0..7).map(|i| (i, 13)).collect();
        for mode in [Aggregation::Uniform, Aggregation::ShardWeighted] {
            assert_eq!(aggregate(&m, &expect(&roster, 4), mode).unwrap().as_slice(), p.as_slice());
        }
    }

    #[test]
    fn shard_weighting_skews_towards_larger_shard() {
        let m = [msg(0, vec![0.0]), msg(1, vec![4.0])];
        let w = aggregate(&m, &expect(&[(0, 1), (1, 3)], 1), Aggregation::ShardWeighted).unwrap();
        assert_eq!(w.as_slice(), &[3.0]);
    }

    #[test]
    fn aggregation_order_ignores_arrival_order() {
        let a = [msg(2, vec![0.3]), msg(0, vec![0.1]), msg(1, vec![0.7])];
        let b = [msg(0, vec![0.1]), msg(1, vec![0.7]), msg(2, vec![0.3])];
        let e = expect(&[(0, 1), (1, 1), (2, 1)], 1);
        assert_eq!(
            aggregate(&a, &e, Aggregation::Uniform).unwrap(),
            aggregate(&b, &e, Aggregation::Uniform).unwrap()
        );
    }

    #[test]
    fn aggregation_errors() {
        let e = expect(&[(0, 1), (1, 1)], 1);
        let missing = [msg(0, vec![1.0])];
        assert!(matches!(aggregate(&missing, &e, Aggregation::Uniform), Err(Error::Aggregation(_))));
        let mut late = msg(1, vec![1.0]);
        late.round = 2;
        assert!(aggregate(&[msg(0, vec![1.0]), late], &e, Aggregation::Uniform).is_err());
        let mut alien = msg(1, vec![1.0]);
        alien.schema_hash = 8;
        assert!(aggregate(&[msg(0, vec![1.0]), alien], &e, Aggregation::Uniform).is_err());
        let extra = [msg(0, vec![1.0]), msg(1, vec![1.0]), msg(5, vec![1.0])];
        assert!(aggregate(&extra, &e, Aggregation::Uniform).is_err());
        let short = [msg(0, vec![1.0]), msg(1, vec![])];
        assert!(aggregate(&short, &e, Aggregation::Uniform).is_err());
    }

    #[test]
    fn binary_layout() {
        let m = WeightMessage {
            round: 3,
            client_id: 9,
            schema_hash: 0x0102_0304_0506_0708,
            payload: vec![1.5],
        };
        let bytes = m.encode();
        assert_eq!(bytes.len(), HEADER_LEN + 8);
        assert_eq!(&bytes[..4], b"FNBW");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..10], &[3, 0, 0, 0]);
        assert_eq!(&bytes[14..22], &[8, 7, 6, 5, 4, 3, 2, 1]);
        assert_eq!(&bytes[22..30], &[1, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(WeightMessage::decode(&bytes).unwrap(), m);
    }

    #[test]
    fn corrupt_messages_rejected() {
        let bytes = msg(0, vec![1.0, 2.0]).encode();
        assert!(WeightMessage::decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(WeightMessage::decode(&bytes[..10]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(WeightMessage::decode(&bad).is_err());
        let mut v2 = bytes;
        v2[4] = 2;
        assert!(WeightMessage::decode(&v2).is_err());
    }

    #[test]
    fn json_mirror_round_trips() {
        let m = msg(4, vec![0.1, -2.5e-7, 1.0 / 3.0]);
        assert_eq!(transport(&m, MessageFormat::Json).unwrap(), m);
        assert!(m.to_json().unwrap().contains("\"schema_hash\":\"0000000000000007\""));
    }

    #[test]
    fn init_is_seeded_and_in_range() {
        let a = init_global_weights(6, 11);
        assert_eq!(a, init_global_weights(6, 11));
        assert_ne!(a, init_global_weights(6, 12));
        assert_eq!(a.len(), 6);
        assert!(a.iter().all(|v| (0.5..=1.5).contains(v)));
    }

    #[test]
    fn init_mean_is_one() {
        let w = init_global_weights(100_000, 3);
        let m = w.iter().sum::<f64>() / w.len() as f64;
        assert!((m - 1.0).abs() < 0.01);
    }

    #[test]
    fn zero_rounds_rejected() {
        let cfg = FederationConfig {
            rounds: 0,
            ..FederationConfig::default()
        };
        assert!(matches!(run_federation(&mut [], &cfg), Err(Error::Config(_))));
    }
}
