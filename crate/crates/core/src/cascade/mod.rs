//! Multi-exit routing engine: run a sample through exit 1, gate on the
//! decision unit's certainty, continue to exit 2, gate again, offload to the
//! server; tally exact per-destination counts, overall accuracy, and
//! compute/communication costs.

mod sweep;

pub use sweep::{default_sensitivity_grid, sweep, sweep_seq, SweepCell, SweepMatrix, SWEEP_CSV_HEADER};

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ReplayRow};
use crate::decision::{gate, DecisionUnit, GateDecision, Sensitivity};
use crate::error::{Error, Result};
use crate::meta::extract_meta;
use crate::morphnas::TwoExitModel;
use crate::nn::{softmax_t, MlpModel, ProbVector};

/// Exit-1 compute cost default (ms-equivalents, end-to-end from input).
pub const DEFAULT_EXIT1_COST: f64 = 38.0;
/// Exit-2 compute cost default, total from input (not additive with exit 1).
pub const DEFAULT_EXIT2_COST: f64 = 74.0;
/// Default communication cost charged per successful offload.
pub const DEFAULT_COMM_COST: f64 = 100.0;
/// Default remote-classification timeout.
pub const DEFAULT_TIMEOUT_MS: u64 = 1000;

/// Where exit-1 / exit-2 logits come from.
#[derive(Debug, Clone)]
pub enum ClientBinding {
    /// Compute both exits from input features with a two-exit model.
    TwoExit(TwoExitModel),
    /// Read pre-recorded logits from replay rows.
    Replay,
}

/// Where offloaded samples are classified.
#[derive(Debug, Clone)]
pub enum ServerRoute {
    /// In-process server model consuming the same feature space.
    Model(MlpModel),
    /// Read the replay row's `server` column.
    Replay,
    /// Remote endpoint address, resolved by the network runtime.
    Remote(String),
}

/// What to do when a remote server cannot answer in time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackPolicy {
    /// Drop the sample from the accuracy numerator and denominator.
    FailSample,
    /// Finalize with the exit-2 prediction, flagged in the outcome.
    UseLocalPrediction,
}

#[derive(Debug, Clone)]
pub struct ServerBinding {
    pub route: ServerRoute,
    /// Communication cost charged per successful offload.
    pub comm_cost: f64,
    pub timeout_ms: u64,
    pub fallback: FallbackPolicy,
}

impl ServerBinding {
    pub fn in_process(model: MlpModel) -> Self {
        ServerBinding {
            route: ServerRoute::Model(model),
            comm_cost: DEFAULT_COMM_COST,
            timeout_ms: DEFAULT_TIMEOUT_MS,
            fallback: FallbackPolicy::UseLocalPrediction,
        }
    }

    pub fn replay() -> Self {
        ServerBinding {
            route: ServerRoute::Replay,
            comm_cost: DEFAULT_COMM_COST,
            timeout_ms: DEFAULT_TIMEOUT_MS,
            fallback: FallbackPolicy::UseLocalPrediction,
        }
    }
}

/// One exit's decision machinery and cost.
#[derive(Debug, Clone)]
pub struct ExitConfig {
    pub du: DecisionUnit,
    pub sensitivity: Sensitivity,
    /// End-to-end compute cost of finalizing at this exit (a sample that
    /// reaches exit 2 pays the exit-2 cost alone, the exit-1 prefix is not
    /// double-counted).
    pub compute_cost: f64,
}

/// Fully bound routing policy: client exits, per-exit decision units and
/// sensitivities, cost constants, and the server binding.
#[derive(Debug, Clone)]
pub struct CascadePolicy {
    pub client: ClientBinding,
    pub exit1: ExitConfig,
    pub exit2: ExitConfig,
    pub server: ServerBinding,
}

impl CascadePolicy {
    pub fn validate(&self) -> Result<()> {
        for (name, cost) in [
            ("exit1 compute", self.exit1.compute_cost),
            ("exit2 compute", self.exit2.compute_cost),
            ("communication", self.server.comm_cost),
        ] {
            if !cost.is_finite() || cost < 0.0 {
                return Err(Error::domain(format!("{name} cost must be >= 0, got {cost}")));
            }
        }
        Ok(())
    }

    pub fn with_sensitivities(&self, s1: Sensitivity, s2: Sensitivity) -> CascadePolicy {
        let mut p = self.clone();
        p.exit1.sensitivity = s1;
        p.exit2.sensitivity = s2;
        p
    }
}

/// Stage at which a sample was finalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Destination {
    Exit1,
    Exit2,
    Server,
    /// Offload failed; finalized with the exit-2 prediction.
    ServerFallbackLocal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleOutcome {
    Finalized { at: Destination, predicted: usize },
    /// Offload failed under [`FallbackPolicy::FailSample`]; excluded from
    /// the accuracy numerator and denominator.
    Failed,
}

/// Routing result for one sample; certainties are present exactly for the
/// stages the sample visited.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingOutcome {
    pub sample_id: usize,
    pub outcome: SampleOutcome,
    pub certainty_exit1: f64,
    pub certainty_exit2: Option<f64>,
    pub compute_cost: f64,
    pub comm_cost: f64,
}

impl RoutingOutcome {
    /// Accumulated per-sample cost.
    pub fn cost(&self) -> f64 {
        self.compute_cost + self.comm_cost
    }
}

/// Exact per-run counters behind the overall-accuracy equations:
/// `accuracy = (T_N1 + T_N2 + S_P) / S_T` (plus fallback-correct samples
/// when offloads degrade to local predictions).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoutingTally {
    /// Total sample count.
    pub s_t: usize,
    pub exit1_total: usize,
    /// Finalized at exit 1 and correct.
    pub t_n1: usize,
    pub exit2_total: usize,
    /// Finalized at exit 2 and correct.
    pub t_n2: usize,
    pub server_total: usize,
    /// Offloaded and classified correctly by the server.
    pub s_p: usize,
    pub fallback_total: usize,
    pub fallback_correct: usize,
    pub failed_total: usize,
    pub compute_cost: f64,
    pub comm_cost: f64,
}

impl RoutingTally {
    pub fn absorb(&mut self, outcome: &RoutingOutcome, label: usize) {
        self.s_t += 1;
        self.compute_cost += outcome.compute_cost;
        self.comm_cost += outcome.comm_cost;
        match outcome.outcome {
            SampleOutcome::Finalized { at, predicted } => {
                let correct = predicted == label;
                match at {
                    Destination::Exit1 => {
                        self.exit1_total += 1;
                        self.t_n1 += usize::from(correct);
                    }
                    Destination::Exit2 => {
                        self.exit2_total += 1;
                        self.t_n2 += usize::from(correct);
                    }
                    Destination::Server => {
                        self.server_total += 1;
                        self.s_p += usize::from(correct);
                    }
                    Destination::ServerFallbackLocal => {
                        self.fallback_total += 1;
                        self.fallback_correct += usize::from(correct);
                    }
                }
            }
            SampleOutcome::Failed => self.failed_total += 1,
        }
    }

    /// Destination counts must always sum to the total.
    pub fn destination_total(&self) -> usize {
        self.exit1_total + self.exit2_total + self.server_total + self.fallback_total
            + self.failed_total
    }

    pub fn correct_total(&self) -> usize {
        self.t_n1 + self.t_n2 + self.s_p + self.fallback_correct
    }

    /// Overall accuracy; failed samples are excluded from both numerator and
    /// denominator.
    pub fn accuracy(&self) -> f64 {
        self.correct_total() as f64 / (self.s_t - self.failed_total) as f64
    }

    /// Fraction of samples escalated past exit 2 (offload attempts).
    pub fn offload_fraction(&self) -> f64 {
        (self.server_total + self.fallback_total + self.failed_total) as f64 / self.s_t as f64
    }

    pub fn exit1_fraction(&self) -> f64 {
        self.exit1_total as f64 / self.s_t as f64
    }

    pub fn mean_cost(&self) -> f64 {
        (self.compute_cost + self.comm_cost) / self.s_t as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub offload_frac: f64,
    pub exit1_frac: f64,
    pub mean_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tally: RoutingTally,
    pub metrics: Metrics,
}

impl EvalReport {
    fn from_tally(tally: RoutingTally) -> Self {
        let metrics = Metrics {
            accuracy: tally.accuracy(),
            offload_frac: tally.offload_fraction(),
            exit1_frac: tally.exit1_fraction(),
            mean_cost: tally.mean_cost(),
        };
        EvalReport { tally, metrics }
    }
}

/// A labeled evaluation set: either raw features or replay rows.
#[derive(Debug, Clone, Copy)]
pub enum EvalData<'a> {
    Features(&'a Dataset),
    Replay(&'a [ReplayRow]),
}

impl<'a> EvalData<'a> {
    pub fn len(&self) -> usize {
        match self {
            EvalData::Features(d) => d.len(),
            EvalData::Replay(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn label(&self, i: usize) -> usize {
        match self {
            EvalData::Features(d) => d.labels[i],
            EvalData::Replay(r) => r[i].label,
        }
    }

    fn sample(&self, i: usize) -> SampleRef<'a> {
        match self {
            EvalData::Features(d) => SampleRef::Features { id: i, x: &d.xs[i] },
            EvalData::Replay(r) => SampleRef::Replay(&r[i]),
        }
    }
}

/// One sample as seen by the router: raw features or a replay row.
#[derive(Debug, Clone, Copy)]
pub enum SampleRef<'a> {
    Features { id: usize, x: &'a [f64] },
    Replay(&'a ReplayRow),
}

impl<'a> SampleRef<'a> {
    pub fn id(&self) -> usize {
        match self {
            SampleRef::Features { id, .. } => *id,
            SampleRef::Replay(row) => row.id,
        }
    }
}

/// How a server classification attempt failed.
#[derive(Debug, Clone)]
pub enum ServerCallError {
    /// Timeout or connection failure: the fallback policy applies.
    Unavailable(String),
    /// Malformed or missing data (e.g. replay row without a server column):
    /// the evaluation aborts.
    Data(String),
    /// Protocol violation or server-reported failure: the evaluation aborts.
    Network(String),
}

/// Classifies escalated samples. In-process backends wrap a model or replay
/// column; the network runtime provides a remote one.
pub trait ServerBackend: Sync {
    fn classify(&self, sample: &SampleRef<'_>) -> std::result::Result<ProbVector, ServerCallError>;
}

/// Backend for [`ServerRoute::Model`] and [`ServerRoute::Replay`].
pub struct InProcessServer<'a> {
    route: &'a ServerRoute,
}

impl<'a> InProcessServer<'a> {
    pub fn new(route: &'a ServerRoute) -> Result<Self> {
        if matches!(route, ServerRoute::Remote(_)) {
            return Err(Error::config(
                "remote server binding requires the network runtime (run_cascade_remote)",
            ));
        }
        Ok(InProcessServer { route })
    }
}

impl ServerBackend for InProcessServer<'_> {
    fn classify(&self, sample: &SampleRef<'_>) -> std::result::Result<ProbVector, ServerCallError> {
        match (self.route, sample) {
            (ServerRoute::Model(model), SampleRef::Features { x, .. }) => model
                .forward(x)
                .and_then(|logits| softmax_t(&logits, 1.0))
                .map_err(|e| ServerCallError::Data(e.to_string())),
            (ServerRoute::Model(_), SampleRef::Replay(row)) => Err(ServerCallError::Data(format!(
                "server model binding needs feature samples, got replay row {}",
                row.id
            ))),
            (ServerRoute::Replay, SampleRef::Replay(row)) => match &row.server {
                Some(logits) => {
                    softmax_t(logits, 1.0).map_err(|e| ServerCallError::Data(e.to_string()))
                }
                None => Err(ServerCallError::Data(format!(
                    "replay row {} is missing the server column",
                    row.id
                ))),
            },
            (ServerRoute::Replay, SampleRef::Features { id, .. }) => Err(ServerCallError::Data(
                format!("server replay binding needs replay rows, got features for sample {id}"),
            )),
            (ServerRoute::Remote(_), _) => Err(ServerCallError::Network(
                "remote route reached the in-process backend".to_string(),
            )),
        }
    }
}

fn exit_probs(client: &ClientBinding, sample: &SampleRef<'_>, stage: Stage) -> Result<ProbVector> {
    let logits = match (client, sample) {
        (ClientBinding::TwoExit(model), SampleRef::Features { x, .. }) => match stage {
            Stage::Exit1 => model.forward_exit1(x)?,
            Stage::Exit2 => model.forward_exit2(x)?,
        },
        (ClientBinding::Replay, SampleRef::Replay(row)) => match stage {
            Stage::Exit1 => row.exit1.clone(),
            Stage::Exit2 => row.exit2.clone(),
        },
        (ClientBinding::TwoExit(_), SampleRef::Replay(row)) => {
            return Err(Error::domain(format!(
                "model client binding needs feature samples, got replay row {}",
                row.id
            )))
        }
        (ClientBinding::Replay, SampleRef::Features { id, .. }) => {
            return Err(Error::domain(format!(
                "replay client binding needs replay rows, got features for sample {id}"
            )))
        }
    };
    softmax_t(&logits, 1.0)
}

/// Client exit stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Exit1,
    Exit2,
}

/// Routes one sample with an explicit server backend.
pub fn route_sample_with(
    policy: &CascadePolicy,
    sample: &SampleRef<'_>,
    server: &dyn ServerBackend,
) -> Result<RoutingOutcome> {
    let id = sample.id();
    let probs1 = exit_probs(&policy.client, sample, Stage::Exit1)?;
    let certainty1 = policy.exit1.du.certainty(&extract_meta(&probs1));
    if gate(certainty1, policy.exit1.sensitivity) == GateDecision::KeepLocal {
        return Ok(RoutingOutcome {
            sample_id: id,
            outcome: SampleOutcome::Finalized {
                at: Destination::Exit1,
                predicted: probs1.argmax(),
            },
            certainty_exit1: certainty1,
            certainty_exit2: None,
            compute_cost: policy.exit1.compute_cost,
            comm_cost: 0.0,
        });
    }

    let probs2 = exit_probs(&policy.client, sample, Stage::Exit2)?;
    let certainty2 = policy.exit2.du.certainty(&extract_meta(&probs2));
    if gate(certainty2, policy.exit2.sensitivity) == GateDecision::KeepLocal {
        return Ok(RoutingOutcome {
            sample_id: id,
            outcome: SampleOutcome::Finalized {
                at: Destination::Exit2,
                predicted: probs2.argmax(),
            },
            certainty_exit1: certainty1,
            certainty_exit2: Some(certainty2),
            compute_cost: policy.exit2.compute_cost,
            comm_cost: 0.0,
        });
    }

    match server.classify(sample) {
        Ok(server_probs) => Ok(RoutingOutcome {
            sample_id: id,
            outcome: SampleOutcome::Finalized {
                at: Destination::Server,
                predicted: server_probs.argmax(),
            },
            certainty_exit1: certainty1,
            certainty_exit2: Some(certainty2),
            compute_cost: policy.exit2.compute_cost,
            comm_cost: policy.server.comm_cost,
        }),
        Err(ServerCallError::Unavailable(_)) => {
            let outcome = match policy.server.fallback {
                FallbackPolicy::UseLocalPrediction => SampleOutcome::Finalized {
                    at: Destination::ServerFallbackLocal,
                    predicted: probs2.argmax(),
                },
                FallbackPolicy::FailSample => SampleOutcome::Failed,
            };
            Ok(RoutingOutcome {
                sample_id: id,
                outcome,
                certainty_exit1: certainty1,
                certainty_exit2: Some(certainty2),
                compute_cost: policy.exit2.compute_cost,
                comm_cost: 0.0,
            })
        }
        Err(ServerCallError::Data(msg)) => Err(Error::data(msg)),
        Err(ServerCallError::Network(msg)) => Err(Error::network(msg)),
    }
}

/// Routes one sample with the policy's own (in-process) server binding.
pub fn route_sample(policy: &CascadePolicy, sample: &SampleRef<'_>) -> Result<RoutingOutcome> {
    let server = InProcessServer::new(&policy.server.route)?;
    route_sample_with(policy, sample, &server)
}

fn check_bindings(policy: &CascadePolicy, data: &EvalData<'_>) -> Result<()> {
    policy.validate()?;
    match (&policy.client, data) {
        (ClientBinding::TwoExit(_), EvalData::Features(_)) => {}
        (ClientBinding::Replay, EvalData::Replay(_)) => {}
        (ClientBinding::TwoExit(_), EvalData::Replay(_)) => {
            return Err(Error::domain(
                "model client binding needs feature data, got replay rows",
            ))
        }
        (ClientBinding::Replay, EvalData::Features(_)) => {
            return Err(Error::domain(
                "replay client binding needs replay rows, got feature data",
            ))
        }
    }
    match (&policy.server.route, data) {
        (ServerRoute::Model(_), EvalData::Replay(_)) => Err(Error::domain(
            "server model binding needs feature data, got replay rows",
        )),
        (ServerRoute::Replay, EvalData::Features(_)) => Err(Error::domain(
            "server replay binding needs replay rows, got feature data",
        )),
        (ServerRoute::Replay, EvalData::Replay(rows)) => {
            // Fail fast: a replay-bound server requires every row's column.
            match rows.iter().find(|r| r.server.is_none()) {
                Some(row) => Err(Error::data(format!(
                    "replay row {} is missing the server column required by the server binding",
                    row.id
                ))),
                None => Ok(()),
            }
        }
        _ => Ok(()),
    }
}

fn route_all(
    policy: &CascadePolicy,
    data: &EvalData<'_>,
    server: &dyn ServerBackend,
    parallel: bool,
) -> Result<Vec<RoutingOutcome>> {
    let route_one = |i: usize| route_sample_with(policy, &data.sample(i), server);
    #[cfg(feature = "parallel")]
    {
        if parallel {
            use rayon::prelude::*;
            return (0..data.len()).into_par_iter().map(route_one).collect();
        }
    }
    let _ = parallel;
    (0..data.len()).map(route_one).collect()
}

fn evaluate_impl(
    policy: &CascadePolicy,
    data: &EvalData<'_>,
    server: &dyn ServerBackend,
    parallel: bool,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::domain("cannot evaluate an empty dataset"));
    }
    check_bindings(policy, data)?;
    let outcomes = route_all(policy, data, server, parallel)?;
    let mut tally = RoutingTally::default();
    for (i, outcome) in outcomes.iter().enumerate() {
        tally.absorb(outcome, data.label(i));
    }
    debug_assert_eq!(tally.destination_total(), tally.s_t);
    Ok(EvalReport::from_tally(tally))
}

/// Evaluates a policy over a labeled set with an explicit server backend.
/// Samples are routed in parallel when the `parallel` feature is enabled;
/// the tally is folded in sample order either way, so results are
/// bit-identical across both paths.
pub fn evaluate_with(
    policy: &CascadePolicy,
    data: &EvalData<'_>,
    server: &dyn ServerBackend,
) -> Result<EvalReport> {
    evaluate_impl(policy, data, server, true)
}

/// Sequential variant of [`evaluate_with`].
pub fn evaluate_with_seq(
    policy: &CascadePolicy,
    data: &EvalData<'_>,
    server: &dyn ServerBackend,
) -> Result<EvalReport> {
    evaluate_impl(policy, data, server, false)
}

/// Evaluates a policy whose server binding is in-process (model or replay).
pub fn evaluate(policy: &CascadePolicy, data: &EvalData<'_>) -> Result<EvalReport> {
    let server = InProcessServer::new(&policy.server.route)?;
    evaluate_impl(policy, data, &server, true)
}

/// Sequential variant of [`evaluate`].
pub fn evaluate_seq(policy: &CascadePolicy, data: &EvalData<'_>) -> Result<EvalReport> {
    let server = InProcessServer::new(&policy.server.route)?;
    evaluate_impl(policy, data, &server, false)
}

/// Per-sample probabilities of one client exit over a whole set.
pub fn stage_probs(
    client: &ClientBinding,
    data: &EvalData<'_>,
    stage: Stage,
) -> Result<Vec<ProbVector>> {
    (0..data.len())
        .map(|i| exit_probs(client, &data.sample(i), stage))
        .collect()
}

/// Standalone accuracy of one client exit: fraction of samples whose exit
/// argmax matches the label.
pub fn stage_standalone_accuracy(
    client: &ClientBinding,
    data: &EvalData<'_>,
    stage: Stage,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::domain("cannot score an empty dataset"));
    }
    let probs = stage_probs(client, data, stage)?;
    let correct = probs
        .iter()
        .enumerate()
        .filter(|(i, p)| p.argmax() == data.label(*i))
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Standalone accuracy of the server route over a whole set.
pub fn server_standalone_accuracy(route: &ServerRoute, data: &EvalData<'_>) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::domain("cannot score an empty dataset"));
    }
    let server = InProcessServer::new(route)?;
    let mut correct = 0;
    for i in 0..data.len() {
        let probs = server
            .classify(&data.sample(i))
            .map_err(|e| match e {
                ServerCallError::Data(m) | ServerCallError::Unavailable(m) => Error::data(m),
                ServerCallError::Network(m) => Error::network(m),
            })?;
        if probs.argmax() == data.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::{train_decision_unit, DecisionUnitConfig, DuSample};
    use crate::meta::MetaFeatures;
    use crate::nn::LogitVector;

    /// Decision unit whose certainty tracks max probability: trained on a
    /// cleanly separable meta set so high-MP inputs score high.
    fn monotone_du(seed: u64) -> DecisionUnit {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut samples = Vec::new();
        for _ in 0..400 {
            let correct = rng.gen_bool(0.5);
            let mp: f64 = if correct {
                rng.gen_range(0.9..0.99)
            } else {
                rng.gen_range(0.34..0.5)
            };
            let rest = 1.0 - mp;
            let a = rng.gen_range(0.3..0.7) * rest;
            let probs = ProbVector::new(vec![mp, a, rest - a]).unwrap();
            samples.push(DuSample {
                features: extract_meta(&probs),
                correct,
            });
        }
        train_decision_unit(&samples, &DecisionUnitConfig { seed, ..Default::default() }).unwrap()
    }

    fn lv(v: &[f64]) -> LogitVector {
        LogitVector::new(v.to_vec()).unwrap()
    }

    /// Replay rows where exit1 is confidently correct for even ids,
    /// exit2 confidently correct for ids divisible by 3, server always right.
    fn replay_rows(n: usize) -> Vec<ReplayRow> {
        (0..n)
            .map(|id| {
                let label = id % 3;
                let peak = |on: bool, strength: f64| -> LogitVector {
                    let mut z = vec![0.0; 3];
                    if on {
                        z[label] = strength;
                    } else {
                        z[(label + 1) % 3] = 0.4;
                        z[label] = 0.3;
                    }
                    lv(&z)
                };
                ReplayRow {
                    id,
                    label,
                    exit1: peak(id % 2 == 0, 6.0),
                    exit2: peak(id % 3 == 0 || id % 2 == 0, 6.0),
                    server: Some(peak(true, 8.0)),
                }
            })
            .collect()
    }

    fn replay_policy(s1: f64, s2: f64) -> CascadePolicy {
        CascadePolicy {
            client: ClientBinding::Replay,
            exit1: ExitConfig {
                du: monotone_du(1),
                sensitivity: Sensitivity::new(s1).unwrap(),
                compute_cost: DEFAULT_EXIT1_COST,
            },
            exit2: ExitConfig {
                du: monotone_du(2),
                sensitivity: Sensitivity::new(s2).unwrap(),
                compute_cost: DEFAULT_EXIT2_COST,
            },
            server: ServerBinding::replay(),
        }
    }

    #[test]
    fn default_costs_keep_exit2_at_least_exit1() {
        assert!(DEFAULT_EXIT2_COST >= DEFAULT_EXIT1_COST);
    }

    #[test]
    fn tally_accuracy_matches_direct_substitution() {
        let tally = RoutingTally {
            s_t: 10,
            exit1_total: 3,
            t_n1: 2,
            exit2_total: 4,
            t_n2: 4,
            server_total: 3,
            s_p: 3,
            ..Default::default()
        };
        assert!((tally.accuracy() - 0.9).abs() < 1e-15);
        assert_eq!(tally.destination_total(), 10);
    }

    #[test]
    fn sensitivity_zero_keeps_everything_at_exit1() {
        let rows = replay_rows(60);
        let policy = replay_policy(0.0, 0.0);
        let report = evaluate(&policy, &EvalData::Replay(&rows)).unwrap();
        assert_eq!(report.tally.exit1_total, 60);
        assert_eq!(report.tally.server_total, 0);
        let standalone =
            stage_standalone_accuracy(&policy.client, &EvalData::Replay(&rows), Stage::Exit1)
                .unwrap();
        assert_eq!(report.metrics.accuracy, standalone);
        // Every sample pays exactly the exit-1 cost.
        let expected = DEFAULT_EXIT1_COST * 60.0;
        assert!((report.tally.compute_cost - expected).abs() < 1e-9);
    }

    #[test]
    fn sensitivity_one_offloads_everything() {
        let rows = replay_rows(60);
        let policy = replay_policy(1.0, 1.0);
        let report = evaluate(&policy, &EvalData::Replay(&rows)).unwrap();
        assert_eq!(report.tally.server_total, 60);
        let standalone =
            server_standalone_accuracy(&policy.server.route, &EvalData::Replay(&rows)).unwrap();
        assert_eq!(report.metrics.accuracy, standalone);
        assert_eq!(report.metrics.offload_frac, 1.0);
    }

    #[test]
    fn replay_evaluation_is_deterministic() {
        let rows = replay_rows(40);
        let policy = replay_policy(0.6, 0.6);
        let a = evaluate(&policy, &EvalData::Replay(&rows)).unwrap();
        let b = evaluate(&policy, &EvalData::Replay(&rows)).unwrap();
        assert_eq!(a, b);
        let seq = evaluate_seq(&policy, &EvalData::Replay(&rows)).unwrap();
        assert_eq!(a, seq);
    }

    #[test]
    fn missing_server_column_fails_fast_when_required() {
        let mut rows = replay_rows(10);
        rows[7].server = None;
        let policy = replay_policy(0.0, 0.0);
        // Even though nothing would offload at (0,0), the binding demands
        // the column.
        let err = evaluate(&policy, &EvalData::Replay(&rows)).unwrap_err();
        assert_eq!(err.category(), "data");
        assert!(err.to_string().contains("7"), "{err}");
    }

    #[test]
    fn empty_dataset_is_a_domain_error() {
        let policy = replay_policy(0.5, 0.5);
        let err = evaluate(&policy, &EvalData::Replay(&[])).unwrap_err();
        assert_eq!(err.category(), "domain");
    }

    #[test]
    fn remote_route_needs_the_network_runtime() {
        let rows = replay_rows(4);
        let mut policy = replay_policy(0.5, 0.5);
        policy.server.route = ServerRoute::Remote("127.0.0.1:1".to_string());
        let err = evaluate(&policy, &EvalData::Replay(&rows)).unwrap_err();
        assert_eq!(err.category(), "config");
    }
}
