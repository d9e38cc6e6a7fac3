//! In-process federation: agents, the two-phase protocol, baselines.
//!
//! Agents train concurrently between barriers and report to a single
//! aggregator over an mpsc channel. Only [`wire::WireMessage`]s cross that
//! channel. Every agent draws from its own seeded streams, so thread
//! scheduling never changes a result.

mod metrics;
pub mod wire;

use std::sync::mpsc;
use std::thread;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use metrics::{evaluate, evaluate_predictions, GroupMean, MetricsReport, DECISION_THRESHOLD};
pub use wire::{SharedParams, WireMessage, WirePayload, WIRE_FIELDS};

use crate::accountant::PrivacyLedger;
use crate::config::{Phase1Config, Phase2Config};
use crate::data::{ShardPlan, TabularDataset};
use crate::distill::TeacherSnapshot;
use crate::dp::{DpConfig, DpTrainState};
use crate::fairness::{phase1_loss_and_grad, FairnessMetricKind, LagrangeState};
use crate::nn::{Mlp, Optimizer, ParamVector};
use crate::seed::{stream, Phase, Purpose, GLOBAL_AGENT};
use crate::{Error, Result};

/// Layer widths `[d, hidden.., 1]`.
pub fn model_dims(input_dim: usize, hidden: &[usize]) -> Vec<usize> {
    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(input_dim);
    dims.extend_from_slice(hidden);
    dims.push(1);
    dims
}

/// Per-epoch record of fair training.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FairTrajectory {
    /// Multiplier at the end of each epoch.
    pub lambda: Vec<f64>,
    /// Mean batch cross-entropy of each epoch.
    pub ce: Vec<f64>,
    /// Mean batch fairness gap of each epoch.
    pub gap: Vec<f64>,
}

/// Teacher model and multiplier after fair training.
#[derive(Debug, Clone)]
pub struct FairTrainState {
    pub model: Mlp,
    pub lagrange: LagrangeState,
    pub trajectory: FairTrajectory,
}

/// Hyperparameters of one fair-SGD run.
#[derive(Debug, Clone, Copy)]
pub struct FairSgd {
    pub kind: FairnessMetricKind,
    pub batch_size: usize,
    pub epochs: usize,
}

/// Shuffled minibatch fair-SGD: primal step on `BCE + λ·gap`, then a dual
/// ascent step on λ, once per batch.
pub fn train_fair<R: Rng + ?Sized>(
    model: &mut Mlp,
    optimizer: &mut Optimizer,
    lagrange: &mut LagrangeState,
    data: &TabularDataset,
    run: FairSgd,
    rng: &mut R,
    trajectory: &mut FairTrajectory,
) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyBatch("fair training on an empty shard".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; model.num_params()];
    for epoch in 0..run.epochs {
        order.shuffle(rng);
        let (mut ce, mut gap, mut batches) = (0.0, 0.0, 0.0);
        for idx in order.chunks(run.batch_size) {
            let batch = data.batch(idx);
            let loss = phase1_loss_and_grad(model, &batch, run.kind, lagrange.lambda, &mut grad)?;
            if !loss.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Aborted(format!(
                    "non-finite fair loss at epoch {epoch} (ce {}, gap {}, lambda {})",
                    loss.ce, loss.gap, lagrange.lambda
                )));
            }
            optimizer.step(&mut model.params_mut().0, &grad);
            *lagrange = lagrange.dual_ascent_step(loss.gap);
            ce += loss.ce;
            gap += loss.gap;
            batches += 1.0;
        }
        trajectory.lambda.push(lagrange.lambda);
        trajectory.ce.push(ce / batches);
        trajectory.gap.push(gap / batches);
    }
    Ok(())
}

/// Per-agent privacy summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentPrivacy {
    pub agent: usize,
    pub q: f64,
    pub sigma: f64,
    pub delta: f64,
    /// Noisy steps taken.
    pub steps: u64,
    /// Local epochs taken.
    pub epochs: usize,
    /// `None` when no noise was applied (unbounded).
    pub epsilon: Option<f64>,
}

#[derive(Debug)]
struct BaselineState {
    lagrange: LagrangeState,
    shuffle: rand_chacha::ChaCha8Rng,
    trajectory: FairTrajectory,
}

#[derive(Debug)]
struct PrivateState {
    teacher: TeacherSnapshot,
    student: DpTrainState,
    cfg: DpConfig,
    ledger: PrivacyLedger,
    epochs: usize,
}

/// One participant. Holds its shard and all local state; only
/// [`SharedParams`] ever leave it.
#[derive(Debug)]
pub struct Agent {
    id: usize,
    seed: u64,
    shard: TabularDataset,
    fair: Option<FairTrainState>,
    private: Option<PrivateState>,
    baseline: Option<BaselineState>,
}

impl Agent {
    pub fn new(id: usize, shard: TabularDataset, seed: u64) -> Result<Self> {
        if shard.is_empty() {
            return Err(Error::EmptyBatch(format!("agent {id} has an empty shard")));
        }
        Ok(Self {
            id,
            seed,
            shard,
            fair: None,
            private: None,
            baseline: None,
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shard_len(&self) -> usize {
        self.shard.len()
    }

    pub fn fair_state(&self) -> Option<&FairTrainState> {
        self.fair.as_ref()
    }

    pub fn ledger(&self) -> Option<&PrivacyLedger> {
        self.private.as_ref().map(|p| &p.ledger)
    }

    fn stream(&self, phase: Phase, purpose: Purpose) -> rand_chacha::ChaCha8Rng {
        stream(self.seed, self.id as u64, phase, purpose)
    }

    /// Trains the local fair teacher. Emits nothing.
    pub fn run_phase1(
        &mut self,
        hidden: &[usize],
        cfg: &Phase1Config,
        kind: FairnessMetricKind,
    ) -> Result<&FairTrainState> {
        let dims = model_dims(self.shard.n_features, hidden);
        let mut model = Mlp::new(&dims, &mut self.stream(Phase::Fair, Purpose::Init))?;
        let mut optimizer = Optimizer::new(cfg.optimizer, cfg.lr, model.num_params());
        let mut lagrange = LagrangeState::new(cfg.lambda_init, cfg.lambda_max, cfg.dual_lr)?;
        let mut trajectory = FairTrajectory::default();
        let run = FairSgd {
            kind,
            batch_size: cfg.batch_size,
            epochs: cfg.epochs,
        };
        let mut rng = self.stream(Phase::Fair, Purpose::Shuffle);
        train_fair(&mut model, &mut optimizer, &mut lagrange, &self.shard, run, &mut rng, &mut trajectory)
            .map_err(|e| self.tag(e))?;
        Ok(self.fair.insert(FairTrainState {
            model,
            lagrange,
            trajectory,
        }))
    }

    /// Freezes the teacher and sets up the private student and its ledger.
    pub fn begin_phase2(&mut self, cfg: &Phase2Config, sigma: f64, delta: f64) -> Result<()> {
        let fair = self
            .fair
            .as_ref()
            .ok_or_else(|| Error::Protocol(format!("agent {} entered the private phase before fair training", self.id)))?;
        let teacher = TeacherSnapshot::new(fair.model.clone(), &self.shard.rows())?;
        let dp = DpConfig::for_shard(cfg.clip_norm, sigma, cfg.batch_size, self.shard.len(), cfg.lr)?;
        let student = DpTrainState::new(
            Mlp::zeros(fair.model.dims())?,
            self.stream(Phase::Private, Purpose::Sampler),
            self.stream(Phase::Private, Purpose::Noise),
        );
        let ledger = PrivacyLedger::new(dp.sample_rate, sigma, delta)?;
        self.private = Some(PrivateState {
            teacher,
            student,
            cfg: dp,
            ledger,
            epochs: 0,
        });
        Ok(())
    }

    /// Re-initializes the student from `global` and runs `local_epochs` of
    /// DP-SGD against the agent's own teacher.
    pub fn run_phase2_round(&mut self, global: &ParamVector, local_epochs: usize) -> Result<SharedParams> {
        let id = self.id;
        let rows = self.shard.rows();
        let state = self
            .private
            .as_mut()
            .ok_or_else(|| Error::Protocol(format!("agent {id} has no private phase set up")))?;
        state.student.model.set_params(global.clone())?;
        let steps = state.cfg.steps_per_epoch() * local_epochs as u64;
        for _ in 0..steps {
            state
                .student
                .sample_and_step(&rows, state.teacher.outputs(), &state.cfg)?;
        }
        state.ledger.record_steps(steps);
        state.epochs += local_epochs;
        let params = state.student.model.flatten();
        if !params.is_finite() {
            return Err(Error::Aborted(format!("agent {id}: private model diverged")));
        }
        Ok(SharedParams::new(params))
    }

    pub fn privacy(&self) -> Result<Option<AgentPrivacy>> {
        let Some(p) = &self.private else { return Ok(None) };
        let eps = p.ledger.epsilon()?;
        Ok(Some(AgentPrivacy {
            agent: self.id,
            q: p.ledger.q,
            sigma: p.ledger.sigma,
            delta: p.ledger.delta,
            steps: p.ledger.steps,
            epochs: p.epochs,
            epsilon: eps.is_finite().then_some(eps),
        }))
    }

    /// One baseline round: local (fair-)SGD from `global`, no clipping, no
    /// noise. λ persists across rounds; optimizer state does not.
    pub fn run_baseline_round(
        &mut self,
        global: &ParamVector,
        dims: &[usize],
        cfg: &Phase1Config,
        kind: FairnessMetricKind,
        fair: bool,
        local_epochs: usize,
    ) -> Result<SharedParams> {
        if self.baseline.is_none() {
            let lagrange = if fair {
                LagrangeState::new(cfg.lambda_init, cfg.lambda_max, cfg.dual_lr)?
            } else {
                LagrangeState::new(0.0, cfg.lambda_max, 0.0)?
            };
            self.baseline = Some(BaselineState {
                lagrange,
                shuffle: self.stream(Phase::Baseline, Purpose::Shuffle),
                trajectory: FairTrajectory::default(),
            });
        }
        let state = self.baseline.as_mut().expect("initialized above");
        let mut model = Mlp::unflatten(dims, global.clone())?;
        let mut optimizer = Optimizer::new(cfg.optimizer, cfg.lr, model.num_params());
        let run = FairSgd {
            kind,
            batch_size: cfg.batch_size,
            epochs: local_epochs,
        };
        let mut trajectory = FairTrajectory::default();
        let res = train_fair(
            &mut model,
            &mut optimizer,
            &mut state.lagrange,
            &self.shard,
            run,
            &mut state.shuffle,
            &mut trajectory,
        );
        // Only the end-of-round multiplier is kept.
        if let (Some(&l), Some(&c), Some(&g)) = (trajectory.lambda.last(), trajectory.ce.last(), trajectory.gap.last()) {
            state.trajectory.lambda.push(l);
            state.trajectory.ce.push(c);
            state.trajectory.gap.push(g);
        }
        res.map_err(|e| self.tag(e))?;
        Ok(SharedParams::new(model.flatten()))
    }

    fn tag(&self, e: Error) -> Error {
        match e {
            Error::Aborted(msg) => Error::Aborted(format!("agent {}: {msg}", self.id)),
            other => other,
        }
    }
}

/// Messages of one round, as collected by the aggregator.
#[derive(Debug, Clone)]
pub struct AggregationRound {
    pub round: u32,
    pub expected_agents: usize,
    pub messages: Vec<WireMessage>,
}

/// `|X_i| / Σ_j |X_j|`.
pub fn aggregation_weights(shard_sizes: &[u64]) -> Vec<f64> {
    let total: u64 = shard_sizes.iter().sum();
    shard_sizes.iter().map(|&s| s as f64 / total as f64).collect()
}

/// Shard-size weighted average of the reported parameters.
///
/// Requires exactly one message per agent id `0..expected_agents`, all for
/// this round and of equal length. Equal shards give the plain mean
/// (sum, then divide by the agent count).
pub fn aggregate(round: &AggregationRound) -> Result<ParamVector> {
    let m = round.expected_agents;
    let mut slots: Vec<Option<&WireMessage>> = vec![None; m];
    for msg in &round.messages {
        let id = msg.agent_id() as usize;
        if msg.round() != round.round {
            return Err(Error::Protocol(format!(
                "agent {id} reported for round {} during round {}",
                msg.round(),
                round.round
            )));
        }
        match slots.get_mut(id) {
            None => return Err(Error::Protocol(format!("unknown agent id {id} (expected < {m})"))),
            Some(Some(_)) => return Err(Error::Protocol(format!("agent {id} reported twice in round {}", round.round))),
            Some(slot) => *slot = Some(msg),
        }
        if msg.shard_size() == 0 {
            return Err(Error::Protocol(format!("agent {id} reported an empty shard")));
        }
    }
    let missing: Vec<usize> = (0..m).filter(|&i| slots[i].is_none()).collect();
    if m == 0 || !missing.is_empty() {
        return Err(Error::Protocol(format!(
            "round {}: no report from agent(s) {missing:?}",
            round.round
        )));
    }
    let msgs: Vec<&WireMessage> = slots.into_iter().flatten().collect();
    let params = msgs.iter().map(|m| m.params()).collect::<Result<Vec<_>>>()?;
    let len = params[0].len();
    if params.iter().any(|p| p.len() != len) {
        return Err(Error::Protocol(format!("round {}: parameter lengths differ", round.round)));
    }
    let sizes: Vec<u64> = msgs.iter().map(|m| m.shard_size()).collect();
    let mut out = vec![0.0; len];
    if sizes.iter().all(|&s| s == sizes[0]) {
        for p in &params {
            for (o, v) in out.iter_mut().zip(&p.0) {
                *o += v;
            }
        }
        let n = m as f64;
        out.iter_mut().for_each(|o| *o /= n);
    } else {
        for (p, w) in params.iter().zip(aggregation_weights(&sizes)) {
            for (o, v) in out.iter_mut().zip(&p.0) {
                *o += w * v;
            }
        }
    }
    Ok(ParamVector(out))
}

/// Metrics of the global model after one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub accuracy: f64,
    pub demp: Option<f64>,
    pub eo: Option<f64>,
}

/// Training data already split and dealt to agents.
#[derive(Debug, Clone)]
pub struct FederatedData {
    pub train: TabularDataset,
    pub test: TabularDataset,
    pub plan: ShardPlan,
}

/// Everything the protocol needs besides data.
#[derive(Debug, Clone)]
pub struct FederationSetup {
    pub hidden: Vec<usize>,
    pub seed: u64,
    pub fairness: FairnessMetricKind,
    pub phase1: Phase1Config,
    pub phase2: Phase2Config,
    /// Resolved noise multiplier (FPFL only).
    pub sigma: f64,
    pub delta: f64,
}

/// Result of a federated run. `abort` is set if training stopped on an
/// error; fields then hold whatever was completed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FederatedOutcome {
    pub rounds: Vec<RoundMetrics>,
    pub final_metrics: Option<MetricsReport>,
    pub global: Option<ParamVector>,
    pub privacy: Vec<AgentPrivacy>,
    /// Per-agent multiplier and loss history (per epoch for FPFL teachers,
    /// per round for baselines).
    pub trajectories: Vec<FairTrajectory>,
    pub stopped_early: bool,
    pub abort: Option<String>,
}

impl FederatedOutcome {
    /// Turns an aborted outcome into an error.
    pub fn ok(self) -> Result<Self> {
        match &self.abort {
            Some(msg) => Err(Error::Aborted(msg.clone())),
            None => Ok(self),
        }
    }
}

/// Accuracy plateau: less than this gained over [`PLATEAU_WINDOW`] rounds.
pub const PLATEAU_TOLERANCE: f64 = 0.001;
pub const PLATEAU_WINDOW: usize = 2;

fn plateaued(rounds: &[RoundMetrics]) -> bool {
    let n = rounds.len();
    n > PLATEAU_WINDOW && rounds[n - 1].accuracy - rounds[n - 1 - PLATEAU_WINDOW].accuracy < PLATEAU_TOLERANCE
}

fn make_agents(data: &FederatedData, seed: u64) -> Result<Vec<Agent>> {
    data.plan
        .shards
        .iter()
        .enumerate()
        .map(|(i, idx)| Agent::new(i, data.train.subset(idx), seed))
        .collect()
}

fn initial_global(dims: &[usize], seed: u64) -> Result<ParamVector> {
    Ok(Mlp::new(dims, &mut stream(seed, GLOBAL_AGENT, Phase::Global, Purpose::Init))?.flatten())
}

/// Runs `work` on every agent concurrently and returns the results in agent order.
fn on_all_agents<T: Send>(agents: &mut [Agent], work: impl Fn(&mut Agent) -> Result<T> + Sync) -> Result<Vec<T>> {
    let work = &work;
    thread::scope(|s| {
        let handles: Vec<_> = agents.iter_mut().map(|a| s.spawn(move || work(a))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Aborted("agent thread panicked".into()))))
            .collect()
    })
}

/// One synchronous round: every agent trains from `global` and sends a
/// message; the aggregator waits for all of them before averaging.
fn federated_round(
    agents: &mut [Agent],
    round: u32,
    global: &ParamVector,
    local: impl Fn(&mut Agent, &ParamVector) -> Result<SharedParams> + Sync,
) -> Result<ParamVector> {
    let (tx, rx) = mpsc::channel::<WireMessage>();
    let local = &local;
    on_all_agents(agents, |agent| {
        let payload = local(agent, global)?;
        let msg = WireMessage::new(agent.id() as u32, round, &payload, agent.shard_len() as u64);
        tx.send(msg).map_err(|_| Error::Protocol("aggregator hung up".into()))
    })?;
    drop(tx);
    aggregate(&AggregationRound {
        round,
        expected_agents: agents.len(),
        messages: rx.into_iter().collect(),
    })
}

fn run_rounds(
    agents: &mut [Agent],
    mut global: ParamVector,
    dims: &[usize],
    setup: &FederationSetup,
    test: &TabularDataset,
    out: &mut FederatedOutcome,
    local: impl Fn(&mut Agent, &ParamVector) -> Result<SharedParams> + Sync,
) -> Result<()> {
    for t in 0..setup.phase2.rounds {
        global = federated_round(agents, t as u32, &global, &local)?;
        let m = evaluate(&Mlp::unflatten(dims, global.clone())?, test)?;
        out.rounds.push(RoundMetrics {
            round: t,
            accuracy: m.accuracy,
            demp: m.demp,
            eo: m.eo,
        });
        out.final_metrics = Some(m);
        out.global = Some(global.clone());
        if setup.phase2.early_stop && plateaued(&out.rounds) {
            out.stopped_early = true;
            break;
        }
    }
    Ok(())
}

fn finish(result: Result<()>, mut out: FederatedOutcome) -> FederatedOutcome {
    if let Err(e) = result {
        out.abort = Some(e.to_string());
    }
    out
}

/// The full two-phase protocol: fair teachers everywhere, then rounds of
/// private distillation and aggregation, then test-set evaluation.
pub fn run_fpfl(setup: &FederationSetup, data: &FederatedData) -> FederatedOutcome {
    let mut out = FederatedOutcome::default();
    let res = fpfl_inner(setup, data, &mut out);
    finish(res, out)
}

fn fpfl_inner(setup: &FederationSetup, data: &FederatedData, out: &mut FederatedOutcome) -> Result<()> {
    let dims = model_dims(data.train.n_features, &setup.hidden);
    let mut agents = make_agents(data, setup.seed)?;
    let phase1 = on_all_agents(&mut agents, |a| {
        a.run_phase1(&setup.hidden, &setup.phase1, setup.fairness)
            .map(|s| s.trajectory.clone())
    });
    out.trajectories = phase1?;
    on_all_agents(&mut agents, |a| a.begin_phase2(&setup.phase2, setup.sigma, setup.delta))?;
    let global = initial_global(&dims, setup.seed)?;
    let local_epochs = setup.phase2.local_epochs;
    let res = run_rounds(&mut agents, global, &dims, setup, &data.test, out, |a, g| {
        a.run_phase2_round(g, local_epochs)
    });
    out.privacy = agents
        .iter()
        .filter_map(|a| a.privacy().transpose())
        .collect::<Result<_>>()?;
    if let Some(m) = out.final_metrics.as_mut() {
        m.epsilon = out.privacy.iter().map(|p| p.epsilon).collect();
    }
    res
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Baseline {
    /// Accuracy only.
    B1,
    /// Accuracy and fairness, no privacy.
    B2,
}

/// Federated training without the teacher/student split or noise.
pub fn run_baseline(setup: &FederationSetup, data: &FederatedData, which: Baseline) -> FederatedOutcome {
    let mut out = FederatedOutcome::default();
    let res = baseline_inner(setup, data, which, &mut out);
    finish(res, out)
}

fn baseline_inner(
    setup: &FederationSetup,
    data: &FederatedData,
    which: Baseline,
    out: &mut FederatedOutcome,
) -> Result<()> {
    let dims = model_dims(data.train.n_features, &setup.hidden);
    let mut agents = make_agents(data, setup.seed)?;
    let global = initial_global(&dims, setup.seed)?;
    let fair = which == Baseline::B2;
    let res = run_rounds(&mut agents, global, &dims, setup, &data.test, out, |a, g| {
        a.run_baseline_round(g, &dims, &setup.phase1, setup.fairness, fair, setup.phase2.local_epochs)
    });
    out.trajectories = agents
        .iter()
        .map(|a| a.baseline.as_ref().map(|b| b.trajectory.clone()).unwrap_or_default())
        .collect();
    if let Some(m) = out.final_metrics.as_mut() {
        m.epsilon = vec![None; agents.len()];
    }
    res
}
