//! Attack strategy synthesis over the reachable battery lattice.
//!
//! The attacker is a malicious process outside the device network. It cannot
//! receive messages and is not battery-bound; each of its actions fires one
//! attack message at a target device, draining the victim's battery by a
//! fixed amount and taking a fixed time. Device behaviour stays
//! probabilistic; the attacker's choices are non-deterministic, and a
//! probabilistic choice always resolves before a non-deterministic one.
//!
//! A scheduling round is therefore: one sampled device action (skipped when
//! none is enabled), then `power_level` attacker choices, each an attack
//! message or `WAIT`. Unrolling rounds over the reachable battery vectors
//! gives an explicit MDP whose minimum expected cumulative time to the goal
//! (`some battery hits zero`, by default) is found by a single dynamic
//! programming pass in topological order — total battery strictly decreases
//! along every path, so the graph is a DAG and no fixpoint iteration is
//! needed.

use std::collections::HashMap;

use thiserror::Error;

use crate::model::{AttackActionSpec, AttackerSpec, Goal, SystemConfig, ATTACKER_ID};
use crate::semantics::{
    action_enabled, sample_device_action, step, PayloadFeatures, StopCondition, SystemState,
    Termination, Trace, TraceMeta, Transition, TransitionLabel,
};
use crate::rng::ForgeRng;

/// Label of the attacker's do-nothing choice.
pub const WAIT_LABEL: &str = "WAIT";

/// State cap for the exhaustive oracle.
pub const BRUTE_FORCE_STATE_CAP: usize = 10_000;

/// Whose move it is, or why the state is terminal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    /// The sampled device action resolves next.
    DeviceTurn,
    /// The attacker chooses; `shots_left` messages remain in this round.
    AttackerTurn { shots_left: u32 },
    /// The goal predicate holds; absorbing.
    Goal,
    /// Neither device traffic nor any attack can make progress.
    DeadEnd,
}

/// One node of the explicit MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackState {
    pub batteries: Vec<f64>,
    pub phase: Phase,
}

pub type StateId = usize;

/// What the decision maker (or chance) does at a state.
#[derive(Debug, Clone, PartialEq)]
pub enum Choice {
    /// Chance: the renormalized device draw (or a free skip when nothing is
    /// enabled).
    DeviceRound,
    /// The attacker fires this attack action.
    Attack(String),
    /// The attacker lets the round pass.
    Wait,
}

impl Choice {
    /// Label used for reports and lexicographic tie-breaking.
    pub fn label(&self) -> &str {
        match self {
            Choice::DeviceRound => "DEVICE",
            Choice::Attack(label) => label,
            Choice::Wait => WAIT_LABEL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub to: StateId,
    pub probability: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdpAction {
    pub choice: Choice,
    pub edges: Vec<Edge>,
}

/// What each edge charges: plain duration, or duration plus a weighted
/// predictability score for stealth-aware strategies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostModel {
    Time,
    Stealth { kappa: f64 },
}

impl CostModel {
    fn attack_cost(&self, action: &AttackActionSpec) -> f64 {
        match self {
            CostModel::Time => action.time_per_message,
            CostModel::Stealth { kappa } => {
                action.time_per_message + kappa * action.stealth_cost
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExplicitMdp {
    pub states: Vec<AttackState>,
    /// Outgoing actions per state; empty for Goal and DeadEnd states.
    pub actions: Vec<Vec<MdpAction>>,
    pub initial: StateId,
    pub cost_model: CostModel,
    /// States in an order where every edge points forward.
    topo_order: Vec<StateId>,
}

impl ExplicitMdp {
    pub fn state_count(&self) -> usize {
        self.states.len()
    }

    /// Number of distinct battery vectors across all states (phases
    /// collapsed). This is the state count reported to users.
    pub fn distinct_battery_vectors(&self) -> usize {
        let mut keys: Vec<Vec<u64>> = self
            .states
            .iter()
            .map(|s| battery_key(&s.batteries))
            .collect();
        keys.sort_unstable();
        keys.dedup();
        keys.len()
    }

    pub fn goal_state_ids(&self) -> impl Iterator<Item = StateId> + '_ {
        self.states
            .iter()
            .enumerate()
            .filter(|(_, s)| s.phase == Phase::Goal)
            .map(|(id, _)| id)
    }
}

/// Minimum expected cumulative cost-to-goal per state.
#[derive(Debug, Clone)]
pub struct ValueFunction {
    pub values: Vec<f64>,
    /// Largest Bellman residual observed when re-checking the solution.
    pub residual: f64,
}

impl ValueFunction {
    pub fn initial_value(&self, mdp: &ExplicitMdp) -> f64 {
        self.values[mdp.initial]
    }
}

/// Deterministic choice per attacker decision state.
#[derive(Debug, Clone)]
pub struct AttackPolicy {
    /// Indexed by state id; `None` for chance and terminal states.
    pub choices: Vec<Option<Choice>>,
}

#[derive(Debug, Error)]
pub enum MdpError {
    #[error("config has no attacker")]
    NoAttacker,
    #[error("transition graph has a cycle; batteries must strictly decrease")]
    Cyclic,
    #[error("state space exceeds the oracle cap of {cap} battery vectors")]
    StateLimit { cap: usize },
    #[error("distribution out of state {state} sums to {sum}, expected 1")]
    BadDistribution { state: StateId, sum: f64 },
}

pub(crate) fn battery_key(batteries: &[f64]) -> Vec<u64> {
    batteries.iter().map(|b| b.to_bits()).collect()
}

fn goal_met(goal: &Goal, config: &SystemConfig, batteries: &[f64]) -> bool {
    match goal {
        Goal::AnyDeviceDead => batteries.iter().any(|b| *b <= 0.0),
        Goal::AllDevicesDead => batteries.iter().all(|b| *b <= 0.0),
        Goal::Device(id) => config
            .device_index(id)
            .map(|i| batteries[i] <= 0.0)
            .unwrap_or(false),
    }
}

/// Device actions enabled at a battery vector, with probabilities
/// renormalized over the enabled set.
fn device_outcomes<'c>(
    config: &'c SystemConfig,
    batteries: &[f64],
) -> Vec<(&'c crate::model::ActionSpec, f64)> {
    let state = SystemState {
        batteries: batteries.to_vec(),
        clock: 0.0,
    };
    let enabled: Vec<_> = config
        .device_actions()
        .filter(|a| action_enabled(&state, config, a))
        .collect();
    let total: f64 = enabled.iter().map(|a| a.probability).sum();
    enabled
        .into_iter()
        .map(|a| (a, a.probability / total))
        .collect()
}

fn any_device_action_enabled(config: &SystemConfig, batteries: &[f64]) -> bool {
    let state = SystemState {
        batteries: batteries.to_vec(),
        clock: 0.0,
    };
    config
        .device_actions()
        .any(|a| action_enabled(&state, config, a))
}

/// Applies one device action to a battery vector.
fn apply_device_action(
    config: &SystemConfig,
    batteries: &[f64],
    action: &crate::model::ActionSpec,
) -> Vec<f64> {
    let mut next = batteries.to_vec();
    next[config.device_index(&action.sender).expect("validated")] -= action.drain_send;
    next[config.device_index(&action.receiver).expect("validated")] -= action.drain_recv;
    next
}

/// Applies one attack message. The drain is clamped: a message aimed at a
/// nearly-dead device removes whatever battery is left, and the victim ends
/// at exactly zero.
fn apply_attack(
    config: &SystemConfig,
    batteries: &[f64],
    attack: &AttackActionSpec,
) -> (Vec<f64>, f64) {
    let target = config.device_index(&attack.target).expect("validated");
    let actual = attack.drain_target.min(batteries[target]);
    let mut next = batteries.to_vec();
    next[target] -= actual;
    (next, actual)
}

fn attack_enabled(config: &SystemConfig, batteries: &[f64], attack: &AttackActionSpec) -> bool {
    config
        .device_index(&attack.target)
        .map(|i| batteries[i] > 0.0)
        .unwrap_or(false)
}

fn entry_phase(config: &SystemConfig, attacker: &AttackerSpec) -> Phase {
    if config.scheduling.device_round_first {
        Phase::DeviceTurn
    } else {
        Phase::AttackerTurn {
            shots_left: attacker.power_level,
        }
    }
}

fn next_attacker_phase(shots_left: u32) -> Phase {
    if shots_left > 1 {
        Phase::AttackerTurn {
            shots_left: shots_left - 1,
        }
    } else {
        Phase::DeviceTurn
    }
}

/// Builds the explicit MDP with plain time costs.
pub fn build_mdp(config: &SystemConfig) -> Result<ExplicitMdp, MdpError> {
    build_mdp_with_cost(config, CostModel::Time)
}

/// Builds the explicit MDP under the given cost model.
pub fn build_mdp_with_cost(
    config: &SystemConfig,
    cost_model: CostModel,
) -> Result<ExplicitMdp, MdpError> {
    let attacker = config.attacker.as_ref().ok_or(MdpError::NoAttacker)?;
    let power = attacker.power_level;

    let mut states: Vec<AttackState> = Vec::new();
    let mut actions: Vec<Vec<MdpAction>> = Vec::new();
    let mut index: HashMap<(Vec<u64>, u64), StateId> = HashMap::new();

    // Phase code for interning; goal states collapse per battery vector.
    let phase_code = |phase: &Phase| -> u64 {
        match phase {
            Phase::Goal => u64::MAX,
            Phase::DeviceTurn => 0,
            Phase::AttackerTurn { shots_left } => *shots_left as u64,
            Phase::DeadEnd => unreachable!("dead ends are classified after expansion"),
        }
    };

    let mut intern = |batteries: Vec<f64>,
                      phase: Phase,
                      states: &mut Vec<AttackState>,
                      actions: &mut Vec<Vec<MdpAction>>,
                      queue: &mut Vec<StateId>|
     -> StateId {
        let phase = if goal_met(&attacker.goal, config, &batteries) {
            Phase::Goal
        } else {
            phase
        };
        let key = (battery_key(&batteries), phase_code(&phase));
        if let Some(&id) = index.get(&key) {
            return id;
        }
        let id = states.len();
        states.push(AttackState { batteries, phase });
        actions.push(Vec::new());
        index.insert(key, id);
        if phase != Phase::Goal {
            queue.push(id);
        }
        id
    };

    let mut queue: Vec<StateId> = Vec::new();
    let initial = intern(
        SystemState::initial(config).batteries,
        entry_phase(config, attacker),
        &mut states,
        &mut actions,
        &mut queue,
    );

    let mut cursor = 0;
    while cursor < queue.len() {
        let id = queue[cursor];
        cursor += 1;
        let batteries = states[id].batteries.clone();
        let phase = states[id].phase;

        match phase {
            Phase::DeviceTurn => {
                let outcomes = device_outcomes(config, &batteries);
                let after = Phase::AttackerTurn { shots_left: power };
                let edges = if outcomes.is_empty() {
                    // No device can move: the round's probabilistic part is
                    // skipped for free.
                    let to = intern(
                        batteries.clone(),
                        after,
                        &mut states,
                        &mut actions,
                        &mut queue,
                    );
                    vec![Edge {
                        to,
                        probability: 1.0,
                        cost: 0.0,
                    }]
                } else {
                    outcomes
                        .iter()
                        .map(|(action, p)| {
                            let next = apply_device_action(config, &batteries, action);
                            let to = intern(next, after, &mut states, &mut actions, &mut queue);
                            Edge {
                                to,
                                probability: *p,
                                cost: action.duration(),
                            }
                        })
                        .collect()
                };
                actions[id].push(MdpAction {
                    choice: Choice::DeviceRound,
                    edges,
                });
            }
            Phase::AttackerTurn { shots_left } => {
                let after = next_attacker_phase(shots_left);
                for attack in &attacker.actions {
                    if !attack_enabled(config, &batteries, attack) {
                        continue;
                    }
                    let (next, _) = apply_attack(config, &batteries, attack);
                    let to = intern(next, after, &mut states, &mut actions, &mut queue);
                    actions[id].push(MdpAction {
                        choice: Choice::Attack(attack.label.clone()),
                        edges: vec![Edge {
                            to,
                            probability: 1.0,
                            cost: cost_model.attack_cost(attack),
                        }],
                    });
                }
                // WAIT only helps when device traffic can still drain
                // something; allowing it otherwise would create a
                // zero-progress cycle.
                if any_device_action_enabled(config, &batteries) {
                    let to = intern(
                        batteries.clone(),
                        after,
                        &mut states,
                        &mut actions,
                        &mut queue,
                    );
                    actions[id].push(MdpAction {
                        choice: Choice::Wait,
                        edges: vec![Edge {
                            to,
                            probability: 1.0,
                            cost: 0.0,
                        }],
                    });
                }
                if actions[id].is_empty() {
                    states[id].phase = Phase::DeadEnd;
                }
            }
            Phase::Goal | Phase::DeadEnd => {}
        }
    }

    // Validate distributions.
    for (id, state_actions) in actions.iter().enumerate() {
        for action in state_actions {
            let sum: f64 = action.edges.iter().map(|e| e.probability).sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(MdpError::BadDistribution { state: id, sum });
            }
        }
    }

    let mut mdp = ExplicitMdp {
        states,
        actions,
        initial,
        cost_model,
        topo_order: Vec::new(),
    };
    mdp.topo_order = topological_order(&mdp)?;
    Ok(mdp)
}

/// Kahn's algorithm. Errs on a cycle, which would mean some round can repeat
/// without draining any battery.
fn topological_order(mdp: &ExplicitMdp) -> Result<Vec<StateId>, MdpError> {
    let n = mdp.states.len();
    let mut indegree = vec![0usize; n];
    for state_actions in &mdp.actions {
        for action in state_actions {
            for edge in &action.edges {
                indegree[edge.to] += 1;
            }
        }
    }
    let mut stack: Vec<StateId> = (0..n).filter(|&s| indegree[s] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(s) = stack.pop() {
        order.push(s);
        for action in &mdp.actions[s] {
            for edge in &action.edges {
                indegree[edge.to] -= 1;
                if indegree[edge.to] == 0 {
                    stack.push(edge.to);
                }
            }
        }
    }
    if order.len() != n {
        return Err(MdpError::Cyclic);
    }
    Ok(order)
}

/// Expected cost of taking `action` from a state, given values `v`.
fn action_value(action: &MdpAction, v: &[f64]) -> f64 {
    let mut q = 0.0;
    for edge in &action.edges {
        let tail = v[edge.to];
        if tail.is_infinite() {
            return f64::INFINITY;
        }
        q += edge.probability * (edge.cost + tail);
    }
    q
}

/// Solves `min expected cumulative cost until goal` by one dynamic
/// programming sweep in reverse topological order.
///
/// Goal states get exactly 0; states that cannot reach the goal get +inf.
/// The `tolerance` is used for the post-hoc Bellman residual check recorded
/// on the result.
pub fn value_iterate(mdp: &ExplicitMdp, tolerance: f64) -> ValueFunction {
    let n = mdp.states.len();
    let mut values = vec![f64::INFINITY; n];

    for &id in mdp.topo_order.iter().rev() {
        values[id] = match mdp.states[id].phase {
            Phase::Goal => 0.0,
            _ if mdp.actions[id].is_empty() => f64::INFINITY,
            _ => mdp.actions[id]
                .iter()
                .map(|a| action_value(a, &values))
                .fold(f64::INFINITY, f64::min),
        };
    }

    let mut residual: f64 = 0.0;
    for id in 0..n {
        let recomputed = match mdp.states[id].phase {
            Phase::Goal => 0.0,
            _ if mdp.actions[id].is_empty() => f64::INFINITY,
            _ => mdp.actions[id]
                .iter()
                .map(|a| action_value(a, &values))
                .fold(f64::INFINITY, f64::min),
        };
        let delta = if recomputed.is_infinite() && values[id].is_infinite() {
            0.0
        } else {
            (recomputed - values[id]).abs()
        };
        residual = residual.max(delta);
    }
    debug_assert!(residual <= tolerance, "residual {residual} > {tolerance}");

    ValueFunction { values, residual }
}

/// Greedy policy extraction with deterministic tie-breaking: among actions
/// of equal value the lexicographically smallest label wins.
pub fn extract_policy(mdp: &ExplicitMdp, vf: &ValueFunction) -> AttackPolicy {
    let mut choices = vec![None; mdp.states.len()];
    for (id, state) in mdp.states.iter().enumerate() {
        if !matches!(state.phase, Phase::AttackerTurn { .. }) {
            continue;
        }
        let mut best: Option<(f64, &MdpAction)> = None;
        for action in &mdp.actions[id] {
            let q = action_value(action, &vf.values);
            best = match best {
                None => Some((q, action)),
                Some((bq, ba)) => {
                    if q < bq || (q == bq && action.choice.label() < ba.choice.label()) {
                        Some((q, action))
                    } else {
                        Some((bq, ba))
                    }
                }
            };
        }
        choices[id] = best.map(|(_, a)| a.choice.clone());
    }
    AttackPolicy { choices }
}

/// Exhaustive expectimin over attacker choices and device outcomes, capped
/// at [`BRUTE_FORCE_STATE_CAP`] distinct battery vectors.
///
/// Independent oracle for [`value_iterate`]: it never builds the explicit
/// graph, it recurses directly on battery vectors with memoisation, bounded
/// by `horizon` scheduling rounds.
pub fn brute_force_min_time(config: &SystemConfig, horizon: u32) -> Result<f64, MdpError> {
    let attacker = config.attacker.as_ref().ok_or(MdpError::NoAttacker)?;

    struct Search<'c> {
        config: &'c SystemConfig,
        attacker: &'c AttackerSpec,
        memo: HashMap<(Vec<u64>, u32, u32), f64>,
        seen_vectors: std::collections::HashSet<Vec<u64>>,
    }

    impl<'c> Search<'c> {
        fn track(&mut self, batteries: &[f64]) -> Result<(), MdpError> {
            self.seen_vectors.insert(battery_key(batteries));
            if self.seen_vectors.len() > BRUTE_FORCE_STATE_CAP {
                return Err(MdpError::StateLimit {
                    cap: BRUTE_FORCE_STATE_CAP,
                });
            }
            Ok(())
        }

        /// Value at a round boundary with `rounds` rounds of budget left.
        fn round(&mut self, batteries: &[f64], rounds: u32) -> Result<f64, MdpError> {
            if goal_met(&self.attacker.goal, self.config, batteries) {
                return Ok(0.0);
            }
            if rounds == 0 {
                return Ok(f64::INFINITY);
            }
            let key = (battery_key(batteries), u32::MAX, rounds);
            if let Some(&v) = self.memo.get(&key) {
                return Ok(v);
            }
            self.track(batteries)?;
            let shots = self.attacker.power_level;
            let v = if self.config.scheduling.device_round_first {
                self.device_part(batteries, rounds, |s, b, r| s.shots(b, shots, r, false))?
            } else {
                self.shots(batteries, shots, rounds, true)?
            };
            self.memo.insert(key, v);
            Ok(v)
        }

        /// The probabilistic device part of a round. `then` continues with
        /// the rest of the round.
        fn device_part(
            &mut self,
            batteries: &[f64],
            rounds: u32,
            then: impl Fn(&mut Self, &[f64], u32) -> Result<f64, MdpError> + Copy,
        ) -> Result<f64, MdpError> {
            let outcomes: Vec<(f64, f64, Vec<f64>)> = device_outcomes(self.config, batteries)
                .into_iter()
                .map(|(a, p)| {
                    (
                        p,
                        a.duration(),
                        apply_device_action(self.config, batteries, a),
                    )
                })
                .collect();
            if outcomes.is_empty() {
                return then(self, batteries, rounds);
            }
            let mut total = 0.0;
            for (p, cost, next) in outcomes {
                let tail = if goal_met(&self.attacker.goal, self.config, &next) {
                    0.0
                } else {
                    then(self, &next, rounds)?
                };
                if tail.is_infinite() {
                    return Ok(f64::INFINITY);
                }
                total += p * (cost + tail);
            }
            Ok(total)
        }

        /// The attacker's shots. When `device_after` is set the round ends
        /// with the device part instead of starting with it.
        fn shots(
            &mut self,
            batteries: &[f64],
            left: u32,
            rounds: u32,
            device_after: bool,
        ) -> Result<f64, MdpError> {
            if goal_met(&self.attacker.goal, self.config, batteries) {
                return Ok(0.0);
            }
            if left == 0 {
                return if device_after {
                    self.device_part(batteries, rounds, |s, b, r| s.round(b, r - 1))
                } else {
                    self.round(batteries, rounds - 1)
                };
            }
            let key = (battery_key(batteries), left, rounds);
            if let Some(&v) = self.memo.get(&key) {
                return Ok(v);
            }
            self.track(batteries)?;
            let mut best = f64::INFINITY;
            for attack in &self.attacker.actions {
                if !attack_enabled(self.config, batteries, attack) {
                    continue;
                }
                let (next, _) = apply_attack(self.config, batteries, attack);
                let tail = self.shots(&next, left - 1, rounds, device_after)?;
                best = best.min(attack.time_per_message + tail);
            }
            if any_device_action_enabled(self.config, batteries) {
                best = best.min(self.shots(batteries, left - 1, rounds, device_after)?);
            }
            self.memo.insert(key, best);
            Ok(best)
        }
    }

    let mut search = Search {
        config,
        attacker,
        memo: HashMap::new(),
        seen_vectors: Default::default(),
    };
    let initial = SystemState::initial(config).batteries;
    search.round(&initial, horizon)
}

/// How `simulate_attack` picks attack messages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttackMode {
    /// Follow the time-optimal policy.
    Optimal,
    /// Follow the policy optimal for time + kappa * predictability.
    Stealth { kappa: f64 },
    /// Prober: pick uniformly among the enabled attack actions.
    Stochastic,
}

/// A solved strategy, keyed for fast lookup during episode simulation.
///
/// Solving is the expensive part; once held, any number of episodes can be
/// run against it without rebuilding the MDP.
#[derive(Debug, Clone)]
pub struct SolvedPolicy {
    by_key: HashMap<(Vec<u64>, u32), Choice>,
    pub initial_value: f64,
    pub cost_model: CostModel,
}

impl SolvedPolicy {
    pub fn solve(config: &SystemConfig, cost_model: CostModel) -> Result<Self, MdpError> {
        let mdp = build_mdp_with_cost(config, cost_model)?;
        let vf = value_iterate(&mdp, 1e-9);
        let policy = extract_policy(&mdp, &vf);
        let mut by_key = HashMap::new();
        for (id, choice) in policy.choices.iter().enumerate() {
            if let (Phase::AttackerTurn { shots_left }, Some(choice)) =
                (mdp.states[id].phase, choice)
            {
                by_key.insert(
                    (battery_key(&mdp.states[id].batteries), shots_left),
                    choice.clone(),
                );
            }
        }
        Ok(Self {
            by_key,
            initial_value: vf.initial_value(&mdp),
            cost_model,
        })
    }

    fn choice(&self, batteries: &[f64], shots_left: u32) -> Choice {
        self.by_key
            .get(&(battery_key(batteries), shots_left))
            .cloned()
            .unwrap_or(Choice::Wait)
    }
}

enum ShotDriver<'a> {
    Policy(&'a SolvedPolicy),
    Stochastic,
}

/// Runs the system together with the attacker, producing a labelled trace.
///
/// Device rounds and attacker shots interleave exactly as in the MDP, so a
/// trace under the optimal policy realises the solved strategy. Attack
/// transitions carry `src = "ATTACKER"`, zero probability, and payload
/// features sampled by the HULK obfuscation rules; WAIT emits nothing.
///
/// Policy modes solve the MDP on every call; to amortise the solve across
/// many episodes use [`SolvedPolicy::solve`] plus [`simulate_episode`].
pub fn simulate_attack(
    config: &SystemConfig,
    mode: AttackMode,
    seed: u64,
    stop: StopCondition,
) -> Result<Trace, MdpError> {
    match mode {
        AttackMode::Stochastic => run_episode(config, &ShotDriver::Stochastic, seed, stop),
        AttackMode::Optimal => {
            let policy = SolvedPolicy::solve(config, CostModel::Time)?;
            simulate_episode(config, &policy, seed, stop)
        }
        AttackMode::Stealth { kappa } => {
            let policy = SolvedPolicy::solve(config, CostModel::Stealth { kappa })?;
            simulate_episode(config, &policy, seed, stop)
        }
    }
}

/// One episode under an already-solved policy.
pub fn simulate_episode(
    config: &SystemConfig,
    policy: &SolvedPolicy,
    seed: u64,
    stop: StopCondition,
) -> Result<Trace, MdpError> {
    run_episode(config, &ShotDriver::Policy(policy), seed, stop)
}

fn run_episode(
    config: &SystemConfig,
    driver: &ShotDriver<'_>,
    seed: u64,
    stop: StopCondition,
) -> Result<Trace, MdpError> {
    let attacker = config.attacker.as_ref().ok_or(MdpError::NoAttacker)?;
    let mut rng = ForgeRng::seed_from_u64(seed);
    let mut state = SystemState::initial(config);
    let mut transitions: Vec<Transition> = Vec::new();
    let power = attacker.power_level;
    let device_first = config.scheduling.device_round_first;

    let termination = 'outer: loop {
        let round_start_total = state.total_battery();

        for stage in 0..2 {
            let run_device = (stage == 0) == device_first;
            if run_device {
                if let Some(t) = check_stop(&state, &transitions, attacker, config, stop) {
                    break 'outer t;
                }
                if let Some(label) = sample_device_action(&state, config, &mut rng) {
                    let (next, mut tr) =
                        step(&state, label, config).expect("sampled enabled action");
                    tr.seq = transitions.len() as u64;
                    transitions.push(tr);
                    state = next;
                }
            } else {
                for shots_left in (1..=power).rev() {
                    if let Some(t) = check_stop(&state, &transitions, attacker, config, stop) {
                        break 'outer t;
                    }
                    let choice = match driver {
                        ShotDriver::Stochastic => {
                            let live: Vec<&AttackActionSpec> = attacker
                                .actions
                                .iter()
                                .filter(|a| attack_enabled(config, &state.batteries, a))
                                .collect();
                            if live.is_empty() {
                                Choice::Wait
                            } else {
                                Choice::Attack(live[rng.index(live.len())].label.clone())
                            }
                        }
                        ShotDriver::Policy(policy) => policy.choice(&state.batteries, shots_left),
                    };
                    if let Choice::Attack(label) = choice {
                        let attack = config.attack_action(&label).expect("policy action exists");
                        let (next_batteries, actual) =
                            apply_attack(config, &state.batteries, attack);
                        let t_start = state.clock;
                        let t_end = t_start + attack.time_per_message;
                        transitions.push(Transition {
                            seq: transitions.len() as u64,
                            action: label,
                            probability: 0.0,
                            t_start,
                            t_end,
                            src: ATTACKER_ID.to_string(),
                            dst: attack.target.clone(),
                            drain_src: 0.0,
                            drain_dst: actual,
                            payload: sample_attack_payload(&attacker.payload, &mut rng),
                            label: TransitionLabel::Attack,
                        });
                        state.batteries = next_batteries;
                        state.clock = t_end;
                    }
                }
            }
        }

        // A full round that drained nothing will repeat forever.
        if state.total_battery() == round_start_total {
            break Termination::Exhausted;
        }
    };

    Ok(Trace {
        meta: TraceMeta::new(config, seed),
        transitions,
        final_state: state,
        termination,
    })
}

fn check_stop(
    state: &SystemState,
    transitions: &[Transition],
    attacker: &AttackerSpec,
    config: &SystemConfig,
    stop: StopCondition,
) -> Option<Termination> {
    if goal_met(&attacker.goal, config, &state.batteries) {
        return Some(Termination::GoalReached);
    }
    match stop {
        StopCondition::MaxSteps(n) if transitions.len() as u64 >= n => {
            Some(Termination::StepLimit)
        }
        StopCondition::MaxTime(t) if state.clock >= t => Some(Termination::TimeLimit),
        _ => None,
    }
}

/// HULK-style payload: random known user agent, forged referrer (host or a
/// pre-listed site), keep-alive coin flip, always-unique URL.
fn sample_attack_payload(
    payload: &crate::model::PayloadSpec,
    rng: &mut ForgeRng,
) -> PayloadFeatures {
    PayloadFeatures {
        ua_code: 1 + rng.index(payload.ua_list_size.max(1) as usize) as u32,
        ref_code: 1 + rng.index(payload.referrer_list_size as usize + 1) as u32,
        keepalive: rng.coin() as u8,
        url_unique: 1,
    }
}

/// Solver report: everything the `solve` command prints.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub state_count: usize,
    pub battery_vector_count: usize,
    pub initial_value: f64,
    pub residual: f64,
    /// (battery vector, shots left, chosen action label), sorted for output.
    pub policy_rows: Vec<(Vec<f64>, u32, String)>,
}

/// Builds, solves and extracts the policy in one call.
pub fn solve(config: &SystemConfig, cost_model: CostModel) -> Result<SolveReport, MdpError> {
    let mdp = build_mdp_with_cost(config, cost_model)?;
    let vf = value_iterate(&mdp, 1e-9);
    let policy = extract_policy(&mdp, &vf);

    let mut rows: Vec<(Vec<f64>, u32, String)> = Vec::new();
    for (id, choice) in policy.choices.iter().enumerate() {
        if let (Phase::AttackerTurn { shots_left }, Some(choice)) =
            (mdp.states[id].phase, choice)
        {
            rows.push((
                mdp.states[id].batteries.clone(),
                shots_left,
                choice.label().to_string(),
            ));
        }
    }
    rows.sort_by(|a, b| {
        let ta: f64 = a.0.iter().sum();
        let tb: f64 = b.0.iter().sum();
        tb.partial_cmp(&ta)
            .unwrap()
            .then_with(|| battery_key(&a.0).cmp(&battery_key(&b.0)))
            .then_with(|| a.1.cmp(&b.1))
    });

    Ok(SolveReport {
        state_count: mdp.state_count(),
        battery_vector_count: mdp.distinct_battery_vectors(),
        initial_value: vf.initial_value(&mdp),
        residual: vf.residual,
        policy_rows: rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::load_config;

    const CHAIN: &str = r#"
seed = 0

[[devices]]
id = "victim"
battery_capacity = 4.0

[attacker]
power_level = 1
goal = "any_device_dead"

[[attacker.actions]]
label = "flood"
target = "victim"
drain_target = 2.0
time_per_message = 5.0
"#;

    const TWO_DEVICE: &str = r#"
seed = 0

[[devices]]
id = "a"
battery_capacity = 6.0
passive = ["pong"]

[[devices.active]]
label = "ping"
receiver = "b"
probability = 1.0
drain_send = 1.0
drain_recv = 1.0
time_send = 3.0

[[devices]]
id = "b"
battery_capacity = 5.0
passive = ["ping"]

[[devices.active]]
label = "pong"
receiver = "a"
probability = 1.0
drain_send = 1.0
drain_recv = 1.0
time_send = 4.0

[attacker]
power_level = 1
goal = "any_device_dead"

[[attacker.actions]]
label = "flood_a"
target = "a"
drain_target = 2.0
time_per_message = 2.0

[[attacker.actions]]
label = "flood_b"
target = "b"
drain_target = 2.0
time_per_message = 2.0
"#;

    fn chain() -> SystemConfig {
        load_config(CHAIN).unwrap()
    }

    fn two_device() -> SystemConfig {
        load_config(TWO_DEVICE).unwrap()
    }

    #[test]
    fn chain_mdp_is_three_battery_vectors() {
        let mdp = build_mdp(&chain()).unwrap();
        assert_eq!(mdp.distinct_battery_vectors(), 3); // 4, 2, 0
    }

    #[test]
    fn chain_value_is_two_messages() {
        let mdp = build_mdp(&chain()).unwrap();
        let vf = value_iterate(&mdp, 1e-9);
        assert_eq!(vf.initial_value(&mdp), 10.0);
        assert!(vf.residual <= 1e-9);
    }

    #[test]
    fn goal_states_have_zero_value() {
        let mdp = build_mdp(&two_device()).unwrap();
        let vf = value_iterate(&mdp, 1e-9);
        for id in mdp.goal_state_ids() {
            assert_eq!(vf.values[id], 0.0);
        }
    }

    #[test]
    fn chain_policy_is_the_single_attack() {
        let config = chain();
        let mdp = build_mdp(&config).unwrap();
        let vf = value_iterate(&mdp, 1e-9);
        let policy = extract_policy(&mdp, &vf);
        for (id, choice) in policy.choices.iter().enumerate() {
            if matches!(mdp.states[id].phase, Phase::AttackerTurn { .. }) {
                assert_eq!(choice, &Some(Choice::Attack("flood".into())));
            }
        }
    }

    #[test]
    fn equal_value_ties_break_lexicographically() {
        // Two identical attacks; the policy must pick the smaller label.
        let doc = r#"
seed = 0

[[devices]]
id = "victim"
battery_capacity = 4.0

[attacker]
power_level = 1

[[attacker.actions]]
label = "zeta"
target = "victim"
drain_target = 2.0
time_per_message = 5.0

[[attacker.actions]]
label = "alpha"
target = "victim"
drain_target = 2.0
time_per_message = 5.0
"#;
        let config = load_config(doc).unwrap();
        let mdp = build_mdp(&config).unwrap();
        let vf = value_iterate(&mdp, 1e-9);
        let policy = extract_policy(&mdp, &vf);
        for (id, choice) in policy.choices.iter().enumerate() {
            if matches!(mdp.states[id].phase, Phase::AttackerTurn { .. }) {
                assert_eq!(choice, &Some(Choice::Attack("alpha".into())));
            }
        }
    }

    #[test]
    fn brute_force_matches_hand_arithmetic() {
        assert_eq!(brute_force_min_time(&chain(), 10).unwrap(), 10.0);
    }

    #[test]
    fn brute_force_two_drains_picks_the_short_mix() {
        let doc = r#"
seed = 0

[[devices]]
id = "victim"
battery_capacity = 5.0

[attacker]
power_level = 1

[[attacker.actions]]
label = "heavy"
target = "victim"
drain_target = 3.0
time_per_message = 6.0

[[attacker.actions]]
label = "light"
target = "victim"
drain_target = 2.0
time_per_message = 5.0
"#;
        let config = load_config(doc).unwrap();
        assert_eq!(brute_force_min_time(&config, 10).unwrap(), 11.0);
        let mdp = build_mdp(&config).unwrap();
        let vf = value_iterate(&mdp, 1e-9);
        assert_eq!(vf.initial_value(&mdp), 11.0);
    }

    #[test]
    fn zero_horizon_is_unreachable() {
        let v = brute_force_min_time(&chain(), 0).unwrap();
        assert!(v.is_infinite());
    }

    #[test]
    fn value_iteration_agrees_with_brute_force_on_traffic() {
        let config = two_device();
        let mdp = build_mdp(&config).unwrap();
        assert!(mdp.state_count() <= 60, "state count {}", mdp.state_count());
        let vf = value_iterate(&mdp, 1e-9);
        let bf = brute_force_min_time(&config, mdp.state_count() as u32).unwrap();
        assert!(
            (vf.initial_value(&mdp) - bf).abs() <= 1e-9,
            "vi {} vs bf {bf}",
            vf.initial_value(&mdp)
        );
    }

    #[test]
    fn wait_only_attacker_with_no_traffic_dead_ends() {
        let doc = r#"
seed = 0

[[devices]]
id = "victim"
battery_capacity = 4.0

[attacker]
power_level = 1
actions = []
"#;
        let config = load_config(doc).unwrap();
        let mdp = build_mdp(&config).unwrap();
        let vf = value_iterate(&mdp, 1e-9);
        assert!(vf.initial_value(&mdp).is_infinite());
        assert!(mdp.states.iter().any(|s| s.phase == Phase::DeadEnd));
    }

    #[test]
    fn optimal_chain_episode_is_two_attacks() {
        let config = chain();
        let trace =
            simulate_attack(&config, AttackMode::Optimal, 1, StopCondition::UntilExhausted)
                .unwrap();
        assert_eq!(trace.termination, Termination::GoalReached);
        assert_eq!(trace.transitions.len(), 2);
        assert!(trace
            .transitions
            .iter()
            .all(|t| t.label == TransitionLabel::Attack));
        assert_eq!(trace.final_state.batteries, [0.0]);
        assert_eq!(trace.final_state.clock, 10.0);
    }

    #[test]
    fn stochastic_mode_picks_uniformly() {
        let doc = r#"
seed = 0

[[devices]]
id = "victim"
battery_capacity = 100000.0

[attacker]
power_level = 1

[[attacker.actions]]
label = "one"
target = "victim"
drain_target = 1.0
time_per_message = 1.0

[[attacker.actions]]
label = "two"
target = "victim"
drain_target = 1.0
time_per_message = 1.0
"#;
        let config = load_config(doc).unwrap();
        let trace = simulate_attack(
            &config,
            AttackMode::Stochastic,
            77,
            StopCondition::MaxSteps(10_000),
        )
        .unwrap();
        let ones = trace
            .transitions
            .iter()
            .filter(|t| t.action == "one")
            .count() as f64;
        let share = ones / trace.transitions.len() as f64;
        assert!(
            (share - 0.5).abs() <= 0.02,
            "share of `one` was {share}, expected 0.5 +/- 0.02"
        );
    }

    #[test]
    fn huge_kappa_prefers_the_quiet_action() {
        let doc = r#"
seed = 0

[[devices]]
id = "victim"
battery_capacity = 12.0

[attacker]
power_level = 1

[[attacker.actions]]
label = "loud"
target = "victim"
drain_target = 4.0
time_per_message = 1.0
stealth_cost = 1.0

[[attacker.actions]]
label = "quiet"
target = "victim"
drain_target = 1.0
time_per_message = 2.0
stealth_cost = 0.0
"#;
        let config = load_config(doc).unwrap();
        let mdp = build_mdp_with_cost(&config, CostModel::Stealth { kappa: 1e9 }).unwrap();
        let vf = value_iterate(&mdp, 1e-3);
        let policy = extract_policy(&mdp, &vf);
        for (id, choice) in policy.choices.iter().enumerate() {
            if matches!(mdp.states[id].phase, Phase::AttackerTurn { .. }) {
                assert_eq!(choice, &Some(Choice::Attack("quiet".into())));
            }
        }
    }

    #[test]
    fn zero_kappa_stealth_equals_time_optimal() {
        let config = two_device();
        let time_mdp = build_mdp(&config).unwrap();
        let time = value_iterate(&time_mdp, 1e-9);
        let stealth_mdp = build_mdp_with_cost(&config, CostModel::Stealth { kappa: 0.0 }).unwrap();
        let stealth = value_iterate(&stealth_mdp, 1e-9);
        assert_eq!(
            time.initial_value(&time_mdp),
            stealth.initial_value(&stealth_mdp)
        );
    }

    #[test]
    fn more_power_never_hurts() {
        let mut config = two_device();
        let mut previous = f64::INFINITY;
        for power in 1..=3 {
            config.attacker.as_mut().unwrap().power_level = power;
            let mdp = build_mdp(&config).unwrap();
            let v = value_iterate(&mdp, 1e-9).initial_value(&mdp);
            assert!(
                v <= previous + 1e-12,
                "power {power}: V {v} worse than {previous}"
            );
            previous = v;
        }
    }

    #[test]
    fn policy_episodes_converge_to_the_value() {
        // Reduced-size Monte-Carlo here; the acceptance suite runs 10k.
        let config = two_device();
        let mdp = build_mdp(&config).unwrap();
        let v0 = value_iterate(&mdp, 1e-9).initial_value(&mdp);
        let n = 2_000;
        let mut times = Vec::with_capacity(n);
        for i in 0..n {
            let trace = simulate_attack(
                &config,
                AttackMode::Optimal,
                1000 + i as u64,
                StopCondition::UntilExhausted,
            )
            .unwrap();
            assert_eq!(trace.termination, Termination::GoalReached);
            times.push(trace.final_state.clock);
        }
        let mean: f64 = times.iter().sum::<f64>() / n as f64;
        let var: f64 = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - v0).abs() <= 2.0 * se.max(1e-12),
            "mean {mean} vs value {v0} (se {se})"
        );
    }

    #[test]
    fn no_attacker_is_an_error() {
        let config = load_config(include_str!("../../../fixtures/table1.cfg")).unwrap();
        assert!(matches!(build_mdp(&config), Err(MdpError::NoAttacker)));
    }
}
