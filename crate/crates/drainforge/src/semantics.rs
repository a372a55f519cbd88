//! Trace semantics: guarded communication, battery drain and timed
//! transitions.
//!
//! A transition is one network packet: a sender initiates an action, the
//! receiver handles it, both monitors subtract the action's drain from their
//! battery and the global clock advances by the action's duration. An action
//! is enabled only while both participants can afford it, so batteries never
//! go negative and every run terminates once batteries are spent.
//!
//! The guard is non-strict (`battery >= drain`): a device may spend its last
//! battery unit, reaching exactly zero.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{serialize_config, ActionSpec, SystemConfig};
use crate::rng::{ForgeRng, RNG_NAME};

/// Schema version written into trace headers.
pub const TRACE_SCHEMA_VERSION: u32 = 1;

/// Mutable run-time state: per-device batteries plus the global clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    /// Remaining battery per device, indexed like `config.devices`.
    pub batteries: Vec<f64>,
    /// Global time elapsed since the start of the run.
    pub clock: f64,
}

impl SystemState {
    pub fn initial(config: &SystemConfig) -> Self {
        Self {
            batteries: config.devices.iter().map(|d| d.battery_capacity).collect(),
            clock: 0.0,
        }
    }

    pub fn battery(&self, config: &SystemConfig, device_id: &str) -> Option<f64> {
        config.device_index(device_id).map(|i| self.batteries[i])
    }

    pub fn total_battery(&self) -> f64 {
        self.batteries.iter().sum()
    }
}

/// Attack payload shape, after the four HULK obfuscation properties.
///
/// Device traffic always carries the all-zero payload. Attack messages
/// randomise the user agent, forge the referrer, toggle keep-alive and
/// always rewrite the URL.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PayloadFeatures {
    /// 0 = device default; 1..=n = entry of the attacker's user-agent list.
    pub ua_code: u32,
    /// 0 = no referrer; 1 = the host itself; 2.. = pre-listed site.
    pub ref_code: u32,
    /// 1 if the message asks the server to keep the connection open.
    pub keepalive: u8,
    /// 1 if the URL carries unique anti-caching parameters.
    pub url_unique: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionLabel {
    Normal,
    Attack,
}

/// One network packet running through the system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub seq: u64,
    pub action: String,
    /// Configured probability of the action; 0 for attacker messages.
    pub probability: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub src: String,
    pub dst: String,
    pub drain_src: f64,
    pub drain_dst: f64,
    pub payload: PayloadFeatures,
    pub label: TransitionLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// No action was enabled any more.
    Exhausted,
    /// The attacker's goal predicate became true.
    GoalReached,
    StepLimit,
    TimeLimit,
}

/// Identifies a run so it can be replayed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub rng: String,
}

impl TraceMeta {
    pub fn new(config: &SystemConfig, seed: u64) -> Self {
        Self {
            schema_version: TRACE_SCHEMA_VERSION,
            config_hash: config_hash(config),
            seed,
            rng: RNG_NAME.to_string(),
        }
    }
}

/// Hex SHA-256 of the canonical serialized configuration.
pub fn config_hash(config: &SystemConfig) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serialize_config(config).as_bytes());
    hex(&hasher.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// An ordered record of everything that happened in one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub meta: TraceMeta,
    pub transitions: Vec<Transition>,
    pub final_state: SystemState,
    pub termination: Termination,
}

impl Trace {
    /// Timestamps at which each transition completed.
    pub fn timestamps(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.t_end).collect()
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("action `{0}` is unknown")]
    UnknownAction(String),
    #[error("action `{0}` is disabled in the current state")]
    DisabledAction(String),
}

/// When a simulation stops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopCondition {
    MaxSteps(u64),
    MaxTime(f64),
    UntilExhausted,
}

/// Labels of the device actions enabled in `state`, in config order.
///
/// An action is enabled iff the sender can pay its send drain, the receiver
/// can pay its receive drain, and its probability is positive.
pub fn enabled<'c>(state: &SystemState, config: &'c SystemConfig) -> Vec<&'c str> {
    config
        .device_actions()
        .filter(|a| action_enabled(state, config, a))
        .map(|a| a.label.as_str())
        .collect()
}

pub(crate) fn action_enabled(state: &SystemState, config: &SystemConfig, action: &ActionSpec) -> bool {
    let sender = config
        .device_index(&action.sender)
        .expect("validated config");
    let receiver = config
        .device_index(&action.receiver)
        .expect("validated config");
    state.batteries[sender] >= action.drain_send
        && state.batteries[receiver] >= action.drain_recv
        && action.probability > 0.0
}

/// Applies one device action: both monitors drain, the clock advances, and
/// the emitted transition records the packet.
pub fn step(
    state: &SystemState,
    action_label: &str,
    config: &SystemConfig,
) -> Result<(SystemState, Transition), SimError> {
    let action = config
        .action(action_label)
        .ok_or_else(|| SimError::UnknownAction(action_label.to_string()))?;
    if !action_enabled(state, config, action) {
        return Err(SimError::DisabledAction(action_label.to_string()));
    }
    let sender = config.device_index(&action.sender).expect("validated");
    let receiver = config.device_index(&action.receiver).expect("validated");

    let mut next = state.clone();
    next.batteries[sender] -= action.drain_send;
    next.batteries[receiver] -= action.drain_recv;
    next.clock += action.duration();

    let transition = Transition {
        seq: 0, // assigned by the caller
        action: action.label.clone(),
        probability: action.probability,
        t_start: state.clock,
        t_end: next.clock,
        src: action.sender.clone(),
        dst: action.receiver.clone(),
        drain_src: action.drain_send,
        drain_dst: action.drain_recv,
        payload: PayloadFeatures::default(),
        label: TransitionLabel::Normal,
    };
    Ok((next, transition))
}

/// Draws the next device action.
///
/// A single global draw: every enabled active action across all devices is
/// weighted by its configured probability, renormalized over the enabled
/// set. Returns `None` when nothing is enabled.
pub fn sample_device_action<'c>(
    state: &SystemState,
    config: &'c SystemConfig,
    rng: &mut ForgeRng,
) -> Option<&'c str> {
    let candidates: Vec<&ActionSpec> = config
        .device_actions()
        .filter(|a| action_enabled(state, config, a))
        .collect();
    if candidates.is_empty() {
        return None;
    }
    let total: f64 = candidates.iter().map(|a| a.probability).sum();
    let mut u = rng.next_f64() * total;
    for action in &candidates {
        u -= action.probability;
        if u < 0.0 {
            return Some(action.label.as_str());
        }
    }
    // Floating-point slack: the draw landed on the upper edge.
    Some(candidates.last().expect("non-empty").label.as_str())
}

/// Runs the system without an attacker, sampling device actions until the
/// stop condition hits or nothing is enabled.
///
/// Deterministic: the same `(config, seed, stop)` always yields the same
/// trace, on every platform.
pub fn simulate(config: &SystemConfig, seed: u64, stop: StopCondition) -> Trace {
    let mut rng = ForgeRng::seed_from_u64(seed);
    let mut state = SystemState::initial(config);
    let mut transitions: Vec<Transition> = Vec::new();

    let termination = loop {
        match stop {
            StopCondition::MaxSteps(n) if transitions.len() as u64 >= n => {
                break Termination::StepLimit
            }
            StopCondition::MaxTime(t) if state.clock >= t => break Termination::TimeLimit,
            _ => {}
        }
        let Some(label) = sample_device_action(&state, config, &mut rng) else {
            break Termination::Exhausted;
        };
        let (next, mut transition) = step(&state, label, config).expect("sampled enabled action");
        transition.seq = transitions.len() as u64;
        transitions.push(transition);
        state = next;
    };

    Trace {
        meta: TraceMeta::new(config, seed),
        transitions,
        final_state: state,
        termination,
    }
}

/// Replays a fixed action sequence, failing if any step is disabled.
///
/// Used for ground-truth fixtures where the action order is prescribed
/// rather than sampled.
pub fn replay(config: &SystemConfig, actions: &[&str]) -> Result<Trace, SimError> {
    let mut state = SystemState::initial(config);
    let mut transitions = Vec::with_capacity(actions.len());
    for (seq, label) in actions.iter().enumerate() {
        let (next, mut transition) = step(&state, label, config)?;
        transition.seq = seq as u64;
        transitions.push(transition);
        state = next;
    }
    Ok(Trace {
        meta: TraceMeta::new(config, 0),
        transitions,
        final_state: state,
        termination: Termination::StepLimit,
    })
}

/// Writes a trace as line-delimited records: one header line, then one line
/// per transition.
pub fn write_trace_jsonl<W: std::io::Write>(trace: &Trace, mut out: W) -> std::io::Result<()> {
    let header = serde_json::to_string(&trace.meta).expect("meta serializes");
    writeln!(out, "{header}")?;
    for transition in &trace.transitions {
        let line = serde_json::to_string(transition).expect("transition serializes");
        writeln!(out, "{line}")?;
    }
    Ok(())
}
