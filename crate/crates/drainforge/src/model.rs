//! Static system description: devices, their action sets, battery monitors
//! and the attacker.
//!
//! A system is a set of communicating devices. Each device owns a set of
//! *active* actions it can initiate (each with a probability, the per-device
//! probabilities summing to 1) and a set of *passive* action labels it can
//! receive. Every action carries the battery drain it imposes on the sender
//! and on the receiver, and the time the exchange takes. Monitors track the
//! remaining battery of each device at run time; here we only describe their
//! initial capacity.
//!
//! Configurations are immutable after loading and safe to share across
//! concurrent simulations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reserved source id used on attack transitions. Not a valid device id.
pub const ATTACKER_ID: &str = "ATTACKER";

/// Absolute tolerance for per-device probability sums.
pub const PROB_SUM_TOLERANCE: f64 = 1e-9;

/// An active action: a guarded send from one device to another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    /// Globally unique label. Each action belongs to exactly one sender.
    pub label: String,
    /// Initiating device. May be omitted in config files, where it defaults
    /// to the device the action is listed under.
    #[serde(default)]
    pub sender: String,
    pub receiver: String,
    /// Probability the sender chooses this action, in (0, 1].
    pub probability: f64,
    /// Battery drained from the sender per exchange.
    pub drain_send: f64,
    /// Battery drained from the receiver per exchange.
    pub drain_recv: f64,
    /// Time the send takes.
    pub time_send: f64,
    /// Time the receive takes.
    #[serde(default)]
    pub time_recv: f64,
}

impl ActionSpec {
    /// Total duration of one exchange.
    pub fn duration(&self) -> f64 {
        self.time_send + self.time_recv
    }

    /// Total battery removed from the system by one exchange.
    pub fn total_drain(&self) -> f64 {
        self.drain_send + self.drain_recv
    }
}

/// A device: initial battery plus its active and passive action sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub id: String,
    pub battery_capacity: f64,
    /// Actions this device initiates. Probabilities must sum to 1 when the
    /// set is non-empty; an empty set describes a pure receiver.
    #[serde(default)]
    pub active: Vec<ActionSpec>,
    /// Labels of actions this device can receive.
    #[serde(default)]
    pub passive: Vec<String>,
}

/// One attack message type the attacker can fire at a device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackActionSpec {
    pub label: String,
    pub target: String,
    /// Battery the victim spends handling one attack message.
    pub drain_target: f64,
    pub time_per_message: f64,
    /// Predictability score: how recognisable this message type is. Used by
    /// the stealth-weighted solver; free input, the model assigns no units.
    #[serde(default)]
    pub stealth_cost: f64,
}

/// What the attacker is trying to achieve.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Goal {
    /// Some battery reaches zero.
    AnyDeviceDead,
    /// Every battery reaches zero.
    AllDevicesDead,
    /// A specific device's battery reaches zero.
    Device(String),
}

impl Default for Goal {
    fn default() -> Self {
        Goal::AnyDeviceDead
    }
}

impl fmt::Display for Goal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Goal::AnyDeviceDead => write!(f, "any_device_dead"),
            Goal::AllDevicesDead => write!(f, "all_devices_dead"),
            Goal::Device(id) => write!(f, "device({id})"),
        }
    }
}

/// How attack payload features are sampled; sizes of the obfuscation pools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadSpec {
    /// Number of user agents the attacker rotates through.
    pub ua_list_size: u32,
    /// Number of pre-listed referrer sites (code 1 is the host itself).
    pub referrer_list_size: u32,
}

impl Default for PayloadSpec {
    fn default() -> Self {
        Self {
            ua_list_size: 8,
            referrer_list_size: 5,
        }
    }
}

/// The attacker: its message types, strength and objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackerSpec {
    pub actions: Vec<AttackActionSpec>,
    /// Attack messages per scheduling round. Higher = stronger attacker.
    #[serde(default = "default_power_level")]
    pub power_level: u32,
    #[serde(default)]
    pub goal: Goal,
    /// Weight on predictability scores when solving for a stealthy strategy.
    #[serde(default)]
    pub stealth_weight: f64,
    #[serde(default)]
    pub payload: PayloadSpec,
}

fn default_power_level() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulingSpec {
    /// Resolve the probabilistic device round before the attacker's turn.
    #[serde(default = "default_true")]
    pub device_round_first: bool,
}

fn default_true() -> bool {
    true
}

impl Default for SchedulingSpec {
    fn default() -> Self {
        Self {
            device_round_first: true,
        }
    }
}

/// The full system description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub devices: Vec<DeviceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attacker: Option<AttackerSpec>,
    #[serde(default)]
    pub scheduling: SchedulingSpec,
    #[serde(rename = "seed", default)]
    pub rng_seed: u64,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("no devices")]
    NoDevices,
    #[error("duplicate action label `{0}`")]
    DuplicateLabel(String),
    #[error("action `{label}` declares sender `{declared}` but is listed under device `{device}`")]
    SenderMismatch {
        label: String,
        declared: String,
        device: String,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Parses a configuration document.
///
/// Dies early only on structural problems (syntax, duplicate labels, empty
/// device lists). Semantic problems are the job of [`validate`], which
/// reports them all at once instead of failing on the first.
pub fn load_config(text: &str) -> Result<SystemConfig, ConfigError> {
    let mut config: SystemConfig =
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    if config.devices.is_empty() {
        return Err(ConfigError::NoDevices);
    }
    // Fill in implied senders and reject contradictions.
    for device in &mut config.devices {
        for action in &mut device.active {
            if action.sender.is_empty() {
                action.sender = device.id.clone();
            } else if action.sender != device.id {
                return Err(ConfigError::SenderMismatch {
                    label: action.label.clone(),
                    declared: action.sender.clone(),
                    device: device.id.clone(),
                });
            }
        }
    }
    let mut seen = BTreeSet::new();
    for label in config.action_labels() {
        if !seen.insert(label.to_string()) {
            return Err(ConfigError::DuplicateLabel(label.to_string()));
        }
    }
    Ok(config)
}

/// Serializes a configuration back to document form. Round-trips through
/// [`load_config`] without changing validation results.
pub fn serialize_config(config: &SystemConfig) -> String {
    toml::to_string(config).expect("config serializes")
}

impl SystemConfig {
    pub fn from_str(text: &str) -> Result<Self, ConfigError> {
        load_config(text)
    }

    pub fn device(&self, id: &str) -> Option<&DeviceSpec> {
        self.devices.iter().find(|d| d.id == id)
    }

    pub fn device_index(&self, id: &str) -> Option<usize> {
        self.devices.iter().position(|d| d.id == id)
    }

    /// All device actions in config order (the canonical action ordering).
    pub fn device_actions(&self) -> impl Iterator<Item = &ActionSpec> {
        self.devices.iter().flat_map(|d| d.active.iter())
    }

    pub fn action(&self, label: &str) -> Option<&ActionSpec> {
        self.device_actions().find(|a| a.label == label)
    }

    pub fn attack_action(&self, label: &str) -> Option<&AttackActionSpec> {
        self.attacker
            .as_ref()
            .and_then(|att| att.actions.iter().find(|a| a.label == label))
    }

    /// Every action label, device actions first, then attack actions.
    pub fn action_labels(&self) -> Vec<&str> {
        let mut labels: Vec<&str> = self.device_actions().map(|a| a.label.as_str()).collect();
        if let Some(att) = &self.attacker {
            labels.extend(att.actions.iter().map(|a| a.label.as_str()));
        }
        labels
    }

    /// Numeric code for a device, 1-based in config order. Used when
    /// flattening traces to feature rows.
    pub fn device_code(&self, id: &str) -> Option<u32> {
        self.device_index(id).map(|i| i as u32 + 1)
    }

    /// Numeric code for an action label, 1-based, device actions first.
    pub fn action_code(&self, label: &str) -> Option<u32> {
        self.action_labels()
            .iter()
            .position(|l| *l == label)
            .map(|i| i as u32 + 1)
    }
}

/// Everything `validate` can complain about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ViolationCode {
    ProbSum,
    BadProbability,
    SelfLoop,
    DupLabel,
    UnknownReceiver,
    UnknownTarget,
    PassiveUnmatched,
    PassiveMissing,
    NonPositiveDrain,
    NegativeDrain,
    NonPositiveTime,
    NegativeTime,
    NonPositiveBattery,
    BadPowerLevel,
    GoalUnknownDevice,
    NegativeStealthCost,
    DeadOnArrival,
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ViolationCode::ProbSum => "PROB_SUM",
            ViolationCode::BadProbability => "BAD_PROBABILITY",
            ViolationCode::SelfLoop => "SELF_LOOP",
            ViolationCode::DupLabel => "DUP_LABEL",
            ViolationCode::UnknownReceiver => "UNKNOWN_RECEIVER",
            ViolationCode::UnknownTarget => "UNKNOWN_TARGET",
            ViolationCode::PassiveUnmatched => "PASSIVE_UNMATCHED",
            ViolationCode::PassiveMissing => "PASSIVE_MISSING",
            ViolationCode::NonPositiveDrain => "NON_POSITIVE_DRAIN",
            ViolationCode::NegativeDrain => "NEGATIVE_DRAIN",
            ViolationCode::NonPositiveTime => "NON_POSITIVE_TIME",
            ViolationCode::NegativeTime => "NEGATIVE_TIME",
            ViolationCode::NonPositiveBattery => "NON_POSITIVE_BATTERY",
            ViolationCode::BadPowerLevel => "BAD_POWER_LEVEL",
            ViolationCode::GoalUnknownDevice => "GOAL_UNKNOWN_DEVICE",
            ViolationCode::NegativeStealthCost => "NEGATIVE_STEALTH_COST",
            ViolationCode::DeadOnArrival => "DEAD_ON_ARRIVAL",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Severity {
    Error,
    Warning,
}

/// One validation finding: machine-readable code plus the offending entity.
#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub severity: Severity,
    /// Device id or action label the finding is about.
    pub entity: String,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}]: {}", self.code, self.entity, self.detail)
    }
}

/// Checks every structural invariant of a configuration.
///
/// Violations are data, not failures: the full list is returned so a config
/// author sees every problem at once. A config is usable when no violation
/// has `Severity::Error`; warnings flag suspicious but runnable setups.
pub fn validate(config: &SystemConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let err = |code, entity: &str, detail: String| Violation {
        code,
        severity: Severity::Error,
        entity: entity.to_string(),
        detail,
    };

    let device_ids: BTreeSet<&str> = config.devices.iter().map(|d| d.id.as_str()).collect();

    // Global label uniqueness (load_config enforces it for parsed configs;
    // programmatic configs come through here).
    let mut seen: BTreeMap<&str, u32> = BTreeMap::new();
    for label in config.action_labels() {
        *seen.entry(label).or_insert(0) += 1;
    }
    for (label, count) in seen {
        if count > 1 {
            out.push(err(
                ViolationCode::DupLabel,
                label,
                format!("label used {count} times; labels must be globally unique"),
            ));
        }
    }

    for device in &config.devices {
        if device.battery_capacity <= 0.0 {
            out.push(err(
                ViolationCode::NonPositiveBattery,
                &device.id,
                format!("battery_capacity {} must be > 0", device.battery_capacity),
            ));
        }

        if !device.active.is_empty() {
            let sum: f64 = device.active.iter().map(|a| a.probability).sum();
            if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
                out.push(err(
                    ViolationCode::ProbSum,
                    &device.id,
                    format!("active probabilities sum to {sum}, expected 1"),
                ));
            }
        }

        for action in &device.active {
            if action.probability <= 0.0 || action.probability > 1.0 {
                out.push(err(
                    ViolationCode::BadProbability,
                    &action.label,
                    format!("probability {} outside (0, 1]", action.probability),
                ));
            }
            if action.sender == action.receiver {
                out.push(err(
                    ViolationCode::SelfLoop,
                    &action.label,
                    "sender and receiver are the same device".to_string(),
                ));
            }
            if !device_ids.contains(action.receiver.as_str()) {
                out.push(err(
                    ViolationCode::UnknownReceiver,
                    &action.label,
                    format!("receiver `{}` is not a device", action.receiver),
                ));
            } else if action.sender != action.receiver {
                // Rule 1 needs the receive action in the receiver's passive
                // set, otherwise the action can never fire.
                let receiver = config.device(&action.receiver).expect("checked above");
                if !receiver.passive.iter().any(|l| l == &action.label) {
                    out.push(err(
                        ViolationCode::PassiveMissing,
                        &action.label,
                        format!(
                            "receiver `{}` does not list `{}` as passive",
                            action.receiver, action.label
                        ),
                    ));
                }
            }
            if action.drain_send < 0.0 || action.drain_recv < 0.0 {
                out.push(err(
                    ViolationCode::NegativeDrain,
                    &action.label,
                    "drains must be >= 0".to_string(),
                ));
            } else if action.total_drain() <= 0.0 {
                out.push(err(
                    ViolationCode::NonPositiveDrain,
                    &action.label,
                    "drain_send + drain_recv must be > 0 so traces stay finite".to_string(),
                ));
            }
            if action.time_send <= 0.0 {
                out.push(err(
                    ViolationCode::NonPositiveTime,
                    &action.label,
                    format!("time_send {} must be > 0", action.time_send),
                ));
            }
            if action.time_recv < 0.0 {
                out.push(err(
                    ViolationCode::NegativeTime,
                    &action.label,
                    format!("time_recv {} must be >= 0", action.time_recv),
                ));
            }
        }

        for label in &device.passive {
            let matches = config
                .device_actions()
                .filter(|a| &a.label == label && a.receiver == device.id)
                .count();
            if matches != 1 {
                out.push(err(
                    ViolationCode::PassiveUnmatched,
                    label,
                    format!(
                        "passive label on `{}` matches {} actions with this receiver, expected 1",
                        device.id, matches
                    ),
                ));
            }
        }
    }

    if let Some(attacker) = &config.attacker {
        if attacker.power_level < 1 {
            out.push(err(
                ViolationCode::BadPowerLevel,
                ATTACKER_ID,
                "power_level must be >= 1".to_string(),
            ));
        }
        if let Goal::Device(id) = &attacker.goal {
            if !device_ids.contains(id.as_str()) {
                out.push(err(
                    ViolationCode::GoalUnknownDevice,
                    id,
                    format!("goal names unknown device `{id}`"),
                ));
            }
        }
        for action in &attacker.actions {
            if !device_ids.contains(action.target.as_str()) {
                out.push(err(
                    ViolationCode::UnknownTarget,
                    &action.label,
                    format!("target `{}` is not a device", action.target),
                ));
            }
            if action.drain_target <= 0.0 {
                out.push(err(
                    ViolationCode::NonPositiveDrain,
                    &action.label,
                    "drain_target must be > 0 so attacks make progress".to_string(),
                ));
            }
            if action.time_per_message <= 0.0 {
                out.push(err(
                    ViolationCode::NonPositiveTime,
                    &action.label,
                    "time_per_message must be > 0".to_string(),
                ));
            }
            if action.stealth_cost < 0.0 {
                out.push(err(
                    ViolationCode::NegativeStealthCost,
                    &action.label,
                    "stealth_cost must be >= 0".to_string(),
                ));
            }
        }
    }

    // Only meaningful if the structure is otherwise sound.
    if out.is_empty() && !has_enabled_initial_transition(config) {
        out.push(Violation {
            code: ViolationCode::DeadOnArrival,
            severity: Severity::Warning,
            entity: "system".to_string(),
            detail: "no transition is enabled from the initial state".to_string(),
        });
    }

    out
}

/// True if no `Severity::Error` violations were found.
pub fn is_valid(config: &SystemConfig) -> bool {
    validate(config)
        .iter()
        .all(|v| v.severity != Severity::Error)
}

fn has_enabled_initial_transition(config: &SystemConfig) -> bool {
    let device_enabled = config.device_actions().any(|a| {
        let sender = config.device(&a.sender);
        let receiver = config.device(&a.receiver);
        match (sender, receiver) {
            (Some(s), Some(r)) => {
                s.battery_capacity >= a.drain_send
                    && r.battery_capacity >= a.drain_recv
                    && a.probability > 0.0
            }
            _ => false,
        }
    });
    if device_enabled {
        return true;
    }
    if let Some(attacker) = &config.attacker {
        return attacker.actions.iter().any(|a| {
            config
                .device(&a.target)
                .is_some_and(|d| d.battery_capacity > 0.0)
        });
    }
    false
}
