use std::fmt::Write as _;
use std::sync::LazyLock;

use rand::seq::SliceRandom;
use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::bus::AgentId;
use crate::error::{Error, Result};
use crate::precoder::{UtilityKind, UtilitySpec};

/// Operator directive as submitted, stamped with the loop it arrived at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intent {
    pub text: String,
    pub loop_index: u64,
}

impl Intent {
    pub fn new(text: impl Into<String>, loop_index: u64) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::IntentRejected("empty intent".into()));
        }
        Ok(Self { text, loop_index })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    SumRate,
    SumLogRate,
}

/// `r_user ≥ min_rate_mbps`; users are numbered from 1 as in operator text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateConstraint {
    pub user: usize,
    pub min_rate_mbps: f64,
}

/// What the supervisor hands to the near-RT agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    pub utility_kind: Objective,
    pub energy_saving: bool,
    /// One entry per user, 0 where unconstrained.
    pub r_min_mbps: Vec<f64>,
    /// Sorted by user.
    pub monitored_constraints: Vec<RateConstraint>,
}

impl ObjectiveSpec {
    /// Sum-rate, all O-RUs on, no constraints.
    pub fn unconstrained(num_users: usize) -> Self {
        Self {
            utility_kind: Objective::SumRate,
            energy_saving: false,
            r_min_mbps: vec![0.0; num_users],
            monitored_constraints: Vec::new(),
        }
    }

    pub fn num_users(&self) -> usize {
        self.r_min_mbps.len()
    }

    pub fn validate(&self, num_users: usize) -> Result<()> {
        let bad = |m: String| Err(Error::IntentRejected(m));
        if self.r_min_mbps.len() != num_users {
            return bad(format!("{} minimum rates for {num_users} users", self.r_min_mbps.len()));
        }
        if self.r_min_mbps.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return bad("minimum rates must be finite and non-negative".into());
        }
        let mut expected: Vec<RateConstraint> = self
            .r_min_mbps
            .iter()
            .enumerate()
            .filter(|(_, &r)| r > 0.0)
            .map(|(k, &r)| RateConstraint { user: k + 1, min_rate_mbps: r })
            .collect();
        expected.sort_by_key(|c| c.user);
        if expected != self.monitored_constraints {
            return bad("monitored constraints must list exactly the positive minimum rates, by user".into());
        }
        Ok(())
    }

    /// Deterministic serialization used for equality checks and echoes.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("plain data serializes")
    }

    /// Memory partition label.
    pub fn intent_kind(&self) -> &'static str {
        match (self.energy_saving, self.utility_kind) {
            (true, Objective::SumRate) => "energy_saving",
            (true, Objective::SumLogRate) => "energy_saving_log",
            (false, Objective::SumRate) => "sum_rate",
            (false, Objective::SumLogRate) => "sum_log_rate",
        }
    }

    pub fn utility_spec(&self, p_max_w: f64, dual_step: f64) -> Result<UtilitySpec<f64>> {
        let kind = match self.utility_kind {
            Objective::SumRate => UtilityKind::SumRate,
            Objective::SumLogRate => UtilityKind::SumLogRate,
        };
        UtilitySpec::uniform(kind, self.r_min_mbps.clone(), p_max_w, dual_step)
    }

    /// The supervisor's three messages, one per near-RT agent.
    pub fn routed_messages(&self) -> [(AgentId, String); 3] {
        let constraints: Vec<String> = self
            .monitored_constraints
            .iter()
            .map(|c| format!("r_{} >= {} Mbps", c.user, c.min_rate_mbps))
            .collect();
        let with_constraints = |head: &str| {
            let mut s = head.to_string();
            for c in &constraints {
                let _ = write!(s, "\nConstraint: {c}");
            }
            s
        };
        let objective = match self.utility_kind {
            Objective::SumRate => "Objective: sum_k r_k",
            Objective::SumLogRate => "Objective: sum_k log(r_k)",
        };
        let oru = if self.energy_saving {
            with_constraints("Objective: Energy Saving")
        } else {
            "Objective: Full Power".to_string()
        };
        let monitor = if constraints.is_empty() {
            "Monitor: none".to_string()
        } else {
            constraints.iter().map(|c| format!("Monitor: {c}")).collect::<Vec<_>>().join("\n")
        };
        [
            (AgentId::UserWeighting, with_constraints(objective)),
            (AgentId::OruManagement, oru),
            (AgentId::Monitoring, monitor),
        ]
    }
}

static SENTENCE_END: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[.!?;]+(?:\s+|$)").unwrap());
static SPACES: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\s+").unwrap());
static ENERGY_ON: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"^(?:please )?(?:(?:enter|enable|activate|switch to|turn on|use|go into)(?: the)? energy[- ]saving(?: mode)?|save energy)$",
    )
    .unwrap()
});
static ENERGY_OFF: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"^(?:please )?(?:(?:exit|leave|disable|turn off)(?: the)? energy[- ]saving(?: mode)?|keep all o-?rus (?:active|on)|use full power)$",
    )
    .unwrap()
});
static OBJECTIVE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(?:please )?(?:maximi[sz]e|optimi[sz]e)(?: the)? (.+)$").unwrap()
});
static NO_MINIMUM: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(?:no|drop(?: all)?|remove(?: all)?|without) minimum[- ]rate (?:requirements?|constraints?)$").unwrap()
});
static GUARANTEE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"^(?:please )?(?:guarantee|ensure|provide|give)(?: at least)? (\d+(?:\.\d+)?) ?(?:mbps|mbit/s|mb/s) (?:for|to) (.+)$",
    )
    .unwrap()
});

const EXPECTED: &str = "expected an energy-saving directive (\"Enter the energy-saving mode\"), \
an objective (\"Maximize the sum rate\", \"Maximize the sum of log-rates\"), \
a guarantee (\"Guarantee 10 Mbps for user 1 and user 2\") or \"No minimum rate requirements\"";

fn reject(msg: impl Into<String>) -> Error {
    Error::IntentRejected(msg.into())
}

fn parse_objective(phrase: &str) -> Option<Objective> {
    match phrase {
        "sum rate" | "sum-rate" | "sum of rates" | "sum of the rates" | "throughput" | "total throughput" => {
            Some(Objective::SumRate)
        }
        "sum of log-rates" | "sum of log rates" | "sum of the log-rates" | "sum of the log rates"
        | "sum log-rate" | "sum log rate" | "sum-log-rate" | "proportional fairness" => Some(Objective::SumLogRate),
        _ => None,
    }
}

fn parse_users(phrase: &str, num_users: usize) -> Result<Vec<usize>> {
    if matches!(phrase, "all users" | "every user" | "each user") {
        return Ok((1..=num_users).collect());
    }
    let cleaned = phrase.replace(',', " ");
    let mut users = Vec::new();
    let mut saw_label = false;
    for tok in cleaned.split_whitespace() {
        match tok {
            "user" | "users" => saw_label = true,
            "and" => {}
            _ => {
                let k: usize = tok
                    .parse()
                    .map_err(|_| reject(format!("could not read a user number from \"{phrase}\"")))?;
                if k == 0 || k > num_users {
                    return Err(reject(format!("user {k} does not exist; users are numbered 1 to {num_users}")));
                }
                users.push(k);
            }
        }
    }
    if !saw_label || users.is_empty() {
        return Err(reject(format!("could not read a user list from \"{phrase}\"")));
    }
    Ok(users)
}

/// Deterministic grammar translation of operator text for `num_users` users.
pub fn translate_intent(text: &str, num_users: usize) -> Result<ObjectiveSpec> {
    let lowered = text.to_lowercase();
    let sentences: Vec<String> = SENTENCE_END
        .split(&lowered)
        .map(|s| SPACES.replace_all(s.trim(), " ").into_owned())
        .filter(|s| !s.is_empty())
        .collect();
    if sentences.is_empty() {
        return Err(reject("empty intent"));
    }
    let mut objective: Option<Objective> = None;
    let mut energy: Option<bool> = None;
    let mut no_minimum = false;
    let mut r_min = vec![0.0; num_users];
    for s in &sentences {
        if ENERGY_ON.is_match(s) || ENERGY_OFF.is_match(s) {
            let on = ENERGY_ON.is_match(s);
            if energy.is_some_and(|e| e != on) {
                return Err(reject("energy saving is both enabled and disabled"));
            }
            energy = Some(on);
        } else if let Some(c) = OBJECTIVE.captures(s) {
            let o = parse_objective(&c[1])
                .ok_or_else(|| reject(format!("unknown objective \"{}\"; expected sum rate or sum of log-rates", &c[1])))?;
            if objective.is_some_and(|p| p != o) {
                return Err(reject("two different objectives requested"));
            }
            objective = Some(o);
        } else if NO_MINIMUM.is_match(s) {
            no_minimum = true;
        } else if let Some(c) = GUARANTEE.captures(s) {
            let rate: f64 = c[1].parse().map_err(|_| reject(format!("bad rate \"{}\"", &c[1])))?;
            if !(rate > 0.0 && rate.is_finite()) {
                return Err(reject("a guaranteed rate must be positive"));
            }
            for k in parse_users(&c[2], num_users)? {
                let slot = &mut r_min[k - 1];
                if *slot > 0.0 && *slot != rate {
                    return Err(reject(format!("user {k} is given two different minimum rates")));
                }
                *slot = rate;
            }
        } else {
            return Err(reject(format!("could not parse \"{s}\"; {EXPECTED}")));
        }
    }
    if no_minimum && r_min.iter().any(|&r| r > 0.0) {
        return Err(reject("\"no minimum rate requirements\" contradicts a rate guarantee"));
    }
    let monitored_constraints = r_min
        .iter()
        .enumerate()
        .filter(|(_, &r)| r > 0.0)
        .map(|(k, &r)| RateConstraint { user: k + 1, min_rate_mbps: r })
        .collect();
    Ok(ObjectiveSpec {
        utility_kind: objective.unwrap_or(Objective::SumRate),
        energy_saving: energy.unwrap_or(false),
        r_min_mbps: r_min,
        monitored_constraints,
    })
}

fn pick<'a, R: Rng + ?Sized>(rng: &mut R, xs: &[&'a str]) -> &'a str {
    xs[rng.random_range(0..xs.len())]
}

fn render_users<R: Rng + ?Sized>(rng: &mut R, users: &[usize]) -> String {
    if users.len() == 1 {
        return format!("user {}", users[0]);
    }
    let (init, last) = users.split_at(users.len() - 1);
    if rng.random_bool(0.5) {
        let init: Vec<String> = init.iter().map(|k| k.to_string()).collect();
        format!("users {} and {}", init.join(", "), last[0])
    } else {
        let init: Vec<String> = init.iter().map(|k| format!("user {k}")).collect();
        format!("{} and user {}", init.join(", "), last[0])
    }
}

/// Renders `spec` as operator text using randomly chosen grammar variants.
/// [`translate_intent`] maps the result back to `spec`.
pub fn render_intent<R: Rng + ?Sized>(spec: &ObjectiveSpec, rng: &mut R) -> String {
    let mut sentences: Vec<String> = Vec::new();
    if spec.energy_saving {
        sentences.push(
            pick(rng, &[
                "Enter the energy-saving mode",
                "Enable energy saving",
                "Switch to energy-saving mode",
                "Activate the energy saving mode",
                "Turn on energy saving",
                "Save energy",
            ])
            .into(),
        );
    } else if rng.random_bool(0.3) {
        sentences.push(pick(rng, &["Keep all O-RUs active", "Disable energy saving", "Exit the energy-saving mode"]).into());
    }
    let objective_needed = spec.utility_kind == Objective::SumLogRate || sentences.is_empty();
    if objective_needed || rng.random_bool(0.5) {
        let phrase = match spec.utility_kind {
            Objective::SumRate => pick(rng, &["Maximize the sum rate", "Maximise the sum-rate", "Maximize the sum of rates", "Maximize throughput"]),
            Objective::SumLogRate => pick(rng, &[
                "Maximize the sum of log-rates",
                "Maximize the sum log-rate",
                "Maximize proportional fairness",
                "Maximise the sum of the log rates",
            ]),
        };
        sentences.push(phrase.into());
    }
    let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
    for c in &spec.monitored_constraints {
        match groups.iter_mut().find(|(r, _)| *r == c.min_rate_mbps) {
            Some((_, us)) => us.push(c.user),
            None => groups.push((c.min_rate_mbps, vec![c.user])),
        }
    }
    for (rate, users) in &groups {
        let verb = pick(rng, &["Guarantee", "Ensure", "Provide", "Guarantee at least", "Ensure at least"]);
        let unit = pick(rng, &["Mbps", "Mbit/s", "Mb/s", "mbps"]);
        let prep = pick(rng, &["for", "to"]);
        sentences.push(format!("{verb} {rate} {unit} {prep} {}", render_users(rng, users)));
    }
    if groups.is_empty() && rng.random_bool(0.5) {
        sentences.push(pick(rng, &["No minimum rate requirements", "No minimum rate constraints"]).into());
    }
    sentences.shuffle(rng);
    let mut out = String::new();
    for s in sentences {
        let s = if rng.random_bool(0.2) { s.to_lowercase() } else { s };
        out.push_str(&s);
        out.push_str(pick(rng, &[". ", ".  ", "! "]));
    }
    out.trim_end().to_string()
}

/// Random valid spec for `num_users` users.
pub fn random_objective<R: Rng + ?Sized>(num_users: usize, rng: &mut R) -> ObjectiveSpec {
    let utility_kind = if rng.random_bool(0.5) { Objective::SumRate } else { Objective::SumLogRate };
    let energy_saving = rng.random_bool(0.5);
    let rates = [5.0, 10.0, 12.5, 20.0, 50.0, 100.0];
    let mut r_min = vec![0.0; num_users];
    for r in r_min.iter_mut() {
        if rng.random_bool(0.3) {
            *r = rates[rng.random_range(0..rates.len())];
        }
    }
    let monitored_constraints = r_min
        .iter()
        .enumerate()
        .filter(|(_, &r)| r > 0.0)
        .map(|(k, &r)| RateConstraint { user: k + 1, min_rate_mbps: r })
        .collect();
    ObjectiveSpec { utility_kind, energy_saving, r_min_mbps: r_min, monitored_constraints }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn guarantee_for_two_users() {
        let s = translate_intent("Guarantee 10 Mbps for user 1 and user 2.", 4).unwrap();
        assert_eq!(s.r_min_mbps, vec![10.0, 10.0, 0.0, 0.0]);
        assert!(!s.energy_saving);
        assert_eq!(s.utility_kind, Objective::SumRate);
        assert_eq!(s.monitored_constraints.len(), 2);
    }

    #[test]
    fn decimal_rates_survive_sentence_splitting() {
        let s = translate_intent("Save energy. Ensure 12.5 Mbps to users 2, 3 and 4.", 4).unwrap();
        assert_eq!(s.r_min_mbps, vec![0.0, 12.5, 12.5, 12.5]);
        assert!(s.energy_saving);
    }

    #[test]
    fn rejections_carry_a_diagnosis() {
        for (text, needle) in [
            ("", "empty"),
            ("Make it fast.", "could not parse"),
            ("Guarantee 10 Mbps for user 9.", "does not exist"),
            ("Guarantee 10 Mbps for user 1. No minimum rate requirements.", "contradicts"),
            ("Maximize the sum rate. Maximize the sum of log-rates.", "two different"),
            ("Maximize happiness.", "unknown objective"),
            ("Guarantee 5 Mbps for user 1. Guarantee 6 Mbps for user 1.", "two different minimum"),
        ] {
            let e = translate_intent(text, 3).unwrap_err().to_string();
            assert!(e.contains(needle), "{text:?} → {e}");
        }
    }

    #[test]
    fn validate_checks_constraint_listing() {
        let mut s = translate_intent("Guarantee 10 Mbps for user 2.", 3).unwrap();
        assert!(s.validate(3).is_ok());
        assert!(s.validate(4).is_err());
        s.monitored_constraints.clear();
        assert!(s.validate(3).is_err());
    }
}
