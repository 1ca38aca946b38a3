//! Two-arm screening trial parameterizations and the derived endpoints.
//!
//! An arm is described either by conditional probabilities ([`ArmParams`]:
//! stage at diagnosis, then death given stage) or by the five non-zero cells
//! of the joint (death x stage) distribution ([`JointProbs`]).

use serde::{Deserialize, Serialize};

use crate::error::{Denominator, Error, Result};

/// Tolerance for the five joint cells summing to one.
pub const SUM_TOLERANCE: f64 = 1e-12;

/// Conditional-probability description of one trial arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmParams {
    #[serde(rename = "pE")]
    pub p_early: f64,
    #[serde(rename = "pL")]
    pub p_late: f64,
    #[serde(rename = "pDgE")]
    pub p_death_given_early: f64,
    #[serde(rename = "pDgL")]
    pub p_death_given_late: f64,
}

impl ArmParams {
    pub const fn new(p_early: f64, p_late: f64, p_death_given_early: f64, p_death_given_late: f64) -> Self {
        Self {
            p_early,
            p_late,
            p_death_given_early,
            p_death_given_late,
        }
    }

    /// Marginal probability of cancer death, `p_L p_{D|L} + p_E p_{D|E}`.
    pub fn p_death(&self) -> f64 {
        self.p_late * self.p_death_given_late + self.p_early * self.p_death_given_early
    }

    /// Whether death is strictly more likely after a late-stage diagnosis.
    pub fn late_stage_more_lethal(&self) -> bool {
        self.p_death_given_early < self.p_death_given_late
    }

    fn violations(&self, arm: Arm, out: &mut Vec<Violation>) {
        let fields = [
            ("p_E", self.p_early),
            ("p_L", self.p_late),
            ("p_D_given_E", self.p_death_given_early),
            ("p_D_given_L", self.p_death_given_late),
        ];
        for (field, value) in fields {
            if !(0.0..=1.0).contains(&value) {
                out.push(Violation::OutOfRange { arm, field, value });
            }
        }
        let total = self.p_early + self.p_late;
        if total > 1.0 {
            out.push(Violation::StageMassExceedsOne { arm, total });
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        self.violations(Arm::Control, &mut v);
        match v.first() {
            None => Ok(()),
            Some(first) => Err(Error::Parameterization(first.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Control,
    Screen,
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Arm::Control => f.write_str("control"),
            Arm::Screen => f.write_str("screen"),
        }
    }
}

/// Both arms of a trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialParams {
    pub label: String,
    pub control: ArmParams,
    pub screen: ArmParams,
}

impl TrialParams {
    pub fn new(label: impl Into<String>, control: ArmParams, screen: ArmParams) -> Self {
        Self {
            label: label.into(),
            control,
            screen,
        }
    }

    pub fn arm(&self, arm: Arm) -> &ArmParams {
        match arm {
            Arm::Control => &self.control,
            Arm::Screen => &self.screen,
        }
    }

    /// Stage-lethality ordering holds in both arms.
    pub fn late_stage_more_lethal(&self) -> bool {
        self.control.late_stage_more_lethal() && self.screen.late_stage_more_lethal()
    }
}

/// A single broken constraint found by [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    OutOfRange { arm: Arm, field: &'static str, value: f64 },
    StageMassExceedsOne { arm: Arm, total: f64 },
    ZeroControlLate,
    ZeroControlDeath,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::OutOfRange { arm, field, value } => {
                write!(f, "{arm} {field} = {value}: probability in [0,1] required")
            }
            Violation::StageMassExceedsOne { arm, total } => {
                write!(f, "{arm} p_E + p_L = {total}: p_E + p_L ≤ 1 required")
            }
            Violation::ZeroControlLate => f.write_str("control p_L = 0: endpoint S undefined"),
            Violation::ZeroControlDeath => f.write_str("control p_D = 0: endpoint M undefined"),
        }
    }
}

/// Outcome of [`validate`]; empty means valid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Validation {
    pub violations: Vec<Violation>,
}

impl Validation {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every invariant of a trial and lists all the ones that fail.
///
/// Zero control-arm denominators are reported too, since the endpoints are
/// undefined for such trials.
pub fn validate(params: &TrialParams) -> Validation {
    let mut violations = Vec::new();
    params.control.violations(Arm::Control, &mut violations);
    params.screen.violations(Arm::Screen, &mut violations);
    if violations.is_empty() {
        if params.control.p_late <= 0.0 {
            violations.push(Violation::ZeroControlLate);
        }
        if params.control.p_death() <= 0.0 {
            violations.push(Violation::ZeroControlDeath);
        }
    }
    Validation { violations }
}

/// Joint (mortality j, diagnosis k) cell probabilities of one arm.
///
/// The (death, no diagnosis) cell is structurally zero and not stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointProbs {
    pub p00: f64,
    pub p01: f64,
    pub p11: f64,
    pub p02: f64,
    pub p12: f64,
}

impl JointProbs {
    /// Cells in the fixed sampling order (p00, p01, p11, p02, p12).
    pub fn cells(&self) -> [f64; 5] {
        [self.p00, self.p01, self.p11, self.p02, self.p12]
    }

    pub fn p_late(&self) -> f64 {
        self.p02 + self.p12
    }

    pub fn p_early(&self) -> f64 {
        self.p01 + self.p11
    }

    pub fn p_death(&self) -> f64 {
        self.p11 + self.p12
    }

    pub fn total(&self) -> f64 {
        self.cells().iter().sum()
    }

    pub fn is_valid(&self) -> bool {
        self.cells().iter().all(|p| (0.0..=1.0).contains(p))
            && (self.total() - 1.0).abs() <= SUM_TOLERANCE
    }
}

/// Maps the conditional parameterization of one arm onto its joint cells.
pub fn to_joint(arm: &ArmParams) -> Result<JointProbs> {
    arm.validate()?;
    let joint = JointProbs {
        p00: 1.0 - arm.p_early - arm.p_late,
        p01: arm.p_early * (1.0 - arm.p_death_given_early),
        p11: arm.p_early * arm.p_death_given_early,
        p02: arm.p_late * (1.0 - arm.p_death_given_late),
        p12: arm.p_late * arm.p_death_given_late,
    };
    // p_E + p_L may exceed 1 by rounding only
    Ok(JointProbs {
        p00: joint.p00.max(0.0),
        ..joint
    })
}

/// True late-stage incidence reduction `S` and mortality reduction `M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndpointPair {
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(rename = "M")]
    pub m: f64,
}

/// Computes `S = 1 - p_L^S / p_L^C` and `M = 1 - p_D^S / p_D^C`.
pub fn derive_endpoints(params: &TrialParams) -> Result<EndpointPair> {
    params.control.validate()?;
    params.screen.validate()?;
    let late_c = params.control.p_late;
    let death_c = params.control.p_death();
    if late_c <= 0.0 {
        return Err(Error::DegenerateDenominator(Denominator::ControlLate));
    }
    if death_c <= 0.0 {
        return Err(Error::DegenerateDenominator(Denominator::ControlDeath));
    }
    Ok(EndpointPair {
        s: 1.0 - params.screen.p_late / late_c,
        m: 1.0 - params.screen.p_death() / death_c,
    })
}

/// Control arm shared by every registry scenario.
pub const CONTROL_ARM: ArmParams = ArmParams::new(0.010, 0.020, 0.10, 0.750);

/// The four scenarios with screen arms chosen to reproduce the tabulated
/// endpoints exactly. Scenarios 2 and 3 use `p_E = 0.0125`, `p_L = 0.0175`,
/// `p_{D|L} = 5/7`; the rounded three-decimal values give `S = 0.15`.
pub fn scenario_table() -> Vec<TrialParams> {
    vec![
        TrialParams::new("Scenario 1", CONTROL_ARM, CONTROL_ARM),
        TrialParams::new(
            "Scenario 2",
            CONTROL_ARM,
            ArmParams::new(0.0125, 0.0175, 0.28, 5.0 / 7.0),
        ),
        TrialParams::new(
            "Scenario 3",
            CONTROL_ARM,
            ArmParams::new(0.0125, 0.0175, 0.08, 5.0 / 7.0),
        ),
        TrialParams::new(
            "Scenario 4",
            CONTROL_ARM,
            ArmParams::new(0.010, 0.020, 0.10, 0.625),
        ),
    ]
}

/// The scenarios exactly as tabulated to three decimals.
pub fn printed_scenario_table() -> Vec<TrialParams> {
    vec![
        TrialParams::new("Scenario 1", CONTROL_ARM, CONTROL_ARM),
        TrialParams::new(
            "Scenario 2",
            CONTROL_ARM,
            ArmParams::new(0.012, 0.017, 0.28, 0.714),
        ),
        TrialParams::new(
            "Scenario 3",
            CONTROL_ARM,
            ArmParams::new(0.013, 0.017, 0.08, 0.714),
        ),
        TrialParams::new(
            "Scenario 4",
            CONTROL_ARM,
            ArmParams::new(0.010, 0.020, 0.10, 0.625),
        ),
    ]
}

/// Tabulated (S, M) for the four scenarios, to three decimals.
pub const PRINTED_ENDPOINTS: [(f64, f64); 4] = [(0.0, 0.0), (0.125, 0.0), (0.125, 0.156), (0.0, 0.156)];

/// JSON document holding both parameter sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRegistry {
    pub printed: Vec<TrialParams>,
    pub reconstructed: Vec<TrialParams>,
}

impl Default for ScenarioRegistry {
    fn default() -> Self {
        Self {
            printed: printed_scenario_table(),
            reconstructed: scenario_table(),
        }
    }
}

impl ScenarioRegistry {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("registry serializes")
    }

    /// Parses either the keyed registry document or a bare array of
    /// scenarios (taken as the reconstructed set).
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Doc {
            Keyed(ScenarioRegistry),
            Bare(Vec<TrialParams>),
        }
        Ok(match serde_json::from_str::<Doc>(text)? {
            Doc::Keyed(reg) => reg,
            Doc::Bare(list) => Self {
                printed: list.clone(),
                reconstructed: list,
            },
        })
    }

    /// The default parameter set used by simulations.
    pub fn default_set(&self) -> &[TrialParams] {
        &self.reconstructed
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn trial(control: ArmParams, screen: ArmParams) -> TrialParams {
        TrialParams::new("t", control, screen)
    }

    #[test]
    fn scenario_one_control_is_valid() {
        assert!(validate(&trial(CONTROL_ARM, CONTROL_ARM)).is_valid());
    }

    #[test]
    fn stage_mass_violation() {
        let bad = ArmParams::new(0.6, 0.6, 0.1, 0.2);
        let v = validate(&trial(CONTROL_ARM, bad));
        assert_eq!(v.violations.len(), 1);
        assert!(v.violations[0].to_string().contains("p_E + p_L ≤ 1"));
    }

    #[test]
    fn out_of_range_violation() {
        let bad = ArmParams::new(0.01, 0.02, 0.1, 1.2);
        let v = validate(&trial(bad, bad));
        assert_eq!(v.violations.len(), 2);
        assert!(v
            .violations
            .iter()
            .all(|x| x.to_string().contains("probability in [0,1]")));
    }

    #[test]
    fn all_violations_are_enumerated() {
        let bad = ArmParams::new(0.7, 0.7, -0.1, 1.5);
        let v = validate(&trial(bad, CONTROL_ARM));
        assert_eq!(v.violations.len(), 3);
    }

    #[test]
    fn joint_scenario_one_control() {
        let j = to_joint(&CONTROL_ARM).unwrap();
        assert_abs_diff_eq!(j.p00, 0.970, epsilon = 1e-15);
        assert_abs_diff_eq!(j.p01, 0.009, epsilon = 1e-15);
        assert_abs_diff_eq!(j.p11, 0.001, epsilon = 1e-15);
        assert_abs_diff_eq!(j.p02, 0.005, epsilon = 1e-15);
        assert_abs_diff_eq!(j.p12, 0.015, epsilon = 1e-15);
    }

    #[test]
    fn joint_edge_cases() {
        let none = to_joint(&ArmParams::new(0.0, 0.0, 0.3, 0.9)).unwrap();
        assert_eq!(none.cells(), [1.0, 0.0, 0.0, 0.0, 0.0]);
        let all = to_joint(&ArmParams::new(0.5, 0.5, 1.0, 1.0)).unwrap();
        assert_eq!(all.cells(), [0.0, 0.0, 0.5, 0.0, 0.5]);
        assert!(matches!(
            to_joint(&ArmParams::new(0.5, 0.6, 0.1, 0.1)),
            Err(Error::Parameterization(_))
        ));
    }

    #[test]
    fn registry_endpoints() {
        let expected = [(0.0, 0.0), (0.125, 0.0), (0.125, 0.15625), (0.0, 0.15625)];
        for (params, (s, m)) in scenario_table().iter().zip(expected) {
            let e = derive_endpoints(params).unwrap();
            assert_abs_diff_eq!(e.s, s, epsilon = 1e-12);
            assert_abs_diff_eq!(e.m, m, epsilon = 1e-12);
        }
    }

    #[test]
    fn printed_parameters_do_not_reproduce_printed_s() {
        let e = derive_endpoints(&printed_scenario_table()[1]).unwrap();
        assert_abs_diff_eq!(e.s, 0.15, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_denominators() {
        let no_late = ArmParams::new(0.01, 0.0, 0.1, 0.7);
        assert_eq!(
            derive_endpoints(&trial(no_late, CONTROL_ARM)),
            Err(Error::DegenerateDenominator(Denominator::ControlLate))
        );
        let no_death = ArmParams::new(0.01, 0.02, 0.0, 0.0);
        assert_eq!(
            derive_endpoints(&trial(no_death, CONTROL_ARM)),
            Err(Error::DegenerateDenominator(Denominator::ControlDeath))
        );
    }

    #[test]
    fn registry_json_round_trip_and_field_names() {
        let reg = ScenarioRegistry::default();
        let text = reg.to_json();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        let first = &value["reconstructed"][0];
        for key in ["label", "control", "screen"] {
            assert!(first.get(key).is_some(), "missing {key}");
        }
        for key in ["pE", "pL", "pDgE", "pDgL"] {
            assert!(first["control"].get(key).is_some(), "missing {key}");
        }
        assert_eq!(ScenarioRegistry::from_json(&text).unwrap(), reg);

        let bare = serde_json::to_string(&scenario_table()).unwrap();
        assert_eq!(ScenarioRegistry::from_json(&bare).unwrap().default_set(), scenario_table().as_slice());
    }

    prop_compose! {
        fn valid_arm()(p_e in 0.0..=1.0f64, frac in 0.0..=1.0f64, dge in 0.0..=1.0f64, dgl in 0.0..=1.0f64) -> ArmParams {
            ArmParams::new(p_e, (1.0 - p_e) * frac, dge, dgl)
        }
    }

    proptest! {
        #[test]
        fn joint_is_a_distribution(arm in valid_arm()) {
            let j = to_joint(&arm).unwrap();
            prop_assert!(j.is_valid());
            prop_assert!((j.p_late() - arm.p_late).abs() < 1e-15);
            prop_assert!((j.p_early() - arm.p_early).abs() < 1e-15);
            if arm.p_late > 0.0 {
                prop_assert!((j.p12 / j.p_late() - arm.p_death_given_late).abs() < 1e-12);
            }
        }

        #[test]
        fn endpoints_agree_with_joint_route(c in valid_arm(), s in valid_arm()) {
            prop_assume!(c.p_late > 1e-6 && c.p_death() > 1e-6);
            let e = derive_endpoints(&trial(c, s)).unwrap();
            let (jc, js) = (to_joint(&c).unwrap(), to_joint(&s).unwrap());
            let s_joint = 1.0 - (js.p02 + js.p12) / (jc.p02 + jc.p12);
            let m_joint = 1.0 - (js.p11 + js.p12) / (jc.p11 + jc.p12);
            prop_assert!((e.s - s_joint).abs() <= 1e-12 * (1.0 + s_joint.abs()));
            prop_assert!((e.m - m_joint).abs() <= 1e-12 * (1.0 + m_joint.abs()));
            prop_assert!(e.s <= 1.0 && e.m <= 1.0);
        }
    }
}
