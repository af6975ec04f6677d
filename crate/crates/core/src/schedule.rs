//! Multi-stage parameter schedules and their validity conditions.
//!
//! Stage `q` runs on `[1 - tau_q, 1 - tau_{q+1}]` with shell radius `N_q`,
//! shell cardinality `kappa_q` and OU correlation time `eps_q`. Asymptotic-scale
//! magnitudes overflow `f64` (`eps_5` is about `2^{-20000}`), so every
//! quantity is carried as a base-2 logarithm and conditions are compared
//! as linear combinations of logarithms, with all implied constants set
//! to one.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{shell_vectors, Dim};

/// How stage parameters are generated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleMode {
    /// `tau_q = 4^{-q}`, `N_q = tau_q^{-10}`, `eps_q = 2^{-4^q} kappa^{-36} N^{-72}`.
    Asymptotic,
    /// `tau_q = 4^{-q}`, `N_q = N_0 2^q`, `eps_q = kappa^{-2} 4^{-q}` unless overridden.
    Desk,
}

/// Parameters of one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub q: u32,
    pub tau: f64,
    pub log2_tau: f64,
    /// Shell radius when it is small enough to simulate.
    pub shell_radius: Option<u32>,
    pub log2_n: f64,
    pub log2_kappa: f64,
    pub log2_eps: f64,
}

impl Stage {
    pub fn kappa(&self) -> f64 {
        self.log2_kappa.exp2()
    }

    /// `eps_q`; underflows to zero at asymptotic scale.
    pub fn eps(&self) -> f64 {
        self.log2_eps.exp2()
    }

    /// Start of the stage, `1 - tau_q`.
    pub fn start(&self) -> f64 {
        1.0 - self.tau
    }
}

/// Schedule parameters and stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSchedule {
    pub mode: ScheduleMode,
    pub dim: Dim,
    pub beta: f64,
    pub delta: f64,
    /// Small exponent in the first parameter condition.
    pub eps_hat: f64,
    pub nu_list: Vec<f64>,
    pub stages: Vec<Stage>,
}

/// Options for [`build_schedule`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSpec {
    pub mode: ScheduleMode,
    pub dim: u8,
    /// Number of stages, `q = 0 .. stages - 1`.
    pub stages: u32,
    pub beta: f64,
    pub delta: f64,
    pub eps_hat: f64,
    pub nu: Vec<f64>,
    /// Desk base radius `N_0`.
    pub n0: u32,
    /// Desk override of `eps_q` per stage.
    pub eps: Option<Vec<f64>>,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec {
            mode: ScheduleMode::Desk,
            dim: 2,
            stages: 3,
            beta: 12.0 / 5.0,
            delta: 4.0 / 5.0,
            eps_hat: 0.01,
            nu: vec![1e-2, 1e-3, 1e-4],
            n0: 4,
            eps: None,
        }
    }
}

impl ScheduleSpec {
    pub fn asymptotic(stages: u32, nu: f64) -> ScheduleSpec {
        ScheduleSpec {
            mode: ScheduleMode::Asymptotic,
            dim: 3,
            stages,
            nu: vec![nu],
            ..ScheduleSpec::default()
        }
    }
}

/// Shell radii up to this value are counted exactly.
const EXACT_COUNT_LIMIT: f64 = 96.0;

/// `log2` of the shell cardinality for a radius given by its logarithm.
/// Small shells are enumerated; large ones use the volume of the annulus.
pub fn log2_shell_cardinality(log2_n: f64, dim: Dim) -> f64 {
    let n = log2_n.exp2();
    if n <= EXACT_COUNT_LIMIT && (n - n.round()).abs() < 1e-9 {
        return (shell_vectors(n.round() as u32, dim).len() as f64).log2();
    }
    match dim {
        Dim::Two => (3.0 * std::f64::consts::PI).log2() + 2.0 * log2_n,
        Dim::Three => (28.0 * std::f64::consts::PI / 3.0).log2() + 3.0 * log2_n,
    }
}

/// Generate the stages of a schedule.
pub fn build_schedule(spec: &ScheduleSpec) -> Result<ParameterSchedule> {
    let dim = Dim::from_usize(spec.dim as usize)?;
    if spec.stages == 0 {
        return Err(invalid("a schedule needs at least one stage"));
    }
    if !(spec.delta > 0.0 && spec.delta < 1.0) || !(spec.beta > 1.5) {
        return Err(invalid("need 0 < delta < 1 and beta > 3/2"));
    }
    if !(spec.eps_hat > 0.0) {
        return Err(invalid("eps_hat must be positive"));
    }
    if spec.nu.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(invalid("viscosities must be finite and non-negative"));
    }
    if let Some(e) = &spec.eps {
        if e.len() < spec.stages as usize || e.iter().any(|&x| !(x > 0.0)) {
            return Err(invalid("eps override needs one positive value per stage"));
        }
    }
    let mut stages = Vec::with_capacity(spec.stages as usize);
    for q in 0..spec.stages {
        let log2_tau = -2.0 * q as f64;
        let (log2_n, radius) = match spec.mode {
            ScheduleMode::Asymptotic => {
                let l = 20.0 * q as f64;
                (
                    l,
                    if l <= 10.0 {
                        Some(l.exp2() as u32)
                    } else {
                        None
                    },
                )
            }
            ScheduleMode::Desk => {
                if spec.n0 == 0 {
                    return Err(invalid("desk base radius must be positive"));
                }
                let n = spec.n0 as u64 * (1u64 << q);
                if n > u32::MAX as u64 {
                    return Err(invalid("desk shell radius overflows"));
                }
                ((n as f64).log2(), Some(n as u32))
            }
        };
        let log2_kappa = log2_shell_cardinality(log2_n, dim);
        let log2_eps = match (spec.mode, &spec.eps) {
            (ScheduleMode::Asymptotic, _) => {
                -(4f64.powi(q as i32)) - 36.0 * log2_kappa - 72.0 * log2_n
            }
            (ScheduleMode::Desk, Some(e)) => e[q as usize].log2(),
            (ScheduleMode::Desk, None) => -2.0 * log2_kappa - 2.0 * q as f64,
        };
        stages.push(Stage {
            q,
            tau: log2_tau.exp2(),
            log2_tau,
            shell_radius: radius,
            log2_n,
            log2_kappa,
            log2_eps,
        });
    }
    Ok(ParameterSchedule {
        mode: spec.mode,
        dim,
        beta: spec.beta,
        delta: spec.delta,
        eps_hat: spec.eps_hat,
        nu_list: spec.nu.clone(),
        stages,
    })
}

/// Outcome of one condition at one stage and viscosity.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub q: u32,
    pub nu: f64,
    pub condition: String,
    /// `log2` of the side that must be smaller.
    pub log2_lhs: f64,
    /// `log2` of the side that must be larger.
    pub log2_rhs: f64,
    /// `log2_rhs - log2_lhs`; non-negative means the condition holds.
    pub margin: f64,
    pub pass: bool,
}

/// Condition table produced by [`validate_schedule`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationReport {
    pub mode: ScheduleMode,
    pub q_max: u32,
    pub structural: Vec<ConditionCheck>,
    pub checks: Vec<ConditionCheck>,
    pub all_pass: bool,
}

impl ValidationReport {
    /// Checks for one named condition.
    pub fn condition<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a ConditionCheck> + 'a {
        self.checks.iter().filter(move |c| c.condition == name)
    }
}

/// Names of the stage conditions, in evaluation order.
pub const CONDITIONS: [&str; 6] = [
    "time-scale: (nu+kappa)^(1+delta) tau^2 >= 1",
    "low-mode: kappa^(2 eps_hat) N^(-2 delta) <= (nu+kappa)^(-(1-delta))",
    "eps-ladder: eps_{q-1}^(-1) kappa_{q-1}^(1/2) <= eps_q^(-1/2)",
    "eps-size: eps kappa^24 N^72 <= 1",
    "remainder: eps kappa^3 N^30 <= 1",
    "window: (nu+kappa)^(-delta) <= tau",
];

fn log2_sum(nu: f64, log2_kappa: f64) -> f64 {
    log2_kappa + (nu * (-log2_kappa).exp2()).ln_1p() / std::f64::consts::LN_2
}

fn check(q: u32, nu: f64, name: &str, lhs: f64, rhs: f64) -> ConditionCheck {
    let margin = rhs - lhs;
    ConditionCheck {
        q,
        nu,
        condition: name.to_string(),
        log2_lhs: lhs,
        log2_rhs: rhs,
        margin,
        pass: margin >= -1e-9 * lhs.abs().max(rhs.abs()).max(1.0),
    }
}

/// Evaluate the structural invariants and every stage condition for
/// `1 <= q <= q_max` and each viscosity.
pub fn validate_schedule(s: &ParameterSchedule, q_max: u32) -> Result<ValidationReport> {
    if q_max < 1 {
        return Err(invalid("q_max must be at least 1"));
    }
    if s.stages.len() <= q_max as usize {
        return Err(Error::Schedule(format!(
            "schedule has {} stages, needs q_max + 1 = {}",
            s.stages.len(),
            q_max + 1
        )));
    }
    if s.nu_list.is_empty() {
        return Err(Error::Schedule("no viscosity to validate against".into()));
    }
    for (i, st) in s.stages.iter().enumerate() {
        if st.q as usize != i
            || !st.log2_tau.is_finite()
            || !st.log2_kappa.is_finite()
            || !st.log2_eps.is_finite()
        {
            return Err(Error::Schedule(format!("malformed stage at position {i}")));
        }
    }
    let mut structural = Vec::new();
    structural.push(check(0, 0.0, "tau_0 = 1", s.stages[0].log2_tau.abs(), 0.0));
    for w in s.stages.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        structural.push(check(
            b.q,
            0.0,
            "tau strictly decreasing",
            b.log2_tau,
            a.log2_tau - 1e-12,
        ));
        // tau_q - 2 tau_{q+1} >= tau_q / 2  <=>  tau_{q+1} <= tau_q / 4
        structural.push(check(
            b.q,
            0.0,
            "tau_q - 2 tau_{q+1} >= tau_q / 2",
            b.log2_tau,
            a.log2_tau - 2.0,
        ));
        structural.push(check(b.q, 0.0, "N increasing", a.log2_n, b.log2_n));
    }
    let d = s.delta;
    let mut checks = Vec::new();
    for q in 1..=q_max {
        let st = &s.stages[q as usize];
        let prev = &s.stages[q as usize - 1];
        for &nu in &s.nu_list {
            let lnk = log2_sum(nu, st.log2_kappa);
            checks.push(check(
                q,
                nu,
                CONDITIONS[0],
                0.0,
                (1.0 + d) * lnk + 2.0 * st.log2_tau,
            ));
            checks.push(check(
                q,
                nu,
                CONDITIONS[1],
                2.0 * s.eps_hat * st.log2_kappa - 2.0 * d * st.log2_n,
                -(1.0 - d) * lnk,
            ));
            checks.push(check(
                q,
                nu,
                CONDITIONS[2],
                -prev.log2_eps + 0.5 * prev.log2_kappa,
                -0.5 * st.log2_eps,
            ));
            checks.push(check(
                q,
                nu,
                CONDITIONS[3],
                st.log2_eps + 24.0 * st.log2_kappa + 72.0 * st.log2_n,
                0.0,
            ));
            checks.push(check(
                q,
                nu,
                CONDITIONS[4],
                st.log2_eps + 3.0 * st.log2_kappa + 30.0 * st.log2_n,
                0.0,
            ));
            checks.push(check(q, nu, CONDITIONS[5], -d * lnk, st.log2_tau));
        }
    }
    let all_pass = structural.iter().chain(&checks).all(|c| c.pass);
    Ok(ValidationReport {
        mode: s.mode,
        q_max,
        structural,
        checks,
        all_pass,
    })
}
