//! Reproducible experiments: configuration, trajectories, ensembles,
//! sweeps, manifests and summaries.
//!
//! A configuration is a TOML document deserialized into
//! [`ExperimentConfig`]. [`run_experiment`] is pure: it returns the files
//! to write together with a JSON summary, and [`write_outputs`] stores them
//! next to a manifest carrying SHA-256 hashes of the configuration and of
//! every file.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::corrector::{
    apply_corrector_exact, limit_constant, shell_average_component, shell_average_limit,
    shifted_shell_average, ModalField,
};
use crate::error::{invalid, Error, Result};
use crate::lattice::{build_shell, Dim, NoiseBasis, WaveVector};
use crate::noise::{mix, NoiseKey};
use crate::schedule::{
    build_schedule, validate_schedule, ParameterSchedule, ScheduleMode, ScheduleSpec,
};
use crate::solver::{
    nse_step, scalar_step, AdvectedState, Advection, EnergyLedger, TransportScheme,
};
use crate::spectral::{Grid, Rank, SpectralField};
use crate::velocity::{VelocityKind, VelocityState, VelocityStepper};

/// Named experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    CorrectorConstants,
    TransportDissipation,
    OuHomogenization,
    NseDissipation,
    Hm1Scaling,
    ScheduleCheck,
}

/// Run configuration. Every key is optional except `experiment`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub paths: u32,
    /// Mode cutoff `K`; zero picks twice the largest shell radius.
    pub grid: u32,
    pub steps_per_stage: u32,
    pub model: VelocityKind,
    pub rank: Rank,
    pub scheme: TransportScheme,
    /// Initial data lives on `1 <= |k| <= initial_cutoff`, normalized in `L^2`.
    pub initial_cutoff: f64,
    /// Cutoff `L` of the low-mode projection; default `max(1, N_q^{1-delta})`.
    pub low_cutoff: Option<f64>,
    /// Length of the window for single-window experiments.
    pub horizon: f64,
    /// Shell radii for `hm1-scaling` and `corrector-constants`.
    pub shells: Vec<u32>,
    /// Correlation times for `ou-homogenization`.
    pub eps_sweep: Vec<f64>,
    /// Shared Brownian cell for common random numbers across step sizes.
    pub fine_dt: Option<f64>,
    /// Steps of the white-noise reference in `ou-homogenization`.
    pub reference_steps: u32,
    pub q_max: u32,
    /// Largest grid (points) a run may allocate.
    pub max_grid_points: usize,
    pub schedule: ScheduleSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: ExperimentKind::TransportDissipation,
            seed: 1,
            paths: 4,
            grid: 0,
            steps_per_stage: 64,
            model: VelocityKind::Transport,
            rank: Rank::Scalar,
            scheme: TransportScheme::Exponential,
            initial_cutoff: 2.0,
            low_cutoff: None,
            horizon: 0.1,
            shells: vec![4, 8, 16, 32],
            eps_sweep: vec![1e-2, 1e-3, 1e-4],
            fine_dt: None,
            reference_steps: 0,
            q_max: 5,
            max_grid_points: 1 << 22,
            schedule: ScheduleSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        )
    }

    fn dim(&self) -> Result<Dim> {
        Dim::from_usize(self.schedule.dim as usize)
    }

    fn grid_for(&self, max_radius: u32) -> Result<Arc<Grid>> {
        let dim = self.dim()?;
        let cutoff = if self.grid == 0 {
            (2 * max_radius).max(4)
        } else {
            self.grid
        };
        if cutoff < 2 * max_radius {
            return Err(Error::Resolution(format!(
                "cutoff {cutoff} cannot hold a shell of radius {max_radius}"
            )));
        }
        let n = crate::spectral::smooth_size(3 * cutoff as usize + 1);
        let points = n.pow(dim.get() as u32);
        if points > self.max_grid_points {
            return Err(invalid(format!(
                "grid of {points} points exceeds the limit of {}",
                self.max_grid_points
            )));
        }
        Grid::with_cutoff(dim, cutoff)
    }

    fn initial_field(&self, grid: &Arc<Grid>) -> Result<SpectralField> {
        SpectralField::random_low_modes(
            grid,
            self.rank,
            self.initial_cutoff,
            mix(&[self.seed, 0x1417]),
        )
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    d.iter().map(|b| format!("{b:02x}")).collect()
}

/// Seed of path `p` under the run seed.
pub fn path_seed(seed: u64, p: u32) -> u64 {
    mix(&[seed, p as u64])
}

/// A stretch of constant step size and stage parameters.
#[derive(Clone, Debug)]
pub struct Segment {
    pub stage: u32,
    pub t0: f64,
    pub t1: f64,
    pub steps: u64,
    pub basis: Arc<NoiseBasis>,
    pub eps: f64,
    pub low_cutoff: f64,
}

/// Everything needed to integrate one trajectory.
#[derive(Clone, Debug)]
pub struct TrajectorySpec {
    pub grid: Arc<Grid>,
    pub model: VelocityKind,
    pub scheme: TransportScheme,
    pub nu: f64,
    pub seed: u64,
    pub segments: Vec<Segment>,
    /// Shared Brownian cell; each segment uses its own step when absent.
    pub fine_dt: Option<f64>,
    /// Track `sup ||v||_{H^{-s}}` per stage for this `s`.
    pub velocity_norm_exponent: Option<f64>,
}

/// Result of [`run_trajectory`].
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub ledger: EnergyLedger,
    pub field: SpectralField,
    pub velocity: VelocityState,
    /// `sup ||v||_{H^{-s}}` per stage, when requested.
    pub velocity_sup: BTreeMap<u32, f64>,
    pub expm_terms: u64,
}

/// Integrate one trajectory over its segments, sampling the ledger after
/// every step.
pub fn run_trajectory(spec: &TrajectorySpec, initial: &SpectralField) -> Result<Trajectory> {
    let first = spec
        .segments
        .first()
        .ok_or_else(|| invalid("trajectory has no segments"))?;
    let mut state = AdvectedState::new(initial.clone(), spec.nu)?;
    state.time = first.t0;
    let mut vel = VelocityState::new(spec.model, &spec.grid, first.eps, first.stage, first.t0)?;
    let mut ledger = EnergyLedger::default();
    ledger.record(&state, first.stage, first.low_cutoff);
    let mut velocity_sup = BTreeMap::new();
    let mut terms = 0u64;
    for (si, seg) in spec.segments.iter().enumerate() {
        if seg.steps == 0 || !(seg.t1 > seg.t0) {
            return Err(invalid(format!("segment {si} is empty")));
        }
        if si > 0 {
            vel.time = seg.t0;
            if seg.stage != vel.stage {
                vel.stage_transition(seg.stage, seg.t0, seg.eps)?;
            }
        }
        let dt = (seg.t1 - seg.t0) / seg.steps as f64;
        let fine = spec.fine_dt.unwrap_or(dt);
        let mut stepper = VelocityStepper::new(
            &vel,
            seg.basis.clone(),
            &spec.grid,
            NoiseKey::new(spec.seed, si as u32),
            fine,
            dt,
        )?;
        let corrector = match (spec.model, spec.scheme) {
            (VelocityKind::Transport, TransportScheme::ItoCorrector) => Some(
                crate::corrector::GridCorrector::new(&seg.basis, &spec.grid, initial.rank())?,
            ),
            _ => None,
        };
        for n in 0..seg.steps {
            let step = stepper.advance(&mut vel)?;
            let report = if let Some(c) = &corrector {
                let inc = step.increment.to_physical();
                advance(
                    &mut state,
                    &Advection::Ito {
                        increment: &inc,
                        corrector: c,
                    },
                    dt,
                )?
            } else {
                let disp = step.displacement.to_physical();
                advance(&mut state, &Advection::Displacement(&disp), dt)?
            };
            terms += report.expm.terms as u64;
            state.time = seg.t0 + (n + 1) as f64 * dt;
            ledger.record(&state, seg.stage, seg.low_cutoff);
            if let Some(s) = spec.velocity_norm_exponent {
                let v = vel.v.sobolev_norm(-s);
                let e = velocity_sup.entry(seg.stage).or_insert(0.0f64);
                *e = e.max(v);
            }
        }
    }
    Ok(Trajectory {
        ledger,
        field: state.field,
        velocity: vel,
        velocity_sup,
        expm_terms: terms,
    })
}

fn advance(
    state: &mut AdvectedState,
    adv: &Advection<'_>,
    dt: f64,
) -> Result<crate::solver::StepReport> {
    match state.field.rank() {
        Rank::Scalar => scalar_step(state, adv, dt),
        Rank::Vector => nse_step(state, adv, dt),
    }
}

/// Minimum number of steps per correlation time: the OU kernels are exact,
/// the explicit nonlinearity of the NSE velocity needs `dt max|v|^2 <= 1`
/// with `max|v|^2` of order `kappa / eps`.
pub fn steps_per_eps(model: VelocityKind) -> Option<f64> {
    match model {
        VelocityKind::Transport => None,
        VelocityKind::Ou => Some(10.0),
        VelocityKind::Nse => Some(50.0),
    }
}

/// Segments of a desk schedule: each stage is split at its midpoint
/// `1 - tau_q / 2` so that the observation window starts on a step.
pub fn schedule_segments(
    schedule: &ParameterSchedule,
    steps_per_stage: u32,
    model: VelocityKind,
    low_cutoff: Option<f64>,
) -> Result<Vec<Segment>> {
    if schedule.mode != ScheduleMode::Desk {
        return Err(invalid("only desk schedules can be simulated"));
    }
    let half = (steps_per_stage / 2).max(1) as u64;
    let mut out = Vec::new();
    let q_count = schedule.stages.len();
    for (i, st) in schedule.stages.iter().enumerate() {
        let radius = st
            .shell_radius
            .ok_or_else(|| invalid("desk stage lacks a shell radius"))?;
        let basis = Arc::new(build_shell(radius, schedule.dim)?);
        let next_tau = if i + 1 < q_count {
            schedule.stages[i + 1].tau
        } else {
            st.tau / 4.0
        };
        let eps = st.eps();
        let low = low_cutoff
            .unwrap_or_else(|| (radius as f64).powf(1.0 - schedule.delta).floor().max(1.0));
        let bounds = [
            (st.start(), 1.0 - st.tau / 2.0),
            (1.0 - st.tau / 2.0, 1.0 - next_tau),
        ];
        for (t0, t1) in bounds {
            let mut steps = half;
            if let Some(r) = steps_per_eps(model) {
                steps = steps.max(((t1 - t0) * r / eps).ceil() as u64);
            }
            out.push(Segment {
                stage: st.q,
                t0,
                t1,
                steps,
                basis: basis.clone(),
                eps,
                low_cutoff: low,
            });
        }
    }
    Ok(out)
}

/// Run `f` for each path index, in parallel when the `parallel` feature
/// is enabled; results keep path order.
pub fn map_paths<T, F>(paths: u32, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u32) -> Result<T> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..paths).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..paths).map(f).collect()
    }
}

/// Per-stage dissipation diagnostics of one ledger.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageMetrics {
    pub q: u32,
    pub start_l2sq: f64,
    pub end_l2sq: f64,
    pub decay_factor: f64,
    /// `sup ||Pi_L f||_{H^{-1}}^2` over `[1 - tau_q/2, 1 - tau_{q+1}]`.
    pub window_sup_low_hm1sq: f64,
    /// Measured `c_hat_q = window sup / M^2` with `M^2` the stage-start energy.
    pub c_hat: f64,
    pub c_q: f64,
    /// `2 M^2 c_q / (nu tau_q)`, infinite when `nu = 0`.
    pub predicted_bound: f64,
    /// `(nu tau_q / (M^2 c_q))^{1-delta}` times the stage-end energy.
    pub rate_metric: f64,
}

/// Dissipation diagnostics of a ledger.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DissipationReport {
    pub initial_l2sq: f64,
    pub final_l2sq: f64,
    pub dissipated_fraction: f64,
    pub dissipation_integral: f64,
    pub energy_defect: f64,
    pub interpolation_defect: f64,
    pub stages: Vec<StageMetrics>,
}

/// Per-stage decay factors, windowed low-mode suprema and the derived
/// bounds for a ledger produced on `schedule`.
pub fn dissipation_metrics(
    ledger: &EnergyLedger,
    schedule: &ParameterSchedule,
    nu: f64,
) -> Result<DissipationReport> {
    let first = ledger.rows.first().ok_or_else(|| invalid("empty ledger"))?;
    let last = ledger.rows.last().expect("non-empty");
    let mut stages = Vec::new();
    for (i, st) in schedule.stages.iter().enumerate() {
        let rows: Vec<_> = ledger.rows.iter().filter(|r| r.stage == st.q).collect();
        if rows.is_empty() {
            continue;
        }
        let next_tau = schedule.stages.get(i + 1).map_or(st.tau / 4.0, |s| s.tau);
        let lo = 1.0 - st.tau / 2.0 - 1e-12;
        let hi = 1.0 - next_tau + 1e-12;
        let start = ledger
            .rows
            .iter()
            .rev()
            .find(|r| r.t <= st.start() + 1e-12)
            .map_or(rows[0].l2sq, |r| r.l2sq);
        let end = rows.last().expect("non-empty").l2sq;
        let sup = rows
            .iter()
            .filter(|r| r.t >= lo && r.t <= hi)
            .map(|r| r.low_hm1sq)
            .fold(0.0, f64::max);
        let m2 = start.max(f64::MIN_POSITIVE);
        let c_hat = sup / m2;
        let n = st.log2_n.exp2();
        let c_q = c_hat + n.powf(2.0 * (schedule.delta - 1.0));
        let predicted = if nu > 0.0 {
            2.0 * m2 * c_q / (nu * st.tau)
        } else {
            f64::INFINITY
        };
        let rate = (nu * st.tau / (m2 * c_q)).powf(1.0 - schedule.delta) * end;
        stages.push(StageMetrics {
            q: st.q,
            start_l2sq: start,
            end_l2sq: end,
            decay_factor: if start > 0.0 { end / start } else { 0.0 },
            window_sup_low_hm1sq: sup,
            c_hat,
            c_q,
            predicted_bound: predicted,
            rate_metric: rate,
        });
    }
    Ok(DissipationReport {
        initial_l2sq: first.l2sq,
        final_l2sq: last.l2sq,
        dissipated_fraction: if first.l2sq > 0.0 {
            1.0 - last.l2sq / first.l2sq
        } else {
            0.0
        },
        dissipation_integral: last.diss_int - first.diss_int,
        energy_defect: ledger.energy_defect().unwrap_or(0.0),
        interpolation_defect: ledger.interpolation_defect(),
        stages,
    })
}

/// Headline numbers used by sweeps.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Headline {
    /// Ensemble-mean terminal `||f||^2`.
    pub terminal_energy: f64,
    /// Ensemble-mean windowed `sup ||Pi_L f||_{H^{-1}}^2`.
    pub hm1_sup: f64,
    /// Abscissa of the sweep axis actually used (`nu`, `kappa` or `eps`).
    pub axis_value: Option<f64>,
}

/// In-memory result of an experiment.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub files: Vec<(String, Vec<u8>)>,
    pub summary: Value,
    pub headline: Option<Headline>,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn std_err(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (v / xs.len() as f64).sqrt()
}

fn ledger_bytes(ledger: &EnergyLedger) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    ledger.write_csv(&mut buf)?;
    Ok(buf)
}

/// Execute the configured experiment.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    if config.paths == 0
        && !matches!(
            config.experiment,
            ExperimentKind::CorrectorConstants | ExperimentKind::ScheduleCheck
        )
    {
        return Err(invalid("at least one path is required"));
    }
    match config.experiment {
        ExperimentKind::CorrectorConstants => corrector_constants(config),
        ExperimentKind::TransportDissipation | ExperimentKind::NseDissipation => {
            schedule_dissipation(config)
        }
        ExperimentKind::OuHomogenization => ou_homogenization(config),
        ExperimentKind::Hm1Scaling => hm1_scaling(config),
        ExperimentKind::ScheduleCheck => schedule_check(config),
    }
}

/// Constants of the corrector: scalar exactness, shell-average
/// convergence and two-dimensional values.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConstantsTable {
    /// `(N, max relative error of S(rho) against (2/3) kappa Laplacian)`.
    pub scalar_exactness_3d: Vec<(u32, f64)>,
    pub shell_average_3d: Vec<ShellAverageRow>,
    pub limit_3d: f64,
    pub scalar_constant_2d: Vec<(u32, f64)>,
    pub shell_average_2d: Vec<ShellAverageRow>,
    pub shell_limit_2d: f64,
    pub vector_limit_2d: f64,
}

/// Shell average over all low modes `1 <= |l| <= 2` and polarizations.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShellAverageRow {
    pub n: u32,
    pub kappa: usize,
    pub mean: f64,
    pub max_abs_error: f64,
    pub shifted_mean: f64,
}

/// Shell average statistics over `1 <= |l| <= 2`.
pub fn shell_average_row(basis: &NoiseBasis) -> Result<ShellAverageRow> {
    let dim = basis.dim();
    let limit = shell_average_limit(dim);
    let (mut sum, mut shifted, mut count, mut worst) = (0.0, 0.0, 0.0, 0.0f64);
    for l in low_modes(dim, 2.0) {
        for beta in 0..basis.polarizations() {
            let v = shell_average_component(basis, l, beta)?;
            sum += v;
            shifted += shifted_shell_average(basis, l, beta)?;
            count += 1.0;
            worst = worst.max((v - limit).abs());
        }
    }
    Ok(ShellAverageRow {
        n: basis.radius(),
        kappa: basis.kappa(),
        mean: sum / count,
        max_abs_error: worst,
        shifted_mean: shifted / count,
    })
}

/// Nonzero lattice vectors with `|l| <= r`.
pub fn low_modes(dim: Dim, r: f64) -> Vec<WaveVector> {
    let m = r.floor() as i32;
    let zr = if dim == Dim::Three { m } else { 0 };
    let mut out = Vec::new();
    for a in -m..=m {
        for b in -m..=m {
            for c in -zr..=zr {
                let k = WaveVector([a, b, c]);
                if !k.is_zero() && k.norm() <= r + 1e-12 {
                    out.push(k);
                }
            }
        }
    }
    out
}

/// Largest relative deviation of `S(rho)` from `c_d kappa Laplacian(rho)`
/// over the modes `1 <= |l| <= r`.
pub fn scalar_exactness(basis: &NoiseBasis, r: f64) -> Result<f64> {
    let dim = basis.dim();
    let mut u = ModalField::new(dim, Rank::Scalar);
    for (i, l) in low_modes(dim, r).into_iter().enumerate() {
        let z = num_complex::Complex64::new(1.0 + i as f64, 0.5 - i as f64);
        u.add(
            l,
            [
                z,
                num_complex::Complex64::new(0.0, 0.0),
                num_complex::Complex64::new(0.0, 0.0),
            ],
        );
    }
    let s = apply_corrector_exact(&u, basis)?;
    let c = dim.scalar_constant() * basis.kappa() as f64;
    let want = u.map_modes(|k2| -c * k2);
    let mut worst: f64 = 0.0;
    for (k, v) in &want.coeffs {
        let got = s.coeffs[k][0];
        worst = worst.max((got - v[0]).norm() / v[0].norm());
    }
    Ok(worst)
}

fn corrector_constants(config: &ExperimentConfig) -> Result<RunOutput> {
    let mut table = ConstantsTable {
        scalar_exactness_3d: Vec::new(),
        shell_average_3d: Vec::new(),
        limit_3d: shell_average_limit(Dim::Three),
        scalar_constant_2d: Vec::new(),
        shell_average_2d: Vec::new(),
        shell_limit_2d: shell_average_limit(Dim::Two),
        vector_limit_2d: limit_constant(Dim::Two),
    };
    for n in [1u32, 2] {
        let b = build_shell(n, Dim::Three)?;
        table
            .scalar_exactness_3d
            .push((n, scalar_exactness(&b, 2.0)?));
        let b2 = build_shell(n, Dim::Two)?;
        let mut u = ModalField::new(Dim::Two, Rank::Scalar);
        u.add(
            WaveVector::new2(1, 0),
            [num_complex::Complex64::new(1.0, 0.0); 3],
        );
        let s = apply_corrector_exact(&u, &b2)?;
        let c = -s.coeffs[&WaveVector::new2(1, 0)][0].re
            / (4.0 * std::f64::consts::PI.powi(2) * b2.kappa() as f64);
        table.scalar_constant_2d.push((n, c));
    }
    for &n in &config.shells {
        table
            .shell_average_3d
            .push(shell_average_row(&build_shell(n, Dim::Three)?)?);
        table
            .shell_average_2d
            .push(shell_average_row(&build_shell(n, Dim::Two)?)?);
    }
    let summary = json!({
        "experiment": "corrector-constants",
        "scalar_constant_3d": Dim::Three.scalar_constant(),
        "vector_limit_3d": limit_constant(Dim::Three),
        "table": table,
    });
    Ok(RunOutput {
        files: Vec::new(),
        summary,
        headline: None,
    })
}

fn schedule_check(config: &ExperimentConfig) -> Result<RunOutput> {
    let spec = ScheduleSpec {
        stages: config.schedule.stages.max(config.q_max + 1),
        ..config.schedule.clone()
    };
    let schedule = build_schedule(&spec)?;
    let report = validate_schedule(&schedule, config.q_max)?;
    let summary = json!({
        "experiment": "schedule-check",
        "schedule": schedule,
        "validation": report,
    });
    Ok(RunOutput {
        files: Vec::new(),
        summary,
        headline: None,
    })
}

fn schedule_dissipation(config: &ExperimentConfig) -> Result<RunOutput> {
    let mut spec = config.schedule.clone();
    if spec.mode != ScheduleMode::Desk {
        return Err(invalid("dissipation runs need a desk schedule"));
    }
    let model = match config.experiment {
        ExperimentKind::NseDissipation => VelocityKind::Nse,
        _ => config.model,
    };
    if spec.nu.is_empty() {
        return Err(invalid("no viscosity given"));
    }
    spec.stages = spec.stages.max(1);
    let schedule = build_schedule(&spec)?;
    let max_radius = schedule
        .stages
        .iter()
        .filter_map(|s| s.shell_radius)
        .max()
        .unwrap_or(1);
    let grid = config.grid_for(max_radius)?;
    let segments = schedule_segments(&schedule, config.steps_per_stage, model, config.low_cutoff)?;
    let initial = config.initial_field(&grid)?;
    let mut files = Vec::new();
    let mut per_nu = Vec::new();
    let mut fractions_by_nu = Vec::new();
    let mut terminal_all = Vec::new();
    let mut sup_all = Vec::new();
    for (ni, &nu) in spec.nu.iter().enumerate() {
        let results = map_paths(config.paths, |p| {
            let tspec = TrajectorySpec {
                grid: grid.clone(),
                model,
                scheme: config.scheme,
                nu,
                seed: path_seed(config.seed, p),
                segments: segments.clone(),
                fine_dt: None,
                velocity_norm_exponent: (model == VelocityKind::Ou).then_some(spec.eps_hat),
            };
            let traj = run_trajectory(&tspec, &initial)?;
            let metrics = dissipation_metrics(&traj.ledger, &schedule, nu)?;
            Ok((traj.ledger, metrics, traj.velocity_sup))
        })?;
        let mut fractions = Vec::new();
        let mut stage_decay: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        let mut stage_sup: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        for (p, (ledger, metrics, _)) in results.iter().enumerate() {
            files.push((format!("ledger_nu{ni}_path{p}.csv"), ledger_bytes(ledger)?));
            fractions.push(metrics.dissipated_fraction);
            terminal_all.push(metrics.final_l2sq);
            for s in &metrics.stages {
                stage_decay.entry(s.q).or_default().push(s.decay_factor);
                stage_sup
                    .entry(s.q)
                    .or_default()
                    .push(s.window_sup_low_hm1sq);
            }
            sup_all.push(
                metrics
                    .stages
                    .iter()
                    .map(|s| s.window_sup_low_hm1sq)
                    .fold(0.0, f64::max),
            );
        }
        let velocity_sup: Vec<Value> = results
            .iter()
            .map(|(_, _, v)| {
                json!(v
                    .iter()
                    .map(|(q, x)| json!({"q": q, "sup_hneg": x}))
                    .collect::<Vec<_>>())
            })
            .collect();
        fractions_by_nu.push(mean(&fractions));
        per_nu.push(json!({
            "nu": nu,
            "dissipated_fraction_mean": mean(&fractions),
            "dissipated_fraction_stderr": std_err(&fractions),
            "dissipated_fraction_paths": fractions,
            "stage_decay_mean": stage_decay.iter().map(|(q, v)| json!({"q": q, "decay": mean(v)})).collect::<Vec<_>>(),
            "stage_window_sup_mean": stage_sup.iter().map(|(q, v)| json!({"q": q, "sup_low_hm1sq": mean(v)})).collect::<Vec<_>>(),
            "metrics": results.iter().map(|(_, m, _)| m).collect::<Vec<_>>(),
            "velocity_sup_hneg": velocity_sup,
        }));
    }
    let spread = fractions_by_nu
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
        - fractions_by_nu
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
    let summary = json!({
        "experiment": match config.experiment { ExperimentKind::NseDissipation => "nse-dissipation", _ => "transport-dissipation" },
        "model": model,
        "grid_points": grid.n(),
        "cutoff": grid.cutoff(),
        "stages": schedule.stages,
        "per_nu": per_nu,
        "dissipated_fraction_spread": spread,
    });
    let headline = Headline {
        terminal_energy: mean(&terminal_all),
        hm1_sup: mean(&sup_all),
        axis_value: Some(schedule.stages[0].kappa()),
    };
    Ok(RunOutput {
        files,
        summary,
        headline: Some(headline),
    })
}

/// Ensemble-mean terminal energies of transport noise and of OU
/// velocities with decreasing correlation time, all driven by the same
/// Brownian paths.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HomogenizationReport {
    pub reference_mean: f64,
    pub reference_paths: Vec<f64>,
    pub eps: Vec<f64>,
    pub ou_mean: Vec<f64>,
    pub gap: Vec<f64>,
    pub pathwise_rms_gap: Vec<f64>,
}

/// Single-window homogenization experiment on shell `basis`.
#[allow(clippy::too_many_arguments)]
pub fn homogenization(
    grid: &Arc<Grid>,
    basis: &Arc<NoiseBasis>,
    initial: &SpectralField,
    nu: f64,
    horizon: f64,
    eps_list: &[f64],
    fine_dt: f64,
    reference_steps: u64,
    seed: u64,
    paths: u32,
) -> Result<(HomogenizationReport, Vec<(String, Vec<u8>)>)> {
    let segment = |steps: u64, eps: f64| Segment {
        stage: 0,
        t0: 0.0,
        t1: horizon,
        steps,
        basis: basis.clone(),
        eps,
        low_cutoff: 1.0,
    };
    let cells = (horizon / fine_dt).round() as u64;
    if cells == 0 || ((cells as f64) * fine_dt - horizon).abs() > 1e-9 * horizon {
        return Err(invalid("horizon must be a multiple of the Brownian cell"));
    }
    let runs = map_paths(paths, |p| {
        let s = path_seed(seed, p);
        let mk = |model, steps, eps| TrajectorySpec {
            grid: grid.clone(),
            model,
            scheme: TransportScheme::Exponential,
            nu,
            seed: s,
            segments: vec![segment(steps, eps)],
            fine_dt: Some(fine_dt),
            velocity_norm_exponent: None,
        };
        let reference =
            run_trajectory(&mk(VelocityKind::Transport, reference_steps, 1.0), initial)?;
        let mut ou = Vec::new();
        for &eps in eps_list {
            let dt = (eps / 10.0).max(fine_dt);
            let steps = (horizon / dt).round().max(1.0) as u64;
            if cells % steps != 0 {
                return Err(invalid(format!(
                    "eps = {eps} gives a step that does not divide the Brownian grid"
                )));
            }
            ou.push(run_trajectory(&mk(VelocityKind::Ou, steps, eps), initial)?);
        }
        Ok((reference, ou))
    })?;
    let mut files = Vec::new();
    let reference_paths: Vec<f64> = runs.iter().map(|(r, _)| r.field.l2_sq()).collect();
    let mut ou_mean = Vec::new();
    let mut gap = Vec::new();
    let mut rms = Vec::new();
    let reference_mean = mean(&reference_paths);
    for (e, _) in eps_list.iter().enumerate() {
        let vals: Vec<f64> = runs.iter().map(|(_, o)| o[e].field.l2_sq()).collect();
        let m = mean(&vals);
        ou_mean.push(m);
        gap.push((m - reference_mean).abs());
        let sq: Vec<f64> = runs
            .iter()
            .map(|(r, o)| {
                let mut d = o[e].field.clone();
                d.axpy(-1.0, &r.field).expect("same grid");
                d.l2_sq()
            })
            .collect();
        rms.push(mean(&sq).sqrt());
    }
    for (p, (r, o)) in runs.iter().enumerate() {
        files.push((
            format!("ledger_reference_path{p}.csv"),
            ledger_bytes(&r.ledger)?,
        ));
        for (e, t) in o.iter().enumerate() {
            files.push((
                format!("ledger_eps{e}_path{p}.csv"),
                ledger_bytes(&t.ledger)?,
            ));
        }
    }
    Ok((
        HomogenizationReport {
            reference_mean,
            reference_paths,
            eps: eps_list.to_vec(),
            ou_mean,
            gap,
            pathwise_rms_gap: rms,
        },
        files,
    ))
}

fn ou_homogenization(config: &ExperimentConfig) -> Result<RunOutput> {
    let dim = config.dim()?;
    let radius = config.schedule.n0;
    let basis = Arc::new(build_shell(radius, dim)?);
    let grid = config.grid_for(radius)?;
    let initial = config.initial_field(&grid)?;
    let nu = *config
        .schedule
        .nu
        .first()
        .ok_or_else(|| invalid("no viscosity given"))?;
    if config.eps_sweep.is_empty() {
        return Err(invalid("eps_sweep is empty"));
    }
    let min_eps = config
        .eps_sweep
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let fine = config.fine_dt.unwrap_or(min_eps / 10.0);
    let reference_steps = if config.reference_steps == 0 {
        (config.horizon / fine).round() as u64
    } else {
        config.reference_steps as u64
    };
    let (report, files) = homogenization(
        &grid,
        &basis,
        &initial,
        nu,
        config.horizon,
        &config.eps_sweep,
        fine,
        reference_steps,
        config.seed,
        config.paths,
    )?;
    let monotone = report.gap.windows(2).all(|w| w[1] < w[0]);
    let headline = Headline {
        terminal_energy: mean(&report.ou_mean),
        hm1_sup: f64::NAN,
        axis_value: config.eps_sweep.first().copied(),
    };
    let summary = json!({
        "experiment": "ou-homogenization",
        "shell_radius": radius,
        "kappa": basis.kappa(),
        "nu": nu,
        "horizon": config.horizon,
        "fine_dt": fine,
        "report": report,
        "gap_monotone": monotone,
    });
    Ok(RunOutput {
        files,
        summary,
        headline: Some(headline),
    })
}

/// Terminal energy and windowed low-mode suprema for one shell.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: u32,
    pub kappa: usize,
    pub terminal_mean: f64,
    pub window_sup_mean: f64,
    pub terminal_paths: Vec<f64>,
    pub window_sup_paths: Vec<f64>,
}

/// Transport-noise runs on `[0, horizon]` for each shell radius; the
/// supremum is taken over `[horizon / 2, horizon]`.
#[allow(clippy::too_many_arguments)]
pub fn kappa_scaling(
    grid: &Arc<Grid>,
    radii: &[u32],
    initial: &SpectralField,
    nu: f64,
    horizon: f64,
    steps: u64,
    low_cutoff: f64,
    seed: u64,
    paths: u32,
) -> Result<(Vec<ScalingRow>, Vec<(String, Vec<u8>)>)> {
    let mut rows = Vec::new();
    let mut files = Vec::new();
    for &n in radii {
        let basis = Arc::new(build_shell(n, grid.dim())?);
        let half = (steps / 2).max(1);
        let segs = vec![
            Segment {
                stage: 0,
                t0: 0.0,
                t1: horizon / 2.0,
                steps: half,
                basis: basis.clone(),
                eps: 1.0,
                low_cutoff,
            },
            Segment {
                stage: 0,
                t0: horizon / 2.0,
                t1: horizon,
                steps: half,
                basis: basis.clone(),
                eps: 1.0,
                low_cutoff,
            },
        ];
        let results = map_paths(paths, |p| {
            let spec = TrajectorySpec {
                grid: grid.clone(),
                model: VelocityKind::Transport,
                scheme: TransportScheme::Exponential,
                nu,
                seed: path_seed(seed, p),
                segments: segs.clone(),
                fine_dt: None,
                velocity_norm_exponent: None,
            };
            run_trajectory(&spec, initial)
        })?;
        let terminal: Vec<f64> = results.iter().map(|t| t.field.l2_sq()).collect();
        let sup: Vec<f64> = results
            .iter()
            .map(|t| {
                t.ledger
                    .rows
                    .iter()
                    .filter(|r| r.t >= horizon / 2.0 - 1e-12)
                    .map(|r| r.low_hm1sq)
                    .fold(0.0, f64::max)
            })
            .collect();
        for (p, t) in results.iter().enumerate() {
            files.push((
                format!("ledger_shell{n}_path{p}.csv"),
                ledger_bytes(&t.ledger)?,
            ));
        }
        rows.push(ScalingRow {
            n,
            kappa: basis.kappa(),
            terminal_mean: mean(&terminal),
            window_sup_mean: mean(&sup),
            terminal_paths: terminal,
            window_sup_paths: sup,
        });
    }
    Ok((rows, files))
}

/// Least-squares slope of `ln y` against `ln x`; `None` with fewer than
/// two usable points.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0 && a.is_finite() && b.is_finite())
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

fn hm1_scaling(config: &ExperimentConfig) -> Result<RunOutput> {
    if config.shells.is_empty() {
        return Err(invalid("no shells given"));
    }
    let max_radius = *config.shells.iter().max().expect("non-empty");
    let grid = config.grid_for(max_radius)?;
    let initial = config.initial_field(&grid)?;
    let nu = *config
        .schedule
        .nu
        .first()
        .ok_or_else(|| invalid("no viscosity given"))?;
    let (rows, files) = kappa_scaling(
        &grid,
        &config.shells,
        &initial,
        nu,
        config.horizon,
        config.steps_per_stage as u64,
        config.low_cutoff.unwrap_or(1.0),
        config.seed,
        config.paths,
    )?;
    let kappas: Vec<f64> = rows.iter().map(|r| r.kappa as f64).collect();
    let terminal: Vec<f64> = rows.iter().map(|r| r.terminal_mean).collect();
    let sups: Vec<f64> = rows.iter().map(|r| r.window_sup_mean).collect();
    let summary = json!({
        "experiment": "hm1-scaling",
        "nu": nu,
        "horizon": config.horizon,
        "rows": rows,
        "terminal_slope": loglog_slope(&kappas, &terminal),
        "window_sup_slope": loglog_slope(&kappas, &sups),
    });
    let headline = Headline {
        terminal_energy: mean(&terminal),
        hm1_sup: mean(&sups),
        axis_value: kappas.first().copied(),
    };
    Ok(RunOutput {
        files,
        summary,
        headline: Some(headline),
    })
}

/// Sweep axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Nu,
    /// Values are shell radii; the reported abscissa is the cardinality.
    Kappa,
    Eps,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<SweepAxis> {
        match s {
            "nu" => Ok(SweepAxis::Nu),
            "kappa" => Ok(SweepAxis::Kappa),
            "eps" => Ok(SweepAxis::Eps),
            _ => Err(invalid(format!("unknown sweep axis `{s}`"))),
        }
    }
}

/// Apply one sweep value to a configuration.
pub fn with_axis_value(
    config: &ExperimentConfig,
    axis: SweepAxis,
    value: f64,
) -> Result<ExperimentConfig> {
    let mut c = config.clone();
    match axis {
        SweepAxis::Nu => c.schedule.nu = vec![value],
        SweepAxis::Kappa => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(invalid(format!(
                    "shell radius must be a positive integer, got {value}"
                )));
            }
            c.schedule.n0 = value as u32;
            c.shells = vec![value as u32];
        }
        SweepAxis::Eps => {
            c.eps_sweep = vec![value];
            c.schedule.eps = Some(vec![value; c.schedule.stages as usize]);
        }
    }
    Ok(c)
}

/// Output of [`sweep`].
#[derive(Clone, Debug)]
pub struct SweepOutput {
    pub runs: Vec<(f64, RunOutput)>,
    pub summary: Value,
}

/// Run the experiment once per axis value with the same seed and fit
/// log-log slopes of the headline numbers.
pub fn sweep(config: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<SweepOutput> {
    if values.is_empty() {
        return Err(invalid("sweep needs at least one value"));
    }
    let mut runs = Vec::new();
    let mut xs = Vec::new();
    let mut terminal = Vec::new();
    let mut sups = Vec::new();
    for &v in values {
        let c = with_axis_value(config, axis, v)?;
        let out = run_experiment(&c)?;
        let h = out
            .headline
            .clone()
            .ok_or_else(|| invalid("experiment has no sweepable headline"))?;
        xs.push(match axis {
            SweepAxis::Kappa => h.axis_value.unwrap_or(v),
            _ => v,
        });
        terminal.push(h.terminal_energy);
        sups.push(h.hm1_sup);
        runs.push((v, out));
    }
    let slope = |y: &[f64]| match loglog_slope(&xs, y) {
        Some(s) if values.len() >= 2 => json!(s),
        _ => json!("not-applicable"),
    };
    let summary = json!({
        "axis": axis,
        "values": values,
        "abscissa": xs,
        "terminal_energy": terminal,
        "hm1_sup": sups,
        "terminal_slope": slope(&terminal),
        "hm1_sup_slope": slope(&sups),
    });
    Ok(SweepOutput { runs, summary })
}

/// Entry of a manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Provenance record written next to the outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub experiment: ExperimentKind,
    pub config_sha256: String,
    pub seed: u64,
    pub path_seeds: Vec<u64>,
    pub files: Vec<ManifestFile>,
}

/// Write run files, `summary.json`, `config.toml` and `manifest.json`.
pub fn write_outputs(dir: &Path, config: &ExperimentConfig, out: &RunOutput) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let mut entries: Vec<(String, Vec<u8>)> = out.files.clone();
    entries.push((
        "summary.json".into(),
        serde_json::to_vec_pretty(&out.summary)?,
    ));
    entries.push(("config.toml".into(), config.to_toml()?.into_bytes()));
    let mut files = Vec::new();
    for (name, bytes) in &entries {
        std::fs::write(dir.join(name), bytes)?;
        files.push(ManifestFile {
            path: name.clone(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
    }
    let manifest = Manifest {
        tool: "shelldiss".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        experiment: config.experiment,
        config_sha256: config.hash(),
        seed: config.seed,
        path_seeds: (0..config.paths)
            .map(|p| path_seed(config.seed, p))
            .collect(),
        files,
    };
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

/// Re-read an output directory, verify hashes and recompute ledger
/// statistics.
pub fn report_directory(dir: &Path) -> Result<Value> {
    let manifest: Manifest = serde_json::from_slice(&std::fs::read(dir.join("manifest.json"))?)?;
    let mut ledgers = Vec::new();
    for f in &manifest.files {
        let bytes = std::fs::read(dir.join(&f.path))?;
        if sha256_hex(&bytes) != f.sha256 {
            return Err(Error::Format(format!("hash mismatch for {}", f.path)));
        }
        if f.path.ends_with(".csv") {
            let ledger = EnergyLedger::read_csv(bytes.as_slice())?;
            let first = ledger.rows.first().map_or(0.0, |r| r.l2sq);
            let last = ledger.rows.last().map_or(0.0, |r| r.l2sq);
            ledgers.push(json!({
                "file": f.path,
                "samples": ledger.rows.len(),
                "initial_l2sq": first,
                "final_l2sq": last,
                "dissipated_fraction": if first > 0.0 { 1.0 - last / first } else { 0.0 },
                "energy_defect": ledger.energy_defect(),
                "interpolation_defect": ledger.interpolation_defect(),
            }));
        }
    }
    let config_text = std::fs::read_to_string(dir.join("config.toml"))?;
    let config = ExperimentConfig::from_toml(&config_text)?;
    if config.hash() != manifest.config_sha256 {
        return Err(Error::Format("configuration hash mismatch".into()));
    }
    Ok(json!({
        "experiment": manifest.experiment,
        "verified_files": manifest.files.len(),
        "ledgers": ledgers,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::shell_vectors;

    #[test]
    fn config_round_trip_and_unknown_experiment() {
        let c = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(c, back);
        assert_eq!(c.hash(), back.hash());
        assert!(ExperimentConfig::from_toml("experiment = \"turbulence\"").is_err());
        assert!(ExperimentConfig::from_toml("experiment = \"hm1-scaling\"\nbogus = 1").is_err());
    }

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 2.0, 4.0];
        let y = [3.0, 0.75, 0.1875];
        assert!((loglog_slope(&x, &y).unwrap() + 2.0).abs() < 1e-12);
        assert!(loglog_slope(&[1.0], &[1.0]).is_none());
    }

    #[test]
    fn single_value_sweep_has_no_slope() {
        let c = ExperimentConfig {
            experiment: ExperimentKind::Hm1Scaling,
            paths: 1,
            grid: 4,
            horizon: 0.01,
            steps_per_stage: 2,
            shells: vec![1],
            ..ExperimentConfig::default()
        };
        let out = sweep(&c, SweepAxis::Nu, &[1e-2]).unwrap();
        assert_eq!(out.summary["terminal_slope"], json!("not-applicable"));
    }

    #[test]
    fn oversized_grid_aborts() {
        let c = ExperimentConfig {
            experiment: ExperimentKind::Hm1Scaling,
            grid: 400,
            max_grid_points: 1 << 16,
            shells: vec![1],
            ..ExperimentConfig::default()
        };
        assert!(run_experiment(&c).is_err());
    }

    #[test]
    fn segments_split_at_stage_midpoints() {
        let spec = ScheduleSpec {
            stages: 2,
            n0: 1,
            ..ScheduleSpec::default()
        };
        let s = build_schedule(&spec).unwrap();
        let segs = schedule_segments(&s, 8, VelocityKind::Transport, None).unwrap();
        let bounds: Vec<(f64, f64)> = segs.iter().map(|s| (s.t0, s.t1)).collect();
        assert_eq!(
            bounds,
            vec![(0.0, 0.5), (0.5, 0.75), (0.75, 0.875), (0.875, 0.9375)]
        );
        assert!(segs.iter().all(|s| s.steps == 4));
    }

    #[test]
    fn low_modes_count() {
        assert_eq!(low_modes(Dim::Three, 2.0).len(), 32);
        assert_eq!(low_modes(Dim::Two, 1.0).len(), 4);
        assert_eq!(shell_vectors(1, Dim::Two).len(), 12);
    }
}
