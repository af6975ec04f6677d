//! Browser bindings: a shell-average explorer, a two-dimensional scalar
//! mixer and a schedule checker.

use std::sync::Arc;

use serde_json::json;
use shelldiss::experiment::shell_average_row;
use shelldiss::expm::transport_exponential;
use shelldiss::lattice::{build_shell, Dim, NoiseBasis};
use shelldiss::noise::NoiseKey;
use shelldiss::schedule::{build_schedule, validate_schedule, ScheduleSpec};
use shelldiss::solver::EXPM_TOL;
use shelldiss::spectral::{Grid, Rank, SpectralField};
use shelldiss::velocity::{VelocityKind, VelocityState, VelocityStepper};
use wasm_bindgen::prelude::*;

fn js_err(e: shelldiss::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Shell statistics for radius `n` in dimension `dim` as a JSON string.
#[wasm_bindgen(js_name = shellAverage)]
pub fn shell_average(n: u32, dim: u32) -> Result<String, JsError> {
    let dim = Dim::from_usize(dim as usize).map_err(js_err)?;
    if n > 24 {
        return Err(JsError::new("radius above 24 is too slow for the browser"));
    }
    let row = shell_average_row(&build_shell(n, dim).map_err(js_err)?).map_err(js_err)?;
    Ok(json!({
        "n": row.n,
        "kappa": row.kappa,
        "mean": row.mean,
        "limit": shelldiss::corrector::shell_average_limit(dim),
        "max_abs_error": row.max_abs_error,
        "shifted_mean": row.shifted_mean,
    })
    .to_string())
}

/// Asymptotic-mode schedule check for stages `1..=q_max` as a JSON string.
#[wasm_bindgen(js_name = checkSchedule)]
pub fn check_schedule(q_max: u32, nu: f64) -> Result<String, JsError> {
    let schedule = build_schedule(&ScheduleSpec::asymptotic(q_max + 1, nu)).map_err(js_err)?;
    let report = validate_schedule(&schedule, q_max).map_err(js_err)?;
    serde_json::to_string(&report).map_err(|e| JsError::new(&e.to_string()))
}

/// A passive scalar on the two-dimensional torus stirred by transport noise.
#[wasm_bindgen]
pub struct Mixer {
    grid: Arc<Grid>,
    basis: Arc<NoiseBasis>,
    field: SpectralField,
    velocity: VelocityState,
    stepper: VelocityStepper,
    nu: f64,
    time: f64,
    initial: f64,
}

#[wasm_bindgen]
impl Mixer {
    #[wasm_bindgen(constructor)]
    pub fn new(cutoff: u32, shell: u32, nu: f64, dt: f64, seed: u64) -> Result<Mixer, JsError> {
        let grid = Grid::with_cutoff(Dim::Two, cutoff).map_err(js_err)?;
        let basis = Arc::new(build_shell(shell, Dim::Two).map_err(js_err)?);
        let field =
            SpectralField::random_low_modes(&grid, Rank::Scalar, 2.0, seed).map_err(js_err)?;
        let velocity =
            VelocityState::new(VelocityKind::Transport, &grid, 1.0, 0, 0.0).map_err(js_err)?;
        let stepper = VelocityStepper::new(
            &velocity,
            basis.clone(),
            &grid,
            NoiseKey::new(seed, 0),
            dt,
            dt,
        )
        .map_err(js_err)?;
        let initial = field.l2_sq();
        Ok(Mixer {
            grid,
            basis,
            field,
            velocity,
            stepper,
            nu,
            time: 0.0,
            initial,
        })
    }

    /// Advance `steps` steps.
    pub fn step(&mut self, steps: u32) -> Result<(), JsError> {
        let dt = self.stepper.dt();
        for _ in 0..steps {
            let s = self.stepper.advance(&mut self.velocity).map_err(js_err)?;
            let disp = s.displacement.to_physical();
            let (f, _) = transport_exponential(&self.field, &disp, EXPM_TOL).map_err(js_err)?;
            self.field = f.heat(self.nu, dt).map_err(js_err)?;
            self.time += dt;
        }
        Ok(())
    }

    /// Grid side length.
    pub fn size(&self) -> usize {
        self.grid.n()
    }

    pub fn kappa(&self) -> usize {
        self.basis.kappa()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Physical values in row-major order.
    pub fn values(&self) -> Vec<f64> {
        self.field.to_physical().swap_remove(0)
    }

    /// `[||f||^2 / ||f_0||^2, ||f||_{H^1}^2, ||f||_{H^-1}^2]`.
    pub fn energies(&self) -> Vec<f64> {
        vec![
            self.field.l2_sq() / self.initial,
            self.field.sobolev_sq(1.0),
            self.field.sobolev_sq(-1.0),
        ]
    }
}
