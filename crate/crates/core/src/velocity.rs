//! Velocity models driven by shell noise.
//!
//! * `Transport`: white-in-time noise; a step contributes the displacement
//!   `sum theta a_{k,alpha} e_k Delta W^{k,alpha}`.
//! * `Ou`: `dv = -v/eps dt + eps^{-1} sum theta a e_k dW`, integrated
//!   exactly per mode.
//! * `Nse`: `dv = (-v/eps + Laplacian v + b(v, v)) dt + eps^{-1} sum theta a e_k dW`
//!   by exponential Euler with exact noise integrals.
//!
//! Alongside `v` the state tracks the stochastic convolution
//! `w = eps^{-1/2} int exp(-(t-s)/eps) sum theta a e_k dW`, the remainder
//! `r = v - eps^{-1/2} w` and the auxiliary field `r_tilde` solving
//! `d r_tilde = (-1/eps + Laplacian) r_tilde dt + eps^{-1} b(w, w) dt`.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{DriverIncrement, NoiseBasis};
use crate::noise::{phi1, KernelPlan, NoiseKey};
use crate::spectral::{advect, magnitude_max, Grid, Rank, SpectralField};

/// Which velocity drives the advected field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VelocityKind {
    Transport,
    Ou,
    Nse,
}

/// One exact Ornstein–Uhlenbeck step for a single mode coefficient.
///
/// `kernel` is `int_0^dt exp(-(dt-s)/eps) dW_s`.
pub fn ou_mode_update(
    value: Complex64,
    theta: f64,
    eps: f64,
    dt: f64,
    kernel: Complex64,
) -> Result<Complex64> {
    if !(eps > 0.0 && dt > 0.0) {
        return Err(invalid(format!(
            "OU step needs eps > 0 and dt > 0, got {eps}, {dt}"
        )));
    }
    Ok((-dt / eps).exp() * value + kernel * (theta / eps))
}

/// One exact step of the normalized convolution `w` for a single mode.
pub fn w_convolution_update(
    value: Complex64,
    theta: f64,
    eps: f64,
    dt: f64,
    kernel: Complex64,
) -> Result<Complex64> {
    if !(eps > 0.0 && dt > 0.0) {
        return Err(invalid(format!(
            "convolution step needs eps > 0 and dt > 0, got {eps}, {dt}"
        )));
    }
    Ok((-dt / eps).exp() * value + kernel * (theta / eps.sqrt()))
}

/// Grid field `sum_{k,alpha} theta a_{k,alpha} e_k X^{k,alpha}`.
pub fn assemble_noise_field(
    basis: &NoiseBasis,
    values: &[Complex64],
    grid: &Arc<Grid>,
) -> Result<SpectralField> {
    if basis.dim() != grid.dim() {
        return Err(invalid("shell and grid dimensions differ"));
    }
    let p = basis.polarizations();
    if values.len() != basis.kappa() * p {
        return Err(invalid("driver length does not match the shell"));
    }
    let mut f = SpectralField::zeros(grid, Rank::Vector);
    let d = grid.dim().get();
    for (i, mode) in basis.modes().iter().enumerate() {
        let idx = grid.index_of(mode.k).ok_or_else(|| {
            Error::Resolution(format!(
                "shell mode {} exceeds grid cutoff {}",
                mode.k,
                grid.cutoff()
            ))
        })?;
        for alpha in 0..p {
            let x = values[i * p + alpha] * basis.theta();
            let a = &mode.bases[alpha];
            for c in 0..d {
                f.components_mut()[c][idx] += x * a[c];
            }
        }
    }
    Ok(f)
}

/// Grid field assembled from a driver increment.
pub fn noise_increment_field(
    basis: &NoiseBasis,
    inc: &DriverIncrement,
    grid: &Arc<Grid>,
) -> Result<SpectralField> {
    assemble_noise_field(basis, &inc.values, grid)
}

/// Velocity and auxiliary fields at one time.
#[derive(Clone, Debug)]
pub struct VelocityState {
    pub kind: VelocityKind,
    pub stage: u32,
    pub time: f64,
    pub eps: f64,
    pub v: SpectralField,
    pub w: SpectralField,
    pub r: SpectralField,
    pub r_tilde: SpectralField,
    pub nonlinear: bool,
}

impl VelocityState {
    pub fn new(
        kind: VelocityKind,
        grid: &Arc<Grid>,
        eps: f64,
        stage: u32,
        time: f64,
    ) -> Result<VelocityState> {
        if kind != VelocityKind::Transport && !(eps > 0.0 && eps.is_finite()) {
            return Err(invalid(format!("eps must be positive, got {eps}")));
        }
        let z = SpectralField::zeros(grid, Rank::Vector);
        Ok(VelocityState {
            kind,
            stage,
            time,
            eps,
            v: z.clone(),
            w: z.clone(),
            r: z.clone(),
            r_tilde: z,
            nonlinear: true,
        })
    }

    /// Move to stage `stage` at time `time`: `w` and `r_tilde` restart from
    /// zero, `r` equals `v`, and the velocity itself carries over.
    pub fn stage_transition(&mut self, stage: u32, time: f64, eps: f64) -> Result<()> {
        if stage != self.stage + 1 {
            return Err(Error::Schedule(format!(
                "stage {} cannot follow stage {}",
                stage, self.stage
            )));
        }
        if (time - self.time).abs() > 1e-9 {
            return Err(Error::Schedule(format!(
                "stage boundary at t = {time} but the state is at t = {}",
                self.time
            )));
        }
        if self.kind != VelocityKind::Transport && !(eps > 0.0) {
            return Err(invalid("eps must be positive"));
        }
        self.stage = stage;
        self.eps = eps;
        self.w.scale(0.0);
        self.r_tilde.scale(0.0);
        self.r = self.v.clone();
        Ok(())
    }
}

/// What a velocity step hands to the advected-field solver.
#[derive(Clone, Debug)]
pub struct VelocityStep {
    /// `int v dt` over the step, or the white-noise increment.
    pub displacement: SpectralField,
    /// Brownian part `sum theta a e_k Delta W` of the displacement.
    pub increment: SpectralField,
}

/// Advances a [`VelocityState`] on one stage with a fixed step.
pub struct VelocityStepper {
    grid: Arc<Grid>,
    basis: Arc<NoiseBasis>,
    plan: KernelPlan,
    key: NoiseKey,
    dt: f64,
    step: u64,
    /// Stability bound on `dt * max|v|^2` for the explicit nonlinearity.
    pub cfl_limit: f64,
}

impl VelocityStepper {
    /// `fine_dt` is the shared Brownian cell; `dt` must be a multiple of it.
    pub fn new(
        state: &VelocityState,
        basis: Arc<NoiseBasis>,
        grid: &Arc<Grid>,
        key: NoiseKey,
        fine_dt: f64,
        dt: f64,
    ) -> Result<VelocityStepper> {
        if !(fine_dt > 0.0 && dt > 0.0) {
            return Err(invalid("time steps must be positive"));
        }
        let ratio = (dt / fine_dt).round();
        if ratio < 1.0 || (ratio * fine_dt - dt).abs() > 1e-9 * dt {
            return Err(invalid(format!(
                "step {dt} is not a multiple of the Brownian cell {fine_dt}"
            )));
        }
        if basis.max_component() > grid.cutoff() {
            return Err(Error::Resolution(format!(
                "shell radius {} needs cutoff {} but the grid has {}",
                basis.radius(),
                basis.max_component(),
                grid.cutoff()
            )));
        }
        let eps = state.eps;
        let plan = match state.kind {
            VelocityKind::Transport => {
                KernelPlan::new(&basis, fine_dt, ratio as u64, |_| vec![0.0])?
            }
            VelocityKind::Ou => {
                KernelPlan::new(&basis, fine_dt, ratio as u64, |_| vec![0.0, 1.0 / eps])?
            }
            VelocityKind::Nse => KernelPlan::new(&basis, fine_dt, ratio as u64, |k| {
                let lam = 1.0 / eps + 4.0 * std::f64::consts::PI.powi(2) * k.norm_sq() as f64;
                vec![0.0, 1.0 / eps, lam]
            })?,
        };
        Ok(VelocityStepper {
            grid: grid.clone(),
            basis,
            plan,
            key,
            dt,
            step: 0,
            cfl_limit: 1.0,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn basis(&self) -> &Arc<NoiseBasis> {
        &self.basis
    }

    /// Advance `state` by one step.
    pub fn advance(&mut self, state: &mut VelocityState) -> Result<VelocityStep> {
        let kernels = self.plan.sample(&self.basis, self.key, self.step);
        self.step += 1;
        let dt = self.dt;
        let increment = assemble_noise_field(&self.basis, &kernels[0], &self.grid)?;
        let displacement = match state.kind {
            VelocityKind::Transport => increment.clone(),
            VelocityKind::Ou => self.ou_step(state, &kernels, &increment)?,
            VelocityKind::Nse => self.nse_step(state, &kernels, &increment)?,
        };
        state.time += dt;
        Ok(VelocityStep {
            displacement,
            increment,
        })
    }

    fn ou_step(
        &self,
        s: &mut VelocityState,
        kernels: &[Vec<Complex64>],
        inc: &SpectralField,
    ) -> Result<SpectralField> {
        let (eps, dt) = (s.eps, self.dt);
        let j = assemble_noise_field(&self.basis, &kernels[1], &self.grid)?;
        let decay = (-dt / eps).exp();
        let mut v_new = s.v.clone();
        v_new.scale(decay);
        v_new.axpy(1.0 / eps, &j)?;
        let mut disp = s.v.clone();
        disp.axpy(-1.0, &v_new)?;
        disp.scale(eps);
        disp.axpy(1.0, inc)?;
        s.w.scale(decay);
        s.w.axpy(1.0 / eps.sqrt(), &j)?;
        s.v = v_new;
        s.r = s.v.clone();
        s.r.axpy(-1.0 / eps.sqrt(), &s.w)?;
        Ok(disp)
    }

    fn nse_step(
        &self,
        s: &mut VelocityState,
        kernels: &[Vec<Complex64>],
        inc: &SpectralField,
    ) -> Result<SpectralField> {
        let (eps, dt) = (s.eps, self.dt);
        if dt > eps / 10.0 * (1.0 + 1e-9) {
            return Err(Error::Resolution(format!(
                "step {dt} is too coarse for eps = {eps}"
            )));
        }
        let vmax = s.v.max_magnitude();
        if dt * vmax * vmax > self.cfl_limit {
            return Err(Error::Resolution(format!(
                "step {dt} violates the stability bound with max|v| = {vmax:.4e}"
            )));
        }
        let lam = |k2: f64| 1.0 / eps + k2;
        let j_w = assemble_noise_field(&self.basis, &kernels[1], &self.grid)?;
        let j_v = assemble_noise_field(&self.basis, &kernels[2], &self.grid)?;
        let b_vv = if s.nonlinear {
            advect(&s.v, &s.v)?
        } else {
            SpectralField::zeros(&self.grid, Rank::Vector)
        };

        let mut v_new = s.v.clone();
        v_new.apply_multiplier(|k2| (-lam(k2) * dt).exp());
        let mut forcing = b_vv.clone();
        forcing.apply_multiplier(|k2| phi1(lam(k2), dt));
        v_new.axpy(1.0, &forcing)?;
        v_new.axpy(1.0 / eps, &j_v)?;

        let mut drift = s.v.clone();
        drift.apply_multiplier(|k2| -k2);
        drift.axpy(1.0, &b_vv)?;
        let mut disp = s.v.clone();
        disp.axpy(-1.0, &v_new)?;
        disp.axpy(dt, &drift)?;
        disp.scale(eps);
        disp.axpy(1.0, inc)?;

        if s.nonlinear {
            let mut src = advect(&s.w, &s.w)?;
            src.apply_multiplier(|k2| phi1(lam(k2), dt) / eps);
            s.r_tilde.apply_multiplier(|k2| (-lam(k2) * dt).exp());
            s.r_tilde.axpy(1.0, &src)?;
        } else {
            s.r_tilde.apply_multiplier(|k2| (-lam(k2) * dt).exp());
        }
        s.w.scale((-dt / eps).exp());
        s.w.axpy(1.0 / eps.sqrt(), &j_w)?;
        s.v = v_new;
        s.r = s.v.clone();
        s.r.axpy(-1.0 / eps.sqrt(), &s.w)?;
        if !s.v.l2_sq().is_finite() {
            return Err(Error::Unstable("velocity blew up".into()));
        }
        Ok(disp)
    }
}

/// Largest pointwise speed of a velocity field.
pub fn max_speed(v: &SpectralField) -> f64 {
    magnitude_max(&v.to_physical())
}

/// The corrected process `U = u + eps^{1/2} b(w, u) + (eps/2) b(w, b(w, u)) + V`
/// with `V = (eps/2) b(b(w, w), u) + eps b((1 - eps Laplacian)^{-1} r_tilde, u)`.
#[derive(Clone, Debug)]
pub struct CorrectedProcess {
    pub corrected: SpectralField,
    pub first_order: SpectralField,
    pub second_order: SpectralField,
    pub remainder: SpectralField,
}

impl CorrectedProcess {
    /// `||Pi_L U||_{H^s}`.
    pub fn low_norm(&self, l: f64, s: f64) -> f64 {
        self.corrected.low_pass(l).sobolev_norm(s)
    }
}

/// Evaluate the corrected process for the advected field `u`.
pub fn corrected_process_eval(
    u: &SpectralField,
    state: &VelocityState,
) -> Result<CorrectedProcess> {
    let eps = state.eps;
    if !(eps > 0.0) {
        return Err(invalid("corrected process needs eps > 0"));
    }
    u.check_compatible(&SpectralField::zeros(state.w.grid(), u.rank()))?;
    let mut first = advect(&state.w, u)?;
    first.scale(eps.sqrt());
    let mut second = advect(&state.w, &advect(&state.w, u)?)?;
    second.scale(eps / 2.0);
    let bww = advect(&state.w, &state.w)?;
    let mut rem = advect(&bww, u)?;
    rem.scale(eps / 2.0);
    let mut rt = state.r_tilde.clone();
    rt.apply_multiplier(|k2| 1.0 / (1.0 + eps * k2));
    rem.axpy(eps, &advect(&rt, u)?)?;
    let mut corrected = u.clone();
    corrected.axpy(1.0, &first)?;
    corrected.axpy(1.0, &second)?;
    corrected.axpy(1.0, &rem)?;
    Ok(CorrectedProcess {
        corrected,
        first_order: first,
        second_order: second,
        remainder: rem,
    })
}
