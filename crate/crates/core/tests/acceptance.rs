//! Acceptance checks, one line per criterion.
//!
//! Run with `cargo test -p shelldiss --test acceptance`. Thresholds are fixed
//! here; the process exits non-zero if any check fails.

use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use shelldiss::corrector::{
    apply_corrector_exact, corrector_perp, deviation_report, shell_average_limit, ModalField,
};
use shelldiss::experiment::{
    dissipation_metrics, homogenization, kappa_scaling, map_paths, path_seed, run_trajectory,
    schedule_segments, shell_average_row, Segment, TrajectorySpec,
};
use shelldiss::lattice::{build_shell, Dim};
use shelldiss::noise::NoiseKey;
use shelldiss::schedule::{build_schedule, validate_schedule, ScheduleSpec};
use shelldiss::solver::{EnergyLedger, TransportScheme};
use shelldiss::spectral::{advect, Grid, Rank, SpectralField};
use shelldiss::velocity::{corrected_process_eval, VelocityKind, VelocityState, VelocityStepper};
use shelldiss::Result;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome {
        pass,
        detail: detail.into(),
    })
}

fn random_modal(dim: Dim, rank: Rank, cutoff: f64, seed: u64) -> Result<ModalField> {
    let grid = Grid::with_cutoff(dim, cutoff.ceil() as u32)?;
    Ok(ModalField::from_spectral(&SpectralField::random_low_modes(
        &grid, rank, cutoff, seed,
    )?))
}

fn max_relative(a: &ModalField, b: &ModalField) -> f64 {
    let scale = b.max_abs().max(a.max_abs());
    a.sub(b).max_abs() / scale
}

fn scalar_exactness() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for n in [1u32, 2] {
        let basis = build_shell(n, Dim::Three)?;
        let rho = random_modal(Dim::Three, Rank::Scalar, 2.0 * n as f64, 11 + n as u64)?;
        let got = apply_corrector_exact(&rho, &basis)?;
        let c = 2.0 / 3.0 * basis.kappa() as f64;
        let want = rho.map_modes(|k2| -c * k2);
        for (l, v) in &want.coeffs {
            worst = worst.max((got.coeffs[l][0] - v[0]).norm() / v[0].norm());
        }
    }
    outcome(
        worst <= 1e-10,
        format!("max relative error {worst:.2e} (tol 1e-10)"),
    )
}

fn perp_formula() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for n in [4u32, 8] {
        let basis = build_shell(n, Dim::Three)?;
        let u = random_modal(Dim::Three, Rank::Vector, 2.0, 23 + n as u64)?;
        let exact = apply_corrector_exact(&u, &basis)?;
        let c = 2.0 / 3.0 * basis.kappa() as f64;
        let want = u.map_modes(|k2| -c * k2).sub(&exact);
        worst = worst.max(max_relative(&corrector_perp(&u, &basis)?, &want));
    }
    outcome(
        worst <= 1e-10,
        format!("max relative error {worst:.2e} (tol 1e-10)"),
    )
}

fn shell_average() -> Result<Outcome> {
    let mut errs = Vec::new();
    for n in [4u32, 8, 16, 32] {
        errs.push(shell_average_row(&build_shell(n, Dim::Three)?)?.max_abs_error);
    }
    let pass = errs[3] <= 0.02 && errs[3] < errs[0];
    outcome(
        pass,
        format!(
            "|avg - {:.4}| over N = 4, 8, 16, 32: {:.2e} {:.2e} {:.2e} {:.2e} (N=32 tol 0.02, below N=4)",
            shell_average_limit(Dim::Three),
            errs[0],
            errs[1],
            errs[2],
            errs[3]
        ),
    )
}

fn deviation_trend() -> Result<Outcome> {
    let u = random_modal(Dim::Three, Rank::Vector, 2.0, 37)?;
    let mut ratios = Vec::new();
    for n in [8u32, 16, 32] {
        ratios.push(deviation_report(&u, &build_shell(n, Dim::Three)?, 1.0 / 3.0)?.ratio);
    }
    let pass = ratios.windows(2).all(|w| w[1] < w[0]);
    outcome(
        pass,
        format!(
            "ratio over N = 8, 16, 32: {:.3e} {:.3e} {:.3e}",
            ratios[0], ratios[1], ratios[2]
        ),
    )
}

fn trapezoid_defect(ledger: &EnergyLedger, nu: f64) -> f64 {
    let rows = &ledger.rows;
    let integral: f64 = rows
        .windows(2)
        .map(|w| 0.5 * (w[0].h1sq + w[1].h1sq) * (w[1].t - w[0].t))
        .sum();
    let first = rows[0].l2sq;
    let last = rows[rows.len() - 1].l2sq;
    (last + 2.0 * nu * integral - first).abs() / first
}

fn energy_equality() -> Result<Outcome> {
    let grid = Grid::with_cutoff_and_size(Dim::Two, 42, 128)?;
    let basis = Arc::new(build_shell(1, Dim::Two)?);
    let initial = SpectralField::random_low_modes(&grid, Rank::Scalar, 3.0, 5)?;
    let (nu, horizon, eps, steps) = (1e-2, 0.5, 0.1, 250u64);
    let dt = horizon / steps as f64;
    let tol = 5.0 * dt * horizon;
    let mut parts = Vec::new();
    let mut pass = true;
    for model in [VelocityKind::Ou, VelocityKind::Nse] {
        let spec = TrajectorySpec {
            grid: grid.clone(),
            model,
            scheme: TransportScheme::Exponential,
            nu,
            seed: 9,
            segments: vec![Segment {
                stage: 0,
                t0: 0.0,
                t1: horizon,
                steps,
                basis: basis.clone(),
                eps,
                low_cutoff: 1.0,
            }],
            fine_dt: None,
            velocity_norm_exponent: None,
        };
        let traj = run_trajectory(&spec, &initial)?;
        let quad = trapezoid_defect(&traj.ledger, nu);
        let booked = traj.ledger.energy_defect().unwrap_or(f64::NAN).abs();
        pass &= booked <= tol;
        parts.push(format!(
            "{model:?}: {booked:.2e} (sampled trapezoid {quad:.1e})"
        ));
    }
    outcome(pass, format!("{} (tol {tol:.2e})", parts.join(", ")))
}

fn ito_consistency() -> Result<Outcome> {
    let grid = Grid::with_cutoff(Dim::Two, 10)?;
    let basis = Arc::new(build_shell(1, Dim::Two)?);
    let initial = SpectralField::random_low_modes(&grid, Rank::Scalar, 2.0, 3)?;
    let (horizon, steps, paths) = (0.5, 100u64, 64u32);
    let dt = horizon / steps as f64;
    let mut parts = Vec::new();
    let mut pass = true;
    for scheme in [TransportScheme::Exponential] {
        let ledgers = map_paths(paths, |p| {
            let spec = TrajectorySpec {
                grid: grid.clone(),
                model: VelocityKind::Transport,
                scheme,
                nu: 0.0,
                seed: path_seed(21, p),
                segments: vec![Segment {
                    stage: 0,
                    t0: 0.0,
                    t1: horizon,
                    steps,
                    basis: basis.clone(),
                    eps: 1.0,
                    low_cutoff: 1.0,
                }],
                fine_dt: None,
                velocity_norm_exponent: None,
            };
            Ok(run_trajectory(&spec, &initial)?.ledger)
        })?;
        let e0 = initial.l2_sq();
        let mut worst_excess = f64::NEG_INFINITY;
        let mut worst_dev: f64 = 0.0;
        for i in 0..ledgers[0].rows.len() {
            let t = ledgers[0].rows[i].t;
            let m = ledgers.iter().map(|l| l.rows[i].l2sq).sum::<f64>() / paths as f64;
            let dev = (m - e0).abs() / e0;
            worst_dev = worst_dev.max(dev);
            worst_excess = worst_excess.max(dev - (0.05 + 5.0 * dt * t));
        }
        pass &= worst_excess <= 0.0;
        parts.push(format!("{scheme:?}: max deviation {worst_dev:.2e}"));
    }
    outcome(
        pass,
        format!("{} (tol 0.05 + 5 dt t, dt = {dt})", parts.join(", ")),
    )
}

fn kappa_dissipation() -> Result<Outcome> {
    let radii = [1u32, 3, 7];
    let grid = Grid::with_cutoff(Dim::Two, 16)?;
    let initial = SpectralField::random_low_modes(&grid, Rank::Scalar, 2.0, 7)?;
    let (rows, _) = kappa_scaling(&grid, &radii, &initial, 1e-3, 0.1, 200, 1.0, 31, 8)?;
    let kappas: Vec<usize> = rows.iter().map(|r| r.kappa).collect();
    let ratios_ok = kappas.windows(2).all(|w| w[1] >= 4 * w[0]);
    let term: Vec<f64> = rows.iter().map(|r| r.terminal_mean).collect();
    let sup: Vec<f64> = rows.iter().map(|r| r.window_sup_mean).collect();
    let pass =
        ratios_ok && term.windows(2).all(|w| w[1] < w[0]) && sup.windows(2).all(|w| w[1] < w[0]);
    let cell = |m: f64, xs: &[f64]| format!("{m:.3e}+-{:.1e}", std_error(xs));
    let terms: Vec<String> = rows
        .iter()
        .map(|r| cell(r.terminal_mean, &r.terminal_paths))
        .collect();
    let sups: Vec<String> = rows
        .iter()
        .map(|r| cell(r.window_sup_mean, &r.window_sup_paths))
        .collect();
    outcome(
        pass,
        format!(
            "kappa {kappas:?}: terminal {}, window sup {}",
            terms.join(" "),
            sups.join(" ")
        ),
    )
}

fn std_error(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
}

fn nu_uniform_decay() -> Result<Outcome> {
    let spec = ScheduleSpec {
        stages: 3,
        n0: 1,
        nu: vec![1e-2, 1e-3, 1e-4],
        ..ScheduleSpec::default()
    };
    let schedule = build_schedule(&spec)?;
    let grid = Grid::with_cutoff(Dim::Two, 21)?;
    let segments = schedule_segments(&schedule, 256, VelocityKind::Transport, None)?;
    let initial = SpectralField::random_low_modes(&grid, Rank::Scalar, 2.0, 13)?;
    let paths = 4u32;
    let mut fractions = Vec::new();
    for &nu in &spec.nu {
        let fr = map_paths(paths, |p| {
            let t = TrajectorySpec {
                grid: grid.clone(),
                model: VelocityKind::Transport,
                scheme: TransportScheme::Exponential,
                nu,
                seed: path_seed(41, p),
                segments: segments.clone(),
                fine_dt: None,
                velocity_norm_exponent: None,
            };
            let traj = run_trajectory(&t, &initial)?;
            Ok(dissipation_metrics(&traj.ledger, &schedule, nu)?.dissipated_fraction)
        })?;
        fractions.push(fr.iter().sum::<f64>() / paths as f64);
    }
    let lo = fractions.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = fractions.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pass = lo >= 0.5 && hi - lo <= 0.25;
    outcome(
        pass,
        format!(
            "dissipated fraction at nu = 1e-2, 1e-3, 1e-4: {:.3} {:.3} {:.3}; spread {:.3} (min 0.5, spread 0.25)",
            fractions[0],
            fractions[1],
            fractions[2],
            hi - lo
        ),
    )
}

fn ou_homogenization() -> Result<Outcome> {
    let grid = Grid::with_cutoff(Dim::Two, 10)?;
    let basis = Arc::new(build_shell(1, Dim::Two)?);
    let initial = SpectralField::random_low_modes(&grid, Rank::Scalar, 2.0, 17)?;
    let eps = [1e-2, 1e-3, 1e-4];
    let (horizon, fine): (f64, f64) = (0.05, 1e-5);
    let reference_steps = (horizon / fine).round() as u64;
    let (report, _) = homogenization(
        &grid,
        &basis,
        &initial,
        1e-2,
        horizon,
        &eps,
        fine,
        reference_steps,
        53,
        16,
    )?;
    let pass = report.gap.windows(2).all(|w| w[1] < w[0]);
    outcome(
        pass,
        format!(
            "gap at eps = 1e-2, 1e-3, 1e-4: {:.3e} {:.3e} {:.3e} (reference {:.4e})",
            report.gap[0], report.gap[1], report.gap[2], report.reference_mean
        ),
    )
}

fn convolution_law() -> Result<Outcome> {
    let grid = Grid::with_cutoff(Dim::Two, 4)?;
    let basis = Arc::new(build_shell(1, Dim::Two)?);
    let (eps, t, steps, paths) = (0.1, 0.05, 5u64, 10_000u32);
    let dt = t / steps as f64;
    let samples = map_paths(paths, |p| {
        let mut state = VelocityState::new(VelocityKind::Ou, &grid, eps, 0, 0.0)?;
        let mut stepper = VelocityStepper::new(
            &state,
            basis.clone(),
            &grid,
            NoiseKey::new(path_seed(77, p), 0),
            dt,
            dt,
        )?;
        for _ in 0..steps {
            stepper.advance(&mut state)?;
        }
        Ok(state.w.l2_sq())
    })?;
    let mean = samples.iter().sum::<f64>() / paths as f64;
    let want = basis.kappa() as f64 * basis.theta().powi(2) * (1.0 - (-2.0 * t / eps).exp());
    let rel = (mean - want).abs() / want;
    outcome(
        rel <= 0.05,
        format!("E||w||^2 = {mean:.4}, predicted {want:.4}, relative gap {rel:.2e} (tol 0.05)"),
    )
}

fn schedule_validator() -> Result<Outcome> {
    let mut failed: std::collections::BTreeMap<String, std::collections::BTreeSet<u32>> =
        Default::default();
    let (mut count, mut failures) = (0, 0);
    for nu in [1.0, 1e-3, 1e-8] {
        let report = validate_schedule(&build_schedule(&ScheduleSpec::asymptotic(6, nu))?, 5)?;
        count += report.checks.len() + report.structural.len();
        for c in report
            .checks
            .iter()
            .chain(&report.structural)
            .filter(|c| !c.pass)
        {
            failures += 1;
            let name = c.condition.split(':').next().unwrap_or("").to_string();
            failed.entry(name).or_default().insert(c.q);
        }
    }
    let pass = failed.is_empty();
    let detail = if pass {
        format!("{count} checks pass for q = 1..5")
    } else {
        let parts: Vec<String> = failed
            .iter()
            .map(|(n, qs)| format!("{n} fails at q = {qs:?}"))
            .collect();
        format!("{} of {count} checks fail: {}", failures, parts.join("; "))
    };
    outcome(pass, detail)
}

fn corrected_process() -> Result<Outcome> {
    let grid = Grid::with_cutoff(Dim::Two, 10)?;
    let basis = Arc::new(build_shell(1, Dim::Two)?);
    let mut worst: f64 = 0.0;
    for d3 in [false, true] {
        let (dim, b) = if d3 {
            (Dim::Three, build_shell(2, Dim::Three)?)
        } else {
            (Dim::Two, (*basis).clone())
        };
        let g = Grid::with_cutoff(dim, 4)?;
        for i in b.half_indices() {
            let mode = &b.modes()[*i];
            for a in mode.bases.iter().take(b.polarizations()) {
                let v = [
                    Complex64::new(a[0], 0.0),
                    Complex64::new(a[1], 0.0),
                    Complex64::new(a[2], 0.0),
                ];
                let u = SpectralField::from_modes(&g, Rank::Vector, &[(mode.k, v), (-mode.k, v)])?;
                let scale = 2.0 * std::f64::consts::PI * mode.k.norm();
                worst = worst.max(advect(&u, &u)?.max_magnitude() / scale);
            }
        }
    }
    let u = SpectralField::random_low_modes(&grid, Rank::Scalar, 2.0, 91)?;
    let (t, paths) = (0.02, 8u32);
    let eps_pair = [1e-2, 1e-3];
    let fine = eps_pair[1] / 200.0;
    let gaps = map_paths(paths, |p| {
        let mut out = [0.0; 2];
        for (i, &eps) in eps_pair.iter().enumerate() {
            let dt = eps / 200.0;
            let mut state = VelocityState::new(VelocityKind::Nse, &grid, eps, 0, 0.0)?;
            let mut stepper = VelocityStepper::new(
                &state,
                basis.clone(),
                &grid,
                NoiseKey::new(path_seed(61, p), 0),
                fine,
                dt,
            )?;
            for _ in 0..(t / dt).round() as u64 {
                stepper.advance(&mut state)?;
            }
            let cp = corrected_process_eval(&u, &state)?;
            let mut d = cp.corrected.clone();
            d.axpy(-1.0, &u)?;
            out[i] = d.l2_norm();
        }
        Ok(out)
    })?;
    let decreasing = gaps.iter().filter(|g| g[1] < g[0]).count();
    let pass = worst <= 1e-14 && decreasing == paths as usize;
    let mean = |i: usize| gaps.iter().map(|g| g[i]).sum::<f64>() / paths as f64;
    outcome(
        pass,
        format!(
            "max |b(a e_k, a e_-k)| {worst:.1e} (tol 1e-14); ||U - u|| {:.3e} -> {:.3e}, decreasing on {decreasing}/{paths} paths",
            mean(0),
            mean(1)
        ),
    )
}

fn main() {
    let checks: [(u32, &str, fn() -> Result<Outcome>); 12] = [
        (1, "scalar corrector exactness", scalar_exactness),
        (2, "anisotropic corrector formula", perp_formula),
        (3, "shell average limit", shell_average),
        (4, "low-mode deviation trend", deviation_trend),
        (5, "energy equality", energy_equality),
        (6, "Ito-Stratonovich consistency", ito_consistency),
        (7, "enhanced dissipation in kappa", kappa_dissipation),
        (8, "viscosity-uniform decay", nu_uniform_decay),
        (9, "OU homogenization", ou_homogenization),
        (10, "stochastic convolution law", convolution_law),
        (11, "schedule validator", schedule_validator),
        (12, "corrected process", corrected_process),
    ];
    let only: Option<Vec<u32>> = std::env::args()
        .skip(1)
        .find(|a| !a.starts_with('-'))
        .map(|s| s.split(',').filter_map(|x| x.parse().ok()).collect());
    let mut failures = 0;
    for (id, name, f) in checks {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match f() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failures += 1;
        }
        println!(
            "criterion {id:>2} {}: {name}: {detail} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
