//! Exponentials of skew-adjoint transport operators.
//!
//! For a skew-adjoint `A` with spectrum in `i[-r, r]` the Jacobi–Anger
//! expansion gives
//! `exp(-A) f = J_0(r) f + 2 sum_{j>=1} (-1)^j J_j(r) Q_j f`,
//! with `Q_0 = f`, `Q_1 = A f / r` and `Q_{j+1} = 2 (A / r) Q_j + Q_{j-1}`.
//! Every `Q_j` is real, so real fields stay real, and the truncation error
//! is bounded by the Bessel tail.

use crate::error::{Error, Result};
use crate::spectral::SpectralField;

/// Bessel functions `J_0(x) .. J_m(x)` by Miller's backward recurrence.
pub fn bessel_j_sequence(x: f64, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; m + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let ax = x.abs();
    let start = {
        let s = (m as f64).max(ax) + 30.0 + 4.0 * ax.cbrt() * 3.0;
        let s = s.ceil() as usize;
        s + (s % 2)
    };
    let mut next = 0.0;
    let mut cur = 1e-250;
    let mut norm = 0.0;
    let mut tmp = vec![0.0; m + 1];
    for j in (1..=start).rev() {
        let prev = 2.0 * j as f64 / ax * cur - next;
        next = cur;
        cur = prev;
        let idx = j - 1;
        if idx <= m {
            tmp[idx] = cur;
        }
        if idx % 2 == 0 && idx > 0 {
            norm += 2.0 * cur;
        }
        if cur.abs() > 1e250 {
            cur *= 1e-250;
            next *= 1e-250;
            norm *= 1e-250;
            tmp.iter_mut().for_each(|v| *v *= 1e-250);
        }
    }
    norm += cur;
    for (j, v) in tmp.into_iter().enumerate() {
        let s = if x < 0.0 && j % 2 == 1 { -1.0 } else { 1.0 };
        out[j] = s * v / norm;
    }
    out
}

/// Number of Chebyshev terms needed for radius `r` at tolerance `tol`.
fn series_length(r: f64, tol: f64) -> (usize, Vec<f64>) {
    let m = (r + 12.0 * r.cbrt() + 40.0).ceil() as usize;
    let j = bessel_j_sequence(r, m);
    let mut last = 0;
    for (i, v) in j.iter().enumerate() {
        if v.abs() > tol {
            last = i;
        }
    }
    (last, j)
}

/// Statistics of one exponential evaluation.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExpmStats {
    pub radius: f64,
    pub terms: usize,
}

/// `exp(-A) f` for a skew-adjoint `A` whose spectral radius is at most
/// `radius`. `apply` evaluates `A g`.
pub fn expm_skew<F>(
    f: &SpectralField,
    radius: f64,
    tol: f64,
    mut apply: F,
) -> Result<(SpectralField, ExpmStats)>
where
    F: FnMut(&SpectralField) -> Result<SpectralField>,
{
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(Error::Unstable(format!(
            "transport radius {radius} is not finite"
        )));
    }
    if radius == 0.0 {
        return Ok((f.clone(), ExpmStats { radius, terms: 0 }));
    }
    let (m, j) = series_length(radius, tol);
    let mut out = f.clone();
    out.scale(j[0]);
    if m == 0 {
        return Ok((out, ExpmStats { radius, terms: 0 }));
    }
    let mut prev = f.clone();
    let mut cur = apply(f)?;
    cur.scale(1.0 / radius);
    out.axpy(-2.0 * j[1], &cur)?;
    for (idx, jv) in j.iter().enumerate().take(m + 1).skip(2) {
        let mut nxt = apply(&cur)?;
        nxt.scale(2.0 / radius);
        nxt.axpy(1.0, &prev)?;
        let sign = if idx % 2 == 0 { 2.0 } else { -2.0 };
        out.axpy(sign * jv, &nxt)?;
        prev = std::mem::replace(&mut cur, nxt);
    }
    Ok((out, ExpmStats { radius, terms: m }))
}

/// `exp(-A_D) f` with `A_D g = Pi_K[(D . grad) g]` for a divergence-free
/// displacement given by physical values.
pub fn transport_exponential(
    f: &SpectralField,
    displacement: &[Vec<f64>],
    tol: f64,
) -> Result<(SpectralField, ExpmStats)> {
    let dmax = crate::spectral::magnitude_max(displacement);
    let radius = dmax * f.grid().max_wavenumber() * (1.0 + 1e-12);
    expm_skew(f, radius, tol, |g| g.transport_by(displacement))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bessel_reference_values() {
        let j = bessel_j_sequence(1.0, 3);
        assert!((j[0] - 0.765_197_686_557_966_6).abs() < 1e-15);
        assert!((j[1] - 0.440_050_585_744_933_5).abs() < 1e-15);
        assert!((j[2] - 0.114_903_484_931_900_5).abs() < 1e-15);
        let j = bessel_j_sequence(10.0, 12);
        assert!((j[0] + 0.245_935_764_451_348_3).abs() < 1e-14);
        assert!((j[5] + 0.234_061_528_186_793_4).abs() < 1e-14);
        assert!((j[12] - 0.063_370_254_970_156_01).abs() < 1e-14);
    }

    #[test]
    fn bessel_large_argument_sum_rule() {
        let x = 700.0;
        let j = bessel_j_sequence(x, 900);
        let s: f64 = j[0] * j[0] + 2.0 * j[1..].iter().map(|v| v * v).sum::<f64>();
        assert!((s - 1.0).abs() < 1e-12, "{s}");
    }

    #[test]
    fn two_by_two_rotation() {
        use crate::lattice::{Dim, WaveVector};
        use crate::spectral::{Grid, Rank};
        use num_complex::Complex64;
        // A = c * d/dx acts on the mode k = 1 as multiplication by 2 pi i c.
        let g = Grid::new(Dim::Two, 8).unwrap();
        let f = SpectralField::from_modes(
            &g,
            Rank::Scalar,
            &[(WaveVector::new2(1, 0), [Complex64::new(1.0, 0.0); 3])],
        )
        .unwrap();
        let c = 0.37;
        let disp = vec![vec![c; g.len()], vec![0.0; g.len()]];
        let (out, _) = transport_exponential(&f, &disp, 1e-15).unwrap();
        let want = Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * c);
        assert!((out.coefficient(0, WaveVector::new2(1, 0)) - want).norm() < 1e-13);
    }
}
