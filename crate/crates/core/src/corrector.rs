//! Itô–Stratonovich corrector of shell transport noise.
//!
//! For `sigma_{k,alpha} = theta_k a_{k,alpha} e_k` the corrector is
//! `S(u) = sum_{k,alpha} Pi[sigma_{k,alpha} . grad Pi[sigma_{-k,alpha} . grad u]]`.
//! It acts diagonally on Fourier modes: scalars see `c_d kappa Laplacian`
//! with `c_d = (d-1)/d`, and divergence-free vector fields see the same
//! Laplacian minus an anisotropic part that becomes
//! `(c_d - shell average) kappa Laplacian` on low modes.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{cross, divergence_free_basis, dot3, Dim, NoiseBasis, WaveVector};
use crate::spectral::{Grid, Rank, SpectralField};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Sparse field on arbitrary wave vectors, for exact modal arithmetic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalField {
    pub dim: Dim,
    pub rank: Rank,
    pub coeffs: BTreeMap<WaveVector, [Complex64; 3]>,
}

impl ModalField {
    pub fn new(dim: Dim, rank: Rank) -> ModalField {
        ModalField {
            dim,
            rank,
            coeffs: BTreeMap::new(),
        }
    }

    pub fn components(&self) -> usize {
        match self.rank {
            Rank::Scalar => 1,
            Rank::Vector => self.dim.get(),
        }
    }

    pub fn add(&mut self, k: WaveVector, v: [Complex64; 3]) {
        let e = self.coeffs.entry(k).or_insert([ZERO; 3]);
        for c in 0..3 {
            e[c] += v[c];
        }
    }

    /// Nonzero coefficients of a grid field.
    pub fn from_spectral(f: &SpectralField) -> ModalField {
        let g = f.grid();
        let mut out = ModalField::new(g.dim(), f.rank());
        for idx in 0..g.len() {
            let mut v = [ZERO; 3];
            let mut nz = false;
            for (c, comp) in f.components().iter().enumerate() {
                v[c] = comp[idx];
                nz |= v[c] != ZERO;
            }
            if nz {
                out.coeffs.insert(g.wavevector(idx), v);
            }
        }
        out
    }

    pub fn to_spectral(&self, grid: &Arc<Grid>) -> Result<SpectralField> {
        let mut f = SpectralField::zeros(grid, self.rank);
        for (&k, v) in &self.coeffs {
            let idx = grid.index_of(k).ok_or_else(|| {
                Error::Resolution(format!("mode {k} outside cutoff {}", grid.cutoff()))
            })?;
            for (c, comp) in f.components_mut().iter_mut().enumerate() {
                comp[idx] = v[c];
            }
        }
        Ok(f)
    }

    /// `sum_k |2 pi k|^{2s} |f_hat(k)|^2` over nonzero modes.
    pub fn sobolev_sq(&self, s: f64) -> f64 {
        self.coeffs
            .iter()
            .filter(|(k, _)| !k.is_zero())
            .map(|(k, v)| {
                let w = (4.0 * PI * PI * k.norm_sq() as f64).powf(s);
                w * v.iter().map(|z| z.norm_sqr()).sum::<f64>()
            })
            .sum()
    }

    pub fn sobolev_norm(&self, s: f64) -> f64 {
        self.sobolev_sq(s).sqrt()
    }

    /// `self - other`.
    pub fn sub(&self, other: &ModalField) -> ModalField {
        let mut out = self.clone();
        for (&k, v) in &other.coeffs {
            out.add(k, [-v[0], -v[1], -v[2]]);
        }
        out
    }

    /// Multiply each mode by `m(|2 pi k|^2)`.
    pub fn map_modes<F: Fn(f64) -> f64>(&self, m: F) -> ModalField {
        let mut out = self.clone();
        for (k, v) in out.coeffs.iter_mut() {
            let s = m(4.0 * PI * PI * k.norm_sq() as f64);
            v.iter_mut().for_each(|z| *z *= s);
        }
        out
    }

    /// Largest coefficient magnitude.
    pub fn max_abs(&self) -> f64 {
        self.coeffs
            .values()
            .flatten()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }
}

fn project(k: WaveVector, v: &mut [Complex64; 3]) {
    let n2 = k.norm_sq();
    if n2 == 0 {
        return;
    }
    let kf = k.to_f64();
    let s = (v[0] * kf[0] + v[1] * kf[1] + v[2] * kf[2]) / n2 as f64;
    for c in 0..3 {
        v[c] -= s * kf[c];
    }
}

fn check_input(u: &ModalField, basis: &NoiseBasis) -> Result<()> {
    if u.dim != basis.dim() {
        return Err(invalid("field and shell dimensions differ"));
    }
    if let Some(v) = u.coeffs.get(&WaveVector::ZERO) {
        if v.iter().any(|z| z.norm() > 1e-14) {
            return Err(Error::Precondition(
                "corrector input must have zero mean".into(),
            ));
        }
    }
    if u.rank == Rank::Vector {
        for (k, v) in &u.coeffs {
            let kf = k.to_f64();
            let d = v[0] * kf[0] + v[1] * kf[1] + v[2] * kf[2];
            let scale = v.iter().map(|z| z.norm()).fold(0.0, f64::max) * k.norm();
            if d.norm() > 1e-10 * scale.max(1e-300) {
                return Err(Error::Precondition(format!(
                    "vector input is not divergence-free at {k}"
                )));
            }
        }
    }
    Ok(())
}

/// The corrector evaluated literally as a double sum over shell modes and
/// polarizations: the inner derivative shifts `l` to `l - k`, the outer
/// one shifts back, with a Leray projection after each for vector fields.
pub fn apply_corrector_exact(u: &ModalField, basis: &NoiseBasis) -> Result<ModalField> {
    check_input(u, basis)?;
    let theta2 = basis.theta() * basis.theta();
    let p = basis.polarizations();
    let vector = u.rank == Rank::Vector;
    let support: Vec<(WaveVector, [Complex64; 3])> =
        u.coeffs.iter().map(|(k, v)| (*k, *v)).collect();
    let mut acc: Vec<[Complex64; 3]> = vec![[ZERO; 3]; support.len()];
    for mode in basis.modes() {
        for a in mode.bases.iter().take(p) {
            for (slot, (l, v)) in support.iter().enumerate() {
                let m = *l - mode.k;
                let inner_f = Complex64::new(0.0, 2.0 * PI * l.dot(a));
                let mut w = [inner_f * v[0], inner_f * v[1], inner_f * v[2]];
                if vector {
                    project(m, &mut w);
                }
                let outer_f = Complex64::new(0.0, 2.0 * PI * m.dot(a));
                let mut z = [outer_f * w[0], outer_f * w[1], outer_f * w[2]];
                if vector {
                    project(*l, &mut z);
                }
                for c in 0..3 {
                    acc[slot][c] += theta2 * z[c];
                }
            }
        }
    }
    let mut out = ModalField::new(u.dim, u.rank);
    for ((l, _), v) in support.iter().zip(acc) {
        out.coeffs.insert(*l, v);
    }
    Ok(out)
}

/// `sin^2` of the angle between two nonzero vectors.
pub fn sin2_angle(k: WaveVector, l: WaveVector) -> f64 {
    let c = cross(&k.to_f64(), &l.to_f64());
    dot3(&c, &c) / (k.norm_sq() as f64 * l.norm_sq() as f64)
}

/// Anisotropic part `S_perp(u)` of the vector corrector, built from the
/// divergence-free components `u_{l,beta}` of each mode.
pub fn corrector_perp(u: &ModalField, basis: &NoiseBasis) -> Result<ModalField> {
    check_input(u, basis)?;
    if u.rank != Rank::Vector {
        return Err(invalid("the anisotropic part is defined for vector fields"));
    }
    let theta2 = basis.theta() * basis.theta();
    let p = basis.polarizations();
    let mut out = ModalField::new(u.dim, u.rank);
    for (&l, v) in &u.coeffs {
        if l.is_zero() {
            continue;
        }
        let bl = divergence_free_basis(l, u.dim);
        let comps: Vec<Complex64> = bl
            .iter()
            .take(p)
            .map(|b| v[0] * b[0] + v[1] * b[1] + v[2] * b[2])
            .collect();
        let mut acc = [ZERO; 3];
        for mode in basis.modes() {
            let d = mode.k - l;
            if d.is_zero() {
                continue;
            }
            let s2 = sin2_angle(mode.k, l);
            if s2 == 0.0 {
                continue;
            }
            let df = d.to_f64();
            let mut proj = ZERO;
            for (beta, b) in bl.iter().take(p).enumerate() {
                proj += comps[beta] * dot3(b, &df);
            }
            let w = theta2 * s2 / d.norm_sq() as f64;
            for c in 0..3 {
                acc[c] += proj * (w * df[c]);
            }
        }
        project(l, &mut acc);
        let f = -4.0 * PI * PI * l.norm_sq() as f64;
        out.coeffs.insert(l, [f * acc[0], f * acc[1], f * acc[2]]);
    }
    Ok(out)
}

/// Shell average at the low mode `l` for polarization `beta`: the
/// `a_{l,beta}` component of
/// `kappa^{-1} sum_k theta_k^2 sin^2(k, l) (a_{l,beta} . k_hat) k_hat`.
pub fn shell_average_component(basis: &NoiseBasis, l: WaveVector, beta: usize) -> Result<f64> {
    if l.is_zero() {
        return Err(invalid("shell average needs a nonzero mode"));
    }
    if beta >= basis.polarizations() {
        return Err(invalid(format!("polarization {beta} out of range")));
    }
    let a = divergence_free_basis(l, basis.dim())[beta];
    let mut acc = 0.0;
    for mode in basis.modes() {
        let s2 = sin2_angle(mode.k, l);
        acc += basis.theta().powi(2) * s2 * mode.k.dot(&a).powi(2) / mode.k.norm_sq() as f64;
    }
    Ok(acc / basis.kappa() as f64)
}

/// Same average with `k_hat` replaced by the shifted direction
/// `(k - l) / |k - l|`, which is what the anisotropic part actually sees.
pub fn shifted_shell_average(basis: &NoiseBasis, l: WaveVector, beta: usize) -> Result<f64> {
    if l.is_zero() {
        return Err(invalid("shell average needs a nonzero mode"));
    }
    if beta >= basis.polarizations() {
        return Err(invalid(format!("polarization {beta} out of range")));
    }
    let a = divergence_free_basis(l, basis.dim())[beta];
    let mut acc = 0.0;
    for mode in basis.modes() {
        let d = mode.k - l;
        if d.is_zero() {
            continue;
        }
        acc +=
            basis.theta().powi(2) * sin2_angle(mode.k, l) * d.dot(&a).powi(2) / d.norm_sq() as f64;
    }
    Ok(acc / basis.kappa() as f64)
}

/// Direction used by [`shell_average_constant`].
pub const REFERENCE_MODE: WaveVector = WaveVector([1, 0, 0]);

/// Measured shell-average constant at the unit mode `e_1`, averaged over
/// polarizations.
pub fn shell_average_constant(basis: &NoiseBasis) -> Result<f64> {
    let p = basis.polarizations();
    let mut s = 0.0;
    for beta in 0..p {
        s += shell_average_component(basis, REFERENCE_MODE, beta)?;
    }
    Ok(s / p as f64)
}

/// Large-shell limit of the shell average: `4/15` in three dimensions,
/// `3/8` in two.
pub fn shell_average_limit(dim: Dim) -> f64 {
    match dim {
        Dim::Three => 4.0 / 15.0,
        Dim::Two => 3.0 / 8.0,
    }
}

/// Low-mode vector constant `c_d - shell average`: `2/5` in three
/// dimensions and `1/8` in two.
pub fn limit_constant(dim: Dim) -> f64 {
    dim.scalar_constant() - shell_average_limit(dim)
}

/// Comparison of the exact corrector against its low-mode limit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorrectorReport {
    pub kappa: usize,
    pub shell_radius: u32,
    pub limit_constant: f64,
    pub exact_action: ModalField,
    pub limit_action: ModalField,
    pub deviation_hminus1: f64,
    pub ratio: f64,
}

/// Compare `S(u)` with `limit_constant * kappa * Laplacian(u)` for a field
/// supported on `|l| <= N^{1 - delta}`.
pub fn deviation_report(u: &ModalField, basis: &NoiseBasis, delta: f64) -> Result<CorrectorReport> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    let bound = (basis.radius() as f64).powf(1.0 - delta);
    if let Some((k, _)) = u
        .coeffs
        .iter()
        .find(|(k, _)| k.norm() > bound * (1.0 + 1e-12))
    {
        return Err(Error::Precondition(format!(
            "mode {k} lies above the low-mode bound {bound:.4}"
        )));
    }
    let exact = apply_corrector_exact(u, basis)?;
    let c = match u.rank {
        Rank::Vector => limit_constant(u.dim),
        Rank::Scalar => u.dim.scalar_constant(),
    };
    let kappa = basis.kappa() as f64;
    let limit = u.map_modes(|k2| -c * kappa * k2);
    let deviation = limit.sub(&exact).sobolev_norm(-1.0);
    let h1 = u.sobolev_norm(1.0);
    let ratio = if h1 > 0.0 {
        deviation / (kappa * h1)
    } else {
        0.0
    };
    Ok(CorrectorReport {
        kappa: basis.kappa(),
        shell_radius: basis.radius(),
        limit_constant: c,
        exact_action: exact,
        limit_action: limit,
        deviation_hminus1: deviation,
        ratio,
    })
}

/// Galerkin corrector on a grid: intermediate modes `l - k` beyond the
/// cutoff are dropped. Scalars get one rate per mode, vector fields a
/// symmetric `d x d` block acting on the divergence-free plane.
#[derive(Clone, Debug)]
pub struct GridCorrector {
    rank: Rank,
    blocks: Vec<[[f64; 3]; 3]>,
}

fn projector(k: WaveVector) -> [[f64; 3]; 3] {
    let mut p = [[0.0; 3]; 3];
    let n2 = k.norm_sq();
    let kf = k.to_f64();
    for i in 0..3 {
        p[i][i] = 1.0;
        if n2 > 0 {
            for j in 0..3 {
                p[i][j] -= kf[i] * kf[j] / n2 as f64;
            }
        }
    }
    p
}

fn matmul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for l in 0..3 {
                c[i][j] += a[i][l] * b[l][j];
            }
        }
    }
    c
}

fn mat_exp(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let norm: f64 = m.iter().flatten().map(|x| x.abs()).sum();
    let mut s = 0;
    let mut scale = 1.0;
    while norm * scale > 0.25 {
        scale *= 0.5;
        s += 1;
    }
    let a: Vec<[f64; 3]> = m
        .iter()
        .map(|r| [r[0] * scale, r[1] * scale, r[2] * scale])
        .collect();
    let a = [a[0], a[1], a[2]];
    let mut out = [[0.0; 3]; 3];
    let mut term = [[0.0; 3]; 3];
    for i in 0..3 {
        out[i][i] = 1.0;
        term[i][i] = 1.0;
    }
    for j in 1..20 {
        term = matmul(&term, &a);
        for r in term.iter_mut() {
            r.iter_mut().for_each(|x| *x /= j as f64);
        }
        for i in 0..3 {
            for l in 0..3 {
                out[i][l] += term[i][l];
            }
        }
    }
    for _ in 0..s {
        out = matmul(&out, &out);
    }
    out
}

impl GridCorrector {
    pub fn new(basis: &NoiseBasis, grid: &Grid, rank: Rank) -> Result<GridCorrector> {
        if basis.dim() != grid.dim() {
            return Err(invalid("shell and grid dimensions differ"));
        }
        let p = basis.polarizations();
        let theta2 = basis.theta().powi(2);
        let mut blocks = vec![[[0.0; 3]; 3]; grid.len()];
        for (idx, block) in blocks.iter_mut().enumerate() {
            if !grid.is_resolved(idx) {
                continue;
            }
            let l = grid.wavevector(idx);
            if l.is_zero() {
                continue;
            }
            let pl = projector(l);
            let mut acc = [[0.0; 3]; 3];
            let mut scalar = 0.0;
            for mode in basis.modes() {
                let m = l - mode.k;
                if m.max_abs() > grid.cutoff() {
                    continue;
                }
                let w: f64 = mode
                    .bases
                    .iter()
                    .take(p)
                    .map(|a| l.dot(a).powi(2))
                    .sum::<f64>()
                    * theta2;
                if w == 0.0 {
                    continue;
                }
                match rank {
                    Rank::Scalar => scalar += w,
                    Rank::Vector => {
                        let pm = projector(m);
                        let ppp = matmul(&pl, &matmul(&pm, &pl));
                        for i in 0..3 {
                            for j in 0..3 {
                                acc[i][j] += w * ppp[i][j];
                            }
                        }
                    }
                }
            }
            let f = -4.0 * PI * PI;
            match rank {
                Rank::Scalar => block[0][0] = f * scalar,
                Rank::Vector => {
                    for i in 0..3 {
                        for j in 0..3 {
                            block[i][j] = f * acc[i][j];
                        }
                    }
                }
            }
        }
        Ok(GridCorrector { rank, blocks })
    }

    /// `S_K u` on the grid.
    pub fn apply(&self, u: &SpectralField) -> Result<SpectralField> {
        self.map(u, |b| *b)
    }

    /// `exp(t S_K) u` on the grid.
    pub fn exp_apply(&self, u: &SpectralField, t: f64) -> Result<SpectralField> {
        match self.rank {
            Rank::Scalar => self.map(u, |b| {
                let mut e = [[0.0; 3]; 3];
                e[0][0] = (t * b[0][0]).exp();
                e
            }),
            Rank::Vector => self.map(u, |b| {
                let mut m = *b;
                m.iter_mut().flatten().for_each(|x| *x *= t);
                mat_exp(&m)
            }),
        }
    }

    fn map<F: Fn(&[[f64; 3]; 3]) -> [[f64; 3]; 3]>(
        &self,
        u: &SpectralField,
        f: F,
    ) -> Result<SpectralField> {
        if u.rank() != self.rank || u.grid().len() != self.blocks.len() {
            return Err(Error::GridMismatch(
                "corrector built for another field shape".into(),
            ));
        }
        let mut out = u.clone();
        let d = u.components().len();
        for (idx, block) in self.blocks.iter().enumerate() {
            let nz = u.components().iter().any(|c| c[idx] != ZERO);
            if !nz {
                continue;
            }
            let b = f(block);
            for i in 0..d {
                let mut s = ZERO;
                for j in 0..d {
                    s += u.components()[j][idx] * b[i][j];
                }
                out.components_mut()[i][idx] = s;
            }
        }
        Ok(out)
    }
}
