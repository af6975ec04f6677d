//! Fourier-truncated fields on the torus `T^d = [0,1)^d`.
//!
//! Coefficients follow `f_hat(k) = n^{-d} sum_j f(x_j) exp(-2 pi i k.x_j)`
//! and are stored in FFT order on an `n^d` array. Only modes with
//! `|k_i| <= K` on every axis may be nonzero; with `n >= 3K + 1` every
//! quadratic product is evaluated without aliasing and then truncated
//! back to `K`, which keeps transport terms exactly skew-symmetric.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{Dim, WaveVector};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Physical grid, mode cutoff and FFT plans.
pub struct Grid {
    dim: Dim,
    n: usize,
    cutoff: i32,
    kvec: Vec<WaveVector>,
    inside: Vec<bool>,
    conj: Vec<usize>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Grid")
            .field("dim", &self.dim)
            .field("n", &self.n)
            .field("cutoff", &self.cutoff)
            .finish()
    }
}

/// Smallest `2^a 3^b` that is at least `m`.
pub fn smooth_size(m: usize) -> usize {
    let mut best = usize::MAX;
    let mut p2 = 1usize;
    while p2 < 2 * m.max(1) {
        let mut p = p2;
        while p < m {
            p *= 3;
        }
        best = best.min(p);
        p2 *= 2;
    }
    best
}

fn freq(i: usize, n: usize) -> i32 {
    if i <= n / 2 {
        i as i32
    } else {
        i as i32 - n as i32
    }
}

impl Grid {
    /// Grid with `n` points per axis and the largest alias-free cutoff.
    pub fn new(dim: Dim, n: usize) -> Result<Arc<Grid>> {
        if n < 4 {
            return Err(invalid(format!(
                "grid needs at least 4 points per axis, got {n}"
            )));
        }
        Grid::with_cutoff_and_size(dim, ((n - 1) / 3) as i32, n)
    }

    /// Grid resolving modes up to `cutoff` on the smallest fast FFT size.
    pub fn with_cutoff(dim: Dim, cutoff: u32) -> Result<Arc<Grid>> {
        let n = smooth_size(3 * cutoff as usize + 1);
        Grid::with_cutoff_and_size(dim, cutoff as i32, n)
    }

    pub fn with_cutoff_and_size(dim: Dim, cutoff: i32, n: usize) -> Result<Arc<Grid>> {
        if cutoff < 1 {
            return Err(invalid("mode cutoff must be at least 1"));
        }
        if n < 3 * cutoff as usize + 1 {
            return Err(Error::Resolution(format!(
                "{n} points cannot dealias products at cutoff {cutoff}"
            )));
        }
        let len = n.pow(dim.get() as u32);
        if len > 1 << 27 {
            return Err(invalid(format!("grid of {len} points is too large")));
        }
        let mut kvec = Vec::with_capacity(len);
        let mut conj = Vec::with_capacity(len);
        for idx in 0..len {
            let (k, c) = match dim {
                Dim::Two => {
                    let (a, b) = (idx / n, idx % n);
                    (
                        WaveVector::new2(freq(a, n), freq(b, n)),
                        ((n - a) % n) * n + (n - b) % n,
                    )
                }
                Dim::Three => {
                    let (a, b, c) = (idx / (n * n), (idx / n) % n, idx % n);
                    (
                        WaveVector::new3(freq(a, n), freq(b, n), freq(c, n)),
                        (((n - a) % n) * n + (n - b) % n) * n + (n - c) % n,
                    )
                }
            };
            kvec.push(k);
            conj.push(c);
        }
        let inside = kvec.iter().map(|k| k.max_abs() <= cutoff).collect();
        let mut planner = FftPlanner::new();
        Ok(Arc::new(Grid {
            dim,
            n,
            cutoff,
            kvec,
            inside,
            conj,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }))
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    /// Points per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Mode cutoff `K`.
    pub fn cutoff(&self) -> i32 {
        self.cutoff
    }

    pub fn len(&self) -> usize {
        self.kvec.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kvec.is_empty()
    }

    pub fn wavevector(&self, idx: usize) -> WaveVector {
        self.kvec[idx]
    }

    pub fn wavevectors(&self) -> &[WaveVector] {
        &self.kvec
    }

    pub fn is_resolved(&self, idx: usize) -> bool {
        self.inside[idx]
    }

    /// Index holding `-k` for the mode at `idx`.
    pub fn conj_index(&self, idx: usize) -> usize {
        self.conj[idx]
    }

    /// Storage index of `k`, if it lies within the cutoff.
    pub fn index_of(&self, k: WaveVector) -> Option<usize> {
        if k.max_abs() > self.cutoff || (self.dim == Dim::Two && k.0[2] != 0) {
            return None;
        }
        let n = self.n as i32;
        let w = |c: i32| (c.rem_euclid(n)) as usize;
        Some(match self.dim {
            Dim::Two => w(k.0[0]) * self.n + w(k.0[1]),
            Dim::Three => (w(k.0[0]) * self.n + w(k.0[1])) * self.n + w(k.0[2]),
        })
    }

    /// Largest `|2 pi k|` within the cutoff.
    pub fn max_wavenumber(&self) -> f64 {
        2.0 * PI * self.cutoff as f64 * (self.dim.get() as f64).sqrt()
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        self.dim == other.dim && self.n == other.n && self.cutoff == other.cutoff
    }

    fn transpose_plane(data: &mut [Complex64], n: usize) {
        for i in 0..n {
            for j in i + 1..n {
                data.swap(i * n + j, j * n + i);
            }
        }
    }

    fn swap_outer_inner(data: &mut [Complex64], n: usize) {
        for a in 0..n {
            for b in 0..n {
                for c in a + 1..n {
                    data.swap((a * n + b) * n + c, (c * n + b) * n + a);
                }
            }
        }
    }

    fn fft_nd(&self, data: &mut [Complex64], inverse: bool) {
        let plan = if inverse {
            &self.inverse
        } else {
            &self.forward
        };
        let mut scratch = vec![ZERO; plan.get_inplace_scratch_len()];
        let n = self.n;
        match self.dim {
            Dim::Two => {
                plan.process_with_scratch(data, &mut scratch);
                Grid::transpose_plane(data, n);
                plan.process_with_scratch(data, &mut scratch);
                Grid::transpose_plane(data, n);
            }
            Dim::Three => {
                plan.process_with_scratch(data, &mut scratch);
                for plane in data.chunks_mut(n * n) {
                    Grid::transpose_plane(plane, n);
                }
                plan.process_with_scratch(data, &mut scratch);
                for plane in data.chunks_mut(n * n) {
                    Grid::transpose_plane(plane, n);
                }
                Grid::swap_outer_inner(data, n);
                plan.process_with_scratch(data, &mut scratch);
                Grid::swap_outer_inner(data, n);
            }
        }
    }

    /// Physical values of two real fields from their coefficients in one
    /// complex transform.
    pub fn to_physical_pair(
        &self,
        a: &[Complex64],
        b: Option<&[Complex64]>,
    ) -> (Vec<f64>, Option<Vec<f64>>) {
        let mut buf: Vec<Complex64> = match b {
            Some(b) => a
                .iter()
                .zip(b)
                .map(|(x, y)| x + Complex64::i() * y)
                .collect(),
            None => a.to_vec(),
        };
        self.fft_nd(&mut buf, true);
        let re = buf.iter().map(|z| z.re).collect();
        let im = b.map(|_| buf.iter().map(|z| z.im).collect());
        (re, im)
    }

    /// Truncated coefficients of two real fields from one complex transform.
    pub fn to_spectral_pair(
        &self,
        f: &[f64],
        g: Option<&[f64]>,
    ) -> (Vec<Complex64>, Option<Vec<Complex64>>) {
        let mut buf: Vec<Complex64> = match g {
            Some(g) => f
                .iter()
                .zip(g)
                .map(|(&x, &y)| Complex64::new(x, y))
                .collect(),
            None => f.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
        };
        self.fft_nd(&mut buf, false);
        let scale = 1.0 / self.len() as f64;
        let mut fa = vec![ZERO; self.len()];
        let mut ga = g.map(|_| vec![ZERO; self.len()]);
        for idx in 0..self.len() {
            if !self.inside[idx] {
                continue;
            }
            let h = buf[idx] * scale;
            let hc = buf[self.conj[idx]].conj() * scale;
            match ga.as_mut() {
                Some(gv) => {
                    fa[idx] = 0.5 * (h + hc);
                    gv[idx] = (h - hc) * Complex64::new(0.0, -0.5);
                }
                None => fa[idx] = 0.5 * (h + hc),
            }
        }
        (fa, ga)
    }

    /// Physical values for a list of real coefficient arrays.
    pub fn to_physical_many(&self, comps: &[&[Complex64]]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(comps.len());
        for pair in comps.chunks(2) {
            let (a, b) = self.to_physical_pair(pair[0], pair.get(1).copied());
            out.push(a);
            if let Some(b) = b {
                out.push(b);
            }
        }
        out
    }

    /// Truncated coefficients for a list of real physical arrays.
    pub fn to_spectral_many(&self, comps: &[&[f64]]) -> Vec<Vec<Complex64>> {
        let mut out = Vec::with_capacity(comps.len());
        for pair in comps.chunks(2) {
            let (a, b) = self.to_spectral_pair(pair[0], pair.get(1).copied());
            out.push(a);
            if let Some(b) = b {
                out.push(b);
            }
        }
        out
    }
}

/// Tensor rank of a field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rank {
    Scalar,
    Vector,
}

/// Real field stored by its truncated Fourier coefficients.
#[derive(Clone, Debug)]
pub struct SpectralField {
    grid: Arc<Grid>,
    comps: Vec<Vec<Complex64>>,
}

impl SpectralField {
    pub fn zeros(grid: &Arc<Grid>, rank: Rank) -> SpectralField {
        let c = match rank {
            Rank::Scalar => 1,
            Rank::Vector => grid.dim.get(),
        };
        SpectralField {
            grid: grid.clone(),
            comps: vec![vec![ZERO; grid.len()]; c],
        }
    }

    /// Field from raw coefficient arrays. Entries outside the cutoff must
    /// vanish and the arrays must describe a real field.
    pub fn from_coefficients(
        grid: &Arc<Grid>,
        comps: Vec<Vec<Complex64>>,
    ) -> Result<SpectralField> {
        if comps.len() != 1 && comps.len() != grid.dim.get() {
            return Err(invalid(format!(
                "{} components do not form a field",
                comps.len()
            )));
        }
        if comps.iter().any(|c| c.len() != grid.len()) {
            return Err(Error::GridMismatch("coefficient array length".into()));
        }
        let f = SpectralField {
            grid: grid.clone(),
            comps,
        };
        for c in &f.comps {
            for (idx, z) in c.iter().enumerate() {
                if !grid.inside[idx] && z.norm() > 0.0 {
                    return Err(Error::Resolution(format!(
                        "coefficient at {} exceeds cutoff {}",
                        grid.kvec[idx], grid.cutoff
                    )));
                }
            }
        }
        Ok(f)
    }

    /// Field with the given coefficients at `k`; `-k` receives the conjugate.
    pub fn from_modes(
        grid: &Arc<Grid>,
        rank: Rank,
        modes: &[(WaveVector, [Complex64; 3])],
    ) -> Result<SpectralField> {
        let mut f = SpectralField::zeros(grid, rank);
        for &(k, v) in modes {
            let i = grid.index_of(k).ok_or_else(|| {
                Error::Resolution(format!("mode {k} outside cutoff {}", grid.cutoff))
            })?;
            let j = grid.conj[i];
            for (c, comp) in f.comps.iter_mut().enumerate() {
                if i == j {
                    comp[i] = Complex64::new(v[c].re, 0.0);
                } else {
                    comp[i] = v[c];
                    comp[j] = v[c].conj();
                }
            }
        }
        Ok(f)
    }

    /// Random real field on modes `1 <= |k| <= cutoff`, normalized in L^2.
    /// Vector fields are projected onto divergence-free fields.
    pub fn random_low_modes(
        grid: &Arc<Grid>,
        rank: Rank,
        cutoff: f64,
        seed: u64,
    ) -> Result<SpectralField> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = SpectralField::zeros(grid, rank);
        let mut any = false;
        for idx in 0..grid.len() {
            let k = grid.kvec[idx];
            if !k.in_half_lattice() || k.norm() > cutoff || !grid.inside[idx] {
                continue;
            }
            any = true;
            let j = grid.conj[idx];
            for comp in f.comps.iter_mut() {
                let z = Complex64::new(
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                );
                comp[idx] = z;
                comp[j] = z.conj();
            }
        }
        if !any {
            return Err(invalid(format!("no resolved modes with |k| <= {cutoff}")));
        }
        if rank == Rank::Vector {
            f = f.leray();
        }
        let n = f.l2_norm();
        if n == 0.0 {
            return Err(invalid("random field vanished"));
        }
        f.scale(1.0 / n);
        Ok(f)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn rank(&self) -> Rank {
        if self.comps.len() == 1 {
            Rank::Scalar
        } else {
            Rank::Vector
        }
    }

    pub fn components(&self) -> &[Vec<Complex64>] {
        &self.comps
    }

    pub fn components_mut(&mut self) -> &mut [Vec<Complex64>] {
        &mut self.comps
    }

    pub fn coefficient(&self, comp: usize, k: WaveVector) -> Complex64 {
        self.grid.index_of(k).map_or(ZERO, |i| self.comps[comp][i])
    }

    pub fn check_compatible(&self, other: &SpectralField) -> Result<()> {
        if !self.grid.same_as(&other.grid) {
            return Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                self.grid, other.grid
            )));
        }
        if self.comps.len() != other.comps.len() {
            return Err(Error::GridMismatch("rank mismatch".into()));
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.comps.iter_mut().flatten().for_each(|z| *z *= s);
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &SpectralField) -> Result<()> {
        self.check_compatible(other)?;
        for (a, b) in self.comps.iter_mut().zip(&other.comps) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
        Ok(())
    }

    /// Multiply every mode by `m(|2 pi k|^2)`.
    pub fn apply_multiplier<F: Fn(f64) -> f64>(&mut self, m: F) {
        let kv = &self.grid.kvec;
        for comp in self.comps.iter_mut() {
            for (idx, z) in comp.iter_mut().enumerate() {
                if *z != ZERO {
                    *z *= m(4.0 * PI * PI * kv[idx].norm_sq() as f64);
                }
            }
        }
    }

    pub fn dot(&self, other: &SpectralField) -> Result<f64> {
        self.check_compatible(other)?;
        let mut s = 0.0;
        for (a, b) in self.comps.iter().zip(&other.comps) {
            for (x, y) in a.iter().zip(b) {
                s += (x * y.conj()).re;
            }
        }
        Ok(s)
    }

    /// `sum_k |2 pi k|^{2s} |f_hat(k)|^2` over nonzero modes.
    pub fn sobolev_sq(&self, s: f64) -> f64 {
        let kv = &self.grid.kvec;
        let mut acc = 0.0;
        for comp in &self.comps {
            for (idx, z) in comp.iter().enumerate() {
                let n2 = kv[idx].norm_sq();
                if n2 == 0 || *z == ZERO {
                    continue;
                }
                let w = if s == 0.0 {
                    1.0
                } else {
                    (4.0 * PI * PI * n2 as f64).powf(s)
                };
                acc += w * z.norm_sqr();
            }
        }
        acc
    }

    /// `sum_k m(|2 pi k|^2) |f_hat(k)|^2` over all modes.
    pub fn weighted_sq<F: Fn(f64) -> f64>(&self, m: F) -> f64 {
        let kv = &self.grid.kvec;
        let mut acc = 0.0;
        for comp in &self.comps {
            for (idx, z) in comp.iter().enumerate() {
                if *z != ZERO {
                    acc += m(4.0 * PI * PI * kv[idx].norm_sq() as f64) * z.norm_sqr();
                }
            }
        }
        acc
    }

    /// `H^s` norm; the zero mode is excluded.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        self.sobolev_sq(s).sqrt()
    }

    /// Squared `L^2` norm including the mean.
    pub fn l2_sq(&self) -> f64 {
        self.comps.iter().flatten().map(|z| z.norm_sqr()).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_sq().sqrt()
    }

    /// Largest modulus of the mean coefficient.
    pub fn mean_abs(&self) -> f64 {
        self.comps.iter().map(|c| c[0].norm()).fold(0.0, f64::max)
    }

    /// Largest `|k . u_hat(k)|` over modes; zero for scalars.
    pub fn divergence_max(&self) -> f64 {
        if self.rank() == Rank::Scalar {
            return 0.0;
        }
        let mut m: f64 = 0.0;
        for idx in 0..self.grid.len() {
            let k = self.grid.kvec[idx].to_f64();
            let mut d = ZERO;
            for (c, comp) in self.comps.iter().enumerate() {
                d += comp[idx] * k[c];
            }
            m = m.max(d.norm());
        }
        m
    }

    /// Largest `|f_hat(-k) - conj(f_hat(k))|`, zero for real fields.
    pub fn reality_defect(&self) -> f64 {
        let mut m: f64 = 0.0;
        for comp in &self.comps {
            for (idx, z) in comp.iter().enumerate() {
                m = m.max((comp[self.grid.conj[idx]] - z.conj()).norm());
            }
        }
        m
    }

    /// Leray projection `u - k (k . u) / |k|^2` per mode.
    pub fn leray(&self) -> SpectralField {
        let mut out = self.clone();
        out.leray_in_place();
        out
    }

    pub fn leray_in_place(&mut self) {
        if self.rank() == Rank::Scalar {
            return;
        }
        let d = self.comps.len();
        for idx in 0..self.grid.len() {
            let k = self.grid.kvec[idx];
            let n2 = k.norm_sq();
            if n2 == 0 {
                continue;
            }
            let kf = k.to_f64();
            let mut s = ZERO;
            for c in 0..d {
                s += self.comps[c][idx] * kf[c];
            }
            if s == ZERO {
                continue;
            }
            s /= n2 as f64;
            for c in 0..d {
                self.comps[c][idx] -= s * kf[c];
            }
        }
    }

    /// Keep only modes with `|k| <= l`.
    pub fn low_pass(&self, l: f64) -> SpectralField {
        let mut out = self.clone();
        let kv = &self.grid.kvec;
        for comp in out.comps.iter_mut() {
            for (idx, z) in comp.iter_mut().enumerate() {
                if kv[idx].norm() > l {
                    *z = ZERO;
                }
            }
        }
        out
    }

    /// Heat semigroup `exp(c t Laplacian)`.
    pub fn heat(&self, c: f64, t: f64) -> Result<SpectralField> {
        if !(c >= 0.0 && t >= 0.0) {
            return Err(invalid(format!(
                "heat semigroup needs c, t >= 0, got {c}, {t}"
            )));
        }
        let mut out = self.clone();
        out.apply_multiplier(|k2| (-c * k2 * t).exp());
        Ok(out)
    }

    /// Damped semigroup `exp(t (Laplacian - 1/eps))`.
    pub fn damped_heat(&self, eps: f64, t: f64) -> Result<SpectralField> {
        if !(eps > 0.0 && t >= 0.0) {
            return Err(invalid("damped semigroup needs eps > 0 and t >= 0"));
        }
        let mut out = self.clone();
        out.apply_multiplier(|k2| (-(1.0 / eps + k2) * t).exp());
        Ok(out)
    }

    /// Physical values, one array per component.
    pub fn to_physical(&self) -> Vec<Vec<f64>> {
        let refs: Vec<&[Complex64]> = self.comps.iter().map(|c| c.as_slice()).collect();
        self.grid.to_physical_many(&refs)
    }

    /// Field from physical values, truncated to the cutoff.
    pub fn from_physical(grid: &Arc<Grid>, values: &[Vec<f64>]) -> Result<SpectralField> {
        if values.iter().any(|v| v.len() != grid.len()) {
            return Err(Error::GridMismatch("physical array length".into()));
        }
        let refs: Vec<&[f64]> = values.iter().map(|v| v.as_slice()).collect();
        SpectralField::from_coefficients(grid, grid.to_spectral_many(&refs))
    }

    /// Physical values of all first derivatives, ordered `[comp][axis]`.
    pub fn gradient_physical(&self) -> Vec<Vec<f64>> {
        let d = self.grid.dim.get();
        let kv = &self.grid.kvec;
        let mut derivs: Vec<Vec<Complex64>> = Vec::with_capacity(self.comps.len() * d);
        for comp in &self.comps {
            for axis in 0..d {
                derivs.push(
                    comp.iter()
                        .enumerate()
                        .map(|(idx, z)| z * Complex64::new(0.0, 2.0 * PI * kv[idx].0[axis] as f64))
                        .collect(),
                );
            }
        }
        let refs: Vec<&[Complex64]> = derivs.iter().map(|c| c.as_slice()).collect();
        self.grid.to_physical_many(&refs)
    }

    /// `Pi_K[(v . grad) self]` for a velocity given by physical values,
    /// followed by the Leray projection when `self` is a vector field.
    pub fn transport_by(&self, velocity: &[Vec<f64>]) -> Result<SpectralField> {
        let d = self.grid.dim.get();
        if velocity.len() != d || velocity.iter().any(|v| v.len() != self.grid.len()) {
            return Err(Error::GridMismatch(
                "velocity must have d physical components".into(),
            ));
        }
        let grads = self.gradient_physical();
        let len = self.grid.len();
        let mut products: Vec<Vec<f64>> = Vec::with_capacity(self.comps.len());
        for c in 0..self.comps.len() {
            let mut p = vec![0.0; len];
            for axis in 0..d {
                let g = &grads[c * d + axis];
                let v = &velocity[axis];
                for i in 0..len {
                    p[i] += v[i] * g[i];
                }
            }
            products.push(p);
        }
        let refs: Vec<&[f64]> = products.iter().map(|v| v.as_slice()).collect();
        let mut out = SpectralField {
            grid: self.grid.clone(),
            comps: self.grid.to_spectral_many(&refs),
        };
        out.leray_in_place();
        Ok(out)
    }

    /// Maximum pointwise Euclidean magnitude.
    pub fn max_magnitude(&self) -> f64 {
        magnitude_max(&self.to_physical())
    }

    /// Serialize as a snapshot (see [`write_snapshot`]).
    pub fn write_snapshot<W: Write>(&self, w: W) -> Result<()> {
        write_snapshot(self, w)
    }
}

/// Maximum pointwise Euclidean magnitude of physical components.
pub fn magnitude_max(phys: &[Vec<f64>]) -> f64 {
    let len = phys.first().map_or(0, |v| v.len());
    (0..len)
        .map(|i| phys.iter().map(|c| c[i] * c[i]).sum::<f64>())
        .fold(0.0, f64::max)
        .sqrt()
}

/// Quadratic term `b(v1, v2) = -Pi[(v1 . grad) v2]`, or `-(v1 . grad) v2`
/// when `v2` is a scalar. `v1` must be divergence-free.
pub fn advect(v1: &SpectralField, v2: &SpectralField) -> Result<SpectralField> {
    if v1.rank() != Rank::Vector {
        return Err(invalid("transporting field must be a vector"));
    }
    if !v1.grid.same_as(&v2.grid) {
        return Err(Error::GridMismatch(
            "advect operands on different grids".into(),
        ));
    }
    let scale = v1.sobolev_norm(1.0).max(1e-300);
    if v1.divergence_max() * 2.0 * PI > 1e-9 * scale {
        return Err(Error::Precondition(
            "transporting field is not divergence-free".into(),
        ));
    }
    let mut out = v2.transport_by(&v1.to_physical())?;
    out.scale(-1.0);
    Ok(out)
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"SHDSNAP1";

/// Write a field as a little-endian snapshot.
///
/// Layout: magic `SHDSNAP1`, `u8` dimension, `u32` grid points per axis,
/// `u32` cutoff, `u8` component count, `u64` record count, then one record
/// per nonzero mode: three `i32` wave vector entries followed by
/// `(re, im)` `f64` pairs for each component.
pub fn write_snapshot<W: Write>(f: &SpectralField, mut w: W) -> Result<()> {
    let g = &f.grid;
    let nz: Vec<usize> = (0..g.len())
        .filter(|&i| f.comps.iter().any(|c| c[i] != ZERO))
        .collect();
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&[g.dim.get() as u8])?;
    w.write_all(&(g.n as u32).to_le_bytes())?;
    w.write_all(&(g.cutoff as u32).to_le_bytes())?;
    w.write_all(&[f.comps.len() as u8])?;
    w.write_all(&(nz.len() as u64).to_le_bytes())?;
    for idx in nz {
        for c in g.kvec[idx].0 {
            w.write_all(&c.to_le_bytes())?;
        }
        for comp in &f.comps {
            w.write_all(&comp[idx].re.to_le_bytes())?;
            w.write_all(&comp[idx].im.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_array<const M: usize, R: Read>(r: &mut R) -> Result<[u8; M]> {
    let mut b = [0u8; M];
    r.read_exact(&mut b)?;
    Ok(b)
}

/// Read a snapshot written by [`write_snapshot`].
pub fn read_snapshot<R: Read>(mut r: R) -> Result<SpectralField> {
    if &read_array::<8, _>(&mut r)? != SNAPSHOT_MAGIC {
        return Err(Error::Format("not a field snapshot".into()));
    }
    let dim = Dim::from_usize(read_array::<1, _>(&mut r)?[0] as usize)?;
    let n = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let cutoff = u32::from_le_bytes(read_array(&mut r)?) as i32;
    let ncomp = read_array::<1, _>(&mut r)?[0] as usize;
    let count = u64::from_le_bytes(read_array(&mut r)?);
    let grid = Grid::with_cutoff_and_size(dim, cutoff, n)?;
    if ncomp != 1 && ncomp != dim.get() {
        return Err(Error::Format(format!("bad component count {ncomp}")));
    }
    let mut comps = vec![vec![ZERO; grid.len()]; ncomp];
    for _ in 0..count {
        let mut k = [0i32; 3];
        for c in k.iter_mut() {
            *c = i32::from_le_bytes(read_array(&mut r)?);
        }
        let idx = grid
            .index_of(WaveVector(k))
            .ok_or_else(|| Error::Format(format!("mode {:?} outside snapshot cutoff", k)))?;
        for comp in comps.iter_mut() {
            let re = f64::from_le_bytes(read_array(&mut r)?);
            let im = f64::from_le_bytes(read_array(&mut r)?);
            comp[idx] = Complex64::new(re, im);
        }
    }
    SpectralField::from_coefficients(&grid, comps)
}
