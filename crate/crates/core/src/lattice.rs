//! Shell lattices, divergence-free bases and complex Brownian drivers.
//!
//! A shell of radius `N` is the set of integer wave vectors `k` with
//! `N <= |k| <= 2N`. Each `k` carries `d - 1` unit vectors orthogonal to
//! `k`; the vectors of `k` and `-k` coincide so that the noise fields
//! `a e_k + a e_{-k}` are real.

use std::collections::HashMap;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::noise::{KernelPlan, NoiseKey};

/// Spatial dimension of the torus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Dim {
    Two,
    Three,
}

impl Dim {
    pub fn get(self) -> usize {
        match self {
            Dim::Two => 2,
            Dim::Three => 3,
        }
    }

    /// Number of divergence-free polarizations per wave vector.
    pub fn polarizations(self) -> usize {
        self.get() - 1
    }

    pub fn from_usize(d: usize) -> Result<Dim> {
        match d {
            2 => Ok(Dim::Two),
            3 => Ok(Dim::Three),
            _ => Err(invalid(format!("dimension must be 2 or 3, got {d}"))),
        }
    }

    /// Scalar corrector constant: `S(rho) = c_d kappa Laplacian(rho)`.
    pub fn scalar_constant(self) -> f64 {
        (self.get() as f64 - 1.0) / self.get() as f64
    }
}

impl TryFrom<u8> for Dim {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        Dim::from_usize(v as usize).map_err(|e| e.to_string())
    }
}

impl From<Dim> for u8 {
    fn from(d: Dim) -> u8 {
        d.get() as u8
    }
}

/// Integer wave vector. In two dimensions the third entry is zero.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct WaveVector(pub [i32; 3]);

impl WaveVector {
    pub const ZERO: WaveVector = WaveVector([0, 0, 0]);

    pub fn new2(a: i32, b: i32) -> Self {
        WaveVector([a, b, 0])
    }

    pub fn new3(a: i32, b: i32, c: i32) -> Self {
        WaveVector([a, b, c])
    }

    pub fn norm_sq(self) -> i64 {
        self.0.iter().map(|&c| (c as i64) * (c as i64)).sum()
    }

    pub fn norm(self) -> f64 {
        (self.norm_sq() as f64).sqrt()
    }

    pub fn is_zero(self) -> bool {
        self.0 == [0, 0, 0]
    }

    pub fn to_f64(self) -> [f64; 3] {
        [self.0[0] as f64, self.0[1] as f64, self.0[2] as f64]
    }

    pub fn dot(self, v: &[f64; 3]) -> f64 {
        let k = self.to_f64();
        k[0] * v[0] + k[1] * v[1] + k[2] * v[2]
    }

    pub fn max_abs(self) -> i32 {
        self.0.iter().map(|c| c.abs()).max().unwrap_or(0)
    }

    /// Membership in the half-lattice: the first nonzero entry is positive.
    pub fn in_half_lattice(self) -> bool {
        self.0.iter().find(|&&c| c != 0).is_some_and(|&c| c > 0)
    }
}

impl std::ops::Neg for WaveVector {
    type Output = WaveVector;
    fn neg(self) -> WaveVector {
        WaveVector([-self.0[0], -self.0[1], -self.0[2]])
    }
}

impl std::ops::Add for WaveVector {
    type Output = WaveVector;
    fn add(self, o: WaveVector) -> WaveVector {
        WaveVector([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl std::ops::Sub for WaveVector {
    type Output = WaveVector;
    fn sub(self, o: WaveVector) -> WaveVector {
        self + (-o)
    }
}

impl fmt::Display for WaveVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.0[0], self.0[1], self.0[2])
    }
}

pub(crate) fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = dot3(&v, &v).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Orthonormal basis of the plane (or line) orthogonal to `k`.
///
/// For `k` in the half-lattice the three-dimensional frame
/// `(a_1, a_2, k/|k|)` is right-handed. Vectors outside the half-lattice
/// reuse the basis of `-k`.
pub fn divergence_free_basis(k: WaveVector, dim: Dim) -> [[f64; 3]; 2] {
    assert!(!k.is_zero(), "basis of the zero mode is undefined");
    let k = if k.in_half_lattice() { k } else { -k };
    let kf = k.to_f64();
    match dim {
        Dim::Two => {
            let n = k.norm();
            [[-kf[1] / n, kf[0] / n, 0.0], [0.0; 3]]
        }
        Dim::Three => {
            let reference = if k.0[0] == 0 && k.0[1] == 0 {
                [1.0, 0.0, 0.0]
            } else {
                [0.0, 0.0, 1.0]
            };
            let a1 = normalize(cross(&reference, &kf));
            let khat = normalize(kf);
            let a2 = cross(&khat, &a1);
            [a1, a2]
        }
    }
}

/// Integer vectors `k` with `n <= |k| <= 2n`, in lexicographic order.
pub fn shell_vectors(n: u32, dim: Dim) -> Vec<WaveVector> {
    let r = 2 * n as i32;
    let lo = (n as i64) * (n as i64);
    let hi = 4 * lo;
    let zr = if dim == Dim::Three { r } else { 0 };
    let mut out = Vec::new();
    for a in -r..=r {
        for b in -r..=r {
            for c in -zr..=zr {
                let k = WaveVector([a, b, c]);
                let s = k.norm_sq();
                if s >= lo && s <= hi {
                    out.push(k);
                }
            }
        }
    }
    out
}

/// One wave vector of a shell with its polarizations.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShellMode {
    pub k: WaveVector,
    pub bases: [[f64; 3]; 2],
    /// Index of `-k` in the owning basis.
    pub conj: usize,
}

/// Enumerated shell with divergence-free polarizations.
#[derive(Clone, Debug)]
pub struct NoiseBasis {
    dim: Dim,
    radius: u32,
    modes: Vec<ShellMode>,
    half: Vec<usize>,
    index: HashMap<WaveVector, usize>,
}

/// Shells above this many vectors are refused.
const MAX_SHELL_VECTORS: usize = 50_000_000;

/// Build the shell of radius `n` together with its bases.
pub fn build_shell(n: u32, dim: Dim) -> Result<NoiseBasis> {
    if n == 0 {
        return Err(invalid("shell radius must be positive"));
    }
    let estimate = match dim {
        Dim::Two => 3.0 * std::f64::consts::PI * (n as f64).powi(2),
        Dim::Three => 28.0 * std::f64::consts::PI / 3.0 * (n as f64).powi(3),
    };
    if estimate > MAX_SHELL_VECTORS as f64 {
        return Err(invalid(format!(
            "shell of radius {n} has about {estimate:.3e} vectors, above the enumeration limit"
        )));
    }
    let ks = shell_vectors(n, dim);
    let index: HashMap<WaveVector, usize> = ks.iter().enumerate().map(|(i, &k)| (k, i)).collect();
    let modes: Vec<ShellMode> = ks
        .iter()
        .map(|&k| ShellMode {
            k,
            bases: divergence_free_basis(k, dim),
            conj: index[&(-k)],
        })
        .collect();
    let half = modes
        .iter()
        .enumerate()
        .filter(|(_, m)| m.k.in_half_lattice())
        .map(|(i, _)| i)
        .collect();
    Ok(NoiseBasis {
        dim,
        radius: n,
        modes,
        half,
        index,
    })
}

impl NoiseBasis {
    pub fn dim(&self) -> Dim {
        self.dim
    }

    /// Shell radius `N`.
    pub fn radius(&self) -> u32 {
        self.radius
    }

    /// Cardinality `kappa` of the shell.
    pub fn kappa(&self) -> usize {
        self.modes.len()
    }

    /// Noise amplitude `theta_k`, identically one on the shell.
    pub fn theta(&self) -> f64 {
        1.0
    }

    pub fn modes(&self) -> &[ShellMode] {
        &self.modes
    }

    /// Indices of the modes in the half-lattice.
    pub fn half_indices(&self) -> &[usize] {
        &self.half
    }

    pub fn index_of(&self, k: WaveVector) -> Option<usize> {
        self.index.get(&k).copied()
    }

    pub fn polarizations(&self) -> usize {
        self.dim.polarizations()
    }

    /// Largest component magnitude over the shell.
    pub fn max_component(&self) -> i32 {
        self.modes.iter().map(|m| m.k.max_abs()).max().unwrap_or(0)
    }
}

/// Complex Brownian increments `Delta W^{k,alpha}` over one step.
///
/// Entries are stored at `mode * polarizations + alpha`, and
/// `W^{-k} = conj(W^k)`.
#[derive(Clone, Debug)]
pub struct DriverIncrement {
    pub dt: f64,
    pub values: Vec<Complex64>,
}

impl DriverIncrement {
    pub fn get(&self, basis: &NoiseBasis, mode: usize, alpha: usize) -> Complex64 {
        self.values[mode * basis.polarizations() + alpha]
    }
}

/// Sample the driver increments for step `step` of the stream `key`.
pub fn sample_driver(
    basis: &NoiseBasis,
    dt: f64,
    key: NoiseKey,
    step: u64,
) -> Result<DriverIncrement> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid(format!("time step must be positive, got {dt}")));
    }
    let plan = KernelPlan::new(basis, dt, 1, |_| vec![0.0])?;
    let mut out = plan.sample(basis, key, step);
    Ok(DriverIncrement {
        dt,
        values: out.swap_remove(0),
    })
}
