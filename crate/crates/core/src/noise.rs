//! Keyed Gaussian streams and exact exponential-kernel stochastic integrals.
//!
//! Every Gaussian draw is addressed by `(seed, stage, fine step, k, alpha)`,
//! so two runs with the same seed see the same Brownian path whatever step
//! size they use, as long as both steps are multiples of a shared fine step.

use std::collections::HashMap;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::lattice::{NoiseBasis, WaveVector};

/// Identifies an independent family of Brownian motions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NoiseKey {
    pub seed: u64,
    pub stage: u32,
}

impl NoiseKey {
    pub fn new(seed: u64, stage: u32) -> Self {
        NoiseKey { seed, stage }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash a tuple of words into a stream seed.
pub fn mix(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x2545_f491_4f6c_dd1d, |h, &w| splitmix(h ^ splitmix(w)))
}

/// Deterministic generator for one `(key, step, k, alpha)` cell.
pub fn cell_rng(key: NoiseKey, step: u64, k: WaveVector, alpha: usize) -> ChaCha8Rng {
    let s = mix(&[
        key.seed,
        key.stage as u64,
        step,
        k.0[0] as i64 as u64,
        k.0[1] as i64 as u64,
        k.0[2] as i64 as u64,
        alpha as u64,
    ]);
    ChaCha8Rng::seed_from_u64(s)
}

/// `(1 - exp(-a h)) / a`, equal to `h` at `a = 0`.
pub fn phi1(a: f64, h: f64) -> f64 {
    if a == 0.0 {
        h
    } else {
        -(-a * h).exp_m1() / a
    }
}

/// Lower Cholesky factor of the covariance of `int_0^h exp(-r_i (h - s)) dB_s`.
fn kernel_cholesky(rates: &[f64], h: f64) -> Vec<f64> {
    let m = rates.len();
    let mut c = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            c[i * m + j] = phi1(rates[i] + rates[j], h);
        }
    }
    let mut l = vec![0.0; m * m];
    for j in 0..m {
        let mut d = c[j * m + j];
        for p in 0..j {
            d -= l[j * m + p] * l[j * m + p];
        }
        let scale = c[j * m + j].max(f64::MIN_POSITIVE);
        if d <= 1e-14 * scale {
            continue;
        }
        let djj = d.sqrt();
        l[j * m + j] = djj;
        for i in j + 1..m {
            let mut s = c[i * m + j];
            for p in 0..j {
                s -= l[i * m + p] * l[j * m + p];
            }
            l[i * m + j] = s / djj;
        }
    }
    l
}

/// Sampler for jointly Gaussian kernel integrals on a shell.
///
/// For each mode the caller supplies decay rates `r_1..r_m`; a coarse step
/// of length `ratio * h` returns `int exp(-r_j (t_end - s)) dW^{k,alpha}_s`
/// for every `j`, aggregated exactly from `ratio` fine cells of length `h`.
/// A rate of zero yields the plain increment `Delta W`.
#[derive(Clone, Debug)]
pub struct KernelPlan {
    h: f64,
    ratio: u64,
    kernels: usize,
    rates: Vec<Vec<f64>>,
    chol: Vec<usize>,
    factors: Vec<Vec<f64>>,
}

impl KernelPlan {
    pub fn new<F>(basis: &NoiseBasis, h: f64, ratio: u64, rates: F) -> Result<KernelPlan>
    where
        F: Fn(WaveVector) -> Vec<f64>,
    {
        if !(h > 0.0 && h.is_finite()) || ratio == 0 {
            return Err(invalid("kernel plan needs a positive fine step and ratio"));
        }
        let mut cache: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut factors = Vec::new();
        let mut chol = Vec::with_capacity(basis.kappa());
        let mut all = Vec::with_capacity(basis.kappa());
        let mut kernels = None;
        for m in basis.modes() {
            let r = rates(m.k);
            if r.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(invalid("kernel rates must be finite and non-negative"));
            }
            match kernels {
                None => kernels = Some(r.len()),
                Some(n) if n != r.len() => {
                    return Err(invalid("kernel count must not vary by mode"))
                }
                _ => {}
            }
            let key: Vec<u64> = r.iter().map(|x| x.to_bits()).collect();
            let idx = *cache.entry(key).or_insert_with(|| {
                factors.push(kernel_cholesky(&r, h));
                factors.len() - 1
            });
            chol.push(idx);
            all.push(r);
        }
        Ok(KernelPlan {
            h,
            ratio,
            kernels: kernels.unwrap_or(0),
            rates: all,
            chol,
            factors,
        })
    }

    pub fn coarse_dt(&self) -> f64 {
        self.h * self.ratio as f64
    }

    pub fn kernels(&self) -> usize {
        self.kernels
    }

    /// Draw the integrals for coarse step `step`; output is indexed
    /// `[kernel][mode * polarizations + alpha]`.
    pub fn sample(&self, basis: &NoiseBasis, key: NoiseKey, step: u64) -> Vec<Vec<Complex64>> {
        let p = basis.polarizations();
        let m = self.kernels;
        let mut out = vec![vec![Complex64::new(0.0, 0.0); basis.kappa() * p]; m];
        let mut z = vec![0.0; 2 * m];
        let mut acc = vec![0.0; 2 * m];
        for &i in basis.half_indices() {
            let mode = &basis.modes()[i];
            let l = &self.factors[self.chol[i]];
            let rates = &self.rates[i];
            for alpha in 0..p {
                acc.iter_mut().for_each(|x| *x = 0.0);
                for j in 0..self.ratio {
                    let fine = step * self.ratio + j;
                    let mut rng = cell_rng(key, fine, mode.k, alpha);
                    for zi in z.iter_mut() {
                        *zi = StandardNormal.sample(&mut rng);
                    }
                    let lag = (self.ratio - 1 - j) as f64 * self.h;
                    for r in 0..m {
                        let decay = (-rates[r] * lag).exp();
                        let (mut re, mut im) = (0.0, 0.0);
                        for c in 0..=r {
                            re += l[r * m + c] * z[c];
                            im += l[r * m + c] * z[m + c];
                        }
                        acc[r] += decay * re;
                        acc[m + r] += decay * im;
                    }
                }
                for r in 0..m {
                    let v = Complex64::new(acc[r], acc[m + r]);
                    out[r][i * p + alpha] = v;
                    out[r][mode.conj * p + alpha] = v.conj();
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_shell, Dim};

    #[test]
    fn phi1_limits() {
        assert_eq!(phi1(0.0, 0.3), 0.3);
        assert!((phi1(1e-12, 0.3) - 0.3).abs() < 1e-12);
        assert!((phi1(2.0, 0.5) - (1.0 - (-1.0f64).exp()) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn cholesky_reproduces_covariance() {
        let rates = [0.0, 3.0, 40.0];
        let h = 0.07;
        let l = kernel_cholesky(&rates, h);
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = (0..3).map(|p| l[i * 3 + p] * l[j * 3 + p]).sum();
                let want = phi1(rates[i] + rates[j], h);
                assert!((s - want).abs() < 1e-14, "{i}{j}: {s} vs {want}");
            }
        }
    }

    #[test]
    fn aggregation_matches_fine_sum() {
        let basis = build_shell(1, Dim::Two).unwrap();
        let key = NoiseKey::new(11, 2);
        let fine = KernelPlan::new(&basis, 0.01, 1, |_| vec![0.0, 5.0]).unwrap();
        let coarse = KernelPlan::new(&basis, 0.01, 4, |_| vec![0.0, 5.0]).unwrap();
        let c = coarse.sample(&basis, key, 1);
        let mut w = vec![Complex64::new(0.0, 0.0); basis.kappa()];
        let mut j = w.clone();
        for s in 4..8u64 {
            let f = fine.sample(&basis, key, s);
            let decay = (-5.0 * 0.01 * (7 - s) as f64).exp();
            for i in 0..w.len() {
                w[i] += f[0][i];
                j[i] += f[1][i] * decay;
            }
        }
        for i in 0..w.len() {
            assert!((w[i] - c[0][i]).norm() < 1e-13);
            assert!((j[i] - c[1][i]).norm() < 1e-13);
        }
    }

    #[test]
    fn streams_are_reproducible() {
        let k = WaveVector::new2(1, 0);
        let a: f64 = StandardNormal.sample(&mut cell_rng(NoiseKey::new(1, 0), 3, k, 0));
        let b: f64 = StandardNormal.sample(&mut cell_rng(NoiseKey::new(1, 0), 3, k, 0));
        let c: f64 = StandardNormal.sample(&mut cell_rng(NoiseKey::new(1, 0), 4, k, 0));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
