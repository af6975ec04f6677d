use std::sync::Arc;

use proptest::prelude::*;
use shelldiss::corrector::{apply_corrector_exact, GridCorrector, ModalField};
use shelldiss::expm::transport_exponential;
use shelldiss::lattice::{build_shell, divergence_free_basis, Dim, WaveVector};
use shelldiss::noise::NoiseKey;
use shelldiss::spectral::{Grid, Rank, SpectralField};
use shelldiss::velocity::{VelocityKind, VelocityState, VelocityStepper};

fn grid2(k: u32) -> Arc<Grid> {
    Grid::with_cutoff(Dim::Two, k).unwrap()
}

fn dim_of(three: bool) -> Dim {
    if three {
        Dim::Three
    } else {
        Dim::Two
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn leray_is_an_idempotent_projection(seed in any::<u64>(), three in any::<bool>()) {
        let g = Grid::with_cutoff(dim_of(three), 4).unwrap();
        let mut raw = SpectralField::random_low_modes(&g, Rank::Vector, 3.0, seed).unwrap();
        // Add a gradient part so the projection has something to remove.
        let grad = SpectralField::random_low_modes(&g, Rank::Scalar, 3.0, seed ^ 1).unwrap();
        let phys = grad.gradient_physical();
        raw.axpy(1.0, &SpectralField::from_physical(&g, &phys).unwrap()).unwrap();
        let p = raw.leray();
        let pp = p.leray();
        prop_assert!(p.divergence_max() < 1e-10);
        let mut d = pp.clone();
        d.axpy(-1.0, &p).unwrap();
        prop_assert!(d.l2_norm() < 1e-13 * p.l2_norm().max(1.0));
        prop_assert!(p.l2_sq() <= raw.l2_sq() * (1.0 + 1e-12));
    }

    #[test]
    fn transport_is_skew(seed in any::<u64>(), three in any::<bool>(), vector in any::<bool>()) {
        let g = Grid::with_cutoff(dim_of(three), 5).unwrap();
        let rank = if vector { Rank::Vector } else { Rank::Scalar };
        let f = SpectralField::random_low_modes(&g, rank, 4.0, seed).unwrap();
        let v = SpectralField::random_low_modes(&g, Rank::Vector, 3.0, seed.wrapping_add(7)).unwrap();
        let a = f.transport_by(&v.to_physical()).unwrap();
        let s = a.dot(&f).unwrap();
        prop_assert!(s.abs() < 1e-11 * a.l2_norm().max(1.0), "{}", s);
    }

    #[test]
    fn transport_exponential_is_unitary_and_invertible(seed in any::<u64>(), amp in 0.01f64..0.3) {
        let g = grid2(8);
        let f = SpectralField::random_low_modes(&g, Rank::Scalar, 4.0, seed).unwrap();
        let v = SpectralField::random_low_modes(&g, Rank::Vector, 2.0, seed ^ 9).unwrap();
        let mut d = v.to_physical();
        d.iter_mut().flatten().for_each(|x| *x *= amp);
        let (out, _) = transport_exponential(&f, &d, 1e-15).unwrap();
        prop_assert!((out.l2_sq() - f.l2_sq()).abs() < 1e-12);
        d.iter_mut().flatten().for_each(|x| *x = -*x);
        let (back, _) = transport_exponential(&out, &d, 1e-15).unwrap();
        let mut diff = back.clone();
        diff.axpy(-1.0, &f).unwrap();
        prop_assert!(diff.l2_norm() < 1e-11);
    }

    #[test]
    fn interpolation_inequality(seed in any::<u64>(), cutoff in 1.0f64..6.0) {
        let g = grid2(6);
        let f = SpectralField::random_low_modes(&g, Rank::Scalar, cutoff, seed).unwrap();
        let l2 = f.l2_sq();
        prop_assert!(l2 * l2 <= f.sobolev_sq(1.0) * f.sobolev_sq(-1.0) * (1.0 + 1e-12));
    }

    #[test]
    fn corrector_is_dissipative(seed in any::<u64>(), n in 1u32..4, three in any::<bool>(), vector in any::<bool>()) {
        let dim = dim_of(three);
        let basis = build_shell(n, dim).unwrap();
        let rank = if vector { Rank::Vector } else { Rank::Scalar };
        let g = Grid::with_cutoff(dim, 2).unwrap();
        let u = ModalField::from_spectral(&SpectralField::random_low_modes(&g, rank, 2.0, seed).unwrap());
        let s = apply_corrector_exact(&u, &basis).unwrap();
        let mut pairing = 0.0;
        for (k, v) in &u.coeffs {
            let w = s.coeffs[k];
            for c in 0..3 {
                pairing += (w[c] * v[c].conj()).re;
            }
        }
        prop_assert!(pairing < 0.0);
        // The pairing is bounded by the scalar rate c_d kappa |2 pi l|^2.
        let bound = dim.scalar_constant() * basis.kappa() as f64 * u.sobolev_sq(1.0);
        prop_assert!(-pairing <= bound * (1.0 + 1e-12));
    }

    #[test]
    fn polarizations_complete_the_transverse_plane(a in -9i32..10, b in -9i32..10, c in -9i32..10, three in any::<bool>()) {
        let dim = dim_of(three);
        let k = if three { WaveVector::new3(a, b, c) } else { WaveVector::new2(a, b) };
        prop_assume!(!k.is_zero());
        let basis = divergence_free_basis(k, dim);
        let kf = k.to_f64();
        let n2 = k.norm_sq() as f64;
        for i in 0..dim.get() {
            for j in 0..dim.get() {
                let s: f64 = basis.iter().take(dim.polarizations()).map(|e| e[i] * e[j]).sum();
                let want = if i == j { 1.0 } else { 0.0 } - kf[i] * kf[j] / n2;
                prop_assert!((s - want).abs() < 1e-14);
            }
        }
        prop_assert_eq!(divergence_free_basis(-k, dim), basis);
    }

    #[test]
    fn grid_corrector_matches_double_sum(seed in any::<u64>(), n in 1u32..3, vector in any::<bool>()) {
        // With every intermediate mode l - k resolved, the Galerkin corrector
        // and the literal double sum coincide.
        let basis = build_shell(n, Dim::Two).unwrap();
        let g = Grid::with_cutoff(Dim::Two, 2 + 2 * n).unwrap();
        let rank = if vector { Rank::Vector } else { Rank::Scalar };
        let u = SpectralField::random_low_modes(&g, rank, 2.0, seed).unwrap();
        let grid_s = GridCorrector::new(&basis, &g, rank).unwrap().apply(&u).unwrap();
        let exact = apply_corrector_exact(&ModalField::from_spectral(&u), &basis).unwrap();
        let got = ModalField::from_spectral(&grid_s);
        let err = exact.sub(&got).max_abs();
        prop_assert!(err < 1e-9 * exact.max_abs(), "{}", err);
    }

    #[test]
    fn noise_aggregates_over_fine_cells(seed in any::<u64>(), step in 0u64..50) {
        // A coarse step of two cells equals the sum of the two fine steps.
        let g = grid2(4);
        let basis = Arc::new(build_shell(1, Dim::Two).unwrap());
        let state = VelocityState::new(VelocityKind::Transport, &g, 1.0, 0, 0.0).unwrap();
        let key = NoiseKey::new(seed, 0);
        let mut fine = VelocityStepper::new(&state, basis.clone(), &g, key, 1e-3, 1e-3).unwrap();
        let mut coarse = VelocityStepper::new(&state, basis, &g, key, 1e-3, 2e-3).unwrap();
        let mut s = state.clone();
        let mut total = SpectralField::zeros(&g, Rank::Vector);
        for _ in 0..2 * (step + 1) {
            let inc = fine.advance(&mut s).unwrap().increment;
            total.axpy(1.0, &inc).unwrap();
        }
        let mut sum = SpectralField::zeros(&g, Rank::Vector);
        for _ in 0..step + 1 {
            sum.axpy(1.0, &coarse.advance(&mut s).unwrap().increment).unwrap();
        }
        total.axpy(-1.0, &sum).unwrap();
        prop_assert!(total.l2_norm() < 1e-12);
    }
}
