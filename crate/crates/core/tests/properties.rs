//! Randomized invariants, 100 cases per property.

use std::f64::consts::PI;

use itertools::Itertools;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use beamplace::anc::{corrected_modes, MassLoad};
use beamplace::control::{self, ControlCase, ControlSettings, ModalBasis};
use beamplace::design::{self, DesignSettings, SurrogateSettings};
use beamplace::dmd::{self, build_shifted_snapshots, fit_dmd};
use beamplace::hankel::{self, LtiSystem};
use beamplace::placement::{self, HankelRoute, PlacementProblem};
use beamplace::spectrum;
use beamplace::truth::{self, ModalComponent, ModeSet, ModeSpec};

fn cfg() -> ProptestConfig {
    ProptestConfig { cases: 100, ..ProptestConfig::default() }
}

fn reference_subset(mask: u16) -> Vec<ModeSpec> {
    ModeSet::reference().modes().iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, m)| *m).collect()
}

fn system(seed: u64, n: usize, m: usize, p: usize) -> LtiSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    hankel::random_stable_system(&mut rng, n, m, p, 1.0).unwrap()
}

fn output_matrix(seed: u64, rows: usize, cols: usize) -> DMatrix<f64> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

// truth model

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn superposition(mask in 1u16..1023, split in 1u16..1023, n_nodes in 2usize..12, t in 0.01f64..0.3) {
        let a = mask & split;
        let b = mask & !split;
        prop_assume!(a != 0 && b != 0);
        let st = |m: u16| truth::simulate(&ModeSet::new(reference_subset(m), 1.0).unwrap(), n_nodes, 1.0 / 4000.0, t).unwrap();
        let (all, pa, pb) = (st(mask), st(a), st(b));
        let sum = pa.values() + pb.values();
        let scale = all.values().amax().max(1e-300);
        prop_assert!((all.values() - sum).amax() <= 1e-12 * scale);
    }

    #[test]
    fn isolated_mode_decay_envelope(i in 0usize..10, n_nodes in 2usize..10, t in 0.05f64..1.0) {
        let m = ModeSet::reference().modes()[i];
        let set = ModeSet::new(vec![m], 1.0).unwrap();
        let dt = 1.0 / 4000.0;
        let d = truth::simulate(&set, n_nodes, dt, t).unwrap();
        let tip = d.n_nodes() - 1;
        let phi_tip = set.shape(0, 1.0).abs();
        for k in 0..d.n_t() {
            let env = m.amplitude * phi_tip * (-m.zeta * m.omega_n() * d.time(k)).exp() + 1e-12;
            prop_assert!(d.values()[(tip, k)].abs() <= env);
        }
    }

    #[test]
    fn root_row_is_zero(mask in 1u16..1023, n_nodes in 2usize..20) {
        let d = truth::simulate(&ModeSet::new(reference_subset(mask), 1.0).unwrap(), n_nodes, 1.0 / 4000.0, 0.05).unwrap();
        prop_assert!(d.values().row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn early_half_carries_more_energy(mask in 1u16..1023, n_nodes in 2usize..10, periods in 3.0f64..8.0) {
        let set = ModeSet::new(reference_subset(mask), 1.0).unwrap();
        let t = periods / set.modes()[0].freq_hz;
        let d = truth::simulate(&set, n_nodes, 1.0 / 4000.0, t).unwrap();
        let h = d.n_t() / 2;
        let e = |a: usize, b: usize| -> f64 { (a..b).map(|k| d.values().column(k).norm_squared()).sum() };
        prop_assert!(e(0, h) >= e(h, 2 * h));
    }
}

// DMD

fn synthetic(freqs: &[f64], zetas: &[f64], n_nodes: usize, dt: f64, n_t: usize) -> truth::SnapshotData {
    let node_x = truth::uniform_mesh(n_nodes, 1.0).unwrap();
    let comps: Vec<ModalComponent> = freqs
        .iter()
        .zip(zetas)
        .enumerate()
        .map(|(i, (&f, &z))| ModalComponent {
            shape: node_x.iter().map(|x| (PI * (i as f64 + 0.5) * x).sin()).collect(),
            amplitude: 1.0 / (i as f64 + 1.0),
            freq_hz: f,
            zeta: z,
        })
        .collect();
    truth::synthesize(&comps, node_x, dt, n_t).unwrap()
}

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn exact_recovery_of_generating_eigenvalues(
        k in 1usize..=3,
        f0 in 2.0f64..10.0,
        gaps in prop::collection::vec(5.0f64..30.0, 2),
        zetas in prop::collection::vec(0.0f64..0.05, 3),
    ) {
        let dt = 1e-3;
        let mut freqs = vec![f0];
        for g in gaps.iter().take(k - 1) {
            freqs.push(freqs.last().unwrap() + g);
        }
        let data = synthetic(&freqs, &zetas[..k], 8, dt, 300);
        let model = fit_dmd(&build_shifted_snapshots(&data, 2).unwrap(), 2 * k).unwrap();
        for (f, z) in freqs.iter().zip(&zetas) {
            let wn = 2.0 * PI * f / (1.0 - z * z).sqrt();
            let want = num_complex::Complex64::new(-z * wn * dt, 2.0 * PI * f * dt).exp();
            let err = model.eigenvalues().iter().map(|l| (l - want).norm()).fold(f64::INFINITY, f64::min);
            prop_assert!(err <= 1e-6 * want.norm(), "missing {want} (err {err})");
        }
    }

    #[test]
    fn eigenvalues_are_conjugate_closed(mask in 1u16..63, rank in 1usize..9, stacks in 1usize..3) {
        let set = ModeSet::new(reference_subset(mask), 1.0).unwrap();
        let data = truth::simulate(&set, 6, 1.0 / 4000.0, 0.4).unwrap().decimate(8).unwrap();
        let model = match fit_dmd(&build_shifted_snapshots(&data, stacks).unwrap(), rank) {
            Ok(m) => m,
            Err(e) => { prop_assert!(e.is_validation()); return Ok(()); }
        };
        let lam = model.eigenvalues();
        for l in lam {
            let d = lam.iter().map(|m| (m - l.conj()).norm()).fold(f64::INFINITY, f64::min);
            prop_assert!(d <= 1e-10 * l.norm().max(1.0));
        }
    }

    #[test]
    fn energy_fraction_is_monotone(sv in prop::collection::vec(1e-6f64..10.0, 1..30)) {
        let mut sv = sv;
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mut last = 0.0;
        for k in 1..=sv.len() {
            let f = dmd::energy_fraction(&sv, k).unwrap();
            prop_assert!(f >= last);
            last = f;
        }
        prop_assert_eq!(last, 1.0);
    }

    #[test]
    fn residual_does_not_grow_with_rank(mask in 1u16..63, stacks in 2usize..4) {
        let set = ModeSet::new(reference_subset(mask), 1.0).unwrap();
        // retained rank = two real dimensions per generating mode, sampled
        // below Nyquist
        let data = truth::simulate(&set, 8, 1.0 / 4000.0, 0.5).unwrap().decimate(4).unwrap();
        let snap = build_shifted_snapshots(&data, stacks).unwrap();
        let full = 2 * set.len();
        let steps: Vec<usize> = (0..data.n_t() - stacks + 1).collect();
        let rows: Vec<usize> = (0..data.n_nodes()).collect();
        let residual = |r: usize| -> f64 {
            let m = fit_dmd(&snap, r).unwrap();
            let rec = m.reconstruct(&steps, &rows).unwrap();
            (rec - data.values().columns(0, steps.len())).norm()
        };
        let top = residual(full);
        for r in 1..full {
            let low = residual(r);
            prop_assert!(top <= low * (1.0 + 1e-9) + 1e-12, "rank {} residual {} vs full {}", r, low, top);
        }
    }
}

// Hankel and Gramians

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn markov_hankel_factorizes(seed in any::<u64>(), n in 1usize..7, m in 1usize..4, p in 1usize..4, s in 1usize..10, r in 1usize..10) {
        let sys = system(seed, n, m, p);
        let h = hankel::build_hankel_markov(&hankel::markov_params(&sys, s + r - 1).unwrap(), s, r).unwrap();
        let f = sys.observability_matrix(s) * sys.controllability_matrix(r);
        prop_assert!((h - f).amax() <= 1e-12);
    }

    #[test]
    fn hankel_and_gramian_spectra_agree(seed in any::<u64>(), n in 1usize..7, m in 1usize..4, p in 1usize..4) {
        let sys = system(seed, n, m, p);
        let rep = hankel::verify_spectrum_equivalence(&sys, 2 * n, 2 * n, 1e-8).unwrap();
        prop_assert!(rep.pass, "deviation {}", rep.max_rel_dev);
    }

    #[test]
    fn gramian_increments_decay_with_rho_squared(seed in any::<u64>(), n in 1usize..6, m in 1usize..3) {
        // A is symmetric here, so ‖A X Aᵀ‖ ≤ ρ²‖X‖ holds term by term
        let sys = system(seed, n, m, 1);
        let rho = sys.spectral_radius().unwrap();
        let w: Vec<DMatrix<f64>> = (1..=12).map(|r| hankel::finite_gramians(&sys, 1, r).unwrap().0).collect();
        let floor = 1e-13 * w[11].norm();
        for r in 1..10 {
            let (a, b) = ((&w[r] - &w[r - 1]).norm(), (&w[r + 1] - &w[r]).norm());
            prop_assert!(b <= rho * rho * a * (1.0 + 1e-9) + floor);
        }
    }

    #[test]
    fn output_hankel_permutation_keeps_spectrum(seed in any::<u64>(), rows in 2usize..6, s in 1usize..5, shuffle in any::<u64>()) {
        let y = output_matrix(seed, rows, 4 * s + 3);
        let subset: Vec<usize> = (0..rows).collect();
        let mut perm = subset.clone();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle));
        let a = hankel::build_output_hankel(&y, &subset, s).unwrap();
        let b = hankel::build_output_hankel(&y, &perm, s).unwrap();
        for (k, &row) in perm.iter().enumerate() {
            prop_assert_eq!(b.rows(k * s, s), a.rows(row * s, s));
        }
        let sa = a.singular_values();
        let sb = b.singular_values();
        let mut sa: Vec<f64> = sa.iter().copied().collect();
        let mut sb: Vec<f64> = sb.iter().copied().collect();
        sa.sort_by(|x, y| y.partial_cmp(x).unwrap());
        sb.sort_by(|x, y| y.partial_cmp(x).unwrap());
        for (x, y) in sa.iter().zip(&sb) {
            prop_assert!((x - y).abs() <= 1e-12 * sa[0]);
        }
    }
}

// placement

fn problem(seed: u64, rows: usize, k: usize, s: usize) -> PlacementProblem {
    let y = output_matrix(seed, rows, 4 * s + 4);
    PlacementProblem { outputs: y, candidates: (0..rows).collect(), n_sensors: k, depth: s, n_retained: s.min(3), bounds: (0, rows - 1) }
}

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn argmin_is_scale_invariant(seed in any::<u64>(), rows in 2usize..7, k in 1usize..3, s in 1usize..5, c in 1e-3f64..1e3) {
        prop_assume!(k <= rows);
        let p = problem(seed, rows, k, s);
        let mut q = p.clone();
        q.outputs *= c;
        let a = placement::exhaustive_search(&p).unwrap();
        let b = placement::exhaustive_search(&q).unwrap();
        prop_assert_eq!(&a.best_subset, &b.best_subset);
        prop_assert!((b.best_cost * c - a.best_cost).abs() <= 1e-9 * a.best_cost);
    }

    #[test]
    fn evaluations_match_binomial(seed in any::<u64>(), rows in 2usize..9, k in 1usize..4) {
        prop_assume!(k <= rows);
        let p = problem(seed, rows, k, 2);
        let res = placement::exhaustive_search(&p).unwrap();
        prop_assert_eq!(res.evaluations as u128, placement::binomial(rows, k));
        prop_assert_eq!(res.evaluations, (0..rows).combinations(k).count());
    }

    #[test]
    fn removing_the_winner_cannot_help(seed in any::<u64>(), rows in 3usize..8, s in 1usize..4) {
        let p = problem(seed, rows, 1, s);
        let best = placement::exhaustive_search(&p).unwrap();
        let mut q = p.clone();
        q.candidates.retain(|c| !best.best_subset.contains(c));
        let next = placement::exhaustive_search(&q).unwrap();
        prop_assert!(next.best_cost >= best.best_cost);
    }

    #[test]
    fn search_is_deterministic_and_routes_agree(seed in any::<u64>(), rows in 2usize..7, k in 1usize..3, s in 1usize..4) {
        prop_assume!(k <= rows);
        let p = problem(seed, rows, k, s);
        let a = placement::exhaustive_search(&p).unwrap();
        let b = placement::exhaustive_search(&p).unwrap();
        prop_assert_eq!(&a, &b);
        let d = placement::exhaustive_search_with(&p, HankelRoute::Dense).unwrap();
        prop_assert_eq!(&a.best_subset, &d.best_subset);
        prop_assert!((a.best_cost - d.best_cost).abs() <= 1e-10 * d.best_cost);
    }
}

// mass correction

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn perturbed_mass_matrix_dominates_identity(
        pos in prop::collection::vec(0.0f64..=1.0, 1..4),
        mass in prop::collection::vec(0.0f64..0.5, 4),
    ) {
        let set = ModeSet::reference();
        let cm = corrected_modes(&set, &MassLoad::new(pos.clone(), mass[..pos.len()].to_vec()).unwrap(), 3).unwrap();
        let mp = cm.mass_matrix();
        prop_assert!((mp - mp.transpose()).amax() <= 1e-14);
        prop_assert!(mp.clone().symmetric_eigen().eigenvalues.min() >= 1.0 - 1e-12);
        prop_assert!(cm.mu().iter().all(|&m| m >= 1.0));
        prop_assert!(cm.omega_n().iter().zip(cm.unloaded_omega_n()).all(|(a, b)| a <= b));
    }

    #[test]
    fn shift_vanishes_linearly_with_mass(x in 0.1f64..=1.0, m in 1e-6f64..1e-3) {
        let set = ModeSet::reference();
        let shift = |mass: f64| -> Vec<f64> {
            let cm = corrected_modes(&set, &MassLoad::new(vec![x], vec![mass]).unwrap(), 3).unwrap();
            cm.freq_ratios().iter().map(|r| 1.0 - r).collect()
        };
        let (a, b) = (shift(m), shift(m / 2.0));
        for i in 0..3 {
            let predicted = 0.5 * m * set.shape(i, x).powi(2);
            prop_assert!(a[i] <= 2.0 * predicted + 1e-15);
            if predicted > 1e-9 {
                prop_assert!((a[i] / (2.0 * b[i]) - 1.0).abs() <= 0.01);
            }
        }
    }

    #[test]
    fn zero_load_reproduces_shapes(xs in prop::collection::vec(0.0f64..=1.0, 1..20), pos in 0.0f64..=1.0) {
        let set = ModeSet::reference();
        let cm = corrected_modes(&set, &MassLoad::new(vec![pos], vec![0.0]).unwrap(), 10).unwrap();
        for &x in &xs {
            for i in 0..10 {
                prop_assert!((cm.shape_at(i, x).abs() - set.shape(i, x).abs()).abs() <= 1e-12);
            }
        }
    }
}

// design loop on a 6-node, 3-mode beam

fn small_design(mass: f64) -> (ModeSet, DesignSettings) {
    let set = ModeSet::new(ModeSet::reference().modes()[..3].to_vec(), 1.0).unwrap();
    let settings = DesignSettings {
        n_nodes: 6,
        dt: 1.0 / 1000.0,
        t_final: 1.5,
        pair_mass: mass,
        max_iters: 6,
        n_report: 3,
        surrogate: SurrogateSettings { stride: 2, rank: 6, horizon_s: 1.0, depth: Some(20), ..SurrogateSettings::default() },
    };
    (set, settings)
}

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn loop_terminates_with_finite_costs(mass in 0.0f64..0.3, max_iters in 1usize..6) {
        let (set, mut st) = small_design(mass);
        st.max_iters = max_iters;
        let res = design::run_design_loop(&set, &st).unwrap();
        prop_assert!(res.history.len() <= max_iters + 1);
        if res.converged {
            prop_assert!(res.history.iter().all(|h| h.cost.is_finite()));
            let again = design::loaded_optimum(&set, &st, &res.final_placement).unwrap();
            prop_assert_eq!(&again.best_subset, &res.final_placement);
        }
    }
}

// control

fn small_basis(n_modes: usize) -> ModalBasis {
    let set = ModeSet::reference();
    ModalBasis::from_mode_set(&set, &truth::uniform_mesh(11, 1.0).unwrap(), n_modes).unwrap()
}

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn lqr_closed_loop_is_stable(node in 1usize..11, n_modes in 1usize..4, rho in 1e-3f64..10.0) {
        let lti = control::build_modal_lti(&small_basis(n_modes), &[node], &[node], 1e-3).unwrap();
        let c = &lti.system.c;
        let sol = control::solve_lqr(&lti.system, &(c.transpose() * c + DMatrix::identity(2 * n_modes, 2 * n_modes) * 1e-6), &DMatrix::from_element(1, 1, rho)).unwrap();
        prop_assert!(sol.closed_loop_radius < 1.0);
    }

    #[test]
    fn parseval(sig in prop::collection::vec(-10.0f64..10.0, 2..600), dt in 1e-4f64..1.0) {
        let psd = spectrum::welch_psd(&sig, dt).unwrap();
        let n = sig.len() as f64;
        let mean = sig.iter().sum::<f64>() / n;
        let var = sig.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        prop_assume!(var > 1e-12);
        prop_assert!((psd.variance() - var).abs() <= 0.02 * var);
    }

    #[test]
    fn effort_does_not_grow_with_r(node in 2usize..11, rho in 1e-3f64..1.0, factor in 1.5f64..20.0) {
        let basis = small_basis(2);
        let effort = |rho: f64, closed: bool| -> f64 {
            let st = ControlSettings { rho, horizon_s: 1.0, dt: 1.0 / 1000.0, n_modes: 2, band: 0.02 };
            let case = ControlCase { label: "p".into(), nodes: vec![node], basis: basis.clone(), closed_loop: closed };
            control::evaluate_case(&case, &st).unwrap().report.aggregate.control_effort
        };
        prop_assert!(effort(rho * factor, true) <= effort(rho, true) * (1.0 + 1e-9));
        prop_assert_eq!(effort(rho, false), 0.0);
    }
}
