//! Block Hankel matrices, finite Gramians and their shared spectrum.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::spectrum;

/// Discrete-time state-space model x⁺ = Ax + Bu, y = Cx.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub dt: f64,
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, dt: f64) -> Result<Self> {
        if !a.is_square() {
            return invalid("A must be square");
        }
        if b.nrows() != a.nrows() || c.ncols() != a.nrows() {
            return invalid(format!(
                "dimension mismatch: A {}x{}, B {}x{}, C {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                c.nrows(),
                c.ncols()
            ));
        }
        if !(dt > 0.0) {
            return invalid(format!("sample time must be positive, got {dt}"));
        }
        Ok(LtiSystem { a, b, c, dt })
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn spectral_radius(&self) -> Result<f64> {
        linalg::spectral_radius(&self.a)
    }

    /// [C; CA; …; CA^{s−1}]
    pub fn observability_matrix(&self, s: usize) -> DMatrix<f64> {
        let (p, n) = (self.n_outputs(), self.n_states());
        let mut o = DMatrix::zeros(s * p, n);
        let mut block = self.c.clone();
        for i in 0..s {
            o.view_mut((i * p, 0), (p, n)).copy_from(&block);
            block = &block * &self.a;
        }
        o
    }

    /// [B, AB, …, A^{r−1}B]
    pub fn controllability_matrix(&self, r: usize) -> DMatrix<f64> {
        let (n, m) = (self.n_states(), self.n_inputs());
        let mut c = DMatrix::zeros(n, r * m);
        let mut block = self.b.clone();
        for j in 0..r {
            c.view_mut((0, j * m), (n, m)).copy_from(&block);
            block = &self.a * &block;
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HankelSource {
    Markov,
    OutputData,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HankelSpec {
    pub s: usize,
    pub r: usize,
    pub source: HankelSource,
}

impl HankelSpec {
    pub fn new(s: usize, r: usize, source: HankelSource) -> Result<Self> {
        if s == 0 || r == 0 {
            return invalid(format!("Hankel dimensions must be positive, got s={s}, r={r}"));
        }
        Ok(HankelSpec { s, r, source })
    }
}

/// h_1..h_count with h_k = C A^{k−1} B.
pub fn markov_params(sys: &LtiSystem, count: usize) -> Result<Vec<DMatrix<f64>>> {
    if count == 0 {
        return invalid("need at least one Markov parameter");
    }
    let mut out = Vec::with_capacity(count);
    let mut ab = sys.b.clone();
    for _ in 0..count {
        out.push(&sys.c * &ab);
        ab = &sys.a * &ab;
    }
    Ok(out)
}

/// Block (i, j) = h_{i+j+1} (zero-based i, j).
pub fn build_hankel_markov(h: &[DMatrix<f64>], s: usize, r: usize) -> Result<DMatrix<f64>> {
    HankelSpec::new(s, r, HankelSource::Markov)?;
    if h.len() < s + r - 1 {
        return Err(Error::InsufficientData(format!(
            "{} Markov parameters, need {}",
            h.len(),
            s + r - 1
        )));
    }
    let (p, m) = h[0].shape();
    let mut out = DMatrix::zeros(s * p, r * m);
    for i in 0..s {
        for j in 0..r {
            out.view_mut((i * p, j * m), (p, m)).copy_from(&h[i + j]);
        }
    }
    Ok(out)
}

/// Column count r = n_t − 2s + 1 of an output-data Hankel matrix.
pub fn output_hankel_cols(n_t: usize, s: usize) -> Result<usize> {
    if s == 0 {
        return invalid("Hankel depth must be at least 1");
    }
    if n_t < 2 * s {
        return Err(Error::InsufficientData(format!("{n_t} samples cannot fill depth {s}; need {}", 2 * s)));
    }
    Ok(n_t - 2 * s + 1)
}

/// Stack, for each selected output row, the s×r Hankel block of its samples.
pub fn build_output_hankel(y: &DMatrix<f64>, subset: &[usize], s: usize) -> Result<DMatrix<f64>> {
    if subset.is_empty() {
        return invalid("output subset is empty");
    }
    if let Some(&bad) = subset.iter().find(|&&i| i >= y.nrows()) {
        return Err(Error::IndexOutOfRange { index: bad, lo: 0, hi: y.nrows().saturating_sub(1) });
    }
    let r = output_hankel_cols(y.ncols(), s)?;
    let mut out = DMatrix::zeros(s * subset.len(), r);
    for (b, &i) in subset.iter().enumerate() {
        out.view_mut((b * s, 0), (s, r)).copy_from(&single_output_hankel(y, i, s, r));
    }
    Ok(out)
}

pub(crate) fn single_output_hankel(y: &DMatrix<f64>, row: usize, s: usize, r: usize) -> DMatrix<f64> {
    DMatrix::from_fn(s, r, |a, b| y[(row, a + b)])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HankelDepth {
    pub s: usize,
    pub dominant_freq_hz: f64,
    pub period_s: f64,
    /// True when the dominant period was longer than the data allow.
    pub clipped: bool,
}

/// s = ⌈T/dt⌉ for the dominant period T of the averaged output spectrum,
/// reduced if needed so that n_t ≥ 2s.
pub fn choose_hankel_depth(y: &DMatrix<f64>, dt: f64) -> Result<HankelDepth> {
    if y.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("output data are identically zero".into()));
    }
    let f = spectrum::dominant_frequency(y, dt)?;
    let period_s = 1.0 / f;
    let ideal = ((period_s / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let cap = (y.ncols() / 2).max(1);
    Ok(HankelDepth { s: ideal.min(cap), dominant_freq_hz: f, period_s, clipped: ideal > cap })
}

/// W_c^{(r)} = 𝒞_r𝒞_rᵀ and W_o^{(s)} = 𝒪_sᵀ𝒪_s.
pub fn finite_gramians(sys: &LtiSystem, s: usize, r: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    HankelSpec::new(s, r, HankelSource::Markov)?;
    let c = sys.controllability_matrix(r);
    let o = sys.observability_matrix(s);
    Ok((&c * c.transpose(), o.transpose() * &o))
}

/// Infinite-horizon Gramians obtained by summing the series until the terms
/// stop contributing; rejects systems that are not asymptotically stable.
pub fn converged_gramians(sys: &LtiSystem, max_terms: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let rho = sys.spectral_radius()?;
    if rho >= 1.0 {
        return Err(Error::Unstable(rho));
    }
    let n = sys.n_states();
    let mut wc = DMatrix::zeros(n, n);
    let mut wo = DMatrix::zeros(n, n);
    let mut ab = sys.b.clone();
    let mut ca = sys.c.clone();
    for k in 0..max_terms {
        let tc = &ab * ab.transpose();
        let to = ca.transpose() * &ca;
        wc += &tc;
        wo += &to;
        let small = tc.norm() <= 1e-17 * wc.norm().max(f64::MIN_POSITIVE)
            && to.norm() <= 1e-17 * wo.norm().max(f64::MIN_POSITIVE);
        if small || (tc.norm() == 0.0 && to.norm() == 0.0 && k >= n) {
            return Ok((wc, wo));
        }
        ab = &sys.a * ab;
        ca *= &sys.a;
    }
    Err(Error::NonConvergent { iterations: max_terms, residual: f64::NAN })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub n: usize,
    pub s: usize,
    pub r: usize,
    /// Largest deviation between the squared Hankel singular values and any
    /// of the Gramian-side spectra, relative to σ₁².
    pub max_rel_dev: f64,
    /// max |H₀ − 𝒪_s𝒞_r| elementwise.
    pub factorization_error: f64,
    /// Number of singular values above the floor max(σ)·1e−12.
    pub nonzero: usize,
    pub pass: bool,
}

fn sorted_desc(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    v
}

fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let sym = (m + m.transpose()) * 0.5;
    sorted_desc(SymmetricEigen::new(sym).eigenvalues.iter().copied().collect())
}

fn spectrum_gap(a: &[f64], b: &[f64]) -> f64 {
    let len = a.len().max(b.len());
    (0..len)
        .map(|i| (a.get(i).copied().unwrap_or(0.0) - b.get(i).copied().unwrap_or(0.0)).abs())
        .fold(0.0, f64::max)
}

/// Compare σ(H₀)² against the spectra of H₀H₀ᵀ, H₀ᵀH₀, 𝒪W_c𝒪ᵀ, 𝒞ᵀW_o𝒞 and
/// W_cW_o (all zero-padded to a common length).
pub fn verify_spectrum_equivalence(sys: &LtiSystem, s: usize, r: usize, tol: f64) -> Result<EquivalenceReport> {
    let h = build_hankel_markov(&markov_params(sys, s + r - 1)?, s, r)?;
    let obs = sys.observability_matrix(s);
    let ctr = sys.controllability_matrix(r);
    let factorization_error = (&h - &obs * &ctr).amax();
    let (wc, wo) = finite_gramians(sys, s, r)?;

    let sigma = linalg::singular_values(&h)?;
    let smax = sigma.first().copied().unwrap_or(0.0);
    let floor = smax * 1e-12;
    let nonzero = sigma.iter().filter(|&&v| v > floor).count();
    let sq: Vec<f64> = sigma.iter().map(|v| v * v).collect();

    let mut cross = linalg::eigenvalues(&(&wc * &wo))?.iter().map(|z| z.re).collect::<Vec<_>>();
    cross = sorted_desc(cross);
    let candidates = [
        sym_eigenvalues(&(&h * h.transpose())),
        sym_eigenvalues(&(h.transpose() * &h)),
        sym_eigenvalues(&(&obs * &wc * obs.transpose())),
        sym_eigenvalues(&(ctr.transpose() * &wo * &ctr)),
        cross,
    ];
    let max_rel_dev = if smax == 0.0 {
        candidates.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max)
    } else {
        candidates.iter().map(|c| spectrum_gap(&sq, c)).fold(0.0, f64::max) / (smax * smax)
    };
    Ok(EquivalenceReport {
        n: sys.n_states(),
        s,
        r,
        max_rel_dev,
        factorization_error,
        nonzero,
        pass: max_rel_dev <= tol,
    })
}

/// A = Q diag(λ) Qᵀ with random orthogonal Q and |λ| ∈ [0.2, 0.95]; B, C
/// have standard normal entries.
pub fn random_stable_system<R: Rng>(rng: &mut R, n: usize, m: usize, p: usize, dt: f64) -> Result<LtiSystem> {
    if n == 0 || m == 0 || p == 0 {
        return invalid("system dimensions must be positive");
    }
    let g = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let q = g.qr().q();
    let lam = nalgebra::DVector::from_fn(n, |_, _| {
        let mag = rng.random_range(0.2..=0.95);
        if rng.random_bool(0.5) {
            mag
        } else {
            -mag
        }
    });
    let a = &q * DMatrix::from_diagonal(&lam) * q.transpose();
    let b = DMatrix::from_fn(n, m, |_, _| rng.sample(StandardNormal));
    let c = DMatrix::from_fn(p, n, |_, _| rng.sample(StandardNormal));
    LtiSystem::new(a, b, c, dt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub n: usize,
    pub s: usize,
    pub r: usize,
    pub max_rel_dev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceSummary {
    pub trials: usize,
    pub worst_dev: f64,
    pub worst_factorization_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceRun {
    pub per_trial: Vec<TrialRecord>,
    pub summary: EquivalenceSummary,
}

/// Random trials with n ≤ `max_n`, s = r = 2n. Trial `k` draws from its own
/// generator seeded by (seed, k), so results do not depend on scheduling.
pub fn run_equivalence_trials(trials: usize, max_n: usize, seed: u64, tol: f64) -> Result<EquivalenceRun> {
    if max_n == 0 {
        return invalid("max_n must be at least 1");
    }
    let reports: Vec<EquivalenceReport> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let n = rng.random_range(1..=max_n);
            let m = rng.random_range(1..=3);
            let p = rng.random_range(1..=3);
            let sys = random_stable_system(&mut rng, n, m, p, 1.0)?;
            verify_spectrum_equivalence(&sys, 2 * n, 2 * n, tol)
        })
        .collect::<Result<_>>()?;
    let worst_dev = reports.iter().map(|r| r.max_rel_dev).fold(0.0, f64::max);
    let worst_factorization_error = reports.iter().map(|r| r.factorization_error).fold(0.0, f64::max);
    let pass = reports.iter().all(|r| r.pass);
    Ok(EquivalenceRun {
        per_trial: reports
            .iter()
            .map(|r| TrialRecord { n: r.n, s: r.s, r: r.r, max_rel_dev: r.max_rel_dev })
            .collect(),
        summary: EquivalenceSummary { trials, worst_dev, worst_factorization_error, pass },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar() -> LtiSystem {
        let m = |v: f64| DMatrix::from_element(1, 1, v);
        LtiSystem::new(m(0.5), m(1.0), m(1.0), 1.0).unwrap()
    }

    #[test]
    fn scalar_markov_sequence() {
        let h = markov_params(&scalar(), 4).unwrap();
        let vals: Vec<f64> = h.iter().map(|m| m[(0, 0)]).collect();
        assert_eq!(vals, vec![1.0, 0.5, 0.25, 0.125]);
    }

    #[test]
    fn zero_input_gives_zero_markov() {
        let mut sys = scalar();
        sys.b = DMatrix::zeros(1, 1);
        assert!(markov_params(&sys, 5).unwrap().iter().all(|h| h[(0, 0)] == 0.0));
    }

    #[test]
    fn scalar_hankel_and_spectrum() {
        let h = markov_params(&scalar(), 3).unwrap();
        let hk = build_hankel_markov(&h, 2, 2).unwrap();
        assert_eq!(hk, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 0.25]));
        let sv = linalg::singular_values(&hk).unwrap();
        assert!((sv[0] - 1.25).abs() < 1e-15 && sv[1].abs() < 1e-15);
        assert!(build_hankel_markov(&h, 2, 3).is_err());
        assert_eq!(build_hankel_markov(&h, 1, 1).unwrap()[(0, 0)], 1.0);
    }

    #[test]
    fn scalar_gramians() {
        let (wc, wo) = finite_gramians(&scalar(), 2, 2).unwrap();
        assert!((wc[(0, 0)] - 1.25).abs() < 1e-15 && (wo[(0, 0)] - 1.25).abs() < 1e-15);
        let (wc1, _) = finite_gramians(&scalar(), 1, 1).unwrap();
        assert_eq!(wc1[(0, 0)], 1.0);
        let rep = verify_spectrum_equivalence(&scalar(), 2, 2, 1e-12).unwrap();
        assert!(rep.pass && rep.max_rel_dev == 0.0, "{rep:?}");
    }

    #[test]
    fn infinite_gramian_rejects_unstable() {
        let mut sys = scalar();
        sys.a[(0, 0)] = 1.1;
        assert!(matches!(converged_gramians(&sys, 1000), Err(Error::Unstable(_))));
        assert!(finite_gramians(&sys, 3, 3).is_ok());
        let (wc, _) = converged_gramians(&scalar(), 1000).unwrap();
        assert!((wc[(0, 0)] - 4.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn nilpotent_series_terminates() {
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let sys = LtiSystem::new(a, DMatrix::from_column_slice(3, 1, &[0.3, -1.0, 2.0]), DMatrix::from_row_slice(1, 3, &[1.0, 0.5, 0.0]), 1.0).unwrap();
        let (wc_inf, wo_inf) = converged_gramians(&sys, 100).unwrap();
        for r in 3..6 {
            let (wc, wo) = finite_gramians(&sys, r, r).unwrap();
            assert_eq!(wc, wc_inf);
            assert_eq!(wo, wo_inf);
        }
    }

    #[test]
    fn zero_output_has_empty_spectrum() {
        let mut sys = scalar();
        sys.c = DMatrix::zeros(1, 1);
        let rep = verify_spectrum_equivalence(&sys, 3, 3, 1e-8).unwrap();
        assert!(rep.pass && rep.nonzero == 0);
    }

    #[test]
    fn output_hankel_examples() {
        let y = DMatrix::from_row_slice(1, 5, &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let h = build_output_hankel(&y, &[0], 2).unwrap();
        assert_eq!(h, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0]));
        assert!(build_output_hankel(&y, &[0], 3).is_err());
        assert!(build_output_hankel(&y, &[1], 2).is_err());
        assert!(build_output_hankel(&y, &[], 2).is_err());
    }

    #[test]
    fn pure_tone_depth() {
        let dt = 1.0 / 4000.0;
        let y = DMatrix::from_fn(1, 8000, |_, i| (2.0 * std::f64::consts::PI * 3.58 * i as f64 * dt).sin());
        let d = choose_hankel_depth(&y, dt).unwrap();
        assert_eq!(d.s, 1118, "{d:?}");
        assert!(!d.clipped);
    }

    #[test]
    fn depth_is_clipped_to_half_the_record() {
        let dt = 1.0 / 4000.0;
        let y = DMatrix::from_fn(1, 1000, |_, i| (2.0 * std::f64::consts::PI * 3.58 * i as f64 * dt).sin());
        let d = choose_hankel_depth(&y, dt).unwrap();
        assert!(d.clipped && d.s == 500);
    }

    #[test]
    fn zero_data_depth_errors() {
        assert!(choose_hankel_depth(&DMatrix::zeros(2, 100), 0.01).is_err());
    }
}
