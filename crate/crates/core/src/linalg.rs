use nalgebra::{DMatrix, DVector, Schur, SVD};
use num_complex::Complex64;

use crate::error::{Error, Result};

const SVD_EPS: f64 = 1e-15;
const SVD_MAX_ITER: usize = 20_000;

pub(crate) fn svd(m: &DMatrix<f64>, u: bool, v: bool) -> Result<SVD<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    SVD::try_new(m.clone(), u, v, SVD_EPS, SVD_MAX_ITER)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))
}

/// Singular values in non-increasing order.
pub(crate) fn singular_values(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(Vec::new());
    }
    Ok(svd(m, false, false)?.singular_values.iter().copied().collect())
}

pub(crate) fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = Schur::try_new(a.clone(), 1e-15, 100_000)
        .ok_or_else(|| Error::Numerical("Schur decomposition did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

pub(crate) fn spectral_radius(a: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(a)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

pub(crate) fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

/// Eigenpairs of a small real matrix. Eigenvectors are unit-norm null vectors
/// of `A - λI`; members of a conjugate pair get exactly conjugate vectors.
pub(crate) fn eigen_decomposition(a: &DMatrix<f64>) -> Result<(Vec<Complex64>, DMatrix<Complex64>)> {
    let n = a.nrows();
    let mut lambdas = eigenvalues(a)?;
    // lay out each conjugate pair as (upper, lower) so the lower one can copy
    for z in lambdas.iter_mut() {
        if z.im.abs() <= 1e-14 * z.norm().max(f64::MIN_POSITIVE) {
            z.im = 0.0;
        }
    }
    let scale = a.norm().max(f64::MIN_POSITIVE);
    let ac = to_complex(a);
    let mut vecs = DMatrix::<Complex64>::zeros(n, n);
    let mut done = vec![false; n];
    for i in 0..n {
        if done[i] {
            continue;
        }
        let lam = lambdas[i];
        // multiplicity handling: the k-th copy of a repeated eigenvalue takes
        // the k-th smallest right singular vector
        let copies: Vec<usize> = (i..n)
            .filter(|&j| !done[j] && (lambdas[j] - lam).norm() <= 1e-10 * scale)
            .collect();
        let shifted = &ac - DMatrix::<Complex64>::identity(n, n) * lam;
        let dec = SVD::try_new(shifted, false, true, SVD_EPS, SVD_MAX_ITER)
            .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
        let v_t = dec.v_t.expect("requested");
        for (k, &j) in copies.iter().enumerate() {
            let row = n - 1 - k;
            let mut w = DVector::<Complex64>::from_iterator(n, v_t.row(row).iter().map(|z| z.conj()));
            normalize_phase(&mut w);
            vecs.set_column(j, &w);
            done[j] = true;
            if lambdas[j].im != 0.0 {
                let partner = (0..n).find(|&p| {
                    !done[p] && (lambdas[p] - lambdas[j].conj()).norm() <= 1e-10 * scale
                });
                if let Some(p) = partner {
                    lambdas[p] = lambdas[j].conj();
                    vecs.set_column(p, &w.map(|z| z.conj()));
                    done[p] = true;
                }
            }
        }
    }
    Ok((lambdas, vecs))
}

/// Rotate so the largest-magnitude component is real and positive.
pub(crate) fn normalize_phase(w: &mut DVector<Complex64>) {
    let norm = w.norm();
    if norm == 0.0 {
        return;
    }
    let mut best = 0;
    for i in 0..w.len() {
        if w[i].norm() > w[best].norm() * (1.0 + 1e-12) {
            best = i;
        }
    }
    let phase = w[best] / w[best].norm();
    let rot = phase.conj() / norm;
    for z in w.iter_mut() {
        *z *= rot;
    }
}

/// Least-squares solution of `a x ≈ b` via the SVD pseudo-inverse.
pub(crate) fn lstsq_complex(a: &DMatrix<Complex64>, b: &DVector<Complex64>) -> Result<DVector<Complex64>> {
    let dec = SVD::try_new(a.clone(), true, true, SVD_EPS, SVD_MAX_ITER)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let smax = dec.singular_values.iter().copied().fold(0.0, f64::max);
    let eps = smax * 1e-13 * (a.nrows().max(a.ncols()) as f64);
    dec.solve(b, eps).map_err(|e| Error::Numerical(e.into()))
}
