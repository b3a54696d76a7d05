//! Linear algebra on a truncated Fock space.
//!
//! States live on `span{|0>, ..., |n_max>}`. The cutoff is either fixed or chosen
//! automatically from a probability-mass tolerance so that truncation stays several
//! orders of magnitude below the trace distances of interest.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::{Error, Result};

/// Default probability mass allowed to fall outside the truncated space.
pub const DEFAULT_TRUNCATION_TOL: f64 = 1e-9;

/// Largest supported photon-number cutoff.
pub const MAX_CUTOFF: usize = 4096;

const HERMITIAN_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Cutoff {
    Fixed(usize),
    Auto,
}

/// How the Fock space is truncated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncationPolicy {
    pub cutoff: Cutoff,
    /// Probability mass tolerated outside the truncated space.
    pub tolerance: f64,
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        Self::auto(DEFAULT_TRUNCATION_TOL)
    }
}

impl TruncationPolicy {
    pub fn auto(tolerance: f64) -> Self {
        Self {
            cutoff: Cutoff::Auto,
            tolerance,
        }
    }

    pub fn fixed(n_max: usize) -> Self {
        Self {
            cutoff: Cutoff::Fixed(n_max),
            tolerance: DEFAULT_TRUNCATION_TOL,
        }
    }

    /// Resolves the photon-number cutoff `n_max`.
    ///
    /// `max_intensity` is the largest `|alpha|^2` that must be represented and
    /// `thermal_mean` the mean photon number of any thermal state involved. In
    /// automatic mode the result is the smallest `n_max` whose Poisson tail (for
    /// `max_intensity`) and geometric tail (for `thermal_mean`) are both below the
    /// tolerance.
    pub fn resolve(&self, max_intensity: f64, thermal_mean: f64) -> Result<usize> {
        if !(max_intensity >= 0.0 && thermal_mean >= 0.0) {
            return Err(Error::Domain(format!(
                "intensities must be non-negative (got {max_intensity}, {thermal_mean})"
            )));
        }
        let n_max = match self.cutoff {
            Cutoff::Fixed(n) => n,
            Cutoff::Auto => {
                if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
                    return Err(Error::invalid(
                        "tolerance",
                        format!("must lie in (0, 1), got {}", self.tolerance),
                    ));
                }
                poisson_cutoff(max_intensity, self.tolerance)?
                    .max(thermal_cutoff(thermal_mean, self.tolerance)?)
            }
        };
        if n_max > MAX_CUTOFF {
            return Err(Error::Resource(format!(
                "photon-number cutoff {n_max} exceeds the supported maximum {MAX_CUTOFF}"
            )));
        }
        Ok(n_max)
    }
}

/// Smallest `n_max` with `P[Poisson(mean) > n_max] < tol`.
fn poisson_cutoff(mean: f64, tol: f64) -> Result<usize> {
    if mean == 0.0 {
        return Ok(0);
    }
    let limit = (mean + 60.0 * mean.sqrt() + 200.0).ceil() as usize;
    if limit > MAX_CUTOFF + 1 {
        return Err(Error::Resource(format!(
            "coherent amplitude with |alpha|^2 = {mean} needs more than {MAX_CUTOFF} Fock levels"
        )));
    }
    let pmf = log_poisson_pmf(mean, limit);
    // tail[n] = sum_{m > n} pmf[m], accumulated from the top to avoid cancellation
    let mut tail = 0.0;
    let mut best = limit;
    for n in (0..limit).rev() {
        tail += pmf[n + 1].exp();
        if tail < tol {
            best = n;
        } else {
            break;
        }
    }
    if best == limit {
        return Err(Error::Resource(format!(
            "Poisson tail for |alpha|^2 = {mean} does not reach {tol} within {limit} levels"
        )));
    }
    Ok(best)
}

fn log_poisson_pmf(mean: f64, n_max: usize) -> Vec<f64> {
    let ln_mean = mean.ln();
    let mut out = Vec::with_capacity(n_max + 1);
    let mut ln_fact = 0.0;
    for n in 0..=n_max {
        if n > 0 {
            ln_fact += (n as f64).ln();
        }
        out.push(-mean + n as f64 * ln_mean - ln_fact);
    }
    out
}

/// Smallest `n_max` with `(N/(N+1))^(n_max+1) < tol`.
fn thermal_cutoff(mean: f64, tol: f64) -> Result<usize> {
    if mean == 0.0 {
        return Ok(0);
    }
    let ratio = mean / (mean + 1.0);
    let n = (tol.ln() / ratio.ln()).floor();
    if !n.is_finite() || n > MAX_CUTOFF as f64 {
        return Err(Error::Resource(format!(
            "thermal state with N = {mean} needs more than {MAX_CUTOFF} Fock levels"
        )));
    }
    let mut n_max = (n as usize).saturating_sub(2);
    while ratio.powi(n_max as i32 + 1) >= tol {
        n_max += 1;
    }
    Ok(n_max)
}

/// A (possibly sub-normalized) state vector in the truncated Fock basis.
#[derive(Clone, Debug, PartialEq)]
pub struct FockVector {
    amps: DVector<Complex64>,
}

impl FockVector {
    pub fn from_amplitudes(amps: DVector<Complex64>) -> Self {
        Self { amps }
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &DVector<Complex64> {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }
}

/// Coherent state `|alpha>` with amplitudes `e^{-|alpha|^2/2} alpha^n / sqrt(n!)`.
///
/// Fails with a resource error if the cutoff cannot hold the state to within the
/// policy tolerance.
pub fn coherent_vector(alpha: Complex64, policy: &TruncationPolicy) -> Result<FockVector> {
    let n_max = policy.resolve(alpha.norm_sqr(), 0.0)?;
    let v = coherent_vector_in(alpha, n_max + 1);
    if 1.0 - v.norm_sqr() > policy.tolerance {
        return Err(Error::Resource(format!(
            "cutoff n_max = {n_max} loses {:.3e} of |alpha = {alpha}> (tolerance {:.1e})",
            1.0 - v.norm_sqr(),
            policy.tolerance
        )));
    }
    Ok(v)
}

/// Coherent state on a space of given dimension, no tolerance check.
///
/// Magnitudes are accumulated in log space so large cutoffs do not overflow `n!`.
pub(crate) fn coherent_vector_in(alpha: Complex64, dim: usize) -> FockVector {
    let mut amps = DVector::from_element(dim, Complex64::new(0.0, 0.0));
    let r2 = alpha.norm_sqr();
    if r2 == 0.0 {
        if dim > 0 {
            amps[0] = Complex64::new(1.0, 0.0);
        }
        return FockVector { amps };
    }
    let ln_r = 0.5 * r2.ln();
    let theta = alpha.arg();
    let mut ln_mag = -0.5 * r2;
    for (n, a) in amps.iter_mut().enumerate() {
        if n > 0 {
            ln_mag += ln_r - 0.5 * (n as f64).ln();
        }
        *a = Complex64::from_polar(ln_mag.exp(), n as f64 * theta);
    }
    FockVector { amps }
}

/// A Hermitian operator on the truncated Fock space, normally a density matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityOperator {
    matrix: DMatrix<Complex64>,
}

impl DensityOperator {
    /// Wraps a matrix after checking it is square and Hermitian to within `1e-12`.
    pub fn new(matrix: DMatrix<Complex64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::Shape {
                left: matrix.nrows(),
                right: matrix.ncols(),
            });
        }
        let n = matrix.nrows();
        for i in 0..n {
            for j in i..n {
                if (matrix[(i, j)] - matrix[(j, i)].conj()).norm() > HERMITIAN_TOL {
                    return Err(Error::Domain(format!(
                        "matrix is not Hermitian at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { matrix })
    }

    /// `|psi><psi|`.
    pub fn pure(psi: &FockVector) -> Self {
        Self {
            matrix: psi.amps.clone() * psi.amps.adjoint(),
        }
    }

    /// Diagonal operator from real populations.
    pub fn diagonal(populations: &[f64]) -> Self {
        let diag = DVector::from_iterator(
            populations.len(),
            populations.iter().map(|&p| Complex64::new(p, 0.0)),
        );
        Self {
            matrix: DMatrix::from_diagonal(&diag),
        }
    }

    pub(crate) fn from_matrix_unchecked(matrix: DMatrix<Complex64>) -> Self {
        Self { matrix }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn trace(&self) -> f64 {
        self.matrix.diagonal().iter().map(|z| z.re).sum()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.matrix
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .collect()
    }

    /// Logs a warning if an eigenvalue is below `-1e-10`. Returns the smallest eigenvalue.
    pub fn check_positive(&self) -> f64 {
        let min = self.eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
        if min < -PSD_TOL {
            log::warn!("density operator has eigenvalue {min:.3e} below -{PSD_TOL:e}");
        }
        min
    }
}

/// Thermal state `sum_n N^n/(N+1)^(n+1) |n><n|`, truncated per `policy`.
pub fn thermal_state(mean_photons: f64, policy: &TruncationPolicy) -> Result<DensityOperator> {
    if !(mean_photons >= 0.0) {
        return Err(Error::Domain(format!(
            "mean photon number must be non-negative, got {mean_photons}"
        )));
    }
    let n_max = policy.resolve(0.0, mean_photons)?;
    Ok(thermal_state_in(mean_photons, n_max + 1))
}

pub(crate) fn thermal_state_in(mean_photons: f64, dim: usize) -> DensityOperator {
    let ratio = mean_photons / (mean_photons + 1.0);
    let mut p = 1.0 / (mean_photons + 1.0);
    let pops: Vec<f64> = (0..dim)
        .map(|_| {
            let out = p;
            p *= ratio;
            out
        })
        .collect();
    DensityOperator::diagonal(&pops)
}

/// `D(rho, sigma) = 1/2 sum |lambda_i|` over the eigenvalues of `rho - sigma`.
pub fn trace_distance(rho: &DensityOperator, sigma: &DensityOperator) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(Error::Shape {
            left: rho.dim(),
            right: sigma.dim(),
        });
    }
    let diff = &rho.matrix - &sigma.matrix;
    Ok(0.5
        * diff
            .symmetric_eigenvalues()
            .iter()
            .map(|l| l.abs())
            .sum::<f64>())
}

/// Trace distance between two pure coherent states, `sqrt(1 - e^{-|a - b|^2})`.
pub fn coherent_trace_distance(alpha: Complex64, beta: Complex64) -> f64 {
    (-(-(alpha - beta).norm_sqr()).exp_m1()).sqrt()
}
