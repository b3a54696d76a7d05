//! Covariance matrices of the quadratures `(q_A, p_A, q_B, p_B)`, the deviation
//! bounds between the practical and ideal protocols, and a semi-analytic oracle for
//! second moments restricted to Bob's measurement window `[-M, M]^2`.
//!
//! Bob's outcome conditioned on Alice's amplitude is Gaussian with mean
//! `sqrt(eta) (q_A, p_A)` and variance `1 + u` per quadrature (heterodyne
//! Q-function of a displaced thermal state). Restricted moments are computed in
//! closed form from windowed Gaussian moments, one mixture component at a time.

use std::io::{self, Write};

use nalgebra::Matrix4;
use serde::{Serialize, Serializer};

use crate::constellation::{epsilon_tail, ConstellationGrid};
use crate::numerics::windowed_gaussian_moments;
use crate::security::ChannelModel;
use crate::{Error, Result};

pub const SWEEP_CSV_HEADER: &str = "# cvqkd-bound-sweep v1";

/// Largest ADC resolution; the symbol histogram has `4^b_B` cells.
pub const MAX_ADC_BITS: u32 = 12;

/// Index into a [`CovarianceMatrix4`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quadrature {
    QA = 0,
    PA = 1,
    QB = 2,
    PB = 3,
}

/// Real symmetric 4x4 matrix over `(q_A, p_A, q_B, p_B)`, shot-noise units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CovarianceMatrix4(Matrix4<f64>);

impl CovarianceMatrix4 {
    pub fn new(m: Matrix4<f64>) -> Result<Self> {
        for i in 0..4 {
            if m[(i, i)] < 0.0 {
                return Err(Error::Domain(format!("negative variance at index {i}")));
            }
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 {
                    return Err(Error::Domain(format!(
                        "covariance not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self(m))
    }

    pub(crate) fn from_matrix_unchecked(m: Matrix4<f64>) -> Self {
        Self(m)
    }

    pub fn get(&self, a: Quadrature, b: Quadrature) -> f64 {
        self.0[(a as usize, b as usize)]
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    pub fn to_rows(&self) -> [[f64; 4]; 4] {
        let mut out = [[0.0; 4]; 4];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                *x = self.0[(i, j)];
            }
        }
        out
    }
}

impl Serialize for CovarianceMatrix4 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

/// Bob's finite-range heterodyne detector followed by an ADC.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeasurementSpec {
    /// Saturation range `M`.
    pub saturation: f64,
    /// ADC range `R_B`.
    pub adc_range: f64,
    /// ADC bits per quadrature `b_B`.
    pub adc_bits: u32,
}

impl MeasurementSpec {
    pub fn new(saturation: f64, adc_range: f64, adc_bits: u32) -> Result<Self> {
        if !(saturation > 0.0) {
            return Err(Error::invalid(
                "M",
                format!("must be positive, got {saturation}"),
            ));
        }
        if !(adc_range > 0.0 && adc_range <= saturation) {
            return Err(Error::invalid(
                "R_B",
                format!("must lie in (0, M], got {adc_range}"),
            ));
        }
        if !(2..=MAX_ADC_BITS).contains(&adc_bits) {
            return Err(Error::invalid(
                "b_B",
                format!("must lie in 2..={MAX_ADC_BITS}, got {adc_bits}"),
            ));
        }
        Ok(Self {
            saturation,
            adc_range,
            adc_bits,
        })
    }

    /// ADC range equal to the saturation range.
    pub fn with_saturation(saturation: f64, adc_bits: u32) -> Result<Self> {
        Self::new(saturation, saturation, adc_bits)
    }

    pub fn bins_per_axis(&self) -> usize {
        1usize << self.adc_bits
    }

    /// Interior bin width `delta_B = 2 R_B / (d - 2)`.
    pub fn bin_width(&self) -> f64 {
        2.0 * self.adc_range / (self.bins_per_axis() - 2) as f64
    }

    /// ADC symbol of one quadrature value.
    ///
    /// Interior bins are `I_j = (-R + (j-1) delta, -R + j delta]` for
    /// `j = 1..d-2`; `I_0 = (-inf, -R]` and `I_{d-1} = (R, inf)` catch the rest.
    pub fn adc_bin(&self, x: f64) -> usize {
        let d = self.bins_per_axis();
        let r = self.adc_range;
        if x <= -r {
            0
        } else if x > r {
            d - 1
        } else {
            let j = ((x + r) / self.bin_width()).ceil() as usize;
            j.clamp(1, d - 2)
        }
    }
}

/// Ideal covariance matrix in both conventions for Bob's variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IdealCovariance {
    /// Bob's diagonal is the signal contribution `eta N + u`.
    pub signal: CovarianceMatrix4,
    /// Bob's diagonal includes the heterodyne vacuum unit, `eta N + u + 1`.
    pub detected: CovarianceMatrix4,
}

/// Covariance for Gaussian modulation with `N` photons through the channel.
pub fn ideal_covariance(ch: &ChannelModel, mean_photons: f64) -> Result<IdealCovariance> {
    if !(mean_photons >= 0.0) {
        return Err(Error::Domain(format!(
            "mean photon number must be non-negative, got {mean_photons}"
        )));
    }
    let cross = ch.eta().sqrt() * mean_photons;
    let bob = ch.eta() * mean_photons + ch.excess_noise();
    let build = |bob_var: f64| {
        CovarianceMatrix4::from_matrix_unchecked(Matrix4::new(
            mean_photons,
            0.0,
            cross,
            0.0, //
            0.0,
            mean_photons,
            0.0,
            cross, //
            cross,
            0.0,
            bob_var,
            0.0, //
            0.0,
            cross,
            0.0,
            bob_var,
        ))
    };
    Ok(IdealCovariance {
        signal: build(bob),
        detected: build(bob + 1.0),
    })
}

/// Bound `2 eps_a M^2` on the deviation of Bob's restricted second moments.
pub fn diag_deviation_bound(eps_a: f64, saturation: f64) -> f64 {
    2.0 * eps_a * saturation * saturation
}

/// Bound `2 R_A M eps_p + M eps_{R_A,N}` on the deviation of the restricted
/// cross moments such as `<q_A q_B>`.
pub fn cross_deviation_bound(eps_p: f64, range: f64, saturation: f64, mean_photons: f64) -> f64 {
    2.0 * range * saturation * eps_p + saturation * epsilon_tail(range, mean_photons)
}

/// Bounds fed to the Monte Carlo cross-check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DeviationBounds {
    pub diag: f64,
    pub cross: f64,
}

/// What Alice draws her amplitudes from.
#[derive(Clone, Debug, PartialEq)]
pub enum Modulation {
    Grid(ConstellationGrid),
    Gaussian { mean_photons: f64 },
}

impl Modulation {
    pub fn mean_photons(&self) -> f64 {
        match self {
            Modulation::Grid(g) => g.spec().mean_photons,
            Modulation::Gaussian { mean_photons } => *mean_photons,
        }
    }
}

/// Moments over the window `[-M, M]^2` of Bob's outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Moment {
    /// Probability of landing inside the window.
    Mass,
    QbQb,
    PbPb,
    QaQb,
    PaPb,
    QaPb,
    PaQb,
}

/// Second moment of `(q_A, p_A, q_B, p_B)` with `(q_B, p_B)` restricted to
/// `[-M, M]^2`, not renormalized by the in-window mass.
pub fn clipped_moment_oracle(
    modulation: &Modulation,
    ch: &ChannelModel,
    meas: &MeasurementSpec,
    moment: Moment,
) -> f64 {
    restricted_moment(modulation, ch, meas.saturation, moment)
}

/// [`clipped_moment_oracle`] with an explicit window half-width (may be infinite).
pub fn restricted_moment(
    modulation: &Modulation,
    ch: &ChannelModel,
    window: f64,
    moment: Moment,
) -> f64 {
    let gain = ch.eta().sqrt();
    let (lo, hi) = (-window, window);
    match modulation {
        Modulation::Grid(grid) => {
            let sd = (1.0 + ch.excess_noise()).sqrt();
            grid.points()
                .iter()
                .map(|pt| {
                    let mq = windowed_gaussian_moments(gain * pt.q, sd, lo, hi);
                    let mp = windowed_gaussian_moments(gain * pt.p, sd, lo, hi);
                    let term = match moment {
                        Moment::Mass => mq[0] * mp[0],
                        Moment::QbQb => mq[2] * mp[0],
                        Moment::PbPb => mq[0] * mp[2],
                        Moment::QaQb => pt.q * mq[1] * mp[0],
                        Moment::PaPb => pt.p * mq[0] * mp[1],
                        Moment::QaPb => pt.q * mq[0] * mp[1],
                        Moment::PaQb => pt.p * mq[1] * mp[0],
                    };
                    pt.prob * term
                })
                .sum()
        }
        Modulation::Gaussian { mean_photons } => {
            let var_b = ch.eta() * mean_photons + ch.excess_noise() + 1.0;
            let m = windowed_gaussian_moments(0.0, var_b.sqrt(), lo, hi);
            // E[q_A | q_B] = (cov / var_b) q_B
            let slope = gain * mean_photons / var_b;
            match moment {
                Moment::Mass => m[0] * m[0],
                Moment::QbQb | Moment::PbPb => m[2] * m[0],
                Moment::QaQb | Moment::PaPb => slope * m[2] * m[0],
                Moment::QaPb | Moment::PaQb => 0.0,
            }
        }
    }
}

/// One row of a bound-versus-oracle comparison.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundCheckRow {
    pub bits: u32,
    pub eps_a: f64,
    pub eps_p: f64,
    pub saturation: f64,
    pub bound: f64,
    pub oracle_gap: f64,
    pub satisfied: bool,
}

/// Compares the oracle gap between grid and Gaussian modulation with a bound.
pub fn check_bound(
    grid: &ConstellationGrid,
    ch: &ChannelModel,
    saturation: f64,
    moment: Moment,
    eps_a: f64,
    eps_p: f64,
) -> BoundCheckRow {
    let spec = grid.spec();
    let gauss = Modulation::Gaussian {
        mean_photons: spec.mean_photons,
    };
    let grid_mod = Modulation::Grid(grid.clone());
    let gap = (restricted_moment(&grid_mod, ch, saturation, moment)
        - restricted_moment(&gauss, ch, saturation, moment))
    .abs();
    let bound = match moment {
        Moment::QbQb | Moment::PbPb => diag_deviation_bound(eps_a, saturation),
        _ => cross_deviation_bound(eps_p, spec.range, saturation, spec.mean_photons),
    };
    BoundCheckRow {
        bits: spec.bits,
        eps_a,
        eps_p,
        saturation,
        bound,
        oracle_gap: gap,
        satisfied: gap <= bound,
    }
}

/// CSV with columns `b,eps_a,eps_p,M,bound,oracle_gap,satisfied`.
pub fn write_bound_checks<W: Write>(rows: &[BoundCheckRow], mut out: W) -> io::Result<()> {
    writeln!(out, "{SWEEP_CSV_HEADER}")?;
    writeln!(out, "b,eps_a,eps_p,M,bound,oracle_gap,satisfied")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.bits, r.eps_a, r.eps_p, r.saturation, r.bound, r.oracle_gap, r.satisfied
        )?;
    }
    Ok(())
}
