//! Monte Carlo simulation of the practical protocol.
//!
//! Each round draws Alice's amplitude, sends it through the thermal-loss channel,
//! measures both quadratures with a finite-range heterodyne detector and digitizes
//! them with Bob's ADC. The channel is sampled from the classical outcome
//! distribution it induces, `q_B ~ N(sqrt(eta) q_A, 1 + u)`; Eve is not simulated.
//!
//! Rounds are grouped into fixed-size blocks. Block `i` draws from the ChaCha8
//! stream `i` of the seed, and per-block partial sums are merged in block order,
//! so results are bit-identical for any number of worker threads.

use std::f64::consts::LN_2;
use std::io::{self, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::covariance::{CovarianceMatrix4, DeviationBounds, MeasurementSpec, Modulation};
use crate::numerics::map_indexed;
use crate::security::ChannelModel;
use crate::{Error, Result};

/// Rounds per RNG stream.
pub const BLOCK_ROUNDS: u64 = 1 << 16;
/// Blocks processed concurrently before their partial sums are merged.
const WAVE_BLOCKS: usize = 64;

pub const HISTOGRAM_CSV_HEADER: &str = "# cvqkd-histogram v1";

/// What happens to rounds where a quadrature exceeds the detector range.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SaturationMode {
    /// Saturate to `+-M`; the ADC places the value in an overflow bin.
    #[default]
    Clip,
    /// Drop the round.
    Discard,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub modulation: Modulation,
    pub channel: ChannelModel,
    pub measurement: MeasurementSpec,
    pub n_rounds: u64,
    pub seed: u64,
    pub saturation: SaturationMode,
}

/// A Monte Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
}

/// Sample means of `f(q_A, p_A, q_B, p_B) 1[(q_B, p_B) in [-M, M]^2]` evaluated on
/// the unsaturated outcomes, matching the oracle's restricted moments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RestrictedEstimates {
    pub mass: Estimate,
    pub qb_qb: Estimate,
    pub pb_pb: Estimate,
    pub qa_qb: Estimate,
    pub pa_pb: Estimate,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimResult {
    pub n_rounds: u64,
    pub seed: u64,
    /// Rounds that contribute to the statistics (all of them unless discarding).
    pub n_kept: u64,
    pub saturation: SaturationMode,
    /// Covariance of `(q_A, p_A, q_B, p_B)` after saturation.
    pub empirical_cov: CovarianceMatrix4,
    pub means: [f64; 4],
    /// Standard errors of the four sample variances.
    pub variance_std_err: [f64; 4],
    /// Standard errors of `Cov(q_A, q_B)` and `Cov(p_A, p_B)`.
    pub cross_std_err: [f64; 2],
    /// Counts over ADC cells, index `j_q * d_B + j_p`.
    pub bin_histogram: Vec<u64>,
    /// Plug-in entropy of the ADC symbols, bits.
    pub h_ybar: f64,
    /// Miller-Madow bias-corrected entropy, bits.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_ybar_miller_madow: Option<f64>,
    /// Fraction of all rounds with `|q_B| > M` or `|p_B| > M`.
    pub clip_fraction: f64,
    pub restricted: RestrictedEstimates,
}

impl SimResult {
    /// CSV with columns `j_q,j_p,count`, nonzero cells only.
    pub fn write_histogram_csv<W: Write>(
        &self,
        adc_bins_per_axis: usize,
        mut out: W,
    ) -> io::Result<()> {
        writeln!(out, "{HISTOGRAM_CSV_HEADER}")?;
        writeln!(out, "j_q,j_p,count")?;
        for (cell, &count) in self.bin_histogram.iter().enumerate() {
            if count > 0 {
                writeln!(
                    out,
                    "{},{},{}",
                    cell / adc_bins_per_axis,
                    cell % adc_bins_per_axis,
                    count
                )?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Default)]
struct Partial {
    kept: u64,
    saturated: u64,
    // powers 1..=4 of each quadrature
    power: [[f64; 4]; 4],
    // products q_i q_j for i < j, row-major over the upper triangle
    cross: [f64; 6],
    // (q_A q_B)^2 and (p_A p_B)^2
    cross_sq: [f64; 2],
    // restricted statistics: mass, qb^2, pb^2, qa qb, pa pb and their squares
    restricted: [f64; 5],
    restricted_sq: [f64; 5],
    bins: Vec<u32>,
}

impl Partial {
    fn merge(&mut self, other: &Partial) {
        self.kept += other.kept;
        self.saturated += other.saturated;
        for i in 0..4 {
            for p in 0..4 {
                self.power[i][p] += other.power[i][p];
            }
        }
        for i in 0..6 {
            self.cross[i] += other.cross[i];
        }
        for i in 0..2 {
            self.cross_sq[i] += other.cross_sq[i];
        }
        for i in 0..5 {
            self.restricted[i] += other.restricted[i];
            self.restricted_sq[i] += other.restricted_sq[i];
        }
    }
}

enum Source<'a> {
    Grid {
        points: &'a [crate::constellation::GridPoint],
        sampler: WeightedIndex<f64>,
    },
    Gaussian {
        sd: f64,
    },
}

fn validate(cfg: &SimConfig) -> Result<()> {
    if cfg.n_rounds == 0 {
        return Err(Error::invalid("n_rounds", "must be >= 1"));
    }
    if let Modulation::Gaussian { mean_photons } = cfg.modulation {
        if !(mean_photons >= 0.0) {
            return Err(Error::invalid(
                "N",
                format!("must be non-negative, got {mean_photons}"),
            ));
        }
    }
    Ok(())
}

pub fn run_simulation(cfg: &SimConfig) -> Result<SimResult> {
    validate(cfg)?;
    let source = match &cfg.modulation {
        Modulation::Grid(grid) => Source::Grid {
            points: grid.points(),
            sampler: WeightedIndex::new(grid.points().iter().map(|p| p.prob))
                .map_err(|e| Error::invalid("grid", e.to_string()))?,
        },
        Modulation::Gaussian { mean_photons } => Source::Gaussian {
            sd: mean_photons.sqrt(),
        },
    };
    let meas = &cfg.measurement;
    let d_b = meas.bins_per_axis();
    let mut histogram = vec![0u64; d_b * d_b];
    let mut total = Partial::default();

    let n_blocks = cfg.n_rounds.div_ceil(BLOCK_ROUNDS);
    let mut block = 0u64;
    while block < n_blocks {
        let wave = (n_blocks - block).min(WAVE_BLOCKS as u64) as usize;
        let partials = map_indexed(wave, |i| simulate_block(cfg, &source, block + i as u64));
        for part in &partials {
            total.merge(part);
            for &cell in &part.bins {
                histogram[cell as usize] += 1;
            }
        }
        block += wave as u64;
    }
    Ok(summarize(cfg, total, histogram))
}

fn simulate_block(cfg: &SimConfig, source: &Source<'_>, block: u64) -> Partial {
    let start = block * BLOCK_ROUNDS;
    let rounds = (cfg.n_rounds - start).min(BLOCK_ROUNDS);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(block);

    let gain = cfg.channel.eta().sqrt();
    let noise_sd = (1.0 + cfg.channel.excess_noise()).sqrt();
    let meas = &cfg.measurement;
    let m = meas.saturation;
    let d_b = meas.bins_per_axis();
    let mut part = Partial {
        bins: Vec::with_capacity(rounds as usize),
        ..Partial::default()
    };

    for _ in 0..rounds {
        let (qa, pa) = match source {
            Source::Grid { points, sampler } => {
                let pt = &points[sampler.sample(&mut rng)];
                (pt.q, pt.p)
            }
            Source::Gaussian { sd } => {
                let z1: f64 = StandardNormal.sample(&mut rng);
                let z2: f64 = StandardNormal.sample(&mut rng);
                (sd * z1, sd * z2)
            }
        };
        let z3: f64 = StandardNormal.sample(&mut rng);
        let z4: f64 = StandardNormal.sample(&mut rng);
        let qb_raw = gain * qa + noise_sd * z3;
        let pb_raw = gain * pa + noise_sd * z4;

        let q_out = qb_raw.abs() > m;
        let p_out = pb_raw.abs() > m;
        let inside = !(q_out || p_out);
        if !inside {
            part.saturated += 1;
        }

        let ind = if inside { 1.0 } else { 0.0 };
        let stats = [
            ind,
            ind * qb_raw * qb_raw,
            ind * pb_raw * pb_raw,
            ind * qa * qb_raw,
            ind * pa * pb_raw,
        ];
        for (i, s) in stats.iter().enumerate() {
            part.restricted[i] += s;
            part.restricted_sq[i] += s * s;
        }

        if !inside && cfg.saturation == SaturationMode::Discard {
            continue;
        }
        let qb = qb_raw.clamp(-m, m);
        let pb = pb_raw.clamp(-m, m);
        let jq = if q_out {
            overflow_bin(qb_raw, d_b)
        } else {
            meas.adc_bin(qb)
        };
        let jp = if p_out {
            overflow_bin(pb_raw, d_b)
        } else {
            meas.adc_bin(pb)
        };
        part.bins.push((jq * d_b + jp) as u32);

        part.kept += 1;
        let x = [qa, pa, qb, pb];
        for (i, &xi) in x.iter().enumerate() {
            let mut pow = xi;
            for p in 0..4 {
                part.power[i][p] += pow;
                pow *= xi;
            }
        }
        let mut idx = 0;
        for i in 0..4 {
            for j in (i + 1)..4 {
                part.cross[idx] += x[i] * x[j];
                idx += 1;
            }
        }
        part.cross_sq[0] += (qa * qb).powi(2);
        part.cross_sq[1] += (pa * pb).powi(2);
    }
    part
}

/// Saturated samples always land in `I_0` or `I_{d-1}`.
fn overflow_bin(x: f64, d: usize) -> usize {
    if x < 0.0 {
        0
    } else {
        d - 1
    }
}

fn cross_index(i: usize, j: usize) -> usize {
    // upper-triangle offsets for (0,1) (0,2) (0,3) (1,2) (1,3) (2,3)
    const OFFSETS: [usize; 4] = [0, 3, 5, 6];
    OFFSETS[i] + (j - i - 1)
}

fn summarize(cfg: &SimConfig, total: Partial, histogram: Vec<u64>) -> SimResult {
    let n = total.kept.max(1) as f64;
    let raw = |i: usize, p: usize| total.power[i][p] / n;
    let means = [raw(0, 0), raw(1, 0), raw(2, 0), raw(3, 0)];

    let mut cov = nalgebra::Matrix4::zeros();
    for i in 0..4 {
        cov[(i, i)] = raw(i, 1) - means[i] * means[i];
        for j in (i + 1)..4 {
            let c = total.cross[cross_index(i, j)] / n - means[i] * means[j];
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
    }

    let mut variance_std_err = [0.0; 4];
    for (i, se) in variance_std_err.iter_mut().enumerate() {
        let mu = means[i];
        let m4 = raw(i, 3) - 4.0 * mu * raw(i, 2) + 6.0 * mu * mu * raw(i, 1) - 3.0 * mu.powi(4);
        let var = cov[(i, i)];
        *se = ((m4 - var * var).max(0.0) / n).sqrt();
    }
    let cross_se = |k: usize, i: usize, j: usize| {
        let second = total.cross_sq[k] / n;
        let c = total.cross[cross_index(i, j)] / n;
        ((second - c * c).max(0.0) / n).sqrt()
    };
    let cross_std_err = [cross_se(0, 0, 2), cross_se(1, 1, 3)];

    let all = cfg.n_rounds as f64;
    let est = |i: usize| {
        let mean = total.restricted[i] / all;
        let var = (total.restricted_sq[i] / all - mean * mean).max(0.0);
        Estimate {
            mean,
            std_err: (var / all).sqrt(),
        }
    };

    let h_ybar = if total.kept > 0 {
        plug_in_entropy(&histogram).unwrap_or(0.0)
    } else {
        0.0
    };
    let nonzero = histogram.iter().filter(|&&c| c > 0).count();
    let h_mm = if total.kept > 0 {
        h_ybar + (nonzero.saturating_sub(1)) as f64 / (2.0 * total.kept as f64 * LN_2)
    } else {
        0.0
    };

    SimResult {
        n_rounds: cfg.n_rounds,
        seed: cfg.seed,
        n_kept: total.kept,
        saturation: cfg.saturation,
        empirical_cov: CovarianceMatrix4::from_matrix_unchecked(cov),
        means,
        variance_std_err,
        cross_std_err,
        bin_histogram: histogram,
        h_ybar,
        h_ybar_miller_madow: Some(h_mm),
        clip_fraction: total.saturated as f64 / all,
        restricted: RestrictedEstimates {
            mass: est(0),
            qb_qb: est(1),
            pb_pb: est(2),
            qa_qb: est(3),
            pa_pb: est(4),
        },
    }
}

/// Plug-in Shannon entropy `-sum (c/n) log2(c/n)` of a histogram, bits.
pub fn plug_in_entropy(counts: &[u64]) -> Result<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Domain("entropy of an empty histogram".into()));
    }
    let n = total as f64;
    let h = -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.log2()
        })
        .sum::<f64>();
    Ok(h.max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// The Monte Carlo error would exceed a fifth of the bound.
    Unresolvable {
        required_rounds: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentCheck {
    pub moment: String,
    pub bound: f64,
    /// `|grid - gaussian|` of the restricted moment; NaN when not simulated.
    pub gap: f64,
    pub std_err: f64,
    #[serde(flatten)]
    pub status: CheckStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpsilonCheckReport {
    pub bounds: DeviationBounds,
    pub checks: Vec<MomentCheck>,
    pub grid: SimResult,
    /// Gaussian-modulated companion run, absent when no check was resolvable.
    pub gaussian: Option<SimResult>,
}

impl EpsilonCheckReport {
    /// True when no resolvable check failed.
    pub fn all_resolvable_pass(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }
}

/// Offset separating the Gaussian companion run's seed from the grid run's.
const GAUSSIAN_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

/// Cross-validates covariance deviation bounds by Monte Carlo.
///
/// Runs the grid-modulated protocol and, if any check is resolvable, a
/// Gaussian-modulated companion with the same channel and detector. A check is
/// resolvable when the predicted standard error of the gap is below a fifth of
/// its bound; otherwise it is reported with the number of rounds that would be
/// needed. A resolvable check passes when `gap <= bound + 3 sigma`.
pub fn empirical_epsilon_check(
    cfg: &SimConfig,
    bounds: &DeviationBounds,
) -> Result<EpsilonCheckReport> {
    let grid_result = run_simulation(cfg)?;
    empirical_epsilon_check_with(cfg, bounds, grid_result)
}

/// [`empirical_epsilon_check`] reusing an existing grid-modulated run.
pub fn empirical_epsilon_check_with(
    cfg: &SimConfig,
    bounds: &DeviationBounds,
    grid_result: SimResult,
) -> Result<EpsilonCheckReport> {
    let mean_photons = match &cfg.modulation {
        Modulation::Grid(g) => g.spec().mean_photons,
        Modulation::Gaussian { .. } => {
            return Err(Error::invalid(
                "modulation",
                "the epsilon check needs a grid-modulated run",
            ));
        }
    };
    let eta = cfg.channel.eta();
    let var_b = eta * mean_photons + cfg.channel.excess_noise() + 1.0;
    let cov = eta.sqrt() * mean_photons;
    // Gaussian fourth moments bound the per-round variance of each statistic
    let diag_second = 3.0 * var_b * var_b;
    let cross_second = mean_photons * var_b + 2.0 * cov * cov;
    let n = cfg.n_rounds as f64;

    let specs = [
        ("q_B^2", bounds.diag, diag_second),
        ("p_B^2", bounds.diag, diag_second),
        ("q_A q_B", bounds.cross, cross_second),
        ("p_A p_B", bounds.cross, cross_second),
    ];
    let predicted: Vec<f64> = specs
        .iter()
        .map(|&(_, _, s)| (2.0 * s / n).sqrt())
        .collect();
    let resolvable: Vec<bool> = specs
        .iter()
        .zip(&predicted)
        .map(|(&(_, bound, _), &se)| se < bound / 5.0)
        .collect();

    let gaussian = if resolvable.iter().any(|&r| r) {
        let companion = SimConfig {
            modulation: Modulation::Gaussian { mean_photons },
            seed: cfg.seed.wrapping_add(GAUSSIAN_SEED_OFFSET),
            ..cfg.clone()
        };
        Some(run_simulation(&companion)?)
    } else {
        None
    };

    let pick = |r: &SimResult, i: usize| match i {
        0 => r.restricted.qb_qb,
        1 => r.restricted.pb_pb,
        2 => r.restricted.qa_qb,
        _ => r.restricted.pa_pb,
    };
    let checks = specs
        .iter()
        .enumerate()
        .map(|(i, &(name, bound, _))| {
            if !resolvable[i] {
                let required = (n * (5.0 * predicted[i] / bound).powi(2)).ceil();
                return MomentCheck {
                    moment: name.to_string(),
                    bound,
                    gap: f64::NAN,
                    std_err: predicted[i],
                    status: CheckStatus::Unresolvable {
                        required_rounds: if required.is_finite() {
                            required as u64
                        } else {
                            u64::MAX
                        },
                    },
                };
            }
            let g = gaussian
                .as_ref()
                .expect("companion run exists when a check is resolvable");
            let (a, b) = (pick(&grid_result, i), pick(g, i));
            let gap = (a.mean - b.mean).abs();
            let std_err = a.std_err.hypot(b.std_err);
            let status = if gap <= bound + 3.0 * std_err {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            };
            MomentCheck {
                moment: name.to_string(),
                bound,
                gap,
                std_err,
                status,
            }
        })
        .collect();

    Ok(EpsilonCheckReport {
        bounds: *bounds,
        checks,
        grid: grid_result,
        gaussian,
    })
}
