//! The four CLI commands as library calls, plus their CSV emitters.
//!
//! Each `cmd_*` is a pure function of the configuration; the binary only adds
//! argument parsing and file handling.

use std::io::{self, Write};

use serde::Serialize;

use crate::config::RunConfig;
use crate::constellation::{
    build_grid, epsilon_a, epsilon_p_closed, epsilon_p_numeric, epsilon_tail, resolve_dimension,
    ConstellationGrid, ConstellationSpec, DEFAULT_QUADRATURE_ORDER,
};
use crate::covariance::{
    cross_deviation_bound, diag_deviation_bound, restricted_moment, DeviationBounds, Modulation,
    Moment,
};
use crate::numerics::geometric_sweep;
use crate::security::{f_continuity, rate_finite, Cardinality};
use crate::sim::{
    empirical_epsilon_check, CheckStatus, MomentCheck, RestrictedEstimates, SimConfig, SimResult,
};
use crate::Result;

pub const KEYRATE_CSV_HEADER: &str = "# cvqkd-keyrate v1";
pub const FCURVE_CSV_HEADER: &str = "# cvqkd-fcurve v1";
pub const COVBOUNDS_CSV_HEADER: &str = "# cvqkd-covbounds v1";

/// With `R_A = 6 sqrt(N)` and `M = 6 sqrt(eta N)` the cross-term
/// bound is about `72 eps_p sqrt(eta) N`, so it is small only for `eps_p << 1/72`.
pub const EPS_P_THRESHOLD: f64 = 1.0 / 72.0;

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridSummary {
    pub bits: u32,
    pub points: usize,
    pub delta_a: f64,
    /// Absent when `b` exceeds the configured `eps_a_max_b`.
    pub epsilon_a: Option<f64>,
    pub fock_dim: Option<usize>,
    pub epsilon_p_numeric: f64,
    pub epsilon_p_closed: f64,
    pub epsilon_tail: f64,
}

pub struct GridOutput {
    pub grid: ConstellationGrid,
    pub summary: GridSummary,
}

impl GridOutput {
    /// The summary and every point as `[j, k, q, p, re_alpha, im_alpha, p_jk]`.
    pub fn to_json(&self) -> serde_json::Value {
        let points: Vec<_> = self
            .grid
            .points()
            .iter()
            .map(|pt| {
                serde_json::json!([pt.j, pt.k, pt.q, pt.p, pt.alpha.re, pt.alpha.im, pt.prob])
            })
            .collect();
        serde_json::json!({
            "summary": self.summary,
            "columns": ["j", "k", "q_Aj", "p_Ak", "re_alpha", "im_alpha", "p_jk"],
            "points": points,
        })
    }
}

pub fn cmd_grid(cfg: &RunConfig) -> Result<GridOutput> {
    let spec = cfg.constellation_spec()?;
    let policy = cfg.truncation_policy()?;
    let grid = build_grid(&spec)?;
    let (eps_a, dim) = if spec.bits <= cfg.eps_a_max_b() {
        (
            Some(epsilon_a(&grid, &policy)?),
            Some(resolve_dimension(&grid, &policy)?),
        )
    } else {
        log::info!(
            "b = {} above eps_a_max_b = {}; skipping epsilon_a",
            spec.bits,
            cfg.eps_a_max_b()
        );
        (None, None)
    };
    let summary = GridSummary {
        bits: spec.bits,
        points: grid.len(),
        delta_a: spec.bin_width(),
        epsilon_a: eps_a,
        fock_dim: dim,
        epsilon_p_numeric: epsilon_p_numeric(&spec, DEFAULT_QUADRATURE_ORDER)?,
        epsilon_p_closed: epsilon_p_closed(&spec),
        epsilon_tail: epsilon_tail(spec.range, spec.mean_photons),
    };
    Ok(GridOutput { grid, summary })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KeyRateRow {
    pub n: f64,
    pub r_inf: f64,
    pub f_term: f64,
    /// `Delta(eps_s, |Y|)`.
    pub aep_term: f64,
    /// `Delta / sqrt(n)`, the amount subtracted.
    pub aep_correction: f64,
    pub lhl_term: f64,
    pub r_n: f64,
    pub positive: bool,
    /// First row with a positive rate.
    pub crossover: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KeyRateOutput {
    pub rows: Vec<KeyRateRow>,
    pub notes: Vec<String>,
}

impl KeyRateOutput {
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{KEYRATE_CSV_HEADER}")?;
        writeln!(
            out,
            "n,r_inf,f_term,aep_term,aep_correction,lhl_term,r_n,positive,crossover"
        )?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.n,
                r.r_inf,
                r.f_term,
                r.aep_term,
                r.aep_correction,
                r.lhl_term,
                r.r_n,
                r.positive,
                r.crossover
            )?;
        }
        Ok(())
    }
}

pub fn cmd_keyrate(cfg: &RunConfig, exact_lhl: bool) -> Result<KeyRateOutput> {
    let ch = cfg.channel_model()?;
    let n_photons = cfg.mean_photons()?;
    let sizes = cfg.block_sizes()?;
    let mut rows = Vec::with_capacity(sizes.len());
    let mut notes = Vec::new();
    let mut seen_positive = false;
    for n in sizes {
        let mut params = cfg.security_params(n)?;
        params.exact_lhl |= exact_lhl;
        let rep = rate_finite(&ch, n_photons, &params)?;
        if notes.is_empty() {
            notes = rep.notes.clone();
        }
        let positive = rep.r_n > 0.0;
        rows.push(KeyRateRow {
            n,
            r_inf: rep.r_inf,
            f_term: rep.components.f_term,
            aep_term: rep.components.aep_term,
            aep_correction: rep.components.aep_term / n.sqrt(),
            lhl_term: rep.components.lhl_term,
            r_n: rep.r_n,
            positive,
            crossover: positive && !seen_positive,
        });
        seen_positive |= positive;
    }
    Ok(KeyRateOutput { rows, notes })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FCurveRow {
    pub log2_ybar: u32,
    pub eps_a: f64,
    pub f_term: f64,
}

/// Cardinalities plotted alongside the configured one.
const FCURVE_LOG2_YBAR: [u32; 4] = [6, 12, 18, 24];
const FCURVE_POINTS: usize = 61;

/// `f(eps_a, |Y|)` for `eps_a` in `1e-8..1e-2`, several `|Y|`.
pub fn cmd_fcurve(cfg: &RunConfig) -> Result<Vec<FCurveRow>> {
    let mut sizes: Vec<u32> = FCURVE_LOG2_YBAR.to_vec();
    if let Ok(c) = cfg.cardinality() {
        sizes.push(c.log2() as u32);
    }
    sizes.sort_unstable();
    sizes.dedup();
    let eps = geometric_sweep(1e-8, 1e-2, FCURVE_POINTS);
    let mut rows = Vec::with_capacity(sizes.len() * eps.len());
    for &l in &sizes {
        let card = Cardinality::from_log2(l)?;
        for &e in &eps {
            rows.push(FCurveRow {
                log2_ybar: l,
                eps_a: e,
                f_term: f_continuity(e, card)?,
            });
        }
    }
    Ok(rows)
}

pub fn write_fcurve_csv<W: Write>(rows: &[FCurveRow], mut out: W) -> io::Result<()> {
    writeln!(out, "{FCURVE_CSV_HEADER}")?;
    writeln!(out, "log2_ybar,eps_a,f_term")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.log2_ybar, r.eps_a, r.f_term)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CovBoundRow {
    pub b: u32,
    pub delta_a: f64,
    pub epsilon_a: Option<f64>,
    pub epsilon_p_closed: f64,
    pub epsilon_p_numeric: f64,
    pub diag_bound: Option<f64>,
    /// Cross bound with the closed-form `eps_p`.
    pub cross_bound: f64,
    /// `cross_bound / (sqrt(eta) N)`.
    pub cross_ratio: f64,
    pub cross_bound_numeric: f64,
    pub cross_ratio_numeric: f64,
    /// Cross bound at least as large as the cross covariance it bounds.
    pub exceeds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CovBoundsOutput {
    pub saturation: f64,
    pub expected_cross: f64,
    pub rows: Vec<CovBoundRow>,
    /// Smallest `b` with closed-form `eps_p < 1/72`.
    pub threshold_b: Option<u32>,
}

impl CovBoundsOutput {
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{COVBOUNDS_CSV_HEADER}")?;
        writeln!(
            out,
            "# M={} expected_cross={} threshold_b={}",
            self.saturation,
            self.expected_cross,
            self.threshold_b
                .map(|b| b.to_string())
                .unwrap_or_else(|| "none".into())
        )?;
        writeln!(
            out,
            "b,delta_A,epsilon_a,epsilon_p_closed,epsilon_p_numeric,diag_bound,cross_bound,cross_ratio,\
             cross_bound_numeric,cross_ratio_numeric,exceeds"
        )?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.b,
                r.delta_a,
                opt(r.epsilon_a),
                r.epsilon_p_closed,
                r.epsilon_p_numeric,
                opt(r.diag_bound),
                r.cross_bound,
                r.cross_ratio,
                r.cross_bound_numeric,
                r.cross_ratio_numeric,
                r.exceeds
            )?;
        }
        Ok(())
    }
}

/// Smallest `b` in `1..=20` whose closed-form `eps_p` is below `1/72`.
pub fn eps_p_threshold_bits(mean_photons: f64, range: f64) -> Result<Option<u32>> {
    for b in 1..=20 {
        let spec = ConstellationSpec::new(mean_photons, range, b)?;
        if epsilon_p_closed(&spec) < EPS_P_THRESHOLD {
            return Ok(Some(b));
        }
    }
    Ok(None)
}

pub fn cmd_covbounds(cfg: &RunConfig) -> Result<CovBoundsOutput> {
    let c = cfg.constellation.clone().unwrap_or_default();
    let n_photons = cfg.mean_photons()?;
    let range = c
        .range
        .ok_or_else(|| crate::Error::invalid("constellation.R_A", "missing"))?;
    let ch = cfg.channel_model()?;
    let sat = cfg.measurement_spec()?.saturation;
    let policy = cfg.truncation_policy()?;
    let (b_lo, b_hi) = cfg.b_range()?;
    let expected = ch.eta().sqrt() * n_photons;

    let mut rows = Vec::new();
    for b in b_lo..=b_hi {
        let spec = ConstellationSpec::new(n_photons, range, b).map_err(|e| match e {
            crate::Error::InvalidParam { field, reason } => {
                crate::Error::invalid(format!("constellation.{field}"), reason)
            }
            other => other,
        })?;
        let eps_a = if b <= cfg.eps_a_max_b() {
            Some(epsilon_a(&build_grid(&spec)?, &policy)?)
        } else {
            None
        };
        let eps_pc = epsilon_p_closed(&spec);
        let eps_pn = epsilon_p_numeric(&spec, DEFAULT_QUADRATURE_ORDER)?;
        let cross = cross_deviation_bound(eps_pc, range, sat, n_photons);
        let cross_n = cross_deviation_bound(eps_pn, range, sat, n_photons);
        rows.push(CovBoundRow {
            b,
            delta_a: spec.bin_width(),
            epsilon_a: eps_a,
            epsilon_p_closed: eps_pc,
            epsilon_p_numeric: eps_pn,
            diag_bound: eps_a.map(|e| diag_deviation_bound(e, sat)),
            cross_bound: cross,
            cross_ratio: cross / expected,
            cross_bound_numeric: cross_n,
            cross_ratio_numeric: cross_n / expected,
            exceeds: cross >= expected,
        });
    }
    Ok(CovBoundsOutput {
        saturation: sat,
        expected_cross: expected,
        rows,
        threshold_b: eps_p_threshold_bits(n_photons, range)?,
    })
}

/// Semi-analytic restricted moments of the grid-modulated protocol.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OracleMoments {
    /// Unclipped `eta N + u + 1` for Gaussian modulation.
    pub var_qb_gaussian: f64,
    pub mass: f64,
    pub qb_qb: f64,
    pub qa_qb: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulateOutput {
    pub result: SimResult,
    pub oracle: OracleMoments,
    pub eps_a: Option<f64>,
    pub eps_p: f64,
    pub bounds: Option<DeviationBounds>,
    pub checks: Vec<MomentCheck>,
    /// Restricted moments of the Gaussian-modulated companion run.
    pub gaussian_restricted: Option<RestrictedEstimates>,
    /// No resolvable check failed.
    pub passed: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SimulateOptions {
    pub miller_madow: bool,
    pub discard_saturated: bool,
}

pub fn cmd_simulate(cfg: &RunConfig, opts: SimulateOptions) -> Result<SimulateOutput> {
    let spec = cfg.constellation_spec()?;
    let ch = cfg.channel_model()?;
    let meas = cfg.measurement_spec()?;
    let grid = build_grid(&spec)?;
    let mut saturation = cfg.saturation_mode();
    if opts.discard_saturated {
        saturation = crate::sim::SaturationMode::Discard;
    }

    let eps_a = match cfg.security.as_ref().and_then(|s| s.eps_a) {
        Some(e) => Some(e),
        None if spec.bits <= cfg.eps_a_max_b() => {
            Some(epsilon_a(&grid, &cfg.truncation_policy()?)?)
        }
        None => None,
    };
    let eps_p = epsilon_p_numeric(&spec, DEFAULT_QUADRATURE_ORDER)?;
    let modulation = Modulation::Grid(grid);
    let oracle = OracleMoments {
        var_qb_gaussian: ch.eta() * spec.mean_photons + ch.excess_noise() + 1.0,
        mass: restricted_moment(&modulation, &ch, meas.saturation, Moment::Mass),
        qb_qb: restricted_moment(&modulation, &ch, meas.saturation, Moment::QbQb),
        qa_qb: restricted_moment(&modulation, &ch, meas.saturation, Moment::QaQb),
    };
    let sim_cfg = SimConfig {
        modulation,
        channel: ch,
        measurement: meas,
        n_rounds: cfg.n_rounds()?,
        seed: cfg.seed(),
        saturation,
    };

    let (mut result, bounds, checks, gaussian) = match eps_a {
        Some(eps_a) => {
            let bounds = DeviationBounds {
                diag: diag_deviation_bound(eps_a, meas.saturation),
                cross: cross_deviation_bound(eps_p, spec.range, meas.saturation, spec.mean_photons),
            };
            let rep = empirical_epsilon_check(&sim_cfg, &bounds)?;
            (
                rep.grid,
                Some(bounds),
                rep.checks,
                rep.gaussian.map(|g| g.restricted),
            )
        }
        None => {
            log::warn!(
                "epsilon_a unavailable for b = {}; bound checks skipped",
                spec.bits
            );
            (
                crate::sim::run_simulation(&sim_cfg)?,
                None,
                Vec::new(),
                None,
            )
        }
    };
    if !opts.miller_madow {
        result.h_ybar_miller_madow = None;
    }
    let passed = checks.iter().all(|c| c.status != CheckStatus::Fail);
    Ok(SimulateOutput {
        result,
        oracle,
        eps_a,
        eps_p,
        bounds,
        checks,
        gaussian_restricted: gaussian,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> RunConfig {
        RunConfig::from_toml_str(
            r#"
[constellation]
N = 3.0
R_A = 10.392304845413264
b = 2

[channel]
eta = 0.1
u = 1e-4

[measurement]
M = 6.0
b_B = 4

[security]
eps_s = 1e-10
eps_h = 1e-10
eps_a = 1e-6
beta = 0.95
n_sweep = { n_min = 1e4, n_max = 1e12, points = 20 }

[sim]
n_rounds = 20000
seed = 9
"#,
        )
        .unwrap()
    }

    #[test]
    fn grid_summary_for_coarse_grid() {
        let out = cmd_grid(&base()).unwrap();
        assert_eq!(out.grid.len(), 16);
        assert!(out.summary.epsilon_a.unwrap() > 0.1);
        assert_eq!(out.summary.delta_a, 10.392304845413264 / 2.0);
        let json = out.to_json();
        assert_eq!(json["points"].as_array().unwrap().len(), 16);
    }

    #[test]
    fn keyrate_rows_monotone() {
        let out = cmd_keyrate(&base(), false).unwrap();
        assert_eq!(out.rows.len(), 20);
        for w in out.rows.windows(2) {
            assert!(w[1].r_n >= w[0].r_n);
        }
        assert!(out.rows.iter().filter(|r| r.crossover).count() <= 1);
        let mut buf = Vec::new();
        out.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(KEYRATE_CSV_HEADER));
        assert_eq!(text.lines().count(), 22);
    }

    #[test]
    fn fcurve_includes_configured_cardinality() {
        let rows = cmd_fcurve(&base()).unwrap();
        // b_B = 4 adds |Y| = 2^8 to the four defaults
        assert_eq!(rows.len(), 5 * FCURVE_POINTS);
        assert!(rows.iter().all(|r| r.f_term > 0.0));
    }

    #[test]
    fn covbounds_rows_and_threshold() {
        let mut cfg = base();
        cfg.sweep = Some(crate::config::SweepSection {
            b_min: Some(1),
            b_max: Some(4),
        });
        let out = cmd_covbounds(&cfg).unwrap();
        assert_eq!(out.rows.len(), 4);
        for r in &out.rows {
            assert!(r.cross_bound >= 0.0 && r.diag_bound.unwrap() >= 0.0);
        }
        assert!(out.rows[0].exceeds);
        assert!(out.threshold_b.is_some());
    }

    #[test]
    fn simulate_runs_checks() {
        let out = cmd_simulate(&base(), SimulateOptions::default()).unwrap();
        assert_eq!(out.result.bin_histogram.iter().sum::<u64>(), 20000);
        assert!(out.result.h_ybar_miller_madow.is_none());
        assert_eq!(out.checks.len(), 4);
        assert!(out.passed);
    }
}
