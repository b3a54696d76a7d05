//! Declarative run configuration shared by the CLI and the simulator.
//!
//! A TOML document with the sections `constellation`, `channel`, `measurement`,
//! `security`, `sim`, `output` and `sweep`. Every field is optional at parse
//! time; the accessors below validate what a command needs and name the
//! offending field (`constellation.N`, `security.beta`, ...) on failure.
//!
//! ```toml
//! [constellation]
//! N = 3.0
//! R_A = 10.392304845413264
//! b = 6
//!
//! [channel]
//! eta = 0.1
//! u = 1e-4
//! ```

use std::path::Path;

use serde::Deserialize;

use crate::constellation::ConstellationSpec;
use crate::covariance::MeasurementSpec;
use crate::fock::TruncationPolicy;
use crate::numerics::geometric_sweep;
use crate::security::{Cardinality, ChannelModel, Reconciliation, SecurityParams};
use crate::sim::SaturationMode;
use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub constellation: Option<ConstellationSection>,
    pub channel: Option<ChannelSection>,
    pub measurement: Option<MeasurementSection>,
    pub security: Option<SecuritySection>,
    pub sim: Option<SimSection>,
    pub output: Option<OutputSection>,
    pub sweep: Option<SweepSection>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstellationSection {
    #[serde(rename = "N")]
    pub mean_photons: Option<f64>,
    #[serde(rename = "R_A")]
    pub range: Option<f64>,
    pub b: Option<u32>,
    /// Fixed Fock cutoff; AUTO when absent.
    pub n_max: Option<usize>,
    pub truncation_tol: Option<f64>,
    /// Largest `b` for which `epsilon_a` is computed (cost grows as `4^b`).
    pub eps_a_max_b: Option<u32>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub eta: Option<f64>,
    pub u: Option<f64>,
    pub omega: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSection {
    #[serde(rename = "M")]
    pub saturation: Option<f64>,
    #[serde(rename = "R_B")]
    pub adc_range: Option<f64>,
    #[serde(rename = "b_B")]
    pub adc_bits: Option<u32>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NSweep {
    pub n_min: f64,
    pub n_max: f64,
    pub points: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecuritySection {
    pub eps_s: Option<f64>,
    pub eps_h: Option<f64>,
    pub eps_a: Option<f64>,
    pub eps_p: Option<f64>,
    pub beta: Option<f64>,
    /// Explicit reconciliation: `H(Ybar)` and `leak_EC`, both per round.
    pub h_ybar: Option<f64>,
    pub leak_ec: Option<f64>,
    /// `log2 |Ybar|`; defaults to `2 b_B`.
    pub log2_ybar: Option<u32>,
    pub n: Option<f64>,
    pub n_sweep: Option<NSweep>,
    pub exact_lhl: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub n_rounds: Option<u64>,
    pub seed: Option<u64>,
    pub discard_saturated: Option<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub format: Option<OutputFormat>,
    pub path: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub b_min: Option<u32>,
    pub b_max: Option<u32>,
}

/// Default cap on `b` for `epsilon_a`, 4096 grid points.
pub const DEFAULT_EPS_A_MAX_B: u32 = 6;

fn missing(field: &str) -> Error {
    Error::invalid(field, "missing")
}

/// Prefixes the field name of a validation error with its config section.
fn scoped(section: &str, err: Error) -> Error {
    match err {
        Error::InvalidParam { field, reason } => Error::InvalidParam {
            field: format!("{section}.{field}"),
            reason,
        },
        other => other,
    }
}

fn require<T: Copy>(value: Option<T>, field: &str) -> Result<T> {
    value.ok_or_else(|| missing(field))
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| Error::invalid("config", e.message().to_string()))?;
        Self::from_table(table)
    }

    /// Reads `path` (if any), applies `key=value` overrides, and parses the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    Error::invalid("config", format!("cannot read {}: {e}", p.display()))
                })?;
                toml::from_str(&text)
                    .map_err(|e| Error::invalid("config", e.message().to_string()))?
            }
            None => toml::Table::new(),
        };
        for ov in overrides {
            apply_override(&mut table, ov)?;
        }
        Self::from_table(table)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::invalid("config", e.message().to_string()))
    }

    fn constellation_section(&self) -> Result<&ConstellationSection> {
        self.constellation
            .as_ref()
            .ok_or_else(|| missing("constellation.N"))
    }

    /// `constellation.N` alone, for commands that do not build a grid.
    pub fn mean_photons(&self) -> Result<f64> {
        let n = require(
            self.constellation_section()?.mean_photons,
            "constellation.N",
        )?;
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::invalid(
                "constellation.N",
                format!("must be positive, got {n}"),
            ));
        }
        Ok(n)
    }

    pub fn constellation_spec(&self) -> Result<ConstellationSpec> {
        let c = self.constellation_section()?;
        let n = require(c.mean_photons, "constellation.N")?;
        let r = require(c.range, "constellation.R_A")?;
        let b = require(c.b, "constellation.b")?;
        ConstellationSpec::new(n, r, b).map_err(|e| scoped("constellation", e))
    }

    pub fn truncation_policy(&self) -> Result<TruncationPolicy> {
        let c = self.constellation_section()?;
        let mut policy = match c.n_max {
            Some(0) => return Err(Error::invalid("constellation.n_max", "must be >= 1")),
            Some(n) => TruncationPolicy::fixed(n),
            None => TruncationPolicy::default(),
        };
        if let Some(tol) = c.truncation_tol {
            if !(tol > 0.0 && tol < 1.0) {
                return Err(Error::invalid(
                    "constellation.truncation_tol",
                    format!("must lie in (0, 1), got {tol}"),
                ));
            }
            policy.tolerance = tol;
        }
        Ok(policy)
    }

    pub fn eps_a_max_b(&self) -> u32 {
        self.constellation
            .as_ref()
            .and_then(|c| c.eps_a_max_b)
            .unwrap_or(DEFAULT_EPS_A_MAX_B)
    }

    pub fn channel_model(&self) -> Result<ChannelModel> {
        let c = self
            .channel
            .as_ref()
            .ok_or_else(|| missing("channel.eta"))?;
        let eta = require(c.eta, "channel.eta")?;
        match (c.u, c.omega) {
            (Some(u), None) => {
                ChannelModel::from_excess_noise(eta, u).map_err(|e| scoped("channel", e))
            }
            (None, Some(omega)) => ChannelModel::new(eta, omega).map_err(|e| scoped("channel", e)),
            (None, None) => Err(Error::invalid(
                "channel.u",
                "give exactly one of `u` or `omega`",
            )),
            (Some(_), Some(_)) => Err(Error::invalid(
                "channel.omega",
                "give exactly one of `u` or `omega`",
            )),
        }
    }

    pub fn measurement_spec(&self) -> Result<MeasurementSpec> {
        let m = self
            .measurement
            .as_ref()
            .ok_or_else(|| missing("measurement.M"))?;
        let sat = require(m.saturation, "measurement.M")?;
        let bits = require(m.adc_bits, "measurement.b_B")?;
        MeasurementSpec::new(sat, m.adc_range.unwrap_or(sat), bits)
            .map_err(|e| scoped("measurement", e))
    }

    fn security_section(&self) -> Result<&SecuritySection> {
        self.security
            .as_ref()
            .ok_or_else(|| missing("security.eps_s"))
    }

    pub fn cardinality(&self) -> Result<Cardinality> {
        if let Some(l) = self.security.as_ref().and_then(|s| s.log2_ybar) {
            return Cardinality::from_log2(l).map_err(|e| scoped("security", e));
        }
        let bits = self
            .measurement
            .as_ref()
            .and_then(|m| m.adc_bits)
            .ok_or_else(|| {
                Error::invalid("measurement.b_B", "missing (or set security.log2_ybar)")
            })?;
        Cardinality::from_bits_per_quadrature(bits).map_err(|e| scoped("measurement", e))
    }

    pub fn reconciliation(&self) -> Result<Reconciliation> {
        let s = self.security_section()?;
        match (s.beta, s.h_ybar, s.leak_ec) {
            (Some(beta), None, None) => Ok(Reconciliation::Efficiency(beta)),
            (None, Some(h_ybar), Some(leak_ec)) => Ok(Reconciliation::Explicit { h_ybar, leak_ec }),
            (None, None, None) => Err(Error::invalid(
                "security.beta",
                "missing; the reconciliation efficiency has no default",
            )),
            (Some(_), _, _) => Err(Error::invalid(
                "security.beta",
                "conflicts with security.h_ybar/leak_ec",
            )),
            (None, None, Some(_)) => Err(missing("security.h_ybar")),
            (None, Some(_), None) => Err(missing("security.leak_ec")),
        }
    }

    /// Security parameters at block size `n`.
    pub fn security_params(&self, block_size: f64) -> Result<SecurityParams> {
        let s = self.security_section()?;
        let params = SecurityParams {
            eps_s: require(s.eps_s, "security.eps_s")?,
            eps_h: require(s.eps_h, "security.eps_h")?,
            eps_a: require(s.eps_a, "security.eps_a")?,
            eps_p: s.eps_p.unwrap_or(0.0),
            block_size,
            cardinality: self.cardinality()?,
            reconciliation: self.reconciliation()?,
            exact_lhl: s.exact_lhl.unwrap_or(false),
        };
        params.validate().map_err(|e| scoped("security", e))?;
        Ok(params)
    }

    /// Block sizes from `security.n` or the geometric `security.n_sweep`.
    pub fn block_sizes(&self) -> Result<Vec<f64>> {
        let s = self.security_section()?;
        match (&s.n, &s.n_sweep) {
            (Some(n), None) => {
                if !(*n >= 1.0) {
                    return Err(Error::invalid(
                        "security.n",
                        format!("must be >= 1, got {n}"),
                    ));
                }
                Ok(vec![*n])
            }
            (None, Some(sw)) => {
                if sw.points < 2 {
                    return Err(Error::invalid("security.n_sweep.points", "must be >= 2"));
                }
                if !(sw.n_min >= 1.0 && sw.n_max > sw.n_min && sw.n_max.is_finite()) {
                    return Err(Error::invalid(
                        "security.n_sweep",
                        "need 1 <= n_min < n_max",
                    ));
                }
                Ok(geometric_sweep(sw.n_min, sw.n_max, sw.points))
            }
            (None, None) => Err(Error::invalid(
                "security.n_sweep",
                "missing; give `n` or `n_sweep`",
            )),
            (Some(_), Some(_)) => Err(Error::invalid(
                "security.n",
                "conflicts with security.n_sweep",
            )),
        }
    }

    pub fn n_rounds(&self) -> Result<u64> {
        let n = self
            .sim
            .as_ref()
            .and_then(|s| s.n_rounds)
            .ok_or_else(|| missing("sim.n_rounds"))?;
        if n == 0 {
            return Err(Error::invalid("sim.n_rounds", "must be >= 1"));
        }
        Ok(n)
    }

    pub fn seed(&self) -> u64 {
        self.sim.as_ref().and_then(|s| s.seed).unwrap_or(0)
    }

    pub fn saturation_mode(&self) -> SaturationMode {
        match self.sim.as_ref().and_then(|s| s.discard_saturated) {
            Some(true) => SaturationMode::Discard,
            _ => SaturationMode::Clip,
        }
    }

    /// `output.format`; each command picks its own default.
    pub fn output_format(&self) -> Option<OutputFormat> {
        self.output.as_ref().and_then(|o| o.format)
    }

    pub fn output_path(&self) -> Option<&str> {
        self.output.as_ref().and_then(|o| o.path.as_deref())
    }

    /// Inclusive `b` range for the bound sweep, default `1..=14`.
    pub fn b_range(&self) -> Result<(u32, u32)> {
        let sw = self.sweep.clone().unwrap_or_default();
        let lo = sw.b_min.unwrap_or(1);
        let hi = sw.b_max.unwrap_or(14);
        if lo == 0 || lo > hi || hi > 20 {
            return Err(Error::invalid(
                "sweep.b_min",
                format!("need 1 <= b_min <= b_max <= 20, got {lo}..={hi}"),
            ));
        }
        Ok((lo, hi))
    }
}

/// Applies `section.key=value` (or deeper paths) to a parsed document.
///
/// The value is read as a TOML literal; anything that does not parse is taken
/// as a string, so `output.format=json` works without quotes.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| {
        Error::invalid("--set", format!("expected key=value, got `{assignment}`"))
    })?;
    let path = path.trim();
    let raw = raw.trim();
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::invalid("--set", format!("bad key `{path}`")));
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };

    let (last, parents) = keys.split_last().expect("non-empty path");
    let mut cur = table;
    for key in parents {
        let entry = cur
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::invalid(path, format!("`{key}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG3: &str = r#"
[constellation]
N = 3.0
R_A = 10.392304845413264
b = 6

[channel]
eta = 0.1
u = 1e-4

[measurement]
M = 10.0
b_B = 6

[security]
eps_s = 1e-10
eps_h = 1e-10
eps_a = 1e-6
beta = 0.95
n_sweep = { n_min = 1e4, n_max = 1e12, points = 9 }
"#;

    fn field(err: Error) -> String {
        match err {
            Error::InvalidParam { field, .. } => field,
            other => panic!("expected a field error, got {other}"),
        }
    }

    #[test]
    fn parses_full_document() {
        let cfg = RunConfig::from_toml_str(FIG3).unwrap();
        let spec = cfg.constellation_spec().unwrap();
        assert_eq!(spec.bits, 6);
        assert!((cfg.channel_model().unwrap().excess_noise() - 1e-4).abs() < 1e-15);
        let m = cfg.measurement_spec().unwrap();
        assert_eq!(m.adc_range, 10.0);
        assert_eq!(cfg.cardinality().unwrap().log2(), 12.0);
        let ns = cfg.block_sizes().unwrap();
        assert_eq!(ns.len(), 9);
        assert_eq!(ns[0], 1e4);
        assert_eq!(ns[8], 1e12);
        cfg.security_params(1e6).unwrap();
    }

    #[test]
    fn missing_fields_are_named() {
        let cfg = RunConfig::from_toml_str("[constellation]\nR_A = 3.0\nb = 2\n").unwrap();
        assert_eq!(
            field(cfg.constellation_spec().unwrap_err()),
            "constellation.N"
        );
        let cfg = RunConfig::default();
        assert_eq!(
            field(cfg.constellation_spec().unwrap_err()),
            "constellation.N"
        );
        assert_eq!(field(cfg.n_rounds().unwrap_err()), "sim.n_rounds");
    }

    #[test]
    fn beta_is_never_defaulted() {
        let text = FIG3.replace("beta = 0.95\n", "");
        let cfg = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(
            field(cfg.security_params(1e6).unwrap_err()),
            "security.beta"
        );
    }

    #[test]
    fn channel_needs_exactly_one_noise_parameter() {
        let both = FIG3.replace("u = 1e-4", "u = 1e-4\nomega = 1.0");
        let cfg = RunConfig::from_toml_str(&both).unwrap();
        assert_eq!(field(cfg.channel_model().unwrap_err()), "channel.omega");
        let neither = FIG3.replace("u = 1e-4", "");
        let cfg = RunConfig::from_toml_str(&neither).unwrap();
        assert_eq!(field(cfg.channel_model().unwrap_err()), "channel.u");
    }

    #[test]
    fn validation_errors_carry_section() {
        let bad = FIG3.replace("b = 6\n", "b = 0\n");
        let cfg = RunConfig::from_toml_str(&bad).unwrap();
        assert_eq!(
            field(cfg.constellation_spec().unwrap_err()),
            "constellation.b"
        );
        let bad = FIG3.replace("points = 9", "points = 1");
        let cfg = RunConfig::from_toml_str(&bad).unwrap();
        assert_eq!(
            field(cfg.block_sizes().unwrap_err()),
            "security.n_sweep.points"
        );
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(RunConfig::from_toml_str("[constellation]\nn = 3.0\n").is_err());
    }

    #[test]
    fn overrides_win() {
        let mut table: toml::Table = toml::from_str(FIG3).unwrap();
        apply_override(&mut table, "constellation.b=3").unwrap();
        apply_override(&mut table, "output.format=json").unwrap();
        apply_override(&mut table, "sim.seed = 42").unwrap();
        let cfg = RunConfig::from_table(table).unwrap();
        assert_eq!(cfg.constellation_spec().unwrap().bits, 3);
        assert_eq!(cfg.output_format(), Some(OutputFormat::Json));
        assert_eq!(cfg.seed(), 42);
        let mut table = toml::Table::new();
        assert!(apply_override(&mut table, "novalue").is_err());
        assert!(apply_override(&mut table, "a..b=1").is_err());
    }
}
