//! Scalar security formulas: entropies, finite-size corrections and key rates.
//!
//! All logarithms are base 2. The channel is a thermal-loss channel realized by an
//! entangling cloner with transmissivity `eta` and environment photon number
//! `omega`, giving excess noise `u = (1 - eta) omega`.

use serde::Serialize;

use crate::numerics::xlog2x;
use crate::{Error, Result};

/// Transmissivities above this are flagged: the Holevo expression used here does
/// not vanish as the channel becomes lossless.
pub const HIGH_TRANSMISSIVITY_WARNING: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChannelModel {
    eta: f64,
    omega: f64,
}

impl ChannelModel {
    pub fn new(eta: f64, omega: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::invalid(
                "eta",
                format!("must lie in [0, 1], got {eta}"),
            ));
        }
        if !(omega >= 0.0 && omega.is_finite()) {
            return Err(Error::invalid(
                "omega",
                format!("must be non-negative, got {omega}"),
            ));
        }
        Ok(Self { eta, omega })
    }

    /// Builds the channel from its excess noise `u = (1 - eta) omega`.
    pub fn from_excess_noise(eta: f64, u: f64) -> Result<Self> {
        if !(u >= 0.0 && u.is_finite()) {
            return Err(Error::invalid(
                "u",
                format!("must be non-negative, got {u}"),
            ));
        }
        if eta == 1.0 {
            if u == 0.0 {
                return Self::new(1.0, 0.0);
            }
            return Err(Error::invalid(
                "u",
                "a lossless channel cannot carry excess noise",
            ));
        }
        Self::new(eta, u / (1.0 - eta))
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn excess_noise(&self) -> f64 {
        (1.0 - self.eta) * self.omega
    }
}

/// Cardinality `|Y|` of Bob's discretized variable, always a power of two.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Cardinality {
    log2: u32,
}

impl Cardinality {
    pub fn from_log2(log2: u32) -> Result<Self> {
        if log2 == 0 || log2 > 63 {
            return Err(Error::invalid(
                "cardinality",
                format!("log2 must lie in 1..=63, got {log2}"),
            ));
        }
        Ok(Self { log2 })
    }

    /// `2^(2 b)` for an ADC with `b` bits on each of the two quadratures.
    pub fn from_bits_per_quadrature(bits: u32) -> Result<Self> {
        Self::from_log2(2 * bits)
    }

    pub fn new(value: u64) -> Result<Self> {
        if value < 2 || !value.is_power_of_two() {
            return Err(Error::invalid(
                "cardinality",
                format!("must be a power of two >= 2, got {value}"),
            ));
        }
        Ok(Self {
            log2: value.trailing_zeros(),
        })
    }

    pub fn log2(&self) -> f64 {
        self.log2 as f64
    }
}

/// How the reconciled information is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Reconciliation {
    /// `H(Y) - leak_EC = beta I(X;Y)` with efficiency `beta` in (0, 1].
    Efficiency(f64),
    /// Empirical `H(Y)` and bits leaked during error correction, per channel use.
    Explicit { h_ybar: f64, leak_ec: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SecurityParams {
    pub eps_s: f64,
    pub eps_h: f64,
    pub eps_a: f64,
    pub eps_p: f64,
    /// Block size `n`.
    pub block_size: f64,
    pub cardinality: Cardinality,
    pub reconciliation: Reconciliation,
    /// Keep the `-(2/n) log(1/eps_h) + 1/n` leftover-hash terms that the usual
    /// rate formula drops.
    pub exact_lhl: bool,
}

impl SecurityParams {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must lie in (0, 1), got {v}")))
            }
        };
        let half_open = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must lie in [0, 1), got {v}")))
            }
        };
        open_unit("eps_s", self.eps_s)?;
        open_unit("eps_h", self.eps_h)?;
        half_open("eps_a", self.eps_a)?;
        half_open("eps_p", self.eps_p)?;
        if !(self.block_size >= 1.0) {
            return Err(Error::invalid(
                "n",
                format!("must be >= 1, got {}", self.block_size),
            ));
        }
        match self.reconciliation {
            Reconciliation::Efficiency(beta) if !(beta > 0.0 && beta <= 1.0) => Err(
                Error::invalid("beta", format!("must lie in (0, 1], got {beta}")),
            ),
            Reconciliation::Explicit { h_ybar, leak_ec }
                if !(h_ybar >= 0.0 && leak_ec >= 0.0 && h_ybar <= self.cardinality.log2()) =>
            {
                Err(Error::invalid(
                    "h_ybar",
                    format!("need 0 <= H(Y) <= log|Y| and leak_ec >= 0, got {h_ybar}, {leak_ec}"),
                ))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RateComponents {
    /// Gaussian `I(X;Y)` for the channel.
    pub mutual_ab: f64,
    /// Reconciled information, `beta I(X;Y)` or `H(Y) - leak_EC`.
    pub reconciled: f64,
    /// Gaussian `I(Y;E)`.
    pub holevo_ye: f64,
    /// Continuity correction `f(eps_a, |Y|)`.
    pub f_term: f64,
    /// `Delta(eps_s, |Y|)`; the rate subtracts `aep_term / sqrt(n)`.
    pub aep_term: f64,
    /// Leftover-hash higher-order terms, zero unless `exact_lhl`.
    pub lhl_term: f64,
    /// `eps_h + eps_s + eps_a`.
    pub total_epsilon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KeyRateReport {
    pub r_inf: f64,
    pub r_n: f64,
    pub block_size: f64,
    pub components: RateComponents,
    pub notes: Vec<String>,
}

/// `g[x] = (x+1) log2(x+1) - x log2 x`, the entropy of a thermal state with mean `x`.
pub fn g_entropy(x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("g[x] needs x >= 0, got {x}")));
    }
    if x < 1e-8 {
        // (x+1) log2(1+x) via log1p keeps full precision near zero
        return Ok((x + 1.0) * x.ln_1p() / std::f64::consts::LN_2 - xlog2x(x));
    }
    Ok((x + 1.0) * (x + 1.0).log2() - x * x.log2())
}

/// AEP correction `Delta = 4 (log2|Y| / 2 + 1) sqrt(log2(2 / eps_s^2))`.
pub fn delta_aep(eps_s: f64, cardinality: Cardinality) -> f64 {
    let log_term = 1.0 - 2.0 * eps_s.log2();
    4.0 * (0.5 * cardinality.log2() + 1.0) * log_term.sqrt()
}

/// Continuity bound `f = eps log2|Y| + 2(1+eps) log2(1+eps) - 2 eps log2 eps`.
pub fn f_continuity(eps: f64, cardinality: Cardinality) -> Result<f64> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::Domain(format!("f needs eps in [0, 1), got {eps}")));
    }
    Ok(
        eps * cardinality.log2() + 2.0 * (1.0 + eps) * eps.ln_1p() / std::f64::consts::LN_2
            - 2.0 * xlog2x(eps),
    )
}

fn check_photons(n: f64) -> Result<()> {
    if n >= 0.0 && n.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "mean photon number must be non-negative, got {n}"
        )))
    }
}

/// `I(X;Y) = log2(1 + eta N / ((1 - eta) omega + 1))`.
pub fn mutual_info_ab(ch: &ChannelModel, mean_photons: f64) -> Result<f64> {
    check_photons(mean_photons)?;
    Ok((ch.eta * mean_photons / (ch.excess_noise() + 1.0)).ln_1p() / std::f64::consts::LN_2)
}

/// `I(Y;E) = g[N] - g[(1 - eta) Ntilde]` with
/// `Ntilde = N (1 + omega) / (1 + eta N + (1 - eta) omega)`.
pub fn holevo_ye(ch: &ChannelModel, mean_photons: f64) -> Result<f64> {
    check_photons(mean_photons)?;
    // ratio first, so that eta = 0 gives Ntilde = N exactly
    let n_tilde =
        mean_photons * ((1.0 + ch.omega) / (1.0 + ch.eta * mean_photons + ch.excess_noise()));
    Ok(g_entropy(mean_photons)? - g_entropy((1.0 - ch.eta) * n_tilde)?)
}

/// `r_inf = beta I(X;Y) - I(Y;E)`.
pub fn rate_asymptotic(ch: &ChannelModel, mean_photons: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::invalid(
            "beta",
            format!("must lie in (0, 1], got {beta}"),
        ));
    }
    Ok(beta * mutual_info_ab(ch, mean_photons)? - holevo_ye(ch, mean_photons)?)
}

/// Finite-size rate `r_n = r_inf - f(eps_a, |Y|) - Delta(eps_s, |Y|) / sqrt(n)`.
///
/// Negative rates are reported as they are.
pub fn rate_finite(
    ch: &ChannelModel,
    mean_photons: f64,
    params: &SecurityParams,
) -> Result<KeyRateReport> {
    params.validate()?;
    let mutual_ab = mutual_info_ab(ch, mean_photons)?;
    let holevo = holevo_ye(ch, mean_photons)?;
    let reconciled = match params.reconciliation {
        Reconciliation::Efficiency(beta) => beta * mutual_ab,
        Reconciliation::Explicit { h_ybar, leak_ec } => h_ybar - leak_ec,
    };
    let r_inf = reconciled - holevo;
    let f_term = f_continuity(params.eps_a, params.cardinality)?;
    let aep_term = delta_aep(params.eps_s, params.cardinality);
    let n = params.block_size;
    let lhl_term = if params.exact_lhl {
        (2.0 * (1.0 / params.eps_h).log2() - 1.0) / n
    } else {
        0.0
    };
    let r_n = r_inf - f_term - aep_term / n.sqrt() - lhl_term;

    let mut notes = vec![
        "error-correction success-probability corrections to Delta are not included".to_string(),
    ];
    if r_inf <= 0.0 {
        notes.push(format!(
            "asymptotic rate {r_inf:.5} is not positive: no block size yields key"
        ));
    }
    if ch.eta > HIGH_TRANSMISSIVITY_WARNING {
        log::warn!(
            "eta = {} > {HIGH_TRANSMISSIVITY_WARNING}: Holevo expression is unreliable",
            ch.eta
        );
        notes.push(format!(
            "eta > {HIGH_TRANSMISSIVITY_WARNING}: the Holevo expression does not vanish for a lossless channel"
        ));
    }
    Ok(KeyRateReport {
        r_inf,
        r_n,
        block_size: n,
        components: RateComponents {
            mutual_ab,
            reconciled,
            holevo_ye: holevo,
            f_term,
            aep_term,
            lhl_term,
            total_epsilon: params.eps_h + params.eps_s + params.eps_a,
        },
        notes,
    })
}

/// Leftover-hash key length `floor(H_min - 2 log2(1/eps_h) + 1)`, clamped at zero.
pub fn key_length(hmin_smooth: f64, eps_h: f64) -> Result<u64> {
    if !(eps_h > 0.0 && eps_h < 1.0) {
        return Err(Error::invalid(
            "eps_h",
            format!("must lie in (0, 1), got {eps_h}"),
        ));
    }
    let len = (hmin_smooth - 2.0 * (1.0 / eps_h).log2() + 1.0).floor();
    Ok(if len > 0.0 { len as u64 } else { 0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig3_channel() -> ChannelModel {
        ChannelModel::from_excess_noise(0.1, 1e-4).unwrap()
    }

    fn fig3_params(n: f64) -> SecurityParams {
        SecurityParams {
            eps_s: 1e-10,
            eps_h: 1e-10,
            eps_a: 1e-6,
            eps_p: 0.0,
            block_size: n,
            cardinality: Cardinality::from_log2(12).unwrap(),
            reconciliation: Reconciliation::Efficiency(0.95),
            exact_lhl: false,
        }
    }

    #[test]
    fn g_values() {
        assert_eq!(g_entropy(0.0).unwrap(), 0.0);
        assert!((g_entropy(1.0).unwrap() - 2.0).abs() < 1e-15);
        let want = 8.0 - 3.0 * 3f64.log2();
        assert!((g_entropy(3.0).unwrap() - want).abs() < 1e-14);
        assert!((want - 3.245).abs() < 1e-3);
        assert!(g_entropy(-1e-3).is_err());
        // small-x branch joins the direct formula smoothly
        let x = 1e-8;
        let direct = (x + 1.0) * (x + 1.0f64).log2() - x * x.log2();
        assert!((g_entropy(x * 0.999_999).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn delta_values() {
        let card = Cardinality::from_log2(12).unwrap();
        // 28 sqrt(1 + 20 log2 10)
        let want = 28.0 * (1.0 + 20.0 * 10f64.log2()).sqrt();
        assert!((delta_aep(1e-10, card) - want).abs() < 1e-12);
        assert!((want - 229.9).abs() < 0.05);

        let big = Cardinality::from_log2(24).unwrap();
        let ratio = delta_aep(1e-10, card) / delta_aep(1e-10, big);
        assert!((ratio - 7.0 / 13.0).abs() < 1e-14);

        assert!(delta_aep(0.999_999, card) >= 4.0 * 7.0);
    }

    #[test]
    fn f_values() {
        let card = Cardinality::from_log2(12).unwrap();
        assert_eq!(f_continuity(0.0, card).unwrap(), 0.0);
        let eps: f64 = 1e-6;
        let want = 12.0 * eps + 2.0 * (1.0 + eps) * (1.0 + eps).log2() - 2.0 * eps * eps.log2();
        let got = f_continuity(eps, card).unwrap();
        // the naive log2(1 + eps) above loses about ten digits
        assert!((got - want).abs() < 1e-9 * want);
        assert!((got - 5.47e-5).abs() < 0.01e-5);

        let card13 = Cardinality::from_log2(13).unwrap();
        let step = f_continuity(0.01, card13).unwrap() - f_continuity(0.01, card).unwrap();
        assert!((step - 0.01).abs() < 1e-15);
        assert!(f_continuity(1.0, card).is_err());
    }

    #[test]
    fn mutual_info_values() {
        let ch0 = ChannelModel::new(0.0, 0.5).unwrap();
        assert_eq!(mutual_info_ab(&ch0, 3.0).unwrap(), 0.0);
        let ch1 = ChannelModel::new(1.0, 7.0).unwrap();
        assert!((mutual_info_ab(&ch1, 3.0).unwrap() - 2.0).abs() < 1e-15);
        let want = (1.0 + 0.3 / 1.0001f64).log2();
        assert!((mutual_info_ab(&fig3_channel(), 3.0).unwrap() - want).abs() < 1e-14);
        assert!((want - 0.3785).abs() < 1e-4);
    }

    #[test]
    fn holevo_values() {
        let ch0 = ChannelModel::new(0.0, 0.2).unwrap();
        assert!(holevo_ye(&ch0, 3.0).unwrap().abs() < 1e-14);
        assert_eq!(holevo_ye(&fig3_channel(), 0.0).unwrap(), 0.0);

        let ch = fig3_channel();
        let omega = 1e-4 / 0.9;
        let n_tilde = 3.0 * (1.0 + omega) / (1.3 + 1e-4);
        let g = |x: f64| (x + 1.0) * (x + 1.0).log2() - x * x.log2();
        let want = g(3.0) - g(0.9 * n_tilde);
        assert!((holevo_ye(&ch, 3.0).unwrap() - want).abs() < 1e-13);
    }

    #[test]
    fn asymptotic_limits() {
        let ch0 = ChannelModel::new(0.0, 0.3).unwrap();
        assert_eq!(rate_asymptotic(&ch0, 3.0, 0.9).unwrap(), 0.0);
        assert_eq!(rate_asymptotic(&fig3_channel(), 0.0, 0.9).unwrap(), 0.0);
        assert!(rate_asymptotic(&fig3_channel(), 3.0, 0.0).is_err());

        // direct evaluation at the channel of the key-rate figure
        let r = rate_asymptotic(&fig3_channel(), 3.0, 0.95).unwrap();
        let want = 0.95 * mutual_info_ab(&fig3_channel(), 3.0).unwrap()
            - holevo_ye(&fig3_channel(), 3.0).unwrap();
        assert_eq!(r, want);
    }

    #[test]
    fn asymptotic_rate_is_continuous_in_eta() {
        let mut prev = rate_asymptotic(
            &ChannelModel::from_excess_noise(0.0, 1e-4).unwrap(),
            3.0,
            0.95,
        )
        .unwrap();
        for i in 1..1000 {
            let eta = i as f64 * 1e-3;
            let r = rate_asymptotic(
                &ChannelModel::from_excess_noise(eta, 1e-4).unwrap(),
                3.0,
                0.95,
            )
            .unwrap();
            assert!((r - prev).abs() < 1e-2, "jump at eta={eta}");
            prev = r;
        }
    }

    #[test]
    fn finite_rate_bookkeeping() {
        let ch = fig3_channel();
        for n in [1e4, 1e8, 1e12] {
            let rep = rate_finite(&ch, 3.0, &fig3_params(n)).unwrap();
            let c = rep.components;
            assert_eq!(
                rep.r_n,
                rep.r_inf - c.f_term - c.aep_term / n.sqrt() - c.lhl_term
            );
            assert_eq!(c.total_epsilon, 1e-10 + 1e-10 + 1e-6);
            assert!(rep.r_n <= rep.r_inf);
            assert!(c.f_term < c.aep_term / n.sqrt());
        }
        assert!(rate_finite(&ch, 3.0, &fig3_params(1e4)).unwrap().r_n < 0.0);
    }

    #[test]
    fn exact_lhl_terms() {
        let ch = fig3_channel();
        let mut p = fig3_params(1e6);
        let loose = rate_finite(&ch, 3.0, &p).unwrap();
        p.exact_lhl = true;
        let tight = rate_finite(&ch, 3.0, &p).unwrap();
        let want = (2.0 * 1e10f64.log2() - 1.0) / 1e6;
        assert!((loose.r_n - tight.r_n - want).abs() < 1e-15);
    }

    #[test]
    fn explicit_entropy_form() {
        let ch = fig3_channel();
        let mut p = fig3_params(1e10);
        p.reconciliation = Reconciliation::Explicit {
            h_ybar: 9.5,
            leak_ec: 9.2,
        };
        let rep = rate_finite(&ch, 3.0, &p).unwrap();
        assert!((rep.components.reconciled - 0.3).abs() < 1e-15);
        assert_eq!(
            rep.r_inf,
            rep.components.reconciled - rep.components.holevo_ye
        );

        p.reconciliation = Reconciliation::Explicit {
            h_ybar: 13.0,
            leak_ec: 0.0,
        };
        assert!(rate_finite(&ch, 3.0, &p).is_err());
    }

    #[test]
    fn high_transmissivity_is_flagged() {
        let ch = ChannelModel::new(0.995, 0.0).unwrap();
        let rep = rate_finite(&ch, 3.0, &fig3_params(1e10)).unwrap();
        assert!(rep.notes.iter().any(|n| n.contains("lossless")));
    }

    #[test]
    fn key_length_values() {
        assert_eq!(key_length(100.0, 0.25).unwrap(), 97);
        assert_eq!(key_length(0.0, 0.25).unwrap(), 0);
        // 1e6 - 2 * 33.219... + 1
        assert_eq!(key_length(1e6, 1e-10).unwrap(), 999_934);
        assert!(key_length(10.0, 0.0).is_err());
    }

    #[test]
    fn channel_validation() {
        assert!(ChannelModel::new(1.5, 0.0).is_err());
        assert!(ChannelModel::new(0.5, -1.0).is_err());
        assert!(ChannelModel::from_excess_noise(1.0, 0.1).is_err());
        let ch = ChannelModel::from_excess_noise(0.1, 1e-4).unwrap();
        assert!((ch.excess_noise() - 1e-4).abs() < 1e-18);
        assert!(Cardinality::new(12).is_err());
        assert_eq!(Cardinality::new(4096).unwrap().log2(), 12.0);
    }
}
