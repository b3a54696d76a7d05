//! Alice's discrete modulation and the preparation errors it induces.
//!
//! The quadrature range `[-R_A, R_A]` is split into `d = 2^b` intervals of width
//! `delta_A = 2 R_A / d`. Each pair of intervals `(j, k)` is represented by the
//! coherent state at the cell centre, `alpha_jk = (q_j + i p_k) / sqrt(2)`, drawn with
//! probability proportional to `exp(-|alpha_jk|^2 / N)`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::io::{self, Write};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::fock::{
    coherent_vector_in, thermal_state_in, trace_distance, DensityOperator, TruncationPolicy,
};
use crate::numerics::{map_indexed, std_normal_mass, std_normal_pdf, unit_legendre};
use crate::{Error, Result};

/// Largest grid that [`build_grid`] will materialize (`b <= 12`).
pub const MAX_GRID_POINTS: usize = 1 << 24;

/// Default Gauss-Legendre order per axis for [`epsilon_p_numeric`].
pub const DEFAULT_QUADRATURE_ORDER: usize = 8;

pub const GRID_CSV_HEADER: &str = "# cvqkd-grid v1";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstellationSpec {
    /// Mean photon number `N` of the ideal Gaussian ensemble.
    pub mean_photons: f64,
    /// Quadrature range `R_A`, shot-noise units.
    pub range: f64,
    /// Bits per quadrature `b`.
    pub bits: u32,
}

impl ConstellationSpec {
    pub fn new(mean_photons: f64, range: f64, bits: u32) -> Result<Self> {
        if !(mean_photons > 0.0 && mean_photons.is_finite()) {
            return Err(Error::invalid(
                "N",
                format!("must be positive, got {mean_photons}"),
            ));
        }
        if !(range > 0.0 && range.is_finite()) {
            return Err(Error::invalid(
                "R_A",
                format!("must be positive, got {range}"),
            ));
        }
        if !(1..=20).contains(&bits) {
            return Err(Error::invalid(
                "b",
                format!("must lie in 1..=20, got {bits}"),
            ));
        }
        Ok(Self {
            mean_photons,
            range,
            bits,
        })
    }

    /// Range expressed in standard deviations: `R_A = sigmas * sqrt(N)`.
    pub fn with_sigmas(mean_photons: f64, sigmas: f64, bits: u32) -> Result<Self> {
        Self::new(mean_photons, sigmas * mean_photons.sqrt(), bits)
    }

    pub fn points_per_axis(&self) -> usize {
        1usize << self.bits
    }

    /// Bin width `delta_A = 2 R_A / 2^b`.
    pub fn bin_width(&self) -> f64 {
        2.0 * self.range / self.points_per_axis() as f64
    }

    /// Interval midpoints `-R_A + (j + 1/2) delta_A`.
    ///
    /// Written as `(j + 1/2 - d/2) delta_A` so that the axis is exactly antisymmetric
    /// in floating point.
    pub fn axis(&self) -> Vec<f64> {
        let d = self.points_per_axis();
        let delta = self.bin_width();
        let half = d as f64 / 2.0;
        (0..d).map(|j| (j as f64 + 0.5 - half) * delta).collect()
    }

    /// Normalized one-dimensional marginal over the axis midpoints.
    ///
    /// The grid distribution factorizes, `p_jk = w_j w_k`, because
    /// `exp(-|alpha|^2/N) = exp(-q^2/2N) exp(-p^2/2N)`.
    pub fn axis_weights(&self) -> Vec<f64> {
        let two_n = 2.0 * self.mean_photons;
        let raw: Vec<f64> = self.axis().iter().map(|q| (-q * q / two_n).exp()).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPoint {
    pub j: u32,
    pub k: u32,
    pub q: f64,
    pub p: f64,
    pub alpha: Complex64,
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstellationGrid {
    spec: ConstellationSpec,
    points: Vec<GridPoint>,
}

impl ConstellationGrid {
    pub fn spec(&self) -> &ConstellationSpec {
        &self.spec
    }

    /// Points in row-major order, index `j * d + k`.
    pub fn points(&self) -> &[GridPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn max_intensity(&self) -> f64 {
        self.points
            .iter()
            .map(|pt| pt.alpha.norm_sqr())
            .fold(0.0, f64::max)
    }

    /// `sum_jk p_jk q_j^2`, the grid's variance of `q_A`.
    pub fn second_moment_q(&self) -> f64 {
        self.points.iter().map(|pt| pt.prob * pt.q * pt.q).sum()
    }

    /// CSV with columns `j,k,q_Aj,p_Ak,re_alpha,im_alpha,p_jk`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{GRID_CSV_HEADER}")?;
        writeln!(out, "j,k,q_Aj,p_Ak,re_alpha,im_alpha,p_jk")?;
        for pt in &self.points {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                pt.j, pt.k, pt.q, pt.p, pt.alpha.re, pt.alpha.im, pt.prob
            )?;
        }
        Ok(())
    }
}

pub fn build_grid(spec: &ConstellationSpec) -> Result<ConstellationGrid> {
    let d = spec.points_per_axis();
    if d.saturating_mul(d) > MAX_GRID_POINTS {
        return Err(Error::Resource(format!(
            "a {d}x{d} grid exceeds the {MAX_GRID_POINTS}-point limit"
        )));
    }
    let axis = spec.axis();
    let weights = spec.axis_weights();
    let mut points = Vec::with_capacity(d * d);
    for (j, (&q, &wq)) in axis.iter().zip(&weights).enumerate() {
        for (k, (&p, &wp)) in axis.iter().zip(&weights).enumerate() {
            points.push(GridPoint {
                j: j as u32,
                k: k as u32,
                q,
                p,
                alpha: Complex64::new(q, p) * FRAC_1_SQRT_2,
                prob: wq * wp,
            });
        }
    }
    Ok(ConstellationGrid {
        spec: *spec,
        points,
    })
}

/// Number of partial sums used when accumulating the average state.
const MIXTURE_CHUNKS: usize = 64;

/// `sigma_A = sum_jk p_jk |alpha_jk><alpha_jk|` on a space of dimension `dim`.
///
/// Partial sums over fixed chunks are merged in index order, so the result does
/// not depend on the number of worker threads.
pub fn average_state_in(grid: &ConstellationGrid, dim: usize) -> DensityOperator {
    let pts = grid.points();
    let chunk = pts.len().div_ceil(MIXTURE_CHUNKS).max(1);
    let n_chunks = pts.len().div_ceil(chunk);
    let partials = map_indexed(n_chunks, |c| {
        let slice = &pts[c * chunk..((c + 1) * chunk).min(pts.len())];
        let mut v = DMatrix::<Complex64>::zeros(dim, slice.len());
        for (col, pt) in slice.iter().enumerate() {
            let amps = coherent_vector_in(pt.alpha, dim);
            let scale = pt.prob.sqrt();
            for (row, a) in amps.amplitudes().iter().enumerate() {
                v[(row, col)] = a * scale;
            }
        }
        &v * v.adjoint()
    });
    let mut acc = DMatrix::<Complex64>::zeros(dim, dim);
    for part in &partials {
        acc += part;
    }
    DensityOperator::from_matrix_unchecked(acc)
}

/// Truncation dimension for comparing `grid` with the thermal state.
pub fn resolve_dimension(grid: &ConstellationGrid, policy: &TruncationPolicy) -> Result<usize> {
    Ok(policy.resolve(grid.max_intensity(), grid.spec().mean_photons)? + 1)
}

/// Average preparation error `eps_a = D(sigma_A, sigma_A^0)`, with `sigma_A^0` the
/// thermal state with `N` photons.
pub fn epsilon_a(grid: &ConstellationGrid, policy: &TruncationPolicy) -> Result<f64> {
    let dim = resolve_dimension(grid, policy)?;
    let sigma = average_state_in(grid, dim);
    let thermal = thermal_state_in(grid.spec().mean_photons, dim);
    trace_distance(&sigma, &thermal)
}

/// Symbol-by-symbol preparation error, integrated numerically:
///
/// `sum_jk int_{cell jk} P0(alpha) sqrt(1 - exp(-|alpha - alpha_jk|^2)) d^2 alpha`.
///
/// Every cell has the same shape, so the sum over cells is folded into a single
/// integral over the offset `x` from the cell centre, weighted by
/// `s(x_q) s(x_p)` with `s(t) = sum_j phi_N(q_j + t)`. The integrand has a cone
/// at `x = 0`; each quadrant is split into two triangles and mapped to the unit
/// square with a Duffy transform, which makes it smooth, then integrated with
/// Gauss-Legendre of the given order per axis.
pub fn epsilon_p_numeric(spec: &ConstellationSpec, order: usize) -> Result<f64> {
    if order < 2 {
        return Err(Error::invalid(
            "quadrature_order",
            format!("must be >= 2, got {order}"),
        ));
    }
    let axis = spec.axis();
    let sd = spec.mean_photons.sqrt();
    let h = 0.5 * spec.bin_width();
    let rule = unit_legendre(order);

    let s = |t: f64| -> f64 {
        axis.iter()
            .map(|&q| std_normal_pdf((q + t) / sd))
            .sum::<f64>()
            / sd
    };
    // s at +-h u_i and +-h u_i v_l, cached
    let n = rule.len();
    let su: Vec<[f64; 2]> = rule.iter().map(|&(u, _)| [s(h * u), s(-h * u)]).collect();
    let suv: Vec<[f64; 2]> = (0..n * n)
        .map(|idx| {
            let (u, v) = (rule[idx / n].0, rule[idx % n].0);
            [s(h * u * v), s(-h * u * v)]
        })
        .collect();

    let mut total = 0.0;
    for (i, &(u, wu)) in rule.iter().enumerate() {
        for (l, &(v, wv)) in rule.iter().enumerate() {
            let r2 = (h * u).powi(2) * (1.0 + v * v);
            let kernel = (-(-0.5 * r2).exp_m1()).sqrt();
            let jac = h * h * u;
            let long = su[i];
            let short = suv[i * n + l];
            // both triangles of each quadrant: the long leg runs along q or along p
            let weight_sum = 2.0 * (long[0] + long[1]) * (short[0] + short[1]);
            total += wu * wv * jac * kernel * weight_sum;
        }
    }
    Ok(total)
}

/// Pieces of the symbol-by-symbol error that live outside the modulation square.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpsilonPBreakdown {
    /// [`epsilon_p_numeric`], the contribution of `|q_A|, |p_A| <= R_A`.
    pub in_range: f64,
    /// Half the Gaussian mass outside `[-R_A, R_A]^2`, where the practical
    /// distribution vanishes.
    pub out_of_range_mass: f64,
    /// [`epsilon_tail`], the first-moment tail used by the cross-term bound.
    pub tail_moment: f64,
}

pub fn epsilon_p_breakdown(spec: &ConstellationSpec, order: usize) -> Result<EpsilonPBreakdown> {
    let z = spec.range / spec.mean_photons.sqrt();
    let inside = std_normal_mass(-z, z);
    Ok(EpsilonPBreakdown {
        in_range: epsilon_p_numeric(spec, order)?,
        out_of_range_mass: 0.5 * (1.0 - inside * inside),
        tail_moment: epsilon_tail(spec.range, spec.mean_photons),
    })
}

/// First-order estimate `eps_p ~ delta_A / 2`.
pub fn epsilon_p_closed(spec: &ConstellationSpec) -> f64 {
    0.5 * spec.bin_width()
}

/// `eps_{R_A,N} = sqrt(N / 2 pi) exp(-R_A^2 / 2N)`.
pub fn epsilon_tail(range: f64, mean_photons: f64) -> f64 {
    (mean_photons / (2.0 * PI)).sqrt() * (-range * range / (2.0 * mean_photons)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::trace_distance;

    fn paper_spec(bits: u32) -> ConstellationSpec {
        ConstellationSpec::with_sigmas(3.0, 6.0, bits).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(ConstellationSpec::new(0.0, 1.0, 2).is_err());
        assert!(ConstellationSpec::new(1.0, -1.0, 2).is_err());
        assert!(ConstellationSpec::new(1.0, 1.0, 0).is_err());
        assert!(ConstellationSpec::new(1.0, 1.0, 21).is_err());
        let err = ConstellationSpec::new(f64::NAN, 1.0, 2).unwrap_err();
        assert!(err.to_string().contains("`N`"));
    }

    #[test]
    fn one_bit_grid_is_uniform() {
        let n = 2.0;
        let spec = ConstellationSpec::new(n, 2.0 * n.sqrt(), 1).unwrap();
        let grid = build_grid(&spec).unwrap();
        assert_eq!(grid.len(), 4);
        let half = spec.range / 2.0;
        for pt in grid.points() {
            assert_eq!(pt.prob, 0.25);
            assert!((pt.q.abs() - half).abs() < 1e-15);
            assert!((pt.alpha.re.abs() - half / 2f64.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn paper_grid_layout() {
        let spec = paper_spec(6);
        let grid = build_grid(&spec).unwrap();
        assert_eq!(grid.len(), 4096);
        let total: f64 = grid.points().iter().map(|p| p.prob).sum();
        assert!((total - 1.0).abs() < 1e-12);
        // centre of cell (0, 0) is -R_A + delta_A / 2
        let first = grid.points()[0];
        assert!((first.q - (-spec.range + spec.bin_width() / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn grid_symmetries_are_exact() {
        let spec = paper_spec(4);
        let grid = build_grid(&spec).unwrap();
        let d = spec.points_per_axis();
        let at = |j: usize, k: usize| grid.points()[j * d + k].prob;
        for j in 0..d {
            for k in 0..d {
                assert_eq!(at(j, k), at(d - 1 - j, k));
                assert_eq!(at(j, k), at(j, d - 1 - k));
                assert_eq!(at(j, k), at(k, j));
                assert_eq!(
                    grid.points()[j * d + k].q,
                    -grid.points()[(d - 1 - j) * d + k].q
                );
            }
        }
    }

    #[test]
    fn oversized_grid_is_refused() {
        assert!(matches!(
            build_grid(&paper_spec(13)),
            Err(Error::Resource(_))
        ));
    }

    #[test]
    fn epsilon_a_of_identical_mixture_is_zero() {
        let grid = build_grid(&paper_spec(3)).unwrap();
        let dim = resolve_dimension(&grid, &TruncationPolicy::default()).unwrap();
        let s = average_state_in(&grid, dim);
        assert!(trace_distance(&s, &s).unwrap() < 1e-12);
        assert!((s.trace() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn undersampled_grid_has_large_epsilon_a() {
        let spec = ConstellationSpec::new(3.0, 0.1, 1).unwrap();
        let grid = build_grid(&spec).unwrap();
        let eps = epsilon_a(&grid, &TruncationPolicy::default()).unwrap();
        assert!(eps > 0.1, "{eps}");
    }

    #[test]
    fn closed_forms() {
        let spec = paper_spec(6);
        assert!((spec.bin_width() - 12.0 * 3f64.sqrt() / 64.0).abs() < 1e-15);
        assert!((epsilon_p_closed(&spec) - 0.162_379_763_209_582_2).abs() < 1e-12);
        assert!((epsilon_p_closed(&paper_spec(11)) - 0.005_074_367_6).abs() < 1e-9);
        assert_eq!(
            epsilon_p_closed(&ConstellationSpec::new(2.0, 1.0, 1).unwrap()),
            0.5
        );

        // sqrt(3 / 2pi) e^{-18}
        let want = (3.0 / (2.0 * PI)).sqrt() * (-18f64).exp();
        assert!((epsilon_tail(6.0 * 3f64.sqrt(), 3.0) - want).abs() < 1e-22);
        assert!((want - 1.0524e-8).abs() < 1e-11);
        assert_eq!(epsilon_tail(1e3, 3.0), 0.0);
        assert_eq!(epsilon_tail(0.0, 3.0), (3.0 / (2.0 * PI)).sqrt());
    }

    /// Midpoint Riemann sum of the per-cell integrand over the whole grid, one cell at
    /// a time, with no folding or change of variables.
    fn riemann_epsilon_p(spec: &ConstellationSpec, sub: usize) -> f64 {
        let axis = spec.axis();
        let delta = spec.bin_width();
        let n = spec.mean_photons;
        let step = delta / sub as f64;
        let offsets: Vec<f64> = (0..sub)
            .map(|i| -delta / 2.0 + (i as f64 + 0.5) * step)
            .collect();
        let mut total = 0.0;
        for &qj in &axis {
            for &pk in &axis {
                for &x in &offsets {
                    for &y in &offsets {
                        let (q, p) = (qj + x, pk + y);
                        let density = (-(q * q + p * p) / (2.0 * n)).exp() / (2.0 * PI * n);
                        let dist2 = 0.5 * (x * x + y * y);
                        total += density * (1.0 - (-dist2).exp()).sqrt() * step * step;
                    }
                }
            }
        }
        total
    }

    #[test]
    fn epsilon_p_numeric_matches_riemann_oracle() {
        for bits in [2, 4, 6] {
            let spec = paper_spec(bits);
            let quad = epsilon_p_numeric(&spec, DEFAULT_QUADRATURE_ORDER).unwrap();
            let oracle = riemann_epsilon_p(&spec, 64);
            assert!(
                (quad - oracle).abs() < 2e-4 * oracle,
                "b={bits}: {quad} vs {oracle}"
            );
        }
    }

    #[test]
    fn epsilon_p_order_doubling_converges() {
        for bits in [2, 6, 10] {
            let spec = paper_spec(bits);
            let a = epsilon_p_numeric(&spec, 8).unwrap();
            let b = epsilon_p_numeric(&spec, 16).unwrap();
            assert!((a - b).abs() < 1e-6, "b={bits}: {a} vs {b}");
        }
    }

    #[test]
    fn epsilon_p_fine_grid_limit() {
        let eps = epsilon_p_numeric(&paper_spec(14), DEFAULT_QUADRATURE_ORDER).unwrap();
        assert!(eps < 0.002, "{eps}");
    }

    #[test]
    fn epsilon_p_rejects_low_order() {
        assert!(epsilon_p_numeric(&paper_spec(2), 1).is_err());
    }

    #[test]
    fn breakdown_pieces() {
        let spec = paper_spec(6);
        let b = epsilon_p_breakdown(&spec, 8).unwrap();
        // P(|Z| > 6) = 1.97e-9 per axis
        assert!(
            (b.out_of_range_mass - 1.973e-9).abs() < 1e-11,
            "{}",
            b.out_of_range_mass
        );
        assert_eq!(b.tail_moment, epsilon_tail(spec.range, 3.0));
    }

    #[test]
    fn grid_csv_shape() {
        let grid = build_grid(&ConstellationSpec::new(1.0, 1.0, 1).unwrap()).unwrap();
        let mut buf = Vec::new();
        grid.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], GRID_CSV_HEADER);
        assert_eq!(lines[1], "j,k,q_Aj,p_Ak,re_alpha,im_alpha,p_jk");
        assert_eq!(lines.len(), 6);
    }
}
