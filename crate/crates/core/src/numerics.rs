//! Small numerical helpers shared by the analytic modules.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;

/// Standard normal density.
pub(crate) fn std_normal_pdf(x: f64) -> f64 {
    if x.is_finite() {
        (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
    } else {
        0.0
    }
}

/// `x * pdf(x)`, with the limit 0 at infinity.
fn x_pdf(x: f64) -> f64 {
    if x.is_finite() {
        x * std_normal_pdf(x)
    } else {
        0.0
    }
}

/// Standard normal probability of `(lo, hi]`, accurate in both tails.
pub(crate) fn std_normal_mass(lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let upper = |x: f64| 0.5 * libm::erfc(x * FRAC_1_SQRT_2);
    if lo >= 0.0 {
        upper(lo) - upper(hi)
    } else if hi <= 0.0 {
        upper(-hi) - upper(-lo)
    } else {
        1.0 - upper(hi) - upper(-lo)
    }
}

/// Zeroth, first and second moments of `N(mean, sd^2)` restricted to `[lo, hi]`,
/// i.e. `int_lo^hi x^k pdf(x) dx` for k = 0, 1, 2. No renormalization.
pub(crate) fn windowed_gaussian_moments(mean: f64, sd: f64, lo: f64, hi: f64) -> [f64; 3] {
    let a = (lo - mean) / sd;
    let b = (hi - mean) / sd;
    let mass = std_normal_mass(a, b);
    let dpdf = std_normal_pdf(a) - std_normal_pdf(b);
    let dxpdf = x_pdf(a) - x_pdf(b);
    let m0 = mass;
    let m1 = mean * mass + sd * dpdf;
    let m2 = (mean * mean + sd * sd) * mass + 2.0 * mean * sd * dpdf + sd * sd * dxpdf;
    [m0, m1, m2]
}

/// Gauss-Legendre nodes and weights mapped onto `[0, 1]`.
pub(crate) fn unit_legendre(order: usize) -> Vec<(f64, f64)> {
    let order = NonZeroUsize::new(order).expect("quadrature order must be positive");
    GaussLegendre::new(order)
        .iter()
        .map(|(x, w)| (0.5 * (x + 1.0), 0.5 * w))
        .collect()
}

/// `n` points geometrically spaced from `lo` to `hi` inclusive.
pub fn geometric_sweep(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|i| {
                    if i == 0 {
                        lo
                    } else if i == n - 1 {
                        hi
                    } else {
                        (a + (b - a) * i as f64 / (n - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

/// Maps `f` over `0..n`, in parallel when the `parallel` feature is on.
/// Output order always follows the index, so reductions over it are deterministic.
pub(crate) fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// `x log2 x` with the continuous extension 0 at x = 0.
pub(crate) fn xlog2x(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.log2()
    }
}
