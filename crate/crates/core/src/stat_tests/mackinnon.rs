//! MacKinnon (1994) response-surface p-values and MacKinnon (2010)
//! finite-sample critical values for Dickey-Fuller and Engle-Granger
//! statistics. Only the deterministic-term cases used by this crate are
//! embedded: no constant with one series, constant with one or two series.

use statrs::distribution::{ContinuousCDF, Normal};

use super::Regression;

struct Surface {
    /// Above this the p-value is 1.
    max: f64,
    /// Below this the p-value is 0.
    min: f64,
    /// Switch point between the small-p and large-p polynomials.
    star: f64,
    /// Coefficients in ascending powers of the statistic.
    small_p: [f64; 3],
    large_p: [f64; 4],
}

const NO_CONSTANT_N1: Surface = Surface {
    max: f64::INFINITY,
    min: -19.04,
    star: -1.04,
    small_p: [0.6344, 1.2378, 3.2496e-2],
    large_p: [0.4797, 9.3557e-1, -0.6999e-1, 3.3066e-2],
};

const CONSTANT_N1: Surface = Surface {
    max: 2.74,
    min: -18.83,
    star: -1.61,
    small_p: [2.1659, 1.4412, 3.8269e-2],
    large_p: [1.7339, 9.3202e-1, -1.2745e-1, -1.0368e-2],
};

const CONSTANT_N2: Surface = Surface {
    max: 0.92,
    min: -18.86,
    star: -2.62,
    small_p: [2.92, 1.5012, 3.9796e-2],
    large_p: [2.1945, 6.4695e-1, -2.9198e-1, -4.2377e-2],
};

fn surface(regression: Regression, n_series: usize) -> Option<&'static Surface> {
    match (regression, n_series) {
        (Regression::None, 1) => Some(&NO_CONSTANT_N1),
        (Regression::Constant, 1) => Some(&CONSTANT_N1),
        (Regression::Constant, 2) => Some(&CONSTANT_N2),
        _ => None,
    }
}

fn polyval_ascending(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Left-tail p-value of a unit-root / cointegration t-statistic.
///
/// `n_series` is the number of I(1) series in the test (1 for ADF, 2 for a
/// two-variable Engle-Granger test). Panics on an unsupported combination;
/// the crate only asks for the three embedded cases.
pub fn mackinnon_p(stat: f64, regression: Regression, n_series: usize) -> f64 {
    let s = surface(regression, n_series)
        .unwrap_or_else(|| panic!("no response surface for {regression:?} with {n_series} series"));
    if stat > s.max {
        return 1.0;
    }
    if stat < s.min {
        return 0.0;
    }
    let z = if stat <= s.star {
        polyval_ascending(&s.small_p, stat)
    } else {
        polyval_ascending(&s.large_p, stat)
    };
    Normal::standard().cdf(z)
}

// 1%, 5%, 10% rows; crit(T) = b0 + b1/T + b2/T^2 + b3/T^3
const CRIT_NO_CONSTANT_N1: [[f64; 4]; 3] = [
    [-2.56574, -2.2358, -3.627, 0.0],
    [-1.94100, -0.2686, -3.365, 31.223],
    [-1.61682, 0.2656, -2.714, 25.364],
];
const CRIT_CONSTANT_N1: [[f64; 4]; 3] = [
    [-3.43035, -6.5393, -16.786, -79.433],
    [-2.86154, -2.8903, -4.234, -40.040],
    [-2.56677, -1.5384, -2.809, 0.0],
];
const CRIT_CONSTANT_N2: [[f64; 4]; 3] = [
    [-3.89644, -10.9519, -33.527, 0.0],
    [-3.33613, -6.1101, -6.823, 0.0],
    [-3.04445, -4.2412, -2.720, 0.0],
];

/// Finite-sample 1%, 5% and 10% critical values for sample size `nobs`.
pub fn critical_values(regression: Regression, n_series: usize, nobs: usize) -> [f64; 3] {
    let table = match (regression, n_series) {
        (Regression::None, 1) => &CRIT_NO_CONSTANT_N1,
        (Regression::Constant, 1) => &CRIT_CONSTANT_N1,
        (Regression::Constant, 2) => &CRIT_CONSTANT_N2,
        _ => panic!("no critical values for {regression:?} with {n_series} series"),
    };
    let inv = 1.0 / nobs as f64;
    table.map(|row| polyval_ascending(&row, inv))
}
