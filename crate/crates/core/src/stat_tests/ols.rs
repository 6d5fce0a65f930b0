use super::StatsError;

/// Least-squares fit. When fitted with an intercept, the intercept is
/// `coefficients[0]` and the regressors follow in the order given.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    pub stderr_coeffs: Vec<f64>,
    pub r_squared: f64,
    pub nobs: usize,
    pub rss: f64,
}

impl OlsFit {
    pub fn t_value(&self, i: usize) -> f64 {
        self.coefficients[i] / self.stderr_coeffs[i]
    }

    pub fn df_resid(&self) -> usize {
        self.nobs - self.coefficients.len()
    }

    /// Residual standard deviation with the `n - k` denominator.
    pub fn resid_sd(&self) -> f64 {
        (self.rss / self.df_resid() as f64).sqrt()
    }
}

// Relative size below which a diagonal entry of R counts as zero.
const RANK_TOL: f64 = 1e-10;

/// Ordinary least squares via Householder QR of the design matrix.
pub fn ols_fit(y: &[f64], x_columns: &[&[f64]], intercept: bool) -> Result<OlsFit, StatsError> {
    let n = y.len();
    if let Some(bad) = x_columns.iter().find(|c| c.len() != n) {
        return Err(StatsError::LengthMismatch(n, bad.len()));
    }
    if n < x_columns.len() + 2 {
        return Err(StatsError::InsufficientObservations {
            needed: x_columns.len() + 2,
            got: n,
        });
    }
    if y.iter()
        .chain(x_columns.iter().flat_map(|c| c.iter()))
        .any(|v| !v.is_finite())
    {
        return Err(StatsError::NonFinite);
    }

    let mut design: Vec<Vec<f64>> = Vec::with_capacity(x_columns.len() + 1);
    if intercept {
        design.push(vec![1.0; n]);
    }
    design.extend(x_columns.iter().map(|c| c.to_vec()));
    let p = design.len();
    if p == 0 {
        return Err(StatsError::RankDeficient(0));
    }
    let col_norms: Vec<f64> = design.iter().map(|c| norm(c)).collect();

    // factor in place: design becomes R (upper part) plus Householder debris
    let mut qty = y.to_vec();
    let mut r_diag = vec![0.0; p];
    for k in 0..p {
        let alpha = {
            let s = norm(&design[k][k..]);
            if design[k][k] > 0.0 {
                -s
            } else {
                s
            }
        };
        if col_norms[k] == 0.0 || alpha.abs() <= RANK_TOL * col_norms[k] {
            return Err(StatsError::RankDeficient(k));
        }
        let mut v = design[k][k..].to_vec();
        v[0] -= alpha;
        let vtv = dot(&v, &v);
        for col in design.iter_mut().skip(k + 1) {
            reflect(&v, vtv, &mut col[k..]);
        }
        reflect(&v, vtv, &mut qty[k..]);
        r_diag[k] = alpha;
        design[k][k] = alpha;
    }

    // back-substitute R b = (Q'y)[..p]; R[i][j] lives in design[j][i]
    let r = |i: usize, j: usize| if i == j { r_diag[i] } else { design[j][i] };
    let mut coefficients = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = (i + 1..p).map(|j| r(i, j) * coefficients[j]).sum();
        coefficients[i] = (qty[i] - s) / r(i, i);
    }

    let mut residuals = y.to_vec();
    let offset = usize::from(intercept);
    if intercept {
        residuals.iter_mut().for_each(|e| *e -= coefficients[0]);
    }
    for (col, b) in x_columns.iter().zip(&coefficients[offset..]) {
        residuals.iter_mut().zip(col.iter()).for_each(|(e, x)| *e -= b * x);
    }
    let rss = dot(&residuals, &residuals);

    // (X'X)^-1 = R^-1 R^-T; only the diagonal is needed
    let mut r_inv = vec![vec![0.0; p]; p];
    #[allow(clippy::needless_range_loop)]
    for c in 0..p {
        for i in (0..=c).rev() {
            let rhs = if i == c { 1.0 } else { 0.0 };
            let s: f64 = (i + 1..=c).map(|j| r(i, j) * r_inv[j][c]).sum();
            r_inv[i][c] = (rhs - s) / r(i, i);
        }
    }
    let sigma2 = rss / (n - p) as f64;
    let stderr_coeffs = (0..p)
        .map(|i| (sigma2 * r_inv[i].iter().map(|v| v * v).sum::<f64>()).sqrt())
        .collect();

    let tss = if intercept {
        let mean = y.iter().sum::<f64>() / n as f64;
        y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
    } else {
        dot(y, y)
    };
    let r_squared = if tss > 0.0 { 1.0 - rss / tss } else { 1.0 };

    Ok(OlsFit {
        coefficients,
        residuals,
        stderr_coeffs,
        r_squared,
        nobs: n,
        rss,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    // scaled to avoid overflow on large prices
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    scale * a.iter().map(|v| (v / scale) * (v / scale)).sum::<f64>().sqrt()
}

fn reflect(v: &[f64], vtv: f64, x: &mut [f64]) {
    let f = 2.0 * dot(v, x) / vtv;
    x.iter_mut().zip(v).for_each(|(xi, vi)| *xi -= f * vi);
}
