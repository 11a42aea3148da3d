//! Small numerical helpers shared across the pipeline: moments,
//! least squares via column-pivoted QR, long-run variance estimation and
//! p-value lookups.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, Normal, StudentsT};

use crate::error::{Error, Result};

/// Relative tolerance on the R diagonal used for rank detection.
const RANK_TOL: f64 = 1e-10;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population variance (denominator n).
pub fn variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

/// Centers and scales to unit population variance. Errors on (near-)constant
/// input, which would otherwise produce NaNs downstream.
pub fn standardize(xs: &[f64]) -> Result<Vec<f64>> {
    let m = mean(xs);
    let s = std_dev(xs);
    if s <= 1e-12 * (1.0 + m.abs()) {
        return Err(Error::Degenerate("zero variance series".into()));
    }
    Ok(xs.iter().map(|x| (x - m) / s).collect())
}

/// First difference: out[t] = xs[t+1] - xs[t], length n-1.
pub fn first_difference(xs: &[f64]) -> Vec<f64> {
    xs.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Ordinary least-squares fit of `y` on the columns of `x`.
pub struct LstsqFit {
    pub coef: Vec<f64>,
    pub rss: f64,
    pub rank: usize,
}

/// Solves min ||X b - y|| through a column-pivoted QR decomposition.
///
/// Errors with `Degenerate` when X is rank deficient; callers that want a
/// ridge fallback should catch that case and use [`ridge_lstsq`].
pub fn lstsq(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<LstsqFit> {
    let (nrows, ncols) = x.shape();
    if nrows < ncols {
        return Err(Error::Numerical(format!(
            "least squares needs at least as many rows ({nrows}) as columns ({ncols})"
        )));
    }
    let qr = x.clone().col_piv_qr();
    let r = qr.r();
    let r00 = r[(0, 0)].abs().max(1e-300);
    let rank = (0..ncols).take_while(|&i| r[(i, i)].abs() > RANK_TOL * r00).count();
    if rank < ncols {
        return Err(Error::Degenerate(format!(
            "collinear design matrix (rank {rank} of {ncols})"
        )));
    }
    let mut z = qr.q().transpose() * y;
    if !r.solve_upper_triangular_mut(&mut z) {
        return Err(Error::Degenerate("collinear design matrix".into()));
    }
    qr.p().inv_permute_rows(&mut z);
    let resid = y - x * &z;
    let rss = resid.dot(&resid);
    Ok(LstsqFit {
        coef: z.as_slice().to_vec(),
        rss,
        rank,
    })
}

/// Ridge-damped least squares: min ||X b - y||^2 + lambda ||b||^2, solved by
/// appending sqrt(lambda) I rows. Always full rank for lambda > 0.
pub fn ridge_lstsq(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<LstsqFit> {
    let (nrows, ncols) = x.shape();
    let mut aug = DMatrix::zeros(nrows + ncols, ncols);
    aug.view_mut((0, 0), (nrows, ncols)).copy_from(x);
    let sl = lambda.sqrt();
    for j in 0..ncols {
        aug[(nrows + j, j)] = sl;
    }
    let mut yext = DVector::zeros(nrows + ncols);
    yext.rows_mut(0, nrows).copy_from(y);
    let fit = lstsq(&aug, &yext)?;
    // Report the residual of the original system, not the augmented one.
    let coef = DVector::from_column_slice(&fit.coef);
    let resid = y - x * &coef;
    Ok(LstsqFit {
        coef: fit.coef,
        rss: resid.dot(&resid),
        rank: fit.rank,
    })
}

/// Bartlett-weighted Newey-West long-run variance of a series with
/// `max_lag` autocovariance terms.
pub fn newey_west_lrv(d: &[f64], max_lag: usize) -> f64 {
    let n = d.len();
    if n == 0 {
        return 0.0;
    }
    let m = mean(d);
    let gamma = |lag: usize| -> f64 {
        (lag..n).map(|t| (d[t] - m) * (d[t - lag] - m)).sum::<f64>() / n as f64
    };
    let mut lrv = gamma(0);
    for l in 1..=max_lag.min(n.saturating_sub(1)) {
        let w = 1.0 - l as f64 / (max_lag as f64 + 1.0);
        lrv += 2.0 * w * gamma(l);
    }
    lrv
}

/// Upper-tail p-value of an F statistic with (d1, d2) degrees of freedom.
pub fn f_test_p(f: f64, d1: usize, d2: usize) -> Result<f64> {
    if d1 == 0 || d2 == 0 {
        return Err(Error::Numerical(format!(
            "invalid F degrees of freedom ({d1}, {d2})"
        )));
    }
    let dist = FisherSnedecor::new(d1 as f64, d2 as f64)
        .map_err(|e| Error::Numerical(format!("F distribution: {e}")))?;
    Ok(1.0 - dist.cdf(f.max(0.0)))
}

/// Upper-tail probability of a standard normal.
pub fn normal_sf(z: f64) -> f64 {
    let dist = Normal::new(0.0, 1.0).expect("unit normal");
    1.0 - dist.cdf(z)
}

/// Two-sided p-value of a t statistic with df degrees of freedom.
pub fn t_test_p_two_sided(t: f64, df: f64) -> Result<f64> {
    if df <= 0.0 {
        return Err(Error::Numerical(format!("invalid t df {df}")));
    }
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::Numerical(format!("t distribution: {e}")))?;
    Ok(2.0 * (1.0 - dist.cdf(t.abs())))
}

/// Pearson correlation with its two-sided p-value from the t approximation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "pearson length mismatch ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InvalidInput("pearson needs at least 3 points".into()));
    }
    let mx = mean(x);
    let my = mean(y);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = x[i] - mx;
        let dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::Degenerate("zero variance in correlation input".into()));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p = if (1.0 - r * r) < 1e-15 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        t_test_p_two_sided(t, df)?
    };
    Ok((r, p))
}

/// Stable per-component seed derivation (splitmix64 over master xor stream).
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
