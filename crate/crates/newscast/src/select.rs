//! Feature screening by bilateral Granger-causality testing.
//!
//! Each candidate feature series is first-differenced and standardised, as is
//! the target (daily mean demand). The forward test regresses the target on
//! its own lags (restricted) and additionally on the feature's lags
//! (unrestricted); the F statistic on the lag block gives `p_xy`. The reverse
//! test swaps the roles and gives `p_yx`. A feature is kept only when it
//! predicts the target (`p_xy < alpha`) and the target does not predict it
//! back (`p_yx >= alpha`), which screens out series that merely echo demand.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{f_test_p, first_difference, lstsq, standardize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrangerConfig {
    /// Number of lags in both regressions.
    pub lag: usize,
    /// Significance threshold for both directions.
    pub alpha: f64,
}

impl Default for GrangerConfig {
    fn default() -> Self {
        GrangerConfig { lag: 30, alpha: 0.05 }
    }
}

impl GrangerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lag == 0 {
            return Err(Error::Config("Granger lag must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.alpha) || self.alpha <= 0.0 {
            return Err(Error::Config(format!(
                "Granger alpha {} outside (0, 1)",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Smallest residual degrees of freedom accepted by [`granger_p`].
const MIN_RESIDUAL_DF: usize = 10;

/// P-value for "x Granger-causes y" with `lag` lags.
pub fn granger_p(x: &[f64], y: &[f64], lag: usize) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "series length mismatch ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    let n_rows = (y.len().saturating_sub(1)).saturating_sub(lag);
    let unrestricted_params = 2 * lag + 1;
    if n_rows < unrestricted_params + MIN_RESIDUAL_DF {
        return Err(Error::InvalidInput(format!(
            "series too short: {} rows for {} regressors",
            n_rows, unrestricted_params
        )));
    }
    let dx = standardize(&first_difference(x))?;
    let dy = standardize(&first_difference(y))?;

    let m = dy.len();
    let rows = m - lag;
    let target = DVector::from_iterator(rows, (lag..m).map(|t| dy[t]));

    let mut restricted = DMatrix::zeros(rows, lag + 1);
    let mut unrestricted = DMatrix::zeros(rows, 2 * lag + 1);
    for (r, t) in (lag..m).enumerate() {
        restricted[(r, 0)] = 1.0;
        unrestricted[(r, 0)] = 1.0;
        for l in 1..=lag {
            restricted[(r, l)] = dy[t - l];
            unrestricted[(r, l)] = dy[t - l];
            unrestricted[(r, lag + l)] = dx[t - l];
        }
    }

    let fit_r = lstsq(&restricted, &target)?;
    let fit_u = lstsq(&unrestricted, &target)?;
    let df2 = rows - unrestricted_params;
    if fit_u.rss <= 1e-12 {
        // The unrestricted model fits exactly; the lag block is maximally
        // informative.
        return Ok(0.0);
    }
    let f = ((fit_r.rss - fit_u.rss) / lag as f64) / (fit_u.rss / df2 as f64);
    f_test_p(f, lag, df2)
}

/// Outcome of the bilateral test for one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrangerOutcome {
    pub feature: String,
    /// Forward p-value (feature predicts target); None when the test failed.
    pub p_forward: Option<f64>,
    /// Reverse p-value (target predicts feature); None when the test failed.
    pub p_reverse: Option<f64>,
    pub selected: bool,
    pub reason: String,
}

fn failure_reason(err: &Error) -> String {
    match err {
        Error::Degenerate(msg) if msg.contains("zero variance") => "zero variance".to_string(),
        Error::Degenerate(msg) if msg.contains("collinear") => "collinear".to_string(),
        other => other.to_string(),
    }
}

/// Runs the bilateral test for every named feature series against the
/// target. Features whose tests fail (constant series, collinear lag blocks,
/// too few observations) are reported unselected with the failure reason.
/// Outcomes keep the input order and each feature's verdict is independent
/// of which other features are present.
pub fn bilateral_select(
    features: &[(String, Vec<f64>)],
    target: &[f64],
    config: &GrangerConfig,
) -> Result<Vec<GrangerOutcome>> {
    config.validate()?;
    let outcomes: Vec<GrangerOutcome> = features
        .par_iter()
        .map(|(name, series)| {
            let forward = granger_p(series, target, config.lag);
            let reverse = granger_p(target, series, config.lag);
            match (forward, reverse) {
                (Ok(p_xy), Ok(p_yx)) => {
                    let forward_ok = p_xy < config.alpha;
                    let reverse_ok = p_yx >= config.alpha;
                    let (selected, reason) = match (forward_ok, reverse_ok) {
                        (true, true) => (true, "selected".to_string()),
                        (false, true) => (false, "no forward signal".to_string()),
                        (true, false) => (false, "feedback from target".to_string()),
                        (false, false) => {
                            (false, "no forward signal; feedback from target".to_string())
                        }
                    };
                    GrangerOutcome {
                        feature: name.clone(),
                        p_forward: Some(p_xy),
                        p_reverse: Some(p_yx),
                        selected,
                        reason,
                    }
                }
                (forward, reverse) => {
                    let err = forward
                        .as_ref()
                        .err()
                        .or(reverse.as_ref().err())
                        .expect("at least one failure");
                    GrangerOutcome {
                        feature: name.clone(),
                        p_forward: forward.as_ref().ok().copied(),
                        p_reverse: reverse.as_ref().ok().copied(),
                        selected: false,
                        reason: failure_reason(err),
                    }
                }
            }
        })
        .collect();
    Ok(outcomes)
}

/// The audit table as CSV text: feature, p_xy, p_yx, selected, reason.
pub fn audit_csv(outcomes: &[GrangerOutcome]) -> Result<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["feature", "p_xy", "p_yx", "selected", "reason"])
        .map_err(|e| Error::InvalidInput(format!("audit write: {e}")))?;
    for o in outcomes {
        let fmt = |p: Option<f64>| p.map_or("NA".to_string(), |v| format!("{v:.6e}"));
        wtr.write_record([
            o.feature.as_str(),
            &fmt(o.p_forward),
            &fmt(o.p_reverse),
            if o.selected { "true" } else { "false" },
            o.reason.as_str(),
        ])
        .map_err(|e| Error::InvalidInput(format!("audit write: {e}")))?;
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| Error::InvalidInput(format!("audit write: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidInput(format!("audit write: {e}")))
}

/// Writes the audit table: feature, p_xy, p_yx, selected, reason.
pub fn write_audit_csv(outcomes: &[GrangerOutcome], path: &str) -> Result<()> {
    std::fs::write(path, audit_csv(outcomes)?).map_err(|e| Error::io(path, e))
}
