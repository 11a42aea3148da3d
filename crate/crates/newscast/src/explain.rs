//! Explanation of textual features: correlation grids, local surrogate
//! models, and treatment-effect estimation.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{fit_extratrees, ExtraTreesConfig, ExtraTreesModel};
use crate::ingest::{AlignedDataset, Calendar, Season, SLOTS_PER_DAY};
use crate::stats::{derive_seed, lstsq, normal_sf, pearson, ridge_lstsq, variance};

// ---------------------------------------------------------------------------
// Correlation grids
// ---------------------------------------------------------------------------

/// Minimum stratum size for a correlation cell.
pub const MIN_STRATUM_DAYS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PearsonCell {
    pub feature: String,
    pub hour: usize,
    pub season: Season,
    pub day_type: String,
    /// None when the stratum was too small or the correlation undefined.
    pub r: Option<f64>,
    pub p: Option<f64>,
    pub significant: bool,
    pub n_days: usize,
    pub insufficient: bool,
}

/// Correlates a daily feature series with hourly demand, stratified by
/// (hour, season, day type). The pairing follows the forecasting alignment:
/// the feature value of day d-1 meets the demand of day d+1, and season and
/// day type are those of the demand day. Strata with fewer than
/// [`MIN_STRATUM_DAYS`] days are marked insufficient.
pub fn pearson_grid(
    feature: &str,
    dates: &[NaiveDate],
    values: &[f64],
    aligned: &AlignedDataset,
) -> Result<Vec<PearsonCell>> {
    if dates.len() != values.len() {
        return Err(Error::InvalidInput(format!(
            "{} feature dates for {} values",
            dates.len(),
            values.len()
        )));
    }
    let by_date: BTreeMap<NaiveDate, f64> =
        dates.iter().copied().zip(values.iter().copied()).collect();

    // (feature at target-2, hourly demand of target) pairs per stratum.
    type Stratum = Vec<(f64, f64)>;
    let hours = SLOTS_PER_DAY / 2;
    let mut strata: BTreeMap<(usize, Season, bool), Stratum> = BTreeMap::new();
    for day in &aligned.days {
        let feature_day = day.date - chrono::Duration::days(2);
        let x = match by_date.get(&feature_day) {
            Some(v) => *v,
            None => continue,
        };
        let season = Season::of(day.date);
        let weekend = Calendar::is_weekend(day.date);
        for hour in 0..hours {
            let demand = (day.demand[2 * hour] + day.demand[2 * hour + 1]) / 2.0;
            strata
                .entry((hour, season, weekend))
                .or_default()
                .push((x, demand));
        }
    }

    let mut cells = Vec::with_capacity(hours * 8);
    for hour in 0..hours {
        for season in Season::ALL {
            for weekend in [false, true] {
                let day_type = if weekend { "weekend" } else { "weekday" };
                let pairs = strata.get(&(hour, season, weekend));
                let n_days = pairs.map_or(0, |p| p.len());
                let mut cell = PearsonCell {
                    feature: feature.to_string(),
                    hour,
                    season,
                    day_type: day_type.to_string(),
                    r: None,
                    p: None,
                    significant: false,
                    n_days,
                    insufficient: true,
                };
                if n_days >= MIN_STRATUM_DAYS {
                    let pairs = pairs.expect("non-empty stratum");
                    let xs: Vec<f64> = pairs.iter().map(|(x, _)| *x).collect();
                    let ys: Vec<f64> = pairs.iter().map(|(_, y)| *y).collect();
                    if let Ok((r, p)) = pearson(&xs, &ys) {
                        cell.r = Some(r);
                        cell.p = Some(p);
                        cell.significant = p < 0.05;
                        cell.insufficient = false;
                    }
                }
                cells.push(cell);
            }
        }
    }
    Ok(cells)
}

// ---------------------------------------------------------------------------
// Local surrogate explanations
// ---------------------------------------------------------------------------

/// Which model output the surrogate explains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LimeTarget {
    /// Mean of the 48 half-hourly outputs.
    DailyMean,
    /// One half-hourly output.
    Slot(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimeConfig {
    pub n_samples: usize,
    /// None selects 0.75 * sqrt(feature count).
    pub kernel_width: Option<f64>,
    pub seed: u64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        LimeConfig { n_samples: 5000, kernel_width: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimeReport {
    pub instance_date: Option<NaiveDate>,
    /// Surrogate slope per feature, in the feature's raw units.
    pub coefficients: Vec<(String, f64)>,
    pub std_errors: Vec<f64>,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_samples: usize,
    pub kernel_width: f64,
    /// True when the weighted system needed ridge damping to solve.
    pub ridge_damped: bool,
}

/// Weighted least squares of `y` on `[1, z]`; escalates ridge damping when
/// the plain system is collinear.
fn fit_surrogate(
    z: &DMatrix<f64>,
    w: &[f64],
    y: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, f64, f64, bool)> {
    let n = z.nrows();
    let p = z.ncols();
    let mut design = DMatrix::zeros(n, p + 1);
    let mut target = DVector::zeros(n);
    for i in 0..n {
        let s = w[i].sqrt();
        design[(i, 0)] = s;
        for j in 0..p {
            design[(i, j + 1)] = s * z[(i, j)];
        }
        target[i] = s * y[i];
    }
    let mut damping = 0.0;
    let fit = match lstsq(&design, &target) {
        Ok(fit) => fit,
        Err(Error::Degenerate(_)) | Err(Error::Numerical(_)) => {
            let mut last = None;
            for lambda in [1e-8, 1e-6, 1e-4, 1e-2, 1.0] {
                match ridge_lstsq(&design, &target, lambda) {
                    Ok(fit) => {
                        damping = lambda;
                        last = Some(fit);
                        break;
                    }
                    Err(_) => continue,
                }
            }
            last.ok_or_else(|| {
                Error::Degenerate("surrogate system unsolvable even with damping".into())
            })?
        }
        Err(e) => return Err(e),
    };

    let coef: Vec<f64> = fit.coef.iter().copied().collect();
    let w_sum: f64 = w.iter().sum();
    let y_bar: f64 = w.iter().zip(y).map(|(wi, yi)| wi * yi).sum::<f64>() / w_sum;
    let tss: f64 = w.iter().zip(y).map(|(wi, yi)| wi * (yi - y_bar).powi(2)).sum();
    let r_squared = if tss > 0.0 { 1.0 - fit.rss / tss } else { 1.0 };

    // Classical WLS covariance, sigma^2 (X'WX)^-1, with the same damping the
    // solve needed; escalate until the matrix inverts.
    let dof = n.saturating_sub(p + 1).max(1) as f64;
    let sigma2 = fit.rss / dof;
    let xtx = design.transpose() * &design;
    let mut std_errors = vec![0.0; p + 1];
    let mut lambda = damping;
    loop {
        let mut reg = xtx.clone();
        for j in 0..p + 1 {
            reg[(j, j)] += lambda;
        }
        if let Some(inv) = reg.try_inverse() {
            for (j, e) in std_errors.iter_mut().enumerate() {
                *e = (sigma2 * inv[(j, j)]).max(0.0).sqrt();
            }
            break;
        }
        lambda = if lambda == 0.0 { 1e-8 } else { lambda * 100.0 };
        if lambda > 1.0 {
            return Err(Error::Degenerate(
                "surrogate covariance unsolvable even with damping".into(),
            ));
        }
    }
    Ok((coef, std_errors, r_squared, fit.rss, damping > 0.0))
}

/// Explains one prediction with a local linear surrogate. Perturbations are
/// unit-normal draws around the standardized instance (coordinates sampled
/// row by row); weights decay as exp(-dist^2/width^2). Coefficients are
/// reported per raw feature unit. `predict` maps a raw feature row to the
/// explained scalar output.
pub fn lime_explain_fn(
    predict: &(dyn Fn(&[f64]) -> Result<f64> + Sync),
    feature_names: &[String],
    train_x: &DMatrix<f64>,
    instance: &[f64],
    instance_date: Option<NaiveDate>,
    config: &LimeConfig,
) -> Result<LimeReport> {
    let p = feature_names.len();
    if instance.len() != p || train_x.ncols() != p {
        return Err(Error::InvalidInput(format!(
            "instance has {} features, expected {p}",
            instance.len()
        )));
    }
    if config.n_samples < 2 {
        return Err(Error::Config("need at least 2 perturbation samples".into()));
    }
    let width = config
        .kernel_width
        .unwrap_or_else(|| 0.75 * (p as f64).sqrt());
    if !(width > 0.0) {
        return Err(Error::Config(format!("kernel width {width} must be positive")));
    }

    // Standardization statistics from the training design.
    let n_train = train_x.nrows() as f64;
    let mut mean = vec![0.0; p];
    let mut std = vec![0.0; p];
    for j in 0..p {
        let col: Vec<f64> = (0..train_x.nrows()).map(|i| train_x[(i, j)]).collect();
        mean[j] = col.iter().sum::<f64>() / n_train;
        let var = col.iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / n_train;
        std[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    let z_instance: Vec<f64> = (0..p).map(|j| (instance[j] - mean[j]) / std[j]).collect();

    use rand::SeedableRng;
    use rand_distr::Distribution;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
    let normal = rand_distr::StandardNormal;
    let mut z = DMatrix::zeros(config.n_samples, p);
    let mut weights = Vec::with_capacity(config.n_samples);
    let mut outputs = Vec::with_capacity(config.n_samples);
    for i in 0..config.n_samples {
        let mut dist2 = 0.0;
        let mut raw = vec![0.0; p];
        for j in 0..p {
            let e: f64 = normal.sample(&mut rng);
            let zij = z_instance[j] + e;
            z[(i, j)] = zij;
            dist2 += e * e;
            raw[j] = zij * std[j] + mean[j];
        }
        weights.push((-dist2 / (width * width)).exp());
        outputs.push(predict(&raw)?);
    }

    let (coef, errs, r_squared, _, ridge_damped) = fit_surrogate(&z, &weights, &outputs)?;
    // Slopes per standardized unit become slopes per raw unit.
    let coefficients: Vec<(String, f64)> = feature_names
        .iter()
        .enumerate()
        .map(|(j, name)| (name.clone(), coef[j + 1] / std[j]))
        .collect();
    let std_errors: Vec<f64> = (0..p).map(|j| errs[j + 1] / std[j]).collect();
    Ok(LimeReport {
        instance_date,
        coefficients,
        std_errors,
        intercept: coef[0],
        r_squared,
        n_samples: config.n_samples,
        kernel_width: width,
        ridge_damped,
    })
}

/// Convenience wrapper explaining a fitted ensemble's output.
pub fn lime_explain(
    model: &ExtraTreesModel,
    target: LimeTarget,
    train_x: &DMatrix<f64>,
    instance: &[f64],
    instance_date: Option<NaiveDate>,
    config: &LimeConfig,
) -> Result<LimeReport> {
    if let LimeTarget::Slot(s) = target {
        if s >= model.n_outputs {
            return Err(Error::InvalidInput(format!(
                "slot {s} outside the model's {} outputs",
                model.n_outputs
            )));
        }
    }
    let predict = |row: &[f64]| -> Result<f64> {
        let out = model.predict_row(row)?;
        Ok(match target {
            LimeTarget::DailyMean => out.iter().sum::<f64>() / out.len() as f64,
            LimeTarget::Slot(s) => out[s],
        })
    };
    lime_explain_fn(&predict, &model.feature_names, train_x, instance, instance_date, config)
}

// ---------------------------------------------------------------------------
// Treatment effects
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoubleMlConfig {
    /// Nuisance regressor settings, shared by the outcome and treatment fits.
    pub nuisance: ExtraTreesConfig,
    /// Fit nuisances on one half and residualize the other. Disabling
    /// reproduces in-sample residualization.
    pub cross_fit: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoubleMlResult {
    pub tau: f64,
    pub std_error: f64,
    /// Two-sided p-value under the normal reference.
    pub p_value: f64,
    pub n_rows: usize,
    pub cross_fit: bool,
    pub residual_treatment_variance: f64,
}

fn nuisance_predictions(
    x_train: &DMatrix<f64>,
    target: &[f64],
    x_eval: &DMatrix<f64>,
    names: &[String],
    config: &ExtraTreesConfig,
) -> Result<Vec<f64>> {
    let y = DMatrix::from_fn(target.len(), 1, |i, _| target[i]);
    let model = fit_extratrees(x_train, &y, names, config)?;
    let pred = model.predict(x_eval)?;
    Ok((0..pred.nrows()).map(|i| pred[(i, 0)]).collect())
}

/// Partially-linear effect of a treatment on a scalar outcome: both are
/// residualized against the confounders with tree-ensemble regressions, and
/// the effect is the no-intercept least-squares slope of outcome residuals
/// on treatment residuals, with a heteroskedasticity-robust standard error.
pub fn double_ml(
    x: &DMatrix<f64>,
    treatment: &[f64],
    outcome: &[f64],
    config: &DoubleMlConfig,
) -> Result<DoubleMlResult> {
    let n = x.nrows();
    if treatment.len() != n || outcome.len() != n {
        return Err(Error::InvalidInput(format!(
            "confounders have {n} rows, treatment {} and outcome {}",
            treatment.len(),
            outcome.len()
        )));
    }
    if n < 20 {
        return Err(Error::InvalidInput(format!(
            "need at least 20 rows for effect estimation, got {n}"
        )));
    }
    if variance(treatment) == 0.0 {
        return Err(Error::Degenerate("treatment series is constant".into()));
    }
    let names: Vec<String> = (0..x.ncols()).map(|j| format!("x{j}")).collect();

    let mut t_hat = vec![0.0; n];
    let mut y_hat = vec![0.0; n];
    if config.cross_fit {
        let mid = n / 2;
        let folds = [(0..mid), (mid..n)];
        for (f, eval_rows) in folds.iter().enumerate() {
            let train_rows: Vec<usize> = (0..n).filter(|i| !eval_rows.contains(i)).collect();
            let x_train = DMatrix::from_fn(train_rows.len(), x.ncols(), |i, j| {
                x[(train_rows[i], j)]
            });
            let x_eval = DMatrix::from_fn(eval_rows.len(), x.ncols(), |i, j| {
                x[(eval_rows.start + i, j)]
            });
            let t_train: Vec<f64> = train_rows.iter().map(|&i| treatment[i]).collect();
            let y_train: Vec<f64> = train_rows.iter().map(|&i| outcome[i]).collect();
            let g_cfg = ExtraTreesConfig {
                seed: derive_seed(config.seed, 2 * f as u64),
                ..config.nuisance
            };
            let h_cfg = ExtraTreesConfig {
                seed: derive_seed(config.seed, 2 * f as u64 + 1),
                ..config.nuisance
            };
            let y_pred = nuisance_predictions(&x_train, &y_train, &x_eval, &names, &g_cfg)?;
            let t_pred = nuisance_predictions(&x_train, &t_train, &x_eval, &names, &h_cfg)?;
            for (k, i) in eval_rows.clone().enumerate() {
                y_hat[i] = y_pred[k];
                t_hat[i] = t_pred[k];
            }
        }
    } else {
        let g_cfg = ExtraTreesConfig { seed: derive_seed(config.seed, 0), ..config.nuisance };
        let h_cfg = ExtraTreesConfig { seed: derive_seed(config.seed, 1), ..config.nuisance };
        y_hat = nuisance_predictions(x, outcome, x, &names, &g_cfg)?;
        t_hat = nuisance_predictions(x, treatment, x, &names, &h_cfg)?;
    }

    let t_res: Vec<f64> = treatment.iter().zip(&t_hat).map(|(t, p)| t - p).collect();
    let y_res: Vec<f64> = outcome.iter().zip(&y_hat).map(|(y, p)| y - p).collect();
    let sum_t2: f64 = t_res.iter().map(|t| t * t).sum();
    let rel_floor = 1e-12 * treatment.iter().map(|t| t * t).sum::<f64>().max(f64::MIN_POSITIVE);
    if sum_t2 <= rel_floor {
        return Err(Error::Degenerate(
            "treatment explained by confounders: residual variance is zero".into(),
        ));
    }
    let tau: f64 = t_res.iter().zip(&y_res).map(|(t, y)| t * y).sum::<f64>() / sum_t2;
    let meat: f64 = t_res
        .iter()
        .zip(&y_res)
        .map(|(t, y)| {
            let e = y - tau * t;
            t * t * e * e
        })
        .sum();
    let std_error = meat.sqrt() / sum_t2;
    if std_error == 0.0 {
        return Err(Error::Degenerate("effect standard error collapsed to zero".into()));
    }
    let p_value = 2.0 * normal_sf((tau / std_error).abs());
    Ok(DoubleMlResult {
        tau,
        std_error,
        p_value,
        n_rows: n,
        cross_fit: config.cross_fit,
        residual_treatment_variance: sum_t2 / n as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEntry {
    pub slot: usize,
    pub tau: f64,
    pub p_value: f64,
    pub retained: bool,
    /// tau where retained, 0 elsewhere.
    pub plotted_tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectReport {
    pub feature: String,
    /// One entry per half-hour, in slot order.
    pub entries: Vec<EffectEntry>,
    pub retained: Vec<usize>,
}

/// Runs the effect estimation separately for each half-hourly outcome.
/// Slots whose two-sided p-value clears 0.05 form the retained set; the
/// plotted profile zeroes the rest.
pub fn effect_profile(
    feature: &str,
    x: &DMatrix<f64>,
    treatment: &[f64],
    outcomes: &DMatrix<f64>,
    config: &DoubleMlConfig,
) -> Result<EffectReport> {
    let slots = outcomes.ncols();
    let entries: Vec<EffectEntry> = (0..slots)
        .into_par_iter()
        .map(|slot| {
            let y: Vec<f64> = (0..outcomes.nrows()).map(|i| outcomes[(i, slot)]).collect();
            let slot_config = DoubleMlConfig {
                seed: derive_seed(config.seed, slot as u64),
                ..*config
            };
            let result = double_ml(x, treatment, &y, &slot_config).map_err(|e| {
                Error::Numerical(format!("effect estimation failed at slot {slot}: {e}"))
            })?;
            let retained = result.p_value < 0.05;
            Ok(EffectEntry {
                slot,
                tau: result.tau,
                p_value: result.p_value,
                retained,
                plotted_tau: if retained { result.tau } else { 0.0 },
            })
        })
        .collect::<Result<_>>()?;
    let retained = entries.iter().filter(|e| e.retained).map(|e| e.slot).collect();
    Ok(EffectReport { feature: feature.to_string(), entries, retained })
}
