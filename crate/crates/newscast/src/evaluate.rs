//! Forecast scoring, model comparison, and error decomposition.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Calendar;
use crate::stats::{newey_west_lrv, normal_sf, t_test_p_two_sided};

/// One evaluated day: truth and forecast for the 48 half-hours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastDay {
    pub target_date: NaiveDate,
    pub truth: Vec<f64>,
    pub forecast: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
    /// Symmetric percentage error, in percent.
    pub smape: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DailyScore {
    pub date: NaiveDate,
    pub rmse: f64,
    pub mae: f64,
    pub smape: f64,
}

/// Scores paired (truth, forecast) values pooled into one set.
fn pooled_metrics<'a, I>(pairs: I) -> Result<Metrics>
where
    I: Iterator<Item = (usize, &'a f64, &'a f64)>,
{
    let mut n = 0usize;
    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut pct = 0.0;
    for (slot, y, yhat) in pairs {
        let err = y - yhat;
        let denom = (y + yhat).abs() / 2.0;
        if denom == 0.0 {
            return Err(Error::Degenerate(format!(
                "percentage error undefined at slot {slot}: truth and forecast sum to zero"
            )));
        }
        sq += err * err;
        abs += err.abs();
        pct += err.abs() / denom;
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidInput("no values to score".into()));
    }
    let h = n as f64;
    Ok(Metrics {
        rmse: (sq / h).sqrt(),
        mae: abs / h,
        smape: 100.0 / h * pct,
    })
}

/// RMSE, MAE and symmetric percentage error over one day's horizon.
pub fn day_metrics(truth: &[f64], forecast: &[f64]) -> Result<Metrics> {
    if truth.len() != forecast.len() || truth.is_empty() {
        return Err(Error::InvalidInput(format!(
            "cannot score {} truth values against {} forecasts",
            truth.len(),
            forecast.len()
        )));
    }
    if truth.iter().chain(forecast).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite value in scored day".into()));
    }
    pooled_metrics(truth.iter().zip(forecast).enumerate().map(|(i, (y, f))| (i, y, f)))
}

pub fn score_days(days: &[ForecastDay]) -> Result<Vec<DailyScore>> {
    days.iter()
        .map(|d| {
            let m = day_metrics(&d.truth, &d.forecast).map_err(|e| {
                Error::InvalidInput(format!("scoring {}: {e}", d.target_date))
            })?;
            Ok(DailyScore { date: d.target_date, rmse: m.rmse, mae: m.mae, smape: m.smape })
        })
        .collect()
}

/// Arithmetic means of the daily scores.
pub fn period_metrics(scores: &[DailyScore]) -> Result<Metrics> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("no daily scores to aggregate".into()));
    }
    let n = scores.len() as f64;
    Ok(Metrics {
        rmse: scores.iter().map(|s| s.rmse).sum::<f64>() / n,
        mae: scores.iter().map(|s| s.mae).sum::<f64>() / n,
        smape: scores.iter().map(|s| s.smape).sum::<f64>() / n,
    })
}

/// Daily mean squared error, the loss series used for model comparison.
pub fn daily_mse_losses(days: &[ForecastDay]) -> Vec<f64> {
    days.iter()
        .map(|d| {
            d.truth
                .iter()
                .zip(&d.forecast)
                .map(|(y, f)| (y - f) * (y - f))
                .sum::<f64>()
                / d.truth.len() as f64
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DmOptions {
    /// Apply the small-sample adjustment (scales the statistic and uses a
    /// Student-t reference).
    pub small_sample_correction: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub model_a: String,
    pub model_b: String,
    pub statistic: f64,
    /// One-sided p-value; small values favour model A.
    pub p_value: f64,
    pub n_days: usize,
    pub small_sample_corrected: bool,
}

fn one_sided_t_cdf(x: f64, df: f64) -> Result<f64> {
    let two = t_test_p_two_sided(x, df)?;
    Ok(if x < 0.0 { two / 2.0 } else { 1.0 - two / 2.0 })
}

/// Diebold-Mariano comparison of two per-day loss series. The loss
/// differential's long-run variance comes from a Bartlett lag window with
/// truncation ceil(n^(1/3)). The one-sided p-value is small when model A's
/// losses are systematically below model B's.
pub fn dm_test(
    model_a: &str,
    model_b: &str,
    loss_a: &[f64],
    loss_b: &[f64],
    options: &DmOptions,
) -> Result<ComparisonReport> {
    if loss_a.len() != loss_b.len() {
        return Err(Error::InvalidInput(format!(
            "loss series differ in length: {} vs {}",
            loss_a.len(),
            loss_b.len()
        )));
    }
    let n = loss_a.len();
    if n < 10 {
        return Err(Error::InvalidInput(format!(
            "need at least 10 days for model comparison, got {n}"
        )));
    }
    let d: Vec<f64> = loss_a.iter().zip(loss_b).map(|(a, b)| a - b).collect();
    if d.iter().all(|v| *v == d[0]) {
        return Err(Error::Degenerate(
            "loss differential is constant; the comparison is undefined".into(),
        ));
    }
    let dbar = d.iter().sum::<f64>() / n as f64;
    let max_lag = (n as f64).cbrt().ceil() as usize;
    let lrv = newey_west_lrv(&d, max_lag);
    if lrv <= 0.0 {
        return Err(Error::Degenerate(
            "loss differential has non-positive long-run variance".into(),
        ));
    }
    let mut statistic = dbar / (lrv / n as f64).sqrt();
    let p_value = if options.small_sample_correction {
        // Horizon-1 adjustment: shrink the statistic and widen the tails.
        let nf = n as f64;
        statistic *= ((nf - 1.0) / nf).sqrt();
        one_sided_t_cdf(statistic, nf - 1.0)?
    } else {
        1.0 - normal_sf(statistic)
    };
    Ok(ComparisonReport {
        model_a: model_a.to_string(),
        model_b: model_b.to_string(),
        statistic,
        p_value,
        n_days: n,
        small_sample_corrected: options.small_sample_correction,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourRow {
    pub hour: usize,
    pub rmse: f64,
    pub mae: f64,
    pub smape: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayTypeRow {
    pub day_type: String,
    pub n_days: usize,
    pub rmse: f64,
    pub mae: f64,
    pub smape: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDecomposition {
    /// 24 rows; each pools the two half-hours of that hour across all days.
    pub by_hour: Vec<HourRow>,
    /// Mean daily scores for weekdays and weekends.
    pub by_day_type: Vec<DayTypeRow>,
}

pub fn error_decomposition(days: &[ForecastDay]) -> Result<ErrorDecomposition> {
    if days.is_empty() {
        return Err(Error::InvalidInput("no days to decompose".into()));
    }
    let slots = days[0].truth.len();
    if slots % 2 != 0 {
        return Err(Error::InvalidInput(format!(
            "{slots} slots per day cannot pair into hours"
        )));
    }
    let mut by_hour = Vec::with_capacity(slots / 2);
    for hour in 0..slots / 2 {
        let pairs = days.iter().flat_map(|d| {
            [2 * hour, 2 * hour + 1]
                .into_iter()
                .map(move |s| (s, &d.truth[s], &d.forecast[s]))
        });
        let m = pooled_metrics(pairs)?;
        by_hour.push(HourRow { hour, rmse: m.rmse, mae: m.mae, smape: m.smape });
    }

    let mut by_day_type = Vec::with_capacity(2);
    for (label, weekend) in [("weekday", false), ("weekend", true)] {
        let group: Vec<&ForecastDay> = days
            .iter()
            .filter(|d| Calendar::is_weekend(d.target_date) == weekend)
            .collect();
        if group.is_empty() {
            continue;
        }
        let scores: Vec<DailyScore> = group
            .iter()
            .map(|d| {
                let m = day_metrics(&d.truth, &d.forecast)?;
                Ok(DailyScore {
                    date: d.target_date,
                    rmse: m.rmse,
                    mae: m.mae,
                    smape: m.smape,
                })
            })
            .collect::<Result<_>>()?;
        let m = period_metrics(&scores)?;
        by_day_type.push(DayTypeRow {
            day_type: label.to_string(),
            n_days: group.len(),
            rmse: m.rmse,
            mae: m.mae,
            smape: m.smape,
        });
    }
    Ok(ErrorDecomposition { by_hour, by_day_type })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn date(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    #[test]
    fn perfect_forecast_scores_zero() {
        let y = vec![100.0, 200.0, 300.0];
        let m = day_metrics(&y, &y).unwrap();
        assert_eq!((m.rmse, m.mae, m.smape), (0.0, 0.0, 0.0));
    }

    #[test]
    fn two_slot_example_matches_hand_computation() {
        let m = day_metrics(&[100.0, 300.0], &[110.0, 290.0]).unwrap();
        assert!((m.rmse - 10.0).abs() < 1e-12);
        assert!((m.mae - 10.0).abs() < 1e-12);
        let expected = (100.0 / 2.0) * (10.0 / 105.0 + 10.0 / 295.0);
        assert!((m.smape - expected).abs() < 1e-12);
        assert!((m.smape - 6.457).abs() < 1e-3);
    }

    #[test]
    fn matches_brute_force_on_random_days() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let y: Vec<f64> = (0..48).map(|_| rng.gen_range(50.0..500.0)).collect();
            let f: Vec<f64> = (0..48).map(|_| rng.gen_range(50.0..500.0)).collect();
            let m = day_metrics(&y, &f).unwrap();
            // Reference computed with reversed accumulation order.
            let h = 48.0;
            let mut sq = 0.0;
            let mut abs = 0.0;
            let mut pct = 0.0;
            for i in (0..48).rev() {
                sq += (y[i] - f[i]).powi(2);
                abs += (y[i] - f[i]).abs();
                pct += (y[i] - f[i]).abs() / ((y[i] + f[i]).abs() / 2.0);
            }
            assert!((m.rmse - (sq / h).sqrt()).abs() < 1e-9);
            assert!((m.mae - abs / h).abs() < 1e-9);
            assert!((m.smape - 100.0 / h * pct).abs() < 1e-9);
        }
    }

    #[test]
    fn rmse_dominates_mae() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let y: Vec<f64> = (0..48).map(|_| rng.gen_range(10.0..100.0)).collect();
            let f: Vec<f64> = (0..48).map(|_| rng.gen_range(10.0..100.0)).collect();
            let m = day_metrics(&y, &f).unwrap();
            assert!(m.rmse >= m.mae - 1e-12);
        }
    }

    #[test]
    fn percentage_error_is_bounded_by_200_for_positive_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let y: Vec<f64> = (0..8).map(|_| rng.gen_range(0.01..50.0)).collect();
            let f: Vec<f64> = (0..8).map(|_| rng.gen_range(0.01..50.0)).collect();
            let m = day_metrics(&y, &f).unwrap();
            assert!(m.smape <= 200.0 + 1e-9);
        }
    }

    #[test]
    fn zero_denominator_names_the_slot() {
        let err = day_metrics(&[5.0, 3.0], &[5.0, -3.0]).unwrap_err();
        assert!(err.to_string().contains("slot 1"), "{err}");
    }

    #[test]
    fn single_day_period_equals_that_day() {
        let scores = vec![DailyScore { date: date("2021-01-01"), rmse: 3.0, mae: 2.0, smape: 1.0 }];
        let m = period_metrics(&scores).unwrap();
        assert_eq!((m.rmse, m.mae, m.smape), (3.0, 2.0, 1.0));
    }

    #[test]
    fn period_metrics_ignore_day_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut scores: Vec<DailyScore> = (0..30)
            .map(|i| DailyScore {
                date: date("2021-01-01") + chrono::Duration::days(i),
                rmse: rng.gen_range(0.0..10.0),
                mae: rng.gen_range(0.0..10.0),
                smape: rng.gen_range(0.0..10.0),
            })
            .collect();
        let a = period_metrics(&scores).unwrap();
        scores.reverse();
        let b = period_metrics(&scores).unwrap();
        assert!((a.rmse - b.rmse).abs() < 1e-12);
        assert!((a.mae - b.mae).abs() < 1e-12);
        assert!((a.smape - b.smape).abs() < 1e-12);
    }

    fn noisy_losses(n: usize, extra: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        for _ in 0..n {
            let mut mse_a = 0.0;
            let mut mse_b = 0.0;
            for _ in 0..48 {
                let e: f64 = StandardNormal.sample(&mut rng);
                let shift: f64 = StandardNormal.sample(&mut rng);
                mse_a += e * e;
                let eb = e + extra * shift;
                mse_b += eb * eb;
            }
            a.push(mse_a / 48.0);
            b.push(mse_b / 48.0);
        }
        (a, b)
    }

    #[test]
    fn swapping_models_mirrors_the_p_value() {
        let (a, b) = noisy_losses(100, 0.3, 5);
        let opts = DmOptions::default();
        let ab = dm_test("A", "B", &a, &b, &opts).unwrap();
        let ba = dm_test("B", "A", &b, &a, &opts).unwrap();
        assert!((ab.statistic + ba.statistic).abs() < 1e-12);
        assert!((ab.p_value + ba.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_losses_are_degenerate() {
        let a = vec![1.0; 50];
        let err = dm_test("A", "B", &a, &a, &DmOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    #[test]
    fn noisier_model_loses_consistently() {
        let mut wins = 0;
        let trials = 50;
        for seed in 0..trials {
            let (a, b) = noisy_losses(100, 0.5, 100 + seed);
            let report = dm_test("A", "B", &a, &b, &DmOptions::default()).unwrap();
            if report.p_value < 0.05 {
                wins += 1;
            }
        }
        assert!(wins as f64 / trials as f64 >= 0.9, "significant in {wins}/{trials}");
    }

    #[test]
    fn null_p_values_are_roughly_uniform() {
        let mut ps = Vec::new();
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(7000 + seed);
            let losses = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (0..100)
                    .map(|_| {
                        (0..48)
                            .map(|_| {
                                let e: f64 = StandardNormal.sample(rng);
                                e * e
                            })
                            .sum::<f64>()
                            / 48.0
                    })
                    .collect()
            };
            let a = losses(&mut rng);
            let b = losses(&mut rng);
            ps.push(dm_test("A", "B", &a, &b, &DmOptions::default()).unwrap().p_value);
        }
        ps.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let n = ps.len() as f64;
        let ks = ps
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let lo = (p - i as f64 / n).abs();
                let hi = (p - (i + 1) as f64 / n).abs();
                lo.max(hi)
            })
            .fold(0.0, f64::max);
        assert!(ks <= 0.1, "KS distance {ks}");
    }

    #[test]
    fn small_sample_correction_moderates_significance() {
        let (a, b) = noisy_losses(30, 0.4, 9);
        let plain = dm_test("A", "B", &a, &b, &DmOptions::default()).unwrap();
        let corrected = dm_test(
            "A",
            "B",
            &a,
            &b,
            &DmOptions { small_sample_correction: true },
        )
        .unwrap();
        assert!(corrected.small_sample_corrected);
        assert!(!plain.small_sample_corrected);
        assert!(plain.statistic < 0.0);
        assert!(corrected.p_value > plain.p_value);
    }

    #[test]
    fn short_series_are_rejected() {
        let a = vec![1.0, 2.0, 3.0];
        let b = vec![2.0, 1.0, 3.5];
        assert!(dm_test("A", "B", &a, &b, &DmOptions::default()).is_err());
    }

    fn forecast_days(n: usize, seed: u64) -> Vec<ForecastDay> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let truth: Vec<f64> = (0..48).map(|_| rng.gen_range(100.0..500.0)).collect();
                let forecast: Vec<f64> =
                    truth.iter().map(|y| y + rng.gen_range(-20.0..20.0)).collect();
                ForecastDay {
                    target_date: date("2021-06-01") + chrono::Duration::days(i as i64),
                    truth,
                    forecast,
                }
            })
            .collect()
    }

    #[test]
    fn identical_forecasts_decompose_to_zero() {
        let days: Vec<ForecastDay> = forecast_days(10, 11)
            .into_iter()
            .map(|mut d| {
                d.forecast = d.truth.clone();
                d
            })
            .collect();
        let dec = error_decomposition(&days).unwrap();
        assert_eq!(dec.by_hour.len(), 24);
        for row in &dec.by_hour {
            assert_eq!((row.rmse, row.mae, row.smape), (0.0, 0.0, 0.0));
        }
        for row in &dec.by_day_type {
            assert_eq!((row.rmse, row.mae, row.smape), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn single_day_hour_rows_match_direct_computation() {
        let days = forecast_days(1, 13);
        let dec = error_decomposition(&days).unwrap();
        for (hour, row) in dec.by_hour.iter().enumerate() {
            let y = [days[0].truth[2 * hour], days[0].truth[2 * hour + 1]];
            let f = [days[0].forecast[2 * hour], days[0].forecast[2 * hour + 1]];
            let m = day_metrics(&y, &f).unwrap();
            assert!((row.rmse - m.rmse).abs() < 1e-12);
            assert!((row.mae - m.mae).abs() < 1e-12);
            assert!((row.smape - m.smape).abs() < 1e-12);
        }
    }

    #[test]
    fn day_type_partition_covers_every_day_once() {
        let days = forecast_days(14, 17);
        let dec = error_decomposition(&days).unwrap();
        let total: usize = dec.by_day_type.iter().map(|r| r.n_days).sum();
        assert_eq!(total, 14);
        let weekend_days = days
            .iter()
            .filter(|d| Calendar::is_weekend(d.target_date))
            .count();
        let weekend_row = dec.by_day_type.iter().find(|r| r.day_type == "weekend").unwrap();
        assert_eq!(weekend_row.n_days, weekend_days);
    }

    #[test]
    fn losses_are_daily_mean_squared_errors() {
        let days = forecast_days(3, 19);
        let losses = daily_mse_losses(&days);
        for (d, loss) in days.iter().zip(&losses) {
            let manual: f64 = d
                .truth
                .iter()
                .zip(&d.forecast)
                .map(|(y, f)| (y - f) * (y - f))
                .sum::<f64>()
                / 48.0;
            assert!((loss - manual).abs() < 1e-12);
        }
    }
}
