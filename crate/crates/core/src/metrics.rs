//! Per-trial metric series, time-to-accuracy, rate fits and cross-trial
//! aggregates.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{AreaError, Result};

/// One snapshot of the global model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub wall_time: f64,
    pub k: u64,
    /// `+∞` once the trial has diverged.
    pub train_loss: f64,
    /// NaN when the problem has no test set.
    pub test_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsSeries {
    rows: Vec<MetricsRow>,
}

impl MetricsSeries {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a row. Rows must arrive in nondecreasing wall time.
    pub fn push(&mut self, row: MetricsRow) {
        if let Some(last) = self.rows.last() {
            debug_assert!(row.wall_time >= last.wall_time, "metrics rows out of order");
            if last.k == row.k && last.wall_time == row.wall_time {
                // Same snapshot reached through two triggers.
                *self.rows.last_mut().expect("nonempty") = row;
                return;
            }
        }
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }

    /// Last row with `wall_time <= t`.
    pub fn at_time(&self, t: f64) -> Option<&MetricsRow> {
        self.rows.iter().take_while(|r| r.wall_time <= t).last()
    }
}

/// Writes `trial,wall_time,k,train_loss,test_acc` rows for several trials.
pub fn write_metrics_csv<'a, W, I>(out: W, trials: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = (usize, &'a MetricsSeries)>,
{
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["trial", "wall_time", "k", "train_loss", "test_acc"])?;
    for (trial, series) in trials {
        for r in series.rows() {
            w.write_record([
                trial.to_string(),
                r.wall_time.to_string(),
                r.k.to_string(),
                r.train_loss.to_string(),
                r.test_acc.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| AreaError::io("<metrics>", e))?;
    Ok(())
}

/// Fraction of the horizon needed to reach a target accuracy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Rho {
    Reached(f64),
    /// The target was not met within the horizon.
    NotReached,
}

impl Rho {
    pub fn value(&self) -> Option<f64> {
        match self {
            Rho::Reached(v) => Some(*v),
            Rho::NotReached => None,
        }
    }
}

impl fmt::Display for Rho {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rho::Reached(v) => write!(f, "{v}"),
            Rho::NotReached => f.write_str(">1"),
        }
    }
}

impl Serialize for Rho {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Rho::Reached(v) => s.serialize_f64(*v),
            Rho::NotReached => s.serialize_str(">1"),
        }
    }
}

/// `t_target / t_h`, using the first row at or after which the test accuracy
/// reaches `target`.
pub fn compute_rho(series: &MetricsSeries, target: f64, horizon: f64) -> Rho {
    series
        .rows()
        .iter()
        .take_while(|r| r.wall_time <= horizon)
        .find(|r| r.test_acc >= target)
        .map_or(Rho::NotReached, |r| Rho::Reached(r.wall_time / horizon))
}

/// Least-squares slope of `ln e` against `ln k` over points with
/// `lo <= k <= hi`. Points with nonpositive or nonfinite `e` are dropped.
pub fn rate_fit(points: &[(f64, f64)], lo: f64, hi: f64) -> Result<f64> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut dropped = 0usize;
    for &(k, e) in points {
        if k < lo || k > hi || k <= 0.0 {
            continue;
        }
        if e > 0.0 && e.is_finite() {
            xs.push(k.ln());
            ys.push(e.ln());
        } else {
            dropped += 1;
        }
    }
    if dropped > 0 {
        log::warn!("rate fit: dropped {dropped} nonpositive samples");
    }
    if xs.len() < 2 {
        return Err(AreaError::DegenerateFit);
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(AreaError::DegenerateFit);
    }
    let span = (xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - xs.iter().cloned().fold(f64::INFINITY, f64::min))
        / std::f64::consts::LN_10;
    if span < 2.0 {
        log::debug!("rate fit window spans {span:.2} decades");
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// Mean, minimum and maximum of a set of values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Spread {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        if values.iter().any(|v| v.is_nan()) {
            return Some(Self {
                mean: f64::NAN,
                min: f64::NAN,
                max: f64::NAN,
            });
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        // Guard against rounding pushing the mean just outside the range.
        Some(Self {
            mean: mean.clamp(min, max),
            min,
            max,
        })
    }
}

/// Cross-trial summary at the horizon.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub loss: Spread,
    pub acc: Spread,
    /// ρ of the mean accuracy curve is not defined, so this is the ρ of each
    /// trial, reported as the worst (largest) one.
    pub rho: Rho,
}

/// Aggregates every series at its last row not after `horizon`.
pub fn summarize(series: &[&MetricsSeries], horizon: f64, target: f64) -> Option<Summary> {
    let rows: Vec<&MetricsRow> = series.iter().filter_map(|s| s.at_time(horizon)).collect();
    if rows.is_empty() {
        return None;
    }
    let loss = Spread::of(&rows.iter().map(|r| r.train_loss).collect::<Vec<_>>())?;
    let acc = Spread::of(&rows.iter().map(|r| r.test_acc).collect::<Vec<_>>())?;
    let mut rho = Rho::Reached(0.0);
    for s in series {
        rho = match (rho, compute_rho(s, target, horizon)) {
            (Rho::Reached(a), Rho::Reached(b)) => Rho::Reached(a.max(b)),
            _ => Rho::NotReached,
        };
    }
    Some(Summary { loss, acc, rho })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(points: &[(f64, f64)]) -> MetricsSeries {
        let mut s = MetricsSeries::new();
        for (k, &(t, acc)) in points.iter().enumerate() {
            s.push(MetricsRow {
                wall_time: t,
                k: k as u64,
                train_loss: 1.0 / (1.0 + t),
                test_acc: acc,
            });
        }
        s
    }

    #[test]
    fn rho_examples() {
        let s = series(&[(0.0, 0.1), (3.0, 0.5), (6.0, 0.81), (9.0, 0.9)]);
        assert_eq!(compute_rho(&s, 0.8, 15.0), Rho::Reached(0.4));
        let never = series(&[(0.0, 0.1), (15.0, 0.79)]);
        assert_eq!(compute_rho(&never, 0.8, 15.0), Rho::NotReached);
        assert_eq!(compute_rho(&never, 0.8, 15.0).to_string(), ">1");
        let start = series(&[(0.0, 0.8)]);
        assert_eq!(compute_rho(&start, 0.8, 15.0), Rho::Reached(0.0));
        let late = series(&[(0.0, 0.1), (16.0, 0.95)]);
        assert_eq!(compute_rho(&late, 0.8, 15.0), Rho::NotReached);
    }

    #[test]
    fn rate_fit_exact_powers() {
        let inv: Vec<(f64, f64)> = (1..=50).map(|j| {
            let k = 10f64.powf(j as f64 / 10.0);
            (k, 7.0 / k)
        }).collect();
        assert!((rate_fit(&inv, 0.0, f64::INFINITY).unwrap() + 1.0).abs() < 1e-9);
        let sqrt: Vec<(f64, f64)> = inv.iter().map(|&(k, _)| (k, 3.0 / k.sqrt())).collect();
        assert!((rate_fit(&sqrt, 0.0, f64::INFINITY).unwrap() + 0.5).abs() < 1e-9);
        let flat: Vec<(f64, f64)> = inv.iter().map(|&(k, _)| (k, 2.5)).collect();
        assert!(rate_fit(&flat, 0.0, f64::INFINITY).unwrap().abs() < 1e-12);
    }

    #[test]
    fn rate_fit_window_and_bad_points() {
        let mut pts: Vec<(f64, f64)> = (1..=100).map(|k| (k as f64 * 100.0, 1.0 / (k as f64 * 100.0))).collect();
        pts.push((500.0, 0.0));
        pts.push((600.0, -1.0));
        pts.push((1e6, 1e3));
        let slope = rate_fit(&pts, 100.0, 1e4).unwrap();
        assert!((slope + 1.0).abs() < 1e-9);
        assert!(matches!(rate_fit(&[(1.0, 1.0)], 0.0, 10.0), Err(AreaError::DegenerateFit)));
        assert!(matches!(rate_fit(&[(1.0, 1.0), (1.0, 2.0)], 0.0, 10.0), Err(AreaError::DegenerateFit)));
    }

    #[test]
    fn single_trial_summary_is_the_trial() {
        let s = series(&[(0.0, 0.1), (5.0, 0.85), (20.0, 0.9)]);
        let sum = summarize(&[&s], 15.0, 0.8).unwrap();
        assert_eq!(sum.acc, Spread { mean: 0.85, min: 0.85, max: 0.85 });
        assert_eq!(sum.loss.mean, 1.0 / 6.0);
        assert_eq!(sum.rho, Rho::Reached(5.0 / 15.0));
    }

    #[test]
    fn diverged_trial_keeps_order() {
        let ok = series(&[(0.0, 0.1), (1.0, 0.5)]);
        let mut bad = MetricsSeries::new();
        bad.push(MetricsRow { wall_time: 0.0, k: 0, train_loss: 2.0, test_acc: 0.1 });
        bad.push(MetricsRow { wall_time: 0.5, k: 3, train_loss: f64::INFINITY, test_acc: 0.0 });
        let sum = summarize(&[&ok, &bad], 1.0, 0.8).unwrap();
        assert_eq!(sum.loss.max, f64::INFINITY);
        assert_eq!(sum.loss.mean, f64::INFINITY);
        assert!(sum.loss.min <= sum.loss.mean);
        assert_eq!(sum.rho, Rho::NotReached);
    }

    #[test]
    fn csv_layout() {
        let s = series(&[(0.0, 0.25)]);
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, [(0, &s)]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "trial,wall_time,k,train_loss,test_acc\n0,0,0,1,0.25\n");
    }

    proptest! {
        #[test]
        fn spread_is_ordered(values in prop::collection::vec(-1e6f64..1e6, 1..50)) {
            let s = Spread::of(&values).unwrap();
            prop_assert!(s.min <= s.mean && s.mean <= s.max);
        }
    }

    #[test]
    fn spread_with_missing_values() {
        let s = Spread::of(&[1.0, f64::NAN]).unwrap();
        assert!(s.mean.is_nan() && s.min.is_nan() && s.max.is_nan());
        let s = Spread::of(&[1.0, f64::INFINITY]).unwrap();
        assert_eq!((s.mean, s.min, s.max), (f64::INFINITY, 1.0, f64::INFINITY));
    }
}
