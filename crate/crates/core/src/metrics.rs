//! Segmentation, regression and benchmarking metrics.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::par_iter;
#[allow(unused_imports)]
use crate::par::prelude::*;
use crate::raster::{threshold, BinaryMask, Raster, MASK_NODATA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

fn ratio(num: f64, den: f64, name: &'static str) -> Result<f64> {
    if den == 0.0 {
        Err(Error::UndefinedMetric(name))
    } else {
        Ok(num / den)
    }
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn accuracy(&self) -> Result<f64> {
        ratio((self.tp + self.tn) as f64, self.total() as f64, "accuracy")
    }

    pub fn precision(&self) -> Result<f64> {
        ratio(self.tp as f64, (self.tp + self.fp) as f64, "precision")
    }

    pub fn recall(&self) -> Result<f64> {
        ratio(self.tp as f64, (self.tp + self.fn_) as f64, "recall")
    }

    pub fn specificity(&self) -> Result<f64> {
        ratio(self.tn as f64, (self.tn + self.fp) as f64, "specificity")
    }

    /// TP / (TP + FP + FN); 1 when there are no positives on either side.
    pub fn iou(&self) -> f64 {
        let den = self.tp + self.fp + self.fn_;
        if den == 0 {
            1.0
        } else {
            self.tp as f64 / den as f64
        }
    }

    /// F-beta from counts: (1+β²)TP / ((1+β²)TP + β²FN + FP).
    pub fn f_beta(&self, beta: f64, name: &'static str) -> Result<f64> {
        let b2 = beta * beta;
        let tp = self.tp as f64;
        ratio((1.0 + b2) * tp, (1.0 + b2) * tp + b2 * self.fn_ as f64 + self.fp as f64, name)
    }

    pub fn f1(&self) -> Result<f64> {
        self.f_beta(1.0, "f1")
    }

    pub fn f2(&self) -> Result<f64> {
        self.f_beta(2.0, "f2")
    }
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

/// Pixel confusion counts, skipping nodata in either mask.
pub fn confusion(pred: &BinaryMask, truth: &BinaryMask) -> Result<ConfusionCounts> {
    if pred.spec.width != truth.spec.width || pred.spec.height != truth.spec.height {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{}, truth {}x{}",
            pred.spec.width, pred.spec.height, truth.spec.width, truth.spec.height
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.values.iter().zip(&truth.values) {
        if p == MASK_NODATA || t == MASK_NODATA {
            continue;
        }
        match (p == 1, t == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub iou: f64,
    pub f1: f64,
    pub f2: f64,
}

pub fn seg_metrics(c: &ConfusionCounts) -> Result<SegMetrics> {
    Ok(SegMetrics {
        accuracy: c.accuracy()?,
        precision: c.precision()?,
        recall: c.recall()?,
        specificity: c.specificity()?,
        iou: c.iou(),
        f1: c.f1()?,
        f2: c.f2()?,
    })
}

impl SegMetrics {
    pub fn rows(&self) -> Vec<MetricRow> {
        [
            ("accuracy", self.accuracy),
            ("precision", self.precision),
            ("recall", self.recall),
            ("specificity", self.specificity),
            ("iou", self.iou),
            ("f1", self.f1),
            ("f2", self.f2),
        ]
        .into_iter()
        .map(|(m, v)| MetricRow::point(m, v))
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub thresholds: Vec<f64>,
    pub mean_iou: Vec<f64>,
    pub best_threshold: f64,
}

/// Thresholds `0.1, 0.2, …, 1.0`.
pub fn decile_thresholds() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

/// Mean IoU across pairs at each threshold; best is the argmax, ties to the
/// lowest threshold.
pub fn threshold_sweep(pairs: &[(Raster, BinaryMask)], thresholds: &[f64]) -> Result<SweepResult> {
    if pairs.is_empty() || thresholds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if thresholds.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config("sweep thresholds must be ascending".into()));
    }
    let per_pair: Vec<Vec<f64>> = par_iter!(pairs)
        .map(|(p, truth)| {
            thresholds
                .iter()
                .map(|&t| Ok(confusion(&threshold(p, t)?, truth)?.iou()))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_iou: Vec<f64> = (0..thresholds.len())
        .map(|k| {
            // Sorted summation keeps the mean independent of pair order.
            let mut col: Vec<f64> = per_pair.iter().map(|v| v[k]).collect();
            col.sort_by(f64::total_cmp);
            col.iter().sum::<f64>() / col.len() as f64
        })
        .collect();
    let mut best = 0;
    for (k, &m) in mean_iou.iter().enumerate() {
        if m > mean_iou[best] {
            best = k;
        }
    }
    Ok(SweepResult {
        best_threshold: thresholds[best],
        thresholds: thresholds.to_vec(),
        mean_iou,
    })
}

fn check_paired(pred: &[f64], actual: &[f64], min: usize) -> Result<()> {
    if pred.len() != actual.len() {
        return Err(Error::LengthMismatch(pred.len(), actual.len()));
    }
    if pred.len() < min {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Coefficient of determination `1 − SS_res / SS_tot`.
pub fn r2(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check_paired(pred, actual, 2)?;
    let m = mean(actual);
    let ss_tot: f64 = actual.iter().map(|a| (a - m).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedMetric("r2"));
    }
    let ss_res: f64 = pred.iter().zip(actual).map(|(p, a)| (a - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check_paired(pred, actual, 1)?;
    Ok((pred.iter().zip(actual).map(|(p, a)| (p - a).powi(2)).sum::<f64>() / pred.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

/// RMSE with a percentile-bootstrap confidence interval over paired
/// residuals.
pub fn rmse_with_ci(pred: &[f64], actual: &[f64], level: f64, resamples: usize, seed: u64) -> Result<Interval> {
    check_paired(pred, actual, 2)?;
    if !(0.0 < level && level < 1.0) || resamples == 0 {
        return Err(Error::Config(format!("bootstrap level {level}, resamples {resamples}")));
    }
    let sq: Vec<f64> = pred.iter().zip(actual).map(|(p, a)| (p - a).powi(2)).collect();
    let value = (mean(&sq)).sqrt();
    let n = sq.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stats: Vec<f64> = (0..resamples)
        .map(|_| ((0..n).map(|_| sq[rng.gen_range(0..n)]).sum::<f64>() / n as f64).sqrt())
        .collect();
    let a = (1.0 - level) / 2.0;
    let q = quantiles(&stats, &[a, 1.0 - a])?;
    Ok(Interval { value, lo: q[0], hi: q[1] })
}

/// Sample Pearson correlation.
pub fn pearson(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check_paired(pred, actual, 2)?;
    let (mp, ma) = (mean(pred), mean(actual));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, a) in pred.iter().zip(actual) {
        let (dp, da) = (p - mp, a - ma);
        sxy += dp * da;
        sxx += dp * dp;
        syy += da * da;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedMetric("pearson"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Fraction of predictions within `band` of the actual value, optionally
/// restricted to cases whose actual value lies in `actual_range`
/// (inclusive). An empty cohort yields `None`.
pub fn band_accuracy(pred: &[f64], actual: &[f64], band: f64, actual_range: Option<(f64, f64)>) -> Result<Option<f64>> {
    check_paired(pred, actual, 1)?;
    if !(band >= 0.0) {
        return Err(Error::Config(format!("band {band} must be non-negative")));
    }
    let (mut hit, mut n) = (0usize, 0usize);
    for (p, a) in pred.iter().zip(actual) {
        if let Some((lo, hi)) = actual_range {
            if *a < lo || *a > hi {
                continue;
            }
        }
        n += 1;
        if (p - a).abs() <= band {
            hit += 1;
        }
    }
    Ok((n > 0).then(|| hit as f64 / n as f64))
}

/// `(predicted − reference) / reference × 100`.
pub fn percent_difference(predicted: f64, reference: f64) -> Result<f64> {
    if !(reference > 0.0) {
        return Err(Error::InvalidReference(reference));
    }
    Ok((predicted - reference) / reference * 100.0)
}

/// Linear-interpolation quantiles between order statistics
/// (position `q · (n − 1)`).
pub fn quantiles(values: &[f64], qs: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    qs.iter()
        .map(|&q| {
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::Config(format!("quantile {q} outside [0, 1]")));
            }
            let pos = q * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(v.len() - 1);
            let frac = pos - lo as f64;
            Ok(v[lo] + (v[hi] - v[lo]) * frac)
        })
        .collect()
}

/// Median and interquartile bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub max: f64,
}

pub fn spread(values: &[f64]) -> Result<Spread> {
    let q = quantiles(values, &[0.5, 0.25, 0.75, 1.0])?;
    Ok(Spread {
        median: q[0],
        q1: q[1],
        q3: q[2],
        max: q[3],
    })
}

/// One line of a metric report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub value: f64,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

impl MetricRow {
    pub fn point(metric: impl Into<String>, value: f64) -> Self {
        MetricRow {
            metric: metric.into(),
            value,
            lo: None,
            hi: None,
        }
    }

    pub fn interval(metric: impl Into<String>, i: Interval) -> Self {
        MetricRow {
            metric: metric.into(),
            value: i.value,
            lo: Some(i.lo),
            hi: Some(i.hi),
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV with columns `metric,value,lo,hi`.
pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from("metric,value,lo,hi\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.metric, r.value, opt(r.lo), opt(r.hi));
    }
    s
}

/// Flat `key = value` text.
pub fn metrics_text(rows: &[MetricRow]) -> String {
    let mut s = String::new();
    for r in rows {
        let _ = match (r.lo, r.hi) {
            (Some(lo), Some(hi)) => writeln!(s, "{} = {:.6} [{:.6}, {:.6}]", r.metric, r.value, lo, hi),
            _ => writeln!(s, "{} = {:.6}", r.metric, r.value),
        };
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;
    use crate::raster::{Grid, GridSpec};

    fn counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> ConfusionCounts {
        ConfusionCounts { tp, fp, fn_, tn }
    }

    fn spec(n: usize) -> GridSpec {
        GridSpec {
            width: n,
            height: 1,
            origin: Point::new(0.0, 0.0),
            pixel_size: 1.0,
        }
    }

    #[test]
    fn confusion_cases() {
        let truth: Vec<u8> = (0..100).map(|i| u8::from(i < 10)).collect();
        let t = Grid::new(spec(100), truth.clone()).unwrap();
        assert_eq!(confusion(&t, &t).unwrap(), counts(10, 0, 0, 90));
        let zeros = Grid::new(spec(100), vec![0u8; 100]).unwrap();
        assert_eq!(confusion(&zeros, &t).unwrap().fn_, 10);
        let short = Grid::new(spec(5), vec![0u8; 5]).unwrap();
        assert!(matches!(confusion(&short, &t), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn count_difference_fixture() {
        let c = counts(37_400_000, 9_960_000, 1_590_000, 3_330_000_000);
        let m = seg_metrics(&c).unwrap();
        assert!((m.f2 - 0.920).abs() < 0.002, "f2 {}", m.f2);
        assert!((m.iou - 0.764).abs() < 0.002, "iou {}", m.iou);
        assert!((m.precision - 0.7897).abs() < 1e-4);
        assert!((m.recall - 0.9592).abs() < 1e-4);
    }

    #[test]
    fn perfect_and_undefined() {
        let m = seg_metrics(&counts(5, 0, 0, 5)).unwrap();
        for v in [m.accuracy, m.precision, m.recall, m.specificity, m.iou, m.f1, m.f2] {
            assert_eq!(v, 1.0);
        }
        assert!(matches!(
            seg_metrics(&counts(0, 0, 3, 7)),
            Err(Error::UndefinedMetric("precision"))
        ));
        assert_eq!(counts(0, 0, 0, 9).iou(), 1.0);
    }

    #[test]
    fn sweep_identity_and_inverse() {
        let truth = Grid::new(spec(6), vec![1u8, 1, 0, 0, 1, 0]).unwrap();
        let probs = Grid::new(spec(6), truth.values.iter().map(|&v| v as f32).collect()).unwrap();
        let s = threshold_sweep(&[(probs, truth.clone())], &decile_thresholds()).unwrap();
        assert!(s.mean_iou.iter().all(|&v| v == 1.0));
        assert_eq!(s.best_threshold, 0.1);

        let inv = Grid::new(spec(6), truth.values.iter().map(|&v| 1.0 - v as f32).collect()).unwrap();
        let s = threshold_sweep(&[(inv, truth)], &decile_thresholds()).unwrap();
        assert!(s.mean_iou.iter().all(|&v| v == 0.0));
        assert!(matches!(threshold_sweep(&[], &[0.5]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn r2_cases() {
        let a = [1.0, 2.0, 4.0, 7.0, 11.0];
        assert_eq!(r2(&a, &a).unwrap(), 1.0);
        let m = [5.0; 5];
        assert!(r2(&m, &a).unwrap().abs() < 1e-12);
        // Hand case: SS_tot = 66, SS_res = 0.25+0+1+0.25+4 = 5.5.
        let p = [1.5, 2.0, 3.0, 7.5, 9.0];
        assert!((r2(&p, &a).unwrap() - (1.0 - 5.5 / 66.0)).abs() < 1e-12);
        assert!(matches!(r2(&a, &m), Err(Error::UndefinedMetric("r2"))));
    }

    #[test]
    fn rmse_ci_cases() {
        let a = [1.0, 5.0, 9.0, 2.0];
        let ci = rmse_with_ci(&a, &a, 0.95, 1000, 1).unwrap();
        assert_eq!((ci.value, ci.lo, ci.hi), (0.0, 0.0, 0.0));
        let off: Vec<f64> = a.iter().map(|v| v + 3.0).collect();
        let ci = rmse_with_ci(&off, &a, 0.95, 1000, 1).unwrap();
        assert!((ci.value - 3.0).abs() < 1e-12 && (ci.lo - 3.0).abs() < 1e-12 && (ci.hi - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rmse_ci_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a: Vec<f64> = (0..200).map(|_| rng.gen_range(0.0..100.0)).collect();
        let p: Vec<f64> = a.iter().map(|v| v + rng.gen_range(-10.0..10.0)).collect();
        let direct = (p.iter().zip(&a).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / 200.0).sqrt();
        let c1 = rmse_with_ci(&p, &a, 0.95, 500, 42).unwrap();
        let c2 = rmse_with_ci(&p, &a, 0.95, 500, 42).unwrap();
        assert_eq!(c1, c2);
        assert!((c1.value - direct).abs() < 1e-12);
        assert!(c1.lo < c1.value && c1.value < c1.hi);
    }

    #[test]
    fn pearson_cases() {
        let a = [1.0, 2.0, 3.5, 8.0];
        let lin: Vec<f64> = a.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson(&lin, &a).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((pearson(&neg, &a).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(pearson(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn band_cases() {
        let a = [1000.0, 2000.0];
        assert_eq!(band_accuracy(&a, &a, 0.0, None).unwrap(), Some(1.0));
        let p = [1100.0, 2600.0];
        assert_eq!(band_accuracy(&p, &a, 500.0, None).unwrap(), Some(0.5));
        assert_eq!(band_accuracy(&p, &a, 500.0, Some((1000.0, 1500.0))).unwrap(), Some(1.0));
        assert_eq!(band_accuracy(&p, &a, 500.0, Some((5000.0, 6000.0))).unwrap(), None);
    }

    #[test]
    fn percent_difference_cases() {
        let d = percent_difference(27.4e6, 24.6e6).unwrap();
        assert_eq!(d.round(), 11.0);
        assert_eq!(percent_difference(5.0, 5.0).unwrap(), 0.0);
        assert_eq!(percent_difference(10.0, 5.0).unwrap(), 100.0);
        assert!(matches!(percent_difference(1.0, 0.0), Err(Error::InvalidReference(_))));
    }

    #[test]
    fn quantile_cases() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(quantiles(&v, &[0.5]).unwrap(), vec![50.5]);
        assert_eq!(quantiles(&[7.0], &[0.0, 0.3, 1.0]).unwrap(), vec![7.0; 3]);
        assert!(matches!(quantiles(&[], &[0.5]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn quantiles_match_sort_and_interpolate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let n = rng.gen_range(1..50);
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-100.0..100.0)).collect();
            let q: f64 = rng.gen_range(0.0..=1.0);
            let mut s = v.clone();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let h = (n - 1) as f64 * q;
            let want = s[h.floor() as usize] + (h - h.floor()) * (s[h.ceil() as usize] - s[h.floor() as usize]);
            assert!((quantiles(&v, &[q]).unwrap()[0] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn report_formats() {
        let rows = vec![
            MetricRow::point("r2", 0.5),
            MetricRow::interval("rmse", Interval { value: 2.0, lo: 1.0, hi: 3.0 }),
        ];
        assert_eq!(metrics_csv(&rows), "metric,value,lo,hi\nr2,0.5,,\nrmse,2,1,3\n");
        assert!(metrics_text(&rows).contains("rmse = 2.000000 [1.000000, 3.000000]"));
    }
}
