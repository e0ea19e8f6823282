//! ROC analysis of score sets (higher score means "positive").

use crate::error::{Error, Result};

pub const MIN_SAMPLES_PER_CLASS: usize = 10;
pub const DEFAULT_PARTIAL_FPR: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    /// Samples scoring `>= threshold` are called positive.
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocReport {
    /// Ordered by decreasing threshold; starts at (0, 0) and ends at (1, 1).
    pub points: Vec<RocPoint>,
    pub auc: f64,
    /// `(bound, area under the curve for fpr <= bound)`, not rescaled.
    pub partial_auc: (f64, f64),
}

/// Sweeps the threshold over every observed score.
pub fn roc(positives: &[f64], negatives: &[f64], partial_bound: f64) -> Result<RocReport> {
    for (name, s) in [("positive", positives), ("negative", negatives)] {
        if s.len() < MIN_SAMPLES_PER_CLASS {
            return Err(Error::Data(format!(
                "{} {name} samples; at least {MIN_SAMPLES_PER_CLASS} are needed",
                s.len()
            )));
        }
        if s.iter().any(|v| v.is_nan()) {
            return Err(Error::Data(format!("NaN among the {name} scores")));
        }
    }
    if !(0.0..=1.0).contains(&partial_bound) {
        return Err(Error::Parameter(format!("partial FPR bound {partial_bound} outside [0, 1]")));
    }
    let mut all: Vec<(f64, bool)> = positives
        .iter()
        .map(|&v| (v, true))
        .chain(negatives.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (np, nn) = (positives.len() as f64, negatives.len() as f64);
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        tpr: 0.0,
        fpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        while i < all.len() && all[i].0 == t {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: t,
            tpr: tp as f64 / np,
            fpr: fp as f64 / nn,
        });
    }
    let auc = area(&points, 1.0);
    Ok(RocReport {
        auc,
        partial_auc: (partial_bound, area(&points, partial_bound)),
        points,
    })
}

/// Trapezoidal area for `fpr` in `[0, bound]`.
fn area(points: &[RocPoint], bound: f64) -> f64 {
    let mut a = 0.0;
    for w in points.windows(2) {
        let (x0, y0, x1, y1) = (w[0].fpr, w[0].tpr, w[1].fpr, w[1].tpr);
        if x0 >= bound {
            break;
        }
        if x1 <= bound {
            a += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            let yb = y0 + (y1 - y0) * (bound - x0) / (x1 - x0);
            a += (bound - x0) * (y0 + yb) / 2.0;
        }
    }
    a.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::gaussian_field;

    #[test]
    fn separated_scores_give_unit_auc() {
        let pos: Vec<f64> = (0..20).map(|i| 100.0 + i as f64).collect();
        let neg: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let r = roc(&pos, &neg, 0.05).unwrap();
        assert_eq!(r.auc, 1.0);
        assert!((r.partial_auc.1 - 0.05).abs() < 1e-12);
        for w in r.points.windows(2) {
            assert!(w[1].threshold < w[0].threshold);
            assert!(w[1].tpr >= w[0].tpr && w[1].fpr >= w[0].fpr);
        }
    }

    #[test]
    fn identical_distributions_are_near_chance() {
        let s = gaussian_field(9, 1, 4000);
        let (a, b) = s.as_slice().split_at(2000);
        let r = roc(a, b, 0.05).unwrap();
        assert!((r.auc - 0.5).abs() < 0.05, "{}", r.auc);
        let tied = roc(&[1.0; 10], &[1.0; 10], 0.05).unwrap();
        assert!((tied.auc - 0.5).abs() < 1e-12);
    }

    #[test]
    fn small_classes_are_refused() {
        assert!(matches!(roc(&[1.0; 9], &[0.0; 30], 0.05), Err(Error::Data(_))));
    }
}
