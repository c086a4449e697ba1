//! Forecast accuracy metrics: MAE, RMSE, SMAPE (percent) and R².

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Paired actual and predicted values, equal length, finite.
#[derive(Clone, Copy, Debug)]
pub struct PredictionSet<'a> {
    y: &'a [f64],
    y_hat: &'a [f64],
}

impl<'a> PredictionSet<'a> {
    pub fn new(y: &'a [f64], y_hat: &'a [f64]) -> Result<Self> {
        if y.len() != y_hat.len() {
            return Err(Error::dim("PredictionSet", &[y.len()], &[y_hat.len()]));
        }
        if y.is_empty() {
            return Err(Error::Parameter("prediction set is empty".into()));
        }
        if !y.iter().chain(y_hat).all(|v| v.is_finite()) {
            return Err(Error::Parameter(
                "prediction set contains non-finite values".into(),
            ));
        }
        Ok(PredictionSet { y, y_hat })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + 'a {
        self.y.iter().copied().zip(self.y_hat.iter().copied())
    }
}

pub fn mae(ps: &PredictionSet) -> f64 {
    ps.pairs().map(|(y, p)| (y - p).abs()).sum::<f64>() / ps.len() as f64
}

pub fn rmse(ps: &PredictionSet) -> f64 {
    (ps.pairs().map(|(y, p)| (y - p) * (y - p)).sum::<f64>() / ps.len() as f64).sqrt()
}

/// Symmetric MAPE in percent, range `[0, 200]`. A term with `|y| + |ŷ| = 0` counts as zero.
pub fn smape(ps: &PredictionSet) -> f64 {
    let total: f64 = ps
        .pairs()
        .map(|(y, p)| {
            let denom = y.abs() + p.abs();
            if denom == 0.0 {
                0.0
            } else {
                2.0 * (y - p).abs() / denom
            }
        })
        .sum();
    100.0 * total / ps.len() as f64
}

pub fn r_squared(ps: &PredictionSet) -> Result<f64> {
    let n = ps.len() as f64;
    let mean = ps.y.iter().sum::<f64>() / n;
    let ss_tot: f64 = ps.y.iter().map(|y| (y - mean) * (y - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedMetric(
            "R² is undefined for constant actual values".into(),
        ));
    }
    let ss_res: f64 = ps.pairs().map(|(y, p)| (y - p) * (y - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse: f64,
    pub mae: f64,
    #[serde(rename = "smape_percent")]
    pub smape: f64,
    pub r2: f64,
    pub n: usize,
}

pub fn report(ps: &PredictionSet) -> Result<MetricsReport> {
    Ok(MetricsReport {
        rmse: rmse(ps),
        mae: mae(ps),
        smape: smape(ps),
        r2: r_squared(ps)?,
        n: ps.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ps<'a>(y: &'a [f64], p: &'a [f64]) -> PredictionSet<'a> {
        PredictionSet::new(y, p).unwrap()
    }

    #[test]
    fn worked_examples() {
        assert_eq!(mae(&ps(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0])), 0.0);
        assert!((mae(&ps(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0])) - 2.0 / 3.0).abs() < 1e-15);
        assert!((rmse(&ps(&[0.0, 0.0], &[3.0, 4.0])) - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(smape(&ps(&[1.0], &[3.0])), 100.0);
        assert_eq!(smape(&ps(&[0.0], &[0.0])), 0.0);
        assert_eq!(smape(&ps(&[2.0, -1.0], &[2.0, -1.0])), 0.0);
        assert_eq!(
            r_squared(&ps(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0])).unwrap(),
            0.5
        );
        assert_eq!(
            r_squared(&ps(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0])).unwrap(),
            0.0
        );
        assert!(r_squared(&ps(&[4.0, 4.0], &[1.0, 2.0])).is_err());
    }

    #[test]
    fn perfect_report() {
        let y = [1.0, 5.0, -2.0];
        let r = report(&ps(&y, &y)).unwrap();
        assert_eq!((r.rmse, r.mae, r.smape, r.r2, r.n), (0.0, 0.0, 0.0, 1.0, 3));
    }

    #[test]
    fn report_json_field_names() {
        let y = [1.0, 2.0];
        let json = serde_json::to_string(&report(&ps(&y, &[1.0, 3.0])).unwrap()).unwrap();
        for key in ["rmse", "mae", "smape_percent", "r2", "n"] {
            assert!(json.contains(&format!("\"{key}\"")), "{json}");
        }
    }

    #[test]
    fn invalid_sets_rejected() {
        assert!(PredictionSet::new(&[1.0], &[1.0, 2.0]).is_err());
        assert!(PredictionSet::new(&[], &[]).is_err());
        assert!(PredictionSet::new(&[f64::NAN], &[1.0]).is_err());
    }

    fn pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..40).prop_flat_map(|n| {
            (
                prop::collection::vec(-1e3..1e3f64, n),
                prop::collection::vec(-1e3..1e3f64, n),
            )
        })
    }

    proptest! {
        #[test]
        fn rmse_dominates_mae((y, p) in pairs()) {
            let s = ps(&y, &p);
            prop_assert!(rmse(&s) >= mae(&s) * (1.0 - 1e-12));
        }

        #[test]
        fn smape_bounded((y, p) in pairs()) {
            let v = smape(&ps(&y, &p));
            prop_assert!((0.0..=200.0 + 1e-9).contains(&v));
        }

        #[test]
        fn translation_and_scale((y, p) in pairs(), c in -50.0..50.0f64, s in 0.1..10.0f64) {
            let base = ps(&y, &p);
            let ys: Vec<f64> = y.iter().map(|v| v + c).collect();
            let pz: Vec<f64> = p.iter().map(|v| v + c).collect();
            let shifted = ps(&ys, &pz);
            prop_assert!((mae(&shifted) - mae(&base)).abs() < 1e-9);
            prop_assert!((rmse(&shifted) - rmse(&base)).abs() < 1e-9);

            let ys: Vec<f64> = y.iter().map(|v| v * s).collect();
            let pz: Vec<f64> = p.iter().map(|v| v * s).collect();
            let scaled = ps(&ys, &pz);
            prop_assert!((mae(&scaled) - s * mae(&base)).abs() < 1e-9 * (1.0 + mae(&base) * s));
            prop_assert!((smape(&scaled) - smape(&base)).abs() < 1e-9);
        }

        #[test]
        fn r2_affine_invariant((y, p) in pairs(), a in -5.0..5.0f64, s in 0.1..10.0f64) {
            let base = ps(&y, &p);
            prop_assume!(r_squared(&base).is_ok());
            let ys: Vec<f64> = y.iter().map(|v| a + s * v).collect();
            let pz: Vec<f64> = p.iter().map(|v| a + s * v).collect();
            let r0 = r_squared(&base).unwrap();
            let r1 = r_squared(&ps(&ys, &pz)).unwrap();
            prop_assert!((r0 - r1).abs() < 1e-8 * (1.0 + r0.abs()));
        }
    }
}
