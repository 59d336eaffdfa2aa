//! Error metrics for NED wind series.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-component RMSE, relative error and overall vector RMSE.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentMetrics {
    pub rmse: [f64; 3],
    /// RMS of the error-vector magnitude.
    pub overall: f64,
    /// Percent; `None` where the truth has zero mean magnitude.
    pub relative_error: [Option<f64>; 3],
    pub samples: usize,
}

impl ComponentMetrics {
    /// RMS of the horizontal error-vector magnitude.
    pub fn horizontal_rmse(&self) -> f64 {
        (self.rmse[0].powi(2) + self.rmse[1].powi(2)).sqrt()
    }
}

fn check_lengths(pred: &[[f64; 3]], truth: &[[f64; 3]]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Domain(format!(
            "prediction has {} samples but truth has {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Domain("metrics need at least one sample".into()));
    }
    Ok(())
}

/// Component RMSEs and the overall vector RMSE.
pub fn rmse(pred: &[[f64; 3]], truth: &[[f64; 3]]) -> Result<([f64; 3], f64)> {
    check_lengths(pred, truth)?;
    let n = pred.len() as f64;
    let mut sq = [0.0; 3];
    for (p, t) in pred.iter().zip(truth) {
        for c in 0..3 {
            sq[c] += (p[c] - t[c]).powi(2);
        }
    }
    let per = sq.map(|s| (s / n).sqrt());
    let overall = (sq.iter().sum::<f64>() / n).sqrt();
    Ok((per, overall))
}

/// Mean absolute error over mean absolute truth, in percent.
pub fn relative_error(pred: &[[f64; 3]], truth: &[[f64; 3]]) -> Result<[Option<f64>; 3]> {
    check_lengths(pred, truth)?;
    Ok(std::array::from_fn(|c| {
        let err: f64 = pred.iter().zip(truth).map(|(p, t)| (p[c] - t[c]).abs()).sum();
        let mag: f64 = truth.iter().map(|t| t[c].abs()).sum();
        (mag > 0.0).then(|| 100.0 * err / mag)
    }))
}

pub fn evaluate(pred: &[[f64; 3]], truth: &[[f64; 3]]) -> Result<ComponentMetrics> {
    let (rmse, overall) = rmse(pred, truth)?;
    Ok(ComponentMetrics {
        rmse,
        overall,
        relative_error: relative_error(pred, truth)?,
        samples: pred.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_cases() {
        let truth = vec![[1.0, 2.0, 3.0]; 3];
        let (r, o) = rmse(&truth, &truth).unwrap();
        assert_eq!((r, o), ([0.0; 3], 0.0));

        let shifted: Vec<_> = truth.iter().map(|t| [t[0] + 1.0, t[1], t[2]]).collect();
        let (r, o) = rmse(&shifted, &truth).unwrap();
        assert_eq!(r, [1.0, 0.0, 0.0]);
        assert_eq!(o, 1.0);

        let zero = vec![[0.0; 3]; 3];
        let errs = vec![[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]];
        let (r, _) = rmse(&errs, &zero).unwrap();
        assert!((r[0] - (14.0f64 / 3.0).sqrt()).abs() < 1e-12);

        assert!(rmse(&errs[..2], &zero).is_err());
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn relative_error_cases() {
        let truth = vec![[2.0, 1.0, 0.0], [4.0, 3.0, 0.0]];
        let pred: Vec<_> = truth.iter().map(|t| t.map(|v| 1.1 * v)).collect();
        let re = relative_error(&pred, &truth).unwrap();
        assert!((re[0].unwrap() - 10.0).abs() < 1e-9);
        assert!((re[1].unwrap() - 10.0).abs() < 1e-9);
        assert_eq!(re[2], None);
        assert_eq!(relative_error(&truth, &truth).unwrap()[0], Some(0.0));
    }
}
