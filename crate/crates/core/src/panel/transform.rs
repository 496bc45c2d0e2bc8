//! Outcome transforms applied before estimation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GrowthMethod {
    /// `100 · (x_t − x_{t−1}) / |x_{t−1}|`
    #[default]
    Simple,
    /// `100 · (ln x_t − ln x_{t−1})`
    Log,
}

/// Elementwise `base − benchmark` (e.g. a sovereign yield minus the US yield).
pub fn spread<T: Scalar>(base: &[T], benchmark: &[T]) -> Result<Vec<T>> {
    if base.len() != benchmark.len() {
        return Err(Error::Shape(format!(
            "spread inputs have lengths {} and {}",
            base.len(),
            benchmark.len()
        )));
    }
    Ok(base.iter().zip(benchmark).map(|(&a, &b)| a - b).collect())
}

/// Period-on-period percentage growth; output is one element shorter.
pub fn growth_rate<T: Scalar>(series: &[T], method: GrowthMethod) -> Result<Vec<T>> {
    if series.len() < 2 {
        return Err(Error::Insufficient("growth rate needs at least 2 values".into()));
    }
    let hundred = T::of(100.0);
    match method {
        GrowthMethod::Simple => series
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                if w[0] == T::zero() {
                    Err(Error::Domain(format!("division by zero at position {i}")))
                } else {
                    Ok(hundred * (w[1] - w[0]) / w[0].abs())
                }
            })
            .collect(),
        GrowthMethod::Log => {
            if let Some(i) = series.iter().position(|&x| x <= T::zero()) {
                return Err(Error::Domain(format!("non-positive value at position {i} under log growth")));
            }
            Ok(series.windows(2).map(|w| hundred * (w[1].ln() - w[0].ln())).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn spread_examples() {
        assert!((spread::<f64>(&[5.0], &[4.3]).unwrap()[0] - 0.7).abs() < 1e-12);
        let x = [1.5, -2.0, 3.25];
        assert!(spread(&x, &x).unwrap().iter().all(|&d| d == 0.0));
        assert!(spread(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn growth_examples() {
        assert_eq!(growth_rate(&[100.0, 102.0], GrowthMethod::Simple).unwrap(), vec![2.0]);
        let c = [7.5; 6];
        assert!(growth_rate(&c, GrowthMethod::Simple).unwrap().iter().all(|&g| g == 0.0));
        assert!(growth_rate(&c, GrowthMethod::Log).unwrap().iter().all(|&g| g == 0.0));
        assert_eq!(growth_rate(&c, GrowthMethod::Log).unwrap().len(), 5);
    }

    #[test]
    fn growth_errors() {
        assert!(growth_rate(&[1.0f64], GrowthMethod::Simple).is_err());
        assert!(growth_rate(&[0.0, 1.0f64], GrowthMethod::Simple).is_err());
        assert!(growth_rate(&[1.0, -1.0f64], GrowthMethod::Log).is_err());
        assert!(growth_rate(&[1.0, -1.0f64], GrowthMethod::Simple).is_ok());
    }

    proptest! {
        // ln(1+g) = g − g²/2 + …, so in percent units |simple − log| ≈ simple²/200.
        #[test]
        fn simple_and_log_agree_for_small_changes(
            start in 1.0f64..1000.0,
            steps in proptest::collection::vec(-0.01f64..0.01, 1..40),
        ) {
            let mut xs = vec![start];
            for s in &steps {
                let last = *xs.last().unwrap();
                xs.push(last * (1.0 + s));
            }
            let simple = growth_rate(&xs, GrowthMethod::Simple).unwrap();
            let log = growth_rate(&xs, GrowthMethod::Log).unwrap();
            for (s, l) in simple.iter().zip(&log) {
                if s.abs() <= 1.0 {
                    prop_assert!((s - l).abs() <= 0.05, "simple {s} log {l}");
                }
            }
        }
    }
}
