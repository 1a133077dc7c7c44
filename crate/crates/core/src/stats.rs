//! Small Monte Carlo summaries. All sums run in index order.

use rand::Rng;

use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample mean and standard error of the mean (unbiased variance).
pub fn estimate(xs: &[f64]) -> Estimate {
    let n = xs.len();
    let m = mean(xs);
    if n < 2 {
        return Estimate { mean: m, se: 0.0 };
    }
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    Estimate { mean: m, se: (var / n as f64).sqrt() }
}

/// Excess-free (Pearson) kurtosis; NaN for degenerate samples.
pub fn kurtosis(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let n = xs.len() as f64;
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    if m2 == 0.0 {
        return f64::NAN;
    }
    m4 / (m2 * m2)
}

/// Paired comparison `b - a` under common random numbers.
pub fn paired_difference(a: &[f64], b: &[f64]) -> Estimate {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    estimate(&d)
}

/// Standard deviation of a statistic over `resamples` bootstrap draws of the
/// rows of `samples` (each row one replication).
pub fn bootstrap_se<F>(rows: usize, resamples: usize, rng: &mut StreamRng, stat: F) -> f64
where
    F: Fn(&[usize]) -> f64,
{
    if rows < 2 || resamples < 2 {
        return 0.0;
    }
    let mut idx = vec![0usize; rows];
    let draws: Vec<f64> = (0..resamples)
        .map(|_| {
            for slot in idx.iter_mut() {
                *slot = rng.random_range(0..rows);
            }
            stat(&idx)
        })
        .collect();
    estimate(&draws).se * (resamples as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimate_matches_hand_values() {
        let e = estimate(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        assert!((e.se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn kurtosis_of_two_point_law_is_one() {
        assert!((kurtosis(&[-1.0, 1.0, -1.0, 1.0]) - 1.0).abs() < 1e-12);
    }
}
