//! Small-sample summaries and t-tests.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{invalid, Result};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (`n - 1` denominator).
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// `P(T >= t)`: evidence that the first sample is larger.
    pub p_greater: f64,
    /// `P(T <= t)`: evidence that the first sample is smaller.
    pub p_less: f64,
    pub p_two_sided: f64,
}

fn from_t(t: f64, df: f64) -> Result<TTest> {
    if t.is_nan() {
        return Err(invalid!("t statistic is undefined"));
    }
    if t.is_infinite() {
        let (g, l) = if t > 0.0 { (0.0, 1.0) } else { (1.0, 0.0) };
        return Ok(TTest { t, df, p_greater: g, p_less: l, p_two_sided: 0.0 });
    }
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| invalid!("{e}"))?;
    let p_less = dist.cdf(t);
    let p_greater = 1.0 - p_less;
    Ok(TTest { t, df, p_greater, p_less, p_two_sided: (2.0 * p_less.min(p_greater)).min(1.0) })
}

/// One-sample test of `mean(xs) = mu`.
pub fn one_sample_t(xs: &[f64], mu: f64) -> Result<TTest> {
    if xs.len() < 2 {
        return Err(invalid!("need at least two observations"));
    }
    let n = xs.len() as f64;
    let se = sample_sd(xs) / n.sqrt();
    let diff = mean(xs) - mu;
    let t = if se == 0.0 {
        if diff == 0.0 {
            return Ok(TTest { t: 0.0, df: n - 1.0, p_greater: 0.5, p_less: 0.5, p_two_sided: 1.0 });
        }
        diff.signum() * f64::INFINITY
    } else {
        diff / se
    };
    from_t(t, n - 1.0)
}

/// Paired test on `a[i] - b[i]`.
pub fn paired_t(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(invalid!("paired samples differ in length"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    one_sample_t(&d, 0.0)
}

/// Welch's unequal-variance test of `mean(a) = mean(b)`.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(invalid!("need at least two observations per sample"));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sample_sd(a).powi(2) / na, sample_sd(b).powi(2) / nb);
    let diff = mean(a) - mean(b);
    let se2 = va + vb;
    if se2 == 0.0 {
        if diff == 0.0 {
            return Ok(TTest { t: 0.0, df: na + nb - 2.0, p_greater: 0.5, p_less: 0.5, p_two_sided: 1.0 });
        }
        return from_t(diff.signum() * f64::INFINITY, na + nb - 2.0);
    }
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    from_t(diff / se2.sqrt(), df)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summaries() {
        assert_eq!(mean(&[1.0, 2.0, 3.0]), 2.0);
        assert!((sample_sd(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]) - 2.138089935299395).abs() < 1e-12);
    }

    #[test]
    fn welch_matches_reference() {
        let a = [27.5, 21.0, 19.0, 23.6, 17.0, 17.9, 16.9, 20.1, 21.9, 22.6, 23.1, 19.6, 19.0, 21.7, 21.4];
        let b = [27.1, 22.0, 20.8, 23.4, 23.4, 23.5, 25.8, 22.0, 24.8, 20.2, 21.9, 22.1, 22.9, 20.5, 24.4];
        let r = welch_t(&a, &b).unwrap();
        assert!((r.t - (-2.46)).abs() < 0.01);
        assert!((r.df - 24.99).abs() < 0.05);
        assert!((r.p_two_sided - 0.021).abs() < 0.002);
    }

    #[test]
    fn one_sample_direction() {
        let r = one_sample_t(&[-1.0, -2.0, -1.5, -0.5], 0.0).unwrap();
        assert!(r.p_less < 0.05 && r.p_greater > 0.95);
        let z = one_sample_t(&[0.0, 0.0, 0.0], 0.0).unwrap();
        assert_eq!(z.p_two_sided, 1.0);
    }
}
