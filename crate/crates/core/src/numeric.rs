//! Small numerical helpers: compensated summation and bracketed root finding.

use crate::error::{Error, Result};

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &KahanSum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = KahanSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

pub fn sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    xs.into_iter().collect::<KahanSum>().value()
}

pub fn mean(xs: &[f64]) -> f64 {
    sum(xs.iter().copied()) / xs.len() as f64
}

/// Sample variance with denominator `len - 1`.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    sum(xs.iter().map(|x| (x - m) * (x - m))) / (xs.len() as f64 - 1.0)
}

/// Root of a monotone function on `[lo, hi]` by bisection with a secant
/// accelerator (Illinois variant of regula falsi). Requires a sign change.
pub fn find_root<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64> {
    let mut flo = f(lo);
    let mut fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::Numerical(format!(
            "root not bracketed on [{lo}, {hi}] (f = {flo}, {fhi})"
        )));
    }
    let mut side = 0i8;
    for iter in 0..400 {
        // alternate secant and bisection steps for guaranteed progress
        let x = if iter % 3 == 2 {
            0.5 * (lo + hi)
        } else {
            let s = (lo * fhi - hi * flo) / (fhi - flo);
            if s.is_finite() && s > lo && s < hi {
                s
            } else {
                0.5 * (lo + hi)
            }
        };
        let fx = f(x);
        if fx == 0.0 || (hi - lo).abs() <= tol {
            return Ok(x);
        }
        if fx.signum() == flo.signum() {
            lo = x;
            flo = fx;
            if side == -1 {
                fhi *= 0.5;
            }
            side = -1;
        } else {
            hi = x;
            fhi = fx;
            if side == 1 {
                flo *= 0.5;
            }
            side = 1;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut xs = vec![1e16, 1.0, -1e16];
        xs.extend(std::iter::repeat(1e-3).take(1000));
        assert!((sum(xs) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn root_of_cubic() {
        let r = find_root(|x| x * x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-12);
        assert!(find_root(|x| x * x + 1.0, -1.0, 1.0, 1e-12).is_err());
    }

    #[test]
    fn variance_of_small_sample() {
        assert!((sample_variance(&[1.0, 2.0, 3.0, 4.0]) - 5.0 / 3.0).abs() < 1e-15);
    }
}
