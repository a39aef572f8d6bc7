//! Adaptive Gauss-Kronrod (7/15) integration and Gauss-Hermite rules.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for the odd-indexed Kronrod nodes (1, 3, 5, 7).
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Integral estimate with its absolute error bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
}

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Integral {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let dx = h * XGK[i];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[i] * s;
        if i % 2 == 1 {
            gauss += WG[i / 2] * s;
        }
    }
    Integral { value: kron * h, error: ((kron - gauss) * h).abs() }
}

/// Globally adaptive integration on a finite interval: the subinterval with
/// the largest error is bisected until the summed error is below `tol`.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64, max_intervals: usize) -> Result<Integral> {
    let first = gk15(&mut f, a, b);
    let mut parts: Vec<(f64, f64, Integral)> = vec![(a, b, first)];
    loop {
        let total_err: f64 = parts.iter().map(|p| p.2.error).sum();
        let value: f64 = parts.iter().map(|p| p.2.value).sum();
        if total_err <= tol {
            return Ok(Integral { value, error: total_err });
        }
        if parts.len() >= max_intervals {
            return Err(Error::Numerical(format!(
                "quadrature did not converge: estimate {value:.10e}, error {total_err:.3e} > tolerance {tol:.1e}"
            )));
        }
        let (idx, _) = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .2.error.total_cmp(&y.1 .2.error))
            .expect("nonempty");
        let (lo, hi, _) = parts.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        parts.push((lo, mid, gk15(&mut f, lo, mid)));
        parts.push((mid, hi, gk15(&mut f, mid, hi)));
    }
}

/// Integral over `[0, inf)` after the map `x = s u / (1 - u)`.
pub fn integrate_half_line<F: FnMut(f64) -> f64>(mut f: F, scale: f64, tol: f64, max_intervals: usize) -> Result<Integral> {
    integrate(
        |u| {
            let om = 1.0 - u;
            let x = scale * u / om;
            let v = f(x) * scale / (om * om);
            if v.is_finite() { v } else { 0.0 }
        },
        0.0,
        1.0,
        tol,
        max_intervals,
    )
}

/// Gauss-Hermite rule for weight `exp(-z^2)`, from the eigen-decomposition
/// of the Jacobi matrix.
#[derive(Clone, Debug)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(r: usize) -> Self {
        assert!(r >= 1, "Gauss-Hermite needs at least one node");
        let mut j = DMatrix::<f64>::zeros(r, r);
        for k in 1..r {
            let off = (k as f64 / 2.0).sqrt();
            j[(k, k - 1)] = off;
            j[(k - 1, k)] = off;
        }
        let eig = SymmetricEigen::new(j);
        let mut pairs: Vec<(f64, f64)> = (0..r)
            .map(|i| {
                let v0 = eig.eigenvectors[(0, i)];
                (eig.eigenvalues[i], std::f64::consts::PI.sqrt() * v0 * v0)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        GaussHermite {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        }
    }

    /// `E[g(B)]` for `B ~ N(0, sigma2)`.
    pub fn normal_expectation<F: FnMut(f64) -> f64>(&self, sigma2: f64, mut g: F) -> f64 {
        let s = (2.0 * sigma2).sqrt();
        let norm = std::f64::consts::PI.sqrt();
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&z, &w)| w * g(s * z))
            .sum::<f64>()
            / norm
    }
}
