//! Perturbation generators: IID Gaussian, constant, and long-range dependent
//! Gaussian noise (fractional Gaussian noise).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::model::QuerySet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSpec {
    IidGaussian {
        variance: f64,
    },
    Constant {
        value: f64,
    },
    /// Stationary noise with correlation decaying like `k^-gamma`.
    LongRange {
        variance: f64,
        gamma: f64,
    },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseSpec::IidGaussian { variance } if !(variance >= 0.0) => {
                Err(Error::config("noise variance must be >= 0"))
            }
            NoiseSpec::Constant { value } if !value.is_finite() => Err(Error::config("constant noise must be finite")),
            NoiseSpec::LongRange { variance, gamma } => {
                if !(variance >= 0.0) {
                    Err(Error::config("noise variance must be >= 0"))
                } else if !(gamma > 0.0 && gamma < 1.0) {
                    Err(Error::config(format!("long-range gamma must lie in (0, 1), got {gamma}")))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<f64>> {
        self.validate()?;
        match *self {
            NoiseSpec::IidGaussian { variance } => Ok(sample_iid_gaussian(n, variance, seed)),
            NoiseSpec::Constant { value } => Ok(vec![value; n]),
            NoiseSpec::LongRange { variance, gamma } => sample_long_range(n, variance, gamma, seed),
        }
    }
}

pub fn sample_iid_gaussian(n: usize, variance: f64, seed: u64) -> Vec<f64> {
    if variance == 0.0 {
        return vec![0.0; n];
    }
    let normal = Normal::new(0.0, variance.sqrt()).expect("variance checked finite");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.sample(normal)).collect()
}

/// Hurst exponent whose fractional Gaussian noise has correlation `~ k^-gamma`.
pub fn hurst_for_gamma(gamma: f64) -> f64 {
    1.0 - gamma / 2.0
}

/// Autocorrelation of unit-variance fractional Gaussian noise at lag `k`.
pub fn fgn_autocorrelation(k: usize, hurst: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let k = k as f64;
    let h2 = 2.0 * hurst;
    0.5 * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).powf(h2))
}

/// Asymptotic constant `H(2H-1)` in `r(k) ~ H(2H-1) k^(2H-2)`.
pub fn fgn_tail_constant(hurst: f64) -> f64 {
    hurst * (2.0 * hurst - 1.0)
}

pub fn sample_long_range(n: usize, variance: f64, gamma: f64, seed: u64) -> Result<Vec<f64>> {
    NoiseSpec::LongRange { variance, gamma }.validate()?;
    sample_fgn(n, variance, hurst_for_gamma(gamma), seed)
}

/// Exact fractional Gaussian noise sample by circulant embedding
/// (Davies-Harte).
pub fn sample_fgn(n: usize, variance: f64, hurst: f64, seed: u64) -> Result<Vec<f64>> {
    if !(hurst > 0.0 && hurst < 1.0) {
        return Err(Error::config(format!("Hurst exponent must lie in (0, 1), got {hurst}")));
    }
    if n == 0 || variance == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = variance.sqrt();
    if n == 1 {
        return Ok(vec![sd * rng.sample::<f64, _>(StandardNormal)]);
    }

    // First row of the 2n circulant: r(0..=n) then r(n-1..=1).
    let m = 2 * n;
    let mut row: Vec<Complex<f64>> = Vec::with_capacity(m);
    for k in 0..=n {
        row.push(Complex::new(fgn_autocorrelation(k, hurst), 0.0));
    }
    for k in (1..n).rev() {
        row.push(Complex::new(fgn_autocorrelation(k, hurst), 0.0));
    }
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(m);
    fft.process(&mut row);

    let scale = row.iter().map(|c| c.re.abs()).fold(0.0, f64::max);
    let mut weights = Vec::with_capacity(m);
    for c in &row {
        if c.re < -1e-10 * scale {
            return Err(Error::config(format!(
                "circulant embedding is not positive semidefinite (eigenvalue {:.3e})",
                c.re
            )));
        }
        weights.push((c.re.max(0.0) / m as f64).sqrt());
    }

    let mut buf: Vec<Complex<f64>> = weights
        .iter()
        .map(|w| Complex::new(w * rng.sample::<f64, _>(StandardNormal), w * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    fft.process(&mut buf);
    Ok(buf[..n].iter().map(|c| sd * c.re).collect())
}

/// Gives the i-th smallest query (by `coordinate`) the i-th noise value.
/// Ties keep their original order.
pub fn assign_noise_by_query_order(noise: &[f64], queries: &QuerySet, coordinate: usize) -> Result<Vec<f64>> {
    if noise.len() != queries.n() {
        return Err(Error::LengthMismatch { left: noise.len(), right: queries.n() });
    }
    if coordinate >= queries.d() {
        return Err(Error::config(format!("ordering coordinate {coordinate} out of range for d={}", queries.d())));
    }
    let key = queries.column(coordinate);
    let mut order: Vec<usize> = (0..queries.n()).collect();
    order.sort_by(|&a, &b| key[a].total_cmp(&key[b]));
    let mut out = vec![0.0; noise.len()];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = noise[rank];
    }
    Ok(out)
}
