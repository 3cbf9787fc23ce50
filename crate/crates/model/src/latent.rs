//! Diagonal Gaussian posteriors, reparameterized sampling and the KL to N(0, I).

use crate::error::{ModelError, Result};
use candle_core::{Tensor, D};
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Debug)]
pub struct GaussianLatent {
    /// `[B, latent]`
    pub mean: Tensor,
    /// `[B, latent]`
    pub log_variance: Tensor,
}

impl GaussianLatent {
    pub fn dims(&self) -> (usize, usize) {
        self.mean.dims2().expect("latent is rank 2")
    }

    /// `mean + exp(½·log_variance)·temperature·eps` for a given `eps`.
    pub fn sample_with(&self, eps: &Tensor, temperature: f64) -> Result<Tensor> {
        if temperature < 0.0 || temperature.is_nan() {
            return Err(ModelError::NegativeTemperature(temperature));
        }
        if temperature == 0.0 {
            return Ok(self.mean.clone());
        }
        let std = (&self.log_variance * 0.5)?.exp()?;
        Ok((&self.mean + (std * (eps * temperature)?)?)?)
    }

    /// Per-sample KL to the standard normal prior, `[B]`.
    pub fn kl(&self) -> Result<Tensor> {
        let var = self.log_variance.exp()?;
        let terms = ((self.mean.sqr()? + var)? - 1.0)?.sub(&self.log_variance)?;
        Ok((terms.sum(D::Minus1)? * 0.5)?)
    }
}

/// Standard normal noise shaped like the latent, drawn from `rng`.
pub fn standard_noise<R: Rng>(g: &GaussianLatent, rng: &mut R) -> Result<Tensor> {
    let (b, n) = g.dims();
    let data: Vec<f64> = (0..b * n).map(|_| rng.sample(StandardNormal)).collect();
    Ok(Tensor::from_vec(data, (b, n), g.mean.device())?.to_dtype(g.mean.dtype())?)
}

/// Reparameterized draw; temperature 0 returns the mean exactly.
pub fn sample_latent<R: Rng>(g: &GaussianLatent, temperature: f64, rng: &mut R) -> Result<Tensor> {
    if temperature < 0.0 || temperature.is_nan() {
        return Err(ModelError::NegativeTemperature(temperature));
    }
    if temperature == 0.0 {
        return Ok(g.mean.clone());
    }
    let eps = standard_noise(g, rng)?;
    g.sample_with(&eps, temperature)
}

/// Closed-form `½ Σ (μ² + σ² − 1 − ln σ²)` on plain slices.
pub fn kl_closed_form(mean: &[f64], log_variance: &[f64]) -> f64 {
    0.5 * mean.iter().zip(log_variance).map(|(m, lv)| m * m + lv.exp() - 1.0 - lv).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn latent(mean: &[f64], lv: &[f64]) -> GaussianLatent {
        let n = mean.len();
        GaussianLatent {
            mean: Tensor::from_vec(mean.to_vec(), (1, n), &Device::Cpu).unwrap(),
            log_variance: Tensor::from_vec(lv.to_vec(), (1, n), &Device::Cpu).unwrap(),
        }
    }

    #[test]
    fn temperature_zero_is_the_mean() {
        let g = latent(&[0.3, -2.0], &[1.0, -1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = sample_latent(&g, 0.0, &mut rng).unwrap();
        assert_eq!(z.to_vec2::<f64>().unwrap(), vec![vec![0.3, -2.0]]);
        assert!(matches!(sample_latent(&g, -0.1, &mut rng), Err(ModelError::NegativeTemperature(_))));
    }

    #[test]
    fn unit_noise_gives_one() {
        let g = latent(&[0.0], &[0.0]);
        let eps = Tensor::new(&[[1.0f64]], &Device::Cpu).unwrap();
        assert_eq!(g.sample_with(&eps, 1.0).unwrap().to_vec2::<f64>().unwrap(), vec![vec![1.0]]);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(latent(&[0.0; 4], &[0.0; 4]).kl().unwrap().to_vec1::<f64>().unwrap(), vec![0.0]);
        let k = latent(&[1.0, 1.0], &[0.0, 0.0]).kl().unwrap().to_vec1::<f64>().unwrap()[0];
        assert!((k - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sample_variance_tracks_log_variance() {
        let lv = 0.7f64;
        let g = latent(&[0.5], &[lv]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| sample_latent(&g, 1.0, &mut rng).unwrap().to_vec2::<f64>().unwrap()[0][0])
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var / lv.exp() - 1.0).abs() < 0.05, "{var}");
    }
}
