use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use super::mh::empirical_quantile;
use super::simulate::sample_poisson;
use super::{mu_linear, Chain, GroupKey, ModelError};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PredictConfig {
    /// Credible level of the reported interval, in (0, 1).
    pub level: f64,
    /// Posterior-predictive count samples drawn per retained draw.
    pub samples_per_draw: usize,
    pub seed: u64,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            level: 0.95,
            samples_per_draw: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Posterior mean of `E[N] = exp(mu + sigma^2 / 2) * area`.
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Posterior-predictive population of one location.
///
/// The mean averages the lognormal expectation over draws; the interval is
/// the central `level` range of counts simulated from the full model.
pub fn predict(chain: &Chain, key: &GroupKey, x: &[f64], area: f64, cfg: &PredictConfig) -> Result<Prediction, ModelError> {
    if chain.is_empty() {
        return Err(ModelError::EmptyChain);
    }
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(ModelError::InvalidConfig(format!("level must lie in (0, 1), got {}", cfg.level)));
    }
    if cfg.samples_per_draw == 0 {
        return Err(ModelError::InvalidConfig("samples_per_draw must be positive".into()));
    }
    if !(area > 0.0 && area.is_finite()) {
        return Err(ModelError::InvalidConfig(format!("area must be positive, got {area}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut expected = 0.0;
    let mut samples = Vec::with_capacity(chain.len() * cfg.samples_per_draw);
    for params in &chain.draws {
        let mu = mu_linear(params, key, x)?;
        let sigma = params.sigma_for(key);
        expected += (mu + 0.5 * sigma * sigma).exp() * area;
        let density = LogNormal::new(mu, sigma).map_err(|e| ModelError::NonFinite(format!("lognormal: {e}")))?;
        for _ in 0..cfg.samples_per_draw {
            let d = density.sample(&mut rng);
            samples.push(sample_poisson(d * area, &mut rng)? as f64);
        }
    }
    let mean = expected / chain.len() as f64;
    if !mean.is_finite() {
        return Err(ModelError::NonFinite(format!("predictive mean {mean}")));
    }
    samples.sort_by(f64::total_cmp);
    Ok(Prediction {
        mean,
        lo: empirical_quantile(&samples, (1.0 - cfg.level) / 2.0),
        hi: empirical_quantile(&samples, (1.0 + cfg.level) / 2.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::popmodel::{Levels, ModelParams, SigmaMode};
    use statrs::distribution::{DiscreteCDF, Poisson};

    fn constant_chain(alpha0: f64, sigma: f64, draws: usize) -> Chain {
        let mut p = ModelParams::zeros(Levels::new(1, 1, 1, 1), 0, SigmaMode::Pooled);
        p.alpha0 = alpha0;
        p.sigma = vec![sigma];
        Chain {
            draws: vec![p; draws],
            log_joint: vec![0.0; draws],
            seed: 0,
            burn_in: 0,
            acceptance_rate: 1.0,
        }
    }

    const KEY: GroupKey = GroupKey::new(0, 0, 0, 0);

    #[test]
    fn degenerate_density_gives_poisson_interval() {
        let chain = constant_chain(100f64.ln(), 1e-9, 1);
        let cfg = PredictConfig {
            samples_per_draw: 20_000,
            ..PredictConfig::default()
        };
        let p = predict(&chain, &KEY, &[], 2.0, &cfg).unwrap();
        approx::assert_relative_eq!(p.mean, 200.0, max_relative = 1e-9);
        let pois = Poisson::new(200.0).unwrap();
        let (q_lo, q_hi) = (pois.inverse_cdf(0.025) as f64, pois.inverse_cdf(0.975) as f64);
        assert!((p.lo - q_lo).abs() <= 2.0, "{} vs {q_lo}", p.lo);
        assert!((p.hi - q_hi).abs() <= 2.0, "{} vs {q_hi}", p.hi);
    }

    #[test]
    fn doubling_area_doubles_mean() {
        let chain = constant_chain(3.7, 0.4, 25);
        let cfg = PredictConfig::default();
        let one = predict(&chain, &KEY, &[], 1.3, &cfg).unwrap();
        let two = predict(&chain, &KEY, &[], 2.6, &cfg).unwrap();
        assert_eq!(two.mean, 2.0 * one.mean);
    }

    #[test]
    fn errors() {
        let empty = constant_chain(1.0, 1.0, 0);
        assert!(matches!(
            predict(&empty, &KEY, &[], 1.0, &PredictConfig::default()),
            Err(ModelError::EmptyChain)
        ));
        let chain = constant_chain(1.0, 1.0, 2);
        let bad = PredictConfig {
            level: 1.0,
            ..PredictConfig::default()
        };
        assert!(matches!(predict(&chain, &KEY, &[], 1.0, &bad), Err(ModelError::InvalidConfig(_))));
        assert!(predict(&chain, &GroupKey::new(1, 0, 0, 0), &[], 1.0, &PredictConfig::default()).is_err());
    }
}
