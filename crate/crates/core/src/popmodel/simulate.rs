use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson, Uniform};

use super::{
    Dataset, GroupKey, HyperSds, Levels, LocationRecord, ModelError, ModelParams, SigmaMode,
    ALPHA0_PRIOR_SD, BETA_PRIOR_SD, SIGMA_PRIOR_SCALE,
};

/// Draws `(D, N)` for one location: `D ~ LogNormal(mu, sigma)`,
/// `N ~ Poisson(D * area)`. A zero area yields `N = 0`.
pub fn simulate_location<R: Rng + ?Sized>(
    params: &ModelParams,
    key: &GroupKey,
    x: &[f64],
    area: f64,
    rng: &mut R,
) -> Result<(f64, u64), ModelError> {
    let mu = super::mu_linear(params, key, x)?;
    if !(area >= 0.0 && area.is_finite()) {
        return Err(ModelError::InvalidConfig(format!("area must be non-negative, got {area}")));
    }
    let sigma = params.sigma_for(key);
    let density = LogNormal::new(mu, sigma)
        .map_err(|e| ModelError::InvalidConfig(format!("lognormal({mu}, {sigma}): {e}")))?
        .sample(rng);
    Ok((density, sample_poisson(density * area, rng)?))
}

pub(crate) fn sample_poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> Result<u64, ModelError> {
    if lambda == 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(lambda).map_err(|e| ModelError::NonFinite(format!("poisson rate {lambda}: {e}")))?;
    Ok(dist.sample(rng) as u64)
}

/// Shape of a synthetic microcensus.
#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub n_locations: usize,
    pub truth: ModelParams,
    /// Areas are drawn uniformly from this hectare range.
    pub area_range: (f64, f64),
    /// Number of trailing locations whose counts are withheld.
    pub unobserved: usize,
}

/// Simulates a dataset from `cfg.truth`. Covariates are standard normal and
/// group keys uniform over the levels. Returns the dataset and the latent
/// densities that generated it.
pub fn simulate_dataset<R: Rng + ?Sized>(cfg: &SimulationConfig, rng: &mut R) -> Result<(Dataset, Vec<f64>), ModelError> {
    let levels = cfg.truth.levels();
    let k = cfg.truth.beta.len();
    let (lo, hi) = cfg.area_range;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(ModelError::InvalidConfig(format!("bad area range [{lo}, {hi}]")));
    }
    if cfg.unobserved > cfg.n_locations {
        return Err(ModelError::InvalidConfig("more unobserved locations than locations".into()));
    }
    cfg.truth.check_shape(levels, k)?;
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let area_dist = Uniform::new_inclusive(lo, hi).map_err(|e| ModelError::InvalidConfig(e.to_string()))?;

    let mut records = Vec::with_capacity(cfg.n_locations);
    let mut densities = Vec::with_capacity(cfg.n_locations);
    for i in 0..cfg.n_locations {
        let key = GroupKey::new(
            rng.random_range(0..levels.types),
            rng.random_range(0..levels.regions),
            rng.random_range(0..levels.states),
            rng.random_range(0..levels.lgas),
        );
        let x: Vec<f64> = (0..k).map(|_| std_normal.sample(rng)).collect();
        let area = area_dist.sample(rng);
        let (d, n) = simulate_location(&cfg.truth, &key, &x, area, rng)?;
        let observed = i < cfg.n_locations - cfg.unobserved;
        records.push(LocationRecord {
            id: format!("loc{i:05}"),
            key,
            x,
            area,
            count: observed.then_some(n),
        });
        densities.push(d);
    }
    Ok((Dataset::new(levels, k, records)?, densities))
}

/// One draw from the prior. Reference-level effects stay at zero.
pub fn sample_prior<R: Rng + ?Sized>(
    levels: Levels,
    n_covariates: usize,
    sigma_mode: SigmaMode,
    hyper_sds: HyperSds,
    rng: &mut R,
) -> ModelParams {
    let mut p = ModelParams::zeros(levels, n_covariates, sigma_mode);
    p.hyper_sds = hyper_sds;
    let mut normal = |sd: f64| Normal::new(0.0, sd).unwrap().sample(&mut *rng);
    p.alpha0 = normal(ALPHA0_PRIOR_SD);
    for (v, sd) in [
        (&mut p.alpha_t, hyper_sds.t),
        (&mut p.alpha_r, hyper_sds.r),
        (&mut p.alpha_s, hyper_sds.s),
        (&mut p.alpha_l, hyper_sds.l),
    ] {
        for a in v.iter_mut().skip(1) {
            *a = normal(sd);
        }
    }
    for b in p.beta.iter_mut() {
        *b = normal(BETA_PRIOR_SD);
    }
    for s in p.sigma.iter_mut() {
        *s = normal(SIGMA_PRIOR_SCALE).abs().max(f64::MIN_POSITIVE);
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(alpha0: f64, sigma: f64) -> ModelParams {
        let mut p = ModelParams::zeros(Levels::new(1, 1, 1, 1), 0, SigmaMode::Pooled);
        p.alpha0 = alpha0;
        p.sigma = vec![sigma];
        p
    }

    #[test]
    fn zero_area_gives_zero_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = params(5.0, 0.5);
        for _ in 0..100 {
            let (_, n) = simulate_location(&p, &GroupKey::new(0, 0, 0, 0), &[], 0.0, &mut rng).unwrap();
            assert_eq!(n, 0);
        }
    }

    #[test]
    fn poisson_mean_identity() {
        // sigma ~ 0 pins D at 100, so E[N] = 100 and the sample mean of
        // 10_000 draws has standard error 0.1.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = params(100f64.ln(), 1e-9);
        let key = GroupKey::new(0, 0, 0, 0);
        let total: u64 = (0..10_000)
            .map(|_| simulate_location(&p, &key, &[], 1.0, &mut rng).unwrap().1)
            .sum();
        let mean = total as f64 / 10_000.0;
        assert!((mean - 100.0).abs() < 1.0, "mean {mean}");
    }

    #[test]
    fn lognormal_moment() {
        // E[N] = exp(mu + sigma^2 / 2) * A; check within 3 standard errors
        // using the sample variance.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = params(3.0, 0.5);
        let key = GroupKey::new(0, 0, 0, 0);
        let draws: Vec<f64> = (0..20_000)
            .map(|_| simulate_location(&p, &key, &[], 2.0, &mut rng).unwrap().1 as f64)
            .collect();
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let expected = (3.0f64 + 0.125).exp() * 2.0;
        assert!((mean - expected).abs() < 3.0 * (var / n).sqrt(), "{mean} vs {expected}");
    }

    #[test]
    fn seeded_runs_repeat() {
        let p = params(4.0, 0.3);
        let key = GroupKey::new(0, 0, 0, 0);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| simulate_location(&p, &key, &[], 1.5, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn dataset_shape() {
        let mut truth = ModelParams::zeros(Levels::new(2, 2, 1, 1), 3, SigmaMode::Pooled);
        truth.alpha0 = 4.0;
        truth.sigma = vec![0.3];
        let cfg = SimulationConfig {
            n_locations: 40,
            truth,
            area_range: (0.5, 3.0),
            unobserved: 5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (data, d) = simulate_dataset(&cfg, &mut rng).unwrap();
        assert_eq!(data.len(), 40);
        assert_eq!(d.len(), 40);
        assert_eq!(data.observed().len(), 35);
        assert!(data.records().iter().all(|r| r.x.len() == 3 && (0.5..=3.0).contains(&r.area)));
    }

    #[test]
    fn prior_draws_respect_reference_levels() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = sample_prior(Levels::new(3, 2, 1, 1), 2, SigmaMode::PerType, HyperSds::default(), &mut rng);
        assert_eq!(p.alpha_t[0], 0.0);
        assert_eq!(p.alpha_r[0], 0.0);
        assert_eq!(p.sigma.len(), 3);
        assert!(p.sigma.iter().all(|&s| s > 0.0));
    }
}
