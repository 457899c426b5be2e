//! Random-walk Metropolis over regression coefficients, `ln sigma` and the
//! latent `ln D_i`.
//!
//! One sweep proposes a Gaussian step for every latent log-density, then
//! every free coefficient, then every `ln sigma`, each accepted or rejected on
//! its own (Metropolis-within-Gibbs). Residuals `ln D_i - mu_i` are cached so
//! a coefficient update only touches the records in its design column.
//! Step sizes adapt during burn-in and are frozen afterwards.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::map::{validate_hyper, Blocks};
use super::{fit_map, Dataset, HyperSds, Levels, MapConfig, ModelError, ModelParams, SigmaMode, SIGMA_PRIOR_SCALE};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MhConfig {
    /// Retained draws after burn-in.
    pub draws: usize,
    pub burn_in: usize,
    /// Initial proposal scale for coefficients and `ln sigma`.
    pub param_step: f64,
    /// Initial proposal scale for each `ln D_i`.
    pub latent_step: f64,
    pub seed: u64,
    pub adapt: bool,
    pub sigma_mode: SigmaMode,
    pub hyper_sds: HyperSds,
}

impl Default for MhConfig {
    fn default() -> Self {
        Self {
            draws: 2000,
            burn_in: 1000,
            param_step: 0.05,
            latent_step: 0.1,
            seed: 0,
            adapt: true,
            sigma_mode: SigmaMode::Pooled,
            hyper_sds: HyperSds::default(),
        }
    }
}

const ADAPT_INTERVAL: usize = 50;
const TARGET_ACCEPTANCE: f64 = 0.44;

/// Post-burn-in draws of a sampler run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub draws: Vec<ModelParams>,
    /// `log_joint` at each retained draw (parameters and latent densities).
    pub log_joint: Vec<f64>,
    pub seed: u64,
    pub burn_in: usize,
    /// Accepted / proposed over all post-burn-in updates.
    pub acceptance_rate: f64,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn levels(&self) -> Option<Levels> {
        self.draws.first().map(ModelParams::levels)
    }

    /// Central `level` interval of one scalar, picked by `f`, over the draws.
    pub fn interval<F: Fn(&ModelParams) -> f64>(&self, f: F, level: f64) -> Option<(f64, f64)> {
        let mut v: Vec<f64> = self.draws.iter().map(f).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        Some((
            empirical_quantile(&v, (1.0 - level) / 2.0),
            empirical_quantile(&v, (1.0 + level) / 2.0),
        ))
    }
}

/// Linear-interpolation quantile of sorted `v`.
pub(crate) fn empirical_quantile(v: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

struct State<'a> {
    blocks: Blocks<'a>,
    /// Records touched by each coefficient, with their design values.
    columns: Vec<Vec<(usize, f64)>>,
    sigma_members: Vec<Vec<usize>>,
    counts: Vec<f64>,
    ln_fact: Vec<f64>,
    prior_sds: Vec<f64>,
    theta: Vec<f64>,
    log_sigma: Vec<f64>,
    u: Vec<f64>,
    resid: Vec<f64>,
}

impl<'a> State<'a> {
    fn new(blocks: Blocks<'a>, theta: Vec<f64>, sigma: &[f64], u: Vec<f64>) -> Self {
        let p = blocks.layout.len();
        let mut columns = vec![Vec::new(); p];
        for (i, row) in blocks.rows.iter().enumerate() {
            for &(c, v) in row {
                if v != 0.0 {
                    columns[c].push((i, v));
                }
            }
        }
        let mut sigma_members = vec![Vec::new(); blocks.n_sigma];
        for (i, &g) in blocks.sigma_group.iter().enumerate() {
            sigma_members[g].push(i);
        }
        let counts: Vec<f64> = blocks.data.records().iter().map(|r| r.count.unwrap_or(0) as f64).collect();
        let ln_fact = counts.iter().map(|&n| ln_gamma(n + 1.0)).collect();
        let resid = u.iter().enumerate().map(|(i, &ui)| ui - blocks.mu(&theta, i)).collect();
        let prior_sds = blocks.layout.prior_sds(blocks.hyper_sds);
        Self {
            columns,
            sigma_members,
            counts,
            ln_fact,
            prior_sds,
            log_sigma: sigma.iter().map(|s| s.ln()).collect(),
            theta,
            u,
            resid,
            blocks,
        }
    }

    fn sigma(&self) -> Vec<f64> {
        self.log_sigma.iter().map(|l| l.exp()).collect()
    }

    fn params(&self) -> ModelParams {
        self.blocks.params(&self.theta, &self.sigma())
    }

    /// `log_joint` of the current state, from cached residuals.
    fn log_joint(&self) -> f64 {
        let mut lp = super::log_prior(&self.params());
        let records = self.blocks.data.records();
        for (i, rec) in records.iter().enumerate() {
            let ls = self.log_sigma[self.blocks.sigma_group[i]];
            let z = self.resid[i] / ls.exp();
            lp += -self.u[i] - ls - super::LN_SQRT_2PI - 0.5 * z * z;
            if rec.count.is_some() {
                let lambda = self.u[i].exp() * rec.area;
                lp += if self.counts[i] == 0.0 { 0.0 } else { self.counts[i] * lambda.ln() } - lambda - self.ln_fact[i];
            }
        }
        lp
    }

    fn latent_step<R: Rng>(&mut self, i: usize, step: f64, rng: &mut R) -> bool {
        let delta = step * rng.sample::<f64, _>(StandardNormal);
        let area = self.blocks.data.records()[i].area;
        let s2 = (2.0 * self.log_sigma[self.blocks.sigma_group[i]]).exp();
        let (u, r) = (self.u[i], self.resid[i]);
        let (u_new, r_new) = (u + delta, r + delta);
        // The lognormal -ln D term cancels the Jacobian of D = e^u.
        let log_ratio = self.counts[i] * delta - area * (u_new.exp() - u.exp()) - (r_new * r_new - r * r) / (2.0 * s2);
        if accept(log_ratio, rng) {
            self.u[i] = u_new;
            self.resid[i] = r_new;
            true
        } else {
            false
        }
    }

    fn coefficient_step<R: Rng>(&mut self, c: usize, step: f64, rng: &mut R) -> bool {
        let delta = step * rng.sample::<f64, _>(StandardNormal);
        let old = self.theta[c];
        let new = old + delta;
        let sd = self.prior_sds[c];
        let mut log_ratio = -(new * new - old * old) / (2.0 * sd * sd);
        for &(i, v) in &self.columns[c] {
            let s2 = (2.0 * self.log_sigma[self.blocks.sigma_group[i]]).exp();
            let r = self.resid[i];
            let r_new = r - delta * v;
            log_ratio -= (r_new * r_new - r * r) / (2.0 * s2);
        }
        if accept(log_ratio, rng) {
            self.theta[c] = new;
            for &(i, v) in &self.columns[c] {
                self.resid[i] -= delta * v;
            }
            true
        } else {
            false
        }
    }

    fn sigma_step<R: Rng>(&mut self, g: usize, step: f64, rng: &mut R) -> bool {
        let delta = step * rng.sample::<f64, _>(StandardNormal);
        let old = self.log_sigma[g];
        let new = old + delta;
        let ss: f64 = self.sigma_members[g].iter().map(|&i| self.resid[i] * self.resid[i]).sum();
        let n = self.sigma_members[g].len() as f64;
        let c2 = SIGMA_PRIOR_SCALE * SIGMA_PRIOR_SCALE;
        let (s2_old, s2_new) = ((2.0 * old).exp(), (2.0 * new).exp());
        // Lognormal terms, half-normal prior, and the Jacobian of sigma = e^eta.
        let log_ratio = -n * delta - 0.5 * ss * (1.0 / s2_new - 1.0 / s2_old) - (s2_new - s2_old) / (2.0 * c2) + delta;
        if accept(log_ratio, rng) {
            self.log_sigma[g] = new;
            true
        } else {
            false
        }
    }
}

fn accept<R: Rng>(log_ratio: f64, rng: &mut R) -> bool {
    if log_ratio >= 0.0 {
        // Still consume a uniform so the stream does not depend on the outcome.
        let _: f64 = rng.random();
        return true;
    }
    let u: f64 = rng.random();
    u.ln() < log_ratio
}

#[derive(Default)]
struct Tally {
    accepted: u64,
    proposed: u64,
}

fn adapt(steps: &mut [f64], accepted: &mut [u32]) {
    for (step, acc) in steps.iter_mut().zip(accepted.iter_mut()) {
        let rate = f64::from(*acc) / ADAPT_INTERVAL as f64;
        *step *= (2.0 * (rate - TARGET_ACCEPTANCE)).exp();
        *acc = 0;
    }
}

/// Runs the sampler from the posterior mode. Deterministic given `seed`.
pub fn fit_mh(dataset: &Dataset, config: &MhConfig) -> Result<Chain, ModelError> {
    validate_hyper(&config.hyper_sds)?;
    for (name, v) in [("param_step", config.param_step), ("latent_step", config.latent_step)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(ModelError::InvalidConfig(format!("{name} must be non-negative, got {v}")));
        }
    }
    let map = fit_map(
        dataset,
        &MapConfig {
            max_iters: 200,
            sigma_mode: config.sigma_mode,
            hyper_sds: config.hyper_sds,
            ..MapConfig::default()
        },
    )?;
    let data = map.data;
    let blocks = Blocks::new(&data, config.sigma_mode, config.hyper_sds);
    let theta = blocks.layout.theta_of(&map.params);
    let u: Vec<f64> = map.densities.iter().map(|d| d.ln()).collect();
    let mut state = State::new(blocks, theta, &map.params.sigma, u);

    let n_latent = state.u.len();
    let n_coef = state.theta.len();
    let n_sigma = state.log_sigma.len();
    let mut latent_steps = vec![config.latent_step; n_latent];
    let mut coef_steps = vec![config.param_step; n_coef];
    let mut sigma_steps = vec![config.param_step; n_sigma];
    let mut latent_acc = vec![0u32; n_latent];
    let mut coef_acc = vec![0u32; n_coef];
    let mut sigma_acc = vec![0u32; n_sigma];

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut tally = Tally::default();
    let mut draws = Vec::with_capacity(config.draws);
    let mut log_joint = Vec::with_capacity(config.draws);

    for sweep in 0..config.burn_in + config.draws {
        let burning = sweep < config.burn_in;
        let mut accepted = 0u64;
        for i in 0..n_latent {
            let ok = state.latent_step(i, latent_steps[i], &mut rng);
            latent_acc[i] += u32::from(ok);
            accepted += u64::from(ok);
        }
        for c in 0..n_coef {
            let ok = state.coefficient_step(c, coef_steps[c], &mut rng);
            coef_acc[c] += u32::from(ok);
            accepted += u64::from(ok);
        }
        for g in 0..n_sigma {
            let ok = state.sigma_step(g, sigma_steps[g], &mut rng);
            sigma_acc[g] += u32::from(ok);
            accepted += u64::from(ok);
        }

        if burning {
            if config.adapt && (sweep + 1) % ADAPT_INTERVAL == 0 {
                adapt(&mut latent_steps, &mut latent_acc);
                adapt(&mut coef_steps, &mut coef_acc);
                adapt(&mut sigma_steps, &mut sigma_acc);
            }
        } else {
            tally.accepted += accepted;
            tally.proposed += (n_latent + n_coef + n_sigma) as u64;
            draws.push(state.params());
            log_joint.push(state.log_joint());
        }
    }

    let acceptance_rate = if tally.proposed == 0 {
        0.0
    } else {
        tally.accepted as f64 / tally.proposed as f64
    };
    Ok(Chain {
        draws,
        log_joint,
        seed: config.seed,
        burn_in: config.burn_in,
        acceptance_rate,
    })
}
