//! Bottom-up Poisson-lognormal population model.
//!
//! ```text
//! N_i ~ Poisson(D_i * A_i)
//! D_i ~ LogNormal(mu_i, sigma)
//! mu_i = alpha0 + alpha_t[t] + alpha_r[r] + alpha_s[s] + alpha_l[l] + sum_k beta_k * x_ik
//! ```
//!
//! The group intercept is an additive decomposition over settlement type,
//! region, state and LGA. Level 0 of every factor is the reference level and
//! its effect stays at zero during fitting, so `alpha0` is the intercept of the
//! reference group. `sigma` is either one pooled scale or one per settlement
//! type.
//!
//! Priors: `alpha0 ~ N(0, 10)`, factor effects `~ N(0, hyper_sd)`,
//! `beta_k ~ N(0, 10)`, `sigma ~ HalfNormal(1)`.

mod io;
mod map;
mod mh;
mod predict;
mod simulate;

pub use io::{read_chain_csv, read_dataset_csv, write_chain_csv, write_dataset_csv};
pub use map::{fit_map, MapConfig, MapFit};
pub use mh::{fit_mh, Chain, MhConfig};
pub use predict::{predict, PredictConfig, Prediction};
pub use simulate::{sample_prior, simulate_dataset, simulate_location, SimulationConfig};

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

pub const ALPHA0_PRIOR_SD: f64 = 10.0;
pub const BETA_PRIOR_SD: f64 = 10.0;
pub const SIGMA_PRIOR_SCALE: f64 = 1.0;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("dataset has no observed records")]
    EmptyDataset,
    #[error("chain has no draws")]
    EmptyChain,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("record {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("CSV schema: {0}")]
    Schema(String),
    #[error("CSV row {row}: {reason}")]
    Parse { row: usize, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Settlement type, region, state and LGA ids of a location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub t: usize,
    pub r: usize,
    pub s: usize,
    pub l: usize,
}

impl GroupKey {
    pub const fn new(t: usize, r: usize, s: usize, l: usize) -> Self {
        Self { t, r, s, l }
    }
}

/// Number of levels of each grouping factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Levels {
    pub types: usize,
    pub regions: usize,
    pub states: usize,
    pub lgas: usize,
}

impl Levels {
    pub const fn new(types: usize, regions: usize, states: usize, lgas: usize) -> Self {
        Self {
            types,
            regions,
            states,
            lgas,
        }
    }

    pub fn contains(&self, k: &GroupKey) -> bool {
        k.t < self.types && k.r < self.regions && k.s < self.states && k.l < self.lgas
    }

    /// Smallest level counts that admit every key in `records`.
    pub fn covering(records: &[LocationRecord]) -> Self {
        records.iter().fold(Self::new(1, 1, 1, 1), |acc, rec| Self {
            types: acc.types.max(rec.key.t + 1),
            regions: acc.regions.max(rec.key.r + 1),
            states: acc.states.max(rec.key.s + 1),
            lgas: acc.lgas.max(rec.key.l + 1),
        })
    }
}

/// One microcensus location (or prediction target when `count` is `None`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationRecord {
    pub id: String,
    pub key: GroupKey,
    /// Standardized covariates.
    pub x: Vec<f64>,
    /// Settled area in hectares.
    pub area: f64,
    pub count: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    levels: Levels,
    n_covariates: usize,
    records: Vec<LocationRecord>,
}

impl Dataset {
    pub fn new(levels: Levels, n_covariates: usize, records: Vec<LocationRecord>) -> Result<Self, ModelError> {
        for (index, rec) in records.iter().enumerate() {
            let fail = |reason: String| Err(ModelError::InvalidRecord { index, reason });
            if !levels.contains(&rec.key) {
                return fail(format!("group key {:?} outside levels {:?}", rec.key, levels));
            }
            if rec.x.len() != n_covariates {
                return fail(format!("{} covariates, expected {n_covariates}", rec.x.len()));
            }
            if rec.x.iter().any(|v| !v.is_finite()) {
                return fail("non-finite covariate".into());
            }
            if !(rec.area.is_finite() && rec.area > 0.0) {
                return fail(format!("area must be positive, got {}", rec.area));
            }
        }
        Ok(Self {
            levels,
            n_covariates,
            records,
        })
    }

    pub fn levels(&self) -> Levels {
        self.levels
    }

    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    pub fn records(&self) -> &[LocationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// The records with an observed count, same levels and covariates.
    pub fn observed(&self) -> Self {
        Self {
            levels: self.levels,
            n_covariates: self.n_covariates,
            records: self.records.iter().filter(|r| r.count.is_some()).cloned().collect(),
        }
    }
}

/// Prior scales of the per-factor effects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperSds {
    pub t: f64,
    pub r: f64,
    pub s: f64,
    pub l: f64,
}

impl Default for HyperSds {
    fn default() -> Self {
        Self {
            t: 1.0,
            r: 1.0,
            s: 1.0,
            l: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaMode {
    #[default]
    Pooled,
    PerType,
}

impl std::str::FromStr for SigmaMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pooled" => Ok(Self::Pooled),
            "per-type" => Ok(Self::PerType),
            other => Err(format!("unknown sigma mode {other:?}, expected pooled or per-type")),
        }
    }
}

impl SigmaMode {
    pub fn len(self, levels: Levels) -> usize {
        match self {
            Self::Pooled => 1,
            Self::PerType => levels.types,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub alpha0: f64,
    pub alpha_t: Vec<f64>,
    pub alpha_r: Vec<f64>,
    pub alpha_s: Vec<f64>,
    pub alpha_l: Vec<f64>,
    pub beta: Vec<f64>,
    /// One pooled scale, or one per settlement type.
    pub sigma: Vec<f64>,
    pub hyper_sds: HyperSds,
}

impl ModelParams {
    /// All effects zero, `sigma = 1`.
    pub fn zeros(levels: Levels, n_covariates: usize, sigma_mode: SigmaMode) -> Self {
        Self {
            alpha0: 0.0,
            alpha_t: vec![0.0; levels.types],
            alpha_r: vec![0.0; levels.regions],
            alpha_s: vec![0.0; levels.states],
            alpha_l: vec![0.0; levels.lgas],
            beta: vec![0.0; n_covariates],
            sigma: vec![1.0; sigma_mode.len(levels)],
            hyper_sds: HyperSds::default(),
        }
    }

    pub fn levels(&self) -> Levels {
        Levels::new(self.alpha_t.len(), self.alpha_r.len(), self.alpha_s.len(), self.alpha_l.len())
    }

    pub fn sigma_mode(&self) -> SigmaMode {
        if self.sigma.len() == 1 {
            SigmaMode::Pooled
        } else {
            SigmaMode::PerType
        }
    }

    pub fn sigma_for(&self, key: &GroupKey) -> f64 {
        if self.sigma.len() == 1 {
            self.sigma[0]
        } else {
            self.sigma[key.t]
        }
    }

    /// Checks vector lengths against `levels` and `n_covariates`.
    pub fn check_shape(&self, levels: Levels, n_covariates: usize) -> Result<(), ModelError> {
        let mine = self.levels();
        if mine != levels {
            return Err(ModelError::DimensionMismatch(format!(
                "parameters have levels {mine:?}, data has {levels:?}"
            )));
        }
        if self.beta.len() != n_covariates {
            return Err(ModelError::DimensionMismatch(format!(
                "{} slopes for {n_covariates} covariates",
                self.beta.len()
            )));
        }
        if self.sigma.len() != 1 && self.sigma.len() != levels.types {
            return Err(ModelError::DimensionMismatch(format!(
                "{} sigma values for {} settlement types",
                self.sigma.len(),
                levels.types
            )));
        }
        Ok(())
    }

    /// Scalar parameter names in chain-CSV column order.
    pub fn column_names(&self) -> Vec<String> {
        let mut names = vec!["alpha0".to_string()];
        for (prefix, v) in [
            ("alpha_t", &self.alpha_t),
            ("alpha_r", &self.alpha_r),
            ("alpha_s", &self.alpha_s),
            ("alpha_l", &self.alpha_l),
            ("beta", &self.beta),
            ("sigma", &self.sigma),
        ] {
            names.extend((0..v.len()).map(|i| format!("{prefix}.{i}")));
        }
        names
    }

    /// Scalar values matching [`Self::column_names`].
    pub fn to_columns(&self) -> Vec<f64> {
        let mut out = vec![self.alpha0];
        for v in [&self.alpha_t, &self.alpha_r, &self.alpha_s, &self.alpha_l, &self.beta, &self.sigma] {
            out.extend_from_slice(v);
        }
        out
    }
}

/// Log-density mean `mu` of a location.
pub fn mu_linear(params: &ModelParams, key: &GroupKey, x: &[f64]) -> Result<f64, ModelError> {
    if params.beta.len() != x.len() {
        return Err(ModelError::DimensionMismatch(format!(
            "{} slopes for {} covariates",
            params.beta.len(),
            x.len()
        )));
    }
    if !params.levels().contains(key) {
        return Err(ModelError::DimensionMismatch(format!(
            "group key {key:?} outside levels {:?}",
            params.levels()
        )));
    }
    Ok(mu_unchecked(params, key, x))
}

pub(crate) fn mu_unchecked(params: &ModelParams, key: &GroupKey, x: &[f64]) -> f64 {
    let dot: f64 = params.beta.iter().zip(x).map(|(b, v)| b * v).sum();
    params.alpha0 + params.alpha_t[key.t] + params.alpha_r[key.r] + params.alpha_s[key.s] + params.alpha_l[key.l] + dot
}

pub(crate) fn ln_normal(x: f64, sd: f64) -> f64 {
    let z = x / sd;
    -LN_SQRT_2PI - sd.ln() - 0.5 * z * z
}

pub(crate) fn ln_half_normal(x: f64, scale: f64) -> f64 {
    if x > 0.0 {
        std::f64::consts::LN_2 + ln_normal(x, scale)
    } else {
        f64::NEG_INFINITY
    }
}

/// Log prior density of `params`; `-inf` outside the support.
pub fn log_prior(params: &ModelParams) -> f64 {
    let h = params.hyper_sds;
    if ![h.t, h.r, h.s, h.l].iter().all(|&s| s > 0.0 && s.is_finite()) {
        return f64::NEG_INFINITY;
    }
    let mut lp = ln_normal(params.alpha0, ALPHA0_PRIOR_SD);
    for (effects, sd) in [(&params.alpha_t, h.t), (&params.alpha_r, h.r), (&params.alpha_s, h.s), (&params.alpha_l, h.l)] {
        lp += effects.iter().map(|&a| ln_normal(a, sd)).sum::<f64>();
    }
    lp += params.beta.iter().map(|&b| ln_normal(b, BETA_PRIOR_SD)).sum::<f64>();
    lp += params.sigma.iter().map(|&s| ln_half_normal(s, SIGMA_PRIOR_SCALE)).sum::<f64>();
    if lp.is_nan() {
        f64::NEG_INFINITY
    } else {
        lp
    }
}

pub(crate) fn ln_poisson(n: u64, lambda: f64) -> f64 {
    let n_f = n as f64;
    let term = if n == 0 { 0.0 } else { n_f * lambda.ln() };
    term - lambda - ln_gamma(n_f + 1.0)
}

pub(crate) fn ln_lognormal(d: f64, mu: f64, sigma: f64) -> f64 {
    let z = (d.ln() - mu) / sigma;
    -d.ln() - sigma.ln() - LN_SQRT_2PI - 0.5 * z * z
}

/// Joint log density of parameters, latent densities and observed counts.
///
/// `densities[i]` is the latent `D_i` of `data.records()[i]`. Records without
/// a count contribute only their lognormal term. Returns `-inf` for parameter
/// or density values outside the support.
pub fn log_joint(params: &ModelParams, data: &Dataset, densities: &[f64]) -> Result<f64, ModelError> {
    params.check_shape(data.levels, data.n_covariates)?;
    if densities.len() != data.records.len() {
        return Err(ModelError::DimensionMismatch(format!(
            "{} densities for {} records",
            densities.len(),
            data.records.len()
        )));
    }
    let mut total = log_prior(params);
    if total == f64::NEG_INFINITY {
        return Ok(total);
    }
    for (rec, &d) in data.records.iter().zip(densities) {
        if !(d > 0.0 && d.is_finite()) {
            return Ok(f64::NEG_INFINITY);
        }
        let mu = mu_unchecked(params, &rec.key, &rec.x);
        total += ln_lognormal(d, mu, params.sigma_for(&rec.key));
        if let Some(n) = rec.count {
            total += ln_poisson(n, d * rec.area);
        }
    }
    Ok(if total.is_nan() { f64::NEG_INFINITY } else { total })
}

/// Free regression coefficients: `alpha0`, the non-reference level effects of
/// each factor, then the slopes.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub levels: Levels,
    pub k: usize,
}

impl Layout {
    pub fn new(levels: Levels, k: usize) -> Self {
        Self { levels, k }
    }

    fn offsets(&self) -> [usize; 5] {
        let t = 1;
        let r = t + self.levels.types - 1;
        let s = r + self.levels.regions - 1;
        let l = s + self.levels.states - 1;
        let b = l + self.levels.lgas - 1;
        [t, r, s, l, b]
    }

    pub fn len(&self) -> usize {
        self.offsets()[4] + self.k
    }

    /// Nonzero design entries `(column, value)` of one record.
    pub fn row(&self, rec: &LocationRecord) -> Vec<(usize, f64)> {
        let [t, r, s, l, b] = self.offsets();
        let mut row = Vec::with_capacity(5 + self.k);
        row.push((0, 1.0));
        for (off, level) in [(t, rec.key.t), (r, rec.key.r), (s, rec.key.s), (l, rec.key.l)] {
            if level > 0 {
                row.push((off + level - 1, 1.0));
            }
        }
        row.extend(rec.x.iter().enumerate().map(|(k, &v)| (b + k, v)));
        row
    }

    pub fn prior_sds(&self, h: HyperSds) -> Vec<f64> {
        let mut sds = vec![ALPHA0_PRIOR_SD];
        sds.extend(std::iter::repeat_n(h.t, self.levels.types - 1));
        sds.extend(std::iter::repeat_n(h.r, self.levels.regions - 1));
        sds.extend(std::iter::repeat_n(h.s, self.levels.states - 1));
        sds.extend(std::iter::repeat_n(h.l, self.levels.lgas - 1));
        sds.extend(std::iter::repeat_n(BETA_PRIOR_SD, self.k));
        sds
    }

    pub fn to_params(&self, theta: &[f64], sigma: Vec<f64>, hyper_sds: HyperSds) -> ModelParams {
        let [t, r, s, l, b] = self.offsets();
        let effects = |off: usize, n: usize| {
            let mut v = vec![0.0; n];
            v[1..].copy_from_slice(&theta[off..off + n - 1]);
            v
        };
        ModelParams {
            alpha0: theta[0],
            alpha_t: effects(t, self.levels.types),
            alpha_r: effects(r, self.levels.regions),
            alpha_s: effects(s, self.levels.states),
            alpha_l: effects(l, self.levels.lgas),
            beta: theta[b..b + self.k].to_vec(),
            sigma,
            hyper_sds,
        }
    }

    pub fn theta_of(&self, p: &ModelParams) -> Vec<f64> {
        let mut theta = vec![p.alpha0];
        for v in [&p.alpha_t, &p.alpha_r, &p.alpha_s, &p.alpha_l] {
            theta.extend_from_slice(&v[1..]);
        }
        theta.extend_from_slice(&p.beta);
        theta
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use statrs::distribution::{Continuous, Discrete, LogNormal, Normal, Poisson};

    fn one_group() -> Levels {
        Levels::new(1, 1, 1, 1)
    }

    #[test]
    fn mu_examples() {
        let key = GroupKey::new(0, 0, 0, 0);
        let mut p = ModelParams::zeros(one_group(), 2, SigmaMode::Pooled);
        assert_eq!(mu_linear(&p, &key, &[0.3, 0.4]).unwrap(), 0.0);
        p.alpha0 = 100f64.ln();
        assert_eq!(mu_linear(&p, &key, &[0.3, 0.4]).unwrap(), 100f64.ln());
        p.alpha0 = 1.0;
        p.beta = vec![2.0, -1.0];
        assert_eq!(mu_linear(&p, &key, &[0.5, 1.0]).unwrap(), 1.0);
        assert!(matches!(mu_linear(&p, &key, &[0.5]), Err(ModelError::DimensionMismatch(_))));
    }

    #[test]
    fn mu_adds_group_effects() {
        let mut p = ModelParams::zeros(Levels::new(2, 3, 1, 2), 0, SigmaMode::Pooled);
        p.alpha0 = 1.0;
        p.alpha_t[1] = 0.5;
        p.alpha_r[2] = -0.25;
        p.alpha_l[1] = 2.0;
        assert_eq!(mu_linear(&p, &GroupKey::new(1, 2, 0, 1), &[]).unwrap(), 3.25);
        assert!(mu_linear(&p, &GroupKey::new(2, 0, 0, 0), &[]).is_err());
    }

    fn one_record(n: u64) -> Dataset {
        Dataset::new(
            one_group(),
            1,
            vec![LocationRecord {
                id: "a".into(),
                key: GroupKey::new(0, 0, 0, 0),
                x: vec![0.7],
                area: 2.5,
                count: Some(n),
            }],
        )
        .unwrap()
    }

    #[test]
    fn prior_only_matches_closed_form() {
        let levels = Levels::new(2, 2, 1, 1);
        let mut p = ModelParams::zeros(levels, 3, SigmaMode::Pooled);
        p.sigma = vec![0.5];
        let empty = Dataset::new(levels, 3, vec![]).unwrap();
        let lj = log_joint(&p, &empty, &[]).unwrap();

        // 1 intercept + 6 effects at 0, 3 slopes at 0, half-normal sigma
        let n01 = Normal::new(0.0, 1.0).unwrap();
        let n10 = Normal::new(0.0, 10.0).unwrap();
        let expected = n10.ln_pdf(0.0) * 4.0 + n01.ln_pdf(0.0) * 6.0 + (2.0 * n01.pdf(0.5)).ln();
        assert_relative_eq!(lj, expected, epsilon = 1e-12);
    }

    #[test]
    fn single_record_matches_scalar_densities() {
        let mut p = ModelParams::zeros(one_group(), 1, SigmaMode::Pooled);
        p.alpha0 = 4.0;
        p.beta = vec![0.3];
        p.sigma = vec![0.4];
        let data = one_record(130);
        let d = 55.0;
        let lj = log_joint(&p, &data, &[d]).unwrap();

        let mu = 4.0 + 0.3 * 0.7;
        let expected = Poisson::new(d * 2.5).unwrap().ln_pmf(130)
            + LogNormal::new(mu, 0.4).unwrap().ln_pdf(d)
            + log_prior(&p);
        assert_relative_eq!(lj, expected, max_relative = 1e-12);
    }

    #[test]
    fn support_boundaries() {
        let mut p = ModelParams::zeros(one_group(), 1, SigmaMode::Pooled);
        let data = one_record(3);
        p.sigma = vec![0.0];
        assert_eq!(log_joint(&p, &data, &[1.0]).unwrap(), f64::NEG_INFINITY);
        p.sigma = vec![-1.0];
        assert_eq!(log_joint(&p, &data, &[1.0]).unwrap(), f64::NEG_INFINITY);
        p.sigma = vec![1.0];
        assert_eq!(log_joint(&p, &data, &[0.0]).unwrap(), f64::NEG_INFINITY);
        assert!(log_joint(&p, &data, &[1.0]).unwrap().is_finite());
        assert!(matches!(log_joint(&p, &data, &[]), Err(ModelError::DimensionMismatch(_))));
    }

    #[test]
    fn dataset_validation() {
        let rec = |area: f64, t: usize| LocationRecord {
            id: "x".into(),
            key: GroupKey::new(t, 0, 0, 0),
            x: vec![],
            area,
            count: Some(1),
        };
        assert!(Dataset::new(one_group(), 0, vec![rec(0.0, 0)]).is_err());
        assert!(Dataset::new(one_group(), 0, vec![rec(1.0, 1)]).is_err());
        assert!(Dataset::new(one_group(), 1, vec![rec(1.0, 0)]).is_err());
    }

    #[test]
    fn layout_round_trip() {
        let levels = Levels::new(2, 3, 1, 2);
        let layout = Layout::new(levels, 2);
        // alpha0, one type, two regions, no states, one LGA, two betas.
        assert_eq!(layout.len(), 7);
        let theta: Vec<f64> = (0..layout.len()).map(|i| i as f64 + 0.5).collect();
        let p = layout.to_params(&theta, vec![1.0], HyperSds::default());
        assert_eq!(p.alpha_t, vec![0.0, 1.5]);
        assert_eq!(p.alpha_l, vec![0.0, 4.5]);
        assert_eq!(layout.theta_of(&p), theta);

        let rec = LocationRecord {
            id: "r".into(),
            key: GroupKey::new(1, 2, 0, 1),
            x: vec![0.25, -1.0],
            area: 1.0,
            count: None,
        };
        let mu_design: f64 = layout.row(&rec).iter().map(|&(c, v)| theta[c] * v).sum();
        assert_relative_eq!(mu_design, mu_unchecked(&p, &rec.key, &rec.x), epsilon = 1e-12);
    }
}
