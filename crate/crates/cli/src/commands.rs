//! Subcommand configurations and their runners. Every run writes its outputs
//! plus `<command>_manifest.json`, which replays the run when fed back in.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use popgrid_core::geojson::parse_zones;
use popgrid_core::popmodel::{
    fit_mh, predict, read_chain_csv, read_dataset_csv, sample_prior, simulate_dataset, write_chain_csv,
    write_dataset_csv, HyperSds, Levels, MhConfig, BETA_PRIOR_SD, PredictConfig, SigmaMode, SimulationConfig,
};
use popgrid_core::raster::{clip_by_mask, read_ascii_grid, write_ascii_grid, DEFAULT_CLIP_THRESHOLD, DEFAULT_CRS};
use popgrid_core::services::{
    needs_csv_string, needs_table, read_ward_populations, sorted_by_need, split_toilets_need, standard_manifest,
    FacilityStandard,
};
use popgrid_core::zonal::{aggregate_total, zonal_csv_string, zonal_stats};
use popgrid_core::{ClipMode, Grid, Mask, ZoneSet, ZonalMode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::chart::render_bar_chart;
use crate::error::{Category, CliError};

pub const TOOL: &str = "popgrid";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ClipArgs {
    /// ESRI ASCII grid
    #[arg(long)]
    pub raster: PathBuf,
    /// GeoJSON FeatureCollection whose polygons form the mask
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long, default_value_t = ZonalMode::Center)]
    pub mode: ZonalMode,
    /// Minimum coverage fraction kept in weighted mode
    #[arg(long, default_value_t = DEFAULT_CLIP_THRESHOLD)]
    pub threshold: f64,
    /// CRS tag of the raster (ASCII grids carry none)
    #[arg(long, default_value = DEFAULT_CRS)]
    pub raster_crs: String,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ZonalArgs {
    #[arg(long)]
    pub raster: PathBuf,
    /// GeoJSON FeatureCollection of ward polygons
    #[arg(long)]
    pub zones: PathBuf,
    /// Optional GeoJSON mask applied to the raster first
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, default_value_t = ZonalMode::Weighted)]
    pub mode: ZonalMode,
    /// Coverage threshold of the optional mask clip (weighted mode)
    #[arg(long, default_value_t = DEFAULT_CLIP_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value = DEFAULT_CRS)]
    pub raster_crs: String,
    /// Also write a bar chart of ward populations
    #[arg(long)]
    pub chart: bool,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct NeedsArgs {
    /// Zonal CSV (needs `ward_name` and `_sum`)
    #[arg(long)]
    pub zonal: PathBuf,
    #[arg(long, default_value = "bs6465")]
    pub standard: String,
    /// Also write per-sex needs with this male share of the population
    #[arg(long)]
    pub male_share: Option<f64>,
    #[arg(long)]
    pub chart: bool,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ChartArgs {
    #[arg(long)]
    pub csv: PathBuf,
    #[arg(long, default_value = "ward_name")]
    pub label_column: String,
    #[arg(long, default_value = "_sum")]
    pub value_column: String,
    #[arg(long, default_value = "Ward population")]
    pub title: String,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 500)]
    pub locations: usize,
    #[arg(long, default_value_t = 3)]
    pub covariates: usize,
    #[arg(long, default_value_t = 2)]
    pub types: usize,
    #[arg(long, default_value_t = 2)]
    pub regions: usize,
    #[arg(long, default_value_t = 1)]
    pub states: usize,
    #[arg(long, default_value_t = 1)]
    pub lgas: usize,
    /// Log-density intercept of the reference group
    #[arg(long, default_value_t = 4.0)]
    pub alpha0: f64,
    #[arg(long, default_value_t = 0.3)]
    pub sigma: f64,
    /// Prior scale of the randomly drawn true effects and coefficients
    #[arg(long, default_value_t = 0.3)]
    pub effect_sd: f64,
    #[arg(long, default_value_t = 0.5)]
    pub area_min: f64,
    #[arg(long, default_value_t = 3.0)]
    pub area_max: f64,
    /// Trailing locations written without a count
    #[arg(long, default_value_t = 0)]
    pub unobserved: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FitArgs {
    /// Microcensus CSV
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub draws: usize,
    #[arg(long, default_value_t = 1000)]
    pub burn_in: usize,
    /// `pooled` or `per-type`
    #[arg(long, default_value = "pooled")]
    pub sigma_mode: SigmaMode,
    /// Prior scale of every per-factor effect
    #[arg(long, default_value_t = 1.0)]
    pub hyper_sd: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PredictArgs {
    /// Chain CSV from `fit`
    #[arg(long)]
    pub chain: PathBuf,
    /// Locations to predict, in microcensus CSV form (`N` ignored)
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, default_value_t = 10)]
    pub samples_per_draw: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

/// One fully specified run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", content = "config", rename_all = "lowercase")]
pub enum Job {
    Clip(ClipArgs),
    Zonal(ZonalArgs),
    Needs(NeedsArgs),
    Chart(ChartArgs),
    Simulate(SimulateArgs),
    Fit(FitArgs),
    Predict(PredictArgs),
}

impl Job {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Clip(_) => "clip",
            Self::Zonal(_) => "zonal",
            Self::Needs(_) => "needs",
            Self::Chart(_) => "chart",
            Self::Simulate(_) => "simulate",
            Self::Fit(_) => "fit",
            Self::Predict(_) => "predict",
        }
    }

    pub fn out_dir(&self) -> &Path {
        match self {
            Self::Clip(a) => &a.out,
            Self::Zonal(a) => &a.out,
            Self::Needs(a) => &a.out,
            Self::Chart(a) => &a.out,
            Self::Simulate(a) => &a.out,
            Self::Fit(a) => &a.out,
            Self::Predict(a) => &a.out,
        }
    }

    pub fn set_out_dir(&mut self, out: PathBuf) {
        match self {
            Self::Clip(a) => a.out = out,
            Self::Zonal(a) => a.out = out,
            Self::Needs(a) => a.out = out,
            Self::Chart(a) => a.out = out,
            Self::Simulate(a) => a.out = out,
            Self::Fit(a) => a.out = out,
            Self::Predict(a) => a.out = out,
        }
    }
}

/// Record of a completed run. Holds no timestamps, so identical runs write
/// identical manifests.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub command: String,
    pub config: Value,
    pub outputs: Vec<String>,
    pub summary: Value,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        let v = json!({
            "tool": TOOL,
            "version": VERSION,
            "command": self.command,
            "config": self.config,
            "outputs": self.outputs,
            "summary": self.summary,
        });
        let mut s = serde_json::to_string_pretty(&v).expect("manifest serializes");
        s.push('\n');
        s
    }
}

/// Reads the job recorded in a manifest written by [`run`].
pub fn load_manifest(path: &Path) -> Result<Job, CliError> {
    let text = read_text(path)?;
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::new(Category::ParseError, format!("{}: {e}", path.display())))?;
    let job = json!({ "command": v.get("command"), "config": v.get("config") });
    serde_json::from_value(job).map_err(|e| CliError::new(Category::SchemaError, format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn open(path: &Path) -> Result<fs::File, CliError> {
    fs::File::open(path).map_err(|e| CliError::io(path, e))
}

struct Outputs {
    dir: PathBuf,
    names: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            names: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        self.names.push(name.to_string());
        Ok(())
    }
}

fn load_grid(path: &Path, crs: &str) -> Result<Grid, CliError> {
    Ok(read_ascii_grid(open(path)?)?.with_crs(crs))
}

fn load_zones(path: &Path) -> Result<ZoneSet, CliError> {
    Ok(parse_zones(&read_text(path)?)?)
}

fn clip_mode(mode: ZonalMode, threshold: f64) -> ClipMode {
    match mode {
        ZonalMode::Center => ClipMode::Center,
        ZonalMode::Weighted => ClipMode::Weighted { threshold },
    }
}

fn check_threshold(threshold: f64) -> Result<(), CliError> {
    if threshold > 0.0 && threshold <= 1.0 {
        Ok(())
    } else {
        Err(CliError::new(Category::InvalidInput, format!("--threshold must lie in (0, 1], got {threshold}")))
    }
}

fn load_mask(path: &Path) -> Result<Mask, CliError> {
    Ok(load_zones(path)?.to_mask())
}

/// Runs a job, writing its outputs and manifest into the job's output dir.
pub fn run(job: &Job) -> Result<Manifest, CliError> {
    let mut out = Outputs::new(job.out_dir())?;
    let summary = match job {
        Job::Clip(a) => clip(a, &mut out)?,
        Job::Zonal(a) => zonal(a, &mut out)?,
        Job::Needs(a) => needs(a, &mut out)?,
        Job::Chart(a) => chart(a, &mut out)?,
        Job::Simulate(a) => simulate(a, &mut out)?,
        Job::Fit(a) => fit(a, &mut out)?,
        Job::Predict(a) => predict_cmd(a, &mut out)?,
    };
    let recorded = serde_json::to_value(job).expect("job serializes");
    let mut manifest = Manifest {
        command: job.name().to_string(),
        config: recorded["config"].clone(),
        outputs: out.names.clone(),
        summary,
    };
    let name = format!("{}_manifest.json", job.name());
    manifest.outputs.push(name.clone());
    out.write(&name, manifest.to_json())?;
    Ok(manifest)
}

fn clip(a: &ClipArgs, out: &mut Outputs) -> Result<Value, CliError> {
    check_threshold(a.threshold)?;
    let grid = load_grid(&a.raster, &a.raster_crs)?;
    let mask = load_mask(&a.mask)?;
    let clipped = clip_by_mask(&grid, &mask, clip_mode(a.mode, a.threshold))?;
    out.write("clipped.asc", write_ascii_grid(&clipped))?;
    Ok(json!({
        "input_cells": grid.valid_cell_count(),
        "retained_cells": clipped.valid_cell_count(),
        "input_total": grid.total(),
        "retained_total": clipped.total(),
    }))
}

fn zonal(a: &ZonalArgs, out: &mut Outputs) -> Result<Value, CliError> {
    check_threshold(a.threshold)?;
    let mut grid = load_grid(&a.raster, &a.raster_crs)?;
    let zones = load_zones(&a.zones)?;
    if let Some(mask) = &a.mask {
        grid = clip_by_mask(&grid, &load_mask(mask)?, clip_mode(a.mode, a.threshold))?;
    }
    let results = zonal_stats(&grid, &zones, a.mode)?;
    out.write("zonal.csv", zonal_csv_string(&results))?;
    if a.chart {
        let labels: Vec<String> = results.iter().map(|r| r.attrs.ward_name.clone()).collect();
        let values: Vec<f64> = results.iter().map(|r| r.stats.sum).collect();
        if !values.is_empty() {
            out.write("zonal_chart.svg", render_bar_chart(&labels, &values, "Ward population")?)?;
        }
    }
    Ok(json!({
        "zones": results.len(),
        "total": aggregate_total(&results),
        "grid_total": grid.total(),
    }))
}

fn needs(a: &NeedsArgs, out: &mut Outputs) -> Result<Value, CliError> {
    let std = FacilityStandard::by_name(&a.standard)
        .ok_or_else(|| CliError::new(Category::InvalidInput, format!("unknown standard {:?}", a.standard)))?;
    let wards = read_ward_populations(open(&a.zonal)?)?;
    let rows = needs_table(&wards, &std)?;
    out.write("needs.csv", needs_csv_string(&rows))?;
    out.write("needs_standard.txt", standard_manifest(&std, a.male_share))?;
    if let Some(share) = a.male_share {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let csv_err = |e: csv::Error| CliError::new(Category::IoFailure, e.to_string());
        w.write_record(["ward_name", "male_need", "female_need", "male_units", "female_units"])
            .map_err(csv_err)?;
        for ward in &wards {
            let s = split_toilets_need(ward.persons, share, &std)?;
            w.write_record([
                ward.ward_name.clone(),
                s.male_need.to_string(),
                s.female_need.to_string(),
                s.male_units.to_string(),
                s.female_units.to_string(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::new(Category::IoFailure, e.to_string()))?;
        out.write("needs_split.csv", bytes)?;
    }
    if a.chart && !rows.is_empty() {
        let labels: Vec<String> = rows.iter().map(|r| r.ward_name.clone()).collect();
        let values: Vec<f64> = rows.iter().map(|r| r.toilets_need as f64).collect();
        out.write("needs_chart.svg", render_bar_chart(&labels, &values, "Public toilets needed")?)?;
    }
    let top: Vec<&str> = sorted_by_need(&rows).into_iter().take(5).map(|r| r.ward_name.as_str()).collect();
    Ok(json!({
        "wards": rows.len(),
        "toilets_need": rows.iter().map(|r| r.toilets_need).sum::<u64>(),
        "male_units": rows.iter().map(|r| r.male_units).sum::<u64>(),
        "female_units": rows.iter().map(|r| r.female_units).sum::<u64>(),
        "top_need": top,
    }))
}

fn chart(a: &ChartArgs, out: &mut Outputs) -> Result<Value, CliError> {
    let mut r = csv::Reader::from_reader(open(&a.csv)?);
    let parse_err = |e: csv::Error| CliError::new(Category::ParseError, format!("{}: {e}", a.csv.display()));
    let header = r.headers().map_err(parse_err)?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::new(Category::SchemaError, format!("missing column {name}")))
    };
    let (lc, vc) = (col(&a.label_column)?, col(&a.value_column)?);
    let (mut labels, mut values) = (Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(parse_err)?;
        let v = rec[vc].parse::<f64>().map_err(|_| {
            CliError::new(Category::ParseError, format!("row {}: {:?} is not a number", i + 2, &rec[vc]))
        })?;
        labels.push(rec[lc].to_string());
        values.push(v);
    }
    out.write("chart.svg", render_bar_chart(&labels, &values, &a.title)?)?;
    Ok(json!({ "bars": values.len() }))
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::new(Category::InvalidInput, msg)
}

fn simulate(a: &SimulateArgs, out: &mut Outputs) -> Result<Value, CliError> {
    if !(a.sigma > 0.0 && a.effect_sd > 0.0) {
        return Err(invalid("--sigma and --effect-sd must be positive"));
    }
    if !(a.area_min > 0.0 && a.area_max >= a.area_min) {
        return Err(invalid("need 0 < --area-min <= --area-max"));
    }
    if [a.types, a.regions, a.states, a.lgas].contains(&0) {
        return Err(invalid("every factor needs at least one level"));
    }
    let levels = Levels::new(a.types, a.regions, a.states, a.lgas);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let h = HyperSds {
        t: a.effect_sd,
        r: a.effect_sd,
        s: a.effect_sd,
        l: a.effect_sd,
    };
    let mut truth = sample_prior(levels, a.covariates, SigmaMode::Pooled, h, &mut rng);
    truth.alpha0 = a.alpha0;
    truth.sigma = vec![a.sigma];
    for b in &mut truth.beta {
        *b *= a.effect_sd / BETA_PRIOR_SD;
    }
    let cfg = SimulationConfig {
        n_locations: a.locations,
        truth: truth.clone(),
        area_range: (a.area_min, a.area_max),
        unobserved: a.unobserved,
    };
    let (data, _) = simulate_dataset(&cfg, &mut rng)?;
    let mut csv = Vec::new();
    write_dataset_csv(&data, &mut csv)?;
    out.write("microcensus.csv", csv)?;
    let mut truth_json = serde_json::to_string_pretty(&truth).expect("params serialize");
    truth_json.push('\n');
    out.write("truth.json", truth_json)?;
    Ok(json!({
        "locations": data.len(),
        "observed": data.records().iter().filter(|r| r.count.is_some()).count(),
        "seed": a.seed,
    }))
}

fn fit(a: &FitArgs, out: &mut Outputs) -> Result<Value, CliError> {
    if a.draws == 0 {
        return Err(invalid("--draws must be positive"));
    }
    let data = read_dataset_csv(open(&a.data)?, None)?;
    let cfg = MhConfig {
        draws: a.draws,
        burn_in: a.burn_in,
        seed: a.seed,
        sigma_mode: a.sigma_mode,
        hyper_sds: HyperSds {
            t: a.hyper_sd,
            r: a.hyper_sd,
            s: a.hyper_sd,
            l: a.hyper_sd,
        },
        ..MhConfig::default()
    };
    let chain = fit_mh(&data, &cfg)?;
    let mut csv = Vec::new();
    write_chain_csv(&chain, &mut csv)?;
    out.write("chain.csv", csv)?;
    let beta: Vec<Value> = (0..data.n_covariates())
        .map(|k| {
            let (lo, hi) = chain.interval(|p| p.beta[k], 0.95).expect("chain is non-empty");
            let mean = chain.draws.iter().map(|p| p.beta[k]).sum::<f64>() / chain.len() as f64;
            json!({ "mean": mean, "lo95": lo, "hi95": hi })
        })
        .collect();
    Ok(json!({
        "seed": chain.seed,
        "draws": chain.len(),
        "burn_in": chain.burn_in,
        "acceptance_rate": chain.acceptance_rate,
        "observed": data.observed().len(),
        "beta": beta,
    }))
}

fn predict_cmd(a: &PredictArgs, out: &mut Outputs) -> Result<Value, CliError> {
    let chain = read_chain_csv(open(&a.chain)?)?;
    let levels = chain.levels().ok_or_else(|| invalid("chain has no draws"))?;
    let data = read_dataset_csv(open(&a.data)?, Some(levels))?;
    let cfg = PredictConfig {
        level: a.level,
        samples_per_draw: a.samples_per_draw,
        seed: a.seed,
    };
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::new(Category::IoFailure, e.to_string());
    w.write_record(["loc_id", "mean", "lo", "hi"]).map_err(csv_err)?;
    for rec in data.records() {
        let p = predict(&chain, &rec.key, &rec.x, rec.area, &cfg)?;
        w.write_record([rec.id.clone(), p.mean.to_string(), p.lo.to_string(), p.hi.to_string()])
            .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::new(Category::IoFailure, e.to_string()))?;
    out.write("predictions.csv", bytes)?;
    Ok(json!({ "locations": data.len(), "level": a.level, "seed": a.seed }))
}
