//! File formats and the command implementations behind the `seqm` binary.
//!
//! Tabular data is CSV with a mandatory header; metadata, configuration and
//! truth files are flat TOML with unknown keys rejected. Timestamps cross the
//! file boundary as ISO-8601 UTC strings with nanosecond precision; all
//! internal arithmetic uses seconds relative to the run's epoch, which
//! defaults to two minutes before the detection time and is recorded in the
//! fit output metadata.
//!
//! A dataset directory holds three files:
//!
//! ```text
//! triggers.csv    id,lat,lon,trigger_time_utc
//! active.csv      id,lat,lon
//! metadata.toml   detection_lat, detection_lon, detection_time_utc
//! ```
//!
//! `fit` writes `samples.csv`, `summary.csv`, `telemetry.csv` and
//! `fit_metadata.toml`; `simulate` writes one dataset directory per scenario
//! plus a `truth.toml` the fit never reads; `summarize` rebuilds the summary
//! table and the epicentre density grid from a samples file; `study` streams
//! the simulation-study error table; `diagnose` emits trace, density and
//! autocorrelation data.

use crate::geo::GeoPoint;
use crate::model::{Dataset, PriorConfig, SmartphoneRecord, WaveConstants};
use crate::sampler::{self, SamplerConfig, SamplerError, SamplerOutput};
use crate::simulator::{self, ScenarioConfig, StudyConfig, StudyRecord};
use crate::summary::{self, MarginalSummary};
use chrono::{DateTime, Duration, SecondsFormat, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const PARAM_NAMES: [&str; 6] = ["lat0", "lon0", "depth_km", "t0_s", "alpha", "pi"];

/// Seconds between the default epoch and the detection time.
pub const DEFAULT_EPOCH_LEAD_S: f64 = 120.0;

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed or missing input; the binary exits with code 2.
    #[error("{0}")]
    Input(String),
    /// A failure after inputs validated; the binary exits with code 3.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

fn input_err(context: impl std::fmt::Display) -> CliError {
    CliError::Input(context.to_string())
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::InvalidConfig(_) => CliError::Input(e.to_string()),
            SamplerError::Init(_) => CliError::Runtime(e.to_string()),
        }
    }
}

/// Command-line overrides shared by every command.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub temperatures: Option<usize>,
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Default, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    pub epicentre_sd_deg: Option<f64>,
    pub depth_bounds_km: Option<[f64; 2]>,
    pub origin_rate_per_s: Option<f64>,
    pub alpha_beta: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Deserialize, Default, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct WaveSection {
    pub v_p_km_s: Option<f64>,
    pub v_s_km_s: Option<f64>,
    pub window_s: Option<f64>,
    pub background_rate_per_s: Option<f64>,
}

/// Fit configuration file. Every field is optional; omitted fields fall back
/// to the operational defaults.
#[derive(Debug, Clone, Deserialize, Default, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub temperatures: Option<usize>,
    pub gamma: Option<f64>,
    /// Epoch override; default is two minutes before the detection time.
    pub epoch_utc: Option<String>,
    #[serde(default)]
    pub prior: PriorSection,
    #[serde(default)]
    pub waves: WaveSection,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| input_err(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str(&text)
                    .map_err(|e| input_err(format!("config {}: {e}", p.display())))
            }
        }
    }

    fn sampler_config(&self, overrides: &Overrides) -> SamplerConfig {
        let defaults = SamplerConfig::default();
        SamplerConfig {
            iterations: overrides.iterations.or(self.iterations).unwrap_or(defaults.iterations),
            burn_in: overrides.burn_in.or(self.burn_in).unwrap_or(defaults.burn_in),
            temperatures: overrides
                .temperatures
                .or(self.temperatures)
                .unwrap_or(defaults.temperatures),
            seed: overrides.seed.or(self.seed).unwrap_or(defaults.seed),
            ..defaults
        }
    }

    fn gamma(&self, overrides: &Overrides) -> f64 {
        overrides.gamma.or(self.gamma).unwrap_or(0.95)
    }

    fn wave_constants(&self) -> WaveConstants {
        let d = WaveConstants::default();
        WaveConstants::with_window(
            self.waves.v_p_km_s.unwrap_or(d.v_p),
            self.waves.v_s_km_s.unwrap_or(d.v_s),
            self.waves.window_s.unwrap_or(d.window_s),
            self.waves.background_rate_per_s.unwrap_or(d.background_rate),
        )
    }

    fn prior_config(&self, detection: GeoPoint) -> PriorConfig {
        let mut prior = PriorConfig::for_detection(detection);
        if let Some(sd) = self.prior.epicentre_sd_deg {
            prior.epicentre_sd_deg = sd;
        }
        if let Some([lo, hi]) = self.prior.depth_bounds_km {
            prior.depth_bounds_km = (lo, hi);
        }
        if let Some(rate) = self.prior.origin_rate_per_s {
            prior.origin_rate = rate;
        }
        if let Some([a, b]) = self.prior.alpha_beta {
            prior.alpha_beta = (a, b);
        }
        prior
    }
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetMetadata {
    pub detection_lat: f64,
    pub detection_lon: f64,
    pub detection_time_utc: String,
}

fn parse_utc(s: &str, context: &str) -> Result<DateTime<Utc>, CliError> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| input_err(format!("{context}: bad UTC timestamp {s:?}: {e}")))
}

fn seconds_since(t: DateTime<Utc>, epoch: DateTime<Utc>) -> f64 {
    (t - epoch).num_nanoseconds().map(|ns| ns as f64 / 1e9).unwrap_or_else(|| {
        (t - epoch).num_milliseconds() as f64 / 1e3
    })
}

fn utc_after(epoch: DateTime<Utc>, seconds: f64) -> String {
    (epoch + Duration::nanoseconds((seconds * 1e9).round() as i64))
        .to_rfc3339_opts(SecondsFormat::Nanos, true)
}

/// A loaded dataset plus the epoch its internal times refer to.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    pub epoch: DateTime<Utc>,
    pub detection_time: DateTime<Utc>,
    /// Trigger rows dropped because they fell outside the observation window.
    pub dropped_rows: usize,
}

/// Reads `triggers.csv`, `active.csv` and `metadata.toml` from a directory.
/// Triggers outside the `[epoch, detection]` window are dropped with a
/// warning on stderr rather than failing the load.
pub fn load_dataset(dir: &Path, epoch_override: Option<&str>) -> Result<LoadedDataset, CliError> {
    let meta_path = dir.join("metadata.toml");
    let meta_text = fs::read_to_string(&meta_path)
        .map_err(|e| input_err(format!("cannot read {}: {e}", meta_path.display())))?;
    let meta: DatasetMetadata = toml::from_str(&meta_text)
        .map_err(|e| input_err(format!("{}: {e}", meta_path.display())))?;
    let detection_location = GeoPoint::new(meta.detection_lat, meta.detection_lon)
        .map_err(|e| input_err(format!("{}: {e}", meta_path.display())))?;
    let detection_time = parse_utc(&meta.detection_time_utc, "metadata.toml")?;
    let epoch = match epoch_override {
        Some(s) => parse_utc(s, "epoch")?,
        None => detection_time - Duration::nanoseconds((DEFAULT_EPOCH_LEAD_S * 1e9) as i64),
    };
    let detection_time_s = seconds_since(detection_time, epoch);
    if detection_time_s <= 0.0 {
        return Err(input_err(format!(
            "epoch {} is not before the detection time {}",
            epoch, detection_time
        )));
    }

    let mut records = Vec::new();
    let mut dropped = 0usize;

    let trig_path = dir.join("triggers.csv");
    let mut seen = HashSet::new();
    for (line, row) in read_csv_rows(&trig_path, &["id", "lat", "lon", "trigger_time_utc"])? {
        let id = row[0].clone();
        if !seen.insert(id.clone()) {
            return Err(input_err(format!(
                "{} line {line}: duplicate id {id:?}",
                trig_path.display()
            )));
        }
        let lat = parse_f64(&row[1], &trig_path, line, "lat")?;
        let lon = parse_f64(&row[2], &trig_path, line, "lon")?;
        let location = GeoPoint::new(lat, lon)
            .map_err(|e| input_err(format!("{} line {line}: {e}", trig_path.display())))?;
        let t = parse_utc(&row[3], &format!("{} line {line}", trig_path.display()))?;
        let y = seconds_since(t, epoch);
        if y < 0.0 || y > detection_time_s {
            eprintln!(
                "warning: {} line {line}: trigger at {} is outside the observation window; row dropped",
                trig_path.display(),
                row[3]
            );
            dropped += 1;
            continue;
        }
        records.push(SmartphoneRecord {
            location,
            observed_time_s: y,
            triggered: y < detection_time_s,
        });
    }

    let active_path = dir.join("active.csv");
    let mut seen_active = HashSet::new();
    for (line, row) in read_csv_rows(&active_path, &["id", "lat", "lon"])? {
        let id = row[0].clone();
        if !seen_active.insert(id.clone()) {
            return Err(input_err(format!(
                "{} line {line}: duplicate id {id:?}",
                active_path.display()
            )));
        }
        let lat = parse_f64(&row[1], &active_path, line, "lat")?;
        let lon = parse_f64(&row[2], &active_path, line, "lon")?;
        let location = GeoPoint::new(lat, lon)
            .map_err(|e| input_err(format!("{} line {line}: {e}", active_path.display())))?;
        records.push(SmartphoneRecord {
            location,
            observed_time_s: detection_time_s,
            triggered: false,
        });
    }

    let dataset = Dataset::new(records, detection_location, detection_time_s)
        .map_err(|e| input_err(format!("dataset in {}: {e}", dir.display())))?;
    Ok(LoadedDataset {
        dataset,
        epoch,
        detection_time,
        dropped_rows: dropped,
    })
}

fn parse_f64(s: &str, path: &Path, line: usize, field: &str) -> Result<f64, CliError> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| input_err(format!("{} line {line}: bad {field} {s:?}", path.display())))
}

type CsvRow = (usize, Vec<String>);

fn read_csv_rows(path: &Path, expected_header: &[&str]) -> Result<Vec<CsvRow>, CliError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| input_err(format!("cannot read {}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| input_err(format!("{}: {e}", path.display())))?;
    let got: Vec<&str> = header.iter().collect();
    if got != expected_header {
        return Err(input_err(format!(
            "{}: expected header {expected_header:?}, got {got:?}",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| input_err(format!("{} line {}: {e}", path.display(), i + 2)))?;
        rows.push((i + 2, record.iter().map(str::to_string).collect()));
    }
    Ok(rows)
}

fn create_out_dir(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn write_samples(path: &Path, output: &SamplerOutput) -> Result<(), CliError> {
    let mut text = String::with_capacity(output.draws.len() * 64);
    text.push_str(&PARAM_NAMES.join(","));
    text.push('\n');
    for draw in &output.draws {
        let row: Vec<String> = draw.iter().map(|v| fmt_f64(*v)).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    write_file(path, &text)
}

/// Reads a samples file back into per-parameter columns.
pub fn read_samples(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let rows = read_csv_rows(path, &PARAM_NAMES)?;
    let mut columns = vec![Vec::with_capacity(rows.len()); PARAM_NAMES.len()];
    for (line, row) in rows {
        if row.len() != PARAM_NAMES.len() {
            return Err(input_err(format!(
                "{} line {line}: expected {} fields, got {}",
                path.display(),
                PARAM_NAMES.len(),
                row.len()
            )));
        }
        for (j, field) in row.iter().enumerate() {
            columns[j].push(parse_f64(field, path, line, PARAM_NAMES[j])?);
        }
    }
    if columns[0].is_empty() {
        return Err(input_err(format!("{}: no draws", path.display())));
    }
    Ok(columns)
}

fn format_intervals(s: &MarginalSummary) -> String {
    s.hpdr
        .iter()
        .map(|iv| format!("{}..{}", fmt_f64(iv.lo), fmt_f64(iv.hi)))
        .collect::<Vec<_>>()
        .join(";")
}

fn write_summary_table(path: &Path, summaries: &[MarginalSummary]) -> Result<(), CliError> {
    let mut text = String::from(
        "parameter,mode,level,mode_interval_lo,mode_interval_hi,n_intervals,intervals,ess,act\n",
    );
    for s in summaries {
        let mode_iv = s.mode_interval();
        let ess = s.ess.map(fmt_f64).unwrap_or_else(|| "NA".into());
        let act = s.act.map(fmt_f64).unwrap_or_else(|| "NA".into());
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            s.name,
            fmt_f64(s.mode),
            fmt_f64(s.level),
            fmt_f64(mode_iv.lo),
            fmt_f64(mode_iv.hi),
            s.hpdr.len(),
            format_intervals(s),
            ess,
            act
        ));
    }
    write_file(path, &text)
}

fn write_telemetry(path: &Path, output: &SamplerOutput) -> Result<(), CliError> {
    let n_temps = output.ladder.len();
    let mut header = String::from("iteration,xi_block1,xi_block2,xi_block3,swap_pair,swap_omega,swap_accepted");
    for l in 0..n_temps {
        header.push_str(&format!(",beta_{l}"));
    }
    header.push('\n');
    let mut text = header;
    for t in &output.telemetry {
        let xi: Vec<String> = t.block_xi.iter().map(|v| fmt_f64(*v)).collect();
        let (pair, omega, accepted) = match t.swap {
            Some(s) => (s.pair.to_string(), fmt_f64(s.probability), s.accepted.to_string()),
            None => (String::new(), String::new(), String::new()),
        };
        text.push_str(&format!(
            "{},{},{},{},{}",
            t.iteration,
            xi.join(","),
            pair,
            omega,
            accepted
        ));
        for beta in &t.betas {
            text.push(',');
            text.push_str(&fmt_f64(*beta));
        }
        text.push('\n');
    }
    write_file(path, &text)
}

fn summarize_columns(
    columns: &[Vec<f64>],
    gamma: f64,
) -> Result<Vec<MarginalSummary>, summary::SummaryError> {
    PARAM_NAMES
        .iter()
        .zip(columns)
        .map(|(name, col)| summary::marginal_summary(name, col, gamma))
        .collect()
}

/// Fits a dataset directory and writes samples, summary, telemetry and run
/// metadata into `out`.
pub fn cmd_fit(
    data_dir: &Path,
    config_path: Option<&Path>,
    out: &Path,
    overrides: &Overrides,
) -> Result<(), CliError> {
    let config = RunConfig::load(config_path)?;
    let loaded = load_dataset(data_dir, config.epoch_utc.as_deref())?;
    let sampler_cfg = config.sampler_config(overrides);
    let gamma = config.gamma(overrides);
    let prior = config.prior_config(loaded.dataset.detection_location());
    let constants = config.wave_constants();

    let output = sampler::run(&loaded.dataset, &prior, &constants, &sampler_cfg)?;

    create_out_dir(out)?;
    write_samples(&out.join("samples.csv"), &output)?;
    let columns: Vec<Vec<f64>> = (0..PARAM_NAMES.len()).map(|i| output.column(i)).collect();
    let summaries =
        summarize_columns(&columns, gamma).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_summary_table(&out.join("summary.csv"), &summaries)?;
    write_telemetry(&out.join("telemetry.csv"), &output)?;

    let meta = format!(
        "epoch_utc = {:?}\ndetection_time_utc = {:?}\nseed = {}\niterations = {}\nburn_in = {}\ntemperatures = {}\ngamma = {}\nn_records = {}\nn_triggered = {}\ndropped_rows = {}\n",
        loaded.epoch.to_rfc3339_opts(SecondsFormat::Nanos, true),
        loaded.detection_time.to_rfc3339_opts(SecondsFormat::Nanos, true),
        sampler_cfg.seed,
        sampler_cfg.iterations,
        sampler_cfg.burn_in,
        sampler_cfg.temperatures,
        fmt_f64(gamma),
        loaded.dataset.records().len(),
        loaded.dataset.n_triggered(),
        loaded.dropped_rows,
    );
    write_file(&out.join("fit_metadata.toml"), &meta)
}

/// Scenario axis entry: either one variance for both axes or an
/// (N-S, E-W) pair.
#[derive(Debug, Clone, Copy, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum VarianceSpec {
    Equal(f64),
    Pair([f64; 2]),
}

impl VarianceSpec {
    pub fn pair(&self) -> (f64, f64) {
        match self {
            VarianceSpec::Equal(v) => (*v, *v),
            VarianceSpec::Pair([ns, ew]) => (*ns, *ew),
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub phone_counts: Vec<usize>,
    pub spatial_variances: Vec<VarianceSpec>,
    pub seed: Option<u64>,
}

impl SimulateConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| input_err(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Self =
            toml::from_str(&text).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
        if cfg.phone_counts.is_empty() || cfg.spatial_variances.is_empty() {
            return Err(input_err("simulate config needs phone_counts and spatial_variances"));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TruthFile {
    pub lat: f64,
    pub lon: f64,
    pub depth_km: f64,
    pub origin_time_s: f64,
    pub origin_time_utc: String,
    pub censoring_time_s: f64,
    pub censoring_time_utc: String,
    pub alpha: f64,
    pub pi: f64,
    pub n_cured: usize,
}

impl TruthFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| input_err(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| input_err(format!("{}: {e}", path.display())))
    }
}

/// Epoch used when writing simulated datasets to disk: simulation times are
/// already epoch-relative, so any fixed instant works.
fn simulation_epoch() -> DateTime<Utc> {
    DateTime::parse_from_rfc3339("2020-01-01T00:00:00Z")
        .unwrap()
        .with_timezone(&Utc)
}

/// Generates the scenario grid; each scenario lands in its own directory
/// `n<N>_ns<var>_ew<var>/` with the three dataset files and `truth.toml`.
pub fn cmd_simulate(
    config_path: &Path,
    out: &Path,
    overrides: &Overrides,
) -> Result<Vec<PathBuf>, CliError> {
    let cfg = SimulateConfig::load(config_path)?;
    let master_seed = overrides.seed.or(cfg.seed).unwrap_or(0);
    create_out_dir(out)?;
    let epoch = simulation_epoch();
    let mut dirs = Vec::new();
    let mut scenario_idx = 0u64;
    for &n in &cfg.phone_counts {
        for spec in &cfg.spatial_variances {
            let (var_ns, var_ew) = spec.pair();
            let mut seed_rng = ChaCha8Rng::seed_from_u64(master_seed);
            seed_rng.set_stream(scenario_idx);
            let scenario = ScenarioConfig {
                n,
                spatial_var_ns: var_ns,
                spatial_var_ew: var_ew,
                seed: seed_rng.random::<u64>(),
            };
            let run = simulator::simulate(&scenario)
                .map_err(|e| input_err(format!("scenario n={n}: {e}")))?;
            let dir = out.join(simulator::scenario_label(n, var_ns, var_ew));
            create_out_dir(&dir)?;

            let mut triggers = String::from("id,lat,lon,trigger_time_utc\n");
            let mut active = String::from("id,lat,lon\n");
            for (i, r) in run.dataset.records().iter().enumerate() {
                if r.triggered {
                    triggers.push_str(&format!(
                        "t{:04},{},{},{}\n",
                        i,
                        fmt_f64(r.location.lat()),
                        fmt_f64(r.location.lon()),
                        utc_after(epoch, r.observed_time_s)
                    ));
                } else {
                    active.push_str(&format!(
                        "a{:04},{},{}\n",
                        i,
                        fmt_f64(r.location.lat()),
                        fmt_f64(r.location.lon())
                    ));
                }
            }
            write_file(&dir.join("triggers.csv"), &triggers)?;
            write_file(&dir.join("active.csv"), &active)?;

            let meta = DatasetMetadata {
                detection_lat: run.dataset.detection_location().lat(),
                detection_lon: run.dataset.detection_location().lon(),
                detection_time_utc: utc_after(epoch, run.dataset.detection_time_s()),
            };
            let meta_text = toml::to_string(&meta)
                .map_err(|e| CliError::Runtime(format!("metadata serialisation: {e}")))?;
            write_file(&dir.join("metadata.toml"), &meta_text)?;

            let truth = &run.truth;
            let truth_file = TruthFile {
                lat: truth.params.theta.epicentre.lat(),
                lon: truth.params.theta.epicentre.lon(),
                depth_km: truth.params.theta.depth_km,
                origin_time_s: truth.params.theta.origin_time_s,
                origin_time_utc: utc_after(epoch, truth.params.theta.origin_time_s),
                censoring_time_s: truth.censoring_time_s,
                censoring_time_utc: utc_after(epoch, truth.censoring_time_s),
                alpha: truth.params.alpha,
                pi: truth.params.pi,
                n_cured: truth.cured.iter().filter(|c| **c).count(),
            };
            let truth_text = toml::to_string(&truth_file)
                .map_err(|e| CliError::Runtime(format!("truth serialisation: {e}")))?;
            write_file(&dir.join("truth.toml"), &truth_text)?;
            dirs.push(dir);
            scenario_idx += 1;
        }
    }
    Ok(dirs)
}

/// Rebuilds the summary table from a samples file and writes the epicentre
/// density grid alongside it.
pub fn cmd_summarize(
    samples_path: &Path,
    out: &Path,
    overrides: &Overrides,
) -> Result<(), CliError> {
    let gamma = overrides.gamma.unwrap_or(0.95);
    if !(0.0 < gamma && gamma < 1.0) {
        return Err(input_err(format!("gamma {gamma} must lie in (0, 1)")));
    }
    let columns = read_samples(samples_path)?;
    let summaries =
        summarize_columns(&columns, gamma).map_err(|e| input_err(e.to_string()))?;
    create_out_dir(out)?;
    write_summary_table(&out.join("summary.csv"), &summaries)?;

    let epi = summary::epicentre_summary(&columns[0], &columns[1], gamma)
        .map_err(|e| input_err(e.to_string()))?;
    let n = epi.lat_grid.len();
    let mut grid = String::from("lat,lon,density,in_hpdr\n");
    for i in 0..n {
        for j in 0..epi.lon_grid.len() {
            grid.push_str(&format!(
                "{},{},{},{}\n",
                fmt_f64(epi.lat_grid[i]),
                fmt_f64(epi.lon_grid[j]),
                fmt_f64(epi.density[i * epi.lon_grid.len() + j]),
                u8::from(epi.hpdr_mask[i * epi.lon_grid.len() + j])
            ));
        }
    }
    write_file(&out.join("epicentre_density.csv"), &grid)
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StudyFileConfig {
    pub phone_counts: Vec<usize>,
    pub spatial_variances: Vec<VarianceSpec>,
    pub runs: usize,
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub temperatures: Option<usize>,
    pub gamma: Option<f64>,
}

impl StudyFileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| input_err(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Self =
            toml::from_str(&text).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
        if cfg.runs == 0 || cfg.phone_counts.is_empty() || cfg.spatial_variances.is_empty() {
            return Err(input_err("study config needs runs, phone_counts and spatial_variances"));
        }
        Ok(cfg)
    }

    fn study_config(&self, overrides: &Overrides) -> StudyConfig {
        let defaults = SamplerConfig::default();
        StudyConfig {
            phone_counts: self.phone_counts.clone(),
            spatial_variances: self.spatial_variances.iter().map(|v| v.pair()).collect(),
            runs: self.runs,
            seed: overrides.seed.or(self.seed).unwrap_or(0),
            sampler: SamplerConfig {
                iterations: overrides.iterations.or(self.iterations).unwrap_or(defaults.iterations),
                burn_in: overrides.burn_in.or(self.burn_in).unwrap_or(defaults.burn_in),
                temperatures: overrides
                    .temperatures
                    .or(self.temperatures)
                    .unwrap_or(defaults.temperatures),
                ..defaults
            },
            gamma: overrides.gamma.or(self.gamma).unwrap_or(0.95),
        }
    }
}

pub const STUDY_HEADER: &str = "scenario,n,spatial_var_ns,spatial_var_ew,run,true_lat,true_lon,true_depth_km,true_t0_s,true_alpha,true_pi,est_lat,est_lon,est_depth_km,est_t0_s,est_alpha,est_pi,epicentre_error_km,log10_epicentre_error,t0_error_s,status";

pub fn study_record_row(r: &StudyRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.scenario,
        r.n,
        fmt_f64(r.spatial_var_ns),
        fmt_f64(r.spatial_var_ew),
        r.run,
        fmt_f64(r.true_lat),
        fmt_f64(r.true_lon),
        fmt_f64(r.true_depth_km),
        fmt_f64(r.true_t0_s),
        fmt_f64(r.true_alpha),
        fmt_f64(r.true_pi),
        fmt_f64(r.est_lat),
        fmt_f64(r.est_lon),
        fmt_f64(r.est_depth_km),
        fmt_f64(r.est_t0_s),
        fmt_f64(r.est_alpha),
        fmt_f64(r.est_pi),
        fmt_f64(r.epicentre_error_km),
        fmt_f64(r.log10_epicentre_error),
        fmt_f64(r.t0_error_s),
        r.status
    )
}

/// Runs the scenario grid and streams `study.csv`: the header lands first and
/// each scenario's rows are flushed as they complete, so an aborted study
/// leaves a well-formed partial file.
pub fn cmd_study(config_path: &Path, out: &Path, overrides: &Overrides) -> Result<(), CliError> {
    let file_cfg = StudyFileConfig::load(config_path)?;
    let cfg = file_cfg.study_config(overrides);
    create_out_dir(out)?;
    let path = out.join("study.csv");
    let mut file = fs::File::create(&path)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))?;
    writeln!(file, "{STUDY_HEADER}")
        .map_err(|e| CliError::Runtime(format!("write {}: {e}", path.display())))?;
    file.flush().ok();

    let mut scenario_idx = 0;
    for &n in &cfg.phone_counts {
        for &vars in &cfg.spatial_variances {
            let records = simulator::run_scenario(&cfg, scenario_idx, n, vars);
            for r in &records {
                writeln!(file, "{}", study_record_row(r))
                    .map_err(|e| CliError::Runtime(format!("write {}: {e}", path.display())))?;
            }
            file.flush().ok();
            scenario_idx += 1;
        }
    }
    Ok(())
}

/// Emits plot-ready diagnostics from a samples file: the draw traces, the
/// marginal density grids, autocorrelations to lag 100 and the ESS table.
pub fn cmd_diagnose(samples_path: &Path, out: &Path) -> Result<(), CliError> {
    let columns = read_samples(samples_path)?;
    create_out_dir(out)?;

    let mut trace = String::from("draw,");
    trace.push_str(&PARAM_NAMES.join(","));
    trace.push('\n');
    for i in 0..columns[0].len() {
        trace.push_str(&format!("{i}"));
        for col in &columns {
            trace.push(',');
            trace.push_str(&fmt_f64(col[i]));
        }
        trace.push('\n');
    }
    write_file(&out.join("trace.csv"), &trace)?;

    let mut density = String::from("parameter,value,density\n");
    for (name, col) in PARAM_NAMES.iter().zip(&columns) {
        let (grid, dens) =
            summary::density_estimate(col).map_err(|e| input_err(e.to_string()))?;
        for (x, d) in grid.iter().zip(&dens) {
            density.push_str(&format!("{name},{},{}\n", fmt_f64(*x), fmt_f64(*d)));
        }
    }
    write_file(&out.join("density.csv"), &density)?;

    let mut autocorr = String::from("parameter,lag,autocorrelation\n");
    let mut table = String::from("parameter,ess,act,lag1_autocorrelation\n");
    for (name, col) in PARAM_NAMES.iter().zip(&columns) {
        let diag = summary::diagnostics(col);
        for (lag, rho) in diag.autocorr.iter().enumerate() {
            autocorr.push_str(&format!("{name},{lag},{}\n", fmt_f64(*rho)));
        }
        let ess = diag.ess.map(fmt_f64).unwrap_or_else(|| "NA".into());
        let act = diag.act.map(fmt_f64).unwrap_or_else(|| "NA".into());
        let lag1 = diag.autocorr.get(1).copied().unwrap_or(0.0);
        table.push_str(&format!("{name},{ess},{act},{}\n", fmt_f64(lag1)));
    }
    write_file(&out.join("autocorr.csv"), &autocorr)?;
    write_file(&out.join("diagnostics.csv"), &table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_config_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("seed = 1\nunknown_key = 2\n");
        assert!(err.is_err());
        let err = toml::from_str::<RunConfig>("[prior]\ntypo_field = 1.0\n");
        assert!(err.is_err());
    }

    #[test]
    fn variance_spec_accepts_scalars_and_pairs() {
        let cfg: SimulateConfig = toml::from_str(
            "phone_counts = [25]\nspatial_variances = [1.0, [0.25, 1.0]]\nseed = 1\n",
        )
        .unwrap();
        assert_eq!(cfg.spatial_variances[0].pair(), (1.0, 1.0));
        assert_eq!(cfg.spatial_variances[1].pair(), (0.25, 1.0));
    }

    #[test]
    fn utc_round_trip_is_stable() {
        let epoch = simulation_epoch();
        for &s in &[0.0, 63.123456789, 119.999999999, 150.5] {
            let text = utc_after(epoch, s);
            let parsed = parse_utc(&text, "test").unwrap();
            let back = seconds_since(parsed, epoch);
            // A second pass through the formatter reproduces the same string.
            assert_eq!(utc_after(epoch, back), text);
            assert!((back - s).abs() < 1e-9 * s.abs().max(1.0));
        }
    }

    #[test]
    fn run_config_override_precedence() {
        let cfg: RunConfig = toml::from_str("seed = 5\niterations = 1000\n").unwrap();
        let overrides = Overrides {
            seed: Some(9),
            ..Overrides::default()
        };
        let sampler_cfg = cfg.sampler_config(&overrides);
        assert_eq!(sampler_cfg.seed, 9);
        assert_eq!(sampler_cfg.iterations, 1000);
        assert_eq!(sampler_cfg.burn_in, SamplerConfig::default().burn_in);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Input("x".into()).exit_code(), 2);
        assert_eq!(CliError::Runtime("x".into()).exit_code(), 3);
    }
}
