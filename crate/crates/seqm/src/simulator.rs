//! Synthetic smartphone networks and trigger data for the simulation study.
//!
//! A scenario draws the network from a bivariate normal in degrees, the
//! source parameters from fixed uniform ranges, labels the cured phones
//! exactly, and generates uncured trigger times by inverting the individual
//! survival function numerically. Runs are independent and each owns an RNG
//! stream derived from (master seed, scenario, run), so study output is
//! deterministic no matter how runs are scheduled.

use crate::geo::{self, GeoPoint};
use crate::model::{
    self, Dataset, DatasetError, EarthquakeParams, ModelParams, SmartphoneRecord, WaveConstants,
    PriorConfig,
};
use crate::sampler::{self, SamplerConfig, SamplerError};
use crate::summary::{self, SummaryError};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario needs at least two phones, got {0}")]
    TooFewPhones(usize),
    #[error("spatial variance must be positive, got {0}")]
    BadVariance(f64),
    #[error("survival inversion could not bracket u = {0}")]
    Bracket(f64),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Summary(#[from] SummaryError),
}

/// One simulation scenario: network size and the N-S / E-W spatial variances
/// of the phone cloud, in squared degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioConfig {
    pub n: usize,
    pub spatial_var_ns: f64,
    pub spatial_var_ew: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    fn validate(&self) -> Result<(), SimError> {
        if self.n < 2 {
            return Err(SimError::TooFewPhones(self.n));
        }
        if self.spatial_var_ns <= 0.0 || self.spatial_var_ew <= 0.0 {
            return Err(SimError::BadVariance(self.spatial_var_ns.min(self.spatial_var_ew)));
        }
        Ok(())
    }
}

/// Ground truth behind one simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    pub params: ModelParams,
    pub censoring_time_s: f64,
    /// Per-phone cure labels, aligned with the network order.
    pub cured: Vec<bool>,
    /// Per-phone uncensored trigger times (before censoring at `T*`).
    pub trigger_times_s: Vec<f64>,
}

/// A generated dataset together with the truth that produced it.
#[derive(Debug, Clone)]
pub struct SimRun {
    pub truth: SimTruth,
    pub network: Vec<GeoPoint>,
    pub dataset: Dataset,
}

/// Phone locations: latitude ~ N(0, var_ns), longitude ~ N(0, var_ew),
/// in degrees.
pub fn gen_network(
    n: usize,
    spatial_var_ns: f64,
    spatial_var_ew: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<GeoPoint> {
    let sd_ns = spatial_var_ns.sqrt();
    let sd_ew = spatial_var_ew.sqrt();
    (0..n)
        .map(|_| {
            let lat: f64 = sd_ns * rng.sample::<f64, _>(StandardNormal);
            let lon: f64 = sd_ew * rng.sample::<f64, _>(StandardNormal);
            GeoPoint::new(lat.clamp(-89.0, 89.0), lon).expect("generated point is valid")
        })
        .collect()
}

/// True parameters: epicentre uniform on [-3, 3]^2 degrees, depth uniform on
/// [0, 100] km, origin time uniform on [5, 30] s, wave weight uniform on
/// (0, 1), cure fraction uniform on [0.5, 0.95]. The censoring time lands
/// 60 to 120 seconds after the origin.
pub fn gen_truth(rng: &mut ChaCha8Rng) -> (ModelParams, f64) {
    let lat = -3.0 + 6.0 * rng.random::<f64>();
    let lon = -3.0 + 6.0 * rng.random::<f64>();
    let depth = 100.0 * rng.random::<f64>();
    let t0 = 5.0 + 25.0 * rng.random::<f64>();
    let alpha = rng.random::<f64>().clamp(1e-12, 1.0 - 1e-12);
    let pi = 0.5 + 0.45 * rng.random::<f64>();
    let t_star = t0 + 60.0 + 60.0 * rng.random::<f64>();
    (
        ModelParams {
            theta: EarthquakeParams {
                epicentre: GeoPoint::new(lat, lon).unwrap(),
                depth_km: depth,
                origin_time_s: t0,
            },
            alpha,
            pi,
        },
        t_star,
    )
}

/// Individual uncured survival: the cure mixture of the truth with `pi = 0`,
/// background factor included.
fn uncured_survival(t: f64, truth: &ModelParams, z: GeoPoint, c: &WaveConstants) -> f64 {
    let phi = ModelParams { pi: 0.0, ..*truth };
    model::survival(t, &phi, z, c)
}

/// Solves `S(t) = u` for the uncured survival by bisection to 1e-6 s,
/// growing the bracket geometrically from `[0, T* + 1000]` if needed.
fn invert_uncured_survival(
    u: f64,
    truth: &ModelParams,
    z: GeoPoint,
    t_star: f64,
    c: &WaveConstants,
) -> Result<f64, SimError> {
    let s = |t: f64| uncured_survival(t, truth, z, c);
    if s(0.0) <= u {
        // Essentially all mass of the wave windows sits at positive times;
        // a draw this extreme maps to the window edge.
        return Ok(0.0);
    }
    let mut hi = t_star + 1000.0;
    let mut guard = 0;
    while s(hi) > u {
        hi *= 2.0;
        guard += 1;
        if guard > 60 {
            return Err(SimError::Bracket(u));
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if s(mid) > u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Generates the trigger data for a network under known truth: exactly
/// `round(pi * n)` phones are cured and draw background-only exponential
/// times; the rest invert the uncured survival; times past `T*` censor.
pub fn gen_triggers(
    truth: &ModelParams,
    t_star: f64,
    network: &[GeoPoint],
    c: &WaveConstants,
    rng: &mut ChaCha8Rng,
) -> Result<(Dataset, SimTruth), SimError> {
    let n = network.len();
    let n_cured = (truth.pi * n as f64).round() as usize;
    let mut cured = vec![false; n];
    for idx in rand::seq::index::sample(rng, n, n_cured.min(n)) {
        cured[idx] = true;
    }
    let background = Exp::new(c.background_rate).expect("positive rate");

    let mut trigger_times = Vec::with_capacity(n);
    let mut records = Vec::with_capacity(n);
    for (i, z) in network.iter().enumerate() {
        let t = if cured[i] {
            rng.sample(background)
        } else {
            let u: f64 = rng.random::<f64>().clamp(f64::MIN_POSITIVE, 1.0 - 1e-16);
            invert_uncured_survival(u, truth, *z, t_star, c)?
        };
        trigger_times.push(t);
        if t < t_star {
            records.push(SmartphoneRecord {
                location: *z,
                observed_time_s: t,
                triggered: true,
            });
        } else {
            records.push(SmartphoneRecord {
                location: *z,
                observed_time_s: t_star,
                triggered: false,
            });
        }
    }

    // Detection location: centre of mass of the triggers, like the network's
    // own rough estimate. Falls back to the network centroid when nothing
    // triggered.
    let triggered: Vec<&SmartphoneRecord> = records.iter().filter(|r| r.triggered).collect();
    let z_star = if triggered.is_empty() {
        centroid(network)
    } else {
        let lat = triggered.iter().map(|r| r.location.lat()).sum::<f64>() / triggered.len() as f64;
        let lon = triggered.iter().map(|r| r.location.lon()).sum::<f64>() / triggered.len() as f64;
        GeoPoint::new(lat, lon).unwrap()
    };

    let dataset = Dataset::new(records, z_star, t_star)?;
    Ok((
        dataset,
        SimTruth {
            params: *truth,
            censoring_time_s: t_star,
            cured,
            trigger_times_s: trigger_times,
        },
    ))
}

fn centroid(points: &[GeoPoint]) -> GeoPoint {
    let lat = points.iter().map(|p| p.lat()).sum::<f64>() / points.len() as f64;
    let lon = points.iter().map(|p| p.lon()).sum::<f64>() / points.len() as f64;
    GeoPoint::new(lat, lon).unwrap()
}

/// Generates one complete scenario run from its own seed.
pub fn simulate(cfg: &ScenarioConfig) -> Result<SimRun, SimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let network = gen_network(cfg.n, cfg.spatial_var_ns, cfg.spatial_var_ew, &mut rng);
    let (truth, t_star) = gen_truth(&mut rng);
    let constants = WaveConstants::default();
    let (dataset, sim_truth) = gen_triggers(&truth, t_star, &network, &constants, &mut rng)?;
    Ok(SimRun {
        truth: sim_truth,
        network,
        dataset,
    })
}

/// Study grid: every phone count crossed with every variance pair, `runs`
/// independent runs each. The sampler template's seed is ignored; each run
/// derives its own.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub phone_counts: Vec<usize>,
    pub spatial_variances: Vec<(f64, f64)>,
    pub runs: usize,
    pub seed: u64,
    pub sampler: SamplerConfig,
    pub gamma: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            phone_counts: vec![25, 50, 100],
            spatial_variances: vec![(1.0, 1.0), (0.25, 0.25), (0.05, 0.05)],
            runs: 100,
            seed: 0,
            sampler: SamplerConfig::default(),
            gamma: 0.95,
        }
    }
}

/// One study row: scenario identity, truth, mode estimates and errors. Failed
/// runs carry the error message in `status` and NaN estimates.
#[derive(Debug, Clone)]
pub struct StudyRecord {
    pub scenario: String,
    pub n: usize,
    pub spatial_var_ns: f64,
    pub spatial_var_ew: f64,
    pub run: usize,
    pub true_lat: f64,
    pub true_lon: f64,
    pub true_depth_km: f64,
    pub true_t0_s: f64,
    pub true_alpha: f64,
    pub true_pi: f64,
    pub est_lat: f64,
    pub est_lon: f64,
    pub est_depth_km: f64,
    pub est_t0_s: f64,
    pub est_alpha: f64,
    pub est_pi: f64,
    pub epicentre_error_km: f64,
    pub log10_epicentre_error: f64,
    pub t0_error_s: f64,
    pub status: String,
}

pub fn scenario_label(n: usize, var_ns: f64, var_ew: f64) -> String {
    format!("n{n}_ns{var_ns}_ew{var_ew}")
}

fn run_seed(master: u64, scenario_idx: usize, run_idx: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(((scenario_idx as u64) << 32) | run_idx as u64);
    rng
}

/// Executes one scenario: `runs` independent generate-fit-summarise cycles,
/// in parallel. Per-run failures become records with a non-ok status.
pub fn run_scenario(
    cfg: &StudyConfig,
    scenario_idx: usize,
    n: usize,
    vars: (f64, f64),
) -> Vec<StudyRecord> {
    let label = scenario_label(n, vars.0, vars.1);
    (0..cfg.runs)
        .into_par_iter()
        .map(|run_idx| {
            let mut rng = run_seed(cfg.seed, scenario_idx, run_idx);
            let scenario_seed = rng.random::<u64>();
            let fit_seed = rng.random::<u64>();
            let sim = simulate(&ScenarioConfig {
                n,
                spatial_var_ns: vars.0,
                spatial_var_ew: vars.1,
                seed: scenario_seed,
            });
            match sim.and_then(|sim| fit_one(&sim, fit_seed, cfg).map(|est| (sim, est))) {
                Ok((sim, est)) => {
                    let truth = &sim.truth.params;
                    let est_point = GeoPoint::new(
                        est[0].clamp(-90.0, 90.0),
                        est[1].clamp(-180.0, 180.0),
                    )
                    .unwrap();
                    let err_km = geo::epicentral_distance(truth.theta.epicentre, est_point);
                    StudyRecord {
                        scenario: label.clone(),
                        n,
                        spatial_var_ns: vars.0,
                        spatial_var_ew: vars.1,
                        run: run_idx,
                        true_lat: truth.theta.epicentre.lat(),
                        true_lon: truth.theta.epicentre.lon(),
                        true_depth_km: truth.theta.depth_km,
                        true_t0_s: truth.theta.origin_time_s,
                        true_alpha: truth.alpha,
                        true_pi: truth.pi,
                        est_lat: est[0],
                        est_lon: est[1],
                        est_depth_km: est[2],
                        est_t0_s: est[3],
                        est_alpha: est[4],
                        est_pi: est[5],
                        epicentre_error_km: err_km,
                        log10_epicentre_error: err_km.log10(),
                        t0_error_s: truth.theta.origin_time_s - est[3],
                        status: "ok".into(),
                    }
                }
                Err(e) => failed_record(&label, n, vars, run_idx, &e.to_string()),
            }
        })
        .collect()
}

/// Fits one simulated dataset and returns the six marginal-mode estimates.
fn fit_one(sim: &SimRun, seed: u64, cfg: &StudyConfig) -> Result<[f64; 6], SimError> {
    let prior = PriorConfig::for_detection(sim.dataset.detection_location());
    let constants = WaveConstants::default();
    let sampler_cfg = SamplerConfig {
        seed,
        // Chains run sequentially inside a run; the study parallelises over
        // runs instead. Output is identical either way.
        parallel: false,
        record_telemetry: false,
        ..cfg.sampler.clone()
    };
    let out = sampler::run(&sim.dataset, &prior, &constants, &sampler_cfg)?;
    let mut est = [0.0; 6];
    for (i, slot) in est.iter_mut().enumerate() {
        *slot = summary::marginal_mode(&out.column(i))?;
    }
    Ok(est)
}

fn failed_record(
    label: &str,
    n: usize,
    vars: (f64, f64),
    run_idx: usize,
    message: &str,
) -> StudyRecord {
    StudyRecord {
        scenario: label.to_string(),
        n,
        spatial_var_ns: vars.0,
        spatial_var_ew: vars.1,
        run: run_idx,
        true_lat: f64::NAN,
        true_lon: f64::NAN,
        true_depth_km: f64::NAN,
        true_t0_s: f64::NAN,
        true_alpha: f64::NAN,
        true_pi: f64::NAN,
        est_lat: f64::NAN,
        est_lon: f64::NAN,
        est_depth_km: f64::NAN,
        est_t0_s: f64::NAN,
        est_alpha: f64::NAN,
        est_pi: f64::NAN,
        epicentre_error_km: f64::NAN,
        log10_epicentre_error: f64::NAN,
        t0_error_s: f64::NAN,
        status: format!("error: {}", message.replace(',', ";")),
    }
}

/// Runs the full scenario grid in order.
pub fn run_study(cfg: &StudyConfig) -> Vec<StudyRecord> {
    let mut records = Vec::new();
    let mut scenario_idx = 0;
    for &n in &cfg.phone_counts {
        for &vars in &cfg.spatial_variances {
            records.extend(run_scenario(cfg, scenario_idx, n, vars));
            scenario_idx += 1;
        }
    }
    records
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn network_moments_match_the_generator() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100;
        let var = 0.25;
        let pts = gen_network(n, var, var, &mut rng);
        assert_eq!(pts.len(), n);
        let mean_lat = pts.iter().map(|p| p.lat()).sum::<f64>() / n as f64;
        let mean_lon = pts.iter().map(|p| p.lon()).sum::<f64>() / n as f64;
        let bound = 4.0 * var.sqrt() / (n as f64).sqrt();
        assert!(mean_lat.abs() < bound, "mean lat {mean_lat}");
        assert!(mean_lon.abs() < bound, "mean lon {mean_lon}");
        let var_lat = pts
            .iter()
            .map(|p| (p.lat() - mean_lat).powi(2))
            .sum::<f64>()
            / (n - 1) as f64;
        assert!((var_lat - var).abs() < 0.3 * var, "var lat {var_lat}");
    }

    #[test]
    fn unequal_axis_variances_are_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = gen_network(4_000, 0.25, 1.0, &mut rng);
        let var = |xs: Vec<f64>| {
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
        };
        let v_lat = var(pts.iter().map(|p| p.lat()).collect());
        let v_lon = var(pts.iter().map(|p| p.lon()).collect());
        assert!((v_lat - 0.25).abs() < 0.05);
        assert!((v_lon - 1.0).abs() < 0.15);
    }

    #[test]
    fn truth_draws_stay_in_their_supports() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pi_sum = 0.0;
        for _ in 0..1_000 {
            let (truth, t_star) = gen_truth(&mut rng);
            assert!(truth.theta.epicentre.lat().abs() <= 3.0);
            assert!(truth.theta.epicentre.lon().abs() <= 3.0);
            assert!((0.0..=100.0).contains(&truth.theta.depth_km));
            assert!((5.0..=30.0).contains(&truth.theta.origin_time_s));
            assert!((0.0..=1.0).contains(&truth.alpha));
            assert!((0.5..=0.95).contains(&truth.pi));
            let gap = t_star - truth.theta.origin_time_s;
            assert!((60.0..=120.0).contains(&gap));
            pi_sum += truth.pi;
        }
        assert_abs_diff_eq!(pi_sum / 1_000.0, 0.725, epsilon = 0.02);
    }

    #[test]
    fn cure_labels_are_exact_and_censoring_is_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let network = gen_network(80, 0.5, 0.5, &mut rng);
        let (mut truth, t_star) = gen_truth(&mut rng);
        truth.pi = 0.7;
        let c = WaveConstants::default();
        let (dataset, sim_truth) =
            gen_triggers(&truth, t_star, &network, &c, &mut rng).unwrap();
        let cured_count = sim_truth.cured.iter().filter(|c| **c).count();
        assert_eq!(cured_count, (0.7f64 * 80.0).round() as usize);
        for r in dataset.records() {
            if r.triggered {
                assert!(r.observed_time_s < t_star);
            } else {
                assert_eq!(r.observed_time_s, t_star);
            }
        }
        assert_eq!(dataset.records().len(), 80);
    }

    #[test]
    fn fully_cured_network_triggers_at_the_background_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let network = gen_network(n, 1.0, 1.0, &mut rng);
        let truth = ModelParams {
            theta: EarthquakeParams {
                epicentre: GeoPoint::new(0.0, 0.0).unwrap(),
                depth_km: 10.0,
                origin_time_s: 10.0,
            },
            alpha: 0.5,
            pi: 1.0,
        };
        let t_star = 130.0;
        let c = WaveConstants::default();
        let (dataset, _) = gen_triggers(&truth, t_star, &network, &c, &mut rng).unwrap();
        // Expected triggers: n (1 - exp(-130 / 86400)) ~ 0.0015 n.
        let expected = n as f64 * (1.0 - (-t_star / 86_400.0).exp());
        let got = dataset.n_triggered() as f64;
        let sd = expected.sqrt();
        assert!(
            (got - expected).abs() < 4.0 * sd,
            "triggers {got}, expected {expected}"
        );
    }

    #[test]
    fn single_wave_times_cluster_at_the_arrival() {
        // alpha = 1 concentrates the uncured times in the P window.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let z = GeoPoint::new(0.3, 0.2).unwrap();
        let truth = ModelParams {
            theta: EarthquakeParams {
                epicentre: GeoPoint::new(0.0, 0.0).unwrap(),
                depth_km: 10.0,
                origin_time_s: 10.0,
            },
            alpha: 1.0 - 1e-12,
            pi: 0.0,
        };
        let c = WaveConstants::default();
        let (mu_p, _) = model::wave_means(&truth.theta, z, &c);
        for _ in 0..200 {
            let u: f64 = rng.random::<f64>().clamp(1e-6, 1.0 - 1e-6);
            let t = invert_uncured_survival(u, &truth, z, 100.0, &c).unwrap();
            // Background hazard moves essentially nothing inside the window.
            assert!(
                (t - mu_p).abs() < 4.0 * c.tau_s,
                "t {t} vs mu_p {mu_p}"
            );
        }
    }

    #[test]
    fn inverse_sampling_reproduces_the_survival_curve() {
        // KS test of 10^4 uncured draws against the sampling survival.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let z = GeoPoint::new(0.5, -0.3).unwrap();
        let truth = ModelParams {
            theta: EarthquakeParams {
                epicentre: GeoPoint::new(0.0, 0.0).unwrap(),
                depth_km: 20.0,
                origin_time_s: 8.0,
            },
            alpha: 0.6,
            pi: 0.4,
        };
        let c = WaveConstants::default();
        let n = 10_000;
        let mut times: Vec<f64> = (0..n)
            .map(|_| {
                let u: f64 = rng.random::<f64>().clamp(1e-12, 1.0 - 1e-12);
                invert_uncured_survival(u, &truth, z, 100.0, &c).unwrap()
            })
            .collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut ks: f64 = 0.0;
        for (i, t) in times.iter().enumerate() {
            let cdf = 1.0 - uncured_survival(*t, &truth, z, &c);
            let hi = (i + 1) as f64 / n as f64 - cdf;
            let lo = cdf - i as f64 / n as f64;
            ks = ks.max(hi.max(lo));
        }
        assert!(ks < 0.02, "KS statistic {ks}");
    }

    #[test]
    fn simulate_is_deterministic() {
        let cfg = ScenarioConfig {
            n: 30,
            spatial_var_ns: 0.25,
            spatial_var_ew: 1.0,
            seed: 11,
        };
        let a = simulate(&cfg).unwrap();
        let b = simulate(&cfg).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.truth, b.truth);
        // Generated datasets satisfy the model invariants by construction.
        assert!(a.dataset.records().len() == 30);
    }

    #[test]
    fn study_records_are_deterministic_and_complete() {
        let cfg = StudyConfig {
            phone_counts: vec![12],
            spatial_variances: vec![(1.0, 1.0)],
            runs: 2,
            seed: 9,
            sampler: SamplerConfig {
                iterations: 600,
                burn_in: 300,
                temperatures: 3,
                ..SamplerConfig::default()
            },
            gamma: 0.95,
        };
        let a = run_study(&cfg);
        let b = run_study(&cfg);
        assert_eq!(a.len(), 2);
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.status, "ok");
            assert_eq!(ra.est_lat.to_bits(), rb.est_lat.to_bits());
            assert_eq!(ra.epicentre_error_km.to_bits(), rb.epicentre_error_km.to_bits());
            assert!(ra.epicentre_error_km >= 0.0);
            assert_abs_diff_eq!(
                ra.log10_epicentre_error,
                ra.epicentre_error_km.log10(),
                epsilon = 1e-12
            );
        }
    }
}
