//! The survival mixture cure model for smartphone trigger data.
//!
//! Every monitoring phone is followed until the detection (censoring) time.
//! Its all-cause survival factorises as a background term times a cure
//! mixture,
//!
//! ```text
//! S(t) = S0(t) * { pi + (1 - pi) * (alpha * SP(t) + (1 - alpha) * SS(t)) }
//! ```
//!
//! where `S0` is the survival of background (non-earthquake) triggers at one
//! expected event per day, `pi` is the fraction of phones that never trigger
//! because of the quake, and `SP`/`SS` are normal survival functions centred
//! on the expected P- and S-wave arrival at the phone. The overall hazard is
//! the background rate plus the excess term
//!
//! ```text
//! h(t) = h0 + (1 - pi) fQ(t) / { pi + (1 - pi) SQ(t) },   fQ = alpha fP + (1 - alpha) fS.
//! ```
//!
//! A triggered phone contributes `h(y) * S(y)` to the likelihood and a
//! censored one contributes `S(y)`. All evaluation is carried out in log
//! space: the wave terms routinely sit hundreds of standard deviations from
//! the observation, so the per-wave log densities and log survivals are
//! assembled with log-sum-exp rather than multiplied in natural units.

use crate::geo::{self, GeoPoint, Hypocentre};
use crate::numeric;
use statrs::function::beta::ln_beta;
use thiserror::Error;

/// Earthquake source parameters: epicentre, depth and origin time.
///
/// Times are seconds relative to the configured epoch (the I/O layer converts
/// UTC timestamps at the boundary). Operationally the depth support is
/// [5, 100] km, matching the prior and the sampler's transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarthquakeParams {
    pub epicentre: GeoPoint,
    pub depth_km: f64,
    pub origin_time_s: f64,
}

impl EarthquakeParams {
    pub fn hypocentre(&self) -> Hypocentre {
        Hypocentre::new(self.epicentre, self.depth_km.max(0.0))
            .expect("finite non-negative depth")
    }
}

/// Full model parameter vector: source parameters plus the P-wave mixture
/// weight `alpha` and the cure fraction `pi`, both in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub theta: EarthquakeParams,
    pub alpha: f64,
    pub pi: f64,
}

/// One device: location, observed time (trigger time or censoring time) and
/// whether it triggered.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmartphoneRecord {
    pub location: GeoPoint,
    pub observed_time_s: f64,
    pub triggered: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("dataset has no records")]
    Empty,
    #[error("record {0}: observed time {1} is not finite or negative")]
    BadTime(usize, f64),
    #[error("record {0}: observed time {1} exceeds the censoring time {2}")]
    AfterCensoring(usize, f64, f64),
    #[error("record {0}: non-triggered record must carry the censoring time {2}, got {1}")]
    CensoredTimeMismatch(usize, f64, f64),
    #[error("detection time {0} is not finite or non-positive")]
    BadDetectionTime(f64),
}

/// An immutable detection dataset: the device records, the network's rough
/// detection location `z*` and the common censoring time `T*` (the detection
/// time), all in epoch-relative seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<SmartphoneRecord>,
    detection_location: GeoPoint,
    detection_time_s: f64,
}

impl Dataset {
    pub fn new(
        records: Vec<SmartphoneRecord>,
        detection_location: GeoPoint,
        detection_time_s: f64,
    ) -> Result<Self, DatasetError> {
        if records.is_empty() {
            return Err(DatasetError::Empty);
        }
        if !detection_time_s.is_finite() || detection_time_s <= 0.0 {
            return Err(DatasetError::BadDetectionTime(detection_time_s));
        }
        for (i, r) in records.iter().enumerate() {
            let y = r.observed_time_s;
            if !y.is_finite() || y < 0.0 {
                return Err(DatasetError::BadTime(i, y));
            }
            if y > detection_time_s {
                return Err(DatasetError::AfterCensoring(i, y, detection_time_s));
            }
            if !r.triggered && y != detection_time_s {
                return Err(DatasetError::CensoredTimeMismatch(i, y, detection_time_s));
            }
        }
        Ok(Self {
            records,
            detection_location,
            detection_time_s,
        })
    }

    pub fn records(&self) -> &[SmartphoneRecord] {
        &self.records
    }

    pub fn detection_location(&self) -> GeoPoint {
        self.detection_location
    }

    pub fn detection_time_s(&self) -> f64 {
        self.detection_time_s
    }

    pub fn n_triggered(&self) -> usize {
        self.records.iter().filter(|r| r.triggered).count()
    }
}

/// Fixed physical constants of the trigger process.
///
/// The trigger delay after a wave arrival is modelled as normal with mean
/// `mu_offset_s` and standard deviation `tau_s`, chosen so that 99% of the
/// mass falls in the `[0, window_s]` interval in which the on-device detector
/// and network latency can produce the trigger. `Default` centres the normal
/// in the window and derives `tau` from the 99% central quantile at startup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveConstants {
    /// P-wave speed, km/s.
    pub v_p: f64,
    /// S-wave speed, km/s.
    pub v_s: f64,
    /// Length of the trigger window after a wave arrival, seconds.
    pub window_s: f64,
    /// Mean trigger delay after the wave arrival, seconds.
    pub mu_offset_s: f64,
    /// Standard deviation of the trigger delay, seconds.
    pub tau_s: f64,
    /// Background trigger rate: one expected trigger per day.
    pub background_rate: f64,
}

impl Default for WaveConstants {
    fn default() -> Self {
        Self::with_window(7.8, 4.5, 3.5, 1.0 / 86_400.0)
    }
}

impl WaveConstants {
    /// Builds constants with the delay normal centred in `[0, window_s]` and
    /// `tau` set so the central 99% interval spans the window exactly.
    pub fn with_window(v_p: f64, v_s: f64, window_s: f64, background_rate: f64) -> Self {
        let mu = window_s / 2.0;
        let z995 = numeric::std_normal_quantile(0.995);
        Self {
            v_p,
            v_s,
            window_s,
            mu_offset_s: mu,
            tau_s: mu / z995,
            background_rate,
        }
    }
}

/// Prior configuration. Defaults follow the operational setup: bivariate
/// normal on the epicentre centred at the detection location with a 1 degree
/// standard deviation per axis, uniform depth on [5, 100] km, Exp(1/20) on
/// the origin time, Beta(1/2, 1/2) on the wave weight (a priori the network
/// mostly detects a single wave) and Uniform(0, 1) on the cure fraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorConfig {
    pub epicentre_center: GeoPoint,
    pub epicentre_sd_deg: f64,
    pub depth_bounds_km: (f64, f64),
    /// Rate of the exponential prior on the origin time, 1/s.
    pub origin_rate: f64,
    pub alpha_beta: (f64, f64),
    pub pi_bounds: (f64, f64),
}

impl PriorConfig {
    pub fn for_detection(detection_location: GeoPoint) -> Self {
        Self {
            epicentre_center: detection_location,
            epicentre_sd_deg: 1.0,
            depth_bounds_km: (5.0, 100.0),
            origin_rate: 1.0 / 20.0,
            alpha_beta: (0.5, 0.5),
            pi_bounds: (0.0, 1.0),
        }
    }
}

/// Expected P- and S-wave trigger times at a device, in seconds:
/// travel time from the hypocentre plus origin time plus the mean delay.
pub fn wave_means(theta: &EarthquakeParams, z: GeoPoint, c: &WaveConstants) -> (f64, f64) {
    let dist = geo::hypocentral_distance(z, &theta.hypocentre());
    let mu_p = dist / c.v_p + theta.origin_time_s + c.mu_offset_s;
    let mu_s = dist / c.v_s + theta.origin_time_s + c.mu_offset_s;
    (mu_p, mu_s)
}

/// Density and survival of a single wave's trigger-time normal at time `t`.
pub fn wave_density_and_survival(t: f64, mean: f64, c: &WaveConstants) -> (f64, f64) {
    let z = (t - mean) / c.tau_s;
    let f = numeric::ln_normal_pdf(t, mean, c.tau_s).exp();
    let s = numeric::std_normal_sf(z);
    (f, s)
}

/// Log numerator and log denominator of the excess hazard at time `t`:
/// `ln[(1-pi) fQ(t)]` and `ln[pi + (1-pi) SQ(t)]`. The denominator is also
/// the relative survival `R(t)`, so `ln S = -h0 t + ln_den`.
fn log_excess_parts(t: f64, phi: &ModelParams, z: GeoPoint, c: &WaveConstants) -> (f64, f64) {
    let (mu_p, mu_s) = wave_means(&phi.theta, z, c);
    let zp = (t - mu_p) / c.tau_s;
    let zs = (t - mu_s) / c.tau_s;
    let ln_fp = numeric::ln_normal_pdf(t, mu_p, c.tau_s);
    let ln_fs = numeric::ln_normal_pdf(t, mu_s, c.tau_s);
    let ln_sp = numeric::ln_std_normal_sf(zp);
    let ln_ss = numeric::ln_std_normal_sf(zs);
    let ln_a = phi.alpha.ln();
    let ln_1a = (1.0 - phi.alpha).ln();
    let ln_fq = numeric::logsumexp2(ln_a + ln_fp, ln_1a + ln_fs);
    let ln_sq = numeric::logsumexp2(ln_a + ln_sp, ln_1a + ln_ss);
    let ln_pi = phi.pi.ln();
    let ln_1pi = (1.0 - phi.pi).ln();
    let ln_num = ln_1pi + ln_fq;
    let ln_den = numeric::logsumexp2(ln_pi, ln_1pi + ln_sq);
    (ln_num, ln_den)
}

pub fn log_survival(t: f64, phi: &ModelParams, z: GeoPoint, c: &WaveConstants) -> f64 {
    let (_, ln_den) = log_excess_parts(t, phi, z, c);
    -c.background_rate * t + ln_den
}

/// All-cause survival probability of one device at time `t`.
pub fn survival(t: f64, phi: &ModelParams, z: GeoPoint, c: &WaveConstants) -> f64 {
    log_survival(t, phi, z, c).exp()
}

pub fn log_hazard(t: f64, phi: &ModelParams, z: GeoPoint, c: &WaveConstants) -> f64 {
    let (ln_num, ln_den) = log_excess_parts(t, phi, z, c);
    let ln_excess = if ln_num == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        ln_num - ln_den
    };
    numeric::logsumexp2(c.background_rate.ln(), ln_excess)
}

/// All-cause hazard rate of one device at time `t`, never below the
/// background rate.
pub fn hazard(t: f64, phi: &ModelParams, z: GeoPoint, c: &WaveConstants) -> f64 {
    let (ln_num, ln_den) = log_excess_parts(t, phi, z, c);
    if ln_num == f64::NEG_INFINITY {
        return c.background_rate;
    }
    c.background_rate + (ln_num - ln_den).exp()
}

/// Right-censored log-likelihood: each record contributes
/// `delta * ln h(y) + ln S(y)`. Returns `-inf` when the survival of some
/// record underflows to zero, which flags a pathological parameter vector to
/// the sampler without aborting it.
pub fn log_likelihood(phi: &ModelParams, data: &Dataset, c: &WaveConstants) -> f64 {
    let mut total = 0.0;
    for r in data.records() {
        let (ln_num, ln_den) = log_excess_parts(r.observed_time_s, phi, r.location, c);
        total += -c.background_rate * r.observed_time_s + ln_den;
        if r.triggered {
            let ln_excess = if ln_num == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                ln_num - ln_den
            };
            total += numeric::logsumexp2(c.background_rate.ln(), ln_excess);
        }
        if !total.is_finite() {
            return f64::NEG_INFINITY;
        }
    }
    total
}

/// Log prior density of each parameter block: (source block, alpha, pi).
pub fn log_prior_blocks(phi: &ModelParams, prior: &PriorConfig) -> [f64; 3] {
    let theta = &phi.theta;
    let mut block1 = numeric::ln_normal_pdf(
        theta.epicentre.lat(),
        prior.epicentre_center.lat(),
        prior.epicentre_sd_deg,
    ) + numeric::ln_normal_pdf(
        theta.epicentre.lon(),
        prior.epicentre_center.lon(),
        prior.epicentre_sd_deg,
    );
    let (d_lo, d_hi) = prior.depth_bounds_km;
    block1 += if (d_lo..=d_hi).contains(&theta.depth_km) {
        -(d_hi - d_lo).ln()
    } else {
        f64::NEG_INFINITY
    };
    block1 += if theta.origin_time_s >= 0.0 && theta.origin_time_s.is_finite() {
        prior.origin_rate.ln() - prior.origin_rate * theta.origin_time_s
    } else {
        f64::NEG_INFINITY
    };

    let (a, b) = prior.alpha_beta;
    let block2 = if phi.alpha > 0.0 && phi.alpha < 1.0 {
        (a - 1.0) * phi.alpha.ln() + (b - 1.0) * (1.0 - phi.alpha).ln() - ln_beta(a, b)
    } else {
        f64::NEG_INFINITY
    };

    let (p_lo, p_hi) = prior.pi_bounds;
    let block3 = if (p_lo..=p_hi).contains(&phi.pi) {
        -(p_hi - p_lo).ln()
    } else {
        f64::NEG_INFINITY
    };

    [block1, block2, block3]
}

/// Total log prior density; `-inf` outside the supports.
pub fn log_prior(phi: &ModelParams, prior: &PriorConfig) -> f64 {
    log_prior_blocks(phi, prior).iter().sum()
}

/// Unnormalised log posterior: log likelihood plus log prior.
pub fn log_posterior(
    phi: &ModelParams,
    data: &Dataset,
    prior: &PriorConfig,
    c: &WaveConstants,
) -> f64 {
    let lp = log_prior(phi, prior);
    if lp == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let ll = log_likelihood(phi, data, c);
    let total = lp + ll;
    if total.is_nan() {
        f64::NEG_INFINITY
    } else {
        total
    }
}
