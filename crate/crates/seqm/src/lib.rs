//! Bayesian estimation of earthquake epicentre, depth and origin time from
//! smartphone early-warning network data.
//!
//! Smartphone networks report two lists when an earthquake is detected: the
//! phones that triggered on an acceleration (with trigger times) and the
//! phones that were monitoring but stayed silent. Treating triggering as a
//! survival process with right censoring at the detection time, a mixture
//! cure model separates phones that will never trigger because of the quake
//! (the cured fraction) from phones whose trigger time follows a two-component
//! P/S wave-arrival mixture. The posterior over epicentre, depth, origin time,
//! wave weight and cure fraction is explored with an adaptive parallel
//! tempering Metropolis-within-Gibbs sampler, and summarised by predominant
//! posterior modes and highest posterior density regions.
//!
//! Module layout:
//!
//! - [`geo`]: geodetic points and hypocentral distances
//! - [`model`]: survival/hazard functions, priors, likelihood, log-posterior
//! - [`reparam`]: bijections to unconstrained space with log-Jacobians
//! - [`sampler`]: adaptive tempered Metropolis-within-Gibbs engine
//! - [`summary`]: modes, HPDRs and chain diagnostics
//! - [`simulator`]: synthetic networks and trigger generation
//! - [`cli`]: file formats and the `fit`/`simulate`/`summarize`/`study`/`diagnose` commands
//!
//! The `examples/` directory has one runnable program per major capability;
//! start with `simulate_and_fit`.

pub mod cli;
pub mod geo;
pub mod model;
mod numeric;
pub mod reparam;
pub mod sampler;
pub mod simulator;
pub mod summary;

pub use geo::{GeoPoint, Hypocentre};
pub use model::{
    Dataset, EarthquakeParams, ModelParams, PriorConfig, SmartphoneRecord, WaveConstants,
};
pub use sampler::{SamplerConfig, SamplerOutput};
