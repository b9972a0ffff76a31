use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::signals::Trajectory;

/// Adds white Gaussian noise to every output channel, with standard deviation
/// `nsr · rms(channel)`. Draws are channel-major from a generator seeded by
/// `seed`, so different ratios with the same seed scale the same realization.
pub fn add_measurement_noise(w: &Trajectory, nsr: f64, seed: u64) -> Result<Trajectory> {
    add_noise(w, nsr, seed, false)
}

/// As [`add_measurement_noise`], optionally also corrupting the input channels.
pub fn add_noise(w: &Trajectory, nsr: f64, seed: u64, include_inputs: bool) -> Result<Trajectory> {
    if !(nsr >= 0.0) || !nsr.is_finite() {
        return Err(Error::InvalidArgument(format!("noise-to-signal ratio {nsr} must be finite and ≥ 0")));
    }
    let mut out = w.clone();
    if nsr == 0.0 {
        return Ok(out);
    }
    let first = if include_inputs { 0 } else { w.inputs() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for c in first..w.channels() {
        let std = nsr * w.column_rms(c);
        let mut col = out.data_mut().column_mut(c);
        for v in col.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += std * z;
        }
    }
    Ok(out)
}
