use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use super::hard::{simulate_with, Deposit, SimError, SimOptions};
use super::scene::SceneSpec;
use crate::data::TransientVolume;

/// Object transient plus an additive background, with both parts kept.
#[derive(Clone, Debug)]
pub struct BackgroundMix {
    pub total: TransientVolume,
    pub object: TransientVolume,
    /// The scaled floor component, `total - object`.
    pub background: TransientVolume,
}

/// Add the scene floor's first-surface return, scaled by the floor factor.
/// The floor is occluded by object primitives. Without a floor the
/// background part is zero.
pub fn add_background(tau: &TransientVolume, scene: &SceneSpec, opts: &SimOptions) -> Result<BackgroundMix, SimError> {
    let zero = vec![0.0f32; tau.data().len()];
    let floor_part: Vec<f32> = match &scene.floor {
        Some(f) if f.factor > 0.0 => {
            let opts = SimOptions {
                bin_offset: tau.bin_offset(),
                ..*opts
            };
            let sim = simulate_with(
                scene,
                tau.wall(),
                tau.bins(),
                tau.bin_width_ps(),
                &opts,
                Deposit::FloorOnly,
            )?;
            sim.volume.data().iter().map(|v| v * f.factor as f32).collect()
        }
        _ => zero,
    };
    let total: Vec<f32> = tau.data().iter().zip(&floor_part).map(|(a, b)| a + b).collect();
    // Store the background as the exact float difference so the parts add up
    // to the total bit for bit.
    let background: Vec<f32> = total.iter().zip(tau.data()).map(|(t, o)| t - o).collect();
    Ok(BackgroundMix {
        total: tau.with_data(total)?,
        object: tau.clone(),
        background: tau.with_data(background)?,
    })
}

/// Photon-counting noise: each value `v` becomes `level * Poisson(v / level)`,
/// which keeps the mean and non-negativity. `level` is the signal carried by
/// one photon; 0 returns the input unchanged.
pub fn add_noise(tau: &TransientVolume, seed: u64, level: f64) -> Result<TransientVolume, SimError> {
    if !(level >= 0.0) {
        return Err(SimError::Invalid(format!("noise level must be >= 0, got {level}")));
    }
    if level == 0.0 {
        return Ok(tau.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = tau
        .data()
        .iter()
        .map(|&v| {
            let lambda = v as f64 / level;
            if lambda <= 0.0 {
                0.0
            } else {
                let k: f64 = Poisson::new(lambda).expect("positive rate").sample(&mut rng);
                (k * level) as f32
            }
        })
        .collect();
    Ok(tau.with_data(data)?)
}
