use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{ActionChunk, FlowError, VectorField};

pub const DEFAULT_EULER_STEPS: usize = 10;

/// Integrates the field from seeded Gaussian noise over `steps` Euler steps
/// and clips the result to the action range.
pub fn sample_chunk<F: VectorField + ?Sized>(
    field: &F,
    cond: &[f64],
    steps: usize,
    seed: u64,
) -> Result<ActionChunk, FlowError> {
    if steps == 0 {
        return Err(FlowError::ZeroSteps);
    }
    if cond.len() != field.cond_dim() {
        return Err(FlowError::Dimension {
            expected: field.cond_dim(),
            got: cond.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..field.chunk_len() * super::ACTION_DIM)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let dt = 1.0 / steps as f64;
    for i in 0..steps {
        let v = field.velocity(&x, i as f64 * dt, cond);
        for (xi, vi) in x.iter_mut().zip(&v) {
            *xi += dt * vi;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(FlowError::NonFinite { block: "sample" });
        }
    }
    x.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
    Ok(ActionChunk::from_flat(&x))
}
