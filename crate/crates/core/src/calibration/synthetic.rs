use crate::error::Result;
use crate::evalcore::{logsumexp, EvalSet};
use crate::rng::rng_for;
use rand::Rng;
use rand_distr::StandardNormal;

/// Standard deviation of the latent logits of [`calibrated_eval`].
pub const LATENT_SCALE: f64 = 2.0;

/// Synthetic evaluation set with a known true posterior.
///
/// Each row draws latent logits `z ~ N(0, LATENT_SCALE²·I)`, sets
/// `q = softmax(z)`, draws the label from `q` and stores `temperature · log q`
/// as the logits, so dividing by `temperature` gives calibrated
/// probabilities. Returns the set and `q` (N×K row-major).
pub fn calibrated_eval(n: usize, k: usize, temperature: f64, seed: u64) -> Result<(EvalSet, Vec<f64>)> {
    let mut rng = rng_for(seed, 0xCA1);
    let mut logits = Vec::with_capacity(n * k);
    let mut q_all = Vec::with_capacity(n * k);
    let mut labels = Vec::with_capacity(n);
    let mut z = vec![0.0; k];
    for _ in 0..n {
        for v in z.iter_mut() {
            *v = LATENT_SCALE * rng.sample::<f64, _>(StandardNormal);
        }
        let lse = logsumexp(&z);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut y = k - 1;
        for (j, v) in z.iter().enumerate() {
            acc += (v - lse).exp();
            if u < acc {
                y = j;
                break;
            }
        }
        logits.extend(z.iter().map(|v| temperature * (v - lse)));
        q_all.extend(z.iter().map(|v| (v - lse).exp()));
        labels.push(y);
    }
    Ok((EvalSet::new(logits, k, labels)?, q_all))
}
