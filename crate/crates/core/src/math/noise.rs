use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{AreaError, Result};
use crate::math::{ModelVector, Objective};

/// How a client's stochastic (sub)gradient deviates from the exact one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseModel {
    None,
    /// Zero-mean Gaussian perturbation with `E‖g − d‖² = sigma²`, split evenly
    /// across coordinates.
    AdditiveGaussian { sigma: f64 },
    /// Gradient over `batch_size` of the client's samples drawn without
    /// replacement. Only meaningful for data-backed objectives.
    MiniBatch { batch_size: usize },
}

impl NoiseModel {
    /// Noise bound σ when it is known in closed form.
    pub fn sigma(&self) -> Option<f64> {
        match self {
            NoiseModel::None => Some(0.0),
            NoiseModel::AdditiveGaussian { sigma } => Some(*sigma),
            NoiseModel::MiniBatch { .. } => None,
        }
    }

    pub fn validate_for(&self, obj: &Objective) -> Result<()> {
        match (self, obj) {
            (NoiseModel::AdditiveGaussian { sigma }, _) if !(*sigma >= 0.0 && sigma.is_finite()) => {
                Err(AreaError::config(format!("gaussian noise sigma must be finite and >= 0, got {sigma}")))
            }
            (NoiseModel::MiniBatch { batch_size: 0 }, _) => Err(AreaError::config("mini-batch size must be positive")),
            (NoiseModel::MiniBatch { .. }, Objective::LogReg(_)) => Ok(()),
            (NoiseModel::MiniBatch { .. }, _) => Err(AreaError::config(
                "mini-batch noise requires a data-backed objective",
            )),
            _ => Ok(()),
        }
    }
}

/// Draws `g_i(x) = d_i(x) + e` with `E[e] = 0` from the given noise stream.
pub fn stochastic_gradient<R: Rng + ?Sized>(
    obj: &Objective,
    noise: &NoiseModel,
    x: &ModelVector,
    rng: &mut R,
) -> Result<ModelVector> {
    match noise {
        NoiseModel::None => obj.gradient(x),
        NoiseModel::AdditiveGaussian { sigma } => {
            let mut g = obj.gradient(x)?;
            if *sigma > 0.0 {
                let scale = sigma / (g.dim() as f64).sqrt();
                for v in g.as_mut_slice() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v += scale * z;
                }
            }
            Ok(g)
        }
        NoiseModel::MiniBatch { batch_size } => match obj {
            Objective::LogReg(l) => {
                let avail = l.samples.len();
                if avail == 0 {
                    return Err(AreaError::EmptySampleSet);
                }
                let take = (*batch_size).min(avail);
                let ids: Vec<usize> = rand::seq::index::sample(rng, avail, take)
                    .into_iter()
                    .map(|p| l.samples[p])
                    .collect();
                Ok(l.value_grad(x, &ids)?.1)
            }
            _ => Err(AreaError::config("mini-batch noise requires a data-backed objective")),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{Curvature, Quadratic};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quad(d: usize) -> Objective {
        Objective::Quadratic(
            Quadratic::new(Curvature::Diagonal((1..=d).map(|i| i as f64).collect()), ModelVector::zeros(d)).unwrap(),
        )
    }

    #[test]
    fn no_noise_is_exact() {
        let obj = quad(3);
        let x = ModelVector::from_vec(vec![1.0, 1.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = stochastic_gradient(&obj, &NoiseModel::None, &x, &mut rng).unwrap();
        assert_eq!(g, obj.gradient(&x).unwrap());
    }

    #[test]
    fn gaussian_noise_is_unbiased() {
        let obj = quad(4);
        let x = ModelVector::from_vec(vec![0.5, -1.0, 2.0, 0.0]);
        let exact = obj.gradient(&x).unwrap();
        let noise = NoiseModel::AdditiveGaussian { sigma: 1.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws = 100_000;
        let mut mean = ModelVector::zeros(4);
        for _ in 0..draws {
            let g = stochastic_gradient(&obj, &noise, &x, &mut rng).unwrap();
            mean.add_assign(&g.sub(&exact));
        }
        mean.scale(1.0 / draws as f64);
        let tol = 5.0 * 1.0 / (draws as f64).sqrt();
        for j in 0..4 {
            assert!(mean[j].abs() < tol, "coordinate {j}: {}", mean[j]);
        }
    }

    #[test]
    fn gaussian_noise_has_requested_variance() {
        let obj = quad(4);
        let x = ModelVector::zeros(4);
        let noise = NoiseModel::AdditiveGaussian { sigma: 2.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 100_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            acc += stochastic_gradient(&obj, &noise, &x, &mut rng).unwrap().norm_sq();
        }
        let second_moment = acc / draws as f64;
        assert!((second_moment - 4.0).abs() < 0.05 * 4.0, "{second_moment}");
    }

    #[test]
    fn same_stream_state_gives_identical_output() {
        let obj = quad(3);
        let x = ModelVector::from_vec(vec![1.0, 2.0, 3.0]);
        let noise = NoiseModel::AdditiveGaussian { sigma: 0.7 };
        let a = stochastic_gradient(&obj, &noise, &x, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = stochastic_gradient(&obj, &noise, &x, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn minibatch_rejected_for_synthetic_objectives() {
        let obj = quad(2);
        let noise = NoiseModel::MiniBatch { batch_size: 4 };
        assert!(noise.validate_for(&obj).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(stochastic_gradient(&obj, &noise, &ModelVector::zeros(2), &mut rng).is_err());
    }
}
