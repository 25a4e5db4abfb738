//! Central finite-difference verification of the analytic gradients.

use super::loss::{si_loss, siamese_loss, LabeledRef, PairRef};
use super::{ClassifierHead, EmbeddingModel, FreezeSet, Parameters, SiameseHead};
use crate::error::{Error, Result};

/// Numeric gradients smaller than this are compared in absolute terms,
/// since their finite-difference estimate is dominated by rounding.
pub const GRADIENT_FLOOR: f64 = 1e-5;

/// Largest `|analytic - numeric| / max(|numeric|, GRADIENT_FLOOR)` over all
/// parameters, with `numeric = (L(p + eps) - L(p - eps)) / (2 eps)`.
pub fn compare_gradients<P: Parameters>(
    params: &P,
    analytic: &P,
    loss: impl Fn(&P) -> f64,
    epsilon: f64,
) -> f64 {
    let mut probe = params.clone();
    let grads: Vec<f64> = analytic.blocks().into_iter().flatten().copied().collect();
    let total = params.param_count();
    let mut worst: f64 = 0.0;
    for k in 0..total {
        let original = *flat_mut(&mut probe, k);
        *flat_mut(&mut probe, k) = original + epsilon;
        let plus = loss(&probe);
        *flat_mut(&mut probe, k) = original - epsilon;
        let minus = loss(&probe);
        *flat_mut(&mut probe, k) = original;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let err = (grads[k] - numeric).abs() / numeric.abs().max(GRADIENT_FLOOR);
        worst = worst.max(err);
    }
    worst
}

fn flat_mut<P: Parameters>(p: &mut P, mut k: usize) -> &mut f64 {
    for block in p.blocks_mut() {
        if k < block.len() {
            return &mut block[k];
        }
        k -= block.len();
    }
    panic!("parameter index out of range");
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::invalid(format!(
            "epsilon {epsilon} outside [1e-7, 1e-3]"
        )));
    }
    Ok(())
}

/// Gradient check of the identification cross-entropy over every parameter
/// of model and head.
pub fn gradient_check_si(
    model: &EmbeddingModel,
    head: &ClassifierHead,
    batch: &[LabeledRef<'_>],
    epsilon: f64,
) -> Result<f64> {
    check_epsilon(epsilon)?;
    let none = FreezeSet::new();
    let (_, g) = si_loss(model, head, batch, &none)?;
    let params = (model.clone(), head.clone());
    let analytic = (g.model, g.head);
    Ok(compare_gradients(
        &params,
        &analytic,
        |(m, h)| si_loss(m, h, batch, &none).map(|r| r.0).unwrap_or(f64::NAN),
        epsilon,
    ))
}

/// Gradient check of the Siamese binary cross-entropy over every parameter
/// of the shared model and the head.
pub fn gradient_check_siamese(
    model: &EmbeddingModel,
    head: &SiameseHead,
    batch: &[PairRef<'_>],
    epsilon: f64,
) -> Result<f64> {
    check_epsilon(epsilon)?;
    let none = FreezeSet::new();
    let (_, g) = siamese_loss(model, head, batch, &none)?;
    let params = (model.clone(), head.clone());
    let analytic = (g.model, g.head);
    Ok(compare_gradients(
        &params,
        &analytic,
        |(m, h)| {
            siamese_loss(m, h, batch, &none)
                .map(|r| r.0)
                .unwrap_or(f64::NAN)
        },
        epsilon,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Dense;
    use crate::rng::Rng;

    fn random_inputs(rng: &mut Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..dim).map(|_| rng.normal()).collect())
            .collect()
    }

    #[test]
    fn si_gradients_match() {
        for seed in 0..3 {
            let mut rng = Rng::new(seed);
            let model = EmbeddingModel::random(5, 4, 3, &mut rng);
            let head = ClassifierHead::random(3, 4, &mut rng).unwrap();
            let xs = random_inputs(&mut rng, 6, 5);
            let batch: Vec<LabeledRef> = xs
                .iter()
                .enumerate()
                .map(|(i, x)| LabeledRef {
                    features: x,
                    label: i % 4,
                })
                .collect();
            let err = gradient_check_si(&model, &head, &batch, 1e-5).unwrap();
            assert!(err < 1e-5, "seed {seed}: {err}");
        }
    }

    #[test]
    fn siamese_gradients_match() {
        for seed in 0..3 {
            let mut rng = Rng::new(100 + seed);
            let model = EmbeddingModel::random(5, 4, 3, &mut rng);
            let head = SiameseHead::random(3, &mut rng);
            let xs = random_inputs(&mut rng, 8, 5);
            let batch: Vec<PairRef> = (0..4)
                .map(|i| PairRef {
                    a: &xs[2 * i],
                    b: &xs[2 * i + 1],
                    target: i % 2 == 0,
                })
                .collect();
            let err = gradient_check_siamese(&model, &head, &batch, 1e-5).unwrap();
            assert!(err < 1e-5, "seed {seed}: {err}");
        }
    }

    #[test]
    fn doubled_gradient_is_detected() {
        let mut rng = Rng::new(9);
        let model = EmbeddingModel::random(4, 3, 2, &mut rng);
        let head = ClassifierHead::random(2, 3, &mut rng).unwrap();
        let xs = random_inputs(&mut rng, 4, 4);
        let batch: Vec<LabeledRef> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| LabeledRef {
                features: x,
                label: i % 3,
            })
            .collect();
        let none = FreezeSet::new();
        let (_, g) = si_loss(&model, &head, &batch, &none).unwrap();
        let mut doubled = (g.model, g.head);
        for b in doubled.blocks_mut() {
            b.iter_mut().for_each(|v| *v *= 2.0);
        }
        let err = compare_gradients(
            &(model, head),
            &doubled,
            |(m, h)| si_loss(m, h, &batch, &none).unwrap().0,
            1e-5,
        );
        assert!((err - 1.0).abs() < 1e-3, "{err}");
    }

    #[test]
    fn zero_model_zero_inputs() {
        let model = EmbeddingModel::zeros(3, 3, 2);
        let head = ClassifierHead {
            layer: Dense::zeros(2, 2),
        };
        let x = [0.0; 3];
        let batch = [LabeledRef {
            features: &x,
            label: 0,
        }];
        let (_, g) = si_loss(&model, &head, &batch, &FreezeSet::new()).unwrap();
        assert!(g.model.blocks().iter().all(|b| b.iter().all(|v| *v == 0.0)));
        assert!(gradient_check_si(&model, &head, &batch, 1e-5).unwrap() < 1e-9);
        assert!(gradient_check_si(&model, &head, &batch, 1e-2).is_err());
    }
}
