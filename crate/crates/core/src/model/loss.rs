use super::{ClassifierHead, EmbeddingModel, FreezeSet, ParamGroup, Parameters, SiameseHead};
use crate::embedding::{dot, Embedding};
use crate::error::{Error, Result};

/// A training example for the identification head.
#[derive(Debug, Clone, Copy)]
pub struct LabeledRef<'a> {
    pub features: &'a [f64],
    pub label: usize,
}

/// A training example for the verification head.
#[derive(Debug, Clone, Copy)]
pub struct PairRef<'a> {
    pub a: &'a [f64],
    pub b: &'a [f64],
    pub target: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiGrads {
    pub model: EmbeddingModel,
    pub head: ClassifierHead,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiameseGrads {
    pub model: EmbeddingModel,
    pub head: SiameseHead,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Strictly inside (0, 1) for every finite input.
pub(crate) fn sigmoid(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean cross-entropy of the softmax head over `batch`, with gradients for
/// every group not in `freeze`.
pub fn si_loss(
    model: &EmbeddingModel,
    head: &ClassifierHead,
    batch: &[LabeledRef<'_>],
    freeze: &FreezeSet,
) -> Result<(f64, SiGrads)> {
    if batch.is_empty() {
        return Err(Error::Empty("si_loss batch"));
    }
    let c = head.classes();
    let mut grads = SiGrads {
        model: model.zeroed(),
        head: head.zeroed(),
    };
    let n = batch.len() as f64;
    let mut total = 0.0;
    let head_frozen = freeze.contains(&ParamGroup::Head);
    for ex in batch {
        if ex.label >= c {
            return Err(Error::invalid(format!(
                "label {} outside [0, {c})",
                ex.label
            )));
        }
        if ex.features.len() != model.feature_dim() {
            return Err(Error::DimMismatch {
                expected: model.feature_dim(),
                got: ex.features.len(),
            });
        }
        let act = model.forward(ex.features);
        let logits = head.logits(&act.embedding);
        total += log_sum_exp(&logits) - logits[ex.label];
        let mut d_logits = softmax(&logits);
        d_logits[ex.label] -= 1.0;
        d_logits.iter_mut().for_each(|g| *g /= n);
        if !head_frozen {
            grads.head.layer.accumulate(&d_logits, &act.embedding);
        }
        let d_emb = head.layer.back(&d_logits);
        model.backward(ex.features, &act, &d_emb, &mut grads.model, freeze);
    }
    Ok((total / n, grads))
}

/// Verification probability for two embeddings. Symmetric in its arguments.
pub fn siamese_forward(head: &SiameseHead, e1: &Embedding, e2: &Embedding) -> Result<f64> {
    siamese_prob(head, e1.as_slice(), e2.as_slice())
}

pub(crate) fn siamese_logit(head: &SiameseHead, e1: &[f64], e2: &[f64]) -> Result<f64> {
    if e1.len() != e2.len() || e1.len() != head.w.len() {
        return Err(Error::DimMismatch {
            expected: head.w.len(),
            got: if e1.len() != head.w.len() {
                e1.len()
            } else {
                e2.len()
            },
        });
    }
    let prod: Vec<f64> = e1.iter().zip(e2).map(|(a, b)| a * b).collect();
    Ok(dot(&head.w, &prod) + head.b)
}

pub(crate) fn siamese_prob(head: &SiameseHead, e1: &[f64], e2: &[f64]) -> Result<f64> {
    siamese_logit(head, e1, e2).map(sigmoid)
}

/// Mean binary cross-entropy of the Siamese output over `batch`. Both
/// branches share `model`, so their gradients add.
pub fn siamese_loss(
    model: &EmbeddingModel,
    head: &SiameseHead,
    batch: &[PairRef<'_>],
    freeze: &FreezeSet,
) -> Result<(f64, SiameseGrads)> {
    if batch.is_empty() {
        return Err(Error::Empty("siamese_loss batch"));
    }
    let mut grads = SiameseGrads {
        model: model.zeroed(),
        head: head.zeroed(),
    };
    let n = batch.len() as f64;
    let mut total = 0.0;
    let head_frozen = freeze.contains(&ParamGroup::Head);
    for ex in batch {
        for x in [ex.a, ex.b] {
            if x.len() != model.feature_dim() {
                return Err(Error::DimMismatch {
                    expected: model.feature_dim(),
                    got: x.len(),
                });
            }
        }
        let act_a = model.forward(ex.a);
        let act_b = model.forward(ex.b);
        let z = siamese_logit(head, &act_a.embedding, &act_b.embedding)?;
        let y = if ex.target { 1.0 } else { 0.0 };
        total += softplus(z) - y * z;
        let dz = (sigmoid(z) - y) / n;
        if !head_frozen {
            for ((g, a), b) in grads
                .head
                .w
                .iter_mut()
                .zip(&act_a.embedding)
                .zip(&act_b.embedding)
            {
                *g += dz * a * b;
            }
            grads.head.b += dz;
        }
        let d_a: Vec<f64> = head
            .w
            .iter()
            .zip(&act_b.embedding)
            .map(|(w, b)| dz * w * b)
            .collect();
        let d_b: Vec<f64> = head
            .w
            .iter()
            .zip(&act_a.embedding)
            .map(|(w, a)| dz * w * a)
            .collect();
        model.backward(ex.a, &act_a, &d_a, &mut grads.model, freeze);
        model.backward(ex.b, &act_b, &d_b, &mut grads.model, freeze);
    }
    Ok((total / n, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Dense;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn emb(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    #[test]
    fn uniform_head_gives_ln_c() {
        let mut rng = Rng::new(3);
        let model = EmbeddingModel::random(4, 3, 2, &mut rng);
        let head = ClassifierHead {
            layer: Dense::zeros(2, 5),
        };
        let xs: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..4).map(|_| rng.normal()).collect())
            .collect();
        let batch: Vec<LabeledRef> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| LabeledRef {
                features: x,
                label: i % 5,
            })
            .collect();
        let (loss, _) = si_loss(&model, &head, &batch, &FreezeSet::new()).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn confident_correct_logits_give_near_zero_loss() {
        let model = EmbeddingModel {
            base: Dense {
                inputs: 1,
                outputs: 1,
                w: vec![10.0],
                b: vec![0.0],
            },
            trunk: Dense {
                inputs: 1,
                outputs: 1,
                w: vec![10.0],
                b: vec![0.0],
            },
        };
        let head = ClassifierHead {
            layer: Dense {
                inputs: 1,
                outputs: 2,
                w: vec![-100.0, 100.0],
                b: vec![0.0, 0.0],
            },
        };
        let x = [1.0];
        let (loss, _) = si_loss(
            &model,
            &head,
            &[LabeledRef {
                features: &x,
                label: 1,
            }],
            &FreezeSet::new(),
        )
        .unwrap();
        assert!(loss < 1e-12, "{loss}");
    }

    #[test]
    fn brute_force_cross_entropy() {
        let mut rng = Rng::new(17);
        let model = EmbeddingModel::random(3, 4, 2, &mut rng);
        let head = ClassifierHead::random(2, 3, &mut rng).unwrap();
        let xs: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..3).map(|_| rng.normal()).collect())
            .collect();
        let labels = [0usize, 2, 1, 2];
        let batch: Vec<LabeledRef> = xs
            .iter()
            .zip(labels)
            .map(|(x, l)| LabeledRef {
                features: x,
                label: l,
            })
            .collect();
        let (loss, _) = si_loss(&model, &head, &batch, &FreezeSet::new()).unwrap();
        // scalar recomputation: -mean log(exp(z_y) / sum exp(z))
        let mut acc = 0.0;
        for (x, &l) in xs.iter().zip(&labels) {
            let e = model.embed(x).unwrap();
            let z: Vec<f64> = (0..3)
                .map(|c| {
                    head.layer.b[c]
                        + head.layer.w[c * 2] * e.as_slice()[0]
                        + head.layer.w[c * 2 + 1] * e.as_slice()[1]
                })
                .collect();
            let denom: f64 = z.iter().map(|v| v.exp()).sum();
            acc -= (z[l].exp() / denom).ln();
        }
        assert!((loss - acc / 4.0).abs() < 1e-12);
    }

    #[test]
    fn label_out_of_range() {
        let model = EmbeddingModel::zeros(2, 2, 2);
        let head = ClassifierHead {
            layer: Dense::zeros(2, 2),
        };
        let x = [0.0, 0.0];
        assert!(si_loss(
            &model,
            &head,
            &[LabeledRef {
                features: &x,
                label: 2
            }],
            &FreezeSet::new()
        )
        .is_err());
        assert!(si_loss(&model, &head, &[], &FreezeSet::new()).is_err());
    }

    #[test]
    fn siamese_examples() {
        let zero = SiameseHead::zeros(2);
        assert_eq!(
            siamese_forward(&zero, &emb(&[3.0, -1.0]), &emb(&[0.2, 7.0])).unwrap(),
            0.5
        );
        let h = SiameseHead {
            w: vec![1.0, 1.0],
            b: 0.0,
        };
        let p = siamese_forward(&h, &emb(&[1.0, 2.0]), &emb(&[3.0, 4.0])).unwrap();
        let expected = 1.0 / (1.0 + (-11f64).exp());
        assert!((p - expected).abs() < 1e-15);
        assert!((p - 0.99998).abs() < 1e-5);
        assert!(siamese_forward(&h, &emb(&[1.0]), &emb(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn sigmoid_stays_open() {
        for z in [-1e4, -800.0, -40.0, 0.0, 40.0, 800.0, 1e4] {
            let p = sigmoid(z);
            assert!(p > 0.0 && p < 1.0, "{z} -> {p}");
        }
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(logits in prop::collection::vec(-50.0f64..50.0, 2..20)) {
            let s: f64 = softmax(&logits).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
        }

        #[test]
        fn siamese_symmetric(
            w in prop::collection::vec(-3.0f64..3.0, 6),
            a in prop::collection::vec(-1.0f64..1.0, 6),
            b in prop::collection::vec(-1.0f64..1.0, 6),
            bias in -2.0f64..2.0,
        ) {
            let h = SiameseHead { w, b: bias };
            let p = siamese_forward(&h, &emb(&a), &emb(&b)).unwrap();
            let q = siamese_forward(&h, &emb(&b), &emb(&a)).unwrap();
            prop_assert_eq!(p, q);
            prop_assert!(p > 0.0 && p < 1.0);
        }
    }
}
