//! The joint generative-discriminative objective.
//!
//! For a batch of `N` generated sketches `pred_i` and drawn sketches `S_i`
//! (pixel sums of squared differences written `d(a, b)`):
//!
//! * generative loss: `(1/N) Σ_i d(S_i, pred_i)` — pull each generated
//!   sketch toward its own subject's drawing;
//! * discriminative regularizer:
//!   `(1/(N(N−1))) Σ_i Σ_{j≠i} log(1 + exp(−d(S_i, pred_j)/λ))` — push each
//!   generated sketch away from every *other* subject's drawing;
//! * joint objective: `generative + α · discriminative`.
//!
//! The squared-difference terms are pixel sums (not means); on the 0–255
//! pixel scale of 143×188 sketches this puts `d/λ` in the 0.1–1 range at the
//! default `λ = 10⁹`, which is exactly the regime the overflow-control
//! divisor is for. All gradient outputs are with respect to the predictions.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Weights of the joint objective: `alpha` scales the discriminative
/// regularizer, `lambda` is the overflow-control divisor inside it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 1e4,
            lambda: 1e9,
        }
    }
}

impl LossConfig {
    pub fn new(alpha: f64, lambda: f64) -> Result<Self> {
        let cfg = LossConfig { alpha, lambda };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::Argument(format!(
                "alpha must be finite and non-negative, got {}",
                self.alpha
            )));
        }
        if !self.lambda.is_finite() || self.lambda <= 0.0 {
            return Err(Error::Argument(format!(
                "lambda must be finite and positive, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Numerically stable `log(1 + exp(x))`.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Numerically stable logistic function `1 / (1 + exp(−x))`.
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sum over all elements of the squared difference.
pub fn pair_sqdist<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<T> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "pair_sqdist shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut acc = T::zero();
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = x - y;
        acc = acc + d * d;
    }
    Ok(acc)
}

fn check_batch<T: Scalar>(preds: &[Tensor<T>], targets: &[Tensor<T>]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::Argument("loss over an empty batch".into()));
    }
    if preds.len() != targets.len() {
        return Err(Error::Argument(format!(
            "{} predictions vs {} targets",
            preds.len(),
            targets.len()
        )));
    }
    for (idx, (p, t)) in preds.iter().zip(targets).enumerate() {
        if p.shape() != t.shape() {
            return Err(Error::Dimension(format!(
                "pair {idx}: prediction {:?} vs target {:?}",
                p.shape(),
                t.shape()
            )));
        }
    }
    Ok(())
}

/// Mean over the batch of per-pair squared distances, with its gradients
/// `(2/N)(pred_i − S_i)` with respect to each prediction.
pub fn generative_loss<T: Scalar>(
    preds: &[Tensor<T>],
    targets: &[Tensor<T>],
) -> Result<(T, Vec<Tensor<T>>)> {
    check_batch(preds, targets)?;
    let n = T::from_f64_lossy(preds.len() as f64);
    let mut value = T::zero();
    let mut grads = Vec::with_capacity(preds.len());
    let two = T::from_f64_lossy(2.0);
    for (p, t) in preds.iter().zip(targets) {
        value = value + pair_sqdist(t, p)?;
        grads.push(p.zip_map(t, |pv, tv| two / n * (pv - tv))?);
    }
    Ok((value / n, grads))
}

/// The discriminative regularizer over all ordered cross pairs `(i, j≠i)`,
/// with its gradients with respect to each prediction. Values lie in
/// `(0, log 2]` and shrink as cross-subject distances grow.
pub fn discriminative_regularizer<T: Scalar>(
    preds: &[Tensor<T>],
    targets: &[Tensor<T>],
    cfg: &LossConfig,
) -> Result<(T, Vec<Tensor<T>>)> {
    cfg.validate()?;
    check_batch(preds, targets)?;
    let n = preds.len();
    if n < 2 {
        return Err(Error::Argument(format!(
            "the discriminative regularizer needs at least 2 pairs, got {n}"
        )));
    }

    let norm = 1.0 / (n as f64 * (n - 1) as f64);
    let mut value = 0.0f64;
    let mut grads: Vec<Tensor<T>> = preds
        .iter()
        .map(|p| Tensor::zeros(p.channels(), p.height(), p.width()).expect("valid shape"))
        .collect();

    for (i, target) in targets.iter().enumerate() {
        for (j, pred) in preds.iter().enumerate() {
            if j == i {
                continue;
            }
            let d = pair_sqdist(target, pred)?
                .to_f64()
                .ok_or_else(|| Error::Argument("non-finite pairwise distance".into()))?;
            let z = -d / cfg.lambda;
            value += softplus(z);
            // d/d pred_j of softplus(−d_ij/λ) = −σ(−d_ij/λ)/λ · 2(pred_j − S_i).
            let coeff = T::from_f64_lossy(-2.0 * norm * logistic(z) / cfg.lambda);
            let grad = &mut grads[j];
            for ((g, &pv), &tv) in grad
                .data_mut()
                .iter_mut()
                .zip(pred.data())
                .zip(target.data())
            {
                *g = *g + coeff * (pv - tv);
            }
        }
    }
    Ok((T::from_f64_lossy(value * norm), grads))
}

/// Joint objective value and per-prediction gradients.
#[derive(Debug, Clone)]
pub struct JointLoss<T> {
    /// `generative + alpha * discriminative`.
    pub total: T,
    pub generative: T,
    /// Unweighted regularizer value; zero when `alpha == 0` or the batch has
    /// a single pair.
    pub discriminative: T,
    pub grads: Vec<Tensor<T>>,
}

/// Combine the generative loss and the α-weighted discriminative
/// regularizer. Single-pair batches skip the regularizer (it is undefined
/// for `N = 1`) with a logged warning.
pub fn joint_loss<T: Scalar>(
    preds: &[Tensor<T>],
    targets: &[Tensor<T>],
    cfg: &LossConfig,
) -> Result<JointLoss<T>> {
    cfg.validate()?;
    let (generative, mut grads) = generative_loss(preds, targets)?;

    if cfg.alpha == 0.0 {
        return Ok(JointLoss {
            total: generative,
            generative,
            discriminative: T::zero(),
            grads,
        });
    }
    if preds.len() < 2 {
        log::warn!("batch of 1: skipping the discriminative regularizer (needs pairs)");
        return Ok(JointLoss {
            total: generative,
            generative,
            discriminative: T::zero(),
            grads,
        });
    }

    let (discriminative, dgrads) = discriminative_regularizer(preds, targets, cfg)?;
    let alpha = T::from_f64_lossy(cfg.alpha);
    for (g, dg) in grads.iter_mut().zip(&dgrads) {
        *g = g.zip_map(dg, |a, b| a + alpha * b)?;
    }
    Ok(JointLoss {
        total: generative + alpha * discriminative,
        generative,
        discriminative,
        grads,
    })
}

#[cfg(test)]
mod tests {
    // Index loops below deliberately transcribe the double sums.
    #![allow(clippy::needless_range_loop)]

    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize, range: f64) -> Tensor<f64> {
        Tensor::new(
            c,
            h,
            w,
            (0..c * h * w).map(|_| rng.random_range(-range..range)).collect(),
        )
        .unwrap()
    }

    fn random_batch(rng: &mut ChaCha8Rng, n: usize) -> (Vec<Tensor<f64>>, Vec<Tensor<f64>>) {
        let preds = (0..n).map(|_| random_tensor(rng, 1, 3, 4, 2.0)).collect();
        let targets = (0..n).map(|_| random_tensor(rng, 1, 3, 4, 2.0)).collect();
        (preds, targets)
    }

    #[test]
    fn sqdist_basics() {
        let a = Tensor::new(1, 1, 2, vec![1.0f64, 2.0]).unwrap();
        let b = Tensor::new(1, 1, 2, vec![0.0f64, 0.0]).unwrap();
        assert_eq!(pair_sqdist(&a, &a).unwrap(), 0.0);
        assert_eq!(pair_sqdist(&a, &b).unwrap(), 5.0);
        let c = Tensor::<f64>::zeros(1, 2, 1).unwrap();
        assert!(pair_sqdist(&a, &c).is_err());
    }

    #[test]
    fn sqdist_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_tensor(&mut rng, 2, 4, 5, 3.0);
        let b = random_tensor(&mut rng, 2, 4, 5, 3.0);
        let mut expected = 0.0;
        for c in 0..2 {
            for y in 0..4 {
                for x in 0..5 {
                    let d = a.at(c, y, x) - b.at(c, y, x);
                    expected += d * d;
                }
            }
        }
        assert!((pair_sqdist(&a, &b).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn generative_loss_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (preds, _) = random_batch(&mut rng, 3);
        let (value, grads) = generative_loss(&preds, &preds).unwrap();
        assert_eq!(value, 0.0);
        assert!(grads.iter().all(|g| g.data().iter().all(|&v| v == 0.0)));

        // Single nonzero pixel difference d contributes d² and gradient 2d.
        let target = Tensor::<f64>::zeros(1, 2, 2).unwrap();
        let mut pred = target.clone();
        pred.set(0, 1, 0, 3.0);
        let (value, grads) = generative_loss(&[pred], &[target]).unwrap();
        assert!((value - 9.0).abs() < 1e-12);
        assert!((grads[0].at(0, 1, 0) - 6.0).abs() < 1e-12);
        assert_eq!(grads[0].at(0, 0, 0), 0.0);

        assert!(generative_loss::<f64>(&[], &[]).is_err());
    }

    #[test]
    fn generative_loss_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut preds, targets) = random_batch(&mut rng, 3);
        let (_, grads) = generative_loss(&preds, &targets).unwrap();
        let step = 1e-6;
        for pair in 0..3 {
            for idx in [0usize, 5, 11] {
                let orig = preds[pair].data()[idx];
                preds[pair].data_mut()[idx] = orig + step;
                let up = generative_loss(&preds, &targets).unwrap().0;
                preds[pair].data_mut()[idx] = orig - step;
                let down = generative_loss(&preds, &targets).unwrap().0;
                preds[pair].data_mut()[idx] = orig;
                let fd = (up - down) / (2.0 * step);
                let analytic = grads[pair].data()[idx];
                let denom = analytic.abs().max(fd.abs()).max(1e-9);
                assert!((analytic - fd).abs() / denom < 1e-6, "{analytic} vs {fd}");
            }
        }
    }

    #[test]
    fn regularizer_equals_log2_at_zero_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (preds, _) = random_batch(&mut rng, 3);
        let cfg = LossConfig::new(1.0, 10.0).unwrap();
        // All cross distances are zero only if every tensor equals every
        // other; use identical copies.
        let same: Vec<Tensor<f64>> = (0..3).map(|_| preds[0].clone()).collect();
        let (value, _) = discriminative_regularizer(&same, &same, &cfg).unwrap();
        assert!((value - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn regularizer_vanishes_at_large_distance() {
        let a = Tensor::filled(1, 2, 2, 0.0f64).unwrap();
        let b = Tensor::filled(1, 2, 2, 10.0f64).unwrap();
        // d = 400 at lambda = 10 puts each term at softplus(−40) ≈ 4e−18.
        let cfg = LossConfig::new(1.0, 10.0).unwrap();
        let (value, _) =
            discriminative_regularizer(&[a.clone(), b.clone()], &[a, b], &cfg).unwrap();
        assert!(value > 0.0, "asymptote approaches zero from above");
        assert!(value < 1e-15, "got {value}");
    }

    #[test]
    fn regularizer_requires_pairs() {
        let t = Tensor::<f64>::zeros(1, 2, 2).unwrap();
        let cfg = LossConfig::default();
        let single = [t];
        assert!(discriminative_regularizer(&single, &single, &cfg).is_err());
    }

    /// Independent transcription of the regularizer: a plain double loop
    /// over ordered pairs with no shared code.
    fn regularizer_oracle(preds: &[Tensor<f64>], targets: &[Tensor<f64>], lambda: f64) -> f64 {
        let n = preds.len();
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let mut d = 0.0;
                for (a, b) in targets[i].data().iter().zip(preds[j].data()) {
                    d += (a - b) * (a - b);
                }
                total += (1.0 + (-d / lambda).exp()).ln();
            }
        }
        total / (n as f64 * (n - 1) as f64)
    }

    #[test]
    fn regularizer_matches_oracle_and_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut preds, targets) = random_batch(&mut rng, 3);
        let cfg = LossConfig::new(1.0, 10.0).unwrap();

        let (value, grads) = discriminative_regularizer(&preds, &targets, &cfg).unwrap();
        let oracle = regularizer_oracle(&preds, &targets, cfg.lambda);
        assert!((value - oracle).abs() / oracle.abs().max(1e-12) < 1e-12);

        let step = 1e-5;
        for pair in 0..3 {
            for idx in [0usize, 3, 7] {
                let orig = preds[pair].data()[idx];
                preds[pair].data_mut()[idx] = orig + step;
                let up = regularizer_oracle(&preds, &targets, cfg.lambda);
                preds[pair].data_mut()[idx] = orig - step;
                let down = regularizer_oracle(&preds, &targets, cfg.lambda);
                preds[pair].data_mut()[idx] = orig;
                let fd = (up - down) / (2.0 * step);
                let analytic = grads[pair].data()[idx];
                let denom = analytic.abs().max(fd.abs()).max(1e-10);
                assert!((analytic - fd).abs() / denom < 1e-5, "{analytic} vs {fd}");
            }
        }
    }

    #[test]
    fn regularizer_strictly_decreases_with_distance() {
        // N = 2: moving pred_2 away from S_1 changes only d_12.
        let s1 = Tensor::filled(1, 2, 2, 1.0f64).unwrap();
        let s2 = Tensor::filled(1, 2, 2, -1.0f64).unwrap();
        let p1 = Tensor::filled(1, 2, 2, 0.5f64).unwrap();
        let cfg = LossConfig::new(1.0, 10.0).unwrap();
        let mut prev = f64::INFINITY;
        for offset in [0.0, 1.0, 2.0, 4.0] {
            let p2 = Tensor::filled(1, 2, 2, 1.0 + offset).unwrap();
            let (value, _) = discriminative_regularizer(
                &[p1.clone(), p2],
                &[s1.clone(), s2.clone()],
                &cfg,
            )
            .unwrap();
            assert!(value < prev, "value {value} should drop below {prev}");
            assert!(value > 0.0 && value <= std::f64::consts::LN_2 + 1e-15);
            prev = value;
        }
    }

    #[test]
    fn joint_loss_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (preds, targets) = random_batch(&mut rng, 3);

        // alpha = 0 reduces exactly to the generative loss.
        let cfg0 = LossConfig::new(0.0, 10.0).unwrap();
        let joint = joint_loss(&preds, &targets, &cfg0).unwrap();
        let (gen, gen_grads) = generative_loss(&preds, &targets).unwrap();
        assert_eq!(joint.total, gen);
        assert_eq!(joint.discriminative, 0.0);
        assert_eq!(joint.grads, gen_grads);

        // preds = targets with every distance zero gives exactly
        // alpha * log 2 at alpha = 1e4.
        let cfg = LossConfig::new(1e4, 10.0).unwrap();
        let identical: Vec<Tensor<f64>> = (0..3).map(|_| preds[0].clone()).collect();
        let same = joint_loss(&identical, &identical, &cfg).unwrap();
        assert!((same.total - 1e4 * std::f64::consts::LN_2).abs() < 1e-8);
        assert_eq!(same.generative, 0.0);
    }

    #[test]
    fn joint_loss_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (mut preds, targets) = random_batch(&mut rng, 3);
        let cfg = LossConfig::new(1e4, 10.0).unwrap();
        let grads = joint_loss(&preds, &targets, &cfg).unwrap().grads;
        let step = 1e-5;
        for pair in 0..3 {
            for idx in [1usize, 6, 10] {
                let orig = preds[pair].data()[idx];
                preds[pair].data_mut()[idx] = orig + step;
                let up = joint_loss(&preds, &targets, &cfg).unwrap().total;
                preds[pair].data_mut()[idx] = orig - step;
                let down = joint_loss(&preds, &targets, &cfg).unwrap().total;
                preds[pair].data_mut()[idx] = orig;
                let fd = (up - down) / (2.0 * step);
                let analytic = grads[pair].data()[idx];
                let denom = analytic.abs().max(fd.abs()).max(1e-9);
                assert!((analytic - fd).abs() / denom < 1e-5, "{analytic} vs {fd}");
            }
        }
    }

    #[test]
    fn joint_loss_single_pair_skips_regularizer() {
        let t = Tensor::filled(1, 2, 2, 1.0f64).unwrap();
        let p = Tensor::filled(1, 2, 2, 2.0f64).unwrap();
        let cfg = LossConfig::default();
        let joint = joint_loss(&[p], &[t], &cfg).unwrap();
        assert_eq!(joint.discriminative, 0.0);
        assert_eq!(joint.total, joint.generative);
    }
}
