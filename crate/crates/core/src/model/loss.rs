//! Wasserstein critic/generator losses with the bias regularizer.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::discriminator::Discriminator;
use super::generator::Generator;
use super::regularizer::{bias_regularizer, EPS_REG};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Losses<T> {
    /// `−E_fake[D] + λ·R_bias`.
    pub generator: T,
    /// `E_fake[D] − E_real[D]`.
    pub discriminator: T,
    /// R_bias, when it entered the generator loss (λ ≠ 0).
    pub regularizer: Option<T>,
}

fn check_batch<T: Scalar>(name: &str, batch: &Tensor<T>, d_x: usize) -> Result<()> {
    if batch.shape().len() != 2 || batch.cols() != d_x {
        return Err(Error::contract(format!(
            "{name} batch has shape {:?}, expected [m, {d_x}]",
            batch.shape()
        )));
    }
    Ok(())
}

/// Batch-mean losses for the current critic state. λ = 0 skips the
/// regularizer, so single-bias generators are accepted there.
pub fn losses<T: Scalar>(
    gen: &Generator<T>,
    disc: &Discriminator<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    lambda: f64,
) -> Result<Losses<T>> {
    let d_x = disc.d_x();
    check_batch("real", real, d_x)?;
    check_batch("fake", fake, d_x)?;
    let mean = |t: Tensor<T>| t.sum() / T::c(t.numel() as f64);
    let d_fake = mean(disc.evaluate(fake)?);
    let d_real = mean(disc.evaluate(real)?);
    let regularizer = if lambda != 0.0 {
        Some(bias_regularizer(gen, EPS_REG)?)
    } else {
        None
    };
    let reg_term = regularizer.map_or(T::zero(), |r| T::c(lambda) * r);
    Ok(Losses {
        generator: -d_fake + reg_term,
        discriminator: d_fake - d_real,
        regularizer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::SpectralNormLinear;
    use crate::model::discriminator::DiscLayer;
    use crate::model::generator::MlpSpec;
    use crate::rng::seeded;

    fn gen(num_biases: usize) -> Generator<f64> {
        let spec = MlpSpec {
            d_z: 2,
            hidden: vec![4],
            d_x: 5,
            num_biases,
            slope: 0.2,
            bias_sd: 0.3,
        };
        Generator::mlp(&spec, &mut seeded(1)).unwrap()
    }

    fn manual_critic(d: &Discriminator<f64>, x: &[f64]) -> f64 {
        let mut h = Tensor::vector(x.to_vec());
        for layer in d.layers() {
            h = match layer {
                DiscLayer::Linear(l) => {
                    let sigma = l.u.dot(&l.weight.matmul(&l.v).unwrap());
                    let w = l.weight.scale(1.0 / sigma);
                    w.matmul(&h).unwrap().add(&l.bias).unwrap()
                }
                DiscLayer::Activation(a) => a.forward(&h),
            };
        }
        h.data()[0]
    }

    #[test]
    fn zero_lambda_is_plain_wgan() {
        let mut rng = seeded(2);
        let g = gen(1);
        let d = Discriminator::mlp(5, &[6], 0.2, &mut rng).unwrap();
        let real = Tensor::randn(&[4, 5], 1.0, &mut rng);
        let fake = Tensor::randn(&[3, 5], 1.0, &mut rng);
        let l = losses(&g, &d, &real, &fake, 0.0).unwrap();
        assert!(l.regularizer.is_none());
        let d_fake = d.evaluate(&fake).unwrap().sum() / 3.0;
        assert_eq!(l.generator, -d_fake);
    }

    #[test]
    fn constant_critic() {
        let mut rng = seeded(3);
        let mut lin = SpectralNormLinear::from_weight(Tensor::zeros(&[1, 5]), &mut rng);
        lin.bias = Tensor::vector(vec![0.75]);
        let d = Discriminator::new(vec![DiscLayer::Linear(lin)]).unwrap();
        let g = gen(3);
        let real = Tensor::randn(&[4, 5], 1.0, &mut rng);
        let fake = Tensor::randn(&[2, 5], 1.0, &mut rng);
        let l = losses(&g, &d, &real, &fake, 0.05).unwrap();
        let r = bias_regularizer(&g, EPS_REG).unwrap();
        assert_eq!(l.discriminator, 0.0);
        assert!((l.generator - (-0.75 + 0.05 * r)).abs() < 1e-15);
    }

    #[test]
    fn matches_hand_composed_expectations() {
        let mut rng = seeded(4);
        let g = gen(3);
        let mut d = Discriminator::mlp(5, &[7, 3], 0.2, &mut rng).unwrap();
        for l in d.linears_mut() {
            l.bias = Tensor::randn(l.bias.shape(), 0.5, &mut rng);
            l.power_iterate(3);
        }
        let real = Tensor::randn(&[6, 5], 1.0, &mut rng);
        let fake = Tensor::randn(&[4, 5], 1.0, &mut rng);
        let e_real: f64 = (0..6).map(|k| manual_critic(&d, real.row(k))).sum::<f64>() / 6.0;
        let e_fake: f64 = (0..4).map(|k| manual_critic(&d, fake.row(k))).sum::<f64>() / 4.0;
        let lambda = 0.3;
        let r = bias_regularizer(&g, EPS_REG).unwrap();
        let l = losses(&g, &d, &real, &fake, lambda).unwrap();
        assert!((l.discriminator - (e_fake - e_real)).abs() < 1e-10);
        assert!((l.generator - (-e_fake + lambda * r)).abs() < 1e-10);
    }

    #[test]
    fn mismatched_batch_rejected() {
        let mut rng = seeded(5);
        let g = gen(2);
        let d = Discriminator::mlp(5, &[3], 0.2, &mut rng).unwrap();
        let real = Tensor::randn(&[2, 4], 1.0, &mut rng);
        let fake = Tensor::randn(&[2, 5], 1.0, &mut rng);
        assert!(losses(&g, &d, &real, &fake, 0.0).is_err());
    }
}
