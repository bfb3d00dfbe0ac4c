use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-element multipliers of an inverted-dropout pass: `0` for dropped
/// elements and `1/(1−rate)` for survivors.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub scale: Vec<f64>,
}

impl DropoutMask {
    pub fn sample<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Result<Self> {
        check_rate(rate)?;
        let keep = 1.0 / (1.0 - rate);
        let scale = (0..len).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect();
        Ok(Self { scale })
    }

    pub fn apply(&self, values: &mut [f64]) {
        values.iter_mut().zip(&self.scale).for_each(|(v, s)| *v *= s);
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    Ok(())
}

/// Inverted dropout. Inference is the identity and returns no mask.
pub fn dropout_apply<R: Rng + ?Sized>(input: &Tensor, rate: f64, mode: Mode, rng: &mut R) -> Result<(Tensor, Option<DropoutMask>)> {
    check_rate(rate)?;
    match mode {
        Mode::Infer => Ok((input.clone(), None)),
        Mode::Train => {
            let mask = DropoutMask::sample(input.len(), rate, rng)?;
            let mut out = input.clone();
            mask.apply(out.data_mut());
            Ok((out, Some(mask)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn identity_at_inference_and_zero_rate() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::vector(alloc::vec![1.5, -2.0, 0.25]);
        assert_eq!(dropout_apply(&x, 0.8, Mode::Infer, &mut rng).unwrap().0, x);
        assert_eq!(dropout_apply(&x, 0.0, Mode::Train, &mut rng).unwrap().0, x);
    }

    #[test]
    fn inverted_scaling_is_unbiased() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let x = Tensor::filled(&[100_000], 1.0);
        let (y, _) = dropout_apply(&x, 0.8, Mode::Train, &mut rng).unwrap();
        let mean = y.data().iter().sum::<f64>() / y.len() as f64;
        assert!((0.97..=1.03).contains(&mean), "{mean}");
    }

    #[test]
    fn rate_of_one_is_rejected() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(dropout_apply(&Tensor::zeros(&[2]), 1.0, Mode::Train, &mut rng), Err(Error::Config(_))));
    }
}
