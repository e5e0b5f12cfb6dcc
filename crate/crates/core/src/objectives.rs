//! Training losses: conditional adversarial terms on logit maps and the weighted MAE + MSE
//! reconstruction term. Every loss has a companion returning its gradient.

use ndarray::{Array4, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_adv: f64,
    pub lambda_mae: f64,
    pub lambda_mse: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_adv: 1.0,
            lambda_mae: 100.0,
            lambda_mse: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("loss.lambda_adv", self.lambda_adv),
            ("loss.lambda_mae", self.lambda_mae),
            ("loss.lambda_mse", self.lambda_mse),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("{v} must be a finite non-negative weight")));
            }
        }
        if self.lambda_adv == 0.0 && self.lambda_mae == 0.0 && self.lambda_mse == 0.0 {
            return Err(Error::config("loss", "at least one weight must be positive"));
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            lambda_adv: self.lambda_adv * c,
            lambda_mae: self.lambda_mae * c,
            lambda_mse: self.lambda_mse * c,
        }
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_same<F: Scalar>(a: &Array4<F>, b: &Array4<F>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// Mean absolute and mean squared difference, accumulated in `f64`.
pub fn mae_mse<F: Scalar>(fake: &Array4<F>, real: &Array4<F>) -> Result<(f64, f64)> {
    check_same(fake, real)?;
    let n = fake.len() as f64;
    let (sa, ss) = Zip::from(fake).and(real).fold((0.0, 0.0), |(sa, ss), &f, &r| {
        let d = f.as_f64() - r.as_f64();
        (sa + d.abs(), ss + d * d)
    });
    Ok((sa / n, ss / n))
}

/// `λ_mae·mean|fake − real| + λ_mse·mean(fake − real)²`.
pub fn reconstruction_loss<F: Scalar>(fake: &Array4<F>, real: &Array4<F>, w: &LossWeights) -> Result<f64> {
    let (mae, mse) = mae_mse(fake, real)?;
    Ok(w.lambda_mae * mae + w.lambda_mse * mse)
}

/// Reconstruction loss and its gradient with respect to `fake`. The MAE subgradient at a
/// zero difference is 0.
pub fn reconstruction_loss_grad<F: Scalar>(fake: &Array4<F>, real: &Array4<F>, w: &LossWeights) -> Result<(f64, Array4<F>)> {
    let loss = reconstruction_loss(fake, real, w)?;
    let n = fake.len() as f64;
    let (ca, cs) = (w.lambda_mae / n, 2.0 * w.lambda_mse / n);
    let mut g = Array4::<F>::zeros(fake.dim());
    Zip::from(&mut g).and(fake).and(real).for_each(|g, &f, &r| {
        let d = f.as_f64() - r.as_f64();
        let sign = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        *g = F::of(ca * sign + cs * d);
    });
    Ok((loss, g))
}

fn mean_map<F: Scalar>(a: &Array4<F>, f: impl Fn(f64) -> f64) -> f64 {
    a.iter().map(|&v| f(v.as_f64())).sum::<f64>() / a.len() as f64
}

/// Discriminator loss: `[mean softplus(−real) + mean softplus(fake)] / 2`.
pub fn adversarial_loss_d<F: Scalar>(real_logits: &Array4<F>, fake_logits: &Array4<F>) -> f64 {
    (mean_map(real_logits, |x| softplus(-x)) + mean_map(fake_logits, softplus)) / 2.0
}

/// Discriminator loss with gradients `(d real_logits, d fake_logits)`.
pub fn adversarial_loss_d_grad<F: Scalar>(real_logits: &Array4<F>, fake_logits: &Array4<F>) -> (f64, Array4<F>, Array4<F>) {
    let loss = adversarial_loss_d(real_logits, fake_logits);
    let nr = 2.0 * real_logits.len() as f64;
    let nf = 2.0 * fake_logits.len() as f64;
    let dr = real_logits.mapv(|x| F::of(-sigmoid(-x.as_f64()) / nr));
    let df = fake_logits.mapv(|x| F::of(sigmoid(x.as_f64()) / nf));
    (loss, dr, df)
}

/// Non-saturating generator loss: `mean softplus(−fake)`.
pub fn adversarial_loss_g<F: Scalar>(fake_logits: &Array4<F>) -> f64 {
    mean_map(fake_logits, |x| softplus(-x))
}

pub fn adversarial_loss_g_grad<F: Scalar>(fake_logits: &Array4<F>) -> (f64, Array4<F>) {
    let n = fake_logits.len() as f64;
    let g = fake_logits.mapv(|x| F::of(-sigmoid(-x.as_f64()) / n));
    (adversarial_loss_g(fake_logits), g)
}

/// Additive breakdown of the generator objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorLoss {
    pub total: f64,
    /// `λ_adv · adversarial_loss_g`.
    pub adversarial: f64,
    pub reconstruction: f64,
    /// Unweighted mean absolute error, kept for monitoring.
    pub mae: f64,
}

pub fn total_generator_loss<F: Scalar>(
    fake: &Array4<F>,
    real: &Array4<F>,
    fake_logits: &Array4<F>,
    w: &LossWeights,
) -> Result<GeneratorLoss> {
    let (mae, mse) = mae_mse(fake, real)?;
    let reconstruction = w.lambda_mae * mae + w.lambda_mse * mse;
    let adversarial = if w.lambda_adv == 0.0 {
        0.0
    } else {
        w.lambda_adv * adversarial_loss_g(fake_logits)
    };
    Ok(GeneratorLoss {
        total: adversarial + reconstruction,
        adversarial,
        reconstruction,
        mae,
    })
}

/// Generator objective with `(d fake from reconstruction, d fake_logits)`.
pub fn total_generator_loss_grad<F: Scalar>(
    fake: &Array4<F>,
    real: &Array4<F>,
    fake_logits: &Array4<F>,
    w: &LossWeights,
) -> Result<(GeneratorLoss, Array4<F>, Array4<F>)> {
    let parts = total_generator_loss(fake, real, fake_logits, w)?;
    let (_, d_fake) = reconstruction_loss_grad(fake, real, w)?;
    let (_, mut d_logits) = adversarial_loss_g_grad(fake_logits);
    d_logits.mapv_inplace(|g| g * F::of(w.lambda_adv));
    Ok((parts, d_fake, d_logits))
}
