//! The rate-distortion training loop.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::data::Dataset;
use crate::error::{shape_err, Result};
use crate::fenm;
use crate::interleave::PlanarImage;
use crate::model::{train_forward, Model, TrainForward};
use crate::qecm::{quantization_errors, QuantErrorStats, HISTOGRAM_BINS};
use crate::tensor::{Scope, Tensor};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// RNG streams of a run, all derived from the training seed.
const CROP_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

/// The scalar objective and its parts.
pub struct Loss {
    pub total: Tensor,
    /// Bits per pixel of both latents.
    pub bpp: f64,
    pub mse: f64,
    pub fe: f64,
}

/// `(R_y + R_z)/(H·W) + weight·MSE(x, x̂) + λ_e·L_FE`. The enhancement term
/// is left out of the graph entirely when `lambda_e` is zero.
pub fn total_loss(x: &Tensor, out: &TrainForward, weight: f64, lambda_e: f64) -> Result<Loss> {
    let &[_, h, w] = x.shape() else {
        return Err(shape_err!("expected a [3,H,W] image, got {:?}", x.shape()));
    };
    let rate = out.bits_y.add(&out.bits_z)?.scalar_mul(1.0 / (h * w) as f64);
    let mse = out.x_hat.mse(x)?;
    let fe = fenm::fe_loss(&out.enhanced, &out.refined)?;
    let mut total = rate.add(&mse.scalar_mul(weight))?;
    if lambda_e != 0.0 {
        total = total.add(&fe.scalar_mul(lambda_e))?;
    }
    Ok(Loss { bpp: rate.item()?, mse: mse.item()?, fe: fe.item()?, total })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub step: u64,
    /// Mean over the batch.
    pub loss: f64,
    pub bpp: f64,
    pub mse: f64,
    pub fe: f64,
    pub lr: f64,
    pub lambda_e: f64,
}

/// Trains from scratch, then fits the decoder-side noise to the
/// quantization errors over the full dataset images. When a checkpoint path
/// is given the model is written there every `checkpoint_every` steps and at
/// the end.
pub fn train(
    cfg: &TrainConfig,
    data: &Dataset,
    checkpoint: Option<&Path>,
    mut on_step: impl FnMut(&StepReport),
) -> Result<Model> {
    cfg.validate()?;
    data.check_crop(cfg.crop)?;
    let mut model = Model::init(cfg.model.clone(), cfg.seed)?;
    model.lambda = Some(cfg.lambda);
    let mut crops = ChaCha8Rng::seed_from_u64(cfg.seed);
    crops.set_stream(CROP_STREAM);
    let mut noise = ChaCha8Rng::seed_from_u64(cfg.seed);
    noise.set_stream(NOISE_STREAM);
    let weight = cfg.distortion_weight();

    for step in 0..cfg.steps {
        let lambda_e = cfg.lambda_e_at(step);
        let lr = cfg.lr_at(step);
        model.params.zero_grads();
        let mut rep = StepReport { step, loss: 0.0, bpp: 0.0, mse: 0.0, fe: 0.0, lr, lambda_e };
        for _ in 0..cfg.batch {
            let x = data.sample_crop(&mut crops, cfg.crop)?.to_tensor();
            let s = Scope::train(&model.params);
            let out = train_forward(&s, &model.cfg, &x, &mut noise)?;
            let loss = total_loss(&x, &out, weight, lambda_e)?;
            loss.total.backward()?;
            let mut grads = model.params.clone();
            s.collect_grads(&mut grads)?;
            drop(s);
            model.params = grads;
            rep.loss += loss.total.item()?;
            rep.bpp += loss.bpp;
            rep.mse += loss.mse;
            rep.fe += loss.fe;
        }
        let k = 1.0 / cfg.batch as f64;
        (rep.loss, rep.bpp, rep.mse, rep.fe) = (rep.loss * k, rep.bpp * k, rep.mse * k, rep.fe * k);
        model.params.scale_grads(k);
        model.params.adam_step(lr, BETA1, BETA2, ADAM_EPS, true)?;
        on_step(&rep);
        if let Some(path) = checkpoint {
            if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
                model.save(path)?;
            }
        }
    }
    let (y, z) = collect_qerr_stats(&model, &data.images)?;
    model.laplace_y = y.params;
    model.laplace_z = z.params;
    if let Some(path) = checkpoint {
        model.save(path)?;
    }
    Ok(model)
}

/// Rounding-error statistics of the continuous latents `y` and `z` over a
/// set of images.
pub fn collect_qerr_stats(model: &Model, images: &[PlanarImage]) -> Result<(QuantErrorStats, QuantErrorStats)> {
    let (mut ey, mut ez) = (Vec::new(), Vec::new());
    for img in images {
        let (y, z) = model.latent(img)?;
        ey.extend(quantization_errors(y.data()));
        ez.extend(quantization_errors(z.data()));
    }
    Ok((QuantErrorStats::from_errors(&ey, HISTOGRAM_BINS)?, QuantErrorStats::from_errors(&ez, HISTOGRAM_BINS)?))
}
