use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{plane_tensor, Network};
use crate::dataset::PairedSample;
use crate::diffengine::{AdamConfig, AdamState, Graph, Model};
use crate::error::{Error, Result};
use crate::imageops::{psnr, ImagePlane};
use crate::tensor::{Real, Tensor};

/// One training crop as `(1, h*w)` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample<F> {
    pub y: Tensor<F>,
    pub z: Tensor<F>,
    pub x: Tensor<F>,
    pub height: usize,
    pub width: usize,
}

impl<F: Real> TrainSample<F> {
    pub fn new(y: &ImagePlane, z: &ImagePlane, x: &ImagePlane) -> Result<Self> {
        let pair = PairedSample::new(y.clone(), z.clone(), x.clone())?;
        Ok(Self::from_pair(&pair))
    }

    pub fn from_pair(p: &PairedSample) -> Self {
        let (width, height) = p.dims();
        Self {
            y: plane_tensor(&p.y_up),
            z: plane_tensor(&p.z),
            x: plane_tensor(&p.x),
            height,
            width,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch: 8,
            lr: AdamConfig::default().lr,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::InvalidParameter(format!(
                "epochs and batch must be positive, got {} and {}",
                self.epochs, self.batch
            )));
        }
        AdamConfig::with_lr(self.lr).validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    /// Mean over samples of the per-crop sum of squared errors.
    pub loss: f64,
    /// Mean PSNR of the clamped output over the validation crops.
    pub val_psnr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingReport {
    pub epochs: Vec<EpochReport>,
}

impl TrainingReport {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    /// `epoch,loss,val_psnr` lines with a header.
    pub fn to_text(&self) -> String {
        let mut s = String::from("epoch,loss,val_psnr\n");
        for e in &self.epochs {
            let _ = write!(s, "{},{:.9e},", e.epoch, e.loss);
            match e.val_psnr {
                Some(p) => {
                    let _ = writeln!(s, "{p:.6}");
                }
                None => s.push('\n'),
            }
        }
        s
    }
}

/// Mean PSNR (peak 1) of the clamped network output over `samples`.
pub fn mean_psnr<F: Real>(net: &Network<F>, samples: &[PairedSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for s in samples {
        let out = net.forward(&s.y_up, &s.z)?.clamped();
        total += psnr(&out, &s.x, 1.0)?;
    }
    Ok(total / samples.len() as f64)
}

fn batch_step<F: Real>(
    net: &mut Network<F>,
    adam: &mut AdamState<F>,
    samples: &[TrainSample<F>],
    indices: &[usize],
    losses: &mut [f64],
) -> Result<()> {
    net.store.zero_grad();
    for &i in indices {
        let mut g = Graph::new();
        let loss = net.arch.loss(&mut g, &net.store, &samples[i])?;
        let v = g.value(loss).item().as_f64();
        if !v.is_finite() {
            return Err(Error::NumericFailure { tensor: "loss".into() });
        }
        losses[i] = v;
        g.backward(loss, &mut net.store)?;
    }
    net.store.mark_grads_ready();
    adam.step(&mut net.store)
}

/// Minimizes the summed squared error with ADAM. Samples are reshuffled
/// every epoch from one generator seeded with `config.seed`; `on_epoch` runs
/// after each epoch with the updated network.
pub fn train<F: Real>(
    net: &mut Network<F>,
    data: &[PairedSample],
    validation: &[PairedSample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochReport, &Network<F>) -> Result<()>,
) -> Result<TrainingReport> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let samples: Vec<TrainSample<F>> = data.iter().map(TrainSample::from_pair).collect();
    let mut adam = AdamState::new(&net.store, AdamConfig::with_lr(config.lr))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut losses = vec![0.0; samples.len()];
    let mut report = TrainingReport::default();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(config.batch).enumerate() {
            match batch_step(net, &mut adam, &samples, chunk, &mut losses) {
                Err(Error::NumericFailure { .. }) => return Err(Error::NanLoss { epoch, batch: b }),
                r => r?,
            }
        }
        // summed in sample order so the value does not depend on the shuffle
        let loss = losses.iter().sum::<f64>() / samples.len() as f64;
        let val_psnr = if validation.is_empty() {
            None
        } else {
            Some(mean_psnr(net, validation)?)
        };
        let e = EpochReport { epoch, loss, val_psnr };
        on_epoch(&e, net)?;
        report.epochs.push(e);
    }
    Ok(report)
}
