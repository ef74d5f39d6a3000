//! Gradient descent on cut weights so that the partition masks match a
//! target segmentation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::CutWeightField;
use crate::partition::{softmax_masks, CutLayer, PartitionMasks};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub height: usize,
    pub width: usize,
    pub k: usize,
    pub gamma: f64,
    pub tau: f64,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            k: 2,
            gamma: 0.5,
            tau: 0.1,
            steps: 500,
            lr: 1.0,
            seed: 7,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.k == 0 {
            return Err(Error::InvalidArgument("height, width and k must be positive".into()));
        }
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }

    /// `k` fields with entries drawn uniformly from `[0.5, 1.5)`.
    pub fn initial_weights(&self) -> Vec<CutWeightField> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.k)
            .map(|_| CutWeightField::from_fn(self.height, self.width, |_, _, _| rng.gen_range(0.5..1.5)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub loss_trace: Vec<f64>,
    /// Euclidean norm of the full weight gradient at each step.
    pub grad_norm_trace: Vec<f64>,
    pub final_weights: Vec<CutWeightField>,
    pub final_masks: PartitionMasks,
    /// Loss of the final weights, after the last update.
    pub final_loss: f64,
    pub iou: Vec<f64>,
}

impl FitReport {
    pub fn initial_loss(&self) -> f64 {
        self.loss_trace[0]
    }

    pub fn mean_iou(&self) -> f64 {
        self.iou.iter().sum::<f64>() / self.iou.len() as f64
    }

    /// `step,loss` lines with a header.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (i, l) in self.loss_trace.iter().enumerate() {
            out.push_str(&format!("{i},{l:e}\n"));
        }
        out
    }
}

/// Two-class target: a centered `inner×inner` square (class 0) and the rest (class 1).
pub fn centered_square_target(height: usize, width: usize, inner: usize) -> Result<PartitionMasks> {
    if inner > height || inner > width {
        return Err(Error::InvalidArgument(format!("square of side {inner} on a {height}x{width} grid")));
    }
    let (r0, c0) = ((height - inner) / 2, (width - inner) / 2);
    let inside: Vec<f64> = (0..height * width)
        .map(|p| {
            let (r, c) = (p / width, p % width);
            f64::from(u8::from((r0..r0 + inner).contains(&r) && (c0..c0 + inner).contains(&c)))
        })
        .collect();
    let mut data = inside.clone();
    data.extend(inside.iter().map(|v| 1.0 - v));
    PartitionMasks::new(2, height, width, data)
}

fn check_target(target: &PartitionMasks, cfg: &FitConfig) -> Result<()> {
    if target.k() != cfg.k || target.height() != cfg.height || target.width() != cfg.width {
        return Err(Error::DimensionMismatch(format!(
            "target is {}x{}x{}, config expects {}x{}x{}",
            target.k(),
            target.height(),
            target.width(),
            cfg.k,
            cfg.height,
            cfg.width
        )));
    }
    for p in 0..target.num_pixels() {
        let column: Vec<f64> = (0..target.k()).map(|i| target.mask(i)[p]).collect();
        let total: f64 = column.iter().sum();
        if column.iter().any(|&v| !(0.0..=1.0).contains(&v)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "target pixel {p} is not a distribution over classes"
            )));
        }
    }
    Ok(())
}

/// Loss, masks and gradient with respect to every weight field.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub loss: f64,
    pub masks: PartitionMasks,
    pub grads: Vec<CutWeightField>,
}

fn mse(masks: &PartitionMasks, target: &PartitionMasks) -> f64 {
    let total: f64 = masks.data().iter().zip(target.data()).map(|(m, t)| (m - t).powi(2)).sum();
    total / masks.data().len() as f64
}

/// Mean squared error between the masks of `weights` and `target`, and its
/// gradient through the softmax and the cut layer.
pub fn loss_and_grad(layer: &CutLayer, weights: &[CutWeightField], target: &PartitionMasks, tau: f64) -> Result<LossEval> {
    let z = layer.vertex_vars(weights)?;
    let (h, w) = (layer.graph().height(), layer.graph().width());
    let masks = softmax_masks(&z, h, w, tau)?;
    let (k, p) = (masks.k(), masks.num_pixels());
    let count = (k * p) as f64;
    let loss = mse(&masks, target);

    let grad_m: Vec<f64> = masks
        .data()
        .iter()
        .zip(target.data())
        .map(|(m, t)| 2.0 * (m - t) / count)
        .collect();
    // ∂m_i/∂z_j = m_i(δ_ij − m_j)/τ
    let mut grad_z = vec![vec![0.0; p]; k];
    for px in 0..p {
        let weighted: f64 = (0..k).map(|j| masks.mask(j)[px] * grad_m[j * p + px]).sum();
        for (i, gz) in grad_z.iter_mut().enumerate() {
            gz[px] = masks.mask(i)[px] * (grad_m[i * p + px] - weighted) / tau;
        }
    }
    let grads = layer.backward_vertex(&grad_z)?;
    Ok(LossEval { loss, masks, grads })
}

/// Intersection over union of each class between the argmax labelings.
pub fn per_class_iou(pred: &PartitionMasks, target: &PartitionMasks) -> Vec<f64> {
    let (a, b) = (pred.argmax(), target.argmax());
    (0..pred.k())
        .map(|class| {
            let inter = a.iter().zip(&b).filter(|(x, y)| **x == class && **y == class).count();
            let union = a.iter().zip(&b).filter(|(x, y)| **x == class || **y == class).count();
            if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            }
        })
        .collect()
}

/// Plain gradient descent from [`FitConfig::initial_weights`].
///
/// Targets are usually one-hot; any per-pixel distribution is accepted.
///
/// `loss_trace[i]` is the loss before update `i`; the report's masks and
/// IoU describe the weights after the last update.
pub fn fit_cut_weights(target: &PartitionMasks, cfg: &FitConfig) -> Result<FitReport> {
    cfg.validate()?;
    check_target(target, cfg)?;
    let layer = CutLayer::new(cfg.height, cfg.width, cfg.gamma)?;
    let mut weights = cfg.initial_weights();
    let mut loss_trace = Vec::with_capacity(cfg.steps);
    let mut grad_norm_trace = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let eval = loss_and_grad(&layer, &weights, target, cfg.tau)?;
        loss_trace.push(eval.loss);
        let sq: f64 = eval.grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum();
        grad_norm_trace.push(sq.sqrt());
        for (w, g) in weights.iter_mut().zip(&eval.grads) {
            for (wi, gi) in w.data_mut().iter_mut().zip(g.data()) {
                *wi -= cfg.lr * gi;
            }
        }
    }
    let final_masks = layer.masks(&weights, cfg.tau)?;
    let final_loss = mse(&final_masks, target);
    let iou = per_class_iou(&final_masks, target);
    Ok(FitReport {
        loss_trace,
        grad_norm_trace,
        final_weights: weights,
        final_masks,
        final_loss,
        iou,
    })
}
