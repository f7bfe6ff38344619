use ndarray::Array2;

use crate::decoder::{Decoder, GradientSet};
use crate::error::{Result, SgpError};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0;
        if !ok {
            return Err(SgpError::Config(format!(
                "adam needs β₁, β₂ in [0, 1) and ε > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// One bias-corrected Adam update of `params` in place; `t` counts from 1.
#[allow(clippy::too_many_arguments)]
pub fn adam_update<F: Real>(
    params: &mut [F],
    grads: &[F],
    m: &mut [F],
    v: &mut [F],
    lr: f64,
    cfg: &AdamConfig,
    t: u64,
) {
    let b1 = F::from_f64_lossy(cfg.beta1);
    let b2 = F::from_f64_lossy(cfg.beta2);
    let c1 = F::from_f64_lossy(1.0 - cfg.beta1.powf(t as f64));
    let c2 = F::from_f64_lossy(1.0 - cfg.beta2.powf(t as f64));
    let lr = F::from_f64_lossy(lr);
    let eps = F::from_f64_lossy(cfg.eps);
    let one = F::one();
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Adam over a decoder's parameters. Positional-encoding rows are updated
/// only when they receive a gradient, so an update costs the same for any
/// number of nodes.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    pos_m: Array2<F>,
    pos_v: Array2<F>,
}

impl<F: Real> Adam<F> {
    pub fn new(decoder: &Decoder<F>, cfg: AdamConfig) -> Result<Self> {
        cfg.validate()?;
        let tensors = decoder.tensors();
        let (dense, pos) = tensors.split_at(tensors.len() - 1);
        let m: Vec<Vec<F>> = dense.iter().map(|t| vec![F::zero(); t.data.len()]).collect();
        let pos_shape = (pos[0].shape[0], pos[0].shape[1]);
        Ok(Adam {
            cfg,
            step: 0,
            v: m.clone(),
            m,
            pos_m: Array2::zeros(pos_shape),
            pos_v: Array2::zeros(pos_shape),
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, decoder: &mut Decoder<F>, grads: &GradientSet<F>, lr: f64) -> Result<()> {
        if grads.dense.len() != self.m.len() {
            return Err(SgpError::Shape(format!(
                "gradient set has {} tensors, optimizer tracks {}",
                grads.dense.len(),
                self.m.len()
            )));
        }
        self.step += 1;
        let t = self.step;
        let (params, pos) = decoder.split_params_mut();
        for (i, (p, g)) in params.into_iter().zip(&grads.dense).enumerate() {
            let g = g.as_slice().ok_or_else(|| SgpError::Shape("gradient not contiguous".into()))?;
            if g.len() != p.len() {
                return Err(SgpError::Shape(format!(
                    "gradient {i} has {} entries, parameter has {}",
                    g.len(),
                    p.len()
                )));
            }
            adam_update(p, g, &mut self.m[i], &mut self.v[i], lr, &self.cfg, t);
        }
        for (&node, g) in &grads.pos_enc {
            if node >= pos.nrows() || g.len() != pos.ncols() {
                return Err(SgpError::Shape(format!("positional gradient row {node} does not fit")));
            }
            let mut p = pos.row_mut(node);
            let mut m = self.pos_m.row_mut(node);
            let mut v = self.pos_v.row_mut(node);
            adam_update(
                p.as_slice_mut().expect("row of standard matrix"),
                g.as_slice().expect("owned row"),
                m.as_slice_mut().expect("row of standard matrix"),
                v.as_slice_mut().expect("row of standard matrix"),
                lr,
                &self.cfg,
                t,
            );
        }
        Ok(())
    }
}

/// Learning rate multiplied by `gamma` at every milestone epoch reached.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiStepLr {
    pub base: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
}

impl MultiStepLr {
    /// Decay ×`gamma` at 50% and 75% of `max_epochs`.
    pub fn halves(base: f64, max_epochs: usize, gamma: f64) -> Self {
        MultiStepLr {
            base,
            milestones: vec![max_epochs / 2, max_epochs * 3 / 4],
            gamma,
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.base * self.gamma.powi(passed as i32)
    }
}
