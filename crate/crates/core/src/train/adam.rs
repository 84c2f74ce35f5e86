use crate::autodiff::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::model::Model;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One bias-corrected Adam update. `iter` is the 1-based step count.
pub fn adam_step<S: Scalar>(params: &mut [S], grads: &[S], m: &mut [S], v: &mut [S], lr: f64, iter: u64) -> Result<()> {
    if grads.len() != params.len() || m.len() != params.len() || v.len() != params.len() {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            lhs: vec![params.len()],
            rhs: vec![grads.len(), m.len(), v.len()],
        });
    }
    if iter == 0 {
        return Err(Error::invalid("adam_step", "iteration count starts at 1"));
    }
    let t = iter.min(i32::MAX as u64) as i32;
    let b1 = S::from_f64_lossy(ADAM_BETA1);
    let b2 = S::from_f64_lossy(ADAM_BETA2);
    let c1 = S::from_f64_lossy(1.0 - ADAM_BETA1);
    let c2 = S::from_f64_lossy(1.0 - ADAM_BETA2);
    let step = S::from_f64_lossy(lr / (1.0 - ADAM_BETA1.powi(t)));
    let v_corr = S::from_f64_lossy(1.0 / (1.0 - ADAM_BETA2.powi(t)));
    let eps = S::from_f64_lossy(ADAM_EPS);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = b1 * m[i] + c1 * g;
        v[i] = b2 * v[i] + c2 * g * g;
        params[i] = params[i] - step * m[i] / ((v[i] * v_corr).sqrt() + eps);
    }
    Ok(())
}

/// Adam moments for every parameter tensor of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S = f32> {
    pub step: u64,
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(model: &Model<S>) -> Self {
        let zeros = || model.params().iter().map(|(_, t)| vec![S::zero(); t.numel()]).collect();
        AdamState {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update with per-tensor gradients in parameter order.
    pub fn update(&mut self, model: &mut Model<S>, grads: &[&[S]], lr: f64) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::invalid("adam", format!("{} gradients for {} tensors", grads.len(), self.m.len())));
        }
        self.step += 1;
        for (i, (_, t)) in model.params_mut().iter_mut().enumerate() {
            adam_step(t.data_mut(), grads[i], &mut self.m[i], &mut self.v[i], lr, self.step)?;
        }
        Ok(())
    }

    /// Moments as named tensors for checkpointing.
    pub fn to_tensors(&self, model: &Model<S>) -> Vec<(String, Tensor<f32>)> {
        let mut out = vec![("adam.step".to_string(), Tensor::scalar(self.step as f32))];
        for (kind, moments) in [("m", &self.m), ("v", &self.v)] {
            for ((name, t), data) in model.params().iter().zip(moments) {
                let tensor = Tensor::new(t.shape().to_vec(), data.clone()).expect("moment matches parameter");
                out.push((format!("adam.{kind}.{name}"), tensor.cast()));
            }
        }
        out
    }
}
