//! AdamW with decoupled weight decay.
//!
//! The decay is applied as a multiplicative factor `(1 - lr*wd)` on the
//! parameter, separate from the adaptive gradient term, so with zero
//! gradients parameters decay geometrically and exactly. Folding the decay
//! into the gradient (plain Adam + L2) would route it through the moment
//! estimates and lose that property.

use crate::numgrad::Tensor;

use super::TrainError;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64, params: &[&Tensor]) -> Self {
        AdamW {
            lr,
            weight_decay,
            t: 0,
            m: params
                .iter()
                .map(|p| Tensor::zeros(p.shape().to_vec()))
                .collect(),
            v: params
                .iter()
                .map(|p| Tensor::zeros(p.shape().to_vec()))
                .collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One optimizer step over the flat parameter registry. `params` and
    /// `grads` must mirror the registry the state was built from.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Tensor],
    ) -> Result<(), TrainError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(TrainError::OptimizerShape(format!(
                "expected {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        let decay = 1.0 - self.lr * self.weight_decay;
        for ((theta, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(&mut self.v))
        {
            if theta.shape() != m.shape() || g.shape() != m.shape() {
                return Err(TrainError::OptimizerShape(format!(
                    "parameter shape {:?} / grad shape {:?} vs state shape {:?}",
                    theta.shape(),
                    g.shape(),
                    m.shape()
                )));
            }
            let td = theta.data_mut();
            let gd = g.data();
            let md = m.data_mut();
            let vd = v.data_mut();
            for i in 0..td.len() {
                md[i] = BETA1 * md[i] + (1.0 - BETA1) * gd[i];
                vd[i] = BETA2 * vd[i] + (1.0 - BETA2) * gd[i] * gd[i];
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                td[i] = td[i] * decay - self.lr * m_hat / (v_hat.sqrt() + EPS);
            }
        }
        Ok(())
    }
}
