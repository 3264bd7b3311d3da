//! SGD with momentum (Stage I) and Adam (Stage II), both keyed by parameter name.
//!
//! Parameters without a gradient entry are left untouched and keep their state.

use nets::{ModelParams, NetError};
use tensorgrad::{Real, Tensor};

use crate::error::{Result, TrainError};

fn grad_for<'a, T: Real>(grads: &'a ModelParams<T>, name: &str, param: &Tensor<T>) -> Result<Option<&'a Tensor<T>>> {
    let Ok(g) = grads.get(name) else { return Ok(None) };
    if g.shape() != param.shape() {
        return Err(NetError::ShapeMismatch {
            name: name.to_owned(),
            left: param.shape().to_vec(),
            right: g.shape().to_vec(),
        }
        .into());
    }
    Ok(Some(g))
}

fn state_for<'a, T: Real>(state: &'a mut ModelParams<T>, name: &str, like: &Tensor<T>) -> &'a mut Tensor<T> {
    if !state.contains(name) {
        state.insert(name, Tensor::zeros(like.shape().to_vec()));
    }
    state.get_mut(name).expect("just inserted")
}

#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub lr: f64,
    pub momentum: f64,
    velocity: ModelParams<T>,
}

impl<T: Real> Sgd<T> {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(TrainError::Invalid(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(TrainError::Invalid(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        Ok(Sgd {
            lr,
            momentum,
            velocity: ModelParams::new(),
        })
    }

    /// `v <- momentum·v + g; p <- p - lr·v`.
    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &ModelParams<T>) -> Result<()> {
        let (lr, mu) = (T::of(self.lr), T::of(self.momentum));
        for (name, p) in params.iter_mut() {
            let Some(g) = grad_for(grads, name, p)? else { continue };
            let v = state_for(&mut self.velocity, name, p);
            for ((pv, vv), &gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vv = mu * *vv + gv;
                *pv -= lr * *vv;
            }
        }
        Ok(())
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u32,
    m: ModelParams<T>,
    v: ModelParams<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(TrainError::Invalid(format!("learning rate must be positive, got {lr}")));
        }
        Ok(Adam {
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            step: 0,
            m: ModelParams::new(),
            v: ModelParams::new(),
        })
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u32 {
        self.step
    }

    /// Bias-corrected moment update, `p <- p - lr·m̂/(√v̂ + ε)`.
    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &ModelParams<T>) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = T::of(1.0 - b1.powi(t));
        let c2 = T::of(1.0 - b2.powi(t));
        let (b1, b2, lr, eps) = (T::of(b1), T::of(b2), T::of(self.lr), T::of(self.eps));
        for (name, p) in params.iter_mut() {
            let Some(g) = grad_for(grads, name, p)? else { continue };
            let m = state_for(&mut self.m, name, p);
            for (mv, &gv) in m.data_mut().iter_mut().zip(g.data()) {
                *mv = b1 * *mv + (T::one() - b1) * gv;
            }
            let v = state_for(&mut self.v, name, p);
            for (vv, &gv) in v.data_mut().iter_mut().zip(g.data()) {
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
            }
            let (m, v) = (self.m.get(name)?, self.v.get(name)?);
            for ((pv, &mv), &vv) in p.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
                let mhat = mv / c1;
                let vhat = vv / c2;
                *pv -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
