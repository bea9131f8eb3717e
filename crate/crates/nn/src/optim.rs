//! First-order optimisers with an externally supplied learning rate.

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};

use crate::config::OptimizerConfig;
use crate::Result;

pub trait Optimizer {
    fn step(&mut self, grads: &GradStore, lr: f64) -> Result<()>;
}

pub fn build(cfg: &OptimizerConfig, vars: Vec<Var>) -> Result<Box<dyn Optimizer>> {
    Ok(match *cfg {
        OptimizerConfig::Adam { .. } => Box::new(Adam::new(vars)?),
        OptimizerConfig::MomentumSgd { momentum, .. } => Box::new(MomentumSgd::new(vars, momentum)?),
    })
}

pub struct Adam {
    vars: Vec<Var>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(vars: Vec<Var>) -> Result<Self> {
        let m = vars.iter().map(|v| v.zeros_like()).collect::<candle_core::Result<Vec<_>>>()?;
        let v = m.clone();
        Ok(Self { vars, m, v, t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 })
    }
}

impl Optimizer for Adam {
    fn step(&mut self, grads: &GradStore, lr: f64) -> Result<()> {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((var, m), v) in self.vars.iter().zip(&mut self.m).zip(&mut self.v) {
            // Gradients carry their op history; keeping it would chain every step's graph.
            let Some(g) = grads.get(var.as_tensor()).map(Tensor::detach) else { continue };
            *m = ((&*m * self.beta1)? + (&g * (1.0 - self.beta1))?)?;
            *v = ((&*v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?;
            let update = ((&*m / c1)? / ((&*v / c2)?.sqrt()? + self.eps)?)?;
            var.set(&(var.as_tensor() - (update * lr)?)?)?;
        }
        Ok(())
    }
}

/// Heavy-ball SGD: `v <- mu * v + g; w <- w - lr * v`.
pub struct MomentumSgd {
    vars: Vec<Var>,
    velocity: Vec<Tensor>,
    momentum: f64,
}

impl MomentumSgd {
    pub fn new(vars: Vec<Var>, momentum: f64) -> Result<Self> {
        let velocity = vars.iter().map(|v| v.zeros_like()).collect::<candle_core::Result<Vec<_>>>()?;
        Ok(Self { vars, velocity, momentum })
    }
}

impl Optimizer for MomentumSgd {
    fn step(&mut self, grads: &GradStore, lr: f64) -> Result<()> {
        for (var, vel) in self.vars.iter().zip(&mut self.velocity) {
            let Some(g) = grads.get(var.as_tensor()).map(Tensor::detach) else { continue };
            *vel = ((&*vel * self.momentum)? + &g)?;
            var.set(&(var.as_tensor() - (&*vel * lr)?)?)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use candle_core::Device;

    use super::*;

    fn minimise(opt: &mut dyn Optimizer, x: &Var, lr: f64, steps: usize) -> f64 {
        for _ in 0..steps {
            let loss = (x.as_tensor() - 3.0).unwrap().sqr().unwrap().sum_all().unwrap();
            opt.step(&loss.backward().unwrap(), lr).unwrap();
        }
        x.as_tensor().to_vec1::<f64>().unwrap()[0]
    }

    #[test]
    fn both_reach_a_quadratic_minimum() {
        let x = Var::new(&[0.0f64], &Device::Cpu).unwrap();
        let mut adam = Adam::new(vec![x.clone()]).unwrap();
        assert!((minimise(&mut adam, &x, 0.1, 500) - 3.0).abs() < 1e-3);
        let y = Var::new(&[0.0f64], &Device::Cpu).unwrap();
        let mut sgd = MomentumSgd::new(vec![y.clone()], 0.9).unwrap();
        assert!((minimise(&mut sgd, &y, 0.01, 500) - 3.0).abs() < 1e-3);
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let x = Var::new(&[1.0f64, 2.0], &Device::Cpu).unwrap();
        let mut sgd = MomentumSgd::new(vec![x.clone()], 0.9).unwrap();
        minimise(&mut sgd, &x, 0.0, 3);
        assert_eq!(x.as_tensor().to_vec1::<f64>().unwrap(), vec![1.0, 2.0]);
    }
}
