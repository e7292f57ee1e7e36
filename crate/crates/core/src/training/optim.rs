//! Adam and RMSProp with inspectable state so that training can be
//! checkpointed and resumed exactly.

use std::collections::HashMap;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::NamedParam;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 2e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self, what: &str) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("{what}: learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::Config(format!("{what}: betas must be in [0,1) and eps > 0")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RmsPropConfig {
    pub lr: f64,
    /// Decay of the running mean of squared gradients.
    pub decay: f64,
    pub eps: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        RmsPropConfig { lr: 1e-4, decay: 0.9, eps: 1e-8 }
    }
}

impl RmsPropConfig {
    pub fn validate(&self, what: &str) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("{what}: learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.decay) || self.eps <= 0.0 {
            return Err(Error::Config(format!("{what}: decay must be in [0,1) and eps > 0")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Rule {
    Adam(AdamConfig),
    RmsProp(RmsPropConfig),
}

/// First-order optimizer over a fixed list of named variables.
pub struct Optimizer {
    rule: Rule,
    params: Vec<(String, Var)>,
    /// Adam: first and second moments. RMSProp: only the second.
    first: Vec<Option<Tensor>>,
    second: Vec<Option<Tensor>>,
    steps: u64,
}

impl Optimizer {
    fn with_rule(rule: Rule, params: Vec<NamedParam>) -> Self {
        let params: Vec<(String, Var)> = params.into_iter().map(|p| (p.name, p.var)).collect();
        let n = params.len();
        Optimizer { rule, params, first: vec![None; n], second: vec![None; n], steps: 0 }
    }

    pub fn adam(cfg: AdamConfig, params: Vec<NamedParam>) -> Self {
        Self::with_rule(Rule::Adam(cfg), params)
    }

    pub fn rmsprop(cfg: RmsPropConfig, params: Vec<NamedParam>) -> Self {
        Self::with_rule(Rule::RmsProp(cfg), params)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|(n, _)| n.as_str())
    }

    /// Applies one update to every managed variable that has a gradient.
    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.steps += 1;
        let t = self.steps as i32;
        for (i, (_, var)) in self.params.iter().enumerate() {
            let Some(g) = grads.get(var) else { continue };
            let g = g.detach();
            match self.rule {
                Rule::Adam(c) => {
                    let m = match &self.first[i] {
                        Some(m) => ((m * c.beta1)? + (&g * (1.0 - c.beta1))?)?,
                        None => (&g * (1.0 - c.beta1))?,
                    };
                    let v = match &self.second[i] {
                        Some(v) => ((v * c.beta2)? + (g.sqr()? * (1.0 - c.beta2))?)?,
                        None => (g.sqr()? * (1.0 - c.beta2))?,
                    };
                    let mhat = (&m / (1.0 - c.beta1.powi(t)))?;
                    let vhat = (&v / (1.0 - c.beta2.powi(t)))?;
                    let update = (mhat / (vhat.sqrt()? + c.eps)?)?;
                    var.set(&(var.as_tensor() - (update * c.lr)?)?)?;
                    self.first[i] = Some(m);
                    self.second[i] = Some(v);
                }
                Rule::RmsProp(c) => {
                    let s = match &self.second[i] {
                        Some(s) => ((s * c.decay)? + (g.sqr()? * (1.0 - c.decay))?)?,
                        None => (g.sqr()? * (1.0 - c.decay))?,
                    };
                    let update = (&g / (s.sqrt()? + c.eps)?)?;
                    var.set(&(var.as_tensor() - (update * c.lr)?)?)?;
                    self.second[i] = Some(s);
                }
            }
        }
        Ok(())
    }

    /// Named moment tensors, prefixed with `prefix`.
    pub fn state_tensors(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, (name, _)) in self.params.iter().enumerate() {
            if let Some(m) = &self.first[i] {
                out.push((format!("{prefix}/m/{name}"), m.clone()));
            }
            if let Some(v) = &self.second[i] {
                out.push((format!("{prefix}/v/{name}"), v.clone()));
            }
        }
        out
    }

    pub fn restore(&mut self, prefix: &str, steps: u64, tensors: &HashMap<String, Tensor>) -> Result<()> {
        self.steps = steps;
        for (i, (name, var)) in self.params.iter().enumerate() {
            for (slot, key) in [(&mut self.first[i], "m"), (&mut self.second[i], "v")] {
                *slot = match tensors.get(&format!("{prefix}/{key}/{name}")) {
                    Some(t) if t.dims() == var.dims() => Some(t.clone()),
                    Some(t) => {
                        return Err(Error::Checkpoint(format!(
                            "optimizer state {name} has shape {:?}, expected {:?}",
                            t.dims(),
                            var.dims()
                        )))
                    }
                    None => None,
                };
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ParamKind;
    use candle_core::Device;

    fn param(v: f64) -> NamedParam {
        let var = Var::from_tensor(&Tensor::new(&[v], &Device::Cpu).unwrap()).unwrap();
        NamedParam { name: "x".into(), var, kind: ParamKind::Weight }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let p = param(1.0);
        let mut opt = Optimizer::adam(AdamConfig { lr: 0.1, ..Default::default() }, vec![p.clone()]);
        let loss = (p.var.as_tensor() * 3.0).unwrap().sum_all().unwrap();
        opt.step(&loss.backward().unwrap()).unwrap();
        let v: Vec<f64> = p.var.as_tensor().to_vec1().unwrap();
        assert!((v[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn rmsprop_minimizes_quadratic() {
        let p = param(2.0);
        let mut opt = Optimizer::rmsprop(RmsPropConfig { lr: 0.05, ..Default::default() }, vec![p.clone()]);
        for _ in 0..200 {
            let loss = p.var.as_tensor().sqr().unwrap().sum_all().unwrap();
            opt.step(&loss.backward().unwrap()).unwrap();
        }
        let v: Vec<f64> = p.var.as_tensor().to_vec1().unwrap();
        assert!(v[0].abs() < 0.1, "{v:?}");
    }
}
