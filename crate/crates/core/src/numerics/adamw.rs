use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tape::GradientMap;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub tensor: Tensor,
    pub trainable: bool,
}

/// Named tensors, each flagged trainable or frozen.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    entries: BTreeMap<String, Parameter>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) {
        self.entries.insert(name.into(), Parameter { tensor, trainable });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|p| &p.tensor)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Parameter)> {
        self.entries.iter()
    }

    pub fn trainable_names(&self) -> std::collections::BTreeSet<String> {
        self.entries.iter().filter(|(_, p)| p.trainable).map(|(k, _)| k.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 2e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: BTreeMap<String, Tensor>,
    pub second_moment: BTreeMap<String, Tensor>,
    pub hyper: AdamWConfig,
}

impl OptimizerState {
    pub fn new(hyper: AdamWConfig) -> Self {
        Self { step: 0, first_moment: BTreeMap::new(), second_moment: BTreeMap::new(), hyper }
    }
}

/// One decoupled-weight-decay Adam update at learning rate `lr`.
///
/// `grads` must name exactly the trainable parameters. Frozen entries are
/// never touched. The update is computed in full before anything is written
/// back, so a failure leaves `params` and `state` unchanged.
pub fn adamw_step(params: &mut ParameterSet, grads: &GradientMap, state: &mut OptimizerState, lr: f64) -> Result<()> {
    let trainable = params.trainable_names();
    if grads.keys().ne(trainable.iter()) {
        return Err(Error::shape(format!(
            "gradients cover {:?}, trainable set is {:?}",
            grads.keys().collect::<Vec<_>>(),
            trainable
        )));
    }
    let h = state.hyper;
    let t = state.step + 1;
    let bc1 = 1.0 - h.beta1.powi(t as i32);
    let bc2 = 1.0 - h.beta2.powi(t as i32);

    let mut staged = Vec::with_capacity(grads.len());
    for (name, g) in grads {
        let p = &params.entries[name].tensor;
        if g.shape() != p.shape() {
            return Err(Error::shape(format!("gradient {name}: {:?} vs parameter {:?}", g.shape(), p.shape())));
        }
        let zeros = Tensor::zeros(p.shape());
        let m_prev = state.first_moment.get(name).unwrap_or(&zeros);
        let v_prev = state.second_moment.get(name).unwrap_or(&zeros);
        if m_prev.shape() != p.shape() || v_prev.shape() != p.shape() {
            return Err(Error::shape(format!("optimizer moments for {name} do not match parameter shape")));
        }
        let n = p.numel();
        let mut m = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        let mut w = Vec::with_capacity(n);
        for i in 0..n {
            let gi = g.data()[i];
            let mi = h.beta1 * m_prev.data()[i] + (1.0 - h.beta1) * gi;
            let vi = h.beta2 * v_prev.data()[i] + (1.0 - h.beta2) * gi * gi;
            let m_hat = if bc1 > 0.0 { mi / bc1 } else { mi };
            let v_hat = if bc2 > 0.0 { vi / bc2 } else { vi };
            let decayed = p.data()[i] * (1.0 - lr * h.weight_decay);
            let wi = decayed - lr * m_hat / (v_hat.sqrt() + h.eps);
            if !wi.is_finite() {
                return Err(Error::NonFinite(format!("adamw update of {name}[{i}] is {wi}")));
            }
            m.push(mi);
            v.push(vi);
            w.push(wi);
        }
        let shape = p.shape().to_vec();
        staged.push((
            name.clone(),
            Tensor::from_parts(shape.clone(), m),
            Tensor::from_parts(shape.clone(), v),
            Tensor::from_parts(shape, w),
        ));
    }
    for (name, m, v, w) in staged {
        state.first_moment.insert(name.clone(), m);
        state.second_moment.insert(name.clone(), v);
        params.entries.get_mut(&name).expect("checked above").tensor = w;
    }
    state.step = t;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(name: &str, w: f64, trainable: bool) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert(name, Tensor::scalar(w), trainable);
        p
    }

    fn grad(name: &str, g: f64) -> GradientMap {
        [(name.to_string(), Tensor::scalar(g))].into_iter().collect()
    }

    #[test]
    fn zero_gradient_only_decays() {
        let mut p = one("w", 2.0, true);
        let mut s = OptimizerState::new(AdamWConfig { weight_decay: 0.01, ..Default::default() });
        adamw_step(&mut p, &grad("w", 0.0), &mut s, 0.1).unwrap();
        assert!((p.get("w").unwrap().data()[0] - 2.0 * (1.0 - 0.001)).abs() < 1e-15);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_betas_take_a_sign_step() {
        // m = g, v = g^2, so the step is lr * g / |g| = 0.1.
        let mut p = one("w", 1.0, true);
        let hyper = AdamWConfig { lr: 0.1, beta1: 0.0, beta2: 0.0, eps: 0.0, weight_decay: 0.0 };
        let mut s = OptimizerState::new(hyper);
        adamw_step(&mut p, &grad("w", 1.0), &mut s, 0.1).unwrap();
        assert!((p.get("w").unwrap().data()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn identical_params_stay_identical() {
        let mut p = ParameterSet::new();
        p.insert("a", Tensor::vector(vec![0.3, -1.2]), true);
        p.insert("b", Tensor::vector(vec![0.3, -1.2]), true);
        let mut s = OptimizerState::new(AdamWConfig::default());
        for _ in 0..5 {
            let g: GradientMap = [
                ("a".to_string(), Tensor::vector(vec![0.5, 0.1])),
                ("b".to_string(), Tensor::vector(vec![0.5, 0.1])),
            ]
            .into_iter()
            .collect();
            adamw_step(&mut p, &g, &mut s, 0.01).unwrap();
        }
        assert_eq!(p.get("a"), p.get("b"));
    }

    #[test]
    fn frozen_entries_are_untouched_and_must_not_have_grads() {
        let mut p = one("w", 1.0, true);
        p.insert("frozen", Tensor::vector(vec![1.0, 2.0]), false);
        let before = p.get("frozen").unwrap().clone();
        let mut s = OptimizerState::new(AdamWConfig::default());
        adamw_step(&mut p, &grad("w", 0.7), &mut s, 0.1).unwrap();
        assert_eq!(p.get("frozen").unwrap(), &before);

        let mut g = grad("w", 0.7);
        g.insert("frozen".into(), Tensor::zeros(&[2]));
        assert!(adamw_step(&mut p, &g, &mut s, 0.1).is_err());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = one("w", 1.0, true);
        let mut s = OptimizerState::new(AdamWConfig::default());
        let g: GradientMap = [("w".to_string(), Tensor::zeros(&[2]))].into_iter().collect();
        assert!(matches!(adamw_step(&mut p, &g, &mut s, 0.1), Err(Error::Shape(_))));
        assert_eq!(s.step, 0);
    }
}
