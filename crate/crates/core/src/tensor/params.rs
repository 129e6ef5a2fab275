use std::collections::BTreeMap;

use rand::Rng;

use super::graph::{Gradients, Graph, Var};
use super::Tensor;
use crate::error::{Error, Result};

/// Named learnable tensors. Iteration order is the sorted name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: BTreeMap<String, Tensor>,
}

/// Graph handles for every tensor of a [`ParamSet`].
#[derive(Debug, Clone, Default)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::config(format!("missing parameter `{name}`")))
    }

    /// Point `name` at another handle.
    pub fn set(&mut self, name: impl Into<String>, v: Var) {
        self.vars.insert(name.into(), v);
    }

    /// Collect gradients for every bound parameter.
    pub fn grads(&self, grads: &Gradients) -> ParamSet {
        let mut out = ParamSet::new();
        for (name, &v) in &self.vars {
            out.params.insert(name.clone(), grads.get(v));
        }
        out
    }
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    /// Insert a parameter; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter `{name}`")));
        }
        self.params.insert(name, t);
        Ok(())
    }

    /// Insert or overwrite.
    pub fn set(&mut self, name: impl Into<String>, t: Tensor) {
        self.params.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::config(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::config(format!("missing parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Weight `[fan_in, fan_out]` and bias `[fan_out]`, both
    /// uniform in `±1/sqrt(fan_in)`.
    pub fn init_linear<R: Rng + ?Sized>(
        &mut self,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<()> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        self.insert(
            format!("{prefix}.w"),
            Tensor::uniform(&[fan_in, fan_out], bound, rng),
        )?;
        self.insert(
            format!("{prefix}.b"),
            Tensor::uniform(&[fan_out], bound, rng),
        )
    }

    /// Merge another set under `prefix.` names.
    pub fn extend_prefixed(&mut self, prefix: &str, other: ParamSet) -> Result<()> {
        for (k, v) in other.params {
            self.insert(format!("{prefix}.{k}"), v)?;
        }
        Ok(())
    }

    /// Sub-set of parameters whose name starts with `prefix.`, with the
    /// prefix stripped.
    pub fn scoped(&self, prefix: &str) -> ParamSet {
        let p = format!("{prefix}.");
        ParamSet {
            params: self
                .params
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&p).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }

    /// Record every parameter as a tracked leaf.
    pub fn bind(&self, g: &mut Graph) -> BoundParams {
        BoundParams {
            vars: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), g.param(v.clone())))
                .collect(),
        }
    }

    /// Record every parameter as an untracked constant.
    pub fn bind_frozen(&self, g: &mut Graph) -> BoundParams {
        BoundParams {
            vars: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), g.constant(v.clone())))
                .collect(),
        }
    }

    fn check_keys(&self, other: &ParamSet) -> Result<()> {
        if self.params.len() != other.params.len()
            || self
                .params
                .iter()
                .zip(&other.params)
                .any(|((ka, va), (kb, vb))| ka != kb || va.shape() != vb.shape())
        {
            return Err(Error::config(
                "gradient keys or shapes do not match parameters",
            ));
        }
        Ok(())
    }

    /// Elementwise sum of gradient sets, in the given order.
    pub fn sum_all(sets: &[ParamSet]) -> Result<ParamSet> {
        let mut iter = sets.iter();
        let Some(first) = iter.next() else {
            return Ok(ParamSet::new());
        };
        let mut acc = first.clone();
        for s in iter {
            acc.check_keys(s)?;
            for (a, b) in acc.params.values_mut().zip(s.params.values()) {
                a.data_mut()
                    .iter_mut()
                    .zip(b.data())
                    .for_each(|(x, y)| *x += y);
            }
        }
        Ok(acc)
    }

    pub fn scale(&mut self, c: f64) {
        for t in self.params.values_mut() {
            t.data_mut().iter_mut().for_each(|x| *x *= c);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(Tensor::all_finite)
    }

    pub fn max_abs(&self) -> f64 {
        self.params
            .values()
            .flat_map(|t| t.data().iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Parameter update rule.
pub trait Optimizer {
    fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<()>;
}

/// Plain gradient descent: `p <- p - lr * g`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
        params.check_keys(grads)?;
        for (p, g) in params.params.values_mut().zip(grads.params.values()) {
            p.data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(p, g)| *p -= self.lr * g);
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Option<ParamSet>,
    v: Option<ParamSet>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: None,
            v: None,
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
        params.check_keys(grads)?;
        let zeros = || {
            let mut z = grads.clone();
            z.scale(0.0);
            z
        };
        let m = self.m.get_or_insert_with(zeros);
        let v = self.v.get_or_insert_with(zeros);
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .params
            .values_mut()
            .zip(grads.params.values())
            .zip(m.params.values_mut())
            .zip(v.params.values_mut())
        {
            for (((p, g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *p -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(x: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("x", Tensor::new(&[1], vec![x]).unwrap()).unwrap();
        p
    }

    #[test]
    fn zero_gradient_or_zero_lr_is_a_no_op() {
        let mut p = single(3.0);
        let before = p.clone();
        Sgd { lr: 0.5 }.step(&mut p, &single(0.0)).unwrap();
        assert_eq!(p, before);
        Sgd { lr: 0.0 }.step(&mut p, &single(7.0)).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn sgd_converges_on_quadratic() {
        // x <- x - 0.4 * 2x = 0.2 x, so 50 steps shrink x by 0.2^50.
        let mut p = single(1.0);
        let mut opt = Sgd { lr: 0.4 };
        for _ in 0..50 {
            let x = p.get("x").unwrap().data()[0];
            opt.step(&mut p, &single(2.0 * x)).unwrap();
        }
        assert!(p.get("x").unwrap().data()[0].abs() < 1e-6);
    }

    #[test]
    fn key_mismatch_is_a_config_error() {
        let mut p = single(1.0);
        let mut g = ParamSet::new();
        g.insert("y", Tensor::zeros(&[1])).unwrap();
        assert!(matches!(
            Sgd { lr: 0.1 }.step(&mut p, &g),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = single(1.0);
        assert!(p.insert("x", Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = single(2.0);
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            let x = p.get("x").unwrap().data()[0];
            opt.step(&mut p, &single(2.0 * x)).unwrap();
        }
        assert!(p.get("x").unwrap().data()[0].abs() < 1e-2);
    }
}
