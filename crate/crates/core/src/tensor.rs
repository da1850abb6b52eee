//! Dense row-major `f64` tensors and named parameter collections.

use std::collections::BTreeMap;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                shapes: vec![shape, vec![data.len()]],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`; `fan_in` is the last dimension.
    pub fn uniform_init(shape: &[usize], rng: &mut Rng) -> Self {
        let fan_in = *shape.last().unwrap_or(&1);
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A named collection of parameter tensors for one model.
///
/// Iteration is lexicographic by name. Shapes are fixed once a tensor is
/// inserted; `set` refuses a shape change.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    tag: String,
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new(tag: impl Into<String>) -> Self {
        ParamStore {
            tag: tag.into(),
            params: BTreeMap::new(),
        }
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.params.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::UnknownParam(format!("{}/{}", self.tag, name)))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let tag = &self.tag;
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(format!("{tag}/{name}")))
    }

    pub fn set(&mut self, name: &str, t: Tensor) -> Result<()> {
        let slot = self.get_mut(name)?;
        if slot.shape() != t.shape() {
            return Err(Error::Shape {
                op: "param-set",
                shapes: vec![slot.shape().to_vec(), t.shape().to_vec()],
            });
        }
        *slot = t;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Sets every parameter to zero.
    pub fn zero_all(&mut self) {
        for t in self.params.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

pub type GradMap = BTreeMap<String, Tensor>;

pub fn global_norm(grads: &GradMap) -> f64 {
    grads
        .values()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// `theta <- theta - lr * g`, after rescaling `g` to global norm `clip_norm`
/// when it is larger.
pub fn sgd_step(
    store: &mut ParamStore,
    grads: &GradMap,
    lr: f64,
    clip_norm: Option<f64>,
) -> Result<()> {
    for (name, g) in grads {
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(format!("{}/{}", store.tag, name)));
        }
        let p = store.get(name)?;
        if p.shape() != g.shape() {
            return Err(Error::Shape {
                op: "sgd-step",
                shapes: vec![p.shape().to_vec(), g.shape().to_vec()],
            });
        }
    }
    let mut scale = 1.0;
    if let Some(c) = clip_norm {
        let n = global_norm(grads);
        if n > c {
            scale = c / n;
        }
    }
    let step = lr * scale;
    if step == 0.0 {
        return Ok(());
    }
    for (name, g) in grads {
        let p = store.get_mut(name)?;
        for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
            *w -= step * d;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(v: f64) -> ParamStore {
        let mut s = ParamStore::new("m");
        s.insert("w", Tensor::scalar(v));
        s
    }

    #[test]
    fn sgd_basic_step() {
        let mut s = store_with(1.0);
        let g: GradMap = [("w".to_string(), Tensor::scalar(2.0))].into();
        sgd_step(&mut s, &g, 0.1, None).unwrap();
        assert!((s.get("w").unwrap().item() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn clip_halves_gradient() {
        let mut s = ParamStore::new("m");
        s.insert("a", Tensor::vector(vec![0.0, 0.0]));
        let g: GradMap = [("a".to_string(), Tensor::vector(vec![6.0, 8.0]))].into();
        sgd_step(&mut s, &g, 1.0, Some(5.0)).unwrap();
        assert_eq!(s.get("a").unwrap().data(), &[-3.0, -4.0]);
    }

    #[test]
    fn zero_grad_and_zero_lr_are_bit_exact_noops() {
        let mut s = store_with(0.123456789);
        let before = s.clone();
        let g: GradMap = [("w".to_string(), Tensor::scalar(0.0))].into();
        sgd_step(&mut s, &g, 0.5, Some(5.0)).unwrap();
        assert_eq!(s, before);
        let g: GradMap = [("w".to_string(), Tensor::scalar(3.0))].into();
        sgd_step(&mut s, &g, 0.0, None).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = store_with(1.0);
        let g: GradMap = [("w".to_string(), Tensor::scalar(f64::NAN))].into();
        match sgd_step(&mut s, &g, 0.1, None) {
            Err(Error::NonFiniteGradient(n)) => assert_eq!(n, "m/w"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn shape_is_fixed() {
        let mut s = store_with(1.0);
        assert!(s.set("w", Tensor::vector(vec![1.0, 2.0])).is_err());
        assert!(Tensor::new(vec![2, 2], vec![1.0]).is_err());
    }
}
