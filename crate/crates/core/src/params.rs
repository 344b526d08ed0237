//! Named parameter storage shared by every network block.
//!
//! Blocks register their tensors under dotted names (`encoder.backbone.layer1.0.conv1.weight`)
//! and keep `Var` handles; the store owns initialization, counting, freezing and the
//! name -> tensor view used by checkpoints.

use std::collections::HashMap;

use candle_core::{DType, Device, Shape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Checkpointed state that is not optimized (normalization running statistics).
    Buffer,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub var: Var,
    pub kind: ParamKind,
    pub frozen: bool,
}

impl Param {
    pub fn numel(&self) -> usize {
        self.var.elem_count()
    }

    pub fn is_optimized(&self) -> bool {
        self.kind == ParamKind::Trainable && !self.frozen
    }
}

pub struct ParamStore {
    dtype: DType,
    device: Device,
    rng: ChaCha8Rng,
    shape_only: bool,
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self {
            dtype,
            device: Device::Cpu,
            rng: ChaCha8Rng::seed_from_u64(seed),
            shape_only: false,
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// A store whose tensors are all zero; construction is cheap and only shapes matter.
    pub fn shape_only(dtype: DType) -> Self {
        let mut store = Self::new(dtype, 0);
        store.shape_only = true;
        store
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn register(&mut self, name: &str, tensor: Tensor, kind: ParamKind) -> Result<Var> {
        if self.index.contains_key(name) {
            return Err(Error::ArchMismatch(format!("parameter `{name}` registered twice")));
        }
        let var = Var::from_tensor(&tensor)?;
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Param { name: name.to_string(), var: var.clone(), kind, frozen: false });
        Ok(var)
    }

    pub fn normal<S: Into<Shape>>(&mut self, name: &str, shape: S, std: f64) -> Result<Var> {
        let shape = shape.into();
        if self.shape_only {
            let t = Tensor::zeros(&shape, self.dtype, &self.device)?;
            return self.register(name, t, ParamKind::Trainable);
        }
        let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        let data: Vec<f64> = (0..shape.elem_count()).map(|_| dist.sample(&mut self.rng)).collect();
        let t = Tensor::from_vec(data, &shape, &self.device)?.to_dtype(self.dtype)?;
        self.register(name, t, ParamKind::Trainable)
    }

    /// Uniform on `[-bound, bound]`.
    pub fn uniform<S: Into<Shape>>(&mut self, name: &str, shape: S, bound: f64) -> Result<Var> {
        let shape = shape.into();
        if self.shape_only {
            let t = Tensor::zeros(&shape, self.dtype, &self.device)?;
            return self.register(name, t, ParamKind::Trainable);
        }
        let dist = Uniform::new_inclusive(-bound, bound);
        let data: Vec<f64> = (0..shape.elem_count()).map(|_| dist.sample(&mut self.rng)).collect();
        let t = Tensor::from_vec(data, &shape, &self.device)?.to_dtype(self.dtype)?;
        self.register(name, t, ParamKind::Trainable)
    }

    pub fn constant<S: Into<Shape>>(&mut self, name: &str, shape: S, value: f64) -> Result<Var> {
        let t = (Tensor::ones(shape, self.dtype, &self.device)? * value)?;
        self.register(name, t, ParamKind::Trainable)
    }

    pub fn identity(&mut self, name: &str, n: usize) -> Result<Var> {
        let t = Tensor::eye(n, self.dtype, &self.device)?;
        self.register(name, t, ParamKind::Trainable)
    }

    pub fn buffer<S: Into<Shape>>(&mut self, name: &str, shape: S, value: f64) -> Result<Var> {
        let t = (Tensor::ones(shape, self.dtype, &self.device)? * value)?;
        self.register(name, t, ParamKind::Buffer)
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    /// Variables the optimizer should update.
    pub fn optimized(&self) -> impl Iterator<Item = &Param> {
        self.params.iter().filter(|p| p.is_optimized())
    }

    /// Number of trainable scalars that are not frozen.
    pub fn count_trainable(&self) -> usize {
        self.optimized().map(Param::numel).sum()
    }

    /// Number of trainable scalars (frozen or not) whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind == ParamKind::Trainable && p.name.starts_with(prefix))
            .map(Param::numel)
            .sum()
    }

    /// Freezes every parameter under `prefix`; returns how many scalars were frozen.
    pub fn freeze_prefix(&mut self, prefix: &str) -> usize {
        let mut n = 0;
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            if p.kind == ParamKind::Trainable && !p.frozen {
                n += p.numel();
            }
            p.frozen = true;
        }
        n
    }

    pub fn tensors(&self) -> HashMap<String, Tensor> {
        self.params.iter().map(|p| (p.name.clone(), p.var.as_tensor().clone())).collect()
    }

    /// Copies tensors into registered parameters.
    ///
    /// Every parameter under `prefix` must be present in `tensors` with an identical shape;
    /// names outside `prefix` are ignored. Returns the number of tensors copied.
    pub fn load_prefix(
        &self,
        tensors: &HashMap<String, Tensor>,
        source_prefix: &str,
        prefix: &str,
    ) -> Result<usize> {
        let mut loaded = 0;
        for p in self.params.iter().filter(|p| p.name.starts_with(prefix)) {
            let key = format!("{source_prefix}{}", &p.name[prefix.len()..]);
            let t = tensors
                .get(&key)
                .ok_or_else(|| Error::ArchMismatch(format!("missing tensor `{key}`")))?;
            if t.dims() != p.var.dims() {
                return Err(Error::ArchMismatch(format!(
                    "`{key}` has shape {:?}, expected {:?}",
                    t.dims(),
                    p.var.dims()
                )));
            }
            p.var.set(&t.to_dtype(self.dtype)?)?;
            loaded += 1;
        }
        Ok(loaded)
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_freezes_by_prefix() {
        let mut ps = ParamStore::new(DType::F32, 1);
        ps.normal("a.w", (3, 4), 1.0).unwrap();
        ps.constant("b.w", 5, 0.0).unwrap();
        ps.buffer("b.running_mean", 5, 0.0).unwrap();
        assert_eq!(ps.count_trainable(), 17);
        assert_eq!(ps.count_prefix("b"), 5);
        assert_eq!(ps.freeze_prefix("a"), 12);
        assert_eq!(ps.count_trainable(), 5);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut ps = ParamStore::new(DType::F32, 1);
        ps.constant("x", 1, 0.0).unwrap();
        assert!(matches!(ps.constant("x", 1, 0.0), Err(Error::ArchMismatch(_))));
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let mut a = ParamStore::new(DType::F64, 9);
        let mut b = ParamStore::new(DType::F64, 9);
        let va = a.normal("w", 16, 1.0).unwrap();
        let vb = b.normal("w", 16, 1.0).unwrap();
        assert_eq!(va.to_vec1::<f64>().unwrap(), vb.to_vec1::<f64>().unwrap());
    }
}
