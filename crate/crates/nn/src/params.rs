//! Named parameter storage with seeded initialisation.

use std::cell::RefCell;
use std::rc::Rc;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub var: Var,
    /// Running statistics are stored but never optimised.
    pub trainable: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    pub params: Vec<Param>,
}

impl ParamStore {
    pub fn trainable(&self) -> Vec<Var> {
        self.params.iter().filter(|p| p.trainable).map(|p| p.var.clone()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    /// Number of trainable scalars.
    pub fn count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.var.elem_count()).sum()
    }

    pub fn extend(&mut self, other: ParamStore) {
        self.params.extend(other.params);
    }

    /// SHA-256 over names and little-endian `f32` values, in order.
    pub fn hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            let v: Vec<f32> = p.var.as_tensor().flatten_all()?.to_dtype(DType::F32)?.to_vec1()?;
            for x in v {
                h.update(x.to_le_bytes());
            }
        }
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Overwrites every parameter from `(name, tensor)` pairs; names and
    /// shapes must match exactly.
    pub fn load(&self, tensors: &[(String, Tensor)]) -> Result<()> {
        if tensors.len() != self.params.len() {
            return Err(Error::checkpoint(
                "tensors",
                format!("{} stored, model has {}", tensors.len(), self.params.len()),
            ));
        }
        for p in &self.params {
            let (_, t) = tensors
                .iter()
                .find(|(n, _)| n == &p.name)
                .ok_or_else(|| Error::checkpoint(&p.name, "missing"))?;
            if t.dims() != p.var.dims() {
                return Err(Error::checkpoint(
                    &p.name,
                    format!("shape {:?}, model expects {:?}", t.dims(), p.var.dims()),
                ));
            }
            p.var.set(&t.to_dtype(p.var.dtype())?)?;
        }
        Ok(())
    }

    /// Like [`ParamStore::load`] but `tensors` may hold extra entries.
    pub fn load_matching(&self, tensors: &[(String, Tensor)]) -> Result<()> {
        let picked: Vec<(String, Tensor)> =
            tensors.iter().filter(|(n, _)| self.get(n).is_some()).cloned().collect();
        self.load(&picked)
    }

    pub fn snapshot(&self) -> Result<Vec<(String, Tensor)>> {
        self.params
            .iter()
            .map(|p| Ok((p.name.clone(), p.var.as_tensor().copy()?)))
            .collect()
    }
}

struct BuilderState {
    params: Vec<Param>,
    rng: ChaCha8Rng,
    dtype: DType,
}

/// Hands out parameters under a name prefix; every draw comes from one
/// seeded stream, so construction order fixes the initial weights.
#[derive(Clone)]
pub struct ParamBuilder {
    state: Rc<RefCell<BuilderState>>,
    prefix: String,
}

impl ParamBuilder {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            state: Rc::new(RefCell::new(BuilderState {
                params: Vec::new(),
                rng: ChaCha8Rng::seed_from_u64(seed),
                dtype,
            })),
            prefix: String::new(),
        }
    }

    pub fn sub(&self, name: &str) -> Self {
        let prefix = if self.prefix.is_empty() { name.to_string() } else { format!("{}.{name}", self.prefix) };
        Self { state: self.state.clone(), prefix }
    }

    fn full(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    fn register(&self, name: &str, t: Tensor, trainable: bool) -> Result<Var> {
        let var = Var::from_tensor(&t)?;
        self.state.borrow_mut().params.push(Param { name: self.full(name), var: var.clone(), trainable });
        Ok(var)
    }

    /// Trainable tensor drawn from `U(-bound, bound)`.
    pub fn uniform(&self, name: &str, shape: &[usize], bound: f64) -> Result<Var> {
        let n: usize = shape.iter().product();
        let (values, dtype) = {
            let mut st = self.state.borrow_mut();
            let v: Vec<f64> = (0..n).map(|_| st.rng.random_range(-bound..=bound)).collect();
            (v, st.dtype)
        };
        let t = Tensor::from_vec(values, shape, &Device::Cpu)?.to_dtype(dtype)?;
        self.register(name, t, true)
    }

    pub fn constant(&self, name: &str, shape: &[usize], value: f64, trainable: bool) -> Result<Var> {
        let dtype = self.state.borrow().dtype;
        let t = (Tensor::ones(shape, dtype, &Device::Cpu)? * value)?;
        self.register(name, t, trainable)
    }

    pub fn dtype(&self) -> DType {
        self.state.borrow().dtype
    }

    /// Parameters created so far through any builder sharing this state.
    pub fn store(&self) -> ParamStore {
        ParamStore { params: self.state.borrow().params.clone() }
    }
}
