//! Named parameter storage with deterministic initialisation.

use std::cell::RefCell;
use std::collections::HashMap;
use std::path::Path;
use std::rc::Rc;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{ModelError, Result};
use crate::inflate::{inflate_input_layer, InflationMode};

/// Which side of the backbone/head boundary a tensor belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Backbone,
    Head,
}

/// Trainable parameters versus running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Param,
    Buffer,
}

#[derive(Clone, Debug)]
pub struct Entry {
    pub name: String,
    pub var: Var,
    pub kind: Kind,
    pub group: Group,
}

/// Initial values for a freshly created tensor.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Const(f64),
    Normal { std: f64 },
    Uniform { bound: f64 },
}

/// Every tensor of a model, in creation order.
#[derive(Clone, Debug)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    /// Trainable variables, optionally restricted to one group.
    pub fn trainable(&self, group: Option<Group>) -> Vec<Var> {
        self.entries
            .iter()
            .filter(|e| e.kind == Kind::Param && group.is_none_or(|g| g == e.group))
            .map(|e| e.var.clone())
            .collect()
    }

    /// Number of trainable scalars in `group`.
    pub fn count(&self, group: Group) -> u64 {
        self.entries
            .iter()
            .filter(|e| e.kind == Kind::Param && e.group == group)
            .map(|e| e.var.elem_count() as u64)
            .sum()
    }

    /// Detached copies of every tensor, keyed by name.
    pub fn snapshot(&self) -> Result<HashMap<String, Tensor>> {
        self.entries
            .iter()
            .map(|e| Ok((e.name.clone(), e.var.as_tensor().copy()?)))
            .collect()
    }

    /// Copies values from `tensors` into the matching variables.
    ///
    /// Every stored name must be present with the same shape unless `partial`
    /// is set, in which case missing names keep their current values.
    pub fn restore(&self, tensors: &HashMap<String, Tensor>, partial: bool) -> Result<()> {
        for e in &self.entries {
            match tensors.get(&e.name) {
                Some(t) => {
                    if t.dims() != e.var.dims() {
                        return Err(ModelError::Checkpoint(format!(
                            "`{}` has shape {:?}, model expects {:?}",
                            e.name,
                            t.dims(),
                            e.var.dims()
                        )));
                    }
                    e.var.set(&t.to_dtype(self.dtype)?.to_device(&self.device)?)?;
                }
                None if partial => {}
                None => return Err(ModelError::Checkpoint(format!("`{}` missing", e.name))),
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let map: HashMap<String, Tensor> = self
            .entries
            .iter()
            .map(|e| (e.name.clone(), e.var.as_tensor().clone()))
            .collect();
        candle_core::safetensors::save(&map, path)?;
        Ok(())
    }

    pub fn load(&self, path: impl AsRef<Path>) -> Result<()> {
        let tensors = candle_core::safetensors::load(path, &self.device)?;
        self.restore(&tensors, false)
    }
}

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3)
    })
}

struct Inner {
    store: ParamStore,
    seed: u64,
    inflate: Option<(String, InflationMode)>,
}

/// Hands out named variables while a model is being assembled.
///
/// Each tensor draws from its own ChaCha stream derived from the model seed and
/// its full name, so values do not depend on construction order.
#[derive(Clone)]
pub struct Builder {
    inner: Rc<RefCell<Inner>>,
    prefix: String,
    group: Group,
}

impl Builder {
    pub fn new(seed: u64, dtype: DType, device: &Device) -> Self {
        Self {
            inner: Rc::new(RefCell::new(Inner {
                store: ParamStore {
                    entries: Vec::new(),
                    index: HashMap::new(),
                    dtype,
                    device: device.clone(),
                },
                seed,
                inflate: None,
            })),
            prefix: String::new(),
            group: Group::Backbone,
        }
    }

    /// Scope for names under `name.`.
    pub fn pp(&self, name: impl std::fmt::Display) -> Self {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        Self {
            inner: self.inner.clone(),
            prefix,
            group: self.group,
        }
    }

    /// Creates the four-channel kernel `name` by inflating the three-channel
    /// kernel the same seed would give, so RGB slices match an RGB model.
    pub fn inflate(&self, name: &str, mode: InflationMode) {
        self.inner.borrow_mut().inflate = Some((name.to_string(), mode));
    }

    pub fn with_group(&self, group: Group) -> Self {
        Self { group, ..self.clone() }
    }

    pub fn dtype(&self) -> DType {
        self.inner.borrow().store.dtype
    }

    pub fn device(&self) -> Device {
        self.inner.borrow().store.device.clone()
    }

    pub fn param(&self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        self.create(name, shape, init, Kind::Param)
    }

    pub fn buffer(&self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        self.create(name, shape, init, Kind::Buffer)
    }

    fn create(&self, name: &str, shape: &[usize], init: Init, kind: Kind) -> Result<Var> {
        let full = self.pp(name).prefix;
        let mut inner = self.inner.borrow_mut();
        let mut rng = ChaCha8Rng::seed_from_u64(inner.seed);
        rng.set_stream(fnv1a(&full));
        let widen = match &inner.inflate {
            Some((target, mode)) if *target == full && shape.len() == 4 && shape[1] == 4 => Some(*mode),
            _ => None,
        };
        let mut base = shape.to_vec();
        if widen.is_some() {
            base[1] = 3;
        }
        let n: usize = base.iter().product();
        let store = &mut inner.store;
        let mut tensor = match store.dtype {
            DType::F64 => Tensor::from_vec(sample(init, n, &mut rng), base.as_slice(), &store.device)?,
            _ => {
                let v: Vec<f32> = sample(init, n, &mut rng).into_iter().map(|x| x as f32).collect();
                Tensor::from_vec(v, base.as_slice(), &store.device)?.to_dtype(store.dtype)?
            }
        };
        if let Some(mode) = widen {
            tensor = inflate_input_layer(&tensor, mode)?;
        }
        let var = Var::from_tensor(&tensor)?;
        assert!(!store.index.contains_key(&full), "duplicate tensor name {full}");
        store.index.insert(full.clone(), store.entries.len());
        store.entries.push(Entry {
            name: full,
            var: var.clone(),
            kind,
            group: self.group,
        });
        Ok(var)
    }

    /// Finishes construction. Panics if a scope is still alive elsewhere.
    pub fn finish(self) -> ParamStore {
        match Rc::try_unwrap(self.inner) {
            Ok(cell) => cell.into_inner().store,
            Err(_) => panic!("builder scopes outlived model construction"),
        }
    }
}

fn sample(init: Init, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match init {
        Init::Const(v) => vec![v; n],
        Init::Normal { std } => {
            let d = Normal::new(0.0, std).expect("finite std");
            (0..n).map(|_| d.sample(rng)).collect()
        }
        Init::Uniform { bound } => (0..n).map(|_| rng.random_range(-bound..=bound)).collect(),
    }
}
