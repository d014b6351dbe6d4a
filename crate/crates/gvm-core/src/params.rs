//! Named trainable parameters.
//!
//! Every parameter is a row-major matrix with a unique dotted-path name
//! (e.g. `decoder.layer0.attn.wq`). Initialization is derived from
//! (global seed, name), so it does not depend on the order in which a
//! model registers its parameters.

use crate::error::{Error, Result};
use crate::rng::{fnv1a, Rng};
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

/// How a parameter is filled at creation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Normal { std: f64 },
    Const(f64),
}

/// Default weight initialization used across the model.
pub const WEIGHT_INIT: Init = Init::Normal { std: 0.02 };

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
    pub init: Init,
}

#[derive(Clone, Debug)]
pub struct Params {
    seed: u64,
    entries: Vec<ParamEntry>,
    by_name: BTreeMap<String, ParamId>,
}

impl Params {
    pub fn new(seed: u64) -> Self {
        Params { seed, entries: Vec::new(), by_name: BTreeMap::new() }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Register a parameter. Names must be unique within the store.
    pub fn create(&mut self, name: &str, rows: usize, cols: usize, init: Init) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::DuplicateParam { name: name.to_string() });
        }
        let data = match init {
            Init::Const(c) => vec![c; rows * cols],
            Init::Normal { std } => {
                let mut rng = Rng::from_seed_stream(self.seed, fnv1a(name.as_bytes()));
                (0..rows * cols).map(|_| std * rng.normal()).collect()
            }
        };
        let id = ParamId(self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            rows,
            cols,
            data,
            grad: None,
            init,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar weights.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    pub fn id_of(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParam { name: name.to_string() })
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn shape(&self, id: ParamId) -> (usize, usize) {
        let e = &self.entries[id.0];
        (e.rows, e.cols)
    }

    pub fn data(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].data
    }

    pub fn data_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.entries[id.0].data
    }

    pub fn grad(&self, id: ParamId) -> Option<&[f64]> {
        self.entries[id.0].grad.as_deref()
    }

    pub(crate) fn set_grad(&mut self, id: ParamId, grad: Vec<f64>) {
        debug_assert_eq!(grad.len(), self.entries[id.0].data.len());
        self.entries[id.0].grad = Some(grad);
    }

    pub fn clear_grads(&mut self) {
        for e in &mut self.entries {
            e.grad = None;
        }
    }

    /// Iterate entries in registration order.
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    /// Ids sorted by parameter name; the canonical order for
    /// serialization and reporting.
    pub fn ids_by_name(&self) -> Vec<ParamId> {
        self.by_name.values().copied().collect()
    }

    /// Move every parameter to a generic point: add centered Gaussian
    /// noise of the given spread on top of each entry's init center.
    /// Used by gradient checks, where the tiny training init would leave
    /// many true gradients below finite-difference noise.
    pub fn perturb_all(&mut self, std: f64, seed: u64) {
        for e in &mut self.entries {
            let center = match e.init {
                Init::Const(c) => c,
                Init::Normal { .. } => 0.0,
            };
            let mut rng = Rng::from_seed_stream(seed ^ 0xA5A5_5A5A, fnv1a(e.name.as_bytes()));
            for v in &mut e.data {
                *v = center + std * rng.normal();
            }
        }
    }

    /// Overwrite a parameter's values (checkpoint restore).
    pub fn load(&mut self, name: &str, data: &[f64]) -> Result<()> {
        let id = self.id_of(name)?;
        let e = &mut self.entries[id.0];
        if data.len() != e.data.len() {
            return Err(Error::BadShape { expected: e.data.len(), got: data.len() });
        }
        e.data.copy_from_slice(data);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut p = Params::new(1);
        p.create("w", 2, 2, WEIGHT_INIT).unwrap();
        assert!(matches!(p.create("w", 2, 2, WEIGHT_INIT), Err(Error::DuplicateParam { .. })));
    }

    #[test]
    fn init_is_order_independent() {
        let mut a = Params::new(7);
        a.create("x", 3, 3, WEIGHT_INIT).unwrap();
        a.create("y", 3, 3, WEIGHT_INIT).unwrap();

        let mut b = Params::new(7);
        b.create("y", 3, 3, WEIGHT_INIT).unwrap();
        b.create("x", 3, 3, WEIGHT_INIT).unwrap();

        assert_eq!(a.data(a.id_of("x").unwrap()), b.data(b.id_of("x").unwrap()));
        assert_eq!(a.data(a.id_of("y").unwrap()), b.data(b.id_of("y").unwrap()));
        // Different names produce different values.
        assert_ne!(a.data(a.id_of("x").unwrap()), a.data(a.id_of("y").unwrap()));
    }

    #[test]
    fn init_depends_on_seed() {
        let mut a = Params::new(1);
        let mut b = Params::new(2);
        let ia = a.create("w", 4, 4, WEIGHT_INIT).unwrap();
        let ib = b.create("w", 4, 4, WEIGHT_INIT).unwrap();
        assert_ne!(a.data(ia), b.data(ib));
    }

    #[test]
    fn const_init_and_load() {
        let mut p = Params::new(0);
        let g = p.create("ln.g", 1, 4, Init::Const(1.0)).unwrap();
        assert_eq!(p.data(g), &[1.0; 4]);
        p.load("ln.g", &[2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(p.data(g), &[2.0, 3.0, 4.0, 5.0]);
        assert!(p.load("ln.g", &[1.0]).is_err());
        assert!(p.load("nope", &[1.0]).is_err());
    }
}
