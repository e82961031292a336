use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::tape::{ParamId, Tape, Var};

/// Named, ordered collection of 2-D tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Array2<f64>) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    /// Truncated-normal (±2σ) initialised tensor.
    pub fn push_normal(
        &mut self,
        name: impl Into<String>,
        shape: (usize, usize),
        std: f64,
        rng: &mut impl Rng,
    ) -> usize {
        let normal = Normal::new(0.0, 1.0).expect("valid normal");
        let t = Array2::from_shape_simple_fn(shape, || loop {
            let z: f64 = normal.sample(rng);
            if z.abs() <= 2.0 {
                break z * std;
            }
        });
        self.push(name, t)
    }

    pub fn push_const(&mut self, name: impl Into<String>, shape: (usize, usize), v: f64) -> usize {
        self.push(name, Array2::from_elem(shape, v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, i: usize) -> &Array2<f64> {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Array2<f64> {
        &mut self.tensors[i]
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Array2::len).sum()
    }

    /// Binds every tensor onto `tape`. With `group = None` the tensors enter
    /// as constants and receive no gradient.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, group: Option<u16>) -> Vec<Var> {
        self.tensors
            .iter()
            .enumerate()
            .map(|(i, t)| match group {
                Some(g) => tape.param(
                    t,
                    ParamId {
                        group: g,
                        index: i as u32,
                    },
                ),
                None => tape.constant_ref(t),
            })
            .collect()
    }

    /// SHA-256 over names, shapes and the exact bit patterns of all values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.iter() {
            h.update(name.as_bytes());
            h.update((t.nrows() as u64).to_le_bytes());
            h.update((t.ncols() as u64).to_le_bytes());
            for v in t.iter() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        format!("{:x}", h.finalize())
    }
}
