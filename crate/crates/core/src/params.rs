//! Named trainable tensors and their declaration/initialization.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, Gradients, Var};
use crate::tensor::Tensor;

/// Handle to a parameter within a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    Uniform { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Collects parameter declarations while a model is being assembled.
#[derive(Default)]
pub struct Declarations {
    specs: Vec<ParamSpec>,
}

impl Declarations {
    pub fn declare(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> ParamId {
        self.specs.push(ParamSpec { name: name.into(), shape: shape.to_vec(), init });
        ParamId(self.specs.len() - 1)
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn into_specs(self) -> Vec<ParamSpec> {
        self.specs
    }
}

/// Parameter values in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Arc<Tensor>>,
}

impl ParamStore {
    /// Materializes declarations with a seeded initializer.
    pub fn initialize(specs: &[ParamSpec], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = specs
            .iter()
            .map(|s| {
                let n = s.numel();
                let data = match s.init {
                    Init::Uniform { fan_in } => {
                        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                        (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
                    }
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                };
                Arc::new(Tensor::from_vec(&s.shape, data))
            })
            .collect();
        ParamStore { names: specs.iter().map(|s| s.name.clone()).collect(), tensors }
    }

    pub fn from_parts(names: Vec<String>, tensors: Vec<Tensor>) -> Self {
        assert_eq!(names.len(), tensors.len());
        ParamStore { names, tensors: tensors.into_iter().map(Arc::new).collect() }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.tensors[id.0])
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.tensors.iter().map(|t| t.as_ref())
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.tensors.iter_mut().map(Arc::make_mut)
    }

    pub fn map(&self, f: impl Fn(&Tensor) -> Tensor) -> ParamStore {
        ParamStore { names: self.names.clone(), tensors: self.tensors.iter().map(|t| Arc::new(f(t))).collect() }
    }

    /// Registers every parameter as a leaf of `graph`.
    pub fn bind<'g>(&self, graph: &'g Graph) -> Bound<'g> {
        Bound { vars: self.tensors.iter().map(|t| graph.leaf(t.clone())).collect() }
    }
}

/// Parameters registered on a graph.
pub struct Bound<'g> {
    vars: Vec<Var<'g>>,
}

impl<'g> Bound<'g> {
    /// Binds existing graph variables, one per parameter in store order.
    pub fn from_vars(vars: Vec<Var<'g>>) -> Self {
        Bound { vars }
    }

    pub fn var(&self, id: ParamId) -> Var<'g> {
        self.vars[id.0]
    }

    pub fn opt(&self, id: Option<ParamId>) -> Option<Var<'g>> {
        id.map(|i| self.vars[i.0])
    }

    /// Gradients in parameter order; unreached parameters get zeros.
    pub fn collect(&self, grads: &mut Gradients, store: &ParamStore) -> Vec<Tensor> {
        self.vars
            .iter()
            .zip(&store.tensors)
            .map(|(v, t)| grads.take(*v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initialization_is_seeded_and_bounded() {
        let mut d = Declarations::default();
        d.declare("w", &[4, 25], Init::Uniform { fan_in: 25 });
        d.declare("b", &[4], Init::Zeros);
        d.declare("g", &[4], Init::Ones);
        let a = ParamStore::initialize(d.specs(), 7);
        assert_eq!(a, ParamStore::initialize(d.specs(), 7));
        assert_ne!(a, ParamStore::initialize(d.specs(), 8));
        assert!(a.get(ParamId(0)).max_abs() <= 0.2);
        assert_eq!(a.get(ParamId(1)).sum(), 0.0);
        assert_eq!(a.get(ParamId(2)).sum(), 4.0);
        assert_eq!(a.numel(), 108);
    }
}
