//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records each operation together with a closure mapping the
//! output gradient to input gradients. Inference graphs skip the closures.

use std::cell::RefCell;
use std::sync::Arc;

use crate::ops::{self, ConvGeom};
use crate::tensor::Tensor;

/// Maps an output gradient to one optional gradient per parent.
pub type Backward = Box<dyn Fn(&Tensor) -> Vec<Option<Tensor>>>;

struct Node {
    value: Arc<Tensor>,
    parents: Vec<usize>,
    backward: Option<Backward>,
}

pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    record: bool,
}

#[derive(Clone, Copy)]
pub struct Var<'g> {
    id: usize,
    graph: &'g Graph,
}

/// Gradients of a backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads[v.id].as_ref()
    }

    pub fn take(&mut self, v: Var<'_>) -> Option<Tensor> {
        self.grads[v.id].take()
    }
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

impl Graph {
    /// A graph that records backward closures.
    pub fn new() -> Self {
        Graph { nodes: RefCell::new(Vec::new()), record: true }
    }

    /// A graph for forward-only evaluation.
    pub fn inference() -> Self {
        Graph { nodes: RefCell::new(Vec::new()), record: false }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn leaf(&self, value: impl Into<Arc<Tensor>>) -> Var<'_> {
        self.push(value.into(), Vec::new(), None)
    }

    /// Adds a node computed by a custom op. `make_backward` is only invoked
    /// when the graph records; it must return one entry per parent.
    pub fn custom<F>(&self, value: Tensor, parents: &[Var<'_>], make_backward: F) -> Var<'_>
    where
        F: FnOnce() -> Backward,
    {
        let backward = self.record.then(make_backward);
        self.push(Arc::new(value), parents.iter().map(|p| p.id).collect(), backward)
    }

    fn push(&self, value: Arc<Tensor>, parents: Vec<usize>, backward: Option<Backward>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, parents, backward });
        Var { id: nodes.len() - 1, graph: self }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Back-propagates from a scalar root.
    pub fn backward(&self, root: Var<'_>) -> Gradients {
        assert!(self.record, "backward() on an inference graph");
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[root.id].value.numel(), 1, "backward root must be a scalar");
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.id] = Some(Tensor::full(nodes[root.id].value.shape(), 1.0));
        for id in (0..=root.id).rev() {
            let Some(backward) = nodes[id].backward.as_ref() else { continue };
            let Some(g) = grads[id].as_ref() else { continue };
            let parent_grads = backward(g);
            debug_assert_eq!(parent_grads.len(), nodes[id].parents.len());
            for (&p, pg) in nodes[id].parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                match grads[p].as_mut() {
                    Some(acc) => acc.add_assign(&pg),
                    None => grads[p] = Some(pg),
                }
            }
        }
        Gradients { grads }
    }
}

impl<'g> Var<'g> {
    pub fn value(&self) -> Arc<Tensor> {
        self.graph.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn add(self, other: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape(), b.shape(), "add shape mismatch");
        let mut out = (*a).clone();
        out.add_assign(&b);
        self.graph.custom(out, &[self, other], || Box::new(|g: &Tensor| vec![Some(g.clone()), Some(g.clone())]))
    }

    pub fn sub(self, other: Var<'g>) -> Var<'g> {
        self.add(other.scale(-1.0))
    }

    pub fn scale(self, s: f64) -> Var<'g> {
        let out = self.value().map(|v| v * s);
        self.graph.custom(out, &[self], move || Box::new(move |g: &Tensor| vec![Some(g.map(|v| v * s))]))
    }

    pub fn gelu(self) -> Var<'g> {
        let x = self.value();
        let out = x.map(ops::gelu);
        self.graph.custom(out, &[self], move || {
            Box::new(move |g: &Tensor| {
                let mut d = g.clone();
                d.data_mut().iter_mut().zip(x.data()).for_each(|(dv, &xv)| *dv *= ops::gelu_grad(xv));
                vec![Some(d)]
            })
        })
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(self) -> Var<'g> {
        let x = self.value();
        let n = x.numel() as f64;
        let shape = x.shape().to_vec();
        self.graph.custom(Tensor::scalar(x.sum() / n), &[self], move || {
            Box::new(move |g: &Tensor| vec![Some(Tensor::full(&shape, g.item() / n))])
        })
    }

    /// Mean absolute difference to a constant target, as a scalar.
    pub fn mean_abs_diff(self, target: Arc<Tensor>) -> Var<'g> {
        let x = self.value();
        assert_eq!(x.shape(), target.shape(), "mean_abs_diff shape mismatch");
        let n = x.numel() as f64;
        let total: f64 = x.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).sum();
        self.graph.custom(Tensor::scalar(total / n), &[self], move || {
            Box::new(move |g: &Tensor| {
                let s = g.item() / n;
                let d: Vec<f64> = x
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(a, b)| {
                        let diff = a - b;
                        if diff > 0.0 {
                            s
                        } else if diff < 0.0 {
                            -s
                        } else {
                            0.0
                        }
                    })
                    .collect();
                vec![Some(Tensor::from_vec(x.shape(), d))]
            })
        })
    }

    pub fn conv2d(self, w: Var<'g>, b: Option<Var<'g>>, geom: ConvGeom) -> Var<'g> {
        let (x, wv) = (self.value(), w.value());
        let bv = b.map(|b| b.value());
        let out = ops::conv2d(&x, &wv, bv.as_deref(), &geom);
        let mut parents = vec![self, w];
        parents.extend(b);
        let has_bias = b.is_some();
        self.graph.custom(out, &parents, move || {
            Box::new(move |g: &Tensor| {
                let (dx, dw, db) = ops::conv2d_backward(&x, &wv, g, &geom, true);
                let mut v = vec![dx, Some(dw)];
                if has_bias {
                    v.push(Some(db));
                }
                v
            })
        })
    }

    pub fn conv_transpose_time(self, w: Var<'g>, b: Option<Var<'g>>, groups: usize, out_t: usize) -> Var<'g> {
        let (x, wv) = (self.value(), w.value());
        let bv = b.map(|b| b.value());
        let out = ops::conv_transpose_time(&x, &wv, bv.as_deref(), groups, out_t);
        let mut parents = vec![self, w];
        parents.extend(b);
        let has_bias = b.is_some();
        self.graph.custom(out, &parents, move || {
            Box::new(move |g: &Tensor| {
                let (dx, dw, db) = ops::conv_transpose_time_backward(&x, &wv, g, groups, true);
                let mut v = vec![dx, Some(dw)];
                if has_bias {
                    v.push(Some(db));
                }
                v
            })
        })
    }

    pub fn group_norm(self, groups: usize, gamma: Var<'g>, beta: Var<'g>) -> Var<'g> {
        let (x, ga, be) = (self.value(), gamma.value(), beta.value());
        let (out, stats) = ops::group_norm(&x, groups, &ga, &be);
        self.graph.custom(out, &[self, gamma, beta], move || {
            Box::new(move |g: &Tensor| {
                let (dx, dg, db) = ops::group_norm_backward(&x, groups, &ga, &stats, g);
                vec![Some(dx), Some(dg), Some(db)]
            })
        })
    }

    pub fn band_linear(self, w: Var<'g>, b: Var<'g>) -> Var<'g> {
        let (x, wv, bv) = (self.value(), w.value(), b.value());
        let out = ops::band_linear(&x, &wv, &bv);
        self.graph.custom(out, &[self, w, b], move || {
            Box::new(move |g: &Tensor| {
                let (dx, dw, db) = ops::band_linear_backward(&x, &wv, g);
                vec![Some(dx), Some(dw), Some(db)]
            })
        })
    }

    pub fn linear(self, w: Var<'g>, b: Option<Var<'g>>) -> Var<'g> {
        let (x, wv) = (self.value(), w.value());
        let bv = b.map(|b| b.value());
        let out = ops::linear(&x, &wv, bv.as_deref());
        let mut parents = vec![self, w];
        parents.extend(b);
        let has_bias = b.is_some();
        self.graph.custom(out, &parents, move || {
            Box::new(move |g: &Tensor| {
                let (dx, dw, db) = ops::linear_backward(&x, &wv, g);
                let mut v = vec![Some(dx), Some(dw)];
                if has_bias {
                    v.push(Some(db));
                }
                v
            })
        })
    }

    pub fn layer_norm(self, gamma: Var<'g>, beta: Var<'g>) -> Var<'g> {
        let (x, ga, be) = (self.value(), gamma.value(), beta.value());
        let (out, stats) = ops::layer_norm(&x, &ga, &be);
        self.graph.custom(out, &[self, gamma, beta], move || {
            Box::new(move |g: &Tensor| {
                let (dx, dg, db) = ops::layer_norm_backward(&x, &ga, &stats, g);
                vec![Some(dx), Some(dg), Some(db)]
            })
        })
    }

    pub fn permute3(self, perm: [usize; 3]) -> Var<'g> {
        let out = ops::permute3(&self.value(), perm);
        let inv = ops::inverse_perm(perm);
        self.graph.custom(out, &[self], move || Box::new(move |g: &Tensor| vec![Some(ops::permute3(g, inv))]))
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'g> {
        let x = self.value();
        let in_shape = x.shape().to_vec();
        let out = (*x).clone().reshape(shape);
        self.graph.custom(out, &[self], move || {
            Box::new(move |g: &Tensor| vec![Some(g.clone().reshape(&in_shape))])
        })
    }

    pub fn repeat_time(self, factor: usize, out_t: usize) -> Var<'g> {
        let x = self.value();
        let in_t = *x.shape().last().unwrap();
        let out = ops::repeat_time(&x, factor, out_t);
        self.graph.custom(out, &[self], move || {
            Box::new(move |g: &Tensor| vec![Some(ops::repeat_time_backward(g, factor, in_t))])
        })
    }
}
