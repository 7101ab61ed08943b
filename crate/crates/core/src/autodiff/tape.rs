use std::collections::HashMap;

use crate::autodiff::backend::Backend;
use crate::autodiff::params::{Gradients, ParamStore};
use crate::error::{Error, Result};
use crate::geom::prim::Prim;
use crate::geom::tensor::Tensor;
use crate::scalar::Scalar;

/// Direct evaluation without recording.
pub struct Eager<'p, T> {
    params: &'p ParamStore<T>,
}

impl<'p, T: Scalar> Eager<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self { params }
    }
}

impl<T: Scalar> Backend<T> for Eager<'_, T> {
    type Var = Tensor<T>;

    fn constant(&mut self, value: Tensor<T>) -> Tensor<T> {
        value
    }

    fn param(&mut self, path: &str) -> Result<Tensor<T>> {
        self.params.require(path).cloned()
    }

    fn value<'a>(&'a self, v: &'a Tensor<T>) -> &'a Tensor<T> {
        v
    }

    fn apply(&mut self, prim: Prim<T>, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        prim.forward(inputs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

struct Node<T> {
    prim: Option<Prim<T>>,
    inputs: Vec<usize>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Append-only record of primitive applications. Inputs always precede their
/// consumers, so a single reverse sweep visits nodes in a valid order.
pub struct Tape<'p, T> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_nodes: HashMap<String, usize>,
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Reverse sweep from a scalar node. Every parameter of the store gets an
    /// entry; parameters the loss does not depend on get exact zeros.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let root = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::Usage(format!("node {} is not on this tape", loss.0)))?;
        if root.value.shape() != [1, 1, 1] {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, node has shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            let Some(prim) = &node.prim else { continue };
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|&i| &self.nodes[i].value).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|&i| self.nodes[i].requires_grad).collect();
            let input_grads = prim.backward(&inputs, &node.value, &g, &needs);
            for (&i, ig) in node.inputs.iter().zip(input_grads) {
                if let Some(ig) = ig {
                    match &mut grads[i] {
                        Some(acc) => acc.add_assign_tensor(&ig),
                        slot @ None => *slot = Some(ig),
                    }
                }
            }
            // Leaf parameter gradients stay in place; interior ones were taken above.
        }
        let mut map = std::collections::BTreeMap::new();
        for (path, p) in self.params.iter() {
            let g = self
                .param_nodes
                .get(path)
                .and_then(|&i| grads.get(i).and_then(|g| g.clone()))
                .unwrap_or_else(|| Tensor::zeros(p.value.shape()));
            map.insert(path.to_string(), g);
        }
        Ok(Gradients { map })
    }

    fn push(&mut self, prim: Option<Prim<T>>, inputs: Vec<usize>, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            prim,
            inputs,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }
}

impl<T: Scalar> Backend<T> for Tape<'_, T> {
    type Var = NodeId;

    fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(None, Vec::new(), value, false)
    }

    fn param(&mut self, path: &str) -> Result<NodeId> {
        if let Some(&id) = self.param_nodes.get(path) {
            return Ok(NodeId(id));
        }
        let value = self.params.require(path)?.clone();
        let id = self.push(None, Vec::new(), value, true);
        self.param_nodes.insert(path.to_string(), id.0);
        Ok(id)
    }

    fn value<'a>(&'a self, v: &'a NodeId) -> &'a Tensor<T> {
        &self.nodes[v.0].value
    }

    fn apply(&mut self, prim: Prim<T>, inputs: &[&NodeId]) -> Result<NodeId> {
        let values: Vec<&Tensor<T>> = inputs.iter().map(|id| &self.nodes[id.0].value).collect();
        let value = prim.forward(&values)?;
        let requires_grad = inputs.iter().any(|id| self.nodes[id.0].requires_grad);
        let ids = inputs.iter().map(|id| id.0).collect();
        Ok(self.push(Some(prim), ids, value, requires_grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap())
            .unwrap();
        s.insert("unused", Tensor::ones([1, 2, 2])).unwrap();
        s
    }

    #[test]
    fn sum_of_squares_gradient_is_twice_the_grid() {
        let s = store();
        let mut tape = Tape::new(&s);
        let w = tape.param("w").unwrap();
        let sq = tape.mul(&w, &w).unwrap();
        let loss = tape.sum_all(&sq).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get("w").unwrap().data(), &[2.0, -4.0, 1.0, 6.0]);
        assert_eq!(g.get("unused").unwrap().data(), &[0.0; 4]);
    }

    #[test]
    fn non_scalar_loss_is_a_usage_error() {
        let s = store();
        let mut tape = Tape::new(&s);
        let w = tape.param("w").unwrap();
        assert!(matches!(tape.backward(w), Err(Error::Usage(_))));
    }

    #[test]
    fn recorded_values_match_eager() {
        let s = store();
        let x = Tensor::from_fn([3, 3, 2], |i, r, c| (i * 7 + r * 3 + c) as f64 * 0.1 - 0.4);
        let run = |b: &mut dyn FnMut(&Tensor<f64>) -> Tensor<f64>| b(&x);
        let mut tape = Tape::new(&s);
        let mut eager = Eager::new(&s);
        let via_tape = run(&mut |x| {
            let xv = tape.constant(x.clone());
            let w = tape.param("w").unwrap();
            let y = tape.matmul(&xv, &w).unwrap();
            let n = tape.col_norm(&y).unwrap();
            let t = tape.tanh(&n).unwrap();
            let z = tape.mul(&y, &t).unwrap();
            tape.value(&z).clone()
        });
        let via_eager = run(&mut |x| {
            let w = eager.param("w").unwrap();
            let y = eager.matmul(x, &w).unwrap();
            let n = eager.col_norm(&y).unwrap();
            let t = eager.tanh(&n).unwrap();
            eager.mul(&y, &t).unwrap()
        });
        assert_eq!(via_tape, via_eager);
    }

    #[test]
    fn shape_mismatch_surfaces_at_record_time() {
        let s = store();
        let mut tape = Tape::new(&s);
        let a = tape.constant(Tensor::zeros([1, 3, 3]));
        let w = tape.param("w").unwrap();
        assert!(matches!(tape.matmul(&a, &w), Err(Error::Config(_))));
    }
}
