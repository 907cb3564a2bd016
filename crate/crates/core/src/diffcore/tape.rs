//! Reverse-mode recorder for the layer kernels.
//!
//! A [`Tape`] borrows one [`ParamSet`]. Every op appends a node holding its
//! output value and whatever the backward pass needs. [`Tape::backward`]
//! walks the nodes in exact reverse order of recording and accumulates
//! gradients additively, so a parameter used at several time steps collects
//! the sum of its per-step contributions.

use super::array::Array;
use super::kernels::{self, Activation, LstmCache, LstmGrads};
use super::params::{ParamId, ParamSet};
use crate::error::{Error, Result};

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug)]
pub struct DenseRef {
    pub w: ParamId,
    pub b: ParamId,
    pub act: Activation,
}

#[derive(Clone, Copy, Debug)]
pub struct ConvRef {
    pub w: ParamId,
    pub b: ParamId,
    pub width: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmRef {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Dense { x: Var, layer: DenseRef },
    Conv { x: Var, layer: ConvRef, argmax: Vec<usize> },
    Concat { parts: Vec<Var> },
    Slice { x: Var, start: usize },
    Relu { x: Var },
    // value = [h' | c']; `state` is a node holding [h | c]
    Lstm { x: Var, state: Var, cell: LstmRef, cache: LstmCache },
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
}

/// Gradients with respect to tape nodes, from [`Tape::backward`].
pub struct NodeGrads {
    grads: Vec<Option<Vec<f64>>>,
}

impl NodeGrads {
    /// Gradient reaching `v`; `None` if nothing flowed into it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(32),
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    /// Last recorded node.
    pub fn output(&self) -> Option<Var> {
        self.nodes.len().checked_sub(1).map(Var)
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Constant input. Its gradient is reported by `backward` but nothing
    /// flows beyond it.
    pub fn leaf(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn dense(&mut self, x: Var, layer: DenseRef) -> Result<Var> {
        let w = self.params.get(layer.w);
        let b = self.params.get(layer.b);
        let n_in = self.value(x).len();
        if w.shape() != [b.len(), n_in] {
            return Err(Error::config(format!(
                "dense: weight shape {:?} does not fit input {n_in} / bias {}",
                w.shape(),
                b.len()
            )));
        }
        let mut y = vec![0.0; b.len()];
        kernels::dense_forward(self.value(x), w.data(), b.data(), layer.act, &mut y);
        Ok(self.push(y, Op::Dense { x, layer }))
    }

    pub fn conv1d_pool(&mut self, x: Var, layer: ConvRef) -> Result<Var> {
        let w = self.params.get(layer.w);
        let b = self.params.get(layer.b);
        let k = self.value(x).len();
        if layer.width == 0 || k < layer.width {
            return Err(Error::config(format!(
                "conv: signal length {k} shorter than filter width {}",
                layer.width
            )));
        }
        if w.shape() != [b.len(), layer.width] {
            return Err(Error::config(format!(
                "conv: filter shape {:?} does not match {} channels x width {}",
                w.shape(),
                b.len(),
                layer.width
            )));
        }
        let mut y = vec![0.0; b.len()];
        let mut argmax = vec![0; b.len()];
        kernels::conv1d_pool_forward(
            self.value(x),
            w.data(),
            b.data(),
            layer.width,
            &mut y,
            &mut argmax,
        );
        Ok(self.push(y, Op::Conv { x, layer, argmax }))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut y = Vec::with_capacity(parts.iter().map(|p| self.value(*p).len()).sum());
        for p in parts {
            y.extend_from_slice(self.value(*p));
        }
        self.push(
            y,
            Op::Concat {
                parts: parts.to_vec(),
            },
        )
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let y = self.value(x)[start..start + len].to_vec();
        self.push(y, Op::Slice { x, start })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).iter().map(|v| v.max(0.0)).collect();
        self.push(y, Op::Relu { x })
    }

    /// One LSTM step. `state` holds `[h | c]`; the returned node holds
    /// `[h' | c']` and can be fed straight into the next step.
    pub fn lstm(&mut self, x: Var, state: Var, cell: LstmRef) -> Result<Var> {
        let wx = self.params.get(cell.wx);
        let wh = self.params.get(cell.wh);
        let b = self.params.get(cell.b);
        let hidden = b.len() / 4;
        let n_in = self.value(x).len();
        if !b.len().is_multiple_of(4)
            || wx.shape() != [4 * hidden, n_in]
            || wh.shape() != [4 * hidden, hidden]
        {
            return Err(Error::config(format!(
                "lstm: weights {:?}/{:?}/{:?} do not fit input {n_in}",
                wx.shape(),
                wh.shape(),
                b.shape()
            )));
        }
        if self.value(state).len() != 2 * hidden {
            return Err(Error::config(format!(
                "lstm: state length {} but layer width is {hidden}",
                self.value(state).len()
            )));
        }
        let (h, c) = self.value(state).split_at(hidden);
        let mut out = vec![0.0; 2 * hidden];
        let (h_out, c_out) = out.split_at_mut(hidden);
        let cache = kernels::lstm_forward(
            self.value(x),
            h,
            c,
            wx.data(),
            wh.data(),
            b.data(),
            h_out,
            c_out,
        );
        Ok(self.push(
            out,
            Op::Lstm {
                x,
                state,
                cell,
                cache,
            },
        ))
    }

    /// Reverse pass. `seeds` are upstream gradients for chosen nodes (added
    /// together when a node repeats). Parameter gradients are accumulated
    /// into `param_grads`, which must be shaped like the tape's parameters.
    pub fn backward(&self, seeds: &[(Var, &[f64])], param_grads: &mut ParamSet) -> NodeGrads {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        for (v, g) in seeds {
            assert_eq!(
                g.len(),
                self.nodes[v.0].value.len(),
                "seed gradient length does not match node"
            );
            add_into(&mut grads, *v, g.to_vec());
        }

        for idx in (0..self.nodes.len()).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Dense { x, layer } => {
                    let xv = self.value(*x);
                    let w = self.params.get(layer.w).data();
                    let (dw, db) = two_mut(param_grads, layer.w, layer.b);
                    let mut dx = vec![0.0; xv.len()];
                    kernels::dense_backward(
                        xv,
                        w,
                        &node.value,
                        &dy,
                        layer.act,
                        dw,
                        db,
                        Some(&mut dx),
                    );
                    add_into(&mut grads, *x, dx);
                }
                Op::Conv { x, layer, argmax } => {
                    let xv = self.value(*x);
                    let w = self.params.get(layer.w).data();
                    let (dw, db) = two_mut(param_grads, layer.w, layer.b);
                    let mut dx = vec![0.0; xv.len()];
                    kernels::conv1d_pool_backward(
                        xv,
                        w,
                        layer.width,
                        &node.value,
                        argmax,
                        &dy,
                        dw,
                        db,
                        Some(&mut dx),
                    );
                    add_into(&mut grads, *x, dx);
                }
                Op::Concat { parts } => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        add_into(&mut grads, *p, dy[off..off + n].to_vec());
                        off += n;
                    }
                }
                Op::Slice { x, start } => {
                    let mut dx = vec![0.0; self.value(*x).len()];
                    dx[*start..*start + dy.len()].copy_from_slice(&dy);
                    add_into(&mut grads, *x, dx);
                }
                Op::Relu { x } => {
                    let dx = dy
                        .iter()
                        .zip(&node.value)
                        .map(|(g, y)| if *y > 0.0 { *g } else { 0.0 })
                        .collect();
                    add_into(&mut grads, *x, dx);
                }
                Op::Lstm {
                    x,
                    state,
                    cell,
                    cache,
                } => {
                    let hidden = node.value.len() / 2;
                    let xv = self.value(*x);
                    let (h, c) = self.value(*state).split_at(hidden);
                    let wx = self.params.get(cell.wx).data();
                    let wh = self.params.get(cell.wh).data();
                    let mut dx = vec![0.0; xv.len()];
                    let mut dstate = vec![0.0; 2 * hidden];
                    {
                        let (dh, dc) = dstate.split_at_mut(hidden);
                        let (dwx, dwh, db) = three_mut(param_grads, cell.wx, cell.wh, cell.b);
                        kernels::lstm_backward(
                            xv,
                            h,
                            c,
                            wx,
                            wh,
                            cache,
                            &dy[..hidden],
                            &dy[hidden..],
                            LstmGrads {
                                dwx,
                                dwh,
                                db,
                                dx: Some(&mut dx),
                                dh: Some(dh),
                                dc: Some(dc),
                            },
                        );
                    }
                    add_into(&mut grads, *x, dx);
                    add_into(&mut grads, *state, dstate);
                }
            }
            // keep leaf gradients for the caller
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(dy);
            }
        }
        NodeGrads { grads }
    }
}

fn add_into(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(&g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn two_mut(set: &mut ParamSet, a: ParamId, b: ParamId) -> (&mut [f64], &mut [f64]) {
    let mut it = set.arrays_mut().enumerate();
    let mut ra = None;
    let mut rb = None;
    for (i, arr) in it.by_ref() {
        if i == a.0 {
            ra = Some(arr.data_mut());
        } else if i == b.0 {
            rb = Some(arr.data_mut());
        }
    }
    (
        ra.expect("gradient set missing parameter"),
        rb.expect("gradient set missing parameter"),
    )
}

fn three_mut(
    set: &mut ParamSet,
    a: ParamId,
    b: ParamId,
    c: ParamId,
) -> (&mut [f64], &mut [f64], &mut [f64]) {
    let mut ra = None;
    let mut rb = None;
    let mut rc = None;
    for (i, arr) in set.arrays_mut().enumerate() {
        if i == a.0 {
            ra = Some(arr.data_mut());
        } else if i == b.0 {
            rb = Some(arr.data_mut());
        } else if i == c.0 {
            rc = Some(arr.data_mut());
        }
    }
    (
        ra.expect("gradient set missing parameter"),
        rb.expect("gradient set missing parameter"),
        rc.expect("gradient set missing parameter"),
    )
}

/// Gradient of every parameter of the tape's [`ParamSet`] given the upstream
/// gradient of the last recorded node. Untouched parameters come back zero;
/// an empty tape yields an empty map.
pub fn backprop(tape: &Tape<'_>, loss_grad: &Array) -> Result<ParamSet> {
    let Some(out) = tape.output() else {
        return Ok(ParamSet::new());
    };
    if tape.value(out).len() != loss_grad.len() {
        return Err(Error::config(format!(
            "loss gradient has {} entries, output has {}",
            loss_grad.len(),
            tape.value(out).len()
        )));
    }
    let mut grads = tape.params().zeros_like();
    tape.backward(&[(out, loss_grad.data())], &mut grads);
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_gradient_is_outer_product() {
        let mut p = ParamSet::new();
        let w = p
            .insert("w", Array::from_vec(&[2, 3], vec![0.5, -1.0, 2.0, 0.1, 0.2, 0.3]).unwrap())
            .unwrap();
        let b = p.insert("b", Array::zeros(&[2])).unwrap();
        let x = [1.5, -2.0, 0.25];
        let mut tape = Tape::new(&p);
        let xv = tape.leaf(x.to_vec());
        tape.dense(
            xv,
            DenseRef {
                w,
                b,
                act: Activation::Identity,
            },
        )
        .unwrap();
        let g = backprop(&tape, &Array::vector(vec![1.0, 0.0])).unwrap();
        assert_eq!(g.by_name("w").unwrap().data(), &[1.5, -2.0, 0.25, 0.0, 0.0, 0.0]);
        assert_eq!(g.by_name("b").unwrap().data(), &[1.0, 0.0]);
    }

    #[test]
    fn empty_tape_gives_empty_map() {
        let p = ParamSet::new();
        let tape = Tape::new(&p);
        assert!(backprop(&tape, &Array::scalar(1.0)).unwrap().is_empty());
    }

    #[test]
    fn untouched_parameters_get_zero() {
        let mut p = ParamSet::new();
        let w = p.insert("w", Array::scalar(2.0).reshaped(&[1, 1])).unwrap();
        let b = p.insert("b", Array::scalar(0.0)).unwrap();
        p.insert("unused", Array::vector(vec![3.0, 4.0])).unwrap();
        let mut tape = Tape::new(&p);
        let x = tape.leaf(vec![1.0]);
        tape.dense(x, DenseRef { w, b, act: Activation::Tanh }).unwrap();
        let g = backprop(&tape, &Array::scalar(1.0)).unwrap();
        assert_eq!(g.by_name("unused").unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let mut p = ParamSet::new();
        let w = p.insert("w", Array::zeros(&[2, 3])).unwrap();
        let b = p.insert("b", Array::zeros(&[2])).unwrap();
        let mut tape = Tape::new(&p);
        let x = tape.leaf(vec![1.0, 2.0]);
        let r = tape.dense(x, DenseRef { w, b, act: Activation::Relu });
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn conv_rejects_short_signal() {
        let mut p = ParamSet::new();
        let w = p.insert("w", Array::zeros(&[1, 4])).unwrap();
        let b = p.insert("b", Array::zeros(&[1])).unwrap();
        let mut tape = Tape::new(&p);
        let x = tape.leaf(vec![1.0, 2.0, 3.0]);
        assert!(tape.conv1d_pool(x, ConvRef { w, b, width: 4 }).is_err());
    }
}
