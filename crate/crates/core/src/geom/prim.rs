//! The closed set of primitive operations the network is built from.
//!
//! Every primitive carries a forward kernel and a vector-Jacobian product.
//! The eager backend runs only the forward kernel; the tape runs the same
//! kernel and records the primitive for the backward sweep, so recorded
//! values are bit-identical to eager evaluation.

use std::sync::Arc;

use crate::error::{config_err, Result};
use crate::geom::tensor::{Shape, Tensor};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub enum Prim<T> {
    /// `a + b`, with `b` broadcast along any axis where its extent is 1.
    Add,
    Sub,
    Mul,
    Scale(T),
    /// Channel mixing: `[n, r, k] x [1 or n, k, m] -> [n, r, m]`.
    MatMul,
    /// Selects items by index.
    Gather(Arc<[usize]>),
    /// Sums item `m` of the input into item `idx[m]` of an `n_out`-item output.
    ScatterAdd { idx: Arc<[usize]>, n_out: usize },
    /// Euclidean norm of every column: `[n, r, c] -> [n, 1, c]`.
    ColNorm,
    Tanh,
    Sigmoid,
    Abs,
    /// `1 / max(x, eps)` elementwise; constant in the guarded branch.
    RecipGuarded(T),
    /// Column-wise 3-vector cross product on `[n, 3, c]`.
    Cross,
    /// Per-item Gram matrix between `vars` stacked row blocks:
    /// `[n, vars*d, c] x [n, vars*d, c] -> [n, vars, vars]`.
    Gram { vars: usize },
    /// Divides every row by `max(|row|, eps)`.
    RowNormalize(T),
    /// `out_a = sum_b v_b * m[b, a]` over stacked row blocks.
    MixVars { vars: usize },
    /// `[n, vars*d, c] -> [n, d, vars*c]`, placing block `a` at channel offset `a*c`.
    VarsToChannels { vars: usize },
    /// Concatenates inputs along the row axis.
    ConcatRows,
    /// Mean over items and columns: `[n, r, c] -> [1, r, 1]`.
    MeanAxes,
    SumAll,
    Reshape(Shape),
}

fn check_broadcast(a: Shape, b: Shape, what: &str) -> Result<()> {
    for d in 0..3 {
        if b[d] != a[d] && b[d] != 1 {
            return Err(config_err(format!(
                "{what}: cannot broadcast {b:?} onto {a:?}"
            )));
        }
    }
    Ok(())
}

#[inline]
fn bcast_offset(b: Shape, i: usize, r: usize, c: usize) -> usize {
    let bi = if b[0] == 1 { 0 } else { i };
    let br = if b[1] == 1 { 0 } else { r };
    let bc = if b[2] == 1 { 0 } else { c };
    (bi * b[1] + br) * b[2] + bc
}

fn broadcast_binary<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::from_vec(a.shape(), data).expect("same shape");
    }
    let bs = b.shape();
    let bd = b.data();
    Tensor::from_fn(a.shape(), |i, r, c| f(a.get(i, r, c), bd[bcast_offset(bs, i, r, c)]))
}

/// Sums `g` down to `shape` along broadcast axes.
fn reduce_to<T: Scalar>(g: &Tensor<T>, shape: Shape) -> Tensor<T> {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = Tensor::zeros(shape);
    let gs = g.shape();
    let od = out.data_mut();
    for i in 0..gs[0] {
        for r in 0..gs[1] {
            for c in 0..gs[2] {
                od[bcast_offset(shape, i, r, c)] += g.get(i, r, c);
            }
        }
    }
    out
}

fn expect_arity<T>(inputs: &[&Tensor<T>], n: usize, what: &str) -> Result<()> {
    if inputs.len() != n {
        return Err(config_err(format!(
            "{what} takes {n} inputs, got {}",
            inputs.len()
        )));
    }
    Ok(())
}

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(config_err(format!(
            "{what}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn block_rows(rows: usize, vars: usize, what: &str) -> Result<usize> {
    if vars == 0 || !rows.is_multiple_of(vars) {
        return Err(config_err(format!(
            "{what}: {rows} rows do not split into {vars} variables"
        )));
    }
    Ok(rows / vars)
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

#[inline]
fn axpy<T: Scalar>(out: &mut [T], s: T, x: &[T]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += s * v;
    }
}

pub(crate) fn matmul<T: Scalar>(a: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, r, k] = a.shape();
    let [nw, kw, m] = w.shape();
    if kw != k || (nw != 1 && nw != n) {
        return Err(config_err(format!(
            "matmul: {:?} x {:?} incompatible",
            a.shape(),
            w.shape()
        )));
    }
    let mut out = Tensor::zeros([n, r, m]);
    let od = out.data_mut();
    let ad = a.data();
    let wd = w.data();
    for i in 0..n {
        let wi = if nw == 1 { 0 } else { i };
        let wblock = &wd[wi * k * m..(wi + 1) * k * m];
        for row in 0..r {
            let arow = &ad[(i * r + row) * k..(i * r + row + 1) * k];
            let orow = &mut od[(i * r + row) * m..(i * r + row + 1) * m];
            for (kk, &av) in arow.iter().enumerate() {
                if av != T::zero() {
                    axpy(orow, av, &wblock[kk * m..(kk + 1) * m]);
                }
            }
        }
    }
    Ok(out)
}

fn col_norm<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let [n, r, c] = a.shape();
    Tensor::from_fn([n, 1, c], |i, _, cc| {
        (0..r)
            .map(|rr| {
                let v = a.get(i, rr, cc);
                v * v
            })
            .sum::<T>()
            .sqrt()
    })
}

fn cross<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let [n, _, c] = a.shape();
    let mut out = Tensor::zeros(a.shape());
    for i in 0..n {
        for cc in 0..c {
            let (a0, a1, a2) = (a.get(i, 0, cc), a.get(i, 1, cc), a.get(i, 2, cc));
            let (b0, b1, b2) = (b.get(i, 0, cc), b.get(i, 1, cc), b.get(i, 2, cc));
            out.set(i, 0, cc, a1 * b2 - a2 * b1);
            out.set(i, 1, cc, a2 * b0 - a0 * b2);
            out.set(i, 2, cc, a0 * b1 - a1 * b0);
        }
    }
    out
}

fn check_three_rows<T: Scalar>(a: &Tensor<T>, what: &str) -> Result<()> {
    if a.rows() != 3 {
        return Err(config_err(format!(
            "{what} needs 3 coordinate rows, got shape {:?}",
            a.shape()
        )));
    }
    Ok(())
}

impl<T: Scalar> Prim<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Prim::Add => "add",
            Prim::Sub => "sub",
            Prim::Mul => "mul",
            Prim::Scale(_) => "scale",
            Prim::MatMul => "matmul",
            Prim::Gather(_) => "gather",
            Prim::ScatterAdd { .. } => "scatter_add",
            Prim::ColNorm => "col_norm",
            Prim::Tanh => "tanh",
            Prim::Sigmoid => "sigmoid",
            Prim::Abs => "abs",
            Prim::RecipGuarded(_) => "recip_guarded",
            Prim::Cross => "cross",
            Prim::Gram { .. } => "gram",
            Prim::RowNormalize(_) => "row_normalize",
            Prim::MixVars { .. } => "mix_vars",
            Prim::VarsToChannels { .. } => "vars_to_channels",
            Prim::ConcatRows => "concat_rows",
            Prim::MeanAxes => "mean_axes",
            Prim::SumAll => "sum_all",
            Prim::Reshape(_) => "reshape",
        }
    }

    pub fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let name = self.name();
        match self {
            Prim::Add | Prim::Sub | Prim::Mul => {
                expect_arity(inputs, 2, name)?;
                let (a, b) = (inputs[0], inputs[1]);
                check_broadcast(a.shape(), b.shape(), name)?;
                Ok(match self {
                    Prim::Add => broadcast_binary(a, b, |x, y| x + y),
                    Prim::Sub => broadcast_binary(a, b, |x, y| x - y),
                    _ => broadcast_binary(a, b, |x, y| x * y),
                })
            }
            Prim::Scale(s) => {
                expect_arity(inputs, 1, name)?;
                Ok(inputs[0].scaled(*s))
            }
            Prim::MatMul => {
                expect_arity(inputs, 2, name)?;
                matmul(inputs[0], inputs[1])
            }
            Prim::Gather(idx) => {
                expect_arity(inputs, 1, name)?;
                let a = inputs[0];
                let [n, r, c] = a.shape();
                if let Some(&bad) = idx.iter().find(|&&j| j >= n) {
                    return Err(config_err(format!("gather index {bad} out of {n} items")));
                }
                let mut data = Vec::with_capacity(idx.len() * r * c);
                for &j in idx.iter() {
                    data.extend_from_slice(a.item(j));
                }
                Tensor::from_vec([idx.len(), r, c], data)
            }
            Prim::ScatterAdd { idx, n_out } => {
                expect_arity(inputs, 1, name)?;
                let a = inputs[0];
                let [n, r, c] = a.shape();
                if idx.len() != n {
                    return Err(config_err(format!(
                        "scatter_add: {} indices for {n} items",
                        idx.len()
                    )));
                }
                if let Some(&bad) = idx.iter().find(|&&j| j >= *n_out) {
                    return Err(config_err(format!(
                        "scatter_add index {bad} out of {n_out} outputs"
                    )));
                }
                let mut out = Tensor::zeros([*n_out, r, c]);
                let block = r * c;
                let od = out.data_mut();
                for (m, &j) in idx.iter().enumerate() {
                    for (o, &v) in od[j * block..(j + 1) * block].iter_mut().zip(a.item(m)) {
                        *o += v;
                    }
                }
                Ok(out)
            }
            Prim::ColNorm => {
                expect_arity(inputs, 1, name)?;
                Ok(col_norm(inputs[0]))
            }
            Prim::Tanh => {
                expect_arity(inputs, 1, name)?;
                Ok(inputs[0].map(|x| x.tanh()))
            }
            Prim::Sigmoid => {
                expect_arity(inputs, 1, name)?;
                Ok(inputs[0].map(|x| T::one() / (T::one() + (-x).exp())))
            }
            Prim::Abs => {
                expect_arity(inputs, 1, name)?;
                Ok(inputs[0].map(|x| x.abs()))
            }
            Prim::RecipGuarded(eps) => {
                expect_arity(inputs, 1, name)?;
                let eps = *eps;
                Ok(inputs[0].map(|x| T::one() / x.max(eps)))
            }
            Prim::Cross => {
                expect_arity(inputs, 2, name)?;
                same_shape(inputs[0], inputs[1], name)?;
                check_three_rows(inputs[0], name)?;
                Ok(cross(inputs[0], inputs[1]))
            }
            Prim::Gram { vars } => {
                expect_arity(inputs, 2, name)?;
                let (q, k) = (inputs[0], inputs[1]);
                same_shape(q, k, name)?;
                let [n, rows, c] = q.shape();
                let d = block_rows(rows, *vars, name)?;
                let chunk = d * c;
                let v = *vars;
                let mut out = Tensor::zeros([n, v, v]);
                for i in 0..n {
                    let qi = q.item(i);
                    let ki = k.item(i);
                    for a in 0..v {
                        for b in 0..v {
                            let s = dot(
                                &qi[a * chunk..(a + 1) * chunk],
                                &ki[b * chunk..(b + 1) * chunk],
                            );
                            out.set(i, a, b, s);
                        }
                    }
                }
                Ok(out)
            }
            Prim::RowNormalize(eps) => {
                expect_arity(inputs, 1, name)?;
                let a = inputs[0];
                let c = a.cols();
                let mut out = a.clone();
                for row in out.data_mut().chunks_mut(c.max(1)) {
                    let nrm = dot(row, row).sqrt();
                    let d = nrm.max(*eps);
                    for x in row.iter_mut() {
                        *x /= d;
                    }
                }
                Ok(out)
            }
            Prim::MixVars { vars } => {
                expect_arity(inputs, 2, name)?;
                let (v, m) = (inputs[0], inputs[1]);
                let [n, rows, c] = v.shape();
                let d = block_rows(rows, *vars, name)?;
                if m.shape() != [n, *vars, *vars] {
                    return Err(config_err(format!(
                        "mix_vars: weights {:?} do not match {n} items of {vars} variables",
                        m.shape()
                    )));
                }
                let chunk = d * c;
                let mut out = Tensor::zeros(v.shape());
                let block = rows * c;
                let od = out.data_mut();
                for i in 0..n {
                    let vi = v.item(i);
                    let oi = &mut od[i * block..(i + 1) * block];
                    for a in 0..*vars {
                        let oa = &mut oi[a * chunk..(a + 1) * chunk];
                        for b in 0..*vars {
                            axpy(oa, m.get(i, b, a), &vi[b * chunk..(b + 1) * chunk]);
                        }
                    }
                }
                Ok(out)
            }
            Prim::VarsToChannels { vars } => {
                expect_arity(inputs, 1, name)?;
                let x = inputs[0];
                let [n, rows, c] = x.shape();
                let d = block_rows(rows, *vars, name)?;
                Ok(Tensor::from_fn([n, d, vars * c], |i, r, cc| {
                    let (a, ch) = (cc / c, cc % c);
                    x.get(i, a * d + r, ch)
                }))
            }
            Prim::ConcatRows => {
                let first = inputs
                    .first()
                    .ok_or_else(|| config_err("concat_rows of nothing"))?;
                let [n, _, c] = first.shape();
                if inputs.iter().any(|t| t.items() != n || t.cols() != c) {
                    return Err(config_err("concat_rows: inputs disagree on items or cols"));
                }
                let rows: usize = inputs.iter().map(|t| t.rows()).sum();
                let mut data = Vec::with_capacity(n * rows * c);
                for i in 0..n {
                    for t in inputs {
                        data.extend_from_slice(t.item(i));
                    }
                }
                Tensor::from_vec([n, rows, c], data)
            }
            Prim::MeanAxes => {
                expect_arity(inputs, 1, name)?;
                let a = inputs[0];
                let [n, r, c] = a.shape();
                let denom = T::of_usize(n * c);
                Ok(Tensor::from_fn([1, r, 1], |_, rr, _| {
                    let mut s = T::zero();
                    for i in 0..n {
                        for cc in 0..c {
                            s += a.get(i, rr, cc);
                        }
                    }
                    s / denom
                }))
            }
            Prim::SumAll => {
                expect_arity(inputs, 1, name)?;
                Ok(Tensor::scalar(inputs[0].sum()))
            }
            Prim::Reshape(shape) => {
                expect_arity(inputs, 1, name)?;
                inputs[0].clone().reshaped(*shape)
            }
        }
    }

    /// Vector-Jacobian product. `needs[k]` marks which input gradients are wanted;
    /// entries for unwanted inputs come back as `None`.
    pub fn backward(
        &self,
        inputs: &[&Tensor<T>],
        out: &Tensor<T>,
        g: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let want = |k: usize| needs.get(k).copied().unwrap_or(false);
        match self {
            Prim::Add => vec![
                want(0).then(|| g.clone()),
                want(1).then(|| reduce_to(g, inputs[1].shape())),
            ],
            Prim::Sub => vec![
                want(0).then(|| g.clone()),
                want(1).then(|| reduce_to(g, inputs[1].shape()).map(|x| -x)),
            ],
            Prim::Mul => {
                let (a, b) = (inputs[0], inputs[1]);
                vec![
                    want(0).then(|| broadcast_binary(g, b, |x, y| x * y)),
                    want(1).then(|| {
                        let prod = g.zip_map(a, |x, y| x * y).expect("same shape");
                        reduce_to(&prod, b.shape())
                    }),
                ]
            }
            Prim::Scale(s) => vec![want(0).then(|| g.scaled(*s))],
            Prim::MatMul => {
                let (a, w) = (inputs[0], inputs[1]);
                let [n, r, k] = a.shape();
                let [nw, _, m] = w.shape();
                let da = want(0).then(|| {
                    let mut da = Tensor::zeros(a.shape());
                    let dd = da.data_mut();
                    for i in 0..n {
                        let wi = if nw == 1 { 0 } else { i };
                        let wb = &w.data()[wi * k * m..(wi + 1) * k * m];
                        for row in 0..r {
                            let grow = &g.data()[(i * r + row) * m..(i * r + row + 1) * m];
                            let drow = &mut dd[(i * r + row) * k..(i * r + row + 1) * k];
                            for (kk, dv) in drow.iter_mut().enumerate() {
                                *dv = dot(grow, &wb[kk * m..(kk + 1) * m]);
                            }
                        }
                    }
                    da
                });
                let dw = want(1).then(|| {
                    let mut dw = Tensor::zeros(w.shape());
                    let dd = dw.data_mut();
                    for i in 0..n {
                        let wi = if nw == 1 { 0 } else { i };
                        for row in 0..r {
                            let arow = &a.data()[(i * r + row) * k..(i * r + row + 1) * k];
                            let grow = &g.data()[(i * r + row) * m..(i * r + row + 1) * m];
                            for (kk, &av) in arow.iter().enumerate() {
                                if av != T::zero() {
                                    let o = (wi * k + kk) * m;
                                    axpy(&mut dd[o..o + m], av, grow);
                                }
                            }
                        }
                    }
                    dw
                });
                vec![da, dw]
            }
            Prim::Gather(idx) => vec![want(0).then(|| {
                Prim::ScatterAdd {
                    idx: idx.clone(),
                    n_out: inputs[0].items(),
                }
                .forward(&[g])
                .expect("valid indices")
            })],
            Prim::ScatterAdd { idx, .. } => vec![want(0).then(|| {
                Prim::Gather(idx.clone()).forward(&[g]).expect("valid indices")
            })],
            Prim::ColNorm => vec![want(0).then(|| {
                let a = inputs[0];
                let bs = out.shape();
                let od = out.data();
                let gd = g.data();
                Tensor::from_fn(a.shape(), |i, r, c| {
                    let o = bcast_offset(bs, i, r, c);
                    let y = od[o];
                    if y > T::zero() {
                        gd[o] * a.get(i, r, c) / y
                    } else {
                        T::zero()
                    }
                })
            })],
            Prim::Tanh => vec![want(0).then(|| {
                g.zip_map(out, |gv, y| gv * (T::one() - y * y)).expect("same shape")
            })],
            Prim::Sigmoid => vec![want(0).then(|| {
                g.zip_map(out, |gv, y| gv * y * (T::one() - y)).expect("same shape")
            })],
            Prim::Abs => vec![want(0).then(|| {
                g.zip_map(inputs[0], |gv, x| {
                    if x > T::zero() {
                        gv
                    } else if x < T::zero() {
                        -gv
                    } else {
                        T::zero()
                    }
                })
                .expect("same shape")
            })],
            Prim::RecipGuarded(eps) => vec![want(0).then(|| {
                let eps = *eps;
                g.zip_map(inputs[0], |gv, x| {
                    if x > eps {
                        -gv / (x * x)
                    } else {
                        T::zero()
                    }
                })
                .expect("same shape")
            })],
            Prim::Cross => {
                let (a, b) = (inputs[0], inputs[1]);
                vec![want(0).then(|| cross(b, g)), want(1).then(|| cross(g, a))]
            }
            Prim::Gram { vars } => {
                let (q, k) = (inputs[0], inputs[1]);
                let [n, rows, c] = q.shape();
                let chunk = rows / vars * c;
                let v = *vars;
                let grad_side = |other: &Tensor<T>, transpose: bool| {
                    let mut d = Tensor::zeros(q.shape());
                    let block = rows * c;
                    let dd = d.data_mut();
                    for i in 0..n {
                        let oi = other.item(i);
                        let di = &mut dd[i * block..(i + 1) * block];
                        for a in 0..v {
                            for b in 0..v {
                                let gv = if transpose { g.get(i, b, a) } else { g.get(i, a, b) };
                                axpy(
                                    &mut di[a * chunk..(a + 1) * chunk],
                                    gv,
                                    &oi[b * chunk..(b + 1) * chunk],
                                );
                            }
                        }
                    }
                    d
                };
                vec![want(0).then(|| grad_side(k, false)), want(1).then(|| grad_side(q, true))]
            }
            Prim::RowNormalize(eps) => vec![want(0).then(|| {
                let a = inputs[0];
                let c = a.cols().max(1);
                let mut d = Tensor::zeros(a.shape());
                for ((drow, xrow), (yrow, grow)) in d
                    .data_mut()
                    .chunks_mut(c)
                    .zip(a.data().chunks(c))
                    .zip(out.data().chunks(c).zip(g.data().chunks(c)))
                {
                    let nrm = dot(xrow, xrow).sqrt();
                    if nrm >= *eps {
                        let yg = dot(yrow, grow);
                        for ((dv, &yv), &gv) in drow.iter_mut().zip(yrow).zip(grow) {
                            *dv = (gv - yv * yg) / nrm;
                        }
                    } else {
                        for (dv, &gv) in drow.iter_mut().zip(grow) {
                            *dv = gv / *eps;
                        }
                    }
                }
                d
            })],
            Prim::MixVars { vars } => {
                let (v, m) = (inputs[0], inputs[1]);
                let [n, rows, c] = v.shape();
                let chunk = rows / vars * c;
                let block = rows * c;
                let nv = *vars;
                let dv = want(0).then(|| {
                    let mut dv = Tensor::zeros(v.shape());
                    let dd = dv.data_mut();
                    for i in 0..n {
                        let gi = g.item(i);
                        let di = &mut dd[i * block..(i + 1) * block];
                        for b in 0..nv {
                            for a in 0..nv {
                                axpy(
                                    &mut di[b * chunk..(b + 1) * chunk],
                                    m.get(i, b, a),
                                    &gi[a * chunk..(a + 1) * chunk],
                                );
                            }
                        }
                    }
                    dv
                });
                let dm = want(1).then(|| {
                    Tensor::from_fn(m.shape(), |i, b, a| {
                        dot(
                            &g.item(i)[a * chunk..(a + 1) * chunk],
                            &v.item(i)[b * chunk..(b + 1) * chunk],
                        )
                    })
                });
                vec![dv, dm]
            }
            Prim::VarsToChannels { vars } => vec![want(0).then(|| {
                let x = inputs[0];
                let [_, rows, c] = x.shape();
                let d = rows / vars;
                Tensor::from_fn(x.shape(), |i, row, ch| {
                    let (a, r) = (row / d, row % d);
                    g.get(i, r, a * c + ch)
                })
            })],
            Prim::ConcatRows => {
                let n = out.items();
                let c = out.cols();
                let mut offset = 0;
                inputs
                    .iter()
                    .enumerate()
                    .map(|(k, t)| {
                        let rows = t.rows();
                        let start = offset;
                        offset += rows;
                        want(k).then(|| {
                            Tensor::from_fn([n, rows, c], |i, r, cc| g.get(i, start + r, cc))
                        })
                    })
                    .collect()
            }
            Prim::MeanAxes => vec![want(0).then(|| {
                let [n, _, c] = inputs[0].shape();
                let denom = T::of_usize(n * c);
                Tensor::from_fn(inputs[0].shape(), |_, r, _| g.get(0, r, 0) / denom)
            })],
            Prim::SumAll => vec![want(0).then(|| Tensor::filled(inputs[0].shape(), g.get(0, 0, 0)))],
            Prim::Reshape(_) => vec![want(0).then(|| {
                g.clone().reshaped(inputs[0].shape()).expect("same length")
            })],
        }
    }
}
