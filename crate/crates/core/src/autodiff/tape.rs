use std::sync::Arc;

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};
use crate::mesh::Topology;

/// CSR neighbor lists for the 1-ring mean, applied to `B` stacked copies of
/// a `V`-vertex field laid out as `[B·V, C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborMean {
    offsets: Vec<usize>,
    indices: Vec<usize>,
    inv_degree: Vec<f64>,
}

impl NeighborMean {
    pub fn new(topo: &Topology) -> Result<Self> {
        Self::from_lists(&topo.neighbors)
    }

    pub fn from_lists(neighbors: &[Vec<usize>]) -> Result<Self> {
        let n = neighbors.len();
        let mut offsets = vec![0];
        let mut indices = Vec::new();
        let mut inv_degree = Vec::with_capacity(n);
        for (i, list) in neighbors.iter().enumerate() {
            if list.is_empty() {
                return Err(Error::IsolatedVertex(i));
            }
            if let Some(&j) = list.iter().find(|&&j| j >= n) {
                return Err(Error::Shape(format!(
                    "neighbor {j} of vertex {i} out of range"
                )));
            }
            indices.extend_from_slice(list);
            offsets.push(indices.len());
            inv_degree.push(1.0 / list.len() as f64);
        }
        Ok(NeighborMean {
            offsets,
            indices,
            inv_degree,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.inv_degree.len()
    }

    fn forward(&self, x: &[f64], channels: usize, out: &mut [f64]) {
        let v = self.vertex_count();
        for (block_in, block_out) in x
            .chunks_exact(v * channels)
            .zip(out.chunks_exact_mut(v * channels))
        {
            for i in 0..v {
                let row = &mut block_out[i * channels..(i + 1) * channels];
                for &j in &self.indices[self.offsets[i]..self.offsets[i + 1]] {
                    for (o, s) in row
                        .iter_mut()
                        .zip(&block_in[j * channels..(j + 1) * channels])
                    {
                        *o += s;
                    }
                }
                let w = self.inv_degree[i];
                row.iter_mut().for_each(|o| *o *= w);
            }
        }
    }

    fn backward(&self, dy: &[f64], channels: usize, dx: &mut [f64]) {
        let v = self.vertex_count();
        for (block_dy, block_dx) in dy
            .chunks_exact(v * channels)
            .zip(dx.chunks_exact_mut(v * channels))
        {
            for i in 0..v {
                let w = self.inv_degree[i];
                let g = &block_dy[i * channels..(i + 1) * channels];
                for &j in &self.indices[self.offsets[i]..self.offsets[i + 1]] {
                    for (d, s) in block_dx[j * channels..(j + 1) * channels].iter_mut().zip(g) {
                        *d += w * s;
                    }
                }
            }
        }
    }
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Input,
    Param(ParamId),
    MatMul {
        a: usize,
        b: usize,
        ta: bool,
        tb: bool,
        m: usize,
        k: usize,
        n: usize,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    Square(usize),
    Concat {
        parts: Vec<usize>,
        axis: usize,
    },
    Slice {
        a: usize,
        axis: usize,
        start: usize,
    },
    Sum(usize),
    Mean(usize),
    Gather {
        a: usize,
        index: Arc<NeighborMean>,
    },
    Reshape(usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records operations in execution order for one reverse pass.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    no_grad: bool,
}

/// Gradients of one backward pass, indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape that records values only; nothing on it is differentiable.
    pub fn inference() -> Self {
        Tape {
            nodes: Vec::new(),
            no_grad: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad: needs_grad && !self.no_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: usize) -> bool {
        self.nodes[v].needs_grad
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// Differentiable leaf whose gradient is read back from [`Gradients`].
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    /// `op(a) · op(b)` for matrices, `op` transposing when the flag is set.
    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (ar, ac) = self.value(a).dims2()?;
        let (br, bc) = self.value(b).dims2()?;
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul: inner dims {k} vs {k2} (shapes {:?}{} × {:?}{})",
                self.value(a).shape(),
                if ta { "ᵀ" } else { "" },
                self.value(b).shape(),
                if tb { "ᵀ" } else { "" }
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            1.0,
            self.value(a).data(),
            ta,
            self.value(b).data(),
            tb,
            0.0,
            &mut out,
        );
        let ng = self.ng(a.0) || self.ng(b.0);
        Ok(self.push(
            Tensor::matrix(m, n, out)?,
            Op::MatMul {
                a: a.0,
                b: b.0,
                ta,
                tb,
                m,
                k,
                n,
            },
            ng,
        ))
    }

    fn zip(
        &mut self,
        a: Var,
        b: Var,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        same_shape(self.value(a), self.value(b), what)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let ng = self.ng(a.0) || self.ng(b.0);
        Ok(self.push(value, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "sub", |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", |x, y| x * y, Op::Mul(a.0, b.0))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
            .expect("same length");
        let ng = self.ng(a.0);
        self.push(value, op, ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| s * x, Op::Scale(a.0, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a.0))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, |x| x * x, Op::Square(a.0))
    }

    /// Joins matrices along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() || axis > 1 {
            return Err(Error::Shape("concat needs parts and axis 0 or 1".into()));
        }
        let dims: Vec<(usize, usize)> = parts
            .iter()
            .map(|p| self.value(*p).dims2())
            .collect::<Result<_>>()?;
        let (r0, c0) = dims[0];
        let (rows, cols) = if axis == 0 {
            if dims.iter().any(|d| d.1 != c0) {
                return Err(Error::Shape(format!(
                    "concat rows: column counts differ {dims:?}"
                )));
            }
            (dims.iter().map(|d| d.0).sum(), c0)
        } else {
            if dims.iter().any(|d| d.0 != r0) {
                return Err(Error::Shape(format!(
                    "concat columns: row counts differ {dims:?}"
                )));
            }
            (r0, dims.iter().map(|d| d.1).sum())
        };
        let mut out = Vec::with_capacity(rows * cols);
        if axis == 0 {
            for p in parts {
                out.extend_from_slice(self.value(*p).data());
            }
        } else {
            for r in 0..rows {
                for (p, &(_, c)) in parts.iter().zip(&dims) {
                    out.extend_from_slice(&self.value(*p).data()[r * c..(r + 1) * c]);
                }
            }
        }
        let ng = parts.iter().any(|p| self.ng(p.0));
        Ok(self.push(
            Tensor::matrix(rows, cols, out)?,
            Op::Concat {
                parts: parts.iter().map(|p| p.0).collect(),
                axis,
            },
            ng,
        ))
    }

    /// `len` rows (axis 0) or columns (axis 1) starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.value(a).dims2()?;
        let extent = if axis == 0 { rows } else { cols };
        if axis > 1 || start + len > extent {
            return Err(Error::Shape(format!(
                "slice {start}..{} on axis {axis} of {rows}×{cols}",
                start + len
            )));
        }
        let src = self.value(a).data();
        let (value, shape) = if axis == 0 {
            (
                src[start * cols..(start + len) * cols].to_vec(),
                (len, cols),
            )
        } else {
            let mut v = Vec::with_capacity(rows * len);
            for r in 0..rows {
                v.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
            }
            (v, (rows, len))
        };
        let ng = self.ng(a.0);
        Ok(self.push(
            Tensor::matrix(shape.0, shape.1, value)?,
            Op::Slice {
                a: a.0,
                axis,
                start,
            },
            ng,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.ng(a.0);
        self.push(Tensor::scalar(s), Op::Sum(a.0), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        let ng = self.ng(a.0);
        self.push(Tensor::scalar(s), Op::Mean(a.0), ng)
    }

    /// Row `b·V + i` becomes the mean of rows `b·V + j`, `j ∈ N(i)`.
    pub fn neighbor_mean(&mut self, a: Var, index: &Arc<NeighborMean>) -> Result<Var> {
        let (rows, cols) = self.value(a).dims2()?;
        let v = index.vertex_count();
        if rows % v != 0 {
            return Err(Error::Shape(format!(
                "neighbor mean: {rows} rows is not a multiple of {v} vertices"
            )));
        }
        let mut out = vec![0.0; rows * cols];
        index.forward(self.value(a).data(), cols, &mut out);
        let ng = self.ng(a.0);
        Ok(self.push(
            Tensor::matrix(rows, cols, out)?,
            Op::Gather {
                a: a.0,
                index: Arc::clone(index),
            },
            ng,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(a).clone().reshaped(shape)?;
        let ng = self.ng(a.0);
        Ok(self.push(value, Op::Reshape(a.0), ng))
    }

    /// Reverse pass from a scalar.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::Shape(format!(
                "loss must be scalar, got shape {:?}",
                root.value.shape()
            )));
        }
        if !root.needs_grad {
            return Err(Error::InvalidArgument(
                "loss does not depend on any differentiable input".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Runs [`backward`](Self::backward) and adds parameter gradients into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.backward(loss)?;
        self.accumulate(&grads, store);
        Ok(grads)
    }

    /// Adds gradients of parameter leaves into `store`, in node order.
    pub fn accumulate(&self, grads: &Gradients, store: &mut ParamStore) {
        for (idx, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(Some(g))) = (&node.op, grads.grads.get(idx)) {
                for (s, d) in store.get_mut(*id).grad.iter_mut().zip(g) {
                    *s += d;
                }
            }
        }
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        // gradient buffer of input `i`, created on first use
        fn slot<'a>(
            grads: &'a mut [Option<Vec<f64>>],
            nodes: &[Node],
            i: usize,
        ) -> Option<&'a mut Vec<f64>> {
            if !nodes[i].needs_grad {
                return None;
            }
            Some(grads[i].get_or_insert_with(|| vec![0.0; nodes[i].value.len()]))
        }
        match &node.op {
            Op::Constant | Op::Input | Op::Param(_) => {}
            &Op::MatMul {
                a,
                b,
                ta,
                tb,
                m,
                k,
                n,
            } => {
                let av = nodes[a].value.data();
                let bv = nodes[b].value.data();
                if let Some(da) = slot(grads, nodes, a) {
                    if ta {
                        gemm(k, n, m, 1.0, bv, tb, g, true, 1.0, da);
                    } else {
                        gemm(m, n, k, 1.0, g, false, bv, !tb, 1.0, da);
                    }
                }
                if let Some(db) = slot(grads, nodes, b) {
                    if tb {
                        gemm(n, m, k, 1.0, g, true, av, ta, 1.0, db);
                    } else {
                        gemm(k, m, n, 1.0, av, !ta, g, false, 1.0, db);
                    }
                }
            }
            &Op::Add(a, b) => {
                for (i, sign) in [(a, 1.0), (b, 1.0)] {
                    if let Some(d) = slot(grads, nodes, i) {
                        d.iter_mut().zip(g).for_each(|(d, g)| *d += sign * g);
                    }
                }
            }
            &Op::Sub(a, b) => {
                for (i, sign) in [(a, 1.0), (b, -1.0)] {
                    if let Some(d) = slot(grads, nodes, i) {
                        d.iter_mut().zip(g).for_each(|(d, g)| *d += sign * g);
                    }
                }
            }
            &Op::Mul(a, b) => {
                for (i, other) in [(a, b), (b, a)] {
                    let o = nodes[other].value.data();
                    if let Some(d) = slot(grads, nodes, i) {
                        for k in 0..d.len() {
                            d[k] += g[k] * o[k];
                        }
                    }
                }
            }
            &Op::Scale(a, s) => {
                if let Some(d) = slot(grads, nodes, a) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += s * g);
                }
            }
            &Op::Tanh(a) => {
                let y = node.value.data();
                if let Some(d) = slot(grads, nodes, a) {
                    for k in 0..d.len() {
                        d[k] += g[k] * (1.0 - y[k] * y[k]);
                    }
                }
            }
            &Op::Sigmoid(a) => {
                let y = node.value.data();
                if let Some(d) = slot(grads, nodes, a) {
                    for k in 0..d.len() {
                        d[k] += g[k] * y[k] * (1.0 - y[k]);
                    }
                }
            }
            &Op::Exp(a) => {
                let y = node.value.data();
                if let Some(d) = slot(grads, nodes, a) {
                    for k in 0..d.len() {
                        d[k] += g[k] * y[k];
                    }
                }
            }
            &Op::Square(a) => {
                let x = nodes[a].value.data();
                if let Some(d) = slot(grads, nodes, a) {
                    for k in 0..d.len() {
                        d[k] += 2.0 * g[k] * x[k];
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let (rows, cols) = node.value.dims2().expect("matrix");
                let mut offset = 0;
                for &p in parts {
                    let (pr, pc) = nodes[p].value.dims2().expect("matrix");
                    if let Some(d) = slot(grads, nodes, p) {
                        if *axis == 0 {
                            d.iter_mut()
                                .zip(&g[offset * cols..(offset + pr) * cols])
                                .for_each(|(d, g)| *d += g);
                        } else {
                            for r in 0..rows {
                                let src = &g[r * cols + offset..r * cols + offset + pc];
                                d[r * pc..(r + 1) * pc]
                                    .iter_mut()
                                    .zip(src)
                                    .for_each(|(d, g)| *d += g);
                            }
                        }
                    }
                    offset += if *axis == 0 { pr } else { pc };
                }
            }
            &Op::Slice { a, axis, start } => {
                let (_, cols) = nodes[a].value.dims2().expect("matrix");
                let (rows, len) = node.value.dims2().expect("matrix");
                if let Some(d) = slot(grads, nodes, a) {
                    if axis == 0 {
                        d[start * cols..(start + rows) * cols]
                            .iter_mut()
                            .zip(g)
                            .for_each(|(d, g)| *d += g);
                    } else {
                        for r in 0..rows {
                            let dst = &mut d[r * cols + start..r * cols + start + len];
                            dst.iter_mut()
                                .zip(&g[r * len..(r + 1) * len])
                                .for_each(|(d, g)| *d += g);
                        }
                    }
                }
            }
            &Op::Sum(a) => {
                if let Some(d) = slot(grads, nodes, a) {
                    d.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            &Op::Mean(a) => {
                let n = nodes[a].value.len().max(1) as f64;
                if let Some(d) = slot(grads, nodes, a) {
                    d.iter_mut().for_each(|d| *d += g[0] / n);
                }
            }
            Op::Gather { a, index } => {
                let (_, cols) = node.value.dims2().expect("matrix");
                if let Some(d) = slot(grads, nodes, *a) {
                    index.backward(g, cols, d);
                }
            }
            &Op::Reshape(a) => {
                if let Some(d) = slot(grads, nodes, a) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_neighbor_mean() {
        let idx =
            Arc::new(NeighborMean::from_lists(&[vec![1, 2], vec![0, 2], vec![0, 1]]).unwrap());
        let mut t = Tape::new();
        let x = t.constant(Tensor::matrix(3, 1, vec![1.0, 2.0, 3.0]).unwrap());
        let y = t.neighbor_mean(x, &idx).unwrap();
        assert_eq!(t.value(y).data(), &[2.5, 2.0, 1.5]);
        assert!(NeighborMean::from_lists(&[vec![], vec![0]]).is_err());
    }

    #[test]
    fn trivial_gradients() {
        let mut t = Tape::new();
        let x = t.input(Tensor::new(vec![4], vec![1.0, -2.0, 3.0, 0.5]).unwrap());
        let s = t.sum(x);
        assert_eq!(t.backward(s).unwrap().wrt(x).unwrap(), &[1.0; 4]);
        let sq = t.square(x);
        let m = t.mean(sq);
        let g = t.backward(m).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[0.5, -1.0, 1.5, 0.25]);
    }

    #[test]
    fn errors() {
        let mut t = Tape::new();
        let a = t.input(Tensor::zeros(&[2, 3]));
        let b = t.input(Tensor::zeros(&[2, 3]));
        assert!(t.matmul(a, b, false, false).is_err());
        assert!(t.matmul(a, b, false, true).is_ok());
        let c = t.constant(Tensor::zeros(&[3, 2]));
        assert!(t.add(a, c).is_err());
        assert!(t.backward(a).is_err());
        let k = t.sum(c);
        assert!(t.backward(k).is_err());
        assert!(t.slice(a, 1, 2, 2).is_err());
    }

    #[test]
    fn identity_matmul() {
        let mut t = Tape::new();
        let a = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let i = t.constant(Tensor::identity(2));
        let av = t.constant(a.clone());
        let r = t.matmul(i, av, false, false).unwrap();
        assert_eq!(t.value(r), &a);
        let th = t.tanh(i);
        assert_eq!(t.value(th).data()[1], 0.0);
    }
}
