//! Reverse-mode differentiation on a flat arena tape.
//!
//! A [`Graph`] owns every node; operations append nodes eagerly (forward
//! values are computed at build time) and return lightweight [`Var`] handles.
//! Because a node's parents always precede it in the arena, the arena order
//! is a topological order and cycles are unrepresentable; `backward` is a
//! single reverse sweep that visits each node exactly once.
//!
//! Graphs are single-shot: build, call [`Graph::backward`] once, read
//! gradients, drop. A second backward on the same graph is an error, which
//! catches training loops that forget to rebuild.

use crate::error::{Error, Result};
use crate::tensor::{self, Reduce, Tensor, ACOS_GUARD};

/// Handle to a node in one specific [`Graph`]. Handles are only meaningful
/// for the graph that created them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    Matmul(Var, Var),
    Transpose(Var),
    Relu(Var),
    Clamp(Var, f64, f64),
    Acos(Var),
    SumAll(Var),
    SumAxis(Var, Reduce),
    NormAxis(Var, Reduce),
    LseAxis(Var, Reduce),
    MaxAxis(Var, Reduce, Vec<usize>),
    MaxRowsExcluding(Var, Vec<usize>),
    DivBcast(Var, Var, Reduce),
    Gather(Var, Vec<usize>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddRow(..) => "add_row",
            Op::Matmul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Relu(..) => "relu",
            Op::Clamp(..) => "clamp",
            Op::Acos(..) => "acos",
            Op::SumAll(..) => "sum_all",
            Op::SumAxis(..) => "sum_axis",
            Op::NormAxis(..) => "norm_axis",
            Op::LseAxis(..) => "lse_axis",
            Op::MaxAxis(..) => "max_axis",
            Op::MaxRowsExcluding(..) => "max_rows_excluding",
            Op::DivBcast(..) => "div_bcast",
            Op::Gather(..) => "gather",
        }
    }
}

#[derive(Default)]
pub struct Graph {
    ops: Vec<Op>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
    backward_done: bool,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<Var> {
        tensor::ensure_finite(&value, op.name())?;
        let grad = Tensor::zeros(value.shape().to_vec());
        self.ops.push(op);
        self.values.push(value);
        self.grads.push(grad);
        Ok(Var(self.values.len() - 1))
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    /// Forward value of a node.
    pub fn value(&self, v: Var) -> &Tensor {
        self.val(v)
    }

    /// Gradient buffer of a node (zeros before `backward`).
    pub fn grad(&self, v: Var) -> &Tensor {
        &self.grads[v.0]
    }

    /// Insert an input node. Leaves with gradients read back after
    /// `backward` are parameters; everything else is just data.
    pub fn leaf(&mut self, t: Tensor) -> Result<Var> {
        self.push(Op::Leaf, t)
    }

    pub fn scalar(&mut self, v: f64) -> Result<Var> {
        self.push(Op::Leaf, Tensor::scalar(v))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::add(self.val(a), self.val(b))?;
        self.push(Op::Add(a, b), out)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::sub(self.val(a), self.val(b))?;
        self.push(Op::Sub(a, b), out)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::mul(self.val(a), self.val(b))?;
        self.push(Op::Mul(a, b), out)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = tensor::scale(self.val(a), c);
        self.push(Op::Scale(a, c), out)
    }

    /// Broadcast-add a rank-1 bias onto every row of a rank-2 tensor.
    pub fn add_row(&mut self, a: Var, v: Var) -> Result<Var> {
        let out = tensor::add_row(self.val(a), self.val(v))?;
        self.push(Op::AddRow(a, v), out)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.val(a), self.val(b))?;
        self.push(Op::Matmul(a, b), out)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = tensor::transpose(self.val(a))?;
        self.push(Op::Transpose(a), out)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = tensor::relu(self.val(a));
        self.push(Op::Relu(a), out)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::invalid(format!("invalid clamp bounds [{lo}, {hi}]")));
        }
        let out = tensor::clamp(self.val(a), lo, hi);
        self.push(Op::Clamp(a, lo, hi), out)
    }

    /// Elementwise arccos. The input is clamped to
    /// `[-1 + ACOS_GUARD, 1 - ACOS_GUARD]` and the derivative is evaluated at
    /// the clamped value, so gradient still flows for inputs at or past the
    /// endpoints.
    pub fn acos(&mut self, a: Var) -> Result<Var> {
        let out = tensor::acos_clamped(self.val(a));
        self.push(Op::Acos(a), out)
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(tensor::sum_all(self.val(a)));
        self.push(Op::SumAll(a), out)
    }

    /// Mean over all elements: sum followed by a 1/n scale.
    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = self.val(a).len();
        if n == 0 {
            return Err(Error::invalid("mean of an empty tensor"));
        }
        let s = self.sum_all(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    pub fn sum_axis(&mut self, a: Var, per: Reduce) -> Result<Var> {
        let out = tensor::sum_axis(self.val(a), per);
        self.push(Op::SumAxis(a, per), out)
    }

    pub fn norm_axis(&mut self, a: Var, per: Reduce) -> Result<Var> {
        let out = tensor::norm_axis(self.val(a), per);
        self.push(Op::NormAxis(a, per), out)
    }

    pub fn lse_axis(&mut self, a: Var, per: Reduce) -> Result<Var> {
        let out = tensor::lse_axis(self.val(a), per);
        self.push(Op::LseAxis(a, per), out)
    }

    /// Max along an axis; gradient flows to the lowest-index maximizer only.
    pub fn max_axis(&mut self, a: Var, per: Reduce) -> Result<Var> {
        let (out, arg) = tensor::max_axis(self.val(a), per);
        self.push(Op::MaxAxis(a, per, arg), out)
    }

    /// Per-row max over columns skipping `exclude[i]` in row `i`.
    pub fn max_rows_excluding(&mut self, a: Var, exclude: Vec<usize>) -> Result<Var> {
        let (out, arg) = tensor::max_rows_excluding(self.val(a), &exclude)?;
        self.push(Op::MaxRowsExcluding(a, arg), out)
    }

    /// Divide rows (PerRow) or columns (PerCol) of `a` by entries of `v`.
    pub fn div_bcast(&mut self, a: Var, v: Var, per: Reduce) -> Result<Var> {
        let out = tensor::div_bcast(self.val(a), self.val(v), per)?;
        self.push(Op::DivBcast(a, v, per), out)
    }

    /// Pick `a[i, idx[i]]` per row.
    pub fn gather(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let out = tensor::gather_rows(self.val(a), &idx)?;
        self.push(Op::Gather(a, idx), out)
    }

    /// Reverse sweep populating gradients of every node reachable from
    /// `loss`; unreachable nodes keep zero gradients. Errors if `loss` is not
    /// scalar or if this graph was already swept.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardConsumed);
        }
        if !self.values[loss.0].is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: self.values[loss.0].shape().to_vec(),
            });
        }
        self.backward_done = true;
        self.grads[loss.0].data_mut()[0] = 1.0;

        // Parents always precede children, so one descending pass suffices.
        for i in (0..=loss.0).rev() {
            if self.grads[i].data().iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = self.grads[i].clone();
            self.propagate(i, &g);
        }
        Ok(())
    }

    /// Accumulate the upstream gradient `g` of node `i` into its parents.
    fn propagate(&mut self, i: usize, g: &Tensor) {
        // `ops` and `values` are read-only here while `grads` is mutated;
        // the two-vector layout keeps the borrows disjoint.
        match &self.ops[i] {
            Op::Leaf => {}
            &Op::Add(a, b) => {
                accumulate(&mut self.grads[a.0], g.data());
                accumulate(&mut self.grads[b.0], g.data());
            }
            &Op::Sub(a, b) => {
                accumulate(&mut self.grads[a.0], g.data());
                for (dst, &gv) in self.grads[b.0].data_mut().iter_mut().zip(g.data()) {
                    *dst -= gv;
                }
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.values[a.0].clone(), self.values[b.0].clone());
                for ((dst, &gv), &bvv) in self.grads[a.0]
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(bv.data())
                {
                    *dst += gv * bvv;
                }
                for ((dst, &gv), &avv) in self.grads[b.0]
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(av.data())
                {
                    *dst += gv * avv;
                }
            }
            &Op::Scale(a, c) => {
                for (dst, &gv) in self.grads[a.0].data_mut().iter_mut().zip(g.data()) {
                    *dst += c * gv;
                }
            }
            &Op::AddRow(a, v) => {
                accumulate(&mut self.grads[a.0], g.data());
                let (r, c) = g.dims2();
                let gv = self.grads[v.0].data_mut();
                debug_assert_eq!(gv.len(), c);
                for i in 0..r {
                    for (j, dst) in gv.iter_mut().enumerate() {
                        *dst += g.get2(i, j);
                    }
                }
            }
            &Op::Matmul(a, b) => {
                let bv_t = tensor::transpose(&self.values[b.0]).expect("validated at build");
                let ga = tensor::matmul(g, &bv_t).expect("validated at build");
                accumulate(&mut self.grads[a.0], ga.data());
                let av_t = tensor::transpose(&self.values[a.0]).expect("validated at build");
                let gb = tensor::matmul(&av_t, g).expect("validated at build");
                accumulate(&mut self.grads[b.0], gb.data());
            }
            &Op::Transpose(a) => {
                let gt = tensor::transpose(g).expect("validated at build");
                accumulate(&mut self.grads[a.0], gt.data());
            }
            &Op::Relu(a) => {
                let av = self.values[a.0].clone();
                for ((dst, &gv), &x) in self.grads[a.0]
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(av.data())
                {
                    // Subgradient 0 at exactly 0.
                    if x > 0.0 {
                        *dst += gv;
                    }
                }
            }
            &Op::Clamp(a, lo, hi) => {
                let av = self.values[a.0].clone();
                for ((dst, &gv), &x) in self.grads[a.0]
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(av.data())
                {
                    if x >= lo && x <= hi {
                        *dst += gv;
                    }
                }
            }
            &Op::Acos(a) => {
                let av = self.values[a.0].clone();
                let (lo, hi) = (-1.0 + ACOS_GUARD, 1.0 - ACOS_GUARD);
                for ((dst, &gv), &x) in self.grads[a.0]
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(av.data())
                {
                    if gv != 0.0 {
                        let u = x.clamp(lo, hi);
                        *dst += gv * (-1.0 / (1.0 - u * u).sqrt());
                    }
                }
            }
            &Op::SumAll(a) => {
                let gs = g.item();
                for dst in self.grads[a.0].data_mut() {
                    *dst += gs;
                }
            }
            &Op::SumAxis(a, per) => {
                let (r, c) = self.values[a.0].dims2();
                let ga = self.grads[a.0].data_mut();
                for i in 0..r {
                    for j in 0..c {
                        let group = match per {
                            Reduce::PerRow => i,
                            Reduce::PerCol => j,
                        };
                        ga[i * c + j] += g.data()[group];
                    }
                }
            }
            &Op::NormAxis(a, per) => {
                let av = self.values[a.0].clone();
                let norms = self.values[i].clone();
                let (r, c) = av.dims2();
                let ga = self.grads[a.0].data_mut();
                for ri in 0..r {
                    for cj in 0..c {
                        let group = match per {
                            Reduce::PerRow => ri,
                            Reduce::PerCol => cj,
                        };
                        let gv = g.data()[group];
                        let n = norms.data()[group];
                        // Subgradient 0 at the (all-zero) kink.
                        if gv != 0.0 && n != 0.0 {
                            ga[ri * c + cj] += gv * av.get2(ri, cj) / n;
                        }
                    }
                }
            }
            &Op::LseAxis(a, per) => {
                let av = self.values[a.0].clone();
                let lse = self.values[i].clone();
                let (r, c) = av.dims2();
                let ga = self.grads[a.0].data_mut();
                for ri in 0..r {
                    for cj in 0..c {
                        let group = match per {
                            Reduce::PerRow => ri,
                            Reduce::PerCol => cj,
                        };
                        let gv = g.data()[group];
                        if gv != 0.0 {
                            ga[ri * c + cj] += gv * (av.get2(ri, cj) - lse.data()[group]).exp();
                        }
                    }
                }
            }
            Op::MaxAxis(a, per, arg) => {
                let a = *a;
                let (_, c) = self.values[a.0].dims2();
                let per = *per;
                let arg = arg.clone();
                let ga = self.grads[a.0].data_mut();
                for (group, &k) in arg.iter().enumerate() {
                    let (ri, cj) = match per {
                        Reduce::PerRow => (group, k),
                        Reduce::PerCol => (k, group),
                    };
                    ga[ri * c + cj] += g.data()[group];
                }
            }
            Op::MaxRowsExcluding(a, arg) => {
                let a = *a;
                let (_, c) = self.values[a.0].dims2();
                let arg = arg.clone();
                let ga = self.grads[a.0].data_mut();
                for (ri, &cj) in arg.iter().enumerate() {
                    ga[ri * c + cj] += g.data()[ri];
                }
            }
            &Op::DivBcast(a, v, per) => {
                let out = self.values[i].clone();
                let denom = self.values[v.0].clone();
                let (r, c) = out.dims2();
                {
                    let ga = self.grads[a.0].data_mut();
                    for ri in 0..r {
                        for cj in 0..c {
                            let group = match per {
                                Reduce::PerRow => ri,
                                Reduce::PerCol => cj,
                            };
                            let gv = g.get2(ri, cj);
                            if gv != 0.0 {
                                ga[ri * c + cj] += gv / denom.data()[group];
                            }
                        }
                    }
                }
                let gv_buf = self.grads[v.0].data_mut();
                for ri in 0..r {
                    for cj in 0..c {
                        let group = match per {
                            Reduce::PerRow => ri,
                            Reduce::PerCol => cj,
                        };
                        let gvu = g.get2(ri, cj);
                        if gvu != 0.0 {
                            gv_buf[group] -= gvu * out.get2(ri, cj) / denom.data()[group];
                        }
                    }
                }
            }
            Op::Gather(a, idx) => {
                let a = *a;
                let (_, c) = self.values[a.0].dims2();
                let idx = idx.clone();
                let ga = self.grads[a.0].data_mut();
                for (ri, &cj) in idx.iter().enumerate() {
                    ga[ri * c + cj] += g.data()[ri];
                }
            }
        }
    }
}

fn accumulate(dst: &mut Tensor, src: &[f64]) {
    for (d, &s) in dst.data_mut().iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn square_sum_gradient_is_2x() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0, 3.0])).unwrap();
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum_all(sq).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn acos_gradient_at_zero_is_minus_one() {
        let mut g = Graph::new();
        let u = g.leaf(Tensor::scalar(0.0)).unwrap();
        let a = g.acos(u).unwrap();
        g.backward(a).unwrap();
        assert_close(g.grad(u).item(), -1.0, 1e-15);
    }

    #[test]
    fn acos_gradient_flows_at_the_clamp_boundary() {
        let mut g = Graph::new();
        let u = g.leaf(Tensor::scalar(1.0)).unwrap();
        let a = g.acos(u).unwrap();
        g.backward(a).unwrap();
        let expected = -1.0 / (1.0 - (1.0 - ACOS_GUARD) * (1.0 - ACOS_GUARD)).sqrt();
        assert_close(g.grad(u).item(), expected, 1e-6);
    }

    #[test]
    fn max_tie_gradient_goes_to_lowest_index() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![2.0, 5.0, 5.0])).unwrap();
        let m = g.max_axis(x, Reduce::PerRow).unwrap();
        let loss = g.sum_all(m).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn double_backward_is_an_error() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(2.0)).unwrap();
        let loss = g.mul(x, x).unwrap();
        g.backward(loss).unwrap();
        let err = g.backward(loss).unwrap_err();
        assert!(matches!(err, Error::BackwardConsumed));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let err = g.backward(x).unwrap_err();
        assert!(matches!(err, Error::NonScalarLoss { .. }));
    }

    #[test]
    fn unreachable_leaf_keeps_zero_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0)).unwrap();
        let unused = g.leaf(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let loss = g.mul(x, x).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(unused).data(), &[0.0, 0.0]);
        assert_close(g.grad(x).item(), 6.0, 1e-15);
    }

    #[test]
    fn non_finite_leaf_is_rejected() {
        let mut g = Graph::new();
        let err = g.leaf(Tensor::scalar(f64::NAN)).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn matmul_gradients_match_hand_computation() {
        // loss = sum(A B), dA = 1 B^T, dB = A^T 1.
        let mut g = Graph::new();
        let a = g
            .leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap())
            .unwrap();
        let b = g
            .leaf(Tensor::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap())
            .unwrap();
        let p = g.matmul(a, b).unwrap();
        let loss = g.sum_all(p).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(a).data(), &[11.0, 15.0, 11.0, 15.0]);
        assert_eq!(g.grad(b).data(), &[4.0, 4.0, 6.0, 6.0]);
    }

    #[test]
    fn lse_gradient_is_softmax() {
        let mut g = Graph::new();
        let x = g
            .leaf(Tensor::from_rows(&[vec![1.0, -1.0]]).unwrap())
            .unwrap();
        let l = g.lse_axis(x, Reduce::PerRow).unwrap();
        let loss = g.sum_all(l).unwrap();
        g.backward(loss).unwrap();
        // Frozen softmax(1, -1) to 1e-12.
        assert_close(g.grad(x).data()[0], 0.8807970779778824, 1e-12);
        assert_close(g.grad(x).data()[1], 0.11920292202211756, 1e-12);
    }

    #[test]
    fn div_bcast_normalizes_rows_and_backpropagates() {
        // Row normalization via norm + div; gradient of sum of row-normalized
        // entries of a 1x2 row (3,4): d/dx [ (x/||x||) . 1 ] = (I - u u^T)/||x|| . 1
        let mut g = Graph::new();
        let x = g
            .leaf(Tensor::from_rows(&[vec![3.0, 4.0]]).unwrap())
            .unwrap();
        let n = g.norm_axis(x, Reduce::PerRow).unwrap();
        let u = g.div_bcast(x, n, Reduce::PerRow).unwrap();
        assert_eq!(g.value(u).data(), &[0.6, 0.8]);
        let loss = g.sum_all(u).unwrap();
        g.backward(loss).unwrap();
        // Analytic: ((1 - 0.36 - 0.48)/5, (1 - 0.48 - 0.64)/5) = (0.032, -0.024)
        assert_close(g.grad(x).data()[0], 0.032, 1e-12);
        assert_close(g.grad(x).data()[1], -0.024, 1e-12);
    }
}
