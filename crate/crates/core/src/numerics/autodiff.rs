//! Dynamic reverse-mode tape over dense 2-D tensors.
//!
//! Every value is an `Array2<f64>`; scalars are `1×1`. Rows index the batch
//! and columns index features, so a per-sample quantity is a `B×1` column.
//! Binary operations co-broadcast like NumPy (`B×1 ⊙ 1×K → B×K`) and the
//! backward pass sums gradients back down to each operand's shape.
//!
//! A tape lives in one thread. Independent tapes can run concurrently.

use std::cell::RefCell;
use std::rc::Rc;

use ndarray::{s, Array2, Axis, Zip};

use crate::error::{Error, Result};
use crate::numerics::special;

pub type Tensor = Array2<f64>;

type BackwardFn = Box<dyn Fn(&Tensor) -> Vec<Tensor>>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
    op: &'static str,
}

struct TapeInner {
    nodes: Vec<Node>,
    record: bool,
}

/// Recording context for differentiable computations.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_recording(true)
    }

    /// A tape that computes values only. Calling [`Tape::gradients`] on it
    /// returns zero gradients.
    pub fn no_grad() -> Self {
        Self::with_recording(false)
    }

    fn with_recording(record: bool) -> Self {
        Self {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                record,
            })),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.inner.borrow().record
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable leaf.
    pub fn var(&self, value: Tensor) -> Var {
        self.push_leaf(value, true, "var")
    }

    /// A leaf that never receives gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push_leaf(value, false, "const")
    }

    pub fn scalar(&self, value: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), value))
    }

    pub fn scalar_var(&self, value: f64) -> Var {
        self.var(Array2::from_elem((1, 1), value))
    }

    /// Column vector constant from a slice (`n×1`).
    pub fn column(&self, values: &[f64]) -> Var {
        self.constant(Array2::from_shape_vec((values.len(), 1), values.to_vec()).unwrap())
    }

    /// Row vector constant from a slice (`1×n`).
    pub fn row(&self, values: &[f64]) -> Var {
        self.constant(Array2::from_shape_vec((1, values.len()), values.to_vec()).unwrap())
    }

    fn push_leaf(&self, value: Tensor, requires_grad: bool, op: &'static str) -> Var {
        let value = Rc::new(value);
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            value: value.clone(),
            parents: Vec::new(),
            backward: None,
            requires_grad,
            op,
        });
        Var {
            tape: self.clone(),
            id,
            value,
        }
    }

    fn push_op<F>(&self, value: Tensor, op: &'static str, parents: &[&Var], backward: F) -> Var
    where
        F: Fn(&Tensor) -> Vec<Tensor> + 'static,
    {
        let value = Rc::new(value);
        let mut inner = self.inner.borrow_mut();
        let requires_grad = inner.record && parents.iter().any(|p| inner.nodes[p.id].requires_grad);
        let id = inner.nodes.len();
        let (parents, backward): (Vec<usize>, Option<BackwardFn>) = if requires_grad {
            (parents.iter().map(|p| p.id).collect(), Some(Box::new(backward)))
        } else {
            (Vec::new(), None)
        };
        inner.nodes.push(Node {
            value: value.clone(),
            parents,
            backward,
            requires_grad,
            op,
        });
        Var {
            tape: self.clone(),
            id,
            value,
        }
    }

    /// Reverse sweep from `output` (any shape; seeded with ones).
    /// Returns the gradient of `sum(output)` with respect to each of `wrt`,
    /// zero-filled where no path exists.
    pub fn gradients(&self, output: &Var, wrt: &[Var]) -> Vec<Tensor> {
        let inner = self.inner.borrow();
        let n = output.id + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        let keep: Vec<bool> = {
            let mut k = vec![false; n];
            for w in wrt {
                if w.id < n {
                    k[w.id] = true;
                }
            }
            k
        };
        if inner.nodes[output.id].requires_grad {
            grads[output.id] = Some(Array2::ones(output.value.raw_dim()));
        }
        for id in (0..n).rev() {
            let node = &inner.nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let g = if keep[id] {
                grads[id].clone()
            } else {
                grads[id].take()
            };
            let Some(g) = g else { continue };
            let parent_grads = backward(&g);
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                if !inner.nodes[p].requires_grad {
                    continue;
                }
                let pg = unbroadcast(pg, inner.nodes[p].value.dim());
                match grads[p].as_mut() {
                    Some(acc) => *acc += &pg,
                    None => grads[p] = Some(pg),
                }
            }
        }
        wrt.iter()
            .map(|w| {
                if w.id < n {
                    grads[w.id]
                        .clone()
                        .unwrap_or_else(|| Array2::zeros(w.value.raw_dim()))
                } else {
                    Array2::zeros(w.value.raw_dim())
                }
            })
            .collect()
    }

    /// First node (in recording order) holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        let inner = self.inner.borrow();
        inner
            .nodes
            .iter()
            .enumerate()
            .find(|(_, n)| n.value.iter().any(|v| !v.is_finite()))
            .map(|(i, n)| (i, n.op))
    }
}

/// `∂loss/∂p` for each `p` in `params`. A non-finite loss is reported with
/// the first non-finite node on the tape.
pub fn compute_gradients(loss: &Var, params: &[Var]) -> Result<Vec<Tensor>> {
    if loss.value.iter().any(|v| !v.is_finite()) {
        let (node, op) = loss
            .tape
            .first_non_finite()
            .unwrap_or((loss.id, "unknown"));
        return Err(Error::NonFiniteLoss { node, op });
    }
    Ok(loss.tape.gradients(loss, params))
}

fn unbroadcast(g: Tensor, shape: (usize, usize)) -> Tensor {
    if g.dim() == shape {
        return g;
    }
    let mut g = g;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    debug_assert_eq!(g.dim(), shape);
    g
}

fn broadcast_dim(a: (usize, usize), b: (usize, usize)) -> (usize, usize) {
    let pick = |x: usize, y: usize| {
        if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            panic!("incompatible shapes {a:?} and {b:?}")
        }
    };
    (pick(a.0, b.0), pick(a.1, b.1))
}

fn zip_broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let dim = broadcast_dim(a.dim(), b.dim());
    let av = a.broadcast(dim).expect("broadcast");
    let bv = b.broadcast(dim).expect("broadcast");
    Zip::from(&av).and(&bv).map_collect(|&x, &y| f(x, y))
}

/// A value on a [`Tape`].
#[derive(Clone)]
pub struct Var {
    tape: Tape,
    id: usize,
    value: Rc<Tensor>,
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("value", &*self.value)
            .finish()
    }
}

/// A `1×1` [`Var`].
pub type DiffScalar = Var;

impl Var {
    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shared_value(&self) -> Rc<Tensor> {
        self.value.clone()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.value.dim()
    }

    pub fn rows(&self) -> usize {
        self.value.nrows()
    }

    pub fn cols(&self) -> usize {
        self.value.ncols()
    }

    /// Value of a `1×1` var.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.dim(), (1, 1));
        self.value[[0, 0]]
    }

    pub fn is_finite(&self) -> bool {
        self.value.iter().all(|v| v.is_finite())
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var {
        self.tape.constant((*self.value).clone())
    }

    fn unary(
        &self,
        op: &'static str,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var {
        let y = self.value.mapv(f);
        let x = self.value.clone();
        let yv = Rc::new(y.clone());
        self.tape.push_op(y, op, &[self], move |g| {
            let mut out = g.clone();
            Zip::from(&mut out)
                .and(&*x)
                .and(&*yv)
                .for_each(|o, &xi, &yi| *o *= df(xi, yi));
            vec![out]
        })
    }

    pub fn neg(&self) -> Var {
        self.tape
            .push_op(self.value.mapv(|v| -v), "neg", &[self], |g| vec![-g])
    }

    pub fn exp(&self) -> Var {
        self.unary("exp", f64::exp, |_, y| y)
    }

    pub fn ln(&self) -> Var {
        self.unary("ln", f64::ln, |x, _| 1.0 / x)
    }

    pub fn tanh(&self) -> Var {
        self.unary("tanh", f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&self) -> Var {
        self.unary("sigmoid", special::sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn softplus(&self) -> Var {
        self.unary("softplus", special::softplus, |x, _| special::sigmoid(x))
    }

    pub fn relu(&self) -> Var {
        self.unary("relu", |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn square(&self) -> Var {
        self.unary("square", |v| v * v, |x, _| 2.0 * x)
    }

    pub fn sqrt(&self) -> Var {
        self.unary("sqrt", f64::sqrt, |_, y| 0.5 / y)
    }

    /// Standard normal CDF, elementwise.
    pub fn normal_cdf(&self) -> Var {
        self.unary("normal_cdf", special::std_normal_cdf, |x, _| {
            special::std_normal_pdf(x)
        })
    }

    /// Standard normal quantile, elementwise. Inputs are clamped to
    /// `[QUANTILE_EPS, 1 - QUANTILE_EPS]` first and the clamp has zero gradient.
    pub fn normal_quantile(&self) -> Var {
        let eps = special::QUANTILE_EPS;
        self.unary("normal_quantile", special::std_normal_quantile_clamped, move |u, y| {
            if u < eps || 1.0 - u < eps {
                0.0
            } else {
                1.0 / special::std_normal_pdf(y)
            }
        })
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Var {
        self.unary(
            "clamp",
            move |v| v.clamp(lo, hi),
            move |x, _| if x < lo || x > hi { 0.0 } else { 1.0 },
        )
    }

    pub fn add_scalar(&self, c: f64) -> Var {
        self.tape
            .push_op(self.value.mapv(|v| v + c), "add_scalar", &[self], |g| {
                vec![g.clone()]
            })
    }

    pub fn mul_scalar(&self, c: f64) -> Var {
        self.tape
            .push_op(self.value.mapv(|v| v * c), "mul_scalar", &[self], move |g| {
                vec![g * c]
            })
    }

    /// `c - self`.
    pub fn rsub_scalar(&self, c: f64) -> Var {
        self.tape
            .push_op(self.value.mapv(|v| c - v), "rsub_scalar", &[self], |g| {
                vec![-g]
            })
    }

    pub fn add(&self, other: &Var) -> Var {
        let y = zip_broadcast(&self.value, &other.value, |a, b| a + b);
        self.tape
            .push_op(y, "add", &[self, other], |g| vec![g.clone(), g.clone()])
    }

    pub fn sub(&self, other: &Var) -> Var {
        let y = zip_broadcast(&self.value, &other.value, |a, b| a - b);
        self.tape
            .push_op(y, "sub", &[self, other], |g| vec![g.clone(), -g])
    }

    pub fn mul(&self, other: &Var) -> Var {
        let y = zip_broadcast(&self.value, &other.value, |a, b| a * b);
        let a = self.value.clone();
        let b = other.value.clone();
        self.tape.push_op(y, "mul", &[self, other], move |g| {
            vec![zip_broadcast(g, &b, |g, b| g * b), zip_broadcast(g, &a, |g, a| g * a)]
        })
    }

    pub fn div(&self, other: &Var) -> Var {
        let y = zip_broadcast(&self.value, &other.value, |a, b| a / b);
        let b = other.value.clone();
        let yv = Rc::new(y.clone());
        self.tape.push_op(y, "div", &[self, other], move |g| {
            let ga = zip_broadcast(g, &b, |g, b| g / b);
            let gb = zip_broadcast(&zip_broadcast(g, &yv, |g, y| -g * y), &b, |t, b| t / b);
            vec![ga, gb]
        })
    }

    /// Matrix product `self · other`.
    pub fn matmul(&self, other: &Var) -> Var {
        let y = self.value.dot(&*other.value);
        let a = self.value.clone();
        let b = other.value.clone();
        self.tape.push_op(y, "matmul", &[self, other], move |g| {
            vec![g.dot(&b.t()), a.t().dot(g)]
        })
    }

    /// Sum of all entries (`1×1`).
    pub fn sum(&self) -> Var {
        let dim = self.value.raw_dim();
        let y = Array2::from_elem((1, 1), self.value.sum());
        self.tape.push_op(y, "sum", &[self], move |g| {
            vec![Array2::from_elem(dim, g[[0, 0]])]
        })
    }

    pub fn mean(&self) -> Var {
        let n = self.value.len() as f64;
        self.sum().mul_scalar(1.0 / n)
    }

    /// Row sums (`B×n → B×1`).
    pub fn sum_cols(&self) -> Var {
        let cols = self.cols();
        let y = self.value.sum_axis(Axis(1)).insert_axis(Axis(1));
        self.tape.push_op(y, "sum_cols", &[self], move |g| {
            vec![g.broadcast((g.nrows(), cols)).unwrap().to_owned()]
        })
    }

    /// Column sums (`B×n → 1×n`).
    pub fn sum_rows(&self) -> Var {
        let rows = self.rows();
        let y = self.value.sum_axis(Axis(0)).insert_axis(Axis(0));
        self.tape.push_op(y, "sum_rows", &[self], move |g| {
            vec![g.broadcast((rows, g.ncols())).unwrap().to_owned()]
        })
    }

    /// Columns `start..end`.
    pub fn slice_cols(&self, start: usize, end: usize) -> Var {
        let dim = self.value.raw_dim();
        let y = self.value.slice(s![.., start..end]).to_owned();
        self.tape.push_op(y, "slice_cols", &[self], move |g| {
            let mut out = Array2::zeros(dim);
            out.slice_mut(s![.., start..end]).assign(g);
            vec![out]
        })
    }

    pub fn col(&self, j: usize) -> Var {
        self.slice_cols(j, j + 1)
    }

    /// Rows `start..end`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Var {
        let dim = self.value.raw_dim();
        let y = self.value.slice(s![start..end, ..]).to_owned();
        self.tape.push_op(y, "slice_rows", &[self], move |g| {
            let mut out = Array2::zeros(dim);
            out.slice_mut(s![start..end, ..]).assign(g);
            vec![out]
        })
    }

    /// Gathers columns by index (`y[:, i] = x[:, idx[i]]`).
    pub fn gather_cols(&self, idx: &[usize]) -> Var {
        let rows = self.rows();
        let cols = self.cols();
        let mut y = Array2::zeros((rows, idx.len()));
        for (dst, &src) in idx.iter().enumerate() {
            y.column_mut(dst).assign(&self.value.column(src));
        }
        let idx = idx.to_vec();
        self.tape.push_op(y, "gather_cols", &[self], move |g| {
            let mut out = Array2::zeros((g.nrows(), cols));
            for (dst, &src) in idx.iter().enumerate() {
                let mut c = out.column_mut(src);
                c += &g.column(dst);
            }
            vec![out]
        })
    }

    /// Log-sum-exp over each row (`B×K → B×1`).
    pub fn logsumexp_cols(&self) -> Var {
        let x = self.value.clone();
        let mut y = Array2::zeros((x.nrows(), 1));
        for (r, row) in x.rows().into_iter().enumerate() {
            y[[r, 0]] = special::logsumexp(row.iter().copied());
        }
        let yv = Rc::new(y.clone());
        self.tape.push_op(y, "logsumexp_cols", &[self], move |g| {
            let mut out = (*x).clone();
            for (r, mut row) in out.rows_mut().into_iter().enumerate() {
                let m = yv[[r, 0]];
                let gr = g[[r, 0]];
                row.mapv_inplace(|v| gr * (v - m).exp());
            }
            vec![out]
        })
    }

    /// Elementwise choice: `mask ? self : other` (shapes must match).
    pub fn select(&self, mask: &Array2<bool>, other: &Var) -> Var {
        assert_eq!(self.dim(), other.dim());
        let y = Zip::from(mask)
            .and(&*self.value)
            .and(&*other.value)
            .map_collect(|&m, &a, &b| if m { a } else { b });
        let m = Rc::new(mask.clone());
        self.tape.push_op(y, "select", &[self, other], move |g| {
            let ga = Zip::from(g).and(&*m).map_collect(|&g, &m| if m { g } else { 0.0 });
            let gb = Zip::from(g).and(&*m).map_collect(|&g, &m| if m { 0.0 } else { g });
            vec![ga, gb]
        })
    }

    /// Log-density of `N(mean, std²)` at `self`, elementwise (broadcasting).
    pub fn normal_log_pdf(&self, mean: &Var, std: &Var) -> Var {
        let z = self.sub(mean).div(std);
        z.square()
            .mul_scalar(-0.5)
            .sub(&std.ln())
            .add_scalar(-special::HALF_LN_2PI)
    }
}

/// Concatenates along columns. All inputs must share the row count.
pub fn concat_cols(parts: &[Var]) -> Var {
    assert!(!parts.is_empty(), "concat of nothing");
    let tape = parts[0].tape.clone();
    let rows = parts.iter().map(|p| p.rows()).max().unwrap();
    let widths: Vec<usize> = parts.iter().map(|p| p.cols()).collect();
    let total: usize = widths.iter().sum();
    let mut y = Array2::zeros((rows, total));
    let mut off = 0;
    for p in parts {
        let w = p.cols();
        y.slice_mut(s![.., off..off + w])
            .assign(&p.value.broadcast((rows, w)).expect("row broadcast"));
        off += w;
    }
    let refs: Vec<&Var> = parts.iter().collect();
    tape.push_op(y, "concat_cols", &refs, move |g| {
        let mut out = Vec::with_capacity(widths.len());
        let mut off = 0;
        for &w in &widths {
            out.push(g.slice(s![.., off..off + w]).to_owned());
            off += w;
        }
        out
    })
}

macro_rules! impl_binop {
    ($trait:ident, $method:ident, $call:ident) => {
        impl std::ops::$trait<&Var> for &Var {
            type Output = Var;
            fn $method(self, rhs: &Var) -> Var {
                self.$call(rhs)
            }
        }
        impl std::ops::$trait<Var> for Var {
            type Output = Var;
            fn $method(self, rhs: Var) -> Var {
                (&self).$call(&rhs)
            }
        }
        impl std::ops::$trait<&Var> for Var {
            type Output = Var;
            fn $method(self, rhs: &Var) -> Var {
                (&self).$call(rhs)
            }
        }
    };
}

impl_binop!(Add, add, add);
impl_binop!(Sub, sub, sub);
impl_binop!(Mul, mul, mul);
impl_binop!(Div, div, div);

impl std::ops::Neg for &Var {
    type Output = Var;
    fn neg(self) -> Var {
        Var::neg(self)
    }
}

impl std::ops::Neg for Var {
    type Output = Var;
    fn neg(self) -> Var {
        Var::neg(&self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn fd_scalar(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let p = tape.scalar_var(3.0);
        let loss = p.square();
        let g = compute_gradients(&loss, &[p]).unwrap();
        assert_eq!(g[0][[0, 0]], 6.0);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let tape = Tape::new();
        let p = tape.scalar_var(3.0);
        let c = tape.scalar(7.0);
        let loss = c.mul_scalar(2.0);
        let g = compute_gradients(&loss, &[p]).unwrap();
        assert_eq!(g[0][[0, 0]], 0.0);
    }

    #[test]
    fn gaussian_nll_gradient_in_mean() {
        // loss = log σ + (x − μ)²/(2σ²)
        let loss_f = |mu: f64| {
            let (x, sigma): (f64, f64) = (1.0, 1.0);
            sigma.ln() + (x - mu).powi(2) / (2.0 * sigma * sigma)
        };
        let tape = Tape::new();
        let mu = tape.scalar_var(0.0);
        let sigma = tape.scalar_var(1.0);
        let x = tape.scalar(1.0);
        let r = x.sub(&mu);
        let loss = sigma.ln() + r.square().div(&sigma.square().mul_scalar(2.0));
        let g = compute_gradients(&loss, &[mu.clone(), sigma]).unwrap();
        let fd = fd_scalar(loss_f, 0.0);
        assert!((g[0][[0, 0]] - (-1.0)).abs() < 1e-12);
        assert!((g[0][[0, 0]] - fd).abs() / fd.abs().max(1.0) < 1e-6);
    }

    #[test]
    fn non_finite_loss_names_node() {
        let tape = Tape::new();
        let p = tape.scalar_var(-1.0);
        let bad = p.ln();
        let loss = bad.mul_scalar(2.0);
        match compute_gradients(&loss, &[p]) {
            Err(Error::NonFiniteLoss { op, .. }) => assert_eq!(op, "ln"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn broadcasting_reduces_gradients() {
        let tape = Tape::new();
        let a = tape.var(array![[1.0], [2.0], [3.0]]); // 3×1
        let b = tape.var(array![[10.0, 20.0]]); // 1×2
        let y = a.mul(&b).sum();
        assert_eq!(y.item(), 6.0 * 30.0);
        let g = compute_gradients(&y, &[a, b]).unwrap();
        assert_eq!(g[0], array![[30.0], [30.0], [30.0]]);
        assert_eq!(g[1], array![[6.0, 6.0]]);
    }

    #[test]
    fn matmul_and_slices() {
        let tape = Tape::new();
        let x = tape.var(array![[1.0, 2.0], [3.0, 4.0]]);
        let w = tape.var(array![[0.5, -1.0, 2.0], [1.5, 0.0, -0.5]]);
        let y = x.matmul(&w);
        let z = concat_cols(&[y.col(2), y.slice_cols(0, 2).tanh()]).sum();
        let g = compute_gradients(&z, &[x.clone(), w.clone()]).unwrap();
        // finite-difference one entry of w
        let eval = |dw: f64| {
            let t = Tape::no_grad();
            let mut wv = w.value().clone();
            wv[[1, 0]] += dw;
            let y = t.constant(x.value().clone()).matmul(&t.constant(wv));
            concat_cols(&[y.col(2), y.slice_cols(0, 2).tanh()]).sum().item()
        };
        let fd = (eval(1e-6) - eval(-1e-6)) / 2e-6;
        assert!((g[1][[1, 0]] - fd).abs() < 1e-7);
    }

    #[test]
    fn logsumexp_matches_direct() {
        let tape = Tape::new();
        let x = tape.var(array![[0.1, -2.0, 3.0], [1.0, 1.0, 1.0]]);
        let y = x.logsumexp_cols();
        let direct: f64 = [0.1f64, -2.0, 3.0].iter().map(|v| v.exp()).sum::<f64>().ln();
        assert!((y.value()[[0, 0]] - direct).abs() < 1e-14);
        let g = compute_gradients(&y.sum(), &[x]).unwrap();
        let row_sum: f64 = g[0].row(1).sum();
        assert!((row_sum - 1.0).abs() < 1e-14);
    }

    #[test]
    fn gather_cols_scatter_back() {
        let tape = Tape::new();
        let x = tape.var(array![[1.0, 2.0, 3.0]]);
        let y = x.gather_cols(&[2, 0, 2]).sum();
        assert_eq!(y.item(), 7.0);
        let g = compute_gradients(&y, &[x]).unwrap();
        assert_eq!(g[0], array![[1.0, 0.0, 2.0]]);
    }

    #[test]
    fn no_grad_tape_records_values_only() {
        let tape = Tape::no_grad();
        let p = tape.scalar_var(2.0);
        let y = p.square();
        assert_eq!(y.item(), 4.0);
        let g = tape.gradients(&y, &[p]);
        assert_eq!(g[0][[0, 0]], 0.0);
    }

    #[test]
    fn quantile_gradient_is_reciprocal_density() {
        let tape = Tape::new();
        let u = tape.scalar_var(0.8);
        let q = u.normal_quantile();
        let g = compute_gradients(&q, &[u]).unwrap();
        let expect = 1.0 / special::std_normal_pdf(q.item());
        assert!((g[0][[0, 0]] - expect).abs() < 1e-10);
    }
}
