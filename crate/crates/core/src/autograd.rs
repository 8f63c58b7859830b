//! A small reverse-mode automatic differentiation engine over `f64` ndarrays.
//!
//! The trainable parts of the model (spatial backbone, MHSA fusion, audio
//! branch, regression heads, losses) are expressed as graphs built at each
//! forward pass. Backward walks the tape in reverse and accumulates gradients
//! into every leaf, so analytic gradients can be checked against central
//! finite differences in the test suites.
//!
//! The engine is deliberately minimal: dense `f64` only, no broadcasting
//! beyond what the model needs, no in-place mutation of recorded values.

use std::cell::RefCell;

use ndarray::{ArrayD, Axis, IxDyn};

/// Dense dynamic-dimensional tensor used throughout the graph.
pub type Arr = ArrayD<f64>;

type BackwardFn = Box<dyn Fn(&Arr, &[&Arr]) -> Vec<Arr>>;

struct Node {
    value: Arr,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

/// Handle to a node in a [`Graph`]. Cheap to copy; only valid for the graph
/// that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Val(pub usize);

/// A define-by-run computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, value: Arr, parents: Vec<usize>, backward: Option<BackwardFn>) -> Val {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents,
            backward,
        });
        Val(nodes.len() - 1)
    }

    /// Insert a leaf. Gradients accumulate into leaves and can be read back
    /// from the result of [`Graph::backward`].
    pub fn leaf(&self, value: Arr) -> Val {
        self.push(value, vec![], None)
    }

    pub fn scalar(&self, x: f64) -> Val {
        self.leaf(Arr::from_elem(IxDyn(&[]), x))
    }

    pub fn value(&self, v: Val) -> Arr {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Val) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn scalar_value(&self, v: Val) -> f64 {
        let nodes = self.nodes.borrow();
        let a = &nodes[v.0].value;
        debug_assert_eq!(a.len(), 1);
        *a.iter().next().expect("scalar node")
    }

    // ---- elementwise binary ----

    pub fn add(&self, a: Val, b: Val) -> Val {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "add shape mismatch");
        self.push(
            &va + &vb,
            vec![a.0, b.0],
            Some(Box::new(|g, _| vec![g.clone(), g.clone()])),
        )
    }

    pub fn sub(&self, a: Val, b: Val) -> Val {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "sub shape mismatch");
        self.push(
            &va - &vb,
            vec![a.0, b.0],
            Some(Box::new(|g, _| vec![g.clone(), -g])),
        )
    }

    pub fn mul(&self, a: Val, b: Val) -> Val {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mul shape mismatch");
        self.push(
            &va * &vb,
            vec![a.0, b.0],
            Some(Box::new(|g, p| vec![g * p[1], g * p[0]])),
        )
    }

    pub fn div(&self, a: Val, b: Val) -> Val {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "div shape mismatch");
        self.push(
            &va / &vb,
            vec![a.0, b.0],
            Some(Box::new(|g, p| {
                vec![g / p[1], -g * p[0] / (p[1] * p[1])]
            })),
        )
    }

    pub fn add_scalar(&self, a: Val, x: f64) -> Val {
        let va = self.value(a);
        self.push(
            va + x,
            vec![a.0],
            Some(Box::new(|g, _| vec![g.clone()])),
        )
    }

    pub fn mul_scalar(&self, a: Val, x: f64) -> Val {
        let va = self.value(a);
        self.push(
            va * x,
            vec![a.0],
            Some(Box::new(move |g, _| vec![g * x])),
        )
    }

    pub fn neg(&self, a: Val) -> Val {
        self.mul_scalar(a, -1.0)
    }

    // ---- elementwise unary ----

    fn unary<F, G>(&self, a: Val, f: F, df: G) -> Val
    where
        F: Fn(f64) -> f64,
        G: Fn(f64) -> f64 + 'static,
    {
        let va = self.value(a);
        let out = va.mapv(&f);
        self.push(
            out,
            vec![a.0],
            Some(Box::new(move |g, p| {
                vec![g * &p[0].mapv(&df)]
            })),
        )
    }

    pub fn tanh(&self, a: Val) -> Val {
        self.unary(a, f64::tanh, |x| 1.0 - x.tanh().powi(2))
    }

    pub fn sigmoid(&self, a: Val) -> Val {
        fn sig(x: f64) -> f64 {
            1.0 / (1.0 + (-x).exp())
        }
        self.unary(a, sig, |x| {
            let s = sig(x);
            s * (1.0 - s)
        })
    }

    pub fn exp(&self, a: Val) -> Val {
        self.unary(a, f64::exp, f64::exp)
    }

    pub fn ln(&self, a: Val) -> Val {
        self.unary(a, f64::ln, |x| 1.0 / x)
    }

    pub fn sqrt(&self, a: Val) -> Val {
        self.unary(a, f64::sqrt, |x| 0.5 / x.sqrt())
    }

    pub fn abs(&self, a: Val) -> Val {
        self.unary(a, f64::abs, |x| if x >= 0.0 { 1.0 } else { -1.0 })
    }

    pub fn relu(&self, a: Val) -> Val {
        self.unary(a, |x| x.max(0.0), |x| if x > 0.0 { 1.0 } else { 0.0 })
    }

    // ---- shape ----

    pub fn reshape(&self, a: Val, shape: &[usize]) -> Val {
        let va = self.value(a);
        let old = va.shape().to_vec();
        // Row-major logical order regardless of the source memory layout
        // (into_shape would misread transposed arrays).
        let out = Arr::from_shape_vec(IxDyn(shape), va.iter().cloned().collect())
            .expect("reshape: element count mismatch");
        self.push(
            out,
            vec![a.0],
            Some(Box::new(move |g, _| {
                vec![Arr::from_shape_vec(IxDyn(&old), g.iter().cloned().collect()).unwrap()]
            })),
        )
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&self, a: Val) -> Val {
        let va = self.value(a);
        assert_eq!(va.ndim(), 2);
        let out = va.t().to_owned();
        self.push(
            out,
            vec![a.0],
            Some(Box::new(|g, _| vec![g.t().to_owned()])),
        )
    }

    /// Broadcast `a` to `shape` following ndarray broadcasting rules.
    /// Backward sums gradient over the broadcast axes.
    pub fn broadcast(&self, a: Val, shape: &[usize]) -> Val {
        let va = self.value(a);
        let in_shape = va.shape().to_vec();
        let out = va
            .broadcast(IxDyn(shape))
            .expect("broadcast: incompatible shapes")
            .to_owned();
        self.push(
            out,
            vec![a.0],
            Some(Box::new(move |g, _| {
                vec![reduce_broadcast(g, &in_shape)]
            })),
        )
    }

    pub fn concat(&self, axis: usize, parts: &[Val]) -> Val {
        assert!(!parts.is_empty());
        let arrays: Vec<Arr> = parts.iter().map(|p| self.value(*p)).collect();
        let views: Vec<_> = arrays.iter().map(|a| a.view()).collect();
        let out = ndarray::concatenate(Axis(axis), &views).expect("concat shape mismatch");
        let sizes: Vec<usize> = arrays.iter().map(|a| a.shape()[axis]).collect();
        self.push(
            out,
            parts.iter().map(|p| p.0).collect(),
            Some(Box::new(move |g, _| {
                let mut grads = Vec::with_capacity(sizes.len());
                let mut start = 0;
                for &sz in &sizes {
                    grads.push(
                        g.slice_axis(Axis(axis), ndarray::Slice::from(start..start + sz))
                            .to_owned(),
                    );
                    start += sz;
                }
                grads
            })),
        )
    }

    /// First `n` rows of a 2-D tensor. Backward zero-pads the dropped rows.
    pub fn take_rows(&self, a: Val, n: usize) -> Val {
        let va = self.value(a);
        assert_eq!(va.ndim(), 2);
        let rows = va.shape()[0];
        assert!(n <= rows);
        let out = va.slice_axis(Axis(0), ndarray::Slice::from(0..n)).to_owned();
        let full = va.shape().to_vec();
        self.push(
            out,
            vec![a.0],
            Some(Box::new(move |g, _| {
                let mut grad = Arr::zeros(IxDyn(&full));
                grad.slice_axis_mut(Axis(0), ndarray::Slice::from(0..g.shape()[0]))
                    .assign(g);
                vec![grad]
            })),
        )
    }

    // ---- reductions ----

    pub fn sum_all(&self, a: Val) -> Val {
        let va = self.value(a);
        let shape = va.shape().to_vec();
        let out = Arr::from_elem(IxDyn(&[]), va.sum());
        self.push(
            out,
            vec![a.0],
            Some(Box::new(move |g, _| {
                let gv = *g.iter().next().unwrap();
                vec![Arr::from_elem(IxDyn(&shape), gv)]
            })),
        )
    }

    pub fn mean_all(&self, a: Val) -> Val {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.mul_scalar(s, 1.0 / n)
    }

    /// Sum over one axis, keeping it as size 1.
    pub fn sum_axis_keep(&self, a: Val, axis: usize) -> Val {
        let va = self.value(a);
        let mut out_shape = va.shape().to_vec();
        out_shape[axis] = 1;
        let out = va
            .sum_axis(Axis(axis))
            .insert_axis(Axis(axis))
            .into_shape(IxDyn(&out_shape))
            .unwrap();
        let full = va.shape().to_vec();
        self.push(
            out,
            vec![a.0],
            Some(Box::new(move |g, _| {
                vec![g.broadcast(IxDyn(&full)).unwrap().to_owned()]
            })),
        )
    }

    pub fn mean_axis_keep(&self, a: Val, axis: usize) -> Val {
        let n = self.value(a).shape()[axis] as f64;
        let s = self.sum_axis_keep(a, axis);
        self.mul_scalar(s, 1.0 / n)
    }

    // ---- linear algebra ----

    /// Matrix product of two 2-D tensors.
    pub fn matmul(&self, a: Val, b: Val) -> Val {
        let va = self.value(a);
        let vb = self.value(b);
        assert_eq!(va.ndim(), 2);
        assert_eq!(vb.ndim(), 2);
        let ma = va.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let mb = vb.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let out = ma.dot(&mb).into_dyn();
        self.push(
            out,
            vec![a.0, b.0],
            Some(Box::new(|g, p| {
                let g2 = g.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                let pa = p[0].view().into_dimensionality::<ndarray::Ix2>().unwrap();
                let pb = p[1].view().into_dimensionality::<ndarray::Ix2>().unwrap();
                vec![g2.dot(&pb.t()).into_dyn(), pa.t().dot(&g2).into_dyn()]
            })),
        )
    }

    /// Row-wise softmax of a 2-D tensor.
    pub fn softmax_rows(&self, a: Val) -> Val {
        let va = self.value(a);
        assert_eq!(va.ndim(), 2);
        let mut out = va.clone();
        for mut row in out.axis_iter_mut(Axis(0)) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - m).exp());
            let s: f64 = row.sum();
            row.mapv_inplace(|x| x / s);
        }
        let soft = out.clone();
        self.push(
            out,
            vec![a.0],
            Some(Box::new(move |g, _| {
                let mut grad = g.clone();
                let s2 = soft.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                let mut g2 = grad
                    .view_mut()
                    .into_dimensionality::<ndarray::Ix2>()
                    .unwrap();
                for (mut grow, srow) in g2.axis_iter_mut(Axis(0)).zip(s2.axis_iter(Axis(0))) {
                    let dot: f64 = grow.iter().zip(srow.iter()).map(|(a, b)| a * b).sum();
                    for (gi, si) in grow.iter_mut().zip(srow.iter()) {
                        *gi = si * (*gi - dot);
                    }
                }
                vec![grad]
            })),
        )
    }

    // ---- convolution and pooling ----

    /// 2-D convolution. Input `(N, Cin, H, W)`, weight `(Cout, Cin, k, k)`,
    /// bias `(Cout)`, zero padding `pad` on all sides.
    pub fn conv2d(&self, input: Val, weight: Val, bias: Val, stride: usize, pad: usize) -> Val {
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        let out = conv2d_forward(&x, &w, &b, stride, pad);
        self.push(
            out,
            vec![input.0, weight.0, bias.0],
            Some(Box::new(move |g, p| {
                conv2d_backward(g, p[0], p[1], stride, pad)
            })),
        )
    }

    /// Adaptive average pooling of `(N, C, H, W)` to `(N, C, out_h, out_w)`.
    /// Each output cell averages its near-equal input partition block.
    pub fn adaptive_avg_pool2d(&self, input: Val, out_h: usize, out_w: usize) -> Val {
        let x = self.value(input);
        let out = adaptive_pool_forward(&x, out_h, out_w);
        self.push(
            out,
            vec![input.0],
            Some(Box::new(move |g, p| {
                vec![adaptive_pool_backward(g, p[0].shape(), out_h, out_w)]
            })),
        )
    }

    // ---- backward ----

    /// Reverse-accumulate gradients of scalar node `loss` with respect to
    /// every node. Returns one gradient slot per node; untouched nodes are
    /// `None`.
    pub fn backward(&self, loss: Val) -> Vec<Option<Arr>> {
        let nodes = self.nodes.borrow();
        let n = nodes.len();
        let mut grads: Vec<Option<Arr>> = vec![None; n];
        assert_eq!(nodes[loss.0].value.len(), 1, "backward from non-scalar");
        grads[loss.0] = Some(Arr::from_elem(nodes[loss.0].value.raw_dim(), 1.0));
        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            if let Some(back) = &nodes[i].backward {
                let parent_vals: Vec<&Arr> =
                    nodes[i].parents.iter().map(|&p| &nodes[p].value).collect();
                let pgrads = back(&g, &parent_vals);
                assert_eq!(pgrads.len(), nodes[i].parents.len());
                for (&p, pg) in nodes[i].parents.iter().zip(pgrads) {
                    match &mut grads[p] {
                        Some(acc) => *acc += &pg,
                        slot => *slot = Some(pg),
                    }
                }
            }
            grads[i] = Some(g);
        }
        grads
    }
}

/// Sum `g` down to `shape` by collapsing axes that were broadcast up.
fn reduce_broadcast(g: &Arr, shape: &[usize]) -> Arr {
    let mut out = g.clone();
    // Leading axes added by broadcasting.
    while out.ndim() > shape.len() {
        out = out.sum_axis(Axis(0));
    }
    // Size-1 axes stretched by broadcasting.
    for (axis, &dim) in shape.iter().enumerate() {
        if dim == 1 && out.shape()[axis] != 1 {
            out = out.sum_axis(Axis(axis)).insert_axis(Axis(axis));
        }
    }
    out.into_shape(IxDyn(shape)).unwrap()
}

fn conv2d_forward(x: &Arr, w: &Arr, b: &Arr, stride: usize, pad: usize) -> Arr {
    let (n, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, cin_w, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    assert_eq!(cin, cin_w, "conv2d channel mismatch");
    assert_eq!(k, w.shape()[3], "conv2d expects square kernels");
    assert!(
        h + 2 * pad >= k && wd + 2 * pad >= k,
        "conv2d: input smaller than kernel"
    );
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = Arr::zeros(IxDyn(&[n, cout, oh, ow]));
    for ni in 0..n {
        for co in 0..cout {
            let bias = b[[co]];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias;
                    for ci in 0..cin {
                        for ky in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                acc += x[[ni, ci, iy as usize, ix as usize]]
                                    * w[[co, ci, ky, kx]];
                            }
                        }
                    }
                    out[[ni, co, oy, ox]] = acc;
                }
            }
        }
    }
    out
}

fn conv2d_backward(g: &Arr, x: &Arr, w: &Arr, stride: usize, pad: usize) -> Vec<Arr> {
    let (n, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, _, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let (oh, ow) = (g.shape()[2], g.shape()[3]);
    let mut gx = Arr::zeros(x.raw_dim());
    let mut gw = Arr::zeros(w.raw_dim());
    let mut gb = Arr::zeros(IxDyn(&[cout]));
    for ni in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let go = g[[ni, co, oy, ox]];
                    gb[[co]] += go;
                    for ci in 0..cin {
                        for ky in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                gx[[ni, ci, iy as usize, ix as usize]] +=
                                    go * w[[co, ci, ky, kx]];
                                gw[[co, ci, ky, kx]] +=
                                    go * x[[ni, ci, iy as usize, ix as usize]];
                            }
                        }
                    }
                }
            }
        }
    }
    vec![gx, gw, gb]
}

fn pool_bounds(i: usize, in_size: usize, out_size: usize) -> (usize, usize) {
    let start = i * in_size / out_size;
    let end = ((i + 1) * in_size + out_size - 1) / out_size;
    (start, end)
}

fn adaptive_pool_forward(x: &Arr, out_h: usize, out_w: usize) -> Arr {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    assert!(h >= out_h && w >= out_w, "adaptive pool target larger than input");
    let mut out = Arr::zeros(IxDyn(&[n, c, out_h, out_w]));
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..out_h {
                let (y0, y1) = pool_bounds(oy, h, out_h);
                for ox in 0..out_w {
                    let (x0, x1) = pool_bounds(ox, w, out_w);
                    let mut acc = 0.0;
                    for iy in y0..y1 {
                        for ix in x0..x1 {
                            acc += x[[ni, ci, iy, ix]];
                        }
                    }
                    out[[ni, ci, oy, ox]] = acc / ((y1 - y0) * (x1 - x0)) as f64;
                }
            }
        }
    }
    out
}

fn adaptive_pool_backward(g: &Arr, in_shape: &[usize], out_h: usize, out_w: usize) -> Arr {
    let (n, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let mut gx = Arr::zeros(IxDyn(in_shape));
    for ni in 0..n {
        for ci in 0..c {
            for oy in 0..out_h {
                let (y0, y1) = pool_bounds(oy, h, out_h);
                for ox in 0..out_w {
                    let (x0, x1) = pool_bounds(ox, w, out_w);
                    let share = g[[ni, ci, oy, ox]] / ((y1 - y0) * (x1 - x0)) as f64;
                    for iy in y0..y1 {
                        for ix in x0..x1 {
                            gx[[ni, ci, iy, ix]] += share;
                        }
                    }
                }
            }
        }
    }
    gx
}
