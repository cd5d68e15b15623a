//! Minimal reverse-mode autodiff tape over `ndarray` arrays in f64.
//!
//! A [`Graph`] owns every intermediate value of one forward pass. Operations
//! append nodes and return [`NodeId`]s; [`Graph::backward`] walks the tape in
//! reverse and accumulates gradients into every node that (transitively)
//! depends on a parameter leaf. Graphs are cheap and expected to be rebuilt
//! per forward pass.
//!
//! All arrays are standard (C-contiguous) layout. Shape mismatches are bugs
//! in the calling code and panic rather than returning errors.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array3, ArrayD, Axis, Ix1, Ix2, Ix3, IxDyn};
use std::rc::Rc;

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// Elementwise a + b, equal shapes.
    Add(NodeId, NodeId),
    /// Elementwise a * b, equal shapes.
    Mul(NodeId, NodeId),
    /// a * x + b with scalar a; the offset is constant under d/dx.
    AffineScalar { x: NodeId, a: f64 },
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Sqrt(NodeId),
    /// Clamp to [lo, hi]; gradient passes only strictly inside the interval.
    Clamp { x: NodeId, lo: f64, hi: f64 },
    /// w: [out, in] times x: [in] -> [out].
    MatVec { w: NodeId, x: NodeId },
    /// 1-D concatenation.
    Concat(Vec<NodeId>),
    /// 1-D slice [start, start+len).
    Narrow { x: NodeId, start: usize, len: usize },
    /// Channel slice of a [C, H, W] array.
    NarrowChan { x: NodeId, start: usize, len: usize },
    /// Same-padded 2-D convolution, x: [IC, H, W], w: [OC, IC, kh, kw].
    Conv2d { x: NodeId, w: NodeId, stride: usize },
    /// Channel bias: x [C, H, W] + b [C].
    AddChanBias { x: NodeId, b: NodeId },
    /// Non-overlapping size x size max pool with floor output dims.
    MaxPool2 { x: NodeId, size: usize },
    /// Mean over the spatial axes of [C, H, W] -> [C].
    MeanSpatial(NodeId),
    SubChanMean(NodeId),
    Reshape { x: NodeId },
    /// Sum of all elements -> scalar (0-dim).
    Sum(NodeId),
    /// 1-D softmax.
    Softmax(NodeId),
}

pub struct Graph {
    values: Vec<Rc<ArrayD<f64>>>,
    ops: Vec<Op>,
    requires_grad: Vec<bool>,
}

/// Per-node gradients produced by a backward pass.
pub struct Grads {
    by_node: Vec<Option<ArrayD<f64>>>,
}

impl Grads {
    pub fn get(&self, id: NodeId) -> Option<&ArrayD<f64>> {
        self.by_node.get(id).and_then(|g| g.as_ref())
    }

    /// Gradient of a node, or zeros of the given shape when the node was
    /// never reached (e.g. an unused parameter).
    pub fn get_or_zeros(&self, id: NodeId, shape: &[usize]) -> ArrayD<f64> {
        match self.get(id) {
            Some(g) => g.clone(),
            None => ArrayD::zeros(IxDyn(shape)),
        }
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            values: Vec::new(),
            ops: Vec::new(),
            requires_grad: Vec::new(),
        }
    }

    fn push(&mut self, value: ArrayD<f64>, op: Op, requires_grad: bool) -> NodeId {
        self.values.push(Rc::new(value));
        self.ops.push(op);
        self.requires_grad.push(requires_grad);
        self.values.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &ArrayD<f64> {
        &self.values[id]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Scalar value of a 0-dim or single-element node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.len(), 1, "scalar() on node with {} elements", v.len());
        v.iter().next().copied().unwrap()
    }

    /// Non-trainable data leaf.
    pub fn input(&mut self, value: ArrayD<f64>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn input1(&mut self, value: Array1<f64>) -> NodeId {
        self.input(value.into_dyn())
    }

    /// Trainable leaf; the array is shared, not copied.
    pub fn param(&mut self, value: Rc<ArrayD<f64>>) -> NodeId {
        self.values.push(value);
        self.ops.push(Op::Leaf);
        self.requires_grad.push(true);
        self.values.len() - 1
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.requires_grad[i])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(
            self.values[a].shape(),
            self.values[b].shape(),
            "add shape mismatch"
        );
        let v = &*self.values[a] + &*self.values[b];
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(
            self.values[a].shape(),
            self.values[b].shape(),
            "mul shape mismatch"
        );
        let v = &*self.values[a] * &*self.values[b];
        let rg = self.rg(&[a, b]);
        self.push(v, Op::Mul(a, b), rg)
    }

    /// a * x + b elementwise with scalar coefficients.
    pub fn affine_scalar(&mut self, x: NodeId, a: f64, b: f64) -> NodeId {
        let v = self.values[x].mapv(|t| a * t + b);
        let rg = self.requires_grad[x];
        self.push(v, Op::AffineScalar { x, a }, rg)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = self.values[x].mapv(|t| 1.0 / (1.0 + (-t).exp()));
        let rg = self.requires_grad[x];
        self.push(v, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.values[x].mapv(f64::tanh);
        let rg = self.requires_grad[x];
        self.push(v, Op::Tanh(x), rg)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.values[x].mapv(|t| t.max(0.0));
        let rg = self.requires_grad[x];
        self.push(v, Op::Relu(x), rg)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let v = self.values[x].mapv(f64::exp);
        let rg = self.requires_grad[x];
        self.push(v, Op::Exp(x), rg)
    }

    pub fn ln(&mut self, x: NodeId) -> NodeId {
        let v = self.values[x].mapv(f64::ln);
        let rg = self.requires_grad[x];
        self.push(v, Op::Ln(x), rg)
    }

    pub fn sqrt(&mut self, x: NodeId) -> NodeId {
        let v = self.values[x].mapv(f64::sqrt);
        let rg = self.requires_grad[x];
        self.push(v, Op::Sqrt(x), rg)
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        let v = self.values[x].mapv(|t| t.clamp(lo, hi));
        let rg = self.requires_grad[x];
        self.push(v, Op::Clamp { x, lo, hi }, rg)
    }

    /// w: [out, in] matrix, x: [in] vector -> [out].
    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> NodeId {
        let wv = self.values[w]
            .view()
            .into_dimensionality::<Ix2>()
            .expect("matvec weight must be 2-D");
        let xv = self.values[x]
            .view()
            .into_dimensionality::<Ix1>()
            .expect("matvec input must be 1-D");
        assert_eq!(wv.ncols(), xv.len(), "matvec inner dim mismatch");
        let v = wv.dot(&xv);
        let rg = self.rg(&[w, x]);
        self.push(v.into_dyn(), Op::MatVec { w, x }, rg)
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat of nothing");
        let total: usize = parts.iter().map(|&p| self.values[p].len()).sum();
        let mut out = Vec::with_capacity(total);
        for &p in parts {
            let v = &self.values[p];
            assert_eq!(v.ndim(), 1, "concat expects 1-D parts");
            out.extend(v.iter().copied());
        }
        let rg = self.rg(parts);
        self.push(
            Array1::from(out).into_dyn(),
            Op::Concat(parts.to_vec()),
            rg,
        )
    }

    pub fn narrow(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let xv = &self.values[x];
        assert_eq!(xv.ndim(), 1, "narrow expects 1-D input");
        assert!(start + len <= xv.len(), "narrow out of bounds");
        let v = xv
            .slice(ndarray::s![start..start + len])
            .to_owned()
            .into_dyn();
        let rg = self.requires_grad[x];
        self.push(v, Op::Narrow { x, start, len }, rg)
    }

    pub fn narrow_chan(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let xv = self.values[x]
            .view()
            .into_dimensionality::<Ix3>()
            .expect("narrow_chan expects [C,H,W]");
        assert!(start + len <= xv.dim().0, "narrow_chan out of bounds");
        let v = xv
            .slice(ndarray::s![start..start + len, .., ..])
            .to_owned()
            .into_dyn();
        let rg = self.requires_grad[x];
        self.push(v, Op::NarrowChan { x, start, len }, rg)
    }

    /// Same-padded convolution: x [IC, H, W], w [OC, IC, kh, kw], output
    /// [OC, ceil(H/stride), ceil(W/stride)].
    pub fn conv2d_same(&mut self, x: NodeId, w: NodeId, stride: usize) -> NodeId {
        let xv = self.values[x]
            .view()
            .into_dimensionality::<Ix3>()
            .expect("conv input must be [C,H,W]");
        let wv = self.values[w]
            .view()
            .into_dimensionality::<ndarray::Ix4>()
            .expect("conv weight must be [OC,IC,kh,kw]");
        let (ic, h, wd) = xv.dim();
        let (oc, wic, kh, kw) = wv.dim();
        assert_eq!(ic, wic, "conv channel mismatch");
        let geo = ConvGeometry::same(h, wd, kh, kw, stride);
        let col = im2col(&xv.to_owned(), kh, kw, &geo);
        let wmat = wv.to_shape((oc, ic * kh * kw)).unwrap().to_owned();
        let mut ymat = Array2::<f64>::zeros((oc, geo.oh * geo.ow));
        general_mat_mul(1.0, &wmat, &col, 0.0, &mut ymat);
        let y = ymat
            .into_shape_with_order((oc, geo.oh, geo.ow))
            .unwrap()
            .into_dyn();
        let rg = self.rg(&[x, w]);
        self.push(y, Op::Conv2d { x, w, stride }, rg)
    }

    /// x [C, H, W] plus per-channel bias b [C].
    pub fn add_chan_bias(&mut self, x: NodeId, b: NodeId) -> NodeId {
        let xv = self.values[x]
            .view()
            .into_dimensionality::<Ix3>()
            .expect("add_chan_bias expects [C,H,W]");
        let bv = self.values[b]
            .view()
            .into_dimensionality::<Ix1>()
            .expect("bias must be 1-D");
        assert_eq!(xv.dim().0, bv.len(), "bias channel mismatch");
        let mut v = xv.to_owned();
        for (mut chan, bias) in v.axis_iter_mut(Axis(0)).zip(bv.iter()) {
            chan += *bias;
        }
        let rg = self.rg(&[x, b]);
        self.push(v.into_dyn(), Op::AddChanBias { x, b }, rg)
    }

    /// Non-overlapping max pool; output dims floor(H/size), floor(W/size).
    pub fn max_pool2(&mut self, x: NodeId, size: usize) -> NodeId {
        assert!(size >= 1);
        let xv = self.values[x]
            .view()
            .into_dimensionality::<Ix3>()
            .expect("max_pool2 expects [C,H,W]");
        let (c, h, w) = xv.dim();
        let (oh, ow) = (h / size, w / size);
        assert!(oh > 0 && ow > 0, "pool output degenerate for {h}x{w}");
        let mut v = Array3::<f64>::zeros((c, oh, ow));
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    for dy in 0..size {
                        for dx in 0..size {
                            let t = xv[(ci, oy * size + dy, ox * size + dx)];
                            if t > best {
                                best = t;
                            }
                        }
                    }
                    v[(ci, oy, ox)] = best;
                }
            }
        }
        let rg = self.requires_grad[x];
        self.push(v.into_dyn(), Op::MaxPool2 { x, size }, rg)
    }

    /// Subtract each channel's spatial mean: [C, H, W] -> [C, H, W] with
    /// zero-mean channels. Used to remove a dominant constant component (e.g.
    /// ego motion in a flow field) before feature extraction.
    pub fn sub_chan_mean(&mut self, x: NodeId) -> NodeId {
        let xv = self.values[x]
            .view()
            .into_dimensionality::<Ix3>()
            .expect("sub_chan_mean expects [C,H,W]");
        let (c, h, w) = xv.dim();
        let scale = 1.0 / (h * w) as f64;
        let mut v = xv.to_owned();
        for ci in 0..c {
            let m = xv.index_axis(Axis(0), ci).sum() * scale;
            v.index_axis_mut(Axis(0), ci).mapv_inplace(|t| t - m);
        }
        let rg = self.requires_grad[x];
        self.push(v.into_dyn(), Op::SubChanMean(x), rg)
    }

    /// Spatial mean of [C, H, W] -> [C].
    pub fn mean_spatial(&mut self, x: NodeId) -> NodeId {
        let xv = self.values[x]
            .view()
            .into_dimensionality::<Ix3>()
            .expect("mean_spatial expects [C,H,W]");
        let (c, h, w) = xv.dim();
        let scale = 1.0 / (h * w) as f64;
        let mut v = Array1::<f64>::zeros(c);
        for ci in 0..c {
            v[ci] = xv.index_axis(Axis(0), ci).sum() * scale;
        }
        let rg = self.requires_grad[x];
        self.push(v.into_dyn(), Op::MeanSpatial(x), rg)
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> NodeId {
        let n: usize = shape.iter().product();
        assert_eq!(self.values[x].len(), n, "reshape element count mismatch");
        let flat: Vec<f64> = self.values[x].iter().copied().collect();
        let v = ArrayD::from_shape_vec(IxDyn(shape), flat).unwrap();
        let rg = self.requires_grad[x];
        self.push(v, Op::Reshape { x }, rg)
    }

    /// Flatten to 1-D.
    pub fn flatten(&mut self, x: NodeId) -> NodeId {
        let n = self.values[x].len();
        self.reshape(x, &[n])
    }

    /// Sum of all elements -> 0-dim scalar node.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.values[x].sum();
        let rg = self.requires_grad[x];
        self.push(
            ArrayD::from_elem(IxDyn(&[]), s),
            Op::Sum(x),
            rg,
        )
    }

    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let xv = self.values[x]
            .view()
            .into_dimensionality::<Ix1>()
            .expect("softmax expects 1-D");
        let max = xv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Array1<f64> = xv.mapv(|t| (t - max).exp());
        let z = exps.sum();
        let v = exps.mapv(|e| e / z);
        let rg = self.requires_grad[x];
        self.push(v.into_dyn(), Op::Softmax(x), rg)
    }

    /// Elementwise mean of equally shaped 1-D nodes.
    pub fn mean_of(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let mut acc = parts[0];
        for &p in &parts[1..] {
            acc = self.add(acc, p);
        }
        self.affine_scalar(acc, 1.0 / parts.len() as f64, 0.0)
    }

    /// Backward from a single scalar root with seed 1.
    pub fn backward(&self, root: NodeId) -> Grads {
        self.backward_seeded(&[(root, 1.0)])
    }

    /// Backward from several scalar roots, each with its own seed weight.
    /// Equivalent to differentiating `sum_i seed_i * root_i`.
    pub fn backward_seeded(&self, seeds: &[(NodeId, f64)]) -> Grads {
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; self.values.len()];
        for &(root, seed) in seeds {
            debug_assert_eq!(self.values[root].len(), 1, "backward root must be scalar");
            let sh = self.values[root].raw_dim();
            match &mut grads[root] {
                Some(g) => *g += seed,
                slot => *slot = Some(ArrayD::from_elem(sh, seed)),
            }
        }
        for id in (0..self.values.len()).rev() {
            let Some(gout) = grads[id].take() else {
                continue;
            };
            if !self.requires_grad[id] {
                continue;
            }
            self.backprop_node(id, &gout, &mut grads);
            // Re-store so callers can read gradients of interior nodes too.
            grads[id] = Some(gout);
        }
        Grads { by_node: grads }
    }

    fn accumulate(&self, grads: &mut [Option<ArrayD<f64>>], id: NodeId, contrib: ArrayD<f64>) {
        if !self.requires_grad[id] {
            return;
        }
        match &mut grads[id] {
            Some(g) => *g += &contrib,
            slot => *slot = Some(contrib),
        }
    }

    fn backprop_node(&self, id: NodeId, gout: &ArrayD<f64>, grads: &mut [Option<ArrayD<f64>>]) {
        let y = &self.values[id];
        match &self.ops[id] {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gout.clone());
                self.accumulate(grads, *b, gout.clone());
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.requires_grad[a] {
                    self.accumulate(grads, a, gout * &*self.values[b]);
                }
                if self.requires_grad[b] {
                    self.accumulate(grads, b, gout * &*self.values[a]);
                }
            }
            Op::AffineScalar { x, a, .. } => {
                self.accumulate(grads, *x, gout.mapv(|g| g * a));
            }
            Op::Sigmoid(x) => {
                let d = y.mapv(|s| s * (1.0 - s));
                self.accumulate(grads, *x, gout * &d);
            }
            Op::Tanh(x) => {
                let d = y.mapv(|t| 1.0 - t * t);
                self.accumulate(grads, *x, gout * &d);
            }
            Op::Relu(x) => {
                let d = self.values[*x].mapv(|t| if t > 0.0 { 1.0 } else { 0.0 });
                self.accumulate(grads, *x, gout * &d);
            }
            Op::Exp(x) => {
                self.accumulate(grads, *x, gout * &**y);
            }
            Op::Ln(x) => {
                let d = self.values[*x].mapv(|t| 1.0 / t);
                self.accumulate(grads, *x, gout * &d);
            }
            Op::Sqrt(x) => {
                let d = y.mapv(|s| 0.5 / s);
                self.accumulate(grads, *x, gout * &d);
            }
            Op::Clamp { x, lo, hi } => {
                let d = self.values[*x].mapv(|t| if t > *lo && t < *hi { 1.0 } else { 0.0 });
                self.accumulate(grads, *x, gout * &d);
            }
            Op::MatVec { w, x } => {
                let (w, x) = (*w, *x);
                let g = gout.view().into_dimensionality::<Ix1>().unwrap();
                if self.requires_grad[w] {
                    let xv = self.values[x].view().into_dimensionality::<Ix1>().unwrap();
                    let mut dw = Array2::<f64>::zeros((g.len(), xv.len()));
                    for (o, go) in g.iter().enumerate() {
                        if *go != 0.0 {
                            for (i, xi) in xv.iter().enumerate() {
                                dw[(o, i)] = go * xi;
                            }
                        }
                    }
                    self.accumulate(grads, w, dw.into_dyn());
                }
                if self.requires_grad[x] {
                    let wv = self.values[w].view().into_dimensionality::<Ix2>().unwrap();
                    let dx = wv.t().dot(&g);
                    self.accumulate(grads, x, dx.into_dyn());
                }
            }
            Op::Concat(parts) => {
                let g = gout.view().into_dimensionality::<Ix1>().unwrap();
                let mut off = 0;
                for &p in parts {
                    let len = self.values[p].len();
                    if self.requires_grad[p] {
                        let piece = g.slice(ndarray::s![off..off + len]).to_owned();
                        self.accumulate(grads, p, piece.into_dyn());
                    }
                    off += len;
                }
            }
            Op::Narrow { x, start, len } => {
                let mut dx = Array1::<f64>::zeros(self.values[*x].len());
                let g = gout.view().into_dimensionality::<Ix1>().unwrap();
                dx.slice_mut(ndarray::s![*start..*start + *len]).assign(&g);
                self.accumulate(grads, *x, dx.into_dyn());
            }
            Op::NarrowChan { x, start, len } => {
                let sh = self.values[*x].shape();
                let mut dx = Array3::<f64>::zeros((sh[0], sh[1], sh[2]));
                let g = gout.view().into_dimensionality::<Ix3>().unwrap();
                dx.slice_mut(ndarray::s![*start..*start + *len, .., ..])
                    .assign(&g);
                self.accumulate(grads, *x, dx.into_dyn());
            }
            Op::Conv2d { x, w, stride } => {
                self.backprop_conv(*x, *w, *stride, gout, grads);
            }
            Op::AddChanBias { x, b } => {
                if self.requires_grad[*x] {
                    self.accumulate(grads, *x, gout.clone());
                }
                if self.requires_grad[*b] {
                    let g = gout.view().into_dimensionality::<Ix3>().unwrap();
                    let c = g.dim().0;
                    let mut db = Array1::<f64>::zeros(c);
                    for ci in 0..c {
                        db[ci] = g.index_axis(Axis(0), ci).sum();
                    }
                    self.accumulate(grads, *b, db.into_dyn());
                }
            }
            Op::MaxPool2 { x, size } => {
                let xv = self.values[*x].view().into_dimensionality::<Ix3>().unwrap();
                let g = gout.view().into_dimensionality::<Ix3>().unwrap();
                let (c, oh, ow) = g.dim();
                let s = *size;
                let mut dx = Array3::<f64>::zeros(xv.dim());
                for ci in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            // First maximum in row-major scan wins on ties.
                            let (mut by, mut bx, mut best) = (0, 0, f64::NEG_INFINITY);
                            for dy in 0..s {
                                for dxk in 0..s {
                                    let t = xv[(ci, oy * s + dy, ox * s + dxk)];
                                    if t > best {
                                        best = t;
                                        by = dy;
                                        bx = dxk;
                                    }
                                }
                            }
                            dx[(ci, oy * s + by, ox * s + bx)] += g[(ci, oy, ox)];
                        }
                    }
                }
                self.accumulate(grads, *x, dx.into_dyn());
            }
            Op::MeanSpatial(x) => {
                let xv = self.values[*x].view().into_dimensionality::<Ix3>().unwrap();
                let (c, h, w) = xv.dim();
                let g = gout.view().into_dimensionality::<Ix1>().unwrap();
                let scale = 1.0 / (h * w) as f64;
                let mut dx = Array3::<f64>::zeros((c, h, w));
                for ci in 0..c {
                    dx.index_axis_mut(Axis(0), ci).fill(g[ci] * scale);
                }
                self.accumulate(grads, *x, dx.into_dyn());
            }
            Op::SubChanMean(x) => {
                // (I - P) is self-adjoint: pass the gradient through with its
                // own per-channel spatial mean removed.
                let g = gout.view().into_dimensionality::<Ix3>().unwrap();
                let (c, h, w) = g.dim();
                let scale = 1.0 / (h * w) as f64;
                let mut dx = g.to_owned();
                for ci in 0..c {
                    let m = g.index_axis(Axis(0), ci).sum() * scale;
                    dx.index_axis_mut(Axis(0), ci).mapv_inplace(|t| t - m);
                }
                self.accumulate(grads, *x, dx.into_dyn());
            }
            Op::Reshape { x } => {
                let sh = self.values[*x].shape().to_vec();
                let flat: Vec<f64> = gout.iter().copied().collect();
                let dx = ArrayD::from_shape_vec(IxDyn(&sh), flat).unwrap();
                self.accumulate(grads, *x, dx);
            }
            Op::Sum(x) => {
                let seed = gout.iter().next().copied().unwrap();
                let dx = ArrayD::from_elem(self.values[*x].raw_dim(), seed);
                self.accumulate(grads, *x, dx);
            }
            Op::Softmax(x) => {
                let yv = y.view().into_dimensionality::<Ix1>().unwrap();
                let g = gout.view().into_dimensionality::<Ix1>().unwrap();
                let dot: f64 = yv.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
                let dx: Array1<f64> = yv
                    .iter()
                    .zip(g.iter())
                    .map(|(yi, gi)| yi * (gi - dot))
                    .collect();
                self.accumulate(grads, *x, dx.into_dyn());
            }
        }
    }

    fn backprop_conv(
        &self,
        x: NodeId,
        w: NodeId,
        stride: usize,
        gout: &ArrayD<f64>,
        grads: &mut [Option<ArrayD<f64>>],
    ) {
        let xv = self.values[x]
            .view()
            .into_dimensionality::<Ix3>()
            .unwrap()
            .to_owned();
        let wv = self.values[w]
            .view()
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap();
        let (ic, h, wd) = xv.dim();
        let (oc, _, kh, kw) = wv.dim();
        let geo = ConvGeometry::same(h, wd, kh, kw, stride);
        let gmat = gout
            .view()
            .into_dimensionality::<Ix3>()
            .unwrap()
            .to_owned()
            .into_shape_with_order((oc, geo.oh * geo.ow))
            .unwrap();
        if self.requires_grad[w] {
            let col = im2col(&xv, kh, kw, &geo);
            let mut dw = Array2::<f64>::zeros((oc, ic * kh * kw));
            general_mat_mul(1.0, &gmat, &col.t().to_owned(), 0.0, &mut dw);
            let dw = dw
                .into_shape_with_order((oc, ic, kh, kw))
                .unwrap()
                .into_dyn();
            self.accumulate(grads, w, dw);
        }
        if self.requires_grad[x] {
            let wmat = wv.to_shape((oc, ic * kh * kw)).unwrap().to_owned();
            let mut dcol = Array2::<f64>::zeros((ic * kh * kw, geo.oh * geo.ow));
            general_mat_mul(1.0, &wmat.t().to_owned(), &gmat, 0.0, &mut dcol);
            let dx = col2im(&dcol, ic, h, wd, kh, kw, &geo);
            self.accumulate(grads, x, dx.into_dyn());
        }
    }
}

/// Output dims and padding for a TF-style "same" convolution.
#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    oh: usize,
    ow: usize,
    pad_top: usize,
    pad_left: usize,
    stride: usize,
}

impl ConvGeometry {
    fn same(h: usize, w: usize, kh: usize, kw: usize, stride: usize) -> Self {
        let oh = h.div_ceil(stride);
        let ow = w.div_ceil(stride);
        let pad_h = ((oh - 1) * stride + kh).saturating_sub(h);
        let pad_w = ((ow - 1) * stride + kw).saturating_sub(w);
        ConvGeometry {
            oh,
            ow,
            pad_top: pad_h / 2,
            pad_left: pad_w / 2,
            stride,
        }
    }
}

/// Lay out conv patches as a [IC*kh*kw, oh*ow] matrix, zero padding outside.
fn im2col(x: &Array3<f64>, kh: usize, kw: usize, geo: &ConvGeometry) -> Array2<f64> {
    let (ic, h, w) = x.dim();
    let mut col = Array2::<f64>::zeros((ic * kh * kw, geo.oh * geo.ow));
    let xs = x.as_slice().unwrap();
    let cs = col.as_slice_mut().unwrap();
    for c in 0..ic {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (c * kh + ky) * kw + kx;
                let base = row * geo.oh * geo.ow;
                for oy in 0..geo.oh {
                    let iy = (oy * geo.stride + ky) as isize - geo.pad_top as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = (c * h + iy as usize) * w;
                    let dst_row = base + oy * geo.ow;
                    for ox in 0..geo.ow {
                        let ix = (ox * geo.stride + kx) as isize - geo.pad_left as isize;
                        if ix >= 0 && ix < w as isize {
                            cs[dst_row + ox] = xs[src_row + ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Scatter-add the column-form gradient back to input layout.
fn col2im(
    dcol: &Array2<f64>,
    ic: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    geo: &ConvGeometry,
) -> Array3<f64> {
    let mut dx = Array3::<f64>::zeros((ic, h, w));
    let ds = dcol.as_slice().unwrap();
    let out = dx.as_slice_mut().unwrap();
    for c in 0..ic {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (c * kh + ky) * kw + kx;
                let base = row * geo.oh * geo.ow;
                for oy in 0..geo.oh {
                    let iy = (oy * geo.stride + ky) as isize - geo.pad_top as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = (c * h + iy as usize) * w;
                    let src_row = base + oy * geo.ow;
                    for ox in 0..geo.ow {
                        let ix = (ox * geo.stride + kx) as isize - geo.pad_left as isize;
                        if ix >= 0 && ix < w as isize {
                            out[dst_row + ix as usize] += ds[src_row + ox];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Output spatial dims of one same-padded conv (stride s) followed by one
/// non-overlapping pool of the given size. Mirrors `conv2d_same` and
/// `max_pool2` exactly; used by shape tracing.
pub fn conv_pool_dims(h: usize, w: usize, stride: usize, pool: usize) -> (usize, usize) {
    let (ch, cw) = (h.div_ceil(stride), w.div_ceil(stride));
    (ch / pool, cw / pool)
}
