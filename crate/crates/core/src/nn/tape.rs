//! A small reverse-mode tape over `f64` matrices.
//!
//! Every operation appends a node holding its value; `backward` walks the
//! nodes in reverse creation order and accumulates gradients. Gradients
//! are allocated lazily so forward-only passes stay cheap. A tape can be
//! re-differentiated from different scalar roots (`zero_grads` +
//! `backward`), which saliency extraction relies on.

use ndarray::{s, Array2, Axis};

use crate::ctc::{ctc_grad, log_sum_exp, CtcError, LabelSequence, LogProbLattice};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    /// a @ b
    MatMul(NodeId, NodeId),
    /// a @ b^T
    MatMulNt(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// broadcast a 1 x n row over every row of a
    AddRow(NodeId, NodeId),
    /// elementwise product with a constant (dropout masks)
    MulConst(NodeId, Array2<f64>),
    Scale(NodeId, f64),
    Relu(NodeId),
    SoftmaxRows(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    SliceCols {
        x: NodeId,
        start: usize,
    },
    ConcatCols(Vec<NodeId>),
    /// unfold (frames x channels) into (out_frames x channels*kernel)
    Im2col {
        x: NodeId,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    /// 1x1 value holding -log p(target | log_softmax(logits))
    CtcLoss {
        logits: NodeId,
        cached_grad: Array2<f64>,
    },
    /// 1x1 value holding log_softmax(logits)[row, col]
    SelectLogProb {
        logits: NodeId,
        row: usize,
        col: usize,
        softmax_row: Vec<f64>,
    },
    /// sum of scaled nodes of identical shape
    WeightedSum(Vec<(NodeId, f64)>),
}

struct Node {
    value: Array2<f64>,
    grad: Option<Array2<f64>>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, grad: None, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    /// Gradient accumulated by the last `backward`; zeros if the node was
    /// never reached.
    pub fn grad(&self, id: NodeId) -> Array2<f64> {
        match &self.nodes[id.0].grad {
            Some(g) => g.clone(),
            None => Array2::zeros(self.nodes[id.0].value.raw_dim()),
        }
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulNt(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let r = self.value(row).row(0).to_owned();
        let v = self.value(a) + &r;
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul_const(&mut self, a: NodeId, mask: Array2<f64>) -> NodeId {
        let v = self.value(a) * &mask;
        self.push(v, Op::MulConst(a, mask))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let v = self.value(a) * factor;
        self.push(v, Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        // `x * 0.0` rather than `max(0.0)` so NaN propagates instead of
        // being silently clamped.
        let v = self.value(a).mapv(|x| if x > 0.0 { x } else { x * 0.0 });
        self.push(v, Op::Relu(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let lse = log_sum_exp(row.iter().copied());
            row.mapv_inplace(|x| (x - lse).exp());
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        const EPS: f64 = 1e-6;
        let xv = self.value(x);
        let d = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            let istd = 1.0 / (var + EPS).sqrt();
            inv_std.push(istd);
            row.mapv_inplace(|v| (v - mean) * istd);
        }
        let g = self.value(gamma).row(0).to_owned();
        let b = self.value(beta).row(0).to_owned();
        let v = &xhat * &g + &b;
        self.push(v, Op::LayerNorm { x, gamma, beta, xhat, inv_std })
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, width: usize) -> NodeId {
        let v = self.value(x).slice(s![.., start..start + width]).to_owned();
        self.push(v, Op::SliceCols { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.value(parts[0]).nrows();
        let width: usize = parts.iter().map(|&p| self.value(p).ncols()).sum();
        let mut v = Array2::zeros((rows, width));
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            v.slice_mut(s![.., offset..offset + pv.ncols()]).assign(pv);
            offset += pv.ncols();
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn im2col(&mut self, x: NodeId, kernel: usize, stride: usize, pad: usize) -> NodeId {
        let xv = self.value(x);
        let (in_len, channels) = (xv.nrows(), xv.ncols());
        let out_len = (in_len + 2 * pad - kernel) / stride + 1;
        let mut v = Array2::zeros((out_len, channels * kernel));
        for r in 0..out_len {
            for j in 0..kernel {
                let src = (r * stride + j) as isize - pad as isize;
                if src < 0 || src as usize >= in_len {
                    continue;
                }
                for c in 0..channels {
                    v[(r, c * kernel + j)] = xv[(src as usize, c)];
                }
            }
        }
        self.push(v, Op::Im2col { x, kernel, stride, pad })
    }

    /// Appends the CTC negative log-likelihood of `target` under
    /// `log_softmax(logits)` as a 1x1 node whose backward distributes the
    /// analytic CTC gradient.
    pub fn ctc_loss(&mut self, logits: NodeId, target: &LabelSequence) -> Result<NodeId, CtcError> {
        let lattice = LogProbLattice::from_logits(self.value(logits).clone())?;
        let grad = ctc_grad(&lattice, target)?;
        let nll = -crate::ctc::ctc_log_likelihood(&lattice, target)?;
        let v = Array2::from_elem((1, 1), nll);
        Ok(self.push(v, Op::CtcLoss { logits, cached_grad: grad }))
    }

    /// Appends `log_softmax(logits)[row, col]` as a 1x1 node.
    pub fn select_log_prob(&mut self, logits: NodeId, row: usize, col: usize) -> NodeId {
        let lrow = self.value(logits).row(row);
        let lse = log_sum_exp(lrow.iter().copied());
        let softmax_row: Vec<f64> = lrow.iter().map(|&x| (x - lse).exp()).collect();
        let v = Array2::from_elem((1, 1), lrow[col] - lse);
        self.push(v, Op::SelectLogProb { logits, row, col, softmax_row })
    }

    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> NodeId {
        let mut v: Array2<f64> = Array2::zeros(self.value(terms[0].0).raw_dim());
        for &(id, w) in terms {
            v.scaled_add(w, self.value(id));
        }
        self.push(v, Op::WeightedSum(terms.to_vec()))
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn accumulate(&mut self, id: NodeId, delta: &Array2<f64>) {
        let node = &mut self.nodes[id.0];
        match &mut node.grad {
            Some(g) => *g += delta,
            None => node.grad = Some(delta.clone()),
        }
    }

    /// Reverse-accumulate gradients from a 1x1 scalar node.
    pub fn backward(&mut self, root: NodeId) {
        assert_eq!(self.nodes[root.0].value.dim(), (1, 1), "backward root must be scalar");
        self.nodes[root.0].grad = Some(Array2::ones((1, 1)));
        for idx in (0..=root.0).rev() {
            let grad = match &self.nodes[idx].grad {
                Some(g) => g.clone(),
                None => continue,
            };
            // Ops only reference earlier nodes, so this sweep is a valid
            // topological order.
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let da = grad.dot(&self.value(b).t());
                    let db = self.value(a).t().dot(&grad);
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::MatMulNt(a, b) => {
                    let (a, b) = (*a, *b);
                    let da = grad.dot(self.value(b));
                    let db = grad.t().dot(self.value(a));
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    self.accumulate(a, &grad);
                    self.accumulate(b, &grad);
                }
                Op::AddRow(a, row) => {
                    let (a, row) = (*a, *row);
                    self.accumulate(a, &grad);
                    let drow = grad.sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.accumulate(row, &drow);
                }
                Op::MulConst(a, mask) => {
                    let a = *a;
                    let da = &grad * mask;
                    self.accumulate(a, &da);
                }
                Op::Scale(a, factor) => {
                    let (a, factor) = (*a, *factor);
                    self.accumulate(a, &(&grad * factor));
                }
                Op::Relu(a) => {
                    let a = *a;
                    let mut da = grad.clone();
                    da.zip_mut_with(&self.nodes[idx].value, |g, &v| {
                        if v <= 0.0 {
                            *g = 0.0;
                        }
                    });
                    self.accumulate(a, &da);
                }
                Op::SoftmaxRows(a) => {
                    let a = *a;
                    let sm = &self.nodes[idx].value;
                    let mut da = grad.clone();
                    for (mut drow, srow) in da.rows_mut().into_iter().zip(sm.rows()) {
                        let dot: f64 =
                            drow.iter().zip(srow.iter()).map(|(g, s)| g * s).sum();
                        for (g, s) in drow.iter_mut().zip(srow.iter()) {
                            *g = (*g - dot) * s;
                        }
                    }
                    self.accumulate(a, &da);
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    let (x, gamma, beta) = (*x, *gamma, *beta);
                    let xhat = xhat.clone();
                    let inv_std = inv_std.clone();
                    let d = xhat.ncols() as f64;
                    let gamma_row = self.value(gamma).row(0).to_owned();

                    let dgamma = (&grad * &xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dbeta = grad.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let gxhat = &grad * &gamma_row;
                    let mut dx = Array2::zeros(xhat.raw_dim());
                    for (i, istd) in inv_std.iter().enumerate() {
                        let g_row = gxhat.row(i);
                        let xh_row = xhat.row(i);
                        let mean_g = g_row.sum() / d;
                        let mean_gx: f64 = g_row
                            .iter()
                            .zip(xh_row.iter())
                            .map(|(g, xh)| g * xh)
                            .sum::<f64>()
                            / d;
                        for (j, dv) in dx.row_mut(i).iter_mut().enumerate() {
                            *dv = istd * (g_row[j] - mean_g - xh_row[j] * mean_gx);
                        }
                    }
                    self.accumulate(x, &dx);
                    self.accumulate(gamma, &dgamma);
                    self.accumulate(beta, &dbeta);
                }
                Op::SliceCols { x, start } => {
                    let (x, start) = (*x, *start);
                    let mut dx = Array2::zeros(self.value(x).raw_dim());
                    dx.slice_mut(s![.., start..start + grad.ncols()]).assign(&grad);
                    self.accumulate(x, &dx);
                }
                Op::ConcatCols(parts) => {
                    let parts = parts.clone();
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(p).ncols();
                        let dp = grad.slice(s![.., offset..offset + w]).to_owned();
                        offset += w;
                        self.accumulate(p, &dp);
                    }
                }
                Op::Im2col { x, kernel, stride, pad } => {
                    let (x, kernel, stride, pad) = (*x, *kernel, *stride, *pad);
                    let (in_len, channels) = self.value(x).dim();
                    let mut dx = Array2::zeros((in_len, channels));
                    for r in 0..grad.nrows() {
                        for j in 0..kernel {
                            let src = (r * stride + j) as isize - pad as isize;
                            if src < 0 || src as usize >= in_len {
                                continue;
                            }
                            for c in 0..channels {
                                dx[(src as usize, c)] += grad[(r, c * kernel + j)];
                            }
                        }
                    }
                    self.accumulate(x, &dx);
                }
                Op::CtcLoss { logits, cached_grad } => {
                    let logits = *logits;
                    let dl = cached_grad * grad[(0, 0)];
                    self.accumulate(logits, &dl);
                }
                Op::SelectLogProb { logits, row, col, softmax_row } => {
                    let (logits, row, col) = (*logits, *row, *col);
                    let g = grad[(0, 0)];
                    let mut dl = Array2::zeros(self.value(logits).raw_dim());
                    for (k, &p) in softmax_row.iter().enumerate() {
                        dl[(row, k)] = g * (f64::from(k == col) - p);
                    }
                    self.accumulate(logits, &dl);
                }
                Op::WeightedSum(terms) => {
                    let terms = terms.clone();
                    for (id, w) in terms {
                        self.accumulate(id, &(&grad * w));
                    }
                }
            }
        }
    }
}
