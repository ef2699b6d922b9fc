use std::collections::HashMap;

use super::optim::{ParamId, ParamStore};
use super::val;
use super::{DiffError, Tensor};

/// Handle to a node on a [`Tape`]. Only valid for the tape that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op {
    Const,
    Param { slot: usize, id: ParamId },
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    Matmul(NodeId, NodeId),
    MatmulNt(NodeId, NodeId),
    Linear { x: NodeId, w: NodeId, b: NodeId },
    Relu(NodeId),
    Sigmoid(NodeId),
    SoftmaxRows(NodeId),
    LogSoftmaxRows(NodeId),
    NormalizeRows(NodeId),
    EntropyRows(NodeId),
    KlRows { p: NodeId, log_q: NodeId },
    Mse(NodeId, NodeId),
    NllRows { log_p: NodeId, labels: Vec<usize> },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients keyed by `(store slot, parameter id)`, produced by
/// [`Tape::backward`] and absorbed into stores with [`ParamStore::absorb`].
#[derive(Debug, Default)]
pub struct GradMap {
    grads: HashMap<(usize, ParamId), Tensor>,
}

impl GradMap {
    pub fn get(&self, slot: usize, id: ParamId) -> Option<&Tensor> {
        self.grads.get(&(slot, id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, ParamId), &Tensor)> {
        self.grads.iter()
    }

    fn accumulate(&mut self, slot: usize, id: ParamId, g: &Tensor) {
        self.grads
            .entry((slot, id))
            .and_modify(|t| t.add_assign(g))
            .or_insert_with(|| g.clone());
    }

    /// Merges another gradient map into this one, summing overlaps.
    pub fn merge(&mut self, other: GradMap) {
        for ((slot, id), g) in other.grads {
            self.accumulate(slot, id, &g);
        }
    }
}

/// Records one forward pass; node ids index into creation order, which is
/// also a topological order since every input exists before its consumer.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Const)
    }

    /// Parameter leaf; gradients flow back under `(slot, id)`.
    pub fn param(&mut self, slot: usize, store: &ParamStore, id: ParamId) -> NodeId {
        self.push(store.value(id).clone(), Op::Param { slot, id })
    }

    /// Re-enters a node's current value as a constant, cutting the gradient
    /// path behind it.
    pub fn detach(&mut self, id: NodeId) -> NodeId {
        let v = self.value(id).clone();
        self.constant(v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(DiffError::ShapeMismatch(format!(
                "add {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let mut v = self.value(a).clone();
        v.scale_assign(c);
        self.push(v, Op::Scale(a, c))
    }

    /// Sums scalar nodes; errors on an empty list.
    pub fn sum_scalars(&mut self, ids: &[NodeId]) -> Result<NodeId, DiffError> {
        let (&first, rest) = ids.split_first().ok_or(DiffError::NotScalar)?;
        let mut acc = first;
        for &id in rest {
            acc = self.add(acc, id)?;
        }
        Ok(acc)
    }

    /// Mean of scalar nodes; errors on an empty list.
    pub fn mean_scalars(&mut self, ids: &[NodeId]) -> Result<NodeId, DiffError> {
        let total = self.sum_scalars(ids)?;
        Ok(self.scale(total, 1.0 / ids.len() as f64))
    }

    fn require_2d(&self, id: NodeId, what: &str) -> Result<(usize, usize), DiffError> {
        let s = self.value(id).shape();
        if s.len() != 2 {
            return Err(DiffError::ShapeMismatch(format!("{what} needs a 2-D tensor, got {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let (_, k) = self.require_2d(a, "matmul lhs")?;
        let (bk, _) = self.require_2d(b, "matmul rhs")?;
        if k != bk {
            return Err(DiffError::ShapeMismatch(format!("matmul inner dims {k} vs {bk}")));
        }
        let v = val::matmul(self.value(a), self.value(b));
        Ok(self.push(v, Op::Matmul(a, b)))
    }

    /// `a * b^T`; a Gram matrix when `a` and `b` are the same node.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let (_, k) = self.require_2d(a, "matmul_nt lhs")?;
        let (_, bk) = self.require_2d(b, "matmul_nt rhs")?;
        if k != bk {
            return Err(DiffError::ShapeMismatch(format!("matmul_nt inner dims {k} vs {bk}")));
        }
        let v = val::matmul_nt(self.value(a), self.value(b));
        Ok(self.push(v, Op::MatmulNt(a, b)))
    }

    /// `x w + b` with the bias broadcast over rows.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let (_, d) = self.require_2d(x, "linear input")?;
        let (wd, m) = self.require_2d(w, "linear weight")?;
        if d != wd {
            return Err(DiffError::ShapeMismatch(format!("linear input dim {d} vs weight rows {wd}")));
        }
        if self.value(b).shape() != [m] {
            return Err(DiffError::ShapeMismatch(format!(
                "linear bias {:?} vs {m} outputs",
                self.value(b).shape()
            )));
        }
        let v = val::linear(self.value(x), self.value(w), self.value(b));
        Ok(self.push(v, Op::Linear { x, w, b }))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = val::relu(self.value(a));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = val::sigmoid(self.value(a));
        self.push(v, Op::Sigmoid(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.require_2d(a, "softmax_rows")?;
        let v = val::softmax_rows(self.value(a));
        Ok(self.push(v, Op::SoftmaxRows(a)))
    }

    pub fn log_softmax_rows(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.require_2d(a, "log_softmax_rows")?;
        let v = val::log_softmax_rows(self.value(a));
        Ok(self.push(v, Op::LogSoftmaxRows(a)))
    }

    pub fn l2_normalize_rows(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.require_2d(a, "l2_normalize_rows")?;
        let v = val::l2_normalize_rows(self.value(a));
        Ok(self.push(v, Op::NormalizeRows(a)))
    }

    fn require_distribution(&self, p: NodeId) -> Result<(), DiffError> {
        val::check_distribution_rows(self.value(p))
            .map_err(|(row, sum, min)| DiffError::NotADistribution { row, sum, min })
    }

    /// Mean row entropy of a stochastic matrix, `0 ln 0 := 0`.
    pub fn entropy_rows(&mut self, p: NodeId) -> Result<NodeId, DiffError> {
        self.require_2d(p, "entropy_rows")?;
        self.require_distribution(p)?;
        let v = Tensor::scalar(val::entropy_rows(self.value(p)));
        Ok(self.push(v, Op::EntropyRows(p)))
    }

    /// Mean row KL divergence `sum p (ln p - log_q)`; `log_q` is given in
    /// log space as produced by [`Tape::log_softmax_rows`].
    pub fn kl_rows(&mut self, p: NodeId, log_q: NodeId) -> Result<NodeId, DiffError> {
        self.require_2d(p, "kl_rows p")?;
        self.require_2d(log_q, "kl_rows log_q")?;
        if self.value(p).shape() != self.value(log_q).shape() {
            return Err(DiffError::ShapeMismatch(format!(
                "kl_rows {:?} vs {:?}",
                self.value(p).shape(),
                self.value(log_q).shape()
            )));
        }
        self.require_distribution(p)?;
        let v = Tensor::scalar(val::kl_rows(self.value(p), self.value(log_q)));
        Ok(self.push(v, Op::KlRows { p, log_q }))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(DiffError::ShapeMismatch(format!(
                "mse {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let n = self.value(a).len() as f64;
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        Ok(self.push(Tensor::scalar(s / n), Op::Mse(a, b)))
    }

    /// Mean negative log-likelihood of the labeled entries of a
    /// log-probability matrix (rows from [`Tape::log_softmax_rows`]).
    pub fn nll_rows(&mut self, log_p: NodeId, labels: &[usize]) -> Result<NodeId, DiffError> {
        let (n, k) = self.require_2d(log_p, "nll_rows")?;
        if labels.len() != n {
            return Err(DiffError::ShapeMismatch(format!("{} labels for {n} rows", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(DiffError::ShapeMismatch(format!("label {bad} out of range for {k} classes")));
        }
        let mut s = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            s -= self.value(log_p).get2(i, l);
        }
        let v = Tensor::scalar(s / n as f64);
        Ok(self.push(v, Op::NllRows { log_p, labels: labels.to_vec() }))
    }

    /// Runs reverse accumulation from a scalar loss. Visits each node once in
    /// reverse creation order; gradients for shared inputs accumulate by
    /// addition. The tape itself is left untouched and is normally dropped
    /// right after.
    pub fn backward(&self, loss: NodeId) -> Result<GradMap, DiffError> {
        if !self.value(loss).is_scalar() {
            return Err(DiffError::NotScalar);
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut out = GradMap::default();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Const => {}
                Op::Param { slot, id } => out.accumulate(*slot, *id, &g),
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Scale(a, c) => {
                    let mut ga = g;
                    ga.scale_assign(*c);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Matmul(a, b) => {
                    let ga = val::matmul_nt(&g, self.value(*b));
                    let gb = val::matmul_tn(self.value(*a), &g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatmulNt(a, b) => {
                    let ga = val::matmul(&g, self.value(*b));
                    let gb = val::matmul_tn(&g, self.value(*a));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Linear { x, w, b } => {
                    let gx = val::matmul_nt(&g, self.value(*w));
                    let gw = val::matmul_tn(self.value(*x), &g);
                    let m = g.cols();
                    let mut gb = Tensor::zeros(&[m]);
                    for i in 0..g.rows() {
                        for j in 0..m {
                            gb.data_mut()[j] += g.get2(i, j);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    for (gv, xv) in ga.data_mut().iter_mut().zip(self.value(*a).data()) {
                        if *xv <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    for (gv, yv) in ga.data_mut().iter_mut().zip(self.nodes[idx].value.data()) {
                        *gv *= yv * (1.0 - yv);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &self.nodes[idx].value;
                    let (n, d) = (y.rows(), y.cols());
                    let mut ga = Tensor::zeros(&[n, d]);
                    for i in 0..n {
                        let dot: f64 =
                            (0..d).map(|j| g.get2(i, j) * y.get2(i, j)).sum();
                        for j in 0..d {
                            ga.data_mut()[i * d + j] = y.get2(i, j) * (g.get2(i, j) - dot);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LogSoftmaxRows(a) => {
                    let y = &self.nodes[idx].value;
                    let (n, d) = (y.rows(), y.cols());
                    let mut ga = Tensor::zeros(&[n, d]);
                    for i in 0..n {
                        let gsum: f64 = (0..d).map(|j| g.get2(i, j)).sum();
                        for j in 0..d {
                            ga.data_mut()[i * d + j] =
                                g.get2(i, j) - y.get2(i, j).exp() * gsum;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::NormalizeRows(a) => {
                    let x = self.value(*a);
                    let y = &self.nodes[idx].value;
                    let (n, d) = (x.rows(), x.cols());
                    let mut ga = Tensor::zeros(&[n, d]);
                    for i in 0..n {
                        let norm = x
                            .row(i)
                            .iter()
                            .map(|v| v * v)
                            .sum::<f64>()
                            .sqrt()
                            .max(val::NORM_FLOOR);
                        let dot: f64 = (0..d).map(|j| g.get2(i, j) * y.get2(i, j)).sum();
                        for j in 0..d {
                            ga.data_mut()[i * d + j] =
                                (g.get2(i, j) - y.get2(i, j) * dot) / norm;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::EntropyRows(p) => {
                    let pv = self.value(*p);
                    let (n, d) = (pv.rows(), pv.cols());
                    let gs = g.value() / n as f64;
                    let mut gp = Tensor::zeros(&[n, d]);
                    for i in 0..n {
                        for j in 0..d {
                            let v = pv.get2(i, j);
                            if v > 0.0 {
                                gp.data_mut()[i * d + j] = -gs * (v.ln() + 1.0);
                            }
                        }
                    }
                    accumulate(&mut grads, *p, gp);
                }
                Op::KlRows { p, log_q } => {
                    let pv = self.value(*p);
                    let qv = self.value(*log_q);
                    let (n, d) = (pv.rows(), pv.cols());
                    let gs = g.value() / n as f64;
                    let mut gp = Tensor::zeros(&[n, d]);
                    let mut gq = Tensor::zeros(&[n, d]);
                    for i in 0..n {
                        for j in 0..d {
                            let v = pv.get2(i, j);
                            if v > 0.0 {
                                gp.data_mut()[i * d + j] =
                                    gs * (v.ln() - qv.get2(i, j) + 1.0);
                            }
                            gq.data_mut()[i * d + j] = -gs * v;
                        }
                    }
                    accumulate(&mut grads, *p, gp);
                    accumulate(&mut grads, *log_q, gq);
                }
                Op::Mse(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let gs = 2.0 * g.value() / av.len() as f64;
                    let mut ga = av.clone();
                    for (v, bvv) in ga.data_mut().iter_mut().zip(bv.data()) {
                        *v = gs * (*v - bvv);
                    }
                    let mut gb = ga.clone();
                    gb.scale_assign(-1.0);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::NllRows { log_p, labels } => {
                    let (n, d) = (self.value(*log_p).rows(), self.value(*log_p).cols());
                    let gs = g.value() / n as f64;
                    let mut gp = Tensor::zeros(&[n, d]);
                    for (i, &l) in labels.iter().enumerate() {
                        gp.data_mut()[i * d + l] = -gs;
                    }
                    accumulate(&mut grads, *log_p, gp);
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(t) => t.add_assign(&g),
        slot => *slot = Some(g),
    }
}
