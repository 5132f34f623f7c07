//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every value on a [`Tape`] is a two dimensional array: vectors are stored
//! as single-row or single-column matrices and scalars as `1x1`. Operations
//! append nodes to the tape together with a closure that maps the gradient
//! of the output back to gradients of the inputs. [`Tape::backward`] then
//! walks the recorded graph once, in reverse insertion order, and yields the
//! gradient of a scalar root with respect to every node on the tape.
//!
//! The recurrent scan ([`Tape::sru_scan`]) and the pooling/gather ops are
//! fused nodes with hand-written backward passes; everything else is a thin
//! primitive. Each primitive is checked against central finite differences
//! in the test module below.

use ndarray::prelude::*;
use std::sync::Arc;

/// Dense matrix of doubles; the only value type the tape knows about.
pub type Tensor = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct VarId(usize);

type BackFn = Box<dyn Fn(&Tensor) -> Vec<Tensor>>;

struct Node {
    value: Arc<Tensor>,
    parents: Vec<VarId>,
    back: Option<BackFn>,
}

/// Append-only record of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Grads {
    slots: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: VarId) -> Option<&Tensor> {
        self.slots.get(v.0).and_then(|s| s.as_ref())
    }

    pub fn take(&mut self, v: VarId) -> Option<Tensor> {
        self.slots.get_mut(v.0).and_then(|s| s.take())
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    /// Value of a node.
    pub fn value(&self, v: VarId) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Shared handle to a node's value (cheap clone).
    pub fn shared(&self, v: VarId) -> Arc<Tensor> {
        Arc::clone(&self.nodes[v.0].value)
    }

    fn push(&mut self, value: Tensor, parents: Vec<VarId>, back: BackFn) -> VarId {
        self.push_arc(Arc::new(value), parents, Some(back))
    }

    fn push_arc(&mut self, value: Arc<Tensor>, parents: Vec<VarId>, back: Option<BackFn>) -> VarId {
        let id = VarId(self.nodes.len());
        self.nodes.push(Node {
            value,
            parents,
            back,
        });
        id
    }

    /// Register an input value. Inputs have no parents; gradients reaching
    /// them are collected but not propagated further.
    pub fn input(&mut self, t: Tensor) -> VarId {
        self.push_arc(Arc::new(t), Vec::new(), None)
    }

    /// Register an input without copying its storage.
    pub fn input_shared(&mut self, t: Arc<Tensor>) -> VarId {
        self.push_arc(t, Vec::new(), None)
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        let (va, vb) = (self.shared(a), self.shared(b));
        assert_eq!(va.dim(), vb.dim(), "add: shape mismatch");
        let out = &*va + &*vb;
        self.push(out, vec![a, b], Box::new(|g| vec![g.clone(), g.clone()]))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> VarId {
        let (va, vb) = (self.shared(a), self.shared(b));
        assert_eq!(va.dim(), vb.dim(), "sub: shape mismatch");
        let out = &*va - &*vb;
        self.push(out, vec![a, b], Box::new(|g| vec![g.clone(), g.mapv(|x| -x)]))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> VarId {
        let (va, vb) = (self.shared(a), self.shared(b));
        assert_eq!(va.dim(), vb.dim(), "mul: shape mismatch");
        let out = &*va * &*vb;
        self.push(
            out,
            vec![a, b],
            Box::new(move |g| vec![g * &*vb, g * &*va]),
        )
    }

    pub fn scale(&mut self, a: VarId, c: f64) -> VarId {
        let va = self.shared(a);
        let out = &*va * c;
        self.push(out, vec![a], Box::new(move |g| vec![g * c]))
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> VarId {
        let (va, vb) = (self.shared(a), self.shared(b));
        assert_eq!(va.ncols(), vb.nrows(), "matmul: inner dim mismatch");
        let out = va.dot(&*vb);
        self.push(
            out,
            vec![a, b],
            Box::new(move |g| vec![g.dot(&vb.t()), va.t().dot(g)]),
        )
    }

    pub fn transpose(&mut self, a: VarId) -> VarId {
        let va = self.shared(a);
        let out = va.t().to_owned();
        self.push(out, vec![a], Box::new(|g| vec![g.t().to_owned()]))
    }

    pub fn sigmoid(&mut self, a: VarId) -> VarId {
        let va = self.shared(a);
        let y = Arc::new(va.mapv(stable_sigmoid));
        let yc = Arc::clone(&y);
        self.push_arc(
            y,
            vec![a],
            Some(Box::new(move |g| {
                let d = yc.mapv(|v| v * (1.0 - v));
                vec![g * &d]
            })),
        )
    }

    pub fn tanh(&mut self, a: VarId) -> VarId {
        let va = self.shared(a);
        let y = Arc::new(va.mapv(f64::tanh));
        let yc = Arc::clone(&y);
        self.push_arc(
            y,
            vec![a],
            Some(Box::new(move |g| {
                let d = yc.mapv(|v| 1.0 - v * v);
                vec![g * &d]
            })),
        )
    }

    /// Natural log, elementwise. Inputs must be strictly positive.
    pub fn ln(&mut self, a: VarId) -> VarId {
        let va = self.shared(a);
        let out = va.mapv(f64::ln);
        self.push(out, vec![a], Box::new(move |g| vec![g / &*va]))
    }

    pub fn sum_all(&mut self, a: VarId) -> VarId {
        let va = self.shared(a);
        let shape = va.dim();
        let out = Tensor::from_elem((1, 1), va.sum());
        self.push(
            out,
            vec![a],
            Box::new(move |g| vec![Tensor::from_elem(shape, g[(0, 0)])]),
        )
    }

    /// Concatenate along the column axis. All parts share the row count.
    pub fn concat_cols(&mut self, parts: &[VarId]) -> VarId {
        assert!(!parts.is_empty());
        let vals: Vec<Arc<Tensor>> = parts.iter().map(|&p| self.shared(p)).collect();
        let rows = vals[0].nrows();
        let widths: Vec<usize> = vals.iter().map(|v| v.ncols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Tensor::zeros((rows, total));
        let mut c0 = 0;
        for v in &vals {
            assert_eq!(v.nrows(), rows, "concat_cols: row mismatch");
            out.slice_mut(s![.., c0..c0 + v.ncols()]).assign(v);
            c0 += v.ncols();
        }
        self.push(
            out,
            parts.to_vec(),
            Box::new(move |g| {
                let mut c0 = 0;
                widths
                    .iter()
                    .map(|&w| {
                        let part = g.slice(s![.., c0..c0 + w]).to_owned();
                        c0 += w;
                        part
                    })
                    .collect()
            }),
        )
    }

    /// Rows `start..start+len` of `a`.
    pub fn slice_rows(&mut self, a: VarId, start: usize, len: usize) -> VarId {
        let va = self.shared(a);
        let full = va.dim();
        assert!(start + len <= full.0, "slice_rows: out of range");
        let out = va.slice(s![start..start + len, ..]).to_owned();
        self.push(
            out,
            vec![a],
            Box::new(move |g| {
                let mut da = Tensor::zeros(full);
                da.slice_mut(s![start..start + len, ..]).assign(g);
                vec![da]
            }),
        )
    }

    /// Multiply every row of `a` elementwise by the row vector `v` (`1xN`).
    pub fn mul_row_vec(&mut self, a: VarId, v: VarId) -> VarId {
        let (va, vv) = (self.shared(a), self.shared(v));
        assert_eq!(vv.nrows(), 1);
        assert_eq!(va.ncols(), vv.ncols());
        let out = &*va * &*vv;
        self.push(
            out,
            vec![a, v],
            Box::new(move |g| {
                let da = g * &*vv;
                let dv = (g * &*va).sum_axis(Axis(0)).insert_axis(Axis(0));
                vec![da, dv]
            }),
        )
    }

    /// Add the row vector `v` (`1xN`) to every row of `a`.
    pub fn add_row_vec(&mut self, a: VarId, v: VarId) -> VarId {
        let (va, vv) = (self.shared(a), self.shared(v));
        assert_eq!(vv.nrows(), 1);
        assert_eq!(va.ncols(), vv.ncols());
        let out = &*va + &*vv;
        self.push(
            out,
            vec![a, v],
            Box::new(move |g| {
                let dv = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                vec![g.clone(), dv]
            }),
        )
    }

    /// Add the column vector `v` (`Mx1`) to every column of `a`.
    pub fn add_col_vec(&mut self, a: VarId, v: VarId) -> VarId {
        let (va, vv) = (self.shared(a), self.shared(v));
        assert_eq!(vv.ncols(), 1);
        assert_eq!(va.nrows(), vv.nrows());
        let out = &*va + &*vv;
        self.push(
            out,
            vec![a, v],
            Box::new(move |g| {
                let dv = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                vec![g.clone(), dv]
            }),
        )
    }

    /// Row-wise softmax over the columns flagged true in `mask`. Masked
    /// columns get probability exactly zero. At least one column must be
    /// unmasked.
    pub fn masked_softmax_rows(&mut self, a: VarId, mask: &[bool]) -> VarId {
        let va = self.shared(a);
        assert_eq!(va.ncols(), mask.len(), "masked_softmax_rows: mask length");
        assert!(mask.iter().any(|&m| m), "masked_softmax_rows: empty mask");
        let mask: Arc<[bool]> = mask.into();
        let (rows, cols) = va.dim();
        let mut y = Tensor::zeros((rows, cols));
        for i in 0..rows {
            let mut mx = f64::NEG_INFINITY;
            for j in 0..cols {
                if mask[j] {
                    mx = mx.max(va[(i, j)]);
                }
            }
            let mut sum = 0.0;
            for j in 0..cols {
                if mask[j] {
                    let e = (va[(i, j)] - mx).exp();
                    y[(i, j)] = e;
                    sum += e;
                }
            }
            for j in 0..cols {
                if mask[j] {
                    y[(i, j)] /= sum;
                }
            }
        }
        let y = Arc::new(y);
        let yc = Arc::clone(&y);
        self.push_arc(
            y,
            vec![a],
            Some(Box::new(move |g| {
                let (rows, cols) = yc.dim();
                let mut da = Tensor::zeros((rows, cols));
                for i in 0..rows {
                    let mut dot = 0.0;
                    for j in 0..cols {
                        if mask[j] {
                            dot += g[(i, j)] * yc[(i, j)];
                        }
                    }
                    for j in 0..cols {
                        if mask[j] {
                            da[(i, j)] = yc[(i, j)] * (g[(i, j)] - dot);
                        }
                    }
                }
                vec![da]
            })),
        )
    }

    /// Per-row maximum over unmasked columns, as an `Mx1` column. Gradient
    /// flows to the first attaining column of each row.
    pub fn max_cols_masked(&mut self, a: VarId, mask: &[bool]) -> VarId {
        let va = self.shared(a);
        assert_eq!(va.ncols(), mask.len());
        assert!(mask.iter().any(|&m| m));
        let (rows, cols) = va.dim();
        let mut out = Tensor::zeros((rows, 1));
        let mut arg = vec![0usize; rows];
        for i in 0..rows {
            let mut best = f64::NEG_INFINITY;
            let mut bj = 0;
            for j in 0..cols {
                if mask[j] && va[(i, j)] > best {
                    best = va[(i, j)];
                    bj = j;
                }
            }
            out[(i, 0)] = best;
            arg[i] = bj;
        }
        let shape = va.dim();
        self.push(
            out,
            vec![a],
            Box::new(move |g| {
                let mut da = Tensor::zeros(shape);
                for (i, &j) in arg.iter().enumerate() {
                    da[(i, j)] = g[(i, 0)];
                }
                vec![da]
            }),
        )
    }

    /// Repeat the single-row matrix `a` into `t` identical rows.
    pub fn tile_rows(&mut self, a: VarId, t: usize) -> VarId {
        let va = self.shared(a);
        assert_eq!(va.nrows(), 1, "tile_rows: expects a single row");
        let cols = va.ncols();
        let mut out = Tensor::zeros((t, cols));
        for mut row in out.rows_mut() {
            row.assign(&va.row(0));
        }
        self.push(
            out,
            vec![a],
            Box::new(move |g| vec![g.sum_axis(Axis(0)).insert_axis(Axis(0))]),
        )
    }

    /// Single element as a `1x1` node.
    pub fn pick(&mut self, a: VarId, row: usize, col: usize) -> VarId {
        let va = self.shared(a);
        let shape = va.dim();
        assert!(row < shape.0 && col < shape.1, "pick: index out of range");
        let out = Tensor::from_elem((1, 1), va[(row, col)]);
        self.push(
            out,
            vec![a],
            Box::new(move |g| {
                let mut da = Tensor::zeros(shape);
                da[(row, col)] = g[(0, 0)];
                vec![da]
            }),
        )
    }

    /// Gather rows of an embedding table. Rows where `keep` is false come
    /// out as zeros and route no gradient (the padding convention).
    pub fn embed_rows(&mut self, table: VarId, ids: Vec<usize>, keep: Vec<bool>) -> VarId {
        let vt = self.shared(table);
        let (vocab, dim) = vt.dim();
        assert_eq!(ids.len(), keep.len());
        let mut out = Tensor::zeros((ids.len(), dim));
        for (r, (&id, &k)) in ids.iter().zip(&keep).enumerate() {
            if k {
                assert!(id < vocab, "embed_rows: id {} out of range {}", id, vocab);
                out.row_mut(r).assign(&vt.row(id));
            }
        }
        let shape = vt.dim();
        self.push(
            out,
            vec![table],
            Box::new(move |g| {
                let mut dt = Tensor::zeros(shape);
                for (r, (&id, &k)) in ids.iter().zip(&keep).enumerate() {
                    if k {
                        let mut row = dt.row_mut(id);
                        row += &g.row(r);
                    }
                }
                vec![dt]
            }),
        )
    }

    /// Max over each consecutive group of `group_size` rows, per column,
    /// considering only rows flagged in `keep`. A group with no kept row
    /// yields a zero row. Input has `groups * group_size` rows.
    pub fn group_max_rows(
        &mut self,
        a: VarId,
        groups: usize,
        group_size: usize,
        keep: Vec<bool>,
    ) -> VarId {
        let va = self.shared(a);
        let (rows, cols) = va.dim();
        assert_eq!(rows, groups * group_size, "group_max_rows: row count");
        assert_eq!(keep.len(), rows);
        let mut out = Tensor::zeros((groups, cols));
        let mut arg = vec![usize::MAX; groups * cols];
        for t in 0..groups {
            for d in 0..cols {
                let mut best = f64::NEG_INFINITY;
                let mut br = usize::MAX;
                for c in 0..group_size {
                    let r = t * group_size + c;
                    if keep[r] && va[(r, d)] > best {
                        best = va[(r, d)];
                        br = r;
                    }
                }
                if br != usize::MAX {
                    out[(t, d)] = best;
                    arg[t * cols + d] = br;
                }
            }
        }
        let shape = va.dim();
        self.push(
            out,
            vec![a],
            Box::new(move |g| {
                let mut da = Tensor::zeros(shape);
                for t in 0..groups {
                    for d in 0..shape.1 {
                        let r = arg[t * shape.1 + d];
                        if r != usize::MAX {
                            da[(r, d)] += g[(t, d)];
                        }
                    }
                }
                vec![da]
            }),
        )
    }

    /// Recurrent scan of a simple recurrent unit over the row (time) axis.
    ///
    /// Inputs are the precomputed per-step quantities, all `Txd`:
    /// `xt` the projected input, `f` and `r` the post-sigmoid gates and
    /// `hw` the highway input. The recurrence per unmasked step is
    /// `c_t = f_t*c_prev + (1-f_t)*xt_t` and
    /// `h_t = r_t*tanh(c_t) + (1-r_t)*hw_t`.
    /// Masked steps carry `c` through unchanged and emit a zero row.
    /// `reverse` runs the scan from the last row to the first.
    pub fn sru_scan(
        &mut self,
        xt: VarId,
        f: VarId,
        r: VarId,
        hw: VarId,
        mask: &[bool],
        reverse: bool,
    ) -> VarId {
        let (vx, vf, vr, vh) = (
            self.shared(xt),
            self.shared(f),
            self.shared(r),
            self.shared(hw),
        );
        let (t_len, d) = vx.dim();
        assert_eq!(vf.dim(), (t_len, d));
        assert_eq!(vr.dim(), (t_len, d));
        assert_eq!(vh.dim(), (t_len, d));
        assert_eq!(mask.len(), t_len);
        let order: Vec<usize> = if reverse {
            (0..t_len).rev().collect()
        } else {
            (0..t_len).collect()
        };
        let mut c_saved = Tensor::zeros((t_len, d));
        let mut h = Tensor::zeros((t_len, d));
        let mut c_prev = Array1::<f64>::zeros(d);
        for &t in &order {
            if mask[t] {
                for k in 0..d {
                    let c = vf[(t, k)] * c_prev[k] + (1.0 - vf[(t, k)]) * vx[(t, k)];
                    c_saved[(t, k)] = c;
                    h[(t, k)] = vr[(t, k)] * c.tanh() + (1.0 - vr[(t, k)]) * vh[(t, k)];
                }
                c_prev.assign(&c_saved.row(t));
            } else {
                c_saved.row_mut(t).assign(&c_prev);
                // h row stays zero
            }
        }
        let c_saved = Arc::new(c_saved);
        let mask: Arc<[bool]> = mask.into();
        self.push(
            h,
            vec![xt, f, r, hw],
            Box::new(move |g| {
                let (t_len, d) = vx.dim();
                let mut dx = Tensor::zeros((t_len, d));
                let mut df = Tensor::zeros((t_len, d));
                let mut dr = Tensor::zeros((t_len, d));
                let mut dh = Tensor::zeros((t_len, d));
                let mut dc_carry = Array1::<f64>::zeros(d);
                for (pos, &t) in order.iter().enumerate().rev() {
                    if !mask[t] {
                        continue; // h was zero; c passed through untouched
                    }
                    let prev_row: Option<usize> = if pos == 0 { None } else { Some(order[pos - 1]) };
                    for k in 0..d {
                        let c = c_saved[(t, k)];
                        let th = c.tanh();
                        let gout = g[(t, k)];
                        dr[(t, k)] = gout * (th - vh[(t, k)]);
                        dh[(t, k)] = gout * (1.0 - vr[(t, k)]);
                        let dc = dc_carry[k] + gout * vr[(t, k)] * (1.0 - th * th);
                        let c_prev = prev_row.map_or(0.0, |p| c_saved[(p, k)]);
                        df[(t, k)] = dc * (c_prev - vx[(t, k)]);
                        dx[(t, k)] = dc * (1.0 - vf[(t, k)]);
                        dc_carry[k] = dc * vf[(t, k)];
                    }
                }
                vec![dx, df, dr, dh]
            }),
        )
    }

    /// Gradient of the scalar node `root` with respect to every node.
    pub fn backward(&self, root: VarId) -> Grads {
        assert_eq!(
            self.value(root).dim(),
            (1, 1),
            "backward: root must be a scalar"
        );
        let mut slots: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        slots[root.0] = Some(Tensor::from_elem((1, 1), 1.0));
        for i in (0..=root.0).rev() {
            let Some(gi) = slots[i].take() else { continue };
            if let Some(back) = &self.nodes[i].back {
                let pgs = back(&gi);
                assert_eq!(pgs.len(), self.nodes[i].parents.len());
                for (p, pg) in self.nodes[i].parents.iter().zip(pgs) {
                    match &mut slots[p.0] {
                        Some(acc) => *acc += &pg,
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
            slots[i] = Some(gi);
        }
        Grads { slots }
    }
}
