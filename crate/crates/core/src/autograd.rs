//! A small reverse-mode tape.
//!
//! Every forward op records its output value and a closure mapping the
//! output gradient to gradients for each parent. One tape is built per
//! sample; parameters enter through [`Tape::param`] so their gradients can be
//! collected by id after [`Tape::backward`].

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::kernels::{self, Window};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

type BackwardFn = Box<dyn Fn(&Tensor) -> Result<Vec<Tensor>>>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<ParamId, Var>>,
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: HashMap<ParamId, Var>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for a parameter; zero-shaped `None` if it never entered the tape.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id).and_then(|v| self.wrt(*v))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, value: Tensor, parents: Vec<usize>, backward: Option<BackwardFn>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            parents,
            backward,
        });
        Var(nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf whose gradient is available through [`Gradients::wrt`].
    pub fn leaf(&self, t: Tensor) -> Var {
        self.push(t, Vec::new(), None)
    }

    /// The tape-local leaf for a stored parameter (one leaf per id).
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.params.borrow().get(&id) {
            return *v;
        }
        let v = self.leaf(store.get(id).clone());
        self.params.borrow_mut().insert(id, v);
        v
    }

    /// Backpropagate from a scalar root (seed gradient 1).
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let seed = {
            let nodes = self.nodes.borrow();
            let v = &nodes[root.0].value;
            if v.len() != 1 {
                return Err(Error::Shape(format!(
                    "backward root must be scalar, got {:?}",
                    v.shape()
                )));
            }
            Tensor::full(v.shape(), 1.0)
        };
        self.backward_with(root, seed)
    }

    pub fn backward_with(&self, root: Var, seed: Tensor) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if let Some(back) = &node.backward {
                let parent_grads = back(&g)?;
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (&p, pg) in node.parents.iter().zip(parent_grads) {
                    match &mut grads[p] {
                        Some(acc) => acc.add_assign(&pg),
                        slot => *slot = Some(pg),
                    }
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: self.params.borrow().clone(),
        })
    }

    fn check_same(&self, a: Var, b: Var, op: &str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape(format!("{op}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "add")?;
        let out = self.value(a).zip_map(&self.value(b), |x, y| x + y);
        Ok(self.push(out, vec![a.0, b.0], Some(Box::new(|g| Ok(vec![g.clone(), g.clone()])))))
    }

    pub fn add_n(&self, xs: &[Var]) -> Result<Var> {
        let (first, rest) = xs
            .split_first()
            .ok_or_else(|| Error::Shape("add_n of nothing".into()))?;
        let mut out = (*self.value(*first)).clone();
        for &x in rest {
            self.check_same(*first, x, "add_n")?;
            out.add_assign(&self.value(x));
        }
        let n = xs.len();
        Ok(self.push(
            out,
            xs.iter().map(|v| v.0).collect(),
            Some(Box::new(move |g| Ok(vec![g.clone(); n]))),
        ))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "mul")?;
        let (va, vb) = (self.value(a), self.value(b));
        let out = va.zip_map(&vb, |x, y| x * y);
        Ok(self.push(
            out,
            vec![a.0, b.0],
            Some(Box::new(move |g| {
                Ok(vec![g.zip_map(&vb, |d, y| d * y), g.zip_map(&va, |d, x| d * x)])
            })),
        ))
    }

    pub fn scale(&self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, vec![a.0], Some(Box::new(move |g| Ok(vec![g.map(|d| d * s)]))))
    }

    pub fn relu(&self, a: Var) -> Var {
        let va = self.value(a);
        let out = va.map(|x| x.max(0.0));
        self.push(
            out,
            vec![a.0],
            Some(Box::new(move |g| {
                Ok(vec![g.zip_map(&va, |d, x| if x > 0.0 { d } else { 0.0 })])
            })),
        )
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let out = Rc::new(self.value(a).map(sigmoid));
        let y = Rc::clone(&out);
        self.push(
            (*out).clone(),
            vec![a.0],
            Some(Box::new(move |g| Ok(vec![g.zip_map(&y, |d, s| d * s * (1.0 - s))]))),
        )
    }

    pub fn tanh(&self, a: Var) -> Var {
        let out = Rc::new(self.value(a).map(f64::tanh));
        let y = Rc::clone(&out);
        self.push(
            (*out).clone(),
            vec![a.0],
            Some(Box::new(move |g| Ok(vec![g.zip_map(&y, |d, t| d * (1.0 - t * t))]))),
        )
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let src_shape = self.shape(a);
        let out = (*self.value(a)).clone().reshape(shape)?;
        Ok(self.push(
            out,
            vec![a.0],
            Some(Box::new(move |g| Ok(vec![g.clone().reshape(&src_shape)?]))),
        ))
    }

    /// Concatenate along the leading axis.
    pub fn concat(&self, xs: &[Var]) -> Result<Var> {
        let values: Vec<Rc<Tensor>> = xs.iter().map(|&x| self.value(x)).collect();
        let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
        let out = Tensor::concat_outer(&refs)?;
        let leads: Vec<usize> = values.iter().map(|v| v.shape()[0]).collect();
        Ok(self.push(
            out,
            xs.iter().map(|v| v.0).collect(),
            Some(Box::new(move |g| {
                let mut start = 0;
                Ok(leads
                    .iter()
                    .map(|&n| {
                        let s = g.slice_outer(start, start + n);
                        start += n;
                        s
                    })
                    .collect())
            })),
        ))
    }

    /// Rows `[start, end)` of the leading axis.
    pub fn slice(&self, a: Var, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(a);
        if start >= end || end > shape[0] {
            return Err(Error::Shape(format!("slice {start}..{end} of {shape:?}")));
        }
        let out = self.value(a).slice_outer(start, end);
        let inner: usize = shape[1..].iter().product();
        Ok(self.push(
            out,
            vec![a.0],
            Some(Box::new(move |g| {
                let mut full = Tensor::zeros(&shape);
                full.data_mut()[start * inner..end * inner].copy_from_slice(g.data());
                Ok(vec![full])
            })),
        ))
    }

    /// Single element `i` of a tensor, as a shape-`[1]` scalar.
    pub fn index(&self, a: Var, i: usize) -> Var {
        let shape = self.shape(a);
        let out = Tensor::scalar(self.value(a).data()[i]);
        self.push(
            out,
            vec![a.0],
            Some(Box::new(move |g| {
                let mut full = Tensor::zeros(&shape);
                full.data_mut()[i] = g.data()[0];
                Ok(vec![full])
            })),
        )
    }

    /// `x * s` for a shape-`[1]` scalar variable `s`.
    pub fn scale_by(&self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::Shape("scale_by needs a scalar".into()));
        }
        let (vx, vs) = (self.value(x), self.value(s));
        let sv = vs.data()[0];
        let out = vx.map(|v| v * sv);
        Ok(self.push(
            out,
            vec![x.0, s.0],
            Some(Box::new(move |g| {
                let ds: f64 = g.data().iter().zip(vx.data()).map(|(a, b)| a * b).sum();
                Ok(vec![g.map(|d| d * sv), Tensor::scalar(ds)])
            })),
        ))
    }

    /// Softmax over all elements of `a`.
    pub fn softmax(&self, a: Var) -> Var {
        let out = Rc::new(softmax(self.value(a).data()));
        let shape = self.shape(a);
        let y = Rc::clone(&out);
        self.push(
            Tensor::new(&shape, (*out).clone()).expect("softmax preserves length"),
            vec![a.0],
            Some(Box::new(move |g| {
                let dot: f64 = g.data().iter().zip(y.iter()).map(|(d, s)| d * s).sum();
                let grad = g
                    .data()
                    .iter()
                    .zip(y.iter())
                    .map(|(d, s)| s * (d - dot))
                    .collect();
                Ok(vec![Tensor::new(g.shape(), grad)?])
            })),
        )
    }

    /// Plain convolution of `[C][H][W]` by `[O][C][k][k]`, optional `[O]` bias.
    pub fn conv2d(&self, x: Var, w: Var, b: Option<Var>, win: Window) -> Result<Var> {
        let (vx, vw) = (self.value(x), self.value(w));
        let vb = b.map(|b| self.value(b));
        let out = kernels::conv2d_forward(&vx, &vw, vb.as_ref().map(|t| t.data()), win)?;
        let mut parents = vec![x.0, w.0];
        parents.extend(b.map(|b| b.0));
        let has_bias = b.is_some();
        Ok(self.push(
            out,
            parents,
            Some(Box::new(move |g| {
                let (gx, gw, gb) = kernels::conv2d_backward(&vx, &vw, g, win)?;
                let mut out = vec![gx, gw];
                if has_bias {
                    let n = gb.len();
                    out.push(Tensor::new(&[n], gb)?);
                }
                Ok(out)
            })),
        ))
    }

    /// Transposed convolution of `[Ci][H][W]` by `[Ci][Co][k][k]`.
    pub fn deconv2d(&self, x: Var, w: Var, b: Option<Var>, win: Window, output_padding: usize) -> Result<Var> {
        let (vx, vw) = (self.value(x), self.value(w));
        let vb = b.map(|b| self.value(b));
        let out = kernels::deconv2d_forward(&vx, &vw, vb.as_ref().map(|t| t.data()), win, output_padding)?;
        let mut parents = vec![x.0, w.0];
        parents.extend(b.map(|b| b.0));
        let has_bias = b.is_some();
        Ok(self.push(
            out,
            parents,
            Some(Box::new(move |g| {
                let (gx, gw, gb) = kernels::deconv2d_backward(&vx, &vw, g, win, output_padding)?;
                let mut out = vec![gx, gw];
                if has_bias {
                    let n = gb.len();
                    out.push(Tensor::new(&[n], gb)?);
                }
                Ok(out)
            })),
        ))
    }

    /// Bilinear resampling of `[C][H][W]` to `[C][oh][ow]`.
    pub fn resize(&self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let vx = self.value(x);
        let (h, w) = (vx.shape()[1], vx.shape()[2]);
        let out = kernels::resize_bilinear(&vx, oh, ow)?;
        Ok(self.push(
            out,
            vec![x.0],
            Some(Box::new(move |g| Ok(vec![kernels::resize_bilinear_backward(g, h, w)?]))),
        ))
    }

    pub fn avg_pool(&self, x: Var, factor: usize) -> Result<Var> {
        let shape = self.shape(x);
        let out = kernels::avg_pool(&self.value(x), factor)?;
        Ok(self.push(
            out,
            vec![x.0],
            Some(Box::new(move |g| Ok(vec![kernels::avg_pool_backward(g, &shape, factor)?]))),
        ))
    }

    /// Per-channel normalization over every axis after the first, followed by
    /// the affine `gamma * x̂ + beta`.
    pub fn channel_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let vx = self.value(x);
        let (vg, vb) = (self.value(gamma), self.value(beta));
        let c = vx.shape()[0];
        if vg.len() != c || vb.len() != c {
            return Err(Error::Shape("norm affine size".into()));
        }
        let m = vx.len() / c;
        let mut xhat = vec![0.0; vx.len()];
        let mut inv = vec![0.0; c];
        let mut out = vec![0.0; vx.len()];
        for ch in 0..c {
            let src = &vx.data()[ch * m..(ch + 1) * m];
            let mean = src.iter().sum::<f64>() / m as f64;
            let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let iv = 1.0 / (var + eps).sqrt();
            inv[ch] = iv;
            for i in 0..m {
                let xh = (src[i] - mean) * iv;
                xhat[ch * m + i] = xh;
                out[ch * m + i] = vg.data()[ch] * xh + vb.data()[ch];
            }
        }
        let shape = vx.shape().to_vec();
        let out = Tensor::new(&shape, out)?;
        Ok(self.push(
            out,
            vec![x.0, gamma.0, beta.0],
            Some(Box::new(move |g| {
                let mut gx = vec![0.0; g.len()];
                let mut gg = vec![0.0; c];
                let mut gb = vec![0.0; c];
                for ch in 0..c {
                    let gs = &g.data()[ch * m..(ch + 1) * m];
                    let xs = &xhat[ch * m..(ch + 1) * m];
                    let gamma = vg.data()[ch];
                    let mut sum_d = 0.0;
                    let mut sum_dx = 0.0;
                    for i in 0..m {
                        gg[ch] += gs[i] * xs[i];
                        gb[ch] += gs[i];
                        let d = gs[i] * gamma;
                        sum_d += d;
                        sum_dx += d * xs[i];
                    }
                    let k = inv[ch] / m as f64;
                    for i in 0..m {
                        let d = gs[i] * gamma;
                        gx[ch * m + i] = k * (m as f64 * d - sum_d - xs[i] * sum_dx);
                    }
                }
                Ok(vec![
                    Tensor::new(&shape, gx)?,
                    Tensor::new(&[c], gg)?,
                    Tensor::new(&[c], gb)?,
                ])
            })),
        ))
    }

    /// Record an op whose forward value and parent gradients are computed
    /// elsewhere. `local_grads[i]` is d(out)/d(parent_i) for a scalar output.
    pub fn custom_scalar(&self, parents: &[Var], value: f64, local_grads: Vec<Tensor>) -> Result<Var> {
        if parents.len() != local_grads.len() {
            return Err(Error::Shape("custom_scalar arity".into()));
        }
        for (&p, lg) in parents.iter().zip(&local_grads) {
            if self.shape(p) != lg.shape() {
                return Err(Error::Shape("custom_scalar gradient shape".into()));
            }
        }
        Ok(self.push(
            Tensor::scalar(value),
            parents.iter().map(|v| v.0).collect(),
            Some(Box::new(move |g| {
                let s = g.data()[0];
                Ok(local_grads.iter().map(|lg| lg.map(|v| v * s)).collect())
            })),
        ))
    }

    /// Record an op with a caller-supplied backward closure.
    pub fn custom(
        &self,
        parents: &[Var],
        value: Tensor,
        backward: impl Fn(&Tensor) -> Result<Vec<Tensor>> + 'static,
    ) -> Var {
        self.push(value, parents.iter().map(|v| v.0).collect(), Some(Box::new(backward)))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
