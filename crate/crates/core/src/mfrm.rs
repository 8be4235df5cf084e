//! Multi-scale Feature Refinement Module.
//!
//! Each FRB row is flattened over orientations and reduced by a pointwise
//! convolution. The coarsest row feeds a 3×3 convolution followed by
//! channel attention (`F ⊗ σ(Conv1×1(F))`) and, separately, a
//! four-direction IRNN. All row features plus the attention and IRNN
//! outputs are then refined by one round of pairwise message passing and
//! projected to the output width.

use rand::Rng;

use crate::autograd::{softmax, Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::Window;
use crate::layers::{Conv, ConvWeights};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{FlatFeatureMap, OrientedFeatureMap, Tensor};

/// `[N][U][H][W] → [N·U][H][W]`, channel `k·U + u` holding `g[k][u]`.
pub fn concat_orientations(g: &OrientedFeatureMap) -> FlatFeatureMap {
    let (n, u, h, w) = (g.channels(), g.orientations(), g.height(), g.width());
    let t = g.tensor().clone().reshape(&[n * u, h, w]).expect("same element count");
    FlatFeatureMap::new(t).expect("input was finite")
}

/// Inverse of [`concat_orientations`].
pub fn split_orientations(f: &FlatFeatureMap, orientations: usize) -> Result<OrientedFeatureMap> {
    if orientations == 0 || f.channels() % orientations != 0 {
        return Err(Error::Shape(format!(
            "{} channels do not split into {orientations} orientations",
            f.channels()
        )));
    }
    let t = f
        .tensor()
        .clone()
        .reshape(&[f.channels() / orientations, orientations, f.height(), f.width()])?;
    OrientedFeatureMap::new(t)
}

pub fn concat_op(tape: &Tape, g: Var) -> Result<Var> {
    let s = tape.shape(g);
    if s.len() != 4 {
        return Err(Error::Shape(format!("expected oriented map, got {s:?}")));
    }
    tape.reshape(g, &[s[0] * s[1], s[2], s[3]])
}

fn run_flat(build: impl FnOnce(&Tape) -> Result<Var>) -> Result<FlatFeatureMap> {
    let tape = Tape::new();
    let out = build(&tape)?;
    FlatFeatureMap::new((*tape.value(out)).clone())
}

fn check_pointwise(w: &ConvWeights, c_in: usize) -> Result<usize> {
    match w.weight.shape() {
        &[o, c, 1, 1] if c == c_in => Ok(o),
        s => Err(Error::Shape(format!("pointwise weights {s:?} for {c_in} input channels"))),
    }
}

/// Pointwise channel reduction.
pub fn reduce_channels(f: &FlatFeatureMap, weights: &ConvWeights) -> Result<FlatFeatureMap> {
    let c_out = check_pointwise(weights, f.channels())?;
    if c_out > f.channels() {
        return Err(Error::InvalidParam(format!(
            "reduction to {c_out} channels from {} would expand",
            f.channels()
        )));
    }
    run_flat(|tape| {
        let x = tape.leaf(f.tensor().clone());
        let (w, b) = weights.on_tape(tape);
        tape.conv2d(x, w, b, Window::new(1, 1, 0))
    })
}

/// `f ⊗ σ(w·f + b)` with a pointwise `w`.
pub fn channel_attention_op(tape: &Tape, f: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let logits = tape.conv2d(f, w, b, Window::new(1, 1, 0))?;
    let gate = tape.sigmoid(logits);
    tape.mul(f, gate)
}

pub fn channel_attention(f: &FlatFeatureMap, weights: &ConvWeights) -> Result<FlatFeatureMap> {
    let c_out = check_pointwise(weights, f.channels())?;
    if c_out != f.channels() {
        return Err(Error::Shape("attention weights must be square".into()));
    }
    run_flat(|tape| {
        let x = tape.leaf(f.tensor().clone());
        let (w, b) = weights.on_tape(tape);
        channel_attention_op(tape, x, w, b)
    })
}

/// Where a directional sweep gathers its context from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    /// State moves rightward: column `x` sees columns `≤ x`.
    FromLeft,
    /// State moves leftward: column `x` sees columns `≥ x`.
    FromRight,
    /// State moves downward: row `y` sees rows `≤ y`.
    FromTop,
    /// State moves upward: row `y` sees rows `≥ y`.
    FromBottom,
}

impl Direction {
    /// Fixed concatenation order of the four sweeps.
    pub const ALL: [Direction; 4] = [
        Direction::FromLeft,
        Direction::FromRight,
        Direction::FromTop,
        Direction::FromBottom,
    ];

    /// Flat indices (within an `h×w` plane) of each scan line, in sweep order.
    fn lines(self, h: usize, w: usize) -> Vec<Vec<usize>> {
        match self {
            Direction::FromLeft => (0..h).map(|y| (0..w).map(|x| y * w + x).collect()).collect(),
            Direction::FromRight => (0..h).map(|y| (0..w).rev().map(|x| y * w + x).collect()).collect(),
            Direction::FromTop => (0..w).map(|x| (0..h).map(|y| y * w + x).collect()).collect(),
            Direction::FromBottom => (0..w).map(|x| (0..h).rev().map(|y| y * w + x).collect()).collect(),
        }
    }
}

/// `h_t = ReLU(W·h_{t-1} + x_t)` along every line of `dir`, `h_0 = 0`.
/// Returns `(hidden, pre_activation)`, both `[g][H][W]`.
pub fn irnn_sweep(x: &Tensor, recurrence: &Tensor, dir: Direction) -> Result<(Tensor, Tensor)> {
    let (g, h, w) = match x.shape() {
        &[g, h, w] => (g, h, w),
        s => return Err(Error::Shape(format!("sweep input must be rank 3, got {s:?}"))),
    };
    if recurrence.shape() != [g, g] {
        return Err(Error::Shape(format!(
            "recurrence {:?} for {g} channels",
            recurrence.shape()
        )));
    }
    let plane = h * w;
    let wd = recurrence.data();
    let xd = x.data();
    let mut hidden = vec![0.0; g * plane];
    let mut pre = vec![0.0; g * plane];
    let mut prev = vec![0.0; g];
    let mut cur = vec![0.0; g];
    for line in dir.lines(h, w) {
        prev.iter_mut().for_each(|v| *v = 0.0);
        for &p in &line {
            for i in 0..g {
                let row = &wd[i * g..(i + 1) * g];
                let mut s = xd[i * plane + p];
                for (wij, hj) in row.iter().zip(&prev) {
                    s += wij * hj;
                }
                pre[i * plane + p] = s;
                cur[i] = s.max(0.0);
                hidden[i * plane + p] = cur[i];
            }
            std::mem::swap(&mut prev, &mut cur);
        }
    }
    Ok((Tensor::new(x.shape(), hidden)?, Tensor::new(x.shape(), pre)?))
}

fn irnn_sweep_backward(
    recurrence: &Tensor,
    hidden: &Tensor,
    pre: &Tensor,
    grad: &Tensor,
    dir: Direction,
) -> (Tensor, Tensor) {
    let (g, h, w) = (hidden.shape()[0], hidden.shape()[1], hidden.shape()[2]);
    let plane = h * w;
    let wd = recurrence.data();
    let mut gx = vec![0.0; g * plane];
    let mut gw = vec![0.0; g * g];
    let mut carry = vec![0.0; g];
    let mut dpre = vec![0.0; g];
    for line in dir.lines(h, w) {
        carry.iter_mut().for_each(|v| *v = 0.0);
        for (t, &p) in line.iter().enumerate().rev() {
            for i in 0..g {
                let dh = grad.data()[i * plane + p] + carry[i];
                dpre[i] = if pre.data()[i * plane + p] > 0.0 { dh } else { 0.0 };
                gx[i * plane + p] = dpre[i];
            }
            if t > 0 {
                let q = line[t - 1];
                for i in 0..g {
                    if dpre[i] != 0.0 {
                        for j in 0..g {
                            gw[i * g + j] += dpre[i] * hidden.data()[j * plane + q];
                        }
                    }
                }
            }
            for j in 0..g {
                carry[j] = (0..g).map(|i| wd[i * g + j] * dpre[i]).sum();
            }
        }
    }
    (
        Tensor::new(hidden.shape(), gx).expect("shape"),
        Tensor::new(&[g, g], gw).expect("shape"),
    )
}

pub fn irnn_sweep_op(tape: &Tape, x: Var, recurrence: Var, dir: Direction) -> Result<Var> {
    let vw = tape.value(recurrence);
    let (hidden, pre) = irnn_sweep(&tape.value(x), &vw, dir)?;
    let hidden_saved = hidden.clone();
    Ok(tape.custom(&[x, recurrence], hidden, move |g| {
        let (gx, gw) = irnn_sweep_backward(&vw, &hidden_saved, &pre, g, dir);
        Ok(vec![gx, gw])
    }))
}

/// Detached IRNN weights: per-direction input-to-hidden pointwise convs and
/// recurrences, then the merging pointwise conv.
#[derive(Clone, Debug, PartialEq)]
pub struct IrnnWeights {
    pub input: [ConvWeights; 4],
    pub recurrence: [Tensor; 4],
    pub output: ConvWeights,
}

impl IrnnWeights {
    /// All maps identity: each group's output equals its directional sweep.
    pub fn identity(channels: usize) -> Self {
        let g = channels / 4;
        let eye = |n: usize| {
            let mut t = Tensor::zeros(&[n, n]);
            for i in 0..n {
                t.set(&[i, i], 1.0);
            }
            t
        };
        Self {
            input: std::array::from_fn(|_| ConvWeights::identity(g)),
            recurrence: std::array::from_fn(|_| eye(g)),
            output: ConvWeights::identity(channels),
        }
    }
}

/// Variables of one IRNN application.
pub struct IrnnVars {
    pub input: [(Var, Option<Var>); 4],
    pub recurrence: [Var; 4],
    pub output: (Var, Option<Var>),
}

pub fn irnn_op(tape: &Tape, f: Var, vars: &IrnnVars) -> Result<Var> {
    let c = tape.shape(f)[0];
    if c % 4 != 0 || c == 0 {
        return Err(Error::Shape(format!("IRNN needs channels divisible by 4, got {c}")));
    }
    let g = c / 4;
    let mut outs = Vec::with_capacity(4);
    for (d, dir) in Direction::ALL.into_iter().enumerate() {
        let part = tape.slice(f, d * g, (d + 1) * g)?;
        let (w, b) = vars.input[d];
        let xin = tape.conv2d(part, w, b, Window::new(1, 1, 0))?;
        outs.push(irnn_sweep_op(tape, xin, vars.recurrence[d], dir)?);
    }
    let cat = tape.concat(&outs)?;
    let (w, b) = vars.output;
    let y = tape.conv2d(cat, w, b, Window::new(1, 1, 0))?;
    Ok(tape.relu(y))
}

pub fn irnn_forward(f: &FlatFeatureMap, weights: &IrnnWeights) -> Result<FlatFeatureMap> {
    run_flat(|tape| {
        let x = tape.leaf(f.tensor().clone());
        let vars = IrnnVars {
            input: std::array::from_fn(|d| weights.input[d].on_tape(tape)),
            recurrence: std::array::from_fn(|d| tape.leaf(weights.recurrence[d].clone())),
            output: weights.output.on_tape(tape),
        };
        irnn_op(tape, x, &vars)
    })
}

/// Row-normalised compatibilities `w_ij = softmax_{j≠i}(a_ij)`; diagonal 0.
pub fn compatibility_weights(logits: &Tensor) -> Vec<Vec<f64>> {
    let n = logits.shape()[0];
    (0..n)
        .map(|i| {
            let others: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| logits.at(&[i, j])).collect();
            let sm = if others.is_empty() { Vec::new() } else { softmax(&others) };
            let mut row = vec![0.0; n];
            let mut it = sm.into_iter();
            for (j, slot) in row.iter_mut().enumerate() {
                if j != i {
                    *slot = it.next().expect("n-1 weights");
                }
            }
            row
        })
        .collect()
}

/// Detached aggregation weights for `n` nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfWeights {
    pub messages: Vec<ConvWeights>,
    /// `[n][n]` compatibility logits; the diagonal is unused.
    pub compat: Tensor,
    pub project: ConvWeights,
}

pub struct CrfVars {
    pub messages: Vec<(Var, Option<Var>)>,
    pub compat: Var,
    pub project: (Var, Option<Var>),
}

/// Resample coarser nodes up to the first node's size; a node larger than
/// the target is an error.
fn align_nodes(tape: &Tape, nodes: &[Var]) -> Result<Vec<Var>> {
    let target = tape.shape(nodes[0]);
    let (th, tw) = (target[1], target[2]);
    nodes
        .iter()
        .map(|&n| {
            let s = tape.shape(n);
            if s[0] != target[0] {
                return Err(Error::Shape(format!("node channels {} vs {}", s[0], target[0])));
            }
            if s[1] > th || s[2] > tw {
                return Err(Error::Shape(format!(
                    "node {}x{} larger than target {th}x{tw}",
                    s[1], s[2]
                )));
            }
            tape.resize(n, th, tw)
        })
        .collect()
}

/// `proj(Σ_i [x_i + Σ_{j≠i} w_ij · M_j(x_j)])`.
pub fn crf_op(tape: &Tape, nodes: &[Var], vars: &CrfVars) -> Result<Var> {
    let n = nodes.len();
    if n == 0 || vars.messages.len() != n || tape.shape(vars.compat) != [n, n] {
        return Err(Error::Shape(format!(
            "aggregation over {n} nodes with {} message convs",
            vars.messages.len()
        )));
    }
    let nodes = align_nodes(tape, nodes)?;
    let messages: Vec<Var> = nodes
        .iter()
        .zip(&vars.messages)
        .map(|(&x, &(w, b))| tape.conv2d(x, w, b, Window::new(1, 1, 0)))
        .collect::<Result<_>>()?;
    let mut refined = Vec::with_capacity(n);
    for i in 0..n {
        if n == 1 {
            refined.push(nodes[0]);
            continue;
        }
        let logits: Vec<Var> = (0..n).filter(|&j| j != i).map(|j| tape.index(vars.compat, i * n + j)).collect();
        let cat = tape.concat(&logits)?;
        let w = tape.softmax(cat);
        let mut terms = vec![nodes[i]];
        for (slot, j) in (0..n).filter(|&j| j != i).enumerate() {
            let wij = tape.index(w, slot);
            terms.push(tape.scale_by(messages[j], wij)?);
        }
        refined.push(tape.add_n(&terms)?);
    }
    let sum = tape.add_n(&refined)?;
    let (w, b) = vars.project;
    tape.conv2d(sum, w, b, Window::new(1, 1, 0))
}

/// Message-passing aggregation over arbitrary nodes.
pub fn crf_aggregate_nodes(features: &[FlatFeatureMap], weights: &CrfWeights) -> Result<FlatFeatureMap> {
    run_flat(|tape| {
        let nodes: Vec<Var> = features.iter().map(|f| tape.leaf(f.tensor().clone())).collect();
        let vars = CrfVars {
            messages: weights.messages.iter().map(|m| m.on_tape(tape)).collect(),
            compat: tape.leaf(weights.compat.clone()),
            project: weights.project.on_tape(tape),
        };
        crf_op(tape, &nodes, &vars)
    })
}

/// Aggregate the multi-scale features with the attention and IRNN outputs.
pub fn crf_aggregate(
    scale_features: &[FlatFeatureMap],
    f_att: &FlatFeatureMap,
    f_irnn: &FlatFeatureMap,
    weights: &CrfWeights,
) -> Result<FlatFeatureMap> {
    let mut nodes = scale_features.to_vec();
    nodes.push(f_att.clone());
    nodes.push(f_irnn.clone());
    crf_aggregate_nodes(&nodes, weights)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MfrmConfig {
    pub channels: usize,
    pub orientations: usize,
    pub scales: usize,
    pub norm: bool,
}

#[derive(Clone, Debug)]
pub struct Irnn {
    pub input: Vec<Conv>,
    pub recurrence: Vec<ParamId>,
    pub output: Conv,
}

#[derive(Clone, Debug)]
pub struct Crf {
    pub messages: Vec<Conv>,
    pub compat: ParamId,
    pub project: Conv,
}

#[derive(Clone, Debug)]
pub struct Mfrm {
    pub config: MfrmConfig,
    pub reduce: Vec<Conv>,
    pub pre_attention: Conv,
    pub attention: Conv,
    pub irnn: Irnn,
    pub crf: Crf,
}

fn pair(tape: &Tape, store: &ParamStore, c: &Conv) -> (Var, Option<Var>) {
    (tape.param(store, c.weight), c.bias.map(|b| tape.param(store, b)))
}

impl Mfrm {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, config: &MfrmConfig) -> Result<Self> {
        let n = config.channels;
        if n == 0 || n % 4 != 0 {
            return Err(Error::Config(format!("MFRM channels must be a positive multiple of 4, got {n}")));
        }
        let nu = n * config.orientations;
        let reduce = (0..config.scales)
            .map(|r| Conv::pointwise(store, rng, &format!("mfrm.reduce{}", r + 1), nu, n))
            .collect();
        let pre_attention = Conv::new(store, rng, "mfrm.pre_attention", n, n, Window::same(3), config.norm);
        let attention = Conv::pointwise(store, rng, "mfrm.attention", n, n);
        let g = n / 4;
        let mut input = Vec::new();
        let mut recurrence = Vec::new();
        for d in 0..4 {
            input.push(Conv::pointwise(store, rng, &format!("mfrm.irnn.input{d}"), g, g));
            let mut eye = Tensor::zeros(&[g, g]);
            for i in 0..g {
                eye.set(&[i, i], 1.0);
            }
            recurrence.push(store.add(format!("mfrm.irnn.recurrence{d}"), eye));
        }
        let output = Conv::pointwise(store, rng, "mfrm.irnn.output", n, n);
        let nodes = config.scales + 2;
        let messages = (0..nodes)
            .map(|i| Conv::pointwise(store, rng, &format!("mfrm.crf.message{i}"), n, n))
            .collect();
        let compat = store.add("mfrm.crf.compat", Tensor::zeros(&[nodes, nodes]));
        let project = Conv::pointwise(store, rng, "mfrm.crf.project", n, n);
        Ok(Self {
            config: config.clone(),
            reduce,
            pre_attention,
            attention,
            irnn: Irnn {
                input,
                recurrence,
                output,
            },
            crf: Crf {
                messages,
                compat,
                project,
            },
        })
    }

    /// `rows` are the FRB outputs `[N][U][h_r][w_r]`, finest first.
    pub fn forward(&self, tape: &Tape, store: &ParamStore, rows: &[Var]) -> Result<Var> {
        if rows.len() != self.reduce.len() {
            return Err(Error::Shape(format!(
                "MFRM expects {} scales, got {}",
                self.reduce.len(),
                rows.len()
            )));
        }
        let mut reduced = Vec::with_capacity(rows.len());
        for (row, conv) in rows.iter().zip(&self.reduce) {
            let flat = concat_op(tape, *row)?;
            reduced.push(conv.forward(tape, store, flat)?);
        }
        let target = tape.shape(reduced[0]);
        let last = tape.resize(*reduced.last().expect("rows"), target[1], target[2])?;

        let pre = self.pre_attention.forward(tape, store, last)?;
        let pre = tape.relu(pre);
        let (aw, ab) = pair(tape, store, &self.attention);
        let f_att = channel_attention_op(tape, pre, aw, ab)?;

        let vars = IrnnVars {
            input: std::array::from_fn(|d| pair(tape, store, &self.irnn.input[d])),
            recurrence: std::array::from_fn(|d| tape.param(store, self.irnn.recurrence[d])),
            output: pair(tape, store, &self.irnn.output),
        };
        let f_irnn = irnn_op(tape, last, &vars)?;

        let mut nodes = reduced;
        nodes.push(f_att);
        nodes.push(f_irnn);
        let crf = CrfVars {
            messages: self.crf.messages.iter().map(|m| pair(tape, store, m)).collect(),
            compat: tape.param(store, self.crf.compat),
            project: pair(tape, store, &self.crf.project),
        };
        let agg = crf_op(tape, &nodes, &crf)?;
        Ok(tape.relu(agg))
    }
}
