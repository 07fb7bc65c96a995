use rand::Rng;

use crate::autodiff::{Graph, NodeId, ParamSet, Tensor};
use crate::error::Result;
use crate::init::uniform;

pub(crate) fn init_linear(p: &mut ParamSet, rng: &mut impl Rng, name: &str, out: usize, inp: usize) -> Result<()> {
    p.insert(format!("{name}.W"), uniform(rng, &[out, inp], inp))?;
    p.insert(format!("{name}.b"), Tensor::zeros(&[out]))
}

pub(crate) fn init_gru(p: &mut ParamSet, rng: &mut impl Rng, name: &str, inp: usize, hidden: usize) -> Result<()> {
    p.insert(format!("{name}.Wx"), uniform(rng, &[3 * hidden, inp], inp))?;
    p.insert(format!("{name}.Wh"), uniform(rng, &[3 * hidden, hidden], hidden))?;
    p.insert(format!("{name}.bx"), Tensor::zeros(&[3 * hidden]))?;
    p.insert(format!("{name}.bh"), Tensor::zeros(&[3 * hidden]))
}

pub(crate) fn init_conv(
    p: &mut ParamSet,
    rng: &mut impl Rng,
    name: &str,
    out: usize,
    inp: usize,
    width: usize,
) -> Result<()> {
    p.insert(format!("{name}.K"), uniform(rng, &[out, inp, width], inp * width))?;
    p.insert(format!("{name}.b"), Tensor::zeros(&[out]))
}

/// `W x + b` on a vector.
pub(crate) fn linear(g: &mut Graph, p: &ParamSet, name: &str, x: NodeId) -> Result<NodeId> {
    let w = g.param(p, &format!("{name}.W"))?;
    let b = g.param(p, &format!("{name}.b"))?;
    let y = g.matvec(w, x)?;
    g.add(y, b)
}

/// `X Wᵀ + b` on every row.
pub(crate) fn linear_rows(g: &mut Graph, p: &ParamSet, name: &str, x: NodeId) -> Result<NodeId> {
    let w = g.param(p, &format!("{name}.W"))?;
    let b = g.param(p, &format!("{name}.b"))?;
    let y = g.matmul_nt(x, w)?;
    g.add_bias(y, b)
}

pub(crate) fn conv(g: &mut Graph, p: &ParamSet, name: &str, x: NodeId) -> Result<NodeId> {
    let k = g.param(p, &format!("{name}.K"))?;
    let b = g.param(p, &format!("{name}.b"))?;
    let y = g.conv1d(x, k)?;
    g.add_bias(y, b)
}

/// Gated recurrent cell:
/// `r = σ(..)`, `z = σ(..)`, `n = tanh(Wx_n x + b + r ⊙ (Wh_n h + b))`,
/// `h' = (1 - z) ⊙ n + z ⊙ h`.
pub(crate) fn gru_step(g: &mut Graph, p: &ParamSet, name: &str, x: NodeId, h: NodeId) -> Result<NodeId> {
    let hidden = g.value(h).len();
    let wx = g.param(p, &format!("{name}.Wx"))?;
    let wh = g.param(p, &format!("{name}.Wh"))?;
    let bx = g.param(p, &format!("{name}.bx"))?;
    let bh = g.param(p, &format!("{name}.bh"))?;
    let gx = g.matvec(wx, x)?;
    let gx = g.add(gx, bx)?;
    let gh = g.matvec(wh, h)?;
    let gh = g.add(gh, bh)?;

    let rz_x = g.slice(gx, 0, 2 * hidden)?;
    let rz_h = g.slice(gh, 0, 2 * hidden)?;
    let rz = g.add(rz_x, rz_h)?;
    let rz = g.sigmoid(rz)?;
    let r = g.slice(rz, 0, hidden)?;
    let z = g.slice(rz, hidden, hidden)?;

    let nx = g.slice(gx, 2 * hidden, hidden)?;
    let nh = g.slice(gh, 2 * hidden, hidden)?;
    let rn = g.mul(r, nh)?;
    let n = g.add(nx, rn)?;
    let n = g.tanh(n)?;

    let diff = g.sub(h, n)?;
    let zd = g.mul(z, diff)?;
    g.add(n, zd)
}
