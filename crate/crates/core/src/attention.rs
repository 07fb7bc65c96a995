//! Note-position-aware forward attention.
//!
//! Each decoder step computes an output probability `y_t` (content plus note
//! position terms, softmax over phonemes) and a phoneme-dependent,
//! time-variant transition probability `u_t`. The alignment advances by the
//! forward recursion
//!
//! ```text
//! α'_t(n) = ((1 - u_{t-1}(n)) α_{t-1}(n) + u_{t-1}(n-1) α_{t-1}(n-1)) · y_t(n)
//! α_t     = α'_t / Σ_m α'_t(m)
//! ```
//!
//! so attention can only stay or move one phoneme forward per step.

use rand::Rng;

use crate::autodiff::{Graph, NodeId, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::init::uniform;

/// How the transition probability is formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Transition {
    /// Query, encoder state, note position and location features.
    Full,
    /// Constant 0.5.
    FixedHalf,
    /// Encoder state only; constant over decoder steps.
    PhonemeOnly,
    /// Query only; shared by all phonemes.
    TimeOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AttentionMode {
    /// Include the note position term in both heads.
    pub use_position: bool,
    pub transition: Transition,
}

impl AttentionMode {
    pub const FULL: AttentionMode = AttentionMode {
        use_position: true,
        transition: Transition::Full,
    };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionDims {
    pub query: usize,
    pub encoder: usize,
    pub attn: usize,
    pub embed: usize,
    pub channels: usize,
    pub kernel: usize,
}

impl Default for AttentionDims {
    fn default() -> Self {
        AttentionDims {
            query: 64,
            encoder: 64,
            attn: 32,
            embed: 16,
            channels: 4,
            kernel: 15,
        }
    }
}

const PREFIX: &str = "attn";

fn name(part: &str) -> String {
    format!("{PREFIX}.{part}")
}

/// Register every attention tensor in `params`.
pub fn init_params(dims: &AttentionDims, rng: &mut impl Rng, params: &mut ParamSet) -> Result<()> {
    if dims.kernel.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "location kernel width must be odd, got {}",
            dims.kernel
        )));
    }
    let AttentionDims {
        query: q,
        encoder: h,
        attn: a,
        embed: e,
        channels: c,
        kernel: k,
    } = *dims;
    params.insert(name("pos.M"), uniform(rng, &[e, 3], 3))?;
    params.insert(name("pos.b"), Tensor::zeros(&[e]))?;
    for head in ["e", "u"] {
        params.insert(name(&format!("{head}.W")), uniform(rng, &[a, q], q))?;
        params.insert(name(&format!("{head}.V")), uniform(rng, &[a, h], h))?;
        params.insert(name(&format!("{head}.U")), uniform(rng, &[a, e], e))?;
        params.insert(name(&format!("{head}.b")), Tensor::zeros(&[a]))?;
        params.insert(name(&format!("{head}.v")), uniform(rng, &[a], a))?;
    }
    params.insert(name("u.T"), uniform(rng, &[a, c], c))?;
    params.insert(name("loc.K"), uniform(rng, &[c, 1, k], k))?;
    Ok(())
}

#[derive(Clone, Copy, Debug)]
struct Head {
    w: NodeId,
    v_enc: NodeId,
    u_pos: NodeId,
    b: NodeId,
    /// `v` reshaped to `[1, A]`.
    v_row: NodeId,
}

/// Attention tensors bound into a graph.
#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    pos_m: NodeId,
    pos_b: NodeId,
    e: Head,
    u: Head,
    t_loc: NodeId,
    kernel: NodeId,
}

impl AttentionParams {
    pub fn bind(g: &mut Graph, params: &ParamSet) -> Result<Self> {
        let head = |g: &mut Graph, h: &str| -> Result<Head> {
            let v = g.param(params, &name(&format!("{h}.v")))?;
            let a = g.value(v).len();
            Ok(Head {
                w: g.param(params, &name(&format!("{h}.W")))?,
                v_enc: g.param(params, &name(&format!("{h}.V")))?,
                u_pos: g.param(params, &name(&format!("{h}.U")))?,
                b: g.param(params, &name(&format!("{h}.b")))?,
                v_row: g.reshape(v, &[1, a])?,
            })
        };
        let e = head(g, "e")?;
        let u = head(g, "u")?;
        Ok(AttentionParams {
            pos_m: g.param(params, &name("pos.M"))?,
            pos_b: g.param(params, &name("pos.b"))?,
            e,
            u,
            t_loc: g.param(params, &name("u.T"))?,
            kernel: g.param(params, &name("loc.K"))?,
        })
    }
}

/// Per-utterance quantities that do not depend on the decoder step.
pub struct Memory {
    /// Encoder states `X`, `[N, H]`.
    pub states: NodeId,
    n: usize,
    key_e: NodeId,
    key_u: NodeId,
    static_u: Option<NodeId>,
}

impl Memory {
    pub fn new(g: &mut Graph, p: &AttentionParams, states: NodeId, mode: AttentionMode) -> Result<Self> {
        let n = g.value(states).dims()[0];
        if n == 0 {
            return Err(Error::InvalidArgument("attention over zero phonemes".into()));
        }
        let key_e = g.matmul_nt(states, p.e.v_enc)?;
        let key_u = g.matmul_nt(states, p.u.v_enc)?;
        let static_u = if mode.transition == Transition::PhonemeOnly {
            let z = g.add_bias(key_u, p.u.b)?;
            Some(score_rows(g, z, p.u.v_row, n, true)?)
        } else {
            None
        };
        Ok(Memory {
            states,
            n,
            key_e,
            key_u,
            static_u,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

/// `v^T tanh(z_n)` for every row, optionally through a sigmoid.
fn score_rows(g: &mut Graph, z: NodeId, v_row: NodeId, n: usize, sigmoid: bool) -> Result<NodeId> {
    let h = g.tanh(z)?;
    let e = g.matmul_nt(h, v_row)?;
    let e = g.reshape(e, &[n])?;
    if sigmoid {
        g.sigmoid(e)
    } else {
        Ok(e)
    }
}

/// `p_{t,n} = tanh(M · [p1, p2, p3] + b)` for every row of `positions: [N, 3]`.
pub fn embed_position(g: &mut Graph, p: &AttentionParams, positions: NodeId) -> Result<NodeId> {
    let z = g.matmul_nt(positions, p.pos_m)?;
    let z = g.add_bias(z, p.pos_b)?;
    g.tanh(z)
}

/// Softmax over phonemes of `v^T tanh(W q + V x_n [+ U p_n] + b)`.
pub fn output_probability(
    g: &mut Graph,
    p: &AttentionParams,
    mem: &Memory,
    query: NodeId,
    embedded_pos: Option<NodeId>,
) -> Result<NodeId> {
    let wq = g.matvec(p.e.w, query)?;
    let bias = g.add(wq, p.e.b)?;
    let mut z = g.add_bias(mem.key_e, bias)?;
    if let Some(pos) = embedded_pos {
        let up = g.matmul_nt(pos, p.e.u_pos)?;
        z = g.add(z, up)?;
    }
    let e = score_rows(g, z, p.e.v_row, mem.n, false)?;
    g.softmax(e)
}

/// Convolution of the cumulative alignment, `[N, C]`.
pub fn location_features(g: &mut Graph, p: &AttentionParams, cumulative: NodeId) -> Result<NodeId> {
    let n = g.value(cumulative).len();
    let col = g.reshape(cumulative, &[n, 1])?;
    g.conv1d(col, p.kernel)
}

pub fn transition_probability(
    g: &mut Graph,
    p: &AttentionParams,
    mem: &Memory,
    query: NodeId,
    embedded_pos: Option<NodeId>,
    location: NodeId,
    mode: AttentionMode,
) -> Result<NodeId> {
    match mode.transition {
        Transition::FixedHalf => Ok(g.input(Tensor::filled(&[mem.n], 0.5))),
        Transition::PhonemeOnly => Ok(mem.static_u.expect("static transition prepared in Memory::new")),
        Transition::TimeOnly => {
            let wq = g.matvec(p.u.w, query)?;
            let z = g.add(wq, p.u.b)?;
            let a = g.value(z).len();
            let z = g.reshape(z, &[1, a])?;
            let u = score_rows(g, z, p.u.v_row, 1, true)?;
            g.broadcast(u, mem.n)
        }
        Transition::Full => {
            let wq = g.matvec(p.u.w, query)?;
            let bias = g.add(wq, p.u.b)?;
            let mut z = g.add_bias(mem.key_u, bias)?;
            if let Some(pos) = embedded_pos {
                let up = g.matmul_nt(pos, p.u.u_pos)?;
                z = g.add(z, up)?;
            }
            let tf = g.matmul_nt(location, p.t_loc)?;
            let z = g.add(z, tf)?;
            score_rows(g, z, p.u.v_row, mem.n, true)
        }
    }
}

/// Recursion state carried between decoder steps.
#[derive(Clone, Copy, Debug)]
pub struct AlignmentState {
    pub alpha: NodeId,
    /// Sum of all alignments so far.
    pub cumulative: NodeId,
    /// Transition probability from the previous step; `None` before the first.
    pub prev_u: Option<NodeId>,
    pub step: usize,
}

impl AlignmentState {
    /// One-hot alignment on the first phoneme, zero cumulative.
    pub fn initial(g: &mut Graph, n: usize) -> Self {
        let mut a = Tensor::zeros(&[n]);
        a.data_mut()[0] = 1.0;
        AlignmentState {
            alpha: g.input(a),
            cumulative: g.input(Tensor::zeros(&[n])),
            prev_u: None,
            step: 0,
        }
    }
}

/// One application of the forward recursion and its normalization.
///
/// `step` only labels the collapse error.
pub fn forward_step(g: &mut Graph, alpha_prev: NodeId, u_prev: NodeId, y: NodeId, step: usize) -> Result<NodeId> {
    let stay = g.one_minus(u_prev)?;
    let stay = g.mul(stay, alpha_prev)?;
    let moved = g.mul(u_prev, alpha_prev)?;
    let moved = g.shift_right(moved)?;
    let mass = g.add(stay, moved)?;
    let unnorm = g.mul(mass, y)?;
    if g.value(unnorm).data().iter().all(|&v| v == 0.0) {
        return Err(Error::AlignmentCollapse { step });
    }
    g.normalize(unnorm)
}

/// `c_t = Σ_n α_t(n) x_n`.
pub fn context(g: &mut Graph, alpha: NodeId, states: NodeId) -> Result<NodeId> {
    g.vecmat(alpha, states)
}

#[derive(Clone, Copy, Debug)]
pub struct AttendOutput {
    pub alpha: NodeId,
    pub context: NodeId,
    pub y: NodeId,
    pub u: NodeId,
    pub state: AlignmentState,
}

/// Full attention step: output probability, location features, transition
/// probability, recursion, and context vector.
///
/// `positions` is the `[N, 3]` matrix of normalized note positions for this
/// step; it is ignored when the mode does not use positions.
pub fn attend(
    g: &mut Graph,
    p: &AttentionParams,
    mem: &Memory,
    mode: AttentionMode,
    query: NodeId,
    positions: NodeId,
    state: AlignmentState,
) -> Result<AttendOutput> {
    let embedded = if mode.use_position {
        Some(embed_position(g, p, positions)?)
    } else {
        None
    };
    let y = output_probability(g, p, mem, query, embedded)?;
    let location = location_features(g, p, state.cumulative)?;
    let u = transition_probability(g, p, mem, query, embedded, location, mode)?;
    let u_prev = state.prev_u.unwrap_or(u);
    let alpha = forward_step(g, state.alpha, u_prev, y, state.step)?;
    let cumulative = g.add(state.cumulative, alpha)?;
    let c = context(g, alpha, mem.states)?;
    Ok(AttendOutput {
        alpha,
        context: c,
        y,
        u,
        state: AlignmentState {
            alpha,
            cumulative,
            prev_u: Some(u),
            step: state.step + 1,
        },
    })
}

/// Plain-vector version of [`forward_step`].
pub fn forward_step_values(alpha_prev: &[f64], u_prev: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let a = g.input(Tensor::vector(alpha_prev.to_vec())?);
    let u = g.input(Tensor::vector(u_prev.to_vec())?);
    let y = g.input(Tensor::vector(y.to_vec())?);
    let out = forward_step(&mut g, a, u, y, 0)?;
    Ok(g.value(out).data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> AttentionDims {
        AttentionDims {
            query: 5,
            encoder: 4,
            attn: 6,
            embed: 3,
            channels: 2,
            kernel: 3,
        }
    }

    fn zero_params() -> ParamSet {
        let mut p = ParamSet::new();
        init_params(&dims(), &mut ChaCha8Rng::seed_from_u64(0), &mut p).unwrap();
        let names: Vec<String> = p.names().map(str::to_string).collect();
        for n in names {
            let len = p.get(&n).unwrap().len();
            p.set_data(&n, &vec![0.0; len]).unwrap();
        }
        p
    }

    fn random_states(g: &mut Graph, n: usize, h: usize, seed: u64) -> NodeId {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * h).map(|_| rng.random_range(-1.0..1.0)).collect();
        g.input(Tensor::matrix(n, h, data).unwrap())
    }

    #[test]
    fn hand_derived_recursion_step() {
        let a = forward_step_values(&[0.7, 0.3, 0.0], &[0.5, 0.5, 0.5], &[0.2, 0.5, 0.3]).unwrap();
        let expect = [0.07 / 0.365, 0.25 / 0.365, 0.045 / 0.365];
        for (x, e) in a.iter().zip(expect) {
            assert!((x - e).abs() < 1e-12);
        }
        for (x, e) in a.iter().zip([0.1918, 0.6849, 0.1233]) {
            assert!((x - e).abs() < 1e-4);
        }
    }

    #[test]
    fn zero_and_full_transition() {
        let y = [0.25; 4];
        let a = forward_step_values(&[0.1, 0.2, 0.3, 0.4], &[0.0; 4], &y).unwrap();
        for (x, e) in a.iter().zip([0.1, 0.2, 0.3, 0.4]) {
            assert!((x - e).abs() < 1e-15);
        }
        let a = forward_step_values(&[1.0, 0.0, 0.0, 0.0], &[1.0; 4], &y).unwrap();
        assert_eq!(a, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn collapse_is_reported() {
        let r = forward_step_values(&[1.0, 0.0], &[0.0, 0.0], &[0.0, 1.0]);
        assert!(matches!(r, Err(Error::AlignmentCollapse { .. })));
    }

    #[test]
    fn zero_params_give_uniform_y_and_half_u() {
        let params = zero_params();
        let mut g = Graph::new();
        let p = AttentionParams::bind(&mut g, &params).unwrap();
        let x = random_states(&mut g, 4, 4, 1);
        let mem = Memory::new(&mut g, &p, x, AttentionMode::FULL).unwrap();
        let q = g.input(Tensor::vector(vec![0.3; 5]).unwrap());
        let pos = g.input(Tensor::filled(&[4, 3], 0.2));
        let emb = embed_position(&mut g, &p, pos).unwrap();
        assert!(g.value(emb).data().iter().all(|&v| v == 0.0));
        let y = output_probability(&mut g, &p, &mem, q, Some(emb)).unwrap();
        assert!(g.value(y).data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let cum = g.input(Tensor::zeros(&[4]));
        let f = location_features(&mut g, &p, cum).unwrap();
        assert_eq!(g.value(f).dims(), &[4, 2]);
        let u = transition_probability(&mut g, &p, &mem, q, Some(emb), f, AttentionMode::FULL).unwrap();
        assert!(g.value(u).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn softmax_logit_example() {
        let mut g = Graph::new();
        let e = g.input(Tensor::vector(vec![0.0, 3f64.ln()]).unwrap());
        let y = g.softmax(e).unwrap();
        let v = g.value(y).data();
        assert!((v[0] - 0.25).abs() < 1e-15 && (v[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn location_identity_kernel() {
        let mut params = zero_params();
        params.set_data("attn.loc.K", &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let mut g = Graph::new();
        let p = AttentionParams::bind(&mut g, &params).unwrap();
        let cum = g.input(Tensor::vector(vec![0.5, 1.0, 2.0]).unwrap());
        let f = location_features(&mut g, &p, cum).unwrap();
        let fv = g.value(f);
        assert_eq!(fv.dims(), &[3, 2]);
        assert_eq!((fv.at(0, 0), fv.at(1, 0), fv.at(2, 0)), (0.5, 1.0, 2.0));
        assert_eq!(fv.at(1, 1), 0.0);
    }

    #[test]
    fn fixed_half_ignores_inputs() {
        let mut params = ParamSet::new();
        init_params(&dims(), &mut ChaCha8Rng::seed_from_u64(3), &mut params).unwrap();
        let mode = AttentionMode {
            use_position: true,
            transition: Transition::FixedHalf,
        };
        let mut g = Graph::new();
        let p = AttentionParams::bind(&mut g, &params).unwrap();
        let x = random_states(&mut g, 3, 4, 2);
        let mem = Memory::new(&mut g, &p, x, mode).unwrap();
        let q = g.input(Tensor::vector(vec![1.0, -2.0, 0.5, 0.0, 3.0]).unwrap());
        let f = g.input(Tensor::filled(&[3, 2], 0.7));
        let u = transition_probability(&mut g, &p, &mem, q, None, f, mode).unwrap();
        assert_eq!(g.value(u).data(), &[0.5, 0.5, 0.5]);
    }

    #[test]
    fn context_examples() {
        let mut g = Graph::new();
        let x = g.input(Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 9.0]).unwrap());
        let one_hot = g.input(Tensor::vector(vec![0.0, 1.0, 0.0]).unwrap());
        let c = context(&mut g, one_hot, x).unwrap();
        assert_eq!(g.value(c).data(), &[3.0, 4.0]);
        let uni = g.input(Tensor::vector(vec![1.0 / 3.0; 3]).unwrap());
        let c = context(&mut g, uni, x).unwrap();
        assert!((g.value(c).data()[0] - 3.0).abs() < 1e-12);
        assert!((g.value(c).data()[1] - 5.0).abs() < 1e-12);
    }
}
