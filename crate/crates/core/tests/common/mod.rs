//! Checks shared by the gradient tests and the acceptance target.

#![allow(dead_code)]

use npat::autodiff::{finite_diff_check, finite_diff_report, Graph, NodeId, ParamSet, Tensor};
use npat::loss::{guided_loss_node, penalty_matrix};
use npat::network::{Model, ModelConfig, SystemMode, Utterance};
use npat::score::{Mora, NoteSpec, Pitch, Score};
use npat::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub fn random(rng: &mut ChaCha8Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = dims.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(dims.to_vec(), data).unwrap()
}

/// Reduce any tensor to a scalar with fixed random weights so that every
/// output coordinate contributes a distinct sensitivity.
fn weighted_sum(g: &mut Graph, x: NodeId, seed: u64) -> Result<NodeId> {
    let dims = g.value(x).dims().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.input(random(&mut rng, &dims, -1.0, 1.0));
    let p = g.mul(x, w)?;
    g.sum(p)
}

fn params(spec: &[(&str, &[usize], f64, f64)], seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::new();
    for (name, dims, lo, hi) in spec {
        p.insert(*name, random(&mut rng, dims, *lo, *hi)).unwrap();
    }
    p
}

type Build = fn(&mut Graph, &ParamSet) -> Result<NodeId>;

fn op_error(params: &ParamSet, f: Build) -> f64 {
    finite_diff_check(
        |g, p| {
            let y = f(g, p)?;
            weighted_sum(g, y, 99)
        },
        params,
        EPS,
    )
    .unwrap()
}

/// Max relative finite-difference error of every differentiable op.
pub fn op_gradient_errors() -> Vec<(&'static str, f64)> {
    let binary = params(&[("a", &[10], -2.0, 2.0), ("b", &[10], -2.0, 2.0)], 1);
    let linear = params(
        &[
            ("m", &[10, 4], -1.0, 1.0),
            ("v", &[4], -1.0, 1.0),
            ("u", &[10], -1.0, 1.0),
            ("w", &[3, 4], -1.0, 1.0),
            ("b", &[3], -1.0, 1.0),
        ],
        2,
    );
    let shapes = params(
        &[
            ("a", &[10], -1.0, 1.0),
            ("m", &[5, 2], -1.0, 1.0),
            ("s", &[1], -1.0, 1.0),
        ],
        3,
    );
    let wide = params(&[("a", &[10], -2.0, 2.0)], 4);
    let steep = params(&[("a", &[10], -3.0, 3.0)], 5);
    let positive = params(&[("a", &[10], 0.1, 2.0)], 6);
    let conv = params(&[("x", &[10, 2], -1.0, 1.0), ("k", &[3, 2, 5], -1.0, 1.0)], 7);
    let reuse = params(&[("a", &[10], -1.0, 1.0)], 8);

    let cases: Vec<(&'static str, &ParamSet, Build)> = vec![
        ("add", &binary, |g, p| {
            let (a, b) = (g.param(p, "a")?, g.param(p, "b")?);
            g.add(a, b)
        }),
        ("sub", &binary, |g, p| {
            let (a, b) = (g.param(p, "a")?, g.param(p, "b")?);
            g.sub(a, b)
        }),
        ("mul", &binary, |g, p| {
            let (a, b) = (g.param(p, "a")?, g.param(p, "b")?);
            g.mul(a, b)
        }),
        ("matvec", &linear, |g, p| {
            let (m, v) = (g.param(p, "m")?, g.param(p, "v")?);
            g.matvec(m, v)
        }),
        ("vecmat", &linear, |g, p| {
            let (u, m) = (g.param(p, "u")?, g.param(p, "m")?);
            g.vecmat(u, m)
        }),
        ("matmul_nt+add_bias", &linear, |g, p| {
            let (m, w) = (g.param(p, "m")?, g.param(p, "w")?);
            let y = g.matmul_nt(m, w)?;
            let b = g.param(p, "b")?;
            g.add_bias(y, b)
        }),
        ("reshape+concat+slice", &shapes, |g, p| {
            let (a, m) = (g.param(p, "a")?, g.param(p, "m")?);
            let mr = g.reshape(m, &[10])?;
            let c = g.concat(&[a, mr, a])?;
            g.slice(c, 3, 12)
        }),
        ("row+stack", &shapes, |g, p| {
            let m = g.param(p, "m")?;
            let r = g.row(m, 3)?;
            let r0 = g.row(m, 0)?;
            g.stack(&[r, r0, r])
        }),
        ("broadcast", &shapes, |g, p| {
            let s = g.param(p, "s")?;
            g.broadcast(s, 10)
        }),
        ("shift_right", &shapes, |g, p| {
            let a = g.param(p, "a")?;
            g.shift_right(a)
        }),
        ("sum", &wide, |g, p| {
            let a = g.param(p, "a")?;
            g.sum(a)
        }),
        ("squared_norm", &wide, |g, p| {
            let a = g.param(p, "a")?;
            g.squared_norm(a)
        }),
        ("scale+add_const", &wide, |g, p| {
            let a = g.param(p, "a")?;
            let s = g.scale(a, -1.7)?;
            g.add_const(s, 0.3)
        }),
        ("tanh", &steep, |g, p| {
            let a = g.param(p, "a")?;
            g.tanh(a)
        }),
        ("sigmoid", &steep, |g, p| {
            let a = g.param(p, "a")?;
            g.sigmoid(a)
        }),
        ("softmax", &steep, |g, p| {
            let a = g.param(p, "a")?;
            g.softmax(a)
        }),
        ("normalize", &positive, |g, p| {
            let a = g.param(p, "a")?;
            g.normalize(a)
        }),
        ("conv1d", &conv, |g, p| {
            let (x, k) = (g.param(p, "x")?, g.param(p, "k")?);
            g.conv1d(x, k)
        }),
        ("reused parameter", &reuse, |g, p| {
            let a = g.param(p, "a")?;
            let again = g.param(p, "a")?;
            let t = g.tanh(a)?;
            g.mul(t, again)
        }),
    ];
    cases.into_iter().map(|(name, p, f)| (name, op_error(p, f))).collect()
}

/// The guided attention loss of a softmax-parameterized alignment against
/// the penalty of a real score, so the gradient flows through `G ⊙ A`.
pub fn guided_loss_gradient_error() -> f64 {
    let score = two_notes();
    let g_mat = penalty_matrix(&score, 3, 60, 15).unwrap().values;
    let (n, steps) = (g_mat.dims()[0], g_mat.dims()[1]);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut p = ParamSet::new();
    p.insert("logits", random(&mut rng, &[steps, n], -2.0, 2.0)).unwrap();
    finite_diff_check(
        |g, p| {
            let logits = g.param(p, "logits")?;
            let cols = (0..steps)
                .map(|t| {
                    let r = g.row(logits, t)?;
                    g.softmax(r)
                })
                .collect::<Result<Vec<_>>>()?;
            // [steps, N] -> [N, steps]
            let stacked = g.stack(&cols)?;
            let mut rows = Vec::with_capacity(n);
            let flat = g.reshape(stacked, &[steps * n])?;
            for i in 0..n {
                let picks = (0..steps)
                    .map(|t| g.slice(flat, t * n + i, 1))
                    .collect::<Result<Vec<_>>>()?;
                rows.push(g.concat(&picks)?);
            }
            let a = g.concat(&rows)?;
            let a = g.reshape(a, &[n, steps])?;
            let pen = g.input(g_mat.clone());
            guided_loss_node(g, pen, a)
        },
        &p,
        EPS,
    )
    .unwrap()
}

pub fn tiny(mode: SystemMode) -> ModelConfig {
    ModelConfig {
        encoder_dim: 4,
        query_dim: 3,
        decoder_dim: 3,
        prenet_dims: vec![4, 3],
        aux_dim: 2,
        postnet_channels: 2,
        postnet_width: 3,
        encoder_conv_width: 3,
        reduction_factor: 3,
        acoustic_dim: 3,
        attn_dim: 3,
        embed_dim: 2,
        location_channels: 2,
        location_kernel: 3,
        mode,
        seed: 5,
        ..Default::default()
    }
}

/// 24 + 12 frames at 120 bpm.
pub fn two_notes() -> Score {
    let m = |ids: &[usize]| Mora::from_ids(ids).unwrap();
    Score::new(
        vec![
            NoteSpec {
                pitch: Pitch::Midi(60),
                beats: 0.12,
                morae: vec![m(&[5, 0]), m(&[1])],
            },
            NoteSpec {
                pitch: Pitch::Midi(62),
                beats: 0.06,
                morae: vec![m(&[12, 2])],
            },
        ],
        120.0,
        5.0,
    )
    .unwrap()
}

/// Every coordinate nonzero, including the zero-initialized Post-Net layer.
fn randomize(p: &mut ParamSet, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, t) in p.iter_mut() {
        let data: Vec<f64> = t.data().iter().map(|_| rng.random_range(-0.6..0.6)).collect();
        *t = Tensor::new(t.dims().to_vec(), data).unwrap();
    }
}

/// Max relative error of the full training loss of a tiny two-note model.
pub fn model_gradient_error(mode: SystemMode, eps: f64) -> f64 {
    let score = two_notes();
    let cfg = tiny(mode);
    let mut model = Model::new(cfg.clone()).unwrap();
    randomize(&mut model.params, 17);
    let mut utt = Utterance::new(&score, cfg.reduction_factor).unwrap();
    if mode == SystemMode::NoAtt {
        let n = utt.phonemes();
        let t = utt.frames;
        utt = utt.with_oracle((0..t).map(|f| f * n / t).collect()).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let target_data: Vec<f64> = (0..utt.frames * cfg.acoustic_dim)
        .map(|i| {
            if i % cfg.acoustic_dim == cfg.f0_channel() {
                5.6 + rng.random_range(-0.1..0.1)
            } else {
                rng.random_range(-1.0..1.0)
            }
        })
        .collect();
    let target = Tensor::matrix(utt.frames, cfg.acoustic_dim, target_data).unwrap();
    let report = finite_diff_report(
        |g, p| {
            let m = Model::with_params(cfg.clone(), p.clone())?;
            Ok(m.forward_teacher(g, &utt, &target, 10.0, None)?.loss)
        },
        &model.params,
        eps,
    )
    .unwrap();
    assert!(report.coordinates > 100);
    println!(
        "{mode}: max rel err {:.3e} at {:?} (analytic {:e}, numeric {:e})",
        report.max_rel_error, report.worst, report.analytic_at_worst, report.numeric_at_worst
    );
    report.max_rel_error
}
