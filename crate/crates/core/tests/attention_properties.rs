use npat::attention::{
    attend, forward_step_values, init_params, AlignmentState, AttentionDims, AttentionMode, AttentionParams, Memory,
    Transition,
};
use npat::autodiff::{Graph, ParamSet, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Forward attention with a transition agent emitting one scalar per step,
/// written out with plain loops.
fn scalar_transition_reference(y: &[Vec<f64>], u: &[f64]) -> Vec<Vec<f64>> {
    let n = y[0].len();
    let mut alpha = vec![0.0; n];
    alpha[0] = 1.0;
    let mut out = Vec::new();
    for (yt, &ut) in y.iter().zip(u) {
        let mut next = vec![0.0; n];
        for i in 0..n {
            let from_prev = if i > 0 { ut * alpha[i - 1] } else { 0.0 };
            next[i] = ((1.0 - ut) * alpha[i] + from_prev) * yt[i];
        }
        let z: f64 = next.iter().sum();
        for v in &mut next {
            *v /= z;
        }
        alpha = next;
        out.push(alpha.clone());
    }
    out
}

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

fn transition_of(i: u8) -> Transition {
    match i % 4 {
        0 => Transition::Full,
        1 => Transition::FixedHalf,
        2 => Transition::PhonemeOnly,
        _ => Transition::TimeOnly,
    }
}

fn support(a: &[f64]) -> (usize, usize) {
    let lo = a.iter().position(|&v| v > 0.0).unwrap();
    let hi = a.iter().rposition(|&v| v > 0.0).unwrap();
    (lo, hi)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn constant_transition_matches_scalar_agent(seed in any::<u64>(), n in 2usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let steps = 50;
        let y: Vec<Vec<f64>> = (0..steps).map(|_| random_simplex(&mut rng, n)).collect();
        let u: Vec<f64> = (0..steps).map(|_| rng.random_range(0.0..1.0)).collect();
        let want = scalar_transition_reference(&y, &u);
        let mut alpha = vec![0.0; n];
        alpha[0] = 1.0;
        for t in 0..steps {
            alpha = forward_step_values(&alpha, &vec![u[t]; n], &y[t]).unwrap();
            for (a, b) in alpha.iter().zip(&want[t]) {
                prop_assert!((a - b).abs() <= 1e-12, "step {t}: {a} vs {b}");
            }
        }
    }
}

proptest! {
    // 20 cases of 50 steps: 1000 attention steps in total.
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn attention_step_invariants(
        seed in any::<u64>(),
        n in 2usize..16,
        transition in any::<u8>(),
        use_position in any::<bool>(),
    ) {
        let dims = AttentionDims { query: 6, encoder: 5, attn: 7, embed: 4, channels: 3, kernel: 5 };
        let mode = AttentionMode { use_position, transition: transition_of(transition) };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        init_params(&dims, &mut rng, &mut params).unwrap();
        let names: Vec<String> = params.names().map(str::to_string).collect();
        for name in names {
            let len = params.get(&name).unwrap().len();
            let v: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
            params.set_data(&name, &v).unwrap();
        }

        let mut g = Graph::new();
        let p = AttentionParams::bind(&mut g, &params).unwrap();
        let states: Vec<f64> = (0..n * dims.encoder).map(|_| rng.random_range(-1.0..1.0)).collect();
        let states = g.input(Tensor::matrix(n, dims.encoder, states).unwrap());
        let mem = Memory::new(&mut g, &p, states, mode).unwrap();
        let mut state = AlignmentState::initial(&mut g, n);
        let mut prev = g.value(state.alpha).data().to_vec();
        for t in 0..50 {
            let q: Vec<f64> = (0..dims.query).map(|_| rng.random_range(-1.0..1.0)).collect();
            let q = g.input(Tensor::vector(q).unwrap());
            let pos: Vec<f64> = (0..n * 3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let pos = g.input(Tensor::matrix(n, 3, pos).unwrap());
            let out = attend(&mut g, &p, &mem, mode, q, pos, state).unwrap();

            let alpha = g.value(out.alpha).data().to_vec();
            let sum: f64 = alpha.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-6, "step {t}: sum {sum}");
            prop_assert!(alpha.iter().all(|&a| a >= 0.0));

            // mass can only stay or move one phoneme forward
            let (lo0, hi0) = support(&prev);
            let (lo1, hi1) = support(&alpha);
            prop_assert!(lo1 >= lo0 && hi1 <= hi0 + 1, "step {t}: [{lo0},{hi0}] -> [{lo1},{hi1}]");

            for &u in g.value(out.u).data() {
                prop_assert!(u > 0.0 && u < 1.0, "step {t}: u = {u}");
            }
            prev = alpha;
            state = out.state;
        }
    }
}
