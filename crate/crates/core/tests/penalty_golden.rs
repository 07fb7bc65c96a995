use npat::loss::penalty_matrix;
use npat::score::{Mora, NoteSpec, Pitch, Score};

const GOLDEN: &str = include_str!("data/penalty_golden.csv");

/// Note A: 90 frames, morae (k a) (i) (s u); note B: 60 frames, mora (o).
/// At 100 bpm and 5 ms frames a beat is 120 frames.
fn two_notes() -> Score {
    let m = |ids: &[usize]| Mora::from_ids(ids).unwrap();
    Score::new(
        vec![
            NoteSpec {
                pitch: Pitch::Midi(60),
                beats: 0.75,
                morae: vec![m(&[5, 0]), m(&[1]), m(&[6, 2])],
            },
            NoteSpec {
                pitch: Pitch::Midi(64),
                beats: 0.5,
                morae: vec![m(&[4])],
            },
        ],
        100.0,
        5.0,
    )
    .unwrap()
}

#[test]
fn penalty_matches_brute_force_reference() {
    let score = two_notes();
    assert_eq!(score.notes()[0].frames(), 90);
    assert_eq!(score.notes()[1].frames(), 60);
    let g = penalty_matrix(&score, 1, 60, 15).unwrap();
    let golden: Vec<Vec<f64>> = GOLDEN
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(golden.len(), g.phonemes());
    for (n, row) in golden.iter().enumerate() {
        assert_eq!(row.len(), g.steps());
        for (t, want) in row.iter().enumerate() {
            assert_eq!(g.get(n, t).to_bits(), want.to_bits(), "cell ({n}, {t})");
        }
    }
}

#[test]
fn csv_export_round_trips_the_golden_values() {
    let g = penalty_matrix(&two_notes(), 1, 60, 15).unwrap();
    let csv = npat::export::matrix_csv(&g.values).unwrap();
    let parse = |s: &str| -> Vec<u64> {
        s.lines()
            .flat_map(|l| l.split(','))
            .map(|v| v.parse::<f64>().unwrap().to_bits())
            .collect()
    };
    assert_eq!(parse(&csv), parse(GOLDEN));
}
