use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::ParamBuilder;
use crate::numerics::{check_store_gradients, ParamStore, Tape, Tensor};
use crate::retrieval::{SimilarSample, SimilarSampleSet};

const D: usize = 4;

fn setup(seed: u64) -> (ParamStore, PromptParams) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = PromptParams::build(&mut ParamBuilder::Create { store: &mut store, rng: &mut rng }, D).unwrap();
    (store, p)
}

fn random_rows(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..D).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

fn refs(rows: &[Vec<f64>]) -> Vec<&[f64]> {
    rows.iter().map(Vec::as_slice).collect()
}

fn set_identity(store: &mut ParamStore, id: crate::numerics::ParamId) {
    let t = store.get_mut(id);
    t.data_mut().iter_mut().enumerate().for_each(|(i, x)| *x = if i / D == i % D { 1.0 } else { 0.0 });
}

/// `x · W` for a row-major `[D, D]` matrix.
fn vec_mat(x: &[f64], w: &[f64]) -> Vec<f64> {
    (0..D).map(|j| (0..D).map(|i| x[i] * w[i * D + j]).sum()).collect()
}

fn softmax_oracle(s: &[f64]) -> Vec<f64> {
    let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

#[test]
fn relation_transform_picks_matrix_by_speaker() {
    let (store, p) = setup(1);
    let rows = random_rows(3, 2);
    let w0 = store.get(p.hist.same).data().to_vec();
    let w1 = store.get(p.hist.other).data().to_vec();
    for flags in [[true, true, true], [true, false, true], [false, false, false]] {
        let mut tape = Tape::new();
        let x = tape.constant(vec![3, D], rows.concat()).unwrap();
        let y = relation_aware_transform(&mut tape, &store, &p.hist, x, &flags).unwrap();
        let got = tape.value(y);
        for (i, r) in rows.iter().enumerate() {
            let want = vec_mat(r, if flags[i] { &w0 } else { &w1 });
            for j in 0..D {
                assert!((got[i * D + j] - want[j]).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn identity_relations_pass_vectors_through() {
    let (mut store, p) = setup(1);
    set_identity(&mut store, p.hist.same);
    set_identity(&mut store, p.hist.other);
    let rows = random_rows(3, 3);
    let mut tape = Tape::new();
    let x = tape.constant(vec![3, D], rows.concat()).unwrap();
    let y = relation_aware_transform(&mut tape, &store, &p.hist, x, &[true, false, false]).unwrap();
    assert_eq!(tape.value(y), rows.concat().as_slice());
}

#[test]
fn history_attention_matches_scalar_oracle() {
    let (store, p) = setup(4);
    let w = store.get(p.hist.score).data().to_vec();
    let rows = random_rows(4, 5);
    let (hist, h_t) = (&rows[..3], &rows[3]);
    let mut tape = Tape::new();
    let x = tape.constant(vec![3, D], hist.concat()).unwrap();
    let h = tape.constant(vec![1, D], h_t.clone()).unwrap();
    let a = history_attention(&mut tape, &store, &p.hist, x, h).unwrap();
    let scores: Vec<f64> = hist
        .iter()
        .map(|r| r.iter().chain(h_t).zip(&w).map(|(x, w)| x * w).sum())
        .collect();
    for (g, want) in tape.value(a).iter().zip(softmax_oracle(&scores)) {
        assert!((g - want).abs() < 1e-14);
    }

    // single predecessor and identical predecessors
    let mut tape = Tape::new();
    let h = tape.constant(vec![1, D], h_t.clone()).unwrap();
    let one = tape.constant(vec![1, D], hist[0].clone()).unwrap();
    let a = history_attention(&mut tape, &store, &p.hist, one, h).unwrap();
    assert_eq!(tape.value(a), &[1.0]);
    let same = tape.constant(vec![3, D], [hist[0].clone(), hist[0].clone(), hist[0].clone()].concat()).unwrap();
    let a = history_attention(&mut tape, &store, &p.hist, same, h).unwrap();
    for w in tape.value(a) {
        assert!((w - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn attention_weights_are_distributions() {
    let (store, p) = setup(6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..200 {
        let n = rng.gen_range(1..9);
        let scale = if trial % 2 == 0 { 1.0 } else { 50.0 };
        let rows: Vec<f64> = (0..(n + 1) * D).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
        let mut tape = Tape::new();
        let x = tape.constant(vec![n, D], rows[..n * D].to_vec()).unwrap();
        let h = tape.constant(vec![1, D], rows[n * D..].to_vec()).unwrap();
        for a in [
            history_attention(&mut tape, &store, &p.hist, x, h).unwrap(),
            experience_attention(&mut tape, &store, &p.exp, x, h).unwrap(),
        ] {
            let v = tape.value(a);
            assert!(v.iter().all(|w| *w >= 0.0));
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Plain-loop LSTM over `xs` in the given order.
fn lstm_oracle(store: &ParamStore, cell: &LstmCell, xs: &[Vec<f64>], order: &[usize]) -> Vec<Vec<f64>> {
    let h = cell.hidden;
    let wx = store.get(cell.w_x).data();
    let wh = store.get(cell.w_h).data();
    let b = store.get(cell.b).data();
    let mut state = vec![0.0; h];
    let mut c = vec![0.0; h];
    let mut out = vec![Vec::new(); xs.len()];
    for &t in order {
        let gates: Vec<f64> = (0..4 * h)
            .map(|j| {
                b[j] + (0..xs[t].len()).map(|i| xs[t][i] * wx[i * 4 * h + j]).sum::<f64>()
                    + (0..h).map(|i| state[i] * wh[i * 4 * h + j]).sum::<f64>()
            })
            .collect();
        for j in 0..h {
            let (ig, fg, gg, og) = (
                sigmoid(gates[j]),
                sigmoid(gates[h + j]),
                gates[2 * h + j].tanh(),
                sigmoid(gates[3 * h + j]),
            );
            c[j] = fg * c[j] + ig * gg;
            state[j] = og * c[j].tanh();
        }
        out[t] = state.clone();
    }
    out
}

#[test]
fn bilstm_matches_loop_oracle() {
    let (store, p) = setup(8);
    for n in [1usize, 3] {
        let xs = random_rows(n, 9);
        let mut tape = Tape::new();
        let x = tape.constant(vec![n, D], xs.concat()).unwrap();
        let s = bilstm_states(&mut tape, &store, &p.hist, x).unwrap();
        let fwd = lstm_oracle(&store, &p.hist.forward, &xs, &(0..n).collect::<Vec<_>>());
        let bwd = lstm_oracle(&store, &p.hist.backward, &xs, &(0..n).rev().collect::<Vec<_>>());
        let got = tape.value(s);
        for i in 0..n {
            let want: Vec<f64> = fwd[i].iter().chain(&bwd[i]).cloned().collect();
            for j in 0..2 * D {
                assert!((got[i * 2 * D + j] - want[j]).abs() < 1e-13);
            }
        }
    }
}

#[test]
fn reversed_sequence_mirrors_tied_bilstm() {
    let (mut store, p) = setup(10);
    for (src, dst) in [
        (p.hist.forward.w_x, p.hist.backward.w_x),
        (p.hist.forward.w_h, p.hist.backward.w_h),
        (p.hist.forward.b, p.hist.backward.b),
    ] {
        let v = store.get(src).clone();
        store.get_mut(dst).data_mut().copy_from_slice(v.data());
    }
    let xs = random_rows(4, 11);
    let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
    let mut tape = Tape::new();
    let a = tape.constant(vec![4, D], xs.concat()).unwrap();
    let b = tape.constant(vec![4, D], rev.concat()).unwrap();
    let sa = bilstm_states(&mut tape, &store, &p.hist, a).unwrap();
    let sb = bilstm_states(&mut tape, &store, &p.hist, b).unwrap();
    let (va, vb) = (tape.value(sa).to_vec(), tape.value(sb));
    for i in 0..4 {
        let row_a = &va[i * 2 * D..(i + 1) * 2 * D];
        let row_b = &vb[(3 - i) * 2 * D..(4 - i) * 2 * D];
        assert_eq!(&row_a[..D], &row_b[D..]);
        assert_eq!(&row_a[D..], &row_b[..D]);
    }
}

#[test]
fn recurrence_gradients_match_finite_differences() {
    let (mut store, p) = setup(12);
    let xs = random_rows(3, 13);
    let weights = random_rows(3, 14).concat();
    let ids = p.hist.param_ids();
    let report = check_store_gradients(&mut store, &ids, 1e-5, 40, 1, |store, tape| {
        let x = tape.constant(vec![3, D], xs.concat())?;
        let h = contextualize(tape, store, &p.hist, x)?;
        let w = tape.constant(vec![3, D], weights.clone())?;
        let y = tape.mul(h, w)?;
        Ok(tape.sum(y))
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-3, "{report:?}");
}

#[test]
fn first_utterance_prompt_is_its_own_vector() {
    let (store, p) = setup(15);
    let h0 = random_rows(1, 16).remove(0);
    let mut tape = Tape::new();
    let h = tape.constant(vec![1, D], h0.clone()).unwrap();
    let v = build_history_vector(&mut tape, &store, &p.hist, &[], &[], h).unwrap();
    assert_eq!(tape.value(v), h0.as_slice());
}

#[test]
fn single_predecessor_influence_is_its_contextual_vector() {
    let (mut store, p) = setup(17);
    set_identity(&mut store, p.hist.same);
    set_identity(&mut store, p.hist.other);
    let rows = random_rows(2, 18);
    let mut tape = Tape::new();
    let h = tape.constant(vec![1, D], rows[1].clone()).unwrap();
    let v = build_history_vector(&mut tape, &store, &p.hist, &refs(&rows[..1]), &[false], h).unwrap();
    let x = tape.constant(vec![1, D], rows[0].clone()).unwrap();
    let ctx = contextualize(&mut tape, &store, &p.hist, x).unwrap();
    let got = tape.value(v);
    for j in 0..D {
        assert_eq!(got[j], tape.value(ctx)[j] + rows[1][j]);
    }
}

#[test]
fn history_vector_composes_the_three_steps() {
    let (store, p) = setup(19);
    let rows = random_rows(4, 20);
    let flags = [true, false, true];
    let mut tape = Tape::new();
    let h = tape.constant(vec![1, D], rows[3].clone()).unwrap();
    let v = build_history_vector(&mut tape, &store, &p.hist, &refs(&rows[..3]), &flags, h).unwrap();
    let got = tape.value(v).to_vec();

    let mut tape = Tape::new();
    let x = tape.constant(vec![3, D], rows[..3].concat()).unwrap();
    let h = tape.constant(vec![1, D], rows[3].clone()).unwrap();
    let a = history_attention(&mut tape, &store, &p.hist, x, h).unwrap();
    let t = relation_aware_transform(&mut tape, &store, &p.hist, x, &flags).unwrap();
    let c = contextualize(&mut tape, &store, &p.hist, t).unwrap();
    let (a, c) = (tape.value(a).to_vec(), tape.value(c).to_vec());
    for j in 0..D {
        let influ: f64 = (0..3).map(|i| a[i] * c[i * D + j]).sum();
        assert!((got[j] - (influ + rows[3][j])).abs() < 1e-14);
    }
}

fn samples(rows: &[Vec<f64>]) -> SimilarSampleSet {
    SimilarSampleSet {
        samples: rows
            .iter()
            .enumerate()
            .map(|(i, r)| SimilarSample {
                utterance_id: format!("u{i}"),
                score: 1.0,
                representation: r.clone(),
                label: 0,
            })
            .collect(),
    }
}

#[test]
fn experience_vector_closed_forms() {
    let (store, p) = setup(21);
    let rows = random_rows(4, 22);
    let mut tape = Tape::new();
    let h = tape.constant(vec![1, D], rows[3].clone()).unwrap();
    let v = build_experience_vector(&mut tape, &store, &p.exp, &samples(&rows[..1]), h).unwrap();
    let want: Vec<f64> = (0..D).map(|j| rows[0][j] + rows[3][j]).collect();
    assert_eq!(tape.value(v), want.as_slice());

    let same = vec![rows[0].clone(); 3];
    let v = build_experience_vector(&mut tape, &store, &p.exp, &samples(&same), h).unwrap();
    for j in 0..D {
        assert!((tape.value(v)[j] - want[j]).abs() < 1e-15);
    }

    assert!(build_experience_vector(&mut tape, &store, &p.exp, &SimilarSampleSet::default(), h).is_err());
}

#[test]
fn experience_vector_matches_scalar_oracle() {
    let (store, p) = setup(23);
    let w = store.get(p.exp.score).data().to_vec();
    let rows = random_rows(4, 24);
    let (ds, h_t) = (&rows[..3], &rows[3]);
    let mut tape = Tape::new();
    let h = tape.constant(vec![1, D], h_t.clone()).unwrap();
    let v = build_experience_vector(&mut tape, &store, &p.exp, &samples(ds), h).unwrap();
    let scores: Vec<f64> = ds
        .iter()
        .map(|d| (0..D).map(|j| d[j] * h_t[j] * w[j]).sum())
        .collect();
    let a = softmax_oracle(&scores);
    for j in 0..D {
        let want = (0..3).map(|i| a[i] * ds[i][j]).sum::<f64>() + h_t[j];
        assert!((tape.value(v)[j] - want).abs() < 1e-14);
    }
}

#[test]
fn cache_round_trip_and_width_check() {
    let mut c = RepresentationCache::new("stage1", 3);
    c.insert("a:0", vec![0.1, -0.2, 1.0 / 3.0]).unwrap();
    c.insert("a:1", vec![1e-300, 2.5, -7.0]).unwrap();
    assert!(c.insert("bad", vec![1.0]).is_err());
    assert!(c.get("missing").is_err());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.json");
    c.save(&path).unwrap();
    let back = RepresentationCache::load(&path).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.tag, "stage1");
    let t = Tensor::vector(back.get("a:0").unwrap().to_vec());
    assert_eq!(t.data()[2].to_bits(), (1.0f64 / 3.0).to_bits());
}
