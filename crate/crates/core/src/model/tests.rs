use super::*;
use crate::corpus::{Conversation, EmotionLabelSet, GlossTable, Utterance, Vocabulary};
use crate::numerics::{check_store_gradients, Tape, Tensor};

fn tiny_config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        d_ff: 12,
        max_len: 48,
        context_window: 2,
        dropout: 0.0,
    }
}

fn fixture(config: ModelConfig) -> (ModelState, DialogueTokens) {
    let texts = ["oh hello there", "what is it", "i lost my keys again", "no way"];
    let conv = Conversation {
        dialogue_id: "d".into(),
        utterances: texts
            .iter()
            .enumerate()
            .map(|(i, t)| Utterance {
                utterance_id: format!("d:{i}"),
                speaker: ["ann", "bob"][i % 2].into(),
                text: t.to_string(),
                label: i % 3,
            })
            .collect(),
    };
    let labels = EmotionLabelSet::meld();
    let vocab = Vocabulary::build(std::slice::from_ref(&conv), &labels, &GlossTable::builtin()).unwrap();
    let dialogue = DialogueTokens::encode(&conv, &vocab);
    (ModelState::new(config, labels, vocab, 7).unwrap(), dialogue)
}

fn h_of(state: &ModelState, input: &Stage1Input) -> Vec<f64> {
    let mut tape = Tape::new();
    let (_, h) = state
        .net
        .forward_stage1(&mut tape, &state.store, input, state.vocab.pad(), &mut Dropout::off())
        .unwrap();
    tape.value(h).to_vec()
}

#[test]
fn forward_is_deterministic() {
    let (state, d) = fixture(tiny_config());
    let input = state.stage1_input(&d, 2).unwrap();
    let a = h_of(&state, &input);
    assert_eq!(a.len(), 8);
    assert_eq!(a, h_of(&state, &input));
    let (again, _) = fixture(tiny_config());
    assert_eq!(a, h_of(&again, &input));
}

#[test]
fn padding_does_not_leak() {
    let (state, d) = fixture(tiny_config());
    let input = state.stage1_input(&d, 3).unwrap();
    let n = input.context.len();
    let base_h = h_of(&state, &input);
    let mut tape = Tape::new();
    let enc = state
        .net
        .encode(&mut tape, &state.store, &EncodedInput::from_tokens(&input.context, 0), &mut Dropout::off())
        .unwrap();
    let base_enc = tape.value(enc.states).to_vec();
    for extra in [1usize, 5] {
        let mut padded = input.clone();
        padded.context.extend(std::iter::repeat(state.vocab.pad()).take(extra));
        let h = h_of(&state, &padded);
        for (a, b) in base_h.iter().zip(&h) {
            assert!((a - b).abs() <= 1e-9);
        }
        let mut tape = Tape::new();
        let enc = state
            .net
            .encode(&mut tape, &state.store, &EncodedInput::from_tokens(&padded.context, 0), &mut Dropout::off())
            .unwrap();
        let vals = tape.value(enc.states);
        for (a, b) in base_enc.iter().zip(&vals[..n * 8]) {
            assert!((a - b).abs() <= 1e-9);
        }
    }
}

#[test]
fn decoder_is_causal() {
    let (state, d) = fixture(tiny_config());
    let input = state.stage1_input(&d, 1).unwrap();
    let seq = paraphrase_sequence(&d, 1, &state.vocab.encode_text("feeling or showing anger"), &state.vocab);
    let run = |tokens: &[usize]| {
        let mut tape = Tape::new();
        let enc = state
            .net
            .encode(&mut tape, &state.store, &EncodedInput::from_tokens(&input.context, 0), &mut Dropout::off())
            .unwrap();
        let s = state.net.decode(&mut tape, &state.store, &enc, tokens, &mut Dropout::off()).unwrap();
        tape.value(s).to_vec()
    };
    let base = run(&seq);
    for r in 1..seq.len() {
        let mut changed = seq.clone();
        changed[r] = state.vocab.sep();
        let out = run(&changed);
        assert_eq!(&out[..r * 8], &base[..r * 8], "position {r}");
        assert_ne!(&out[r * 8..(r + 1) * 8], &base[r * 8..(r + 1) * 8]);
    }
}

#[test]
fn distinct_targets_give_distinct_vectors() {
    let (state, d) = fixture(tiny_config());
    let hs: Vec<Vec<f64>> = (0..d.len()).map(|t| state.mask_vector(&d, t).unwrap()).collect();
    for i in 0..hs.len() {
        for j in i + 1..hs.len() {
            let dot: f64 = hs[i].iter().zip(&hs[j]).map(|(a, b)| a * b).sum();
            let na: f64 = hs[i].iter().map(|a| a * a).sum::<f64>().sqrt();
            let nb: f64 = hs[j].iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(dot / (na * nb) < 0.999, "{i} vs {j}");
        }
    }
}

#[test]
fn classifier_bias_decides_when_weights_vanish() {
    let (mut state, d) = fixture(tiny_config());
    let head = state.net.head;
    let n = state.labels.len();
    let w = state.store.get_mut(head.out.w);
    w.data_mut().iter_mut().for_each(|x| *x = 0.0);
    let mut bias = vec![0.0; n];
    bias[3] = 1.0;
    *state.store.get_mut(head.out.b) = Tensor::vector(bias);
    for t in 0..d.len() {
        let h = state.mask_vector(&d, t).unwrap();
        let mut tape = Tape::new();
        let hv = tape.leaf(&Tensor::row(h));
        let (logits, pred) = classify(&mut tape, &state.store, &head, hv).unwrap();
        assert_eq!(pred, 3);
        let p = crate::numerics::softmax(tape.value(logits)).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn classifier_rejects_wrong_width() {
    let (state, _) = fixture(tiny_config());
    let mut tape = Tape::new();
    let h = tape.leaf(&Tensor::row(vec![0.0; 5]));
    assert!(classify(&mut tape, &state.store, &state.net.head, h).is_err());
}

#[test]
fn untrained_lm_loss_is_near_uniform() {
    let (state, d) = fixture(ModelConfig {
        d_model: 16,
        ..tiny_config()
    });
    let input = state.stage1_input(&d, 2).unwrap();
    let gloss = state.vocab.encode_text("experiencing or showing sorrow or unhappiness");
    let seq = paraphrase_sequence(&d, 2, &gloss, &state.vocab);
    let mut tape = Tape::new();
    let enc = state
        .net
        .encode(&mut tape, &state.store, &EncodedInput::from_tokens(&input.context, 0), &mut Dropout::off())
        .unwrap();
    let loss = state.net.lm_generate_loss(&mut tape, &state.store, &enc, &seq, &mut Dropout::off()).unwrap();
    let uniform = (state.vocab.len() as f64).ln();
    let got = tape.scalar(loss);
    assert!((got - uniform).abs() < 0.1 * uniform, "{got} vs {uniform}");
}

#[test]
fn empty_gloss_is_rejected() {
    let (state, d) = fixture(tiny_config());
    let input = state.stage1_input(&d, 0).unwrap();
    let seq = paraphrase_sequence(&d, 0, &[], &state.vocab);
    let mut tape = Tape::new();
    let enc = state
        .net
        .encode(&mut tape, &state.store, &EncodedInput::from_tokens(&input.context, 0), &mut Dropout::off())
        .unwrap();
    let r = state.net.lm_generate_loss(&mut tape, &state.store, &enc, &seq, &mut Dropout::off());
    assert!(matches!(r, Err(crate::Error::Contract(_))));
}

#[test]
fn overlong_input_is_a_contract_error() {
    let (state, _) = fixture(tiny_config());
    let tokens = vec![state.vocab.star(); 49];
    let mut tape = Tape::new();
    let r = state
        .net
        .encode(&mut tape, &state.store, &EncodedInput::from_tokens(&tokens, 0), &mut Dropout::off());
    assert!(matches!(r, Err(crate::Error::Contract(_))));
}

#[test]
fn injected_vector_replaces_embedding_row() {
    let (state, d) = fixture(tiny_config());
    let input = state.stage1_input(&d, 1).unwrap();
    let mut tape = Tape::new();
    let table = tape.param(&state.store, state.net.embed);
    let row = tape.gather_rows(table, &[input.context[0]]).unwrap();
    let mut mixed = EncodedInput::default();
    mixed.push_injected(row);
    mixed.push_tokens(&input.context[1..], 0);
    let a = state.net.encode(&mut tape, &state.store, &mixed, &mut Dropout::off()).unwrap();
    let b = state
        .net
        .encode(&mut tape, &state.store, &EncodedInput::from_tokens(&input.context, 0), &mut Dropout::off())
        .unwrap();
    assert_eq!(tape.value(a.states), tape.value(b.states));
}

#[test]
fn classification_gradients_match_finite_differences() {
    let (state, d) = fixture(tiny_config());
    let input = state.stage1_input(&d, 2).unwrap();
    // key biases shift every score of a row equally, so their gradient is exactly zero
    let ids: Vec<_> = state.store.ids().filter(|&id| !state.store.name(id).ends_with(".k.b")).collect();
    let report = check_store_gradients(&mut state.store.clone(), &ids, 1e-5, 60, 3, |store, tape| {
        let (_, h) = state.net.forward_stage1(tape, store, &input, 0, &mut Dropout::off())?;
        let (logits, _) = classify(tape, store, &state.net.head, h)?;
        tape.cross_entropy(logits, &[4])
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn generation_gradients_match_finite_differences() {
    let (state, d) = fixture(tiny_config());
    let input = state.stage1_input(&d, 3).unwrap();
    let seq = paraphrase_sequence(&d, 3, &state.vocab.encode_text("feeling or showing anger"), &state.vocab);
    // key biases shift every score of a row equally, so their gradient is exactly zero
    let ids: Vec<_> = state.store.ids().filter(|&id| !state.store.name(id).ends_with(".k.b")).collect();
    let report = check_store_gradients(&mut state.store.clone(), &ids, 1e-5, 60, 5, |store, tape| {
        let enc = state
            .net
            .encode(tape, store, &EncodedInput::from_tokens(&input.context, 0), &mut Dropout::off())?;
        state.net.lm_generate_loss(tape, store, &enc, &seq, &mut Dropout::off())
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-3, "{report:?}");
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let (mut state, d) = fixture(tiny_config());
    state.tag = "stage1".into();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    state.save(&path).unwrap();
    let back = ModelState::load(&path).unwrap();
    assert_eq!(back.tag, "stage1");
    assert_eq!(back.config, state.config);
    assert_eq!(back.vocab, state.vocab);
    for ((na, a), (nb, b)) in state.store.to_named().iter().zip(back.store.to_named().iter()) {
        assert_eq!(na, nb);
        let bits_a: Vec<u64> = a.data().iter().map(|x| x.to_bits()).collect();
        let bits_b: Vec<u64> = b.data().iter().map(|x| x.to_bits()).collect();
        assert_eq!(bits_a, bits_b, "{na}");
    }
    assert_eq!(state.mask_vector(&d, 2).unwrap(), back.mask_vector(&d, 2).unwrap());
}
