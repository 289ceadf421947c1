use super::*;
use crate::gradcheck::check_params;

fn tiny(text_only: bool) -> ModelConfig {
    ModelConfig {
        vocab_size: 9,
        d_model: 4,
        d_knowledge: 3,
        text_layers: 2,
        cross_layers: 1,
        heads: 2,
        ff_dim: 6,
        max_text_len: 6,
        visual_dim: 3,
        text_only,
        num_answers: 3,
        binary_head: true,
        init_scale: 0.8,
    }
}

fn visual() -> Matrix {
    Matrix::from_vec(2, 3, vec![0.3, -0.5, 1.2, 0.9, 0.1, -0.4])
}

#[test]
fn embed_tokens_is_row_lookup() {
    let m = Model::new(tiny(true), 1).unwrap();
    let table = m.word_embeddings();
    assert_eq!(m.embed_tokens(&[3]).unwrap(), vec![table.row(3).to_vec()]);
    assert!(m.embed_tokens(&[]).unwrap().is_empty());
    let batch = m.embed_tokens(&[1, 4, 1]).unwrap();
    let single: Vec<_> = [1, 4, 1].iter().flat_map(|&i| m.embed_tokens(&[i]).unwrap()).collect();
    assert_eq!(batch, single);
    assert!(matches!(m.embed_tokens(&[9]), Err(Error::IdOutOfRange { id: 9, .. })));
}

#[test]
fn zero_weights_pool_to_final_bias() {
    let mut m = Model::new(tiny(false), 2).unwrap();
    for v in m.params.values_mut() {
        v.fill(0.0);
    }
    let beta = vec![0.25, -1.0, 0.5, 2.0];
    let id = m.params.expect("cross.0.ln2.b");
    m.params.get_mut(id).data = beta.clone();
    let fwd = m.forward(&[2, 3, 4], Some(&visual()), 0).unwrap();
    assert_eq!(fwd.pooled_output(), beta.as_slice());
}

#[test]
fn zero_cross_attention_decouples_visual_stream() {
    let mut m = Model::new(tiny(false), 3).unwrap();
    for name in ["cross.0.attn.wv", "cross.0.attn.wo"] {
        let id = m.params.expect(name);
        m.params.get_mut(id).fill(0.0);
    }
    let v = visual();
    let mut swapped = v.clone();
    swapped.row_mut(0).copy_from_slice(v.row(1));
    swapped.row_mut(1).copy_from_slice(v.row(0));
    let other = Matrix::from_vec(3, 3, vec![5.0; 9]);
    let ids = [1, 5, 2];
    let base = m.answer_loss(&ids, Some(&v), 0, 1).unwrap().0;
    assert_eq!(m.answer_loss(&ids, Some(&swapped), 0, 1).unwrap().0, base);
    assert_eq!(m.answer_loss(&ids, Some(&other), 0, 1).unwrap().0, base);
}

#[test]
fn shape_errors() {
    let m = Model::new(tiny(false), 4).unwrap();
    assert!(m.forward(&[1; 7], None, 0).is_err());
    assert!(m.forward(&[12], None, 0).is_err());
    assert!(m.forward(&[1], Some(&Matrix::zeros(1, 2)), 0).is_err());
    let bad = ModelConfig { heads: 3, ..tiny(true) };
    assert!(Model::new(bad, 0).is_err());
}

#[test]
fn padding_does_not_leak() {
    let m = Model::new(tiny(false), 5).unwrap();
    let a = m.forward(&[3, 4], Some(&visual()), 0).unwrap();
    let b = m.forward(&[3, 4, 0, 0], Some(&visual()), 0).unwrap();
    for (x, y) in a.pooled_output().iter().zip(b.pooled_output()) {
        assert!((x - y).abs() < 1e-12);
    }
    for l in 0..2 {
        let x = a.pooled_layer_representation(l).unwrap();
        let y = b.pooled_layer_representation(l).unwrap();
        for (x, y) in x.iter().zip(&y) {
            assert!((x - y).abs() < 1e-12);
        }
    }
    let la = m.answer_loss(&[3, 4], None, 0, 2).unwrap().0;
    let lb = m.answer_loss(&[3, 4, 0], None, 0, 2).unwrap().0;
    assert!((la - lb).abs() < 1e-12);
}

#[test]
fn pooled_layer_representation_cases() {
    let mut m = Model::new(tiny(true), 6).unwrap();
    let single = m.forward(&[5], None, 0).unwrap();
    let hidden = single.tape.value(single.layers[1]).row(0).to_vec();
    assert_eq!(single.pooled_layer_representation(1).unwrap(), hidden);
    assert!(single.pooled_layer_representation(2).is_err());
    drop(single);

    // without position embeddings, a repeated token is indistinguishable from one copy
    let pos = m.params.expect("emb.pos");
    m.params.get_mut(pos).fill(0.0);
    let one = m.forward(&[5], None, 0).unwrap();
    let two = m.forward(&[5, 5], None, 0).unwrap();
    for l in 0..2 {
        let x = one.pooled_layer_representation(l).unwrap();
        let y = two.pooled_layer_representation(l).unwrap();
        for (x, y) in x.iter().zip(&y) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    let fwd = m.forward(&[1, 2, 3, 0], None, 0).unwrap();
    let h = fwd.tape.value(fwd.layers[0]);
    let mut expected = vec![0.0; 4];
    for r in 0..3 {
        for c in 0..4 {
            expected[c] += h.get(r, c) / 3.0;
        }
    }
    let got = fwd.pooled_layer_representation(0).unwrap();
    for (x, y) in got.iter().zip(&expected) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn forward_is_deterministic() {
    let a = Model::new(tiny(false), 7).unwrap();
    let b = Model::new(tiny(false), 7).unwrap();
    assert_eq!(a, b);
    let la = a.mlm_loss(&[1, 2, 3], Some(&visual()), 0, &[1], &[6]).unwrap();
    let lb = b.mlm_loss(&[1, 2, 3], Some(&visual()), 0, &[1], &[6]).unwrap();
    assert_eq!(la.0, lb.0);
    assert_eq!(la.1, lb.1);
}

fn assert_grads_match(model: &Model, f: impl Fn(&Model) -> (f64, Gradients)) {
    let (_, analytic) = f(model);
    let errs = check_params(
        &model.params,
        &analytic,
        |p| {
            let probe = Model { config: model.config.clone(), params: p.clone() };
            f(&probe).0
        },
        1e-5,
        usize::MAX,
    );
    for e in errs {
        assert!(e.relative_error < 1e-4, "{}: relative error {}", e.name, e.relative_error);
    }
}

#[test]
fn gradients_match_finite_differences_all_heads() {
    let m = Model::new(tiny(false), 8).unwrap();
    let v = visual();
    let ids = [1, 6, 2, 0, 8];
    assert_grads_match(&m, |m| m.mlm_loss(&ids, Some(&v), 0, &[1, 4], &[3, 7]).unwrap());
    assert_grads_match(&m, |m| m.answer_loss(&ids, Some(&v), 0, 2).unwrap());
    assert_grads_match(&m, |m| m.binary_loss(&ids, Some(&v), 0, 1).unwrap());

    let text = Model::new(tiny(true), 9).unwrap();
    assert_grads_match(&text, |m| m.answer_loss(&[4, 4, 5], None, 0, 0).unwrap());
}
