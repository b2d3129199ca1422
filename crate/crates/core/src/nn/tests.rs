use proptest::prelude::*;

use super::*;

fn ce(logits: Vec<f64>, n: usize, targets: &[usize]) -> f64 {
    let mut g = Graph::new();
    let x = g.constant(Tensor::matrix(targets.len(), n, logits));
    let l = g.cross_entropy(x, targets, None, None).unwrap();
    g.value(l).data()[0]
}

#[test]
fn cross_entropy_examples() {
    assert!((ce(vec![0.0; 8], 8, &[3]) - 8f64.ln()).abs() < 1e-12);
    let mut hot = vec![0.0; 8];
    hot[5] = 1000.0;
    assert!(ce(hot, 8, &[5]).abs() < 1e-12);
    let expect = -(2f64.exp() / (2f64.exp() + 1f64.exp() + 1.0)).ln();
    let got = ce(vec![2.0, 1.0, 0.0], 3, &[0]);
    assert!((got - expect).abs() < 1e-12);
    assert!((got - 0.4076).abs() < 5e-5);
}

#[test]
fn cross_entropy_mask_and_errors() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::matrix(2, 3, vec![2.0, 1.0, 0.0, 9.0, -9.0, 0.0]));
    let l = g.cross_entropy(x, &[0, 1], Some(&[true, false]), None).unwrap();
    assert!((g.value(l).data()[0] - 0.40760596444).abs() < 1e-10);
    assert!(g.cross_entropy(x, &[0, 3], None, None).is_err());
    assert!(g.cross_entropy(x, &[0], None, None).is_err());
}

fn single(name: &str, t: Tensor) -> ParameterSet {
    let mut p = ParameterSet::new(0);
    p.insert(name, t);
    p
}

#[test]
fn backward_of_sum_and_square() {
    let w = Tensor::matrix(2, 3, vec![1.0, -2.0, 3.5, 0.0, 0.25, -7.0]);
    let p = single("w", w.clone());
    let mut g = Graph::new();
    let v = g.param(&p, "w").unwrap();
    let s = g.sum(v);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get("w").unwrap().data(), &[1.0; 6]);

    let mut g = Graph::new();
    let v = g.param(&p, "w").unwrap();
    let sq = g.mul(v, v).unwrap();
    let s = g.sum(sq);
    let half = g.scale(s, 0.5);
    let grads = g.backward(half).unwrap();
    assert_eq!(grads.get("w").unwrap(), &w);
}

#[test]
fn backward_rejects_non_scalar() {
    let p = single("w", Tensor::matrix(2, 2, vec![1.0; 4]));
    let mut g = Graph::new();
    let v = g.param(&p, "w").unwrap();
    assert!(g.backward(v).is_err());
}

fn linear_loss(p: &ParameterSet, g: &mut Graph) -> crate::Result<Var> {
    let x = g.constant(Tensor::matrix(2, 3, vec![0.5, -1.0, 2.0, 1.5, 0.25, -0.75]));
    let w = g.param(p, "w")?;
    let b = g.param(p, "b")?;
    let y = g.matmul(x, w)?;
    let y = g.add_row(y, b)?;
    Ok(g.sum(y))
}

fn linear_params() -> ParameterSet {
    let mut p = ParameterSet::new(5);
    p.init("w", &[3, 4], Init::Xavier);
    p.init("b", &[4], Init::Uniform(1.0));
    p
}

#[test]
fn gradcheck_linear_model() {
    let r = gradient_check(linear_loss, &linear_params(), 1e-5, 1).unwrap();
    assert_eq!(r.n_checked, 16);
    assert!(r.max_rel_error < 1e-8, "{r:?}");
}

#[test]
fn gradcheck_attention_encoder() {
    let cfg = ModelConfig {
        d_model: 8,
        n_heads: 2,
        n_layers_enc: 1,
        n_layers_dec: 1,
        max_input_len: 8,
        max_output_len: 8,
        vocab_size: 13,
    };
    let m = Transformer::new(cfg, 9).unwrap();
    let f = |p: &ParameterSet, g: &mut Graph| {
        let mem = m.encode_with(g, p, &[4, 7, 7, 12, 3])?;
        let logits = m.decode_with(g, p, mem, &[2, 8, 9])?;
        g.cross_entropy(logits, &[8, 9, 3], None, None)
    };
    let r = gradient_check(f, &m.params, 1e-5, 2).unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn gradcheck_flags_wrong_gradient() {
    let p = linear_params();
    let mut g = Graph::new();
    let l = linear_loss(&p, &mut g).unwrap();
    let mut grads = g.backward(l).unwrap();
    grads.0.get_mut("w").unwrap().data_mut()[5] *= 1.5;
    let value = |q: &ParameterSet| {
        let mut g = Graph::new();
        let l = linear_loss(q, &mut g)?;
        Ok(g.value(l).data()[0])
    };
    let r = compare_gradients(value, &p, &grads, 1e-5, 3).unwrap();
    assert!(r.max_rel_error > 1e-2);
    assert_eq!((r.worst_tensor.as_str(), r.worst_index), ("w", 5));
    assert!(compare_gradients(value, &p, &grads, 1e-2, 3).is_err());
}

#[test]
fn every_op_passes_gradcheck() {
    let mut p = ParameterSet::new(17);
    p.init("a", &[3, 4], Init::Uniform(1.0));
    p.init("b", &[3, 4], Init::Uniform(1.0));
    p.init("gamma", &[4], Init::Uniform(1.0));
    p.init("beta", &[4], Init::Uniform(1.0));
    p.init("e", &[5, 4], Init::Uniform(1.0));
    let f = |p: &ParameterSet, g: &mut Graph| {
        let a = g.param(p, "a")?;
        let b = g.param(p, "b")?;
        let gm = g.param(p, "gamma")?;
        let bt = g.param(p, "beta")?;
        let e = g.param(p, "e")?;
        let x = g.mul(a, b)?;
        let x = g.layer_norm(x, gm, bt)?;
        let x = g.gelu(x);
        let s = g.matmul_bt(x, a)?;
        let s = g.softmax(s, true);
        let y = g.matmul(s, b)?;
        let left = g.slice_cols(y, 0, 1)?;
        let right = g.slice_cols(y, 1, 3)?;
        let y = g.concat_cols(&[right, left])?;
        let rows = g.gather(e, &[4, 0, 4])?;
        let y = g.add(y, rows)?;
        let pooled = g.mean_rows(y);
        let logits = g.matmul_bt(y, e)?;
        let ce = g.cross_entropy(logits, &[1, 2, 0], Some(&[true, true, false]), None)?;
        let extra = g.sum(pooled);
        let extra = g.scale(extra, 0.3);
        g.add(ce, extra)
    };
    let r = gradient_check(f, &p, 1e-5, 4).unwrap();
    assert!(r.max_rel_error < 1e-6, "{r:?}");
}

#[test]
fn activations_stay_finite_for_bounded_inputs() {
    let cfg = ModelConfig {
        d_model: 8,
        n_heads: 2,
        n_layers_enc: 2,
        n_layers_dec: 1,
        max_input_len: 16,
        max_output_len: 16,
        vocab_size: 20,
    };
    let mut m = Transformer::new(cfg, 1).unwrap();
    let mut scaled = ParameterSet::new(1);
    for (name, t) in m.params.iter() {
        let data = t.data().iter().enumerate().map(|(i, _)| if i % 2 == 0 { 10.0 } else { -10.0 }).collect();
        scaled.insert(name, Tensor::new(t.shape().to_vec(), data).unwrap());
    }
    m.params = scaled;
    let mut g = Graph::new();
    let mem = m.encode(&mut g, &[1, 5, 19, 3, 3, 0]).unwrap();
    let logits = m.decode(&mut g, mem, &[2, 4, 6]).unwrap();
    let loss = g.cross_entropy(logits, &[4, 6, 3], None, None).unwrap();
    assert!(g.value(mem).is_finite());
    assert!(g.value(logits).is_finite());
    assert!(g.value(loss).is_finite());
}

#[test]
fn training_is_reproducible_across_thread_counts() {
    let cfg = ModelConfig {
        d_model: 8,
        n_heads: 2,
        n_layers_enc: 1,
        n_layers_dec: 1,
        max_input_len: 8,
        max_output_len: 8,
        vocab_size: 12,
    };
    let data: Vec<Vec<usize>> = vec![vec![7, 8, 9], vec![10, 11], vec![8, 8, 7, 11], vec![9]];
    let train = |threads: usize| {
        let mut m = Transformer::new(cfg.clone(), 42).unwrap();
        let tc = TrainConfig { learning_rate: 0.01, batch_size: 3, epochs: 5, ..Default::default() };
        let model = m.clone();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let report = pool
            .install(|| {
                train_loop(
                    &mut m.params,
                    &data,
                    &tc,
                    |p, ex, _rng, g| {
                        let mem = model.encode_with(g, p, ex)?;
                        let mut inp = vec![2];
                        inp.extend_from_slice(&ex[..ex.len() - 1]);
                        let logits = model.decode_with(g, p, mem, &inp)?;
                        g.cross_entropy(logits, ex, None, None)
                    },
                    |_, _| {},
                )
            })
            .unwrap();
        (m.params, report)
    };
    let (p1, r1) = train(1);
    let (p4, r4) = train(4);
    assert_eq!(p1, p4);
    assert_eq!(r1, r4);
    assert_eq!(r1.steps, 10);
    assert!(r1.epoch_losses.last() < r1.epoch_losses.first());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn backward_is_linear(w in proptest::collection::vec(-3.0f64..3.0, 6), c in -2.0f64..2.0) {
        let p = single("w", Tensor::matrix(2, 3, w));
        let f1 = |g: &mut Graph| {
            let v = g.param(&p, "w").unwrap();
            let sq = g.mul(v, v).unwrap();
            g.sum(sq)
        };
        let f2 = |g: &mut Graph| {
            let v = g.param(&p, "w").unwrap();
            let s = g.softmax(v, false);
            let m = g.mean_rows(s);
            let s = g.sum(m);
            g.scale(s, c)
        };
        let mut g = Graph::new();
        let a = f1(&mut g);
        let ga = g.backward(a).unwrap();
        let mut g = Graph::new();
        let b = f2(&mut g);
        let gb = g.backward(b).unwrap();
        let mut g = Graph::new();
        let a = f1(&mut g);
        let b = f2(&mut g);
        let s = g.add(a, b).unwrap();
        let gs = g.backward(s).unwrap();
        let mut sum = ga.clone();
        sum.accumulate(&gb);
        prop_assert!(gs.get("w").unwrap().max_abs_diff(sum.get("w").unwrap()) < 1e-12);
    }

    #[test]
    fn cross_entropy_is_non_negative(logits in proptest::collection::vec(-20.0f64..20.0, 5), t in 0usize..5) {
        prop_assert!(ce(logits, 5, &[t]) >= 0.0);
    }
}
