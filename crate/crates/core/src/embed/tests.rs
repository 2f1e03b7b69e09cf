use super::*;
use rand::SeedableRng;

const E: usize = 4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn params(seed: u64, n_cont: usize, options: &[usize], cards: &[usize], shared: bool) -> (
    ContinuousEmbedderParams,
    CheckboxEmbedderParams,
    CategoricalEmbedderParams,
) {
    let mut r = rng(seed);
    (
        ContinuousEmbedderParams::init(n_cont, E, shared, &mut r),
        CheckboxEmbedderParams::init(options, E, &mut r),
        CategoricalEmbedderParams::init(cards, E, &mut r),
    )
}

/// Snap tensor values onto a dyadic grid so that small sums are exact and
/// reassociation cannot change results.
fn quantize(t: &mut Tensor) {
    let scale = (1u64 << 20) as f64;
    for v in t.values_mut() {
        *v = (*v * scale).round() / scale;
    }
}

#[test]
fn token_shapes_and_concat_order() {
    let (cont, check, cat) = params(1, 2, &[3], &[3, 2], false);
    let mut tape = Tape::new();
    let vars = bind_embed(&mut tape, &cont, &check, &cat);

    let values = vec![0.5, -1.0, 2.0, 0.0, 1.0, 1.0];
    let mask = vec![1.0; 6];
    let c = embed_continuous(&mut tape, &values, &mask, 3, &vars, E).unwrap();
    assert_eq!(tape.shape(c), &[3, 2, E]);

    let bits = vec![vec![1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]];
    let missing = vec![vec![false, false, false]];
    let x = embed_checkbox(&mut tape, &bits, &missing, &vars).unwrap();
    assert_eq!(tape.shape(x), &[3, 1, E]);

    let idx = vec![vec![1, 0, 3], vec![2, 2, 1]];
    let g = embed_categorical(&mut tape, &idx, &vars).unwrap();
    assert_eq!(tape.shape(g), &[3, 2, E]);

    let all = tape.concat_tokens(&[c, x, g]).unwrap();
    assert_eq!(tape.shape(all), &[3, 5, E]);
    // token 0 of the concatenation is continuous token 0.
    assert_eq!(&tape.value(all)[..E], &tape.value(c)[..E]);
    // token 2 is the checkbox token, tokens 3..5 the categorical ones.
    let row = |v: Var, tok: usize| tape.value(v)[tok * E..(tok + 1) * E].to_vec();
    assert_eq!(row(all, 2), row(x, 0));
    assert_eq!(row(all, 3), row(g, 0));
}

#[test]
fn batch_of_one_keeps_shapes() {
    let (cont, check, cat) = params(2, 1, &[2], &[2], false);
    let mut tape = Tape::new();
    let vars = bind_embed(&mut tape, &cont, &check, &cat);
    let c = embed_continuous(&mut tape, &[0.3], &[1.0], 1, &vars, E).unwrap();
    let x = embed_checkbox(&mut tape, &[vec![1.0, 0.0]], &[vec![false]], &vars).unwrap();
    let g = embed_categorical(&mut tape, &[vec![2]], &vars).unwrap();
    assert_eq!(tape.shape(c), &[1, 1, E]);
    assert_eq!(tape.shape(x), &[1, 1, E]);
    assert_eq!(tape.shape(g), &[1, 1, E]);
}

#[test]
fn continuous_missing_invariance_is_exact() {
    let (cont, check, cat) = params(3, 2, &[], &[], false);
    let run = |raw: f64| {
        let mut tape = Tape::new();
        let vars = bind_embed(&mut tape, &cont, &check, &cat);
        // feature 1 of row 0 is missing; its raw value must be irrelevant.
        let values = vec![0.7, raw, -0.2, 0.9];
        let mask = vec![1.0, 0.0, 1.0, 1.0];
        let out = embed_continuous(&mut tape, &values, &mask, 2, &vars, E).unwrap();
        tape.value(out).to_vec()
    };
    let a = run(12345.0);
    let b = run(-0.001);
    assert_eq!(a, b);
    // The masked token itself is exactly zero.
    assert!(a[E..2 * E].iter().all(|&v| v == 0.0));
}

#[test]
fn mask_applies_after_the_mlp_not_to_the_input() {
    // A present zero still produces a nonzero token through the MLP biases;
    // only the mask zeroes a token.
    let (cont, check, cat) = params(4, 1, &[], &[], false);
    let mut tape = Tape::new();
    let vars = bind_embed(&mut tape, &cont, &check, &cat);
    let out = embed_continuous(&mut tape, &[0.0, 0.0], &[1.0, 0.0], 2, &vars, E).unwrap();
    let v = tape.value(out);
    assert!(v[..E].iter().any(|&x| x != 0.0), "present zero passes the MLP");
    assert!(v[E..].iter().all(|&x| x == 0.0), "missing token is zeroed");
}

#[test]
fn checkbox_missing_invariance_and_reserved_row() {
    let mut table = Tensor::new(
        &[4, E],
        (0..16).map(|i| i as f64 / 8.0).collect(),
    )
    .unwrap()
    .trainable();
    quantize(&mut table);
    let check = CheckboxEmbedderParams { tables: vec![table.clone()] };
    let (cont, _, cat) = params(5, 0, &[], &[], false);

    let run = |bits: Vec<f64>, missing: bool| {
        let mut tape = Tape::new();
        let vars = bind_embed(&mut tape, &cont, &check, &cat);
        let out = embed_checkbox(&mut tape, &[bits], &[vec![missing]], &vars).unwrap();
        tape.value(out).to_vec()
    };
    // Whole-group missing ignores the bits entirely and selects the last row.
    assert_eq!(run(vec![1.0, 1.0, 0.0], true), run(vec![0.0, 0.0, 1.0], true));
    assert_eq!(run(vec![0.0, 0.0, 0.0], true), table.values()[3 * E..].to_vec());
    // Explicit "none apply" is the zero vector, distinct from missing.
    assert_eq!(run(vec![0.0, 0.0, 0.0], false), vec![0.0; E]);
    assert_ne!(run(vec![0.0, 0.0, 0.0], false), run(vec![0.0, 0.0, 0.0], true));
}

#[test]
fn checkbox_additivity_and_permutation_on_dyadic_tables() {
    let mut r = rng(6);
    let c = 6;
    let mut table = table_init(&mut r, c + 1, E);
    quantize(&mut table);
    let check = CheckboxEmbedderParams { tables: vec![table.clone()] };
    let (cont, _, cat) = params(7, 0, &[], &[], false);

    let embed_bits = |bits: &[f64]| {
        let mut tape = Tape::new();
        let vars = bind_embed(&mut tape, &cont, &check, &cat);
        let out = embed_checkbox(&mut tape, &[bits.to_vec()], &[vec![false]], &vars).unwrap();
        tape.value(out).to_vec()
    };

    let mut mask_rng = rng(60);
    for trial in 0..200 {
        // Two random masks with disjoint supports.
        let mut b1 = vec![0.0; c];
        let mut b2 = vec![0.0; c];
        for k in 0..c {
            match mask_rng.gen_range(0..3) {
                0 => b1[k] = 1.0,
                1 => b2[k] = 1.0,
                _ => {}
            }
        }
        let union: Vec<f64> = b1.iter().zip(&b2).map(|(a, b)| a + b).collect();
        let lhs = embed_bits(&union);
        let sum: Vec<f64> = embed_bits(&b1)
            .iter()
            .zip(embed_bits(&b2))
            .map(|(a, b)| a + b)
            .collect();
        assert_eq!(lhs, sum, "additivity failed on trial {trial}");

        // Loop oracle summed in reverse member order: same exact result.
        let mut oracle = vec![0.0; E];
        for k in (0..c).rev() {
            if union[k] == 1.0 {
                for (o, t) in oracle.iter_mut().zip(&table.values()[k * E..(k + 1) * E]) {
                    *o += t;
                }
            }
        }
        assert_eq!(lhs, oracle, "permuted-order oracle failed on trial {trial}");
    }
}

#[test]
fn categorical_lookup_matches_table_rows() {
    let table = Tensor::new(&[4, E], (0..16).map(|i| (i * i) as f64).collect())
        .unwrap()
        .trainable();
    let cat = CategoricalEmbedderParams { tables: vec![table.clone()] };
    let (cont, check, _) = params(8, 0, &[], &[], false);
    let mut tape = Tape::new();
    let vars = bind_embed(&mut tape, &cont, &check, &cat);
    let out = embed_categorical(&mut tape, &[vec![0, 2, 3]], &vars).unwrap();
    let v = tape.value(out);
    assert_eq!(&v[..E], &table.values()[..E], "index 0 is the missing row");
    assert_eq!(&v[E..2 * E], &table.values()[2 * E..3 * E]);
    assert_eq!(&v[2 * E..], &table.values()[3 * E..]);
}

#[test]
fn out_of_range_and_malformed_inputs_error() {
    let (cont, check, cat) = params(9, 1, &[2], &[3], false);
    let mut tape = Tape::new();
    let vars = bind_embed(&mut tape, &cont, &check, &cat);
    assert!(embed_categorical(&mut tape, &[vec![4]], &vars).is_err());
    assert!(embed_continuous(&mut tape, &[1.0, 2.0], &[1.0], 1, &vars, E).is_err());
    assert!(embed_checkbox(&mut tape, &[vec![0.5, 0.0]], &[vec![false]], &vars).is_err());
    assert!(embed_checkbox(&mut tape, &[vec![1.0]], &[vec![false]], &vars).is_err());
}

#[test]
fn shared_mlp_reuses_one_block() {
    let (shared, _, _) = params(10, 3, &[], &[], true);
    assert_eq!(shared.blocks.len(), 1);
    assert!(shared.shared());
    let (cont, check, cat) = params(10, 3, &[], &[], true);
    let mut tape = Tape::new();
    let vars = bind_embed(&mut tape, &cont, &check, &cat);
    let out =
        embed_continuous(&mut tape, &[0.4, 0.4, 0.4], &[1.0, 1.0, 1.0], 1, &vars, E).unwrap();
    let v = tape.value(out);
    assert_eq!(&v[..E], &v[E..2 * E], "same value embeds identically when shared");
    assert_eq!(&v[..E], &v[2 * E..]);

    // Per-feature blocks give generically different tokens for the same value.
    let (cont, check, cat) = params(10, 3, &[], &[], false);
    assert_eq!(cont.blocks.len(), 3);
    let mut tape = Tape::new();
    let vars = bind_embed(&mut tape, &cont, &check, &cat);
    let out =
        embed_continuous(&mut tape, &[0.4, 0.4, 0.4], &[1.0, 1.0, 1.0], 1, &vars, E).unwrap();
    let v = tape.value(out);
    assert_ne!(&v[..E], &v[E..2 * E]);
}

#[test]
fn gradients_flow_to_present_features_only() {
    let (cont, check, cat) = params(11, 2, &[2], &[2], false);
    let mut tape = Tape::new();
    let vars = bind_embed(&mut tape, &cont, &check, &cat);
    // Feature 0 present in both rows, feature 1 missing everywhere.
    let c = embed_continuous(
        &mut tape,
        &[0.3, 9.0, -0.8, 9.0],
        &[1.0, 0.0, 1.0, 0.0],
        2,
        &vars,
        E,
    )
    .unwrap();
    let x = embed_checkbox(
        &mut tape,
        &[vec![1.0, 0.0, 0.0, 1.0]],
        &[vec![false, false]],
        &vars,
    )
    .unwrap();
    let g = embed_categorical(&mut tape, &[vec![1, 0]], &vars).unwrap();
    let all = tape.concat_tokens(&[c, x, g]).unwrap();
    let loss = tape.sum_all(all);
    tape.backward(loss).unwrap();

    let l2 = |v: Var| tape.grad(v).iter().map(|g| g * g).sum::<f64>();
    assert!(l2(vars.cont_blocks[0].w1) > 0.0);
    assert!(l2(vars.cont_blocks[0].w2) > 0.0);
    assert_eq!(l2(vars.cont_blocks[1].w1), 0.0, "missing feature gets no gradient");
    assert_eq!(l2(vars.cont_blocks[1].w2), 0.0);
    assert!(l2(vars.check_tables[0]) > 0.0);
    // Categorical rows 1 (sample 0) and 0 (sample 1) receive gradient.
    let tg = tape.grad(vars.cat_tables[0]);
    assert!(tg[E..2 * E].iter().any(|&v| v != 0.0));
    assert!(tg[..E].iter().any(|&v| v != 0.0));
    assert!(tg[2 * E..].iter().all(|&v| v == 0.0), "unseen row stays zero");
}

#[test]
fn embed_tokens_skips_absent_modalities() {
    use crate::data::{make_batch, Feature, FeatureSchema, TabularDataset};

    let schema = FeatureSchema::new(
        "y",
        vec![Feature::continuous("a"), Feature::continuous("b")],
    )
    .unwrap();
    let csv = "a,b,y\n1.0,2.0,1\n,0.5,0\n";
    let data = TabularDataset::from_csv_reader(csv.as_bytes(), &schema).unwrap();
    let batch = make_batch(&data, &[0, 1]).unwrap();
    let mut r = rng(12);
    let cont = ContinuousEmbedderParams::init(2, E, false, &mut r);
    let check = CheckboxEmbedderParams { tables: vec![] };
    let cat = CategoricalEmbedderParams { tables: vec![] };
    let mut tape = Tape::new();
    let vars = bind_embed(&mut tape, &cont, &check, &cat);
    let tokens = embed_tokens(&mut tape, &batch, &vars, E).unwrap();
    assert_eq!(tape.shape(tokens), &[2, 2, E]);
    // Row 1 feature "a" is missing: token zeroed.
    assert!(tape.value(tokens)[2 * E..3 * E].iter().all(|&v| v == 0.0));
}

#[test]
fn named_order_matches_bind_order() {
    let (mut cont, mut check, mut cat) = params(13, 2, &[2], &[3], false);
    let mut named = Vec::new();
    embed_named(&cont, &check, &cat, &mut named);
    let named_len = named.len();
    let mut tape = Tape::new();
    let vars = bind_embed(&mut tape, &cont, &check, &cat);
    let leaves = tape.trainable_leaves();
    assert_eq!(named_len, leaves.len());
    let flat = [
        vars.cont_blocks[0].w1,
        vars.cont_blocks[0].b1,
        vars.cont_blocks[0].w2,
        vars.cont_blocks[0].b2,
        vars.cont_blocks[1].w1,
        vars.cont_blocks[1].b1,
        vars.cont_blocks[1].w2,
        vars.cont_blocks[1].b2,
        vars.check_tables[0],
        vars.cat_tables[0],
    ];
    for ((name, t), (leaf, bound)) in named.iter().zip(leaves.iter().zip(flat)) {
        assert_eq!(*leaf, bound);
        assert_eq!(tape.value(bound), t.values(), "mismatch at {name}");
    }
    drop(named);
    let mut named_mut = Vec::new();
    embed_named_mut(&mut cont, &mut check, &mut cat, &mut named_mut);
    assert_eq!(named_mut.len(), named_len);
}
