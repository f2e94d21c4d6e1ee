mod common;

use common::{gradcheck, gradcheck_batch as batch, gradcheck_cfg as cfg};
use lrmt::nmt::{batch_loss, loss_and_grad, Example, FactoredBatch, Params};

#[test]
fn gradients_match_finite_differences() {
    for (name, worst) in gradcheck(100) {
        assert!(worst < 1e-4, "{name}: max relative error {worst:e}");
    }
}

#[test]
fn padding_does_not_change_loss_or_gradients() {
    let p = Params::<f64>::init(&cfg(), 11).unwrap();
    let ex = batch();
    let alone = FactoredBatch::new(&ex[1..2]);
    let (la, ga) = loss_and_grad(&p, &alone, None).unwrap();
    // Same sentence padded inside a wider batch: restrict to its share.
    let with_pad = FactoredBatch::new(&ex);
    assert!(with_pad.src_width > alone.src_width);
    let only: Vec<&Example> = vec![&ex[1]];
    let mut padded = FactoredBatch::new(only);
    // widen the matrices with extra PAD columns
    let widen = |ids: &[u32], w: usize, nw: usize| -> Vec<u32> {
        let mut v = vec![0; nw];
        v[..w].copy_from_slice(&ids[..w]);
        v
    };
    padded.src_ids = widen(&padded.src_ids, padded.src_width, 9);
    padded.src_width = 9;
    padded.tgt_in = widen(&padded.tgt_in, padded.tgt_width, 8);
    padded.tgt_out = widen(&padded.tgt_out, padded.tgt_width, 8);
    padded.tgt_width = 8;
    let (lp, gp) = loss_and_grad(&p, &padded, None).unwrap();
    assert_eq!(la.loss, lp.loss);
    assert_eq!(ga, gp);
    // the PAD embedding row never receives gradient
    let t = p.layout.get("src_tok_emb").unwrap();
    assert!(gp[t.offset..t.offset + t.shape[1]].iter().all(|&g| g == 0.0));
}

#[test]
fn factor_gradient_flows_only_through_the_encoder() {
    let ex = batch();
    let b = FactoredBatch::new(&ex);
    let base = Params::<f64>::init(&cfg(), 11).unwrap();
    let factor = base.layout.get("factor_emb").unwrap().range();
    let (_, g) = loss_and_grad(&base, &b, None).unwrap();
    assert!(g[factor.clone()].iter().any(|&x| x != 0.0));

    // Zero output projection: nothing upstream of it receives gradient.
    let mut p = base.clone();
    p.tensor_mut("out.w").unwrap().fill(0.0);
    let (_, g) = loss_and_grad(&p, &b, None).unwrap();
    assert!(g[factor.clone()].iter().all(|&x| x == 0.0));
    assert!(g[p.layout.get("out.b").unwrap().range()].iter().any(|&x| x != 0.0));

    // Cut the encoder off (zero cross-attention output weights and biases):
    // the factor then has no path to the loss.
    let mut p = base.clone();
    for l in 0..2 {
        p.tensor_mut(&format!("dec.{l}.cross_attn.wo")).unwrap().fill(0.0);
        p.tensor_mut(&format!("dec.{l}.cross_attn.bo")).unwrap().fill(0.0);
    }
    let (_, g) = loss_and_grad(&p, &b, None).unwrap();
    assert!(g[factor].iter().all(|&x| x == 0.0));
    assert!(g[p.layout.get("tgt_tok_emb").unwrap().range()].iter().any(|&x| x != 0.0));
}

#[test]
fn initial_loss_is_near_uniform() {
    let mut c = cfg();
    c.token_vocab = 500;
    c.label_smoothing = 0.0;
    let p = Params::<f32>::init(&c, 1).unwrap();
    let ex = batch();
    let s = batch_loss(&p, &FactoredBatch::new(&ex)).unwrap();
    let ln_v = (500f64).ln();
    assert!((s.loss - ln_v).abs() / ln_v < 0.05, "{} vs {ln_v}", s.loss);
}
