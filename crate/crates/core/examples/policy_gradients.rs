// A tiny bucketed bigram policy: score a sentence, take NLL steps, and
// check the analytic gradient against central differences.

use hallu_pref::policy::{LogitTensor, ToyPolicy, Vocabulary};
use hallu_pref::preference::finite_difference_check;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let texts = ["the dog sits on the mat", "the cat sits on the chair"];
    let vocab = Vocabulary::from_texts(texts, false)?;
    let mut policy = ToyPolicy::uniform(vocab.clone(), 2)?;
    let batch = texts
        .iter()
        .map(|t| policy.tokenize(t, "prompt-a"))
        .collect::<Result<Vec<_>, _>>()?;

    let before = policy.log_prob(&batch[0]);
    for _ in 0..50 {
        let (_, grad) = policy.nll_loss(&batch)?;
        policy.logits_mut().add_scaled(&grad, -0.5);
    }
    let after = policy.log_prob(&batch[0]);
    println!("log p(first sentence): {before:.3} -> {after:.3}");
    assert!(after > before);

    let (c, v, _) = policy.logits().shape();
    let err = finite_difference_check(
        |x: &[f64]| {
            let p = ToyPolicy::from_logits(vocab.clone(), LogitTensor::from_vec(c, v, x.to_vec()).unwrap()).unwrap();
            let (loss, g) = p.nll_loss(&batch).unwrap();
            (loss, g.as_slice().to_vec())
        },
        policy.logits().as_slice(),
        1e-5,
    );
    println!("max relative gradient error: {err:.2e}");
    assert!(err < 1e-6);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
