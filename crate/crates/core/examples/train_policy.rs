// Train a toy policy with the severity-weighted loss and watch the
// chosen/rejected margin grow.

use hallu_pref::pipeline::{
    build_preference_dataset, generate_synthetic_corpus, BuildInput, BuildOptions, ReferenceDetector,
    ReferenceRewriter, SyntheticWorld,
};
use hallu_pref::policy::{snapshot_reference, ToyPolicy, Vocabulary};
use hallu_pref::preference::LossKind;
use hallu_pref::trainer::{tokenize_pairs, train, TrainerConfig};
use hallu_pref::types::DatasetMeta;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let world = SyntheticWorld::standard();
    let corpus = generate_synthetic_corpus(&world, 120, 0.4, 3)?;
    let inputs: Vec<BuildInput> = corpus
        .dataset
        .records()
        .iter()
        .map(|r| BuildInput::Raw {
            prompt: r.prompt.clone(),
            response: r.annotated.response.clone(),
        })
        .collect();
    let detector = ReferenceDetector { world };
    let data = build_preference_dataset(&inputs, &detector, &ReferenceRewriter, DatasetMeta::new("example", 0), BuildOptions::default()).dataset;

    let texts = data.pairs().iter().flat_map(|p| [p.chosen.raw_text(), p.rejected.response.raw_text()]);
    let init = ToyPolicy::uniform(Vocabulary::from_texts(texts, false)?, 8)?;
    let reference = snapshot_reference(&init);
    let cfg = TrainerConfig {
        steps: 300,
        batch_size: 32,
        loss_kind: LossKind::HsaDpo,
        ..TrainerConfig::default()
    };
    let out = train(init, &reference, &data, &cfg)?;
    for s in out.trace.iter().step_by(60) {
        println!(
            "step {:>4}  loss {:.4}  chosen {:+.3}  rejected {:+.3}",
            s.step, s.loss, s.mean_chosen_logratio, s.mean_rejected_logratio
        );
    }

    let pairs = tokenize_pairs(&reference, &data)?;
    let ordered = pairs
        .iter()
        .filter(|p| out.policy.log_prob(&p.chosen) > out.policy.log_prob(&p.rejected))
        .count();
    println!("chosen preferred on {ordered}/{} pairs", pairs.len());
    assert!(out.trace.last().unwrap().loss < out.trace[0].loss);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
