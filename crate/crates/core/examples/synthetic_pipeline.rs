// Generate a synthetic corpus with planted errors, then detect and rewrite
// it into preference pairs.

use hallu_pref::pipeline::{
    build_preference_dataset, generate_synthetic_corpus, BuildInput, BuildOptions, ReferenceDetector,
    ReferenceRewriter, SyntheticWorld,
};
use hallu_pref::types::DatasetMeta;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let world = SyntheticWorld::standard();
    let corpus = generate_synthetic_corpus(&world, 40, 0.4, 7)?;
    let inputs: Vec<BuildInput> = corpus
        .dataset
        .records()
        .iter()
        .map(|r| BuildInput::Raw {
            prompt: r.prompt.clone(),
            response: r.annotated.response.clone(),
        })
        .collect();

    let detector = ReferenceDetector { world: world.clone() };
    let out = build_preference_dataset(&inputs, &detector, &ReferenceRewriter, DatasetMeta::new("example", 0), BuildOptions::default());
    println!("{:?}", out.report);

    if let Some(p) = out.dataset.pairs().first() {
        println!("prompt:   {}", p.prompt.instruction);
        println!("rejected: {}", p.rejected.response.raw_text());
        for f in p.rejected.feedback.iter().filter(|f| f.is_hallucinated()) {
            println!("  [{}] {} (severity {})", f.sentence_index, f.h_type.as_str(), f.severity.value());
        }
        println!("chosen:   {}", p.chosen.raw_text());
        println!("severity: {}", p.aggregated_severity.ratio());
    }
    assert!(out.quarantine.is_empty());
    assert_eq!(out.report.emitted, out.dataset.len());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
