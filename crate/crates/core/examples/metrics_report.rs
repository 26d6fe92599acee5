// Caption hallucination metrics and detection scores on a synthetic corpus.

use hallu_pref::metrics::{
    amber_generative, chair_object_halbench, detection_binary_metrics, detection_multiclass_metrics,
    severity_score_metric, ObjectLexicon,
};
use hallu_pref::pipeline::{generate_synthetic_corpus, SyntheticWorld};
use hallu_pref::types::{AnnotatedResponse, SentenceFeedback};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let world = SyntheticWorld::standard();
    let corpus = generate_synthetic_corpus(&world, 200, 0.3, 21)?;
    let lexicon = ObjectLexicon::from_world(&world);

    let mut report = chair_object_halbench(&corpus.eval_records, &lexicon)?;
    report.extend(amber_generative(&corpus.eval_records, &lexicon, true)?);

    // A detector that never flags anything, scored against the planted labels.
    let gold: Vec<AnnotatedResponse> = corpus.dataset.records().iter().map(|r| r.annotated.clone()).collect();
    let silent: Vec<AnnotatedResponse> = gold
        .iter()
        .map(|a| {
            let fb = a.feedback.iter().map(|f| SentenceFeedback::clean(f.sentence_index, &f.sentence_text)).collect();
            AnnotatedResponse::new(a.response.clone(), fb).unwrap()
        })
        .collect();
    report.extend(detection_binary_metrics(&silent, &gold)?);
    report.extend(detection_multiclass_metrics(&silent, &gold)?);
    report.extend(severity_score_metric(&gold)?);

    print!("{}", report.to_table());
    assert_eq!(report.value("Recall"), 0.0);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
