// Split a caption into sentences, attach feedback, and see the validator
// catch an inconsistent annotation.

use hallu_pref::segment::segment_sentences;
use hallu_pref::types::{
    validate_annotated, AnnotatedResponse, HallucinationType, ResponseRecord, SentenceFeedback, SeverityScore,
};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let text = "A man rides a bicycle at 5 p.m. on Main St. near the barn. A unicorn watches him! Is the sky blue?";
    let sentences = segment_sentences(text)?;
    for (i, s) in sentences.iter().enumerate() {
        println!("[{i}] {s}");
    }
    assert_eq!(sentences.len(), 3);

    let response = ResponseRecord::from_sentences("demo-1", sentences.clone())?;
    let feedback = vec![
        SentenceFeedback::clean(0, &sentences[0]),
        SentenceFeedback::hallucinated(
            1,
            &sentences[1],
            HallucinationType::Object,
            "no unicorn in the scene",
            SeverityScore::new(3)?,
            None,
        ),
        SentenceFeedback::clean(2, &sentences[2]),
    ];
    let annotated = AnnotatedResponse::new(response.clone(), feedback)?;
    println!("violations: {}", validate_annotated(&annotated).len());

    // A hallucination label with severity 0 is inconsistent.
    let mut broken = annotated.clone();
    broken.feedback[1].severity = SeverityScore::new(0)?;
    let found = validate_annotated(&broken);
    for v in &found {
        println!("caught: {v:?}");
    }
    assert!(!found.is_empty());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
