// Subsample sentence-level detection examples to a hallucinated:clean ratio.

use hallu_pref::pipeline::{balance_detection_training_set, balanced_counts, generate_synthetic_corpus, BalanceRatio, SyntheticWorld};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let ratio: BalanceRatio = "1:1.2".parse()?;
    for (h, c) in [(100, 120), (100, 500), (50, 40), (7, 3)] {
        println!("{h:>4}:{c:<4} -> {:?}", balanced_counts(h, c, ratio));
    }

    let world = SyntheticWorld::standard();
    let corpus = generate_synthetic_corpus(&world, 300, 0.5, 9)?;
    let examples = balance_detection_training_set(&corpus.dataset, ratio, 0)?;
    let hallucinated = examples.iter().filter(|e| e.feedback.is_hallucinated()).count();
    println!("kept {hallucinated} hallucinated and {} clean sentences", examples.len() - hallucinated);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
