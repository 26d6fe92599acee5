// Talk to an HTTP detector. A local scripted endpoint fails once, then
// answers; a second one returns garbage and the record is quarantined.

use std::time::Duration;

use hallu_pref::pipeline::remote::{DetectorWireReply, WireFeedback};
use hallu_pref::pipeline::stub::{ScriptedEndpoint, StubAction};
use hallu_pref::pipeline::{
    build_preference_dataset, generate_synthetic_corpus, remote_detect, BuildInput, BuildOptions, DetectorRequest,
    ReferenceRewriter, RemoteClient, RetryPolicy, SyntheticWorld,
};
use hallu_pref::types::DatasetMeta;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let world = SyntheticWorld::standard();
    let corpus = generate_synthetic_corpus(&world, 2, 1.0, 5)?;
    let record = &corpus.dataset.records()[0];
    let answer = serde_json::to_string(&DetectorWireReply {
        feedback: record.annotated.feedback.iter().map(WireFeedback::from).collect(),
    })?;

    let retry = RetryPolicy {
        base_delay: Duration::from_millis(5),
        ..RetryPolicy::default()
    };
    let flaky = ScriptedEndpoint::scripted(vec![StubAction::Status(503, "warming up".into()), StubAction::reply(answer)])?;
    let client = RemoteClient::http(flaky.address(), Duration::from_secs(2), retry.clone());
    let req = DetectorRequest {
        prompt: record.prompt.clone(),
        response: record.annotated.response.clone(),
    };
    let (reply, retries) = remote_detect(&client, &req)?;
    for r in &retries {
        println!("retry {} after {} ms: {}", r.attempt, r.delay_ms, r.error);
    }
    println!("{} sentences labelled", reply.feedback.len());

    let broken = ScriptedEndpoint::scripted(vec![StubAction::reply("{\"feedback\": 42}")])?;
    let client = RemoteClient::http(broken.address(), Duration::from_secs(2), retry);
    let inputs = [BuildInput::Raw {
        prompt: record.prompt.clone(),
        response: record.annotated.response.clone(),
    }];
    let out = build_preference_dataset(&inputs, &client, &ReferenceRewriter, DatasetMeta::new("example", 0), BuildOptions::default());
    for q in &out.quarantine {
        println!("quarantined {} at {}: {}", q.prompt_id, q.stage, q.reason);
    }
    assert_eq!(out.report.quarantined, 1);
    assert!(out.dataset.is_empty());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
