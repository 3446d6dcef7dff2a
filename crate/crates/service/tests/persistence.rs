use std::path::Path;

use lgbo_core::engine::RunConfig;
use lgbo_service::campaign::Status;
use lgbo_service::Service;
use serde_json::json;

fn open(dir: &Path) -> Service {
    Service::open(dir, RunConfig::default()).unwrap()
}

fn body() -> serde_json::Value {
    json!({
        "variables": [{"name": "a", "kind": "continuous", "bounds": [0.0, 1.0]},
                      {"name": "b", "kind": "continuous", "bounds": [-1.0, 1.0]}],
        "config": {"budget": 5, "seed": 4, "acquisition": {"candidate_count": 128, "refine_steps": 2}}
    })
}

fn rt() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap()
}

#[test]
fn restart_reproduces_trace_and_open_suggestion() {
    let dir = tempfile::tempdir().unwrap();
    let rt = rt();
    let svc = open(dir.path());
    let id = rt.block_on(svc.create(&body())).unwrap().id;
    for round in 1..=3 {
        rt.block_on(svc.suggest(&id)).unwrap();
        rt.block_on(svc.observe(&id, &json!({"round": round, "value": round as f64 * 0.1})))
            .unwrap();
    }
    let open_before = rt.block_on(svc.suggest(&id)).unwrap();
    let before = serde_json::to_string(&svc.trace(&id).unwrap()).unwrap();
    drop(svc);

    let svc = open(dir.path());
    assert_eq!(serde_json::to_string(&svc.trace(&id).unwrap()).unwrap(), before);
    assert_eq!(rt.block_on(svc.suggest(&id)).unwrap(), open_before);
    assert_eq!(svc.summary(&id).unwrap().status, Status::AwaitingObservation);
}

#[test]
fn torn_final_line_keeps_last_complete_event() {
    let dir = tempfile::tempdir().unwrap();
    let rt = rt();
    let svc = open(dir.path());
    let id = rt.block_on(svc.create(&body())).unwrap().id;
    rt.block_on(svc.suggest(&id)).unwrap();
    let before = serde_json::to_string(&svc.trace(&id).unwrap()).unwrap();
    drop(svc);
    let log = dir.path().join(format!("{id}.jsonl"));
    let mut text = std::fs::read_to_string(&log).unwrap();
    text.push_str("{\"event\":\"observed\",\"round\":1,\"val");
    std::fs::write(&log, text).unwrap();

    let svc = open(dir.path());
    assert_eq!(serde_json::to_string(&svc.trace(&id).unwrap()).unwrap(), before);
    assert!(std::fs::read_to_string(&log).unwrap().ends_with("}\n"));
    rt.block_on(svc.observe(&id, &json!({"round": 1, "value": 1.0}))).unwrap();
}

#[test]
fn corrupt_campaign_is_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let rt = rt();
    let svc = open(dir.path());
    let good = rt.block_on(svc.create(&body())).unwrap().id;
    let bad = rt.block_on(svc.create(&body())).unwrap().id;
    rt.block_on(svc.suggest(&good)).unwrap();
    rt.block_on(svc.suggest(&bad)).unwrap();
    drop(svc);
    let log = dir.path().join(format!("{bad}.jsonl"));
    let text = std::fs::read_to_string(&log).unwrap();
    std::fs::write(&log, format!("garbage\n{text}")).unwrap();

    let svc = open(dir.path());
    let listing = svc.list();
    assert_eq!(listing.campaigns.len(), 1);
    assert_eq!(listing.campaigns[0].id, good);
    assert_eq!(listing.unrecoverable[0].id, bad);
    assert_eq!(svc.trace(&bad).unwrap_err().body.code, "unrecoverable");
    assert_eq!(rt.block_on(svc.suggest(&bad)).unwrap_err().body.code, "unrecoverable");
    rt.block_on(svc.observe(&good, &json!({"round": 1, "value": 0.3}))).unwrap();
}
