// Embeds the HTTP API in an application: serve on an ephemeral port, then
// drive it the way a browser client would.
//
//     cargo run -p regulearn-server --example embedded_server

use std::sync::Arc;

use regulearn::clock::SystemClock;
use regulearn::engine::{Engine, EngineConfig};
use serde_json::{json, Value};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let engine = Arc::new(Engine::open(EngineConfig::default(), Arc::new(SystemClock))?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
        let base = format!("http://{}", listener.local_addr()?);
        let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
        let server = tokio::spawn(regulearn_server::serve(Arc::clone(&engine), listener, async {
            let _ = stopped.await;
        }));

        let http = reqwest::Client::new();
        let session: Value = http
            .post(format!("{base}/v1/sessions"))
            .json(&json!({"learner_id": "learner-1", "experiment_id": "pilot", "group": "PwC"}))
            .send()
            .await?
            .json()
            .await?;
        let sid = session["session_id"].as_str().unwrap_or_default().to_owned();
        println!("session {sid}");

        let events: Vec<Value> = ["TASK_REQUIREMENT", "RUBRIC", "PAGE_NAVIGATION"]
            .iter()
            .enumerate()
            .map(|(i, a)| {
                json!({"event_id": format!("{sid}-{i}"), "session_id": sid, "learner_id": "learner-1",
                       "experiment_id": "pilot", "client_timestamp_ms": 0, "action": a, "target": "t"})
            })
            .collect();
        let acks: Value = http.post(format!("{base}/v1/events")).json(&events).send().await?.json().await?;
        println!("acks: {acks}");
        let conditions: Value = http.get(format!("{base}/v1/sessions/{sid}/conditions")).send().await?.json().await?;
        println!("requirement aware: {}", conditions["dynamic"]["requirement_aware"]);
        let export = http.get(format!("{base}/v1/experiments/pilot/export")).send().await?.text().await?;
        println!("export has {} lines", export.lines().count());

        let _ = stop.send(());
        server.await??;
        Ok::<_, Box<dyn std::error::Error>>(())
    })?;
    engine.shutdown();
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
