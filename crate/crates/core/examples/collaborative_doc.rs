// Collaborative editing with operational transformation: two clients edit
// the same document concurrently and converge on the server's content.
//
//     cargo run -p regulearn --example collaborative_doc

use std::sync::Arc;

use regulearn::clock::SystemClock;
use regulearn::collab::{fold_log, DocClient, DocHub};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let hub = DocHub::new(Arc::new(SystemClock), None);
    hub.create_doc("essay")?;
    let mut ana = DocClient::new("essay", "ana");
    let mut ben = DocClient::new("essay", "ben");
    let mut ana_feed = hub.subscribe_doc("essay", 0)?;
    let mut ben_feed = hub.subscribe_doc("essay", 0)?;

    // Ana types a title and waits for the server before Ben joins in.
    let op = ana.insert(0, "Learning with AI").expect("first op is sent at once");
    hub.submit_op(op, None)?;
    while let Some(c) = ana_feed.try_next() {
        ana.receive(&c);
    }
    while let Some(c) = ben_feed.try_next() {
        ben.receive(&c);
    }

    // Both edit at the same time, neither having seen the other's change.
    let a = ana.insert(16, ": a review").expect("idle client sends");
    let b = ben.delete(0, 9).expect("idle client sends");
    hub.submit_op(a, None)?;
    hub.submit_op(b, None)?;

    for (client, feed) in [(&mut ana, &mut ana_feed), (&mut ben, &mut ben_feed)] {
        while let Some(c) = feed.try_next() {
            if let Some(next) = client.receive(&c) {
                hub.submit_op(next, None)?;
            }
        }
    }
    let state = hub.state("essay")?;
    println!("server  r{}: {:?}", state.revision, state.content);
    println!("ana     r{}: {:?}", ana.revision(), ana.content());
    println!("ben     r{}: {:?}", ben.revision(), ben.content());
    assert_eq!(ana.content(), state.content);
    assert_eq!(ben.content(), state.content);
    assert_eq!(fold_log(&state.op_log), state.content);
    for r in 0..=state.revision {
        println!("  replay r{r}: {:?}", hub.replay("essay", r)?);
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
