//! Admin statistics round trips.

use super::Rig;

/// Seeds experiment "exp" with one session per learner and `n` events each.
pub fn seeded(rig: &Rig, counts: &[(&str, usize)]) {
    for (learner, n) in counts {
        let sid = format!("s-{learner}");
        let s = rig.session(&sid, learner, "exp", "g");
        for i in 0..*n {
            rig.clock.advance(1_000 + (i as u64 % 7) * 500);
            let action = ["PAGE_NAVIGATION", "NOTE_EDIT", "ESSAY_EDIT"][i % 3];
            rig.act(&s, action, "t");
        }
    }
}

/// Export, wipe, reimport: stats, proportions and the export itself come
/// back identical and a second import is all duplicates.
pub fn reimport_roundtrip() {
    let export;
    let before;
    let proportions;
    {
        let dir = tempfile::tempdir().unwrap();
        let rig = Rig::on_disk(dir.path());
        seeded(&rig, &[("a", 10), ("b", 20), ("c", 7)]);
        before = rig.engine.stats("exp").unwrap();
        proportions = rig.engine.proportions("s-b").unwrap();
        export = rig.engine.export("exp", None).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let rig = Rig::on_disk(dir.path());
    let report = rig.engine.import(&export).unwrap();
    assert_eq!(report.imported, 37);
    assert_eq!(report.sessions_registered, 3);
    assert_eq!(rig.engine.stats("exp").unwrap(), before);
    assert_eq!(rig.engine.proportions("s-b").unwrap(), proportions);
    assert_eq!(rig.engine.export("exp", None).unwrap(), export);
    // Importing twice only finds duplicates.
    let again = rig.engine.import(&export).unwrap();
    assert_eq!((again.imported, again.duplicates), (0, 37));
}
