mod common;

use std::sync::Arc;

use chrono::Duration;
use common::*;
use contact_server::{ManualClock, OrderTag, ServerConfig, ServerError, TracingServer};

fn stored(dir: &tempfile::TempDir) -> ServerConfig {
    ServerConfig {
        storage: Some(dir.path().join("server.journal")),
        ..config()
    }
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    haystack.windows(needle.len()).any(|w| w == needle)
}

#[test]
fn key_bytes_never_reach_storage() {
    let dir = tempfile::tempdir().unwrap();
    let (server, _) = server_with(stored(&dir));
    let ks = keys(11, 14, t0().date_naive());
    let secrets: Vec<[u8; 32]> = ks.iter().map(|k| *k.bytes()).collect();
    let tan = server.issue_tan(CREDENTIAL).unwrap().tan;
    server.accept_report(&tan, ks).unwrap();
    let check = || {
        let bytes = std::fs::read(dir.path().join("server.journal")).unwrap();
        for s in &secrets {
            assert!(!contains(&bytes, s));
            assert!(!contains(&bytes, hex::encode(s).as_bytes()));
        }
    };
    check();
    server.seal_batch().unwrap();
    check();
}

#[test]
fn restart_reopens_pending_batch() {
    let dir = tempfile::tempdir().unwrap();
    let today = t0().date_naive();
    let (server, clock) = server_with(stored(&dir));
    let used = server.issue_tan(CREDENTIAL).unwrap().tan;
    server.accept_report(&used, keys(1, 1, today)).unwrap();
    let sealed = server.seal_batch().unwrap();
    let pending_tan = server.issue_tan(CREDENTIAL).unwrap().tan;
    server.accept_report(&pending_tan, keys(2, 2, today)).unwrap();
    let spare = server.issue_tan(CREDENTIAL).unwrap().tan;
    drop(server);

    let restarted = TracingServer::open(stored(&dir), clock.clone()).unwrap();
    let health = restarted.health();
    assert_eq!(health.open_entries, 288);
    assert_eq!(health.latest_batch_id, 1);
    assert_eq!(health.open_batch_id, 2);
    let back = restarted.batch(1).unwrap();
    assert_eq!(back.entries(), sealed.entries());
    assert_eq!(back.server_key(), sealed.server_key());
    assert!(matches!(
        restarted.accept_report(&used, keys(3, 1, today)),
        Err(ServerError::Tan(contact_server::TanError::Consumed))
    ));
    restarted.accept_report(&spare, keys(4, 1, today)).unwrap();
    let next = restarted.seal_batch().unwrap();
    assert_eq!(next.id(), 2);
    assert_eq!(next.ce_tcns(OrderTag::FirstOrder).len(), 3 * 144);
}

#[test]
fn purge_is_durable() {
    let dir = tempfile::tempdir().unwrap();
    let (server, clock) = server_with(stored(&dir));
    let old_tan = server.issue_tan(CREDENTIAL).unwrap().tan;
    let old_keys = keys(8, 1, t0().date_naive());
    let old_ce = old_keys[0].regenerate_day()[0].ce_tcn;
    server.accept_report(&old_tan, old_keys).unwrap();
    server.seal_batch().unwrap();
    clock.advance(Duration::days(15));
    server.seal_batch().unwrap();
    assert_eq!(server.purge().unwrap().batches, 1);
    drop(server);

    let bytes = std::fs::read(dir.path().join("server.journal")).unwrap();
    assert!(!contains(&bytes, old_ce.to_hex().as_bytes()));
    let clock = Arc::new(ManualClock::new(t0() + Duration::days(15)));
    let restarted = TracingServer::open(stored(&dir), clock).unwrap();
    assert!(restarted.batch(1).is_none());
    assert!(restarted.batch(2).is_some());
}

#[test]
fn corrupt_journal_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("server.journal");
    std::fs::write(&path, "{\"op\":\"tan_used\",\"tan\":\"X\"}\nnot json\n").unwrap();
    let clock = Arc::new(ManualClock::new(t0()));
    match TracingServer::open(stored(&dir), clock) {
        Err(ServerError::Journal { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected journal error, got {other:?}"),
    }
}
