use std::process::Command;
use std::sync::mpsc;
use std::sync::{Arc, Barrier, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use nlbox::behavior::{self, Side};
use nlbox::client::BoxBackend;
use nlbox::entropy::SystemEntropy;
use nlbox::sampling::Engine;
use nlbox::service::LocalDeployment;
use nlbox::store::{FaultPoint, Store, StoreConfig, StoreError, TransactionId};

fn tid(s: &str) -> TransactionId {
    TransactionId::new(s).unwrap()
}

#[test]
fn duplicate_first_use_over_http_stores_one_result() {
    let dep = LocalDeployment::start(&behavior::pr_box(), Box::new(SystemEntropy::new())).unwrap();
    let n = 64;
    let barrier = Arc::new(Barrier::new(n));
    let outputs: Vec<usize> = thread::scope(|s| {
        let handles: Vec<_> = (0..n)
            .map(|_| {
                let client = dep.http_client(Side::Alice).unwrap();
                let barrier = barrier.clone();
                s.spawn(move || {
                    barrier.wait();
                    client.use_box("dup-1", 1).unwrap()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert!(outputs.iter().all(|&o| o == outputs[0]), "{outputs:?}");
    let rows = dep.engine.store().list_transactions(dep.box_id).unwrap();
    assert_eq!(rows.len(), 1);
    let row = &rows[0];
    assert_eq!(row.alice.unwrap().output, outputs[0]);
    assert!(row.bob.is_none());
    assert_eq!(row.row_version, 1);
}

#[test]
fn duplicate_first_use_in_process_from_both_sides() {
    // Alice and Bob race on many fresh transactions; every pair must satisfy
    // the PR relation whichever side won.
    let dep = LocalDeployment::start(&behavior::pr_box(), Box::new(SystemEntropy::new())).unwrap();
    let alice = dep.local_client(Side::Alice);
    let bob = dep.local_client(Side::Bob);
    for i in 0..200 {
        let k = format!("race-{i}");
        let (x, y) = (i % 2, (i / 2) % 2);
        let barrier = Barrier::new(8);
        let results: Vec<(Side, usize)> = thread::scope(|s| {
            let handles: Vec<_> = (0..8)
                .map(|j| {
                    let (client, input): (&dyn BoxBackend, usize) = if j % 2 == 0 { (&alice, x) } else { (&bob, y) };
                    let (barrier, k) = (&barrier, &k);
                    s.spawn(move || {
                        barrier.wait();
                        (client.side(), client.use_box(k, input).unwrap())
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        let a: Vec<usize> = results.iter().filter(|r| r.0 == Side::Alice).map(|r| r.1).collect();
        let b: Vec<usize> = results.iter().filter(|r| r.0 == Side::Bob).map(|r| r.1).collect();
        assert!(a.iter().all(|&v| v == a[0]) && b.iter().all(|&v| v == b[0]));
        assert_eq!(a[0] ^ b[0], x & y);
    }
}

#[test]
fn second_side_waits_for_first_side_commit() {
    let dep = LocalDeployment::start(&behavior::pr_box(), Box::new(SystemEntropy::new())).unwrap();
    let store = dep.engine.store().clone();
    let committed_at: Arc<Mutex<Option<Instant>>> = Arc::default();
    let (entered_tx, entered_rx) = mpsc::channel();
    let entered_tx = Mutex::new(entered_tx);
    let c = committed_at.clone();
    store.set_fault_hook(Some(Arc::new(move |point| {
        match point {
            FaultPoint::BeforeCommit(row) if row.bob.is_none() => {
                entered_tx.lock().unwrap().send(()).unwrap();
                thread::sleep(Duration::from_millis(300));
            }
            FaultPoint::AfterCommit(row) if row.bob.is_none() => {
                *c.lock().unwrap() = Some(Instant::now());
            }
            _ => {}
        }
        Ok(())
    })));

    let alice = dep.http_client(Side::Alice).unwrap();
    let bob = dep.http_client(Side::Bob).unwrap();
    let (a, b, bob_done, visible_during_section) = thread::scope(|s| {
        let ha = s.spawn(|| alice.use_box("slow-1", 1).unwrap());
        entered_rx.recv_timeout(Duration::from_secs(5)).unwrap();
        // The first side is inside its section: nothing is durable yet.
        let visible = store.get_transaction(dep.box_id, &tid("slow-1")).unwrap();
        let hb = s.spawn(|| {
            let b = bob.use_box("slow-1", 1).unwrap();
            (b, Instant::now())
        });
        let (b, done) = hb.join().unwrap();
        (ha.join().unwrap(), b, done, visible)
    });
    assert!(visible_during_section.is_none());
    let committed = committed_at.lock().unwrap().expect("first side committed");
    assert!(
        bob_done > committed,
        "second side answered before the first side was durable"
    );
    assert_eq!(a ^ b, 1);
}

#[test]
fn failed_commit_leaves_no_row_and_second_side_starts_fresh() {
    let dep = LocalDeployment::start(&behavior::pr_box(), Box::new(SystemEntropy::new())).unwrap();
    let store = dep.engine.store().clone();
    store.set_fault_hook(Some(Arc::new(|point| match point {
        FaultPoint::BeforeCommit(row) if row.transaction_id.as_str() == "fail-1" && row.alice.is_some() => {
            Err(StoreError::Unavailable("injected".into()))
        }
        _ => Ok(()),
    })));
    let alice = dep.local_client(Side::Alice);
    let bob = dep.local_client(Side::Bob);
    assert!(alice.use_box("fail-1", 0).is_err());
    assert!(store.get_transaction(dep.box_id, &tid("fail-1")).unwrap().is_none());
    bob.use_box("fail-1", 0).unwrap();
    let row = store.get_transaction(dep.box_id, &tid("fail-1")).unwrap().unwrap();
    assert_eq!(row.first_side, Some(Side::Bob));
    assert!(row.alice.is_none());
}

const CRASH_DIR: &str = "NLBOX_TEST_CRASH_DIR";
const CRASH_POINT: &str = "NLBOX_TEST_CRASH_POINT";

/// Child half of the crash tests: aborts the process inside the section.
#[test]
fn crash_child() {
    let (Ok(dir), Ok(point)) = (std::env::var(CRASH_DIR), std::env::var(CRASH_POINT)) else {
        return;
    };
    let store = Arc::new(Store::open(&dir, StoreConfig::default()).unwrap());
    let after = point == "after";
    store.set_fault_hook(Some(Arc::new(move |p| {
        match p {
            FaultPoint::BeforeCommit(_) if !after => std::process::abort(),
            FaultPoint::AfterCommit(_) if after => std::process::abort(),
            _ => {}
        }
        Ok(())
    })));
    let engine = Engine::new(store, Box::new(SystemEntropy::new()));
    let _ = engine.use_box(1, &tid("crash-1"), Side::Alice, 1);
    unreachable!("fault hook should have aborted");
}

fn crash_at(point: &str) -> (tempfile::TempDir, Store) {
    let dir = tempfile::tempdir().unwrap();
    {
        let store = Store::open(dir.path(), StoreConfig::default()).unwrap();
        let a = store.create_user("alice").unwrap().user.user_id;
        let b = store.create_user("bob").unwrap().user.user_id;
        assert_eq!(store.create_box_instance(&behavior::pr_box(), a, b).unwrap().box_id, 1);
    }
    let status = Command::new(std::env::current_exe().unwrap())
        .args(["crash_child", "--exact", "--nocapture", "--test-threads=1"])
        .env(CRASH_DIR, dir.path())
        .env(CRASH_POINT, point)
        .stdout(std::process::Stdio::null())
        .stderr(std::process::Stdio::null())
        .status()
        .unwrap();
    assert!(!status.success(), "child was expected to abort");
    let store = Store::open(dir.path(), StoreConfig::default()).unwrap();
    (dir, store)
}

#[test]
fn crash_before_commit_leaves_no_partial_row() {
    let (_dir, store) = crash_at("before");
    assert!(store.get_transaction(1, &tid("crash-1")).unwrap().is_none());
    // The lock died with the process; the transaction is usable.
    let engine = Engine::new(Arc::new(store), Box::new(SystemEntropy::new()));
    let b = engine.use_box(1, &tid("crash-1"), Side::Bob, 1).unwrap();
    assert!(b.first_use);
}

#[test]
fn crash_after_commit_keeps_the_first_side() {
    let (_dir, store) = crash_at("after");
    let row = store.get_transaction(1, &tid("crash-1")).unwrap().unwrap();
    let a = row.alice.unwrap();
    assert_eq!(a.input, 1);
    assert!(row.bob.is_none());
    let engine = Engine::new(Arc::new(store), Box::new(SystemEntropy::new()));
    let replay = engine.use_box(1, &tid("crash-1"), Side::Alice, 1).unwrap();
    assert!(replay.replayed);
    assert_eq!(replay.output, a.output);
    let b = engine.use_box(1, &tid("crash-1"), Side::Bob, 1).unwrap();
    assert_eq!(a.output ^ b.output, 1);
}
