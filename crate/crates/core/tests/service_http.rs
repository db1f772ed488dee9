use std::net::SocketAddr;
use std::sync::Arc;

use nlbox::behavior::{self, Side};
use nlbox::client::{list_boxes, AdminClient, BoxBackend, ClientError, HttpBoxClient, ADMIN_KEY_HEADER};
use nlbox::entropy::SeededEntropy;
use nlbox::game::{plan_transactions, player_rng, run_plan, TransactionIdScheme};
use nlbox::sampling::{Engine, FirstMover};
use nlbox::service::{router, spawn, LocalDeployment, RunningServer};
use nlbox::stats::stratified_no_signaling;
use nlbox::store::{Store, StoreConfig};
use serde_json::Value;

const ADMIN: &str = "admin-secret";

struct Fixture {
    server: RunningServer,
    _ui: tempfile::TempDir,
}

fn fixture() -> Fixture {
    let ui = tempfile::tempdir().unwrap();
    std::fs::write(ui.path().join("index.html"), "<!doctype html><title>boxes</title>").unwrap();
    let store = Arc::new(Store::open_in_memory(StoreConfig::default()).unwrap());
    let engine = Arc::new(Engine::new(store, Box::new(SeededEntropy::new(5))));
    let app = router(engine, Some(ADMIN.into()), Some(ui.path().to_path_buf()));
    let server = spawn(app, SocketAddr::from(([127, 0, 0, 1], 0))).unwrap();
    Fixture { server, _ui: ui }
}

fn get(url: &str) -> (u16, Value) {
    let resp = reqwest::blocking::get(url).unwrap();
    let code = resp.status().as_u16();
    (code, resp.json().unwrap())
}

#[test]
fn admin_flow_and_box_listing() {
    let f = fixture();
    let base = f.server.base_url();
    let admin = AdminClient::new(&base, ADMIN).unwrap();
    let alice = admin.create_user("alice").unwrap();
    let bob = admin.create_user("bob").unwrap();
    let info = admin
        .create_box(&behavior::tsirelson_box(), alice.user_id, bob.user_id)
        .unwrap();
    assert_eq!(info.behavior, "tsirelson");
    assert_eq!(admin.list_boxes().unwrap(), vec![info.clone()]);

    let mine = list_boxes(&base, &bob.api_key).unwrap();
    assert_eq!(mine.len(), 1);
    assert_eq!(mine[0].role, Side::Bob);

    let client = HttpBoxClient::new(&base, &alice.api_key, info.box_id, Side::Alice).unwrap();
    client.use_box("r1", 0).unwrap();
    admin.revoke_key(alice.user_id).unwrap();
    assert!(matches!(client.use_box("r2", 0), Err(ClientError::Auth(_))));
}

#[test]
fn admin_requires_the_header() {
    let f = fixture();
    let http = reqwest::blocking::Client::new();
    let url = format!("{}/api/v1/admin/createUser", f.server.base_url());
    let body = r#"{"displayName":"eve"}"#;
    let none = http.post(&url).body(body).send().unwrap();
    assert_eq!(none.status().as_u16(), 401);
    let bad = http
        .post(&url)
        .header(ADMIN_KEY_HEADER, "wrong")
        .body(body)
        .send()
        .unwrap();
    assert_eq!(bad.status().as_u16(), 401);
    let ok = http
        .post(&url)
        .header(ADMIN_KEY_HEADER, ADMIN)
        .body(body)
        .send()
        .unwrap();
    assert_eq!(ok.status().as_u16(), 200);

    let signaling = r#"{"behavior":{"name":"sig","x_size":2,"y_size":2,"a_size":2,"b_size":2,
        "table":[1,0,0,0, 0,0,0,1, 1,0,0,0, 0,0,0,1]},"aliceUser":1,"bobUser":1}"#;
    let resp = http
        .post(format!("{}/api/v1/admin/createBox", f.server.base_url()))
        .header(ADMIN_KEY_HEADER, ADMIN)
        .body(signaling)
        .send()
        .unwrap();
    assert_eq!(resp.status().as_u16(), 400);

    // Without a configured key administration is off.
    let dep = LocalDeployment::start(&behavior::pr_box(), Box::new(SeededEntropy::new(1))).unwrap();
    let off = http
        .post(format!("{}/api/v1/admin/createUser", dep.base_url()))
        .header(ADMIN_KEY_HEADER, "")
        .body(body)
        .send()
        .unwrap();
    assert_eq!(off.status().as_u16(), 403);
}

#[test]
fn use_box_status_codes() {
    let dep = LocalDeployment::start(&behavior::pr_box(), Box::new(SeededEntropy::new(1))).unwrap();
    let base = format!("{}/api/v1/useBox", dep.base_url());
    let (ak, bk) = (&dep.alice_key, &dep.bob_key);
    let cases: Vec<(String, u16, u64)> = vec![
        (format!("boxID=1&transactionID=t1&x=0&apiKey={ak}"), 200, 0),
        (format!("boxID=1&transactionID=t1&x=0&apiKey={ak}"), 200, 0),
        (format!("boxID=1&transactionID=t1&x=1&apiKey={ak}"), 409, 4),
        ("boxID=1&transactionID=t1&x=0&apiKey=bogus".to_string(), 401, 1),
        ("boxID=1&transactionID=t1&x=0".to_string(), 401, 1),
        (format!("boxID=9&transactionID=t1&x=0&apiKey={ak}"), 404, 2),
        (format!("boxID=one&transactionID=t1&x=0&apiKey={ak}"), 400, 3),
        (format!("boxID=1&transactionID=t1&x=2&apiKey={ak}"), 400, 3),
        (format!("boxID=1&transactionID=t1&x=-1&apiKey={ak}"), 400, 3),
        (format!("boxID=1&transactionID=t1&apiKey={ak}"), 400, 3),
        (format!("boxID=1&transactionID=t1&x=0&y=0&apiKey={ak}"), 400, 3),
        (format!("boxID=1&transactionID=t1&x=0&x=1&apiKey={ak}"), 400, 3),
        (format!("boxID=1&x=0&apiKey={ak}"), 400, 3),
        (format!("boxID=1&transactionID=t1&y=0&apiKey={ak}"), 403, 5),
        (format!("boxID=1&transactionID=t1&x=0&apiKey={bk}"), 403, 5),
        (format!("boxID=1&transactionID=t1&y=0&apiKey={bk}"), 200, 0),
    ];
    for (query, http, status) in cases {
        let (code, body) = get(&format!("{base}?{query}"));
        assert_eq!(
            (code, body["status"].as_u64().unwrap()),
            (http, status),
            "{query}: {body}"
        );
        if status != 0 {
            assert!(body["error"].is_string(), "{body}");
            assert!(!body.to_string().contains("\"a\"") && !body.to_string().contains("\"b\""));
        }
    }
}

#[test]
fn reveal_and_scoreboard() {
    let dep = LocalDeployment::start(&behavior::pr_box(), Box::new(SeededEntropy::new(9))).unwrap();
    let alice = dep.http_client(Side::Alice).unwrap();
    let bob = dep.http_client(Side::Bob).unwrap();

    let mut rng = player_rng(Some(4));
    let mut ids = TransactionIdScheme::new("ui-", 1);
    let plan = plan_transactions(
        behavior::pr_box().alphabets(),
        20,
        FirstMover::Random,
        &mut rng,
        &mut ids,
    );
    for t in &plan {
        alice.use_box(&t.transaction_id, t.x).unwrap();
        bob.use_box(&t.transaction_id, t.y).unwrap();
        let half = alice.reveal(&t.transaction_id).unwrap();
        assert!(!half.complete && half.round.is_none());
        // A repeated press changes nothing.
        assert!(!alice.reveal(&t.transaction_id).unwrap().complete);
        let full = bob.reveal(&t.transaction_id).unwrap();
        assert!(full.complete);
        assert_eq!(full.round.unwrap().payoff, 1);
    }
    // An unrevealed transaction is left out.
    alice.use_box("hidden", 0).unwrap();
    bob.use_box("hidden", 0).unwrap();

    let board = alice.scoreboard().unwrap();
    assert_eq!(board.rounds.len(), 20);
    assert_eq!(board.scoreboard.rounds, 20);
    assert_eq!(board.scoreboard.mean_payoff, Some(1.0));
    assert_eq!(board.scoreboard.classical_bound, 0.5);
    assert_eq!(dep.engine.store().list_transactions(dep.box_id).unwrap().len(), 21);

    let raw = reqwest::blocking::get(format!(
        "{}/api/v1/game/scoreboard?boxID={}&apiKey={}",
        dep.base_url(),
        dep.box_id,
        dep.bob_key
    ))
    .unwrap()
    .json::<Value>()
    .unwrap();
    assert_eq!(raw["scoreboard"]["meanPayoff"], 1.0);
    assert_eq!(raw["scoreboard"]["classicalBound"], 0.5);
    assert!(raw["rounds"][0]["transactionID"].is_string());
}

#[test]
fn serves_static_ui() {
    let f = fixture();
    let resp = reqwest::blocking::get(format!("{}/ui/index.html", f.server.base_url())).unwrap();
    assert_eq!(resp.status().as_u16(), 200);
    assert!(resp.text().unwrap().contains("<title>boxes</title>"));
    let missing = reqwest::blocking::get(format!("{}/ui/nope.js", f.server.base_url())).unwrap();
    assert_eq!(missing.status().as_u16(), 404);
}

#[test]
fn interface_is_no_signaling_over_http() {
    let dep = LocalDeployment::start(&behavior::pr_box(), Box::new(SeededEntropy::new(21))).unwrap();
    let mut rng = player_rng(Some(21));
    let mut ids = TransactionIdScheme::new("ns-", 1);
    let plan = plan_transactions(
        behavior::pr_box().alphabets(),
        4000,
        FirstMover::Random,
        &mut rng,
        &mut ids,
    );
    let samples = run_plan(&plan, 4, || {
        Ok((dep.http_client(Side::Alice)?, dep.http_client(Side::Bob)?))
    })
    .unwrap();
    for d in stratified_no_signaling(behavior::pr_box().alphabets(), &samples) {
        assert!(d.max_tv <= 0.08, "{d:?}");
    }
}

#[test]
fn sequential_campaign_with_shared_seed_is_faithful() {
    // One worker keeps the server's draws in lockstep with the players';
    // equal seeds on both ends must still give independent streams.
    let pr = behavior::pr_box();
    let dep = LocalDeployment::start(&pr, Box::new(SeededEntropy::new(16))).unwrap();
    let mut rng = player_rng(Some(16));
    let plan = plan_transactions(pr.alphabets(), 3000, FirstMover::Random, &mut rng, &mut TransactionIdScheme::new("seq-", 1));
    let samples = run_plan(&plan, 1, || Ok((dep.http_client(Side::Alice)?, dep.http_client(Side::Bob)?))).unwrap();
    let report = nlbox::game::VerifyReport::new(&pr, &samples, 0.1, 0.1);
    assert!(report.passes(), "fidelity {} strata {}", report.max_tv(), report.max_strata_tv());
}
