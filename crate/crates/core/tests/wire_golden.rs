use nlbox::behavior::{self, Side};
use nlbox::entropy::SeededEntropy;
use nlbox::game::{check_demo_correlations, demo_session, TransactionIdScheme};
use nlbox::service::LocalDeployment;
use nlbox::wire;

const REPLIES: &str = include_str!("golden/demo_replies.txt");
const REQUESTS: &str = include_str!("golden/demo_requests.txt");

#[test]
fn seeded_demo_session_matches_golden_bytes() {
    let dep = LocalDeployment::start(&behavior::pr_box(), Box::new(SeededEntropy::new(1))).unwrap();
    assert_eq!(dep.box_id, 1);
    let alice = dep.http_client(Side::Alice).unwrap();
    let bob = dep.http_client(Side::Bob).unwrap();
    let steps = demo_session(&alice, &bob, &mut TransactionIdScheme::new("20211106", 1)).unwrap();

    let replies: Vec<&str> = steps.iter().map(|s| s.reply.as_str()).collect();
    assert_eq!(replies, REPLIES.lines().collect::<Vec<_>>());
    let requests: Vec<&str> = steps.iter().map(|s| s.request.as_str()).collect();
    assert_eq!(requests, REQUESTS.lines().collect::<Vec<_>>());
    check_demo_correlations(&steps).unwrap();
}

#[test]
fn replaying_the_session_returns_the_same_bytes() {
    let dep = LocalDeployment::start(&behavior::pr_box(), Box::new(SeededEntropy::new(1))).unwrap();
    let alice = dep.http_client(Side::Alice).unwrap();
    let bob = dep.http_client(Side::Bob).unwrap();
    let first = demo_session(&alice, &bob, &mut TransactionIdScheme::new("20211106", 1)).unwrap();
    let again = demo_session(&alice, &bob, &mut TransactionIdScheme::new("20211106", 1)).unwrap();
    assert_eq!(
        first.iter().map(|s| &s.reply).collect::<Vec<_>>(),
        again.iter().map(|s| &s.reply).collect::<Vec<_>>()
    );
}

#[test]
fn other_seeds_keep_the_correlations() {
    for seed in 2..12 {
        let dep = LocalDeployment::start(&behavior::pr_box(), Box::new(SeededEntropy::new(seed))).unwrap();
        let alice = dep.http_client(Side::Alice).unwrap();
        let bob = dep.http_client(Side::Bob).unwrap();
        let steps = demo_session(&alice, &bob, &mut TransactionIdScheme::new("20211106", 1)).unwrap();
        check_demo_correlations(&steps).unwrap();
        for s in &steps {
            let field = if s.side == Side::Alice { 'a' } else { 'b' };
            assert_eq!(
                s.reply,
                format!("{{\"{field}\":{},\"boxID\":1,\"status\":0}}", s.output)
            );
        }
    }
}

#[test]
fn error_bodies_have_fixed_shape() {
    assert_eq!(wire::use_box_ok(Side::Alice, 1, 1), r#"{"a":1,"boxID":1,"status":0}"#);
    let dep = LocalDeployment::start(&behavior::pr_box(), Box::new(SeededEntropy::new(1))).unwrap();
    let url = format!(
        "{}/api/v1/useBox?boxID=1&transactionID=t&x=0&apiKey=nope",
        dep.base_url()
    );
    let resp = reqwest::blocking::get(url).unwrap();
    assert_eq!(resp.status().as_u16(), 401);
    let body: serde_json::Value = resp.json().unwrap();
    assert_eq!(body["status"], 1);
    assert_eq!(body["boxID"], 1);
    assert!(body["error"].is_string());
    assert!(body.get("a").is_none());
}
