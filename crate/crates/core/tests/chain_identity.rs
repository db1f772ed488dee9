use nlbox::behavior::{self, Alphabets, Behavior, Side, EPS_DEN};
use proptest::prelude::*;

fn builtins() -> Vec<Behavior> {
    let mut out = vec![behavior::pr_box(), behavior::tsirelson_box(), behavior::uniform_box()];
    for v in [0.0, 0.25, 0.5, 0.75, 1.0] {
        out.push(behavior::isotropic_box(v).unwrap());
    }
    for code in 0..16usize {
        let fa = [code & 1, (code >> 1) & 1];
        let fb = [(code >> 2) & 1, (code >> 3) & 1];
        out.push(behavior::local_deterministic(2, 2, &fa, &fb).unwrap());
    }
    out.push(behavior::local_deterministic(3, 2, &[2, 0, 1], &[1, 1]).unwrap());
    out
}

/// Checks `P(a,b|x,y) = P(first output) * P(second output | first)` in the
/// given order for every cell.
fn check_order(p: &Behavior, first: Side) {
    let al = p.alphabets();
    for (x, y, a, b) in al.cells() {
        let (fi, fo, si, so) = match first {
            Side::Alice => (x, a, y, b),
            Side::Bob => (y, b, x, a),
        };
        let m = p.marginal(first, fi).unwrap().probs()[fo];
        let want = p.prob(x, y, a, b);
        let got = if m <= EPS_DEN {
            0.0
        } else {
            m * p.conditional(first, fi, fo, si).unwrap().probs()[so]
        };
        assert!(
            (got - want).abs() <= 1e-9,
            "{} {:?}-first cell ({x},{y},{a},{b}): {got} vs {want}",
            p.name(),
            first
        );
    }
}

#[test]
fn builtins_factor_in_both_orders() {
    for p in builtins() {
        check_order(&p, Side::Alice);
        check_order(&p, Side::Bob);
    }
}

#[test]
fn zero_probability_condition_is_rejected() {
    let d = behavior::local_deterministic(2, 2, &[0, 0], &[1, 1]).unwrap();
    assert!(d.conditional(Side::Alice, 0, 1, 0).is_err());
}

proptest! {
    #[test]
    fn isotropic_family_factors(v in 0.0f64..=1.0) {
        let p = behavior::isotropic_box(v).unwrap();
        check_order(&p, Side::Alice);
        check_order(&p, Side::Bob);
    }

    #[test]
    fn product_boxes_factor(pa in prop::collection::vec(0.01f64..1.0, 3), pb in prop::collection::vec(0.01f64..1.0, 2)) {
        let (sa, sb): (f64, f64) = (pa.iter().sum(), pb.iter().sum());
        let al = Alphabets::new(2, 2, 3, 2).unwrap();
        let p = Behavior::from_fn("product", al, |_, _, a, b| pa[a] / sa * pb[b] / sb).unwrap();
        check_order(&p, Side::Alice);
        check_order(&p, Side::Bob);
    }
}
