//! CHSH game campaigns, scoring and empirical verification.
//!
//! Inputs are drawn by the players' own seeded generator; outputs come from a
//! pair of [`BoxBackend`]s (HTTP or in-process) or, for the classical
//! strategy, the fixed answer `a = b = 0`.

use chrono::Utc;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::behavior::{chsh_payoff, Alphabets, Behavior, Side};
use crate::client::{BoxBackend, ClientError, HttpBoxClient};
use crate::sampling::{FirstMover, TransactionSample};
use crate::stats::{stratified_no_signaling, EmpiricalBehavior, StratifiedDeviation};
use crate::wire::UseBoxReply;

/// Normal quantile for a two-sided 99% interval.
pub const Z_99: f64 = 2.576;
/// Best average payoff reachable without boxes.
pub const CLASSICAL_BOUND: f64 = 0.5;
pub const DEFAULT_FIDELITY_TOL: f64 = 0.03;
pub const DEFAULT_STRATA_TOL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Both players always answer 0.
    Classical,
    /// Both players feed their inputs to their box.
    Boxed,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Classical => "classical",
            Strategy::Boxed => "boxed",
        })
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "classical" => Ok(Strategy::Classical),
            "boxed" => Ok(Strategy::Boxed),
            other => Err(format!("unknown strategy `{other}` (expected boxed or classical)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Round {
    #[serde(rename = "transactionID")]
    pub transaction_id: String,
    pub x: usize,
    pub y: usize,
    pub a: usize,
    pub b: usize,
    pub payoff: i8,
}

impl Round {
    pub fn new(transaction_id: impl Into<String>, x: usize, y: usize, a: usize, b: usize) -> Self {
        Round {
            transaction_id: transaction_id.into(),
            x,
            y,
            a,
            b,
            payoff: chsh_payoff(x, y, a, b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameRecord {
    pub behavior_name: String,
    pub strategy: Strategy,
    pub rounds: Vec<Round>,
}

/// Aggregate numbers for a list of rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PayoffSummary {
    pub rounds: usize,
    pub wins: usize,
    pub losses: usize,
    pub mean_payoff: f64,
    /// Half-width of the normal-approximation 99% interval on the mean.
    pub ci99_half_width: f64,
}

impl PayoffSummary {
    pub fn of(rounds: &[Round]) -> Self {
        let n = rounds.len();
        let wins = rounds.iter().filter(|r| r.payoff > 0).count();
        let losses = n - wins;
        if n == 0 {
            return PayoffSummary {
                rounds: 0,
                wins: 0,
                losses: 0,
                mean_payoff: 0.0,
                ci99_half_width: 0.0,
            };
        }
        let mean = (wins as f64 - losses as f64) / n as f64;
        let half = if n > 1 {
            // payoffs are +-1, so the sample variance has a closed form
            let var = (1.0 - mean * mean) * n as f64 / (n - 1) as f64;
            Z_99 * (var.max(0.0) / n as f64).sqrt()
        } else {
            0.0
        };
        PayoffSummary {
            rounds: n,
            wins,
            losses,
            mean_payoff: mean,
            ci99_half_width: half,
        }
    }

    pub fn win_rate(&self) -> f64 {
        if self.rounds == 0 {
            0.0
        } else {
            self.wins as f64 / self.rounds as f64
        }
    }
}

impl GameRecord {
    pub fn summary(&self) -> PayoffSummary {
        PayoffSummary::of(&self.rounds)
    }
}

/// Transaction ids `{prefix}{counter}` with the counter zero-padded to three
/// digits, e.g. `20211106001`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransactionIdScheme {
    prefix: String,
    next: u64,
}

impl TransactionIdScheme {
    pub fn new(prefix: impl Into<String>, first: u64) -> Self {
        TransactionIdScheme {
            prefix: prefix.into(),
            next: first,
        }
    }

    /// Today's UTC date as prefix, counting from 1.
    pub fn today() -> Self {
        Self::new(Utc::now().format("%Y%m%d").to_string(), 1)
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn peek(&self) -> String {
        format!("{}{:03}", self.prefix, self.next)
    }
}

impl Iterator for TransactionIdScheme {
    type Item = String;

    fn next(&mut self) -> Option<String> {
        let id = self.peek();
        self.next += 1;
        Some(id)
    }
}

/// ChaCha stream used for player inputs. Seeded server entropy uses the
/// default stream 0, so the same seed on both ends gives unrelated draws.
const PLAYER_STREAM: u64 = 0x706c_6179;

/// The players' input generator: seeded for reproducible campaigns,
/// otherwise seeded from the operating system.
pub fn player_rng(seed: Option<u64>) -> ChaCha20Rng {
    match seed {
        Some(s) => {
            let mut rng = ChaCha20Rng::seed_from_u64(s);
            rng.set_stream(PLAYER_STREAM);
            rng
        }
        None => ChaCha20Rng::from_os_rng(),
    }
}

/// Plays `n` rounds where both players answer 0 whatever their input.
pub fn play_classical(n: usize, rng: &mut impl Rng, ids: &mut TransactionIdScheme) -> GameRecord {
    let rounds = (0..n)
        .map(|_| {
            let (x, y) = (rng.random_range(0..2), rng.random_range(0..2));
            Round::new(ids.next().expect("scheme is infinite"), x, y, 0, 0)
        })
        .collect();
    GameRecord {
        behavior_name: "classical".into(),
        strategy: Strategy::Classical,
        rounds,
    }
}

/// Plays `n` rounds through a pair of boxes. Each round uses a fresh
/// transaction id and a random first mover.
pub fn play_boxed(
    alice: &dyn BoxBackend,
    bob: &dyn BoxBackend,
    behavior_name: &str,
    n: usize,
    rng: &mut impl Rng,
    ids: &mut TransactionIdScheme,
) -> Result<GameRecord, ClientError> {
    check_sides(alice, bob)?;
    let mut rounds = Vec::with_capacity(n);
    for _ in 0..n {
        let (x, y) = (rng.random_range(0..2), rng.random_range(0..2));
        let first = if rng.random_bool(0.5) { Side::Alice } else { Side::Bob };
        let k = ids.next().expect("scheme is infinite");
        let (a, b) = run_transaction(alice, bob, &k, x, y, first)?;
        rounds.push(Round::new(k, x, y, a, b));
    }
    Ok(GameRecord {
        behavior_name: behavior_name.to_owned(),
        strategy: Strategy::Boxed,
        rounds,
    })
}

fn check_sides(alice: &dyn BoxBackend, bob: &dyn BoxBackend) -> Result<(), ClientError> {
    if alice.side() != Side::Alice || bob.side() != Side::Bob {
        return Err(ClientError::Protocol(
            "backends must be an Alice client and a Bob client".into(),
        ));
    }
    Ok(())
}

fn run_transaction(
    alice: &dyn BoxBackend,
    bob: &dyn BoxBackend,
    k: &str,
    x: usize,
    y: usize,
    first: Side,
) -> Result<(usize, usize), ClientError> {
    Ok(match first {
        Side::Alice => {
            let a = alice.use_box(k, x)?;
            (a, bob.use_box(k, y)?)
        }
        Side::Bob => {
            let b = bob.use_box(k, y)?;
            (alice.use_box(k, x)?, b)
        }
    })
}

/// Average payoff of every deterministic strategy pair `(a(x), b(y))` on
/// binary inputs, exactly, as `([a(0), a(1)], [b(0), b(1)], mean)`.
pub fn deterministic_strategy_payoffs() -> Vec<([usize; 2], [usize; 2], f64)> {
    let mut out = Vec::with_capacity(16);
    for fa in 0..4usize {
        for fb in 0..4usize {
            let fa = [fa & 1, fa >> 1];
            let fb = [fb & 1, fb >> 1];
            let mut total = 0i32;
            for (x, &a) in fa.iter().enumerate() {
                for (y, &b) in fb.iter().enumerate() {
                    total += i32::from(chsh_payoff(x, y, a, b));
                }
            }
            out.push((fa, fb, f64::from(total) / 4.0));
        }
    }
    out
}

/// Best average payoff over all deterministic strategies.
pub fn classical_optimum() -> f64 {
    deterministic_strategy_payoffs()
        .into_iter()
        .map(|(_, _, p)| p)
        .fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InputPairScore {
    pub x: usize,
    pub y: usize,
    pub rounds: usize,
    pub mean_payoff: Option<f64>,
}

/// Running score over revealed rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Scoreboard {
    pub rounds: usize,
    /// `None` for an empty session.
    pub mean_payoff: Option<f64>,
    pub win_rate: Option<f64>,
    pub by_input: Vec<InputPairScore>,
    pub classical_bound: f64,
}

impl Scoreboard {
    pub fn from_rounds(rounds: &[Round]) -> Self {
        let s = PayoffSummary::of(rounds);
        let mut by_input = Vec::with_capacity(4);
        for x in 0..2 {
            for y in 0..2 {
                let cell: Vec<Round> = rounds.iter().filter(|r| r.x == x && r.y == y).cloned().collect();
                let cs = PayoffSummary::of(&cell);
                by_input.push(InputPairScore {
                    x,
                    y,
                    rounds: cs.rounds,
                    mean_payoff: (cs.rounds > 0).then_some(cs.mean_payoff),
                });
            }
        }
        Scoreboard {
            rounds: s.rounds,
            mean_payoff: (s.rounds > 0).then_some(s.mean_payoff),
            win_rate: (s.rounds > 0).then(|| s.win_rate()),
            by_input,
            classical_bound: CLASSICAL_BOUND,
        }
    }
}

/// One transaction to run during a verification campaign.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedTransaction {
    pub transaction_id: String,
    pub x: usize,
    pub y: usize,
    pub first: Side,
}

/// Draws inputs and first movers for `n` transactions up front, so a
/// campaign is reproducible regardless of how it is executed.
pub fn plan_transactions(
    alphabets: Alphabets,
    n: usize,
    order: FirstMover,
    rng: &mut impl Rng,
    ids: &mut TransactionIdScheme,
) -> Vec<PlannedTransaction> {
    (0..n)
        .map(|_| {
            let x = rng.random_range(0..alphabets.x_size);
            let y = rng.random_range(0..alphabets.y_size);
            let first = match order {
                FirstMover::AlwaysAlice => Side::Alice,
                FirstMover::AlwaysBob => Side::Bob,
                FirstMover::Random if rng.random_bool(0.5) => Side::Alice,
                FirstMover::Random => Side::Bob,
            };
            PlannedTransaction {
                transaction_id: ids.next().expect("scheme is infinite"),
                x,
                y,
                first,
            }
        })
        .collect()
}

/// Runs planned transactions on `jobs` threads, each with its own pair of
/// backends from `connect`. Results come back in plan order.
pub fn run_plan<A, B, F>(
    plan: &[PlannedTransaction],
    jobs: usize,
    connect: F,
) -> Result<Vec<TransactionSample>, ClientError>
where
    A: BoxBackend,
    B: BoxBackend,
    F: Fn() -> Result<(A, B), ClientError> + Sync,
{
    let jobs = jobs.clamp(1, plan.len().max(1));
    let chunk = plan.len().div_ceil(jobs).max(1);
    let results: Vec<Result<Vec<TransactionSample>, ClientError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = plan
            .chunks(chunk)
            .map(|part| {
                let connect = &connect;
                scope.spawn(move || {
                    let (alice, bob) = connect()?;
                    check_sides(&alice, &bob)?;
                    part.iter()
                        .map(|t| {
                            let (a, b) = run_transaction(&alice, &bob, &t.transaction_id, t.x, t.y, t.first)?;
                            Ok(TransactionSample {
                                x: t.x,
                                y: t.y,
                                a,
                                b,
                                first: t.first,
                            })
                        })
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(ClientError::Protocol("worker thread panicked".into())))
            })
            .collect()
    });
    let mut out = Vec::with_capacity(plan.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairFidelity {
    pub x: usize,
    pub y: usize,
    pub samples: u64,
    pub tv: f64,
}

/// Empirical behavior against theory plus the stratified no-signaling test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub behavior_name: String,
    pub transactions: usize,
    pub fidelity: Vec<PairFidelity>,
    pub strata: Vec<StratifiedDeviation>,
    pub fidelity_tol: f64,
    pub strata_tol: f64,
}

impl VerifyReport {
    pub fn new(behavior: &Behavior, samples: &[TransactionSample], fidelity_tol: f64, strata_tol: f64) -> Self {
        let al = behavior.alphabets();
        let emp = EmpiricalBehavior::from_samples(al, samples);
        let fidelity = emp
            .tv_against(behavior)
            .into_iter()
            .map(|((x, y), tv)| PairFidelity {
                x,
                y,
                samples: emp.total(x, y),
                tv,
            })
            .collect();
        VerifyReport {
            behavior_name: behavior.name().to_owned(),
            transactions: samples.len(),
            fidelity,
            strata: stratified_no_signaling(al, samples),
            fidelity_tol,
            strata_tol,
        }
    }

    pub fn max_tv(&self) -> f64 {
        self.fidelity.iter().map(|f| f.tv).fold(0.0, f64::max)
    }

    pub fn max_strata_tv(&self) -> f64 {
        self.strata.iter().map(|s| s.max_tv).fold(0.0, f64::max)
    }

    pub fn fidelity_ok(&self) -> bool {
        self.max_tv() <= self.fidelity_tol
    }

    pub fn strata_ok(&self) -> bool {
        self.max_strata_tv() <= self.strata_tol
    }

    pub fn passes(&self) -> bool {
        self.fidelity_ok() && self.strata_ok()
    }
}

/// One call of the four-step demonstration session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoStep {
    pub side: Side,
    pub transaction_id: String,
    pub input: usize,
    /// Request path and query with the API key replaced by `$ALICE_KEY` or `$BOB_KEY`.
    pub request: String,
    /// Raw reply body.
    pub reply: String,
    pub output: usize,
}

/// The demonstration sequence: Alice `x=0` then Bob `y=0` on one
/// transaction, Bob `y=1` then Alice `x=1` on the next.
pub fn demo_session(
    alice: &HttpBoxClient,
    bob: &HttpBoxClient,
    ids: &mut TransactionIdScheme,
) -> Result<Vec<DemoStep>, ClientError> {
    check_sides(alice, bob)?;
    let k1 = ids.next().expect("scheme is infinite");
    let k2 = ids.next().expect("scheme is infinite");
    let calls = [
        (alice, k1.as_str(), 0),
        (bob, k1.as_str(), 0),
        (bob, k2.as_str(), 1),
        (alice, k2.as_str(), 1),
    ];
    let mut steps = Vec::with_capacity(4);
    for (client, k, input) in calls {
        let side = client.side();
        let reply = client.use_box_raw(k, input)?;
        let output = match UseBoxReply::parse(&reply).map_err(ClientError::Protocol)? {
            UseBoxReply::Output { output, .. } => output,
            UseBoxReply::Error(e) => return Err(ClientError::from_status(e.status, e.error)),
        };
        let placeholder = match side {
            Side::Alice => "$ALICE_KEY",
            Side::Bob => "$BOB_KEY",
        };
        let request = client.use_box_path(k, input);
        let request = match request.rfind("apiKey=") {
            Some(i) => format!("{}apiKey={placeholder}", &request[..i]),
            None => request,
        };
        steps.push(DemoStep {
            side,
            transaction_id: k.to_owned(),
            input,
            request,
            reply,
            output,
        });
    }
    Ok(steps)
}

/// PR-box expectations for [`demo_session`]: equal outputs on the first
/// transaction (`x = y = 0`), different outputs on the second (`x = y = 1`).
pub fn check_demo_correlations(steps: &[DemoStep]) -> Result<(), String> {
    let [a1, b1, b2, a2] = steps else {
        return Err(format!("expected 4 steps, got {}", steps.len()));
    };
    if a1.output != b1.output {
        return Err(format!(
            "transaction {}: x=y=0 gave a={} b={}, expected equal outputs",
            a1.transaction_id, a1.output, b1.output
        ));
    }
    if a2.output == b2.output {
        return Err(format!(
            "transaction {}: x=y=1 gave a=b={}, expected different outputs",
            a2.transaction_id, a2.output
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn id_scheme_pads_to_three_digits() {
        let mut ids = TransactionIdScheme::new("20211106", 1);
        assert_eq!(ids.next().unwrap(), "20211106001");
        assert_eq!(ids.next().unwrap(), "20211106002");
        let mut ids = TransactionIdScheme::new("d", 999);
        assert_eq!(ids.next().unwrap(), "d999");
        assert_eq!(ids.next().unwrap(), "d1000");
        assert_eq!(TransactionIdScheme::today().prefix().len(), 8);
    }

    #[test]
    fn classical_optimum_is_one_half() {
        let all = deterministic_strategy_payoffs();
        assert_eq!(all.len(), 16);
        assert_eq!(classical_optimum(), 0.5);
        // always answering 0 is one of the optimal strategies
        assert!(all
            .iter()
            .any(|(fa, fb, p)| *fa == [0, 0] && *fb == [0, 0] && *p == 0.5));
    }

    #[test]
    fn scoreboard_of_empty_and_mixed_sessions() {
        let empty = Scoreboard::from_rounds(&[]);
        assert_eq!(empty.rounds, 0);
        assert_eq!(empty.mean_payoff, None);
        assert_eq!(empty.classical_bound, 0.5);

        let rounds = vec![
            Round::new("1", 0, 0, 1, 1),
            Round::new("2", 1, 1, 1, 0),
            Round::new("3", 1, 1, 0, 0),
        ];
        let s = Scoreboard::from_rounds(&rounds);
        assert_eq!(s.mean_payoff, Some((2.0 - 1.0) / 3.0));
        assert_eq!(s.win_rate, Some(2.0 / 3.0));
        let cell = s.by_input.iter().find(|c| c.x == 1 && c.y == 1).unwrap();
        assert_eq!((cell.rounds, cell.mean_payoff), (2, Some(0.0)));
        assert_eq!(
            s.by_input.iter().find(|c| c.x == 0 && c.y == 1).unwrap().mean_payoff,
            None
        );
    }

    #[test]
    fn player_inputs_do_not_replay_seeded_entropy() {
        use crate::entropy::{EntropySource, SeededEntropy};
        let mut players = player_rng(Some(16));
        let mut server = SeededEntropy::new(16);
        let p: Vec<u64> = (0..8).map(|_| players.random()).collect();
        let s: Vec<u64> = (0..8).map(|_| (server.next_uniform() * 2f64.powi(53)) as u64).collect();
        assert!(p.iter().all(|v| !s.contains(&(v >> 11))));
    }

    #[test]
    fn classical_play_wins_three_quarters() {
        let mut rng = player_rng(Some(3));
        let rec = play_classical(20_000, &mut rng, &mut TransactionIdScheme::new("t", 1));
        let s = rec.summary();
        assert!((s.mean_payoff - 0.5).abs() < 0.03, "{s:?}");
        assert!(rec.rounds.iter().all(|r| r.a == 0 && r.b == 0));
        assert!(rec.rounds.iter().all(|r| (r.payoff == -1) == (r.x == 1 && r.y == 1)));
    }

    proptest! {
        #[test]
        fn summary_mean_is_wins_minus_losses(p in proptest::collection::vec(any::<bool>(), 0..200)) {
            let rounds: Vec<Round> = p.iter().map(|&w| Round::new("k", 0, 0, 0, usize::from(!w))).collect();
            let s = PayoffSummary::of(&rounds);
            prop_assert_eq!(s.wins + s.losses, rounds.len());
            if !rounds.is_empty() {
                let expect = (s.wins as f64 - s.losses as f64) / rounds.len() as f64;
                prop_assert!((s.mean_payoff - expect).abs() < 1e-12);
                prop_assert!((-1.0..=1.0).contains(&s.mean_payoff));
                prop_assert!(s.ci99_half_width >= 0.0);
            }
        }
    }
}
