//! Two-phase transaction sampling.
//!
//! The first party to use transaction `k` gets an output drawn from its local
//! marginal; the second party's output is drawn from the conditional given the
//! first party's stored input and output. Both draws happen inside the
//! per-transaction lock, and the second reply is only computed after the
//! first party's row is committed.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behavior::{Behavior, BehaviorError, Side};
use crate::entropy::EntropySource;
use crate::stats::EmpiricalBehavior;
use crate::store::{BoxId, BoxInstance, LockedTransaction, Store, StoreConfig, StoreError, TransactionId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("{side} already used this transaction with input {stored}, not {presented}")]
    InputMismatchReplay {
        side: Side,
        stored: usize,
        presented: usize,
    },
    #[error("transaction was concurrently recorded with a different input for {side}")]
    TransactionSideConflict { side: Side },
    #[error(transparent)]
    Behavior(#[from] BehaviorError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UseOutcome {
    pub output: usize,
    /// This call opened the transaction.
    pub first_use: bool,
    /// This call returned an output stored by an earlier identical call.
    pub replayed: bool,
}

/// Uses one side of transaction `k` on `instance`.
///
/// Replays a stored output when the same side repeats the same input, and
/// refuses a different input for an already used side.
pub fn use_box(
    store: &Store,
    instance: &BoxInstance,
    behavior: &Behavior,
    k: &TransactionId,
    side: Side,
    input: usize,
    entropy: &Mutex<dyn EntropySource>,
) -> Result<UseOutcome, EngineError> {
    if !behavior.is_no_signaling() {
        let report = behavior.check_no_signaling(crate::behavior::EPS_NS);
        return Err(BehaviorError::SignalingBehavior {
            max_violation: report.max_violation,
        }
        .into());
    }
    behavior.alphabets().check_input(side, input)?;
    store.with_transaction_lock(instance.box_id, k, |tx| draw_locked(tx, behavior, side, input, entropy))
}

fn draw_locked(
    tx: &mut LockedTransaction,
    behavior: &Behavior,
    side: Side,
    input: usize,
    entropy: &Mutex<dyn EntropySource>,
) -> Result<UseOutcome, EngineError> {
    let row = tx.row();
    if let Some(mine) = row.and_then(|r| r.side(side)) {
        if mine.input != input {
            return Err(EngineError::InputMismatchReplay {
                side,
                stored: mine.input,
                presented: input,
            });
        }
        return Ok(UseOutcome {
            output: mine.output,
            first_use: row.and_then(|r| r.first_side) == Some(side),
            replayed: true,
        });
    }

    let other = row.and_then(|r| r.side(side.other()));
    let distribution = match other {
        None => behavior.marginal(side, input)?,
        Some(first) => behavior.conditional(side.other(), first.input, first.output, input)?,
    };
    let u = entropy.lock().unwrap_or_else(|e| e.into_inner()).next_uniform();
    let output = distribution.sample(u);

    tx.store_side_result(side, input, output).map_err(|e| match e {
        StoreError::SideConflict { side, .. } => EngineError::TransactionSideConflict { side },
        other => other.into(),
    })?;
    Ok(UseOutcome {
        output,
        first_use: other.is_none(),
        replayed: false,
    })
}

/// A store plus a shared entropy stream and a cache of box behaviors.
pub struct Engine {
    store: Arc<Store>,
    entropy: Mutex<Box<dyn EntropySource>>,
    behaviors: RwLock<HashMap<String, Arc<Behavior>>>,
}

impl Engine {
    pub fn new(store: Arc<Store>, entropy: Box<dyn EntropySource>) -> Self {
        Engine {
            store,
            entropy: Mutex::new(entropy),
            behaviors: RwLock::new(HashMap::new()),
        }
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn behavior(&self, name: &str) -> Result<Arc<Behavior>, StoreError> {
        if let Some(b) = self.behaviors.read().unwrap_or_else(|e| e.into_inner()).get(name) {
            return Ok(b.clone());
        }
        let b = Arc::new(self.store.get_behavior(name)?);
        self.behaviors
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(name.to_owned(), b.clone());
        Ok(b)
    }

    pub fn use_box(
        &self,
        box_id: BoxId,
        k: &TransactionId,
        side: Side,
        input: usize,
    ) -> Result<UseOutcome, EngineError> {
        let instance = self.store.get_box(box_id)?;
        self.use_instance(&instance, k, side, input)
    }

    pub fn use_instance(
        &self,
        instance: &BoxInstance,
        k: &TransactionId,
        side: Side,
        input: usize,
    ) -> Result<UseOutcome, EngineError> {
        let behavior = self.behavior(&instance.behavior_name)?;
        let entropy: &Mutex<dyn EntropySource> = &self.entropy;
        use_box(&self.store, instance, &behavior, k, side, input, entropy)
    }
}

/// Who moves first in each simulated transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FirstMover {
    Random,
    AlwaysAlice,
    AlwaysBob,
}

/// One completed transaction of a simulation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransactionSample {
    pub x: usize,
    pub y: usize,
    pub a: usize,
    pub b: usize,
    pub first: Side,
}

/// Runs `n` complete transactions on a private in-memory box with inputs
/// drawn uniformly from `entropy`.
pub fn simulate_transactions(
    behavior: &Behavior,
    n: usize,
    order: FirstMover,
    entropy: Box<dyn EntropySource>,
) -> Result<Vec<TransactionSample>, EngineError> {
    let store = Arc::new(Store::open_in_memory(StoreConfig::default())?);
    let alice = store.create_user("alice")?.user.user_id;
    let bob = store.create_user("bob")?.user.user_id;
    let instance = store.create_box_instance(behavior, alice, bob)?;
    let engine = Engine::new(store, entropy);
    let al = behavior.alphabets();

    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let (x, y, first) = {
            let mut e = engine.entropy.lock().unwrap_or_else(|e| e.into_inner());
            let x = uniform_index(e.next_uniform(), al.x_size);
            let y = uniform_index(e.next_uniform(), al.y_size);
            let first = match order {
                FirstMover::AlwaysAlice => Side::Alice,
                FirstMover::AlwaysBob => Side::Bob,
                FirstMover::Random if e.next_uniform() < 0.5 => Side::Alice,
                FirstMover::Random => Side::Bob,
            };
            (x, y, first)
        };
        let k = TransactionId::new(format!("sim{i:08}"))?;
        let input = |side: Side| if side == Side::Alice { x } else { y };
        let o1 = engine.use_instance(&instance, &k, first, input(first))?.output;
        let o2 = engine
            .use_instance(&instance, &k, first.other(), input(first.other()))?
            .output;
        let (a, b) = if first == Side::Alice { (o1, o2) } else { (o2, o1) };
        samples.push(TransactionSample { x, y, a, b, first });
    }
    Ok(samples)
}

/// Empirical `P(a,b|x,y)` from `n` simulated transactions with uniformly
/// random inputs and first mover.
pub fn factorize_check(
    behavior: &Behavior,
    n: usize,
    entropy: Box<dyn EntropySource>,
) -> Result<EmpiricalBehavior, EngineError> {
    let samples = simulate_transactions(behavior, n.max(1), FirstMover::Random, entropy)?;
    Ok(EmpiricalBehavior::from_samples(behavior.alphabets(), &samples))
}

pub(crate) fn uniform_index(u: f64, size: usize) -> usize {
    ((u * size as f64) as usize).min(size - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior;
    use crate::entropy::{ScriptedEntropy, SeededEntropy};

    fn pr_setup(entropy: Vec<f64>) -> (Engine, BoxInstance) {
        let store = Arc::new(Store::open_in_memory(StoreConfig::default()).unwrap());
        let a = store.create_user("alice").unwrap().user.user_id;
        let b = store.create_user("bob").unwrap().user.user_id;
        let inst = store.create_box_instance(&behavior::pr_box(), a, b).unwrap();
        (Engine::new(store, Box::new(ScriptedEntropy::new(entropy))), inst)
    }

    fn k(s: &str) -> TransactionId {
        TransactionId::new(s).unwrap()
    }

    #[test]
    fn first_use_draws_from_marginal_by_inverse_cdf() {
        let (engine, inst) = pr_setup(vec![0.7]);
        let out = engine.use_instance(&inst, &k("t"), Side::Alice, 0).unwrap();
        assert_eq!(
            out,
            UseOutcome {
                output: 1,
                first_use: true,
                replayed: false
            }
        );
    }

    #[test]
    fn second_use_is_forced_by_pr_correlation() {
        let (engine, inst) = pr_setup(vec![0.7, 0.01]);
        assert_eq!(engine.use_instance(&inst, &k("t"), Side::Alice, 0).unwrap().output, 1);
        let bob = engine.use_instance(&inst, &k("t"), Side::Bob, 0).unwrap();
        assert_eq!(
            bob,
            UseOutcome {
                output: 1,
                first_use: false,
                replayed: false
            }
        );
        let row = engine.store().get_transaction(inst.box_id, &k("t")).unwrap().unwrap();
        assert!(row.is_complete());
    }

    #[test]
    fn repeats_replay_and_mismatches_fail() {
        let (engine, inst) = pr_setup(vec![0.7, 0.2, 0.9]);
        engine.use_instance(&inst, &k("t"), Side::Alice, 0).unwrap();
        let again = engine.use_instance(&inst, &k("t"), Side::Alice, 0).unwrap();
        assert_eq!(
            again,
            UseOutcome {
                output: 1,
                first_use: true,
                replayed: true
            }
        );
        let err = engine.use_instance(&inst, &k("t"), Side::Alice, 1).unwrap_err();
        assert_eq!(
            err,
            EngineError::InputMismatchReplay {
                side: Side::Alice,
                stored: 0,
                presented: 1
            }
        );
    }

    #[test]
    fn bob_first_then_alice_anticorrelates_on_both_ones() {
        let (engine, inst) = pr_setup(vec![0.6, 0.3]);
        let b = engine.use_instance(&inst, &k("t2"), Side::Bob, 1).unwrap();
        assert!(b.first_use);
        let a = engine.use_instance(&inst, &k("t2"), Side::Alice, 1).unwrap();
        assert_ne!(a.output, b.output);
    }

    #[test]
    fn bad_inputs_are_rejected_before_locking() {
        let (engine, inst) = pr_setup(vec![0.5]);
        assert!(matches!(
            engine.use_instance(&inst, &k("t"), Side::Bob, 2),
            Err(EngineError::Behavior(BehaviorError::InputOutOfRange { .. }))
        ));
        assert!(engine.store().get_transaction(inst.box_id, &k("t")).unwrap().is_none());
    }

    #[test]
    fn signaling_behaviors_are_refused() {
        let store = Store::open_in_memory(StoreConfig::default()).unwrap();
        let signaling = Behavior::from_fn("signal", behavior::Alphabets::BINARY, |_, y, a, b| {
            if a == y && b == 0 {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        let inst = BoxInstance {
            box_id: 1,
            behavior_name: "signal".into(),
            alice_user: 1,
            bob_user: 2,
        };
        let entropy: Mutex<ScriptedEntropy> = Mutex::new(ScriptedEntropy::new(vec![0.5]));
        let err = use_box(&store, &inst, &signaling, &k("t"), Side::Alice, 0, &entropy).unwrap_err();
        assert!(matches!(
            err,
            EngineError::Behavior(BehaviorError::SignalingBehavior { .. })
        ));
    }

    #[test]
    fn same_stream_same_outputs() {
        let run = || {
            simulate_transactions(
                &behavior::tsirelson_box(),
                200,
                FirstMover::Random,
                Box::new(SeededEntropy::new(3)),
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn deterministic_box_is_reproduced_exactly() {
        let det = behavior::local_deterministic(2, 2, &[1, 0], &[0, 1]).unwrap();
        let emp = factorize_check(&det, 100, Box::new(SeededEntropy::new(11))).unwrap();
        for x in 0..2 {
            for y in 0..2 {
                assert!(emp.total(x, y) > 0);
                assert_eq!(emp.distribution(x, y), det.joint(x, y).to_vec());
            }
        }
    }

    #[test]
    fn zero_denominator_is_unreachable_in_normal_operation() {
        // Every first output has positive marginal mass, so the conditional
        // never sees a zero denominator.
        for b in [
            behavior::pr_box(),
            behavior::tsirelson_box(),
            behavior::local_deterministic(2, 2, &[0, 1], &[1, 1]).unwrap(),
        ] {
            for order in [FirstMover::AlwaysAlice, FirstMover::AlwaysBob] {
                simulate_transactions(&b, 500, order, Box::new(SeededEntropy::new(5))).unwrap();
            }
        }
    }
}
