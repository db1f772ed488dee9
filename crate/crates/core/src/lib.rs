//! Trusted-server simulation of bipartite no-signaling boxes.
//!
//! A box is described by a conditional distribution `P(a,b|x,y)`
//! ([`behavior::Behavior`]). The server pairs a behavior with two users and
//! answers each party's uses of a transaction so that the joint outputs follow
//! the behavior while neither party can signal through the box: the first use
//! samples the local marginal and the second samples the conditional given the
//! stored first half ([`sampling`]).

pub mod behavior;
pub mod client;
pub mod entropy;
pub mod game;
pub mod locality;
pub mod lp;
pub mod sampling;
pub mod service;
pub mod stats;
pub mod store;
pub mod wire;

pub use behavior::{Alphabets, Behavior, BehaviorError, Distribution, NoSignalingReport, Side};
pub use client::{BoxBackend, ClientError, HttpBoxClient, LocalBoxClient};
pub use entropy::{EntropySource, SeededEntropy, SystemEntropy};
pub use locality::{is_local, LocalityCertificate};
pub use sampling::{use_box, Engine, EngineError, UseOutcome};
pub use store::{BoxId, BoxInstance, Store, StoreConfig, StoreError, TransactionId, UserId};
