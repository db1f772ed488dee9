//! Durable store for users, box instances and transactions.
//!
//! Backed by an embedded SQLite database in a store directory
//! (`<dir>/nlbox.sqlite3`, schema version in `PRAGMA user_version`). The
//! directory is held with an exclusive advisory lock, so one process owns a
//! store at a time and the lock disappears with the process.
//!
//! Per-transaction mutual exclusion comes from [`Store::with_transaction_lock`]:
//! a keyed lock on `(box_id, transaction_id)` plus a buffered view of the row.
//! Writes made inside the critical section are committed in one SQLite
//! transaction when the section returns `Ok`; on error or panic nothing is
//! written.
//!
//! Schema (version 1):
//!
//! ```sql
//! users(user_id PK, api_key_sha256 UNIQUE NULL, display_name, created_at)
//! behaviors(name PK, document)
//! boxes(box_id PK, behavior_name -> behaviors, alice_user -> users, bob_user -> users, created_at)
//! transactions(box_id, transaction_id, alice_input, alice_output, bob_input, bob_output,
//!              first_side, alice_revealed, bob_revealed, created_at, completed_at,
//!              row_version, PK(box_id, transaction_id))
//! ```
//!
//! API keys are stored as SHA-256 digests; a revoked key has a NULL digest.

use std::collections::HashSet;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex, MutexGuard, RwLock};
use std::time::{Duration, Instant};

use chrono::{DateTime, SecondsFormat, Utc};
use rand::TryRngCore;
use rusqlite::{params, Connection, OptionalExtension};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::behavior::{Behavior, Side};

pub type UserId = i64;
pub type BoxId = i64;

pub const SCHEMA_VERSION: i64 = 1;
pub const DB_FILE: &str = "nlbox.sqlite3";
const LOCK_FILE: &str = "nlbox.lock";
pub const DEFAULT_LOCK_TIMEOUT: Duration = Duration::from_secs(5);
pub const MAX_TRANSACTION_ID_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StoreError {
    #[error("{0} not found")]
    NotFound(String),
    #[error("duplicate {0}")]
    DuplicateKey(String),
    #[error("invalid record: {0}")]
    Invalid(String),
    #[error("timed out after {waited:?} waiting for transaction {transaction_id} of box {box_id}")]
    LockTimeout {
        box_id: BoxId,
        transaction_id: String,
        waited: Duration,
    },
    #[error("storage unavailable: {0}")]
    Unavailable(String),
    #[error("{side} already recorded input {stored_input} for this transaction, not {presented_input}")]
    SideConflict {
        side: Side,
        stored_input: usize,
        presented_input: usize,
    },
    #[error("transaction row changed underneath the lock holder")]
    VersionConflict,
    #[error("injected fault: {0}")]
    Fault(String),
}

impl From<rusqlite::Error> for StoreError {
    fn from(e: rusqlite::Error) -> Self {
        if let rusqlite::Error::SqliteFailure(code, msg) = &e {
            if code.code == rusqlite::ErrorCode::ConstraintViolation {
                return StoreError::DuplicateKey(msg.clone().unwrap_or_else(|| e.to_string()));
            }
        }
        StoreError::Unavailable(e.to_string())
    }
}

/// Opaque transaction label, non-empty and at most 64 characters.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TransactionId(String);

impl TransactionId {
    pub fn new(id: impl Into<String>) -> Result<Self, StoreError> {
        let id = id.into();
        if id.is_empty() {
            return Err(StoreError::Invalid("transaction id is empty".into()));
        }
        if id.chars().count() > MAX_TRANSACTION_ID_LEN {
            return Err(StoreError::Invalid(format!(
                "transaction id longer than {MAX_TRANSACTION_ID_LEN} characters"
            )));
        }
        if id.chars().any(char::is_control) {
            return Err(StoreError::Invalid("transaction id contains control characters".into()));
        }
        Ok(TransactionId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for TransactionId {
    type Error = StoreError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        TransactionId::new(s)
    }
}

impl From<TransactionId> for String {
    fn from(id: TransactionId) -> String {
        id.0
    }
}

impl std::fmt::Display for TransactionId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: UserId,
    pub display_name: String,
}

/// A freshly created user with its plaintext API key. The key is not
/// recoverable from the store afterwards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewUser {
    pub user: UserRecord,
    pub api_key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxInstance {
    pub box_id: BoxId,
    pub behavior_name: String,
    pub alice_user: UserId,
    pub bob_user: UserId,
}

impl BoxInstance {
    /// The side `user` plays on this box, if any.
    pub fn role_of(&self, user: UserId) -> Option<Side> {
        if user == self.alice_user {
            Some(Side::Alice)
        } else if user == self.bob_user {
            Some(Side::Bob)
        } else {
            None
        }
    }

    pub fn user_for(&self, side: Side) -> UserId {
        match side {
            Side::Alice => self.alice_user,
            Side::Bob => self.bob_user,
        }
    }
}

/// One party's half of a transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SideRecord {
    pub input: usize,
    pub output: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransactionRow {
    pub box_id: BoxId,
    pub transaction_id: TransactionId,
    pub alice: Option<SideRecord>,
    pub bob: Option<SideRecord>,
    pub first_side: Option<Side>,
    pub alice_revealed: bool,
    pub bob_revealed: bool,
    pub created_at: String,
    pub completed_at: Option<String>,
    pub row_version: i64,
}

impl TransactionRow {
    pub fn side(&self, side: Side) -> Option<SideRecord> {
        match side {
            Side::Alice => self.alice,
            Side::Bob => self.bob,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.alice.is_some() && self.bob.is_some()
    }

    pub fn revealed(&self, side: Side) -> bool {
        match side {
            Side::Alice => self.alice_revealed,
            Side::Bob => self.bob_revealed,
        }
    }
}

/// Points inside [`Store::with_transaction_lock`] where a fault hook runs.
#[derive(Debug)]
pub enum FaultPoint<'a> {
    /// Section finished and its writes are about to be committed.
    BeforeCommit(&'a TransactionRow),
    /// Writes are committed; the lock is still held.
    AfterCommit(&'a TransactionRow),
}

/// Test hook. Returning an error aborts the section at that point.
pub type FaultHook = Arc<dyn Fn(FaultPoint<'_>) -> Result<(), StoreError> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SyncMode {
    /// WAL with `synchronous=NORMAL`: commits survive a process crash.
    #[default]
    Normal,
    /// WAL with `synchronous=FULL`: commits also survive power loss.
    Full,
}

impl std::str::FromStr for SyncMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "normal" => Ok(SyncMode::Normal),
            "full" => Ok(SyncMode::Full),
            other => Err(format!("unknown sync mode `{other}` (expected normal or full)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StoreConfig {
    pub lock_timeout: Duration,
    pub sync: SyncMode,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            lock_timeout: DEFAULT_LOCK_TIMEOUT,
            sync: SyncMode::Normal,
        }
    }
}

type LockKey = (BoxId, String);

#[derive(Default)]
struct LockTable {
    held: Mutex<HashSet<LockKey>>,
    released: Condvar,
}

struct LockGuard<'a> {
    table: &'a LockTable,
    key: LockKey,
}

impl LockTable {
    fn acquire(&self, key: LockKey, timeout: Duration) -> Result<LockGuard<'_>, StoreError> {
        let start = Instant::now();
        let held = lock_ignoring_poison(&self.held);
        let (mut held, wait) = self
            .released
            .wait_timeout_while(held, timeout, |held| held.contains(&key))
            .unwrap_or_else(|e| e.into_inner());
        if wait.timed_out() && held.contains(&key) {
            return Err(StoreError::LockTimeout {
                box_id: key.0,
                transaction_id: key.1,
                waited: start.elapsed(),
            });
        }
        held.insert(key.clone());
        Ok(LockGuard { table: self, key })
    }
}

impl Drop for LockGuard<'_> {
    fn drop(&mut self) {
        lock_ignoring_poison(&self.table.held).remove(&self.key);
        self.table.released.notify_all();
    }
}

fn lock_ignoring_poison<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// Handle passed to a critical section. Reads see the row as of lock
/// acquisition plus this section's own staged writes.
pub struct LockedTransaction {
    box_id: BoxId,
    transaction_id: TransactionId,
    stored: Option<TransactionRow>,
    staged: Option<TransactionRow>,
}

impl LockedTransaction {
    pub fn box_id(&self) -> BoxId {
        self.box_id
    }

    pub fn transaction_id(&self) -> &TransactionId {
        &self.transaction_id
    }

    pub fn row(&self) -> Option<&TransactionRow> {
        self.staged.as_ref().or(self.stored.as_ref())
    }

    /// The row as it will be written, creating an empty one if none exists.
    /// An empty row is only persisted once a side result is stored.
    pub fn get_or_create(&mut self) -> &mut TransactionRow {
        if self.staged.is_none() {
            let row = self.stored.clone().unwrap_or_else(|| TransactionRow {
                box_id: self.box_id,
                transaction_id: self.transaction_id.clone(),
                alice: None,
                bob: None,
                first_side: None,
                alice_revealed: false,
                bob_revealed: false,
                created_at: now_timestamp(),
                completed_at: None,
                row_version: 0,
            });
            self.staged = Some(row);
        }
        self.staged.as_mut().expect("staged row was just set")
    }

    /// Records `side`'s input and output. Repeating identical values is a
    /// no-op; different values for an already recorded side are rejected.
    pub fn store_side_result(&mut self, side: Side, input: usize, output: usize) -> Result<(), StoreError> {
        let presented = SideRecord { input, output };
        if let Some(stored) = self.row().and_then(|r| r.side(side)) {
            if stored == presented {
                return Ok(());
            }
            return Err(StoreError::SideConflict {
                side,
                stored_input: stored.input,
                presented_input: input,
            });
        }
        let row = self.get_or_create();
        match side {
            Side::Alice => row.alice = Some(presented),
            Side::Bob => row.bob = Some(presented),
        }
        row.first_side.get_or_insert(side);
        if row.is_complete() {
            row.completed_at = Some(now_timestamp());
        }
        Ok(())
    }

    /// Marks that `side` agreed to disclose its half for scoring.
    pub fn mark_revealed(&mut self, side: Side) -> Result<(), StoreError> {
        match self.row() {
            Some(row) if row.side(side).is_some() => {}
            _ => {
                return Err(StoreError::Invalid(format!(
                    "{side} has not used transaction {}",
                    self.transaction_id
                )))
            }
        }
        if self.row().is_some_and(|r| r.revealed(side)) {
            return Ok(());
        }
        let row = self.get_or_create();
        match side {
            Side::Alice => row.alice_revealed = true,
            Side::Bob => row.bob_revealed = true,
        }
        Ok(())
    }

    fn dirty_row(&self) -> Option<&TransactionRow> {
        let staged = self.staged.as_ref()?;
        if staged.alice.is_none() && staged.bob.is_none() {
            return None;
        }
        if self.stored.as_ref() == Some(staged) {
            return None;
        }
        Some(staged)
    }
}

pub struct Store {
    conn: Mutex<Connection>,
    locks: LockTable,
    config: StoreConfig,
    fault_hook: RwLock<Option<FaultHook>>,
    path: Option<PathBuf>,
    _dir_lock: Option<File>,
}

impl Store {
    /// Opens (creating if needed) the store in directory `dir`.
    pub fn open(dir: impl AsRef<Path>, config: StoreConfig) -> Result<Self, StoreError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| StoreError::Unavailable(format!("{}: {e}", dir.display())))?;
        let lock_file = File::create(dir.join(LOCK_FILE)).map_err(|e| StoreError::Unavailable(e.to_string()))?;
        lock_file
            .try_lock()
            .map_err(|_| StoreError::Unavailable(format!("store {} is in use by another process", dir.display())))?;
        let conn = Connection::open(dir.join(DB_FILE))?;
        conn.busy_timeout(config.lock_timeout)?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        conn.pragma_update(
            None,
            "synchronous",
            match config.sync {
                SyncMode::Normal => "NORMAL",
                SyncMode::Full => "FULL",
            },
        )?;
        Self::init(conn, config, Some(dir.to_path_buf()), Some(lock_file))
    }

    /// A private in-memory store, gone when dropped.
    pub fn open_in_memory(config: StoreConfig) -> Result<Self, StoreError> {
        Self::init(Connection::open_in_memory()?, config, None, None)
    }

    fn init(
        conn: Connection,
        config: StoreConfig,
        path: Option<PathBuf>,
        dir_lock: Option<File>,
    ) -> Result<Self, StoreError> {
        conn.pragma_update(None, "foreign_keys", "ON")?;
        let version: i64 = conn.pragma_query_value(None, "user_version", |r| r.get(0))?;
        match version {
            0 => {
                conn.execute_batch(SCHEMA)?;
                conn.pragma_update(None, "user_version", SCHEMA_VERSION)?;
            }
            SCHEMA_VERSION => {}
            other => {
                return Err(StoreError::Unavailable(format!(
                    "store schema version {other} is newer than supported version {SCHEMA_VERSION}"
                )))
            }
        }
        Ok(Store {
            conn: Mutex::new(conn),
            locks: LockTable::default(),
            config,
            fault_hook: RwLock::new(None),
            path,
            _dir_lock: dir_lock,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn set_fault_hook(&self, hook: Option<FaultHook>) {
        *self.fault_hook.write().unwrap_or_else(|e| e.into_inner()) = hook;
    }

    fn conn(&self) -> MutexGuard<'_, Connection> {
        lock_ignoring_poison(&self.conn)
    }

    fn fault(&self, point: FaultPoint<'_>) -> Result<(), StoreError> {
        let hook = self.fault_hook.read().unwrap_or_else(|e| e.into_inner()).clone();
        match hook {
            Some(hook) => hook(point),
            None => Ok(()),
        }
    }

    // Users.

    pub fn create_user(&self, display_name: &str) -> Result<NewUser, StoreError> {
        let api_key = generate_api_key()?;
        let conn = self.conn();
        conn.execute(
            "INSERT INTO users (api_key_sha256, display_name, created_at) VALUES (?1, ?2, ?3)",
            params![hash_api_key(&api_key), display_name, now_timestamp()],
        )?;
        let user_id = conn.last_insert_rowid();
        Ok(NewUser {
            user: UserRecord {
                user_id,
                display_name: display_name.to_owned(),
            },
            api_key,
        })
    }

    pub fn get_user_by_key(&self, api_key: &str) -> Result<UserRecord, StoreError> {
        self.conn()
            .query_row(
                "SELECT user_id, display_name FROM users WHERE api_key_sha256 = ?1",
                params![hash_api_key(api_key)],
                |r| {
                    Ok(UserRecord {
                        user_id: r.get(0)?,
                        display_name: r.get(1)?,
                    })
                },
            )
            .optional()?
            .ok_or_else(|| StoreError::NotFound("user for API key".into()))
    }

    pub fn get_user(&self, user_id: UserId) -> Result<UserRecord, StoreError> {
        self.conn()
            .query_row(
                "SELECT user_id, display_name FROM users WHERE user_id = ?1",
                params![user_id],
                |r| {
                    Ok(UserRecord {
                        user_id: r.get(0)?,
                        display_name: r.get(1)?,
                    })
                },
            )
            .optional()?
            .ok_or_else(|| StoreError::NotFound(format!("user {user_id}")))
    }

    pub fn list_users(&self) -> Result<Vec<UserRecord>, StoreError> {
        let conn = self.conn();
        let mut stmt = conn.prepare("SELECT user_id, display_name FROM users ORDER BY user_id")?;
        let rows = stmt.query_map([], |r| {
            Ok(UserRecord {
                user_id: r.get(0)?,
                display_name: r.get(1)?,
            })
        })?;
        Ok(rows.collect::<Result<_, _>>()?)
    }

    /// Invalidates the user's API key.
    pub fn revoke_api_key(&self, user_id: UserId) -> Result<(), StoreError> {
        let changed = self.conn().execute(
            "UPDATE users SET api_key_sha256 = NULL WHERE user_id = ?1",
            params![user_id],
        )?;
        if changed == 0 {
            return Err(StoreError::NotFound(format!("user {user_id}")));
        }
        Ok(())
    }

    // Behaviors and boxes.

    /// Registers `behavior` under its name. Re-registering an identical
    /// table is a no-op; a different table under the same name is rejected.
    pub fn register_behavior(&self, behavior: &Behavior) -> Result<(), StoreError> {
        let conn = self.conn();
        let existing: Option<String> = conn
            .query_row(
                "SELECT document FROM behaviors WHERE name = ?1",
                params![behavior.name()],
                |r| r.get(0),
            )
            .optional()?;
        match existing {
            Some(doc) => {
                let stored = Behavior::from_json(&doc).map_err(|e| StoreError::Invalid(e.to_string()))?;
                if stored.table() != behavior.table() || stored.alphabets() != behavior.alphabets() {
                    return Err(StoreError::DuplicateKey(format!(
                        "behavior `{}` with a different table",
                        behavior.name()
                    )));
                }
                Ok(())
            }
            None => {
                conn.execute(
                    "INSERT INTO behaviors (name, document) VALUES (?1, ?2)",
                    params![behavior.name(), behavior.to_json()],
                )?;
                Ok(())
            }
        }
    }

    pub fn get_behavior(&self, name: &str) -> Result<Behavior, StoreError> {
        let doc: String = self
            .conn()
            .query_row("SELECT document FROM behaviors WHERE name = ?1", params![name], |r| {
                r.get(0)
            })
            .optional()?
            .ok_or_else(|| StoreError::NotFound(format!("behavior `{name}`")))?;
        Behavior::from_json(&doc).map_err(|e| StoreError::Invalid(e.to_string()))
    }

    /// Pairs `behavior` with two distinct users. Signaling behaviors are refused.
    pub fn create_box_instance(
        &self,
        behavior: &Behavior,
        alice_user: UserId,
        bob_user: UserId,
    ) -> Result<BoxInstance, StoreError> {
        if alice_user == bob_user {
            return Err(StoreError::Invalid("Alice and Bob must be different users".into()));
        }
        if !behavior.is_no_signaling() {
            let report = behavior.check_no_signaling(crate::behavior::EPS_NS);
            return Err(StoreError::Invalid(format!(
                "behavior `{}` is signaling (max marginal deviation {:e})",
                behavior.name(),
                report.max_violation
            )));
        }
        self.get_user(alice_user)?;
        self.get_user(bob_user)?;
        self.register_behavior(behavior)?;
        let conn = self.conn();
        conn.execute(
            "INSERT INTO boxes (behavior_name, alice_user, bob_user, created_at) VALUES (?1, ?2, ?3, ?4)",
            params![behavior.name(), alice_user, bob_user, now_timestamp()],
        )?;
        Ok(BoxInstance {
            box_id: conn.last_insert_rowid(),
            behavior_name: behavior.name().to_owned(),
            alice_user,
            bob_user,
        })
    }

    pub fn get_box(&self, box_id: BoxId) -> Result<BoxInstance, StoreError> {
        self.conn()
            .query_row(
                "SELECT box_id, behavior_name, alice_user, bob_user FROM boxes WHERE box_id = ?1",
                params![box_id],
                box_from_row,
            )
            .optional()?
            .ok_or_else(|| StoreError::NotFound(format!("box {box_id}")))
    }

    pub fn list_boxes(&self) -> Result<Vec<BoxInstance>, StoreError> {
        let conn = self.conn();
        let mut stmt = conn.prepare("SELECT box_id, behavior_name, alice_user, bob_user FROM boxes ORDER BY box_id")?;
        let rows = stmt.query_map([], box_from_row)?;
        Ok(rows.collect::<Result<_, _>>()?)
    }

    /// Boxes where `user_id` plays a side, with that side.
    pub fn list_boxes_for_user(&self, user_id: UserId) -> Result<Vec<(BoxInstance, Side)>, StoreError> {
        let conn = self.conn();
        let mut stmt = conn.prepare(
            "SELECT box_id, behavior_name, alice_user, bob_user FROM boxes
             WHERE alice_user = ?1 OR bob_user = ?1 ORDER BY box_id",
        )?;
        let rows = stmt.query_map(params![user_id], box_from_row)?;
        let mut out = Vec::new();
        for b in rows {
            let b = b?;
            let side = b.role_of(user_id).expect("query filters on the user");
            out.push((b, side));
        }
        Ok(out)
    }

    // Transactions.

    /// Runs `section` with exclusive access to transaction `(box_id, id)`.
    ///
    /// Waits up to the configured lock timeout for other holders. Staged
    /// writes are committed atomically after `section` returns `Ok`.
    pub fn with_transaction_lock<T, E>(
        &self,
        box_id: BoxId,
        transaction_id: &TransactionId,
        section: impl FnOnce(&mut LockedTransaction) -> Result<T, E>,
    ) -> Result<T, E>
    where
        E: From<StoreError>,
    {
        let _guard = self
            .locks
            .acquire((box_id, transaction_id.as_str().to_owned()), self.config.lock_timeout)?;
        let stored = self.get_transaction(box_id, transaction_id)?;
        let mut locked = LockedTransaction {
            box_id,
            transaction_id: transaction_id.clone(),
            stored,
            staged: None,
        };
        let value = section(&mut locked)?;
        if let Some(row) = locked.dirty_row() {
            self.fault(FaultPoint::BeforeCommit(row))?;
            let committed = self.commit_row(row, locked.stored.as_ref().map(|r| r.row_version))?;
            self.fault(FaultPoint::AfterCommit(&committed))?;
        }
        Ok(value)
    }

    fn commit_row(&self, row: &TransactionRow, prior_version: Option<i64>) -> Result<TransactionRow, StoreError> {
        let mut conn = self.conn();
        let tx = conn.transaction()?;
        let mut row = row.clone();
        row.row_version = prior_version.unwrap_or(0) + 1;
        let (ai, ao) = split(row.alice);
        let (bi, bo) = split(row.bob);
        let first = row.first_side.map(Side::as_str);
        match prior_version {
            None => {
                tx.execute(
                    "INSERT INTO transactions (box_id, transaction_id, alice_input, alice_output, bob_input, bob_output,
                        first_side, alice_revealed, bob_revealed, created_at, completed_at, row_version)
                     VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10, ?11, ?12)",
                    params![
                        row.box_id,
                        row.transaction_id.as_str(),
                        ai,
                        ao,
                        bi,
                        bo,
                        first,
                        row.alice_revealed,
                        row.bob_revealed,
                        row.created_at,
                        row.completed_at,
                        row.row_version
                    ],
                )
                .map_err(|e| match StoreError::from(e) {
                    StoreError::DuplicateKey(_) => StoreError::VersionConflict,
                    other => other,
                })?;
            }
            Some(version) => {
                let changed = tx.execute(
                    "UPDATE transactions SET alice_input = ?3, alice_output = ?4, bob_input = ?5, bob_output = ?6,
                        first_side = ?7, alice_revealed = ?8, bob_revealed = ?9, completed_at = ?10, row_version = ?11
                     WHERE box_id = ?1 AND transaction_id = ?2 AND row_version = ?12",
                    params![
                        row.box_id,
                        row.transaction_id.as_str(),
                        ai,
                        ao,
                        bi,
                        bo,
                        first,
                        row.alice_revealed,
                        row.bob_revealed,
                        row.completed_at,
                        row.row_version,
                        version
                    ],
                )?;
                if changed != 1 {
                    return Err(StoreError::VersionConflict);
                }
            }
        }
        tx.commit()?;
        Ok(row)
    }

    pub fn get_transaction(
        &self,
        box_id: BoxId,
        transaction_id: &TransactionId,
    ) -> Result<Option<TransactionRow>, StoreError> {
        Ok(self
            .conn()
            .query_row(
                &format!("SELECT {TX_COLUMNS} FROM transactions WHERE box_id = ?1 AND transaction_id = ?2"),
                params![box_id, transaction_id.as_str()],
                transaction_from_row,
            )
            .optional()?)
    }

    pub fn list_transactions(&self, box_id: BoxId) -> Result<Vec<TransactionRow>, StoreError> {
        let conn = self.conn();
        let mut stmt = conn.prepare(&format!(
            "SELECT {TX_COLUMNS} FROM transactions WHERE box_id = ?1 ORDER BY created_at, transaction_id"
        ))?;
        let rows = stmt.query_map(params![box_id], transaction_from_row)?;
        Ok(rows.collect::<Result<_, _>>()?)
    }

    /// Writes every transaction as one JSON object per line. Returns the
    /// number of rows written.
    pub fn export_transactions(&self, mut out: impl Write) -> Result<usize, StoreError> {
        let conn = self.conn();
        let mut stmt = conn.prepare(&format!(
            "SELECT {TX_COLUMNS} FROM transactions ORDER BY box_id, created_at, transaction_id"
        ))?;
        let rows = stmt.query_map([], transaction_from_row)?;
        let mut n = 0;
        for row in rows {
            let line = serde_json::to_string(&row?).map_err(|e| StoreError::Invalid(e.to_string()))?;
            writeln!(out, "{line}").map_err(|e| StoreError::Unavailable(e.to_string()))?;
            n += 1;
        }
        Ok(n)
    }

    /// Deletes transactions created before `cutoff`. Returns how many were removed.
    pub fn purge_transactions_before(&self, cutoff: DateTime<Utc>) -> Result<usize, StoreError> {
        Ok(self.conn().execute(
            "DELETE FROM transactions WHERE created_at < ?1",
            params![cutoff.to_rfc3339_opts(SecondsFormat::Micros, true)],
        )?)
    }
}

const SCHEMA: &str = "
CREATE TABLE users (
    user_id INTEGER PRIMARY KEY AUTOINCREMENT,
    api_key_sha256 TEXT UNIQUE,
    display_name TEXT NOT NULL,
    created_at TEXT NOT NULL
);
CREATE TABLE behaviors (
    name TEXT PRIMARY KEY,
    document TEXT NOT NULL
);
CREATE TABLE boxes (
    box_id INTEGER PRIMARY KEY AUTOINCREMENT,
    behavior_name TEXT NOT NULL REFERENCES behaviors(name),
    alice_user INTEGER NOT NULL REFERENCES users(user_id),
    bob_user INTEGER NOT NULL REFERENCES users(user_id),
    created_at TEXT NOT NULL,
    CHECK (alice_user <> bob_user)
);
CREATE TABLE transactions (
    box_id INTEGER NOT NULL REFERENCES boxes(box_id),
    transaction_id TEXT NOT NULL,
    alice_input INTEGER,
    alice_output INTEGER,
    bob_input INTEGER,
    bob_output INTEGER,
    first_side TEXT,
    alice_revealed INTEGER NOT NULL DEFAULT 0,
    bob_revealed INTEGER NOT NULL DEFAULT 0,
    created_at TEXT NOT NULL,
    completed_at TEXT,
    row_version INTEGER NOT NULL,
    PRIMARY KEY (box_id, transaction_id),
    CHECK (alice_input IS NOT NULL OR bob_input IS NOT NULL)
);
CREATE INDEX transactions_created ON transactions(created_at);
";

const TX_COLUMNS: &str = "box_id, transaction_id, alice_input, alice_output, bob_input, bob_output, first_side, \
                          alice_revealed, bob_revealed, created_at, completed_at, row_version";

fn box_from_row(r: &rusqlite::Row<'_>) -> rusqlite::Result<BoxInstance> {
    Ok(BoxInstance {
        box_id: r.get(0)?,
        behavior_name: r.get(1)?,
        alice_user: r.get(2)?,
        bob_user: r.get(3)?,
    })
}

fn transaction_from_row(r: &rusqlite::Row<'_>) -> rusqlite::Result<TransactionRow> {
    let side = |input: Option<i64>, output: Option<i64>| match (input, output) {
        (Some(i), Some(o)) => Some(SideRecord {
            input: i as usize,
            output: o as usize,
        }),
        _ => None,
    };
    let tid: String = r.get(1)?;
    let first: Option<String> = r.get(6)?;
    Ok(TransactionRow {
        box_id: r.get(0)?,
        transaction_id: TransactionId(tid),
        alice: side(r.get(2)?, r.get(3)?),
        bob: side(r.get(4)?, r.get(5)?),
        first_side: first.and_then(|s| s.parse().ok()),
        alice_revealed: r.get(7)?,
        bob_revealed: r.get(8)?,
        created_at: r.get(9)?,
        completed_at: r.get(10)?,
        row_version: r.get(11)?,
    })
}

fn split(record: Option<SideRecord>) -> (Option<i64>, Option<i64>) {
    match record {
        Some(s) => (Some(s.input as i64), Some(s.output as i64)),
        None => (None, None),
    }
}

pub fn now_timestamp() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Micros, true)
}

/// 256-bit random key, hex encoded.
pub fn generate_api_key() -> Result<String, StoreError> {
    let mut bytes = [0u8; 32];
    rand::rngs::OsRng
        .try_fill_bytes(&mut bytes)
        .map_err(|e| StoreError::Unavailable(format!("OS entropy: {e}")))?;
    Ok(hex::encode(bytes))
}

pub fn hash_api_key(api_key: &str) -> String {
    hex::encode(Sha256::digest(api_key.as_bytes()))
}
