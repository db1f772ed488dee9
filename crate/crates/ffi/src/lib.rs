//! C ABI for nlbox.
//!
//! Objects are opaque handles created by `*_new`/constructor functions and
//! released with the matching `*_free`. Every fallible call returns an
//! [`NlboxStatus`]; on failure a message is available from
//! [`nlbox_last_error_message`] on the same thread until the next call.
//! Strings passed in must be NUL-terminated UTF-8. No function unwinds into C.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nlbox::behavior::{self, Behavior, Side};
use nlbox::client::{BoxBackend, ClientError, HttpBoxClient, LocalBoxClient};
use nlbox::entropy::{EntropySource, SeededEntropy, SystemEntropy};
use nlbox::locality;
use nlbox::sampling::Engine;
use nlbox::store::{Store, StoreConfig};
use nlbox::wire;

/// Result of every fallible call. Values 1 to 6 match the service's
/// `status` codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NlboxStatus {
    Ok = 0,
    BadApiKey = 1,
    UnknownBox = 2,
    InvalidInput = 3,
    InputMismatch = 4,
    RoleMismatch = 5,
    Unavailable = 6,
    NullPointer = 10,
    InvalidArgument = 11,
    InvalidBehavior = 12,
    Transport = 13,
    Protocol = 14,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NlboxSide {
    Alice = 0,
    Bob = 1,
}

impl From<NlboxSide> for Side {
    fn from(s: NlboxSide) -> Side {
        match s {
            NlboxSide::Alice => Side::Alice,
            NlboxSide::Bob => Side::Bob,
        }
    }
}

/// A validated behavior `P(a,b|x,y)`.
pub struct NlboxBehavior(Behavior);

/// An in-process box: private in-memory store, one box, both sides.
pub struct NlboxSession {
    alice: LocalBoxClient,
    bob: LocalBoxClient,
}

/// One side of one box on a remote server.
pub struct NlboxClient(HttpBoxClient);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Fail(NlboxStatus, String);

impl Fail {
    fn new(status: NlboxStatus, msg: impl Into<String>) -> Self {
        Fail(status, msg.into())
    }
}

impl From<ClientError> for Fail {
    fn from(e: ClientError) -> Self {
        let status = match &e {
            ClientError::Transport(_) => NlboxStatus::Transport,
            ClientError::Protocol(_) | ClientError::Http { .. } => NlboxStatus::Protocol,
            other => status_from_wire(other.status().unwrap_or(wire::STATUS_UNAVAILABLE)),
        };
        Fail(status, e.to_string())
    }
}

fn status_from_wire(code: u8) -> NlboxStatus {
    match code {
        wire::STATUS_BAD_API_KEY => NlboxStatus::BadApiKey,
        wire::STATUS_UNKNOWN_BOX => NlboxStatus::UnknownBox,
        wire::STATUS_INVALID_INPUT => NlboxStatus::InvalidInput,
        wire::STATUS_INPUT_MISMATCH => NlboxStatus::InputMismatch,
        wire::STATUS_ROLE_MISMATCH => NlboxStatus::RoleMismatch,
        _ => NlboxStatus::Unavailable,
    }
}

/// Runs `f`, records failures and contains panics.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> NlboxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            NlboxStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            NlboxStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::new(NlboxStatus::NullPointer, format!("{what} is NULL")));
    }
    // SAFETY: caller passes a NUL-terminated string that outlives the call
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Fail::new(NlboxStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    // SAFETY: non-null handles come from this library and are still live
    unsafe { p.as_ref() }.ok_or_else(|| Fail::new(NlboxStatus::NullPointer, format!("{what} is NULL")))
}

fn out_arg<T>(p: *mut T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail::new(NlboxStatus::NullPointer, format!("{what} is NULL")))
    } else {
        Ok(())
    }
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next nlbox call on the same thread.
#[no_mangle]
pub extern "C" fn nlbox_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn nlbox_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Built-in behavior by name: `pr`, `uniform`, `tsirelson`,
/// `isotropic:<v>`, `deterministic:<fa>,<fb>`.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nlbox_behavior_builtin(name: *const c_char, out: *mut *mut NlboxBehavior) -> NlboxStatus {
    guard(|| {
        out_arg(out, "out")?;
        let name = unsafe { str_arg(name, "name") }?;
        let b = behavior::builtin(name).map_err(|e| Fail::new(NlboxStatus::InvalidBehavior, e.to_string()))?;
        unsafe { *out = Box::into_raw(Box::new(NlboxBehavior(b))) };
        Ok(())
    })
}

/// Parses a behavior document (JSON).
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nlbox_behavior_from_json(json: *const c_char, out: *mut *mut NlboxBehavior) -> NlboxStatus {
    guard(|| {
        out_arg(out, "out")?;
        let text = unsafe { str_arg(json, "json") }?;
        let b = Behavior::from_json(text).map_err(|e| Fail::new(NlboxStatus::InvalidBehavior, e.to_string()))?;
        unsafe { *out = Box::into_raw(Box::new(NlboxBehavior(b))) };
        Ok(())
    })
}

/// # Safety
/// `b` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nlbox_behavior_free(b: *mut NlboxBehavior) {
    if !b.is_null() {
        drop(unsafe { Box::from_raw(b) });
    }
}

/// `P(a,b|x,y)`.
///
/// # Safety
/// `b` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nlbox_behavior_prob(
    b: *const NlboxBehavior,
    x: usize,
    y: usize,
    a: usize,
    bo: usize,
    out: *mut f64,
) -> NlboxStatus {
    guard(|| {
        out_arg(out, "out")?;
        let beh = &unsafe { ref_arg(b, "behavior") }?.0;
        let al = beh.alphabets();
        if x >= al.x_size || y >= al.y_size || a >= al.a_size || bo >= al.b_size {
            return Err(Fail::new(NlboxStatus::InvalidInput, "symbol out of range"));
        }
        unsafe { *out = beh.prob(x, y, a, bo) };
        Ok(())
    })
}

/// Whether both parties' marginals are independent of the other's input.
///
/// # Safety
/// `b` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nlbox_behavior_is_no_signaling(b: *const NlboxBehavior, out: *mut bool) -> NlboxStatus {
    guard(|| {
        out_arg(out, "out")?;
        let beh = &unsafe { ref_arg(b, "behavior") }?.0;
        unsafe { *out = beh.is_no_signaling() };
        Ok(())
    })
}

/// Whether the behavior is a mixture of deterministic local strategies.
///
/// # Safety
/// `b` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nlbox_behavior_is_local(b: *const NlboxBehavior, out: *mut bool) -> NlboxStatus {
    guard(|| {
        out_arg(out, "out")?;
        let beh = &unsafe { ref_arg(b, "behavior") }?.0;
        let cert = locality::is_local(beh, behavior::EPS_LP)
            .map_err(|e| Fail::new(NlboxStatus::InvalidArgument, e.to_string()))?;
        unsafe { *out = cert.is_local };
        Ok(())
    })
}

/// Expected CHSH payoff with uniform inputs; binary behaviors only.
///
/// # Safety
/// `b` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nlbox_behavior_chsh_payoff(b: *const NlboxBehavior, out: *mut f64) -> NlboxStatus {
    guard(|| {
        out_arg(out, "out")?;
        let beh = &unsafe { ref_arg(b, "behavior") }?.0;
        let p = beh
            .chsh_expected_payoff()
            .map_err(|e| Fail::new(NlboxStatus::InvalidArgument, e.to_string()))?;
        unsafe { *out = p };
        Ok(())
    })
}

/// In-process box for `b`. With `seeded`, outputs are reproducible from
/// `seed`; otherwise the system generator is used.
///
/// # Safety
/// `b` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nlbox_session_new(
    b: *const NlboxBehavior,
    seeded: bool,
    seed: u64,
    out: *mut *mut NlboxSession,
) -> NlboxStatus {
    guard(|| {
        out_arg(out, "out")?;
        let beh = &unsafe { ref_arg(b, "behavior") }?.0;
        let unavailable = |e: nlbox::StoreError| Fail::new(NlboxStatus::Unavailable, e.to_string());
        let store = std::sync::Arc::new(Store::open_in_memory(StoreConfig::default()).map_err(unavailable)?);
        let alice = store.create_user("alice").map_err(unavailable)?.user.user_id;
        let bob = store.create_user("bob").map_err(unavailable)?.user.user_id;
        let instance = store
            .create_box_instance(beh, alice, bob)
            .map_err(|e| Fail::new(NlboxStatus::InvalidBehavior, e.to_string()))?;
        let entropy: Box<dyn EntropySource> = if seeded {
            Box::new(SeededEntropy::new(seed))
        } else {
            Box::new(SystemEntropy::new())
        };
        let engine = std::sync::Arc::new(Engine::new(store, entropy));
        let session = NlboxSession {
            alice: LocalBoxClient::new(engine.clone(), instance.box_id, Side::Alice),
            bob: LocalBoxClient::new(engine, instance.box_id, Side::Bob),
        };
        unsafe { *out = Box::into_raw(Box::new(session)) };
        Ok(())
    })
}

/// Uses one side of transaction `transaction_id`.
///
/// # Safety
/// `s` must be a live handle; `transaction_id` a NUL-terminated string;
/// `output` writable.
#[no_mangle]
pub unsafe extern "C" fn nlbox_session_use(
    s: *const NlboxSession,
    transaction_id: *const c_char,
    side: NlboxSide,
    input: usize,
    output: *mut usize,
) -> NlboxStatus {
    guard(|| {
        out_arg(output, "output")?;
        let session = unsafe { ref_arg(s, "session") }?;
        let k = unsafe { str_arg(transaction_id, "transaction_id") }?;
        let client = match Side::from(side) {
            Side::Alice => &session.alice,
            Side::Bob => &session.bob,
        };
        let o = client.use_box(k, input)?;
        unsafe { *output = o };
        Ok(())
    })
}

/// # Safety
/// `s` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nlbox_session_free(s: *mut NlboxSession) {
    if !s.is_null() {
        drop(unsafe { Box::from_raw(s) });
    }
}

/// HTTP client for one side of box `box_id` at `base_url`.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nlbox_client_new(
    base_url: *const c_char,
    api_key: *const c_char,
    box_id: i64,
    side: NlboxSide,
    out: *mut *mut NlboxClient,
) -> NlboxStatus {
    guard(|| {
        out_arg(out, "out")?;
        let url = unsafe { str_arg(base_url, "base_url") }?;
        let key = unsafe { str_arg(api_key, "api_key") }?;
        let c = HttpBoxClient::new(url, key, box_id, side.into())?;
        unsafe { *out = Box::into_raw(Box::new(NlboxClient(c))) };
        Ok(())
    })
}

/// Uses transaction `transaction_id` with `input`; retries transport
/// failures and busy replies with bounded backoff.
///
/// # Safety
/// `c` must be a live handle; `transaction_id` a NUL-terminated string;
/// `output` writable.
#[no_mangle]
pub unsafe extern "C" fn nlbox_client_use(
    c: *const NlboxClient,
    transaction_id: *const c_char,
    input: usize,
    output: *mut usize,
) -> NlboxStatus {
    guard(|| {
        out_arg(output, "output")?;
        let client = unsafe { ref_arg(c, "client") }?;
        let k = unsafe { str_arg(transaction_id, "transaction_id") }?;
        let o = client.0.use_box(k, input)?;
        unsafe { *output = o };
        Ok(())
    })
}

/// # Safety
/// `c` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nlbox_client_free(c: *mut NlboxClient) {
    if !c.is_null() {
        drop(unsafe { Box::from_raw(c) });
    }
}
