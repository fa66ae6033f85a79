//! C ABI over the hiermem engine.
//!
//! Every function returns an [`AgentmemStatus`]. On failure a message is
//! available from [`agentmem_last_error`] on the same thread until the next
//! call. Strings handed out by the library must be released with
//! [`agentmem_string_free`]; engines with [`agentmem_engine_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use agentmem::config::AppConfig;
use agentmem::hiermem::{Engine, EngineError, IncomingMessage};

/// Opaque engine handle.
pub struct AgentmemEngine {
    inner: Engine,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentmemStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Engine = 4,
    Backend = 5,
    Storage = 6,
    InvalidTimestamp = 7,
    Panic = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(AgentmemStatus, String);

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        let status = match &e {
            EngineError::Config(_) => AgentmemStatus::Config,
            EngineError::Gateway(_) => AgentmemStatus::Backend,
            EngineError::Store(_) => AgentmemStatus::Storage,
            _ => AgentmemStatus::Engine,
        };
        Failure(status, e.to_string())
    }
}

impl From<agentmem::config::ConfigError> for Failure {
    fn from(e: agentmem::config::ConfigError) -> Self {
        Failure(AgentmemStatus::Config, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AgentmemStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AgentmemStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside agentmem");
            AgentmemStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(AgentmemStatus::NullPointer, format!("`{name}` is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(AgentmemStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

unsafe fn engine_mut<'a>(p: *mut AgentmemEngine) -> Result<&'a mut Engine, Failure> {
    p.as_mut().map(|h| &mut h.inner).ok_or_else(|| Failure(AgentmemStatus::NullPointer, "`engine` is null".into()))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(AgentmemStatus::NullPointer, "output pointer is null".into()));
    }
    out.write(value);
    Ok(())
}

fn owned_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("interior nul removed").into_raw()
}

unsafe fn config_arg(config_toml: *const c_char) -> Result<AppConfig, Failure> {
    let mut cfg = if config_toml.is_null() { AppConfig::default() } else { AppConfig::parse(str_arg(config_toml, "config_toml")?)? };
    cfg.apply_env(|k| std::env::var(k).ok());
    Ok(cfg)
}

/// Create an engine for `conversation_id`. `config_toml` may be null for
/// defaults (mock backend).
///
/// # Safety
/// String arguments must be null or valid NUL-terminated strings; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn agentmem_engine_new(
    conversation_id: *const c_char,
    config_toml: *const c_char,
    out: *mut *mut AgentmemEngine,
) -> AgentmemStatus {
    guard(|| {
        let id = str_arg(conversation_id, "conversation_id")?;
        let cfg = config_arg(config_toml)?;
        let engine = Engine::new(id, cfg.engine.clone(), cfg.build_gateway()?, cfg.build_prompts()?)?;
        write_out(out, Box::into_raw(Box::new(AgentmemEngine { inner: engine })))
    })
}

/// Load an engine from a persistence directory.
///
/// # Safety
/// As [`agentmem_engine_new`].
#[no_mangle]
pub unsafe extern "C" fn agentmem_engine_load(
    dir: *const c_char,
    config_toml: *const c_char,
    out: *mut *mut AgentmemEngine,
) -> AgentmemStatus {
    guard(|| {
        let dir = str_arg(dir, "dir")?;
        let cfg = config_arg(config_toml)?;
        let engine = Engine::load(Path::new(dir), cfg.build_gateway()?, cfg.build_prompts()?)?;
        write_out(out, Box::into_raw(Box::new(AgentmemEngine { inner: engine })))
    })
}

/// # Safety
/// `engine` must come from this library and not be used afterwards. Null is
/// a no-op.
#[no_mangle]
pub unsafe extern "C" fn agentmem_engine_free(engine: *mut AgentmemEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Ingest one message. `timestamp_ms` is Unix time in milliseconds.
///
/// # Safety
/// `engine` must be a live handle; strings as in [`agentmem_engine_new`].
#[no_mangle]
pub unsafe extern "C" fn agentmem_ingest(
    engine: *mut AgentmemEngine,
    speaker: *const c_char,
    text: *const c_char,
    timestamp_ms: i64,
) -> AgentmemStatus {
    guard(|| {
        let engine = engine_mut(engine)?;
        let speaker = str_arg(speaker, "speaker")?;
        let text = str_arg(text, "text")?;
        let at = chrono::DateTime::from_timestamp_millis(timestamp_ms)
            .ok_or_else(|| Failure(AgentmemStatus::InvalidTimestamp, format!("timestamp {timestamp_ms} out of range")))?;
        engine.ingest(IncomingMessage::new(speaker, text, at))?;
        Ok(())
    })
}

/// Answer a question. `*out_json` receives `{answer, hits, usage}`.
///
/// # Safety
/// `engine` must be a live handle; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn agentmem_answer(
    engine: *mut AgentmemEngine,
    question: *const c_char,
    out_json: *mut *mut c_char,
) -> AgentmemStatus {
    guard(|| {
        let engine = engine_mut(engine)?;
        let q = str_arg(question, "question")?;
        let answer = engine.answer(q)?;
        let json = serde_json::to_string(&answer).map_err(|e| Failure(AgentmemStatus::Engine, e.to_string()))?;
        write_out(out_json, owned_string(json))
    })
}

/// Rendered retrieval context for a question, without generating.
///
/// # Safety
/// As [`agentmem_answer`].
#[no_mangle]
pub unsafe extern "C" fn agentmem_retrieve(
    engine: *mut AgentmemEngine,
    question: *const c_char,
    out_context: *mut *mut c_char,
) -> AgentmemStatus {
    guard(|| {
        let engine = engine_mut(engine)?;
        let q = str_arg(question, "question")?;
        let ctx = engine.retrieve(q)?;
        write_out(out_context, owned_string(ctx.render()))
    })
}

/// Write the engine to a persistence directory.
///
/// # Safety
/// As [`agentmem_ingest`].
#[no_mangle]
pub unsafe extern "C" fn agentmem_engine_save(engine: *mut AgentmemEngine, dir: *const c_char) -> AgentmemStatus {
    guard(|| {
        let engine = engine_mut(engine)?;
        let dir = str_arg(dir, "dir")?;
        engine.save(Path::new(dir))?;
        Ok(())
    })
}

/// Number of messages ingested so far, or -1 for a null handle.
///
/// # Safety
/// `engine` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn agentmem_engine_message_count(engine: *const AgentmemEngine) -> i64 {
    engine.as_ref().map_or(-1, |h| h.inner.ingested() as i64)
}

/// Message of the last failed call on this thread, or null. Owned by the
/// library and valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn agentmem_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn agentmem_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Static version string.
#[no_mangle]
pub extern "C" fn agentmem_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_arguments_report() {
        let mut out = ptr::null_mut();
        let st = unsafe { agentmem_engine_new(ptr::null(), ptr::null(), &mut out) };
        assert_eq!(st, AgentmemStatus::NullPointer);
        let msg = unsafe { CStr::from_ptr(agentmem_last_error()) }.to_str().unwrap();
        assert!(msg.contains("conversation_id"));
        assert!(out.is_null());
    }

    #[test]
    fn bad_config_is_config_error() {
        let id = CString::new("c").unwrap();
        let cfg = CString::new("[engine]\nfanout = 0\n").unwrap();
        let mut out = ptr::null_mut();
        let st = unsafe { agentmem_engine_new(id.as_ptr(), cfg.as_ptr(), &mut out) };
        assert_eq!(st, AgentmemStatus::Config);
    }
}
