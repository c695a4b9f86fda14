//! C interface to the knowledge repository, scoring and batch runs.
//!
//! Every function returns a [`HitlStatus`]. On failure the message is kept
//! per thread and read with [`hitl_last_error`]. Strings handed out by this
//! library are freed with [`hitl_string_free`], repositories with
//! [`hitl_repository_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use hitl_core::config::RunConfig;
use hitl_core::events::EventLog;
use hitl_core::harness::Runner;
use hitl_core::kr::{
    composite_score, ContentKind, KnowledgeContent, KnowledgeItem, KnowledgeWriter, KrError,
    Relation, Repository, ScoringParams, Source, Status, TransitionCause,
};
use hitl_core::similarity::{sim_texts, HashTfEmbedder};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HitlStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    UnknownKid = 4,
    DuplicateKid = 5,
    InvalidTransition = 6,
    SupersessionCycle = 7,
    ClockSkew = 8,
    Io = 9,
    Config = 10,
    Run = 11,
    Panic = 99,
}

/// Opaque repository handle.
pub struct HitlRepository {
    repo: Repository,
}

/// Item status codes used by [`hitl_composite_score`].
pub const HITL_ITEM_VALID: u32 = 0;
pub const HITL_ITEM_POTENTIALLY_OUTDATED: u32 = 1;
pub const HITL_ITEM_SUPERSEDED: u32 = 2;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Fail(HitlStatus, String);

impl From<KrError> for Fail {
    fn from(e: KrError) -> Self {
        let code = match &e {
            KrError::UnknownKid(_) => HitlStatus::UnknownKid,
            KrError::DuplicateKid(_) => HitlStatus::DuplicateKid,
            KrError::InvalidTransition { .. } => HitlStatus::InvalidTransition,
            KrError::SupersessionCycle { .. } => HitlStatus::SupersessionCycle,
            KrError::ClockSkew { .. } => HitlStatus::ClockSkew,
            KrError::Storage(_) => HitlStatus::Io,
            _ => HitlStatus::InvalidArgument,
        };
        Fail(code, e.to_string())
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HitlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            HitlStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(&msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            HitlStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(HitlStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(HitlStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn repo_mut<'a>(p: *mut HitlRepository) -> Result<&'a mut HitlRepository, Fail> {
    p.as_mut()
        .ok_or_else(|| Fail(HitlStatus::NullArgument, "repository is null".into()))
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail(
            HitlStatus::NullArgument,
            "output pointer is null".into(),
        ));
    }
    let c = CString::new(s)
        .map_err(|_| Fail(HitlStatus::InvalidArgument, "output has a nul byte".into()))?;
    *out = c.into_raw();
    Ok(())
}

fn scoring(params_json: Option<&str>) -> Result<ScoringParams, Fail> {
    match params_json {
        None => Ok(ScoringParams::default()),
        Some(s) => serde_json::from_str(s)
            .map_err(|e| Fail(HitlStatus::InvalidArgument, format!("scoring params: {e}"))),
    }
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn hitl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn hitl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `run_id` must be a valid C string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hitl_repository_new(
    run_id: *const c_char,
    out: *mut *mut HitlRepository,
) -> HitlStatus {
    guard(|| {
        let id = text(run_id, "run_id")?;
        if out.is_null() {
            return Err(Fail(HitlStatus::NullArgument, "out is null".into()));
        }
        *out = Box::into_raw(Box::new(HitlRepository {
            repo: Repository::new(id),
        }));
        Ok(())
    })
}

/// # Safety
/// `repo` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn hitl_repository_free(repo: *mut HitlRepository) {
    if !repo.is_null() {
        drop(Box::from_raw(repo));
    }
}

/// # Safety
/// Pointers must be valid; `out` receives the item count.
#[no_mangle]
pub unsafe extern "C" fn hitl_repository_len(
    repo: *mut HitlRepository,
    out: *mut usize,
) -> HitlStatus {
    guard(|| {
        let r = repo_mut(repo)?;
        if out.is_null() {
            return Err(Fail(HitlStatus::NullArgument, "out is null".into()));
        }
        *out = r.repo.len();
        Ok(())
    })
}

/// Adds a Valid item. `kind` is `rule`, `explanation` or `fact`; exemplars
/// go through [`hitl_repository_add_json`]. The new kid is written to
/// `out_kid`.
///
/// # Safety
/// Pointers must be valid C strings / out pointers.
#[no_mangle]
pub unsafe extern "C" fn hitl_repository_add(
    repo: *mut HitlRepository,
    kind: *const c_char,
    content: *const c_char,
    now: i64,
    out_kid: *mut *mut c_char,
) -> HitlStatus {
    guard(|| {
        let r = repo_mut(repo)?;
        let kind_s = text(kind, "kind")?;
        let kind = ContentKind::parse(kind_s).ok_or_else(|| {
            Fail(
                HitlStatus::InvalidArgument,
                format!("unknown kind {kind_s:?}"),
            )
        })?;
        let body = text(content, "content")?;
        let c = match kind {
            ContentKind::Rule => KnowledgeContent::rule(body),
            ContentKind::Explanation => KnowledgeContent::explanation(body),
            ContentKind::Fact => KnowledgeContent::fact(body),
            ContentKind::Exemplar => {
                return Err(Fail(
                    HitlStatus::InvalidArgument,
                    "add exemplars with hitl_repository_add_json".into(),
                ))
            }
        };
        let kid = r.repo.add_item(c, Source::Human, now)?;
        put_string(out_kid, kid)
    })
}

/// Inserts a complete item given as JSON, keeping its kid and timestamps.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn hitl_repository_add_json(
    repo: *mut HitlRepository,
    item_json: *const c_char,
) -> HitlStatus {
    guard(|| {
        let r = repo_mut(repo)?;
        let item: KnowledgeItem = serde_json::from_str(text(item_json, "item_json")?)
            .map_err(|e| Fail(HitlStatus::InvalidArgument, format!("item: {e}")))?;
        r.repo.seed_item(item)?;
        Ok(())
    })
}

/// Moves `kid` to `to_status` (`Valid`, `PotentiallyOutdated`, `Superseded`).
/// `relation` names the cause (`supersedes`, `updates`, `contradicts`,
/// `consistent`, `ambiguous`); `other_kid` may be null.
///
/// # Safety
/// Pointers must be valid; `other_kid` may be null.
#[no_mangle]
pub unsafe extern "C" fn hitl_repository_transition(
    repo: *mut HitlRepository,
    kid: *const c_char,
    to_status: *const c_char,
    relation: *const c_char,
    other_kid: *const c_char,
    override_: bool,
    now: i64,
) -> HitlStatus {
    guard(|| {
        let r = repo_mut(repo)?;
        let kid = text(kid, "kid")?;
        let st = text(to_status, "to_status")?;
        let to = Status::parse(st).ok_or_else(|| {
            Fail(
                HitlStatus::InvalidArgument,
                format!("unknown status {st:?}"),
            )
        })?;
        let rel_s = text(relation, "relation")?;
        let rel: Relation = serde_json::from_value(serde_json::Value::String(rel_s.to_string()))
            .map_err(|_| {
                Fail(
                    HitlStatus::InvalidArgument,
                    format!("unknown relation {rel_s:?}"),
                )
            })?;
        let other = if other_kid.is_null() {
            None
        } else {
            Some(text(other_kid, "other_kid")?.to_string())
        };
        let mut cause = TransitionCause::new(rel, other);
        if override_ {
            cause = cause.with_override();
        }
        r.repo.transition_status(kid, to, now, cause)?;
        Ok(())
    })
}

/// Scores every item against `query` with the built-in embedder and writes
/// the selected items, best first, as a JSON array. `params_json` may be
/// null for the default scoring parameters.
///
/// # Safety
/// Pointers must be valid; `params_json` may be null.
#[no_mangle]
pub unsafe extern "C" fn hitl_repository_retrieve(
    repo: *mut HitlRepository,
    query: *const c_char,
    now: i64,
    params_json: *const c_char,
    out_json: *mut *mut c_char,
) -> HitlStatus {
    guard(|| {
        let r = repo_mut(repo)?;
        let q = text(query, "query")?;
        let params = scoring(if params_json.is_null() {
            None
        } else {
            Some(text(params_json, "params_json")?)
        })?;
        let emb = HashTfEmbedder;
        let mut rel = |i: &KnowledgeItem| sim_texts(q, &i.content.text, &emb).unwrap_or(0.0);
        let got = r.repo.retrieve_subset(&mut rel, now, &params)?;
        put_string(
            out_json,
            serde_json::to_string(&got).expect("scored items serialize"),
        )
    })
}

/// Canonical JSON of the repository.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn hitl_repository_to_json(
    repo: *mut HitlRepository,
    out_json: *mut *mut c_char,
) -> HitlStatus {
    guard(|| {
        let r = repo_mut(repo)?;
        put_string(out_json, r.repo.to_canonical_json())
    })
}

/// Rebuilds the repository recorded in a run log.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn hitl_repository_replay_file(
    path: *const c_char,
    out: *mut *mut HitlRepository,
) -> HitlStatus {
    guard(|| {
        let p = text(path, "path")?;
        if out.is_null() {
            return Err(Fail(HitlStatus::NullArgument, "out is null".into()));
        }
        let records =
            EventLog::load(Path::new(p)).map_err(|e| Fail(HitlStatus::Io, e.to_string()))?;
        let repo = Repository::replay_from_log(&records)?;
        *out = Box::into_raw(Box::new(HitlRepository { repo }));
        Ok(())
    })
}

/// Composite score of an item with the given status code, age in seconds
/// and relevance in [0, 1].
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hitl_composite_score(
    status: u32,
    w_po: f64,
    lambda_per_s: f64,
    age_s: i64,
    relevance: f64,
    out: *mut f64,
) -> HitlStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail(HitlStatus::NullArgument, "out is null".into()));
        }
        let status = match status {
            HITL_ITEM_VALID => Status::Valid,
            HITL_ITEM_POTENTIALLY_OUTDATED => Status::PotentiallyOutdated,
            HITL_ITEM_SUPERSEDED => Status::Superseded,
            s => {
                return Err(Fail(
                    HitlStatus::InvalidArgument,
                    format!("unknown status code {s}"),
                ))
            }
        };
        if age_s < 0 {
            return Err(Fail(HitlStatus::ClockSkew, format!("negative age {age_s}")));
        }
        let params = ScoringParams {
            w_po,
            lambda: lambda_per_s,
            ..ScoringParams::default()
        };
        params.validate()?;
        let item = KnowledgeItem {
            kid: "x".into(),
            content: KnowledgeContent::fact("x"),
            ts_added: 0,
            ts_validated: 0,
            status,
            meta: Default::default(),
        };
        *out = composite_score(&item, relevance, age_s, &params)?.composite;
        Ok(())
    })
}

/// Runs a whole stream from a run configuration given as JSON and writes the
/// final metrics as JSON. The log goes to `config.log` or stays in memory.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn hitl_run_config_json(
    config_json: *const c_char,
    out_metrics_json: *mut *mut c_char,
) -> HitlStatus {
    guard(|| {
        let cfg: RunConfig = serde_json::from_str(text(config_json, "config_json")?)
            .map_err(|e| Fail(HitlStatus::Config, e.to_string()))?;
        let run_id = cfg.run_id.clone().unwrap_or_else(|| "run".into());
        let built = cfg
            .build(&run_id, None)
            .map_err(|e| Fail(HitlStatus::Config, e.to_string()))?;
        let log = match &cfg.log {
            Some(p) => EventLog::create(p).map_err(|e| Fail(HitlStatus::Io, e.to_string()))?,
            None => EventLog::in_memory(),
        };
        let mut runner = Runner::start(
            &run_id,
            built.params,
            built.providers,
            log,
            built.stream,
            built.seed,
            cfg.snapshot(),
        )
        .map_err(|e| Fail(HitlStatus::Run, e.to_string()))?;
        let m = runner
            .run_to_end()
            .map_err(|e| Fail(HitlStatus::Run, e.to_string()))?;
        put_string(
            out_metrics_json,
            serde_json::to_string(&m).expect("metrics serialize"),
        )
    })
}
