//! C ABI for `boxembed`.
//!
//! Tables are exposed as an opaque `BoxembedTable` handle owned by the
//! caller and released with [`boxembed_table_free`]. Every fallible call
//! returns a [`BoxembedStatus`]; on failure a message is available from
//! [`boxembed_last_error`] until the next failing call on the same thread.
//! Panics never cross the boundary: they are caught and reported as
//! `BOXEMBED_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use boxembed::diff::{Tape, Tensor};
use boxembed::graph::{make_split, Hierarchy};
use boxembed::ops::{self, IntersectionKind, OpsConfig, VolumeKind};
use boxembed::train::{evaluate, train, TrainConfig};
use boxembed::{BoxTensor, EmbeddingTable, Error, InitSpec, ParamKind};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoxembedStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    IndexOutOfRange = 3,
    ShapeMismatch = 4,
    Parse = 5,
    Io = 6,
    NonFinite = 7,
    Config = 8,
    Utf8 = 9,
    Panic = 10,
}

/// Intersection kinds, matching `boxembed::ops::IntersectionKind`.
pub const BOXEMBED_INTERSECTION_HARD: u32 = 0;
pub const BOXEMBED_INTERSECTION_GUMBEL: u32 = 1;
/// Volume kinds, matching `boxembed::ops::VolumeKind`.
pub const BOXEMBED_VOLUME_HARD: u32 = 0;
pub const BOXEMBED_VOLUME_SOFT: u32 = 1;
pub const BOXEMBED_VOLUME_BESSEL_APPROX: u32 = 2;
/// Parameterizations, matching `boxembed::ParamKind`.
pub const BOXEMBED_PARAM_RAW: u32 = 0;
pub const BOXEMBED_PARAM_MIN_DELTA: u32 = 1;
pub const BOXEMBED_PARAM_SIGMOID: u32 = 2;
pub const BOXEMBED_PARAM_TANH: u32 = 3;

/// Intersection and volume settings for the scoring calls.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct BoxembedOps {
    pub intersection: u32,
    pub intersection_temperature: f64,
    pub volume: u32,
    pub volume_temperature: f64,
}

/// Uniform initialization ranges (min corner and side length).
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct BoxembedInitSpec {
    pub min_lo: f64,
    pub min_hi: f64,
    pub side_lo: f64,
    pub side_hi: f64,
}

/// Opaque table handle.
pub struct BoxembedTable {
    inner: EmbeddingTable,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs replaced");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> BoxembedStatus {
    match e {
        Error::ShapeMismatch { .. } => BoxembedStatus::ShapeMismatch,
        Error::IndexOutOfRange { .. } => BoxembedStatus::IndexOutOfRange,
        Error::Parse { .. } => BoxembedStatus::Parse,
        Error::Io { .. } => BoxembedStatus::Io,
        Error::NonFinite(_) => BoxembedStatus::NonFinite,
        Error::Config(_) => BoxembedStatus::Config,
        _ => BoxembedStatus::InvalidArgument,
    }
}

struct Failure(BoxembedStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn fail(status: BoxembedStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Runs `f`, converting errors and panics into a status plus last-error
/// message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BoxembedStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BoxembedStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            BoxembedStatus::Panic
        }
    }
}

unsafe fn table_ref<'a>(t: *const BoxembedTable) -> Result<&'a EmbeddingTable, Failure> {
    t.as_ref()
        .map(|t| &t.inner)
        .ok_or_else(|| fail(BoxembedStatus::NullPointer, "table handle is NULL"))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| fail(BoxembedStatus::NullPointer, format!("{what} is NULL")))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(BoxembedStatus::NullPointer, format!("{what} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| fail(BoxembedStatus::Utf8, format!("{what} is not UTF-8: {e}")))
}

fn param_kind(kind: u32) -> Result<ParamKind, Failure> {
    ParamKind::ALL.get(kind as usize).copied().ok_or_else(|| {
        fail(
            BoxembedStatus::InvalidArgument,
            format!("unknown parameterization {kind}"),
        )
    })
}

unsafe fn ops_arg(p: *const BoxembedOps) -> Result<OpsConfig, Failure> {
    let Some(o) = p.as_ref() else {
        return Ok(OpsConfig::default());
    };
    let intersection = match o.intersection {
        BOXEMBED_INTERSECTION_HARD => IntersectionKind::Hard,
        BOXEMBED_INTERSECTION_GUMBEL => IntersectionKind::Gumbel,
        k => {
            return Err(fail(
                BoxembedStatus::InvalidArgument,
                format!("unknown intersection kind {k}"),
            ))
        }
    };
    let volume = match o.volume {
        BOXEMBED_VOLUME_HARD => VolumeKind::Hard,
        BOXEMBED_VOLUME_SOFT => VolumeKind::Soft,
        BOXEMBED_VOLUME_BESSEL_APPROX => VolumeKind::BesselApprox,
        k => {
            return Err(fail(
                BoxembedStatus::InvalidArgument,
                format!("unknown volume kind {k}"),
            ))
        }
    };
    let cfg = OpsConfig::new(intersection, o.intersection_temperature, volume, o.volume_temperature);
    cfg.validate()?;
    Ok(cfg)
}

fn check_entity(table: &EmbeddingTable, e: usize) -> Result<(), Failure> {
    if e >= table.num_entities() {
        return Err(Error::IndexOutOfRange {
            index: e,
            len: table.num_entities(),
        }
        .into());
    }
    Ok(())
}

fn into_handle(table: EmbeddingTable) -> *mut BoxembedTable {
    Box::into_raw(Box::new(BoxembedTable { inner: table }))
}

fn owned_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|e| fail(BoxembedStatus::InvalidArgument, e.to_string()))
}

/// Message of the last failing call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn boxembed_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn boxembed_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a table of `num_entities` uniformly initialized boxes of
/// dimension `dim`. `spec` may be NULL for the default ranges.
///
/// # Safety
/// `spec` must be NULL or point to a valid `BoxembedInitSpec`; `out` must be
/// a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn boxembed_table_init_uniform(
    num_entities: usize,
    dim: usize,
    kind: u32,
    spec: *const BoxembedInitSpec,
    seed: u64,
    out: *mut *mut BoxembedTable,
) -> BoxembedStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let mut init = InitSpec::default().with_seed(seed);
        if let Some(s) = spec.as_ref() {
            init.min_lo = s.min_lo;
            init.min_hi = s.min_hi;
            init.side_lo = s.side_lo;
            init.side_hi = s.side_hi;
        }
        let table = EmbeddingTable::init_uniform(num_entities, dim, param_kind(kind)?, &init)?;
        *out = into_handle(table);
        Ok(())
    })
}

/// Restores a table from the JSON written by [`boxembed_table_to_json`] or
/// by the CLI's `table.json`.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn boxembed_table_from_json(json: *const c_char, out: *mut *mut BoxembedTable) -> BoxembedStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let text = str_arg(json, "json")?;
        let table: EmbeddingTable =
            serde_json::from_str(text).map_err(|e| fail(BoxembedStatus::Parse, format!("table JSON: {e}")))?;
        *out = into_handle(table);
        Ok(())
    })
}

/// Serializes a table; free the string with [`boxembed_string_free`].
///
/// # Safety
/// `table` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn boxembed_table_to_json(table: *const BoxembedTable, out: *mut *mut c_char) -> BoxembedStatus {
    guard(|| {
        let table = table_ref(table)?;
        let out = out_ref(out, "out")?;
        let text = serde_json::to_string(table).map_err(|e| fail(BoxembedStatus::InvalidArgument, e.to_string()))?;
        *out = owned_string(text)?;
        Ok(())
    })
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must be NULL or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn boxembed_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Releases a table. NULL is ignored.
///
/// # Safety
/// `table` must be NULL or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn boxembed_table_free(table: *mut BoxembedTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Number of entities and box dimension of a table.
///
/// # Safety
/// `table` must be a live handle; the out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn boxembed_table_shape(
    table: *const BoxembedTable,
    num_entities: *mut usize,
    dim: *mut usize,
) -> BoxembedStatus {
    guard(|| {
        let table = table_ref(table)?;
        *out_ref(num_entities, "num_entities")? = table.num_entities();
        *out_ref(dim, "dim")? = table.dim();
        Ok(())
    })
}

/// Writes the realized corners of `entity` into `min` and `max`, each of
/// length `len`, which must equal the table dimension.
///
/// # Safety
/// `table` must be a live handle; `min` and `max` must each point to `len`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn boxembed_table_box(
    table: *const BoxembedTable,
    entity: usize,
    min: *mut f64,
    max: *mut f64,
    len: usize,
) -> BoxembedStatus {
    guard(|| {
        let table = table_ref(table)?;
        check_entity(table, entity)?;
        if len != table.dim() {
            return Err(fail(
                BoxembedStatus::ShapeMismatch,
                format!("buffers of length {len} for boxes of dimension {}", table.dim()),
            ));
        }
        if min.is_null() || max.is_null() {
            return Err(fail(BoxembedStatus::NullPointer, "corner buffer is NULL"));
        }
        let mut tape = Tape::new();
        let l = table.lookup(&mut tape, &[entity])?;
        std::slice::from_raw_parts_mut(min, len).copy_from_slice(l.boxes.min_values(&tape));
        std::slice::from_raw_parts_mut(max, len).copy_from_slice(l.boxes.max_values(&tape));
        Ok(())
    })
}

/// `ln P(head -> tail)`. `ops` may be NULL for the defaults.
///
/// # Safety
/// `table` must be a live handle; `ops` NULL or valid; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn boxembed_log_containment(
    table: *const BoxembedTable,
    head: usize,
    tail: usize,
    ops: *const BoxembedOps,
    out: *mut f64,
) -> BoxembedStatus {
    guard(|| {
        let table = table_ref(table)?;
        let cfg = ops_arg(ops)?;
        let out = out_ref(out, "out")?;
        check_entity(table, head)?;
        check_entity(table, tail)?;
        let mut tape = Tape::new();
        let h = table.lookup(&mut tape, &[head])?;
        let t = table.lookup(&mut tape, &[tail])?;
        let lp = ops::log_containment_prob(&mut tape, &h.boxes, &t.boxes, &cfg)?;
        *out = tape.value(lp).data()[0];
        Ok(())
    })
}

/// Natural-log volume of one entity's box under `ops` (NULL for defaults).
///
/// # Safety
/// `table` must be a live handle; `ops` NULL or valid; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn boxembed_log_volume(
    table: *const BoxembedTable,
    entity: usize,
    ops: *const BoxembedOps,
    out: *mut f64,
) -> BoxembedStatus {
    guard(|| {
        let table = table_ref(table)?;
        let cfg = ops_arg(ops)?;
        let out = out_ref(out, "out")?;
        check_entity(table, entity)?;
        let mut tape = Tape::new();
        let b = table.lookup(&mut tape, &[entity])?;
        let lv = ops::log_volume_with(&mut tape, &cfg, &b.boxes)?;
        *out = tape.value(lv).data()[0];
        Ok(())
    })
}

/// Intersects two explicit boxes of dimension `len` into `out_min`/`out_max`.
///
/// # Safety
/// All six buffers must hold `len` doubles; `ops` NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn boxembed_intersect(
    a_min: *const f64,
    a_max: *const f64,
    b_min: *const f64,
    b_max: *const f64,
    len: usize,
    ops: *const BoxembedOps,
    out_min: *mut f64,
    out_max: *mut f64,
) -> BoxembedStatus {
    guard(|| {
        let cfg = ops_arg(ops)?;
        let bufs = [a_min, a_max, b_min, b_max];
        if bufs.iter().any(|p| p.is_null()) || out_min.is_null() || out_max.is_null() {
            return Err(fail(BoxembedStatus::NullPointer, "coordinate buffer is NULL"));
        }
        let vec = |p: *const f64| Tensor::vector(std::slice::from_raw_parts(p, len).to_vec());
        let mut tape = Tape::new();
        let a = BoxTensor::constant(&mut tape, vec(a_min), vec(a_max))?;
        let b = BoxTensor::constant(&mut tape, vec(b_min), vec(b_max))?;
        let i = ops::intersect(&mut tape, cfg.intersection, &a, &b, cfg.intersection_temperature)?;
        std::slice::from_raw_parts_mut(out_min, len).copy_from_slice(i.min_values(&tape));
        std::slice::from_raw_parts_mut(out_max, len).copy_from_slice(i.max_values(&tape));
        Ok(())
    })
}

/// Trains on a `head<TAB>tail` edge list given as text. `config_json` is a
/// training configuration document (NULL or `"{}"` for defaults); the split
/// adds `closure_pct`% of non-reduction closure edges to training. On
/// success `out` receives the trained table and `test_f1` (if not NULL) the
/// test-split F1.
///
/// # Safety
/// String arguments must be NUL-terminated (or NULL where allowed); `out`
/// must be valid; `test_f1` NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn boxembed_train_edges(
    config_json: *const c_char,
    edges_tsv: *const c_char,
    closure_pct: u32,
    out: *mut *mut BoxembedTable,
    test_f1: *mut f64,
) -> BoxembedStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let cfg: TrainConfig = if config_json.is_null() {
            TrainConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?)
                .map_err(|e| fail(BoxembedStatus::Config, format!("training config: {e}")))?
        };
        let edges = str_arg(edges_tsv, "edges_tsv")?;
        let h = Hierarchy::parse(edges.as_bytes(), "<edges>")?;
        let ds = make_split(&h, closure_pct, cfg.neg_ratio, cfg.seed)?;
        let outcome = train(&cfg, &ds)?;
        if let Some(f1) = test_f1.as_mut() {
            *f1 = evaluate(&outcome.table, &ds.test, &cfg.ops, cfg.threshold)?.f1;
        }
        *out = into_handle(outcome.table);
        Ok(())
    })
}
