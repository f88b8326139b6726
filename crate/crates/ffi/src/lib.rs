//! C ABI over the graphedit library.
//!
//! Graphs are opaque `GeGraph` handles owned by the caller and released with
//! `ge_graph_free`. Every fallible call returns a `GeStatus`; on failure the
//! message is available from `ge_last_error` on the same thread. Strings
//! returned through out-parameters are released with `ge_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use graphedit::dataset::{self, DatasetManifest, SyntheticSpec};
use graphedit::graph::{inject_noise, TextGraph};
use graphedit::llm::{build_pair_prompt, oracle_answer, parse_verdict, OracleConfig};
use graphedit::pipeline::{result_json, run_all, ExperimentConfig};

/// Opaque graph handle.
pub struct GeGraph {
    inner: TextGraph,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    /// The output buffer is too small; the required length was written.
    BufferTooSmall = 5,
    /// The response contained no decision word.
    ParseFailure = 6,
    Pipeline = 7,
    Panic = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(GeStatus, String);

impl Failure {
    fn new(status: GeStatus, msg: impl ToString) -> Self {
        Self(status, msg.to_string())
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> GeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GeStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            GeStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(GeStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(GeStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn graph_arg<'a>(g: *const GeGraph) -> Result<&'a TextGraph, Failure> {
    g.as_ref()
        .map(|g| &g.inner)
        .ok_or_else(|| Failure::new(GeStatus::NullPointer, "graph handle is null"))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::new(GeStatus::NullPointer, format!("{name} is null")))
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure::new(GeStatus::InvalidArgument, "string contains an interior NUL"))
}

fn boxed(g: TextGraph) -> *mut GeGraph {
    Box::into_raw(Box::new(GeGraph { inner: g }))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ge_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ge_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Planted-partition graph with default text settings.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ge_graph_synthetic(
    n: usize,
    num_classes: usize,
    p_in: f64,
    p_out: f64,
    seed: u64,
    out: *mut *mut GeGraph,
) -> GeStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let spec = SyntheticSpec {
            n,
            num_classes,
            p_in,
            p_out,
            seed,
            ..Default::default()
        };
        let g = dataset::generate_synthetic(&spec).map_err(|e| Failure::new(GeStatus::InvalidArgument, e))?;
        *out = boxed(g);
        Ok(())
    })
}

/// Loads a graph saved with `ge_graph_save`.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ge_graph_load(dir: *const c_char, out: *mut *mut GeGraph) -> GeStatus {
    guard(|| {
        let dir = str_arg(dir, "dir")?;
        let out = out_arg(out, "out")?;
        let g = dataset::load_graph(Path::new(dir)).map_err(|e| Failure::new(GeStatus::Io, e))?;
        *out = boxed(g);
        Ok(())
    })
}

/// Loads a dataset described by a TOML manifest.
///
/// # Safety
/// `manifest` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ge_graph_load_manifest(manifest: *const c_char, out: *mut *mut GeGraph) -> GeStatus {
    guard(|| {
        let path = str_arg(manifest, "manifest")?;
        let out = out_arg(out, "out")?;
        let m = DatasetManifest::from_file(Path::new(path)).map_err(|e| Failure::new(GeStatus::Io, e))?;
        let g = dataset::load_dataset(&m).map_err(|e| Failure::new(GeStatus::Io, e))?;
        *out = boxed(g);
        Ok(())
    })
}

/// # Safety
/// `g` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ge_graph_save(g: *const GeGraph, dir: *const c_char) -> GeStatus {
    guard(|| {
        let g = graph_arg(g)?;
        let dir = str_arg(dir, "dir")?;
        dataset::save_graph(g, Path::new(dir)).map_err(|e| Failure::new(GeStatus::Io, e))
    })
}

/// Node count; 0 for a null handle.
///
/// # Safety
/// `g` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ge_graph_num_nodes(g: *const GeGraph) -> usize {
    g.as_ref().map_or(0, |g| g.inner.num_nodes())
}

/// Undirected edge count; 0 for a null handle.
///
/// # Safety
/// `g` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ge_graph_num_edges(g: *const GeGraph) -> usize {
    g.as_ref().map_or(0, |g| g.inner.num_edges())
}

/// Writes the label of node `i` into `out`.
///
/// # Safety
/// `g` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ge_graph_label(g: *const GeGraph, i: usize, out: *mut usize) -> GeStatus {
    guard(|| {
        let g = graph_arg(g)?;
        let out = out_arg(out, "out")?;
        let node = g.node(i).map_err(|e| Failure::new(GeStatus::InvalidArgument, e))?;
        *out = node.label;
        Ok(())
    })
}

/// Copies edges as `(lo, hi)` pairs, sorted, into `buf` (`2 * num_edges`
/// entries). `out_len` receives the number of entries required; when
/// `capacity` is smaller nothing is copied and `BUFFER_TOO_SMALL` is returned.
///
/// # Safety
/// `buf` must hold `capacity` writable entries (it may be null when
/// `capacity` is 0); `out_len` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ge_graph_copy_edges(g: *const GeGraph, buf: *mut usize, capacity: usize, out_len: *mut usize) -> GeStatus {
    guard(|| {
        let g = graph_arg(g)?;
        let out_len = out_arg(out_len, "out_len")?;
        let needed = 2 * g.num_edges();
        *out_len = needed;
        if capacity < needed {
            return Err(Failure::new(
                GeStatus::BufferTooSmall,
                format!("edge buffer holds {capacity} entries, {needed} needed"),
            ));
        }
        if needed == 0 {
            return Ok(());
        }
        if buf.is_null() {
            return Err(Failure::new(GeStatus::NullPointer, "buf is null"));
        }
        let dst = std::slice::from_raw_parts_mut(buf, needed);
        for (slot, e) in dst.chunks_exact_mut(2).zip(g.edges()) {
            slot[0] = e.lo();
            slot[1] = e.hi();
        }
        Ok(())
    })
}

/// New graph with `floor(rate * |E|)` random non-edges added.
///
/// # Safety
/// `g` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ge_graph_inject_noise(g: *const GeGraph, rate: f64, seed: u64, out: *mut *mut GeGraph) -> GeStatus {
    guard(|| {
        let g = graph_arg(g)?;
        let out = out_arg(out, "out")?;
        let noisy = inject_noise(g, rate, seed).map_err(|e| Failure::new(GeStatus::InvalidArgument, e))?;
        *out = boxed(noisy);
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `g` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ge_graph_free(g: *mut GeGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Pair prompt with node `i` as the first paper.
///
/// # Safety
/// `g` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ge_build_pair_prompt(g: *const GeGraph, i: usize, j: usize, out: *mut *mut c_char) -> GeStatus {
    guard(|| {
        let g = graph_arg(g)?;
        let out = out_arg(out, "out")?;
        let p = build_pair_prompt(g, i, j).map_err(|e| Failure::new(GeStatus::InvalidArgument, e))?;
        *out = into_c_string(p.prompt_text)?;
        Ok(())
    })
}

/// Parses a free-text answer. `out_same` receives 1 or 0; `out_category`
/// receives the category index or -1.
///
/// # Safety
/// `raw` must be a NUL-terminated string, `categories` an array of
/// `num_categories` NUL-terminated strings, and both outputs valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ge_parse_verdict(
    raw: *const c_char,
    categories: *const *const c_char,
    num_categories: usize,
    out_same: *mut i32,
    out_category: *mut i64,
) -> GeStatus {
    guard(|| {
        let raw = str_arg(raw, "raw")?;
        let out_same = out_arg(out_same, "out_same")?;
        let out_category = out_arg(out_category, "out_category")?;
        let cats = if num_categories == 0 {
            Vec::new()
        } else {
            if categories.is_null() {
                return Err(Failure::new(GeStatus::NullPointer, "categories is null"));
            }
            std::slice::from_raw_parts(categories, num_categories)
                .iter()
                .map(|&c| str_arg(c, "category").map(str::to_string))
                .collect::<Result<Vec<_>, _>>()?
        };
        let v = parse_verdict(raw, &cats).map_err(|e| Failure::new(GeStatus::ParseFailure, e))?;
        *out_same = i32::from(v.same_category);
        *out_category = v.category.map_or(-1, |c| c as i64);
        Ok(())
    })
}

/// Label-oracle answer for the pair `(i, j)`.
///
/// # Safety
/// `g` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ge_oracle_answer(
    g: *const GeGraph,
    i: usize,
    j: usize,
    flip_rate: f64,
    category_error_rate: f64,
    seed: u64,
    out: *mut *mut c_char,
) -> GeStatus {
    guard(|| {
        let g = graph_arg(g)?;
        let out = out_arg(out, "out")?;
        if i >= g.num_nodes() || j >= g.num_nodes() {
            return Err(Failure::new(GeStatus::InvalidArgument, format!("node out of range 0..{}", g.num_nodes())));
        }
        let cfg = OracleConfig {
            flip_rate,
            category_error_rate,
            seed,
        };
        let answer = oracle_answer(g, i, j, &cfg).map_err(|e| Failure::new(GeStatus::InvalidArgument, e))?;
        *out = into_c_string(answer)?;
        Ok(())
    })
}

/// Runs the full pipeline from a TOML configuration and returns the result
/// JSON. Artifacts are written to the configured output directory.
///
/// # Safety
/// `config_toml` must be a NUL-terminated string and `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ge_run_experiment(config_toml: *const c_char, out_json: *mut *mut c_char) -> GeStatus {
    guard(|| {
        let text = str_arg(config_toml, "config_toml")?;
        let out = out_arg(out_json, "out_json")?;
        let cfg = ExperimentConfig::from_toml(text).map_err(|e| Failure::new(GeStatus::InvalidArgument, e))?;
        let result = run_all(&cfg).map_err(|e| Failure::new(GeStatus::Pipeline, e))?;
        *out = into_c_string(result_json(&result))?;
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ge_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
