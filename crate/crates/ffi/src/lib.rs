//! C ABI over the `stnagnn` crate.
//!
//! Handles are opaque pointers created by `*_load` / `*_from_*` functions and
//! released with the matching `*_free`. Every fallible function returns a
//! [`StnStatus`]; on failure `stn_last_error` describes the most recent error
//! on the calling thread. Output buffers are caller-allocated and sized in
//! elements; a short buffer yields `STN_ERR_BUFFER`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use stnagnn::dataset::load_dataset;
use stnagnn::explain::attention_heatmap;
use stnagnn::graphbuild::{build_graph_instance, Edge, GraphConfig, GraphInstance};
use stnagnn::model::{check_params, positional_encoding, predict, ModelConfig, PeConfig, PreparedGraph};
use stnagnn::tensor::{ModelParams, Tensor};
use stnagnn::train::binary_auc;
use stnagnn::{Error, ErrorClass};

pub type StnStatus = i32;

pub const STN_OK: StnStatus = 0;
pub const STN_ERR_NULL: StnStatus = 1;
pub const STN_ERR_CONFIG: StnStatus = 2;
pub const STN_ERR_DATA: StnStatus = 3;
pub const STN_ERR_NUMERIC: StnStatus = 4;
pub const STN_ERR_IO: StnStatus = 5;
pub const STN_ERR_BUFFER: StnStatus = 6;
pub const STN_ERR_PANIC: StnStatus = 7;

/// Trained parameters plus the model configuration they belong to.
pub struct StnModel {
    params: ModelParams,
    cfg: ModelConfig,
}

/// One graph instance: T snapshots of `[N × d]` features and a shared edge set.
pub struct StnGraph {
    graph: GraphInstance,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

enum Failure {
    Null(&'static str),
    Buffer { need: usize, got: usize },
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

fn guard(f: impl FnOnce() -> Outcome) -> StnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => STN_OK,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            STN_ERR_NULL
        }
        Ok(Err(Failure::Buffer { need, got })) => {
            set_error(format!("output buffer holds {got} elements, {need} required"));
            STN_ERR_BUFFER
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            match (&e, e.class()) {
                (Error::Io { .. }, _) => STN_ERR_IO,
                (_, ErrorClass::Config) => STN_ERR_CONFIG,
                (_, ErrorClass::Data) => STN_ERR_DATA,
                (_, ErrorClass::Numeric) => STN_ERR_NUMERIC,
            }
        }
        Err(_) => {
            set_error("panic inside stnagnn");
            STN_ERR_PANIC
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> std::result::Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Core(Error::Config(format!("{what} is not valid UTF-8"))))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &'static str) -> std::result::Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &'static str) -> std::result::Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out(values: &[f64], out: *mut f64, len: usize) -> Outcome {
    if len < values.len() {
        return Err(Failure::Buffer {
            need: values.len(),
            got: len,
        });
    }
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    std::slice::from_raw_parts_mut(out, values.len()).copy_from_slice(values);
    Ok(())
}

fn parse_json<T: serde::de::DeserializeOwned + Default>(text: Option<&str>, what: &str) -> std::result::Result<T, Failure> {
    match text {
        None => Ok(T::default()),
        Some(t) => serde_json::from_str(t).map_err(|e| Failure::Core(Error::Config(format!("{what}: {e}")))),
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn stn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread; empty if none. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn stn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a checkpoint JSON. `model_config_json` may be NULL for the default
/// configuration; the parameter shapes must match it.
///
/// # Safety
/// String arguments must be NUL-terminated or NULL where allowed; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stn_model_load(
    checkpoint_path: *const c_char,
    model_config_json: *const c_char,
    out: *mut *mut StnModel,
) -> StnStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let path = str_arg(checkpoint_path, "checkpoint_path")?;
        let cfg_text = if model_config_json.is_null() {
            None
        } else {
            Some(str_arg(model_config_json, "model_config_json")?)
        };
        let cfg: ModelConfig = parse_json(cfg_text, "model config")?;
        cfg.validate()?;
        let params = ModelParams::load(Path::new(path))?;
        check_params(&cfg, &params)?;
        *out = Box::into_raw(Box::new(StnModel { params, cfg }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from `stn_model_load` and not be freed twice. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn stn_model_free(model: *mut StnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes `n_classes` logits into `logits_out`.
///
/// # Safety
/// Handles must be live; `logits_out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn stn_model_predict(
    model: *const StnModel,
    graph: *const StnGraph,
    logits_out: *mut f64,
    len: usize,
) -> StnStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let g = ref_arg(graph, "graph")?;
        let prep = PreparedGraph::new(&g.graph, &m.cfg)?;
        let logits = predict(&m.params, &m.cfg, &prep)?;
        write_out(&logits, logits_out, len)
    })
}

/// Attention row of query node `(t, j)` over all `T·N` nodes, snapshot-major.
///
/// # Safety
/// Handles must be live; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn stn_model_attention_row(
    model: *const StnModel,
    graph: *const StnGraph,
    t: usize,
    j: usize,
    out: *mut f64,
    len: usize,
) -> StnStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let g = ref_arg(graph, "graph")?;
        let prep = PreparedGraph::new(&g.graph, &m.cfg)?;
        let grid = attention_heatmap(&m.params, &m.cfg, &prep, (t, j))?;
        write_out(&grid.data, out, len)
    })
}

/// Builds a graph from raw arrays. `features` is `T·N·d` doubles, snapshot-major
/// then row-major; edges are `(edge_u[k], edge_v[k], edge_w[k])` with positive
/// weights and any endpoint order.
///
/// # Safety
/// Array pointers must hold the stated number of elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stn_graph_from_arrays(
    n_snapshots: usize,
    n_nodes: usize,
    feature_dim: usize,
    features: *const f64,
    n_edges: usize,
    edge_u: *const usize,
    edge_v: *const usize,
    edge_w: *const f64,
    out: *mut *mut StnGraph,
) -> StnStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let per = n_nodes
            .checked_mul(feature_dim)
            .ok_or_else(|| Error::Data("feature array size overflows".into()))?;
        let total = per
            .checked_mul(n_snapshots)
            .ok_or_else(|| Error::Data("feature array size overflows".into()))?;
        if total == 0 {
            return Err(Error::Data("graph needs at least one snapshot, node and feature".into()).into());
        }
        let feats = slice_arg(features, total, "features")?;
        let us = slice_arg(edge_u, n_edges, "edge_u")?;
        let vs = slice_arg(edge_v, n_edges, "edge_v")?;
        let ws = slice_arg(edge_w, n_edges, "edge_w")?;
        let snapshots = feats
            .chunks(per)
            .map(|c| Tensor::matrix(n_nodes, feature_dim, c.to_vec()))
            .collect::<stnagnn::Result<Vec<_>>>()?;
        let edges = (0..n_edges)
            .map(|k| Edge {
                u: us[k].min(vs[k]),
                v: us[k].max(vs[k]),
                weight: ws[k],
            })
            .collect();
        let graph = GraphInstance {
            snapshots,
            edges,
            class_label: 0,
            subject_id: String::new(),
            instance_id: String::new(),
            degenerate_features: 0,
        };
        graph.validate()?;
        *out = Box::into_raw(Box::new(StnGraph { graph }));
        Ok(())
    })
}

/// Loads one instance from a dataset directory and builds its graph.
/// `graph_config_json` may be NULL for defaults.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stn_graph_build_from_dataset(
    dataset_dir: *const c_char,
    instance_id: *const c_char,
    graph_config_json: *const c_char,
    out: *mut *mut StnGraph,
) -> StnStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let dir = str_arg(dataset_dir, "dataset_dir")?;
        let id = str_arg(instance_id, "instance_id")?;
        let cfg_text = if graph_config_json.is_null() {
            None
        } else {
            Some(str_arg(graph_config_json, "graph_config_json")?)
        };
        let cfg: GraphConfig = parse_json(cfg_text, "graph config")?;
        let data = load_dataset(Path::new(dir))?;
        let inst = data
            .instances
            .iter()
            .find(|i| i.instance_id == id)
            .ok_or_else(|| Error::Data(format!("instance '{id}' not in {dir}")))?;
        let graph = build_graph_instance(inst, &cfg)?;
        *out = Box::into_raw(Box::new(StnGraph { graph }));
        Ok(())
    })
}

/// Reports `(T, N, d)` of a graph.
///
/// # Safety
/// `graph` must be live; output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn stn_graph_shape(
    graph: *const StnGraph,
    n_snapshots: *mut usize,
    n_nodes: *mut usize,
    feature_dim: *mut usize,
) -> StnStatus {
    guard(|| {
        let g = ref_arg(graph, "graph")?;
        if n_snapshots.is_null() || n_nodes.is_null() || feature_dim.is_null() {
            return Err(Failure::Null("shape outputs"));
        }
        *n_snapshots = g.graph.n_snapshots();
        *n_nodes = g.graph.n_nodes();
        *feature_dim = g.graph.feature_dim();
        Ok(())
    })
}

/// # Safety
/// `graph` must come from a `stn_graph_*` constructor and not be freed twice. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn stn_graph_free(graph: *mut StnGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Spatio-temporal sinusoidal encoding, `T·N·d_model` doubles in `[T][N][d]` order.
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn stn_positional_encoding(
    d_model: usize,
    n_nodes: usize,
    n_snapshots: usize,
    out: *mut f64,
    len: usize,
) -> StnStatus {
    guard(|| {
        let pe = positional_encoding(&PeConfig::new(d_model, n_nodes, n_snapshots))?;
        write_out(&pe.data, out, len)
    })
}

/// Mann-Whitney AUC of `scores` against `positive` flags (non-zero = positive).
///
/// # Safety
/// `scores` and `positive` must hold `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stn_auc(scores: *const f64, positive: *const u8, n: usize, out: *mut f64) -> StnStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let s = slice_arg(scores, n, "scores")?;
        let p: Vec<bool> = slice_arg(positive, n, "positive")?.iter().map(|&b| b != 0).collect();
        *out = binary_auc(s, &p)?;
        Ok(())
    })
}
