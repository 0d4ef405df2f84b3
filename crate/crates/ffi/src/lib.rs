//! C interface to the velocity-vector-field engine.
//!
//! Objects cross the boundary as opaque handles returned through `out`
//! parameters and released with the matching `*_free`. Every fallible
//! function returns a [`VvfStatus`]; on failure a message is kept per thread
//! and can be fetched with [`vvf_last_error`]. Out-parameters are written
//! only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use vvf_core::export::{decode_fields, ExportError, TensorStack, VvfFile};
use vvf_core::flowfield::integrate_streamline;
use vvf_core::lbm::bench::bench;
use vvf_core::lbm::{Schedule, SolverParams, TauMode};
use vvf_core::metrics::{huber_vec, HuberMode, HuberParams, MetricsError};
use vvf_core::pipeline::{process_sequence, PipelineConfig, PipelineError, DEFAULT_BETA};
use vvf_core::scenario::{Scenario, ScenarioError};
use vvf_core::scene::{SceneSequence, Vec2, FRAME_DT};

/// Result codes shared by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VvfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    CorruptFile = 4,
    ShapeMismatch = 5,
    Parse = 6,
    Solver = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VvfTauMode {
    /// The constant is the relaxation time.
    Literal = 0,
    /// The constant is the lattice viscosity.
    Viscosity = 1,
}

/// Field-solve settings; start from `vvf_solve_options_default`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VvfSolveOptions {
    /// A `VvfTauMode` value.
    pub tau_mode: u32,
    pub tau: f64,
    /// Bounced-back fraction at lane markings.
    pub beta: f64,
    /// m/s per step.
    pub conv_tol: f64,
    pub max_iters: u32,
    pub warm_start: bool,
    /// Solve frames concurrently.
    pub parallel: bool,
}

/// Observation frames and future path of one target vehicle.
pub struct VvfSequence(SceneSequence);

/// Contents of a VVF container.
pub struct VvfField(VvfFile);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(VvfStatus, String);

impl Failure {
    fn new(status: VvfStatus, message: impl Into<String>) -> Self {
        Self(status, message.into())
    }
}

impl From<ExportError> for Failure {
    fn from(e: ExportError) -> Self {
        let status = match &e {
            ExportError::Io(_) => VvfStatus::Io,
            ExportError::CorruptFile(_) => VvfStatus::CorruptFile,
            ExportError::ShapeMismatch(_) => VvfStatus::ShapeMismatch,
            ExportError::Csv(_) | ExportError::Format { .. } => VvfStatus::Parse,
        };
        Self(status, e.to_string())
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Self(VvfStatus::Parse, e.to_string())
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let status = match e {
            PipelineError::Solver(_) => VvfStatus::Solver,
            _ => VvfStatus::InvalidArgument,
        };
        Self(status, e.to_string())
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        let status = match e {
            MetricsError::LengthMismatch { .. } => VvfStatus::ShapeMismatch,
            _ => VvfStatus::InvalidArgument,
        };
        Self(status, e.to_string())
    }
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

/// Run `f`, turning errors and panics into a status and a stored message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> VvfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VvfStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {message}"));
            VvfStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::new(VvfStatus::NullPointer, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn utf8<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    non_null(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(VvfStatus::InvalidArgument, format!("`{name}` is not UTF-8")))
}

/// # Safety
/// `p` must be null or valid for reads of `len` elements.
unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message of the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn vvf_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vvf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn vvf_solve_options_default() -> VvfSolveOptions {
    let d = SolverParams::default();
    VvfSolveOptions {
        tau_mode: VvfTauMode::Viscosity as u32,
        tau: TauMode::DEFAULT_CONSTANT,
        beta: DEFAULT_BETA,
        conv_tol: d.conv_tol,
        max_iters: d.max_iters as u32,
        warm_start: d.warm_start,
        parallel: false,
    }
}

fn parse_scenario(text: &str) -> Result<SceneSequence, Failure> {
    let scenario: Scenario = text.parse()?;
    Ok(scenario.to_sequence()?)
}

/// Build a sequence from scenario-file text.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vvf_sequence_from_scenario(text: *const c_char, out: *mut *mut VvfSequence) -> VvfStatus {
    guard(|| {
        non_null(out, "out")?;
        let seq = parse_scenario(utf8(text, "text")?)?;
        *out = Box::into_raw(Box::new(VvfSequence(seq)));
        Ok(())
    })
}

/// Build a sequence from a scenario file on disk.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vvf_sequence_read_scenario(path: *const c_char, out: *mut *mut VvfSequence) -> VvfStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = utf8(path, "path")?;
        let text = std::fs::read_to_string(path).map_err(|e| Failure::new(VvfStatus::Io, format!("{path}: {e}")))?;
        let seq = parse_scenario(&text)?;
        *out = Box::into_raw(Box::new(VvfSequence(seq)));
        Ok(())
    })
}

/// Observation frames `h` and prediction steps `p`.
///
/// # Safety
/// `seq` must come from this library; `h` and `p` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn vvf_sequence_dims(seq: *const VvfSequence, h: *mut usize, p: *mut usize) -> VvfStatus {
    guard(|| {
        non_null(seq, "seq")?;
        non_null(h, "h")?;
        non_null(p, "p")?;
        *h = (*seq).0.h();
        *p = (*seq).0.p();
        Ok(())
    })
}

/// Future target path in its own frame as `x0, y0, x1, y1, ...`; `len`
/// must be at least `2 p`.
///
/// # Safety
/// `seq` must come from this library; `xy` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn vvf_sequence_truth(seq: *const VvfSequence, xy: *mut f64, len: usize) -> VvfStatus {
    guard(|| {
        non_null(seq, "seq")?;
        let truth = (*seq).0.tv_centric_truth().map_err(|e| Failure::new(VvfStatus::InvalidArgument, e.to_string()))?;
        write_points(&truth.points, xy, len)
    })
}

/// # Safety
/// `seq` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn vvf_sequence_free(seq: *mut VvfSequence) {
    if !seq.is_null() {
        drop(Box::from_raw(seq));
    }
}

/// Rasterize and solve every observation frame.
///
/// # Safety
/// `seq` must come from this library, `options` may be null for defaults,
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vvf_solve(
    seq: *const VvfSequence,
    options: *const VvfSolveOptions,
    out: *mut *mut VvfField,
) -> VvfStatus {
    guard(|| {
        non_null(seq, "seq")?;
        non_null(out, "out")?;
        let o = if options.is_null() { vvf_solve_options_default() } else { *options };
        let config = PipelineConfig {
            beta: o.beta,
            solver: SolverParams {
                tau_mode: match o.tau_mode {
                    m if m == VvfTauMode::Literal as u32 => TauMode::Literal { tau: o.tau },
                    m if m == VvfTauMode::Viscosity as u32 => TauMode::ViscosityDerived { nu: o.tau },
                    m => return Err(Failure::new(VvfStatus::InvalidArgument, format!("unknown tau mode {m}"))),
                },
                conv_tol: o.conv_tol,
                max_iters: o.max_iters as usize,
                warm_start: o.warm_start,
                schedule: if o.parallel { Schedule::Parallel } else { Schedule::Sequential },
                ..SolverParams::default()
            },
            ..PipelineConfig::default()
        };
        let products = process_sequence(&(*seq).0, &config)?;
        let file = VvfFile::from_frames(&products.occupancies(), &products.fields())?;
        *out = Box::into_raw(Box::new(VvfField(file)));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vvf_field_read(path: *const c_char, out: *mut *mut VvfField) -> VvfStatus {
    guard(|| {
        non_null(out, "out")?;
        let file = VvfFile::read(PathBuf::from(utf8(path, "path")?))?;
        *out = Box::into_raw(Box::new(VvfField(file)));
        Ok(())
    })
}

/// # Safety
/// `field` must come from this library and `path` be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vvf_field_write(field: *const VvfField, path: *const c_char) -> VvfStatus {
    guard(|| {
        non_null(field, "field")?;
        (*field).0.write(PathBuf::from(utf8(path, "path")?))?;
        Ok(())
    })
}

/// Array shape `(frames, channels, rows, cols)`.
///
/// # Safety
/// `field` must come from this library; `shape` must be valid for 4 writes.
#[no_mangle]
pub unsafe extern "C" fn vvf_field_shape(field: *const VvfField, shape: *mut usize) -> VvfStatus {
    guard(|| {
        non_null(field, "field")?;
        non_null(shape, "shape")?;
        let (f, c, r, k) = (*field).0.data.dim();
        std::slice::from_raw_parts_mut(shape, 4).copy_from_slice(&[f, c, r, k]);
        Ok(())
    })
}

/// Copy all values in file order into `data`, which must hold the product
/// of the shape.
///
/// # Safety
/// `field` must come from this library; `data` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn vvf_field_copy(field: *const VvfField, data: *mut f32, len: usize) -> VvfStatus {
    guard(|| {
        non_null(field, "field")?;
        let values = &(*field).0.data;
        if len < values.len() {
            return Err(Failure::new(
                VvfStatus::BufferTooSmall,
                format!("need {} values, buffer holds {len}", values.len()),
            ));
        }
        non_null(data, "data")?;
        let out = std::slice::from_raw_parts_mut(data, values.len());
        for (o, v) in out.iter_mut().zip(values.iter()) {
            *o = *v;
        }
        Ok(())
    })
}

/// Training tensors in the reconstructed layout as a one-frame container.
///
/// # Safety
/// `field` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vvf_field_to_tensors(field: *const VvfField, out: *mut *mut VvfField) -> VvfStatus {
    guard(|| {
        non_null(field, "field")?;
        non_null(out, "out")?;
        let stack = TensorStack::from_vvf(&(*field).0)?;
        *out = Box::into_raw(Box::new(VvfField(stack.to_vvf())));
        Ok(())
    })
}

/// Streamline from the target through the latest frame, `steps` points at
/// 0.2 s, written as `x0, y0, x1, y1, ...` relative to the start.
///
/// # Safety
/// `field` must come from this library; `xy` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn vvf_predict(field: *const VvfField, steps: usize, xy: *mut f64, len: usize) -> VvfStatus {
    guard(|| {
        non_null(field, "field")?;
        let frames = decode_fields(&(*field).0)?;
        let (_, latest) = frames
            .last()
            .ok_or_else(|| Failure::new(VvfStatus::ShapeMismatch, "field file has no frames"))?;
        let path = integrate_streamline(latest, Vec2::ZERO, FRAME_DT, steps)
            .map_err(|e| Failure::new(VvfStatus::InvalidArgument, e.to_string()))?;
        write_points(&path.points, xy, len)
    })
}

unsafe fn write_points(points: &[Vec2], xy: *mut f64, len: usize) -> Result<(), Failure> {
    if len < 2 * points.len() {
        return Err(Failure::new(
            VvfStatus::BufferTooSmall,
            format!("need {} values, buffer holds {len}", 2 * points.len()),
        ));
    }
    if points.is_empty() {
        return Ok(());
    }
    non_null(xy, "xy")?;
    let out = std::slice::from_raw_parts_mut(xy, 2 * points.len());
    for (pair, p) in out.chunks_exact_mut(2).zip(points) {
        pair[0] = p.x;
        pair[1] = p.y;
    }
    Ok(())
}

/// # Safety
/// `field` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn vvf_field_free(field: *mut VvfField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Huber loss of two stacked coordinate vectors of `len` values each.
/// `per_coordinate` selects element-wise averaging instead of one branch
/// for the whole vector.
///
/// # Safety
/// `pred` and `truth` must be valid for `len` reads, `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn vvf_huber_loss(
    pred: *const f64,
    truth: *const f64,
    len: usize,
    delta: f64,
    per_coordinate: bool,
    out: *mut f64,
) -> VvfStatus {
    guard(|| {
        non_null(out, "out")?;
        let params = HuberParams {
            delta,
            mode: if per_coordinate { HuberMode::PerCoordinate } else { HuberMode::Global },
        };
        *out = huber_vec(slice(pred, len, "pred")?, slice(truth, len, "truth")?, &params)?;
        Ok(())
    })
}

/// Single-threaded solver throughput on a `length x width` channel, in
/// million lattice updates per second.
///
/// # Safety
/// `mlups` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn vvf_bench(length: usize, width: usize, iterations: usize, mlups: *mut f64) -> VvfStatus {
    guard(|| {
        non_null(mlups, "mlups")?;
        if length < 16 || width < 16 || iterations == 0 {
            return Err(Failure::new(
                VvfStatus::InvalidArgument,
                "lattice must be at least 16x16 with one iteration",
            ));
        }
        *mlups = bench(length, width, iterations, &SolverParams::default(), 0).mlups;
        Ok(())
    })
}
