//! C interface to the eqopt equalizer designer.
//!
//! Scenes and design results are opaque handles created and released
//! through this API. Every entry point returns an [`EqoptStatus`]; on
//! failure [`eqopt_last_error`] describes what went wrong on the calling
//! thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use eqopt::baselines::{fir_ops_per_sample, sos_ops_per_sample};
use eqopt::filter::design_peaking_section;
use eqopt::pipeline::{write_run, Design, DesignConfig, Outcome, Prepared, SceneSource};
use eqopt::scene::{load_scene, synth_scene, Scene, SynthSpec};
use eqopt::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EqoptStatus {
    Ok = 0,
    /// Parameters or data outside the accepted domain.
    DomainError = 1,
    /// Null pointer, bad index, undersized buffer or invalid UTF-8.
    InvalidArgument = 2,
    Io = 3,
    /// Malformed JSON, coefficient or tap text.
    Parse = 4,
    /// An internal panic was caught at the boundary.
    Panic = 5,
}

/// Opaque acoustic scene.
pub struct EqoptScene {
    scene: Scene,
    description: String,
}

/// Opaque set of design results for one scene.
pub struct EqoptDesign {
    config: DesignConfig,
    prepared: Prepared,
    outcomes: Vec<Outcome>,
    labels: Vec<CString>,
}

struct Failure {
    status: EqoptStatus,
    message: String,
}

impl Failure {
    fn arg(message: impl Into<String>) -> Self {
        Failure {
            status: EqoptStatus::InvalidArgument,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Io { .. } | Error::Wav { .. } => EqoptStatus::Io,
            Error::Json { .. } | Error::Parse { .. } => EqoptStatus::Parse,
            _ => EqoptStatus::DomainError,
        };
        Failure {
            status,
            message: e.to_string(),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EqoptStatus {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|payload| {
        let message = payload
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| payload.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "unknown panic".into());
        Err(Failure {
            status: EqoptStatus::Panic,
            message: format!("panic: {message}"),
        })
    });
    match outcome {
        Ok(()) => {
            set_last_error("");
            EqoptStatus::Ok
        }
        Err(f) => {
            set_last_error(&f.message);
            f.status
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::arg(format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::arg(format!("{name} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::arg(format!("{name} is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::arg(format!("{name} is null")))
}

fn outcome(design: &EqoptDesign, index: usize) -> Result<&Outcome, Failure> {
    design.outcomes.get(index).ok_or_else(|| {
        Failure::arg(format!(
            "result index {index} out of range ({} results)",
            design.outcomes.len()
        ))
    })
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn eqopt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Generates a synthetic room scene with `sources` loudspeakers and `mics`
/// microphones. Other settings take their defaults.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn eqopt_scene_synth(
    sources: usize,
    mics: usize,
    seed: u64,
    out: *mut *mut EqoptScene,
) -> EqoptStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let source = SceneSource::Synth(SynthSpec::new(sources, mics, seed));
        let scene = source.load()?;
        *out = Box::into_raw(Box::new(EqoptScene {
            scene,
            description: source.describe(),
        }));
        Ok(())
    })
}

/// Generates a synthetic scene from a JSON spec (same keys as the command
/// line `--synth` file).
///
/// # Safety
/// `spec_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn eqopt_scene_synth_json(
    spec_json: *const c_char,
    out: *mut *mut EqoptScene,
) -> EqoptStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let text = str_arg(spec_json, "spec_json")?;
        let spec: SynthSpec = serde_json::from_str(text).map_err(|e| Failure {
            status: EqoptStatus::Parse,
            message: format!("synthetic scene spec: {e}"),
        })?;
        let scene = synth_scene(&spec)?;
        *out = Box::into_raw(Box::new(EqoptScene {
            scene,
            description: SceneSource::Synth(spec).describe(),
        }));
        Ok(())
    })
}

/// Loads a scene from a manifest JSON file listing WAV impulse responses.
///
/// # Safety
/// `manifest_path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn eqopt_scene_load(
    manifest_path: *const c_char,
    out: *mut *mut EqoptScene,
) -> EqoptStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = PathBuf::from(str_arg(manifest_path, "manifest_path")?);
        let scene = load_scene(&path)?;
        *out = Box::into_raw(Box::new(EqoptScene {
            scene,
            description: SceneSource::Manifest(path).describe(),
        }));
        Ok(())
    })
}

/// Writes the number of sources and mics of a scene.
///
/// # Safety
/// `scene` must be a live handle; the out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn eqopt_scene_shape(
    scene: *const EqoptScene,
    n_sources: *mut usize,
    n_mics: *mut usize,
) -> EqoptStatus {
    guard(|| {
        let scene = ref_arg(scene, "scene")?;
        *out_arg(n_sources, "n_sources")? = scene.scene.n_sources();
        *out_arg(n_mics, "n_mics")? = scene.scene.n_mics();
        Ok(())
    })
}

/// Releases a scene. Null is ignored.
///
/// # Safety
/// `scene` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn eqopt_scene_free(scene: *mut EqoptScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Runs the designers selected by `config_json` (a design config object;
/// null or "{}" means BiasNet with default settings). The scene handle is
/// not consumed.
///
/// # Safety
/// `scene` must be a live handle, `config_json` null or a NUL-terminated
/// string, and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn eqopt_design(
    scene: *const EqoptScene,
    config_json: *const c_char,
    out: *mut *mut EqoptDesign,
) -> EqoptStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let scene = ref_arg(scene, "scene")?;
        let config: DesignConfig = if config_json.is_null() {
            DesignConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?).map_err(|e| Failure {
                status: EqoptStatus::Parse,
                message: format!("design config: {e}"),
            })?
        };
        if config.methods.is_empty() {
            return Err(Failure::arg("no design method selected"));
        }
        let prepared = Prepared::new(
            &scene.scene,
            scene.description.clone(),
            config.gamma2_override,
            config.sigma_db_factor,
        )?;
        let mut outcomes = Vec::new();
        for &m in &config.methods {
            outcomes.extend(prepared.run(m, &config)?);
        }
        let labels = outcomes
            .iter()
            .map(|o| CString::new(o.label.clone()).unwrap_or_default())
            .collect();
        *out = Box::into_raw(Box::new(EqoptDesign {
            config,
            prepared,
            outcomes,
            labels,
        }));
        Ok(())
    })
}

/// Number of results (one per method, one per FIR length for FD).
///
/// # Safety
/// `design` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn eqopt_design_count(design: *const EqoptDesign) -> usize {
    design.as_ref().map_or(0, |d| d.outcomes.len())
}

/// Label of result `index` ("biasnet", "dsm", "fd1024", ...), or null when
/// out of range. Owned by the design handle.
///
/// # Safety
/// `design` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn eqopt_design_label(design: *const EqoptDesign, index: usize) -> *const c_char {
    design
        .as_ref()
        .and_then(|d| d.labels.get(index))
        .map_or(ptr::null(), |l| l.as_ptr())
}

/// Mic-averaged band MSE and spectral flatness of result `index`.
///
/// # Safety
/// `design` must be a live handle; the out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn eqopt_design_metrics(
    design: *const EqoptDesign,
    index: usize,
    mse: *mut f64,
    sigma: *mut f64,
) -> EqoptStatus {
    guard(|| {
        let o = outcome(ref_arg(design, "design")?, index)?;
        *out_arg(mse, "mse")? = o.report.mse_avg;
        *out_arg(sigma, "sigma")? = o.report.sigma_avg;
        Ok(())
    })
}

/// Copies the filter of `source` from result `index` into `buf`.
///
/// IIR results are laid out as the channel gain in dB followed by
/// `b0 b1 b2 a0 a1 a2` per section; FIR results are the taps. `*len`
/// receives the required length; when `capacity` is smaller nothing is
/// copied and `EQOPT_STATUS_INVALID_ARGUMENT` is returned, so a call with
/// a null buffer and zero capacity queries the size.
///
/// # Safety
/// `design` must be a live handle, `buf` valid for `capacity` writes (or
/// null with zero capacity) and `len` valid.
#[no_mangle]
pub unsafe extern "C" fn eqopt_design_filter(
    design: *const EqoptDesign,
    index: usize,
    source: usize,
    buf: *mut f64,
    capacity: usize,
    len: *mut usize,
) -> EqoptStatus {
    guard(|| {
        let d = ref_arg(design, "design")?;
        let o = outcome(d, index)?;
        let len = out_arg(len, "len")?;
        let values: Vec<f64> = match &o.design {
            Design::Iir { equalizers, .. } => {
                let eq = equalizers
                    .get(source)
                    .ok_or_else(|| Failure::arg(format!("source {source} out of range")))?;
                let c = eq.cascade(d.prepared.scene.fs)?;
                std::iter::once(c.gain_db)
                    .chain(c.sections.iter().flat_map(|s| [s.b0, s.b1, s.b2, s.a0, s.a1, s.a2]))
                    .collect()
            }
            Design::Fir { filters } => filters
                .get(source)
                .ok_or_else(|| Failure::arg(format!("source {source} out of range")))?
                .taps
                .clone(),
        };
        *len = values.len();
        if capacity < values.len() {
            return Err(Failure::arg(format!(
                "buffer holds {capacity} values, {} needed",
                values.len()
            )));
        }
        if buf.is_null() {
            return Err(Failure::arg("buf is null"));
        }
        std::slice::from_raw_parts_mut(buf, values.len()).copy_from_slice(&values);
        Ok(())
    })
}

/// Nonzero when result `index` is an FIR design; zero for IIR designs or a
/// bad index.
///
/// # Safety
/// `design` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn eqopt_design_is_fir(design: *const EqoptDesign, index: usize) -> i32 {
    design
        .as_ref()
        .and_then(|d| d.outcomes.get(index))
        .map_or(0, |o| matches!(o.design, Design::Fir { .. }) as i32)
}

/// Writes the full run directory (config, reports, summary, coefficients).
///
/// # Safety
/// `design` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn eqopt_design_write(design: *const EqoptDesign, dir: *const c_char) -> EqoptStatus {
    guard(|| {
        let d = ref_arg(design, "design")?;
        let dir = PathBuf::from(str_arg(dir, "dir")?);
        write_run(&dir, &d.config, &d.prepared, &d.outcomes)?;
        Ok(())
    })
}

/// Releases a design. Null is ignored.
///
/// # Safety
/// `design` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn eqopt_design_free(design: *mut EqoptDesign) {
    if !design.is_null() {
        drop(Box::from_raw(design));
    }
}

/// Peaking biquad coefficients `b0 b1 b2 a0 a1 a2` (a0 = 1) into `out[6]`.
///
/// # Safety
/// `out` must be valid for 6 writes.
#[no_mangle]
pub unsafe extern "C" fn eqopt_peaking_section(
    fc: f64,
    q: f64,
    gain_db: f64,
    fs: f64,
    out: *mut f64,
) -> EqoptStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::arg("out is null"));
        }
        let c = design_peaking_section(fc, q, gain_db, fs)?;
        std::slice::from_raw_parts_mut(out, 6).copy_from_slice(&[c.b0, c.b1, c.b2, c.a0, c.a1, c.a2]);
        Ok(())
    })
}

/// Multiply-adds per output sample of a direct-form FIR of `len` taps.
#[no_mangle]
pub extern "C" fn eqopt_fir_ops_per_sample(len: usize) -> usize {
    fir_ops_per_sample(len)
}

/// Operations per output sample of a cascade of `sections` biquads.
#[no_mangle]
pub extern "C" fn eqopt_sos_ops_per_sample(sections: usize) -> usize {
    sos_ops_per_sample(sections)
}
