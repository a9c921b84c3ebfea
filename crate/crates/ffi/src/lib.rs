//! C ABI for loading trained model bundles and running single-plot
//! inference.
//!
//! Conventions: every function returns a [`StrataStatus`]; results travel
//! through out-pointers; models are opaque handles created by
//! [`strata_model_load`] and released by [`strata_model_free`].  On any
//! failure a thread-local message is set, readable via
//! [`strata_last_error`].  Point buffers are row-major `n × 9` doubles per
//! [`STRATA_POINT_DIM`]: x y z red green blue nir intensity return_number.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use libc::{c_char, c_int};

use strata_core::baselines::predict_direct;
use strata_core::plotio::{center_points, Plot, RawPoint};
use strata_core::train::{infer, load_model, SavedModel, TrainError};

/// Width of one point row in [`strata_infer_points`] buffers.
pub const STRATA_POINT_DIM: usize = 9;

/// Result of every call in this interface.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StrataStatus {
    /// Success.
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument value was out of contract (sizes, counts, radius).
    InvalidArgument = 2,
    /// Input data failed validation (malformed file, bad point values).
    InvalidData = 3,
    /// The filesystem refused a read or write.
    IoError = 4,
    /// A computation produced non-finite values.
    NumericError = 5,
    /// An internal invariant failed.
    InternalError = 6,
}

/// Opaque handle to a loaded model bundle.
pub struct StrataModel {
    inner: SavedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap());
}

fn fail(status: StrataStatus, msg: &str) -> StrataStatus {
    set_error(msg);
    status
}

fn classify(e: &TrainError) -> StrataStatus {
    match e {
        TrainError::Io(_) => StrataStatus::IoError,
        TrainError::NonFiniteLoss { .. } => StrataStatus::NumericError,
        TrainError::Net(strata_core::pointnet::NetError::NonFinite(_)) => {
            StrataStatus::NumericError
        }
        TrainError::Gamma(strata_core::gamma::GammaError::NonFinite(_)) => {
            StrataStatus::NumericError
        }
        TrainError::Gamma(strata_core::gamma::GammaError::Io(_)) => StrataStatus::IoError,
        _ => StrataStatus::InvalidData,
    }
}

fn guard<F: FnOnce() -> StrataStatus>(f: F) -> StrataStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(StrataStatus::InternalError, "internal panic"),
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn strata_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message describing the most recent failure on this thread.
///
/// The pointer stays valid until the next failing call on the same thread.
/// Never null; empty string when no failure has occurred.
#[no_mangle]
pub extern "C" fn strata_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a model bundle directory.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` must point to
/// writable storage for one pointer.  On success `*out` owns the model and
/// must be released with [`strata_model_free`].
#[no_mangle]
pub unsafe extern "C" fn strata_model_load(
    path: *const c_char,
    out: *mut *mut StrataModel,
) -> StrataStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(StrataStatus::NullPointer, "path and out must be non-null");
        }
        let path = match unsafe { CStr::from_ptr(path) }.to_str() {
            Ok(s) => s,
            Err(_) => return fail(StrataStatus::InvalidArgument, "path is not valid UTF-8"),
        };
        match load_model(Path::new(path)) {
            Ok(model) => {
                unsafe { *out = Box::into_raw(Box::new(StrataModel { inner: model })) };
                StrataStatus::Ok
            }
            Err(e) => fail(classify(&e), &e.to_string()),
        }
    })
}

/// Releases a model returned by [`strata_model_load`].
///
/// # Safety
/// `model` must be null or a pointer previously returned by
/// [`strata_model_load`] that has not been freed; it must not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn strata_model_free(model: *mut StrataModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Model kind: 0 = occupancy (has rasters), 1 = direct regression, −1 on a
/// null handle.
///
/// # Safety
/// `model` must be null or a live handle from [`strata_model_load`].
#[no_mangle]
pub unsafe extern "C" fn strata_model_kind(model: *const StrataModel) -> c_int {
    if model.is_null() {
        return -1;
    }
    match unsafe { &(*model).inner } {
        SavedModel::Occupancy(_) => 0,
        SavedModel::Direct(_) => 1,
    }
}

/// Raster side length of an occupancy model, 0 for direct-regression
/// models or a null handle.
///
/// # Safety
/// `model` must be null or a live handle from [`strata_model_load`].
#[no_mangle]
pub unsafe extern "C" fn strata_raster_size(model: *const StrataModel) -> usize {
    if model.is_null() {
        return 0;
    }
    match unsafe { &(*model).inner } {
        SavedModel::Occupancy(m) => m.raster_size,
        SavedModel::Direct(_) => 0,
    }
}

/// Builds a validated plot from a raw point buffer; clouds in absolute
/// coordinates are re-centred on their quantized centroid exactly like the
/// file parser, and clouds already in the plot frame pass through as-is.
fn plot_from_buffer(points: &[f64], n: usize, radius: f64) -> Result<Plot, (StrataStatus, String)> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err((StrataStatus::InvalidArgument, "radius must be positive and finite".into()));
    }
    let mut raw = Vec::with_capacity(n);
    for (i, row) in points.chunks_exact(STRATA_POINT_DIM).enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err((StrataStatus::InvalidData, format!("point {i}: non-finite value")));
        }
        let rn = row[8];
        if !(rn >= 1.0 && rn.fract() == 0.0 && rn <= u32::MAX as f64) {
            return Err((
                StrataStatus::InvalidData,
                format!("point {i}: return_number must be a positive integer, got {rn}"),
            ));
        }
        raw.push(RawPoint {
            x: row[0],
            y: row[1],
            z: row[2],
            red: row[3],
            green: row[4],
            blue: row[5],
            nir: row[6],
            intensity: row[7],
            return_number: rn as u32,
        });
    }
    center_points(&mut raw, radius);
    for (i, p) in raw.iter().enumerate() {
        if p.x.hypot(p.y) > radius + 1e-9 {
            return Err((
                StrataStatus::InvalidData,
                format!("point {i} lies outside the plot radius"),
            ));
        }
    }
    Ok(Plot { plot_id: "ffi".into(), radius, points: raw, z_norm: None, labels: None })
}

fn occupancy_of(model: &SavedModel, plot: &Plot) -> Result<[f64; 3], (StrataStatus, String)> {
    match model {
        SavedModel::Occupancy(m) => infer(m, plot)
            .map(|inf| inf.occupancy.as_array())
            .map_err(|e| (classify(&e), e.to_string())),
        SavedModel::Direct(m) => predict_direct(m, plot)
            .map(|(occ, _)| occ.as_array())
            .map_err(|e| (classify(&e), e.to_string())),
    }
}

/// Predicts the three stratum ratios from an in-memory point buffer.
///
/// `points` holds `n` rows of [`STRATA_POINT_DIM`] doubles; `out_occupancy`
/// receives lower, medium, higher.
///
/// # Safety
/// `model` must be a live handle; `points` must reference
/// `n * STRATA_POINT_DIM` readable doubles; `out_occupancy` must reference
/// three writable doubles.
#[no_mangle]
pub unsafe extern "C" fn strata_infer_points(
    model: *const StrataModel,
    points: *const f64,
    n: usize,
    radius: f64,
    out_occupancy: *mut f64,
) -> StrataStatus {
    guard(|| {
        if model.is_null() || points.is_null() || out_occupancy.is_null() {
            return fail(StrataStatus::NullPointer, "model, points, and out must be non-null");
        }
        if n == 0 {
            return fail(StrataStatus::InvalidArgument, "need at least one point");
        }
        let buffer = unsafe { std::slice::from_raw_parts(points, n * STRATA_POINT_DIM) };
        let plot = match plot_from_buffer(buffer, n, radius) {
            Ok(p) => p,
            Err((status, msg)) => return fail(status, &msg),
        };
        match occupancy_of(unsafe { &(*model).inner }, &plot) {
            Ok(occ) => {
                unsafe { std::slice::from_raw_parts_mut(out_occupancy, 3) }.copy_from_slice(&occ);
                StrataStatus::Ok
            }
            Err((status, msg)) => fail(status, &msg),
        }
    })
}

/// Predicts the three stratum ratios for a plot file on disk.
///
/// # Safety
/// `model` must be a live handle; `path` must be a NUL-terminated UTF-8
/// string; `out_occupancy` must reference three writable doubles.
#[no_mangle]
pub unsafe extern "C" fn strata_infer_file(
    model: *const StrataModel,
    path: *const c_char,
    radius: f64,
    out_occupancy: *mut f64,
) -> StrataStatus {
    guard(|| {
        if model.is_null() || path.is_null() || out_occupancy.is_null() {
            return fail(StrataStatus::NullPointer, "model, path, and out must be non-null");
        }
        let path = match unsafe { CStr::from_ptr(path) }.to_str() {
            Ok(s) => s,
            Err(_) => return fail(StrataStatus::InvalidArgument, "path is not valid UTF-8"),
        };
        let plot = match strata_core::plotio::read_plot_file(Path::new(path), radius) {
            Ok(p) => p,
            Err(e) => {
                let status = match &e {
                    strata_core::plotio::PlotIoError::Io(_) => StrataStatus::IoError,
                    _ => StrataStatus::InvalidData,
                };
                return fail(status, &e.to_string());
            }
        };
        match occupancy_of(unsafe { &(*model).inner }, &plot) {
            Ok(occ) => {
                unsafe { std::slice::from_raw_parts_mut(out_occupancy, 3) }.copy_from_slice(&occ);
                StrataStatus::Ok
            }
            Err((status, msg)) => fail(status, &msg),
        }
    })
}

/// Predicts per-pixel occupancy rasters from an in-memory point buffer
/// (occupancy models only).
///
/// `out_rasters` receives `3 * K * K` doubles (stratum-major: all lower
/// pixels row-major north-up, then medium, then higher), where `K` is
/// [`strata_raster_size`].  `out_len` must equal `3 * K * K`.
///
/// # Safety
/// `model` must be a live handle; `points` must reference
/// `n * STRATA_POINT_DIM` readable doubles; `out_rasters` must reference
/// `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn strata_infer_raster(
    model: *const StrataModel,
    points: *const f64,
    n: usize,
    radius: f64,
    out_rasters: *mut f64,
    out_len: usize,
) -> StrataStatus {
    guard(|| {
        if model.is_null() || points.is_null() || out_rasters.is_null() {
            return fail(StrataStatus::NullPointer, "model, points, and out must be non-null");
        }
        if n == 0 {
            return fail(StrataStatus::InvalidArgument, "need at least one point");
        }
        let occupancy = match unsafe { &(*model).inner } {
            SavedModel::Occupancy(m) => m,
            SavedModel::Direct(_) => {
                return fail(
                    StrataStatus::InvalidArgument,
                    "direct-regression models produce no rasters",
                )
            }
        };
        let k = occupancy.raster_size;
        if out_len != 3 * k * k {
            return fail(
                StrataStatus::InvalidArgument,
                &format!("out_len must be 3*K*K = {}, got {out_len}", 3 * k * k),
            );
        }
        let buffer = unsafe { std::slice::from_raw_parts(points, n * STRATA_POINT_DIM) };
        let plot = match plot_from_buffer(buffer, n, radius) {
            Ok(p) => p,
            Err((status, msg)) => return fail(status, &msg),
        };
        match infer(occupancy, &plot) {
            Ok(inference) => {
                let out = unsafe { std::slice::from_raw_parts_mut(out_rasters, out_len) };
                for (s, raster) in inference.projection.rasters.iter().enumerate() {
                    out[s * k * k..(s + 1) * k * k].copy_from_slice(&raster.values);
                }
                StrataStatus::Ok
            }
            Err(e) => fail(classify(&e), &e.to_string()),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use strata_core::pointnet::Arch;
    use strata_core::synthgen::{generate_plot, SceneSpec};
    use strata_core::train::{save_occupancy_model, train, TrainConfig};

    fn tiny_bundle(dir: &Path) -> Vec<Plot> {
        let dataset: Vec<Plot> = (0..6)
            .map(|i| {
                let scene = generate_plot(&SceneSpec::random(9000 + i, 4.0)).unwrap();
                let mut plot = scene.plot;
                plot.labels = Some(scene.occupancy);
                plot
            })
            .collect();
        let cfg = TrainConfig {
            raster_size: 8,
            batch_size: 4,
            epochs: 2,
            subsample: 128,
            arch: Arch { encoder: vec![10, 8, 16], decoder_hidden: vec![16] },
            ..TrainConfig::default()
        };
        let (model, _) = train(&dataset, &cfg).unwrap();
        save_occupancy_model(dir, &model).unwrap();
        dataset
    }

    fn point_buffer(plot: &Plot) -> Vec<f64> {
        let mut out = Vec::with_capacity(plot.points.len() * STRATA_POINT_DIM);
        for p in &plot.points {
            out.extend_from_slice(&[
                p.x,
                p.y,
                p.z,
                p.red,
                p.green,
                p.blue,
                p.nir,
                p.intensity,
                p.return_number as f64,
            ]);
        }
        out
    }

    fn load(dir: &Path) -> *mut StrataModel {
        let path = CString::new(dir.to_str().unwrap()).unwrap();
        let mut handle: *mut StrataModel = std::ptr::null_mut();
        let status = unsafe { strata_model_load(path.as_ptr(), &mut handle) };
        assert_eq!(status, StrataStatus::Ok);
        assert!(!handle.is_null());
        handle
    }

    #[test]
    fn version_is_package_version() {
        let v = unsafe { CStr::from_ptr(strata_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn load_infer_matches_library_calls() {
        let dir = std::env::temp_dir().join(format!("strata-ffi-{}", std::process::id()));
        let dataset = tiny_bundle(&dir);
        let handle = load(&dir);
        assert_eq!(unsafe { strata_model_kind(handle) }, 0);
        assert_eq!(unsafe { strata_raster_size(handle) }, 8);

        // The buffer path applies the same conditional re-centring as the
        // file parser, so the library reference must see the same cloud.
        let mut centered = dataset[0].clone();
        center_points(&mut centered.points, centered.radius);
        let expected = match strata_core::train::load_model(&dir).unwrap() {
            SavedModel::Occupancy(m) => infer(&m, &centered).unwrap(),
            _ => unreachable!(),
        };

        let buffer = point_buffer(&dataset[0]);
        let n = dataset[0].points.len();
        let mut occ = [0.0f64; 3];
        let status = unsafe {
            strata_infer_points(handle, buffer.as_ptr(), n, dataset[0].radius, occ.as_mut_ptr())
        };
        assert_eq!(status, StrataStatus::Ok);
        assert_eq!(occ, expected.occupancy.as_array());

        let mut rasters = vec![0.0f64; 3 * 8 * 8];
        let status = unsafe {
            strata_infer_raster(
                handle,
                buffer.as_ptr(),
                n,
                dataset[0].radius,
                rasters.as_mut_ptr(),
                rasters.len(),
            )
        };
        assert_eq!(status, StrataStatus::Ok);
        for (s, raster) in expected.projection.rasters.iter().enumerate() {
            assert_eq!(&rasters[s * 64..(s + 1) * 64], raster.values.as_slice());
        }

        unsafe { strata_model_free(handle) };
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn infer_file_matches_infer_points() {
        let dir = std::env::temp_dir().join(format!("strata-ffi-file-{}", std::process::id()));
        let dataset = tiny_bundle(&dir);
        let handle = load(&dir);

        let plot_path = dir.join("plot.txt");
        strata_core::plotio::write_plot_file(&plot_path, &dataset[1]).unwrap();
        let c_path = CString::new(plot_path.to_str().unwrap()).unwrap();
        let mut from_file = [0.0f64; 3];
        let status = unsafe {
            strata_infer_file(handle, c_path.as_ptr(), dataset[1].radius, from_file.as_mut_ptr())
        };
        assert_eq!(status, StrataStatus::Ok);

        // The writer quantizes coordinates, so the file path must agree
        // with running on the re-parsed points.
        let reparsed = strata_core::plotio::read_plot_file(&plot_path, dataset[1].radius).unwrap();
        let buffer = point_buffer(&reparsed);
        let mut from_points = [0.0f64; 3];
        let status = unsafe {
            strata_infer_points(
                handle,
                buffer.as_ptr(),
                reparsed.points.len(),
                reparsed.radius,
                from_points.as_mut_ptr(),
            )
        };
        assert_eq!(status, StrataStatus::Ok);
        assert_eq!(from_file, from_points);

        unsafe { strata_model_free(handle) };
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn error_paths_set_status_and_message() {
        let mut handle: *mut StrataModel = std::ptr::null_mut();
        let status = unsafe { strata_model_load(std::ptr::null(), &mut handle) };
        assert_eq!(status, StrataStatus::NullPointer);

        let bad = CString::new("/definitely/not/a/bundle").unwrap();
        let status = unsafe { strata_model_load(bad.as_ptr(), &mut handle) };
        assert_eq!(status, StrataStatus::IoError);
        let msg = unsafe { CStr::from_ptr(strata_last_error()) };
        assert!(!msg.to_str().unwrap().is_empty());

        assert_eq!(unsafe { strata_model_kind(std::ptr::null()) }, -1);
        assert_eq!(unsafe { strata_raster_size(std::ptr::null()) }, 0);
        unsafe { strata_model_free(std::ptr::null_mut()) };
    }

    #[test]
    fn buffer_validation_rejects_bad_input() {
        let dir = std::env::temp_dir().join(format!("strata-ffi-bad-{}", std::process::id()));
        let dataset = tiny_bundle(&dir);
        let handle = load(&dir);
        let buffer = point_buffer(&dataset[0]);
        let n = dataset[0].points.len();
        let mut occ = [0.0f64; 3];

        let status = unsafe {
            strata_infer_points(handle, buffer.as_ptr(), 0, dataset[0].radius, occ.as_mut_ptr())
        };
        assert_eq!(status, StrataStatus::InvalidArgument);

        let status =
            unsafe { strata_infer_points(handle, buffer.as_ptr(), n, -1.0, occ.as_mut_ptr()) };
        assert_eq!(status, StrataStatus::InvalidArgument);

        let mut bad = buffer.clone();
        bad[8] = 0.5; // fractional return number
        let status = unsafe {
            strata_infer_points(handle, bad.as_ptr(), n, dataset[0].radius, occ.as_mut_ptr())
        };
        assert_eq!(status, StrataStatus::InvalidData);

        let mut rasters = vec![0.0f64; 7];
        let status = unsafe {
            strata_infer_raster(
                handle,
                buffer.as_ptr(),
                n,
                dataset[0].radius,
                rasters.as_mut_ptr(),
                rasters.len(),
            )
        };
        assert_eq!(status, StrataStatus::InvalidArgument);

        unsafe { strata_model_free(handle) };
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn generated_header_declares_the_interface() {
        let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/strata.h");
        let text = std::fs::read_to_string(&header).expect("header must be generated at build");
        for symbol in [
            "strata_version",
            "strata_last_error",
            "strata_model_load",
            "strata_model_free",
            "strata_model_kind",
            "strata_raster_size",
            "strata_infer_points",
            "strata_infer_file",
            "strata_infer_raster",
            "STRATA_POINT_DIM",
            "StrataStatus",
            "StrataModel",
        ] {
            assert!(text.contains(symbol), "header lacks {symbol}");
        }

        // Syntax-check the header with the system C compiler when present.
        let probe = std::env::temp_dir().join(format!("strata-hdr-{}.c", std::process::id()));
        std::fs::write(&probe, format!("#include \"{}\"\n", header.display())).unwrap();
        if let Ok(out) = std::process::Command::new("cc")
            .args(["-std=c99", "-fsyntax-only"])
            .arg(&probe)
            .output()
        {
            assert!(
                out.status.success(),
                "header fails C compilation:\n{}",
                String::from_utf8_lossy(&out.stderr)
            );
        }
        std::fs::remove_file(&probe).unwrap();
    }
}
