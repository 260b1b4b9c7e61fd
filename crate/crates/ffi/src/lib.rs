//! C ABI for the rating pipeline: load a trained model from its JSON form,
//! predict a severity from a 14-value feature array, round raw scores onto
//! the half-point scale, and compute approximate entropy.
//!
//! Conventions: every fallible call returns an [`ArStatus`] and writes its
//! result through an out-pointer; `AR_STATUS_OK` is zero. On failure a
//! thread-local message is available from [`ar_last_error`] until the next
//! failing call on the same thread. Model handles are opaque and must be
//! released with [`ar_model_free`].

use ataxia_rater::features::{apen, FeatureVector, FEATURE_NAMES};
use ataxia_rater::model::{predict_raw, round_to_bars, RatingModel};
use libc::{c_char, c_double, size_t};
use std::cell::RefCell;
use std::ffi::{CStr, CString};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// An argument had the wrong size or an out-of-range value.
    InvalidArgument = 2,
    /// The model JSON could not be parsed or failed validation.
    ParseFailed = 3,
    /// The computation itself rejected the input.
    ComputeFailed = 4,
}

/// Opaque trained-model handle.
pub struct ArModel {
    inner: RatingModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: ArStatus, message: &str) -> ArStatus {
    let sanitized: String = message.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
    status
}

/// Version of the library as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ar_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Length of the feature vector the model consumes.
#[no_mangle]
pub extern "C" fn ar_feature_count() -> size_t {
    FEATURE_NAMES.len()
}

/// Canonical name of feature `index`, or null when out of range. The
/// returned string is static.
#[no_mangle]
pub extern "C" fn ar_feature_name(index: size_t) -> *const c_char {
    // The features module stores plain &str; hand back stable C copies.
    static NAMES: [&str; 14] = [
        "log_mean_cycle_s\0",
        "log_mean_n2f_s\0",
        "log_mean_f2n_s\0",
        "dirchg_x_raw\0",
        "dirchg_y_raw\0",
        "dirchg_x_per_cycle\0",
        "dirchg_y_per_cycle\0",
        "std_cycle_s\0",
        "std_n2f_s\0",
        "std_f2n_s\0",
        "apen_r010\0",
        "apen_r012\0",
        "apen_r014\0",
        "apen_r018\0",
    ];
    match NAMES.get(index) {
        Some(name) => name.as_ptr() as *const c_char,
        None => std::ptr::null(),
    }
}

/// Message describing the most recent failure on this thread; empty until a
/// call fails. Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ar_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Parses and validates a model from NUL-terminated JSON, writing a handle
/// to `out`. The handle must be released with [`ar_model_free`].
///
/// # Safety
/// `json` must point to a NUL-terminated string and `out` to writable
/// storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn ar_model_from_json(
    json: *const c_char,
    out: *mut *mut ArModel,
) -> ArStatus {
    if json.is_null() || out.is_null() {
        return fail(ArStatus::NullArgument, "json and out must be non-null");
    }
    let text = match CStr::from_ptr(json).to_str() {
        Ok(t) => t,
        Err(e) => return fail(ArStatus::ParseFailed, &format!("model JSON is not UTF-8: {e}")),
    };
    let model: RatingModel = match serde_json::from_str(text) {
        Ok(m) => m,
        Err(e) => return fail(ArStatus::ParseFailed, &format!("model JSON: {e}")),
    };
    if let Err(e) = model.validate() {
        return fail(ArStatus::ParseFailed, &format!("model rejected: {e}"));
    }
    *out = Box::into_raw(Box::new(ArModel { inner: model }));
    ArStatus::Ok
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle produced by [`ar_model_from_json`] that
/// has not been freed already.
#[no_mangle]
pub unsafe extern "C" fn ar_model_free(model: *mut ArModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Raw (unrounded) severity prediction from a feature array of length
/// [`ar_feature_count`], in canonical feature order.
///
/// # Safety
/// `model` must be a live handle, `features` must point to `len` doubles,
/// and `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn ar_predict_raw(
    model: *const ArModel,
    features: *const c_double,
    len: size_t,
    out: *mut c_double,
) -> ArStatus {
    if model.is_null() || features.is_null() || out.is_null() {
        return fail(ArStatus::NullArgument, "model, features and out must be non-null");
    }
    if len != FEATURE_NAMES.len() {
        return fail(
            ArStatus::InvalidArgument,
            &format!("expected {} features, got {len}", FEATURE_NAMES.len()),
        );
    }
    let slice = std::slice::from_raw_parts(features, len);
    let mut array = [0.0f64; 14];
    array.copy_from_slice(slice);
    let vector = match FeatureVector::from_array(array) {
        Ok(v) => v,
        Err(e) => return fail(ArStatus::InvalidArgument, &format!("features rejected: {e}")),
    };
    *out = predict_raw(&(*model).inner, &vector);
    ArStatus::Ok
}

/// Rounds a raw prediction to the nearest half point of the 0-4 scale.
///
/// # Safety
/// `out` must point to one writable double.
#[no_mangle]
pub unsafe extern "C" fn ar_round_rating(raw: c_double, out: *mut c_double) -> ArStatus {
    if out.is_null() {
        return fail(ArStatus::NullArgument, "out must be non-null");
    }
    match round_to_bars(raw) {
        Ok(rating) => {
            *out = rating.value();
            ArStatus::Ok
        }
        Err(e) => fail(ArStatus::ComputeFailed, &format!("cannot round: {e}")),
    }
}

/// Approximate entropy of `series` with embedding dimension `m` and
/// tolerance fraction `r` (of the series' standard deviation).
///
/// # Safety
/// `series` must point to `len` doubles and `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn ar_apen(
    series: *const c_double,
    len: size_t,
    m: size_t,
    r: c_double,
    out: *mut c_double,
) -> ArStatus {
    if series.is_null() || out.is_null() {
        return fail(ArStatus::NullArgument, "series and out must be non-null");
    }
    let slice = std::slice::from_raw_parts(series, len);
    match apen(slice, m, r) {
        Ok(v) => {
            *out = v;
            ArStatus::Ok
        }
        Err(e) => fail(ArStatus::ComputeFailed, &format!("apen rejected input: {e}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    fn sample_model() -> RatingModel {
        RatingModel {
            means: vec![0.0; 14],
            scales: vec![1.0; 14],
            weights: {
                let mut w = vec![0.0; 14];
                w[0] = 2.0;
                w
            },
            intercept: 1.0,
            lambda: 0.1,
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn load(json: &str) -> (ArStatus, *mut ArModel) {
        let c = CString::new(json).unwrap();
        let mut handle: *mut ArModel = ptr::null_mut();
        let status = unsafe { ar_model_from_json(c.as_ptr(), &mut handle) };
        (status, handle)
    }

    fn last_error_string() -> String {
        unsafe { CStr::from_ptr(ar_last_error()) }.to_str().unwrap().to_string()
    }

    #[test]
    fn version_is_package_version() {
        let v = unsafe { CStr::from_ptr(ar_version()) }.to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn feature_names_match_canonical_order() {
        assert_eq!(ar_feature_count(), 14);
        for (i, expected) in FEATURE_NAMES.iter().enumerate() {
            let name = unsafe { CStr::from_ptr(ar_feature_name(i)) }.to_str().unwrap();
            assert_eq!(&name, expected);
        }
        assert!(ar_feature_name(14).is_null());
    }

    #[test]
    fn load_predict_round_and_free() {
        let json = serde_json::to_string(&sample_model()).unwrap();
        let (status, handle) = load(&json);
        assert_eq!(status, ArStatus::Ok);

        let mut features = [0.0f64; 14];
        features[0] = 0.6;
        let mut raw = f64::NAN;
        let status =
            unsafe { ar_predict_raw(handle, features.as_ptr(), features.len(), &mut raw) };
        assert_eq!(status, ArStatus::Ok);
        // weights[0]=2 on a standardized value of 0.6 plus intercept 1.
        assert!((raw - 2.2).abs() < 1e-12);

        let mut rounded = f64::NAN;
        assert_eq!(unsafe { ar_round_rating(raw, &mut rounded) }, ArStatus::Ok);
        assert_eq!(rounded, 2.0);

        unsafe { ar_model_free(handle) };
    }

    #[test]
    fn rounding_clamps_to_scale() {
        let mut out = f64::NAN;
        assert_eq!(unsafe { ar_round_rating(-0.4, &mut out) }, ArStatus::Ok);
        assert_eq!(out, 0.0);
        assert_eq!(unsafe { ar_round_rating(9.9, &mut out) }, ArStatus::Ok);
        assert_eq!(out, 4.0);
        assert_eq!(unsafe { ar_round_rating(1.3, &mut out) }, ArStatus::Ok);
        assert_eq!(out, 1.5);
        assert_eq!(
            unsafe { ar_round_rating(f64::NAN, &mut out) },
            ArStatus::ComputeFailed
        );
        assert!(last_error_string().contains("cannot round"));
    }

    #[test]
    fn null_and_size_errors_are_reported() {
        let mut handle: *mut ArModel = ptr::null_mut();
        assert_eq!(
            unsafe { ar_model_from_json(ptr::null(), &mut handle) },
            ArStatus::NullArgument
        );

        let json = serde_json::to_string(&sample_model()).unwrap();
        let (status, handle) = load(&json);
        assert_eq!(status, ArStatus::Ok);
        let features = [0.0f64; 14];
        let mut out = f64::NAN;
        assert_eq!(
            unsafe { ar_predict_raw(handle, features.as_ptr(), 10, &mut out) },
            ArStatus::InvalidArgument
        );
        assert!(last_error_string().contains("expected 14 features"));
        assert_eq!(
            unsafe { ar_predict_raw(ptr::null(), features.as_ptr(), 14, &mut out) },
            ArStatus::NullArgument
        );
        unsafe { ar_model_free(handle) };
        unsafe { ar_model_free(ptr::null_mut()) }; // tolerated
    }

    #[test]
    fn bad_model_json_fails_parse() {
        let (status, _) = load("{\"weights\": [1, 2]");
        assert_eq!(status, ArStatus::ParseFailed);

        let mut wrong = sample_model();
        wrong.feature_names[13] = "apen_r020".into();
        let (status, _) = load(&serde_json::to_string(&wrong).unwrap());
        assert_eq!(status, ArStatus::ParseFailed);
        assert!(last_error_string().contains("model rejected"));

        let mut nonfinite = sample_model();
        nonfinite.scales[3] = -1.0;
        let (status, _) = load(&serde_json::to_string(&nonfinite).unwrap());
        assert_eq!(status, ArStatus::ParseFailed);
    }

    #[test]
    fn apen_through_the_c_surface_matches_the_library() {
        let series: Vec<f64> = (0..60).map(|i| ((i % 7) as f64).sin()).collect();
        let mut out = f64::NAN;
        let status = unsafe { ar_apen(series.as_ptr(), series.len(), 3, 0.14, &mut out) };
        assert_eq!(status, ArStatus::Ok);
        assert_eq!(out, apen(&series, 3, 0.14).unwrap());

        // Too-short series surfaces as a compute failure, not a crash.
        let short = [1.0, 2.0];
        assert_eq!(
            unsafe { ar_apen(short.as_ptr(), short.len(), 3, 0.1, &mut out) },
            ArStatus::ComputeFailed
        );
    }
}
