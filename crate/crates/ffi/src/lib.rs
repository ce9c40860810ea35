//! C ABI over the `davt` core.
//!
//! Models live behind an opaque `DavtModel` pointer. Every call returns a
//! `DavtStatus`; on failure the message is kept per thread and read with
//! `davt_last_error`. Images are row-major RGB `double` triples in `[0, 1]`
//! and are resized to the model's input side when their shape differs.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use davt::augment::{plan_crop, CropSettings, HeadAgg, DEFAULT_THETA};
use davt::config::RunConfig;
use davt::image::Image;
use davt::model::Davt;
use davt::tensor::Tape;
use davt::train::load_checkpoint;

/// Opaque model handle.
pub struct DavtModel {
    model: Davt,
    xi: usize,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DavtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Format = 5,
    Checkpoint = 6,
    BufferTooSmall = 7,
    Internal = 8,
}

/// Inclusive pixel box.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DavtBox {
    pub row_min: usize,
    pub row_max: usize,
    pub col_min: usize,
    pub col_max: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &davt::Error) -> DavtStatus {
    match e {
        davt::Error::Config(_) => DavtStatus::Config,
        davt::Error::Io { .. } => DavtStatus::Io,
        davt::Error::Format { .. } | davt::Error::Json(_) => DavtStatus::Format,
        davt::Error::Checkpoint(_) => DavtStatus::Checkpoint,
        davt::Error::Shape { .. } | davt::Error::InvalidArgument(_) | davt::Error::Dataset(_) => {
            DavtStatus::InvalidArgument
        }
        davt::Error::NonFinite(_) | davt::Error::Backward(_) => DavtStatus::Internal,
    }
}

struct Fail(DavtStatus, String);

impl From<davt::Error> for Fail {
    fn from(e: davt::Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DavtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            DavtStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            DavtStatus::Internal
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(DavtStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(DavtStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn model_arg<'a>(p: *const DavtModel) -> Result<&'a DavtModel, Fail> {
    p.as_ref().ok_or_else(|| null("model"))
}

unsafe fn image_arg(pixels: *const f64, height: usize, width: usize, side: usize) -> Result<Image, Fail> {
    if pixels.is_null() {
        return Err(null("pixels"));
    }
    let len = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(3))
        .filter(|&n| n > 0)
        .ok_or_else(|| Fail(DavtStatus::InvalidArgument, format!("bad image shape {height}x{width}")))?;
    let data = std::slice::from_raw_parts(pixels, len).to_vec();
    let image = Image::new(height, width, data)?;
    if height == side && width == side {
        Ok(image)
    } else {
        Ok(image.resize(side, side)?)
    }
}

unsafe fn publish(out: *mut *mut DavtModel, handle: DavtModel) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(handle));
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn davt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length plus one.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn davt_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len() + 1
    })
}

/// Freshly initialised model from a JSON config object (keys as in the CLI
/// config file; missing keys take their defaults). Null means all defaults.
///
/// # Safety
/// `config_json` must be null or a NUL-terminated string; `out` must be
/// valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn davt_model_new(config_json: *const c_char, out: *mut *mut DavtModel) -> DavtStatus {
    guard(|| {
        let cfg = if config_json.is_null() {
            RunConfig::default()
        } else {
            RunConfig::from_json(str_arg(config_json, "config_json")?)?
        };
        let model = Davt::new(cfg.vit(), cfg.options())?;
        publish(out, DavtModel { model, xi: cfg.xi() })
    })
}

/// Model stored in a training checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for one
/// pointer write.
#[no_mangle]
pub unsafe extern "C" fn davt_model_load(path: *const c_char, out: *mut *mut DavtModel) -> DavtStatus {
    guard(|| {
        let ck = load_checkpoint(str_arg(path, "path")?)?;
        let xi = ck.train.xi;
        publish(out, DavtModel { model: ck.model(), xi })
    })
}

/// Releases a handle. Null is a no-op.
///
/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn davt_model_free(model: *mut DavtModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of output classes, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn davt_model_num_classes(model: *const DavtModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config.num_classes)
}

/// Input side length in pixels, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn davt_model_image_size(model: *const DavtModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config.image_size)
}

/// Class logits for one image into `logits[0..num_classes]`.
///
/// # Safety
/// `pixels` must hold `height * width * 3` doubles and `logits` must be
/// valid for `logits_len` writes.
#[no_mangle]
pub unsafe extern "C" fn davt_forward(
    model: *const DavtModel,
    pixels: *const f64,
    height: usize,
    width: usize,
    logits: *mut f64,
    logits_len: usize,
) -> DavtStatus {
    guard(|| {
        let m = model_arg(model)?;
        if logits.is_null() {
            return Err(null("logits"));
        }
        let classes = m.model.config.num_classes;
        if logits_len < classes {
            return Err(Fail(
                DavtStatus::BufferTooSmall,
                format!("logits buffer holds {logits_len}, need {classes}"),
            ));
        }
        let image = image_arg(pixels, height, width, m.model.config.image_size)?;
        let values = m.model.predict_logits(&image)?;
        ptr::copy_nonoverlapping(values.as_ptr(), logits, classes);
        Ok(())
    })
}

/// Attention-guided crop box in model-input pixel coordinates. `xi` 0 uses
/// the model's layer; `theta` ≤ 0 uses the default threshold; `head_max`
/// nonzero aggregates heads by max instead of mean.
///
/// # Safety
/// `pixels` must hold `height * width * 3` doubles and `out` must be valid
/// for one write.
#[no_mangle]
pub unsafe extern "C" fn davt_crop_box(
    model: *const DavtModel,
    pixels: *const f64,
    height: usize,
    width: usize,
    xi: usize,
    theta: f64,
    head_max: i32,
    out: *mut DavtBox,
) -> DavtStatus {
    guard(|| {
        let m = model_arg(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let image = image_arg(pixels, height, width, m.model.config.image_size)?;
        let settings = CropSettings {
            xi: if xi == 0 { m.xi } else { xi },
            theta: if theta > 0.0 { theta } else { DEFAULT_THETA },
            head_agg: if head_max != 0 { HeadAgg::Max } else { HeadAgg::Mean },
        };
        let mut tape = Tape::new();
        let vars = m.model.bind(&mut tape, false);
        let fwd = m.model.forward(&mut tape, &vars, &image)?;
        let plan = plan_crop(&image, &fwd.attention, &settings)?;
        let b = plan.bbox;
        *out = DavtBox {
            row_min: b.row_min,
            row_max: b.row_max,
            col_min: b.col_min,
            col_max: b.col_max,
        };
        Ok(())
    })
}
