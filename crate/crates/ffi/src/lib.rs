//! C interface to volume I/O, cubical persistence, persistence images and
//! ranking metrics.
//!
//! Conventions:
//! - Every fallible function returns an `int32_t` status, `LG_OK` (0) on
//!   success. Results come back through out-pointers, which are left
//!   untouched on failure.
//! - Codes 1..=19 mirror the library's error codes; `LG_ERR_NULL`,
//!   `LG_ERR_UTF8` and `LG_ERR_PANIC` are specific to this layer.
//! - `lg_last_error_message` describes the most recent failure on the
//!   calling thread.
//! - Handles are opaque, owned by the caller and released with the matching
//!   `*_free`, which accepts NULL.
//!
//! No panic crosses the boundary: each entry point runs under
//! `catch_unwind` and reports `LG_ERR_PANIC` instead.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use localglobal::cubical::{betti_from_diagram, compute_persistence, filter_low_persistence, Filtration, PersistenceDiagram};
use localglobal::eval::{auc, average_precision};
use localglobal::pimage::{diagram_image, PersistenceImage, PersistenceImageParams};
use localglobal::volume::{load_volume, save_volume, Volume3D};
use localglobal::{Error, ErrorCode};

pub const LG_OK: i32 = 0;
pub const LG_ERR_MISSING_FILE: i32 = 1;
pub const LG_ERR_MALFORMED_HEADER: i32 = 2;
pub const LG_ERR_SIZE_MISMATCH: i32 = 3;
pub const LG_ERR_NON_FINITE: i32 = 4;
pub const LG_ERR_PARAMETER: i32 = 5;
pub const LG_ERR_TILING: i32 = 6;
pub const LG_ERR_SHAPE: i32 = 7;
pub const LG_ERR_DATA: i32 = 8;
pub const LG_ERR_RANGE: i32 = 9;
pub const LG_ERR_DEGENERATE: i32 = 10;
pub const LG_ERR_ALIGNMENT: i32 = 11;
pub const LG_ERR_METRIC_UNDEFINED: i32 = 12;
pub const LG_ERR_INCOMPLETE_GRID: i32 = 13;
pub const LG_ERR_STRATIFICATION: i32 = 14;
pub const LG_ERR_PLACEMENT: i32 = 15;
pub const LG_ERR_TOO_LARGE: i32 = 16;
pub const LG_ERR_CONFIG: i32 = 17;
pub const LG_ERR_PARSE: i32 = 18;
pub const LG_ERR_IO: i32 = 19;
/// A required pointer argument was NULL.
pub const LG_ERR_NULL: i32 = 100;
/// A path argument was not valid UTF-8.
pub const LG_ERR_UTF8: i32 = 101;
/// The library panicked; the message names the panic payload.
pub const LG_ERR_PANIC: i32 = 102;

/// Filtration direction for `lg_persistence`.
pub const LG_SUBLEVEL: i32 = 0;
pub const LG_SUPERLEVEL: i32 = 1;

/// A 3D scalar volume, x fastest.
pub struct LgVolume(Volume3D);

/// A persistence diagram.
pub struct LgDiagram(PersistenceDiagram);

/// A persistence image, row-major, rows along persistence.
pub struct LgImage(PersistenceImage);

/// One persistence interval. Essential classes have `death = +INFINITY`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LgPair {
    pub dim: u8,
    pub birth: f32,
    pub death: f32,
}

/// Persistence image parameters. `weight_saturation <= 0` means the weight
/// ramp ends at `pers_hi`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LgPiParams {
    pub rows: usize,
    pub cols: usize,
    pub birth_lo: f64,
    pub birth_hi: f64,
    pub pers_lo: f64,
    pub pers_hi: f64,
    pub sigma: f64,
    pub weight_saturation: f64,
}

impl From<PersistenceImageParams> for LgPiParams {
    fn from(p: PersistenceImageParams) -> Self {
        Self {
            rows: p.resolution[0],
            cols: p.resolution[1],
            birth_lo: p.birth_range[0],
            birth_hi: p.birth_range[1],
            pers_lo: p.pers_range[0],
            pers_hi: p.pers_range[1],
            sigma: p.sigma,
            weight_saturation: p.weight_saturation.unwrap_or(0.0),
        }
    }
}

impl From<LgPiParams> for PersistenceImageParams {
    fn from(p: LgPiParams) -> Self {
        Self {
            resolution: [p.rows, p.cols],
            birth_range: [p.birth_lo, p.birth_hi],
            pers_range: [p.pers_lo, p.pers_hi],
            sigma: p.sigma,
            weight_saturation: (p.weight_saturation > 0.0).then_some(p.weight_saturation),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(i32, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(code_of(e.code()), e.to_string())
    }
}

fn code_of(c: ErrorCode) -> i32 {
    c as i32
}

fn null(what: &str) -> Failure {
    Failure(LG_ERR_NULL, format!("{what} is NULL"))
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            LG_OK
        }
        Ok(Err(Failure(code, msg))) => {
            set_last_error(&msg);
            code
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            LG_ERR_PANIC
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|e| Failure(LG_ERR_UTF8, format!("path is not UTF-8: {e}")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

fn out<T>(p: *mut T, what: &str) -> Result<*mut T, Failure> {
    if p.is_null() {
        Err(null(what))
    } else {
        Ok(p)
    }
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

// ---- volumes ----

/// Creates a volume from `nx*ny*nz` values in x-fastest order.
///
/// # Safety
/// `data` must point to `nx*ny*nz` readable floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lg_volume_new(nx: usize, ny: usize, nz: usize, data: *const f32, out_volume: *mut *mut LgVolume) -> i32 {
    guard(|| {
        let dst = out(out_volume, "out_volume")?;
        let n = nx
            .checked_mul(ny)
            .and_then(|v| v.checked_mul(nz))
            .ok_or_else(|| Failure(LG_ERR_PARAMETER, "volume size overflows".into()))?;
        let values = slice(data, n, "data")?.to_vec();
        let v = Volume3D::new([nx, ny, nz], values)?;
        *dst = boxed(LgVolume(v));
        Ok(())
    })
}

/// Reads an RVOL file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_volume` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lg_volume_load(path: *const c_char, out_volume: *mut *mut LgVolume) -> i32 {
    guard(|| {
        let dst = out(out_volume, "out_volume")?;
        let v = load_volume(path_arg(path)?)?;
        *dst = boxed(LgVolume(v));
        Ok(())
    })
}

/// Writes an RVOL file.
///
/// # Safety
/// `volume` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lg_volume_save(volume: *const LgVolume, path: *const c_char) -> i32 {
    guard(|| {
        let v = handle(volume, "volume")?;
        save_volume(&v.0, path_arg(path)?)?;
        Ok(())
    })
}

/// Writes `[nx, ny, nz]` to `out_dims`.
///
/// # Safety
/// `volume` must be a live handle; `out_dims` must hold 3 values.
#[no_mangle]
pub unsafe extern "C" fn lg_volume_dims(volume: *const LgVolume, out_dims: *mut usize) -> i32 {
    guard(|| {
        let v = handle(volume, "volume")?;
        let dst = out(out_dims, "out_dims")?;
        std::ptr::copy_nonoverlapping(v.0.dims().as_ptr(), dst, 3);
        Ok(())
    })
}

/// Copies the voxels into `buf`, which must hold at least `len` floats.
/// Fails with `LG_ERR_SIZE_MISMATCH` when `len` is smaller than the volume.
///
/// # Safety
/// `volume` must be a live handle; `buf` must hold `len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn lg_volume_data(volume: *const LgVolume, buf: *mut f32, len: usize) -> i32 {
    guard(|| {
        let v = handle(volume, "volume")?;
        let data = v.0.data();
        if len < data.len() {
            return Err(Error::SizeMismatch {
                expected: data.len(),
                found: len,
            }
            .into());
        }
        let dst = out(buf, "buf")?;
        std::ptr::copy_nonoverlapping(data.as_ptr(), dst, data.len());
        Ok(())
    })
}

/// # Safety
/// `volume` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lg_volume_free(volume: *mut LgVolume) {
    if !volume.is_null() {
        drop(Box::from_raw(volume));
    }
}

// ---- persistence ----

/// Cubical persistence of `volume`. Bit `d` of `dims_mask` selects
/// homology dimension `d` (so 0b111 asks for all three).
///
/// # Safety
/// `volume` must be a live handle; `out_diagram` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lg_persistence(volume: *const LgVolume, mode: i32, dims_mask: u32, out_diagram: *mut *mut LgDiagram) -> i32 {
    guard(|| {
        let v = handle(volume, "volume")?;
        let dst = out(out_diagram, "out_diagram")?;
        let mode = filtration(mode)?;
        if dims_mask & !0b111 != 0 {
            return Err(Failure(LG_ERR_PARAMETER, format!("dims_mask {dims_mask:#x} has bits above 2")));
        }
        let dims: Vec<u8> = (0..3u8).filter(|d| dims_mask & (1 << d) != 0).collect();
        let d = compute_persistence(&v.0, mode, &dims)?;
        *dst = boxed(LgDiagram(d));
        Ok(())
    })
}

fn filtration(mode: i32) -> Result<Filtration, Failure> {
    match mode {
        LG_SUBLEVEL => Ok(Filtration::Sublevel),
        LG_SUPERLEVEL => Ok(Filtration::Superlevel),
        m => Err(Failure(LG_ERR_PARAMETER, format!("unknown filtration mode {m}"))),
    }
}

/// Copy of `diagram` without pairs of persistence at most `eps`.
///
/// # Safety
/// `diagram` must be a live handle; `out_diagram` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lg_diagram_filter(diagram: *const LgDiagram, eps: f32, out_diagram: *mut *mut LgDiagram) -> i32 {
    guard(|| {
        let d = handle(diagram, "diagram")?;
        let dst = out(out_diagram, "out_diagram")?;
        let f = filter_low_persistence(&d.0, eps)?;
        *dst = boxed(LgDiagram(f));
        Ok(())
    })
}

/// # Safety
/// `diagram` must be a live handle; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lg_diagram_len(diagram: *const LgDiagram, out_len: *mut usize) -> i32 {
    guard(|| {
        let d = handle(diagram, "diagram")?;
        *out(out_len, "out_len")? = d.0.pairs.len();
        Ok(())
    })
}

/// Pair `index` in computation order.
///
/// # Safety
/// `diagram` must be a live handle; `out_pair` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lg_diagram_pair(diagram: *const LgDiagram, index: usize, out_pair: *mut LgPair) -> i32 {
    guard(|| {
        let d = handle(diagram, "diagram")?;
        let dst = out(out_pair, "out_pair")?;
        let p = d.0.pairs.get(index).ok_or_else(|| {
            Failure(LG_ERR_RANGE, format!("pair index {index} outside 0..{}", d.0.pairs.len()))
        })?;
        *dst = LgPair {
            dim: p.dim,
            birth: p.birth,
            death: p.death,
        };
        Ok(())
    })
}

/// Betti numbers of the level set at `threshold`, read off the diagram.
///
/// # Safety
/// `diagram` must be a live handle; `out_betti` must hold 3 values.
#[no_mangle]
pub unsafe extern "C" fn lg_diagram_betti(diagram: *const LgDiagram, threshold: f32, out_betti: *mut usize) -> i32 {
    guard(|| {
        let d = handle(diagram, "diagram")?;
        let dst = out(out_betti, "out_betti")?;
        let b = betti_from_diagram(&d.0, threshold);
        std::ptr::copy_nonoverlapping(b.as_ptr(), dst, 3);
        Ok(())
    })
}

/// # Safety
/// `diagram` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lg_diagram_free(diagram: *mut LgDiagram) {
    if !diagram.is_null() {
        drop(Box::from_raw(diagram));
    }
}

// ---- persistence images ----

/// Fills `out_params` with the library defaults (50x50 on the unit square,
/// sigma 0.05).
///
/// # Safety
/// `out_params` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lg_pi_params_default(out_params: *mut LgPiParams) -> i32 {
    guard(|| {
        *out(out_params, "out_params")? = PersistenceImageParams::default().into();
        Ok(())
    })
}

/// Persistence image of the dimension-`dim` pairs of `diagram`.
///
/// # Safety
/// `diagram` and `params` must be valid; `out_image` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lg_image_from_diagram(
    diagram: *const LgDiagram,
    dim: u8,
    params: *const LgPiParams,
    out_image: *mut *mut LgImage,
) -> i32 {
    guard(|| {
        let d = handle(diagram, "diagram")?;
        let p: PersistenceImageParams = (*handle(params, "params")?).into();
        let dst = out(out_image, "out_image")?;
        let img = diagram_image(&d.0, dim, &p)?;
        *dst = boxed(LgImage(img));
        Ok(())
    })
}

/// # Safety
/// `image` must be a live handle; `out_rows` and `out_cols` writable.
#[no_mangle]
pub unsafe extern "C" fn lg_image_dims(image: *const LgImage, out_rows: *mut usize, out_cols: *mut usize) -> i32 {
    guard(|| {
        let img = handle(image, "image")?;
        let r = out(out_rows, "out_rows")?;
        let c = out(out_cols, "out_cols")?;
        *r = img.0.rows();
        *c = img.0.cols();
        Ok(())
    })
}

/// Copies the row-major pixels into `buf`, which must hold `rows*cols`.
///
/// # Safety
/// `image` must be a live handle; `buf` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn lg_image_pixels(image: *const LgImage, buf: *mut f64, len: usize) -> i32 {
    guard(|| {
        let img = handle(image, "image")?;
        let px = &img.0.pixels;
        if len < px.len() {
            return Err(Error::SizeMismatch {
                expected: px.len(),
                found: len,
            }
            .into());
        }
        std::ptr::copy_nonoverlapping(px.as_ptr(), out(buf, "buf")?, px.len());
        Ok(())
    })
}

/// # Safety
/// `image` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lg_image_free(image: *mut LgImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

// ---- metrics ----

/// ROC AUC of `scores` against 0/1 `labels`, ties counted half.
///
/// # Safety
/// `scores` and `labels` must each hold `n` values; `out_auc` writable.
#[no_mangle]
pub unsafe extern "C" fn lg_auc(scores: *const f64, labels: *const u8, n: usize, out_auc: *mut f64) -> i32 {
    guard(|| {
        let dst = out(out_auc, "out_auc")?;
        *dst = auc(slice(scores, n, "scores")?, slice(labels, n, "labels")?)?;
        Ok(())
    })
}

/// Average precision of `scores` against 0/1 `labels`.
///
/// # Safety
/// `scores` and `labels` must each hold `n` values; `out_ap` writable.
#[no_mangle]
pub unsafe extern "C" fn lg_average_precision(scores: *const f64, labels: *const u8, n: usize, out_ap: *mut f64) -> i32 {
    guard(|| {
        let dst = out(out_ap, "out_ap")?;
        *dst = average_precision(slice(scores, n, "scores")?, slice(labels, n, "labels")?)?;
        Ok(())
    })
}

// ---- misc ----

/// Message for the last failure on this thread, or "" after a success.
/// The pointer stays valid until the next call into the library from the
/// same thread.
#[no_mangle]
pub extern "C" fn lg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lg_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_mirror_library() {
        assert_eq!(code_of(ErrorCode::MissingFile), LG_ERR_MISSING_FILE);
        assert_eq!(code_of(ErrorCode::Placement), LG_ERR_PLACEMENT);
        assert_eq!(code_of(ErrorCode::Io), LG_ERR_IO);
    }

    #[test]
    fn params_round_trip() {
        let p = PersistenceImageParams {
            weight_saturation: Some(0.3),
            ..Default::default()
        };
        assert_eq!(PersistenceImageParams::from(LgPiParams::from(p)), p);
        let d = PersistenceImageParams::default();
        assert_eq!(PersistenceImageParams::from(LgPiParams::from(d)), d);
    }

    #[test]
    fn panics_become_codes() {
        let code = guard(|| panic!("boom"));
        assert_eq!(code, LG_ERR_PANIC);
        let msg = unsafe { CStr::from_ptr(lg_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "panic: boom");
    }
}
