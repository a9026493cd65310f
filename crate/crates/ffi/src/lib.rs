//! C ABI over the `paretoq` packing, kernel and size APIs.
//!
//! Every fallible function returns a [`PqStatus`]; on failure the message is
//! kept per thread and can be copied out with [`pq_last_error_message`].
//! Packed matrices are opaque [`PqPackedMatrix`] handles released with
//! [`pq_packed_free`]. Panics never cross the boundary; they surface as
//! [`PqStatus::Internal`].

use paretoq::analysis::{effective_size, SizeSpec, TernaryAccounting};
use paretoq::bitpack::{self, storage_size, PackFormat, PackedMatrix};
use paretoq::qgemm::gemv_packed;
use paretoq::quant::{fake_quant, init_scale, paretoq_forward, BitWidth, QuantSpec};
use paretoq::{Error, Matrix};
use std::cell::RefCell;
use std::ffi::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::{ptr, slice};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PqStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    NonFinite = 4,
    AllZeroChannel = 5,
    UnencodableLevel = 6,
    CorruptPayload = 7,
    BufferTooSmall = 8,
    Internal = 9,
}

/// Opaque packed weight matrix.
pub struct PqPackedMatrix {
    inner: PackedMatrix,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

struct Failure(PqStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::ShapeMismatch { .. } => PqStatus::ShapeMismatch,
            Error::NonFinite { .. } => PqStatus::NonFinite,
            Error::AllZeroChannel { .. } => PqStatus::AllZeroChannel,
            Error::UnencodableLevel { .. } => PqStatus::UnencodableLevel,
            Error::CorruptPayload(_) | Error::Truncated { .. } => PqStatus::CorruptPayload,
            Error::InvalidSpec(_) | Error::InvalidArgument(_) | Error::NonPositiveScale { .. } | Error::Parse { .. } => {
                PqStatus::InvalidArgument
            }
            _ => PqStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: PqStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Runs `f`, records any error message and maps the outcome to a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PqStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PqStatus::Internal
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(fail(PqStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// Borrows `len` elements; a zero length accepts a null pointer.
///
/// # Safety
/// When `len > 0`, `p` must point to `len` readable elements.
unsafe fn input<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    // SAFETY: non-null and caller-guaranteed length.
    Ok(unsafe { slice::from_raw_parts(p, len) })
}

/// # Safety
/// When `len > 0`, `p` must point to `len` writable elements.
unsafe fn output<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    non_null(p, name)?;
    // SAFETY: non-null and caller-guaranteed length.
    Ok(unsafe { slice::from_raw_parts_mut(p, len) })
}

/// # Safety
/// `m` must be null or a live handle from this library.
unsafe fn handle<'a>(m: *const PqPackedMatrix) -> Result<&'a PackedMatrix, Failure> {
    non_null(m, "matrix")?;
    // SAFETY: caller guarantees a live handle.
    Ok(unsafe { &(*m).inner })
}

fn bitwidth(bits: f64) -> Result<BitWidth, Failure> {
    BitWidth::try_from(bits).map_err(Failure::from)
}

fn to_matrix(w: &[f32], rows: usize, cols: usize) -> Result<Matrix, Failure> {
    Ok(Matrix::new(rows, cols, w.to_vec())?)
}

fn elements(rows: usize, cols: usize) -> Result<usize, Failure> {
    rows.checked_mul(cols)
        .ok_or_else(|| fail(PqStatus::InvalidArgument, "rows * cols overflows"))
}

/// Copies the calling thread's last error message into `buf` as a
/// NUL-terminated string, truncating to `cap`. Returns the full message
/// length excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn pq_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            // SAFETY: caller guarantees `cap` writable bytes; n + 1 <= cap.
            unsafe {
                ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
                *buf.add(n) = 0;
            }
        }
        msg.len()
    })
}

/// Quantizes a row-major `rows × cols` matrix with per-row scales set by
/// the default initializer and packs it. `bits` is 1, 1.58, 2, 3 or 4.
/// Ternary weights use base-3 packing unless `ternary_as_2bit` is set.
///
/// # Safety
/// `weights` must point to `rows * cols` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pq_quantize_pack(
    weights: *const f32,
    rows: usize,
    cols: usize,
    bits: f64,
    ternary_as_2bit: bool,
    out: *mut *mut PqPackedMatrix,
) -> PqStatus {
    guard(|| {
        non_null(out, "out")?;
        let bw = bitwidth(bits)?;
        let format = match (bw, ternary_as_2bit) {
            (BitWidth::Ternary, true) => PackFormat::PackTernaryAs2Bit,
            (_, true) => return Err(fail(PqStatus::InvalidArgument, "ternary_as_2bit needs 1.58 bits")),
            (b, false) => PackFormat::for_bitwidth(b),
        };
        // SAFETY: caller contract.
        let w = to_matrix(unsafe { input(weights, elements(rows, cols)?, "weights")? }, rows, cols)?;
        let spec = QuantSpec::paretoq(bw);
        let scales = init_scale(&w, &spec)?;
        let q = paretoq_forward(&w, &scales, &spec)?;
        let inner = bitpack::encode(&q, &scales, format)?;
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(Box::new(PqPackedMatrix { inner })) };
        Ok(())
    })
}

/// Parses a packed file image.
///
/// # Safety
/// `data` must point to `len` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pq_packed_from_bytes(data: *const u8, len: usize, out: *mut *mut PqPackedMatrix) -> PqStatus {
    guard(|| {
        non_null(out, "out")?;
        // SAFETY: caller contract.
        let inner = bitpack::read_packed(unsafe { input(data, len, "data")? })?;
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(Box::new(PqPackedMatrix { inner })) };
        Ok(())
    })
}

/// Serializes `m` into `buf`. `written` receives the image size; when `buf`
/// is null or `cap` is too small nothing is copied and the status is
/// `BufferTooSmall`.
///
/// # Safety
/// `m` must be a live handle; `buf` must be null or point to `cap` writable
/// bytes; `written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pq_packed_to_bytes(
    m: *const PqPackedMatrix,
    buf: *mut u8,
    cap: usize,
    written: *mut usize,
) -> PqStatus {
    guard(|| {
        non_null(written, "written")?;
        // SAFETY: caller contract.
        let bytes = bitpack::write_packed(unsafe { handle(m)? });
        // SAFETY: checked non-null above.
        unsafe { *written = bytes.len() };
        if buf.is_null() || cap < bytes.len() {
            return Err(fail(
                PqStatus::BufferTooSmall,
                format!("need {} bytes, have {cap}", bytes.len()),
            ));
        }
        // SAFETY: caller contract; cap >= bytes.len().
        unsafe { output(buf, bytes.len(), "buf")? }.copy_from_slice(&bytes);
        Ok(())
    })
}

/// Number of rows, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pq_packed_rows(m: *const PqPackedMatrix) -> usize {
    // SAFETY: caller contract.
    unsafe { m.as_ref() }.map_or(0, |m| m.inner.rows())
}

/// Number of columns, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pq_packed_cols(m: *const PqPackedMatrix) -> usize {
    // SAFETY: caller contract.
    unsafe { m.as_ref() }.map_or(0, |m| m.inner.cols())
}

/// On-disk format tag, or -1 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pq_packed_format(m: *const PqPackedMatrix) -> i32 {
    // SAFETY: caller contract.
    unsafe { m.as_ref() }.map_or(-1, |m| m.inner.format().tag() as i32)
}

/// Payload size in bytes excluding header and scales, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pq_packed_payload_bytes(m: *const PqPackedMatrix) -> usize {
    // SAFETY: caller contract.
    unsafe { m.as_ref() }.map_or(0, |m| m.inner.payload().len())
}

/// `y = dequant(m) · x` with `x_len == cols` and `y_len == rows`.
///
/// # Safety
/// `m` must be a live handle; `x` and `y` must point to `x_len` and `y_len`
/// floats.
#[no_mangle]
pub unsafe extern "C" fn pq_gemv(
    m: *const PqPackedMatrix,
    x: *const f32,
    x_len: usize,
    y: *mut f32,
    y_len: usize,
) -> PqStatus {
    guard(|| {
        // SAFETY: caller contract.
        let p = unsafe { handle(m)? };
        if y_len != p.rows() {
            return Err(fail(PqStatus::ShapeMismatch, format!("output length {y_len}, rows {}", p.rows())));
        }
        // SAFETY: caller contract.
        let result = gemv_packed(p, unsafe { input(x, x_len, "x")? })?;
        // SAFETY: caller contract.
        unsafe { output(y, y_len, "y")? }.copy_from_slice(&result);
        Ok(())
    })
}

/// Writes the dequantized matrix, row-major, into `out` (`len == rows * cols`).
///
/// # Safety
/// `m` must be a live handle; `out` must point to `len` floats.
#[no_mangle]
pub unsafe extern "C" fn pq_decode(m: *const PqPackedMatrix, out: *mut f32, len: usize) -> PqStatus {
    guard(|| {
        // SAFETY: caller contract.
        let p = unsafe { handle(m)? };
        let dense = bitpack::decode(p)?;
        if len != dense.len() {
            return Err(fail(PqStatus::ShapeMismatch, format!("output length {len}, matrix has {}", dense.len())));
        }
        // SAFETY: caller contract.
        unsafe { output(out, len, "out")? }.copy_from_slice(dense.data());
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `m` must be null or a live handle not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pq_packed_free(m: *mut PqPackedMatrix) {
    if !m.is_null() {
        // SAFETY: handle came from Box::into_raw in this library.
        drop(unsafe { Box::from_raw(m) });
    }
}

/// Effective model size in bytes. 1.58-bit counts as log2(3) bits unless
/// `storage_honest`, which counts 1.6.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pq_effective_size(
    n_weights: u64,
    weight_bits: f64,
    n_embedding_weights: u64,
    embedding_bits: f64,
    storage_honest: bool,
    out: *mut f64,
) -> PqStatus {
    guard(|| {
        non_null(out, "out")?;
        let accounting = if storage_honest {
            TernaryAccounting::StorageHonest
        } else {
            TernaryAccounting::Analytic
        };
        let spec = SizeSpec::new(n_weights, weight_bits, n_embedding_weights, embedding_bits)?.with_ternary(accounting);
        // SAFETY: checked non-null above.
        unsafe { *out = effective_size(&spec) };
        Ok(())
    })
}

/// Payload bytes for a format tag and shape.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pq_storage_size(format_tag: u8, rows: usize, cols: usize, out: *mut usize) -> PqStatus {
    guard(|| {
        non_null(out, "out")?;
        let format = PackFormat::from_tag(format_tag).map_err(|e| fail(PqStatus::InvalidArgument, e.to_string()))?;
        // SAFETY: checked non-null above.
        unsafe { *out = storage_size(format, rows, cols) };
        Ok(())
    })
}

/// Quantize-dequantize a row-major matrix with per-row scales from the
/// default initializer. Writes `rows * cols` values to `out` and, when
/// `alpha_out` is non-null, the `rows` scales.
///
/// # Safety
/// `w` and `out` must point to `rows * cols` floats; `alpha_out` must be
/// null or point to `rows` floats.
#[no_mangle]
pub unsafe extern "C" fn pq_fake_quant(
    w: *const f32,
    rows: usize,
    cols: usize,
    bits: f64,
    out: *mut f32,
    alpha_out: *mut f32,
) -> PqStatus {
    guard(|| {
        let n = elements(rows, cols)?;
        // SAFETY: caller contract.
        let w = to_matrix(unsafe { input(w, n, "w")? }, rows, cols)?;
        let spec = QuantSpec::paretoq(bitwidth(bits)?);
        let scales = init_scale(&w, &spec)?;
        let q = fake_quant(&w, &scales, &spec)?;
        // SAFETY: caller contract.
        unsafe { output(out, n, "out")? }.copy_from_slice(q.data());
        if !alpha_out.is_null() {
            // SAFETY: caller contract.
            unsafe { output(alpha_out, rows, "alpha_out")? }.copy_from_slice(&scales.as_slice()[..rows]);
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error() -> String {
        let mut buf = vec![0 as c_char; 256];
        let n = unsafe { pq_last_error_message(buf.as_mut_ptr(), buf.len()) };
        let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
        String::from_utf8(bytes).unwrap()
    }

    #[test]
    fn null_pointers_are_reported() {
        let status = unsafe { pq_quantize_pack(ptr::null(), 2, 2, 2.0, false, ptr::null_mut()) };
        assert_eq!(status, PqStatus::NullPointer);
        assert!(last_error().contains("out"));
        assert_eq!(unsafe { pq_packed_rows(ptr::null()) }, 0);
        assert_eq!(unsafe { pq_packed_format(ptr::null()) }, -1);
        unsafe { pq_packed_free(ptr::null_mut()) };
    }

    #[test]
    fn error_message_truncates_and_terminates() {
        let mut out = 0.0;
        let status = unsafe { pq_effective_size(10, 5.0, 0, 16.0, false, &mut out) };
        assert_eq!(status, PqStatus::InvalidArgument);
        let mut small = [1 as c_char; 4];
        let full = unsafe { pq_last_error_message(small.as_mut_ptr(), small.len()) };
        assert!(full > 3);
        assert_eq!(small[3], 0);
        assert_eq!(unsafe { pq_effective_size(1000, 2.0, 100, 4.0, false, &mut out) }, PqStatus::Ok);
        assert_eq!(out, 300.0);
        assert_eq!(last_error(), "");
    }

    #[test]
    fn status_codes_map_from_errors() {
        let w = [0.0f32; 4];
        let mut h = ptr::null_mut();
        assert_eq!(unsafe { pq_quantize_pack(w.as_ptr(), 2, 2, 2.0, false, &mut h) }, PqStatus::AllZeroChannel);
        assert!(h.is_null());
        assert_eq!(unsafe { pq_quantize_pack(w.as_ptr(), 2, 2, 2.0, true, &mut h) }, PqStatus::InvalidArgument);
        assert_eq!(unsafe { pq_packed_from_bytes(b"PQPK".as_ptr(), 4, &mut h) }, PqStatus::CorruptPayload);
        let mut size = 0;
        assert_eq!(unsafe { pq_storage_size(99, 1, 1, &mut size) }, PqStatus::InvalidArgument);
    }
}
