//! C ABI for the audio tokenizer.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `*_free`. Every fallible call returns an [`OmniStatus`]; on
//! failure the message is kept per thread and read with
//! [`omni_last_error_message`]. Output arrays use a two-call pattern: pass
//! a null buffer (or a short one) to learn the required length through
//! `needed`, then call again.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use omni_core::codec::{read_tokens, write_tokens, AudioTokenSeq, Codec, CodecConfig};
use omni_core::orchestrator::normalize_score;
use omni_core::rvq::CodeFrame;
use omni_core::signal::{griffin_lim, Waveform};
use omni_core::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OmniStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    Io = 4,
    Format = 5,
    Numeric = 6,
    Config = 7,
    Panic = 8,
}

/// Trained or freshly initialized codec.
pub struct OmniCodec(Codec);

/// Sequence of token frames, each holding one code per quantizer layer.
pub struct OmniTokens(AudioTokenSeq);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).unwrap_or_default());
}

fn status_of(e: &Error) -> OmniStatus {
    match e {
        Error::InvalidArgument(_) => OmniStatus::InvalidArgument,
        Error::Io(_) => OmniStatus::Io,
        Error::Wav(_) | Error::Checkpoint(_) | Error::TokenFile(_) | Error::Json(_) => OmniStatus::Format,
        Error::Shape { .. } | Error::NonFinite { .. } => OmniStatus::Numeric,
        Error::Freeze(_) | Error::Config(_) => OmniStatus::Config,
    }
}

struct Fail(OmniStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(OmniStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, mapping errors and panics to a status and recording the message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> OmniStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            OmniStatus::Ok
        }
        Ok(Err(Fail(s, m))) => {
            set_error(m);
            s
        }
        Err(_) => {
            set_error("internal panic");
            OmniStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Fail(OmniStatus::InvalidArgument, "path is not UTF-8".into()))
}

unsafe fn put<T>(out: *mut *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(v));
    Ok(())
}

/// Copies `src` into the caller buffer after reporting its length.
unsafe fn copy_out<T: Copy>(src: &[T], buf: *mut T, cap: usize, needed: *mut usize) -> Result<(), Fail> {
    if needed.is_null() {
        return Err(null("needed"));
    }
    *needed = src.len();
    if buf.is_null() || cap < src.len() {
        return Err(Fail(
            OmniStatus::BufferTooSmall,
            format!("need {} elements, got capacity {cap}", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn omni_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn omni_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// New codec with the default configuration and the given seed.
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn omni_codec_new(seed: u64, out: *mut *mut OmniCodec) -> OmniStatus {
    guard(|| put(out, OmniCodec(Codec::new(CodecConfig::default(), seed)?)))
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn omni_codec_load(path: *const c_char, out: *mut *mut OmniCodec) -> OmniStatus {
    guard(|| put(out, OmniCodec(Codec::load(path_arg(path)?)?)))
}

/// # Safety
/// `codec` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn omni_codec_save(codec: *const OmniCodec, path: *const c_char) -> OmniStatus {
    guard(|| {
        let c = codec.as_ref().ok_or_else(|| null("codec"))?;
        Ok(c.0.save(path_arg(path)?)?)
    })
}

/// # Safety
/// `codec` must come from this library or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn omni_codec_free(codec: *mut OmniCodec) {
    if !codec.is_null() {
        drop(Box::from_raw(codec));
    }
}

/// Number of quantizer layers, which is the number of codes per frame.
///
/// # Safety
/// `codec` must come from this library or be null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn omni_codec_depth(codec: *const OmniCodec) -> usize {
    codec.as_ref().map_or(0, |c| c.0.rvq().depth())
}

/// Encodes mono samples at `sample_rate` Hz into token frames.
///
/// # Safety
/// `samples` must point to `n` readable doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn omni_codec_encode(
    codec: *const OmniCodec,
    samples: *const f64,
    n: usize,
    sample_rate: u32,
    out: *mut *mut OmniTokens,
) -> OmniStatus {
    guard(|| {
        let c = codec.as_ref().ok_or_else(|| null("codec"))?;
        if samples.is_null() {
            return Err(null("samples"));
        }
        let w = Waveform::new(sample_rate, std::slice::from_raw_parts(samples, n).to_vec())?;
        put(out, OmniTokens(c.0.encode(&w)?))
    })
}

/// Decodes tokens to a natural-log Mel spectrogram, row-major `[n_mels, frames]`.
///
/// # Safety
/// Handles must come from this library; `buf` holds `cap` doubles or is
/// null; `rows`, `cols` and `needed` must be writable.
#[no_mangle]
pub unsafe extern "C" fn omni_codec_decode_mel(
    codec: *const OmniCodec,
    tokens: *const OmniTokens,
    buf: *mut f64,
    cap: usize,
    rows: *mut usize,
    cols: *mut usize,
    needed: *mut usize,
) -> OmniStatus {
    guard(|| {
        let c = codec.as_ref().ok_or_else(|| null("codec"))?;
        let t = tokens.as_ref().ok_or_else(|| null("tokens"))?;
        if rows.is_null() || cols.is_null() {
            return Err(null("rows/cols"));
        }
        let mel = c.0.decode_mel(&t.0)?;
        let (r, k) = mel.frames.dims2()?;
        *rows = r;
        *cols = k;
        copy_out(mel.frames.data(), buf, cap, needed)
    })
}

/// Decodes tokens to a waveform through Griffin-Lim phase recovery.
///
/// # Safety
/// As for [`omni_codec_decode_mel`]; `sample_rate` must be writable.
#[no_mangle]
pub unsafe extern "C" fn omni_codec_decode_wave(
    codec: *const OmniCodec,
    tokens: *const OmniTokens,
    gl_iters: usize,
    buf: *mut f64,
    cap: usize,
    sample_rate: *mut u32,
    needed: *mut usize,
) -> OmniStatus {
    guard(|| {
        let c = codec.as_ref().ok_or_else(|| null("codec"))?;
        let t = tokens.as_ref().ok_or_else(|| null("tokens"))?;
        if sample_rate.is_null() {
            return Err(null("sample_rate"));
        }
        let w = griffin_lim(&c.0.decode_mel(&t.0)?, gl_iters)?;
        *sample_rate = w.sample_rate();
        copy_out(w.samples(), buf, cap, needed)
    })
}

/// Builds tokens from `frames * depth` codes laid out frame by frame.
///
/// # Safety
/// `codes` must point to `frames * depth` readable values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn omni_tokens_from_codes(
    codes: *const u32,
    frames: usize,
    depth: usize,
    out: *mut *mut OmniTokens,
) -> OmniStatus {
    guard(|| {
        if depth == 0 {
            return Err(Fail(OmniStatus::InvalidArgument, "depth must be positive".into()));
        }
        let n = frames.checked_mul(depth).ok_or(Fail(OmniStatus::InvalidArgument, "size overflow".into()))?;
        if codes.is_null() && n > 0 {
            return Err(null("codes"));
        }
        let flat = if n == 0 { &[][..] } else { std::slice::from_raw_parts(codes, n) };
        let f = flat
            .chunks(depth)
            .map(|c| CodeFrame::new(c.iter().map(|&v| v as usize).collect()))
            .collect();
        put(out, OmniTokens(AudioTokenSeq::from_frames(f)))
    })
}

/// # Safety
/// `path` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn omni_tokens_read(path: *const c_char, out: *mut *mut OmniTokens) -> OmniStatus {
    guard(|| put(out, OmniTokens(read_tokens(path_arg(path)?)?)))
}

/// # Safety
/// `tokens` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn omni_tokens_write(tokens: *const OmniTokens, path: *const c_char) -> OmniStatus {
    guard(|| {
        let t = tokens.as_ref().ok_or_else(|| null("tokens"))?;
        Ok(write_tokens(path_arg(path)?, &t.0)?)
    })
}

/// Number of frames, or 0 for null.
///
/// # Safety
/// `tokens` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn omni_tokens_len(tokens: *const OmniTokens) -> usize {
    tokens.as_ref().map_or(0, |t| t.0.len())
}

/// Copies all codes, frame by frame, as `frames * depth` values.
///
/// # Safety
/// `tokens` must come from this library; `buf` holds `cap` values or is
/// null; `needed` must be writable.
#[no_mangle]
pub unsafe extern "C" fn omni_tokens_codes(
    tokens: *const OmniTokens,
    buf: *mut u32,
    cap: usize,
    needed: *mut usize,
) -> OmniStatus {
    guard(|| {
        let t = tokens.as_ref().ok_or_else(|| null("tokens"))?;
        let flat: Vec<u32> = t.0.frames.iter().flat_map(|f| f.codes.iter().map(|&c| c as u32)).collect();
        copy_out(&flat, buf, cap, needed)
    })
}

/// # Safety
/// `tokens` must come from this library or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn omni_tokens_free(tokens: *mut OmniTokens) {
    if !tokens.is_null() {
        drop(Box::from_raw(tokens));
    }
}

/// `(x - min + 10) / (max - min + 10)` for benchmark scores.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn omni_normalize_score(x: f64, min: f64, max: f64, out: *mut f64) -> OmniStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = normalize_score(x, min, max)?;
        Ok(())
    })
}
