//! C ABI over the out-of-core engine.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `_free` function. Every fallible call returns an [`OocStatus`];
//! on failure a description is kept per thread and can be fetched with
//! [`ooc_last_error_message`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use oocsplat::blocking::morton_code;
use oocsplat::commands::cmd_train;
use oocsplat::config::RunConfig;
use oocsplat::log_store::{Store, StoreOptions};
use oocsplat::param_table::{block_payload_bytes, BlockPayload, TableConfig};
use oocsplat::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OocStatus {
    Ok = 0,
    NullArg = 1,
    Io = 2,
    Corrupt = 3,
    OutOfRange = 4,
    InvalidConfig = 5,
    Capacity = 6,
    NonFinite = 7,
    Internal = 8,
}

/// Location of the newest version of a block.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OocIndexEntry {
    pub file_id: u32,
    pub offset: u64,
    pub size: u64,
    pub version: u64,
}

/// Opaque handle to an open block store.
pub struct OocStore {
    store: Store,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> OocStatus {
    match e {
        Error::Io { .. } => OocStatus::Io,
        Error::Corrupt { .. } => OocStatus::Corrupt,
        Error::PrimitiveOutOfRange { .. } | Error::BlockOutOfRange { .. } | Error::MortonRange { .. } => {
            OocStatus::OutOfRange
        }
        Error::WorkingSetExceedsCapacity { .. } => OocStatus::Capacity,
        Error::NonFiniteGradient { .. } => OocStatus::NonFinite,
        Error::Staging(inner) => status_of(inner),
        _ => OocStatus::InvalidConfig,
    }
}

enum Fail {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> OocStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OocStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer passed for {what}"));
            OocStatus::NullArg
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            OocStatus::Internal
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::InvalidConfig(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn store_ref<'a>(s: *const OocStore) -> Result<&'a OocStore, Fail> {
    s.as_ref().ok_or(Fail::Null("store"))
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length in
/// bytes, excluding the terminator.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn ooc_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Bytes in one block record: `block_size * dim * 4`, or 0 if either is 0.
#[no_mangle]
pub extern "C" fn ooc_block_payload_bytes(block_size: u64, dim: u64) -> u64 {
    match TableConfig::new(block_size.max(1), dim as usize, block_size as usize) {
        Ok(cfg) => block_payload_bytes(&cfg),
        Err(_) => 0,
    }
}

/// Interleaves 2 or 3 quantized coordinates into a Morton code.
///
/// # Safety
/// `coords` must be valid for `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ooc_morton_code(coords: *const u64, n: usize, out: *mut u64) -> OocStatus {
    guard(|| {
        if coords.is_null() {
            return Err(Fail::Null("coords"));
        }
        let out = out_arg(out, "out")?;
        *out = morton_code(std::slice::from_raw_parts(coords, n))?.0;
        Ok(())
    })
}

/// Creates a store in `dir` from a row-major `n x dim` table of `len`
/// floats, replacing any existing store there.
///
/// # Safety
/// `dir` must be a NUL-terminated string, `values` valid for `len` floats,
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ooc_store_create(
    dir: *const c_char,
    n: u64,
    dim: usize,
    block_size: usize,
    values: *const f32,
    len: usize,
    out: *mut *mut OocStore,
) -> OocStatus {
    guard(|| {
        let dir = path_arg(dir, "dir")?;
        let out = out_arg(out, "out")?;
        if values.is_null() {
            return Err(Fail::Null("values"));
        }
        let cfg = TableConfig::new(n, dim, block_size)?;
        if len as u64 != n * dim as u64 {
            return Err(Error::Shape(format!("{len} values for a {n}x{dim} table")).into());
        }
        let table = std::slice::from_raw_parts(values, len);
        let store = Store::write_base(&dir, cfg, table, StoreOptions::default())?;
        *out = Box::into_raw(Box::new(OocStore { store }));
        Ok(())
    })
}

/// Opens an existing store, rebuilding its index from the segments.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ooc_store_open(dir: *const c_char, out: *mut *mut OocStore) -> OocStatus {
    guard(|| {
        let dir = path_arg(dir, "dir")?;
        let out = out_arg(out, "out")?;
        let store = Store::open(&dir, StoreOptions::default())?;
        *out = Box::into_raw(Box::new(OocStore { store }));
        Ok(())
    })
}

/// Releases a store handle. Null is ignored.
///
/// # Safety
/// `store` must come from `ooc_store_open`/`ooc_store_create` and not be
/// used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ooc_store_free(store: *mut OocStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// # Safety
/// `store` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ooc_store_block_count(store: *const OocStore, out: *mut u32) -> OocStatus {
    guard(|| {
        let s = store_ref(store)?;
        *out_arg(out, "out")? = s.store.config().k_blocks();
        Ok(())
    })
}

/// Floats per block record (block_size * dim).
///
/// # Safety
/// `store` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ooc_store_block_floats(store: *const OocStore, out: *mut usize) -> OocStatus {
    guard(|| {
        let s = store_ref(store)?;
        *out_arg(out, "out")? = s.store.config().floats_per_block();
        Ok(())
    })
}

/// Reads the newest version of block `k` into `buf` (exactly one record of
/// floats). `version` may be null.
///
/// # Safety
/// `store` must be a live handle; `buf` valid for `len` floats; `version`
/// null or writable.
#[no_mangle]
pub unsafe extern "C" fn ooc_store_read_block(
    store: *const OocStore,
    k: u32,
    buf: *mut f32,
    len: usize,
    version: *mut u64,
) -> OocStatus {
    guard(|| {
        let s = store_ref(store)?;
        if buf.is_null() {
            return Err(Fail::Null("buf"));
        }
        let want = s.store.config().floats_per_block();
        if len != want {
            return Err(Error::Shape(format!("buffer holds {len} floats, a block has {want}")).into());
        }
        let b = s.store.read_block(k)?;
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(&b.values);
        if let Some(v) = version.as_mut() {
            *v = b.version;
        }
        Ok(())
    })
}

/// Appends a new version of block `k` to the patch log.
///
/// # Safety
/// `store` must be a live handle; `values` valid for `len` floats.
#[no_mangle]
pub unsafe extern "C" fn ooc_store_append_block(store: *mut OocStore, k: u32, values: *const f32, len: usize) -> OocStatus {
    guard(|| {
        let s = store_ref(store)?;
        if values.is_null() {
            return Err(Fail::Null("values"));
        }
        let payload = BlockPayload {
            block_id: k,
            values: std::slice::from_raw_parts(values, len).to_vec(),
            version: 0,
        };
        s.store.append_patch(&[payload])?;
        Ok(())
    })
}

/// # Safety
/// `store` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ooc_store_index_entry(store: *const OocStore, k: u32, out: *mut OocIndexEntry) -> OocStatus {
    guard(|| {
        let s = store_ref(store)?;
        let e = s.store.index_entry(k)?;
        *out_arg(out, "out")? = OocIndexEntry {
            file_id: e.file_id,
            offset: e.offset,
            size: e.size,
            version: e.version,
        };
        Ok(())
    })
}

/// Merges patch segments into a new base segment. `reclaimed` may be null.
///
/// # Safety
/// `store` must be a live handle not used concurrently; `reclaimed` null or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ooc_store_compact(store: *mut OocStore, reclaimed: *mut u64) -> OocStatus {
    guard(|| {
        let s = store.as_mut().ok_or(Fail::Null("store"))?;
        let n = s.store.compact()?;
        if let Some(r) = reclaimed.as_mut() {
            *r = n;
        }
        Ok(())
    })
}

/// Runs training from a TOML run configuration and writes its report.
/// `final_psnr` may be null.
///
/// # Safety
/// `config_path` must be a NUL-terminated string; `final_psnr` null or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ooc_train(config_path: *const c_char, final_psnr: *mut f64) -> OocStatus {
    guard(|| {
        let path = path_arg(config_path, "config_path")?;
        let cfg = RunConfig::from_toml_file(&path)?;
        let out = cmd_train(&cfg)?;
        if let Some(p) = final_psnr.as_mut() {
            *p = out.report.final_psnr;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payload_bytes() {
        assert_eq!(ooc_block_payload_bytes(4096, 59), 966_656);
        assert_eq!(ooc_block_payload_bytes(0, 59), 0);
    }

    #[test]
    fn error_codes_map_by_kind() {
        assert_eq!(status_of(&Error::BlockOutOfRange { block: 9, k: 2 }), OocStatus::OutOfRange);
        assert_eq!(
            status_of(&Error::Staging(Box::new(Error::WorkingSetExceedsCapacity { needed: 3, capacity: 2 }))),
            OocStatus::Capacity
        );
    }
}
