use std::ffi::{c_char, CString};
use std::process::Command;
use std::ptr;

use oocsplat_ffi::*;

fn cstr(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { ooc_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

#[test]
fn create_append_read_compact_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let path = cstr(dir.path());
    let table: Vec<f32> = (0..10 * 3).map(|i| i as f32).collect();
    let mut store: *mut OocStore = ptr::null_mut();
    unsafe {
        assert_eq!(ooc_store_create(path.as_ptr(), 10, 3, 4, table.as_ptr(), table.len(), &mut store), OocStatus::Ok);
        let mut k = 0u32;
        assert_eq!(ooc_store_block_count(store, &mut k), OocStatus::Ok);
        assert_eq!(k, 3);
        let mut floats = 0usize;
        assert_eq!(ooc_store_block_floats(store, &mut floats), OocStatus::Ok);
        assert_eq!(floats, 12);

        let mut buf = vec![0f32; floats];
        let mut version = 99u64;
        assert_eq!(ooc_store_read_block(store, 2, buf.as_mut_ptr(), buf.len(), &mut version), OocStatus::Ok);
        assert_eq!(&buf[..6], &table[24..30]);
        assert!(buf[6..].iter().all(|&x| x == 0.0), "tail rows are zero padded");
        assert_eq!(version, 0);

        let new = vec![7.5f32; floats];
        assert_eq!(ooc_store_append_block(store, 1, new.as_ptr(), new.len()), OocStatus::Ok);
        let mut e = OocIndexEntry::default();
        assert_eq!(ooc_store_index_entry(store, 1, &mut e), OocStatus::Ok);
        assert_eq!(e.version, 1);
        assert_eq!(e.size, 48);

        let mut reclaimed = 0u64;
        assert_eq!(ooc_store_compact(store, &mut reclaimed), OocStatus::Ok);
        assert!(reclaimed > 0);
        ooc_store_free(store);

        let mut reopened: *mut OocStore = ptr::null_mut();
        assert_eq!(ooc_store_open(path.as_ptr(), &mut reopened), OocStatus::Ok);
        assert_eq!(ooc_store_read_block(reopened, 1, buf.as_mut_ptr(), buf.len(), ptr::null_mut()), OocStatus::Ok);
        assert_eq!(buf, new);
        ooc_store_free(reopened);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    let path = cstr(dir.path());
    let table = vec![0f32; 8];
    let mut store: *mut OocStore = ptr::null_mut();
    unsafe {
        assert_eq!(ooc_store_create(path.as_ptr(), 4, 2, 2, table.as_ptr(), table.len(), &mut store), OocStatus::Ok);
        let mut buf = vec![0f32; 4];
        assert_eq!(ooc_store_read_block(store, 5, buf.as_mut_ptr(), 4, ptr::null_mut()), OocStatus::OutOfRange);
        assert!(last_error().contains("block 5"), "{}", last_error());
        assert_eq!(ooc_store_read_block(store, 0, buf.as_mut_ptr(), 3, ptr::null_mut()), OocStatus::InvalidConfig);
        assert_eq!(ooc_store_block_count(ptr::null(), ptr::null_mut()), OocStatus::NullArg);
        ooc_store_free(store);

        let missing = cstr(&dir.path().join("nope"));
        let mut s2: *mut OocStore = ptr::null_mut();
        assert_eq!(ooc_store_open(missing.as_ptr(), &mut s2), OocStatus::Io);
        assert!(s2.is_null());

        let mut code = 0u64;
        assert_eq!(ooc_morton_code([2u64, 0, 0].as_ptr(), 3, &mut code), OocStatus::Ok);
        assert_eq!(code, 8);
        assert_eq!(ooc_morton_code([1u64 << 21, 0, 0].as_ptr(), 3, &mut code), OocStatus::OutOfRange);
    }
}

#[test]
fn truncated_message_is_terminated() {
    unsafe {
        ooc_store_block_count(ptr::null(), ptr::null_mut());
        let mut buf = [1 as c_char; 5];
        let full = ooc_last_error_message(buf.as_mut_ptr(), buf.len());
        assert!(full > 4);
        assert_eq!(buf[4], 0);
    }
}

#[test]
fn generated_header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/oocsplat.h");
    let text = std::fs::read_to_string(header).unwrap();
    for sym in ["ooc_store_open", "ooc_store_read_block", "ooc_train", "OOC_STATUS_CAPACITY", "typedef struct OocStore OocStore"] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    let Ok(out) = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c", header])
        .output()
    else {
        eprintln!("no C compiler on PATH; skipping syntax check");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
