//! Disk tier: one immutable base segment plus append-only patch segments,
//! with an in-memory index pointing at the newest version of every block.
//!
//! Layout (all integers little-endian, headers padded to 4096 bytes):
//!
//! ```text
//! base.tdgs         header | record 0 | record 1 | ...   (fixed B*D*4 payloads)
//! patch-NNNNNN.tdgp header | block_id u64 | version u64 | len u32 | payload | crc32 u32 | ...
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param_table::{block_payload_bytes, BlockId, BlockPayload, TableConfig};

pub const BASE_MAGIC: [u8; 4] = *b"TDGS";
pub const PATCH_MAGIC: [u8; 4] = *b"TDGP";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_SIZE: u64 = 4096;
/// block_id u64 + version u64 + payload_len u32.
pub const RECORD_HEADER_SIZE: u64 = 20;
pub const RECORD_TRAILER_SIZE: u64 = 4;
pub const BASE_FILE: &str = "base.tdgs";
pub const DEFAULT_SEGMENT_BUDGET: u64 = 256 * 1024 * 1024;

pub fn patch_file_name(file_id: u32) -> String {
    format!("patch-{file_id:06}.tdgp")
}

fn parse_patch_file_name(name: &str) -> Option<u32> {
    let id = name.strip_prefix("patch-")?.strip_suffix(".tdgp")?;
    if id.len() < 6 {
        return None;
    }
    id.parse().ok().filter(|&v| v > 0)
}

/// Pointer to the newest on-disk version of a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub file_id: u32,
    /// Byte offset of the payload (not the record header).
    pub offset: u64,
    pub size: u64,
    pub version: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentKind {
    Base,
    Patch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SegmentHeader {
    pub kind: SegmentKind,
    pub format_version: u32,
    pub file_id: u32,
    pub n: u64,
    pub d: u64,
    pub b: u64,
}

impl SegmentHeader {
    fn for_config(kind: SegmentKind, file_id: u32, cfg: &TableConfig) -> Self {
        Self {
            kind,
            format_version: FORMAT_VERSION,
            file_id,
            n: cfg.n_primitives(),
            d: cfg.dim() as u64,
            b: cfg.block_size() as u64,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = vec![0u8; HEADER_SIZE as usize];
        let magic = match self.kind {
            SegmentKind::Base => BASE_MAGIC,
            SegmentKind::Patch => PATCH_MAGIC,
        };
        buf[0..4].copy_from_slice(&magic);
        buf[4..8].copy_from_slice(&self.format_version.to_le_bytes());
        let kind: u32 = match self.kind {
            SegmentKind::Base => 0,
            SegmentKind::Patch => 1,
        };
        buf[8..12].copy_from_slice(&kind.to_le_bytes());
        buf[12..16].copy_from_slice(&self.file_id.to_le_bytes());
        buf[16..24].copy_from_slice(&self.n.to_le_bytes());
        buf[24..32].copy_from_slice(&self.d.to_le_bytes());
        buf[32..40].copy_from_slice(&self.b.to_le_bytes());
        buf
    }

    pub fn decode(buf: &[u8], path: &Path) -> Result<Self> {
        if buf.len() < HEADER_SIZE as usize {
            return Err(Error::corrupt(path, "short header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
        let kind = match (&buf[0..4], u32_at(8)) {
            (m, 0) if m == BASE_MAGIC => SegmentKind::Base,
            (m, 1) if m == PATCH_MAGIC => SegmentKind::Patch,
            _ => return Err(Error::corrupt(path, "bad magic")),
        };
        let header = Self {
            kind,
            format_version: u32_at(4),
            file_id: u32_at(12),
            n: u64_at(16),
            d: u64_at(24),
            b: u64_at(32),
        };
        if header.format_version != FORMAT_VERSION {
            return Err(Error::corrupt(
                path,
                format!("unsupported format version {}", header.format_version),
            ));
        }
        Ok(header)
    }

    fn table_config(&self, path: &Path) -> Result<TableConfig> {
        TableConfig::new(self.n, self.d as usize, self.b as usize)
            .map_err(|e| Error::corrupt(path, format!("header config: {e}")))
    }
}

#[derive(Clone, Debug)]
pub struct StoreOptions {
    /// A new patch segment starts once the current one would exceed this.
    pub segment_budget: u64,
    /// Artificial delay per block read, emulating device latency.
    pub read_latency: Duration,
    /// Artificial delay per appended record.
    pub write_latency: Duration,
}

impl Default for StoreOptions {
    fn default() -> Self {
        Self {
            segment_budget: DEFAULT_SEGMENT_BUDGET,
            read_latency: Duration::ZERO,
            write_latency: Duration::ZERO,
        }
    }
}

#[derive(Debug, Default)]
struct Counters {
    reads: AtomicU64,
    bytes_read: AtomicU64,
    records_written: AtomicU64,
    bytes_written: AtomicU64,
    backward_writes: AtomicU64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreStats {
    pub reads: u64,
    pub bytes_read: u64,
    pub records_written: u64,
    pub bytes_written: u64,
    /// Writes that landed below the segment's previous end; always 0.
    pub backward_writes: u64,
}

struct ActiveSegment {
    file_id: u32,
    file: Arc<File>,
    end: u64,
}

struct Writer {
    active: Option<ActiveSegment>,
    next_file_id: u32,
}

/// What `recover_index` found on disk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Recovered {
    pub config: TableConfig,
    pub index: Vec<IndexEntry>,
    pub patch_ids: Vec<u32>,
    /// Bytes of a torn trailing record dropped from the newest patch.
    pub dropped_tail_bytes: u64,
    /// (file_id, valid length) of the newest patch when its tail was torn.
    pub torn_patch: Option<(u32, u64)>,
}

pub struct Store {
    dir: PathBuf,
    cfg: TableConfig,
    opts: StoreOptions,
    segments: RwLock<BTreeMap<u32, Arc<File>>>,
    index: RwLock<Vec<IndexEntry>>,
    writer: Mutex<Writer>,
    counters: Counters,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store")
            .field("dir", &self.dir)
            .field("cfg", &self.cfg)
            .finish_non_exhaustive()
    }
}

fn base_offset(cfg: &TableConfig, k: BlockId) -> u64 {
    HEADER_SIZE + k as u64 * block_payload_bytes(cfg)
}

/// Writes header and records; `versions`, when given, is appended after the
/// last record (K little-endian u64) so compaction keeps per-block versions.
fn write_base_file(
    path: &Path,
    cfg: &TableConfig,
    versions: Option<&[u64]>,
    mut block: impl FnMut(BlockId) -> Result<Vec<f32>>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = SegmentHeader::for_config(SegmentKind::Base, 0, cfg);
    w.write_all(&header.encode()).map_err(|e| Error::io(path, e))?;
    let floats = cfg.floats_per_block();
    let mut bytes = Vec::with_capacity(floats * 4);
    for k in 0..cfg.k_blocks() {
        let values = block(k)?;
        if values.len() != floats {
            return Err(Error::Shape(format!("block {k} has {} floats, expected {floats}", values.len())));
        }
        bytes.clear();
        for v in &values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    }
    if let Some(vs) = versions {
        for v in vs {
            w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
        }
    }
    let file = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    file.sync_all().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn encode_record(k: BlockId, version: u64, payload: &[u8]) -> Vec<u8> {
    let mut rec = Vec::with_capacity(payload.len() + (RECORD_HEADER_SIZE + RECORD_TRAILER_SIZE) as usize);
    rec.extend_from_slice(&(k as u64).to_le_bytes());
    rec.extend_from_slice(&version.to_le_bytes());
    rec.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    rec.extend_from_slice(payload);
    let crc = crc32fast::hash(&rec);
    rec.extend_from_slice(&crc.to_le_bytes());
    rec
}

/// Rebuilds the index by scanning the base and every patch segment in
/// file-id order; later records win. A torn record at the end of the newest
/// patch is dropped, anything else malformed is an error.
pub fn recover_index(dir: &Path) -> Result<Recovered> {
    let base_path = dir.join(BASE_FILE);
    let mut base = File::open(&base_path).map_err(|e| Error::io(&base_path, e))?;
    let mut hbuf = vec![0u8; HEADER_SIZE as usize];
    base.read_exact(&mut hbuf).map_err(|e| Error::io(&base_path, e))?;
    let header = SegmentHeader::decode(&hbuf, &base_path)?;
    if header.kind != SegmentKind::Base {
        return Err(Error::corrupt(&base_path, "base file has a patch header"));
    }
    let cfg = header.table_config(&base_path)?;
    let payload = block_payload_bytes(&cfg);
    let expected_len = HEADER_SIZE + cfg.k_blocks() as u64 * payload;
    let with_versions = expected_len + cfg.k_blocks() as u64 * 8;
    let actual_len = base.metadata().map_err(|e| Error::io(&base_path, e))?.len();
    let mut versions = vec![0u64; cfg.k_blocks() as usize];
    if actual_len == with_versions {
        let mut buf = vec![0u8; versions.len() * 8];
        base.seek(SeekFrom::Start(expected_len)).map_err(|e| Error::io(&base_path, e))?;
        base.read_exact(&mut buf).map_err(|e| Error::io(&base_path, e))?;
        for (v, b) in versions.iter_mut().zip(buf.chunks_exact(8)) {
            *v = u64::from_le_bytes(b.try_into().expect("8 bytes"));
        }
    } else if actual_len != expected_len {
        return Err(Error::corrupt(
            &base_path,
            format!("base is {actual_len} bytes, expected {expected_len}"),
        ));
    }
    let mut index: Vec<IndexEntry> = (0..cfg.k_blocks())
        .map(|k| IndexEntry {
            file_id: 0,
            offset: base_offset(&cfg, k),
            size: payload,
            version: versions[k as usize],
        })
        .collect();

    let patch_ids = list_patch_ids(dir)?;
    let mut dropped_tail_bytes = 0;
    let mut valid_end = None;
    for (pos, &id) in patch_ids.iter().enumerate() {
        let newest = pos + 1 == patch_ids.len();
        let path = dir.join(patch_file_name(id));
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let file_len = file.metadata().map_err(|e| Error::io(&path, e))?.len();
        let mut r = BufReader::new(file);
        r.read_exact(&mut hbuf).map_err(|e| Error::io(&path, e))?;
        let ph = SegmentHeader::decode(&hbuf, &path)?;
        if ph.kind != SegmentKind::Patch || ph.file_id != id || ph.d != cfg.dim() as u64 || ph.b != cfg.block_size() as u64
        {
            return Err(Error::corrupt(&path, "patch header does not match base"));
        }
        let mut at = HEADER_SIZE;
        let mut rec_head = [0u8; RECORD_HEADER_SIZE as usize];
        let mut body = vec![0u8; payload as usize + RECORD_TRAILER_SIZE as usize];
        while at < file_len {
            let torn = |at: u64| -> Result<u64> {
                if newest {
                    Ok(file_len - at)
                } else {
                    Err(Error::corrupt(&path, format!("truncated record at offset {at}")))
                }
            };
            if let Err(e) = r.read_exact(&mut rec_head) {
                if e.kind() == io::ErrorKind::UnexpectedEof {
                    dropped_tail_bytes += torn(at)?;
                    valid_end = Some((id, at));
                    break;
                }
                return Err(Error::io(&path, e));
            }
            let k = u64::from_le_bytes(rec_head[0..8].try_into().unwrap());
            let version = u64::from_le_bytes(rec_head[8..16].try_into().unwrap());
            let len = u32::from_le_bytes(rec_head[16..20].try_into().unwrap()) as u64;
            if len != payload {
                return Err(Error::corrupt(&path, format!("record at {at} has payload length {len}")));
            }
            if let Err(e) = r.read_exact(&mut body) {
                if e.kind() == io::ErrorKind::UnexpectedEof {
                    dropped_tail_bytes += torn(at)?;
                    valid_end = Some((id, at));
                    break;
                }
                return Err(Error::io(&path, e));
            }
            let mut hasher = crc32fast::Hasher::new();
            hasher.update(&rec_head);
            hasher.update(&body[..payload as usize]);
            let stored = u32::from_le_bytes(body[payload as usize..].try_into().unwrap());
            if hasher.finalize() != stored {
                return Err(Error::corrupt(&path, format!("checksum mismatch at offset {at}")));
            }
            if k >= cfg.k_blocks() as u64 {
                return Err(Error::corrupt(&path, format!("record at {at} names block {k}")));
            }
            let slot = &mut index[k as usize];
            if version <= slot.version {
                return Err(Error::corrupt(
                    &path,
                    format!("block {k} version {version} does not supersede {}", slot.version),
                ));
            }
            *slot = IndexEntry {
                file_id: id,
                offset: at + RECORD_HEADER_SIZE,
                size: payload,
                version,
            };
            at += RECORD_HEADER_SIZE + payload + RECORD_TRAILER_SIZE;
        }
    }
    Ok(Recovered {
        config: cfg,
        index,
        patch_ids,
        dropped_tail_bytes,
        torn_patch: valid_end,
    })
}

fn list_patch_ids(dir: &Path) -> Result<Vec<u32>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if let Some(id) = entry.file_name().to_str().and_then(parse_patch_file_name) {
            ids.push(id);
        }
    }
    ids.sort_unstable();
    Ok(ids)
}

impl Store {
    /// Writes the immutable base segment from a dense row-major N x D table.
    pub fn write_base(dir: &Path, cfg: TableConfig, table: &[f32], opts: StoreOptions) -> Result<Self> {
        let expected = cfg.n_primitives() as usize * cfg.dim();
        if table.len() != expected {
            return Err(Error::Shape(format!(
                "table has {} floats, config needs {expected}",
                table.len()
            )));
        }
        Self::write_base_with(dir, cfg, opts, |k| Ok(BlockPayload::from_table(table, k, &cfg).values))
    }

    /// Writes the base segment block by block from a producer.
    pub fn write_base_with(
        dir: &Path,
        cfg: TableConfig,
        opts: StoreOptions,
        block: impl FnMut(BlockId) -> Result<Vec<f32>>,
    ) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for id in list_patch_ids(dir)? {
            let p = dir.join(patch_file_name(id));
            fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
        }
        write_base_file(&dir.join(BASE_FILE), &cfg, None, block)?;
        Self::open(dir, opts)
    }

    /// Opens an existing store, rebuilding the index from disk. A torn tail
    /// on the newest patch is truncated away so later appends stay readable.
    pub fn open(dir: &Path, opts: StoreOptions) -> Result<Self> {
        let rec = recover_index(dir)?;
        if let Some((id, len)) = rec.torn_patch {
            let p = dir.join(patch_file_name(id));
            let f = OpenOptions::new().write(true).open(&p).map_err(|e| Error::io(&p, e))?;
            f.set_len(len).map_err(|e| Error::io(&p, e))?;
        }
        let mut segments = BTreeMap::new();
        let base_path = dir.join(BASE_FILE);
        segments.insert(
            0,
            Arc::new(File::open(&base_path).map_err(|e| Error::io(&base_path, e))?),
        );
        for &id in &rec.patch_ids {
            let p = dir.join(patch_file_name(id));
            segments.insert(id, Arc::new(File::open(&p).map_err(|e| Error::io(&p, e))?));
        }
        let next_file_id = rec.patch_ids.last().copied().unwrap_or(0) + 1;
        Ok(Self {
            dir: dir.to_path_buf(),
            cfg: rec.config,
            opts,
            segments: RwLock::new(segments),
            index: RwLock::new(rec.index),
            writer: Mutex::new(Writer {
                active: None,
                next_file_id,
            }),
            counters: Counters::default(),
        })
    }

    pub fn config(&self) -> &TableConfig {
        &self.cfg
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn options(&self) -> &StoreOptions {
        &self.opts
    }

    pub fn set_latency(&mut self, read: Duration, write: Duration) {
        self.opts.read_latency = read;
        self.opts.write_latency = write;
    }

    pub fn index_entry(&self, k: BlockId) -> Result<IndexEntry> {
        self.cfg.check_block(k)?;
        Ok(self.index.read().unwrap()[k as usize])
    }

    pub fn index_snapshot(&self) -> Vec<IndexEntry> {
        self.index.read().unwrap().clone()
    }

    pub fn stats(&self) -> StoreStats {
        let c = &self.counters;
        StoreStats {
            reads: c.reads.load(Ordering::Relaxed),
            bytes_read: c.bytes_read.load(Ordering::Relaxed),
            records_written: c.records_written.load(Ordering::Relaxed),
            bytes_written: c.bytes_written.load(Ordering::Relaxed),
            backward_writes: c.backward_writes.load(Ordering::Relaxed),
        }
    }

    pub fn patch_ids(&self) -> Vec<u32> {
        self.segments.read().unwrap().keys().copied().filter(|&id| id > 0).collect()
    }

    /// Total bytes across base and patch files.
    pub fn disk_bytes(&self) -> Result<u64> {
        let mut total = 0;
        for f in self.segments.read().unwrap().values() {
            total += f.metadata().map_err(|e| Error::io(&self.dir, e))?.len();
        }
        Ok(total)
    }

    /// Materializes the newest version of block `k`.
    pub fn read_block(&self, k: BlockId) -> Result<BlockPayload> {
        self.cfg.check_block(k)?;
        let entry = self.index.read().unwrap()[k as usize];
        let file = self
            .segments
            .read()
            .unwrap()
            .get(&entry.file_id)
            .cloned()
            .ok_or_else(|| Error::corrupt(&self.dir, format!("index names missing segment {}", entry.file_id)))?;
        if !self.opts.read_latency.is_zero() {
            std::thread::sleep(self.opts.read_latency);
        }
        let path = self.segment_path(entry.file_id);
        let values = if entry.file_id == 0 {
            let mut buf = vec![0u8; entry.size as usize];
            file.read_exact_at(&mut buf, entry.offset).map_err(|e| Error::io(&path, e))?;
            self.count_read(buf.len());
            BlockPayload::values_from_le_bytes(&buf)
        } else {
            let start = entry.offset - RECORD_HEADER_SIZE;
            let mut buf = vec![0u8; (RECORD_HEADER_SIZE + entry.size + RECORD_TRAILER_SIZE) as usize];
            file.read_exact_at(&mut buf, start).map_err(|e| Error::io(&path, e))?;
            self.count_read(buf.len());
            let stored_k = u64::from_le_bytes(buf[0..8].try_into().unwrap());
            let version = u64::from_le_bytes(buf[8..16].try_into().unwrap());
            if stored_k != k as u64 {
                return Err(Error::corrupt(
                    &path,
                    format!("record at {start} holds block {stored_k}, expected {k}"),
                ));
            }
            if version != entry.version {
                return Err(Error::corrupt(
                    &path,
                    format!("record at {start} has version {version}, index says {}", entry.version),
                ));
            }
            let body_end = buf.len() - RECORD_TRAILER_SIZE as usize;
            let stored_crc = u32::from_le_bytes(buf[body_end..].try_into().unwrap());
            if crc32fast::hash(&buf[..body_end]) != stored_crc {
                return Err(Error::corrupt(&path, format!("checksum mismatch at offset {start}")));
            }
            BlockPayload::values_from_le_bytes(&buf[RECORD_HEADER_SIZE as usize..body_end])
        };
        Ok(BlockPayload {
            block_id: k,
            values,
            version: entry.version,
        })
    }

    fn count_read(&self, n: usize) {
        self.counters.reads.fetch_add(1, Ordering::Relaxed);
        self.counters.bytes_read.fetch_add(n as u64, Ordering::Relaxed);
    }

    fn segment_path(&self, file_id: u32) -> PathBuf {
        if file_id == 0 {
            self.dir.join(BASE_FILE)
        } else {
            self.dir.join(patch_file_name(file_id))
        }
    }

    fn start_segment(&self, w: &mut Writer) -> Result<()> {
        let file_id = w.next_file_id;
        let path = self.segment_path(file_id);
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let header = SegmentHeader::for_config(SegmentKind::Patch, file_id, &self.cfg);
        file.write_all(&header.encode()).map_err(|e| Error::io(&path, e))?;
        let file = Arc::new(file);
        self.segments.write().unwrap().insert(file_id, file.clone());
        w.next_file_id += 1;
        w.active = Some(ActiveSegment {
            file_id,
            file,
            end: HEADER_SIZE,
        });
        Ok(())
    }

    /// Appends each block as a new version, in order, to the current patch
    /// segment (rolling over when the segment budget is reached). The index
    /// is updated only for records that were fully written.
    pub fn append_patch(&self, blocks: &[BlockPayload]) -> Result<()> {
        if blocks.is_empty() {
            return Ok(());
        }
        let payload = block_payload_bytes(&self.cfg);
        for b in blocks {
            self.cfg.check_block(b.block_id)?;
            if b.values.len() as u64 * 4 != payload {
                return Err(Error::Shape(format!(
                    "block {} payload has {} floats",
                    b.block_id,
                    b.values.len()
                )));
            }
        }
        let mut w = self.writer.lock().unwrap();
        let mut written: Vec<(BlockId, IndexEntry)> = Vec::with_capacity(blocks.len());
        let mut versions: BTreeMap<BlockId, u64> = BTreeMap::new();
        let result = (|| -> Result<()> {
            let index = self.index.read().unwrap().clone();
            for b in blocks {
                let prev = *versions.entry(b.block_id).or_insert(index[b.block_id as usize].version);
                let version = prev + 1;
                let rec = encode_record(b.block_id, version, &b.to_le_bytes());
                let rollover = match &w.active {
                    None => true,
                    Some(seg) => seg.end > HEADER_SIZE && seg.end + rec.len() as u64 > self.opts.segment_budget,
                };
                if rollover {
                    self.start_segment(&mut w)?;
                }
                let seg = w.active.as_mut().expect("segment started");
                let at = seg.end;
                seg.file
                    .write_all_at(&rec, at)
                    .map_err(|e| Error::io(self.segment_path(seg.file_id), e))?;
                seg.end += rec.len() as u64;
                if seg.end < at {
                    self.counters.backward_writes.fetch_add(1, Ordering::Relaxed);
                }
                self.counters.records_written.fetch_add(1, Ordering::Relaxed);
                self.counters.bytes_written.fetch_add(rec.len() as u64, Ordering::Relaxed);
                if !self.opts.write_latency.is_zero() {
                    std::thread::sleep(self.opts.write_latency);
                }
                versions.insert(b.block_id, version);
                written.push((
                    b.block_id,
                    IndexEntry {
                        file_id: seg.file_id,
                        offset: at + RECORD_HEADER_SIZE,
                        size: payload,
                        version,
                    },
                ));
            }
            Ok(())
        })();
        let mut index = self.index.write().unwrap();
        for (k, e) in written {
            index[k as usize] = e;
        }
        result
    }

    /// Merges all patch segments into a fresh base segment. Returns the
    /// number of bytes reclaimed. On failure the original files are intact.
    pub fn compact(&mut self) -> Result<u64> {
        if self.patch_ids().is_empty() {
            return Ok(0);
        }
        let before = self.disk_bytes()?;
        let tmp = self.dir.join(format!("{BASE_FILE}.compact"));
        let versions: Vec<u64> = self.index_snapshot().iter().map(|e| e.version).collect();
        let written = write_base_file(&tmp, &self.cfg, Some(&versions), |k| Ok(self.read_block(k)?.values));
        if let Err(e) = written {
            let _ = fs::remove_file(&tmp);
            return Err(e);
        }
        let base = self.dir.join(BASE_FILE);
        fs::rename(&tmp, &base).map_err(|e| Error::io(&base, e))?;
        for id in self.patch_ids() {
            let p = self.dir.join(patch_file_name(id));
            fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
        }
        let fresh = Store::open(&self.dir, self.opts.clone())?;
        let after = fresh.disk_bytes()?;
        *self = fresh;
        Ok(before.saturating_sub(after))
    }
}
