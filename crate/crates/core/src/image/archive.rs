//! Deterministic directory archive (`BDA1`) used as the payload of data and
//! system partitions.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "BDA1" | entry_count u32 | entries...
//! entry := path_len u16 | path bytes | mode u32 | size u64 | content
//! ```
//!
//! `mode` carries the POSIX file-type bits (`S_IFDIR` or `S_IFREG`) together
//! with the permission bits. Entries are strictly sorted by path bytes and
//! carry no timestamps or ownership, so identical trees encode to identical
//! bytes.

use std::collections::HashSet;
use std::fs;
use std::io::{self, Write};
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const ARCHIVE_MAGIC: &[u8; 4] = b"BDA1";
/// Bytes taken by the magic and the entry count.
pub const ARCHIVE_HEADER_LEN: u64 = 8;
/// Per-entry framing excluding the path bytes: path length, mode and size.
pub const ENTRY_FRAMING_LEN: u64 = 2 + 4 + 8;

pub const S_IFMT: u32 = 0o170000;
pub const S_IFDIR: u32 = 0o040000;
pub const S_IFREG: u32 = 0o100000;
const PERM_MASK: u32 = 0o7777;

/// Archive framing cost for a set of entry paths.
pub fn framing_len<'a>(paths: impl IntoIterator<Item = &'a str>) -> u64 {
    ARCHIVE_HEADER_LEN
        + paths
            .into_iter()
            .map(|p| ENTRY_FRAMING_LEN + p.len() as u64)
            .sum::<u64>()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchiveEntry {
    pub path: String,
    pub mode: u32,
    pub content: Vec<u8>,
}

impl ArchiveEntry {
    pub fn dir(path: impl Into<String>, perm: u32) -> Self {
        ArchiveEntry {
            path: path.into(),
            mode: S_IFDIR | (perm & PERM_MASK),
            content: Vec::new(),
        }
    }

    pub fn file(path: impl Into<String>, perm: u32, content: Vec<u8>) -> Self {
        ArchiveEntry {
            path: path.into(),
            mode: S_IFREG | (perm & PERM_MASK),
            content,
        }
    }

    pub fn is_dir(&self) -> bool {
        self.mode & S_IFMT == S_IFDIR
    }

    pub fn permissions(&self) -> u32 {
        self.mode & PERM_MASK
    }
}

/// Borrowed view of one entry inside encoded archive bytes.
#[derive(Debug, Clone, Copy)]
pub struct EntryRef<'a> {
    pub path: &'a str,
    pub mode: u32,
    pub content: &'a [u8],
}

impl EntryRef<'_> {
    pub fn is_dir(&self) -> bool {
        self.mode & S_IFMT == S_IFDIR
    }
}

/// In-memory archive: a sorted list of entries.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DirArchive {
    entries: Vec<ArchiveEntry>,
}

impl DirArchive {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds an archive from entries in any order. Paths are validated and
    /// duplicates rejected.
    pub fn from_entries(mut entries: Vec<ArchiveEntry>) -> Result<Self> {
        entries.sort_by(|a, b| a.path.as_bytes().cmp(b.path.as_bytes()));
        for pair in entries.windows(2) {
            if pair[0].path == pair[1].path {
                return Err(Error::MalformedArchive(format!(
                    "duplicate entry {:?}",
                    pair[0].path
                )));
            }
        }
        for e in &entries {
            validate_path(&e.path)?;
            validate_mode(e.mode, e.content.len() as u64, &e.path)?;
        }
        Ok(DirArchive { entries })
    }

    pub fn entries(&self) -> &[ArchiveEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn from_dir(root: &Path) -> Result<Self> {
        let bytes = encode_dir(root)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let entries = parse_entries(bytes)?
            .into_iter()
            .map(|e| ArchiveEntry {
                path: e.path.to_owned(),
                mode: e.mode,
                content: e.content.to_vec(),
            })
            .collect();
        Ok(DirArchive { entries })
    }

    pub fn encoded_len(&self) -> u64 {
        framing_len(self.entries.iter().map(|e| e.path.as_str()))
            + self
                .entries
                .iter()
                .map(|e| e.content.len() as u64)
                .sum::<u64>()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len() as usize);
        write_header(&mut out, self.entries.len() as u32).expect("write to Vec");
        for e in &self.entries {
            write_entry(&mut out, &e.path, e.mode, &e.content).expect("write to Vec");
        }
        out
    }

    pub fn extract_to(&self, dest: &Path) -> Result<()> {
        let refs: Vec<EntryRef<'_>> = self
            .entries
            .iter()
            .map(|e| EntryRef {
                path: &e.path,
                mode: e.mode,
                content: &e.content,
            })
            .collect();
        extract_entries(&refs, dest)
    }
}

/// Encodes the contents of `root` (not `root` itself) into archive bytes.
pub fn encode_dir(root: &Path) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    encode_dir_to(root, &mut out)?;
    Ok(out)
}

/// Streaming form of [`encode_dir`]; returns the number of bytes written.
pub fn encode_dir_to<W: Write>(root: &Path, out: &mut W) -> Result<u64> {
    let meta = fs::metadata(root).map_err(|e| Error::io_at(root, e))?;
    if !meta.is_dir() {
        return Err(Error::io_at(
            root,
            io::Error::new(io::ErrorKind::NotADirectory, "not a directory"),
        ));
    }
    let mut paths = Vec::new();
    collect_tree(root, String::new(), &mut paths)?;
    paths.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));

    let count = u32::try_from(paths.len())
        .map_err(|_| Error::UnsupportedEntry(root.to_path_buf()))?;
    let mut written = ARCHIVE_HEADER_LEN;
    write_header(out, count)?;
    for (rel, abs, is_dir, perm) in &paths {
        if *is_dir {
            write_entry(out, rel, S_IFDIR | perm, &[])?;
            written += ENTRY_FRAMING_LEN + rel.len() as u64;
        } else {
            let content = fs::read(abs).map_err(|e| Error::io_at(abs, e))?;
            write_entry(out, rel, S_IFREG | perm, &content)?;
            written += ENTRY_FRAMING_LEN + rel.len() as u64 + content.len() as u64;
        }
    }
    Ok(written)
}

type TreeItem = (String, PathBuf, bool, u32);

fn collect_tree(dir: &Path, prefix: String, out: &mut Vec<TreeItem>) -> Result<()> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io_at(dir, e))?;
    for item in rd {
        let item = item.map_err(|e| Error::io_at(dir, e))?;
        let abs = item.path();
        let name = item
            .file_name()
            .into_string()
            .map_err(|_| Error::UnsupportedEntry(abs.clone()))?;
        let rel = if prefix.is_empty() {
            name
        } else {
            format!("{prefix}/{name}")
        };
        if rel.len() > u16::MAX as usize {
            return Err(Error::UnsupportedEntry(abs));
        }
        let meta = fs::symlink_metadata(&abs).map_err(|e| Error::io_at(&abs, e))?;
        let perm = meta.permissions().mode() & PERM_MASK;
        let ft = meta.file_type();
        if ft.is_dir() {
            out.push((rel.clone(), abs.clone(), true, perm));
            collect_tree(&abs, rel, out)?;
        } else if ft.is_file() {
            out.push((rel, abs, false, perm));
        } else {
            return Err(Error::UnsupportedEntry(abs));
        }
    }
    Ok(())
}

/// Decodes archive bytes into `dest`, creating it if needed.
pub fn decode_dir(bytes: &[u8], dest: &Path) -> Result<()> {
    let entries = parse_entries(bytes)?;
    extract_entries(&entries, dest)
}

/// Decodes only the entries below `prefix` into `dest`, with the prefix
/// stripped. An empty prefix decodes everything.
pub fn decode_subtree(bytes: &[u8], prefix: &str, dest: &Path) -> Result<()> {
    let entries = parse_entries(bytes)?;
    if prefix.is_empty() {
        return extract_entries(&entries, dest);
    }
    let below: Vec<EntryRef<'_>> = entries
        .iter()
        .filter_map(|e| {
            let rest = e.path.strip_prefix(prefix)?.strip_prefix('/')?;
            Some(EntryRef {
                path: rest,
                mode: e.mode,
                content: e.content,
            })
        })
        .collect();
    extract_entries(&below, dest)
}

/// Parses and validates archive bytes without touching the filesystem.
pub fn parse_entries(bytes: &[u8]) -> Result<Vec<EntryRef<'_>>> {
    let malformed = |m: &str| Error::MalformedArchive(m.to_owned());
    if bytes.len() < ARCHIVE_HEADER_LEN as usize {
        return Err(malformed("shorter than archive header"));
    }
    if &bytes[0..4] != ARCHIVE_MAGIC {
        return Err(malformed("bad magic"));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let mut pos = ARCHIVE_HEADER_LEN as usize;
    // Each entry needs at least its fixed framing; cap the reservation.
    let mut entries = Vec::with_capacity(count.min(bytes.len() / ENTRY_FRAMING_LEN as usize));
    let mut files: HashSet<&str> = HashSet::new();
    let take = |pos: &mut usize, n: usize| -> Result<std::ops::Range<usize>> {
        let end = pos
            .checked_add(n)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| malformed("entry runs past end of archive"))?;
        let r = *pos..end;
        *pos = end;
        Ok(r)
    };
    for _ in 0..count {
        let r = take(&mut pos, 2)?;
        let path_len = u16::from_le_bytes(bytes[r].try_into().unwrap()) as usize;
        let r = take(&mut pos, path_len)?;
        let path = std::str::from_utf8(&bytes[r]).map_err(|_| malformed("path is not UTF-8"))?;
        let r = take(&mut pos, 4)?;
        let mode = u32::from_le_bytes(bytes[r].try_into().unwrap());
        let r = take(&mut pos, 8)?;
        let size = u64::from_le_bytes(bytes[r].try_into().unwrap());
        let size = usize::try_from(size).map_err(|_| malformed("entry size overflows"))?;
        let r = take(&mut pos, size)?;
        let content = &bytes[r];

        validate_path(path)?;
        validate_mode(mode, size as u64, path)?;
        if let Some(prev) = entries.last() {
            let prev: &EntryRef<'_> = prev;
            if prev.path.as_bytes() >= path.as_bytes() {
                return Err(malformed("entries not strictly sorted"));
            }
        }
        if let Some((parent, _)) = path.rsplit_once('/') {
            if files.contains(parent) {
                return Err(malformed("entry nested under a regular file"));
            }
        }
        let entry = EntryRef {
            path,
            mode,
            content,
        };
        if !entry.is_dir() {
            files.insert(path);
        }
        entries.push(entry);
    }
    if pos != bytes.len() {
        return Err(malformed("trailing bytes after last entry"));
    }
    Ok(entries)
}

fn extract_entries(entries: &[EntryRef<'_>], dest: &Path) -> Result<()> {
    fs::create_dir_all(dest).map_err(|e| Error::io_at(dest, e))?;
    let mut dirs = Vec::new();
    for e in entries {
        let target = dest.join(e.path);
        if e.is_dir() {
            fs::create_dir_all(&target).map_err(|err| Error::io_at(&target, err))?;
            dirs.push((target, e.mode & PERM_MASK));
        } else {
            if let Some(parent) = target.parent() {
                fs::create_dir_all(parent).map_err(|err| Error::io_at(parent, err))?;
            }
            // Replace rather than truncate so read-only files can be overwritten.
            if fs::symlink_metadata(&target).is_ok() {
                fs::remove_file(&target).map_err(|err| Error::io_at(&target, err))?;
            }
            fs::write(&target, e.content).map_err(|err| Error::io_at(&target, err))?;
            fs::set_permissions(&target, fs::Permissions::from_mode(e.mode & PERM_MASK))
                .map_err(|err| Error::io_at(&target, err))?;
        }
    }
    // Deepest first, so restrictive parent modes never block a child.
    for (dir, perm) in dirs.into_iter().rev() {
        fs::set_permissions(&dir, fs::Permissions::from_mode(perm))
            .map_err(|err| Error::io_at(&dir, err))?;
    }
    Ok(())
}

fn write_header<W: Write>(out: &mut W, count: u32) -> io::Result<()> {
    out.write_all(ARCHIVE_MAGIC)?;
    out.write_all(&count.to_le_bytes())
}

fn write_entry<W: Write>(out: &mut W, path: &str, mode: u32, content: &[u8]) -> io::Result<()> {
    out.write_all(&(path.len() as u16).to_le_bytes())?;
    out.write_all(path.as_bytes())?;
    out.write_all(&mode.to_le_bytes())?;
    out.write_all(&(content.len() as u64).to_le_bytes())?;
    out.write_all(content)
}

/// Checks that `path` is a normalized relative path: no leading `/`, no
/// empty, `.` or `..` segments.
pub fn validate_path(path: &str) -> Result<()> {
    let bad = |why: &str| Error::MalformedArchive(format!("path {path:?}: {why}"));
    if path.is_empty() {
        return Err(bad("empty"));
    }
    if path.len() > u16::MAX as usize {
        return Err(bad("too long"));
    }
    if path.starts_with('/') {
        return Err(bad("absolute"));
    }
    if path.contains('\0') {
        return Err(bad("contains NUL"));
    }
    for seg in path.split('/') {
        match seg {
            "" => return Err(bad("empty segment")),
            "." | ".." => return Err(bad("relative segment")),
            _ => {}
        }
    }
    Ok(())
}

fn validate_mode(mode: u32, size: u64, path: &str) -> Result<()> {
    if mode & !(S_IFMT | PERM_MASK) != 0 {
        return Err(Error::MalformedArchive(format!("{path:?}: bad mode {mode:o}")));
    }
    match mode & S_IFMT {
        S_IFREG => Ok(()),
        S_IFDIR if size == 0 => Ok(()),
        S_IFDIR => Err(Error::MalformedArchive(format!(
            "{path:?}: directory with content"
        ))),
        _ => Err(Error::MalformedArchive(format!(
            "{path:?}: unsupported file type {mode:o}"
        ))),
    }
}
