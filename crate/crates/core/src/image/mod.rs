//! The BOXI single-file partitioned image.
//!
//! ```text
//! Offset  Size  Field
//! 0       4     magic "BOXI"
//! 4       4     format_version (u32 LE) = 1
//! 8       16    image UUID (RFC-4122 v4)
//! 24      8     created_at (i64 LE, Unix seconds UTC)
//! 32      8     modified_at (i64 LE, Unix seconds UTC)
//! 40      4     descriptor_count (u32 LE)
//! 44      8     descriptor_table_offset (u64 LE)
//! 52      8     payload_offset (u64 LE)
//! ```
//!
//! Payloads follow the header back to back; the descriptor table
//! (`descriptor_count` records of 160 bytes) sits after the last payload so
//! that appending a partition only rewrites the table and the header.
//! Deleting a partition leaves a hole which is reclaimed when the image is
//! closed.

pub mod archive;
pub mod partition;

use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use uuid::Uuid;

use crate::error::{Error, Result};
use crate::timestamp;

pub use archive::{decode_dir, encode_dir, ArchiveEntry, DirArchive};
pub use partition::{
    Arch, DataType, FsType, PartType, PartitionDescriptor, PartitionKind, DESCRIPTOR_LEN,
};

pub const IMAGE_MAGIC: &[u8; 4] = b"BOXI";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 60;
/// Conventional file extension for images.
pub const IMAGE_EXTENSION: &str = "boxi";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageHeader {
    pub format_version: u32,
    pub uuid: Uuid,
    pub created_at: i64,
    pub modified_at: i64,
    pub descriptor_count: u32,
    pub descriptor_table_offset: u64,
    pub payload_offset: u64,
}

impl ImageHeader {
    fn fresh(now: i64) -> Self {
        ImageHeader {
            format_version: FORMAT_VERSION,
            uuid: Uuid::new_v4(),
            created_at: now,
            modified_at: now,
            descriptor_count: 0,
            descriptor_table_offset: HEADER_LEN as u64,
            payload_offset: HEADER_LEN as u64,
        }
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut buf = [0u8; HEADER_LEN];
        buf[0..4].copy_from_slice(IMAGE_MAGIC);
        buf[4..8].copy_from_slice(&self.format_version.to_le_bytes());
        buf[8..24].copy_from_slice(self.uuid.as_bytes());
        buf[24..32].copy_from_slice(&self.created_at.to_le_bytes());
        buf[32..40].copy_from_slice(&self.modified_at.to_le_bytes());
        buf[40..44].copy_from_slice(&self.descriptor_count.to_le_bytes());
        buf[44..52].copy_from_slice(&self.descriptor_table_offset.to_le_bytes());
        buf[52..60].copy_from_slice(&self.payload_offset.to_le_bytes());
        buf
    }

    /// Parses a header from the first bytes of a file. `bytes` may be
    /// shorter than [`HEADER_LEN`] so truncation can be told apart from a
    /// foreign file.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let n = bytes.len().min(4);
        if bytes[..n] != IMAGE_MAGIC[..n] || n == 0 {
            return Err(Error::NotABoxImage);
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::TruncatedImage(format!(
                "{} header bytes, need {HEADER_LEN}",
                bytes.len()
            )));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let i64_at = |o: usize| i64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let header = ImageHeader {
            format_version: u32_at(4),
            uuid: Uuid::from_bytes(bytes[8..24].try_into().unwrap()),
            created_at: i64_at(24),
            modified_at: i64_at(32),
            descriptor_count: u32_at(40),
            descriptor_table_offset: u64_at(44),
            payload_offset: u64_at(52),
        };
        if header.format_version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(header.format_version));
        }
        if header.modified_at < header.created_at {
            return Err(Error::MalformedImage("modified_at precedes created_at".into()));
        }
        if header.payload_offset < HEADER_LEN as u64
            || header.descriptor_table_offset < header.payload_offset
        {
            return Err(Error::MalformedImage("header offsets out of order".into()));
        }
        Ok(header)
    }
}

/// Everything `describe` reports about an image.
#[derive(Debug, Clone, Serialize)]
pub struct ImageDescription {
    pub name: String,
    pub uuid: String,
    pub format_version: u32,
    pub created_at: i64,
    pub modified_at: i64,
    pub created: String,
    pub modified: String,
    pub descriptor_count: u32,
    pub partitions: Vec<PartitionInfo>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PartitionInfo {
    pub id: u32,
    pub name: String,
    pub datatype: u32,
    pub fstype: u32,
    pub parttype: u32,
    pub arch: u32,
    pub kind: PartitionKind,
    pub offset: u64,
    pub size: u64,
    pub checksum: String,
}

impl From<&PartitionDescriptor> for PartitionInfo {
    fn from(d: &PartitionDescriptor) -> Self {
        PartitionInfo {
            id: d.id,
            name: d.name.clone(),
            datatype: d.kind.datatype.code(),
            fstype: d.kind.fstype.code(),
            parttype: d.kind.parttype.code(),
            arch: d.kind.arch.code(),
            kind: d.kind,
            offset: d.payload_offset,
            size: d.payload_size,
            checksum: d.checksum_hex(),
        }
    }
}

/// Validates an image name, which doubles as the file-name stem.
pub fn validate_image_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name.len() <= 255
        && name != "."
        && name != ".."
        && !name.contains(['/', '\0']);
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidName(name.to_owned()))
    }
}

fn stem_of(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_owned)
        .ok_or_else(|| Error::InvalidName(path.display().to_string()))
}

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

/// An open image file. Holds at most one writer; read-only handles reject
/// mutation.
#[derive(Debug)]
pub struct BoxImage {
    path: PathBuf,
    file: File,
    writable: bool,
    header: ImageHeader,
    descriptors: Vec<PartitionDescriptor>,
    has_holes: bool,
}

impl BoxImage {
    /// Creates a new empty image at `path`; the image name is the file stem.
    /// An existing file at `path` is replaced.
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        validate_image_name(&stem_of(&path)?)?;
        let header = ImageHeader::fresh(timestamp::now_unix());
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(true)
            .open(&path)
            .map_err(|e| Error::io_at(&path, e))?;
        file.write_all(&header.to_bytes())
            .map_err(|e| Error::io_at(&path, e))?;
        Ok(BoxImage {
            path,
            file,
            writable: true,
            header,
            descriptors: Vec::new(),
            has_holes: false,
        })
    }

    /// Creates `<dir>/<name>.boxi`.
    pub fn create_named(dir: impl AsRef<Path>, name: &str) -> Result<Self> {
        validate_image_name(name)?;
        Self::create(dir.as_ref().join(format!("{name}.{IMAGE_EXTENSION}")))
    }

    /// Opens an existing image for reading and writing.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::open_with(path.as_ref(), true)
    }

    /// Opens an existing image read-only.
    pub fn open_read(path: impl AsRef<Path>) -> Result<Self> {
        Self::open_with(path.as_ref(), false)
    }

    fn open_with(path: &Path, writable: bool) -> Result<Self> {
        let mut file = OpenOptions::new()
            .read(true)
            .write(writable)
            .open(path)
            .map_err(|e| Error::io_at(path, e))?;
        let (header, descriptors) = read_layout(&mut file)?;
        let has_holes = compute_has_holes(&header, &descriptors);
        Ok(BoxImage {
            path: path.to_path_buf(),
            file,
            writable,
            header,
            descriptors,
            has_holes,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn name(&self) -> String {
        stem_of(&self.path).unwrap_or_default()
    }

    pub fn header(&self) -> &ImageHeader {
        &self.header
    }

    pub fn uuid(&self) -> Uuid {
        self.header.uuid
    }

    pub fn created_at(&self) -> i64 {
        self.header.created_at
    }

    pub fn modified_at(&self) -> i64 {
        self.header.modified_at
    }

    pub fn descriptors(&self) -> &[PartitionDescriptor] {
        &self.descriptors
    }

    pub fn descriptor(&self, id: u32) -> Result<&PartitionDescriptor> {
        self.descriptors
            .iter()
            .find(|d| d.id == id)
            .ok_or(Error::NoSuchPartition(id))
    }

    /// Descriptors with the given part type, in id order.
    pub fn partitions_of(&self, parttype: PartType) -> impl Iterator<Item = &PartitionDescriptor> {
        self.descriptors
            .iter()
            .filter(move |d| d.kind.parttype == parttype)
    }

    pub fn describe(&self) -> ImageDescription {
        ImageDescription {
            name: self.name(),
            uuid: self.header.uuid.hyphenated().to_string(),
            format_version: self.header.format_version,
            created_at: self.header.created_at,
            modified_at: self.header.modified_at,
            created: timestamp::to_iso8601(self.header.created_at),
            modified: timestamp::to_iso8601(self.header.modified_at),
            descriptor_count: self.header.descriptor_count,
            partitions: self.descriptors.iter().map(PartitionInfo::from).collect(),
        }
    }

    fn ensure_writable(&self) -> Result<()> {
        if self.writable {
            Ok(())
        } else {
            Err(Error::io_at(
                &self.path,
                io::Error::new(io::ErrorKind::PermissionDenied, "image opened read-only"),
            ))
        }
    }

    fn touch(&mut self) {
        self.header.modified_at = self.header.modified_at.max(timestamp::now_unix());
    }

    fn next_id(&self) -> u32 {
        self.descriptors.iter().map(|d| d.id).max().unwrap_or(0) + 1
    }

    fn check_primary(&self, kind: &PartitionKind) -> Result<()> {
        if kind.parttype == PartType::SystemPrimary
            && self
                .descriptors
                .iter()
                .any(|d| d.kind.parttype == PartType::SystemPrimary)
        {
            return Err(Error::DuplicatePrimary);
        }
        Ok(())
    }

    /// Appends a partition and returns its id.
    pub fn add_partition(&mut self, payload: &[u8], kind: PartitionKind, name: &str) -> Result<u32> {
        self.ensure_writable()?;
        partition::validate_partition_name(name)?;
        self.check_primary(&kind)?;

        let offset = self.payload_end();
        let descriptor = PartitionDescriptor {
            id: self.next_id(),
            kind,
            name: name.to_owned(),
            payload_offset: offset,
            payload_size: payload.len() as u64,
            checksum: sha256(payload),
        };
        let id = descriptor.id;
        self.write_at(offset, payload)?;
        self.descriptors.push(descriptor);
        self.touch();
        self.flush_table(offset + payload.len() as u64)?;
        Ok(id)
    }

    /// Adds a partition from raw numeric codes, as the CLI receives them.
    pub fn add_partition_codes(
        &mut self,
        payload: &[u8],
        datatype: u32,
        fstype: u32,
        parttype: u32,
        arch: u32,
        name: &str,
    ) -> Result<u32> {
        let kind = PartitionKind::from_codes(datatype, fstype, parttype, arch)?;
        self.add_partition(payload, kind, name)
    }

    /// Reads a payload and verifies its checksum. Never changes the header.
    pub fn dump_partition(&mut self, id: u32) -> Result<Vec<u8>> {
        let d = self.descriptor(id)?.clone();
        let mut buf = vec![0u8; d.payload_size as usize];
        self.file
            .seek(SeekFrom::Start(d.payload_offset))
            .and_then(|_| self.file.read_exact(&mut buf))
            .map_err(|e| truncation_or_io(&self.path, e))?;
        if sha256(&buf) != d.checksum {
            return Err(Error::CorruptPartition { id });
        }
        Ok(buf)
    }

    /// Streams a payload into `out`, verifying the checksum once all bytes
    /// have been written. On mismatch `out` has received corrupt bytes and
    /// must be discarded by the caller.
    pub fn dump_partition_to<W: Write>(&mut self, id: u32, out: &mut W) -> Result<u64> {
        let d = self.descriptor(id)?.clone();
        self.file
            .seek(SeekFrom::Start(d.payload_offset))
            .map_err(|e| Error::io_at(&self.path, e))?;
        let mut hasher = Sha256::new();
        let mut remaining = d.payload_size;
        let mut buf = vec![0u8; 1 << 20];
        while remaining > 0 {
            let n = remaining.min(buf.len() as u64) as usize;
            self.file
                .read_exact(&mut buf[..n])
                .map_err(|e| truncation_or_io(&self.path, e))?;
            hasher.update(&buf[..n]);
            out.write_all(&buf[..n])?;
            remaining -= n as u64;
        }
        let digest: [u8; 32] = hasher.finalize().into();
        if digest != d.checksum {
            return Err(Error::CorruptPartition { id });
        }
        Ok(d.payload_size)
    }

    /// Removes a descriptor. The payload bytes stay in place until the image
    /// is closed, when the file is compacted.
    pub fn delete_partition(&mut self, id: u32) -> Result<()> {
        self.ensure_writable()?;
        let idx = self
            .descriptors
            .iter()
            .position(|d| d.id == id)
            .ok_or(Error::NoSuchPartition(id))?;
        self.descriptors.remove(idx);
        self.has_holes = true;
        self.touch();
        let end = self.header.descriptor_table_offset;
        self.flush_table(end)
    }

    /// Replaces a partition payload by writing a complete new image next to
    /// the old one and renaming it into place. A crash leaves either the old
    /// or the new file, never a mix. Id, type codes and name are kept.
    pub fn replace_partition(&mut self, id: u32, payload: &[u8]) -> Result<()> {
        self.ensure_writable()?;
        self.descriptor(id)?;
        self.touch();
        self.rewrite(Some((id, payload)))
    }

    /// Compacts the file if any partition was deleted. Also done on drop,
    /// where errors are ignored.
    pub fn close(mut self) -> Result<()> {
        self.compact_if_needed()
    }

    fn compact_if_needed(&mut self) -> Result<()> {
        if self.writable && self.has_holes {
            self.rewrite(None)?;
        }
        Ok(())
    }

    /// Verifies every partition checksum.
    pub fn verify(&mut self) -> Result<()> {
        let ids: Vec<u32> = self.descriptors.iter().map(|d| d.id).collect();
        for id in ids {
            self.dump_partition_to(id, &mut io::sink())?;
        }
        Ok(())
    }

    fn payload_end(&self) -> u64 {
        self.descriptors
            .iter()
            .map(PartitionDescriptor::payload_end)
            .max()
            .unwrap_or(self.header.payload_offset)
            .max(self.header.payload_offset)
    }

    fn write_at(&mut self, offset: u64, bytes: &[u8]) -> Result<()> {
        self.file
            .seek(SeekFrom::Start(offset))
            .and_then(|_| self.file.write_all(bytes))
            .map_err(|e| Error::io_at(&self.path, e))
    }

    fn flush_table(&mut self, table_offset: u64) -> Result<()> {
        let table = encode_table(&self.descriptors);
        self.header.descriptor_count = self.descriptors.len() as u32;
        self.header.descriptor_table_offset = table_offset;
        self.write_at(table_offset, &table)?;
        self.file
            .set_len(table_offset + table.len() as u64)
            .map_err(|e| Error::io_at(&self.path, e))?;
        let header = self.header.to_bytes();
        self.write_at(0, &header)
    }

    fn rewrite(&mut self, replacement: Option<(u32, &[u8])>) -> Result<()> {
        let dir = self
            .path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        let mut tmp = tempfile::Builder::new()
            .prefix(".boxi-")
            .suffix(".tmp")
            .tempfile_in(dir)
            .map_err(|e| Error::io_at(dir, e))?;

        let mut header = self.header;
        header.payload_offset = HEADER_LEN as u64;
        let mut offset = HEADER_LEN as u64;
        let mut new_descriptors = Vec::with_capacity(self.descriptors.len());
        {
            let out = tmp.as_file_mut();
            out.write_all(&[0u8; HEADER_LEN])?;
            for d in &self.descriptors {
                let mut nd = d.clone();
                nd.payload_offset = offset;
                match replacement {
                    Some((id, payload)) if id == d.id => {
                        out.write_all(payload)?;
                        nd.payload_size = payload.len() as u64;
                        nd.checksum = sha256(payload);
                    }
                    _ => {
                        self.file
                            .seek(SeekFrom::Start(d.payload_offset))
                            .map_err(|e| Error::io_at(&self.path, e))?;
                        let copied = io::copy(&mut Read::by_ref(&mut self.file).take(d.payload_size), out)?;
                        if copied != d.payload_size {
                            return Err(Error::TruncatedImage(format!(
                                "partition {} payload short by {} bytes",
                                d.id,
                                d.payload_size - copied
                            )));
                        }
                    }
                }
                offset += nd.payload_size;
                new_descriptors.push(nd);
            }
            header.descriptor_count = new_descriptors.len() as u32;
            header.descriptor_table_offset = offset;
            out.write_all(&encode_table(&new_descriptors))?;
            out.seek(SeekFrom::Start(0))?;
            out.write_all(&header.to_bytes())?;
            out.sync_all()?;
        }
        if let Ok(meta) = fs::metadata(&self.path) {
            // Keep the original file's permissions across the rename.
            let _ = fs::set_permissions(tmp.path(), meta.permissions());
        }
        let file = tmp
            .persist(&self.path)
            .map_err(|e| Error::io_at(&self.path, e.error))?;
        self.file = file;
        self.header = header;
        self.descriptors = new_descriptors;
        self.has_holes = false;
        Ok(())
    }
}

impl Drop for BoxImage {
    fn drop(&mut self) {
        let _ = self.compact_if_needed();
    }
}

fn encode_table(descriptors: &[PartitionDescriptor]) -> Vec<u8> {
    let mut table = Vec::with_capacity(descriptors.len() * DESCRIPTOR_LEN);
    for d in descriptors {
        table.extend_from_slice(&d.to_bytes());
    }
    table
}

fn truncation_or_io(path: &Path, e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::TruncatedImage("payload extends past end of file".into())
    } else {
        Error::io_at(path, e)
    }
}

fn compute_has_holes(header: &ImageHeader, descriptors: &[PartitionDescriptor]) -> bool {
    let mut regions: Vec<(u64, u64)> = descriptors
        .iter()
        .map(|d| (d.payload_offset, d.payload_end()))
        .collect();
    regions.sort_unstable();
    let mut cursor = header.payload_offset;
    for (start, end) in regions {
        if start != cursor {
            return true;
        }
        cursor = end;
    }
    cursor != header.descriptor_table_offset
}

fn read_layout(file: &mut File) -> Result<(ImageHeader, Vec<PartitionDescriptor>)> {
    let len = file.metadata()?.len();
    let mut head = Vec::with_capacity(HEADER_LEN);
    file.seek(SeekFrom::Start(0))?;
    Read::by_ref(file).take(HEADER_LEN as u64).read_to_end(&mut head)?;
    let header = ImageHeader::parse(&head)?;

    let table_len = header.descriptor_count as u64 * DESCRIPTOR_LEN as u64;
    if header.descriptor_table_offset + table_len > len {
        return Err(Error::TruncatedImage(format!(
            "descriptor table ends at {} but file has {len} bytes",
            header.descriptor_table_offset + table_len
        )));
    }
    file.seek(SeekFrom::Start(header.descriptor_table_offset))?;
    let mut descriptors = Vec::with_capacity(header.descriptor_count as usize);
    let mut record = [0u8; DESCRIPTOR_LEN];
    for _ in 0..header.descriptor_count {
        file.read_exact(&mut record)?;
        descriptors.push(PartitionDescriptor::from_bytes(&record)?);
    }
    validate_descriptors(&header, &descriptors)?;
    Ok((header, descriptors))
}

fn validate_descriptors(header: &ImageHeader, descriptors: &[PartitionDescriptor]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    let mut primaries = 0;
    let mut regions = Vec::with_capacity(descriptors.len());
    for d in descriptors {
        if d.id == 0 || !seen.insert(d.id) {
            return Err(Error::MalformedImage(format!("bad or duplicate partition id {}", d.id)));
        }
        if d.kind.parttype == PartType::SystemPrimary {
            primaries += 1;
        }
        let end = d
            .payload_offset
            .checked_add(d.payload_size)
            .ok_or_else(|| Error::MalformedImage("payload size overflows".into()))?;
        if d.payload_offset < header.payload_offset {
            return Err(Error::MalformedImage(format!(
                "partition {} starts before the payload area",
                d.id
            )));
        }
        if end > header.descriptor_table_offset {
            return Err(Error::TruncatedImage(format!(
                "partition {} runs into the descriptor table",
                d.id
            )));
        }
        regions.push((d.payload_offset, end));
    }
    if primaries > 1 {
        return Err(Error::MalformedImage("more than one system-primary partition".into()));
    }
    regions.sort_unstable();
    if regions.windows(2).any(|w| w[0].1 > w[1].0) {
        return Err(Error::MalformedImage("partition payloads overlap".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn fresh_image_is_empty_and_v4() {
        let dir = tmp();
        let img = BoxImage::create_named(dir.path(), "input").unwrap();
        let desc = img.describe();
        assert_eq!(desc.descriptor_count, 0);
        assert_eq!(desc.created_at, desc.modified_at);
        assert_eq!(img.uuid().get_version_num(), 4);
        assert_eq!(img.uuid().get_variant(), uuid::Variant::RFC4122);
        assert_eq!(fs::metadata(img.path()).unwrap().len(), HEADER_LEN as u64);
        assert_eq!(desc.name, "input");
    }

    #[test]
    fn invalid_names_are_rejected() {
        let dir = tmp();
        for name in ["", ".", "..", "a/b", "a\0b"] {
            assert!(
                matches!(BoxImage::create_named(dir.path(), name), Err(Error::InvalidName(_))),
                "{name:?}"
            );
        }
    }

    #[test]
    fn sequential_ids_and_duplicate_primary() {
        let dir = tmp();
        let mut img = BoxImage::create_named(dir.path(), "app").unwrap();
        assert_eq!(img.add_partition(b"a", PartitionKind::SYSTEM_PRIMARY, "sys").unwrap(), 1);
        assert_eq!(img.add_partition(b"b", PartitionKind::DATA, "data").unwrap(), 2);
        assert!(matches!(
            img.add_partition(b"c", PartitionKind::SYSTEM_PRIMARY, "sys2"),
            Err(Error::DuplicatePrimary)
        ));
        assert!(matches!(
            img.add_partition_codes(b"", 9, 2, 3, 2, "x"),
            Err(Error::UnknownCode { .. })
        ));
    }

    #[test]
    fn reopen_preserves_everything() {
        let dir = tmp();
        let path = dir.path().join("out.boxi");
        let mut img = BoxImage::create(&path).unwrap();
        img.add_partition(b"hello", PartitionKind::DATA, "Outputs").unwrap();
        img.add_partition(b"{}", PartitionKind::METADATA, "metadata.json").unwrap();
        let header = *img.header();
        drop(img);
        let mut img = BoxImage::open_read(&path).unwrap();
        assert_eq!(*img.header(), header);
        assert_eq!(img.dump_partition(1).unwrap(), b"hello");
        assert_eq!(img.dump_partition(2).unwrap(), b"{}");
        assert_eq!(img.descriptor(2).unwrap().name, "metadata.json");
    }

    #[test]
    fn missing_partition() {
        let dir = tmp();
        let mut img = BoxImage::create_named(dir.path(), "x").unwrap();
        img.add_partition(b"", PartitionKind::DATA, "d").unwrap();
        assert!(matches!(img.dump_partition(99), Err(Error::NoSuchPartition(99))));
        img.delete_partition(1).unwrap();
        assert!(matches!(img.delete_partition(1), Err(Error::NoSuchPartition(1))));
        assert_eq!(img.header().descriptor_count, 0);
    }

    #[test]
    fn delete_then_close_compacts() {
        let dir = tmp();
        let path = dir.path().join("x.boxi");
        let mut img = BoxImage::create(&path).unwrap();
        let a = img.add_partition(&[1u8; 1000], PartitionKind::DATA, "a").unwrap();
        let b = img.add_partition(&[2u8; 10], PartitionKind::METADATA, "b").unwrap();
        let uuid = img.uuid();
        img.delete_partition(a).unwrap();
        assert_eq!(img.dump_partition(b).unwrap(), vec![2u8; 10]);
        img.close().unwrap();
        let expected = HEADER_LEN + 10 + DESCRIPTOR_LEN;
        assert_eq!(fs::metadata(&path).unwrap().len(), expected as u64);
        let mut img = BoxImage::open(&path).unwrap();
        assert_eq!(img.uuid(), uuid);
        assert_eq!(img.dump_partition(b).unwrap(), vec![2u8; 10]);
        assert!(!img.has_holes);
    }

    #[test]
    fn replace_keeps_identity() {
        let dir = tmp();
        let path = dir.path().join("o.boxi");
        let mut img = BoxImage::create(&path).unwrap();
        img.add_partition(b"old", PartitionKind::DATA, "Outputs").unwrap();
        img.add_partition(b"meta", PartitionKind::METADATA, "m").unwrap();
        let before = *img.header();
        img.replace_partition(1, b"a much longer payload").unwrap();
        assert_eq!(img.uuid(), before.uuid);
        assert_eq!(img.created_at(), before.created_at);
        assert!(img.modified_at() >= before.modified_at);
        drop(img);
        let mut img = BoxImage::open(&path).unwrap();
        assert_eq!(img.dump_partition(1).unwrap(), b"a much longer payload");
        assert_eq!(img.dump_partition(2).unwrap(), b"meta");
        assert_eq!(img.descriptor(1).unwrap().name, "Outputs");
        // No temp files left behind.
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn foreign_and_truncated_files() {
        let dir = tmp();
        let gif = dir.path().join("pic.boxi");
        fs::write(&gif, b"GIF89a........").unwrap();
        assert!(matches!(BoxImage::open_read(&gif), Err(Error::NotABoxImage)));

        let empty = dir.path().join("empty.boxi");
        fs::write(&empty, b"").unwrap();
        assert!(matches!(BoxImage::open_read(&empty), Err(Error::NotABoxImage)));

        let path = dir.path().join("t.boxi");
        let mut img = BoxImage::create(&path).unwrap();
        img.add_partition(&[7u8; 64], PartitionKind::DATA, "d").unwrap();
        drop(img);
        let bytes = fs::read(&path).unwrap();
        for cut in [10, HEADER_LEN + 5, bytes.len() - 1] {
            fs::write(&path, &bytes[..cut]).unwrap();
            assert!(
                matches!(BoxImage::open_read(&path), Err(Error::TruncatedImage(_))),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn read_only_handle_rejects_mutation() {
        let dir = tmp();
        let path = dir.path().join("r.boxi");
        BoxImage::create(&path).unwrap();
        let mut img = BoxImage::open_read(&path).unwrap();
        assert!(img.add_partition(b"x", PartitionKind::DATA, "d").is_err());
    }
}
