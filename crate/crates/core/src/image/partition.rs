//! Partition descriptors and their numeric code vocabularies.
//!
//! | field    | code | meaning                    |
//! |----------|------|----------------------------|
//! | datatype | 1    | recipe                     |
//! |          | 2    | environment                |
//! |          | 3    | JSON generic               |
//! |          | 4    | partition (file tree)      |
//! | fstype   | 1    | read-only archive          |
//! |          | 2    | read-write archive         |
//! | parttype | 1    | system                     |
//! |          | 2    | system-primary             |
//! |          | 3    | data                       |
//! |          | 4    | metadata                   |
//! | arch     | 0    | architecture-agnostic      |
//! |          | 2    | x86-64                     |

use serde::Serialize;

use crate::error::{Error, Result};

/// Size of one descriptor record in the on-disk table.
pub const DESCRIPTOR_LEN: usize = 160;
/// Maximum partition name length in bytes.
pub const NAME_LEN: usize = 64;

macro_rules! code_enum {
    ($(#[$meta:meta])* $name:ident, $field:literal { $($variant:ident = $code:literal => $label:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        #[repr(u32)]
        pub enum $name {
            $($variant = $code),+
        }

        impl $name {
            pub fn code(self) -> u32 {
                self as u32
            }

            pub fn label(self) -> &'static str {
                match self {
                    $($name::$variant => $label),+
                }
            }
        }

        impl TryFrom<u32> for $name {
            type Error = Error;

            fn try_from(code: u32) -> Result<Self> {
                match code {
                    $($code => Ok($name::$variant),)+
                    _ => Err(Error::UnknownCode { field: $field, code }),
                }
            }
        }

        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.serialize_str(self.label())
            }
        }
    };
}

code_enum!(DataType, "datatype" {
    Recipe = 1 => "recipe",
    Environment = 2 => "environment",
    JsonGeneric = 3 => "json-generic",
    Partition = 4 => "partition",
});

code_enum!(FsType, "fstype" {
    ReadOnlyArchive = 1 => "ro-archive",
    ReadWriteArchive = 2 => "rw-archive",
});

code_enum!(PartType, "parttype" {
    System = 1 => "system",
    SystemPrimary = 2 => "system-primary",
    Data = 3 => "data",
    Metadata = 4 => "metadata",
});

code_enum!(Arch, "arch" {
    Agnostic = 0 => "agnostic",
    X86_64 = 2 => "x86-64",
});

/// The four type codes carried by every descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct PartitionKind {
    pub datatype: DataType,
    pub fstype: FsType,
    pub parttype: PartType,
    pub arch: Arch,
}

impl PartitionKind {
    /// Read-write data partition, as added by `sif add --datatype 4 --partarch 2 --partfs 2 --parttype 3`.
    pub const DATA: PartitionKind = PartitionKind {
        datatype: DataType::Partition,
        fstype: FsType::ReadWriteArchive,
        parttype: PartType::Data,
        arch: Arch::X86_64,
    };

    pub const SYSTEM_PRIMARY: PartitionKind = PartitionKind {
        datatype: DataType::Partition,
        fstype: FsType::ReadOnlyArchive,
        parttype: PartType::SystemPrimary,
        arch: Arch::X86_64,
    };

    pub const METADATA: PartitionKind = PartitionKind {
        datatype: DataType::JsonGeneric,
        fstype: FsType::ReadOnlyArchive,
        parttype: PartType::Metadata,
        arch: Arch::Agnostic,
    };

    pub fn from_codes(datatype: u32, fstype: u32, parttype: u32, arch: u32) -> Result<Self> {
        Ok(PartitionKind {
            datatype: DataType::try_from(datatype)?,
            fstype: FsType::try_from(fstype)?,
            parttype: PartType::try_from(parttype)?,
            arch: Arch::try_from(arch)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionDescriptor {
    pub id: u32,
    pub kind: PartitionKind,
    pub name: String,
    pub payload_offset: u64,
    pub payload_size: u64,
    pub checksum: [u8; 32],
}

impl PartitionDescriptor {
    pub fn checksum_hex(&self) -> String {
        hex::encode(self.checksum)
    }

    pub fn payload_end(&self) -> u64 {
        self.payload_offset + self.payload_size
    }

    pub fn to_bytes(&self) -> [u8; DESCRIPTOR_LEN] {
        let mut buf = [0u8; DESCRIPTOR_LEN];
        buf[0..4].copy_from_slice(&self.id.to_le_bytes());
        buf[4..8].copy_from_slice(&self.kind.datatype.code().to_le_bytes());
        buf[8..12].copy_from_slice(&self.kind.fstype.code().to_le_bytes());
        buf[12..16].copy_from_slice(&self.kind.parttype.code().to_le_bytes());
        buf[16..20].copy_from_slice(&self.kind.arch.code().to_le_bytes());
        buf[20..20 + self.name.len()].copy_from_slice(self.name.as_bytes());
        buf[84..92].copy_from_slice(&self.payload_offset.to_le_bytes());
        buf[92..100].copy_from_slice(&self.payload_size.to_le_bytes());
        buf[100..132].copy_from_slice(&self.checksum);
        // 132..160 reserved, zero.
        buf
    }

    pub fn from_bytes(buf: &[u8; DESCRIPTOR_LEN]) -> Result<Self> {
        let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
        let kind = PartitionKind::from_codes(u32_at(4), u32_at(8), u32_at(12), u32_at(16))
            .map_err(|e| Error::MalformedImage(format!("descriptor {}: {e}", u32_at(0))))?;
        let raw_name = &buf[20..20 + NAME_LEN];
        let end = raw_name.iter().position(|&b| b == 0).unwrap_or(NAME_LEN);
        if raw_name[end..].iter().any(|&b| b != 0) {
            return Err(Error::MalformedImage("descriptor name not zero-padded".into()));
        }
        let name = std::str::from_utf8(&raw_name[..end])
            .map_err(|_| Error::MalformedImage("descriptor name is not UTF-8".into()))?
            .to_owned();
        Ok(PartitionDescriptor {
            id: u32_at(0),
            kind,
            name,
            payload_offset: u64_at(84),
            payload_size: u64_at(92),
            checksum: buf[100..132].try_into().unwrap(),
        })
    }
}

pub fn validate_partition_name(name: &str) -> Result<()> {
    if name.is_empty() || name.len() > NAME_LEN || name.contains('\0') {
        return Err(Error::InvalidName(name.to_owned()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sif_flag_codes_map_to_data_partition() {
        let kind = PartitionKind::from_codes(4, 2, 3, 2).unwrap();
        assert_eq!(kind, PartitionKind::DATA);
    }

    #[test]
    fn unknown_codes_are_rejected() {
        assert!(matches!(
            PartitionKind::from_codes(9, 2, 3, 2),
            Err(Error::UnknownCode { field: "datatype", code: 9 })
        ));
        assert!(matches!(
            PartitionKind::from_codes(4, 0, 3, 2),
            Err(Error::UnknownCode { field: "fstype", .. })
        ));
        assert!(matches!(
            PartitionKind::from_codes(4, 2, 5, 2),
            Err(Error::UnknownCode { field: "parttype", .. })
        ));
        assert!(matches!(
            PartitionKind::from_codes(4, 2, 3, 1),
            Err(Error::UnknownCode { field: "arch", .. })
        ));
    }

    #[test]
    fn descriptor_record_layout() {
        let d = PartitionDescriptor {
            id: 7,
            kind: PartitionKind::METADATA,
            name: "metadata.json".into(),
            payload_offset: 0x1122,
            payload_size: 99,
            checksum: [0xab; 32],
        };
        let bytes = d.to_bytes();
        assert_eq!(&bytes[0..4], &7u32.to_le_bytes());
        assert_eq!(&bytes[4..8], &3u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &4u32.to_le_bytes());
        assert_eq!(&bytes[20..33], b"metadata.json");
        assert!(bytes[33..84].iter().all(|&b| b == 0));
        assert!(bytes[132..].iter().all(|&b| b == 0));
        assert_eq!(PartitionDescriptor::from_bytes(&bytes).unwrap(), d);
    }

    #[test]
    fn partition_names_are_bounded() {
        assert!(validate_partition_name(&"x".repeat(64)).is_ok());
        assert!(validate_partition_name(&"x".repeat(65)).is_err());
        assert!(validate_partition_name("").is_err());
        assert!(validate_partition_name("a\0b").is_err());
    }
}
