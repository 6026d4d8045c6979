//! Moving one data partition into another image, in either transfer mode.
//! This is the data path of a run without any application in between, and
//! is what the transfer benchmark measures.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{check_data, ExecutionReport, OutputWrite, Role, Sandbox, TransferMode, RunOptions};
use crate::error::{Error, Result};
use crate::image::{archive, BoxImage, PartType};
use crate::provenance::capture_static_metadata;

/// Copies partition `partition` of `src` below `inner` in the data
/// partition of `dst`, replacing whatever was there.
pub fn transfer(
    mode: TransferMode,
    src: &Path,
    partition: u32,
    dst: &Path,
    inner: &str,
) -> Result<ExecutionReport> {
    let inner = inner.trim_matches('/');
    if !inner.is_empty() {
        archive::validate_path(inner)?;
    }
    let mut source = BoxImage::open_read(src)?;
    check_data(&source, partition)?;
    let mut dest = BoxImage::open(dst)?;
    let dest_partition = dest
        .partitions_of(PartType::Data)
        .next()
        .map(|d| d.id)
        .ok_or(Error::WrongPartitionType {
            id: 0,
            expected: "data",
        })?;

    let mut records = BTreeMap::new();
    records.insert(
        "source".to_owned(),
        capture_static_metadata(&source, Role::Input),
    );

    let mut sandbox = Sandbox::new(&RunOptions::default().root())?;
    let work = sandbox.work("dest");
    archive::decode_dir(&dest.dump_partition(dest_partition)?, &work)?;
    let target = work.join(inner);
    if inner.is_empty() {
        clear_dir(&target)?;
    } else if fs::symlink_metadata(&target).is_ok() {
        fs::remove_dir_all(&target).map_err(|e| Error::io_at(&target, e))?;
    }

    let mut copies = 0;
    match mode {
        TransferMode::ZeroCopy => {
            archive::decode_dir(&source.dump_partition(partition)?, &target)?;
            copies += 1;
        }
        TransferMode::TwoCopy => {
            let staged_in = sandbox.staging(0);
            let mut file = fs::File::create(&staged_in).map_err(|e| Error::io_at(&staged_in, e))?;
            source.dump_partition_to(partition, &mut file)?;
            drop(file);
            copies += 1;

            let view = sandbox.view("app").join("Inputs");
            let bytes = fs::read(&staged_in).map_err(|e| Error::io_at(&staged_in, e))?;
            archive::decode_dir(&bytes, &view)?;
            copies += 1;

            let staged_out = sandbox.staging(1);
            let mut file =
                fs::File::create(&staged_out).map_err(|e| Error::io_at(&staged_out, e))?;
            archive::encode_dir_to(&view, &mut file)?;
            drop(file);
            copies += 1;

            let bytes = fs::read(&staged_out).map_err(|e| Error::io_at(&staged_out, e))?;
            archive::decode_dir(&bytes, &target)?;
        }
    }
    dest.replace_partition(dest_partition, &archive::encode_dir(&work)?)?;
    copies += 1;
    records.insert(
        "destination".to_owned(),
        capture_static_metadata(&dest, Role::Output),
    );
    sandbox.remove()?;

    Ok(ExecutionReport {
        workflow_label: "transfer".to_owned(),
        mode,
        invocations: Vec::new(),
        copy_events: copies,
        outputs_written: vec![OutputWrite {
            component_id: "destination".to_owned(),
            partitions: vec![dest_partition],
        }],
        bindings: Vec::new(),
        component_records: records,
    })
}

pub fn zero_copy_transfer(src: &Path, partition: u32, dst: &Path, inner: &str) -> Result<ExecutionReport> {
    transfer(TransferMode::ZeroCopy, src, partition, dst, inner)
}

pub fn two_copy_transfer(src: &Path, partition: u32, dst: &Path, inner: &str) -> Result<ExecutionReport> {
    transfer(TransferMode::TwoCopy, src, partition, dst, inner)
}

fn clear_dir(dir: &Path) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io_at(dir, e))? {
        let path = entry.map_err(|e| Error::io_at(dir, e))?.path();
        let res = if path.is_dir() {
            fs::remove_dir_all(&path)
        } else {
            fs::remove_file(&path)
        };
        res.map_err(|e| Error::io_at(&path, e))?;
    }
    Ok(())
}
