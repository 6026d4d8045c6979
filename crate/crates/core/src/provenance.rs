//! Record-trail capture: static metadata of every image used in a run,
//! assembled backwards from each output and stored inside the output image
//! as a JSON metadata partition.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::error::{Error, Result};
use crate::image::{BoxImage, PartType, PartitionKind};
use crate::runtime::{ExecutionReport, Role, WorkflowSpec};
use crate::timestamp;

pub const SCHEMA_VERSION: u32 = 1;
/// Name of the metadata partition.
pub const METADATA_PARTITION_NAME: &str = "metadata.json";

/// Static metadata of one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentRecord {
    pub role: Role,
    pub name: String,
    pub uuid: String,
    pub created: String,
    pub modified: String,
}

impl ComponentRecord {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Error::MalformedTrail(m);
        Uuid::parse_str(&self.uuid).map_err(|_| bad(format!("bad uuid {:?}", self.uuid)))?;
        let created = timestamp::parse_iso8601(&self.created)
            .ok_or_else(|| bad(format!("bad created {:?}", self.created)))?;
        let modified = timestamp::parse_iso8601(&self.modified)
            .ok_or_else(|| bad(format!("bad modified {:?}", self.modified)))?;
        if created > modified {
            return Err(bad(format!("{}: created after modified", self.name)));
        }
        Ok(())
    }
}

/// Copies name, UUID and timestamps out of an image header. Pure read.
pub fn capture_static_metadata(image: &BoxImage, role: Role) -> ComponentRecord {
    let h = image.header();
    ComponentRecord {
        role,
        name: image.name(),
        uuid: h.uuid.hyphenated().to_string(),
        created: timestamp::to_iso8601(h.created_at),
        modified: timestamp::to_iso8601(h.modified_at),
    }
}

/// Provenance document of one output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordTrail {
    pub schema_version: u32,
    pub workflow_label: String,
    pub output: ComponentRecord,
    pub record_trail: Vec<ComponentRecord>,
    pub command: String,
    pub executed_at: String,
    pub exit_status: i32,
}

impl RecordTrail {
    /// Checks schema version, record well-formedness and ordering: inputs
    /// by name, then applications by name, then the output itself once.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Error::MalformedTrail(m.to_owned());
        if self.schema_version != SCHEMA_VERSION {
            return Err(bad("unsupported schema_version"));
        }
        if self.output.role != Role::Output {
            return Err(bad("output record must have role output"));
        }
        self.output.validate()?;
        match self.record_trail.last() {
            Some(last) if *last == self.output => {}
            _ => return Err(bad("record_trail must end with the output record")),
        }
        if self.record_trail.iter().filter(|r| **r == self.output).count() != 1 {
            return Err(bad("output record appears more than once"));
        }
        let body = &self.record_trail[..self.record_trail.len() - 1];
        let rank = |r: &Role| match r {
            Role::Input => 0,
            Role::Application => 1,
            Role::Output => 2,
        };
        for r in body {
            r.validate()?;
            if r.role == Role::Output {
                return Err(bad("only the last record may be an output"));
            }
        }
        for w in body.windows(2) {
            let a = (rank(&w[0].role), &w[0].name, &w[0].uuid);
            let b = (rank(&w[1].role), &w[1].name, &w[1].uuid);
            if a >= b {
                return Err(bad("records out of order"));
            }
        }
        timestamp::parse_iso8601(&self.executed_at).ok_or_else(|| bad("bad executed_at"))?;
        Ok(())
    }

    /// Two-space indented JSON, keys in schema order, LF line endings,
    /// trailing newline.
    pub fn to_canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("trail serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let trail: RecordTrail =
            serde_json::from_str(text).map_err(|e| Error::MalformedTrail(e.to_string()))?;
        trail.validate()?;
        Ok(trail)
    }
}

/// Builds the trail of `output_id` by walking backwards: the applications
/// that wrote into the output, then the inputs bound into those
/// applications. Only direct producers and their direct inputs are
/// included.
pub fn assemble_record_trail(
    spec: &WorkflowSpec,
    report: &ExecutionReport,
    output_id: &str,
) -> Result<RecordTrail> {
    let not_output = || Error::NotAnOutputOfRun(output_id.to_owned());
    let component = spec.component(output_id).ok_or_else(not_output)?;
    if component.role != Role::Output
        || !report
            .outputs_written
            .iter()
            .any(|o| o.component_id == output_id)
    {
        return Err(not_output());
    }

    let invoked: BTreeSet<&str> = report
        .invocations
        .iter()
        .map(|i| i.component_id.as_str())
        .collect();
    let bindings = spec.app_bindings()?;
    let producers: BTreeSet<&str> = bindings
        .iter()
        .filter(|b| b.data == output_id && b.writable() && invoked.contains(b.app.as_str()))
        .map(|b| b.app.as_str())
        .collect();
    if producers.is_empty() {
        return Err(not_output());
    }
    let inputs: BTreeSet<&str> = bindings
        .iter()
        .filter(|b| b.data_role == Role::Input && producers.contains(b.app.as_str()))
        .map(|b| b.data.as_str())
        .collect();

    let record = |id: &str| {
        report.component_records.get(id).cloned().ok_or_else(|| {
            Error::InvalidWorkflow(format!("report has no record for component {id:?}"))
        })
    };
    let sorted = |ids: &BTreeSet<&str>| -> Result<Vec<ComponentRecord>> {
        let mut records = ids.iter().map(|id| record(id)).collect::<Result<Vec<_>>>()?;
        records.sort_by(|a, b| (&a.name, &a.uuid).cmp(&(&b.name, &b.uuid)));
        records.dedup_by(|a, b| a.uuid == b.uuid);
        Ok(records)
    };
    let output = record(output_id)?;
    let mut record_trail = sorted(&inputs)?;
    record_trail.extend(sorted(&producers)?);
    record_trail.push(output.clone());

    let producing: Vec<_> = report
        .invocations
        .iter()
        .filter(|i| producers.contains(i.component_id.as_str()))
        .collect();
    let command = producing
        .iter()
        .map(|i| i.argv.join(" "))
        .collect::<Vec<_>>()
        .join("; ");
    let exit_status = producing
        .iter()
        .map(|i| i.exit_status)
        .find(|&s| s != 0)
        .unwrap_or(0);
    let executed_at = producing
        .iter()
        .map(|i| i.start_ns)
        .min()
        .map(timestamp::nanos_to_iso8601)
        .unwrap_or_else(|| timestamp::to_iso8601(timestamp::now_unix()));

    let trail = RecordTrail {
        schema_version: SCHEMA_VERSION,
        workflow_label: spec.label.clone(),
        output,
        record_trail,
        command,
        executed_at,
        exit_status,
    };
    trail.validate()?;
    Ok(trail)
}

/// Stores the trail as the output image's metadata partition, replacing
/// any previous one. Returns the partition id.
pub fn attach_metadata(image: &mut BoxImage, trail: &RecordTrail) -> Result<u32> {
    trail.validate()?;
    let payload = trail.to_canonical_json().into_bytes();
    let existing: Vec<u32> = image.partitions_of(PartType::Metadata).map(|d| d.id).collect();
    match existing.split_first() {
        Some((&keep, rest)) => {
            for &id in rest {
                image.delete_partition(id)?;
            }
            image.replace_partition(keep, &payload)?;
            Ok(keep)
        }
        None => image.add_partition(&payload, PartitionKind::METADATA, METADATA_PARTITION_NAME),
    }
}

/// Stores the trail in a new image of its own, holding only the metadata
/// partition.
pub fn attach_metadata_isolated(trail: &RecordTrail, image_path: &Path) -> Result<BoxImage> {
    trail.validate()?;
    let mut image = BoxImage::create(image_path)?;
    image.add_partition(
        trail.to_canonical_json().as_bytes(),
        PartitionKind::METADATA,
        METADATA_PARTITION_NAME,
    )?;
    Ok(image)
}

/// Raw bytes of the image's single metadata partition.
pub fn read_trail_bytes(image: &mut BoxImage) -> Result<Vec<u8>> {
    let ids: Vec<u32> = image.partitions_of(PartType::Metadata).map(|d| d.id).collect();
    match ids.as_slice() {
        [] => Err(Error::NoMetadataPartition),
        [id] => image.dump_partition(*id),
        _ => Err(Error::MalformedTrail("more than one metadata partition".into())),
    }
}

pub fn read_trail(image: &mut BoxImage) -> Result<RecordTrail> {
    let bytes = read_trail_bytes(image)?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|_| Error::MalformedTrail("metadata is not UTF-8".into()))?;
    RecordTrail::from_json(text)
}

/// Assembles and attaches a trail for every output written by the run.
/// Returns (component id, partition id) pairs.
pub fn attach_trails(spec: &WorkflowSpec, report: &ExecutionReport) -> Result<Vec<(String, u32)>> {
    let mut attached = Vec::new();
    for written in &report.outputs_written {
        let trail = assemble_record_trail(spec, report, &written.component_id)?;
        let component = spec
            .component(&written.component_id)
            .ok_or_else(|| Error::UnknownComponent(written.component_id.clone()))?;
        let mut image = BoxImage::open(&component.image)?;
        let id = attach_metadata(&mut image, &trail)?;
        attached.push((written.component_id.clone(), id));
    }
    Ok(attached)
}
