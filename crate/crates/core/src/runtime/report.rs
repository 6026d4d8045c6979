use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::provenance::ComponentRecord;
use crate::runtime::plan::TransferMode;
use crate::runtime::spec::Binding;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvocationRecord {
    pub component_id: String,
    pub argv: Vec<String>,
    /// Wall clock, nanoseconds since the Unix epoch.
    pub start_ns: u64,
    pub end_ns: u64,
    pub exit_status: i32,
}

impl InvocationRecord {
    pub fn elapsed_ns(&self) -> u64 {
        self.end_ns.saturating_sub(self.start_ns)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputWrite {
    pub component_id: String,
    pub partitions: Vec<u32>,
}

/// What a run did: processes executed, payload copies, outputs written.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub workflow_label: String,
    pub mode: TransferMode,
    pub invocations: Vec<InvocationRecord>,
    /// Whole-payload copies performed along the data path.
    pub copy_events: u64,
    pub outputs_written: Vec<OutputWrite>,
    pub bindings: Vec<Binding>,
    /// Static metadata per component id: inputs and applications captured
    /// before the run, written outputs after it.
    pub component_records: BTreeMap<String, ComponentRecord>,
}

impl ExecutionReport {
    pub fn any_failed(&self) -> bool {
        self.invocations.iter().any(|i| i.exit_status != 0)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
