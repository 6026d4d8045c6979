use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BoxImage, PartType};
use crate::runtime::spec::{AppBinding, Component, WorkflowSpec};

/// How bound data reaches applications.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TransferMode {
    /// Each bound partition is materialized once into the sandbox and the
    /// same directory is visible to every endpoint.
    #[default]
    ZeroCopy,
    /// Data goes through host staging: image to staging, staging to the
    /// application view, view to staging, staging to image.
    TwoCopy,
}

impl TransferMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TransferMode::ZeroCopy => "zero-copy",
            TransferMode::TwoCopy => "two-copy",
        }
    }
}

impl fmt::Display for TransferMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TransferMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero-copy" => Ok(TransferMode::ZeroCopy),
            "two-copy" => Ok(TransferMode::TwoCopy),
            _ => Err(Error::InvalidWorkflow(format!("unknown transfer mode {s:?}"))),
        }
    }
}

/// One directory made visible inside an application's view.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Mount {
    pub app: String,
    /// Path inside the application view, relative to its root.
    pub sandbox_path: String,
    pub component: String,
    pub partition: u32,
    /// Directory inside the backing partition.
    pub inner_path: String,
    pub writable: bool,
    pub binding: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InvocationMounts {
    pub invocation: usize,
    pub app: String,
    pub mounts: Vec<Mount>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum HopKind {
    /// Zero-copy: partition decoded once into the shared sandbox.
    Materialize,
    /// Zero-copy: sandbox tree encoded back into the image.
    Repack,
    /// Two-copy: partition dumped into a host staging file.
    DumpToStaging,
    /// Two-copy: staging file unpacked into the application view.
    StagingToView,
    /// Two-copy: application view packed into a staging file.
    ViewToStaging,
    /// Two-copy: staging file merged back into the image.
    StagingToImage,
}

/// One whole-payload copy along the data path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Hop {
    pub kind: HopKind,
    pub component: String,
    pub partition: u32,
    pub binding: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MountPlan {
    pub mode: TransferMode,
    pub invocations: Vec<InvocationMounts>,
    pub hops: Vec<Hop>,
}

impl MountPlan {
    pub fn copy_events(&self) -> u64 {
        self.hops.len() as u64
    }

    /// Distinct backing directories visible to applications.
    pub fn shared_mount_points(&self) -> usize {
        self.invocations
            .iter()
            .flat_map(|i| &i.mounts)
            .map(|m| (&m.component, m.partition, &m.inner_path))
            .collect::<BTreeSet<_>>()
            .len()
    }

    /// Bindings used by at least one invocation, in spec order.
    pub fn active_bindings(&self) -> BTreeSet<usize> {
        self.invocations
            .iter()
            .flat_map(|i| &i.mounts)
            .map(|m| m.binding)
            .collect()
    }
}

/// Id of the single data partition of an image.
pub fn data_partition_id(image: &BoxImage) -> Result<u32> {
    let mut data = image.partitions_of(PartType::Data);
    match (data.next(), data.next()) {
        (Some(d), None) => Ok(d.id),
        (None, _) => Err(Error::InvalidWorkflow(format!(
            "{} has no data partition",
            image.name()
        ))),
        (Some(_), Some(_)) => Err(Error::InvalidWorkflow(format!(
            "{} has more than one data partition",
            image.name()
        ))),
    }
}

/// Plans mounts and copies for a run, opening the data images to find
/// their partitions.
pub fn plan_mounts(spec: &WorkflowSpec, mode: TransferMode) -> Result<MountPlan> {
    plan_mounts_with(spec, mode, |c| {
        let image = BoxImage::open_read(&c.image)?;
        data_partition_id(&image)
    })
}

/// Plans with a caller-supplied data-partition resolver.
pub fn plan_mounts_with<F>(spec: &WorkflowSpec, mode: TransferMode, mut resolve: F) -> Result<MountPlan>
where
    F: FnMut(&Component) -> Result<u32>,
{
    spec.validate()?;
    let bindings = spec.app_bindings()?;
    let invoked = spec.invoked_apps();
    let active: Vec<&AppBinding> = bindings
        .iter()
        .filter(|b| invoked.contains(b.app.as_str()))
        .collect();

    let mut partitions: BTreeMap<&str, u32> = BTreeMap::new();
    for b in &active {
        if !partitions.contains_key(b.data.as_str()) {
            let component = spec
                .component(&b.data)
                .ok_or_else(|| Error::UnknownComponent(b.data.clone()))?;
            partitions.insert(&b.data, resolve(component)?);
        }
    }

    let mount_of = |b: &AppBinding| Mount {
        app: b.app.clone(),
        sandbox_path: b.app_path.clone(),
        component: b.data.clone(),
        partition: partitions[b.data.as_str()],
        inner_path: b.data_path.clone(),
        writable: b.writable(),
        binding: b.index,
    };
    let invocations = spec
        .invocations
        .iter()
        .enumerate()
        .map(|(idx, inv)| InvocationMounts {
            invocation: idx,
            app: inv.app.clone(),
            mounts: active
                .iter()
                .filter(|b| b.app == inv.app)
                .map(|b| mount_of(b))
                .collect(),
        })
        .collect();

    let mut hops = Vec::new();
    match mode {
        TransferMode::ZeroCopy => {
            let mut materialized = BTreeSet::new();
            let mut repacked = BTreeSet::new();
            for b in &active {
                let partition = partitions[b.data.as_str()];
                if b.writable() {
                    repacked.insert((b.data.clone(), partition));
                } else {
                    materialized.insert((b.data.clone(), partition));
                }
            }
            for (component, partition) in materialized {
                hops.push(Hop {
                    kind: HopKind::Materialize,
                    component,
                    partition,
                    binding: None,
                });
            }
            for (component, partition) in repacked {
                hops.push(Hop {
                    kind: HopKind::Repack,
                    component,
                    partition,
                    binding: None,
                });
            }
        }
        TransferMode::TwoCopy => {
            for b in &active {
                let partition = partitions[b.data.as_str()];
                let kinds = if b.writable() {
                    [HopKind::ViewToStaging, HopKind::StagingToImage]
                } else {
                    [HopKind::DumpToStaging, HopKind::StagingToView]
                };
                for kind in kinds {
                    hops.push(Hop {
                        kind,
                        component: b.data.clone(),
                        partition,
                        binding: Some(b.index),
                    });
                }
            }
        }
    }

    Ok(MountPlan {
        mode,
        invocations,
        hops,
    })
}
