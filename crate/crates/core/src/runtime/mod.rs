//! Workflow execution.
//!
//! Every run gets a fresh sandbox directory:
//!
//! ```text
//! run-XXXX/
//!   views/<app>/     application root: system partition plus bound data
//!   parts/<comp>/    zero-copy: each bound data partition, decoded once
//!   staging/         two-copy: host staging archives
//!   work/<comp>/     two-copy: output trees being reassembled
//! ```
//!
//! In zero-copy mode a bound path inside a view is a symlink into
//! `parts/`, so every application bound to the same data sees the same
//! directory. In two-copy mode each binding gets its own copy through the
//! staging area. Either way an output image is rewritten once, after all
//! invocations finished, with an atomic partition replace.

mod plan;
mod report;
mod spec;
mod transfer;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::os::unix::process::ExitStatusExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

pub use plan::{
    data_partition_id, plan_mounts, plan_mounts_with, Hop, HopKind, InvocationMounts, Mount,
    MountPlan, TransferMode,
};
pub use report::{ExecutionReport, InvocationRecord, OutputWrite};
pub use spec::{AppBinding, Binding, Component, Endpoint, Invocation, Role, WorkflowSpec};
pub use transfer::{transfer, two_copy_transfer, zero_copy_transfer};

use crate::error::{Error, Result};
use crate::image::{archive, BoxImage};
use crate::packager;
use crate::provenance::capture_static_metadata;
use crate::timestamp;

/// Environment variable naming the directory that holds run sandboxes.
pub const SANDBOX_ENV: &str = "BOXI_SANDBOX";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Parent of the per-run sandbox. Defaults to `$BOXI_SANDBOX`, then the
    /// system temp directory.
    pub sandbox_root: Option<PathBuf>,
    /// Keep the sandbox after the run, for debugging.
    pub keep_sandbox: bool,
}

impl RunOptions {
    fn root(&self) -> PathBuf {
        self.sandbox_root
            .clone()
            .or_else(|| std::env::var_os(SANDBOX_ENV).map(PathBuf::from))
            .unwrap_or_else(std::env::temp_dir)
    }
}

pub fn run_workflow(spec: &WorkflowSpec, mode: TransferMode) -> Result<ExecutionReport> {
    run_workflow_with(spec, mode, &RunOptions::default())
}

/// Executes every invocation of `spec` in order and writes outputs back.
///
/// A nonzero application exit does not abort the run: outputs are still
/// written and the status is recorded in the report.
pub fn run_workflow_with(
    spec: &WorkflowSpec,
    mode: TransferMode,
    opts: &RunOptions,
) -> Result<ExecutionReport> {
    let plan = plan_mounts(spec, mode)?;
    let mut report = ExecutionReport {
        workflow_label: spec.label.clone(),
        mode,
        invocations: Vec::new(),
        copy_events: 0,
        outputs_written: Vec::new(),
        bindings: spec.bindings.clone(),
        component_records: BTreeMap::new(),
    };
    if plan.invocations.is_empty() {
        return Ok(report);
    }

    let apps: BTreeSet<&str> = plan.invocations.iter().map(|i| i.app.as_str()).collect();
    let data: BTreeMap<&str, u32> = plan
        .invocations
        .iter()
        .flat_map(|i| &i.mounts)
        .map(|m| (m.component.as_str(), m.partition))
        .collect();
    for id in apps.iter().chain(data.keys()) {
        let c = component(spec, id)?;
        if c.role != Role::Output {
            let image = BoxImage::open_read(&c.image)?;
            report
                .component_records
                .insert(c.id.clone(), capture_static_metadata(&image, c.role));
        }
    }

    let root = opts.root();
    fs::create_dir_all(&root).map_err(|e| Error::io_at(&root, e))?;
    let mut sandbox = Sandbox::new(&root)?;

    let mut runscripts = BTreeMap::new();
    for app in &apps {
        runscripts.insert(*app, sandbox.prepare_view(component(spec, app)?)?);
    }

    let writable: BTreeSet<&str> = plan
        .invocations
        .iter()
        .flat_map(|i| &i.mounts)
        .filter(|m| m.writable)
        .map(|m| m.component.as_str())
        .collect();
    let mounts: Vec<&Mount> = dedup_mounts(&plan);
    let mut copies = 0u64;
    match mode {
        TransferMode::ZeroCopy => {
            for (&comp, &partition) in &data {
                copies += sandbox.materialize(component(spec, comp)?, partition)?;
            }
            for m in &mounts {
                sandbox.link(m)?;
            }
        }
        TransferMode::TwoCopy => {
            for &comp in &writable {
                sandbox.seed_work(component(spec, comp)?, data[comp])?;
            }
            for m in &mounts {
                copies += sandbox.stage_in(component(spec, &m.component)?, m)?;
            }
        }
    }

    for inv in &spec.invocations {
        let (program, env) = &runscripts[inv.app.as_str()];
        let view = sandbox.view(&inv.app);
        let start_ns = timestamp::now_unix_nanos();
        let exit_status = execute(program, &inv.argv, env, &view, &inv.app)?;
        let end_ns = timestamp::now_unix_nanos();
        report.invocations.push(InvocationRecord {
            component_id: inv.app.clone(),
            argv: inv.argv.clone(),
            start_ns,
            end_ns: end_ns.max(start_ns),
            exit_status,
        });
    }

    for &comp in &writable {
        let c = component(spec, comp)?;
        let partition = data[comp];
        let tree = match mode {
            TransferMode::ZeroCopy => sandbox.part(comp),
            TransferMode::TwoCopy => {
                for m in mounts.iter().filter(|m| m.component == comp && m.writable) {
                    copies += sandbox.stage_out(m)?;
                }
                sandbox.work(comp)
            }
        };
        let mut image = BoxImage::open(&c.image)?;
        image.replace_partition(partition, &archive::encode_dir(&tree)?)?;
        if mode == TransferMode::ZeroCopy {
            copies += 1;
        }
        report
            .component_records
            .insert(c.id.clone(), capture_static_metadata(&image, Role::Output));
        report.outputs_written.push(OutputWrite {
            component_id: c.id.clone(),
            partitions: vec![partition],
        });
    }
    report.copy_events = copies;
    debug_assert_eq!(copies, plan.copy_events());

    if opts.keep_sandbox {
        sandbox.keep();
    } else {
        sandbox.remove()?;
    }
    Ok(report)
}

fn component<'a>(spec: &'a WorkflowSpec, id: &str) -> Result<&'a Component> {
    spec.component(id)
        .ok_or_else(|| Error::UnknownComponent(id.to_owned()))
}

/// Mounts of all invocations, once per binding.
fn dedup_mounts(plan: &MountPlan) -> Vec<&Mount> {
    let mut seen = BTreeSet::new();
    plan.invocations
        .iter()
        .flat_map(|i| &i.mounts)
        .filter(|m| seen.insert(m.binding))
        .collect()
}

type RunEnv = Vec<(String, String)>;

fn execute(program: &Path, argv: &[String], env: &RunEnv, view: &Path, app: &str) -> Result<i32> {
    let mut cmd = Command::new(program);
    cmd.args(argv)
        .current_dir(view)
        .env_clear()
        .env(
            "PATH",
            std::env::var_os("PATH").unwrap_or_else(|| "/usr/bin:/bin".into()),
        )
        .env("HOME", view)
        .env("BOXI_APP_ROOT", view)
        .env("BOXI_COMPONENT", app)
        .envs(env.iter().map(|(k, v)| (k, v)))
        .stdin(Stdio::null())
        .stdout(Stdio::from(io::stderr()));
    let status = cmd.status().map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => Error::NoRunscript(format!("{}: {e}", program.display())),
        _ => Error::Sandbox(format!("cannot start {}: {e}", program.display())),
    })?;
    Ok(status
        .code()
        .or_else(|| status.signal().map(|s| 128 + s))
        .unwrap_or(-1))
}

/// Per-run directory tree, removed on drop unless kept.
struct Sandbox {
    root: PathBuf,
    dir: Option<tempfile::TempDir>,
}

impl Sandbox {
    fn new(parent: &Path) -> Result<Self> {
        let dir = tempfile::Builder::new()
            .prefix("run-")
            .tempdir_in(parent)
            .map_err(|e| Error::io_at(parent, e))?;
        let root = dir.path().to_path_buf();
        for sub in ["views", "parts", "staging", "work"] {
            let p = root.join(sub);
            fs::create_dir(&p).map_err(|e| Error::io_at(&p, e))?;
        }
        Ok(Sandbox {
            root,
            dir: Some(dir),
        })
    }

    fn keep(&mut self) {
        if let Some(dir) = self.dir.take() {
            let _ = dir.keep();
        }
    }

    fn remove(&mut self) -> Result<()> {
        match self.dir.take() {
            Some(dir) => dir
                .close()
                .map_err(|e| Error::Sandbox(format!("cannot remove sandbox: {e}"))),
            None => Ok(()),
        }
    }

    fn view(&self, app: &str) -> PathBuf {
        self.root.join("views").join(app)
    }

    fn part(&self, comp: &str) -> PathBuf {
        self.root.join("parts").join(comp)
    }

    fn work(&self, comp: &str) -> PathBuf {
        self.root.join("work").join(comp)
    }

    fn staging(&self, binding: usize) -> PathBuf {
        self.root.join("staging").join(format!("binding-{binding}.bda"))
    }

    /// Decodes the application's system partition into its view and
    /// returns the runscript path and manifest environment.
    fn prepare_view(&self, app: &Component) -> Result<(PathBuf, RunEnv)> {
        let mut image = BoxImage::open_read(&app.image)?;
        let manifest = packager::read_manifest(&mut image)?;
        let id = packager::system_partition_id(&image)?;
        let view = self.view(&app.id);
        archive::decode_dir(&image.dump_partition(id)?, &view)?;
        let runscript = Path::new(&manifest.runscript);
        let program = if runscript.is_absolute() {
            runscript.to_path_buf()
        } else {
            view.join(runscript)
        };
        let env = manifest.environment.into_iter().collect();
        Ok((program, env))
    }

    /// Zero-copy: decodes a data partition into `parts/`. Seeding an
    /// output is not counted as a copy.
    fn materialize(&self, c: &Component, partition: u32) -> Result<u64> {
        let mut image = BoxImage::open_read(&c.image)?;
        check_data(&image, partition)?;
        archive::decode_dir(&image.dump_partition(partition)?, &self.part(&c.id))?;
        Ok(u64::from(c.role == Role::Input))
    }

    fn link(&self, m: &Mount) -> Result<()> {
        let target = self.part(&m.component).join(&m.inner_path);
        if m.writable {
            fs::create_dir_all(&target).map_err(|e| Error::io_at(&target, e))?;
        } else if !target.is_dir() {
            return Err(Error::Sandbox(format!(
                "{}:/{} is not a directory",
                m.component, m.inner_path
            )));
        }
        let at = self.mount_point(m)?;
        std::os::unix::fs::symlink(&target, &at).map_err(|e| Error::io_at(&at, e))
    }

    /// Two-copy: seeds `work/<comp>` with the output's current contents.
    fn seed_work(&self, c: &Component, partition: u32) -> Result<()> {
        let mut image = BoxImage::open_read(&c.image)?;
        check_data(&image, partition)?;
        archive::decode_dir(&image.dump_partition(partition)?, &self.work(&c.id))
    }

    /// Two-copy: fills the view side of one binding. Inputs go image to
    /// staging file to view (two copies). Outputs start from the work tree
    /// and are not counted.
    fn stage_in(&self, c: &Component, m: &Mount) -> Result<u64> {
        let at = self.mount_point(m)?;
        if m.writable {
            let src = self.work(&m.component).join(&m.inner_path);
            fs::create_dir_all(&src).map_err(|e| Error::io_at(&src, e))?;
            archive::decode_dir(&archive::encode_dir(&src)?, &at)?;
            return Ok(0);
        }
        let mut image = BoxImage::open_read(&c.image)?;
        check_data(&image, m.partition)?;
        let staged = self.staging(m.binding);
        let mut file = fs::File::create(&staged).map_err(|e| Error::io_at(&staged, e))?;
        image.dump_partition_to(m.partition, &mut file)?;
        drop(file);
        let bytes = fs::read(&staged).map_err(|e| Error::io_at(&staged, e))?;
        let entries = archive::parse_entries(&bytes)?;
        let prefix = format!("{}/", m.inner_path);
        let present = entries
            .iter()
            .any(|e| e.path == m.inner_path || e.path.starts_with(&prefix));
        if !m.inner_path.is_empty() && !present {
            return Err(Error::Sandbox(format!(
                "{}:/{} is not a directory",
                m.component, m.inner_path
            )));
        }
        archive::decode_subtree(&bytes, &m.inner_path, &at)?;
        fs::create_dir_all(&at).map_err(|e| Error::io_at(&at, e))?;
        Ok(2)
    }

    /// Two-copy: view to staging file to work tree (two copies).
    fn stage_out(&self, m: &Mount) -> Result<u64> {
        let at = self.view(&m.app).join(&m.sandbox_path);
        let staged = self.staging(m.binding);
        let mut file = fs::File::create(&staged).map_err(|e| Error::io_at(&staged, e))?;
        archive::encode_dir_to(&at, &mut file)?;
        drop(file);
        let dest = self.work(&m.component).join(&m.inner_path);
        if dest.exists() {
            fs::remove_dir_all(&dest).map_err(|e| Error::io_at(&dest, e))?;
        }
        let bytes = fs::read(&staged).map_err(|e| Error::io_at(&staged, e))?;
        archive::decode_dir(&bytes, &dest)?;
        Ok(2)
    }

    /// Creates the parent directories of a bound path and checks that the
    /// path itself is free.
    fn mount_point(&self, m: &Mount) -> Result<PathBuf> {
        let app = &m.app;
        let at = self.view(app).join(&m.sandbox_path);
        if fs::symlink_metadata(&at).is_ok() {
            return Err(Error::Sandbox(format!(
                "{app}:/{} already exists in the application image",
                m.sandbox_path
            )));
        }
        if let Some(parent) = at.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io_at(parent, e))?;
        }
        Ok(at)
    }

}

impl Drop for Sandbox {
    fn drop(&mut self) {
        let _ = self.remove();
    }
}

fn check_data(image: &BoxImage, partition: u32) -> Result<()> {
    let d = image.descriptor(partition)?;
    if d.kind.parttype != crate::image::PartType::Data {
        return Err(Error::WrongPartitionType {
            id: partition,
            expected: "data",
        });
    }
    Ok(())
}
