//! Cost measurements: wall-clock overhead of running inside a workflow
//! versus natively, on-disk overhead of images versus the original files,
//! and zero-copy versus two-copy transfer time.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::archive::{ARCHIVE_HEADER_LEN, ENTRY_FRAMING_LEN};
use crate::image::{partition::DESCRIPTOR_LEN, HEADER_LEN};
use crate::packager::{pack_data_dir, pack_empty_output};
use crate::runtime::{self, RunOptions, TransferMode, WorkflowSpec};

pub const DEFAULT_REPS: usize = 20;
pub const DEFAULT_SEED: u64 = 42;

pub fn median(samples: &[u64]) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let mut v = samples.to_vec();
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] as f64 + v[n / 2] as f64) / 2.0
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeOverheadReport {
    pub label: String,
    pub mode: TransferMode,
    pub samples: usize,
    pub native_ns: Vec<u64>,
    pub containerized_ns: Vec<u64>,
    pub median_native_ns: f64,
    pub median_containerized_ns: f64,
    /// (containerized - native) / native, on medians.
    pub overhead_ratio: f64,
}

impl TimeOverheadReport {
    pub fn to_json(&self) -> String {
        to_json(self)
    }
}

/// Runs `native` and the workflow `spec` alternately, `reps` times each.
/// Any nonzero exit aborts the benchmark.
pub fn bench_time(
    label: &str,
    spec: &WorkflowSpec,
    native: &[String],
    reps: usize,
    mode: TransferMode,
    opts: &RunOptions,
) -> Result<TimeOverheadReport> {
    if reps < 2 {
        return Err(Error::BenchAborted(format!("need at least 2 repetitions, got {reps}")));
    }
    let (program, args) = native
        .split_first()
        .ok_or_else(|| Error::BenchAborted("empty native command".into()))?;
    let mut native_ns = Vec::with_capacity(reps);
    let mut containerized_ns = Vec::with_capacity(reps);
    for rep in 0..reps {
        let t = Instant::now();
        let status = Command::new(program)
            .args(args)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .status()
            .map_err(|e| Error::BenchAborted(format!("cannot start {program}: {e}")))?;
        native_ns.push(t.elapsed().as_nanos() as u64);
        if !status.success() {
            return Err(Error::BenchAborted(format!(
                "native run {rep} of {label} exited with {status}"
            )));
        }

        let t = Instant::now();
        let report = runtime::run_workflow_with(spec, mode, opts)?;
        containerized_ns.push(t.elapsed().as_nanos() as u64);
        if let Some(bad) = report.invocations.iter().find(|i| i.exit_status != 0) {
            return Err(Error::BenchAborted(format!(
                "containerized run {rep} of {label}: {} exited with {}",
                bad.component_id, bad.exit_status
            )));
        }
    }
    let median_native_ns = median(&native_ns);
    let median_containerized_ns = median(&containerized_ns);
    let overhead_ratio = (median_containerized_ns - median_native_ns) / median_native_ns;
    if !overhead_ratio.is_finite() {
        return Err(Error::BenchAborted("overhead ratio is not finite".into()));
    }
    Ok(TimeOverheadReport {
        label: label.to_owned(),
        mode,
        samples: reps,
        native_ns,
        containerized_ns,
        median_native_ns,
        median_containerized_ns,
        overhead_ratio,
    })
}

/// A workflow with one application that busy-computes for `ms`
/// milliseconds through the stand-in, plus the equivalent native command.
pub fn spin_fixture(dir: &Path, standin: &Path, ms: u64) -> Result<(WorkflowSpec, Vec<String>)> {
    let src = dir.join("spin-src");
    fs::create_dir_all(src.join("bin")).map_err(|e| Error::io_at(&src, e))?;
    fs::copy(standin, src.join("bin/boxi-standin")).map_err(|e| Error::io_at(standin, e))?;
    let recipe = src.join("spin.recipe");
    fs::write(
        &recipe,
        "[base]\nscratch\n[files]\nbin/boxi-standin = bin/boxi-standin\n[runscript]\nbin/boxi-standin\n",
    )
    .map_err(|e| Error::io_at(&recipe, e))?;
    let image = dir.join(format!("spin{ms}.boxi"));
    crate::packager::build_app_image_from_file(&recipe, &image)?;
    let spec = WorkflowSpec {
        label: format!("spin-{ms}ms"),
        components: vec![runtime::Component {
            id: "spin".into(),
            role: runtime::Role::Application,
            image,
        }],
        bindings: vec![],
        invocations: vec![runtime::Invocation {
            app: "spin".into(),
            argv: vec!["spin".into(), ms.to_string()],
        }],
    };
    let native = vec![
        standin.to_string_lossy().into_owned(),
        "spin".into(),
        ms.to_string(),
    ];
    Ok((spec, native))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SpaceRow {
    pub label: String,
    pub original_bytes: u64,
    pub containerized_bytes: u64,
    pub delta: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SpaceOverheadReport {
    pub rows: Vec<SpaceRow>,
    /// Size of a data image holding an empty directory: the fixed cost of
    /// one image with one partition.
    pub format_constant_bytes: u64,
    pub header_bytes: u64,
    pub descriptor_bytes: u64,
    pub archive_header_bytes: u64,
    /// Per entry, plus the entry's path length.
    pub entry_framing_bytes: u64,
}

impl SpaceOverheadReport {
    pub fn to_json(&self) -> String {
        to_json(self)
    }
}

/// One row to measure: original files (a directory or a single file) and
/// the image made from them.
#[derive(Debug, Clone)]
pub struct SpaceItem {
    pub label: String,
    pub original: PathBuf,
    pub image: PathBuf,
}

/// Bytes of regular file content below `path`.
pub fn content_bytes(path: &Path) -> Result<u64> {
    let meta = fs::symlink_metadata(path).map_err(|e| Error::io_at(path, e))?;
    if meta.is_file() {
        return Ok(meta.len());
    }
    let mut total = 0;
    if meta.is_dir() {
        for entry in fs::read_dir(path).map_err(|e| Error::io_at(path, e))? {
            let entry = entry.map_err(|e| Error::io_at(path, e))?;
            total += content_bytes(&entry.path())?;
        }
    }
    Ok(total)
}

pub fn measure_format_constant() -> Result<u64> {
    let tmp = tempfile::tempdir()?;
    let empty = tmp.path().join("empty");
    fs::create_dir(&empty)?;
    let image = tmp.path().join("empty.boxi");
    pack_data_dir(&empty, &image)?;
    Ok(fs::metadata(&image)?.len())
}

pub fn bench_space(items: &[SpaceItem]) -> Result<SpaceOverheadReport> {
    let mut rows = Vec::with_capacity(items.len());
    for item in items {
        let original_bytes = content_bytes(&item.original)?;
        let containerized_bytes = fs::metadata(&item.image)
            .map_err(|e| Error::io_at(&item.image, e))?
            .len();
        rows.push(SpaceRow {
            label: item.label.clone(),
            original_bytes,
            containerized_bytes,
            delta: containerized_bytes as i64 - original_bytes as i64,
        });
    }
    Ok(SpaceOverheadReport {
        rows,
        format_constant_bytes: measure_format_constant()?,
        header_bytes: HEADER_LEN as u64,
        descriptor_bytes: DESCRIPTOR_LEN as u64,
        archive_header_bytes: ARCHIVE_HEADER_LEN,
        entry_framing_bytes: ENTRY_FRAMING_LEN,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferReport {
    pub payload_bytes: u64,
    pub files: usize,
    pub seed: u64,
    pub reps: usize,
    pub zero_copy_ns: Vec<u64>,
    pub two_copy_ns: Vec<u64>,
    pub median_zero_copy_ns: f64,
    pub median_two_copy_ns: f64,
    /// 100 * (two - zero) / two, on medians.
    pub speedup_percent: f64,
    pub copy_events_zero_copy: u64,
    pub copy_events_two_copy: u64,
}

impl TransferReport {
    pub fn to_json(&self) -> String {
        to_json(self)
    }
}

/// Largest single file in a synthetic tree.
const MAX_FILE: u64 = 8 << 20;

/// Writes a seeded pseudo-random tree holding exactly `size` bytes of file
/// content. Returns the number of files.
pub fn synthetic_tree(root: &Path, size: u64, seed: u64) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    fs::create_dir_all(root).map_err(|e| Error::io_at(root, e))?;
    let mut left = size;
    let mut files = 0;
    let mut buf = Vec::new();
    while left > 0 {
        let n = rng.random_range(1..=MAX_FILE).min(left);
        let dir = root.join(format!("d{}", rng.random_range(0..4u32)));
        fs::create_dir_all(&dir).map_err(|e| Error::io_at(&dir, e))?;
        buf.resize(n as usize, 0);
        rng.fill_bytes(&mut buf);
        let path = dir.join(format!("f{files:04}.bin"));
        fs::write(&path, &buf).map_err(|e| Error::io_at(&path, e))?;
        left -= n;
        files += 1;
    }
    Ok(files)
}

/// Times both transfer modes on a synthetic payload of `size` bytes,
/// alternating modes, each into a fresh destination image.
pub fn bench_transfer(size: u64, reps: usize, seed: u64) -> Result<TransferReport> {
    if size == 0 {
        return Err(Error::BenchAborted("payload size must be at least 1 byte".into()));
    }
    if reps == 0 {
        return Err(Error::BenchAborted("need at least 1 repetition".into()));
    }
    let tmp = tempfile::tempdir()?;
    let tree = tmp.path().join("payload");
    let files = synthetic_tree(&tree, size, seed)?;
    let src = tmp.path().join("source.boxi");
    let partition = pack_data_dir(&tree, &src)?.descriptors()[0].id;
    fs::remove_dir_all(&tree)?;

    let mut zero_copy_ns = Vec::with_capacity(reps);
    let mut two_copy_ns = Vec::with_capacity(reps);
    let mut events = [0u64; 2];
    for _ in 0..reps {
        for (i, mode) in [TransferMode::ZeroCopy, TransferMode::TwoCopy].into_iter().enumerate() {
            let dst = tmp.path().join(format!("dest-{mode}.boxi"));
            pack_empty_output("Outputs", &dst)?;
            let t = Instant::now();
            let report = runtime::transfer(mode, &src, partition, &dst, "Outputs")?;
            let ns = t.elapsed().as_nanos() as u64;
            events[i] = report.copy_events;
            match mode {
                TransferMode::ZeroCopy => zero_copy_ns.push(ns),
                TransferMode::TwoCopy => two_copy_ns.push(ns),
            }
        }
    }
    let median_zero_copy_ns = median(&zero_copy_ns);
    let median_two_copy_ns = median(&two_copy_ns);
    Ok(TransferReport {
        payload_bytes: size,
        files,
        seed,
        reps,
        zero_copy_ns,
        two_copy_ns,
        median_zero_copy_ns,
        median_two_copy_ns,
        speedup_percent: 100.0 * (median_two_copy_ns - median_zero_copy_ns) / median_two_copy_ns,
        copy_events_zero_copy: events[0],
        copy_events_two_copy: events[1],
    })
}
