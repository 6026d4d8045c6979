//! `boxi`: build, connect and inspect workflow images.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use boxi_core::bench::{self, SpaceOverheadReport};
use boxi_core::image::{archive, BoxImage, DataType, DESCRIPTOR_LEN};
use boxi_core::packager;
use boxi_core::provenance::{self, RecordTrail};
use boxi_core::runtime::{self, RunOptions, TransferMode, WorkflowSpec};
use boxi_core::scenarios;
use boxi_core::{Error, Result};
use clap::{Args, Parser, Subcommand};

const EXIT_USAGE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_CORRUPT: u8 = 4;

#[derive(Parser)]
#[command(name = "boxi", version, about = "Provenance-aware workflow images")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Pack a directory into a data image.
    Pack { dir: PathBuf, image: PathBuf },
    /// Create an output image holding one empty directory.
    NewOutput { name: String, image: PathBuf },
    /// Build an application image from a recipe.
    Build { recipe: PathBuf, image: PathBuf },
    /// Run a workflow and attach a record trail to every output.
    Run {
        workflow: PathBuf,
        #[arg(long, default_value = "zero-copy", value_parser = parse_mode)]
        mode: TransferMode,
        /// Skip record-trail capture.
        #[arg(long)]
        no_trail: bool,
        /// Keep the sandbox directory after the run.
        #[arg(long)]
        keep_sandbox: bool,
        #[arg(long)]
        json: bool,
    },
    /// Show the header and partitions of an image.
    Inspect {
        image: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Write a partition payload to a file, or to stdout with `-`.
    Dump {
        image: PathBuf,
        id: u32,
        dest: PathBuf,
        /// Decode the payload as a directory archive into DEST.
        #[arg(long)]
        extract: bool,
    },
    /// Append a file as a new partition.
    Add(AddArgs),
    /// Delete a partition.
    Del { image: PathBuf, id: u32 },
    /// Print the record trail stored in an output image.
    Trail {
        image: PathBuf,
        #[arg(long, conflicts_with = "table")]
        json: bool,
        #[arg(long)]
        table: bool,
    },
    /// Overhead measurements.
    #[command(subcommand)]
    Bench(BenchCmd),
}

#[derive(Args)]
struct AddArgs {
    image: PathBuf,
    file: PathBuf,
    #[arg(long, visible_alias = "data-type", default_value_t = DataType::Partition.code())]
    datatype: u32,
    #[arg(long, visible_alias = "fs-type", default_value_t = 2)]
    partfs: u32,
    #[arg(long, visible_alias = "part-type", default_value_t = 3)]
    parttype: u32,
    #[arg(long, visible_alias = "arch", default_value_t = 2)]
    partarch: u32,
    /// Partition name; defaults to the file name.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Wall-clock overhead of a stand-in app versus running it natively.
    Time {
        #[arg(long, default_value_t = bench::DEFAULT_REPS)]
        reps: usize,
        /// Compute durations in milliseconds.
        #[arg(long, value_delimiter = ',', default_values_t = [100u64, 10_000])]
        ms: Vec<u64>,
        #[arg(long, default_value = "zero-copy", value_parser = parse_mode)]
        mode: TransferMode,
        #[arg(long)]
        standin: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Image sizes of the fixture workflows versus their original files.
    Space {
        #[arg(long, default_value_t = scenarios::DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        standin: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Zero-copy versus two-copy transfer of a synthetic payload.
    Transfer {
        /// Payload bytes; accepts K, M and G suffixes (powers of 1000).
        #[arg(long, default_value = "100M", value_parser = parse_size)]
        size: u64,
        #[arg(long, default_value_t = bench::DEFAULT_REPS)]
        reps: usize,
        #[arg(long, default_value_t = bench::DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
}

fn parse_mode(s: &str) -> std::result::Result<TransferMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_size(s: &str) -> std::result::Result<u64, String> {
    let (digits, mult) = match s.char_indices().last() {
        Some((i, 'K' | 'k')) => (&s[..i], 1_000),
        Some((i, 'M' | 'm')) => (&s[..i], 1_000_000),
        Some((i, 'G' | 'g')) => (&s[..i], 1_000_000_000),
        _ => (s, 1),
    };
    let n: u64 = digits.parse().map_err(|_| format!("invalid size {s:?}"))?;
    n.checked_mul(mult).ok_or_else(|| format!("size {s:?} overflows"))
}

fn exit_code(e: &Error) -> u8 {
    if e.is_corruption() || matches!(e, Error::UnsupportedVersion(_)) {
        return EXIT_CORRUPT;
    }
    if e.is_not_found() {
        return EXIT_VALIDATION;
    }
    match e {
        Error::InvalidName(_)
        | Error::UnknownCode { .. }
        | Error::DuplicatePrimary
        | Error::NoSuchPartition(_)
        | Error::UnsupportedEntry(_)
        | Error::RecipeParse { .. }
        | Error::NoRunscript(_)
        | Error::InvalidWorkflow(_)
        | Error::UnknownComponent(_)
        | Error::CyclicBinding(_)
        | Error::WrongPartitionType { .. }
        | Error::NotAnOutputOfRun(_)
        | Error::NoMetadataPartition => EXIT_VALIDATION,
        _ => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match dispatch(cli.cmd) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("boxi: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn print_uuid(image: &BoxImage) {
    println!("{}", image.uuid().hyphenated());
}

fn dispatch(cmd: Cmd) -> Result<u8> {
    match cmd {
        Cmd::Pack { dir, image } => {
            print_uuid(&packager::pack_data_dir(&dir, &image)?);
        }
        Cmd::NewOutput { name, image } => {
            print_uuid(&packager::pack_empty_output(&name, &image)?);
        }
        Cmd::Build { recipe, image } => {
            print_uuid(&packager::build_app_image_from_file(&recipe, &image)?);
        }
        Cmd::Run {
            workflow,
            mode,
            no_trail,
            keep_sandbox,
            json,
        } => return cmd_run(&workflow, mode, no_trail, keep_sandbox, json),
        Cmd::Inspect { image, json } => {
            let d = BoxImage::open_read(&image)?.describe();
            if json {
                print_json(&d);
            } else {
                println!("name      {}", d.name);
                println!("uuid      {}", d.uuid);
                println!("version   {}", d.format_version);
                println!("created   {}", d.created);
                println!("modified  {}", d.modified);
                println!("partitions {}", d.partitions.len());
                let rows: Vec<Vec<String>> = d
                    .partitions
                    .iter()
                    .map(|p| {
                        vec![
                            p.id.to_string(),
                            p.name.clone(),
                            format!(
                                "{}/{}/{}/{}",
                                p.kind.datatype.label(),
                                p.kind.fstype.label(),
                                p.kind.parttype.label(),
                                p.kind.arch.label()
                            ),
                            p.size.to_string(),
                            p.checksum[..16].to_owned(),
                        ]
                    })
                    .collect();
                print_table(&["ID", "NAME", "KIND", "SIZE", "SHA256"], &rows);
            }
        }
        Cmd::Dump {
            image,
            id,
            dest,
            extract,
        } => {
            let mut img = BoxImage::open_read(&image)?;
            if extract {
                archive::decode_dir(&img.dump_partition(id)?, &dest)?;
            } else if dest == Path::new("-") {
                let mut out = io::stdout().lock();
                img.dump_partition_to(id, &mut out)?;
                out.flush()?;
            } else {
                let bytes = img.dump_partition(id)?;
                fs::write(&dest, bytes).map_err(|e| Error::IoAt {
                    path: dest.clone(),
                    source: e,
                })?;
            }
        }
        Cmd::Add(a) => {
            let payload = fs::read(&a.file).map_err(|e| Error::IoAt {
                path: a.file.clone(),
                source: e,
            })?;
            let name = match a.name {
                Some(n) => n,
                None => a
                    .file
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default(),
            };
            let mut img = BoxImage::open(&a.image)?;
            let id = img.add_partition_codes(
                &payload, a.datatype, a.partfs, a.parttype, a.partarch, &name,
            )?;
            img.close()?;
            println!("{id}");
        }
        Cmd::Del { image, id } => {
            let mut img = BoxImage::open(&image)?;
            img.delete_partition(id)?;
            img.close()?;
        }
        Cmd::Trail { image, json, table } => {
            let _ = table;
            let mut img = BoxImage::open_read(&image)?;
            let bytes = provenance::read_trail_bytes(&mut img)?;
            let text = std::str::from_utf8(&bytes)
                .map_err(|_| Error::MalformedTrail("metadata is not UTF-8".into()))?;
            let trail = RecordTrail::from_json(text)?;
            if json {
                io::stdout().lock().write_all(&bytes)?;
            } else {
                print_trail(&trail);
            }
        }
        Cmd::Bench(b) => cmd_bench(b)?,
    }
    Ok(0)
}

fn cmd_run(workflow: &Path, mode: TransferMode, no_trail: bool, keep: bool, json: bool) -> Result<u8> {
    let spec = WorkflowSpec::from_file(workflow)?;
    let opts = RunOptions {
        sandbox_root: None,
        keep_sandbox: keep,
    };
    let report = runtime::run_workflow_with(&spec, mode, &opts)?;
    let attached = if no_trail {
        Vec::new()
    } else {
        provenance::attach_trails(&spec, &report)?
    };
    if json {
        let mut doc = serde_json::to_value(&report).expect("report serializes");
        doc["trails"] = attached
            .iter()
            .map(|(c, p)| serde_json::json!({"component": c, "partition": p}))
            .collect();
        print_json(&doc);
    } else {
        for inv in &report.invocations {
            println!(
                "{}\texit {}\t{:.3}s",
                inv.component_id,
                inv.exit_status,
                inv.elapsed_ns() as f64 / 1e9
            );
        }
        for (c, p) in &attached {
            println!("{c}\ttrail in partition {p}");
        }
        println!("copy events: {} ({mode})", report.copy_events);
    }
    Ok(if report.any_failed() { EXIT_RUNTIME } else { 0 })
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializes"));
}

fn print_table(header: &[&str], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i + 1 == cells.len() {
                s.push_str(cell);
            } else {
                s.push_str(&format!("{cell:<w$}  "));
            }
        }
        println!("{}", s.trim_end());
    };
    line(header.to_vec());
    for row in rows {
        line(row.iter().map(String::as_str).collect());
    }
}

fn print_trail(trail: &RecordTrail) {
    println!("workflow  {}", trail.workflow_label);
    println!("command   {}", trail.command);
    println!("executed  {}", trail.executed_at);
    println!("exit      {}", trail.exit_status);
    let rows: Vec<Vec<String>> = trail
        .record_trail
        .iter()
        .map(|r| {
            vec![
                r.role.to_string(),
                r.name.clone(),
                r.uuid.clone(),
                r.created.clone(),
                r.modified.clone(),
            ]
        })
        .collect();
    print_table(&["ROLE", "NAME", "UUID", "CREATED", "MODIFIED"], &rows);
}

/// The stand-in executable: `--standin`, then `$BOXI_STANDIN`, then the
/// binary next to this one.
fn standin_path(flag: Option<PathBuf>) -> Result<PathBuf> {
    if let Some(p) = flag.or_else(|| std::env::var_os("BOXI_STANDIN").map(PathBuf::from)) {
        return Ok(p);
    }
    let exe = std::env::current_exe()?;
    Ok(exe.with_file_name("boxi-standin"))
}

fn cmd_bench(cmd: BenchCmd) -> Result<()> {
    match cmd {
        BenchCmd::Time {
            reps,
            ms,
            mode,
            standin,
            json,
        } => {
            let standin = standin_path(standin)?;
            let tmp = tempfile_dir()?;
            let mut reports = Vec::new();
            for ms in ms {
                let (spec, native) = bench::spin_fixture(tmp.path(), &standin, ms)?;
                let r = bench::bench_time(&spec.label, &spec, &native, reps, mode, &RunOptions::default())?;
                if !json {
                    println!(
                        "{:<14} native {:>10.1} ms  contained {:>10.1} ms  overhead {:>6.2}%",
                        r.label,
                        r.median_native_ns / 1e6,
                        r.median_containerized_ns / 1e6,
                        r.overhead_ratio * 100.0
                    );
                }
                reports.push(r);
            }
            if json {
                print_json(&reports);
            }
        }
        BenchCmd::Space {
            seed,
            standin,
            json,
        } => {
            let standin = standin_path(standin)?;
            let tmp = tempfile_dir()?;
            let mut items = Vec::new();
            for n in [1u8, 3] {
                let s = scenarios::build_scenario(n, &tmp.path().join(format!("s{n}")), &standin, seed)?;
                for mut item in s.space_items() {
                    item.label = format!("scenario-{n}/{}", item.label);
                    items.push(item);
                }
            }
            let report = bench::bench_space(&items)?;
            if json {
                print!("{}", report.to_json());
            } else {
                print_space(&report);
            }
        }
        BenchCmd::Transfer {
            size,
            reps,
            seed,
            json,
        } => {
            let r = bench::bench_transfer(size, reps, seed)?;
            if json {
                print!("{}", r.to_json());
            } else {
                println!("payload      {} bytes in {} files (seed {})", r.payload_bytes, r.files, r.seed);
                println!("zero-copy    {:.1} ms median, {} copies", r.median_zero_copy_ns / 1e6, r.copy_events_zero_copy);
                println!("two-copy     {:.1} ms median, {} copies", r.median_two_copy_ns / 1e6, r.copy_events_two_copy);
                println!("speed-up     {:.2}%", r.speedup_percent);
            }
        }
    }
    Ok(())
}

fn print_space(r: &SpaceOverheadReport) {
    let rows: Vec<Vec<String>> = r
        .rows
        .iter()
        .map(|row| {
            vec![
                row.label.clone(),
                row.original_bytes.to_string(),
                row.containerized_bytes.to_string(),
                row.delta.to_string(),
            ]
        })
        .collect();
    print_table(&["COMPONENT", "ORIGINAL", "IMAGE", "DELTA"], &rows);
    println!(
        "fixed cost of one data image: {} bytes (header {} + descriptor {} + archive header {})",
        r.format_constant_bytes, r.header_bytes, DESCRIPTOR_LEN, r.archive_header_bytes
    );
    println!("plus {} bytes + path length per archived entry", r.entry_framing_bytes);
}

fn tempfile_dir() -> Result<tempfile::TempDir> {
    Ok(tempfile::tempdir()?)
}
