//! Stand-in application executable shipped inside fixture app images.

use std::path::PathBuf;
use std::process::ExitCode;

use boxi_core::standin;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "boxi-standin", version, about = "Deterministic stand-in applications")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Plot every textK.txt in INPUT as OUTPUT/plotK.svg.
    Plot { input: PathBuf, output: PathBuf },
    /// 1-nearest-neighbour regression.
    Nn1 {
        train: PathBuf,
        eval: PathBuf,
        out: PathBuf,
    },
    /// Mean of the k nearest neighbours.
    KnnMean {
        k: usize,
        train: PathBuf,
        eval: PathBuf,
        out: PathBuf,
    },
    /// Recursive copy keeping file modes.
    Copy { src: PathBuf, dst: PathBuf },
    /// Busy computation for MS milliseconds.
    Spin { ms: u64 },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Plot { input, output } => standin::plot_dir(&input, &output).map(|_| ()),
        Cmd::Nn1 { train, eval, out } => standin::regress(&train, &eval, &out, 1).map(|_| ()),
        Cmd::KnnMean { k, train, eval, out } => {
            standin::regress(&train, &eval, &out, k).map(|_| ())
        }
        Cmd::Copy { src, dst } => standin::copy_tree(&src, &dst),
        Cmd::Spin { ms } => {
            std::hint::black_box(standin::spin(ms));
            Ok(())
        }
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("boxi-standin: {e}");
            ExitCode::FAILURE
        }
    }
}
