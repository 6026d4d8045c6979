//! Deterministic stand-in applications used by the fixture workflows: a
//! text-to-SVG plotter, two nearest-neighbour regressors, a tree copier
//! and a busy loop of fixed duration.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::image::archive::DirArchive;

fn invalid(path: &Path, msg: String) -> Error {
    Error::io_at(path, io::Error::new(io::ErrorKind::InvalidData, msg))
}

/// Parses whitespace separated numeric rows. Blank lines and `#` comments
/// are skipped.
pub fn parse_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| invalid(path, format!("line {}: {e}", n + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

fn points(path: &Path) -> Result<Vec<(f64, f64)>> {
    parse_rows(path)?
        .into_iter()
        .map(|r| match r[..] {
            [x, y, ..] => Ok((x, y)),
            _ => Err(invalid(path, "expected two columns".into())),
        })
        .collect()
}

/// Renders points as a fixed-size SVG line chart.
pub fn render_svg(title: &str, pts: &[(f64, f64)]) -> String {
    const W: f64 = 400.0;
    const H: f64 = 300.0;
    const PAD: f64 = 20.0;
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let span = |a: f64, b: f64| if b > a { b - a } else { 1.0 };
    let (sx, sy) = (span(x0, x1), span(y0, y1));
    let mut line = String::new();
    for (i, &(x, y)) in pts.iter().enumerate() {
        let px = PAD + (x - x0) / sx * (W - 2.0 * PAD);
        let py = H - PAD - (y - y0) / sy * (H - 2.0 * PAD);
        if i > 0 {
            line.push(' ');
        }
        let _ = write!(line, "{px:.2},{py:.2}");
    }
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <title>{title}</title>\n\
         <rect x=\"0\" y=\"0\" width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <polyline fill=\"none\" stroke=\"black\" points=\"{line}\"/>\n\
         </svg>\n"
    )
}

/// `textK.txt` becomes `plotK.svg`; any other `name.txt` becomes `name.svg`.
pub fn plot_name(file_name: &str) -> Option<String> {
    let stem = file_name.strip_suffix(".txt")?;
    Some(match stem.strip_prefix("text") {
        Some(k) => format!("plot{k}.svg"),
        None => format!("{stem}.svg"),
    })
}

/// Plots every `.txt` file of `input` into `output`. Returns the files
/// written, sorted.
pub fn plot_dir(input: &Path, output: &Path) -> Result<Vec<PathBuf>> {
    let mut names: Vec<String> = fs::read_dir(input)
        .map_err(|e| Error::io_at(input, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.ends_with(".txt"))
        .collect();
    names.sort();
    fs::create_dir_all(output).map_err(|e| Error::io_at(output, e))?;
    let mut written = Vec::new();
    for name in names {
        let Some(svg_name) = plot_name(&name) else { continue };
        let src = input.join(&name);
        let svg = render_svg(&name, &points(&src)?);
        let dest = output.join(svg_name);
        fs::write(&dest, svg).map_err(|e| Error::io_at(&dest, e))?;
        written.push(dest);
    }
    Ok(written)
}

/// Mean target of the `k` nearest training points, ties broken by
/// training order.
pub fn knn_predict(train: &[(f64, f64)], x: f64, k: usize) -> f64 {
    let mut by_dist: Vec<(f64, usize)> = train
        .iter()
        .enumerate()
        .map(|(i, &(tx, _))| ((tx - x).abs(), i))
        .collect();
    by_dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let k = k.clamp(1, train.len().max(1));
    let picked = &by_dist[..k.min(by_dist.len())];
    if picked.is_empty() {
        return 0.0;
    }
    picked.iter().map(|&(_, i)| train[i].1).sum::<f64>() / picked.len() as f64
}

/// Reads `x y` training rows and `x ...` evaluation rows and writes one
/// `x prediction` line per evaluation row.
pub fn regress(train: &Path, eval: &Path, out: &Path, k: usize) -> Result<usize> {
    let train_pts = points(train)?;
    if train_pts.is_empty() {
        return Err(invalid(train, "no training rows".into()));
    }
    let xs: Vec<f64> = parse_rows(eval)?
        .into_iter()
        .filter_map(|r| r.first().copied())
        .collect();
    let mut text = String::new();
    for &x in &xs {
        let _ = writeln!(text, "{x} {:.6}", knn_predict(&train_pts, x, k));
    }
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io_at(parent, e))?;
    }
    fs::write(out, text).map_err(|e| Error::io_at(out, e))?;
    Ok(xs.len())
}

/// Recursive copy of the contents of `src` into `dst`, keeping modes.
pub fn copy_tree(src: &Path, dst: &Path) -> Result<()> {
    DirArchive::from_dir(src)?.extract_to(dst)
}

/// Busy computation for `ms` milliseconds of wall clock.
pub fn spin(ms: u64) -> u64 {
    let until = Instant::now() + Duration::from_millis(ms);
    let mut acc = 0x9e37_79b9_7f4a_7c15u64;
    loop {
        for _ in 0..10_000 {
            acc = std::hint::black_box(acc.rotate_left(5) ^ acc.wrapping_mul(31));
        }
        if Instant::now() >= until {
            return acc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plot_names() {
        assert_eq!(plot_name("text2.txt").as_deref(), Some("plot2.svg"));
        assert_eq!(plot_name("train.txt").as_deref(), Some("train.svg"));
        assert_eq!(plot_name("data.csv"), None);
    }

    #[test]
    fn knn_by_hand() {
        let train = [(0.0, 10.0), (1.0, 20.0), (2.0, 30.0), (10.0, 100.0)];
        assert_eq!(knn_predict(&train, 0.9, 1), 20.0);
        assert_eq!(knn_predict(&train, 1.0, 3), 20.0);
        // Equidistant neighbours: the earlier training row wins.
        assert_eq!(knn_predict(&train, 0.5, 1), 10.0);
        assert_eq!(knn_predict(&train, 5.0, 99), 40.0);
    }

    #[test]
    fn plotting_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in");
        fs::create_dir(&input).unwrap();
        fs::write(input.join("text1.txt"), "0 0\n1 1\n2 4\n").unwrap();
        fs::write(input.join("notes.md"), "skip").unwrap();
        let a = plot_dir(&input, &dir.path().join("a")).unwrap();
        let b = plot_dir(&input, &dir.path().join("b")).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(fs::read(&a[0]).unwrap(), fs::read(&b[0]).unwrap());
        let svg = fs::read_to_string(&a[0]).unwrap();
        assert!(svg.contains("points=\"20.00,280.00 200.00,215.00 380.00,20.00\""));
    }

    #[test]
    fn spin_takes_at_least_the_duration() {
        let t = Instant::now();
        spin(20);
        assert!(t.elapsed() >= Duration::from_millis(20));
    }
}
