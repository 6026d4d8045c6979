//! Application recipes.
//!
//! ```text
//! # scenario 1 plotter
//! [base]
//! ubuntu:16.04
//!
//! [packages]
//! gnuplot
//! numpy = 1.16
//!
//! [files]
//! gnuplot.sh = gnuplot.sh
//!
//! [environment]
//! GNUTERM = svg
//!
//! [runscript]
//! gnuplot.sh
//! ```
//!
//! `[files]` maps a host path (relative to the recipe file) to a path inside
//! the image. A relative runscript must be provided by `[files]`; an
//! absolute one is taken from the base environment.

use std::collections::HashSet;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::image::archive::validate_path;

/// Reserved in-image path of the software manifest.
pub const MANIFEST_PATH: &str = ".manifest";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Package {
    pub name: String,
    pub version: Option<String>,
}

impl Package {
    pub fn spec(&self) -> String {
        match &self.version {
            Some(v) => format!("{}={v}", self.name),
            None => self.name.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileMapping {
    pub host: PathBuf,
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recipe {
    pub base: String,
    pub packages: Vec<Package>,
    pub files: Vec<FileMapping>,
    pub environment: Vec<(String, String)>,
    pub runscript: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Section {
    Base,
    Packages,
    Files,
    Environment,
    Runscript,
}

impl Section {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "base" => Section::Base,
            "packages" => Section::Packages,
            "files" => Section::Files,
            "environment" => Section::Environment,
            "runscript" => Section::Runscript,
            _ => return None,
        })
    }
}

fn err(line: usize, message: impl Into<String>) -> Error {
    Error::RecipeParse {
        line,
        message: message.into(),
    }
}

/// A token usable as a package name, version, or base identifier.
fn is_token(s: &str) -> bool {
    !s.is_empty() && !s.contains(|c: char| c.is_whitespace() || c == '=' || c == '#')
}

pub fn is_env_key(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c == '_' || c.is_ascii_alphabetic())
        && chars.all(|c| c == '_' || c.is_ascii_alphanumeric())
}

pub fn parse_recipe(text: &str) -> Result<Recipe> {
    let mut section: Option<Section> = None;
    let mut seen = HashSet::new();
    let mut base: Option<String> = None;
    let mut packages: Vec<Package> = Vec::new();
    let mut files: Vec<FileMapping> = Vec::new();
    let mut environment: Vec<(String, String)> = Vec::new();
    let mut runscript: Option<String> = None;
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        last_line = line_no;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let s = Section::parse(name.trim())
                .ok_or_else(|| err(line_no, format!("unknown section [{}]", name.trim())))?;
            if !seen.insert(s) {
                return Err(err(line_no, format!("duplicate section [{}]", name.trim())));
            }
            section = Some(s);
            continue;
        }
        let Some(current) = section else {
            return Err(err(line_no, "content before first section"));
        };
        match current {
            Section::Base => {
                if base.is_some() {
                    return Err(err(line_no, "base given more than once"));
                }
                if !is_token(line) {
                    return Err(err(line_no, format!("invalid base {line:?}")));
                }
                base = Some(line.to_owned());
            }
            Section::Runscript => {
                if runscript.is_some() {
                    return Err(err(line_no, "runscript given more than once"));
                }
                if line.starts_with('/') {
                    if line.contains('\0') || line.contains(char::is_whitespace) {
                        return Err(err(line_no, format!("invalid runscript {line:?}")));
                    }
                } else {
                    validate_path(line).map_err(|e| err(line_no, e.to_string()))?;
                }
                runscript = Some(line.to_owned());
            }
            Section::Packages => {
                let (name, version) = match line.split_once('=') {
                    Some((n, v)) => (n.trim(), Some(v.trim())),
                    None => (line, None),
                };
                if !is_token(name) || version.is_some_and(|v| !is_token(v)) {
                    return Err(err(line_no, format!("invalid package {line:?}")));
                }
                if packages.iter().any(|p| p.name == name) {
                    return Err(err(line_no, format!("duplicate package {name:?}")));
                }
                packages.push(Package {
                    name: name.to_owned(),
                    version: version.map(str::to_owned),
                });
            }
            Section::Files => {
                let (host, image) = line
                    .split_once('=')
                    .map(|(h, i)| (h.trim(), i.trim()))
                    .ok_or_else(|| err(line_no, "expected `host-path = image-path`"))?;
                if host.is_empty() {
                    return Err(err(line_no, "empty host path"));
                }
                validate_path(image).map_err(|e| err(line_no, e.to_string()))?;
                if image.contains(|c: char| c == '=' || c.is_whitespace()) {
                    return Err(err(line_no, format!("unsupported image path {image:?}")));
                }
                if image == MANIFEST_PATH || image.starts_with(".manifest/") {
                    return Err(err(line_no, "image path .manifest is reserved"));
                }
                if files.iter().any(|f| f.image == image) {
                    return Err(err(line_no, format!("image path {image:?} mapped twice")));
                }
                files.push(FileMapping {
                    host: PathBuf::from(host),
                    image: image.to_owned(),
                });
            }
            Section::Environment => {
                let (key, value) = line
                    .split_once('=')
                    .map(|(k, v)| (k.trim(), v.trim()))
                    .ok_or_else(|| err(line_no, "expected `KEY = VALUE`"))?;
                if !is_env_key(key) {
                    return Err(err(line_no, format!("invalid variable name {key:?}")));
                }
                if environment.iter().any(|(k, _)| k == key) {
                    return Err(err(line_no, format!("duplicate variable {key:?}")));
                }
                environment.push((key.to_owned(), value.to_owned()));
            }
        }
    }

    let base = base.ok_or_else(|| err(last_line, "missing [base]"))?;
    Ok(Recipe {
        base,
        packages,
        files,
        environment,
        runscript,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCENARIO_1: &str = "\
# plotter
[base]
ubuntu:16.04

[packages]
gnuplot

[files]
gnuplot.sh = gnuplot.sh

[runscript]
gnuplot.sh
";

    #[test]
    fn minimal_recipe() {
        let r = parse_recipe("[base]\nubuntu:16.04\n[runscript]\n/bin/true\n").unwrap();
        assert_eq!(r.base, "ubuntu:16.04");
        assert!(r.packages.is_empty());
        assert_eq!(r.runscript.as_deref(), Some("/bin/true"));
    }

    #[test]
    fn scenario_one_recipe() {
        let r = parse_recipe(SCENARIO_1).unwrap();
        let names: Vec<_> = r.packages.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, ["gnuplot"]);
        assert_eq!(r.files[0].image, "gnuplot.sh");
        assert_eq!(r.runscript.as_deref(), Some("gnuplot.sh"));
    }

    #[test]
    fn package_order_and_versions_are_kept() {
        let r = parse_recipe("[base]\nb\n[packages]\nzlib = 1.2\nawk\n").unwrap();
        let specs: Vec<_> = r.packages.iter().map(Package::spec).collect();
        assert_eq!(specs, ["zlib=1.2", "awk"]);
    }

    #[test]
    fn duplicate_runscript_is_an_error() {
        let e = parse_recipe("[base]\nb\n[runscript]\na.sh\nb.sh\n").unwrap_err();
        assert!(matches!(e, Error::RecipeParse { line: 5, .. }), "{e}");
        let e = parse_recipe("[base]\nb\n[runscript]\na.sh\n[runscript]\nb.sh\n").unwrap_err();
        assert!(matches!(e, Error::RecipeParse { line: 5, .. }), "{e}");
    }

    #[test]
    fn errors_carry_line_numbers() {
        let cases = [
            ("[base]\nb\n[post]\n", 3),
            ("stray\n[base]\nb\n", 1),
            ("[base]\nb\n[files]\nno-equals\n", 4),
            ("[base]\nb\n[files]\nx = ../escape\n", 4),
            ("[base]\nb\n[files]\nx = .manifest\n", 4),
            ("[base]\nb\n[environment]\n1BAD = v\n", 4),
            ("[base]\nb\n[packages]\ngnuplot\ngnuplot\n", 5),
            ("[packages]\ngnuplot\n", 2),
        ];
        for (text, line) in cases {
            match parse_recipe(text) {
                Err(Error::RecipeParse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }
}
