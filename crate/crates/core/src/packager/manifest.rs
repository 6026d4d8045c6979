use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::image::sha256;
use crate::packager::recipe::{is_env_key, Package};

/// Software stack recorded inside an application image at `.manifest`.
///
/// The canonical text is one `key=value` line per fact, sorted by key and
/// LF-terminated:
///
/// ```text
/// base=ubuntu:16.04
/// env.GNUTERM=svg
/// file.gnuplot.sh=<sha256 hex>
/// packages=gnuplot numpy=1.16
/// runscript=gnuplot.sh
/// ```
///
/// `packages` keeps recipe order within its single line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SoftwareManifest {
    pub base: String,
    pub packages: Vec<Package>,
    pub environment: BTreeMap<String, String>,
    pub runscript: String,
    /// In-image path to SHA-256 hex of every regular file shipped.
    pub files: BTreeMap<String, String>,
}

impl SoftwareManifest {
    pub fn to_text(&self) -> String {
        let mut lines: Vec<(String, String)> = vec![
            ("base".into(), self.base.clone()),
            (
                "packages".into(),
                self.packages
                    .iter()
                    .map(Package::spec)
                    .collect::<Vec<_>>()
                    .join(" "),
            ),
            ("runscript".into(), self.runscript.clone()),
        ];
        for (k, v) in &self.environment {
            lines.push((format!("env.{k}"), v.clone()));
        }
        for (path, digest) in &self.files {
            lines.push((format!("file.{path}"), digest.clone()));
        }
        lines.sort();
        let mut out = String::new();
        for (k, v) in lines {
            out.push_str(&k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// SHA-256 hex of the canonical text.
    pub fn manifest_hash(&self) -> String {
        hex::encode(sha256(self.to_text().as_bytes()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: String| Error::MalformedManifest(m);
        if !text.is_empty() && !text.ends_with('\n') {
            return Err(bad("missing final newline".into()));
        }
        let mut base = None;
        let mut packages = None;
        let mut runscript = None;
        let mut environment = BTreeMap::new();
        let mut files = BTreeMap::new();
        let mut prev_key: Option<&str> = None;
        for line in text.lines() {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line without '=': {line:?}")))?;
            if prev_key.is_some_and(|p| p >= key) {
                return Err(bad(format!("keys not sorted at {key:?}")));
            }
            prev_key = Some(key);
            match key {
                "base" => base = Some(value.to_owned()),
                "runscript" => runscript = Some(value.to_owned()),
                "packages" => {
                    let list = value
                        .split_whitespace()
                        .map(|spec| match spec.split_once('=') {
                            Some((n, v)) => Package {
                                name: n.to_owned(),
                                version: Some(v.to_owned()),
                            },
                            None => Package {
                                name: spec.to_owned(),
                                version: None,
                            },
                        })
                        .collect::<Vec<_>>();
                    packages = Some(list);
                }
                _ => {
                    if let Some(var) = key.strip_prefix("env.") {
                        if !is_env_key(var) {
                            return Err(bad(format!("bad variable {var:?}")));
                        }
                        environment.insert(var.to_owned(), value.to_owned());
                    } else if let Some(path) = key.strip_prefix("file.") {
                        if value.len() != 64 || !value.bytes().all(|b| b.is_ascii_hexdigit()) {
                            return Err(bad(format!("bad digest for {path:?}")));
                        }
                        files.insert(path.to_owned(), value.to_owned());
                    } else {
                        return Err(bad(format!("unknown key {key:?}")));
                    }
                }
            }
        }
        Ok(SoftwareManifest {
            base: base.ok_or_else(|| bad("missing base".into()))?,
            packages: packages.ok_or_else(|| bad("missing packages".into()))?,
            environment,
            runscript: runscript.ok_or_else(|| bad("missing runscript".into()))?,
            files,
        })
    }
}
