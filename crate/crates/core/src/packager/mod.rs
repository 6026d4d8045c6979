//! Encapsulates workflow components into images: input data directories,
//! empty output directories and applications built from recipes.

pub mod manifest;
pub mod recipe;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::archive::{self, ArchiveEntry, DirArchive};
use crate::image::{sha256, BoxImage, PartType, PartitionKind};

pub use manifest::SoftwareManifest;
pub use recipe::{parse_recipe, FileMapping, Package, Recipe, MANIFEST_PATH};

/// Name of the single partition in an application image.
pub const SYSTEM_PARTITION_NAME: &str = "system";

const DIR_PERM: u32 = 0o755;
const MANIFEST_PERM: u32 = 0o644;

/// Packs the contents of `dir` into a new data image at `image_path`.
///
/// The partition is named after the directory; its payload is the
/// directory's archive.
pub fn pack_data_dir(dir: &Path, image_path: &Path) -> Result<BoxImage> {
    let payload = archive::encode_dir(dir)?;
    let name = dir
        .canonicalize()
        .ok()
        .and_then(|p| p.file_name().and_then(|n| n.to_str()).map(str::to_owned))
        .filter(|n| crate::image::partition::validate_partition_name(n).is_ok())
        .unwrap_or_else(|| "data".to_owned());
    let mut image = BoxImage::create(image_path)?;
    image.add_partition(&payload, PartitionKind::DATA, &name)?;
    Ok(image)
}

/// Creates an output image whose data partition holds one empty directory.
pub fn pack_empty_output(dir_name: &str, image_path: &Path) -> Result<BoxImage> {
    archive::validate_path(dir_name).map_err(|_| Error::InvalidName(dir_name.to_owned()))?;
    let mut entries = Vec::new();
    let mut prefix = String::new();
    for seg in dir_name.split('/') {
        if !prefix.is_empty() {
            prefix.push('/');
        }
        prefix.push_str(seg);
        entries.push(ArchiveEntry::dir(prefix.clone(), DIR_PERM));
    }
    let payload = DirArchive::from_entries(entries)?.to_bytes();
    let part_name = dir_name.rsplit('/').next().unwrap_or(dir_name);
    let part_name = if part_name.len() <= crate::image::partition::NAME_LEN {
        part_name
    } else {
        "data"
    };
    let mut image = BoxImage::create(image_path)?;
    image.add_partition(&payload, PartitionKind::DATA, part_name)?;
    Ok(image)
}

/// Builds an application image. Host paths in `[files]` resolve against
/// `recipe_dir`. Packages are recorded in the manifest, not installed.
pub fn build_app_image(recipe: &Recipe, recipe_dir: &Path, image_path: &Path) -> Result<BoxImage> {
    let runscript = recipe
        .runscript
        .clone()
        .ok_or_else(|| Error::NoRunscript("recipe has no [runscript]".into()))?;

    let mut entries: BTreeMap<String, ArchiveEntry> = BTreeMap::new();
    for mapping in &recipe.files {
        let host = recipe_dir.join(&mapping.host);
        let meta = fs::metadata(&host).map_err(|_| Error::MissingFile(host.clone()))?;
        add_parents(&mut entries, &mapping.image);
        if meta.is_dir() {
            entries.insert(
                mapping.image.clone(),
                ArchiveEntry::dir(mapping.image.clone(), mode_of(&meta)),
            );
            for e in DirArchive::from_dir(&host)?.entries() {
                let path = format!("{}/{}", mapping.image, e.path);
                entries.insert(
                    path.clone(),
                    ArchiveEntry {
                        path,
                        mode: e.mode,
                        content: e.content.clone(),
                    },
                );
            }
        } else {
            let content = fs::read(&host).map_err(|e| Error::io_at(&host, e))?;
            entries.insert(
                mapping.image.clone(),
                ArchiveEntry::file(mapping.image.clone(), mode_of(&meta), content),
            );
        }
    }

    if !runscript.starts_with('/') {
        match entries.get(&runscript) {
            Some(e) if !e.is_dir() => {}
            _ => {
                return Err(Error::NoRunscript(format!(
                    "{runscript} is not provided by [files]"
                )))
            }
        }
    }

    let files = entries
        .values()
        .filter(|e| !e.is_dir())
        .map(|e| (e.path.clone(), hex::encode(sha256(&e.content))))
        .collect();
    let manifest = SoftwareManifest {
        base: recipe.base.clone(),
        packages: recipe.packages.clone(),
        environment: recipe.environment.iter().cloned().collect(),
        runscript,
        files,
    };
    entries.insert(
        MANIFEST_PATH.to_owned(),
        ArchiveEntry::file(MANIFEST_PATH, MANIFEST_PERM, manifest.to_text().into_bytes()),
    );

    let payload = DirArchive::from_entries(entries.into_values().collect())?.to_bytes();
    let mut image = BoxImage::create(image_path)?;
    image.add_partition(&payload, PartitionKind::SYSTEM_PRIMARY, SYSTEM_PARTITION_NAME)?;
    Ok(image)
}

/// Parses the recipe at `recipe_path` and builds it.
pub fn build_app_image_from_file(recipe_path: &Path, image_path: &Path) -> Result<BoxImage> {
    let text = fs::read_to_string(recipe_path).map_err(|e| Error::io_at(recipe_path, e))?;
    let recipe = parse_recipe(&text)?;
    let dir = recipe_path.parent().unwrap_or(Path::new("."));
    build_app_image(&recipe, dir, image_path)
}

/// Reads the software manifest of an application image.
pub fn read_manifest(image: &mut BoxImage) -> Result<SoftwareManifest> {
    let id = system_partition_id(image)?;
    let payload = image.dump_partition(id)?;
    let entry = archive::parse_entries(&payload)?
        .into_iter()
        .find(|e| e.path == MANIFEST_PATH)
        .ok_or_else(|| Error::MalformedManifest("application image has no .manifest".into()))?;
    let text = std::str::from_utf8(entry.content)
        .map_err(|_| Error::MalformedManifest(".manifest is not UTF-8".into()))?;
    SoftwareManifest::parse(text)
}

pub fn system_partition_id(image: &BoxImage) -> Result<u32> {
    image
        .partitions_of(PartType::SystemPrimary)
        .next()
        .map(|d| d.id)
        .ok_or_else(|| Error::NoRunscript(format!("{} is not an application image", image.name())))
}

fn add_parents(entries: &mut BTreeMap<String, ArchiveEntry>, path: &str) {
    let mut prefix = String::new();
    let segs: Vec<&str> = path.split('/').collect();
    for seg in &segs[..segs.len() - 1] {
        if !prefix.is_empty() {
            prefix.push('/');
        }
        prefix.push_str(seg);
        entries
            .entry(prefix.clone())
            .or_insert_with(|| ArchiveEntry::dir(prefix.clone(), DIR_PERM));
    }
}

fn mode_of(meta: &fs::Metadata) -> u32 {
    use std::os::unix::fs::PermissionsExt;
    meta.permissions().mode() & 0o7777
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::os::unix::fs::PermissionsExt;

    #[test]
    fn empty_dir_packs_to_empty_archive() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("Inputs");
        fs::create_dir(&src).unwrap();
        let mut img = pack_data_dir(&src, &dir.path().join("input.boxi")).unwrap();
        assert_eq!(img.descriptors().len(), 1);
        let d = img.descriptors()[0].clone();
        assert_eq!(d.kind, PartitionKind::DATA);
        assert_eq!(d.name, "Inputs");
        assert_eq!(img.dump_partition(d.id).unwrap(), b"BDA1\0\0\0\0");
    }

    #[test]
    fn missing_dir_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = pack_data_dir(&dir.path().join("nope"), &dir.path().join("x.boxi")).unwrap_err();
        assert!(err.is_not_found(), "{err}");
    }

    #[test]
    fn empty_output_layout() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = pack_empty_output("Outputs", &dir.path().join("output.boxi")).unwrap();
        let mut b = pack_empty_output("Outputs", &dir.path().join("output2.boxi")).unwrap();
        assert_ne!(a.uuid(), b.uuid());
        assert_eq!(a.descriptors()[0].checksum, b.descriptors()[0].checksum);
        let payload = a.dump_partition(1).unwrap();
        let archive = DirArchive::from_bytes(&payload).unwrap();
        assert_eq!(archive.entries(), [ArchiveEntry::dir("Outputs", 0o755)]);
        assert_eq!(b.dump_partition(1).unwrap(), payload);
        assert!(matches!(
            pack_empty_output("../x", &dir.path().join("o.boxi")),
            Err(Error::InvalidName(_))
        ));
    }

    fn write_script(dir: &Path, name: &str) {
        let p = dir.join(name);
        fs::write(&p, "#!/bin/sh\necho plot\n").unwrap();
        fs::set_permissions(&p, fs::Permissions::from_mode(0o755)).unwrap();
    }

    #[test]
    fn app_image_embeds_manifest() {
        let dir = tempfile::tempdir().unwrap();
        write_script(dir.path(), "gnuplot.sh");
        let recipe = parse_recipe(
            "[base]\nubuntu:16.04\n[packages]\ngnuplot\n[files]\ngnuplot.sh = gnuplot.sh\n[environment]\nGNUTERM = svg\n[runscript]\ngnuplot.sh\n",
        )
        .unwrap();
        let mut a = build_app_image(&recipe, dir.path(), &dir.path().join("app.boxi")).unwrap();
        let mut b = build_app_image(&recipe, dir.path(), &dir.path().join("app2.boxi")).unwrap();
        assert_eq!(a.descriptors().len(), 1);
        assert_eq!(a.descriptors()[0].kind, PartitionKind::SYSTEM_PRIMARY);
        let ma = read_manifest(&mut a).unwrap();
        let mb = read_manifest(&mut b).unwrap();
        assert_eq!(ma.packages[0].name, "gnuplot");
        assert_eq!(ma.environment["GNUTERM"], "svg");
        assert_eq!(ma.manifest_hash(), mb.manifest_hash());
        assert_ne!(a.uuid(), b.uuid());

        let payload = a.dump_partition(1).unwrap();
        let archive = DirArchive::from_bytes(&payload).unwrap();
        let script = archive.entries().iter().find(|e| e.path == "gnuplot.sh").unwrap();
        assert_eq!(script.permissions(), 0o755);
    }

    #[test]
    fn runscript_from_base_needs_no_files() {
        let dir = tempfile::tempdir().unwrap();
        let recipe = parse_recipe("[base]\nubuntu:16.04\n[runscript]\n/bin/true\n").unwrap();
        let mut img = build_app_image(&recipe, dir.path(), &dir.path().join("a.boxi")).unwrap();
        assert_eq!(read_manifest(&mut img).unwrap().runscript, "/bin/true");
    }

    #[test]
    fn build_errors() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("a.boxi");
        let missing = parse_recipe("[base]\nb\n[files]\nnope.sh = nope.sh\n[runscript]\nnope.sh\n").unwrap();
        assert!(matches!(
            build_app_image(&missing, dir.path(), &out),
            Err(Error::MissingFile(_))
        ));
        let no_rs = parse_recipe("[base]\nb\n").unwrap();
        assert!(matches!(
            build_app_image(&no_rs, dir.path(), &out),
            Err(Error::NoRunscript(_))
        ));
        write_script(dir.path(), "x.sh");
        let unlisted = parse_recipe("[base]\nb\n[files]\nx.sh = bin/x.sh\n[runscript]\nx.sh\n").unwrap();
        assert!(matches!(
            build_app_image(&unlisted, dir.path(), &out),
            Err(Error::NoRunscript(_))
        ));
    }

    #[test]
    fn directory_mappings_are_expanded() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("tools/lib")).unwrap();
        fs::write(dir.path().join("tools/lib/a.txt"), "a").unwrap();
        write_script(&dir.path().join("tools"), "run.sh");
        let recipe =
            parse_recipe("[base]\nb\n[files]\ntools = opt/tools\n[runscript]\nopt/tools/run.sh\n").unwrap();
        let mut img = build_app_image(&recipe, dir.path(), &dir.path().join("a.boxi")).unwrap();
        let m = read_manifest(&mut img).unwrap();
        let paths: Vec<_> = m.files.keys().map(String::as_str).collect();
        assert_eq!(paths, ["opt/tools/lib/a.txt", "opt/tools/run.sh"]);
    }
}
