use std::collections::BTreeMap;
use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::Path;

use boxi_core::image::archive::{decode_dir, encode_dir};
use boxi_core::image::{BoxImage, PartitionKind};
use proptest::prelude::*;

fn listing(root: &Path) -> BTreeMap<String, (u32, Option<Vec<u8>>)> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            let meta = fs::metadata(&p).unwrap();
            let mode = meta.permissions().mode() & 0o777;
            if meta.is_dir() {
                out.insert(rel, (mode, None));
                stack.push(p);
            } else {
                out.insert(rel, (mode, Some(fs::read(&p).unwrap())));
            }
        }
    }
    out
}

fn file_strategy() -> impl Strategy<Value = (Vec<u8>, String, Vec<u8>, u32)> {
    (
        prop::collection::vec(0u8..3, 0..3),
        "[a-z][a-z0-9 ._-]{0,11}",
        prop::collection::vec(any::<u8>(), 0..2048),
        prop::sample::select(vec![0o644u32, 0o755, 0o600, 0o444]),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn archive_round_trip(files in prop::collection::vec(file_strategy(), 0..12)) {
        let tmp = tempfile::tempdir().unwrap();
        let src = tmp.path().join("src");
        fs::create_dir(&src).unwrap();
        for (dirs, name, content, mode) in &files {
            let mut dir = src.clone();
            for d in dirs {
                dir = dir.join(format!("d{d}"));
            }
            fs::create_dir_all(&dir).unwrap();
            let path = dir.join(name);
            if path.exists() {
                continue;
            }
            fs::write(&path, content).unwrap();
            fs::set_permissions(&path, fs::Permissions::from_mode(*mode)).unwrap();
        }
        let bytes = encode_dir(&src).unwrap();
        let dst = tmp.path().join("dst");
        decode_dir(&bytes, &dst).unwrap();
        prop_assert_eq!(listing(&src), listing(&dst));
        prop_assert_eq!(encode_dir(&dst).unwrap(), bytes);
    }

    #[test]
    fn add_dump_delete(
        payloads in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..4096), 1..8),
        deletions in prop::collection::vec(any::<prop::sample::Index>(), 0..4),
    ) {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("p.boxi");
        let mut img = BoxImage::create(&path).unwrap();
        let uuid = img.uuid();
        let mut live = BTreeMap::new();
        for (i, p) in payloads.iter().enumerate() {
            let id = img.add_partition(p, PartitionKind::DATA, &format!("p{i}")).unwrap();
            prop_assert!(live.keys().all(|&k| k < id));
            live.insert(id, p.clone());
        }
        for d in &deletions {
            let ids: Vec<u32> = live.keys().copied().collect();
            let id = ids[d.index(ids.len())];
            img.delete_partition(id).unwrap();
            live.remove(&id);
            if live.is_empty() {
                break;
            }
        }
        img.close().unwrap();

        let mut img = BoxImage::open_read(&path).unwrap();
        prop_assert_eq!(img.uuid(), uuid);
        prop_assert_eq!(img.descriptors().len(), live.len());
        for (id, p) in &live {
            prop_assert_eq!(&img.dump_partition(*id).unwrap(), p);
        }
        img.verify().unwrap();
    }
}
