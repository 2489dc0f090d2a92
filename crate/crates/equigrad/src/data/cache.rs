//! On-disk cache for composed overlay datasets: one directory per dataset
//! holding a JSON manifest (seed, sizes, canvas, source digests), the raw
//! f32 image blob, and the label bytes. A load whose manifest or blob does
//! not match the request rebuilds in place. Access is guarded by an
//! advisory file lock so concurrent runs can share one cache root.

use std::fs;
use std::io::Write;
use std::os::unix::io::AsRawFd;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::overlay::{
    build_overlay_dataset, sample_digest, LabeledImages, OverlayDataset, OverlaySplit, CANVAS_SIDE,
};
use crate::error::{Error, Result};

const MANIFEST_FORMAT: u32 = 1;

#[derive(Debug, PartialEq, Eq, Serialize, Deserialize)]
struct Manifest {
    format: u32,
    seed: u64,
    sizes: [usize; 3],
    canvas: [usize; 2],
    source_a: SourceRecord,
    source_b: SourceRecord,
}

#[derive(Debug, PartialEq, Eq, Serialize, Deserialize)]
struct SourceRecord {
    name: String,
    images: usize,
    digest: u64,
}

/// Loads the dataset from the cache under `root`, or composes and stores it
/// when the cached copy is missing or does not match the request.
pub fn overlay_cache(
    root: &Path,
    source_a: (&str, &LabeledImages),
    source_b: (&str, &LabeledImages),
    sizes: (usize, usize, usize),
    seed: u64,
) -> Result<OverlayDataset> {
    let manifest = Manifest {
        format: MANIFEST_FORMAT,
        seed,
        sizes: [sizes.0, sizes.1, sizes.2],
        canvas: [CANVAS_SIDE, CANVAS_SIDE],
        source_a: SourceRecord {
            name: source_a.0.to_string(),
            images: source_a.1.len(),
            digest: source_a.1.digest(),
        },
        source_b: SourceRecord {
            name: source_b.0.to_string(),
            images: source_b.1.len(),
            digest: source_b.1.digest(),
        },
    };
    let dir = dataset_dir(root, &manifest);
    fs::create_dir_all(&dir)
        .map_err(|e| Error::Cache(format!("cannot create {}: {e}", dir.display())))?;
    let _lock = lock_exclusive(&dir.with_extension("lock"))?;

    if let Some(data) = try_load(&dir, &manifest)? {
        return Ok(data);
    }
    let data = build_overlay_dataset(
        source_a.1,
        source_b.1,
        (source_a.0, source_b.0),
        sizes,
        seed,
    )?;
    store(&dir, &manifest, &data)?;
    Ok(data)
}

/// Directory for one dataset: readable name parts plus the seed. Contents
/// are still verified against the manifest on load.
fn dataset_dir(root: &Path, m: &Manifest) -> PathBuf {
    let clean = |s: &str| -> String {
        s.chars()
            .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
            .collect()
    };
    root.join(format!(
        "overlay_{}_{}_{}-{}-{}_s{}",
        clean(&m.source_a.name),
        clean(&m.source_b.name),
        m.sizes[0],
        m.sizes[1],
        m.sizes[2],
        m.seed
    ))
}

fn try_load(dir: &Path, expected: &Manifest) -> Result<Option<OverlayDataset>> {
    let manifest_path = dir.join("manifest.json");
    let Ok(bytes) = fs::read(&manifest_path) else {
        return Ok(None);
    };
    let Ok(found) = serde_json::from_slice::<Manifest>(&bytes) else {
        return Ok(None);
    };
    if &found != expected {
        return Ok(None);
    }
    let total: usize = expected.sizes.iter().sum();
    let pixels_per = CANVAS_SIDE * CANVAS_SIDE;
    let Ok(blob) = fs::read(dir.join("images.f32")) else {
        return Ok(None);
    };
    let Ok(label_bytes) = fs::read(dir.join("labels.u8")) else {
        return Ok(None);
    };
    if blob.len() != total * pixels_per * 4 || label_bytes.len() != total * 2 {
        return Ok(None);
    }
    let mut splits = Vec::with_capacity(3);
    let mut at = 0;
    for &n in &expected.sizes {
        let mut split = OverlaySplit::with_capacity(CANVAS_SIDE, CANVAS_SIDE, n);
        for _ in 0..n {
            let mut pixels = Vec::with_capacity(pixels_per);
            for p in 0..pixels_per {
                let off = (at * pixels_per + p) * 4;
                let raw: [u8; 4] = blob[off..off + 4].try_into().expect("4-byte slice");
                pixels.push(f64::from(f32::from_le_bytes(raw)));
            }
            let la = label_bytes[at * 2] as usize;
            let lb = label_bytes[at * 2 + 1] as usize;
            split.push(&pixels, la, lb, sample_digest(&pixels, la, lb));
            at += 1;
        }
        splits.push(split);
    }
    let mut it = splits.into_iter();
    Ok(Some(OverlayDataset {
        train: it.next().expect("three splits loaded"),
        val: it.next().expect("three splits loaded"),
        test: it.next().expect("three splits loaded"),
        source_names: (
            expected.source_a.name.clone(),
            expected.source_b.name.clone(),
        ),
        seed: expected.seed,
    }))
}

/// Writes blob and labels first and the manifest last, so an interrupted
/// store is seen as a mismatch and rebuilt.
fn store(dir: &Path, manifest: &Manifest, data: &OverlayDataset) -> Result<()> {
    let write = |name: &str, bytes: &[u8]| -> Result<()> {
        let path = dir.join(name);
        let mut f = fs::File::create(&path)
            .map_err(|e| Error::Cache(format!("cannot create {}: {e}", path.display())))?;
        f.write_all(bytes)
            .map_err(|e| Error::Cache(format!("cannot write {}: {e}", path.display())))?;
        Ok(())
    };
    let splits = [&data.train, &data.val, &data.test];
    let total: usize = splits.iter().map(|s| s.len()).sum();
    let mut blob = Vec::with_capacity(total * CANVAS_SIDE * CANVAS_SIDE * 4);
    let mut labels = Vec::with_capacity(total * 2);
    for split in splits {
        for i in 0..split.len() {
            for &p in split.image(i) {
                blob.extend_from_slice(&(p as f32).to_le_bytes());
            }
            labels.push(split.labels(0)[i] as u8);
            labels.push(split.labels(1)[i] as u8);
        }
    }
    write("images.f32", &blob)?;
    write("labels.u8", &labels)?;
    let json = serde_json::to_vec_pretty(manifest)?;
    write("manifest.json", &json)
}

/// Holds an exclusive advisory lock for as long as the value lives.
struct DirLock {
    _file: fs::File,
}

fn lock_exclusive(path: &Path) -> Result<DirLock> {
    let file = fs::OpenOptions::new()
        .create(true)
        .truncate(false)
        .read(true)
        .write(true)
        .open(path)
        .map_err(|e| Error::Cache(format!("cannot open lock {}: {e}", path.display())))?;
    let rc = unsafe { libc::flock(file.as_raw_fd(), libc::LOCK_EX) };
    if rc != 0 {
        return Err(Error::Cache(format!(
            "cannot lock {}: {}",
            path.display(),
            std::io::Error::last_os_error()
        )));
    }
    Ok(DirLock { _file: file })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::glyphs::glyph_set;

    fn digests(d: &OverlayDataset) -> Vec<u64> {
        [&d.train, &d.val, &d.test]
            .into_iter()
            .flat_map(|s| (0..s.len()).map(|i| s.sample_digest(i)))
            .collect()
    }

    #[test]
    fn load_reproduces_the_built_dataset_exactly() {
        let tmp = tempfile::tempdir().unwrap();
        let src = glyph_set(3, 5).unwrap();
        let built = overlay_cache(tmp.path(), ("g", &src), ("g", &src), (10, 4, 4), 9).unwrap();
        assert!(tmp
            .path()
            .join("overlay_g_g_10-4-4_s9/manifest.json")
            .exists());
        let loaded = overlay_cache(tmp.path(), ("g", &src), ("g", &src), (10, 4, 4), 9).unwrap();
        assert_eq!(digests(&built), digests(&loaded));
        assert_eq!(built.train.labels(0), loaded.train.labels(0));
        assert_eq!(built.test.labels(1), loaded.test.labels(1));
        assert_eq!(built.train.image(3), loaded.train.image(3));
    }

    #[test]
    fn mismatched_manifest_rebuilds() {
        let tmp = tempfile::tempdir().unwrap();
        let src = glyph_set(3, 5).unwrap();
        let built = overlay_cache(tmp.path(), ("g", &src), ("g", &src), (6, 2, 2), 1).unwrap();
        let manifest = tmp.path().join("overlay_g_g_6-2-2_s1/manifest.json");
        let tampered = fs::read_to_string(&manifest)
            .unwrap()
            .replace("\"seed\": 1", "\"seed\": 2");
        fs::write(&manifest, tampered).unwrap();
        let rebuilt = overlay_cache(tmp.path(), ("g", &src), ("g", &src), (6, 2, 2), 1).unwrap();
        assert_eq!(digests(&built), digests(&rebuilt));
        let stored = fs::read_to_string(&manifest).unwrap();
        assert!(stored.contains("\"seed\": 1"));
    }

    #[test]
    fn truncated_blob_rebuilds() {
        let tmp = tempfile::tempdir().unwrap();
        let src = glyph_set(3, 5).unwrap();
        let built = overlay_cache(tmp.path(), ("g", &src), ("g", &src), (6, 2, 2), 3).unwrap();
        let blob = tmp.path().join("overlay_g_g_6-2-2_s3/images.f32");
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() / 2]).unwrap();
        let rebuilt = overlay_cache(tmp.path(), ("g", &src), ("g", &src), (6, 2, 2), 3).unwrap();
        assert_eq!(digests(&built), digests(&rebuilt));
    }

    #[test]
    fn changed_source_content_rebuilds() {
        let tmp = tempfile::tempdir().unwrap();
        let old = glyph_set(3, 5).unwrap();
        let new = glyph_set(3, 6).unwrap();
        let first = overlay_cache(tmp.path(), ("g", &old), ("g", &old), (6, 2, 2), 3).unwrap();
        let second = overlay_cache(tmp.path(), ("g", &new), ("g", &new), (6, 2, 2), 3).unwrap();
        assert_ne!(digests(&first), digests(&second));
    }
}
