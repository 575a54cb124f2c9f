//! Dataset ingestion, deterministic stratified splitting, and batched
//! streaming. Directory layout: `root/<class_name>/*.jpg`, one
//! subdirectory per class; lexicographic subdirectory order defines the
//! class indices.

pub mod batch;
pub mod imageops;

pub use batch::{Batch, BatchStream};
pub use imageops::{augment, decode_resize, normalize, AugmentConfig, ByteImage, IMG_SIZE};

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::rng::Xoshiro256PlusPlus;

// Stream-id namespaces for derived PRNGs, so split shuffles, epoch
// shuffles and per-image augmentation never share a stream.
pub(crate) const STREAM_SPLIT: u64 = 1 << 56;
pub(crate) const STREAM_EPOCH: u64 = 2 << 56;
pub(crate) const STREAM_AUGMENT: u64 = 3 << 56;

/// On-disk image catalog: sorted (path, class index) entries.
#[derive(Debug, Clone)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub class_names: Vec<String>,
    pub entries: Vec<(PathBuf, usize)>,
}

impl DatasetIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn class_count(&self, class: usize) -> usize {
        self.entries.iter().filter(|(_, c)| *c == class).count()
    }
}

/// Split fractions plus the shuffle seed.
#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, validation: f64, test: f64, seed: u64) -> Result<Self> {
        if train <= 0.0 || validation <= 0.0 || test <= 0.0 {
            return Err(Error::argument("split fractions must be positive"));
        }
        if ((train + validation + test) - 1.0).abs() > 1e-9 {
            return Err(Error::argument("split fractions must sum to 1"));
        }
        Ok(Self {
            train,
            validation,
            test,
            seed,
        })
    }

    pub fn default_with_seed(seed: u64) -> Self {
        Self {
            train: 0.70,
            validation: 0.15,
            test: 0.15,
            seed,
        }
    }
}

fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("jpg" | "jpeg" | "png")
    )
}

/// Enumerate every decodable image under `root/<class>/`. Undecodable
/// files are skipped with a warning on stderr. Entry order is sorted
/// paths, so repeated scans agree.
pub fn scan_dataset(root: &Path) -> Result<DatasetIndex> {
    if !root.is_dir() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("dataset root {} not found", root.display()),
        )));
    }
    let mut class_dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    class_dirs.sort();
    if class_dirs.is_empty() {
        return Err(Error::Dataset(format!(
            "no class subdirectories under {}",
            root.display()
        )));
    }
    let mut class_names = Vec::new();
    let mut entries = Vec::new();
    for (class, dir) in class_dirs.iter().enumerate() {
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Dataset(format!("unreadable class name in {}", dir.display())))?
            .to_string();
        let mut files: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_image_file(p))
            .collect();
        files.sort();
        let mut kept = 0;
        for f in files {
            // Header-only probe; full decode failures surface later too.
            match image::image_dimensions(&f) {
                Ok(_) => {
                    entries.push((f, class));
                    kept += 1;
                }
                Err(e) => {
                    eprintln!("warning: skipping undecodable file {}: {e}", f.display());
                }
            }
        }
        if kept == 0 {
            return Err(Error::Dataset(format!(
                "class directory {} has no decodable images",
                dir.display()
            )));
        }
        class_names.push(name);
    }
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        class_names,
        entries,
    })
}

/// Stratified split: within each class, entries are shuffled by a seeded
/// PRNG, the train partition takes floor(train * c), validation
/// floor(validation * c), and test the remainder.
pub fn split(
    index: &DatasetIndex,
    spec: &SplitSpec,
) -> Result<(DatasetIndex, DatasetIndex, DatasetIndex)> {
    let mut parts: [Vec<(PathBuf, usize)>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for class in 0..index.class_names.len() {
        let mut members: Vec<(PathBuf, usize)> = index
            .entries
            .iter()
            .filter(|(_, c)| *c == class)
            .cloned()
            .collect();
        if members.len() < 3 {
            return Err(Error::Dataset(format!(
                "class {} has {} entries, need at least 3 to split",
                index.class_names[class],
                members.len()
            )));
        }
        let mut rng = Xoshiro256PlusPlus::for_stream(spec.seed, STREAM_SPLIT | class as u64);
        rng.shuffle(&mut members);
        let c = members.len();
        let n_train = (spec.train * c as f64).floor() as usize;
        let n_val = (spec.validation * c as f64).floor() as usize;
        for (i, m) in members.into_iter().enumerate() {
            let bucket = if i < n_train {
                0
            } else if i < n_train + n_val {
                1
            } else {
                2
            };
            parts[bucket].push(m);
        }
    }
    // Keep deterministic sorted order inside each partition.
    let [mut train, mut val, mut test] = parts;
    for p in [&mut train, &mut val, &mut test] {
        p.sort();
    }
    let mk = |entries: Vec<(PathBuf, usize)>| DatasetIndex {
        root: index.root.clone(),
        class_names: index.class_names.clone(),
        entries,
    };
    Ok((mk(train), mk(val), mk(test)))
}

/// One line per entry: `<relative_path>\t<class_index>\t<partition>`.
pub fn write_split_manifest(
    path: &Path,
    root: &Path,
    partitions: &[(&str, &DatasetIndex)],
) -> Result<()> {
    let mut out = fs::File::create(path)?;
    for (name, index) in partitions {
        for (p, class) in &index.entries {
            let rel = p.strip_prefix(root).unwrap_or(p);
            writeln!(out, "{}\t{}\t{}", rel.display(), class, name)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Synthetic index without touching the filesystem.
    fn synth_index(counts: &[usize]) -> DatasetIndex {
        let mut entries = Vec::new();
        for (class, &n) in counts.iter().enumerate() {
            for i in 0..n {
                entries.push((PathBuf::from(format!("c{class}/img{i:05}.jpg")), class));
            }
        }
        DatasetIndex {
            root: PathBuf::from("."),
            class_names: counts.iter().enumerate().map(|(i, _)| format!("c{i}")).collect(),
            entries,
        }
    }

    #[test]
    fn split_1000_gives_700_150_150() {
        let idx = synth_index(&[1000]);
        let spec = SplitSpec::default_with_seed(1);
        let (tr, va, te) = split(&idx, &spec).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (700, 150, 150));
    }

    #[test]
    fn split_152_gives_106_22_24() {
        let idx = synth_index(&[152]);
        let spec = SplitSpec::default_with_seed(1);
        let (tr, va, te) = split(&idx, &spec).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (106, 22, 24));
    }

    #[test]
    fn split_partitions_cover_and_are_disjoint() {
        let idx = synth_index(&[50, 13, 29]);
        let spec = SplitSpec::default_with_seed(9);
        let (tr, va, te) = split(&idx, &spec).unwrap();
        let mut all: Vec<_> = tr
            .entries
            .iter()
            .chain(va.entries.iter())
            .chain(te.entries.iter())
            .cloned()
            .collect();
        all.sort();
        let mut orig = idx.entries.clone();
        orig.sort();
        assert_eq!(all, orig);
    }

    #[test]
    fn split_is_seed_deterministic() {
        let idx = synth_index(&[40, 40]);
        let spec = SplitSpec::default_with_seed(5);
        let (a, _, _) = split(&idx, &spec).unwrap();
        let (b, _, _) = split(&idx, &spec).unwrap();
        assert_eq!(a.entries, b.entries);
        let other = SplitSpec::default_with_seed(6);
        let (c, _, _) = split(&idx, &other).unwrap();
        assert_ne!(a.entries, c.entries);
    }

    #[test]
    fn tiny_class_is_dataset_error() {
        let idx = synth_index(&[10, 2]);
        let spec = SplitSpec::default_with_seed(1);
        assert!(matches!(split(&idx, &spec), Err(Error::Dataset(_))));
    }

    #[test]
    fn bad_fractions_rejected() {
        assert!(SplitSpec::new(0.5, 0.2, 0.2, 0).is_err());
        assert!(SplitSpec::new(0.7, 0.15, 0.15, 0).is_ok());
        assert!(SplitSpec::new(-0.1, 0.6, 0.5, 0).is_err());
    }

    #[test]
    fn missing_root_is_io_error() {
        assert!(matches!(
            scan_dataset(Path::new("/nonexistent/dataset/root")),
            Err(Error::Io(_))
        ));
    }
}
