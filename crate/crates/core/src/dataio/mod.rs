//! Patch directories, PNG codec, synthetic data and the binary tensor
//! container used for weights and preprocessed inputs.

mod container;
mod synthetic;

pub use container::{
    load_weights, load_weights_for, read_container, save_weights, write_container, Container,
    MAGIC, VERSION,
};
pub use synthetic::{
    generate_synthetic, synthesize_patch, SyntheticKind, SyntheticSpec, SYNTHETIC_SIDE,
};

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use log::warn;

use crate::imageproc::RgbPatch;
use crate::model::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing class directory {}", .0.display())]
    MissingClassDir(PathBuf),
    #[error("{}: cannot decode PNG: {reason}", path.display())]
    Decode { path: PathBuf, reason: String },
    #[error("{}: unsupported image: {reason}", path.display())]
    Unsupported { path: PathBuf, reason: String },
    #[error("checksum mismatch: file is truncated or corrupted")]
    Checksum,
    #[error("not a weights file: bad magic bytes")]
    BadMagic,
    #[error("unsupported format version {found}, expected {supported}")]
    Version { found: u32, supported: u32 },
    #[error("malformed container: {0}")]
    Malformed(String),
    #[error("tensor {tensor}: expected shape {expected:?}, got {got:?}")]
    ShapeMismatch {
        tensor: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("tensor {tensor}: {reason}")]
    TensorSet { tensor: String, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
}

/// Labeled patch files, class 0 first, each class in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub counts: [usize; 2],
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.label).collect()
    }
}

fn has_extension(path: &Path, extension: &str) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case(extension))
}

/// Lists the files of `<root>/0` and `<root>/1` whose extension matches
/// `extension` (case-insensitive), sorted by file name within each class.
/// Hidden files and subdirectories are skipped; other files are rejected.
pub fn list_class_files(root: &Path, extension: &str) -> Result<DatasetManifest, DataError> {
    let mut manifest = DatasetManifest::default();
    for label in 0..2 {
        let dir = root.join(label.to_string());
        if !dir.is_dir() {
            return Err(DataError::MissingClassDir(dir));
        }
        let mut files = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let entry = entry.map_err(io_err(&dir))?;
            if entry.file_name().to_string_lossy().starts_with('.') {
                continue;
            }
            let path = entry.path();
            if path.is_dir() {
                continue;
            }
            if !has_extension(&path, extension) {
                return Err(DataError::Unsupported {
                    path,
                    reason: format!("only .{extension} files are accepted"),
                });
            }
            files.push(path);
        }
        files.sort_by(|a, b| {
            a.file_name()
                .map(|n| n.as_encoded_bytes())
                .cmp(&b.file_name().map(|n| n.as_encoded_bytes()))
        });
        if files.is_empty() {
            warn!("class directory {} is empty", dir.display());
        }
        manifest.counts[label] = files.len();
        manifest
            .entries
            .extend(files.into_iter().map(|path| ManifestEntry { path, label }));
    }
    Ok(manifest)
}

/// Lists `<root>/0/*.png` and `<root>/1/*.png`, checking that each file is
/// an 8-bit RGB PNG. Hidden files are skipped; other files are rejected.
pub fn load_dataset_dir(root: &Path) -> Result<DatasetManifest, DataError> {
    let manifest = list_class_files(root, "png")?;
    for entry in &manifest.entries {
        check_png_header(&entry.path)?;
    }
    Ok(manifest)
}

fn decoder(path: &Path) -> Result<png::Reader<std::io::BufReader<fs::File>>, DataError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let reader = decoder.read_info().map_err(|e| DataError::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let info = reader.info();
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(DataError::Unsupported {
            path: path.to_path_buf(),
            reason: format!(
                "expected 8-bit RGB, found {:?} at {:?}",
                info.color_type, info.bit_depth
            ),
        });
    }
    Ok(reader)
}

fn check_png_header(path: &Path) -> Result<(), DataError> {
    decoder(path).map(|_| ())
}

pub fn read_png(path: &Path) -> Result<RgbPatch, DataError> {
    let mut reader = decoder(path)?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let frame = reader.next_frame(&mut buf).map_err(|e| DataError::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    buf.truncate(frame.buffer_size());
    RgbPatch::new(frame.width as usize, frame.height as usize, buf).map_err(|e| DataError::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn encode_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    data: &[u8],
) -> Result<(), DataError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    let encode_err = |e: png::EncodingError| DataError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    };
    let mut writer = encoder.write_header().map_err(encode_err)?;
    writer.write_image_data(data).map_err(encode_err)?;
    writer.finish().map_err(encode_err)
}

pub fn write_png(path: &Path, patch: &RgbPatch) -> Result<(), DataError> {
    encode_png(
        path,
        patch.width(),
        patch.height(),
        png::ColorType::Rgb,
        patch.pixels(),
    )
}

/// 8-bit grayscale PNG from row-major levels.
pub fn write_gray_png(
    path: &Path,
    width: usize,
    height: usize,
    levels: &[u8],
) -> Result<(), DataError> {
    encode_png(path, width, height, png::ColorType::Grayscale, levels)
}

pub fn load_patches(manifest: &DatasetManifest) -> Result<Vec<RgbPatch>, DataError> {
    manifest.entries.iter().map(|e| read_png(&e.path)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch_png(path: &Path, rgb: [u8; 3]) {
        write_png(path, &RgbPatch::filled(4, 3, rgb).unwrap()).unwrap();
    }

    #[test]
    fn manifest_counts_and_order() {
        let dir = tempfile::tempdir().unwrap();
        for c in ["0", "1"] {
            fs::create_dir(dir.path().join(c)).unwrap();
        }
        for name in ["b.png", "a.png", "c.png"] {
            touch_png(&dir.path().join("0").join(name), [1, 2, 3]);
        }
        for name in ["z.png", "y.png"] {
            touch_png(&dir.path().join("1").join(name), [4, 5, 6]);
        }
        fs::write(dir.path().join("1").join(".DS_Store"), b"x").unwrap();
        let m = load_dataset_dir(dir.path()).unwrap();
        assert_eq!(m.counts, [3, 2]);
        let names: Vec<_> = m
            .entries
            .iter()
            .map(|e| e.path.file_name().unwrap().to_str().unwrap().to_string())
            .collect();
        assert_eq!(names, ["a.png", "b.png", "c.png", "y.png", "z.png"]);
        assert_eq!(m.labels(), [0, 0, 0, 1, 1]);
    }

    #[test]
    fn empty_class_is_allowed() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("0")).unwrap();
        fs::create_dir(dir.path().join("1")).unwrap();
        touch_png(&dir.path().join("0").join("a.png"), [0, 0, 0]);
        assert_eq!(load_dataset_dir(dir.path()).unwrap().counts, [1, 0]);
    }

    #[test]
    fn missing_dir_and_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("0")).unwrap();
        assert!(matches!(
            load_dataset_dir(dir.path()),
            Err(DataError::MissingClassDir(_))
        ));
        fs::create_dir(dir.path().join("1")).unwrap();
        let bad = dir.path().join("1").join("broken.png");
        fs::write(&bad, b"not a png").unwrap();
        match load_dataset_dir(dir.path()) {
            Err(e @ DataError::Decode { .. }) => assert!(e.to_string().contains("broken.png")),
            other => panic!("unexpected {other:?}"),
        }
        fs::remove_file(&bad).unwrap();
        fs::write(dir.path().join("1").join("x.jpg"), b"jpeg").unwrap();
        assert!(matches!(
            load_dataset_dir(dir.path()),
            Err(DataError::Unsupported { .. })
        ));
    }

    #[test]
    fn grayscale_png_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        write_gray_png(&path, 2, 2, &[0, 1, 2, 3]).unwrap();
        assert!(matches!(
            read_png(&path),
            Err(DataError::Unsupported { .. })
        ));
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.png");
        let px: Vec<u8> = (0..5 * 4 * 3).map(|i| (i * 7) as u8).collect();
        let patch = RgbPatch::new(5, 4, px).unwrap();
        write_png(&path, &patch).unwrap();
        assert_eq!(read_png(&path).unwrap(), patch);
    }
}
