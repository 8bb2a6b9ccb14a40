use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{io_err, write_png, DataError, DatasetManifest, ManifestEntry};
use crate::imageproc::RgbPatch;

/// Side of generated patches, matching the raw 50×50 tissue patches.
pub const SYNTHETIC_SIDE: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SyntheticKind {
    /// Class 0: smooth low-frequency blobs. Class 1: speckled texture with
    /// dark nucleus-like dots.
    #[default]
    BlobVsTexture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub per_class: usize,
    pub seed: u64,
    pub kind: SyntheticKind,
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn smooth_blobs(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let n = SYNTHETIC_SIDE;
    let base = [
        rng.gen_range(205.0..235.0),
        rng.gen_range(160.0..190.0),
        rng.gen_range(190.0..215.0),
    ];
    let blobs: Vec<(f64, f64, f64, f64)> = (0..rng.gen_range(3..6))
        .map(|_| {
            (
                rng.gen_range(0.0..n as f64),
                rng.gen_range(0.0..n as f64),
                rng.gen_range(8.0..15.0),
                rng.gen_range(-35.0..25.0),
            )
        })
        .collect();
    let mut px = Vec::with_capacity(n * n * 3);
    for y in 0..n {
        for x in 0..n {
            let shade: f64 = blobs
                .iter()
                .map(|&(cx, cy, s, amp)| {
                    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                    amp * (-d2 / (2.0 * s * s)).exp()
                })
                .sum();
            for b in base {
                px.push(to_u8(b + shade + rng.gen_range(-3.0..3.0)));
            }
        }
    }
    px
}

fn speckled_dots(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let n = SYNTHETIC_SIDE;
    let base = [
        rng.gen_range(190.0..225.0),
        rng.gen_range(140.0..175.0),
        rng.gen_range(180.0..210.0),
    ];
    let dots: Vec<(f64, f64, f64)> = (0..rng.gen_range(12..26))
        .map(|_| {
            (
                rng.gen_range(0.0..n as f64),
                rng.gen_range(0.0..n as f64),
                rng.gen_range(1.5..3.0),
            )
        })
        .collect();
    let nucleus = [70.0, 35.0, 100.0];
    let mut px = Vec::with_capacity(n * n * 3);
    for y in 0..n {
        for x in 0..n {
            let inside = dots
                .iter()
                .any(|&(cx, cy, r)| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r);
            let speckle = rng.gen_range(-40.0..40.0);
            for c in 0..3 {
                let v = if inside { nucleus[c] } else { base[c] };
                px.push(to_u8(v + speckle));
            }
        }
    }
    px
}

/// Patch `index` of class `label`; a pure function of its arguments.
pub fn synthesize_patch(spec: &SyntheticSpec, label: usize, index: usize) -> RgbPatch {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(((label as u64) << 32) | index as u64);
    let pixels = match (spec.kind, label) {
        (SyntheticKind::BlobVsTexture, 0) => smooth_blobs(&mut rng),
        (SyntheticKind::BlobVsTexture, _) => speckled_dots(&mut rng),
    };
    RgbPatch::new(SYNTHETIC_SIDE, SYNTHETIC_SIDE, pixels).expect("fixed size")
}

/// Writes `<out>/0/syn_NNNNN.png` and `<out>/1/syn_NNNNN.png`.
pub fn generate_synthetic(spec: &SyntheticSpec, out: &Path) -> Result<DatasetManifest, DataError> {
    let mut manifest = DatasetManifest::default();
    for label in 0..2 {
        let dir = out.join(label.to_string());
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for i in 0..spec.per_class {
            let path = dir.join(format!("syn_{i:05}.png"));
            write_png(&path, &synthesize_patch(spec, label, i))?;
            manifest.entries.push(ManifestEntry { path, label });
        }
        manifest.counts[label] = spec.per_class;
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_files() {
        let spec = SyntheticSpec {
            per_class: 10,
            seed: 7,
            kind: SyntheticKind::BlobVsTexture,
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = generate_synthetic(&spec, a.path()).unwrap();
        generate_synthetic(&spec, b.path()).unwrap();
        assert_eq!(ma.counts, [10, 10]);
        for e in &ma.entries {
            let rel = e.path.strip_prefix(a.path()).unwrap();
            assert_eq!(
                fs::read(&e.path).unwrap(),
                fs::read(b.path().join(rel)).unwrap()
            );
            let patch = super::super::read_png(&e.path).unwrap();
            assert_eq!((patch.width(), patch.height()), (50, 50));
        }
    }

    #[test]
    fn classes_differ_in_texture() {
        let spec = SyntheticSpec {
            per_class: 1,
            seed: 1,
            kind: SyntheticKind::BlobVsTexture,
        };
        let roughness = |p: &RgbPatch| {
            let px = p.pixels();
            px.chunks_exact(3)
                .zip(px.chunks_exact(3).skip(1))
                .map(|(a, b)| (a[1] as f64 - b[1] as f64).abs())
                .sum::<f64>()
        };
        for i in 0..5 {
            assert!(
                roughness(&synthesize_patch(&spec, 1, i))
                    > 3.0 * roughness(&synthesize_patch(&spec, 0, i))
            );
        }
    }
}
