//! Dataset ingestion, preprocessing, and source pairing for the two users.
//!
//! Two on-disk layouts are understood: CIFAR-style binary batch files
//! (1 label byte + channel-planar pixels per record) and directories of
//! PNG/JPEG images. Pixels are normalized to [0,1] by dividing by 255.
//! A synthesizer can emit a CIFAR-format corpus for environments without
//! the real datasets.

use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use image::imageops;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CropOrResize {
    CenterCrop,
    Resize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub source_path: PathBuf,
    /// Policy for inputs whose native resolution differs from (height, width).
    pub crop_or_resize: Option<CropOrResize>,
}

impl DatasetSpec {
    pub fn pixels(&self) -> usize {
        3 * self.height * self.width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairingMode {
    SameDatasetDisjoint,
    CrossDataset,
}

/// A batch of images as a (B, 3, H, W) tensor in [0,1] plus source indices.
#[derive(Debug, Clone)]
pub struct ImageBatch {
    pub data: Tensor,
    pub ids: Vec<usize>,
}

/// One split of a dataset, fully resident as u8 pixels.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub spec: DatasetSpec,
    pub split: Split,
    pub count: usize,
    pixels: Vec<u8>,
}

impl LoadedDataset {
    pub fn image_bytes(&self, idx: usize) -> &[u8] {
        let sz = self.spec.pixels();
        &self.pixels[idx * sz..(idx + 1) * sz]
    }

    /// Materialize a batch by source index, values in [0,1].
    pub fn batch(&self, ids: &[usize], dev: &Device) -> Result<ImageBatch> {
        let sz = self.spec.pixels();
        let mut data = Vec::with_capacity(ids.len() * sz);
        for &id in ids {
            if id >= self.count {
                return Err(Error::config(format!(
                    "image index {id} out of range (count {})",
                    self.count
                )));
            }
            data.extend(self.image_bytes(id).iter().map(|&b| b as f32 / 255.0));
        }
        let t = Tensor::from_vec(
            data,
            (ids.len(), 3, self.spec.height, self.spec.width),
            dev,
        )?;
        Ok(ImageBatch { data: t, ids: ids.to_vec() })
    }
}

fn ingest_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Ingest { path: path.to_path_buf(), reason: reason.into() }
}

/// Load one split. Directories of .bin files are treated as CIFAR-style
/// binaries; anything else must be a directory of PNG/JPEG images.
pub fn load_dataset(spec: &DatasetSpec, split: Split) -> Result<LoadedDataset> {
    let root = &spec.source_path;
    if !root.exists() {
        return Err(ingest_err(root, "dataset root does not exist"));
    }
    let mut bins: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "bin"))
        .collect();
    bins.sort();
    let want = match split {
        Split::Train => spec.train_count,
        Split::Test => spec.test_count,
    };
    if !bins.is_empty() {
        load_cifar_binary(spec, split, &bins, want)
    } else {
        load_image_dir(spec, split, want)
    }
}

fn load_cifar_binary(
    spec: &DatasetSpec,
    split: Split,
    bins: &[PathBuf],
    want: usize,
) -> Result<LoadedDataset> {
    let record = 1 + spec.pixels();
    let keyword = match split {
        Split::Train => "train",
        Split::Test => "test",
    };
    let mut files: Vec<&PathBuf> = bins
        .iter()
        .filter(|p| {
            let name = p.file_name().unwrap().to_string_lossy().to_lowercase();
            match split {
                // CIFAR ships data_batch_*.bin for train, test_batch.bin for test
                Split::Train => !name.contains("test"),
                Split::Test => name.contains("test"),
            }
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(ingest_err(
            &spec.source_path,
            format!("no .bin files for split '{keyword}'"),
        ));
    }
    let mut pixels = Vec::with_capacity(want * spec.pixels());
    let mut count = 0;
    'outer: for f in files {
        let bytes = std::fs::read(f)?;
        if bytes.len() % record != 0 {
            return Err(ingest_err(
                f,
                format!(
                    "file size {} is not a multiple of the {record}-byte record",
                    bytes.len()
                ),
            ));
        }
        for rec in bytes.chunks_exact(record) {
            pixels.extend_from_slice(&rec[1..]); // skip label byte
            count += 1;
            if count == want {
                break 'outer;
            }
        }
    }
    if count < want {
        return Err(ingest_err(
            &spec.source_path,
            format!("split '{keyword}' has {count} images, config asks for {want}"),
        ));
    }
    Ok(LoadedDataset { spec: spec.clone(), split, count, pixels })
}

fn load_image_dir(spec: &DatasetSpec, split: Split, want: usize) -> Result<LoadedDataset> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(&spec.source_path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .map(|e| {
                    let e = e.to_string_lossy().to_lowercase();
                    e == "png" || e == "jpg" || e == "jpeg"
                })
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    let offset = match split {
        Split::Train => 0,
        Split::Test => spec.train_count,
    };
    if files.len() < offset + want {
        return Err(ingest_err(
            &spec.source_path,
            format!(
                "found {} images, need {} for split offset {offset}",
                files.len(),
                offset + want
            ),
        ));
    }
    let mut pixels = Vec::with_capacity(want * spec.pixels());
    for f in &files[offset..offset + want] {
        let img = image::open(f).map_err(|e| ingest_err(f, e.to_string()))?.to_rgb8();
        let img = fit_resolution(img, spec, f)?;
        // channel-planar layout, matching the binary path
        for ch in 0..3 {
            for y in 0..spec.height {
                for x in 0..spec.width {
                    pixels.push(img.get_pixel(x as u32, y as u32).0[ch]);
                }
            }
        }
    }
    Ok(LoadedDataset { spec: spec.clone(), split, count: want, pixels })
}

fn fit_resolution(
    img: image::RgbImage,
    spec: &DatasetSpec,
    path: &Path,
) -> Result<image::RgbImage> {
    let (w, h) = (spec.width as u32, spec.height as u32);
    if img.width() == w && img.height() == h {
        return Ok(img);
    }
    match spec.crop_or_resize {
        None => Err(Error::config(format!(
            "{} is {}x{} but the dataset expects {}x{} and no crop/resize policy is set",
            path.display(),
            img.width(),
            img.height(),
            w,
            h
        ))),
        Some(CropOrResize::Resize) => {
            Ok(imageops::resize(&img, w, h, imageops::FilterType::Triangle))
        }
        Some(CropOrResize::CenterCrop) => {
            if img.width() < w || img.height() < h {
                return Err(Error::config(format!(
                    "{} is smaller than the {}x{} crop",
                    path.display(),
                    w,
                    h
                )));
            }
            let x0 = (img.width() - w) / 2;
            let y0 = (img.height() - h) / 2;
            Ok(imageops::crop_imm(&img, x0, y0, w, h).to_image())
        }
    }
}

/// Disjoint id pairs for one epoch of same-dataset pairing: a seeded shuffle
/// chunked into half-batches, so no id appears on both sides of any batch.
pub fn plan_disjoint_pairs(
    count: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if batch_size < 1 {
        return Err(Error::config("batch_size must be >= 1"));
    }
    if 2 * batch_size > count {
        return Err(Error::config(format!(
            "disjoint pairing needs 2*batch_size <= dataset size ({} > {count})",
            2 * batch_size
        )));
    }
    let mut ids: Vec<usize> = (0..count).collect();
    ids.shuffle(&mut stream_rng(seed, Stream::Pairing, epoch));
    Ok(ids
        .chunks_exact(2 * batch_size)
        .map(|c| (c[..batch_size].to_vec(), c[batch_size..].to_vec()))
        .collect())
}

/// Per-epoch id pairs for cross-dataset pairing, one shuffle per user.
pub fn plan_cross_pairs(
    count1: usize,
    count2: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if batch_size < 1 {
        return Err(Error::config("batch_size must be >= 1"));
    }
    if batch_size > count1 || batch_size > count2 {
        return Err(Error::config("batch_size exceeds a dataset size"));
    }
    let mut ids1: Vec<usize> = (0..count1).collect();
    let mut ids2: Vec<usize> = (0..count2).collect();
    ids1.shuffle(&mut stream_rng(seed, Stream::Pairing, epoch * 2));
    ids2.shuffle(&mut stream_rng(seed, Stream::Pairing, epoch * 2 + 1));
    let batches = (count1 / batch_size).min(count2 / batch_size);
    Ok((0..batches)
        .map(|b| {
            (
                ids1[b * batch_size..(b + 1) * batch_size].to_vec(),
                ids2[b * batch_size..(b + 1) * batch_size].to_vec(),
            )
        })
        .collect())
}

/// Write a batch to disk as 8-bit PNGs; returns the written paths.
pub fn write_png(batch: &ImageBatch, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let (b, _c, h, w) = batch.data.dims4()?;
    let flat = batch.data.flatten_all()?.to_vec1::<f32>()?;
    let mut paths = Vec::with_capacity(b);
    for i in 0..b {
        let mut img = image::RgbImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                let px = |ch: usize| {
                    let v = flat[((i * 3 + ch) * h + y) * w + x];
                    (v.clamp(0.0, 1.0) * 255.0).round() as u8
                };
                img.put_pixel(x as u32, y as u32, image::Rgb([px(0), px(1), px(2)]));
            }
        }
        let path = dir.join(format!("img_{:06}.png", batch.ids[i]));
        img.save(&path)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Emit a synthetic CIFAR-format corpus (train.bin + test.bin) of smooth
/// random fields with occasional solid shapes, for desk-scale runs without
/// the real datasets.
pub fn synthesize_corpus(
    dir: &Path,
    h: usize,
    w: usize,
    train_count: usize,
    test_count: usize,
    seed: u64,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let write = |name: &str, count: usize, stream_step: u64| -> Result<()> {
        let mut out = Vec::with_capacity(count * (1 + 3 * h * w));
        let mut rng = stream_rng(seed, Stream::Synth, stream_step);
        for _ in 0..count {
            out.push(rng.gen_range(0..10u8)); // label byte, unused downstream
            out.extend(synthetic_image(h, w, &mut rng));
        }
        std::fs::write(dir.join(name), out)?;
        Ok(())
    };
    write("train.bin", train_count, 0)?;
    write("test.bin", test_count, 1)?;
    Ok(())
}

fn synthetic_image(h: usize, w: usize, rng: &mut impl Rng) -> Vec<u8> {
    // low-frequency color field: random coarse grid, bilinear upsample
    let g = 4usize;
    let coarse: Vec<[f64; 3]> = (0..(g + 1) * (g + 1))
        .map(|_| [rng.gen(), rng.gen(), rng.gen()])
        .collect();
    let mut img = vec![[0f64; 3]; h * w];
    for y in 0..h {
        for x in 0..w {
            let fy = y as f64 / h as f64 * g as f64;
            let fx = x as f64 / w as f64 * g as f64;
            let (iy, ix) = (fy as usize, fx as usize);
            let (ty, tx) = (fy - iy as f64, fx - ix as f64);
            let at = |r: usize, c: usize| coarse[r * (g + 1) + c];
            for ch in 0..3 {
                let top = at(iy, ix)[ch] * (1.0 - tx) + at(iy, ix + 1)[ch] * tx;
                let bot = at(iy + 1, ix)[ch] * (1.0 - tx) + at(iy + 1, ix + 1)[ch] * tx;
                img[y * w + x][ch] = top * (1.0 - ty) + bot * ty;
            }
        }
    }
    // a few solid ellipses for edges
    for _ in 0..rng.gen_range(1..4usize) {
        let cy = rng.gen_range(0.0..h as f64);
        let cx = rng.gen_range(0.0..w as f64);
        let ry = rng.gen_range(2.0..h as f64 / 3.0);
        let rx = rng.gen_range(2.0..w as f64 / 3.0);
        let color = [rng.gen::<f64>(), rng.gen(), rng.gen()];
        for y in 0..h {
            for x in 0..w {
                let dy = (y as f64 - cy) / ry;
                let dx = (x as f64 - cx) / rx;
                if dy * dy + dx * dx <= 1.0 {
                    for ch in 0..3 {
                        img[y * w + x][ch] = 0.3 * img[y * w + x][ch] + 0.7 * color[ch];
                    }
                }
            }
        }
    }
    let mut out = Vec::with_capacity(3 * h * w);
    for ch in 0..3 {
        for p in img.iter() {
            let noisy = p[ch] + rng.gen_range(-0.01..0.01);
            out.push((noisy.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec(dir: &Path) -> DatasetSpec {
        DatasetSpec {
            name: "synth".into(),
            height: 16,
            width: 16,
            train_count: 40,
            test_count: 12,
            source_path: dir.to_path_buf(),
            crop_or_resize: None,
        }
    }

    #[test]
    fn synth_load_and_range() {
        let dir = tempfile::tempdir().unwrap();
        synthesize_corpus(dir.path(), 16, 16, 40, 12, 5).unwrap();
        let spec = tiny_spec(dir.path());
        let train = load_dataset(&spec, Split::Train).unwrap();
        let test = load_dataset(&spec, Split::Test).unwrap();
        assert_eq!(train.count, 40);
        assert_eq!(test.count, 12);
        let b = train.batch(&[0, 1, 2], &Device::Cpu).unwrap();
        let vals = b.data.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(vals.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn missing_root_is_ingest_error() {
        let spec = DatasetSpec {
            source_path: PathBuf::from("/nonexistent/dataset"),
            ..tiny_spec(Path::new("/tmp"))
        };
        match load_dataset(&spec, Split::Train) {
            Err(Error::Ingest { path, .. }) => {
                assert!(path.to_string_lossy().contains("nonexistent"))
            }
            other => panic!("expected ingest error, got {other:?}"),
        }
    }

    #[test]
    fn short_split_is_error() {
        let dir = tempfile::tempdir().unwrap();
        synthesize_corpus(dir.path(), 16, 16, 10, 4, 5).unwrap();
        let spec = tiny_spec(dir.path()); // asks for 40 train images
        assert!(load_dataset(&spec, Split::Train).is_err());
    }

    #[test]
    fn disjoint_pairs_are_disjoint_and_deterministic() {
        let plan = plan_disjoint_pairs(100, 8, 7, 0).unwrap();
        assert!(!plan.is_empty());
        for (s1, s2) in &plan {
            assert_eq!(s1.len(), 8);
            assert_eq!(s2.len(), 8);
            let mut all: Vec<usize> = s1.iter().chain(s2.iter()).copied().collect();
            all.sort();
            all.dedup();
            assert_eq!(all.len(), 16, "ids not pairwise distinct");
        }
        let again = plan_disjoint_pairs(100, 8, 7, 0).unwrap();
        assert_eq!(plan, again);
        let other_seed = plan_disjoint_pairs(100, 8, 8, 0).unwrap();
        assert_ne!(plan, other_seed);
    }

    #[test]
    fn disjoint_pairs_reject_oversized_batch() {
        assert!(plan_disjoint_pairs(10, 8, 0, 0).is_err());
    }

    #[test]
    fn cross_pairs_draw_from_own_dataset() {
        let plan = plan_cross_pairs(50, 30, 4, 3, 0).unwrap();
        for (s1, s2) in &plan {
            assert!(s1.iter().all(|&i| i < 50));
            assert!(s2.iter().all(|&i| i < 30));
        }
    }

    #[test]
    fn png_roundtrip_within_half_lsb() {
        let dir = tempfile::tempdir().unwrap();
        synthesize_corpus(dir.path(), 16, 16, 8, 2, 11).unwrap();
        let spec = tiny_spec(dir.path());
        let mut spec = spec;
        spec.train_count = 8;
        spec.test_count = 2;
        let ds = load_dataset(&spec, Split::Train).unwrap();
        let batch = ds.batch(&[0, 3, 5], &Device::Cpu).unwrap();
        let out = tempfile::tempdir().unwrap();
        write_png(&batch, out.path()).unwrap();

        let spec2 = DatasetSpec {
            name: "roundtrip".into(),
            height: 16,
            width: 16,
            train_count: 3,
            test_count: 0,
            source_path: out.path().to_path_buf(),
            crop_or_resize: None,
        };
        let back = load_dataset(&spec2, Split::Train).unwrap();
        let a = batch.data.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        // PNG files sort by original id, which we wrote in ascending order
        let b = back
            .batch(&[0, 1, 2], &Device::Cpu)
            .unwrap()
            .data
            .flatten_all()
            .unwrap()
            .to_vec1::<f32>()
            .unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1.0 / 255.0);
        }
    }

    #[test]
    fn resize_policy_applies() {
        // write 24x24 PNGs, load at 16x16 with resize
        let dir = tempfile::tempdir().unwrap();
        for i in 0..3 {
            let img = image::RgbImage::from_fn(24, 24, |x, y| {
                image::Rgb([(x * 10) as u8, (y * 10) as u8, i as u8])
            });
            img.save(dir.path().join(format!("{i}.png"))).unwrap();
        }
        let mut spec = tiny_spec(dir.path());
        spec.train_count = 3;
        spec.test_count = 0;
        assert!(load_dataset(&spec, Split::Train).is_err()); // no policy
        spec.crop_or_resize = Some(CropOrResize::Resize);
        let ds = load_dataset(&spec, Split::Train).unwrap();
        assert_eq!(ds.image_bytes(0).len(), 3 * 16 * 16);
        spec.crop_or_resize = Some(CropOrResize::CenterCrop);
        assert!(load_dataset(&spec, Split::Train).is_ok());
    }
}
