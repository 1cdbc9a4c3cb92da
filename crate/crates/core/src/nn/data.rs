//! Datasets and augmentation.
//!
//! The synthetic dataset is a deterministic 4-class stand-in small enough to
//! train in seconds: 8x8 single-channel template images plus Gaussian noise.
//! CIFAR-10 loads from the binary batch format (3073-byte records).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;
use crate::rng::RandomSource;

/// Images stored as [count, H, W, channels] with values in [0, 1].
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// (H, W, channels)
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    fn validate(images: &Tensor, labels: &[usize], classes: usize) -> Result<()> {
        if images.shape()[0] != labels.len() {
            return Err(Error::LengthMismatch {
                expected: images.shape()[0],
                got: labels.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|l| **l >= classes) {
            return Err(Error::Dataset(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(())
    }

    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        Self::validate(&images, &labels, classes)?;
        Ok(DatasetSplit {
            images,
            labels,
            classes,
        })
    }
}

pub const SYNTHETIC_DIM: usize = 8;
pub const SYNTHETIC_CLASSES: usize = 4;
pub const SYNTHETIC_NOISE: f64 = 0.3;

/// Class templates: four distinct 8x8 patterns, each symmetric under
/// horizontal flips so augmentation never aliases one class into another.
pub fn synthetic_template(class: usize) -> [f64; 64] {
    let hi = 0.9;
    let lo = 0.1;
    let mut img = [0.0; 64];
    for r in 0..8usize {
        for c in 0..8usize {
            let bright = match class {
                // top half
                0 => r < 4,
                // centered vertical stripe
                1 => (2..=5).contains(&c),
                // top and bottom bands
                2 => !(2..=5).contains(&r),
                // X of the two diagonals
                3 => r.abs_diff(c) <= 1 || (r + c).abs_diff(7) <= 1,
                _ => unreachable!("synthetic data has 4 classes"),
            };
            img[r * 8 + c] = if bright { hi } else { lo };
        }
    }
    img
}

fn synthetic_image(seed: u64, class: usize, index: usize, noise: f64) -> [f64; 64] {
    let mut img = synthetic_template(class);
    let mut rng = RandomSource::new(seed)
        .fork(class as u64)
        .fork(index as u64);
    for v in &mut img {
        *v = (*v + noise * rng.next_normal()).clamp(0.0, 1.0);
    }
    img
}

fn collect_split(seed: u64, range: std::ops::Range<usize>, noise: f64) -> DatasetSplit {
    let count = range.len() * SYNTHETIC_CLASSES;
    let mut data = Vec::with_capacity(count * 64);
    let mut labels = Vec::with_capacity(count);
    for class in 0..SYNTHETIC_CLASSES {
        for index in range.clone() {
            data.extend_from_slice(&synthetic_image(seed, class, index, noise));
            labels.push(class);
        }
    }
    let images = Tensor::from_vec(&[count, SYNTHETIC_DIM, SYNTHETIC_DIM, 1], data)
        .expect("synthetic images are finite by construction");
    DatasetSplit {
        images,
        labels,
        classes: SYNTHETIC_CLASSES,
    }
}

/// Deterministic synthetic dataset: `per_class` images per class, split
/// 80/20 into train and test.
pub fn synthetic_dataset(seed: u64, per_class: usize) -> Result<(DatasetSplit, DatasetSplit)> {
    synthetic_dataset_with_noise(seed, per_class, SYNTHETIC_NOISE)
}

pub fn synthetic_dataset_with_noise(
    seed: u64,
    per_class: usize,
    noise: f64,
) -> Result<(DatasetSplit, DatasetSplit)> {
    if per_class == 0 {
        return Err(Error::InvalidArgument(
            "per_class must be at least 1".into(),
        ));
    }
    let train_per_class = (per_class * 4 / 5).max(1);
    let train = collect_split(seed, 0..train_per_class, noise);
    let test = collect_split(seed, train_per_class..per_class, noise);
    Ok((train, test))
}

const CIFAR_RECORD: usize = 3073;
const CIFAR_PIXELS: usize = 1024;

/// Parses CIFAR-10 binary batch files: each record is one label byte
/// followed by 1024 red, 1024 green, and 1024 blue bytes in row-major
/// 32x32 order. Pixels scale to [0, 1].
pub fn load_cifar10_binary(paths: &[impl AsRef<Path>]) -> Result<DatasetSplit> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let bytes = fs::read(path)?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
            return Err(Error::Dataset(format!(
                "{}: size {} is not a multiple of {CIFAR_RECORD}",
                path.display(),
                bytes.len()
            )));
        }
        for record in bytes.chunks_exact(CIFAR_RECORD) {
            let label = record[0];
            if label > 9 {
                return Err(Error::Dataset(format!(
                    "{}: label byte {label} exceeds 9",
                    path.display()
                )));
            }
            labels.push(label as usize);
            let pixels = &record[1..];
            for y in 0..32 {
                for x in 0..32 {
                    for ch in 0..3 {
                        data.push(f64::from(pixels[ch * CIFAR_PIXELS + y * 32 + x]) / 255.0);
                    }
                }
            }
        }
    }
    let count = labels.len();
    let images = Tensor::from_vec(&[count, 32, 32, 3], data)?;
    DatasetSplit::new(images, labels, 10)
}

/// Keep the first `count` examples of a split.
pub fn subset(split: &DatasetSplit, count: usize) -> DatasetSplit {
    let count = count.min(split.len());
    let (h, w, c) = split.image_shape();
    let per_image = h * w * c;
    let images = Tensor::from_vec(
        &[count, h, w, c],
        split.images.data()[..count * per_image].to_vec(),
    )
    .expect("prefix of a valid tensor");
    DatasetSplit {
        images,
        labels: split.labels[..count].to_vec(),
        classes: split.classes,
    }
}

pub(crate) fn hflip(img: &mut [f64], c: usize, h: usize, w: usize) {
    for ci in 0..c {
        for y in 0..h {
            let row = &mut img[(ci * h + y) * w..][..w];
            row.reverse();
        }
    }
}

fn shift2d(img: &[f64], c: usize, h: usize, w: usize, dy: isize, dx: isize) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    for ci in 0..c {
        for y in 0..h as isize {
            let sy = y - dy;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..w as isize {
                let sx = x - dx;
                if sx < 0 || sx >= w as isize {
                    continue;
                }
                out[(ci * h + y as usize) * w + x as usize] =
                    img[(ci * h + sy as usize) * w + sx as usize];
            }
        }
    }
    out
}

/// Training augmentation on a CHW image: integer shift up to 10% of each
/// spatial dimension (zero fill) and a horizontal flip half the time.
pub fn augment(img: &mut [f64], c: usize, h: usize, w: usize, rng: &mut RandomSource) {
    debug_assert_eq!(img.len(), c * h * w);
    let max_dy = (0.1 * h as f64).floor() as isize;
    let max_dx = (0.1 * w as f64).floor() as isize;
    let dy = if max_dy > 0 {
        rng.next_index((2 * max_dy + 1) as usize) as isize - max_dy
    } else {
        0
    };
    let dx = if max_dx > 0 {
        rng.next_index((2 * max_dx + 1) as usize) as isize - max_dx
    } else {
        0
    };
    if dy != 0 || dx != 0 {
        let shifted = shift2d(img, c, h, w, dy, dx);
        img.copy_from_slice(&shifted);
    }
    if rng.next_u64() & 1 == 1 {
        hflip(img, c, h, w);
    }
}

/// Gather a batch in [B, C, H, W] order from an NHWC split, augmenting each
/// image from its own substream when requested.
pub fn gather_batch(
    split: &DatasetSplit,
    indices: &[usize],
    augment_rng: Option<&RandomSource>,
) -> (Tensor, Vec<usize>) {
    let (h, w, c) = split.image_shape();
    let per_image = c * h * w;
    let mut data = vec![0.0; indices.len() * per_image];
    let src = split.images.data();
    for (slot, &idx) in indices.iter().enumerate() {
        let dst = &mut data[slot * per_image..][..per_image];
        // NHWC -> CHW
        for y in 0..h {
            for x in 0..w {
                for ci in 0..c {
                    dst[(ci * h + y) * w + x] = src[((idx * h + y) * w + x) * c + ci];
                }
            }
        }
        if let Some(base) = augment_rng {
            let mut rng = base.fork(slot as u64);
            augment(dst, c, h, w, &mut rng);
        }
    }
    let labels = indices.iter().map(|&i| split.labels[i]).collect();
    let images =
        Tensor::from_vec(&[indices.len(), c, h, w], data).expect("gathered batch is finite");
    (images, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_deterministic() {
        let (train_a, test_a) = synthetic_dataset(9, 25).unwrap();
        let (train_b, test_b) = synthetic_dataset(9, 25).unwrap();
        assert_eq!(train_a.images.data(), train_b.images.data());
        assert_eq!(train_a.labels, train_b.labels);
        assert_eq!(test_a.images.data(), test_b.images.data());
        let (train_c, _) = synthetic_dataset(10, 25).unwrap();
        assert_ne!(train_a.images.data(), train_c.images.data());
    }

    #[test]
    fn synthetic_split_sizes() {
        let (train, test) = synthetic_dataset(1, 250).unwrap();
        assert_eq!(train.len(), 800);
        assert_eq!(test.len(), 200);
        assert_eq!(train.image_shape(), (8, 8, 1));
        let (train, test) = synthetic_dataset(1, 1).unwrap();
        assert_eq!(train.len(), 4);
        assert_eq!(test.len(), 0);
    }

    fn nearest_template_accuracy(split: &DatasetSplit) -> f64 {
        let templates: Vec<[f64; 64]> = (0..4).map(synthetic_template).collect();
        let mut correct = 0;
        for i in 0..split.len() {
            let img = &split.images.data()[i * 64..][..64];
            let guess = (0..4)
                .min_by(|&a, &b| {
                    let da: f64 = img
                        .iter()
                        .zip(&templates[a])
                        .map(|(x, t)| (x - t) * (x - t))
                        .sum();
                    let db: f64 = img
                        .iter()
                        .zip(&templates[b])
                        .map(|(x, t)| (x - t) * (x - t))
                        .sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            if guess == split.labels[i] {
                correct += 1;
            }
        }
        correct as f64 / split.len() as f64
    }

    #[test]
    fn noiseless_synthetic_is_perfectly_separable() {
        let (train, test) = synthetic_dataset_with_noise(3, 50, 0.0).unwrap();
        assert_eq!(nearest_template_accuracy(&train), 1.0);
        assert_eq!(nearest_template_accuracy(&test), 1.0);
    }

    #[test]
    fn default_noise_reference_score() {
        // Template matching stays far above the 0.25 chance level at the
        // default noise; this is the dataset's reference score.
        let (_, test) = synthetic_dataset(3, 250).unwrap();
        let acc = nearest_template_accuracy(&test);
        assert!(acc > 0.9, "template-matching reference accuracy {acc}");
    }

    #[test]
    fn templates_survive_horizontal_flip() {
        for class in 0..4 {
            let mut img = synthetic_template(class);
            hflip(&mut img, 1, 8, 8);
            assert_eq!(img, synthetic_template(class), "class {class}");
        }
    }

    #[test]
    fn cifar_loader_happy_path_and_errors() {
        let dir = std::env::temp_dir().join(format!("gibbs-cifar-test-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();

        // A full standard batch: 10000 records, 30_730_000 bytes.
        let full = dir.join("batch.bin");
        let mut bytes = vec![0u8; 10_000 * CIFAR_RECORD];
        for (i, record) in bytes.chunks_exact_mut(CIFAR_RECORD).enumerate() {
            record[0] = (i % 10) as u8;
            record[1] = 255;
        }
        fs::write(&full, &bytes).unwrap();
        assert_eq!(fs::metadata(&full).unwrap().len(), 30_730_000);
        let split = load_cifar10_binary(&[&full]).unwrap();
        assert_eq!(split.len(), 10_000);
        assert!(split.labels.iter().all(|l| *l <= 9));
        // First red pixel of the first image was 255.
        assert_eq!(split.images.data()[0], 1.0);

        // Truncated file errors.
        let truncated = dir.join("short.bin");
        fs::write(&truncated, &bytes[..CIFAR_RECORD * 3 + 17]).unwrap();
        assert!(load_cifar10_binary(&[&truncated]).is_err());

        // Label byte out of range errors.
        let bad = dir.join("bad.bin");
        let mut record = vec![0u8; CIFAR_RECORD];
        record[0] = 10;
        fs::write(&bad, &record).unwrap();
        assert!(load_cifar10_binary(&[&bad]).is_err());

        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn augment_shift_bounds() {
        // 32 pixels shift by at most 3; 8 pixels never shift.
        let mut rng = RandomSource::new(77);
        let base: Vec<f64> = (0..32 * 32).map(|i| (i % 97) as f64 / 96.0).collect();
        let mut seen_three = false;
        for _ in 0..200 {
            let mut img = base.clone();
            augment(&mut img, 1, 32, 32, &mut rng);
            // Recover the shift by locating the zero fill border; simpler:
            // confirm content is a shifted/flipped copy with zero fill and
            // detect a 3-pixel border of zeros at least once.
            let top_rows_zero = (0..3).all(|y| (0..32).all(|x| img[y * 32 + x] == 0.0));
            seen_three |= top_rows_zero;
        }
        assert!(seen_three, "a +3 vertical shift should appear in 200 draws");

        let small: Vec<f64> = (0..64).map(|i| i as f64 / 63.0).collect();
        for _ in 0..50 {
            let mut img = small.clone();
            augment(&mut img, 1, 8, 8, &mut rng);
            // Only flips are possible at 8 pixels: no zero fill can appear.
            assert!(img.iter().all(|v| *v > 0.0 || small.contains(v)));
            let mut flipped = img.clone();
            hflip(&mut flipped, 1, 8, 8);
            assert!(img == small || flipped == small);
        }
    }

    #[test]
    fn flip_twice_is_identity() {
        let mut rng = RandomSource::new(5);
        let mut img: Vec<f64> = (0..3 * 6 * 6).map(|_| rng.next_f64()).collect();
        let original = img.clone();
        hflip(&mut img, 3, 6, 6);
        assert_ne!(img, original);
        hflip(&mut img, 3, 6, 6);
        assert_eq!(img, original);
    }

    #[test]
    fn zero_shift_no_flip_is_identity() {
        let img: Vec<f64> = (0..64).map(|i| i as f64).collect();
        let shifted = shift2d(&img, 1, 8, 8, 0, 0);
        assert_eq!(shifted, img);
    }

    #[test]
    fn gather_batch_converts_layout() {
        let (train, _) = synthetic_dataset(2, 5).unwrap();
        let (batch, labels) = gather_batch(&train, &[0, 1, 2], None);
        assert_eq!(batch.shape(), &[3, 1, 8, 8]);
        assert_eq!(
            labels,
            vec![train.labels[0], train.labels[1], train.labels[2]]
        );
        // Single channel: CHW equals HWC content for the same image.
        assert_eq!(&batch.data()[..64], &train.images.data()[..64]);
    }
}
