use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

/// Bytes per CIFAR-100 binary record: coarse label, fine label, 32·32·3 pixels.
pub const CIFAR_RECORD: usize = 2 + 3 * 32 * 32;
pub const CIFAR_CLASSES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `[N, C, H, W]`.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    /// Gathers `indices` into a batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let [c, h, w] = self.image_shape();
        let per = c * h * w;
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        let images = Tensor::new(vec![indices.len(), c, h, w], data).expect("batch shape");
        (images, indices.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn image(&self, i: usize) -> Tensor {
        let [c, h, w] = self.image_shape();
        let per = c * h * w;
        Tensor::new(vec![c, h, w], self.images.data()[i * per..(i + 1) * per].to_vec()).expect("image shape")
    }

    /// Per-channel mean over every image and pixel.
    pub fn channel_means(&self) -> Vec<f64> {
        let [c, h, w] = self.image_shape();
        let mut sums = vec![0.0; c];
        for (k, v) in self.images.data().iter().enumerate() {
            sums[(k / (h * w)) % c] += v;
        }
        let count = (self.len() * h * w).max(1) as f64;
        sums.into_iter().map(|s| s / count).collect()
    }
}

/// Decodes CIFAR-100 binary records. Pixels are scaled to `[0, 1]` and the
/// fine label is kept. `max_items` caps the number of records read.
pub fn decode_cifar(bytes: &[u8], max_items: Option<usize>, split: Split) -> Result<Dataset> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        let offset = (bytes.len() / CIFAR_RECORD * CIFAR_RECORD) as u64;
        return Err(Error::Format {
            offset,
            message: format!("truncated record: {} trailing bytes, records are {CIFAR_RECORD} bytes", bytes.len() % CIFAR_RECORD),
        });
    }
    let n = (bytes.len() / CIFAR_RECORD).min(max_items.unwrap_or(usize::MAX));
    let mut data = Vec::with_capacity(n * (CIFAR_RECORD - 2));
    let mut labels = Vec::with_capacity(n);
    for (k, rec) in bytes.chunks_exact(CIFAR_RECORD).take(n).enumerate() {
        let fine = rec[1] as usize;
        if fine >= CIFAR_CLASSES {
            return Err(Error::Format {
                offset: (k * CIFAR_RECORD + 1) as u64,
                message: format!("fine label {fine} outside 0..{CIFAR_CLASSES}"),
            });
        }
        labels.push(fine);
        data.extend(rec[2..].iter().map(|&b| b as f64 / 255.0));
    }
    Ok(Dataset { images: Tensor::new(vec![n, 3, 32, 32], data)?, labels, num_classes: CIFAR_CLASSES, split })
}

pub fn load_cifar_binary(path: &Path, max_items: Option<usize>, split: Split) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    decode_cifar(&bytes, max_items, split)
}

/// Pad, random crop, random horizontal flip, mean subtraction.
#[derive(Debug, Clone, PartialEq)]
pub struct Augment {
    pub pad: usize,
    pub crop: usize,
    pub flip: bool,
    pub mean: Vec<f64>,
}

impl Augment {
    /// CIFAR pipeline: 4-pixel zero padding, 32×32 crops.
    pub fn cifar(mean: Vec<f64>) -> Self {
        Self { pad: 4, crop: 32, flip: true, mean }
    }

    /// Applies the pipeline with an explicit crop origin and flip.
    pub fn apply_at(&self, image: &Tensor, dy: usize, dx: usize, flip: bool) -> Result<Tensor> {
        let shape = image.shape();
        if shape.len() != 3 || shape[1] != self.crop || shape[2] != self.crop || shape[0] != self.mean.len() {
            return dim_err(format!("augmentation expects [{}, {}, {}] images, got {shape:?}", self.mean.len(), self.crop, self.crop));
        }
        if dy > 2 * self.pad || dx > 2 * self.pad {
            return dim_err(format!("crop origin ({dy}, {dx}) outside the padded image"));
        }
        let (c, s, p) = (shape[0], self.crop, self.pad);
        let src = image.data();
        Ok(Tensor::from_fn(&[c, s, s], |k| {
            let (ch, y, x) = (k / (s * s), (k / s) % s, k % s);
            let x = if flip { s - 1 - x } else { x };
            // Position in the padded image, then back to the source.
            let (py, px) = (y + dy, x + dx);
            let v = if py < p || px < p || py >= p + s || px >= p + s { 0.0 } else { src[(ch * s + py - p) * s + px - p] };
            v - self.mean[ch]
        }))
    }

    pub fn apply<R: Rng + ?Sized>(&self, image: &Tensor, rng: &mut R) -> Result<Tensor> {
        let dy = rng.random_range(0..=2 * self.pad);
        let dx = rng.random_range(0..=2 * self.pad);
        let flip = self.flip && rng.random_bool(0.5);
        self.apply_at(image, dy, dx, flip)
    }
}

/// Augments one `[C, H, W]` image.
pub fn augment<R: Rng + ?Sized>(image: &Tensor, pipeline: &Augment, rng: &mut R) -> Result<Tensor> {
    pipeline.apply(image, rng)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    pub n_per_class: usize,
    pub size: usize,
    pub noise: f64,
    pub seed: u64,
}

/// Oriented sinusoidal gratings, one orientation per class, with a
/// class-specific offset on one colour channel and optional Gaussian noise.
/// Samples are shuffled.
pub fn synth_dataset(spec: SynthSpec) -> Result<Dataset> {
    if spec.classes == 0 || spec.size == 0 {
        return Err(Error::Config("synthetic set needs classes and a positive size".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let s = spec.size;
    let freq = 2.0 * PI * 3.0 / s as f64;
    let mut order: Vec<usize> = (0..spec.classes * spec.n_per_class).map(|k| k % spec.classes).collect();
    order.shuffle(&mut rng);
    let mut data = Vec::with_capacity(order.len() * 3 * s * s);
    for &label in &order {
        let theta = PI * label as f64 / spec.classes as f64;
        let (ct, st) = (theta.cos(), theta.sin());
        let phase = rng.random_range(0.0..2.0 * PI);
        for ch in 0..3 {
            let offset = if ch == label % 3 { 0.5 } else { 0.0 };
            for y in 0..s {
                for x in 0..s {
                    let g = (freq * (x as f64 * ct + y as f64 * st) + phase).sin();
                    let n = if spec.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    data.push(0.5 * g + offset + n);
                }
            }
        }
    }
    Ok(Dataset {
        images: Tensor::new(vec![order.len(), 3, s, s], data)?,
        labels: order,
        num_classes: spec.classes,
        split: Split::Synthetic,
    })
}
