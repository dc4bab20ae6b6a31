//! Synthetic data generators.
//!
//! Two families: low-rank activation matrices with a known ground-truth
//! rank, used to validate the estimators, and procedurally rendered image
//! datasets written in the standard binary layouts so the production
//! loaders exercise their real parsing paths. The image sets are class
//! prototypes (digit glyphs, colored patterns) under seeded jitter, stroke
//! dropout, and pixel noise, and a small fraction of training labels is
//! resampled. Models therefore have real structure to learn and real noise
//! to memorize; test labels stay clean.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{matmul, Tensor};
use std::path::Path;

/// Activation matrix `H = B * C + sigma * E` of shape `[dim, m]` where `B`
/// is `[dim, rank]` and `C` is `[rank, m]`, all entries standard normal.
/// With `sigma = 0` the column space has dimension exactly `rank`.
pub fn make_synthetic_lowrank(
    dim: usize,
    m: usize,
    rank: usize,
    sigma: f64,
    seed: u64,
) -> Result<Tensor> {
    if rank == 0 || rank > dim {
        return Err(Error::contract(format!(
            "rank {} must be in 1..={} (dim)",
            rank, dim
        )));
    }
    if m == 0 {
        return Err(Error::contract("need at least one column".to_string()));
    }
    let mut rng = SeededRng::new(seed, "lowrank", 0);
    let b = rng.sample_gaussian(dim, rank);
    let c = rng.sample_gaussian(rank, m);
    let mut h = matmul(&b, &c)?;
    if sigma != 0.0 {
        let e = rng.sample_gaussian(dim, m);
        for (hv, ev) in h.data.iter_mut().zip(e.data.iter()) {
            *hv += sigma * ev;
        }
    }
    Ok(h)
}

/// 5x7 bitmaps of the digits 0-9, row-major, one bit per pixel.
const DIGIT_GLYPHS: [[u8; 7]; 10] = [
    [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110],
    [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
    [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111],
    [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110],
    [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010],
    [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110],
    [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110],
    [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000],
    [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110],
    [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100],
];

/// Fraction of training labels resampled to a different class. Test labels
/// are never resampled.
const TRAIN_LABEL_NOISE: f64 = 0.12;

/// Render one 28x28 digit image: glyph scaled by 2 or 3, jittered position,
/// jittered intensity, dropped stroke cells, plus Gaussian pixel noise.
fn render_digit(digit: usize, rng: &mut SeededRng) -> Vec<u8> {
    let mut img = vec![0.0_f64; 28 * 28];
    let scale = 2 + rng.next_below(2);
    let (gw, gh) = (5 * scale, 7 * scale);
    let dx = (28 - gw) / 2 + rng.next_below(7) - 3;
    let dy = (28 - gh) / 2 + rng.next_below(5) - 2;
    let intensity = 0.7 + 0.3 * rng.next_f64();
    let glyph = &DIGIT_GLYPHS[digit];
    for (r, bits) in glyph.iter().enumerate() {
        for c in 0..5 {
            if bits & (1 << (4 - c)) == 0 {
                continue;
            }
            if rng.next_f64() < 0.12 {
                continue;
            }
            for si in 0..scale {
                for sj in 0..scale {
                    let y = dy + r * scale + si;
                    let x = dx + c * scale + sj;
                    img[y * 28 + x] = intensity;
                }
            }
        }
    }
    img.iter()
        .map(|&v| {
            let noisy = v + 0.18 * rng.standard_normal();
            (noisy.clamp(0.0, 1.0) * 255.0).round() as u8
        })
        .collect()
}

fn idx_image_header(n: usize, rows: usize, cols: usize) -> Vec<u8> {
    let mut h = Vec::with_capacity(16);
    h.extend_from_slice(&0x0000_0803u32.to_be_bytes());
    h.extend_from_slice(&(n as u32).to_be_bytes());
    h.extend_from_slice(&(rows as u32).to_be_bytes());
    h.extend_from_slice(&(cols as u32).to_be_bytes());
    h
}

fn idx_label_header(n: usize) -> Vec<u8> {
    let mut h = Vec::with_capacity(8);
    h.extend_from_slice(&0x0000_0801u32.to_be_bytes());
    h.extend_from_slice(&(n as u32).to_be_bytes());
    h
}

/// Label stored for a rendered class: usually the class itself, resampled
/// with probability `noise` to one of the other `num_classes - 1`.
fn noisy_label(class: usize, num_classes: usize, noise: f64, rng: &mut SeededRng) -> usize {
    if noise > 0.0 && rng.next_f64() < noise {
        (class + 1 + rng.next_below(num_classes - 1)) % num_classes
    } else {
        class
    }
}

/// Write an MNIST-shaped dataset (IDX files under `dir`) of rendered digits.
pub fn write_synthetic_mnist(dir: &Path, n_train: usize, n_test: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (split, n, img_name, lbl_name) in [
        (0u64, n_train, "train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        (1u64, n_test, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    ] {
        let noise = if split == 0 { TRAIN_LABEL_NOISE } else { 0.0 };
        let mut rng = SeededRng::new(seed, "synth-mnist", split);
        let mut images = idx_image_header(n, 28, 28);
        let mut labels = idx_label_header(n);
        for _ in 0..n {
            let digit = rng.next_below(10);
            images.extend(render_digit(digit, &mut rng));
            labels.push(noisy_label(digit, 10, noise, &mut rng) as u8);
        }
        crate::write_atomic(&dir.join(img_name), &images)?;
        crate::write_atomic(&dir.join(lbl_name), &labels)?;
    }
    Ok(())
}

/// Smooth 32x32 RGB prototype for one class: a coarse 4x4 random color grid,
/// bilinearly upsampled. Prototypes depend only on (seed, class).
fn class_prototype(seed: u64, class: usize) -> Vec<f64> {
    let mut rng = SeededRng::new(seed, "synth-proto", class as u64);
    let coarse: Vec<f64> = (0..3 * 4 * 4).map(|_| rng.next_f64()).collect();
    let mut img = vec![0.0; 3 * 32 * 32];
    for ch in 0..3 {
        for y in 0..32 {
            for x in 0..32 {
                // Map pixel centers onto the coarse grid.
                let fy = (y as f64 + 0.5) / 32.0 * 3.0;
                let fx = (x as f64 + 0.5) / 32.0 * 3.0;
                let y0 = (fy.floor() as usize).min(2);
                let x0 = (fx.floor() as usize).min(2);
                let ty = fy - y0 as f64;
                let tx = fx - x0 as f64;
                let at = |yy: usize, xx: usize| coarse[ch * 16 + yy * 4 + xx];
                let v = at(y0, x0) * (1.0 - ty) * (1.0 - tx)
                    + at(y0, x0 + 1) * (1.0 - ty) * tx
                    + at(y0 + 1, x0) * ty * (1.0 - tx)
                    + at(y0 + 1, x0 + 1) * ty * tx;
                img[ch * 1024 + y * 32 + x] = v;
            }
        }
    }
    img
}

/// Render one CIFAR-shaped sample: prototype under cyclic shift, optional
/// horizontal flip, brightness jitter, and pixel noise. Returns channel-
/// planar bytes (R plane, G plane, B plane).
fn render_pattern(proto: &[f64], rng: &mut SeededRng) -> Vec<u8> {
    let sx = rng.next_below(9) as isize - 4;
    let sy = rng.next_below(9) as isize - 4;
    let flip = rng.next_below(2) == 1;
    let brightness = 0.8 + 0.4 * rng.next_f64();
    let mut out = Vec::with_capacity(3072);
    for ch in 0..3 {
        for y in 0..32_isize {
            for x in 0..32_isize {
                let mut px = x;
                if flip {
                    px = 31 - px;
                }
                let yy = (y + sy).rem_euclid(32) as usize;
                let xx = (px + sx).rem_euclid(32) as usize;
                let v = proto[ch * 1024 + yy * 32 + xx] * brightness
                    + 0.16 * rng.standard_normal();
                out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    out
}

fn write_cifar_records(
    path: &Path,
    n: usize,
    num_classes: usize,
    coarse_byte: bool,
    label_noise: f64,
    protos: &[Vec<f64>],
    rng: &mut SeededRng,
) -> Result<()> {
    let mut bytes = Vec::with_capacity(n * (3072 + if coarse_byte { 2 } else { 1 }));
    for _ in 0..n {
        let class = rng.next_below(num_classes);
        let label = noisy_label(class, num_classes, label_noise, rng);
        if coarse_byte {
            // Coarse label groups fine classes by fives, mirroring the
            // 100-to-20 structure of the real layout.
            bytes.push((label / 5) as u8);
        }
        bytes.push(label as u8);
        bytes.extend(render_pattern(&protos[class], rng));
    }
    crate::write_atomic(path, &bytes)
}

/// Write a CIFAR-10-shaped dataset: five train batch files plus a test
/// batch, 1-byte labels, 3072 pixel bytes per record.
pub fn write_synthetic_cifar10(dir: &Path, n_train: usize, n_test: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let protos: Vec<Vec<f64>> = (0..10).map(|c| class_prototype(seed, c)).collect();
    // Spread training records across the five batch files.
    let per = n_train / 5;
    let mut remaining = n_train;
    for i in 1..=5 {
        let n = if i == 5 { remaining } else { per };
        remaining -= n;
        let mut rng = SeededRng::new(seed, "synth-cifar10", i as u64);
        write_cifar_records(
            &dir.join(format!("data_batch_{}.bin", i)),
            n,
            10,
            false,
            TRAIN_LABEL_NOISE,
            &protos,
            &mut rng,
        )?;
    }
    let mut rng = SeededRng::new(seed, "synth-cifar10", 99);
    write_cifar_records(&dir.join("test_batch.bin"), n_test, 10, false, 0.0, &protos, &mut rng)
}

/// Write a CIFAR-100-shaped dataset: train.bin and test.bin with coarse and
/// fine label bytes per record.
pub fn write_synthetic_cifar100(
    dir: &Path,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let protos: Vec<Vec<f64>> = (0..100).map(|c| class_prototype(seed, c)).collect();
    let mut rng = SeededRng::new(seed, "synth-cifar100", 0);
    write_cifar_records(
        &dir.join("train.bin"),
        n_train,
        100,
        true,
        TRAIN_LABEL_NOISE,
        &protos,
        &mut rng,
    )?;
    let mut rng = SeededRng::new(seed, "synth-cifar100", 1);
    write_cifar_records(&dir.join("test.bin"), n_test, 100, true, 0.0, &protos, &mut rng)
}
