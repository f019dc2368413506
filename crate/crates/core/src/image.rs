//! Image decoding, resizing, training augmentation and five-crop inference.

use std::path::PathBuf;

use rand::Rng;

use crate::error::{Error, Result};
use crate::synth;

/// Where a sample's pixels come from. Files are decoded lazily, so a missing
/// image only fails when something actually needs the pixels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ImageRef {
    File(PathBuf),
    /// Rendered on demand by [`synth::render_image`].
    Procedural { seed: u64, motif: u8 },
}

/// RGB image with values in `[0, 1]`, stored row-major as `[y][x][c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * Self::CHANNELS {
            return Err(Error::argument(format!(
                "image buffer of {} values does not match {height}x{width}x3",
                data.len()
            )));
        }
        Ok(ImageTensor {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        ImageTensor {
            height,
            width,
            data: vec![value; height * width * Self::CHANNELS],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data.push(f(y, x, c));
                }
            }
        }
        ImageTensor {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Exact sub-rectangle copy.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width || height == 0 || width == 0 {
            return Err(Error::argument(format!(
                "crop {height}x{width} at ({top},{left}) outside {}x{} image",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width * 3);
        for y in top..top + height {
            let start = (y * self.width + left) * 3;
            data.extend_from_slice(&self.data[start..start + width * 3]);
        }
        Ok(ImageTensor {
            height,
            width,
            data,
        })
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.height, self.width, |y, x, c| self.get(y, self.width - 1 - x, c))
    }

    pub fn flip_vertical(&self) -> Self {
        Self::from_fn(self.height, self.width, |y, x, c| self.get(self.height - 1 - y, x, c))
    }

    /// Bilinear resize with half-pixel centers. Same-size input is copied.
    pub fn resize(&self, height: usize, width: usize) -> Self {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let axis = |dst: usize, scale: f64, len: usize| {
            let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(len - 1);
            (lo, hi, src - lo as f64)
        };
        let xs: Vec<_> = (0..width).map(|x| axis(x, sx, self.width)).collect();
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            let (y0, y1, fy) = axis(y, sy, self.height);
            for &(x0, x1, fx) in &xs {
                for c in 0..3 {
                    let top = self.get(y0, x0, c) * (1.0 - fx) + self.get(y0, x1, c) * fx;
                    let bottom = self.get(y1, x0, c) * (1.0 - fx) + self.get(y1, x1, c) * fx;
                    data.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0));
                }
            }
        }
        ImageTensor {
            height,
            width,
            data,
        }
    }
}

/// Decode `image` (or render it, for procedural refs) and resize to
/// `target`×`target`. `id` names the sample in decode errors.
pub fn load_and_resize(image: &ImageRef, id: &str, target: usize) -> Result<ImageTensor> {
    let decoded = match image {
        ImageRef::File(path) => {
            let img = ::image::open(path).map_err(|e| Error::Decode {
                id: id.to_string(),
                message: format!("{}: {e}", path.display()),
            })?;
            let rgb = img.to_rgb8();
            let (w, h) = rgb.dimensions();
            let data = rgb.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
            ImageTensor::new(h as usize, w as usize, data)?
        }
        ImageRef::Procedural { seed, motif } => synth::render_image(*seed, *motif, synth::PROCEDURAL_SIZE),
    };
    Ok(decoded.resize(target, target))
}

/// Concrete random choices for one augmentation pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    /// `(top, left, height, width)` of the region resized back to full size.
    pub crop: Option<(usize, usize, usize, usize)>,
    pub hflip: bool,
    pub vflip: bool,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        crop: None,
        hflip: false,
        vflip: false,
    };

    /// Crop area fraction drawn from `scale`; the crop keeps the image's
    /// aspect ratio. Each flip fires with probability `flip_p`.
    pub fn sample<R: Rng + ?Sized>(
        rng: &mut R,
        height: usize,
        width: usize,
        scale: (f64, f64),
        flip_p: f64,
    ) -> Self {
        let area = rng.gen_range(scale.0..=scale.1);
        let side = area.sqrt();
        let ch = ((height as f64 * side).round() as usize).clamp(1, height);
        let cw = ((width as f64 * side).round() as usize).clamp(1, width);
        let top = rng.gen_range(0..=height - ch);
        let left = rng.gen_range(0..=width - cw);
        let hflip = rng.gen_bool(flip_p);
        let vflip = rng.gen_bool(flip_p);
        AugmentParams {
            crop: Some((top, left, ch, cw)),
            hflip,
            vflip,
        }
    }

    pub fn apply(&self, img: &ImageTensor) -> ImageTensor {
        let mut out = match self.crop {
            Some((top, left, h, w)) => img
                .crop(top, left, h, w)
                .expect("sampled crop lies inside the image")
                .resize(img.height(), img.width()),
            None => img.clone(),
        };
        if self.hflip {
            out = out.flip_horizontal();
        }
        if self.vflip {
            out = out.flip_vertical();
        }
        out
    }
}

pub const DEFAULT_CROP_SCALE: (f64, f64) = (0.8, 1.0);
pub const DEFAULT_FLIP_P: f64 = 0.5;

/// Random resized crop, then horizontal and vertical flips.
pub fn train_augment<R: Rng + ?Sized>(img: &ImageTensor, rng: &mut R) -> ImageTensor {
    AugmentParams::sample(rng, img.height(), img.width(), DEFAULT_CROP_SCALE, DEFAULT_FLIP_P).apply(img)
}

/// Four corner crops then the center crop: `[TL, TR, BL, BR, C]`.
pub fn five_crop(img: &ImageTensor, crop: usize) -> Result<Vec<ImageTensor>> {
    let (h, w) = (img.height(), img.width());
    if crop == 0 || crop > h.min(w) {
        return Err(Error::argument(format!(
            "crop size {crop} does not fit a {h}x{w} image"
        )));
    }
    let origins = [
        (0, 0),
        (0, w - crop),
        (h - crop, 0),
        (h - crop, w - crop),
        ((h - crop) / 2, (w - crop) / 2),
    ];
    origins
        .iter()
        .map(|&(top, left)| img.crop(top, left, crop, crop))
        .collect()
}

/// Elementwise mean of equally sized prediction rows.
pub fn tta_average(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = rows
        .first()
        .ok_or_else(|| Error::argument("cannot average an empty list of predictions"))?;
    let width = first.len();
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::argument("prediction rows differ in width"));
    }
    let n = rows.len() as f64;
    Ok((0..width)
        .map(|j| (rows.iter().map(|r| r[j]).sum::<f64>() / n).clamp(0.0, 1.0))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::from_fn(h, w, |_, _, _| rng.gen::<f64>())
    }

    fn write_png(path: &std::path::Path, w: u32, h: u32, px: impl Fn(u32, u32) -> [u8; 3]) {
        let img = ::image::RgbImage::from_fn(w, h, |x, y| ::image::Rgb(px(x, y)));
        img.save(path).unwrap();
    }

    #[test]
    fn resize_from_files() {
        let dir = tempfile::TempDir::new().unwrap();
        let big = dir.path().join("big.png");
        write_png(&big, 512, 512, |x, y| [(x % 256) as u8, (y % 256) as u8, 7]);
        let t = load_and_resize(&ImageRef::File(big), "big", 256).unwrap();
        assert_eq!((t.height(), t.width()), (256, 256));
        assert!(t.in_unit_range());

        let same = dir.path().join("same.png");
        write_png(&same, 256, 256, |x, _| [x as u8, 0, 0]);
        let t = load_and_resize(&ImageRef::File(same), "same", 256).unwrap();
        assert_eq!((t.height(), t.width()), (256, 256));
        assert_eq!(t.get(0, 17, 0), 17.0 / 255.0);

        let gray = dir.path().join("gray.png");
        write_png(&gray, 300, 100, |_, _| [90, 90, 90]);
        let t = load_and_resize(&ImageRef::File(gray), "gray", 256).unwrap();
        assert_eq!((t.height(), t.width()), (256, 256));
        assert!(t.data().iter().all(|v| (v - 90.0 / 255.0).abs() <= 1.0 / 255.0));
    }

    #[test]
    fn decode_error_names_sample() {
        let dir = tempfile::TempDir::new().unwrap();
        let bogus = dir.path().join("x.png");
        std::fs::write(&bogus, b"not a png").unwrap();
        match load_and_resize(&ImageRef::File(bogus), "meme_17", 256) {
            Err(Error::Decode { id, .. }) => assert_eq!(id, "meme_17"),
            other => panic!("unexpected {other:?}"),
        }
        match load_and_resize(&ImageRef::File(dir.path().join("missing.jpg")), "m", 256) {
            Err(Error::Decode { id, .. }) => assert_eq!(id, "m"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn identity_and_flip_paths() {
        let img = random_image(16, 12, 1);
        assert_eq!(AugmentParams::IDENTITY.apply(&img), img);

        let h = AugmentParams {
            hflip: true,
            ..AugmentParams::IDENTITY
        };
        let flipped = h.apply(&img);
        for y in 0..16 {
            for x in 0..12 {
                assert_eq!(flipped.get(y, x, 1), img.get(y, 11 - x, 1));
            }
        }
        assert_eq!(h.apply(&flipped), img);

        let full = AugmentParams {
            crop: Some((0, 0, 16, 12)),
            ..AugmentParams::IDENTITY
        };
        assert_eq!(full.apply(&img), img);
    }

    #[test]
    fn augment_shape_contract() {
        let img = random_image(256, 256, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..4 {
            let out = train_augment(&img, &mut rng);
            assert_eq!((out.height(), out.width()), (256, 256));
            assert!(out.in_unit_range());
        }
        let a = train_augment(&img, &mut ChaCha8Rng::seed_from_u64(3));
        let b = train_augment(&img, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }

    #[test]
    fn sampled_crop_scale_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let p = AugmentParams::sample(&mut rng, 256, 256, DEFAULT_CROP_SCALE, 0.5);
            let (top, left, h, w) = p.crop.unwrap();
            let area = (h * w) as f64 / (256.0 * 256.0);
            assert!((0.79..=1.0).contains(&area), "{area}");
            assert!(top + h <= 256 && left + w <= 256);
        }
    }

    #[test]
    fn five_crop_layout() {
        let img = random_image(256, 256, 4);
        let crops = five_crop(&img, 224).unwrap();
        assert_eq!(crops.len(), 5);
        assert_eq!(crops[4].get(0, 0, 0), img.get(16, 16, 0));
        assert_eq!(crops[1].get(0, 0, 2), img.get(0, 32, 2));
        assert_eq!(crops[2].get(0, 0, 2), img.get(32, 0, 2));
        assert_eq!(crops[3].get(223, 223, 1), img.get(255, 255, 1));

        let full = five_crop(&img, 256).unwrap();
        assert!(full.iter().all(|c| *c == img));

        let constant = ImageTensor::filled(4, 4, 0.25);
        let small = five_crop(&constant, 2).unwrap();
        assert!(small.iter().all(|c| *c == ImageTensor::filled(2, 2, 0.25)));

        assert!(five_crop(&img, 257).is_err());
    }

    #[test]
    fn tta_examples() {
        let rows: Vec<Vec<f64>> = [0.2, 0.4, 0.6, 0.8, 1.0].iter().map(|v| vec![*v]).collect();
        assert!((tta_average(&rows).unwrap()[0] - 0.6).abs() < 1e-12);
        let same = vec![vec![0.3, 0.9]; 5];
        assert_eq!(tta_average(&same).unwrap(), vec![0.3, 0.9]);
        assert_eq!(
            tta_average(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            vec![0.5, 0.5]
        );
        assert!(tta_average(&[]).is_err());
        assert!(tta_average(&[vec![0.1], vec![0.1, 0.2]]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn crops_are_exact_subrectangles(h in 2usize..20, w in 2usize..20, seed in 0u64..1000, frac in 0.1f64..1.0) {
                let img = random_image(h, w, seed);
                let crop = ((h.min(w) as f64 * frac) as usize).max(1);
                let crops = five_crop(&img, crop).unwrap();
                let origins = [(0, 0), (0, w - crop), (h - crop, 0), (h - crop, w - crop), ((h - crop) / 2, (w - crop) / 2)];
                for (c, (top, left)) in crops.iter().zip(origins) {
                    for y in 0..crop {
                        for x in 0..crop {
                            prop_assert_eq!(c.get(y, x, 0), img.get(top + y, left + x, 0));
                        }
                    }
                }
            }

            #[test]
            fn tta_permutation_invariant(rows in proptest::collection::vec(proptest::collection::vec(0.0f64..=1.0, 3), 1..8), rot in 0usize..8) {
                let mut rotated = rows.clone();
                let r = rot % rows.len();
                rotated.rotate_left(r);
                let a = tta_average(&rows).unwrap();
                let b = tta_average(&rotated).unwrap();
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }
}
