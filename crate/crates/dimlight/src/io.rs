//! Image files and paired dataset directories.

use std::fs;
use std::path::{Path, PathBuf};

use dimlight_core::data::ImagePair;
use dimlight_core::Image;
use image::{ImageBuffer, Rgb};

use crate::error::{Error, Result};

const EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Decode an 8-bit PNG or JPEG into `[0, 1]` RGB.
pub fn load_image(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data: Vec<f64> = img.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
    Ok(Image::from_interleaved(h as usize, w as usize, 3, &data)?)
}

/// Quantize to 8 bits (clamped, rounded) and write a PNG.
pub fn save_png(image: &Image, path: &Path) -> Result<()> {
    if image.channels() != 3 {
        return Err(Error::Dataset(format!(
            "{}: expected 3 channels, got {}",
            path.display(),
            image.channels()
        )));
    }
    let bytes: Vec<u8> = image
        .to_interleaved()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_raw(image.width() as u32, image.height() as u32, bytes)
        .expect("buffer length matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Image files directly inside `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_image(&path) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// File name without extension.
pub fn image_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Pairs from `<root>/<split>/low` and `<root>/<split>/high`, matched by
/// file stem and sorted. An image without a counterpart is an error.
pub fn load_pair_dataset(root: &Path, split: &str) -> Result<Vec<ImagePair>> {
    let low_dir = root.join(split).join("low");
    let high_dir = root.join(split).join("high");
    let lows = list_images(&low_dir)?;
    let highs = list_images(&high_dir)?;
    let high_ids: std::collections::BTreeMap<String, PathBuf> = highs.iter().map(|p| (image_id(p), p.clone())).collect();
    let low_ids: std::collections::BTreeSet<String> = lows.iter().map(|p| image_id(p)).collect();
    if let Some(orphan) = high_ids.keys().find(|id| !low_ids.contains(*id)) {
        return Err(Error::MissingCounterpart {
            name: orphan.clone(),
            dir: low_dir,
        });
    }
    let mut pairs = Vec::with_capacity(lows.len());
    for low_path in &lows {
        let id = image_id(low_path);
        let high_path = high_ids.get(&id).ok_or_else(|| Error::MissingCounterpart {
            name: id.clone(),
            dir: high_dir.clone(),
        })?;
        let low = load_image(low_path)?;
        let high = load_image(high_path)?;
        pairs.push(ImagePair::new(id, low, high)?);
    }
    Ok(pairs)
}

/// Write pairs in the layout read by [`load_pair_dataset`].
pub fn write_pair_dataset(root: &Path, split: &str, pairs: &[ImagePair]) -> Result<()> {
    let low_dir = root.join(split).join("low");
    let high_dir = root.join(split).join("high");
    for d in [&low_dir, &high_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    for p in pairs {
        save_png(p.low(), &low_dir.join(format!("{}.png", p.id())))?;
        save_png(p.normal(), &high_dir.join(format!("{}.png", p.id())))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_is_exact_on_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(3, 5, 7, |c, y, x| ((c * 31 + y * 7 + x * 3) % 256) as f64 / 255.0);
        let path = dir.path().join("a.png");
        save_png(&img, &path).unwrap();
        assert_eq!(load_image(&path).unwrap(), img);
    }

    #[test]
    fn listing_filters_and_sorts() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::zeros(3, 2, 2);
        for name in ["b.png", "a.png", "c.PNG"] {
            save_png(&img, &dir.path().join(name)).unwrap();
        }
        fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let names: Vec<_> = list_images(dir.path())
            .unwrap()
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, ["a.png", "b.png", "c.PNG"]);
    }
}
