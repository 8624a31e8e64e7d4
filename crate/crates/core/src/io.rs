//! PNG decoding/encoding and directory-of-frames loading.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use png::{BitDepth, ColorType, Transformations};

use crate::image::{FrameClip, Image};
use crate::{Error, Result};

/// Decoded images above this many bytes are refused.
const DECODE_LIMIT: usize = 1 << 30;

/// Decode an 8- or 16-bit PNG (gray, gray+alpha, RGB, RGBA or palette) into
/// linear `[0, 1]` RGB. Alpha is discarded.
pub fn decode_png(bytes: &[u8]) -> Result<Image> {
    let mut decoder = png::Decoder::new_with_limits(Cursor::new(bytes), png::Limits { bytes: DECODE_LIMIT });
    decoder.set_transformations(Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| Error::format("png", e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format("png", "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::format("png", e))?;
    let (width, height) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        ColorType::Indexed => return Err(Error::format("png", "palette was not expanded")),
    };
    let samples: Vec<f32> = match info.bit_depth {
        BitDepth::Sixteen => buf[..info.buffer_size()]
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f32 / 65535.0)
            .collect(),
        BitDepth::Eight => buf[..info.buffer_size()].iter().map(|&b| b as f32 / 255.0).collect(),
        other => return Err(Error::format("png", format!("unsupported bit depth {other:?} after expansion"))),
    };
    let row_len = width * channels;
    if samples.len() < row_len * height {
        return Err(Error::format("png", "truncated image data"));
    }
    let mut data = Vec::with_capacity(width * height * 3);
    for px in samples[..row_len * height].chunks_exact(channels) {
        match channels {
            1 | 2 => data.extend_from_slice(&[px[0]; 3]),
            _ => data.extend_from_slice(&px[..3]),
        }
    }
    Image::new(height, width, data)
}

/// Encode as 8-bit or 16-bit RGB PNG.
pub fn encode_png(img: &Image, sixteen_bit: bool) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        enc.set_color(ColorType::Rgb);
        enc.set_depth(if sixteen_bit { BitDepth::Sixteen } else { BitDepth::Eight });
        let mut writer = enc.write_header().map_err(|e| Error::format("png", e))?;
        let bytes: Vec<u8> = if sixteen_bit {
            img.data()
                .iter()
                .flat_map(|&v| ((v * 65535.0).round() as u16).to_be_bytes())
                .collect()
        } else {
            img.data().iter().map(|&v| (v * 255.0).round() as u8).collect()
        };
        writer.write_image_data(&bytes).map_err(|e| Error::format("png", e))?;
    }
    Ok(out)
}

pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes).map_err(|e| match e {
        Error::Format { what, detail } => Error::Format { what, detail: format!("{}: {detail}", path.display()) },
        other => other,
    })
}

pub fn write_image(path: &Path, img: &Image, sixteen_bit: bool) -> Result<()> {
    let bytes = encode_png(img, sixteen_bit)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// PNG files directly inside `dir`, sorted lexicographically by file name.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn load_clip(dir: &Path, nominal_fps: f64) -> Result<FrameClip> {
    let files = list_pngs(dir)?;
    if files.is_empty() {
        return Err(Error::Argument(format!("{}: no PNG frames", dir.display())));
    }
    let frames = files.iter().map(|p| read_image(p)).collect::<Result<Vec<_>>>()?;
    FrameClip::new(frames, nominal_fps).map_err(|e| Error::Argument(format!("{}: {e}", dir.display())))
}

/// A corpus root holds one sub-directory per clip. A directory that itself
/// holds PNG frames is treated as a single clip.
pub fn clip_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    if !list_pngs(root)?.is_empty() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.is_dir() {
            dirs.push(path);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Argument(format!("{}: no clips found", root.display())));
    }
    Ok(dirs)
}

/// Named clips loaded from every corpus root.
pub fn load_corpus(roots: &[PathBuf], nominal_fps: f64) -> Result<Vec<(String, FrameClip)>> {
    let mut out = Vec::new();
    for root in roots {
        for dir in clip_dirs(root)? {
            let id = dir.display().to_string();
            out.push((id, load_clip(&dir, nominal_fps)?));
        }
    }
    Ok(out)
}

/// Write frames as `prefix0001.png`, `prefix0002.png`, ... and return the paths.
pub fn write_frames(dir: &Path, prefix: &str, frames: &[Image], sixteen_bit: bool) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let path = dir.join(format!("{prefix}{:04}.png", i + 1));
            write_image(&path, f, sixteen_bit)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Image {
        Image::from_fn(5, 7, |y, x, c| ((y * 7 + x) * 3 + c) as f32 / 104.0).unwrap()
    }

    #[test]
    fn sixteen_bit_round_trip_is_within_quantization() {
        let img = sample();
        let back = decode_png(&encode_png(&img, true).unwrap()).unwrap();
        assert!(back.max_abs_diff(&img).unwrap() <= 0.5 / 65535.0 + 1e-7);
    }

    #[test]
    fn eight_bit_round_trip_is_within_quantization() {
        let img = sample();
        let back = decode_png(&encode_png(&img, false).unwrap()).unwrap();
        assert!(back.max_abs_diff(&img).unwrap() <= 0.5 / 255.0 + 1e-6);
    }

    #[test]
    fn grayscale_expands_to_rgb() {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 2, 1);
            enc.set_color(ColorType::Grayscale);
            enc.set_depth(BitDepth::Eight);
            enc.write_header().unwrap().write_image_data(&[0, 255]).unwrap();
        }
        let img = decode_png(&out).unwrap();
        assert_eq!(img.data(), &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn garbage_is_a_format_error() {
        assert!(matches!(decode_png(b"not a png"), Err(Error::Format { .. })));
        assert!(matches!(decode_png(&[]), Err(Error::Format { .. })));
    }

    #[test]
    fn clip_loading_is_lexicographic() {
        let dir = tempfile::tempdir().unwrap();
        for (name, v) in [("b.png", 0.5), ("a.png", 0.0), ("c.png", 1.0)] {
            write_image(&dir.path().join(name), &Image::constant(2, 2, v).unwrap(), false).unwrap();
        }
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let clip = load_clip(dir.path(), 240.0).unwrap();
        let firsts: Vec<f32> = clip.frames().iter().map(|f| f.get(0, 0, 0)).collect();
        assert_eq!(firsts, [0.0, (127.5f32).round() / 255.0, 1.0]);
    }
}
