//! Multi-page grayscale TIFF import.
//!
//! Support matrix: strip-organised pages, one sample per pixel, min-is-white
//! or min-is-black photometrics, no compression or deflate, 8/16/32-bit
//! unsigned integer or 32-bit float samples. Anything else is rejected with
//! the offending tag before any pixel data is decoded.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use tiff::decoder::{Decoder, DecodingResult, Limits};
use tiff::tags::Tag;

use crate::error::{Error, Result};
use crate::types::{InstanceMask, MultiChannelImage};

struct Page {
    width: usize,
    height: usize,
    data: DecodingResult,
}

fn unsupported(tag: Tag, name: &'static str, detail: impl Into<String>) -> Error {
    Error::UnsupportedTiff {
        tag: tag.to_u16(),
        name,
        detail: detail.into(),
    }
}

fn check_page<R: std::io::Read + std::io::Seek>(dec: &mut Decoder<R>) -> Result<()> {
    if dec.find_tag_unsigned::<u32>(Tag::TileWidth)?.is_some() {
        return Err(unsupported(Tag::TileWidth, "TileWidth", "tiled layout"));
    }
    let compression = dec.find_tag_unsigned::<u16>(Tag::Compression)?.unwrap_or(1);
    if !matches!(compression, 1 | 8 | 32946) {
        return Err(unsupported(
            Tag::Compression,
            "Compression",
            format!("method {compression}"),
        ));
    }
    let photometric = dec
        .find_tag_unsigned::<u16>(Tag::PhotometricInterpretation)?
        .unwrap_or(1);
    if photometric > 1 {
        return Err(unsupported(
            Tag::PhotometricInterpretation,
            "PhotometricInterpretation",
            format!("value {photometric}"),
        ));
    }
    let spp = dec.find_tag_unsigned::<u16>(Tag::SamplesPerPixel)?.unwrap_or(1);
    if spp != 1 {
        return Err(unsupported(
            Tag::SamplesPerPixel,
            "SamplesPerPixel",
            format!("{spp} samples per pixel"),
        ));
    }
    let bits = dec
        .find_tag_unsigned_vec::<u16>(Tag::BitsPerSample)?
        .unwrap_or_else(|| vec![1]);
    let bits = bits.first().copied().unwrap_or(1);
    if !matches!(bits, 8 | 16 | 32) {
        return Err(unsupported(
            Tag::BitsPerSample,
            "BitsPerSample",
            format!("{bits} bits"),
        ));
    }
    let format = dec
        .find_tag_unsigned_vec::<u16>(Tag::SampleFormat)?
        .and_then(|v| v.first().copied())
        .unwrap_or(1);
    match (format, bits) {
        (1, _) | (3, 32) => Ok(()),
        _ => Err(unsupported(
            Tag::SampleFormat,
            "SampleFormat",
            format!("format {format} with {bits} bits"),
        )),
    }
}

fn read_pages(path: &Path) -> Result<Vec<Page>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = Decoder::new(BufReader::new(file))?.with_limits(Limits::unlimited());
    let mut pages = Vec::new();
    loop {
        check_page(&mut dec)?;
        let (w, h) = dec.dimensions()?;
        let data = dec.read_image()?;
        pages.push(Page {
            width: w as usize,
            height: h as usize,
            data,
        });
        if !dec.more_images() {
            break;
        }
        dec.next_image()?;
    }
    if let Some(p) = pages
        .iter()
        .find(|p| (p.width, p.height) != (pages[0].width, pages[0].height))
    {
        return Err(Error::DimensionMismatch {
            expected: (pages[0].width, pages[0].height),
            actual: (p.width, p.height),
        });
    }
    Ok(pages)
}

fn to_f32(data: DecodingResult) -> Result<Vec<f32>> {
    Ok(match data {
        DecodingResult::U8(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::U16(v) => v.into_iter().map(f32::from).collect(),
        DecodingResult::U32(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::F32(v) => v,
        _ => {
            return Err(unsupported(
                Tag::SampleFormat,
                "SampleFormat",
                "decoded to an unsupported sample type",
            ))
        }
    })
}

/// Page `i` becomes channel `i`; integer samples are converted without scaling.
pub fn load_tiff(path: impl AsRef<Path>) -> Result<MultiChannelImage> {
    let pages = read_pages(path.as_ref())?;
    let (w, h) = (pages[0].width, pages[0].height);
    let names = (0..pages.len()).map(|c| format!("ch{c}")).collect();
    let planes = pages
        .into_iter()
        .map(|p| to_f32(p.data))
        .collect::<Result<Vec<_>>>()?;
    MultiChannelImage::from_planes(w, h, names, &planes)
}

/// Single-page integer label image.
pub fn load_tiff_mask(path: impl AsRef<Path>) -> Result<InstanceMask> {
    let mut pages = read_pages(path.as_ref())?;
    if pages.len() != 1 {
        return Err(Error::InvalidImage(format!(
            "label image has {} pages, expected 1",
            pages.len()
        )));
    }
    let page = pages.remove(0);
    let labels = match page.data {
        DecodingResult::U8(v) => v.into_iter().map(u32::from).collect(),
        DecodingResult::U16(v) => v.into_iter().map(u32::from).collect(),
        DecodingResult::U32(v) => v,
        _ => {
            return Err(unsupported(
                Tag::SampleFormat,
                "SampleFormat",
                "label images must hold unsigned integers",
            ))
        }
    };
    InstanceMask::new(page.width, page.height, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Raster;
    use tiff::encoder::{colortype, Compression, DeflateLevel, TiffEncoder};

    fn write_pages_u16(path: &Path, w: u32, h: u32, pages: &[Vec<u16>], deflate: bool) {
        let file = File::create(path).unwrap();
        let mut enc = TiffEncoder::new(file).unwrap();
        if deflate {
            enc = enc.with_compression(Compression::Deflate(DeflateLevel::Balanced));
        }
        for p in pages {
            enc.write_image::<colortype::Gray16>(w, h, p).unwrap();
        }
    }

    #[test]
    fn two_page_u16_keeps_raw_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.tif");
        let p0: Vec<u16> = (0..12).map(|i| i * 10).collect();
        let mut p1 = vec![3u16; 12];
        p1[5] = 1000;
        write_pages_u16(&path, 4, 3, &[p0, p1], false);
        let img = load_tiff(&path).unwrap();
        assert_eq!(img.channels(), 2);
        assert_eq!((img.width(), img.height()), (4, 3));
        let max = img.pixels().iter().cloned().fold(0.0f32, f32::max);
        assert_eq!(max, 1000.0);
        assert_eq!(img.get(0, 1, 0), 10.0);
        assert_eq!(img.get(1, 1, 1), 1000.0);
    }

    #[test]
    fn deflate_pages_decode() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.tif");
        let p0: Vec<u16> = (0..64).collect();
        write_pages_u16(&path, 8, 8, std::slice::from_ref(&p0), true);
        let img = load_tiff(&path).unwrap();
        assert_eq!(img.channel(0), p0.iter().map(|&v| v as f32).collect::<Vec<_>>());
    }

    #[test]
    fn single_page_float_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.tif");
        let vals: Vec<f32> = (0..20).map(|i| i as f32 * 0.123_456_7).collect();
        let file = File::create(&path).unwrap();
        let mut enc = TiffEncoder::new(file).unwrap();
        enc.write_image::<colortype::Gray32Float>(5, 4, &vals).unwrap();
        drop(enc);
        let img = load_tiff(&path).unwrap();
        assert_eq!(img.channels(), 1);
        let got: Vec<u32> = img.pixels().iter().map(|v| v.to_bits()).collect();
        let want: Vec<u32> = vals.iter().map(|v| v.to_bits()).collect();
        assert_eq!(got, want);
    }

    /// Little-endian TIFF with one 16x16 8-bit tile.
    fn tiled_tiff_bytes() -> Vec<u8> {
        let entries: [(u16, u16, u32, u32); 9] = [
            (256, 3, 1, 16),  // ImageWidth
            (257, 3, 1, 16),  // ImageLength
            (258, 3, 1, 8),   // BitsPerSample
            (259, 3, 1, 1),   // Compression
            (262, 3, 1, 1),   // Photometric
            (322, 3, 1, 16),  // TileWidth
            (323, 3, 1, 16),  // TileLength
            (324, 4, 1, 0),   // TileOffsets (patched below)
            (325, 4, 1, 256), // TileByteCounts
        ];
        let ifd_len = 2 + entries.len() * 12 + 4;
        let data_off = (8 + ifd_len) as u32;
        let mut b = vec![b'I', b'I', 42, 0, 8, 0, 0, 0];
        b.extend_from_slice(&(entries.len() as u16).to_le_bytes());
        for (tag, ty, count, value) in entries {
            let value = if tag == 324 { data_off } else { value };
            b.extend_from_slice(&tag.to_le_bytes());
            b.extend_from_slice(&ty.to_le_bytes());
            b.extend_from_slice(&count.to_le_bytes());
            if ty == 3 {
                b.extend_from_slice(&(value as u16).to_le_bytes());
                b.extend_from_slice(&[0, 0]);
            } else {
                b.extend_from_slice(&value.to_le_bytes());
            }
        }
        b.extend_from_slice(&[0, 0, 0, 0]);
        b.extend(std::iter::repeat_n(7u8, 256));
        b
    }

    #[test]
    fn tiled_tiff_names_tag_322() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tif");
        std::fs::write(&path, tiled_tiff_bytes()).unwrap();
        match load_tiff(&path) {
            Err(Error::UnsupportedTiff { tag, .. }) => assert_eq!(tag, 322),
            other => panic!("expected unsupported tag error, got {other:?}"),
        }
        let msg = load_tiff(&path).unwrap_err().to_string();
        assert!(msg.contains("322"), "{msg}");
    }

    #[test]
    fn rgb_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgb.tif");
        let file = File::create(&path).unwrap();
        let mut enc = TiffEncoder::new(file).unwrap();
        enc.write_image::<colortype::RGB8>(2, 2, &[0u8; 12]).unwrap();
        drop(enc);
        assert!(matches!(
            load_tiff(&path),
            Err(Error::UnsupportedTiff { tag: 262, .. }) | Err(Error::UnsupportedTiff { tag: 277, .. })
        ));
    }

    #[test]
    fn label_tiff_loads_as_instance_mask() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tif");
        let file = File::create(&path).unwrap();
        let mut enc = TiffEncoder::new(file).unwrap();
        enc.write_image::<colortype::Gray16>(3, 1, &[0u16, 4, 4]).unwrap();
        drop(enc);
        let m = load_tiff_mask(&path).unwrap();
        assert_eq!(m.labels(), &[0, 4, 4]);
    }
}
