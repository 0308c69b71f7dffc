//! PNG (8-bit) and PFM (little-endian float) image files.

use crate::error::{FireError, Result};
use std::path::Path;

pub fn write_png_rgb(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    assert_eq!(rgb.len(), width * height * 3);
    let img = image::RgbImage::from_raw(width as u32, height as u32, rgb.to_vec())
        .expect("buffer size checked");
    img.save(path)
        .map_err(|e| FireError::invalid(format!("writing {}: {e}", path.display())))
}

pub fn write_png_gray(path: &Path, width: usize, height: usize, gray: &[u8]) -> Result<()> {
    assert_eq!(gray.len(), width * height);
    let img = image::GrayImage::from_raw(width as u32, height as u32, gray.to_vec())
        .expect("buffer size checked");
    img.save(path)
        .map_err(|e| FireError::invalid(format!("writing {}: {e}", path.display())))
}

pub fn read_png_gray(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = image::open(path)
        .map_err(|e| FireError::invalid(format!("reading {}: {e}", path.display())))?
        .into_luma8();
    Ok((
        img.width() as usize,
        img.height() as usize,
        img.into_raw(),
    ))
}

pub fn read_png_rgb(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = image::open(path)
        .map_err(|e| FireError::invalid(format!("reading {}: {e}", path.display())))?
        .into_rgb8();
    Ok((
        img.width() as usize,
        img.height() as usize,
        img.into_raw(),
    ))
}

/// Grayscale PFM: header `Pf`, dimensions, scale -1.0 (little-endian),
/// then f32 scanlines bottom-to-top.
pub fn write_pfm(path: &Path, width: usize, height: usize, data: &[f64]) -> Result<()> {
    assert_eq!(data.len(), width * height);
    let mut buf = Vec::with_capacity(32 + data.len() * 4);
    buf.extend_from_slice(format!("Pf\n{width} {height}\n-1.0\n").as_bytes());
    for j in (0..height).rev() {
        for i in 0..width {
            buf.extend_from_slice(&(data[j * width + i] as f32).to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| FireError::io(path, e))
}

pub fn read_pfm(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = std::fs::read(path).map_err(|e| FireError::io(path, e))?;
    // header: three whitespace-delimited tokens then a single newline
    let mut pos = 0;
    let token = |pos: &mut usize| -> Result<String> {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(FireError::parse(path, "truncated PFM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    let magic = token(&mut pos)?;
    if magic != "Pf" {
        return Err(FireError::parse(path, "not a grayscale PFM (magic != Pf)"));
    }
    let width: usize = token(&mut pos)?
        .parse()
        .map_err(|e| FireError::parse(path, format!("bad width: {e}")))?;
    let height: usize = token(&mut pos)?
        .parse()
        .map_err(|e| FireError::parse(path, format!("bad height: {e}")))?;
    let scale: f64 = token(&mut pos)?
        .parse()
        .map_err(|e| FireError::parse(path, format!("bad scale: {e}")))?;
    if scale >= 0.0 {
        return Err(FireError::parse(path, "big-endian PFM not supported"));
    }
    pos += 1; // single whitespace after the scale
    let need = width * height * 4;
    if bytes.len() < pos + need {
        return Err(FireError::parse(path, "truncated PFM data"));
    }
    let mut data = vec![0.0f64; width * height];
    let mut off = pos;
    for j in (0..height).rev() {
        for i in 0..width {
            let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            data[j * width + i] = v as f64;
            off += 4;
        }
    }
    Ok((width, height, data))
}

pub fn mask_to_bytes(mask: &[bool]) -> Vec<u8> {
    mask.iter().map(|&m| if m { 255 } else { 0 }).collect()
}

pub fn bytes_to_mask(bytes: &[u8]) -> Vec<bool> {
    bytes.iter().map(|&b| b >= 128).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pfm");
        let data = vec![0.5, 1.25, -3.75, 0.0, 2.0, 0.0078125];
        write_pfm(&path, 3, 2, &data).unwrap();
        let (w, h, back) = read_pfm(&path).unwrap();
        assert_eq!((w, h), (3, 2));
        assert_eq!(back, data);
        let bytes1 = std::fs::read(&path).unwrap();
        write_pfm(&path, 3, 2, &back).unwrap();
        assert_eq!(bytes1, std::fs::read(&path).unwrap());
    }

    #[test]
    fn pfm_layout_matches_documented_fixture() {
        // 2x2 depths [[1,2],[3,4]] (row 0 is the top row): header then
        // bottom row first, little-endian f32
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixture.pfm");
        write_pfm(&path, 2, 2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let mut expect = b"Pf\n2 2\n-1.0\n".to_vec();
        for v in [3.0f32, 4.0, 1.0, 2.0] {
            expect.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(bytes, expect);
    }

    #[test]
    fn png_gray_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let data = vec![0u8, 255, 128, 7, 250, 13];
        write_png_gray(&path, 3, 2, &data).unwrap();
        let (w, h, back) = read_png_gray(&path).unwrap();
        assert_eq!((w, h, back), (3, 2, data));
    }
}
