//! Binary volume, image and weight files plus PNG export.
//!
//! All integers and floats are little-endian. Volumes are `XVOL`, version,
//! `nx ny nz` and x-fastest `f32` voxels; images are `XIMG`, version, `w h`
//! and row-major `f32` opacities; weights are `XNNW`, version, tensor count
//! and per tensor a `u16` name length, the UTF-8 name, a `u8` rank, `u32`
//! dims and the `f32` payload.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use xray2vol_core::net::{NamedTensor, NetworkWeights};
use xray2vol_core::render::RgbImage;
use xray2vol_core::{Image, Volume, XRayImage};

use crate::error::{Error, Result};

pub const VOLUME_MAGIC: [u8; 4] = *b"XVOL";
pub const IMAGE_MAGIC: [u8; 4] = *b"XIMG";
pub const WEIGHTS_MAGIC: [u8; 4] = *b"XNNW";
pub const FORMAT_VERSION: u32 = 1;

/// Decoding failures of the binary formats.
#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("file truncated: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("invalid dimensions {0:?}")]
    BadDims(Vec<usize>),
    #[error("tensor name is not UTF-8")]
    BadName,
    #[error("payload rejected: {0}")]
    BadPayload(#[from] xray2vol_core::Error),
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let rest = self.bytes.len() - self.pos;
        if rest < n {
            return Err(FormatError::Truncated { offset: self.pos, needed: n - rest });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, FormatError> {
        let bytes = n.checked_mul(4).ok_or_else(|| FormatError::BadDims(vec![n]))?;
        Ok(self.take(bytes)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn header(&mut self, magic: [u8; 4]) -> Result<(), FormatError> {
        let found = self.take(4.min(self.bytes.len()))?;
        if found != magic {
            return Err(FormatError::BadMagic {
                expected: String::from_utf8_lossy(&magic).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        match self.u32()? {
            FORMAT_VERSION => Ok(()),
            v => Err(FormatError::UnsupportedVersion(v)),
        }
    }

    fn finish(&self) -> Result<(), FormatError> {
        match self.bytes.len() - self.pos {
            0 => Ok(()),
            n => Err(FormatError::TrailingBytes(n)),
        }
    }
}

fn product(dims: &[usize]) -> Result<usize, FormatError> {
    dims.iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .filter(|&n| n > 0)
        .ok_or_else(|| FormatError::BadDims(dims.to_vec()))
}

fn put_f32s(out: &mut Vec<u8>, data: &[f32]) {
    out.reserve(data.len() * 4);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn header(magic: [u8; 4], dims: &[usize]) -> Vec<u8> {
    let mut out = magic.to_vec();
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out
}

pub fn encode_volume(v: &Volume) -> Vec<u8> {
    let mut out = header(VOLUME_MAGIC, &v.dims());
    put_f32s(&mut out, v.data());
    out
}

pub fn decode_volume(bytes: &[u8]) -> Result<Volume, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    r.header(VOLUME_MAGIC)?;
    let dims = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    let data = r.f32s(product(&dims)?)?;
    r.finish()?;
    Ok(Volume::new(dims, data)?)
}

pub fn encode_image(img: &Image) -> Vec<u8> {
    let mut out = header(IMAGE_MAGIC, &[img.width(), img.height()]);
    put_f32s(&mut out, img.data());
    out
}

pub fn decode_image(bytes: &[u8]) -> Result<Image, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    r.header(IMAGE_MAGIC)?;
    let (w, h) = (r.u32()? as usize, r.u32()? as usize);
    let data = r.f32s(product(&[w, h])?)?;
    r.finish()?;
    Ok(Image::new(w, h, data)?)
}

pub fn encode_weights(w: &NetworkWeights) -> Result<Vec<u8>, FormatError> {
    let mut out = header(WEIGHTS_MAGIC, &[w.tensors.len()]);
    for t in &w.tensors {
        let name = t.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| FormatError::BadName)?;
        let rank = u8::try_from(t.dims.len()).map_err(|_| FormatError::BadDims(t.dims.clone()))?;
        if t.dims.iter().any(|&d| u32::try_from(d).is_err()) || product(&t.dims)? != t.data.len() {
            return Err(FormatError::BadDims(t.dims.clone()));
        }
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(rank);
        for &d in &t.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        put_f32s(&mut out, &t.data);
    }
    Ok(out)
}

pub fn decode_weights(bytes: &[u8]) -> Result<NetworkWeights, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    r.header(WEIGHTS_MAGIC)?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| FormatError::BadName)?.to_owned();
        let rank = r.u8()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let data = r.f32s(product(&dims)?)?;
        tensors.push(NamedTensor { name, dims, data });
    }
    r.finish()?;
    Ok(NetworkWeights { tensors })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn decoded<T>(path: &Path, r: Result<T, FormatError>) -> Result<T> {
    r.map_err(|source| Error::Format { path: path.to_owned(), source })
}

/// Writes `bytes` to a sibling temporary file and renames it into place, so
/// a failed write never leaves a partial artifact under the final name.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = Path::new(&tmp);
    let result = (|| -> io::Result<()> {
        let mut f = BufWriter::new(fs::File::create(tmp)?);
        f.write_all(bytes)?;
        f.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn save_volume(path: &Path, v: &Volume) -> Result<()> {
    write_atomic(path, &encode_volume(v))
}

pub fn load_volume(path: &Path) -> Result<Volume> {
    decoded(path, decode_volume(&read(path)?))
}

pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    write_atomic(path, &encode_image(img))
}

pub fn load_image(path: &Path) -> Result<Image> {
    decoded(path, decode_image(&read(path)?))
}

/// Loads an image and checks that it holds valid opacities.
pub fn load_xray(path: &Path) -> Result<XRayImage> {
    let img = load_image(path)?;
    decoded(path, XRayImage::try_from(img).map_err(FormatError::from))
}

pub fn save_weights(path: &Path, w: &NetworkWeights) -> Result<()> {
    write_atomic(path, &decoded(path, encode_weights(w))?)
}

pub fn load_weights(path: &Path) -> Result<NetworkWeights> {
    decoded(path, decode_weights(&read(path)?))
}

fn write_png(path: &Path, img: impl FnOnce(&mut Vec<u8>) -> image::ImageResult<()>) -> Result<()> {
    let mut bytes = Vec::new();
    img(&mut bytes).map_err(|source| Error::Png { path: path.to_owned(), source })?;
    write_atomic(path, &bytes)
}

fn encoder(out: &mut Vec<u8>) -> image::codecs::png::PngEncoder<&mut Vec<u8>> {
    image::codecs::png::PngEncoder::new(out)
}

/// 16-bit grayscale PNG with `round(value * 65535)`, values clamped to `[0,1]`.
pub fn export_png16(path: &Path, img: &Image) -> Result<()> {
    use image::ImageEncoder;
    let mut buf = Vec::with_capacity(img.data().len() * 2);
    for &v in img.data() {
        buf.extend_from_slice(&((v.clamp(0.0, 1.0) * 65535.0).round() as u16).to_be_bytes());
    }
    write_png(path, |out| {
        encoder(out).write_image(&buf, img.width() as u32, img.height() as u32, image::ExtendedColorType::L16)
    })
}

/// 8-bit grayscale PNG.
pub fn export_png8(path: &Path, img: &Image) -> Result<()> {
    use image::ImageEncoder;
    let buf: Vec<u8> = img.data().iter().map(|&v| to_u8(v)).collect();
    write_png(path, |out| {
        encoder(out).write_image(&buf, img.width() as u32, img.height() as u32, image::ExtendedColorType::L8)
    })
}

/// 8-bit RGB PNG.
pub fn export_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    use image::ImageEncoder;
    let buf: Vec<u8> = img.data.iter().flat_map(|p| p.map(to_u8)).collect();
    write_png(path, |out| {
        encoder(out).write_image(&buf, img.width as u32, img.height as u32, image::ExtendedColorType::Rgb8)
    })
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
