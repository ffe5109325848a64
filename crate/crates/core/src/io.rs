//! Binary file formats: the `LLVT` raw tensor container and binary
//! PPM (P6) / PGM (P5) images.
//!
//! `LLVT` layout: magic `b"LLVT"`, format version `u8`, rank `u8`, each dim
//! as `u32` little-endian, then the values as little-endian IEEE-754 `f32`
//! in row-major order.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LLVT_MAGIC: &[u8; 4] = b"LLVT";
pub const LLVT_VERSION: u8 = 1;

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor<f32>) -> io::Result<()> {
    w.write_all(LLVT_MAGIC)?;
    w.write_all(&[LLVT_VERSION, t.rank() as u8])?;
    for &d in t.dims() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.numel() * 4);
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

/// Reads one `LLVT` tensor. Format violations surface as
/// `io::ErrorKind::InvalidData`.
pub fn read_tensor<R: Read>(r: &mut R) -> io::Result<Tensor<f32>> {
    let invalid = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
    let mut head = [0u8; 6];
    r.read_exact(&mut head)?;
    if &head[..4] != LLVT_MAGIC {
        return Err(invalid("missing LLVT magic".into()));
    }
    if head[4] != LLVT_VERSION {
        return Err(invalid(format!("unsupported LLVT version {}", head[4])));
    }
    let rank = head[5] as usize;
    if rank == 0 {
        return Err(invalid("LLVT rank 0".into()));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        dims.push(u32::from_le_bytes(b) as usize);
    }
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n > 0 && n < (1 << 34))
        .ok_or_else(|| invalid(format!("implausible LLVT dims {dims:?}")))?;
    let mut raw = vec![0u8; n * 4];
    r.read_exact(&mut raw)?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::from_vec(&dims, data).map_err(|e| invalid(e.to_string()))
}

pub fn save_llvt(path: &Path, t: &Tensor<f32>) -> Result<()> {
    let mut buf = Vec::new();
    write_tensor(&mut buf, t).expect("writing to memory");
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_llvt(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut slice = &bytes[..];
    let t = read_tensor(&mut slice).map_err(|e| Error::format(path, e.to_string()))?;
    if !slice.is_empty() {
        return Err(Error::format(path, "trailing bytes after LLVT tensor"));
    }
    Ok(t)
}

/// A decoded netpbm image: `[C, H, W]` values normalised by the file's
/// maxval, plus the sample depth in bits (8 or 16).
#[derive(Debug, Clone)]
pub struct Image {
    pub pixels: Tensor<f32>,
    pub bit_depth: u8,
}

fn pnm_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

/// Decodes binary P6 (RGB) or P5 (grey) data.
pub fn decode_pnm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let mut pos = 0;
    let channels = match pnm_token(bytes, &mut pos) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err("not a binary PPM (P6) or PGM (P5) file".into()),
    };
    let mut field = |name: &str| -> std::result::Result<usize, String> {
        pnm_token(bytes, &mut pos)
            .and_then(|t| std::str::from_utf8(t).ok())
            .and_then(|t| t.parse().ok())
            .filter(|&v: &usize| v > 0)
            .ok_or_else(|| format!("bad or missing {name} in header"))
    };
    let width = field("width")?;
    let height = field("height")?;
    let maxval = field("maxval")?;
    if maxval > 65535 {
        return Err(format!("maxval {maxval} exceeds 65535"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let wide = maxval > 255;
    let maxval = maxval as f32;
    let bytes_per = if wide { 2 } else { 1 };
    let n = width * height * channels;
    let raster = bytes
        .get(pos..pos + n * bytes_per)
        .ok_or_else(|| format!("raster truncated: expected {} bytes", n * bytes_per))?;
    let mut data = vec![0.0f32; n];
    for y in 0..height {
        for x in 0..width {
            for c in 0..channels {
                let i = (y * width + x) * channels + c;
                let v = if wide {
                    u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as u32
                } else {
                    raster[i] as u32
                };
                if v as f32 > maxval {
                    return Err(format!("sample {v} exceeds maxval {maxval}"));
                }
                data[(c * height + y) * width + x] = v as f32 / maxval;
            }
        }
    }
    Ok(Image {
        pixels: Tensor::from_vec(&[channels, height, width], data).map_err(|e| e.to_string())?,
        bit_depth: if wide { 16 } else { 8 },
    })
}

/// Clamps to `[0, 1]` and quantises round-half-up to `maxval`.
pub fn quantize(v: f32, maxval: u32) -> u32 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) } as f64;
    ((v * maxval as f64) + 0.5).floor() as u32
}

/// Encodes a `[C, H, W]` tensor (C = 3 -> P6, C = 1 -> P5) at 8 or 16 bits.
pub fn encode_pnm(pixels: &Tensor<f32>, bit_depth: u8) -> std::result::Result<Vec<u8>, String> {
    let &[channels, height, width] = pixels.dims() else {
        return Err(format!("expected [C, H, W] pixels, got {:?}", pixels.dims()));
    };
    let magic = match channels {
        3 => "P6",
        1 => "P5",
        c => return Err(format!("netpbm supports 1 or 3 channels, got {c}")),
    };
    let maxval: u32 = match bit_depth {
        8 => 255,
        16 => 65535,
        b => return Err(format!("unsupported bit depth {b}")),
    };
    let mut out = format!("{magic}\n{width} {height}\n{maxval}\n").into_bytes();
    let data = pixels.data();
    for y in 0..height {
        for x in 0..width {
            for c in 0..channels {
                let q = quantize(data[(c * height + y) * width + x], maxval);
                if bit_depth == 8 {
                    out.push(q as u8);
                } else {
                    out.extend_from_slice(&(q as u16).to_be_bytes());
                }
            }
        }
    }
    Ok(out)
}

pub fn load_pnm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes).map_err(|e| Error::format(path, e))
}

pub fn save_pnm(path: &Path, pixels: &Tensor<f32>, bit_depth: u8) -> Result<()> {
    let bytes = encode_pnm(pixels, bit_depth).map_err(|e| Error::format(path, e))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn llvt_header_layout() {
        let t = Tensor::from_vec(&[2, 1], vec![1.0f32, -2.5]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(&buf[..4], b"LLVT");
        assert_eq!(buf[4], 1);
        assert_eq!(buf[5], 2);
        assert_eq!(&buf[6..10], &2u32.to_le_bytes());
        assert_eq!(&buf[10..14], &1u32.to_le_bytes());
        assert_eq!(&buf[14..18], &1.0f32.to_le_bytes());
        assert_eq!(&buf[18..22], &(-2.5f32).to_le_bytes());
        assert_eq!(buf.len(), 22);
    }

    #[test]
    fn llvt_rejects_bad_magic_and_truncation() {
        let mut slice: &[u8] = b"LLVX\x01\x01\x01\x00\x00\x00";
        assert!(read_tensor(&mut slice).is_err());
        let t = Tensor::from_vec(&[3], vec![1.0f32, 2.0, 3.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        buf.pop();
        assert!(read_tensor(&mut &buf[..]).is_err());
    }

    proptest! {
        #[test]
        fn llvt_round_trip_is_bit_exact(
            dims in proptest::collection::vec(1usize..5, 1..5),
            seed in any::<u32>(),
        ) {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = (0..n)
                .map(|i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i as u32 * 97)) )
                .map(|v| if v.is_finite() { v } else { 0.0 })
                .collect();
            let t = Tensor::from_vec(&dims, data).unwrap();
            let mut buf = Vec::new();
            write_tensor(&mut buf, &t).unwrap();
            let back = read_tensor(&mut &buf[..]).unwrap();
            prop_assert_eq!(back.dims(), t.dims());
            for (a, b) in back.data().iter().zip(t.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn ppm_header_with_comment_and_normalisation() {
        let mut bytes = b"P6\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 128, 0, 0, 51]);
        let img = decode_pnm(&bytes).unwrap();
        assert_eq!(img.pixels.dims(), &[3, 1, 2]);
        assert_eq!(img.bit_depth, 8);
        // channel-major: R plane [255, 0], G plane [0, 0], B plane [128, 51]
        let d = img.pixels.data();
        assert_eq!(d[0], 1.0);
        assert_eq!(d[1], 0.0);
        assert_eq!(d[4], 128.0 / 255.0);
        assert_eq!(d[5], 0.2);
    }

    #[test]
    fn quantisation_rounds_half_up_and_clamps() {
        assert_eq!(quantize(0.5, 255), 128);
        assert_eq!(quantize(-0.2, 255), 0);
        assert_eq!(quantize(1.7, 255), 255);
        assert_eq!(quantize(1.0, 65535), 65535);
    }

    #[test]
    fn sixteen_bit_round_trip_is_exact() {
        let px = Tensor::from_fn(&[3, 2, 3], |i| (i as f32 * 3677.0) / 65535.0);
        let bytes = encode_pnm(&px, 16).unwrap();
        let back = decode_pnm(&bytes).unwrap();
        assert_eq!(back.bit_depth, 16);
        let again = encode_pnm(&back.pixels, 16).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn pgm_single_channel() {
        let px = Tensor::from_fn(&[1, 2, 2], |i| i as f32 / 3.0);
        let bytes = encode_pnm(&px, 8).unwrap();
        assert!(bytes.starts_with(b"P5"));
        let back = decode_pnm(&bytes).unwrap();
        assert_eq!(back.pixels.dims(), &[1, 2, 2]);
    }
}
