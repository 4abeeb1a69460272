//! On-disk formats: EMAT tensors, CSV export, binary PPM images, checksums.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const EMAT_MAGIC: &[u8; 4] = b"EMAT";
const EMAT_VERSION: u32 = 1;

/// Serialize a tensor: magic "EMAT", u32 version, u32 rank, u64 dims, then
/// the row-major little-endian f64 payload.
pub fn write_emat<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(EMAT_MAGIC)?;
    w.write_all(&EMAT_VERSION.to_le_bytes())?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Inverse of [`write_emat`]; validates magic, version, and finiteness.
pub fn read_emat<R: Read>(r: &mut R) -> Result<Tensor> {
    let mut reader = OffsetReader { inner: r, offset: 0 };
    let mut magic = [0u8; 4];
    reader.read_exact_at(&mut magic, "magic")?;
    if &magic != EMAT_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            detail: format!("bad magic {:?}, expected \"EMAT\"", magic),
        });
    }
    let version = reader.read_u32("version")?;
    if version != EMAT_VERSION {
        return Err(Error::Parse {
            offset: 4,
            detail: format!("unsupported version {}", version),
        });
    }
    let rank = reader.read_u32("rank")? as usize;
    if rank > 8 {
        return Err(Error::Parse {
            offset: 8,
            detail: format!("implausible rank {}", rank),
        });
    }
    let mut shape = Vec::with_capacity(rank);
    let mut len = 1usize;
    for _ in 0..rank {
        let at = reader.offset;
        let d = reader.read_u64("dim")? as usize;
        len = len.checked_mul(d).ok_or_else(|| Error::Parse {
            offset: at,
            detail: "dimension product overflows".to_string(),
        })?;
        shape.push(d);
    }
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        let at = reader.offset;
        let v = f64::from_le_bytes(reader.read_8("payload")?);
        if !v.is_finite() {
            return Err(Error::Parse {
                offset: at,
                detail: format!("non-finite payload value {}", v),
            });
        }
        data.push(v);
    }
    Tensor::from_vec(&shape, data)
}

pub fn save_emat(path: &Path, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_emat(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_emat(path: &Path) -> Result<Tensor> {
    read_emat(&mut BufReader::new(File::open(path)?))
}

/// CSV rendering of a tensor: one row per trailing-dimension slice, every
/// value at full decimal precision (17 significant digits).
pub fn tensor_to_csv(t: &Tensor) -> String {
    if t.is_empty() {
        return String::new();
    }
    let width = *t.shape().last().unwrap_or(&1);
    let mut out = String::new();
    for row in t.data().chunks(width.max(1)) {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            out.push_str(&format_full(*v));
            first = false;
        }
        out.push('\n');
    }
    out
}

/// 17 significant decimal digits; round-trips any f64.
pub fn format_full(v: f64) -> String {
    format!("{:.16e}", v)
}

/// FNV-1a 64-bit hash.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// FNV-1a over the shape and little-endian payload, as a hex string.
pub fn tensor_checksum(t: &Tensor) -> String {
    let mut bytes = Vec::with_capacity(8 * (1 + t.rank() + t.len()));
    bytes.extend_from_slice(&(t.rank() as u64).to_le_bytes());
    for &d in t.shape() {
        bytes.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    format!("{:016x}", fnv1a64(&bytes))
}

// ── PPM (P6, 8-bit) ─────────────────────────────────────────────────

/// Load a binary P6 PPM as a `[3, height, width]` tensor in `[0,1]` (v/255).
pub fn load_ppm(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    parse_ppm(&bytes)
}

pub fn parse_ppm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0usize;
    if bytes.len() < 2 || &bytes[0..2] != b"P6" {
        return Err(Error::Parse {
            offset: 0,
            detail: "expected P6 magic".to_string(),
        });
    }
    pos += 2;
    let width = read_ppm_int(bytes, &mut pos)?;
    let height = read_ppm_int(bytes, &mut pos)?;
    let maxval = read_ppm_int(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(Error::Parse {
            offset: pos,
            detail: format!("maxval {} unsupported, expected 255", maxval),
        });
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => {
            return Err(Error::Parse {
                offset: pos,
                detail: "missing whitespace before raster".to_string(),
            })
        }
    }
    let need = width * height * 3;
    if bytes.len() < pos + need {
        return Err(Error::Parse {
            offset: bytes.len(),
            detail: format!("raster truncated: need {} bytes", need),
        });
    }
    let raster = &bytes[pos..pos + need];
    let mut data = vec![0.0; need];
    for y in 0..height {
        for x in 0..width {
            for c in 0..3 {
                let v = raster[(y * width + x) * 3 + c] as f64 / 255.0;
                data[c * height * width + y * width + x] = v;
            }
        }
    }
    Tensor::from_vec(&[3, height, width], data)
}

fn read_ppm_int(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    // skip whitespace and '#' comments
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            }
            _ => break,
        }
    }
    let start = *pos;
    let mut value = 0usize;
    while let Some(&b) = bytes.get(*pos) {
        if b.is_ascii_digit() {
            value = value * 10 + (b - b'0') as usize;
            *pos += 1;
        } else {
            break;
        }
    }
    if *pos == start {
        return Err(Error::Parse {
            offset: start,
            detail: "expected integer in PPM header".to_string(),
        });
    }
    Ok(value)
}

/// Save a `[3, h, w]` tensor as binary P6, rounding values to the nearest
/// of the 256 levels after clamping to `[0,1]`.
pub fn save_ppm(path: &Path, t: &Tensor) -> Result<()> {
    let bytes = encode_ppm(t)?;
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

pub fn encode_ppm(t: &Tensor) -> Result<Vec<u8>> {
    if t.rank() != 3 || t.shape()[0] != 3 {
        return Err(Error::dim(
            "encode_ppm",
            format!("expected [3, h, w], got {:?}", t.shape()),
        ));
    }
    let (h, w) = (t.shape()[1], t.shape()[2]);
    let mut out = format!("P6\n{} {}\n255\n", w, h).into_bytes();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = t.data()[c * h * w + y * w + x];
                out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    Ok(out)
}

struct OffsetReader<'a, R: Read> {
    inner: &'a mut R,
    offset: usize,
}

impl<R: Read> OffsetReader<'_, R> {
    fn read_exact_at(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let at = self.offset;
        self.inner.read_exact(buf).map_err(|_| Error::Parse {
            offset: at,
            detail: format!("truncated while reading {}", what),
        })?;
        self.offset += buf.len();
        Ok(())
    }

    fn read_u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact_at(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn read_u64(&mut self, what: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.read_exact_at(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }

    fn read_8(&mut self, what: &str) -> Result<[u8; 8]> {
        let mut b = [0u8; 8];
        self.read_exact_at(&mut b, what)?;
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian, Rng};

    #[test]
    fn emat_round_trip_is_bitwise() {
        let t = gaussian(&mut Rng::new(9), &[3, 4, 2]);
        let mut buf = Vec::new();
        write_emat(&mut buf, &t).unwrap();
        let back = read_emat(&mut buf.as_slice()).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn emat_rejects_bad_magic() {
        let err = read_emat(&mut &b"EMAX\x01\x00\x00\x00"[..]).unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 0, .. }));
    }

    #[test]
    fn emat_reports_truncation_offset() {
        let t = gaussian(&mut Rng::new(9), &[4]);
        let mut buf = Vec::new();
        write_emat(&mut buf, &t).unwrap();
        buf.truncate(buf.len() - 3);
        let err = read_emat(&mut buf.as_slice()).unwrap_err();
        match err {
            Error::Parse { offset, .. } => assert_eq!(offset, 12 + 8 + 3 * 8),
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn csv_uses_full_precision() {
        let t = Tensor::from_vec(&[2, 2], vec![1.0, 0.1, -2.5, 3.0]).unwrap();
        let csv = tensor_to_csv(&t);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].contains("1.0000000000000001e-1"), "{}", lines[0]);
    }

    #[test]
    fn ppm_round_trip_within_half_quantum() {
        let t = crate::rng::uniform(&mut Rng::new(3), &[3, 4, 5], 0.0, 1.0);
        let back = parse_ppm(&encode_ppm(&t).unwrap()).unwrap();
        let worst = crate::tensor::max_abs_diff(&t, &back).unwrap();
        assert!(worst <= 1.0 / 510.0 + 1e-12, "worst {}", worst);
    }

    #[test]
    fn ppm_all_black_is_zero_tensor() {
        let t = Tensor::zeros(&[3, 2, 2]);
        let back = parse_ppm(&encode_ppm(&t).unwrap()).unwrap();
        assert!(back.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ppm_bad_maxval_errs_with_offset() {
        let err = parse_ppm(b"P6\n2 2\n65535\n").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn checksum_distinguishes_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[3, 2]);
        assert_ne!(tensor_checksum(&a), tensor_checksum(&b));
    }
}
