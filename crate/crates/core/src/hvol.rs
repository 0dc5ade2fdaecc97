//! HVOL: minimal binary interchange format for volumes and masks.
//!
//! Byte layout (little-endian throughout):
//!
//! ```text
//! offset  size  field
//!      0     6  magic "HVOL1\0"
//!      6     1  dtype: 0 = 32-bit float, 1 = 8-bit unsigned label
//!      7    12  dims: 3 x u32 (nx, ny, nz)
//!     19    12  spacing: 3 x f32 (mm)
//!     31     1  reserved, must be zero
//!     32     -  payload, dtype size x nx*ny*nz bytes, row-major x-fastest
//! ```
//!
//! The payload length must match the header exactly; trailing bytes are a
//! format error. Round trips are bitwise lossless for data on the 32-bit
//! float grid; wider in-memory values are rounded to nearest on write.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::{MaskVolume, Volume3D};

pub const HVOL_MAGIC: [u8; 6] = *b"HVOL1\0";
pub const HVOL_HEADER_LEN: usize = 32;

pub const DTYPE_F32: u8 = 0;
pub const DTYPE_U8: u8 = 1;

/// Contents of an HVOL file: scalar volume or label mask.
#[derive(Debug, Clone, PartialEq)]
pub enum HvolData {
    Volume(Volume3D),
    Mask(MaskVolume),
}

impl HvolData {
    pub fn dims(&self) -> [usize; 3] {
        match self {
            HvolData::Volume(v) => v.dims(),
            HvolData::Mask(m) => m.dims(),
        }
    }

    pub fn into_volume(self) -> Result<Volume3D> {
        match self {
            HvolData::Volume(v) => Ok(v),
            HvolData::Mask(_) => Err(Error::Format("expected f32 volume, found u8 mask".into())),
        }
    }

    pub fn into_mask(self) -> Result<MaskVolume> {
        match self {
            HvolData::Mask(m) => Ok(m),
            HvolData::Volume(_) => Err(Error::Format("expected u8 mask, found f32 volume".into())),
        }
    }
}

fn header_bytes(dtype: u8, dims: [usize; 3], spacing: [f64; 3]) -> Result<[u8; HVOL_HEADER_LEN]> {
    let mut h = [0u8; HVOL_HEADER_LEN];
    h[..6].copy_from_slice(&HVOL_MAGIC);
    h[6] = dtype;
    for (i, &d) in dims.iter().enumerate() {
        let d = u32::try_from(d)
            .map_err(|_| Error::Format(format!("dim {d} does not fit in u32")))?;
        h[7 + 4 * i..11 + 4 * i].copy_from_slice(&d.to_le_bytes());
    }
    for (i, &s) in spacing.iter().enumerate() {
        h[19 + 4 * i..23 + 4 * i].copy_from_slice(&(s as f32).to_le_bytes());
    }
    // h[31] stays zero (reserved)
    Ok(h)
}

/// Writes a scalar volume as dtype-0 HVOL. Values are rounded to f32.
pub fn write_hvol_volume<W: Write>(w: &mut W, vol: &Volume3D) -> Result<()> {
    w.write_all(&header_bytes(DTYPE_F32, vol.dims(), vol.spacing())?)?;
    let mut buf = Vec::with_capacity(vol.len() * 4);
    for &v in vol.voxels() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Writes a label mask as dtype-1 HVOL.
pub fn write_hvol_mask<W: Write>(w: &mut W, mask: &MaskVolume) -> Result<()> {
    w.write_all(&header_bytes(DTYPE_U8, mask.dims(), mask.spacing())?)?;
    w.write_all(mask.labels())?;
    Ok(())
}

pub fn write_hvol<W: Write>(w: &mut W, data: &HvolData) -> Result<()> {
    match data {
        HvolData::Volume(v) => write_hvol_volume(w, v),
        HvolData::Mask(m) => write_hvol_mask(w, m),
    }
}

pub fn write_hvol_file<P: AsRef<Path>>(path: P, data: &HvolData) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_hvol(&mut w, data)?;
    w.flush()?;
    Ok(())
}

pub fn write_volume_file<P: AsRef<Path>>(path: P, vol: &Volume3D) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_hvol_volume(&mut w, vol)?;
    w.flush()?;
    Ok(())
}

pub fn write_mask_file<P: AsRef<Path>>(path: P, mask: &MaskVolume) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_hvol_mask(&mut w, mask)?;
    w.flush()?;
    Ok(())
}

/// Parses an HVOL stream. The reader must end exactly at the payload end.
pub fn read_hvol<R: Read>(r: &mut R) -> Result<HvolData> {
    let mut header = [0u8; HVOL_HEADER_LEN];
    r.read_exact(&mut header)
        .map_err(|_| Error::Format("truncated header (need 32 bytes)".into()))?;
    if header[..6] != HVOL_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            &header[..6],
            HVOL_MAGIC
        )));
    }
    let dtype = header[6];
    if header[31] != 0 {
        return Err(Error::Format("reserved header byte must be zero".into()));
    }
    let mut dims = [0usize; 3];
    for (i, d) in dims.iter_mut().enumerate() {
        let mut b = [0u8; 4];
        b.copy_from_slice(&header[7 + 4 * i..11 + 4 * i]);
        *d = u32::from_le_bytes(b) as usize;
    }
    let mut spacing = [0f64; 3];
    for (i, s) in spacing.iter_mut().enumerate() {
        let mut b = [0u8; 4];
        b.copy_from_slice(&header[19 + 4 * i..23 + 4 * i]);
        *s = f32::from_le_bytes(b) as f64;
    }
    let n = dims[0]
        .checked_mul(dims[1])
        .and_then(|p| p.checked_mul(dims[2]))
        .ok_or_else(|| Error::Format(format!("dims product overflows: {dims:?}")))?;
    let elem = match dtype {
        DTYPE_F32 => 4usize,
        DTYPE_U8 => 1usize,
        other => return Err(Error::Format(format!("unknown dtype {other}"))),
    };
    let payload_len = n
        .checked_mul(elem)
        .ok_or_else(|| Error::Format("payload length overflows".into()))?;
    let mut payload = vec![0u8; payload_len];
    r.read_exact(&mut payload)
        .map_err(|_| Error::Format(format!("truncated payload (expected {payload_len} bytes)")))?;
    let mut tail = [0u8; 1];
    if r.read(&mut tail)? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    match dtype {
        DTYPE_F32 => {
            let mut voxels = Vec::with_capacity(n);
            for chunk in payload.chunks_exact(4) {
                let mut b = [0u8; 4];
                b.copy_from_slice(chunk);
                voxels.push(f32::from_le_bytes(b) as f64);
            }
            Volume3D::new(dims, spacing, voxels)
                .map(HvolData::Volume)
                .map_err(|e| Error::Format(format!("invalid grid in header: {e}")))
        }
        DTYPE_U8 => MaskVolume::new(dims, spacing, payload)
            .map(HvolData::Mask)
            .map_err(|e| Error::Format(format!("invalid grid in header: {e}"))),
        _ => unreachable!(),
    }
}

pub fn read_hvol_file<P: AsRef<Path>>(path: P) -> Result<HvolData> {
    let mut r = BufReader::new(File::open(path)?);
    read_hvol(&mut r)
}

pub fn read_volume_file<P: AsRef<Path>>(path: P) -> Result<Volume3D> {
    read_hvol_file(path)?.into_volume()
}

pub fn read_mask_file<P: AsRef<Path>>(path: P) -> Result<MaskVolume> {
    read_hvol_file(path)?.into_mask()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip(data: &HvolData) -> (Vec<u8>, HvolData) {
        let mut bytes = Vec::new();
        write_hvol(&mut bytes, data).unwrap();
        let back = read_hvol(&mut bytes.as_slice()).unwrap();
        (bytes, back)
    }

    #[test]
    fn header_layout_is_pinned() {
        let vol = Volume3D::new([2, 1, 1], [0.5, 0.5, 3.0], vec![1.0, -2.5]).unwrap();
        let mut bytes = Vec::new();
        write_hvol_volume(&mut bytes, &vol).unwrap();
        assert_eq!(bytes.len(), 32 + 2 * 4);
        assert_eq!(&bytes[..6], b"HVOL1\0");
        assert_eq!(bytes[6], DTYPE_F32);
        assert_eq!(&bytes[7..11], &2u32.to_le_bytes());
        assert_eq!(&bytes[11..15], &1u32.to_le_bytes());
        assert_eq!(&bytes[15..19], &1u32.to_le_bytes());
        assert_eq!(&bytes[19..23], &0.5f32.to_le_bytes());
        assert_eq!(&bytes[23..27], &0.5f32.to_le_bytes());
        assert_eq!(&bytes[27..31], &3.0f32.to_le_bytes());
        assert_eq!(bytes[31], 0);
        assert_eq!(&bytes[32..36], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[36..40], &(-2.5f32).to_le_bytes());
    }

    #[test]
    fn example_file_size() {
        // 240x240x30 float volume -> 32 + 4 * 1_728_000 bytes
        let vol = Volume3D::filled([240, 240, 30], [0.5, 0.5, 3.0], 0.0).unwrap();
        let mut bytes = Vec::new();
        write_hvol_volume(&mut bytes, &vol).unwrap();
        assert_eq!(bytes.len(), 32 + 4 * 1_728_000);
    }

    #[test]
    fn volume_roundtrip_bitwise() {
        let vol = Volume3D::new(
            [3, 2, 2],
            [0.5, 1.25, 3.0],
            (0..12).map(|i| (i as f64 - 6.0) * 0.125).collect(),
        )
        .unwrap();
        let (bytes, back) = roundtrip(&HvolData::Volume(vol.clone()));
        assert_eq!(back, HvolData::Volume(vol));
        // file -> memory -> file is byte-identical
        let mut again = Vec::new();
        write_hvol(&mut again, &back).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn mask_roundtrip_bitwise() {
        let mask = MaskVolume::new([2, 2, 2], [1.0, 1.0, 1.0], vec![0, 1, 2, 3, 0, 255, 7, 1]).unwrap();
        let (_, back) = roundtrip(&HvolData::Mask(mask.clone()));
        assert_eq!(back, HvolData::Mask(mask));
    }

    #[test]
    fn degenerate_single_voxel() {
        let vol = Volume3D::new([1, 1, 1], [1.0, 1.0, 1.0], vec![42.5]).unwrap();
        let (_, back) = roundtrip(&HvolData::Volume(vol.clone()));
        assert_eq!(back, HvolData::Volume(vol));
    }

    #[test]
    fn off_grid_values_round_to_f32() {
        let v = 0.1f64; // not representable in f32
        let vol = Volume3D::new([1, 1, 1], [1.0, 1.0, 1.0], vec![v]).unwrap();
        let (_, back) = roundtrip(&HvolData::Volume(vol));
        let got = back.into_volume().unwrap().voxels()[0];
        assert_eq!(got, 0.1f32 as f64);
        assert_ne!(got, v);
    }

    #[test]
    fn rejects_malformed_streams() {
        let vol = Volume3D::filled([2, 2, 1], [1.0, 1.0, 1.0], 1.0).unwrap();
        let mut bytes = Vec::new();
        write_hvol_volume(&mut bytes, &vol).unwrap();

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(read_hvol(&mut bad_magic.as_slice()), Err(Error::Format(_))));

        let truncated = &bytes[..bytes.len() - 1];
        assert!(matches!(read_hvol(&mut &truncated[..]), Err(Error::Format(_))));

        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(matches!(read_hvol(&mut trailing.as_slice()), Err(Error::Format(_))));

        let mut bad_dtype = bytes.clone();
        bad_dtype[6] = 9;
        assert!(matches!(read_hvol(&mut bad_dtype.as_slice()), Err(Error::Format(_))));

        let mut zero_dim = bytes.clone();
        zero_dim[7..11].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(read_hvol(&mut zero_dim.as_slice()), Err(Error::Format(_))));

        let mut nonzero_reserved = bytes;
        nonzero_reserved[31] = 1;
        assert!(matches!(
            read_hvol(&mut nonzero_reserved.as_slice()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn short_header_is_format_error() {
        let bytes = b"HVOL1\0\x00".to_vec();
        assert!(matches!(read_hvol(&mut bytes.as_slice()), Err(Error::Format(_))));
    }
}
