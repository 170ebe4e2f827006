//! Single-file NIfTI-1 (`.nii`) reader/writer for integer label images.
//!
//! Only the header fields needed for label volumes are interpreted: `dim`,
//! `pixdim`, `datatype`, `vox_offset` and the scaling pair. The qform/sform
//! blocks are carried through untouched and never used for computation.

use std::path::Path;

use super::{LabelVolume, Result, VolumeError};

const HEADER_SIZE: usize = 348;
const DEFAULT_VOX_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;
const DT_INT8: i16 = 256;
const DT_UINT16: i16 = 512;
const DT_UINT32: i16 = 768;

/// Orientation fields of a NIfTI-1 header, preserved on round-trip.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NiftiOrientation {
    pub qform_code: i16,
    pub sform_code: i16,
    pub qfac: f32,
    /// quatern_b, quatern_c, quatern_d, qoffset_x, qoffset_y, qoffset_z
    pub quatern: [f32; 6],
    pub srow: [[f32; 4]; 3],
}

struct Reader<'a> {
    bytes: &'a [u8],
    big_endian: bool,
}

impl Reader<'_> {
    fn i16(&self, off: usize) -> i16 {
        let b = [self.bytes[off], self.bytes[off + 1]];
        if self.big_endian {
            i16::from_be_bytes(b)
        } else {
            i16::from_le_bytes(b)
        }
    }

    fn word(&self, off: usize) -> [u8; 4] {
        [
            self.bytes[off],
            self.bytes[off + 1],
            self.bytes[off + 2],
            self.bytes[off + 3],
        ]
    }

    fn i32(&self, off: usize) -> i32 {
        if self.big_endian {
            i32::from_be_bytes(self.word(off))
        } else {
            i32::from_le_bytes(self.word(off))
        }
    }

    fn f32(&self, off: usize) -> f32 {
        if self.big_endian {
            f32::from_be_bytes(self.word(off))
        } else {
            f32::from_le_bytes(self.word(off))
        }
    }
}

fn width(datatype: i16) -> Result<usize> {
    match datatype {
        DT_UINT8 | DT_INT8 => Ok(1),
        DT_INT16 | DT_UINT16 => Ok(2),
        DT_INT32 | DT_UINT32 => Ok(4),
        DT_FLOAT32 | DT_FLOAT64 => Err(VolumeError::Type(format!(
            "datatype {datatype} is floating point; label volumes must be integer"
        ))),
        other => Err(VolumeError::format("datatype", format!("unsupported datatype code {other}"))),
    }
}

pub(super) fn read(path: &Path) -> Result<LabelVolume> {
    let bytes = std::fs::read(path).map_err(|e| VolumeError::io(path, e))?;
    parse(&bytes)
}

pub(super) fn parse(bytes: &[u8]) -> Result<LabelVolume> {
    if bytes.len() < HEADER_SIZE {
        return Err(VolumeError::format("sizeof_hdr", "file shorter than a NIfTI-1 header"));
    }
    let mut r = Reader {
        bytes,
        big_endian: false,
    };
    if r.i32(0) != HEADER_SIZE as i32 {
        r.big_endian = true;
        if r.i32(0) != HEADER_SIZE as i32 {
            return Err(VolumeError::format("sizeof_hdr", "expected 348 in either byte order"));
        }
    }
    if &bytes[344..348] != MAGIC {
        return Err(VolumeError::format("magic", "expected single-file NIfTI-1 magic 'n+1'"));
    }

    let ndim = r.i16(40);
    if !(1..=7).contains(&ndim) {
        return Err(VolumeError::format("dim", format!("dim[0] = {ndim} outside 1..=7")));
    }
    let mut dims = [1usize; 3];
    for i in 1..=ndim as usize {
        let d = r.i16(40 + 2 * i);
        if d < 1 {
            return Err(VolumeError::format("dim", format!("dim[{i}] = {d} must be positive")));
        }
        if i <= 3 {
            dims[i - 1] = d as usize;
        } else if d != 1 {
            return Err(VolumeError::format("dim", format!("dim[{i}] = {d}; only 3D volumes are supported")));
        }
    }

    let mut spacing = [1f64; 3];
    for (i, s) in spacing.iter_mut().enumerate().take(ndim.min(3) as usize) {
        *s = f64::from(r.f32(76 + 4 * (i + 1)));
    }
    if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(VolumeError::NonPositiveSpacing(spacing));
    }

    let datatype = r.i16(70);
    let w = width(datatype)?;
    let vox_offset = r.f32(108);
    if !(vox_offset.is_finite() && vox_offset >= HEADER_SIZE as f32 && vox_offset.fract() == 0.0) {
        return Err(VolumeError::format("vox_offset", format!("{vox_offset} is not a valid data offset")));
    }
    let slope = r.f32(112);
    let inter = r.f32(116);
    if (slope != 0.0 && slope != 1.0) || inter != 0.0 {
        return Err(VolumeError::Type(format!(
            "scl_slope={slope}, scl_inter={inter} would rescale integer labels"
        )));
    }

    let n: usize = dims.iter().product();
    let start = vox_offset as usize;
    let end = start + n * w;
    if bytes.len() < end {
        return Err(VolumeError::format(
            "vox_offset",
            format!("payload needs {} bytes after offset {start}, file has {}", n * w, bytes.len().saturating_sub(start)),
        ));
    }
    let payload = Reader {
        bytes: &bytes[start..end],
        big_endian: r.big_endian,
    };
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let v = match datatype {
            DT_UINT8 => i32::from(payload.bytes[i]),
            DT_INT8 => i32::from(payload.bytes[i] as i8),
            DT_INT16 => i32::from(payload.i16(2 * i)),
            DT_UINT16 => i32::from(payload.i16(2 * i) as u16),
            DT_INT32 => payload.i32(4 * i),
            DT_UINT32 => {
                let v = payload.i32(4 * i) as u32;
                i32::try_from(v).map_err(|_| VolumeError::Type(format!("label {v} exceeds i32")))?
            }
            _ => unreachable!("width() rejected datatype"),
        };
        data.push(v);
    }

    let orientation = NiftiOrientation {
        qform_code: r.i16(252),
        sform_code: r.i16(254),
        qfac: r.f32(76),
        quatern: std::array::from_fn(|i| r.f32(256 + 4 * i)),
        srow: std::array::from_fn(|row| std::array::from_fn(|c| r.f32(280 + 16 * row + 4 * c))),
    };
    let mut vol = LabelVolume::with_generated_legend(dims, spacing, data)?;
    vol.set_orientation(Some(orientation));
    Ok(vol)
}

pub(super) fn encode(volume: &LabelVolume) -> Vec<u8> {
    let fits_u8 = volume.data().iter().all(|v| (0..=255).contains(v));
    let (datatype, bitpix) = if fits_u8 { (DT_UINT8, 8i16) } else { (DT_INT32, 32) };
    let mut h = vec![0u8; DEFAULT_VOX_OFFSET];
    let put_i16 = |h: &mut Vec<u8>, off: usize, v: i16| h[off..off + 2].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |h: &mut Vec<u8>, off: usize, v: f32| h[off..off + 4].copy_from_slice(&v.to_le_bytes());

    h[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    h[38] = b'r';
    let dims = volume.dims();
    put_i16(&mut h, 40, 3);
    for (i, d) in dims.iter().enumerate() {
        put_i16(&mut h, 42 + 2 * i, *d as i16);
    }
    for i in 4..8 {
        put_i16(&mut h, 40 + 2 * i, 1);
    }
    put_i16(&mut h, 70, datatype);
    put_i16(&mut h, 72, bitpix);
    let orientation = volume.orientation().copied().unwrap_or(NiftiOrientation {
        qfac: 1.0,
        ..Default::default()
    });
    put_f32(&mut h, 76, orientation.qfac);
    for (i, s) in volume.spacing().iter().enumerate() {
        put_f32(&mut h, 80 + 4 * i, *s as f32);
    }
    put_f32(&mut h, 108, DEFAULT_VOX_OFFSET as f32);
    put_f32(&mut h, 112, 1.0);
    h[123] = 2; // xyzt_units: mm
    put_i16(&mut h, 252, orientation.qform_code);
    put_i16(&mut h, 254, orientation.sform_code);
    for (i, q) in orientation.quatern.iter().enumerate() {
        put_f32(&mut h, 256 + 4 * i, *q);
    }
    for (row, vals) in orientation.srow.iter().enumerate() {
        for (c, v) in vals.iter().enumerate() {
            put_f32(&mut h, 280 + 16 * row + 4 * c, *v);
        }
    }
    h[344..348].copy_from_slice(MAGIC);

    for v in volume.data() {
        if fits_u8 {
            h.push(*v as u8);
        } else {
            h.extend_from_slice(&v.to_le_bytes());
        }
    }
    h
}

pub(super) fn write(volume: &LabelVolume, path: &Path) -> Result<()> {
    // pixdim is f32 on disk.
    if volume.spacing().iter().any(|s| f64::from(*s as f32) != *s) {
        log::warn!("spacing {:?} is rounded to f32 in the NIfTI header", volume.spacing());
    }
    std::fs::write(path, encode(volume)).map_err(|e| VolumeError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> LabelVolume {
        LabelVolume::with_generated_legend([2, 2, 1], [1.0, 1.0, 1.0], vec![1, 0, 0, 4]).unwrap()
    }

    #[test]
    fn encode_parse_round_trip() {
        let vol = sample();
        let back = parse(&encode(&vol)).unwrap();
        assert_eq!(back.data(), vol.data());
        assert_eq!(back.dims(), vol.dims());
        assert_eq!(back.spacing(), vol.spacing());
    }

    #[test]
    fn negative_spacing_is_rejected() {
        let mut bytes = encode(&sample());
        bytes[84..88].copy_from_slice(&(-1.0f32).to_le_bytes());
        let err = parse(&bytes).unwrap_err();
        assert!(err.to_string().contains("spacing must be positive"), "{err}");
    }

    #[test]
    fn float_datatype_is_type_error() {
        let mut bytes = encode(&sample());
        bytes[70..72].copy_from_slice(&DT_FLOAT32.to_le_bytes());
        assert!(matches!(parse(&bytes).unwrap_err(), VolumeError::Type(_)));
    }

    #[test]
    fn bad_magic_names_field() {
        let mut bytes = encode(&sample());
        bytes[344] = b'x';
        let err = parse(&bytes).unwrap_err();
        assert!(matches!(err, VolumeError::Format { ref field, .. } if field == "magic"));
    }

    #[test]
    fn big_endian_header_is_read() {
        let vol = LabelVolume::with_generated_legend([2, 1, 1], [2.0, 1.0, 1.0], vec![0, 300]).unwrap();
        let le = encode(&vol);
        // Byte-swap every field we interpret.
        let mut be = le.clone();
        let swap = |b: &mut Vec<u8>, off: usize, n: usize| b[off..off + n].reverse();
        swap(&mut be, 0, 4);
        for i in 0..8 {
            swap(&mut be, 40 + 2 * i, 2);
            swap(&mut be, 76 + 4 * i, 4);
        }
        swap(&mut be, 70, 2);
        swap(&mut be, 72, 2);
        swap(&mut be, 108, 4);
        swap(&mut be, 112, 4);
        for i in 0..2 {
            swap(&mut be, DEFAULT_VOX_OFFSET + 4 * i, 4);
        }
        let back = parse(&be).unwrap();
        assert_eq!(back.data(), &[0, 300]);
        assert_eq!(back.spacing(), [2.0, 1.0, 1.0]);
    }

    #[test]
    fn orientation_survives() {
        let mut vol = sample();
        let o = NiftiOrientation {
            qform_code: 1,
            sform_code: 2,
            qfac: -1.0,
            quatern: [0.0, 0.5, 0.0, 1.0, 2.0, 3.0],
            srow: [[1.0, 0.0, 0.0, 4.0], [0.0, 1.0, 0.0, 5.0], [0.0, 0.0, 1.0, 6.0]],
        };
        vol.set_orientation(Some(o));
        let back = parse(&encode(&vol)).unwrap();
        assert_eq!(back.orientation(), Some(&o));
    }
}
