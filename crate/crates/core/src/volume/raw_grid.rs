//! `.rg` payloads: little-endian voxel values, geometry in `<file>.rg.txt`.

use std::path::Path;

use super::{sidecar_path, LabelVolume, Result, Sidecar, VolumeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dtype {
    U8,
    I8,
    U16,
    I16,
    U32,
    I32,
}

impl Dtype {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "u8" | "uint8" => Dtype::U8,
            "i8" | "int8" => Dtype::I8,
            "u16" | "uint16" => Dtype::U16,
            "i16" | "int16" => Dtype::I16,
            "u32" | "uint32" => Dtype::U32,
            "i32" | "int32" => Dtype::I32,
            "f32" | "f64" | "float32" | "float64" => {
                return Err(VolumeError::Type(format!(
                    "raw_grid dtype '{s}' is not an integer type"
                )))
            }
            other => return Err(VolumeError::format("dtype", format!("unknown dtype '{other}'"))),
        })
    }

    fn name(self) -> &'static str {
        match self {
            Dtype::U8 => "u8",
            Dtype::I8 => "i8",
            Dtype::U16 => "u16",
            Dtype::I16 => "i16",
            Dtype::U32 => "u32",
            Dtype::I32 => "i32",
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::U8 | Dtype::I8 => 1,
            Dtype::U16 | Dtype::I16 => 2,
            Dtype::U32 | Dtype::I32 => 4,
        }
    }

    fn decode(self, bytes: &[u8]) -> Result<i32> {
        Ok(match self {
            Dtype::U8 => i32::from(bytes[0]),
            Dtype::I8 => i32::from(bytes[0] as i8),
            Dtype::U16 => i32::from(u16::from_le_bytes([bytes[0], bytes[1]])),
            Dtype::I16 => i32::from(i16::from_le_bytes([bytes[0], bytes[1]])),
            Dtype::U32 => {
                let v = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
                i32::try_from(v).map_err(|_| VolumeError::Type(format!("label {v} exceeds i32")))?
            }
            Dtype::I32 => i32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]),
        })
    }
}

pub(super) fn read(path: &Path) -> Result<LabelVolume> {
    let sidecar = Sidecar::read(&sidecar_path(path))?;
    let dims = sidecar.dims()?;
    let spacing = sidecar.spacing()?;
    let dtype = Dtype::parse(sidecar.require("dtype")?)?;
    let bytes = std::fs::read(path).map_err(|e| VolumeError::io(path, e))?;
    let n: usize = dims.iter().product();
    if bytes.len() != n * dtype.width() {
        return Err(VolumeError::format(
            "payload",
            format!(
                "expected {} bytes for {:?} {}, found {}",
                n * dtype.width(),
                dims,
                dtype.name(),
                bytes.len()
            ),
        ));
    }
    let data = bytes
        .chunks_exact(dtype.width())
        .map(|c| dtype.decode(c))
        .collect::<Result<Vec<i32>>>()?;
    match sidecar.labels()? {
        Some(legend) => LabelVolume::new(dims, spacing, data, legend),
        None => LabelVolume::with_generated_legend(dims, spacing, data),
    }
}

fn narrowest(data: &[i32]) -> Dtype {
    let (lo, hi) = data
        .iter()
        .fold((0i32, 0i32), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    if lo >= 0 && hi <= i32::from(u8::MAX) {
        Dtype::U8
    } else if lo >= i32::from(i16::MIN) && hi <= i32::from(i16::MAX) {
        Dtype::I16
    } else {
        Dtype::I32
    }
}

pub(super) fn write(volume: &LabelVolume, path: &Path) -> Result<()> {
    let dtype = narrowest(volume.data());
    let mut bytes = Vec::with_capacity(volume.len() * dtype.width());
    for v in volume.data() {
        match dtype {
            Dtype::U8 => bytes.push(*v as u8),
            Dtype::I16 => bytes.extend_from_slice(&(*v as i16).to_le_bytes()),
            _ => bytes.extend_from_slice(&v.to_le_bytes()),
        }
    }
    std::fs::write(path, bytes).map_err(|e| VolumeError::io(path, e))?;
    let mut sidecar = Sidecar::default();
    sidecar.set_geometry(volume.dims(), volume.spacing());
    sidecar.set("dtype", dtype.name());
    sidecar.set_labels(volume.legend());
    sidecar.write(&sidecar_path(path))
}
