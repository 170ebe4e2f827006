//! 2D PNG masks. Any nonzero pixel is foreground label 1; spacing comes from `<file>.png.txt`.

use std::collections::BTreeMap;
use std::path::Path;

use image::{GrayImage, Luma};

use super::{sidecar_path, LabelVolume, Result, Sidecar, VolumeError};

pub(super) fn read(path: &Path) -> Result<LabelVolume> {
    let sidecar = Sidecar::read(&sidecar_path(path))?;
    let spacing = sidecar.spacing()?;
    let img = image::open(path).map_err(|e| VolumeError::Image(format!("{}: {e}", path.display())))?;
    let rgba = img.into_rgba16();
    let (w, h) = rgba.dimensions();
    let dims = [w as usize, h as usize, 1];
    if let Some(declared) = sidecar.get("dims") {
        let declared = sidecar.dims().map_err(|_| VolumeError::format("dims", declared.to_string()))?;
        if declared != dims {
            return Err(VolumeError::format(
                "dims",
                format!("sidecar declares {declared:?} but image is {dims:?}"),
            ));
        }
    }
    let data = rgba
        .pixels()
        .map(|p| i32::from(p.0[..3].iter().any(|c| *c != 0)))
        .collect();
    let mut legend = BTreeMap::new();
    legend.insert(1, "foreground".to_string());
    LabelVolume::new(dims, spacing, data, legend)
}

pub(super) fn write(volume: &LabelVolume, path: &Path) -> Result<()> {
    let [w, h, d] = volume.dims();
    if d != 1 {
        return Err(VolumeError::format("dims", "png_mask stores 2D volumes only (nz must be 1)"));
    }
    if volume.data().iter().any(|v| *v != 0 && *v != 1) {
        return Err(VolumeError::Type("png_mask stores binary labels {0, 1} only".into()));
    }
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        let v = volume.data()[x as usize + w * y as usize];
        Luma([if v != 0 { 255 } else { 0 }])
    });
    img.save(path)
        .map_err(|e| VolumeError::Image(format!("{}: {e}", path.display())))?;
    let mut sidecar = Sidecar::default();
    sidecar.set_geometry(volume.dims(), volume.spacing());
    sidecar.write(&sidecar_path(path))
}
