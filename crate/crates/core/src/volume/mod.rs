//! Label volumes, binary masks and the file formats they are read from.
//!
//! Voxels are stored x-fastest: the linear index of `(x, y, z)` is
//! `x + nx * (y + ny * z)`, the same ordering NIfTI uses on disk.

mod channels;
mod nifti;
mod png_mask;
mod raw_grid;
mod sidecar;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use channels::{
    brats_channels, BratsLegend, ChannelSet, EDEMA, ENHANCING_TUMOR, NECROSIS, TUMOR_CORE, WHOLE_TUMOR,
};
pub use nifti::NiftiOrientation;
pub use sidecar::Sidecar;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error in {field}: {message}")]
    Format { field: String, message: String },
    #[error("type error: {0}")]
    Type(String),
    #[error("spacing must be positive (got {0:?})")]
    NonPositiveSpacing([f64; 3]),
    #[error("dims {dims:?} describe {expected} voxels but data has {actual}")]
    Length {
        dims: [usize; 3],
        expected: usize,
        actual: usize,
    },
    #[error("voxel value {0} is neither background nor present in the label legend")]
    UnknownLabel(i32),
    #[error("no foreground")]
    NoForeground,
    #[error("image error: {0}")]
    Image(String),
}

impl VolumeError {
    pub(crate) fn format(field: impl Into<String>, message: impl Into<String>) -> Self {
        VolumeError::Format {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        VolumeError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, VolumeError>;

/// On-disk formats understood by [`load_label_volume`] and [`save_label_volume`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeFormat {
    Nifti1,
    RawGrid,
    PngMask,
}

impl VolumeFormat {
    /// Guess the format from a file extension (`.nii`, `.rg`, `.png`).
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "nii" => Some(VolumeFormat::Nifti1),
            "rg" => Some(VolumeFormat::RawGrid),
            "png" => Some(VolumeFormat::PngMask),
            _ => None,
        }
    }
}

/// Anatomical view used to pick a 2D slice out of a volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Axis {
    /// Slices of constant z.
    Axial,
    /// Slices of constant y.
    Coronal,
    /// Slices of constant x.
    Sagittal,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::Sagittal => 0,
            Axis::Coronal => 1,
            Axis::Axial => 2,
        }
    }

    pub const ALL: [Axis; 3] = [Axis::Axial, Axis::Coronal, Axis::Sagittal];
}

fn validate_geometry(dims: [usize; 3], spacing: [f64; 3], len: usize) -> Result<()> {
    if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(VolumeError::NonPositiveSpacing(spacing));
    }
    let expected = dims.iter().product::<usize>();
    if dims.contains(&0) || expected != len {
        return Err(VolumeError::Length {
            dims,
            expected,
            actual: len,
        });
    }
    Ok(())
}

/// Integer label grid with physical voxel spacing in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    dims: [usize; 3],
    spacing: [f64; 3],
    data: Vec<i32>,
    legend: BTreeMap<i32, String>,
    orientation: Option<NiftiOrientation>,
}

impl LabelVolume {
    /// Build a volume, checking geometry and that every nonzero label is in the legend.
    pub fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        data: Vec<i32>,
        legend: BTreeMap<i32, String>,
    ) -> Result<Self> {
        validate_geometry(dims, spacing, data.len())?;
        if let Some(v) = data
            .iter()
            .copied()
            .find(|v| *v != 0 && !legend.contains_key(v))
        {
            return Err(VolumeError::UnknownLabel(v));
        }
        Ok(LabelVolume {
            dims,
            spacing,
            data,
            legend,
            orientation: None,
        })
    }

    /// Build a volume whose legend names every distinct nonzero value `label_<v>`.
    pub fn with_generated_legend(dims: [usize; 3], spacing: [f64; 3], data: Vec<i32>) -> Result<Self> {
        let legend = data
            .iter()
            .filter(|v| **v != 0)
            .map(|v| (*v, format!("label_{v}")))
            .collect();
        Self::new(dims, spacing, data, legend)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn legend(&self) -> &BTreeMap<i32, String> {
        &self.legend
    }

    pub fn orientation(&self) -> Option<&NiftiOrientation> {
        self.orientation.as_ref()
    }

    pub fn set_orientation(&mut self, orientation: Option<NiftiOrientation>) {
        self.orientation = orientation;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn label_of(&self, name: &str) -> Option<i32> {
        self.legend
            .iter()
            .find(|(_, n)| n.as_str() == name)
            .map(|(v, _)| *v)
    }

    /// Mask of voxels carrying `label`.
    pub fn mask_eq(&self, label: i32) -> BinaryMask {
        BinaryMask {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(|v| *v == label).collect(),
        }
    }

    /// Mask of all nonzero voxels.
    pub fn foreground(&self) -> BinaryMask {
        BinaryMask {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(|v| *v != 0).collect(),
        }
    }
}

/// Boolean voxel grid sharing geometry with the volume it was derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    dims: [usize; 3],
    spacing: [f64; 3],
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], data: Vec<bool>) -> Result<Self> {
        validate_geometry(dims, spacing, data.len())?;
        Ok(BinaryMask {
            dims,
            spacing,
            data,
        })
    }

    pub fn empty(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        Self::new(dims, spacing, vec![false; dims.iter().product()])
    }

    /// Build from `(x, y, z)` coordinates of the foreground voxels.
    pub fn from_points(dims: [usize; 3], spacing: [f64; 3], points: &[[usize; 3]]) -> Result<Self> {
        let mut mask = Self::empty(dims, spacing)?;
        for p in points {
            if p.iter().zip(dims.iter()).any(|(c, d)| c >= d) {
                return Err(VolumeError::format("point", format!("{p:?} outside {dims:?}")));
            }
            let idx = mask.index(*p);
            mask.data[idx] = true;
        }
        Ok(mask)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }

    pub fn any(&self) -> bool {
        self.data.iter().any(|v| *v)
    }

    pub fn index(&self, p: [usize; 3]) -> usize {
        p[0] + self.dims[0] * (p[1] + self.dims[1] * p[2])
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let x = idx % self.dims[0];
        let rest = idx / self.dims[0];
        [x, rest % self.dims[1], rest / self.dims[1]]
    }

    pub fn get(&self, p: [usize; 3]) -> bool {
        self.data[self.index(p)]
    }

    /// Coordinates of all foreground voxels in storage order.
    pub fn points(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, v)| **v)
            .map(|(i, _)| self.coords(i))
    }

    pub fn with_spacing(&self, spacing: [f64; 3]) -> Result<Self> {
        Self::new(self.dims, spacing, self.data.clone())
    }

    pub fn same_grid(&self, other: &BinaryMask) -> bool {
        self.dims == other.dims
    }

    pub fn union(&self, other: &BinaryMask) -> BinaryMask {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &BinaryMask) -> BinaryMask {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(|v| !v).collect(),
        }
    }

    /// True when every foreground voxel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.data.iter().zip(&other.data).all(|(a, b)| !a || *b)
    }

    fn zip_with(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> BinaryMask {
        assert_eq!(self.dims, other.dims, "mask grids differ");
        BinaryMask {
            dims: self.dims,
            spacing: self.spacing,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        }
    }

    /// Label volume with value 1 on the foreground.
    pub fn to_label_volume(&self) -> LabelVolume {
        let mut legend = BTreeMap::new();
        legend.insert(1, "foreground".to_string());
        LabelVolume {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(|v| i32::from(*v)).collect(),
            legend,
            orientation: None,
        }
    }
}

/// Read a label volume. Label values are returned untouched.
pub fn load_label_volume(path: &Path, format: VolumeFormat) -> Result<LabelVolume> {
    match format {
        VolumeFormat::Nifti1 => nifti::read(path),
        VolumeFormat::RawGrid => raw_grid::read(path),
        VolumeFormat::PngMask => png_mask::read(path),
    }
}

/// Write a label volume; sidecars are written next to raw_grid and png_mask payloads.
pub fn save_label_volume(volume: &LabelVolume, path: &Path, format: VolumeFormat) -> Result<()> {
    match format {
        VolumeFormat::Nifti1 => nifti::write(volume, path),
        VolumeFormat::RawGrid => raw_grid::write(volume, path),
        VolumeFormat::PngMask => png_mask::write(volume, path),
    }
}

/// Floor of the mean foreground coordinate along `axis`.
pub fn center_of_mass_slice(mask: &BinaryMask, axis: Axis) -> Result<usize> {
    let a = axis.index();
    let (sum, count) = mask
        .points()
        .fold((0u128, 0u128), |(s, c), p| (s + p[a] as u128, c + 1));
    if count == 0 {
        return Err(VolumeError::NoForeground);
    }
    Ok((sum / count) as usize)
}

pub(crate) fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".txt");
    PathBuf::from(s)
}
