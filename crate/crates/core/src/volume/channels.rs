use indexmap::IndexMap;

use super::{BinaryMask, LabelVolume, Result, VolumeError};

pub const NECROSIS: &str = "necrosis";
pub const EDEMA: &str = "edema";
pub const ENHANCING_TUMOR: &str = "enhancing_tumor";
pub const TUMOR_CORE: &str = "tumor_core";
pub const WHOLE_TUMOR: &str = "whole_tumor";

/// Integer labels of the three raw BraTS tissue classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BratsLegend {
    pub necrosis: i32,
    pub edema: i32,
    pub enhancing_tumor: i32,
}

impl Default for BratsLegend {
    /// The BraTS convention: 1 necrosis / non-enhancing core, 2 edema, 4 enhancing tumor.
    fn default() -> Self {
        BratsLegend {
            necrosis: 1,
            edema: 2,
            enhancing_tumor: 4,
        }
    }
}

impl BratsLegend {
    /// Read the legend from the volume's own label names, if they are all present.
    pub fn from_volume(vol: &LabelVolume) -> Option<Self> {
        Some(BratsLegend {
            necrosis: vol.label_of(NECROSIS)?,
            edema: vol.label_of(EDEMA)?,
            enhancing_tumor: vol.label_of(ENHANCING_TUMOR)?,
        })
    }

    pub fn legend_map(&self) -> std::collections::BTreeMap<i32, String> {
        [
            (self.necrosis, NECROSIS),
            (self.edema, EDEMA),
            (self.enhancing_tumor, ENHANCING_TUMOR),
        ]
        .into_iter()
        .map(|(v, n)| (v, n.to_string()))
        .collect()
    }
}

/// Named masks on a shared grid, in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChannelSet {
    channels: IndexMap<String, BinaryMask>,
}

impl ChannelSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, mask: BinaryMask) -> Result<()> {
        if let Some((_, first)) = self.channels.first() {
            if first.dims() != mask.dims() || first.spacing() != mask.spacing() {
                return Err(VolumeError::format(
                    "channels",
                    "all channel masks must share dims and spacing",
                ));
            }
        }
        self.channels.insert(name.into(), mask);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&BinaryMask> {
        self.channels.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.channels.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BinaryMask)> {
        self.channels.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }
}

/// Decompose a BraTS label volume into its raw classes plus tumor core and whole tumor.
///
/// A legend label that never occurs in the volume yields an empty mask and a warning.
pub fn brats_channels(vol: &LabelVolume, legend: &BratsLegend) -> ChannelSet {
    let mut raw = Vec::with_capacity(3);
    for (name, label) in [
        (NECROSIS, legend.necrosis),
        (EDEMA, legend.edema),
        (ENHANCING_TUMOR, legend.enhancing_tumor),
    ] {
        let mask = vol.mask_eq(label);
        if !mask.any() {
            log::warn!("label {label} ({name}) does not occur in the volume; channel is empty");
        }
        raw.push((name, mask));
    }
    let tumor_core = raw[0].1.union(&raw[2].1);
    let whole_tumor = tumor_core.union(&raw[1].1);

    let mut set = ChannelSet::new();
    for (name, mask) in raw {
        set.channels.insert(name.to_string(), mask);
    }
    set.channels.insert(TUMOR_CORE.to_string(), tumor_core);
    set.channels.insert(WHOLE_TUMOR.to_string(), whole_tumor);
    set
}
