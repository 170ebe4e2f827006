use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{Result, VolumeError};

/// Line-oriented `key=value` descriptor stored next to raw_grid and PNG payloads.
///
/// Blank lines and lines starting with `#` are ignored. Keys are unique.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sidecar {
    entries: BTreeMap<String, String>,
}

impl Sidecar {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                VolumeError::format(format!("line {}", lineno + 1), "expected key=value")
            })?;
            let key = key.trim().to_string();
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(VolumeError::format(key, "duplicate key"));
            }
        }
        Ok(Sidecar { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| VolumeError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(|e| VolumeError::io(path, e))
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| VolumeError::format(key, "missing from sidecar"))
    }

    pub fn dims(&self) -> Result<[usize; 3]> {
        let raw = self.require("dims")?;
        let parts = split_triplet(raw, "dims")?;
        let mut dims = [0usize; 3];
        for (d, p) in dims.iter_mut().zip(parts) {
            *d = p
                .parse()
                .map_err(|_| VolumeError::format("dims", format!("'{p}' is not a positive integer")))?;
            if *d == 0 {
                return Err(VolumeError::format("dims", "dimensions must be positive"));
            }
        }
        Ok(dims)
    }

    pub fn spacing(&self) -> Result<[f64; 3]> {
        let raw = self.require("spacing")?;
        let parts = split_triplet(raw, "spacing")?;
        let mut spacing = [0f64; 3];
        for (s, p) in spacing.iter_mut().zip(parts) {
            *s = p
                .parse()
                .map_err(|_| VolumeError::format("spacing", format!("'{p}' is not a number")))?;
        }
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(VolumeError::NonPositiveSpacing(spacing));
        }
        Ok(spacing)
    }

    /// Label legend as `value:name` pairs separated by `;`.
    pub fn labels(&self) -> Result<Option<BTreeMap<i32, String>>> {
        let Some(raw) = self.get("labels") else {
            return Ok(None);
        };
        let mut legend = BTreeMap::new();
        for item in raw.split(';').map(str::trim).filter(|s| !s.is_empty()) {
            let (v, name) = item
                .split_once(':')
                .ok_or_else(|| VolumeError::format("labels", format!("'{item}' is not value:name")))?;
            let v: i32 = v
                .trim()
                .parse()
                .map_err(|_| VolumeError::format("labels", format!("'{v}' is not an integer")))?;
            legend.insert(v, name.trim().to_string());
        }
        Ok(Some(legend))
    }

    pub fn set_geometry(&mut self, dims: [usize; 3], spacing: [f64; 3]) {
        self.set("dims", format!("{},{},{}", dims[0], dims[1], dims[2]));
        self.set("spacing", format!("{},{},{}", spacing[0], spacing[1], spacing[2]));
    }

    pub fn set_labels(&mut self, legend: &BTreeMap<i32, String>) {
        let joined = legend
            .iter()
            .map(|(v, n)| format!("{v}:{n}"))
            .collect::<Vec<_>>()
            .join(";");
        self.set("labels", joined);
    }
}

fn split_triplet<'a>(raw: &'a str, field: &str) -> Result<Vec<&'a str>> {
    let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(VolumeError::format(field, format!("expected 3 values, got '{raw}'")));
    }
    Ok(parts)
}
