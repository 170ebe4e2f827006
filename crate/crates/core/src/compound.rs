//! Compound losses `L = Σ_i α_i Σ_j w_ij · loss_ij` over named channels, the
//! named presets, weight derivation from mixed-model fits, and the plain-text
//! spec file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::losses::{evaluate_loss, LossError, LossId, LossSpec, SoftPrediction};
use crate::stats::{LmmFit, INTERCEPT};
use crate::volume::BinaryMask;

pub const FORMAT_HEADER: &str = "segrate-compound-spec version=1";

#[derive(Debug, Error, PartialEq)]
pub enum CompoundError {
    #[error("compound spec has no channels")]
    NoChannels,
    #[error("channel '{0}' has no components")]
    EmptyChannel(String),
    #[error("channel '{0}' appears twice")]
    DuplicateChannel(String),
    #[error("channel '{channel}': alpha must be finite and >= 0, got {alpha}")]
    NegativeAlpha { channel: String, alpha: f64 },
    #[error("channel '{channel}': weight of {loss} must be finite, got {weight}")]
    InvalidWeight { channel: String, loss: String, weight: f64 },
    #[error("no input for channel '{0}'")]
    MissingChannel(String),
    #[error("coefficient '{0}' has no loss mapped to it")]
    UnmappedCoefficient(String),
    #[error("mixed model did not converge")]
    NotConverged,
    #[error("unknown preset '{0}'")]
    UnknownPreset(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("channel '{channel}': {source}")]
    Loss { channel: String, source: LossError },
    #[error(transparent)]
    Spec(#[from] LossError),
}

pub type Result<T> = std::result::Result<T, CompoundError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub loss: LossSpec,
    pub weight: f64,
}

impl Component {
    pub fn new(loss: LossSpec, weight: f64) -> Self {
        Component { loss, weight }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompoundChannel {
    pub name: String,
    pub alpha: f64,
    pub components: Vec<Component>,
    /// Free-text pointer to the fit the weights came from.
    pub provenance: Option<String>,
}

impl CompoundChannel {
    pub fn new(name: impl Into<String>, alpha: f64, components: Vec<Component>) -> Self {
        CompoundChannel {
            name: name.into(),
            alpha,
            components,
            provenance: None,
        }
    }
}

/// Validated compound loss. Construct with [`build_compound`].
#[derive(Debug, Clone, PartialEq)]
pub struct CompoundLossSpec {
    channels: Vec<CompoundChannel>,
}

pub fn build_compound(channels: Vec<CompoundChannel>) -> Result<CompoundLossSpec> {
    if channels.is_empty() {
        return Err(CompoundError::NoChannels);
    }
    let mut seen = BTreeSet::new();
    for ch in &channels {
        if !seen.insert(ch.name.as_str()) {
            return Err(CompoundError::DuplicateChannel(ch.name.clone()));
        }
        if !(ch.alpha.is_finite() && ch.alpha >= 0.0) {
            return Err(CompoundError::NegativeAlpha {
                channel: ch.name.clone(),
                alpha: ch.alpha,
            });
        }
        if ch.components.is_empty() {
            return Err(CompoundError::EmptyChannel(ch.name.clone()));
        }
        for c in &ch.components {
            c.loss.validate().map_err(|source| CompoundError::Loss {
                channel: ch.name.clone(),
                source,
            })?;
            if !c.weight.is_finite() {
                return Err(CompoundError::InvalidWeight {
                    channel: ch.name.clone(),
                    loss: c.loss.label(),
                    weight: c.weight,
                });
            }
        }
    }
    Ok(CompoundLossSpec { channels })
}

impl CompoundLossSpec {
    pub fn channels(&self) -> &[CompoundChannel] {
        &self.channels
    }

    pub fn channel(&self, name: &str) -> Option<&CompoundChannel> {
        self.channels.iter().find(|c| c.name == name)
    }

    pub fn into_channels(self) -> Vec<CompoundChannel> {
        self.channels
    }
}

/// Prediction and reference for one named channel.
#[derive(Debug, Clone, Copy)]
pub struct ChannelInput<'a> {
    pub name: &'a str,
    pub pred: &'a SoftPrediction,
    pub reference: &'a BinaryMask,
}

/// `loss_ij` for every channel and component of `spec`, in spec order.
pub fn component_values(spec: &CompoundLossSpec, inputs: &[ChannelInput<'_>]) -> Result<Vec<Vec<f64>>> {
    let resolved: Vec<(&CompoundChannel, &ChannelInput)> = spec
        .channels
        .iter()
        .map(|ch| {
            inputs
                .iter()
                .find(|i| i.name == ch.name)
                .map(|i| (ch, i))
                .ok_or_else(|| CompoundError::MissingChannel(ch.name.clone()))
        })
        .collect::<Result<_>>()?;
    resolved
        .par_iter()
        .map(|(ch, input)| {
            ch.components
                .iter()
                .map(|c| {
                    evaluate_loss(&c.loss, input.pred, input.reference).map_err(|source| CompoundError::Loss {
                        channel: ch.name.clone(),
                        source,
                    })
                })
                .collect()
        })
        .collect()
}

/// The weighted double sum over precomputed component values.
pub fn combine(spec: &CompoundLossSpec, values: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (ch, vals) in spec.channels.iter().zip(values) {
        let mut inner = 0.0;
        for (c, v) in ch.components.iter().zip(vals) {
            inner += c.weight * v;
        }
        total += ch.alpha * inner;
    }
    total
}

pub fn evaluate_compound(spec: &CompoundLossSpec, inputs: &[ChannelInput<'_>]) -> Result<f64> {
    Ok(combine(spec, &component_values(spec, inputs)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightScale {
    /// Coefficients as fitted.
    #[default]
    Raw,
    /// Coefficients divided by the sum of their absolute values.
    UnitL1,
}

impl FromStr for WeightScale {
    type Err = CompoundError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(WeightScale::Raw),
            "unit-l1" => Ok(WeightScale::UnitL1),
            other => Err(CompoundError::Parse {
                line: 0,
                message: format!("unknown weight scale '{other}'"),
            }),
        }
    }
}

/// Fixed-effect coefficients of `fit` as component weights, intercept excluded,
/// in the fit's column order.
pub fn derive_weights_from_lmm(
    fit: &LmmFit,
    components: &BTreeMap<String, LossSpec>,
    scale: WeightScale,
) -> Result<Vec<Component>> {
    if !fit.converged {
        return Err(CompoundError::NotConverged);
    }
    let mut out = Vec::new();
    for (name, beta) in fit.columns.iter().zip(&fit.beta) {
        if name == INTERCEPT {
            continue;
        }
        let loss = components
            .get(name)
            .ok_or_else(|| CompoundError::UnmappedCoefficient(name.clone()))?;
        out.push(Component::new(loss.clone(), *beta));
    }
    if scale == WeightScale::UnitL1 {
        let total: f64 = out.iter().map(|c| c.weight.abs()).sum();
        if total > 0.0 {
            for c in &mut out {
                c.weight /= total;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    GdiceBce,
    GdiceSsBce,
    ChannelWise,
    ChannelWiseWeighted,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::GdiceBce, Preset::GdiceSsBce, Preset::ChannelWise, Preset::ChannelWiseWeighted];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::GdiceBce => "gdice_bce",
            Preset::GdiceSsBce => "gdice_ss_bce",
            Preset::ChannelWise => "channel_wise",
            Preset::ChannelWiseWeighted => "channel_wise_weighted",
        }
    }

    /// Channel α weights for WT, TC, ET.
    pub fn alphas(self) -> [f64; 3] {
        match self {
            Preset::ChannelWiseWeighted => [1.0, 5.0, 5.0],
            _ => [1.0, 1.0, 1.0],
        }
    }

    pub fn spec(self) -> CompoundLossSpec {
        let c = |id: LossId, w: f64| Component::new(LossSpec::new(id), w);
        let shared = match self {
            Preset::GdiceBce => Some(vec![c(LossId::Bce, 0.4624), c(LossId::GDiceW, 0.7462)]),
            Preset::GdiceSsBce => Some(vec![
                c(LossId::Bce, 0.3267),
                c(LossId::GDiceW, 0.4570),
                c(LossId::SensitivitySpecificity, 18.2016),
            ]),
            _ => None,
        };
        let per_channel = |name: &str| match (&shared, name) {
            (Some(list), _) => list.clone(),
            (None, "WT") => vec![
                c(LossId::GDiceW, 1.5876),
                c(LossId::SensitivitySpecificity, 4.0027),
                c(LossId::Bce, 0.3039),
            ],
            // The published BCE coefficient for these channels is garbled; 1.0 stands in.
            (None, _) => vec![c(LossId::GDiceW, 0.77646), c(LossId::Bce, 1.0)],
        };
        let channels = ["WT", "TC", "ET"]
            .iter()
            .zip(self.alphas())
            .map(|(name, alpha)| CompoundChannel::new(*name, alpha, per_channel(name)))
            .collect();
        build_compound(channels).expect("presets are valid")
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = CompoundError;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| CompoundError::UnknownPreset(s.to_string()))
    }
}

/// Component block being parsed: loss id, params, weight, starting line.
type PendingComponent = (Option<LossId>, Option<Vec<(String, f64)>>, Option<f64>, usize);

impl CompoundLossSpec {
    /// Versioned text form. Each `[channel]` block is followed by its
    /// `[component]` blocks; every parameter is written explicitly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(FORMAT_HEADER);
        out.push('\n');
        for ch in &self.channels {
            out.push_str(&format!("\n[channel]\nname = {}\nalpha = {}\n", ch.name, ch.alpha));
            if let Some(p) = &ch.provenance {
                out.push_str(&format!("provenance = {p}\n"));
            }
            for c in &ch.components {
                let params: Vec<String> = c.loss.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
                out.push_str(&format!(
                    "\n[component]\nloss_id = {}\nparams = {}\nweight = {}\n",
                    c.loss.id,
                    params.join(","),
                    c.weight
                ));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        enum Block {
            None,
            Channel,
            Component,
        }
        let perr = |line: usize, message: String| CompoundError::Parse { line, message };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some((_, l)) if l == FORMAT_HEADER => {}
            Some((n, l)) => return Err(perr(n, format!("expected '{FORMAT_HEADER}', found '{l}'"))),
            None => return Err(perr(0, "empty spec file".into())),
        }
        let mut channels: Vec<CompoundChannel> = Vec::new();
        let mut block = Block::None;
        // Pending component fields: loss id, params, weight, starting line.
        let mut pending: Option<PendingComponent> = None;

        fn flush(
            channels: &mut [CompoundChannel],
            pending: &mut Option<PendingComponent>,
        ) -> Result<()> {
            let Some((id, params, weight, line)) = pending.take() else {
                return Ok(());
            };
            let perr = |message: &str| CompoundError::Parse { line, message: message.to_string() };
            let id = id.ok_or_else(|| perr("component without loss_id"))?;
            let weight = weight.ok_or_else(|| perr("component without weight"))?;
            let mut loss = LossSpec::new(id);
            for (k, v) in params.unwrap_or_default() {
                loss = loss.with(&k, v).map_err(|e| perr(&e.to_string()))?;
            }
            let ch = channels.last_mut().ok_or_else(|| perr("component before any channel"))?;
            ch.components.push(Component::new(loss, weight));
            Ok(())
        }

        for (n, line) in lines {
            match line {
                "[channel]" => {
                    flush(&mut channels, &mut pending)?;
                    channels.push(CompoundChannel::new(String::new(), f64::NAN, Vec::new()));
                    block = Block::Channel;
                    continue;
                }
                "[component]" => {
                    flush(&mut channels, &mut pending)?;
                    if channels.is_empty() {
                        return Err(perr(n, "component before any channel".into()));
                    }
                    pending = Some((None, None, None, n));
                    block = Block::Component;
                    continue;
                }
                _ => {}
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| perr(n, format!("expected 'key = value', found '{line}'")))?;
            let number = |v: &str| v.parse::<f64>().map_err(|_| perr(n, format!("'{v}' is not a number")));
            match (&block, key) {
                (Block::Channel, "name") => channels.last_mut().unwrap().name = value.to_string(),
                (Block::Channel, "alpha") => channels.last_mut().unwrap().alpha = number(value)?,
                (Block::Channel, "provenance") => channels.last_mut().unwrap().provenance = Some(value.to_string()),
                (Block::Component, "loss_id") => {
                    let id = value.parse::<LossId>().map_err(|e| perr(n, e.to_string()))?;
                    pending.as_mut().unwrap().0 = Some(id);
                }
                (Block::Component, "params") => {
                    let mut params = Vec::new();
                    for kv in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                        let (k, v) = kv
                            .split_once('=')
                            .ok_or_else(|| perr(n, format!("malformed parameter '{kv}'")))?;
                        params.push((k.trim().to_string(), number(v.trim())?));
                    }
                    pending.as_mut().unwrap().1 = Some(params);
                }
                (Block::Component, "weight") => pending.as_mut().unwrap().2 = Some(number(value)?),
                _ => return Err(perr(n, format!("unexpected key '{key}'"))),
            }
        }
        flush(&mut channels, &mut pending)?;
        for ch in &channels {
            if ch.name.is_empty() {
                return Err(perr(0, "channel without name".into()));
            }
            if ch.alpha.is_nan() {
                return Err(perr(0, format!("channel '{}' without alpha", ch.name)));
            }
        }
        build_compound(channels)
    }
}
