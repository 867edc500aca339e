//! FACS labeling math: PSPI scores, pain categories and AU occurrence.
//!
//! Everything here is pure and allocation-light, so it can be called from
//! any thread.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// AU codes annotated per frame, plus AU1/AU2 used by the modeled set.
pub const RECOGNIZED_AUS: [u8; 11] = [1, 2, 4, 6, 7, 9, 10, 12, 25, 26, 43];

/// Constituents of the PSPI formula.
pub const PSPI_AUS: [u8; 6] = [4, 6, 7, 9, 10, 43];

pub const MAX_INTENSITY: u8 = 5;
pub const MAX_PSPI: u8 = 16;

/// Eye closure is binary on the PSPI scale.
pub const AU_EYES_CLOSED: u8 = 43;

pub fn is_recognized(code: u8) -> bool {
    RECOGNIZED_AUS.contains(&code)
}

/// Largest legal intensity for an AU code.
pub fn max_intensity(code: u8) -> u8 {
    if code == AU_EYES_CLOSED {
        1
    } else {
        MAX_INTENSITY
    }
}

/// AU code → FACS intensity. Keys are always recognized codes and values in range.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<u8, i64>", into = "BTreeMap<u8, i64>")]
pub struct AuIntensityMap(BTreeMap<u8, u8>);

impl AuIntensityMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<I: IntoIterator<Item = (u8, i64)>>(pairs: I) -> Result<Self> {
        let mut map = Self::new();
        for (code, value) in pairs {
            map.set(code, value)?;
        }
        Ok(map)
    }

    pub fn set(&mut self, code: u8, value: i64) -> Result<()> {
        if !is_recognized(code) {
            return Err(Error::UnknownAu(code as i64));
        }
        if value < 0 || value > max_intensity(code) as i64 {
            return Err(Error::InvalidIntensity { code, value });
        }
        self.0.insert(code, value as u8);
        Ok(())
    }

    pub fn get(&self, code: u8) -> Option<u8> {
        self.0.get(&code).copied()
    }

    fn require(&self, code: u8) -> Result<i64> {
        self.get(code).map(i64::from).ok_or(Error::MissingAu(code))
    }

    pub fn iter(&self) -> impl Iterator<Item = (u8, u8)> + '_ {
        self.0.iter().map(|(&k, &v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<BTreeMap<u8, i64>> for AuIntensityMap {
    type Error = Error;

    fn try_from(raw: BTreeMap<u8, i64>) -> Result<Self> {
        Self::from_pairs(raw)
    }
}

impl From<AuIntensityMap> for BTreeMap<u8, i64> {
    fn from(map: AuIntensityMap) -> Self {
        map.0.into_iter().map(|(k, v)| (k, v as i64)).collect()
    }
}

/// AU code → occurrence bit.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<u8, u8>", into = "BTreeMap<u8, u8>")]
pub struct AuOccurrenceMap(BTreeMap<u8, bool>);

impl AuOccurrenceMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, code: u8, active: bool) {
        self.0.insert(code, active);
    }

    pub fn get(&self, code: u8) -> Option<bool> {
        self.0.get(&code).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u8, bool)> + '_ {
        self.0.iter().map(|(&k, &v)| (k, v))
    }

    pub fn codes(&self) -> impl Iterator<Item = u8> + '_ {
        self.0.keys().copied()
    }

    pub fn any_active(&self) -> bool {
        self.0.values().any(|&b| b)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Keeps only the listed codes; codes missing from the map are inserted as inactive.
    pub fn restricted_to(&self, codes: &[u8]) -> Self {
        Self(
            codes
                .iter()
                .map(|&c| (c, self.get(c).unwrap_or(false)))
                .collect(),
        )
    }

    /// Reads the bits back as 0/1 intensities.
    pub fn as_intensities(&self) -> Result<AuIntensityMap> {
        AuIntensityMap::from_pairs(self.iter().map(|(c, b)| (c, b as i64)))
    }
}

impl TryFrom<BTreeMap<u8, u8>> for AuOccurrenceMap {
    type Error = Error;

    fn try_from(raw: BTreeMap<u8, u8>) -> Result<Self> {
        let mut out = Self::new();
        for (code, bit) in raw {
            if !is_recognized(code) {
                return Err(Error::UnknownAu(code as i64));
            }
            match bit {
                0 => out.set(code, false),
                1 => out.set(code, true),
                other => {
                    return Err(Error::InvalidIntensity {
                        code,
                        value: other as i64,
                    })
                }
            }
        }
        Ok(out)
    }
}

impl From<AuOccurrenceMap> for BTreeMap<u8, u8> {
    fn from(map: AuOccurrenceMap) -> Self {
        map.0.into_iter().map(|(k, v)| (k, v as u8)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub struct PspiScore(u8);

impl PspiScore {
    pub fn new(value: i64) -> Result<Self> {
        if (0..=MAX_PSPI as i64).contains(&value) {
            Ok(Self(value as u8))
        } else {
            Err(Error::InvalidPspi(value))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

impl TryFrom<i64> for PspiScore {
    type Error = Error;
    fn try_from(v: i64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<PspiScore> for i64 {
    fn from(p: PspiScore) -> i64 {
        p.0 as i64
    }
}

impl fmt::Display for PspiScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// PSPI = AU4 + max(AU6, AU7) + max(AU9, AU10) + AU43.
pub fn compute_pspi(aus: &AuIntensityMap) -> Result<PspiScore> {
    let brow = aus.require(4)?;
    let orbit = aus.require(6)?.max(aus.require(7)?);
    let levator = aus.require(9)?.max(aus.require(10)?);
    let eyes = aus.require(AU_EYES_CLOSED)?;
    PspiScore::new(brow + orbit + levator + eyes)
}

/// Three-level ordinal pain scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PainCategory3 {
    NoPain,
    Mild,
    Obvious,
}

/// Four-level scale used for comparison against fine-grained schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PainCategory4 {
    NoPain,
    Weak,
    Mild,
    Strong,
}

pub fn categorize_pain_3(p: PspiScore) -> PainCategory3 {
    match p.value() {
        0 => PainCategory3::NoPain,
        1..=4 => PainCategory3::Mild,
        _ => PainCategory3::Obvious,
    }
}

pub fn categorize_pain_4(p: PspiScore) -> PainCategory4 {
    match p.value() {
        0 => PainCategory4::NoPain,
        1 => PainCategory4::Weak,
        2 => PainCategory4::Mild,
        _ => PainCategory4::Strong,
    }
}

/// Checked variants for raw integers.
pub fn categorize_raw_3(p: i64) -> Result<PainCategory3> {
    PspiScore::new(p).map(categorize_pain_3)
}

pub fn categorize_raw_4(p: i64) -> Result<PainCategory4> {
    PspiScore::new(p).map(categorize_pain_4)
}

impl PainCategory3 {
    pub const ALL: [PainCategory3; 3] = [Self::NoPain, Self::Mild, Self::Obvious];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::NoPain => "No Pain",
            Self::Mild => "Mild",
            Self::Obvious => "Obvious",
        }
    }
}

impl PainCategory4 {
    pub const ALL: [PainCategory4; 4] = [Self::NoPain, Self::Weak, Self::Mild, Self::Strong];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::NoPain => "No Pain",
            Self::Weak => "Weak",
            Self::Mild => "Mild",
            Self::Strong => "Strong",
        }
    }
}

/// Which pain categorization a model, loss or report operates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Scheme {
    #[default]
    #[serde(rename = "3cat")]
    Three,
    #[serde(rename = "4cat")]
    Four,
}

impl Scheme {
    pub fn classes(self) -> usize {
        match self {
            Scheme::Three => 3,
            Scheme::Four => 4,
        }
    }

    pub fn class_names(self) -> Vec<&'static str> {
        match self {
            Scheme::Three => PainCategory3::ALL.iter().map(|c| c.name()).collect(),
            Scheme::Four => PainCategory4::ALL.iter().map(|c| c.name()).collect(),
        }
    }

    pub fn from_classes(n: usize) -> Result<Self> {
        match n {
            3 => Ok(Scheme::Three),
            4 => Ok(Scheme::Four),
            _ => Err(Error::InvalidConfig(format!(
                "d_pain must be 3 or 4, got {n}"
            ))),
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "3cat" | "3" => Ok(Scheme::Three),
            "4cat" | "4" => Ok(Scheme::Four),
            other => Err(Error::InvalidConfig(format!("unknown scheme {other:?}"))),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Three => "3cat",
            Scheme::Four => "4cat",
        })
    }
}

/// Caps every intensity at one.
pub fn to_occurrence(aus: &AuIntensityMap) -> AuOccurrenceMap {
    let mut out = AuOccurrenceMap::new();
    for (code, value) in aus.iter() {
        out.set(code, value >= 1);
    }
    out
}
