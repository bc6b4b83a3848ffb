//! Integer channel arithmetic on the ITU 100-GHz DWDM grid.
//!
//! Every energy-conservation check in the crate works on channel indices.
//! Because the grid is uniform, `f_s + f_i = f_p1 + f_p2` holds exactly when
//! the index sums agree, so floating-point frequencies are only produced for
//! reporting.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Channel spacing of the grid in GHz.
pub const SPACING_GHZ: i64 = 100;

/// Frequency of channel 0 in THz (`Cn <-> 190.0 + 0.1 n` THz).
pub const DEFAULT_ANCHOR_THZ: f64 = 190.0;

/// An ITU channel number, e.g. `Channel(40)` is "C40".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Channel(pub i32);

impl Channel {
    pub const fn new(index: i32) -> Self {
        Channel(index)
    }

    pub const fn index(self) -> i32 {
        self.0
    }

    /// Absolute channel distance.
    pub fn distance(self, other: Channel) -> i32 {
        (self.0 - other.0).abs()
    }
}

/// Sum of the two channel indices. Two pairs conserve energy against the
/// same pump pair iff their index sums are equal.
pub fn index_sum(a: Channel, b: Channel) -> i32 {
    a.0 + b.0
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C{}", self.0)
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let digits = t
            .strip_prefix('C')
            .or_else(|| t.strip_prefix('c'))
            .unwrap_or(t);
        digits
            .parse::<i32>()
            .map(Channel)
            .map_err(|_| Error::Parse(format!("invalid channel label {s:?}")))
    }
}

impl Serialize for Channel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Channel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(i64),
            Label(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Int(n) => i32::try_from(n)
                .map(Channel)
                .map_err(|_| serde::de::Error::custom(format!("channel index {n} out of range"))),
            Repr::Label(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Parse a comma separated channel list. Ranges like `C30-C50` expand
/// inclusively.
pub fn parse_channel_list(s: &str) -> Result<Vec<Channel>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((lo, hi)) => {
                let lo: Channel = lo.parse()?;
                let hi: Channel = hi.parse()?;
                if lo > hi {
                    return Err(Error::Parse(format!("empty channel range {part:?}")));
                }
                out.extend((lo.0..=hi.0).map(Channel));
            }
            None => out.push(part.parse()?),
        }
    }
    Ok(out)
}

/// A contiguous block of the 100-GHz grid, `min_index..=max_index`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelGrid {
    pub min_index: i32,
    pub max_index: i32,
    #[serde(default = "default_anchor")]
    pub anchor_thz: f64,
}

fn default_anchor() -> f64 {
    DEFAULT_ANCHOR_THZ
}

impl Default for ChannelGrid {
    /// C1..C72, the full C-band.
    fn default() -> Self {
        ChannelGrid {
            min_index: 1,
            max_index: 72,
            anchor_thz: DEFAULT_ANCHOR_THZ,
        }
    }
}

impl ChannelGrid {
    pub fn new(min_index: i32, max_index: i32) -> Result<Self> {
        Self::with_anchor(min_index, max_index, DEFAULT_ANCHOR_THZ)
    }

    pub fn with_anchor(min_index: i32, max_index: i32, anchor_thz: f64) -> Result<Self> {
        let grid = ChannelGrid {
            min_index,
            max_index,
            anchor_thz,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_index >= self.max_index {
            return Err(Error::InvalidGrid(format!(
                "min_index {} must be below max_index {}",
                self.min_index, self.max_index
            )));
        }
        if !self.anchor_thz.is_finite() {
            return Err(Error::InvalidGrid("anchor frequency is not finite".into()));
        }
        Ok(())
    }

    pub fn contains(&self, c: Channel) -> bool {
        (self.min_index..=self.max_index).contains(&c.0)
    }

    pub fn check(&self, c: Channel) -> Result<()> {
        if self.contains(c) {
            Ok(())
        } else {
            Err(Error::OutOfBounds {
                channel: c,
                min: self.min_index,
                max: self.max_index,
            })
        }
    }

    pub fn len(&self) -> usize {
        (self.max_index - self.min_index + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn channels(&self) -> impl Iterator<Item = Channel> + Clone {
        (self.min_index..=self.max_index).map(Channel)
    }

    /// Frequency of `c` in THz. The index offset is computed in integer GHz
    /// and converted once, so e.g. C40 maps to exactly 194.0 THz.
    pub fn channel_frequency(&self, c: Channel) -> Result<f64> {
        self.check(c)?;
        let offset_ghz = i64::from(c.0) * SPACING_GHZ;
        Ok(self.anchor_thz + offset_ghz as f64 / 1000.0)
    }
}
