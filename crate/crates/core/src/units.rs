//! Frequency quantities with unit suffixes, as they appear in scenario files.

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};
use std::fmt;
use std::str::FromStr;

/// A frequency in Hz.
///
/// Deserializes from a bare number (Hz) or a string such as `"1.3 GHz"`,
/// `"116.88MHz"`, `"10 kHz"`. Serializes as a number in Hz.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Hertz(pub f64);

impl Hertz {
    pub fn hz(self) -> f64 {
        self.0
    }
}

impl FromStr for Hertz {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let split = s
            .find(|c: char| c.is_ascii_alphabetic() && c != 'e' && c != 'E')
            .unwrap_or(s.len());
        let (num, unit) = s.split_at(split);
        let value: f64 = num
            .trim()
            .parse()
            .map_err(|_| format!("invalid frequency value `{s}`"))?;
        let scale = match unit.trim() {
            "" | "Hz" => 1.0,
            "kHz" => 1e3,
            "MHz" => 1e6,
            "GHz" => 1e9,
            other => return Err(format!("unknown frequency unit `{other}` (expected Hz|kHz|MHz|GHz)")),
        };
        let hz = value * scale;
        if !hz.is_finite() {
            return Err(format!("frequency `{s}` is not finite"));
        }
        Ok(Hertz(hz))
    }
}

impl Serialize for Hertz {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.0)
    }
}

impl<'de> Deserialize<'de> for Hertz {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct HertzVisitor;

        impl Visitor<'_> for HertzVisitor {
            type Value = Hertz;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a frequency in Hz or a string with a Hz|kHz|MHz|GHz suffix")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Hertz, E> {
                Ok(Hertz(v))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Hertz, E> {
                Ok(Hertz(v as f64))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Hertz, E> {
                Ok(Hertz(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Hertz, E> {
                v.parse().map_err(E::custom)
            }
        }

        deserializer.deserialize_any(HertzVisitor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_suffixes() {
        assert_eq!("1.3 GHz".parse::<Hertz>().unwrap().hz(), 1.3e9);
        assert_eq!("116.88MHz".parse::<Hertz>().unwrap().hz(), 116.88e6);
        assert_eq!("10 kHz".parse::<Hertz>().unwrap().hz(), 1e4);
        assert_eq!("2.5e3".parse::<Hertz>().unwrap().hz(), 2500.0);
        assert_eq!("1e9 Hz".parse::<Hertz>().unwrap().hz(), 1e9);
        assert!("1 THz".parse::<Hertz>().is_err());
        assert!("fast".parse::<Hertz>().is_err());
    }

    #[test]
    fn deserializes_number_or_string() {
        let a: Hertz = serde_json::from_str("1300000000").unwrap();
        let b: Hertz = serde_json::from_str("\"1.3 GHz\"").unwrap();
        assert_eq!(a, b);
    }
}
