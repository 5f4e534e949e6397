//! Exact textual rendering of `f64` values as C99-style hexadecimal floats
//! (`0x1.8p+1` == 3.0). Used wherever parameters are persisted so that a
//! save/load/save cycle is byte-identical on every platform.

use crate::error::{Error, Result};

const MANTISSA_BITS: u32 = 52;
const EXP_BIAS: i64 = 1023;

/// Formats a finite value as a hex float; NaN and infinities render as
/// `nan`, `inf`, `-inf`.
pub fn format(value: f64) -> String {
    if value.is_nan() {
        return "nan".into();
    }
    if value.is_infinite() {
        return if value > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let bits = value.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let biased = ((bits >> MANTISSA_BITS) & 0x7ff) as i64;
    let mantissa = bits & ((1u64 << MANTISSA_BITS) - 1);
    if biased == 0 && mantissa == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, exp) = if biased == 0 {
        (0, 1 - EXP_BIAS)
    } else {
        (1, biased - EXP_BIAS)
    };
    let mut frac = format!("{mantissa:013x}");
    while frac.ends_with('0') {
        frac.pop();
    }
    let exp_sign = if exp < 0 { '-' } else { '+' };
    if frac.is_empty() {
        format!("{sign}0x{lead}p{exp_sign}{}", exp.abs())
    } else {
        format!("{sign}0x{lead}.{frac}p{exp_sign}{}", exp.abs())
    }
}

/// Parses the output of [`format`]. Only canonical renderings (leading digit
/// 0 or 1, at most 13 fraction digits) are accepted.
pub fn parse(text: &str) -> Result<f64> {
    let bad = || Error::Checkpoint(format!("malformed hex float `{text}`"));
    match text {
        "nan" => return Ok(f64::NAN),
        "inf" => return Ok(f64::INFINITY),
        "-inf" => return Ok(f64::NEG_INFINITY),
        _ => {}
    }
    let (negative, rest) = match text.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, text),
    };
    let rest = rest.strip_prefix("0x").ok_or_else(bad)?;
    let (mant_txt, exp_txt) = rest.split_once('p').ok_or_else(bad)?;
    let exp: i64 = exp_txt.parse().map_err(|_| bad())?;
    let (lead_txt, frac_txt) = match mant_txt.split_once('.') {
        Some((l, f)) => (l, f),
        None => (mant_txt, ""),
    };
    if frac_txt.len() > 13 || (frac_txt.is_empty() && mant_txt.contains('.')) {
        return Err(bad());
    }
    let frac = if frac_txt.is_empty() {
        0
    } else {
        u64::from_str_radix(frac_txt, 16).map_err(|_| bad())? << (4 * (13 - frac_txt.len()))
    };
    let sign_bit = if negative { 1u64 << 63 } else { 0 };
    let bits = match lead_txt {
        "0" => {
            if frac == 0 {
                if exp != 0 {
                    return Err(bad());
                }
                0
            } else if exp == 1 - EXP_BIAS {
                frac
            } else {
                return Err(bad());
            }
        }
        "1" => {
            let biased = exp + EXP_BIAS;
            if !(1..=2046).contains(&biased) {
                return Err(bad());
            }
            ((biased as u64) << MANTISSA_BITS) | frac
        }
        _ => return Err(bad()),
    };
    Ok(f64::from_bits(sign_bit | bits))
}

pub(crate) mod serde_vec {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(values: &[f64], ser: S) -> Result<S::Ok, S::Error> {
        ser.collect_seq(values.iter().map(|v| super::format(*v)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Vec<f64>, D::Error> {
        let raw: Vec<String> = Vec::deserialize(de)?;
        raw.iter()
            .map(|s| super::parse(s).map_err(D::Error::custom))
            .collect()
    }
}

pub(crate) mod serde_opt {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &Option<f64>, ser: S) -> Result<S::Ok, S::Error> {
        match value {
            Some(v) => ser.serialize_some(&super::format(*v)),
            None => ser.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Option<f64>, D::Error> {
        let raw: Option<String> = Option::deserialize(de)?;
        raw.map(|s| super::parse(&s).map_err(D::Error::custom))
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_renderings() {
        assert_eq!(format(1.0), "0x1p+0");
        assert_eq!(format(3.0), "0x1.8p+1");
        assert_eq!(format(-0.0), "-0x0p+0");
        assert_eq!(format(0.1), "0x1.999999999999ap-4");
        assert_eq!(format(f64::MIN_POSITIVE / 2.0), "0x0.8p-1022");
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse("1.5").is_err());
        assert!(parse("0x2p+0").is_err());
        assert!(parse("0x1.p+0").is_err());
    }

    proptest! {
        #[test]
        fn bit_exact_round_trip(bits in any::<u64>()) {
            let v = f64::from_bits(bits);
            prop_assume!(v.is_finite());
            let back = parse(&format(v)).unwrap();
            prop_assert_eq!(back.to_bits(), bits);
        }
    }
}
