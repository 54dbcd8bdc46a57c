//! Strict parsing of physical quantities written with SI unit suffixes.
//!
//! Config values such as `"-0.306 nV"`, `"1 ms"`, `"1 MHz"` or `"1 nV/s"` are
//! converted to base SI units. A bare number, an unknown prefix or a unit of
//! the wrong dimension is an error.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Voltage,
    Time,
    Frequency,
    VoltageRate,
}

impl Dimension {
    fn base(self) -> &'static str {
        match self {
            Dimension::Voltage => "V",
            Dimension::Time => "s",
            Dimension::Frequency => "Hz",
            Dimension::VoltageRate => "V/s",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.base())
    }
}

/// SI prefixes as powers of ten.
const PREFIXES: [(&str, i32); 9] = [
    ("p", -12),
    ("n", -9),
    ("u", -6),
    ("µ", -6),
    ("m", -3),
    ("", 0),
    ("k", 3),
    ("M", 6),
    ("G", 9),
];

/// Parses `"<number> <prefix><unit>"` into base units of `dim`.
pub fn parse_quantity(text: &str, dim: Dimension) -> Result<f64, String> {
    let text = text.trim();
    let split = text
        .find(|c: char| c.is_whitespace())
        .ok_or_else(|| format!("{text:?} has no unit; expected a value in {dim}"))?;
    let (number, unit) = (&text[..split], text[split..].trim());
    let not_a_number = || format!("{number:?} is not a number in {text:?}");
    let prefix = unit
        .strip_suffix(dim.base())
        .ok_or_else(|| format!("unit {unit:?} in {text:?} is not a {dim} unit"))?;
    let shift = PREFIXES
        .iter()
        .find(|(p, _)| *p == prefix)
        .map(|&(_, e)| e)
        .ok_or_else(|| format!("unknown prefix {prefix:?} in {text:?}"))?;
    // Fold the prefix into the decimal exponent so "-0.306 nV" rounds once,
    // to the same double as "-0.306e-9".
    let (mantissa, exponent) = match number.split_once(['e', 'E']) {
        Some((m, e)) => (m, e.parse::<i32>().map_err(|_| not_a_number())?),
        None => (number, 0),
    };
    mantissa.parse::<f64>().map_err(|_| not_a_number())?;
    let value: f64 = format!("{mantissa}e{}", exponent + shift)
        .parse()
        .map_err(|_| not_a_number())?;
    if !value.is_finite() {
        return Err(format!("{text:?} is not finite"));
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepted() {
        assert_eq!(parse_quantity("3 V", Dimension::Voltage), Ok(3.0));
        assert_eq!(parse_quantity("-0.306 nV", Dimension::Voltage), Ok(-0.306e-9));
        assert_eq!(parse_quantity("180 uV", Dimension::Voltage), Ok(180e-6));
        assert_eq!(parse_quantity("1 ms", Dimension::Time), Ok(1e-3));
        assert_eq!(parse_quantity("2 s", Dimension::Time), Ok(2.0));
        assert_eq!(parse_quantity("1 MHz", Dimension::Frequency), Ok(1e6));
        assert_eq!(parse_quantity("1000 Hz", Dimension::Frequency), Ok(1000.0));
        assert_eq!(parse_quantity("1 nV/s", Dimension::VoltageRate), Ok(1e-9));
        assert_eq!(parse_quantity("  2.5e-3   mV ", Dimension::Voltage), Ok(2.5e-6));
    }

    #[test]
    fn rejected() {
        assert!(parse_quantity("3", Dimension::Voltage).is_err());
        assert!(parse_quantity("3V", Dimension::Voltage).is_err());
        assert!(parse_quantity("3 s", Dimension::Voltage).is_err());
        assert!(parse_quantity("3 xV", Dimension::Voltage).is_err());
        assert!(parse_quantity("1 nV", Dimension::VoltageRate).is_err());
        assert!(parse_quantity("abc V", Dimension::Voltage).is_err());
        assert!(parse_quantity("inf V", Dimension::Voltage).is_err());
    }
}
