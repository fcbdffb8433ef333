use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::C64;

/// A real eigenvalue or a conjugate pair (stored with positive imaginary part).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Factor {
    Real(f64),
    Pair(C64),
}

impl Factor {
    pub fn degree(&self) -> usize {
        match self {
            Factor::Real(_) => 1,
            Factor::Pair(_) => 2,
        }
    }
}

/// A multiset of complex numbers closed under conjugation.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSpec {
    factors: Vec<Factor>,
    values: Vec<C64>,
}

fn is_real(z: C64) -> bool {
    z.im.abs() <= 1e-12 * z.norm().max(1.0)
}

impl SpectrumSpec {
    /// Groups `values` into reals and conjugate pairs, in order of first
    /// appearance. Fails if some complex value has no conjugate partner.
    pub fn new(values: Vec<C64>) -> Result<Self> {
        if let Some(z) = values.iter().find(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::invalid(format!("spectrum value {z} is not finite")));
        }
        let mut used = vec![false; values.len()];
        let mut factors = Vec::new();
        for i in 0..values.len() {
            if used[i] {
                continue;
            }
            used[i] = true;
            let z = values[i];
            if is_real(z) {
                factors.push(Factor::Real(z.re));
                continue;
            }
            let tol = 1e-12 * z.norm().max(1.0);
            let partner = (i + 1..values.len()).find(|&k| !used[k] && (values[k] - z.conj()).norm() <= tol);
            let Some(k) = partner else {
                return Err(Error::invalid(format!(
                    "spectrum must be a symmetric set (closed under complex conjugation); {} has no conjugate partner",
                    format_complex(z)
                )));
            };
            used[k] = true;
            let mean = (z + values[k].conj()) / 2.0;
            factors.push(Factor::Pair(if mean.im > 0.0 { mean } else { mean.conj() }));
        }
        Ok(Self::from_factors(factors))
    }

    pub fn from_factors(factors: Vec<Factor>) -> Self {
        let mut values = Vec::new();
        for f in &factors {
            match *f {
                Factor::Real(x) => values.push(C64::new(x, 0.0)),
                Factor::Pair(z) => {
                    values.push(z);
                    values.push(z.conj());
                }
            }
        }
        Self { factors, values }
    }

    /// Parses a comma-separated list such as `-1,-2+0.5i,-2-0.5i,3i`.
    pub fn parse(s: &str) -> Result<Self> {
        let values = s
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(parse_complex)
            .collect::<Result<Vec<_>>>()?;
        Self::new(values)
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Splits into two symmetric sets, the first of size `k`, keeping factor
    /// order where possible.
    pub fn split(&self, k: usize) -> Result<(SpectrumSpec, SpectrumSpec)> {
        let mut first = Vec::new();
        let mut second = Vec::new();
        let mut filled = 0;
        for f in &self.factors {
            if filled + f.degree() <= k {
                filled += f.degree();
                first.push(*f);
            } else {
                second.push(*f);
            }
        }
        if filled != k {
            return Err(Error::invalid(format!(
                "cannot split the spectrum into symmetric sets of sizes {k} and {}; include a real value",
                self.len() - k
            )));
        }
        Ok((Self::from_factors(first), Self::from_factors(second)))
    }

    pub fn max_real_part(&self) -> f64 {
        self.values.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_modulus(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

impl fmt::Display for SpectrumSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.values.iter().map(|z| format_complex(*z)).collect();
        f.write_str(&parts.join(","))
    }
}

pub fn format_complex(z: C64) -> String {
    if z.im == 0.0 {
        format!("{}", z.re)
    } else if z.im > 0.0 {
        format!("{}+{}i", z.re, z.im)
    } else {
        format!("{}-{}i", z.re, -z.im)
    }
}

/// Parses `a`, `bi`, `a+bi` or `a-bi`.
pub fn parse_complex(tok: &str) -> Result<C64> {
    let bad = || Error::invalid(format!("cannot parse spectrum value '{tok}' (expected a, bi, a+bi or a-bi)"));
    let t: String = tok.chars().filter(|c| !c.is_whitespace()).collect();
    if t.is_empty() {
        return Err(bad());
    }
    let Some(body) = t.strip_suffix('i') else {
        return t.parse::<f64>().map(|x| C64::new(x, 0.0)).map_err(|_| bad());
    };
    // Find the sign that separates real and imaginary parts, skipping a
    // leading sign and exponent signs.
    let bytes = body.as_bytes();
    let mut split = None;
    for k in (1..bytes.len()).rev() {
        if (bytes[k] == b'+' || bytes[k] == b'-') && !matches!(bytes[k - 1], b'e' | b'E') {
            split = Some(k);
            break;
        }
    }
    let parse_im = |s: &str| -> Result<f64> {
        match s {
            "" | "+" => Ok(1.0),
            "-" => Ok(-1.0),
            _ => s.parse::<f64>().map_err(|_| bad()),
        }
    };
    match split {
        Some(k) => {
            let re = body[..k].parse::<f64>().map_err(|_| bad())?;
            Ok(C64::new(re, parse_im(&body[k..])?))
        }
        None => Ok(C64::new(0.0, parse_im(body)?)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_mixed_list() {
        let s = SpectrumSpec::parse("-1, -2+0.5i, -2-0.5i, 3i, -3i, 1e-3").unwrap();
        assert_eq!(s.len(), 6);
        assert_eq!(s.factors().len(), 4);
        assert_eq!(parse_complex("-1.5e-2-4i").unwrap(), C64::new(-0.015, -4.0));
        assert_eq!(parse_complex("-i").unwrap(), C64::new(0.0, -1.0));
    }

    #[test]
    fn unpaired_complex_is_rejected() {
        let err = SpectrumSpec::parse("-1,-2+1i").unwrap_err();
        assert!(err.to_string().contains("symmetric"), "{err}");
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(SpectrumSpec::parse("-1,abc").is_err());
    }

    #[test]
    fn split_respects_pairs() {
        let s = SpectrumSpec::parse("-1+1i,-1-1i,-2,-3+1i,-3-1i,-4").unwrap();
        let (a, b) = s.split(3).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(b.len(), 3);
        let pairs_only = SpectrumSpec::parse("-1+1i,-1-1i,-2+1i,-2-1i").unwrap();
        assert!(pairs_only.split(1).is_err());
    }

    #[test]
    fn display_round_trips() {
        let s = SpectrumSpec::parse("-1,-2+0.5i,-2-0.5i").unwrap();
        assert_eq!(SpectrumSpec::parse(&s.to_string()).unwrap(), s);
    }
}
