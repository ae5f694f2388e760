//! Maximum perturbation bounds and local robustness checks for small
//! feed-forward networks, computed by MILP encoding and a built-in
//! branch-and-bound solver.

pub mod dataflow;
pub mod encoder;
pub mod error;
pub mod mip;
pub mod network;
pub mod oracle;
pub mod resilience;
pub mod solver;

pub use error::{Error, Result};

/// Serialize a real as a JSON number, or as `"inf"` / `"-inf"` / `"nan"`
/// when it has no JSON representation.
pub(crate) fn serialize_real<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(&format_sig(*v, 6))
    }
}

/// Format `v` with `sig` significant digits, dropping trailing zeros
/// (`%g` style). Infinities print as `inf` / `-inf`.
pub fn format_sig(v: f64, sig: usize) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sig = sig.max(1);
    let exp = v.abs().log10().floor() as i32;
    if exp < -5 || exp >= sig as i32 {
        let s = format!("{:.*e}", sig - 1, v);
        let (mant, e) = s.split_once('e').expect("exponent present");
        let mant = trim_zeros(mant);
        return format!("{mant}e{e}");
    }
    let decimals = (sig as i32 - 1 - exp).max(0) as usize;
    trim_zeros(&format!("{v:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::format_sig;

    #[test]
    fn significant_digits() {
        assert_eq!(format_sig(1.0, 6), "1");
        assert_eq!(format_sig(std::f64::consts::E, 6), "2.71828");
        assert_eq!(format_sig(-0.000123456789, 6), "-0.000123457");
        assert_eq!(format_sig(1234567.0, 6), "1.23457e6");
        assert_eq!(format_sig(f64::INFINITY, 6), "inf");
        assert_eq!(format_sig(0.0132, 6), "0.0132");
    }
}
