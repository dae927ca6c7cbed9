//! Locale-independent float formatting for CSV output.

/// Scientific notation with 17 significant digits, which round-trips every `f64`.
pub fn float17(x: f64) -> String {
    format!("{x:.16e}")
}
