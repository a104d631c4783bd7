//! Object scooping: the object balances when the scoop point is within a
//! small band around its center of mass, otherwise it tips toward the
//! heavier, unsupported side.

/// Half-width of the balanced band in normalized units. A scoop at
/// |x_scoop - x_com| <= BALANCE_BAND yields label 0 (inclusive).
pub const BALANCE_BAND: f64 = 0.05;

/// Ternary tilt label: -1 tilted left, +1 tilted right, 0 balanced.
pub fn tilt_label(x_com: f64, x_scoop: f64) -> f64 {
    let d = x_com - x_scoop;
    if d.abs() <= BALANCE_BAND {
        0.0
    } else if d > 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Non-monotonic observation: distance between scoop point and center of
/// mass.
pub fn scoop_distance(x_com: f64, x_scoop: f64) -> f64 {
    (x_com - x_scoop).abs()
}
