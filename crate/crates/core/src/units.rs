//! dB conversions. Power ratios use 10 log10; the electronic attenuation
//! factor acts on photocurrent amplitude and uses 20 log10.

pub fn to_db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Attenuation in dB for an amplitude factor `g` (positive when g < 1).
pub fn attenuation_db(g: f64) -> f64 {
    20.0 * (1.0 / g).log10()
}

/// Same factor read as a power ratio.
pub fn attenuation_power_db(g: f64) -> f64 {
    10.0 * (1.0 / g).log10()
}

pub fn gain_from_attenuation_db(db: f64) -> f64 {
    10f64.powf(-db / 20.0)
}
