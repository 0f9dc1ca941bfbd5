//! Conversions into the internal unit convention: angular frequency in rad/s
//! and time in seconds.
//!
//! Spectral widths quoted in "GHz" denote angular frequency in units of
//! 1e9 rad/s (so a 600 GHz filter has `fwhm = 6e11` rad/s). Wavelengths in
//! nm convert through `omega = 2*pi*c/lambda`. A Gaussian pulse whose
//! temporal amplitude has width parameter `sigma_t` maps to the spectral
//! width parameter `sigma_omega = 1/sigma_t`.

use num_traits::Float;

pub const SPEED_OF_LIGHT_M_S: f64 = 299_792_458.0;

/// Angular frequency (rad/s) of light at a vacuum wavelength given in nm.
pub fn wavelength_nm_to_angular(nm: f64) -> f64 {
    2.0 * core::f64::consts::PI * SPEED_OF_LIGHT_M_S / (nm * 1e-9)
}

/// Spectral width parameter (rad/s) of a Gaussian pulse of temporal width
/// `sigma_t` picoseconds.
pub fn pulse_sigma_ps_to_angular(ps: f64) -> f64 {
    1e12 / ps
}

/// Angular-frequency GHz to rad/s.
pub fn ghz_to_angular(ghz: f64) -> f64 {
    ghz * 1e9
}

/// Power transmittance of a loss expressed in dB.
pub fn db_to_transmittance(db: f64) -> f64 {
    10f64.powf(-db / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wavelength_conversion_is_consistent() {
        let w532 = wavelength_nm_to_angular(532.0);
        let w1064 = wavelength_nm_to_angular(1064.0);
        assert!((w532 / w1064 - 2.0).abs() < 1e-12);
        assert!((w532 - 3.54079e15).abs() / 3.54079e15 < 1e-4);
    }

    #[test]
    fn five_ps_pulse_is_2e11_rad_s() {
        assert!((pulse_sigma_ps_to_angular(5.0) - 2.0e11).abs() < 1e-3);
    }

    #[test]
    fn db_conversion() {
        assert!((db_to_transmittance(3.0) - 0.501187).abs() < 1e-6);
        assert!((db_to_transmittance(0.0) - 1.0).abs() < 1e-15);
    }
}
