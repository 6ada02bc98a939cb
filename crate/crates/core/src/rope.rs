//! Rotary position embedding kernels and their context-extension variants.
//!
//! Every variant is expressed through the same triple: an effective position
//! map, an effective base frequency, and a logit scale. Frequencies are
//! `theta[j] = base_eff^(-2j/d)` for pair index `j`, optionally reshaped
//! per-dimension by the ramp function `gamma`.

use std::fmt;
use std::io::Write;

use thiserror::Error;

use crate::Real;

/// Which position-encoding variant to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RopeMethod {
    Rope,
    Pi,
    NtkAware,
    NtkByParts,
    Yarn,
    Abf,
    EntropyAwareAbf,
}

impl RopeMethod {
    pub const ALL: [RopeMethod; 7] = [
        RopeMethod::Rope,
        RopeMethod::Pi,
        RopeMethod::NtkAware,
        RopeMethod::NtkByParts,
        RopeMethod::Yarn,
        RopeMethod::Abf,
        RopeMethod::EntropyAwareAbf,
    ];

    pub fn parse(name: &str) -> Option<RopeMethod> {
        match name.to_ascii_lowercase().as_str() {
            "rope" => Some(RopeMethod::Rope),
            "pi" => Some(RopeMethod::Pi),
            "ntk-aware" | "ntk_aware" | "ntkaware" => Some(RopeMethod::NtkAware),
            "ntk-by-parts" | "ntk_by_parts" | "ntkbyparts" => Some(RopeMethod::NtkByParts),
            "yarn" => Some(RopeMethod::Yarn),
            "abf" => Some(RopeMethod::Abf),
            "entropy-aware-abf" | "entropy_aware_abf" | "entropyawareabf" => {
                Some(RopeMethod::EntropyAwareAbf)
            }
            _ => None,
        }
    }
}

impl fmt::Display for RopeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            RopeMethod::Rope => "rope",
            RopeMethod::Pi => "pi",
            RopeMethod::NtkAware => "ntk-aware",
            RopeMethod::NtkByParts => "ntk-by-parts",
            RopeMethod::Yarn => "yarn",
            RopeMethod::Abf => "abf",
            RopeMethod::EntropyAwareAbf => "entropy-aware-abf",
        };
        f.write_str(name)
    }
}

/// Two readings of the NTK formulas, which differ in the literature.
///
/// `PaperLiteral` follows the printed formulas: NTK-Aware raises the base to
/// `d/(d-2)` with no dependence on the context scaling factor, and the ramp
/// assigns the `1/s` interpolation to high frequencies. `YarnStyle` is the
/// community-standard form: base `b * s^(d/(d-2))` and the complementary ramp
/// orientation (high frequencies kept intact).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NtkConvention {
    #[default]
    PaperLiteral,
    YarnStyle,
}

impl NtkConvention {
    pub fn parse(name: &str) -> Option<NtkConvention> {
        match name.to_ascii_lowercase().as_str() {
            "paper-literal" | "paper_literal" | "paperliteral" => Some(NtkConvention::PaperLiteral),
            "yarn-style" | "yarn_style" | "yarnstyle" => Some(NtkConvention::YarnStyle),
            _ => None,
        }
    }
}

impl fmt::Display for NtkConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NtkConvention::PaperLiteral => f.write_str("paper-literal"),
            NtkConvention::YarnStyle => f.write_str("yarn-style"),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RopeError {
    #[error("head dimension must be even and >= 2, got {0}")]
    InvalidDimension(usize),
    #[error("base frequency must be positive, got {0}")]
    NonPositiveBase(f64),
    #[error("context windows must be positive (c={c}, c_target={c_target})")]
    InvalidContext { c: usize, c_target: usize },
    #[error("ramp boundaries require ntk_alpha < ntk_beta, got alpha={alpha}, beta={beta}")]
    InvalidRamp { alpha: f64, beta: f64 },
    #[error("pair index {j} out of range for d={d}")]
    PairIndexOutOfRange { j: usize, d: usize },
    #[error("input length {got} does not match head dimension {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("logit scale must be positive, got {0}")]
    NonPositiveScale(f64),
}

/// Full parameterization of a rotary encoding variant.
///
/// The context scaling factor `s = c_target / c` is always recomputed from
/// the two windows; it is never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct RopeConfig<T: Real> {
    pub method: RopeMethod,
    /// Head dimension; must be even and >= 2.
    pub d: usize,
    /// Base frequency, 10000 by default.
    pub b: T,
    /// Pretrained context window.
    pub c: usize,
    /// Target context window.
    pub c_target: usize,
    /// Ramp boundary below which a pair counts as low-frequency.
    pub ntk_alpha: T,
    /// Ramp boundary above which a pair counts as high-frequency.
    pub ntk_beta: T,
    pub ntk_convention: NtkConvention,
    /// Replacement base used by ABF and entropy-aware ABF.
    pub abf_base: T,
}

impl<T: Real> RopeConfig<T> {
    pub fn new(method: RopeMethod, d: usize, c: usize, c_target: usize) -> Self {
        RopeConfig {
            method,
            d,
            b: T::from_f64_lossy(10_000.0),
            c,
            c_target,
            ntk_alpha: T::one(),
            ntk_beta: T::from_f64_lossy(32.0),
            ntk_convention: NtkConvention::default(),
            abf_base: T::from_f64_lossy(500_000.0),
        }
    }

    pub fn validate(&self) -> Result<(), RopeError> {
        if self.d < 2 || self.d % 2 != 0 {
            return Err(RopeError::InvalidDimension(self.d));
        }
        if self.b <= T::zero() || self.abf_base <= T::zero() {
            return Err(RopeError::NonPositiveBase(
                self.b.min(self.abf_base).to_f64().unwrap_or(f64::NAN),
            ));
        }
        if self.c == 0 || self.c_target == 0 {
            return Err(RopeError::InvalidContext {
                c: self.c,
                c_target: self.c_target,
            });
        }
        if self.ntk_alpha >= self.ntk_beta {
            return Err(RopeError::InvalidRamp {
                alpha: self.ntk_alpha.to_f64().unwrap_or(f64::NAN),
                beta: self.ntk_beta.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(())
    }

    /// Context scaling factor `s = c_target / c`.
    pub fn scale(&self) -> T {
        T::from_usize_lossy(self.c_target) / T::from_usize_lossy(self.c)
    }

    /// Base frequency after the variant's base modification.
    pub fn effective_base(&self) -> T {
        let d = T::from_usize_lossy(self.d);
        match self.method {
            RopeMethod::Rope | RopeMethod::Pi | RopeMethod::NtkByParts | RopeMethod::Yarn => self.b,
            RopeMethod::Abf | RopeMethod::EntropyAwareAbf => self.abf_base,
            RopeMethod::NtkAware => {
                let exponent = d / (d - T::from_f64_lossy(2.0));
                match self.ntk_convention {
                    NtkConvention::YarnStyle => self.b * self.scale().powf(exponent),
                    NtkConvention::PaperLiteral => self.b.powf(exponent),
                }
            }
        }
    }

    /// The variant's own static logit scale `t` at a given query position.
    ///
    /// Only YaRN (`0.1 ln s + 1`) and entropy-aware ABF (`max(log_c(i), 1)`
    /// with `i = position + 1`) scale the logits; every other variant uses 1.
    pub fn method_logit_scale(&self, position: usize) -> T {
        match self.method {
            RopeMethod::Yarn => T::from_f64_lossy(0.1) * self.scale().ln() + T::one(),
            RopeMethod::EntropyAwareAbf => {
                let i = T::from_usize_lossy(position + 1);
                let t = i.ln() / T::from_usize_lossy(self.c).ln();
                t.max(T::one())
            }
            _ => T::one(),
        }
    }
}

/// Per-pair angular frequencies, strictly decreasing in the pair index.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencySpectrum<T: Real> {
    pub theta: Vec<T>,
}

/// Ramp value for pair index `j`.
///
/// `r(j) = c / lambda(j)` counts full rotations the pair completes inside the
/// pretrained window, with wavelength `lambda(j) = 2*pi*b^(2j/d)`. In the
/// paper-literal convention the ramp is 0 above `ntk_beta`, 1 below
/// `ntk_alpha`, and `(beta - r) / (beta - alpha)` in between; yarn-style is
/// the complement. The per-dimension frequency factor is then
/// `(1 - gamma)/s + gamma`.
pub fn gamma<T: Real>(j: usize, config: &RopeConfig<T>) -> Result<T, RopeError> {
    config.validate()?;
    if j >= config.d / 2 {
        return Err(RopeError::PairIndexOutOfRange { j, d: config.d });
    }
    let two = T::from_f64_lossy(2.0);
    let d = T::from_usize_lossy(config.d);
    let wavelength = two * T::from_f64_lossy(std::f64::consts::PI)
        * config.b.powf(two * T::from_usize_lossy(j) / d);
    let rotations = T::from_usize_lossy(config.c) / wavelength;
    let literal = if rotations > config.ntk_beta {
        T::zero()
    } else if rotations < config.ntk_alpha {
        T::one()
    } else {
        (config.ntk_beta - rotations) / (config.ntk_beta - config.ntk_alpha)
    };
    Ok(match config.ntk_convention {
        NtkConvention::PaperLiteral => literal,
        NtkConvention::YarnStyle => T::one() - literal,
    })
}

/// Per-pair frequency scale `(1 - gamma(j))/s + gamma(j)` used by
/// NTK-By-Parts and YaRN.
pub fn ramp_scale<T: Real>(j: usize, config: &RopeConfig<T>) -> Result<T, RopeError> {
    let g = gamma(j, config)?;
    Ok((T::one() - g) / config.scale() + g)
}

/// Per-pair frequencies for the configured variant.
pub fn compute_theta<T: Real>(config: &RopeConfig<T>) -> Result<FrequencySpectrum<T>, RopeError> {
    config.validate()?;
    let base = config.effective_base();
    let half = config.d / 2;
    let d = T::from_usize_lossy(config.d);
    let two = T::from_f64_lossy(2.0);
    let mut theta = Vec::with_capacity(half);
    for j in 0..half {
        let mut freq = base.powf(-(two * T::from_usize_lossy(j)) / d);
        if matches!(config.method, RopeMethod::NtkByParts | RopeMethod::Yarn) {
            freq = freq * ramp_scale(j, config)?;
        }
        theta.push(freq);
    }
    Ok(FrequencySpectrum { theta })
}

/// Effective position index: `m/s` for position interpolation, `m` otherwise.
pub fn effective_position<T: Real>(m: usize, config: &RopeConfig<T>) -> T {
    let pos = T::from_usize_lossy(m);
    match config.method {
        RopeMethod::Pi => pos / config.scale(),
        _ => pos,
    }
}

/// Rotate each element pair of `x` by its positional angle.
pub fn apply_rope<T: Real>(
    x: &[T],
    m: usize,
    config: &RopeConfig<T>,
    spectrum: &FrequencySpectrum<T>,
) -> Result<Vec<T>, RopeError> {
    if x.len() != config.d {
        return Err(RopeError::DimensionMismatch {
            got: x.len(),
            expected: config.d,
        });
    }
    let pos = effective_position(m, config);
    let mut out = Vec::with_capacity(x.len());
    for (j, &theta) in spectrum.theta.iter().enumerate() {
        let angle = pos * theta;
        let (sin, cos) = (angle.sin(), angle.cos());
        let (a, b) = (x[2 * j], x[2 * j + 1]);
        out.push(a * cos - b * sin);
        out.push(b * cos + a * sin);
    }
    Ok(out)
}

/// Trigonometric coefficient pair `(sqrt(t)*cos(m'*theta_j), sqrt(t)*sin(m'*theta_j))`.
///
/// The square root appears because the rotation is applied to both query and
/// key embeddings; the product of the two coefficients carries the full `t`.
pub fn coefficient_h<T: Real>(
    m: usize,
    j: usize,
    config: &RopeConfig<T>,
    spectrum: &FrequencySpectrum<T>,
    t: T,
) -> Result<(T, T), RopeError> {
    if t <= T::zero() {
        return Err(RopeError::NonPositiveScale(t.to_f64().unwrap_or(f64::NAN)));
    }
    if j >= config.d / 2 {
        return Err(RopeError::PairIndexOutOfRange { j, d: config.d });
    }
    let angle = effective_position(m, config) * spectrum.theta[j];
    let root = t.sqrt();
    Ok((root * angle.cos(), root * angle.sin()))
}

/// Write the coefficient table for `config` at the sampled positions.
///
/// Columns: `method,j,theta,position,cos_coeff,sin_coeff`, LF endings, full
/// precision. The logit scale is the variant's own (`method_logit_scale`).
pub fn write_coefficient_dump<T: Real, W: Write + ?Sized>(
    config: &RopeConfig<T>,
    positions: &[usize],
    out: &mut W,
) -> Result<(), std::io::Error> {
    let spectrum = compute_theta(config).map_err(std::io::Error::other)?;
    writeln!(out, "method,j,theta,position,cos_coeff,sin_coeff")?;
    for (j, &theta) in spectrum.theta.iter().enumerate() {
        for &pos in positions {
            let t = config.method_logit_scale(pos);
            let (cos_c, sin_c) = coefficient_h(pos, j, config, &spectrum, t)
                .map_err(std::io::Error::other)?;
            writeln!(
                out,
                "{},{},{},{},{},{}",
                config.method, j, theta, pos, cos_c, sin_c
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(method: RopeMethod, d: usize) -> RopeConfig<f64> {
        RopeConfig::new(method, d, 4096, 16384)
    }

    #[test]
    fn theta_plain_rope() {
        let spectrum = compute_theta(&cfg(RopeMethod::Rope, 128)).unwrap();
        assert_eq!(spectrum.theta[0], 1.0);
        let spectrum = compute_theta(&cfg(RopeMethod::Rope, 4)).unwrap();
        assert_eq!(spectrum.theta, vec![1.0, 0.01]);
    }

    #[test]
    fn theta_strictly_decreasing_for_pure_power_spectra() {
        // Ramped variants in the paper-literal orientation can locally invert
        // the ordering, because the ramp factor grows faster than the power
        // law decays; strict monotonicity is a fixed-base property.
        for method in [
            RopeMethod::Rope,
            RopeMethod::Pi,
            RopeMethod::NtkAware,
            RopeMethod::Abf,
            RopeMethod::EntropyAwareAbf,
        ] {
            let spectrum = compute_theta(&cfg(method, 128)).unwrap();
            for pair in spectrum.theta.windows(2) {
                assert!(pair[0] > pair[1], "{method}: {} !> {}", pair[0], pair[1]);
            }
        }
        for method in [RopeMethod::NtkByParts, RopeMethod::Yarn] {
            let mut config = cfg(method, 128);
            config.ntk_convention = NtkConvention::YarnStyle;
            let spectrum = compute_theta(&config).unwrap();
            for pair in spectrum.theta.windows(2) {
                assert!(pair[0] > pair[1], "{method}: {} !> {}", pair[0], pair[1]);
            }
        }
    }

    #[test]
    fn abf_base() {
        assert_eq!(cfg(RopeMethod::Abf, 128).effective_base(), 500_000.0);
        assert_eq!(
            cfg(RopeMethod::EntropyAwareAbf, 128).effective_base(),
            500_000.0
        );
    }

    #[test]
    fn ntk_aware_base_yarn_style() {
        let mut config = cfg(RopeMethod::NtkAware, 128);
        config.ntk_convention = NtkConvention::YarnStyle;
        // s = 4, base 10000 * 4^(128/126) ≈ 40889.9
        let expected = 10_000.0 * 4.0_f64.powf(128.0 / 126.0);
        assert!((config.effective_base() - expected).abs() < 1e-9);
        assert!((config.effective_base() - 40_889.94).abs() < 0.1);
    }

    #[test]
    fn ntk_aware_base_paper_literal() {
        let config = cfg(RopeMethod::NtkAware, 128);
        let expected = 10_000.0_f64.powf(128.0 / 126.0);
        assert!((config.effective_base() - expected).abs() < 1e-9);
    }

    #[test]
    fn gamma_extremes_paper_literal() {
        let mut config = cfg(RopeMethod::NtkByParts, 128);
        config.c = 4096;
        config.c_target = 16384;
        // j = 0: wavelength 2*pi, rotations = 4096 / (2*pi) ≈ 651 > beta
        assert_eq!(gamma(0, &config).unwrap(), 0.0);
        assert!((ramp_scale(0, &config).unwrap() - 0.25).abs() < 1e-15);
        // last pair: wavelength 2*pi*10000^(126/128) ≈ 36555, rotations ≈ 0.11 < alpha
        let last = config.d / 2 - 1;
        assert_eq!(gamma(last, &config).unwrap(), 1.0);
        assert_eq!(ramp_scale(last, &config).unwrap(), 1.0);
    }

    #[test]
    fn gamma_complement_in_yarn_style() {
        let mut paper = cfg(RopeMethod::NtkByParts, 128);
        let mut yarn = paper.clone();
        yarn.ntk_convention = NtkConvention::YarnStyle;
        paper.ntk_convention = NtkConvention::PaperLiteral;
        for j in 0..64 {
            let a = gamma(j, &paper).unwrap();
            let b = gamma(j, &yarn).unwrap();
            assert!((a + b - 1.0).abs() < 1e-15);
            assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn ramp_scale_bounded_by_interpolation_extremes() {
        let config = cfg(RopeMethod::NtkByParts, 128);
        let s = config.scale();
        for j in 0..64 {
            let f = ramp_scale(j, &config).unwrap();
            assert!(f >= (1.0 / s).min(1.0) - 1e-15);
            assert!(f <= (1.0 / s).max(1.0) + 1e-15);
        }
    }

    #[test]
    fn ramp_scale_is_one_at_unit_scale() {
        let mut config = cfg(RopeMethod::NtkByParts, 128);
        config.c_target = config.c;
        for j in 0..64 {
            assert_eq!(ramp_scale(j, &config).unwrap(), 1.0);
        }
    }

    #[test]
    fn effective_position_pi() {
        let config = cfg(RopeMethod::Pi, 128);
        assert_eq!(effective_position(4096, &config), 1024.0);
        assert_eq!(effective_position(0, &config), 0.0);
        assert_eq!(effective_position(4096, &cfg(RopeMethod::Rope, 128)), 4096.0);
    }

    #[test]
    fn apply_rope_identity_at_origin() {
        let config = cfg(RopeMethod::Rope, 8);
        let spectrum = compute_theta(&config).unwrap();
        let x = vec![0.3, -1.2, 0.7, 2.5, -0.1, 0.0, 1.0, -3.0];
        assert_eq!(apply_rope(&x, 0, &config, &spectrum).unwrap(), x);
    }

    #[test]
    fn apply_rope_unit_rotation() {
        let config = cfg(RopeMethod::Rope, 2);
        let spectrum = compute_theta(&config).unwrap();
        let out = apply_rope(&[1.0, 0.0], 1, &config, &spectrum).unwrap();
        assert!((out[0] - 1.0_f64.cos()).abs() < 1e-15);
        assert!((out[1] - 1.0_f64.sin()).abs() < 1e-15);
        assert!((out[0] - 0.54030).abs() < 1e-5);
        assert!((out[1] - 0.84147).abs() < 1e-5);
    }

    #[test]
    fn apply_rope_rejects_wrong_length() {
        let config = cfg(RopeMethod::Rope, 8);
        let spectrum = compute_theta(&config).unwrap();
        let err = apply_rope(&[1.0; 6], 0, &config, &spectrum).unwrap_err();
        assert_eq!(
            err,
            RopeError::DimensionMismatch {
                got: 6,
                expected: 8
            }
        );
    }

    #[test]
    fn coefficient_h_values() {
        let config = cfg(RopeMethod::Rope, 8);
        let spectrum = compute_theta(&config).unwrap();
        assert_eq!(
            coefficient_h(0, 0, &config, &spectrum, 1.0).unwrap(),
            (1.0, 0.0)
        );
        assert_eq!(
            coefficient_h(0, 0, &config, &spectrum, 4.0).unwrap(),
            (2.0, 0.0)
        );
        assert!(matches!(
            coefficient_h(0, 0, &config, &spectrum, 0.0),
            Err(RopeError::NonPositiveScale(_))
        ));
    }

    #[test]
    fn yarn_logit_scale() {
        let config = cfg(RopeMethod::Yarn, 128); // s = 4
        let t = config.method_logit_scale(0);
        assert!((t - (0.1 * 4.0_f64.ln() + 1.0)).abs() < 1e-15);
        assert!((t - 1.13863).abs() < 1e-5);
        assert!((t.sqrt() - 1.06707).abs() < 1e-5);
    }

    #[test]
    fn validation_rejects_bad_configs() {
        assert!(matches!(
            cfg(RopeMethod::Rope, 7).validate(),
            Err(RopeError::InvalidDimension(7))
        ));
        assert!(matches!(
            cfg(RopeMethod::Rope, 0).validate(),
            Err(RopeError::InvalidDimension(0))
        ));
        let mut config = cfg(RopeMethod::Rope, 8);
        config.b = -1.0;
        assert!(matches!(config.validate(), Err(RopeError::NonPositiveBase(_))));
        let mut config = cfg(RopeMethod::NtkByParts, 8);
        config.ntk_alpha = 40.0;
        assert!(matches!(config.validate(), Err(RopeError::InvalidRamp { .. })));
    }

    #[test]
    fn gamma_rejects_out_of_range_index() {
        let config = cfg(RopeMethod::NtkByParts, 8);
        assert!(matches!(
            gamma(4, &config),
            Err(RopeError::PairIndexOutOfRange { j: 4, d: 8 })
        ));
    }

    #[test]
    fn dump_contains_header_and_rows() {
        let config = cfg(RopeMethod::Rope, 8);
        let mut buf = Vec::new();
        write_coefficient_dump(&config, &[0, 5], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "method,j,theta,position,cos_coeff,sin_coeff");
        assert_eq!(lines.len(), 1 + 4 * 2);
        assert!(lines[1].starts_with("rope,0,1,0,1,0"));
    }
}
