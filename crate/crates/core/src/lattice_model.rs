//! Non-interacting tight-binding model: Bloch matrix, band dispersion, phase
//! classification and Weyl points.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spinor::{Spinor2x2, C64};

/// Tolerance on `||mu - t'|/t_perp - 1|` under which the model is labelled critical.
pub const CRITICAL_TOLERANCE: f64 = 1e-12;

/// Upper limit on `|mu - t'|/t_perp` accepted by [`build_params`].
pub const GAP_WINDOW: f64 = 1.5;

/// Model couplings. `r` is derived from `mu` via `(mu - t')/t_perp = -1 + r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoppingParams {
    pub t: f64,
    pub t_perp: f64,
    pub t_prime: f64,
    pub mu: f64,
    pub u: f64,
    /// Decay rate of the two-body potential `v(x) = exp(-kappa |x|)`.
    pub kappa: f64,
}

/// Either the sublattice offset `mu` or the distance to criticality `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Offset {
    Mu(f64),
    R(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseLabel {
    Semimetal,
    Insulator,
    Critical,
}

impl PhaseLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            PhaseLabel::Semimetal => "semimetal",
            PhaseLabel::Insulator => "insulator",
            PhaseLabel::Critical => "critical",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeylPointData {
    /// Third momentum component of the Weyl points `(0, 0, ±p_F)`.
    pub p_f: f64,
    /// In-plane velocity, equal to `t`.
    pub v0: f64,
    /// Axial velocity `t_perp sin p_F`.
    pub v30: f64,
    /// Set at the critical point, where the two Weyl points merge at `k3 = 0`.
    pub degenerate: bool,
}

impl HoppingParams {
    /// Distance from the phase boundary, `(mu - t')/t_perp + 1`.
    pub fn r(&self) -> f64 {
        (self.mu - self.t_prime) / self.t_perp + 1.0
    }

    /// `|mu - t'| / t_perp`.
    pub fn gap_ratio(&self) -> f64 {
        (self.mu - self.t_prime).abs() / self.t_perp
    }

    pub fn with_u(mut self, u: f64) -> Self {
        self.u = u;
        self
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu = mu;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("t", self.t), ("t_perp", self.t_perp), ("t_prime", self.t_prime), ("kappa", self.kappa)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParams(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !self.mu.is_finite() || !self.u.is_finite() {
            return Err(Error::InvalidParams("mu and U must be finite".into()));
        }
        if self.mu + self.t_prime <= 2.0 * self.t_perp {
            return Err(Error::InvalidParams(format!(
                "mu + t' = {} must exceed 2 t_perp = {}",
                self.mu + self.t_prime,
                2.0 * self.t_perp
            )));
        }
        if self.gap_ratio() >= GAP_WINDOW {
            return Err(Error::InvalidParams(format!(
                "|mu - t'|/t_perp = {} outside the window < {GAP_WINDOW}",
                self.gap_ratio()
            )));
        }
        Ok(())
    }
}

/// Validated constructor. `offset` fixes either `mu` directly or `r`, with
/// `mu = t' + t_perp (r - 1)`. The interaction range defaults to `kappa = 1`.
pub fn build_params(t: f64, t_perp: f64, t_prime: f64, offset: Offset, u: f64) -> Result<HoppingParams> {
    let mu = match offset {
        Offset::Mu(mu) => mu,
        Offset::R(r) => t_prime + t_perp * (r - 1.0),
    };
    let p = HoppingParams { t, t_perp, t_prime, mu, u, kappa: 1.0 };
    p.validate()?;
    if p.r().abs() > 0.5 {
        log::warn!("r = {} lies outside |r| <= 1/2; accepted under the wider window", p.r());
    }
    Ok(p)
}

/// `k_± = (k1 ± k2)/2`.
#[inline]
pub fn k_plus_minus(k: [f64; 3]) -> (f64, f64) {
    (0.5 * (k[0] + k[1]), 0.5 * (k[0] - k[1]))
}

/// The σ₃ coefficient `mu + t_perp cos k3 - t'(cos k1 + cos k2)/2`.
#[inline]
pub fn mass_term(k: [f64; 3], p: &HoppingParams) -> f64 {
    p.mu + p.t_perp * k[2].cos() - 0.5 * p.t_prime * (k[0].cos() + k[1].cos())
}

/// Bloch vector `d(k)` with `E(k) = d · σ`.
#[inline]
pub fn bloch_vector(k: [f64; 3], p: &HoppingParams) -> [f64; 3] {
    let (kp, km) = k_plus_minus(k);
    [p.t * kp.sin(), p.t * km.sin(), mass_term(k, p)]
}

pub fn bloch_matrix(k: [f64; 3], p: &HoppingParams) -> Spinor2x2 {
    let d = bloch_vector(k, p);
    Spinor2x2::from_pauli(C64::new(0.0, 0.0), d[0].into(), d[1].into(), d[2].into())
}

/// Positive band energy `λ(k) = |d(k)|`.
pub fn dispersion(k: [f64; 3], p: &HoppingParams) -> f64 {
    let d = bloch_vector(k, p);
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

pub fn classify_phase(p: &HoppingParams) -> PhaseLabel {
    let ratio = p.gap_ratio();
    if (ratio - 1.0).abs() < CRITICAL_TOLERANCE {
        PhaseLabel::Critical
    } else if ratio < 1.0 {
        PhaseLabel::Semimetal
    } else {
        PhaseLabel::Insulator
    }
}

/// Weyl points `(0, 0, ±p_F)` with `cos p_F = (t' - mu)/t_perp`; `None` in the
/// insulating phase.
pub fn weyl_points(p: &HoppingParams) -> Option<WeylPointData> {
    match classify_phase(p) {
        PhaseLabel::Insulator => None,
        PhaseLabel::Critical => Some(WeylPointData { p_f: 0.0, v0: p.t, v30: 0.0, degenerate: true }),
        PhaseLabel::Semimetal => {
            let p_f = ((p.t_prime - p.mu) / p.t_perp).clamp(-1.0, 1.0).acos();
            Some(WeylPointData { p_f, v0: p.t, v30: p.t_perp * p_f.sin(), degenerate: false })
        }
    }
}

/// Spatial momentum grid `2π n / L`, `n = 0..L-1`.
pub fn spatial_momenta(l: usize) -> impl Iterator<Item = [f64; 3]> {
    let step = 2.0 * PI / l as f64;
    (0..l * l * l).map(move |idx| {
        let (n1, n2, n3) = (idx / (l * l), (idx / l) % l, idx % l);
        [step * n1 as f64, step * n2 as f64, step * n3 as f64]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p_star() -> HoppingParams {
        build_params(1.0, 0.5, 2.0, Offset::R(0.5), 0.0).unwrap()
    }

    #[test]
    fn build_params_examples() {
        assert!((p_star().mu - 1.75).abs() < 1e-15);
        let crit = build_params(1.0, 0.5, 2.0, Offset::R(0.0), 0.0).unwrap();
        assert!((crit.mu - 1.5).abs() < 1e-15);
        assert_eq!(classify_phase(&crit), PhaseLabel::Critical);
        // mu + t' = 1.5 < 2 t_perp = 2
        assert!(build_params(1.0, 1.0, 1.0, Offset::R(0.5), 0.0).is_err());
        // outside the |mu - t'|/t_perp < 3/2 window
        assert!(build_params(1.0, 0.5, 2.0, Offset::R(-0.6), 0.0).is_err());
        assert!(build_params(-1.0, 0.5, 2.0, Offset::R(0.5), 0.0).is_err());
    }

    #[test]
    fn bloch_matrix_examples() {
        let p = p_star();
        let m = bloch_matrix([0.0, 0.0, 0.0], &p);
        assert!((m - Spinor2x2::sigma3().scale_re(0.25)).max_abs() < 1e-14);
        let m = bloch_matrix([0.0, 0.0, PI], &p);
        assert!((m - Spinor2x2::sigma3().scale_re(-0.75)).max_abs() < 1e-14);
        let m = bloch_matrix([PI, PI, 0.4], &p);
        assert!(m.get(0, 1).norm() < 1e-15 && m.get(1, 0).norm() < 1e-15);
    }

    #[test]
    fn dispersion_examples() {
        let p = p_star();
        assert!(dispersion([0.0, 0.0, PI / 3.0], &p) < 1e-15);
        assert!((dispersion([0.0, 0.0, 0.0], &p) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn phases_and_weyl_points() {
        let p = p_star();
        assert_eq!(classify_phase(&p), PhaseLabel::Semimetal);
        let w = weyl_points(&p).unwrap();
        assert!((w.p_f - PI / 3.0).abs() < 1e-12);
        assert!((w.v30 - 0.5 * (PI / 3.0).sin()).abs() < 1e-12);
        assert!((w.v30 - 0.433013).abs() < 1e-6);

        let ins = build_params(1.0, 0.5, 2.0, Offset::R(-0.2), 0.0).unwrap();
        assert!((ins.mu - 1.4).abs() < 1e-14);
        assert_eq!(classify_phase(&ins), PhaseLabel::Insulator);
        assert!(weyl_points(&ins).is_none());

        let r1 = build_params(1.0, 0.5, 2.0, Offset::R(1.0), 0.0).unwrap();
        let w = weyl_points(&r1).unwrap();
        assert!((w.p_f - PI / 2.0).abs() < 1e-12);
        assert!((w.v30 - 0.5).abs() < 1e-12);

        let crit = build_params(1.0, 0.5, 2.0, Offset::R(0.0), 0.0).unwrap();
        assert!(weyl_points(&crit).unwrap().degenerate);
    }

    #[test]
    fn zeros_on_l64_grid_are_exactly_the_weyl_points() {
        // r = 1 puts p_F = π/2 on the L = 64 grid.
        let p = build_params(1.0, 0.5, 2.0, Offset::R(1.0), 0.0).unwrap();
        let zeros: Vec<[f64; 3]> = spatial_momenta(64).filter(|k| dispersion(*k, &p) < 1e-12).collect();
        assert_eq!(zeros.len(), 2);
        for k in zeros {
            assert!(k[0] == 0.0 && k[1] == 0.0);
            assert!((k[2] - PI / 2.0).abs() < 1e-12 || (k[2] - 3.0 * PI / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn phase_agrees_with_grid_minimum() {
        for (r, expect_gapless) in [(0.5, true), (1.0, true), (-0.2, false), (-0.4, false)] {
            let p = build_params(1.0, 0.5, 2.0, Offset::R(r), 0.0).unwrap();
            // dense line through the only candidate zeros (k1 = k2 = 0)
            let min = (0..4096)
                .map(|n| dispersion([0.0, 0.0, 2.0 * PI * n as f64 / 4096.0], &p))
                .chain(spatial_momenta(32).map(|k| dispersion(k, &p)))
                .fold(f64::INFINITY, f64::min);
            let gapless = min < 1e-2;
            assert_eq!(gapless, expect_gapless, "r = {r}");
            assert_eq!(classify_phase(&p) != PhaseLabel::Insulator, gapless);
        }
    }
}
