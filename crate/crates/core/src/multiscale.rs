//! Scale decomposition: cutoffs, the crossover scale, single-scale propagators
//! in both regimes and their position-space decay audits.
//!
//! Single-scale propagators are sampled on zoomed momentum boxes in the
//! infinite-volume limit. The box half-extents follow the support of `χ_h`:
//! `2ε` in `k0`, about `2ε/v` in `k±`, and in `k3` about `2 sqrt(ε/v3)`
//! (regime 1, around 0) or `2ε/v3` (regime 2, around `ω p_F`).

use std::f64::consts::PI;
use std::io::Write;

use rustfft::FftDirection;
use serde::{Deserialize, Serialize};

use crate::cutoff::smooth_cutoff;
use crate::error::{Error, Result};
use crate::fourier::fft_nd;
use crate::lattice_model::HoppingParams;
use crate::propagator::{energy_scale, planar_energy, Momentum4};
use crate::spinor::{Spinor2x2, C64};

/// Cutoff constants. `a0 = t_perp/10` sets regime-1 scales `a0 2^h`; regime-2
/// scales are `2^(h+1)/b0`, so `χ_{h*-1}` has argument `b0 2^-h* |det A|^(1/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec {
    pub a0: f64,
    pub b0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl CutoffSpec {
    /// `a0 = t_perp/10`, `b0 = max(1024, 400/t_perp²)`, `c1 = 1/2`, `c2 = 2`.
    ///
    /// The `b0` floor keeps the regime-2 support nested inside the last regime-1
    /// shell (`b0 ≥ 2/a0`) and disconnected at `k3 = 0` for every `r` (`b0 > 200/t_perp²`).
    pub fn for_params(p: &HoppingParams) -> Self {
        CutoffSpec { a0: p.t_perp / 10.0, b0: (400.0 / (p.t_perp * p.t_perp)).max(1024.0), c1: 0.5, c2: 2.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a0 > 0.0 && self.b0 > 0.0 && self.a0.is_finite() && self.b0.is_finite()) {
            return Err(Error::Configuration("a0 and b0 must be positive".into()));
        }
        if !(self.c1 > 0.0 && self.c1 < self.c2) {
            return Err(Error::Configuration("need 0 < c1 < c2".into()));
        }
        if self.b0 * self.a0 < 1.0 {
            return Err(Error::Configuration(format!(
                "b0 = {} below 1/a0: regime-2 support would not nest in the last regime-1 shell",
                self.b0
            )));
        }
        Ok(())
    }
}

/// Sentinel for `h* = -∞` at the critical point `r = 0`.
pub const H_STAR_NEG_INF: i32 = i32::MIN;

/// `h* = floor(min(log2(10 |r| / a0), 0))`.
pub fn crossover_scale(p: &HoppingParams, cutoff: &CutoffSpec) -> i32 {
    let r = p.r();
    if r == 0.0 {
        return H_STAR_NEG_INF;
    }
    let x = (10.0 * r.abs() / cutoff.a0).log2();
    // snap values within rounding of an integer so exact dyadic inputs floor correctly
    let snapped = if (x - x.round()).abs() < 1e-9 { x.round() } else { x };
    snapped.min(0.0).floor() as i32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// Quadratic `k3` dispersion, `h ≥ h*`.
    Lattice,
    /// Linear dispersion around `±p_F`, `h < h*`.
    Relativistic,
}

impl Regime {
    pub fn number(&self) -> u8 {
        match self {
            Regime::Lattice => 1,
            Regime::Relativistic => 2,
        }
    }
}

pub fn regime_of(h: i32, h_star: i32) -> Regime {
    if h >= h_star {
        Regime::Lattice
    } else {
        Regime::Relativistic
    }
}

/// Energy unit `ε_h` of `χ_h(k) = χ̄(|det A_h(k)|^(1/2) / ε_h)`.
pub fn cutoff_energy(h: i32, h_star: i32, cutoff: &CutoffSpec) -> f64 {
    match regime_of(h, h_star) {
        Regime::Lattice => cutoff.a0 * 2f64.powi(h),
        Regime::Relativistic => 2f64.powi(h + 1) / cutoff.b0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportValue {
    /// Cumulative support `χ_h`.
    pub chi: f64,
    /// Single-scale band `f_h = χ_h - χ_{h-1}`.
    pub band: f64,
}

pub fn cumulative_support(energy: f64, h: i32, h_star: i32, cutoff: &CutoffSpec) -> f64 {
    smooth_cutoff(energy / cutoff_energy(h, h_star, cutoff))
}

pub fn scale_support(energy: f64, h: i32, h_star: i32, cutoff: &CutoffSpec) -> SupportValue {
    let chi = cumulative_support(energy, h, h_star, cutoff);
    let lower = cumulative_support(energy, h - 1, h_star, cutoff);
    SupportValue { chi, band: chi - lower }
}

/// `cos p_F = 1 - r`.
fn cos_pf(p: &HoppingParams) -> f64 {
    1.0 - p.r()
}

/// Checks that `χ_{h*-1}` vanishes on the planes `k3 = 0` and `k3 = π`, which
/// separate the neighborhoods of `+p_F` and `-p_F`.
pub fn check_disconnection(p: &HoppingParams, h_star: i32, cutoff: &CutoffSpec) -> Result<()> {
    if h_star == H_STAR_NEG_INF {
        return Err(Error::Configuration("critical point: no regime-2 support".into()));
    }
    let reach = 2.0 * cutoff_energy(h_star - 1, h_star, cutoff);
    for k3 in [0.0, PI] {
        // on these planes the energy is minimal at k1 = k2 = k0 = 0
        let e = energy_scale(Momentum4::new(0.0, 0.0, 0.0, k3), p);
        if e <= reach {
            return Err(Error::Configuration(format!(
                "support of the last lattice-regime cutoff reaches k3 = {k3} (energy {e:.3e} ≤ {reach:.3e}); increase b0"
            )));
        }
    }
    Ok(())
}

fn wrap_angle(k: f64) -> f64 {
    let mut y = (k + PI).rem_euclid(2.0 * PI) - PI;
    if y == -PI {
        y = PI;
    }
    y
}

/// Splits `χ_{h*-1}(k)` into the two Weyl-point neighborhoods. Index 0 is
/// `ω = +1`, index 1 is `ω = -1`.
pub fn quasiparticle_split(kk: Momentum4, p: &HoppingParams, h_star: i32, cutoff: &CutoffSpec) -> Result<[f64; 2]> {
    check_disconnection(p, h_star, cutoff)?;
    let chi = cumulative_support(energy_scale(kk, p), h_star - 1, h_star, cutoff);
    let k3 = wrap_angle(kk.k[2]);
    if chi > 0.0 && (k3 == 0.0 || k3 == PI) {
        return Err(Error::Configuration(format!("momentum with k3 = {k3} inside the split support")));
    }
    Ok(if k3 > 0.0 && k3 < PI { [chi, 0.0] } else { [0.0, chi] })
}

/// Scale-dependent couplings entering the single-scale matrices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Couplings {
    pub z: f64,
    pub v: f64,
    /// Regime 1: coefficient of `cos k3 - 1`. Regime 2: slope at the Weyl point.
    pub v3: f64,
}

impl Couplings {
    /// Free values at the top scale: `Z = 1`, `v = t`, `v3 = t_perp`.
    pub fn lattice_initial(p: &HoppingParams) -> Self {
        Couplings { z: 1.0, v: p.t, v3: p.t_perp }
    }

    /// Free regime-2 values: `v3 = t_perp sin p_F`.
    pub fn relativistic_initial(p: &HoppingParams) -> Self {
        let c = cos_pf(p).clamp(-1.0, 1.0);
        Couplings { z: 1.0, v: p.t, v3: p.t_perp * (1.0 - c * c).sqrt() }
    }
}

/// `d·σ` part of the regime-1 matrix:
/// `v (sin k+ σ1 + sin k- σ2) + (v3 (cos k3 - 1 + r) + E(k̄)) σ3`.
pub fn lattice_vector(k: [f64; 3], c: &Couplings, p: &HoppingParams) -> [f64; 3] {
    let kp = 0.5 * (k[0] + k[1]);
    let km = 0.5 * (k[0] - k[1]);
    [c.v * kp.sin(), c.v * km.sin(), c.v3 * (k[2].cos() - 1.0 + p.r()) + planar_energy(k, p)]
}

/// `d·σ` part of the regime-2 matrix at `k3 = ω p_F + k3'`:
/// σ3 coefficient `-ω v3 sin k3' + E'(k)` with `E' = t_perp cos p_F (cos k3' - 1) + E(k̄)`.
/// `relativistic = true` drops `E'`.
pub fn weyl_vector(kprime: [f64; 3], omega: i8, c: &Couplings, p: &HoppingParams, relativistic: bool) -> [f64; 3] {
    let kp = 0.5 * (kprime[0] + kprime[1]);
    let km = 0.5 * (kprime[0] - kprime[1]);
    let mut d3 = -(omega as f64) * c.v3 * kprime[2].sin();
    if !relativistic {
        d3 += p.t_perp * cos_pf(p) * (kprime[2].cos() - 1.0) + planar_energy(kprime, p);
    }
    [c.v * kp.sin(), c.v * km.sin(), d3]
}

/// `(i k0 + d·σ) / (Z (k0² + |d|²))`, the inverse of `Z(-i k0 + d·σ)`.
pub fn inverse_from_vector(k0: f64, d: [f64; 3], z: f64) -> Spinor2x2 {
    let den = z * (k0 * k0 + d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    Spinor2x2::from_pauli(C64::new(0.0, k0 / den), (d[0] / den).into(), (d[1] / den).into(), (d[2] / den).into())
}

fn vector_energy(k0: f64, d: [f64; 3]) -> f64 {
    (k0 * k0 + d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Uniform midpoint grid with `n` points per axis over `margin` times the
/// support half-extent along each axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoomGrid {
    pub n: usize,
    pub margin: f64,
}

impl Default for ZoomGrid {
    fn default() -> Self {
        ZoomGrid { n: 32, margin: 1.1 }
    }
}

impl ZoomGrid {
    /// Spacing of the unit coordinate `q ∈ (-1, 1)`.
    pub fn spacing(&self) -> f64 {
        2.0 / self.n as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        -1.0 + (i as f64 + 0.5) * self.spacing()
    }

    fn validate(&self) -> Result<()> {
        if self.n < 4 || self.n > 96 || !(self.margin >= 1.0 && self.margin.is_finite()) {
            return Err(Error::InvalidParams(format!("zoom grid n = {} margin = {} out of range", self.n, self.margin)));
        }
        Ok(())
    }
}

/// Half-extents `(k0, k+, k-, k3)` of the support of `χ_h` with cutoff energy
/// `eps`, in `k3` around 0 (regime 1) or in `k3'` around `ω p_F` (regime 2).
pub fn support_extent(eps: f64, regime: Regime, c: &Couplings, p: &HoppingParams) -> Result<[f64; 4]> {
    if !(c.v > 0.0 && c.v3 > 0.0) {
        return Err(Error::InvalidParams(format!("velocities must be positive (v = {}, v3 = {})", c.v, c.v3)));
    }
    let kpm = (2.0 * eps / c.v).min(1.0).asin();
    let planar = p.t_prime * (1.0 - kpm.cos() * kpm.cos());
    let reach = 2.0 * eps + planar;
    let k3 = match regime {
        Regime::Lattice => (1.0 - p.r() - reach / c.v3).clamp(-1.0, 1.0).acos(),
        Regime::Relativistic => {
            // σ3 part s(k') with E'(k̄) in [0, planar]; walk out from k' = 0 while |s + E'| < 2ε is reachable
            let cf = cos_pf(p);
            let inside = |k: f64| {
                let s = -c.v3 * k.sin() + p.t_perp * cf * (k.cos() - 1.0);
                s < 2.0 * eps && s + planar > -2.0 * eps
            };
            let step = (reach / c.v3 / 1024.0).min(PI / 1024.0);
            let mut ext: f64 = 0.0;
            for dir in [1.0, -1.0] {
                let mut k = 0.0;
                while k < PI && inside(dir * (k + step)) {
                    k += step;
                }
                ext = ext.max(k + step);
            }
            ext.min(PI)
        }
    };
    Ok([2.0 * eps, kpm, kpm, k3])
}
/// Fewer band momenta than this triggers the coarse-grid warning.
pub const MIN_BAND_POINTS: usize = 100;

/// Axis labels of [`SingleScaleGrid`]: `k0`, `k+`, `k-`, `k3` (or `k3'`).
pub const AXIS_NAMES: [&str; 4] = ["x0", "x+", "x-", "x3"];

/// Single-scale propagator sampled on a zoomed box. Values are row-major in `(q0, q+, q-, q3)`.
#[derive(Debug, Clone)]
pub struct SingleScaleGrid {
    pub h: i32,
    pub regime: Regime,
    /// `0` in regime 1, `±1` in regime 2.
    pub omega: i8,
    /// Physical momentum per unit `q` along each axis.
    pub scales: [f64; 4],
    pub zoom: ZoomGrid,
    pub values: Vec<Spinor2x2>,
    pub band_points: usize,
    /// `k3` of the expansion point: 0 in regime 1, `ω p_F` in regime 2.
    pub k3_center: f64,
}

/// Axis profile `|g|` along one coordinate with the others at 0.
#[derive(Debug, Clone)]
pub struct AxisProfile {
    pub axis: usize,
    pub x: Vec<f64>,
    pub amplitude: Vec<f64>,
    /// Alias period `2π/(scale Δq)` of the sampled transform.
    pub period: f64,
}

impl AxisProfile {
    pub fn max(&self) -> f64 {
        self.amplitude.iter().cloned().fold(0.0, f64::max)
    }

    /// Envelope half-width: the smallest `y ≥ 0` beyond which `|g| ≤ max/2` on both sides.
    pub fn half_width(&self) -> Result<f64> {
        let peak = self.max();
        if !(peak > 0.0) {
            return Err(Error::InsufficientGrid(format!("{} profile vanishes", AXIS_NAMES[self.axis])));
        }
        let mid = self.x.len() / 2;
        let side = |idx: &mut dyn Iterator<Item = usize>| -> f64 {
            let mut width = 0.0;
            for i in idx {
                if self.amplitude[i] > 0.5 * peak {
                    width = self.x[i].abs();
                }
            }
            width
        };
        let right = side(&mut (mid..self.x.len()));
        let left = side(&mut (0..=mid));
        let hw = right.max(left);
        let dx = self.x[1] - self.x[0];
        if hw < 4.0 * dx {
            return Err(Error::InsufficientGrid(format!(
                "{} half-width {hw:.3e} spans fewer than 4 samples of {dx:.3e}",
                AXIS_NAMES[self.axis]
            )));
        }
        if self.period < 10.0 * hw {
            return Err(Error::InsufficientGrid(format!(
                "{} alias period {:.3e} below 10 half-widths ({hw:.3e})",
                AXIS_NAMES[self.axis], self.period
            )));
        }
        Ok(hw)
    }
}

fn build_grid(
    zoom: &ZoomGrid,
    scales: [f64; 4],
    eval: impl Fn(f64, [f64; 3]) -> Option<Spinor2x2>,
) -> (Vec<Spinor2x2>, usize) {
    let n = zoom.n;
    let mut values = vec![Spinor2x2::zero(); n * n * n * n];
    let mut band = 0;
    for (idx, slot) in values.iter_mut().enumerate() {
        let q = [idx / (n * n * n), (idx / (n * n)) % n, (idx / n) % n, idx % n].map(|i| zoom.point(i));
        let k0 = scales[0] * q[0];
        let kp = scales[1] * q[1];
        let km = scales[2] * q[2];
        let k = [kp + km, kp - km, scales[3] * q[3]];
        if let Some(v) = eval(k0, k) {
            *slot = v;
            band += 1;
        }
    }
    (values, band)
}

fn band_check(h: i32, band: usize) -> Result<()> {
    if band == 0 {
        return Err(Error::EmptySupport { h });
    }
    if band < MIN_BAND_POINTS {
        log::warn!("scale {h}: only {band} momenta in the band; grid too coarse");
    }
    Ok(())
}

/// Regime-1 single-scale propagator `f_h A_h⁻¹ / Z_h` for `h* ≤ h ≤ 0`.
pub fn single_scale_propagator_r1(
    h: i32,
    h_star: i32,
    c: &Couplings,
    p: &HoppingParams,
    cutoff: &CutoffSpec,
    zoom: &ZoomGrid,
) -> Result<SingleScaleGrid> {
    zoom.validate()?;
    if h > 0 || h < h_star {
        return Err(Error::InvalidParams(format!("scale {h} outside the lattice regime [{h_star}, 0]")));
    }
    let eps = cutoff_energy(h, h_star, cutoff);
    let scales = support_extent(eps, Regime::Lattice, c, p)?.map(|e| e * zoom.margin);
    let (values, band) = build_grid(zoom, scales, |k0, k| {
        let d = lattice_vector(k, c, p);
        let f = scale_support(vector_energy(k0, d), h, h_star, cutoff).band;
        (f > 0.0).then(|| inverse_from_vector(k0, d, c.z).scale_re(f))
    });
    band_check(h, band)?;
    Ok(SingleScaleGrid { h, regime: Regime::Lattice, omega: 0, scales, zoom: *zoom, values, band_points: band, k3_center: 0.0 })
}

fn regime2_grid(
    h: i32,
    h_star: i32,
    omega: i8,
    c: &Couplings,
    p: &HoppingParams,
    cutoff: &CutoffSpec,
    zoom: &ZoomGrid,
    relativistic: bool,
) -> Result<SingleScaleGrid> {
    zoom.validate()?;
    if h >= h_star {
        return Err(Error::InvalidParams(format!("scale {h} not below h* = {h_star}")));
    }
    if omega != 1 && omega != -1 {
        return Err(Error::InvalidParams(format!("omega must be ±1, got {omega}")));
    }
    let eps = cutoff_energy(h, h_star, cutoff);
    let scales = support_extent(eps, Regime::Relativistic, c, p)?.map(|e| e * zoom.margin);
    let (values, band) = build_grid(zoom, scales, |k0, k| {
        // the band is set by the full matrix so that g = g_rel + remainder pointwise
        let full = weyl_vector(k, omega, c, p, false);
        let f = scale_support(vector_energy(k0, full), h, h_star, cutoff).band;
        if f <= 0.0 {
            return None;
        }
        let d = if relativistic { weyl_vector(k, omega, c, p, true) } else { full };
        Some(inverse_from_vector(k0, d, c.z).scale_re(f))
    });
    band_check(h, band)?;
    let pf = cos_pf(p).clamp(-1.0, 1.0).acos();
    Ok(SingleScaleGrid {
        h,
        regime: Regime::Relativistic,
        omega,
        scales,
        zoom: *zoom,
        values,
        band_points: band,
        k3_center: omega as f64 * pf,
    })
}

/// Regime-2 single-scale propagator around `ω p_F` for `h < h*`, in `k'` variables.
pub fn single_scale_propagator_r2(
    h: i32,
    h_star: i32,
    omega: i8,
    c: &Couplings,
    p: &HoppingParams,
    cutoff: &CutoffSpec,
    zoom: &ZoomGrid,
) -> Result<SingleScaleGrid> {
    regime2_grid(h, h_star, omega, c, p, cutoff, zoom, false)
}

/// `(g_rel, g - g_rel)` with `g_rel` built from the matrix without `E'`.
pub fn relativistic_split_r2(
    h: i32,
    h_star: i32,
    omega: i8,
    c: &Couplings,
    p: &HoppingParams,
    cutoff: &CutoffSpec,
    zoom: &ZoomGrid,
) -> Result<(SingleScaleGrid, SingleScaleGrid)> {
    let full = regime2_grid(h, h_star, omega, c, p, cutoff, zoom, false)?;
    let rel = regime2_grid(h, h_star, omega, c, p, cutoff, zoom, true)?;
    let mut rem = full;
    for (r, g) in rem.values.iter_mut().zip(&rel.values) {
        *r = *r - *g;
    }
    Ok((rel, rem))
}

impl SingleScaleGrid {
    /// `d^4k/(2π)^4` weight of one grid cell, including the `dk1 dk2 = 2 dk+ dk-` Jacobian.
    fn cell_weight(&self) -> f64 {
        let dq = self.zoom.spacing();
        2.0 * self.scales.iter().product::<f64>() * dq.powi(4) / (2.0 * PI).powi(4)
    }

    fn marginal(&self, axis: usize) -> Vec<Spinor2x2> {
        let n = self.zoom.n;
        let stride = n.pow(3 - axis as u32);
        let mut out = vec![Spinor2x2::zero(); n];
        for (idx, v) in self.values.iter().enumerate() {
            let i = (idx / stride) % n;
            out[i] = out[i] + *v;
        }
        out
    }

    /// `|g|` (largest entry modulus) along one axis through the origin, sampled
    /// symmetrically over one alias period with `oversample · n` intervals.
    /// Coordinates: `x0`, `x+ = x1 + x2`, `x- = x1 - x2`, `x3`.
    pub fn profile(&self, axis: usize, oversample: usize) -> AxisProfile {
        let n = self.zoom.n;
        let marginal = self.marginal(axis);
        let dq = self.zoom.spacing();
        let period = 2.0 * PI / (self.scales[axis] * dq);
        let m = oversample.max(1) * n;
        let dx = period / m as f64;
        let sign = if axis == 0 { -1.0 } else { 1.0 };
        let w = self.cell_weight();
        let mut x = Vec::with_capacity(m + 1);
        let mut amplitude = Vec::with_capacity(m + 1);
        for j in 0..=m {
            let y = (j as f64 - (m / 2) as f64) * dx;
            let mut acc = Spinor2x2::zero();
            for (i, mv) in marginal.iter().enumerate() {
                let k = self.scales[axis] * self.zoom.point(i);
                acc = acc + mv.scale(C64::from_polar(1.0, sign * k * y));
            }
            x.push(y);
            amplitude.push(acc.scale_re(w).max_abs());
        }
        AxisProfile { axis, x, amplitude, period }
    }

    /// Value at `x = 0`.
    pub fn at_origin(&self) -> Spinor2x2 {
        self.values.iter().copied().sum::<Spinor2x2>().scale_re(self.cell_weight())
    }

    /// Sup of `|g|` over the four coordinate axes through the origin.
    pub fn sup_norm(&self) -> f64 {
        (0..4).map(|a| self.profile(a, 4).max()).fold(0.0, f64::max)
    }

    /// `Σ_x |g(x)| dx` over one alias cell via a 4D FFT (phases from the grid
    /// offset and the `x0` sign do not affect moduli).
    pub fn l1_mass(&self) -> f64 {
        let n = self.zoom.n;
        let shape = [n, n, n, n];
        let w = self.cell_weight();
        let mut amp = vec![0.0f64; n.pow(4)];
        for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let mut buf: Vec<C64> = self.values.iter().map(|s| s.0[i][j]).collect();
            fft_nd(&mut buf, &shape, FftDirection::Inverse);
            for (a, v) in amp.iter_mut().zip(&buf) {
                *a = a.max(v.norm() * w);
            }
        }
        let dq = self.zoom.spacing();
        // dx1 dx2 = dx+ dx- / 2
        let cell: f64 = self.scales.iter().map(|s| 2.0 * PI / (s * dq * n as f64)).product::<f64>() / 2.0;
        amp.iter().sum::<f64>() * cell
    }

    /// Band entries as CSV rows in lattice momenta `(k0, k1, k2, k3)`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "k0,k1,k2,k3,re00,im00,re01,im01,re10,im10,re11,im11")?;
        let n = self.zoom.n;
        for (idx, v) in self.values.iter().enumerate() {
            if *v == Spinor2x2::zero() {
                continue;
            }
            let q = [idx / (n * n * n), (idx / (n * n)) % n, (idx / n) % n, idx % n].map(|i| self.zoom.point(i));
            let kp = self.scales[1] * q[1];
            let km = self.scales[2] * q[2];
            let k = [self.scales[0] * q[0], kp + km, kp - km, self.k3_center + self.scales[3] * q[3]];
            write!(w, "{:e},{:e},{:e},{:e}", k[0], k[1], k[2], k[3])?;
            for r in v.to_reals() {
                write!(w, ",{r:e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayRow {
    pub h: i32,
    pub sup_norm: f64,
    pub fitted_constant: f64,
    /// Envelope half-widths along `x0`, `x+`, `x3`.
    pub widths: [f64; 3],
    pub l1_mass: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    pub regime: u8,
    pub rows: Vec<DecayRow>,
    pub expected_sup_exponent: f64,
    pub sup_exponent: f64,
    /// Fitted exponents of the `x0`, `x+`, `x3` half-widths against `h`.
    pub width_exponents: [f64; 3],
    pub l1_exponent: f64,
    /// Largest `|log2(C_h / C_mean)|` over the rows.
    pub max_deviation: f64,
}

/// Least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Fits sup norms, half-widths and L¹ masses of single-scale propagators over
/// `hs` (all in one regime) against `h`.
pub fn decay_audit(
    hs: &[i32],
    h_star: i32,
    c: &Couplings,
    p: &HoppingParams,
    cutoff: &CutoffSpec,
    zoom: &ZoomGrid,
) -> Result<DecayReport> {
    if hs.len() < 2 {
        return Err(Error::InvalidParams("decay audit needs at least two scales".into()));
    }
    let regime = regime_of(hs[0], h_star);
    if hs.iter().any(|&h| regime_of(h, h_star) != regime) {
        return Err(Error::InvalidParams("decay audit scales straddle h*".into()));
    }
    let expected = match regime {
        Regime::Lattice => 2.5,
        Regime::Relativistic => 3.0,
    };
    let mut rows = Vec::with_capacity(hs.len());
    for &h in hs {
        let g = match regime {
            Regime::Lattice => single_scale_propagator_r1(h, h_star, c, p, cutoff, zoom)?,
            Regime::Relativistic => single_scale_propagator_r2(h, h_star, 1, c, p, cutoff, zoom)?,
        };
        let profiles: Vec<AxisProfile> = (0..4).map(|a| g.profile(a, 4)).collect();
        let sup = profiles.iter().map(|pr| pr.max()).fold(0.0, f64::max);
        let widths = [profiles[0].half_width()?, profiles[1].half_width()?, profiles[3].half_width()?];
        let velocity = if regime == Regime::Relativistic { c.v3 } else { 1.0 };
        rows.push(DecayRow {
            h,
            sup_norm: sup,
            fitted_constant: sup * velocity / 2f64.powf(expected * h as f64),
            widths,
            l1_mass: g.l1_mass(),
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.h as f64).collect();
    let log2 = |f: &dyn Fn(&DecayRow) -> f64| -> Vec<f64> { rows.iter().map(|r| f(r).log2()).collect() };
    let sup_exponent = fit_slope(&xs, &log2(&|r| r.sup_norm));
    let width_exponents = [
        fit_slope(&xs, &log2(&|r| r.widths[0])),
        fit_slope(&xs, &log2(&|r| r.widths[1])),
        fit_slope(&xs, &log2(&|r| r.widths[2])),
    ];
    let l1_exponent = fit_slope(&xs, &log2(&|r| r.l1_mass));
    let logs = log2(&|r| r.fitted_constant);
    let mean = logs.iter().sum::<f64>() / logs.len() as f64;
    let max_deviation = logs.iter().map(|l| (l - mean).abs()).fold(0.0, f64::max);
    Ok(DecayReport {
        regime: regime.number(),
        rows,
        expected_sup_exponent: expected,
        sup_exponent,
        width_exponents,
        l1_exponent,
        max_deviation,
    })
}

impl DecayReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "h,sup_norm,fitted_constant,width_x0,width_xplus,width_x3,l1_mass")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{:e},{:e},{:e},{:e},{:e},{:e}",
                r.h, r.sup_norm, r.fitted_constant, r.widths[0], r.widths[1], r.widths[2], r.l1_mass
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice_model::{build_params, Offset};

    fn params(r: f64) -> HoppingParams {
        build_params(1.0, 0.5, 2.0, Offset::R(r), 0.0).unwrap()
    }

    #[test]
    fn crossover_examples() {
        let p = params(0.5);
        let c = CutoffSpec::for_params(&p);
        assert!((c.a0 - 0.05).abs() < 1e-15);
        assert_eq!(crossover_scale(&p, &c), 0);
        assert_eq!(crossover_scale(&params(3.125e-4), &c), -4);
        assert_eq!(crossover_scale(&params(0.0), &c), H_STAR_NEG_INF);
    }

    #[test]
    fn support_edges() {
        let c = CutoffSpec::for_params(&params(0.5));
        assert_eq!(scale_support(0.0, -3, -10, &c).chi, 1.0);
        let e = 4.0 * c.a0 * 2f64.powi(-3);
        assert_eq!(scale_support(e, -3, -10, &c).chi, 0.0);
    }

    #[test]
    fn regime_two_nests_inside_last_lattice_shell() {
        let c = CutoffSpec::for_params(&params(0.5));
        for e in [0.0, 1e-4, 1e-3, 5e-3, 0.02, 0.05, 0.1] {
            let s = scale_support(e, 0, 0, &c);
            assert!(s.band >= 0.0 && s.band <= 1.0);
        }
    }

    #[test]
    fn split_and_disconnection() {
        let p = params(0.5);
        let c = CutoffSpec::for_params(&p);
        let hs = crossover_scale(&p, &c);
        let pf = std::f64::consts::FRAC_PI_3;
        let w = quasiparticle_split(Momentum4::new(0.0, 0.0, 0.0, pf + 1e-5), &p, hs, &c).unwrap();
        assert!(w[0] > 0.0 && w[1] == 0.0);
        let bad = CutoffSpec { b0: 0.25, ..c };
        assert!(matches!(check_disconnection(&p, hs, &bad), Err(Error::Configuration(_))));
    }

    #[test]
    fn weyl_vector_matches_full_matrix() {
        let p = params(0.3);
        let c = Couplings::relativistic_initial(&p);
        let pf = (1.0 - p.r()).acos();
        for omega in [1i8, -1] {
            for kp in [[0.01, -0.02, 0.03], [0.2, 0.1, -0.15]] {
                let d = weyl_vector(kp, omega, &c, &p, false);
                let full = crate::propagator::inverse_propagator_vector([kp[0], kp[1], omega as f64 * pf + kp[2]], &p);
                for i in 0..3 {
                    assert!((d[i] - full[i]).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn lattice_vector_matches_full_matrix_at_top() {
        let p = params(0.2);
        let c = Couplings::lattice_initial(&p);
        let k = [0.3, -0.1, 0.7];
        let a = lattice_vector(k, &c, &p);
        let b = crate::propagator::inverse_propagator_vector(k, &p);
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() < 1e-14);
        }
    }
}
