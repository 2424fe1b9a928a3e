//! Free Schwinger functions on the finite (L, β) lattice.

use std::f64::consts::PI;
use std::io::Write;

use rustfft::FftDirection;
use serde::{Deserialize, Serialize};

use crate::cutoff::smooth_cutoff;
use crate::error::{Error, Result};
use crate::fourier::fft_nd;
use crate::lattice_model::{dispersion, k_plus_minus, spatial_momenta, HoppingParams};
use crate::spinor::{Spinor2x2, C64};

/// Frequency-momentum `(k0, k1, k2, k3)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Momentum4 {
    pub k0: f64,
    pub k: [f64; 3],
}

impl Momentum4 {
    pub fn new(k0: f64, k1: f64, k2: f64, k3: f64) -> Self {
        Momentum4 { k0, k: [k1, k2, k3] }
    }
}

/// Space-time displacement: continuous imaginary time, integer lattice vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Displacement {
    pub x0: f64,
    pub xbar: [i64; 3],
}

impl Displacement {
    pub fn new(x0: f64, xbar: [i64; 3]) -> Self {
        Displacement { x0, xbar }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub l: usize,
    pub beta: f64,
    /// Frequencies are capped at `|k0| < 2^(m+1)` by the cutoff support.
    pub m: u32,
}

impl GridSpec {
    pub fn new(l: usize, beta: f64, m: u32) -> Result<Self> {
        let g = GridSpec { l, beta, m };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.l == 0 {
            return Err(Error::InvalidParams("L must be positive".into()));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::InvalidParams(format!("beta must be positive, got {}", self.beta)));
        }
        if self.m > 40 {
            return Err(Error::InvalidParams(format!("M = {} is too large", self.m)));
        }
        Ok(())
    }

    /// Positive Matsubara frequencies inside the support of `χ̄(2^-M |k0|)`.
    pub fn positive_frequencies(&self) -> Vec<f64> {
        let cap = 2.0 * 2f64.powi(self.m as i32);
        let step = 2.0 * PI / self.beta;
        (0..).map(|n| step * (n as f64 + 0.5)).take_while(|&k0| k0 < cap).collect()
    }
}

/// In-plane correction `t'(1 - cos k+ cos k-)`, vanishing at `k1 = k2 = 0`.
pub fn planar_energy(k: [f64; 3], p: &HoppingParams) -> f64 {
    let (kp, km) = k_plus_minus(k);
    p.t_prime * (1.0 - kp.cos() * km.cos())
}

/// Coefficients `d = (d1, d2, d3)` of `A(k) = -i k0 + d·σ`.
pub fn inverse_propagator_vector(k: [f64; 3], p: &HoppingParams) -> [f64; 3] {
    let (kp, km) = k_plus_minus(k);
    [
        p.t * kp.sin(),
        p.t * km.sin(),
        p.mu - p.t_prime + p.t_perp * k[2].cos() + planar_energy(k, p),
    ]
}

pub fn inverse_propagator(kk: Momentum4, p: &HoppingParams) -> Spinor2x2 {
    let d = inverse_propagator_vector(kk.k, p);
    Spinor2x2::from_pauli(C64::new(0.0, -kk.k0), d[0].into(), d[1].into(), d[2].into())
}

/// `|det A(k)|^(1/2) = (k0² + λ²)^(1/2)`.
pub fn energy_scale(kk: Momentum4, p: &HoppingParams) -> f64 {
    kk.k0.hypot(dispersion(kk.k, p))
}

/// Below this energy scale the propagator is treated as on-shell.
pub const SINGULAR_SCALE: f64 = 1e-12;

/// `A(k)⁻¹ = (i k0 + d·σ) / (k0² + λ²)`.
pub fn free_propagator(kk: Momentum4, p: &HoppingParams) -> Result<Spinor2x2> {
    let d = inverse_propagator_vector(kk.k, p);
    let den = kk.k0 * kk.k0 + d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    if den.sqrt() < SINGULAR_SCALE {
        return Err(Error::SingularMomentum([kk.k0, kk.k[0], kk.k[1], kk.k[2]]));
    }
    let inv = 1.0 / den;
    Ok(Spinor2x2::from_pauli(
        C64::new(0.0, kk.k0 * inv),
        (d[0] * inv).into(),
        (d[1] * inv).into(),
        (d[2] * inv).into(),
    ))
}

/// `exp(-ε s) / (1 + exp(-β ε))` for `s ∈ [0, β]`, overflow-free for either sign of ε.
fn band_weight(eps: f64, s: f64, beta: f64) -> f64 {
    if eps >= 0.0 {
        (-eps * s).exp() / (1.0 + (-beta * eps).exp())
    } else {
        (eps * (beta - s)).exp() / (1.0 + (beta * eps).exp())
    }
}

/// Time dependence of one band: `F(τ)` for `τ > 0`, `-F(τ + β)` for `τ ≤ 0`.
fn band_time(eps: f64, tau: f64, beta: f64) -> f64 {
    if tau > 0.0 {
        band_weight(eps, tau, beta)
    } else {
        -band_weight(eps, tau + beta, beta)
    }
}

/// Matrix `Σ_s P_s w(sλ)` with spectral projectors `P_± = (I ± d̂·σ)/2`.
fn spectral_combination(d: [f64; 3], w: impl Fn(f64) -> f64) -> Spinor2x2 {
    let lam = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if lam == 0.0 {
        return Spinor2x2::identity().scale_re(w(0.0));
    }
    let (wp, wm) = (w(lam), w(-lam));
    let c0 = 0.5 * (wp + wm);
    let c1 = 0.5 * (wp - wm) / lam;
    Spinor2x2::from_pauli(c0.into(), (c1 * d[0]).into(), (c1 * d[1]).into(), (c1 * d[2]).into())
}

fn phase(k: [f64; 3], xbar: [i64; 3]) -> C64 {
    let arg = k[0] * xbar[0] as f64 + k[1] * xbar[1] as f64 + k[2] * xbar[2] as f64;
    C64::from_polar(1.0, arg)
}

fn spatial_average(grid: &GridSpec, xbar: [i64; 3], f: impl Fn([f64; 3]) -> Spinor2x2) -> Spinor2x2 {
    let norm = 1.0 / (grid.l * grid.l * grid.l) as f64;
    spatial_momenta(grid.l).map(|k| f(k).scale(phase(k, xbar))).sum::<Spinor2x2>().scale_re(norm)
}

/// Closed-form `S0(x)` for `x0 ∈ (-β, β]`.
pub fn schwinger_time_domain(x: Displacement, grid: &GridSpec, p: &HoppingParams) -> Result<Spinor2x2> {
    grid.validate()?;
    let beta = grid.beta;
    if !(x.x0 > -beta && x.x0 <= beta) {
        return Err(Error::TimeOutOfWindow { x0: x.x0, beta });
    }
    Ok(spatial_average(grid, x.xbar, |k| {
        spectral_combination(inverse_propagator_vector(k, p), |e| band_time(e, x.x0, beta))
    }))
}

/// One-sided limits `(S0(x̄, 0⁺), S0(x̄, 0⁻))`.
pub fn schwinger_limits(xbar: [i64; 3], grid: &GridSpec, p: &HoppingParams) -> Result<(Spinor2x2, Spinor2x2)> {
    grid.validate()?;
    let beta = grid.beta;
    let plus = spatial_average(grid, xbar, |k| {
        spectral_combination(inverse_propagator_vector(k, p), |e| band_weight(e, 0.0, beta))
    });
    let minus = spatial_average(grid, xbar, |k| {
        spectral_combination(inverse_propagator_vector(k, p), |e| -band_weight(e, beta, beta))
    });
    Ok((plus, minus))
}

/// Reduces `x0` into `(-β, β]` using antiperiodicity `S(x0 + β) = -S(x0)`;
/// returns the reduced time and the sign picked up.
pub fn normalize_time(x0: f64, beta: f64) -> (f64, f64) {
    if x0 > -beta && x0 <= beta {
        return (x0, 1.0);
    }
    let n = (x0 / beta).ceil() - 1.0;
    let sign = if (n as i64).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    (x0 - n * beta, sign)
}

/// Per-k̄ frequency sums `a = Σ_{k0>0} 2 k0 sin(k0 x0) χ̄/(k0²+λ²)` and
/// `b = Σ_{k0>0} 2 cos(k0 x0) χ̄/(k0²+λ²)`, so that the ±k0 pair contributes `a I + b d·σ`.
struct FrequencyTable {
    k0sq: Vec<f64>,
    sin_w: Vec<f64>,
    cos_w: Vec<f64>,
}

impl FrequencyTable {
    fn new(x0: f64, grid: &GridSpec) -> Self {
        let scale = 2f64.powi(-(grid.m as i32));
        let freqs = grid.positive_frequencies();
        let mut t = FrequencyTable { k0sq: vec![], sin_w: vec![], cos_w: vec![] };
        for k0 in freqs {
            let chi = smooth_cutoff(scale * k0);
            if chi == 0.0 {
                continue;
            }
            t.k0sq.push(k0 * k0);
            t.sin_w.push(2.0 * k0 * (k0 * x0).sin() * chi);
            t.cos_w.push(2.0 * (k0 * x0).cos() * chi);
        }
        t
    }

    fn momentum_block(&self, d: [f64; 3]) -> Spinor2x2 {
        let lam2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        let (mut a, mut b) = (0.0, 0.0);
        for i in 0..self.k0sq.len() {
            let inv = 1.0 / (self.k0sq[i] + lam2);
            a += self.sin_w[i] * inv;
            b += self.cos_w[i] * inv;
        }
        Spinor2x2::from_pauli(a.into(), (b * d[0]).into(), (b * d[1]).into(), (b * d[2]).into())
    }
}

/// `(1/βL³) Σ_k e^{i(-k0 x0 + k̄·x̄)} A⁻¹(k) χ̄(2^-M |k0|)` by direct summation.
pub fn regularized_propagator_sum(x: Displacement, grid: &GridSpec, p: &HoppingParams) -> Result<Spinor2x2> {
    grid.validate()?;
    let table = FrequencyTable::new(x.x0, grid);
    Ok(spatial_average(grid, x.xbar, |k| table.momentum_block(inverse_propagator_vector(k, p)))
        .scale_re(1.0 / grid.beta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SumMethod {
    Direct,
    Fft,
    /// Direct up to `L = 16`, FFT beyond.
    Auto,
}

/// Largest linear size summed directly under [`SumMethod::Auto`].
pub const DIRECT_SUM_MAX_L: usize = 16;

/// `g_M(x0, x̄)` for every `x̄ ∈ [0, L)³`, row-major in `(x1, x2, x3)`.
pub fn regularized_propagator_table(
    x0: f64,
    grid: &GridSpec,
    p: &HoppingParams,
    method: SumMethod,
) -> Result<Vec<Spinor2x2>> {
    grid.validate()?;
    let l = grid.l;
    let use_fft = match method {
        SumMethod::Direct => false,
        SumMethod::Fft => true,
        SumMethod::Auto => l > DIRECT_SUM_MAX_L,
    };
    let positions = (0..l * l * l).map(|i| [(i / (l * l)) as i64, ((i / l) % l) as i64, (i % l) as i64]);
    if !use_fft {
        return positions.map(|xbar| regularized_propagator_sum(Displacement { x0, xbar }, grid, p)).collect();
    }
    let table = FrequencyTable::new(x0, grid);
    let blocks: Vec<Spinor2x2> =
        spatial_momenta(l).map(|k| table.momentum_block(inverse_propagator_vector(k, p))).collect();
    let norm = 1.0 / (grid.beta * (l * l * l) as f64);
    let mut out = vec![Spinor2x2::zero(); l * l * l];
    for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        let mut buf: Vec<C64> = blocks.iter().map(|b| b.0[i][j]).collect();
        fft_nd(&mut buf, &[l, l, l], FftDirection::Inverse);
        for (o, v) in out.iter_mut().zip(buf) {
            o.0[i][j] = v * norm;
        }
    }
    Ok(out)
}

/// `U v̂(0)` times the identity coefficient of the equal-time jump at `x̄ = 0`.
pub fn counterterm_nu_c(grid: &GridSpec, p: &HoppingParams, v_hat_0: f64) -> Result<f64> {
    let (plus, minus) = schwinger_limits([0, 0, 0], grid, p)?;
    let jump = plus - minus;
    Ok(p.u * v_hat_0 * jump.pauli_coefficients()[0].re)
}

/// Cap on the number of stored momenta in a [`PropagatorGrid`].
pub const PROPAGATOR_GRID_MAX: usize = 4_000_000;

/// `χ̄(2^-M |k0|) A⁻¹(k)` on every grid momentum inside the cutoff support.
#[derive(Debug, Clone)]
pub struct PropagatorGrid {
    pub grid: GridSpec,
    pub values: Vec<(Momentum4, Spinor2x2)>,
}

impl PropagatorGrid {
    pub fn build(grid: GridSpec, p: &HoppingParams) -> Result<Self> {
        grid.validate()?;
        let pos = grid.positive_frequencies();
        let count = 2 * pos.len() * grid.l.pow(3);
        if count > PROPAGATOR_GRID_MAX {
            return Err(Error::SizeLimit(format!("{count} momenta exceed {PROPAGATOR_GRID_MAX}")));
        }
        let scale = 2f64.powi(-(grid.m as i32));
        let mut freqs: Vec<f64> = pos.iter().rev().map(|k| -k).chain(pos.iter().copied()).collect();
        freqs.retain(|k0| smooth_cutoff(scale * k0.abs()) > 0.0);
        let mut values = Vec::with_capacity(count);
        for k0 in freqs {
            let chi = smooth_cutoff(scale * k0.abs());
            for k in spatial_momenta(grid.l) {
                let kk = Momentum4 { k0, k };
                values.push((kk, free_propagator(kk, p)?.scale_re(chi)));
            }
        }
        Ok(PropagatorGrid { grid, values })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "k0,k1,k2,k3,re00,im00,re01,im01,re10,im10,re11,im11")?;
        for (kk, s) in &self.values {
            let r = s.to_reals();
            write!(w, "{:e},{:e},{:e},{:e}", kk.k0, kk.k[0], kk.k[1], kk.k[2])?;
            for v in r {
                write!(w, ",{v:e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice_model::{build_params, Offset};

    fn p_star() -> HoppingParams {
        build_params(1.0, 0.5, 2.0, Offset::R(0.5), 0.0).unwrap()
    }

    #[test]
    fn inverse_propagator_on_axis() {
        let p = p_star();
        let a = inverse_propagator(Momentum4::new(0.7, 0.0, 0.0, 0.0), &p);
        let expect = Spinor2x2::from_pauli(C64::new(0.0, -0.7), 0.0.into(), 0.0.into(), 0.25.into());
        assert!((a - expect).max_abs() < 1e-15);
        let w = inverse_propagator(Momentum4::new(0.0, 0.0, 0.0, PI / 3.0), &p);
        assert!(w.max_abs() < 1e-15);
    }

    #[test]
    fn energy_scale_example() {
        let p = p_star();
        let e = energy_scale(Momentum4::new(0.25, 0.0, 0.0, 0.0), &p);
        assert!((e - 0.125f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn singular_at_weyl_point() {
        let p = p_star();
        let r = free_propagator(Momentum4::new(0.0, 0.0, 0.0, PI / 3.0), &p);
        assert!(matches!(r, Err(Error::SingularMomentum(_))));
    }

    #[test]
    fn jump_is_identity() {
        let p = p_star();
        let g = GridSpec::new(4, 8.0, 10).unwrap();
        let (a, b) = schwinger_limits([0, 0, 0], &g, &p).unwrap();
        assert!((a - b - Spinor2x2::identity()).max_abs() < 1e-12);
        let (a, b) = schwinger_limits([1, 0, 2], &g, &p).unwrap();
        assert!((a - b).max_abs() < 1e-12);
    }

    #[test]
    fn time_domain_window() {
        let p = p_star();
        let g = GridSpec::new(2, 4.0, 4).unwrap();
        assert!(schwinger_time_domain(Displacement::new(4.0, [0; 3]), &g, &p).is_ok());
        assert!(matches!(
            schwinger_time_domain(Displacement::new(-4.0, [0; 3]), &g, &p),
            Err(Error::TimeOutOfWindow { .. })
        ));
    }

    #[test]
    fn fft_matches_direct() {
        let p = p_star();
        let g = GridSpec::new(6, 4.0, 6).unwrap();
        let a = regularized_propagator_table(0.3, &g, &p, SumMethod::Direct).unwrap();
        let b = regularized_propagator_table(0.3, &g, &p, SumMethod::Fft).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((*x - *y).max_abs() < 1e-10);
        }
    }

    #[test]
    fn counterterm_linear_in_u() {
        let g = GridSpec::new(4, 8.0, 6).unwrap();
        let p = p_star().with_u(0.1);
        let a = counterterm_nu_c(&g, &p, 2.0).unwrap();
        let b = counterterm_nu_c(&g, &p.with_u(0.2), 2.0).unwrap();
        assert!((a - 0.2).abs() < 1e-12);
        assert!((b - 2.0 * a).abs() < 1e-12);
        assert_eq!(counterterm_nu_c(&g, &p.with_u(0.0), 2.0).unwrap(), 0.0);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let g = GridSpec::new(2, 2.0, 1).unwrap();
        let pg = PropagatorGrid::build(g, &p_star()).unwrap();
        let mut buf = Vec::new();
        pg.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + pg.values.len());
        assert_eq!(text.lines().nth(1).unwrap().split(',').count(), 12);
    }
}
