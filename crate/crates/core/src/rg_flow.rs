//! One-loop renormalization-group flow: interaction, localization, running
//! couplings, the counterterm fixed point and the dressed two-point function.
//!
//! Conventions. The scale-`h` quadratic kernel is
//! `K_h(k) = U v̂(0) Tr[∫g_h] I - U ∫dp v̂(k - p) g_h(p)` and enters the next
//! scale as `A_{h-1} = A_h + ℒK_h`. The counterterm is tracked in dimensionless
//! form: the σ3 constant at the expansion point is `2^h ν_h`, so
//! `ν_{h-1} = 2 ν_h + β_ν^(h)` with `β_ν^(h) = 2^(1-h) n_h`. The ultraviolet
//! part (everything above scale 0) is integrated as the step `h = 1` with
//! `ν_1 = ν/2`.

use std::f64::consts::PI;
use std::io::Write;
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice_model::{classify_phase, spatial_momenta, HoppingParams, PhaseLabel};
use crate::multiscale::{
    crossover_scale, cumulative_support, regime_of, single_scale_propagator_r1, single_scale_propagator_r2,
    Couplings, CutoffSpec, Regime, SingleScaleGrid, ZoomGrid, H_STAR_NEG_INF,
};
use crate::propagator::{inverse_propagator, inverse_propagator_vector, Momentum4};
use crate::spinor::{Spinor2x2, C64};

/// Two-body potential `v(x) = exp(-κ |x|_1)`, whose lattice Fourier transform
/// factorizes: `v̂(q) = Π_i (1 - a²)/(1 - 2a cos q_i + a²)` with `a = e^-κ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionSpec {
    pub kappa: f64,
}

impl InteractionSpec {
    pub fn new(kappa: f64) -> Result<Self> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(Error::InvalidParams(format!("kappa must be positive, got {kappa}")));
        }
        Ok(InteractionSpec { kappa })
    }

    pub fn from_params(p: &HoppingParams) -> Result<Self> {
        Self::new(p.kappa)
    }

    fn a(&self) -> f64 {
        (-self.kappa).exp()
    }

    fn factor(&self, q: f64) -> f64 {
        let a = self.a();
        (1.0 - a * a) / (1.0 - 2.0 * a * q.cos() + a * a)
    }

    fn factor_prime(&self, q: f64) -> f64 {
        let a = self.a();
        let den = 1.0 - 2.0 * a * q.cos() + a * a;
        -(1.0 - a * a) * 2.0 * a * q.sin() / (den * den)
    }

    pub fn v_position(&self, x: [i64; 3]) -> f64 {
        (-self.kappa * (x[0].abs() + x[1].abs() + x[2].abs()) as f64).exp()
    }

    pub fn v_hat(&self, q: [f64; 3]) -> f64 {
        self.factor(q[0]) * self.factor(q[1]) * self.factor(q[2])
    }

    pub fn v_hat_0(&self) -> f64 {
        let a = self.a();
        ((1.0 + a) / (1.0 - a)).powi(3)
    }

    pub fn v_hat_grad(&self, q: [f64; 3]) -> [f64; 3] {
        let f = [self.factor(q[0]), self.factor(q[1]), self.factor(q[2])];
        let d = [self.factor_prime(q[0]), self.factor_prime(q[1]), self.factor_prime(q[2])];
        [d[0] * f[1] * f[2], f[0] * d[1] * f[2], f[0] * f[1] * d[2]]
    }

    /// `Σ_{|x_i| ≤ radius} v(x) e^{-i q·x}` by direct lattice summation.
    pub fn v_hat_direct(&self, q: [f64; 3], radius: i64) -> f64 {
        let mut acc = 0.0;
        for x0 in -radius..=radius {
            for x1 in -radius..=radius {
                for x2 in -radius..=radius {
                    let x = [x0, x1, x2];
                    let arg = q[0] * x0 as f64 + q[1] * x1 as f64 + q[2] * x2 as f64;
                    acc += self.v_position(x) * arg.cos();
                }
            }
        }
        acc
    }
}

/// Expansion point of the localization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationPoint {
    pub regime: Regime,
    /// `±1` in regime 2, 0 in regime 1.
    pub omega: i8,
    /// `k3` of the point: 0 or `ω p_F`.
    pub k3: f64,
}

impl LocalizationPoint {
    pub fn lattice() -> Self {
        LocalizationPoint { regime: Regime::Lattice, omega: 0, k3: 0.0 }
    }

    pub fn weyl(omega: i8, p_f: f64) -> Self {
        LocalizationPoint { regime: Regime::Relativistic, omega, k3: omega as f64 * p_f }
    }
}

/// Taylor coefficients of a 2×2 kernel at the expansion point: `n` is the σ3
/// value, `b0` the coefficient of `-i k0 I`, `b±` the σ1/σ2 slopes along `k±`.
/// `b3` is `∂3²` of the σ3 part in regime 1 and `∂3` in regime 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizedKernel {
    pub n: f64,
    pub b0: f64,
    pub bplus: f64,
    pub bminus: f64,
    pub b3: f64,
    pub point: LocalizationPoint,
}

impl LocalizedKernel {
    pub fn zero(point: LocalizationPoint) -> Self {
        LocalizedKernel { n: 0.0, b0: 0.0, bplus: 0.0, bminus: 0.0, b3: 0.0, point }
    }

    /// Shift of the σ3 velocity in the regime's basis: the coefficient of
    /// `cos k3 - 1` (regime 1) or of `-ω sin k3'` (regime 2).
    pub fn velocity3_shift(&self) -> f64 {
        match self.point.regime {
            Regime::Lattice => -self.b3,
            Regime::Relativistic => -(self.point.omega as f64) * self.b3,
        }
    }

    /// Local part `ℒK(k)` at a momentum measured from the expansion point.
    pub fn local_part(&self, k0: f64, kprime: [f64; 3]) -> Spinor2x2 {
        let kp = 0.5 * (kprime[0] + kprime[1]);
        let km = 0.5 * (kprime[0] - kprime[1]);
        let d3 = match self.point.regime {
            Regime::Lattice => self.n - self.b3 * (kprime[2].cos() - 1.0),
            Regime::Relativistic => self.n + self.b3 * kprime[2].sin(),
        };
        Spinor2x2::from_pauli(
            C64::new(0.0, -self.b0 * k0),
            (self.bplus * kp.sin()).into(),
            (self.bminus * km.sin()).into(),
            d3.into(),
        )
    }
}

fn richardson(d: impl Fn(f64) -> f64, h: f64) -> f64 {
    (4.0 * d(0.5 * h) - d(h)) / 3.0
}

/// Extracts the local coefficients of `kernel` at `point` by central finite
/// differences with spacing `spacing`, Richardson-extrapolated once.
pub fn localize_kernel(
    kernel: &dyn Fn(Momentum4) -> Spinor2x2,
    point: LocalizationPoint,
    spacing: f64,
) -> Result<LocalizedKernel> {
    if !(spacing.is_finite() && spacing > 1e-8) {
        return Err(Error::StencilDegenerate(spacing));
    }
    let at = |k0: f64, kp: f64, km: f64, k3: f64| kernel(Momentum4::new(k0, kp + km, kp - km, point.k3 + k3));
    let coef = |m: Spinor2x2, i: usize| m.pauli_coefficients()[i];
    let center = at(0.0, 0.0, 0.0, 0.0);
    let n = coef(center, 3).re;
    let d_k0 = |h: f64| (coef(at(h, 0.0, 0.0, 0.0), 0) - coef(at(-h, 0.0, 0.0, 0.0), 0)).im / (2.0 * h);
    let d_plus = |h: f64| (coef(at(0.0, h, 0.0, 0.0), 1) - coef(at(0.0, -h, 0.0, 0.0), 1)).re / (2.0 * h);
    let d_minus = |h: f64| (coef(at(0.0, 0.0, h, 0.0), 2) - coef(at(0.0, 0.0, -h, 0.0), 2)).re / (2.0 * h);
    let b3 = match point.regime {
        Regime::Lattice => richardson(
            |h| (coef(at(0.0, 0.0, 0.0, h), 3).re - 2.0 * n + coef(at(0.0, 0.0, 0.0, -h), 3).re) / (h * h),
            spacing,
        ),
        Regime::Relativistic => richardson(
            |h| (coef(at(0.0, 0.0, 0.0, h), 3) - coef(at(0.0, 0.0, 0.0, -h), 3)).re / (2.0 * h),
            spacing,
        ),
    };
    let out = LocalizedKernel {
        n,
        // identity coefficient ≈ -i b0 k0
        b0: -richardson(d_k0, spacing),
        bplus: richardson(d_plus, spacing),
        bminus: richardson(d_minus, spacing),
        b3,
        point,
    };
    if [out.n, out.b0, out.bplus, out.bminus, out.b3].iter().all(|x| x.is_finite()) {
        Ok(out)
    } else {
        Err(Error::StencilDegenerate(spacing))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunningCouplings {
    pub z: f64,
    pub v: f64,
    pub v3: f64,
    pub nu: f64,
    pub h: i32,
    pub regime: Regime,
}

impl RunningCouplings {
    pub fn couplings(&self) -> Couplings {
        Couplings { z: self.z, v: self.v, v3: self.v3 }
    }
}

/// One RG step at scale `h = c.h`: returns the couplings at `h - 1` in the
/// regime of `loc`.
pub fn update_couplings(c: &RunningCouplings, loc: &LocalizedKernel) -> Result<RunningCouplings> {
    let z = c.z * (1.0 + loc.b0);
    if !(z > 0.0) {
        return Err(Error::SignLoss { h: c.h, z });
    }
    let ratio = c.z / z;
    Ok(RunningCouplings {
        z,
        v: ratio * (c.v + loc.bplus),
        v3: ratio * (c.v3 + loc.velocity3_shift()),
        nu: 2.0 * c.nu + 2f64.powi(1 - c.h) * loc.n,
        h: c.h - 1,
        regime: loc.point.regime,
    })
}

/// Quadratic kernel produced by integrating one scale: weighted momentum
/// points `∫dp0 g_h(p0, p̄)` times the `d³p/(2π)³` cell weight.
#[derive(Debug, Clone)]
pub struct ScaleKernel {
    pub h: i32,
    pub points: Vec<([f64; 3], Spinor2x2)>,
}

impl ScaleKernel {
    fn total(&self) -> Spinor2x2 {
        self.points.iter().map(|(_, w)| *w).sum()
    }

    /// `K_h(k̄)`; independent of `k0` because `v̂` is instantaneous.
    pub fn evaluate(&self, k: [f64; 3], u: f64, inter: &InteractionSpec) -> Spinor2x2 {
        if u == 0.0 {
            return Spinor2x2::zero();
        }
        let mut fock = Spinor2x2::zero();
        for (p, w) in &self.points {
            let vq = inter.v_hat([k[0] - p[0], k[1] - p[1], k[2] - p[2]]);
            fock = fock + w.scale_re(vq);
        }
        let hartree = Spinor2x2::identity().scale(self.total().trace() * (u * inter.v_hat_0()));
        hartree - fock.scale_re(u)
    }

    fn from_grid(grid: &SingleScaleGrid) -> Self {
        let n = grid.zoom.n;
        let n3 = n * n * n;
        let dq = grid.zoom.spacing();
        let weight = 2.0 * grid.scales.iter().product::<f64>() * dq.powi(4) / (2.0 * PI).powi(4);
        let mut acc = vec![Spinor2x2::zero(); n3];
        for (idx, v) in grid.values.iter().enumerate() {
            acc[idx % n3] = acc[idx % n3] + *v;
        }
        let mut points = Vec::new();
        for (idx, w) in acc.into_iter().enumerate() {
            if w == Spinor2x2::zero() {
                continue;
            }
            let q = [(idx / (n * n)) % n, (idx / n) % n, idx % n].map(|i| grid.zoom.point(i));
            let kp = grid.scales[1] * q[0];
            let km = grid.scales[2] * q[1];
            points.push(([kp + km, kp - km, grid.k3_center + grid.scales[3] * q[2]], w.scale_re(weight)));
        }
        ScaleKernel { h: grid.h, points }
    }
}

/// Number of Gauss–Legendre nodes for the frequency integral of the UV step.
const UV_QUADRATURE_NODES: usize = 64;

/// `∫dp0/(2π) (1 - χ0(p0, λ)) / (p0² + λ²)` with `χ0 = χ̄(|det A|^(1/2)/a0)`.
fn uv_frequency_integral(lam: f64, a0: f64, rule: &GaussLegendre) -> f64 {
    let e_lo = a0;
    let e_hi = 2.0 * a0;
    if lam >= e_hi {
        return 0.5 / lam;
    }
    let p_lo = (e_lo * e_lo - lam * lam).max(0.0).sqrt();
    let p_hi = (e_hi * e_hi - lam * lam).sqrt();
    let ramp = rule.integrate(p_lo, p_hi, |p0| {
        let e = (p0 * p0 + lam * lam).sqrt();
        (1.0 - crate::cutoff::smooth_cutoff(e / a0)) / (p0 * p0 + lam * lam)
    });
    // ∫_{p_hi}^∞ dp0/(p0² + λ²) = atan(λ/p_hi)/λ, finite as λ → 0
    let tail = if lam > 0.0 { (lam / p_hi).atan() / lam } else { 1.0 / p_hi };
    (ramp + tail) / PI
}

/// Kernel of everything above scale 0 on the `L³` Brillouin-zone grid, with
/// the frequency integral done in the continuum (`M → ∞`).
pub fn ultraviolet_kernel(p: &HoppingParams, cutoff: &CutoffSpec, h_star: i32, l: usize) -> Result<ScaleKernel> {
    if l < 2 {
        return Err(Error::Quadrature(format!("L = {l} too small for the ultraviolet step")));
    }
    let rule = GaussLegendre::new(NonZeroUsize::new(UV_QUADRATURE_NODES).expect("nonzero"));
    let eps0 = crate::multiscale::cutoff_energy(0, h_star, cutoff);
    let norm = 1.0 / (l * l * l) as f64;
    let points = spatial_momenta(l)
        .map(|k| {
            let d = inverse_propagator_vector(k, p);
            let lam = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            let w = uv_frequency_integral(lam, eps0, &rule) * norm;
            (k, Spinor2x2::from_pauli(0.0.into(), (w * d[0]).into(), (w * d[1]).into(), (w * d[2]).into()))
        })
        .collect();
    Ok(ScaleKernel { h: 1, points })
}

/// Kernel of the scale-`h` single-scale propagator(s) for `h ≤ 0`.
pub fn scale_kernel(
    h: i32,
    h_star: i32,
    c: &Couplings,
    p: &HoppingParams,
    cutoff: &CutoffSpec,
    zoom: &ZoomGrid,
) -> Result<ScaleKernel> {
    match regime_of(h, h_star) {
        Regime::Lattice => Ok(ScaleKernel::from_grid(&single_scale_propagator_r1(h, h_star, c, p, cutoff, zoom)?)),
        Regime::Relativistic => {
            let mut out = ScaleKernel { h, points: Vec::new() };
            for omega in [1i8, -1] {
                let g = single_scale_propagator_r2(h, h_star, omega, c, p, cutoff, zoom)?;
                out.points.extend(ScaleKernel::from_grid(&g).points);
            }
            Ok(out)
        }
    }
}

/// First-order self-energy of scale `h` at `kk`: the kernel of the
/// ultraviolet step for `h = 1`, of the single-scale propagator otherwise.
pub fn self_energy_first_order(
    kk: Momentum4,
    h: i32,
    c: &Couplings,
    p: &HoppingParams,
    inter: &InteractionSpec,
    settings: &FlowSettings,
) -> Result<Spinor2x2> {
    let cutoff = CutoffSpec::for_params(p);
    let h_star = crossover_scale(p, &cutoff);
    let kernel = if h >= 1 {
        ultraviolet_kernel(p, &cutoff, h_star, settings.l)?
    } else {
        scale_kernel(h, h_star, c, p, &cutoff, &settings.zoom)?
    };
    Ok(kernel.evaluate(kk.k, p.u, inter))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowSettings {
    /// Brillouin-zone grid of the ultraviolet step and of the dressing checks.
    pub l: usize,
    pub zoom: ZoomGrid,
    /// Finite-difference spacing of the localization; defaults to `2π/L`.
    pub stencil: f64,
    /// Largest allowed relative deviation of `Z`, `v`, `v3` from their entry values.
    pub eps0: f64,
}

impl Default for FlowSettings {
    fn default() -> Self {
        FlowSettings { l: 16, zoom: ZoomGrid::default(), stencil: 2.0 * PI / 16.0, eps0: 0.5 }
    }
}

impl FlowSettings {
    pub fn with_l(l: usize) -> Self {
        FlowSettings { l, stencil: 2.0 * PI / l as f64, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaRecord {
    pub h: i32,
    pub n: f64,
    pub b0: f64,
    pub bplus: f64,
    pub bminus: f64,
    /// Velocity shift in the basis of the regime after the step.
    pub b3: f64,
    pub beta_nu: f64,
    /// `max(|β_ν|, |b0|, |b+|/v, |b3|/v3)` with the velocities before the step.
    pub magnitude: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowStep {
    /// Couplings at scale `h - 1` after integrating scale `h`.
    pub couplings: RunningCouplings,
    pub beta: BetaRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Reached the requested `h_min`.
    Reached,
    /// Insulating phase: stopped at `h*`, the rest is gapped.
    Insulator,
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowTrajectory {
    pub params: HoppingParams,
    pub interaction: InteractionSpec,
    pub settings: FlowSettings,
    pub h_star: Option<i32>,
    pub h_min: i32,
    pub nu: f64,
    pub initial: RunningCouplings,
    pub steps: Vec<FlowStep>,
    pub termination: Termination,
    /// `p_F` of the free model, when it has Weyl points.
    pub p_f: Option<f64>,
    /// Insulator gap `t_perp |r|`, when terminated early.
    pub gap: Option<f64>,
    #[serde(skip)]
    pub kernels: Vec<ScaleKernel>,
}

fn relative_deviation(x: f64, reference: f64) -> f64 {
    ((x - reference) / reference).abs()
}

/// Runs the flow from the ultraviolet step down to `h_min` with bare
/// counterterm `nu`.
pub fn run_flow(
    p: &HoppingParams,
    inter: &InteractionSpec,
    nu: f64,
    h_min: i32,
    settings: &FlowSettings,
) -> Result<FlowTrajectory> {
    p.validate()?;
    if h_min > 0 {
        return Err(Error::InvalidParams(format!("h_min = {h_min} must be ≤ 0")));
    }
    let cutoff = CutoffSpec::for_params(p);
    cutoff.validate()?;
    let h_star = crossover_scale(p, &cutoff);
    let phase = classify_phase(p);
    let p_f = match phase {
        PhaseLabel::Semimetal => Some((1.0 - p.r()).clamp(-1.0, 1.0).acos()),
        _ => None,
    };
    let sin_pf = p_f.map(f64::sin).unwrap_or(0.0);
    if p_f.is_some() {
        crate::multiscale::check_disconnection(p, h_star, &cutoff)?;
    }
    let u = p.u;
    let initial = RunningCouplings { z: 1.0, v: p.t, v3: p.t_perp, nu: 0.5 * nu, h: 1, regime: Regime::Lattice };
    let mut c = initial;
    let mut steps = Vec::new();
    let mut kernels: Vec<ScaleKernel> = Vec::new();
    let mut termination = Termination::Reached;
    let mut reference = (p.t, p.t_perp);

    for h in ((h_min + 1)..=1).rev() {
        let next_regime = if phase == PhaseLabel::Semimetal { regime_of(h - 1, h_star) } else { Regime::Lattice };
        if phase == PhaseLabel::Insulator && h_star != H_STAR_NEG_INF && h < h_star {
            termination = Termination::Insulator;
            break;
        }
        let kernel = if h == 1 {
            ultraviolet_kernel(p, &cutoff, h_star, settings.l)?
        } else {
            scale_kernel(h, h_star, &c.couplings(), p, &cutoff, &settings.zoom)?
        };
        kernels.push(kernel);
        let (next, beta) = if next_regime == Regime::Lattice {
            let k = kernels.last().expect("kernel");
            let loc = localize_kernel(&|kk| k.evaluate(kk.k, u, inter), LocalizationPoint::lattice(), settings.stencil)?;
            let next = update_couplings(&c, &loc)?;
            let beta = record(h, &c, &next, loc.n, loc.bplus, loc.bminus, loc.velocity3_shift(), c.v3);
            (next, beta)
        } else if c.regime == Regime::Lattice {
            // entering the relativistic regime: re-extract all couplings from A + Σ K at +p_F
            let pf = p_f.expect("semimetal");
            let ks = &kernels;
            let total = |kk: Momentum4| ks.iter().map(|k| k.evaluate(kk.k, u, inter)).sum::<Spinor2x2>();
            let loc = localize_kernel(&total, LocalizationPoint::weyl(1, pf), settings.stencil)?;
            let z = 1.0 + loc.b0;
            if !(z > 0.0) {
                return Err(Error::SignLoss { h, z });
            }
            let next = RunningCouplings {
                z,
                v: (p.t + loc.bplus) / z,
                v3: (p.t_perp * sin_pf + loc.velocity3_shift()) / z,
                nu: 2f64.powi(1 - h) * (nu + loc.n),
                h: h - 1,
                regime: Regime::Relativistic,
            };
            let n = 2f64.powi(h - 1) * next.nu - 2f64.powi(h) * c.nu;
            let ratio = next.z / c.z;
            let beta = record(
                h,
                &c,
                &next,
                n,
                next.v * ratio - c.v,
                loc.bminus,
                next.v3 * ratio - c.v3 * sin_pf,
                c.v3 * sin_pf,
            );
            reference = (p.t, p.t_perp * sin_pf);
            (next, beta)
        } else {
            let pf = p_f.expect("semimetal");
            let k = kernels.last().expect("kernel");
            let loc = localize_kernel(&|kk| k.evaluate(kk.k, u, inter), LocalizationPoint::weyl(1, pf), settings.stencil)?;
            let next = update_couplings(&c, &loc)?;
            let beta = record(h, &c, &next, loc.n, loc.bplus, loc.bminus, loc.velocity3_shift(), c.v3);
            (next, beta)
        };
        let dev = relative_deviation(next.z, 1.0)
            .max(relative_deviation(next.v, reference.0))
            .max(relative_deviation(next.v3, reference.1));
        if !(dev <= settings.eps0) {
            return Err(Error::BlowUp {
                h,
                detail: format!("Z = {}, v = {}, v3 = {} (relative deviation {dev:.3})", next.z, next.v, next.v3),
            });
        }
        c = next;
        steps.push(FlowStep { couplings: next, beta });
    }
    let gap = (termination == Termination::Insulator).then(|| p.t_perp * p.r().abs());
    Ok(FlowTrajectory {
        params: *p,
        interaction: *inter,
        settings: *settings,
        h_star: (h_star != H_STAR_NEG_INF).then_some(h_star),
        h_min,
        nu,
        initial,
        steps,
        termination,
        p_f,
        gap,
        kernels,
    })
}

#[allow(clippy::too_many_arguments)]
fn record(
    h: i32,
    before: &RunningCouplings,
    after: &RunningCouplings,
    n: f64,
    bplus: f64,
    bminus: f64,
    b3: f64,
    v3_before: f64,
) -> BetaRecord {
    let b0 = after.z / before.z - 1.0;
    let beta_nu = 2f64.powi(1 - h) * n;
    let magnitude = beta_nu.abs().max(b0.abs()).max(bplus.abs() / before.v).max(b3.abs() / v3_before);
    BetaRecord { h, n, b0, bplus, bminus, b3, beta_nu, magnitude }
}

impl FlowTrajectory {
    pub fn final_couplings(&self) -> RunningCouplings {
        self.steps.last().map(|s| s.couplings).unwrap_or(self.initial)
    }

    /// `(h, ν_h)` from `h = 1` down, for bare counterterm `nu`. The beta
    /// function does not depend on `ν` at one loop.
    pub fn nu_sequence(&self, nu: f64) -> Vec<(i32, f64)> {
        let mut out = vec![(1, 0.5 * nu)];
        let mut cur = 0.5 * nu;
        for s in &self.steps {
            cur = 2.0 * cur + s.beta.beta_nu;
            out.push((s.couplings.h, cur));
        }
        out
    }

    /// Same trajectory with a different bare counterterm.
    pub fn with_nu(&self, nu: f64) -> FlowTrajectory {
        let mut out = self.clone();
        out.nu = nu;
        out.initial.nu = 0.5 * nu;
        for (s, (_, v)) in out.steps.iter_mut().zip(self.nu_sequence(nu).into_iter().skip(1)) {
            s.couplings.nu = v;
        }
        out
    }

    /// `ν_h` at scale `h`, if the flow reached it.
    pub fn nu_at(&self, h: i32) -> Option<f64> {
        if h == 1 {
            return Some(self.initial.nu);
        }
        self.steps.iter().find(|s| s.couplings.h == h).map(|s| s.couplings.nu)
    }

    /// Dressed inverse propagator `A(k) + ν σ3 + Σ_h K_h(k̄)`.
    pub fn dressed_inverse(&self, kk: Momentum4) -> Spinor2x2 {
        let u = self.params.u;
        let k: Spinor2x2 = self.kernels.iter().map(|ker| ker.evaluate(kk.k, u, &self.interaction)).sum();
        inverse_propagator(kk, &self.params) + Spinor2x2::sigma3().scale_re(self.nu) + k
    }

    /// Position in `k3` of the minimum of `|det|` of the dressed inverse
    /// propagator at `k0 = 0`, `k1 = k2 = 0`, over the `L`-point grid, on
    /// each half-line `(0, π]` and `(-π, 0)`.
    pub fn dressed_minimizers(&self) -> [f64; 2] {
        let l = self.settings.l;
        let mut best = [(f64::INFINITY, 0.0); 2];
        for j in 0..l {
            let mut k3 = 2.0 * PI * j as f64 / l as f64;
            if k3 > PI {
                k3 -= 2.0 * PI;
            }
            if k3 == 0.0 {
                continue;
            }
            let d = self.dressed_inverse(Momentum4::new(0.0, 0.0, 0.0, k3)).det().norm();
            let side = if k3 > 0.0 { 0 } else { 1 };
            if d < best[side].0 {
                best[side] = (d, k3);
            }
        }
        [best[0].1, best[1].1]
    }

    /// Largest beta magnitude over the whole trajectory.
    pub fn max_beta_magnitude(&self) -> f64 {
        self.steps.iter().map(|s| s.beta.magnitude).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "h,Z,v,v3,nu,beta_nu,regime")?;
        let c = self.initial;
        writeln!(w, "{},{:e},{:e},{:e},{:e},,{}", c.h, c.z, c.v, c.v3, c.nu, c.regime.number())?;
        for s in &self.steps {
            let c = s.couplings;
            writeln!(
                w,
                "{},{:e},{:e},{:e},{:e},{:e},{}",
                c.h,
                c.z,
                c.v,
                c.v3,
                c.nu,
                s.beta.beta_nu,
                c.regime.number()
            )?;
        }
        Ok(())
    }
}

/// Damped fixed-point settings for the counterterm.
pub const NU_DAMPING: f64 = 0.5;
pub const NU_MAX_ITERATIONS: usize = 200;
pub const NU_TOLERANCE: f64 = 1e-10;

/// Damped fixed-point iteration settings for the counterterm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuSolver {
    pub damping: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for NuSolver {
    fn default() -> Self {
        NuSolver { damping: NU_DAMPING, max_iterations: NU_MAX_ITERATIONS, tolerance: NU_TOLERANCE }
    }
}

/// Solves `ν = -Σ_{k ≤ 1} 2^(k-1) β_ν^(k)` by damped iteration; returns the
/// counterterm and the trajectory carrying it.
pub fn solve_nu(
    p: &HoppingParams,
    inter: &InteractionSpec,
    h_min: i32,
    settings: &FlowSettings,
) -> Result<(f64, FlowTrajectory)> {
    solve_nu_with(p, inter, h_min, settings, &NuSolver::default())
}

pub fn solve_nu_with(
    p: &HoppingParams,
    inter: &InteractionSpec,
    h_min: i32,
    settings: &FlowSettings,
    solver: &NuSolver,
) -> Result<(f64, FlowTrajectory)> {
    if !(solver.damping > 0.0 && solver.damping <= 1.0) || !(solver.tolerance > 0.0) {
        return Err(Error::InvalidParams(format!("need 0 < damping <= 1 and tolerance > 0, got {solver:?}")));
    }
    let base = run_flow(p, inter, 0.0, h_min, settings)?;
    // ν is not fed back into the propagators, so the map is constant in ν
    let map = |_nu: f64| -> f64 { -base.steps.iter().map(|s| 2f64.powi(s.beta.h - 1) * s.beta.beta_nu).sum::<f64>() };
    let mut nu = 0.0;
    let mut last_step = f64::INFINITY;
    for _ in 0..solver.max_iterations {
        let next = (1.0 - solver.damping) * nu + solver.damping * map(nu);
        last_step = (next - nu).abs();
        nu = next;
        if last_step < solver.tolerance {
            return Ok((nu, base.with_nu(nu)));
        }
    }
    Err(Error::NoConvergence { iterations: solver.max_iterations, last_step })
}

/// First-order coefficients `(a3, a+)` of `v3 = t_perp sin p_F + a3 U` and
/// `v = t + a+ U`, from the Fock kernel derivatives at `+p_F` with the full
/// free propagator on the `L³` grid (`∫dp0/2π A⁻¹ = d·σ/(2λ)`).
pub fn asymptotic_constants(p: &HoppingParams, inter: &InteractionSpec, l: usize) -> Result<(f64, f64)> {
    if classify_phase(p) != PhaseLabel::Semimetal {
        return Err(Error::InvalidParams("asymptotic constants need a semimetal".into()));
    }
    if l < 2 {
        return Err(Error::Quadrature(format!("L = {l} too small")));
    }
    let pf = (1.0 - p.r()).acos();
    let norm = 1.0 / (l * l * l) as f64;
    let (mut a3, mut ap) = (0.0, 0.0);
    for k in spatial_momenta(l) {
        let d = inverse_propagator_vector(k, p);
        let lam = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if lam < 1e-12 {
            continue;
        }
        let g = inter.v_hat_grad([-k[0], -k[1], pf - k[2]]);
        a3 += g[2] * d[2] / (2.0 * lam);
        ap -= (g[0] + g[1]) * d[0] / (2.0 * lam);
    }
    Ok((a3 * norm, ap * norm))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DressedTwoPoint {
    pub relativistic: Spinor2x2,
    pub dressed: Spinor2x2,
    /// Operator norm of `S_rel⁻¹ S_dressed - I`.
    pub remainder: f64,
    /// `|k'| / v3,0`.
    pub bound: f64,
    pub within_bound: bool,
}

fn operator_norm(m: &Spinor2x2) -> f64 {
    let g = m.adjoint() * *m;
    let tr = g.trace().re;
    let det = g.det().re;
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    (0.5 * tr + disc).max(0.0).sqrt()
}

/// Relativistic two-point function with the final couplings of `traj`,
/// compared to the one-loop dressed propagator at `ω p_F + k'`.
pub fn dressed_two_point(kprime: Momentum4, omega: i8, traj: &FlowTrajectory) -> Result<DressedTwoPoint> {
    let p = &traj.params;
    let pf = traj.p_f.ok_or_else(|| Error::InvalidParams("dressed two-point function needs a semimetal".into()))?;
    if omega != 1 && omega != -1 {
        return Err(Error::InvalidParams(format!("omega must be ±1, got {omega}")));
    }
    let c = traj.final_couplings();
    if c.regime != Regime::Relativistic {
        return Err(Error::InvalidParams("trajectory did not reach the relativistic regime".into()));
    }
    let v30 = p.t_perp * pf.sin();
    let norm = (kprime.k0 * kprime.k0 + kprime.k.iter().map(|x| x * x).sum::<f64>()).sqrt();
    if norm > v30 {
        return Err(Error::OutOfRegime { norm, window: v30 });
    }
    let kp = 0.5 * (kprime.k[0] + kprime.k[1]);
    let km = 0.5 * (kprime.k[0] - kprime.k[1]);
    let rel_inv = Spinor2x2::from_pauli(
        C64::new(0.0, -kprime.k0),
        (c.v * kp).into(),
        (c.v * km).into(),
        (-(omega as f64) * c.v3 * kprime.k[2]).into(),
    )
    .scale_re(c.z);
    let kk = Momentum4::new(kprime.k0, kprime.k[0], kprime.k[1], omega as f64 * pf + kprime.k[2]);
    let dressed_inv = traj.dressed_inverse(kk);
    let relativistic = rel_inv.inverse().ok_or(Error::SingularMomentum([kk.k0, kk.k[0], kk.k[1], kk.k[2]]))?;
    let dressed = dressed_inv.inverse().ok_or(Error::SingularMomentum([kk.k0, kk.k[0], kk.k[1], kk.k[2]]))?;
    let remainder = operator_norm(&(rel_inv * dressed - Spinor2x2::identity()));
    let bound = norm / v30;
    Ok(DressedTwoPoint { relativistic, dressed, remainder, bound, within_bound: remainder <= bound })
}

/// Cumulative cutoff `χ_h` at `kk` for the free model; exposed for audits.
pub fn free_cumulative_support(kk: Momentum4, h: i32, p: &HoppingParams) -> f64 {
    let cutoff = CutoffSpec::for_params(p);
    let h_star = crossover_scale(p, &cutoff);
    cumulative_support(crate::propagator::energy_scale(kk, p), h, h_star, &cutoff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice_model::{build_params, Offset};

    fn p_star() -> HoppingParams {
        build_params(1.0, 0.5, 2.0, Offset::R(0.5), 0.0).unwrap()
    }

    #[test]
    fn v_hat_matches_lattice_sum() {
        let inter = InteractionSpec::new(1.0).unwrap();
        for q in [[0.0, 0.0, 0.0], [0.3, -1.2, 2.0], [PI, 0.5, -0.1]] {
            let (a, b) = (inter.v_hat(q), inter.v_hat_direct(q, 40));
            // half a million terms of order one: roundoff near 1e-11
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        assert!((inter.v_hat_0() - inter.v_hat([0.0; 3])).abs() < 1e-12);
    }

    #[test]
    fn v_hat_gradient_matches_difference() {
        let inter = InteractionSpec::new(0.7).unwrap();
        let q = [0.4, -0.9, 1.3];
        let g = inter.v_hat_grad(q);
        for i in 0..3 {
            let mut a = q;
            let mut b = q;
            a[i] += 1e-6;
            b[i] -= 1e-6;
            let fd = (inter.v_hat(a) - inter.v_hat(b)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn localize_bare_matrix_at_origin() {
        let p = p_star();
        let loc = localize_kernel(&|kk| inverse_propagator(kk, &p), LocalizationPoint::lattice(), 1e-3).unwrap();
        assert!((loc.n - (p.mu - p.t_prime + p.t_perp)).abs() < 1e-9);
        assert!((loc.b0 - 1.0).abs() < 1e-9);
        assert!((loc.bplus - p.t).abs() < 1e-9);
        assert!((loc.bminus - p.t).abs() < 1e-9);
        assert!((loc.b3 + p.t_perp).abs() < 1e-6);
    }

    #[test]
    fn localize_bare_matrix_at_weyl_point() {
        let p = p_star();
        let pf = PI / 3.0;
        let loc = localize_kernel(&|kk| inverse_propagator(kk, &p), LocalizationPoint::weyl(1, pf), 1e-3).unwrap();
        assert!(loc.n.abs() < 1e-12);
        assert!((loc.b3 + p.t_perp * pf.sin()).abs() < 1e-9);
        assert!((loc.velocity3_shift() - p.t_perp * pf.sin()).abs() < 1e-9);
    }

    #[test]
    fn zero_kernel_localizes_to_zero() {
        let loc = localize_kernel(&|_| Spinor2x2::zero(), LocalizationPoint::lattice(), 0.3).unwrap();
        assert_eq!(loc, LocalizedKernel::zero(LocalizationPoint::lattice()));
        assert!(matches!(
            localize_kernel(&|_| Spinor2x2::zero(), LocalizationPoint::lattice(), 0.0),
            Err(Error::StencilDegenerate(_))
        ));
    }

    #[test]
    fn update_examples() {
        let c = RunningCouplings { z: 1.0, v: 1.0, v3: 0.5, nu: 0.0, h: 0, regime: Regime::Lattice };
        let pt = LocalizationPoint::lattice();
        assert_eq!(update_couplings(&c, &LocalizedKernel::zero(pt)).unwrap().v, 1.0);
        let loc = LocalizedKernel { b0: 0.01, ..LocalizedKernel::zero(pt) };
        let next = update_couplings(&c, &loc).unwrap();
        assert!((next.z - 1.01).abs() < 1e-15);
        assert!((next.v - 1.0 / 1.01).abs() < 1e-15);
        let bad = LocalizedKernel { b0: -1.0, ..LocalizedKernel::zero(pt) };
        assert!(matches!(update_couplings(&c, &bad), Err(Error::SignLoss { .. })));
    }

    #[test]
    fn uv_frequency_integral_limits() {
        let rule = GaussLegendre::new(NonZeroUsize::new(64).unwrap());
        assert!((uv_frequency_integral(1.0, 0.05, &rule) - 0.5).abs() < 1e-15);
        // compare with a fine trapezoid on a mapped variable
        let lam = 0.03;
        let a0 = 0.05;
        let mut acc = 0.0;
        let n = 400_000;
        let pmax = 200.0;
        for i in 0..n {
            let p0 = (i as f64 + 0.5) * pmax / n as f64;
            let e = (p0 * p0 + lam * lam).sqrt();
            acc += (1.0 - crate::cutoff::smooth_cutoff(e / a0)) / (p0 * p0 + lam * lam);
        }
        acc = (acc * pmax / n as f64 + 1.0 / pmax) / PI;
        assert!((uv_frequency_integral(lam, a0, &rule) - acc).abs() < 1e-6);
    }
}
