//! Speed laws, non-local windows and the windowed density integral.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

type SpeedFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Speed as a function of time and the non-local density `W`.
#[derive(Clone)]
pub enum VelocityLaw {
    Constant(f64),
    /// `free_speed / (1 + scale * W)`
    InverseLinear { free_speed: f64, scale: f64 },
    Custom { f: SpeedFn, congestion: bool },
}

impl fmt::Debug for VelocityLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(c) => write!(f, "Constant({c})"),
            Self::InverseLinear { free_speed, scale } => {
                write!(f, "InverseLinear({free_speed} / (1 + {scale} W))")
            }
            Self::Custom { congestion, .. } => write!(f, "Custom(congestion = {congestion})"),
        }
    }
}

impl VelocityLaw {
    pub fn custom(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static, congestion: bool) -> Self {
        Self::Custom {
            f: Arc::new(f),
            congestion,
        }
    }

    /// The usual `1 / (1 + scale * W)`.
    pub fn inverse_linear(scale: f64) -> Self {
        Self::InverseLinear {
            free_speed: 1.0,
            scale,
        }
    }

    pub fn speed(&self, t: f64, w: f64) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::InverseLinear { free_speed, scale } => free_speed / (1.0 + scale * w),
            Self::Custom { f, .. } => f(t, w),
        }
    }

    pub fn checked_speed(&self, t: f64, w: f64) -> Result<f64> {
        let value = self.speed(t, w);
        if value > 0.0 && value.is_finite() {
            Ok(value)
        } else {
            Err(Error::NonPositiveVelocity { t, w, value })
        }
    }

    /// Nonincreasing in `W`.
    pub fn is_congestion_type(&self) -> bool {
        match self {
            Self::Constant(_) => true,
            Self::InverseLinear { scale, .. } => *scale >= 0.0,
            Self::Custom { congestion, .. } => *congestion,
        }
    }

    /// Samples the law on `[0, horizon] × [0, w_max]` and returns the
    /// smallest speed seen, failing if any sample is not strictly positive.
    pub fn sampled_floor(&self, horizon: f64, w_max: f64) -> Result<f64> {
        let mut floor = f64::INFINITY;
        for i in 0..=16 {
            let t = horizon * i as f64 / 16.0;
            for j in 0..=16 {
                let w = w_max * j as f64 / 16.0;
                floor = floor.min(self.checked_speed(t, w)?);
            }
        }
        Ok(floor)
    }
}

/// Integration window `[b(x), d(x)]` of the non-local term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NonlocalWindow {
    /// `b ≡ 0`, `d ≡ 1`
    WholeLink,
    /// Constant bounds.
    Fixed { b: f64, d: f64 },
    /// Downstream look-ahead: `b(x) = x`, `d(x) = min(x + length, 1)`.
    Ahead { length: f64 },
}

impl NonlocalWindow {
    pub fn bounds(&self, x: f64) -> (f64, f64) {
        match *self {
            Self::WholeLink => (0.0, 1.0),
            Self::Fixed { b, d } => (b, d),
            Self::Ahead { length } => (x, (x + length).min(1.0)),
        }
    }

    pub fn is_whole_link(&self) -> bool {
        match *self {
            Self::WholeLink => true,
            Self::Fixed { b, d } => b == 0.0 && d == 1.0,
            Self::Ahead { .. } => false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::WholeLink => true,
            Self::Fixed { b, d } => (0.0..=1.0).contains(&b) && (0.0..=1.0).contains(&d) && b <= d,
            Self::Ahead { length } => (0.0..=1.0).contains(&length),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid non-local window {self:?}")))
        }
    }
}

/// Piecewise-linear reconstruction of a row of cell averages through the cell
/// centres, extended as a constant to both ends of `[0, len]`. Its integral
/// over the whole interval equals `Σ ρ_i Δx`.
#[derive(Clone, Debug)]
pub struct Reconstruction<'a> {
    rho: &'a [f64],
    dx: f64,
    at_centre: Vec<f64>,
}

impl<'a> Reconstruction<'a> {
    pub fn new(rho: &'a [f64], dx: f64) -> Self {
        let mut at_centre = Vec::with_capacity(rho.len());
        let mut acc = rho.first().map_or(0.0, |r| 0.5 * r * dx);
        for i in 0..rho.len() {
            at_centre.push(acc);
            if i + 1 < rho.len() {
                acc += 0.5 * (rho[i] + rho[i + 1]) * dx;
            }
        }
        Self { rho, dx, at_centre }
    }

    /// `∫_0^x` of the reconstruction.
    pub fn primitive(&self, x: f64) -> f64 {
        let n = self.rho.len();
        if n == 0 {
            return 0.0;
        }
        let first = 0.5 * self.dx;
        let last = (n as f64 - 0.5) * self.dx;
        if x <= first {
            return self.rho[0] * x.max(0.0);
        }
        if x >= last {
            return self.at_centre[n - 1] + self.rho[n - 1] * (x - last);
        }
        let pos = (x - first) / self.dx;
        let i = (pos.floor() as usize).min(n - 2);
        let s = x - (i as f64 + 0.5) * self.dx;
        let slope = (self.rho[i + 1] - self.rho[i]) / self.dx;
        self.at_centre[i] + self.rho[i] * s + 0.5 * slope * s * s
    }

    pub fn integral(&self, a: f64, b: f64) -> f64 {
        self.primitive(b) - self.primitive(a)
    }

    pub fn value(&self, x: f64) -> f64 {
        let n = self.rho.len();
        if n == 0 {
            return 0.0;
        }
        let pos = x / self.dx - 0.5;
        if pos <= 0.0 {
            return self.rho[0];
        }
        if pos >= (n - 1) as f64 {
            return self.rho[n - 1];
        }
        let i = pos.floor() as usize;
        let f = pos - i as f64;
        self.rho[i] * (1.0 - f) + self.rho[i + 1] * f
    }
}

/// Windowed density `∫_{b(x)}^{d(x)} ρ(t, s) ds` for a row of cell averages on
/// the unit link.
pub fn nonlocal_term(rho_row: &[f64], window: &NonlocalWindow, x: f64) -> f64 {
    let dx = 1.0 / rho_row.len().max(1) as f64;
    let (b, d) = window.bounds(x);
    Reconstruction::new(rho_row, dx).integral(b, d)
}

/// Cumulative mass `M(x) = ∫_0^x ρ` of a piecewise-constant row of cell
/// averages; exact for that representation.
#[derive(Clone, Debug)]
pub struct CumulativeMass {
    prefix: Vec<f64>,
    rho: Vec<f64>,
    dx: f64,
}

impl CumulativeMass {
    pub fn new(rho: &[f64], dx: f64) -> Self {
        let mut prefix = Vec::with_capacity(rho.len() + 1);
        let mut acc = 0.0;
        prefix.push(0.0);
        for r in rho {
            acc += r * dx;
            prefix.push(acc);
        }
        Self {
            prefix,
            rho: rho.to_vec(),
            dx,
        }
    }

    pub fn total(&self) -> f64 {
        *self.prefix.last().unwrap()
    }

    pub fn at(&self, x: f64) -> f64 {
        let n = self.rho.len();
        if x <= 0.0 || n == 0 {
            return 0.0;
        }
        let pos = x / self.dx;
        if pos >= n as f64 {
            return self.total();
        }
        let i = pos.floor() as usize;
        self.prefix[i] + self.rho[i] * (x - i as f64 * self.dx)
    }

    pub fn density(&self, x: f64) -> f64 {
        let n = self.rho.len();
        if n == 0 {
            return 0.0;
        }
        let i = ((x / self.dx).floor().max(0.0) as usize).min(n - 1);
        self.rho[i]
    }
}

/// Cell averages of `f` on `n` uniform cells of `[0, len]` by three-point
/// Gauss-Legendre quadrature per cell (exact for piecewise quadratics whose
/// breaks fall on cell edges).
pub fn cell_averages(f: impl Fn(f64) -> f64, n: usize, len: f64) -> Vec<f64> {
    let dx = len / n as f64;
    let r = (0.6f64).sqrt() / 2.0;
    let nodes = [(0.5 - r, 5.0 / 18.0), (0.5, 8.0 / 18.0), (0.5 + r, 5.0 / 18.0)];
    (0..n)
        .map(|i| {
            let x0 = i as f64 * dx;
            nodes.iter().map(|(s, w)| w * f(x0 + s * dx)).sum()
        })
        .collect()
}
