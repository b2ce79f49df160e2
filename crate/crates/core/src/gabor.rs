//! Gabor sparse-convolution noise.
//!
//! A field is a finite set of weighted impulses, each carrying a Gabor kernel
//! `K exp(-pi sigma^2 (x^2 + y^2)) cos(2 pi F0 (x cos w0 + y sin w0))`.
//! Measurements are embedded in the noise plane with the absolute measurement
//! value as `x` and `ln(bus + 1)` as `y`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use libm::{cos, exp, fabs, log, sin};
use rand::Rng as _;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{Error, Result};

/// Gaussian widths below this are treated as this value when padding the
/// impulse domain, so the padding stays finite.
pub const DEFAULT_SIGMA_FLOOR: f64 = 0.5;

/// `exp(-pi * CUTOFF^2)` is below 1e-20; kernels farther than
/// `CUTOFF / sigma` from a query are skipped by the bucketed evaluator.
const CUTOFF: f64 = 3.84;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaborKernelParams {
    /// Kernel magnitude `K`.
    pub magnitude: f64,
    /// Width parameter of the circular Gaussian.
    pub sigma: f64,
    /// Cosine frequency `F0`, cycles per unit length.
    pub frequency: f64,
    /// Cosine orientation `w0` in radians, `[0, pi)`.
    pub orientation: f64,
}

impl GaborKernelParams {
    pub fn new(magnitude: f64, sigma: f64, frequency: f64, orientation: f64) -> Result<Self> {
        let p = GaborKernelParams {
            magnitude,
            sigma,
            frequency,
            orientation,
        };
        p.validate()?;
        Ok(p)
    }

    /// Like [`GaborKernelParams::new`] but folds the orientation into `[0, pi)`.
    ///
    /// The kernel is pi-periodic in the orientation because the cosine is even.
    pub fn with_wrapped_orientation(
        magnitude: f64,
        sigma: f64,
        frequency: f64,
        orientation: f64,
    ) -> Result<Self> {
        let mut w = orientation % PI;
        if w < 0.0 {
            w += PI;
        }
        if w >= PI {
            w = 0.0;
        }
        Self::new(magnitude, sigma, frequency, w)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.magnitude.is_finite() {
            return Err(Error::invalid("magnitude", "must be finite"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("sigma", format!("{} must be >= 0", self.sigma)));
        }
        if !(self.frequency >= 0.0 && self.frequency.is_finite()) {
            return Err(Error::invalid(
                "frequency",
                format!("{} must be >= 0", self.frequency),
            ));
        }
        if !(self.orientation >= 0.0 && self.orientation < PI) {
            return Err(Error::invalid(
                "orientation",
                format!("{} must lie in [0, pi)", self.orientation),
            ));
        }
        Ok(())
    }
}

/// The Gabor kernel evaluated at offset `(x, y)` from its center.
///
/// At `sigma = 0` the Gaussian factor is exactly 1.
pub fn gabor_kernel(params: &GaborKernelParams, x: f64, y: f64) -> f64 {
    let envelope = if params.sigma == 0.0 {
        1.0
    } else {
        exp(-PI * params.sigma * params.sigma * (x * x + y * y))
    };
    let phase = 2.0 * PI * params.frequency * (x * cos(params.orientation) + y * sin(params.orientation));
    params.magnitude * envelope * cos(phase)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaborImpulse {
    pub x: f64,
    pub y: f64,
    pub weight: f64,
    pub params: GaborKernelParams,
}

/// Axis-aligned rectangle in the noise plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Domain {
    /// `x` in `[0, 1.2]` pu, `y` in `[0, ln 10]`.
    pub fn measurement_plane() -> Self {
        Domain {
            x_min: 0.0,
            x_max: 1.2,
            y_min: 0.0,
            y_max: log(10.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x_max <= self.x_min || self.y_max <= self.y_min {
            return Err(Error::DegenerateDomain(format!("{self:?}")));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn expand(&self, pad: f64) -> Domain {
        Domain {
            x_min: self.x_min - pad,
            x_max: self.x_max + pad,
            y_min: self.y_min - pad,
            y_max: self.y_max + pad,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

/// Impulse count giving 64 expected impulses over the measurement plane.
pub fn default_density() -> f64 {
    64.0 / Domain::measurement_plane().area()
}

/// Padding applied around the query domain for a kernel width.
pub fn padding_for(sigma: f64, sigma_floor: f64) -> f64 {
    3.0 / sigma.max(sigma_floor)
}

/// Seeded impulse positions and signs, independent of kernel parameters.
///
/// Re-tuning a layout with new kernel parameters keeps every impulse where it
/// was, so only the kernel shape changes.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseLayout {
    points: Vec<(f64, f64, f64)>,
    domain: Domain,
    padding: f64,
    sigma_floor: f64,
    seed: u64,
}

impl ImpulseLayout {
    /// Poisson(density * padded area) impulses, uniform over `domain`
    /// expanded by `padding`, with weights uniform on {-1, +1}.
    pub fn generate(
        density: f64,
        domain: Domain,
        padding: f64,
        sigma_floor: f64,
        seed: u64,
    ) -> Result<Self> {
        domain.validate()?;
        if !(density > 0.0 && density.is_finite()) {
            return Err(Error::invalid("density", format!("{density} must be positive")));
        }
        if !(padding >= 0.0 && padding.is_finite()) {
            return Err(Error::invalid("padding", "must be finite and non-negative"));
        }
        if !(sigma_floor > 0.0 && sigma_floor.is_finite()) {
            return Err(Error::invalid("sigma_floor", "must be positive"));
        }
        let padded = domain.expand(padding);
        let mut rng = rng::seeded(seed);
        let lambda = density * padded.area();
        let count = Poisson::new(lambda)
            .map_err(|_| Error::invalid("density", "Poisson rate rejected"))?
            .sample(&mut rng) as usize;
        let points = (0..count)
            .map(|_| {
                let x = rng.random_range(padded.x_min..padded.x_max);
                let y = rng.random_range(padded.y_min..padded.y_max);
                let w = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                (x, y, w)
            })
            .collect();
        Ok(ImpulseLayout {
            points,
            domain,
            padding,
            sigma_floor,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    /// A field using `kernel` at every impulse, keeping only impulses inside
    /// the domain padded for `kernel.sigma`.
    pub fn field(&self, kernel: GaborKernelParams) -> Result<GaborField> {
        kernel.validate()?;
        let pad = padding_for(kernel.sigma, self.sigma_floor).min(self.padding);
        let bounds = self.domain.expand(pad);
        let impulses = self
            .points
            .iter()
            .filter(|(x, y, _)| bounds.contains(*x, *y))
            .map(|&(x, y, weight)| GaborImpulse {
                x,
                y,
                weight,
                params: kernel,
            })
            .collect();
        Ok(GaborField::new(impulses, self.domain, self.seed))
    }
}

/// Builds a field whose impulses cover `domain` padded for the kernel width.
pub fn build_field(
    kernel: GaborKernelParams,
    density: f64,
    domain: Domain,
    seed: u64,
) -> Result<GaborField> {
    build_field_with_floor(kernel, density, domain, DEFAULT_SIGMA_FLOOR, seed)
}

pub fn build_field_with_floor(
    kernel: GaborKernelParams,
    density: f64,
    domain: Domain,
    sigma_floor: f64,
    seed: u64,
) -> Result<GaborField> {
    kernel.validate()?;
    let pad = padding_for(kernel.sigma, sigma_floor);
    ImpulseLayout::generate(density, domain, pad, sigma_floor, seed)?.field(kernel)
}

/// Uniform grid of impulse indices for truncated evaluation.
#[derive(Debug, Clone, PartialEq)]
struct Buckets {
    x0: f64,
    y0: f64,
    cell: f64,
    nx: usize,
    ny: usize,
    radius: f64,
    cells: Vec<Vec<u32>>,
}

impl Buckets {
    fn build(impulses: &[GaborImpulse]) -> Option<Buckets> {
        let min_sigma = impulses
            .iter()
            .map(|i| i.params.sigma)
            .fold(f64::INFINITY, f64::min);
        if impulses.is_empty() || !(min_sigma > 0.0) {
            return None;
        }
        let radius = CUTOFF / min_sigma;
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for i in impulses {
            x0 = x0.min(i.x);
            x1 = x1.max(i.x);
            y0 = y0.min(i.y);
            y1 = y1.max(i.y);
        }
        let cell = radius;
        let nx = (libm::floor((x1 - x0) / cell) as usize) + 1;
        let ny = (libm::floor((y1 - y0) / cell) as usize) + 1;
        // A grid of a handful of cells cannot skip anything useful.
        if nx * ny < 9 {
            return None;
        }
        let mut cells = vec![Vec::new(); nx * ny];
        for (idx, i) in impulses.iter().enumerate() {
            let cx = (libm::floor((i.x - x0) / cell) as usize).min(nx - 1);
            let cy = (libm::floor((i.y - y0) / cell) as usize).min(ny - 1);
            cells[cy * nx + cx].push(idx as u32);
        }
        Some(Buckets {
            x0,
            y0,
            cell,
            nx,
            ny,
            radius,
            cells,
        })
    }

    fn cell_range(&self, lo: f64, hi: f64, origin: f64, n: usize) -> Option<(usize, usize)> {
        let a = libm::floor((lo - origin) / self.cell);
        let b = libm::floor((hi - origin) / self.cell);
        if b < 0.0 || a > (n - 1) as f64 {
            return None;
        }
        Some((a.max(0.0) as usize, (b as usize).min(n - 1)))
    }
}

/// Sparse-convolution noise: the weighted sum of kernels placed at impulses.
#[derive(Debug, Clone, PartialEq)]
pub struct GaborField {
    impulses: Vec<GaborImpulse>,
    domain: Domain,
    seed: u64,
    buckets: Option<Buckets>,
}

impl GaborField {
    pub fn new(impulses: Vec<GaborImpulse>, domain: Domain, seed: u64) -> Self {
        let buckets = Buckets::build(&impulses);
        GaborField {
            impulses,
            domain,
            seed,
            buckets,
        }
    }

    pub fn empty(domain: Domain) -> Self {
        GaborField::new(Vec::new(), domain, 0)
    }

    pub fn impulses(&self) -> &[GaborImpulse] {
        &self.impulses
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Upper bound on `|N(x, y)|`: the sum of `|W_i K_i|`.
    pub fn amplitude_bound(&self) -> f64 {
        self.impulses
            .iter()
            .map(|i| fabs(i.weight * i.params.magnitude))
            .sum()
    }

    /// Literal sum over every impulse.
    pub fn evaluate_direct(&self, x: f64, y: f64) -> f64 {
        self.impulses
            .iter()
            .map(|i| i.weight * gabor_kernel(&i.params, x - i.x, y - i.y))
            .sum()
    }

    /// Sum over impulses within the Gaussian cutoff radius, found through a
    /// uniform grid. Falls back to the direct sum when no grid is worthwhile.
    pub fn evaluate(&self, x: f64, y: f64) -> f64 {
        let Some(b) = &self.buckets else {
            return self.evaluate_direct(x, y);
        };
        let (Some((cx0, cx1)), Some((cy0, cy1))) = (
            b.cell_range(x - b.radius, x + b.radius, b.x0, b.nx),
            b.cell_range(y - b.radius, y + b.radius, b.y0, b.ny),
        ) else {
            return 0.0;
        };
        let mut sum = 0.0;
        for cy in cy0..=cy1 {
            for cx in cx0..=cx1 {
                for &idx in &b.cells[cy * b.nx + cx] {
                    let i = &self.impulses[idx as usize];
                    sum += i.weight * gabor_kernel(&i.params, x - i.x, y - i.y);
                }
            }
        }
        sum
    }
}

/// Noise-plane row of bus `i` (zero-based): `ln(i + 1)`.
pub fn bus_coordinate(i: usize) -> f64 {
    log((i + 1) as f64)
}

/// Per-bus noise values for a frame: `N(|v_i|, ln(i + 1))`.
pub fn perturbation_vector(field: &GaborField, frame: &[f64]) -> Vec<f64> {
    frame
        .iter()
        .enumerate()
        .map(|(i, v)| field.evaluate(fabs(*v), bus_coordinate(i)))
        .collect()
}
