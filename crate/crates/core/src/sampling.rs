//! Initial and reference measures, and empirical observables extracted
//! from a configuration.

use std::f64::consts::TAU;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;

use crate::angular::{AngularFn, AngularLaw};
use crate::error::{Error, Result};
use crate::lattice::{
    box_iter, unit_vector, wrap_angle, Configuration, LatticeIndex, SiteState, Species, Tag,
};

/// Resolution of the angular inverse-CDF table used by [`sample_initial`].
pub const ANGULAR_QUADRATURE: usize = 512;

/// Spatial modulation of a species density, as a multiplicative factor.
#[derive(Debug, Clone, PartialEq)]
pub enum SpatialShape {
    Constant,
    /// `1 + amp cos(2π(k1 u1 + k2 u2) + phase)`
    Fourier {
        amp: f64,
        k1: i32,
        k2: i32,
        phase: f64,
    },
    /// `1 + amp exp(-|u - c|² / (2 w²))` with the periodic minimal-image distance
    Gaussian {
        amp: f64,
        center: [f64; 2],
        width: f64,
    },
}

impl SpatialShape {
    pub fn factor(&self, u: [f64; 2]) -> f64 {
        match *self {
            SpatialShape::Constant => 1.0,
            SpatialShape::Fourier { amp, k1, k2, phase } => {
                1.0 + amp * (TAU * (k1 as f64 * u[0] + k2 as f64 * u[1]) + phase).cos()
            }
            SpatialShape::Gaussian { amp, center, width } => {
                let d = |a: f64, b: f64| {
                    let r = (a - b).rem_euclid(1.0);
                    r.min(1.0 - r)
                };
                let r2 = d(u[0], center[0]).powi(2) + d(u[1], center[1]).powi(2);
                1.0 + amp * (-r2 / (2.0 * width * width)).exp()
            }
        }
    }
}

/// Angular shape `g(θ) = (1 + b cos(m(θ - ψ))) / 2π`, a probability density on the circle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngularShape {
    pub b: f64,
    pub m: u32,
    pub psi: f64,
}

impl AngularShape {
    pub const UNIFORM: AngularShape = AngularShape {
        b: 0.0,
        m: 1,
        psi: 0.0,
    };

    #[inline]
    pub fn density(&self, theta: f64) -> f64 {
        (1.0 + self.b * (self.m as f64 * (theta - self.psi)).cos()) / TAU
    }
}

/// Per-species piece of a density profile: `ζ^σ(u, θ) = mass · factor(u) · g(θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesProfile {
    pub mass: f64,
    pub spatial: SpatialShape,
    pub angular: AngularShape,
}

impl SpeciesProfile {
    pub fn zero() -> Self {
        Self {
            mass: 0.0,
            spatial: SpatialShape::Constant,
            angular: AngularShape::UNIFORM,
        }
    }

    /// `ρ^σ_0(u) = ∫ ζ^σ(u, θ) dθ`.
    #[inline]
    pub fn density(&self, u: [f64; 2]) -> f64 {
        self.mass * self.spatial.factor(u)
    }

    #[inline]
    pub fn zeta(&self, u: [f64; 2], theta: f64) -> f64 {
        self.density(u) * self.angular.density(theta)
    }
}

/// Pair of density profile functions `(ζ^a, ζ^p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityProfile {
    pub active: SpeciesProfile,
    pub passive: SpeciesProfile,
}

impl DensityProfile {
    pub fn constant(rho_a: f64, rho_p: f64) -> Self {
        Self {
            active: SpeciesProfile {
                mass: rho_a,
                ..SpeciesProfile::zero()
            },
            passive: SpeciesProfile {
                mass: rho_p,
                ..SpeciesProfile::zero()
            },
        }
    }

    pub fn species(&self, s: Species) -> &SpeciesProfile {
        match s {
            Species::Active => &self.active,
            Species::Passive => &self.passive,
        }
    }

    pub fn family(&self) -> &'static str {
        match (&self.active.spatial, &self.passive.spatial) {
            (SpatialShape::Constant, SpatialShape::Constant) => "constant",
            (SpatialShape::Gaussian { .. }, _) | (_, SpatialShape::Gaussian { .. }) => "gaussian",
            _ => "fourier",
        }
    }

    /// Check non-negativity and the exclusion cap on a dense grid.
    pub fn validate(&self) -> Result<()> {
        const CHECK: usize = 256;
        for sp in [&self.active, &self.passive] {
            if !(sp.mass.is_finite() && sp.mass >= 0.0) {
                return Err(Error::invalid(format!(
                    "species mass {} must be non-negative",
                    sp.mass
                )));
            }
            if !(sp.angular.b.abs() <= 1.0) {
                return Err(Error::invalid(format!(
                    "angular amplitude {} would make ζ negative",
                    sp.angular.b
                )));
            }
            if let SpatialShape::Gaussian { width, .. } = sp.spatial {
                if !(width > 0.0) {
                    return Err(Error::invalid("gaussian width must be positive"));
                }
            }
        }
        for j in 0..CHECK {
            for i in 0..CHECK {
                let u = [i as f64 / CHECK as f64, j as f64 / CHECK as f64];
                let a = self.active.density(u);
                let p = self.passive.density(u);
                if a < 0.0 || p < 0.0 {
                    return Err(Error::invalid(format!(
                        "negative density at u = ({}, {})",
                        u[0], u[1]
                    )));
                }
                if a + p > 1.0 + 1e-12 {
                    return Err(Error::ProfileMass {
                        mass: a + p,
                        u0: u[0],
                        u1: u[1],
                    });
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for DensityProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (a, p) = (&self.active, &self.passive);
        write!(f, "{}:rho_a={},rho_p={}", self.family(), a.mass, p.mass)?;
        for (sp, tag) in [(a, "a"), (p, "p")] {
            match sp.spatial {
                SpatialShape::Constant => {}
                SpatialShape::Fourier { amp, k1, k2, phase } => {
                    write!(f, ",amp_{tag}={amp},k1={k1},k2={k2},phase={phase}")?
                }
                SpatialShape::Gaussian { amp, center, width } => write!(
                    f,
                    ",amp_{tag}={amp},cx={},cy={},width={width}",
                    center[0], center[1]
                )?,
            }
            let g = sp.angular;
            if g.b != 0.0 {
                write!(f, ",b_{tag}={},m_{tag}={},psi_{tag}={}", g.b, g.m, g.psi)?;
            }
        }
        Ok(())
    }
}

impl FromStr for DensityProfile {
    type Err = Error;

    /// `family:key=value,...` with family in `constant | fourier | gaussian`.
    ///
    /// Keys: `rho_a rho_p` (background masses), `amp` / `amp_a` / `amp_p`,
    /// `k1 k2 phase` (fourier), `cx cy width` (gaussian), and the angular
    /// shape `b_a m_a psi_a b_p m_p psi_p`.
    fn from_str(s: &str) -> Result<Self> {
        let (family, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut kv = std::collections::BTreeMap::new();
        for item in rest.split(',').map(str::trim).filter(|x| !x.is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("profile item {item:?} is not key=value")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("profile value {v:?} for {k}")))?;
            kv.insert(k.trim().to_string(), v);
        }
        let known = [
            "rho_a", "rho_p", "amp", "amp_a", "amp_p", "k1", "k2", "phase", "cx", "cy", "width",
            "b_a", "m_a", "psi_a", "b_p", "m_p", "psi_p",
        ];
        if let Some(k) = kv.keys().find(|k| !known.contains(&k.as_str())) {
            return Err(Error::Parse(format!("unknown profile key {k:?}")));
        }
        let get = |k: &str, d: f64| kv.get(k).copied().unwrap_or(d);
        let amp = get("amp", 0.0);
        let spatial = |tag: &str| -> Result<SpatialShape> {
            let a = get(&format!("amp_{tag}"), amp);
            Ok(match family.trim() {
                "constant" => SpatialShape::Constant,
                "fourier" => SpatialShape::Fourier {
                    amp: a,
                    k1: get("k1", 1.0) as i32,
                    k2: get("k2", 0.0) as i32,
                    phase: get("phase", 0.0),
                },
                "gaussian" => SpatialShape::Gaussian {
                    amp: a,
                    center: [get("cx", 0.5), get("cy", 0.5)],
                    width: get("width", 0.1),
                },
                other => return Err(Error::Parse(format!("unknown profile family {other:?}"))),
            })
        };
        let angular = |tag: &str| AngularShape {
            b: get(&format!("b_{tag}"), 0.0),
            m: get(&format!("m_{tag}"), 1.0) as u32,
            psi: get(&format!("psi_{tag}"), 0.0),
        };
        let profile = DensityProfile {
            active: SpeciesProfile {
                mass: get("rho_a", 0.0),
                spatial: spatial("a")?,
                angular: angular("a"),
            },
            passive: SpeciesProfile {
                mass: get("rho_p", 0.0),
                spatial: spatial("p")?,
                angular: angular("p"),
            },
        };
        profile.validate()?;
        Ok(profile)
    }
}

/// Inverse-CDF sampler on a uniform angular grid.
#[derive(Debug, Clone)]
pub(crate) struct AngularSampler {
    cdf: Vec<f64>,
}

impl AngularSampler {
    pub(crate) fn new(shape: &AngularShape, bins: usize) -> Self {
        let d = TAU / bins as f64;
        let mut cdf = Vec::with_capacity(bins);
        let mut acc = 0.0;
        for k in 0..bins {
            acc += shape.density((k as f64 + 0.5) * d).max(0.0);
            cdf.push(acc);
        }
        for c in &mut cdf {
            *c /= acc;
        }
        Self { cdf }
    }

    pub(crate) fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        let k = self
            .cdf
            .partition_point(|c| *c <= u)
            .min(self.cdf.len() - 1);
        let d = TAU / self.cdf.len() as f64;
        wrap_angle((k as f64 + rng.gen::<f64>()) * d)
    }
}

/// Draw a configuration from the product measure associated with `profile`.
pub fn sample_initial<R: Rng + ?Sized>(
    profile: &DensityProfile,
    n: usize,
    rng: &mut R,
) -> Result<Configuration> {
    if n == 0 {
        return Err(Error::invalid("lattice side must be positive"));
    }
    profile.validate()?;
    let sa = AngularSampler::new(&profile.active.angular, ANGULAR_QUADRATURE);
    let sp = AngularSampler::new(&profile.passive.angular, ANGULAR_QUADRATURE);
    let mut cfg = Configuration::empty(n);
    for i in 0..n * n {
        let u = LatticeIndex::from_linear(i, n).position(n);
        let pa = profile.active.density(u);
        let pp = profile.passive.density(u);
        let r: f64 = rng.gen();
        if r < pa {
            cfg.set_linear(i, SiteState::active(sa.sample(rng)));
        } else if r < pa + pp {
            cfg.set_linear(i, SiteState::passive(sp.sample(rng)));
        }
    }
    Ok(cfg)
}

/// Parameters of a homogeneous product (grand canonical) measure.
#[derive(Debug, Clone, PartialEq)]
pub struct GrandCanonicalParams {
    pub alpha_a: f64,
    pub alpha_p: f64,
    pub law_a: AngularLaw,
    pub law_p: AngularLaw,
}

impl GrandCanonicalParams {
    /// The uniform-angle measure `μ*_α`.
    pub fn uniform(alpha_a: f64, alpha_p: f64) -> Result<Self> {
        let gc = Self {
            alpha_a,
            alpha_p,
            law_a: AngularLaw::Uniform,
            law_p: AngularLaw::Uniform,
        };
        gc.validate()?;
        Ok(gc)
    }

    pub fn validate(&self) -> Result<()> {
        for a in [self.alpha_a, self.alpha_p] {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::DensityOutOfRange { value: a });
            }
        }
        if self.alpha_a + self.alpha_p > 1.0 + 1e-15 {
            return Err(Error::invalid(format!(
                "alpha_a + alpha_p = {} > 1",
                self.alpha_a + self.alpha_p
            )));
        }
        Ok(())
    }

    pub fn alpha(&self) -> f64 {
        self.alpha_a + self.alpha_p
    }

    pub fn law(&self, s: Species) -> &AngularLaw {
        match s {
            Species::Active => &self.law_a,
            Species::Passive => &self.law_p,
        }
    }

    pub fn density(&self, s: Species) -> f64 {
        match s {
            Species::Active => self.alpha_a,
            Species::Passive => self.alpha_p,
        }
    }

    /// Draw one site.
    pub fn sample_site<R: Rng + ?Sized>(&self, rng: &mut R) -> SiteState {
        let r: f64 = rng.gen();
        if r < self.alpha_a {
            SiteState::active(self.law_a.sample_from(rng.gen(), rng.gen()))
        } else if r < self.alpha_a + self.alpha_p {
            SiteState::passive(self.law_p.sample_from(rng.gen(), rng.gen()))
        } else {
            SiteState::EMPTY
        }
    }
}

pub fn sample_grand_canonical<R: Rng + ?Sized>(
    gc: &GrandCanonicalParams,
    n: usize,
    rng: &mut R,
) -> Result<Configuration> {
    gc.validate()?;
    if n == 0 {
        return Err(Error::invalid("lattice side must be positive"));
    }
    let mut cfg = Configuration::empty(n);
    for i in 0..n * n {
        cfg.set_linear(i, gc.sample_site(rng));
    }
    Ok(cfg)
}

/// Which particles an observable counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpeciesFilter {
    Active,
    Passive,
    Any,
}

impl SpeciesFilter {
    #[inline]
    fn admits(self, tag: Tag) -> bool {
        match self {
            SpeciesFilter::Active => tag == Tag::Active,
            SpeciesFilter::Passive => tag == Tag::Passive,
            SpeciesFilter::Any => tag != Tag::Empty,
        }
    }
}

impl From<Species> for SpeciesFilter {
    fn from(s: Species) -> Self {
        match s {
            Species::Active => SpeciesFilter::Active,
            Species::Passive => SpeciesFilter::Passive,
        }
    }
}

/// `(2l+1)^{-2} Σ_{y ∈ B_l(x)} ω(θ_y) [y holds species]`.
pub fn empirical_density(
    cfg: &Configuration,
    x: LatticeIndex,
    l: usize,
    species: SpeciesFilter,
    omega: &AngularFn,
) -> Result<f64> {
    let side = (2 * l + 1) as f64;
    let sum: f64 = box_iter(x, l, cfg.n())?
        .map(|y| cfg.get(y))
        .filter(|s| species.admits(s.tag()))
        .map(|s| omega.eval(s.angle()))
        .sum();
    Ok(sum / (side * side))
}

/// Mollified density, angular histogram and polarization fields on a grid
/// of `cells × cells` points.
///
/// Cell `(i, j)` sits at the macroscopic point `(i, j) / cells`. Histogram
/// bin `k` covers `[kΔθ, (k+1)Δθ)`; its entry is the box-averaged number of
/// particles with angle in that bin, so the bins of a cell sum to `ρ^σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalField {
    pub cells: usize,
    pub ntheta: usize,
    pub rho_a: Vec<f64>,
    pub rho_p: Vec<f64>,
    pub px: Vec<f64>,
    pub py: Vec<f64>,
    /// `cells² × ntheta`, cell-major.
    pub hist_a: Vec<f64>,
    pub hist_p: Vec<f64>,
}

impl EmpiricalField {
    pub fn zeros(cells: usize, ntheta: usize) -> Self {
        let c2 = cells * cells;
        Self {
            cells,
            ntheta,
            rho_a: vec![0.0; c2],
            rho_p: vec![0.0; c2],
            px: vec![0.0; c2],
            py: vec![0.0; c2],
            hist_a: vec![0.0; c2 * ntheta],
            hist_p: vec![0.0; c2 * ntheta],
        }
    }

    #[inline]
    pub fn rho(&self, cell: usize) -> f64 {
        self.rho_a[cell] + self.rho_p[cell]
    }

    pub fn rho_species(&self, s: Species) -> &[f64] {
        match s {
            Species::Active => &self.rho_a,
            Species::Passive => &self.rho_p,
        }
    }

    pub fn hist(&self, s: Species) -> &[f64] {
        match s {
            Species::Active => &self.hist_a,
            Species::Passive => &self.hist_p,
        }
    }

    pub fn header(ntheta: usize) -> Vec<String> {
        let mut h: Vec<String> = ["cell_x", "cell_y", "rho", "rho_a", "rho_p", "px", "py"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for tag in ["a", "p"] {
            h.extend((0..ntheta).map(|k| format!("h_{tag}_{k}")));
        }
        h
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(Self::header(self.ntheta)).map_err(csv_err)?;
        let mut row = Vec::with_capacity(7 + 2 * self.ntheta);
        for c in 0..self.cells * self.cells {
            row.clear();
            row.push((c % self.cells).to_string());
            row.push((c / self.cells).to_string());
            for v in [
                self.rho(c),
                self.rho_a[c],
                self.rho_p[c],
                self.px[c],
                self.py[c],
            ] {
                row.push(v.to_string());
            }
            for h in [&self.hist_a, &self.hist_p] {
                row.extend(
                    h[c * self.ntheta..(c + 1) * self.ntheta]
                        .iter()
                        .map(|v| v.to_string()),
                );
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let header: Vec<String> = r
            .headers()
            .map_err(csv_err)?
            .iter()
            .map(String::from)
            .collect();
        if header.len() < 7 || (header.len() - 7) % 2 != 0 {
            return Err(Error::Parse(format!(
                "{}: unexpected column count {}",
                path.display(),
                header.len()
            )));
        }
        let ntheta = (header.len() - 7) / 2;
        if header != Self::header(ntheta) {
            return Err(Error::Parse(format!(
                "{}: header does not match the field schema",
                path.display()
            )));
        }
        let rows: Vec<csv::StringRecord> = r
            .records()
            .collect::<std::result::Result<_, _>>()
            .map_err(csv_err)?;
        let cells = (rows.len() as f64).sqrt().round() as usize;
        if cells * cells != rows.len() {
            return Err(Error::Parse(format!(
                "{}: {} rows is not a square grid",
                path.display(),
                rows.len()
            )));
        }
        let mut f = Self::zeros(cells, ntheta);
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Parse(format!("{}: bad number {s:?}", path.display())))
        };
        for row in &rows {
            let x: usize = row[0]
                .parse()
                .map_err(|_| Error::Parse("bad cell_x".into()))?;
            let y: usize = row[1]
                .parse()
                .map_err(|_| Error::Parse("bad cell_y".into()))?;
            if x >= cells || y >= cells {
                return Err(Error::Parse(format!(
                    "{}: cell ({x}, {y}) out of range",
                    path.display()
                )));
            }
            let c = y * cells + x;
            f.rho_a[c] = num(&row[3])?;
            f.rho_p[c] = num(&row[4])?;
            f.px[c] = num(&row[5])?;
            f.py[c] = num(&row[6])?;
            for k in 0..ntheta {
                f.hist_a[c * ntheta + k] = num(&row[7 + k])?;
                f.hist_p[c * ntheta + k] = num(&row[7 + ntheta + k])?;
            }
        }
        Ok(f)
    }
}

/// Periodic box sum of half-width `l` applied along both axes.
fn box_sum(data: &[f64], n: usize, l: usize, out: &mut [f64], scratch: &mut [f64]) {
    for y in 0..n {
        let row = &data[y * n..(y + 1) * n];
        for x in 0..n {
            let mut s = 0.0;
            for d in 0..=2 * l {
                s += row[(x + n + d - l) % n];
            }
            scratch[y * n + x] = s;
        }
    }
    for y in 0..n {
        for x in 0..n {
            let mut s = 0.0;
            for d in 0..=2 * l {
                s += scratch[((y + n + d - l) % n) * n + x];
            }
            out[y * n + x] = s;
        }
    }
}

/// Box radius `⌊εn⌋` of the mollifier at lattice side `n`.
pub fn mollifier_radius(eps: f64, n: usize) -> Result<usize> {
    let en = eps * n as f64;
    if !(en >= 1.0) {
        return Err(Error::invalid(format!(
            "mollifier ε n = {en} < 1 is narrower than one site"
        )));
    }
    let l = (en + 1e-9).floor() as usize;
    if 2 * l + 1 > n {
        return Err(Error::RadiusTooLarge { radius: l, n });
    }
    Ok(l)
}

/// Mollified fields evaluated at every lattice site.
pub fn mollified_fields(cfg: &Configuration, eps: f64, ntheta: usize) -> Result<EmpiricalField> {
    mollified_fields_on(cfg, eps, ntheta, cfg.n())
}

/// Mollified fields evaluated on a `cells × cells` sub-grid (`cells` must divide `n`).
pub fn mollified_fields_on(
    cfg: &Configuration,
    eps: f64,
    ntheta: usize,
    cells: usize,
) -> Result<EmpiricalField> {
    let n = cfg.n();
    if cells == 0 || n % cells != 0 {
        return Err(Error::invalid(format!(
            "field resolution {cells} must divide lattice side {n}"
        )));
    }
    if ntheta == 0 {
        return Err(Error::invalid("need at least one angular bin"));
    }
    let l = mollifier_radius(eps, n)?;
    let norm = 1.0 / ((2 * l + 1) * (2 * l + 1)) as f64;
    let n2 = n * n;
    let nch = 4 + 2 * ntheta;
    // channels: active, passive, cos·active, sin·active, hist_a[k], hist_p[k]
    let mut raw = vec![0.0; nch * n2];
    let dtheta = TAU / ntheta as f64;
    for (i, s) in cfg.sites().iter().enumerate() {
        let k = ((s.angle() / dtheta) as usize).min(ntheta - 1);
        match s.tag() {
            Tag::Active => {
                let [c, sn] = unit_vector(s.angle());
                raw[i] = 1.0;
                raw[2 * n2 + i] = c;
                raw[3 * n2 + i] = sn;
                raw[(4 + k) * n2 + i] = 1.0;
            }
            Tag::Passive => {
                raw[n2 + i] = 1.0;
                raw[(4 + ntheta + k) * n2 + i] = 1.0;
            }
            Tag::Empty => {}
        }
    }
    let mut summed = vec![0.0; nch * n2];
    let mut scratch = vec![0.0; n2];
    for ch in 0..nch {
        box_sum(
            &raw[ch * n2..(ch + 1) * n2],
            n,
            l,
            &mut summed[ch * n2..(ch + 1) * n2],
            &mut scratch,
        );
    }
    let stride = n / cells;
    let mut f = EmpiricalField::zeros(cells, ntheta);
    for cy in 0..cells {
        for cx in 0..cells {
            let c = cy * cells + cx;
            let i = (cy * stride) * n + cx * stride;
            f.rho_a[c] = summed[i] * norm;
            f.rho_p[c] = summed[n2 + i] * norm;
            f.px[c] = summed[2 * n2 + i] * norm;
            f.py[c] = summed[3 * n2 + i] * norm;
            for k in 0..ntheta {
                f.hist_a[c * ntheta + k] = summed[(4 + k) * n2 + i] * norm;
                f.hist_p[c * ntheta + k] = summed[(4 + ntheta + k) * n2 + i] * norm;
            }
        }
    }
    Ok(f)
}

/// Fraction of sites `x` whose box `B_p(x)` has fewer than two empty sites.
pub fn full_cluster_fraction(cfg: &Configuration, p: usize) -> Result<f64> {
    let n = cfg.n();
    if 2 * p + 1 > n {
        return Err(Error::RadiusTooLarge { radius: p, n });
    }
    let occ: Vec<f64> = cfg
        .sites()
        .iter()
        .map(|s| if s.is_occupied() { 1.0 } else { 0.0 })
        .collect();
    let mut sums = vec![0.0; n * n];
    let mut scratch = vec![0.0; n * n];
    box_sum(&occ, n, p, &mut sums, &mut scratch);
    let volume = ((2 * p + 1) * (2 * p + 1)) as f64;
    let full = sums.iter().filter(|&&s| s > volume - 2.0 + 0.5).count();
    Ok(full as f64 / (n * n) as f64)
}
