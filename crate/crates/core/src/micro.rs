//! Exact small-box computations under canonical measures: enumeration,
//! moment identities, Monte-Carlo checks of grand-canonical inner
//! products, the confined exclusion generator and its spectral gap.

use std::collections::HashMap;
use std::ops::{Add, Mul};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::angular::AngularFn;
use crate::error::{Error, Result};
use crate::lattice::{wrap_angle, Species, Tag};
use crate::sampling::GrandCanonicalParams;

/// Largest state space [`enumerate_canonical`] will visit.
pub const ENUMERATION_LIMIT: u128 = 10_000_000;

/// Box radius and the particle content `K̂ = (K^a, Θ^a, K^p, Θ^p)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CanonicalState {
    pub l: usize,
    pub theta_a: Vec<f64>,
    pub theta_p: Vec<f64>,
}

impl CanonicalState {
    /// Requires at least two empty sites in the box.
    pub fn new(l: usize, theta_a: Vec<f64>, theta_p: Vec<f64>) -> Result<Self> {
        let cs = Self::new_unchecked(l, theta_a, theta_p)?;
        if cs.k() + 2 > cs.volume() {
            return Err(Error::invalid(format!(
                "{} particles leave fewer than two empty sites in a box of {}",
                cs.k(),
                cs.volume()
            )));
        }
        Ok(cs)
    }

    /// As [`CanonicalState::new`] but admitting up to a full box.
    pub fn new_unchecked(l: usize, mut theta_a: Vec<f64>, mut theta_p: Vec<f64>) -> Result<Self> {
        if theta_a.iter().chain(&theta_p).any(|t| !t.is_finite()) {
            return Err(Error::invalid("angles must be finite"));
        }
        for t in theta_a.iter_mut().chain(theta_p.iter_mut()) {
            *t = wrap_angle(*t);
        }
        theta_a.sort_by(f64::total_cmp);
        theta_p.sort_by(f64::total_cmp);
        let cs = Self {
            l,
            theta_a,
            theta_p,
        };
        if cs.k() > cs.volume() {
            return Err(Error::invalid(format!(
                "{} particles do not fit in {} sites",
                cs.k(),
                cs.volume()
            )));
        }
        Ok(cs)
    }

    pub fn side(&self) -> usize {
        2 * self.l + 1
    }

    pub fn volume(&self) -> usize {
        self.side() * self.side()
    }

    pub fn ka(&self) -> usize {
        self.theta_a.len()
    }

    pub fn kp(&self) -> usize {
        self.theta_p.len()
    }

    pub fn k(&self) -> usize {
        self.ka() + self.kp()
    }

    pub fn angles(&self, s: Species) -> &[f64] {
        match s {
            Species::Active => &self.theta_a,
            Species::Passive => &self.theta_p,
        }
    }

    /// `K^σ / |B_l|`.
    pub fn alpha(&self, s: Species) -> f64 {
        self.angles(s).len() as f64 / self.volume() as f64
    }

    pub fn alpha_total(&self) -> f64 {
        self.k() as f64 / self.volume() as f64
    }

    /// Mean of `ω` over the angle multiset of species `s` (0 if there are none).
    pub fn mean(&self, s: Species, omega: &AngularFn) -> f64 {
        let a = self.angles(s);
        if a.is_empty() {
            0.0
        } else {
            a.iter().map(|t| omega.eval(*t)).sum::<f64>() / a.len() as f64
        }
    }

    /// Population variance of `ω` over the angle multiset of species `s`.
    pub fn variance(&self, s: Species, omega: &AngularFn) -> f64 {
        let a = self.angles(s);
        if a.is_empty() {
            return 0.0;
        }
        let m = self.mean(s, omega);
        a.iter().map(|t| (omega.eval(*t) - m).powi(2)).sum::<f64>() / a.len() as f64
    }

    pub fn kinds(&self) -> Kinds {
        let mut tags = vec![Tag::Empty];
        let mut angles = vec![0.0];
        let mut counts = vec![self.volume() - self.k()];
        for (tag, list) in [(Tag::Active, &self.theta_a), (Tag::Passive, &self.theta_p)] {
            let mut prev: Option<f64> = None;
            for &t in list.iter() {
                if prev == Some(t) {
                    *counts.last_mut().unwrap() += 1;
                } else {
                    tags.push(tag);
                    angles.push(t);
                    counts.push(1);
                    prev = Some(t);
                }
            }
        }
        Kinds {
            tags,
            angles,
            counts,
        }
    }

    /// Number of distinct arrangements in the box.
    pub fn state_count(&self) -> u128 {
        let kinds = self.kinds();
        let mut remaining = self.volume() as u128;
        let mut total: u128 = 1;
        for &c in &kinds.counts[1..] {
            total = total.saturating_mul(binomial(remaining, c as u128));
            remaining -= c as u128;
        }
        total
    }

    /// Short stable hex digest of the angle lists.
    pub fn angles_hash(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (i, list) in [&self.theta_a, &self.theta_p].iter().enumerate() {
            for b in (i as u64)
                .to_le_bytes()
                .into_iter()
                .chain(list.iter().flat_map(|t| t.to_bits().to_le_bytes()))
            {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        format!("{h:016x}")
    }
}

fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r.saturating_mul(n - i) / (i + 1);
    }
    r
}

/// Distinct site contents of a canonical state; code 0 is the empty site.
#[derive(Debug, Clone, PartialEq)]
pub struct Kinds {
    pub tags: Vec<Tag>,
    pub angles: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Site numbering of `B_l`: offsets `(dx, dy) ∈ [−l, l]²` in row-major order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoxGeometry {
    pub l: usize,
}

impl BoxGeometry {
    pub fn side(&self) -> usize {
        2 * self.l + 1
    }

    pub fn volume(&self) -> usize {
        self.side() * self.side()
    }

    pub fn site(&self, (dx, dy): (i32, i32)) -> Option<usize> {
        let l = self.l as i32;
        if dx.abs() > l || dy.abs() > l {
            return None;
        }
        Some(((dy + l) as usize) * self.side() + (dx + l) as usize)
    }

    pub fn offset(&self, i: usize) -> (i32, i32) {
        let l = self.l as i32;
        ((i % self.side()) as i32 - l, (i / self.side()) as i32 - l)
    }

    /// Unordered nearest-neighbour bonds inside the box (no wrap-around).
    pub fn bonds(&self) -> Vec<(usize, usize)> {
        let s = self.side();
        let mut out = Vec::with_capacity(2 * s * (s - 1));
        for y in 0..s {
            for x in 0..s {
                let i = y * s + x;
                if x + 1 < s {
                    out.push((i, i + 1));
                }
                if y + 1 < s {
                    out.push((i, i + s));
                }
            }
        }
        out
    }
}

/// Visit every arrangement of `cs` in lexicographic order of kind codes.
pub fn for_each_state(cs: &CanonicalState, mut visit: impl FnMut(&[u8])) -> Result<u128> {
    let count = cs.state_count();
    if count > ENUMERATION_LIMIT {
        return Err(Error::StateSpaceTooLarge {
            count,
            limit: ENUMERATION_LIMIT,
        });
    }
    let kinds = cs.kinds();
    if kinds.counts.len() > u8::MAX as usize {
        return Err(Error::invalid("too many distinct particle kinds"));
    }
    let mut state: Vec<u8> = Vec::with_capacity(cs.volume());
    for (code, &c) in kinds.counts.iter().enumerate() {
        state.extend(std::iter::repeat(code as u8).take(c));
    }
    loop {
        visit(&state);
        if !next_permutation(&mut state) {
            break;
        }
    }
    Ok(count)
}

fn next_permutation(a: &mut [u8]) -> bool {
    if a.len() < 2 {
        return false;
    }
    let mut i = a.len() - 1;
    while i > 0 && a[i - 1] >= a[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = a.len() - 1;
    while a[j] <= a[i - 1] {
        j -= 1;
    }
    a.swap(i - 1, j);
    a[i..].reverse();
    true
}

/// All arrangements of a canonical state, each carrying weight `1/len`.
#[derive(Debug, Clone)]
pub struct Enumeration {
    pub state: CanonicalState,
    pub kinds: Kinds,
    pub geometry: BoxGeometry,
    /// `len × volume` kind codes.
    codes: Vec<u8>,
}

impl Enumeration {
    pub fn len(&self) -> usize {
        self.codes.len() / self.geometry.volume()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn get(&self, i: usize) -> &[u8] {
        let v = self.geometry.volume();
        &self.codes[i * v..(i + 1) * v]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u8]> {
        self.codes.chunks_exact(self.geometry.volume())
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.len() as f64
    }

    /// Values of an observable on every state.
    pub fn values(&self, obs: &Observable) -> Result<Vec<f64>> {
        obs.check(&self.geometry)?;
        Ok(self
            .iter()
            .map(|s| obs.eval(s, &self.kinds, &self.geometry))
            .collect())
    }

    pub fn expectation(&self, obs: &Observable) -> Result<f64> {
        Ok(self.values(obs)?.iter().sum::<f64>() / self.len() as f64)
    }

    /// `E[f g]` of two value vectors.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() / self.len() as f64
    }

    pub fn mean(&self, f: &[f64]) -> f64 {
        f.iter().sum::<f64>() / self.len() as f64
    }
}

/// Materialize the uniform canonical measure on `Σ_l^K̂`.
pub fn enumerate_canonical(cs: &CanonicalState) -> Result<Enumeration> {
    let geometry = BoxGeometry { l: cs.l };
    let mut codes = Vec::new();
    let count = cs.state_count();
    if count <= ENUMERATION_LIMIT {
        codes.reserve(count as usize * cs.volume());
    }
    for_each_state(cs, |s| codes.extend_from_slice(s))?;
    Ok(Enumeration {
        state: cs.clone(),
        kinds: cs.kinds(),
        geometry,
        codes,
    })
}

/// Exact canonical expectation, streamed without storing the state space.
pub fn canonical_expectation(cs: &CanonicalState, obs: &Observable) -> Result<f64> {
    let geometry = BoxGeometry { l: cs.l };
    obs.check(&geometry)?;
    let kinds = cs.kinds();
    let mut sum = 0.0;
    let n = for_each_state(cs, |s| sum += obs.eval(s, &kinds, &geometry))?;
    Ok(sum / n as f64)
}

/// Expression tree over site primitives; sites are offsets from the box centre.
#[derive(Debug, Clone, PartialEq)]
pub enum Observable {
    Const(f64),
    /// `η_x`
    Occupied((i32, i32)),
    /// `η^σ_x`
    Species(Species, (i32, i32)),
    /// `η^{σ,ω}_x = ω(θ_x) η^σ_x`
    Weighted(Species, AngularFn, (i32, i32)),
    /// `χ_x = (α^p/α) η^a_x − (α^a/α) η^p_x` for the recorded densities.
    Chi {
        site: (i32, i32),
        alpha_a: f64,
        alpha_p: f64,
    },
    /// `(ω(θ_x) − mean) η^σ_x`, centred against the recorded mean.
    Centered {
        species: Species,
        omega: AngularFn,
        mean: f64,
        site: (i32, i32),
    },
    Sum(Vec<Observable>),
    Product(Vec<Observable>),
    Scale(f64, Box<Observable>),
}

impl Observable {
    pub fn eta(site: (i32, i32)) -> Self {
        Observable::Occupied(site)
    }

    pub fn eta_s(s: Species, site: (i32, i32)) -> Self {
        Observable::Species(s, site)
    }

    pub fn weighted(s: Species, omega: &AngularFn, site: (i32, i32)) -> Self {
        Observable::Weighted(s, omega.clone(), site)
    }

    /// `χ_x` with the densities of a canonical state.
    pub fn chi(cs: &CanonicalState, site: (i32, i32)) -> Self {
        Observable::Chi {
            site,
            alpha_a: cs.alpha(Species::Active),
            alpha_p: cs.alpha(Species::Passive),
        }
    }

    /// `η^{σ,ω̂}_x` centred against the canonical mean of `cs`.
    pub fn centered(cs: &CanonicalState, s: Species, omega: &AngularFn, site: (i32, i32)) -> Self {
        Observable::Centered {
            species: s,
            omega: omega.clone(),
            mean: cs.mean(s, omega),
            site,
        }
    }

    fn sites(&self, out: &mut Vec<(i32, i32)>) {
        match self {
            Observable::Const(_) => {}
            Observable::Occupied(x) | Observable::Species(_, x) | Observable::Weighted(_, _, x) => {
                out.push(*x)
            }
            Observable::Chi { site, .. } | Observable::Centered { site, .. } => out.push(*site),
            Observable::Sum(v) | Observable::Product(v) => v.iter().for_each(|o| o.sites(out)),
            Observable::Scale(_, o) => o.sites(out),
        }
    }

    pub fn support(&self) -> Vec<(i32, i32)> {
        let mut v = Vec::new();
        self.sites(&mut v);
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn check(&self, geom: &BoxGeometry) -> Result<()> {
        match self.support().into_iter().find(|x| geom.site(*x).is_none()) {
            Some(x) => Err(Error::invalid(format!(
                "site {x:?} lies outside B_{}",
                geom.l
            ))),
            None => Ok(()),
        }
    }

    #[inline]
    pub fn eval(&self, state: &[u8], kinds: &Kinds, geom: &BoxGeometry) -> f64 {
        let at = |x: (i32, i32)| state[geom.site(x).expect("site checked")] as usize;
        match self {
            Observable::Const(c) => *c,
            Observable::Occupied(x) => (at(*x) != 0) as u8 as f64,
            Observable::Species(s, x) => (kinds.tags[at(*x)] == Tag::from(*s)) as u8 as f64,
            Observable::Weighted(s, w, x) => {
                let k = at(*x);
                if kinds.tags[k] == Tag::from(*s) {
                    w.eval(kinds.angles[k])
                } else {
                    0.0
                }
            }
            Observable::Chi {
                site,
                alpha_a,
                alpha_p,
            } => {
                let a = alpha_a + alpha_p;
                match kinds.tags[at(*site)] {
                    Tag::Active => alpha_p / a,
                    Tag::Passive => -alpha_a / a,
                    Tag::Empty => 0.0,
                }
            }
            Observable::Centered {
                species,
                omega,
                mean,
                site,
            } => {
                let k = at(*site);
                if kinds.tags[k] == Tag::from(*species) {
                    omega.eval(kinds.angles[k]) - mean
                } else {
                    0.0
                }
            }
            Observable::Sum(v) => v.iter().map(|o| o.eval(state, kinds, geom)).sum(),
            Observable::Product(v) => v.iter().map(|o| o.eval(state, kinds, geom)).product(),
            Observable::Scale(c, o) => c * o.eval(state, kinds, geom),
        }
    }

    /// Expectation under the product measure with site densities
    /// `alpha_a, alpha_p` and angles drawn uniformly from the given lists.
    pub fn product_expectation(
        &self,
        alpha_a: f64,
        alpha_p: f64,
        theta_a: &[f64],
        theta_p: &[f64],
    ) -> Result<f64> {
        let support = self.support();
        let l = support
            .iter()
            .map(|(x, y)| x.unsigned_abs().max(y.unsigned_abs()))
            .max()
            .unwrap_or(0) as usize;
        let geom = BoxGeometry { l };
        let mut tags = vec![Tag::Empty];
        let mut angles = vec![0.0];
        let mut probs = vec![1.0 - alpha_a - alpha_p];
        for (tag, list, alpha) in [
            (Tag::Active, theta_a, alpha_a),
            (Tag::Passive, theta_p, alpha_p),
        ] {
            if alpha > 0.0 && list.is_empty() {
                return Err(Error::invalid("positive density needs at least one angle"));
            }
            for &t in list {
                tags.push(tag);
                angles.push(t);
                probs.push(alpha / list.len() as f64);
            }
        }
        let kinds = Kinds {
            counts: vec![0; tags.len()],
            tags,
            angles,
        };
        let sites: Vec<usize> = support.iter().map(|x| geom.site(*x).unwrap()).collect();
        let mut state = vec![0u8; geom.volume()];
        let mut total = 0.0;
        let nk = kinds.tags.len();
        let combos = nk
            .checked_pow(sites.len() as u32)
            .filter(|c| *c <= 10_000_000);
        let combos = combos.ok_or_else(|| {
            Error::invalid("observable support too large for exact product expectation")
        })?;
        for mut c in 0..combos {
            let mut w = 1.0;
            for &s in &sites {
                let k = c % nk;
                c /= nk;
                state[s] = k as u8;
                w *= probs[k];
            }
            if w != 0.0 {
                total += w * self.eval(&state, &kinds, &geom);
            }
        }
        Ok(total)
    }
}

impl Add for Observable {
    type Output = Observable;
    fn add(self, rhs: Observable) -> Observable {
        match self {
            Observable::Sum(mut v) => {
                v.push(rhs);
                Observable::Sum(v)
            }
            other => Observable::Sum(vec![other, rhs]),
        }
    }
}

impl Mul for Observable {
    type Output = Observable;
    fn mul(self, rhs: Observable) -> Observable {
        match self {
            Observable::Product(mut v) => {
                v.push(rhs);
                Observable::Product(v)
            }
            other => Observable::Product(vec![other, rhs]),
        }
    }
}

impl Mul<Observable> for f64 {
    type Output = Observable;
    fn mul(self, rhs: Observable) -> Observable {
        Observable::Scale(self, Box::new(rhs))
    }
}

/// One evaluated identity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub identity_id: String,
    pub witness: String,
    pub l: usize,
    pub ka: usize,
    pub kp: usize,
    pub angles_hash: String,
    pub lhs: f64,
    pub rhs: f64,
    pub abs_err: f64,
}

const X: (i32, i32) = (0, 0);
const Y: (i32, i32) = (1, 0);

/// Type- and angle-blind witnesses `F` for identities at the single site `X`.
fn witnesses_x() -> Vec<(&'static str, Observable)> {
    use Observable as O;
    vec![
        ("1", O::Const(1.0)),
        ("eta_z", O::eta((1, 1))),
        ("1-eta_z", O::Const(1.0) + (-1.0) * O::eta((1, 1))),
        ("eta_x", O::eta(X)),
        ("eta_z*eta_w", O::eta((1, 1)) * O::eta((-1, 0))),
    ]
}

/// Type- and angle-blind witnesses for identities at the pair `X, Y`.
fn witnesses_xy() -> Vec<(&'static str, Observable)> {
    use Observable as O;
    vec![
        ("1", O::Const(1.0)),
        ("eta_z", O::eta((-1, -1))),
        ("eta_x*eta_y", O::eta(X) * O::eta(Y)),
        ("1-eta_z", O::Const(1.0) + (-1.0) * O::eta((-1, -1))),
        ("eta_x*eta_y*eta_z", O::eta(X) * O::eta(Y) * O::eta((0, 1))),
    ]
}

/// Every moment identity for one canonical state and angular pair.
pub fn check_moment_identities(
    cs: &CanonicalState,
    w1: &AngularFn,
    w2: &AngularFn,
) -> Result<Vec<IdentityCheck>> {
    use Observable as O;
    use Species::{Active as A, Passive as P};
    let en = enumerate_canonical(cs)?;
    let (ka, kp, k) = (cs.ka() as f64, cs.kp() as f64, cs.k() as f64);
    let (aa, ap) = (cs.alpha(A), cs.alpha(P));
    let alpha = aa + ap;
    let mut out = Vec::new();
    let mut push = |id: String, witness: &str, lhs: f64, rhs: f64| {
        out.push(IdentityCheck {
            identity_id: id,
            witness: witness.to_string(),
            l: cs.l,
            ka: cs.ka(),
            kp: cs.kp(),
            angles_hash: cs.angles_hash(),
            lhs,
            rhs,
            abs_err: (lhs - rhs).abs(),
        });
    };
    let tag = |w: &AngularFn| w.name();

    if cs.k() >= 1 {
        for (wname, f) in witnesses_x() {
            let base = en.expectation(&(O::eta(X) * f.clone()))?;
            let chi = O::chi(cs, X);
            push(
                "chi_orth".into(),
                wname,
                en.expectation(&(chi.clone() * f.clone()))?,
                0.0,
            );
            push(
                "chi2".into(),
                wname,
                en.expectation(&(chi.clone() * chi * f.clone()))?,
                aa * ap / (alpha * alpha) * base,
            );
            for (s, label, alpha_s) in [(A, "a", aa), (P, "p", ap)] {
                let hat = O::centered(cs, s, w1, X);
                let g = O::eta_s(s.other(), X) * f.clone() + f.clone();
                push(
                    format!("{label}_hat_orth[{}]", tag(w1)),
                    wname,
                    en.expectation(&(hat.clone() * g))?,
                    0.0,
                );
                let v = cs.variance(s, w1);
                push(
                    format!("{label}_hat2[{}]", tag(w1)),
                    wname,
                    en.expectation(&(hat.clone() * hat * f.clone()))?,
                    v * alpha_s / alpha * base,
                );
            }
        }
    }
    if cs.k() >= 2 {
        let kk = k * (k - 1.0);
        for (wname, f) in witnesses_xy() {
            let base = en.expectation(&(O::eta(X) * O::eta(Y) * f.clone()))?;
            let e = |o: O| en.expectation(&(o * f.clone()));
            let pair = |a: O, b: O| a * b;
            push(
                "aa".into(),
                wname,
                e(pair(O::eta_s(A, X), O::eta_s(A, Y)))?,
                ka * (ka - 1.0) / kk * base,
            );
            push(
                "pp".into(),
                wname,
                e(pair(O::eta_s(P, X), O::eta_s(P, Y)))?,
                kp * (kp - 1.0) / kk * base,
            );
            push(
                "ap".into(),
                wname,
                e(pair(O::eta_s(A, X), O::eta_s(P, Y)))?,
                ka * kp / kk * base,
            );
            for (s, label, ks) in [(A, "a", ka), (P, "p", kp)] {
                let m1 = cs.mean(s, w1);
                let m2 = cs.mean(s, w2);
                let m12 = if ks > 0.0 {
                    cs.angles(s)
                        .iter()
                        .map(|t| w1.eval(*t) * w2.eval(*t))
                        .sum::<f64>()
                        / ks
                } else {
                    0.0
                };
                push(
                    format!("{label}w1_{label}w2[{},{}]", tag(w1), tag(w2)),
                    wname,
                    e(pair(O::weighted(s, w1, X), O::weighted(s, w2, Y)))?,
                    ks / kk * (ks * m1 * m2 - m12) * base,
                );
                let v = cs.variance(s, w1);
                push(
                    format!("{label}_hat_{label}_hat[{}]", tag(w1)),
                    wname,
                    e(pair(O::centered(cs, s, w1, X), O::centered(cs, s, w1, Y)))?,
                    -v * ks / kk * base,
                );
            }
            push(
                format!("aw1_pw2[{},{}]", tag(w1), tag(w2)),
                wname,
                e(pair(O::weighted(A, w1, X), O::weighted(P, w2, Y)))?,
                ka * kp / kk * cs.mean(A, w1) * cs.mean(P, w2) * base,
            );
            push(
                "chi_chi".into(),
                wname,
                e(pair(O::chi(cs, X), O::chi(cs, Y)))?,
                -aa * ap / (alpha * alpha * (k - 1.0)) * base,
            );
        }
    }
    Ok(out)
}

/// The identity battery over every admissible `l = 1` state with at most
/// four particles and at most two distinct angles per species.
pub fn identity_battery() -> Result<Vec<IdentityCheck>> {
    const ACTIVE_ANGLES: [f64; 2] = [0.4, 2.5];
    const PASSIVE_ANGLES: [f64; 2] = [1.3, 4.6];
    let pairs = [
        (AngularFn::Cos, AngularFn::Sin),
        (AngularFn::Cos, AngularFn::Cos),
        (AngularFn::Fourier { m: 2, phase: 0.3 }, AngularFn::Sin),
    ];
    let mut out = Vec::new();
    for total in 1..=4usize {
        for ka in 0..=total {
            let kp = total - ka;
            for na in 0..=ka {
                for np in 0..=kp {
                    let mut theta_a = vec![ACTIVE_ANGLES[0]; na];
                    theta_a.extend(std::iter::repeat(ACTIVE_ANGLES[1]).take(ka - na));
                    let mut theta_p = vec![PASSIVE_ANGLES[0]; np];
                    theta_p.extend(std::iter::repeat(PASSIVE_ANGLES[1]).take(kp - np));
                    let cs = CanonicalState::new(1, theta_a, theta_p)?;
                    for (w1, w2) in &pairs {
                        out.extend(check_moment_identities(&cs, w1, w2)?);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Local functions paired in the grand-canonical inner products.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LocalField {
    /// `∇_i η^σ`, or `∇_i η^{σ,ω̂}` when centred.
    Grad { species: Species, centered: bool },
    /// `j^σ_i`, or `j^{σ,ω̂}_i` when centred.
    Current { species: Species, centered: bool },
}

impl LocalField {
    pub fn all() -> [LocalField; 8] {
        use LocalField::*;
        use Species::*;
        [
            Grad {
                species: Active,
                centered: false,
            },
            Grad {
                species: Passive,
                centered: false,
            },
            Grad {
                species: Active,
                centered: true,
            },
            Grad {
                species: Passive,
                centered: true,
            },
            Current {
                species: Active,
                centered: false,
            },
            Current {
                species: Passive,
                centered: false,
            },
            Current {
                species: Active,
                centered: true,
            },
            Current {
                species: Passive,
                centered: true,
            },
        ]
    }

    pub fn currents() -> [LocalField; 4] {
        let a = Self::all();
        [a[4], a[5], a[6], a[7]]
    }

    pub fn name(&self) -> String {
        let (kind, s, c) = match *self {
            LocalField::Grad { species, centered } => ("grad", species, centered),
            LocalField::Current { species, centered } => ("j", species, centered),
        };
        format!("{kind}_{}{}", s.label(), if c { "_hat" } else { "" })
    }

    fn species(&self) -> Species {
        match *self {
            LocalField::Grad { species, .. } | LocalField::Current { species, .. } => species,
        }
    }

    fn centered(&self) -> bool {
        match *self {
            LocalField::Grad { centered, .. } | LocalField::Current { centered, .. } => centered,
        }
    }
}

/// A closed-form entry and its Monte-Carlo estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InnerProductEntry {
    pub first: String,
    pub second: String,
    pub i: usize,
    pub k: usize,
    pub closed: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl InnerProductEntry {
    /// `(estimate − closed)/stderr`; zero when both agree exactly.
    pub fn z(&self) -> f64 {
        let d = self.estimate - self.closed;
        if self.stderr > 0.0 {
            d / self.stderr
        } else if d.abs() <= 1e-12 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Closed form `⟪first_i, second_k⟫` for a current `second`.
pub fn inner_product_closed_form(
    gc: &GrandCanonicalParams,
    omega: &AngularFn,
    first: LocalField,
    second: LocalField,
    i: usize,
    k: usize,
) -> f64 {
    if i != k {
        return 0.0;
    }
    let alpha = gc.alpha();
    let (s1, s2) = (first.species(), second.species());
    let a1 = gc.density(s1);
    let v = gc.law(s1).variance(omega);
    match (first, second.centered()) {
        (
            LocalField::Grad {
                centered: false, ..
            },
            false,
        ) => {
            if s1 == s2 {
                -a1 * (1.0 - a1)
            } else {
                gc.alpha_a * gc.alpha_p
            }
        }
        (LocalField::Grad { centered: true, .. }, true) if s1 == s2 => -a1 * v,
        (
            LocalField::Current {
                centered: false, ..
            },
            false,
        ) if s1 == s2 => a1 * (1.0 - alpha),
        (LocalField::Current { centered: true, .. }, true) if s1 == s2 => a1 * (1.0 - alpha) * v,
        _ => 0.0,
    }
}

/// Sampled site content: tag and angle.
#[derive(Clone, Copy)]
struct Site {
    tag: Tag,
    theta: f64,
}

/// Monte-Carlo estimates of `⟪φ_i, j_k⟫ = −Σ_x x_k E[φ_i η^{σ,Φ}_x]` for every
/// local field `φ` and current `j`, compared with their closed forms.
///
/// Sites outside the support `{0, e_i}` of `φ_i` are independent of it, so
/// their contribution is replaced by its exact conditional expectation: only
/// `x = e_i` is sampled, and the `x = −e_i` term becomes `φ_i E[η^{σ,Φ}]`.
/// Entries with `i ≠ k` vanish identically under this reduction.
pub fn grand_canonical_inner_products(
    gc: &GrandCanonicalParams,
    omega: &AngularFn,
    samples: usize,
    seed: u64,
) -> Result<Vec<InnerProductEntry>> {
    gc.validate()?;
    let alpha = gc.alpha();
    let degenerate = alpha <= 0.0 || alpha >= 1.0;
    if !degenerate && samples < 2 {
        return Err(Error::invalid("need at least two samples"));
    }
    let mean_a = gc.law_a.mean(omega);
    let mean_p = gc.law_p.mean(omega);
    let mean_of = |s: Species| match s {
        Species::Active => mean_a,
        Species::Passive => mean_p,
    };
    // φ evaluated on (site 0, site e_i)
    let phi = |f: LocalField, s0: Site, s1: Site| -> f64 {
        let w = |s: Site| -> f64 {
            if s.tag != Tag::from(f.species()) {
                0.0
            } else if f.centered() {
                omega.eval(s.theta) - mean_of(f.species())
            } else {
                1.0
            }
        };
        match f {
            LocalField::Grad { .. } => w(s1) - w(s0),
            LocalField::Current { .. } => {
                let occ = |s: Site| (s.tag != Tag::Empty) as u8 as f64;
                w(s0) * (1.0 - occ(s1)) - w(s1) * (1.0 - occ(s0))
            }
        }
    };
    let weight = |j: LocalField, s: Site| -> f64 {
        if s.tag != Tag::from(j.species()) {
            0.0
        } else if j.centered() {
            omega.eval(s.theta) - mean_of(j.species())
        } else {
            1.0
        }
    };
    let weight_mean = |j: LocalField| {
        if j.centered() {
            0.0
        } else {
            gc.density(j.species())
        }
    };

    let firsts = LocalField::all();
    let seconds = LocalField::currents();
    let npairs = firsts.len() * seconds.len();
    let mut sum = vec![0.0; npairs];
    let mut sum2 = vec![0.0; npairs];
    if !degenerate {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = |rng: &mut ChaCha8Rng| {
            let s = gc.sample_site(rng);
            Site {
                tag: s.tag(),
                theta: s.angle(),
            }
        };
        for _ in 0..samples {
            let s0 = draw(&mut rng);
            let s1 = draw(&mut rng);
            for (a, &f) in firsts.iter().enumerate() {
                let p = phi(f, s0, s1);
                for (b, &j) in seconds.iter().enumerate() {
                    let q = -p * (weight(j, s1) - weight_mean(j));
                    sum[a * seconds.len() + b] += q;
                    sum2[a * seconds.len() + b] += q * q;
                }
            }
        }
    }
    let mut out = Vec::with_capacity(npairs * 4);
    for (a, &f) in firsts.iter().enumerate() {
        for (b, &j) in seconds.iter().enumerate() {
            for i in 1..=2 {
                for k in 1..=2 {
                    let closed = inner_product_closed_form(gc, omega, f, j, i, k);
                    let (estimate, stderr, n) = if degenerate || i != k {
                        (if degenerate { closed } else { 0.0 }, 0.0, 0)
                    } else {
                        let n = samples as f64;
                        let m = sum[a * seconds.len() + b] / n;
                        let var =
                            ((sum2[a * seconds.len() + b] / n - m * m) * n / (n - 1.0)).max(0.0);
                        (m, (var / n).sqrt(), samples)
                    };
                    out.push(InnerProductEntry {
                        first: f.name(),
                        second: j.name(),
                        i,
                        k,
                        closed,
                        estimate,
                        stderr,
                        samples: n,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// `−𝓛_l` on the enumerated hyperplane: unit rate for every move of a
/// particle to an empty neighbour inside the box.
#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    pub enumeration: Enumeration,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    diag: Vec<f64>,
}

pub fn build_generator(cs: &CanonicalState) -> Result<GeneratorMatrix> {
    let enumeration = enumerate_canonical(cs)?;
    let n = enumeration.len();
    let mut index: HashMap<&[u8], u32> = HashMap::with_capacity(n);
    for (i, s) in enumeration.iter().enumerate() {
        index.insert(s, i as u32);
    }
    let bonds = enumeration.geometry.bonds();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut diag = vec![0.0; n];
    let mut buf = vec![0u8; enumeration.geometry.volume()];
    row_ptr.push(0);
    for (r, s) in enumeration.iter().enumerate() {
        let mut row: Vec<u32> = Vec::new();
        for &(x, y) in &bonds {
            if (s[x] == 0) != (s[y] == 0) {
                buf.copy_from_slice(s);
                buf.swap(x, y);
                row.push(index[buf.as_slice()]);
            }
        }
        row.sort_unstable();
        diag[r] = row.len() as f64;
        cols.extend_from_slice(&row);
        row_ptr.push(cols.len());
    }
    Ok(GeneratorMatrix {
        enumeration,
        row_ptr,
        cols,
        diag,
    })
}

impl GeneratorMatrix {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `y = −𝓛 x`.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.len() {
            let mut acc = self.diag[r] * x[r];
            for &c in &self.cols[self.row_ptr[r]..self.row_ptr[r + 1]] {
                acc -= x[c as usize];
            }
            y[r] = acc;
        }
    }

    pub fn neighbors(&self, r: usize) -> &[u32] {
        &self.cols[self.row_ptr[r]..self.row_ptr[r + 1]]
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.len()).all(|r| {
            self.neighbors(r).iter().all(|&c| {
                self.neighbors(c as usize)
                    .binary_search(&(r as u32))
                    .is_ok()
            })
        })
    }

    /// Dense copy, for small spaces.
    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for r in 0..n {
            m[(r, r)] = self.diag[r];
            for &c in self.neighbors(r) {
                m[(r, c as usize)] -= 1.0;
            }
        }
        m
    }

    /// Dirichlet form `⟨f, −𝓛 f⟩` under the uniform canonical measure.
    pub fn dirichlet(&self, f: &[f64]) -> f64 {
        let mut y = vec![0.0; f.len()];
        self.apply(f, &mut y);
        self.enumeration.inner(f, &y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapResult {
    pub gap: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Smallest non-zero eigenvalue of `−𝓛_l` by Lanczos iteration with full
/// reorthogonalization against the constants and all previous vectors.
pub fn spectral_gap(gm: &GeneratorMatrix) -> Result<GapResult> {
    let n = gm.len();
    if n < 2 {
        return Err(Error::invalid("spectral gap needs at least two states"));
    }
    let tol = 1e-10;
    let ones = 1.0 / (n as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Vec<f64> = (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let project = |v: &mut [f64]| {
        let c: f64 = v.iter().sum::<f64>() * ones;
        v.iter_mut().for_each(|x| *x -= c * ones);
    };
    let normalize = |v: &mut [f64]| {
        let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= nrm);
        nrm
    };
    project(&mut v);
    normalize(&mut v);
    let max_iter = n - 1;
    let mut basis: Vec<Vec<f64>> = vec![v];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut w = vec![0.0; n];
    let mut best = (f64::INFINITY, f64::INFINITY);
    for j in 0..max_iter {
        gm.apply(&basis[j], &mut w);
        let a: f64 = w.iter().zip(&basis[j]).map(|(x, y)| x * y).sum();
        alphas.push(a);
        for _ in 0..2 {
            project(&mut w);
            for b in &basis {
                let c: f64 = w.iter().zip(b).map(|(x, y)| x * y).sum();
                w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let beta = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        let m = alphas.len();
        let check = m % 10 == 0 || beta < 1e-12 || j + 1 == max_iter;
        if check {
            let mut t = DMatrix::zeros(m, m);
            for i in 0..m {
                t[(i, i)] = alphas[i];
                if i + 1 < m {
                    t[(i, i + 1)] = betas[i];
                    t[(i + 1, i)] = betas[i];
                }
            }
            let eig = SymmetricEigen::new(t);
            let (idx, &theta) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .expect("non-empty");
            let residual = (beta * eig.eigenvectors[(m - 1, idx)]).abs();
            best = (theta, residual);
            if residual <= tol * theta.abs().max(1.0) || beta < 1e-12 {
                return Ok(GapResult {
                    gap: theta,
                    residual,
                    iterations: m,
                });
            }
        }
        if beta < 1e-12 {
            break;
        }
        betas.push(beta);
        let next: Vec<f64> = w.iter().map(|x| x / beta).collect();
        basis.push(next);
    }
    if best.1 <= 1e-8 * best.0.abs().max(1.0) {
        return Ok(GapResult {
            gap: best.0,
            residual: best.1,
            iterations: alphas.len(),
        });
    }
    Err(Error::EigenNotConverged {
        iterations: alphas.len(),
        residual: best.1,
    })
}

/// `E[f²]/D(f)` after centring `f`; `None` when `D(f)` vanishes.
pub fn variance_vs_dirichlet(gm: &GeneratorMatrix, f: &[f64]) -> Option<f64> {
    let m = gm.enumeration.mean(f);
    let fc: Vec<f64> = f.iter().map(|x| x - m).collect();
    let d = gm.dirichlet(&fc);
    if d <= 1e-14 {
        return None;
    }
    Some(gm.enumeration.inner(&fc, &fc) / d)
}

/// A member of `T^ω`:
/// `f = Σ_x (a η^a_x + b η^p_x + c η^{a,ω}_x + d η^{p,ω}_x) F_x(η)` with
/// `F_x(η) = β_x + Σ_y γ_{xy} η_y + δ_x η_{y₁(x)} η_{y₂(x)}`, a type- and
/// angle-blind function of the occupancy.
#[derive(Debug, Clone, PartialEq)]
pub struct TOmegaFunction {
    pub omega: AngularFn,
    pub coeffs: [f64; 4],
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub delta: Vec<f64>,
    pub pairs: Vec<(usize, usize)>,
}

impl TOmegaFunction {
    /// Gaussian coefficients on a box of `volume` sites.
    pub fn sample<R: Rng + ?Sized>(omega: &AngularFn, volume: usize, rng: &mut R) -> Self {
        let mut g = || rng.sample::<f64, _>(StandardNormal);
        let coeffs = [g(), g(), g(), g()];
        let beta = (0..volume).map(|_| g()).collect();
        let gamma = (0..volume * volume).map(|_| g()).collect();
        let delta = (0..volume).map(|_| g()).collect();
        let pairs = (0..volume)
            .map(|_| (rng.gen_range(0..volume), rng.gen_range(0..volume)))
            .collect();
        Self {
            omega: omega.clone(),
            coeffs,
            beta,
            gamma,
            delta,
            pairs,
        }
    }

    fn f_x(&self, x: usize, state: &[u8]) -> f64 {
        let v = state.len();
        let occ = |y: usize| (state[y] != 0) as u8 as f64;
        let mut s = self.beta[x];
        for y in 0..v {
            s += self.gamma[x * v + y] * occ(y);
        }
        let (p, q) = self.pairs[x];
        s + self.delta[x] * occ(p) * occ(q)
    }

    /// Shift every `β_x` by `κ`, which adds `κ (a K^a + b K^p + c Σω(θ^a) + d Σω(θ^p))`.
    pub fn shift(&mut self, kappa: f64) {
        self.beta.iter_mut().for_each(|b| *b += kappa);
    }

    /// The constant `a K^a + b K^p + c Σω(θ^a) + d Σω(θ^p)` on the hyperplane.
    pub fn shift_unit(&self, cs: &CanonicalState) -> f64 {
        let [a, b, c, d] = self.coeffs;
        let sa: f64 = cs.theta_a.iter().map(|t| self.omega.eval(*t)).sum();
        let sp: f64 = cs.theta_p.iter().map(|t| self.omega.eval(*t)).sum();
        a * cs.ka() as f64 + b * cs.kp() as f64 + c * sa + d * sp
    }

    /// Values on every enumerated state.
    pub fn values(&self, en: &Enumeration) -> Vec<f64> {
        let [a, b, c, d] = self.coeffs;
        en.iter()
            .map(|s| {
                let mut f = 0.0;
                for (x, &k) in s.iter().enumerate() {
                    let k = k as usize;
                    if k == 0 {
                        continue;
                    }
                    let w = self.omega.eval(en.kinds.angles[k]);
                    let pre = match en.kinds.tags[k] {
                        Tag::Active => a + c * w,
                        Tag::Passive => b + d * w,
                        Tag::Empty => 0.0,
                    };
                    f += pre * self.f_x(x, s);
                }
                f
            })
            .collect()
    }

    /// Center under the canonical measure by shifting every `F_x` by a
    /// constant, which keeps the function in the `T^ω` form. Returns `false`
    /// if the shift has no effect on this hyperplane.
    pub fn center(&mut self, en: &Enumeration) -> bool {
        let unit = self.shift_unit(&en.state);
        if unit.abs() < 1e-12 {
            return false;
        }
        let m = en.mean(&self.values(en));
        self.shift(-m / unit);
        true
    }

    /// The four components `f₁ … f₄` of the orthogonal decomposition.
    pub fn decompose(&self, en: &Enumeration) -> [Vec<f64>; 4] {
        let cs = &en.state;
        let [a, b, c, d] = self.coeffs;
        let (aa, ap) = (cs.alpha(Species::Active), cs.alpha(Species::Passive));
        let alpha = aa + ap;
        let wa = cs.mean(Species::Active, &self.omega);
        let wp = cs.mean(Species::Passive, &self.omega);
        let (ta, tb) = (a + c * wa, b + d * wp);
        let c1 = ta * aa / alpha + tb * ap / alpha;
        let c2 = ta - tb;
        let mut out: [Vec<f64>; 4] = std::array::from_fn(|_| Vec::with_capacity(en.len()));
        for s in en.iter() {
            let mut f = [0.0; 4];
            for (x, &k) in s.iter().enumerate() {
                let k = k as usize;
                if k == 0 {
                    continue;
                }
                let fx = self.f_x(x, s);
                let w = self.omega.eval(en.kinds.angles[k]);
                f[0] += c1 * fx;
                match en.kinds.tags[k] {
                    Tag::Active => {
                        f[1] += c2 * ap / alpha * fx;
                        f[2] += c * (w - wa) * fx;
                    }
                    Tag::Passive => {
                        f[1] -= c2 * aa / alpha * fx;
                        f[3] += d * (w - wp) * fx;
                    }
                    Tag::Empty => {}
                }
            }
            for i in 0..4 {
                out[i].push(f[i]);
            }
        }
        out
    }
}

/// Summary of the variance/Dirichlet experiment for one canonical state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioReport {
    pub l: usize,
    pub states: usize,
    pub gap: f64,
    pub max_ratio: f64,
    pub mean_ratio: f64,
    pub sampled: usize,
    pub skipped: usize,
}

/// Maximum of `E[f²]/D(f)` over `count` random centred members of `T^ω`.
pub fn ratio_experiment(
    cs: &CanonicalState,
    omega: &AngularFn,
    count: usize,
    seed: u64,
) -> Result<RatioReport> {
    let gm = build_generator(cs)?;
    let gap = spectral_gap(&gm)?.gap;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut max, mut sum, mut used, mut skipped) = (0.0f64, 0.0, 0, 0);
    for _ in 0..count {
        let mut f = TOmegaFunction::sample(omega, cs.volume(), &mut rng);
        f.center(&gm.enumeration);
        match variance_vs_dirichlet(&gm, &f.values(&gm.enumeration)) {
            Some(r) => {
                max = max.max(r);
                sum += r;
                used += 1;
            }
            None => skipped += 1,
        }
    }
    Ok(RatioReport {
        l: cs.l,
        states: gm.len(),
        gap,
        max_ratio: max,
        mean_ratio: if used > 0 {
            sum / used as f64
        } else {
            f64::NAN
        },
        sampled: used,
        skipped,
    })
}

/// `|E_{l,K̂}[g] − E_{α̂_K̂}[g]|` for the product measure with the empirical
/// densities and angle lists of `cs`.
pub fn ensemble_discrepancy(cs: &CanonicalState, g: &Observable) -> Result<f64> {
    let canonical = canonical_expectation(cs, g)?;
    let grand = g.product_expectation(
        cs.alpha(Species::Active),
        cs.alpha(Species::Passive),
        &cs.theta_a,
        &cs.theta_p,
    )?;
    Ok((canonical - grand).abs())
}
