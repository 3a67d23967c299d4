//! Periodic square lattice and the microscopic configuration.
//!
//! Sites are stored row-major (`index = y * n + x`). Every site is either
//! empty or holds exactly one active or passive particle carrying an
//! orientation in `[0, 2π)`. Empty sites always carry angle `0`.

use std::f64::consts::TAU;
use std::fmt;

use serde::de::{self, SeqAccess, Visitor};
use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Reduce an angle into `[0, 2π)`. This is the only normalization routine
/// used by the crate.
#[inline]
pub fn wrap_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    // rem_euclid rounds tiny negative inputs up to exactly TAU
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Unit vector `e(θ) = (cos θ, sin θ)`.
#[inline]
pub fn unit_vector(theta: f64) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    [c, s]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Species {
    Active,
    Passive,
}

impl Species {
    pub const BOTH: [Species; 2] = [Species::Active, Species::Passive];

    pub fn label(self) -> &'static str {
        match self {
            Species::Active => "a",
            Species::Passive => "p",
        }
    }

    pub fn other(self) -> Species {
        match self {
            Species::Active => Species::Passive,
            Species::Passive => Species::Active,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    Empty,
    Active,
    Passive,
}

impl Tag {
    pub fn species(self) -> Option<Species> {
        match self {
            Tag::Empty => None,
            Tag::Active => Some(Species::Active),
            Tag::Passive => Some(Species::Passive),
        }
    }
}

impl From<Species> for Tag {
    fn from(s: Species) -> Self {
        match s {
            Species::Active => Tag::Active,
            Species::Passive => Tag::Passive,
        }
    }
}

/// Content of one lattice site.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteState {
    tag: Tag,
    angle: f64,
}

impl Default for SiteState {
    fn default() -> Self {
        Self::EMPTY
    }
}

impl SiteState {
    pub const EMPTY: SiteState = SiteState {
        tag: Tag::Empty,
        angle: 0.0,
    };

    pub fn active(theta: f64) -> Self {
        Self {
            tag: Tag::Active,
            angle: wrap_angle(theta),
        }
    }

    pub fn passive(theta: f64) -> Self {
        Self {
            tag: Tag::Passive,
            angle: wrap_angle(theta),
        }
    }

    pub fn particle(species: Species, theta: f64) -> Self {
        match species {
            Species::Active => Self::active(theta),
            Species::Passive => Self::passive(theta),
        }
    }

    pub fn new(tag: Tag, theta: f64) -> Self {
        match tag {
            Tag::Empty => Self::EMPTY,
            Tag::Active => Self::active(theta),
            Tag::Passive => Self::passive(theta),
        }
    }

    #[inline]
    pub fn tag(&self) -> Tag {
        self.tag
    }

    #[inline]
    pub fn angle(&self) -> f64 {
        self.angle
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.tag == Tag::Empty
    }

    #[inline]
    pub fn is_occupied(&self) -> bool {
        self.tag != Tag::Empty
    }

    #[inline]
    pub fn species(&self) -> Option<Species> {
        self.tag.species()
    }

    /// Same particle with a new orientation; empty sites are returned unchanged.
    #[inline]
    pub fn with_angle(self, theta: f64) -> Self {
        Self::new(self.tag, theta)
    }
}

/// Nearest-neighbour displacement `±e1`, `±e2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    East,
    West,
    North,
    South,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::East,
        Direction::West,
        Direction::North,
        Direction::South,
    ];

    #[inline]
    pub fn offset(self) -> (isize, isize) {
        match self {
            Direction::East => (1, 0),
            Direction::West => (-1, 0),
            Direction::North => (0, 1),
            Direction::South => (0, -1),
        }
    }

    /// The displacement as a real vector `z`.
    #[inline]
    pub fn vector(self) -> [f64; 2] {
        let (dx, dy) = self.offset();
        [dx as f64, dy as f64]
    }

    pub fn opposite(self) -> Self {
        match self {
            Direction::East => Direction::West,
            Direction::West => Direction::East,
            Direction::North => Direction::South,
            Direction::South => Direction::North,
        }
    }

    #[inline]
    pub(crate) fn from_index(i: usize) -> Self {
        Self::ALL[i & 3]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LatticeIndex {
    pub x: usize,
    pub y: usize,
}

impl LatticeIndex {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    /// Build from arbitrary integer coordinates, wrapping onto the torus.
    pub fn wrapped(x: isize, y: isize, n: usize) -> Self {
        let n = n as isize;
        Self {
            x: x.rem_euclid(n) as usize,
            y: y.rem_euclid(n) as usize,
        }
    }

    #[inline]
    pub fn linear(self, n: usize) -> usize {
        self.y * n + self.x
    }

    #[inline]
    pub fn from_linear(i: usize, n: usize) -> Self {
        Self { x: i % n, y: i / n }
    }

    /// Macroscopic position `x / n` on the unit torus.
    pub fn position(self, n: usize) -> [f64; 2] {
        [self.x as f64 / n as f64, self.y as f64 / n as f64]
    }
}

impl fmt::Display for LatticeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Shift `idx` by `dir` on the `n × n` torus.
#[inline]
pub fn neighbor(idx: LatticeIndex, dir: Direction, n: usize) -> LatticeIndex {
    debug_assert!(n >= 1);
    let (dx, dy) = dir.offset();
    LatticeIndex::wrapped(idx.x as isize + dx, idx.y as isize + dy, n)
}

/// Linear-index version of [`neighbor`] used by the hot loops.
#[inline]
pub(crate) fn neighbor_linear(i: usize, dir: Direction, n: usize) -> usize {
    let x = i % n;
    let y = i / n;
    match dir {
        Direction::East => y * n + if x + 1 == n { 0 } else { x + 1 },
        Direction::West => y * n + if x == 0 { n - 1 } else { x - 1 },
        Direction::North => (if y + 1 == n { 0 } else { y + 1 }) * n + x,
        Direction::South => (if y == 0 { n - 1 } else { y - 1 }) * n + x,
    }
}

/// Iterate the closed box `B_l(center)` of side `2l + 1` on the torus.
pub fn box_iter(
    center: LatticeIndex,
    l: usize,
    n: usize,
) -> Result<impl Iterator<Item = LatticeIndex>> {
    if 2 * l + 1 > n {
        return Err(Error::RadiusTooLarge { radius: l, n });
    }
    let l = l as isize;
    let (cx, cy) = (center.x as isize, center.y as isize);
    Ok((-l..=l)
        .flat_map(move |dy| (-l..=l).map(move |dx| LatticeIndex::wrapped(cx + dx, cy + dy, n))))
}

/// Microscopic state: an `n × n` periodic grid of sites plus cached counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    n: usize,
    sites: Vec<SiteState>,
    count_a: usize,
    count_p: usize,
}

impl Configuration {
    pub fn empty(n: usize) -> Self {
        assert!(n >= 1, "lattice side must be positive");
        Self {
            n,
            sites: vec![SiteState::EMPTY; n * n],
            count_a: 0,
            count_p: 0,
        }
    }

    /// Build from a row-major site vector.
    pub fn from_sites(n: usize, sites: Vec<SiteState>) -> Result<Self> {
        if n == 0 || sites.len() != n * n {
            return Err(Error::invalid(format!(
                "expected {} sites for n = {n}, got {}",
                n * n,
                sites.len()
            )));
        }
        let mut cfg = Self {
            n,
            sites,
            count_a: 0,
            count_p: 0,
        };
        for s in &mut cfg.sites {
            // re-normalize through the constructors
            *s = SiteState::new(s.tag, s.angle);
        }
        (cfg.count_a, cfg.count_p) = cfg.recount();
        Ok(cfg)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn sites(&self) -> &[SiteState] {
        &self.sites
    }

    #[inline]
    pub fn get(&self, idx: LatticeIndex) -> SiteState {
        self.sites[idx.linear(self.n)]
    }

    #[inline]
    pub fn site(&self, i: usize) -> SiteState {
        self.sites[i]
    }

    /// `(K^a, K^p)`.
    #[inline]
    pub fn counts(&self) -> (usize, usize) {
        (self.count_a, self.count_p)
    }

    pub fn particle_count(&self) -> usize {
        self.count_a + self.count_p
    }

    /// Full recount, independent of the cache.
    pub fn recount(&self) -> (usize, usize) {
        self.sites.iter().fold((0, 0), |(a, p), s| match s.tag {
            Tag::Active => (a + 1, p),
            Tag::Passive => (a, p + 1),
            Tag::Empty => (a, p),
        })
    }

    pub fn set(&mut self, idx: LatticeIndex, state: SiteState) {
        let i = idx.linear(self.n);
        self.set_linear(i, state);
    }

    pub fn set_linear(&mut self, i: usize, state: SiteState) {
        let state = SiteState::new(state.tag, state.angle);
        match self.sites[i].tag {
            Tag::Active => self.count_a -= 1,
            Tag::Passive => self.count_p -= 1,
            Tag::Empty => {}
        }
        match state.tag {
            Tag::Active => self.count_a += 1,
            Tag::Passive => self.count_p += 1,
            Tag::Empty => {}
        }
        self.sites[i] = state;
    }

    /// Replace the angle at an occupied site. No-op on empty sites.
    #[inline]
    pub fn set_angle_linear(&mut self, i: usize, theta: f64) {
        let s = self.sites[i];
        self.sites[i] = s.with_angle(theta);
    }

    /// Exchange the contents of `x` and `x + z`.
    pub fn swap(&mut self, x: LatticeIndex, z: Direction) {
        let i = x.linear(self.n);
        let j = neighbor_linear(i, z, self.n);
        self.sites.swap(i, j);
    }

    #[inline]
    pub(crate) fn swap_linear(&mut self, i: usize, j: usize) {
        self.sites.swap(i, j);
    }

    /// Serialize to the JSON snapshot format.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&Snapshot {
            n: self.n,
            sites: self.sites.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let snap: Snapshot = serde_json::from_str(text)?;
        for s in &snap.sites {
            if !(0.0..TAU).contains(&s.angle) {
                return Err(Error::Parse(format!("angle {} outside [0, 2π)", s.angle)));
            }
        }
        Self::from_sites(snap.n, snap.sites)
    }
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    n: usize,
    sites: Vec<SiteState>,
}

impl Serialize for SiteState {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let tag = match self.tag {
            Tag::Empty => "E",
            Tag::Active => "A",
            Tag::Passive => "P",
        };
        if self.tag == Tag::Empty {
            let mut seq = serializer.serialize_seq(Some(1))?;
            seq.serialize_element(tag)?;
            seq.end()
        } else {
            let mut seq = serializer.serialize_seq(Some(2))?;
            seq.serialize_element(tag)?;
            seq.serialize_element(&self.angle)?;
            seq.end()
        }
    }
}

impl<'de> Deserialize<'de> for SiteState {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct SiteVisitor;

        impl<'de> Visitor<'de> for SiteVisitor {
            type Value = SiteState;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str(r#"["E"] or ["A"|"P", angle]"#)
            }

            fn visit_seq<A: SeqAccess<'de>>(
                self,
                mut seq: A,
            ) -> std::result::Result<SiteState, A::Error> {
                let tag: String = seq
                    .next_element()?
                    .ok_or_else(|| de::Error::invalid_length(0, &self))?;
                let angle: Option<f64> = seq.next_element()?;
                let tag = match tag.as_str() {
                    "E" => Tag::Empty,
                    "A" => Tag::Active,
                    "P" => Tag::Passive,
                    other => return Err(de::Error::custom(format!("unknown site tag {other:?}"))),
                };
                match (tag, angle) {
                    (Tag::Empty, None) => Ok(SiteState::EMPTY),
                    (Tag::Empty, Some(_)) => Err(de::Error::custom("empty sites carry no angle")),
                    (_, None) => Err(de::Error::custom("occupied site without angle")),
                    (t, Some(a)) => Ok(SiteState { tag: t, angle: a }),
                }
            }
        }

        deserializer.deserialize_seq(SiteVisitor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn neighbor_examples() {
        assert_eq!(
            neighbor(LatticeIndex::new(0, 0), Direction::East, 4),
            LatticeIndex::new(1, 0)
        );
        assert_eq!(
            neighbor(LatticeIndex::new(3, 0), Direction::East, 4),
            LatticeIndex::new(0, 0)
        );
        assert_eq!(
            neighbor(LatticeIndex::new(2, 3), Direction::North, 4),
            LatticeIndex::new(2, 0)
        );
        assert_eq!(
            neighbor(LatticeIndex::new(0, 0), Direction::West, 4),
            LatticeIndex::new(3, 0)
        );
        assert_eq!(
            neighbor(LatticeIndex::new(0, 0), Direction::East, 1),
            LatticeIndex::new(0, 0)
        );
    }

    #[test]
    fn neighbor_linear_matches_neighbor() {
        for n in 1..6 {
            for i in 0..n * n {
                for d in Direction::ALL {
                    let a = neighbor(LatticeIndex::from_linear(i, n), d, n).linear(n);
                    assert_eq!(a, neighbor_linear(i, d, n));
                }
            }
        }
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(0.0), 0.0);
        assert_eq!(wrap_angle(TAU), 0.0);
        assert_eq!(wrap_angle(-1e-300), 0.0);
        assert!((wrap_angle(-0.5) - (TAU - 0.5)).abs() < 1e-15);
        assert!((wrap_angle(7.0) - (7.0 - TAU)).abs() < 1e-15);
    }

    #[test]
    fn swap_examples() {
        let mut cfg = Configuration::empty(4);
        let before = cfg.clone();
        cfg.swap(LatticeIndex::new(1, 1), Direction::East);
        assert_eq!(cfg, before);

        cfg.set(LatticeIndex::new(1, 1), SiteState::active(1.0));
        cfg.swap(LatticeIndex::new(1, 1), Direction::East);
        assert!(cfg.get(LatticeIndex::new(1, 1)).is_empty());
        assert_eq!(cfg.get(LatticeIndex::new(2, 1)), SiteState::active(1.0));
        assert_eq!(cfg.counts(), (1, 0));
    }

    #[test]
    fn swap_is_involution_exhaustive_2x2() {
        // every configuration of a 2×2 lattice with tags and two angle values
        let states = [
            SiteState::EMPTY,
            SiteState::active(0.5),
            SiteState::active(2.0),
            SiteState::passive(1.0),
        ];
        let mut code = [0usize; 4];
        loop {
            let sites: Vec<_> = code.iter().map(|&c| states[c]).collect();
            let cfg = Configuration::from_sites(2, sites).unwrap();
            for i in 0..4 {
                for d in Direction::ALL {
                    let x = LatticeIndex::from_linear(i, 2);
                    let mut c = cfg.clone();
                    c.swap(x, d);
                    assert_eq!(c.counts(), cfg.counts());
                    assert_eq!(c.recount(), c.counts());
                    c.swap(x, d);
                    assert_eq!(c, cfg);
                }
            }
            // odometer increment
            let mut k = 0;
            loop {
                if k == 4 {
                    return;
                }
                code[k] += 1;
                if code[k] < states.len() {
                    break;
                }
                code[k] = 0;
                k += 1;
            }
        }
    }

    #[test]
    fn box_iter_examples() {
        let c = LatticeIndex::new(2, 2);
        assert_eq!(box_iter(c, 0, 8).unwrap().collect::<Vec<_>>(), vec![c]);
        assert_eq!(box_iter(c, 1, 8).unwrap().count(), 9);
        let wrapped: Vec<_> = box_iter(LatticeIndex::new(0, 0), 1, 4).unwrap().collect();
        assert!(wrapped.contains(&LatticeIndex::new(3, 3)));
        assert!(matches!(
            box_iter(c, 2, 4),
            Err(Error::RadiusTooLarge { .. })
        ));
    }

    #[test]
    fn empty_sites_force_zero_angle() {
        let s = SiteState::new(Tag::Empty, 3.0);
        assert_eq!(s.angle(), 0.0);
        assert_eq!(SiteState::EMPTY.with_angle(1.0).angle(), 0.0);
        assert!((SiteState::active(-1.0).angle() - (TAU - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn snapshot_format() {
        let mut cfg = Configuration::empty(2);
        cfg.set(LatticeIndex::new(1, 0), SiteState::active(0.1));
        cfg.set(LatticeIndex::new(0, 1), SiteState::passive(3.0));
        let text = cfg.to_json().unwrap();
        assert_eq!(text, r#"{"n":2,"sites":[["E"],["A",0.1],["P",3.0],["E"]]}"#);
        assert_eq!(Configuration::from_json(&text).unwrap(), cfg);

        assert!(Configuration::from_json(r#"{"n":1,"sites":[["E",0.5]]}"#).is_err());
        assert!(Configuration::from_json(r#"{"n":1,"sites":[["A"]]}"#).is_err());
        assert!(Configuration::from_json(r#"{"n":1,"sites":[["A",7.0]]}"#).is_err());
        assert!(Configuration::from_json(r#"{"n":2,"sites":[["E"]]}"#).is_err());
    }

    fn arb_site() -> impl Strategy<Value = SiteState> {
        prop_oneof![
            Just(SiteState::EMPTY),
            (0.0..TAU).prop_map(SiteState::active),
            (0.0..TAU).prop_map(SiteState::passive),
        ]
    }

    proptest! {
        #[test]
        fn snapshot_roundtrip_is_bit_exact(n in 1usize..6, seed in proptest::collection::vec(arb_site(), 36)) {
            let cfg = Configuration::from_sites(n, seed[..n * n].to_vec()).unwrap();
            let back = Configuration::from_json(&cfg.to_json().unwrap()).unwrap();
            for (a, b) in cfg.sites().iter().zip(back.sites()) {
                prop_assert_eq!(a.tag(), b.tag());
                prop_assert_eq!(a.angle().to_bits(), b.angle().to_bits());
            }
        }

        #[test]
        fn counts_track_random_updates(ops in proptest::collection::vec((0usize..25, 0usize..4, 0usize..3, -10.0f64..10.0), 1..200)) {
            let mut cfg = Configuration::empty(5);
            for (i, d, kind, theta) in ops {
                match kind {
                    0 => cfg.swap(LatticeIndex::from_linear(i, 5), Direction::from_index(d)),
                    1 => cfg.set_angle_linear(i, theta),
                    _ => cfg.set_linear(i, SiteState::new([Tag::Empty, Tag::Active, Tag::Passive][d % 3], theta)),
                }
                prop_assert_eq!(cfg.counts(), cfg.recount());
                let a = cfg.site(i).angle();
                prop_assert!((0.0..TAU).contains(&a));
            }
        }

        #[test]
        fn box_iter_distinct(n in 1usize..12, l in 0usize..6, x in 0usize..12, y in 0usize..12) {
            prop_assume!(2 * l + 1 <= n);
            let c = LatticeIndex::new(x % n, y % n);
            let v: Vec<_> = box_iter(c, l, n).unwrap().collect();
            let set: std::collections::HashSet<_> = v.iter().copied().collect();
            prop_assert_eq!(v.len(), (2 * l + 1) * (2 * l + 1));
            prop_assert_eq!(set.len(), v.len());
        }
    }
}
