//! Exact dyadic geometry: contraction maps, node sets, cells and masses.
//!
//! Node coordinates are kept as integer numerators over the common
//! denominator `i * 2^n`, and exposed as reduced rationals.

use std::cmp::Ordering;
use std::ops::Range;

use num_rational::Ratio;
use num_traits::{CheckedAdd, CheckedMul, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::index_space::{Edge, Path};

pub type Rational = Ratio<i64>;

/// Formats a rational as `"num/den"` (always with a denominator).
pub fn rational_label(r: &Rational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

pub fn parse_rational(s: &str) -> Result<Rational> {
    let s = s.trim();
    let (num, den) = match s.split_once('/') {
        Some((a, b)) => (a.trim(), b.trim()),
        None => (s, "1"),
    };
    let num: i64 = num
        .parse()
        .map_err(|_| Error::Parse(format!("bad rational {s:?}")))?;
    let den: i64 = den
        .parse()
        .map_err(|_| Error::Parse(format!("bad rational {s:?}")))?;
    if den <= 0 {
        return Err(Error::Parse(format!("bad denominator in {s:?}")));
    }
    Ok(Rational::new(num, den))
}

pub fn to_f64(r: &Rational) -> f64 {
    r.to_f64().expect("finite rational")
}

/// Exact comparison of a finite float with a rational.
pub fn cmp_f64_rational(x: f64, r: &Rational) -> Ordering {
    assert!(x.is_finite(), "cannot compare a non-finite value");
    let p = *r.numer() as i128;
    let q = *r.denom() as i128;
    if x == 0.0 {
        return 0i128.cmp(&p);
    }
    let (mantissa, exp, sign) = num_traits::float::FloatCore::integer_decode(x);
    let m = mantissa as i128 * sign as i128;
    // x = m * 2^exp; compare m * q * 2^exp with p.
    // |m| < 2^53 and 0 < q < 2^63, so m q fits.
    let mq = m * q;
    let shifted = |v: i128, k: i32| -> Option<i128> {
        if k >= 126 {
            return if v == 0 { Some(0) } else { None };
        }
        v.checked_mul(1i128 << k)
    };
    if exp >= 0 {
        match shifted(mq, exp as i32) {
            Some(lhs) => lhs.cmp(&p),
            // |lhs| exceeds every i64 numerator.
            None => m.signum().cmp(&0),
        }
    } else {
        match shifted(p, -(exp as i32)) {
            Some(rhs) => mq.cmp(&rhs),
            None => 0i128.cmp(&p),
        }
    }
}

/// `x ↦ slope * x + shift`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AffineMap {
    pub slope: Rational,
    pub shift: Rational,
}

impl AffineMap {
    pub fn identity() -> AffineMap {
        AffineMap {
            slope: Rational::from_integer(1),
            shift: Rational::zero(),
        }
    }

    pub fn apply(&self, x: &Rational) -> Result<Rational> {
        self.slope
            .checked_mul(x)
            .and_then(|v| v.checked_add(&self.shift))
            .ok_or(Error::Overflow("affine map"))
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &AffineMap) -> Result<AffineMap> {
        let slope = self
            .slope
            .checked_mul(&inner.slope)
            .ok_or(Error::Overflow("map composition"))?;
        Ok(AffineMap {
            slope,
            shift: self.apply(&inner.shift)?,
        })
    }

    pub fn image_of_unit(&self) -> Result<(Rational, Rational)> {
        Ok((
            self.apply(&Rational::zero())?,
            self.apply(&Rational::from_integer(1))?,
        ))
    }
}

/// Contraction map of a single edge `e_{i,j}`: slope `j/(2i)`, shift `1/(2i)`
/// for `e_{i,2i-2}` and `e_{i,2i-1}'`.
pub fn phi_edge(e: &Edge) -> Result<AffineMap> {
    let step = e.step()?;
    let two_i = i64::try_from(e.from)
        .ok()
        .and_then(|v| v.checked_mul(2))
        .ok_or(Error::Overflow("edge map"))?;
    let to = i64::try_from(e.to).map_err(|_| Error::Overflow("edge map"))?;
    Ok(AffineMap {
        slope: Rational::new(to, two_i),
        shift: if step.is_shifted() {
            Rational::new(1, two_i)
        } else {
            Rational::zero()
        },
    })
}

/// `φ_σ = φ_{e_1} ∘ φ_{e_2} ∘ … ∘ φ_{e_n}`.
pub fn phi_path(p: &Path) -> Result<AffineMap> {
    let mut acc = AffineMap::identity();
    for e in p.edges() {
        acc = acc.compose(&phi_edge(&e)?)?;
    }
    Ok(acc)
}

/// Which block of a split node set a node belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `i = 1`: no split.
    Whole,
    Left,
    Right,
}

/// `V_i^{(n)}`, sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSet {
    i: u64,
    n: u32,
    den: i64,
    nums: Vec<i64>,
    left_len: usize,
}

impl NodeSet {
    pub fn i(&self) -> u64 {
        self.i
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn len(&self) -> usize {
        self.nums.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nums.is_empty()
    }

    /// Common denominator `i * 2^n`.
    pub fn den(&self) -> i64 {
        self.den
    }

    /// Numerators over [`NodeSet::den`].
    pub fn numerators(&self) -> &[i64] {
        &self.nums
    }

    pub fn node(&self, k: usize) -> Rational {
        Rational::new(self.nums[k], self.den)
    }

    pub fn nodes(&self) -> Vec<Rational> {
        (0..self.len()).map(|k| self.node(k)).collect()
    }

    pub fn value(&self, k: usize) -> f64 {
        self.nums[k] as f64 / self.den as f64
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.value(k)).collect()
    }

    pub fn label(&self, k: usize) -> String {
        rational_label(&self.node(k))
    }

    pub fn index_of_numerator(&self, a: i64) -> Option<usize> {
        self.nums.binary_search(&a).ok()
    }

    pub fn index_of(&self, x: &Rational) -> Option<usize> {
        let scaled = x.checked_mul(&Rational::from_integer(self.den))?;
        if !scaled.is_integer() {
            return None;
        }
        self.index_of_numerator(scaled.to_integer())
    }

    /// Index range of `V_{i-}` (all nodes when `i = 1`).
    pub fn left(&self) -> Range<usize> {
        0..self.left_len
    }

    /// Index range of `V_{i+}` (empty when `i = 1`).
    pub fn right(&self) -> Range<usize> {
        self.left_len..self.nums.len()
    }

    pub fn side(&self, k: usize) -> Side {
        if self.i == 1 {
            Side::Whole
        } else if k < self.left_len {
            Side::Left
        } else {
            Side::Right
        }
    }
}

pub(crate) fn stage_denominator(i: u64, n: u32) -> Result<i64> {
    if i == 0 {
        return Err(Error::Domain("vertex index must be at least 1".into()));
    }
    let two_n = 1i64
        .checked_shl(n)
        .filter(|_| n < 62)
        .ok_or(Error::Overflow("stage denominator"))?;
    i64::try_from(i)
        .ok()
        .and_then(|i| i.checked_mul(two_n))
        .ok_or(Error::Overflow("stage denominator"))
}

/// Node count of `V_i^{(n)}` without building it.
pub fn node_count(i: u64, n: u32) -> Result<u128> {
    stage_denominator(i, n)?;
    Ok(if i == 1 {
        (1u128 << n) + 1
    } else {
        1u128 << (n + 1)
    })
}

pub fn node_set(i: u64, n: u32) -> Result<NodeSet> {
    node_set_capped(i, n, crate::index_space::DEFAULT_PATH_CAP)
}

pub fn node_set_capped(i: u64, n: u32, cap: u128) -> Result<NodeSet> {
    let den = stage_denominator(i, n)?;
    let count = node_count(i, n)?;
    if count > cap {
        return Err(Error::ResourceCap {
            what: "node set",
            requested: count,
            cap,
        });
    }
    let two_n = 1i64 << n;
    let (nums, left_len) = if i == 1 {
        ((0..=two_n).collect::<Vec<_>>(), (two_n + 1) as usize)
    } else {
        let mut v: Vec<i64> = (0..two_n).collect();
        v.extend((0..two_n).rev().map(|k| den - k));
        (v, two_n as usize)
    };
    Ok(NodeSet {
        i,
        n,
        den,
        nums,
        left_len,
    })
}

/// Whether the numerator `a` over `i * 2^n` is a node of `V_i^{(n)}`.
pub(crate) fn is_node_numerator(i: u64, n: u32, a: i64) -> bool {
    let two_n = 1i64 << n;
    let den = i as i64 * two_n;
    if i == 1 {
        (0..=den).contains(&a)
    } else {
        (0..two_n).contains(&a) || (den - two_n < a && a <= den)
    }
}

/// An interval with explicit endpoint closure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub lo: Rational,
    pub hi: Rational,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Cell {
    pub fn length(&self) -> Rational {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        let lo = cmp_f64_rational(x, &self.lo);
        let hi = cmp_f64_rational(x, &self.hi);
        let above = lo == Ordering::Greater || (self.lo_closed && lo == Ordering::Equal);
        let below = hi == Ordering::Less || (self.hi_closed && hi == Ordering::Equal);
        above && below
    }

    pub fn bounds_f64(&self) -> (f64, f64) {
        (to_f64(&self.lo), to_f64(&self.hi))
    }
}

/// Cells `U_i^{(n)}(x)` and masses `μ_i^{(n)}(x) = |U_i^{(n)}(x)|`, indexed like
/// the node set.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMeasure {
    pub cells: Vec<Cell>,
    pub masses: Vec<Rational>,
}

impl CellMeasure {
    pub fn mass(&self, k: usize) -> f64 {
        to_f64(&self.masses[k])
    }

    pub fn masses_f64(&self) -> Vec<f64> {
        self.masses.iter().map(to_f64).collect()
    }

    pub fn total(&self) -> Rational {
        self.masses.iter().fold(Rational::zero(), |a, b| a + b)
    }
}

pub fn cells_and_measure(i: u64, n: u32) -> Result<CellMeasure> {
    let nodes = node_set(i, n)?;
    Ok(cells_for(&nodes))
}

pub fn cells_for(nodes: &NodeSet) -> CellMeasure {
    let den = nodes.den;
    let mut cells = Vec::with_capacity(nodes.len());
    if nodes.i == 1 {
        // Cells centred at the nodes, half cells at 0 and 1.
        let last = nodes.len() - 1;
        for (k, &a) in nodes.nums.iter().enumerate() {
            let lo = if k == 0 {
                Rational::zero()
            } else {
                Rational::new(2 * a - 1, 2 * den)
            };
            let hi = if k == last {
                Rational::from_integer(1)
            } else {
                Rational::new(2 * a + 1, 2 * den)
            };
            cells.push(Cell {
                lo,
                hi,
                lo_closed: true,
                hi_closed: k == last,
            });
        }
    } else {
        for (k, &a) in nodes.nums.iter().enumerate() {
            if k < nodes.left_len {
                cells.push(Cell {
                    lo: Rational::new(a, den),
                    hi: Rational::new(a + 1, den),
                    lo_closed: true,
                    hi_closed: false,
                });
            } else {
                cells.push(Cell {
                    lo: Rational::new(a - 1, den),
                    hi: Rational::new(a, den),
                    lo_closed: false,
                    hi_closed: true,
                });
            }
        }
    }
    let masses = cells.iter().map(Cell::length).collect();
    CellMeasure { cells, masses }
}

/// The physical space: `[0,1]` for `i ∈ {1,2}`, else `[0,1/i] ∪ [1-1/i,1]`.
pub fn physical_space(i: u64) -> Vec<(Rational, Rational)> {
    if i <= 2 {
        vec![(Rational::zero(), Rational::from_integer(1))]
    } else {
        let inv = Rational::new(1, i as i64);
        vec![
            (Rational::zero(), inv),
            (Rational::from_integer(1) - inv, Rational::from_integer(1)),
        ]
    }
}

/// Total Lebesgue measure of the physical space.
pub fn physical_measure(i: u64) -> f64 {
    if i == 1 {
        1.0
    } else {
        2.0 / i as f64
    }
}

/// Index of the node whose cell contains `x`.
pub fn locate(i: u64, n: u32, x: f64) -> Result<usize> {
    let nodes = node_set(i, n)?;
    let cm = cells_for(&nodes);
    locate_in(&nodes, &cm, x)
}

pub fn locate_in(nodes: &NodeSet, cm: &CellMeasure, x: f64) -> Result<usize> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("cannot locate {x}")));
    }
    let den = nodes.den as f64;
    let guess = (x * den).round() as i64;
    let base = nodes
        .nums
        .partition_point(|&a| a < guess)
        .min(nodes.len().saturating_sub(1));
    let lo = base.saturating_sub(2);
    let hi = (base + 3).min(nodes.len());
    for k in lo..hi {
        if cm.cells[k].contains(x) {
            return Ok(k);
        }
    }
    Err(Error::Domain(format!(
        "{x} lies in no cell of the stage ({}, {}) partition",
        nodes.i, nodes.n
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index_space::{enumerate_paths, Step, Variant, DEFAULT_PATH_CAP};
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn r(a: i64, b: i64) -> Rational {
        Rational::new(a, b)
    }

    #[test]
    fn edge_maps() {
        let m = phi_edge(&Edge::new(1, 2, Variant::Plain).unwrap()).unwrap();
        assert_eq!(m, AffineMap::identity());
        let m = phi_edge(&Edge::new(1, 1, Variant::Plain).unwrap()).unwrap();
        assert_eq!(m.image_of_unit().unwrap(), (r(0, 1), r(1, 2)));
        let m = phi_edge(&Edge::new(1, 1, Variant::Prime).unwrap()).unwrap();
        assert_eq!(m.image_of_unit().unwrap(), (r(1, 2), r(1, 1)));
        let m = phi_edge(&Edge::new(3, 4, Variant::Plain).unwrap()).unwrap();
        assert_eq!(m.image_of_unit().unwrap(), (r(1, 6), r(5, 6)));
    }

    #[test]
    fn path_maps() {
        let p = Path::new(1, vec![Step::Zero, Step::Minus1]).unwrap();
        assert_eq!(
            phi_path(&p).unwrap().image_of_unit().unwrap(),
            (r(0, 1), r(3, 4))
        );
        assert_eq!(
            phi_path(&Path::empty(4).unwrap()).unwrap(),
            AffineMap::identity()
        );
        // First edge outermost.
        let p = Path::new(1, vec![Step::Minus1, Step::Minus1Prime]).unwrap();
        assert_eq!(
            phi_path(&p).unwrap().image_of_unit().unwrap(),
            (r(1, 4), r(1, 2))
        );
        let p = Path::new(2, vec![Step::Minus1, Step::Minus2]).unwrap();
        assert_eq!(
            phi_path(&p).unwrap().image_of_unit().unwrap(),
            (r(1, 8), r(5, 8))
        );
    }

    #[test]
    fn node_set_examples() {
        assert_eq!(
            node_set(1, 2).unwrap().nodes(),
            vec![r(0, 1), r(1, 4), r(1, 2), r(3, 4), r(1, 1)]
        );
        let v = node_set(3, 1).unwrap();
        assert_eq!(v.nodes(), vec![r(0, 1), r(1, 6), r(5, 6), r(1, 1)]);
        assert_eq!(v.left(), 0..2);
        assert_eq!(v.right(), 2..4);
        for i in 1..6 {
            assert_eq!(node_set(i, 0).unwrap().nodes(), vec![r(0, 1), r(1, 1)]);
        }
    }

    #[test]
    fn measure_examples() {
        for n in 0..6 {
            let cm = cells_and_measure(1, n).unwrap();
            assert_eq!(cm.masses[0], r(1, 1 << (n + 1)));
            assert_eq!(*cm.masses.last().unwrap(), r(1, 1 << (n + 1)));
            if n > 0 {
                let mid = node_set(1, n).unwrap().index_of(&r(1, 2)).unwrap();
                assert_eq!(cm.masses[mid], r(1, 1 << n));
            }
            assert_eq!(cm.total(), r(1, 1));
        }
        for i in 2..7 {
            let cm = cells_and_measure(i, 3).unwrap();
            assert!(cm.masses.iter().all(|&m| m == r(1, 8 * i as i64)));
            assert_eq!(cm.total(), r(2, i as i64));
        }
    }

    #[test]
    fn locate_examples() {
        assert_eq!(locate(1, 2, 0.30).unwrap(), 1);
        assert_eq!(locate(1, 2, 0.95).unwrap(), 4);
        assert_eq!(locate(1, 2, 1.0).unwrap(), 4);
        assert_eq!(locate(1, 2, 0.125).unwrap(), 1);
        assert_eq!(locate(1, 2, 0.375).unwrap(), 2);
        assert!(locate(3, 1, 0.5).is_err());
        assert!(locate(2, 3, 0.5).is_err());
        assert!(locate(1, 2, 1.5).is_err());
        assert!(locate(1, 2, -0.01).is_err());
        // Right block cells are closed on the right.
        let v = node_set(3, 1).unwrap();
        assert_eq!(v.node(locate(3, 1, 1.0).unwrap()), r(1, 1));
        assert_eq!(v.node(locate(3, 1, 2.0 / 3.0 + 1e-12).unwrap()), r(5, 6));
    }

    #[test]
    fn exact_float_comparison() {
        assert_eq!(cmp_f64_rational(0.5, &r(1, 2)), Ordering::Equal);
        assert_eq!(cmp_f64_rational(1.0 / 3.0, &r(1, 3)), Ordering::Less);
        assert_eq!(cmp_f64_rational(0.1, &r(1, 10)), Ordering::Greater);
        assert_eq!(cmp_f64_rational(-0.25, &r(0, 1)), Ordering::Less);
        assert_eq!(cmp_f64_rational(1e-300, &r(0, 1)), Ordering::Greater);
        assert_eq!(cmp_f64_rational(1e-300, &r(1, 1 << 40)), Ordering::Less);
    }

    #[test]
    fn nesting() {
        for i in 1..=8 {
            for n in 0..10 {
                let a: BTreeSet<_> = node_set(i, n).unwrap().nodes().into_iter().collect();
                let b: BTreeSet<_> = node_set(i, n + 1).unwrap().nodes().into_iter().collect();
                assert!(a.is_subset(&b), "i={i} n={n}");
            }
        }
    }

    #[test]
    fn path_images_cover_node_sets() {
        for i in 1..=6 {
            for n in 0..=8 {
                let mut seen = BTreeSet::new();
                for p in enumerate_paths(i, n, DEFAULT_PATH_CAP).unwrap() {
                    let (a, b) = phi_path(&p).unwrap().image_of_unit().unwrap();
                    assert!(a < b);
                    seen.insert(a);
                    seen.insert(b);
                }
                let expected: BTreeSet<_> = node_set(i, n).unwrap().nodes().into_iter().collect();
                assert_eq!(seen, expected, "i={i} n={n}");
            }
        }
    }

    #[test]
    fn left_block_precedes_right_block() {
        for i in 2..=8u64 {
            for n in 0..8 {
                let v = node_set(i, n).unwrap();
                let inv = r(1, i as i64);
                for k in v.left() {
                    assert!(v.node(k) < inv);
                }
                for k in v.right() {
                    assert!(v.node(k) > r(1, 1) - inv);
                }
            }
        }
    }

    #[test]
    fn labels_round_trip() {
        for x in node_set(3, 3).unwrap().nodes() {
            assert_eq!(parse_rational(&rational_label(&x)).unwrap(), x);
        }
        assert_eq!(rational_label(&r(1, 1)), "1/1");
        assert!(parse_rational("1/0").is_err());
    }

    proptest! {
        #[test]
        fn cells_tile_space(i in 1u64..9, n in 0u32..9) {
            let cm = cells_and_measure(i, n).unwrap();
            let expect = if i == 1 { r(1, 1) } else { r(2, i as i64) };
            prop_assert_eq!(cm.total(), expect);
            for w in cm.cells.windows(2) {
                prop_assert!(w[0].hi <= w[1].lo);
            }
        }

        #[test]
        fn locate_finds_containing_cell(i in 1u64..7, n in 0u32..8, t in 0.0f64..=1.0) {
            let nodes = node_set(i, n).unwrap();
            let cm = cells_for(&nodes);
            let hits: Vec<usize> = (0..nodes.len()).filter(|&k| cm.cells[k].contains(t)).collect();
            match locate_in(&nodes, &cm, t) {
                Ok(k) => prop_assert_eq!(hits, vec![k]),
                Err(_) => prop_assert!(hits.is_empty()),
            }
        }

        #[test]
        fn path_maps_have_positive_slope(i in 1u64..20, raw in prop::collection::vec(0usize..4, 0..10)) {
            let mut v = i;
            let mut steps = Vec::new();
            for k in raw {
                let allowed = Step::allowed(v);
                let s = allowed[k % allowed.len()];
                v = 2 * v - s.offset();
                steps.push(s);
            }
            let m = phi_path(&Path::new(i, steps).unwrap()).unwrap();
            prop_assert!(m.slope > Rational::zero());
            prop_assert!(m.slope <= Rational::from_integer(1));
            let (a, b) = m.image_of_unit().unwrap();
            prop_assert!(Rational::zero() <= a && a < b && b <= Rational::from_integer(1));
        }
    }
}
