//! Core value types: block catalogs, skeleton positions, assignments,
//! budgets and costs.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::costmodel::{CostError, CostModel};

/// Violations of structural invariants on domain values.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DomainError {
    #[error("position {position} is already filled")]
    PositionOccupied { position: u32 },
    #[error("duplicate position {position} in assignment")]
    DuplicatePosition { position: u32 },
    #[error("invalid rational literal {literal:?}")]
    BadRational { literal: String },
    #[error("invalid catalog: {0}")]
    InvalidCatalog(String),
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Exact nonnegative rational, kept normalized.
///
/// Expansion factors are rationals so channel arithmetic can stay in exact
/// integers end to end; there is deliberately no conversion to float on the
/// cost path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rational {
    num: u64,
    den: u64,
}

impl Rational {
    pub fn new(num: u64, den: u64) -> Option<Self> {
        if den == 0 {
            return None;
        }
        let g = gcd(num, den).max(1);
        Some(Rational { num: num / g, den: den / g })
    }

    pub const fn int(n: u64) -> Self {
        Rational { num: n, den: 1 }
    }

    pub fn numer(&self) -> u64 {
        self.num
    }

    pub fn denom(&self) -> u64 {
        self.den
    }

    pub fn is_positive(&self) -> bool {
        self.num > 0
    }

    /// `x * self` when the product is an integer, `None` otherwise.
    pub fn scale_exact(&self, x: u64) -> Option<u64> {
        let p = x.checked_mul(self.num)?;
        if p % self.den == 0 {
            Some(p / self.den)
        } else {
            None
        }
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for Rational {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, DomainError> {
        let bad = || DomainError::BadRational { literal: s.to_string() };
        match s.split_once('/') {
            None => s.trim().parse::<u64>().map(Rational::int).map_err(|_| bad()),
            Some((a, b)) => {
                let num = a.trim().parse::<u64>().map_err(|_| bad())?;
                let den = b.trim().parse::<u64>().map_err(|_| bad())?;
                Rational::new(num, den).ok_or_else(bad)
            }
        }
    }
}

impl Serialize for Rational {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.den == 1 {
            s.serialize_u64(self.num)
        } else {
            s.serialize_str(&self.to_string())
        }
    }
}

impl<'de> Deserialize<'de> for Rational {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(u64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Int(n) => Ok(Rational::int(n)),
            Repr::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// One entry in the block catalog: a three-layer bottleneck block described
/// by its expansion factor, group counts and depthwise kernel size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockType {
    /// Catalog id; ids run 1..=L with no gaps.
    pub id: u32,
    /// Channel expansion applied by the first pointwise layer.
    pub expansion_factor: Rational,
    /// Group count of the expansion layer.
    pub expansion_groups: u32,
    /// Group count of the projection layer.
    pub projection_groups: u32,
    /// Depthwise kernel size (k x k).
    #[serde(default = "default_kernel")]
    pub kernel: u32,
    /// Free-form display name.
    #[serde(default)]
    pub label: String,
}

fn default_kernel() -> u32 {
    3
}

/// The searchable block types, indexed by id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockCatalog {
    pub types: Vec<BlockType>,
}

impl BlockCatalog {
    pub fn new(types: Vec<BlockType>) -> Result<Self, DomainError> {
        let cat = BlockCatalog { types };
        cat.validate()?;
        Ok(cat)
    }

    /// Number of block types, `L`.
    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<&BlockType> {
        self.types.iter().find(|t| t.id == id)
    }

    /// INVARIANT: ids are exactly 1..=L in order, factors positive, groups
    /// and kernels nonzero.
    pub fn validate(&self) -> Result<(), DomainError> {
        if self.types.is_empty() {
            return Err(DomainError::InvalidCatalog("catalog has no block types".into()));
        }
        for (i, t) in self.types.iter().enumerate() {
            let want = i as u32 + 1;
            if t.id != want {
                return Err(DomainError::InvalidCatalog(format!(
                    "type ids must run 1..={} without gaps; found id {} at slot {}",
                    self.types.len(),
                    t.id,
                    i
                )));
            }
            if !t.expansion_factor.is_positive() {
                return Err(DomainError::InvalidCatalog(format!(
                    "type {}: expansion factor must be positive",
                    t.id
                )));
            }
            if t.expansion_groups == 0 || t.projection_groups == 0 {
                return Err(DomainError::InvalidCatalog(format!(
                    "type {}: group counts must be nonzero",
                    t.id
                )));
            }
            if t.kernel == 0 {
                return Err(DomainError::InvalidCatalog(format!(
                    "type {}: kernel must be nonzero",
                    t.id
                )));
            }
        }
        Ok(())
    }
}

fn default_stride() -> u32 {
    1
}

/// Geometry of one searchable slot in the skeleton.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Position {
    pub index: u32,
    pub in_channels: u32,
    pub out_channels: u32,
    /// Input spatial height.
    pub height: u32,
    /// Input spatial width.
    pub width: u32,
    #[serde(default = "default_stride")]
    pub stride: u32,
}

/// The fixed outer network: searchable positions plus the cost of everything
/// that is not searched (stems, downsampling stages, classifier heads).
///
/// Every position must be identity-compatible (equal channel counts, stride
/// one) so that leaving it unfilled means an identity connection; stride and
/// channel changes live in the fixed overhead between positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skeleton {
    pub positions: Vec<Position>,
    #[serde(default)]
    pub fixed_param_overhead: u64,
    #[serde(default)]
    pub fixed_madds_overhead: u64,
}

impl Skeleton {
    pub fn new(
        positions: Vec<Position>,
        fixed_param_overhead: u64,
        fixed_madds_overhead: u64,
    ) -> Result<Self, DomainError> {
        let sk = Skeleton { positions, fixed_param_overhead, fixed_madds_overhead };
        sk.validate()?;
        Ok(sk)
    }

    /// Number of searchable positions, `N`.
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn position(&self, index: u32) -> Option<&Position> {
        self.positions.get(index as usize)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.positions.is_empty() {
            return Err(DomainError::InvalidSkeleton("skeleton has no positions".into()));
        }
        for (i, p) in self.positions.iter().enumerate() {
            if p.index != i as u32 {
                return Err(DomainError::InvalidSkeleton(format!(
                    "position indices must run 0..{} in order; found {} at slot {}",
                    self.positions.len(),
                    p.index,
                    i
                )));
            }
            if p.in_channels != p.out_channels || p.stride != 1 {
                return Err(DomainError::InvalidSkeleton(format!(
                    "position {} is not identity-compatible (needs in==out channels and stride 1)",
                    p.index
                )));
            }
            if p.in_channels == 0 || p.height == 0 || p.width == 0 {
                return Err(DomainError::InvalidSkeleton(format!(
                    "position {} has zero-sized geometry",
                    p.index
                )));
            }
        }
        Ok(())
    }
}

/// One candidate decision: place block type `block` at position `position`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Element {
    pub position: u32,
    #[serde(rename = "type")]
    pub block: u32,
}

impl Element {
    pub fn new(position: u32, block: u32) -> Self {
        Element { position, block }
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(pos {}, type {})", self.position, self.block)
    }
}

/// Wire form of one filled slot; used both in assignment files and in the
/// evaluator protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilledSlot {
    pub position: u32,
    #[serde(rename = "type")]
    pub block: u32,
}

#[derive(Serialize, Deserialize)]
struct AssignmentRepr {
    filled: Vec<FilledSlot>,
}

/// A partial solution: at most one block type per position.
///
/// Value semantics throughout — `with` returns a new assignment. Iteration
/// and serialization are always in ascending position order, which makes the
/// JSON form canonical.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "AssignmentRepr", into = "AssignmentRepr")]
pub struct Assignment {
    filled: BTreeMap<u32, u32>,
}

impl Assignment {
    pub fn empty() -> Self {
        Assignment::default()
    }

    /// Number of filled positions.
    pub fn len(&self) -> usize {
        self.filled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filled.is_empty()
    }

    pub fn contains_position(&self, position: u32) -> bool {
        self.filled.contains_key(&position)
    }

    /// Block type at `position`, if filled.
    pub fn get(&self, position: u32) -> Option<u32> {
        self.filled.get(&position).copied()
    }

    /// This assignment plus `e`; the position must currently be empty.
    pub fn with(&self, e: Element) -> Result<Assignment, DomainError> {
        if self.contains_position(e.position) {
            return Err(DomainError::PositionOccupied { position: e.position });
        }
        let mut next = self.clone();
        next.filled.insert(e.position, e.block);
        Ok(next)
    }

    /// Elements in ascending position order.
    pub fn iter(&self) -> impl Iterator<Item = Element> + '_ {
        self.filled.iter().map(|(&p, &b)| Element::new(p, b))
    }

    pub fn elements(&self) -> Vec<Element> {
        self.iter().collect()
    }

    pub fn slots(&self) -> Vec<FilledSlot> {
        self.filled.iter().map(|(&p, &b)| FilledSlot { position: p, block: b }).collect()
    }

    pub fn from_elements<I: IntoIterator<Item = Element>>(iter: I) -> Result<Self, DomainError> {
        let mut a = Assignment::empty();
        for e in iter {
            if a.contains_position(e.position) {
                return Err(DomainError::DuplicatePosition { position: e.position });
            }
            a.filled.insert(e.position, e.block);
        }
        Ok(a)
    }

    /// Stable key for caches and lookup tables: `(position, type)` pairs in
    /// ascending position order.
    pub fn canonical_key(&self) -> Box<[(u32, u32)]> {
        self.filled.iter().map(|(&p, &b)| (p, b)).collect()
    }

    /// Block type ids of filled positions, in position order. Unfilled
    /// positions collapse to identity connections and do not appear.
    pub fn block_sequence(&self) -> Vec<u32> {
        self.filled.values().copied().collect()
    }
}

impl TryFrom<AssignmentRepr> for Assignment {
    type Error = DomainError;

    fn try_from(repr: AssignmentRepr) -> Result<Self, DomainError> {
        let mut a = Assignment::empty();
        for slot in repr.filled {
            if a.contains_position(slot.position) {
                return Err(DomainError::DuplicatePosition { position: slot.position });
            }
            a.filled.insert(slot.position, slot.block);
        }
        Ok(a)
    }
}

impl From<Assignment> for AssignmentRepr {
    fn from(a: Assignment) -> AssignmentRepr {
        AssignmentRepr { filled: a.slots() }
    }
}

/// The dual knapsack: ceilings on parameters and multiply-adds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub max_params: u64,
    pub max_madds: u64,
}

impl Budget {
    pub fn new(max_params: u64, max_madds: u64) -> Self {
        Budget { max_params, max_madds }
    }

    /// True when `cost` fits under both ceilings.
    pub fn admits(&self, cost: Cost) -> bool {
        cost.params <= self.max_params && cost.madds <= self.max_madds
    }
}

/// Exact resource cost. Arithmetic is integral end to end.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cost {
    pub params: u64,
    pub madds: u64,
}

impl Cost {
    pub const ZERO: Cost = Cost { params: 0, madds: 0 };

    pub fn new(params: u64, madds: u64) -> Self {
        Cost { params, madds }
    }
}

impl std::ops::Add for Cost {
    type Output = Cost;

    fn add(self, rhs: Cost) -> Cost {
        Cost { params: self.params + rhs.params, madds: self.madds + rhs.madds }
    }
}

impl std::ops::AddAssign for Cost {
    fn add_assign(&mut self, rhs: Cost) {
        self.params += rhs.params;
        self.madds += rhs.madds;
    }
}

/// The full ground set: every (position, type) pair, ordered by position
/// then type id. Engines rely on this order for deterministic tie-breaking.
pub fn ground_set(skeleton: &Skeleton, catalog: &BlockCatalog) -> Vec<Element> {
    let mut out = Vec::with_capacity(skeleton.len() * catalog.len());
    for p in &skeleton.positions {
        for t in &catalog.types {
            out.push(Element::new(p.index, t.id));
        }
    }
    out
}

/// Elements that can legally extend `a`: their position is unfilled and the
/// extended assignment still fits both budgets. Output is sorted by
/// `(position, type)` regardless of the order of `ground`.
pub fn feasible_elements(
    a: &Assignment,
    ground: &[Element],
    budget: Budget,
    cost: &dyn CostModel,
) -> Result<Vec<Element>, CostError> {
    let base = cost.assignment_cost(a)?;
    let mut out = Vec::new();
    for &e in ground {
        if a.contains_position(e.position) {
            continue;
        }
        if budget.admits(base + cost.element_cost(e)?) {
            out.push(e);
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}
