//! Exact parameter and multiply-add accounting for three-layer bottleneck
//! blocks, plus a table-driven alternative for synthetic instances.
//!
//! A block at a position expands channels with a grouped 1x1 convolution,
//! filters with a depthwise k x k convolution (which absorbs the stride),
//! and projects back with a second grouped 1x1 convolution. Biases and
//! normalization parameters are excluded everywhere; one multiply-add is one
//! weight applied at one output location.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Assignment, BlockCatalog, BlockType, Cost, Element, Position, Skeleton};

/// Failures of the cost preconditions; each names the offending position.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CostError {
    #[error("position {position}: {detail}")]
    GroupMismatch { position: u32, detail: String },
    #[error("position {position}: {channels} input channels times {factor} is not an integer channel count")]
    NonIntegerChannels { position: u32, channels: u32, factor: String },
    #[error("no cost entry for element (position {position}, type {block})")]
    MissingEntry { position: u32, block: u32 },
    #[error("unknown block type id {block}")]
    UnknownBlock { block: u32 },
    #[error("unknown position index {position}")]
    UnknownPosition { position: u32 },
}

/// Which of the three layers a cost line refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Expansion,
    Depthwise,
    Projection,
}

impl LayerKind {
    pub fn label(self) -> &'static str {
        match self {
            LayerKind::Expansion => "expansion",
            LayerKind::Depthwise => "depthwise",
            LayerKind::Projection => "projection",
        }
    }
}

/// Cost of one layer of a block instantiated at a position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub kind: LayerKind,
    pub params: u64,
    pub madds: u64,
}

/// Per-layer costs of `block` placed at `position`.
///
/// Preconditions checked here: expansion groups divide the input channels,
/// the expanded channel count is integral, projection groups divide it, and
/// the stride divides both spatial extents.
pub fn block_layers(block: &BlockType, position: &Position) -> Result<[LayerCost; 3], CostError> {
    let c1 = position.in_channels;
    let c2 = position.out_channels;
    let (h, w, s) = (position.height, position.width, position.stride);
    let pos = position.index;

    let expanded = block.expansion_factor.scale_exact(c1 as u64).ok_or_else(|| {
        CostError::NonIntegerChannels {
            position: pos,
            channels: c1,
            factor: block.expansion_factor.to_string(),
        }
    })?;
    if c1 as u64 % block.expansion_groups as u64 != 0 {
        return Err(CostError::GroupMismatch {
            position: pos,
            detail: format!(
                "expansion groups {} do not divide {} input channels",
                block.expansion_groups, c1
            ),
        });
    }
    if expanded % block.projection_groups as u64 != 0 {
        return Err(CostError::GroupMismatch {
            position: pos,
            detail: format!(
                "projection groups {} do not divide {} expanded channels",
                block.projection_groups, expanded
            ),
        });
    }
    if s == 0 || h % s != 0 || w % s != 0 {
        return Err(CostError::GroupMismatch {
            position: pos,
            detail: format!("stride {} does not divide spatial extent {}x{}", s, h, w),
        });
    }

    let in_spatial = h as u64 * w as u64;
    let out_spatial = (h / s) as u64 * (w / s) as u64;

    // Grouped 1x1: each output channel sees in_channels/groups inputs; the
    // expansion runs at the input resolution, everything after the stride.
    let exp_params = (c1 as u64 / block.expansion_groups as u64) * expanded;
    let dw_params = block.kernel as u64 * block.kernel as u64 * expanded;
    let proj_params = (expanded / block.projection_groups as u64) * c2 as u64;

    Ok([
        LayerCost { kind: LayerKind::Expansion, params: exp_params, madds: exp_params * in_spatial },
        LayerCost { kind: LayerKind::Depthwise, params: dw_params, madds: dw_params * out_spatial },
        LayerCost { kind: LayerKind::Projection, params: proj_params, madds: proj_params * out_spatial },
    ])
}

/// Total cost of `block` placed at `position`.
pub fn block_cost(block: &BlockType, position: &Position) -> Result<Cost, CostError> {
    let layers = block_layers(block, position)?;
    Ok(layers
        .iter()
        .fold(Cost::ZERO, |acc, l| acc + Cost::new(l.params, l.madds)))
}

/// Pluggable cost backend. Cost is modular: an assignment costs the fixed
/// base plus the sum of its elements' costs, so marginal cost never depends
/// on what else is selected.
pub trait CostModel: Send + Sync {
    /// Cost of the empty assignment (the fixed skeleton overhead).
    fn base_cost(&self) -> Cost;

    /// Marginal cost of one element.
    fn element_cost(&self, e: Element) -> Result<Cost, CostError>;

    /// Total cost of an assignment.
    fn assignment_cost(&self, a: &Assignment) -> Result<Cost, CostError> {
        let mut total = self.base_cost();
        for e in a.iter() {
            total += self.element_cost(e)?;
        }
        Ok(total)
    }
}

/// Cost model derived from block geometry.
#[derive(Debug, Clone)]
pub struct ConvCostModel {
    skeleton: Skeleton,
    catalog: BlockCatalog,
}

impl ConvCostModel {
    pub fn new(skeleton: Skeleton, catalog: BlockCatalog) -> Self {
        ConvCostModel { skeleton, catalog }
    }

    pub fn skeleton(&self) -> &Skeleton {
        &self.skeleton
    }

    pub fn catalog(&self) -> &BlockCatalog {
        &self.catalog
    }

    /// Per-layer breakdown for one element; the CLI cost table uses this.
    pub fn element_layers(&self, e: Element) -> Result<[LayerCost; 3], CostError> {
        let position = self
            .skeleton
            .position(e.position)
            .ok_or(CostError::UnknownPosition { position: e.position })?;
        let block = self.catalog.get(e.block).ok_or(CostError::UnknownBlock { block: e.block })?;
        block_layers(block, position)
    }
}

impl CostModel for ConvCostModel {
    fn base_cost(&self) -> Cost {
        Cost::new(self.skeleton.fixed_param_overhead, self.skeleton.fixed_madds_overhead)
    }

    fn element_cost(&self, e: Element) -> Result<Cost, CostError> {
        let layers = self.element_layers(e)?;
        Ok(layers.iter().fold(Cost::ZERO, |acc, l| acc + Cost::new(l.params, l.madds)))
    }
}

/// Explicit per-element costs; the synthetic alternative to geometry-derived
/// accounting.
#[derive(Debug, Clone, Default)]
pub struct TableCostModel {
    entries: BTreeMap<(u32, u32), Cost>,
    base: Cost,
}

impl TableCostModel {
    pub fn new<I: IntoIterator<Item = ((u32, u32), Cost)>>(entries: I, base: Cost) -> Self {
        TableCostModel { entries: entries.into_iter().collect(), base }
    }

    pub fn contains(&self, e: Element) -> bool {
        self.entries.contains_key(&(e.position, e.block))
    }
}

impl CostModel for TableCostModel {
    fn base_cost(&self) -> Cost {
        self.base
    }

    fn element_cost(&self, e: Element) -> Result<Cost, CostError> {
        self.entries
            .get(&(e.position, e.block))
            .copied()
            .ok_or(CostError::MissingEntry { position: e.position, block: e.block })
    }
}
