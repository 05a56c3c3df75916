//! Deterministic mask plans.
//!
//! Every strategy except `random` is a fixed ordering of the grid cells;
//! the plan masks the first `round_half_up(ratio * N)` cells of that
//! ordering. The orderings are:
//!
//! * **center**: concentric rectangular shells around the central cell(s)
//!   (one central row/column for odd extents, two for even). Shell `k`
//!   holds cells at Chebyshev distance `k` from that central block. Cells
//!   within a shell are taken in row-major order, except that when the
//!   first row-major cell of a shell is the top-left corner of its ring it
//!   is taken second, so the masked region stays 4-connected.
//! * **perimeter**: rings by distance to the nearest grid edge, outermost
//!   first, row-major within a ring.
//! * **one_sided**: whole columns (left/right) or rows (top/bottom) starting
//!   from the chosen side; cells inside a line in ascending index order.
//! * **corner**: a square block of side `round(sqrt(1 - ratio) * min(rows,
//!   cols))` at the anchor is kept visible. Cells outside it come first by
//!   decreasing Chebyshev distance from the anchor cell, then the block's
//!   own cells by the same key; ties in row-major order.
//!
//! `random` draws indices uniformly without replacement with a partial
//! Fisher-Yates shuffle of `0..N` driven by [`SplitMix64`] seeded with the
//! plan seed: for `i` in `0..count`, swap position `i` with `i +
//! below(N - i)`. The masked set is the first `count` positions, sorted.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::PatchGrid;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    Center,
    Perimeter,
    OneSided,
    Corner,
    /// A caller-supplied index set.
    Explicit,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Random,
        Strategy::Center,
        Strategy::Perimeter,
        Strategy::OneSided,
        Strategy::Corner,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Center => "center",
            Strategy::Perimeter => "perimeter",
            Strategy::OneSided => "one_sided",
            Strategy::Corner => "corner",
            Strategy::Explicit => "explicit",
        }
    }

    /// Row label used in evaluation tables.
    pub fn label(self) -> &'static str {
        match self {
            Strategy::Random => "Random Masking",
            Strategy::Center => "Center Masking",
            Strategy::Perimeter => "Perimeter Masking",
            Strategy::OneSided => "One-sided Masking",
            Strategy::Corner => "Corner Masking",
            Strategy::Explicit => "Explicit Masking",
        }
    }

    /// Evaluation ratio used when none is given.
    pub fn default_ratio(self) -> f64 {
        match self {
            Strategy::Random => 0.80,
            Strategy::Center => 0.30,
            Strategy::Perimeter => 0.70,
            Strategy::OneSided => 0.30,
            Strategy::Corner => 0.75,
            Strategy::Explicit => 0.0,
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Strategy::Random),
            "center" => Ok(Strategy::Center),
            "perimeter" => Ok(Strategy::Perimeter),
            "one_sided" | "one-sided" => Ok(Strategy::OneSided),
            "corner" => Ok(Strategy::Corner),
            other => Err(Error::BadMask(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    #[default]
    Left,
    Right,
    Top,
    Bottom,
}

impl FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(Side::Left),
            "right" => Ok(Side::Right),
            "top" => Ok(Side::Top),
            "bottom" => Ok(Side::Bottom),
            other => Err(Error::BadMask(format!("unknown side {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    #[default]
    Tl,
    Tr,
    Bl,
    Br,
}

impl FromStr for Anchor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tl" => Ok(Anchor::Tl),
            "tr" => Ok(Anchor::Tr),
            "bl" => Ok(Anchor::Bl),
            "br" => Ok(Anchor::Br),
            other => Err(Error::BadMask(format!("unknown anchor {other:?}"))),
        }
    }
}

/// Number of cells masked for `ratio` over `n` cells, rounding half up.
pub fn mask_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64 + 0.5).floor() as usize).min(n)
}

fn check_ratio(ratio: f64) -> Result<()> {
    if (0.0..=1.0).contains(&ratio) {
        Ok(())
    } else {
        Err(Error::BadRatio(ratio))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MaskPlanRepr")]
pub struct MaskPlan {
    pub strategy: Strategy,
    pub ratio: f64,
    pub seed: u64,
    pub side: Option<Side>,
    pub anchor: Option<Anchor>,
    pub grid: PatchGrid,
    /// Ascending, duplicate-free.
    pub masked: Vec<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskPlanRepr {
    strategy: Strategy,
    ratio: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    side: Option<Side>,
    #[serde(default)]
    anchor: Option<Anchor>,
    grid: PatchGrid,
    masked: Vec<usize>,
}

impl TryFrom<MaskPlanRepr> for MaskPlan {
    type Error = Error;

    fn try_from(r: MaskPlanRepr) -> Result<Self> {
        check_ratio(r.ratio)?;
        let plan = MaskPlan {
            strategy: r.strategy,
            ratio: r.ratio,
            seed: r.seed,
            side: r.side,
            anchor: r.anchor,
            grid: r.grid,
            masked: r.masked,
        };
        plan.validate()?;
        Ok(plan)
    }
}

impl MaskPlan {
    fn from_order(
        strategy: Strategy,
        grid: PatchGrid,
        ratio: f64,
        order: impl IntoIterator<Item = usize>,
    ) -> Self {
        let count = mask_count(ratio, grid.num_patches());
        let mut masked: Vec<usize> = order.into_iter().take(count).collect();
        masked.sort_unstable();
        MaskPlan {
            strategy,
            ratio,
            seed: 0,
            side: None,
            anchor: None,
            grid,
            masked,
        }
    }

    /// Plan from a caller-supplied index set. Indices may come in any order
    /// but must be in range and unique.
    pub fn explicit(grid: PatchGrid, indices: &[usize]) -> Result<Self> {
        let n = grid.num_patches();
        let mut masked = indices.to_vec();
        masked.sort_unstable();
        if let Some(&bad) = masked.iter().find(|&&i| i >= n) {
            return Err(Error::BadMask(format!("index {bad} outside grid of {n}")));
        }
        if masked.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::BadMask("duplicate index".into()));
        }
        let ratio = if n == 0 {
            0.0
        } else {
            masked.len() as f64 / n as f64
        };
        Ok(MaskPlan {
            strategy: Strategy::Explicit,
            ratio,
            seed: 0,
            side: None,
            anchor: None,
            grid,
            masked,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.grid.num_patches();
        if self.masked.iter().any(|&i| i >= n) {
            return Err(Error::BadMask(format!("index outside grid of {n}")));
        }
        if self.masked.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::BadMask("indices must be ascending and unique".into()));
        }
        Ok(())
    }

    pub fn num_masked(&self) -> usize {
        self.masked.len()
    }

    pub fn realized_ratio(&self) -> f64 {
        let n = self.grid.num_patches();
        if n == 0 {
            0.0
        } else {
            self.masked.len() as f64 / n as f64
        }
    }

    /// Per-cell flags, `true` where masked.
    pub fn mask_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.grid.num_patches()];
        for &i in &self.masked {
            flags[i] = true;
        }
        flags
    }

    /// Ascending complement of the masked set.
    pub fn visible(&self) -> Vec<usize> {
        let flags = self.mask_flags();
        (0..flags.len()).filter(|&i| !flags[i]).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

pub fn plan_random(grid: PatchGrid, ratio: f64, seed: u64) -> Result<MaskPlan> {
    check_ratio(ratio)?;
    let n = grid.num_patches();
    let count = mask_count(ratio, n);
    let mut cells: Vec<usize> = (0..n).collect();
    let mut rng = SplitMix64::new(seed);
    for i in 0..count {
        let j = i + rng.below((n - i) as u64) as usize;
        cells.swap(i, j);
    }
    let mut plan = MaskPlan::from_order(Strategy::Random, grid, ratio, cells);
    plan.seed = seed;
    Ok(plan)
}

/// Center band along one axis: `lo..=hi` is the middle cell (odd extent)
/// or the middle two cells (even extent).
fn band(extent: usize) -> (usize, usize) {
    ((extent.saturating_sub(1)) / 2, extent / 2)
}

fn band_dist(i: usize, (lo, hi): (usize, usize)) -> usize {
    lo.saturating_sub(i).max(i.saturating_sub(hi))
}

pub fn center_order(grid: PatchGrid) -> Vec<usize> {
    let (rb, cb) = (band(grid.rows), band(grid.cols));
    let shell = |i: usize| {
        let (r, c) = grid.cell(i);
        band_dist(r, rb).max(band_dist(c, cb))
    };
    let mut order: Vec<usize> = (0..grid.num_patches()).collect();
    order.sort_by_key(|&i| (shell(i), i));
    // Defer an exposed top-left ring corner by one place.
    let mut start = 0;
    while start < order.len() {
        let k = shell(order[start]);
        let end = start + order[start..].iter().take_while(|&&i| shell(i) == k).count();
        if k > 0 && end - start >= 2 {
            let (r, c) = grid.cell(order[start]);
            let is_corner = rb.0.checked_sub(k) == Some(r) && cb.0.checked_sub(k) == Some(c);
            if is_corner {
                order.swap(start, start + 1);
            }
        }
        start = end;
    }
    order
}

pub fn plan_center(grid: PatchGrid, ratio: f64) -> Result<MaskPlan> {
    check_ratio(ratio)?;
    Ok(MaskPlan::from_order(
        Strategy::Center,
        grid,
        ratio,
        center_order(grid),
    ))
}

pub fn perimeter_order(grid: PatchGrid) -> Vec<usize> {
    let ring = |i: usize| {
        let (r, c) = grid.cell(i);
        r.min(c).min(grid.rows - 1 - r).min(grid.cols - 1 - c)
    };
    let mut order: Vec<usize> = (0..grid.num_patches()).collect();
    order.sort_by_key(|&i| (ring(i), i));
    order
}

pub fn plan_perimeter(grid: PatchGrid, ratio: f64) -> Result<MaskPlan> {
    check_ratio(ratio)?;
    Ok(MaskPlan::from_order(
        Strategy::Perimeter,
        grid,
        ratio,
        perimeter_order(grid),
    ))
}

pub fn one_sided_order(grid: PatchGrid, side: Side) -> Vec<usize> {
    let (rows, cols) = (grid.rows, grid.cols);
    let mut order = Vec::with_capacity(grid.num_patches());
    match side {
        Side::Left | Side::Right => {
            for k in 0..cols {
                let c = if side == Side::Left { k } else { cols - 1 - k };
                order.extend((0..rows).map(|r| grid.index(r, c)));
            }
        }
        Side::Top | Side::Bottom => {
            for k in 0..rows {
                let r = if side == Side::Top { k } else { rows - 1 - k };
                order.extend((0..cols).map(|c| grid.index(r, c)));
            }
        }
    }
    order
}

pub fn plan_one_sided(grid: PatchGrid, ratio: f64, side: Side) -> Result<MaskPlan> {
    check_ratio(ratio)?;
    let mut plan = MaskPlan::from_order(Strategy::OneSided, grid, ratio, one_sided_order(grid, side));
    plan.side = Some(side);
    Ok(plan)
}

/// Side of the visible corner block kept for `ratio`.
pub fn corner_block_side(grid: PatchGrid, ratio: f64) -> usize {
    let min_side = grid.rows.min(grid.cols) as f64;
    (((1.0 - ratio).max(0.0).sqrt() * min_side) + 0.5).floor() as usize
}

pub fn corner_order(grid: PatchGrid, ratio: f64, anchor: Anchor) -> Vec<usize> {
    let side = corner_block_side(grid, ratio);
    let (ar, ac) = match anchor {
        Anchor::Tl => (0, 0),
        Anchor::Tr => (0, grid.cols - 1),
        Anchor::Bl => (grid.rows - 1, 0),
        Anchor::Br => (grid.rows - 1, grid.cols - 1),
    };
    let key = |i: usize| {
        let (r, c) = grid.cell(i);
        let dist = r.abs_diff(ar).max(c.abs_diff(ac));
        let in_block = r.abs_diff(ar) < side && c.abs_diff(ac) < side;
        (in_block, std::cmp::Reverse(dist), i)
    };
    let mut order: Vec<usize> = (0..grid.num_patches()).collect();
    order.sort_by_key(|&i| key(i));
    order
}

pub fn plan_corner(grid: PatchGrid, ratio: f64, anchor: Anchor) -> Result<MaskPlan> {
    check_ratio(ratio)?;
    let mut plan = MaskPlan::from_order(Strategy::Corner, grid, ratio, corner_order(grid, ratio, anchor));
    plan.anchor = Some(anchor);
    Ok(plan)
}

/// Strategy parameters without a grid; turned into a [`MaskPlan`] per image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSpec {
    pub strategy: Strategy,
    pub ratio: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub side: Option<Side>,
    #[serde(default)]
    pub anchor: Option<Anchor>,
}

impl MaskSpec {
    pub fn new(strategy: Strategy, ratio: f64) -> Self {
        Self {
            strategy,
            ratio,
            seed: 0,
            side: None,
            anchor: None,
        }
    }

    /// The five evaluation presets: random 0.80, center 0.30, perimeter
    /// 0.70, one-sided 0.30 and corner 0.75.
    pub fn eval_presets() -> Vec<MaskSpec> {
        Strategy::ALL
            .iter()
            .map(|&s| MaskSpec::new(s, s.default_ratio()))
            .collect()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn plan(&self, grid: PatchGrid) -> Result<MaskPlan> {
        match self.strategy {
            Strategy::Random => plan_random(grid, self.ratio, self.seed),
            Strategy::Center => plan_center(grid, self.ratio),
            Strategy::Perimeter => plan_perimeter(grid, self.ratio),
            Strategy::OneSided => plan_one_sided(grid, self.ratio, self.side.unwrap_or_default()),
            Strategy::Corner => plan_corner(grid, self.ratio, self.anchor.unwrap_or_default()),
            Strategy::Explicit => Err(Error::BadMask(
                "explicit plans need an index list, not a strategy spec".into(),
            )),
        }
    }
}

impl fmt::Display for MaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.strategy.name(), self.ratio)?;
        match (self.side, self.anchor) {
            (Some(s), _) if self.strategy == Strategy::OneSided => {
                write!(f, ":{}", serde_json::to_value(s).unwrap().as_str().unwrap())
            }
            (_, Some(a)) if self.strategy == Strategy::Corner => {
                write!(f, ":{}", serde_json::to_value(a).unwrap().as_str().unwrap())
            }
            _ => Ok(()),
        }
    }
}

/// Parses `name[:ratio[:side|anchor]]`, e.g. `one_sided:0.3:left`,
/// `corner:0.75:br` or `random`. A missing ratio takes the strategy's
/// evaluation default.
impl FromStr for MaskSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split(':');
        let strategy: Strategy = parts.next().unwrap_or_default().parse()?;
        let ratio = match parts.next() {
            Some(r) => r
                .parse::<f64>()
                .map_err(|_| Error::BadMask(format!("bad ratio in {s:?}")))?,
            None => strategy.default_ratio(),
        };
        check_ratio(ratio)?;
        let mut spec = MaskSpec::new(strategy, ratio);
        if let Some(extra) = parts.next() {
            match strategy {
                Strategy::OneSided => spec.side = Some(extra.parse()?),
                Strategy::Corner => spec.anchor = Some(extra.parse()?),
                _ => return Err(Error::BadMask(format!("unexpected qualifier in {s:?}"))),
            }
        }
        if parts.next().is_some() {
            return Err(Error::BadMask(format!("too many fields in {s:?}")));
        }
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(rows: usize, cols: usize) -> PatchGrid {
        PatchGrid::with_shape(rows, cols, 1)
    }

    #[test]
    fn half_up_rounding() {
        assert_eq!(mask_count(0.5, 5), 3);
        assert_eq!(mask_count(0.3, 64), 19);
        assert_eq!(mask_count(0.7, 64), 45);
        assert_eq!(mask_count(0.75, 16), 12);
        assert_eq!(mask_count(1.0, 7), 7);
        assert_eq!(mask_count(0.0, 7), 0);
    }

    #[test]
    fn random_extremes_and_determinism() {
        assert!(plan_random(g(4, 4), 0.0, 9).unwrap().masked.is_empty());
        assert_eq!(
            plan_random(g(4, 4), 1.0, 9).unwrap().masked,
            (0..16).collect::<Vec<_>>()
        );
        let a = plan_random(g(4, 4), 0.25, 1234).unwrap();
        let b = plan_random(g(4, 4), 0.25, 1234).unwrap();
        assert_eq!(a.masked.len(), 4);
        assert_eq!(a, b);
    }

    #[test]
    fn center_four_by_four() {
        assert_eq!(plan_center(g(4, 4), 0.25).unwrap().masked, vec![5, 6, 9, 10]);
        assert_eq!(plan_center(g(4, 4), 1.0).unwrap().masked.len(), 16);
    }

    #[test]
    fn perimeter_four_by_four_is_boundary() {
        let plan = plan_perimeter(g(4, 4), 0.75).unwrap();
        assert_eq!(plan.masked, vec![0, 1, 2, 3, 4, 7, 8, 11, 12, 13, 14, 15]);
        assert!(plan_perimeter(g(4, 4), 0.0).unwrap().masked.is_empty());
    }

    #[test]
    fn one_sided_four_by_four_left_half() {
        let plan = plan_one_sided(g(4, 4), 0.5, Side::Left).unwrap();
        assert_eq!(plan.masked, vec![0, 1, 4, 5, 8, 9, 12, 13]);
        assert!(plan_one_sided(g(4, 4), 0.0, Side::Left)
            .unwrap()
            .masked
            .is_empty());
    }

    #[test]
    fn one_sided_other_sides() {
        assert_eq!(
            plan_one_sided(g(4, 4), 0.25, Side::Right).unwrap().masked,
            vec![3, 7, 11, 15]
        );
        assert_eq!(
            plan_one_sided(g(4, 4), 0.25, Side::Top).unwrap().masked,
            vec![0, 1, 2, 3]
        );
        assert_eq!(
            plan_one_sided(g(4, 4), 0.25, Side::Bottom).unwrap().masked,
            vec![12, 13, 14, 15]
        );
    }

    #[test]
    fn corner_four_by_four() {
        let plan = plan_corner(g(4, 4), 0.75, Anchor::Tl).unwrap();
        assert_eq!(plan.visible(), vec![0, 1, 4, 5]);
        assert_eq!(plan.masked.len(), 12);
        let br = plan_corner(g(4, 4), 0.75, Anchor::Br).unwrap();
        assert_eq!(br.visible(), vec![10, 11, 14, 15]);
        assert_eq!(plan_corner(g(4, 4), 1.0, Anchor::Tl).unwrap().masked.len(), 16);
    }

    #[test]
    fn corner_converts_block_cells_when_short() {
        // 4x4 at 0.6: block side round(sqrt(0.4) * 4) = 3 leaves 7
        // candidates but round(9.6) = 10 are needed, so the three block
        // cells farthest from the anchor, (0,2) (1,2) (2,0), go as well.
        let plan = plan_corner(g(4, 4), 0.6, Anchor::Tl).unwrap();
        assert_eq!(plan.masked.len(), 10);
        assert_eq!(plan.visible(), vec![0, 1, 4, 5, 9, 10]);
    }

    #[test]
    fn bad_ratio_rejected() {
        assert!(matches!(plan_random(g(2, 2), 1.5, 0), Err(Error::BadRatio(_))));
        assert!(matches!(plan_center(g(2, 2), -0.1), Err(Error::BadRatio(_))));
        assert!(matches!(
            plan_perimeter(g(2, 2), f64::NAN),
            Err(Error::BadRatio(_))
        ));
        assert!(plan_one_sided(g(2, 2), 2.0, Side::Top).is_err());
        assert!(plan_corner(g(2, 2), 2.0, Anchor::Br).is_err());
    }

    #[test]
    fn explicit_plans_validate() {
        let plan = MaskPlan::explicit(g(2, 2), &[3, 1]).unwrap();
        assert_eq!(plan.masked, vec![1, 3]);
        assert_eq!(plan.realized_ratio(), 0.5);
        assert!(MaskPlan::explicit(g(2, 2), &[4]).is_err());
        assert!(MaskPlan::explicit(g(2, 2), &[1, 1]).is_err());
    }

    #[test]
    fn json_roundtrip_and_validation() {
        let plan = plan_one_sided(PatchGrid::with_shape(4, 4, 8), 0.5, Side::Top).unwrap();
        let json = plan.to_json();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["strategy"], "one_sided");
        assert_eq!(v["side"], "top");
        assert_eq!(v["grid"]["patch_size"], 8);
        assert_eq!(serde_json::from_str::<MaskPlan>(&json).unwrap(), plan);
        let bad = json.replace("\"masked\": [\n    0,", "\"masked\": [\n    99,");
        assert!(serde_json::from_str::<MaskPlan>(&bad).is_err());
    }

    #[test]
    fn spec_parsing() {
        let s: MaskSpec = "one_sided:0.3".parse().unwrap();
        assert_eq!((s.strategy, s.ratio), (Strategy::OneSided, 0.3));
        let s: MaskSpec = "corner:0.75:br".parse().unwrap();
        assert_eq!(s.anchor, Some(Anchor::Br));
        let s: MaskSpec = "random".parse().unwrap();
        assert_eq!(s.ratio, 0.8);
        assert!("random:1.2".parse::<MaskSpec>().is_err());
        assert!("center:0.3:left".parse::<MaskSpec>().is_err());
        assert!("blob".parse::<MaskSpec>().is_err());
        assert_eq!(MaskSpec::eval_presets().len(), 5);
    }
}
