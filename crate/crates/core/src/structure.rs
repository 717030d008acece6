//! Visible-hidden connectivity.
//!
//! A [`ConnectivityStructure`] is the support of the weight matrix: for every
//! hidden unit `j` the sorted set of visible indices it connects to, plus the
//! reverse map from every visible unit to the hidden units that see it.
//! Image structures are built from `(window, stride)` blocks over a pixel
//! grid; each hidden unit owns the Chebyshev ball of radius `window` around
//! its centre, clipped to the image.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pixel grid of an image, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
}

impl Grid {
    pub fn new(height: usize, width: usize) -> Self {
        Grid { height, width }
    }

    pub fn square(side: usize) -> Self {
        Grid::new(side, side)
    }

    /// A 1×n grid, used for structures that carry no spatial layout.
    pub fn flat(n: usize) -> Self {
        Grid::new(1, n)
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }
}

/// One `(window, stride)` block of hidden units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub window: usize,
    pub stride: usize,
}

impl BlockSpec {
    pub fn new(window: usize, stride: usize) -> Self {
        BlockSpec { window, stride }
    }

    fn validate(&self, grid: Grid) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::Spec("stride must be at least 1".into()));
        }
        let side = 2 * self.window + 1;
        if side > grid.height || side > grid.width {
            return Err(Error::Spec(format!(
                "window {} needs a {side}x{side} neighbourhood but the grid is {}x{}",
                self.window, grid.height, grid.width
            )));
        }
        Ok(())
    }
}

/// Textual description of a structure: `M(w1,t1;w2,t2;...)` or `dense(n_h)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum StructureSpec {
    Blocks(Vec<BlockSpec>),
    Dense { n_hidden: usize },
}

impl StructureSpec {
    pub fn blocks(blocks: &[(usize, usize)]) -> Self {
        StructureSpec::Blocks(blocks.iter().map(|&(w, t)| BlockSpec::new(w, t)).collect())
    }

    pub fn dense(n_hidden: usize) -> Self {
        StructureSpec::Dense { n_hidden }
    }

    /// The six structured models of the reference experiments, in table order.
    pub fn reference_models() -> Vec<StructureSpec> {
        vec![
            StructureSpec::blocks(&[(4, 2)]),
            StructureSpec::blocks(&[(3, 2)]),
            StructureSpec::blocks(&[(3, 2), (4, 2)]),
            StructureSpec::blocks(&[(4, 1)]),
            StructureSpec::blocks(&[(4, 2), (4, 1)]),
            StructureSpec::blocks(&[(3, 2), (4, 1)]),
        ]
    }
}

impl fmt::Display for StructureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StructureSpec::Dense { n_hidden } => write!(f, "dense({n_hidden})"),
            StructureSpec::Blocks(blocks) => {
                f.write_str("M(")?;
                for (k, b) in blocks.iter().enumerate() {
                    if k > 0 {
                        f.write_str(";")?;
                    }
                    write!(f, "{},{}", b.window, b.stride)?;
                }
                f.write_str(")")
            }
        }
    }
}

impl FromStr for StructureSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Spec(format!("cannot parse {s:?}; expected M(w,t;...) or dense(n)"));
        let (head, rest) = s.split_once('(').ok_or_else(bad)?;
        let body = rest.strip_suffix(')').ok_or_else(bad)?;
        let parse_num = |x: &str| x.trim().parse::<usize>().map_err(|_| bad());
        match head.trim() {
            "M" | "m" => {
                let mut blocks = Vec::new();
                for part in body.split(';') {
                    let (w, t) = part.split_once(',').ok_or_else(bad)?;
                    blocks.push(BlockSpec::new(parse_num(w)?, parse_num(t)?));
                }
                if blocks.is_empty() {
                    return Err(bad());
                }
                Ok(StructureSpec::Blocks(blocks))
            }
            "dense" => Ok(StructureSpec::Dense { n_hidden: parse_num(body)? }),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for StructureSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<StructureSpec> for String {
    fn from(spec: StructureSpec) -> String {
        spec.to_string()
    }
}

/// Where a hidden unit sits on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Centre {
    Pixel { row: usize, col: usize },
    Dense,
}

/// Neighbourhood centres of one block, row-major.
///
/// Coordinates run over `window, window + stride, ...` up to `side - window`,
/// never past the last pixel. The far-edge centre therefore has its
/// neighbourhood clipped by the image border.
pub fn build_centres(window: usize, stride: usize, grid: Grid) -> Result<Vec<(usize, usize)>> {
    BlockSpec::new(window, stride).validate(grid)?;
    let axis = |side: usize| {
        let last = (side - window).min(side - 1);
        (window..=last).step_by(stride).collect::<Vec<_>>()
    };
    let rows = axis(grid.height);
    let cols = axis(grid.width);
    Ok(rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect())
}

/// Bipartite support of the weight matrix.
///
/// Weights are laid out hidden-unit by hidden-unit: slots
/// `offsets[j]..offsets[j + 1]` belong to hidden unit `j`, and `visible[slot]`
/// is the visible index of that weight. The reverse map lists, for every
/// visible unit, the `(hidden, slot)` pairs touching it.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityStructure {
    spec: StructureSpec,
    grid: Grid,
    n_hidden: usize,
    offsets: Vec<usize>,
    visible: Vec<usize>,
    centres: Vec<Centre>,
    rev_offsets: Vec<usize>,
    rev_hidden: Vec<usize>,
    rev_slot: Vec<usize>,
}

impl ConnectivityStructure {
    /// Builds the structure described by `spec` on `grid`.
    pub fn build(spec: &StructureSpec, grid: Grid) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::Spec("grid has no pixels".into()));
        }
        match spec {
            StructureSpec::Dense { n_hidden } => Self::dense_on_grid(grid, *n_hidden),
            StructureSpec::Blocks(blocks) => {
                if blocks.is_empty() {
                    return Err(Error::Spec("structure has no blocks".into()));
                }
                let mut neighbourhoods = Vec::new();
                let mut centres = Vec::new();
                for block in blocks {
                    let w = block.window;
                    for (r, c) in build_centres(w, block.stride, grid)? {
                        let rows = r.saturating_sub(w)..(r + w + 1).min(grid.height);
                        let cols = c.saturating_sub(w)..(c + w + 1).min(grid.width);
                        let hood = rows
                            .flat_map(|y| cols.clone().map(move |x| grid.index(y, x)))
                            .collect::<Vec<_>>();
                        neighbourhoods.push(hood);
                        centres.push(Centre::Pixel { row: r, col: c });
                    }
                }
                Self::assemble(spec.clone(), grid, neighbourhoods, centres)
            }
        }
    }

    /// Fully connected structure (vanilla RBM) with a flat grid.
    pub fn dense(n_visible: usize, n_hidden: usize) -> Result<Self> {
        if n_visible == 0 {
            return Err(Error::Spec("dense structure needs n_v >= 1".into()));
        }
        Self::dense_on_grid(Grid::flat(n_visible), n_hidden)
    }

    fn dense_on_grid(grid: Grid, n_hidden: usize) -> Result<Self> {
        if n_hidden == 0 {
            return Err(Error::Spec("dense structure needs n_h >= 1".into()));
        }
        let all: Vec<usize> = (0..grid.len()).collect();
        Self::assemble(
            StructureSpec::Dense { n_hidden },
            grid,
            vec![all; n_hidden],
            vec![Centre::Dense; n_hidden],
        )
    }

    fn assemble(
        spec: StructureSpec,
        grid: Grid,
        mut neighbourhoods: Vec<Vec<usize>>,
        centres: Vec<Centre>,
    ) -> Result<Self> {
        let n_visible = grid.len();
        let n_hidden = neighbourhoods.len();
        let mut offsets = Vec::with_capacity(n_hidden + 1);
        let mut visible = Vec::new();
        offsets.push(0);
        for (j, hood) in neighbourhoods.iter_mut().enumerate() {
            hood.sort_unstable();
            if hood.windows(2).any(|p| p[0] == p[1]) {
                return Err(Error::Spec(format!("hidden unit {j} has duplicate visible indices")));
            }
            if let Some(&i) = hood.last() {
                if i >= n_visible {
                    return Err(Error::Spec(format!("visible index {i} out of range")));
                }
            }
            visible.extend_from_slice(hood);
            offsets.push(visible.len());
        }

        let mut counts = vec![0usize; n_visible + 1];
        for &i in &visible {
            counts[i + 1] += 1;
        }
        for i in 0..n_visible {
            counts[i + 1] += counts[i];
        }
        let rev_offsets = counts;
        let mut cursor = rev_offsets.clone();
        let mut rev_hidden = vec![0; visible.len()];
        let mut rev_slot = vec![0; visible.len()];
        for j in 0..n_hidden {
            for slot in offsets[j]..offsets[j + 1] {
                let i = visible[slot];
                rev_hidden[cursor[i]] = j;
                rev_slot[cursor[i]] = slot;
                cursor[i] += 1;
            }
        }

        Ok(ConnectivityStructure {
            spec,
            grid,
            n_hidden,
            offsets,
            visible,
            centres,
            rev_offsets,
            rev_hidden,
            rev_slot,
        })
    }

    pub fn spec(&self) -> &StructureSpec {
        &self.spec
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn n_visible(&self) -> usize {
        self.grid.len()
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    /// Number of supported weights.
    pub fn nnz(&self) -> usize {
        self.visible.len()
    }

    pub fn is_dense(&self) -> bool {
        self.nnz() == self.n_visible() * self.n_hidden
    }

    pub fn centre(&self, j: usize) -> Centre {
        self.centres[j]
    }

    /// Weight slots owned by hidden unit `j`.
    #[inline]
    pub fn slots(&self, j: usize) -> Range<usize> {
        self.offsets[j]..self.offsets[j + 1]
    }

    /// Sorted visible indices connected to hidden unit `j`.
    #[inline]
    pub fn neighbourhood(&self, j: usize) -> &[usize] {
        &self.visible[self.slots(j)]
    }

    /// Visible index of every slot, in support order.
    #[inline]
    pub fn support_visible(&self) -> &[usize] {
        &self.visible
    }

    /// `(hidden, slot)` pairs of the hidden units connected to visible unit `i`.
    #[inline]
    pub fn hidden_of(&self, i: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let r = self.rev_offsets[i]..self.rev_offsets[i + 1];
        self.rev_hidden[r.clone()].iter().copied().zip(self.rev_slot[r].iter().copied())
    }

    /// Reverse map in CSR form `(offsets, hidden, slot)`: visible unit `i` owns
    /// entries `offsets[i]..offsets[i + 1]`, in ascending hidden order.
    #[inline]
    pub(crate) fn reverse_map(&self) -> (&[usize], &[usize], &[usize]) {
        (&self.rev_offsets, &self.rev_hidden, &self.rev_slot)
    }

    /// Support as `(visible, hidden)` pairs in slot order.
    pub fn support(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n_hidden).flat_map(move |j| self.neighbourhood(j).iter().map(move |&i| (i, j)))
    }

    /// Dense 0/1 mask, row-major `n_v × n_h` (entry `i * n_h + j`).
    pub fn mask_matrix(&self) -> Vec<f64> {
        let n_h = self.n_hidden;
        let mut mask = vec![0.0; self.n_visible() * n_h];
        for (i, j) in self.support() {
            mask[i * n_h + j] = 1.0;
        }
        mask
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn build(s: &str, side: usize) -> ConnectivityStructure {
        ConnectivityStructure::build(&s.parse().unwrap(), Grid::square(side)).unwrap()
    }

    #[test]
    fn centre_counts_for_reference_blocks() {
        let g = Grid::square(28);
        let c = build_centres(4, 2, g).unwrap();
        assert_eq!(c.len(), 121);
        assert_eq!(c[0], (4, 4));
        assert_eq!(c[10], (4, 24));
        assert_eq!(build_centres(3, 2, g).unwrap().len(), 144);
        assert_eq!(build_centres(4, 1, g).unwrap().len(), 441);
        assert_eq!(build_centres(0, 1, Grid::square(5)).unwrap().len(), 25);
    }

    #[test]
    fn invalid_blocks_are_rejected() {
        let g = Grid::square(5);
        assert!(build_centres(1, 0, g).is_err());
        assert!(build_centres(3, 1, g).is_err());
        assert!(build_centres(2, 1, g).is_ok());
        assert!(ConnectivityStructure::dense(0, 3).is_err());
        assert!(ConnectivityStructure::dense(3, 0).is_err());
    }

    #[test]
    fn identity_structure_for_zero_window() {
        let s = build("M(0,1)", 2);
        assert_eq!(s.n_hidden(), 4);
        let mask = s.mask_matrix();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(mask[i * 4 + j], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn dense_mask_is_all_ones() {
        let s = ConnectivityStructure::dense(3, 2).unwrap();
        assert!(s.mask_matrix().iter().all(|&m| m == 1.0));
        assert_eq!(s.nnz(), 6);
        assert!(s.is_dense());
        assert_eq!(ConnectivityStructure::dense(1, 1).unwrap().nnz(), 1);
        assert_eq!(ConnectivityStructure::dense(784, 121).unwrap().nnz(), 94864);
        assert_eq!(ConnectivityStructure::dense(784, 585).unwrap().nnz(), 458640);
    }

    #[test]
    fn window_four_stride_two_column_sums() {
        let s = build("M(4,2)", 28);
        let mask = s.mask_matrix();
        for j in 0..s.n_hidden() {
            let col: f64 = (0..784).map(|i| mask[i * s.n_hidden() + j]).sum();
            assert!([64.0, 72.0, 81.0].contains(&col), "column {j} sums to {col}");
        }
        assert_eq!(mask.iter().sum::<f64>() as usize, s.nnz());
    }

    #[test]
    fn spec_strings_parse() {
        assert_eq!(
            "M(3,2;4,2)".parse::<StructureSpec>().unwrap(),
            StructureSpec::blocks(&[(3, 2), (4, 2)])
        );
        assert_eq!(" dense( 12 ) ".parse::<StructureSpec>().unwrap(), StructureSpec::dense(12));
        for bad in ["", "M()", "M(1)", "M(1,2", "X(1,2)", "dense(-1)", "M(1,2;)"] {
            assert!(bad.parse::<StructureSpec>().is_err(), "{bad:?}");
        }
    }

    /// Brute force: every pixel within Chebyshev distance of the centre.
    fn enumerate_hood(r: usize, c: usize, w: usize, g: Grid) -> Vec<usize> {
        let mut out = Vec::new();
        for y in 0..g.height {
            for x in 0..g.width {
                if y.abs_diff(r).max(x.abs_diff(c)) <= w {
                    out.push(g.index(y, x));
                }
            }
        }
        out
    }

    proptest! {
        #[test]
        fn spec_round_trips(blocks in prop::collection::vec((0usize..20, 1usize..20), 1..5), n in 1usize..5000, dense in any::<bool>()) {
            let spec = if dense { StructureSpec::dense(n) } else { StructureSpec::blocks(&blocks) };
            let text = spec.to_string();
            prop_assert_eq!(text.parse::<StructureSpec>().unwrap(), spec);
        }

        #[test]
        fn structure_matches_enumeration(w in 0usize..4, t in 1usize..4, h in 1usize..12, wd in 1usize..12) {
            let g = Grid::new(h, wd);
            prop_assume!(2 * w + 1 <= h && 2 * w + 1 <= wd);
            let s = ConnectivityStructure::build(&StructureSpec::blocks(&[(w, t)]), g).unwrap();
            let centres = build_centres(w, t, g).unwrap();
            prop_assert_eq!(s.n_hidden(), centres.len());
            for (j, &(r, c)) in centres.iter().enumerate() {
                prop_assert_eq!(s.neighbourhood(j), &enumerate_hood(r, c, w, g)[..]);
                let interior = r + w < h && c + w < wd;
                if interior {
                    prop_assert_eq!(s.neighbourhood(j).len(), (2 * w + 1).pow(2));
                }
            }
            if w >= 1 && h == wd {
                let per_axis = (h - 2 * w) / t + 1;
                prop_assert_eq!(centres.len(), per_axis * per_axis);
            }
        }

        #[test]
        fn reverse_map_is_consistent(w1 in 0usize..3, t1 in 1usize..3, w2 in 0usize..3, t2 in 1usize..4, d in 5usize..10) {
            let spec = StructureSpec::blocks(&[(w1, t1), (w2, t2)]);
            let s = ConnectivityStructure::build(&spec, Grid::square(d)).unwrap();
            let a = ConnectivityStructure::build(&StructureSpec::blocks(&[(w1, t1)]), Grid::square(d)).unwrap();
            let b = ConnectivityStructure::build(&StructureSpec::blocks(&[(w2, t2)]), Grid::square(d)).unwrap();
            prop_assert_eq!(s.nnz(), a.nnz() + b.nnz());
            prop_assert_eq!(s.n_hidden(), a.n_hidden() + b.n_hidden());
            prop_assert!(s.nnz() <= s.n_visible() * s.n_hidden());
            for i in 0..s.n_visible() {
                for j in 0..s.n_hidden() {
                    let forward = s.neighbourhood(j).contains(&i);
                    let reverse = s.hidden_of(i).any(|(h, slot)| h == j && s.support_visible()[slot] == i);
                    prop_assert_eq!(forward, reverse);
                }
            }
        }
    }
}
