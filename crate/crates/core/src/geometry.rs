//! k-d tree blocking, landmark selection and the landmark-last permutation.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::Point;

/// Blocks `B`, landmarks `P`, complement `Q`, reduced blocks `B' = B ∩ Q` and
/// the permutation that lists `Q` block by block followed by `P`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub blocks: Vec<Vec<usize>>,
    pub landmarks: Vec<usize>,
    pub complement: Vec<usize>,
    pub blocks_prime: Vec<Vec<usize>>,
    /// `perm[k]` is the original index stored at permuted position `k`.
    pub perm: Vec<usize>,
    /// `position[i]` is the permuted position of original index `i`.
    pub position: Vec<usize>,
    /// Start of each reduced block within the permuted `Q` range.
    pub offsets: Vec<usize>,
}

impl PartitionPlan {
    /// Builds a plan from explicit blocks and landmarks. Reduced blocks may be
    /// empty only when `allow_empty` is set.
    pub fn from_parts(n: usize, blocks: Vec<Vec<usize>>, mut landmarks: Vec<usize>, allow_empty: bool) -> Result<Self> {
        let mut seen = vec![false; n];
        for &i in blocks.iter().flatten() {
            if i >= n || seen[i] {
                return Err(invalid("blocks must partition 0..n"));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(invalid("blocks must cover 0..n"));
        }
        landmarks.sort_unstable();
        let mut is_landmark = vec![false; n];
        for &i in &landmarks {
            if i >= n || is_landmark[i] {
                return Err(invalid("landmarks must be distinct indices below n"));
            }
            is_landmark[i] = true;
        }
        let blocks_prime: Vec<Vec<usize>> = blocks
            .iter()
            .map(|b| b.iter().copied().filter(|&i| !is_landmark[i]).collect())
            .collect();
        if !allow_empty {
            if let Some(l) = blocks_prime.iter().position(|b| b.is_empty()) {
                return Err(invalid(format!(
                    "block {l} consists only of landmarks; reduce the landmark count or the number of blocks"
                )));
            }
        }
        let complement: Vec<usize> = (0..n).filter(|&i| !is_landmark[i]).collect();
        let mut perm = Vec::with_capacity(n);
        let mut offsets = Vec::with_capacity(blocks.len() + 1);
        for b in &blocks_prime {
            offsets.push(perm.len());
            perm.extend_from_slice(b);
        }
        offsets.push(perm.len());
        perm.extend_from_slice(&landmarks);
        let mut position = vec![0; n];
        for (k, &i) in perm.iter().enumerate() {
            position[i] = k;
        }
        Ok(PartitionPlan { blocks, landmarks, complement, blocks_prime, perm, position, offsets })
    }

    /// Plan with every index a landmark, where the approximation is exact.
    pub fn exhaustive(points: &[Point], num_blocks: usize) -> Result<Self> {
        let blocks = kdtree_partition(points, num_blocks)?;
        Self::from_parts(points.len(), blocks, (0..points.len()).collect(), true)
    }

    pub fn n(&self) -> usize {
        self.perm.len()
    }

    pub fn p(&self) -> usize {
        self.landmarks.len()
    }

    pub fn nq(&self) -> usize {
        self.n() - self.p()
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Permuted-position range of reduced block `l`.
    pub fn block_range(&self, l: usize) -> Range<usize> {
        self.offsets[l]..self.offsets[l + 1]
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks_prime.iter().map(Vec::len).collect()
    }

    pub fn max_block(&self) -> usize {
        self.blocks_prime.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// `z = Π y`.
    pub fn permute(&self, y: &[f64]) -> Vec<f64> {
        self.perm.iter().map(|&i| y[i]).collect()
    }

    /// `y = Πᵀ z`.
    pub fn unpermute(&self, z: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; z.len()];
        for (k, &i) in self.perm.iter().enumerate() {
            y[i] = z[k];
        }
        y
    }

    /// Reduced-block label of every original index, `None` for landmarks.
    pub fn block_of(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.n()];
        for (l, b) in self.blocks_prime.iter().enumerate() {
            for &i in b {
                out[i] = Some(l);
            }
        }
        out
    }

    /// Full-block label of every original index.
    pub fn full_block_of(&self) -> Vec<usize> {
        let mut out = vec![0; self.n()];
        for (l, b) in self.blocks.iter().enumerate() {
            for &i in b {
                out[i] = l;
            }
        }
        out
    }
}

fn split_cells(points: &[Point], idx: Vec<usize>, depth: u32, out: &mut Vec<Vec<usize>>) {
    if depth == 0 {
        out.push(idx);
        return;
    }
    let (left, right) = median_split(points, idx);
    split_cells(points, left, depth - 1, out);
    split_cells(points, right, depth - 1, out);
}

/// Splits at the median of the wider axis. Ties stay on the left until it
/// holds `ceil(len/2)` indices; both halves keep ascending index order.
fn median_split(points: &[Point], mut idx: Vec<usize>) -> (Vec<usize>, Vec<usize>) {
    if idx.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for &i in &idx {
        for a in 0..2 {
            lo[a] = lo[a].min(points[i][a]);
            hi[a] = hi[a].max(points[i][a]);
        }
    }
    let axis = usize::from(hi[1] - lo[1] > hi[0] - lo[0]);
    idx.sort_by(|&a, &b| points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b)));
    let right = idx.split_off(idx.len().div_ceil(2));
    let mut left = idx;
    left.sort_unstable();
    let mut right = right;
    right.sort_unstable();
    (left, right)
}

/// Recursive median bisection into `num_blocks` (a power of two) blocks.
pub fn kdtree_partition(points: &[Point], num_blocks: usize) -> Result<Vec<Vec<usize>>> {
    if points.is_empty() {
        return Err(invalid("cannot partition an empty point set"));
    }
    if !num_blocks.is_power_of_two() {
        return Err(invalid(format!("number of blocks must be a power of two, got {num_blocks}")));
    }
    if num_blocks > points.len() {
        return Err(invalid(format!("{num_blocks} blocks requested for {} points", points.len())));
    }
    let mut out = Vec::with_capacity(num_blocks);
    split_cells(points, (0..points.len()).collect(), num_blocks.trailing_zeros(), &mut out);
    Ok(out)
}

/// One landmark per k-d cell: the cell's point nearest its centroid. The tree
/// is grown to the smallest power of two at least `count`, and surplus cells
/// are discarded smallest first so the largest cells are the last to go.
pub fn select_landmarks(points: &[Point], count: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if count > n {
        return Err(invalid(format!("{count} landmarks requested for {n} points")));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let depth = count.next_power_of_two().trailing_zeros();
    let mut cells = Vec::with_capacity(1 << depth);
    split_cells(points, (0..n).collect(), depth, &mut cells);
    let mut order: Vec<usize> = (0..cells.len()).collect();
    order.sort_by(|&a, &b| cells[b].len().cmp(&cells[a].len()).then(a.cmp(&b)));
    let mut kept = order[..count].to_vec();
    kept.sort_unstable();
    let mut chosen = Vec::with_capacity(count);
    for &c in &kept {
        let cell = &cells[c];
        let inv = 1.0 / cell.len() as f64;
        let cx = cell.iter().map(|&i| points[i][0]).sum::<f64>() * inv;
        let cy = cell.iter().map(|&i| points[i][1]).sum::<f64>() * inv;
        let mut best = (f64::INFINITY, cell[0]);
        for &i in cell {
            let d = (points[i][0] - cx).powi(2) + (points[i][1] - cy).powi(2);
            if d < best.0 {
                best = (d, i);
            }
        }
        chosen.push(best.1);
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Blocks, landmarks and permutation for `num_blocks` blocks and
/// `num_landmarks` landmarks.
pub fn build_plan(points: &[Point], num_blocks: usize, num_landmarks: usize) -> Result<PartitionPlan> {
    let blocks = kdtree_partition(points, num_blocks)?;
    let landmarks = select_landmarks(points, num_landmarks)?;
    PartitionPlan::from_parts(points.len(), blocks, landmarks, false)
}

/// Smallest power-of-two block count whose blocks hold at most `block_size`
/// points, capped so that every block is non-empty.
pub fn blocks_for_size(n: usize, block_size: usize) -> usize {
    let want = n.div_ceil(block_size.max(1)).max(1).next_power_of_two();
    let cap = if n.is_power_of_two() { n } else { n.next_power_of_two() / 2 };
    want.min(cap.max(1))
}

/// Centroid of each index set.
pub fn centroids(points: &[Point], sets: &[Vec<usize>]) -> Vec<Point> {
    sets.iter()
        .map(|s| {
            let inv = 1.0 / s.len().max(1) as f64;
            [
                s.iter().map(|&i| points[i][0]).sum::<f64>() * inv,
                s.iter().map(|&i| points[i][1]).sum::<f64>() * inv,
            ]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_split() {
        let pts: Vec<Point> = (0..8).map(|i| [i as f64, 0.0]).collect();
        let b = kdtree_partition(&pts, 2).unwrap();
        assert_eq!(b, vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7]]);
        assert_eq!(kdtree_partition(&pts, 1).unwrap(), vec![(0..8).collect::<Vec<_>>()]);
        assert!(kdtree_partition(&pts, 16).is_err());
        assert!(kdtree_partition(&pts, 3).is_err());
    }

    #[test]
    fn ties_fill_left_first() {
        let pts: Vec<Point> = vec![[1.0, 0.0], [0.0, 0.0], [1.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        let b = kdtree_partition(&pts, 2).unwrap();
        assert_eq!(b[0], vec![0, 1, 2]);
        assert_eq!(b[1], vec![3, 4]);
    }

    #[test]
    fn single_landmark_is_nearest_to_centroid() {
        let pts: Vec<Point> = vec![[0.0, 0.0], [1.0, 0.0], [0.4, 0.6], [5.0, 5.0]];
        // centroid (1.6, 1.4)
        let l = select_landmarks(&pts, 1).unwrap();
        let c = [1.6, 1.4];
        let brute = (0..4)
            .min_by(|&a, &b| {
                let da = (pts[a][0] - c[0]).powi(2) + (pts[a][1] - c[1]).powi(2);
                let db = (pts[b][0] - c[0]).powi(2) + (pts[b][1] - c[1]).powi(2);
                da.total_cmp(&db)
            })
            .unwrap();
        assert_eq!(l, vec![brute]);
    }

    #[test]
    fn one_landmark_per_block_grid() {
        let pts: Vec<Point> = (0..16).map(|i| [(i % 4) as f64, (i / 4) as f64]).collect();
        let plan = build_plan(&pts, 4, 4).unwrap();
        assert_eq!(plan.block_sizes(), vec![3, 3, 3, 3]);
        for k in 12..16 {
            assert!(plan.landmarks.contains(&plan.perm[k]));
        }
        let full = plan.full_block_of();
        let mut per_block = [0; 4];
        for &i in &plan.landmarks {
            per_block[full[i]] += 1;
        }
        assert_eq!(per_block, [1, 1, 1, 1]);
    }

    #[test]
    fn degenerate_configurations() {
        let pts: Vec<Point> = (0..8).map(|i| [i as f64, (i * i) as f64 * 0.1]).collect();
        assert!(build_plan(&pts, 2, 8).is_err());
        let plan = build_plan(&pts, 2, 0).unwrap();
        assert_eq!(plan.p(), 0);
        assert_eq!(plan.complement, (0..8).collect::<Vec<_>>());
        let all = select_landmarks(&pts, 8).unwrap();
        assert_eq!(all, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn block_count_for_size() {
        assert_eq!(blocks_for_size(512, 128), 4);
        assert_eq!(blocks_for_size(500, 128), 4);
        assert_eq!(blocks_for_size(100, 128), 1);
        assert_eq!(blocks_for_size(3, 1), 2);
    }
}
