//! Hierarchical agglomerative clustering of mode trajectories with complete
//! linkage, dendrogram cut with a cluster-size cap, the state permutation
//! into cluster-ordered form, and the exact Ẽ = Ẽ1 + Ẽ2 coupling split.
//!
//! Leaves are trajectory indices. Conjugate pairs are merged first at
//! height 0 and can never be separated by a cut, so every cluster keeps
//! complete 2×2 blocks.

use crate::error::{LpvError, Result};
use crate::modal::{ModalForm, ModeBlock};
use crate::tracking::TrackedModes;
use crate::Mat;
use serde::Serialize;

/// One agglomeration step. Cluster ids are scipy-style: leaves are
/// `0..n_leaves`, merge `i` creates id `n_leaves + i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    /// Leaf count of the newly formed cluster.
    pub size: usize,
}

/// Complete-linkage merge tree.
#[derive(Debug, Clone, Serialize)]
pub struct Dendrogram {
    pub n_leaves: usize,
    pub merges: Vec<Merge>,
    /// The first `n_forced` merges were imposed at height 0 (conjugate
    /// pairs); cuts always keep them together.
    pub n_forced: usize,
}

/// How the cut threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum CutRule {
    Threshold(f64),
    Auto,
}

/// Cut and penalty configuration.
#[derive(Debug, Clone, Serialize)]
pub struct ClusterConfig {
    pub cut: CutRule,
    /// Upper bound on the state dimension of any cluster.
    pub max_cluster_size: usize,
    /// Weight of the optional coupling-energy distance penalty
    /// H'(i,j) = H(i,j) + w · energy(i,j). Off (0) by default.
    pub e2_penalty_weight: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { cut: CutRule::Auto, max_cluster_size: 40, e2_penalty_weight: 0.0 }
    }
}

/// Final partition: clusters of trajectory ids, the state permutation, and
/// the per-cluster state ranges in the permuted ordering.
#[derive(Debug, Clone, Serialize)]
pub struct ClusterPartition {
    /// Trajectory ids per cluster (both members of a conjugate pair).
    pub clusters: Vec<Vec<usize>>,
    pub threshold: f64,
    /// Π as an index map: permuted state `i` is original state `perm[i]`.
    pub permutation: Vec<usize>,
    /// Per-cluster `[start, end)` state ranges after permutation.
    pub ranges: Vec<(usize, usize)>,
    /// Trajectories kept outside the reduction (unstable, integrators).
    pub preserved: Vec<usize>,
    /// State range holding the preserved trajectories (may be empty).
    pub preserved_range: (usize, usize),
}

/// The permuted modal system with the coupling term split into the
/// block-diagonal part Ẽ1 and the off-pattern remainder Ẽ2.
#[derive(Debug, Clone)]
pub struct ClusteredSystem {
    pub partition: ClusterPartition,
    pub a: Vec<Mat>,
    pub b: Vec<Mat>,
    pub c: Vec<Mat>,
    pub d: Vec<Mat>,
    /// Ẽ1_{k,s} = e1_base[k] · ν_s (block diagonal on the cluster pattern).
    pub e1_base: Vec<Mat>,
    /// Ẽ2_{k,s} = e2_base[k] · ν_s (vanishes on the pattern).
    pub e2_base: Vec<Mat>,
    /// ‖Ẽ2_{k,+δ}‖₂ per grid point, for the uncertainty ledger.
    pub e2_norms: Vec<f64>,
    /// Blocks in permuted order with updated `start` offsets.
    pub blocks: Vec<ModeBlock>,
    pub rho_grid: Vec<f64>,
    pub rate_bound: f64,
    pub n_u: usize,
    pub n_y: usize,
}

/// One cluster's grid subsystem, the unit handed to the Gramian stage.
#[derive(Debug, Clone)]
pub struct ClusterSubsystem {
    /// State range of this cluster in the permuted full system.
    pub range: (usize, usize),
    pub a: Vec<Mat>,
    /// Rate-coupling base restricted to the cluster block.
    pub e1_base: Vec<Mat>,
    pub b: Vec<Mat>,
    pub c: Vec<Mat>,
    pub rho_grid: Vec<f64>,
    pub rate_bound: f64,
}

fn validate_distances(dist: &Mat) -> Result<usize> {
    let n = dist.nrows();
    if dist.ncols() != n || n == 0 {
        return Err(LpvError::InvalidModel(format!(
            "distance matrix must be square and nonempty, got {}x{}",
            dist.nrows(),
            dist.ncols()
        )));
    }
    for i in 0..n {
        for j in 0..n {
            let d = dist[(i, j)];
            if !d.is_finite() || d < 0.0 {
                return Err(LpvError::InvalidModel(format!(
                    "distance matrix entry ({i}, {j}) = {d} is not a finite nonnegative value"
                )));
            }
            if (d - dist[(j, i)]).abs() > 1e-12 * d.abs().max(1.0) {
                return Err(LpvError::InvalidModel(format!(
                    "distance matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(n)
}

/// Complete-linkage agglomeration over a distance matrix, with `forced`
/// leaf pairs merged first at height 0. At every step the active pair with
/// the smallest linkage merges; ties break toward the smallest (a, b) id
/// pair. Linkage updates use the Lance–Williams maximum rule.
pub fn hac_complete_link(dist: &Mat, forced: &[(usize, usize)]) -> Result<Dendrogram> {
    let n = validate_distances(dist)?;
    let total = 2 * n - 1;

    // Linkage matrix over all ids that will ever exist.
    let mut link = vec![vec![0.0f64; total]; total];
    for i in 0..n {
        for j in 0..n {
            link[i][j] = dist[(i, j)];
        }
    }
    let mut alive = vec![false; total];
    let mut size = vec![0usize; total];
    for i in 0..n {
        alive[i] = true;
        size[i] = 1;
    }

    fn apply_merge(
        a: usize,
        b: usize,
        height: f64,
        next_id: &mut usize,
        alive: &mut [bool],
        size: &mut [usize],
        link: &mut [Vec<f64>],
        merges: &mut Vec<Merge>,
    ) {
        let m = *next_id;
        *next_id += 1;
        for c in 0..m {
            if alive[c] && c != a && c != b {
                let d = link[a][c].max(link[b][c]);
                link[m][c] = d;
                link[c][m] = d;
            }
        }
        alive[a] = false;
        alive[b] = false;
        alive[m] = true;
        size[m] = size[a] + size[b];
        merges.push(Merge { a, b, height, size: size[m] });
    }

    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    let mut next_id = n;
    let mut seen = vec![false; n];
    let mut forced_sorted: Vec<(usize, usize)> = forced
        .iter()
        .map(|&(a, b)| (a.min(b), a.max(b)))
        .collect();
    forced_sorted.sort_unstable();
    for &(a, b) in &forced_sorted {
        if a == b || b >= n || seen[a] || seen[b] {
            return Err(LpvError::Internal(format!(
                "invalid forced merge pair ({a}, {b}) over {n} leaves"
            )));
        }
        seen[a] = true;
        seen[b] = true;
        apply_merge(a, b, 0.0, &mut next_id, &mut alive, &mut size, &mut link, &mut merges);
    }
    let n_forced = merges.len();

    while merges.len() < n - 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..next_id {
            if !alive[a] {
                continue;
            }
            for b in a + 1..next_id {
                if !alive[b] {
                    continue;
                }
                let d = link[a][b];
                let better = match best {
                    None => true,
                    Some((bd, ba, bb)) => d < bd || (d == bd && (a, b) < (ba, bb)),
                };
                if better {
                    best = Some((d, a, b));
                }
            }
        }
        let (height, a, b) = best.expect("at least two clusters remain");
        apply_merge(a, b, height, &mut next_id, &mut alive, &mut size, &mut link, &mut merges);
    }

    Ok(Dendrogram { n_leaves: n, merges, n_forced })
}

impl Dendrogram {
    /// Height of the final merge (0 when there is a single leaf).
    pub fn root_height(&self) -> f64 {
        self.merges.last().map_or(0.0, |m| m.height)
    }

    /// Connected components when every non-forced merge with
    /// `height ≤ threshold` is applied (forced merges always apply).
    /// Clusters are sorted by smallest member; members ascend.
    pub fn cut(&self, threshold: f64) -> Vec<Vec<usize>> {
        let n = self.n_leaves;
        let mut parent: Vec<usize> = (0..2 * n - 1).collect();
        fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (i, m) in self.merges.iter().enumerate() {
            if i < self.n_forced || m.height <= threshold {
                let target = n + i;
                let ra = find(&mut parent, m.a);
                let rb = find(&mut parent, m.b);
                parent[ra] = target;
                parent[rb] = target;
            }
        }
        let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        let mut order: Vec<(usize, usize)> = Vec::new();
        for leaf in 0..n {
            let root = find(&mut parent, leaf);
            let entry = groups.entry(root).or_default();
            if entry.is_empty() {
                order.push((leaf, root));
            }
            entry.push(leaf);
        }
        order.sort_unstable();
        order.into_iter().map(|(_, root)| groups.remove(&root).unwrap()).collect()
    }

    /// Resolves the cut threshold under the size cap: the largest
    /// threshold whose clusters all have ≤ `max_cluster_size` leaves
    /// (fixed thresholds are lowered only when they violate the cap).
    /// Returns the clusters and the threshold actually used.
    pub fn cut_with_cap(&self, cfg: &ClusterConfig) -> Result<(Vec<Vec<usize>>, f64)> {
        if cfg.max_cluster_size < 2 {
            return Err(LpvError::InvalidConfig(format!(
                "max_cluster_size must be at least 2, got {}",
                cfg.max_cluster_size
            )));
        }
        let fits = |clusters: &[Vec<usize>]| {
            clusters.iter().all(|c| c.len() <= cfg.max_cluster_size)
        };
        if let CutRule::Threshold(t) = cfg.cut {
            let clusters = self.cut(t);
            if fits(&clusters) {
                return Ok((clusters, t));
            }
        }
        // Candidate thresholds: distinct non-forced merge heights,
        // descending, then a sentinel below everything (forced merges
        // still apply, so conjugate pairs stay intact).
        let mut heights: Vec<f64> = self
            .merges
            .iter()
            .skip(self.n_forced)
            .map(|m| m.height)
            .collect();
        heights.sort_by(f64::total_cmp);
        heights.dedup();
        let upper = match cfg.cut {
            CutRule::Threshold(t) => t,
            CutRule::Auto => f64::INFINITY,
        };
        for &h in heights.iter().rev() {
            if h > upper {
                continue;
            }
            let clusters = self.cut(h);
            if fits(&clusters) {
                return Ok((clusters, h));
            }
        }
        let floor = -1.0;
        let clusters = self.cut(floor);
        if !fits(&clusters) {
            return Err(LpvError::InvalidConfig(format!(
                "a conjugate pair alone exceeds max_cluster_size = {}",
                cfg.max_cluster_size
            )));
        }
        Ok((clusters, floor))
    }

    /// Flat text rendering of the merge list for inspection.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("dendrogram: {} leaves\n", self.n_leaves));
        for (i, m) in self.merges.iter().enumerate() {
            let tag = if i < self.n_forced { "  (conjugate pair)" } else { "" };
            out.push_str(&format!(
                "  {:>4} <- ({:>4}, {:>4})  height {:.6e}  size {}{}\n",
                self.n_leaves + i,
                m.a,
                m.b,
                m.height,
                m.size,
                tag
            ));
        }
        out
    }
}

/// Pearson correlation between the input distances and the cophenetic
/// (first-common-merge height) distances over all leaf pairs.
pub fn cophenetic_coefficient(dendro: &Dendrogram, dist: &Mat) -> Result<f64> {
    let n = dendro.n_leaves;
    if n < 3 {
        return Err(LpvError::TooFewLeaves { leaves: n });
    }
    if dist.nrows() != n || dist.ncols() != n {
        return Err(LpvError::InvalidModel(format!(
            "distance matrix is {}x{}, dendrogram has {} leaves",
            dist.nrows(),
            dist.ncols(),
            n
        )));
    }

    // Leaves below each cluster id, built bottom-up.
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut coph = Mat::zeros(n, n);
    for m in &dendro.merges {
        for &i in &members[m.a] {
            for &j in &members[m.b] {
                coph[(i, j)] = m.height;
                coph[(j, i)] = m.height;
            }
        }
        let mut joined = std::mem::take(&mut members[m.a]);
        joined.append(&mut std::mem::take(&mut members[m.b]));
        members.push(joined);
    }

    let mut xs = Vec::with_capacity(n * (n - 1) / 2);
    let mut ys = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            xs.push(dist[(i, j)]);
            ys.push(coph[(i, j)]);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mx, my) = (mean(&xs), mean(&ys));
    let (mut sxx, mut syy, mut sxy) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in xs.iter().zip(ys.iter()) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    let scale = (sxx * syy).sqrt();
    if scale == 0.0 {
        // Both constant means the merge heights reproduce the input
        // exactly (ultrametric); one constant side means no agreement.
        return Ok(if sxx == syy { 1.0 } else { 0.0 });
    }
    Ok((sxy / scale).clamp(-1.0, 1.0))
}

/// Pairwise trajectory distances over `leaves` (trajectory ids) plus the
/// forced conjugate-pair merges, ready for [`hac_complete_link`].
pub fn trajectory_distances(
    tracked: &TrackedModes,
    leaves: &[usize],
    weighted: bool,
) -> (Mat, Vec<(usize, usize)>) {
    let n = leaves.len();
    let mut dist = Mat::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (&tracked.trajectories[leaves[i]], &tracked.trajectories[leaves[j]]);
            let d = if weighted {
                crate::tracking::trajectory_distance_weighted(a, b)
            } else {
                crate::tracking::trajectory_distance(a, b)
            };
            dist[(i, j)] = d;
            dist[(j, i)] = d;
        }
    }
    let pos: std::collections::HashMap<usize, usize> =
        leaves.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    let mut forced = Vec::new();
    for (i, &t) in leaves.iter().enumerate() {
        if let Some(p) = tracked.partner[t] {
            if let Some(&j) = pos.get(&p) {
                if i < j {
                    forced.push((i, j));
                }
            }
        }
    }
    (dist, forced)
}

/// Coupling energy between the blocks of two leaves: the largest (over
/// grid points) Frobenius norm of the Ē entries linking them, scaled by
/// the rate bound. Used by the optional e2 penalty.
pub fn coupling_energy(modal: &ModalForm, leaves: &[usize]) -> Mat {
    let block_of = |traj: usize| {
        modal
            .blocks
            .iter()
            .find(|b| b.trajectory == traj || b.partner == Some(traj))
            .expect("leaf trajectory has a block")
    };
    let n = leaves.len();
    let mut energy = Mat::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let (bi, bj) = (block_of(leaves[i]), block_of(leaves[j]));
            if bi.start == bj.start {
                continue;
            }
            let mut worst = 0.0f64;
            for e in &modal.e_base {
                let mut sq = 0.0;
                for r in bi.start..bi.start + bi.size {
                    for c in bj.start..bj.start + bj.size {
                        sq += e[(r, c)] * e[(r, c)] + e[(c, r)] * e[(c, r)];
                    }
                }
                worst = worst.max(sq.sqrt());
            }
            let v = worst * modal.rate_bound;
            energy[(i, j)] = v;
            energy[(j, i)] = v;
        }
    }
    energy
}

/// Permutes the modal system into cluster-ordered form and splits the
/// coupling base into the block-diagonal Ẽ1 and the remainder Ẽ2.
/// `clusters` hold trajectory ids over the reducible set; every other
/// block is preserved verbatim in a trailing state range.
pub fn permute_and_split(
    modal: &ModalForm,
    clusters: &[Vec<usize>],
    threshold: f64,
) -> Result<ClusteredSystem> {
    let n = modal.n_x();
    // Assemble the permuted block order: clusters first, preserved last.
    let mut taken = vec![false; modal.blocks.len()];
    let mut perm: Vec<usize> = Vec::with_capacity(n);
    let mut ranges = Vec::with_capacity(clusters.len());
    let mut new_blocks: Vec<ModeBlock> = Vec::with_capacity(modal.blocks.len());
    let push_block = |b: &ModeBlock, perm: &mut Vec<usize>, new_blocks: &mut Vec<ModeBlock>| {
        let start = perm.len();
        for s in b.start..b.start + b.size {
            perm.push(s);
        }
        new_blocks.push(ModeBlock { start, ..*b });
    };

    for cluster in clusters {
        let start = perm.len();
        // One block per canonical member; partners ride along with it.
        let mut canonicals: Vec<usize> = Vec::new();
        for &t in cluster {
            let canonical = modal
                .blocks
                .iter()
                .find(|b| b.trajectory == t || b.partner == Some(t))
                .map(|b| b.trajectory)
                .ok_or_else(|| {
                    LpvError::Internal(format!("trajectory {t} has no modal block"))
                })?;
            if !canonicals.contains(&canonical) {
                canonicals.push(canonical);
            }
        }
        canonicals.sort_unstable();
        for t in canonicals {
            let idx = modal.blocks.iter().position(|b| b.trajectory == t).unwrap();
            if taken[idx] {
                return Err(LpvError::Internal(format!(
                    "trajectory {t} assigned to more than one cluster"
                )));
            }
            taken[idx] = true;
            push_block(&modal.blocks[idx], &mut perm, &mut new_blocks);
        }
        ranges.push((start, perm.len()));
    }

    let preserved_start = perm.len();
    let mut preserved = Vec::new();
    for (idx, b) in modal.blocks.iter().enumerate() {
        if !taken[idx] {
            preserved.push(b.trajectory);
            if let Some(p) = b.partner {
                preserved.push(p);
            }
            push_block(b, &mut perm, &mut new_blocks);
        }
    }
    let preserved_range = (preserved_start, perm.len());
    if perm.len() != n {
        return Err(LpvError::Internal(format!(
            "permutation covers {} states, expected {n}",
            perm.len()
        )));
    }

    // Pattern membership: which diagonal block (cluster id, or the
    // preserved range) each permuted state belongs to.
    let mut pattern = vec![usize::MAX; n];
    for (ci, &(s, e)) in ranges.iter().enumerate() {
        for i in s..e {
            pattern[i] = ci;
        }
    }
    for i in preserved_range.0..preserved_range.1 {
        pattern[i] = ranges.len();
    }

    let permute = |m: &Mat| -> Mat {
        Mat::from_fn(n, n, |i, j| m[(perm[i], perm[j])])
    };
    let n_pts = modal.n_points();
    let mut a = Vec::with_capacity(n_pts);
    let mut b_mats = Vec::with_capacity(n_pts);
    let mut c_mats = Vec::with_capacity(n_pts);
    let mut e1_base = Vec::with_capacity(n_pts);
    let mut e2_base = Vec::with_capacity(n_pts);
    let mut e2_norms = Vec::with_capacity(n_pts);
    for k in 0..n_pts {
        a.push(permute(&modal.a[k]));
        b_mats.push(Mat::from_fn(n, modal.n_u, |i, j| modal.b[k][(perm[i], j)]));
        c_mats.push(Mat::from_fn(modal.n_y, n, |i, j| modal.c[k][(i, perm[j])]));
        let e_perm = permute(&modal.e_base[k]);
        let e1 = Mat::from_fn(n, n, |i, j| {
            if pattern[i] == pattern[j] { e_perm[(i, j)] } else { 0.0 }
        });
        let e2 = &e_perm - &e1;
        e2_norms.push(crate::numerics::spectral_norm(&e2) * modal.rate_bound);
        e1_base.push(e1);
        e2_base.push(e2);
    }

    let partition = ClusterPartition {
        clusters: clusters.to_vec(),
        threshold,
        permutation: perm,
        ranges,
        preserved,
        preserved_range,
    };
    Ok(ClusteredSystem {
        partition,
        a,
        b: b_mats,
        c: c_mats,
        d: modal.d.clone(),
        e1_base,
        e2_base,
        e2_norms,
        blocks: new_blocks,
        rho_grid: modal.rho_grid.clone(),
        rate_bound: modal.rate_bound,
        n_u: modal.n_u,
        n_y: modal.n_y,
    })
}

impl ClusteredSystem {
    pub fn n_x(&self) -> usize {
        self.partition.permutation.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.partition.ranges.len()
    }

    /// Extracts cluster `l` as a standalone grid subsystem
    /// (A^(ℓ), Ẽ1^(ℓ), B̃^(ℓ), C̃^(ℓ)).
    pub fn subsystem(&self, l: usize) -> ClusterSubsystem {
        let (s, e) = self.partition.ranges[l];
        let slice = |m: &Mat| m.view((s, s), (e - s, e - s)).into_owned();
        ClusterSubsystem {
            range: (s, e),
            a: self.a.iter().map(&slice).collect(),
            e1_base: self.e1_base.iter().map(&slice).collect(),
            b: self.b.iter().map(|m| m.rows(s, e - s).into_owned()).collect(),
            c: self.c.iter().map(|m| m.columns(s, e - s).into_owned()).collect(),
            rho_grid: self.rho_grid.clone(),
            rate_bound: self.rate_bound,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn dist_from(n: usize, entries: &[(usize, usize, f64)]) -> Mat {
        let mut d = Mat::zeros(n, n);
        for &(i, j, v) in entries {
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
        d
    }

    /// Naive complete-linkage oracle: recompute every linkage from member
    /// lists at every step.
    fn naive_hac(dist: &Mat) -> Vec<Merge> {
        let n = dist.nrows();
        let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
        let mut merges = Vec::new();
        let mut next = n;
        while clusters.len() > 1 {
            let mut best: Option<(f64, usize, usize)> = None;
            for x in 0..clusters.len() {
                for y in x + 1..clusters.len() {
                    let mut link = 0.0f64;
                    for &i in &clusters[x].1 {
                        for &j in &clusters[y].1 {
                            link = link.max(dist[(i, j)]);
                        }
                    }
                    let (a, b) = {
                        let (ia, ib) = (clusters[x].0, clusters[y].0);
                        (ia.min(ib), ia.max(ib))
                    };
                    let better = match best {
                        None => true,
                        Some((bl, ba, bb)) => {
                            link < bl || (link == bl && (a, b) < (ba, bb))
                        }
                    };
                    if better {
                        best = Some((link, a, b));
                    }
                }
            }
            let (height, a, b) = best.unwrap();
            let xa = clusters.iter().position(|c| c.0 == a).unwrap();
            let xb = clusters.iter().position(|c| c.0 == b).unwrap();
            let mut members = clusters[xa].1.clone();
            members.extend_from_slice(&clusters[xb].1);
            merges.push(Merge { a, b, height, size: members.len() });
            clusters.retain(|c| c.0 != a && c.0 != b);
            clusters.push((next, members));
            next += 1;
        }
        merges
    }

    #[test]
    fn three_leaf_example() {
        let d = dist_from(3, &[(0, 1, 0.1), (0, 2, 0.9), (1, 2, 0.9)]);
        let den = hac_complete_link(&d, &[]).unwrap();
        assert_eq!(den.merges.len(), 2);
        assert_eq!((den.merges[0].a, den.merges[0].b), (0, 1));
        assert_eq!(den.merges[0].height, 0.1);
        assert_eq!((den.merges[1].a, den.merges[1].b), (2, 3));
        assert_eq!(den.merges[1].height, 0.9);
    }

    #[test]
    fn tie_break_prefers_smallest_id_pair() {
        let mut d = Mat::zeros(4, 4);
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    d[(i, j)] = 0.5;
                }
            }
        }
        let den = hac_complete_link(&d, &[]).unwrap();
        let pairs: Vec<(usize, usize)> =
            den.merges.iter().map(|m| (m.a, m.b)).collect();
        assert_eq!(pairs, vec![(0, 1), (2, 3), (4, 5)]);
    }

    #[test]
    fn matches_naive_oracle_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [2usize, 3, 5, 9, 16] {
            for _ in 0..12 {
                let mut d = Mat::zeros(n, n);
                for i in 0..n {
                    for j in i + 1..n {
                        // Dyadic values create genuine ties.
                        let v = (rng.gen_range(0..64) as f64) / 64.0;
                        d[(i, j)] = v;
                        d[(j, i)] = v;
                    }
                }
                let fast = hac_complete_link(&d, &[]).unwrap();
                let oracle = naive_hac(&d);
                assert_eq!(fast.merges, oracle, "n = {n}");
            }
        }
    }

    #[test]
    fn heights_are_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 24;
        let mut d = Mat::zeros(n, n);
        for i in 0..n {
            for j in i + 1..n {
                let v: f64 = rng.gen();
                d[(i, j)] = v;
                d[(j, i)] = v;
            }
        }
        let den = hac_complete_link(&d, &[]).unwrap();
        for w in den.merges.windows(2) {
            assert!(w[0].height <= w[1].height);
        }
    }

    #[test]
    fn cut_threshold_boundaries() {
        let d = dist_from(3, &[(0, 1, 0.1), (0, 2, 0.9), (1, 2, 0.9)]);
        let den = hac_complete_link(&d, &[]).unwrap();
        assert_eq!(den.cut(1.0), vec![vec![0, 1, 2]]);
        assert_eq!(den.cut(0.9), vec![vec![0, 1, 2]]); // inclusive
        assert_eq!(den.cut(0.5), vec![vec![0, 1], vec![2]]);
        assert_eq!(den.cut(0.05), vec![vec![0], vec![1], vec![2]]);
    }

    #[test]
    fn forced_pairs_survive_any_cut() {
        let d = dist_from(4, &[(0, 2, 0.3), (1, 3, 0.3), (0, 1, 0.7), (2, 3, 0.7)]);
        let den = hac_complete_link(&d, &[(0, 1), (2, 3)]).unwrap();
        assert_eq!(den.n_forced, 2);
        assert_eq!(den.merges[0].height, 0.0);
        assert_eq!(den.merges[1].height, 0.0);
        let clusters = den.cut(-10.0);
        assert_eq!(clusters, vec![vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn cap_lowers_threshold() {
        // Chain: {0,1} at 0.1, {2,3} at 0.2, everything at 0.8.
        let mut d = Mat::zeros(4, 4);
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    d[(i, j)] = 0.8;
                }
            }
        }
        d[(0, 1)] = 0.1;
        d[(1, 0)] = 0.1;
        d[(2, 3)] = 0.2;
        d[(3, 2)] = 0.2;
        let den = hac_complete_link(&d, &[]).unwrap();

        let auto = ClusterConfig { cut: CutRule::Auto, max_cluster_size: 2, ..Default::default() };
        let (clusters, thr) = den.cut_with_cap(&auto).unwrap();
        assert_eq!(clusters, vec![vec![0, 1], vec![2, 3]]);
        assert_eq!(thr, 0.2);

        let wide = ClusterConfig { cut: CutRule::Auto, max_cluster_size: 40, ..Default::default() };
        let (clusters, _) = den.cut_with_cap(&wide).unwrap();
        assert_eq!(clusters.len(), 1);

        let fixed = ClusterConfig {
            cut: CutRule::Threshold(1.0),
            max_cluster_size: 2,
            ..Default::default()
        };
        let (clusters, thr) = den.cut_with_cap(&fixed).unwrap();
        assert_eq!(clusters.len(), 2);
        assert_eq!(thr, 0.2);
    }

    #[test]
    fn cophenetic_is_one_for_ultrametric() {
        let d = dist_from(3, &[(0, 1, 0.1), (0, 2, 0.9), (1, 2, 0.9)]);
        let den = hac_complete_link(&d, &[]).unwrap();
        let c = cophenetic_coefficient(&den, &d).unwrap();
        assert!((c - 1.0).abs() < 1e-12, "{c}");
    }

    #[test]
    fn cophenetic_requires_three_leaves() {
        let d = dist_from(2, &[(0, 1, 0.1)]);
        let den = hac_complete_link(&d, &[]).unwrap();
        assert!(matches!(
            cophenetic_coefficient(&den, &d),
            Err(LpvError::TooFewLeaves { leaves: 2 })
        ));
    }

    #[test]
    fn cophenetic_in_range_for_random_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 12;
        let mut d = Mat::zeros(n, n);
        for i in 0..n {
            for j in i + 1..n {
                let v: f64 = rng.gen();
                d[(i, j)] = v;
                d[(j, i)] = v;
            }
        }
        let den = hac_complete_link(&d, &[]).unwrap();
        let c = cophenetic_coefficient(&den, &d).unwrap();
        assert!((-1.0..=1.0).contains(&c));
        assert!(c > 0.0, "complete linkage should correlate positively, got {c}");
    }

    mod split {
        use super::*;
        use crate::modal::{assemble_modal, ModalConfig};
        use crate::model::{GridLpvModel, GridPoint};
        use crate::tracking::{track, TrackingConfig};

        fn rotating_model() -> GridLpvModel {
            // 4 states: two real modes and one complex pair, with a
            // ρ-dependent eigenbasis so Ē ≠ 0.
            let grid: Vec<f64> = (0..5).map(|i| i as f64 * 0.25).collect();
            let points = grid
                .iter()
                .map(|&r| {
                    let th = 0.4 * r;
                    let (c, s) = (th.cos(), th.sin());
                    #[rustfmt::skip]
                    let q = Mat::from_row_slice(4, 4, &[
                        c, -s, 0.0, 0.0,
                        s, c, 0.0, 0.0,
                        0.0, 0.0, c, -s,
                        0.0, 0.0, s, c,
                    ]);
                    #[rustfmt::skip]
                    let core = Mat::from_row_slice(4, 4, &[
                        -1.0 - r, 0.0, 0.0, 0.0,
                        0.0, -5.0, 0.0, 0.0,
                        0.0, 0.0, -2.0, 3.0 + r,
                        0.0, 0.0, -(3.0 + r), -2.0,
                    ]);
                    let a = &q * core * q.transpose();
                    GridPoint {
                        rho: r,
                        a,
                        b: Mat::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.5, -0.5]),
                        c: Mat::from_row_slice(1, 4, &[1.0, 1.0, 1.0, 1.0]),
                        d: Mat::zeros(1, 2),
                    }
                })
                .collect();
            GridLpvModel::from_points(points, 0.5).unwrap()
        }

        #[test]
        fn split_is_exact_and_supported_on_pattern() {
            let m = rotating_model();
            let tm = track(&m, &TrackingConfig::default()).unwrap();
            let modal = assemble_modal(&m, &tm, &ModalConfig::default()).unwrap();

            // Two clusters: the complex pair in one, the two real modes
            // in the other.
            let pair = modal.blocks.iter().find(|b| b.size == 2).unwrap();
            let reals: Vec<usize> = modal
                .blocks
                .iter()
                .filter(|b| b.size == 1)
                .map(|b| b.trajectory)
                .collect();
            let clusters =
                vec![reals.clone(), vec![pair.trajectory, pair.partner.unwrap()]];
            let cs = permute_and_split(&modal, &clusters, 0.5).unwrap();

            assert_eq!(cs.partition.ranges, vec![(0, 2), (2, 4)]);
            assert_eq!(cs.partition.preserved_range, (4, 4));

            let n = cs.n_x();
            let perm = &cs.partition.permutation;
            for k in 0..cs.rho_grid.len() {
                // Exact split and disjoint supports.
                for i in 0..n {
                    for j in 0..n {
                        let e = cs.e1_base[k][(i, j)] + cs.e2_base[k][(i, j)];
                        assert_eq!(e, modal.e_base[k][(perm[i], perm[j])]);
                        assert!(
                            cs.e1_base[k][(i, j)] == 0.0 || cs.e2_base[k][(i, j)] == 0.0
                        );
                    }
                }
                // Support of e1 inside the pattern, e2 outside.
                for &(s, e) in &cs.partition.ranges {
                    for i in s..e {
                        for j in s..e {
                            assert_eq!(cs.e2_base[k][(i, j)], 0.0);
                        }
                    }
                }
                // Round trip recovers the un-permuted system exactly.
                for i in 0..n {
                    for j in 0..n {
                        assert_eq!(cs.a[k][(i, j)], modal.a[k][(perm[i], perm[j])]);
                    }
                }
            }
        }

        #[test]
        fn single_cluster_has_zero_e2() {
            let m = rotating_model();
            let tm = track(&m, &TrackingConfig::default()).unwrap();
            let modal = assemble_modal(&m, &tm, &ModalConfig::default()).unwrap();
            let all: Vec<usize> = (0..tm.n_modes()).collect();
            let cs = permute_and_split(&modal, &[all], 1.0).unwrap();
            assert_eq!(cs.n_clusters(), 1);
            for k in 0..cs.rho_grid.len() {
                assert_eq!(cs.e2_norms[k], 0.0);
                assert!(cs.e2_base[k].iter().all(|&v| v == 0.0));
            }
            // Blocks were already in canonical order, so Π = identity.
            assert!(cs.partition.permutation.iter().enumerate().all(|(i, &p)| i == p));
        }

        #[test]
        fn subsystem_extracts_cluster_block() {
            let m = rotating_model();
            let tm = track(&m, &TrackingConfig::default()).unwrap();
            let modal = assemble_modal(&m, &tm, &ModalConfig::default()).unwrap();
            let pair = modal.blocks.iter().find(|b| b.size == 2).unwrap();
            let reals: Vec<usize> = modal
                .blocks
                .iter()
                .filter(|b| b.size == 1)
                .map(|b| b.trajectory)
                .collect();
            let clusters = vec![reals, vec![pair.trajectory, pair.partner.unwrap()]];
            let cs = permute_and_split(&modal, &clusters, 0.5).unwrap();
            let sub = cs.subsystem(1);
            assert_eq!(sub.a[0].nrows(), 2);
            assert_eq!(sub.b[0].nrows(), 2);
            assert_eq!(sub.b[0].ncols(), 2);
            assert_eq!(sub.c[0].ncols(), 2);
            for k in 0..cs.rho_grid.len() {
                let (s, _) = sub.range;
                for i in 0..2 {
                    for j in 0..2 {
                        assert_eq!(sub.a[k][(i, j)], cs.a[k][(s + i, s + j)]);
                        assert_eq!(sub.e1_base[k][(i, j)], cs.e1_base[k][(s + i, s + j)]);
                    }
                }
            }
        }
    }
}
