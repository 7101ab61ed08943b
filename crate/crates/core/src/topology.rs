//! Skeleton graph: parent links, neighbor sets, hop distances, body groups,
//! and the sinusoidal hop encoding used as an edge attribute.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

/// On-disk form of a topology.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyDef {
    pub n_joints: usize,
    pub parent: Vec<Option<usize>>,
    /// Each group's first entry is its root joint.
    pub groups: Vec<Vec<usize>>,
}

/// Validated skeleton tree partitioned into body groups.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TopologyDef", into = "TopologyDef")]
pub struct SkeletonTopology {
    parent: Vec<Option<usize>>,
    root: usize,
    groups: Vec<Vec<usize>>,
    group_of: Vec<usize>,
    neighbors: Vec<Vec<usize>>,
    hops: Vec<Vec<usize>>,
    depth: Vec<usize>,
    diameter: usize,
}

impl TryFrom<TopologyDef> for SkeletonTopology {
    type Error = Error;

    fn try_from(spec: TopologyDef) -> Result<Self> {
        if spec.parent.len() != spec.n_joints {
            return Err(Error::Validation(format!(
                "n_joints is {} but {} parent entries were given",
                spec.n_joints,
                spec.parent.len()
            )));
        }
        build_topology(&spec.parent, spec.groups)
    }
}

impl From<SkeletonTopology> for TopologyDef {
    fn from(t: SkeletonTopology) -> Self {
        TopologyDef {
            n_joints: t.n_joints(),
            parent: t.parent,
            groups: t.groups,
        }
    }
}

/// Validates a parent list and a group partition and derives adjacency and
/// hop distances.
pub fn build_topology(parent: &[Option<usize>], groups: Vec<Vec<usize>>) -> Result<SkeletonTopology> {
    let n = parent.len();
    if n == 0 {
        return Err(Error::Validation("skeleton has no joints".into()));
    }
    let roots: Vec<usize> = (0..n).filter(|&j| parent[j].is_none()).collect();
    match roots.len() {
        0 => return Err(Error::Validation("no root joint (every joint has a parent)".into())),
        1 => {}
        _ => {
            return Err(Error::Validation(format!(
                "multiple roots: joints {roots:?} have no parent"
            )))
        }
    }
    let root = roots[0];
    for (j, p) in parent.iter().enumerate() {
        if let Some(p) = *p {
            if p >= n {
                return Err(Error::Validation(format!("joint {j} has out-of-range parent {p}")));
            }
            if p == j {
                return Err(Error::Validation(format!("joint {j} is its own parent")));
            }
        }
    }
    let mut depth = vec![usize::MAX; n];
    depth[root] = 0;
    for start in 0..n {
        let mut path = Vec::new();
        let mut j = start;
        while depth[j] == usize::MAX {
            if path.len() > n {
                return Err(Error::Validation(format!("cycle through joint {start}")));
            }
            path.push(j);
            j = parent[j].expect("only the root has no parent");
            if path.contains(&j) {
                return Err(Error::Validation(format!("cycle through joint {j}")));
            }
        }
        let mut d = depth[j];
        for &k in path.iter().rev() {
            d += 1;
            depth[k] = d;
        }
    }

    if groups.is_empty() {
        return Err(Error::Validation("at least one group is required".into()));
    }
    let mut group_of = vec![usize::MAX; n];
    for (s, g) in groups.iter().enumerate() {
        if g.is_empty() {
            return Err(Error::Validation(format!("group {s} is empty")));
        }
        for &j in g {
            if j >= n {
                return Err(Error::Validation(format!("group {s} references joint {j} outside 0..{n}")));
            }
            if group_of[j] != usize::MAX {
                return Err(Error::Validation(format!(
                    "joint {j} appears in groups {} and {s}; groups must be disjoint",
                    group_of[j]
                )));
            }
            group_of[j] = s;
        }
    }
    if let Some(j) = group_of.iter().position(|&s| s == usize::MAX) {
        return Err(Error::Validation(format!("joint {j} belongs to no group; groups must cover all joints")));
    }

    let mut neighbors = vec![Vec::new(); n];
    for (j, p) in parent.iter().enumerate() {
        if let Some(p) = *p {
            neighbors[j].push(p);
            neighbors[p].push(j);
        }
    }
    for nb in &mut neighbors {
        nb.sort_unstable();
    }
    let hops: Vec<Vec<usize>> = (0..n).map(|s| bfs(&neighbors, s)).collect();
    let diameter = hops.iter().flatten().copied().max().unwrap_or(0);
    Ok(SkeletonTopology {
        parent: parent.to_vec(),
        root,
        groups,
        group_of,
        neighbors,
        hops,
        depth,
        diameter,
    })
}

fn bfs(neighbors: &[Vec<usize>], source: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; neighbors.len()];
    dist[source] = 0;
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        for &v in &neighbors[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

impl SkeletonTopology {
    /// 22-joint layout with spine, head, two arms and two legs.
    pub fn default_22() -> Self {
        serde_json::from_str(include_str!("../assets/skeleton22.json")).expect("bundled topology is valid")
    }

    /// Chain `0 -> 1 -> ... -> n-1` with the given group partition.
    pub fn chain(n: usize, groups: Vec<Vec<usize>>) -> Result<Self> {
        let parent: Vec<Option<usize>> = (0..n).map(|j| j.checked_sub(1)).collect();
        build_topology(&parent, groups)
    }

    /// Chain split into `n_groups` contiguous runs of near-equal length.
    pub fn chain_grouped(n: usize, n_groups: usize) -> Result<Self> {
        if n_groups == 0 || n_groups > n {
            return Err(config_err(format!("cannot split {n} joints into {n_groups} groups")));
        }
        let groups = (0..n_groups)
            .map(|s| (s * n / n_groups..(s + 1) * n / n_groups).collect())
            .collect();
        Self::chain(n, groups)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn n_joints(&self) -> usize {
        self.parent.len()
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        self.parent[j]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn group_of(&self, j: usize) -> usize {
        self.group_of[j]
    }

    pub fn group_root(&self, s: usize) -> usize {
        self.groups[s][0]
    }

    pub fn neighbors(&self, j: usize) -> &[usize] {
        &self.neighbors[j]
    }

    pub fn hop(&self, i: usize, j: usize) -> usize {
        self.hops[i][j]
    }

    pub fn hops(&self) -> &[Vec<usize>] {
        &self.hops
    }

    pub fn depth(&self, j: usize) -> usize {
        self.depth[j]
    }

    /// Largest hop distance in the tree.
    pub fn diameter(&self) -> usize {
        self.diameter
    }

    /// Non-root joints in index order, paired with their parents.
    pub fn bones(&self) -> Vec<(usize, usize)> {
        (0..self.n_joints())
            .filter_map(|j| self.parent[j].map(|p| (j, p)))
            .collect()
    }

    /// Joints grouped by depth; level 0 holds only the root.
    pub fn levels(&self) -> Vec<Vec<usize>> {
        let max = self.depth.iter().copied().max().unwrap_or(0);
        let mut levels = vec![Vec::new(); max + 1];
        for (j, &d) in self.depth.iter().enumerate() {
            levels[d].push(j);
        }
        levels
    }

    /// Relabels joints: old joint `j` becomes `perm[j]`. Group order and the
    /// order of joints inside each group are preserved.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_joints();
        if perm.len() != n {
            return Err(config_err("permutation length differs from joint count"));
        }
        let mut parent = vec![None; n];
        for j in 0..n {
            parent[perm[j]] = self.parent[j].map(|p| perm[p]);
        }
        let groups = self
            .groups
            .iter()
            .map(|g| g.iter().map(|&j| perm[j]).collect())
            .collect();
        build_topology(&parent, groups)
    }

    /// Same skeleton, different partition.
    pub fn with_groups(&self, groups: Vec<Vec<usize>>) -> Result<Self> {
        build_topology(&self.parent, groups)
    }
}

/// Sinusoidal encoding of a hop count: entry `2i` is `sin(h / 10000^(2i/C'))`,
/// entry `2i+1` the matching cosine.
pub fn hop_embed(h: usize, c_prime: usize) -> Result<Vec<f64>> {
    if c_prime == 0 || !c_prime.is_multiple_of(2) {
        return Err(config_err(format!("hop embedding width must be even and positive, got {c_prime}")));
    }
    let h = h as f64;
    Ok((0..c_prime)
        .map(|k| {
            let i2 = (k - k % 2) as f64;
            let angle = h / 10000f64.powf(i2 / c_prime as f64);
            if k % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect())
}

/// Precomputed encodings for hop counts `0..=max_hop`.
#[derive(Clone, Debug, PartialEq)]
pub struct HopEmbedding {
    table: Vec<Vec<f64>>,
}

impl HopEmbedding {
    pub fn new(max_hop: usize, c_prime: usize) -> Result<Self> {
        let table = (0..=max_hop).map(|h| hop_embed(h, c_prime)).collect::<Result<_>>()?;
        Ok(Self { table })
    }

    pub fn for_topology(t: &SkeletonTopology, c_prime: usize) -> Result<Self> {
        Self::new(t.diameter(), c_prime)
    }

    pub fn row(&self, h: usize) -> Result<&[f64]> {
        self.table
            .get(h)
            .map(Vec::as_slice)
            .ok_or_else(|| config_err(format!("hop {h} exceeds table size {}", self.table.len())))
    }

    pub fn max_hop(&self) -> usize {
        self.table.len() - 1
    }
}

/// Gather/scatter index arrays derived once from a topology.
#[derive(Clone, Debug)]
pub struct IndexPlan {
    pub n_joints: usize,
    pub n_groups: usize,
    /// Directed neighbor edges `(src, dst)`; each tree edge appears twice.
    pub edge_src: Arc<[usize]>,
    pub edge_dst: Arc<[usize]>,
    /// Non-root group members, their group, and their hop distance to the group root.
    pub gate_group: Arc<[usize]>,
    pub gate_hops: Vec<usize>,
    pub group_of: Arc<[usize]>,
    pub group_members: Vec<Arc<[usize]>>,
    /// Parent of each joint; the global root maps to itself.
    pub parent_or_self: Arc<[usize]>,
    pub root: Arc<[usize]>,
    /// Joints at each depth below the root, with their parents.
    pub levels: Vec<(Arc<[usize]>, Arc<[usize]>)>,
    /// Non-root joints and their parents.
    pub bone_child: Arc<[usize]>,
    pub bone_parent: Arc<[usize]>,
}

impl IndexPlan {
    pub fn new(t: &SkeletonTopology) -> Self {
        let n = t.n_joints();
        let (mut src, mut dst) = (Vec::new(), Vec::new());
        for i in 0..n {
            for &j in t.neighbors(i) {
                src.push(i);
                dst.push(j);
            }
        }
        let (mut gate_group, mut gate_hops) = (Vec::new(), Vec::new());
        for (s, g) in t.groups().iter().enumerate() {
            for &m in &g[1..] {
                gate_group.push(s);
                gate_hops.push(t.hop(g[0], m));
            }
        }
        let levels = t
            .levels()
            .into_iter()
            .skip(1)
            .map(|lv| {
                let parents: Vec<usize> = lv.iter().map(|&j| t.parent(j).expect("non-root")).collect();
                (Arc::from(lv), Arc::from(parents))
            })
            .collect();
        let bones = t.bones();
        Self {
            n_joints: n,
            n_groups: t.n_groups(),
            edge_src: src.into(),
            edge_dst: dst.into(),
            gate_group: gate_group.into(),
            gate_hops,
            group_of: (0..n).map(|j| t.group_of(j)).collect(),
            group_members: t.groups().iter().map(|g| Arc::from(g.as_slice())).collect(),
            parent_or_self: (0..n).map(|j| t.parent(j).unwrap_or(j)).collect(),
            root: Arc::from(vec![t.root()]),
            levels,
            bone_child: bones.iter().map(|b| b.0).collect(),
            bone_parent: bones.iter().map(|b| b.1).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::rng::Rng;

    fn floyd_warshall(t: &SkeletonTopology) -> Vec<Vec<usize>> {
        let n = t.n_joints();
        let inf = usize::MAX / 4;
        let mut d = vec![vec![inf; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            row[i] = 0;
        }
        for (j, p) in t.parents().iter().enumerate() {
            if let Some(p) = *p {
                d[j][p] = 1;
                d[p][j] = 1;
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if d[i][k] + d[k][j] < d[i][j] {
                        d[i][j] = d[i][k] + d[k][j];
                    }
                }
            }
        }
        d
    }

    fn random_tree(n: usize, rng: &mut Rng) -> SkeletonTopology {
        let parent: Vec<Option<usize>> = (0..n).map(|j| if j == 0 { None } else { Some(rng.below(j)) }).collect();
        build_topology(&parent, vec![(0..n).collect()]).unwrap()
    }

    #[test]
    fn chain_neighbors() {
        let t = SkeletonTopology::chain(3, vec![vec![0, 1, 2]]).unwrap();
        assert_eq!(t.neighbors(1), &[0, 2]);
        assert_eq!(t.root(), 0);
    }

    #[test]
    fn two_roots_rejected() {
        let err = build_topology(&[None, None, Some(0)], vec![vec![0, 1, 2]]).unwrap_err();
        assert!(err.to_string().contains("multiple roots"), "{err}");
    }

    #[test]
    fn cycle_rejected() {
        let err = build_topology(&[None, Some(2), Some(1)], vec![vec![0, 1, 2]]).unwrap_err();
        assert!(err.to_string().contains("cycle"), "{err}");
    }

    #[test]
    fn partition_violations_rejected() {
        let parent = [None, Some(0), Some(1)];
        let overlap = build_topology(&parent, vec![vec![0, 1], vec![1, 2]]).unwrap_err();
        assert!(overlap.to_string().contains("disjoint"));
        let missing = build_topology(&parent, vec![vec![0, 1]]).unwrap_err();
        assert!(missing.to_string().contains("cover"));
        let empty = build_topology(&parent, vec![vec![0, 1, 2], vec![]]).unwrap_err();
        assert!(empty.to_string().contains("empty"));
        let range = build_topology(&parent, vec![vec![0, 1, 2, 7]]).unwrap_err();
        assert!(range.to_string().contains("outside"));
    }

    #[test]
    fn hop_distances() {
        let t = SkeletonTopology::chain(4, vec![vec![0, 1, 2, 3]]).unwrap();
        assert_eq!(t.hop(0, 3), 3);
        for i in 0..4 {
            assert_eq!(t.hop(i, i), 0);
        }
        assert_eq!(t.diameter(), 3);
    }

    #[test]
    fn hops_match_floyd_warshall_on_random_trees() {
        let mut rng = Rng::new(22);
        for _ in 0..20 {
            let t = random_tree(22, &mut rng);
            assert_eq!(t.hops(), floyd_warshall(&t).as_slice());
        }
    }

    #[test]
    fn hop_matrix_is_a_metric() {
        let mut rng = Rng::new(4);
        let t = random_tree(15, &mut rng);
        for i in 0..15 {
            for j in 0..15 {
                assert_eq!(t.hop(i, j), t.hop(j, i));
                for k in 0..15 {
                    assert!(t.hop(i, j) <= t.hop(i, k) + t.hop(k, j));
                }
            }
        }
    }

    #[test]
    fn embedding_values() {
        let e0 = hop_embed(0, 6).unwrap();
        assert_eq!(e0, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let e1 = hop_embed(1, 4).unwrap();
        assert!((e1[0] - 0.841471).abs() < 1e-6);
        assert!(hop_embed(1, 5).is_err());
    }

    #[test]
    fn embedding_rows_are_distinct() {
        let e = HopEmbedding::new(12, 32).unwrap();
        let mut min_gap = f64::INFINITY;
        for a in 0..=12 {
            for b in (a + 1)..=12 {
                let gap = e
                    .row(a)
                    .unwrap()
                    .iter()
                    .zip(e.row(b).unwrap())
                    .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
                min_gap = min_gap.min(gap);
            }
        }
        assert!(min_gap > 0.0);
    }

    #[test]
    fn default_layout_and_json_roundtrip() {
        let t = SkeletonTopology::default_22();
        assert_eq!(t.n_joints(), 22);
        assert_eq!(t.n_groups(), 6);
        for s in 0..6 {
            assert_eq!(t.group_of(t.group_root(s)), s);
        }
        let text = serde_json::to_string(&t).unwrap();
        assert!(text.contains("\"n_joints\":22"));
        let back: SkeletonTopology = serde_json::from_str(&text).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn relabeling_permutes_hops() {
        let t = SkeletonTopology::default_22();
        let mut rng = Rng::new(6);
        let mut perm: Vec<usize> = (0..22).collect();
        rng.shuffle(&mut perm);
        let r = t.relabeled(&perm).unwrap();
        for i in 0..22 {
            for j in 0..22 {
                assert_eq!(r.hop(perm[i], perm[j]), t.hop(i, j));
            }
        }
    }
}
