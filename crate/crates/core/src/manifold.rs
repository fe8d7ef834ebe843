//! Principal-direction trees over delay vectors, used to pull particle states
//! back onto a piecewise-linear model of the delay manifold.
//!
//! Every node keeps the mean and the top-`k` principal directions of the
//! training points that reached it. Internal nodes split their points at the
//! median of the projections onto a split direction (the top principal
//! direction, or a random unit vector for the RP variant); points whose
//! projection equals the threshold go left.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::TdoaVector;

const FORMAT_HEADER: &str = "pdtree v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRule {
    /// Split along the node's top principal direction.
    Pd,
    /// Split along a uniformly random unit direction.
    Rp,
}

impl std::str::FromStr for SplitRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pd" => Ok(SplitRule::Pd),
            "rp" => Ok(SplitRule::Rp),
            other => Err(Error::parse("split rule", format!("unknown rule `{other}`"))),
        }
    }
}

impl std::fmt::Display for SplitRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitRule::Pd => "pd",
            SplitRule::Rp => "rp",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeConfig {
    pub depth: usize,
    /// Principal directions kept per node.
    pub k: usize,
    pub split_rule: SplitRule,
    /// Minimum points per leaf; `None` means `2 * k`.
    pub min_leaf: Option<usize>,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            depth: 2,
            k: 3,
            split_rule: SplitRule::Pd,
            min_leaf: None,
        }
    }
}

impl TreeConfig {
    pub fn min_leaf(&self) -> usize {
        self.min_leaf.unwrap_or(2 * self.k).max(1)
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.k == 0 || self.k > dim {
            return Err(Error::InvalidConfig(format!(
                "k = {} must lie in 1..={dim}",
                self.k
            )));
        }
        if self.min_leaf == Some(0) {
            return Err(Error::InvalidConfig("min_leaf must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdNode {
    pub mean: Vec<f64>,
    /// Orthonormal, ordered by decreasing variance.
    pub principal_dirs: Vec<Vec<f64>>,
    /// Variance of the node's data along each principal direction.
    pub variances: Vec<f64>,
    pub split_dir: Vec<f64>,
    pub split_threshold: f64,
    pub children: Option<(usize, usize)>,
    pub depth: usize,
    pub count: usize,
    /// The node's data had no spread; projection collapses to the mean.
    pub degenerate: bool,
}

impl PdNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

/// Binary partition tree, nodes stored in breadth-first order (root first).
#[derive(Debug, Clone, PartialEq)]
pub struct PdTree {
    pub config: TreeConfig,
    pub dim: usize,
    pub seed: u64,
    nodes: Vec<PdNode>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Makes the first clearly nonzero component positive.
fn canonical_sign(v: &mut [f64]) {
    if let Some(&first) = v.iter().find(|c| c.abs() > 1e-12) {
        if first < 0.0 {
            v.iter_mut().for_each(|c| *c = -*c);
        }
    }
}

struct LocalPca {
    mean: Vec<f64>,
    dirs: Vec<Vec<f64>>,
    variances: Vec<f64>,
    degenerate: bool,
}

fn local_pca(data: &[TdoaVector], idx: &[usize], dim: usize, k: usize) -> LocalPca {
    let n = idx.len() as f64;
    let mut mean = vec![0.0; dim];
    for &i in idx {
        for (m, x) in mean.iter_mut().zip(data[i].iter()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);

    let centered = DMatrix::from_fn(idx.len(), dim, |r, c| data[idx[r]][c] - mean[c]);
    let cov = centered.tr_mul(&centered) / n;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let top = eig.eigenvalues[order[0]].max(0.0);
    let scale = 1.0 + dot(&mean, &mean);
    if top <= 1e-20 * scale {
        // orthonormal completion: the first k coordinate axes
        let dirs = (0..k)
            .map(|j| (0..dim).map(|c| if c == j { 1.0 } else { 0.0 }).collect())
            .collect();
        return LocalPca {
            mean,
            dirs,
            variances: vec![0.0; k],
            degenerate: true,
        };
    }

    let dirs = order[..k]
        .iter()
        .map(|&j| {
            let mut v: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
            canonical_sign(&mut v);
            v
        })
        .collect();
    let variances = order[..k].iter().map(|&j| eig.eigenvalues[j].max(0.0)).collect();
    LocalPca {
        mean,
        dirs,
        variances,
        degenerate: false,
    }
}

/// Median of the projections; the midpoint of the two middle values for even
/// counts, so that `<=` sends `ceil(n/2)` points left when values are distinct.
fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        let (lo, hi) = (values[n / 2 - 1], values[n / 2]);
        lo + (hi - lo) / 2.0
    }
}

fn random_unit<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|c| c / norm).collect();
        }
    }
}

/// Builds a tree over `data`. The seed only matters for the RP split rule.
pub fn build_tree(data: &[TdoaVector], cfg: &TreeConfig, rng_seed: u64) -> Result<PdTree> {
    let dim = data.first().map_or(0, |v| v.dim());
    if data.len() < cfg.min_leaf() || data.is_empty() {
        return Err(Error::InsufficientData {
            got: data.len(),
            need: cfg.min_leaf(),
        });
    }
    if data.iter().any(|v| v.dim() != dim) {
        return Err(Error::InvalidInput("training vectors differ in dimension".into()));
    }
    cfg.validate(dim)?;

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut nodes: Vec<PdNode> = Vec::new();
    // (points, depth, parent slot)
    let mut queue: VecDeque<(Vec<usize>, usize, Option<(usize, bool)>)> = VecDeque::new();
    queue.push_back(((0..data.len()).collect(), 0, None));

    while let Some((idx, depth, parent)) = queue.pop_front() {
        let pca = local_pca(data, &idx, dim, cfg.k);
        let split_dir = match cfg.split_rule {
            SplitRule::Pd => pca.dirs[0].clone(),
            SplitRule::Rp => random_unit(&mut rng, dim),
        };
        let projections: Vec<f64> = idx.iter().map(|&i| dot(&data[i], &split_dir)).collect();
        let split_threshold = median(projections.clone());

        let me = nodes.len();
        nodes.push(PdNode {
            mean: pca.mean,
            principal_dirs: pca.dirs,
            variances: pca.variances,
            split_dir,
            split_threshold,
            children: None,
            depth,
            count: idx.len(),
            degenerate: pca.degenerate,
        });
        if let Some((p, is_left)) = parent {
            let slot = nodes[p].children.get_or_insert((usize::MAX, usize::MAX));
            if is_left {
                slot.0 = me;
            } else {
                slot.1 = me;
            }
        }

        if pca.degenerate || depth >= cfg.depth || idx.len() < 2 * cfg.min_leaf() {
            continue;
        }
        let mut left = Vec::with_capacity(idx.len() / 2 + 1);
        let mut right = Vec::with_capacity(idx.len() / 2 + 1);
        for (&i, &p) in idx.iter().zip(&projections) {
            if p <= split_threshold {
                left.push(i);
            } else {
                right.push(i);
            }
        }
        if left.is_empty() || right.is_empty() {
            continue;
        }
        queue.push_back((left, depth + 1, Some((me, true))));
        queue.push_back((right, depth + 1, Some((me, false))));
    }

    Ok(PdTree {
        config: cfg.clone(),
        dim,
        seed: rng_seed,
        nodes,
    })
}

/// Orthogonal projection onto `mean + span(principal_dirs)`.
pub fn project(node: &PdNode, x: &[f64]) -> TdoaVector {
    let mut out = node.mean.clone();
    if node.degenerate {
        return out.into();
    }
    let centered: Vec<f64> = x.iter().zip(&node.mean).map(|(a, m)| a - m).collect();
    for dir in &node.principal_dirs {
        let coef = dot(&centered, dir);
        for (o, d) in out.iter_mut().zip(dir) {
            *o += coef * d;
        }
    }
    out.into()
}

/// How a particle state is pulled onto the manifold model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionStrategy {
    None,
    /// Project at the ancestor of this depth on the state's path.
    FixedDepth(usize),
    /// Project at a node drawn uniformly from the state's root-to-leaf path.
    Randomized,
}

impl ProjectionStrategy {
    pub fn validate(&self, tree: Option<&PdTree>) -> Result<()> {
        match (self, tree) {
            (ProjectionStrategy::None, _) => Ok(()),
            (_, None) => Err(Error::MissingTree),
            (ProjectionStrategy::FixedDepth(d), Some(t)) if *d > t.config.depth => Err(
                Error::InvalidConfig(format!("fixed depth {d} exceeds tree depth {}", t.config.depth)),
            ),
            _ => Ok(()),
        }
    }

    pub fn uses_tree(&self) -> bool {
        !matches!(self, ProjectionStrategy::None)
    }
}

impl PdTree {
    pub fn nodes(&self) -> &[PdNode] {
        &self.nodes
    }

    pub fn node(&self, idx: usize) -> &PdNode {
        &self.nodes[idx]
    }

    pub fn root(&self) -> &PdNode {
        &self.nodes[0]
    }

    pub fn leaves(&self) -> impl Iterator<Item = (usize, &PdNode)> {
        self.nodes.iter().enumerate().filter(|(_, n)| n.is_leaf())
    }

    /// Depth of the deepest node actually built.
    pub fn built_depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Node indices from the root to the leaf that `x` falls into.
    pub fn route(&self, x: &[f64]) -> Vec<usize> {
        let mut path = vec![0];
        let mut cur = 0;
        while let Some((left, right)) = self.nodes[cur].children {
            let node = &self.nodes[cur];
            cur = if dot(x, &node.split_dir) <= node.split_threshold {
                left
            } else {
                right
            };
            path.push(cur);
        }
        path
    }

    pub fn leaf_of(&self, x: &[f64]) -> usize {
        *self.route(x).last().expect("path contains the root")
    }

    /// Projects `x` according to `strategy`; also returns the depth of the
    /// node used, or -1 when no projection happened.
    pub fn denoise<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        strategy: ProjectionStrategy,
        rng: &mut R,
    ) -> (TdoaVector, i32) {
        let node = match strategy {
            ProjectionStrategy::None => return (x.to_vec().into(), -1),
            ProjectionStrategy::FixedDepth(d) => {
                let path = self.route(x);
                path[d.min(path.len() - 1)]
            }
            ProjectionStrategy::Randomized => {
                let path = self.route(x);
                path[rng.random_range(0..path.len())]
            }
        };
        let node = &self.nodes[node];
        (project(node, x), node.depth as i32)
    }

    /// Structured-text form: header, config, then nodes breadth-first. Floats
    /// carry 17 significant digits so a round trip is bit-exact.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let fmt_vec = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:.16e}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        writeln!(s, "{FORMAT_HEADER}").unwrap();
        writeln!(
            s,
            "config dim {} depth {} k {} split {} min_leaf {} seed {}",
            self.dim,
            self.config.depth,
            self.config.k,
            self.config.split_rule,
            self.config.min_leaf(),
            self.seed
        )
        .unwrap();
        writeln!(s, "nodes {}", self.nodes.len()).unwrap();
        for (i, n) in self.nodes.iter().enumerate() {
            let (l, r) = n
                .children
                .map_or(("-".to_string(), "-".to_string()), |(l, r)| (l.to_string(), r.to_string()));
            writeln!(
                s,
                "node {i} depth {} count {} degenerate {} left {l} right {r} threshold {:.16e}",
                n.depth,
                n.count,
                u8::from(n.degenerate),
                n.split_threshold
            )
            .unwrap();
            writeln!(s, "mean {}", fmt_vec(&n.mean)).unwrap();
            writeln!(s, "split {}", fmt_vec(&n.split_dir)).unwrap();
            writeln!(s, "var {}", fmt_vec(&n.variances)).unwrap();
            for d in &n.principal_dirs {
                writeln!(s, "dir {}", fmt_vec(d)).unwrap();
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let err = |m: String| Error::parse("tree file", m);
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let mut next = |what: &str| lines.next().ok_or_else(|| err(format!("missing {what}")));

        if next("header")?.trim() != FORMAT_HEADER {
            return Err(err("unsupported header".into()));
        }
        let kv = parse_kv(next("config")?, "config")?;
        let dim: usize = kv.get("dim")?;
        let config = TreeConfig {
            depth: kv.get("depth")?,
            k: kv.get("k")?,
            split_rule: kv.get_str("split")?.parse()?,
            min_leaf: Some(kv.get("min_leaf")?),
        };
        let seed: u64 = kv.get("seed")?;
        let count: usize = parse_kv(next("node count")?, "nodes")?.positional(0)?;

        let mut nodes = Vec::with_capacity(count);
        for i in 0..count {
            let head = parse_kv(next("node")?, "node")?;
            if head.positional::<usize>(0)? != i {
                return Err(err(format!("node {i} out of order")));
            }
            let child = |key: &str| -> Result<Option<usize>> {
                match head.get_str(key)? {
                    "-" => Ok(None),
                    v => v.parse().map(Some).map_err(|e| err(format!("{key}: {e}"))),
                }
            };
            let children = match (child("left")?, child("right")?) {
                (Some(l), Some(r)) => Some((l, r)),
                (None, None) => None,
                _ => return Err(err(format!("node {i} has one child"))),
            };
            let mean = parse_vec(next("mean")?, "mean", dim)?;
            let split_dir = parse_vec(next("split")?, "split", dim)?;
            let variances = parse_vec(next("var")?, "var", config.k)?;
            let principal_dirs = (0..config.k)
                .map(|_| parse_vec(next("dir")?, "dir", dim))
                .collect::<Result<Vec<_>>>()?;
            nodes.push(PdNode {
                mean,
                principal_dirs,
                variances,
                split_dir,
                split_threshold: head.get("threshold")?,
                children,
                depth: head.get("depth")?,
                count: head.get("count")?,
                degenerate: head.get::<u8>("degenerate")? != 0,
            });
        }
        if nodes.is_empty() {
            return Err(err("tree has no nodes".into()));
        }
        if nodes
            .iter()
            .filter_map(|n| n.children)
            .any(|(l, r)| l >= nodes.len() || r >= nodes.len())
        {
            return Err(err("child index out of range".into()));
        }
        Ok(Self {
            config,
            dim,
            seed,
            nodes,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

struct KeyValues<'a> {
    tag: &'a str,
    positional: Vec<&'a str>,
    pairs: Vec<(&'a str, &'a str)>,
}

impl KeyValues<'_> {
    fn get_str(&self, key: &str) -> Result<&str> {
        self.pairs
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::parse("tree file", format!("`{}` line lacks `{key}`", self.tag)))
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get_str(key)?
            .parse()
            .map_err(|e| Error::parse("tree file", format!("{key}: {e}")))
    }

    fn positional<T: std::str::FromStr>(&self, i: usize) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.positional
            .get(i)
            .ok_or_else(|| Error::parse("tree file", format!("`{}` line is too short", self.tag)))?
            .parse()
            .map_err(|e| Error::parse("tree file", format!("{}: {e}", self.tag)))
    }
}

/// `tag [positional] key value key value ...`
fn parse_kv<'a>(line: &'a str, tag: &'a str) -> Result<KeyValues<'a>> {
    let mut tokens = line.split_whitespace();
    if tokens.next() != Some(tag) {
        return Err(Error::parse("tree file", format!("expected `{tag}` line")));
    }
    let rest: Vec<&str> = tokens.collect();
    let (positional, kv) = rest.split_at(rest.len() % 2);
    Ok(KeyValues {
        tag,
        positional: positional.to_vec(),
        pairs: kv.chunks(2).map(|c| (c[0], c[1])).collect(),
    })
}

fn parse_vec(line: &str, tag: &str, len: usize) -> Result<Vec<f64>> {
    let mut tokens = line.split_whitespace();
    if tokens.next() != Some(tag) {
        return Err(Error::parse("tree file", format!("expected `{tag}` line")));
    }
    let v = tokens
        .map(str::parse::<f64>)
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::parse("tree file", format!("{tag}: {e}")))?;
    if v.len() != len {
        return Err(Error::parse(
            "tree file",
            format!("`{tag}` has {} values, expected {len}", v.len()),
        ));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{tdoa_of, Scene};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn vecs(points: &[&[f64]]) -> Vec<TdoaVector> {
        points.iter().map(|p| TdoaVector(p.to_vec())).collect()
    }

    fn room_set(n: usize) -> Vec<TdoaVector> {
        let mut scene = Scene::central_walk();
        scene.training_count = n;
        scene.training_set(11).unwrap()
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn collinear_split_by_hand() {
        let data = vecs(&[&[0.0, 0.0], &[1.0, 0.0], &[2.0, 0.0], &[3.0, 0.0]]);
        let cfg = TreeConfig {
            depth: 1,
            k: 1,
            ..TreeConfig::default()
        };
        let tree = build_tree(&data, &cfg, 0).unwrap();
        let root = tree.root();
        assert_close(&root.split_dir, &[1.0, 0.0], 1e-12);
        assert!((root.split_threshold - 1.5).abs() < 1e-12);
        let (l, r) = root.children.unwrap();
        assert_close(&tree.node(l).mean, &[0.5, 0.0], 1e-12);
        assert_close(&tree.node(r).mean, &[2.5, 0.0], 1e-12);
        assert_eq!(tree.node(l).count, 2);
        assert_eq!(tree.node(r).count, 2);
    }

    /// Power iteration on a covariance built without nalgebra.
    fn top_direction_oracle(data: &[TdoaVector]) -> Vec<f64> {
        let dim = data[0].dim();
        let n = data.len() as f64;
        let mean: Vec<f64> = (0..dim).map(|c| data.iter().map(|v| v[c]).sum::<f64>() / n).collect();
        let mut cov = vec![vec![0.0; dim]; dim];
        for v in data {
            for a in 0..dim {
                for b in 0..dim {
                    cov[a][b] += (v[a] - mean[a]) * (v[b] - mean[b]) / n;
                }
            }
        }
        let mut u = vec![1.0; dim];
        for _ in 0..2000 {
            let next: Vec<f64> = (0..dim).map(|a| dot(&cov[a], &u)).collect();
            let norm = dot(&next, &next).sqrt();
            u = next.into_iter().map(|x| x / norm).collect();
        }
        canonical_sign(&mut u);
        u
    }

    #[test]
    fn depth_zero_is_global_pca() {
        let data = room_set(2000);
        let cfg = TreeConfig {
            depth: 0,
            ..TreeConfig::default()
        };
        let tree = build_tree(&data, &cfg, 0).unwrap();
        assert_eq!(tree.nodes().len(), 1);
        assert!(tree.root().is_leaf());
        assert_close(&tree.root().principal_dirs[0], &top_direction_oracle(&data), 1e-6);
    }

    #[test]
    fn room_tree_has_balanced_leaves() {
        let data = room_set(20000);
        let tree = build_tree(&data, &TreeConfig::default(), 0).unwrap();
        let leaves: Vec<usize> = tree.leaves().map(|(_, n)| n.count).collect();
        assert_eq!(leaves.len(), 4);
        for c in leaves {
            assert!((4999..=5001).contains(&c), "leaf count {c}");
        }
        for n in tree.nodes() {
            if let Some((l, r)) = n.children {
                assert!(tree.node(l).count.abs_diff(tree.node(r).count) <= 1);
                assert_eq!(tree.node(l).count + tree.node(r).count, n.count);
            }
        }
    }

    #[test]
    fn routing_reproduces_partition() {
        let data = room_set(3000);
        let tree = build_tree(&data, &TreeConfig::default(), 0).unwrap();
        let mut counts = vec![0usize; tree.nodes().len()];
        for v in &data {
            for n in tree.route(v) {
                counts[n] += 1;
            }
        }
        for (i, n) in tree.nodes().iter().enumerate() {
            assert_eq!(counts[i], n.count, "node {i}");
        }
    }

    #[test]
    fn route_tie_goes_left() {
        // symmetric data: the root mean projects exactly onto the threshold
        let data = vecs(&[&[-1.0, 0.0], &[1.0, 0.0], &[-2.0, 0.0], &[2.0, 0.0]]);
        let cfg = TreeConfig {
            depth: 1,
            k: 1,
            ..TreeConfig::default()
        };
        let tree = build_tree(&data, &cfg, 0).unwrap();
        let path = tree.route(&tree.root().mean);
        assert_eq!(path, vec![0, tree.root().children.unwrap().0]);
        let far_left = tree.route(&[-10.0, 0.0]);
        assert_eq!(far_left, vec![0, 1]);
    }

    #[test]
    fn projection_examples() {
        let data = room_set(2000);
        let tree = build_tree(&data, &TreeConfig::default(), 0).unwrap();
        let node = tree.root();

        // a point already in the affine span
        let mut inside = node.mean.clone();
        for (j, d) in node.principal_dirs.iter().enumerate() {
            for (x, c) in inside.iter_mut().zip(d) {
                *x += (j as f64 + 1.5) * c;
            }
        }
        assert_close(&project(node, &inside), &inside, 1e-9);

        // mean + v + w with w orthogonal to the span
        let v: Vec<f64> = node.principal_dirs[1].iter().map(|c| 4.0 * c).collect();
        let mut w = vec![0.0; tree.dim];
        w[0] = 1.0;
        for d in &node.principal_dirs {
            let c = dot(&w, d);
            w.iter_mut().zip(d).for_each(|(x, dv)| *x -= c * dv);
        }
        let x: Vec<f64> = (0..tree.dim).map(|i| node.mean[i] + v[i] + 7.0 * w[i]).collect();
        let expected: Vec<f64> = (0..tree.dim).map(|i| node.mean[i] + v[i]).collect();
        assert_close(&project(node, &x), &expected, 1e-9);
    }

    #[test]
    fn full_rank_projection_is_identity() {
        let data = room_set(500);
        let cfg = TreeConfig {
            depth: 0,
            k: 21,
            min_leaf: Some(1),
            ..TreeConfig::default()
        };
        let tree = build_tree(&data, &cfg, 0).unwrap();
        let x: Vec<f64> = (0..21).map(|i| (i as f64 * 0.37).sin() * 50.0).collect();
        assert_close(&project(tree.root(), &x), &x, 1e-9);
    }

    #[test]
    fn degenerate_node_projects_to_mean() {
        let data = vec![TdoaVector(vec![1.0, 2.0, 3.0]); 8];
        let cfg = TreeConfig {
            depth: 2,
            k: 2,
            ..TreeConfig::default()
        };
        let tree = build_tree(&data, &cfg, 0).unwrap();
        assert_eq!(tree.nodes().len(), 1);
        assert!(tree.root().degenerate);
        assert_eq!(project(tree.root(), &[9.0, 9.0, 9.0]).as_slice(), &[1.0, 2.0, 3.0]);
        let dirs = &tree.root().principal_dirs;
        assert!((dot(&dirs[0], &dirs[1])).abs() < 1e-12);
    }

    #[test]
    fn build_errors() {
        let data = vec![TdoaVector(vec![0.0, 1.0]); 3];
        assert!(matches!(
            build_tree(&data, &TreeConfig { k: 2, ..TreeConfig::default() }, 0),
            Err(Error::InsufficientData { got: 3, need: 4 })
        ));
        assert!(matches!(
            build_tree(&data, &TreeConfig { k: 3, min_leaf: Some(1), ..TreeConfig::default() }, 0),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn denoise_strategies() {
        let data = room_set(4000);
        let tree = build_tree(&data, &TreeConfig::default(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = data[17].iter().map(|v| v + 3.0).collect();

        let (same, depth) = tree.denoise(&x, ProjectionStrategy::None, &mut rng);
        assert_eq!(same.as_slice(), x.as_slice());
        assert_eq!(depth, -1);

        let (root, depth) = tree.denoise(&x, ProjectionStrategy::FixedDepth(0), &mut rng);
        assert_eq!(root, project(tree.root(), &x));
        assert_eq!(depth, 0);

        let (leaf, depth) = tree.denoise(&x, ProjectionStrategy::FixedDepth(2), &mut rng);
        assert_eq!(leaf, project(tree.node(tree.leaf_of(&x)), &x));
        assert_eq!(depth, 2);
    }

    #[test]
    fn randomized_depth_is_uniform() {
        let data = room_set(4000);
        let tree = build_tree(&data, &TreeConfig::default(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut counts = [0usize; 3];
        let calls = 30_000;
        for i in 0..calls {
            let (_, d) = tree.denoise(&data[i % data.len()], ProjectionStrategy::Randomized, &mut rng);
            counts[d as usize] += 1;
        }
        for c in counts {
            let f = c as f64 / calls as f64;
            assert!((f - 1.0 / 3.0).abs() <= 0.02, "{counts:?}");
        }
    }

    #[test]
    fn leaf_projection_reduces_noise() {
        let scene = Scene::central_walk();
        let data = room_set(20000);
        let tree = build_tree(&data, &TreeConfig::default(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let noise = Normal::new(0.0, 5.0).unwrap();
        let (mut before, mut after) = (0.0, 0.0);
        for _ in 0..500 {
            let truth = tdoa_of(&scene.training_region.sample(&mut rng), &scene.array, 16000.0);
            let noisy: Vec<f64> = truth.iter().map(|t| t + noise.sample(&mut rng)).collect();
            let (clean, _) = tree.denoise(&noisy, ProjectionStrategy::FixedDepth(2), &mut rng);
            before += truth.iter().zip(&noisy).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            after += truth.iter().zip(clean.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        assert!(after <= 0.7 * before, "after {after} before {before}");
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let data = room_set(3000);
        for rule in [SplitRule::Pd, SplitRule::Rp] {
            let cfg = TreeConfig {
                split_rule: rule,
                ..TreeConfig::default()
            };
            let tree = build_tree(&data, &cfg, 42).unwrap();
            let back = PdTree::from_text(&tree.to_text()).unwrap();
            assert_eq!(back.nodes().len(), tree.nodes().len());
            for (a, b) in tree.nodes().iter().zip(back.nodes()) {
                let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(&a.mean), bits(&b.mean));
                assert_eq!(bits(&a.split_dir), bits(&b.split_dir));
                assert_eq!(a.split_threshold.to_bits(), b.split_threshold.to_bits());
                for (u, v) in a.principal_dirs.iter().zip(&b.principal_dirs) {
                    assert_eq!(bits(u), bits(v));
                }
            }
            assert_eq!(back.to_text(), tree.to_text());
        }
        assert!(PdTree::from_text("pdtree v9\n").is_err());
    }

    #[test]
    fn rp_tree_is_seed_deterministic() {
        let data = room_set(2000);
        let cfg = TreeConfig {
            split_rule: SplitRule::Rp,
            ..TreeConfig::default()
        };
        let a = build_tree(&data, &cfg, 3).unwrap();
        let b = build_tree(&data, &cfg, 3).unwrap();
        let c = build_tree(&data, &cfg, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.root().split_dir, c.root().split_dir);
        for n in a.nodes() {
            assert!((dot(&n.split_dir, &n.split_dir) - 1.0).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn projection_laws(seed in 0u64..1000) {
            let data = room_set(600);
            let tree = build_tree(&data, &TreeConfig::default(), 0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..21).map(|_| rng.random_range(-300.0..300.0)).collect();
            let y: Vec<f64> = (0..21).map(|_| rng.random_range(-300.0..300.0)).collect();
            for node in tree.nodes() {
                let px = project(node, &x);
                let ppx = project(node, &px);
                for (a, b) in px.iter().zip(ppx.iter()) {
                    prop_assert!((a - b).abs() < 1e-9);
                }
                let py = project(node, &y);
                let d_proj: f64 = px.iter().zip(py.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let d_raw: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                prop_assert!(d_proj <= d_raw + 1e-9);
            }
        }

        #[test]
        fn split_direction_beats_every_axis(seed in 0u64..1000) {
            let mut scene = Scene::central_walk();
            scene.training_count = 400;
            let data = scene.training_set(seed).unwrap();
            let tree = build_tree(&data, &TreeConfig::default(), 0).unwrap();
            let n = data.len() as f64;
            let var_along = |u: &dyn Fn(&TdoaVector) -> f64| {
                let m = data.iter().map(u).sum::<f64>() / n;
                data.iter().map(|v| (u(v) - m).powi(2)).sum::<f64>() / n
            };
            let root = tree.root();
            let top = var_along(&|v: &TdoaVector| dot(v, &root.split_dir));
            for axis in 0..21 {
                prop_assert!(top >= var_along(&|v: &TdoaVector| v[axis]) - 1e-9 * top);
            }
        }
    }
}
