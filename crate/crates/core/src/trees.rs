//! Random rooted trees: offspring laws, lazily expanded Galton-Watson
//! trees, height truncation and subtree percolation.
//!
//! Vertices are dense `u32` ids into a vector; each vertex owns the
//! [`RngStream`] position its offspring draw and its children's streams
//! are derived from, so re-expanding a vertex always yields the same
//! children no matter the order in which the tree was explored. A walk on
//! an "infinite" tree only ever materializes the thin subtree it touches.

use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// A finitely supported offspring law on the non-negative integers.
#[derive(Debug, Clone, PartialEq)]
pub struct OffspringDistribution {
    /// Sorted by k; probabilities strictly positive.
    support: Vec<(u32, f64)>,
    mean: f64,
}

impl OffspringDistribution {
    /// Build from (count, probability) pairs. Probabilities must be
    /// non-negative and sum to 1 within 1e-12; zero-probability entries
    /// are dropped.
    pub fn new(pairs: impl IntoIterator<Item = (u32, f64)>) -> Result<Self> {
        let mut support: Vec<(u32, f64)> = pairs.into_iter().filter(|&(_, p)| p != 0.0).collect();
        support.sort_by_key(|&(k, _)| k);
        if support.is_empty() {
            return Err(Error::domain("offspring law needs at least one atom"));
        }
        if support.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::domain("offspring law has duplicate atoms"));
        }
        let mut total = 0.0;
        let mut mean = 0.0;
        for &(k, p) in &support {
            if !(p > 0.0) || !p.is_finite() {
                return Err(Error::domain("offspring probabilities must be positive"));
            }
            total += p;
            mean += k as f64 * p;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!(
                "offspring probabilities sum to {total}, not 1"
            )));
        }
        Ok(OffspringDistribution { support, mean })
    }

    /// The point mass at `k` children.
    pub fn deterministic(k: u32) -> Self {
        OffspringDistribution {
            support: vec![(k, 1.0)],
            mean: k as f64,
        }
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// True iff no vertex can be a leaf (zero offspring has no mass).
    pub fn is_leafless(&self) -> bool {
        self.support.first().map_or(true, |&(k, _)| k > 0)
    }

    pub fn probability(&self, k: u32) -> f64 {
        self.support
            .iter()
            .find(|&&(kk, _)| kk == k)
            .map_or(0.0, |&(_, p)| p)
    }

    pub fn max_offspring(&self) -> u32 {
        self.support.last().map_or(0, |&(k, _)| k)
    }

    pub fn support(&self) -> &[(u32, f64)] {
        &self.support
    }

    /// Draw one offspring count.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> u32 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for &(k, p) in &self.support {
            acc += p;
            if u < acc {
                return k;
            }
        }
        self.support.last().expect("support non-empty").0
    }

    /// Probability generating function G(q) = sum p_k q^k.
    pub fn generating_function(&self, q: f64) -> f64 {
        self.support
            .iter()
            .map(|&(k, p)| p * q.powi(k as i32))
            .sum()
    }

    /// Smallest fixed point of the generating function: the extinction
    /// probability of the branching process, found by iterating q <- G(q)
    /// from 0 until the increment falls below `tol`.
    pub fn extinction_probability(&self, tol: f64) -> f64 {
        let mut q = 0.0f64;
        for _ in 0..20_000_000u64 {
            let next = self.generating_function(q);
            if (next - q).abs() < tol {
                return next.min(1.0);
            }
            q = next;
        }
        q.min(1.0)
    }

    /// Independent child thinning: each child is removed with probability
    /// `eta`. This is the offspring law of a vertex-percolated tree; the
    /// mean drops to (1 - eta) times the original.
    pub fn thin(&self, eta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::domain("removal probability must lie in [0, 1]"));
        }
        if eta == 0.0 {
            return Ok(self.clone());
        }
        let keep = 1.0 - eta;
        let kmax = self.max_offspring() as usize;
        let mut probs = vec![0.0f64; kmax + 1];
        for &(k, p) in &self.support {
            // Binomial(k, keep) weights by multiplicative recurrence.
            let k = k as usize;
            let mut w = eta.powi(k as i32); // j = 0
            for j in 0..=k {
                probs[j] += p * w;
                if j < k {
                    w = w * keep / eta * ((k - j) as f64) / ((j + 1) as f64);
                }
            }
        }
        let pairs: Vec<(u32, f64)> = probs
            .into_iter()
            .enumerate()
            .filter(|&(_, p)| p > 0.0)
            .map(|(k, p)| (k as u32, p))
            .collect();
        // Renormalize away accumulated rounding before validation.
        let total: f64 = pairs.iter().map(|&(_, p)| p).sum();
        OffspringDistribution::new(pairs.into_iter().map(|(k, p)| (k, p / total)))
    }
}

pub type VertexId = u32;

#[derive(Debug, Clone)]
struct Vertex {
    parent: Option<VertexId>,
    height: u32,
    stream: RngStream,
    /// (first child id, count); None until expanded.
    children: Option<(u32, u32)>,
}

/// A rooted tree with deterministic lazy expansion.
#[derive(Debug, Clone)]
pub struct RootedTree {
    nu: OffspringDistribution,
    root_stream: RngStream,
    /// Vertex-percolation layers (removal probability, salt); applied to
    /// every non-root vertex independently at expansion time.
    percolation: Vec<(f64, u64)>,
    max_height: Option<u32>,
    vertices: Vec<Vertex>,
}

/// Substream index reserved for a vertex's own offspring draw; children
/// take indices 1.. so the two never collide.
const OFFSPRING_DRAW: u64 = 0;

impl RootedTree {
    /// Unbounded lazy Galton-Watson tree.
    pub fn galton_watson(nu: OffspringDistribution, seed: u64) -> Self {
        let root_stream = RngStream::from_seed(seed);
        RootedTree {
            nu,
            root_stream,
            percolation: Vec::new(),
            max_height: None,
            vertices: vec![Vertex {
                parent: None,
                height: 0,
                stream: root_stream,
                children: None,
            }],
        }
    }

    /// Galton-Watson tree eagerly expanded to `depth` and truncated there.
    pub fn generate_gw(nu: OffspringDistribution, depth: u32, seed: u64) -> Self {
        let mut tree = RootedTree::galton_watson(nu, seed);
        tree.max_height = Some(depth);
        tree.expand_to_depth(depth);
        tree
    }

    /// Regular `arity`-ary tree (lazy, unbounded).
    pub fn regular(arity: u32, seed: u64) -> Self {
        RootedTree::galton_watson(OffspringDistribution::deterministic(arity), seed)
    }

    /// The half-line: every vertex has exactly one child.
    pub fn path(seed: u64) -> Self {
        RootedTree::regular(1, seed)
    }

    pub fn root(&self) -> VertexId {
        0
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn offspring(&self) -> &OffspringDistribution {
        &self.nu
    }

    pub fn max_height(&self) -> Option<u32> {
        self.max_height
    }

    pub fn height(&self, v: VertexId) -> u32 {
        self.vertices[v as usize].height
    }

    pub fn parent(&self, v: VertexId) -> Option<VertexId> {
        self.vertices[v as usize].parent
    }

    /// Children ids if this vertex has been expanded.
    pub fn expanded_children(&self, v: VertexId) -> Option<std::ops::Range<u32>> {
        self.vertices[v as usize]
            .children
            .map(|(start, n)| start..start + n)
    }

    /// Children ids, expanding the vertex on first access. Deterministic:
    /// the offspring count comes from the vertex's own substream and each
    /// child inherits a path-derived substream, so any interleaving of
    /// expansions yields the same tree.
    pub fn children(&mut self, v: VertexId) -> std::ops::Range<u32> {
        if let Some((start, n)) = self.vertices[v as usize].children {
            return start..start + n;
        }
        let vertex = self.vertices[v as usize].clone();
        let at_cap = self
            .max_height
            .is_some_and(|cap| vertex.height >= cap);
        let count = if at_cap {
            0
        } else {
            self.nu
                .sample(&mut vertex.stream.child(OFFSPRING_DRAW).rng())
        };
        let start = self.vertices.len() as u32;
        let mut kept = 0u32;
        for i in 0..count {
            let child_stream = vertex.stream.child(1 + i as u64);
            let removed = self.percolation.iter().any(|&(eta, salt)| {
                let coin: f64 = child_stream.fold(salt).rng().random();
                coin < eta
            });
            if removed {
                continue;
            }
            self.vertices.push(Vertex {
                parent: Some(v),
                height: vertex.height + 1,
                stream: child_stream,
                children: None,
            });
            kept += 1;
        }
        self.vertices[v as usize].children = Some((start, kept));
        start..start + kept
    }

    /// Materialize every vertex of height <= `depth`.
    pub fn expand_to_depth(&mut self, depth: u32) {
        let mut frontier = vec![self.root()];
        for _ in 0..depth {
            let mut next = Vec::new();
            for v in frontier {
                next.extend(self.children(v));
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
    }

    /// Number of vertices at height `n` (expands as needed).
    pub fn generation_size(&mut self, n: u32) -> u64 {
        self.expand_to_depth(n);
        self.vertices.iter().filter(|v| v.height == n).count() as u64
    }

    /// Restriction to heights <= `n`. Returned tree re-expands lazily and,
    /// because expansion is deterministic, coincides with this tree on the
    /// shared heights.
    #[must_use]
    pub fn truncate(&self, n: u32) -> RootedTree {
        let max_height = Some(self.max_height.map_or(n, |m| m.min(n)));
        RootedTree {
            nu: self.nu.clone(),
            root_stream: self.root_stream,
            percolation: self.percolation.clone(),
            max_height,
            vertices: vec![Vertex {
                parent: None,
                height: 0,
                stream: self.root_stream,
                children: None,
            }],
        }
    }

    /// Vertex percolation: every non-root vertex is removed, together
    /// with its whole subtree, independently with probability `eta`. The
    /// root always stays. Layers stack; use distinct seeds for
    /// independent layers.
    pub fn percolate(&self, eta: f64, seed: u64) -> Result<RootedTree> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::domain("removal probability must lie in [0, 1]"));
        }
        let mut percolation = self.percolation.clone();
        percolation.push((eta, seed));
        Ok(RootedTree {
            nu: self.nu.clone(),
            root_stream: self.root_stream,
            percolation,
            max_height: self.max_height,
            vertices: vec![Vertex {
                parent: None,
                height: 0,
                stream: self.root_stream,
                children: None,
            }],
        })
    }

    /// Canonical text serialization of the expanded portion: one line per
    /// vertex, "id parent_id height", ids assigned in breadth-first order
    /// (the root's parent is written as its own id). Independent of the
    /// order in which the tree was expanded.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut order: Vec<VertexId> = vec![self.root()];
        let mut canonical = vec![u32::MAX; self.vertices.len()];
        canonical[0] = 0;
        let mut head = 0usize;
        while head < order.len() {
            let v = order[head];
            if let Some(range) = self.expanded_children(v) {
                for child in range {
                    canonical[child as usize] = order.len() as u32;
                    order.push(child);
                }
            }
            head += 1;
        }
        for (new_id, &v) in order.iter().enumerate() {
            let vtx = &self.vertices[v as usize];
            let parent = vtx
                .parent
                .map_or(new_id as u32, |p| canonical[p as usize]);
            writeln!(out, "{new_id} {parent} {}", vtx.height).expect("string write");
        }
        out
    }

    /// Write the canonical serialization to any sink.
    pub fn write_text<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_text().as_bytes())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn binary() -> OffspringDistribution {
        OffspringDistribution::deterministic(2)
    }

    #[test]
    fn complete_binary_tree_counts() {
        let tree = RootedTree::generate_gw(binary(), 3, 1);
        assert_eq!(tree.len(), 15);
        let mut t2 = tree.truncate(2);
        t2.expand_to_depth(10);
        assert_eq!(t2.len(), 7);
        let mut t0 = tree.truncate(0);
        t0.expand_to_depth(10);
        assert_eq!(t0.len(), 1);
    }

    #[test]
    fn truncate_beyond_depth_is_identity() {
        let tree = RootedTree::generate_gw(binary(), 3, 9);
        let mut again = tree.truncate(7);
        again.expand_to_depth(3);
        assert_eq!(tree.to_text(), again.to_text());
    }

    #[test]
    fn heights_and_parents_are_consistent() {
        let mut tree = RootedTree::generate_gw(
            OffspringDistribution::new([(1, 0.4), (2, 0.35), (3, 0.25)]).unwrap(),
            6,
            5,
        );
        tree.expand_to_depth(6);
        for v in 1..tree.len() as u32 {
            let p = tree.parent(v).expect("non-root has a parent");
            assert_eq!(tree.height(v), tree.height(p) + 1);
        }
        assert!(tree.parent(tree.root()).is_none());
    }

    #[test]
    fn leafless_law_never_generates_leaves() {
        let nu = OffspringDistribution::new([(1, 0.5), (2, 0.5)]).unwrap();
        assert!(nu.is_leafless());
        let mut tree = RootedTree::generate_gw(nu, 8, 77);
        tree.expand_to_depth(8);
        for v in 0..tree.len() as u32 {
            if tree.height(v) < 8 {
                let kids = tree.expanded_children(v).unwrap();
                assert!(!kids.is_empty(), "internal vertex {v} has no children");
            }
        }
    }

    #[test]
    fn generation_growth_matches_mean_offspring() {
        // E[V_n] = b^n; population martingale V_n / b^n has mean 1.
        let nu = OffspringDistribution::new([(1, 0.5), (2, 0.5)]).unwrap();
        let b = nu.mean();
        assert!((b - 1.5).abs() < 1e-12);
        let replicas = 10_000u32;
        let mut sums = [0.0f64; 11];
        for r in 0..replicas {
            let mut tree = RootedTree::generate_gw(nu.clone(), 10, 1_000 + r as u64);
            for (n, sum) in sums.iter_mut().enumerate() {
                *sum += tree.generation_size(n as u32) as f64;
            }
        }
        let v10 = sums[10] / replicas as f64;
        assert!((v10 - b.powi(10)).abs() < 2.0, "{v10} vs {}", b.powi(10));
        for (n, sum) in sums.iter().enumerate() {
            let ratio = sum / replicas as f64 / b.powi(n as i32);
            // 4 standard errors; the martingale's variance grows with n so
            // use the crude bound sd <= 0.6 * b^{-n/2} ... just gate at 5%.
            assert!((ratio - 1.0).abs() < 0.05, "n={n}: {ratio}");
        }
    }

    #[test]
    fn percolation_identity_and_annihilation() {
        let tree = RootedTree::generate_gw(binary(), 4, 3);
        let mut same = tree.percolate(0.0, 999).unwrap();
        same.expand_to_depth(4);
        assert_eq!(tree.to_text(), same.to_text());

        let mut gone = tree.percolate(1.0, 999).unwrap();
        gone.expand_to_depth(4);
        assert_eq!(gone.len(), 1);
    }

    #[test]
    fn percolation_thins_the_first_generation() {
        let eta = 0.25;
        let trials = 100_000u32;
        let mut total = 0u64;
        for r in 0..trials {
            let base = RootedTree::regular(2, r as u64);
            let mut thinned = base.percolate(eta, 424_242).unwrap();
            total += thinned.children(0).len() as u64;
        }
        let mean = total as f64 / trials as f64;
        let expect = 2.0 * (1.0 - eta);
        let se = (2.0 * eta * (1.0 - eta) / trials as f64).sqrt();
        assert!((mean - expect).abs() < 4.0 * se, "{mean} vs {expect}");
    }

    #[test]
    fn percolation_layers_compose() {
        let (eta1, eta2) = (0.2, 0.25);
        let trials = 100_000u32;
        let mut total = 0u64;
        for r in 0..trials {
            let base = RootedTree::regular(2, r as u64);
            let mut twice = base
                .percolate(eta1, 5)
                .unwrap()
                .percolate(eta2, 6)
                .unwrap();
            total += twice.children(0).len() as u64;
        }
        let mean = total as f64 / trials as f64;
        let expect = 2.0 * (1.0 - eta1) * (1.0 - eta2);
        assert!((mean - expect).abs() < 0.02, "{mean} vs {expect}");
    }

    #[test]
    fn expansion_order_does_not_change_the_tree() {
        let nu = OffspringDistribution::new([(1, 0.3), (2, 0.4), (3, 0.3)]).unwrap();
        let mut a = RootedTree::galton_watson(nu.clone(), 11);
        let mut b = RootedTree::galton_watson(nu, 11);
        a.expand_to_depth(5);
        // Expand b in a scrambled depth-first order instead.
        let mut stack = vec![b.root()];
        while let Some(v) = stack.pop() {
            if b.height(v) < 5 {
                let kids: Vec<u32> = b.children(v).collect();
                stack.extend(kids.iter().copied());
            }
        }
        assert_eq!(a.to_text(), b.to_text());
    }

    #[test]
    fn serialization_shape() {
        let tree = RootedTree::generate_gw(binary(), 2, 0);
        let text = tree.to_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 7);
        assert_eq!(lines[0], "0 0 0");
        for line in &lines {
            let parts: Vec<&str> = line.split(' ').collect();
            assert_eq!(parts.len(), 3);
        }
    }

    #[test]
    fn extinction_probabilities() {
        let never = binary().extinction_probability(1e-12);
        assert_eq!(never, 0.0);

        let q = OffspringDistribution::new([(0, 0.25), (2, 0.75)])
            .unwrap()
            .extinction_probability(1e-13);
        assert!((q - 1.0 / 3.0).abs() < 1e-9, "{q}");

        let sub = OffspringDistribution::new([(0, 0.5), (1, 0.5)])
            .unwrap()
            .extinction_probability(1e-12);
        assert!((sub - 1.0).abs() < 1e-9);

        let critical = OffspringDistribution::new([(0, 0.25), (1, 0.5), (2, 0.25)])
            .unwrap()
            .extinction_probability(1e-12);
        assert!((critical - 1.0).abs() < 1e-3, "{critical}");
    }

    #[test]
    fn thinning_mean_and_mass() {
        let thinned = binary().thin(0.25).unwrap();
        assert!((thinned.mean() - 1.5).abs() < 1e-12);
        assert!((thinned.probability(0) - 0.0625).abs() < 1e-12);
        assert!((thinned.probability(1) - 0.375).abs() < 1e-12);
        assert!((thinned.probability(2) - 0.5625).abs() < 1e-12);
        assert!(binary().thin(1.5).is_err());
    }

    #[test]
    fn rejects_bad_laws() {
        assert!(OffspringDistribution::new([(0, 0.5), (2, 0.6)]).is_err());
        assert!(OffspringDistribution::new([(1, 0.5), (1, 0.5)]).is_err());
        assert!(OffspringDistribution::new(std::iter::empty()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn extinction_is_a_fixed_point(
            p0 in 0.0f64..0.6,
            p2 in 0.0f64..0.9,
        ) {
            prop_assume!(p0 + p2 < 1.0);
            let p1 = 1.0 - p0 - p2;
            prop_assume!(p1 >= 0.0);
            let pairs: Vec<(u32, f64)> = [(0u32, p0), (1, p1), (2, p2)]
                .into_iter()
                .filter(|&(_, p)| p > 1e-9)
                .collect();
            let total: f64 = pairs.iter().map(|&(_, p)| p).sum();
            let nu = OffspringDistribution::new(
                pairs.into_iter().map(|(k, p)| (k, p / total)),
            ).unwrap();
            let q = nu.extinction_probability(1e-12);
            prop_assert!((0.0..=1.0).contains(&q));
            prop_assert!((nu.generating_function(q) - q).abs() < 1e-6);
            if nu.mean() <= 1.0 {
                prop_assert!(q > 1.0 - 2e-2);
            }
        }

        #[test]
        fn thinning_scales_the_mean(eta in 0.0f64..1.0) {
            let nu = OffspringDistribution::new([(0, 0.2), (1, 0.3), (3, 0.5)]).unwrap();
            let thinned = nu.thin(eta).unwrap();
            prop_assert!((thinned.mean() - nu.mean() * (1.0 - eta)).abs() < 1e-9);
        }
    }
}
