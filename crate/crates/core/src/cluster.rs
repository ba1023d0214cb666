//! COP-Kmeans (k-means under must-link / cannot-link constraints) and its
//! use as a PU baseline: every labeled positive is must-linked, k = 2, and
//! the cluster holding the positives is the predicted positive class.
//!
//! Must-link components are collapsed into weighted pseudo-points at their
//! mean, which leaves the k-means objective unchanged up to a constant.
//! Points are sparse; centroids are dense.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::Document;
use crate::error::{Error, Result};

pub type SparseVec = Vec<(u32, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    pub dim: usize,
    pub rows: Vec<SparseVec>,
}

impl Points {
    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        Points {
            dim,
            rows: rows
                .iter()
                .map(|r| {
                    r.iter()
                        .enumerate()
                        .filter(|(_, v)| **v != 0.0)
                        .map(|(i, &v)| (i as u32, v))
                        .collect()
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dense(&self, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for &(j, x) in &self.rows[i] {
            v[j as usize] = x;
        }
        v
    }
}

fn sq_dist(x: &SparseVec, c: &[f64], c_norm: f64) -> f64 {
    let mut d = c_norm;
    for &(j, v) in x {
        let cj = c[j as usize];
        d += v * v - 2.0 * v * cj;
    }
    d.max(0.0)
}

fn norm2(c: &[f64]) -> f64 {
    c.iter().map(|x| x * x).sum()
}

/// L2-normalized tf-idf vectors over the documents' own vocabulary, with
/// smoothed idf `ln((1+N)/(1+df)) + 1`.
pub fn embed_tfidf(documents: &[&Document]) -> Result<Points> {
    if documents.is_empty() {
        return Err(Error::InvalidInput("no documents to embed".into()));
    }
    let mut ids: HashMap<&str, u32> = HashMap::new();
    let mut df: Vec<f64> = Vec::new();
    let mut counts: Vec<HashMap<u32, f64>> = Vec::with_capacity(documents.len());
    let mut sorted_terms: BTreeSet<&str> = BTreeSet::new();
    for doc in documents {
        for t in doc.title_tokens.iter().chain(&doc.abstract_tokens) {
            sorted_terms.insert(t);
        }
    }
    for t in &sorted_terms {
        let id = ids.len() as u32;
        ids.insert(t, id);
        df.push(0.0);
    }
    for doc in documents {
        let mut c: HashMap<u32, f64> = HashMap::new();
        for t in doc.title_tokens.iter().chain(&doc.abstract_tokens) {
            *c.entry(ids[t.as_str()]).or_default() += 1.0;
        }
        for &id in c.keys() {
            df[id as usize] += 1.0;
        }
        counts.push(c);
    }
    if ids.is_empty() {
        return Err(Error::InvalidInput("every document is empty".into()));
    }
    let n = documents.len() as f64;
    let rows = counts
        .into_iter()
        .map(|c| {
            let mut row: SparseVec = c
                .into_iter()
                .map(|(id, tf)| (id, tf * (((1.0 + n) / (1.0 + df[id as usize])).ln() + 1.0)))
                .collect();
            row.sort_by_key(|e| e.0);
            let norm = row.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
            if norm > 0.0 {
                for e in &mut row {
                    e.1 /= norm;
                }
            }
            row
        })
        .collect();
    Ok(Points {
        dim: ids.len(),
        rows,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConstraintSet {
    pub must_link: Vec<(usize, usize)>,
    pub cannot_link: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub objective: f64,
    /// Objective after each accepted iteration, starting with the initial one.
    pub history: Vec<f64>,
    pub iterations: usize,
    /// A later assignment pass found no constraint-respecting cluster for
    /// some point; the last valid assignment was kept.
    pub stalled: bool,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Must-link components and the cannot-link graph between them.
struct Groups {
    members: Vec<Vec<usize>>,
    of_point: Vec<usize>,
    means: Vec<Vec<f64>>,
    cannot: Vec<BTreeSet<usize>>,
}

impl Groups {
    fn new(points: &Points, c: &ConstraintSet) -> Result<Self> {
        let n = points.len();
        let check = |a: usize, b: usize| {
            if a >= n || b >= n {
                Err(Error::InvalidInput(format!("constraint ({a}, {b}) out of range")))
            } else {
                Ok(())
            }
        };
        let mut parent: Vec<usize> = (0..n).collect();
        for &(a, b) in &c.must_link {
            check(a, b)?;
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            parent[ra.max(rb)] = ra.min(rb);
        }
        let mut root_group: HashMap<usize, usize> = HashMap::new();
        let mut members: Vec<Vec<usize>> = Vec::new();
        let mut of_point = vec![0; n];
        for (i, slot) in of_point.iter_mut().enumerate() {
            let r = find(&mut parent, i);
            let g = *root_group.entry(r).or_insert_with(|| {
                members.push(Vec::new());
                members.len() - 1
            });
            members[g].push(i);
            *slot = g;
        }
        let mut cannot = vec![BTreeSet::new(); members.len()];
        for &(a, b) in &c.cannot_link {
            check(a, b)?;
            let (ga, gb) = (of_point[a], of_point[b]);
            if ga == gb {
                return Err(Error::Infeasible(format!(
                    "points {a} and {b} are must-linked and cannot-linked"
                )));
            }
            cannot[ga].insert(gb);
            cannot[gb].insert(ga);
        }
        let means: Vec<Vec<f64>> = members
            .iter()
            .map(|m| {
                let mut v = vec![0.0; points.dim];
                for &i in m {
                    for &(j, x) in &points.rows[i] {
                        v[j as usize] += x;
                    }
                }
                let w = m.len() as f64;
                v.iter_mut().for_each(|x| *x /= w);
                v
            })
            .collect();
        Ok(Groups {
            members,
            of_point,
            means,
            cannot,
        })
    }

    fn len(&self) -> usize {
        self.members.len()
    }

    fn weight(&self, g: usize) -> f64 {
        self.members[g].len() as f64
    }

    /// Weighted squared distance from group mean to centroid.
    fn cost(&self, g: usize, c: &[f64]) -> f64 {
        let m = &self.means[g];
        let d: f64 = m.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
        self.weight(g) * d
    }
}

fn centroids_of(groups: &Groups, assign: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut w = vec![0.0; k];
    for (g, &c) in assign.iter().enumerate() {
        let wg = groups.weight(g);
        w[c] += wg;
        for (s, m) in sums[c].iter_mut().zip(&groups.means[g]) {
            *s += wg * m;
        }
    }
    for (s, &wc) in sums.iter_mut().zip(&w) {
        if wc > 0.0 {
            s.iter_mut().for_each(|x| *x /= wc);
        }
    }
    sums
}

fn group_objective(groups: &Groups, assign: &[usize], centroids: &[Vec<f64>]) -> f64 {
    assign
        .iter()
        .enumerate()
        .map(|(g, &c)| groups.cost(g, &centroids[c]))
        .sum()
}

/// Greedy constrained assignment in group order. `None` when some group
/// has no cluster free of cannot-link partners.
fn assign_pass(groups: &Groups, centroids: &[Vec<f64>]) -> std::result::Result<Vec<usize>, usize> {
    let k = centroids.len();
    let mut assign: Vec<Option<usize>> = vec![None; groups.len()];
    for g in 0..groups.len() {
        let mut order: Vec<(f64, usize)> = (0..k).map(|c| (groups.cost(g, &centroids[c]), c)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let chosen = order
            .iter()
            .map(|&(_, c)| c)
            .find(|&c| groups.cannot[g].iter().all(|&h| assign[h] != Some(c)));
        match chosen {
            Some(c) => assign[g] = Some(c),
            None => return Err(g),
        }
    }
    Ok(assign.into_iter().map(|a| a.expect("assigned")).collect())
}

/// Moves the farthest movable group into each empty cluster.
fn repair_empty(groups: &Groups, assign: &mut [usize], centroids: &[Vec<f64>], k: usize) {
    for empty in 0..k {
        let mut sizes = vec![0usize; k];
        assign.iter().for_each(|&c| sizes[c] += 1);
        if sizes[empty] > 0 {
            continue;
        }
        let candidate = (0..groups.len())
            .filter(|&g| sizes[assign[g]] > 1)
            .filter(|&g| groups.cannot[g].iter().all(|&h| assign[h] != empty))
            .max_by(|&a, &b| {
                let da = groups.cost(a, &centroids[assign[a]]);
                let db = groups.cost(b, &centroids[assign[b]]);
                da.total_cmp(&db).then(b.cmp(&a))
            });
        if let Some(g) = candidate {
            assign[g] = empty;
        }
    }
}

fn point_objective(points: &Points, labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    let norms: Vec<f64> = centroids.iter().map(|c| norm2(c)).collect();
    labels
        .iter()
        .enumerate()
        .map(|(i, &c)| sq_dist(&points.rows[i], &centroids[c], norms[c]))
        .sum()
}

fn run(
    points: &Points,
    groups: &Groups,
    k: usize,
    mut assign: Vec<usize>,
    max_iters: usize,
) -> ClusterAssignment {
    let dim = points.dim;
    let mut centroids = centroids_of(groups, &assign, k, dim);
    let mut current = group_objective(groups, &assign, &centroids);
    let mut history = vec![current];
    let mut iterations = 0;
    let mut stalled = false;
    while iterations < max_iters {
        let mut next = match assign_pass(groups, &centroids) {
            Ok(a) => a,
            Err(_) => {
                stalled = true;
                break;
            }
        };
        repair_empty(groups, &mut next, &centroids, k);
        // Accept only strict improvement at the current centroids; the
        // centroid update below can then only lower the objective further.
        if group_objective(groups, &next, &centroids) >= current {
            break;
        }
        assign = next;
        centroids = centroids_of(groups, &assign, k, dim);
        current = group_objective(groups, &assign, &centroids);
        history.push(current);
        iterations += 1;
    }
    let labels: Vec<usize> = groups.of_point.iter().map(|&g| assign[g]).collect();
    let objective = point_objective(points, &labels, &centroids);
    let within = objective - current;
    ClusterAssignment {
        labels,
        centroids,
        objective,
        history: history.into_iter().map(|h| h + within).collect(),
        iterations,
        stalled,
    }
}

fn kmeanspp(groups: &Groups, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let total: f64 = (0..groups.len()).map(|g| groups.weight(g)).sum();
    let mut pick = rng.random_range(0.0..total);
    let mut first = groups.len() - 1;
    for g in 0..groups.len() {
        pick -= groups.weight(g);
        if pick < 0.0 {
            first = g;
            break;
        }
    }
    let mut centroids = vec![groups.means[first].clone()];
    let mut best: Vec<f64> = (0..groups.len()).map(|g| groups.cost(g, &centroids[0])).collect();
    while centroids.len() < k {
        let sum: f64 = best.iter().sum();
        let chosen = if sum <= 0.0 {
            // All remaining mass sits on existing centroids.
            (0..groups.len()).find(|&g| !centroids.contains(&groups.means[g])).unwrap_or(0)
        } else {
            let mut r = rng.random_range(0.0..sum);
            let mut c = groups.len() - 1;
            for (g, &b) in best.iter().enumerate() {
                r -= b;
                if r < 0.0 {
                    c = g;
                    break;
                }
            }
            c
        };
        let c = groups.means[chosen].clone();
        for (g, b) in best.iter_mut().enumerate() {
            *b = b.min(groups.cost(g, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// COP-Kmeans from k-means++ seeding.
pub fn cop_kmeans(
    points: &Points,
    constraints: &ConstraintSet,
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<ClusterAssignment> {
    let groups = Groups::new(points, constraints)?;
    if k == 0 || k > groups.len() {
        return Err(Error::InvalidInput(format!(
            "k = {k} with {} must-link groups",
            groups.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centroids = kmeanspp(&groups, k, &mut rng);
    let mut assign = assign_pass(&groups, &centroids)
        .map_err(|g| Error::NoValidAssignment(groups.members[g][0]))?;
    repair_empty(&groups, &mut assign, &centroids, k);
    Ok(run(points, &groups, k, assign, max_iters))
}

/// COP-Kmeans continuing from a given constraint-satisfying assignment.
pub fn cop_kmeans_from_assignment(
    points: &Points,
    constraints: &ConstraintSet,
    k: usize,
    labels: &[usize],
    max_iters: usize,
) -> Result<ClusterAssignment> {
    let groups = Groups::new(points, constraints)?;
    if labels.len() != points.len() || labels.iter().any(|&c| c >= k) {
        return Err(Error::InvalidInput("initial labels do not match points and k".into()));
    }
    if !satisfies(labels, constraints) {
        return Err(Error::InvalidInput("initial labels violate the constraints".into()));
    }
    let assign: Vec<usize> = groups.members.iter().map(|m| labels[m[0]]).collect();
    Ok(run(points, &groups, k, assign, max_iters))
}

pub fn satisfies(labels: &[usize], c: &ConstraintSet) -> bool {
    c.must_link.iter().all(|&(a, b)| labels[a] == labels[b])
        && c.cannot_link.iter().all(|&(a, b)| labels[a] != labels[b])
}

/// Positive for every member of the cluster holding the labeled positives.
pub fn pu_from_clusters(assignment: &ClusterAssignment, lp: &[usize]) -> Result<Vec<bool>> {
    let Some(&first) = lp.first() else {
        return Err(Error::InvalidInput("no labeled positives".into()));
    };
    let c = assignment.labels[first];
    if lp.iter().any(|&i| assignment.labels[i] != c) {
        return Err(Error::Invariant("labeled positives span several clusters".into()));
    }
    Ok(assignment.labels.iter().map(|&l| l == c).collect())
}

/// `id<TAB>cluster<TAB>label` with label 1 for predicted positives.
pub fn write_assignment_tsv(
    ids: &[String],
    assignment: &ClusterAssignment,
    positive: &[bool],
    out: &mut impl Write,
) -> std::io::Result<()> {
    writeln!(out, "id\tcluster\tlabel")?;
    for ((id, c), p) in ids.iter().zip(&assignment.labels).zip(positive) {
        writeln!(out, "{id}\t{c}\t{}", u8::from(*p))?;
    }
    Ok(())
}
