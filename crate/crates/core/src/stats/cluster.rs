use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use super::{DistanceMatrix, Result, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Linkage {
    #[default]
    Average,
    Complete,
    Single,
}

impl FromStr for Linkage {
    type Err = StatsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" => Ok(Linkage::Average),
            "complete" => Ok(Linkage::Complete),
            "single" => Ok(Linkage::Single),
            other => Err(StatsError::Invalid(format!("unknown linkage '{other}'"))),
        }
    }
}

impl fmt::Display for Linkage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Linkage::Average => "average",
            Linkage::Complete => "complete",
            Linkage::Single => "single",
        })
    }
}

/// One agglomeration step. Leaves are nodes `0..n`, merge `i` creates node `n + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTree {
    pub labels: Vec<String>,
    pub merges: Vec<Merge>,
    pub linkage: Linkage,
}

struct Cluster {
    node: usize,
    size: usize,
    key: String,
}

/// Agglomerative clustering with Lance-Williams updates, then a cut into `k`
/// clusters. Equal distances are resolved by the lexicographically smallest
/// leaf label of each cluster. Assignments are numbered from 1 in order of
/// each cluster's first leaf.
pub fn hierarchical_cluster(d: &DistanceMatrix, linkage: Linkage, k: usize) -> Result<(ClusterTree, Vec<usize>)> {
    let n = d.len();
    if n < 2 {
        return Err(StatsError::TooSmall { what: "leaves", needed: 2, got: n });
    }
    if k == 0 || k > n {
        return Err(StatsError::InvalidK { k, n });
    }
    let mut dist: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| d.get(i, j)).collect()).collect();
    let mut active: Vec<Option<Cluster>> = d
        .labels
        .iter()
        .enumerate()
        .map(|(i, l)| Some(Cluster { node: i, size: 1, key: l.clone() }))
        .collect();
    let mut merges = Vec::with_capacity(n - 1);

    for step in 0..n - 1 {
        let mut best: Option<(usize, usize)> = None;
        for i in 0..n {
            let Some(ci) = &active[i] else { continue };
            for j in i + 1..n {
                let Some(cj) = &active[j] else { continue };
                let better = match best {
                    None => true,
                    Some((bi, bj)) => {
                        let (bki, bkj) = (&active[bi].as_ref().unwrap().key, &active[bj].as_ref().unwrap().key);
                        let cur = ordered(&ci.key, &cj.key);
                        let old = ordered(bki, bkj);
                        dist[i][j].total_cmp(&dist[bi][bj]).then_with(|| cur.cmp(&old)) == Ordering::Less
                    }
                };
                if better {
                    best = Some((i, j));
                }
            }
        }
        let (i, j) = best.expect("at least two active clusters");
        let ci = active[i].take().unwrap();
        let cj = active[j].take().unwrap();
        let height = dist[i][j];
        let (first, second) = if ci.key <= cj.key { (&ci, &cj) } else { (&cj, &ci) };
        merges.push(Merge {
            a: first.node,
            b: second.node,
            height,
            size: ci.size + cj.size,
        });
        for m in 0..n {
            if m == i || m == j || active[m].is_none() {
                continue;
            }
            let (ni, nj) = (ci.size as f64, cj.size as f64);
            let v = match linkage {
                Linkage::Average => (ni * dist[i][m] + nj * dist[j][m]) / (ni + nj),
                Linkage::Complete => dist[i][m].max(dist[j][m]),
                Linkage::Single => dist[i][m].min(dist[j][m]),
            };
            dist[i][m] = v;
            dist[m][i] = v;
        }
        active[i] = Some(Cluster {
            node: n + step,
            size: ci.size + cj.size,
            key: first.key.clone(),
        });
    }

    let tree = ClusterTree {
        labels: d.labels.clone(),
        merges,
        linkage,
    };
    let assignments = tree.cut(k);
    Ok((tree, assignments))
}

fn ordered<'a>(a: &'a str, b: &'a str) -> (&'a str, &'a str) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl ClusterTree {
    pub fn n_leaves(&self) -> usize {
        self.labels.len()
    }

    /// Cluster number (from 1) of each leaf after undoing the last `k − 1` merges.
    pub fn cut(&self, k: usize) -> Vec<usize> {
        let n = self.n_leaves();
        let mut parent: Vec<usize> = (0..2 * n - 1).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for (i, m) in self.merges.iter().take(n - k).enumerate() {
            let node = n + i;
            let ra = find(&mut parent, m.a);
            let rb = find(&mut parent, m.b);
            parent[ra] = node;
            parent[rb] = node;
        }
        let mut ids: Vec<usize> = Vec::new();
        (0..n)
            .map(|leaf| {
                let root = find(&mut parent, leaf);
                match ids.iter().position(|r| *r == root) {
                    Some(p) => p + 1,
                    None => {
                        ids.push(root);
                        ids.len()
                    }
                }
            })
            .collect()
    }

    /// Newick text with branch lengths equal to height differences.
    pub fn to_newick(&self) -> String {
        let n = self.n_leaves();
        let height = |node: usize| if node < n { 0.0 } else { self.merges[node - n].height };
        fn quote(label: &str) -> String {
            if label.chars().any(|c| " ()[]':;,".contains(c)) {
                format!("'{}'", label.replace('\'', "''"))
            } else {
                label.to_string()
            }
        }
        fn render(tree: &ClusterTree, node: usize, height: &dyn Fn(usize) -> f64, out: &mut String) {
            let n = tree.n_leaves();
            if node < n {
                out.push_str(&quote(&tree.labels[node]));
                return;
            }
            let m = &tree.merges[node - n];
            out.push('(');
            for (k, child) in [m.a, m.b].into_iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                render(tree, child, height, out);
                out.push_str(&format!(":{:.6}", m.height - height(child)));
            }
            out.push(')');
        }
        let mut out = String::new();
        render(self, 2 * n - 2, &height, &mut out);
        out.push(';');
        out
    }
}
