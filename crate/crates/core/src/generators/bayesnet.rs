use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::discretise::Discretiser;
use super::draw_index;
use crate::error::Result;
use crate::tabular::{ColumnData, Dag, Dataset, TableSchema};

/// Conditional probability table of one node.
#[derive(Debug, Clone)]
struct Cpd {
    parents: Vec<usize>,
    parent_cards: Vec<usize>,
    card: usize,
    /// Row-major `configurations x card`; rows of unseen configurations are
    /// empty and fall back to `marginal`.
    table: Vec<Vec<f64>>,
    marginal: Vec<f64>,
}

impl Cpd {
    fn configuration(&self, codes: &[Vec<u32>], row: usize) -> usize {
        self.parents
            .iter()
            .zip(&self.parent_cards)
            .fold(0, |acc, (&p, &card)| acc * card + codes[p][row] as usize)
    }

    fn distribution(&self, config: usize) -> &[f64] {
        let row = &self.table[config];
        if row.is_empty() {
            &self.marginal
        } else {
            row
        }
    }
}

fn smoothed(counts: &[f64], epsilon: f64) -> Vec<f64> {
    let total: f64 = counts.iter().sum::<f64>() + epsilon * counts.len() as f64;
    counts.iter().map(|c| (c + epsilon) / total).collect()
}

/// Discrete Bayesian network with maximum-likelihood CPDs.
#[derive(Debug, Clone)]
pub(crate) struct BayesNetModel {
    discretiser: Discretiser,
    order: Vec<usize>,
    cpds: Vec<Cpd>,
}

impl BayesNetModel {
    pub(crate) fn fit(data: &Dataset, dag: &Dag, bins: usize, epsilon: f64) -> Result<Self> {
        let order = dag.topological_indices()?;
        let discretiser = Discretiser::fit(data, bins);
        let codes = discretiser.encode(data);
        let rows = data.n_rows();
        let cpds = (0..data.n_cols())
            .map(|node| {
                let parents = dag.parents(node).to_vec();
                let parent_cards: Vec<usize> =
                    parents.iter().map(|&p| discretiser.cardinality(p)).collect();
                let card = discretiser.cardinality(node);
                let configs: usize = parent_cards.iter().product();
                let mut counts = vec![vec![0.0; card]; configs];
                let mut marginal = vec![0.0; card];
                let mut cpd = Cpd {
                    parents,
                    parent_cards,
                    card,
                    table: Vec::new(),
                    marginal: Vec::new(),
                };
                for row in 0..rows {
                    let code = codes[node][row] as usize;
                    counts[cpd.configuration(&codes, row)][code] += 1.0;
                    marginal[code] += 1.0;
                }
                cpd.table = counts
                    .iter()
                    .map(|c| {
                        if c.iter().sum::<f64>() > 0.0 {
                            smoothed(c, epsilon)
                        } else {
                            Vec::new()
                        }
                    })
                    .collect();
                cpd.marginal = smoothed(&marginal, epsilon);
                cpd
            })
            .collect();
        Ok(BayesNetModel {
            discretiser,
            order,
            cpds,
        })
    }

    pub(crate) fn sample(
        &self,
        schema: &Arc<TableSchema>,
        m: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Dataset> {
        let p = self.cpds.len();
        let mut codes = vec![vec![0u32; m]; p];
        for row in 0..m {
            for &node in &self.order {
                let cpd = &self.cpds[node];
                let config = cpd.configuration(&codes, row);
                let u: f64 = rng.random();
                let code = draw_index(cpd.distribution(config), u);
                debug_assert!(code < cpd.card);
                codes[node][row] = code as u32;
            }
        }
        let columns = codes
            .into_iter()
            .enumerate()
            .map(|(j, col)| {
                if schema.column(j).kind.is_continuous() {
                    ColumnData::Continuous(
                        col.iter()
                            .map(|&c| self.discretiser.rehydrate(j, c, rng))
                            .collect(),
                    )
                } else {
                    ColumnData::Categorical(col)
                }
            })
            .collect();
        Dataset::new(Arc::clone(schema), columns)
    }
}

/// Empirical mutual information (nats) between two code vectors.
pub fn mutual_information(x: &[u32], x_card: usize, y: &[u32], y_card: usize) -> f64 {
    let n = x.len();
    if n == 0 {
        return 0.0;
    }
    let mut joint = vec![0usize; x_card * y_card];
    let mut px = vec![0usize; x_card];
    let mut py = vec![0usize; y_card];
    for (&a, &b) in x.iter().zip(y) {
        joint[a as usize * y_card + b as usize] += 1;
        px[a as usize] += 1;
        py[b as usize] += 1;
    }
    let nf = n as f64;
    let mut mi = 0.0;
    for a in 0..x_card {
        for b in 0..y_card {
            let c = joint[a * y_card + b];
            if c > 0 {
                let c = c as f64;
                mi += c / nf * (c * nf / (px[a] as f64 * py[b] as f64)).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Symmetric matrix of pairwise mutual informations on discretised columns.
pub fn pairwise_mutual_information(data: &Dataset, bins: usize) -> Vec<Vec<f64>> {
    let disc = Discretiser::fit(data, bins);
    let codes = disc.encode(data);
    let p = data.n_cols();
    let mut mi = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in i + 1..p {
            let v = mutual_information(&codes[i], disc.cardinality(i), &codes[j], disc.cardinality(j));
            mi[i][j] = v;
            mi[j][i] = v;
        }
    }
    mi
}

/// Total mutual information of an undirected edge set.
pub fn spanning_tree_weight(mi: &[Vec<f64>], edges: &[(usize, usize)]) -> f64 {
    edges.iter().map(|&(a, b)| mi[a][b]).sum()
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Maximum-mutual-information spanning tree (Kruskal), rooted at the first
/// column with edges directed away from it.
///
/// Candidate edges are considered by decreasing MI; equal MI values are
/// taken in lexicographic `(i, j)` order of schema positions.
pub fn chow_liu_tree(data: &Dataset, bins: usize) -> Result<Dag> {
    let schema = data.schema();
    let p = data.n_cols();
    let mi = pairwise_mutual_information(data, bins);
    let mut candidates: Vec<(usize, usize)> =
        (0..p).flat_map(|i| (i + 1..p).map(move |j| (i, j))).collect();
    candidates.sort_by(|&(a, b), &(c, d)| mi[c][d].total_cmp(&mi[a][b]).then((a, b).cmp(&(c, d))));
    let mut uf: Vec<usize> = (0..p).collect();
    let mut adjacency = vec![Vec::new(); p];
    let mut chosen = 0;
    for (a, b) in candidates {
        let (ra, rb) = (find(&mut uf, a), find(&mut uf, b));
        if ra != rb {
            uf[ra] = rb;
            adjacency[a].push(b);
            adjacency[b].push(a);
            chosen += 1;
            if chosen + 1 == p {
                break;
            }
        }
    }
    let mut dag = Dag::empty(schema);
    let mut visited = vec![false; p];
    let mut queue = std::collections::VecDeque::from([0usize]);
    visited[0] = true;
    while let Some(u) = queue.pop_front() {
        let mut next = adjacency[u].clone();
        next.sort_unstable();
        for v in next {
            if !visited[v] {
                visited[v] = true;
                dag.add_edge(u, v)?;
                queue.push_back(v);
            }
        }
    }
    Ok(dag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{self, DgpParams};

    #[test]
    fn independence_has_zero_information() {
        let x = [0, 0, 1, 1];
        let y = [0, 1, 0, 1];
        assert!(mutual_information(&x, 2, &y, 2).abs() < 1e-15);
        let mi = mutual_information(&x, 2, &x, 2);
        assert!((mi - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn chow_liu_is_a_spanning_tree() {
        let data = dgp::generate(&DgpParams::default(), 2000, 4).unwrap();
        let dag = chow_liu_tree(&data, 10).unwrap();
        let edges = dag.edges();
        assert_eq!(edges.len(), 4);
        assert_eq!(dag.topological_indices().unwrap()[0], 0);
        for node in 1..5 {
            assert_eq!(dag.parents(node).len(), 1);
        }
        // The tree is undirected up to the choice of root.
        let names = dag.edge_names();
        assert!(
            names.iter().any(|(a, b)| {
                (a == "stage" && b == "biomarker") || (a == "biomarker" && b == "stage")
            }),
            "{names:?}"
        );
    }

    #[test]
    fn two_columns_give_one_edge() {
        let data = dgp::generate(&DgpParams::default(), 200, 4).unwrap();
        let pair = data.select_columns(&["age", "therapy"]).unwrap();
        let dag = chow_liu_tree(&pair, 10).unwrap();
        assert_eq!(dag.edge_names(), vec![("age".to_string(), "therapy".to_string())]);
    }

    #[test]
    fn unseen_parent_configuration_uses_marginal() {
        let data = dgp::generate(&DgpParams::default(), 30, 8).unwrap();
        let model = BayesNetModel::fit(&data, &dgp::dag(), 10, 0.0).unwrap();
        let death = &model.cpds[4];
        let empty = death.table.iter().position(Vec::is_empty).expect("30 rows leave gaps");
        assert_eq!(death.distribution(empty), death.marginal.as_slice());
        let total: f64 = death.marginal.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
