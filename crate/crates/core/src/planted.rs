//! Synthetic implicit feedback with a known block structure: users and items
//! are split into contiguous clusters and users interact only (or mostly)
//! with items of their own cluster.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::InteractionDataset;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub n_clusters: usize,
    /// In-cluster items per user (capped at the cluster size).
    pub per_user: usize,
    /// Extra interactions per user drawn from other clusters.
    pub cross_per_user: usize,
    pub seed: u64,
}

impl PlantedSpec {
    /// Two clusters, every user holding all ten items of its cluster.
    pub fn small() -> Self {
        PlantedSpec {
            n_users: 20,
            n_items: 20,
            n_clusters: 2,
            per_user: 10,
            cross_per_user: 0,
            seed: 0,
        }
    }
}

/// A generated dataset plus the cluster of every user and item.
#[derive(Debug, Clone)]
pub struct Planted {
    pub dataset: InteractionDataset,
    pub user_cluster: Vec<usize>,
    pub item_cluster: Vec<usize>,
}

fn cluster_of(index: usize, count: usize, clusters: usize) -> usize {
    index * clusters / count
}

pub fn generate(spec: &PlantedSpec) -> Planted {
    assert!(spec.n_clusters >= 1 && spec.n_clusters <= spec.n_items.min(spec.n_users));
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let members: Vec<Vec<usize>> = (0..spec.n_clusters)
        .map(|c| (0..spec.n_items).filter(|&i| cluster_of(i, spec.n_items, spec.n_clusters) == c).collect())
        .collect();
    let mut pairs = Vec::new();
    for u in 0..spec.n_users {
        let c = cluster_of(u, spec.n_users, spec.n_clusters);
        let own = &members[c];
        let mut chosen: Vec<usize> = if spec.per_user >= own.len() {
            own.clone()
        } else {
            index::sample(&mut rng, own.len(), spec.per_user).into_iter().map(|k| own[k]).collect()
        };
        let others: Vec<usize> = (0..spec.n_items).filter(|i| !own.contains(i)).collect();
        if !others.is_empty() {
            for _ in 0..spec.cross_per_user {
                chosen.push(others[rng.random_range(0..others.len())]);
            }
        }
        chosen.sort_unstable();
        chosen.dedup();
        pairs.extend(chosen.into_iter().map(|i| (format!("u{u}"), format!("i{i}"))));
    }
    let dataset = InteractionDataset::from_pairs(&pairs);
    let parse = |s: &str| s[1..].parse::<usize>().expect("generated id");
    let user_cluster = dataset
        .user_ids
        .iter()
        .map(|s| cluster_of(parse(s), spec.n_users, spec.n_clusters))
        .collect();
    let item_cluster = dataset
        .item_ids
        .iter()
        .map(|s| cluster_of(parse(s), spec.n_items, spec.n_clusters))
        .collect();
    Planted {
        dataset,
        user_cluster,
        item_cluster,
    }
}

impl Planted {
    /// Cluster names as single-element label lists, by internal item index.
    pub fn item_labels(&self) -> Vec<Vec<String>> {
        self.item_cluster.iter().map(|c| vec![format!("cluster{c}")]).collect()
    }

    /// `<item id>\t<label>` lines, the label-file format read by the data module.
    pub fn labels_file(&self) -> String {
        self.dataset
            .item_ids
            .iter()
            .zip(&self.item_cluster)
            .map(|(id, c)| format!("{id}\tcluster{c}\n"))
            .collect()
    }
}
