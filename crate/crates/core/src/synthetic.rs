//! Seeded planted-community temporal hypergraphs for tests, benchmarks and
//! the demo service.
//!
//! Nodes belong to one of `k` communities and every hyperedge to one of `k`
//! topic groups; the clean incidence at time `t` links a node to every edge
//! of its community's group. Between timesteps a `drift` fraction of nodes
//! moves to another community. The observed implicit slices flip each clean
//! cell with probability `noise`. The explicit hypergraph files every node
//! under its community's category, reassigned to a random category with the
//! same `noise` probability.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypergraph::{EdgeId, IncidenceMatrix, NodeId, Role, TemporalHypergraph};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedConfig {
    pub nodes: usize,
    pub edges: usize,
    pub timesteps: usize,
    pub communities: usize,
    pub noise: f64,
    pub drift: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            nodes: 100,
            edges: 30,
            timesteps: 6,
            communities: 3,
            noise: 0.1,
            drift: 0.02,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlantedDataset {
    pub explicit: TemporalHypergraph,
    /// Noisy observed slices.
    pub implicit: TemporalHypergraph,
    /// Noise-free slices.
    pub truth: Vec<IncidenceMatrix>,
    /// Community of every node at every timestep.
    pub node_community: Vec<Vec<usize>>,
    pub edge_group: Vec<usize>,
}

fn balanced(count: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut v: Vec<usize> = (0..count).map(|i| i % k).collect();
    v.shuffle(rng);
    v
}

pub fn planted(cfg: &PlantedConfig) -> Result<PlantedDataset> {
    if cfg.nodes == 0 || cfg.edges == 0 || cfg.timesteps == 0 || cfg.communities == 0 {
        return Err(Error::domain(
            "planted dataset needs nodes, edges, timesteps and communities",
        ));
    }
    for (name, p) in [("noise", cfg.noise), ("drift", cfg.drift)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::domain(format!("{name} {p} outside [0, 1]")));
        }
    }
    let k = cfg.communities;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let edge_group = balanced(cfg.edges, k, &mut rng);
    let mut community = balanced(cfg.nodes, k, &mut rng);

    let mut node_community = Vec::with_capacity(cfg.timesteps);
    let mut truth = Vec::with_capacity(cfg.timesteps);
    let mut observed = Vec::with_capacity(cfg.timesteps);
    let mut explicit = Vec::with_capacity(cfg.timesteps);
    for t in 0..cfg.timesteps {
        if t > 0 && k > 1 {
            for c in community.iter_mut() {
                if rng.random_bool(cfg.drift) {
                    let shift = rng.random_range(1..k);
                    *c = (*c + shift) % k;
                }
            }
        }
        let mut clean = Vec::new();
        let mut noisy = Vec::new();
        let mut meta = Vec::new();
        for (i, &c) in community.iter().enumerate() {
            for (j, &g) in edge_group.iter().enumerate() {
                let linked = c == g;
                if linked {
                    clean.push((NodeId(i), EdgeId(j), 1.0));
                }
                if linked != rng.random_bool(cfg.noise) {
                    noisy.push((NodeId(i), EdgeId(j), 1.0));
                }
            }
            let category = if rng.random_bool(cfg.noise) {
                rng.random_range(0..k)
            } else {
                c
            };
            meta.push((NodeId(i), EdgeId(category), 1.0));
        }
        truth.push(IncidenceMatrix::from_memberships(
            &clean, cfg.nodes, cfg.edges,
        )?);
        observed.push(IncidenceMatrix::from_memberships(
            &noisy, cfg.nodes, cfg.edges,
        )?);
        explicit.push(IncidenceMatrix::from_memberships(&meta, cfg.nodes, k)?);
        node_community.push(community.clone());
    }

    let node_labels: Vec<String> = (0..cfg.nodes).map(|i| format!("user{i:04}")).collect();
    let edge_labels: Vec<String> = (0..cfg.edges).map(|j| format!("topic{j:04}")).collect();
    let time_labels: Vec<String> = (0..cfg.timesteps).map(|t| format!("t{t}")).collect();
    let category_labels: Vec<String> = (0..k).map(|c| format!("category{c}")).collect();
    Ok(PlantedDataset {
        explicit: TemporalHypergraph::new(
            Role::Explicit,
            node_labels.clone(),
            category_labels,
            time_labels.clone(),
            explicit,
        )?,
        implicit: TemporalHypergraph::new(
            Role::Implicit,
            node_labels,
            edge_labels,
            time_labels,
            observed,
        )?,
        truth,
        node_community,
        edge_group,
    })
}
