use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pool::Trajectory;
use super::GenError;
use crate::adapters::EmbeddingProvider;

const MAX_ITERATIONS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub cluster_id: String,
    pub members: Vec<String>,
    pub centroid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub clusters: Vec<Cluster>,
}

impl ClusterSet {
    pub fn cluster_of(&self, task_id: &str) -> Option<&Cluster> {
        self.clusters.iter().find(|c| c.members.iter().any(|m| m == task_id))
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
pub fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    while centroids.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| centroids.iter().map(|c| squared_distance(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = d2.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                if *w > 0.0 && target < *w {
                    idx = i;
                    break;
                }
                target -= w;
            }
            idx
        } else {
            // every point coincides with a centroid
            0
        };
        centroids.push(points[pick].clone());
    }
    centroids
}

fn means(points: &[Vec<f64>], assign: &[usize], old: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; old.len()];
    let mut counts = vec![0usize; old.len()];
    for (p, &a) in points.iter().zip(assign) {
        counts[a] += 1;
        sums[a].iter_mut().zip(p).for_each(|(s, x)| *s += x);
    }
    sums.into_iter()
        .zip(counts)
        .zip(old)
        .map(|((s, n), o)| if n == 0 { o.clone() } else { s.into_iter().map(|x| x / n as f64).collect() })
        .collect()
}

/// Seeded k-means++ / Lloyd over instruction embeddings.
///
/// Clusters come out ordered by their first member in pool order; empty clusters are dropped.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> (Vec<usize>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut assign: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    for _ in 0..MAX_ITERATIONS {
        centroids = means(points, &assign, &centroids);
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    (assign, centroids)
}

pub fn embed_and_cluster(
    pool: &[Trajectory],
    embedder: &dyn EmbeddingProvider,
    target_clusters: usize,
    seed: u64,
) -> Result<ClusterSet, GenError> {
    if pool.is_empty() {
        return Err(GenError::Config("trajectory pool is empty".into()));
    }
    if target_clusters < 1 || target_clusters > pool.len() {
        return Err(GenError::Config(format!(
            "cluster count must be between 1 and the pool size ({}), got {target_clusters}",
            pool.len()
        )));
    }
    let points = pool
        .iter()
        .map(|t| {
            embedder
                .embed(&t.embedding_text())
                .map_err(|e| GenError::Provider { phase: "embed_and_cluster", source: e })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let (assign, centroids) = kmeans(&points, target_clusters, seed);
    let mut order: Vec<usize> = Vec::new();
    for &a in &assign {
        if !order.contains(&a) {
            order.push(a);
        }
    }
    let clusters = order
        .into_iter()
        .enumerate()
        .map(|(i, c)| Cluster {
            cluster_id: format!("c{i}"),
            members: pool.iter().zip(&assign).filter(|(_, a)| **a == c).map(|(t, _)| t.task_id.clone()).collect(),
            centroid: centroids[c].clone(),
        })
        .collect();
    Ok(ClusterSet { clusters })
}
