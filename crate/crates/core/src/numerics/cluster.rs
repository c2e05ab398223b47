//! DBSCAN over Euclidean point sets, with explicit noise labels.

/// Cluster assignment for one input point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterLabel {
    Cluster(usize),
    Noise,
}

impl ClusterLabel {
    pub fn is_noise(&self) -> bool {
        matches!(self, ClusterLabel::Noise)
    }
}

/// Plain DBSCAN with Euclidean metric. A point is core when its
/// eps-neighborhood (itself included) holds at least `min_pts` points;
/// border points join the first cluster that reaches them, which makes the
/// result deterministic for a given input order.
pub fn dbscan(points: &[Vec<f64>], eps: f64, min_pts: usize) -> Vec<ClusterLabel> {
    assert!(eps > 0.0, "eps must be positive");
    assert!(min_pts >= 1, "min_pts must be at least 1");
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let dim = points[0].len();
    assert!(points.iter().all(|p| p.len() == dim), "points must share dimensionality");

    let eps2 = eps * eps;
    let neighbors = |i: usize| -> Vec<usize> {
        (0..n)
            .filter(|&j| {
                points[i]
                    .iter()
                    .zip(&points[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    <= eps2
            })
            .collect()
    };

    const UNVISITED: usize = usize::MAX;
    const NOISE: usize = usize::MAX - 1;
    let mut label = vec![UNVISITED; n];
    let mut next_cluster = 0usize;

    for i in 0..n {
        if label[i] != UNVISITED {
            continue;
        }
        let seed = neighbors(i);
        if seed.len() < min_pts {
            label[i] = NOISE;
            continue;
        }
        let cluster = next_cluster;
        next_cluster += 1;
        label[i] = cluster;
        let mut queue: std::collections::VecDeque<usize> = seed.into_iter().collect();
        while let Some(j) = queue.pop_front() {
            if label[j] == NOISE {
                label[j] = cluster; // border point
            }
            if label[j] != UNVISITED {
                continue;
            }
            label[j] = cluster;
            let nb = neighbors(j);
            if nb.len() >= min_pts {
                queue.extend(nb);
            }
        }
    }

    label
        .into_iter()
        .map(|l| match l {
            NOISE => ClusterLabel::Noise,
            c => ClusterLabel::Cluster(c),
        })
        .collect()
}
