//! DBSCAN over cosine distance and a k-distance heuristic for `eps`.

pub const DEFAULT_MIN_PTS: usize = 4;
pub const FALLBACK_EPS: f64 = 0.15;

pub fn cosine_similarity(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

pub fn cosine_distance(a: &[f32], b: &[f32]) -> f64 {
    1.0 - cosine_similarity(a, b)
}

/// Cluster label per point; `None` is noise. A point's neighbourhood is
/// every point (itself included) within distance `eps`; a core point has at
/// least `min_pts` neighbours. Clusters are numbered in order of their
/// lowest-indexed core point, and a border point reachable from several
/// clusters joins the first one expanded.
pub fn dbscan(points: &[Vec<f32>], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let neighbours: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| cosine_distance(&points[i], &points[j]) <= eps).collect())
        .collect();
    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut cluster = 0;
    for i in 0..n {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        if neighbours[i].len() < min_pts {
            continue;
        }
        labels[i] = Some(cluster);
        let mut queue: Vec<usize> = neighbours[i].clone();
        let mut k = 0;
        while k < queue.len() {
            let j = queue[k];
            k += 1;
            if labels[j].is_none() {
                labels[j] = Some(cluster);
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            if neighbours[j].len() >= min_pts {
                queue.extend(neighbours[j].iter().copied());
            }
        }
        cluster += 1;
    }
    labels
}

/// `eps` from the elbow of the sorted k-distance curve (k = `min_pts - 1`):
/// the point farthest from the chord joining the curve's ends. Falls back to
/// [`FALLBACK_EPS`] with too few points or a flat curve.
pub fn estimate_eps(points: &[Vec<f32>], min_pts: usize) -> f64 {
    let k = min_pts.saturating_sub(1).max(1);
    if points.len() <= k + 1 {
        return FALLBACK_EPS;
    }
    let mut kd: Vec<f64> = (0..points.len())
        .map(|i| {
            let mut d: Vec<f64> = (0..points.len()).filter(|&j| j != i).map(|j| cosine_distance(&points[i], &points[j])).collect();
            d.sort_by(|a, b| a.total_cmp(b));
            d[k - 1]
        })
        .collect();
    kd.sort_by(|a, b| a.total_cmp(b));
    let n = kd.len();
    let (x0, y0, x1, y1) = (0.0, kd[0], (n - 1) as f64, kd[n - 1]);
    if (y1 - y0).abs() < 1e-12 {
        return FALLBACK_EPS;
    }
    let len = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
    let mut best = (0.0, FALLBACK_EPS);
    for (i, &y) in kd.iter().enumerate() {
        let d = ((y1 - y0) * i as f64 - (x1 - x0) * y + x1 * y0 - y1 * x0).abs() / len;
        if d > best.0 {
            best = (d, y);
        }
    }
    if best.0 == 0.0 {
        FALLBACK_EPS
    } else {
        best.1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_blobs_and_noise() {
        let mut pts = Vec::new();
        for i in 0..5 {
            pts.push(vec![1.0, 0.01 * i as f32]);
        }
        for i in 0..5 {
            pts.push(vec![0.01 * i as f32, 1.0]);
        }
        pts.push(vec![-1.0, -1.0]);
        let l = dbscan(&pts, 0.05, 4);
        assert!(l[..5].iter().all(|x| *x == Some(0)));
        assert!(l[5..10].iter().all(|x| *x == Some(1)));
        assert_eq!(l[10], None);
    }

    #[test]
    fn zero_vectors_have_similarity_zero() {
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert_eq!(cosine_distance(&[0.0, 0.0], &[0.0, 0.0]), 1.0);
    }

    #[test]
    fn eps_fallback_for_small_inputs() {
        assert_eq!(estimate_eps(&vec![vec![1.0, 0.0]; 3], 4), FALLBACK_EPS);
        let pts: Vec<Vec<f32>> = (0..20).map(|i| vec![1.0, i as f32 * if i < 15 { 0.01 } else { 1.0 }]).collect();
        let e = estimate_eps(&pts, 4);
        assert!(e > 0.0 && e < 0.5, "{e}");
    }
}
