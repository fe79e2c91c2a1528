//! Model-free objectness detection: RANSAC removal of dominant planes, then
//! conditional clustering of voxels under distance, color and normal cues.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{self, Point3, PointCloud, VoxelGrid};
use crate::error::{Error, Result};
use crate::spatial::PointGrid;

/// How the color cue measures the difference between two voxels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorDistance {
    /// Euclidean norm over the three RGB channels.
    #[default]
    Rgb,
    /// Absolute difference of luma.
    Gray,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConnectabilityParams {
    /// Meters.
    pub sigma_d: f64,
    /// Color-difference units on the 0..=255 scale.
    pub sigma_c: f64,
    /// Degrees between normals.
    pub sigma_s: f64,
    pub color_distance: ColorDistance,
}

impl Default for ConnectabilityParams {
    fn default() -> Self {
        Self {
            sigma_d: 0.02,
            sigma_c: 8.0,
            sigma_s: 10.0,
            color_distance: ColorDistance::Rgb,
        }
    }
}

impl ConnectabilityParams {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !(ok(self.sigma_d) && ok(self.sigma_c) && ok(self.sigma_s)) {
            return Err(Error::param(format!("connectability thresholds must be > 0: {self:?}")));
        }
        Ok(())
    }
}

/// The three cue scores for a voxel pair and the resulting gate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Connectability {
    pub distance: f64,
    pub color: f64,
    pub shape: f64,
    /// `distance > 0 && (color > 0 || shape > 0)`.
    pub connected: bool,
}

impl Connectability {
    /// Fuzzy reading of the same gate, `min(distance, max(color, shape))`.
    pub fn strength(&self) -> f64 {
        self.distance.min(self.color.max(self.shape))
    }
}

fn margin(sigma: f64, measured: f64) -> f64 {
    ((sigma - measured) / sigma).clamp(0.0, 1.0)
}

fn luma(c: &Vector3<f64>) -> f64 {
    0.299 * c.x + 0.587 * c.y + 0.114 * c.z
}

pub fn connectability(p1: &Point3, p2: &Point3, params: &ConnectabilityParams) -> Result<Connectability> {
    let (n1, n2) = match (p1.normal, p2.normal) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::State(
                "connectability needs surface normals on both points".into(),
            ))
        }
    };
    let dist = (p1.position - p2.position).norm();
    let color_diff = match params.color_distance {
        ColorDistance::Rgb => (p1.color - p2.color).norm(),
        ColorDistance::Gray => (luma(&p1.color) - luma(&p2.color)).abs(),
    };
    let denom = n1.norm() * n2.norm();
    let cos = if denom > 0.0 {
        (n1.dot(&n2) / denom).clamp(-1.0, 1.0)
    } else {
        1.0
    };
    let angle = cos.acos().to_degrees();

    let distance = margin(params.sigma_d, dist);
    let color = margin(params.sigma_c, color_diff);
    let shape = margin(params.sigma_s, angle);
    Ok(Connectability {
        distance,
        color,
        shape,
        connected: distance > 0.0 && (color > 0.0 || shape > 0.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacParams {
    /// Max point-to-plane distance of an inlier, meters.
    pub dist_thresh: f64,
    /// A plane is removed only while its inliers make up at least this share
    /// of the remaining cloud.
    pub min_inlier_fraction: f64,
    pub max_planes: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            dist_thresh: 0.01,
            min_inlier_fraction: 0.3,
            max_planes: 3,
            iterations: 300,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneModel {
    /// Unit normal; the plane is `normal · x = offset`.
    pub normal: Vector3<f64>,
    pub offset: f64,
    /// Indices into the cloud passed to [`remove_planes`].
    pub inlier_indices: Vec<usize>,
}

impl PlaneModel {
    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        (self.normal.dot(p) - self.offset).abs()
    }
}

/// Repeatedly fits the best plane by 3-point RANSAC and strips its inliers.
pub fn remove_planes(cloud: &PointCloud, params: &RansacParams) -> Result<(PointCloud, Vec<PlaneModel>)> {
    if cloud.len() < 3 {
        return Err(Error::param(format!(
            "plane fitting needs >= 3 points, got {}",
            cloud.len()
        )));
    }
    if !(params.min_inlier_fraction > 0.0 && params.min_inlier_fraction <= 1.0) {
        return Err(Error::param("min_inlier_fraction must lie in (0, 1]"));
    }
    if !(params.dist_thresh > 0.0) || params.iterations == 0 {
        return Err(Error::param("RANSAC needs dist_thresh > 0 and iterations >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let positions = cloud.positions();
    let mut remaining: Vec<usize> = (0..cloud.len()).collect();
    let mut planes = Vec::new();

    while planes.len() < params.max_planes && remaining.len() >= 3 {
        let Some((normal, offset)) = best_plane(&positions, &remaining, params, &mut rng) else {
            break;
        };
        let (inliers, outliers): (Vec<usize>, Vec<usize>) = remaining
            .iter()
            .partition(|&&i| (normal.dot(&positions[i]) - offset).abs() <= params.dist_thresh);
        if (inliers.len() as f64) < params.min_inlier_fraction * remaining.len() as f64 {
            break;
        }
        planes.push(PlaneModel {
            normal,
            offset,
            inlier_indices: inliers,
        });
        remaining = outliers;
    }
    Ok((cloud.select(&remaining), planes))
}

fn count_inliers(positions: &[Vector3<f64>], idx: &[usize], n: &Vector3<f64>, d: f64, thresh: f64) -> usize {
    idx.iter()
        .filter(|&&i| (n.dot(&positions[i]) - d).abs() <= thresh)
        .count()
}

fn best_plane(
    positions: &[Vector3<f64>],
    idx: &[usize],
    params: &RansacParams,
    rng: &mut ChaCha8Rng,
) -> Option<(Vector3<f64>, f64)> {
    let total = idx.len();
    let mut best: Option<(Vector3<f64>, f64, usize)> = None;
    let mut budget = params.iterations;
    let mut it = 0;
    while it < budget {
        it += 1;
        let a = idx[rng.random_range(0..total)];
        let b = idx[rng.random_range(0..total)];
        let c = idx[rng.random_range(0..total)];
        if a == b || b == c || a == c {
            continue;
        }
        let cross = (positions[b] - positions[a]).cross(&(positions[c] - positions[a]));
        let norm = cross.norm();
        if norm < 1e-12 {
            continue;
        }
        let n = cross / norm;
        let d = n.dot(&positions[a]);
        let count = count_inliers(positions, idx, &n, d, params.dist_thresh);
        if best.as_ref().is_none_or(|b| count > b.2) {
            best = Some((n, d, count));
            // Adaptive stop at 99.9% confidence of having drawn an all-inlier triple.
            let w = count as f64 / total as f64;
            let p_good = w.powi(3);
            if p_good >= 1.0 {
                budget = it;
            } else if p_good > 0.0 {
                let needed = ((1.0 - 0.999f64).ln() / (1.0 - p_good).ln()).ceil();
                if needed.is_finite() && (needed as usize) < budget {
                    budget = (needed as usize).max(it);
                }
            }
        }
    }
    let (n, d, count) = best?;
    // Least-squares refinement over the consensus set.
    let inliers: Vec<Vector3<f64>> = idx
        .iter()
        .map(|&i| positions[i])
        .filter(|p| (n.dot(p) - d).abs() <= params.dist_thresh)
        .collect();
    if inliers.len() >= 3 {
        let centroid = inliers.iter().fold(Vector3::zeros(), |a, p| a + p) / inliers.len() as f64;
        let mut rn = cloud::plane_normal(inliers.iter().copied());
        if rn.dot(&n) < 0.0 {
            rn = -rn;
        }
        let rd = rn.dot(&centroid);
        if count_inliers(positions, idx, &rn, rd, params.dist_thresh) >= count {
            return Some((rn, rd));
        }
    }
    Some((n, d))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster3D {
    /// Ascending indices into the voxel grid.
    pub member_indices: Vec<usize>,
    pub centroid: Vector3<f64>,
    pub aabb_min: Vector3<f64>,
    pub aabb_max: Vector3<f64>,
}

impl Cluster3D {
    pub fn from_members(grid: &VoxelGrid, mut members: Vec<usize>) -> Self {
        members.sort_unstable();
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        let mut sum = Vector3::zeros();
        for &i in &members {
            let p = grid.point(i).position;
            lo = lo.inf(&p);
            hi = hi.sup(&p);
            sum += p;
        }
        let centroid = sum / members.len() as f64;
        Self {
            member_indices: members,
            centroid,
            aabb_min: lo,
            aabb_max: hi,
        }
    }

    pub fn len(&self) -> usize {
        self.member_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_indices.is_empty()
    }

    /// One line of the JSON-lines cluster dump.
    pub fn to_json_line(&self) -> String {
        let v = |x: &Vector3<f64>| [x.x, x.y, x.z];
        serde_json::json!({
            "centroid": v(&self.centroid),
            "aabb": [v(&self.aabb_min), v(&self.aabb_max)],
            "member_count": self.len(),
        })
        .to_string()
    }
}

/// Union-find with path halving and union by size.
#[derive(Debug, Clone)]
pub(crate) struct DisjointSets {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSets {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
    }

    pub(crate) fn groups(&mut self) -> Vec<Vec<usize>> {
        let n = self.parent.len();
        let mut by_root: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in 0..n {
            let r = self.find(i);
            by_root[r].push(i);
        }
        by_root.into_iter().filter(|g| !g.is_empty()).collect()
    }
}

/// Grows regions over connectable voxel pairs until no region changes, i.e.
/// the connected components of the connectability graph. Components smaller
/// than `min_cluster_size` are dropped; the rest are ordered by descending
/// size, then by centroid.
pub fn conditional_cluster(
    grid: &VoxelGrid,
    params: &ConnectabilityParams,
    min_cluster_size: usize,
) -> Result<Vec<Cluster3D>> {
    params.validate()?;
    if grid.points().any(|p| p.normal.is_none()) {
        return Err(Error::State("clustering needs normals on every voxel".into()));
    }
    let positions: Vec<Vector3<f64>> = grid.points().map(|p| p.position).collect();
    let index = PointGrid::new(&positions, params.sigma_d);
    let mut sets = DisjointSets::new(grid.len());
    for (i, pos) in positions.iter().enumerate() {
        for j in index.within(pos, params.sigma_d) {
            if j > i && connectability(grid.point(i), grid.point(j), params)?.connected {
                sets.union(i, j);
            }
        }
    }
    let mut clusters: Vec<Cluster3D> = sets
        .groups()
        .into_iter()
        .filter(|g| g.len() >= min_cluster_size.max(1))
        .map(|g| Cluster3D::from_members(grid, g))
        .collect();
    clusters.sort_by(|a, b| {
        b.len().cmp(&a.len()).then_with(|| {
            a.centroid
                .iter()
                .zip(b.centroid.iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    Ok(clusters)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectnessConfig {
    pub connectability: ConnectabilityParams,
    pub ransac: RansacParams,
    /// Voxel leaf size in meters.
    pub leaf_size: f64,
    /// Neighbors used for normal estimation on voxel representatives.
    pub normal_k: usize,
    /// Minimum voxels per proposal.
    pub min_cluster_size: usize,
}

impl Default for ObjectnessConfig {
    fn default() -> Self {
        Self {
            connectability: ConnectabilityParams::default(),
            ransac: RansacParams::default(),
            leaf_size: 0.01,
            normal_k: 10,
            min_cluster_size: 30,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Detections {
    pub grid: VoxelGrid,
    pub clusters: Vec<Cluster3D>,
    pub planes: Vec<PlaneModel>,
}

/// Plane removal, voxelization, normal estimation on voxel representatives
/// (oriented toward `viewpoint`) and conditional clustering.
pub fn detect_objects(cloud: &PointCloud, cfg: &ObjectnessConfig, viewpoint: &Vector3<f64>) -> Result<Detections> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let (residual, planes) = if cloud.len() >= 3 {
        remove_planes(cloud, &cfg.ransac)?
    } else {
        (cloud.clone(), Vec::new())
    };
    let empty = |planes| Detections {
        grid: VoxelGrid {
            leaf_size: cfg.leaf_size,
            cells: Vec::new(),
        },
        clusters: Vec::new(),
        planes,
    };
    if residual.is_empty() {
        return Ok(empty(planes));
    }
    let raw = cloud::voxel_downsample(&residual, cfg.leaf_size)?;
    if raw.len() < 3 {
        return Ok(empty(planes));
    }
    let reps = raw.to_cloud(&cloud.frame_id);
    let with_normals = cloud::estimate_normals_toward(&reps, cfg.normal_k.min(reps.len()), viewpoint)?;
    let grid = VoxelGrid {
        leaf_size: raw.leaf_size,
        cells: raw.cells.iter().map(|(k, _)| *k).zip(with_normals.points).collect(),
    };
    let clusters = conditional_cluster(&grid, &cfg.connectability, cfg.min_cluster_size)?;
    Ok(Detections { grid, clusters, planes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn pt(pos: [f64; 3], color: [f64; 3], normal: [f64; 3]) -> Point3 {
        Point3::new(Vector3::from(pos), Vector3::from(color)).with_normal(Vector3::from(normal))
    }

    #[test]
    fn identical_points_fully_connected() {
        let p = pt([0.0, 0.0, 1.0], [10.0, 20.0, 30.0], [0.0, 0.0, 1.0]);
        let c = connectability(&p, &p, &ConnectabilityParams::default()).unwrap();
        assert_eq!((c.distance, c.color, c.shape, c.connected), (1.0, 1.0, 1.0, true));
        assert_eq!(c.strength(), 1.0);
    }

    #[test]
    fn distance_gate() {
        let a = pt([0.0, 0.0, 0.0], [0.0; 3], [0.0, 0.0, 1.0]);
        let b = pt([0.05, 0.0, 0.0], [0.0; 3], [0.0, 0.0, 1.0]);
        let c = connectability(&a, &b, &ConnectabilityParams::default()).unwrap();
        assert_eq!(c.distance, 0.0);
        assert!(!c.connected);
    }

    #[test]
    fn color_or_shape_rescues_the_pair() {
        let tilt = 40f64.to_radians();
        let a = pt([0.0, 0.0, 0.0], [100.0, 100.0, 100.0], [0.0, 0.0, 1.0]);
        let far_color = pt([0.01, 0.0, 0.0], [120.0, 100.0, 100.0], [tilt.sin(), 0.0, tilt.cos()]);
        let params = ConnectabilityParams::default();
        let c = connectability(&a, &far_color, &params).unwrap();
        assert!((c.distance - 0.5).abs() < 1e-12);
        assert_eq!((c.color, c.shape), (0.0, 0.0));
        assert!(!c.connected);

        let near_color = pt([0.01, 0.0, 0.0], [104.0, 100.0, 100.0], [tilt.sin(), 0.0, tilt.cos()]);
        let c = connectability(&a, &near_color, &params).unwrap();
        assert!((c.color - 0.5).abs() < 1e-12);
        assert!(c.connected);
    }

    #[test]
    fn gray_color_mode() {
        let params = ConnectabilityParams {
            color_distance: ColorDistance::Gray,
            ..Default::default()
        };
        // Same luma, very different chroma.
        let a = pt([0.0; 3], [100.0, 100.0, 100.0], [0.0, 0.0, 1.0]);
        let b = pt([0.0; 3], [100.0 + 0.587 * 50.0 / 0.299, 50.0, 100.0], [1.0, 0.0, 0.0]);
        let c = connectability(&a, &b, &params).unwrap();
        assert!(c.color > 0.99);
    }

    #[test]
    fn missing_normals_is_state_error() {
        let a = Point3::new(Vector3::zeros(), Vector3::zeros());
        assert!(matches!(
            connectability(&a, &a, &Default::default()),
            Err(Error::State(_))
        ));
    }

    fn plane_points(n: usize, rng: &mut ChaCha8Rng) -> Vec<Point3> {
        (0..n)
            .map(|_| {
                Point3::new(
                    Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0),
                    Vector3::repeat(90.0),
                )
            })
            .collect()
    }

    #[test]
    fn pure_plane_is_removed_entirely() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cloud = PointCloud::new(plane_points(1000, &mut rng), "p");
        let params = RansacParams {
            dist_thresh: 0.005,
            min_inlier_fraction: 0.2,
            ..Default::default()
        };
        let (residual, planes) = remove_planes(&cloud, &params).unwrap();
        assert!(residual.is_empty());
        assert_eq!(planes.len(), 1);
        assert!(planes[0].normal.z.abs() > 1.0 - 1e-9);
        assert!((planes[0].normal.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn plane_and_sphere_separate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut pts = plane_points(800, &mut rng);
        let center = Vector3::new(0.0, 0.0, 0.5);
        for _ in 0..200 {
            let d = Vector3::<f64>::from_fn(|_, _| StandardNormal.sample(&mut rng)).normalize();
            pts.push(Point3::new(center + 0.1 * d, Vector3::repeat(200.0)));
        }
        let cloud = PointCloud::new(pts, "ps");
        let params = RansacParams {
            dist_thresh: 0.005,
            min_inlier_fraction: 0.2,
            ..Default::default()
        };
        let (residual, planes) = remove_planes(&cloud, &params).unwrap();
        assert_eq!(planes.len(), 1);
        let kept_sphere = residual.points.iter().filter(|p| p.position.z > 0.3).count();
        let kept_plane = residual.points.iter().filter(|p| p.position.z.abs() < 1e-9).count();
        assert!(kept_sphere as f64 >= 0.99 * 200.0);
        assert!(kept_plane as f64 <= 0.01 * 800.0);
        for plane in &planes {
            for &i in &plane.inlier_indices {
                assert!(plane.distance(&cloud.points[i].position) <= params.dist_thresh);
            }
        }
    }

    #[test]
    fn no_dominant_plane_leaves_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Point3> = (0..300)
            .map(|_| {
                Point3::new(
                    Vector3::new(rng.random(), rng.random(), rng.random()),
                    Vector3::repeat(1.0),
                )
            })
            .collect();
        let cloud = PointCloud::new(pts, "blob");
        let params = RansacParams {
            dist_thresh: 0.005,
            min_inlier_fraction: 0.2,
            ..Default::default()
        };
        let (residual, planes) = remove_planes(&cloud, &params).unwrap();
        assert!(planes.is_empty());
        assert_eq!(residual, cloud);
    }

    #[test]
    fn ransac_rejects_degenerate_input() {
        let cloud = PointCloud::new(vec![pt([0.0; 3], [0.0; 3], [0.0, 0.0, 1.0]); 2], "");
        assert!(matches!(
            remove_planes(&cloud, &Default::default()),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn ransac_is_seed_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cloud = PointCloud::new(plane_points(500, &mut rng), "p");
        let p = RansacParams {
            seed: 77,
            ..Default::default()
        };
        assert_eq!(
            remove_planes(&cloud, &p).unwrap().1,
            remove_planes(&cloud, &p).unwrap().1
        );
    }

    fn sphere_voxels(center: Vector3<f64>, r: f64, leaf: f64) -> Vec<Point3> {
        let mut out = Vec::new();
        let steps = (r / leaf).ceil() as i64 + 1;
        for i in -steps..=steps {
            for j in -steps..=steps {
                for k in -steps..=steps {
                    let p = Vector3::new(i as f64, j as f64, k as f64) * leaf;
                    if (p.norm() - r).abs() < leaf * 0.6 {
                        out.push(Point3::new(center + p, Vector3::new(200.0, 40.0, 40.0)).with_normal(p.normalize()));
                    }
                }
            }
        }
        out
    }

    #[test]
    fn two_spheres_two_clusters() {
        let leaf = 0.01;
        let mut pts = sphere_voxels(Vector3::new(0.0, 0.0, 1.0), 0.04, leaf);
        pts.extend(sphere_voxels(Vector3::new(0.18, 0.0, 1.0), 0.04, leaf));
        let grid = VoxelGrid::from_points(pts, leaf).unwrap();
        let clusters = conditional_cluster(&grid, &ConnectabilityParams::default(), 30).unwrap();
        assert_eq!(clusters.len(), 2);
        let total: usize = clusters.iter().map(Cluster3D::len).sum();
        assert_eq!(total, grid.len());
        for c in &clusters {
            for &i in &c.member_indices {
                let p = grid.point(i).position;
                assert!((0..3).all(|a| p[a] >= c.aabb_min[a] && p[a] <= c.aabb_max[a]));
            }
        }
    }

    #[test]
    fn color_gradient_rod_is_one_cluster() {
        let leaf = 0.01;
        let pts: Vec<Point3> = (0..60)
            .map(|i| {
                let t = i as f64;
                Point3::new(
                    Vector3::new((t + 0.5) * leaf, 0.0, 1.0),
                    Vector3::new(3.0 * t, 0.0, 255.0 - 3.0 * t),
                )
                .with_normal(Vector3::new(if i % 2 == 0 { 0.0 } else { 1.0 }, 0.0, 1.0))
            })
            .collect();
        let grid = VoxelGrid::from_points(pts, leaf).unwrap();
        let clusters = conditional_cluster(&grid, &ConnectabilityParams::default(), 1).unwrap();
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].len(), 60);
    }

    #[test]
    fn small_components_dropped_and_sorted() {
        let leaf = 0.01;
        let mut pts = sphere_voxels(Vector3::new(0.0, 0.0, 1.0), 0.05, leaf);
        pts.extend(sphere_voxels(Vector3::new(0.3, 0.0, 1.0), 0.03, leaf));
        pts.push(pt([1.0, 1.0, 1.0], [0.0; 3], [0.0, 0.0, 1.0]));
        let grid = VoxelGrid::from_points(pts, leaf).unwrap();
        let clusters = conditional_cluster(&grid, &ConnectabilityParams::default(), 5).unwrap();
        assert_eq!(clusters.len(), 2);
        assert!(clusters[0].len() > clusters[1].len());
        assert!(clusters[0].centroid.x < 0.1);
    }

    #[test]
    fn cluster_dump_line_fields() {
        let grid = VoxelGrid::from_points(vec![pt([0.0; 3], [0.0; 3], [0.0, 0.0, 1.0])], 0.01).unwrap();
        let c = Cluster3D::from_members(&grid, vec![0]);
        let v: serde_json::Value = serde_json::from_str(&c.to_json_line()).unwrap();
        assert_eq!(v["member_count"], 1);
        assert_eq!(v["aabb"].as_array().unwrap().len(), 2);
    }
}
