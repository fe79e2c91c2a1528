//! Point-cloud data model, CSV / ASCII-PLY ingestion, normal estimation and
//! voxel downsampling.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::error::{Error, Result};
use crate::spatial::PointGrid;

/// Color assigned to records that carry no color channels.
pub const DEFAULT_COLOR: [f64; 3] = [128.0, 128.0, 128.0];

#[derive(Debug, Clone, PartialEq)]
pub struct Point3 {
    /// Meters.
    pub position: Vector3<f64>,
    /// RGB intensities on the 0..=255 scale.
    pub color: Vector3<f64>,
    /// Unit surface normal, once estimated.
    pub normal: Option<Vector3<f64>>,
}

impl Point3 {
    pub fn new(position: Vector3<f64>, color: Vector3<f64>) -> Self {
        Self {
            position,
            color,
            normal: None,
        }
    }

    pub fn with_normal(mut self, normal: Vector3<f64>) -> Self {
        self.normal = Some(normal.normalize());
        self
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.color.iter().all(|v| v.is_finite())
            && self.normal.is_none_or(|n| n.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub frame_id: String,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, frame_id: impl Into<String>) -> Self {
        Self {
            points,
            frame_id: frame_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.points.iter().map(|p| p.position).collect()
    }

    /// Keeps the points whose index is listed, in the listed order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i].clone()).collect(),
            frame_id: self.frame_id.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    PlyAscii,
    Csv,
}

impl CloudFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("ply") => Ok(CloudFormat::PlyAscii),
            Some("csv") | Some("txt") => Ok(CloudFormat::Csv),
            _ => Err(Error::config(format!(
                "cannot infer cloud format of {}",
                path.display()
            ))),
        }
    }
}

pub fn load_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let frame_id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    let mut cloud = match format {
        CloudFormat::Csv => parse_csv(&text)?,
        CloudFormat::PlyAscii => parse_ply(&text)?,
    };
    cloud.frame_id = frame_id.to_string();
    Ok(cloud)
}

pub fn save_cloud(cloud: &PointCloud, path: &Path, format: CloudFormat) -> Result<()> {
    let text = match format {
        CloudFormat::Csv => to_csv(cloud),
        CloudFormat::PlyAscii => to_ply(cloud),
    };
    std::fs::write(path, text).map_err(|e| Error::file(path, e))
}

/// Parses `x,y,z[,r,g,b]` records. A first line that fails to parse as
/// numbers is treated as a header; `#` starts a comment.
pub fn parse_csv(text: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut seen_record = false;
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let values: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        let values = match values {
            Ok(v) => v,
            Err(_) if !seen_record => {
                seen_record = true;
                continue;
            }
            Err(e) => {
                return Err(Error::Malformed {
                    line: line_no,
                    msg: e.to_string(),
                });
            }
        };
        seen_record = true;
        points.push(record_to_point(&values, line_no)?);
    }
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(PointCloud::new(points, ""))
}

fn record_to_point(values: &[f64], line: usize) -> Result<Point3> {
    let color = match values.len() {
        3 => Vector3::from(DEFAULT_COLOR),
        6 => Vector3::new(values[3], values[4], values[5]),
        n => {
            return Err(Error::Malformed {
                line,
                msg: format!("expected 3 or 6 fields, found {n}"),
            });
        }
    };
    let p = Point3::new(Vector3::new(values[0], values[1], values[2]), color);
    if !p.is_finite() {
        return Err(Error::Malformed {
            line,
            msg: "non-finite value".into(),
        });
    }
    if color.iter().any(|c| !(0.0..=255.0).contains(c)) {
        return Err(Error::Malformed {
            line,
            msg: "color outside 0..=255".into(),
        });
    }
    Ok(p)
}

/// Parses the ASCII PLY subset: one `vertex` element with `x y z` and
/// optionally `red green blue` properties.
pub fn parse_ply(text: &str) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate();
    let bad = |line: usize, msg: &str| Error::Malformed {
        line,
        msg: msg.to_string(),
    };

    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(bad(1, "missing 'ply' magic")),
    }
    let mut vertex_count: Option<usize> = None;
    let mut in_vertex = false;
    let mut props: Vec<String> = Vec::new();
    let mut header_end = None;
    for (n, raw) in lines.by_ref() {
        let line = raw.trim();
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                if tok.next() != Some("ascii") {
                    return Err(bad(n + 1, "only ascii PLY is supported"));
                }
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = tok.next().unwrap_or("");
                let count = tok.next().and_then(|c| c.parse().ok());
                in_vertex = name == "vertex";
                if in_vertex {
                    vertex_count = Some(count.ok_or_else(|| bad(n + 1, "bad vertex count"))?);
                } else if count != Some(0usize) && vertex_count.is_none() {
                    return Err(bad(n + 1, "vertex element must come first"));
                }
            }
            Some("property") => {
                if in_vertex {
                    props.push(tok.last().unwrap_or("").to_string());
                }
            }
            Some("end_header") => {
                header_end = Some(n + 1);
                break;
            }
            Some(other) => return Err(bad(n + 1, &format!("unexpected header keyword '{other}'"))),
        }
    }
    let header_end = header_end.ok_or_else(|| bad(text.lines().count(), "missing end_header"))?;
    let count = vertex_count.ok_or_else(|| bad(header_end, "no vertex element"))?;
    if count == 0 {
        return Err(Error::EmptyCloud);
    }
    let col = |name: &str| props.iter().position(|p| p == name);
    let (xi, yi, zi) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(bad(header_end, "vertex needs x, y, z properties")),
    };
    let rgb = match (col("red"), col("green"), col("blue")) {
        (Some(r), Some(g), Some(b)) => Some((r, g, b)),
        _ => None,
    };

    let mut points = Vec::with_capacity(count);
    for (n, raw) in lines {
        if points.len() == count {
            break;
        }
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let values: std::result::Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
        let values = values.map_err(|e| bad(n + 1, &e.to_string()))?;
        if values.len() != props.len() {
            return Err(bad(
                n + 1,
                &format!("expected {} values, found {}", props.len(), values.len()),
            ));
        }
        let mut rec = vec![values[xi], values[yi], values[zi]];
        if let Some((r, g, b)) = rgb {
            rec.extend([values[r], values[g], values[b]]);
        }
        points.push(record_to_point(&rec, n + 1)?);
    }
    if points.len() != count {
        return Err(bad(
            text.lines().count(),
            &format!("expected {count} vertices, found {}", points.len()),
        ));
    }
    Ok(PointCloud::new(points, ""))
}

pub fn to_csv(cloud: &PointCloud) -> String {
    let mut out = String::from("x,y,z,r,g,b\n");
    for p in &cloud.points {
        let c = p.color;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            p.position.x, p.position.y, p.position.z, c.x, c.y, c.z
        );
    }
    out
}

pub fn to_ply(cloud: &PointCloud) -> String {
    let mut out = String::new();
    let _ = write!(
        out,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        cloud.len()
    );
    for p in &cloud.points {
        let c = p.color.map(|v| v.round().clamp(0.0, 255.0) as u8);
        let _ = writeln!(
            out,
            "{} {} {} {} {} {}",
            p.position.x, p.position.y, p.position.z, c.x, c.y, c.z
        );
    }
    out
}

/// Estimates normals oriented toward the origin.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<PointCloud> {
    estimate_normals_toward(cloud, k, &Vector3::zeros())
}

/// Assigns every point the smallest-eigenvalue eigenvector of its k-nearest
/// neighbor covariance (the point itself included), flipped to face `viewpoint`.
pub fn estimate_normals_toward(cloud: &PointCloud, k: usize, viewpoint: &Vector3<f64>) -> Result<PointCloud> {
    if k < 3 {
        return Err(Error::param(format!("normal estimation needs k >= 3, got {k}")));
    }
    if k > cloud.len() {
        return Err(Error::param(format!("k = {k} exceeds point count {}", cloud.len())));
    }
    let positions = cloud.positions();
    let grid = PointGrid::for_knn(&positions, k);
    let mut out = cloud.clone();
    for (i, point) in out.points.iter_mut().enumerate() {
        let nbrs = grid.knn(&positions[i], k);
        let mut normal = plane_normal(nbrs.iter().map(|&j| positions[j]));
        if normal.dot(&(viewpoint - point.position)) < 0.0 {
            normal = -normal;
        }
        point.normal = Some(normal);
    }
    Ok(out)
}

/// Least-variance direction of a point set.
pub(crate) fn plane_normal(points: impl Iterator<Item = Vector3<f64>> + Clone) -> Vector3<f64> {
    let n = points.clone().count() as f64;
    let mean = points.clone().fold(Vector3::zeros(), |a, p| a + p) / n;
    let cov = points.fold(Matrix3::zeros(), |a, p| {
        let d = p - mean;
        a + d * d.transpose()
    }) / n;
    let eig = SymmetricEigen::new(cov);
    let (idx, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("3 eigenvalues");
    eig.eigenvectors.column(idx).normalize()
}

/// Integer index of an occupied voxel.
pub type VoxelKey = [i64; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub leaf_size: f64,
    /// Occupied cells sorted by key; cluster member indices refer to this order.
    pub cells: Vec<(VoxelKey, Point3)>,
}

impl VoxelGrid {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn point(&self, i: usize) -> &Point3 {
        &self.cells[i].1
    }

    pub fn points(&self) -> impl Iterator<Item = &Point3> {
        self.cells.iter().map(|(_, p)| p)
    }

    /// Representatives as a cloud, in cell order.
    pub fn to_cloud(&self, frame_id: &str) -> PointCloud {
        PointCloud::new(self.points().cloned().collect(), frame_id)
    }

    /// Builds a grid directly from representatives, keyed by the cell that
    /// contains each one. Later duplicates of a key are dropped.
    pub fn from_points(points: Vec<Point3>, leaf_size: f64) -> Result<Self> {
        check_leaf(leaf_size)?;
        let mut cells = BTreeMap::new();
        for p in points {
            cells.entry(voxel_key(&p.position, leaf_size)).or_insert(p);
        }
        Ok(Self {
            leaf_size,
            cells: cells.into_iter().collect(),
        })
    }
}

pub fn voxel_key(p: &Vector3<f64>, leaf: f64) -> VoxelKey {
    [
        (p.x / leaf).floor() as i64,
        (p.y / leaf).floor() as i64,
        (p.z / leaf).floor() as i64,
    ]
}

fn check_leaf(leaf_size: f64) -> Result<()> {
    if !(leaf_size > 0.0 && leaf_size.is_finite()) {
        return Err(Error::param(format!("voxel leaf size must be > 0, got {leaf_size}")));
    }
    Ok(())
}

#[derive(Default)]
struct CellAccum {
    count: usize,
    position: Vector3<f64>,
    color: Vector3<f64>,
    normal: Vector3<f64>,
    normals: usize,
}

/// Replaces the points of every occupied cell by their centroid, mean color
/// and renormalized mean normal.
pub fn voxel_downsample(cloud: &PointCloud, leaf_size: f64) -> Result<VoxelGrid> {
    check_leaf(leaf_size)?;
    let mut acc: BTreeMap<VoxelKey, CellAccum> = BTreeMap::new();
    for p in &cloud.points {
        let a = acc.entry(voxel_key(&p.position, leaf_size)).or_default();
        a.count += 1;
        a.position += p.position;
        a.color += p.color;
        if let Some(n) = p.normal {
            a.normal += n;
            a.normals += 1;
        }
    }
    let cells = acc
        .into_iter()
        .map(|(key, a)| {
            let n = a.count as f64;
            let mut position = a.position / n;
            // Keep the centroid inside its cell despite rounding.
            for axis in 0..3 {
                let lo = key[axis] as f64 * leaf_size;
                position[axis] = position[axis].clamp(lo, next_down(lo + leaf_size));
            }
            let normal = (a.normals == a.count && a.normal.norm() > 1e-12).then(|| a.normal.normalize());
            (
                key,
                Point3 {
                    position,
                    color: a.color / n,
                    normal,
                },
            )
        })
        .collect();
    Ok(VoxelGrid { leaf_size, cells })
}

fn next_down(x: f64) -> f64 {
    if x > 0.0 {
        f64::from_bits(x.to_bits() - 1)
    } else if x < 0.0 {
        f64::from_bits(x.to_bits() + 1)
    } else {
        -f64::from_bits(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gray(x: f64, y: f64, z: f64) -> Point3 {
        Point3::new(Vector3::new(x, y, z), Vector3::from(DEFAULT_COLOR))
    }

    #[test]
    fn csv_with_colors() {
        let cloud = parse_csv("0,0,1,255,0,0\n1,0,1,0,255,0\n0,1,1,0,0,255\n").unwrap();
        assert_eq!(cloud.len(), 3);
        assert_eq!(cloud.points[0].color, Vector3::new(255.0, 0.0, 0.0));
        assert_eq!(cloud.points[2].color, Vector3::new(0.0, 0.0, 255.0));
        assert_eq!(cloud.points[1].position, Vector3::new(1.0, 0.0, 1.0));
    }

    #[test]
    fn csv_header_comments_default_color() {
        let cloud = parse_csv("x,y,z\n# a comment\n1,2,3 # trailing\n\n4,5,6\n").unwrap();
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.points[1].color, Vector3::from(DEFAULT_COLOR));
    }

    #[test]
    fn csv_error_names_line() {
        match parse_csv("1,2,3\n4,five,6\n") {
            Err(Error::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_csv("1,2\n"), Err(Error::Malformed { line: 1, .. })));
        assert!(matches!(parse_csv("# nothing\n"), Err(Error::EmptyCloud)));
    }

    #[test]
    fn ply_zero_vertices_is_empty() {
        let text = "ply\nformat ascii 1.0\nelement vertex 0\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
        assert!(matches!(parse_ply(text), Err(Error::EmptyCloud)));
    }

    #[test]
    fn ply_without_color() {
        let text = "ply\nformat ascii 1.0\ncomment hi\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 1\n1 2 3\n";
        let c = parse_ply(text).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.points[1].position, Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(c.points[1].color, Vector3::from(DEFAULT_COLOR));
    }

    #[test]
    fn ply_truncated_body() {
        let text = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 1\n";
        assert!(matches!(parse_ply(text), Err(Error::Malformed { .. })));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cloud = PointCloud::new(
            (0..200)
                .map(|_| {
                    Point3::new(
                        Vector3::new(
                            rng.random_range(-2.0..2.0),
                            rng.random_range(-2.0..2.0),
                            rng.random_range(0.0..4.0),
                        ),
                        Vector3::new(rng.random_range(0..=255) as f64, 7.0, 250.0),
                    )
                })
                .collect(),
            "rt",
        );
        for format in [CloudFormat::Csv, CloudFormat::PlyAscii] {
            let path = dir
                .path()
                .join(if format == CloudFormat::Csv { "c.csv" } else { "c.ply" });
            save_cloud(&cloud, &path, format).unwrap();
            let back = load_cloud(&path, format).unwrap();
            assert_eq!(back.len(), cloud.len());
            for (a, b) in cloud.points.iter().zip(&back.points) {
                assert!((a.position - b.position).amax() < 1e-6);
                assert_eq!(a.color, b.color);
            }
        }
    }

    #[test]
    fn plane_normals_face_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cloud = PointCloud::new(
            (0..500)
                .map(|_| gray(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0))
                .collect(),
            "plane",
        );
        // Shift the plane off the viewpoint so orientation is defined.
        let mut lifted = cloud.clone();
        lifted.points.iter_mut().for_each(|p| p.position.z = 1.0);
        let out = estimate_normals(&lifted, 10).unwrap();
        for p in &out.points {
            let n = p.normal.unwrap();
            assert!((n.norm() - 1.0).abs() < 1e-6);
            assert!(n.dot(&Vector3::new(0.0, 0.0, -1.0)) > 1f64.to_radians().cos());
        }
        let flat = estimate_normals(&cloud, 10).unwrap();
        for p in &flat.points {
            assert!(p.normal.unwrap().z.abs() > 1f64.to_radians().cos());
        }
    }

    #[test]
    fn k_larger_than_cloud() {
        let cloud = PointCloud::new(vec![gray(0., 0., 0.), gray(1., 0., 0.), gray(0., 1., 0.)], "");
        assert!(matches!(estimate_normals(&cloud, 5), Err(Error::Parameter(_))));
        assert!(matches!(estimate_normals(&cloud, 2), Err(Error::Parameter(_))));
    }

    #[test]
    fn cube_corners_single_cell() {
        let corners: Vec<Point3> = (0..8)
            .map(|i| gray((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
            .collect();
        let cloud = PointCloud::new(corners, "cube");
        let g = voxel_downsample(&cloud, 2.0).unwrap();
        assert_eq!(g.len(), 1);
        assert!((g.point(0).position - Vector3::repeat(0.5)).norm() < 1e-12);
        assert_eq!(voxel_downsample(&cloud, 0.4).unwrap().len(), 8);
        assert!(matches!(voxel_downsample(&cloud, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(voxel_downsample(&cloud, -1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn voxel_means_normals_and_colors() {
        let a = Point3::new(Vector3::new(0.1, 0.1, 0.1), Vector3::new(0.0, 10.0, 20.0))
            .with_normal(Vector3::new(1.0, 0.0, 0.0));
        let b = Point3::new(Vector3::new(0.3, 0.1, 0.1), Vector3::new(10.0, 10.0, 0.0))
            .with_normal(Vector3::new(0.0, 1.0, 0.0));
        let g = voxel_downsample(&PointCloud::new(vec![a, b], ""), 1.0).unwrap();
        let rep = g.point(0);
        assert_eq!(rep.color, Vector3::new(5.0, 10.0, 10.0));
        let n = rep.normal.unwrap();
        assert!((n - Vector3::new(1.0, 1.0, 0.0).normalize()).norm() < 1e-12);
    }
}
