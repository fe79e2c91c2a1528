//! Pinhole camera model, projection of world points to pixels, 2D box
//! formation for 3D proposals and thumbnail cropping.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::cloud::VoxelGrid;
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::objectness::Cluster3D;

/// Intrinsics plus world-to-camera extrinsics, `x_cam = R·x_world + t`.
/// Camera axes: x right, y down, z along the optical axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraFile", into = "CameraFile")]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub width: u32,
    pub height: u32,
}

/// On-disk camera JSON layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CameraFile {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    /// Row-major rotation.
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
    width: u32,
    height: u32,
}

impl TryFrom<CameraFile> for CameraModel {
    type Error = Error;

    fn try_from(f: CameraFile) -> Result<Self> {
        CameraModel::new(
            [f.fx, f.fy, f.cx, f.cy],
            Matrix3::from_row_slice(&f.r),
            Vector3::from(f.t),
            f.width,
            f.height,
        )
    }
}

impl From<CameraModel> for CameraFile {
    fn from(c: CameraModel) -> Self {
        let r = c.rotation;
        CameraFile {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            r: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            t: [c.translation.x, c.translation.y, c.translation.z],
            width: c.width,
            height: c.height,
        }
    }
}

/// Pixel coordinates plus camera-frame depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

const MIN_DEPTH: f64 = 1e-9;

impl CameraModel {
    /// `intrinsics` is `[fx, fy, cx, cy]`.
    pub fn new(
        intrinsics: [f64; 4],
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let [fx, fy, cx, cy] = intrinsics;
        if !(fx > 0.0 && fy > 0.0) || !cx.is_finite() || !cy.is_finite() {
            return Err(Error::param(format!("invalid intrinsics {intrinsics:?}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::param("image size must be positive"));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if ortho > 1e-6 || (rotation.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::param("rotation must be orthonormal with determinant +1"));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::param("translation must be finite"));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            width,
            height,
        })
    }

    /// Camera at `eye` looking at `target`, with `up` the world direction that
    /// should appear upward in the image.
    pub fn look_at(
        intrinsics: [f64; 4],
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let z = (target - eye).normalize();
        let up_perp = up - z * up.dot(&z);
        if up_perp.norm() < 1e-9 {
            return Err(Error::param("up vector is parallel to the viewing direction"));
        }
        let y = -up_perp.normalize();
        let x = y.cross(&z);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Self::new(intrinsics, rotation, -rotation * eye, width, height)
    }

    /// Optical center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -self.rotation.transpose() * self.translation
    }

    pub fn to_camera(&self, p_world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p_world + self.translation
    }

    /// `d·[u, v, 1]ᵀ = K·(R·p + t)`.
    pub fn project(&self, p_world: &Vector3<f64>) -> Result<Projection> {
        let pc = self.to_camera(p_world);
        if pc.z <= MIN_DEPTH {
            return Err(Error::BehindCamera(pc.z));
        }
        Ok(Projection {
            u: self.fx * pc.x / pc.z + self.cx,
            v: self.fy * pc.y / pc.z + self.cy,
            depth: pc.z,
        })
    }

    /// Inverse of [`project`](Self::project).
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        let pc = Vector3::new((u - self.cx) * depth / self.fx, (v - self.cy) * depth / self.fy, depth);
        self.rotation.transpose() * (pc - self.translation)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::file(path, e))
    }
}

/// Inclusive integer pixel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox2D {
    pub u_min: u32,
    pub v_min: u32,
    pub u_max: u32,
    pub v_max: u32,
    pub source_cluster: i64,
}

impl BBox2D {
    pub fn new(corners: [u32; 4], source_cluster: i64) -> Self {
        let [u_min, v_min, u_max, v_max] = corners;
        debug_assert!(u_min <= u_max && v_min <= v_max);
        Self {
            u_min,
            v_min,
            u_max,
            v_max,
            source_cluster,
        }
    }

    pub fn corners(&self) -> [u32; 4] {
        [self.u_min, self.v_min, self.u_max, self.v_max]
    }

    pub fn width(&self) -> u32 {
        self.u_max - self.u_min + 1
    }

    pub fn height(&self) -> u32 {
        self.v_max - self.v_min + 1
    }

    /// Pixel count, both edges inclusive.
    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.u_min <= self.u_max && self.v_min <= self.v_max && self.u_max < width && self.v_max < height
    }

    pub fn contains(&self, other: &BBox2D) -> bool {
        self.u_min <= other.u_min && self.v_min <= other.v_min && self.u_max >= other.u_max && self.v_max >= other.v_max
    }
}

/// Box around the in-front projections of `points`. Corners round outward and
/// are clamped to the image; `None` when fewer than 3 points project in front
/// of the camera, when the projected extent is degenerate, or when the box
/// misses the image.
pub fn bbox_from_points<'a>(
    cam: &CameraModel,
    points: impl IntoIterator<Item = &'a Vector3<f64>>,
    source_cluster: i64,
) -> Option<BBox2D> {
    let mut count = 0usize;
    let (mut u0, mut v0, mut u1, mut v1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        if let Ok(pr) = cam.project(p) {
            count += 1;
            u0 = u0.min(pr.u);
            v0 = v0.min(pr.v);
            u1 = u1.max(pr.u);
            v1 = v1.max(pr.v);
        }
    }
    if count < 3 {
        return None;
    }
    let (u0, v0, u1, v1) = (u0.floor(), v0.floor(), u1.ceil(), v1.ceil());
    if u1 - u0 <= 0.0 || v1 - v0 <= 0.0 {
        return None;
    }
    let (w, h) = (cam.width as f64, cam.height as f64);
    if u1 < 0.0 || v1 < 0.0 || u0 > w - 1.0 || v0 > h - 1.0 {
        return None;
    }
    Some(BBox2D::new(
        [
            u0.max(0.0) as u32,
            v0.max(0.0) as u32,
            u1.min(w - 1.0) as u32,
            v1.min(h - 1.0) as u32,
        ],
        source_cluster,
    ))
}

pub fn cluster_to_bbox(cam: &CameraModel, cluster: &Cluster3D, grid: &VoxelGrid, cluster_id: i64) -> Option<BBox2D> {
    bbox_from_points(
        cam,
        cluster.member_indices.iter().map(|&i| &grid.point(i).position),
        cluster_id,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Thumbnail {
    pub image: RgbImage,
    pub origin_bbox: BBox2D,
    pub scene_id: String,
}

/// Pixel-exact copy of the boxed region.
pub fn crop_thumbnail(image: &RgbImage, bbox: &BBox2D, scene_id: &str) -> Result<Thumbnail> {
    if !bbox.fits(image.width, image.height) {
        return Err(Error::param(format!(
            "bbox {:?} outside {}x{} image",
            bbox.corners(),
            image.width,
            image.height
        )));
    }
    let mut out = RgbImage::new(bbox.width(), bbox.height());
    for v in 0..bbox.height() {
        let src = image.offset_of(bbox.u_min, bbox.v_min + v);
        let dst = (v * bbox.width()) as usize * 3;
        let len = bbox.width() as usize * 3;
        out.data[dst..dst + len].copy_from_slice(&image.data[src..src + len]);
    }
    Ok(Thumbnail {
        image: out,
        origin_bbox: *bbox,
        scene_id: scene_id.to_string(),
    })
}

/// One record of the annotation JSON-lines file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub scene_id: String,
    pub bbox: [u32; 4],
    pub cluster_id: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
}

impl Annotation {
    pub fn unlabeled(scene_id: &str, bbox: &BBox2D) -> Self {
        Self {
            scene_id: scene_id.to_string(),
            bbox: bbox.corners(),
            cluster_id: bbox.source_cluster,
            label: None,
            probs: None,
        }
    }

    pub fn bbox(&self) -> BBox2D {
        BBox2D::new(self.bbox, self.cluster_id)
    }

    /// `(scene_id, cluster_id)` identifies an annotation across stage files.
    pub fn key(&self) -> (String, i64) {
        (self.scene_id.clone(), self.cluster_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Point3;

    fn identity(f: f64, c: [f64; 2], w: u32, h: u32) -> CameraModel {
        CameraModel::new([f, f, c[0], c[1]], Matrix3::identity(), Vector3::zeros(), w, h).unwrap()
    }

    #[test]
    fn optical_axis_identity() {
        let cam = identity(1.0, [0.0, 0.0], 10, 10);
        let p = cam.project(&Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!((p.u, p.v, p.depth), (0.0, 0.0, 1.0));
    }

    #[test]
    fn hand_computed_pinhole() {
        let cam = identity(500.0, [320.0, 240.0], 640, 480);
        let p = cam.project(&Vector3::new(0.1, -0.05, 2.0)).unwrap();
        assert_eq!((p.u, p.v, p.depth), (345.0, 227.5, 2.0));
    }

    #[test]
    fn behind_camera() {
        let cam = identity(1.0, [0.0, 0.0], 10, 10);
        assert!(matches!(
            cam.project(&Vector3::new(0.0, 0.0, -1.0)),
            Err(Error::BehindCamera(_))
        ));
        assert!(matches!(
            cam.project(&Vector3::new(1.0, 0.0, 0.0)),
            Err(Error::BehindCamera(_))
        ));
    }

    #[test]
    fn doubling_intrinsics_doubles_pixels() {
        let a = identity(300.0, [0.0, 0.0], 640, 480);
        let b = identity(600.0, [0.0, 0.0], 640, 480);
        let p = Vector3::new(0.3, -0.2, 1.7);
        let (pa, pb) = (a.project(&p).unwrap(), b.project(&p).unwrap());
        assert!((2.0 * pa.u - pb.u).abs() < 1e-12 && (2.0 * pa.v - pb.v).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_rotation() {
        let r = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(CameraModel::new([1.0, 1.0, 0.0, 0.0], r, Vector3::zeros(), 1, 1).is_err());
        assert!(CameraModel::new([0.0, 1.0, 0.0, 0.0], Matrix3::identity(), Vector3::zeros(), 1, 1).is_err());
    }

    #[test]
    fn look_at_round_trip_and_json() {
        let cam = CameraModel::look_at(
            [525.0, 525.0, 320.0, 240.0],
            Vector3::new(0.0, -0.7, 0.8),
            Vector3::zeros(),
            Vector3::z(),
            640,
            480,
        )
        .unwrap();
        assert!((cam.center() - Vector3::new(0.0, -0.7, 0.8)).norm() < 1e-12);
        let target = cam.project(&Vector3::zeros()).unwrap();
        assert!((target.u - 320.0).abs() < 1e-9 && (target.v - 240.0).abs() < 1e-9);
        // World +z must appear upward (smaller v).
        assert!(cam.project(&Vector3::new(0.0, 0.0, 0.1)).unwrap().v < target.v);
        let p = Vector3::new(0.1, 0.05, 0.02);
        let pr = cam.project(&p).unwrap();
        assert!((cam.unproject(pr.u, pr.v, pr.depth) - p).norm() < 1e-12);

        let json = serde_json::to_string(&cam).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["R"].as_array().unwrap().len(), 9);
        let back: CameraModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cam);
    }

    fn grid_of(points: Vec<Vector3<f64>>) -> (VoxelGrid, Cluster3D) {
        let pts = points.into_iter().map(|p| Point3::new(p, Vector3::zeros())).collect();
        let grid = VoxelGrid::from_points(pts, 0.01).unwrap();
        let n = grid.len();
        let cluster = Cluster3D::from_members(&grid, (0..n).collect());
        (grid, cluster)
    }

    #[test]
    fn single_voxel_has_no_box() {
        let cam = identity(1.0, [0.0, 0.0], 10, 10);
        let (grid, cluster) = grid_of(vec![Vector3::new(0.0, 0.0, 1.0)]);
        assert_eq!(cluster_to_bbox(&cam, &cluster, &grid, 0), None);
    }

    #[test]
    fn cube_box_matches_corner_projection() {
        let cam = identity(500.0, [320.0, 240.0], 640, 480);
        let mut pts = Vec::new();
        let origin = Vector3::new(-0.05, -0.03, 1.0);
        for i in 0..10 {
            for j in 0..10 {
                for k in 0..10 {
                    pts.push(origin + Vector3::new(i as f64, j as f64, k as f64) * 0.01 + Vector3::repeat(0.005));
                }
            }
        }
        let (grid, cluster) = grid_of(pts);
        let bbox = cluster_to_bbox(&cam, &cluster, &grid, 7).unwrap();
        let corners: Vec<Projection> = (0..8)
            .map(|c| {
                let off = Vector3::new((c & 1) as f64, ((c >> 1) & 1) as f64, ((c >> 2) & 1) as f64) * 0.09;
                cam.project(&(origin + Vector3::repeat(0.005) + off)).unwrap()
            })
            .collect();
        let umin = corners.iter().map(|p| p.u).fold(f64::INFINITY, f64::min).floor() as u32;
        let umax = corners.iter().map(|p| p.u).fold(f64::NEG_INFINITY, f64::max).ceil() as u32;
        let vmin = corners.iter().map(|p| p.v).fold(f64::INFINITY, f64::min).floor() as u32;
        let vmax = corners.iter().map(|p| p.v).fold(f64::NEG_INFINITY, f64::max).ceil() as u32;
        assert_eq!(bbox.corners(), [umin, vmin, umax, vmax]);
        assert_eq!(bbox.source_cluster, 7);
    }

    #[test]
    fn border_straddling_box_is_clamped() {
        let cam = identity(100.0, [50.0, 40.0], 100, 80);
        let pts = vec![
            Vector3::new(-1.0, -1.0, 1.0),
            Vector3::new(1.0, 1.0, 1.0),
            Vector3::new(0.0, 0.0, 1.0),
        ];
        let bbox = bbox_from_points(&cam, &pts, 0).unwrap();
        assert_eq!(bbox.corners(), [0, 0, 99, 79]);
        let outside = vec![
            Vector3::new(5.0, 0.0, 1.0),
            Vector3::new(6.0, 0.1, 1.0),
            Vector3::new(7.0, 0.2, 1.0),
        ];
        assert_eq!(bbox_from_points(&cam, &outside, 0), None);
    }

    fn patterned(w: u32, h: u32) -> RgbImage {
        let mut img = RgbImage::new(w, h);
        for v in 0..h {
            for u in 0..w {
                img.put(u, v, [u as u8, v as u8, (u * 7 + v * 3) as u8]);
            }
        }
        img
    }

    #[test]
    fn crops() {
        let img = patterned(20, 15);
        let full = crop_thumbnail(&img, &BBox2D::new([0, 0, 19, 14], 0), "s").unwrap();
        assert_eq!(full.image, img);
        let px = crop_thumbnail(&img, &BBox2D::new([5, 7, 5, 7], 0), "s").unwrap();
        assert_eq!((px.image.width, px.image.height), (1, 1));
        assert_eq!(px.image.get(0, 0), img.get(5, 7));
        assert!(crop_thumbnail(&img, &BBox2D::new([5, 7, 20, 7], 0), "s").is_err());
    }

    #[test]
    fn nested_crop_composes() {
        let img = patterned(30, 30);
        let outer = crop_thumbnail(&img, &BBox2D::new([4, 6, 25, 20], 0), "s").unwrap();
        let inner = crop_thumbnail(&outer.image, &BBox2D::new([3, 2, 10, 9], 0), "s").unwrap();
        let direct = crop_thumbnail(&img, &BBox2D::new([7, 8, 14, 15], 0), "s").unwrap();
        assert_eq!(inner.image, direct.image);
    }

    #[test]
    fn annotation_optional_fields() {
        let a = Annotation::unlabeled("scene_0001", &BBox2D::new([1, 2, 3, 4], 5));
        let line = serde_json::to_string(&a).unwrap();
        assert_eq!(line, r#"{"scene_id":"scene_0001","bbox":[1,2,3,4],"cluster_id":5}"#);
        let back: Annotation = serde_json::from_str(&line).unwrap();
        assert_eq!(back, a);
    }
}
