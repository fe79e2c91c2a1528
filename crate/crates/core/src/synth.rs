//! Seeded tabletop scenes: a textured support plane, a handful of primitive
//! objects with class-specific shape and color, a pinhole camera and ground
//! truth for every point and object.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::{bbox_from_points, BBox2D, CameraModel};
use crate::cloud::{save_cloud, CloudFormat, Point3, PointCloud};
use crate::error::{Error, Result};
use crate::image::RgbImage;

pub const BACKGROUND: &str = "background";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    /// Full extents along x, y, z before yaw.
    Box {
        size: [f64; 3],
    },
    Sphere {
        radius: f64,
    },
    /// Upright cylinder.
    Cylinder {
        radius: f64,
        height: f64,
    },
}

impl Shape {
    pub fn name(&self) -> &'static str {
        match self {
            Shape::Box { .. } => "box",
            Shape::Sphere { .. } => "sphere",
            Shape::Cylinder { .. } => "cylinder",
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Shape::Box { size } => size.iter().all(|s| *s > 0.0),
            Shape::Sphere { radius } => radius > 0.0,
            Shape::Cylinder { radius, height } => radius > 0.0 && height > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Spec(format!("non-positive dimensions in {self:?}")))
        }
    }

    /// Radius of the footprint circle on the plane.
    pub fn footprint_radius(&self) -> f64 {
        match *self {
            Shape::Box { size } => 0.5 * size[0].hypot(size[1]),
            Shape::Sphere { radius } => radius,
            Shape::Cylinder { radius, .. } => radius,
        }
    }

    pub fn surface_area(&self) -> f64 {
        match *self {
            Shape::Box { size: [a, b, c] } => 2.0 * (a * b + a * c + b * c),
            Shape::Sphere { radius } => 4.0 * PI * radius * radius,
            Shape::Cylinder { radius, height } => 2.0 * PI * radius * (radius + height),
        }
    }
}

/// Position of the object's lowest point (`z` is its elevation above the
/// plane) plus a rotation about the vertical axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 3],
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub color: [u8; 3],
    pub pose: Pose,
    pub class: usize,
}

/// Rectangular support plane at `z = 0` centered on the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneSpec {
    pub extent: [f64; 2],
    pub color: [u8; 3],
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub scene_id: String,
    pub objects: Vec<ObjectSpec>,
    pub plane: PlaneSpec,
    pub camera: CameraModel,
    pub points_per_object: usize,
    pub noise_sigma: f64,
    /// Per-channel standard deviation of point colors around the albedo.
    pub color_noise: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.points_per_object == 0 {
            return Err(Error::Spec("points_per_object must be >= 1".into()));
        }
        if !(self.noise_sigma >= 0.0) || !(self.color_noise >= 0.0) {
            return Err(Error::Spec("noise levels must be >= 0".into()));
        }
        if !(self.plane.extent[0] > 0.0 && self.plane.extent[1] > 0.0) {
            return Err(Error::Spec("plane extent must be positive".into()));
        }
        for (i, o) in self.objects.iter().enumerate() {
            o.shape.validate()?;
            if o.pose.position[2] < 0.0 {
                return Err(Error::Spec(format!(
                    "object {i} lies below the plane (z = {})",
                    o.pose.position[2]
                )));
            }
        }
        Ok(())
    }
}

/// Ground truth of a generated scene.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Object index per cloud point, −1 for the plane.
    pub point_object: Vec<i64>,
    pub objects: Vec<GroundTruthObject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    pub scene_id: String,
    pub object_id: i64,
    pub class: usize,
    pub class_name: String,
    pub shape: String,
    /// `None` when the object does not project into the image.
    pub bbox: Option<[u32; 4]>,
    pub point_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cloud: PointCloud,
    pub frame: RgbImage,
    pub ground_truth: GroundTruth,
}

/// Uniform point and outward normal on the surface of `shape` in its local
/// frame (origin at the bottom center).
fn sample_surface(shape: &Shape, rng: &mut ChaCha8Rng) -> (Vector3<f64>, Vector3<f64>) {
    match *shape {
        Shape::Box { size: [a, b, c] } => {
            let areas = [b * c, b * c, a * c, a * c, a * b, a * b];
            let total: f64 = areas.iter().sum();
            let mut t = rng.random::<f64>() * total;
            let face = areas.iter().position(|&ar| {
                if t < ar {
                    true
                } else {
                    t -= ar;
                    false
                }
            });
            let face = face.unwrap_or(5);
            let (s, r) = (rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
            match face / 2 {
                0 => (
                    Vector3::new(sign * a / 2.0, s * b, (r + 0.5) * c),
                    Vector3::new(sign, 0.0, 0.0),
                ),
                1 => (
                    Vector3::new(s * a, sign * b / 2.0, (r + 0.5) * c),
                    Vector3::new(0.0, sign, 0.0),
                ),
                _ => (
                    Vector3::new(s * a, r * b, if sign > 0.0 { c } else { 0.0 }),
                    Vector3::new(0.0, 0.0, sign),
                ),
            }
        }
        Shape::Sphere { radius } => {
            let z: f64 = rng.random_range(-1.0..=1.0);
            let phi = rng.random_range(0.0..2.0 * PI);
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let n = Vector3::new(rho * phi.cos(), rho * phi.sin(), z);
            (n * radius + Vector3::new(0.0, 0.0, radius), n)
        }
        Shape::Cylinder { radius, height } => {
            let side = 2.0 * PI * radius * height;
            let cap = PI * radius * radius;
            let t = rng.random::<f64>() * (side + 2.0 * cap);
            let phi = rng.random_range(0.0..2.0 * PI);
            if t < side {
                let n = Vector3::new(phi.cos(), phi.sin(), 0.0);
                (n * radius + Vector3::new(0.0, 0.0, rng.random::<f64>() * height), n)
            } else {
                let r = radius * rng.random::<f64>().sqrt();
                let top = t < side + cap;
                let z = if top { height } else { 0.0 };
                (
                    Vector3::new(r * phi.cos(), r * phi.sin(), z),
                    Vector3::new(0.0, 0.0, if top { 1.0 } else { -1.0 }),
                )
            }
        }
    }
}

fn noisy_color(albedo: [u8; 3], sigma: f64, normal: &Normal<f64>, rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::from_fn(|i, _| {
        let jitter = if sigma > 0.0 { sigma * normal.sample(rng) } else { 0.0 };
        (albedo[i] as f64 + jitter).round().clamp(0.0, 255.0)
    })
}

/// Light direction for frame shading (pointing from the surface to the light).
fn light_dir() -> Vector3<f64> {
    Vector3::new(0.3, -0.4, 1.0).normalize()
}

struct Splat {
    position: Vector3<f64>,
    color: [u8; 3],
    radius_m: f64,
}

fn render(camera: &CameraModel, splats: &[Splat]) -> RgbImage {
    const BACKDROP: [u8; 3] = [40, 40, 46];
    let mut img = RgbImage::filled(camera.width, camera.height, BACKDROP);
    let mut depth = vec![f64::INFINITY; camera.width as usize * camera.height as usize];
    for s in splats {
        let Ok(pr) = camera.project(&s.position) else { continue };
        let r = (s.radius_m * camera.fx / pr.depth).round().max(0.0) as i64;
        let (cu, cv) = (pr.u.round() as i64, pr.v.round() as i64);
        for v in cv - r..=cv + r {
            for u in cu - r..=cu + r {
                if u < 0 || v < 0 || u >= camera.width as i64 || v >= camera.height as i64 {
                    continue;
                }
                let k = v as usize * camera.width as usize + u as usize;
                if pr.depth < depth[k] {
                    depth[k] = pr.depth;
                    img.put(u as u32, v as u32, s.color);
                }
            }
        }
    }
    img
}

/// Samples the scene deterministically from `spec.seed`.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gauss = Normal::new(0.0, 1.0).expect("unit normal");
    let mut points = Vec::with_capacity(spec.plane.points + spec.objects.len() * spec.points_per_object);
    let mut point_object = Vec::with_capacity(points.capacity());
    let mut splats = Vec::with_capacity(points.capacity());
    let light = light_dir();
    let shade = |albedo: &Vector3<f64>, n: &Vector3<f64>| -> [u8; 3] {
        let f = 0.65 + 0.35 * n.dot(&light).abs();
        [0, 1, 2].map(|i| (albedo[i] * f).round().clamp(0.0, 255.0) as u8)
    };

    let [ex, ey] = spec.plane.extent;
    let plane_spacing = (ex * ey / spec.plane.points.max(1) as f64).sqrt();
    for _ in 0..spec.plane.points {
        let p = Vector3::new(
            rng.random_range(-ex / 2.0..ex / 2.0),
            rng.random_range(-ey / 2.0..ey / 2.0),
            spec.noise_sigma * gauss.sample(&mut rng),
        );
        let c = noisy_color(spec.plane.color, spec.color_noise, &gauss, &mut rng);
        splats.push(Splat {
            position: p,
            color: shade(&c, &Vector3::z()),
            radius_m: 0.9 * plane_spacing,
        });
        points.push(Point3::new(p, c));
        point_object.push(-1);
    }

    for (id, obj) in spec.objects.iter().enumerate() {
        let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), obj.pose.yaw);
        let origin = Vector3::from(obj.pose.position);
        let spacing = (obj.shape.surface_area() / spec.points_per_object as f64).sqrt();
        for _ in 0..spec.points_per_object {
            let (local, n) = sample_surface(&obj.shape, &mut rng);
            let noise = Vector3::from_fn(|_, _| spec.noise_sigma * gauss.sample(&mut rng));
            let p = rot * local + origin + noise;
            let c = noisy_color(obj.color, spec.color_noise, &gauss, &mut rng);
            splats.push(Splat {
                position: p,
                color: shade(&c, &(rot * n)),
                radius_m: 0.6 * spacing,
            });
            points.push(Point3::new(p, c));
            point_object.push(id as i64);
        }
    }

    let frame = render(&spec.camera, &splats);
    let objects = spec
        .objects
        .iter()
        .enumerate()
        .map(|(id, obj)| {
            let pts = points
                .iter()
                .zip(&point_object)
                .filter(|(_, &o)| o == id as i64)
                .map(|(p, _)| &p.position);
            GroundTruthObject {
                scene_id: spec.scene_id.clone(),
                object_id: id as i64,
                class: obj.class,
                class_name: String::new(),
                shape: obj.shape.name().to_string(),
                bbox: bbox_from_points(&spec.camera, pts, id as i64).map(|b| b.corners()),
                point_count: spec.points_per_object,
            }
        })
        .collect();
    Ok(Scene {
        cloud: PointCloud::new(points, "world"),
        frame,
        ground_truth: GroundTruth { point_object, objects },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorFamily {
    Warm,
    Cool,
    Neutral,
}

impl ColorFamily {
    pub fn name(&self) -> &'static str {
        match self {
            ColorFamily::Warm => "warm",
            ColorFamily::Cool => "cool",
            ColorFamily::Neutral => "neutral",
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> [u8; 3] {
        let (h, s, v) = match self {
            ColorFamily::Warm => (
                rng.random_range(0.0..50.0),
                rng.random_range(0.6..0.9),
                rng.random_range(0.7..0.95),
            ),
            ColorFamily::Cool => (
                rng.random_range(190.0..250.0),
                rng.random_range(0.6..0.9),
                rng.random_range(0.6..0.9),
            ),
            ColorFamily::Neutral => (0.0, rng.random_range(0.0..0.1), rng.random_range(0.75..0.95)),
        };
        hsv_to_rgb(h, s, v)
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = (h / 60.0).rem_euclid(6.0);
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|t| ((t + m) * 255.0).round() as u8)
}

/// Object classes as (shape kind, color family) pairs; class 0 is the
/// background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRoster {
    pub families: Vec<ColorFamily>,
}

const SHAPE_KINDS: [&str; 3] = ["box", "sphere", "cylinder"];

impl ClassRoster {
    /// 3 shapes × 2 families plus background.
    pub fn six() -> Self {
        Self {
            families: vec![ColorFamily::Warm, ColorFamily::Cool],
        }
    }

    /// 3 shapes × 3 families plus background.
    pub fn nine() -> Self {
        Self {
            families: vec![ColorFamily::Warm, ColorFamily::Cool, ColorFamily::Neutral],
        }
    }

    /// Total number of classes including the background.
    pub fn num_classes(&self) -> usize {
        1 + SHAPE_KINDS.len() * self.families.len()
    }

    pub fn class_names(&self) -> Vec<String> {
        let mut names = vec![BACKGROUND.to_string()];
        for shape in SHAPE_KINDS {
            for f in &self.families {
                names.push(format!("{shape}_{}", f.name()));
            }
        }
        names
    }

    fn decompose(&self, class: usize) -> (usize, ColorFamily) {
        let k = class - 1;
        (k / self.families.len(), self.families[k % self.families.len()])
    }
}

/// Parameters for random scene layouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub objects_per_scene: usize,
    pub points_per_object: usize,
    pub plane_points: usize,
    pub plane_extent: [f64; 2],
    pub plane_color: [u8; 3],
    pub noise_sigma: f64,
    pub color_noise: f64,
    /// Minimum gap between object footprints.
    pub min_gap: f64,
    pub color_families: usize,
    pub intrinsics: [f64; 4],
    pub image_size: [u32; 2],
    pub camera_eye: [f64; 3],
    /// Uniform per-axis perturbation of the camera position.
    pub camera_jitter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            objects_per_scene: 5,
            points_per_object: 1200,
            plane_points: 8000,
            plane_extent: [0.9, 0.7],
            plane_color: [150, 132, 110],
            noise_sigma: 0.001,
            color_noise: 1.5,
            min_gap: 0.04,
            color_families: 2,
            intrinsics: [525.0, 525.0, 319.5, 239.5],
            image_size: [640, 480],
            camera_eye: [0.0, -0.45, 0.6],
            camera_jitter: 0.03,
        }
    }
}

impl SynthConfig {
    pub fn roster(&self) -> Result<ClassRoster> {
        match self.color_families {
            2 => Ok(ClassRoster::six()),
            3 => Ok(ClassRoster::nine()),
            n => Err(Error::config(format!("color_families must be 2 or 3, got {n}"))),
        }
    }
}

fn random_shape(kind: usize, rng: &mut ChaCha8Rng) -> Shape {
    match kind {
        0 => Shape::Box {
            size: [
                rng.random_range(0.07..0.11),
                rng.random_range(0.06..0.10),
                rng.random_range(0.035..0.06),
            ],
        },
        1 => Shape::Sphere {
            radius: rng.random_range(0.03..0.045),
        },
        _ => Shape::Cylinder {
            radius: rng.random_range(0.022..0.032),
            height: rng.random_range(0.08..0.12),
        },
    }
}

/// A random layout with classes drawn uniformly and non-overlapping footprints.
pub fn random_scene_spec(cfg: &SynthConfig, scene_id: &str, seed: u64) -> Result<SceneSpec> {
    let roster = cfg.roster()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [ex, ey] = cfg.plane_extent;
    let (hx, hy) = (ex / 2.0 - 0.08, ey / 2.0 - 0.08);
    if hx <= 0.0 || hy <= 0.0 {
        return Err(Error::config("plane too small for object placement"));
    }
    let mut objects: Vec<ObjectSpec> = Vec::with_capacity(cfg.objects_per_scene);
    let mut attempts = 0;
    while objects.len() < cfg.objects_per_scene {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::config(format!(
                "could not place {} objects on the plane",
                cfg.objects_per_scene
            )));
        }
        let class = rng.random_range(1..roster.num_classes());
        let (kind, family) = roster.decompose(class);
        let shape = random_shape(kind, &mut rng);
        let color = family.sample(&mut rng);
        let pos = [rng.random_range(-hx..hx), rng.random_range(-hy..hy), 0.0];
        let r = shape.footprint_radius();
        let clear = objects.iter().all(|o| {
            let d = (o.pose.position[0] - pos[0]).hypot(o.pose.position[1] - pos[1]);
            d - r - o.shape.footprint_radius() >= cfg.min_gap
        });
        if !clear {
            continue;
        }
        let pose = Pose {
            position: pos,
            yaw: rng.random_range(0.0..PI),
        };
        objects.push(ObjectSpec {
            shape,
            color,
            pose,
            class,
        });
    }

    let jitter = Vector3::from_fn(|_, _| rng.random_range(-1.0..=1.0) * cfg.camera_jitter);
    let eye = Vector3::from(cfg.camera_eye) + jitter;
    let camera = CameraModel::look_at(
        cfg.intrinsics,
        eye,
        Vector3::zeros(),
        Vector3::z(),
        cfg.image_size[0],
        cfg.image_size[1],
    )?;
    Ok(SceneSpec {
        scene_id: scene_id.to_string(),
        objects,
        plane: PlaneSpec {
            extent: cfg.plane_extent,
            color: cfg.plane_color,
            points: cfg.plane_points,
        },
        camera,
        points_per_object: cfg.points_per_object,
        noise_sigma: cfg.noise_sigma,
        color_noise: cfg.color_noise,
        seed: rng.random(),
    })
}

/// File names of one emitted scene inside a scene directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneFiles {
    pub cloud: std::path::PathBuf,
    pub frame: std::path::PathBuf,
    pub camera: std::path::PathBuf,
    pub ground_truth: std::path::PathBuf,
    pub point_labels: std::path::PathBuf,
}

impl SceneFiles {
    pub fn new(dir: &Path, scene_id: &str) -> Self {
        Self {
            cloud: dir.join(format!("{scene_id}.ply")),
            frame: dir.join(format!("{scene_id}.ppm")),
            camera: dir.join(format!("{scene_id}.camera.json")),
            ground_truth: dir.join(format!("{scene_id}.gt.jsonl")),
            point_labels: dir.join(format!("{scene_id}.points.txt")),
        }
    }
}

/// Writes cloud, frame, camera and ground truth for one scene.
pub fn write_scene(dir: &Path, spec: &SceneSpec, scene: &Scene, class_names: &[String]) -> Result<SceneFiles> {
    let files = SceneFiles::new(dir, &spec.scene_id);
    save_cloud(&scene.cloud, &files.cloud, CloudFormat::PlyAscii)?;
    scene.frame.save(&files.frame)?;
    spec.camera.save(&files.camera)?;
    let mut gt = String::new();
    for o in &scene.ground_truth.objects {
        let mut o = o.clone();
        o.class_name = class_names.get(o.class).cloned().unwrap_or_default();
        gt.push_str(&serde_json::to_string(&o)?);
        gt.push('\n');
    }
    std::fs::write(&files.ground_truth, gt).map_err(|e| Error::file(&files.ground_truth, e))?;
    let mut ids = String::with_capacity(scene.ground_truth.point_object.len() * 3);
    for id in &scene.ground_truth.point_object {
        let _ = writeln!(ids, "{id}");
    }
    std::fs::write(&files.point_labels, ids).map_err(|e| Error::file(&files.point_labels, e))?;
    Ok(files)
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GroundTruthObject>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Malformed {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

impl GroundTruthObject {
    pub fn bbox2d(&self) -> Option<BBox2D> {
        self.bbox.map(|c| BBox2D::new(c, self.object_id))
    }
}
