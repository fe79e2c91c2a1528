//! Python bindings. Vectors and matrices cross the boundary as plain lists;
//! matrices are lists of rows.

use std::path::PathBuf;

use autolabel::camera::BBox2D;
use autolabel::cloud::{Point3, PointCloud};
use autolabel::distill::{self, DistillConfig, LossKind, StudentArch, StudentModel};
use autolabel::objectness::{self, ConnectabilityParams};
use autolabel::pipeline::{self, ModelKind, PipelineConfig, Split};
use autolabel::synth::{self, SynthConfig};
use autolabel::teacher::{self, SvgpInit, SvgpModel, TrainConfig};
use autolabel::Error;
use nalgebra::{DMatrix, Matrix3, Vector3};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::File { .. } | Error::Io(_) => PyOSError::new_err(e.to_string()),
        Error::Config(_) | Error::Parameter(_) | Error::Spec(_) | Error::Malformed { .. } | Error::Json(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn vec3(v: [f64; 3]) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

fn arr3(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Pinhole camera with world-to-camera extrinsics.
#[pyclass(name = "CameraModel", from_py_object)]
#[derive(Clone)]
struct PyCamera(autolabel::camera::CameraModel);

#[pymethods]
impl PyCamera {
    #[new]
    fn new(
        intrinsics: [f64; 4],
        rotation: [[f64; 3]; 3],
        translation: [f64; 3],
        width: u32,
        height: u32,
    ) -> PyResult<Self> {
        let r = Matrix3::from_fn(|i, j| rotation[i][j]);
        autolabel::camera::CameraModel::new(intrinsics, r, vec3(translation), width, height)
            .map(Self)
            .map_err(py_err)
    }

    #[staticmethod]
    #[pyo3(signature = (intrinsics, eye, target, up=[0.0, 0.0, 1.0], width=640, height=480))]
    fn look_at(
        intrinsics: [f64; 4],
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
        width: u32,
        height: u32,
    ) -> PyResult<Self> {
        autolabel::camera::CameraModel::look_at(intrinsics, vec3(eye), vec3(target), vec3(up), width, height)
            .map(Self)
            .map_err(py_err)
    }

    /// `(u, v, depth)` of a world point.
    fn project(&self, point: [f64; 3]) -> PyResult<(f64, f64, f64)> {
        let p = self.0.project(&vec3(point)).map_err(py_err)?;
        Ok((p.u, p.v, p.depth))
    }

    fn unproject(&self, u: f64, v: f64, depth: f64) -> [f64; 3] {
        arr3(&self.0.unproject(u, v, depth))
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(|e| py_err(e.into()))
    }
}

/// Box overlap with inclusive pixel corners `[u_min, v_min, u_max, v_max]`.
#[pyfunction]
fn iou(a: [u32; 4], b: [u32; 4]) -> PyResult<f64> {
    if a[0] > a[2] || a[1] > a[3] || b[0] > b[2] || b[1] > b[3] {
        return Err(PyValueError::new_err("box corners must satisfy min <= max"));
    }
    Ok(autolabel::eval::iou(&BBox2D::new(a, -1), &BBox2D::new(b, -1)))
}

#[pyfunction]
fn soften(probs: Vec<f64>, temperature: f64) -> Vec<f64> {
    distill::soften(&probs, temperature)
}

/// Loss and its gradient with respect to the student logits.
#[pyfunction]
fn distill_loss(kind: &str, logits: Vec<f64>, teacher_probs: Vec<f64>, temperature: f64) -> PyResult<(f64, Vec<f64>)> {
    let kind: LossKind = kind.parse().map_err(py_err)?;
    distill::loss_and_grad(kind, &logits, &teacher_probs, temperature).map_err(py_err)
}

/// Points are `[x, y, z, r, g, b]`, normals `[nx, ny, nz]`. Returns the three
/// cue scores and whether the pair is connected.
#[pyfunction]
#[pyo3(signature = (p1, n1, p2, n2, sigma_d=0.02, sigma_c=8.0, sigma_s=10.0))]
fn connectability(
    p1: [f64; 6],
    n1: [f64; 3],
    p2: [f64; 6],
    n2: [f64; 3],
    sigma_d: f64,
    sigma_c: f64,
    sigma_s: f64,
) -> PyResult<(f64, f64, f64, bool)> {
    let point = |p: [f64; 6], n: [f64; 3]| {
        Point3::new(Vector3::new(p[0], p[1], p[2]), Vector3::new(p[3], p[4], p[5])).with_normal(vec3(n))
    };
    let params = ConnectabilityParams {
        sigma_d,
        sigma_c,
        sigma_s,
        ..Default::default()
    };
    let c = objectness::connectability(&point(p1, n1), &point(p2, n2), &params).map_err(py_err)?;
    Ok((c.distance, c.color, c.shape, c.connected))
}

/// `(voxel_count, centroid, aabb_min, aabb_max)`.
type Proposal = (usize, [f64; 3], [f64; 3], [f64; 3]);

/// Object proposals in a cloud of `[x, y, z, r, g, b]` rows, largest first.
#[pyfunction]
#[pyo3(signature = (points, viewpoint=[0.0, 0.0, 0.0]))]
fn detect_objects(points: Vec<[f64; 6]>, viewpoint: [f64; 3]) -> PyResult<Vec<Proposal>> {
    let cloud = PointCloud::new(
        points
            .iter()
            .map(|p| Point3::new(Vector3::new(p[0], p[1], p[2]), Vector3::new(p[3], p[4], p[5])))
            .collect(),
        "python",
    );
    let cfg = PipelineConfig::default().objectness;
    let det = objectness::detect_objects(&cloud, &cfg, &vec3(viewpoint)).map_err(py_err)?;
    Ok(det
        .clusters
        .iter()
        .map(|c| (c.len(), arr3(&c.centroid), arr3(&c.aabb_min), arr3(&c.aabb_max)))
        .collect())
}

/// Synthetic tabletop scene.
#[pyclass(name = "Scene")]
struct PyScene {
    #[pyo3(get)]
    points: Vec<[f64; 6]>,
    /// Object index per point, -1 for the table.
    #[pyo3(get)]
    point_object: Vec<i64>,
    /// `(object_id, class_name, bbox or None)` per object.
    #[pyo3(get)]
    objects: Vec<(i64, String, Option<[u32; 4]>)>,
    #[pyo3(get)]
    camera: PyCamera,
}

#[pyfunction]
#[pyo3(signature = (seed, scene_id="scene"))]
fn generate_scene(seed: u64, scene_id: &str) -> PyResult<PyScene> {
    let spec = synth::random_scene_spec(&SynthConfig::default(), scene_id, seed).map_err(py_err)?;
    let scene = synth::generate_scene(&spec).map_err(py_err)?;
    Ok(PyScene {
        points: scene
            .cloud
            .points
            .iter()
            .map(|p| {
                [
                    p.position.x,
                    p.position.y,
                    p.position.z,
                    p.color.x,
                    p.color.y,
                    p.color.z,
                ]
            })
            .collect(),
        point_object: scene.ground_truth.point_object,
        objects: scene
            .ground_truth
            .objects
            .into_iter()
            .map(|o| (o.object_id, o.class_name, o.bbox))
            .collect(),
        camera: PyCamera(spec.camera),
    })
}

/// Sparse variational GP classifier.
#[pyclass(name = "Teacher")]
struct PyTeacher {
    model: SvgpModel,
    #[pyo3(get)]
    elbo_trace: Vec<f64>,
}

#[pymethods]
impl PyTeacher {
    #[staticmethod]
    #[pyo3(signature = (x, y, num_classes, num_inducing=64, epochs=100, batch_size=32, lr=1e-3, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        x: Vec<Vec<f64>>,
        y: Vec<usize>,
        num_classes: usize,
        num_inducing: usize,
        epochs: usize,
        batch_size: usize,
        lr: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let x = matrix(&x)?;
        let init = SvgpInit {
            num_inducing,
            ..Default::default()
        };
        let model = teacher::init_svgp(&x, num_classes, &init, seed).map_err(py_err)?;
        let cfg = TrainConfig {
            epochs,
            batch_size,
            lr0: lr,
            seed,
            ..Default::default()
        };
        let (model, trace) = teacher::train_teacher(&model, &x, &y, &cfg).map_err(py_err)?;
        Ok(Self {
            model,
            elbo_trace: trace.epoch_elbo,
        })
    }

    #[pyo3(signature = (x, mc_samples=16, seed=0))]
    fn predict_proba(&self, x: Vec<Vec<f64>>, mc_samples: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        let labels = self
            .model
            .predict_proba_batch(&matrix(&x)?, mc_samples, seed)
            .map_err(py_err)?;
        Ok(labels.into_iter().map(|l| l.probs).collect())
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.model.num_classes()
    }
}

/// Small MLP trained on (soft) targets.
#[pyclass(name = "Student")]
struct PyStudent {
    model: StudentModel,
    #[pyo3(get)]
    loss_trace: Vec<f64>,
}

#[pymethods]
impl PyStudent {
    #[staticmethod]
    #[pyo3(signature = (x, targets, hidden=vec![64], temperature=2.0, loss="sse", epochs=100, lr=1e-3, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        x: Vec<Vec<f64>>,
        targets: Vec<Vec<f64>>,
        hidden: Vec<usize>,
        temperature: f64,
        loss: &str,
        epochs: usize,
        lr: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let x = matrix(&x)?;
        let num_classes = targets.first().map_or(0, Vec::len);
        let cfg = DistillConfig {
            temperature,
            loss_kind: loss.parse().map_err(py_err)?,
            epochs,
            lr,
            seed,
            hidden: hidden.clone(),
            ..Default::default()
        };
        let arch = StudentArch {
            input_dim: x.ncols(),
            hidden,
            num_classes,
        };
        let init = StudentModel::new(arch, seed).map_err(py_err)?;
        let (model, trace) = distill::train_student(&init, &x, &targets, &cfg).map_err(py_err)?;
        Ok(Self {
            model,
            loss_trace: trace.iter().map(|e| e.loss).collect(),
        })
    }

    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let labels = distill::student_predict_batch(&self.model, &matrix(&x)?).map_err(py_err)?;
        Ok(labels.into_iter().map(|l| l.probs).collect())
    }
}

/// The file-based pipeline driven by one configuration.
#[pyclass(name = "Pipeline")]
struct PyPipeline {
    cfg: PipelineConfig,
}

fn split(name: &str) -> PyResult<Split> {
    name.parse().map_err(py_err)
}

#[pymethods]
impl PyPipeline {
    /// Loads `config_path` when given, otherwise uses defaults rooted at
    /// `workdir` (scenes in `workdir/scenes`, outputs in `workdir/work`).
    #[new]
    #[pyo3(signature = (config_path=None, workdir=None, seed=None))]
    fn new(config_path: Option<PathBuf>, workdir: Option<PathBuf>, seed: Option<u64>) -> PyResult<Self> {
        let mut cfg = match config_path {
            Some(p) => PipelineConfig::load(&p).map_err(py_err)?,
            None => PipelineConfig::default(),
        };
        if let Some(root) = workdir {
            cfg.paths.scenes_dir = root.join("scenes");
            cfg.paths.work_dir = root.join("work");
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate().map_err(py_err)?;
        Ok(Self { cfg })
    }

    fn config_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.cfg).map_err(|e| py_err(e.into()))
    }

    #[pyo3(signature = (split_name="train", count=None))]
    fn synth(&self, split_name: &str, count: Option<usize>) -> PyResult<Vec<String>> {
        let s = split(split_name)?;
        let n = count.unwrap_or(match s {
            Split::Train => self.cfg.train_scenes,
            Split::Test => self.cfg.test_scenes,
        });
        pipeline::synth_scenes(&self.cfg, s, n).map_err(py_err)
    }

    #[pyo3(signature = (split_name="train"))]
    fn autolabel(&self, split_name: &str) -> PyResult<usize> {
        pipeline::autolabel(&self.cfg, split(split_name)?).map_err(py_err)
    }

    fn simulate_hand_labels(&self) -> PyResult<usize> {
        pipeline::simulate_hand_labels(&self.cfg).map_err(py_err)
    }

    /// Returns `(examples, first_epoch_elbo, last_epoch_elbo)`.
    #[pyo3(signature = (hand_labels=None))]
    fn train_teacher(&self, hand_labels: Option<PathBuf>) -> PyResult<(usize, f64, f64)> {
        let path = hand_labels.unwrap_or_else(|| self.cfg.hand_labels_path());
        let s = pipeline::train_teacher_stage(&self.cfg, &path).map_err(py_err)?;
        Ok((s.examples, s.first, s.last))
    }

    #[pyo3(signature = (checkpoint=None))]
    fn label(&self, checkpoint: Option<PathBuf>) -> PyResult<usize> {
        let path = checkpoint.unwrap_or_else(|| self.cfg.teacher_path());
        pipeline::label_stage(&self.cfg, &path).map_err(py_err)
    }

    /// Returns `(examples, first_epoch_loss, last_epoch_loss)`.
    fn train_student(&self) -> PyResult<(usize, f64, f64)> {
        let s = pipeline::train_student_stage(&self.cfg).map_err(py_err)?;
        Ok((s.examples, s.first, s.last))
    }

    /// Evaluation report as a JSON string.
    #[pyo3(signature = (model="student"))]
    fn evaluate(&self, model: &str) -> PyResult<String> {
        let kind: ModelKind = model.parse().map_err(py_err)?;
        let report = pipeline::eval_stage(&self.cfg, kind).map_err(py_err)?;
        serde_json::to_string(&report).map_err(|e| py_err(e.into()))
    }
}

#[pymodule]
fn autolabel_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCamera>()?;
    m.add_class::<PyScene>()?;
    m.add_class::<PyTeacher>()?;
    m.add_class::<PyStudent>()?;
    m.add_class::<PyPipeline>()?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(soften, m)?)?;
    m.add_function(wrap_pyfunction!(distill_loss, m)?)?;
    m.add_function(wrap_pyfunction!(connectability, m)?)?;
    m.add_function(wrap_pyfunction!(detect_objects, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scene, m)?)?;
    Ok(())
}
