//! Python bindings for the core engine: the single clustering unit, the
//! hierarchy with its settle loop, and the config-driven batch engine.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use stam_core::config::{load_config, parse_config};
use stam_core::evaluation::MetricsReport;
use stam_core::hierarchy::SettleTrace;
use stam_core::report::load_report;
use stam_core::runner::{brightness_shift_scenario, Engine as CoreEngine};
use stam_core::streams::IdxContent;
use stam_core::unit::{Exemplar, StamUnit as CoreUnit, UnitConfig};
use stam_core::StamError;

fn to_py(e: StamError) -> PyErr {
    match e {
        StamError::Io(inner) => PyIOError::new_err(inner.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn exemplar(values: Vec<f64>) -> PyResult<Exemplar> {
    Exemplar::new(values).map_err(to_py)
}

/// One online-clustering unit.
#[pyclass(name = "StamUnit")]
struct PyStamUnit {
    inner: CoreUnit,
}

#[pymethods]
impl PyStamUnit {
    #[new]
    #[pyo3(signature = (dim, capacity=16, theta_new=0.5, theta_merge=0.2, alpha_floor=0.01))]
    fn new(
        dim: usize,
        capacity: usize,
        theta_new: f64,
        theta_merge: f64,
        alpha_floor: f64,
    ) -> PyResult<Self> {
        let config = UnitConfig {
            capacity,
            theta_new,
            theta_merge,
            alpha_floor,
        };
        Ok(Self {
            inner: CoreUnit::new(dim, config).map_err(to_py)?,
        })
    }

    /// Observe one exemplar; returns the absorbing centroid's index.
    fn observe(&mut self, x: Vec<f64>) -> PyResult<usize> {
        self.inner.observe(&exemplar(x)?).map_err(to_py)
    }

    /// (index, distance) of the nearest centroid.
    fn nearest_centroid(&self, x: Vec<f64>) -> PyResult<(usize, f64)> {
        self.inner.nearest_centroid(&exemplar(x)?).map_err(to_py)
    }

    /// A copy of the nearest centroid's center.
    fn recall(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.recall(&exemplar(x)?).map_err(to_py)
    }

    fn merge_overlaps(&mut self) {
        self.inner.merge_overlaps();
    }

    fn centroids<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner
            .centroids()
            .iter()
            .map(|c| {
                let d = PyDict::new(py);
                d.set_item("center", c.center().to_vec())?;
                d.set_item("count", c.count())?;
                d.set_item("last_used", c.last_used())?;
                Ok(d)
            })
            .collect()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn step(&self) -> u64 {
        self.inner.step()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "StamUnit(dim={}, centroids={}, step={})",
            self.inner.dim(),
            self.inner.len(),
            self.inner.step()
        )
    }
}

fn trace_to_dict<'py>(py: Python<'py>, trace: &SettleTrace) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("reconstruction", trace.reconstruction.clone())?;
    d.set_item("iterations_run", trace.iterations_run)?;
    let top = trace
        .layers
        .last()
        .and_then(|l| l.fields.first())
        .and_then(|f| f.selected);
    d.set_item("top_selected", top)?;
    let errors: Vec<Vec<f64>> = trace
        .layers
        .iter()
        .map(|layer| {
            layer
                .fields
                .iter()
                .map(|f| f.error.iter().map(|e| e * e).sum::<f64>().sqrt())
                .collect()
        })
        .collect();
    d.set_item("error_norms", errors)?;
    Ok(d)
}

/// A receptive-field hierarchy, built from a run configuration.
#[pyclass(name = "Hierarchy")]
struct PyHierarchy {
    inner: stam_core::Hierarchy,
}

#[pymethods]
impl PyHierarchy {
    /// Build an untrained hierarchy from config text.
    #[staticmethod]
    fn from_config(text: &str) -> PyResult<Self> {
        let config = parse_config(text).map_err(to_py)?;
        Ok(Self {
            inner: config.hierarchy().map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_config_file(path: &str) -> PyResult<Self> {
        let config = load_config(path).map_err(to_py)?;
        Ok(Self {
            inner: config.hierarchy().map_err(to_py)?,
        })
    }

    /// Settle one frame. With `learn` the units absorb the exemplar under
    /// the final iteration's assignments.
    #[pyo3(signature = (frame, learn=false, iterations=None))]
    fn settle<'py>(
        &mut self,
        py: Python<'py>,
        frame: Vec<f64>,
        learn: bool,
        iterations: Option<usize>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let trace = if learn {
            self.inner.settle_learn(&frame).map_err(to_py)?
        } else {
            match iterations {
                Some(t) => self.inner.settle_with_iterations(&frame, t).map_err(to_py)?,
                None => self.inner.settle(&frame).map_err(to_py)?,
            }
        };
        trace_to_dict(py, &trace)
    }

    /// Centroid counts as a list per layer.
    fn centroid_counts(&self) -> Vec<Vec<usize>> {
        self.inner
            .layers()
            .iter()
            .map(|l| l.units().iter().map(|u| u.len()).collect())
            .collect()
    }

    fn __repr__(&self) -> String {
        let shape: Vec<usize> = self.inner.layers().iter().map(|l| l.units().len()).collect();
        format!("Hierarchy(layers={shape:?})")
    }
}

fn metrics_to_dict<'py>(py: Python<'py>, m: &MetricsReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("purity", m.purity)?;
    let acc = PyDict::new(py);
    for (phase, a) in &m.accuracy_per_phase {
        acc.set_item(phase, a)?;
    }
    d.set_item("accuracy_per_phase", acc)?;
    let forgetting = PyDict::new(py);
    for (phase, f) in &m.forgetting {
        forgetting.set_item(phase, f)?;
    }
    d.set_item("forgetting", forgetting)?;
    d.set_item("drift_per_prototype", m.drift_per_prototype.clone())?;
    d.set_item("reconstruction_mse", m.reconstruction_mse)?;
    d.set_item("centroid_counts", m.centroid_counts.clone())?;
    Ok(d)
}

/// The config-driven batch engine with a resumable stream cursor.
#[pyclass(name = "Engine")]
struct PyEngine {
    inner: CoreEngine,
}

#[pymethods]
impl PyEngine {
    #[new]
    fn new(config_path: &str) -> PyResult<Self> {
        let config = load_config(config_path).map_err(to_py)?;
        Ok(Self {
            inner: CoreEngine::new(config).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_config_text(text: &str) -> PyResult<Self> {
        let config = parse_config(text).map_err(to_py)?;
        Ok(Self {
            inner: CoreEngine::new(config).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(checkpoint_path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: CoreEngine::load(checkpoint_path).map_err(to_py)?,
        })
    }

    /// Consume stream items from the cursor; returns how many were absorbed.
    #[pyo3(signature = (until_phase=None))]
    fn train(&mut self, until_phase: Option<u32>) -> PyResult<usize> {
        self.inner.train(until_phase).map_err(to_py)
    }

    /// Run the evaluation pass; optionally diff accuracies against a
    /// baseline CSV report to produce forgetting values.
    #[pyo3(signature = (baseline_csv=None))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        baseline_csv: Option<&str>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let baseline = match baseline_csv {
            Some(path) => Some(load_report(path).map_err(to_py)?),
            None => None,
        };
        let report = self.inner.evaluate(baseline.as_deref()).map_err(to_py)?;
        metrics_to_dict(py, &report)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    /// The synthetic prototypes, or None for IDX streams.
    fn prototypes(&self) -> PyResult<Option<Vec<Vec<f64>>>> {
        self.inner.prototypes().map_err(to_py)
    }

    /// Stream shifted views of `frames` with learning while tracking
    /// top-level agreement and bottom-layer centroid intensity. Returns
    /// (step, metric, value) rows.
    #[pyo3(signature = (frames, delta, passes=1, probe_every=1))]
    fn brightness_shift_scenario(
        &mut self,
        frames: Vec<Vec<f64>>,
        delta: f64,
        passes: usize,
        probe_every: usize,
    ) -> PyResult<Vec<(String, String, f64)>> {
        let rows = brightness_shift_scenario(
            self.inner.hierarchy_mut(),
            &frames,
            delta,
            passes,
            probe_every,
        )
        .map_err(to_py)?;
        Ok(rows.into_iter().map(|r| (r.phase, r.metric, r.value)).collect())
    }

    fn settle<'py>(&self, py: Python<'py>, frame: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
        let trace = self.inner.hierarchy().settle(&frame).map_err(to_py)?;
        trace_to_dict(py, &trace)
    }

    #[getter]
    fn cursor(&self) -> u64 {
        self.inner.cursor()
    }

    fn centroid_counts(&self) -> Vec<Vec<usize>> {
        self.inner
            .hierarchy()
            .layers()
            .iter()
            .map(|l| l.units().iter().map(|u| u.len()).collect())
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("Engine(cursor={})", self.inner.cursor())
    }
}

/// Parse an IDX image file into (frames, height, width).
#[pyfunction]
fn parse_idx_images(path: &str) -> PyResult<(Vec<Vec<f64>>, usize, usize)> {
    let bytes = std::fs::read(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
    match stam_core::streams::parse_idx(&bytes).map_err(to_py)? {
        IdxContent::Images {
            frames,
            height,
            width,
        } => Ok((frames, height, width)),
        IdxContent::Labels(_) => Err(PyValueError::new_err("file holds labels, not images")),
    }
}

/// Parse an IDX label file.
#[pyfunction]
fn parse_idx_labels(path: &str) -> PyResult<Vec<u8>> {
    let bytes = std::fs::read(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
    match stam_core::streams::parse_idx(&bytes).map_err(to_py)? {
        IdxContent::Labels(labels) => Ok(labels),
        IdxContent::Images { .. } => Err(PyValueError::new_err("file holds images, not labels")),
    }
}

/// Elementwise `frame + delta`, clamped to [0, 1].
#[pyfunction]
fn brightness_shift(frame: Vec<f64>, delta: f64) -> Vec<f64> {
    stam_core::streams::brightness_shift(&frame, delta)
}

/// Draw `k` seeded prototype frames in [0, 1].
#[pyfunction]
fn synth_prototypes(
    k: usize,
    height: usize,
    width: usize,
    sigma: f64,
    seed: u64,
) -> PyResult<Vec<Vec<f64>>> {
    let (protos, _) =
        stam_core::streams::synth_prototypes(k, height, width, sigma, seed).map_err(to_py)?;
    Ok(protos)
}

/// Write the configured synthetic dataset as IDX files; returns the paths.
#[pyfunction]
fn gen_data(config_path: &str, out_dir: &str) -> PyResult<(String, String)> {
    let config = load_config(config_path).map_err(to_py)?;
    let (images, labels) = stam_core::runner::generate_data(&config, out_dir).map_err(to_py)?;
    Ok((
        images.to_string_lossy().into_owned(),
        labels.to_string_lossy().into_owned(),
    ))
}

#[pymodule]
fn stam_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyStamUnit>()?;
    m.add_class::<PyHierarchy>()?;
    m.add_class::<PyEngine>()?;
    m.add_function(wrap_pyfunction!(parse_idx_images, m)?)?;
    m.add_function(wrap_pyfunction!(parse_idx_labels, m)?)?;
    m.add_function(wrap_pyfunction!(brightness_shift, m)?)?;
    m.add_function(wrap_pyfunction!(synth_prototypes, m)?)?;
    m.add_function(wrap_pyfunction!(gen_data, m)?)?;
    Ok(())
}
