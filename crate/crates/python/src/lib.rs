//! Python bindings. Stages are integers 0..=4 (W, N1, N2, N3, R); excluded
//! reference epochs are `None`. Signals are lists of per-channel sample lists.

use std::path::PathBuf;

use anysleep::costmodel::{self, Arch};
use anysleep::evaluation::{self, AbsentStagePolicy};
use anysleep::hifreq::{self, OverlapMeasure, RowStep};
use anysleep::model::{self, Checkpoint, Fusion, ModelConfig, Parameters, EPOCH_SAMPLES};
use anysleep::numkernel::Array;
use anysleep::sampling;
use anysleep::signal_io::{self, EventInterval, EventKind, ModalityTable, SynthSpec};
use anysleep::{Label, Stage};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn stage(i: usize) -> PyResult<Stage> {
    Stage::from_index(i).ok_or_else(|| value_err(format!("stage index must be 0..=4, got {i}")))
}

fn stages(v: &[usize]) -> PyResult<Vec<Stage>> {
    v.iter().map(|&i| stage(i)).collect()
}

fn labels(v: &[Option<usize>]) -> PyResult<Vec<Label>> {
    v.iter().map(|l| l.map(stage).transpose()).collect()
}

fn events(v: &[(f64, f64)]) -> PyResult<Vec<EventInterval>> {
    v.iter()
        .map(|&(on, dur)| EventInterval::new(on, dur, EventKind::Arousal).map_err(value_err))
        .collect()
}

fn fusion(name: &str) -> PyResult<Fusion> {
    match name.to_ascii_lowercase().as_str() {
        "early" => Ok(Fusion::Early),
        "mid" => Ok(Fusion::Mid),
        "late" => Ok(Fusion::Late),
        _ => Err(value_err(format!("fusion must be early, mid or late, got {name:?}"))),
    }
}

fn signal_array(signal: Vec<Vec<f64>>) -> PyResult<Array> {
    Array::from_rows(&signal).map_err(value_err)
}

/// A model configuration with its parameters.
#[pyclass(name = "Model", module = "pyanysleep")]
pub struct PyModel {
    cfg: ModelConfig,
    params: Parameters,
}

#[pymethods]
impl PyModel {
    /// Fresh weights for the desk configuration, or a custom depth/width.
    #[new]
    #[pyo3(signature = (fusion = "mid", seed = 0, depth = None, base_filters = None))]
    fn new(fusion: &str, seed: u64, depth: Option<usize>, base_filters: Option<usize>) -> PyResult<Self> {
        let f = self::fusion(fusion)?;
        let cfg = ModelConfig::with_shape(depth.unwrap_or(4), base_filters.unwrap_or(8), f);
        cfg.validate().map_err(value_err)?;
        let params = Parameters::init(&cfg, seed).map_err(value_err)?;
        Ok(Self { cfg, params })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let c = Checkpoint::load(&path).map_err(value_err)?;
        Ok(Self {
            cfg: c.config,
            params: c.params,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        Checkpoint {
            config: self.cfg.clone(),
            params: self.params.clone(),
        }
        .save(&path)
        .map_err(value_err)
    }

    #[getter]
    fn fusion(&self) -> &'static str {
        match self.cfg.fusion {
            Fusion::Early => "early",
            Fusion::Mid => "mid",
            Fusion::Late => "late",
        }
    }

    #[getter]
    fn depth(&self) -> usize {
        self.cfg.depth
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.params.count()
    }

    /// Samples per channel must be a multiple of this.
    #[getter]
    fn required_multiple(&self) -> usize {
        self.cfg.required_multiple()
    }

    /// Stage probabilities `[rows][5]` for a prepared `[channels][samples]`
    /// signal at 128 Hz.
    #[pyo3(signature = (signal, resolution = 1))]
    fn predict(&self, signal: Vec<Vec<f64>>, resolution: usize) -> PyResult<Vec<Vec<f64>>> {
        let x = signal_array(signal)?;
        let p = model::forward(&self.cfg, &self.params, &x, resolution).map_err(value_err)?;
        Ok((0..p.rows()).map(|i| p.row(i).to_vec()).collect())
    }

    /// Argmax stages at the given resolution.
    #[pyo3(signature = (signal, resolution = 1))]
    fn hypnogram(&self, signal: Vec<Vec<f64>>, resolution: usize) -> PyResult<Vec<usize>> {
        let x = signal_array(signal)?;
        let p = model::forward(&self.cfg, &self.params, &x, resolution).map_err(value_err)?;
        Ok(p.argmax().into_iter().map(Stage::index).collect())
    }

    /// Attention weights per module, one list of channel weights each.
    fn attention(&self, signal: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = signal_array(signal)?;
        let (_, attn) = model::forward_multi(&self.cfg, &self.params, &x, &[1]).map_err(value_err)?;
        Ok(attn.into_iter().map(|a| a.into_data()).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(fusion={:?}, depth={}, parameters={})",
            self.fusion(),
            self.cfg.depth,
            self.params.count()
        )
    }
}

/// Reads an EDF file and returns `(signal, channel_names)` resampled to
/// 128 Hz, normalized and cut to whole 30-s epochs.
#[pyfunction]
fn load_edf(path: PathBuf) -> PyResult<(Vec<Vec<f64>>, Vec<String>)> {
    let (rec, _) = signal_io::read_edf(&path, &ModalityTable::default()).map_err(value_err)?;
    let (x, names) = signal_io::prepare(&rec, None).map_err(value_err)?;
    let c = x.shape()[0];
    Ok(((0..c).map(|i| x.row(i).to_vec()).collect(), names))
}

/// One synthetic recording, prepared for the model. Returns a dict with
/// `signal`, `channel_names`, `labels` and `events` (`(onset, duration)`).
#[pyfunction]
#[pyo3(signature = (seed, n_eeg = 2, n_eog = 1, epochs = 120))]
fn synth(py: Python<'_>, seed: u64, n_eeg: usize, n_eog: usize, epochs: usize) -> PyResult<Py<PyAny>> {
    let spec = SynthSpec {
        n_eeg,
        n_eog,
        epochs,
        ..SynthSpec::default()
    };
    let (rec, hyp, ev) = signal_io::synth_generate(seed, &spec).map_err(value_err)?;
    let (x, names) = signal_io::prepare(&rec, Some(epochs)).map_err(value_err)?;
    let d = pyo3::types::PyDict::new(py);
    let c = x.shape()[0];
    d.set_item("signal", (0..c).map(|i| x.row(i).to_vec()).collect::<Vec<_>>())?;
    d.set_item("channel_names", names)?;
    d.set_item("labels", hyp.labels.iter().map(|l| l.map(Stage::index)).collect::<Vec<_>>())?;
    d.set_item("events", ev.iter().map(|e| (e.onset, e.duration)).collect::<Vec<_>>())?;
    Ok(d.into_any().unbind())
}

#[pyfunction]
#[pyo3(signature = (pred, truth, policy = "exclude"))]
fn macro_f1(pred: Vec<usize>, truth: Vec<Option<usize>>, policy: &str) -> PyResult<f64> {
    let policy: AbsentStagePolicy = policy.parse().map_err(value_err)?;
    evaluation::macro_f1(&stages(&pred)?, &labels(&truth)?, policy).map_err(value_err)
}

#[pyfunction]
fn dataset_probs(alpha: f64, counts: Vec<usize>) -> PyResult<Vec<f64>> {
    sampling::dataset_probs(alpha, &counts).map_err(value_err)
}

#[pyfunction]
fn channel_count_probs(max_channels: usize) -> PyResult<Vec<f64>> {
    sampling::channel_count_probs(max_channels).map_err(value_err)
}

/// Sequential component evaluations for an architecture.
#[pyfunction]
#[pyo3(signature = (arch, n_eeg, n_eog, depth = 12))]
fn steps(arch: &str, n_eeg: u64, n_eog: u64, depth: u64) -> PyResult<u64> {
    let arch: Arch = arch.parse().map_err(value_err)?;
    costmodel::steps(arch, n_eeg, n_eog, depth).map_err(value_err)
}

/// Arousal candidates `(onset, duration)` in seconds from stages at the
/// given resolution.
#[pyfunction]
fn derive_arousals(stages: Vec<usize>, resolution: usize) -> PyResult<Vec<(f64, f64)>> {
    let step = RowStep::resolution(resolution).map_err(value_err)?;
    Ok(hifreq::derive_arousals(&self::stages(&stages)?, step)
        .into_iter()
        .map(|e| (e.onset, e.duration))
        .collect())
}

#[pyfunction]
fn wake_overlap_fraction(stages: Vec<usize>, resolution: usize, events: Vec<(f64, f64)>) -> PyResult<f64> {
    let step = RowStep::resolution(resolution).map_err(value_err)?;
    hifreq::wake_overlap_fraction(&self::stages(&stages)?, step, &self::events(&events)?).map_err(value_err)
}

/// Greedy one-to-one matching; returns `(matches, false_positives,
/// false_negatives)` with matches as `(candidate, annotation, ratio)`.
#[pyfunction]
#[pyo3(signature = (candidates, annotations, threshold = 0.2, overlap = "union"))]
#[allow(clippy::type_complexity)]
fn iou_match(
    candidates: Vec<(f64, f64)>,
    annotations: Vec<(f64, f64)>,
    threshold: f64,
    overlap: &str,
) -> PyResult<(Vec<(usize, usize, f64)>, Vec<usize>, Vec<usize>)> {
    let measure = match overlap {
        "union" => OverlapMeasure::Union,
        "summed" => OverlapMeasure::Summed,
        other => return Err(value_err(format!("overlap must be union or summed, got {other:?}"))),
    };
    let m = hifreq::iou_match(&events(&candidates)?, &events(&annotations)?, threshold, measure);
    Ok((m.matches, m.false_positives, m.false_negatives))
}

/// 80 triplet counts per 1.5-h block, trimmed by the reference hypnogram.
#[pyfunction]
fn triplet_features(stages: Vec<usize>, resolution: usize, reference: Vec<Option<usize>>) -> PyResult<Vec<Vec<u32>>> {
    let r = hifreq::triplet_features(&self::stages(&stages)?, resolution, &labels(&reference)?).map_err(value_err)?;
    Ok(r.blocks.into_iter().map(|b| b.counts).collect())
}

#[pymodule]
fn pyanysleep(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add("EPOCH_SAMPLES", EPOCH_SAMPLES)?;
    m.add("RESOLUTIONS", model::RESOLUTIONS.to_vec())?;
    m.add_function(wrap_pyfunction!(load_edf, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(macro_f1, m)?)?;
    m.add_function(wrap_pyfunction!(dataset_probs, m)?)?;
    m.add_function(wrap_pyfunction!(channel_count_probs, m)?)?;
    m.add_function(wrap_pyfunction!(steps, m)?)?;
    m.add_function(wrap_pyfunction!(derive_arousals, m)?)?;
    m.add_function(wrap_pyfunction!(wake_overlap_fraction, m)?)?;
    m.add_function(wrap_pyfunction!(iou_match, m)?)?;
    m.add_function(wrap_pyfunction!(triplet_features, m)?)?;
    Ok(())
}
