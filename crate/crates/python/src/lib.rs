//! Python bindings for `siman-core`.
//!
//! Weight vectors travel as lists of floats, codes as lists of 0/1 ints.
//! Core errors surface as `ValueError`.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use siman_core::binarize as bz;
use siman_core::bitkernel as bk;
use siman_core::data;
use siman_core::dist;
use siman_core::nn;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn weights(w: Vec<f64>) -> PyResult<bz::WeightVector> {
    bz::WeightVector::new(w).map_err(value_err)
}

fn model(kind: &str, scale: f64) -> PyResult<dist::DistributionModel> {
    let kind: dist::DistributionKind = kind.parse().map_err(value_err)?;
    dist::DistributionModel::new(kind, scale).map_err(value_err)
}

/// A `{0, 1}` code over a weight vector.
#[pyclass(name = "BinaryCode", module = "siman", frozen, eq, skip_from_py_object)]
#[derive(Clone, PartialEq)]
struct PyBinaryCode(bz::BinaryCode);

#[pymethods]
impl PyBinaryCode {
    #[new]
    fn new(bits: Vec<u8>) -> PyResult<Self> {
        bz::BinaryCode::from_bits(bits).map(Self).map_err(value_err)
    }

    #[getter]
    fn bits(&self) -> Vec<u32> {
        self.0.bits().iter().map(|&b| b as u32).collect()
    }

    #[getter]
    fn ones(&self) -> usize {
        self.0.ones()
    }

    #[getter]
    fn plus_fraction(&self) -> f64 {
        self.0.plus_fraction()
    }

    /// `2b - 1` as floats.
    fn to_signs(&self) -> Vec<f64> {
        self.0.to_signs()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __str__(&self) -> String {
        self.0.to_string()
    }

    fn __repr__(&self) -> String {
        format!("BinaryCode('{}')", self.0)
    }
}

#[pyfunction]
fn optimal_binarize(w: Vec<f64>) -> PyResult<PyBinaryCode> {
    bz::optimal_binarize(&weights(w)?).map(PyBinaryCode).map_err(value_err)
}

#[pyfunction]
fn half_half_binarize(w: Vec<f64>) -> PyResult<PyBinaryCode> {
    Ok(PyBinaryCode(bz::half_half_binarize(&weights(w)?)))
}

/// Exhaustive search over all nonzero codes; small `n` only.
#[pyfunction]
fn brute_force_binarize(w: Vec<f64>) -> PyResult<PyBinaryCode> {
    bz::brute_force_binarize(&weights(w)?).map(PyBinaryCode).map_err(value_err)
}

/// Returns `(signs, scale)` with signs in `{-1, +1}`.
#[pyfunction]
fn sign_binarize(w: Vec<f64>) -> PyResult<(Vec<i8>, f64)> {
    let s = bz::sign_binarize_scaled(&weights(w)?);
    Ok((s.bits, s.scale))
}

/// `cos(|w|, code)`.
#[pyfunction]
fn objective_value(w: Vec<f64>, code: &PyBinaryCode) -> PyResult<f64> {
    bz::objective_value(&weights(w)?, &code.0).map_err(value_err)
}

#[pyfunction]
fn quantization_error(w: Vec<f64>, v: Vec<f64>) -> PyResult<f64> {
    bz::quantization_error(&w, &v).map_err(value_err)
}

#[pyfunction]
fn cosine(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    if a.len() != b.len() {
        return Err(value_err(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    Ok(bz::cosine(&a, &b))
}

#[pyfunction]
fn angle_bounds(k: usize, r: usize) -> PyResult<(f64, f64)> {
    bz::angle_bounds(k, r).map_err(value_err)
}

#[pyfunction]
fn erfc(x: f64) -> f64 {
    dist::erfc(x)
}

/// Returns `(t_star, p_plus, objective_at_t)` for a zero-mean model.
#[pyfunction]
#[pyo3(signature = (kind, scale = 1.0))]
fn optimal_threshold(kind: &str, scale: f64) -> PyResult<(f64, f64, f64)> {
    let r = dist::optimal_threshold(&model(kind, scale)?);
    Ok((r.t_star, r.p_plus, r.objective_at_t))
}

#[pyfunction]
#[pyo3(signature = (kind, n, seed, scale = 1.0))]
fn sample_weights(kind: &str, n: usize, seed: u64, scale: f64) -> PyResult<Vec<f64>> {
    dist::sample_weights(&model(kind, scale)?, n, seed).map(|w| w.into_inner()).map_err(value_err)
}

#[pyfunction]
fn empirical_plus_fraction(w: Vec<f64>) -> PyResult<f64> {
    dist::empirical_plus_fraction(&weights(w)?).map_err(value_err)
}

/// Packed bit vector, LSB-first within 64-bit words.
#[pyclass(name = "BitVector", module = "siman", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyBitVector(bk::BitVector);

#[pymethods]
impl PyBitVector {
    #[new]
    fn new(bits: Vec<u8>) -> PyResult<Self> {
        bk::BitVector::pack(&bits).map(Self).map_err(value_err)
    }

    fn unpack(&self) -> Vec<u32> {
        self.0.unpack().into_iter().map(u32::from).collect()
    }

    fn words(&self) -> Vec<u64> {
        self.0.words().to_vec()
    }

    fn count_ones(&self) -> u32 {
        self.0.count_ones()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("BitVector(len={})", self.0.len())
    }
}

/// `±1` dot product of two packed codes.
#[pyfunction]
fn binary_dot(a: &PyBitVector, b: &PyBitVector) -> PyResult<i64> {
    bk::binary_dot(&a.0, &b.0).map_err(value_err)
}

#[pyfunction]
fn xnor_popcount(a: &PyBitVector, b: &PyBitVector) -> PyResult<u32> {
    bk::xnor_popcount(&a.0, &b.0).map_err(value_err)
}

/// Returns `(raw, values)` for rows of bits times a bit vector.
#[pyfunction]
fn binary_matvec(rows: Vec<Vec<u8>>, x: Vec<u8>, betas: Vec<f64>) -> PyResult<(Vec<i64>, Vec<f64>)> {
    let m = bk::PackedMatrix::from_rows(&rows).map_err(value_err)?;
    let x = bk::BitVector::pack(&x).map_err(value_err)?;
    let out = bk::binary_matvec(&m, &x, &betas).map_err(value_err)?;
    Ok((out.raw, out.values))
}

fn stats_dict<'py>(py: Python<'py>, s: &nn::LayerStats) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("layer", &s.layer)?;
    d.set_item("filters", s.filters)?;
    d.set_item("filter_len", s.filter_len)?;
    d.set_item("p_plus", &s.p_plus)?;
    d.set_item("mean_p_plus", s.mean_p_plus)?;
    d.set_item("mean_cos_siman", s.mean_cos_siman)?;
    d.set_item("mean_cos_siman_pm1", s.mean_cos_siman_pm1)?;
    d.set_item("mean_cos_half", s.mean_cos_half)?;
    d.set_item("mean_cos_sign", s.mean_cos_sign)?;
    d.set_item("mean_qe_siman", s.mean_qe_siman)?;
    d.set_item("mean_qe_sign", s.mean_qe_sign)?;
    d.set_item("mean_prefix_score", s.mean_prefix_score)?;
    Ok(d)
}

/// Per-layer statistics for back-to-back filters of `filter_len` weights.
#[pyfunction]
#[pyo3(signature = (weights, filter_len, name = "layer"))]
fn filter_stats<'py>(py: Python<'py>, weights: Vec<f64>, filter_len: usize, name: &str) -> PyResult<Bound<'py, PyDict>> {
    if filter_len == 0 || weights.len() % filter_len != 0 {
        return Err(value_err(format!("{} weights do not split into filters of {filter_len}", weights.len())));
    }
    stats_dict(py, &nn::filter_stats(name, &weights, filter_len))
}

/// Layer statistics of a saved checkpoint.
#[pyfunction]
fn checkpoint_layer_stats<'py>(py: Python<'py>, path: std::path::PathBuf) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let state = data::load_checkpoint(&path).map_err(value_err)?;
    nn::layer_stats(&state).iter().map(|s| stats_dict(py, s)).collect()
}

fn train_mode(mode: &str) -> PyResult<nn::TrainMode> {
    Ok(match mode {
        "siman" => nn::TrainMode::Siman,
        "siman1" => nn::TrainMode::Siman1,
        "siman2" => nn::TrainMode::Siman2,
        "siman3" => nn::TrainMode::Siman3,
        "sign" => nn::TrainMode::Sign,
        other => return Err(value_err(format!("unknown mode {other:?}"))),
    })
}

/// Trains on Gaussian blobs and returns `(epoch_metrics, layer_stats)`.
///
/// `train` and `test` count samples per class.
#[pyfunction]
#[pyo3(signature = (
    mode = "siman", classes = 4, dim = 192, train = 500, test = 125, sep = 12.0,
    epochs = 20, seed = 0, batch_size = 64, lr = 0.1, momentum = 0.9, weight_decay = 5e-4,
))]
#[allow(clippy::too_many_arguments)]
fn train_synth<'py>(
    py: Python<'py>,
    mode: &str,
    classes: usize,
    dim: usize,
    train: usize,
    test: usize,
    sep: f64,
    epochs: usize,
    seed: u64,
    batch_size: usize,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> PyResult<(Vec<Bound<'py, PyDict>>, Vec<Bound<'py, PyDict>>)> {
    let mode = train_mode(mode)?;
    let all = data::synth_blobs(classes, dim, train + test, sep, seed).map_err(value_err)?;
    let (mut tr, mut te) = (Vec::new(), Vec::new());
    for chunk in all.chunks(train + test) {
        tr.extend_from_slice(&chunk[..train]);
        te.extend_from_slice(&chunk[train..]);
    }
    let base = nn::TrainConfig {
        learning_rate: lr,
        momentum,
        epochs,
        batch_size,
        weight_decay_other: weight_decay,
        seed,
        ..nn::TrainConfig::default()
    };
    let config = mode.configure(base, weight_decay);
    let arch = nn::arch_for(&tr, classes).map_err(value_err)?;
    let outcome = py
        .detach(|| nn::train(arch, &tr, &te, &config, |_| {}))
        .map_err(value_err)?;
    let metrics = outcome
        .metrics
        .iter()
        .map(|m| {
            let d = PyDict::new(py);
            d.set_item("epoch", m.epoch)?;
            d.set_item("lr", m.lr)?;
            d.set_item("train_loss", m.train_loss)?;
            d.set_item("train_acc", m.train_acc)?;
            d.set_item("test_acc", m.test_acc)?;
            d.set_item("mean_p_plus", m.mean_p_plus)?;
            d.set_item("mean_cos_siman", m.mean_cos_siman)?;
            d.set_item("mean_cos_sign", m.mean_cos_sign)?;
            Ok(d)
        })
        .collect::<PyResult<_>>()?;
    let stats = outcome.layer_stats.iter().map(|s| stats_dict(py, s)).collect::<PyResult<_>>()?;
    Ok((metrics, stats))
}

#[pymodule]
fn siman(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyBinaryCode>()?;
    m.add_class::<PyBitVector>()?;
    m.add_function(wrap_pyfunction!(optimal_binarize, m)?)?;
    m.add_function(wrap_pyfunction!(half_half_binarize, m)?)?;
    m.add_function(wrap_pyfunction!(brute_force_binarize, m)?)?;
    m.add_function(wrap_pyfunction!(sign_binarize, m)?)?;
    m.add_function(wrap_pyfunction!(objective_value, m)?)?;
    m.add_function(wrap_pyfunction!(quantization_error, m)?)?;
    m.add_function(wrap_pyfunction!(cosine, m)?)?;
    m.add_function(wrap_pyfunction!(angle_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(erfc, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(sample_weights, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_plus_fraction, m)?)?;
    m.add_function(wrap_pyfunction!(binary_dot, m)?)?;
    m.add_function(wrap_pyfunction!(xnor_popcount, m)?)?;
    m.add_function(wrap_pyfunction!(binary_matvec, m)?)?;
    m.add_function(wrap_pyfunction!(filter_stats, m)?)?;
    m.add_function(wrap_pyfunction!(checkpoint_layer_stats, m)?)?;
    m.add_function(wrap_pyfunction!(train_synth, m)?)?;
    Ok(())
}
