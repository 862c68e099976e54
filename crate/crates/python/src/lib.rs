//! Python bindings: simulate datasets, train, infer and evaluate.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use zoomsr::align_lr::flow_provider;
use zoomsr::config::KeyValues;
use zoomsr::imaging::io::{read_png, write_png};
use zoomsr::sim::{load_training_pairs, make_training_pair, scene_seed, write_capture, SimConfig};
use zoomsr::train_eval::{evaluate as run_evaluate, infer as run_infer, load_checkpoint, save_checkpoint, trace_csv, train as run_train, TrainConfig};
use zoomsr::Error;

fn py_err(e: Error) -> PyErr {
    let msg = format!("{}: {e}", e.kind());
    match e {
        Error::Io { .. } | Error::Image { .. } => PyIOError::new_err(msg),
        Error::InvalidArgument(_) | Error::ShapeMismatch(_) | Error::Config(_) | Error::Format(_) => PyValueError::new_err(msg),
        Error::Flow(_) | Error::NonFiniteLoss { .. } => PyRuntimeError::new_err(msg),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> PyErr {
    py_err(Error::Io {
        path: path.into(),
        source: e,
    })
}

fn to_kv(map: Option<BTreeMap<String, String>>) -> KeyValues {
    let mut kv = KeyValues::new();
    for (k, v) in map.unwrap_or_default() {
        kv.set(k, v);
    }
    kv
}

/// Library version.
#[pyfunction]
fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

/// Resolved training configuration for a preset plus overrides.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn resolve_config(config: Option<BTreeMap<String, String>>) -> PyResult<BTreeMap<String, String>> {
    let cfg = TrainConfig::from_kv(&to_kv(config)).map_err(py_err)?;
    Ok(cfg.to_kv().iter().map(|(k, v)| (k.to_string(), v.to_string())).collect())
}

/// Renders `scenes` synthetic captures into `out_dir`; returns the scene ids.
#[pyfunction]
#[pyo3(signature = (out_dir, scenes=20, seed=0, config=None))]
fn simulate(out_dir: PathBuf, scenes: usize, seed: u64, config: Option<BTreeMap<String, String>>) -> PyResult<Vec<String>> {
    let sim = SimConfig::from_kv(&to_kv(config)).map_err(py_err)?;
    let mut ids = Vec::with_capacity(scenes);
    for i in 0..scenes {
        let c = sim.capture(scene_seed(seed, i)).map_err(py_err)?;
        write_capture(&out_dir.join(&c.id), &c).map_err(py_err)?;
        ids.push(c.id);
    }
    Ok(ids)
}

/// Trains on `data_dir` (or `scenes` in-memory simulated scenes), writes
/// `config.txt`, `loss.csv` and `model.ckpt` to `run_dir`; returns the losses.
#[pyfunction]
#[pyo3(signature = (run_dir, data_dir=None, config=None, scenes=20))]
fn train(
    py: Python<'_>,
    run_dir: PathBuf,
    data_dir: Option<PathBuf>,
    config: Option<BTreeMap<String, String>>,
    scenes: usize,
) -> PyResult<Vec<f64>> {
    let cfg = TrainConfig::from_kv(&to_kv(config)).map_err(py_err)?;
    fs::create_dir_all(&run_dir).map_err(|e| io_err(&run_dir, e))?;
    let path = run_dir.join("config.txt");
    fs::write(&path, cfg.to_kv().to_text()).map_err(|e| io_err(&path, e))?;
    py.detach(|| {
        let pairs = match &data_dir {
            Some(d) => load_training_pairs(d, cfg.r_w, cfg.r_t() as u32)?,
            None => {
                let sim = SimConfig::default();
                (0..scenes)
                    .map(|i| make_training_pair(&sim.capture(i as u64)?))
                    .collect::<zoomsr::Result<Vec<_>>>()?
            }
        };
        let out = run_train(&pairs, cfg, |_| {})?;
        let log = run_dir.join("loss.csv");
        fs::write(&log, trace_csv(&out.trace)).map_err(|e| Error::Io {
            path: log.clone(),
            source: e,
        })?;
        save_checkpoint(&run_dir.join("model.ckpt"), &out.model, true)?;
        Ok(out.trace.iter().map(|l| l.loss).collect())
    })
    .map_err(py_err)
}

/// Super-resolves `ultrawide` with `tele` (and `wide`), writes `out`;
/// returns the output `(height, width)`.
#[pyfunction]
#[pyo3(signature = (ckpt, ultrawide, tele, out, wide=None))]
fn infer(ckpt: PathBuf, ultrawide: PathBuf, tele: PathBuf, out: PathBuf, wide: Option<PathBuf>) -> PyResult<(usize, usize)> {
    let mut model = load_checkpoint(&ckpt).map_err(py_err)?;
    model.detach();
    let u = read_png(&ultrawide).map_err(py_err)?;
    let t = read_png(&tele).map_err(py_err)?;
    let w = wide.map(read_png).transpose().map_err(py_err)?;
    let y = run_infer(&model, &u, &t, w.as_ref()).map_err(py_err)?;
    write_png(&y, &out).map_err(py_err)?;
    Ok(y.dims())
}

/// Mean metrics of `ckpt` on `data_dir`, the bicubic baseline (prefixed
/// `bicubic_`) and the excluded-sample count.
#[pyfunction]
#[pyo3(signature = (ckpt, data_dir, flow="oracle"))]
fn evaluate(py: Python<'_>, ckpt: PathBuf, data_dir: PathBuf, flow: &str) -> PyResult<BTreeMap<String, f64>> {
    py.detach(|| {
        let mut model = load_checkpoint(&ckpt)?;
        model.detach();
        let pairs = load_training_pairs(&data_dir, model.cfg.r_w, model.cfg.r_t() as u32)?;
        let provider = flow_provider(flow)?;
        let rep = run_evaluate(&model, &pairs, provider.as_ref())?;
        let mut out = BTreeMap::new();
        for (prefix, m) in [("", rep.mean()), ("bicubic_", rep.baseline_mean())] {
            if let Some(m) = m {
                out.insert(format!("{prefix}psnr_full"), m.psnr_full);
                out.insert(format!("{prefix}ssim_full"), m.ssim_full);
                out.insert(format!("{prefix}psnr_corner"), m.psnr_corner);
                out.insert(format!("{prefix}ssim_corner"), m.ssim_corner);
            }
        }
        out.insert("excluded".into(), rep.excluded.len() as f64);
        Ok(out)
    })
    .map_err(py_err)
}

#[pymodule]
fn zoomsr_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(version, m)?)?;
    m.add_function(wrap_pyfunction!(resolve_config, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(infer, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
