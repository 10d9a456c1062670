//! Python bindings: compile programs, inspect designs and simulate them.

use std::collections::BTreeMap;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ubc_core::cli::{self, Artifact, Compiled, Strategy};
use ubc_core::hwsim::SimOptions;
use ubc_core::mapping::{AgConfig, HardwareSpec, Target};

create_exception!(ubc, UbcError, PyException);
create_exception!(ubc, SimTimeout, UbcError);

fn err(e: ubc_core::Error) -> PyErr {
    match e {
        ubc_core::Error::Timeout { .. } => SimTimeout::new_err(e.to_string()),
        _ => UbcError::new_err(e.to_string()),
    }
}

fn strategy(s: &str) -> PyResult<Strategy> {
    match s {
        "auto" => Ok(Strategy::Auto),
        "sequential" => Ok(Strategy::Sequential),
        "stencil" => Ok(Strategy::Stencil),
        "dnn" => Ok(Strategy::Dnn),
        _ => Err(UbcError::new_err(format!("unknown strategy {s:?}"))),
    }
}

/// Target memory technology and tile parameters.
#[pyclass(name = "Hardware", from_py_object)]
#[derive(Clone)]
struct PyHardware {
    inner: HardwareSpec,
}

#[pymethods]
impl PyHardware {
    #[new]
    #[pyo3(signature = (target = "widefetch", capacity = 512, fw = 4))]
    fn new(target: &str, capacity: i64, fw: i64) -> PyResult<Self> {
        let inner = match target {
            "widefetch" => HardwareSpec::wide_fetch(capacity, fw),
            "dualport" => HardwareSpec::dual_port(capacity),
            _ => return Err(UbcError::new_err(format!("unknown target {target:?}"))),
        };
        inner.validate().map_err(err)?;
        Ok(PyHardware { inner })
    }

    #[getter]
    fn target(&self) -> &'static str {
        match self.inner.target {
            Target::DualPort => "dualport",
            Target::WideFetch => "widefetch",
        }
    }

    #[getter]
    fn capacity(&self) -> i64 {
        self.inner.tile_words
    }

    #[getter]
    fn fw(&self) -> i64 {
        self.inner.fetch_width
    }

    fn __repr__(&self) -> String {
        format!("Hardware(target={:?}, capacity={}, fw={})", self.target(), self.capacity(), self.fw())
    }
}

/// A compiled program: schedule, unified buffers and physical design.
#[pyclass(name = "Design")]
struct PyDesign {
    inner: Compiled,
}

#[pymethods]
impl PyDesign {
    #[getter]
    fn kind(&self) -> String {
        self.inner.schedule.kind.to_string()
    }

    #[getter]
    fn completion_cycles(&self) -> i64 {
        self.inner.design.stats.completion_cycles
    }

    #[getter]
    fn sram_words(&self) -> i64 {
        self.inner.design.stats.total_sram_words
    }

    #[getter]
    fn mem_tiles(&self) -> i64 {
        self.inner.design.stats.mem_tiles
    }

    #[getter]
    fn pe_count(&self) -> usize {
        self.inner.design.stats.pe_count
    }

    #[getter]
    fn coarse_ii(&self) -> Option<i64> {
        self.inner.design.stats.coarse_ii
    }

    #[getter]
    fn shift_registers(&self) -> usize {
        self.inner.design.buffers.iter().map(|b| b.shift_registers.len()).sum()
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.inner.warnings.clone()
    }

    /// Names of the program's input buffers with their dimensions.
    fn inputs(&self) -> BTreeMap<String, Vec<i64>> {
        self.inner.program.inputs().map(|b| (b.name.clone(), b.dims.clone())).collect()
    }

    /// Cycle schedule of each stage as a string.
    fn schedule(&self) -> BTreeMap<String, String> {
        self.inner.schedule.stages.iter().map(|s| (s.stage.clone(), s.op.to_string())).collect()
    }

    fn summary(&self) -> String {
        cli::summary(&self.inner)
    }

    /// Artifact JSON with integrity digest.
    fn to_json(&self) -> PyResult<String> {
        Artifact::new(self.inner.clone()).and_then(|a| a.to_json()).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyDesign { inner: Artifact::from_json(text).map_err(err)?.compiled })
    }

    /// Simulates and diffs against the reference interpreter. Inputs not
    /// given are filled with seeded random pixels.
    #[pyo3(signature = (inputs = None, seed = 0, max_cycles = None, trace = false))]
    fn simulate<'py>(
        &self,
        py: Python<'py>,
        inputs: Option<BTreeMap<String, Vec<u16>>>,
        seed: u64,
        max_cycles: Option<i64>,
        trace: bool,
    ) -> PyResult<Bound<'py, PyDict>> {
        let mut data = cli::random_inputs(&self.inner.program, seed);
        data.extend(inputs.unwrap_or_default());
        let (sim, rep) = py
            .detach(|| self.inner.check(&data, &SimOptions { max_cycles, trace }))
            .map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("outputs", sim.outputs)?;
        d.set_item("cycles", sim.cycles)?;
        d.set_item("memory_accesses", sim.memory_accesses)?;
        d.set_item("passed", rep.pass)?;
        d.set_item("report", rep.to_string())?;
        if trace {
            d.set_item("trace", sim.trace.to_csv())?;
        }
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!(
            "Design(kind={:?}, completion_cycles={}, sram_words={})",
            self.kind(),
            self.completion_cycles(),
            self.sram_words()
        )
    }
}

/// Compiles program text.
#[pyfunction]
#[pyo3(signature = (source, strategy = "auto", hardware = None))]
fn compile(py: Python<'_>, source: &str, strategy: &str, hardware: Option<PyHardware>) -> PyResult<PyDesign> {
    let s = self::strategy(strategy)?;
    let hw = hardware.map(|h| h.inner).unwrap_or_default();
    let inner = py.detach(|| cli::compile(source, s, &hw)).map_err(err)?;
    Ok(PyDesign { inner })
}

/// Parses and normalizes a program; returns its canonical text.
#[pyfunction]
fn normalize(source: &str) -> PyResult<String> {
    Ok(cli::frontend(source).map_err(err)?.0.to_string())
}

/// Sequential versus optimized schedule, both verified by simulation.
#[pyfunction]
#[pyo3(signature = (name, source, hardware = None, seed = 0))]
fn compare_schedules<'py>(
    py: Python<'py>,
    name: &str,
    source: &str,
    hardware: Option<PyHardware>,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let hw = hardware.map(|h| h.inner).unwrap_or_default();
    let r = py.detach(|| cli::compare_schedules(name, source, &hw, seed)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("app", r.app)?;
    d.set_item("seq_cycles", r.seq_cycles)?;
    d.set_item("opt_cycles", r.opt_cycles)?;
    d.set_item("speedup", r.speedup)?;
    d.set_item("seq_sram_words", r.seq_sram_words)?;
    d.set_item("opt_sram_words", r.opt_sram_words)?;
    d.set_item("reduction", r.reduction)?;
    Ok(d)
}

/// Per-level increments for strides and ranges listed innermost first.
#[pyfunction]
fn affine_to_deltas(strides: Vec<i64>, ranges: Vec<i64>) -> PyResult<Vec<i64>> {
    Ok(ubc_core::mapping::compile_affine_to_deltas(&strides, &ranges, 0).map_err(err)?.deltas)
}

/// Value sequence of an address generator, by recurrence.
#[pyfunction]
#[pyo3(signature = (ranges, deltas, offset = 0))]
fn ag_replay(ranges: Vec<i64>, deltas: Vec<i64>, offset: i64) -> PyResult<Vec<i64>> {
    if ranges.len() != deltas.len() || ranges.iter().any(|&r| r < 1) {
        return Err(UbcError::new_err("ranges and deltas must have equal length and positive ranges"));
    }
    Ok(ubc_core::hwsim::ag_replay(&AgConfig { ranges, deltas, offset, modulus: None }))
}

#[pymodule]
fn ubc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("UbcError", m.py().get_type::<UbcError>())?;
    m.add("SimTimeout", m.py().get_type::<SimTimeout>())?;
    m.add_class::<PyHardware>()?;
    m.add_class::<PyDesign>()?;
    m.add_function(wrap_pyfunction!(compile, m)?)?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(compare_schedules, m)?)?;
    m.add_function(wrap_pyfunction!(affine_to_deltas, m)?)?;
    m.add_function(wrap_pyfunction!(ag_replay, m)?)?;
    Ok(())
}
