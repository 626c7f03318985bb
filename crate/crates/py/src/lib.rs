//! Python bindings: configuration-driven runs plus the closed-form block
//! cost, with results handed back as plain dicts and lists.

use std::path::Path;
use std::str::FromStr;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use rcas_core::config::RunConfig;
use rcas_core::costmodel::block_cost as core_block_cost;
use rcas_core::domain::{BlockType, Element, Position, Rational};
use rcas_core::oracle::{brute_force_opt, check_submodularity, convex_hull_report};
use rcas_core::search::{run_greedy, run_lazy_ceg, run_rcas, CostMode};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn run_error(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Convert a JSON tree into plain Python objects.
fn to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        serde_json::Value::Null => py.None().into_bound(py),
        serde_json::Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_pyobject(py)?.into_any()
            } else if let Some(u) = n.as_u64() {
                u.into_pyobject(py)?.into_any()
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any()
            }
        }
        serde_json::Value::String(s) => s.into_pyobject(py)?.into_any(),
        serde_json::Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(to_py(py, item)?)?;
            }
            list.into_any()
        }
        serde_json::Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

fn serialize<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &serde_json::to_value(value).map_err(run_error)?)
}

fn parse_mode(mode: &str) -> PyResult<Option<CostMode>> {
    Ok(Some(match mode {
        "uc" => CostMode::UniformCost,
        "apr" => CostMode::ParamRatio,
        "amr" => CostMode::MaddsRatio,
        "rcas" => return Ok(None),
        other => {
            return Err(value_error(format!(
                "unknown mode {other:?}; expected uc, apr, amr or rcas"
            )))
        }
    }))
}

/// A loaded run configuration; every method realizes the objective afresh.
#[pyclass(frozen)]
struct Run {
    cfg: RunConfig,
}

#[pymethods]
impl Run {
    /// Load and validate a JSON configuration file.
    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        Ok(Run { cfg: RunConfig::from_path(Path::new(path)).map_err(value_error)? })
    }

    /// Parse and validate a JSON configuration string.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Run { cfg: RunConfig::from_json(text).map_err(value_error)? })
    }

    /// All candidate (position, type) pairs, position-major.
    fn ground(&self) -> Vec<(u32, u32)> {
        self.cfg.ground().iter().map(|e| (e.position, e.block)).collect()
    }

    /// The (params, madds) ceilings.
    fn budget(&self) -> (u64, u64) {
        (self.cfg.budget.max_params, self.cfg.budget.max_madds)
    }

    fn objective_kind(&self) -> String {
        self.cfg.objective.kind_name().to_string()
    }

    /// (params, madds) of placing one block type at one position.
    fn element_cost(&self, position: u32, r#type: u32) -> PyResult<(u64, u64)> {
        let c = self
            .cfg
            .build_cost_model()
            .element_cost(Element::new(position, r#type))
            .map_err(value_error)?;
        Ok((c.params, c.madds))
    }

    /// Run one greedy mode or the full three-mode race; returns a dict.
    #[pyo3(signature = (mode="rcas", engine="lazy"))]
    fn search<'py>(&self, py: Python<'py>, mode: &str, engine: &str) -> PyResult<Bound<'py, PyAny>> {
        let obj = self.cfg.build_objective().map_err(run_error)?;
        let cost = self.cfg.build_cost_model();
        let ground = self.cfg.ground();
        let opts = self.cfg.engine.options();
        match parse_mode(mode)? {
            None => {
                let race = run_rcas(
                    &obj,
                    cost.as_ref(),
                    &ground,
                    self.cfg.budget,
                    self.cfg.fidelity(),
                    self.cfg.refine_fidelity(),
                    &opts,
                )
                .map_err(run_error)?;
                serialize(py, &race)
            }
            Some(m) => {
                let engine_fn = match engine {
                    "lazy" => run_lazy_ceg,
                    "eager" => run_greedy,
                    other => {
                        return Err(value_error(format!(
                            "unknown engine {other:?}; expected lazy or eager"
                        )))
                    }
                };
                let result = engine_fn(
                    &obj,
                    cost.as_ref(),
                    &ground,
                    self.cfg.budget,
                    m,
                    self.cfg.fidelity(),
                    &opts,
                )
                .map_err(run_error)?;
                serialize(py, &result)
            }
        }
    }

    /// Exhaustive search over every feasible assignment; returns a dict.
    fn brute<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let obj = self.cfg.build_objective().map_err(run_error)?;
        let cost = self.cfg.build_cost_model();
        let ground = self.cfg.ground();
        let result = brute_force_opt(
            &obj,
            cost.as_ref(),
            &ground,
            self.cfg.budget,
            self.cfg.fidelity(),
            self.cfg.brute_force_cap,
        )
        .map_err(run_error)?;
        serialize(py, &result)
    }

    /// Monotonicity and diminishing-returns audit; returns a dict.
    #[pyo3(signature = (samples=None, seed=None))]
    fn audit<'py>(
        &self,
        py: Python<'py>,
        samples: Option<u64>,
        seed: Option<u64>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let obj = self.cfg.build_objective().map_err(run_error)?;
        let report = check_submodularity(
            &obj,
            &self.cfg.ground(),
            self.cfg.fidelity(),
            samples.unwrap_or(self.cfg.diagnose_samples),
            seed.unwrap_or(self.cfg.seed),
        )
        .map_err(run_error)?;
        serialize(py, &report)
    }
}

/// Parameters and multiply-adds of one block at one position.
#[pyfunction]
#[pyo3(signature = (in_channels, out_channels, height, width, expansion_factor, stride=1, expansion_groups=1, projection_groups=1, kernel=3))]
#[allow(clippy::too_many_arguments)]
fn block_cost(
    in_channels: u32,
    out_channels: u32,
    height: u32,
    width: u32,
    expansion_factor: &str,
    stride: u32,
    expansion_groups: u32,
    projection_groups: u32,
    kernel: u32,
) -> PyResult<(u64, u64)> {
    let block = BlockType {
        id: 1,
        expansion_factor: Rational::from_str(expansion_factor).map_err(value_error)?,
        expansion_groups,
        projection_groups,
        kernel,
        label: String::new(),
    };
    let position = Position { index: 0, in_channels, out_channels, height, width, stride };
    let c = core_block_cost(&block, &position).map_err(value_error)?;
    Ok((c.params, c.madds))
}

/// Gap of each (cost, value) point below the upper convex envelope.
#[pyfunction]
fn hull_gaps(py: Python<'_>, points: Vec<(f64, f64)>) -> PyResult<Bound<'_, PyAny>> {
    let report = convex_hull_report(&points).map_err(value_error)?;
    serialize(py, &report)
}

#[pymodule]
fn rcas(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Run>()?;
    m.add_function(wrap_pyfunction!(block_cost, m)?)?;
    m.add_function(wrap_pyfunction!(hull_gaps, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
