//! Python bindings. Structured results come back as plain dicts and lists.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::Serialize;

use tsvm_core::autodebug::{self, AutodebugError};
use tsvm_core::control::{ControlError, Session as CoreSession, StopReport};
use tsvm_core::instrument::{instrument as core_instrument, verify_instrumentation};
use tsvm_core::isa::{self, IsaError};
use tsvm_core::vm::{self, RunOptions, Status};
use tsvm_core::{Location, Position};

create_exception!(tsvm, TsvmError, PyException);
create_exception!(tsvm, AssemblyError, TsvmError);
create_exception!(tsvm, DebugError, TsvmError);

fn asm_err(e: IsaError) -> PyErr {
    AssemblyError::new_err(e.to_string())
}

fn control_err(e: ControlError) -> PyErr {
    DebugError::new_err((e.code(), e.to_string()))
}

fn autodebug_err(e: AutodebugError) -> PyErr {
    DebugError::new_err((e.code(), e.to_string()))
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| TsvmError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(module = "tsvm", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Program {
    inner: isa::Program,
}

#[pymethods]
impl Program {
    /// Assembles `.tsasm` source text.
    #[staticmethod]
    fn assemble(source: &str) -> PyResult<Self> {
        Ok(Self {
            inner: isa::assemble(source).map_err(asm_err)?,
        })
    }

    /// Loads a binary image or `.tsasm` text.
    #[staticmethod]
    fn load(data: &[u8]) -> PyResult<Self> {
        Ok(Self {
            inner: isa::load(data).map_err(asm_err)?,
        })
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &isa::serialize(&self.inner))
    }

    fn disassemble(&self) -> String {
        isa::disassemble(&self.inner)
    }

    fn functions(&self) -> Vec<String> {
        self.inner.functions.keys().cloned().collect()
    }

    #[getter]
    fn is_instrumented(&self) -> bool {
        self.inner.contains_incts()
    }

    /// Returns the instrumented program and the site report.
    #[pyo3(signature = (only=None))]
    fn instrument<'py>(&self, py: Python<'py>, only: Option<Vec<String>>) -> PyResult<(Program, Bound<'py, PyAny>)> {
        let (out, report) =
            core_instrument(&self.inner, only.as_deref()).map_err(|e| TsvmError::new_err(e.to_string()))?;
        Ok((Program { inner: out }, to_py(py, &report)?))
    }

    /// Lists problems found when comparing `instrumented` with this program.
    #[pyo3(signature = (instrumented, only=None))]
    fn verify(&self, instrumented: &Program, only: Option<Vec<String>>) -> Vec<String> {
        verify_instrumentation(&self.inner, &instrumented.inner, only.as_deref()).violations
    }

    fn __len__(&self) -> usize {
        isa::serialize(&self.inner).len()
    }

    fn __eq__(&self, other: &Program) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "Program(functions={:?}, instrumented={})",
            self.functions(),
            self.is_instrumented()
        )
    }
}

/// Runs `program` to completion and returns `{"status", "exit_code" or
/// "fault", "output", "ts", "steps", "trace"}`.
#[pyfunction]
#[pyo3(signature = (program, input=Vec::new(), trace=false, budget=vm::DEFAULT_BUDGET))]
fn run<'py>(py: Python<'py>, program: &Program, input: Vec<i64>, trace: bool, budget: u64) -> PyResult<Bound<'py, PyAny>> {
    let ex = vm::run(&program.inner, &input, RunOptions { budget, trace })
        .map_err(|e| TsvmError::new_err(e.to_string()))?;
    let state = ex.machine.state();
    let mut record = serde_json::json!({
        "output": state.output,
        "ts": ex.final_ts(),
        "steps": state.steps,
        "trace": ex.trace,
    });
    match ex.status() {
        Status::Exited(code) => {
            record["status"] = "exited".into();
            record["exit_code"] = (*code).into();
        }
        Status::Faulted(f) => {
            record["status"] = "faulted".into();
            record["fault"] = f.to_string().into();
        }
        _ => unreachable!("run finishes the program"),
    }
    to_py(py, &record)
}

/// A debug session over an instrumented copy of a program.
#[pyclass(module = "tsvm", unsendable)]
struct Session {
    inner: CoreSession,
}

impl Session {
    fn stop<'py>(&self, py: Python<'py>, r: Result<StopReport, ControlError>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &r.map_err(control_err)?)
    }
}

#[pymethods]
impl Session {
    #[new]
    #[pyo3(signature = (program, input=Vec::new()))]
    fn new(program: &Program, input: Vec<i64>) -> PyResult<Self> {
        Ok(Self {
            inner: CoreSession::instrumented(program.inner.clone(), input).map_err(control_err)?,
        })
    }

    /// Current position as `(function, line, ts)`.
    fn position(&self) -> (String, u32, u64) {
        let p = self.inner.position();
        (p.location.function, p.location.line, p.ts)
    }

    fn report<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.report())
    }

    #[getter]
    fn terminated(&self) -> bool {
        self.inner.is_terminated()
    }

    #[getter]
    fn output(&self) -> Vec<i64> {
        self.inner.machine().state().output.clone()
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.stats())
    }

    fn restart<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.restart())
    }

    #[pyo3(signature = (function, line, condition=None))]
    fn set_breakpoint(&mut self, function: String, line: u32, condition: Option<&str>) -> PyResult<u32> {
        self.inner
            .set_breakpoint(Location::new(function, line), condition)
            .map_err(control_err)
    }

    fn set_watchpoint(&mut self, target: &str) -> PyResult<u32> {
        self.inner.set_watchpoint(target).map_err(control_err)
    }

    fn clear(&mut self, id: u32) -> PyResult<()> {
        self.inner.clear(id).map(|_| ()).map_err(control_err)
    }

    #[pyo3(name = "continue_")]
    fn cont<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let r = self.inner.cont();
        self.stop(py, r)
    }

    fn step<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let r = self.inner.step_line();
        self.stop(py, r)
    }

    #[pyo3(signature = (function, line, ts, slow=false))]
    fn goto_position<'py>(
        &mut self,
        py: Python<'py>,
        function: String,
        line: u32,
        ts: u64,
        slow: bool,
    ) -> PyResult<Bound<'py, PyAny>> {
        let p = Position::new(function, line, ts);
        let r = if slow {
            self.inner.goto_position_slow(&p)
        } else {
            self.inner.goto_position_fast(&p)
        };
        self.stop(py, r)
    }

    fn goto_timestamp<'py>(&mut self, py: Python<'py>, ts: u64) -> PyResult<Bound<'py, PyAny>> {
        let r = self.inner.goto_timestamp(ts);
        self.stop(py, r)
    }

    #[pyo3(signature = (annotation=String::new()))]
    fn bookmark(&mut self, annotation: String) -> u32 {
        self.inner.bookmark(annotation).id
    }

    fn goto_bookmark<'py>(&mut self, py: Python<'py>, id: u32) -> PyResult<Bound<'py, PyAny>> {
        let r = self.inner.goto_bookmark(id);
        self.stop(py, r)
    }

    fn evaluate(&self, expression: &str) -> PyResult<i64> {
        let e = tsvm_core::expr::parse_for(expression, self.inner.image())
            .map_err(|e| DebugError::new_err(("invalid-condition", e.to_string())))?;
        e.eval(self.inner.machine())
            .map_err(|e| DebugError::new_err(("evaluation-error", e.to_string())))
    }

    fn reverse_watchpoint<'py>(&mut self, py: Python<'py>, target: &str) -> PyResult<Bound<'py, PyAny>> {
        let rw = autodebug::reverse_watchpoint(&mut self.inner, target, &mut |_| {}).map_err(autodebug_err)?;
        to_py(py, &rw)
    }

    fn binary_search<'py>(&mut self, py: Python<'py>, condition: &str, lo: u64, hi: u64) -> PyResult<Bound<'py, PyAny>> {
        let o = autodebug::binary_search(&mut self.inner, condition, lo, hi, &mut |_| {}).map_err(autodebug_err)?;
        to_py(py, &o)
    }
}

#[pymodule]
fn tsvm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Program>()?;
    m.add_class::<Session>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add("TsvmError", m.py().get_type::<TsvmError>())?;
    m.add("AssemblyError", m.py().get_type::<AssemblyError>())?;
    m.add("DebugError", m.py().get_type::<DebugError>())?;
    Ok(())
}
