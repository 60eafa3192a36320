//! Runs the Python smoke script against the module embedded in a test
//! interpreter, plus a few direct checks.

use std::ffi::CString;
use std::path::PathBuf;

use pyo3::prelude::*;
use pyo3::types::PyDict;

fn install(py: Python<'_>) -> PyResult<()> {
    let module = pyo3::wrap_pymodule!(reqbench::reqbench)(py);
    py.import("sys")?
        .getattr("modules")?
        .set_item("reqbench", module)
}

#[test]
fn smoke_script_passes() {
    let script = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../python/smoke_test.py");
    let code = CString::new(std::fs::read_to_string(&script).unwrap()).unwrap();
    Python::attach(|py| {
        install(py).unwrap();
        let globals = PyDict::new(py);
        globals.set_item("__name__", "__main__").unwrap();
        globals
            .set_item("__file__", script.to_str().unwrap())
            .unwrap();
        if let Err(e) = py.run(&code, Some(&globals), None) {
            e.print(py);
            panic!("smoke script failed: {e}");
        }
    });
}

#[test]
fn errors_map_to_python_exceptions() {
    Python::attach(|py| {
        install(py).unwrap();
        let m = py.import("reqbench").unwrap();
        let e = m.call_method1("pass_at_k", (2, 3, 1)).unwrap_err();
        assert!(e.is_instance_of::<pyo3::exceptions::PyValueError>(py));
        let e = m.call_method1("parse_tests", ("", "bogus")).unwrap_err();
        assert!(e.to_string().contains("unknown mode"));
        let e = m
            .call_method1("load_problems", ("/nonexistent/data.jsonl",))
            .unwrap_err();
        assert!(e
            .get_type(py)
            .name()
            .unwrap()
            .to_string()
            .contains("ReqbenchError"));
    });
}

#[test]
fn weight_profile_round_trips() {
    Python::attach(|py| {
        install(py).unwrap();
        let m = py.import("reqbench").unwrap();
        let w = m
            .getattr("WeightProfile")
            .unwrap()
            .call1((PyDict::new(py), "per_test"))
            .unwrap();
        assert_eq!(
            w.getattr("normalization")
                .unwrap()
                .extract::<String>()
                .unwrap(),
            "per_test"
        );
        let s = w.call_method1("scaled", (2.0,)).unwrap();
        assert_eq!(
            s.call_method1("weight", ("Edge Case",))
                .unwrap()
                .extract::<f64>()
                .unwrap(),
            2.0
        );
        assert!(w.call_method1("scaled", (-1.0,)).is_err());
    });
}
