use std::ffi::CString;

use pyo3::prelude::*;
use pyo3::types::PyDict;
use pyo3::wrap_pymodule;

fn run(code: &str) {
    Python::initialize();
    Python::attach(|py| {
        let m = wrap_pymodule!(llmemb_py::llmemb_py)(py);
        let locals = PyDict::new(py);
        locals.set_item("m", m).unwrap();
        let code = CString::new(code).unwrap();
        if let Err(e) = py.run(&code, None, Some(&locals)) {
            e.print(py);
            panic!("python snippet failed");
        }
    });
}

#[test]
fn losses_and_metrics() {
    run(r#"
eye = [[1.0, 0.0], [0.0, 1.0]]
assert m.scft_loss(eye, eye, 1.0) == -2.0
assert m.directional_cl_loss(eye, eye, 1.0) == -1.0
assert m.rank_metrics(1.0, [2.0] * 10 + [0.0] * 90) == (0.0, 0.0)
assert len(m.tail_split([5, 4, 3, 2, 1])[1]) == 4
"#);
}

#[test]
fn ragged_rows_raise_value_error() {
    run(r#"
try:
    m.uniformity([[1.0, 0.0], [1.0]])
    raise AssertionError("expected ValueError")
except ValueError:
    pass
"#);
}

#[test]
fn pca_and_adapter_shapes() {
    run(r#"
x = [[float(i), float(i % 3), float(i * i % 5)] for i in range(10)]
pca = m.Pca.fit(x, 2)
assert len(pca.components) == 2 and len(pca.transform(x)[0]) == 2
a = m.Adapter(2, 4, activation=True, seed=3)
assert len(a.forward(pca.transform(x))[0]) == 4
"#);
}

#[test]
fn bad_config_is_rejected() {
    run(r#"
try:
    m.Pipeline("/nonexistent", "[rat]\ngamma = -1.0\n")
    raise AssertionError("expected ValueError")
except ValueError as e:
    assert "rat" in str(e)
"#);
}
