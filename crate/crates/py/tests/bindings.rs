use pyo3::prelude::*;
use pyo3::types::PyDict;

fn run(code: &std::ffi::CStr) {
    Python::attach(|py| {
        let module = pyo3::wrap_pymodule!(costroute_py::costroute_py)(py);
        let globals = PyDict::new(py);
        globals.set_item("cr", module).unwrap();
        if let Err(e) = py.run(code, Some(&globals), None) {
            e.print(py);
            panic!("python snippet failed");
        }
    });
}

#[test]
fn metrics_and_rewards() {
    run(c"
import math
assert abs(cr.lambda_sensitivity([1.0, 10.0, 100.0], [0.5, 0.6, 0.7]) - 0.1) < 1e-15
assert cr.pareto_hull([(0.0, 0.2), (0.5, 0.3), (1.0, 0.9)]) == [(0.0, 0.2), (1.0, 0.9)]
assert abs(cr.aiq([(0.0, 0.2), (1.0, 0.9)]) - 0.55) < 1e-12
assert abs(cr.reward(0.8, 0.2, 'r2', 0.1) - 0.8 * math.exp(-2.0)) < 1e-15
assert cr.reward(0.8, 0.2, 'r1', 0.1) == 0.8 - 0.2 / 0.1
idx, rewards = cr.route([0.5, 0.9], [0.001, 0.02], 'r1', 1e9)
assert idx == 1 and len(rewards) == 2
grid = cr.default_lambda_grid()
assert len(grid) == 16 and grid[-1] == 100.0
try:
    cr.reward(0.5, 0.1, 'r3', 1.0)
    raise AssertionError('bad family accepted')
except cr.CostrouteError:
    pass
");
}

#[test]
fn train_predict_and_sweep() {
    run(c"
ds = cr.synth(n=120, models=3, dim=6, clusters=4, seed=1)
assert len(ds) == 120 and ds.pool == ['model-0', 'model-1', 'model-2']
train, val, test = ds.split(seed=2)
reps = cr.Representations.build(train, clusters=4, seed=2)
assert reps.models == ds.pool and reps.clusters == 4
q, report = cr.Predictor.train(train, val, 'attention', 'quality', reps=reps, epochs=5)
c, _ = cr.Predictor.train(train, val, 'regression', 'cost')
assert q.architecture == 'attention' and len(report.val_loss) == 5
pred = q.predict(test, reps)
assert len(pred) == len(test) and all(0.0 <= v <= 1.0 for row in pred for v in row)
oracle = cr.sweep_oracle(test, 'r2')
routed = cr.sweep_predictors(q, c, test, reps, 'r2')
assert len(routed.points) == 16
strongest = ds.pool[-1]
routed_aiq = routed.metrics(strongest).aiq
assert routed_aiq is None or oracle.metrics(strongest).aiq >= routed_aiq
model, qhat, chat = cr.route_query(q, c, test.embeddings()[0], 'r2', 1e9, reps=reps)
assert model in ds.pool and 0.0 <= qhat <= 1.0
");
}
