//! CSV and JSON writers for values, parameters, heatmaps and traces.
//!
//! Every writer is a pure function of its inputs with fixed float formatting
//! and ordered maps, so identical runs produce identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde_json::{json, Value};

use crate::adp::{ConvergenceTrace, ModeValue, ValueApprox};
use crate::automaton::Mode;
use crate::grid::{Cell, GridWorld};
use crate::product::ProductMdp;

/// Fixed-precision float formatting used by every CSV writer.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.9}")
}

/// Matrix of values for one mode: line `i` is grid row `y = i`, column `j`
/// is `x = j`. Cells where `value` returns `None` are left empty.
pub fn heatmap_csv(world: &GridWorld, value: impl Fn(Cell) -> Option<f64>) -> String {
    let mut out = String::new();
    for y in 0..world.height() {
        let row: Vec<String> = (0..world.width())
            .map(|x| value(Cell::new(x, y)).map(fmt_f64).unwrap_or_default())
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Heatmap of product values `values` restricted to mode `q`.
pub fn mode_heatmap_csv(world: &GridWorld, p: &ProductMdp, values: &[f64], q: Mode) -> String {
    heatmap_csv(world, |c| p.index_of(world.state_of(c), q).map(|i| values[i]))
}

/// `state_id,state,mode,value` per product state.
pub fn values_csv(p: &ProductMdp, values: &[f64], alpha: f64) -> String {
    let mut out = String::from("state_id,state,mode,value,value_unscaled\n");
    for (i, v) in values.iter().enumerate() {
        let (name, mode) = (p.state_name(i), p.mode_name(p.mode_of(i)));
        writeln!(out, "{i},\"{name}\",{mode},{},{}", fmt_f64(*v), fmt_f64(v / alpha)).unwrap();
    }
    out
}

/// Per-mode parameters keyed by mode name.
pub fn theta_json(va: &ValueApprox, mode_names: &[String]) -> Value {
    let mut modes = BTreeMap::new();
    for (q, name) in mode_names.iter().enumerate() {
        let entry = match va.mode(q) {
            ModeValue::Learned(theta) => json!({ "kind": "learned", "theta": theta }),
            ModeValue::Constant(c) => json!({ "kind": "constant", "value": c }),
        };
        modes.insert(name.clone(), entry);
    }
    json!({
        "alpha": va.alpha(),
        "sigma": va.basis().sigma(),
        "centers": va.basis().centers(),
        "modes": modes,
    })
}

/// `epoch,state_id,state,value`, one line per traced state per epoch.
pub fn convergence_csv(trace: &ConvergenceTrace, name: impl Fn(usize) -> String) -> String {
    let mut out = String::from("epoch,state_id,state,value\n");
    for (e, row) in trace.values.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            let id = trace.states[k];
            writeln!(out, "{e},{id},\"{}\",{}", name(id), fmt_f64(*v)).unwrap();
        }
    }
    out
}

/// Pretty JSON with a trailing newline.
pub fn json_string(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values always serialize");
    s.push('\n');
    s
}

/// Writes `contents` to `path`, creating parent directories.
pub fn write_file(path: impl AsRef<Path>, contents: &str) -> io::Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, contents)
}
