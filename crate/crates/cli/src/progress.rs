//! Machine-readable progress: one JSON object per line on stderr.

use serde_json::{json, Value};

pub fn emit(event: &str, fields: Value) {
    let mut obj = json!({ "event": event });
    if let (Some(o), Value::Object(f)) = (obj.as_object_mut(), fields) {
        o.extend(f);
    }
    eprintln!("{obj}");
}

pub fn error(kind: &str, message: &str) {
    emit("error", json!({ "kind": kind, "message": message }));
}
