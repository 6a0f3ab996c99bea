//! A JSON metadata line followed by CSV rows.

use std::io::Write;

use serde::Serialize;
use serde_json::{json, Value};

pub struct Output {
    pub meta: Value,
    pub csv: Vec<u8>,
    /// False when a check failed or a computation reported a domain failure.
    pub ok: bool,
}

impl Output {
    pub fn new<C: Serialize>(command: &str, config: &C, meta: Value) -> Self {
        let head = json!({
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "config": config,
        });
        let mut merged = head.as_object().cloned().unwrap_or_default();
        if let Value::Object(m) = meta {
            merged.extend(m);
        }
        Output {
            meta: Value::Object(merged),
            csv: Vec::new(),
            ok: true,
        }
    }

    pub fn set(&mut self, key: &str, v: Value) {
        if let Value::Object(m) = &mut self.meta {
            m.insert(key.into(), v);
        }
    }

    pub fn rows<R: Serialize>(&mut self, rows: &[R]) -> Result<(), String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).map_err(|e| e.to_string())?;
        }
        self.csv = w.into_inner().map_err(|e| e.to_string())?;
        Ok(())
    }

    pub fn emit(&self, path: Option<&str>) -> std::io::Result<()> {
        let mut buf = Vec::new();
        writeln!(buf, "# {}", serde_json::to_string(&self.meta)?)?;
        buf.extend_from_slice(&self.csv);
        match path {
            Some(p) => std::fs::write(p, buf),
            None => std::io::stdout().write_all(&buf),
        }
    }
}
