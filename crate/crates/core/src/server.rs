//! Newline-delimited JSON environment server.
//!
//! Each request line is one JSON object with a `cmd` field; each gets exactly
//! one response line, `{"ok": true, "data": ...}` or
//! `{"ok": false, "error": {"code": ..., "message": ...}}`. Errors never end
//! the session; `close` or end of input does.
//!
//! | cmd         | fields                | data                                        |
//! |-------------|-----------------------|---------------------------------------------|
//! | `load_spec` | `spec`: object/string | `{n_states, n_actions, horizon, spec_digest}` |
//! | `sample`    | `seed`                | `{spec_digest, seed, assignment}`           |
//! | `reset`     | `seed`                | `{obs, reward, done, t}`                    |
//! | `step`      | `action`              | `{obs, reward, done, t}`                    |
//! | `info`      |                       | `{n_states, n_actions, horizon, obs_dim}`   |
//! | `close`     |                       | `null`                                      |
//!
//! `spec` is either a spec document (positional or canonical format) or the
//! name of a preset.

use std::io::{self, BufRead, Write};

use serde::Serialize;
use serde_json::{json, Value};

use crate::codec::{digest_hex, parse_any, spec_digest};
use crate::engine::{self, EngineError, EpisodeState};
use crate::instance::TaskInstance;
use crate::model::MetaTaskSpec;
use crate::presets::{self, PresetParams};
use crate::sampler::{sample_instance, SamplerConfig};

pub const E_PARSE: &str = "E_PARSE";
pub const E_CMD: &str = "E_CMD";
pub const E_ORDER: &str = "E_ORDER";
pub const E_SPEC: &str = "E_SPEC";
pub const E_SAMPLE: &str = "E_SAMPLE";
pub const E_DOMAIN: &str = "E_DOMAIN";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WireError {
    pub code: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Response {
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<WireError>,
}

impl Response {
    fn data(data: Value) -> Self {
        Self { ok: true, data: Some(data), error: None }
    }

    fn error(code: &'static str, message: impl Into<String>) -> Self {
        Self { ok: false, data: None, error: Some(WireError { code, message: message.into() }) }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("response serialization cannot fail")
    }
}

/// Protocol state of one client.
#[derive(Default)]
pub struct Session {
    spec: Option<MetaTaskSpec>,
    instance: Option<TaskInstance>,
    episode: Option<EpisodeState>,
    sampler: SamplerConfig,
    closed: bool,
}

type Reply = Result<Value, Response>;

fn field_u64(req: &Value, name: &str) -> Result<u64, Response> {
    req.get(name)
        .and_then(Value::as_u64)
        .ok_or_else(|| Response::error(E_PARSE, format!("`{name}` must be a non-negative integer")))
}

impl Session {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sessions sample with this config; `seed` comes from each request.
    pub fn with_sampler(sampler: SamplerConfig) -> Self {
        Self { sampler, ..Self::default() }
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Handle one raw request line.
    pub fn handle_line(&mut self, line: &[u8]) -> Response {
        let req: Value = match serde_json::from_slice(line) {
            Ok(v) => v,
            Err(e) => return Response::error(E_PARSE, format!("malformed request: {e}")),
        };
        if !req.is_object() {
            return Response::error(E_PARSE, "request must be a JSON object");
        }
        let Some(cmd) = req.get("cmd").and_then(Value::as_str) else {
            return Response::error(E_PARSE, "missing string field `cmd`");
        };
        let reply = match cmd {
            "load_spec" => self.load_spec(&req),
            "sample" => self.sample(&req),
            "reset" => self.reset(&req),
            "step" => self.step(&req),
            "info" => self.info(),
            "close" => {
                self.closed = true;
                Ok(Value::Null)
            }
            other => Err(Response::error(E_CMD, format!("unknown cmd {other:?}"))),
        };
        reply.map_or_else(|e| e, Response::data)
    }

    fn load_spec(&mut self, req: &Value) -> Reply {
        let spec = match req.get("spec") {
            Some(Value::String(name)) => presets::build(name, &PresetParams::default())
                .map_err(|e| Response::error(E_SPEC, e.to_string()))?,
            Some(doc @ Value::Object(_)) => {
                parse_any(doc.to_string().as_bytes()).map_err(|e| Response::error(E_SPEC, e.to_string()))?
            }
            _ => return Err(Response::error(E_PARSE, "`spec` must be a spec object or a preset name")),
        };
        let data = json!({
            "n_states": spec.n_states,
            "n_actions": spec.n_actions,
            "horizon": spec.horizon,
            "spec_digest": digest_hex(spec_digest(&spec)),
        });
        self.spec = Some(spec);
        self.instance = None;
        self.episode = None;
        Ok(data)
    }

    fn sample(&mut self, req: &Value) -> Reply {
        let seed = field_u64(req, "seed")?;
        let spec = self.spec.as_ref().ok_or_else(|| Response::error(E_ORDER, "sample before load_spec"))?;
        let cfg = SamplerConfig { seed, ..self.sampler.clone() };
        let instance = sample_instance(spec, &cfg).map_err(|e| Response::error(E_SAMPLE, e.to_string()))?;
        let data = json!({
            "spec_digest": digest_hex(instance.spec_hash),
            "seed": seed,
            "assignment": instance.assignment,
        });
        self.instance = Some(instance);
        self.episode = None;
        Ok(data)
    }

    fn reset(&mut self, req: &Value) -> Reply {
        let seed = field_u64(req, "seed")?;
        let instance = self.instance.as_ref().ok_or_else(|| Response::error(E_ORDER, "reset before sample"))?;
        let (state, first) = engine::reset(instance, seed);
        self.episode = Some(state);
        Ok(serde_json::to_value(first).expect("step result serializes"))
    }

    fn step(&mut self, req: &Value) -> Reply {
        let action = field_u64(req, "action")?;
        let (Some(instance), Some(state)) = (self.instance.as_ref(), self.episode.as_mut()) else {
            return Err(Response::error(E_ORDER, "step before reset"));
        };
        let action = usize::try_from(action).unwrap_or(usize::MAX);
        match engine::step(instance, state, action) {
            Ok(result) => Ok(serde_json::to_value(result).expect("step result serializes")),
            Err(e @ EngineError::EpisodeFinished { .. }) => Err(Response::error(E_ORDER, e.to_string())),
            Err(e @ EngineError::ActionOutOfRange { .. }) => Err(Response::error(E_DOMAIN, e.to_string())),
        }
    }

    fn info(&self) -> Reply {
        let spec = self.spec.as_ref().ok_or_else(|| Response::error(E_ORDER, "info before load_spec"))?;
        let obs_dim = match &self.instance {
            Some(inst) => inst.observation_dim(),
            None => {
                self.sampler.stimulus_dim + if spec.topology.is_some_and(|t| t.coord_obs) { 2 } else { 0 }
            }
        };
        Ok(json!({
            "n_states": spec.n_states,
            "n_actions": spec.n_actions,
            "horizon": spec.horizon,
            "obs_dim": obs_dim,
        }))
    }
}

/// Serve requests from `input` until `close` or end of input.
pub fn serve<R: BufRead, W: Write>(mut input: R, mut output: W, session: &mut Session) -> io::Result<()> {
    let mut line = Vec::new();
    while !session.is_closed() {
        line.clear();
        if input.read_until(b'\n', &mut line)? == 0 {
            break;
        }
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let response = session.handle_line(&line);
        output.write_all(response.to_line().as_bytes())?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}
