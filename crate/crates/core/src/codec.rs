//! Reading and writing meta-task specs as JSON.
//!
//! Two formats are supported:
//!
//! * the compact positional format (`.mtask.json`): a transition tensor, a
//!   list of special-state ranges, positional flag and reward tuples and a
//!   stimulus list, with variables encoded as `100 + k` (state variable),
//!   `1000 + k` (probability variable) and `10000 + k` (stimulus variable),
//!   and `-1` meaning don't-care / no stimulus;
//! * the canonical named-field format (`.mtaskx.json`), which carries every
//!   field of [`MetaTaskSpec`] and is lossless.
//!
//! The positional format cannot express horizons other than 100, more than
//! one flag, flag resets, custom probability domains or grid topology;
//! emitting such a spec fails with [`CodecError::NotExpressible`].

use std::io::Write;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{
    validate_spec, ActionRef, FlagCondition, FlagRule, Interval, MetaTaskSpec, Prob, RewardRule,
    StateRef, Stimulus, Violation, ViolationCode, DEFAULT_HORIZON, ROW_SUM_TOLERANCE,
};

pub const CANONICAL_FORMAT: &str = "metaforge-task/1";
pub const POSITIONAL_EXTENSION: &str = "mtask.json";
pub const CANONICAL_EXTENSION: &str = "mtaskx.json";

const STATE_VAR_BASE: i64 = 100;
const PROB_VAR_BASE: i64 = 1000;
const STIM_VAR_BASE: i64 = 10000;

/// Rows of a positional document that miss 1 by at most this much (the
/// result of printing probabilities with few decimals) are rescaled to sum
/// to one on parse.
pub const ROW_RENORMALIZE_TOLERANCE: f64 = 1e-4;

const POSITIONAL_KEYS: [&str; 5] = ["T", "statevariableranges", "flagconditions", "rewardconditions", "stimuli"];

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("malformed JSON at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("structural error in `{field}`: {message}")]
    Structure { field: String, message: String },
    #[error("reference error in `{field}`: {message}")]
    Reference { field: String, message: String },
    #[error("decoded spec is invalid: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("spec is not expressible in the positional format ({0}); use the canonical format")]
    NotExpressible(String),
    #[error("unsupported format version {0:?}, expected {CANONICAL_FORMAT:?}")]
    Version(Option<String>),
}

fn structure(field: impl Into<String>, message: impl Into<String>) -> CodecError {
    CodecError::Structure { field: field.into(), message: message.into() }
}

// ---------------------------------------------------------------------------
// Lenient JSON front end
// ---------------------------------------------------------------------------

/// Blank out trailing commas (`,` followed by whitespace and a closing
/// bracket) outside of strings. Byte offsets are preserved.
fn blank_trailing_commas(text: &[u8]) -> Vec<u8> {
    let mut out = text.to_vec();
    let mut in_string = false;
    let mut escaped = false;
    for i in 0..text.len() {
        let c = text[i];
        if in_string {
            if escaped {
                escaped = false;
            } else if c == b'\\' {
                escaped = true;
            } else if c == b'"' {
                in_string = false;
            }
            continue;
        }
        match c {
            b'"' => in_string = true,
            b',' => {
                let next = text[i + 1..].iter().find(|b| !b.is_ascii_whitespace());
                if matches!(next, Some(b']') | Some(b'}')) {
                    out[i] = b' ';
                }
            }
            _ => {}
        }
    }
    out
}

fn byte_offset(text: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut offset = 0;
    for (i, l) in text.split(|&b| b == b'\n').enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1).min(l.len());
        }
        offset += l.len() + 1;
    }
    text.len()
}

fn parse_value(text: &[u8], lenient: bool) -> Result<Value, CodecError> {
    let owned;
    let input = if lenient {
        owned = blank_trailing_commas(text);
        &owned[..]
    } else {
        text
    };
    serde_json::from_slice(input).map_err(|e| CodecError::Syntax {
        offset: byte_offset(input, e.line(), e.column()),
        message: e.to_string(),
    })
}

// ---------------------------------------------------------------------------
// Positional format: decoding
// ---------------------------------------------------------------------------

fn as_array<'a>(v: &'a Value, field: &str) -> Result<&'a Vec<Value>, CodecError> {
    v.as_array().ok_or_else(|| structure(field, "expected an array"))
}

fn as_number(v: &Value, field: &str) -> Result<f64, CodecError> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| structure(field, format!("expected a number, found {v}")))
}

fn as_integer(v: &Value, field: &str) -> Result<i64, CodecError> {
    let x = as_number(v, field)?;
    if x.fract() != 0.0 || x.abs() > 1e15 {
        return Err(structure(field, format!("expected an integer, found {v}")));
    }
    Ok(x as i64)
}

fn decode_state(v: &Value, field: &str) -> Result<StateRef, CodecError> {
    match as_integer(v, field)? {
        -1 => Ok(StateRef::Any),
        x @ 0..STATE_VAR_BASE => Ok(StateRef::State(x as usize)),
        x @ STATE_VAR_BASE..PROB_VAR_BASE => Ok(StateRef::Var((x - STATE_VAR_BASE) as usize)),
        x => Err(structure(field, format!("{x} is neither a state, a state variable nor -1"))),
    }
}

fn decode_action(v: &Value, field: &str) -> Result<ActionRef, CodecError> {
    match as_integer(v, field)? {
        -1 => Ok(ActionRef::Any),
        x if x >= 0 => Ok(ActionRef::Action(x as usize)),
        x => Err(structure(field, format!("invalid action {x}"))),
    }
}

fn decode_prob(v: &Value, field: &str) -> Result<Prob, CodecError> {
    let x = as_number(v, field)?;
    if x >= PROB_VAR_BASE as f64 {
        let k = as_integer(v, field)?;
        if k >= STIM_VAR_BASE {
            return Err(structure(field, format!("{k} is not a probability variable")));
        }
        return Ok(Prob::Var((k - PROB_VAR_BASE) as usize));
    }
    Ok(Prob::Fixed(x))
}

fn decode_bit(v: &Value, field: &str) -> Result<bool, CodecError> {
    match as_integer(v, field)? {
        0 => Ok(false),
        1 => Ok(true),
        x => Err(structure(field, format!("expected 0 or 1, found {x}"))),
    }
}

fn tuple<'a>(v: &'a Value, field: &str, len: usize) -> Result<&'a Vec<Value>, CodecError> {
    let items = as_array(v, field)?;
    if items.len() != len {
        return Err(structure(field, format!("expected {len} fields, found {}", items.len())));
    }
    Ok(items)
}

/// Parse the positional format. Trailing commas are tolerated; the result is
/// always a valid spec.
pub fn parse_positional_json(text: &[u8]) -> Result<MetaTaskSpec, CodecError> {
    let doc = parse_value(text, true)?;
    let obj = doc.as_object().ok_or_else(|| structure("<root>", "expected an object"))?;
    for key in obj.keys() {
        if !POSITIONAL_KEYS.contains(&key.as_str()) {
            return Err(structure(key.clone(), "unknown key"));
        }
    }
    let get = |key: &str| obj.get(key).ok_or_else(|| structure(key, "missing"));

    let stimuli_raw = as_array(get("stimuli")?, "stimuli")?;
    let n_states = stimuli_raw.len();
    let mut stimuli = Vec::with_capacity(n_states);
    let mut n_stim_vars = 0;
    for (s, v) in stimuli_raw.iter().enumerate() {
        let field = format!("stimuli[{s}]");
        let stim = match as_integer(v, &field)? {
            -1 => Stimulus::Null,
            x if x >= STIM_VAR_BASE => {
                let k = (x - STIM_VAR_BASE) as usize;
                n_stim_vars = n_stim_vars.max(k + 1);
                Stimulus::Var(k)
            }
            x if x >= 0 => Stimulus::Fixed(x as u32),
            x => return Err(structure(field, format!("invalid stimulus {x}"))),
        };
        stimuli.push(stim);
    }

    let t_raw = as_array(get("T")?, "T")?;
    if t_raw.len() != n_states {
        return Err(structure("T", format!("{} state rows but {} stimuli", t_raw.len(), n_states)));
    }
    let mut n_actions = None;
    let mut n_prob_vars = 0;
    let mut note_prob = |p: Prob| {
        if let Prob::Var(k) = p {
            n_prob_vars = n_prob_vars.max(k + 1);
        }
        p
    };
    let mut transition = Vec::with_capacity(n_states);
    for (s, per_action) in t_raw.iter().enumerate() {
        let field = format!("T[{s}]");
        let per_action = as_array(per_action, &field)?;
        let expected = *n_actions.get_or_insert(per_action.len());
        if per_action.len() != expected {
            return Err(structure(field, format!("{} actions, expected {expected}", per_action.len())));
        }
        let mut rows = Vec::with_capacity(expected);
        for (a, row) in per_action.iter().enumerate() {
            let field = format!("T[{s}][{a}]");
            let row = as_array(row, &field)?;
            if row.len() != n_states {
                return Err(structure(field, format!("{} entries, expected {n_states}", row.len())));
            }
            let mut decoded = row
                .iter()
                .enumerate()
                .map(|(n, v)| decode_prob(v, &format!("T[{s}][{a}][{n}]")).map(&mut note_prob))
                .collect::<Result<Vec<_>, _>>()?;
            renormalize_row(&mut decoded);
            rows.push(decoded);
        }
        transition.push(rows);
    }
    let n_actions = n_actions.unwrap_or(0);

    let state_var_ranges = as_array(get("statevariableranges")?, "statevariableranges")?
        .iter()
        .enumerate()
        .map(|(k, range)| {
            let field = format!("statevariableranges[{k}]");
            as_array(range, &field)?
                .iter()
                .map(|v| match as_integer(v, &field)? {
                    x if x >= 0 => Ok(x as usize),
                    x => Err(structure(field.as_str(), format!("invalid state {x}"))),
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut uses_flag = false;
    let flag_rules = as_array(get("flagconditions")?, "flagconditions")?
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let field = format!("flagconditions[{i}]");
            let t = tuple(v, &field, 4)?;
            uses_flag = true;
            Ok(FlagRule {
                s: decode_state(&t[0], &field)?,
                a: decode_action(&t[1], &field)?,
                s_next: decode_state(&t[2], &field)?,
                flag: 0,
                value: decode_bit(&t[3], &field)?,
            })
        })
        .collect::<Result<Vec<_>, CodecError>>()?;

    let reward_rules = as_array(get("rewardconditions")?, "rewardconditions")?
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let field = format!("rewardconditions[{i}]");
            let t = tuple(v, &field, 6)?;
            let flag_cond = match as_integer(&t[5], &field)? {
                -1 => None,
                0 | 1 => {
                    uses_flag = true;
                    Some(FlagCondition { flag: 0, value: t[5].as_f64() == Some(1.0) })
                }
                x => return Err(structure(field, format!("flag field must be -1, 0 or 1, found {x}"))),
            };
            let prob = note_prob(decode_prob(&t[4], &field)?);
            Ok(RewardRule {
                s: decode_state(&t[0], &field)?,
                a: decode_action(&t[1], &field)?,
                s_next: decode_state(&t[2], &field)?,
                reward: as_number(&t[3], &field)?,
                prob,
                flag_cond,
            })
        })
        .collect::<Result<Vec<_>, CodecError>>()?;

    let spec = MetaTaskSpec {
        n_states,
        n_actions,
        horizon: DEFAULT_HORIZON,
        transition,
        stimuli,
        state_var_ranges,
        prob_var_domains: vec![Interval::default(); n_prob_vars],
        n_stim_vars,
        n_flags: usize::from(uses_flag),
        flag_rules,
        reward_rules,
        reset_flags_on_initial: false,
        topology: None,
    };
    check_valid(spec)
}

fn renormalize_row(row: &mut [Prob]) {
    let mut sum = 0.0;
    for p in row.iter() {
        match p {
            Prob::Fixed(v) => sum += v,
            Prob::Var(_) => return,
        }
    }
    let gap = (sum - 1.0).abs();
    if gap > ROW_SUM_TOLERANCE && gap <= ROW_RENORMALIZE_TOLERANCE {
        for p in row.iter_mut() {
            if let Prob::Fixed(v) = p {
                *v /= sum;
            }
        }
    }
}

fn check_valid(spec: MetaTaskSpec) -> Result<MetaTaskSpec, CodecError> {
    let violations = validate_spec(&spec);
    if violations.is_empty() {
        return Ok(spec);
    }
    if let Some(v) = violations.iter().find(|v| {
        matches!(
            v.code,
            ViolationCode::UnboundStateVar | ViolationCode::UnboundProbVar | ViolationCode::UnboundStimVar
        )
    }) {
        return Err(CodecError::Reference { field: format!("{:?}", v.code), message: v.message.clone() });
    }
    Err(CodecError::Invalid(violations))
}

// ---------------------------------------------------------------------------
// Positional format: encoding
// ---------------------------------------------------------------------------

fn fmt_f64(x: f64) -> String {
    serde_json::to_string(&x).expect("finite float")
}

fn encode_state(r: StateRef) -> i64 {
    match r {
        StateRef::Any => -1,
        StateRef::State(s) => s as i64,
        StateRef::Var(k) => STATE_VAR_BASE + k as i64,
    }
}

fn encode_action(a: ActionRef) -> i64 {
    match a {
        ActionRef::Any => -1,
        ActionRef::Action(a) => a as i64,
    }
}

fn encode_prob(p: Prob) -> String {
    match p {
        Prob::Fixed(x) => fmt_f64(x),
        Prob::Var(k) => (PROB_VAR_BASE + k as i64).to_string(),
    }
}

/// Why `spec` cannot be written in the positional format, if it cannot.
pub fn positional_obstacle(spec: &MetaTaskSpec) -> Option<String> {
    if spec.topology.is_some() {
        return Some("grid topology".into());
    }
    if spec.n_flags > 1 {
        return Some(format!("{} flags", spec.n_flags));
    }
    let flag_used = !spec.flag_rules.is_empty() || spec.reward_rules.iter().any(|r| r.flag_cond.is_some());
    if spec.n_flags == 1 && !flag_used {
        return Some("declared flag is never referenced".into());
    }
    if spec.horizon != DEFAULT_HORIZON {
        return Some(format!("horizon {} (the format implies {DEFAULT_HORIZON})", spec.horizon));
    }
    if spec.reset_flags_on_initial {
        return Some("flag reset on re-entering the initial state".into());
    }
    if spec.n_states > STATE_VAR_BASE as usize {
        return Some(format!("{} states (at most {STATE_VAR_BASE})", spec.n_states));
    }
    if spec.n_state_vars() > (PROB_VAR_BASE - STATE_VAR_BASE) as usize {
        return Some("too many state variables".into());
    }
    if spec.prob_var_domains.iter().any(|d| *d != Interval::default()) {
        return Some("non-default probability variable domain".into());
    }
    let mut used_prob = 0;
    let mut note = |p: &Prob| {
        if let Prob::Var(k) = p {
            used_prob = used_prob.max(k + 1);
        }
    };
    spec.transition.iter().flatten().flatten().for_each(&mut note);
    spec.reward_rules.iter().map(|r| &r.prob).for_each(&mut note);
    if used_prob != spec.n_prob_vars() {
        return Some("declared probability variables beyond the highest one used".into());
    }
    let used_stim = spec
        .stimuli
        .iter()
        .filter_map(|s| match s {
            Stimulus::Var(k) => Some(k + 1),
            _ => None,
        })
        .max()
        .unwrap_or(0);
    if used_stim != spec.n_stim_vars {
        return Some("declared stimulus variables beyond the highest one used".into());
    }
    if spec.stimuli.iter().any(|s| matches!(s, Stimulus::Fixed(id) if *id as i64 >= STIM_VAR_BASE)) {
        return Some("stimulus id collides with the variable encoding".into());
    }
    None
}

/// Write `spec` in the positional format. Output is strict JSON with the key
/// order `T`, `statevariableranges`, `flagconditions`, `rewardconditions`,
/// `stimuli`.
pub fn emit_positional_json(spec: &MetaTaskSpec) -> Result<Vec<u8>, CodecError> {
    let violations = validate_spec(spec);
    if !violations.is_empty() {
        return Err(CodecError::Invalid(violations));
    }
    if let Some(reason) = positional_obstacle(spec) {
        return Err(CodecError::NotExpressible(reason));
    }

    let join = |items: Vec<String>| items.join(", ");
    let state_rows: Vec<String> = spec
        .transition
        .iter()
        .map(|per_action| {
            let rows = per_action
                .iter()
                .map(|row| format!("[{}]", join(row.iter().map(|p| encode_prob(*p)).collect())))
                .collect();
            format!("[{}]", join(rows))
        })
        .collect();
    let ranges = spec
        .state_var_ranges
        .iter()
        .map(|r| format!("[{}]", join(r.iter().map(|s| s.to_string()).collect())))
        .collect();
    let flags = spec
        .flag_rules
        .iter()
        .map(|r| {
            format!(
                "[{}, {}, {}, {}]",
                encode_state(r.s),
                encode_action(r.a),
                encode_state(r.s_next),
                u8::from(r.value)
            )
        })
        .collect();
    let rewards = spec
        .reward_rules
        .iter()
        .map(|r| {
            let flag = r.flag_cond.map_or(-1, |c| i64::from(c.value));
            format!(
                "[{}, {}, {}, {}, {}, {}]",
                encode_state(r.s),
                encode_action(r.a),
                encode_state(r.s_next),
                fmt_f64(r.reward),
                encode_prob(r.prob),
                flag
            )
        })
        .collect();
    let stimuli = spec
        .stimuli
        .iter()
        .map(|s| match *s {
            Stimulus::Null => "-1".to_string(),
            Stimulus::Fixed(id) => id.to_string(),
            Stimulus::Var(k) => (STIM_VAR_BASE + k as i64).to_string(),
        })
        .collect();

    let text = format!(
        "{{\n\"T\": [{}],\n\"statevariableranges\": [{}],\n\"flagconditions\": [{}],\n\"rewardconditions\": [{}],\n\"stimuli\": [{}]\n}}\n",
        state_rows.join(",\n"),
        join(ranges),
        join(flags),
        join(rewards),
        join(stimuli),
    );
    Ok(text.into_bytes())
}

// ---------------------------------------------------------------------------
// Canonical format
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct CanonicalOut<'a> {
    format: &'static str,
    #[serde(flatten)]
    spec: &'a MetaTaskSpec,
}

fn write_canonical<W: Write>(spec: &MetaTaskSpec, mut out: W) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut out, &CanonicalOut { format: CANONICAL_FORMAT, spec })?;
    out.write_all(b"\n")
}

pub fn emit_canonical(spec: &MetaTaskSpec) -> Vec<u8> {
    let mut out = Vec::new();
    write_canonical(spec, &mut out).expect("spec serialization cannot fail");
    out
}

pub fn parse_canonical(text: &[u8]) -> Result<MetaTaskSpec, CodecError> {
    let mut doc = parse_value(text, false)?;
    let obj = doc.as_object_mut().ok_or_else(|| structure("<root>", "expected an object"))?;
    match obj.remove("format") {
        Some(Value::String(v)) if v == CANONICAL_FORMAT => {}
        Some(Value::String(v)) => return Err(CodecError::Version(Some(v))),
        Some(other) => return Err(CodecError::Version(Some(other.to_string()))),
        None => return Err(CodecError::Version(None)),
    }
    let spec: MetaTaskSpec =
        serde_json::from_value(doc).map_err(|e| structure("<spec>", e.to_string()))?;
    check_valid(spec)
}

/// Parse either format, deciding by the presence of the `format` key.
pub fn parse_any(text: &[u8]) -> Result<MetaTaskSpec, CodecError> {
    let doc = parse_value(text, true)?;
    if doc.get("format").is_some() {
        parse_canonical(text)
    } else {
        parse_positional_json(text)
    }
}

// ---------------------------------------------------------------------------
// Digests
// ---------------------------------------------------------------------------

/// First eight bytes of SHA-256, big-endian.
pub fn digest_bytes(bytes: &[u8]) -> u64 {
    truncate(&Sha256::digest(bytes))
}

fn truncate(hash: &[u8]) -> u64 {
    u64::from_be_bytes(hash[..8].try_into().expect("sha256 is 32 bytes"))
}

/// Digest of `value` serialized as compact JSON, without buffering it.
pub(crate) fn digest_json(value: &impl Serialize) -> u64 {
    let mut hasher = Sha256::new();
    serde_json::to_writer(&mut hasher, value).expect("serialization cannot fail");
    truncate(&hasher.finalize())
}

/// Stable 64-bit digest of the canonical serialization of `spec`.
pub fn spec_digest(spec: &MetaTaskSpec) -> u64 {
    let mut hasher = Sha256::new();
    write_canonical(spec, &mut hasher).expect("spec serialization cannot fail");
    truncate(&hasher.finalize())
}

pub fn digest_hex(digest: u64) -> String {
    format!("{digest:016x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const FIG_S1_NORMALIZED: &str = r#"{
"T": [[[0.0, 0.5, 0.5, 0.0], [0.0, 0.0, 1.0, 0.0]],
[[0.0, 0.5, 0.5, 0.0], [0.0, 0.0, 0.0, 1.0]],
[[0.33333, 0.33333, 0.0, 0.33333], [0.33333, 0.33333, 0.0, 0.33333]],
[[0.0, 1.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]]],
"statevariableranges": [[1, 3, 2]],
"flagconditions": [[100, -1, -1, 1]],
"rewardconditions": [[2, -1, -1, 1.0, 1.0, 1]],
"stimuli": [10000, -1, 10001, 1],
}"#;

    #[test]
    fn trailing_commas_are_blanked_in_place() {
        let src = br#"{"a": [1, 2, ], "s": ",]", }"#;
        let out = blank_trailing_commas(src);
        assert_eq!(out.len(), src.len());
        assert_eq!(&out[..], br#"{"a": [1, 2  ], "s": ",]"  }"#);
    }

    #[test]
    fn decodes_key_door_document() {
        let spec = parse_positional_json(FIG_S1_NORMALIZED.as_bytes()).unwrap();
        assert_eq!((spec.n_states, spec.n_actions), (4, 2));
        assert_eq!(spec.state_var_ranges, vec![vec![1, 3, 2]]);
        assert_eq!(spec.n_flags, 1);
        assert_eq!(
            spec.flag_rules,
            vec![FlagRule { s: StateRef::Var(0), a: ActionRef::Any, s_next: StateRef::Any, flag: 0, value: true }]
        );
        assert_eq!(
            spec.reward_rules,
            vec![RewardRule::on_state(StateRef::State(2)).with_flag(0, true)]
        );
        assert_eq!(
            spec.stimuli,
            vec![Stimulus::Var(0), Stimulus::Null, Stimulus::Var(1), Stimulus::Fixed(1)]
        );
        assert_eq!(spec.n_stim_vars, 2);
        assert_eq!(spec.horizon, 100);
        assert!(!spec.reset_flags_on_initial);
        // 0.33333 rows are rescaled to sum to one
        let row: f64 = spec.transition[2][0]
            .iter()
            .map(|p| match p {
                Prob::Fixed(v) => *v,
                Prob::Var(_) => unreachable!(),
            })
            .sum();
        assert!((row - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn syntax_error_reports_byte_offset() {
        let text = b"{\"T\": [1, 2,, 3]}";
        match parse_positional_json(text) {
            Err(CodecError::Syntax { offset, .. }) => assert_eq!(offset, 12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_names_field() {
        let text = br#"{"T": [[[1.0]]], "statevariableranges": [], "flagconditions": [],
            "rewardconditions": [], "stimuli": [-1, -1]}"#;
        match parse_positional_json(text) {
            Err(CodecError::Structure { field, .. }) => assert_eq!(field, "T"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn probability_placeholder_in_reward_rule() {
        let text = br#"{"T": [[[1.0], [1.0]]], "statevariableranges": [], "flagconditions": [],
            "rewardconditions": [[-1, 0, -1, 1.0, 1000, -1]], "stimuli": [-1]}"#;
        let spec = parse_positional_json(text).unwrap();
        assert_eq!(spec.reward_rules[0].prob, Prob::Var(0));
        assert_eq!(spec.prob_var_domains, vec![Interval::default()]);
    }

    #[test]
    fn unbound_state_variable_is_reference_error() {
        let text = br#"{"T": [[[1.0]]], "statevariableranges": [], "flagconditions": [],
            "rewardconditions": [[100, -1, -1, 1.0, 1.0, -1]], "stimuli": [-1]}"#;
        assert!(matches!(parse_positional_json(text), Err(CodecError::Reference { .. })));
    }

    #[test]
    fn two_flags_are_not_expressible() {
        let mut spec = MetaTaskSpec::new(2, 2);
        spec.n_flags = 2;
        spec.flag_rules.push(FlagRule {
            s: StateRef::State(1),
            a: ActionRef::Any,
            s_next: StateRef::Any,
            flag: 1,
            value: true,
        });
        assert!(matches!(emit_positional_json(&spec), Err(CodecError::NotExpressible(_))));
    }

    #[test]
    fn emission_is_a_fixpoint() {
        let spec = parse_positional_json(FIG_S1_NORMALIZED.as_bytes()).unwrap();
        let first = emit_positional_json(&spec).unwrap();
        let again = parse_positional_json(&first).unwrap();
        assert_eq!(again, spec);
        assert_eq!(emit_positional_json(&again).unwrap(), first);
    }

    #[test]
    fn canonical_round_trip_keeps_empty_lists() {
        let spec = MetaTaskSpec::new(2, 2);
        let text = emit_canonical(&spec);
        let s = String::from_utf8(text.clone()).unwrap();
        assert!(s.contains("\"reward_rules\": []"));
        assert!(s.starts_with("{\n  \"format\": \"metaforge-task/1\""));
        assert_eq!(parse_canonical(&text).unwrap(), spec);
    }

    #[test]
    fn canonical_version_is_checked() {
        let spec = MetaTaskSpec::new(1, 1);
        let text = String::from_utf8(emit_canonical(&spec)).unwrap().replace("metaforge-task/1", "metaforge-task/9");
        assert!(matches!(parse_canonical(text.as_bytes()), Err(CodecError::Version(Some(v))) if v == "metaforge-task/9"));
        assert!(matches!(parse_canonical(b"{}"), Err(CodecError::Version(None))));
    }

    #[test]
    fn digest_tracks_rule_order() {
        let mut spec = MetaTaskSpec::new(3, 2);
        spec.reward_rules.push(RewardRule::on_state(StateRef::State(1)));
        spec.reward_rules.push(RewardRule::on_state(StateRef::State(2)));
        let d = spec_digest(&spec);
        assert_eq!(d, spec_digest(&spec.clone()));
        spec.reward_rules.swap(0, 1);
        assert_ne!(d, spec_digest(&spec));
    }
}
